//! Python bindings for the engine and the offline tooling around it.
//!
//! Records cross the boundary as plain dicts in the same JSON shape the
//! crate saves to disk.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use deepwolf::agent::load_pools;
use deepwolf::augment::{self, Permutation, TrainingExample};
use deepwolf::engine::{EventKind, GameConfig, GameState, LegalAction, PlayerId, Role, RoleMap};
use deepwolf::eval::{compute_win_rates, export_table, TableFormat};
use deepwolf::logfmt::{self, GameRecord};
use deepwolf::oracle::{self, OracleKey, ValueOracle};
use deepwolf::replay::replay_events;
use deepwolf::sim::{game_seed, play_game, PolicySpec, Resources};

create_exception!(deepwolf, DeepWolfError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    DeepWolfError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn player(n: u8) -> PyResult<PlayerId> {
    PlayerId::new(n).map_err(err)
}

fn role(name: &str) -> PyResult<Role> {
    Role::parse(name).ok_or_else(|| err(format!("unknown role {name:?}")))
}

fn role_map(roles: HashMap<u8, String>) -> PyResult<RoleMap> {
    roles.into_iter().map(|(n, r)| Ok((player(n)?, role(&r)?))).collect()
}

fn legal_pair(a: LegalAction) -> (String, Option<u8>) {
    let (kind, target) = match a {
        LegalAction::Talk => ("talk", None),
        LegalAction::Over => ("over", None),
        LegalAction::Vote(t) => ("vote", Some(t)),
        LegalAction::Divine(t) => ("divine", Some(t)),
        LegalAction::Attack(t) => ("attack", Some(t)),
    };
    (kind.to_string(), target.map(PlayerId::number))
}

/// A game in progress. Actions return the canonical log lines they produced.
#[pyclass(module = "deepwolf")]
struct Game {
    state: GameState,
}

impl Game {
    fn act(&mut self, kind: EventKind) -> PyResult<Vec<String>> {
        let produced = self.state.apply(kind).map_err(err)?;
        Ok(produced.iter().map(|e| logfmt::render_line(&e.kind)).collect())
    }
}

#[pymethods]
impl Game {
    #[new]
    #[pyo3(signature = (seed, roles=None))]
    fn new(seed: u64, roles: Option<HashMap<u8, String>>) -> PyResult<Self> {
        let config = match roles {
            Some(r) => GameConfig::with_roles(seed, role_map(r)?),
            None => GameConfig::seeded(seed),
        };
        Ok(Game { state: GameState::new(config).map_err(err)? })
    }

    #[getter]
    fn phase(&self) -> String {
        self.state.phase().name().to_string()
    }

    #[getter]
    fn day(&self) -> u8 {
        self.state.day()
    }

    #[getter]
    fn alive(&self) -> Vec<u8> {
        self.state.alive().iter().map(|p| p.number()).collect()
    }

    #[getter]
    fn roles(&self) -> BTreeMap<u8, String> {
        self.state.roles().iter().map(|(p, r)| (p.number(), r.to_string())).collect()
    }

    /// `"villager"`, `"werewolf"` or `None` while the game runs.
    #[getter]
    fn winner(&self) -> Option<String> {
        self.state.winner().map(|s| s.as_str().to_string())
    }

    #[getter]
    fn finished(&self) -> bool {
        self.state.is_finished()
    }

    /// `(kind, target)` pairs; target is `None` for talk and over.
    fn legal_actions(&self, player_no: u8) -> PyResult<Vec<(String, Option<u8>)>> {
        Ok(self.state.legal_actions(player(player_no)?).into_iter().map(legal_pair).collect())
    }

    fn talk(&mut self, speaker: u8, text: String) -> PyResult<Vec<String>> {
        self.act(EventKind::Talk { speaker: player(speaker)?, text })
    }

    fn over(&mut self, speaker: u8) -> PyResult<Vec<String>> {
        self.act(EventKind::Over { speaker: player(speaker)? })
    }

    fn vote(&mut self, voter: u8, target: u8) -> PyResult<Vec<String>> {
        self.act(EventKind::Vote { voter: player(voter)?, target: player(target)? })
    }

    fn divine(&mut self, seer: u8, target: u8) -> PyResult<Vec<String>> {
        self.act(EventKind::DivineChoice { seer: player(seer)?, target: player(target)? })
    }

    fn attack(&mut self, target: u8) -> PyResult<Vec<String>> {
        self.act(EventKind::Attack { target: player(target)? })
    }

    /// Closes the current phase as a timeout would.
    fn auto_resolve(&mut self) -> PyResult<Vec<String>> {
        let produced = self.state.auto_resolve().map_err(err)?;
        Ok(produced.iter().map(|e| logfmt::render_line(&e.kind)).collect())
    }

    /// The record so far as a dict.
    fn record<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &GameRecord::from_state(&self.state))
    }

    /// Full canonical log text, hidden lines included.
    fn log(&self) -> PyResult<String> {
        logfmt::render_full(&GameRecord::from_state(&self.state)).map_err(err)
    }

    /// What `player_no` is allowed to see, header included.
    fn view(&self, player_no: u8) -> PyResult<String> {
        Ok(logfmt::project(&GameRecord::from_state(&self.state), player(player_no)?, None).text())
    }
}

/// Full log text of a record dict.
#[pyfunction]
fn render_full(record: &Bound<'_, PyAny>) -> PyResult<String> {
    logfmt::render_full(&from_py::<GameRecord>(record)?).map_err(err)
}

/// Parses log text into a list of event dicts.
#[pyfunction]
fn parse<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &logfmt::parse(text).map_err(err)?)
}

/// One seat's masked view of a record, optionally cut after `upto` events.
#[pyfunction]
#[pyo3(signature = (record, player_no, upto=None))]
fn project(record: &Bound<'_, PyAny>, player_no: u8, upto: Option<usize>) -> PyResult<String> {
    Ok(logfmt::project(&from_py::<GameRecord>(record)?, player(player_no)?, upto).text())
}

/// Replays log text against the given roles and returns a summary dict.
#[pyfunction]
fn replay<'py>(py: Python<'py>, text: &str, roles: HashMap<u8, String>) -> PyResult<Bound<'py, PyAny>> {
    let events = logfmt::parse(text).map_err(err)?;
    let report = replay_events(GameConfig::with_roles(0, role_map(roles)?), &events).map_err(err)?;
    let summary = serde_json::json!({
        "winner": report.winner().map(|s| s.as_str()),
        "phase": report.phase.name(),
        "inferred_choices": report.inferred_choices,
        "ignored_after_end": report.ignored_after_end.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "record": report.record,
    });
    to_py(py, &summary)
}

/// The 24 relabelings of the viewer's co-players, each as `{seat: new seat}`.
#[pyfunction]
fn coplayer_permutations(viewer: u8) -> PyResult<Vec<BTreeMap<u8, u8>>> {
    Ok(augment::coplayer_permutations(player(viewer)?)
        .iter()
        .map(|q| PlayerId::all().map(|p| (p.number(), q.map(p).number())).collect())
        .collect())
}

/// Renames `#n` references in `text` by `mapping`, which must fix `viewer`.
#[pyfunction]
fn permute_text(text: &str, viewer: u8, mapping: HashMap<u8, u8>) -> PyResult<String> {
    let pairs: Vec<(u8, u8)> = mapping.into_iter().collect();
    let perm = Permutation::from_pairs(player(viewer)?, &pairs).ok_or_else(|| err("not a co-player permutation"))?;
    Ok(augment::permute_text(text, &perm))
}

fn examples_to_py<'py>(py: Python<'py>, examples: &[TrainingExample]) -> PyResult<Bound<'py, PyAny>> {
    let rows: Vec<serde_json::Value> = examples
        .iter()
        .map(|e| {
            serde_json::json!({
                "role": e.key.role().as_str(),
                "player": e.key.player().number(),
                "text": e.text,
                "label": e.label,
            })
        })
        .collect();
    to_py(py, &rows)
}

/// Labeled examples from finished record dicts: 120 per record, or one per
/// decision point with `sliced=True`.
#[pyfunction]
#[pyo3(signature = (records, sliced=false, balance_seed=None))]
fn augment_records<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyAny>,
    sliced: bool,
    balance_seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut records: Vec<GameRecord> = from_py(records)?;
    if let Some(seed) = balance_seed {
        records = augment::balance_sides(&records, seed);
    }
    let examples = if sliced { augment::augment_sliced(&records) } else { augment::augment_dataset(&records) };
    examples_to_py(py, &examples.map_err(err)?)
}

/// The hashed n-gram logistic oracle for one (role, seat) key.
#[pyclass(module = "deepwolf")]
struct BaselineModel {
    model: oracle::BaselineModel,
}

#[pymethods]
impl BaselineModel {
    /// Trains on `(text, label)` pairs.
    #[staticmethod]
    #[pyo3(signature = (role_name, player_no, data, epochs=None, learning_rate=None, batch_size=None, dim=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        role_name: &str,
        player_no: u8,
        data: Vec<(String, u8)>,
        epochs: Option<usize>,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        dim: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let key = OracleKey::new(role(role_name)?, player_no).map_err(err)?;
        let examples: Vec<TrainingExample> =
            data.into_iter().map(|(text, label)| TrainingExample { key, text, label }).collect();
        let mut params = oracle::TrainParams { seed, ..oracle::TrainParams::default() };
        params.epochs = epochs.unwrap_or(params.epochs);
        params.learning_rate = learning_rate.unwrap_or(params.learning_rate);
        params.batch_size = batch_size.unwrap_or(params.batch_size);
        params.dim = dim.unwrap_or(params.dim);
        let (model, _) = oracle::train_baseline(&examples, key, &params).map_err(err)?;
        Ok(BaselineModel { model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(BaselineModel { model: oracle::BaselineModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(err)
    }

    /// Win probability of the viewer's side after `log` plus `candidate`.
    fn score(&self, log: &str, candidate: &str) -> PyResult<f64> {
        Ok(self.model.score(log, candidate).map_err(err)?.value())
    }

    fn score_text(&self, text: &str) -> f64 {
        self.model.score_text(text).value()
    }

    #[getter]
    fn key(&self) -> (String, u8) {
        let k = self.model.key();
        (k.role().to_string(), k.player().number())
    }
}

/// Plays `n_games` seeded games and returns their record dicts.
#[pyfunction]
#[pyo3(signature = (n_games, seed=0, policies=None, pools_dir=None))]
fn simulate<'py>(
    py: Python<'py>,
    n_games: u64,
    seed: u64,
    policies: Option<Vec<String>>,
    pools_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let specs: [PolicySpec; 5] = match policies {
        None => [PolicySpec::RandomLegal; 5],
        Some(names) => {
            let parsed: Vec<PolicySpec> = names.iter().map(|n| n.parse().map_err(err)).collect::<PyResult<_>>()?;
            parsed.try_into().map_err(|_| err("need exactly 5 policies"))?
        }
    };
    if specs.contains(&PolicySpec::Agent) {
        return Err(err("agent seats need trained models; use the eval command"));
    }
    let pools = match pools_dir {
        Some(dir) => load_pools(&dir).map_err(err)?,
        None => HashMap::new(),
    };
    let res = Resources { pools, ..Resources::default() };
    let records: Vec<GameRecord> = (0..n_games)
        .map(|i| play_game(GameConfig::seeded(game_seed(seed, i)), &specs, &res).map_err(err))
        .collect::<PyResult<_>>()?;
    to_py(py, &records)
}

/// Win-rate table over record dicts; `attribution` maps seat to identity.
#[pyfunction]
#[pyo3(signature = (records, attribution, format="text"))]
fn win_rates(records: &Bound<'_, PyAny>, attribution: HashMap<u8, String>, format: &str) -> PyResult<String> {
    let records: Vec<GameRecord> = from_py(records)?;
    let attribution = attribution.into_iter().map(|(n, id)| Ok((player(n)?, id))).collect::<PyResult<_>>()?;
    let format = match format {
        "text" => TableFormat::Text,
        "csv" => TableFormat::Csv,
        other => return Err(err(format!("unknown format {other:?}"))),
    };
    Ok(export_table(&compute_win_rates(&records, &attribution), format))
}

#[pymodule(name = "deepwolf")]
fn deepwolf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeepWolfError", m.py().get_type::<DeepWolfError>())?;
    m.add_class::<Game>()?;
    m.add_class::<BaselineModel>()?;
    m.add_function(wrap_pyfunction!(render_full, m)?)?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(coplayer_permutations, m)?)?;
    m.add_function(wrap_pyfunction!(permute_text, m)?)?;
    m.add_function(wrap_pyfunction!(augment_records, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(win_rates, m)?)?;
    Ok(())
}

//! Batch match runner and win-rate tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{GameConfig, PlayerId, Role, Side};
use crate::logfmt::GameRecord;
use crate::sim::{game_seed, play_game, PolicySpec, Resources, SimError};

/// Column order of every table.
pub const COLUMNS: [Role; 4] = [Role::Werewolf, Role::Seer, Role::Betrayer, Role::Villager];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bad match spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub n_games: usize,
    #[serde(default)]
    pub seed: u64,
    /// Policy per seat, seat 1 first.
    pub policies: [PolicySpec; 5],
    /// Name each seat is credited under; defaults to `#n <policy>`.
    #[serde(default)]
    pub identities: Option<[String; 5]>,
    #[serde(default)]
    pub pools_dir: Option<PathBuf>,
    #[serde(default)]
    pub models_dir: Option<PathBuf>,
}

impl MatchSpec {
    pub fn new(n_games: usize, seed: u64, policies: [PolicySpec; 5]) -> Self {
        MatchSpec { n_games, seed, policies, identities: None, pools_dir: None, models_dir: None }
    }

    /// Reads a `.toml` or `.json` spec. Relative directories resolve
    /// against the spec's own directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        let mut spec: MatchSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| EvalError::Spec(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| EvalError::Spec(e.to_string()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut spec.pools_dir, &mut spec.models_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_games == 0 {
            return Err(EvalError::Spec("n_games must be at least 1".into()));
        }
        Ok(())
    }

    pub fn attribution(&self) -> BTreeMap<PlayerId, String> {
        PlayerId::all()
            .enumerate()
            .map(|(i, p)| {
                let name = match &self.identities {
                    Some(ids) => ids[i].clone(),
                    None => format!("{p} {}", self.policies[i]),
                };
                (p, name)
            })
            .collect()
    }
}

/// Plays `spec.n_games` games in parallel. Game `i` is seeded from
/// `(spec.seed, i)`, so the result does not depend on scheduling.
pub fn run_matches(spec: &MatchSpec, resources: &Resources) -> Result<Vec<GameRecord>, EvalError> {
    spec.validate()?;
    for (seat, policy) in PlayerId::all().zip(spec.policies) {
        if policy == PolicySpec::Agent {
            resources.check_agent_seat(seat)?;
        }
    }
    (0..spec.n_games as u64)
        .into_par_iter()
        .map(|i| {
            let config = GameConfig::seeded(game_seed(spec.seed, i));
            play_game(config, &spec.policies, resources).map_err(EvalError::from)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub wins: u32,
    pub games: u32,
}

impl Cell {
    pub fn rate(&self) -> Option<f64> {
        (self.games > 0).then(|| self.wins as f64 / self.games as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateRow {
    pub identity: String,
    /// Indexed like [`COLUMNS`].
    pub cells: [Cell; 4],
}

impl WinRateRow {
    pub fn cell(&self, role: Role) -> Cell {
        self.cells[column_of(role)]
    }

    pub fn games(&self) -> u32 {
        self.cells.iter().map(|c| c.games).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WinRateTable {
    pub rows: Vec<WinRateRow>,
}

impl WinRateTable {
    pub fn row(&self, identity: &str) -> Option<&WinRateRow> {
        self.rows.iter().find(|r| r.identity == identity)
    }

    /// Mean of the defined rates in each column; every identity counts
    /// once regardless of how many games it played.
    pub fn average(&self) -> [Option<f64>; 4] {
        let mut out = [None; 4];
        for (col, slot) in out.iter_mut().enumerate() {
            let rates: Vec<f64> = self.rows.iter().filter_map(|r| r.cells[col].rate()).collect();
            if !rates.is_empty() {
                *slot = Some(rates.iter().sum::<f64>() / rates.len() as f64);
            }
        }
        out
    }
}

fn column_of(role: Role) -> usize {
    COLUMNS.iter().position(|r| *r == role).expect("every role has a column")
}

/// Aggregates finished records per identity and role. Rows keep the order
/// in which identities first appear in seat order.
pub fn compute_win_rates(records: &[GameRecord], attribution: &BTreeMap<PlayerId, String>) -> WinRateTable {
    let mut table = WinRateTable::default();
    for name in attribution.values() {
        if table.row(name).is_none() {
            table.rows.push(WinRateRow { identity: name.clone(), cells: [Cell::default(); 4] });
        }
    }
    for record in records {
        let Some(winner) = record.winner else { continue };
        for (seat, name) in attribution {
            let role = record.role_of(*seat);
            let row = table
                .rows
                .iter_mut()
                .find(|r| &r.identity == name)
                .expect("row created above");
            let cell = &mut row.cells[column_of(role)];
            cell.games += 1;
            if role.side() == winner {
                cell.wins += 1;
            }
        }
    }
    table
}

/// Two decimals, halves rounded up.
pub fn format_rate(rate: Option<f64>) -> String {
    match rate {
        None => "N/A".to_string(),
        Some(r) => format!("{:.2}", ((r * 100.0) + 0.5 + 1e-9).floor() / 100.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" | "txt" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format {other:?}")),
        }
    }
}

/// Renders the table; an empty table is just the header row.
pub fn export_table(table: &WinRateTable, format: TableFormat) -> String {
    let header: Vec<String> = std::iter::once("Player".to_string())
        .chain(COLUMNS.iter().map(|r| capitalize(r.as_str())))
        .collect();
    let mut body: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|row| {
            std::iter::once(row.identity.clone())
                .chain(row.cells.iter().map(|c| format_rate(c.rate())))
                .collect()
        })
        .collect();
    if !table.rows.is_empty() {
        body.push(
            std::iter::once("Average".to_string())
                .chain(table.average().iter().map(|r| format_rate(*r)))
                .collect(),
        );
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            for row in std::iter::once(&header).chain(&body) {
                let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        TableFormat::Text => {
            let first = std::iter::once(&header)
                .chain(&body)
                .map(|r| r[0].chars().count())
                .max()
                .unwrap_or(0);
            for row in std::iter::once(&header).chain(&body) {
                let _ = write!(out, "{:<first$}", row[0]);
                for (field, head) in row[1..].iter().zip(&header[1..]) {
                    let _ = write!(out, "  {:>w$}", field, w = head.len());
                }
                out.push('\n');
            }
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn csv_field(f: &str) -> String {
    if f.contains([',', '"', '\n']) {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_string()
    }
}

/// Fraction of finished records won by `side`.
pub fn side_win_fraction(records: &[GameRecord], side: Side) -> f64 {
    let finished: Vec<_> = records.iter().filter_map(|r| r.winner).collect();
    if finished.is_empty() {
        return 0.0;
    }
    finished.iter().filter(|w| **w == side).count() as f64 / finished.len() as f64
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{corpus, golden_log, golden_roles, key, p, random_instance, random_records, reference_loss, rel_err};
use deepwolf::agent::{
    choose_action_with, phase_candidates, should_act, AgentError, AgentState, CandidateAction, TurnDecision,
};
use deepwolf::augment::{apply_permutation, augment_dataset, balance_sides, coplayer_permutations, Permutation};
use deepwolf::engine::{Event, EventKind, GameConfig, GameState, LegalAction, Phase, PlayerId, Role, Side};
use deepwolf::eval::{compute_win_rates, export_table, TableFormat};
use deepwolf::logfmt::{parse, project, render_full, GameRecord};
use deepwolf::oracle::{loss_and_gradient, train_baseline, OracleHandle, TrainParams};
use deepwolf::replay::replay_events;
use deepwolf::sim::{game_seed, play_game_with, PolicySpec, Resources, SeatPolicy, SimError};

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_replay() -> Result<(), String> {
    let start = Instant::now();
    let events = parse(&golden_log()).map_err(|e| e.to_string())?;
    let report = replay_events(GameConfig::with_roles(0, golden_roles()), &events).map_err(|e| e.to_string())?;
    // skip the day-0 result, which the fixture starts from
    let outcomes: Vec<EventKind> = report
        .events
        .iter()
        .skip_while(|e| !matches!(e.kind, EventKind::DivineResult { .. }))
        .skip(1)
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::Expel { .. } | EventKind::Attack { .. } | EventKind::DivineResult { .. } | EventKind::GameEnd { .. }
            )
        })
        .map(|e| e.kind.clone())
        .collect();
    let want = vec![
        EventKind::Expel { target: p(4) },
        EventKind::Attack { target: p(2) },
        EventKind::DivineResult { seer: p(1), target: p(3), is_werewolf: true },
        EventKind::Expel { target: p(1) },
        EventKind::GameEnd { winner: Side::Werewolf },
    ];
    ensure(outcomes == want, || format!("outcomes {outcomes:?}"))?;
    ensure(report.winner() == Some(Side::Werewolf), || "winner".into())?;
    ensure(start.elapsed() < Duration::from_secs(1), || format!("took {:?}", start.elapsed()))
}

fn termination() -> Result<(), String> {
    let start = Instant::now();
    let res = Resources { pools: common::pools(), ..Resources::default() };
    let bad: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .filter_map(|i| {
            let seed = game_seed(2024, i);
            match deepwolf::sim::play_game(GameConfig::seeded(seed), &[PolicySpec::RandomLegal; 5], &res) {
                Ok(r) if r.winner.is_some() && r.events.iter().all(|e| e.day <= 2) => None,
                Ok(_) => Some(format!("seed {seed}: unfinished or past day 2")),
                Err(e) => Some(format!("seed {seed}: {e}")),
            }
        })
        .collect();
    ensure(bad.is_empty(), || format!("{} failures, first {}", bad.len(), bad[0]))?;
    ensure(start.elapsed() < Duration::from_secs(30), || format!("took {:?}", start.elapsed()))
}

fn augmentation_count() -> Result<(), String> {
    let start = Instant::now();
    let records = random_records(32, 11);
    let n = augment_dataset(&records).map_err(|e| e.to_string())?.len();
    ensure(n == 3840, || format!("{n} examples"))?;

    let pool = random_records(200, 12);
    let pick = |side| pool.iter().filter(move |r: &&GameRecord| r.winner == Some(side)).take(16).cloned();
    let mixed: Vec<GameRecord> = pick(Side::Villager).chain(pick(Side::Werewolf)).collect();
    ensure(mixed.len() == 32, || "not enough wins of each side".into())?;
    let balanced = balance_sides(&mixed, 3);
    ensure(balanced.len() == 32, || format!("balancing kept {}", balanced.len()))?;
    let examples = augment_dataset(&balanced).map_err(|e| e.to_string())?;
    let ones = examples.iter().filter(|e| e.label == 1).count();
    ensure(examples.len() == 3840 && ones * 2 == examples.len(), || format!("{ones} of {}", examples.len()))?;
    ensure(start.elapsed() < Duration::from_secs(10), || format!("took {:?}", start.elapsed()))
}

/// Finds leaks by looking at rendered text only.
fn masking_violations(record: &GameRecord, viewer: PlayerId) -> Vec<String> {
    let view = project(record, viewer, None);
    let text = view.text();
    let mut lines = text.lines();
    let mut out = Vec::new();
    let me = viewer.to_string();
    if lines.next() != Some(format!("You are {me}.").as_str()) {
        out.push("wrong viewer header".into());
    }
    let role_line = format!("Your role is {}.", record.roles[&viewer]);
    if lines.next() != Some(role_line.as_str()) {
        out.push("wrong role header".into());
    }
    let is_seer = record.roles[&viewer] == Role::Seer;
    for line in lines {
        if line.starts_with('#') && line.as_bytes().get(2) == Some(&b')') {
            continue; // talk: free text
        }
        if line.contains(" divined ") && !(is_seer && line.starts_with(&format!("{me} divined "))) {
            out.push(format!("foreign divine result: {line}"));
        }
        if line.contains("chose to divine") && !is_seer {
            out.push(format!("foreign divine choice: {line}"));
        }
        if line.contains("Your role is") || line.contains(" role is ") {
            out.push(format!("foreign role: {line}"));
        }
    }
    out
}

fn masking_soundness() -> Result<(), String> {
    let records = random_records(1000, 21);
    let bad: Vec<String> = records
        .par_iter()
        .flat_map_iter(|r| PlayerId::all().flat_map(move |v| masking_violations(r, v)))
        .collect();
    ensure(bad.is_empty(), || format!("{} violations, first {}", bad.len(), bad[0]))
}

fn permutation_group() -> Result<(), String> {
    let records = random_records(20, 31);
    for v in PlayerId::all() {
        let perms = coplayer_permutations(v);
        let distinct: HashSet<String> = perms.iter().map(|q| format!("{q:?}")).collect();
        ensure(perms.len() == 24 && distinct.len() == 24, || format!("viewer {v}: {} perms", perms.len()))?;
        ensure(perms.iter().all(|q| q.map(v) == v), || "viewer moved".into())?;
        for r in &records {
            let view = project(r, v, None);
            let id = apply_permutation(&view, &Permutation::identity(v)).map_err(|e| e.to_string())?;
            ensure(id.text() == view.text(), || "identity changed bytes".into())?;
            for q in &perms {
                let there = apply_permutation(&view, q).map_err(|e| e.to_string())?;
                let back = apply_permutation(&there, &q.inverse()).map_err(|e| e.to_string())?;
                ensure(back.text() == view.text(), || "inverse did not restore bytes".into())?;
            }
        }
    }
    let examples = augment_dataset(&records).map_err(|e| e.to_string())?;
    for group in examples.chunks(24) {
        ensure(group.iter().all(|e| e.label == group[0].label && e.key == group[0].key), || {
            "label changed under permutation".into()
        })?;
    }
    Ok(())
}

fn gradient_check() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, b, batch) = random_instance(&mut rng);
        let (_, grad, grad_b) = loss_and_gradient(&w, b, &batch);
        for j in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let num = (reference_loss(&up, b, &batch) - reference_loss(&down, b, &batch)) / (2.0 * h);
            if grad[j] != 0.0 || num.abs() > 1e-10 {
                worst = worst.max(rel_err(grad[j], num));
            }
        }
        let num_b = (reference_loss(&w, b + h, &batch) - reference_loss(&w, b - h, &batch)) / (2.0 * h);
        worst = worst.max(rel_err(grad_b, num_b));
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))
}

fn calibration() -> Result<(), String> {
    let data = corpus(1000, 41);
    let base = data.iter().map(|e| e.label as f64).sum::<f64>() / data.len() as f64;
    let (model, _) = train_baseline(&data, key(), &TrainParams::default()).map_err(|e| e.to_string())?;
    let mean = data.iter().map(|e| model.score_text(&e.text).value()).sum::<f64>() / data.len() as f64;
    ensure((mean - base).abs() <= 0.05, || format!("mean {mean:.4} vs base rate {base:.4}"))
}

/// An agent seat that decides twice, once on raw scores and once on
/// `2x + 1`, and reports any disagreement or illegal choice.
struct CheckedAgent {
    agent: AgentState,
    pool: deepwolf::agent::CandidatePool,
    oracle: OracleHandle,
    faults: Arc<Mutex<Vec<String>>>,
}

impl CheckedAgent {
    fn fault(&self, msg: String) {
        self.faults.lock().unwrap().push(msg);
    }
}

impl SeatPolicy for CheckedAgent {
    fn name(&self) -> &str {
        "checked-agent"
    }

    fn act(&mut self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<Option<EventKind>, SimError> {
        self.agent.observe(state.events());
        let Some(candidates) = phase_candidates(&self.agent, state, &self.pool) else {
            return Ok(None);
        };
        let oracle = self.oracle.clone();
        let raw = |log: &str, lines: &[String]| -> Result<Vec<f64>, AgentError> {
            Ok(oracle.score_batch(log, lines)?.into_iter().map(f64::from).collect())
        };
        let mut twin = self.agent.clone();
        let a = choose_action_with(&mut self.agent, &candidates, raw);
        let b = choose_action_with(&mut twin, &candidates, |log, lines| {
            Ok(raw(log, lines)?.into_iter().map(|x| 2.0 * x + 1.0).collect())
        });
        let choice = match (a, b) {
            (Ok(a), Ok(b)) => {
                if a != b {
                    self.fault(format!("{}: {a:?} vs {b:?} under 2x+1", self.agent.me()));
                }
                a
            }
            (Err(AgentError::NoCandidates), Err(AgentError::NoCandidates)) if state.phase().is_talk() => {
                CandidateAction::OverSignal
            }
            (Err(AgentError::NoCandidates), Err(AgentError::NoCandidates)) => {
                candidates[rng.random_range(0..candidates.len())].clone()
            }
            (Err(e), _) | (_, Err(e)) => return Err(SimError::Agent(e)),
        };
        let me = self.agent.me();
        let legal = state.legal_actions(me);
        let ok = match &choice {
            CandidateAction::Utterance(_) => legal.contains(&LegalAction::Talk),
            CandidateAction::OverSignal => legal.contains(&LegalAction::Over),
            _ => legal.iter().any(|l| CandidateAction::from_legal(*l).as_ref() == Some(&choice)),
        };
        if !ok {
            self.fault(format!("{me}: illegal {choice:?} in {}", state.phase()));
        }
        Ok(Some(choice.to_event(me)))
    }
}

fn agent_invariants() -> Result<(), String> {
    let res = common::trained_resources(64, 51);
    let faults = Arc::new(Mutex::new(Vec::new()));
    let results: Vec<Result<GameRecord, String>> = (0..500u64)
        .into_par_iter()
        .map(|i| {
            let config = GameConfig::seeded(game_seed(52, i));
            let roles = GameState::new(config.clone()).map_err(|e| e.to_string())?.roles().clone();
            let mut seats: Vec<Box<dyn SeatPolicy>> = PlayerId::all()
                .map(|seat| {
                    let role = roles[&seat];
                    let agent = AgentState::new(seat, role);
                    let oracle = res.oracles.lookup(agent.key()).unwrap();
                    Box::new(CheckedAgent { agent, pool: res.pool(role), oracle, faults: faults.clone() })
                        as Box<dyn SeatPolicy>
                })
                .collect();
            play_game_with(config, &mut seats).map_err(|e| e.to_string())
        })
        .collect();
    let mut problems: Vec<String> = faults.lock().unwrap().clone();
    for r in results {
        match r {
            Err(e) => problems.push(e),
            Ok(rec) => {
                let mut said: HashMap<PlayerId, HashSet<&str>> = HashMap::new();
                for e in &rec.events {
                    if let EventKind::Talk { speaker, text } = &e.kind {
                        if !said.entry(*speaker).or_default().insert(text) {
                            problems.push(format!("{speaker} repeated {text:?}"));
                        }
                    }
                }
            }
        }
    }
    ensure(problems.is_empty(), || format!("{} problems, first {}", problems.len(), problems[0]))
}

fn turn_policy() -> Result<(), String> {
    let talk = |day, n, text: &str| Event::new(day, EventKind::Talk { speaker: p(n), text: text.into() });
    let over = |day, n| Event::new(day, EventKind::Over { speaker: p(n) });
    let agent = AgentState::new(p(5), Role::Villager);
    let decide = |phase, events: &[Event]| should_act(&agent, phase, events);

    // day 1: the third distinct other speaker triggers a turn
    let mut ev = vec![Event::new(0, EventKind::DivineResult { seer: p(1), target: p(2), is_werewolf: false })];
    let script = [(1, TurnDecision::Wait), (1, TurnDecision::Wait), (2, TurnDecision::Wait), (3, TurnDecision::Speak)];
    ensure(decide(Phase::Day1Talk, &ev) == TurnDecision::Wait, || "spoke first on day 1".into())?;
    for (n, want) in script {
        ev.push(talk(1, n, "hi"));
        let got = decide(Phase::Day1Talk, &ev);
        ensure(got == want, || format!("day 1 after #{n}: {got:?}, wanted {want:?}"))?;
    }
    // speaking resets the count
    ev.push(talk(1, 5, "me"));
    ensure(decide(Phase::Day1Talk, &ev) == TurnDecision::Wait, || "no reset after speaking".into())?;
    for n in 1..=4 {
        ev.push(over(1, n));
    }
    ensure(decide(Phase::Day1Talk, &ev) == TurnDecision::SayOver, || "no SayOver on day 1".into())?;
    ev.push(over(1, 5));

    // day 2 with #4 expelled and #2 attacked: one other speaker is enough
    ev.push(Event::new(1, EventKind::Vote { voter: p(1), target: p(4) }));
    ev.push(Event::new(1, EventKind::Expel { target: p(4) }));
    ev.push(Event::new(1, EventKind::Attack { target: p(2) }));
    ensure(decide(Phase::Day2Talk, &ev) == TurnDecision::Wait, || "spoke first on day 2".into())?;
    ev.push(talk(2, 3, "hello"));
    ensure(decide(Phase::Day2Talk, &ev) == TurnDecision::Speak, || "no turn after one speaker on day 2".into())?;
    ev.push(talk(2, 5, "reply"));
    ev.push(over(2, 3));
    ensure(decide(Phase::Day2Talk, &ev) == TurnDecision::Wait, || "SayOver before every alive seat".into())?;
    ev.push(over(2, 1));
    ensure(decide(Phase::Day2Talk, &ev) == TurnDecision::SayOver, || "no SayOver once the living are done".into())
}

fn round_trip() -> Result<(), String> {
    let records = random_records(1000, 61);
    let bad = records
        .par_iter()
        .filter(|r| {
            let text = render_full(r).unwrap();
            parse(&text).map_or(true, |ev| ev != r.events)
        })
        .count();
    ensure(bad == 0, || format!("{bad} records changed"))
}

fn win_rate_table() -> Result<(), String> {
    let records = random_records(1, 71);
    // A sits at seat 1 and B holds the other four seats, so A has one role
    let attribution: BTreeMap<PlayerId, String> =
        PlayerId::all().map(|s| (s, if s == p(1) { "A" } else { "B" }.to_string())).collect();
    let table = compute_win_rates(&records, &attribution);
    let csv_text = export_table(&table, TableFormat::Csv);
    let mut rows = csv_text.lines().map(|l| l.split(',').collect::<Vec<_>>());
    let header = rows.next().unwrap_or_default();
    let columns = [Role::Werewolf, Role::Seer, Role::Betrayer, Role::Villager];
    ensure(header == ["Player", "Werewolf", "Seer", "Betrayer", "Villager"], || format!("header {header:?}"))?;
    for row in rows.filter(|r| r[0] != "Average") {
        for (role, cell) in columns.iter().zip(&row[1..]) {
            let (mut wins, mut games) = (0u64, 0u64);
            for r in &records {
                for (seat, id) in &attribution {
                    if id == row[0] && r.roles[seat] == *role {
                        games += 1;
                        wins += u64::from(r.winner == Some(role.side()));
                    }
                }
            }
            let want = if games == 0 {
                "N/A".to_string()
            } else {
                let hundredths = (wins * 200 + games) / (2 * games);
                format!("{}.{:02}", hundredths / 100, hundredths % 100)
            };
            ensure(*cell == want, || format!("{} {role}: {cell} vs {want}", row[0]))?;
        }
    }
    let a = table.row("A").ok_or("no row A")?;
    ensure(columns.iter().filter(|r| a.cell(**r).games == 0).count() == 3, || "A should have 3 N/A cells".into())?;
    let empty = export_table(&compute_win_rates(&[], &attribution), TableFormat::Csv);
    let cells: Vec<&str> = empty.lines().skip(1).flat_map(|l| l.split(',').skip(1)).collect();
    ensure(!cells.is_empty() && cells.iter().all(|c| *c == "N/A"), || format!("empty table {empty:?}"))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("golden replay", golden_replay),
        ("termination", termination),
        ("augmentation count", augmentation_count),
        ("masking soundness", masking_soundness),
        ("permutation group", permutation_group),
        ("oracle gradient check", gradient_check),
        ("oracle calibration", calibration),
        ("agent invariants", agent_invariants),
        ("turn policy", turn_policy),
        ("round-trip", round_trip),
        ("win-rate table", win_rate_table),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  {name} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {why}");
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

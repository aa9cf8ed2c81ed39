//! Replays a parsed log through the engine.
//!
//! Logs captured from play (or the published sample) show divination
//! results but not the seer's choice, and may omit the game-end line or
//! carry lines after the game is already decided. The replayer fills in the
//! choice implied by each result, checks every engine-produced line
//! (expulsions, attacks, results) against the log, and reports lines past
//! the end of the game separately instead of failing on them.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::engine::{EngineError, Event, EventKind, GameConfig, GameState, Phase, Side};
use crate::logfmt::{render_line, GameRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("line {line}: {source}")]
    Illegal {
        line: usize,
        #[source]
        source: EngineError,
    },
    #[error("line {line}: log shows {found:?} but the engine produced {expected}")]
    Mismatch { line: usize, found: String, expected: String },
    #[error("log ends but the engine still produced: {0}")]
    MissingLines(String),
    #[error(transparent)]
    Config(EngineError),
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    /// Full engine log after replay, including inferred divination choices.
    pub events: Vec<Event>,
    pub phase: Phase,
    pub inferred_choices: usize,
    /// `(line number, text)` of lines that came after the game ended.
    pub ignored_after_end: Vec<(usize, String)>,
    pub record: GameRecord,
}

impl ReplayReport {
    pub fn winner(&self) -> Option<Side> {
        match self.phase {
            Phase::Finished(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.winner() {
            Some(side) => writeln!(f, "winner: {side}")?,
            None => writeln!(f, "in progress, phase={}", self.phase.name())?,
        }
        writeln!(f, "events: {}", self.events.len())?;
        if self.inferred_choices > 0 {
            writeln!(f, "inferred divination choices: {}", self.inferred_choices)?;
        }
        for (line, text) in &self.ignored_after_end {
            writeln!(f, "ignored after game end (line {line}): {text}")?;
        }
        Ok(())
    }
}

struct Item {
    kind: EventKind,
    /// 1-based source line; inferred items borrow the line of the result
    /// that implied them.
    line: usize,
    inferred: bool,
}

fn with_inferred_choices(events: &[Event]) -> Vec<Item> {
    let mut items: Vec<Item> = events
        .iter()
        .enumerate()
        .map(|(i, e)| Item { kind: e.kind.clone(), line: i + 1, inferred: false })
        .collect();
    let has_choice = |day: u8| {
        events
            .iter()
            .any(|e| e.day == day && matches!(e.kind, EventKind::DivineChoice { .. }))
    };
    let mut inserts: Vec<(usize, Item)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let EventKind::DivineResult { seer, target, .. } = e.kind else { continue };
        if e.day == 0 || has_choice(e.day - 1) {
            continue;
        }
        let choice_day = e.day - 1;
        // the choice must be pending before the night that delivers it
        // resolves: day 0 resolves on the choice itself, night 1 on the attack
        let at = if choice_day == 0 {
            0
        } else {
            events
                .iter()
                .position(|x| x.day == choice_day && matches!(x.kind, EventKind::Attack { .. }))
                .unwrap_or(i)
        };
        inserts.push((
            at,
            Item { kind: EventKind::DivineChoice { seer, target }, line: i + 1, inferred: true },
        ));
    }
    for (at, item) in inserts.into_iter().rev() {
        items.insert(at, item);
    }
    items
}

/// Replays `events` from `config`. Events whose kind is a player action are
/// applied; engine-produced events must match what the engine emits.
/// Queues engine output for matching, dropping the echoes of applied actions.
fn absorb(produced: Vec<Event>, echoes: &mut Vec<EventKind>, expected: &mut VecDeque<Event>) {
    for e in produced {
        if let Some(pos) = echoes.iter().position(|k| *k == e.kind) {
            echoes.remove(pos);
        } else {
            expected.push_back(e);
        }
    }
}

pub fn replay_events(config: GameConfig, events: &[Event]) -> Result<ReplayReport, ReplayError> {
    let mut state = GameState::new(config).map_err(ReplayError::Config)?;
    let items = with_inferred_choices(events);
    let inferred_choices = items.iter().filter(|i| i.inferred).count();
    let mut expected: VecDeque<Event> = VecDeque::new();
    let mut echoes: Vec<EventKind> = Vec::new();
    let mut ignored = Vec::new();

    for (idx, item) in items.iter().enumerate() {
        if state.is_finished() && expected.is_empty() {
            ignored.push((item.line, render_line(&item.kind)));
            continue;
        }
        // a night whose attack is in but whose divination never came was
        // closed by the phase timer
        if state.phase() == Phase::Night1
            && state.pending_attack().is_some()
            && !matches!(item.kind, EventKind::DivineChoice { .. })
        {
            let produced = state
                .resolve_night()
                .map_err(|source| ReplayError::Illegal { line: item.line, source })?
                .to_vec();
            absorb(produced, &mut echoes, &mut expected);
        }
        if !item.kind.is_player_action() {
            match expected.pop_front() {
                Some(e) if e.kind == item.kind => continue,
                Some(e) => {
                    return Err(ReplayError::Mismatch {
                        line: item.line,
                        found: render_line(&item.kind),
                        expected: render_line(&e.kind),
                    })
                }
                None => {
                    return Err(ReplayError::Mismatch {
                        line: item.line,
                        found: render_line(&item.kind),
                        expected: "nothing".into(),
                    })
                }
            }
        }
        // an omitted game-end line is tolerated; anything else is a gap
        expected.retain(|e| !matches!(e.kind, EventKind::GameEnd { .. }));
        if let Some(e) = expected.front() {
            return Err(ReplayError::Mismatch {
                line: item.line,
                found: render_line(&item.kind),
                expected: render_line(&e.kind),
            });
        }
        if state.is_finished() {
            ignored.push((item.line, render_line(&item.kind)));
            continue;
        }
        if let EventKind::Vote { .. } = item.kind {
            if state.pending_votes().len() + 1 == state.alive().len() {
                let next_expel = items[idx + 1..].iter().find_map(|i| match i.kind {
                    EventKind::Expel { target } => Some(target),
                    _ => None,
                });
                state.set_tiebreak_hint(next_expel);
            }
        }
        echoes.push(item.kind.clone());
        let produced = state
            .apply(item.kind.clone())
            .map_err(|source| ReplayError::Illegal { line: item.line, source })?
            .to_vec();
        absorb(produced, &mut echoes, &mut expected);
    }
    expected.retain(|e| !matches!(e.kind, EventKind::GameEnd { .. }));
    if !expected.is_empty() {
        let lines: Vec<String> = expected.iter().map(|e| render_line(&e.kind)).collect();
        return Err(ReplayError::MissingLines(lines.join(" / ")));
    }
    let record = GameRecord::from_state(&state);
    Ok(ReplayReport {
        events: state.events().to_vec(),
        phase: state.phase(),
        inferred_choices,
        ignored_after_end: ignored,
        record,
    })
}

pub fn replay_record(record: &GameRecord) -> Result<ReplayReport, ReplayError> {
    replay_events(record.config(), &record.events)
}

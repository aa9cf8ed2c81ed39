//! Canonical text logs.
//!
//! One line per event:
//!
//! ```text
//! #<n>) <text>                                   talk ("Over." is the Over signal)
//! #<a> voted for #<b>.
//! #<n> has been erased.
//! The werewolf erased #<n>.
//! #<s> divined #<t> and #<t> is the werewolf.
//! #<s> divined #<t> and #<t> is not a werewolf.
//! #<s> chose to divine #<t>.                     full logs only
//! The villager side won. / The werewolf side won.
//! ```
//!
//! Day numbers are not written; [`parse`] recovers them from the
//! erasure/divination structure. Viewpoint projection turns a full record
//! into what a single seat could have seen.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::CandidateAction;
use crate::engine::{Event, EventKind, GameConfig, GameState, PlayerId, Role, RoleMap, Side};

pub const OVER_TEXT: &str = "Over.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("inconsistent record: {0}")]
    InconsistentRecord(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// A finished or in-progress game: the unit of persistence and replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub seed: u64,
    pub roles: RoleMap,
    pub events: Vec<Event>,
    pub winner: Option<Side>,
}

impl GameRecord {
    pub fn from_state(state: &GameState) -> Self {
        GameRecord {
            seed: state.config().seed,
            roles: state.roles().clone(),
            events: state.events().to_vec(),
            winner: state.winner(),
        }
    }

    /// The config that reproduces this record (same roles, same tie-break
    /// stream).
    pub fn config(&self) -> GameConfig {
        GameConfig::with_roles(self.seed, self.roles.clone())
    }

    pub fn role_of(&self, p: PlayerId) -> Role {
        self.roles[&p]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

pub fn render_line(kind: &EventKind) -> String {
    match kind {
        EventKind::Talk { speaker, text } => format!("{speaker}) {text}"),
        EventKind::Over { speaker } => format!("{speaker}) {OVER_TEXT}"),
        EventKind::Vote { voter, target } => format!("{voter} voted for {target}."),
        EventKind::Expel { target } => format!("{target} has been erased."),
        EventKind::Attack { target } => format!("The werewolf erased {target}."),
        EventKind::DivineChoice { seer, target } => format!("{seer} chose to divine {target}."),
        EventKind::DivineResult { seer, target, is_werewolf: true } => {
            format!("{seer} divined {target} and {target} is the werewolf.")
        }
        EventKind::DivineResult { seer, target, is_werewolf: false } => {
            format!("{seer} divined {target} and {target} is not a werewolf.")
        }
        EventKind::GameEnd { winner } => format!("The {} side won.", winner.as_str()),
    }
}

/// Renders every event of `record`, one `\n`-terminated line each.
pub fn render_full(record: &GameRecord) -> Result<String, LogError> {
    check_consistency(record)?;
    let mut out = String::new();
    for e in &record.events {
        out.push_str(&render_line(&e.kind));
        out.push('\n');
    }
    Ok(out)
}

fn check_consistency(record: &GameRecord) -> Result<(), LogError> {
    crate::engine::validate_roles(&record.roles)
        .map_err(|e| LogError::InconsistentRecord(e.to_string()))?;
    let mut ends = record.events.iter().filter_map(|e| match e.kind {
        EventKind::GameEnd { winner } => Some(winner),
        _ => None,
    });
    let end = ends.next();
    if ends.next().is_some() {
        return Err(LogError::InconsistentRecord("more than one game end".into()));
    }
    if end != record.winner {
        return Err(LogError::InconsistentRecord(format!(
            "winner {:?} disagrees with game-end event {:?}",
            record.winner, end
        )));
    }
    for e in &record.events {
        if let EventKind::DivineResult { target, is_werewolf, .. } = e.kind {
            if is_werewolf != (record.role_of(target) == Role::Werewolf) {
                return Err(LogError::InconsistentRecord(format!(
                    "divination of {target} contradicts its role"
                )));
            }
        }
        if let EventKind::Talk { text, .. } = &e.kind {
            if text.contains('\n') || text == OVER_TEXT {
                return Err(LogError::InconsistentRecord(format!(
                    "talk text {text:?} cannot be rendered"
                )));
            }
        }
    }
    Ok(())
}

static TALK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#(\d+)\) (.*)$").unwrap());
static VOTE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#(\d+) voted for #(\d+)\.$").unwrap());
static EXPEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#(\d+) has been erased\.$").unwrap());
static ATTACK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^The werewolf erased #(\d+)\.$").unwrap());
static DIVINE_RESULT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^#(\d+) divined #(\d+) and #(\d+) is (the werewolf|not a werewolf)\.$").unwrap()
});
static DIVINE_CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#(\d+) chose to divine #(\d+)\.$").unwrap());
static GAME_END: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^The (villager|werewolf) side won\.$").unwrap());

/// Parses a canonical log into events. Unknown line shapes are errors.
pub fn parse(text: &str) -> Result<Vec<Event>, ParseError> {
    let mut days = DayTracker::default();
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let kind = parse_line(line).map_err(|reason| ParseError { line: line_no, reason })?;
        let day = days.stamp(&kind);
        events.push(Event::new(day, kind));
    }
    Ok(events)
}

fn player(s: &str) -> Result<PlayerId, String> {
    let n: u8 = s.parse().map_err(|_| format!("player number {s} out of range"))?;
    PlayerId::new(n).map_err(|e| e.to_string())
}

pub fn parse_line(line: &str) -> Result<EventKind, String> {
    if let Some(c) = TALK.captures(line) {
        let speaker = player(&c[1])?;
        let text = &c[2];
        return Ok(if text == OVER_TEXT {
            EventKind::Over { speaker }
        } else if text.trim().is_empty() {
            return Err("empty talk line".into());
        } else {
            EventKind::Talk { speaker, text: text.to_string() }
        });
    }
    if let Some(c) = VOTE.captures(line) {
        return Ok(EventKind::Vote { voter: player(&c[1])?, target: player(&c[2])? });
    }
    if let Some(c) = EXPEL.captures(line) {
        return Ok(EventKind::Expel { target: player(&c[1])? });
    }
    if let Some(c) = ATTACK.captures(line) {
        return Ok(EventKind::Attack { target: player(&c[1])? });
    }
    if let Some(c) = DIVINE_RESULT.captures(line) {
        if c[2] != c[3] {
            return Err("divination result names two different targets".into());
        }
        return Ok(EventKind::DivineResult {
            seer: player(&c[1])?,
            target: player(&c[2])?,
            is_werewolf: &c[4] == "the werewolf",
        });
    }
    if let Some(c) = DIVINE_CHOICE.captures(line) {
        return Ok(EventKind::DivineChoice { seer: player(&c[1])?, target: player(&c[2])? });
    }
    if let Some(c) = GAME_END.captures(line) {
        let winner = if &c[1] == "villager" { Side::Villager } else { Side::Werewolf };
        return Ok(EventKind::GameEnd { winner });
    }
    Err(format!("unrecognized line {line:?}"))
}

/// Recovers day numbers: day 0 holds only the seer's choice; the first
/// public line opens day 1; an expulsion starts a night, and the first
/// talk, vote or divination result after a night opens the next day.
#[derive(Debug)]
struct DayTracker {
    day: u8,
    night: bool,
}

impl Default for DayTracker {
    fn default() -> Self {
        DayTracker { day: 0, night: true }
    }
}

impl DayTracker {
    fn stamp(&mut self, kind: &EventKind) -> u8 {
        match kind {
            EventKind::DivineChoice { .. } | EventKind::Attack { .. } | EventKind::GameEnd { .. } => {}
            EventKind::Expel { .. } => {
                self.morning();
                self.night = true;
            }
            EventKind::Talk { .. }
            | EventKind::Over { .. }
            | EventKind::Vote { .. }
            | EventKind::DivineResult { .. } => self.morning(),
        }
        self.day
    }

    fn morning(&mut self) {
        if self.night {
            self.day += 1;
            self.night = false;
        }
    }
}

/// One seat's masked rendering of a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewpointLog {
    pub viewer: PlayerId,
    pub viewer_role: Role,
    /// Event lines only; the header is produced by [`ViewpointLog::text`].
    pub lines: Vec<String>,
    pub truncated_at: Option<usize>,
}

impl ViewpointLog {
    pub fn empty(viewer: PlayerId, viewer_role: Role) -> Self {
        ViewpointLog { viewer, viewer_role, lines: Vec::new(), truncated_at: None }
    }

    pub fn header(&self) -> [String; 2] {
        [
            format!("You are {}.", self.viewer),
            format!("Your role is {}.", self.viewer_role),
        ]
    }

    /// Header plus event lines, each terminated by `\n`.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for line in self.header().iter().chain(self.lines.iter()) {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Whether `viewer` may see `event`. Divination choices are never shown in
/// viewpoints; the seer sees their own results.
pub fn is_visible(event: &Event, viewer: PlayerId) -> bool {
    match event.kind {
        EventKind::DivineChoice { .. } => false,
        EventKind::DivineResult { seer, .. } => seer == viewer,
        _ => true,
    }
}

/// Projects `record` onto `viewer`'s knowledge, keeping the first `upto`
/// events (all of them when `None`).
pub fn project(record: &GameRecord, viewer: PlayerId, upto: Option<usize>) -> ViewpointLog {
    project_events(&record.events, viewer, record.role_of(viewer), upto)
}

/// [`project`] over a bare event slice, for callers holding live state.
pub fn project_events(
    events: &[Event],
    viewer: PlayerId,
    viewer_role: Role,
    upto: Option<usize>,
) -> ViewpointLog {
    let end = upto.map_or(events.len(), |k| k.min(events.len()));
    let lines = events[..end]
        .iter()
        .filter(|e| is_visible(e, viewer))
        .map(|e| render_line(&e.kind))
        .collect();
    ViewpointLog { viewer, viewer_role, lines, truncated_at: upto }
}

/// The line `actor` would add to the log by taking `candidate`.
pub fn render_candidate(actor: PlayerId, candidate: &CandidateAction) -> String {
    let kind = match candidate {
        CandidateAction::Utterance(text) => EventKind::Talk { speaker: actor, text: text.clone() },
        CandidateAction::OverSignal => EventKind::Over { speaker: actor },
        CandidateAction::VoteTarget(t) => EventKind::Vote { voter: actor, target: *t },
        CandidateAction::DivineTarget(t) => EventKind::DivineChoice { seer: actor, target: *t },
        CandidateAction::AttackTarget(t) => EventKind::Attack { target: *t },
    };
    render_line(&kind)
}

/// The exact oracle input: viewpoint text followed by the candidate line.
pub fn render_prefix(viewpoint: &ViewpointLog, candidate: &CandidateAction) -> String {
    let mut out = viewpoint.text();
    out.push_str(&render_candidate(viewpoint.viewer, candidate));
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_path_buf(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LogError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| LogError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Writes `<name>.log` (canonical text) and then `<name>.json` (manifest),
/// each through a temp file and rename. Loaders only look at manifests, so
/// a crash leaves either a complete record or none.
pub fn save_record(dir: &Path, name: &str, record: &GameRecord) -> Result<PathBuf, LogError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let text = render_full(record)?;
    write_atomic(&dir.join(format!("{name}.log")), text.as_bytes())?;
    let manifest = dir.join(format!("{name}.json"));
    write_atomic(&manifest, record.to_json().as_bytes())?;
    Ok(manifest)
}

pub fn load_record(path: &Path) -> Result<GameRecord, LogError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| LogError::Manifest { path: path.to_path_buf(), source })
}

/// Loads every `*.json` manifest in `dir`, ordered by file name.
pub fn load_records_dir(dir: &Path) -> Result<Vec<GameRecord>, LogError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_record(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: u8) -> PlayerId {
        PlayerId::new(n).unwrap()
    }

    fn roles() -> RoleMap {
        [
            (p(1), Role::Seer),
            (p(2), Role::Villager),
            (p(3), Role::Werewolf),
            (p(4), Role::Villager),
            (p(5), Role::Betrayer),
        ]
        .into_iter()
        .collect()
    }

    fn record(events: Vec<Event>) -> GameRecord {
        GameRecord { seed: 0, roles: roles(), events, winner: None }
    }

    #[test]
    fn line_templates() {
        assert_eq!(render_line(&EventKind::Vote { voter: p(1), target: p(2) }), "#1 voted for #2.");
        assert_eq!(render_line(&EventKind::Attack { target: p(2) }), "The werewolf erased #2.");
        assert_eq!(
            render_line(&EventKind::Talk { speaker: p(4), text: "Good morning. I am a villager.".into() }),
            "#4) Good morning. I am a villager."
        );
        assert_eq!(render_line(&EventKind::Expel { target: p(4) }), "#4 has been erased.");
        assert_eq!(
            render_line(&EventKind::DivineResult { seer: p(1), target: p(2), is_werewolf: false }),
            "#1 divined #2 and #2 is not a werewolf."
        );
        assert_eq!(
            render_line(&EventKind::DivineResult { seer: p(1), target: p(3), is_werewolf: true }),
            "#1 divined #3 and #3 is the werewolf."
        );
        assert_eq!(render_line(&EventKind::Over { speaker: p(2) }), "#2) Over.");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse("#4 has been erased.").unwrap()[0].kind, EventKind::Expel { target: p(4) });
        assert!(parse("").unwrap().is_empty());
        let err = parse("#6) hi").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse("#1) hi\n#2 votes for #3.\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(parse("#1 divined #2 and #3 is the werewolf.").is_err());
        assert!(parse("#1) ").is_err());
    }

    #[test]
    fn parse_recovers_days() {
        let text = "#1 chose to divine #2.\n#1 divined #2 and #2 is not a werewolf.\n#2) hi\n#2 voted for #3.\n#3 has been erased.\n#1 chose to divine #4.\nThe werewolf erased #5.\n#1 divined #4 and #4 is not a werewolf.\n#1) Over.\n#1 voted for #2.\n#2 has been erased.\nThe villager side won.\n";
        let days: Vec<u8> = parse(text).unwrap().iter().map(|e| e.day).collect();
        assert_eq!(days, vec![0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn render_rejects_inconsistent() {
        let bad = record(vec![Event::new(
            1,
            EventKind::DivineResult { seer: p(1), target: p(5), is_werewolf: true },
        )]);
        assert!(matches!(render_full(&bad), Err(LogError::InconsistentRecord(_))));
        let mut won = record(vec![]);
        won.winner = Some(Side::Villager);
        assert!(render_full(&won).is_err());
    }

    #[test]
    fn villager_sees_no_divination() {
        let r = record(vec![
            Event::new(0, EventKind::DivineChoice { seer: p(1), target: p(2) }),
            Event::new(1, EventKind::DivineResult { seer: p(1), target: p(2), is_werewolf: false }),
            Event::new(1, EventKind::Talk { speaker: p(4), text: "Good morning.".into() }),
        ]);
        let v = project(&r, p(4), None);
        assert_eq!(v.lines, vec!["#4) Good morning."]);
        assert_eq!(v.header(), ["You are #4.".to_string(), "Your role is villager.".to_string()]);
        let seer = project(&r, p(1), None);
        assert_eq!(seer.lines[0], "#1 divined #2 and #2 is not a werewolf.");
        let wolf = project(&r, p(3), None);
        assert!(wolf.text().contains("Your role is werewolf."));
        assert!(!wolf.text().contains("seer"));
    }

    #[test]
    fn prefix_rendering() {
        let v = ViewpointLog::empty(p(2), Role::Villager);
        let text = render_prefix(&v, &CandidateAction::Utterance("I am a villager.".into()));
        assert_eq!(text, "You are #2.\nYour role is villager.\n#2) I am a villager.");
        let r = record(vec![Event::new(1, EventKind::Talk { speaker: p(4), text: "hi".into() })]);
        let v = project(&r, p(2), None);
        let a = render_prefix(&v, &CandidateAction::VoteTarget(p(4)));
        assert!(a.ends_with("#2 voted for #4."));
        assert_eq!(a, render_prefix(&v, &CandidateAction::VoteTarget(p(4))));
    }

    #[test]
    fn manifest_field_names() {
        let r = GameRecord {
            seed: 3,
            roles: roles(),
            events: vec![Event::new(0, EventKind::DivineChoice { seer: p(1), target: p(2) })],
            winner: None,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["seed", "roles", "events", "winner"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["roles"]["1"], "seer");
        assert_eq!(v["events"][0]["type"], "divine_choice");
        let back: GameRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let r = record(vec![Event::new(0, EventKind::DivineChoice { seer: p(1), target: p(2) })]);
        let path = save_record(dir.path(), "g1", &r).unwrap();
        assert_eq!(load_record(&path).unwrap(), r);
        assert!(dir.path().join("g1.log").exists());
        assert_eq!(load_records_dir(dir.path()).unwrap().len(), 1);
    }
}

//! The oracle-driven agent.
//!
//! The agent never generates text. It picks from a fixed pool of
//! human-sourced utterances (or from the legal targets) the candidate whose
//! rendered line gets the highest win probability from its oracle. Talk
//! timing follows three rules: say Over once everyone else has, speak after
//! `k` distinct others have talked since its own last line, and never repeat
//! a sentence within a game.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::engine::{Event, EventKind, GameState, LegalAction, Phase, PlayerId, Role};
use crate::logfmt::{project_events, render_candidate, GameRecord, ViewpointLog};
use crate::oracle::{OracleError, OracleKey, ValueOracle};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no candidates left to choose from")]
    NoCandidates,
    #[error("no {0} appears in the logs")]
    NoSuchRoleInLogs(Role),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("pool file {path}: {source}")]
    PoolIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CandidateAction {
    Utterance(String),
    VoteTarget(PlayerId),
    DivineTarget(PlayerId),
    AttackTarget(PlayerId),
    OverSignal,
}

impl CandidateAction {
    /// The engine action `actor` submits for this candidate.
    pub fn to_event(&self, actor: PlayerId) -> EventKind {
        match self {
            CandidateAction::Utterance(text) => EventKind::Talk { speaker: actor, text: text.clone() },
            CandidateAction::OverSignal => EventKind::Over { speaker: actor },
            CandidateAction::VoteTarget(t) => EventKind::Vote { voter: actor, target: *t },
            CandidateAction::DivineTarget(t) => EventKind::DivineChoice { seer: actor, target: *t },
            CandidateAction::AttackTarget(t) => EventKind::Attack { target: *t },
        }
    }

    pub fn from_legal(action: LegalAction) -> Option<Self> {
        match action {
            LegalAction::Vote(t) => Some(CandidateAction::VoteTarget(t)),
            LegalAction::Divine(t) => Some(CandidateAction::DivineTarget(t)),
            LegalAction::Attack(t) => Some(CandidateAction::AttackTarget(t)),
            LegalAction::Over => Some(CandidateAction::OverSignal),
            LegalAction::Talk => None,
        }
    }
}

/// Role-tagged utterances in canonical (load) order, no exact duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    role: Role,
    utterances: Vec<String>,
}

impl CandidatePool {
    pub fn new(role: Role, utterances: impl IntoIterator<Item = String>) -> Self {
        let mut seen = HashSet::new();
        let utterances = utterances
            .into_iter()
            .filter(|u| crate::engine::validate_talk_text(u).is_ok())
            .filter(|u| seen.insert(u.clone()))
            .collect();
        CandidatePool { role, utterances }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn utterances(&self) -> &[String] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// One utterance per line. Blank lines and comment lines (a `#` that is
    /// not the start of a `#<digit>` seat reference) are skipped.
    pub fn parse(role: Role, text: &str) -> Self {
        let lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !is_comment(l))
            .map(str::to_string);
        Self::new(role, lines)
    }

    pub fn load(role: Role, path: &Path) -> Result<Self, AgentError> {
        let text = fs::read_to_string(path)
            .map_err(|source| AgentError::PoolIo { path: path.display().to_string(), source })?;
        Ok(Self::parse(role, &text))
    }

    pub fn to_file_text(&self) -> String {
        let mut out = format!("# {} candidate pool\n", self.role);
        for u in &self.utterances {
            out.push_str(u);
            out.push('\n');
        }
        out
    }
}

fn is_comment(line: &str) -> bool {
    let mut chars = line.chars();
    chars.next() == Some('#') && !chars.next().is_some_and(|c| c.is_ascii_digit())
}

/// Loads `pools/<role>.txt` for every role present in `dir`.
pub fn load_pools(dir: &Path) -> Result<HashMap<Role, CandidatePool>, AgentError> {
    let mut out = HashMap::new();
    for role in Role::ALL {
        let path = dir.join(format!("{role}.txt"));
        if path.exists() {
            out.insert(role, CandidatePool::load(role, &path)?);
        }
    }
    Ok(out)
}

fn normalize(s: &str) -> Vec<char> {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect()
}

fn trigrams(s: &str) -> HashSet<String> {
    let chars = normalize(s);
    if chars.len() < 3 {
        return std::iter::once(chars.iter().collect()).collect();
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Jaccard similarity of the character-trigram sets of the normalized
/// (lowercased, whitespace-collapsed) strings.
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (trigrams(a), trigrams(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Greedy near-duplicate filter in input order: an utterance is dropped
/// when its similarity to any already kept one reaches `threshold`.
pub fn dedup_candidates(utterances: &[String], threshold: f64) -> Vec<String> {
    let mut kept: Vec<(String, HashSet<String>)> = Vec::new();
    for u in utterances {
        let grams = trigrams(u);
        let similar = kept.iter().any(|(_, k)| {
            let union = k.union(&grams).count();
            union == 0 || k.intersection(&grams).count() as f64 / union as f64 >= threshold
        });
        if !similar {
            kept.push((u.clone(), grams));
        }
    }
    kept.into_iter().map(|(u, _)| u).collect()
}

/// Collects everything said by players holding `role`, in log order, and
/// drops exact and near duplicates.
pub fn build_candidate_pool(
    human_logs: &[GameRecord],
    role: Role,
    threshold: f64,
) -> Result<CandidatePool, AgentError> {
    if !human_logs.iter().any(|r| r.roles.values().any(|&x| x == role)) {
        return Err(AgentError::NoSuchRoleInLogs(role));
    }
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for record in human_logs {
        for e in &record.events {
            if let EventKind::Talk { speaker, text } = &e.kind {
                if record.role_of(*speaker) == role && seen.insert(text.clone()) {
                    raw.push(text.clone());
                }
            }
        }
    }
    Ok(CandidatePool::new(role, dedup_candidates(&raw, threshold)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnPolicyParams {
    pub k_day1: usize,
    pub k_day2: usize,
}

impl Default for TurnPolicyParams {
    fn default() -> Self {
        TurnPolicyParams { k_day1: 3, k_day2: 1 }
    }
}

impl TurnPolicyParams {
    pub fn new(k_day1: usize, k_day2: usize) -> Option<Self> {
        (k_day1 >= 1 && k_day2 >= 1).then_some(TurnPolicyParams { k_day1, k_day2 })
    }

    pub fn k_for_day(&self, day: u8) -> usize {
        if day <= 1 {
            self.k_day1
        } else {
            self.k_day2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnDecision {
    Speak,
    SayOver,
    Wait,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    me: PlayerId,
    role: Role,
    said: HashSet<String>,
    viewpoint: ViewpointLog,
    params: TurnPolicyParams,
}

impl AgentState {
    pub fn new(me: PlayerId, role: Role) -> Self {
        AgentState {
            me,
            role,
            said: HashSet::new(),
            viewpoint: ViewpointLog::empty(me, role),
            params: TurnPolicyParams::default(),
        }
    }

    pub fn with_params(mut self, params: TurnPolicyParams) -> Self {
        self.params = params;
        self
    }

    pub fn me(&self) -> PlayerId {
        self.me
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn key(&self) -> OracleKey {
        OracleKey::from_parts(self.role, self.me)
    }

    pub fn said(&self) -> &HashSet<String> {
        &self.said
    }

    pub fn params(&self) -> TurnPolicyParams {
        self.params
    }

    pub fn viewpoint(&self) -> &ViewpointLog {
        &self.viewpoint
    }

    /// Refreshes the agent's masked view from the full event log.
    pub fn observe(&mut self, events: &[Event]) {
        self.viewpoint = project_events(events, self.me, self.role, None);
    }
}

fn alive_after(events: &[Event]) -> BTreeSet<PlayerId> {
    let mut alive: BTreeSet<PlayerId> = PlayerId::all().collect();
    for e in events {
        if let EventKind::Expel { target } | EventKind::Attack { target } = e.kind {
            alive.remove(&target);
        }
    }
    alive
}

/// Talk-phase timing. `events` is the game's event log so far.
pub fn should_act(agent: &AgentState, phase: Phase, events: &[Event]) -> TurnDecision {
    if !phase.is_talk() {
        return TurnDecision::Wait;
    }
    let alive = alive_after(events);
    if !alive.contains(&agent.me) {
        return TurnDecision::Wait;
    }
    let day = phase.day();
    let today: Vec<&Event> = events.iter().filter(|e| e.day == day).collect();
    let over: HashSet<PlayerId> = today
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Over { speaker } => Some(speaker),
            _ => None,
        })
        .collect();
    if over.contains(&agent.me) {
        return TurnDecision::Wait;
    }
    let others: Vec<PlayerId> = alive.iter().copied().filter(|&p| p != agent.me).collect();
    if !others.is_empty() && others.iter().all(|p| over.contains(p)) {
        return TurnDecision::SayOver;
    }
    let since = today
        .iter()
        .rposition(|e| matches!(&e.kind, EventKind::Talk { speaker, .. } if *speaker == agent.me))
        .map_or(0, |i| i + 1);
    let talkers: HashSet<PlayerId> = today[since..]
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Talk { speaker, .. } if *speaker != agent.me => Some(*speaker),
            _ => None,
        })
        .collect();
    if talkers.len() >= agent.params.k_for_day(day) {
        TurnDecision::Speak
    } else {
        TurnDecision::Wait
    }
}

/// Index of the first maximum; NaN never wins.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_nan() && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Scores every candidate not already ruled out and returns the best one.
/// `scorer` maps `(log, candidate lines)` to one value per line; any
/// strictly increasing transform of it selects the same action.
pub fn choose_action_with<F>(
    agent: &mut AgentState,
    candidates: &[CandidateAction],
    mut scorer: F,
) -> Result<CandidateAction, AgentError>
where
    F: FnMut(&str, &[String]) -> Result<Vec<f64>, AgentError>,
{
    let open: Vec<&CandidateAction> = candidates
        .iter()
        .filter(|c| !matches!(c, CandidateAction::Utterance(u) if agent.said.contains(u)))
        .collect();
    if open.is_empty() {
        return Err(AgentError::NoCandidates);
    }
    let lines: Vec<String> = open.iter().map(|c| render_candidate(agent.me, c)).collect();
    let scores = scorer(&agent.viewpoint.text(), &lines)?;
    let best = argmax(&scores).ok_or(AgentError::NoCandidates)?;
    let chosen = open[best].clone();
    if let CandidateAction::Utterance(u) = &chosen {
        agent.said.insert(u.clone());
    }
    Ok(chosen)
}

pub fn choose_action(
    agent: &mut AgentState,
    candidates: &[CandidateAction],
    oracle: &dyn ValueOracle,
) -> Result<CandidateAction, AgentError> {
    choose_action_with(agent, candidates, |log, lines| {
        Ok(oracle.score_batch(log, lines)?.into_iter().map(f64::from).collect())
    })
}

/// The candidates the current phase offers this agent, or `None` when it
/// has nothing to do (or should wait in a talk phase).
pub fn phase_candidates(
    agent: &AgentState,
    state: &GameState,
    pool: &CandidatePool,
) -> Option<Vec<CandidateAction>> {
    let me = agent.me;
    let legal = state.legal_actions(me);
    if legal.is_empty() {
        return None;
    }
    let phase = state.phase();
    if phase.is_talk() {
        return match should_act(agent, phase, state.events()) {
            TurnDecision::Wait => None,
            TurnDecision::SayOver => Some(vec![CandidateAction::OverSignal]),
            TurnDecision::Speak => Some(
                pool.utterances()
                    .iter()
                    .cloned()
                    .map(CandidateAction::Utterance)
                    .collect(),
            ),
        };
    }
    let wanted = |a: &LegalAction| match phase {
        Phase::Day1Vote | Phase::Day2Vote => matches!(a, LegalAction::Vote(_)),
        Phase::Day0Divine | Phase::Night1 => {
            matches!(a, LegalAction::Divine(_) | LegalAction::Attack(_))
        }
        _ => false,
    };
    let out: Vec<CandidateAction> = legal
        .into_iter()
        .filter(wanted)
        .filter_map(CandidateAction::from_legal)
        .collect();
    (!out.is_empty()).then_some(out)
}

/// Decides what the agent does now, or `None` if it waits. An exhausted
/// utterance pool turns into Over; a mandatory action with no candidate
/// left is drawn uniformly from the legal targets.
pub fn decision_for_phase<R: Rng + ?Sized>(
    agent: &mut AgentState,
    state: &GameState,
    pool: &CandidatePool,
    oracle: &dyn ValueOracle,
    rng: &mut R,
) -> Result<Option<CandidateAction>, AgentError> {
    agent.observe(state.events());
    let Some(candidates) = phase_candidates(agent, state, pool) else {
        return Ok(None);
    };
    match choose_action(agent, &candidates, oracle) {
        Ok(c) => Ok(Some(c)),
        Err(AgentError::NoCandidates) if state.phase().is_talk() => Ok(Some(CandidateAction::OverSignal)),
        Err(AgentError::NoCandidates) => Ok(candidates.choose(rng).cloned()),
        Err(e) => Err(e),
    }
}

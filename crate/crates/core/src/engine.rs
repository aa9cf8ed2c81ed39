//! Rules engine for five-player Werewolf (two villagers, one seer, one
//! betrayer, one werewolf).
//!
//! The engine is a pure state machine. Callers feed it player actions as
//! [`EventKind`] values through [`GameState::apply_event`]; it validates them,
//! appends them to the event log together with any consequences (expulsions,
//! night resolution, divination results, game end) and advances the phase.
//! Randomness (role assignment, vote tie-breaks, timeout defaults) is drawn
//! from seeded ChaCha streams so that a `(config, actions)` pair always yields
//! the same log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_PLAYERS: u8 = 5;

const ROLE_STREAM: u64 = 0;
const TIEBREAK_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid game config: {0}")]
    Config(String),
    #[error("illegal event: {0}")]
    IllegalEvent(String),
    #[error("no votes to tally")]
    EmptyVotes,
    #[error("missing night action: {0}")]
    MissingNightAction(String),
    #[error("player number {0} out of range 1..=5")]
    BadPlayer(i64),
}

fn illegal(reason: impl Into<String>) -> EngineError {
    EngineError::IllegalEvent(reason.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Villager,
    Seer,
    Betrayer,
    Werewolf,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Villager, Role::Seer, Role::Betrayer, Role::Werewolf];

    pub fn side(self) -> Side {
        match self {
            Role::Villager | Role::Seer => Side::Villager,
            Role::Betrayer | Role::Werewolf => Side::Werewolf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Villager => "villager",
            Role::Seer => "seer",
            Role::Betrayer => "betrayer",
            Role::Werewolf => "werewolf",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Villager,
    Werewolf,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Villager => "villager",
            Side::Werewolf => "werewolf",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} side", self.as_str())
    }
}

/// Seat number 1..=5. Rendered as `#<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PlayerId(u8);

impl PlayerId {
    pub fn new(n: u8) -> Result<Self, EngineError> {
        if (1..=NUM_PLAYERS).contains(&n) {
            Ok(PlayerId(n))
        } else {
            Err(EngineError::BadPlayer(n as i64))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// All five seats in ascending order.
    pub fn all() -> impl Iterator<Item = PlayerId> {
        (1..=NUM_PLAYERS).map(PlayerId)
    }
}

impl TryFrom<u8> for PlayerId {
    type Error = EngineError;
    fn try_from(n: u8) -> Result<Self, Self::Error> {
        PlayerId::new(n)
    }
}

impl From<PlayerId> for u8 {
    fn from(p: PlayerId) -> u8 {
        p.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Day0Divine,
    Night0,
    Day1Talk,
    Day1Vote,
    Night1,
    Day2Talk,
    Day2Vote,
    Finished(Side),
}

impl Phase {
    pub fn day(self) -> u8 {
        match self {
            Phase::Day0Divine | Phase::Night0 => 0,
            Phase::Day1Talk | Phase::Day1Vote | Phase::Night1 => 1,
            Phase::Day2Talk | Phase::Day2Vote | Phase::Finished(_) => 2,
        }
    }

    pub fn is_talk(self) -> bool {
        matches!(self, Phase::Day1Talk | Phase::Day2Talk)
    }

    pub fn is_vote(self) -> bool {
        matches!(self, Phase::Day1Vote | Phase::Day2Vote)
    }

    pub fn is_night(self) -> bool {
        matches!(self, Phase::Night0 | Phase::Night1)
    }

    /// Position in the fixed phase order; `Finished` sorts last.
    pub fn ordinal(self) -> u8 {
        match self {
            Phase::Day0Divine => 0,
            Phase::Night0 => 1,
            Phase::Day1Talk => 2,
            Phase::Day1Vote => 3,
            Phase::Night1 => 4,
            Phase::Day2Talk => 5,
            Phase::Day2Vote => 6,
            Phase::Finished(_) => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Day0Divine => "day0_divine",
            Phase::Night0 => "night0",
            Phase::Day1Talk => "day1_talk",
            Phase::Day1Vote => "day1_vote",
            Phase::Night1 => "night1",
            Phase::Day2Talk => "day2_talk",
            Phase::Day2Vote => "day2_vote",
            Phase::Finished(_) => "finished",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Finished(side) => write!(f, "finished ({side} won)"),
            other => f.write_str(other.name()),
        }
    }
}

pub type RoleMap = BTreeMap<PlayerId, Role>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GameConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_assignment: Option<RoleMap>,
}

impl GameConfig {
    pub fn seeded(seed: u64) -> Self {
        GameConfig { seed, role_assignment: None }
    }

    pub fn with_roles(seed: u64, roles: RoleMap) -> Self {
        GameConfig { seed, role_assignment: Some(roles) }
    }
}

/// Checks that `roles` covers all five seats with the fixed role multiset.
pub fn validate_roles(roles: &RoleMap) -> Result<(), EngineError> {
    if roles.len() != NUM_PLAYERS as usize {
        return Err(EngineError::Config(format!(
            "role assignment covers {} seats, expected 5",
            roles.len()
        )));
    }
    let count = |r: Role| roles.values().filter(|&&x| x == r).count();
    let expected = [
        (Role::Villager, 2),
        (Role::Seer, 1),
        (Role::Betrayer, 1),
        (Role::Werewolf, 1),
    ];
    for (role, n) in expected {
        if count(role) != n {
            return Err(EngineError::Config(format!(
                "expected {n} {role}(s), found {}",
                count(role)
            )));
        }
    }
    Ok(())
}

/// Draws the role assignment for `seed` (uniform over the 60 distinct
/// assignments).
pub fn assign_roles(seed: u64) -> RoleMap {
    let mut rng = stream_rng(seed, ROLE_STREAM);
    let mut deck = [
        Role::Villager,
        Role::Villager,
        Role::Seer,
        Role::Betrayer,
        Role::Werewolf,
    ];
    deck.shuffle(&mut rng);
    PlayerId::all().zip(deck).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Talk { speaker: PlayerId, text: String },
    Over { speaker: PlayerId },
    Vote { voter: PlayerId, target: PlayerId },
    Expel { target: PlayerId },
    Attack { target: PlayerId },
    DivineChoice { seer: PlayerId, target: PlayerId },
    DivineResult { seer: PlayerId, target: PlayerId, is_werewolf: bool },
    GameEnd { winner: Side },
}

impl EventKind {
    /// True for kinds a player submits; the rest are produced by the engine.
    pub fn is_player_action(&self) -> bool {
        matches!(
            self,
            EventKind::Talk { .. }
                | EventKind::Over { .. }
                | EventKind::Vote { .. }
                | EventKind::Attack { .. }
                | EventKind::DivineChoice { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub day: u8,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(day: u8, kind: EventKind) -> Self {
        Event { day, kind }
    }
}

/// One concrete legal move for a seat. Talk carries no text; any non-empty
/// single-line text is acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LegalAction {
    Talk,
    Over,
    Vote(PlayerId),
    Divine(PlayerId),
    Attack(PlayerId),
}

#[derive(Debug, Clone)]
pub struct GameState {
    config: GameConfig,
    phase: Phase,
    roles: RoleMap,
    alive: BTreeSet<PlayerId>,
    events: Vec<Event>,
    pending_votes: BTreeMap<PlayerId, PlayerId>,
    pending_divine: Option<PlayerId>,
    pending_attack: Option<PlayerId>,
    divined_targets: BTreeSet<PlayerId>,
    divined_today: bool,
    over: BTreeSet<PlayerId>,
    tiebreak_hint: Option<PlayerId>,
    rng: ChaCha8Rng,
}

impl GameState {
    pub fn new(config: GameConfig) -> Result<Self, EngineError> {
        let roles = match &config.role_assignment {
            Some(roles) => {
                validate_roles(roles)?;
                roles.clone()
            }
            None => assign_roles(config.seed),
        };
        let rng = stream_rng(config.seed, TIEBREAK_STREAM);
        Ok(GameState {
            config,
            phase: Phase::Day0Divine,
            roles,
            alive: PlayerId::all().collect(),
            events: Vec::new(),
            pending_votes: BTreeMap::new(),
            pending_divine: None,
            pending_attack: None,
            divined_targets: BTreeSet::new(),
            divined_today: false,
            over: BTreeSet::new(),
            tiebreak_hint: None,
            rng,
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn day(&self) -> u8 {
        self.phase.day()
    }

    pub fn roles(&self) -> &RoleMap {
        &self.roles
    }

    pub fn role_of(&self, p: PlayerId) -> Role {
        self.roles[&p]
    }

    pub fn alive(&self) -> &BTreeSet<PlayerId> {
        &self.alive
    }

    pub fn is_alive(&self, p: PlayerId) -> bool {
        self.alive.contains(&p)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn pending_votes(&self) -> &BTreeMap<PlayerId, PlayerId> {
        &self.pending_votes
    }

    pub fn pending_divine(&self) -> Option<PlayerId> {
        self.pending_divine
    }

    pub fn pending_attack(&self) -> Option<PlayerId> {
        self.pending_attack
    }

    pub fn divined_targets(&self) -> &BTreeSet<PlayerId> {
        &self.divined_targets
    }

    /// Seats that have emitted Over in the current talk phase.
    pub fn over_set(&self) -> &BTreeSet<PlayerId> {
        &self.over
    }

    pub fn has_divined_today(&self) -> bool {
        self.divined_today
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Finished(_))
    }

    pub fn winner(&self) -> Option<Side> {
        match self.phase {
            Phase::Finished(side) => Some(side),
            _ => None,
        }
    }

    pub fn player_with(&self, role: Role) -> Option<PlayerId> {
        self.roles.iter().find(|(_, &r)| r == role).map(|(&p, _)| p)
    }

    /// When the next vote tally is tied and `p` is among the leaders, expel
    /// `p` instead of drawing. The random draw is still consumed, so the
    /// tie-break stream stays aligned with an unhinted run.
    pub fn set_tiebreak_hint(&mut self, p: Option<PlayerId>) {
        self.tiebreak_hint = p;
    }

    fn seer_can_divine(&self, player: PlayerId) -> bool {
        self.role_of(player) == Role::Seer
            && self.is_alive(player)
            && !self.divined_today
            && matches!(
                self.phase,
                Phase::Day0Divine | Phase::Day1Talk | Phase::Day1Vote | Phase::Night1
            )
    }

    fn other_alive(&self, player: PlayerId) -> impl Iterator<Item = PlayerId> + '_ {
        self.alive.iter().copied().filter(move |&p| p != player)
    }

    /// Every move `player` may make right now. Dead or out-of-phase players
    /// get an empty list.
    pub fn legal_actions(&self, player: PlayerId) -> Vec<LegalAction> {
        let mut out = Vec::new();
        if !self.is_alive(player) || self.is_finished() {
            return out;
        }
        if self.phase.is_talk() && !self.over.contains(&player) {
            out.push(LegalAction::Talk);
            out.push(LegalAction::Over);
        }
        if self.phase.is_vote() && !self.pending_votes.contains_key(&player) {
            out.extend(self.other_alive(player).map(LegalAction::Vote));
        }
        if self.seer_can_divine(player) {
            out.extend(self.other_alive(player).map(LegalAction::Divine));
        }
        if self.phase == Phase::Night1
            && self.role_of(player) == Role::Werewolf
            && self.pending_attack.is_none()
        {
            out.extend(self.other_alive(player).map(LegalAction::Attack));
        }
        out
    }

    /// Seats whose input the current phase is still waiting on.
    pub fn awaiting(&self) -> Vec<PlayerId> {
        match self.phase {
            Phase::Day0Divine => self.player_with(Role::Seer).into_iter().collect(),
            Phase::Day1Talk | Phase::Day2Talk => self
                .alive
                .iter()
                .copied()
                .filter(|p| !self.over.contains(p))
                .collect(),
            Phase::Day1Vote | Phase::Day2Vote => self
                .alive
                .iter()
                .copied()
                .filter(|p| !self.pending_votes.contains_key(p))
                .collect(),
            Phase::Night1 => {
                let mut v = Vec::new();
                if self.pending_attack.is_none() {
                    v.extend(self.player_with(Role::Werewolf));
                }
                if let Some(seer) = self.player_with(Role::Seer) {
                    if self.seer_can_divine(seer) {
                        v.push(seer);
                    }
                }
                v
            }
            Phase::Night0 | Phase::Finished(_) => Vec::new(),
        }
    }

    /// Validates and applies one player action, returning every event it
    /// appended (the action itself plus any consequences).
    pub fn apply_event(&mut self, event: Event) -> Result<&[Event], EngineError> {
        if event.day != self.day() {
            return Err(illegal(format!(
                "event is stamped day {} but the game is on day {}",
                event.day,
                self.day()
            )));
        }
        self.apply(event.kind)
    }

    /// Like [`apply_event`](Self::apply_event), stamping the current day.
    pub fn apply(&mut self, kind: EventKind) -> Result<&[Event], EngineError> {
        let start = self.events.len();
        self.validate(&kind)?;
        let day = self.day();
        match kind {
            EventKind::Talk { speaker, text } => {
                self.push(day, EventKind::Talk { speaker, text });
            }
            EventKind::Over { speaker } => {
                self.push(day, EventKind::Over { speaker });
                self.over.insert(speaker);
                if self.over.len() == self.alive.len() {
                    self.over.clear();
                    self.phase = match self.phase {
                        Phase::Day1Talk => Phase::Day1Vote,
                        _ => Phase::Day2Vote,
                    };
                }
            }
            EventKind::Vote { voter, target } => {
                self.push(day, EventKind::Vote { voter, target });
                self.pending_votes.insert(voter, target);
                if self.pending_votes.len() == self.alive.len() {
                    self.finish_vote()?;
                }
            }
            EventKind::DivineChoice { seer, target } => {
                self.push(day, EventKind::DivineChoice { seer, target });
                self.pending_divine = Some(target);
                self.divined_today = true;
                if self.phase == Phase::Day0Divine {
                    self.phase = Phase::Night0;
                    self.resolve_night()?;
                } else if self.phase == Phase::Night1 && self.pending_attack.is_some() {
                    self.resolve_night()?;
                }
            }
            EventKind::Attack { target } => {
                self.pending_attack = Some(target);
                let seer_waiting = self
                    .player_with(Role::Seer)
                    .is_some_and(|s| self.seer_can_divine(s));
                if !seer_waiting {
                    self.resolve_night()?;
                }
            }
            EventKind::Expel { .. } | EventKind::DivineResult { .. } | EventKind::GameEnd { .. } => {
                unreachable!("rejected by validate")
            }
        }
        Ok(&self.events[start..])
    }

    fn validate(&self, kind: &EventKind) -> Result<(), EngineError> {
        if self.is_finished() {
            return Err(illegal("game is finished"));
        }
        let actor_alive = |p: PlayerId| {
            if self.is_alive(p) {
                Ok(())
            } else {
                Err(illegal(format!("{p} is not alive")))
            }
        };
        let target_ok = |actor: PlayerId, t: PlayerId| {
            if actor == t {
                Err(illegal(format!("{actor} cannot target themself")))
            } else if !self.is_alive(t) {
                Err(illegal(format!("target {t} is not alive")))
            } else {
                Ok(())
            }
        };
        match kind {
            EventKind::Talk { speaker, text } => {
                actor_alive(*speaker)?;
                if !self.phase.is_talk() {
                    return Err(illegal(format!("talk is not allowed in {}", self.phase)));
                }
                if self.over.contains(speaker) {
                    return Err(illegal(format!("{speaker} already said Over today")));
                }
                validate_talk_text(text)?;
            }
            EventKind::Over { speaker } => {
                actor_alive(*speaker)?;
                if !self.phase.is_talk() {
                    return Err(illegal(format!("over is not allowed in {}", self.phase)));
                }
                if self.over.contains(speaker) {
                    return Err(illegal(format!("{speaker} already said Over today")));
                }
            }
            EventKind::Vote { voter, target } => {
                actor_alive(*voter)?;
                if !self.phase.is_vote() {
                    return Err(illegal(format!("voting is not allowed in {}", self.phase)));
                }
                if self.pending_votes.contains_key(voter) {
                    return Err(illegal(format!("{voter} already voted")));
                }
                target_ok(*voter, *target)?;
            }
            EventKind::DivineChoice { seer, target } => {
                actor_alive(*seer)?;
                if self.role_of(*seer) != Role::Seer {
                    return Err(illegal(format!("{seer} is not the seer")));
                }
                if self.divined_today {
                    return Err(illegal("the seer already divined today"));
                }
                if !self.seer_can_divine(*seer) {
                    return Err(illegal(format!("divination is not allowed in {}", self.phase)));
                }
                target_ok(*seer, *target)?;
            }
            EventKind::Attack { target } => {
                if self.phase != Phase::Night1 {
                    return Err(illegal(format!("attack is not allowed in {}", self.phase)));
                }
                if self.pending_attack.is_some() {
                    return Err(illegal("attack already chosen tonight"));
                }
                let wolf = self
                    .player_with(Role::Werewolf)
                    .filter(|w| self.is_alive(*w))
                    .ok_or_else(|| illegal("no werewolf alive"))?;
                target_ok(wolf, *target)?;
            }
            EventKind::Expel { .. } | EventKind::DivineResult { .. } | EventKind::GameEnd { .. } => {
                return Err(illegal("expel, divine result and game end are produced by the engine"));
            }
        }
        Ok(())
    }

    fn push(&mut self, day: u8, kind: EventKind) {
        self.events.push(Event::new(day, kind));
    }

    fn finish_vote(&mut self) -> Result<(), EngineError> {
        let votes = std::mem::take(&mut self.pending_votes);
        let hint = self.tiebreak_hint.take();
        let expelled = tally_votes_hinted(&votes, &mut self.rng, hint)?;
        let day = self.day();
        self.alive.remove(&expelled);
        self.push(day, EventKind::Expel { target: expelled });
        if self.finish_if_won(day) {
            return Ok(());
        }
        self.phase = match self.phase {
            Phase::Day1Vote => Phase::Night1,
            other => unreachable!("vote finished in {other}; day 2 always ends the game"),
        };
        Ok(())
    }

    fn finish_if_won(&mut self, day: u8) -> bool {
        match check_win(&self.roles, &self.alive) {
            Some(side) => {
                self.push(day, EventKind::GameEnd { winner: side });
                self.phase = Phase::Finished(side);
                true
            }
            None => false,
        }
    }

    /// Resolves the current night. Night 0 delivers the day-0 divination;
    /// night 1 requires the werewolf's attack and delivers the divination
    /// result only if the seer survives the attack.
    pub fn resolve_night(&mut self) -> Result<&[Event], EngineError> {
        let start = self.events.len();
        match self.phase {
            Phase::Night0 => {
                let seer = self.player_with(Role::Seer).expect("seer exists");
                let target = self
                    .pending_divine
                    .take()
                    .ok_or_else(|| EngineError::MissingNightAction("day 0 divination".into()))?;
                self.deliver_divination(seer, target, 1);
                self.begin_day(Phase::Day1Talk);
            }
            Phase::Night1 => {
                let target = self
                    .pending_attack
                    .take()
                    .ok_or_else(|| EngineError::MissingNightAction("werewolf attack".into()))?;
                self.push(1, EventKind::Attack { target });
                self.alive.remove(&target);
                if !self.finish_if_won(1) {
                    let seer = self.player_with(Role::Seer).expect("seer exists");
                    if let Some(divined) = self.pending_divine.take() {
                        if self.is_alive(seer) {
                            self.deliver_divination(seer, divined, 2);
                        }
                    }
                    self.begin_day(Phase::Day2Talk);
                }
            }
            other => {
                return Err(EngineError::MissingNightAction(format!(
                    "cannot resolve night in {other}"
                )))
            }
        }
        Ok(&self.events[start..])
    }

    fn deliver_divination(&mut self, seer: PlayerId, target: PlayerId, day: u8) {
        let is_werewolf = self.role_of(target) == Role::Werewolf;
        self.divined_targets.insert(target);
        self.push(day, EventKind::DivineResult { seer, target, is_werewolf });
    }

    fn begin_day(&mut self, phase: Phase) {
        self.phase = phase;
        self.divined_today = false;
        self.pending_divine = None;
        self.over.clear();
    }

    /// Fills in whatever the current phase is still waiting for, as a phase
    /// timer would: stragglers say Over, missing votes and night targets are
    /// drawn uniformly at random. Night 1 then resolves without the seer's
    /// optional divination.
    pub fn auto_resolve(&mut self) -> Result<&[Event], EngineError> {
        let start = self.events.len();
        match self.phase {
            Phase::Day0Divine => {
                let seer = self.player_with(Role::Seer).expect("seer exists");
                let target = self.random_other(seer);
                self.apply(EventKind::DivineChoice { seer, target })?;
            }
            Phase::Day1Talk | Phase::Day2Talk => {
                for speaker in self.awaiting() {
                    self.apply(EventKind::Over { speaker })?;
                }
            }
            Phase::Day1Vote | Phase::Day2Vote => {
                for voter in self.awaiting() {
                    let target = self.random_other(voter);
                    self.apply(EventKind::Vote { voter, target })?;
                }
            }
            Phase::Night1 => {
                if self.pending_attack.is_none() {
                    let wolf = self.player_with(Role::Werewolf).expect("werewolf exists");
                    self.pending_attack = Some(self.random_other(wolf));
                }
                self.resolve_night()?;
            }
            Phase::Night0 => {
                self.resolve_night()?;
            }
            Phase::Finished(_) => {}
        }
        Ok(&self.events[start..])
    }

    fn random_other(&mut self, player: PlayerId) -> PlayerId {
        let others: Vec<PlayerId> = self.other_alive(player).collect();
        *others.choose(&mut self.rng).expect("at least one other player alive")
    }
}

/// Talk text must be a non-empty single line and must not be the reserved
/// Over signal.
pub fn validate_talk_text(text: &str) -> Result<(), EngineError> {
    if text.trim().is_empty() {
        return Err(illegal("talk text is empty"));
    }
    if text.contains('\n') || text.contains('\r') {
        return Err(illegal("talk text must be a single line"));
    }
    if text == crate::logfmt::OVER_TEXT {
        return Err(illegal("\"Over.\" is the Over signal, not talk"));
    }
    Ok(())
}

/// Plurality winner of `votes`; ties are broken uniformly at random.
pub fn tally_votes<R: rand::Rng + ?Sized>(
    votes: &BTreeMap<PlayerId, PlayerId>,
    rng: &mut R,
) -> Result<PlayerId, EngineError> {
    tally_votes_hinted(votes, rng, None)
}

fn tally_votes_hinted<R: rand::Rng + ?Sized>(
    votes: &BTreeMap<PlayerId, PlayerId>,
    rng: &mut R,
    hint: Option<PlayerId>,
) -> Result<PlayerId, EngineError> {
    if votes.is_empty() {
        return Err(EngineError::EmptyVotes);
    }
    let mut counts: BTreeMap<PlayerId, usize> = BTreeMap::new();
    for target in votes.values() {
        *counts.entry(*target).or_default() += 1;
    }
    let max = *counts.values().max().expect("non-empty");
    let leaders: Vec<PlayerId> = counts
        .iter()
        .filter(|(_, &c)| c == max)
        .map(|(&p, _)| p)
        .collect();
    if leaders.len() == 1 {
        return Ok(leaders[0]);
    }
    let drawn = *leaders.choose(rng).expect("non-empty");
    Ok(match hint {
        Some(h) if leaders.contains(&h) => h,
        _ => drawn,
    })
}

/// Villager side wins with no werewolf alive; werewolf side wins once alive
/// werewolves are at least the alive non-werewolves (betrayer included).
pub fn check_win(roles: &RoleMap, alive: &BTreeSet<PlayerId>) -> Option<Side> {
    let wolves = alive.iter().filter(|p| roles[p] == Role::Werewolf).count();
    let humans = alive.len() - wolves;
    if wolves == 0 {
        Some(Side::Villager)
    } else if wolves >= humans {
        Some(Side::Werewolf)
    } else {
        None
    }
}

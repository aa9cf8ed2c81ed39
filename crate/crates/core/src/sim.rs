//! Seat policies and a deterministic game driver.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{decision_for_phase, AgentError, AgentState, CandidatePool};
use crate::engine::{EngineError, EventKind, GameConfig, GameState, LegalAction, PlayerId, Role};
use crate::logfmt::GameRecord;
use crate::oracle::{OracleHandle, OracleRegistry};

const DRIVER_STREAM: u64 = 2;
/// Hard cap on driver iterations; a two-day game needs far fewer.
const MAX_STEPS: usize = 10_000;
/// Talk lines a scripted seat says per day before Over.
const SCRIPTED_TALK_PER_DAY: usize = 3;

const FALLBACK_CHATTER: &[&str] = &[
    "Good morning.",
    "I am a villager.",
    "Who do you suspect?",
    "I have no information yet.",
    "Let's think carefully before voting.",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("cannot load policy: {0}")]
    PolicyLoad(String),
    #[error("{policy} at {seat} made an illegal move: {source}")]
    IllegalMove {
        policy: String,
        seat: PlayerId,
        #[source]
        source: EngineError,
    },
    #[error("game did not finish within {0} driver steps")]
    Stalled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    /// The oracle-driven agent.
    Agent,
    #[serde(alias = "random")]
    RandomLegal,
    #[serde(alias = "scripted")]
    FirstCandidate,
}

impl PolicySpec {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicySpec::Agent => "agent",
            PolicySpec::RandomLegal => "random-legal",
            PolicySpec::FirstCandidate => "first-candidate",
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicySpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agent" => Ok(PolicySpec::Agent),
            "random" | "random-legal" => Ok(PolicySpec::RandomLegal),
            "scripted" | "first-candidate" => Ok(PolicySpec::FirstCandidate),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

/// Pools and oracles policies draw on.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub pools: HashMap<Role, CandidatePool>,
    pub oracles: OracleRegistry,
}

impl Resources {
    pub fn pool(&self, role: Role) -> CandidatePool {
        self.pools
            .get(&role)
            .cloned()
            .unwrap_or_else(|| CandidatePool::new(role, FALLBACK_CHATTER.iter().map(|s| s.to_string())))
    }

    /// Checks an agent can sit at `seat` whatever role it is dealt.
    pub fn check_agent_seat(&self, seat: PlayerId) -> Result<(), SimError> {
        for role in Role::ALL {
            let key = crate::oracle::OracleKey::from_parts(role, seat);
            self.oracles
                .lookup(key)
                .map_err(|e| SimError::PolicyLoad(e.to_string()))?;
            if !self.pools.contains_key(&role) {
                return Err(SimError::PolicyLoad(format!("no candidate pool for {role}")));
            }
        }
        Ok(())
    }
}

/// Something that plays one seat. `act` is called whenever the engine is
/// waiting on the seat; `None` means wait.
pub trait SeatPolicy: Send {
    fn name(&self) -> &str;
    fn act(&mut self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<Option<EventKind>, SimError>;
}

pub struct RandomLegal {
    seat: PlayerId,
    pool: CandidatePool,
    talked: (u8, usize),
}

impl RandomLegal {
    pub fn new(seat: PlayerId, pool: CandidatePool) -> Self {
        RandomLegal { seat, pool, talked: (0, 0) }
    }
}

impl SeatPolicy for RandomLegal {
    fn name(&self) -> &str {
        "random-legal"
    }

    fn act(&mut self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<Option<EventKind>, SimError> {
        let me = self.seat;
        let legal = state.legal_actions(me);
        if legal.is_empty() {
            return Ok(None);
        }
        if state.phase().is_talk() {
            if self.talked.0 != state.day() {
                self.talked = (state.day(), 0);
            }
            let talk = self.talked.1 < SCRIPTED_TALK_PER_DAY && !self.pool.is_empty() && rng.random_bool(0.5);
            if talk {
                self.talked.1 += 1;
                let text = self.pool.utterances().choose(rng).expect("non-empty").clone();
                return Ok(Some(EventKind::Talk { speaker: me, text }));
            }
            return Ok(Some(EventKind::Over { speaker: me }));
        }
        let targets: Vec<LegalAction> = legal
            .into_iter()
            .filter(|a| matches!(a, LegalAction::Vote(_) | LegalAction::Divine(_) | LegalAction::Attack(_)))
            .collect();
        Ok(targets.choose(rng).map(|a| legal_to_event(me, *a)))
    }
}

pub struct FirstCandidate {
    seat: PlayerId,
    pool: CandidatePool,
    next_line: usize,
    talked_day: Option<u8>,
}

impl FirstCandidate {
    pub fn new(seat: PlayerId, pool: CandidatePool) -> Self {
        FirstCandidate { seat, pool, next_line: 0, talked_day: None }
    }
}

impl SeatPolicy for FirstCandidate {
    fn name(&self) -> &str {
        "first-candidate"
    }

    fn act(&mut self, state: &GameState, _rng: &mut ChaCha8Rng) -> Result<Option<EventKind>, SimError> {
        let me = self.seat;
        let legal = state.legal_actions(me);
        if legal.is_empty() {
            return Ok(None);
        }
        if state.phase().is_talk() {
            if self.talked_day != Some(state.day()) {
                if let Some(text) = self.pool.utterances().get(self.next_line) {
                    self.talked_day = Some(state.day());
                    self.next_line += 1;
                    return Ok(Some(EventKind::Talk { speaker: me, text: text.clone() }));
                }
            }
            return Ok(Some(EventKind::Over { speaker: me }));
        }
        Ok(legal
            .into_iter()
            .find(|a| matches!(a, LegalAction::Vote(_) | LegalAction::Divine(_) | LegalAction::Attack(_)))
            .map(|a| legal_to_event(me, a)))
    }
}

pub struct DeepWolf {
    agent: AgentState,
    pool: CandidatePool,
    oracle: OracleHandle,
}

impl DeepWolf {
    pub fn new(agent: AgentState, pool: CandidatePool, oracle: OracleHandle) -> Self {
        DeepWolf { agent, pool, oracle }
    }

    pub fn agent(&self) -> &AgentState {
        &self.agent
    }
}

impl SeatPolicy for DeepWolf {
    fn name(&self) -> &str {
        "agent"
    }

    fn act(&mut self, state: &GameState, rng: &mut ChaCha8Rng) -> Result<Option<EventKind>, SimError> {
        let choice = decision_for_phase(&mut self.agent, state, &self.pool, self.oracle.as_ref(), rng)?;
        Ok(choice.map(|c| c.to_event(self.agent.me())))
    }
}

pub fn legal_to_event(me: PlayerId, action: LegalAction) -> EventKind {
    match action {
        LegalAction::Vote(t) => EventKind::Vote { voter: me, target: t },
        LegalAction::Divine(t) => EventKind::DivineChoice { seer: me, target: t },
        LegalAction::Attack(t) => EventKind::Attack { target: t },
        LegalAction::Over => EventKind::Over { speaker: me },
        LegalAction::Talk => unreachable!("talk needs text"),
    }
}

/// Builds the policy for `seat` once its role is known.
pub fn make_policy(
    spec: PolicySpec,
    seat: PlayerId,
    role: Role,
    resources: &Resources,
) -> Result<Box<dyn SeatPolicy>, SimError> {
    Ok(match spec {
        PolicySpec::RandomLegal => Box::new(RandomLegal::new(seat, resources.pool(role))),
        PolicySpec::FirstCandidate => Box::new(FirstCandidate::new(seat, resources.pool(role))),
        PolicySpec::Agent => {
            let key = crate::oracle::OracleKey::from_parts(role, seat);
            let oracle = resources
                .oracles
                .lookup(key)
                .map_err(|e| SimError::PolicyLoad(e.to_string()))?;
            let pool = resources
                .pools
                .get(&role)
                .cloned()
                .ok_or_else(|| SimError::PolicyLoad(format!("no candidate pool for {role}")))?;
            Box::new(DeepWolf::new(AgentState::new(seat, role), pool, oracle))
        }
    })
}

pub fn driver_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DRIVER_STREAM);
    rng
}

/// Offers the turn to waiting seats in rotating order. When a full pass
/// produces no action, the phase times out and the engine fills in the
/// rest.
pub fn drive(
    state: &mut GameState,
    policies: &mut [Box<dyn SeatPolicy>],
    rng: &mut ChaCha8Rng,
) -> Result<(), SimError> {
    assert_eq!(policies.len(), 5, "one policy per seat");
    let mut cursor = 0usize;
    for _ in 0..MAX_STEPS {
        if state.is_finished() {
            return Ok(());
        }
        let mut waiting = state.awaiting();
        waiting.sort_by_key(|p| (p.number() as usize + 5 - 1 - cursor) % 5);
        let mut acted = false;
        for seat in waiting {
            let policy = &mut policies[seat.number() as usize - 1];
            if let Some(kind) = policy.act(state, rng)? {
                state.apply(kind).map_err(|source| SimError::IllegalMove {
                    policy: policy.name().to_string(),
                    seat,
                    source,
                })?;
                cursor = seat.number() as usize % 5;
                acted = true;
                break;
            }
        }
        if !acted {
            state.auto_resolve()?;
        }
    }
    if state.is_finished() {
        Ok(())
    } else {
        Err(SimError::Stalled(MAX_STEPS))
    }
}

/// Plays one full game with the given seat policies.
pub fn play_game(
    config: GameConfig,
    seats: &[PolicySpec; 5],
    resources: &Resources,
) -> Result<GameRecord, SimError> {
    let mut state = GameState::new(config)?;
    let mut policies = PlayerId::all()
        .zip(seats.iter())
        .map(|(seat, spec)| make_policy(*spec, seat, state.role_of(seat), resources))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = driver_rng(state.config().seed);
    drive(&mut state, &mut policies, &mut rng)?;
    Ok(GameRecord::from_state(&state))
}

/// Same as [`play_game`] with caller-built policies.
pub fn play_game_with(
    config: GameConfig,
    policies: &mut [Box<dyn SeatPolicy>],
) -> Result<GameRecord, SimError> {
    let mut state = GameState::new(config)?;
    let mut rng = driver_rng(state.config().seed);
    drive(&mut state, policies, &mut rng)?;
    Ok(GameRecord::from_state(&state))
}

/// Per-game seed derived from a batch seed (splitmix64).
pub fn game_seed(batch_seed: u64, index: u64) -> u64 {
    let mut z = batch_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn shared(reg: OracleRegistry, pools: HashMap<Role, CandidatePool>) -> Arc<Resources> {
    Arc::new(Resources { pools, oracles: reg })
}

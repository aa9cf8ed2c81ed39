//! One live game: seats, turn timer and per-viewer broadcasts.

use std::collections::BTreeMap;
use std::time::{Duration, Instant, SystemTime};

use rand_chacha::ChaCha8Rng;

use super::wire::{NightKind, SeatKind, StatePayload, WireBody, WireMessage};
use super::ServerError;
use crate::engine::{EventKind, GameConfig, GameState, Phase, PlayerId};
use crate::logfmt::{project_events, GameRecord};
use crate::sim::{driver_rng, make_policy, Resources, SeatPolicy};

/// A message for one seat of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: PlayerId,
    pub msg: WireMessage,
}

enum Seat {
    Human { joined: bool, last_sent: Option<StatePayload> },
    Agent(Box<dyn SeatPolicy>),
}

pub struct Session {
    id: String,
    state: GameState,
    seats: BTreeMap<PlayerId, Seat>,
    created_at: SystemTime,
    rng: ChaCha8Rng,
    phase_timeout: Duration,
    phase_started: Instant,
    timer_phase: Phase,
    archived: bool,
}

impl Session {
    pub fn new(
        id: String,
        config: GameConfig,
        plan: &[SeatKind],
        resources: &Resources,
        phase_timeout: Duration,
    ) -> Result<Self, ServerError> {
        if plan.len() != 5 {
            return Err(ServerError::BadSeatPlan(format!("{} seats, need 5", plan.len())));
        }
        let state = GameState::new(config).map_err(|e| ServerError::BadSeatPlan(e.to_string()))?;
        let mut seats = BTreeMap::new();
        for (seat, kind) in PlayerId::all().zip(plan) {
            let s = match kind {
                SeatKind::Human => Seat::Human { joined: false, last_sent: None },
                SeatKind::Bot(spec) => Seat::Agent(
                    make_policy(*spec, seat, state.role_of(seat), resources)
                        .map_err(|e| ServerError::BadSeatPlan(e.to_string()))?,
                ),
            };
            seats.insert(seat, s);
        }
        let rng = driver_rng(state.config().seed);
        let timer_phase = state.phase();
        let mut session = Session {
            id,
            state,
            seats,
            created_at: SystemTime::now(),
            rng,
            phase_timeout,
            phase_started: Instant::now(),
            timer_phase,
            archived: false,
        };
        session.after_change();
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn created_at(&self) -> SystemTime {
        self.created_at
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_finished()
    }

    pub fn is_archived(&self) -> bool {
        self.archived
    }

    pub(crate) fn mark_archived(&mut self) {
        self.archived = true;
    }

    pub fn record(&self) -> GameRecord {
        GameRecord::from_state(&self.state)
    }

    pub fn human_seats(&self) -> Vec<PlayerId> {
        self.seats
            .iter()
            .filter(|(_, s)| matches!(s, Seat::Human { .. }))
            .map(|(p, _)| *p)
            .collect()
    }

    /// What `player` is allowed to see right now.
    pub fn state_for(&self, player: PlayerId) -> StatePayload {
        let view = project_events(self.state.events(), player, self.state.role_of(player), None);
        StatePayload {
            phase: self.state.phase().name().to_string(),
            day: self.state.day(),
            alive: self.state.alive().iter().copied().collect(),
            you: player,
            your_role: self.state.role_of(player),
            lines: view.lines,
        }
    }

    /// Seats a human; the caller has already checked the token.
    pub fn join(&mut self, player: PlayerId) -> Vec<Outbound> {
        if let Some(Seat::Human { joined, last_sent }) = self.seats.get_mut(&player) {
            *joined = true;
            *last_sent = None;
        }
        self.broadcast()
    }

    /// Validates and applies one seat's message. A rejection leaves the
    /// game untouched and answers the sender only.
    pub fn handle_inbound(&mut self, player: PlayerId, body: WireBody) -> Vec<Outbound> {
        match self.try_apply(player, body) {
            Ok(()) => {
                self.after_change();
                self.broadcast()
            }
            Err(reason) => vec![Outbound { to: player, msg: self.envelope(player, WireBody::Error { reason }) }],
        }
    }

    fn try_apply(&mut self, player: PlayerId, body: WireBody) -> Result<(), String> {
        if !matches!(self.seats.get(&player), Some(Seat::Human { joined: true, .. })) {
            return Err("not your seat".into());
        }
        if self.state.is_finished() {
            return Err("game over".into());
        }
        let phase = self.state.phase();
        let (kind, phase_ok) = match body {
            WireBody::Talk { text } => (EventKind::Talk { speaker: player, text }, phase.is_talk()),
            WireBody::Over {} => (EventKind::Over { speaker: player }, phase.is_talk()),
            WireBody::Vote { target } => (EventKind::Vote { voter: player, target }, phase.is_vote()),
            WireBody::NightAction { kind: NightKind::Divine, target } => (
                EventKind::DivineChoice { seer: player, target },
                matches!(phase, Phase::Day0Divine | Phase::Day1Talk | Phase::Day1Vote | Phase::Night1),
            ),
            WireBody::NightAction { kind: NightKind::Attack, target } => {
                (EventKind::Attack { target }, phase == Phase::Night1)
            }
            _ => return Err("unexpected message".into()),
        };
        if !self.state.is_alive(player) {
            return Err("not alive".into());
        }
        if !phase_ok {
            return Err("wrong phase".into());
        }
        if let EventKind::Attack { .. } = kind {
            if self.state.role_of(player) != crate::engine::Role::Werewolf {
                return Err("not your action".into());
            }
        }
        self.state.apply(kind).map(|_| ()).map_err(|e| e.to_string())
    }

    /// Fires the phase timer if it has run out.
    pub fn tick(&mut self, now: Instant) -> Vec<Outbound> {
        if self.state.is_finished() || now.duration_since(self.phase_started) < self.phase_timeout {
            return Vec::new();
        }
        if let Err(e) = self.state.auto_resolve() {
            log::warn!("session {}: timer resolution failed: {e}", self.id);
            return Vec::new();
        }
        self.after_change();
        self.broadcast()
    }

    /// Expires the current phase immediately, as if the timer ran out.
    pub fn expire_phase(&mut self) -> Vec<Outbound> {
        self.phase_started = Instant::now() - self.phase_timeout;
        self.tick(Instant::now())
    }

    fn after_change(&mut self) {
        self.run_agents();
        if self.state.phase() != self.timer_phase {
            self.timer_phase = self.state.phase();
            self.phase_started = Instant::now();
        }
    }

    /// Lets in-process agents act until none of them wants to.
    fn run_agents(&mut self) {
        loop {
            if self.state.is_finished() {
                return;
            }
            let mut acted = false;
            for seat in self.state.awaiting() {
                let Some(Seat::Agent(policy)) = self.seats.get_mut(&seat) else { continue };
                match policy.act(&self.state, &mut self.rng) {
                    Ok(Some(kind)) => match self.state.apply(kind) {
                        Ok(_) => {
                            acted = true;
                            break;
                        }
                        Err(e) => log::warn!("session {}: {} at {seat} rejected: {e}", self.id, policy.name()),
                    },
                    Ok(None) => {}
                    Err(e) => log::warn!("session {}: {} at {seat} failed: {e}", self.id, policy.name()),
                }
            }
            if !acted {
                return;
            }
        }
    }

    fn envelope(&self, to: PlayerId, body: WireBody) -> WireMessage {
        WireMessage::to(&self.id, to, body)
    }

    /// Sends each joined human its view if it changed, then `game_end`
    /// once the game is over.
    fn broadcast(&mut self) -> Vec<Outbound> {
        let mut out = Vec::new();
        let humans = self.human_seats();
        for seat in humans {
            let payload = self.state_for(seat);
            let Some(Seat::Human { joined: true, last_sent }) = self.seats.get_mut(&seat) else { continue };
            if last_sent.as_ref() == Some(&payload) {
                continue;
            }
            *last_sent = Some(payload.clone());
            out.push(Outbound { to: seat, msg: WireMessage::to(&self.id, seat, WireBody::State(payload)) });
            if let Some(winner) = self.state.winner() {
                out.push(Outbound { to: seat, msg: WireMessage::to(&self.id, seat, WireBody::GameEnd { winner }) });
            }
        }
        out
    }
}

//! Multi-session game service.
//!
//! Each session serializes its own mutations behind a mutex; sessions
//! progress independently. Finished games are written to the record store
//! as soon as they end.

mod net;
mod session;
mod wire;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

pub use net::{serve, spawn, ServerHandle};
pub use session::{Outbound, Session};
pub use wire::{NightKind, SeatKind, SeatToken, StatePayload, WireBody, WireMessage};

use crate::engine::{GameConfig, PlayerId};
use crate::logfmt::{save_record, LogError};
use crate::sim::Resources;

/// Default cap on any single phase.
pub const DEFAULT_PHASE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("bad seat plan: {0}")]
    BadSeatPlan(String),
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("invalid or used join token")]
    BadToken,
    #[error("session {0} is not finished")]
    NotFinished(String),
    #[error("storage: {0}")]
    Storage(#[from] LogError),
}

/// Writes finished records as `<session id>.log` / `.json`.
#[derive(Debug, Clone)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RecordStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn persist(&self, session: &Session) -> Result<PathBuf, ServerError> {
        if !session.is_finished() {
            return Err(ServerError::NotFinished(session.id().to_string()));
        }
        Ok(save_record(&self.dir, session.id(), &session.record())?)
    }
}

pub type Router = Arc<dyn Fn(&str, &Outbound) + Send + Sync>;

pub struct GameService {
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    tokens: Mutex<HashMap<String, (String, PlayerId)>>,
    resources: Arc<Resources>,
    store: Option<RecordStore>,
    phase_timeout: Duration,
    counter: AtomicU64,
    router: RwLock<Option<Router>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Created {
    pub session: String,
    pub tokens: Vec<SeatToken>,
}

impl GameService {
    pub fn new(resources: Arc<Resources>, store: Option<RecordStore>, phase_timeout: Duration) -> Self {
        GameService {
            sessions: Mutex::new(HashMap::new()),
            tokens: Mutex::new(HashMap::new()),
            resources,
            store,
            phase_timeout,
            counter: AtomicU64::new(0),
            router: RwLock::new(None),
        }
    }

    /// Installs the delivery callback. It runs while the session lock is
    /// held, so each seat sees its messages in order.
    pub fn set_router(&self, router: Router) {
        *self.router.write().expect("router lock") = Some(router);
    }

    pub fn create_session(&self, config: GameConfig, plan: &[SeatKind]) -> Result<Created, ServerError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n:04}-{:08x}", rand::rng().random::<u32>());
        let session = Session::new(id.clone(), config, plan, &self.resources, self.phase_timeout)?;
        let mut tokens = Vec::new();
        {
            let mut map = self.tokens.lock().expect("token lock");
            for player in session.human_seats() {
                let token = format!("{:016x}", rand::rng().random::<u64>());
                map.insert(token.clone(), (id.clone(), player));
                tokens.push(SeatToken { player, token });
            }
        }
        let session = Arc::new(Mutex::new(session));
        self.sessions.lock().expect("session lock").insert(id.clone(), session.clone());
        self.finish_if_done(&mut session.lock().expect("session lock"));
        Ok(Created { session: id, tokens })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServerError> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("session lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Redeems a join token; each token works once.
    pub fn join(&self, token: &str) -> Result<(String, PlayerId, Vec<Outbound>), ServerError> {
        let mut out = Vec::new();
        let (id, player) = self.redeem(token, |_, _| {}, &mut out)?;
        Ok((id, player, out))
    }

    /// [`GameService::join`] that calls `bind` with the seat before the
    /// first state message is delivered.
    pub fn join_with(
        &self,
        token: &str,
        bind: impl FnOnce(&str, PlayerId),
    ) -> Result<(String, PlayerId), ServerError> {
        self.redeem(token, bind, &mut Vec::new())
    }

    fn redeem(
        &self,
        token: &str,
        bind: impl FnOnce(&str, PlayerId),
        out: &mut Vec<Outbound>,
    ) -> Result<(String, PlayerId), ServerError> {
        let (id, player) = self.tokens.lock().expect("token lock").remove(token).ok_or(ServerError::BadToken)?;
        let session = self.session(&id)?;
        let mut s = session.lock().expect("session lock");
        bind(&id, player);
        *out = s.join(player);
        self.deliver(&id, out);
        Ok((id, player))
    }

    pub fn handle(&self, id: &str, player: PlayerId, body: WireBody) -> Result<Vec<Outbound>, ServerError> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session lock");
        let out = s.handle_inbound(player, body);
        self.deliver(id, &out);
        self.finish_if_done(&mut s);
        Ok(out)
    }

    /// Fires expired phase timers in every session.
    pub fn tick(&self, now: Instant) -> Vec<(String, Outbound)> {
        let sessions: Vec<_> = self.sessions.lock().expect("session lock").values().cloned().collect();
        let mut all = Vec::new();
        for session in sessions {
            let mut s = session.lock().expect("session lock");
            let out = s.tick(now);
            let id = s.id().to_string();
            self.deliver(&id, &out);
            self.finish_if_done(&mut s);
            all.extend(out.into_iter().map(|o| (id.clone(), o)));
        }
        all
    }

    pub fn persist_record(&self, id: &str) -> Result<PathBuf, ServerError> {
        let session = self.session(id)?;
        let s = session.lock().expect("session lock");
        let store = self
            .store
            .as_ref()
            .ok_or_else(|| ServerError::Storage(LogError::Io {
                path: PathBuf::new(),
                source: std::io::Error::other("no record store configured"),
            }))?;
        store.persist(&s)
    }

    fn deliver(&self, id: &str, out: &[Outbound]) {
        if let Some(router) = self.router.read().expect("router lock").as_ref() {
            for o in out {
                router(id, o);
            }
        }
    }

    fn finish_if_done(&self, s: &mut Session) {
        if !s.is_finished() || s.is_archived() {
            return;
        }
        if let Some(store) = &self.store {
            match store.persist(s) {
                Ok(path) => log::info!("session {} archived to {}", s.id(), path.display()),
                Err(e) => {
                    log::error!("session {}: {e}", s.id());
                    return;
                }
            }
        }
        s.mark_archived();
    }
}

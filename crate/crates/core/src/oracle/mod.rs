//! Win-probability oracles keyed by (role, seat number).
//!
//! Every oracle answers the same question: given a viewpoint log and the
//! line a candidate action would add, how likely is the viewer's side to
//! win? The native [`BaselineModel`] answers in-process; [`RemoteOracle`]
//! forwards to a model server speaking the `/v1/score` protocol.

mod baseline;
mod features;
mod remote;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{
    loss_and_gradient, mean_loss, sigmoid, train_baseline, BaselineModel, TrainParams, TrainReport,
};
pub use features::{
    dot, truncate_front, Featurizer, SparseVec, DEFAULT_DIM, DEFAULT_MAX_CHARS, MIN_DIM,
};
pub use remote::{
    remote_score, RemoteOracle, RemoteOptions, ScoreBatchRequest, ScoreBatchResponse, ScoreRequest,
    ScoreResponse, DEFAULT_DEADLINE,
};

use crate::engine::{EngineError, PlayerId, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no model loaded for {0}")]
    ModelMissing(OracleKey),
    #[error("training examples for {found} passed to the {expected} trainer")]
    KeyMismatch { expected: OracleKey, found: OracleKey },
    #[error("no training examples for {0}")]
    EmptyDataset(OracleKey),
    #[error("invalid key: {0}")]
    BadKey(#[from] EngineError),
    #[error("bad model: {0}")]
    BadModel(String),
    #[error("model i/o: {0}")]
    Io(String),
    #[error("oracle did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle unreachable: {0}")]
    Unreachable(String),
}

/// Selects one of the 20 value models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OracleKey {
    role: Role,
    player: PlayerId,
}

impl OracleKey {
    pub fn new(role: Role, player: u8) -> Result<Self, OracleError> {
        Ok(OracleKey { role, player: PlayerId::new(player)? })
    }

    pub fn from_parts(role: Role, player: PlayerId) -> Self {
        OracleKey { role, player }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn player(&self) -> PlayerId {
        self.player
    }

    /// All 20 keys, role-major.
    pub fn all() -> impl Iterator<Item = OracleKey> {
        Role::ALL
            .into_iter()
            .flat_map(|role| PlayerId::all().map(move |player| OracleKey { role, player }))
    }

    /// File name used under a models directory, e.g. `werewolf-3.bin`.
    pub fn file_name(&self) -> String {
        format!("{}-{}.bin", self.role, self.player.number())
    }
}

impl fmt::Display for OracleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.role, self.player)
    }
}

/// Probability that the viewer's side wins, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(p: f64) -> Result<Self, OracleError> {
        if p.is_finite() && (0.0..=1.0).contains(&p) {
            Ok(Score(p))
        } else {
            Err(OracleError::Protocol(format!("win probability {p} outside [0, 1]")))
        }
    }

    pub(crate) fn clamped(p: f64) -> Self {
        Score(if p.is_nan() { 0.5 } else { p.clamp(0.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = OracleError;
    fn try_from(p: f64) -> Result<Self, OracleError> {
        Score::new(p)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

pub trait ValueOracle: Send + Sync {
    fn key(&self) -> OracleKey;

    /// Scores the log followed by one candidate line.
    fn score(&self, log: &str, candidate: &str) -> Result<Score, OracleError>;

    fn score_batch(&self, log: &str, candidates: &[String]) -> Result<Vec<Score>, OracleError> {
        candidates.iter().map(|c| self.score(log, c)).collect()
    }
}

pub type OracleHandle = Arc<dyn ValueOracle>;

/// Loaded oracles by key. Lookups never fall back to another key.
#[derive(Clone, Default)]
pub struct OracleRegistry {
    models: HashMap<OracleKey, OracleHandle>,
}

impl fmt::Debug for OracleRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<_> = self.models.keys().collect();
        keys.sort();
        f.debug_struct("OracleRegistry").field("keys", &keys).finish()
    }
}

impl OracleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, oracle: OracleHandle) {
        self.models.insert(oracle.key(), oracle);
    }

    pub fn lookup(&self, key: OracleKey) -> Result<OracleHandle, OracleError> {
        self.models.get(&key).cloned().ok_or(OracleError::ModelMissing(key))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn keys(&self) -> Vec<OracleKey> {
        let mut keys: Vec<_> = self.models.keys().copied().collect();
        keys.sort();
        keys
    }

    /// Loads every `<role>-<n>.bin` present in `dir`; missing keys are left
    /// out and surface later as [`OracleError::ModelMissing`].
    pub fn load_dir(dir: &Path) -> Result<Self, OracleError> {
        let mut reg = Self::new();
        for key in OracleKey::all() {
            let path: PathBuf = dir.join(key.file_name());
            if path.exists() {
                let model = BaselineModel::load(&path)?;
                if model.key() != key {
                    return Err(OracleError::BadModel(format!(
                        "{} holds the model for {}",
                        path.display(),
                        model.key()
                    )));
                }
                reg.insert(Arc::new(model));
            }
        }
        Ok(reg)
    }

    /// Registers a remote oracle for all 20 keys, sharing one in-flight
    /// limit.
    pub fn remote(endpoint: &str, options: RemoteOptions) -> Self {
        let mut reg = Self::new();
        for oracle in RemoteOracle::for_all_keys(endpoint, options) {
            reg.insert(Arc::new(oracle));
        }
        reg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_keys() {
        let keys: Vec<_> = OracleKey::all().collect();
        assert_eq!(keys.len(), 20);
        let set: std::collections::HashSet<_> = keys.iter().collect();
        assert_eq!(set.len(), 20);
        assert!(OracleKey::new(Role::Villager, 6).is_err());
        assert!(OracleKey::new(Role::Villager, 0).is_err());
    }

    #[test]
    fn lookup_is_exact_and_stable() {
        let mut reg = OracleRegistry::new();
        let wolf3 = OracleKey::new(Role::Werewolf, 3).unwrap();
        reg.insert(Arc::new(BaselineModel::zeros(wolf3, MIN_DIM, vec![1]).unwrap()));
        let a = reg.lookup(wolf3).unwrap();
        let b = reg.lookup(wolf3).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.key(), wolf3);
        let seer3 = OracleKey::new(Role::Seer, 3).unwrap();
        assert_eq!(reg.lookup(seer3).err(), Some(OracleError::ModelMissing(seer3)));
    }

    #[test]
    fn score_range() {
        assert!(Score::new(0.42).is_ok());
        assert!(Score::new(1.7).is_err());
        assert!(Score::new(-0.1).is_err());
        assert!(Score::new(f64::NAN).is_err());
    }

    #[test]
    fn load_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let key = OracleKey::new(Role::Seer, 1).unwrap();
        let m = BaselineModel::zeros(key, MIN_DIM, vec![1, 2]).unwrap();
        m.save(&dir.path().join(key.file_name())).unwrap();
        let reg = OracleRegistry::load_dir(dir.path()).unwrap();
        assert_eq!(reg.keys(), vec![key]);
    }
}

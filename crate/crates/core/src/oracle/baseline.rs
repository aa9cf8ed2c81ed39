//! Native win-probability baseline: logistic regression over hashed n-gram
//! counts, trained with mini-batch SGD on mean binary cross-entropy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{dot, Featurizer, SparseVec, MIN_DIM};
use super::{OracleError, OracleKey, Score, ValueOracle};
use crate::augment::TrainingExample;
use crate::engine::Role;

const MAGIC: &[u8; 4] = b"DWBL";
const FORMAT_VERSION: u16 = 1;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of a logistic model over `batch` and its
/// gradient `(loss, d/dweights, d/dbias)`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    batch: &[(SparseVec, f64)],
) -> (f64, Vec<f64>, f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    let n = batch.len().max(1) as f64;
    for (x, y) in batch {
        let z = dot(weights, x) + bias;
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for &(i, v) in x {
            grad[i as usize] += r * v / n;
        }
        grad_b += r / n;
    }
    (loss / n, grad, grad_b)
}

pub fn mean_loss(weights: &[f64], bias: f64, data: &[(SparseVec, f64)]) -> f64 {
    let n = data.len().max(1) as f64;
    data.iter()
        .map(|(x, y)| {
            let z = dot(weights, x) + bias;
            softplus(z) - y * z
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    /// Step size in units of the training set's mean squared feature norm.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub ngram_orders: Vec<u8>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 5,
            learning_rate: 4.0,
            batch_size: 32,
            seed: 0,
            dim: super::features::DEFAULT_DIM,
            ngram_orders: vec![1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    key: OracleKey,
    featurizer: Featurizer,
    weights: Vec<f64>,
    bias: f64,
}

impl BaselineModel {
    /// A zero model (scores 0.5 everywhere).
    pub fn zeros(key: OracleKey, dim: usize, ngram_orders: Vec<u8>) -> Result<Self, OracleError> {
        Self::from_parts(key, dim, ngram_orders, vec![0.0; dim], 0.0)
    }

    pub fn from_parts(
        key: OracleKey,
        dim: usize,
        ngram_orders: Vec<u8>,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self, OracleError> {
        if dim < MIN_DIM || !dim.is_power_of_two() {
            return Err(OracleError::BadModel(format!(
                "dimension {dim} must be a power of two of at least {MIN_DIM}"
            )));
        }
        if weights.len() != dim {
            return Err(OracleError::BadModel(format!(
                "{} weights for dimension {dim}",
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(OracleError::BadModel("non-finite weight".into()));
        }
        Ok(BaselineModel { key, featurizer: Featurizer::new(dim, ngram_orders), weights, bias })
    }

    pub fn key(&self) -> OracleKey {
        self.key
    }

    pub fn dim(&self) -> usize {
        self.featurizer.dim
    }

    pub fn ngram_orders(&self) -> &[u8] {
        &self.featurizer.orders
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    /// `sigmoid(w · featurize(text) + b)`.
    pub fn score_text(&self, text: &str) -> Score {
        let x = self.featurizer.featurize(text);
        Score::clamped(sigmoid(dot(&self.weights, &x) + self.bias))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.weights.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(role_code(self.key.role()));
        out.push(self.key.player().number());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(self.featurizer.orders.len() as u8);
        out.extend_from_slice(&self.featurizer.orders);
        out.extend_from_slice(&self.bias.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OracleError> {
        let bad = |m: &str| OracleError::BadModel(m.to_string());
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?);
        if version != FORMAT_VERSION {
            return Err(OracleError::BadModel(format!("unsupported version {version}")));
        }
        let [role, player] = r.array().ok_or_else(|| bad("truncated header"))?;
        let role = role_from_code(role).ok_or_else(|| bad("bad role code"))?;
        let key = OracleKey::new(role, player)?;
        let dim = u32::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?) as usize;
        let [n_orders] = r.array().ok_or_else(|| bad("truncated header"))?;
        let orders = r.take(n_orders as usize).ok_or_else(|| bad("truncated header"))?.to_vec();
        let bias = f64::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?);
        if r.remaining() != dim * 8 {
            return Err(OracleError::BadModel(format!(
                "expected {} weight bytes, found {}",
                dim * 8,
                r.remaining()
            )));
        }
        let weights = (0..dim)
            .map(|_| f64::from_le_bytes(r.array().expect("length checked")))
            .collect();
        Self::from_parts(key, dim, orders, weights, bias)
    }

    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| OracleError::Io(e.to_string()))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| OracleError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let bytes = fs::read(path).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("exact length"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn role_code(role: Role) -> u8 {
    match role {
        Role::Villager => 0,
        Role::Seer => 1,
        Role::Betrayer => 2,
        Role::Werewolf => 3,
    }
}

fn role_from_code(code: u8) -> Option<Role> {
    Role::ALL.get(code as usize).copied()
}

impl ValueOracle for BaselineModel {
    fn key(&self) -> OracleKey {
        self.key
    }

    fn score(&self, log: &str, candidate: &str) -> Result<Score, OracleError> {
        let mut text = String::with_capacity(log.len() + candidate.len());
        text.push_str(log);
        text.push_str(candidate);
        Ok(self.score_text(&text))
    }
}

/// Trains the baseline for `key` on `examples` (all of which must carry
/// that key). The report holds the mean loss before and after training.
pub fn train_baseline(
    examples: &[TrainingExample],
    key: OracleKey,
    params: &TrainParams,
) -> Result<(BaselineModel, TrainReport), OracleError> {
    if examples.is_empty() {
        return Err(OracleError::EmptyDataset(key));
    }
    if let Some(bad) = examples.iter().find(|e| e.key != key) {
        return Err(OracleError::KeyMismatch { expected: key, found: bad.key });
    }
    let mut model = BaselineModel::zeros(key, params.dim, params.ngram_orders.clone())?;
    let data: Vec<(SparseVec, f64)> = examples
        .iter()
        .map(|e| (model.featurizer.featurize(&e.text), e.label as f64))
        .collect();
    // start at the smoothed log-odds of the labels so the mean prediction
    // matches the base rate before any weight has moved
    let positives: f64 = data.iter().map(|(_, y)| y).sum();
    let prior = (positives + 0.5) / (data.len() as f64 + 1.0);
    model.bias = (prior / (1.0 - prior)).ln();
    let initial_loss = mean_loss(&model.weights, model.bias, &data);

    let step = params.learning_rate / mean_sq_norm(&data).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = params.batch_size.max(1);
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            sgd_step(&mut model, &data, chunk, batch_size, step);
        }
    }
    let final_loss = mean_loss(&model.weights, model.bias, &data);
    Ok((model, TrainReport { initial_loss, final_loss, examples: data.len() }))
}

/// Mean of `|x|^2` plus one for the bias input. Count features of a whole
/// game log run to hundreds, so the step is taken relative to this.
fn mean_sq_norm(data: &[(SparseVec, f64)]) -> f64 {
    let total: f64 = data.iter().map(|(x, _)| 1.0 + x.iter().map(|(_, v)| v * v).sum::<f64>()).sum();
    total / data.len().max(1) as f64
}

/// One step on `batch`. Gradients are divided by the nominal batch size so
/// a short trailing batch takes a proportionally short step.
fn sgd_step(model: &mut BaselineModel, data: &[(SparseVec, f64)], batch: &[usize], batch_size: usize, lr: f64) {
    let n = batch_size as f64;
    let mut grad: BTreeMap<u32, f64> = BTreeMap::new();
    let mut grad_b = 0.0;
    for &i in batch {
        let (x, y) = &data[i];
        let r = sigmoid(dot(&model.weights, x) + model.bias) - y;
        for &(j, v) in x {
            *grad.entry(j).or_default() += r * v / n;
        }
        grad_b += r / n;
    }
    for (j, g) in grad {
        model.weights[j as usize] -= lr * g;
    }
    model.bias -= lr * grad_b;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PlayerId;

    fn key() -> OracleKey {
        OracleKey::from_parts(Role::Villager, PlayerId::new(2).unwrap())
    }

    fn ex(text: &str, label: u8) -> TrainingExample {
        TrainingExample { key: key(), text: text.into(), label }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = BaselineModel::zeros(key(), 1 << 12, vec![1, 2]).unwrap();
        assert_eq!(m.score_text("anything at all").value(), 0.5);
        assert_eq!(m.score("log\n", "#2) hi").unwrap().value(), 0.5);
    }

    #[test]
    fn small_or_odd_dims_rejected() {
        assert!(BaselineModel::zeros(key(), 64, vec![1]).is_err());
        assert!(BaselineModel::zeros(key(), 5000, vec![1]).is_err());
        let mut w = vec![0.0; 1 << 12];
        w[3] = f64::NAN;
        assert!(BaselineModel::from_parts(key(), 1 << 12, vec![1], w, 0.0).is_err());
    }

    #[test]
    fn bias_only_moves_toward_labels() {
        let data: Vec<_> = (0..40).map(|_| ex("", 1)).collect();
        let params = TrainParams { epochs: 1, ..TrainParams::default() };
        let (m, report) = train_baseline(&data, key(), &params).unwrap();
        assert!(m.score_text("").value() > 0.5);
        assert!(report.final_loss <= report.initial_loss);
    }

    #[test]
    fn balanced_empty_texts_stay_near_half() {
        let data: Vec<_> = (0..100).map(|i| ex("", (i % 2) as u8)).collect();
        let (m, _) = train_baseline(&data, key(), &TrainParams::default()).unwrap();
        assert!((m.score_text("").value() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_baseline(&[], key(), &TrainParams::default()),
            Err(OracleError::EmptyDataset(_))
        ));
        let other = OracleKey::from_parts(Role::Seer, PlayerId::new(2).unwrap());
        let data = vec![TrainingExample { key: other, text: "x".into(), label: 1 }];
        assert!(matches!(
            train_baseline(&data, key(), &TrainParams::default()),
            Err(OracleError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn bytes_roundtrip_and_determinism() {
        let data: Vec<_> = (0..50)
            .map(|i| ex(&format!("word{} other{}", i % 7, i % 3), (i % 2) as u8))
            .collect();
        let params = TrainParams { dim: 1 << 12, ..TrainParams::default() };
        let (a, _) = train_baseline(&data, key(), &params).unwrap();
        let (b, _) = train_baseline(&data, key(), &params).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = BaselineModel::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        let mut corrupt = a.to_bytes();
        corrupt[0] = b'X';
        assert!(BaselineModel::from_bytes(&corrupt).is_err());
        assert!(BaselineModel::from_bytes(&a.to_bytes()[..30]).is_err());
    }
}

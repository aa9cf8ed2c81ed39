#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use deepwolf::agent::{load_pools, CandidatePool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepwolf::augment::{augment_dataset, TrainingExample};
use deepwolf::engine::{GameConfig, PlayerId, Role, RoleMap};
use deepwolf::logfmt::GameRecord;
use deepwolf::oracle::{train_baseline, OracleKey, OracleRegistry, SparseVec, TrainParams, MIN_DIM};
use deepwolf::sim::{game_seed, play_game, PolicySpec, Resources};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn p(n: u8) -> PlayerId {
    PlayerId::new(n).unwrap()
}

pub fn pools() -> HashMap<Role, CandidatePool> {
    load_pools(&repo_root().join("pools")).expect("bundled pools")
}

pub fn golden_roles() -> RoleMap {
    [(1, Role::Seer), (2, Role::Villager), (3, Role::Werewolf), (4, Role::Villager), (5, Role::Betrayer)]
        .into_iter()
        .map(|(n, r)| (p(n), r))
        .collect()
}

pub fn golden_log() -> String {
    std::fs::read_to_string(repo_root().join("fixtures/golden_wolf_win.log")).unwrap()
}

/// `n` finished random-policy games that talk from the bundled pools.
pub fn random_records(n: usize, seed: u64) -> Vec<GameRecord> {
    let res = Resources { pools: pools(), oracles: OracleRegistry::new() };
    (0..n as u64)
        .map(|i| play_game(GameConfig::seeded(game_seed(seed, i)), &[PolicySpec::RandomLegal; 5], &res).unwrap())
        .collect()
}

/// Baseline models for all 20 keys, trained on augmented random games.
pub fn trained_resources(games: usize, seed: u64) -> Resources {
    let examples = augment_dataset(&random_records(games, seed)).unwrap();
    let params = TrainParams { dim: MIN_DIM, epochs: 2, ..TrainParams::default() };
    let mut oracles = OracleRegistry::new();
    for key in OracleKey::all() {
        let data: Vec<_> = examples.iter().filter(|e| e.key == key).cloned().collect();
        let (model, _) = train_baseline(&data, key, &params).unwrap();
        oracles.insert(Arc::new(model));
    }
    Resources { pools: pools(), oracles }
}

/// Cross-entropy written out directly, as the finite-difference reference.
pub fn reference_loss(w: &[f64], b: f64, batch: &[(SparseVec, f64)]) -> f64 {
    let mut total = 0.0;
    for (x, y) in batch {
        let z: f64 = x.iter().map(|&(i, v)| w[i as usize] * v).sum::<f64>() + b;
        let s = 1.0 / (1.0 + (-z).exp());
        total -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
    }
    total / batch.len() as f64
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, Vec<(SparseVec, f64)>) {
    let dim = rng.random_range(4..=64);
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = rng.random_range(-1.0..1.0);
    let n = rng.random_range(1..=8);
    let batch = (0..n)
        .map(|_| {
            let mut idx: Vec<u32> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..dim as u32)).collect();
            idx.sort_unstable();
            idx.dedup();
            let x: SparseVec = idx.into_iter().map(|i| (i, rng.random_range(1..=3) as f64)).collect();
            (x, f64::from(rng.random_bool(0.5) as u8))
        })
        .collect();
    (w, b, batch)
}

pub fn key() -> OracleKey {
    OracleKey::from_parts(Role::Werewolf, p(3))
}

/// Bag-of-words texts whose label leans on the markers `w1` and `w2`.
pub fn corpus(n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let words: Vec<String> = (0..rng.random_range(3..12)).map(|_| format!("w{}", rng.random_range(0..40))).collect();
            // label leans on two marker words, with noise
            let lean = words.iter().any(|w| w == "w1") as u8 as f64 * 0.5 + words.iter().any(|w| w == "w2") as u8 as f64 * 0.3;
            let label = u8::from(rng.random_bool((0.15 + lean).min(0.95)));
            TrainingExample { key: key(), text: words.join(" "), label }
        })
        .collect()
}

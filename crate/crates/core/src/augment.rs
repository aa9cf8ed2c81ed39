//! Training data: coplayer-number permutations of viewpoint logs, decision
//! point slicing, side balancing and the JSONL export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::CandidateAction;
use crate::engine::{EventKind, PlayerId, Role, Side, NUM_PLAYERS};
use crate::logfmt::{project, render_prefix, GameRecord, ViewpointLog};
use crate::oracle::OracleKey;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("permutation fixes {perm} but the viewpoint belongs to {viewpoint}")]
    ViewerMismatch { perm: PlayerId, viewpoint: PlayerId },
    #[error("record {0} has no winner")]
    UnfinishedRecord(usize),
    #[error("export i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("export line {line}: {source}")]
    BadRow {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// A relabelling of the four coplayers that keeps the viewer's own number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Permutation {
    viewer: PlayerId,
    /// `image[n]` is the new number of seat `n`; index 0 unused.
    image: [u8; 6],
}

impl Permutation {
    pub fn identity(viewer: PlayerId) -> Self {
        Permutation { viewer, image: [0, 1, 2, 3, 4, 5] }
    }

    /// Builds a permutation from `(from, to)` pairs; seats not mentioned map
    /// to themselves. Returns `None` unless the result is a bijection that
    /// fixes `viewer`.
    pub fn from_pairs(viewer: PlayerId, pairs: &[(u8, u8)]) -> Option<Self> {
        let mut image = [0, 1, 2, 3, 4, 5];
        for &(from, to) in pairs {
            if !(1..=NUM_PLAYERS).contains(&from) || !(1..=NUM_PLAYERS).contains(&to) {
                return None;
            }
            image[from as usize] = to;
        }
        let mut seen = [false; 6];
        for n in 1..=5 {
            seen[image[n] as usize] = true;
        }
        if seen[1..].iter().all(|&s| s) && image[viewer.number() as usize] == viewer.number() {
            Some(Permutation { viewer, image })
        } else {
            None
        }
    }

    pub fn viewer(&self) -> PlayerId {
        self.viewer
    }

    pub fn map(&self, p: PlayerId) -> PlayerId {
        PlayerId::new(self.image[p.number() as usize]).expect("image stays in range")
    }

    pub fn inverse(&self) -> Self {
        let mut image = [0u8; 6];
        for n in 1..=5u8 {
            image[self.image[n as usize] as usize] = n;
        }
        Permutation { viewer: self.viewer, image }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Permutation) -> Self {
        let mut image = [0u8; 6];
        for (slot, &mid) in image.iter_mut().zip(&other.image).skip(1) {
            *slot = self.image[mid as usize];
        }
        Permutation { viewer: self.viewer, image }
    }

    pub fn is_identity(&self) -> bool {
        self.image == [0, 1, 2, 3, 4, 5]
    }
}

/// The 24 coplayer permutations for `viewer`, identity first, in
/// lexicographic order of the images of the coplayers.
pub fn coplayer_permutations(viewer: PlayerId) -> Vec<Permutation> {
    let others: Vec<u8> = PlayerId::all()
        .filter(|&p| p != viewer)
        .map(PlayerId::number)
        .collect();
    let mut out = Vec::with_capacity(24);
    let mut images = others.clone();
    loop {
        let mut image = [0, 1, 2, 3, 4, 5];
        for (from, to) in others.iter().zip(&images) {
            image[*from as usize] = *to;
        }
        out.push(Permutation { viewer, image });
        if !next_permutation(&mut images) {
            break;
        }
    }
    out
}

fn next_permutation(v: &mut [u8]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Rewrites every `#<d>` token (single digit 1..=5, not followed by another
/// digit) through `perm`. The scan is single-pass, so swaps cannot collide.
pub fn permute_text(text: &str, perm: &Permutation) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        let d = bytes[i + 1];
        let next_is_digit = bytes.get(i + 2).is_some_and(u8::is_ascii_digit);
        if bytes[i] == b'#' && (b'1'..=b'5').contains(&d) && !next_is_digit {
            let mapped = perm.image[(d - b'0') as usize];
            out.push_str(&text[last..i + 1]);
            out.push((b'0' + mapped) as char);
            last = i + 2;
            i += 2;
        } else {
            i += 1;
        }
    }
    out.push_str(&text[last..]);
    out
}

pub fn apply_permutation(
    viewpoint: &ViewpointLog,
    perm: &Permutation,
) -> Result<ViewpointLog, AugmentError> {
    if perm.viewer != viewpoint.viewer {
        return Err(AugmentError::ViewerMismatch { perm: perm.viewer, viewpoint: viewpoint.viewer });
    }
    Ok(ViewpointLog {
        lines: viewpoint.lines.iter().map(|l| permute_text(l, perm)).collect(),
        ..viewpoint.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub key: OracleKey,
    pub text: String,
    pub label: u8,
}

/// One export line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub role: Role,
    pub player: u8,
    pub text: String,
    pub label: u8,
}

impl From<&TrainingExample> for ExportRow {
    fn from(e: &TrainingExample) -> Self {
        ExportRow {
            role: e.key.role(),
            player: e.key.player().number(),
            text: e.text.clone(),
            label: e.label,
        }
    }
}

impl TryFrom<ExportRow> for TrainingExample {
    type Error = String;
    fn try_from(row: ExportRow) -> Result<Self, String> {
        let key = OracleKey::new(row.role, row.player).map_err(|e| e.to_string())?;
        if row.label > 1 {
            return Err(format!("label {} is not 0 or 1", row.label));
        }
        Ok(TrainingExample { key, text: row.text, label: row.label })
    }
}

fn label_for(record: &GameRecord, viewer: PlayerId, winner: Side) -> u8 {
    u8::from(record.role_of(viewer).side() == winner)
}

/// Whole-game viewpoints: 5 viewers × 24 permutations per record.
pub fn augment_dataset(records: &[GameRecord]) -> Result<Vec<TrainingExample>, AugmentError> {
    build(records, false)
}

/// Per-decision prefixes of every viewer, each permuted 24 ways.
pub fn augment_sliced(records: &[GameRecord]) -> Result<Vec<TrainingExample>, AugmentError> {
    build(records, true)
}

fn build(records: &[GameRecord], sliced: bool) -> Result<Vec<TrainingExample>, AugmentError> {
    for (i, r) in records.iter().enumerate() {
        if r.winner.is_none() {
            return Err(AugmentError::UnfinishedRecord(i));
        }
    }
    let per_record: Vec<Vec<TrainingExample>> = records
        .par_iter()
        .map(|record| {
            let winner = record.winner.expect("checked above");
            let mut out = Vec::new();
            for viewer in PlayerId::all() {
                let key = OracleKey::from_parts(record.role_of(viewer), viewer);
                let label = label_for(record, viewer, winner);
                let texts: Vec<String> = if sliced {
                    slice_prefixes(record, viewer)
                        .iter()
                        .map(|(prefix, action)| render_prefix(prefix, action))
                        .collect()
                } else {
                    vec![project(record, viewer, None).text()]
                };
                for text in &texts {
                    for perm in coplayer_permutations(viewer) {
                        out.push(TrainingExample { key, text: permute_text(text, &perm), label });
                    }
                }
            }
            out
        })
        .collect();
    Ok(per_record.into_iter().flatten().collect())
}

/// The viewer's decision points in order: each masked prefix paired with
/// the action the viewer actually took next.
pub fn slice_prefixes(record: &GameRecord, viewer: PlayerId) -> Vec<(ViewpointLog, CandidateAction)> {
    let is_wolf = record.role_of(viewer) == Role::Werewolf;
    record
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let action = match &e.kind {
                EventKind::Talk { speaker, text } if *speaker == viewer => {
                    CandidateAction::Utterance(text.clone())
                }
                EventKind::Over { speaker } if *speaker == viewer => CandidateAction::OverSignal,
                EventKind::Vote { voter, target } if *voter == viewer => {
                    CandidateAction::VoteTarget(*target)
                }
                EventKind::DivineChoice { seer, target } if *seer == viewer => {
                    CandidateAction::DivineTarget(*target)
                }
                EventKind::Attack { target } if is_wolf => CandidateAction::AttackTarget(*target),
                _ => return None,
            };
            Some((project(record, viewer, Some(i)), action))
        })
        .collect()
}

/// Keeps an equal number of villager-side and werewolf-side wins, chosen
/// with a seeded shuffle; survivors keep their input order.
pub fn balance_sides(records: &[GameRecord], seed: u64) -> Vec<GameRecord> {
    let mut by_side: BTreeMap<Side, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(w) = r.winner {
            by_side.entry(w).or_default().push(i);
        }
    }
    let n = [Side::Villager, Side::Werewolf]
        .iter()
        .map(|s| by_side.get(s).map_or(0, Vec::len))
        .min()
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for side in [Side::Villager, Side::Werewolf] {
        let mut idx = by_side.remove(&side).unwrap_or_default();
        idx.shuffle(&mut rng);
        keep.extend(idx.into_iter().take(n));
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}

pub fn write_export(path: &Path, examples: &[TrainingExample]) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, &ExportRow::from(e)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_export(path: &Path) -> Result<Vec<TrainingExample>, AugmentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ExportRow =
            serde_json::from_str(&line).map_err(|source| AugmentError::BadRow { line: i + 1, source })?;
        let ex = TrainingExample::try_from(row).map_err(|msg| AugmentError::BadRow {
            line: i + 1,
            source: serde::de::Error::custom(msg),
        })?;
        out.push(ex);
    }
    Ok(out)
}

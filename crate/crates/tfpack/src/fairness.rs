//! Group-fairness metrics and sensitive-attribute-aware packing variants.
//!
//! Metrics operate on binary-coded prediction records (prediction, label
//! and group each in {0, 1}). The packing variants build one
//! threshold-filtered path per group and interleave them so packs hold a
//! balanced mix of both groups: the balanced variant stops interleaving
//! when one group runs out, the resampling variant keeps alternation
//! going by re-drawing the exhausted group.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tfp::{build_path_over, segment_into_packs, Pack, TfpConfig, Weighting};

/// One classified example with its ground truth and sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: u8,
    pub label: u8,
    pub group: u8,
}

/// Counts for one (group, label) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCount {
    pub count: usize,
    /// Records in the cell predicted positive.
    pub positive: usize,
}

/// Group-fairness metrics over a set of prediction records.
///
/// `cells[group][label]` holds the per-cell counts the rates were
/// computed from. `eod` is exactly `max(m_tp, m_fp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dpd: f64,
    pub eod: f64,
    pub m_tp: f64,
    pub m_fp: f64,
    pub cells: [[CellCount; 2]; 2],
}

/// Load prediction records from JSONL with keys
/// `{"id", "prediction", "label", "group"}`, all three numerics in {0, 1}.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    #[derive(Deserialize)]
    struct Raw {
        id: String,
        prediction: i64,
        label: i64,
        group: i64,
    }

    let file = fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Raw = serde_json::from_str(&line)
            .map_err(|source| Error::Json { line: line_no, source })?;
        let field = |name: &'static str, value: i64| -> Result<u8> {
            match value {
                0 | 1 => Ok(value as u8),
                v => Err(Error::InvalidBinaryField {
                    line: line_no,
                    field: name,
                    value: v,
                }),
            }
        };
        records.push(PredictionRecord {
            id: raw.id,
            prediction: field("prediction", raw.prediction)?,
            label: field("label", raw.label)?,
            group: field("group", raw.group)?,
        });
    }
    Ok(records)
}

/// `|P(f=1 | A=1) - P(f=1 | A=0)|` from empirical frequencies.
pub fn demographic_parity_difference(records: &[PredictionRecord]) -> Result<f64> {
    let mut count = [0usize; 2];
    let mut positive = [0usize; 2];
    for r in records {
        count[r.group as usize] += 1;
        positive[r.group as usize] += (r.prediction == 1) as usize;
    }
    for group in 0..2u8 {
        if count[group as usize] == 0 {
            return Err(Error::EmptyGroup { group });
        }
    }
    let rate = |g: usize| positive[g] as f64 / count[g] as f64;
    Ok((rate(1) - rate(0)).abs())
}

/// Equalized-odds and demographic-parity differences, with the cell
/// counts they were computed from. Requires every (group, label) cell to
/// be populated.
pub fn fairness_report(records: &[PredictionRecord]) -> Result<FairnessReport> {
    let mut cells = [[CellCount::default(); 2]; 2];
    for r in records {
        let cell = &mut cells[r.group as usize][r.label as usize];
        cell.count += 1;
        cell.positive += (r.prediction == 1) as usize;
    }
    for group in 0..2u8 {
        for label in 0..2u8 {
            if cells[group as usize][label as usize].count == 0 {
                return Err(Error::EmptyCell { group, label });
            }
        }
    }
    let rate = |g: usize, y: usize| {
        let c = cells[g][y];
        c.positive as f64 / c.count as f64
    };
    let m_tp = (rate(0, 1) - rate(1, 1)).abs();
    let m_fp = (rate(0, 0) - rate(1, 0)).abs();
    Ok(FairnessReport {
        dpd: demographic_parity_difference(records)?,
        eod: m_tp.max(m_fp),
        m_tp,
        m_fp,
        cells,
    })
}

// Dataset indices split by the two group values, each list in dataset
// order, keyed by the lexicographically smaller value first.
fn split_by_group(dataset: &Dataset) -> Result<[Vec<usize>; 2]> {
    let mut by_value: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, sample) in dataset.samples().iter().enumerate() {
        match &sample.group {
            Some(value) => by_value.entry(value.as_str()).or_default().push(i),
            None => {
                return Err(Error::MissingGroup {
                    id: sample.id.clone(),
                })
            }
        }
    }
    if by_value.len() != 2 {
        let mut found: Vec<String> = by_value.keys().map(|v| v.to_string()).collect();
        found.sort();
        return Err(Error::NotBinaryGroups { found });
    }
    let mut values: Vec<&str> = by_value.keys().copied().collect();
    values.sort();
    let second = by_value.remove(values[1]).expect("key exists");
    let first = by_value.remove(values[0]).expect("key exists");
    Ok([first, second])
}

// Threshold-filtered path over one group's subset, mapped back to
// dataset indices. The configured start index seeds the walk when it
// belongs to this group; otherwise the group's first sample does.
fn group_path(dataset: &Dataset, config: &TfpConfig, members: &[usize]) -> Vec<usize> {
    let sub = dataset.embeddings().select(members);
    let start = members
        .iter()
        .position(|&i| i == config.start_index)
        .unwrap_or(0);
    build_path_over(&sub, config.threshold, config.recent_window, start)
        .indices
        .into_iter()
        .map(|pos| members[pos])
        .collect()
}

// Larger group first; ties go to the lexicographically smaller group
// value so the choice is deterministic.
fn ordered_paths(dataset: &Dataset, config: &TfpConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let [first, second] = split_by_group(dataset)?;
    let p0 = group_path(dataset, config, &first);
    let p1 = group_path(dataset, config, &second);
    if p1.len() > p0.len() {
        Ok((p1, p0))
    } else {
        Ok((p0, p1))
    }
}

/// Group-balanced packing: one path per group, interleaved sample by
/// sample starting with the larger group; once the smaller group is
/// exhausted the remainder follows the surviving path order. Every
/// sample appears exactly once.
pub fn tfp_balanced(dataset: &Dataset, config: &TfpConfig) -> Result<Vec<Pack>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate(dataset.len())?;
    let (major, minor) = ordered_paths(dataset, config)?;

    let mut order = Vec::with_capacity(major.len() + minor.len());
    for i in 0..major.len() {
        order.push(major[i]);
        if i < minor.len() {
            order.push(minor[i]);
        }
    }
    segment_into_packs(dataset, &order, config.max_pack_tokens, Weighting::None)
}

/// Like [`tfp_balanced`], but alternation never stops: when the smaller
/// group is exhausted its samples are re-drawn by cycling its path order
/// from a seeded starting offset, until the larger group is spent. Every
/// original sample appears at least once; re-drawn ids carry an
/// occurrence suffix (`"id#2"`, ...) in the packs.
pub fn tfp_resampling(dataset: &Dataset, config: &TfpConfig, seed: u64) -> Result<Vec<Pack>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate(dataset.len())?;
    let (major, minor) = ordered_paths(dataset, config)?;

    let mut order = Vec::with_capacity(2 * major.len());
    let mut cycle_offset: Option<usize> = None;
    for i in 0..major.len() {
        order.push(major[i]);
        if i < minor.len() {
            order.push(minor[i]);
        } else {
            let offset = *cycle_offset.get_or_insert_with(|| {
                ChaCha8Rng::seed_from_u64(seed).gen_range(0..minor.len())
            });
            order.push(minor[(offset + (i - minor.len())) % minor.len()]);
        }
    }

    let mut packs = segment_into_packs(dataset, &order, config.max_pack_tokens, Weighting::None)?;
    apply_repetition_suffixes(&mut packs);
    Ok(packs)
}

// Second and later occurrences of an id get "#<occurrence>" appended so
// trainers can detect reuse while the base id stays recoverable.
fn apply_repetition_suffixes(packs: &mut [Pack]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for pack in packs {
        for id in &mut pack.member_ids {
            let occurrence = seen.entry(id.clone()).or_insert(0);
            *occurrence += 1;
            if *occurrence >= 2 {
                *id = format!("{id}#{occurrence}");
            }
        }
    }
}

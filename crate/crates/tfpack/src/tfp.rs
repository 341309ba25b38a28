//! Threshold-filtered nearest-neighbor path construction and pack
//! segmentation.
//!
//! The path starts at a configured sample and repeatedly takes the nearest
//! unvisited sample whose distance to each of the `recent_window` most
//! recently selected samples strictly exceeds the threshold. When no
//! candidate satisfies the constraint the unconstrained nearest neighbor
//! is taken and the position recorded as a fallback, so the path always
//! covers the whole dataset. With `recent_window = 0` or `threshold = 0`
//! the filter is inert and the result is exactly the greedy
//! nearest-neighbor tour.
//!
//! Distance comparisons are made on squared values; ties break toward the
//! lowest dataset index so results are identical across runs and worker
//! counts.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::geometry::{squared_distance, squared_distance_above};

/// Parameters of the threshold-filtered path walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfpConfig {
    /// Minimum allowed distance from a candidate to each recent selection.
    /// Zero disables filtering entirely.
    pub threshold: f64,
    /// How many of the most recent selections the threshold is enforced
    /// against. Zero disables filtering entirely.
    pub recent_window: usize,
    /// Dataset index of the first node on the path.
    #[serde(default)]
    pub start_index: usize,
    /// Context-length budget per pack.
    pub max_pack_tokens: u64,
}

impl TfpConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.max_pack_tokens == 0 {
            return Err(Error::ZeroPackBudget);
        }
        if self.start_index >= n {
            return Err(Error::StartIndexOutOfRange {
                index: self.start_index,
                n,
            });
        }
        Ok(())
    }
}

/// A visiting order over the dataset, plus the positions where the
/// threshold constraint had to be abandoned.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOrder {
    /// Permutation of `0..n`.
    pub indices: Vec<usize>,
    /// Path positions (indices into `indices`) selected by unconstrained
    /// fallback.
    pub fallback_positions: Vec<usize>,
}

/// Outcome of a single nearest-neighbor selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// True when no unvisited candidate satisfied the threshold and the
    /// unconstrained nearest neighbor was taken instead.
    pub fallback: bool,
}

// Strictly-greater threshold test against every recent selection.
// A zero threshold is inert: without this, exact duplicate embeddings
// would trip the strict inequality even though no filtering is configured.
fn clears_recent(
    emb: &EmbeddingMatrix,
    candidate_row: &[f64],
    recent: &[usize],
    threshold_sq: f64,
) -> bool {
    if threshold_sq <= 0.0 {
        return true;
    }
    recent
        .iter()
        .all(|&r| squared_distance_above(candidate_row, emb.row(r), threshold_sq).is_none())
}

/// Nearest unvisited sample to `current` whose distance to every index in
/// `recent` strictly exceeds `threshold`; falls back to the unconstrained
/// nearest when no candidate qualifies. Ties break to the lowest index.
pub fn select_next(
    emb: &EmbeddingMatrix,
    visited: &[bool],
    current: usize,
    recent: &[usize],
    threshold: f64,
) -> Result<Selection> {
    let threshold_sq = threshold * threshold;
    let cur_row = emb.row(current);

    let mut best_ok: Option<(f64, usize)> = None;
    let mut best_any: Option<(f64, usize)> = None;

    for cand in 0..emb.rows() {
        if visited[cand] {
            continue;
        }
        let row = emb.row(cand);
        let d2 = squared_distance(cur_row, row);
        let key = (d2, cand);
        if best_any.map_or(true, |b| key < b) {
            best_any = Some(key);
        }
        if best_ok.map_or(true, |b| key < b) && clears_recent(emb, row, recent, threshold_sq) {
            best_ok = Some(key);
        }
    }

    match (best_ok, best_any) {
        (Some((_, idx)), _) => Ok(Selection {
            index: idx,
            fallback: false,
        }),
        (None, Some((_, idx))) => Ok(Selection {
            index: idx,
            fallback: true,
        }),
        (None, None) => Err(Error::AllVisited),
    }
}

// Unvisited candidates packed densely so the hot scan streams a shrinking
// contiguous buffer instead of skipping over a visited mask.
struct CandidatePool {
    dim: usize,
    indices: Vec<usize>,
    rows: Vec<f64>,
}

impl CandidatePool {
    fn new(emb: &EmbeddingMatrix, skip: usize) -> Self {
        let dim = emb.dim();
        let n = emb.rows();
        let mut indices = Vec::with_capacity(n - 1);
        let mut rows = Vec::with_capacity((n - 1) * dim);
        for i in 0..n {
            if i != skip {
                indices.push(i);
                rows.extend_from_slice(emb.row(i));
            }
        }
        Self { dim, indices, rows }
    }

    fn len(&self) -> usize {
        self.indices.len()
    }

    fn row(&self, pos: usize) -> &[f64] {
        &self.rows[pos * self.dim..(pos + 1) * self.dim]
    }

    fn remove(&mut self, pos: usize) {
        let last = self.len() - 1;
        if pos != last {
            self.indices.swap(pos, last);
            let (head, tail) = self.rows.split_at_mut(last * self.dim);
            head[pos * self.dim..(pos + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.indices.pop();
        self.rows.truncate(last * self.dim);
    }
}

/// Build the threshold-filtered path over the whole dataset.
///
/// Equivalent to folding [`select_next`] from `start_index`, with the
/// recent window holding the last `recent_window` selections (the start
/// node counts as selected). The scan prunes candidates that provably
/// cannot beat the best constrained distance found so far, which changes
/// nothing about the result.
pub fn build_tfp_path(dataset: &Dataset, config: &TfpConfig) -> Result<PathOrder> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    config.validate(n)?;
    Ok(build_path_over(
        dataset.embeddings(),
        config.threshold,
        config.recent_window,
        config.start_index,
    ))
}

/// Path walk over a bare embedding matrix; `start` must be in range and
/// the matrix nonempty.
pub(crate) fn build_path_over(
    emb: &EmbeddingMatrix,
    threshold: f64,
    recent_window: usize,
    start: usize,
) -> PathOrder {
    let n = emb.rows();
    let threshold_sq = threshold * threshold;
    let r = recent_window;

    let mut indices = Vec::with_capacity(n);
    let mut fallback_positions = Vec::new();
    indices.push(start);

    let mut recent: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    if r > 0 {
        recent.push_back(start);
    }

    let mut pool = CandidatePool::new(emb, start);
    let mut current = start;
    let mut recent_slice: Vec<usize> = Vec::with_capacity(r);

    while pool.len() > 0 {
        let cur_row = emb.row(current);
        recent_slice.clear();
        recent_slice.extend(recent.iter().copied());

        let mut best_ok: Option<(f64, usize, usize)> = None; // (d2, dataset idx, pool pos)
        let mut best_any: Option<(f64, usize, usize)> = None;

        for pos in 0..pool.len() {
            let cand = pool.indices[pos];
            let row = pool.row(pos);
            // nothing below can improve on best_ok, and best_any is
            // never worse than best_ok, so its distance bounds the scan
            let bail = best_ok.map_or(f64::INFINITY, |(d2, _, _)| d2);
            let d2 = match squared_distance_above(cur_row, row, bail) {
                Some(d2) => d2,
                None => continue,
            };
            let key = (d2, cand);
            if best_any.map_or(true, |(bd, bi, _)| key < (bd, bi)) {
                best_any = Some((d2, cand, pos));
            }
            if best_ok.map_or(true, |(bd, bi, _)| key < (bd, bi))
                && clears_recent(emb, row, &recent_slice, threshold_sq)
            {
                best_ok = Some((d2, cand, pos));
            }
        }

        let (chosen, pos, fallback) = match (best_ok, best_any) {
            (Some((_, idx, pos)), _) => (idx, pos, false),
            (None, Some((_, idx, pos))) => (idx, pos, true),
            (None, None) => unreachable!("pool is nonempty"),
        };

        if fallback {
            fallback_positions.push(indices.len());
        }
        indices.push(chosen);
        pool.remove(pos);
        if r > 0 {
            recent.push_back(chosen);
            if recent.len() > r {
                recent.pop_front();
            }
        }
        current = chosen;
    }

    PathOrder {
        indices,
        fallback_positions,
    }
}

/// How per-sequence loss weights are assigned during segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    /// Every member of a pack with `k` members gets weight `n / (m * k)`,
    /// so each sequence contributes equally to the loss and the global
    /// mean weight is exactly 1.
    EqualPerSequence,
}

/// An ordered, length-bounded group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pack {
    pub pack_id: usize,
    /// Sample ids in pack order. Ids repeated by a resampling strategy
    /// carry an occurrence suffix (`"id#2"`, `"id#3"`, ...).
    pub member_ids: Vec<String>,
    /// Dataset indices matching `member_ids`. Not serialized; rebuilt from
    /// ids when a manifest is read back.
    #[serde(skip)]
    pub member_indices: Vec<usize>,
    pub total_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Pack {
    pub fn len(&self) -> usize {
        self.member_indices.len().max(self.member_ids.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_oversize(&self) -> bool {
        self.flags.iter().any(|f| f == "oversize")
    }
}

/// Cut a visiting order into packs by greedy left-to-right fill.
///
/// A sample joins the current pack when it fits the token budget and
/// otherwise starts a new one; a sample larger than the whole budget
/// becomes a singleton pack flagged `oversize` rather than being dropped.
/// The order may repeat indices (resampling strategies rely on this); the
/// concatenation of pack members always equals the input order.
pub fn segment_into_packs(
    dataset: &Dataset,
    order: &[usize],
    max_pack_tokens: u64,
    weighting: Weighting,
) -> Result<Vec<Pack>> {
    if max_pack_tokens == 0 {
        return Err(Error::ZeroPackBudget);
    }
    let mut packs: Vec<Pack> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut tokens: u64 = 0;

    let flush = |packs: &mut Vec<Pack>, members: &mut Vec<usize>, tokens: &mut u64| {
        if members.is_empty() {
            return;
        }
        let member_indices = std::mem::take(members);
        let member_ids = member_indices
            .iter()
            .map(|&i| dataset.sample(i).id.clone())
            .collect();
        let flags = if *tokens > max_pack_tokens {
            vec!["oversize".to_string()]
        } else {
            Vec::new()
        };
        packs.push(Pack {
            pack_id: packs.len(),
            member_ids,
            member_indices,
            total_tokens: *tokens,
            loss_weights: None,
            flags,
        });
        *tokens = 0;
    };

    for &idx in order {
        let len = dataset.sample(idx).token_length;
        if !members.is_empty() && tokens + len > max_pack_tokens {
            flush(&mut packs, &mut members, &mut tokens);
        }
        members.push(idx);
        tokens += len;
        if tokens > max_pack_tokens {
            // single sample over the whole budget: emit it alone, flagged
            flush(&mut packs, &mut members, &mut tokens);
        }
    }
    flush(&mut packs, &mut members, &mut tokens);

    if weighting == Weighting::EqualPerSequence {
        let n: usize = packs.iter().map(|p| p.member_indices.len()).sum();
        let m = packs.len();
        for pack in &mut packs {
            let k = pack.member_indices.len();
            let w = n as f64 / (m as f64 * k as f64);
            pack.loss_weights = Some(vec![w; k]);
        }
    }

    Ok(packs)
}

/// Reassign sequential pack ids after packs from several segmentations
/// are concatenated.
pub fn renumber_packs(packs: &mut [Pack]) {
    for (i, pack) in packs.iter_mut().enumerate() {
        pack.pack_id = i;
    }
}

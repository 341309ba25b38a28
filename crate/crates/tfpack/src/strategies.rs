//! Packing strategies behind one dispatch surface.
//!
//! Concatenation strategies fill packs up to a token budget; padding
//! strategies group samples into fixed-size batches and report the
//! padding they would waste. Everything is a pure function of the dataset
//! and the spec, so identical inputs give identical manifests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fairness;
use crate::geometry::squared_distance;
use crate::manifest::{summarize, Manifest, ManifestHeader, MANIFEST_FORMAT, MANIFEST_VERSION};
use crate::tfp::{build_tfp_path, renumber_packs, segment_into_packs, Pack, TfpConfig, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    VanillaPadding,
    SortedBatching,
    RandomPacking,
    RandomPackingMasked,
    PackingLossWeighted,
    KnnPacking,
    Tfp,
    TfpBalanced,
    TfpResampling,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::VanillaPadding,
        StrategyKind::SortedBatching,
        StrategyKind::RandomPacking,
        StrategyKind::RandomPackingMasked,
        StrategyKind::PackingLossWeighted,
        StrategyKind::KnnPacking,
        StrategyKind::Tfp,
        StrategyKind::TfpBalanced,
        StrategyKind::TfpResampling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::VanillaPadding => "vanilla_padding",
            StrategyKind::SortedBatching => "sorted_batching",
            StrategyKind::RandomPacking => "random_packing",
            StrategyKind::RandomPackingMasked => "random_packing_masked",
            StrategyKind::PackingLossWeighted => "packing_loss_weighted",
            StrategyKind::KnnPacking => "knn_packing",
            StrategyKind::Tfp => "tfp",
            StrategyKind::TfpBalanced => "tfp_balanced",
            StrategyKind::TfpResampling => "tfp_resampling",
        }
    }

    /// Strategies that concatenate samples against a token budget, as
    /// opposed to grouping them into padded batches.
    pub fn is_concatenation(&self) -> bool {
        !matches!(
            self,
            StrategyKind::VanillaPadding | StrategyKind::SortedBatching
        )
    }

    /// Strategies whose packs partition the dataset exactly (each sample
    /// appears exactly once).
    pub fn is_single_assignment(&self) -> bool {
        !matches!(
            self,
            StrategyKind::KnnPacking | StrategyKind::TfpResampling
        )
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// A fully resolved strategy configuration.
///
/// Kind-specific parameters must be present exactly when the kind needs
/// them; [`StrategySpec::validate`] enforces this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default)]
    pub seed: u64,
    /// Token budget for non-path concatenation strategies; the path
    /// strategies carry theirs inside `tfp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pack_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tfp: Option<TfpConfig>,
}

impl StrategySpec {
    pub fn tfp(kind: StrategyKind, config: TfpConfig) -> Self {
        debug_assert!(matches!(
            kind,
            StrategyKind::Tfp | StrategyKind::TfpBalanced | StrategyKind::TfpResampling
        ));
        Self {
            kind,
            seed: 0,
            max_pack_tokens: None,
            batch_size: None,
            k: None,
            tfp: Some(config),
        }
    }

    pub fn random_packing(seed: u64, max_pack_tokens: u64) -> Self {
        Self {
            kind: StrategyKind::RandomPacking,
            seed,
            max_pack_tokens: Some(max_pack_tokens),
            batch_size: None,
            k: None,
            tfp: None,
        }
    }

    pub fn knn_packing(k: usize, max_pack_tokens: u64) -> Self {
        Self {
            kind: StrategyKind::KnnPacking,
            seed: 0,
            max_pack_tokens: Some(max_pack_tokens),
            batch_size: None,
            k: Some(k),
            tfp: None,
        }
    }

    pub fn batched(kind: StrategyKind, batch_size: usize) -> Self {
        debug_assert!(matches!(
            kind,
            StrategyKind::VanillaPadding | StrategyKind::SortedBatching
        ));
        Self {
            kind,
            seed: 0,
            max_pack_tokens: None,
            batch_size: Some(batch_size),
            k: None,
            tfp: None,
        }
    }

    /// Token budget this spec packs against, if it is a concatenation
    /// strategy.
    pub fn pack_budget(&self) -> Option<u64> {
        self.tfp
            .as_ref()
            .map(|c| c.max_pack_tokens)
            .or(self.max_pack_tokens)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidSpec {
                kind: self.kind.name().to_string(),
                reason: reason.to_string(),
            })
        };
        let forbid_k = || {
            if self.k.is_some() {
                return fail("k is only valid for knn_packing");
            }
            Ok(())
        };
        let forbid_batch = || {
            if self.batch_size.is_some() {
                return fail("batch_size is only valid for padding strategies");
            }
            Ok(())
        };
        let forbid_tfp = || {
            if self.tfp.is_some() {
                return fail("a tfp config is only valid for the tfp family");
            }
            Ok(())
        };
        match self.kind {
            StrategyKind::VanillaPadding | StrategyKind::SortedBatching => {
                if self.batch_size.is_none() {
                    return fail("batch_size is required");
                }
                if self.batch_size == Some(0) {
                    return Err(Error::ZeroBatchSize);
                }
                if self.max_pack_tokens.is_some() {
                    return fail("max_pack_tokens does not apply to padding strategies");
                }
                forbid_k()?;
                forbid_tfp()
            }
            StrategyKind::RandomPacking
            | StrategyKind::RandomPackingMasked
            | StrategyKind::PackingLossWeighted => {
                if self.max_pack_tokens.is_none() {
                    return fail("max_pack_tokens is required");
                }
                if self.max_pack_tokens == Some(0) {
                    return Err(Error::ZeroPackBudget);
                }
                forbid_k()?;
                forbid_batch()?;
                forbid_tfp()
            }
            StrategyKind::KnnPacking => {
                if self.k.is_none() {
                    return fail("k is required");
                }
                if self.max_pack_tokens.is_none() {
                    return fail("max_pack_tokens is required");
                }
                forbid_batch()?;
                forbid_tfp()
            }
            StrategyKind::Tfp | StrategyKind::TfpBalanced | StrategyKind::TfpResampling => {
                if self.tfp.is_none() {
                    return fail("a tfp config is required");
                }
                if self.max_pack_tokens.is_some() {
                    return fail("max_pack_tokens lives inside the tfp config");
                }
                forbid_k()?;
                forbid_batch()
            }
        }
    }
}

/// Seeded uniform shuffle, then greedy segmentation.
pub fn random_packing(dataset: &Dataset, seed: u64, max_pack_tokens: u64) -> Result<Vec<Pack>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    segment_into_packs(dataset, &indices, max_pack_tokens, Weighting::None)
}

fn batch_packs(dataset: &Dataset, order: &[usize], batch_size: usize) -> (Vec<Pack>, u64) {
    let mut packs = Vec::new();
    let mut padded_tokens: u64 = 0;
    for chunk in order.chunks(batch_size) {
        let lengths: Vec<u64> = chunk.iter().map(|&i| dataset.sample(i).token_length).collect();
        let max_len = *lengths.iter().max().expect("chunks are nonempty");
        padded_tokens += lengths.iter().map(|&l| max_len - l).sum::<u64>();
        packs.push(Pack {
            pack_id: packs.len(),
            member_ids: chunk.iter().map(|&i| dataset.sample(i).id.clone()).collect(),
            member_indices: chunk.to_vec(),
            total_tokens: lengths.iter().sum(),
            loss_weights: None,
            flags: Vec::new(),
        });
    }
    (packs, padded_tokens)
}

/// Batches in dataset order; each batch pads its members up to the
/// longest one, and the waste is reported as `padded_tokens`.
pub fn vanilla_padding(dataset: &Dataset, batch_size: usize) -> Result<(Vec<Pack>, u64)> {
    if batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order: Vec<usize> = (0..dataset.len()).collect();
    Ok(batch_packs(dataset, &order, batch_size))
}

/// Batches of length-sorted samples (descending, ties by index), so each
/// batch pads as little as possible.
pub fn sorted_batching(dataset: &Dataset, batch_size: usize) -> Result<(Vec<Pack>, u64)> {
    if batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(dataset.sample(i).token_length), i));
    Ok(batch_packs(dataset, &order, batch_size))
}

/// Per-sample pack membership counts for a duplicating strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    /// Membership count per dataset index, before any length splitting.
    pub counts: Vec<usize>,
    pub max_repetition: usize,
    /// Id of (one of) the most repeated samples.
    pub max_id: String,
    pub mean_membership: f64,
}

impl RepetitionStats {
    fn from_counts(dataset: &Dataset, counts: Vec<usize>) -> Self {
        let (max_idx, &max_repetition) = counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
            .expect("nonempty dataset");
        let mean_membership = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        RepetitionStats {
            max_id: dataset.sample(max_idx).id.clone(),
            counts,
            max_repetition,
            mean_membership,
        }
    }
}

/// Each sample is packed together with its `k` nearest neighbors (anchor
/// first, then neighbors by ascending distance). Neighbors may repeat
/// across packs; the returned stats expose how often each sample was
/// reused. Raw packs larger than the budget are split by segmentation.
pub fn knn_packing(
    dataset: &Dataset,
    k: usize,
    max_pack_tokens: u64,
) -> Result<(Vec<Pack>, RepetitionStats)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let emb = dataset.embeddings();

    let neighbor_lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|anchor| {
            let row = emb.row(anchor);
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != anchor)
                .map(|j| (squared_distance(row, emb.row(j)), j))
                .collect();
            dists.select_nth_unstable_by(k - 1, |a, b| {
                a.partial_cmp(b).expect("distances are finite")
            });
            let mut front: Vec<(f64, usize)> = dists[..k].to_vec();
            front.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
            front.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut counts = vec![0usize; n];
    let mut packs = Vec::new();
    for (anchor, neighbors) in neighbor_lists.iter().enumerate() {
        let mut raw = Vec::with_capacity(k + 1);
        raw.push(anchor);
        raw.extend_from_slice(neighbors);
        for &member in &raw {
            counts[member] += 1;
        }
        let segmented = segment_into_packs(dataset, &raw, max_pack_tokens, Weighting::None)?;
        packs.extend(segmented);
    }
    renumber_packs(&mut packs);

    Ok((packs, RepetitionStats::from_counts(dataset, counts)))
}

/// Run a strategy and wrap the result in a manifest, returning repetition
/// stats alongside when the strategy produces them.
pub fn run_strategy_full(
    dataset: &Dataset,
    spec: &StrategySpec,
) -> Result<(Manifest, Option<RepetitionStats>)> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut padded_tokens = None;
    let mut fallback_count = None;
    let mut repetition: Option<RepetitionStats> = None;

    let packs = match spec.kind {
        StrategyKind::VanillaPadding => {
            let (packs, padded) = vanilla_padding(dataset, spec.batch_size.unwrap())?;
            padded_tokens = Some(padded);
            packs
        }
        StrategyKind::SortedBatching => {
            let (packs, padded) = sorted_batching(dataset, spec.batch_size.unwrap())?;
            padded_tokens = Some(padded);
            packs
        }
        StrategyKind::RandomPacking | StrategyKind::RandomPackingMasked => {
            random_packing(dataset, spec.seed, spec.max_pack_tokens.unwrap())?
        }
        StrategyKind::PackingLossWeighted => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            indices.shuffle(&mut rng);
            segment_into_packs(
                dataset,
                &indices,
                spec.max_pack_tokens.unwrap(),
                Weighting::EqualPerSequence,
            )?
        }
        StrategyKind::KnnPacking => {
            let (packs, stats) =
                knn_packing(dataset, spec.k.unwrap(), spec.max_pack_tokens.unwrap())?;
            repetition = Some(stats);
            packs
        }
        StrategyKind::Tfp => {
            let cfg = spec.tfp.as_ref().unwrap();
            let path = build_tfp_path(dataset, cfg)?;
            fallback_count = Some(path.fallback_positions.len());
            segment_into_packs(dataset, &path.indices, cfg.max_pack_tokens, Weighting::None)?
        }
        StrategyKind::TfpBalanced => {
            fairness::tfp_balanced(dataset, spec.tfp.as_ref().unwrap())?
        }
        StrategyKind::TfpResampling => {
            let packs = fairness::tfp_resampling(dataset, spec.tfp.as_ref().unwrap(), spec.seed)?;
            let mut counts = vec![0usize; dataset.len()];
            for pack in &packs {
                for &i in &pack.member_indices {
                    counts[i] += 1;
                }
            }
            repetition = Some(RepetitionStats::from_counts(dataset, counts));
            packs
        }
    };

    let summary = summarize(
        &packs,
        spec.kind,
        spec.pack_budget(),
        padded_tokens,
        fallback_count,
        repetition.as_ref().map(|r| r.max_repetition),
    );
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        strategy: spec.kind,
        config: spec.clone(),
        embed_segment: dataset.embed_segment(),
        dataset_checksum: dataset.checksum().to_string(),
        sample_count: dataset.len(),
        mask_boundaries: spec.kind == StrategyKind::RandomPackingMasked,
        summary,
    };
    Ok((Manifest { header, packs }, repetition))
}

/// Run a strategy and wrap the result in a manifest.
pub fn run_strategy(dataset: &Dataset, spec: &StrategySpec) -> Result<Manifest> {
    run_strategy_full(dataset, spec).map(|(manifest, _)| manifest)
}

//! Euclidean distance, full pairwise-distance statistics, and
//! percentile-based threshold calibration.
//!
//! All distance arithmetic runs in `f64` regardless of how embeddings are
//! stored, so percentile boundaries do not wobble with storage precision.
//! Comparisons inside the packing algorithms are made on *squared*
//! distances, which is equivalent for ordering and strict thresholds and
//! skips the square root in hot loops.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

// One block of the squared-distance sum. Four independent accumulators so
// the loop vectorizes; the summation order is fixed, hence reproducible.
#[inline]
fn sq_block(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let base = i * 4;
        for lane in 0..4 {
            let d = a[base + lane] - b[base + lane];
            acc[lane] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

const BLOCK: usize = 64;

/// Squared Euclidean distance, accumulated in fixed 64-element blocks.
/// Every squared-distance in the crate goes through this one summation
/// shape, so values compare bit-identically wherever they are computed.
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0f64;
    let mut offset = 0;
    while offset < a.len() {
        let end = (offset + BLOCK).min(a.len());
        total += sq_block(&a[offset..end], &b[offset..end]);
        offset = end;
    }
    total
}

/// Squared distance with early bailout: returns `None` as soon as the
/// running block sum exceeds `bound`, meaning the true value is certainly
/// `> bound`. Partial sums only grow, so bailing never changes which
/// candidate wins a comparison against `bound`; when it does not bail the
/// returned value equals [`squared_distance`] exactly.
pub(crate) fn squared_distance_above(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0f64;
    let mut offset = 0;
    while offset < a.len() {
        let end = (offset + BLOCK).min(a.len());
        total += sq_block(&a[offset..end], &b[offset..end]);
        if total > bound {
            return None;
        }
        offset = end;
    }
    Some(total)
}

/// Euclidean distance between two equal-dimension vectors.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DistanceDimMismatch { a: a.len(), b: b.len() });
    }
    Ok(squared_distance(a, b).sqrt())
}

/// How the pairwise statistics were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StatsMode {
    /// Every unordered pair was enumerated.
    Exact,
    /// A seeded uniform subsample of distinct pairs.
    Sampled { pairs: usize },
}

/// Distribution of pairwise distances over a dataset.
///
/// `percentile` interpolates linearly between closest order statistics
/// (rank `p/100 * (m-1)` over `m` ascending values), so it is continuous
/// and monotone in `p`, with `percentile(0) = min` and
/// `percentile(100) = max`.
#[derive(Debug, Clone)]
pub struct DistanceStats {
    total_pairs: u64,
    mode: StatsMode,
    sorted: Vec<f64>,
    mean: f64,
}

impl DistanceStats {
    /// Build stats directly from a multiset of distances.
    pub fn from_distances(mut distances: Vec<f64>, total_pairs: u64, mode: StatsMode) -> Self {
        distances.sort_unstable_by(f64::total_cmp);
        let mean = deterministic_mean(&distances);
        Self {
            total_pairs,
            mode,
            sorted: distances,
            mean,
        }
    }

    /// Number of unordered pairs in the dataset, `n(n-1)/2`.
    pub fn count(&self) -> u64 {
        self.total_pairs
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().expect("nonempty by construction")
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Distance value at percentile `p` in `[0, 100]`.
    pub fn percentile(&self, p: f64) -> Result<f64> {
        if !(0.0..=100.0).contains(&p) || !p.is_finite() {
            return Err(Error::InvalidPercentile(p));
        }
        let m = self.sorted.len();
        if m == 1 {
            return Ok(self.sorted[0]);
        }
        let rank = p / 100.0 * (m - 1) as f64;
        let lower = rank.floor() as usize;
        let frac = rank - lower as f64;
        if lower + 1 >= m {
            return Ok(self.sorted[m - 1]);
        }
        Ok(self.sorted[lower] + frac * (self.sorted[lower + 1] - self.sorted[lower]))
    }
}

// Fixed-shape chunked summation: chunk sums are combined in chunk order,
// so the result does not depend on how work was scheduled.
fn deterministic_mean(values: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    let total: f64 = values
        .chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .sum();
    total / values.len() as f64
}

/// Controls for [`pairwise_stats`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PairwiseOptions {
    /// Enumerate all pairs exactly while `n <= exact_limit`.
    pub exact_limit: usize,
    /// Beyond the exact limit, subsample this many distinct pairs.
    pub sample_cap: usize,
    /// Seed for the pair subsample.
    pub seed: u64,
}

impl Default for PairwiseOptions {
    fn default() -> Self {
        Self {
            exact_limit: 20_000,
            sample_cap: 2_000_000,
            seed: 0,
        }
    }
}

/// Distance statistics over all (or a seeded subsample of) unordered
/// sample pairs.
///
/// The exact path tiles the embedding matrix into row blocks so both
/// operands stay cache-resident; tiles are processed in a fixed order and
/// per-tile results merged in that order, so the outcome is independent
/// of the worker count.
pub fn pairwise_stats(dataset: &Dataset, opts: &PairwiseOptions) -> Result<DistanceStats> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::TooFewSamples { n });
    }
    let total_pairs = n as u64 * (n as u64 - 1) / 2;

    if n <= opts.exact_limit {
        let distances = exact_pair_distances(dataset);
        Ok(DistanceStats::from_distances(
            distances,
            total_pairs,
            StatsMode::Exact,
        ))
    } else {
        let distances = sampled_pair_distances(dataset, opts.sample_cap, opts.seed);
        let pairs = distances.len();
        Ok(DistanceStats::from_distances(
            distances,
            total_pairs,
            StatsMode::Sampled { pairs },
        ))
    }
}

const TILE_ROWS: usize = 128;

fn exact_pair_distances(dataset: &Dataset) -> Vec<f64> {
    let emb = dataset.embeddings();
    let n = dataset.len();
    let total_pairs = n * (n - 1) / 2;
    let tiles = n.div_ceil(TILE_ROWS);

    // (tile_i, tile_j) with tile_i <= tile_j, in a fixed order
    let mut tile_pairs = Vec::new();
    for ti in 0..tiles {
        for tj in ti..tiles {
            tile_pairs.push((ti, tj));
        }
    }

    let per_tile: Vec<Vec<f64>> = tile_pairs
        .par_iter()
        .map(|&(ti, tj)| {
            let i_range = ti * TILE_ROWS..((ti + 1) * TILE_ROWS).min(n);
            let j_range = tj * TILE_ROWS..((tj + 1) * TILE_ROWS).min(n);
            let mut out = Vec::with_capacity(TILE_ROWS * TILE_ROWS);
            for i in i_range {
                let a = emb.row(i);
                let j_start = if ti == tj { i + 1 } else { j_range.start };
                for j in j_start..j_range.end {
                    out.push(squared_distance(a, emb.row(j)).sqrt());
                }
            }
            out
        })
        .collect();

    let mut distances = Vec::with_capacity(total_pairs);
    for tile in per_tile {
        distances.extend_from_slice(&tile);
    }
    distances
}

fn sampled_pair_distances(dataset: &Dataset, cap: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    use rand::SeedableRng;

    let emb = dataset.embeddings();
    let n = dataset.len();
    let total_pairs = n as u64 * (n as u64 - 1) / 2;
    let want = (cap as u64).min(total_pairs) as usize;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(want);
    let mut pairs = Vec::with_capacity(want);
    while pairs.len() < want {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if seen.insert(key) {
            pairs.push(key);
        }
    }

    pairs
        .par_iter()
        .map(|&(i, j)| squared_distance(emb.row(i), emb.row(j)).sqrt())
        .collect()
}

/// Distance threshold at the given percentile of pairwise distances.
///
/// `percent` must lie in `(0, 100]`; the conventional calibration point
/// is the nearest 2% of all pairs.
pub fn calibrate_threshold(stats: &DistanceStats, percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidPercent(percent));
    }
    stats.percentile(percent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, EmbedSegment, EmbeddingMatrix, Sample};

    fn one_dim_dataset(points: &[f64]) -> Dataset {
        let samples: Vec<Sample> = points
            .iter()
            .enumerate()
            .map(|(i, _)| Sample {
                id: format!("s{i}"),
                instruction: format!("p{i}"),
                input: String::new(),
                output: String::new(),
                token_length: 10,
                group: None,
                label: None,
            })
            .collect();
        // pad to 2-dim so from_rows sees a consistent shape
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| vec![x, 0.0]).collect();
        Dataset::from_parts(
            samples,
            EmbeddingMatrix::from_rows(rows).unwrap(),
            EmbedSegment::Instruction,
        )
        .unwrap()
    }

    #[test]
    fn three_four_five_triangle() {
        let d = distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let x = [1.5, -2.0, 0.25];
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            distance(&[0.0], &[0.0, 1.0]),
            Err(Error::DistanceDimMismatch { a: 1, b: 2 })
        ));
    }

    #[test]
    fn matches_elementwise_loop_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut acc = 0.0;
            for q in 0..16 {
                acc += (a[q] - b[q]) * (a[q] - b[q]);
            }
            let expected = acc.sqrt();
            let got = distance(&a, &b).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn early_bailout_agrees_with_full_kernel() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let full = squared_distance(&a, &b);
            match squared_distance_above(&a, &b, full + 1e-9) {
                Some(v) => assert_eq!(v, full),
                None => panic!("bailed below the bound"),
            }
            assert!(squared_distance_above(&a, &b, full * 0.5).is_none());
        }
    }

    #[test]
    fn three_point_stats_match_hand_enumeration() {
        // points {0, 1, 3} -> pair distances {1, 2, 3}
        let ds = one_dim_dataset(&[0.0, 1.0, 3.0]);
        let stats = pairwise_stats(&ds, &PairwiseOptions::default()).unwrap();
        assert_eq!(stats.count(), 3);
        assert_eq!(stats.min(), 1.0);
        assert_eq!(stats.max(), 3.0);
        assert!((stats.mean() - 2.0).abs() < 1e-12);
        assert_eq!(stats.mode(), StatsMode::Exact);
    }

    #[test]
    fn two_points_give_single_pair() {
        let ds = one_dim_dataset(&[0.0, 7.0]);
        let stats = pairwise_stats(&ds, &PairwiseOptions::default()).unwrap();
        assert_eq!(stats.count(), 1);
        assert_eq!(stats.min(), 7.0);
        assert_eq!(stats.max(), 7.0);
        assert_eq!(stats.mean(), 7.0);
    }

    #[test]
    fn single_point_rejected() {
        let ds = one_dim_dataset(&[0.0]);
        assert!(matches!(
            pairwise_stats(&ds, &PairwiseOptions::default()),
            Err(Error::TooFewSamples { n: 1 })
        ));
    }

    // Independent sort-and-interpolate oracle for the percentile rule.
    fn oracle_percentile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p / 100.0 * (v.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
    }

    #[test]
    fn percentile_matches_sort_interpolate_oracle() {
        let distances: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let stats = DistanceStats::from_distances(distances.clone(), 100, StatsMode::Exact);
        let t = calibrate_threshold(&stats, 2.0).unwrap();
        // rank 0.02 * 99 = 1.98 between order stats 2 and 3
        assert!((t - 2.98).abs() < 1e-12, "t = {t}");
        assert!((t - oracle_percentile(&distances, 2.0)).abs() < 1e-12);
        for p in [0.5, 10.0, 37.3, 50.0, 99.9, 100.0] {
            let got = calibrate_threshold(&stats, p).unwrap();
            assert!((got - oracle_percentile(&distances, p)).abs() < 1e-12);
        }
    }

    #[test]
    fn percentile_limits() {
        let distances: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let stats = DistanceStats::from_distances(distances, 100, StatsMode::Exact);
        // percent -> 0+ approaches the minimum
        let tiny = calibrate_threshold(&stats, 1e-9).unwrap();
        assert!((tiny - 1.0).abs() < 1e-6);
        assert_eq!(calibrate_threshold(&stats, 100.0).unwrap(), 100.0);
        assert_eq!(stats.percentile(0.0).unwrap(), stats.min());
        assert_eq!(stats.percentile(100.0).unwrap(), stats.max());
        assert!(calibrate_threshold(&stats, 0.0).is_err());
        assert!(calibrate_threshold(&stats, 100.1).is_err());
        assert!(calibrate_threshold(&stats, -2.0).is_err());
    }

    #[test]
    fn degenerate_geometry_gives_zero_threshold() {
        let ds = one_dim_dataset(&[2.0, 2.0, 2.0, 2.0]);
        let stats = pairwise_stats(&ds, &PairwiseOptions::default()).unwrap();
        for p in [0.5, 2.0, 50.0, 100.0] {
            assert_eq!(calibrate_threshold(&stats, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn sampled_mode_is_deterministic() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let points: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..10.0)).collect();
        let ds = one_dim_dataset(&points);
        let opts = PairwiseOptions {
            exact_limit: 10,
            sample_cap: 200,
            seed: 42,
        };
        let a = pairwise_stats(&ds, &opts).unwrap();
        let b = pairwise_stats(&ds, &opts).unwrap();
        assert_eq!(a.mode(), StatsMode::Sampled { pairs: 200 });
        assert_eq!(a.sorted, b.sorted);
        assert_eq!(a.count(), 60 * 59 / 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // metric axioms on random triples
            #[test]
            fn metric_axioms(
                a in proptest::collection::vec(-100.0f64..100.0, 8),
                b in proptest::collection::vec(-100.0f64..100.0, 8),
                c in proptest::collection::vec(-100.0f64..100.0, 8),
            ) {
                let dab = distance(&a, &b).unwrap();
                let dba = distance(&b, &a).unwrap();
                let dac = distance(&a, &c).unwrap();
                let dcb = distance(&c, &b).unwrap();
                prop_assert!(dab >= 0.0);
                prop_assert_eq!(dab, dba);
                prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
                prop_assert!(dab <= dac + dcb + 1e-9);
            }

            #[test]
            fn percentile_is_monotone(
                mut values in proptest::collection::vec(0.0f64..1000.0, 2..200),
                p1 in 0.0f64..100.0,
                p2 in 0.0f64..100.0,
            ) {
                values.iter_mut().for_each(|v| *v = v.abs());
                let stats = DistanceStats::from_distances(values, 1, StatsMode::Exact);
                let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
                prop_assert!(stats.percentile(lo).unwrap() <= stats.percentile(hi).unwrap());
                prop_assert!(stats.percentile(0.0).unwrap() == stats.min());
                prop_assert!(stats.percentile(100.0).unwrap() == stats.max());
            }
        }
    }
}

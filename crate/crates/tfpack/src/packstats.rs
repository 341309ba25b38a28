//! Diagnostics over manifests: intra-pack distance, fill and padding
//! statistics, and side-by-side strategy comparisons.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::squared_distance;
use crate::manifest::Manifest;
use crate::strategies::{run_strategy, StrategySpec};
use crate::tfp::Pack;

/// How per-pack pair distances are averaged into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWeighting {
    /// Mean over packs of each pack's mean pair distance (default).
    PerPack,
    /// Mean over all member pairs, so large packs weigh more.
    PerPair,
}

/// Result of [`intra_pack_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraPackDistance {
    pub mean: f64,
    /// Packs with at least two members, which the mean is taken over.
    pub measured_packs: usize,
    /// Singleton packs, excluded from the mean.
    pub singleton_packs: usize,
}

/// Average distance between members of the same pack.
///
/// Each pack with two or more members contributes the mean Euclidean
/// distance over its unordered member pairs; singletons have no pairs and
/// are excluded but counted. Member order within a pack does not matter.
pub fn intra_pack_distance(
    dataset: &Dataset,
    packs: &[Pack],
    weighting: DistanceWeighting,
) -> Result<IntraPackDistance> {
    let emb = dataset.embeddings();
    let per_pack: Vec<Option<(f64, u64)>> = packs
        .par_iter()
        .map(|pack| {
            let members = &pack.member_indices;
            if members.len() < 2 {
                return None;
            }
            let mut sum = 0.0;
            let mut pairs = 0u64;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    sum += squared_distance(emb.row(i), emb.row(j)).sqrt();
                    pairs += 1;
                }
            }
            Some((sum, pairs))
        })
        .collect();

    let singleton_packs = per_pack.iter().filter(|v| v.is_none()).count();
    let measured: Vec<(f64, u64)> = per_pack.into_iter().flatten().collect();
    if measured.is_empty() {
        return Err(Error::AllPacksSingleton);
    }

    let mean = match weighting {
        DistanceWeighting::PerPack => {
            measured.iter().map(|(sum, pairs)| sum / *pairs as f64).sum::<f64>()
                / measured.len() as f64
        }
        DistanceWeighting::PerPair => {
            let total: f64 = measured.iter().map(|(sum, _)| sum).sum();
            let pairs: u64 = measured.iter().map(|(_, pairs)| pairs).sum();
            total / pairs as f64
        }
    };
    Ok(IntraPackDistance {
        mean,
        measured_packs: measured.len(),
        singleton_packs,
    })
}

/// One row of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackReport {
    pub strategy: String,
    /// Absent when every pack is a singleton.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_intra_pack_distance: Option<f64>,
    pub pack_count: usize,
    pub mean_pack_size: f64,
    pub singleton_packs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padded_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_repetition: Option<usize>,
}

/// Build the diagnostic row for a manifest. The manifest must belong to
/// `dataset` (checksums are compared) and have resolved member indices.
pub fn report_for_manifest(
    dataset: &Dataset,
    manifest: &Manifest,
    weighting: DistanceWeighting,
) -> Result<PackReport> {
    manifest.verify_checksum(dataset)?;
    let summary = &manifest.header.summary;
    let distance = match intra_pack_distance(dataset, &manifest.packs, weighting) {
        Ok(d) => Some(d),
        Err(Error::AllPacksSingleton) => None,
        Err(e) => return Err(e),
    };
    Ok(PackReport {
        strategy: manifest.header.strategy.name().to_string(),
        avg_intra_pack_distance: distance.map(|d| d.mean),
        pack_count: summary.pack_count,
        mean_pack_size: summary.total_members as f64 / summary.pack_count as f64,
        singleton_packs: distance.map_or(manifest.packs.len(), |d| d.singleton_packs),
        fill_ratio: summary.fill_ratio,
        padded_tokens: summary.padded_tokens,
        fallback_count: summary.fallback_count,
        max_repetition: summary.max_repetition,
    })
}

/// Difference in average intra-pack distance between two strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDelta {
    pub a: String,
    pub b: String,
    /// `avg(a) - avg(b)`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<PackReport>,
    pub distance_deltas: Vec<DistanceDelta>,
}

/// Run each spec on the dataset and tabulate the resulting reports, plus
/// pairwise deltas of the intra-pack distance.
pub fn compare_strategies(dataset: &Dataset, specs: &[StrategySpec]) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let manifest = run_strategy(dataset, spec)?;
        rows.push(report_for_manifest(
            dataset,
            &manifest,
            DistanceWeighting::PerPack,
        )?);
    }
    let mut distance_deltas = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if let (Some(da), Some(db)) =
                (rows[i].avg_intra_pack_distance, rows[j].avg_intra_pack_distance)
            {
                distance_deltas.push(DistanceDelta {
                    a: rows[i].strategy.clone(),
                    b: rows[j].strategy.clone(),
                    delta: da - db,
                });
            }
        }
    }
    Ok(Comparison {
        rows,
        distance_deltas,
    })
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Fixed-width text table for terminal output.
pub fn render_table(comparison: &Comparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>10} {:>7} {:>9} {:>10} {:>8} {:>9} {:>7}\n",
        "strategy", "avg-dist", "packs", "mean-size", "fill", "padded", "fallback", "max-rep"
    ));
    for row in &comparison.rows {
        out.push_str(&format!(
            "{:<22} {:>10} {:>7} {:>9.2} {:>10} {:>8} {:>9} {:>7}\n",
            row.strategy,
            fmt_opt_f64(row.avg_intra_pack_distance),
            row.pack_count,
            row.mean_pack_size,
            fmt_opt_f64(row.fill_ratio),
            fmt_opt(row.padded_tokens),
            fmt_opt(row.fallback_count),
            fmt_opt(row.max_repetition),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbedSegment, EmbeddingMatrix, Sample};
    use crate::strategies::StrategyKind;
    use crate::tfp::TfpConfig;

    fn dataset_1d(points: &[f64]) -> Dataset {
        let samples: Vec<Sample> = points
            .iter()
            .enumerate()
            .map(|(i, _)| Sample {
                id: format!("s{i}"),
                instruction: format!("p{i}"),
                input: String::new(),
                output: String::new(),
                token_length: 100,
                group: None,
                label: None,
            })
            .collect();
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| vec![x, 0.0]).collect();
        Dataset::from_parts(
            samples,
            EmbeddingMatrix::from_rows(rows).unwrap(),
            EmbedSegment::Instruction,
        )
        .unwrap()
    }

    fn pack_of(dataset: &Dataset, indices: &[usize]) -> Pack {
        Pack {
            pack_id: 0,
            member_ids: indices.iter().map(|&i| dataset.sample(i).id.clone()).collect(),
            member_indices: indices.to_vec(),
            total_tokens: indices.iter().map(|&i| dataset.sample(i).token_length).sum(),
            loss_weights: None,
            flags: Vec::new(),
        }
    }

    #[test]
    fn single_pair_pack() {
        let ds = dataset_1d(&[0.0, 5.0]);
        let packs = vec![pack_of(&ds, &[0, 1])];
        let d = intra_pack_distance(&ds, &packs, DistanceWeighting::PerPack).unwrap();
        assert_eq!(d.mean, 5.0);
        assert_eq!(d.measured_packs, 1);
        assert_eq!(d.singleton_packs, 0);
    }

    #[test]
    fn collinear_triple_pack() {
        // points {0, 1, 3}: pair distances {1, 2, 3}, mean 2
        let ds = dataset_1d(&[0.0, 1.0, 3.0]);
        let packs = vec![pack_of(&ds, &[0, 1, 2])];
        let d = intra_pack_distance(&ds, &packs, DistanceWeighting::PerPack).unwrap();
        assert!((d.mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singletons_are_excluded_but_counted() {
        let ds = dataset_1d(&[0.0, 5.0, 9.0]);
        let packs = vec![pack_of(&ds, &[0, 1]), pack_of(&ds, &[2])];
        let d = intra_pack_distance(&ds, &packs, DistanceWeighting::PerPack).unwrap();
        assert_eq!(d.mean, 5.0);
        assert_eq!(d.singleton_packs, 1);
    }

    #[test]
    fn all_singletons_rejected() {
        let ds = dataset_1d(&[0.0, 5.0]);
        let packs = vec![pack_of(&ds, &[0]), pack_of(&ds, &[1])];
        assert!(matches!(
            intra_pack_distance(&ds, &packs, DistanceWeighting::PerPack),
            Err(Error::AllPacksSingleton)
        ));
    }

    #[test]
    fn member_order_within_packs_is_irrelevant() {
        let ds = dataset_1d(&[0.0, 1.0, 3.0, 10.0]);
        let a = vec![pack_of(&ds, &[0, 1, 2]), pack_of(&ds, &[3])];
        let b = vec![pack_of(&ds, &[2, 0, 1]), pack_of(&ds, &[3])];
        let da = intra_pack_distance(&ds, &a, DistanceWeighting::PerPack).unwrap();
        let db = intra_pack_distance(&ds, &b, DistanceWeighting::PerPack).unwrap();
        assert_eq!(da.mean, db.mean);
    }

    #[test]
    fn pair_weighting_differs_from_pack_weighting() {
        // pack A: pair distance 1; pack B: three points {0,1,3} mean 2
        let ds = dataset_1d(&[0.0, 1.0, 10.0, 11.0, 13.0]);
        let packs = vec![pack_of(&ds, &[0, 1]), pack_of(&ds, &[2, 3, 4])];
        let per_pack = intra_pack_distance(&ds, &packs, DistanceWeighting::PerPack).unwrap();
        let per_pair = intra_pack_distance(&ds, &packs, DistanceWeighting::PerPair).unwrap();
        assert!((per_pack.mean - 1.5).abs() < 1e-12);
        assert!((per_pair.mean - (1.0 + 1.0 + 2.0 + 3.0) / 4.0).abs() < 1e-12);
    }

    fn clustered(seed: u64) -> Dataset {
        crate::synth::clustered_dataset(&crate::synth::ClusteredSpec {
            sizes: vec![20; 5],
            dim: 8,
            center_scale: 12.0,
            sigma: 0.5,
            token_range: (80, 120),
            intrinsic_dim: None,
            group_values: None,
            seed,
        })
    }

    #[test]
    fn tfp_beats_random_on_clustered_data() {
        let ds = clustered(3);
        let specs = vec![
            StrategySpec::random_packing(1, 512),
            StrategySpec::tfp(
                StrategyKind::Tfp,
                TfpConfig {
                    threshold: 0.2,
                    recent_window: 4,
                    start_index: 0,
                    max_pack_tokens: 512,
                },
            ),
        ];
        let cmp = compare_strategies(&ds, &specs).unwrap();
        let random = cmp.rows[0].avg_intra_pack_distance.unwrap();
        let tfp = cmp.rows[1].avg_intra_pack_distance.unwrap();
        assert!(tfp < random, "tfp {tfp} should beat random {random}");
        assert_eq!(cmp.distance_deltas.len(), 1);
        assert!(cmp.distance_deltas[0].delta > 0.0);
    }

    #[test]
    fn single_spec_gives_single_row() {
        let ds = clustered(4);
        let cmp = compare_strategies(&ds, &[StrategySpec::random_packing(0, 512)]).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        assert!(cmp.distance_deltas.is_empty());
        assert!(render_table(&cmp).contains("random_packing"));
    }

    #[test]
    fn repeated_specs_give_identical_rows() {
        let ds = clustered(5);
        let spec = StrategySpec::random_packing(9, 400);
        let cmp = compare_strategies(&ds, &[spec.clone(), spec]).unwrap();
        assert_eq!(cmp.rows[0], {
            let mut row = cmp.rows[1].clone();
            row.strategy = cmp.rows[0].strategy.clone();
            row
        });
        assert_eq!(cmp.distance_deltas[0].delta, 0.0);
    }
}

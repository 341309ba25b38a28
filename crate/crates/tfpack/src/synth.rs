//! Synthetic dataset generators for demos, benchmarks and tests.
//!
//! Everything here is seeded and reproducible: the normal deviates come
//! from a hand-rolled Box-Muller transform over a pinned ChaCha stream,
//! so fixtures never shift under dependency upgrades.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, EmbedSegment, EmbeddingMatrix, Sample};
use crate::fairness::PredictionRecord;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Shape of a clustered Gaussian dataset.
#[derive(Debug, Clone)]
pub struct ClusteredSpec {
    /// Points per cluster; uneven sizes give the dataset sparse and dense
    /// regions like real corpora have.
    pub sizes: Vec<usize>,
    pub dim: usize,
    /// Cluster centers are drawn from `N(0, center_scale^2 I)`.
    pub center_scale: f64,
    /// Within-cluster standard deviation.
    pub sigma: f64,
    /// When set, each cluster spreads only along this many random
    /// orthonormal directions instead of isotropically. Embedding spaces
    /// tend to be locally low-dimensional, so 2 or 3 here is the
    /// realistic choice.
    pub intrinsic_dim: Option<usize>,
    /// Token lengths are uniform over this inclusive range.
    pub token_range: (u64, u64),
    /// When set, samples are assigned one of the two group values at
    /// random (both always occur at least once).
    pub group_values: Option<(String, String)>,
    pub seed: u64,
}

// Random orthonormal set via Gram-Schmidt over Gaussian draws.
fn orthonormal_basis(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for prev in &basis {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Gaussian clusters in embedding space with random token lengths.
pub fn clustered_dataset(spec: &ClusteredSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n: usize = spec.sizes.iter().sum();

    let centers: Vec<Vec<f64>> = (0..spec.sizes.len())
        .map(|_| (0..spec.dim).map(|_| spec.center_scale * normal(&mut rng)).collect())
        .collect();

    let mut samples = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut global = 0usize;
    for (cluster, (&size, center)) in spec.sizes.iter().zip(&centers).enumerate() {
        let basis = spec
            .intrinsic_dim
            .map(|d| orthonormal_basis(&mut rng, spec.dim, d));
        for _ in 0..size {
            let row: Vec<f64> = match &basis {
                None => center
                    .iter()
                    .map(|&c| c + spec.sigma * normal(&mut rng))
                    .collect(),
                Some(basis) => {
                    let mut row = center.clone();
                    for direction in basis {
                        let coord = spec.sigma * normal(&mut rng);
                        row.iter_mut()
                            .zip(direction)
                            .for_each(|(x, d)| *x += coord * d);
                    }
                    row
                }
            };
            rows.push(row);
            let group = spec.group_values.as_ref().map(|(a, b)| {
                match global {
                    0 => a.clone(),
                    1 => b.clone(),
                    _ => {
                        if rng.gen::<bool>() {
                            a.clone()
                        } else {
                            b.clone()
                        }
                    }
                }
            });
            samples.push(Sample {
                id: format!("c{cluster:02}_s{global:05}"),
                instruction: format!("instruction {global} of cluster {cluster}"),
                input: String::new(),
                output: format!("output {global}"),
                token_length: rng.gen_range(spec.token_range.0..=spec.token_range.1),
                group,
                label: None,
            });
            global += 1;
        }
    }

    Dataset::from_parts(
        samples,
        EmbeddingMatrix::from_rows(rows).expect("rows share one dimension"),
        EmbedSegment::Instruction,
    )
    .expect("generated ids are unique")
}

/// Hub-and-satellites fixture: one centroid at the origin and
/// `satellites` points on the unit sphere around it, kept pairwise
/// farther than 1.05 apart by rejection so each satellite's nearest
/// neighbor is always the hub. Nearest-neighbor packing then reuses the
/// hub in every pack.
pub fn hub_dataset(satellites: usize, dim: usize, token_length: u64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(satellites + 1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(satellites + 1);

    samples.push(Sample {
        id: "hub".to_string(),
        instruction: "the hub".to_string(),
        input: String::new(),
        output: String::new(),
        token_length,
        group: None,
        label: None,
    });
    rows.push(vec![0.0; dim]);

    const MIN_SEPARATION_SQ: f64 = 1.05 * 1.05;
    for i in 0..satellites {
        let row = loop {
            let mut candidate: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
            candidate.iter_mut().for_each(|v| *v /= norm);
            let well_separated = rows[1..].iter().all(|other| {
                let d2: f64 = candidate
                    .iter()
                    .zip(other)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2 > MIN_SEPARATION_SQ
            });
            if well_separated {
                break candidate;
            }
        };
        rows.push(row);
        samples.push(Sample {
            id: format!("sat{i:03}"),
            instruction: format!("satellite {i}"),
            input: String::new(),
            output: String::new(),
            token_length,
            group: None,
            label: None,
        });
    }

    Dataset::from_parts(
        samples,
        EmbeddingMatrix::from_rows(rows).expect("rows share one dimension"),
        EmbedSegment::Instruction,
    )
    .expect("generated ids are unique")
}

/// Uniform random prediction records over all (prediction, label, group)
/// cells.
pub fn random_predictions(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| PredictionRecord {
            id: format!("r{i:05}"),
            prediction: rng.gen_range(0..2),
            label: rng.gen_range(0..2),
            group: rng.gen_range(0..2),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_dataset_is_reproducible() {
        let spec = ClusteredSpec {
            sizes: vec![5, 7],
            dim: 4,
            center_scale: 10.0,
            sigma: 1.0,
            token_range: (50, 150),
            intrinsic_dim: None,
            group_values: Some(("a".into(), "b".into())),
            seed: 3,
        };
        let x = clustered_dataset(&spec);
        let y = clustered_dataset(&spec);
        assert_eq!(x, y);
        assert_eq!(x.len(), 12);
        let groups: std::collections::HashSet<_> =
            x.samples().iter().map(|s| s.group.clone().unwrap()).collect();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn hub_is_every_satellites_nearest_neighbor() {
        let ds = hub_dataset(20, 16, 100, 1);
        let emb = ds.embeddings();
        for sat in 1..ds.len() {
            let to_hub = crate::geometry::distance(emb.row(sat), emb.row(0)).unwrap();
            for other in 1..ds.len() {
                if other == sat {
                    continue;
                }
                let d = crate::geometry::distance(emb.row(sat), emb.row(other)).unwrap();
                assert!(to_hub < d, "satellite {sat} closer to {other} than to hub");
            }
        }
    }
}

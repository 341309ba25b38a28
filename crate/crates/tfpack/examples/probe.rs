//! Scratch probe for fixture tuning (not part of the deliverable).

use tfpack::synth::{clustered_dataset, ClusteredSpec};
use tfpack::{
    calibrate_threshold, compare_strategies, pairwise_stats, PairwiseOptions, StrategyKind,
    StrategySpec, TfpConfig,
};

#[allow(clippy::too_many_arguments)]
fn run(
    sizes: Vec<usize>,
    k: usize,
    seed: u64,
    sigma: f64,
    intrinsic: Option<usize>,
    budget: u64,
    tokens: (u64, u64),
    r: usize,
) {
    let dataset = clustered_dataset(&ClusteredSpec {
        sizes,
        dim: 16,
        center_scale: 5.0,
        sigma,
        intrinsic_dim: intrinsic,
        token_range: tokens,
        group_values: None,
        seed,
    });
    let stats = pairwise_stats(&dataset, &PairwiseOptions::default()).unwrap();
    let threshold = calibrate_threshold(&stats, 2.0).unwrap();
    let cfg = |t, r| TfpConfig {
        threshold: t,
        recent_window: r,
        start_index: 0,
        max_pack_tokens: budget,
    };
    let specs = vec![
        StrategySpec::tfp(StrategyKind::Tfp, cfg(0.0, 0)),
        StrategySpec::tfp(StrategyKind::Tfp, cfg(threshold, r)),
        StrategySpec::knn_packing(k, budget),
        StrategySpec::random_packing(1, budget),
    ];
    let cmp = compare_strategies(&dataset, &specs).unwrap();
    let v: Vec<f64> = cmp
        .rows
        .iter()
        .map(|r| r.avg_intra_pack_distance.unwrap())
        .collect();
    let ok = v[0] <= v[1] && v[1] < v[2] && v[2] < v[3] && v[1] <= 0.8 * v[3];
    println!(
        "seed {seed} k {k} intr {intrinsic:?}: tsp {:.3} tfp {:.3} knn {:.3} rnd {:.3}  t {threshold:.2}  {}",
        v[0],
        v[1],
        v[2],
        v[3],
        if ok { "OK" } else { "FAIL" }
    );
}

fn main() {
    let skew = vec![5, 6, 8, 10, 12, 15, 25, 100, 150, 169];
    println!("== intrinsic 2, k sweep ==");
    for k in [8, 16, 24] {
        run(skew.clone(), k, 42, 1.0, Some(2), 1024, (150, 250), 4);
    }
    println!("== intrinsic 3 ==");
    for k in [8, 16, 24] {
        run(skew.clone(), k, 42, 1.0, Some(3), 1024, (150, 250), 4);
    }
    println!("== seeds, intrinsic 2, k 16 ==");
    for seed in [1, 5, 7, 11, 42, 99, 123, 2024] {
        run(skew.clone(), 16, seed, 1.0, Some(2), 1024, (150, 250), 4);
    }
}

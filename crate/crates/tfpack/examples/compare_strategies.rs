//! Run every packing strategy on one clustered dataset and compare the
//! average intra-pack distance, fill ratio and padding waste.
//!
//! ```bash
//! cargo run --release -p tfpack --example compare_strategies
//! ```

use tfpack::synth::{clustered_dataset, ClusteredSpec};
use tfpack::{
    calibrate_threshold, compare_strategies, pairwise_stats, render_table, PairwiseOptions,
    StrategyKind, StrategySpec, TfpConfig,
};

fn main() -> tfpack::Result<()> {
    // Uneven cluster sizes give the embedding space dense and sparse
    // regions, the shape real instruction corpora tend to have.
    let dataset = clustered_dataset(&ClusteredSpec {
        sizes: vec![5, 6, 8, 10, 12, 15, 25, 100, 150, 169],
        dim: 16,
        center_scale: 5.0,
        sigma: 1.0,
        token_range: (150, 250),
        group_values: Some(("red".into(), "blue".into())),
        seed: 42,
    });
    let max_pack_tokens = 1024;

    let stats = pairwise_stats(&dataset, &PairwiseOptions::default())?;
    let threshold = calibrate_threshold(&stats, 2.0)?;
    println!(
        "{} samples, {} pairs, threshold at 2%: {threshold:.4}\n",
        dataset.len(),
        stats.count()
    );

    let tfp_config = |threshold, recent_window| TfpConfig {
        threshold,
        recent_window,
        start_index: 0,
        max_pack_tokens,
    };

    let mut specs = vec![
        StrategySpec::batched(StrategyKind::VanillaPadding, 8),
        StrategySpec::batched(StrategyKind::SortedBatching, 8),
        StrategySpec::random_packing(1, max_pack_tokens),
        StrategySpec::knn_packing(16, max_pack_tokens),
        // greedy nearest-neighbor tour: threshold filtering disabled
        StrategySpec::tfp(StrategyKind::Tfp, tfp_config(0.0, 0)),
        StrategySpec::tfp(StrategyKind::Tfp, tfp_config(threshold, 4)),
        StrategySpec::tfp(StrategyKind::TfpBalanced, tfp_config(threshold, 4)),
        StrategySpec::tfp(StrategyKind::TfpResampling, tfp_config(threshold, 4)),
    ];
    let mut weighted = StrategySpec::random_packing(1, max_pack_tokens);
    weighted.kind = StrategyKind::PackingLossWeighted;
    specs.push(weighted);

    let comparison = compare_strategies(&dataset, &specs)?;
    print!("{}", render_table(&comparison));

    println!("\nintra-pack distance deltas:");
    for delta in &comparison.distance_deltas {
        println!("  {:<22} - {:<22} = {:+.4}", delta.a, delta.b, delta.delta);
    }
    Ok(())
}

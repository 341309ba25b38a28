//! Command-line surface: `pack`, `calibrate`, `stats`, `compare`,
//! `fairness`.
//!
//! Every output file embeds the fully resolved configuration and the
//! dataset checksum, so a run can be reproduced byte for byte from its
//! own header. Exit codes: 0 success, 2 malformed input data, 3 invalid
//! parameters or violated constraints, 1 internal failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{Dataset, EmbedSegment};
use crate::error::{Error, Result};
use crate::fairness;
use crate::geometry::{calibrate_threshold, pairwise_stats, DistanceStats, PairwiseOptions, StatsMode};
use crate::manifest::Manifest;
use crate::packstats::{self, DistanceWeighting};
use crate::strategies::{run_strategy_full, RepetitionStats, StrategyKind, StrategySpec};
use crate::tfp::TfpConfig;

#[derive(Parser, Debug)]
#[command(
    name = "tfpack",
    version,
    about = "Reorder and group fine-tuning samples into context-length-bounded packs",
    long_about = "Reorders and groups fine-tuning samples into context-length-bounded packs.\n\
        Samples arrive as JSONL with precomputed token lengths and embeddings\n\
        (inline or in a binary sidecar). Embeddings of the instruction segment\n\
        are the recommended input; pass --embed-segment to record a different\n\
        choice in the manifest."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pack a dataset into a manifest with the chosen strategy
    Pack(PackArgs),
    /// Calibrate the distance threshold from pairwise statistics
    Calibrate(CalibrateArgs),
    /// Diagnostic report for an existing manifest
    Stats(StatsArgs),
    /// Run several strategies and compare pack quality
    Compare(CompareArgs),
    /// Group-fairness metrics over a predictions file
    Fairness(FairnessArgs),
}

fn parse_segment(s: &str) -> std::result::Result<EmbedSegment, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Samples JSONL file (one object per line)
    #[arg(long)]
    pub samples: PathBuf,
    /// Binary embedding sidecar; omit when embeddings are inline
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Segment the embeddings were computed from: instruction (recommended), output, or full
    #[arg(long, default_value = "instruction", value_parser = parse_segment)]
    pub embed_segment: EmbedSegment,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.samples, self.embeddings.as_deref(), self.embed_segment)
    }
}

/// Strategy parameters shared by `pack` and `compare`.
#[derive(Args, Debug)]
pub struct StrategyArgs {
    /// Seed for randomized strategies and pair subsampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Context-length budget per pack
    #[arg(long, default_value_t = 4096)]
    pub max_pack_tokens: u64,
    /// Use this distance threshold directly instead of calibrating
    #[arg(long)]
    pub threshold_value: Option<f64>,
    /// Calibrate the threshold at this percentile of pairwise distances
    #[arg(long, default_value_t = 2.0)]
    pub threshold_percent: f64,
    /// How many recent selections the threshold is enforced against
    #[arg(long, default_value_t = 4)]
    pub recent_window: usize,
    /// Dataset index the path starts from
    #[arg(long, default_value_t = 0)]
    pub start_index: usize,
    /// Neighbor count for knn_packing
    #[arg(long)]
    pub k: Option<usize>,
    /// Batch size for vanilla_padding and sorted_batching (default 8)
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Enumerate all pairs exactly while the dataset has at most this many samples
    #[arg(long, default_value_t = 20_000)]
    pub exact_pair_limit: usize,
    /// Pairs to subsample beyond the exact limit
    #[arg(long, default_value_t = 2_000_000)]
    pub pair_cap: usize,
}

impl StrategyArgs {
    fn pairwise_options(&self) -> PairwiseOptions {
        PairwiseOptions {
            exact_limit: self.exact_pair_limit,
            sample_cap: self.pair_cap,
            seed: self.seed,
        }
    }

    // Threshold for the tfp family: explicit value, or calibrated once
    // and reused across strategies in a comparison.
    fn resolve_threshold(&self, dataset: &Dataset, cache: &mut Option<f64>) -> Result<f64> {
        if let Some(value) = self.threshold_value {
            return Ok(value);
        }
        if let Some(t) = *cache {
            return Ok(t);
        }
        let stats = pairwise_stats(dataset, &self.pairwise_options())?;
        let t = calibrate_threshold(&stats, self.threshold_percent)?;
        *cache = Some(t);
        Ok(t)
    }

    fn build_spec(
        &self,
        kind: StrategyKind,
        dataset: &Dataset,
        threshold_cache: &mut Option<f64>,
    ) -> Result<StrategySpec> {
        let spec = match kind {
            StrategyKind::Tfp | StrategyKind::TfpBalanced | StrategyKind::TfpResampling => {
                let config = TfpConfig {
                    threshold: self.resolve_threshold(dataset, threshold_cache)?,
                    recent_window: self.recent_window,
                    start_index: self.start_index,
                    max_pack_tokens: self.max_pack_tokens,
                };
                let mut spec = StrategySpec::tfp(kind, config);
                spec.seed = self.seed;
                spec
            }
            StrategyKind::KnnPacking => {
                let k = self.k.ok_or_else(|| Error::InvalidSpec {
                    kind: kind.name().to_string(),
                    reason: "--k is required".to_string(),
                })?;
                StrategySpec::knn_packing(k, self.max_pack_tokens)
            }
            StrategyKind::RandomPacking
            | StrategyKind::RandomPackingMasked
            | StrategyKind::PackingLossWeighted => {
                let mut spec = StrategySpec::random_packing(self.seed, self.max_pack_tokens);
                spec.kind = kind;
                spec
            }
            StrategyKind::VanillaPadding | StrategyKind::SortedBatching => {
                StrategySpec::batched(kind, self.batch_size.unwrap_or(8))
            }
        };
        if matches!(
            kind,
            StrategyKind::Tfp | StrategyKind::TfpBalanced | StrategyKind::TfpResampling
        ) && self.k.is_some()
        {
            return Err(Error::InvalidSpec {
                kind: kind.name().to_string(),
                reason: "--k only applies to knn_packing".to_string(),
            });
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
pub struct PackArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Strategy: vanilla_padding, sorted_batching, random_packing,
    /// random_packing_masked, packing_loss_weighted, knn_packing, tfp,
    /// tfp_balanced, tfp_resampling
    #[arg(long)]
    pub strategy: String,
    /// Output manifest path (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: StrategyArgs,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Percentile of pairwise distances to report as the threshold
    #[arg(long, default_value_t = 2.0)]
    pub percent: f64,
    #[arg(long, default_value_t = 20_000)]
    pub exact_pair_limit: usize,
    #[arg(long, default_value_t = 2_000_000)]
    pub pair_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Manifest to report on; must match the dataset checksum
    #[arg(long)]
    pub manifest: PathBuf,
    /// Weight the distance average by pairs instead of by packs
    #[arg(long)]
    pub pair_weighted: bool,
    /// Also write the report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Comma-separated strategy names
    #[arg(long)]
    pub strategies: String,
    #[command(flatten)]
    pub params: StrategyArgs,
    /// Also write the comparison as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FairnessArgs {
    /// Predictions JSONL with keys {"id", "prediction", "label", "group"}
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output report path (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pack(args) => cmd_pack(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Fairness(args) => cmd_fairness(args),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn repetition_sidecar_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".repetition.json");
    PathBuf::from(os)
}

#[derive(Serialize)]
struct IdCount<'a> {
    id: &'a str,
    count: usize,
}

#[derive(Serialize)]
struct RepetitionReport<'a> {
    max_repetition: usize,
    max_id: &'a str,
    mean_membership: f64,
    counts: Vec<IdCount<'a>>,
}

fn repetition_report<'a>(dataset: &'a Dataset, stats: &'a RepetitionStats) -> RepetitionReport<'a> {
    RepetitionReport {
        max_repetition: stats.max_repetition,
        max_id: &stats.max_id,
        mean_membership: stats.mean_membership,
        counts: stats
            .counts
            .iter()
            .enumerate()
            .map(|(i, &count)| IdCount {
                id: &dataset.sample(i).id,
                count,
            })
            .collect(),
    }
}

fn cmd_pack(args: PackArgs) -> Result<()> {
    let dataset = args.dataset.load()?;
    let kind: StrategyKind = args.strategy.parse()?;
    let mut threshold_cache = None;
    let spec = args.params.build_spec(kind, &dataset, &mut threshold_cache)?;

    let (manifest, repetition) = run_strategy_full(&dataset, &spec)?;
    manifest.write_to(&args.out)?;

    let summary = &manifest.header.summary;
    println!("strategy: {}", manifest.header.strategy);
    if let Some(t) = spec.tfp.as_ref().map(|c| c.threshold) {
        println!("threshold: {t}");
    }
    println!(
        "packs: {} (members {}, tokens {}, oversize {})",
        summary.pack_count, summary.total_members, summary.total_tokens, summary.oversize_packs
    );
    if let Some(fill) = summary.fill_ratio {
        println!("fill ratio: {fill:.4}");
    }
    if let Some(padded) = summary.padded_tokens {
        println!("padded tokens: {padded}");
    }
    if let Some(fallbacks) = summary.fallback_count {
        println!("threshold fallbacks: {fallbacks}");
    }
    println!("manifest: {}", args.out.display());

    if let Some(stats) = repetition {
        let sidecar = repetition_sidecar_path(&args.out);
        write_json(&sidecar, &repetition_report(&dataset, &stats))?;
        println!(
            "repetition: max {} ({}), report {}",
            stats.max_repetition,
            stats.max_id,
            sidecar.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    percent: f64,
    threshold: f64,
    total_pairs: u64,
    #[serde(flatten)]
    mode: StatsMode,
    min: f64,
    mean: f64,
    max: f64,
}

fn calibration_report(stats: &DistanceStats, percent: f64, threshold: f64) -> CalibrationReport {
    CalibrationReport {
        percent,
        threshold,
        total_pairs: stats.count(),
        mode: stats.mode(),
        min: stats.min(),
        mean: stats.mean(),
        max: stats.max(),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let dataset = args.dataset.load()?;
    let opts = PairwiseOptions {
        exact_limit: args.exact_pair_limit,
        sample_cap: args.pair_cap,
        seed: args.seed,
    };
    let stats = pairwise_stats(&dataset, &opts)?;
    let threshold = calibrate_threshold(&stats, args.percent)?;

    let mode = match stats.mode() {
        StatsMode::Exact => "exact".to_string(),
        StatsMode::Sampled { pairs } => format!("sampled {pairs} pairs"),
    };
    println!("pairs: {} ({mode})", stats.count());
    println!(
        "distance min/mean/max: {} / {} / {}",
        stats.min(),
        stats.mean(),
        stats.max()
    );
    println!("threshold: {threshold} (percent {})", args.percent);

    if let Some(path) = &args.json {
        write_json(path, &calibration_report(&stats, args.percent, threshold))?;
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let dataset = args.dataset.load()?;
    let mut manifest = Manifest::read_from(&args.manifest)?;
    manifest.verify_checksum(&dataset)?;
    manifest.resolve_indices(&dataset)?;

    let weighting = if args.pair_weighted {
        DistanceWeighting::PerPair
    } else {
        DistanceWeighting::PerPack
    };
    let report = packstats::report_for_manifest(&dataset, &manifest, weighting)?;
    let comparison = packstats::Comparison {
        rows: vec![report.clone()],
        distance_deltas: Vec::new(),
    };
    print!("{}", packstats::render_table(&comparison));

    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let dataset = args.dataset.load()?;
    let mut threshold_cache = None;
    let mut specs = Vec::new();
    for name in args.strategies.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: StrategyKind = name.parse()?;
        specs.push(args.params.build_spec(kind, &dataset, &mut threshold_cache)?);
    }
    if specs.is_empty() {
        return Err(Error::InvalidSpec {
            kind: "compare".to_string(),
            reason: "--strategies named no strategy".to_string(),
        });
    }

    let comparison = packstats::compare_strategies(&dataset, &specs)?;
    print!("{}", packstats::render_table(&comparison));

    if let Some(path) = &args.json {
        write_json(path, &comparison)?;
    }
    Ok(())
}

fn cmd_fairness(args: FairnessArgs) -> Result<()> {
    let records = fairness::load_predictions(&args.predictions)?;
    let report = fairness::fairness_report(&records)?;
    write_json(&args.out, &report)?;
    println!("records: {}", records.len());
    println!("dpd: {}", report.dpd);
    println!("eod: {} (m_tp {}, m_fp {})", report.eod, report.m_tp, report.m_fp);
    println!("report: {}", args.out.display());
    Ok(())
}

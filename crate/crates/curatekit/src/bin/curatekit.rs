//! Command-line entry point: one subcommand per module plus a declarative
//! pipeline runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use curatekit::al::{select_batch, train_probe, AlConfig, AlStrategy};
use curatekit::bench::{
    run_al_loop, run_scaling_bench, write_curves_csv, write_scaling_csv, BenchConfig, PeakAlloc,
};
use curatekit::eval::{evaluate_dataset, write_report_csv};
use curatekit::fusion::{fuse_directory, NmsConfig, NmsVariant};
use curatekit::index::{build_index, AnnIndex, IndexConfig, IndexKind};
use curatekit::ood::{auto_tau, filter_batch, fit_gmm, load_gmm, save_gmm, GmmConfig};
use curatekit::pipeline::{exit_code, load_spec, run_pipeline};
use curatekit::pool::{read_labels, read_pool};
use curatekit::{Error, Result};

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

#[derive(Parser)]
#[command(name = "curatekit", version, about = "Scalable data-curation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query approximate nearest-neighbor indexes
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Active-learning batch selection
    Al {
        #[command(subcommand)]
        command: AlCommand,
    },
    /// GMM typicality fitting and out-of-distribution filtering
    Ood {
        #[command(subcommand)]
        command: OodCommand,
    },
    /// Fuse per-model detection annotations by consensus
    Fuse(FuseArgs),
    /// Score fused predictions against ground truth
    Eval(EvalArgs),
    /// Scaling and sample-efficiency benchmarks
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run a declarative multi-stage pipeline
    Pipeline {
        /// Pipeline spec JSON
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build an index from a binary vector pool
    Build {
        /// Index family
        #[arg(long, default_value = "flat")]
        kind: IndexKind,
        /// Coarse list count (default 4*sqrt(N))
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value_t = 8)]
        nprobe: usize,
        /// PQ subspace count
        #[arg(long, default_value_t = 16)]
        pq_m: usize,
        /// Bits per PQ code (4 or 8)
        #[arg(long, default_value_t = 8)]
        pq_bits: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input vector pool
        #[arg(long = "in")]
        input: PathBuf,
        /// Output index file
        #[arg(long)]
        out: PathBuf,
    },
    /// Search an index with queries from a vector pool
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Query vector pool
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Results CSV (query_id,rank,id,distance)
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AlCommand {
    /// Select an acquisition batch
    Select {
        #[arg(long, default_value = "kcenter")]
        strategy: AlStrategy,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        /// Candidate pool size N_c
        #[arg(long, default_value_t = 10_000)]
        nc: usize,
        /// Localized neighborhood size K_s
        #[arg(long, default_value_t = 1_000)]
        ks: usize,
        /// Query one centroid per labeled class instead of one global one
        #[arg(long)]
        per_class: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        index: PathBuf,
        /// CSV label file (id,label)
        #[arg(long)]
        labels: PathBuf,
        /// Selection CSV (id,score)
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OodCommand {
    /// Fit a GMM typicality model on a vector pool
    Fit {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training vector pool
        #[arg(long = "in")]
        input: PathBuf,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter candidates by typicality threshold
    Filter {
        /// Fitted model file
        #[arg(long)]
        gmm: PathBuf,
        /// Threshold: a number, or "auto" for the 5th-percentile quantile of
        /// the training pool (requires --train)
        #[arg(long, default_value = "auto")]
        tau: String,
        /// Training pool for the auto threshold
        #[arg(long)]
        train: Option<PathBuf>,
        /// Candidate vector pool
        #[arg(long = "in")]
        input: PathBuf,
        /// Scores CSV (id,typicality,accepted)
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FuseArgs {
    /// Per-model annotation directories of VOC XML files; the directory name
    /// is the model id
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "standard")]
    variant: NmsVariant,
    /// Support-clustering IoU threshold
    #[arg(long, default_value_t = 0.5)]
    tau_iou: f64,
    /// NMS suppression threshold
    #[arg(long, default_value_t = 0.5)]
    tau_nms: f64,
    /// Soft-NMS Gaussian decay width
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Process images serially instead of in parallel
    #[arg(long)]
    serial: bool,
    /// Output directory (fused XMLs + fusion_audit.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction directory of VOC XML files
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory of VOC XML files
    #[arg(long)]
    gt: PathBuf,
    /// Row label in the report (defaults to the prediction dir name)
    #[arg(long)]
    variant: Option<String>,
    /// Report CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Median-of-3 batch-selection wall-clock and peak memory per scale
    Scaling(BenchArgs),
    /// Sample-efficiency learning curves
    Curves(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Bench config JSON (missing fields take defaults)
    #[arg(long)]
    config: PathBuf,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { command } => run_index(command),
        Command::Al { command } => run_al(command),
        Command::Ood { command } => run_ood(command),
        Command::Fuse(args) => run_fuse(args),
        Command::Eval(args) => run_eval(args),
        Command::Bench { command } => run_bench(command),
        Command::Pipeline { spec } => {
            let spec = load_spec(&spec)?;
            let manifest = run_pipeline(&spec)?;
            println!("{} stage(s) complete; manifest in {}", manifest.entries.len(), spec.artifact_dir.display());
            Ok(())
        }
    }
}

fn run_index(command: IndexCommand) -> Result<()> {
    match command {
        IndexCommand::Build { kind, nlist, nprobe, pq_m, pq_bits, seed, input, out } => {
            let pool = read_pool(&input)?;
            let config =
                IndexConfig { kind, nlist, nprobe, pq_m, pq_bits, seed, ..IndexConfig::default() };
            let index = build_index(&pool, config)?;
            index.save(&out)?;
            println!("built {kind} index over {} vectors ({} bytes)", index.size(), index.memory_bytes());
            Ok(())
        }
        IndexCommand::Search { index, queries, k, out } => {
            let index = AnnIndex::load(&index)?;
            let queries = read_pool(&queries)?;
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["query_id", "rank", "id", "distance"])?;
            for row in 0..queries.count() {
                let neighbors = index.search(queries.vector(row), k)?;
                for (rank, n) in neighbors.iter().enumerate() {
                    writer.write_record([
                        queries.id(row).to_string(),
                        rank.to_string(),
                        n.id.to_string(),
                        n.distance.to_string(),
                    ])?;
                }
            }
            writer.flush().map_err(Error::Io)?;
            Ok(())
        }
    }
}

fn run_al(command: AlCommand) -> Result<()> {
    let AlCommand::Select { strategy, batch, nc, ks, per_class, seed, index, labels, out } =
        command;
    let index = AnnIndex::load(&index)?;
    let labeled = read_labels(&labels)?;
    let config = AlConfig {
        strategy,
        batch_size: batch,
        candidate_pool_size: nc,
        neighborhood_size: ks,
        per_class_centroids: per_class,
        rng_seed: seed,
    };
    let model = if strategy.needs_probe() {
        let vectors = index.reconstruct_batch(labeled.ids())?;
        Some(train_probe(&labeled, &vectors)?)
    } else {
        None
    };
    let outcome = select_batch(&index, &labeled, model.as_ref(), &config)?;
    let mut writer = csv::Writer::from_path(&out)?;
    writer.write_record(["id", "score"])?;
    for (id, score) in outcome.ids.iter().zip(&outcome.scores) {
        writer.write_record([id.to_string(), score.to_string()])?;
    }
    writer.flush().map_err(Error::Io)?;
    if outcome.truncated {
        eprintln!("note: only {} candidates were available", outcome.ids.len());
    }
    Ok(())
}

fn run_ood(command: OodCommand) -> Result<()> {
    match command {
        OodCommand::Fit { k, seed, input, out } => {
            let pool = read_pool(&input)?;
            let config = GmmConfig { k, seed, ..GmmConfig::default() };
            let model = fit_gmm(&pool.as_matrix(), &config)?;
            save_gmm(&model, &out)?;
            println!("fit {}-component GMM on {} vectors", model.k(), pool.count());
            Ok(())
        }
        OodCommand::Filter { gmm, tau, train, input, out } => {
            let model = load_gmm(&gmm)?;
            let tau = if tau == "auto" {
                let train = train.ok_or_else(|| {
                    Error::InvalidConfig("--tau auto requires --train".into())
                })?;
                auto_tau(&model, &read_pool(&train)?.as_matrix())?
            } else {
                tau.parse::<f64>().map_err(|_| {
                    Error::InvalidConfig(format!("tau must be a number or \"auto\", got {tau}"))
                })?
            };
            let pool = read_pool(&input)?;
            let ids: Vec<u64> = pool.ids().collect();
            let outcome = filter_batch(&model, &ids, &pool.as_matrix(), tau)?;
            let accepted: std::collections::BTreeSet<u64> =
                outcome.accepted.iter().copied().collect();
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["id", "typicality", "accepted"])?;
            for (id, score) in ids.iter().zip(&outcome.scores) {
                writer.write_record([
                    id.to_string(),
                    score.to_string(),
                    accepted.contains(id).to_string(),
                ])?;
            }
            writer.flush().map_err(Error::Io)?;
            println!(
                "tau {:.6}: accepted {} of {}",
                outcome.tau,
                outcome.accepted.len(),
                ids.len()
            );
            Ok(())
        }
    }
}

fn run_fuse(args: FuseArgs) -> Result<()> {
    let models: Vec<(String, PathBuf)> = args
        .models
        .iter()
        .map(|dir| {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("model dir {} has no name", dir.display()))
                })?;
            Ok((name, dir.clone()))
        })
        .collect::<Result<_>>()?;
    let config = NmsConfig {
        variant: args.variant,
        tau_iou: args.tau_iou,
        tau_nms: args.tau_nms,
        sigma: args.sigma,
        ensemble: models.iter().map(|(n, _)| n.clone()).collect(),
        ..NmsConfig::default()
    };
    let audits = fuse_directory(&models, &args.out, &config, !args.serial)?;
    println!("fused {} image(s) into {}", audits.len(), args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let report = evaluate_dataset(&args.pred, &args.gt)?;
    let variant = args.variant.unwrap_or_else(|| {
        args.pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    write_report_csv(&[(variant, report)], &args.out)?;
    Ok(())
}

fn run_bench(command: BenchCommand) -> Result<()> {
    let (args, scaling) = match command {
        BenchCommand::Scaling(args) => (args, true),
        BenchCommand::Curves(args) => (args, false),
    };
    let config: BenchConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    if scaling {
        write_scaling_csv(&run_scaling_bench(&config)?, &args.out)?;
    } else {
        write_curves_csv(&run_al_loop(&config)?, &args.out)?;
    }
    Ok(())
}

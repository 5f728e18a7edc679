//! Command-line surface over the pipeline stages.
//!
//! Every subcommand maps onto one library call; the binary only parses
//! flags, loads artifacts, and prints results. Log verbosity comes from
//! `RUST_LOG` (warnings by default).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use hkgnn::checkpoint::{load_checkpoint, save_checkpoint};
use hkgnn::config::RunConfig;
use hkgnn::data::{generate_synthetic, SynthSpec};
use hkgnn::eval::{ranks_jsonl, render_table, report_json};
use hkgnn::pipeline::{
    self, apply_param, build_id, evaluate_stage, load_prepared, parse_sweep_spec, prepare,
    recommend_stage, render_ablation_table, render_sweep_table, run_ablations, run_sweep,
    train_kg_stage, train_stage, AblationVariant, ALL_ABLATIONS,
};
use hkgnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hkgnn",
    version,
    about = "Next-POI recommendation over a hyper-relational knowledge graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw check-in, POI, and friendship files into a split archive
    /// and a graph artifact.
    Prepare {
        /// Tab-separated check-ins: user, POI, timestamp, UTC offset.
        #[arg(long)]
        checkins: PathBuf,
        /// CSV of POIs with coordinates and optional side information.
        #[arg(long)]
        pois: PathBuf,
        /// Tab-separated undirected friendship pairs.
        #[arg(long)]
        friendships: PathBuf,
        /// Directory receiving data.bin and graph.bin.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of POIs counted as least-visited, by ascending
        /// training-visit count.
        #[arg(long, default_value_t = 0.3)]
        least_fraction: f64,
    },
    /// Pretrain entity and relation embeddings on the fact set.
    TrainKg {
        /// Directory written by prepare.
        #[arg(long)]
        data: PathBuf,
        /// TOML settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the refinement stack and sequence model on top of pretrained
    /// embeddings.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Embedding checkpoint from train-kg.
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the held-out check-ins and print the metrics table.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Full checkpoint from train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to examples whose true POI is least-visited.
        #[arg(long)]
        least: bool,
        /// Where to write the flat key-value report
        /// (default: <checkpoint>.report.json).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Where to write per-example ranks
        /// (default: <checkpoint>.ranks.jsonl).
        #[arg(long)]
        ranks: Option<PathBuf>,
    },
    /// Print the top-k next-POI suggestions for one user at a given time.
    Recommend {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw user id as it appears in the check-in file.
        #[arg(long)]
        user: String,
        /// Query time, RFC 3339 with offset, e.g. 2012-07-04T18:30:00+02:00.
        #[arg(long)]
        time: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Write a deterministic synthetic dataset in the raw file formats.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        pois: usize,
        #[arg(long)]
        checkins: usize,
        #[arg(long)]
        seed: u64,
        /// Directory receiving checkins.tsv, pois.csv, friendships.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate once per value of one hyperparameter.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Assignment like d=64,128,256 or gnn.layers=1,2,3.
        #[arg(long)]
        param: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate model variants with components removed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Variants to run; all of them when omitted.
        #[arg(long)]
        variant: Vec<VariantArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Full,
    /// Random entity vectors instead of pretrained ones.
    NoKgInit,
    /// Skip the graph refinement layers.
    NoRefine,
    NoMobility,
    NoSocial,
    NoSideInfo,
}

impl From<VariantArg> for AblationVariant {
    fn from(v: VariantArg) -> AblationVariant {
        match v {
            VariantArg::Full => AblationVariant::Full,
            VariantArg::NoKgInit => AblationVariant::NoKgInit,
            VariantArg::NoRefine => AblationVariant::NoRefine,
            VariantArg::NoMobility => AblationVariant::NoMobility,
            VariantArg::NoSocial => AblationVariant::NoSocial,
            VariantArg::NoSideInfo => AblationVariant::NoSideInfo,
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { checkins, pois, friendships, out, least_fraction } => {
            let summary = prepare(&checkins, &pois, &friendships, least_fraction, &out)?;
            println!("{summary}");
            println!("wrote {} and {}", pipeline::archive_path(&out).display(),
                pipeline::graph_path(&out).display());
        }
        Command::TrainKg { data, config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let prepared = load_prepared(&data)?;
            let (ckpt, losses) = train_kg_stage(&prepared, &cfg)?;
            save_checkpoint(&out, &ckpt)?;
            let last = losses.last().copied().unwrap_or(f64::NAN);
            println!("{} epochs, final loss {last:.6}", losses.len());
            println!("wrote {}", out.display());
        }
        Command::Train { data, kg, config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let prepared = load_prepared(&data)?;
            let kg_ckpt = load_checkpoint(&kg)?;
            let (ckpt, outcome) = train_stage(&prepared, &kg_ckpt, &cfg)?;
            save_checkpoint(&out, &ckpt)?;
            let best = &outcome.epochs[outcome.best_epoch];
            println!(
                "{} epochs ({}), best epoch {}: train loss {:.4}, train Acc@1 {:.4}",
                outcome.epochs.len(),
                if outcome.stopped_early { "stopped early" } else { "full run" },
                outcome.best_epoch + 1,
                best.train_loss,
                best.train_acc1,
            );
            if let Some(v) = best.val_acc1 {
                println!("validation Acc@1 {v:.4}");
            }
            println!("wrote {}", out.display());
        }
        Command::Evaluate { data, checkpoint, least, report, ranks } => {
            let prepared = load_prepared(&data)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let r = evaluate_stage(&prepared, &ckpt, least)?;
            print!("{}", render_table(std::slice::from_ref(&r)));
            let kv = report_json(&r, ckpt.config.hash(), &build_id(&ckpt.config));
            println!("{kv}");
            let report_path = report.unwrap_or_else(|| sibling(&checkpoint, ".report.json"));
            let ranks_path = ranks.unwrap_or_else(|| sibling(&checkpoint, ".ranks.jsonl"));
            write_text(&report_path, &kv)?;
            write_text(&ranks_path, &ranks_jsonl(&r))?;
            println!("wrote {} and {}", report_path.display(), ranks_path.display());
        }
        Command::Recommend { data, checkpoint, user, time, k } => {
            let prepared = load_prepared(&data)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let suggestions = recommend_stage(&prepared, &ckpt, &user, &time, k)?;
            println!("top {} for user {user} at {time}:", suggestions.len());
            for (i, s) in suggestions.iter().enumerate() {
                println!("{:>3}. {}  score {:.4}", i + 1, s.poi_id, s.score);
            }
        }
        Command::Synth { users, pois, checkins, seed, out } => {
            let spec = SynthSpec { n_users: users, n_pois: pois, n_checkins: checkins, seed };
            let files = generate_synthetic(&spec, &out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep { data, config, param, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let prepared = load_prepared(&data)?;
            let (key, values) = parse_sweep_spec(&param)?;
            {
                // Surface a bad parameter name before any training runs.
                let mut probe = cfg.clone();
                apply_param(&mut probe, &key, &values[0])?;
            }
            let rows = run_sweep(&prepared, &cfg, &key, &values)?;
            print!("{}", render_sweep_table(&rows));
        }
        Command::Ablate { data, config, variant, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let prepared = load_prepared(&data)?;
            let variants: Vec<AblationVariant> = if variant.is_empty() {
                ALL_ABLATIONS.to_vec()
            } else {
                variant.into_iter().map(AblationVariant::from).collect()
            };
            let rows = run_ablations(&prepared, &cfg, &variants)?;
            print!("{}", render_ablation_table(&rows));
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

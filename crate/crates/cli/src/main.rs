use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gcfagg::dataset::format::save_dataset_tagged;
use gcfagg::dataset::{apply_missing_mask, generate_synthetic, import_csv, SyntheticSpec};
use gcfagg::experiment::{
    checkpoint_config, metrics_line, raw_baseline, run_ablate, run_embed, run_eval, run_train,
    DataSource, ExperimentConfig,
};
use gcfagg::losses::ContrastiveVariant;
use gcfagg::model::Ablation;
use gcfagg::Error;

#[derive(Parser)]
#[command(name = "gcfagg", version, about = "Multi-view clustering with structure-guided contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-view dataset and print the raw k-means baseline.
    GenData(GenDataArgs),
    /// Convert per-view CSV files into a dataset directory.
    ImportCsv(ImportCsvArgs),
    /// Pretrain, fine-tune, cluster; write checkpoint, log and metrics.
    Train(TrainArgs),
    /// Cluster a dataset with a trained checkpoint.
    Eval(InferArgs),
    /// Export Z, H and Ĥ of a trained checkpoint.
    Embed(InferArgs),
    /// Train the full model and every ablation, then tabulate.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    k: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    views: u64,
    #[arg(long, default_value_t = 10)]
    latent_dim: usize,
    /// Comma-separated widths, one per view (default 20,30,40,... by view).
    #[arg(long, value_delimiter = ',')]
    view_dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long, default_value_t = 0)]
    missing_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportCsvArgs {
    /// One CSV per view, in view order.
    #[arg(long = "view", required = true)]
    views: Vec<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "imported")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    #[arg(long, value_parser = parse_variant)]
    cl_variant: Option<ContrastiveVariant>,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Any config key, as KEY=VALUE. Repeatable; applied after the flags above.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also train the remaining contrastive-loss variants.
    #[arg(long)]
    cl_variants: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<ContrastiveVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self, base: Option<ExperimentConfig>) -> gcfagg::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(base)) => base,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.set("data", d)?;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.lambda {
            t.loss.lambda = v;
        }
        if let Some(v) = self.tau {
            t.loss.tau = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.pretrain_epochs {
            t.pretrain_epochs = v;
        }
        if let Some(v) = self.finetune_epochs {
            t.finetune_epochs = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.ablation {
            t.ablation = v;
        }
        if let Some(v) = self.cl_variant {
            t.loss.variant = v;
        }
        if let Some(v) = self.eval_every {
            t.eval_every = v;
        }
        if let Some(v) = self.missing_rate {
            cfg.missing_rate = v;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn with_out(mut cfg: ExperimentConfig, out: &Option<PathBuf>) -> ExperimentConfig {
    if let Some(o) = out {
        cfg.out = o.clone();
    }
    cfg
}

fn gen_data(a: &GenDataArgs) -> gcfagg::Result<()> {
    let views = a.views as usize;
    let spec = SyntheticSpec {
        n_samples: a.n as usize,
        n_clusters: a.k as usize,
        n_views: views,
        latent_dim: a.latent_dim,
        view_dims: a
            .view_dims
            .clone()
            .unwrap_or_else(|| (0..views).map(|v| 20 + 10 * v).collect()),
        cluster_separation: a.separation,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut ds = generate_synthetic(&spec)?;
    let mut cfg = ExperimentConfig {
        data: DataSource::Synthetic(spec),
        missing_rate: a.missing_rate,
        missing_seed: a.missing_seed,
        normalize: false,
        ..ExperimentConfig::default()
    };
    cfg.out = a.out.clone();
    let baseline = raw_baseline(&ds, 0)?;
    if a.missing_rate > 0.0 {
        ds = apply_missing_mask(&ds, a.missing_rate, a.missing_seed)
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    save_dataset_tagged(&ds, &a.out, Some(&cfg.hash()))?;
    println!(
        "wrote {} ({} samples, {} views) to {}",
        ds.name,
        ds.n_samples(),
        ds.n_views(),
        a.out.display()
    );
    println!("raw k-means baseline: {}", metrics_line(baseline.as_ref()));
    Ok(())
}

fn import(a: &ImportCsvArgs) -> gcfagg::Result<()> {
    let ds = import_csv(&a.name, &a.views, a.labels.as_deref())?;
    save_dataset_tagged(&ds, &a.out, None)?;
    println!(
        "imported {} samples, {} views, {} clusters into {}",
        ds.n_samples(),
        ds.n_views(),
        ds.n_clusters,
        a.out.display()
    );
    Ok(())
}

fn infer_config(a: &InferArgs) -> gcfagg::Result<ExperimentConfig> {
    let saved = if a.config.config.is_none() {
        Some(checkpoint_config(&a.checkpoint)?)
    } else {
        None
    };
    a.config.resolve(saved)
}

fn run(cli: Cli) -> gcfagg::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::ImportCsv(a) => import(&a),
        Command::Train(a) => {
            let cfg = with_out(a.config.resolve(None)?, &a.out);
            let report = run_train(&cfg)?;
            println!("config_hash={}", report.config_hash);
            println!("final: {}", metrics_line(report.metrics.as_ref()));
            Ok(())
        }
        Command::Eval(a) => {
            let cfg = infer_config(&a)?;
            let (_, metrics) = run_eval(&a.checkpoint, &cfg, &a.out)?;
            println!("final: {}", metrics_line(metrics.as_ref()));
            Ok(())
        }
        Command::Embed(a) => {
            let cfg = infer_config(&a)?;
            run_embed(&a.checkpoint, &cfg, &a.out)?;
            println!("embeddings written to {}", a.out.display());
            Ok(())
        }
        Command::Ablate(a) => {
            let cfg = with_out(a.config.resolve(None)?, &a.out);
            let rows = run_ablate(&cfg, a.cl_variants)?;
            println!("{:<22} {:>8} {:>8} {:>8}", "variant", "ACC", "NMI", "PUR");
            for r in rows {
                match r.metrics {
                    Some(m) => println!("{:<22} {:>8.4} {:>8.4} {:>8.4}", r.name, m.acc, m.nmi, m.pur),
                    None => println!("{:<22} {:>8} {:>8} {:>8}", r.name, "-", "-", "-"),
                }
            }
            Ok(())
        }
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GCFAGG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GCFAGG_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numeric() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

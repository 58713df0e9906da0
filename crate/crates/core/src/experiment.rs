//! Reproducible experiments: a flat `key=value` configuration, dataset
//! preparation, and the train / eval / embed / ablate / gen-data pipelines
//! that write every artefact under one output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::format::{parse_key_values, write_u32s};
use crate::dataset::{
    apply_missing_mask, generate_synthetic, load_dataset, normalize_minmax, write_matrix,
    MultiViewDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::losses::ContrastiveVariant;
use crate::metrics::{evaluate, kmeans, ClusterMetrics, ClusteringResult, KMeansConfig};
use crate::model::{Ablation, Architecture, GcfaggModel};
use crate::trainer::{train, TrainConfig, TrainLog};

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Fraction of samples that lose at least one view.
    pub missing_rate: f64,
    pub missing_seed: u64,
    /// Per-view min-max scaling before training.
    pub normalize: bool,
    pub train: TrainConfig,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub projector_hidden: usize,
    pub consensus_dim: usize,
    pub ffn_dim: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = Architecture::new(Vec::new());
        Self {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            missing_rate: 0.0,
            missing_seed: 0,
            normalize: true,
            train: TrainConfig::default(),
            encoder_hidden: arch.encoder_hidden,
            latent_dim: arch.latent_dim,
            projector_hidden: arch.projector_hidden,
            consensus_dim: arch.consensus_dim,
            ffn_dim: arch.ffn_dim,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

const SYNTHETIC_KEYS: [&str; 8] = [
    "synthetic.n_samples",
    "synthetic.n_clusters",
    "synthetic.n_views",
    "synthetic.latent_dim",
    "synthetic.view_dims",
    "synthetic.separation",
    "synthetic.noise_sigma",
    "synthetic.seed",
];

impl ExperimentConfig {
    /// Every key accepted by [`ExperimentConfig::set`], in file order.
    pub fn keys() -> Vec<&'static str> {
        let mut keys = vec!["data"];
        keys.extend(SYNTHETIC_KEYS);
        keys.extend([
            "missing_rate",
            "missing_seed",
            "normalize",
            "pretrain_epochs",
            "finetune_epochs",
            "batch_size",
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
            "seed",
            "lambda",
            "tau",
            "denom_epsilon",
            "cl_variant",
            "ablation",
            "eval_every",
            "structure_cap",
            "encoder_hidden",
            "latent_dim",
            "projector_hidden",
            "consensus_dim",
            "ffn_dim",
            "out",
        ]);
        keys
    }

    fn synthetic_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic(spec) => Ok(spec),
            DataSource::Directory(_) => Err(Error::Config(format!(
                "{key} only applies when data=synthetic"
            ))),
        }
    }

    /// Sets one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic(SyntheticSpec::default())
                } else {
                    DataSource::Directory(PathBuf::from(value))
                }
            }
            "synthetic.n_samples" => self.synthetic_mut(key)?.n_samples = parse(key, value)?,
            "synthetic.n_clusters" => self.synthetic_mut(key)?.n_clusters = parse(key, value)?,
            "synthetic.n_views" => self.synthetic_mut(key)?.n_views = parse(key, value)?,
            "synthetic.latent_dim" => self.synthetic_mut(key)?.latent_dim = parse(key, value)?,
            "synthetic.view_dims" => self.synthetic_mut(key)?.view_dims = parse_list(key, value)?,
            "synthetic.separation" => {
                self.synthetic_mut(key)?.cluster_separation = parse(key, value)?
            }
            "synthetic.noise_sigma" => self.synthetic_mut(key)?.noise_sigma = parse(key, value)?,
            "synthetic.seed" => self.synthetic_mut(key)?.seed = parse(key, value)?,
            "missing_rate" => self.missing_rate = parse(key, value)?,
            "missing_seed" => self.missing_seed = parse(key, value)?,
            "normalize" => self.normalize = parse(key, value)?,
            "pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "finetune_epochs" => t.finetune_epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lambda" => t.loss.lambda = parse(key, value)?,
            "tau" => t.loss.tau = parse(key, value)?,
            "denom_epsilon" => t.loss.denom_epsilon = parse(key, value)?,
            "cl_variant" => t.loss.variant = value.trim().parse()?,
            "ablation" => t.ablation = value.trim().parse()?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "structure_cap" => t.structure_cap = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse_list(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "projector_hidden" => self.projector_hidden = parse(key, value)?,
            "consensus_dim" => self.consensus_dim = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body. Keys absent from the text keep their
    /// defaults; `data` is applied first so synthetic keys can follow it.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let kv = parse_key_values(text, origin).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        if let Some(d) = kv.get("data") {
            cfg.set("data", d)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "data") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    fn body(&self, with_out: bool) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        match &self.data {
            DataSource::Directory(p) => kv("data", p.display().to_string()),
            DataSource::Synthetic(spec) => {
                kv("data", "synthetic".into());
                kv("synthetic.n_samples", spec.n_samples.to_string());
                kv("synthetic.n_clusters", spec.n_clusters.to_string());
                kv("synthetic.n_views", spec.n_views.to_string());
                kv("synthetic.latent_dim", spec.latent_dim.to_string());
                kv("synthetic.view_dims", join(&spec.view_dims));
                kv("synthetic.separation", spec.cluster_separation.to_string());
                kv("synthetic.noise_sigma", spec.noise_sigma.to_string());
                kv("synthetic.seed", spec.seed.to_string());
            }
        }
        kv("missing_rate", self.missing_rate.to_string());
        kv("missing_seed", self.missing_seed.to_string());
        kv("normalize", self.normalize.to_string());
        kv("pretrain_epochs", t.pretrain_epochs.to_string());
        kv("finetune_epochs", t.finetune_epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("adam_beta1", t.adam_beta1.to_string());
        kv("adam_beta2", t.adam_beta2.to_string());
        kv("adam_eps", t.adam_eps.to_string());
        kv("seed", t.seed.to_string());
        kv("lambda", t.loss.lambda.to_string());
        kv("tau", t.loss.tau.to_string());
        kv("denom_epsilon", t.loss.denom_epsilon.to_string());
        kv("cl_variant", t.loss.variant.to_string());
        kv("ablation", t.ablation.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv("structure_cap", t.structure_cap.to_string());
        kv("encoder_hidden", join(&self.encoder_hidden));
        kv("latent_dim", self.latent_dim.to_string());
        kv("projector_hidden", self.projector_hidden.to_string());
        kv("consensus_dim", self.consensus_dim.to_string());
        kv("ffn_dim", self.ffn_dim.to_string());
        if with_out {
            kv("out", self.out.display().to_string());
        }
        s
    }

    /// The full config as it would be written to a file.
    pub fn to_text(&self) -> String {
        self.body(true)
    }

    /// The config without the `out` line: everything that shapes results.
    pub fn hashed_text(&self) -> String {
        self.body(false)
    }

    /// SHA-256 of [`ExperimentConfig::hashed_text`], as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.hashed_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(0.0..=0.7).contains(&self.missing_rate) {
            return Err(Error::Config(format!(
                "missing_rate must be in [0, 0.7], got {}",
                self.missing_rate
            )));
        }
        self.architecture(vec![1]).validate()
    }

    pub fn architecture(&self, view_dims: Vec<usize>) -> Architecture {
        Architecture {
            view_dims,
            encoder_hidden: self.encoder_hidden.clone(),
            latent_dim: self.latent_dim,
            projector_hidden: self.projector_hidden,
            consensus_dim: self.consensus_dim,
            ffn_dim: self.ffn_dim,
            ablation: self.train.ablation,
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            seed: self.train.seed,
            ..KMeansConfig::default()
        }
    }

    /// Load or generate, then mask and normalise as configured.
    pub fn prepare_dataset(&self) -> Result<MultiViewDataset> {
        let mut ds = match &self.data {
            DataSource::Directory(p) => load_dataset(p)?,
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        };
        if self.missing_rate > 0.0 {
            ds = apply_missing_mask(&ds, self.missing_rate, self.missing_seed)?;
        }
        if self.normalize {
            ds = normalize_minmax(&ds).0;
        }
        Ok(ds)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub const METRICS_HEADER: &str = "acc,nmi,pur,config_hash";

fn metrics_csv(metrics: Option<&ClusterMetrics>, hash: &str) -> String {
    match metrics {
        Some(m) => format!("{METRICS_HEADER}\n{},{},{},{hash}\n", m.acc, m.nmi, m.pur),
        None => format!("{METRICS_HEADER}\n,,,{hash}\n"),
    }
}

/// One-line summary printed by the commands.
pub fn metrics_line(metrics: Option<&ClusterMetrics>) -> String {
    match metrics {
        Some(m) => format!("ACC={:.4} NMI={:.4} PUR={:.4}", m.acc, m.nmi, m.pur),
        None => "no labels: metrics unavailable".into(),
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: GcfaggModel,
    pub log: TrainLog,
    pub clustering: ClusteringResult,
    pub metrics: Option<ClusterMetrics>,
    pub config_hash: String,
}

/// Trains from scratch and writes under `cfg.out`:
/// `config.txt`, `checkpoint/`, `train_log.csv`, `metrics.csv`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = cfg.prepare_dataset()?;
    let hash = cfg.hash();
    let mut model = GcfaggModel::new(cfg.architecture(ds.view_dims()), cfg.train.seed)?;
    log::info!(
        "training on {} ({} samples, {} views), config {}",
        ds.name,
        ds.n_samples(),
        ds.n_views(),
        &hash[..12]
    );
    let run = train(&mut model, &ds, &cfg.train)?;
    let (clustering, metrics) = model.cluster(&ds, &cfg.kmeans_config(), cfg.train.structure_cap)?;

    create_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("config.txt"),
        format!("# config_hash={hash}\n{}", cfg.to_text()),
    )?;
    let ck = cfg.out.join("checkpoint");
    save_checkpoint(&ck, &model, Some(&run.optimizer), Some(&hash))?;
    // without `out`, so the checkpoint bytes depend only on the hashed config
    write_file(
        &ck.join("config.txt"),
        format!("# config_hash={hash}\n{}", cfg.hashed_text()),
    )?;
    let mut log_bytes = Vec::new();
    run.log.write_csv(&mut log_bytes, &hash)?;
    write_file(&cfg.out.join("train_log.csv"), log_bytes)?;
    write_file(&cfg.out.join("metrics.csv"), metrics_csv(metrics.as_ref(), &hash))?;
    Ok(TrainReport {
        model,
        log: run.log,
        clustering,
        metrics,
        config_hash: hash,
    })
}

/// The config stored next to a checkpoint by [`run_train`].
pub fn checkpoint_config(checkpoint_dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(&checkpoint_dir.join("config.txt"))
}

fn load_compatible(checkpoint_dir: &Path, ds: &MultiViewDataset) -> Result<Checkpoint> {
    let ck = load_checkpoint(checkpoint_dir)?;
    let expected = &ck.model.arch.view_dims;
    if expected.len() != ds.n_views() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects V={} views, dataset has V={}",
            expected.len(),
            ds.n_views()
        )));
    }
    if *expected != ds.view_dims() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects view widths {:?}, dataset has {:?}",
            expected,
            ds.view_dims()
        )));
    }
    Ok(ck)
}

/// k-means on Ĥ of a stored model; writes `metrics.csv` under `out`.
pub fn run_eval(
    checkpoint_dir: &Path,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(ClusteringResult, Option<ClusterMetrics>)> {
    let ds = cfg.prepare_dataset()?;
    let ck = load_compatible(checkpoint_dir, &ds)?;
    let (clustering, metrics) = ck.model.cluster(&ds, &cfg.kmeans_config(), cfg.train.structure_cap)?;
    create_dir(out)?;
    write_file(&out.join("metrics.csv"), metrics_csv(metrics.as_ref(), &cfg.hash()))?;
    Ok((clustering, metrics))
}

/// Writes `z.mvds`, `h.mvds`, `hhat.mvds`, `labels.bin` (when labelled)
/// and an `embed.txt` manifest under `out`.
pub fn run_embed(checkpoint_dir: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.prepare_dataset()?;
    let ck = load_compatible(checkpoint_dir, &ds)?;
    let emb = ck.model.embed(&ds, cfg.train.structure_cap)?;
    create_dir(out)?;
    write_matrix(out.join("z.mvds"), &emb.z)?;
    write_matrix(out.join("h.mvds"), &emb.h_concat)?;
    write_matrix(out.join("hhat.mvds"), &emb.hhat)?;
    let mut manifest = format!(
        "config_hash={}\nsamples={}\nz={}x{}\nh={}x{}\nhhat={}x{}\n",
        cfg.hash(),
        ds.n_samples(),
        emb.z.rows(),
        emb.z.cols(),
        emb.h_concat.rows(),
        emb.h_concat.cols(),
        emb.hhat.rows(),
        emb.hhat.cols()
    );
    if let Some(labels) = &ds.labels {
        write_u32s(&out.join("labels.bin"), labels)?;
        manifest.push_str("labels=labels.bin\n");
    }
    write_file(&out.join("embed.txt"), manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub metrics: Option<ClusterMetrics>,
    pub final_loss: Option<f64>,
}

/// Trains the full model and both ablations (plus, optionally, the other
/// contrastive variants) into subdirectories of `cfg.out` and writes
/// `ablation.csv`.
pub fn run_ablate(cfg: &ExperimentConfig, cl_variants: bool) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let mut runs: Vec<(String, ExperimentConfig)> = Vec::new();
    for ablation in Ablation::ALL {
        let mut c = cfg.clone();
        c.train.ablation = ablation;
        c.out = cfg.out.join(ablation.as_str());
        runs.push((ablation.to_string(), c));
    }
    if cl_variants {
        for variant in ContrastiveVariant::ALL {
            if variant == cfg.train.loss.variant {
                continue;
            }
            let mut c = cfg.clone();
            c.train.ablation = Ablation::Full;
            c.train.loss.variant = variant;
            c.out = cfg.out.join(format!("cl_{variant}"));
            runs.push((variant.to_string(), c));
        }
    }
    let mut rows = Vec::new();
    for (name, c) in runs {
        log::info!("ablate: {name}");
        let report = run_train(&c)?;
        rows.push(AblationRow {
            name,
            metrics: report.metrics,
            final_loss: report.log.records.last().map(|r| r.total),
        });
    }
    let hash = cfg.hash();
    let mut table = String::from("variant,acc,nmi,pur,final_loss,config_hash\n");
    for r in &rows {
        let m = r.metrics;
        let cell = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        writeln!(
            table,
            "{},{},{},{},{},{hash}",
            r.name,
            cell(m.map(|m| m.acc)),
            cell(m.map(|m| m.nmi)),
            cell(m.map(|m| m.pur)),
            cell(r.final_loss)
        )
        .unwrap();
    }
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("ablation.csv"), table)?;
    Ok(rows)
}

/// Raw-feature baseline: k-means on the concatenated views.
pub fn raw_baseline(ds: &MultiViewDataset, seed: u64) -> Result<Option<ClusterMetrics>> {
    let cfg = KMeansConfig {
        seed,
        ..KMeansConfig::default()
    };
    let result = kmeans(&ds.concatenated(), ds.n_clusters, &cfg)?;
    ds.labels.as_ref().map(|t| evaluate(&result.labels, t)).transpose()
}

//! Two-phase training: reconstruction pretraining of the autoencoders, then
//! joint fine-tuning of every parameter on L = L_r + λ L_c.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::gcfagg::check_row_stochastic;
use crate::losses::{reconstruction_loss, sgcl_loss, total_loss, LossConfig};
use crate::metrics::{ClusterMetrics, KMeansConfig};
use crate::model::{Ablation, GcfaggModel};
use crate::tensor::{Graph, Tensor, Var};

const PRETRAIN_SHUFFLE_STREAM: u64 = 2;
const FINETUNE_SHUFFLE_STREAM: u64 = 3;

/// Largest deviation from 1 tolerated in a row of S during training.
pub const ROW_SUM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub ablation: Ablation,
    /// Epochs between clustering evaluations; 0 turns them off.
    pub eval_every: usize,
    /// Largest number of samples pushed through one structure matrix at
    /// evaluation time.
    pub structure_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 200,
            finetune_epochs: 100,
            batch_size: 256,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
            ablation: Ablation::Full,
            eval_every: 0,
            structure_cap: 20_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.batch_size < 2 && self.finetune_epochs > 0 {
            return Err(Error::Config(
                "batch_size must be at least 2 when fine-tuning (the contrastive loss needs negatives)".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if self.structure_cap == 0 {
            return Err(Error::Config("structure_cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// λ after the ablation switch.
    pub fn effective_loss(&self) -> LossConfig {
        let mut loss = self.loss.clone();
        if self.ablation == Ablation::NoSgcl {
            loss.lambda = 0.0;
        }
        loss
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Precondition(format!(
            "adam_step: {} parameters, {} gradients, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len().min(state.v.len())
        )));
    }
    for (i, p) in params.iter().enumerate() {
        for other in [&grads[i], &state.m[i], &state.v[i]] {
            if other.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: other.shape(),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (x, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Zero-based within the phase.
    pub epoch: usize,
    pub recon: f64,
    pub contrastive: f64,
    pub total: f64,
    /// Denominator floor hits over the epoch.
    pub clamps: usize,
    pub metrics: Option<ClusterMetrics>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: [&str; 11] = [
    "phase", "epoch", "L_r", "L_c", "L", "clamps", "acc", "nmi", "pur", "seconds", "config_hash",
];

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    /// CSV with one row per epoch. Floats are written in shortest
    /// round-trip form; missing metrics are empty cells.
    pub fn write_csv<W: Write>(&self, out: W, config_hash: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER)?;
        let opt = |m: Option<f64>| m.map_or_else(String::new, |x| x.to_string());
        for r in &self.records {
            w.write_record([
                r.phase.as_str().to_string(),
                r.epoch.to_string(),
                r.recon.to_string(),
                r.contrastive.to_string(),
                r.total.to_string(),
                r.clamps.to_string(),
                opt(r.metrics.map(|m| m.acc)),
                opt(r.metrics.map(|m| m.nmi)),
                opt(r.metrics.map(|m| m.pur)),
                format!("{:.6}", r.seconds),
                config_hash.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<training log>"), e))?;
        Ok(())
    }
}

/// Mini-batches of one epoch: a fresh permutation cut into runs of
/// `batch_size`, the last one possibly shorter.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn batch_inputs(ds: &MultiViewDataset, rows: &[usize]) -> Vec<Tensor> {
    ds.views.iter().map(|v| v.select_rows(rows)).collect()
}

fn batch_mask(g: &mut Graph, ds: &MultiViewDataset, rows: &[usize]) -> Option<Vec<Var>> {
    if ds.is_complete() {
        return None;
    }
    Some((0..ds.n_views()).map(|v| g.constant(ds.mask_column(v, rows))).collect())
}

fn check_dataset(model: &GcfaggModel, ds: &MultiViewDataset) -> Result<()> {
    if ds.n_samples() == 0 {
        return Err(Error::Precondition("cannot train on an empty dataset".into()));
    }
    if ds.view_dims() != model.arch.view_dims {
        return Err(Error::Incompatible(format!(
            "model view widths {:?} do not match dataset {:?}",
            model.arch.view_dims,
            ds.view_dims()
        )));
    }
    Ok(())
}

fn check_params(model: &GcfaggModel, epoch: usize) -> Result<()> {
    model
        .all_finite()
        .map_err(|name| Error::NonFiniteParam { name, epoch })
}

fn evaluate_now(
    model: &GcfaggModel,
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
    epoch: usize,
    epochs: usize,
) -> Result<Option<ClusterMetrics>> {
    let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == epochs);
    if !due || ds.labels.is_none() {
        return Ok(None);
    }
    let kcfg = KMeansConfig {
        seed: cfg.seed,
        ..KMeansConfig::default()
    };
    Ok(model.cluster(ds, &kcfg, cfg.structure_cap)?.1)
}

fn non_finite(epoch: usize, batch: usize, recon: f64, contrastive: f64, total: f64) -> Error {
    log::error!(
        "non-finite loss at epoch {epoch}, batch {batch}: L_r={recon} L_c={contrastive} L={total}"
    );
    Error::NonFinite {
        epoch,
        batch,
        recon,
        contrastive,
        total,
    }
}

/// Adam on L_r over the encoder and decoder parameters only.
pub fn pretrain(model: &mut GcfaggModel, ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    check_dataset(model, ds)?;
    let ae = model.autoencoder_len();
    let mut state = AdamState::new(&model.store.values()[..ae]);
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PRETRAIN_SHUFFLE_STREAM);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.pretrain_epochs {
        let start = Instant::now();
        let batches = epoch_batches(ds.n_samples(), cfg.batch_size, &mut rng);
        let mut recon_sum = 0.0;
        for (b, rows) in batches.iter().enumerate() {
            let inputs = batch_inputs(ds, rows);
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, |id| model.is_autoencoder_param(id));
            let (xs, _, recons) = model.forward_autoencoders(&mut g, &p, &inputs)?;
            let mask = batch_mask(&mut g, ds, rows);
            let loss = reconstruction_loss(&mut g, &xs, &recons, mask.as_deref())?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(epoch, b, value, 0.0, value));
            }
            g.backward(loss)?;
            let grads = model.store.gradients(&g, &p);
            adam_step(&mut model.store.values_mut()[..ae], &grads[..ae], &mut state, &adam)?;
            recon_sum += value;
        }
        check_params(model, epoch)?;
        let recon = recon_sum / batches.len() as f64;
        log.records.push(EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            recon,
            contrastive: 0.0,
            total: recon,
            clamps: 0,
            metrics: None,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("pretrain epoch {epoch}: L_r={recon:.6}");
    }
    Ok(log)
}

/// Adam on L_r + λ L_c over every parameter. The optimizer state is
/// created fresh unless `state` is given.
pub fn finetune(
    model: &mut GcfaggModel,
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
    state: Option<AdamState>,
) -> Result<(TrainLog, AdamState)> {
    cfg.validate()?;
    check_dataset(model, ds)?;
    let mut state = state.unwrap_or_else(|| AdamState::new(model.store.values()));
    let adam = cfg.adam();
    let loss_cfg = cfg.effective_loss();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(FINETUNE_SHUFFLE_STREAM);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.finetune_epochs {
        let start = Instant::now();
        let batches = epoch_batches(ds.n_samples(), cfg.batch_size, &mut rng);
        let (mut recon_sum, mut contrastive_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut clamps = 0;
        for (b, rows) in batches.iter().enumerate() {
            let inputs = batch_inputs(ds, rows);
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, |_| true);
            let f = model.forward(&mut g, &p, &inputs)?;
            check_row_stochastic(g.value(f.s), ROW_SUM_TOLERANCE)?;
            let mask = batch_mask(&mut g, ds, rows);
            let lr = reconstruction_loss(&mut g, &f.inputs, &f.reconstructions, mask.as_deref())?;
            let lc = sgcl_loss(&mut g, f.hhat, &f.h_views, f.s, mask.as_deref(), &loss_cfg)?;
            let total = total_loss(&mut g, lr, lc.loss, &loss_cfg)?;
            let (r, c, t) = (g.value(lr).item(), g.value(lc.loss).item(), g.value(total).item());
            if !(r.is_finite() && c.is_finite() && t.is_finite()) {
                return Err(non_finite(epoch, b, r, c, t));
            }
            g.backward(total)?;
            let grads = model.store.gradients(&g, &p);
            adam_step(model.store.values_mut(), &grads, &mut state, &adam)?;
            recon_sum += r;
            contrastive_sum += c;
            total_sum += t;
            clamps += lc.denominator_clamps;
        }
        check_params(model, epoch)?;
        let nb = batches.len() as f64;
        let metrics = evaluate_now(model, ds, cfg, epoch, cfg.finetune_epochs)?;
        let record = EpochRecord {
            phase: Phase::Finetune,
            epoch,
            recon: recon_sum / nb,
            contrastive: contrastive_sum / nb,
            total: total_sum / nb,
            clamps,
            metrics,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "finetune epoch {epoch}: L_r={:.6} L_c={:.6} L={:.6}",
            record.recon,
            record.contrastive,
            record.total
        );
        log.records.push(record);
    }
    Ok((log, state))
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub log: TrainLog,
    /// Optimizer state at the end of fine-tuning.
    pub optimizer: AdamState,
}

/// Pretraining, fresh heads for `cfg.ablation`, then fine-tuning.
pub fn train(model: &mut GcfaggModel, ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let mut log = pretrain(model, ds, cfg)?;
    model.reinit_heads(cfg.ablation, cfg.seed)?;
    let (fine, optimizer) = finetune(model, ds, cfg, None)?;
    log.extend(fine);
    Ok(TrainRun { log, optimizer })
}

/// Moving average over `window` consecutive values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::model::Architecture;

    fn adam_cfg() -> AdamConfig {
        AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut params = vec![Tensor::from_rows(&[[1.0, -2.0]]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        for _ in 0..3 {
            adam_step(&mut params, &[Tensor::zeros(1, 2)], &mut state, &adam_cfg()).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut params = vec![Tensor::from_rows(&[[1.0, 1.0]]).unwrap()];
        let grads = vec![Tensor::from_rows(&[[0.5, -2.0]]).unwrap()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &adam_cfg()).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps)
        let expected = [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1.0 + 0.1 * 2.0 / (2.0 + 1e-8)];
        for (a, e) in params[0].data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        assert!((state.m[0].get(0, 0) - 0.05).abs() < 1e-15);
        assert!((state.v[0].get(0, 1) - 0.004).abs() < 1e-15);
    }

    #[test]
    fn adam_second_step_by_hand() {
        let cfg = adam_cfg();
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, &cfg).unwrap();
        adam_step(&mut params, &[Tensor::scalar(3.0)], &mut state, &cfg).unwrap();
        let m: f64 = 0.9 * 0.1 + 0.1 * 3.0;
        let v: f64 = 0.999 * 0.001 + 0.001 * 9.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-14);
    }

    #[test]
    fn adam_equal_gradients_equal_updates() {
        let mut params = vec![Tensor::from_rows(&[[0.3, 0.3]]).unwrap()];
        let mut state = AdamState::new(&params);
        for k in 0..5 {
            let g = (k as f64 - 2.0) * 0.7;
            adam_step(&mut params, &[Tensor::from_rows(&[[g, g]]).unwrap()], &mut state, &adam_cfg()).unwrap();
            assert_eq!(params[0].get(0, 0), params[0].get(0, 1));
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[Tensor::zeros(1, 2)], &mut state, &adam_cfg());
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert!(adam_step(&mut params, &[], &mut state, &adam_cfg()).is_err());
    }

    #[test]
    fn batches_cover_everything_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let one = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(one.validate().unwrap_err().is_config());
        let ok = TrainConfig {
            batch_size: 1,
            finetune_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smoothed(&[1.0], 2).is_empty());
    }

    fn tiny() -> (GcfaggModel, MultiViewDataset) {
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: 30,
            n_views: 2,
            view_dims: vec![6, 5],
            latent_dim: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let arch = Architecture {
            view_dims: vec![6, 5],
            encoder_hidden: vec![8],
            latent_dim: 4,
            projector_hidden: 6,
            consensus_dim: 4,
            ffn_dim: 0,
            ablation: Ablation::Full,
        };
        (GcfaggModel::new(arch, 5).unwrap(), ds)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            pretrain_epochs: 3,
            finetune_epochs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let (mut model, ds) = tiny();
        let before = model.clone();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            ..small_cfg()
        };
        assert!(pretrain(&mut model, &ds, &cfg).unwrap().is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn pretrain_touches_only_autoencoders() {
        let (mut model, ds) = tiny();
        let before = model.clone();
        let log = pretrain(&mut model, &ds, &small_cfg()).unwrap();
        assert_eq!(log.len(), 3);
        let ae = model.autoencoder_len();
        assert_ne!(&model.store.values()[..ae], &before.store.values()[..ae]);
        assert_eq!(&model.store.values()[ae..], &before.store.values()[ae..]);
    }

    #[test]
    fn training_is_deterministic() {
        let (mut a, ds) = tiny();
        let mut b = a.clone();
        let ra = train(&mut a, &ds, &small_cfg()).unwrap();
        let rb = train(&mut b, &ds, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.optimizer, rb.optimizer);
        let strip = |l: &TrainLog| {
            l.records
                .iter()
                .map(|r| (r.epoch, r.recon, r.contrastive, r.total, r.clamps))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&ra.log), strip(&rb.log));
    }

    #[test]
    fn zero_lambda_matches_no_sgcl() {
        let (mut a, ds) = tiny();
        let mut b = a.clone();
        let mut lam0 = small_cfg();
        lam0.loss.lambda = 0.0;
        let no_sgcl = TrainConfig {
            ablation: Ablation::NoSgcl,
            ..small_cfg()
        };
        train(&mut a, &ds, &lam0).unwrap();
        train(&mut b, &ds, &no_sgcl).unwrap();
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn log_csv_has_one_row_per_epoch() {
        let (mut model, ds) = tiny();
        let cfg = TrainConfig {
            eval_every: 1,
            ..small_cfg()
        };
        let run = train(&mut model, &ds, &cfg).unwrap();
        let mut buf = Vec::new();
        run.log.write_csv(&mut buf, "abc").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("phase,epoch,L_r,L_c,L,clamps,acc,nmi,pur,seconds"));
        assert!(lines[1].starts_with("pretrain,0,"));
        assert!(lines[6].starts_with("finetune,2,"));
        assert!(run.log.phase(Phase::Finetune).all(|r| r.metrics.is_some()));
    }

    #[test]
    fn masked_training_runs() {
        let (mut model, ds) = tiny();
        let ds = crate::dataset::apply_missing_mask(&ds, 0.5, 3).unwrap();
        let run = train(&mut model, &ds, &small_cfg()).unwrap();
        assert!(run.log.records.iter().all(|r| r.total.is_finite()));
    }
}

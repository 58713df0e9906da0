//! Reconstruction loss, the structure-guided contrastive loss and its
//! ablation variants, and the combined objective.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::gcfagg::check_row_stochastic;
use crate::tensor::{ClampKind, Graph, Tensor, Var};

/// Row norms are floored here before cosine similarities are formed.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

static ZERO_NORM_WARNINGS: AtomicUsize = AtomicUsize::new(0);

/// Which contrastive objective to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastiveVariant {
    /// Consensus-vs-view pairs, negatives weighted by 1 − S_ij.
    Sgcl,
    /// View-vs-view InfoNCE with unweighted negatives.
    StandardCl,
    /// View-vs-view InfoNCE, negatives weighted by 1 − S_ij.
    StandardClWithS,
    /// Consensus-vs-view pairs without the 1 − S_ij weight.
    SgclWithoutS,
}

impl ContrastiveVariant {
    pub const ALL: [ContrastiveVariant; 4] = [
        ContrastiveVariant::Sgcl,
        ContrastiveVariant::StandardCl,
        ContrastiveVariant::StandardClWithS,
        ContrastiveVariant::SgclWithoutS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContrastiveVariant::Sgcl => "sgcl",
            ContrastiveVariant::StandardCl => "standard_cl",
            ContrastiveVariant::StandardClWithS => "standard_cl_with_S",
            ContrastiveVariant::SgclWithoutS => "sgcl_without_S",
        }
    }
}

impl fmt::Display for ContrastiveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContrastiveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown contrastive variant {s:?} (expected sgcl, standard_cl, standard_cl_with_S or sgcl_without_S)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Temperature.
    pub tau: f64,
    /// Floor applied to contrastive denominators.
    pub denom_epsilon: f64,
    pub variant: ContrastiveVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.5,
            denom_epsilon: 1e-8,
            variant: ContrastiveVariant::Sgcl,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.denom_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "denom_epsilon must be > 0, got {}",
                self.denom_epsilon
            )));
        }
        Ok(())
    }
}

/// Σ_v Σ_i ‖x_i^v − x̂_i^v‖² over the batch. With a mask, row `i` of view
/// `v` only counts when `mask[v]` (an n×1 column of 0/1) is 1 there.
pub fn reconstruction_loss(
    g: &mut Graph,
    inputs: &[Var],
    reconstructions: &[Var],
    mask: Option<&[Var]>,
) -> Result<Var> {
    if inputs.len() != reconstructions.len() || inputs.is_empty() {
        return Err(Error::Precondition(format!(
            "{} inputs but {} reconstructions",
            inputs.len(),
            reconstructions.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (v, (&x, &xh)) in inputs.iter().zip(reconstructions).enumerate() {
        let diff = g.sub(x, xh)?;
        let mut sq = g.square(diff);
        if let Some(mask) = mask {
            let cols = g.shape(x).1;
            let m = g.repeat_cols(mask[v], cols)?;
            sq = g.hadamard(sq, m)?;
        }
        let view_loss = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, view_loss)?,
            None => view_loss,
        });
    }
    Ok(total.unwrap())
}

/// aᵀb / (‖a‖‖b‖), each norm floored at [`COSINE_NORM_FLOOR`]. A floored
/// norm bumps [`zero_norm_warnings`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    for n in [na, nb] {
        if n < COSINE_NORM_FLOOR {
            ZERO_NORM_WARNINGS.fetch_add(1, Ordering::Relaxed);
            log::warn!("cosine similarity of a (near) zero vector");
        }
    }
    dot / (na.max(COSINE_NORM_FLOOR) * nb.max(COSINE_NORM_FLOOR))
}

/// Process-wide count of floored norms seen by [`cosine_similarity`].
pub fn zero_norm_warnings() -> usize {
    ZERO_NORM_WARNINGS.load(Ordering::Relaxed)
}

/// Rows scaled to unit length (norms floored at [`COSINE_NORM_FLOOR`]).
pub fn normalize_rows(g: &mut Graph, h: Var) -> Result<Var> {
    let cols = g.shape(h).1;
    let norm = g.row_l2_norm(h);
    let floored = g.clamp_min(norm, COSINE_NORM_FLOOR, ClampKind::NormFloor);
    let spread = g.repeat_cols(floored, cols)?;
    g.divide(h, spread)
}

/// The contrastive loss node plus how many denominators hit the floor.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveLoss {
    pub loss: Var,
    pub denominator_clamps: usize,
}

/// Per-row log-ratio `log( e^{pos_i/τ} / max(den_i, ε) )` with
/// `den_i = Σ_j e^{W_ij C_ij / τ} − offset`.
fn log_ratio(
    g: &mut Graph,
    anchor: Var,
    other: Var,
    weights: Option<Var>,
    offset: f64,
    cfg: &LossConfig,
) -> Result<Var> {
    let other_t = g.transpose(other);
    let sims = g.matmul(anchor, other_t)?;
    let weighted = match weights {
        Some(w) => g.hadamard(w, sims)?,
        None => sims,
    };
    let scaled = g.scalar_mul(weighted, 1.0 / cfg.tau);
    let exps = g.exp(scaled);
    let row_total = g.row_sum(exps);
    let den = g.add_scalar(row_total, -offset);
    let den = g.clamp_min(den, cfg.denom_epsilon, ClampKind::Denominator);

    let paired = g.hadamard(anchor, other)?;
    let positive = g.row_sum(paired);
    let positive = g.scalar_mul(positive, 1.0 / cfg.tau);
    let numerator = g.exp(positive);
    let ratio = g.divide(numerator, den)?;
    g.log(ratio)
}

/// Contrastive loss of the configured variant.
///
/// For the structure-guided variants, with C the cosine similarity and
/// n the batch size:
///
/// ```text
/// L_c = −1/(2n) Σ_i Σ_v log( e^{C(Ĥ_i, H_i^v)/τ}
///                            / (Σ_j e^{(1 − S_ij) C(Ĥ_i, H_j^v)/τ} − e^{1/τ}) )
/// ```
///
/// where the denominator is floored at `denom_epsilon` and the `1 − S_ij`
/// factor is dropped for `sgcl_without_S`. The standard variants contrast
/// view pairs (u, v), u ≠ v, with the InfoNCE denominator
/// `e^{C_ii/τ} + Σ_{j≠i} e^{w_ij C_ij/τ}` (w = 1 or 1 − S_ij), under the same
/// 1/(2n) scale.
///
/// `mask[v]` (n×1, 0/1) drops the terms anchored on an unobserved view.
pub fn sgcl_loss(
    g: &mut Graph,
    hhat: Var,
    h_views: &[Var],
    s: Var,
    mask: Option<&[Var]>,
    cfg: &LossConfig,
) -> Result<ContrastiveLoss> {
    let (n, d_h) = g.shape(hhat);
    if h_views.is_empty() {
        return Err(Error::Precondition("no view representations".into()));
    }
    for &h in h_views {
        if g.shape(h) != (n, d_h) {
            return Err(Error::Shape {
                op: "sgcl_loss",
                left: (n, d_h),
                right: g.shape(h),
            });
        }
    }
    if g.shape(s) != (n, n) {
        return Err(Error::Shape {
            op: "sgcl_loss structure",
            left: (n, n),
            right: g.shape(s),
        });
    }
    check_row_stochastic(g.value(s), 1e-6)?;
    let clamps_before = g.clamp_count(ClampKind::Denominator);

    let views: Vec<Var> = h_views
        .iter()
        .map(|&h| normalize_rows(g, h))
        .collect::<Result<_>>()?;
    let inv_tau = 1.0 / cfg.tau;

    let mut terms: Vec<Var> = Vec::new();
    match cfg.variant {
        ContrastiveVariant::Sgcl | ContrastiveVariant::SgclWithoutS => {
            let consensus = normalize_rows(g, hhat)?;
            let weights = if cfg.variant == ContrastiveVariant::Sgcl {
                Some(g.rsub_scalar(1.0, s))
            } else {
                None
            };
            for (v, &hv) in views.iter().enumerate() {
                let mut t = log_ratio(g, consensus, hv, weights, inv_tau.exp(), cfg)?;
                if let Some(mask) = mask {
                    t = g.hadamard(t, mask[v])?;
                }
                terms.push(t);
            }
        }
        ContrastiveVariant::StandardCl | ContrastiveVariant::StandardClWithS => {
            let weights = if cfg.variant == ContrastiveVariant::StandardClWithS {
                // 1 − S off the diagonal, 1 on it: the positive stays unweighted
                let one_minus = g.rsub_scalar(1.0, s);
                let eye = g.constant(Tensor::identity(n));
                let diag = g.hadamard(s, eye)?;
                Some(g.add(one_minus, diag)?)
            } else {
                None
            };
            for (u, &hu) in views.iter().enumerate() {
                for (v, &hv) in views.iter().enumerate() {
                    if u == v {
                        continue;
                    }
                    let mut t = log_ratio(g, hu, hv, weights, 0.0, cfg)?;
                    if let Some(mask) = mask {
                        let both = g.hadamard(mask[u], mask[v])?;
                        t = g.hadamard(t, both)?;
                    }
                    terms.push(t);
                }
            }
        }
    }

    let mut total = g.sum(terms[0]);
    for &t in &terms[1..] {
        let st = g.sum(t);
        total = g.add(total, st)?;
    }
    let loss = g.scalar_mul(total, -1.0 / (2.0 * n as f64));
    Ok(ContrastiveLoss {
        loss,
        denominator_clamps: g.clamp_count(ClampKind::Denominator) - clamps_before,
    })
}

/// L = L_r + λ L_c.
pub fn total_loss(g: &mut Graph, recon: Var, contrastive: Var, cfg: &LossConfig) -> Result<Var> {
    let weighted = g.scalar_mul(contrastive, cfg.lambda);
    g.add(recon, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let mut s = Tensor::from_fn(n, n, |_, _| rng.random_range(0.1..1.0));
        for r in 0..n {
            let total: f64 = s.row(r).iter().sum();
            s.row_mut(r).iter_mut().for_each(|x| *x /= total);
        }
        s
    }

    #[test]
    fn defaults() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.lambda, cfg.tau), (1.0, 0.5));
        assert_eq!(cfg.variant, ContrastiveVariant::Sgcl);
        for v in ContrastiveVariant::ALL {
            assert_eq!(v.as_str().parse::<ContrastiveVariant>().unwrap(), v);
        }
        assert!("infonce".parse::<ContrastiveVariant>().is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let zero = g.constant(Tensor::zeros(1, 2));
        let l = reconstruction_loss(&mut g, &[x], &[zero], None).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l = reconstruction_loss(&mut g, &[x], &[x], None).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let off = g.constant(Tensor::zeros(1, 1));
        let l = reconstruction_loss(&mut g, &[x], &[zero], Some(&[off])).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn reconstruction_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = [3, 5, 2];
        let xs: Vec<Tensor> = dims.iter().map(|&d| random(&mut rng, 4, d)).collect();
        let xh: Vec<Tensor> = dims.iter().map(|&d| random(&mut rng, 4, d)).collect();
        let mut g = Graph::new();
        let xv: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let hv: Vec<Var> = xh.iter().map(|t| g.constant(t.clone())).collect();
        let l = reconstruction_loss(&mut g, &xv, &hv, None).unwrap();
        let mut expected = 0.0;
        for (a, b) in xs.iter().zip(&xh) {
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    expected += (a.get(i, j) - b.get(i, j)).powi(2);
                }
            }
        }
        assert!((g.value(l).item() - expected).abs() <= 1e-12);
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&u, &u) - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&u, &neg) + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let before = zero_norm_warnings();
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(zero_norm_warnings() > before);
    }

    #[test]
    fn single_sample_engages_denominator_clamp() {
        let mut g = Graph::new();
        let hhat = g.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let h = g.constant(Tensor::from_rows(&[[2.0, -1.0]]).unwrap());
        let s = g.constant(Tensor::ones(1, 1));
        let cfg = LossConfig::default();
        let out = sgcl_loss(&mut g, hhat, &[h], s, None, &cfg).unwrap();
        assert_eq!(out.denominator_clamps, 1);
        let c = cosine_similarity(&[1.0, 2.0], &[2.0, -1.0]);
        let expected = -0.5 * ((c / 0.5).exp() / cfg.denom_epsilon).ln();
        assert!((g.value(out.loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn negatives_with_zero_structure_are_repelled() {
        // S = I: every negative gets full weight. Rotating H_1 toward Ĥ_0
        // raises C(Ĥ_0, H_1) and must raise the loss.
        let cfg = LossConfig::default();
        let eval = |angle: f64| {
            let mut g = Graph::new();
            let hhat = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]]).unwrap());
            let h = g.constant(
                Tensor::from_rows(&[[1.0, 0.1], [angle.cos(), angle.sin()], [-1.0, 0.0]]).unwrap(),
            );
            let s = g.constant(Tensor::identity(3));
            let out = sgcl_loss(&mut g, hhat, &[h], s, None, &cfg).unwrap();
            g.value(out.loss).item()
        };
        let mut last = eval(1.5);
        for step in 1..10 {
            let next = eval(1.5 - 0.15 * step as f64);
            assert!(next > last, "{next} <= {last}");
            last = next;
        }
    }

    #[test]
    fn rejects_non_stochastic_structure() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::ones(2, 2));
        let s = g.constant(Tensor::ones(2, 2));
        let err = sgcl_loss(&mut g, h, &[h], s, None, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut g = Graph::new();
        let lr = g.constant(Tensor::scalar(2.0));
        let lc = g.constant(Tensor::scalar(3.0));
        let l = total_loss(&mut g, lr, lc, &LossConfig::default()).unwrap();
        assert_eq!(g.value(l).item(), 5.0);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let l = total_loss(&mut g, lr, lc, &cfg).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
    }

    #[test]
    fn every_variant_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in ContrastiveVariant::ALL {
            let cfg = LossConfig {
                variant,
                ..LossConfig::default()
            };
            let s = random_stochastic(&mut rng, 5);
            let inputs = vec![random(&mut rng, 5, 3), random(&mut rng, 5, 3), random(&mut rng, 5, 3)];
            let report = grad_check(
                |g, v| {
                    let sv = g.constant(s.clone());
                    Ok(sgcl_loss(g, v[0], &v[1..], sv, None, &cfg)?.loss)
                },
                &inputs,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{variant}: {report:?}");
        }
    }

    #[test]
    fn positive_row_scaling_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_stochastic(&mut rng, 4);
        let hhat = random(&mut rng, 4, 3);
        let h1 = random(&mut rng, 4, 3);
        let eval = |a: &Tensor, b: &Tensor| {
            let mut g = Graph::new();
            let (av, bv, sv) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(s.clone()));
            let out = sgcl_loss(&mut g, av, &[bv], sv, None, &LossConfig::default()).unwrap();
            g.value(out.loss).item()
        };
        let scale = |t: &Tensor, rng: &mut ChaCha8Rng| {
            let f: Vec<f64> = (0..t.rows()).map(|_| rng.random_range(0.1..10.0)).collect();
            Tensor::from_fn(t.rows(), t.cols(), |r, c| t.get(r, c) * f[r])
        };
        let base = eval(&hhat, &h1);
        let scaled = eval(&scale(&hhat, &mut rng), &scale(&h1, &mut rng));
        assert!((base - scaled).abs() <= 1e-10);
    }
}

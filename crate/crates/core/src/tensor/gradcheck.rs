use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over every input entry whose
    /// absolute discrepancy exceeds the difference quotient's rounding noise.
    pub max_rel_error: f64,
    /// Largest absolute discrepancy `|a - n|` over every entry.
    pub max_abs_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of `inputs`.
///
/// `f` receives a fresh graph and one trainable leaf per input and must
/// return a 1×1 node. Errors raised by `f` are propagated; a mismatch is not
/// an error, it is reported through [`GradCheckReport::passed`].
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Precondition(format!(
            "grad_check step must be positive, got {step}"
        )));
    }

    // A difference quotient cannot resolve changes in f smaller than a few
    // ulps of f, so discrepancies below this bound are rounding, not error.
    let noise_floor = |fx: f64| 4.0 * f64::EPSILON * fx.abs().max(1.0) / step;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let f0 = g.value(out).item();
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().expect("leaf gradient"))
        .collect();

    let mut worst = None;
    let mut max_rel_error = 0.0f64;
    let mut max_abs_error = 0.0f64;
    let mut entries_checked = 0;
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            let original = probe[which].data()[idx];
            probe[which].data_mut()[idx] = original + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = original - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[idx];
            let abs = (a - numeric).abs();
            max_abs_error = max_abs_error.max(abs);
            let rel = if abs <= noise_floor(f0) {
                0.0
            } else {
                abs / a.abs().max(numeric.abs()).max(1e-8)
            };
            entries_checked += 1;
            if rel > max_rel_error || rel.is_nan() {
                max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some((which, idx));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        max_abs_error,
        worst,
        entries_checked,
        passed: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_step_is_rejected() {
        let r = grad_check(|g, v| Ok(g.sum(v[0])), &[Tensor::ones(2, 2)], 0.0, 1e-4);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn mean_squared_reconstruction_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let target = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let report = grad_check(
            |g, v| {
                let t = g.constant(target.clone());
                let d = g.sub(v[0], t)?;
                let sq = g.square(d);
                Ok(g.mean(sq))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.entries_checked, 12);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::from_fn(3, 5, |_, _| rng.random_range(-2.0..2.0));
        let f = |g: &mut Graph, v: &[Var]| {
            let s = g.row_softmax(v[0]);
            Ok(g.sum(s))
        };
        let mut g = Graph::new();
        let leaf = g.leaf(x.clone());
        let out = f(&mut g, &[leaf]).unwrap();
        g.backward(out).unwrap();
        assert!(g.grad(leaf).unwrap().data().iter().all(|d| d.abs() < 1e-15));

        let report = grad_check(f, &[x], 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_reported_not_thrown() {
        // relu at exactly zero: analytic 0, numeric 0.5
        let report = grad_check(
            |g, v| {
                let r = g.relu(v[0]);
                Ok(g.sum(r))
            },
            &[Tensor::zeros(1, 1)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst, Some((0, 0)));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    /// Lloyd stops once the summed squared centre movement is at most `tol`.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Hard k-means partition of a representation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    /// k × d.
    pub centers: Tensor,
    /// Σᵢ ‖xᵢ − centre(labelᵢ)‖².
    pub inertia: f64,
}

/// One Lloyd run from one k-means++ seeding.
#[derive(Clone, Debug)]
pub struct LloydRun {
    pub result: ClusteringResult,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centre per row (ties go to the lower index) and the total cost.
fn assign(data: &Tensor, centers: &Tensor, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, row) in data.iter_rows().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, center) in centers.iter_rows().enumerate() {
            let d = sq_dist(row, center);
            if d < best.0 {
                best = (d, c);
            }
        }
        labels[i] = best.1;
        dists[i] = best.0;
        inertia += best.0;
    }
    inertia
}

fn plus_plus_init(data: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = data.rows();
    let mut centers = Tensor::zeros(k, data.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(data.row(first));
    let mut closest: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if closest[chosen] == 0.0 {
                chosen = closest.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, row) in data.iter_rows().enumerate() {
            closest[i] = closest[i].min(sq_dist(row, data.row(pick)));
        }
    }
    centers
}

fn check_inputs(data: &Tensor, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Precondition("k-means needs k >= 1".into()));
    }
    if k > data.rows() {
        return Err(Error::Precondition(format!(
            "k-means with k={k} on only {} points",
            data.rows()
        )));
    }
    Ok(())
}

/// A single k-means++ seeded Lloyd run.
pub fn kmeans_run(data: &Tensor, k: usize, rng: &mut ChaCha8Rng, cfg: &KMeansConfig) -> Result<LloydRun> {
    check_inputs(data, k)?;
    let (n, d) = data.shape();
    let mut centers = plus_plus_init(data, k, rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        history.push(assign(data, &centers, &mut labels, &mut dists));

        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, row) in data.iter_rows().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums.row_mut(labels[i]).iter_mut().zip(row) {
                *s += x;
            }
        }
        // an empty cluster takes the point farthest from its current centre
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a donor cluster");
            let old = labels[far];
            counts[old] -= 1;
            for (s, x) in sums.row_mut(old).iter_mut().zip(data.row(far)) {
                *s -= x;
            }
            labels[far] = c;
            counts[c] = 1;
            dists[far] = 0.0;
            sums.row_mut(c).copy_from_slice(data.row(far));
        }

        let mut shift = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (j, s) in sums.row(c).iter().enumerate() {
                let updated = s * inv;
                shift += (updated - centers.get(c, j)).powi(2);
                centers.set(c, j, updated);
            }
        }
        if shift <= cfg.tol {
            break;
        }
    }

    let inertia = assign(data, &centers, &mut labels, &mut dists);
    history.push(inertia);
    Ok(LloydRun {
        result: ClusteringResult {
            labels,
            centers,
            inertia,
        },
        inertia_history: history,
        iterations,
    })
}

/// Best of `n_init` k-means++ restarts by inertia. Restart `r` draws from
/// stream `r` of a ChaCha8 generator keyed by `seed`; ties go to the lower
/// restart index, so the winner does not depend on scheduling.
pub fn kmeans(data: &Tensor, k: usize, cfg: &KMeansConfig) -> Result<ClusteringResult> {
    check_inputs(data, k)?;
    let restarts = cfg.n_init.max(1);
    let runs: Vec<Result<LloydRun>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            kmeans_run(data, k, &mut rng, cfg)
        })
        .collect();
    let mut best: Option<LloydRun> = None;
    for run in runs {
        let run = run?;
        if best
            .as_ref()
            .is_none_or(|b| run.result.inertia < b.result.inertia)
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart").result)
}

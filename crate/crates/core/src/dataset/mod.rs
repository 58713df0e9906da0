//! Multi-view datasets: the in-memory container, a synthetic generator,
//! min-max preprocessing, the missing-view protocol, and on-disk formats.

mod csv_import;
pub mod format;

pub use csv_import::import_csv;
pub use format::{load_dataset, read_matrix, save_dataset, write_matrix};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// V aligned views of the same N samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    /// View `v` is N × D_v.
    pub views: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
    /// Number of clusters K. Zero when unknown.
    pub n_clusters: usize,
    /// `mask[i][v]` is true when view `v` of sample `i` is observed.
    pub mask: Vec<Vec<bool>>,
}

impl MultiViewDataset {
    /// Builds a fully observed dataset and checks its invariants.
    pub fn new(
        name: impl Into<String>,
        views: Vec<Tensor>,
        labels: Option<Vec<usize>>,
        n_clusters: usize,
    ) -> Result<Self> {
        let n = views.first().map_or(0, Tensor::rows);
        let ds = Self {
            name: name.into(),
            mask: vec![vec![true; views.len()]; n],
            views,
            labels,
            n_clusters,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.views.first().map_or(0, Tensor::rows)
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Tensor::cols).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|row| row.iter().all(|&m| m))
    }

    /// Number of samples with at least one missing view.
    pub fn incomplete_samples(&self) -> usize {
        self.mask.iter().filter(|row| row.iter().any(|&m| !m)).count()
    }

    /// Mask column for view `v` as an N×1 tensor of 0/1.
    pub fn mask_column(&self, v: usize, rows: &[usize]) -> Tensor {
        Tensor::from_fn(rows.len(), 1, |r, _| {
            if self.mask[rows[r]][v] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Precondition(msg));
        if self.views.is_empty() {
            return invalid("dataset has no views".into());
        }
        let n = self.n_samples();
        for (v, view) in self.views.iter().enumerate() {
            if view.rows() != n {
                return invalid(format!("view {v} has {} rows, expected {n}", view.rows()));
            }
            if view.cols() == 0 {
                return invalid(format!("view {v} has no features"));
            }
        }
        if self.mask.len() != n {
            return invalid(format!("mask has {} rows, expected {n}", self.mask.len()));
        }
        for (i, row) in self.mask.iter().enumerate() {
            if row.len() != self.views.len() {
                return invalid(format!("mask row {i} has {} entries", row.len()));
            }
            if !row.iter().any(|&m| m) {
                return invalid(format!("sample {i} has no observed view"));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return invalid(format!("{} labels for {n} samples", labels.len()));
            }
            let k = self.n_clusters;
            let mut seen = vec![false; k];
            for (i, &l) in labels.iter().enumerate() {
                if l >= k {
                    return invalid(format!("label {l} of sample {i} is not below K={k}"));
                }
                seen[l] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return invalid(format!("cluster {missing} has no samples"));
            }
        }
        Ok(())
    }

    /// All views side by side, N × ΣD_v.
    pub fn concatenated(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.views.iter().collect();
        Tensor::concat_cols(&parts).expect("views share N")
    }
}

/// Parameters of the synthetic Gaussian-mixture generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_clusters: usize,
    pub n_views: usize,
    pub latent_dim: usize,
    pub view_dims: Vec<usize>,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 300,
            n_clusters: 3,
            n_views: 3,
            latent_dim: 10,
            view_dims: vec![20, 30, 40],
            cluster_separation: 10.0,
            noise_sigma: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Precondition(format!("synthetic spec: {msg}")));
        if self.n_clusters < 2 {
            return bad("need at least 2 clusters");
        }
        if self.n_samples < self.n_clusters {
            return bad("n_samples must be at least n_clusters");
        }
        if self.n_views == 0 {
            return bad("need at least one view");
        }
        if self.view_dims.len() != self.n_views {
            return bad("view_dims must list one width per view");
        }
        if self.latent_dim == 0 || self.view_dims.contains(&0) {
            return bad("all dimensions must be at least 1");
        }
        if !(self.cluster_separation >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("separation and noise must be non-negative");
        }
        Ok(())
    }
}

/// Draws a labelled multi-view Gaussian mixture.
///
/// Cluster centres sit in the latent space at pairwise distance
/// `cluster_separation` (exactly, when `latent_dim >= K`); each sample is its
/// centre plus unit Gaussian spread. View `v` applies its own random linear
/// map to the latent sample and adds `noise_sigma` Gaussian noise. Sample
/// order is shuffled; cluster sizes differ by at most one.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.n_clusters;
    let l = spec.latent_dim;
    let half_sep = spec.cluster_separation / std::f64::consts::SQRT_2;

    let centers: Vec<Vec<f64>> = if l >= k {
        (0..k)
            .map(|c| (0..l).map(|d| if d == c { half_sep } else { 0.0 }).collect())
            .collect()
    } else {
        (0..k)
            .map(|_| {
                let dir: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|x| x / norm * half_sep).collect()
            })
            .collect()
    };

    let n = spec.n_samples;
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.sort_unstable();
    // sort gives sizes ceil/floor with the remainder on the first clusters
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    let latent = Tensor::from_fn(n, l, |i, d| {
        centers[labels[i]][d] + rng.sample::<f64, _>(StandardNormal)
    });

    let scale = 1.0 / (l as f64).sqrt();
    let mut views = Vec::with_capacity(spec.n_views);
    for &dim in &spec.view_dims {
        let map = Tensor::from_fn(l, dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let mut x = latent.matmul(&map)?;
        let sigma = spec.noise_sigma;
        for e in x.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e += sigma * z;
        }
        views.push(x);
    }

    MultiViewDataset::new(
        format!("synthetic-n{}-k{}-v{}-s{}", n, k, spec.n_views, spec.seed),
        views,
        Some(labels),
        k,
    )
}

/// Marks `round(rate × N)` samples incomplete by hiding a uniformly chosen
/// nonempty proper subset of their views. Hidden rows are zero-filled.
pub fn apply_missing_mask(
    ds: &MultiViewDataset,
    missing_rate: f64,
    seed: u64,
) -> Result<MultiViewDataset> {
    if !(0.0..=0.7).contains(&missing_rate) {
        return Err(Error::Precondition(format!(
            "missing rate {missing_rate} outside [0, 0.7]"
        )));
    }
    let v = ds.n_views();
    if v < 2 {
        return Err(Error::Precondition(
            "missing-view masking needs at least 2 views".into(),
        ));
    }
    if !ds.is_complete() {
        return Err(Error::Precondition(
            "missing-view masking expects a fully observed dataset".into(),
        ));
    }
    let n = ds.n_samples();
    let count = (missing_rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut out = ds.clone();
    // subsets encoded as bitmasks of hidden views: 1 ..= 2^V - 2
    let proper_subsets = (1u64 << v) - 2;
    for &i in &chosen {
        let hidden = rng.random_range(1..=proper_subsets);
        for view in 0..v {
            if hidden & (1 << view) != 0 {
                out.mask[i][view] = false;
                out.views[view].row_mut(i).fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Per-view column minima and maxima used by [`normalize_minmax`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mins: Vec<Vec<f64>>,
    pub maxs: Vec<Vec<f64>>,
}

/// Rescales every column of every view to [0, 1] over the observed rows.
/// Constant columns become 0; unobserved rows stay zero.
pub fn normalize_minmax(ds: &MultiViewDataset) -> (MultiViewDataset, NormalizationStats) {
    let mut out = ds.clone();
    let mut stats = NormalizationStats {
        mins: Vec::new(),
        maxs: Vec::new(),
    };
    for (v, view) in out.views.iter_mut().enumerate() {
        let d = view.cols();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for i in 0..view.rows() {
            if !ds.mask[i][v] {
                continue;
            }
            for (c, &x) in view.row(i).iter().enumerate() {
                mins[c] = mins[c].min(x);
                maxs[c] = maxs[c].max(x);
            }
        }
        for i in 0..view.rows() {
            let observed = ds.mask[i][v];
            for (c, x) in view.row_mut(i).iter_mut().enumerate() {
                let range = maxs[c] - mins[c];
                *x = if !observed || !(range > 0.0) {
                    0.0
                } else {
                    (*x - mins[c]) / range
                };
            }
        }
        stats.mins.push(mins);
        stats.maxs.push(maxs);
    }
    (out, stats)
}

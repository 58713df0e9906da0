//! Python bindings: datasets, the model, training and the clustering
//! metrics. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gcfagg::dataset::{
    apply_missing_mask, generate_synthetic, load_dataset, normalize_minmax, save_dataset,
    MultiViewDataset, SyntheticSpec,
};
use gcfagg::checkpoint::{load_checkpoint, save_checkpoint};
use gcfagg::losses::ContrastiveVariant;
use gcfagg::metrics::{self, ClusterMetrics, KMeansConfig};
use gcfagg::model::{Ablation, Architecture, GcfaggModel};
use gcfagg::trainer::{train, TrainConfig};
use gcfagg::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_config() {
        PyValueError::new_err(msg)
    } else if e.is_numeric() {
        PyArithmeticError::new_err(msg)
    } else if matches!(e, Error::Io { .. }) {
        PyOSError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.iter_rows().map(<[f64]>::to_vec).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn metrics_dict<'py>(py: Python<'py>, m: &ClusterMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("acc", m.acc)?;
    d.set_item("nmi", m.nmi)?;
    d.set_item("pur", m.pur)?;
    Ok(d)
}

/// A multi-view dataset: V aligned feature matrices over N samples.
#[pyclass(name = "Dataset", module = "gcfagg_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: MultiViewDataset,
}

#[pymethods]
impl PyDataset {
    /// Build from per-view row lists and optional integer labels.
    #[new]
    #[pyo3(signature = (views, labels=None, n_clusters=None, name="python"))]
    fn new(
        views: Vec<Vec<Vec<f64>>>,
        labels: Option<Vec<usize>>,
        n_clusters: Option<usize>,
        name: &str,
    ) -> PyResult<Self> {
        let views = views.into_iter().map(from_rows).collect::<PyResult<Vec<_>>>()?;
        let k = n_clusters
            .or_else(|| labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1)))
            .unwrap_or(0);
        MultiViewDataset::new(name.to_string(), views, labels, k)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Gaussian-mixture multi-view data.
    #[staticmethod]
    #[pyo3(signature = (n_samples=300, n_clusters=3, n_views=3, latent_dim=10, view_dims=None, separation=10.0, noise_sigma=0.1, seed=7))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_samples: usize,
        n_clusters: usize,
        n_views: usize,
        latent_dim: usize,
        view_dims: Option<Vec<usize>>,
        separation: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            n_samples,
            n_clusters,
            n_views,
            latent_dim,
            view_dims: view_dims.unwrap_or_else(|| (0..n_views).map(|v| 20 + 10 * v).collect()),
            cluster_separation: separation,
            noise_sigma,
            seed,
        };
        generate_synthetic(&spec).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_dataset(path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, path).map_err(py_err)
    }

    /// Copy with `rate` of the samples missing at least one view.
    fn with_missing(&self, rate: f64, seed: u64) -> PyResult<Self> {
        apply_missing_mask(&self.inner, rate, seed)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Copy with every view column min-max scaled to [0, 1].
    fn normalized(&self) -> Self {
        Self {
            inner: normalize_minmax(&self.inner).0,
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_views(&self) -> usize {
        self.inner.n_views()
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters
    }

    #[getter]
    fn view_dims(&self) -> Vec<usize> {
        self.inner.view_dims()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn mask(&self) -> Vec<Vec<bool>> {
        self.inner.mask.clone()
    }

    fn view(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .views
            .get(v)
            .map(to_rows)
            .ok_or_else(|| PyValueError::new_err(format!("view {v} out of range")))
    }

    fn __len__(&self) -> usize {
        self.inner.n_samples()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, n_samples={}, view_dims={:?}, n_clusters={})",
            self.inner.name,
            self.inner.n_samples(),
            self.inner.view_dims(),
            self.inner.n_clusters
        )
    }
}

/// Autoencoders, projectors and the aggregation module.
#[pyclass(name = "Model", module = "gcfagg_py")]
struct PyModel {
    inner: GcfaggModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (view_dims, encoder_hidden=vec![256], latent_dim=64, projector_hidden=128, consensus_dim=128, ffn_dim=0, ablation="full", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        view_dims: Vec<usize>,
        encoder_hidden: Vec<usize>,
        latent_dim: usize,
        projector_hidden: usize,
        consensus_dim: usize,
        ffn_dim: usize,
        ablation: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = Architecture {
            view_dims,
            encoder_hidden,
            latent_dim,
            projector_hidden,
            consensus_dim,
            ffn_dim,
            ablation: ablation.parse().map_err(py_err)?,
        };
        GcfaggModel::new(arch, seed).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Pretrain then fine-tune. Returns one dict per epoch.
    #[pyo3(signature = (dataset, pretrain_epochs=200, finetune_epochs=100, batch_size=256, learning_rate=3e-4, lambda_=1.0, tau=0.5, cl_variant="sgcl", ablation=None, seed=0, eval_every=0))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        pretrain_epochs: usize,
        finetune_epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        lambda_: f64,
        tau: f64,
        cl_variant: &str,
        ablation: Option<&str>,
        seed: u64,
        eval_every: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut cfg = TrainConfig {
            pretrain_epochs,
            finetune_epochs,
            batch_size,
            learning_rate,
            seed,
            eval_every,
            ablation: match ablation {
                Some(a) => a.parse::<Ablation>().map_err(py_err)?,
                None => self.inner.arch.ablation,
            },
            ..TrainConfig::default()
        };
        cfg.loss.lambda = lambda_;
        cfg.loss.tau = tau;
        cfg.loss.variant = cl_variant.parse::<ContrastiveVariant>().map_err(py_err)?;
        let model = &mut self.inner;
        let ds = &dataset.inner;
        let run = py.detach(|| train(model, ds, &cfg)).map_err(py_err)?;
        run.log
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("phase", r.phase.as_str())?;
                d.set_item("epoch", r.epoch)?;
                d.set_item("recon", r.recon)?;
                d.set_item("contrastive", r.contrastive)?;
                d.set_item("total", r.total)?;
                d.set_item("clamps", r.clamps)?;
                if let Some(m) = &r.metrics {
                    d.set_item("metrics", metrics_dict(py, m)?)?;
                }
                Ok(d)
            })
            .collect()
    }

    /// `{"z": ..., "h": ..., "hhat": ...}` for every sample.
    #[pyo3(signature = (dataset, structure_cap=20000))]
    fn embed<'py>(&self, py: Python<'py>, dataset: &PyDataset, structure_cap: usize) -> PyResult<Bound<'py, PyDict>> {
        let emb = self.inner.embed(&dataset.inner, structure_cap).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("z", to_rows(&emb.z))?;
        d.set_item("h", to_rows(&emb.h_concat))?;
        d.set_item("hhat", to_rows(&emb.hhat))?;
        Ok(d)
    }

    /// k-means on the consensus representation. Returns `(labels, metrics)`,
    /// metrics being `None` for unlabelled data.
    #[pyo3(signature = (dataset, seed=0, structure_cap=20000))]
    fn cluster<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        seed: u64,
        structure_cap: usize,
    ) -> PyResult<(Vec<usize>, Option<Bound<'py, PyDict>>)> {
        let cfg = KMeansConfig {
            seed,
            ..KMeansConfig::default()
        };
        let (result, metrics) = self
            .inner
            .cluster(&dataset.inner, &cfg, structure_cap)
            .map_err(py_err)?;
        let metrics = metrics.map(|m| metrics_dict(py, &m)).transpose()?;
        Ok((result.labels, metrics))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(path, &self.inner, None, None).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_checkpoint(path)
            .map(|ck| Self { inner: ck.model })
            .map_err(py_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.store.scalar_count()
    }

    #[getter]
    fn view_dims(&self) -> Vec<usize> {
        self.inner.arch.view_dims.clone()
    }
}

/// Best-of-restarts k-means++ / Lloyd. Returns `(labels, inertia)`.
#[pyfunction]
#[pyo3(signature = (data, k, seed=0, n_init=10))]
fn kmeans(data: Vec<Vec<f64>>, k: usize, seed: u64, n_init: usize) -> PyResult<(Vec<usize>, f64)> {
    let t = from_rows(data)?;
    let cfg = KMeansConfig {
        seed,
        n_init,
        ..KMeansConfig::default()
    };
    let r = metrics::kmeans(&t, k, &cfg).map_err(py_err)?;
    Ok((r.labels, r.inertia))
}

#[pyfunction]
fn accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn nmi(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::nmi(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn purity(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::purity(&pred, &truth).map_err(py_err)
}

#[pymodule]
fn gcfagg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(purity, m)?)?;
    Ok(())
}

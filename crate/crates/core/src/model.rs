//! The full multi-view model: per-view autoencoders and projectors feeding
//! the aggregation module, plus full-dataset inference.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::gcfagg::{aggregate, compute_structure, concat_views, structure_matrix, GcfaggParams};
use crate::metrics::{evaluate, kmeans, ClusterMetrics, ClusteringResult, KMeansConfig};
use crate::networks::{glorot_uniform, Bound, Dense, Mlp, MlpConfig, ParamId, ParamStore, ViewNetworks};
use crate::tensor::{Graph, Tensor, Var};

/// Which parts of the method are switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Ĥ is a linear map of Z; S is still learned and used by the loss.
    NoGcfagg,
    /// The contrastive term is weighted by zero.
    NoSgcl,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoGcfagg, Ablation::NoSgcl];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGcfagg => "no_gcfagg",
            Ablation::NoSgcl => "no_sgcl",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation {s:?} (expected full, no_gcfagg or no_sgcl)"
                ))
            })
    }
}

/// Layer widths of the whole model.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub view_dims: Vec<usize>,
    /// Hidden widths of each encoder; decoders mirror them.
    pub encoder_hidden: Vec<usize>,
    /// d_v, shared by all views.
    pub latent_dim: usize,
    /// Hidden width of each projector.
    pub projector_hidden: usize,
    /// d_h, the width of Ĥ and of every H^v.
    pub consensus_dim: usize,
    /// Hidden width of the refinement feed-forward block; 0 means 2d.
    pub ffn_dim: usize,
    pub ablation: Ablation,
}

impl Architecture {
    pub fn new(view_dims: Vec<usize>) -> Self {
        Self {
            view_dims,
            encoder_hidden: vec![256],
            latent_dim: 64,
            projector_hidden: 128,
            consensus_dim: 128,
            ffn_dim: 0,
            ablation: Ablation::Full,
        }
    }

    /// Width of Z.
    pub fn fused_dim(&self) -> usize {
        self.latent_dim * self.view_dims.len()
    }

    pub fn effective_ffn_dim(&self) -> usize {
        if self.ffn_dim == 0 {
            2 * self.fused_dim()
        } else {
            self.ffn_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() {
            return Err(Error::Config("model needs at least one view".into()));
        }
        if self.view_dims.contains(&0)
            || self.encoder_hidden.contains(&0)
            || self.latent_dim == 0
            || self.projector_hidden == 0
            || self.consensus_dim == 0
        {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// How Ĥ is produced from Z.
#[derive(Clone, Debug, PartialEq)]
pub enum Fusion {
    Aggregate(GcfaggParams),
    /// `no_gcfagg`: S from W_Q1, W_Q2 for the loss; Ĥ = Z W + b.
    Linear {
        w_q1: ParamId,
        w_q2: ParamId,
        head: Dense,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcfaggModel {
    pub arch: Architecture,
    pub store: ParamStore,
    pub views: Vec<ViewNetworks>,
    pub fusion: Fusion,
    /// Parameters `0..autoencoder_len` belong to the encoders and decoders.
    autoencoder_len: usize,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub inputs: Vec<Var>,
    pub z_views: Vec<Var>,
    pub reconstructions: Vec<Var>,
    pub h_views: Vec<Var>,
    pub z: Var,
    pub q1: Var,
    pub q2: Var,
    pub r: Option<Var>,
    pub s: Var,
    pub zhat: Option<Var>,
    pub hhat: Var,
}

/// Materialised intermediates of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchForward {
    pub z: Tensor,
    pub q1: Tensor,
    pub q2: Tensor,
    pub r: Option<Tensor>,
    pub s: Tensor,
    pub zhat: Option<Tensor>,
    pub hhat: Tensor,
    pub h_views: Vec<Tensor>,
}

impl BatchForward {
    pub fn from_graph(g: &Graph, f: &ForwardVars) -> Self {
        Self {
            z: g.value(f.z).clone(),
            q1: g.value(f.q1).clone(),
            q2: g.value(f.q2).clone(),
            r: f.r.map(|r| g.value(r).clone()),
            s: g.value(f.s).clone(),
            zhat: f.zhat.map(|z| g.value(z).clone()),
            hhat: g.value(f.hhat).clone(),
            h_views: f.h_views.iter().map(|&h| g.value(h).clone()).collect(),
        }
    }
}

/// Representations of every sample, for export and clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub z: Tensor,
    /// All H^v side by side.
    pub h_concat: Tensor,
    pub hhat: Tensor,
}

/// Stream ids for the model's two initialisation phases.
const AUTOENCODER_STREAM: u64 = 0;
const HEAD_STREAM: u64 = 1;

impl GcfaggModel {
    /// Autoencoders from stream 0 of `seed`, heads from stream 1.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AUTOENCODER_STREAM);
        let mut store = ParamStore::new();
        let mut autoencoders = Vec::with_capacity(arch.view_dims.len());
        for (v, &dim) in arch.view_dims.iter().enumerate() {
            let mut enc_dims = vec![dim];
            enc_dims.extend(&arch.encoder_hidden);
            enc_dims.push(arch.latent_dim);
            let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
            let encoder = Mlp::init(&mut store, &format!("view{v}.encoder"), MlpConfig::new(enc_dims), &mut rng)?;
            let decoder = Mlp::init(&mut store, &format!("view{v}.decoder"), MlpConfig::new(dec_dims), &mut rng)?;
            autoencoders.push((encoder, decoder));
        }
        let autoencoder_len = store.len();
        let placeholder = Fusion::Linear {
            w_q1: ParamId(0),
            w_q2: ParamId(0),
            head: Dense {
                weight: ParamId(0),
                bias: ParamId(0),
                in_dim: 0,
                out_dim: 0,
            },
        };
        let views = autoencoders
            .into_iter()
            .map(|(encoder, decoder)| ViewNetworks {
                projector: encoder.clone(),
                encoder,
                decoder,
            })
            .collect();
        let mut model = Self {
            arch: arch.clone(),
            store,
            views,
            fusion: placeholder,
            autoencoder_len,
        };
        model.reinit_heads(arch.ablation, seed)?;
        Ok(model)
    }

    /// Discards projector and fusion parameters and draws fresh ones for
    /// `ablation`. Autoencoder parameters are untouched.
    pub fn reinit_heads(&mut self, ablation: Ablation, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HEAD_STREAM);
        self.store.truncate(self.autoencoder_len);
        self.arch.ablation = ablation;
        let arch = &self.arch;
        for (v, net) in self.views.iter_mut().enumerate() {
            let dims = vec![arch.latent_dim, arch.projector_hidden, arch.consensus_dim];
            net.projector = Mlp::init(&mut self.store, &format!("view{v}.projector"), MlpConfig::new(dims), &mut rng)?;
        }
        let d = arch.fused_dim();
        self.fusion = match ablation {
            Ablation::Full | Ablation::NoSgcl => Fusion::Aggregate(GcfaggParams::init(
                &mut self.store,
                d,
                arch.effective_ffn_dim(),
                arch.consensus_dim,
                &mut rng,
            )),
            Ablation::NoGcfagg => {
                let w_q1 = self.store.add("gcfagg.w_q1", glorot_uniform(d, d, &mut rng));
                let w_q2 = self.store.add("gcfagg.w_q2", glorot_uniform(d, d, &mut rng));
                let head = Dense::init(&mut self.store, "linear_head", d, arch.consensus_dim, &mut rng);
                Fusion::Linear { w_q1, w_q2, head }
            }
        };
        Ok(())
    }

    pub fn autoencoder_len(&self) -> usize {
        self.autoencoder_len
    }

    pub fn is_autoencoder_param(&self, id: ParamId) -> bool {
        id.0 < self.autoencoder_len
    }

    fn check_inputs(&self, inputs: &[Tensor]) -> Result<()> {
        if inputs.len() != self.arch.view_dims.len() {
            return Err(Error::Incompatible(format!(
                "model expects {} views, got {}",
                self.arch.view_dims.len(),
                inputs.len()
            )));
        }
        for (v, (x, &dim)) in inputs.iter().zip(&self.arch.view_dims).enumerate() {
            if x.cols() != dim {
                return Err(Error::Incompatible(format!(
                    "view {v}: model expects {dim} features, got {}",
                    x.cols()
                )));
            }
        }
        Ok(())
    }

    /// Encoders and decoders only.
    pub fn forward_autoencoders(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &[Tensor],
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
        self.check_inputs(inputs)?;
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        let mut recons = Vec::new();
        for (net, x) in self.views.iter().zip(inputs) {
            let xv = g.constant(x.clone());
            let z = net.encode(g, p, xv)?;
            recons.push(net.decode(g, p, z)?);
            xs.push(xv);
            zs.push(z);
        }
        Ok((xs, zs, recons))
    }

    /// Whole model on one batch (rows of `inputs` are samples).
    pub fn forward(&self, g: &mut Graph, p: &Bound, inputs: &[Tensor]) -> Result<ForwardVars> {
        let (xs, zs, recons) = self.forward_autoencoders(g, p, inputs)?;
        let h_views = self
            .views
            .iter()
            .zip(&zs)
            .map(|(net, &z)| net.project(g, p, z))
            .collect::<Result<Vec<_>>>()?;
        let z = concat_views(g, &zs)?;
        let (q1, q2, r, s, zhat, hhat) = match &self.fusion {
            Fusion::Aggregate(params) => {
                let st = compute_structure(g, z, params, p)?;
                let (zhat, hhat) = aggregate(g, st.s, st.r, z, params, p)?;
                (st.q1, st.q2, Some(st.r), st.s, Some(zhat), hhat)
            }
            Fusion::Linear { w_q1, w_q2, head } => {
                let (q1, q2, s) = structure_matrix(g, z, p.var(*w_q1), p.var(*w_q2))?;
                let hhat = head.forward(g, p, z)?;
                (q1, q2, None, s, None, hhat)
            }
        };
        Ok(ForwardVars {
            inputs: xs,
            z_views: zs,
            reconstructions: recons,
            h_views,
            z,
            q1,
            q2,
            r,
            s,
            zhat,
            hhat,
        })
    }

    /// Z, concatenated H^v and Ĥ for every sample. When N exceeds
    /// `structure_cap`, contiguous chunks of at most that many samples are
    /// processed and S only spans a chunk.
    pub fn embed(&self, ds: &MultiViewDataset, structure_cap: usize) -> Result<Embeddings> {
        self.check_inputs(&ds.views)?;
        let n = ds.n_samples();
        let chunk = structure_cap.max(1);
        let mut parts: Vec<(Tensor, Tensor, Tensor)> = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let inputs: Vec<Tensor> = ds.views.iter().map(|v| v.select_rows(&rows)).collect();
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, |_| false);
            let f = self.forward(&mut g, &p, &inputs)?;
            let hs: Vec<&Tensor> = f.h_views.iter().map(|&h| g.value(h)).collect();
            parts.push((
                g.value(f.z).clone(),
                Tensor::concat_cols(&hs)?,
                g.value(f.hhat).clone(),
            ));
            start = end;
        }
        let stack = |pick: fn(&(Tensor, Tensor, Tensor)) -> &Tensor| -> Result<Tensor> {
            let cols = parts.first().map_or(0, |p| pick(p).cols());
            let mut data = Vec::with_capacity(n * cols);
            for p in &parts {
                data.extend_from_slice(pick(p).data());
            }
            Tensor::new(n, cols, data)
        };
        Ok(Embeddings {
            z: stack(|p| &p.0)?,
            h_concat: stack(|p| &p.1)?,
            hhat: stack(|p| &p.2)?,
        })
    }

    /// k-means on Ĥ over the whole dataset, with metrics when labels exist.
    pub fn cluster(
        &self,
        ds: &MultiViewDataset,
        kmeans_cfg: &KMeansConfig,
        structure_cap: usize,
    ) -> Result<(ClusteringResult, Option<ClusterMetrics>)> {
        let k = ds.n_clusters;
        if k == 0 {
            return Err(Error::Config(
                "dataset does not declare a cluster count".into(),
            ));
        }
        let emb = self.embed(ds, structure_cap)?;
        let result = kmeans(&emb.hhat, k, kmeans_cfg)?;
        let metrics = match &ds.labels {
            Some(truth) => Some(evaluate(&result.labels, truth)?),
            None => None,
        };
        Ok((result, metrics))
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        match self.store.values().iter().position(|t| !t.all_finite()) {
            Some(i) => Err(self.store.names()[i].clone()),
            None => Ok(()),
        }
    }
}

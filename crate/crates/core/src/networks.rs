//! Parameter storage, dense layers, MLPs, and the per-view
//! encoder / decoder / projector triple.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat, ordered, named collection of every learnable tensor of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Drops every parameter from `len` on.
    pub fn truncate(&mut self, len: usize) {
        self.names.truncate(len);
        self.values.truncate(len);
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `g`: as a trainable leaf when
    /// `trainable(id)` holds, as a constant otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(ParamId) -> bool) -> Bound {
        let vars = self
            .values
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable(ParamId(i)) {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients of every parameter after `g.backward`, zero for constants.
    pub fn gradients(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, t)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

/// Graph handles for the parameters of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles supplied by the caller, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Glorot-uniform weights.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

/// `x W + b`, with `W` stored in × out and `b` as a 1 × out row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.shape(x).0;
        let xw = g.matmul(x, p.var(self.weight))?;
        let b = g.repeat_rows(p.var(self.bias), n)?;
        g.add(xw, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Input width, hidden widths..., output width.
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self {
            layer_dims,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Precondition(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Precondition("MLP widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Σ (in + 1) × out over layers.
    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        config: MlpConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn in_dim(&self) -> usize {
        self.config.layer_dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.config.layer_dims.last().unwrap()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (n, cols) = g.shape(x);
        if cols != self.in_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                left: (n, cols),
                right: (n, self.in_dim()),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            let act = if i == last {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            if act == Activation::Relu {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Encoder, decoder and contrastive projector of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewNetworks {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub projector: Mlp,
}

impl ViewNetworks {
    /// X^v (n × D_v) → Z^v (n × d_v).
    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.encoder.forward(g, p, x)
    }

    /// Z^v → X̂^v.
    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        self.decoder.forward(g, p, z)
    }

    /// Z^v → H^v (n × d_h).
    pub fn project(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        self.projector.forward(g, p, z)
    }

    pub fn autoencoder_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.encoder.params().chain(self.decoder.params())
    }
}

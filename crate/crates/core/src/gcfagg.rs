//! Global and cross-view feature aggregation.
//!
//! The per-view embeddings Z^v are concatenated into Z (n × d). Three
//! learned maps give Q1 = Z W_Q1, Q2 = Z W_Q2 and R = Z W_R; the
//! sample-to-sample structure matrix is S = row_softmax(Q1 Q2ᵀ / √d). Each
//! sample's representation is then rebuilt from the others as Ẑ = S R, and
//! the consensus representation is
//!
//! ```text
//! Ĥ = (relu((Z + Ẑ) W1 + b1) W2 + b2) W3 + b3
//! ```
//!
//! Samples are treated as an unordered set: nothing here depends on row
//! order, so permuting the batch permutes S, Ẑ and Ĥ consistently.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::networks::{glorot_uniform, Bound, Dense, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GcfaggParams {
    pub w_q1: ParamId,
    pub w_q2: ParamId,
    pub w_r: ParamId,
    pub ffn_in: Dense,
    pub ffn_out: Dense,
    pub head: Dense,
    /// Width of Z.
    pub d: usize,
}

impl GcfaggParams {
    pub fn init(
        store: &mut ParamStore,
        d: usize,
        d_ff: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_q1 = store.add("gcfagg.w_q1", glorot_uniform(d, d, rng));
        let w_q2 = store.add("gcfagg.w_q2", glorot_uniform(d, d, rng));
        let w_r = store.add("gcfagg.w_r", glorot_uniform(d, d, rng));
        let ffn_in = Dense::init(store, "gcfagg.ffn1", d, d_ff, rng);
        let ffn_out = Dense::init(store, "gcfagg.ffn2", d_ff, d, rng);
        let head = Dense::init(store, "gcfagg.ffn3", d, d_h, rng);
        Self {
            w_q1,
            w_q2,
            w_r,
            ffn_in,
            ffn_out,
            head,
            d,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.w_q1,
            self.w_q2,
            self.w_r,
            self.ffn_in.weight,
            self.ffn_in.bias,
            self.ffn_out.weight,
            self.ffn_out.bias,
            self.head.weight,
            self.head.bias,
        ]
    }
}

/// Graph nodes produced by [`compute_structure`].
#[derive(Clone, Copy, Debug)]
pub struct Structure {
    pub q1: Var,
    pub q2: Var,
    pub r: Var,
    pub s: Var,
}

/// Z = [Z¹, …, Z^V], columns in view order.
pub fn concat_views(g: &mut Graph, views: &[Var]) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::Precondition("no view representations to concatenate".into()));
    }
    g.concat_cols(views)
}

pub fn compute_structure(
    g: &mut Graph,
    z: Var,
    params: &GcfaggParams,
    bound: &Bound,
) -> Result<Structure> {
    let (n, d) = g.shape(z);
    if n == 0 {
        return Err(Error::Precondition("structure of an empty batch".into()));
    }
    if d != params.d {
        return Err(Error::Shape {
            op: "compute_structure",
            left: (n, d),
            right: (n, params.d),
        });
    }
    let (q1, q2, s) = structure_matrix(g, z, bound.var(params.w_q1), bound.var(params.w_q2))?;
    let r = g.matmul(z, bound.var(params.w_r))?;
    Ok(Structure { q1, q2, r, s })
}

/// `(Q1, Q2, S)` with S = row_softmax(Q1 Q2ᵀ / √d), d the width of `z`.
pub fn structure_matrix(g: &mut Graph, z: Var, w_q1: Var, w_q2: Var) -> Result<(Var, Var, Var)> {
    let d = g.shape(z).1;
    let q1 = g.matmul(z, w_q1)?;
    let q2 = g.matmul(z, w_q2)?;
    let q2t = g.transpose(q2);
    let scores = g.matmul(q1, q2t)?;
    let scaled = g.scalar_mul(scores, 1.0 / (d as f64).sqrt());
    let s = g.row_softmax(scaled);
    Ok((q1, q2, s))
}

/// Returns `(Ẑ, Ĥ)` with Ẑ = S R and Ĥ the refined consensus.
pub fn aggregate(
    g: &mut Graph,
    s: Var,
    r: Var,
    z: Var,
    params: &GcfaggParams,
    bound: &Bound,
) -> Result<(Var, Var)> {
    // summed over samples, so batch order must not affect the result
    let zhat = g.matmul_exact(s, r)?;
    let residual = g.add(z, zhat)?;
    let hidden = params.ffn_in.forward(g, bound, residual)?;
    let hidden = g.relu(hidden);
    let refined = params.ffn_out.forward(g, bound, hidden)?;
    let hhat = params.head.forward(g, bound, refined)?;
    Ok((zhat, hhat))
}

/// Fails unless every row of `s` sums to 1 within `tol`.
pub fn check_row_stochastic(s: &Tensor, tol: f64) -> Result<()> {
    for (i, row) in s.iter_rows().enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > tol || row.iter().any(|&x| x < 0.0) {
            return Err(Error::Precondition(format!(
                "structure matrix row {i} sums to {total}, not 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn setup(d: usize, d_ff: usize, d_h: usize, seed: u64) -> (ParamStore, GcfaggParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = GcfaggParams::init(&mut store, d, d_ff, d_h, &mut rng);
        for t in store.values_mut() {
            *t = Tensor::from_fn(t.rows(), t.cols(), |_, _| rng.random_range(-0.5..0.5));
        }
        (store, p)
    }

    #[test]
    fn concat_single_and_pair() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap());
        let one = concat_views(&mut g, &[a]).unwrap();
        assert_eq!(g.value(one), g.value(a));
        let both = concat_views(&mut g, &[a, b]).unwrap();
        let expected = Tensor::from_rows(&[[1.0, 2.0, 5.0, 6.0], [3.0, 4.0, 7.0, 8.0]]).unwrap();
        assert_eq!(g.value(both), &expected);
        let back = g.slice_cols(both, 2, 4).unwrap();
        assert_eq!(g.value(back), g.value(b));
        let c = g.constant(Tensor::zeros(3, 2));
        assert!(concat_views(&mut g, &[a, c]).is_err());
    }

    #[test]
    fn single_sample_structure_is_one() {
        let (store, p) = setup(4, 8, 3, 1);
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let z = g.constant(Tensor::from_fn(1, 4, |_, c| c as f64));
        let st = compute_structure(&mut g, z, &p, &b).unwrap();
        assert_eq!(g.value(st.s), &Tensor::ones(1, 1));
    }

    #[test]
    fn zero_input_gives_uniform_structure() {
        let (store, p) = setup(4, 8, 3, 2);
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let z = g.constant(Tensor::zeros(5, 4));
        let st = compute_structure(&mut g, z, &p, &b).unwrap();
        assert!(g.value(st.s).data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_structure_passes_r_through() {
        let (store, p) = setup(4, 8, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let z = g.constant(Tensor::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)));
        let st = compute_structure(&mut g, z, &p, &b).unwrap();
        let eye = g.constant(Tensor::identity(4));
        let (zhat, _) = aggregate(&mut g, eye, st.r, z, &p, &b).unwrap();
        assert_eq!(g.value(zhat), g.value(st.r));
    }

    #[test]
    fn zero_ffn_gives_bias_rows() {
        let (mut store, p) = setup(4, 8, 3, 4);
        for id in [p.ffn_in.weight, p.ffn_in.bias, p.ffn_out.weight, p.ffn_out.bias, p.head.weight] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let b3 = store.get(p.head.bias).clone();
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let z = g.constant(Tensor::ones(6, 4));
        let st = compute_structure(&mut g, z, &p, &b).unwrap();
        let (_, hhat) = aggregate(&mut g, st.s, st.r, z, &p, &b).unwrap();
        for row in g.value(hhat).iter_rows() {
            assert_eq!(row, b3.data());
        }
    }

    #[test]
    fn wrong_width_rejected() {
        let (store, p) = setup(4, 8, 3, 5);
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let z = g.constant(Tensor::zeros(3, 5));
        assert!(matches!(compute_structure(&mut g, z, &p, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn row_stochastic_check() {
        assert!(check_row_stochastic(&Tensor::filled(3, 3, 1.0 / 3.0), 1e-10).is_ok());
        assert!(check_row_stochastic(&Tensor::filled(2, 3, 0.3), 1e-10).is_err());
    }
}

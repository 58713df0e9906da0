use super::{exact_sum, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tag attached to a `clamp_min` node so callers can count how often each
/// guard engaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampKind {
    /// Row norms floored before normalisation.
    NormFloor,
    /// Contrastive denominators floored before division.
    Denominator,
    Other,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Divide(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    RowSoftmax(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    RowL2Norm(Var),
    RowSum(Var),
    RepeatRows(Var),
    RepeatCols(Var),
    ClampMin(Var, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order since an
/// op can only reference nodes that already exist. `backward` walks that
/// order in reverse exactly once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    norm_clamps: usize,
    denominator_clamps: usize,
    other_clamps: usize,
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass; `None` before backward or for
    /// nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn clamp_count(&self, kind: ClampKind) -> usize {
        match kind {
            ClampKind::NormFloor => self.norm_clamps,
            ClampKind::Denominator => self.denominator_clamps,
            ClampKind::Other => self.other_clamps,
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sa == (1, 1) {
            Ok(Broadcast::LeftScalar)
        } else if sb == (1, 1) {
            Ok(Broadcast::RightScalar)
        } else {
            Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    fn binary_forward(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let mode = self.broadcast(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        Ok(match mode {
            Broadcast::Same => av.zip_map(bv, f),
            Broadcast::LeftScalar => {
                let s = av.item();
                bv.map(|x| f(s, x))
            }
            Broadcast::RightScalar => {
                let s = bv.item();
                av.map(|x| f(x, s))
            }
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// [`Graph::matmul`] with an order-independent inner sum; see
    /// [`Tensor::matmul_exact`].
    pub fn matmul_exact(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_exact(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_forward("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_forward("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_forward("hadamard", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Hadamard(a, b), out, rg))
    }

    pub fn divide(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(pos) = self.value(b).data().iter().position(|&x| x == 0.0) {
            return Err(Error::Domain {
                op: "divide",
                detail: format!("zero denominator at flat index {pos}"),
            });
        }
        let out = self.binary_forward("divide", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Divide(a, b), out, rg))
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(Op::ScalarMul(a, s), out, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(Op::AddScalar(a), out, rg)
    }

    /// `s - a`, elementwise.
    pub fn rsub_scalar(&mut self, s: f64, a: Var) -> Var {
        let neg = self.scalar_mul(a, -1.0);
        self.add_scalar(neg, s)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(Op::Transpose(a), out, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_cols(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceCols(a, start), out, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    /// Softmax along each row, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for e in row.iter_mut() {
                *e = (*e - max).exp();
            }
            let total = exact_sum(row.iter().copied());
            for e in row.iter_mut() {
                *e /= total;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Op::RowSoftmax(a), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive operand {bad}"),
            });
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Log(a), out, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(Op::Mean(a), out, rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(Op::Square(a), out, rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x < 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative operand {bad}"),
            });
        }
        let out = self.value(a).map(f64::sqrt);
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Sqrt(a), out, rg))
    }

    /// Euclidean norm of each row, as an n×1 column.
    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        let out = Tensor::from_fn(x.rows(), 1, |r, _| data.get(r).copied().unwrap_or(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::RowL2Norm(a), out, rg)
    }

    /// Sum of each row, as an n×1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.rows(), 1, |r, _| exact_sum(x.row(r).iter().copied()));
        let rg = self.rg(&[a]);
        self.push(Op::RowSum(a), out, rg)
    }

    /// Stacks a 1×k row `n` times into n×k.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::Shape {
                op: "repeat_rows",
                left: x.shape(),
                right: (1, x.cols()),
            });
        }
        let out = Tensor::from_fn(n, x.cols(), |_, c| x.get(0, c));
        let rg = self.rg(&[a]);
        Ok(self.push(Op::RepeatRows(a), out, rg))
    }

    /// Repeats an n×1 column `k` times into n×k.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(Error::Shape {
                op: "repeat_cols",
                left: x.shape(),
                right: (x.rows(), 1),
            });
        }
        let out = Tensor::from_fn(x.rows(), k, |r, _| x.get(r, 0));
        let rg = self.rg(&[a]);
        Ok(self.push(Op::RepeatCols(a), out, rg))
    }

    /// `max(a, floor)` elementwise. Clamped entries pass no gradient and are
    /// counted under `kind`.
    pub fn clamp_min(&mut self, a: Var, floor: f64, kind: ClampKind) -> Var {
        let x = self.value(a);
        let clamped = x.data().iter().filter(|&&v| v < floor).count();
        let out = x.map(|v| if v < floor { floor } else { v });
        match kind {
            ClampKind::NormFloor => self.norm_clamps += clamped,
            ClampKind::Denominator => self.denominator_clamps += clamped,
            ClampKind::Other => self.other_clamps += clamped,
        }
        let rg = self.rg(&[a]);
        self.push(Op::ClampMin(a, floor), out, rg)
    }

    /// Reverse-mode sweep from a 1×1 `loss`. Every node that requires a
    /// gradient ends up with one, zero if it is unreachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph; build a new forward pass".into(),
            ));
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Backward(format!("loss must be 1x1, got {shape:?}")));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                let (r, c) = node.value.shape();
                grads[i] = Some(Tensor::zeros(r, c));
            }
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn binary_backward(
        &self,
        a: Var,
        b: Var,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        partials: impl Fn(f64, f64, f64) -> (f64, f64),
    ) {
        let (av, bv) = (self.value(a), self.value(b));
        let mut da = Tensor::zeros(av.rows(), av.cols());
        let mut db = Tensor::zeros(bv.rows(), bv.cols());
        let a_scalar = av.is_scalar() && g.len() != 1;
        let b_scalar = bv.is_scalar() && g.len() != 1;
        for (idx, &gi) in g.data().iter().enumerate() {
            let ai = if a_scalar { 0 } else { idx };
            let bi = if b_scalar { 0 } else { idx };
            let (pa, pb) = partials(gi, av.data()[ai], bv.data()[bi]);
            da.data_mut()[ai] += pa;
            db.data_mut()[bi] += pb;
        }
        self.accumulate(grads, a, da);
        self.accumulate(grads, b, db);
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match self.nodes[i].op.clone() {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.requires_grad(a) {
                    let da = g.matmul(&bv.transpose()).expect("matmul grad shape");
                    self.accumulate(grads, a, da);
                }
                if self.requires_grad(b) {
                    let db = av.transpose().matmul(g).expect("matmul grad shape");
                    self.accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => self.binary_backward(a, b, g, grads, |g, _, _| (g, g)),
            Op::Sub(a, b) => self.binary_backward(a, b, g, grads, |g, _, _| (g, -g)),
            Op::Hadamard(a, b) => self.binary_backward(a, b, g, grads, |g, x, y| (g * y, g * x)),
            Op::Divide(a, b) => {
                self.binary_backward(a, b, g, grads, |g, x, y| (g / y, -g * x / (y * y)))
            }
            Op::ScalarMul(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(p).cols();
                    let piece = g.slice_cols(offset, offset + width).expect("concat grad");
                    self.accumulate(grads, p, piece);
                    offset += width;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    da.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, a, da);
            }
            Op::Relu(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::RowSoftmax(a) => {
                let mut da = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((d, &yi), &gi) in da.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *d = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::Exp(a) => self.accumulate(grads, a, g.zip_map(out, |g, y| g * y)),
            Op::Log(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |g, x| g / x));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(grads, a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(a);
                let scale = g.item() / (r * c) as f64;
                self.accumulate(grads, a, Tensor::filled(r, c, scale));
            }
            Op::Square(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |g, x| 2.0 * g * x));
            }
            Op::Sqrt(a) => self.accumulate(grads, a, g.zip_map(out, |g, y| g / (2.0 * y))),
            Op::RowL2Norm(a) => {
                let x = self.value(a);
                let da = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    let norm = out.get(r, 0);
                    if norm == 0.0 {
                        0.0
                    } else {
                        g.get(r, 0) * x.get(r, c) / norm
                    }
                });
                self.accumulate(grads, a, da);
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(grads, a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::RepeatRows(a) => {
                let mut da = Tensor::zeros(1, g.cols());
                for row in g.iter_rows() {
                    for (d, &v) in da.data_mut().iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::RepeatCols(a) => {
                let da = Tensor::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum());
                self.accumulate(grads, a, da);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |g, x| if x < floor { 0.0 } else { g }));
            }
        }
    }
}

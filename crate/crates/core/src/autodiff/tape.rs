//! Tensor-level tape with forward-mode tangents and reverse-mode adjoints.
//!
//! Every node carries a primal value and, optionally, a tangent (its
//! derivative with respect to the single seeded input direction). Reverse
//! accumulation runs over both slots, so a loss built from tangents (via
//! [`Tape::tangent_of`]) is differentiated correctly with respect to every
//! leaf: reverse-over-forward.

use std::sync::Arc;

use super::dual::DualValue;
use super::tensor::{broadcast_zip, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Recip(Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    MinZero(Var),
    Rsqrt(Var),
    MatMul(Var, Var),
    SumRows(Var),
    Sum(Var),
    Gather(Var, Arc<[usize]>),
    Tangent(Var),
    StopTangent(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    primal: Tensor,
    /// `None` means identically zero.
    tangent: Option<Tensor>,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
}

/// Adjoints of every leaf with respect to one scalar loss.
#[derive(Debug, Clone)]
pub struct GradientVector {
    entries: Vec<(Var, Tensor)>,
}

impl GradientVector {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(v, _)| *v == leaf).map(|(_, g)| g)
    }

    /// Leaves in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.entries.iter().map(|(v, g)| (*v, g))
    }

    /// All adjoints concatenated in leaf registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, g)| g.data().iter().copied()).collect()
    }
}

fn acc(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => t.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

fn mul_t(a: &Tensor, b: &Tensor) -> Tensor {
    broadcast_zip(a, b, |x, y| x * y).expect("shapes validated when recorded")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, primal: Tensor, tangent: Option<Tensor>) -> Var {
        self.nodes.push(Node { op, primal, tangent });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Trainable value; its tangent is zero.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let v = self.push(Op::Leaf, value, None);
        self.leaves.push(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, None)
    }

    /// Non-trainable input with a seeded tangent (e.g. normalized time with tangent 1).
    pub fn input(&mut self, primal: Tensor, tangent: Tensor) -> Result<Var> {
        if primal.shape() != tangent.shape() {
            return Err(Error::invalid("input primal and tangent shapes differ"));
        }
        Ok(self.push(Op::Constant, primal, Some(tangent)))
    }

    pub fn primal(&self, v: Var) -> &Tensor {
        &self.node(v).primal
    }

    pub fn tangent(&self, v: Var) -> Option<&Tensor> {
        self.node(v).tangent.as_ref()
    }

    pub fn tangent_or_zeros(&self, v: Var) -> Tensor {
        let n = self.node(v);
        n.tangent.clone().unwrap_or_else(|| Tensor::zeros(n.primal.rows(), n.primal.cols()))
    }

    /// Primal and tangent of a `1 x 1` node.
    pub fn dual(&self, v: Var) -> DualValue {
        let n = self.node(v);
        DualValue::new(n.primal.item(), n.tangent.as_ref().map_or(0.0, |t| t.item()))
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64) -> Var {
        // df(x, f(x)) is the local derivative
        let n = self.node(a);
        let p = n.primal.map(&f);
        let t = n.tangent.as_ref().map(|t| {
            let d = n.primal.zip_map(&p, &df);
            d.zip_map(t, |d, t| d * t)
        });
        self.push(op, p, t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let p = broadcast_zip(&na.primal, &nb.primal, |x, y| x + y)?;
        let t = self.sum_tangents(a, b, p.shape(), 1.0);
        Ok(self.push(Op::Add(a, b), p, t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let p = broadcast_zip(&na.primal, &nb.primal, |x, y| x - y)?;
        let t = self.sum_tangents(a, b, p.shape(), -1.0);
        Ok(self.push(Op::Sub(a, b), p, t))
    }

    fn sum_tangents(&self, a: Var, b: Var, shape: (usize, usize), sign: f64) -> Option<Tensor> {
        let (ta, tb) = (self.node(a).tangent.as_ref(), self.node(b).tangent.as_ref());
        match (ta, tb) {
            (None, None) => None,
            (Some(x), None) => Some(x.broadcast_to(shape.0, shape.1)),
            (None, Some(y)) => Some(y.broadcast_to(shape.0, shape.1).map(|v| sign * v)),
            (Some(x), Some(y)) => Some(broadcast_zip(x, y, |x, y| x + sign * y).expect("same shapes as primals")),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let p = broadcast_zip(&na.primal, &nb.primal, |x, y| x * y)?;
        let t1 = na.tangent.as_ref().map(|ta| mul_t(ta, &nb.primal));
        let t2 = nb.tangent.as_ref().map(|tb| mul_t(&na.primal, tb));
        let t = match (t1, t2) {
            (None, None) => None,
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(y),
            (Some(mut x), Some(y)) => {
                x.add_assign(&y);
                Some(x)
            }
        };
        Ok(self.push(Op::Mul(a, b), p, t))
    }

    /// `1 / a`; fails if any element of `a` is zero.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.primal(a).data().iter().position(|&x| x == 0.0) {
            return Err(Error::numerical(format!("division by zero (element {i})"), None));
        }
        Ok(self.unary(a, Op::Recip(a), |x| 1.0 / x, |_, y| -y * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let r = self.recip(b)?;
        self.mul(a, r)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x, |_, _| k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp, |_, y| y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x, |x, _| 2.0 * x)
    }

    /// `min(a, 0)` elementwise.
    pub fn min_with_zero(&mut self, a: Var) -> Var {
        self.unary(a, Op::MinZero(a), |x| x.min(0.0), |x, _| if x < 0.0 { 1.0 } else { 0.0 })
    }

    /// `a^(-1/2)`; fails unless every element is positive.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.primal(a).data().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::numerical(format!("rsqrt of non-positive value (element {i})"), None));
        }
        Ok(self.unary(a, Op::Rsqrt(a), |x| 1.0 / x.sqrt(), |_, y| -0.5 * y * y * y))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let p = na.primal.matmul(false, &nb.primal, false)?;
        let t1 = na.tangent.as_ref().map(|ta| ta.matmul(false, &nb.primal, false)).transpose()?;
        let t2 = nb.tangent.as_ref().map(|tb| na.primal.matmul(false, tb, false)).transpose()?;
        let t = match (t1, t2) {
            (None, None) => None,
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(y),
            (Some(mut x), Some(y)) => {
                x.add_assign(&y);
                Some(x)
            }
        };
        Ok(self.push(Op::MatMul(a, b), p, t))
    }

    /// `input * weights + bias`, with `bias` a `1 x out` row broadcast over the batch.
    pub fn affine_combine(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let z = self.matmul(input, weights)?;
        self.add(z, bias)
    }

    /// Column sums (`r x c -> 1 x c`).
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let p = n.primal.sum_rows();
        let t = n.tangent.as_ref().map(Tensor::sum_rows);
        self.push(Op::SumRows(a), p, t)
    }

    /// Column means (`r x c -> 1 x c`).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let r = self.primal(a).rows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / r)
    }

    /// Sum of all elements as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let p = Tensor::scalar(n.primal.sum());
        let t = n.tangent.as_ref().map(|t| Tensor::scalar(t.sum()));
        self.push(Op::Sum(a), p, t)
    }

    /// Mean of all elements as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let len = self.primal(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / len)
    }

    /// Builds a `rows x cols` node whose element `i` (row-major) is `a[indices[i]]`.
    pub fn gather(&mut self, a: Var, rows: usize, cols: usize, indices: Arc<[usize]>) -> Result<Var> {
        let n = self.node(a);
        if indices.len() != rows * cols {
            return Err(Error::invalid("gather index count does not match output shape"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n.primal.len()) {
            return Err(Error::invalid(format!("gather index {bad} out of range")));
        }
        let pick = |src: &Tensor| {
            Tensor::from_vec(rows, cols, indices.iter().map(|&i| src.data()[i]).collect()).expect("checked length")
        };
        let p = pick(&n.primal);
        let t = n.tangent.as_ref().map(pick);
        Ok(self.push(Op::Gather(a, indices), p, t))
    }

    /// Rows `start..start + len` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.primal(a).shape();
        if start + len > r {
            return Err(Error::invalid(format!("row slice {start}..{} exceeds {r} rows", start + len)));
        }
        let idx: Arc<[usize]> = (start * c..(start + len) * c).collect();
        self.gather(a, len, c, idx)
    }

    /// Columns `start..start + len` of `a`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.primal(a).shape();
        if start + len > c {
            return Err(Error::invalid(format!("column slice {start}..{} exceeds {c} columns", start + len)));
        }
        let idx: Arc<[usize]> = (0..r).flat_map(|i| (start..start + len).map(move |j| i * c + j)).collect();
        self.gather(a, r, len, idx)
    }

    /// Promotes the tangent of `a` to a primal value so it can enter a loss.
    /// The result carries no tangent of its own.
    pub fn tangent_of(&mut self, a: Var) -> Var {
        let p = self.tangent_or_zeros(a);
        self.push(Op::Tangent(a), p, None)
    }

    /// Same primal as `a` with a zero tangent. Adjoints of the primal pass through.
    pub fn stop_tangent(&mut self, a: Var) -> Var {
        let p = self.primal(a).clone();
        self.push(Op::StopTangent(a), p, None)
    }

    /// Training-mode batch normalization over rows (the batch axis), followed
    /// by a per-column affine map: `scale * (x - mean) / sqrt(var + eps) + shift`.
    pub fn batch_normalize(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let b = self.primal(x).rows();
        self.batch_normalize_with(x, b, scale, shift, eps)
    }

    /// Batch normalization whose statistics come from the first `stats_rows`
    /// rows of `x` and are applied to every row.
    ///
    /// Adjoints flow through the statistics. Tangents do not: the tangent of
    /// row `i` is the derivative of the normalized map at fixed statistics,
    /// i.e. the pointwise derivative of the function the batch defines, not
    /// the derivative under a shift of the whole batch.
    pub fn batch_normalize_with(&mut self, x: Var, stats_rows: usize, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (b, c) = self.primal(x).shape();
        if stats_rows < 2 || stats_rows > b {
            return Err(Error::invalid(format!("batch normalization needs batch size >= 2, got {stats_rows}")));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("batch normalization epsilon must be > 0"));
        }
        for v in [scale, shift] {
            if self.primal(v).shape() != (1, c) {
                return Err(Error::invalid(format!("batch norm parameters must be 1 x {c}")));
            }
        }
        let batch = if stats_rows == b { x } else { self.rows(x, 0, stats_rows)? };
        let mean = self.mean_rows(batch);
        let batch_centered = self.sub(batch, mean)?;
        let sq = self.square(batch_centered);
        let var = self.mean_rows(sq);
        let eps = self.constant(Tensor::scalar(eps));
        let var_eps = self.add(var, eps)?;
        let inv_std = self.rsqrt(var_eps)?;
        let mean = self.stop_tangent(mean);
        let inv_std = self.stop_tangent(inv_std);
        let centered = self.sub(x, mean)?;
        let normalized = self.mul(centered, inv_std)?;
        let scaled = self.mul(normalized, scale)?;
        self.add(scaled, shift)
    }

    /// Reverse sweep from a `1 x 1` node. Returns the adjoint of every leaf,
    /// zero for leaves that do not influence `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradientVector> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("node {} is not on this tape ({} nodes)", loss.0, self.nodes.len())));
        }
        if self.primal(loss).shape() != (1, 1) {
            return Err(Error::invalid("backward needs a scalar (1 x 1) loss node"));
        }
        let n = loss.0 + 1;
        let mut gp: Vec<Option<Tensor>> = vec![None; n];
        let mut gt: Vec<Option<Tensor>> = vec![None; n];
        gp[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let (g_p, g_t) = (gp[i].take(), gt[i].take());
            if g_p.is_none() && g_t.is_none() {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                gp[i] = g_p;
                continue;
            }
            self.propagate(node, g_p, g_t, &mut gp, &mut gt)?;
        }

        let entries = self
            .leaves
            .iter()
            .map(|&v| {
                let g = if v.0 < n { gp[v.0].take() } else { None };
                let (r, c) = self.primal(v).shape();
                (v, g.unwrap_or_else(|| Tensor::zeros(r, c)))
            })
            .collect();
        Ok(GradientVector { entries })
    }

    fn propagate(
        &self,
        node: &Node,
        g_p: Option<Tensor>,
        g_t: Option<Tensor>,
        gp: &mut [Option<Tensor>],
        gt: &mut [Option<Tensor>],
    ) -> Result<()> {
        let out = &node.primal;
        let has_t = |v: Var| self.nodes[v.0].tangent.is_some();
        let shape = |v: Var| self.nodes[v.0].primal.shape();
        // Tangent adjoints only matter for nodes that carry a tangent.
        let g_t = g_t.filter(|_| node.tangent.is_some());

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(g) = &g_p {
                    acc(&mut gp[a.0], g.reduce_to(shape(*a)));
                    acc(&mut gp[b.0], g.reduce_to(shape(*b)).map(|v| sign * v));
                }
                if let Some(g) = &g_t {
                    if has_t(*a) {
                        acc(&mut gt[a.0], g.reduce_to(shape(*a)));
                    }
                    if has_t(*b) {
                        acc(&mut gt[b.0], g.reduce_to(shape(*b)).map(|v| sign * v));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                // d out.p / d a.p = b.p ; d out.t / d a.p = b.t ; d out.t / d a.t = b.p
                for (x, other) in [(*a, nb), (*b, na)] {
                    let mut dp: Option<Tensor> = g_p.as_ref().map(|g| mul_t(g, &other.primal));
                    if let (Some(g), Some(ot)) = (&g_t, &other.tangent) {
                        let term = mul_t(g, ot);
                        match &mut dp {
                            Some(d) => d.add_assign(&term),
                            None => dp = Some(term),
                        }
                    }
                    if let Some(d) = dp {
                        acc(&mut gp[x.0], d.reduce_to(shape(x)));
                    }
                    if let Some(g) = &g_t {
                        if has_t(x) {
                            acc(&mut gt[x.0], mul_t(g, &other.primal).reduce_to(shape(x)));
                        }
                    }
                }
            }
            Op::Recip(a) => {
                let d1 = out.map(|y| -y * y);
                let d2 = |t: f64, y: f64| 2.0 * t * y * y * y;
                self.unary_back(*a, out, &d1, d2, g_p, g_t, gp, gt);
            }
            Op::Scale(a, k) => {
                let k = *k;
                if let Some(g) = g_p {
                    acc(&mut gp[a.0], g.map(|v| k * v));
                }
                if let Some(g) = g_t {
                    acc(&mut gt[a.0], g.map(|v| k * v));
                }
            }
            Op::Tanh(a) => {
                let d1 = out.map(|y| 1.0 - y * y);
                let d2 = |t: f64, y: f64| t * (-2.0 * y * (1.0 - y * y));
                self.unary_back(*a, out, &d1, d2, g_p, g_t, gp, gt);
            }
            Op::Exp(a) => {
                let d1 = out.clone();
                let d2 = |t: f64, y: f64| t * y;
                self.unary_back(*a, out, &d1, d2, g_p, g_t, gp, gt);
            }
            Op::Square(a) => {
                let d1 = self.nodes[a.0].primal.map(|x| 2.0 * x);
                if let Some(g) = &g_p {
                    acc(&mut gp[a.0], g.zip_map(&d1, |g, d| g * d));
                }
                if let (Some(g), Some(ta)) = (&g_t, &self.nodes[a.0].tangent) {
                    acc(&mut gp[a.0], g.zip_map(ta, |g, t| 2.0 * g * t));
                    acc(&mut gt[a.0], g.zip_map(&d1, |g, d| g * d));
                }
            }
            Op::MinZero(a) => {
                let mask = self.nodes[a.0].primal.map(|x| if x < 0.0 { 1.0 } else { 0.0 });
                if let Some(g) = g_p {
                    acc(&mut gp[a.0], g.zip_map(&mask, |g, m| g * m));
                }
                if let Some(g) = g_t {
                    acc(&mut gt[a.0], g.zip_map(&mask, |g, m| g * m));
                }
            }
            Op::Rsqrt(a) => {
                let d1 = out.map(|y| -0.5 * y * y * y);
                let d2 = |t: f64, y: f64| 0.75 * t * y.powi(5);
                self.unary_back(*a, out, &d1, d2, g_p, g_t, gp, gt);
            }
            Op::MatMul(a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                if let Some(g) = &g_p {
                    acc(&mut gp[a.0], g.matmul(false, &nb.primal, true)?);
                    acc(&mut gp[b.0], na.primal.matmul(true, g, false)?);
                }
                if let Some(g) = &g_t {
                    if let Some(tb) = &nb.tangent {
                        acc(&mut gp[a.0], g.matmul(false, tb, true)?);
                        acc(&mut gt[b.0], na.primal.matmul(true, g, false)?);
                    }
                    if let Some(ta) = &na.tangent {
                        acc(&mut gp[b.0], ta.matmul(true, g, false)?);
                        acc(&mut gt[a.0], g.matmul(false, &nb.primal, true)?);
                    }
                }
            }
            Op::SumRows(a) | Op::Sum(a) => {
                let (r, c) = shape(*a);
                if let Some(g) = g_p {
                    acc(&mut gp[a.0], g.broadcast_to(r, c));
                }
                if let Some(g) = g_t {
                    acc(&mut gt[a.0], g.broadcast_to(r, c));
                }
            }
            Op::Gather(a, idx) => {
                let (r, c) = shape(*a);
                let scatter = |g: &Tensor| {
                    let mut t = Tensor::zeros(r, c);
                    let d = t.data_mut();
                    for (k, &i) in idx.iter().enumerate() {
                        d[i] += g.data()[k];
                    }
                    t
                };
                if let Some(g) = &g_p {
                    acc(&mut gp[a.0], scatter(g));
                }
                if let Some(g) = &g_t {
                    acc(&mut gt[a.0], scatter(g));
                }
            }
            Op::Tangent(a) => {
                if let Some(g) = g_p {
                    if has_t(*a) {
                        acc(&mut gt[a.0], g);
                    }
                }
            }
            Op::StopTangent(a) => {
                if let Some(g) = g_p {
                    acc(&mut gp[a.0], g);
                }
            }
        }
        Ok(())
    }

    /// Shared reverse rule for `out = f(a)`, `out.t = f'(a) a.t`.
    /// `d1 = f'(a)`; `d2(a.t, out)` is `d out.t / d a.p`.
    #[allow(clippy::too_many_arguments)]
    fn unary_back(
        &self,
        a: Var,
        out: &Tensor,
        d1: &Tensor,
        d2: impl Fn(f64, f64) -> f64,
        g_p: Option<Tensor>,
        g_t: Option<Tensor>,
        gp: &mut [Option<Tensor>],
        gt: &mut [Option<Tensor>],
    ) {
        if let Some(g) = &g_p {
            acc(&mut gp[a.0], g.zip_map(d1, |g, d| g * d));
        }
        if let (Some(g), Some(ta)) = (&g_t, &self.nodes[a.0].tangent) {
            acc(&mut gt[a.0], g.zip_map(d1, |g, d| g * d));
            let mut t = Tensor::zeros(g.rows(), g.cols());
            for (k, v) in t.data_mut().iter_mut().enumerate() {
                *v = g.data()[k] * d2(ta.data()[k], out.data()[k]);
            }
            acc(&mut gp[a.0], t);
        }
    }
}

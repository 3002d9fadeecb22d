//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! Operations are recorded in execution order, which is a topological order
//! of the computation graph. [`Tape::backward`] walks the tape once in
//! reverse, accumulating adjoints into every node that depends on a
//! differentiable leaf.

use super::mixture::RbfMixture;
use super::tensor::{matmul, matmul_nt, matmul_tn, sq_dist, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// `Σ_ij w_ij Σ_q exp(-|a_i - b_j|² / (2σ_q²))`
    /// `coef[i][j] = w_ij Σ_q c_q k_q(a_i, b_j)` is cached when a gradient is needed.
    KernelSum {
        a: Var,
        b: Var,
        coef: Option<Tensor2>,
    },
    /// Mean cross-entropy of row-wise softmax against one-hot targets.
    SoftmaxXent {
        logits: Var,
        targets: Tensor2,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `∂out/∂v`. Nodes that do not influence the output get an exact zero.
    pub fn wrt(&self, v: Var) -> Tensor2 {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Tensor2>, delta: Tensor2) {
    match slot {
        Some(g) => {
            for (x, d) in g.data_mut().iter_mut().zip(delta.data()) {
                *x += d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf (data, noise).
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds a `1 x k` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// Repeats a `1 x k` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let src = self.value(a);
        if src.rows() != 1 {
            return Err(Error::shape("broadcast_rows", src.shape(), (n, src.cols())));
        }
        let value = Tensor2::zeros(n, src.cols()).add_row(src)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::BroadcastRows(a), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor2::concat_cols(&vals)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor2::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Weighted RBF-mixture kernel sum between the rows of `a` and `b`.
    ///
    /// `weights`, when given, is an `a.rows x b.rows` constant multiplying each
    /// pair (a label kernel, for joint discrepancies).
    pub fn kernel_sum(
        &mut self,
        a: Var,
        b: Var,
        sigmas: &[f64],
        weights: Option<Tensor2>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::shape("kernel_sum", va.shape(), vb.shape()));
        }
        if let Some(w) = &weights {
            if w.shape() != (va.rows(), vb.rows()) {
                return Err(Error::shape(
                    "kernel_sum weights",
                    w.shape(),
                    (va.rows(), vb.rows()),
                ));
            }
        }
        let mix = RbfMixture::new(sigmas);
        let ng = self.ng(a) || self.ng(b);
        let mut coef = ng.then(|| Tensor2::zeros(va.rows(), vb.rows()));
        let mut total = 0.0;
        for i in 0..va.rows() {
            let ai = va.row(i);
            let mut acc = 0.0;
            for j in 0..vb.rows() {
                let w = weights.as_ref().map_or(1.0, |w| w.get(i, j));
                if w == 0.0 {
                    continue;
                }
                let (k, ck) = mix.eval(sq_dist(ai, vb.row(j)));
                acc += w * k;
                if let Some(c) = coef.as_mut() {
                    c.set(i, j, w * ck);
                }
            }
            total += acc;
        }
        Ok(self.push(
            Tensor2::scalar(total),
            Op::KernelSum {
                a,
                b,
                coef: coef.take(),
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy of `logits` (n x C) against one-hot `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Tensor2) -> Result<Var> {
        let l = self.value(logits);
        if l.shape() != targets.shape() {
            return Err(Error::shape("softmax_xent", l.shape(), targets.shape()));
        }
        let n = l.rows().max(1) as f64;
        let mut loss = 0.0;
        for r in 0..l.rows() {
            let row = l.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for (v, t) in row.iter().zip(targets.row(r)) {
                loss -= t * (v - lse);
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor2::scalar(loss / n),
            Op::SoftmaxXent { logits, targets },
            ng,
        ))
    }

    /// Reverse sweep from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        // Only differentiable nodes carry meaningful adjoints.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(
        &self,
        op: &Op,
        value: &Tensor2,
        g: &Tensor2,
        grads: &mut [Option<Tensor2>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], matmul_nt(g, self.value(*b)));
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.hadamard(self.value(*b))?);
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.hadamard(self.value(*a))?);
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.ng(*row) {
                    accumulate(&mut grads[row.0], g.sum_rows());
                }
            }
            Op::BroadcastRows(a) => accumulate(&mut grads[a.0], g.sum_rows()),
            Op::Scale(a, k) => accumulate(&mut grads[a.0], g.scale(*k)),
            Op::Tanh(a) => {
                let d = g.zip_map(value, "tanh'", |gv, y| gv * (1.0 - y * y))?;
                accumulate(&mut grads[a.0], d);
            }
            Op::Relu(a) => {
                let d = g.zip_map(
                    self.value(*a),
                    "relu'",
                    |gv, x| if x > 0.0 { gv } else { 0.0 },
                )?;
                accumulate(&mut grads[a.0], d);
            }
            Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    if self.ng(*p) {
                        let idx: Vec<usize> = (offset..offset + width).collect();
                        accumulate(&mut grads[p.0], g.select_cols(&idx));
                    }
                    offset += width;
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(&mut grads[a.0], Tensor2::filled(r, c, g.item()?));
            }
            Op::KernelSum { a, b, coef } => {
                let gs = g.item()?;
                let coef = coef.as_ref().expect("cached when differentiable");
                let (va, vb) = (self.value(*a), self.value(*b));
                let dim = va.cols();
                let (need_a, need_b) = (self.ng(*a), self.ng(*b));
                let mut ga = Tensor2::zeros(va.rows(), dim);
                let mut gb = Tensor2::zeros(vb.rows(), dim);
                for i in 0..va.rows() {
                    let ai = va.row(i);
                    for j in 0..vb.rows() {
                        // d/d(a_i) exp(-c d2) = -2c (a_i - b_j) exp(-c d2)
                        let c = coef.get(i, j);
                        if c == 0.0 {
                            continue;
                        }
                        let c = -2.0 * gs * c;
                        let bj = vb.row(j);
                        if need_a {
                            for (k, o) in ga.row_mut(i).iter_mut().enumerate() {
                                *o += c * (ai[k] - bj[k]);
                            }
                        }
                        if need_b {
                            for (k, o) in gb.row_mut(j).iter_mut().enumerate() {
                                *o -= c * (ai[k] - bj[k]);
                            }
                        }
                    }
                }
                if need_a {
                    accumulate(&mut grads[a.0], ga);
                }
                if need_b {
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::SoftmaxXent { logits, targets } => {
                let l = self.value(*logits);
                let n = l.rows().max(1) as f64;
                let gs = g.item()?;
                let mut d = Tensor2::zeros(l.rows(), l.cols());
                for r in 0..l.rows() {
                    let row = l.row(r);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    let t = targets.row(r);
                    let tsum: f64 = t.iter().sum();
                    for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                        let p = (row[k] - mx).exp() / z;
                        *o = gs * (tsum * p - t[k]) / n;
                    }
                }
                accumulate(&mut grads[logits.0], d);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn square_rule() {
        let mut t = Tape::new();
        let w = t.param(Tensor2::scalar(3.0));
        let y = t.mul(w, w).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(w).item().unwrap(), 6.0);
    }

    #[test]
    fn disconnected_leaf_is_zero() {
        let mut t = Tape::new();
        let w = t.param(Tensor2::scalar(3.0));
        let unused = t.param(Tensor2::zeros(2, 2));
        let c = t.constant(Tensor2::scalar(5.0));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w).item().unwrap(), 0.0);
        assert_eq!(g.wrt(unused), Tensor2::zeros(2, 2));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor2::zeros(2, 1));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    fn mlp_loss(params: &[Tensor2], x: &Tensor2, record: bool) -> (f64, Vec<Tensor2>) {
        let mut t = Tape::new();
        let ids: Vec<Var> = params.iter().map(|p| t.param(p.clone())).collect();
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, ids[0]).unwrap();
        let h = t.add_row(h, ids[1]).unwrap();
        let h = t.tanh(h);
        let h2 = t.relu(h);
        let hc = t.concat_cols(&[h, h2]).unwrap();
        let o = t.matmul(hc, ids[2]).unwrap();
        let ot = t.transpose(o);
        let oo = t.matmul(o, ot).unwrap();
        let sq = t.mul(oo, oo).unwrap();
        let sc = t.scale(sq, 0.1);
        let s1 = t.sum(sc);
        let k = t.kernel_sum(o, o, &[0.7, 1.9], None).unwrap();
        let total = t.sub(s1, k).unwrap();
        let loss = t.value(total).item().unwrap();
        if !record {
            return (loss, vec![]);
        }
        let g = t.backward(total).unwrap();
        (loss, ids.iter().map(|&i| g.wrt(i)).collect())
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let x = rng.gaussian(5, 3).unwrap();
            let params = vec![
                rng.gaussian(3, 4).unwrap().scale(0.5),
                rng.gaussian(1, 4).unwrap().scale(0.5),
                rng.gaussian(8, 2).unwrap().scale(0.5),
            ];
            let (_, analytic) = mlp_loss(&params, &x, true);
            let h = 1e-5;
            for (pi, p) in params.iter().enumerate() {
                for k in 0..p.len() {
                    let mut plus = params.clone();
                    plus[pi].data_mut()[k] += h;
                    let mut minus = params.clone();
                    minus[pi].data_mut()[k] -= h;
                    let fd =
                        (mlp_loss(&plus, &x, false).0 - mlp_loss(&minus, &x, false).0) / (2.0 * h);
                    let a = analytic[pi].data()[k];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "seed {seed} param {pi}[{k}]: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn softmax_xent_gradient() {
        let mut rng = Rng::new(4);
        let logits = rng.gaussian(4, 3).unwrap();
        let mut targets = Tensor2::zeros(4, 3);
        for r in 0..4 {
            targets.set(r, r % 3, 1.0);
        }
        let eval = |l: &Tensor2| {
            let mut t = Tape::new();
            let v = t.param(l.clone());
            let o = t.softmax_xent(v, targets.clone()).unwrap();
            (t.value(o).item().unwrap(), t.backward(o).unwrap().wrt(v))
        };
        let (_, g) = eval(&logits);
        for k in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[k] += 1e-5;
            let mut m = logits.clone();
            m.data_mut()[k] -= 1e-5;
            let fd = (eval(&p).0 - eval(&m).0) / 2e-5;
            assert!((fd - g.data()[k]).abs() < 1e-8);
        }
    }
}

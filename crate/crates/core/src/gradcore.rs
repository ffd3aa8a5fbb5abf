//! Define-by-run reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records one forward pass. Every node owns its value; calling
//! [`Graph::backward`] on a scalar node consumes the graph and returns the
//! gradient of that scalar with respect to every node, accumulated additively
//! across fan-out.
//!
//! ```
//! use latentode::gradcore::Graph;
//! use latentode::Matrix;
//!
//! let mut g = Graph::new();
//! let w = g.leaf(Matrix::row_vector(&[1.0, 2.0, 3.0]));
//! let s1 = g.sum(w);
//! let s2 = g.sum(w);
//! let loss = g.add(s1, s2).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(w).as_slice(), &[2.0, 2.0, 2.0]);
//! ```

use crate::error::{Error, Result};
use crate::matrix::{matmul_into, matmul_nt_acc, matmul_tn_acc, Matrix};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Second operand may be a single row broadcast over the first's rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize),
    Transpose(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    SmoothL1(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// One forward pass worth of recorded operations, in topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: NodeId) -> Matrix {
        std::mem::replace(&mut self.grads[id.0], Matrix::zeros(0, 0))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise sum; `b` may be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x + y)
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            let mut out = va.clone();
            for r in 0..out.rows() {
                for (o, bv) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                    *o += bv;
                }
            }
            out
        } else {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        };
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.same_shape("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.same_shape("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        Ok(va.zip_map(vb, f))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat_cols", "no operands"))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {} and {}", rows, v.rows()),
                ));
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start >= end || end > v.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{end} of {:?}", v.shape()),
            ));
        }
        let mut out = Matrix::zeros(v.rows(), end - start);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::shape("concat_rows", "no operands"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {} and {}", cols, v.cols()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start >= end || end > v.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{end} of {:?}", v.shape()),
            ));
        }
        let out = v.slice_rows(start, end);
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Matrix::scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let diff = self.same_shape("mse_loss", pred, target, |x, y| x - y)?;
        let out = Matrix::scalar(diff.squared_norm() / diff.len() as f64);
        Ok(self.push(out, Op::Mse(pred, target)))
    }

    /// Mean Huber loss with unit transition: `0.5 d^2` for `|d| < 1`, else `|d| - 0.5`.
    pub fn smooth_l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let diff = self.same_shape("smooth_l1_loss", pred, target, |x, y| x - y)?;
        let total: f64 = diff
            .as_slice()
            .iter()
            .map(|&d| if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 })
            .sum();
        let out = Matrix::scalar(total / diff.len() as f64);
        Ok(self.push(out, Op::SmoothL1(pred, target)))
    }

    /// Reverse sweep from a scalar node. Consumes the graph.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0] = Matrix::scalar(1.0);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::replace(&mut grads[idx], Matrix::zeros(0, 0));
            if g.as_slice().iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Matrix]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                matmul_nt_acc(g, vb, &mut grads[a.0]);
                matmul_tn_acc(va, g, &mut grads[b.0]);
            }
            Op::Add(a, b) => {
                grads[a.0].add_assign(g);
                if self.shape(*b) == g.shape() {
                    grads[b.0].add_assign(g);
                } else {
                    let gb = grads[b.0].as_mut_slice();
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                grads[a.0].add_assign(g);
                let gb = grads[b.0].as_mut_slice();
                for (acc, v) in gb.iter_mut().zip(g.as_slice()) {
                    *acc -= v;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(&mut grads[a.0], g.as_slice(), vb.as_slice(), |gv, bv| gv * bv);
                accumulate(&mut grads[b.0], g.as_slice(), va.as_slice(), |gv, av| gv * av);
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                for (acc, v) in grads[a.0].as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += f * v;
                }
            }
            Op::AddScalar(a) => grads[a.0].add_assign(g),
            Op::Sigmoid(a) => {
                accumulate(&mut grads[a.0], g.as_slice(), y.as_slice(), |gv, s| {
                    gv * s * (1.0 - s)
                });
            }
            Op::Tanh(a) => {
                accumulate(&mut grads[a.0], g.as_slice(), y.as_slice(), |gv, t| {
                    gv * (1.0 - t * t)
                });
            }
            Op::Exp(a) => {
                accumulate(&mut grads[a.0], g.as_slice(), y.as_slice(), |gv, e| gv * e);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    let gp = &mut grads[p.0];
                    for r in 0..g.rows() {
                        for (acc, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                            *acc += v;
                        }
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for (acc, v) in ga.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    for (acc, v) in grads[p.0]
                        .as_mut_slice()
                        .iter_mut()
                        .zip(&g.as_slice()[offset..offset + len])
                    {
                        *acc += v;
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = g.cols();
                let ga = &mut grads[a.0].as_mut_slice()[start * cols..(start + g.rows()) * cols];
                for (acc, v) in ga.iter_mut().zip(g.as_slice()) {
                    *acc += v;
                }
            }
            Op::Transpose(a) => grads[a.0].add_assign(&g.transpose()),
            Op::Sum(a) => {
                let s = g.as_slice()[0];
                grads[a.0].as_mut_slice().iter_mut().for_each(|v| *v += s);
            }
            Op::Mean(a) => {
                let s = g.as_slice()[0] / self.value(*a).len() as f64;
                grads[a.0].as_mut_slice().iter_mut().for_each(|v| *v += s);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let s = 2.0 * g.as_slice()[0] / va.len() as f64;
                let d: Vec<f64> = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| s * (x - y)).collect();
                add_signed(&mut grads[a.0], &d, 1.0);
                add_signed(&mut grads[b.0], &d, -1.0);
            }
            Op::SmoothL1(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let s = g.as_slice()[0] / va.len() as f64;
                let d: Vec<f64> = va
                    .as_slice()
                    .iter()
                    .zip(vb.as_slice())
                    .map(|(x, y)| {
                        let d = x - y;
                        s * if d.abs() < 1.0 { d } else { d.signum() }
                    })
                    .collect();
                add_signed(&mut grads[a.0], &d, 1.0);
                add_signed(&mut grads[b.0], &d, -1.0);
            }
        }
    }
}

fn accumulate(acc: &mut Matrix, g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((a, &gv), &o) in acc.as_mut_slice().iter_mut().zip(g).zip(other) {
        *a += f(gv, o);
    }
}

fn add_signed(acc: &mut Matrix, d: &[f64], sign: f64) {
    for (a, v) in acc.as_mut_slice().iter_mut().zip(d) {
        *a += sign * v;
    }
}

/// Compares analytic gradients of a scalar-valued graph builder against
/// central finite differences, coordinate by coordinate.
///
/// `build` receives a fresh graph and one leaf per entry of `params`, and
/// returns the scalar loss node. The result is the maximum over all
/// coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss)
            .item()
            .ok_or_else(|| Error::Contract("grad_check builder must return a scalar".into()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id);
        for k in 0..params[pi].len() {
            let orig = params[pi].as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + eps;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - eps;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(0.0));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).item(), Some(0.5));
    }

    #[test]
    fn smooth_l1_quadratic_branch() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::scalar(0.5));
        let b = g.leaf(Matrix::scalar(0.0));
        let l = g.smooth_l1_loss(a, b).unwrap();
        assert_eq!(g.value(l).item(), Some(0.125));
    }

    #[test]
    fn smooth_l1_linear_branch() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::row_vector(&[3.0, -0.5]));
        let b = g.leaf(Matrix::row_vector(&[0.0, 0.0]));
        let l = g.smooth_l1_loss(a, b).unwrap();
        // (2.5 + 0.125) / 2
        assert_eq!(g.value(l).item(), Some(1.3125));
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::row_vector(&[1.0, -2.0, 3.5]));
        let l = g.mse_loss(a, a).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let w = g.leaf(Matrix::filled(2, 3, 0.7));
        let l = g.sum(w);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let w = g.leaf(Matrix::filled(2, 2, -1.0));
        let a = g.sum(w);
        let b = g.sum(w);
        let l = g.add(a, b).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w), &Matrix::filled(2, 2, 2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.leaf(Matrix::zeros(2, 2));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::zeros(2, 3));
        let b = g.leaf(Matrix::zeros(2, 3));
        match g.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("(2, 3)"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.leaf(Matrix::zeros(3, 2));
        assert!(matches!(g.mul(a, c), Err(Error::Shape { op: "mul", .. })));
    }

    #[test]
    fn linear_mse_gradient_matches_closed_form() {
        // loss = mean((x w - y)^2), grad_w = 2 x^T (x w - y) / N
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 6, 3);
        let w = random(&mut rng, 3, 1);
        let y = random(&mut rng, 6, 1);

        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let wn = g.leaf(w.clone());
        let yn = g.leaf(y.clone());
        let pred = g.matmul(xn, wn).unwrap();
        let loss = g.mse_loss(pred, yn).unwrap();
        let grads = g.backward(loss).unwrap();

        let resid = x.matmul(&w).unwrap().zip_map(&y, |a, b| a - b);
        let mut expected = x.transpose().matmul(&resid).unwrap();
        expected.scale_in_place(2.0 / 6.0);
        assert!(grads.get(wn).max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;
        let cases: Vec<(&str, Vec<Matrix>, Builder)> = vec![
            (
                "matmul",
                vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)],
                Box::new(|g, p| {
                    let m = g.matmul(p[0], p[1])?;
                    Ok(g.sum(m))
                }),
            ),
            (
                "add_broadcast",
                vec![random(&mut rng, 3, 4), random(&mut rng, 1, 4), random(&mut rng, 3, 4)],
                Box::new(|g, p| {
                    let s = g.add(p[0], p[1])?;
                    g.mse_loss(s, p[2])
                }),
            ),
            (
                "sub_mul",
                vec![random(&mut rng, 2, 3), random(&mut rng, 2, 3)],
                Box::new(|g, p| {
                    let d = g.sub(p[0], p[1])?;
                    let m = g.mul(d, p[0])?;
                    Ok(g.sum(m))
                }),
            ),
            (
                "sigmoid_tanh_exp",
                vec![random(&mut rng, 2, 3)],
                Box::new(|g, p| {
                    let a = g.sigmoid(p[0]);
                    let b = g.tanh(p[0]);
                    let c = g.exp(p[0]);
                    let ab = g.mul(a, b)?;
                    let abc = g.mul(ab, c)?;
                    Ok(g.sum(abc))
                }),
            ),
            (
                "scale_add_scalar_mean",
                vec![random(&mut rng, 3, 3)],
                Box::new(|g, p| {
                    let s = g.scale(p[0], -1.7);
                    let t = g.add_scalar(s, 0.3);
                    let sq = g.mul(t, t)?;
                    Ok(g.mean(sq))
                }),
            ),
            (
                "concat_slice_cols",
                vec![random(&mut rng, 2, 2), random(&mut rng, 2, 3)],
                Box::new(|g, p| {
                    let c = g.concat_cols(&[p[0], p[1]])?;
                    let s = g.slice_cols(c, 1, 4)?;
                    let sq = g.mul(s, s)?;
                    Ok(g.sum(sq))
                }),
            ),
            (
                "concat_slice_rows_transpose",
                vec![random(&mut rng, 2, 3), random(&mut rng, 1, 3)],
                Box::new(|g, p| {
                    let c = g.concat_rows(&[p[0], p[1]])?;
                    let s = g.slice_rows(c, 1, 3)?;
                    let t = g.transpose(s);
                    let m = g.matmul(s, t)?;
                    Ok(g.sum(m))
                }),
            ),
            (
                "smooth_l1",
                vec![
                    Matrix::row_vector(&[0.3, -2.0, 1.7, -0.4]),
                    Matrix::row_vector(&[0.1, 0.2, -0.3, 0.25]),
                ],
                Box::new(|g, p| g.smooth_l1_loss(p[0], p[1])),
            ),
        ];
        for (name, params, build) in cases {
            let err = grad_check(build, &params, 1e-5).unwrap();
            assert!(err < 1e-6, "{name}: max relative error {err:e}");
        }
    }
}

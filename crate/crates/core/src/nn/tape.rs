use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, sigmoid_scalar};
use super::{same_shape, NnError, ParamId, ParamStore, Tensor};
use crate::chem::MolecularGraph;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// An operation with a hand-written backward pass.
pub trait CustomOp {
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NnError>;
    /// Gradients for every input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

/// Sparse message-passing structure with symmetric normalisation over
/// `A + I`. Node `i` receives `x_i / d̃_i` plus `gate[k] x_j / sqrt(d̃_i d̃_j)`
/// for every neighbour `j` reached through an edge of kind `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnGraph {
    n: usize,
    inv_sqrt_deg: Vec<f64>,
    /// directed (i, j, kind), sorted by (i, j)
    edges: Vec<(usize, usize, usize)>,
    kinds: usize,
}

impl GcnGraph {
    /// Edge kind = bond-order index (four kinds).
    pub fn from_molecule(g: &MolecularGraph) -> Self {
        let edges = g.bonds().iter().map(|b| (b.a, b.b, b.order.index()));
        Self::from_edges(g.atom_count(), edges, 4)
    }

    /// Undirected edges given once each.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, usize)>, kinds: usize) -> Self {
        let mut directed = Vec::new();
        let mut deg = vec![1usize; n];
        for (a, b, k) in edges {
            assert!(a < n && b < n && a != b && k < kinds, "edge out of range");
            directed.push((a, b, k));
            directed.push((b, a, k));
            deg[a] += 1;
            deg[b] += 1;
        }
        directed.sort_unstable();
        let inv_sqrt_deg = deg.iter().map(|&d| 1.0 / libm::sqrt(d as f64)).collect();
        Self { n, inv_sqrt_deg, edges: directed, kinds }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn kinds(&self) -> usize {
        self.kinds
    }

    fn check(&self, x: &Tensor, gates: Option<&Tensor>) -> Result<(), NnError> {
        if x.rows() != self.n {
            return Err(NnError::Shape { op: "gcn", left: (self.n, self.n), right: x.shape() });
        }
        if let Some(g) = gates {
            if g.shape() != (1, self.kinds) {
                return Err(NnError::Shape { op: "gcn gates", left: (1, self.kinds), right: g.shape() });
            }
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &Tensor, gates: Option<&Tensor>) -> Result<Tensor, NnError> {
        self.check(x, gates)?;
        let d = x.cols();
        let mut out = Tensor::zeros(self.n, d);
        let data = out.data_mut();
        for i in 0..self.n {
            let s = self.inv_sqrt_deg[i] * self.inv_sqrt_deg[i];
            for c in 0..d {
                data[i * d + c] = s * x.get(i, c);
            }
        }
        for &(i, j, k) in &self.edges {
            let gate = gates.map_or(1.0, |g| g.data()[k]);
            let w = gate * self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j];
            for c in 0..d {
                data[i * d + c] += w * x.get(j, c);
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &Tensor, gates: Option<&Tensor>, grad: &Tensor) -> (Tensor, Option<Tensor>) {
        let d = x.cols();
        let mut dx = Tensor::zeros(self.n, d);
        let mut dg = gates.map(|_| Tensor::zeros(1, self.kinds));
        for i in 0..self.n {
            let s = self.inv_sqrt_deg[i] * self.inv_sqrt_deg[i];
            for c in 0..d {
                dx.data_mut()[i * d + c] += s * grad.get(i, c);
            }
        }
        for &(i, j, k) in &self.edges {
            let norm = self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j];
            let gate = gates.map_or(1.0, |g| g.data()[k]);
            for c in 0..d {
                dx.data_mut()[j * d + c] += gate * norm * grad.get(i, c);
            }
            if let Some(dg) = dg.as_mut() {
                dg.data_mut()[k] += norm * kernels::dot(grad.row(i), x.row(j));
            }
        }
        (dx, dg)
    }
}

enum Op {
    Const,
    Param { tag: u64, id: ParamId },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    MeanRows(Var),
    Row(Var, usize),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Gcn { graph: Rc<GcnGraph>, x: Var, gates: Option<Var> },
    /// sum over entries of binary cross-entropy on logits
    Bce { logits: Var, targets: Vec<f64> },
    /// sum over rows of `-Σ t · log_softmax(logits)`
    SoftCe { logits: Var, targets: Tensor },
    Mse(Var, Var),
    Custom { op: Box<dyn CustomOp>, inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients per tape node, from [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Binds a parameter; frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        if store.is_trainable(id) {
            self.push(value, Op::Param { tag: store.tag(), id })
        } else {
            self.push(value, Op::Const)
        }
    }

    /// Binds a parameter as a constant regardless of its trainable flag.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = kernels::matmul_t(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let v = kernels::add_row(self.value(a), self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = kernels::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = kernels::mean_rows(self.value(a));
        self.push(v, Op::MeanRows(a))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(NnError::Shape { op: "row", left: t.shape(), right: (r, 0) });
        }
        let v = Tensor::row_vector(t.row(r).to_vec());
        Ok(self.push(v, Op::Row(a, r)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(NnError::Shape { op: "concat_cols", left: x.shape(), right: y.shape() });
        }
        let mut data = Vec::with_capacity(x.data().len() + y.data().len());
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let v = Tensor::new(x.rows(), x.cols() + y.cols(), data)?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Stacks `1 × c` rows into an `n × c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, NnError> {
        let cols = rows.first().map_or(0, |&r| self.value(r).cols());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            if t.shape() != (1, cols) {
                return Err(NnError::Shape { op: "stack_rows", left: (1, cols), right: t.shape() });
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(rows.len(), cols, data)?;
        Ok(self.push(v, Op::StackRows(rows.to_vec())))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = kernels::softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = kernels::log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// One message-passing step without the weight product.
    pub fn gcn_propagate(&mut self, graph: Rc<GcnGraph>, x: Var, gates: Option<Var>) -> Result<Var, NnError> {
        let v = graph.forward(self.value(x), gates.map(|g| self.value(g)))?;
        Ok(self.push(v, Op::Gcn { graph, x, gates }))
    }

    /// `Â_gate · H · W + b`; the caller applies the activation.
    pub fn gcn_layer(
        &mut self,
        graph: Rc<GcnGraph>,
        h: Var,
        w: Var,
        bias: Option<Var>,
        gates: Option<Var>,
    ) -> Result<Var, NnError> {
        let xw = self.matmul(h, w)?;
        let out = self.gcn_propagate(graph, xw, gates)?;
        match bias {
            Some(b) => self.add_row(out, b),
            None => Ok(out),
        }
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NnError> {
        let t = self.value(logits);
        if t.data().len() != targets.len() {
            return Err(NnError::Shape { op: "bce", left: t.shape(), right: (targets.len(), 1) });
        }
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| {
                // max(x,0) - x y + log(1 + e^-|x|)
                x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs()))
            })
            .sum();
        Ok(self.push(Tensor::scalar(loss), Op::Bce { logits, targets: targets.to_vec() }))
    }

    /// Cross-entropy against soft (or one-hot) target rows.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var, NnError> {
        same_shape("soft_ce", self.value(logits), &targets)?;
        let logp = kernels::log_softmax_rows(self.value(logits));
        let loss = -kernels::dot(logp.data(), targets.data());
        Ok(self.push(Tensor::scalar(loss), Op::SoftCe { logits, targets }))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("mse", self.value(a), self.value(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let n = x.data().len().max(1) as f64;
        let loss = x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b)))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var, NnError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals)?;
        Ok(self.push(out, Op::Custom { op, inputs: inputs.to_vec() }))
    }

    /// Reverse pass from a 1×1 loss.
    pub fn backward(&self, loss: Var) -> Result<Grads, NnError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NnError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Const | Op::Param { .. }) {
                grads[idx] = Some(g);
                continue;
            }
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            };
            match &node.op {
                Op::Const | Op::Param { .. } => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, kernels::matmul_t(&g, self.value(*b))?);
                    acc(*b, kernels::t_matmul(self.value(*a), &g)?);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    acc(*a, kernels::matmul(&g, self.value(*b))?);
                    acc(*b, kernels::t_matmul(&g, self.value(*a))?);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip(self.value(*b), |x, y| x * y));
                    acc(*b, g.zip(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    acc(*row, kernels::mean_rows(&g).map(|x| x * g.rows() as f64));
                    acc(*a, g);
                }
                Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
                Op::Relu(a) => acc(*a, g.zip(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
                Op::Sigmoid(a) => acc(*a, g.zip(&node.value, |x, s| x * s * (1.0 - s))),
                Op::Exp(a) => acc(*a, g.zip(&node.value, |x, e| x * e)),
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Tensor::full(r, c, g.item()));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut t = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            t.data_mut()[i * c + j] = g.data()[j] / r as f64;
                        }
                    }
                    acc(*a, t);
                }
                Op::Row(a, r) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut t = Tensor::zeros(rows, cols);
                    t.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                    acc(*a, t);
                }
                Op::ConcatCols(a, b) => {
                    let (ra, ca) = self.value(*a).shape();
                    let cb = self.value(*b).cols();
                    let mut ga = Vec::with_capacity(ra * ca);
                    let mut gb = Vec::with_capacity(ra * cb);
                    for r in 0..ra {
                        ga.extend_from_slice(&g.row(r)[..ca]);
                        gb.extend_from_slice(&g.row(r)[ca..]);
                    }
                    acc(*a, Tensor::new(ra, ca, ga)?);
                    acc(*b, Tensor::new(ra, cb, gb)?);
                }
                Op::StackRows(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        acc(r, Tensor::row_vector(g.row(i).to_vec()));
                    }
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let mut t = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dotp = kernels::dot(g.row(r), s.row(r));
                        for c in 0..s.cols() {
                            t.data_mut()[r * s.cols() + c] = s.get(r, c) * (g.get(r, c) - dotp);
                        }
                    }
                    acc(*a, t);
                }
                Op::LogSoftmax(a) => {
                    let ls = &node.value;
                    let mut t = Tensor::zeros(ls.rows(), ls.cols());
                    for r in 0..ls.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        for c in 0..ls.cols() {
                            t.data_mut()[r * ls.cols() + c] = g.get(r, c) - libm::exp(ls.get(r, c)) * gs;
                        }
                    }
                    acc(*a, t);
                }
                Op::Gcn { graph, x, gates } => {
                    let (dx, dg) = graph.backward(self.value(*x), gates.map(|v| self.value(v)), &g);
                    acc(*x, dx);
                    if let (Some(v), Some(dg)) = (gates, dg) {
                        acc(*v, dg);
                    }
                }
                Op::Bce { logits, targets } => {
                    let x = self.value(*logits);
                    let data = x.data().iter().zip(targets).map(|(&l, &y)| g.item() * (sigmoid_scalar(l) - y)).collect();
                    acc(*logits, Tensor::new(x.rows(), x.cols(), data)?);
                }
                Op::SoftCe { logits, targets } => {
                    let p = kernels::softmax_rows(self.value(*logits));
                    let mut t = Tensor::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let mass: f64 = targets.row(r).iter().sum();
                        for c in 0..p.cols() {
                            t.data_mut()[r * p.cols() + c] = g.item() * (mass * p.get(r, c) - targets.get(r, c));
                        }
                    }
                    acc(*logits, t);
                }
                Op::Mse(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g.item() / x.data().len().max(1) as f64;
                    let d = x.zip(y, |p, q| k * (p - q));
                    acc(*b, d.map(|v| -v));
                    acc(*a, d);
                }
                Op::Custom { op, inputs } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    for (&v, gi) in inputs.iter().zip(op.backward(&vals, &node.value, &g)) {
                        acc(v, gi);
                    }
                }
            }
        }
        Ok(Grads { grads })
    }

    /// `(store tag, parameter, gradient)` for every trainable binding reached.
    pub(crate) fn param_grads<'a>(&'a self, grads: &'a Grads) -> impl Iterator<Item = (u64, ParamId, &'a Tensor)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param { tag, id } => grads.grads[i].as_ref().map(|g| (tag, id, g)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Adam};

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn gcn_isolated_node_is_identity() {
        let g = Rc::new(GcnGraph::from_edges(1, [], 4));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::row_vector(vec![0.3, -1.2, 7.0]));
        let w = tape.constant(Tensor::identity(3));
        let gates = tape.constant(Tensor::full(1, 4, 1.0));
        let out = tape.gcn_layer(g, h, w, None, Some(gates)).unwrap();
        assert_eq!(tape.value(out).data(), &[0.3, -1.2, 7.0]);
    }

    #[test]
    fn gcn_two_nodes_hand_normalised() {
        // d̃ = 2 for both: 1/2 self + 1/sqrt(4) neighbour = 1
        let g = Rc::new(GcnGraph::from_edges(2, [(0, 1, 0)], 4));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full(2, 3, 1.0));
        let w = tape.constant(Tensor::identity(3));
        let out = tape.gcn_layer(g, h, w, None, None).unwrap();
        assert!(approx(tape.value(out).data(), &[1.0; 6], 1e-15));
    }

    #[test]
    fn gcn_equivariant_under_permutation() {
        let edges = [(0, 1, 0), (1, 2, 1), (2, 3, 0), (1, 3, 3)];
        let perm = [2usize, 0, 3, 1]; // new i = old perm[i]
        let mut inv = [0usize; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.0], vec![3.0, 1.0], vec![0.2, -0.7]]).unwrap();
        let xp = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let gates = Tensor::row_vector(vec![0.5, 2.0, 1.0, -1.0]);
        let base = GcnGraph::from_edges(4, edges, 4).forward(&x, Some(&gates)).unwrap();
        let permuted = GcnGraph::from_edges(4, edges.iter().map(|&(a, b, k)| (inv[a], inv[b], k)), 4)
            .forward(&xp, Some(&gates))
            .unwrap();
        for i in 0..4 {
            assert!(approx(permuted.row(i), base.row(perm[i]), 1e-12));
        }
    }

    #[test]
    fn sum_gradient_is_ones_and_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = tape.sum(wv);
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&tape, &grads);
        assert_eq!(store.grad(w).data(), &[1.0; 4]);
        let once = store.grad(w).clone();
        store.accumulate(&tape, &tape.backward(loss).unwrap());
        assert_eq!(store.grad(w).data(), once.map(|x| 2.0 * x).data());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(v), Err(NnError::NotScalar((2, 2)))));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::glorot(3, 3, &mut rng));
        let x = Tensor::glorot(3, 1, &mut rng);
        let y = Tensor::glorot(3, 1, &mut rng);
        let report = finite_diff_check(&mut store, 1e-4, |tape, s| {
            let wv = tape.param(s, w);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let p = tape.matmul(wv, xv)?;
            tape.mse(p, yv)
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn every_op_gradchecks() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::glorot(3, 4, &mut rng));
        let b = store.add("b", Tensor::glorot(3, 4, &mut rng));
        let r = store.add("r", Tensor::glorot(1, 4, &mut rng));
        let gates = store.add("gates", Tensor::row_vector(vec![0.9, 1.1, 0.7, 1.3]));
        let graph = Rc::new(GcnGraph::from_edges(3, [(0, 1, 0), (1, 2, 1), (0, 2, 3)], 4));
        let targets = Tensor::from_rows(&vec![vec![0.1, 0.2, 0.3, 0.4]; 3]).unwrap();
        let report = finite_diff_check(&mut store, 1e-4, |t, s| {
            let (av, bv, rv, gv) = (t.param(s, a), t.param(s, b), t.param(s, r), t.param(s, gates));
            let m = t.mul(av, bv)?;
            let m = t.add_row(m, rv)?;
            let e = t.exp(m);
            let s1 = t.sigmoid(e);
            let diff = t.sub(s1, bv)?;
            let sm = t.softmax(diff);
            let g = t.gcn_propagate(graph.clone(), sm, Some(gv))?;
            let rl = t.relu(g);
            let cat = t.concat_cols(rl, av)?;
            let row0 = t.row(cat, 0)?;
            let row2 = t.row(cat, 2)?;
            let st = t.stack_rows(&[row2, row0])?;
            let mt = t.matmul_t(st, st)?;
            let mr = t.mean_rows(mt);
            let sc = t.scale(mr, 0.7);
            let ls = t.log_softmax(sc);
            let l1 = t.sum(ls);
            let l2 = t.soft_cross_entropy(av, targets.clone())?;
            let l3 = t.bce_with_logits(rv, &[1.0, 0.0, 0.5, 1.0])?;
            let l = t.add(l1, l2)?;
            t.add(l, l3)
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    struct BrokenSquare;

    impl CustomOp for BrokenSquare {
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NnError> {
            Ok(inputs[0].map(|x| x * x))
        }
        fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Tensor> {
            // wrong on purpose: should be 2x
            vec![grad.zip(inputs[0], |g, x| g * 3.0 * x)]
        }
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row_vector(vec![0.4, -1.0, 2.0]));
        let report = finite_diff_check(&mut store, 1e-4, |t, s| {
            let v = t.param(s, p);
            let sq = t.custom(alloc::boxed::Box::new(BrokenSquare), &[v])?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(2.0));
        store.set_trainable(p, false);
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let l = tape.mul(v, v).unwrap();
        store.accumulate(&tape, &tape.backward(l).unwrap());
        assert_eq!(store.grad(p).item(), 0.0);
        let before = store.value(p).clone();
        Adam::new(0.1).step(&mut store);
        assert_eq!(store.value(p), &before);
    }
}

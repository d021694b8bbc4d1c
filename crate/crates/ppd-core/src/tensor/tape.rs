//! Reverse-mode gradient tape.
//!
//! Operations append nodes in application order; because an op can only
//! reference earlier nodes, walking the tape backwards visits nodes in exact
//! reverse topological order. Adjoints of nodes the loss never touched stay
//! zero. Construction is single-threaded per tape; distinct tapes are
//! independent and may live on distinct threads.

use crate::error::{PpdError, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Backward rule for an operation the tape does not know natively
/// (permutation and phase extraction plug in through this).
pub trait CustomOp<T: Scalar>: Send + Sync {
    /// Returns one gradient tensor per input, given the upstream adjoint.
    fn backward(
        &self,
        upstream: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
    ) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    BiasAdd(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Scale(NodeId, T),
    AddConst(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    SumSquares(NodeId),
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    CwHinge {
        logits: NodeId,
        labels: Vec<usize>,
        runner_up: Vec<usize>,
        hinge_active: Vec<bool>,
    },
    Custom {
        inputs: Vec<NodeId>,
        rule: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded forward pass with per-node values.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// `x [rows, n] + bias [n]`, broadcast over rows.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, n) = self.value(x).dims2()?;
        if self.value(bias).shape() != [n] {
            return Err(PpdError::Dimension(format!(
                "bias_add: bias {:?} against matrix [{rows}, {n}]",
                self.value(bias).shape()
            )));
        }
        let xv = self.value(x);
        let bv = self.value(bias);
        let mut data = Vec::with_capacity(rows * n);
        for r in 0..rows {
            for c in 0..n {
                data.push(xv.data()[r * n + c] + bv.data()[c]);
            }
        }
        let v = Tensor::new(&[rows, n], data)?;
        Ok(self.push(v, Op::BiasAdd(x, bias)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| if e > T::zero() { e } else { T::zero() });
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).map(|e| e + c);
        self.push(v, Op::AddConst(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().into_shape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(T::from_f64(self.value(x).sum_f64()));
        self.push(v, Op::Sum(x))
    }

    /// Scalar sum of squared elements.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().map(|v| v.to_f64() * v.to_f64()).sum();
        let v = Tensor::scalar(T::from_f64(total));
        self.push(v, Op::SumSquares(x))
    }

    /// Mean cross-entropy of softmax(logits) against integer labels.
    /// Saves the softmax probabilities for the backward pass.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (rows, classes) = self.value(logits).dims2()?;
        if labels.len() != rows {
            return Err(PpdError::Dimension(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(PpdError::Contract(format!("label {bad} out of range 0..{classes}")));
        }
        let probs = softmax_rows(self.value(logits));
        let mut loss = 0.0f64;
        for (r, &y) in labels.iter().enumerate() {
            let p = probs.data()[r * classes + y].to_f64();
            loss -= p.max(f64::MIN_POSITIVE).ln();
        }
        loss /= rows as f64;
        let v = Tensor::scalar(T::from_f64(loss));
        Ok(self.push(
            v,
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// Per-row Carlini-Wagner hinge `max(z_y - max_{j != y} z_j, -kappa)`.
    /// Minimizing it pushes the true-class logit below the strongest rival;
    /// once the margin reaches `-kappa` the hinge goes flat and the gradient
    /// stops. Output has shape `[rows]`.
    pub fn cw_hinge(&mut self, logits: NodeId, labels: &[usize], kappa: T) -> Result<NodeId> {
        let (rows, classes) = self.value(logits).dims2()?;
        if labels.len() != rows {
            return Err(PpdError::Dimension(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(PpdError::Contract("cw_hinge needs at least 2 classes".into()));
        }
        let lv = self.value(logits);
        let mut values = Vec::with_capacity(rows);
        let mut runner_up = Vec::with_capacity(rows);
        let mut hinge_active = Vec::with_capacity(rows);
        for (r, &y) in labels.iter().enumerate() {
            let row = &lv.data()[r * classes..(r + 1) * classes];
            let mut best = usize::MAX;
            for (j, &z) in row.iter().enumerate() {
                if j != y && (best == usize::MAX || z > row[best]) {
                    best = j;
                }
            }
            let margin = row[y] - row[best];
            let active = margin > -kappa;
            values.push(if active { margin } else { -kappa });
            runner_up.push(best);
            hinge_active.push(active);
        }
        let v = Tensor::new(&[rows], values)?;
        Ok(self.push(
            v,
            Op::CwHinge { logits, labels: labels.to_vec(), runner_up, hinge_active },
        ))
    }

    /// Record an externally computed op with its backward rule.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        value: Tensor<T>,
        rule: Box<dyn CustomOp<T>>,
    ) -> NodeId {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), rule })
    }

    /// Reverse sweep from a scalar loss node. Returns adjoints for every
    /// node at or before `loss`; untouched nodes read back as zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(PpdError::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adjoints: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[i].take() else {
                continue;
            };
            self.propagate(i, &upstream, &mut adjoints)?;
            adjoints[i] = Some(upstream);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { adjoints, shapes })
    }

    fn propagate(
        &self,
        i: usize,
        upstream: &Tensor<T>,
        adjoints: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let accum = |adjoints: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>| -> Result<()> {
            match &mut adjoints[id.0] {
                slot @ None => *slot = Some(delta),
                Some(existing) => *existing = existing.add(&delta)?,
            }
            Ok(())
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(adjoints, *a, upstream.clone())?;
                accum(adjoints, *b, upstream.clone())?;
            }
            Op::Sub(a, b) => {
                accum(adjoints, *a, upstream.clone())?;
                accum(adjoints, *b, upstream.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                accum(adjoints, *a, upstream.hadamard(self.value(*b))?)?;
                accum(adjoints, *b, upstream.hadamard(self.value(*a))?)?;
            }
            Op::Matmul(a, b) => {
                // dA = G B^T, dB = A^T G
                accum(adjoints, *a, upstream.matmul_nt(self.value(*b))?)?;
                accum(adjoints, *b, self.value(*a).matmul_tn(upstream)?)?;
            }
            Op::BiasAdd(x, bias) => {
                let (rows, n) = upstream.dims2()?;
                let mut db = Tensor::zeros(&[n]);
                for r in 0..rows {
                    for c in 0..n {
                        db.data_mut()[c] = db.data_mut()[c] + upstream.data()[r * n + c];
                    }
                }
                accum(adjoints, *x, upstream.clone())?;
                accum(adjoints, *bias, db)?;
            }
            Op::Relu(x) => {
                let gate = self.value(*x);
                let g = upstream.zip_map(gate, |u, v| if v > T::zero() { u } else { T::zero() })?;
                accum(adjoints, *x, g)?;
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                let g = upstream.zip_map(y, |u, t| u * (T::one() - t * t))?;
                accum(adjoints, *x, g)?;
            }
            Op::Scale(x, c) => {
                accum(adjoints, *x, upstream.scale(*c))?;
            }
            Op::AddConst(x) => {
                accum(adjoints, *x, upstream.clone())?;
            }
            Op::Reshape(x) => {
                let g = upstream.clone().into_shape(self.value(*x).shape())?;
                accum(adjoints, *x, g)?;
            }
            Op::Sum(x) => {
                let g = upstream.item()?;
                accum(adjoints, *x, Tensor::full(self.value(*x).shape(), g))?;
            }
            Op::SumSquares(x) => {
                let g = upstream.item()?;
                let two_g = g * T::from_f64(2.0);
                accum(adjoints, *x, self.value(*x).scale(two_g))?;
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let g = upstream.item()?;
                let (rows, classes) = probs.dims2()?;
                let inv_rows = T::from_f64(1.0 / rows as f64);
                let mut grad = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let cell = &mut grad.data_mut()[r * classes + y];
                    *cell = *cell - T::one();
                }
                accum(adjoints, *logits, grad.scale(g * inv_rows))?;
            }
            Op::CwHinge { logits, labels, runner_up, hinge_active } => {
                let (rows, classes) = self.value(*logits).dims2()?;
                let mut grad = Tensor::zeros(&[rows, classes]);
                for r in 0..rows {
                    if !hinge_active[r] {
                        continue;
                    }
                    let u = upstream.data()[r];
                    grad.data_mut()[r * classes + labels[r]] = u;
                    grad.data_mut()[r * classes + runner_up[r]] = -u;
                }
                accum(adjoints, *logits, grad)?;
            }
            Op::Custom { inputs, rule } => {
                let input_values: Vec<&Tensor<T>> =
                    inputs.iter().map(|id| self.value(*id)).collect();
                let grads = rule.backward(upstream, &input_values, &self.nodes[i].value);
                if grads.len() != inputs.len() {
                    return Err(PpdError::Contract(format!(
                        "custom op returned {} gradients for {} inputs",
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (id, g) in inputs.iter().zip(grads) {
                    accum(adjoints, *id, g)?;
                }
            }
        }
        Ok(())
    }
}

/// Stable row-wise softmax (subtracts the row max before exponentiating).
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = match logits.dims2() {
        Ok(d) => d,
        Err(_) => return logits.clone(),
    };
    let mut out = logits.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mut max = row[0];
        for &v in row.iter().skip(1) {
            if v > max {
                max = v;
            }
        }
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    adjoints: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.adjoints.get(id.0).and_then(|o| o.as_ref())
    }

    /// Adjoint of `id`, materializing zeros for nodes the loss never reached.
    pub fn wrt_or_zeros(&self, id: NodeId) -> Tensor<T> {
        match self.wrt(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        match self.adjoints[id.0].take() {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{seeded_rng, uniform_f64};

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(shape, |_| uniform_f64(&mut rng) * 2.0 - 1.0)
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(random_tensor(&[3, 4], 1));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0f64, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_node_has_zero_adjoint() {
        let mut tape = Tape::new();
        let x = tape.leaf(random_tensor(&[2, 2], 2));
        let unused = tape.leaf(random_tensor(&[2, 2], 3));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(unused).is_none());
        let z = grads.wrt_or_zeros(unused);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(random_tensor(&[2, 2], 2));
        assert!(matches!(tape.backward(x), Err(crate::error::PpdError::Contract(_))));
    }

    /// Central finite differences of `f` at `x`, the gradient oracle.
    fn finite_diff(
        f: &dyn Fn(&Tensor<f64>) -> f64,
        x: &Tensor<f64>,
        h: f64,
    ) -> Tensor<f64> {
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_l2_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let denom = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        diff / denom.max(1e-300)
    }

    /// A composite graph touching every primitive op, evaluated as a scalar.
    fn composite_loss(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let (xn, wn, bn) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        composite_graph(&mut tape, xn, wn, bn).0
    }

    fn composite_graph(
        tape: &mut Tape<f64>,
        x: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> (f64, NodeId) {
        let z = tape.matmul(x, w).unwrap();
        let z = tape.bias_add(z, b).unwrap();
        let a = tape.relu(z);
        let t = tape.tanh(a);
        let s = tape.scale(t, 1.7);
        let s = tape.add_const(s, 0.3);
        let m = tape.mul(s, s).unwrap();
        let d = tape.sub(m, s).unwrap();
        let flat = tape.reshape(d, &[d_numel(tape, d)]).unwrap();
        let sq = tape.sum_squares(flat);
        let total = tape.sum(flat);
        let loss = tape.add(sq, total).unwrap();
        (tape.value(loss).item().unwrap(), loss)
    }

    fn d_numel(tape: &Tape<f64>, id: NodeId) -> usize {
        tape.value(id).numel()
    }

    #[test]
    fn composite_graph_gradient_matches_finite_differences() {
        let x = random_tensor(&[3, 4], 10);
        let w = random_tensor(&[4, 5], 11);
        let b = random_tensor(&[5], 12);

        let mut tape = Tape::new();
        let (xn, wn, bn) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let (_, loss) = composite_graph(&mut tape, xn, wn, bn);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-5;
        for (name, node, value, partial) in [
            ("x", xn, &x, 0usize),
            ("w", wn, &w, 1),
            ("b", bn, &b, 2),
        ] {
            let f = |t: &Tensor<f64>| -> f64 {
                let args: [&Tensor<f64>; 3] = match partial {
                    0 => [t, &w, &b],
                    1 => [&x, t, &b],
                    _ => [&x, &w, t],
                };
                composite_loss(args[0], args[1], args[2])
            };
            let fd = finite_diff(&f, value, h);
            let an = grads.wrt(node).unwrap();
            let err = rel_l2_err(an, &fd);
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*f + b*g) = a*grad(f) + b*grad(g)
        let x = random_tensor(&[4, 4], 20);
        let (a, b) = (2.25f64, -0.75f64);

        let grad_of = |wa: f64, wb: f64| -> Tensor<f64> {
            let mut tape = Tape::new();
            let xn = tape.leaf(x.clone());
            let f = tape.sum_squares(xn);
            let t = tape.tanh(xn);
            let g = tape.sum(t);
            let fa = tape.scale(f, wa);
            let gb = tape.scale(g, wb);
            let loss = tape.add(fa, gb).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.wrt(xn).unwrap().clone()
        };

        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let recombined = gf.scale(a).add(&gg.scale(b)).unwrap();
        assert!(combined.max_abs_diff(&recombined) < 1e-6);
    }

    #[test]
    fn softmax_xent_gradient_matches_finite_differences() {
        let logits = random_tensor(&[4, 6], 30);
        let labels = vec![1usize, 0, 5, 3];

        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let loss = tape.softmax_cross_entropy(l, &labels).unwrap();
        let grads = tape.backward(loss).unwrap();

        let f = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let l = tape.leaf(t.clone());
            let loss = tape.softmax_cross_entropy(l, &labels).unwrap();
            tape.value(loss).item().unwrap()
        };
        let fd = finite_diff(&f, &logits, 1e-6);
        assert!(rel_l2_err(grads.wrt(l).unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn cw_hinge_values_and_gradient() {
        let logits = Tensor::new(&[2, 3], vec![1.0f64, 3.0, 0.5, 2.0, -1.0, -2.0]).unwrap();
        let labels = vec![0usize, 0];

        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let m = tape.cw_hinge(l, &labels, 0.0).unwrap();
        // row 0 already misclassified: max(1 - 3, -0) = hinge floor 0 (inactive)
        // row 1 correct by margin 3: max(2 - (-1), 0) = 3 (active)
        assert_eq!(tape.value(m).data(), &[0.0, 3.0]);

        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(l).unwrap();
        // active row 1: +1 at label (class 0), -1 at runner-up (class 1)
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_is_normalized_and_shift_invariant() {
        let logits = random_tensor(&[5, 10], 40);
        let p = softmax_rows(&logits);
        for r in 0..5 {
            let s: f64 = p.data()[r * 10..(r + 1) * 10].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted = logits.map(|v| v + 7.25);
        let p2 = softmax_rows(&shifted);
        assert!(p.max_abs_diff(&p2) < 1e-12);
    }
}

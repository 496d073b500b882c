//! Reverse-mode tape over a fixed primitive set.
//!
//! The decoder's graph is small and static, so instead of general autodiff
//! the tape records a flat list of primitive applications and replays it
//! backward. Node ids are insertion-ordered, which is already a topological
//! order: walking them in reverse visits every consumer before its inputs,
//! and each node's gradient accumulates one contribution per consumer.
//!
//! A `Tape` is single-owner: record and differentiate from one thread. The
//! kernels it calls are pure and freely shareable.

use crate::error::{Error, Result};
use crate::numerics::matrix::{self, Matrix, PROB_EPSILON};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatRows(Vec<NodeId>),
    SoftmaxRows(NodeId),
    Relu(NodeId),
    Transpose(NodeId),
    MeanRows(NodeId),
    SliceRows(NodeId, usize, usize),
    /// Row-wise standardization (no affine), for the optional
    /// normalization flag in the decoder.
    LayerNormRows(NodeId, f64),
    /// Fused 2-class (or k-class) softmax + negative log-likelihood.
    /// Folding the loss into one primitive keeps its backward exact:
    /// grad = softmax(logits) - onehot(target).
    SoftmaxCrossEntropy(NodeId, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Gradients of one scalar output with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `id`, if any path connected it to the loss.
    pub fn wrt(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matrix::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matrix::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.value(a).scale(k);
        self.push(Op::Scale(a, k), value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = matrix::concat_rows(&values)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = matrix::softmax_rows(self.value(a))?;
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = matrix::relu(self.value(a));
        self.push(Op::Relu(a), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = matrix::mean_rows(self.value(a))?;
        Ok(self.push(Op::MeanRows(a), value))
    }

    /// Keep `len` rows starting at `start`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let src = self.value(a);
        if start + len > src.rows() {
            return Err(Error::shape("slice_rows", src.shape(), (start + len, src.cols())));
        }
        let mut out = Matrix::zeros(len, src.cols());
        for r in 0..len {
            let row = src.row(start + r).to_vec();
            for (c, v) in row.into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        Ok(self.push(Op::SliceRows(a, start, len), out))
    }

    /// Standardize each row to zero mean, unit variance.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(Error::numeric("layer_norm_rows", "non-finite input"));
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_sigma = 1.0 / (var + eps).sqrt();
            for (c, &v) in row.iter().enumerate() {
                out.set(r, c, (v - mean) * inv_sigma);
            }
        }
        Ok(self.push(Op::LayerNormRows(a, eps), out))
    }

    /// Loss node: `-ln(softmax(logits)[target])`, logits a 1xK row.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rows() != 1 || target >= l.cols() {
            return Err(Error::shape("softmax_cross_entropy", l.shape(), (1, target + 1)));
        }
        let probs = matrix::softmax_rows(l)?;
        let p = probs.at(0, target).clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        let value = Matrix::row_vector(&[-p.ln()]);
        Ok(self.push(Op::SoftmaxCrossEntropy(logits, target), value))
    }

    /// Backpropagate from a scalar (1x1) node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if loss_val.shape() != (1, 1) {
            return Err(Error::shape("backward", loss_val.shape(), (1, 1)));
        }
        if !loss_val.is_finite() {
            return Err(Error::numeric("backward", "loss is not finite"));
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::row_vector(&[1.0]));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let ga = matrix::matmul(&g, &self.value(*b).transpose())?;
                    let gb = matrix::matmul(&self.value(*a).transpose(), &g)?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g.clone())?;
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads[a.0], g.scale(*k))?;
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).rows();
                        let mut slice = Matrix::zeros(n, g.cols());
                        for r in 0..n {
                            for c in 0..g.cols() {
                                slice.set(r, c, g.at(offset + r, c));
                            }
                        }
                        accumulate(&mut grads[p.0], slice)?;
                        offset += n;
                    }
                }
                Op::SoftmaxRows(a) => {
                    // Row-wise Jacobian-vector product:
                    // dx_i = p_i * (g_i - sum_j g_j p_j)
                    let p = &self.nodes[idx].value;
                    let mut ga = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let dot: f64 = (0..p.cols()).map(|c| g.at(r, c) * p.at(r, c)).sum();
                        for c in 0..p.cols() {
                            ga.set(r, c, p.at(r, c) * (g.at(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for c in 0..x.cols() {
                            if x.at(r, c) > 0.0 {
                                ga.set(r, c, g.at(r, c));
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads[a.0], g.transpose())?;
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let inv = 1.0 / n as f64;
                    let mut ga = Matrix::zeros(n, g.cols());
                    for r in 0..n {
                        for c in 0..g.cols() {
                            ga.set(r, c, g.at(0, c) * inv);
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::SliceRows(a, start, len) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..*len {
                        for c in 0..g.cols() {
                            ga.set(start + r, c, g.at(r, c));
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::LayerNormRows(a, eps) => {
                    // Per row with y = (x - mu) / sigma:
                    // dx = (g - mean(g) - y * mean(g .* y)) / sigma
                    let x = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let row = x.row(r);
                        let n = row.len() as f64;
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv_sigma = 1.0 / (var + eps).sqrt();
                        let g_mean: f64 = (0..x.cols()).map(|c| g.at(r, c)).sum::<f64>() / n;
                        let gy_mean: f64 =
                            (0..x.cols()).map(|c| g.at(r, c) * y.at(r, c)).sum::<f64>() / n;
                        for c in 0..x.cols() {
                            let d = (g.at(r, c) - g_mean - y.at(r, c) * gy_mean) * inv_sigma;
                            ga.set(r, c, d);
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::SoftmaxCrossEntropy(a, target) => {
                    let probs = matrix::softmax_rows(self.value(*a))?;
                    let scale = g.at(0, 0);
                    let mut ga = probs.scale(scale);
                    let t = ga.at(0, *target);
                    ga.set(0, *target, t - scale);
                    accumulate(&mut grads[a.0], ga)?;
                }
            }
        }

        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(existing) => {
            *existing = matrix::add(existing, &g)?;
        }
        None => *slot = Some(g),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_diff_gradient, max_relative_error};
    use crate::rng::SplitMix64;

    #[test]
    fn matmul_backward_matches_hand_derivation() {
        // f = sum(A*B) with A=[[1,2],[3,4]], B=[[5],[6]]
        // grad_A = grad_out * B^T, grad_B = A^T * grad_out, grad_out = ones
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let prod = tape.matmul(a, b).unwrap();
        let pooled = tape.mean_rows(prod).unwrap();
        let scaled = tape.scale(pooled, 2.0); // sum of the 2x1 product
        let grads = tape.backward(scaled).unwrap();

        let ga = grads.wrt(a).unwrap();
        assert_eq!(ga, &Matrix::from_rows(&[vec![5.0, 6.0], vec![5.0, 6.0]]).unwrap());
        let gb = grads.wrt(b).unwrap();
        assert_eq!(gb, &Matrix::from_rows(&[vec![4.0], vec![6.0]]).unwrap());
    }

    #[test]
    fn fanout_gradients_accumulate() {
        // y = x + x => dy/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(&[3.0]));
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().at(0, 0), 2.0);
    }

    #[test]
    fn unreachable_node_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(&[1.0]));
        let orphan = tape.leaf(Matrix::row_vector(&[9.0]));
        let y = tape.scale(x, 4.0);
        let grads = tape.backward(y).unwrap();
        assert!(grads.wrt(orphan).is_none());
    }

    #[test]
    fn cross_entropy_node_value_and_gradient() {
        // logits [0, ln 3] -> p = [0.25, 0.75]; loss for target=1 is -ln 0.75
        let mut tape = Tape::new();
        let logits = tape.leaf(Matrix::row_vector(&[0.0, 3.0f64.ln()]));
        let loss = tape.softmax_cross_entropy(logits, 1).unwrap();
        assert!((tape.value(loss).at(0, 0) + 0.75f64.ln()).abs() < 1e-15);

        let grads = tape.backward(loss).unwrap();
        let gl = grads.wrt(logits).unwrap();
        assert!((gl.at(0, 0) - 0.25).abs() < 1e-12);
        assert!((gl.at(0, 1) + 0.25).abs() < 1e-12);
    }

    /// Every primitive's analytic backward vs central differences on random
    /// inputs in [-1, 1].
    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = SplitMix64::new(2024);
        let rand_vec = |rng: &mut SplitMix64, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.next_symmetric(1.0)).collect()
        };

        type Builder = fn(&mut Tape, NodeId) -> NodeId;
        let unary_cases: Vec<(&str, (usize, usize), Builder)> = vec![
            ("softmax", (3, 4), |t, x| {
                let s = t.softmax_rows(x).unwrap();
                // Weight the rows so the softmax Jacobian is exercised
                // off the uniform direction.
                let m = t.mean_rows(s).unwrap();
                let mt = t.transpose(m);
                let picked = t.slice_rows(mt, 1, 1).unwrap();
                t.scale(picked, 3.0)
            }),
            ("relu-mean", (3, 4), |t, x| {
                let r = t.relu(x);
                let m = t.mean_rows(r).unwrap();
                let mt = t.transpose(m);
                let s = t.slice_rows(mt, 0, 1).unwrap();
                t.scale(s, 2.0)
            }),
            ("transpose-mean", (2, 5), |t, x| {
                let tr = t.transpose(x);
                let m = t.mean_rows(tr).unwrap();
                let mt = t.transpose(m);
                t.slice_rows(mt, 1, 1).unwrap()
            }),
            ("layer-norm", (2, 4), |t, x| {
                let ln = t.layer_norm_rows(x, 1e-5).unwrap();
                let r = t.relu(ln);
                let m = t.mean_rows(r).unwrap();
                let mt = t.transpose(m);
                let s = t.slice_rows(mt, 2, 1).unwrap();
                t.scale(s, 1.5)
            }),
        ];

        for (name, shape, build) in unary_cases {
            let x0 = rand_vec(&mut rng, shape.0 * shape.1);
            let f = |xs: &[f64]| -> f64 {
                let mut tape = Tape::new();
                let x = tape.leaf(Matrix::from_vec(shape.0, shape.1, xs.to_vec()).unwrap());
                let out = build(&mut tape, x);
                tape.value(out).at(0, 0)
            };
            let analytic = {
                let mut tape = Tape::new();
                let x = tape.leaf(Matrix::from_vec(shape.0, shape.1, x0.clone()).unwrap());
                let out = build(&mut tape, x);
                let grads = tape.backward(out).unwrap();
                grads.wrt(x).unwrap().data().to_vec()
            };
            let numeric = central_diff_gradient(&f, &x0, 1e-6).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{name}: max relative error {err}");
        }

        // Binary ops: matmul + add + concat + cross-entropy chained.
        let a0 = rand_vec(&mut rng, 6);
        let b0 = rand_vec(&mut rng, 6);
        let chained = |av: &[f64], bv: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let a = tape.leaf(Matrix::from_vec(2, 3, av.to_vec()).unwrap());
            let b = tape.leaf(Matrix::from_vec(3, 2, bv.to_vec()).unwrap());
            let prod = tape.matmul(a, b).unwrap();
            let both = tape.concat_rows(&[prod, prod]).unwrap();
            let pooled = tape.mean_rows(both).unwrap();
            let loss = tape.softmax_cross_entropy(pooled, 0).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).at(0, 0),
                grads.wrt(a).unwrap().data().to_vec(),
                grads.wrt(b).unwrap().data().to_vec(),
            )
        };
        let (_, ga, gb) = chained(&a0, &b0);
        let fa = |xs: &[f64]| chained(xs, &b0).0;
        let fb = |xs: &[f64]| chained(&a0, xs).0;
        let na = central_diff_gradient(&fa, &a0, 1e-6).unwrap();
        let nb = central_diff_gradient(&fb, &b0, 1e-6).unwrap();
        assert!(max_relative_error(&ga, &na) < 1e-4);
        assert!(max_relative_error(&gb, &nb) < 1e-4);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }
}

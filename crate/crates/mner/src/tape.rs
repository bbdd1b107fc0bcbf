//! Reverse-mode differentiation on a Wengert tape.
//!
//! Forward passes append primitive records (op kind, input ids, cached
//! value) in topological order; `backward` replays the tape in reverse and
//! accumulates vector-Jacobian products into a [`GradientMap`] keyed by
//! parameter name. Primitives: affine, sigmoid, tanh, elementwise-mul, add,
//! concat, sum, logsumexp, pick-index, softmax.

use crate::error::{Error, Result};
use crate::params::GradientMap;
use crate::tensor::{logsumexp, softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input leaf; `param` names the parameter this leaf mirrors, if any.
    Leaf { param: Option<String> },
    /// W·x + b for matrix W, vector x, optional bias b.
    Affine {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Elementwise product; either operand may be a scalar broadcast over
    /// the other.
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Sum(NodeId),
    LogSumExp(NodeId),
    /// Element of a vector (result is a scalar) or row of a matrix (result
    /// is a vector).
    Pick { x: NodeId, index: usize },
    Softmax(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.all_finite(), "tape produced a non-finite value");
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { param: None }, t)
    }

    pub fn parameter(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push(
            Op::Leaf {
                param: Some(name.to_string()),
            },
            t,
        )
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let wt = self.value(w);
        let xt = self.value(x);
        if wt.rank() != 2 || xt.rank() != 1 || wt.cols() != xt.len() {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: wt.shape().to_vec(),
                right: xt.shape().to_vec(),
            });
        }
        let rows = wt.rows();
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for (wv, xv) in wt.row(r).iter().zip(xt.data()) {
                acc += wv * xv;
            }
            out[r] = acc;
        }
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [rows] {
                return Err(Error::ShapeMismatch {
                    op: "affine bias",
                    left: vec![rows],
                    right: bt.shape().to_vec(),
                });
            }
            for (o, bv) in out.iter_mut().zip(bt.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Op::Affine { w, x, b }, Tensor::vector(out)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        )
        .expect("sigmoid preserves shape and finiteness");
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.tanh()).collect(),
        )
        .expect("tanh preserves shape and finiteness");
        self.push(Op::Tanh(x), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let at = self.value(a);
        let bt = self.value(b);
        let out = if at.is_scalar() {
            let s = at.scalar_value();
            Tensor::new(
                bt.shape().to_vec(),
                bt.data().iter().map(|v| s * v).collect(),
            )?
        } else if bt.is_scalar() {
            let s = bt.scalar_value();
            Tensor::new(
                at.shape().to_vec(),
                at.data().iter().map(|v| s * v).collect(),
            )?
        } else if at.shape() == bt.shape() {
            Tensor::new(
                at.shape().to_vec(),
                at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect(),
            )?
        } else {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        };
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.shape() != bt.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let out = Tensor::new(
            at.shape().to_vec(),
            at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect(),
        )?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Concatenate scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero nodes".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    pub fn logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "logsumexp",
                left: t.shape().to_vec(),
                right: vec![0],
            });
        }
        let v = logsumexp(t.data());
        Ok(self.push(Op::LogSumExp(x), Tensor::scalar(v)))
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(x);
        let out = match t.rank() {
            1 => {
                if index >= t.len() {
                    return Err(Error::InvalidArgument(format!(
                        "pick index {index} out of range for vector of length {}",
                        t.len()
                    )));
                }
                Tensor::scalar(t.data()[index])
            }
            2 => {
                if index >= t.rows() {
                    return Err(Error::InvalidArgument(format!(
                        "pick row {index} out of range for {} rows",
                        t.rows()
                    )));
                }
                Tensor::vector(t.row(index).to_vec())
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "pick",
                    left: t.shape().to_vec(),
                    right: vec![],
                })
            }
        };
        Ok(self.push(Op::Pick { x, index }, out))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: t.shape().to_vec(),
                right: vec![0],
            });
        }
        let out = Tensor::vector(softmax(t.data())?);
        Ok(self.push(Op::Softmax(x), out))
    }

    /// Reverse sweep from a scalar loss node. Returns dLoss/dParam for every
    /// parameter leaf on the tape; leaves with no path to the loss get zero
    /// gradients.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let g_out = std::mem::take(&mut grads[idx]);
            if g_out.iter().all(|&v| v == 0.0) {
                grads[idx] = g_out;
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {}
                Op::Affine { w, x, b } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (rows, cols) = (wt.rows(), wt.cols());
                    for r in 0..rows {
                        let gr = g_out[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let wrow = wt.row(r);
                        let gw = &mut grads[w.0][r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gw[c] += gr * xt.data()[c];
                        }
                        // dx separately to appease the borrow of grads
                        for c in 0..cols {
                            grads[x.0][c] += gr * wrow[c];
                        }
                    }
                    if let Some(b) = b {
                        for (gb, go) in grads[b.0].iter_mut().zip(&g_out) {
                            *gb += go;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let s = self.nodes[idx].value.data();
                    for i in 0..g_out.len() {
                        grads[x.0][i] += g_out[i] * s[i] * (1.0 - s[i]);
                    }
                }
                Op::Tanh(x) => {
                    let t = self.nodes[idx].value.data();
                    for i in 0..g_out.len() {
                        grads[x.0][i] += g_out[i] * (1.0 - t[i] * t[i]);
                    }
                }
                Op::Mul(a, b) => {
                    let at = &self.nodes[a.0].value;
                    let bt = &self.nodes[b.0].value;
                    if at.is_scalar() && !bt.is_scalar() {
                        let s = at.scalar_value();
                        let mut acc = 0.0;
                        for i in 0..g_out.len() {
                            acc += g_out[i] * bt.data()[i];
                            grads[b.0][i] += g_out[i] * s;
                        }
                        grads[a.0][0] += acc;
                    } else if bt.is_scalar() && !at.is_scalar() {
                        let s = bt.scalar_value();
                        let mut acc = 0.0;
                        for i in 0..g_out.len() {
                            acc += g_out[i] * at.data()[i];
                            grads[a.0][i] += g_out[i] * s;
                        }
                        grads[b.0][0] += acc;
                    } else {
                        for i in 0..g_out.len() {
                            grads[a.0][i] += g_out[i] * bt.data()[i];
                            grads[b.0][i] += g_out[i] * at.data()[i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for i in 0..g_out.len() {
                        grads[a.0][i] += g_out[i];
                        grads[b.0][i] += g_out[i];
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        for i in 0..n {
                            grads[p.0][i] += g_out[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Sum(x) => {
                    let g = g_out[0];
                    for v in grads[x.0].iter_mut() {
                        *v += g;
                    }
                }
                Op::LogSumExp(x) => {
                    let g = g_out[0];
                    let xs = self.nodes[x.0].value.data();
                    let lse = self.nodes[idx].value.scalar_value();
                    for (gx, &xv) in grads[x.0].iter_mut().zip(xs) {
                        *gx += g * (xv - lse).exp();
                    }
                }
                Op::Pick { x, index } => {
                    let src = &self.nodes[x.0].value;
                    match src.rank() {
                        1 => grads[x.0][*index] += g_out[0],
                        _ => {
                            let cols = src.cols();
                            for c in 0..cols {
                                grads[x.0][index * cols + c] += g_out[c];
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let s = self.nodes[idx].value.data();
                    let dot: f64 = s.iter().zip(&g_out).map(|(sv, gv)| sv * gv).sum();
                    for i in 0..g_out.len() {
                        grads[x.0][i] += s[i] * (g_out[i] - dot);
                    }
                }
            }
            grads[idx] = g_out;
        }

        let mut map = GradientMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                let g = Tensor::new(node.value.shape().to_vec(), std::mem::take(&mut grads[i]))
                    .map_err(|_| Error::NonFinite { op: "backward" })?;
                map.insert(name.clone(), g);
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::gradcheck::finite_difference_check;
    use crate::params::{init_parameters, InitScheme, ParameterStore};

    #[test]
    fn affine_identity() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let x = tape.constant(Tensor::vector(vec![1.5, -2.0]));
        let y = tape.affine(w, x, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn concat_dimension_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0.0; 3]));
        let b = tape.constant(Tensor::vector(vec![0.0; 5]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[8]);
    }

    #[test]
    fn affine_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let x = tape.constant(Tensor::vector(vec![0.0; 2]));
        match tape.affine(w, x, None) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::vector(vec![1.0, -4.0, 2.5]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_square_is_x() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let half = tape.constant(Tensor::scalar(0.5));
        let loss = tape.mul(half, sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_abs_diff_eq!(g.get("x").unwrap().data()[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::scalar(2.0));
        let _unused = tape.parameter("unused", Tensor::vector(vec![1.0, 1.0]));
        let loss = tape.mul(x, x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    /// Builds a random graph out of the primitive set over the parameters in
    /// `store`, ending in a scalar. Used as the loss for finite-difference
    /// comparison.
    fn random_graph_loss(store: &ParameterStore, seed: u64) -> f64 {
        let (tape, loss) = build_random_graph(store, seed);
        tape.value(loss).scalar_value()
    }

    fn build_random_graph(store: &ParameterStore, seed: u64) -> (Tape, NodeId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let w = tape.parameter("w", store.get("w").unwrap().clone());
        let v = tape.parameter("v", store.get("v").unwrap().clone());
        let u = tape.parameter("u", store.get("u").unwrap().clone());
        let mut pool = vec![v, u];
        for _ in 0..5 {
            let pickv = pool[rng.gen_range(0..pool.len())];
            let a = pool[rng.gen_range(0..pool.len())];
            let b = pool[rng.gen_range(0..pool.len())];
            let node = match rng.gen_range(0..7) {
                0 => tape.affine(w, pickv, None).unwrap(),
                1 => tape.sigmoid(a),
                2 => tape.tanh(a),
                3 => tape.mul(a, b).unwrap(),
                4 => tape.add(a, b).unwrap(),
                5 => tape.softmax(a).unwrap(),
                _ => tape.concat(&[a]).unwrap(),
            };
            pool.push(node);
        }
        let all = tape.concat(&pool).unwrap();
        let lse = tape.logsumexp(all).unwrap();
        let total = tape.sum(all);
        let joined = tape.concat(&[lse, total]).unwrap();
        let loss = tape.logsumexp(joined).unwrap();
        (tape, loss)
    }

    #[test]
    fn random_graphs_match_finite_differences() {
        for seed in 0..100u64 {
            let shapes = vec![
                ("w".to_string(), vec![4, 4]),
                ("v".to_string(), vec![4]),
                ("u".to_string(), vec![4]),
            ];
            let store = init_parameters(&shapes, InitScheme::Uniform(0.8), seed ^ 0xabcd).unwrap();
            let (tape, loss) = build_random_graph(&store, seed);
            let analytic = tape.backward(loss).unwrap();
            let report = finite_difference_check(
                |s| Ok(random_graph_loss(s, seed)),
                &store,
                &analytic,
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(
                report.pass,
                "seed {seed}: max rel error {} at {:?}",
                report.max_rel_error, report.worst_param
            );
        }
    }
}

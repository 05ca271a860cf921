//! Tape-based reverse-mode differentiation over `f64` matrices.
//!
//! The policy network is small enough that a simple design wins: every
//! operation appends a node holding its output value, and [`Tape::backward`]
//! walks the nodes in reverse, accumulating adjoints. No graph reuse, no
//! in-place mutation, no broadcasting beyond the row-bias case the network
//! needs. Correctness is enforced by finite-difference tests over every
//! operation and over the full network.

use ndarray::{s, Array2, Axis};

/// Handle to a tape node. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input: parameters or constants. No upstream gradient.
    Leaf,
    /// `A @ B`.
    MatMul { a: NodeId, b: NodeId },
    /// `A @ B^T`.
    MatMulBT { a: NodeId, b: NodeId },
    /// Elementwise sum, equal shapes.
    Add { a: NodeId, b: NodeId },
    /// `A + b` with `b` a `1 x m` row broadcast over `A`'s rows.
    AddRow { a: NodeId, b: NodeId },
    /// `c * A`.
    Scale { a: NodeId, c: f64 },
    /// Elementwise logistic.
    Sigmoid { a: NodeId },
    /// Elementwise tanh.
    Tanh { a: NodeId },
    /// Row-wise softmax.
    SoftmaxRows { a: NodeId },
    /// Rows of `A` selected by index, duplicates allowed.
    GatherRows { a: NodeId, idx: Vec<usize> },
    /// Contiguous column slice.
    SliceCols { a: NodeId, start: usize, len: usize },
    /// Horizontal concatenation.
    ConcatCols { parts: Vec<NodeId> },
    /// Vertical concatenation.
    ConcatRows { parts: Vec<NodeId> },
    /// Column sums: `(n x m) -> (1 x m)`.
    SumRows { a: NodeId },
    /// Log-probability of `chosen` under softmax restricted to `allowed`
    /// entries of a `1 x n` logit row; forbidden entries get no gradient.
    MaskedLogSoftmaxPick { a: NodeId, allowed: Vec<bool>, chosen: usize },
    /// `sum_i w_i * x_i` over `1 x 1` nodes.
    Axpy { terms: Vec<(f64, NodeId)> },
    /// `sum(A ⊙ R)` against a constant matrix; scalar output.
    DotConst { a: NodeId, r: Array2<f64> },
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Gradients of one scalar output with respect to every tape node, indexed
/// by [`NodeId`]. Nodes the output does not depend on hold `None`.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
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

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// The value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulBT { a, b }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push(Op::Add { a, b }, value)
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (rows_b, cols_b) = self.value(b).dim();
        assert_eq!(rows_b, 1, "add_row: bias must be a single row");
        assert_eq!(self.value(a).ncols(), cols_b, "add_row: width mismatch");
        let value = self.value(a) + &self.value(b).row(0);
        self.push(Op::AddRow { a, b }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        self.push(Op::Scale { a, c }, value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid { a }, value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh { a }, value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::SoftmaxRows { a }, value)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (out, &i) in idx.iter().enumerate() {
            value.row_mut(out).assign(&src.row(i));
        }
        self.push(Op::GatherRows { a, idx }, value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols { a, start, len }, value)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let width: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Array2::zeros((rows, width));
        let mut at = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols: row mismatch");
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        self.push(Op::ConcatCols { parts }, value)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let height: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut value = Array2::zeros((height, cols));
        let mut at = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), cols, "concat_rows: column mismatch");
            value.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(Op::ConcatRows { parts }, value)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows { a }, value)
    }

    /// Log-probability of picking `chosen` from the masked softmax over a
    /// `1 x n` logit row. `chosen` must be allowed.
    pub fn masked_log_softmax_pick(
        &mut self,
        a: NodeId,
        allowed: Vec<bool>,
        chosen: usize,
    ) -> NodeId {
        let logits = self.value(a);
        assert_eq!(logits.nrows(), 1, "pick expects a single logit row");
        assert_eq!(logits.ncols(), allowed.len());
        assert!(allowed[chosen], "picked a masked entry");
        let value = masked_log_softmax(&logits.row(0).to_vec(), &allowed)[chosen];
        self.push(
            Op::MaskedLogSoftmaxPick { a, allowed, chosen },
            Array2::from_elem((1, 1), value),
        )
    }

    pub fn axpy(&mut self, terms: Vec<(f64, NodeId)>) -> NodeId {
        let mut acc = 0.0;
        for &(w, x) in &terms {
            acc += w * self.scalar(x);
        }
        self.push(Op::Axpy { terms }, Array2::from_elem((1, 1), acc))
    }

    pub fn dot_const(&mut self, a: NodeId, r: Array2<f64>) -> NodeId {
        assert_eq!(self.value(a).dim(), r.dim(), "dot_const: shape mismatch");
        let value = (self.value(a) * &r).sum();
        self.push(Op::DotConst { a, r }, Array2::from_elem((1, 1), value))
    }

    /// Accumulates `d loss / d node` for every node, seeding the `1 x 1`
    /// `loss` node with 1.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut bump = |id: NodeId, delta: Array2<f64>| {
            match &mut grads[id.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                bump(*a, g.dot(&self.value(*b).t()));
                bump(*b, self.value(*a).t().dot(g));
            }
            Op::MatMulBT { a, b } => {
                bump(*a, g.dot(self.value(*b)));
                bump(*b, g.t().dot(self.value(*a)));
            }
            Op::Add { a, b } => {
                bump(*a, g.clone());
                bump(*b, g.clone());
            }
            Op::AddRow { a, b } => {
                bump(*a, g.clone());
                bump(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale { a, c } => bump(*a, g * *c),
            Op::Sigmoid { a } => {
                let s = &self.nodes[i].value;
                bump(*a, g * s * &s.mapv(|x| 1.0 - x));
            }
            Op::Tanh { a } => {
                let t = &self.nodes[i].value;
                bump(*a, g * &t.mapv(|x| 1.0 - x * x));
            }
            Op::SoftmaxRows { a } => {
                let p = &self.nodes[i].value;
                let mut da = Array2::zeros(p.dim());
                for r in 0..p.nrows() {
                    let dot: f64 = g.row(r).iter().zip(p.row(r)).map(|(x, y)| x * y).sum();
                    for c in 0..p.ncols() {
                        da[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                bump(*a, da);
            }
            Op::GatherRows { a, idx } => {
                let mut da = Array2::zeros(self.value(*a).dim());
                for (out, &src) in idx.iter().enumerate() {
                    let mut row = da.row_mut(src);
                    row += &g.row(out);
                }
                bump(*a, da);
            }
            Op::SliceCols { a, start, len } => {
                let mut da = Array2::zeros(self.value(*a).dim());
                da.slice_mut(s![.., *start..start + len]).assign(g);
                bump(*a, da);
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    bump(p, g.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    bump(p, g.slice(s![at..at + h, ..]).to_owned());
                    at += h;
                }
            }
            Op::SumRows { a } => {
                let rows = self.value(*a).nrows();
                let mut da = Array2::zeros(self.value(*a).dim());
                for r in 0..rows {
                    da.row_mut(r).assign(&g.row(0));
                }
                bump(*a, da);
            }
            Op::MaskedLogSoftmaxPick { a, allowed, chosen } => {
                let logits = self.value(*a).row(0).to_vec();
                let logp = masked_log_softmax(&logits, allowed);
                let scale = g[[0, 0]];
                let mut da = Array2::zeros((1, logits.len()));
                for j in 0..logits.len() {
                    if allowed[j] {
                        let p = logp[j].exp();
                        da[[0, j]] = scale * (f64::from(u8::from(j == *chosen)) - p);
                    }
                }
                bump(*a, da);
            }
            Op::Axpy { terms } => {
                let scale = g[[0, 0]];
                for &(w, x) in terms {
                    bump(x, Array2::from_elem((1, 1), w * scale));
                }
            }
            Op::DotConst { a, r } => bump(*a, r * g[[0, 0]]),
        }
    }
}

/// Stable masked log-softmax over one logit row; forbidden entries come back
/// as `-inf`.
pub fn masked_log_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &ok)| ok)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "masked log-softmax needs at least one allowed entry");
    let log_z = max
        + logits
            .iter()
            .zip(allowed)
            .filter(|(_, &ok)| ok)
            .map(|(&x, _)| (x - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(allowed)
        .map(|(&x, &ok)| if ok { x - log_z } else { f64::NEG_INFINITY })
        .collect()
}

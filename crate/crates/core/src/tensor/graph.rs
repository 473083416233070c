//! Computation graphs for forward evaluation and reverse-mode autodiff.
//!
//! A graph is built once (shapes fixed at construction, validated eagerly),
//! then evaluated as a pure function of its leaf bindings. Nodes are stored
//! in construction order, which is a topological order by definition since
//! every op references only existing nodes.

use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Node operation. `Const` embeds its value; `Input`/`Param` are bound by
/// name at evaluation time.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Input,
    Param { trainable: bool },
    Const(Tensor<T>),
    /// Elementwise sum of two same-shape tensors.
    Add,
    /// Elementwise product of two same-shape tensors.
    Mul,
    /// Multiply by a compile-time constant.
    ScalarMul(f64),
    /// `x[.., d] + b[d]` — the one permitted broadcast.
    AddBias,
    /// `x[.., d] * w[d]` — per-channel scaling (depthwise conv taps).
    MulChannel,
    /// `[.., m, k] x [k, n]` (shared rhs) or `[.., m, k] x [.., k, n]`.
    MatMul,
    /// Softmax over the last axis.
    Softmax,
    /// Log-softmax over the last axis.
    LogSoftmax,
    Relu,
    /// `x * sigmoid(x)`.
    Swish,
    /// Normalize groups of channels (last axis) per position.
    GroupNorm { groups: usize, eps: f64 },
    Reshape,
    Transpose { perm: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
    /// Row lookup into a `[n, d]` table with fixed indices.
    Gather { indices: Vec<usize> },
    ReduceSum { axes: Vec<usize> },
    ReduceMean { axes: Vec<usize> },
    /// Per-example CTC negative log-likelihood over `[B, T, V]` log-probs.
    /// Labels exclude blank (id 0); frames past `input_lengths[b]` are
    /// ignored for example b.
    CtcLoss {
        labels: Vec<Vec<usize>>,
        input_lengths: Vec<usize>,
    },
}

impl<T> Op<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Const(_) => "const",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar_mul",
            Op::AddBias => "add_bias",
            Op::MulChannel => "mul_channel",
            Op::MatMul => "matmul",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Relu => "relu",
            Op::Swish => "swish",
            Op::GroupNorm { .. } => "group_norm",
            Op::Reshape => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::ReduceSum { .. } => "reduce_sum",
            Op::ReduceMean { .. } => "reduce_mean",
            Op::CtcLoss { .. } => "ctc_loss",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub op: Op<T>,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    /// Leaf name for Input/Param nodes.
    pub name: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaves: HashMap<String, NodeId>,
    outputs: HashMap<String, NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn output(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    /// Names of all trainable Param leaves, in node order.
    pub fn trainable_leaves(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Param { trainable: true }))
            .map(|n| n.name.as_deref().expect("param node has a name"))
            .collect()
    }
}

/// Incremental graph builder with eager shape checking.
pub struct GraphBuilder<T> {
    nodes: Vec<Node<T>>,
    leaves: HashMap<String, NodeId>,
    outputs: HashMap<String, NodeId>,
}

impl<T: Scalar> Default for GraphBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaves: HashMap::new(),
            outputs: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            name: None,
        });
        id
    }

    fn shape_of(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown node id {id}")))
    }

    fn err(&self, op: &str, expected: Vec<usize>, got: Vec<usize>) -> Error {
        Error::ShapeMismatch {
            context: format!("{op} (node {})", self.nodes.len()),
            expected,
            got,
        }
    }

    fn add_leaf(&mut self, name: &str, shape: &[usize], op: Op<T>) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate leaf name `{name}`"
            )));
        }
        let id = self.push(op, vec![], shape.to_vec());
        self.nodes[id].name = Some(name.to_string());
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add_leaf(name, shape, Op::Input)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], trainable: bool) -> Result<NodeId> {
        self.add_leaf(name, shape, Op::Param { trainable })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), vec![], shape)
    }

    fn same_shape_binary(&mut self, op: Op<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a)?.to_vec();
        let sb = self.shape_of(b)?.to_vec();
        if sa != sb {
            return Err(self.err(op.kind_name(), sa, sb));
        }
        Ok(self.push(op, vec![a, b], sa))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape_binary(Op::Add, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape_binary(Op::Mul, a, b)
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let shape = self.shape_of(x)?.to_vec();
        Ok(self.push(Op::ScalarMul(c), vec![x], shape))
    }

    fn channel_broadcast(&mut self, op: Op<T>, x: NodeId, w: NodeId) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        let sw = self.shape_of(w)?.to_vec();
        let last = *sx.last().ok_or_else(|| {
            Error::InvalidArgument(format!("{}: rank-0 operand", op.kind_name()))
        })?;
        if sw.len() != 1 || sw[0] != last {
            return Err(self.err(op.kind_name(), vec![last], sw));
        }
        Ok(self.push(op, vec![x, w], sx))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.channel_broadcast(Op::AddBias, x, b)
    }

    pub fn mul_channel(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        self.channel_broadcast(Op::MulChannel, x, w)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a)?.to_vec();
        let sb = self.shape_of(b)?.to_vec();
        if sa.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "matmul: lhs rank {} < 2",
                sa.len()
            )));
        }
        let k = sa[sa.len() - 1];
        let out = if sb.len() == 2 {
            if sb[0] != k {
                return Err(self.err("matmul", vec![k], sb));
            }
            let mut s = sa.clone();
            *s.last_mut().unwrap() = sb[1];
            s
        } else if sb.len() == sa.len() && sb[..sb.len() - 2] == sa[..sa.len() - 2] {
            if sb[sb.len() - 2] != k {
                return Err(self.err("matmul", vec![k], sb));
            }
            let mut s = sa.clone();
            *s.last_mut().unwrap() = sb[sb.len() - 1];
            s
        } else {
            return Err(self.err("matmul", sa, sb));
        };
        Ok(self.push(Op::MatMul, vec![a, b], out))
    }

    fn lastaxis_unary(&mut self, op: Op<T>, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        if s.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}: rank-0 operand",
                op.kind_name()
            )));
        }
        Ok(self.push(op, vec![x], s))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.lastaxis_unary(Op::Softmax, x)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.lastaxis_unary(Op::LogSoftmax, x)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        Ok(self.push(Op::Relu, vec![x], s))
    }

    pub fn swish(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        Ok(self.push(Op::Swish, vec![x], s))
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        bias: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        let channels = *sx
            .last()
            .ok_or_else(|| Error::InvalidArgument("group_norm: rank-0 operand".into()))?;
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "group_norm: {groups} groups do not divide {channels} channels"
            )));
        }
        for id in [scale, bias] {
            let s = self.shape_of(id)?.to_vec();
            if s != [channels] {
                return Err(self.err("group_norm", vec![channels], s));
            }
        }
        Ok(self.push(Op::GroupNorm { groups, eps }, vec![x, scale, bias], sx))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        let n_in: usize = sx.iter().product();
        let n_out: usize = shape.iter().product();
        if n_in != n_out {
            return Err(self.err("reshape", sx, shape.to_vec()));
        }
        Ok(self.push(Op::Reshape, vec![x], shape.to_vec()))
    }

    pub fn transpose(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "transpose: {perm:?} is not a permutation of 0..{}",
                sx.len()
            )));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        Ok(self.push(
            Op::Transpose {
                perm: perm.to_vec(),
            },
            vec![x],
            shape,
        ))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        if axis >= sx.len() || start + len > sx[axis] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "slice: [{start}, {}) out of bounds for axis {axis} of {sx:?}",
                start + len
            )));
        }
        let mut shape = sx;
        shape[axis] = len;
        Ok(self.push(Op::Slice { axis, start, len }, vec![x], shape))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat: no inputs".into()));
        }
        let first = self.shape_of(xs[0])?.to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "concat: axis {axis} out of bounds for {first:?}"
            )));
        }
        let mut total = first[axis];
        for &x in &xs[1..] {
            let s = self.shape_of(x)?.to_vec();
            let mut a = s.clone();
            let mut b = first.clone();
            a[axis] = 0;
            b[axis] = 0;
            if a != b {
                return Err(self.err("concat", first, s));
            }
            total += s[axis];
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(Op::Concat { axis }, xs.to_vec(), shape))
    }

    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let st = self.shape_of(table)?.to_vec();
        if st.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "gather: table must be rank 2, got {st:?}"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= st[0]) {
            return Err(Error::InvalidArgument(format!(
                "gather: index {bad} out of bounds for table with {} rows",
                st[0]
            )));
        }
        let shape = vec![indices.len(), st[1]];
        Ok(self.push(
            Op::Gather {
                indices: indices.to_vec(),
            },
            vec![table],
            shape,
        ))
    }

    fn reduce(&mut self, op_is_mean: bool, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let sx = self.shape_of(x)?.to_vec();
        let mut seen = vec![false; sx.len()];
        for &a in axes {
            if a >= sx.len() || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidArgument(format!(
                    "reduce: bad axes {axes:?} for shape {sx:?}"
                )));
            }
        }
        let shape: Vec<usize> = sx
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, &d)| d)
            .collect();
        let op = if op_is_mean {
            Op::ReduceMean {
                axes: axes.to_vec(),
            }
        } else {
            Op::ReduceSum {
                axes: axes.to_vec(),
            }
        };
        Ok(self.push(op, vec![x], shape))
    }

    pub fn reduce_sum(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.reduce(false, x, axes)
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.reduce(true, x, axes)
    }

    /// CTC negative log-likelihood per example. Validates feasibility
    /// (enough frames for every label sequence) at build time.
    pub fn ctc_loss(
        &mut self,
        log_probs: NodeId,
        labels: Vec<Vec<usize>>,
        input_lengths: Vec<usize>,
    ) -> Result<NodeId> {
        let s = self.shape_of(log_probs)?.to_vec();
        if s.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "ctc_loss: log-probs must be [B, T, V], got {s:?}"
            )));
        }
        let (b, t, v) = (s[0], s[1], s[2]);
        if labels.len() != b || input_lengths.len() != b {
            return Err(Error::InvalidArgument(format!(
                "ctc_loss: {} label seqs / {} lengths for batch {b}",
                labels.len(),
                input_lengths.len()
            )));
        }
        for (seq, &t_b) in labels.iter().zip(&input_lengths) {
            if t_b == 0 || t_b > t {
                return Err(Error::InvalidArgument(format!(
                    "ctc_loss: input length {t_b} outside [1, {t}]"
                )));
            }
            crate::ctc::check_labels(seq, v)?;
            crate::ctc::check_feasible(t_b, seq)?;
        }
        Ok(self.push(
            Op::CtcLoss {
                labels,
                input_lengths,
            },
            vec![log_probs],
            vec![b],
        ))
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn finish(self) -> Graph<T> {
        Graph {
            nodes: self.nodes,
            leaves: self.leaves,
            outputs: self.outputs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_validates_shapes() {
        let mut g = GraphBuilder::<f64>::new();
        let x = g.input("x", &[2, 3]).unwrap();
        let y = g.input("y", &[3, 2]).unwrap();
        assert!(g.add(x, y).is_err());
        assert!(g.matmul(x, y).is_ok());
        assert!(g.matmul(y, y).is_err());
    }

    #[test]
    fn builder_rejects_duplicate_leaf() {
        let mut g = GraphBuilder::<f32>::new();
        g.input("x", &[1]).unwrap();
        assert!(g.input("x", &[1]).is_err());
    }

    #[test]
    fn transpose_requires_permutation() {
        let mut g = GraphBuilder::<f32>::new();
        let x = g.input("x", &[2, 3, 4]).unwrap();
        assert!(g.transpose(x, &[0, 0, 1]).is_err());
        assert!(g.transpose(x, &[2, 0]).is_err());
        let t = g.transpose(x, &[2, 0, 1]).unwrap();
        let g = g.finish();
        assert_eq!(g.node(t).shape, vec![4, 2, 3]);
    }

    #[test]
    fn nodes_are_topologically_ordered() {
        let mut g = GraphBuilder::<f32>::new();
        let x = g.input("x", &[2]).unwrap();
        let y = g.scalar_mul(x, 2.0).unwrap();
        let z = g.add(x, y).unwrap();
        let g = g.finish();
        for (id, node) in g.nodes().iter().enumerate() {
            for &i in &node.inputs {
                assert!(i < id, "inputs precede their node");
            }
        }
        assert_eq!(g.node(z).inputs, vec![x, y]);
    }
}

//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every value produced during a forward pass lives on a [`Tape`] and is
//! addressed by a copyable [`Var`]. A node records its backward rule only when
//! at least one of its inputs requires a gradient, so constant sub-graphs (and
//! everything behind [`Tape::stop_gradient`]) cost a forward pass and nothing
//! more. [`Tape::backward`] walks the tape once in reverse insertion order,
//! which is a valid reverse topological order because inputs always precede
//! the nodes that consume them.
//!
//! ```
//! use seqot::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
//! ```

mod backward;
pub(crate) mod kernels;
mod ops;
mod tensor;

pub use ops::{AttnSegment, OpKind};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the right operand of a binary op is expanded over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    Scalar,
    /// rhs `[d]` repeated over every row of lhs `[n, d]`.
    Row,
    /// rhs `[n]` repeated over every column of lhs `[n, d]`.
    Col,
}

impl Bcast {
    #[inline]
    pub(crate) fn index(self, e: usize, d: usize) -> usize {
        match self {
            Bcast::Same => e,
            Bcast::Scalar => 0,
            Bcast::Row => e % d,
            Bcast::Col => e / d,
        }
    }

    /// `f(a[e], b[index(e)])` for every element of `a`.
    #[inline]
    pub(crate) fn zip_map(self, a: &[f64], b: &[f64], d: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        match self {
            Bcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => a.iter().map(|&x| f(x, b[0])).collect(),
            Bcast::Row => {
                let mut out = Vec::with_capacity(a.len());
                for row in a.chunks_exact(d) {
                    out.extend(row.iter().zip(b).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            Bcast::Col => {
                let mut out = Vec::with_capacity(a.len());
                for (row, &y) in a.chunks_exact(d).zip(b) {
                    out.extend(row.iter().map(|&x| f(x, y)));
                }
                out
            }
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinKind,
        bcast: Bcast,
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    LogSoftmax {
        x: Var,
    },
    Log {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Gelu {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanRows {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    EuclideanPairwise {
        a: Var,
        b: Var,
    },
    VectorNorm {
        x: Var,
    },
    SelectPerRow {
        x: Var,
        idx: Vec<usize>,
    },
    ClampMin {
        x: Var,
        floor: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<AttnSegment>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn is_leaf(&self) -> bool {
        matches!(self, Op::Leaf)
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Ordered record of a forward computation.
///
/// A tape is single-owner; create a fresh one per training step.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
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

    /// Inserts a leaf; its `requires_grad` flag decides whether gradients are tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Inserts a leaf that requires a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Forward identity whose backward contributes nothing upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone().with_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 || shape.len() > 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        Ok(backward::run(self, loss))
    }
}

/// Gradients of a loss with respect to the leaves that required them.
///
/// A missing entry means the gradient is exactly zero.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materialising zeros for absent entries.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

use super::kernels::{self, gemm, MatRef};
use super::{Bcast, BinKind, Op, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Query/key row ranges of one attention block inside packed `q` and `k`/`v` matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

/// The op vocabulary accepted by [`Tape::forward_op`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Softmax,
    Log,
    Exp,
    Sum,
    Mean,
    /// Inputs: `x`, `gain`, `bias`; normalises over the last dimension.
    LayerNorm,
    Gelu,
    /// Input: the embedding table.
    EmbeddingLookup {
        ids: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    EuclideanPairwise,
    VectorNorm,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Softmax => "softmax",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gelu => "gelu",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::EuclideanPairwise => "euclidean_pairwise",
            OpKind::VectorNorm => "vector_norm",
        }
    }
}

fn arity(kind: &OpKind, inputs: &[Var], want: usize) -> Result<()> {
    if inputs.len() != want {
        return shape_err(kind.name(), format!("expected {want} inputs, got {}", inputs.len()));
    }
    Ok(())
}

impl Tape {
    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.value(v).dims2() {
            Some(d) => Ok(d),
            None => shape_err(op, format!("expected a matrix, got {:?}", self.value(v).shape())),
        }
    }

    fn any_rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Dispatches one op of the fixed vocabulary.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        match &kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::EuclideanPairwise => {
                arity(&kind, inputs, 2)?
            }
            OpKind::LayerNorm => arity(&kind, inputs, 3)?,
            OpKind::Concat { .. } => {
                if inputs.is_empty() {
                    return shape_err("concat", "no inputs");
                }
            }
            _ => arity(&kind, inputs, 1)?,
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Softmax => Ok(self.softmax(inputs[0])),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Exp => Ok(self.exp(inputs[0])),
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Mean => Ok(self.mean(inputs[0])),
            OpKind::LayerNorm => self.layer_norm(inputs[0], inputs[1], inputs[2]),
            OpKind::Gelu => Ok(self.gelu(inputs[0])),
            OpKind::EmbeddingLookup { ids } => self.embedding_lookup(inputs[0], &ids),
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Slice { axis, start, len } => self.slice(inputs[0], axis, start, len),
            OpKind::EuclideanPairwise => self.euclidean_pairwise(inputs[0], inputs[1]),
            OpKind::VectorNorm => self.vector_norm(inputs[0]),
        }
    }

    fn binary(&mut self, op: &'static str, kind: BinKind, bcast: Bcast, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let d = av.last_dim();
        let ok = match bcast {
            Bcast::Same => av.shape() == bv.shape(),
            Bcast::Scalar => bv.numel() == 1,
            Bcast::Row => av.ndim() == 2 && bv.numel() == d && bv.ndim() <= 2,
            Bcast::Col => av.ndim() == 2 && bv.numel() == av.rows() && bv.ndim() <= 2,
        };
        if !ok {
            return shape_err(op, format!("{:?} vs {:?} ({bcast:?})", av.shape(), bv.shape()));
        }
        let (ad, bd) = (av.data(), bv.data());
        let data = match kind {
            BinKind::Add => bcast.zip_map(ad, bd, d, |x, y| x + y),
            BinKind::Sub => bcast.zip_map(ad, bd, d, |x, y| x - y),
            BinKind::Mul => bcast.zip_map(ad, bd, d, |x, y| x * y),
            BinKind::Div => bcast.zip_map(ad, bd, d, |x, y| x / y),
        };
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(out, Op::Binary { kind, bcast, a, b }, rg))
    }

    fn same_or_scalar(&self, a: Var, b: Var) -> Bcast {
        if self.value(a).shape() != self.value(b).shape() && self.value(b).ndim() == 0 {
            Bcast::Scalar
        } else {
            Bcast::Same
        }
    }

    /// Elementwise sum; `b` may also be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.same_or_scalar(a, b);
        self.binary("add", BinKind::Add, bc, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.same_or_scalar(a, b);
        self.binary("sub", BinKind::Sub, bc, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.same_or_scalar(a, b);
        self.binary("mul", BinKind::Mul, bc, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.same_or_scalar(a, b);
        self.binary("div", BinKind::Div, bc, a, b)
    }

    /// `a [n, d] + b [d]` on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add_row", BinKind::Add, Bcast::Row, a, b)
    }

    /// `a [n, d] * c [n]`, scaling row `i` by `c[i]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.binary("mul_col", BinKind::Mul, Bcast::Col, a, c)
    }

    /// `a [n, d] / c [n]`, dividing row `i` by `c[i]`.
    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.binary("div_col", BinKind::Div, Bcast::Col, a, c)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::new(self.value(a).data(), k),
            MatRef::new(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.dims2("transpose", x)?;
        let out = self.value(x).transpose().expect("checked 2-D");
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Transpose { x }, rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), kernels::softmax_rows(xv.data(), xv.last_dim()));
        let rg = self.requires_grad(x);
        self.push(out, Op::Softmax { x }, rg)
    }

    /// Log-softmax over the last dimension, computed with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), kernels::log_softmax_rows(xv.data(), xv.last_dim()));
        let rg = self.requires_grad(x);
        self.push(out, Op::LogSoftmax { x }, rg)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidInput("log of a non-positive value".into()));
        }
        let out = xv.map(f64::ln);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Log { x }, rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.requires_grad(x);
        self.push(out, Op::Exp { x }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.requires_grad(x);
        self.push(out, Op::Gelu { x }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Column means of `[n, d]`, giving `[d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (_, d) = self.dims2("mean_rows", x)?;
        let out = Tensor::from_parts(vec![d], self.value(x).mean_rows());
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::MeanRows { x }, rg))
    }

    /// Layer normalisation over the last dimension followed by `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return shape_err(
                "layer_norm",
                format!(
                    "x {:?}, gain {:?}, bias {:?}",
                    xv.shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            );
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; xv.numel()];
        for (i, row) in xv.data().chunks_exact(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.any_rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Rows of `table [V, d]` selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2("embedding_lookup", table)?;
        if ids.is_empty() {
            return shape_err("embedding_lookup", "empty id list");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return shape_err(
                "embedding_lookup",
                format!("id {bad} out of range for table [{v}, {d}]"),
            );
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenation of 1-D vectors (axis 0) or 2-D matrices along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let first = self.value(parts[0]).shape().to_vec();
        let ndim = first.len();
        if ndim == 0 || ndim > 2 || axis >= ndim {
            return shape_err("concat", format!("axis {axis} invalid for shape {first:?}"));
        }
        for &p in &parts[1..] {
            let s = self.value(p).shape();
            let compatible = s.len() == ndim && (0..ndim).all(|ax| ax == axis || s[ax] == first[ax]);
            if !compatible {
                return shape_err("concat", format!("{first:?} vs {s:?} along axis {axis}"));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).shape()[axis]).sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let data = if axis == 0 {
            let mut out = Vec::with_capacity(shape.iter().product());
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            out
        } else {
            let rows = first[0];
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row(i));
                }
            }
            out
        };
        let rg = self.any_rg(parts);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries starting at `start` along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.is_empty() || shape.len() > 2 || axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return shape_err("slice", format!("[{start}, {start}+{len}) on axis {axis} of {shape:?}"));
        }
        let xv = self.value(x);
        let (out_shape, data) = if axis == 0 {
            let inner: usize = shape[1..].iter().product();
            let mut s = shape.clone();
            s[0] = len;
            (s, xv.data()[start * inner..(start + len) * inner].to_vec())
        } else {
            let rows = shape[0];
            let mut out = Vec::with_capacity(rows * len);
            for i in 0..rows {
                out.extend_from_slice(&xv.row(i)[start..start + len]);
            }
            (vec![rows, len], out)
        };
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x, axis, start }, rg))
    }

    /// `out[i, j] = ||a_i - b_j||_2` for `a [n, d]`, `b [m, d]`.
    pub fn euclidean_pairwise(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims2("euclidean_pairwise", a)?;
        let (m, d2) = self.dims2("euclidean_pairwise", b)?;
        if d != d2 {
            return shape_err("euclidean_pairwise", format!("[{n}, {d}] vs [{m}, {d2}]"));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = kernels::dist(av.row(i), bv.row(j));
            }
        }
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::EuclideanPairwise { a, b }, rg))
    }

    /// L2 norm of every row of a matrix (`[n]`), or of a vector (scalar).
    pub fn vector_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = match xv.ndim() {
            1 => Tensor::scalar(kernels::norm(xv.data())),
            2 => {
                let d = xv.last_dim();
                Tensor::from_parts(vec![xv.rows()], xv.data().chunks_exact(d).map(kernels::norm).collect())
            }
            _ => return shape_err("vector_norm", format!("unsupported shape {:?}", xv.shape())),
        };
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::VectorNorm { x }, rg))
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn select_per_row(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2("select_per_row", x)?;
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return shape_err("select_per_row", format!("{} indices for [{n}, {m}]", idx.len()));
        }
        let xv = self.value(x);
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| xv.get2(i, j)).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::from_parts(vec![n], out),
            Op::SelectPerRow { x, idx: idx.to_vec() },
            rg,
        ))
    }

    /// `max(x, floor)` elementwise; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor));
        let rg = self.requires_grad(x);
        self.push(out, Op::ClampMin { x, floor }, rg)
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q [Tq, D]`, `k`/`v [Tk, D]`. Each segment attends its query rows to its key rows;
    /// with `causal`, query `i` of a segment sees keys `0..=i` of that segment only.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[AttnSegment],
        causal: bool,
    ) -> Result<Var> {
        let (tq, dm) = self.dims2("attention", q)?;
        let (tk, dk_) = self.dims2("attention", k)?;
        let (tv, dv) = self.dims2("attention", v)?;
        if dk_ != dm || dv != dm || tk != tv || heads == 0 || dm % heads != 0 {
            return shape_err(
                "attention",
                format!("q [{tq}, {dm}], k [{tk}, {dk_}], v [{tv}, {dv}], heads {heads}"),
            );
        }
        for s in segments {
            let bad = s.q_len == 0
                || s.k_len == 0
                || s.q_start + s.q_len > tq
                || s.k_start + s.k_len > tk
                || (causal && s.q_len > s.k_len);
            if bad {
                return shape_err("attention", format!("segment {s:?} out of range"));
            }
        }
        let dh = dm / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; tq * dm];
        let cap: usize = segments.iter().map(|s| s.q_len * s.k_len * heads).sum();
        let mut probs = Vec::with_capacity(cap);
        let mut scores = Vec::new();
        for s in segments {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..s.q_len {
                    let qrow = &qv[(s.q_start + i) * dm + off..][..dh];
                    let visible = if causal { i + 1 } else { s.k_len };
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..visible {
                        let krow = &kv[(s.k_start + j) * dm + off..][..dh];
                        let sc = scale * qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                        max = max.max(sc);
                        scores.push(sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let orow = &mut out[(s.q_start + i) * dm + off..][..dh];
                    for j in 0..s.k_len {
                        let p = if j < visible { scores[j] / z } else { 0.0 };
                        probs.push(p);
                        if p != 0.0 {
                            let vrow = &vv[(s.k_start + j) * dm + off..][..dh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += p * x;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_rg(&[q, k, v]);
        Ok(self.push(
            Tensor::from_parts(vec![tq, dm], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                probs,
            },
            rg,
        ))
    }
}

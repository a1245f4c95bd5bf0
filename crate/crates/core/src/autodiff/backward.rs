use super::kernels::{self, gemm, MatRef};
use super::{BinKind, GradientMap, Op, Tape, Tensor, Var};

struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    fn wants(&self, tape: &Tape, v: Var) -> bool {
        tape.nodes[v.0].requires_grad
    }

    /// Adds `delta` into the gradient of `v`; a first contribution is moved in as-is.
    fn add(&mut self, v: Var, delta: Vec<f64>) {
        match &mut self.bufs[v.0] {
            Some(buf) => buf.iter_mut().zip(&delta).for_each(|(b, d)| *b += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn buf(&mut self, tape: &Tape, v: Var) -> &mut Vec<f64> {
        let n = tape.nodes[v.0].value.numel();
        self.bufs[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

pub(super) fn run(tape: &Tape, loss: Var) -> GradientMap {
    let mut g = Grads {
        bufs: vec![None; loss.0 + 1],
    };
    if tape.nodes[loss.0].requires_grad {
        g.bufs[loss.0] = Some(vec![1.0]);
    }
    for idx in (0..=loss.0).rev() {
        let node = &tape.nodes[idx];
        if !node.requires_grad || node.op.is_leaf() {
            continue;
        }
        let Some(gout) = g.bufs[idx].take() else {
            continue;
        };
        step(tape, &mut g, idx, &gout);
    }
    let grads = g
        .bufs
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let node = &tape.nodes[i];
            match b {
                Some(data) if node.op.is_leaf() && node.requires_grad => {
                    Some(Tensor::from_parts(node.value.shape().to_vec(), data))
                }
                _ => None,
            }
        })
        .collect();
    GradientMap { grads }
}

fn step(tape: &Tape, g: &mut Grads, idx: usize, gout: &[f64]) {
    let node = &tape.nodes[idx];
    let out = node.value.data();
    let val = |v: Var| tape.nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, bcast, a, b } => {
            let (a, b, kind, bcast) = (*a, *b, *kind, *bcast);
            let d = tape.nodes[a.0].value.last_dim();
            let (ad, bd) = (val(a), val(b));
            if g.wants(tape, a) {
                let delta: Vec<f64> = match kind {
                    BinKind::Add | BinKind::Sub => gout.to_vec(),
                    BinKind::Mul => bcast.zip_map(gout, bd, d, |x, y| x * y),
                    BinKind::Div => bcast.zip_map(gout, bd, d, |x, y| x / y),
                };
                g.add(a, delta);
            }
            if g.wants(tape, b) {
                let mut delta = vec![0.0; bd.len()];
                for (e, &x) in gout.iter().enumerate() {
                    let j = bcast.index(e, d);
                    delta[j] += match kind {
                        BinKind::Add => x,
                        BinKind::Sub => -x,
                        BinKind::Mul => x * ad[e],
                        BinKind::Div => -x * out[e] / bd[j],
                    };
                }
                g.add(b, delta);
            }
        }
        Op::Scale { x, c } => g.add(*x, gout.iter().map(|v| v * c).collect()),
        Op::MatMul { a, b } => {
            let (m, k) = tape.nodes[a.0].value.dims2().expect("matrix");
            let n = tape.nodes[b.0].value.dims2().expect("matrix").1;
            if g.wants(tape, *a) {
                let mut delta = vec![0.0; m * k];
                gemm(m, n, k, MatRef::new(gout, n), MatRef::t(val(*b), n), 0.0, &mut delta);
                g.add(*a, delta);
            }
            if g.wants(tape, *b) {
                let mut delta = vec![0.0; k * n];
                gemm(k, m, n, MatRef::t(val(*a), k), MatRef::new(gout, n), 0.0, &mut delta);
                g.add(*b, delta);
            }
        }
        Op::Transpose { x } => {
            let (r, c) = node.value.dims2().expect("matrix");
            let t = Tensor::from_parts(vec![r, c], gout.to_vec())
                .transpose()
                .expect("matrix");
            g.add(*x, t.into_data());
        }
        Op::Softmax { x } => {
            let d = node.value.last_dim();
            let mut delta = vec![0.0; gout.len()];
            for ((gr, yr), dr) in gout
                .chunks_exact(d)
                .zip(out.chunks_exact(d))
                .zip(delta.chunks_exact_mut(d))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            g.add(*x, delta);
        }
        Op::LogSoftmax { x } => {
            let d = node.value.last_dim();
            let mut delta = vec![0.0; gout.len()];
            for ((gr, yr), dr) in gout
                .chunks_exact(d)
                .zip(out.chunks_exact(d))
                .zip(delta.chunks_exact_mut(d))
            {
                let s: f64 = gr.iter().sum();
                for j in 0..d {
                    dr[j] = gr[j] - yr[j].exp() * s;
                }
            }
            g.add(*x, delta);
        }
        Op::Log { x } => g.add(*x, gout.iter().zip(val(*x)).map(|(gv, xv)| gv / xv).collect()),
        Op::Exp { x } => g.add(*x, gout.iter().zip(out).map(|(gv, y)| gv * y).collect()),
        Op::Gelu { x } => g.add(
            *x,
            gout.iter()
                .zip(val(*x))
                .map(|(gv, &xv)| gv * kernels::gelu_grad(xv))
                .collect(),
        ),
        Op::Sum { x } => {
            let n = tape.nodes[x.0].value.numel();
            g.add(*x, vec![gout[0]; n]);
        }
        Op::Mean { x } => {
            let n = tape.nodes[x.0].value.numel();
            g.add(*x, vec![gout[0] / n as f64; n]);
        }
        Op::MeanRows { x } => {
            let (n, d) = tape.nodes[x.0].value.dims2().expect("matrix");
            let mut delta = vec![0.0; n * d];
            for row in delta.chunks_exact_mut(d) {
                for (r, gv) in row.iter_mut().zip(gout) {
                    *r = gv / n as f64;
                }
            }
            g.add(*x, delta);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = node.value.last_dim();
            let gn = val(*gain);
            if g.wants(tape, *x) {
                let mut delta = vec![0.0; gout.len()];
                let mut dxhat = vec![0.0; d];
                for (i, (gr, dr)) in gout.chunks_exact(d).zip(delta.chunks_exact_mut(d)).enumerate() {
                    let hr = &xhat[i * d..(i + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        dxhat[j] = gr[j] * gn[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * hr[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        dr[j] = rstd[i] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                g.add(*x, delta);
            }
            if g.wants(tape, *gain) {
                let mut delta = vec![0.0; d];
                for (gr, hr) in gout.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        delta[j] += gr[j] * hr[j];
                    }
                }
                g.add(*gain, delta);
            }
            if g.wants(tape, *bias) {
                let mut delta = vec![0.0; d];
                for gr in gout.chunks_exact(d) {
                    delta.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
                g.add(*bias, delta);
            }
        }
        Op::Embedding { table, ids } => {
            let d = node.value.last_dim();
            let buf = g.buf(tape, *table);
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    buf[id * d + j] += gout[r * d + j];
                }
            }
        }
        Op::Concat { parts, axis } => {
            let shape = node.value.shape();
            if *axis == 0 {
                let mut off = 0;
                for &p in parts {
                    let n = tape.nodes[p.0].value.numel();
                    if g.wants(tape, p) {
                        g.add(p, gout[off..off + n].to_vec());
                    }
                    off += n;
                }
            } else {
                let (rows, total) = (shape[0], shape[1]);
                let mut col = 0;
                for &p in parts {
                    let w = tape.nodes[p.0].value.shape()[1];
                    if g.wants(tape, p) {
                        let mut delta = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            delta.extend_from_slice(&gout[i * total + col..i * total + col + w]);
                        }
                        g.add(p, delta);
                    }
                    col += w;
                }
            }
        }
        Op::Slice { x, axis, start } => {
            let xs = tape.nodes[x.0].value.shape().to_vec();
            let buf = g.buf(tape, *x);
            if *axis == 0 {
                let inner: usize = xs[1..].iter().product();
                let base = start * inner;
                for (b, gv) in buf[base..base + gout.len()].iter_mut().zip(gout) {
                    *b += gv;
                }
            } else {
                let (rows, cols) = (xs[0], xs[1]);
                let w = gout.len() / rows;
                for i in 0..rows {
                    for j in 0..w {
                        buf[i * cols + start + j] += gout[i * w + j];
                    }
                }
            }
        }
        Op::EuclideanPairwise { a, b } => {
            let (n, d) = tape.nodes[a.0].value.dims2().expect("matrix");
            let m = tape.nodes[b.0].value.rows();
            let (av, bv) = (val(*a), val(*b));
            let mut da = vec![0.0; n * d];
            let mut db = vec![0.0; m * d];
            for i in 0..n {
                for j in 0..m {
                    let dist = out[i * m + j];
                    let gij = gout[i * m + j];
                    // zero subgradient at coincident points
                    if dist == 0.0 || gij == 0.0 {
                        continue;
                    }
                    let s = gij / dist;
                    for c in 0..d {
                        let diff = av[i * d + c] - bv[j * d + c];
                        da[i * d + c] += s * diff;
                        db[j * d + c] -= s * diff;
                    }
                }
            }
            if g.wants(tape, *a) {
                g.add(*a, da);
            }
            if g.wants(tape, *b) {
                g.add(*b, db);
            }
        }
        Op::VectorNorm { x } => {
            let xv = &tape.nodes[x.0].value;
            let d = if xv.ndim() == 1 { xv.numel() } else { xv.last_dim() };
            let mut delta = vec![0.0; xv.numel()];
            for (i, (xr, dr)) in xv.data().chunks_exact(d).zip(delta.chunks_exact_mut(d)).enumerate() {
                if out[i] == 0.0 {
                    continue;
                }
                let s = gout[i] / out[i];
                for (dv, xv) in dr.iter_mut().zip(xr) {
                    *dv = s * xv;
                }
            }
            g.add(*x, delta);
        }
        Op::SelectPerRow { x, idx } => {
            let m = tape.nodes[x.0].value.last_dim();
            let buf = g.buf(tape, *x);
            for (i, &j) in idx.iter().enumerate() {
                buf[i * m + j] += gout[i];
            }
        }
        Op::ClampMin { x, floor } => g.add(
            *x,
            gout.iter()
                .zip(val(*x))
                .map(|(gv, &xv)| if xv > *floor { *gv } else { 0.0 })
                .collect(),
        ),
        Op::Attention {
            q,
            k,
            v,
            heads,
            segments,
            probs,
        } => attention_backward(tape, g, gout, *q, *k, *v, *heads, segments, probs),
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    tape: &Tape,
    g: &mut Grads,
    gout: &[f64],
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    segments: &[super::AttnSegment],
    probs: &[f64],
) {
    let (tq, dm) = tape.nodes[q.0].value.dims2().expect("matrix");
    let tk = tape.nodes[k.0].value.rows();
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qv, kv, vv) = (
        tape.nodes[q.0].value.data(),
        tape.nodes[k.0].value.data(),
        tape.nodes[v.0].value.data(),
    );
    let (wq, wk, wv) = (g.wants(tape, q), g.wants(tape, k), g.wants(tape, v));
    let mut dq = vec![0.0; tq * dm];
    let mut dk = vec![0.0; tk * dm];
    let mut dv = vec![0.0; tk * dm];
    let mut ds = Vec::new();
    let mut p_off = 0;
    for s in segments {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..s.q_len {
                let p = &probs[p_off..p_off + s.k_len];
                p_off += s.k_len;
                let go = &gout[(s.q_start + i) * dm + off..][..dh];
                ds.clear();
                let mut dot = 0.0;
                for (j, &pj) in p.iter().enumerate() {
                    let vrow = &vv[(s.k_start + j) * dm + off..][..dh];
                    let dp: f64 = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    dot += pj * dp;
                    ds.push(dp);
                    if wv && pj != 0.0 {
                        let dvrow = &mut dv[(s.k_start + j) * dm + off..][..dh];
                        for (d, gv) in dvrow.iter_mut().zip(go) {
                            *d += pj * gv;
                        }
                    }
                }
                for (dsj, &pj) in ds.iter_mut().zip(p) {
                    *dsj = pj * (*dsj - dot) * scale;
                }
                let qrow = &qv[(s.q_start + i) * dm + off..][..dh];
                for (j, &dsj) in ds.iter().enumerate() {
                    if dsj == 0.0 {
                        continue;
                    }
                    let krow = &kv[(s.k_start + j) * dm + off..][..dh];
                    if wq {
                        let dqrow = &mut dq[(s.q_start + i) * dm + off..][..dh];
                        for (d, kx) in dqrow.iter_mut().zip(krow) {
                            *d += dsj * kx;
                        }
                    }
                    if wk {
                        let dkrow = &mut dk[(s.k_start + j) * dm + off..][..dh];
                        for (d, qx) in dkrow.iter_mut().zip(qrow) {
                            *d += dsj * qx;
                        }
                    }
                }
            }
        }
    }
    if wq {
        g.add(q, dq);
    }
    if wk {
        g.add(k, dk);
    }
    if wv {
        g.add(v, dv);
    }
}

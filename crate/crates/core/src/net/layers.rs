//! Layer primitives with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat slice; a layer only records where its weights
//! start. Forward passes return whatever the backward pass needs, and
//! backward passes add parameter gradients into a slice laid out like the
//! parameters.

use super::tensor::{gemm, Act, Real, View};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// 1D convolution with odd kernel, "same" padding and stride 1 or 2.
/// Weights are `[cout][cin][k]`, followed by `cout` biases.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.pad() - self.k) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col<T: Real>(&self, x: &Act<T>) -> Vec<T> {
        let (l, lo, pad) = (x.l, self.out_len(x.l), self.pad() as isize);
        let n_out = x.b * lo;
        let n_in = x.n();
        let mut cols = vec![T::zero(); self.cin * self.k * n_out];
        for ci in 0..self.cin {
            let src = &x.data[ci * n_in..(ci + 1) * n_in];
            for kk in 0..self.k {
                let row = &mut cols[(ci * self.k + kk) * n_out..(ci * self.k + kk + 1) * n_out];
                for b in 0..x.b {
                    let s = &src[b * l..(b + 1) * l];
                    let r = &mut row[b * lo..(b + 1) * lo];
                    for (j, v) in r.iter_mut().enumerate() {
                        let p = (j * self.stride) as isize + kk as isize - pad;
                        if p >= 0 && (p as usize) < l {
                            *v = s[p as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: &[T], dx: &mut Act<T>) {
        let (l, lo, pad) = (dx.l, self.out_len(dx.l), self.pad() as isize);
        let n_out = dx.b * lo;
        let n_in = dx.n();
        for ci in 0..self.cin {
            for kk in 0..self.k {
                let row = &dcols[(ci * self.k + kk) * n_out..(ci * self.k + kk + 1) * n_out];
                for b in 0..dx.b {
                    let d = &mut dx.data[ci * n_in + b * l..ci * n_in + (b + 1) * l];
                    for (j, &v) in row[b * lo..(b + 1) * lo].iter().enumerate() {
                        let p = (j * self.stride) as isize + kk as isize - pad;
                        if p >= 0 && (p as usize) < l {
                            d[p as usize] += v;
                        }
                    }
                }
            }
        }
    }

    /// Valid output range and input shift of tap `kk` for a stride-1 conv.
    fn tap(&self, kk: usize, l: usize) -> Option<(usize, usize, usize)> {
        let s = kk as isize - self.pad() as isize;
        let lo = (-s).max(0) as usize;
        let hi = (l as isize - s.max(0)).max(0) as usize;
        (hi > lo).then(|| (lo, hi - lo, (lo as isize + s) as usize))
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let lo = self.out_len(x.l);
        let mut y = Act::zeros(self.cout, x.b, lo);
        let n = y.n();
        let kdim = self.cin * self.k;
        if self.is_pointwise() {
            let w = View::rows(p, self.w, kdim);
            gemm(self.cout, kdim, n, T::one(), w, View::rows(&x.data, 0, n), T::zero(), &mut y.data, 0, n, 1);
        } else if self.stride == 1 {
            for kk in 0..self.k {
                let Some((o, len, i)) = self.tap(kk, x.l) else { continue };
                let w = View::new(p, self.w + kk, kdim, self.k);
                for b in 0..x.b {
                    let xv = View::rows(&x.data, b * x.l + i, n);
                    gemm(self.cout, self.cin, len, T::one(), w, xv, T::one(), &mut y.data, b * lo + o, n, 1);
                }
            }
        } else {
            let cols = self.im2col(x);
            let w = View::rows(p, self.w, kdim);
            gemm(self.cout, kdim, n, T::one(), w, View::rows(&cols, 0, n), T::zero(), &mut y.data, 0, n, 1);
        }
        for co in 0..self.cout {
            let bias = p[self.bias + co];
            for v in &mut y.data[co * n..(co + 1) * n] {
                *v += bias;
            }
        }
        y
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        x: &Act<T>,
        dy: &Act<T>,
        g: &mut [T],
        need_dx: bool,
    ) -> Option<Act<T>> {
        let n = dy.n();
        let kdim = self.cin * self.k;
        for co in 0..self.cout {
            let s: T = dy.data[co * n..(co + 1) * n].iter().copied().sum();
            g[self.bias + co] += s;
        }
        if self.stride == 1 && !self.is_pointwise() {
            let nx = x.n();
            let mut dx = need_dx.then(|| x.same_shape());
            for kk in 0..self.k {
                let Some((o, len, i)) = self.tap(kk, x.l) else { continue };
                for b in 0..x.b {
                    let dyv = View::rows(&dy.data, b * dy.l + o, n);
                    // dW_k += dy x_shifted^T
                    gemm(
                        self.cout,
                        len,
                        self.cin,
                        T::one(),
                        dyv,
                        View::trans(&x.data, b * x.l + i, nx),
                        T::one(),
                        g,
                        self.w + kk,
                        kdim,
                        self.k,
                    );
                    if let Some(dx) = dx.as_mut() {
                        let wt = View::new(p, self.w + kk, self.k, kdim);
                        gemm(self.cin, self.cout, len, T::one(), wt, dyv, T::one(), &mut dx.data, b * x.l + i, nx, 1);
                    }
                }
            }
            return dx;
        }
        let cols_owned;
        let cols: &[T] = if self.is_pointwise() {
            &x.data
        } else {
            cols_owned = self.im2col(x);
            &cols_owned
        };
        // dW += dy * cols^T
        gemm(
            self.cout,
            n,
            kdim,
            T::one(),
            View::rows(&dy.data, 0, n),
            View::trans(cols, 0, n),
            T::one(),
            g,
            self.w,
            kdim,
            1,
        );
        if !need_dx {
            return None;
        }
        let mut dx = x.same_shape();
        let wt = View::trans(p, self.w, kdim);
        if self.is_pointwise() {
            gemm(kdim, self.cout, n, T::one(), wt, View::rows(&dy.data, 0, n), T::zero(), &mut dx.data, 0, n, 1);
        } else {
            let mut dcols = vec![T::zero(); kdim * n];
            gemm(kdim, self.cout, n, T::one(), wt, View::rows(&dy.data, 0, n), T::zero(), &mut dcols, 0, n, 1);
            self.col2im(&dcols, &mut dx);
        }
        Some(dx)
    }
}

/// Group normalization over (channels in group x positions) per sample,
/// followed by a per-channel affine map.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: usize,
    pub beta: usize,
    pub c: usize,
    pub groups: usize,
}

pub struct NormCache<T> {
    xhat: Act<T>,
    rstd: Vec<T>,
}

impl GroupNorm {
    pub fn forward<T: Real>(&self, p: &[T], x: &Act<T>) -> (Act<T>, NormCache<T>) {
        let (n, l, cg) = (x.n(), x.l, self.c / self.groups);
        let count = T::from_usize(cg * l).unwrap();
        let eps = T::lit(NORM_EPS);
        let mut xhat = x.same_shape();
        let mut y = x.same_shape();
        let mut rstd = vec![T::zero(); x.b * self.groups];
        for b in 0..x.b {
            for g in 0..self.groups {
                let chans = g * cg..(g + 1) * cg;
                let seg = |c: usize| c * n + b * l..c * n + (b + 1) * l;
                let mut sum = T::zero();
                for c in chans.clone() {
                    sum += x.data[seg(c)].iter().copied().sum();
                }
                let mean = sum / count;
                let mut var = T::zero();
                for c in chans.clone() {
                    for &v in &x.data[seg(c)] {
                        var += (v - mean) * (v - mean);
                    }
                }
                let r = T::one() / (var / count + eps).sqrt();
                rstd[b * self.groups + g] = r;
                for c in chans {
                    let (ga, be) = (p[self.gamma + c], p[self.beta + c]);
                    for i in seg(c) {
                        let h = (x.data[i] - mean) * r;
                        xhat.data[i] = h;
                        y.data[i] = h * ga + be;
                    }
                }
            }
        }
        (y, NormCache { xhat, rstd })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &NormCache<T>, dy: &Act<T>, g: &mut [T]) -> Act<T> {
        let xhat = &cache.xhat;
        let (n, l, cg) = (dy.n(), dy.l, self.c / self.groups);
        let count = T::from_usize(cg * l).unwrap();
        let mut dx = dy.same_shape();
        for c in 0..self.c {
            let (mut dg, mut db) = (T::zero(), T::zero());
            for i in c * n..(c + 1) * n {
                dg += dy.data[i] * xhat.data[i];
                db += dy.data[i];
            }
            g[self.gamma + c] += dg;
            g[self.beta + c] += db;
        }
        for b in 0..dy.b {
            for grp in 0..self.groups {
                let chans = grp * cg..(grp + 1) * cg;
                let seg = |c: usize| c * n + b * l..c * n + (b + 1) * l;
                let (mut s1, mut s2) = (T::zero(), T::zero());
                for c in chans.clone() {
                    let ga = p[self.gamma + c];
                    for i in seg(c) {
                        let dh = dy.data[i] * ga;
                        s1 += dh;
                        s2 += dh * xhat.data[i];
                    }
                }
                let r = cache.rstd[b * self.groups + grp];
                for c in chans {
                    let ga = p[self.gamma + c];
                    for i in seg(c) {
                        let dh = dy.data[i] * ga;
                        dx.data[i] = r / count * (count * dh - s1 - xhat.data[i] * s2);
                    }
                }
            }
        }
        dx
    }
}

/// `1 / (1 + exp(-x))` for every element.
fn sigmoid_all<T: Real>(x: &[T]) -> Vec<T> {
    let mut s: Vec<T> = x.iter().map(|&v| -v).collect();
    T::exp_in_place(&mut s);
    for v in &mut s {
        *v = T::one() / (T::one() + *v);
    }
    s
}

pub fn silu<T: Real>(x: &Act<T>) -> Act<T> {
    let mut y = sigmoid_all(&x.data);
    for (v, &xv) in y.iter_mut().zip(&x.data) {
        *v *= xv;
    }
    Act::from_vec(x.c, x.b, x.l, y)
}

pub fn silu_backward<T: Real>(x: &Act<T>, dy: &Act<T>) -> Act<T> {
    let mut dx = sigmoid_all(&x.data);
    for ((d, &v), &g) in dx.iter_mut().zip(&x.data).zip(&dy.data) {
        let s = *d;
        *d = g * s * (T::one() + v * (T::one() - s));
    }
    Act::from_vec(x.c, x.b, x.l, dx)
}

pub fn concat<T: Real>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    assert_eq!((a.b, a.l), (b.b, b.l));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Act::from_vec(a.c + b.c, a.b, a.l, data)
}

pub fn split<T: Real>(d: &Act<T>, c_first: usize) -> (Act<T>, Act<T>) {
    let cut = c_first * d.n();
    (
        Act::from_vec(c_first, d.b, d.l, d.data[..cut].to_vec()),
        Act::from_vec(d.c - c_first, d.b, d.l, d.data[cut..].to_vec()),
    )
}

/// Nearest-neighbour upsampling by 2 along the length axis.
pub fn upsample2<T: Real>(x: &Act<T>) -> Act<T> {
    let mut y = Act::zeros(x.c, x.b, 2 * x.l);
    for (r, v) in x.data.iter().enumerate() {
        y.data[2 * r] = *v;
        y.data[2 * r + 1] = *v;
    }
    y
}

pub fn upsample2_backward<T: Real>(dy: &Act<T>) -> Act<T> {
    let mut dx = Act::zeros(dy.c, dy.b, dy.l / 2);
    for (r, v) in dx.data.iter_mut().enumerate() {
        *v = dy.data[2 * r] + dy.data[2 * r + 1];
    }
    dx
}

/// Adds a per-sample channel vector (`c x b x 1`) at every position.
pub fn add_broadcast<T: Real>(h: &mut Act<T>, e: &Act<T>) {
    assert_eq!((h.c, h.b, e.l), (e.c, e.b, 1));
    let (n, l) = (h.n(), h.l);
    for c in 0..h.c {
        for b in 0..h.b {
            let v = e.data[c * h.b + b];
            for x in &mut h.data[c * n + b * l..c * n + (b + 1) * l] {
                *x += v;
            }
        }
    }
}

pub fn add_broadcast_backward<T: Real>(dh: &Act<T>) -> Act<T> {
    let (n, l) = (dh.n(), dh.l);
    let mut de = Act::zeros(dh.c, dh.b, 1);
    for c in 0..dh.c {
        for b in 0..dh.b {
            de.data[c * dh.b + b] = dh.data[c * n + b * l..c * n + (b + 1) * l].iter().copied().sum();
        }
    }
    de
}

/// Single-head cross-attention: queries from the main path, keys and values
/// from a context of the same resolution. Output is `h + proj(attn)`.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub c: usize,
    pub norm_q: GroupNorm,
    pub norm_kv: GroupNorm,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub o: Conv,
}

pub struct AttnCache<T> {
    nq: NormCache<T>,
    nkv: NormCache<T>,
    hq: Act<T>,
    ck: Act<T>,
    cn: Act<T>,
    q: Act<T>,
    k: Act<T>,
    v: Act<T>,
    probs: Vec<T>,
    mixed: Act<T>,
}

impl CrossAttention {
    pub fn forward<T: Real>(&self, p: &[T], h: &Act<T>, ctx: &Act<T>) -> (Act<T>, AttnCache<T>) {
        assert_eq!((h.c, h.b, h.l), (ctx.c, ctx.b, ctx.l), "attention shapes");
        let (c, l, n) = (self.c, h.l, h.n());
        let (mut hq, nq) = self.norm_q.forward(p, h);
        let (cn, nkv) = self.norm_kv.forward(p, ctx);
        let mut ck = cn.clone();
        add_positions(&mut hq);
        add_positions(&mut ck);
        let q = self.q.forward(p, &hq);
        let k = self.k.forward(p, &ck);
        let v = self.v.forward(p, &cn);
        let scale = T::one() / T::from_usize(c).unwrap().sqrt();
        let mut probs = vec![T::zero(); h.b * l * l];
        let mut mixed = h.same_shape();
        for b in 0..h.b {
            let pb = &mut probs[b * l * l..(b + 1) * l * l];
            // scores[i][j] = sum_c q[c][i] k[c][j]
            gemm(l, c, l, scale, View::new(&q.data, b * l, 1, n), View::new(&k.data, b * l, n, 1), T::zero(), pb, 0, l, 1);
            for row in pb.chunks_mut(l) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                for v in row.iter_mut() {
                    *v = *v - m;
                }
                T::exp_in_place(row);
                let s: T = row.iter().copied().sum();
                for v in row.iter_mut() {
                    *v = *v / s;
                }
            }
            // mixed[c][i] = sum_j v[c][j] P[i][j]
            gemm(c, l, l, T::one(), View::new(&v.data, b * l, n, 1), View::new(pb, 0, 1, l), T::zero(), &mut mixed.data, b * l, n, 1);
        }
        let mut out = self.o.forward(p, &mixed);
        out.add_assign(h);
        (
            out,
            AttnCache {
                nq,
                nkv,
                hq,
                ck,
                cn,
                q,
                k,
                v,
                probs,
                mixed,
            },
        )
    }

    /// Returns gradients for `(h, ctx)`.
    pub fn backward<T: Real>(&self, p: &[T], cache: &AttnCache<T>, dout: &Act<T>, g: &mut [T]) -> (Act<T>, Act<T>) {
        let (c, l, n, bsz) = (self.c, dout.l, dout.n(), dout.b);
        let scale = T::one() / T::from_usize(c).unwrap().sqrt();
        let dmixed = self.o.backward(p, &cache.mixed, dout, g, true).unwrap();
        let mut dq = dout.same_shape();
        let mut dk = dout.same_shape();
        let mut dv = dout.same_shape();
        let mut dp = vec![T::zero(); l * l];
        for b in 0..bsz {
            let pb = &cache.probs[b * l * l..(b + 1) * l * l];
            // dP[i][j] = sum_c dmixed[c][i] v[c][j]
            gemm(l, c, l, T::one(), View::new(&dmixed.data, b * l, 1, n), View::new(&cache.v.data, b * l, n, 1), T::zero(), &mut dp, 0, l, 1);
            // dv[c][j] = sum_i dmixed[c][i] P[i][j]
            gemm(c, l, l, T::one(), View::new(&dmixed.data, b * l, n, 1), View::rows(pb, 0, l), T::zero(), &mut dv.data, b * l, n, 1);
            // softmax backward, folded with the score scale
            for (drow, prow) in dp.chunks_mut(l).zip(pb.chunks(l)) {
                let dot: T = drow.iter().zip(prow).map(|(&d, &p)| d * p).sum();
                for (d, &p) in drow.iter_mut().zip(prow) {
                    *d = p * (*d - dot) * scale;
                }
            }
            // dq[c][i] = sum_j k[c][j] dS[i][j]
            gemm(c, l, l, T::one(), View::new(&cache.k.data, b * l, n, 1), View::new(&dp, 0, 1, l), T::zero(), &mut dq.data, b * l, n, 1);
            // dk[c][j] = sum_i q[c][i] dS[i][j]
            gemm(c, l, l, T::one(), View::new(&cache.q.data, b * l, n, 1), View::rows(&dp, 0, l), T::zero(), &mut dk.data, b * l, n, 1);
        }
        let dhn = self.q.backward(p, &cache.hq, &dq, g, true).unwrap();
        let mut dcn = self.k.backward(p, &cache.ck, &dk, g, true).unwrap();
        dcn.add_assign(&self.v.backward(p, &cache.cn, &dv, g, true).unwrap());
        let mut dh = self.norm_q.backward(p, &cache.nq, &dhn, g);
        dh.add_assign(dout);
        let dctx = self.norm_kv.backward(p, &cache.nkv, &dcn, g);
        (dh, dctx)
    }
}

/// Adds a sinusoidal encoding of the sample index to every channel column,
/// so attention scores can depend on relative position.
fn add_positions<T: Real>(x: &mut Act<T>) {
    let (c, l, n) = (x.c, x.l, x.n());
    for i in 0..l {
        let pe = sinusoidal_embed(i as f64, c - c % 2).expect("even width");
        for (ch, v) in pe.iter().enumerate() {
            let v = T::lit(*v);
            for b in 0..x.b {
                x.data[ch * n + b * l + i] += v;
            }
        }
    }
}

/// `emb[2k] = sin(t / 10000^(2k/dim))`, `emb[2k+1] = cos(...)`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding dimension {dim} is odd")));
    }
    let mut out = vec![0.0; dim];
    for k in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * k) as f64) / dim as f64);
        out[2 * k] = (t * freq).sin();
        out[2 * k + 1] = (t * freq).cos();
    }
    Ok(out)
}

//! Conditioned 1D UNet with a PPG encoder and cross-attention.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    add_broadcast, add_broadcast_backward, concat, silu, silu_backward, sinusoidal_embed, split,
    upsample2, upsample2_backward, AttnCache, Conv, CrossAttention, GroupNorm, NormCache,
};
use super::tensor::{Act, Real};
use crate::error::{Error, Result};

/// Number of groups used by every group normalization.
pub const GROUPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_stages: Vec<usize>,
    pub embed_dim: usize,
}

impl NetConfig {
    /// Smallest useful network, used for gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            depth: 2,
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            attention_stages: vec![1],
            embed_dim: 16,
        }
    }

    /// Default for training on synthetic data on one CPU core.
    pub fn desk() -> Self {
        NetConfig {
            depth: 3,
            base_channels: 8,
            channel_multipliers: vec![1, 2, 4],
            attention_stages: vec![2],
            embed_dim: 64,
        }
    }

    pub fn full() -> Self {
        NetConfig {
            depth: 6,
            base_channels: 64,
            channel_multipliers: vec![1, 2, 4, 8, 16, 16],
            attention_stages: vec![4, 5],
            embed_dim: 256,
        }
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels * self.channel_multipliers[stage]
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("net depth must be at least 1"));
        }
        if self.channel_multipliers.len() != self.depth {
            return Err(Error::invalid(format!(
                "channel_multipliers has {} entries, depth is {}",
                self.channel_multipliers.len(),
                self.depth
            )));
        }
        for s in 0..self.depth {
            let c = self.channels(s);
            if c == 0 || c % GROUPS != 0 {
                return Err(Error::invalid(format!(
                    "stage {s} has {c} channels, must be a positive multiple of {GROUPS}"
                )));
            }
        }
        if self.base_channels % GROUPS != 0 {
            return Err(Error::invalid("base_channels must be a multiple of 8"));
        }
        if let Some(&s) = self.attention_stages.iter().find(|&&s| s >= self.depth) {
            return Err(Error::invalid(format!("attention stage {s} out of range")));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::invalid("embed_dim must be even and positive"));
        }
        Ok(())
    }

    /// Window lengths must survive `depth - 1` halvings.
    pub fn check_len(&self, len: usize) -> Result<()> {
        let f = 1usize << (self.depth - 1);
        if len == 0 || len % f != 0 {
            return Err(Error::invalid(format!(
                "window length {len} is not a multiple of {f}"
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(Layout::build(self)?.0.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

#[derive(Default)]
struct Builder {
    segments: Vec<Segment>,
    total: usize,
}

impl Builder {
    fn alloc(&mut self, name: String, len: usize, init: Init) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name,
            offset,
            len,
            init,
        });
        self.total += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let fan_in = cin * k;
        let w = self.alloc(format!("{name}.weight"), cout * cin * k, Init::Uniform { fan_in });
        let bias = self.alloc(format!("{name}.bias"), cout, Init::Uniform { fan_in });
        Conv {
            w,
            bias,
            cin,
            cout,
            k,
            stride,
        }
    }

    fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = self.alloc(format!("{name}.weight"), cout * cin * k, Init::Zeros);
        let bias = self.alloc(format!("{name}.bias"), cout, Init::Zeros);
        Conv {
            w,
            bias,
            cin,
            cout,
            k,
            stride: 1,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> GroupNorm {
        let gamma = self.alloc(format!("{name}.gamma"), c, Init::Ones);
        let beta = self.alloc(format!("{name}.beta"), c, Init::Zeros);
        GroupNorm {
            gamma,
            beta,
            c,
            groups: GROUPS,
        }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, temb: Option<usize>) -> ResBlock {
        ResBlock {
            n1: self.norm(&format!("{name}.norm1"), cin),
            c1: self.conv(&format!("{name}.conv1"), cin, cout, 3, 1),
            temb: temb.map(|e| self.conv(&format!("{name}.temb"), e, cout, 1, 1)),
            n2: self.norm(&format!("{name}.norm2"), cout),
            c2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 1),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
        }
    }

    fn attn(&mut self, name: &str, c: usize) -> CrossAttention {
        CrossAttention {
            c,
            norm_q: self.norm(&format!("{name}.norm_q"), c),
            norm_kv: self.norm(&format!("{name}.norm_kv"), c),
            q: self.conv(&format!("{name}.q"), c, c, 1, 1),
            k: self.conv(&format!("{name}.k"), c, c, 1, 1),
            v: self.conv(&format!("{name}.v"), c, c, 1, 1),
            o: self.conv(&format!("{name}.o"), c, c, 1, 1),
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    n1: GroupNorm,
    c1: Conv,
    temb: Option<Conv>,
    n2: GroupNorm,
    c2: Conv,
    skip: Option<Conv>,
}

struct ResCache<T> {
    x: Act<T>,
    nc1: NormCache<T>,
    a1: Act<T>,
    s1: Act<T>,
    nc2: NormCache<T>,
    a2: Act<T>,
    s2: Act<T>,
}

impl ResBlock {
    fn forward<T: Real>(&self, p: &[T], x: Act<T>, st: Option<&Act<T>>) -> (Act<T>, ResCache<T>) {
        let (a1, nc1) = self.n1.forward(p, &x);
        let s1 = silu(&a1);
        let mut h = self.c1.forward(p, &s1);
        if let (Some(proj), Some(st)) = (&self.temb, st) {
            add_broadcast(&mut h, &proj.forward(p, st));
        }
        let (a2, nc2) = self.n2.forward(p, &h);
        let s2 = silu(&a2);
        let mut out = self.c2.forward(p, &s2);
        match &self.skip {
            Some(sk) => out.add_assign(&sk.forward(p, &x)),
            None => out.add_assign(&x),
        }
        (
            out,
            ResCache {
                x,
                nc1,
                a1,
                s1,
                nc2,
                a2,
                s2,
            },
        )
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        c: &ResCache<T>,
        dout: &Act<T>,
        g: &mut [T],
        st: Option<(&Act<T>, &mut Act<T>)>,
    ) -> Act<T> {
        let mut dx = match &self.skip {
            Some(sk) => sk.backward(p, &c.x, dout, g, true).unwrap(),
            None => dout.clone(),
        };
        let ds2 = self.c2.backward(p, &c.s2, dout, g, true).unwrap();
        let da2 = silu_backward(&c.a2, &ds2);
        let dh = self.n2.backward(p, &c.nc2, &da2, g);
        if let (Some(proj), Some((st, dst))) = (&self.temb, st) {
            let de = add_broadcast_backward(&dh);
            dst.add_assign(&proj.backward(p, st, &de, g, true).unwrap());
        }
        let ds1 = self.c1.backward(p, &c.s1, &dh, g, true).unwrap();
        let da1 = silu_backward(&c.a1, &ds1);
        dx.add_assign(&self.n1.backward(p, &c.nc1, &da1, g));
        dx
    }
}

#[derive(Debug, Clone)]
struct Layout {
    t1: Conv,
    t2: Conv,
    conv_in: Conv,
    cond_in: Conv,
    cres: Vec<ResBlock>,
    cdown: Vec<Conv>,
    down_res: Vec<ResBlock>,
    down_attn: Vec<Option<CrossAttention>>,
    down: Vec<Conv>,
    mid: ResBlock,
    up_res: Vec<ResBlock>,
    up_attn: Vec<Option<CrossAttention>>,
    up: Vec<Option<Conv>>,
    gn_out: GroupNorm,
    conv_out: Conv,
}

impl Layout {
    fn build(cfg: &NetConfig) -> Result<(Builder, Layout)> {
        cfg.validate()?;
        let mut b = Builder::default();
        let e = cfg.embed_dim;
        let d = cfg.depth;
        let c0 = cfg.base_channels;
        let t1 = b.conv("time.dense1", e, e, 1, 1);
        let t2 = b.conv("time.dense2", e, e, 1, 1);
        let cond_in = b.conv("cond.conv_in", 1, c0, 3, 1);
        let mut cres = Vec::new();
        let mut cdown = Vec::new();
        let mut prev = c0;
        for s in 0..d {
            let c = cfg.channels(s);
            cres.push(b.res(&format!("cond.{s}.res"), prev, c, None));
            if s + 1 < d {
                cdown.push(b.conv(&format!("cond.{s}.down"), c, c, 3, 2));
            }
            prev = c;
        }
        let conv_in = b.conv("conv_in", 1, c0, 3, 1);
        let mut down_res = Vec::new();
        let mut down_attn = Vec::new();
        let mut down = Vec::new();
        prev = c0;
        for s in 0..d {
            let c = cfg.channels(s);
            down_res.push(b.res(&format!("down.{s}.res"), prev, c, Some(e)));
            down_attn.push(
                cfg.attention_stages
                    .contains(&s)
                    .then(|| b.attn(&format!("down.{s}.attn"), c)),
            );
            if s + 1 < d {
                down.push(b.conv(&format!("down.{s}.down"), c, c, 3, 2));
            }
            prev = c;
        }
        let cd = cfg.channels(d - 1);
        let mid = b.res("mid.res", cd, cd, Some(e));
        let mut up_res = vec![None; d];
        let mut up_attn = vec![None; d];
        let mut up = vec![None; d];
        for s in (0..d).rev() {
            let c = cfg.channels(s);
            up_res[s] = Some(b.res(&format!("up.{s}.res"), 2 * c, c, Some(e)));
            up_attn[s] = cfg
                .attention_stages
                .contains(&s)
                .then(|| b.attn(&format!("up.{s}.attn"), c));
            if s > 0 {
                up[s] = Some(b.conv(&format!("up.{s}.up"), c, cfg.channels(s - 1), 3, 1));
            }
        }
        let gn_out = b.norm("out.norm", c0);
        let conv_out = b.zero_conv("out.conv", c0, 1, 3);
        let layout = Layout {
            t1,
            t2,
            conv_in,
            cond_in,
            cres,
            cdown,
            down_res,
            down_attn,
            down,
            mid,
            up_res: up_res.into_iter().map(Option::unwrap).collect(),
            up_attn,
            up,
            gn_out,
            conv_out,
        };
        Ok((b, layout))
    }
}

/// One forward pass worth of activations kept for the backward pass.
pub struct ForwardCache<T> {
    emb: Act<T>,
    e1: Act<T>,
    se1: Act<T>,
    temb: Act<T>,
    st: Act<T>,
    x: Act<T>,
    cond: Act<T>,
    cres: Vec<ResCache<T>>,
    cdown_in: Vec<Act<T>>,
    down_res: Vec<ResCache<T>>,
    down_attn: Vec<Option<AttnCache<T>>>,
    down_in: Vec<Act<T>>,
    mid: ResCache<T>,
    up_res: Vec<Option<ResCache<T>>>,
    up_attn: Vec<Option<AttnCache<T>>>,
    up_in: Vec<Option<Act<T>>>,
    out_nc: Option<NormCache<T>>,
    out_a: Option<Act<T>>,
    out_s: Option<Act<T>>,
}

/// Network inputs for a batch of windows, each `len` samples long.
#[derive(Debug, Clone)]
pub struct NetInput<'a, T> {
    pub x: &'a [T],
    pub cond: &'a [T],
    pub t: &'a [usize],
    pub len: usize,
}

impl<T> NetInput<'_, T> {
    pub fn batch(&self) -> usize {
        self.t.len()
    }
}

/// Loss value plus its gradient with respect to the network output and,
/// optionally, a direct gradient with respect to the parameters.
pub struct LossEval<T> {
    pub value: T,
    pub d_output: Vec<T>,
    pub d_params: Option<Vec<T>>,
}

pub struct Denoiser<T: Real> {
    config: NetConfig,
    params: Vec<T>,
    segments: Vec<Segment>,
    layout: Layout,
    calls: AtomicU64,
}

impl<T: Real> Clone for Denoiser<T> {
    fn clone(&self) -> Self {
        Denoiser {
            config: self.config.clone(),
            params: self.params.clone(),
            segments: self.segments.clone(),
            layout: self.layout.clone(),
            calls: AtomicU64::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> std::fmt::Debug for Denoiser<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .finish()
    }
}

impl<T: Real> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let (b, layout) = Layout::build(&config)?;
        let mut params = vec![T::zero(); b.total];
        for seg in &b.segments {
            let dst = &mut params[seg.offset..seg.offset + seg.len];
            match seg.init {
                Init::Zeros => {}
                Init::Ones => dst.fill(T::one()),
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in dst {
                        *v = T::lit(rng.random_range(-bound..bound));
                    }
                }
            }
        }
        Ok(Denoiser {
            config,
            params,
            segments: b.segments,
            layout,
            calls: AtomicU64::new(0),
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<T>) -> Result<Self> {
        let (b, layout) = Layout::build(&config)?;
        if params.len() != b.total {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                b.total,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter", None));
        }
        Ok(Denoiser {
            config,
            params,
            segments: b.segments,
            layout,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of windows pushed through `forward`/`forward_train` so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
            segments: self.segments.clone(),
            layout: self.layout.clone(),
            calls: AtomicU64::new(0),
        }
    }

    fn check_input(&self, inp: &NetInput<'_, T>) -> Result<()> {
        self.config.check_len(inp.len)?;
        let b = inp.batch();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if inp.x.len() != b * inp.len || inp.cond.len() != b * inp.len {
            return Err(Error::invalid(format!(
                "expected {} samples for {b} windows of {}, got x={} cond={}",
                b * inp.len,
                inp.len,
                inp.x.len(),
                inp.cond.len()
            )));
        }
        if inp.x.iter().chain(inp.cond).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite network input", None));
        }
        Ok(())
    }

    /// Predicts one output window per input window.
    pub fn forward(&self, inp: &NetInput<'_, T>) -> Result<Vec<T>> {
        Ok(self.forward_train(inp)?.0)
    }

    pub fn forward_train(&self, inp: &NetInput<'_, T>) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(inp)?;
        self.calls.fetch_add(inp.batch() as u64, Ordering::Relaxed);
        let p = &self.params[..];
        let ly = &self.layout;
        let (bsz, len, d) = (inp.batch(), inp.len, self.config.depth);
        let e = self.config.embed_dim;

        let mut emb = Act::zeros(e, bsz, 1);
        for (b, &t) in inp.t.iter().enumerate() {
            for (i, v) in sinusoidal_embed(t as f64, e)?.into_iter().enumerate() {
                emb.data[i * bsz + b] = T::lit(v);
            }
        }
        let e1 = ly.t1.forward(p, &emb);
        let se1 = silu(&e1);
        let temb = ly.t2.forward(p, &se1);
        let st = silu(&temb);

        let x = Act::from_vec(1, bsz, len, inp.x.to_vec());
        let cond = Act::from_vec(1, bsz, len, inp.cond.to_vec());

        let mut g = ly.cond_in.forward(p, &cond);
        let mut feats = Vec::with_capacity(d);
        let mut cres = Vec::with_capacity(d);
        let mut cdown_in = Vec::new();
        for s in 0..d {
            let (out, c) = ly.cres[s].forward(p, g, None);
            cres.push(c);
            if s + 1 < d {
                g = ly.cdown[s].forward(p, &out);
                cdown_in.push(out.clone());
            } else {
                g = out.clone();
            }
            feats.push(out);
        }

        let mut h = ly.conv_in.forward(p, &x);
        let mut down_res = Vec::with_capacity(d);
        let mut down_attn = Vec::with_capacity(d);
        let mut down_in = Vec::new();
        let mut skips = Vec::with_capacity(d);
        for s in 0..d {
            let (mut out, c) = ly.down_res[s].forward(p, h, Some(&st));
            down_res.push(c);
            down_attn.push(match &ly.down_attn[s] {
                Some(at) => {
                    let (o, ac) = at.forward(p, &out, &feats[s]);
                    out = o;
                    Some(ac)
                }
                None => None,
            });
            if s + 1 < d {
                h = ly.down[s].forward(p, &out);
                down_in.push(out.clone());
            } else {
                h = out.clone();
            }
            skips.push(out);
        }

        let (mut h, mid) = ly.mid.forward(p, h, Some(&st));

        let mut up_res: Vec<Option<ResCache<T>>> = (0..d).map(|_| None).collect();
        let mut up_attn: Vec<Option<AttnCache<T>>> = (0..d).map(|_| None).collect();
        let mut up_in: Vec<Option<Act<T>>> = (0..d).map(|_| None).collect();
        for s in (0..d).rev() {
            let hc = concat(&h, &skips[s]);
            let (mut out, c) = ly.up_res[s].forward(p, hc, Some(&st));
            up_res[s] = Some(c);
            if let Some(at) = &ly.up_attn[s] {
                let (o, ac) = at.forward(p, &out, &feats[s]);
                out = o;
                up_attn[s] = Some(ac);
            }
            h = match &ly.up[s] {
                Some(conv) => {
                    let u = upsample2(&out);
                    let y = conv.forward(p, &u);
                    up_in[s] = Some(u);
                    y
                }
                None => out,
            };
        }

        let (a, nc) = ly.gn_out.forward(p, &h);
        let sa = silu(&a);
        let out = ly.conv_out.forward(p, &sa);
        if !out.all_finite() {
            return Err(Error::numeric("non-finite network output", None));
        }
        let cache = ForwardCache {
            emb,
            e1,
            se1,
            temb,
            st,
            x,
            cond,
            cres,
            cdown_in,
            down_res,
            down_attn,
            down_in,
            mid,
            up_res,
            up_attn,
            up_in,
            out_nc: Some(nc),
            out_a: Some(a),
            out_s: Some(sa),
        };
        Ok((out.data, cache))
    }

    /// Adds the parameter gradient for output gradient `dout` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = &self.params[..];
        let ly = &self.layout;
        let d = self.config.depth;
        let (bsz, len) = (cache.x.b, cache.x.l);
        let g = grads;

        let dout = Act::from_vec(1, bsz, len, dout.to_vec());
        let sa = cache.out_s.as_ref().unwrap();
        let dsa = ly.conv_out.backward(p, sa, &dout, g, true).unwrap();
        let da = silu_backward(cache.out_a.as_ref().unwrap(), &dsa);
        let mut dh = ly.gn_out.backward(p, cache.out_nc.as_ref().unwrap(), &da, g);

        let mut dst = cache.st.same_shape();
        let mut dfeats: Vec<Option<Act<T>>> = (0..d).map(|_| None).collect();
        let mut dskips: Vec<Option<Act<T>>> = (0..d).map(|_| None).collect();
        let add_into = |slot: &mut Option<Act<T>>, v: Act<T>| match slot {
            Some(acc) => acc.add_assign(&v),
            None => *slot = Some(v),
        };

        for s in 0..d {
            if let Some(conv) = &ly.up[s] {
                let u = cache.up_in[s].as_ref().unwrap();
                let du = conv.backward(p, u, &dh, g, true).unwrap();
                dh = upsample2_backward(&du);
            }
            if let Some(at) = &ly.up_attn[s] {
                let (dx, dctx) = at.backward(p, cache.up_attn[s].as_ref().unwrap(), &dh, g);
                dh = dx;
                add_into(&mut dfeats[s], dctx);
            }
            let rc = cache.up_res[s].as_ref().unwrap();
            let dhc = ly.up_res[s].backward(p, rc, &dh, g, Some((&cache.st, &mut dst)));
            let c = self.config.channels(s);
            let (dprev, dskip) = split(&dhc, c);
            dh = dprev;
            dskips[s] = Some(dskip);
        }

        dh = ly.mid.backward(p, &cache.mid, &dh, g, Some((&cache.st, &mut dst)));

        for s in (0..d).rev() {
            if s + 1 < d {
                dh = ly.down[s].backward(p, &cache.down_in[s], &dh, g, true).unwrap();
            }
            dh.add_assign(dskips[s].as_ref().unwrap());
            if let Some(at) = &ly.down_attn[s] {
                let (dx, dctx) = at.backward(p, cache.down_attn[s].as_ref().unwrap(), &dh, g);
                dh = dx;
                add_into(&mut dfeats[s], dctx);
            }
            dh = ly.down_res[s].backward(p, &cache.down_res[s], &dh, g, Some((&cache.st, &mut dst)));
        }
        ly.conv_in.backward(p, &cache.x, &dh, g, false);

        let mut dg: Option<Act<T>> = None;
        for s in (0..d).rev() {
            if s + 1 < d {
                if let Some(dgv) = dg.take() {
                    dg = Some(ly.cdown[s].backward(p, &cache.cdown_in[s], &dgv, g, true).unwrap());
                }
            }
            if let Some(df) = dfeats[s].take() {
                add_into(&mut dg, df);
            }
            if let Some(dgv) = dg.take() {
                dg = Some(ly.cres[s].backward(p, &cache.cres[s], &dgv, g, None));
            }
        }
        if let Some(dgv) = dg {
            ly.cond_in.backward(p, &cache.cond, &dgv, g, false);
        }

        let dtemb = silu_backward(&cache.temb, &dst);
        let dse1 = ly.t2.backward(p, &cache.se1, &dtemb, g, true).unwrap();
        let de1 = silu_backward(&cache.e1, &dse1);
        ly.t1.backward(p, &cache.emb, &de1, g, false);
    }

    /// Evaluates `loss_fn` on the network output and returns the loss with
    /// its full parameter gradient.
    pub fn loss_gradient<F>(&self, inp: &NetInput<'_, T>, loss_fn: F) -> Result<(T, Vec<T>)>
    where
        F: FnOnce(&[T], &[T]) -> LossEval<T>,
    {
        let (out, cache) = self.forward_train(inp)?;
        let eval = loss_fn(&out, &self.params);
        if !eval.value.is_finite() {
            return Err(Error::numeric("non-finite loss", None));
        }
        let mut grads = eval.d_params.unwrap_or_else(|| vec![T::zero(); self.params.len()]);
        if grads.len() != self.params.len() || eval.d_output.len() != out.len() {
            return Err(Error::invalid("loss gradient has the wrong shape"));
        }
        if eval.d_output.iter().any(|v| *v != T::zero()) {
            self.backward(&cache, &eval.d_output, &mut grads);
        }
        Ok((eval.value, grads))
    }
}

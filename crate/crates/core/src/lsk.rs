//! The large selective kernel module.
//!
//! Given `x` with `C` channels and a plan of `N` kernels:
//!
//! ```text
//! U_0 = x,  U_i = dw_i(U_{i-1})                 serial depthwise chain
//! Ũ_i = proj_i(U_i)                              1x1, C -> C
//! P   = channel_pool([Ũ_1; ...; Ũ_N])            avg and/or max over N*C channels
//! Â   = select(P)                                dense s x s conv, |P| -> N
//! A_i = sigmoid(Â_i)                             one spatial mask per branch
//! S   = fuse(Σ_i A_i ⊙ Ũ_i)                      1x1, C -> C
//! y   = x ⊙ S
//! ```
//!
//! The channel-selection modes replace or follow the spatial masks with a
//! per-channel softmax over branches computed from globally pooled features.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{
    channel_pool, channel_pool_vjp, conv2d_forward, conv2d_vjp, gelu, gelu_vjp, global_avg_pool,
    global_avg_pool_vjp, sigmoid, sigmoid_vjp, ConvKind, ConvWeights, PoolMode,
};
use crate::params::{join, Init, Params};
use crate::plan::DecompositionPlan;
use crate::rng::SplitMix64;
use crate::tensor::{channel_sum, concat_channels, gate_by_map, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Per-pixel sigmoid masks (the LSK design).
    Spatial,
    /// Per-channel softmax over branches from global pooling.
    Channel,
    /// Spatial masks first, then channel softmax over the masked branches.
    SpatialChannel,
    /// Every branch weighted by one.
    None,
}

impl SelectionMode {
    pub fn spatial(self) -> bool {
        matches!(self, SelectionMode::Spatial | SelectionMode::SpatialChannel)
    }

    pub fn channel(self) -> bool {
        matches!(self, SelectionMode::Channel | SelectionMode::SpatialChannel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LskConfig {
    pub channels: usize,
    #[serde(default)]
    pub plan: DecompositionPlan,
    #[serde(default = "default_selection_kernel")]
    pub selection_kernel: usize,
    #[serde(default = "default_selection_mode")]
    pub selection_mode: SelectionMode,
    #[serde(default = "default_pooling")]
    pub pooling: PoolMode,
}

fn default_selection_kernel() -> usize {
    7
}
fn default_selection_mode() -> SelectionMode {
    SelectionMode::Spatial
}
fn default_pooling() -> PoolMode {
    PoolMode::Both
}

impl LskConfig {
    pub fn new(channels: usize) -> Self {
        LskConfig {
            channels,
            plan: DecompositionPlan::default_lsk(),
            selection_kernel: 7,
            selection_mode: SelectionMode::Spatial,
            pooling: PoolMode::Both,
        }
    }

    pub fn with_plan(mut self, plan: DecompositionPlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn with_mode(mut self, mode: SelectionMode) -> Self {
        self.selection_mode = mode;
        self
    }

    pub fn with_pooling(mut self, pooling: PoolMode) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_selection_kernel(mut self, k: usize) -> Self {
        self.selection_kernel = k;
        self
    }

    pub fn branches(&self) -> usize {
        self.plan.len()
    }

    /// Hidden width of the channel-selection squeeze, `max(C / 4, 1)`.
    pub fn bottleneck(&self) -> usize {
        (self.channels / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels >= 1, "LSK channels must be positive");
        ensure!(
            self.selection_kernel % 2 == 1,
            "selection kernel must be odd, got {}",
            self.selection_kernel
        );
        Ok(())
    }
}

/// Weights for the channel-selection squeeze/expand pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSelectWeights {
    /// 1x1, `C -> bottleneck`.
    pub squeeze: ConvWeights,
    /// 1x1, `bottleneck -> N * C`; branch `i` owns output band `i`.
    pub expand: ConvWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LskWeights {
    pub dw: Vec<ConvWeights>,
    pub proj: Vec<ConvWeights>,
    /// Present for spatial modes.
    pub select: Option<ConvWeights>,
    /// Present for channel modes.
    pub channel: Option<ChannelSelectWeights>,
    pub fuse: ConvWeights,
}

impl LskWeights {
    pub fn zeros(cfg: &LskConfig) -> Self {
        let c = cfg.channels;
        let n = cfg.branches();
        LskWeights {
            dw: cfg.plan.specs().iter().map(|s| ConvWeights::depthwise(c, s.k, s.d)).collect(),
            proj: (0..n).map(|_| ConvWeights::pointwise(c, c)).collect(),
            select: cfg
                .selection_mode
                .spatial()
                .then(|| ConvWeights::dense(cfg.pooling.channels(), n, cfg.selection_kernel)),
            channel: cfg.selection_mode.channel().then(|| ChannelSelectWeights {
                squeeze: ConvWeights::pointwise(c, cfg.bottleneck()),
                expand: ConvWeights::pointwise(cfg.bottleneck(), n * c),
            }),
            fuse: ConvWeights::pointwise(c, c),
        }
    }

    pub fn init(cfg: &LskConfig, rng: &mut SplitMix64, init: Init) -> Self {
        let mut w = Self::zeros(cfg);
        w.visit_convs_mut(&mut |cw| *cw = init.conv(cw.clone(), rng));
        w
    }

    fn visit_convs_mut(&mut self, f: &mut dyn FnMut(&mut ConvWeights)) {
        self.dw.iter_mut().for_each(&mut *f);
        self.proj.iter_mut().for_each(&mut *f);
        if let Some(s) = &mut self.select {
            f(s);
        }
        if let Some(ch) = &mut self.channel {
            f(&mut ch.squeeze);
            f(&mut ch.expand);
        }
        f(&mut self.fuse);
    }

    /// Check that the weights have the layout `cfg` implies.
    pub fn validate(&self, cfg: &LskConfig) -> Result<()> {
        cfg.validate()?;
        let want = LskWeights::zeros(cfg);
        ensure!(
            self.dw.len() == want.dw.len() && self.proj.len() == want.proj.len(),
            "LSK weights have {} depthwise / {} projection layers, config needs {}",
            self.dw.len(),
            self.proj.len(),
            want.dw.len()
        );
        let same = |a: &ConvWeights, b: &ConvWeights, role: &str| -> Result<()> {
            a.validate()?;
            ensure!(
                a.kind == b.kind
                    && a.k == b.k
                    && a.dilation == b.dilation
                    && a.stride == b.stride
                    && a.in_channels == b.in_channels
                    && a.out_channels == b.out_channels,
                "LSK weight {role} has layout {:?} k={} d={} {}->{}, config needs {:?} k={} d={} {}->{}",
                a.kind,
                a.k,
                a.dilation,
                a.in_channels,
                a.out_channels,
                b.kind,
                b.k,
                b.dilation,
                b.in_channels,
                b.out_channels
            );
            Ok(())
        };
        for (i, (a, b)) in self.dw.iter().zip(&want.dw).enumerate() {
            same(a, b, &format!("dw.{i}"))?;
        }
        for (i, (a, b)) in self.proj.iter().zip(&want.proj).enumerate() {
            same(a, b, &format!("proj.{i}"))?;
        }
        match (&self.select, &want.select) {
            (Some(a), Some(b)) => same(a, b, "select")?,
            (None, None) => {}
            _ => return Err(Error::contract("LSK select weights present/absent contrary to selection mode")),
        }
        match (&self.channel, &want.channel) {
            (Some(a), Some(b)) => {
                same(&a.squeeze, &b.squeeze, "channel.squeeze")?;
                same(&a.expand, &b.expand, "channel.expand")?;
            }
            (None, None) => {}
            _ => return Err(Error::contract("LSK channel weights present/absent contrary to selection mode")),
        }
        same(&self.fuse, &want.fuse, "fuse")
    }
}

impl Params for LskWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (i, w) in self.dw.iter().enumerate() {
            w.visit(&join(prefix, &format!("dw.{i}")), f);
        }
        for (i, w) in self.proj.iter().enumerate() {
            w.visit(&join(prefix, &format!("proj.{i}")), f);
        }
        if let Some(s) = &self.select {
            s.visit(&join(prefix, "select"), f);
        }
        if let Some(ch) = &self.channel {
            ch.squeeze.visit(&join(prefix, "channel.squeeze"), f);
            ch.expand.visit(&join(prefix, "channel.expand"), f);
        }
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, w) in self.dw.iter_mut().enumerate() {
            w.visit_mut(&join(prefix, &format!("dw.{i}")), f);
        }
        for (i, w) in self.proj.iter_mut().enumerate() {
            w.visit_mut(&join(prefix, &format!("proj.{i}")), f);
        }
        if let Some(s) = &mut self.select {
            s.visit_mut(&join(prefix, "select"), f);
        }
        if let Some(ch) = &mut self.channel {
            ch.squeeze.visit_mut(&join(prefix, "channel.squeeze"), f);
            ch.expand.visit_mut(&join(prefix, "channel.expand"), f);
        }
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
    }
}

/// Spatial selection masks produced by one module invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionTrace {
    /// One `(batch, 1, H, W)` sigmoid map per branch; empty for non-spatial modes.
    pub maps: Vec<Tensor>,
    /// Receptive field of each branch.
    pub rf: Vec<usize>,
}

struct ChannelCache {
    /// Σ_i V_i.
    sum: Tensor,
    pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    /// Softmax weights per branch, each `(batch, C, 1, 1)`.
    weights: Vec<Tensor>,
}

struct Cache {
    /// `U_0..U_N`.
    u: Vec<Tensor>,
    proj: Vec<Tensor>,
    cat: Option<Tensor>,
    pooled: Option<Tensor>,
    logits: Option<Tensor>,
    masks: Vec<Tensor>,
    /// Branch features entering the channel stage (masked when spatial is on).
    gated: Vec<Tensor>,
    channel: Option<ChannelCache>,
    mix: Tensor,
    s: Tensor,
}

/// Multiply each `(n, c)` plane of `x` by the scalar `a[n, c, 0, 0]`.
fn gate_by_channel(x: &Tensor, a: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = a.at(n, c, 0, 0);
            for v in out.plane_mut(n, c) {
                *v *= g;
            }
        }
    }
    out
}

/// `out[n, c] = Σ_hw x * y`, shape `(N, C, 1, 1)`.
fn plane_dot(x: &Tensor, y: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros([s.n, s.c, 1, 1]);
    for n in 0..s.n {
        for c in 0..s.c {
            let d: f64 = x.plane(n, c).iter().zip(y.plane(n, c)).map(|(a, b)| a * b).sum();
            out.set(n, c, 0, 0, d);
        }
    }
    out
}

/// Softmax across branches. `logits` is `(batch, N * C, 1, 1)` with branch
/// `i` in channels `i*C..(i+1)*C`; returns one `(batch, C, 1, 1)` per branch.
fn branch_softmax(logits: &Tensor, branches: usize, channels: usize) -> Vec<Tensor> {
    let batch = logits.shape().n;
    let mut out = vec![Tensor::zeros([batch, channels, 1, 1]); branches];
    for n in 0..batch {
        for c in 0..channels {
            let m = (0..branches).map(|i| logits.at(n, i * channels + c, 0, 0)).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..branches).map(|i| (logits.at(n, i * channels + c, 0, 0) - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for (i, ei) in e.into_iter().enumerate() {
                out[i].set(n, c, 0, 0, ei / z);
            }
        }
    }
    out
}

fn check_input(x: &Tensor, cfg: &LskConfig, w: &LskWeights) -> Result<()> {
    w.validate(cfg)?;
    ensure!(
        x.shape().c == cfg.channels,
        "LSK module configured for {} channels, input is {}",
        cfg.channels,
        x.shape()
    );
    Ok(())
}

fn forward_cached(x: &Tensor, cfg: &LskConfig, w: &LskWeights) -> Result<Cache> {
    check_input(x, cfg, w)?;
    let n_br = cfg.branches();
    let mut u = Vec::with_capacity(n_br + 1);
    u.push(x.clone());
    for dw in &w.dw {
        let next = conv2d_forward(u.last().unwrap(), dw)?;
        u.push(next);
    }
    let proj: Vec<Tensor> = w.proj.iter().zip(&u[1..]).map(|(p, ui)| conv2d_forward(ui, p)).collect::<Result<_>>()?;

    let (mut cat, mut pooled, mut logits, mut masks) = (None, None, None, Vec::new());
    let gated: Vec<Tensor> = if let Some(sel) = w.select.as_ref().filter(|_| cfg.selection_mode.spatial()) {
        let refs: Vec<&Tensor> = proj.iter().collect();
        let c = concat_channels(&refs)?;
        let p = channel_pool(&c, cfg.pooling)?;
        let l = conv2d_forward(&p, sel)?;
        for i in 0..n_br {
            masks.push(sigmoid(&l.slice_channels(i, 1)?));
        }
        let g = proj.iter().zip(&masks).map(|(t, m)| gate_by_map(t, m)).collect::<Result<_>>()?;
        cat = Some(c);
        pooled = Some(p);
        logits = Some(l);
        g
    } else {
        proj.clone()
    };

    let mut channel = None;
    let mix = if let Some(ch) = w.channel.as_ref().filter(|_| cfg.selection_mode.channel()) {
        let mut sum = gated[0].clone();
        for g in &gated[1..] {
            sum.add_assign(g)?;
        }
        let pooled_c = global_avg_pool(&sum)?;
        let hidden_pre = conv2d_forward(&pooled_c, &ch.squeeze)?;
        let hidden = gelu(&hidden_pre);
        let lg = conv2d_forward(&hidden, &ch.expand)?;
        let weights = branch_softmax(&lg, n_br, cfg.channels);
        let mut mix = Tensor::zeros(x.shape());
        for (g, a) in gated.iter().zip(&weights) {
            mix.add_assign(&gate_by_channel(g, a))?;
        }
        channel = Some(ChannelCache { sum, pooled: pooled_c, hidden_pre, hidden, weights });
        mix
    } else {
        let mut mix = gated[0].clone();
        for g in &gated[1..] {
            mix.add_assign(g)?;
        }
        mix
    };
    let s = conv2d_forward(&mix, &w.fuse)?;
    Ok(Cache { u, proj, cat, pooled, logits, masks, gated, channel, mix, s })
}

/// Run the module, returning the output and the per-branch selection masks.
pub fn lsk_forward(x: &Tensor, cfg: &LskConfig, w: &LskWeights) -> Result<(Tensor, SelectionTrace)> {
    let cache = forward_cached(x, cfg, w)?;
    let y = x.mul(&cache.s)?;
    Ok((y, SelectionTrace { maps: cache.masks, rf: cfg.plan.prefix_rf().to_vec() }))
}

/// Gradients of `<upstream, lsk_forward(x)>`.
#[derive(Clone, Debug)]
pub struct LskGrads {
    pub input: Tensor,
    pub weights: LskWeights,
}

pub fn lsk_vjp(x: &Tensor, cfg: &LskConfig, w: &LskWeights, upstream: &Tensor) -> Result<LskGrads> {
    let cache = forward_cached(x, cfg, w)?;
    if upstream.shape() != x.shape() {
        return Err(Error::shape_mismatch("lsk_vjp upstream", upstream.shape(), x.shape()));
    }
    let n_br = cfg.branches();
    let mut gw = LskWeights::zeros(cfg);

    // y = x ⊙ S
    let mut gx = upstream.mul(&cache.s)?;
    let gs = upstream.mul(x)?;

    let fv = conv2d_vjp(&cache.mix, &w.fuse, &gs)?;
    gw.fuse = fv.weights;
    let gmix = fv.input;

    // Gradient w.r.t. each gated branch feature.
    let mut ggated: Vec<Tensor> = Vec::with_capacity(n_br);
    if let (Some(ch), Some(cc)) = (&w.channel, &cache.channel) {
        let mut ga_logits = Tensor::zeros([x.shape().n, n_br * cfg.channels, 1, 1]);
        let gweights: Vec<Tensor> = cache.gated.iter().map(|g| plane_dot(&gmix, g)).collect();
        ggated.extend(cc.weights.iter().map(|a| gate_by_channel(&gmix, a)));
        // Softmax VJP: dl_i = a_i (g_i - Σ_j a_j g_j).
        let s = x.shape();
        for n in 0..s.n {
            for c in 0..cfg.channels {
                let dotsum: f64 = (0..n_br).map(|i| cc.weights[i].at(n, c, 0, 0) * gweights[i].at(n, c, 0, 0)).sum();
                for i in 0..n_br {
                    let a = cc.weights[i].at(n, c, 0, 0);
                    ga_logits.set(n, i * cfg.channels + c, 0, 0, a * (gweights[i].at(n, c, 0, 0) - dotsum));
                }
            }
        }
        let ev = conv2d_vjp(&cc.hidden, &ch.expand, &ga_logits)?;
        let ghidden_pre = gelu_vjp(&cc.hidden_pre, &ev.input)?;
        let sv = conv2d_vjp(&cc.pooled, &ch.squeeze, &ghidden_pre)?;
        let gsum = global_avg_pool_vjp(&cc.sum, &sv.input)?;
        for g in &mut ggated {
            g.add_assign(&gsum)?;
        }
        gw.channel = Some(ChannelSelectWeights { squeeze: sv.weights, expand: ev.weights });
    } else {
        ggated = vec![gmix; n_br];
    }

    // Gradient w.r.t. each projected feature Ũ_i.
    let mut gproj: Vec<Tensor>;
    if let (Some(sel), Some(cat), Some(pooled), Some(logits)) = (&w.select, &cache.cat, &cache.pooled, &cache.logits)
    {
        gproj = Vec::with_capacity(n_br);
        let mut glogits_parts = Vec::with_capacity(n_br);
        for i in 0..n_br {
            gproj.push(gate_by_map(&ggated[i], &cache.masks[i])?);
            let gmask = channel_sum(&ggated[i].mul(&cache.proj[i])?);
            glogits_parts.push(sigmoid_vjp(&logits.slice_channels(i, 1)?, &gmask)?);
        }
        let refs: Vec<&Tensor> = glogits_parts.iter().collect();
        let glogits = concat_channels(&refs)?;
        let sv = conv2d_vjp(pooled, sel, &glogits)?;
        gw.select = Some(sv.weights);
        let gcat = channel_pool_vjp(cat, cfg.pooling, &sv.input)?;
        for (i, gp) in gproj.iter_mut().enumerate() {
            gp.add_assign(&gcat.slice_channels(i * cfg.channels, cfg.channels)?)?;
        }
    } else {
        gproj = ggated;
    }

    // Projections and the serial depthwise chain, in reverse.
    let mut gu_next: Option<Tensor> = None;
    for i in (0..n_br).rev() {
        let pv = conv2d_vjp(&cache.u[i + 1], &w.proj[i], &gproj[i])?;
        gw.proj[i] = pv.weights;
        let mut gu = pv.input;
        if let Some(g) = gu_next.take() {
            gu.add_assign(&g)?;
        }
        let dv = conv2d_vjp(&cache.u[i], &w.dw[i], &gu)?;
        gw.dw[i] = dv.weights;
        gu_next = Some(dv.input);
    }
    gx.add_assign(&gu_next.expect("plans have at least one branch"))?;
    Ok(LskGrads { input: gx, weights: gw })
}

/// The channel-selection ablation: identical to [`lsk_forward`] with the
/// mode forced to [`SelectionMode::Channel`].
pub fn channel_selection_forward(x: &Tensor, cfg: &LskConfig, w: &LskWeights) -> Result<Tensor> {
    let cfg = cfg.clone().with_mode(SelectionMode::Channel);
    lsk_forward(x, &cfg, w).map(|(y, _)| y)
}

/// Per-channel branch weights chosen by the channel-selection stage, one
/// `(batch, C, 1, 1)` tensor per branch. Errors if the mode has no channel stage.
pub fn channel_selection_weights(x: &Tensor, cfg: &LskConfig, w: &LskWeights) -> Result<Vec<Tensor>> {
    ensure!(cfg.selection_mode.channel(), "selection mode {:?} has no channel stage", cfg.selection_mode);
    let cache = forward_cached(x, cfg, w)?;
    Ok(cache.channel.expect("channel stage ran").weights)
}

/// Depthwise chain only: `U_1..U_N` for an input. Used by receptive-field probes.
pub fn depthwise_chain(x: &Tensor, dw: &[ConvWeights]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(dw.len());
    let mut cur = x.clone();
    for w in dw {
        ensure!(w.kind == ConvKind::Depthwise, "depthwise_chain given a dense conv");
        cur = conv2d_forward(&cur, w)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Measured square support of a unit impulse pushed through the depthwise
/// chain with all-ones weights. Returns the side length of the nonzero region
/// after each branch, or `None` where that region is not a solid square.
pub fn impulse_support(plan: &DecompositionPlan) -> Result<Vec<Option<usize>>> {
    let rf = plan.receptive_field();
    let size = rf + 4;
    let centre = size / 2;
    let mut x = Tensor::zeros([1, 1, size, size]);
    x.set(0, 0, centre, centre, 1.0);
    let dw: Vec<ConvWeights> = plan
        .specs()
        .iter()
        .map(|s| {
            let mut w = ConvWeights::depthwise(1, s.k, s.d).without_bias();
            w.weight.data_mut().fill(1.0);
            w
        })
        .collect();
    let outs = depthwise_chain(&x, &dw)?;
    Ok(outs.iter().map(|t| square_support(t, Shape::new(1, 1, size, size))).collect())
}

fn square_support(t: &Tensor, s: Shape) -> Option<usize> {
    let (mut y0, mut y1, mut x0, mut x1, mut count) = (usize::MAX, 0, usize::MAX, 0, 0usize);
    for y in 0..s.h {
        for x in 0..s.w {
            if t.at(0, 0, y, x) != 0.0 {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
                count += 1;
            }
        }
    }
    if count == 0 {
        return None;
    }
    let (hh, ww) = (y1 - y0 + 1, x1 - x0 + 1);
    (hh == ww && count == hh * ww).then_some(hh)
}

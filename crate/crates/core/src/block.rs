//! The LSK block: a kernel-selection sub-block and a feed-forward sub-block,
//! each wrapped in a residual connection.
//!
//! ```text
//! x1 = x  + post(LSK(gelu(pre(norm1(x)))))
//! y  = x1 + fc2(gelu(dw3x3(fc1(norm2(x1)))))
//! ```
//!
//! `pre`/`post` are 1x1 `C -> C`; `fc1` expands to `r * C`, `fc2` contracts back.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::lsk::{lsk_forward, lsk_vjp, LskConfig, LskWeights, SelectionTrace};
use crate::nn::{conv2d_forward, conv2d_vjp, gelu, gelu_vjp, residual_add, Affine, ConvWeights};
use crate::params::{join, Init, Params};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub lsk: LskConfig,
    #[serde(default = "default_ffn_ratio")]
    pub ffn_ratio: usize,
}

fn default_ffn_ratio() -> usize {
    4
}

impl BlockConfig {
    pub fn new(lsk: LskConfig) -> Self {
        BlockConfig { lsk, ffn_ratio: 4 }
    }

    pub fn with_ffn_ratio(mut self, r: usize) -> Self {
        self.ffn_ratio = r;
        self
    }

    pub fn channels(&self) -> usize {
        self.lsk.channels
    }

    pub fn hidden(&self) -> usize {
        self.ffn_ratio * self.lsk.channels
    }

    pub fn validate(&self) -> Result<()> {
        self.lsk.validate()?;
        ensure!(self.ffn_ratio >= 1, "FFN expansion ratio must be >= 1, got {}", self.ffn_ratio);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub norm1: Affine,
    pub pre: ConvWeights,
    pub lsk: LskWeights,
    pub post: ConvWeights,
    pub norm2: Affine,
    pub fc1: ConvWeights,
    pub ffn_dw: ConvWeights,
    pub fc2: ConvWeights,
}

impl BlockWeights {
    /// All-zero weights, including the norm scales.
    pub fn zeros(cfg: &BlockConfig) -> Self {
        let c = cfg.channels();
        let h = cfg.hidden();
        BlockWeights {
            norm1: Affine::zeros(c),
            pre: ConvWeights::pointwise(c, c),
            lsk: LskWeights::zeros(&cfg.lsk),
            post: ConvWeights::pointwise(c, c),
            norm2: Affine::zeros(c),
            fc1: ConvWeights::pointwise(c, h),
            ffn_dw: ConvWeights::depthwise(h, 3, 1),
            fc2: ConvWeights::pointwise(h, c),
        }
    }

    pub fn init(cfg: &BlockConfig, rng: &mut SplitMix64, init: Init) -> Self {
        let z = Self::zeros(cfg);
        let c = cfg.channels();
        BlockWeights {
            norm1: init.affine(c, rng),
            pre: init.conv(z.pre, rng),
            lsk: LskWeights::init(&cfg.lsk, rng, init),
            post: init.conv(z.post, rng),
            norm2: init.affine(c, rng),
            fc1: init.conv(z.fc1, rng),
            ffn_dw: init.conv(z.ffn_dw, rng),
            fc2: init.conv(z.fc2, rng),
        }
    }
}

impl Params for BlockWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.pre.visit(&join(prefix, "pre"), f);
        self.lsk.visit(&join(prefix, "lsk"), f);
        self.post.visit(&join(prefix, "post"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.ffn_dw.visit(&join(prefix, "ffn_dw"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.pre.visit_mut(&join(prefix, "pre"), f);
        self.lsk.visit_mut(&join(prefix, "lsk"), f);
        self.post.visit_mut(&join(prefix, "post"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.ffn_dw.visit_mut(&join(prefix, "ffn_dw"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

struct BlockCache {
    n1: Tensor,
    pre: Tensor,
    act: Tensor,
    lsk: Tensor,
    x1: Tensor,
    n2: Tensor,
    f1: Tensor,
    f2: Tensor,
    g: Tensor,
    y: Tensor,
    trace: SelectionTrace,
}

fn forward_cached(x: &Tensor, cfg: &BlockConfig, w: &BlockWeights) -> Result<BlockCache> {
    cfg.validate()?;
    ensure!(
        x.shape().c == cfg.channels(),
        "LSK block configured for {} channels, input is {}",
        cfg.channels(),
        x.shape()
    );
    let n1 = w.norm1.forward(x)?;
    let pre = conv2d_forward(&n1, &w.pre)?;
    let act = gelu(&pre);
    let (lsk, trace) = lsk_forward(&act, &cfg.lsk, &w.lsk)?;
    let x1 = residual_add(x, &conv2d_forward(&lsk, &w.post)?)?;
    let n2 = w.norm2.forward(&x1)?;
    let f1 = conv2d_forward(&n2, &w.fc1)?;
    let f2 = conv2d_forward(&f1, &w.ffn_dw)?;
    let g = gelu(&f2);
    let y = residual_add(&x1, &conv2d_forward(&g, &w.fc2)?)?;
    Ok(BlockCache { n1, pre, act, lsk, x1, n2, f1, f2, g, y, trace })
}

pub fn lsk_block_forward(x: &Tensor, cfg: &BlockConfig, w: &BlockWeights) -> Result<Tensor> {
    Ok(forward_cached(x, cfg, w)?.y)
}

/// Forward pass that also returns the block's selection masks.
pub fn lsk_block_forward_traced(x: &Tensor, cfg: &BlockConfig, w: &BlockWeights) -> Result<(Tensor, SelectionTrace)> {
    let c = forward_cached(x, cfg, w)?;
    Ok((c.y, c.trace))
}

#[derive(Clone, Debug)]
pub struct BlockGrads {
    pub input: Tensor,
    pub weights: BlockWeights,
}

pub fn lsk_block_vjp(x: &Tensor, cfg: &BlockConfig, w: &BlockWeights, upstream: &Tensor) -> Result<BlockGrads> {
    let c = forward_cached(x, cfg, w)?;
    if upstream.shape() != c.y.shape() {
        return Err(crate::Error::shape_mismatch("lsk_block_vjp upstream", upstream.shape(), c.y.shape()));
    }
    let mut gw = BlockWeights::zeros(cfg);

    // FFN sub-block.
    let v = conv2d_vjp(&c.g, &w.fc2, upstream)?;
    gw.fc2 = v.weights;
    let gf2 = gelu_vjp(&c.f2, &v.input)?;
    let v = conv2d_vjp(&c.f1, &w.ffn_dw, &gf2)?;
    gw.ffn_dw = v.weights;
    let v = conv2d_vjp(&c.n2, &w.fc1, &v.input)?;
    gw.fc1 = v.weights;
    let (gx1_norm, gn2) = w.norm2.vjp(&c.x1, &v.input)?;
    gw.norm2 = gn2;
    let mut gx1 = upstream.clone();
    gx1.add_assign(&gx1_norm)?;

    // Kernel-selection sub-block.
    let v = conv2d_vjp(&c.lsk, &w.post, &gx1)?;
    gw.post = v.weights;
    let lg = lsk_vjp(&c.act, &cfg.lsk, &w.lsk, &v.input)?;
    gw.lsk = lg.weights;
    let gpre = gelu_vjp(&c.pre, &lg.input)?;
    let v = conv2d_vjp(&c.n1, &w.pre, &gpre)?;
    gw.pre = v.weights;
    let (gx_norm, gn1) = w.norm1.vjp(x, &v.input)?;
    gw.norm1 = gn1;
    let mut gx = gx1;
    gx.add_assign(&gx_norm)?;
    Ok(BlockGrads { input: gx, weights: gw })
}

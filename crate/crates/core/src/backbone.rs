//! Four-stage LSKNet backbones.
//!
//! ```text
//! stem:    conv3x3/2 (3 -> C1/2), norm, GELU
//! stage i: conv3x3/2 (C_{i-1} -> C_i), norm, D_i LSK blocks, norm  -> feature i
//! ```
//!
//! Stage 1's downsampling conv is the second half of the stem, so features
//! come out at strides 4, 8, 16 and 32.

use serde::{Deserialize, Serialize};

use crate::block::{lsk_block_forward_traced, lsk_block_vjp, BlockConfig, BlockWeights};
use crate::error::{ensure, Error, Result};
use crate::lsk::{LskConfig, SelectionMode, SelectionTrace};
use crate::nn::{conv2d_forward, conv2d_vjp, gelu, gelu_vjp, Affine, ConvWeights, PoolMode};
use crate::params::{join, Init, Params};
use crate::plan::DecompositionPlan;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

pub const STAGES: usize = 4;
pub const STRIDES: [usize; STAGES] = [4, 8, 16, 32];
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub channels: [usize; STAGES],
    pub depths: [usize; STAGES],
    #[serde(default)]
    pub plan: DecompositionPlan,
    #[serde(default = "default_ratios")]
    pub ffn_ratios: [usize; STAGES],
    #[serde(default = "default_kernel_7")]
    pub selection_kernel: usize,
    #[serde(default = "default_mode")]
    pub selection_mode: SelectionMode,
    #[serde(default = "default_pooling")]
    pub pooling: PoolMode,
    #[serde(default = "default_kernel_3")]
    pub stem_kernel: usize,
    #[serde(default = "default_kernel_3")]
    pub downsample_kernel: usize,
}

fn default_ratios() -> [usize; STAGES] {
    [4; STAGES]
}
fn default_kernel_7() -> usize {
    7
}
fn default_kernel_3() -> usize {
    3
}
fn default_mode() -> SelectionMode {
    SelectionMode::Spatial
}
fn default_pooling() -> PoolMode {
    PoolMode::Both
}

impl BackboneConfig {
    pub fn new(channels: [usize; STAGES], depths: [usize; STAGES]) -> Self {
        BackboneConfig {
            channels,
            depths,
            plan: DecompositionPlan::default_lsk(),
            ffn_ratios: default_ratios(),
            selection_kernel: 7,
            selection_mode: SelectionMode::Spatial,
            pooling: PoolMode::Both,
            stem_kernel: 3,
            downsample_kernel: 3,
        }
    }

    pub fn lsknet_t() -> Self {
        Self::new([32, 64, 160, 256], [3, 3, 5, 2])
    }

    pub fn lsknet_s() -> Self {
        Self::new([64, 128, 320, 512], [2, 2, 4, 2])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "lsknet-t" | "lsknet_t" | "t" => Ok(Self::lsknet_t()),
            "lsknet-s" | "lsknet_s" | "s" => Ok(Self::lsknet_s()),
            other => Err(Error::contract(format!("unknown preset {other:?}; expected lsknet-t or lsknet-s"))),
        }
    }

    pub fn stem_width(&self) -> usize {
        (self.channels[0] / 2).max(1)
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        let lsk = LskConfig {
            channels: self.channels[stage],
            plan: self.plan.clone(),
            selection_kernel: self.selection_kernel,
            selection_mode: self.selection_mode,
            pooling: self.pooling,
        };
        BlockConfig::new(lsk).with_ffn_ratio(self.ffn_ratios[stage])
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..STAGES {
            ensure!(self.channels[i] >= 1, "stage {} channels must be positive", i + 1);
            ensure!(self.depths[i] >= 1, "stage {} depth must be >= 1, got {}", i + 1, self.depths[i]);
            self.block_config(i).validate()?;
        }
        ensure!(
            self.stem_kernel % 2 == 1 && self.downsample_kernel % 2 == 1,
            "stem and downsample kernels must be odd"
        );
        Ok(())
    }

    /// Total number of LSK blocks.
    pub fn blocks(&self) -> usize {
        self.depths.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageWeights {
    pub down: ConvWeights,
    pub down_norm: Affine,
    pub blocks: Vec<BlockWeights>,
    pub out_norm: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    pub stem: ConvWeights,
    pub stem_norm: Affine,
    pub stages: Vec<StageWeights>,
}

impl BackboneWeights {
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        Self::build(cfg, &mut |w| w, &mut Affine::zeros, &mut |bc| BlockWeights::zeros(bc))
    }

    pub fn init(cfg: &BackboneConfig, rng: &mut SplitMix64, init: Init) -> Self {
        let rng = std::cell::RefCell::new(rng);
        Self::build(
            cfg,
            &mut |w| init.conv(w, &mut rng.borrow_mut()),
            &mut |c| init.affine(c, &mut rng.borrow_mut()),
            &mut |bc| BlockWeights::init(bc, &mut rng.borrow_mut(), init),
        )
    }

    fn build(
        cfg: &BackboneConfig,
        conv: &mut dyn FnMut(ConvWeights) -> ConvWeights,
        norm: &mut dyn FnMut(usize) -> Affine,
        block: &mut dyn FnMut(&BlockConfig) -> BlockWeights,
    ) -> Self {
        let stem_w = cfg.stem_width();
        let stem = conv(ConvWeights::dense(INPUT_CHANNELS, stem_w, cfg.stem_kernel).with_stride(2));
        let stem_norm = norm(stem_w);
        let mut stages = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let (cin, k) = if i == 0 { (stem_w, cfg.stem_kernel) } else { (cfg.channels[i - 1], cfg.downsample_kernel) };
            let c = cfg.channels[i];
            let down = conv(ConvWeights::dense(cin, c, k).with_stride(2));
            let down_norm = norm(c);
            let bc = cfg.block_config(i);
            let blocks = (0..cfg.depths[i]).map(|_| block(&bc)).collect();
            let out_norm = norm(c);
            stages.push(StageWeights { down, down_norm, blocks, out_norm });
        }
        BackboneWeights { stem, stem_norm, stages }
    }

    /// Check the weight layout against `cfg`.
    pub fn validate(&self, cfg: &BackboneConfig) -> Result<()> {
        cfg.validate()?;
        let mut want = Vec::new();
        BackboneWeights::zeros(cfg).visit("", &mut |n, t| want.push((n.to_string(), t.shape())));
        let mut have = Vec::new();
        self.visit("", &mut |n, t| have.push((n.to_string(), t.shape())));
        ensure!(
            want == have,
            "backbone weights do not match config (have {} tensors, need {})",
            have.len(),
            want.len()
        );
        Ok(())
    }
}

impl Params for StageWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.down.visit(&join(prefix, "down"), f);
        self.down_norm.visit(&join(prefix, "down_norm"), f);
        for (j, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block.{j}")), f);
        }
        self.out_norm.visit(&join(prefix, "out_norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        self.down_norm.visit_mut(&join(prefix, "down_norm"), f);
        for (j, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block.{j}")), f);
        }
        self.out_norm.visit_mut(&join(prefix, "out_norm"), f);
    }
}

impl Params for BackboneWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_norm.visit(&join(prefix, "stem_norm"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.stem_norm.visit_mut(&join(prefix, "stem_norm"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage.{i}")), f);
        }
    }
}

/// Deterministic initialization: truncated-normal (std 0.02) conv weights,
/// zero biases, identity norms.
pub fn build_backbone(cfg: &BackboneConfig, seed: u64) -> Result<BackboneWeights> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    Ok(BackboneWeights::init(cfg, &mut rng, Init::TruncatedNormal { std: 0.02 }))
}

/// One feature map per stage, at strides 4, 8, 16, 32.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub stages: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn shapes(&self) -> Vec<Shape> {
        self.stages.iter().map(Tensor::shape).collect()
    }
}

/// Selection masks of every block, in execution order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSelection {
    pub stage: usize,
    pub block: usize,
    pub trace: SelectionTrace,
}

struct StageCache {
    input: Tensor,
    down: Tensor,
    /// Inputs to each block, then the last block's output.
    block_io: Vec<Tensor>,
}

struct Cache {
    stem: Tensor,
    stem_norm: Tensor,
    stages: Vec<StageCache>,
    pyramid: FeaturePyramid,
    selections: Vec<BlockSelection>,
}

pub fn check_input_shape(x: Shape) -> Result<()> {
    ensure!(x.c == INPUT_CHANNELS, "backbone expects {INPUT_CHANNELS} input channels, got {x}");
    ensure!(
        x.h >= 32 && x.w >= 32 && x.h.is_multiple_of(32) && x.w.is_multiple_of(32),
        "backbone input H and W must be positive multiples of 32, got {}x{}",
        x.h,
        x.w
    );
    Ok(())
}

fn forward_cached(x: &Tensor, cfg: &BackboneConfig, w: &BackboneWeights) -> Result<Cache> {
    check_input_shape(x.shape())?;
    w.validate(cfg)?;
    let stem = conv2d_forward(x, &w.stem)?;
    let stem_norm = w.stem_norm.forward(&stem)?;
    let mut cur = gelu(&stem_norm);
    let mut stages = Vec::with_capacity(STAGES);
    let mut pyramid = Vec::with_capacity(STAGES);
    let mut selections = Vec::new();
    for (i, sw) in w.stages.iter().enumerate() {
        let bc = cfg.block_config(i);
        let input = cur;
        let down = conv2d_forward(&input, &sw.down)?;
        let mut h = sw.down_norm.forward(&down)?;
        let mut block_io = vec![h.clone()];
        for (j, bw) in sw.blocks.iter().enumerate() {
            let (y, trace) = lsk_block_forward_traced(&h, &bc, bw)?;
            selections.push(BlockSelection { stage: i, block: j, trace });
            block_io.push(y.clone());
            h = y;
        }
        let feat = sw.out_norm.forward(&h)?;
        pyramid.push(feat.clone());
        stages.push(StageCache { input, down, block_io });
        cur = feat;
    }
    Ok(Cache { stem, stem_norm, stages, pyramid: FeaturePyramid { stages: pyramid }, selections })
}

pub fn backbone_forward(x: &Tensor, cfg: &BackboneConfig, w: &BackboneWeights) -> Result<FeaturePyramid> {
    Ok(forward_cached(x, cfg, w)?.pyramid)
}

/// Forward pass that also returns every block's selection masks.
pub fn backbone_forward_traced(
    x: &Tensor,
    cfg: &BackboneConfig,
    w: &BackboneWeights,
) -> Result<(FeaturePyramid, Vec<BlockSelection>)> {
    let c = forward_cached(x, cfg, w)?;
    Ok((c.pyramid, c.selections))
}

#[derive(Clone, Debug)]
pub struct BackboneGrads {
    pub input: Tensor,
    pub weights: BackboneWeights,
}

/// Gradients of `Σ_i <upstream_i, feature_i>`.
pub fn backbone_vjp(
    x: &Tensor,
    cfg: &BackboneConfig,
    w: &BackboneWeights,
    upstream: &FeaturePyramid,
) -> Result<BackboneGrads> {
    let c = forward_cached(x, cfg, w)?;
    ensure!(upstream.stages.len() == STAGES, "upstream pyramid needs {STAGES} stages");
    for (u, f) in upstream.stages.iter().zip(&c.pyramid.stages) {
        if u.shape() != f.shape() {
            return Err(Error::shape_mismatch("backbone_vjp upstream", u.shape(), f.shape()));
        }
    }
    let mut gw = BackboneWeights::zeros(cfg);
    let mut carry: Option<Tensor> = None;
    for i in (0..STAGES).rev() {
        let sw = &w.stages[i];
        let sc = &c.stages[i];
        let bc = cfg.block_config(i);
        let mut g = upstream.stages[i].clone();
        if let Some(cg) = carry.take() {
            g.add_assign(&cg)?;
        }
        let last = sc.block_io.last().unwrap();
        let (mut g, gn) = sw.out_norm.vjp(last, &g)?;
        gw.stages[i].out_norm = gn;
        for j in (0..sw.blocks.len()).rev() {
            let bg = lsk_block_vjp(&sc.block_io[j], &bc, &sw.blocks[j], &g)?;
            gw.stages[i].blocks[j] = bg.weights;
            g = bg.input;
        }
        let (g, gn) = sw.down_norm.vjp(&sc.down, &g)?;
        gw.stages[i].down_norm = gn;
        let v = conv2d_vjp(&sc.input, &sw.down, &g)?;
        gw.stages[i].down = v.weights;
        carry = Some(v.input);
    }
    let g = gelu_vjp(&c.stem_norm, &carry.unwrap())?;
    let (g, gn) = w.stem_norm.vjp(&c.stem, &g)?;
    gw.stem_norm = gn;
    let v = conv2d_vjp(x, &w.stem, &g)?;
    gw.stem = v.weights;
    Ok(BackboneGrads { input: v.input, weights: gw })
}

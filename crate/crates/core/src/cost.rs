//! Analytic parameter and FLOP model.
//!
//! Counts come from layer formulas alone, never from weight data: a conv
//! layer holds `out * in_per_group * k^2` weights plus `out` biases, and costs
//! `weights * H_out * W_out` FLOPs (one multiply-accumulate = one FLOP).
//! Per-channel affine norms count their scale as weights and their shift as
//! biases, and cost zero FLOPs, as do activations and pooling.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, INPUT_CHANNELS, STAGES};
use crate::block::BlockConfig;
use crate::lsk::LskConfig;
use crate::plan::DecompositionPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Depthwise,
    Dense,
    Norm,
}

/// One row of the per-layer ledger. Names match the weight-bundle roles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub weights: u64,
    pub biases: u64,
    pub flops: u64,
    /// Output spatial size the FLOPs were evaluated at.
    pub out_hw: (usize, usize),
}

impl LayerCost {
    pub fn params(&self) -> u64 {
        self.weights + self.biases
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params_with_bias: u64,
    pub params_without_bias: u64,
    pub flops: u64,
    pub input_hw: (usize, usize),
    pub ledger: Vec<LayerCost>,
    pub notes: Vec<String>,
}

impl CostReport {
    fn new(input_hw: (usize, usize)) -> Self {
        CostReport { input_hw, ..Default::default() }
    }

    fn push(&mut self, layer: LayerCost) {
        self.params_with_bias += layer.params();
        self.params_without_bias += layer.weights;
        self.flops += layer.flops;
        self.ledger.push(layer);
    }

    fn note(&mut self, s: impl Into<String>) {
        let s = s.into();
        if !self.notes.contains(&s) {
            self.notes.push(s);
        }
    }

    /// Recompute the aggregates from the ledger.
    pub fn ledger_totals(&self) -> (u64, u64, u64) {
        self.ledger.iter().fold((0, 0, 0), |(p, w, f), l| (p + l.params(), w + l.weights, f + l.flops))
    }

    /// Rows whose name starts with `prefix`.
    pub fn layers_under<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a LayerCost> + 'a {
        self.ledger.iter().filter(move |l| l.name.starts_with(prefix))
    }
}

const NOTE_FLOPS: &str = "FLOPs: one multiply-accumulate counts as one FLOP; conv FLOPs = weights x H_out x W_out";
const NOTE_ZERO: &str = "activations, pooling and norms are itemized at zero FLOPs";

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Geometry of one conv layer.
#[derive(Clone, Copy, Debug)]
struct Conv {
    kind: LayerKind,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
}

impl Conv {
    fn depthwise(c: usize, k: usize) -> Self {
        Conv { kind: LayerKind::Depthwise, cin: c, cout: c, k, stride: 1 }
    }
    fn dense(cin: usize, cout: usize, k: usize) -> Self {
        Conv { kind: LayerKind::Dense, cin, cout, k, stride: 1 }
    }
    fn strided(self, stride: usize) -> Self {
        Conv { stride, ..self }
    }

    fn cost(self, name: String, in_hw: (usize, usize), bias: bool) -> LayerCost {
        let per_group = if self.kind == LayerKind::Depthwise { 1 } else { self.cin };
        let weights = (self.cout * per_group * self.k * self.k) as u64;
        let out_hw = (ceil_div(in_hw.0, self.stride), ceil_div(in_hw.1, self.stride));
        LayerCost {
            name,
            kind: self.kind,
            weights,
            biases: if bias { self.cout as u64 } else { 0 },
            flops: weights * out_hw.0 as u64 * out_hw.1 as u64,
            out_hw,
        }
    }
}

fn norm(name: String, c: usize, hw: (usize, usize)) -> LayerCost {
    LayerCost { name, kind: LayerKind::Norm, weights: c as u64, biases: c as u64, flops: 0, out_hw: hw }
}

fn join(prefix: &str, name: &str) -> String {
    crate::params::join(prefix, name)
}

/// Which layers of a bare decomposition [`cost_of_plan`] counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostScope {
    /// Per-branch 1x1 `C -> C` projections.
    pub projections: bool,
    /// The pooled-descriptor selection conv and the 1x1 fusion conv.
    pub selection: bool,
    /// Spatial size of the selection conv.
    #[serde(default = "default_selection_kernel")]
    pub selection_kernel: usize,
}

fn default_selection_kernel() -> usize {
    7
}

impl CostScope {
    /// Depthwise layers only.
    pub const DEPTHWISE: CostScope = CostScope { projections: false, selection: false, selection_kernel: 7 };
    /// Every layer of a spatial-selection module with `both` pooling.
    pub const FULL: CostScope = CostScope { projections: true, selection: true, selection_kernel: 7 };
    /// Depthwise chain plus selection and fusion, without per-branch projections.
    /// This is the convention used for single-kernel vs decomposed comparisons.
    pub const COMPARISON: CostScope = CostScope { projections: false, selection: true, selection_kernel: 7 };

    pub fn describe(&self) -> String {
        let mut parts = vec!["depthwise"];
        if self.projections {
            parts.push("per-branch 1x1 projections");
        }
        if self.selection {
            parts.push("selection conv");
            parts.push("1x1 fusion");
        }
        format!("layers counted: {}", parts.join(" + "))
    }
}

impl Default for CostScope {
    fn default() -> Self {
        CostScope::COMPARISON
    }
}

/// Cost of the layers a decomposition implies at `channels` and input size `hw`.
pub fn cost_of_plan(plan: &DecompositionPlan, channels: usize, hw: (usize, usize), scope: CostScope) -> CostReport {
    let mut r = CostReport::new(hw);
    let n = plan.len();
    for (i, s) in plan.specs().iter().enumerate() {
        r.push(Conv::depthwise(channels, s.k).cost(format!("dw.{i}"), hw, true));
    }
    if scope.projections {
        for i in 0..n {
            r.push(Conv::dense(channels, channels, 1).cost(format!("proj.{i}"), hw, true));
        }
    }
    if scope.selection {
        r.push(Conv::dense(2, n, scope.selection_kernel).cost("select".into(), hw, true));
        r.push(Conv::dense(channels, channels, 1).cost("fuse".into(), hw, true));
    }
    r.note(scope.describe());
    r.note(NOTE_FLOPS);
    r.note("which layers a published parameter count includes is unknown; compare under an explicit scope");
    r
}

fn push_lsk(r: &mut CostReport, prefix: &str, cfg: &LskConfig, hw: (usize, usize)) {
    let c = cfg.channels;
    let n = cfg.branches();
    for (i, s) in cfg.plan.specs().iter().enumerate() {
        r.push(Conv::depthwise(c, s.k).cost(join(prefix, &format!("dw.{i}")), hw, true));
    }
    for i in 0..n {
        r.push(Conv::dense(c, c, 1).cost(join(prefix, &format!("proj.{i}")), hw, true));
    }
    if cfg.selection_mode.spatial() {
        let sel = Conv::dense(cfg.pooling.channels(), n, cfg.selection_kernel);
        r.push(sel.cost(join(prefix, "select"), hw, true));
    }
    if cfg.selection_mode.channel() {
        let b = cfg.bottleneck();
        r.push(Conv::dense(c, b, 1).cost(join(prefix, "channel.squeeze"), (1, 1), true));
        r.push(Conv::dense(b, n * c, 1).cost(join(prefix, "channel.expand"), (1, 1), true));
    }
    r.push(Conv::dense(c, c, 1).cost(join(prefix, "fuse"), hw, true));
}

fn push_block(r: &mut CostReport, prefix: &str, cfg: &BlockConfig, hw: (usize, usize)) {
    let c = cfg.channels();
    let h = cfg.hidden();
    r.push(norm(join(prefix, "norm1"), c, hw));
    r.push(Conv::dense(c, c, 1).cost(join(prefix, "pre"), hw, true));
    push_lsk(r, &join(prefix, "lsk"), &cfg.lsk, hw);
    r.push(Conv::dense(c, c, 1).cost(join(prefix, "post"), hw, true));
    r.push(norm(join(prefix, "norm2"), c, hw));
    r.push(Conv::dense(c, h, 1).cost(join(prefix, "fc1"), hw, true));
    r.push(Conv::depthwise(h, 3).cost(join(prefix, "ffn_dw"), hw, true));
    r.push(Conv::dense(h, c, 1).cost(join(prefix, "fc2"), hw, true));
}

/// Every layer of one LSK module.
pub fn lsk_cost(cfg: &LskConfig, hw: (usize, usize)) -> CostReport {
    let mut r = CostReport::new(hw);
    push_lsk(&mut r, "", cfg, hw);
    r.note(NOTE_FLOPS);
    r.note(NOTE_ZERO);
    r
}

/// Every layer of one LSK block.
pub fn block_cost(cfg: &BlockConfig, hw: (usize, usize)) -> CostReport {
    let mut r = CostReport::new(hw);
    push_block(&mut r, "", cfg, hw);
    r.note(NOTE_FLOPS);
    r.note(NOTE_ZERO);
    r
}

/// Every layer of a backbone at input size `hw`.
pub fn backbone_cost(cfg: &BackboneConfig, hw: (usize, usize)) -> CostReport {
    let mut r = CostReport::new(hw);
    let stem_w = cfg.stem_width();
    let stem = Conv::dense(INPUT_CHANNELS, stem_w, cfg.stem_kernel).strided(2).cost("stem".into(), hw, true);
    let mut cur = stem.out_hw;
    r.push(stem);
    r.push(norm("stem_norm".into(), stem_w, cur));
    let mut cin = stem_w;
    for i in 0..STAGES {
        let p = format!("stage.{i}");
        let c = cfg.channels[i];
        let k = if i == 0 { cfg.stem_kernel } else { cfg.downsample_kernel };
        let down = Conv::dense(cin, c, k).strided(2).cost(join(&p, "down"), cur, true);
        cur = down.out_hw;
        r.push(down);
        r.push(norm(join(&p, "down_norm"), c, cur));
        let bc = cfg.block_config(i);
        for j in 0..cfg.depths[i] {
            push_block(&mut r, &join(&p, &format!("block.{j}")), &bc, cur);
        }
        r.push(norm(join(&p, "out_norm"), c, cur));
        cin = c;
    }
    r.note(NOTE_FLOPS);
    r.note(NOTE_ZERO);
    r
}

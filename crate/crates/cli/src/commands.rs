//! Resolved commands and their execution.
//!
//! Every flag set resolves to a [`Command`] with all defaults filled in. The
//! command is echoed with the output, and [`execute`] on the echoed value
//! reproduces the output byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use lsk_core::analysis::{
    export_activation_maps, kernel_selection_by_category, load_annotations, load_traces, rf_box_ratio,
    ActivationTrace, RfWeighting,
};
use lsk_core::backbone::{
    backbone_forward, backbone_forward_traced, backbone_vjp, build_backbone, check_input_shape, BackboneConfig,
    BackboneWeights, FeaturePyramid, STRIDES,
};
use lsk_core::block::{lsk_block_forward, lsk_block_vjp, BlockConfig, BlockWeights};
use lsk_core::bundle::{load_backbone, save_backbone};
use lsk_core::cost::{backbone_cost, cost_of_plan, CostReport, CostScope};
use lsk_core::gradcheck::{check_vjp, GradCheckConfig, GradCheckReport, Leaves};
use lsk_core::lsk::{lsk_forward, lsk_vjp, LskConfig, LskWeights, SelectionMode};
use lsk_core::nn::{
    channel_pool, channel_pool_vjp, conv2d_forward, conv2d_vjp, gelu, gelu_vjp, global_avg_pool,
    global_avg_pool_vjp, sigmoid, sigmoid_vjp, Affine, ConvWeights, PoolMode,
};
use lsk_core::params::{Init, Params};
use lsk_core::plan::{parse_specs, prefix_receptive_fields, receptive_field, validate_plan};
use lsk_core::rng::SplitMix64;
use lsk_core::search::{search_decompositions, SearchQuery};
use lsk_core::{lskt, DecompositionPlan, Distribution, Error, KernelSpec, Shape, Tensor};

use crate::config::parse_tensor;
use crate::report::{bar_chart_svg, bars_csv};

/// A fully resolved run, as echoed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub json: bool,
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Plan(PlanCommand),
    PlanCheck(PlanCheckCommand),
    Cost(CostCommand),
    Forward(ForwardCommand),
    Export(ExportCommand),
    Gradcheck(GradcheckCommand),
    Analyze(AnalyzeCommand),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanCommand {
    pub query: SearchQuery,
    pub top: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanCheckCommand {
    pub specs: Vec<KernelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum CostTarget {
    Plan {
        plan: DecompositionPlan,
        vs: Option<DecompositionPlan>,
        channels: usize,
        spatial: (usize, usize),
        scope: CostScope,
    },
    Backbone {
        config: BackboneConfig,
        spatial: (usize, usize),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostCommand {
    pub target: CostTarget,
    pub show_ledger: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSource {
    Init { config: BackboneConfig, seed: u64 },
    Bundle { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardCommand {
    pub model: ModelSource,
    pub input: String,
    pub out: Option<PathBuf>,
    pub save_weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportCommand {
    pub model: ModelSource,
    pub input: String,
    pub out: PathBuf,
    pub image_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Conv2d,
    Pool,
    GlobalPool,
    Sigmoid,
    Gelu,
    Affine,
    Lsk,
    Block,
    Backbone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCommand {
    pub op: GradOp,
    pub depthwise: bool,
    pub k: usize,
    pub d: usize,
    pub stride: usize,
    pub channels: usize,
    pub spatial: (usize, usize),
    pub pooling: PoolMode,
    pub selection_mode: SelectionMode,
    pub plan: DecompositionPlan,
    pub seed: u64,
    pub check: GradCheckConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeCommand {
    pub traces: PathBuf,
    pub annotations: PathBuf,
    pub weighting: RfWeighting,
    pub ratio: bool,
    pub selection: bool,
    pub report: Option<PathBuf>,
}

/// Result of one command: machine value, human text and exit status.
pub struct Outcome {
    pub value: Value,
    pub human: String,
    pub exit: i32,
}

impl Outcome {
    fn ok(value: Value, human: String) -> Self {
        Outcome { value, human, exit: 0 }
    }
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Plan(c) => plan(c),
        Command::PlanCheck(c) => plan_check(c),
        Command::Cost(c) => cost(c),
        Command::Forward(c) => forward(c),
        Command::Export(c) => export(c),
        Command::Gradcheck(c) => gradcheck(c),
        Command::Analyze(c) => analyze(c),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn fmt_count(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn plan(c: &PlanCommand) -> Result<Outcome> {
    let outcome = search_decompositions(&c.query)?;
    let shown = c.top.unwrap_or(outcome.results.len()).min(outcome.results.len());
    let mut h = String::new();
    let q = &c.query;
    let _ = writeln!(
        h,
        "decompositions with RF {} (<= {} branches, k in {:?}, C = {}, {}x{}, {})",
        q.target_rf,
        q.max_branches,
        q.k_candidates,
        q.channels,
        q.spatial.0,
        q.spatial.1,
        q.scope.describe()
    );
    if outcome.empty {
        let _ = writeln!(h, "no legal decomposition reaches RF {} exactly", q.target_rf);
    } else {
        let _ = writeln!(h, "{:>4}  {:<28} {:>2} {:>12} {:>12} {:>16}", "rank", "plan", "N", "params", "params+bias", "FLOPs");
        for (i, r) in outcome.results.iter().take(shown).enumerate() {
            let _ = writeln!(
                h,
                "{:>4}  {:<28} {:>2} {:>12} {:>12} {:>16}",
                i + 1,
                r.plan.to_string(),
                r.plan.len(),
                fmt_count(r.cost.params_without_bias),
                fmt_count(r.cost.params_with_bias),
                fmt_count(r.cost.flops)
            );
        }
        if shown < outcome.results.len() {
            let _ = writeln!(h, "({} of {} plans shown)", shown, outcome.results.len());
        }
    }
    let results: Vec<Value> = outcome
        .results
        .iter()
        .take(shown)
        .map(|r| json!({ "plan": r.plan.to_string(), "specs": r.plan.specs(), "rf": r.plan.prefix_rf(), "cost": r.cost }))
        .collect();
    let value = json!({ "empty": outcome.empty, "total": outcome.results.len(), "results": results });
    Ok(Outcome::ok(value, h))
}

fn plan_check(c: &PlanCheckCommand) -> Result<Outcome> {
    let verdict = validate_plan(&c.specs);
    let chain = c.specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("->");
    let mut h = String::new();
    let _ = writeln!(h, "plan {chain}: RF {}", receptive_field(&c.specs));
    let violations = match &verdict {
        Ok(()) => {
            let _ = writeln!(h, "valid; prefix RF {:?}", prefix_receptive_fields(&c.specs));
            vec![]
        }
        Err(v) => {
            for x in v {
                let _ = writeln!(h, "violation: {x}");
            }
            v.clone()
        }
    };
    let value = json!({
        "plan": chain,
        "valid": verdict.is_ok(),
        "rf": receptive_field(&c.specs),
        "prefix_rf": prefix_receptive_fields(&c.specs),
        "violations": violations.iter().map(|v| json!({ "kind": to_value(v), "message": v.to_string() })).collect::<Vec<_>>(),
    });
    Ok(Outcome { value, human: h, exit: if verdict.is_ok() { 0 } else { 2 } })
}

fn ledger_table(r: &CostReport, h: &mut String) {
    let _ = writeln!(h, "{:<44} {:<9} {:>10} {:>8} {:>16}", "layer", "kind", "weights", "biases", "FLOPs");
    for l in &r.ledger {
        let _ = writeln!(
            h,
            "{:<44} {:<9} {:>10} {:>8} {:>16}",
            l.name,
            to_value(&l.kind).as_str().unwrap_or(""),
            fmt_count(l.weights),
            fmt_count(l.biases),
            fmt_count(l.flops)
        );
    }
}

fn totals(label: &str, r: &CostReport, h: &mut String) {
    let _ = writeln!(
        h,
        "{label}: params {} (with bias {}), FLOPs {}",
        fmt_count(r.params_without_bias),
        fmt_count(r.params_with_bias),
        fmt_count(r.flops)
    );
}

fn cost(c: &CostCommand) -> Result<Outcome> {
    let mut h = String::new();
    let value = match &c.target {
        CostTarget::Plan { plan, vs, channels, spatial, scope } => {
            let r = cost_of_plan(plan, *channels, *spatial, *scope);
            let _ = writeln!(h, "{} at C = {channels}, {}x{}; {}", plan, spatial.0, spatial.1, scope.describe());
            totals(&plan.to_string(), &r, &mut h);
            let mut value = json!({ "plan": plan.to_string(), "rf": plan.receptive_field(), "report": r });
            if let Some(other) = vs {
                let o = cost_of_plan(other, *channels, *spatial, *scope);
                totals(&other.to_string(), &o, &mut h);
                let ratio = r.params_without_bias as f64 / o.params_without_bias as f64;
                let ratio_b = r.params_with_bias as f64 / o.params_with_bias as f64;
                let _ = writeln!(h, "ratio {} / {}: {ratio:.4} ({ratio_b:.4} with bias)", plan, other);
                value["vs"] = json!({ "plan": other.to_string(), "rf": other.receptive_field(), "report": o });
                value["ratio_without_bias"] = json!(ratio);
                value["ratio_with_bias"] = json!(ratio_b);
            }
            if c.show_ledger {
                ledger_table(&r, &mut h);
            }
            for n in &r.notes {
                let _ = writeln!(h, "note: {n}");
            }
            value
        }
        CostTarget::Backbone { config, spatial } => {
            config.validate()?;
            let r = backbone_cost(config, *spatial);
            let _ = writeln!(
                h,
                "backbone channels {:?} depths {:?} plan {} at {}x{}",
                config.channels, config.depths, config.plan, spatial.0, spatial.1
            );
            totals("total", &r, &mut h);
            if c.show_ledger {
                ledger_table(&r, &mut h);
            }
            for n in &r.notes {
                let _ = writeln!(h, "note: {n}");
            }
            json!({ "report": r })
        }
    };
    Ok(Outcome::ok(value, h))
}

fn load_model(src: &ModelSource) -> Result<(BackboneConfig, BackboneWeights)> {
    match src {
        ModelSource::Init { config, seed } => Ok((config.clone(), build_backbone(config, *seed)?)),
        ModelSource::Bundle { path } => {
            load_backbone(path).with_context(|| format!("loading weight bundle {}", path.display()))
        }
    }
}

fn pyramid_checksum(p: &FeaturePyramid) -> String {
    let mut bytes = Vec::new();
    for t in &p.stages {
        bytes.extend(lskt::encode(t));
    }
    sha256_hex(&bytes)
}

fn model_input(spec: &str) -> Result<Tensor> {
    let x = parse_tensor(spec)?;
    check_input_shape(x.shape())?;
    Ok(x)
}

fn forward(c: &ForwardCommand) -> Result<Outcome> {
    let (cfg, w) = load_model(&c.model)?;
    let x = model_input(&c.input)?;
    let p = backbone_forward(&x, &cfg, &w)?;
    let checksum = pyramid_checksum(&p);
    if let Some(dir) = &c.save_weights {
        save_backbone(dir, &cfg, &w).with_context(|| format!("saving weights to {}", dir.display()))?;
    }
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, t) in p.stages.iter().enumerate() {
            lskt::save(dir.join(format!("stage{}.lskt", i + 1)), t)?;
        }
    }
    let mut h = String::new();
    let _ = writeln!(h, "input {}; {} parameters", x.shape(), fmt_count(w.param_count() as u64));
    let mut stages = Vec::new();
    for (i, t) in p.stages.iter().enumerate() {
        let sum = sha256_hex(&lskt::encode(t));
        let _ = writeln!(h, "stage {} (stride {:>2}): {}  sha256 {}", i + 1, STRIDES[i], t.shape(), &sum[..16]);
        stages.push(json!({ "stage": i + 1, "stride": STRIDES[i], "shape": t.shape(), "sha256": sum, "max_abs": t.max_abs() }));
    }
    let _ = writeln!(h, "checksum {checksum}");
    let value = json!({ "input_shape": x.shape(), "param_count": w.param_count(), "stages": stages, "checksum": checksum });
    Ok(Outcome::ok(value, h))
}

fn export(c: &ExportCommand) -> Result<Outcome> {
    let (cfg, w) = load_model(&c.model)?;
    let x = model_input(&c.input)?;
    let (_, selections) = backbone_forward_traced(&x, &cfg, &w)?;
    let s = x.shape();
    let mut manifests = Vec::new();
    let mut h = String::new();
    let mut hasher = Sha256::new();
    for b in 0..s.n {
        let id = if b == 0 { c.image_id.clone() } else { format!("{}_{b}", c.image_id) };
        let trace = ActivationTrace::from_selections(&id, (s.h, s.w), &selections, b)?;
        let m = export_activation_maps(&trace, &c.out)
            .with_context(|| format!("exporting maps to {}", c.out.display()))?;
        let files: usize = m.blocks.iter().map(|b| b.tensors.len()).sum();
        for blk in &trace.blocks {
            for map in &blk.maps {
                hasher.update(lskt::encode(map));
            }
        }
        let _ = writeln!(h, "{id}: {} blocks, {files} maps written to {}", m.blocks.len(), c.out.display());
        manifests.push(m);
    }
    let checksum = sha256_hex(&hasher.finalize());
    let _ = writeln!(h, "checksum {checksum}");
    Ok(Outcome::ok(json!({ "traces": manifests, "checksum": checksum }), h))
}

fn normal(shape: impl Into<Shape>, seed: u64, std: f64) -> Tensor {
    Tensor::seeded_fill(shape, seed, Distribution::Normal { mean: 0.0, std }).expect("valid shape")
}

fn gradcheck(c: &GradcheckCommand) -> Result<Outcome> {
    if !(c.check.eps > 0.0 && c.check.rel_tol > 0.0 && c.check.floor > 0.0) {
        return Err(contract("gradcheck eps, tol and floor must be positive"));
    }
    let (h, w) = c.spatial;
    let ch = c.channels;
    let seed = c.seed;
    let cfg = c.check;
    let mut rng = SplitMix64::new(seed);
    let report: GradCheckReport = match c.op {
        GradOp::Conv2d => {
            let mut cw = if c.depthwise { ConvWeights::depthwise(ch, c.k, c.d) } else {
                let mut cw = ConvWeights::dense(ch, ch, c.k);
                cw.dilation = c.d;
                cw
            };
            cw = cw.with_stride(c.stride).init_normal(&mut rng, 0.5);
            cw.validate()?;
            let x = normal([1, ch, h, w], seed + 1, 1.0);
            let u = normal(conv2d_forward(&x, &cw)?.shape(), seed + 2, 1.0);
            let v = conv2d_vjp(&x, &cw, &u)?;
            check_vjp(
                &Leaves { input: x, weights: cw },
                &Leaves { input: v.input, weights: v.weights },
                |s| vec![conv2d_forward(&s.input, &s.weights).unwrap()],
                &[u],
                cfg,
            )
        }
        GradOp::Pool | GradOp::GlobalPool | GradOp::Sigmoid | GradOp::Gelu => {
            let x = normal([1, ch, h, w], seed + 1, if matches!(c.op, GradOp::Sigmoid | GradOp::Gelu) { 2.0 } else { 1.0 });
            let mode = c.pooling;
            let f = |t: &Tensor| -> Tensor {
                match c.op {
                    GradOp::Pool => channel_pool(t, mode).unwrap(),
                    GradOp::GlobalPool => global_avg_pool(t).unwrap(),
                    GradOp::Sigmoid => sigmoid(t),
                    _ => gelu(t),
                }
            };
            let u = normal(f(&x).shape(), seed + 2, 1.0);
            let g = match c.op {
                GradOp::Pool => channel_pool_vjp(&x, mode, &u)?,
                GradOp::GlobalPool => global_avg_pool_vjp(&x, &u)?,
                GradOp::Sigmoid => sigmoid_vjp(&x, &u)?,
                _ => gelu_vjp(&x, &u)?,
            };
            check_vjp(&x, &g, |t| vec![f(t)], &[u], cfg)
        }
        GradOp::Affine => {
            let a = Affine::identity(ch).init_normal(&mut rng, 0.5);
            let x = normal([1, ch, h, w], seed + 1, 1.0);
            let u = normal(x.shape(), seed + 2, 1.0);
            let (gx, ga) = a.vjp(&x, &u)?;
            check_vjp(
                &Leaves { input: x, weights: a },
                &Leaves { input: gx, weights: ga },
                |s| vec![s.weights.forward(&s.input).unwrap()],
                &[u],
                cfg,
            )
        }
        GradOp::Lsk => {
            let lc = LskConfig::new(ch).with_plan(c.plan.clone()).with_mode(c.selection_mode).with_pooling(c.pooling);
            lc.validate()?;
            let lw = LskWeights::init(&lc, &mut rng, Init::Normal { std: 0.3 });
            let x = normal([1, ch, h, w], seed + 1, 1.0);
            let u = normal(x.shape(), seed + 2, 1.0);
            let g = lsk_vjp(&x, &lc, &lw, &u)?;
            check_vjp(
                &Leaves { input: x, weights: lw },
                &Leaves { input: g.input, weights: g.weights },
                |s| vec![lsk_forward(&s.input, &lc, &s.weights).unwrap().0],
                &[u],
                cfg,
            )
        }
        GradOp::Block => {
            let lc = LskConfig::new(ch).with_plan(c.plan.clone()).with_mode(c.selection_mode).with_pooling(c.pooling);
            let bc = BlockConfig::new(lc);
            bc.validate()?;
            let bw = BlockWeights::init(&bc, &mut rng, Init::Normal { std: 0.2 });
            let x = normal([1, ch, h, w], seed + 1, 1.0);
            let u = normal(x.shape(), seed + 2, 1.0);
            let g = lsk_block_vjp(&x, &bc, &bw, &u)?;
            check_vjp(
                &Leaves { input: x, weights: bw },
                &Leaves { input: g.input, weights: g.weights },
                |s| vec![lsk_block_forward(&s.input, &bc, &s.weights).unwrap()],
                &[u],
                cfg,
            )
        }
        GradOp::Backbone => {
            let mut bc = BackboneConfig::new([ch; 4], [1; 4]);
            bc.plan = c.plan.clone();
            bc.ffn_ratios = [2; 4];
            bc.selection_kernel = 3;
            bc.selection_mode = c.selection_mode;
            bc.pooling = c.pooling;
            bc.validate()?;
            check_input_shape(Shape::new(1, 3, h, w))?;
            let bw = BackboneWeights::init(&bc, &mut rng, Init::Normal { std: 0.3 });
            let x = normal([1, 3, h, w], seed + 1, 1.0);
            let p = backbone_forward(&x, &bc, &bw)?;
            let up = FeaturePyramid {
                stages: p.stages.iter().enumerate().map(|(i, t)| normal(t.shape(), seed + 2 + i as u64, 1.0)).collect(),
            };
            let g = backbone_vjp(&x, &bc, &bw, &up)?;
            check_vjp(
                &Leaves { input: x, weights: bw },
                &Leaves { input: g.input, weights: g.weights },
                |s| backbone_forward(&s.input, &bc, &s.weights).unwrap().stages,
                &up.stages,
                cfg,
            )
        }
    };
    let mut hs = String::new();
    let _ = writeln!(
        hs,
        "gradcheck {}: {} coordinates, max rel err {:.3e} at {} (tol {:.0e}, eps {:.0e}): {}",
        to_value(&c.op).as_str().unwrap_or(""),
        report.checked,
        report.max_rel_err,
        report.worst,
        report.rel_tol,
        cfg.eps,
        if report.passed { "PASS" } else { "FAIL" }
    );
    let exit = if report.passed { 0 } else { 1 };
    Ok(Outcome { value: to_value(&report), human: hs, exit })
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn write_chart(dir: &Path, stem: &str, title: &str, header: (&str, &str), bars: &[(String, f64)]) -> Result<Vec<String>> {
    let svg = format!("{stem}.svg");
    let csv = format!("{stem}.csv");
    std::fs::write(dir.join(&svg), bar_chart_svg(title, bars))?;
    std::fs::write(dir.join(&csv), bars_csv(header, bars))?;
    Ok(vec![svg, csv])
}

fn analyze(c: &AnalyzeCommand) -> Result<Outcome> {
    let traces = load_traces(&c.traces).with_context(|| format!("loading traces from {}", c.traces.display()))?;
    let ann = load_annotations(&c.annotations)
        .with_context(|| format!("loading annotations from {}", c.annotations.display()))?;
    let mut h = String::new();
    let _ = writeln!(h, "{} traces, {} annotations", traces.len(), ann.len());
    let mut value = json!({ "traces": traces.len(), "annotations": ann.len() });
    let mut files = Vec::new();
    if let Some(dir) = &c.report {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    if c.ratio {
        let r = rf_box_ratio(&traces, &ann, c.weighting)?;
        let _ = writeln!(h, "{:<24} {:>12} {:>10} {:>7}", "category", "R", "normalized", "images");
        for (cat, v) in &r.categories {
            let _ = writeln!(h, "{:<24} {:>12.6} {:>10.4} {:>7}", cat, v.ratio, v.normalized, v.images);
        }
        for cat in &r.absent {
            let _ = writeln!(h, "{cat:<24} {:>12}", "absent");
        }
        if let Some(dir) = &c.report {
            let bars: Vec<(String, f64)> = r.categories.iter().map(|(k, v)| (k.clone(), v.normalized)).collect();
            files.extend(write_chart(dir, "ratio", "Normalized expected RF / box area", ("category", "normalized"), &bars)?);
        }
        value["ratio"] = to_value(&r);
    }
    if c.selection {
        let by_cat = kernel_selection_by_category(&traces, &ann)?;
        for (cat, d) in &by_cat {
            let _ = writeln!(h, "selection difference, {cat} ({} images):", d.images);
            for b in &d.blocks {
                let _ = writeln!(h, "  {:<8} {:>12.4e} {:>8.4}", b.label, b.difference, b.normalized);
            }
            if let Some(dir) = &c.report {
                let bars: Vec<(String, f64)> = d.blocks.iter().map(|b| (b.label.clone(), b.normalized)).collect();
                let stem = format!("selection_{}", file_safe(cat));
                files.extend(write_chart(dir, &stem, &format!("Kernel selection difference: {cat}"), ("block", "normalized"), &bars)?);
            }
        }
        value["selection"] = to_value(&by_cat);
    }
    if c.report.is_some() {
        let _ = writeln!(h, "report files: {}", files.join(", "));
        value["report_files"] = json!(files);
    }
    Ok(Outcome::ok(value, h))
}

/// Parse raw kernel specs without validating them.
pub fn raw_specs(s: &str) -> Result<Vec<KernelSpec>> {
    Ok(parse_specs(s)?)
}

pub fn contract(msg: impl std::fmt::Display) -> anyhow::Error {
    Error::contract(msg).into()
}

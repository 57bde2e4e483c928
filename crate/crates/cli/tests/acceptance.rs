//! Acceptance suite: one check per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p lsk-cli --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use serde_json::Value;

use lsk_core::analysis::{
    kernel_selection_difference, rf_box_ratio, ActivationTrace, BlockTrace, BoxAnnotation, RfWeighting,
};
use lsk_core::backbone::{backbone_forward, build_backbone, BackboneConfig, STRIDES};
use lsk_core::cost::{backbone_cost, cost_of_plan, lsk_cost, CostScope, LayerKind};
use lsk_core::lsk::{impulse_support, lsk_forward, LskConfig, LskWeights, SelectionMode};
use lsk_core::nn::{conv2d_forward, ConvKind, ConvWeights, PoolMode};
use lsk_core::params::{Init, Params};
use lsk_core::plan::{receptive_field, validate_plan, Violation};
use lsk_core::rng::SplitMix64;
use lsk_core::search::{default_k_candidates, enumerate_plans, MAX_BRANCHES};
use lsk_core::{DecompositionPlan, Distribution, KernelSpec, Shape, Tensor};
use lsk_oracles::{conv_direct, lsk_direct, Arr, RawConv, RawLsk};

type Check = Result<String, String>;

macro_rules! require {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

// Tolerances and bands.
const RF23_BAND: (f64, f64) = (2.7, 4.5);
const RF29_BAND: (f64, f64) = (4.0, 6.7);
const FLOP_SIZE: usize = 1024;
const MIN_PARITY_CONFIGS: usize = 20;
const IMPULSE_MAX_RF: usize = 31;
const MIN_CONV_INSTANCES: usize = 100;
const GRAD_TOL: f64 = 1e-6;
const BACKBONE_GRAD_TOL: f64 = 1e-5;
const LSK_ORACLE_TOL: f64 = 1e-12;
const T_PARAMS: f64 = 4.3e6;
const S_PARAMS: f64 = 14.4e6;
const PARAM_BAND: f64 = 0.20;

fn specs(pairs: &[(usize, usize)]) -> Vec<KernelSpec> {
    pairs.iter().map(|&(k, d)| KernelSpec::new(k, d)).collect()
}

fn plan(pairs: &[(usize, usize)]) -> DecompositionPlan {
    DecompositionPlan::from_pairs(pairs).unwrap()
}

fn normal(shape: impl Into<Shape>, seed: u64, std: f64) -> Tensor {
    Tensor::seeded_fill(shape, seed, Distribution::Normal { mean: 0.0, std }).unwrap()
}

fn to_arr(t: &Tensor) -> Arr {
    Arr::new(t.shape().dims(), t.data().to_vec())
}

fn to_raw(w: &ConvWeights) -> RawConv {
    RawConv {
        depthwise: w.kind == ConvKind::Depthwise,
        k: w.k,
        dilation: w.dilation,
        stride: w.stride,
        out_channels: w.out_channels,
        weight: w.weight.data().to_vec(),
        bias: w.bias.as_ref().map(|b| b.data().to_vec()),
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lsk_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lsk"));
    c.env_remove("LSK_THREADS");
    c
}

/// Run the binary; returns (exit code, stdout bytes).
fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = lsk_bin().args(args).output().expect("spawn lsk");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn cli_json(args: &[&str]) -> Result<Value, String> {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let (code, out) = cli(&full);
    let v: Value = serde_json::from_slice(&out).map_err(|e| format!("{args:?}: bad JSON ({e}), exit {code}"))?;
    Ok(v["result"].clone())
}

fn criterion_1() -> Check {
    let a = receptive_field(&specs(&[(5, 1), (7, 3)]));
    let b = receptive_field(&specs(&[(3, 1), (5, 2), (7, 3)]));
    require!(a == 23, "(5,1)->(7,3) has RF {a}, expected 23");
    require!(b == 29, "(3,1)->(5,2)->(7,3) has RF {b}, expected 29");
    Ok(format!("RF {a} and {b}"))
}

fn criterion_2() -> Check {
    for p in [&[(5, 1), (7, 3)][..], &[(3, 1), (5, 2), (7, 3)][..]] {
        require!(validate_plan(&specs(p)).is_ok(), "{p:?} rejected");
    }
    type Pred = fn(&Violation) -> bool;
    let cases: [(&[(usize, usize)], &str, Pred); 6] = [
        (&[(5, 2), (7, 3)], "d_1 = 1", |v| matches!(v, Violation::FirstDilationNotOne { d: 2 })),
        (&[(3, 2), (5, 3), (7, 4)], "d_1 = 1", |v| matches!(v, Violation::FirstDilationNotOne { d: 2 })),
        (&[(5, 1), (7, 1)], "d increasing", |v| matches!(v, Violation::DilationNotIncreasing { index: 1, .. })),
        (&[(3, 1), (5, 2), (7, 2)], "d increasing", |v| matches!(v, Violation::DilationNotIncreasing { index: 2, .. })),
        (&[(5, 1), (7, 6)], "d_i <= RF_{i-1}", |v| matches!(v, Violation::DilationExceedsRf { index: 1, d: 6, prev_rf: 5 })),
        (&[(3, 1), (5, 2), (7, 12)], "d_i <= RF_{i-1}", |v| {
            matches!(v, Violation::DilationExceedsRf { index: 2, d: 12, prev_rf: 11 })
        }),
    ];
    for (p, rule, pred) in cases {
        match validate_plan(&specs(p)) {
            Ok(()) => return Err(format!("{p:?} accepted, breaks {rule}")),
            Err(vs) => require!(vs.len() == 1 && pred(&vs[0]), "{p:?}: expected only a {rule} violation, got {vs:?}"),
        }
    }
    Ok(format!("2 valid plans accepted, {} mutations rejected with the specific violation", cases.len()))
}

fn criterion_3() -> Check {
    let hw = (FLOP_SIZE, FLOP_SIZE);
    let scope = CostScope::COMPARISON;
    let ratio = |big: &[(usize, usize)], small: &[(usize, usize)]| {
        let a = cost_of_plan(&plan(big), 64, hw, scope);
        let b = cost_of_plan(&plan(small), 64, hw, scope);
        (a.params_without_bias as f64 / b.params_without_bias as f64, a, b)
    };
    let (r23, a23, b23) = ratio(&[(23, 1)], &[(5, 1), (7, 3)]);
    let (r29, a29, b29) = ratio(&[(29, 1)], &[(3, 1), (5, 2), (7, 3)]);
    require!(r23 >= RF23_BAND.0 && r23 <= RF23_BAND.1, "RF23 ratio {r23:.4} outside {RF23_BAND:?}");
    require!(r29 >= RF29_BAND.0 && r29 <= RF29_BAND.1, "RF29 ratio {r29:.4} outside {RF29_BAND:?}");
    let mut layers = 0;
    for r in [&a23, &b23, &a29, &b29] {
        for l in &r.ledger {
            if l.kind != LayerKind::Norm {
                require!(
                    l.flops == l.weights * (FLOP_SIZE * FLOP_SIZE) as u64,
                    "{}: flops {} != {} x 1024^2",
                    l.name,
                    l.flops,
                    l.weights
                );
                layers += 1;
            }
        }
        let conv_weights: u64 = r.ledger.iter().map(|l| l.weights).sum();
        require!(r.flops == conv_weights * (FLOP_SIZE * FLOP_SIZE) as u64, "total flops mismatch");
    }
    Ok(format!(
        "RF23 {}/{} = {r23:.4} in {RF23_BAND:?}; RF29 {}/{} = {r29:.4} in {RF29_BAND:?}; {layers} conv layers with flops = weights x 1024^2",
        a23.params_without_bias, b23.params_without_bias, a29.params_without_bias, b29.params_without_bias
    ))
}

fn criterion_4() -> Check {
    let ks = default_k_candidates();
    let mut pool = Vec::new();
    for rf in [9, 15, 23, 29, 31] {
        pool.extend(enumerate_plans(rf, 3, &ks));
    }
    let mut rng = SplitMix64::new(404);
    let modes = [SelectionMode::Spatial, SelectionMode::Channel, SelectionMode::SpatialChannel, SelectionMode::None];
    let pools = [PoolMode::Both, PoolMode::Avg, PoolMode::Max];
    let mut n = 0;
    for i in 0..30 {
        let p = DecompositionPlan::new(pool[(rng.next_u64() % pool.len() as u64) as usize].clone()).unwrap();
        let c = 1 + (rng.next_u64() % 32) as usize;
        let sel_k = [3, 5, 7][i % 3];
        let cfg = LskConfig::new(c).with_plan(p.clone()).with_selection_kernel(sel_k);
        let full = cost_of_plan(&p, c, (16, 16), CostScope { projections: true, selection: true, selection_kernel: sel_k });
        let w = LskWeights::zeros(&cfg);
        require!(full.params_with_bias == w.param_count() as u64, "{p} C={c}: plan cost {} vs {}", full.params_with_bias, w.param_count());
        let cfg = cfg.with_mode(modes[i % 4]).with_pooling(pools[i % 3]);
        let w = LskWeights::zeros(&cfg);
        let r = lsk_cost(&cfg, (16, 16));
        require!(r.params_with_bias == w.param_count() as u64, "{cfg:?}: module cost {} vs {}", r.params_with_bias, w.param_count());
        n += 1;
    }
    let tiny = BackboneConfig::new([4, 8, 8, 12], [1, 2, 1, 1]);
    require!(
        backbone_cost(&tiny, (64, 64)).params_with_bias == build_backbone(&tiny, 0).unwrap().param_count() as u64,
        "backbone cost differs from constructed weights"
    );
    require!(n >= MIN_PARITY_CONFIGS, "only {n} configs");
    Ok(format!("{n} random module configs plus a backbone: analytic counts equal constructed element counts"))
}

fn criterion_5() -> Check {
    let ks = default_k_candidates();
    let mut n = 0;
    for target in 1..=IMPULSE_MAX_RF {
        for s in enumerate_plans(target, MAX_BRANCHES, &ks) {
            let p = DecompositionPlan::new(s).unwrap();
            let measured = impulse_support(&p).map_err(|e| e.to_string())?;
            let expected: Vec<Option<usize>> = p.prefix_rf().iter().map(|&r| Some(r)).collect();
            require!(measured == expected, "{p}: measured {measured:?}, analytic {expected:?}");
            n += 1;
        }
    }
    require!(n > 0, "search space is empty");
    Ok(format!("{n} plans with RF <= {IMPULSE_MAX_RF}: impulse support equals analytic RF at every branch"))
}

fn criterion_6() -> Check {
    let mut rng = SplitMix64::new(6006);
    let pick = |rng: &mut SplitMix64, lo: usize, hi: usize| lo + (rng.next_u64() as usize) % (hi - lo + 1);
    let mut n = 0;
    for &k in &[1, 3, 5, 7, 11, 15, 23] {
        for d in 1..=4 {
            for variant in 0..4 {
                let c = pick(&mut rng, 1, 4);
                let mut cw = if variant < 2 {
                    ConvWeights::depthwise(c, k, d)
                } else {
                    let mut cw = ConvWeights::dense(c, pick(&mut rng, 1, 3), k);
                    cw.dilation = d;
                    cw
                };
                if variant == 1 {
                    cw = cw.without_bias();
                }
                if variant == 3 {
                    cw = cw.with_stride(2);
                }
                let cw = cw.init_normal(&mut rng, 1.0);
                let x = normal([pick(&mut rng, 1, 2), c, pick(&mut rng, 1, 14), pick(&mut rng, 1, 14)], rng.next_u64(), 1.0);
                let fast = conv2d_forward(&x, &cw).map_err(|e| e.to_string())?;
                let slow = conv_direct(&to_arr(&x), &to_raw(&cw));
                require!(fast.shape().dims() == slow.dims, "k={k} d={d}: shape differs");
                require!(bits(fast.data()) == bits(&slow.data), "k={k} d={d} variant {variant}: not bitwise equal");
                n += 1;
            }
        }
    }
    require!(n >= MIN_CONV_INSTANCES, "only {n} instances");
    Ok(format!("{n} instances (k <= 23, d <= 4) bitwise equal to the direct sum"))
}

fn criterion_7() -> Check {
    let cases: &[(&str, &[&str], f64)] = &[
        ("depthwise conv k3 d2", &["--op", "conv2d", "--k", "3", "--d", "2"], GRAD_TOL),
        ("depthwise conv k5", &["--op", "conv2d", "--k", "5"], GRAD_TOL),
        ("dense conv k3 stride 2", &["--op", "conv2d", "--kind", "dense", "--k", "3", "--stride", "2"], GRAD_TOL),
        ("dense conv 1x1", &["--op", "conv2d", "--kind", "dense", "--k", "1"], GRAD_TOL),
        ("channel pool avg+max", &["--op", "pool"], GRAD_TOL),
        ("channel pool avg", &["--op", "pool", "--pooling", "avg"], GRAD_TOL),
        ("channel pool max", &["--op", "pool", "--pooling", "max"], GRAD_TOL),
        ("global pool", &["--op", "global-pool"], GRAD_TOL),
        ("sigmoid", &["--op", "sigmoid"], GRAD_TOL),
        ("gelu", &["--op", "gelu"], GRAD_TOL),
        ("affine norm", &["--op", "affine"], GRAD_TOL),
        ("lsk module spatial", &["--op", "lsk"], GRAD_TOL),
        ("lsk module channel", &["--op", "lsk", "--selection-mode", "channel", "--channels", "4"], GRAD_TOL),
        ("lsk module N=3", &["--op", "lsk", "--plan", "(3,1)->(5,2)->(7,3)", "--size", "5"], GRAD_TOL),
        ("lsk block", &["--op", "block"], GRAD_TOL),
        ("backbone", &["--op", "backbone"], BACKBONE_GRAD_TOL),
    ];
    let mut worst: Vec<String> = Vec::new();
    for &(name, args, tol) in cases {
        let tol_s = format!("{tol:e}");
        let mut full = vec!["gradcheck"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--tol", &tol_s]);
        let r = cli_json(&full)?;
        let err = r["max_rel_err"].as_f64().ok_or(format!("{name}: no max_rel_err"))?;
        require!(r["passed"] == Value::Bool(true) && err <= tol, "{name}: max rel err {err:.3e} > {tol:e}");
        worst.push(format!("{name} {err:.1e}"));
    }
    Ok(format!("{} VJPs within 1e-6 (backbone 1e-5): {}", cases.len(), worst.join(", ")))
}

fn criterion_8() -> Check {
    let plans: [&[(usize, usize)]; 5] = [&[(3, 1)], &[(7, 1)], &[(5, 1), (7, 3)], &[(3, 1), (5, 2)], &[(3, 1), (5, 2), (7, 3)]];
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut seed = 800;
    for p in plans {
        for pooling in [PoolMode::Both, PoolMode::Avg, PoolMode::Max] {
            seed += 1;
            let c = 2 + (seed % 4) as usize;
            let cfg = LskConfig::new(c).with_plan(plan(p)).with_pooling(pooling).with_selection_kernel(if seed % 2 == 0 { 7 } else { 3 });
            let w = LskWeights::init(&cfg, &mut SplitMix64::new(seed), Init::Normal { std: 0.4 });
            let x = normal([2, c, 9, 8], seed + 1, 1.0);
            let (y, trace) = lsk_forward(&x, &cfg, &w).map_err(|e| e.to_string())?;
            let raw = RawLsk {
                dw: w.dw.iter().map(to_raw).collect(),
                proj: w.proj.iter().map(to_raw).collect(),
                select: to_raw(w.select.as_ref().unwrap()),
                fuse: to_raw(&w.fuse),
                use_avg: pooling != PoolMode::Max,
                use_max: pooling != PoolMode::Avg,
            };
            let (oy, om) = lsk_direct(&to_arr(&x), &raw);
            let mut e = max_diff(y.data(), &oy.data);
            require!(trace.maps.len() == om.len(), "mask count differs");
            for (a, b) in trace.maps.iter().zip(&om) {
                e = e.max(max_diff(a.data(), &b.data));
            }
            require!(e <= LSK_ORACLE_TOL, "{} {pooling:?}: differs by {e:e}", plan(p));
            worst = worst.max(e);
            n += 1;
        }
    }
    Ok(format!("{n} configs with N in {{1,2,3}}: max deviation {worst:.2e} <= 1e-12"))
}

fn criterion_9() -> Check {
    let plans: [&[(usize, usize)]; 3] = [&[(5, 1)], &[(5, 1), (7, 3)], &[(3, 1), (5, 2), (7, 3)]];
    for (i, p) in plans.iter().enumerate() {
        let k = p.len();
        let cfg = LskConfig::new(4).with_plan(plan(p));
        let w = LskWeights::init(&cfg, &mut SplitMix64::new(90 + i as u64), Init::Normal { std: 2.0 });
        let x = normal([2, 4, 8, 8], 95 + i as u64, 3.0);
        let (_, trace) = lsk_forward(&x, &cfg, &w).map_err(|e| e.to_string())?;
        require!(trace.maps.len() == k, "N={k}: {} maps", trace.maps.len());
        for m in &trace.maps {
            require!(m.shape() == Shape::new(2, 1, 8, 8), "mask shape {}", m.shape());
            require!(m.data().iter().all(|&v| v > 0.0 && v < 1.0), "N={k}: a mask value left (0,1)");
        }
        let zw = LskWeights::zeros(&cfg);
        let (y, trace) = lsk_forward(&x, &cfg, &zw).map_err(|e| e.to_string())?;
        require!(trace.maps.iter().all(|m| m.data().iter().all(|&v| v == 0.5)), "N={k}: zero weights, maps not 0.5");
        require!(y.data().iter().all(|&v| v == 0.0), "N={k}: zero weights, output not 0");
    }
    Ok("N = 1, 2, 3: exactly N masks in (0,1); zero weights give masks = 0.5 and output = 0".into())
}

fn criterion_10() -> Check {
    let mut parts = Vec::new();
    for (name, cfg, target) in [("lsknet-t", BackboneConfig::lsknet_t(), T_PARAMS), ("lsknet-s", BackboneConfig::lsknet_s(), S_PARAMS)] {
        let w = build_backbone(&cfg, 0).map_err(|e| e.to_string())?;
        let count = w.param_count() as f64;
        let dev = count / target - 1.0;
        require!(dev.abs() <= PARAM_BAND, "{name}: {count} params, {:+.1}% from {target}", dev * 100.0);
        let report = backbone_cost(&cfg, (1024, 1024));
        require!(report.params_with_bias == w.param_count() as u64, "{name}: ledger total differs from weights");
        let (all, _, flops) = report.ledger_totals();
        require!(all == report.params_with_bias && flops == report.flops, "{name}: ledger rows do not sum to totals");
        let ledger = cli_json(&["cost", "--preset", name, "--ledger"])?;
        let rows = ledger["report"]["ledger"].as_array().map(|a| a.len()).unwrap_or(0);
        require!(rows == report.ledger.len() && rows > 0, "{name}: CLI ledger has {rows} rows");
        parts.push(format!("{name} {} params ({:+.1}%), {rows}-row ledger", w.param_count(), dev * 100.0));
    }
    let cfg = BackboneConfig::lsknet_t();
    let w = build_backbone(&cfg, 1).map_err(|e| e.to_string())?;
    let p = backbone_forward(&normal([1, 3, 64, 64], 2, 1.0), &cfg, &w).map_err(|e| e.to_string())?;
    let want = [Shape::new(1, 32, 16, 16), Shape::new(1, 64, 8, 8), Shape::new(1, 160, 4, 4), Shape::new(1, 256, 2, 2)];
    require!(p.shapes() == want, "pyramid {:?}", p.shapes());
    require!(STRIDES == [4, 8, 16, 32], "strides {STRIDES:?}");
    let s = BackboneConfig::lsknet_s();
    let ps = backbone_forward(&Tensor::zeros([1, 3, 64, 64]), &s, &build_backbone(&s, 0).unwrap()).map_err(|e| e.to_string())?;
    for (i, t) in ps.stages.iter().enumerate() {
        require!(t.shape() == Shape::new(1, s.channels[i], 64 / STRIDES[i], 64 / STRIDES[i]), "lsknet-s stage {i}: {}", t.shape());
    }
    parts.push("pyramid on (1,3,64,64): (1,32,16,16) (1,64,8,8) (1,160,4,4) (1,256,2,2)".into());
    Ok(parts.join("; "))
}

fn constant_trace(id: &str, hw: usize, vals: &[f64], rf: &[usize]) -> ActivationTrace {
    ActivationTrace {
        image_id: id.into(),
        input_hw: (hw, hw),
        blocks: vec![BlockTrace {
            stage: 0,
            block: 0,
            maps: vals.iter().map(|&v| Tensor::full([1, 1, hw, hw], v)).collect(),
            rf: rf.to_vec(),
        }],
    }
}

/// Four stages of two-branch blocks whose per-pixel differences average to
/// the designed value; the smaller branch varies per pixel.
fn designed_trace(id: &str, seed: u64, design: &[Vec<f64>]) -> ActivationTrace {
    let mut blocks = Vec::new();
    let mut rng = SplitMix64::new(seed);
    for (stage, deltas) in design.iter().enumerate() {
        let side = 64 / STRIDES[stage];
        for (block, &delta) in deltas.iter().enumerate() {
            let small: Vec<f64> = (0..side * side).map(|_| 0.02 + 0.05 * rng.next_f64()).collect();
            let large: Vec<f64> = small
                .iter()
                .enumerate()
                .map(|(i, &s)| s + delta + if (i / side + i % side) % 2 == 0 { 0.01 } else { -0.01 })
                .collect();
            blocks.push(BlockTrace {
                stage,
                block,
                maps: vec![Tensor::from_vec([1, 1, side, side], large).unwrap(), Tensor::from_vec([1, 1, side, side], small).unwrap()],
                rf: vec![23, 5],
            });
        }
    }
    ActivationTrace { image_id: id.into(), input_hw: (64, 64), blocks }
}

fn criterion_11() -> Check {
    let same = kernel_selection_difference(&[constant_trace("a", 3, &[0.3, 0.3], &[5, 23])]).map_err(|e| e.to_string())?;
    require!(same.blocks[0].difference == 0.0, "identical maps give {}", same.blocks[0].difference);
    let d = kernel_selection_difference(&[constant_trace("a", 3, &[0.1, 0.9], &[5, 23])]).map_err(|e| e.to_string())?;
    require!((d.blocks[0].difference - 0.8).abs() <= 1e-12, "0.9/0.1 gives {}", d.blocks[0].difference);

    let t = constant_trace("img", 4, &[0.5], &[5]);
    let ann = vec![BoxAnnotation::axis_aligned("img", "plane", 0.0, 0.0, 4.0, 2.0).map_err(|e| e.to_string())?];
    let r = rf_box_ratio(&[t], &ann, RfWeighting::Linear).map_err(|e| e.to_string())?;
    let rc = r.categories["plane"].ratio;
    require!((rc - 0.5 * 5.0 * 16.0 / 8.0).abs() <= 1e-12, "R = {rc}, hand value 5.0");

    let design = vec![vec![0.80, 0.76], vec![0.44, 0.36], vec![0.42, 0.38, 0.40], vec![0.34, 0.32]];
    let traces = [designed_trace("x", 1, &design), designed_trace("y", 2, &design)];
    let got = kernel_selection_difference(&traces).map_err(|e| e.to_string())?;
    let mut expected: Vec<(f64, String)> = Vec::new();
    for (s, ds) in design.iter().enumerate() {
        for (b, &v) in ds.iter().enumerate() {
            expected.push((v, format!("B_{}_{}", s + 1, b + 1)));
        }
    }
    expected.sort_by(|a, b| b.0.total_cmp(&a.0));
    let expected: Vec<String> = expected.into_iter().map(|e| e.1).collect();
    require!(got.ordering() == expected, "ordering {:?}, designed {expected:?}", got.ordering());
    let stage_mean = |s: usize| {
        let v: Vec<f64> = got.blocks.iter().filter(|b| b.stage == s).map(|b| b.difference).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let means = [stage_mean(0), (stage_mean(1) + stage_mean(2)) / 2.0, stage_mean(3)];
    for (m, want) in means.iter().zip([0.78, 0.40, 0.33]) {
        require!((m - want).abs() <= 1e-9, "stage mean {m} vs designed {want}");
    }
    Ok(format!(
        "dA = 0 and {:.3}; R = {rc}; {}-block ordering recovered ({} first), stage means {:.2}/{:.2}/{:.2}",
        d.blocks[0].difference,
        expected.len(),
        expected[0],
        means[0],
        means[1],
        means[2]
    ))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_12() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let export_dir = s(&root.join("export"));
    let report_dir = s(&root.join("report"));
    let ann = root.join("ann");
    std::fs::create_dir_all(&ann).map_err(|e| e.to_string())?;
    std::fs::write(ann.join("img.txt"), "4 4 60 4 60 40 4 40 plane 0\n").map_err(|e| e.to_string())?;
    std::fs::write(ann.join("img_1.txt"), "10 10 30 10 30 30 10 30 ship 1\n").map_err(|e| e.to_string())?;
    let ann_s = s(&ann);

    let runs: Vec<Vec<String>> = [
        vec!["plan", "--rf", "29", "--max-branches", "3"],
        vec!["plan", "--check", "(5,1)->(7,3)"],
        vec!["cost", "--plan", "(23,1)", "--vs", "(5,1)->(7,3)", "--ledger"],
        vec!["cost", "--preset", "lsknet-s"],
        vec!["forward", "--preset", "lsknet-t", "--input", "seed:3:normal:2x3x64x64", "--seed", "5"],
        vec!["gradcheck", "--op", "lsk"],
        vec!["export", "--preset", "lsknet-t", "--input", "seed:4:uniform:2x3x64x64", "--out", &export_dir, "--image-id", "img"],
        vec!["analyze", "--traces", &export_dir, "--annotations", &ann_s, "--report", &report_dir],
    ]
    .iter()
    .map(|v| v.iter().map(|a| a.to_string()).collect())
    .collect();

    let mut checked = 0;
    for (i, args) in runs.iter().enumerate() {
        for json in [false, true] {
            let mut base: Vec<String> = if json { vec!["--json".into()] } else { vec![] };
            base.extend(args.iter().cloned());
            let with_threads = |t: &str| {
                let mut a = vec!["--threads".to_string(), t.to_string()];
                a.extend(base.iter().cloned());
                let refs: Vec<&str> = a.iter().map(String::as_str).collect();
                let out = cli(&refs);
                let files = [&export_dir, &report_dir]
                    .iter()
                    .filter(|d| Path::new(d).exists())
                    .flat_map(|d| snapshot(Path::new(d)))
                    .collect::<Vec<_>>();
                (out, files)
            };
            let ((code, serial), serial_files) = with_threads("1");
            require!(code == 0, "{args:?}: exit {code}");
            let ((_, parallel), parallel_files) = with_threads("4");
            require!(serial == parallel, "{args:?} (json={json}): serial and parallel stdout differ");
            require!(serial_files == parallel_files, "{args:?}: serial and parallel files differ");

            let echo = root.join(format!("echo_{i}_{json}.txt"));
            std::fs::write(&echo, &serial).map_err(|e| e.to_string())?;
            let (code, replayed) = cli(&["replay", &s(&echo)]);
            require!(code == 0, "replay of {args:?} exited {code}");
            require!(replayed == serial, "replay of {args:?} (json={json}) is not byte-identical");
            checked += 1;
        }
    }
    // LSK_THREADS is honoured the same way as --threads.
    let (_, a) = cli(&["forward", "--preset", "lsknet-t", "--input", "ones:1x3x32x32"]);
    let env_out = lsk_bin().env("LSK_THREADS", "1").args(["forward", "--preset", "lsknet-t", "--input", "ones:1x3x32x32"]).output();
    require!(env_out.map(|o| o.stdout).unwrap_or_default() == a, "LSK_THREADS=1 output differs");
    Ok(format!("{checked} runs over 7 subcommands: replay byte-identical, 1 vs 4 threads byte-identical (stdout and files)"))
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("RF arithmetic", criterion_1),
        ("constraint validation", criterion_2),
        ("efficiency ratio", criterion_3),
        ("analytic vs constructed parity", criterion_4),
        ("impulse-response RF", criterion_5),
        ("convolution oracle", criterion_6),
        ("gradient suite", criterion_7),
        ("LSK pipeline oracle", criterion_8),
        ("attention properties", criterion_9),
        ("backbone contract", criterion_10),
        ("analysis metrics", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name} ({secs:.2}s): {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

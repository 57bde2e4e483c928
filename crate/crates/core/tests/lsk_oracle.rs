mod common;

use common::{normal, to_arr, to_raw_lsk};
use lsk_core::exec::with_threads;
use lsk_core::lsk::{lsk_forward, LskConfig, LskWeights};
use lsk_core::nn::PoolMode;
use lsk_core::params::Init;
use lsk_core::rng::SplitMix64;
use lsk_core::DecompositionPlan;
use lsk_oracles::lsk_direct;

const TOL: f64 = 1e-12;

fn plans() -> Vec<DecompositionPlan> {
    [
        vec![(3, 1)],
        vec![(7, 1)],
        vec![(5, 1), (7, 3)],
        vec![(3, 1), (5, 2)],
        vec![(3, 1), (5, 2), (7, 3)],
        vec![(3, 1), (3, 2), (5, 3)],
    ]
    .iter()
    .map(|p| DecompositionPlan::from_pairs(p).unwrap())
    .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn pipeline_matches_transliteration() {
    let mut seed = 100;
    for plan in plans() {
        for pooling in [PoolMode::Both, PoolMode::Avg, PoolMode::Max] {
            for (c, sel_k) in [(4, 7), (3, 3)] {
                seed += 1;
                let cfg = LskConfig::new(c).with_plan(plan.clone()).with_pooling(pooling).with_selection_kernel(sel_k);
                let w = LskWeights::init(&cfg, &mut SplitMix64::new(seed), Init::Normal { std: 0.4 });
                let x = normal([2, c, 8, 7], seed + 1000, 1.0);
                let (y, trace) = lsk_forward(&x, &cfg, &w).unwrap();
                let (oy, omasks) = lsk_direct(&to_arr(&x), &to_raw_lsk(&w, pooling));
                let err = max_diff(y.data(), &oy.data);
                assert!(err <= TOL, "{plan} {pooling:?} C={c}: output differs by {err:e}");
                assert_eq!(trace.maps.len(), plan.len());
                for (m, om) in trace.maps.iter().zip(&omasks) {
                    assert!(max_diff(m.data(), &om.data) <= TOL);
                }
            }
        }
    }
}

#[test]
fn batch_parallelism_is_bitwise_stable() {
    let cfg = LskConfig::new(6);
    let w = LskWeights::init(&cfg, &mut SplitMix64::new(5), Init::TruncatedNormal { std: 0.5 });
    let x = normal([3, 6, 16, 16], 6, 1.0);
    let a = with_threads(1, || lsk_forward(&x, &cfg, &w).unwrap());
    let b = with_threads(8, || lsk_forward(&x, &cfg, &w).unwrap());
    assert_eq!(a, b);
    let bits = |t: &lsk_core::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
}

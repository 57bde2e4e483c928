use lsk_core::search::{default_k_candidates, enumerate_plans, MAX_BRANCHES};
use lsk_core::lsk::{depthwise_chain, impulse_support};
use lsk_core::nn::ConvWeights;
use lsk_core::{DecompositionPlan, Tensor};

#[test]
fn impulse_support_equals_analytic_rf() {
    let ks = default_k_candidates();
    let mut checked = 0;
    for target in 1..=31 {
        for specs in enumerate_plans(target, MAX_BRANCHES, &ks) {
            let plan = DecompositionPlan::new(specs).unwrap();
            let measured = impulse_support(&plan).unwrap();
            let expected: Vec<Option<usize>> = plan.prefix_rf().iter().map(|&r| Some(r)).collect();
            assert_eq!(measured, expected, "{plan}");
            checked += 1;
        }
    }
    println!("{checked} plans with RF <= 31");
    assert!(checked > 0);
}

#[test]
fn gapped_dilation_leaves_holes() {
    // (3,1) -> (3,5) breaks d_2 <= RF_1: the impulse response is not a solid square.
    let mut x = Tensor::zeros([1, 1, 21, 21]);
    x.set(0, 0, 10, 10, 1.0);
    let dw: Vec<ConvWeights> = [(3, 1), (3, 5)]
        .iter()
        .map(|&(k, d)| {
            let mut w = ConvWeights::depthwise(1, k, d).without_bias();
            w.weight.data_mut().fill(1.0);
            w
        })
        .collect();
    let out = depthwise_chain(&x, &dw).unwrap();
    let nonzero = out[1].data().iter().filter(|&&v| v != 0.0).count();
    assert_eq!(nonzero, 9 * 9);
    assert_eq!(out[1].at(0, 0, 10, 12), 0.0);
}

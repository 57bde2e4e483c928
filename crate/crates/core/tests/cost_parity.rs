use lsk_core::backbone::{BackboneConfig, BackboneWeights};
use lsk_core::block::{BlockConfig, BlockWeights};
use lsk_core::cost::{backbone_cost, block_cost, cost_of_plan, lsk_cost, CostScope, LayerKind};
use lsk_core::lsk::{LskConfig, LskWeights, SelectionMode};
use lsk_core::nn::PoolMode;
use lsk_core::params::Params;
use lsk_core::rng::SplitMix64;
use lsk_core::search::{default_k_candidates, enumerate_plans};
use lsk_core::DecompositionPlan;
use lsk_oracles::chain_weight_count;

fn pick(rng: &mut SplitMix64, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Random legal plans drawn from the default search space.
fn random_plans(count: usize, seed: u64) -> Vec<DecompositionPlan> {
    let ks = default_k_candidates();
    let mut pool = Vec::new();
    for rf in [7, 13, 17, 23, 29, 31, 41] {
        pool.extend(enumerate_plans(rf, 3, &ks));
    }
    let mut rng = SplitMix64::new(seed);
    (0..count).map(|_| DecompositionPlan::new(pool[pick(&mut rng, pool.len())].clone()).unwrap()).collect()
}

/// Element counts of the constructed weights: all, and excluding biases and norm shifts.
fn counts<W: Params>(w: &W) -> (u64, u64) {
    let (mut all, mut no_bias) = (0u64, 0u64);
    w.visit("", &mut |name, t| {
        all += t.len() as u64;
        if !(name.ends_with(".bias") || name.ends_with(".shift")) {
            no_bias += t.len() as u64;
        }
    });
    (all, no_bias)
}

#[test]
fn plan_cost_equals_constructed_module() {
    let modes = [SelectionMode::Spatial, SelectionMode::Channel, SelectionMode::SpatialChannel, SelectionMode::None];
    let pools = [PoolMode::Both, PoolMode::Avg, PoolMode::Max];
    let mut rng = SplitMix64::new(7);
    let plans = random_plans(40, 3);
    assert!(plans.len() >= 20);
    for plan in plans {
        let c = 1 + pick(&mut rng, 24);
        let sel_k = [1, 3, 5, 7, 9][pick(&mut rng, 5)];
        let hw = (1 + pick(&mut rng, 64), 1 + pick(&mut rng, 64));

        let scope = CostScope { projections: true, selection: true, selection_kernel: sel_k };
        let r = cost_of_plan(&plan, c, hw, scope);
        let cfg = LskConfig::new(c).with_plan(plan.clone()).with_selection_kernel(sel_k);
        let w = LskWeights::zeros(&cfg);
        assert_eq!((r.params_with_bias, r.params_without_bias), counts(&w), "{plan} C={c}");

        let dw_only = cost_of_plan(&plan, c, hw, CostScope::DEPTHWISE).params_without_bias;
        let pairs: Vec<(usize, usize)> = plan.specs().iter().map(|s| (s.k, s.d)).collect();
        assert_eq!(dw_only, chain_weight_count(&pairs, c, false) as u64);
        let with_proj = cost_of_plan(&plan, c, hw, CostScope { projections: true, selection: false, selection_kernel: 7 });
        assert_eq!(with_proj.params_without_bias, chain_weight_count(&pairs, c, true) as u64);

        let cfg = cfg.with_mode(modes[pick(&mut rng, 4)]).with_pooling(pools[pick(&mut rng, 3)]);
        let w = LskWeights::zeros(&cfg);
        let r = lsk_cost(&cfg, hw);
        assert_eq!((r.params_with_bias, r.params_without_bias), counts(&w), "{cfg:?}");
        assert_eq!(r.params_with_bias, w.param_count() as u64);
    }
}

#[test]
fn block_and_backbone_costs_equal_constructed() {
    let mut rng = SplitMix64::new(11);
    for plan in random_plans(20, 5) {
        let c = 1 + pick(&mut rng, 16);
        let cfg = BlockConfig::new(LskConfig::new(c).with_plan(plan.clone())).with_ffn_ratio(1 + pick(&mut rng, 4));
        assert_eq!(block_cost(&cfg, (8, 8)).params_with_bias, counts(&BlockWeights::zeros(&cfg)).0);

        let mut b = BackboneConfig::new(
            [1 + pick(&mut rng, 8), 1 + pick(&mut rng, 8), 1 + pick(&mut rng, 8), 1 + pick(&mut rng, 8)],
            [1 + pick(&mut rng, 2), 1, 1 + pick(&mut rng, 2), 1],
        );
        b.plan = plan;
        b.ffn_ratios = [1 + pick(&mut rng, 4), 4, 2, 1 + pick(&mut rng, 4)];
        let r = backbone_cost(&b, (64, 64));
        assert_eq!((r.params_with_bias, r.params_without_bias), counts(&BackboneWeights::zeros(&b)), "{b:?}");
    }
    for cfg in [BackboneConfig::lsknet_t(), BackboneConfig::lsknet_s()] {
        assert_eq!(backbone_cost(&cfg, (64, 64)).params_with_bias, BackboneWeights::zeros(&cfg).param_count() as u64);
    }
}

#[test]
fn flops_follow_the_mac_convention() {
    for plan in random_plans(20, 9) {
        let r = cost_of_plan(&plan, 64, (1024, 1024), CostScope::FULL);
        for l in &r.ledger {
            assert_eq!(l.flops, l.weights * 1024 * 1024, "{}", l.name);
        }
        assert_eq!(r.ledger_totals(), (r.params_with_bias, r.params_without_bias, r.flops));
    }
    let r = backbone_cost(&BackboneConfig::lsknet_t(), (1024, 1024));
    for l in &r.ledger {
        match l.kind {
            LayerKind::Norm => assert_eq!(l.flops, 0),
            _ => assert_eq!(l.flops, l.weights * (l.out_hw.0 * l.out_hw.1) as u64, "{}", l.name),
        }
    }
}

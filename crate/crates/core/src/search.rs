//! Exhaustive search over legal decompositions with a fixed receptive field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_of_plan, CostReport, CostScope};
use crate::error::{ensure, Result};
use crate::plan::{DecompositionPlan, KernelSpec};

pub const MAX_KERNEL: usize = 31;
pub const MAX_BRANCHES: usize = 4;
pub const MAX_RF: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinParams,
    MinFlops,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub target_rf: usize,
    pub max_branches: usize,
    pub k_candidates: Vec<usize>,
    pub objective: Objective,
    pub channels: usize,
    pub spatial: (usize, usize),
    pub scope: CostScope,
}

/// Odd kernel sizes `3..=31`.
pub fn default_k_candidates() -> Vec<usize> {
    (3..=MAX_KERNEL).step_by(2).collect()
}

impl SearchQuery {
    pub fn new(target_rf: usize, max_branches: usize) -> Self {
        SearchQuery {
            target_rf,
            max_branches,
            k_candidates: default_k_candidates(),
            objective: Objective::MinParams,
            channels: 64,
            spatial: (1024, 1024),
            scope: CostScope::default(),
        }
    }

    pub fn with_kernels(mut self, ks: &[usize]) -> Self {
        self.k_candidates = ks.to_vec();
        self
    }

    pub fn with_objective(mut self, o: Objective) -> Self {
        self.objective = o;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.target_rf >= 1, "target receptive field must be positive");
        ensure!(
            self.target_rf <= MAX_RF,
            "target receptive field {} exceeds the search cap of {MAX_RF}",
            self.target_rf
        );
        ensure!(
            (1..=MAX_BRANCHES).contains(&self.max_branches),
            "max_branches must be in 1..={MAX_BRANCHES}, got {}",
            self.max_branches
        );
        ensure!(!self.k_candidates.is_empty(), "kernel candidate set is empty");
        for &k in &self.k_candidates {
            ensure!(k % 2 == 1 && k <= MAX_KERNEL, "kernel candidates must be odd and <= {MAX_KERNEL}, got {k}");
        }
        let kmin = *self.k_candidates.iter().min().unwrap();
        ensure!(
            self.target_rf >= kmin,
            "target receptive field {} is below the smallest kernel candidate {kmin}",
            self.target_rf
        );
        ensure!(self.channels >= 1 && self.spatial.0 >= 1 && self.spatial.1 >= 1, "channels and spatial size must be positive");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPlan {
    pub plan: DecompositionPlan,
    pub cost: CostReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub query: SearchQuery,
    /// Best first.
    pub results: Vec<RankedPlan>,
    /// Set when no legal plan reaches the target exactly.
    pub empty: bool,
}

/// All legal plans with receptive field exactly `target` using kernels from
/// `ks` and at most `max_branches` layers, in lexicographic order.
pub fn enumerate_plans(target: usize, max_branches: usize, ks: &[usize]) -> Vec<Vec<KernelSpec>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let roots: Vec<usize> = ks.iter().copied().filter(|&k| k <= target).collect();
    roots
        .par_iter()
        .map(|&k| {
            let mut out = Vec::new();
            let mut chain = vec![KernelSpec::new(k, 1)];
            extend(&mut chain, k, target, max_branches, &ks, &mut out);
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn extend(
    chain: &mut Vec<KernelSpec>,
    rf: usize,
    target: usize,
    max_len: usize,
    ks: &[usize],
    out: &mut Vec<Vec<KernelSpec>>,
) {
    if rf == target {
        out.push(chain.clone());
    }
    if chain.len() == max_len {
        return;
    }
    let last = *chain.last().unwrap();
    for &k in ks.iter().filter(|&&k| k >= last.k) {
        for d in last.d + 1..=rf {
            let next = rf + d * (k - 1);
            if next > target {
                break;
            }
            chain.push(KernelSpec::new(k, d));
            extend(chain, next, target, max_len, ks, out);
            chain.pop();
        }
    }
}

fn objective_value(c: &CostReport, o: Objective) -> u64 {
    match o {
        Objective::MinParams => c.params_without_bias,
        Objective::MinFlops => c.flops,
    }
}

/// Rank every legal plan reaching `q.target_rf`: by objective, then fewer
/// branches, then lexicographic `(k, d)` sequence.
pub fn search_decompositions(q: &SearchQuery) -> Result<SearchOutcome> {
    q.validate()?;
    let mut results: Vec<RankedPlan> = enumerate_plans(q.target_rf, q.max_branches, &q.k_candidates)
        .into_par_iter()
        .map(|specs| {
            let plan = DecompositionPlan::new(specs).expect("enumerated plans are legal");
            let cost = cost_of_plan(&plan, q.channels, q.spatial, q.scope);
            RankedPlan { plan, cost }
        })
        .collect();
    results.sort_by(|a, b| {
        objective_value(&a.cost, q.objective)
            .cmp(&objective_value(&b.cost, q.objective))
            .then(a.plan.len().cmp(&b.plan.len()))
            .then_with(|| a.plan.specs().cmp(b.plan.specs()))
    });
    Ok(SearchOutcome { query: q.clone(), empty: results.is_empty(), results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::validate_plan;

    #[test]
    fn forced_single() {
        let out = search_decompositions(&SearchQuery::new(3, 1)).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].plan.to_string(), "(3,1)");
    }

    #[test]
    fn contains_default_plan() {
        let out = search_decompositions(&SearchQuery::new(23, 2).with_kernels(&[3, 5, 7])).unwrap();
        assert!(out.results.iter().any(|r| r.plan == DecompositionPlan::default_lsk()));
        for r in &out.results {
            assert!(validate_plan(r.plan.specs()).is_ok());
            assert_eq!(r.plan.receptive_field(), 23);
        }
    }

    #[test]
    fn even_target_is_empty() {
        let out = search_decompositions(&SearchQuery::new(24, 3)).unwrap();
        assert!(out.empty);
        assert!(out.results.is_empty());
    }

    #[test]
    fn bad_queries() {
        assert!(search_decompositions(&SearchQuery::new(65, 2)).is_err());
        assert!(search_decompositions(&SearchQuery::new(23, 0)).is_err());
        assert!(search_decompositions(&SearchQuery::new(3, 2).with_kernels(&[5])).is_err());
        assert!(search_decompositions(&SearchQuery::new(23, 2).with_kernels(&[4])).is_err());
    }

    #[test]
    fn ordering_is_total() {
        let out = search_decompositions(&SearchQuery::new(29, 3).with_kernels(&[3, 5, 7, 9])).unwrap();
        for w in out.results.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let ka = (a.cost.params_without_bias, a.plan.len(), a.plan.specs().to_vec());
            let kb = (b.cost.params_without_bias, b.plan.len(), b.plan.specs().to_vec());
            assert!(ka < kb);
        }
    }
}

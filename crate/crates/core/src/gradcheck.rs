//! Central finite-difference checking of analytic gradients.
//!
//! The check only ever calls the forward loss, so it is independent of the
//! VJP code it validates.

use serde::{Deserialize, Serialize};

use crate::params::Params;
use crate::tensor::Tensor;

impl Params for Tensor {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(if prefix.is_empty() { "tensor" } else { prefix }, self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(if prefix.is_empty() { "tensor" } else { prefix }, self);
    }
}

/// Input tensor plus weights, so one check covers every differentiable leaf.
#[derive(Clone, Debug)]
pub struct Leaves<W> {
    pub input: Tensor,
    pub weights: W,
}

impl<W: Params> Params for Leaves<W> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.input.visit(&crate::params::join(prefix, "input"), f);
        self.weights.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.input.visit_mut(&crate::params::join(prefix, "input"), f);
        self.weights.visit_mut(prefix, f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub rel_tol: f64,
    /// Lower bound on the relative-error denominator, guarding coordinates
    /// whose true gradient is near zero.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, rel_tol: 1e-6, floor: 1e-3, max_per_tensor: None }
    }
}

impl GradCheckConfig {
    pub fn with_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_max_per_tensor(mut self, n: usize) -> Self {
        self.max_per_tensor = Some(n);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub rel_tol: f64,
    pub passed: bool,
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` (laid out like `state`) against central differences of `loss`.
pub fn check<P, F>(state: &P, analytic: &P, loss: F, cfg: GradCheckConfig) -> GradCheckReport
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    run(state, analytic, cfg, |work, set| {
        set(work, 1.0);
        let plus = loss(work);
        set(work, -1.0);
        let minus = loss(work);
        (plus - minus) / (2.0 * cfg.eps)
    })
}

/// Shared driver: `numeric(work, set)` returns the central difference for the
/// current coordinate, using `set(work, ±1)` to move it by `±eps`.
fn run<P, N>(state: &P, analytic: &P, cfg: GradCheckConfig, numeric: N) -> GradCheckReport
where
    P: Params + Clone,
    N: Fn(&mut P, &dyn Fn(&mut P, f64)) -> f64,
{
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    analytic.visit("", &mut |name, t| grads.push((name.to_string(), t.data().to_vec())));
    let mut work = state.clone();
    let mut lens = Vec::new();
    work.visit("", &mut |_, t| lens.push(t.len()));
    assert_eq!(lens.len(), grads.len(), "gradient layout does not mirror the state");

    let mut report =
        GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new(), rel_tol: cfg.rel_tol, passed: true };
    for (ti, &len) in lens.iter().enumerate() {
        assert_eq!(len, grads[ti].1.len(), "gradient {} has the wrong length", grads[ti].0);
        let step = match cfg.max_per_tensor {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        for i in (0..len).step_by(step) {
            let orig = nth_value(&mut work, ti, i, None);
            let set = |w: &mut P, sign: f64| {
                nth_value(w, ti, i, Some(orig + sign * cfg.eps));
            };
            let numeric = numeric(&mut work, &set);
            nth_value(&mut work, ti, i, Some(orig));
            let e = rel_err(grads[ti].1[i], numeric, cfg.floor);
            report.checked += 1;
            if e > report.max_rel_err || !e.is_finite() {
                report.max_rel_err = e;
                report.worst = format!("{}[{i}]", grads[ti].0);
            }
        }
    }
    report.passed = report.max_rel_err <= cfg.rel_tol;
    report
}

/// Check a vector-Jacobian product: `analytic` should hold the gradient of
/// `Σ_j <upstream_j, forward(state)_j>`.
///
/// Each central difference is formed per output element before contracting
/// with `upstream`, so rounding in large output values does not swamp the
/// small change a single coordinate makes.
pub fn check_vjp<P, F>(state: &P, analytic: &P, forward: F, upstream: &[Tensor], cfg: GradCheckConfig) -> GradCheckReport
where
    P: Params + Clone,
    F: Fn(&P) -> Vec<Tensor>,
{
    let contract = |plus: &[Tensor], minus: &[Tensor]| -> f64 {
        assert_eq!(plus.len(), upstream.len(), "forward output count does not match upstream");
        let mut acc = 0.0;
        for ((p, m), u) in plus.iter().zip(minus).zip(upstream) {
            assert_eq!(p.shape(), u.shape(), "forward output shape does not match upstream");
            for ((a, b), w) in p.data().iter().zip(m.data()).zip(u.data()) {
                acc += w * (a - b);
            }
        }
        acc
    };
    run(state, analytic, cfg, |work, set| {
        set(work, 1.0);
        let plus = forward(work);
        set(work, -1.0);
        let minus = forward(work);
        contract(&plus, &minus) / (2.0 * cfg.eps)
    })
}

/// Read coordinate `i` of the `ti`-th tensor, optionally writing `set` first.
fn nth_value<P: Params>(p: &mut P, ti: usize, i: usize, set: Option<f64>) -> f64 {
    let mut k = 0;
    let mut out = f64::NAN;
    p.visit_mut("", &mut |_, t| {
        if k == ti {
            if let Some(v) = set {
                t.data_mut()[i] = v;
            }
            out = t.data()[i];
        }
        k += 1;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = |t: &Tensor| t.data().iter().map(|v| v * v * v).sum::<f64>();
        let good = x.map(|v| 3.0 * v * v);
        let r = check(&x, &good, loss, GradCheckConfig::default());
        assert!(r.passed, "{r:?}");
        let bad = x.map(|v| 3.0 * v * v + 1e-3);
        let r = check(&x, &bad, loss, GradCheckConfig::default());
        assert!(!r.passed);
    }
}

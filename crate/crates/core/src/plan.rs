//! Kernel decomposition plans and receptive-field arithmetic.
//!
//! A plan is a serial chain of depthwise kernels `(k_i, d_i)`. Its prefix
//! receptive fields follow `RF_1 = k_1`, `RF_i = d_i (k_i - 1) + RF_{i-1}`.
//! A legal plan has non-decreasing kernel sizes, starts with `d_1 = 1`, and
//! grows dilation strictly while keeping `d_i <= RF_{i-1}` so the dilated taps
//! never skip over a pixel of the previous feature map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub k: usize,
    pub d: usize,
}

impl KernelSpec {
    pub const fn new(k: usize, d: usize) -> Self {
        KernelSpec { k, d }
    }

    /// Spatial extent of the dilated kernel, `d (k - 1) + 1`.
    pub fn extent(&self) -> usize {
        self.d * (self.k - 1) + 1
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.d)
    }
}

/// Receptive field of the whole chain; `0` for an empty chain.
pub fn receptive_field(specs: &[KernelSpec]) -> usize {
    prefix_receptive_fields(specs).last().copied().unwrap_or(0)
}

/// `RF_1..RF_N` for every prefix.
pub fn prefix_receptive_fields(specs: &[KernelSpec]) -> Vec<usize> {
    let mut out = Vec::with_capacity(specs.len());
    let mut rf = 0usize;
    for (i, s) in specs.iter().enumerate() {
        rf = if i == 0 { s.k } else { s.d * s.k.saturating_sub(1) + rf };
        out.push(rf);
    }
    out
}

/// One broken decomposition constraint. Indices are zero-based positions in the chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    EvenOrZeroKernel { index: usize, k: usize },
    ZeroDilation { index: usize },
    FirstDilationNotOne { d: usize },
    KernelDecreasing { index: usize, prev_k: usize, k: usize },
    DilationNotIncreasing { index: usize, prev_d: usize, d: usize },
    DilationExceedsRf { index: usize, d: usize, prev_rf: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Human-facing messages use one-based branch numbers.
        match *self {
            Violation::Empty => write!(f, "plan has no kernels"),
            Violation::EvenOrZeroKernel { index, k } => write!(f, "k_{} = {k} must be odd and positive", index + 1),
            Violation::ZeroDilation { index } => write!(f, "d_{} must be >= 1", index + 1),
            Violation::FirstDilationNotOne { d } => write!(f, "d_1 = {d} must equal 1"),
            Violation::KernelDecreasing { index, prev_k, k } => {
                write!(f, "k_{} = {k} is smaller than k_{} = {prev_k}", index + 1, index)
            }
            Violation::DilationNotIncreasing { index, prev_d, d } => {
                write!(f, "d_{} = {d} must exceed d_{} = {prev_d}", index + 1, index)
            }
            Violation::DilationExceedsRf { index, d, prev_rf } => {
                write!(f, "d_{} = {d} exceeds RF_{} = {prev_rf}", index + 1, index)
            }
        }
    }
}

/// Check every decomposition constraint, reporting all violations found.
pub fn validate_plan(specs: &[KernelSpec]) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if specs.is_empty() {
        return Err(vec![Violation::Empty]);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.k == 0 || s.k % 2 == 0 {
            v.push(Violation::EvenOrZeroKernel { index: i, k: s.k });
        }
        if s.d == 0 {
            v.push(Violation::ZeroDilation { index: i });
        }
    }
    if specs[0].d != 1 {
        v.push(Violation::FirstDilationNotOne { d: specs[0].d });
    }
    let rf = prefix_receptive_fields(specs);
    for i in 1..specs.len() {
        let (prev, cur) = (specs[i - 1], specs[i]);
        if prev.k > cur.k {
            v.push(Violation::KernelDecreasing { index: i, prev_k: prev.k, k: cur.k });
        }
        if prev.d >= cur.d {
            v.push(Violation::DilationNotIncreasing { index: i, prev_d: prev.d, d: cur.d });
        }
        if cur.d > rf[i - 1] {
            v.push(Violation::DilationExceedsRf { index: i, d: cur.d, prev_rf: rf[i - 1] });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// A validated decomposition with its cached prefix receptive fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<KernelSpec>", into = "Vec<KernelSpec>")]
pub struct DecompositionPlan {
    specs: Vec<KernelSpec>,
    rf: Vec<usize>,
}

impl DecompositionPlan {
    pub fn new(specs: Vec<KernelSpec>) -> Result<Self> {
        validate_plan(&specs).map_err(|vs| {
            let msgs: Vec<String> = vs.iter().map(ToString::to_string).collect();
            Error::contract(format!("invalid decomposition plan: {}", msgs.join("; ")))
        })?;
        let rf = prefix_receptive_fields(&specs);
        Ok(DecompositionPlan { specs, rf })
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(k, d)| KernelSpec::new(k, d)).collect())
    }

    /// `(5,1) -> (7,3)`: two branches, receptive field 23.
    pub fn default_lsk() -> Self {
        Self::from_pairs(&[(5, 1), (7, 3)]).expect("default plan is valid")
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    pub fn prefix_rf(&self) -> &[usize] {
        &self.rf
    }

    pub fn receptive_field(&self) -> usize {
        *self.rf.last().expect("plans are non-empty")
    }

    /// Number of branches `N`.
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for DecompositionPlan {
    fn default() -> Self {
        Self::default_lsk()
    }
}

impl TryFrom<Vec<KernelSpec>> for DecompositionPlan {
    type Error = Error;

    fn try_from(v: Vec<KernelSpec>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DecompositionPlan> for Vec<KernelSpec> {
    fn from(p: DecompositionPlan) -> Self {
        p.specs
    }
}

impl fmt::Display for DecompositionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_chain(&self.specs, f)
    }
}

pub(crate) fn fmt_chain(specs: &[KernelSpec], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for (i, s) in specs.iter().enumerate() {
        if i > 0 {
            f.write_str("->")?;
        }
        write!(f, "{s}")?;
    }
    Ok(())
}

/// Parse `(5,1)->(7,3)`, `5,1;7,3` or `5:1,7:3` into raw specs (not validated).
pub fn parse_specs(s: &str) -> Result<Vec<KernelSpec>> {
    let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::contract(format!("cannot parse kernel chain {s:?}; expected e.g. (5,1)->(7,3)"));
    let pairs: Vec<&str> = if cleaned.contains("->") {
        cleaned.split("->").collect()
    } else if cleaned.contains(';') {
        cleaned.split(';').collect()
    } else if cleaned.contains(':') {
        cleaned.split(',').collect()
    } else {
        vec![cleaned.as_str()]
    };
    pairs
        .into_iter()
        .map(|p| {
            let p = p.trim_start_matches('(').trim_end_matches(')');
            let (k, d) = p.split_once(',').or_else(|| p.split_once(':')).ok_or_else(bad)?;
            Ok(KernelSpec::new(k.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?))
        })
        .collect()
}

impl FromStr for DecompositionPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(parse_specs(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks(p: &[(usize, usize)]) -> Vec<KernelSpec> {
        p.iter().map(|&(k, d)| KernelSpec::new(k, d)).collect()
    }

    #[test]
    fn table_rows() {
        assert_eq!(receptive_field(&ks(&[(5, 1), (7, 3)])), 23);
        assert_eq!(receptive_field(&ks(&[(3, 1), (5, 2), (7, 3)])), 29);
        assert_eq!(receptive_field(&ks(&[(5, 1), (7, 4)])), 29);
        assert_eq!(receptive_field(&ks(&[(9, 1)])), 9);
        assert_eq!(receptive_field(&[]), 0);
    }

    #[test]
    fn violations() {
        assert!(validate_plan(&ks(&[(5, 1), (7, 3)])).is_ok());
        assert_eq!(
            validate_plan(&ks(&[(5, 1), (7, 6)])).unwrap_err(),
            vec![Violation::DilationExceedsRf { index: 1, d: 6, prev_rf: 5 }]
        );
        assert_eq!(
            validate_plan(&ks(&[(5, 2), (7, 3)])).unwrap_err(),
            vec![Violation::FirstDilationNotOne { d: 2 }]
        );
        let v = validate_plan(&ks(&[(7, 1), (5, 1)])).unwrap_err();
        assert!(v.contains(&Violation::KernelDecreasing { index: 1, prev_k: 7, k: 5 }));
        assert!(v.contains(&Violation::DilationNotIncreasing { index: 1, prev_d: 1, d: 1 }));
        assert_eq!(validate_plan(&[]).unwrap_err(), vec![Violation::Empty]);
        assert_eq!(
            Violation::DilationExceedsRf { index: 1, d: 6, prev_rf: 5 }.to_string(),
            "d_2 = 6 exceeds RF_1 = 5"
        );
    }

    #[test]
    fn parse_forms() {
        let want = ks(&[(5, 1), (7, 3)]);
        assert_eq!(parse_specs("(5,1)->(7,3)").unwrap(), want);
        assert_eq!(parse_specs("5,1;7,3").unwrap(), want);
        assert_eq!(parse_specs("5:1,7:3").unwrap(), want);
        assert_eq!(parse_specs("(23, 1)").unwrap(), ks(&[(23, 1)]));
        assert!(parse_specs("5;7").is_err());
        let p: DecompositionPlan = "(3,1)->(5,2)->(7,3)".parse().unwrap();
        assert_eq!(p.prefix_rf(), &[3, 11, 29]);
        assert_eq!(p.to_string(), "(3,1)->(5,2)->(7,3)");
        assert!("(5,1)->(7,6)".parse::<DecompositionPlan>().is_err());
    }

    #[test]
    fn serde_validates() {
        let p = DecompositionPlan::default_lsk();
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(j, r#"[{"k":5,"d":1},{"k":7,"d":3}]"#);
        assert_eq!(serde_json::from_str::<DecompositionPlan>(&j).unwrap(), p);
        assert!(serde_json::from_str::<DecompositionPlan>(r#"[{"k":5,"d":2}]"#).is_err());
    }
}

//! Named parameter traversal shared by initialization, weight bundles,
//! gradient checking and element counting.

use crate::nn::{Affine, ConvWeights};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// A set of named parameter tensors with a stable visiting order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for ConvWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

impl Params for Affine {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "scale"), &self.scale);
        f(&join(prefix, "shift"), &self.shift);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Conv weights `std * z` with `z` truncated to `[-2, 2]`; biases zero; norms identity.
    TruncatedNormal { std: f64 },
    /// Every parameter perturbed by `std * z`; norm scales centred on one.
    /// Used for gradient checks, where zero biases would hide errors.
    Normal { std: f64 },
}

impl Init {
    pub fn conv(self, w: ConvWeights, rng: &mut SplitMix64) -> ConvWeights {
        match self {
            Init::TruncatedNormal { std } => w.init_truncated_normal(rng, std),
            Init::Normal { std } => w.init_normal(rng, std),
        }
    }

    pub fn affine(self, channels: usize, rng: &mut SplitMix64) -> Affine {
        match self {
            Init::TruncatedNormal { .. } => Affine::identity(channels),
            Init::Normal { std } => Affine::identity(channels).init_normal(rng, std),
        }
    }
}

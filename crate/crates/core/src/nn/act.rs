//! Elementwise activations, residual addition and the per-channel affine norm.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{ensure, Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Largest `f64` below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept inside the open interval `(0, 1)`: for `|x|`
/// beyond about 36.7 (upper) or 745 (lower) the rounded value is pinned to
/// the nearest representable interior value.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::from_bits(1), BELOW_ONE)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_vjp(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::shape_mismatch("sigmoid_vjp", x.shape(), upstream.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| {
            let s = sigmoid_scalar(v);
            g * s * (1.0 - s)
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_vjp(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::shape_mismatch("gelu_vjp", x.shape(), upstream.shape()));
    }
    let data = x.data().iter().zip(upstream.data()).map(|(&v, &g)| g * gelu_grad_scalar(v)).collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn residual_add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::shape_mismatch("residual_add", x.shape(), y.shape()));
    }
    x.add(y)
}

/// Per-channel `scale * x + shift`, standing in for a frozen batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    /// `(C, 1, 1, 1)`.
    pub scale: Tensor,
    /// `(C, 1, 1, 1)`.
    pub shift: Tensor,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Affine { scale: Tensor::full([channels, 1, 1, 1], 1.0), shift: Tensor::zeros([channels, 1, 1, 1]) }
    }

    pub fn zeros(channels: usize) -> Self {
        Affine { scale: Tensor::zeros([channels, 1, 1, 1]), shift: Tensor::zeros([channels, 1, 1, 1]) }
    }

    pub fn init_normal(mut self, rng: &mut SplitMix64, std: f64) -> Self {
        for v in self.scale.data_mut() {
            *v = 1.0 + std * rng.next_normal();
        }
        for v in self.shift.data_mut() {
            *v = std * rng.next_normal();
        }
        self
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        ensure!(
            self.scale.len() == x.shape().c && self.shift.len() == x.shape().c,
            "affine norm has {} channels, input is {}",
            self.scale.len(),
            x.shape()
        );
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let s = x.shape();
        let mut out = x.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let (a, b) = (self.scale.data()[c], self.shift.data()[c]);
                for v in out.plane_mut(n, c) {
                    *v = a * *v + b;
                }
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grads_shaped_like_self)`.
    pub fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<(Tensor, Affine)> {
        self.check(x)?;
        if x.shape() != upstream.shape() {
            return Err(Error::shape_mismatch("affine_vjp", x.shape(), upstream.shape()));
        }
        let s = x.shape();
        let mut gx = upstream.clone();
        let mut g = Affine::zeros(s.c);
        for c in 0..s.c {
            let a = self.scale.data()[c];
            let (mut gs, mut gb) = (0.0, 0.0);
            for n in 0..s.n {
                for (&u, &v) in upstream.plane(n, c).iter().zip(x.plane(n, c)) {
                    gs += u * v;
                    gb += u;
                }
                for v in gx.plane_mut(n, c) {
                    *v *= a;
                }
            }
            g.scale.data_mut()[c] = gs;
            g.shift.data_mut()[c] = gb;
        }
        Ok((gx, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_saturation_stays_open() {
        for x in [40.0, 1e3, f64::INFINITY] {
            assert!(sigmoid_scalar(x) < 1.0);
        }
        for x in [-800.0, -1e6, f64::NEG_INFINITY] {
            assert!(sigmoid_scalar(x) > 0.0);
        }
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn fixed_points() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_grad_scalar(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_range_and_monotone() {
        let mut prev = 0.0;
        for i in -300..=300 {
            let s = sigmoid_scalar(i as f64 * 0.1);
            assert!(s > 0.0 && s < 1.0);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn gelu_matches_known_values() {
        // Φ(1) = 0.8413447460685429
        assert!((gelu_scalar(1.0) - 0.8413447460685429).abs() < 1e-15);
        assert!((gelu_scalar(-1.0) + 0.15865525393145707).abs() < 1e-15);
    }

    #[test]
    fn residual_add_shapes() {
        let a = Tensor::full([1, 1, 2, 2], 1.0);
        assert_eq!(residual_add(&a, &a).unwrap().data(), &[2.0; 4]);
        assert!(residual_add(&a, &Tensor::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn affine_identity() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![3.0, -4.0]).unwrap();
        assert_eq!(Affine::identity(2).forward(&x).unwrap(), x);
        assert!(Affine::identity(3).forward(&x).is_err());
    }
}

//! Dense rank-4 `f64` tensors in NCHW layout.
//!
//! Tensors own a contiguous row-major buffer (batch outermost, width
//! innermost). There are no views, strides or implicit broadcasting: every
//! operation that combines two tensors checks their shapes explicitly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Element count, or `None` if it does not fit in `usize`.
    pub fn checked_numel(&self) -> Option<usize> {
        self.n.checked_mul(self.c)?.checked_mul(self.h)?.checked_mul(self.w)
    }

    pub fn numel(&self) -> usize {
        self.checked_numel().expect("shape element count overflows usize")
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Sampling distribution for [`Tensor::seeded_fill`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    /// Like [`Tensor::zeros`] but reports allocation failure instead of aborting.
    pub fn try_zeros(shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        let len = shape
            .checked_numel()
            .ok_or_else(|| Error::Resource(format!("element count of {shape} overflows")))?;
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|e| Error::Resource(format!("cannot allocate {shape}: {e}")))?;
        data.resize(len, 0.0);
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        ensure!(
            shape.checked_numel() == Some(data.len()),
            "tensor of shape {shape} needs {} elements, got {}",
            shape.numel(),
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    /// Deterministic fill from a [`SplitMix64`] stream seeded with `seed`.
    ///
    /// Normal samples use Box-Muller over consecutive uniform pairs, so a given
    /// seed produces the same bytes on every platform with IEEE `ln`/`cos`.
    pub fn seeded_fill(shape: impl Into<Shape>, seed: u64, dist: Distribution) -> Result<Self> {
        let shape = shape.into();
        match dist {
            Distribution::Uniform { lo, hi } => {
                ensure!(lo <= hi, "uniform bounds need lo <= hi, got [{lo}, {hi}]")
            }
            Distribution::Normal { std, .. } => ensure!(std >= 0.0, "normal std must be >= 0, got {std}"),
        }
        let mut rng = SplitMix64::new(seed);
        let mut t = Tensor::try_zeros(shape)?;
        match dist {
            Distribution::Uniform { lo, hi } => {
                for v in &mut t.data {
                    *v = lo + (hi - lo) * rng.next_f64();
                }
            }
            Distribution::Normal { mean, std } => {
                for v in &mut t.data {
                    *v = mean + std * rng.next_normal();
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `H x W` plane of batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch(op, self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "elementwise_mul", |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// In-place `self += other`; the accumulation primitive used by every VJP.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch("accumulate", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch("dot", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape;
        ensure!(
            start + len <= s.c,
            "channel slice {start}..{} out of range for {s}",
            start + len
        );
        let p = s.plane();
        let mut out = Tensor::zeros(s.with_c(len));
        for n in 0..s.n {
            let src = &self.data[(n * s.c + start) * p..(n * s.c + start + len) * p];
            out.data[n * len * p..(n + 1) * len * p].copy_from_slice(src);
        }
        Ok(out)
    }
}

/// Stack tensors along the channel axis; part `j` occupies the `j`-th band.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_channels: empty part list"))?
        .shape;
    for (j, t) in parts.iter().enumerate() {
        let s = t.shape;
        ensure!(
            s.n == first.n && s.h == first.h && s.w == first.w,
            "concat_channels: part {j} has shape {s}, expected N, H, W of {first}"
        );
    }
    let total_c: usize = parts.iter().map(|t| t.shape.c).sum();
    let p = first.plane();
    let mut data = Vec::with_capacity(first.n * total_c * p);
    for n in 0..first.n {
        for t in parts {
            let band = t.shape.c * p;
            data.extend_from_slice(&t.data[n * band..(n + 1) * band]);
        }
    }
    Tensor::from_vec(first.with_c(total_c), data)
}

/// `out[n, c, y, x] = x[n, c, y, x] * map[n, 0, y, x]`: a per-pixel gate
/// shared by every channel. The map must have exactly one channel.
pub fn gate_by_map(x: &Tensor, map: &Tensor) -> Result<Tensor> {
    let (s, m) = (x.shape, map.shape);
    ensure!(
        m.c == 1 && m.n == s.n && m.h == s.h && m.w == s.w,
        "gate_by_map: map shape {m} incompatible with {s}"
    );
    let mut out = x.clone();
    for n in 0..s.n {
        let g = map.plane(n, 0);
        for c in 0..s.c {
            for (v, &gv) in out.plane_mut(n, c).iter_mut().zip(g) {
                *v *= gv;
            }
        }
    }
    Ok(out)
}

/// Sum over channels into a one-channel tensor: the adjoint of [`gate_by_map`]
/// with respect to the map.
pub fn channel_sum(x: &Tensor) -> Tensor {
    let s = x.shape;
    let mut out = Tensor::zeros(s.with_c(1));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c).to_vec();
            for (o, v) in out.plane_mut(n, 0).iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out
}

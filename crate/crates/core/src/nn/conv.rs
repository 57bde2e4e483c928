//! Zero-padded "same" 2-D convolution, depthwise or dense, with optional
//! dilation and stride.
//!
//! Padding is fixed at `d * (k - 1) / 2`, so stride-1 convolutions preserve
//! `H x W` and stride-`s` ones produce `ceil(H / s) x ceil(W / s)`.
//!
//! Every output element is accumulated as `bias + Σ w * x` over
//! `(input channel, kernel row, kernel column)` in lexicographic order, with
//! out-of-bounds taps skipped. The row-blocked loops below keep that order per
//! element, which is what makes them bitwise equal to the direct definition.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::exec::for_each_slab;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    /// One filter per channel; `out_channels == in_channels`.
    Depthwise,
    /// Every output channel sees every input channel.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub kind: ConvKind,
    pub k: usize,
    pub dilation: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out_channels, in_per_group, k, k)`.
    pub weight: Tensor,
    /// `(out_channels, 1, 1, 1)`.
    pub bias: Option<Tensor>,
}

impl ConvWeights {
    pub fn zeros(kind: ConvKind, in_channels: usize, out_channels: usize, k: usize, dilation: usize) -> Self {
        let per_group = match kind {
            ConvKind::Depthwise => 1,
            ConvKind::Dense => in_channels,
        };
        ConvWeights {
            kind,
            k,
            dilation,
            stride: 1,
            in_channels,
            out_channels,
            weight: Tensor::zeros([out_channels, per_group, k, k]),
            bias: Some(Tensor::zeros([out_channels, 1, 1, 1])),
        }
    }

    pub fn depthwise(channels: usize, k: usize, dilation: usize) -> Self {
        Self::zeros(ConvKind::Depthwise, channels, channels, k, dilation)
    }

    pub fn dense(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self::zeros(ConvKind::Dense, in_channels, out_channels, k, 1)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::dense(in_channels, out_channels, 1)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    /// Fill weights with `std * z`, `z` truncated standard normal; biases stay as they are.
    pub fn init_truncated_normal(mut self, rng: &mut SplitMix64, std: f64) -> Self {
        for v in self.weight.data_mut() {
            *v = std * rng.next_truncated_normal();
        }
        self
    }

    /// Fill weights and biases with `std * z`, `z` standard normal.
    pub fn init_normal(mut self, rng: &mut SplitMix64, std: f64) -> Self {
        for v in self.weight.data_mut() {
            *v = std * rng.next_normal();
        }
        if let Some(b) = self.bias.as_mut() {
            for v in b.data_mut() {
                *v = std * rng.next_normal();
            }
        }
        self
    }

    pub fn in_per_group(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => 1,
            ConvKind::Dense => self.in_channels,
        }
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.k.saturating_sub(1)) / 2
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    pub fn bias_count(&self) -> usize {
        self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1 && self.k % 2 == 1, "kernel size must be odd and positive, got {}", self.k);
        ensure!(self.dilation >= 1, "dilation must be >= 1, got {}", self.dilation);
        ensure!(self.stride >= 1, "stride must be >= 1, got {}", self.stride);
        ensure!(
            self.in_channels >= 1 && self.out_channels >= 1,
            "channel counts must be positive, got {} -> {}",
            self.in_channels,
            self.out_channels
        );
        if self.kind == ConvKind::Depthwise {
            ensure!(
                self.in_channels == self.out_channels,
                "depthwise conv needs out == in channels, got {} -> {}",
                self.in_channels,
                self.out_channels
            );
        }
        let expect = Shape::new(self.out_channels, self.in_per_group(), self.k, self.k);
        ensure!(
            self.weight.shape() == expect,
            "conv weight shape {} does not match expected {expect}",
            self.weight.shape()
        );
        if let Some(b) = &self.bias {
            let expect = Shape::new(self.out_channels, 1, 1, 1);
            ensure!(b.shape() == expect, "conv bias shape {} does not match expected {expect}", b.shape());
        }
        Ok(())
    }

    fn check_input(&self, x: Shape) -> Result<()> {
        self.validate()?;
        ensure!(
            x.c == self.in_channels,
            "conv expects {} input channels, got input {x}",
            self.in_channels
        );
        ensure!(x.h >= 1 && x.w >= 1, "conv input needs H, W >= 1, got {x}");
        Ok(())
    }

    pub fn output_shape(&self, x: Shape) -> Shape {
        Shape::new(x.n, self.out_channels, x.h.div_ceil(self.stride), x.w.div_ceil(self.stride))
    }

    /// Input channels feeding output channel `o`.
    #[inline]
    fn group_inputs(&self, o: usize) -> std::ops::Range<usize> {
        match self.kind {
            ConvKind::Depthwise => o..o + 1,
            ConvKind::Dense => 0..self.in_channels,
        }
    }

    /// Output rows (or columns) `lo..hi` whose tap at offset `tap` lands inside `0..len`.
    #[inline]
    fn valid_range(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let pad = self.padding() as isize;
        let s = self.stride as isize;
        let t = tap as isize;
        // Need 0 <= o*s + t - pad < len.
        let lo = (pad - t).max(0);
        let lo = (lo + s - 1) / s;
        let hi_excl = len as isize + pad - t; // o*s < hi_excl
        let hi = if hi_excl <= 0 { 0 } else { (hi_excl + s - 1) / s };
        let hi = hi.min(out_len as isize);
        (lo as usize, (hi.max(lo)) as usize)
    }

    #[inline]
    fn src_index(&self, o: usize, tap: usize) -> usize {
        o * self.stride + tap - self.padding()
    }
}

/// Forward convolution.
pub fn conv2d_forward(x: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    let xs = x.shape();
    w.check_input(xs)?;
    let os = w.output_shape(xs);
    let mut out = Tensor::try_zeros(os)?;
    let plane = os.plane();
    let kk = w.k * w.k;
    let per_group = w.in_per_group();
    let wd = w.weight.data();
    for_each_slab(out.data_mut(), plane, |slab, dst| {
        let (n, o) = (slab / os.c, slab % os.c);
        let b = w.bias.as_ref().map_or(0.0, |b| b.data()[o]);
        dst.fill(b);
        for (gi, c) in w.group_inputs(o).enumerate() {
            let src = x.plane(n, c);
            let wbase = (o * per_group + gi) * kk;
            for i in 0..w.k {
                let (y0, y1) = w.valid_range(w.dilation * i, xs.h, os.h);
                for oy in y0..y1 {
                    let iy = w.src_index(oy, w.dilation * i);
                    let src_row = &src[iy * xs.w..(iy + 1) * xs.w];
                    let dst_row = &mut dst[oy * os.w..(oy + 1) * os.w];
                    for j in 0..w.k {
                        let wv = wd[wbase + i * w.k + j];
                        let tap = w.dilation * j;
                        let (x0, x1) = w.valid_range(tap, xs.w, os.w);
                        if x0 >= x1 {
                            continue;
                        }
                        if w.stride == 1 {
                            let shift = x0 + tap - w.padding();
                            let len = x1 - x0;
                            for (d, s) in dst_row[x0..x1].iter_mut().zip(&src_row[shift..shift + len]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst_row[ox] += wv * src_row[w.src_index(ox, tap)];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Vector-Jacobian product of [`conv2d_forward`] at `x` for cotangent `upstream`.
#[derive(Clone, Debug)]
pub struct ConvVjp {
    /// Gradients laid out exactly like the forward weights.
    pub weights: ConvWeights,
    pub input: Tensor,
}

pub fn conv2d_vjp(x: &Tensor, w: &ConvWeights, upstream: &Tensor) -> Result<ConvVjp> {
    let xs = x.shape();
    w.check_input(xs)?;
    let os = w.output_shape(xs);
    if upstream.shape() != os {
        return Err(Error::shape_mismatch("conv2d_vjp upstream", upstream.shape(), os));
    }
    let kk = w.k * w.k;
    let per_group = w.in_per_group();
    let wd = w.weight.data();

    // Input gradient: one task per batch element.
    let mut gin = Tensor::try_zeros(xs)?;
    for_each_slab(gin.data_mut(), xs.c * xs.plane(), |n, dst| {
        for o in 0..os.c {
            let up = upstream.plane(n, o);
            for (gi, c) in w.group_inputs(o).enumerate() {
                let dplane = &mut dst[c * xs.plane()..(c + 1) * xs.plane()];
                let wbase = (o * per_group + gi) * kk;
                for i in 0..w.k {
                    let (y0, y1) = w.valid_range(w.dilation * i, xs.h, os.h);
                    for j in 0..w.k {
                        let wv = wd[wbase + i * w.k + j];
                        let (x0, x1) = w.valid_range(w.dilation * j, xs.w, os.w);
                        for oy in y0..y1 {
                            let iy = w.src_index(oy, w.dilation * i);
                            for ox in x0..x1 {
                                let ix = w.src_index(ox, w.dilation * j);
                                dplane[iy * xs.w + ix] += wv * up[oy * os.w + ox];
                            }
                        }
                    }
                }
            }
        }
    });

    // Weight gradient: one task per output channel.
    let mut gw = w.clone();
    for_each_slab(gw.weight.data_mut(), per_group * kk, |o, dst| {
        for (gi, c) in w.group_inputs(o).enumerate() {
            for i in 0..w.k {
                let (y0, y1) = w.valid_range(w.dilation * i, xs.h, os.h);
                for j in 0..w.k {
                    let (x0, x1) = w.valid_range(w.dilation * j, xs.w, os.w);
                    let mut acc = 0.0;
                    for n in 0..xs.n {
                        let up = upstream.plane(n, o);
                        let src = x.plane(n, c);
                        for oy in y0..y1 {
                            let iy = w.src_index(oy, w.dilation * i);
                            for ox in x0..x1 {
                                let ix = w.src_index(ox, w.dilation * j);
                                acc += up[oy * os.w + ox] * src[iy * xs.w + ix];
                            }
                        }
                    }
                    dst[gi * kk + i * w.k + j] = acc;
                }
            }
        }
    });
    if let Some(b) = gw.bias.as_mut() {
        for (o, g) in b.data_mut().iter_mut().enumerate() {
            *g = (0..os.n).map(|n| upstream.plane(n, o).iter().sum::<f64>()).sum();
        }
    }
    Ok(ConvVjp { weights: gw, input: gin })
}

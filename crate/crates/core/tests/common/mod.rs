//! Conversions between library types and the oracle's raw arrays.
#![allow(dead_code)]

use lsk_core::lsk::LskWeights;
use lsk_core::nn::{ConvKind, ConvWeights, PoolMode};
use lsk_core::{Distribution, Shape, Tensor};
use lsk_oracles::{Arr, RawConv, RawLsk};

pub fn normal(shape: impl Into<Shape>, seed: u64, std: f64) -> Tensor {
    Tensor::seeded_fill(shape, seed, Distribution::Normal { mean: 0.0, std }).unwrap()
}

pub fn to_arr(t: &Tensor) -> Arr {
    Arr::new(t.shape().dims(), t.data().to_vec())
}

pub fn to_raw(w: &ConvWeights) -> RawConv {
    RawConv {
        depthwise: w.kind == ConvKind::Depthwise,
        k: w.k,
        dilation: w.dilation,
        stride: w.stride,
        out_channels: w.out_channels,
        weight: w.weight.data().to_vec(),
        bias: w.bias.as_ref().map(|b| b.data().to_vec()),
    }
}

pub fn to_raw_lsk(w: &LskWeights, pooling: PoolMode) -> RawLsk {
    RawLsk {
        dw: w.dw.iter().map(to_raw).collect(),
        proj: w.proj.iter().map(to_raw).collect(),
        select: to_raw(w.select.as_ref().expect("spatial selection weights")),
        fuse: to_raw(&w.fuse),
        use_avg: pooling != PoolMode::Max,
        use_max: pooling != PoolMode::Avg,
    }
}

//! Channel-wise and global pooling.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
    /// Two channels: average first, maximum second.
    Both,
}

impl PoolMode {
    pub fn channels(self) -> usize {
        match self {
            PoolMode::Avg | PoolMode::Max => 1,
            PoolMode::Both => 2,
        }
    }
}

/// Pool across channels at every pixel.
pub fn channel_pool(x: &Tensor, mode: PoolMode) -> Result<Tensor> {
    let s = x.shape();
    ensure!(s.c >= 1, "channel_pool needs at least one channel, got {s}");
    let mut out = Tensor::zeros(s.with_c(mode.channels()));
    let inv_c = 1.0 / s.c as f64;
    for n in 0..s.n {
        for p in 0..s.plane() {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for c in 0..s.c {
                let v = x.plane(n, c)[p];
                sum += v;
                if v > max {
                    max = v;
                }
            }
            let avg = sum * inv_c;
            match mode {
                PoolMode::Avg => out.plane_mut(n, 0)[p] = avg,
                PoolMode::Max => out.plane_mut(n, 0)[p] = max,
                PoolMode::Both => {
                    out.plane_mut(n, 0)[p] = avg;
                    out.plane_mut(n, 1)[p] = max;
                }
            }
        }
    }
    Ok(out)
}

/// Index of the maximum channel at plane offset `p`, lowest index on ties.
fn argmax_channel(x: &Tensor, n: usize, p: usize) -> usize {
    let mut best = 0;
    let mut max = f64::NEG_INFINITY;
    for c in 0..x.shape().c {
        let v = x.plane(n, c)[p];
        if v > max {
            max = v;
            best = c;
        }
    }
    best
}

/// VJP of [`channel_pool`]. Max routes the whole cotangent to the argmax channel.
pub fn channel_pool_vjp(x: &Tensor, mode: PoolMode, upstream: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    ensure!(s.c >= 1, "channel_pool needs at least one channel, got {s}");
    let expect = s.with_c(mode.channels());
    if upstream.shape() != expect {
        return Err(Error::shape_mismatch("channel_pool_vjp upstream", upstream.shape(), expect));
    }
    let mut g = Tensor::zeros(s);
    let inv_c = 1.0 / s.c as f64;
    let (avg_ch, max_ch) = match mode {
        PoolMode::Avg => (Some(0), None),
        PoolMode::Max => (None, Some(0)),
        PoolMode::Both => (Some(0), Some(1)),
    };
    for n in 0..s.n {
        for p in 0..s.plane() {
            if let Some(a) = avg_ch {
                let ga = upstream.plane(n, a)[p] * inv_c;
                for c in 0..s.c {
                    g.plane_mut(n, c)[p] += ga;
                }
            }
            if let Some(m) = max_ch {
                let c = argmax_channel(x, n, p);
                g.plane_mut(n, c)[p] += upstream.plane(n, m)[p];
            }
        }
    }
    Ok(g)
}

/// Spatial mean per channel: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    ensure!(s.h >= 1 && s.w >= 1, "global_avg_pool needs H, W >= 1, got {s}");
    let mut out = Tensor::zeros([s.n, s.c, 1, 1]);
    let inv = 1.0 / s.plane() as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            out.set(n, c, 0, 0, x.plane(n, c).iter().sum::<f64>() * inv);
        }
    }
    Ok(out)
}

pub fn global_avg_pool_vjp(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let expect = crate::tensor::Shape::new(s.n, s.c, 1, 1);
    if upstream.shape() != expect {
        return Err(Error::shape_mismatch("global_avg_pool_vjp upstream", upstream.shape(), expect));
    }
    let mut g = Tensor::zeros(s);
    let inv = 1.0 / s.plane() as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            let v = upstream.at(n, c, 0, 0) * inv;
            g.plane_mut(n, c).fill(v);
        }
    }
    Ok(g)
}

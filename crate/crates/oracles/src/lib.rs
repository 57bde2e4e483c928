//! Reference implementations written straight from the definitions, with no
//! dependency on `lsk-core`. Tests compare the optimized library against
//! these; nothing here is tuned for speed.

/// A dense NCHW array.
#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Arr { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Arr { dims, data }
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + y) * ww + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }
}

/// One convolution layer as raw arrays.
#[derive(Clone, Debug)]
pub struct RawConv {
    pub depthwise: bool,
    pub k: usize,
    pub dilation: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// `(out, in_per_group, k, k)` flattened.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Direct-sum convolution: for every output element, start from the bias and
/// add `w * x` over input channel, kernel row and kernel column in that order,
/// skipping taps that fall in the zero padding.
pub fn conv_direct(x: &Arr, w: &RawConv) -> Arr {
    let [n_b, c_in, h, wd] = x.dims;
    let pad = (w.dilation * (w.k - 1) / 2) as isize;
    let ho = h.div_ceil(w.stride);
    let wo = wd.div_ceil(w.stride);
    let per_group = if w.depthwise { 1 } else { c_in };
    let mut out = Arr::zeros([n_b, w.out_channels, ho, wo]);
    for n in 0..n_b {
        for o in 0..w.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = match &w.bias {
                        Some(b) => b[o],
                        None => 0.0,
                    };
                    for g in 0..per_group {
                        let c = if w.depthwise { o } else { g };
                        for i in 0..w.k {
                            for j in 0..w.k {
                                let iy = (oy * w.stride) as isize + (w.dilation * i) as isize - pad;
                                let ix = (ox * w.stride) as isize + (w.dilation * j) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let wv = w.weight[((o * per_group + g) * w.k + i) * w.k + j];
                                acc += wv * x.get(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    let at = out.idx(n, o, oy, ox);
                    out.data[at] = acc;
                }
            }
        }
    }
    out
}

/// Raw weights of a spatial-selection LSK module.
#[derive(Clone, Debug)]
pub struct RawLsk {
    pub dw: Vec<RawConv>,
    pub proj: Vec<RawConv>,
    pub select: RawConv,
    pub fuse: RawConv,
    /// Use channel mean in the pooled descriptor.
    pub use_avg: bool,
    /// Use channel max in the pooled descriptor (after the mean when both).
    pub use_max: bool,
}

/// Transliteration of the LSK equations for a spatial-selection module.
/// Returns the output and the per-branch sigmoid masks.
pub fn lsk_direct(x: &Arr, m: &RawLsk) -> (Arr, Vec<Arr>) {
    let [nb, c, h, w] = x.dims;
    let nbr = m.dw.len();

    let mut feats = Vec::new();
    let mut cur = x.clone();
    for dw in &m.dw {
        cur = conv_direct(&cur, dw);
        feats.push(cur.clone());
    }
    let mut branch = Vec::new();
    for i in 0..nbr {
        branch.push(conv_direct(&feats[i], &m.proj[i]));
    }

    let pc = m.use_avg as usize + m.use_max as usize;
    let mut pooled = Arr::zeros([nb, pc, h, w]);
    for n in 0..nb {
        for y in 0..h {
            for xx in 0..w {
                let mut vals = Vec::new();
                for b in &branch {
                    for ch in 0..c {
                        vals.push(b.get(n, ch, y, xx));
                    }
                }
                let mut slot = 0;
                if m.use_avg {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let at = pooled.idx(n, slot, y, xx);
                    pooled.data[at] = mean;
                    slot += 1;
                }
                if m.use_max {
                    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let at = pooled.idx(n, slot, y, xx);
                    pooled.data[at] = mx;
                }
            }
        }
    }

    let logits = conv_direct(&pooled, &m.select);
    let mut masks = Vec::new();
    for i in 0..nbr {
        let mut mk = Arr::zeros([nb, 1, h, w]);
        for n in 0..nb {
            for y in 0..h {
                for xx in 0..w {
                    let at = mk.idx(n, 0, y, xx);
                    mk.data[at] = 1.0 / (1.0 + (-logits.get(n, i, y, xx)).exp());
                }
            }
        }
        masks.push(mk);
    }

    let mut mix = Arr::zeros([nb, c, h, w]);
    for n in 0..nb {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for i in 0..nbr {
                        s += masks[i].get(n, 0, y, xx) * branch[i].get(n, ch, y, xx);
                    }
                    let at = mix.idx(n, ch, y, xx);
                    mix.data[at] = s;
                }
            }
        }
    }
    let s = conv_direct(&mix, &m.fuse);
    let y = Arr::new(x.dims, x.data.iter().zip(&s.data).map(|(a, b)| a * b).collect());
    (y, masks)
}

/// A decomposition found by [`brute_force_plans`]: `(k, d)` pairs and receptive field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPlan {
    pub pairs: Vec<(usize, usize)>,
    pub rf: usize,
}

/// Every legal chain of up to `max_len` kernels from `ks` with receptive
/// field exactly `target`. Candidates are generated by an odometer over all
/// `(k, d)` tuples with `d <= target`, then filtered by the constraints.
pub fn brute_force_plans(target: usize, max_len: usize, ks: &[usize]) -> Vec<RawPlan> {
    let mut found = Vec::new();
    let digits: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (1..=target).map(move |d| (k, d))).collect();
    if digits.is_empty() {
        return found;
    }
    for len in 1..=max_len {
        let mut counter = vec![0usize; len];
        loop {
            let pairs: Vec<(usize, usize)> = counter.iter().map(|&c| digits[c]).collect();
            if let Some(rf) = legal_rf(&pairs) {
                if rf == target {
                    found.push(RawPlan { pairs, rf });
                }
            }
            // Advance the odometer, least significant digit last.
            let mut done = true;
            let mut pos = len;
            while pos > 0 {
                pos -= 1;
                counter[pos] += 1;
                if counter[pos] < digits.len() {
                    done = false;
                    break;
                }
                counter[pos] = 0;
            }
            if done {
                break;
            }
        }
    }
    found
}

fn legal_rf(pairs: &[(usize, usize)]) -> Option<usize> {
    let mut rf = 0;
    for (i, &(k, d)) in pairs.iter().enumerate() {
        if k % 2 == 0 {
            return None;
        }
        if i == 0 {
            if d != 1 {
                return None;
            }
            rf = k;
        } else {
            let (pk, pd) = pairs[i - 1];
            if pk > k || pd >= d || d > rf {
                return None;
            }
            rf += d * (k - 1);
        }
    }
    Some(rf)
}

/// Parameter count (without biases) of a module with the given chain at
/// `channels`: depthwise kernels plus optional per-branch `C x C` projections.
pub fn chain_weight_count(pairs: &[(usize, usize)], channels: usize, projections: bool) -> usize {
    let mut total = 0;
    for &(k, _) in pairs {
        total += channels * k * k;
        if projections {
            total += channels * channels;
        }
    }
    total
}

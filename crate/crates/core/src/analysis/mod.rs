//! Interpretability metrics over recorded selection masks.
//!
//! * [`rf_box_ratio`]: per category, the mean over single-category images of
//!   `A / B`, where `A = Σ_blocks Σ_branches Σ_pixels mask * RF` (masks
//!   upsampled to input resolution by nearest neighbour) and `B` is the total
//!   annotated box area of the image.
//! * [`kernel_selection_difference`]: per block, the mean absolute difference
//!   between the larger-RF and smaller-RF branch masks of a two-branch module.

mod annotations;
mod export;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use annotations::{load_annotations, parse_dota, polygon_area, BoxAnnotation};
pub use export::{export_activation_maps, load_traces, render_pgm, ExportedBlock, ExportedTrace, TRACE_SUFFIX};

use crate::backbone::BlockSelection;
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

/// Masks of one block for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    pub stage: usize,
    pub block: usize,
    /// One `(1, 1, h, w)` map per branch.
    pub maps: Vec<Tensor>,
    /// Receptive field of each branch.
    pub rf: Vec<usize>,
}

impl BlockTrace {
    pub fn label(&self) -> String {
        format!("B_{}_{}", self.stage + 1, self.block + 1)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.maps.len() == self.rf.len(),
            "block {} has {} maps but {} receptive fields",
            self.label(),
            self.maps.len(),
            self.rf.len()
        );
        if let Some(first) = self.maps.first() {
            for m in &self.maps {
                let s = m.shape();
                ensure!(s.n == 1 && s.c == 1, "block {} maps must be (1, 1, h, w), got {s}", self.label());
                ensure!(s == first.shape(), "block {} maps differ in shape", self.label());
            }
        }
        Ok(())
    }
}

/// All recorded masks of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub image_id: String,
    /// `(H, W)` of the network input.
    pub input_hw: (usize, usize),
    pub blocks: Vec<BlockTrace>,
}

impl ActivationTrace {
    /// Pick batch element `index` out of a traced backbone pass.
    pub fn from_selections(
        image_id: &str,
        input_hw: (usize, usize),
        selections: &[BlockSelection],
        index: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(selections.len());
        for s in selections {
            let mut maps = Vec::with_capacity(s.trace.maps.len());
            for m in &s.trace.maps {
                let sh = m.shape();
                ensure!(index < sh.n, "batch index {index} out of range for maps of shape {sh}");
                maps.push(Tensor::from_vec([1, 1, sh.h, sh.w], m.plane(index, 0).to_vec())?);
            }
            blocks.push(BlockTrace { stage: s.stage, block: s.block, maps, rf: s.trace.rf.clone() });
        }
        Ok(ActivationTrace { image_id: image_id.to_string(), input_hw, blocks })
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            b.validate()?;
        }
        Ok(())
    }
}

/// How each branch's activation is weighted in the expected-RF sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RfWeighting {
    /// `mask * RF`.
    #[default]
    Linear,
    /// `mask * RF^2`.
    Area,
}

impl RfWeighting {
    fn factor(self, rf: usize) -> f64 {
        match self {
            RfWeighting::Linear => rf as f64,
            RfWeighting::Area => (rf * rf) as f64,
        }
    }
}

/// Sum of `map` after nearest-neighbour upsampling to `(h_out, w_out)`.
pub fn upsampled_sum(map: &Tensor, h_out: usize, w_out: usize) -> f64 {
    let s = map.shape();
    let src = map.plane(0, 0);
    let mut total = 0.0;
    for y in 0..h_out {
        let sy = y * s.h / h_out;
        for x in 0..w_out {
            let sx = x * s.w / w_out;
            total += src[sy * s.w + sx].abs();
        }
    }
    total
}

/// Expected selective RF area `A` of one image.
pub fn expected_rf_area(trace: &ActivationTrace, weighting: RfWeighting) -> f64 {
    let (h, w) = trace.input_hw;
    let mut total = 0.0;
    for b in &trace.blocks {
        for (m, &rf) in b.maps.iter().zip(&b.rf) {
            total += weighting.factor(rf) * upsampled_sum(m, h, w);
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRatio {
    pub ratio: f64,
    /// `ratio` divided by the largest ratio over all categories.
    pub normalized: f64,
    /// Number of qualifying images.
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub weighting: RfWeighting,
    pub categories: BTreeMap<String, CategoryRatio>,
    /// Annotated categories with no single-category traced image.
    pub absent: Vec<String>,
}

/// Group annotations by image; return per image its single category, or
/// `None` when the image mixes categories.
fn single_category_images(annotations: &[BoxAnnotation]) -> BTreeMap<&str, (Option<&str>, f64)> {
    let mut per: BTreeMap<&str, (Option<&str>, f64)> = BTreeMap::new();
    let mut mixed = BTreeSet::new();
    for a in annotations {
        let e = per.entry(a.image_id.as_str()).or_insert((Some(a.category.as_str()), 0.0));
        if e.0 != Some(a.category.as_str()) {
            mixed.insert(a.image_id.as_str());
        }
        e.1 += a.area;
    }
    for id in mixed {
        per.get_mut(id).unwrap().0 = None;
    }
    per
}

/// Ratio of expected selective RF area to annotated box area, per category.
pub fn rf_box_ratio(
    traces: &[ActivationTrace],
    annotations: &[BoxAnnotation],
    weighting: RfWeighting,
) -> Result<RatioReport> {
    let images = single_category_images(annotations);
    for t in traces {
        t.validate()?;
    }
    for a in annotations {
        if let Some(t) = traces.iter().find(|t| t.image_id == a.image_id) {
            let (h, w) = t.input_hw;
            ensure!(
                a.within(h, w),
                "box of {:?} in image {:?} lies outside the {h}x{w} image",
                a.category,
                a.image_id
            );
        }
    }
    // Per-trace ratios in trace order, then an in-order sum per category.
    let per_trace: Vec<Option<(&str, f64)>> = traces
        .par_iter()
        .map(|t| match images.get(t.image_id.as_str()) {
            Some(&(Some(cat), area)) => Some((cat, expected_rf_area(t, weighting) / area)),
            _ => None,
        })
        .collect();
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (cat, r) in per_trace.into_iter().flatten() {
        let e = sums.entry(cat).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let ratios: BTreeMap<&str, (f64, usize)> = sums.into_iter().map(|(c, (s, n))| (c, (s / n as f64, n))).collect();
    let max = ratios.values().map(|v| v.0).fold(0.0, f64::max);
    let categories = ratios
        .iter()
        .map(|(&c, &(ratio, images))| {
            let normalized = if max > 0.0 { ratio / max } else { 0.0 };
            (c.to_string(), CategoryRatio { ratio, normalized, images })
        })
        .collect();
    let all: BTreeSet<&str> = annotations.iter().map(|a| a.category.as_str()).collect();
    let absent = all.into_iter().filter(|c| !ratios.contains_key(c)).map(str::to_string).collect();
    Ok(RatioReport { weighting, categories, absent })
}

/// Mean absolute difference of two equally shaped maps.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape_mismatch("mean_abs_diff", a.shape(), b.shape()));
    }
    ensure!(!a.is_empty(), "mean_abs_diff of empty maps");
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDifference {
    pub stage: usize,
    pub block: usize,
    pub label: String,
    /// Mean over images of the per-pixel mean `|larger - smaller|`.
    pub difference: f64,
    /// `difference` divided by the largest difference over blocks.
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionDifference {
    pub images: usize,
    pub blocks: Vec<BlockDifference>,
}

impl SelectionDifference {
    /// Block labels from largest to smallest difference, ties in block order.
    pub fn ordering(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.blocks.len()).collect();
        idx.sort_by(|&a, &b| self.blocks[b].difference.total_cmp(&self.blocks[a].difference).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.blocks[i].label.clone()).collect()
    }
}

/// Kernel-selection difference per block, averaged over `traces`. Every
/// block must have exactly two branches; all traces must share one layout.
pub fn kernel_selection_difference(traces: &[ActivationTrace]) -> Result<SelectionDifference> {
    ensure!(!traces.is_empty(), "kernel selection difference needs at least one trace");
    let layout: Vec<(usize, usize)> = traces[0].blocks.iter().map(|b| (b.stage, b.block)).collect();
    let mut sums = vec![0.0; layout.len()];
    for t in traces {
        t.validate()?;
        let here: Vec<(usize, usize)> = t.blocks.iter().map(|b| (b.stage, b.block)).collect();
        ensure!(here == layout, "trace {:?} has a different block layout from {:?}", t.image_id, traces[0].image_id);
        for (acc, b) in sums.iter_mut().zip(&t.blocks) {
            ensure!(
                b.maps.len() == 2,
                "kernel selection difference requires exactly N = 2 branches; block {} of {:?} has {}",
                b.label(),
                t.image_id,
                b.maps.len()
            );
            let (small, large) = if b.rf[0] <= b.rf[1] { (0, 1) } else { (1, 0) };
            *acc += mean_abs_diff(&b.maps[large], &b.maps[small])?;
        }
    }
    let n = traces.len() as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let max = means.iter().cloned().fold(0.0, f64::max);
    let blocks = layout
        .iter()
        .zip(&means)
        .map(|(&(stage, block), &difference)| BlockDifference {
            stage,
            block,
            label: format!("B_{}_{}", stage + 1, block + 1),
            difference,
            normalized: if max > 0.0 { difference / max } else { 0.0 },
        })
        .collect();
    Ok(SelectionDifference { images: traces.len(), blocks })
}

/// [`kernel_selection_difference`] over the single-category images of each
/// annotated category. Categories without such images are omitted.
pub fn kernel_selection_by_category(
    traces: &[ActivationTrace],
    annotations: &[BoxAnnotation],
) -> Result<BTreeMap<String, SelectionDifference>> {
    let images = single_category_images(annotations);
    let mut groups: BTreeMap<&str, Vec<ActivationTrace>> = BTreeMap::new();
    for t in traces {
        if let Some(&(Some(cat), _)) = images.get(t.image_id.as_str()) {
            groups.entry(cat).or_default().push(t.clone());
        }
    }
    groups.into_iter().map(|(c, ts)| Ok((c.to_string(), kernel_selection_difference(&ts)?))).collect()
}

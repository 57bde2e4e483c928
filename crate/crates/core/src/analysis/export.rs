//! Writing selection masks to disk and reading them back.
//!
//! For each block and branch, `<image>_s<stage>_b<block>_n<branch>.lskt` holds
//! the raw map and a `.pgm` next to it a min-max normalized 8-bit rendering.
//! `<image>.trace.json` lists the files with stage, block and RF metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActivationTrace, BlockTrace};
use crate::error::{ensure, Error, Result};
use crate::lskt;
use crate::tensor::Tensor;

pub const TRACE_SUFFIX: &str = ".trace.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedBlock {
    pub stage: usize,
    pub block: usize,
    pub rf: Vec<usize>,
    pub tensors: Vec<String>,
    pub renders: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedTrace {
    pub image_id: String,
    pub input_hw: (usize, usize),
    pub blocks: Vec<ExportedBlock>,
}

/// Binary (P5) greyscale rendering, min-max normalized. A map with zero
/// range renders as uniform 255.
pub fn render_pgm(map: &Tensor) -> Vec<u8> {
    let s = map.shape();
    let (h, w) = (s.n * s.c * s.h, s.w);
    let data = map.data();
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| {
        if range > 0.0 {
            (255.0 * (v - lo) / range).round() as u8
        } else {
            255
        }
    }));
    out
}

fn check_id(id: &str) -> Result<()> {
    ensure!(
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.'),
        "image id {id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
    );
    Ok(())
}

/// Export every map of `trace` into `dir`, which is created if missing.
/// Returns the written manifest.
pub fn export_activation_maps(trace: &ActivationTrace, dir: impl AsRef<Path>) -> Result<ExportedTrace> {
    let dir = dir.as_ref();
    check_id(&trace.image_id)?;
    trace.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut blocks = Vec::with_capacity(trace.blocks.len());
    for b in &trace.blocks {
        let mut tensors = Vec::new();
        let mut renders = Vec::new();
        for (n, m) in b.maps.iter().enumerate() {
            let stem = format!("{}_s{}_b{}_n{}", trace.image_id, b.stage, b.block, n);
            let t = format!("{stem}.lskt");
            let p = format!("{stem}.pgm");
            lskt::save(dir.join(&t), m)?;
            std::fs::write(dir.join(&p), render_pgm(m))?;
            tensors.push(t);
            renders.push(p);
        }
        blocks.push(ExportedBlock { stage: b.stage, block: b.block, rf: b.rf.clone(), tensors, renders });
    }
    let manifest = ExportedTrace { image_id: trace.image_id.clone(), input_hw: trace.input_hw, blocks };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(dir.join(format!("{}{TRACE_SUFFIX}", trace.image_id)), json + "\n")?;
    Ok(manifest)
}

fn load_one(dir: &Path, manifest: &Path) -> Result<ActivationTrace> {
    let text = std::fs::read_to_string(manifest)?;
    let m: ExportedTrace = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", manifest.display())))?;
    check_id(&m.image_id)?;
    let mut blocks = Vec::with_capacity(m.blocks.len());
    for b in m.blocks {
        let mut maps = Vec::with_capacity(b.tensors.len());
        for f in &b.tensors {
            ensure!(
                !f.contains('/') && !f.contains('\\') && !f.starts_with('.'),
                "trace file name {f:?} must be a plain file name"
            );
            maps.push(lskt::load(dir.join(f))?);
        }
        blocks.push(BlockTrace { stage: b.stage, block: b.block, maps, rf: b.rf });
    }
    let trace = ActivationTrace { image_id: m.image_id, input_hw: m.input_hw, blocks };
    trace.validate()?;
    Ok(trace)
}

/// Load every exported trace in `dir`, ordered by manifest file name.
pub fn load_traces(dir: impl AsRef<Path>) -> Result<Vec<ActivationTrace>> {
    let dir = dir.as_ref();
    let mut manifests: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    manifests.retain(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(TRACE_SUFFIX)));
    manifests.sort();
    manifests.iter().map(|m| load_one(dir, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Distribution;

    #[test]
    fn constant_map_renders_white() {
        let p = render_pgm(&Tensor::full([1, 1, 2, 3], 0.4));
        assert!(p.starts_with(b"P5\n3 2\n255\n"));
        assert!(p[p.len() - 6..].iter().all(|&b| b == 255));
    }

    #[test]
    fn min_max_scaling() {
        let p = render_pgm(&Tensor::from_vec([1, 1, 1, 3], vec![0.2, 0.4, 0.6]).unwrap());
        assert_eq!(&p[p.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = |s| Tensor::seeded_fill([1, 1, 4, 4], s, Distribution::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let trace = ActivationTrace {
            image_id: "img_1".into(),
            input_hw: (16, 16),
            blocks: (0..4)
                .map(|j| BlockTrace { stage: j / 2, block: j % 2, maps: vec![map(j as u64), map(9 + j as u64)], rf: vec![5, 23] })
                .collect(),
        };
        export_activation_maps(&trace, dir.path()).unwrap();
        let lskt_files = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lskt"))
            .count();
        assert_eq!(lskt_files, 8);
        let back = load_traces(dir.path()).unwrap();
        assert_eq!(back, vec![trace]);
    }

    #[test]
    fn bad_ids() {
        for id in ["", "../x", "a/b", ".hidden"] {
            assert!(check_id(id).is_err(), "{id}");
        }
    }
}

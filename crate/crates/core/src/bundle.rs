//! Weight bundles: a directory holding one LSKT file per parameter tensor and
//! a `manifest.json` mapping role names to files, with the config echoed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneWeights};
use crate::block::{BlockConfig, BlockWeights};
use crate::error::{ensure, Error, Result};
use crate::lsk::{LskConfig, LskWeights};
use crate::lskt;
use crate::params::Params;

pub const MANIFEST: &str = "manifest.json";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// `lsk`, `block` or `backbone`.
    pub kind: String,
    pub config: serde_json::Value,
    /// Role name to file name, in role order.
    pub tensors: BTreeMap<String, String>,
    pub param_count: usize,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::format(format!("bundle manifest: {e}"))
}

pub fn save_bundle<C: Serialize, W: Params>(dir: impl AsRef<Path>, kind: &str, cfg: &C, w: &W) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut tensors = BTreeMap::new();
    let mut result = Ok(());
    w.visit("", &mut |name, t| {
        if result.is_err() {
            return;
        }
        let file = format!("{name}.lskt");
        result = lskt::save(dir.join(&file), t);
        tensors.insert(name.to_string(), file);
    });
    result?;
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        kind: kind.to_string(),
        config: serde_json::to_value(cfg).map_err(json_err)?,
        tensors,
        param_count: w.param_count(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(json_err)?;
    std::fs::write(dir.join(MANIFEST), text + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(json_err)?;
    if m.version != BUNDLE_VERSION {
        return Err(Error::format(format!("unsupported bundle version {} (expected {BUNDLE_VERSION})", m.version)));
    }
    Ok(m)
}

/// Load a bundle, building the expected layout from the echoed config with
/// `template` and checking every role and shape against it.
pub fn load_bundle<C: DeserializeOwned, W: Params>(
    dir: impl AsRef<Path>,
    kind: &str,
    template: impl FnOnce(&C) -> Result<W>,
) -> Result<(C, W)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    if m.kind != kind {
        return Err(Error::format(format!("bundle holds {:?} weights, expected {kind:?}", m.kind)));
    }
    let cfg: C = serde_json::from_value(m.config.clone()).map_err(json_err)?;
    let mut w = template(&cfg)?;
    let mut roles = Vec::new();
    w.visit("", &mut |name, _| roles.push(name.to_string()));
    let extra: Vec<&String> = m.tensors.keys().filter(|k| !roles.contains(k)).collect();
    ensure!(extra.is_empty(), "bundle has roles not implied by its config: {extra:?}");
    let mut result = Ok(());
    w.visit_mut("", &mut |name, t| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let file = m
                .tensors
                .get(name)
                .ok_or_else(|| Error::format(format!("bundle is missing role {name:?}")))?;
            ensure!(!file.contains('/') && !file.contains('\\'), "bundle file {file:?} must be a plain file name");
            let loaded = lskt::load(dir.join(file))?;
            if loaded.shape() != t.shape() {
                return Err(Error::shape_mismatch(&format!("bundle role {name}"), loaded.shape(), t.shape()));
            }
            *t = loaded;
            Ok(())
        })();
    });
    result?;
    Ok((cfg, w))
}

pub fn save_lsk(dir: impl AsRef<Path>, cfg: &LskConfig, w: &LskWeights) -> Result<Manifest> {
    w.validate(cfg)?;
    save_bundle(dir, "lsk", cfg, w)
}

pub fn load_lsk(dir: impl AsRef<Path>) -> Result<(LskConfig, LskWeights)> {
    load_bundle(dir, "lsk", |c: &LskConfig| {
        c.validate()?;
        Ok(LskWeights::zeros(c))
    })
}

pub fn save_block(dir: impl AsRef<Path>, cfg: &BlockConfig, w: &BlockWeights) -> Result<Manifest> {
    cfg.validate()?;
    save_bundle(dir, "block", cfg, w)
}

pub fn load_block(dir: impl AsRef<Path>) -> Result<(BlockConfig, BlockWeights)> {
    load_bundle(dir, "block", |c: &BlockConfig| {
        c.validate()?;
        Ok(BlockWeights::zeros(c))
    })
}

pub fn save_backbone(dir: impl AsRef<Path>, cfg: &BackboneConfig, w: &BackboneWeights) -> Result<Manifest> {
    w.validate(cfg)?;
    save_bundle(dir, "backbone", cfg, w)
}

pub fn load_backbone(dir: impl AsRef<Path>) -> Result<(BackboneConfig, BackboneWeights)> {
    load_bundle(dir, "backbone", |c: &BackboneConfig| {
        c.validate()?;
        Ok(BackboneWeights::zeros(c))
    })
}

//! Backbone config files and tensor literals.
//!
//! A config file is TOML. Every key is optional; keys override the named
//! `preset` (default `lsknet-t`):
//!
//! ```toml
//! preset = "lsknet-s"
//! channels = [64, 128, 320, 512]
//! depths = [2, 2, 4, 2]
//! plan = "(5,1)->(7,3)"
//! ffn_ratios = [8, 8, 4, 4]
//! selection_kernel = 7
//! selection_mode = "spatial"   # spatial | channel | spatial_channel | none
//! pooling = "both"             # avg | max | both
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use lsk_core::backbone::BackboneConfig;
use lsk_core::lsk::SelectionMode;
use lsk_core::nn::PoolMode;
use lsk_core::{lskt, DecompositionPlan, Distribution, Error, Shape, Tensor};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    channels: Option<[usize; 4]>,
    depths: Option<[usize; 4]>,
    plan: Option<String>,
    ffn_ratios: Option<[usize; 4]>,
    selection_kernel: Option<usize>,
    selection_mode: Option<SelectionMode>,
    pooling: Option<PoolMode>,
}

pub fn parse_config(text: &str) -> Result<BackboneConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::format(format!("config file: {e}")))?;
    let mut cfg = BackboneConfig::preset(file.preset.as_deref().unwrap_or("lsknet-t"))?;
    if let Some(v) = file.channels {
        cfg.channels = v;
    }
    if let Some(v) = file.depths {
        cfg.depths = v;
    }
    if let Some(p) = file.plan {
        cfg.plan = p.parse::<DecompositionPlan>()?;
    }
    if let Some(v) = file.ffn_ratios {
        cfg.ffn_ratios = v;
    }
    if let Some(v) = file.selection_kernel {
        cfg.selection_kernel = v;
    }
    if let Some(v) = file.selection_mode {
        cfg.selection_mode = v;
    }
    if let Some(v) = file.pooling {
        cfg.pooling = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<BackboneConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

/// Resolve `--preset` / `--config` into a backbone config.
pub fn resolve_backbone(preset: Option<&str>, config: Option<&Path>) -> Result<BackboneConfig> {
    match (preset, config) {
        (Some(_), Some(_)) => Err(Error::contract("pass either --preset or --config, not both").into()),
        (_, Some(path)) => load_config(path),
        (p, None) => Ok(BackboneConfig::preset(p.unwrap_or("lsknet-t"))?),
    }
}

/// Parse `NxCxHxW`.
pub fn parse_shape(s: &str) -> Result<Shape, Error> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::contract(format!("shape {s:?} must be NxCxHxW with non-negative integers")))?;
    match dims[..] {
        [n, c, h, w] => Ok(Shape::new(n, c, h, w)),
        _ => Err(Error::contract(format!("shape {s:?} must have exactly four dimensions"))),
    }
}

/// Tensor from a literal or an LSKT file:
///
/// * `zeros:1x3x64x64`
/// * `ones:1x3x64x64`
/// * `seed:7:normal:1x3x64x64` (standard normal) or `seed:7:uniform:...` (`[0, 1)`)
/// * anything else is read as an LSKT file path.
pub fn parse_tensor(spec: &str) -> Result<Tensor> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[..] {
        ["zeros", shape] => Ok(Tensor::try_zeros(parse_shape(shape)?)?),
        ["ones", shape] => Ok(Tensor::full(parse_shape(shape)?, 1.0)),
        ["seed", seed, dist, shape] => {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::contract(format!("seed {seed:?} in {spec:?} must be a non-negative integer")))?;
            let dist = match dist {
                "normal" => Distribution::Normal { mean: 0.0, std: 1.0 },
                "uniform" => Distribution::Uniform { lo: 0.0, hi: 1.0 },
                other => {
                    return Err(Error::contract(format!("distribution {other:?} must be normal or uniform")).into())
                }
            };
            Ok(Tensor::seeded_fill(parse_shape(shape)?, seed, dist)?)
        }
        _ if parts.len() > 1 && !Path::new(spec).exists() => Err(Error::contract(format!(
            "tensor literal {spec:?} not understood; use zeros:NxCxHxW, ones:NxCxHxW or seed:S:normal|uniform:NxCxHxW"
        ))
        .into()),
        _ => lskt::load(spec).with_context(|| format!("loading tensor {spec}")),
    }
}

//! DOTA-style oriented box annotations.
//!
//! One object per line: `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.
//! `imagesource:` and `gsd:` header lines are skipped, as are blank lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub image_id: String,
    pub category: String,
    /// Corner points in image pixel coordinates `(x, y)`.
    pub polygon: [(f64, f64); 4],
    pub difficulty: u32,
    /// Polygon area in pixels.
    pub area: f64,
}

impl BoxAnnotation {
    /// An axis-aligned box `[x0, x1] x [y0, y1]`.
    pub fn axis_aligned(image_id: &str, category: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::from_polygon(image_id, category, [(x0, y0), (x1, y0), (x1, y1), (x0, y1)], 0)
    }

    pub fn from_polygon(image_id: &str, category: &str, polygon: [(f64, f64); 4], difficulty: u32) -> Result<Self> {
        let area = polygon_area(&polygon);
        if !(area > 0.0 && area.is_finite()) {
            return Err(Error::contract(format!(
                "annotation of {category:?} in image {image_id:?} has non-positive area {area}"
            )));
        }
        Ok(BoxAnnotation { image_id: image_id.to_string(), category: category.to_string(), polygon, difficulty, area })
    }

    /// True when every corner lies inside a `width x height` image.
    pub fn within(&self, height: usize, width: usize) -> bool {
        self.polygon
            .iter()
            .all(|&(x, y)| x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64)
    }
}

/// Shoelace area of a simple polygon, orientation-independent.
pub fn polygon_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    let twice: f64 = (0..n).map(|i| {
        let (x0, y0) = p[i];
        let (x1, y1) = p[(i + 1) % n];
        x0 * y1 - x1 * y0
    }).sum();
    twice.abs() / 2.0
}

/// Parse one image's annotation text.
pub fn parse_dota(image_id: &str, text: &str) -> Result<Vec<BoxAnnotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("imagesource") || line.starts_with("gsd") {
            continue;
        }
        let bad = |what: &str| Error::format(format!("{image_id}: line {}: {what}: {line:?}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 9 {
            return Err(bad("expected 8 coordinates and a category"));
        }
        let mut coords = [0.0; 8];
        for (c, f) in coords.iter_mut().zip(&fields[..8]) {
            *c = f.parse().map_err(|_| bad("coordinate is not a number"))?;
        }
        let difficulty = match fields.get(9) {
            Some(d) => d.parse().map_err(|_| bad("difficulty is not an integer"))?,
            None => 0,
        };
        let polygon = [(coords[0], coords[1]), (coords[2], coords[3]), (coords[4], coords[5]), (coords[6], coords[7])];
        let ann = BoxAnnotation::from_polygon(image_id, fields[8], polygon, difficulty)
            .map_err(|e| bad(&e.to_string()))?;
        out.push(ann);
    }
    Ok(out)
}

/// Load annotations from a `.txt` file (image id = file stem) or from every
/// `.txt` file in a directory, in file-name order.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<BoxAnnotation>> {
    let path = path.as_ref();
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "txt") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for f in files {
        let id = f
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(format!("cannot derive an image id from {}", f.display())))?
            .to_string();
        let text = std::fs::read_to_string(&f)?;
        out.extend(parse_dota(&id, &text)?);
    }
    Ok(out)
}

//! Part keypoints and their mapping onto the patch grid.
//!
//! Keypoint file: one tab-separated line per keypoint,
//! `image_id  part_name  x  y  visible(0/1)  image_w  image_h`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part: String,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Keypoints of one image, in pixel coordinates of a `width x height` image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub keypoints: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(image_id: impl Into<String>, width: f64, height: f64, keypoints: Vec<Keypoint>) -> Result<Self> {
        let image_id = image_id.into();
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidArgument(format!("{image_id}: image size must be positive")));
        }
        for k in keypoints.iter().filter(|k| k.visible) {
            if !(0.0..=width).contains(&k.x) || !(0.0..=height).contains(&k.y) {
                return Err(Error::InvalidArgument(format!(
                    "{image_id}: visible keypoint {} at ({}, {}) lies outside {width}x{height}",
                    k.part, k.x, k.y
                )));
            }
        }
        Ok(Self {
            image_id,
            width,
            height,
            keypoints,
        })
    }
}

/// Grid cells of the visible keypoints, first occurrence order, duplicates removed.
pub fn keypoint_patches(set: &KeypointSet, grid: usize) -> Vec<usize> {
    let g = grid as f64;
    let mut out = Vec::new();
    for k in set.keypoints.iter().filter(|k| k.visible) {
        let row = ((k.y * g / set.height).floor().max(0.0) as usize).min(grid - 1);
        let col = ((k.x * g / set.width).floor().max(0.0) as usize).min(grid - 1);
        let cell = row * grid + col;
        if !out.contains(&cell) {
            out.push(cell);
        }
    }
    out
}

pub fn parse_keypoints(text: &str) -> Result<HashMap<String, KeypointSet>> {
    let mut raw: Vec<(String, f64, f64, Vec<Keypoint>)> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 tab-separated fields, found {}", cols.len())));
        }
        let num = |i: usize| cols[i].trim().parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
        let visible = match cols[4].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(format!("visible must be 0 or 1, found {other:?}"))),
        };
        let (x, y, w, h) = (num(2)?, num(3)?, num(5)?, num(6)?);
        let i = *pos.entry(cols[0].to_string()).or_insert_with(|| {
            raw.push((cols[0].to_string(), w, h, Vec::new()));
            raw.len() - 1
        });
        if raw[i].1 != w || raw[i].2 != h {
            return Err(err(format!("image size of {} changes between lines", cols[0])));
        }
        raw[i].3.push(Keypoint {
            part: cols[1].to_string(),
            x,
            y,
            visible,
        });
    }
    raw.into_iter()
        .map(|(id, w, h, k)| KeypointSet::new(id.clone(), w, h, k).map(|s| (id, s)))
        .collect()
}

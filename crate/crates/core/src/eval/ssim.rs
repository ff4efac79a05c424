//! Multi-scale structural similarity on grayscale images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-scale exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Row-major grayscale pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams {
    /// Dynamic range of pixel values (255 for 8-bit).
    pub data_range: f64,
    /// Number of scales, 1..=5. Fewer than 5 uses the leading weights
    /// renormalized to sum to one.
    pub scales: usize,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self {
            data_range: 255.0,
            scales: 5,
        }
    }
}

impl MsSsimParams {
    /// Smallest side length accepted: `10 * 2^(scales-1) + 1`.
    pub fn min_side(&self) -> usize {
        (WINDOW - 1) * (1 << (self.scales - 1)) + 1
    }

    fn weights(&self) -> Vec<f64> {
        let w = &MS_SSIM_WEIGHTS[..self.scales];
        if self.scales == MS_SSIM_WEIGHTS.len() {
            return w.to_vec();
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Separable "valid" Gaussian filtering; output is `(w-10) x (h-10)`.
fn filter(data: &[f64], w: usize, h: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = g.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * horiz[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// 2x2 mean pooling; a trailing odd row or column pools only the pixels it has.
fn downsample(data: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let ow = w.div_ceil(2);
    let oh = h.div_ceil(2);
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut sum, mut n) = (0.0, 0.0);
            for y in 2 * oy..(2 * oy + 2).min(h) {
                for x in 2 * ox..(2 * ox + 2).min(w) {
                    sum += data[y * w + x];
                    n += 1.0;
                }
            }
            out[oy * ow + ox] = sum / n;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn scale_terms(a: &[f64], b: &[f64], w: usize, h: usize, c1: f64, c2: f64, g: &[f64; WINDOW]) -> (f64, f64) {
    let mu_a = filter(a, w, h, g);
    let mu_b = filter(b, w, h, g);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_aa = filter(&aa, w, h, g);
    let e_bb = filter(&bb, w, h, g);
    let e_ab = filter(&ab, w, h, g);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let s_aa = e_aa[i] - ma * ma;
        let s_bb = e_bb[i] - mb * mb;
        let s_ab = e_ab[i] - ma * mb;
        let c = (2.0 * s_ab + c2) / (s_aa + s_bb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

/// MS-SSIM of two equally sized grayscale images, in `[0, 1]`.
pub fn ms_ssim(a: &GrayImage, b: &GrayImage, params: &MsSsimParams) -> Result<f64> {
    if !(1..=MS_SSIM_WEIGHTS.len()).contains(&params.scales) {
        return Err(Error::InvalidArgument(format!("scales must be 1..=5, got {}", params.scales)));
    }
    if !(params.data_range > 0.0 && params.data_range.is_finite()) {
        return Err(Error::InvalidArgument(format!("data range {}", params.data_range)));
    }
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let min = params.min_side();
    if a.width < min || a.height < min {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            scales: params.scales,
            min,
        });
    }
    if a.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite pixel".into()));
    }
    let g = gaussian_window();
    let c1 = (K1 * params.data_range).powi(2);
    let c2 = (K2 * params.data_range).powi(2);
    let weights = params.weights();
    let (mut da, mut db) = (a.data.clone(), b.data.clone());
    let (mut w, mut h) = (a.width, a.height);
    let mut result = 1.0;
    for (s, &weight) in weights.iter().enumerate() {
        let (ssim, cs) = scale_terms(&da, &db, w, h, c1, c2, &g);
        let term = if s + 1 == weights.len() { ssim } else { cs };
        result *= term.max(0.0).powf(weight);
        if s + 1 < weights.len() {
            let (na, nw, nh) = downsample(&da, w, h);
            let (nb, _, _) = downsample(&db, w, h);
            (da, db, w, h) = (na, nb, nw, nh);
        }
    }
    Ok(result.min(1.0))
}

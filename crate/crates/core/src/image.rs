//! Sensor-noise corruptions and view masking on 8-bit RGB frames.
//!
//! Pixel arithmetic runs in `f32` on `[0, 1]` and is quantised once on output
//! with round-half-to-even, so results are identical on every platform.

use crate::perturbation::SeverityLevel;
use crate::rng::{CounterRng, SeedKey};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

pub const CHANNELS: usize = 3;
/// Motion-blur direction is drawn from `[-MOTION_ANGLE_DEG, MOTION_ANGLE_DEG]`.
pub const MOTION_ANGLE_DEG: f64 = 45.0;
/// Gaussian kernels are truncated at this many standard deviations.
pub const GAUSSIAN_TRUNCATE: f32 = 4.0;
/// Brightness the fog blends towards.
pub const FOG_BRIGHTNESS: f32 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image has zero size ({width}x{height})")]
    Dimension { width: u32, height: u32 },
    #[error("expected {expected} samples, found {found}")]
    DataLength { expected: usize, found: usize },
    #[error("png: {0}")]
    Png(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown view `{0}`")]
    UnknownView(String),
}

/// Row-major interleaved RGB, 8 bits per sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(ImageError::DataLength {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.repeat(width as usize * height as usize);
        Self { width, height, data }
    }

    /// Same size, all samples zero.
    pub fn black_like(&self) -> Self {
        Self::filled(self.width, self.height, [0; 3])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)
            .map_err(|e| ImageError::Png(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = ::image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("length checked at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ::image::ImageFormat::Png)
            .map_err(|e| ImageError::Png(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_png(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png()?).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Float working copy, planar per channel.
struct Planes {
    w: usize,
    h: usize,
    c: [Vec<f32>; CHANNELS],
}

impl Planes {
    fn from_image(img: &Image) -> Self {
        let n = img.width as usize * img.height as usize;
        let mut c: [Vec<f32>; CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(n));
        for px in img.data.chunks_exact(CHANNELS) {
            for (plane, v) in c.iter_mut().zip(px) {
                plane.push(f32::from(*v) / 255.0);
            }
        }
        Self {
            w: img.width as usize,
            h: img.height as usize,
            c,
        }
    }

    fn to_image(&self) -> Image {
        let mut data = Vec::with_capacity(self.w * self.h * CHANNELS);
        for i in 0..self.w * self.h {
            for plane in &self.c {
                data.push(quantize(plane[i]));
            }
        }
        Image {
            width: self.w as u32,
            height: self.h as u32,
            data,
        }
    }

    fn map(&self, f: impl Fn(&[f32]) -> Vec<f32>) -> Self {
        Self {
            w: self.w,
            h: self.h,
            c: std::array::from_fn(|k| f(&self.c[k])),
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    MotionBlur,
    GaussianBlur,
    ZoomBlur,
    Fog,
    GlassBlur,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::MotionBlur,
        NoiseKind::GaussianBlur,
        NoiseKind::ZoomBlur,
        NoiseKind::Fog,
        NoiseKind::GlassBlur,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::MotionBlur => "motion_blur",
            NoiseKind::GaussianBlur => "gaussian_blur",
            NoiseKind::ZoomBlur => "zoom_blur",
            NoiseKind::Fog => "fog",
            NoiseKind::GlassBlur => "glass_blur",
        }
    }
}

/// Resolved per-kind scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSetting {
    MotionBlur {
        radius: u32,
        sigma: f64,
        /// Fixed direction; `None` draws it from the corruption seed.
        angle_deg: Option<f64>,
    },
    GaussianBlur {
        sigma: f64,
    },
    ZoomBlur {
        s_min: f64,
        s_max: f64,
        step: f64,
    },
    Fog {
        alpha: f64,
        beta: f64,
    },
    GlassBlur {
        sigma: f64,
        delta: u32,
        iterations: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub level: SeverityLevel,
    #[serde(flatten)]
    pub setting: NoiseSetting,
}

impl NoiseParams {
    pub fn kind(&self) -> NoiseKind {
        match self.setting {
            NoiseSetting::MotionBlur { .. } => NoiseKind::MotionBlur,
            NoiseSetting::GaussianBlur { .. } => NoiseKind::GaussianBlur,
            NoiseSetting::ZoomBlur { .. } => NoiseKind::ZoomBlur,
            NoiseSetting::Fog { .. } => NoiseKind::Fog,
            NoiseSetting::GlassBlur { .. } => NoiseKind::GlassBlur,
        }
    }
}

/// Linear interpolation between integer endpoints `a` (level 1) and `b`
/// (level 5), rounded half-to-even. Exact: works on the rational `(4a + (b-a)(k-1)) / 4`.
fn ladder(a: i64, b: i64, level: SeverityLevel) -> i64 {
    let num = 4 * a + (b - a) * i64::from(level.get() - 1);
    let (q, r) = (num.div_euclid(4), num.rem_euclid(4));
    match r {
        0 | 1 => q,
        3 => q + 1,
        _ => q + (q & 1),
    }
}

fn tenths(a: i64, b: i64, level: SeverityLevel) -> f64 {
    ladder(a, b, level) as f64 / 10.0
}

fn hundredths(a: i64, b: i64, level: SeverityLevel) -> f64 {
    ladder(a, b, level) as f64 / 100.0
}

/// Level parameters. Endpoints are the published L1/L5 values; inner levels
/// are interpolated and rounded to the precision the endpoints are given in.
pub fn params_for(kind: NoiseKind, level: SeverityLevel) -> NoiseParams {
    let setting = match kind {
        NoiseKind::MotionBlur => NoiseSetting::MotionBlur {
            radius: ladder(5, 35, level) as u32,
            sigma: tenths(20, 200, level),
            angle_deg: None,
        },
        NoiseKind::GaussianBlur => NoiseSetting::GaussianBlur {
            sigma: tenths(10, 100, level),
        },
        NoiseKind::ZoomBlur => NoiseSetting::ZoomBlur {
            s_min: 1.0,
            s_max: hundredths(111, 156, level),
            step: hundredths(1, 3, level),
        },
        NoiseKind::Fog => NoiseSetting::Fog {
            alpha: tenths(5, 50, level),
            beta: tenths(30, 13, level),
        },
        NoiseKind::GlassBlur => NoiseSetting::GlassBlur {
            sigma: tenths(5, 25, level),
            delta: ladder(1, 5, level) as u32,
            iterations: ladder(3, 1, level) as u32,
        },
    };
    NoiseParams { level, setting }
}

/// Seed for one corrupted observation.
pub fn noise_seed(task_id: &str, kind: NoiseKind, level: SeverityLevel, trial: u64) -> u64 {
    SeedKey::new(0)
        .str(task_id)
        .str("noise")
        .str(kind.as_str())
        .u64(u64::from(level.get()))
        .u64(trial)
        .finish()
}

/// Motion-blur direction for a seed, uniform in `[-45, 45]` degrees.
pub fn motion_angle(seed: u64) -> f64 {
    let mut rng = SeedKey::new(seed).str("motion_angle").rng();
    rng.uniform(-MOTION_ANGLE_DEG, MOTION_ANGLE_DEG)
}

/// Normalised 1-D gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (GAUSSIAN_TRUNCATE * sigma).ceil().max(1.0) as i32;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(f64::from(i).powi(2)) / (2.0 * f64::from(sigma).powi(2))).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| (w / total) as f32).collect()
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn convolve_rows(src: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (t, kw) in k.iter().enumerate() {
                acc += kw * row[clamp_index(x as isize + t as isize - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (t, kw) in k.iter().enumerate() {
                acc += kw * src[clamp_index(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gaussian_planes(p: &Planes, sigma: f32) -> Planes {
    let k = gaussian_kernel(sigma);
    p.map(|c| convolve_cols(&convolve_rows(c, p.w, p.h, &k), p.w, p.h, &k))
}

/// Sparse 2-D motion kernel `(dx, dy, weight)`, sorted by offset, weights summing to 1.
pub fn motion_kernel(radius: u32, sigma: f64, angle_deg: f64) -> Vec<(i32, i32, f32)> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut acc: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    let r = radius as i32;
    for t in -r..=r {
        let g = (-(f64::from(t).powi(2)) / (2.0 * sigma * sigma)).exp();
        // Image rows grow downwards, so a positive angle tilts the streak upwards.
        let (x, y) = (f64::from(t) * c, -f64::from(t) * s);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            if w > 0.0 {
                *acc.entry((x0 as i32 + dx, y0 as i32 + dy)).or_default() += g * w;
            }
        }
    }
    let total: f64 = acc.values().sum();
    acc.into_iter()
        .map(|((dx, dy), w)| (dx, dy, (w / total) as f32))
        .collect()
}

fn sparse_convolve(p: &Planes, kernel: &[(i32, i32, f32)]) -> Planes {
    p.map(|src| {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..p.h {
            for x in 0..p.w {
                let mut acc = 0.0f32;
                for &(dx, dy, w) in kernel {
                    let sx = clamp_index(x as isize + dx as isize, p.w);
                    let sy = clamp_index(y as isize + dy as isize, p.h);
                    acc += w * src[sy * p.w + sx];
                }
                out[y * p.w + x] = acc;
            }
        }
        out
    })
}

fn bilinear(src: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Scale factors `s_min, s_min + step, ..., <= s_max`, counted in hundredths
/// so float steps never drop or add a factor.
pub fn zoom_factors(s_min: f64, s_max: f64, step: f64) -> Vec<f64> {
    let lo = (s_min * 100.0).round() as i64;
    let hi = (s_max * 100.0).round() as i64;
    let st = ((step * 100.0).round() as i64).max(1);
    (0..=(hi - lo).max(0) / st)
        .map(|i| (lo + i * st) as f64 / 100.0)
        .collect()
}

fn zoom_planes(p: &Planes, factors: &[f64]) -> Planes {
    let (cx, cy) = (p.w as f32 / 2.0, p.h as f32 / 2.0);
    let n = factors.len() as f32;
    p.map(|src| {
        let mut out = vec![0.0f32; src.len()];
        for &s in factors {
            let s = s as f32;
            for y in 0..p.h {
                let sy = cy + (y as f32 + 0.5 - cy) / s - 0.5;
                for x in 0..p.w {
                    let sx = cx + (x as f32 + 0.5 - cx) / s - 0.5;
                    out[y * p.w + x] += bilinear(src, p.w, p.h, sx, sy);
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        out
    })
}

/// Diamond-square height field on a `size x size` torus (`size` a power of
/// two), min-max normalised to `[0, 1]`. Noise amplitude starts at 100 and is
/// divided by `decay` after every octave.
pub fn plasma_field(size: usize, decay: f64, rng: &mut CounterRng) -> Vec<f32> {
    assert!(size.is_power_of_two(), "plasma size must be a power of two");
    let mut m = vec![0.0f64; size * size];
    let at = |i: usize, j: usize| (i % size) * size + (j % size);
    let mut step = size;
    let mut wibble = 100.0f64;
    while step >= 2 {
        let half = step / 2;
        for i in (0..size).step_by(step) {
            for j in (0..size).step_by(step) {
                let mean = (m[at(i, j)] + m[at(i + step, j)] + m[at(i, j + step)] + m[at(i + step, j + step)]) / 4.0;
                m[at(i + half, j + half)] = mean + rng.uniform(-wibble, wibble);
            }
        }
        for i in (0..size).step_by(step) {
            for j in (0..size).step_by(step) {
                // Diamond centre on the top edge of the square.
                let (di, dj) = (i, j + half);
                let mean = (m[at(di, dj + size - half)]
                    + m[at(di, dj + half)]
                    + m[at(di + size - half, dj)]
                    + m[at(di + half, dj)])
                    / 4.0;
                m[at(di, dj)] = mean + rng.uniform(-wibble, wibble);
                // Diamond centre on the left edge.
                let (di, dj) = (i + half, j);
                let mean = (m[at(di, dj + size - half)]
                    + m[at(di, dj + half)]
                    + m[at(di + size - half, dj)]
                    + m[at(di + half, dj)])
                    / 4.0;
                m[at(di, dj)] = mean + rng.uniform(-wibble, wibble);
            }
        }
        step = half;
        wibble /= decay;
    }
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    m.iter().map(|v| ((v - lo) / span) as f32).collect()
}

fn fog_planes(p: &Planes, alpha: f32, beta: f64, rng: &mut CounterRng) -> Planes {
    let size = p.w.max(p.h).next_power_of_two().max(2);
    let field = plasma_field(size, beta, rng);
    p.map(|src| {
        let mut out = src.to_vec();
        for y in 0..p.h {
            for x in 0..p.w {
                let t = (alpha * field[y * size + x]).clamp(0.0, 1.0);
                let v = &mut out[y * p.w + x];
                *v = (1.0 - t) * *v + t * FOG_BRIGHTNESS;
            }
        }
        out
    })
}

fn glass_planes(p: &Planes, sigma: f32, delta: u32, iterations: u32, rng: &mut CounterRng) -> Planes {
    let mut cur = Planes {
        w: p.w,
        h: p.h,
        c: p.c.clone(),
    };
    let d = delta as usize;
    for _ in 0..iterations {
        if p.w > 2 * d && p.h > 2 * d {
            // Scan the interior bottom-up, swapping each pixel with a random neighbour.
            for y in (d + 1..=p.h - 1 - d).rev() {
                for x in (d + 1..=p.w - 1 - d).rev() {
                    let dx = rng.below(2 * u64::from(delta) + 1) as isize - delta as isize;
                    let dy = rng.below(2 * u64::from(delta) + 1) as isize - delta as isize;
                    let a = y * p.w + x;
                    let b = ((y as isize + dy) as usize) * p.w + (x as isize + dx) as usize;
                    for plane in &mut cur.c {
                        plane.swap(a, b);
                    }
                }
            }
        }
        cur = gaussian_planes(&cur, sigma);
    }
    cur
}

/// Applies one corruption. Deterministic in `(image, params, seed)`.
pub fn corrupt(image: &Image, params: &NoiseParams, seed: u64) -> Result<Image, ImageError> {
    if image.is_empty() {
        return Err(ImageError::Dimension {
            width: image.width,
            height: image.height,
        });
    }
    let p = Planes::from_image(image);
    let mut rng = SeedKey::new(seed).str("corrupt").str(params.kind().as_str()).rng();
    let out = match params.setting {
        NoiseSetting::MotionBlur {
            radius,
            sigma,
            angle_deg,
        } => {
            let angle = angle_deg.unwrap_or_else(|| motion_angle(seed));
            sparse_convolve(&p, &motion_kernel(radius, sigma, angle))
        }
        NoiseSetting::GaussianBlur { sigma } => gaussian_planes(&p, sigma as f32),
        NoiseSetting::ZoomBlur { s_min, s_max, step } => zoom_planes(&p, &zoom_factors(s_min, s_max, step)),
        NoiseSetting::Fog { alpha, beta } => fog_planes(&p, alpha as f32, beta, &mut rng),
        NoiseSetting::GlassBlur {
            sigma,
            delta,
            iterations,
        } => glass_planes(&p, sigma as f32, delta, iterations, &mut rng),
    };
    Ok(out.to_image())
}

/// Corrupts many frames in parallel; output order follows input order.
pub fn corrupt_batch(jobs: &[(Image, NoiseParams, u64)]) -> Result<Vec<Image>, ImageError> {
    jobs.par_iter()
        .map(|(img, params, seed)| corrupt(img, params, *seed))
        .collect()
}

/// Replaces the listed views with black frames of the same size.
pub fn mask_view(
    observations: &BTreeMap<String, Image>,
    views_to_black: &BTreeSet<String>,
) -> Result<BTreeMap<String, Image>, ImageError> {
    if let Some(v) = views_to_black.iter().find(|v| !observations.contains_key(*v)) {
        return Err(ImageError::UnknownView(v.clone()));
    }
    Ok(observations
        .iter()
        .map(|(name, img)| {
            let out = if views_to_black.contains(name) {
                img.black_like()
            } else {
                img.clone()
            };
            (name.clone(), out)
        })
        .collect())
}

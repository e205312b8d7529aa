//! Seeded training-set expansion: shear, contrast, horizontal flip, rotation,
//! zoom and blur, followed by rescaling to the target size and optional
//! grayscale conversion.
//!
//! Geometric transforms resample into the original frame with inverse mapping,
//! bilinear interpolation and black border fill, so identity magnitudes are
//! pixel-exact no-ops. Each manifest record owns an independent random stream
//! derived from the configured seed and a stable hash of the record path;
//! adding records never perturbs the output for existing ones.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::{decode_image, encode_image, ImageBuffer};

/// The transform vocabulary of the augmentation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Shear,
    Contrast,
    FlipH,
    Rotate,
    Zoom,
    Blur,
    Rescale,
    Grayscale,
}

/// One transform application: a kind plus a magnitude whose meaning depends
/// on the kind.
///
/// * `Shear` — horizontal shear factor (x offset per row of distance from
///   the center row).
/// * `Contrast` — gain about mid-gray 128; must be positive.
/// * `FlipH`, `Grayscale` — magnitude is ignored.
/// * `Rotate` — angle in degrees, |angle| <= 180.
/// * `Zoom` — scale factor about the image center; must be positive.
/// * `Blur` — box blur radius in pixels (rounded to an integer), >= 0.
/// * `Rescale` — square target side in pixels (rounded), >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub magnitude: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, magnitude: f64) -> TransformSpec {
        TransformSpec { kind, magnitude }
    }

    /// Checks the magnitude against the legal range of the kind.
    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude;
        if !m.is_finite() {
            return Err(Error::config(format!(
                "{:?} magnitude must be finite, got {m}",
                self.kind
            )));
        }
        let ok = match self.kind {
            TransformKind::Shear | TransformKind::FlipH | TransformKind::Grayscale => true,
            TransformKind::Contrast | TransformKind::Zoom => m > 0.0,
            TransformKind::Rotate => m.abs() <= 180.0,
            TransformKind::Blur => m >= 0.0,
            TransformKind::Rescale => m >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{:?} magnitude {m} out of range",
                self.kind
            )))
        }
    }
}

/// A transform kind with the magnitude interval it is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRange {
    pub kind: TransformKind,
    pub range: [f64; 2],
}

impl TransformRange {
    pub fn new(kind: TransformKind, lo: f64, hi: f64) -> TransformRange {
        TransformRange { kind, range: [lo, hi] }
    }
}

/// Configuration of [`augment_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub transforms: Vec<TransformRange>,
    pub copies_per_image: u32,
    pub seed: u64,
    pub target_width: usize,
    pub target_height: usize,
    pub grayscale_output: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            transforms: vec![
                TransformRange::new(TransformKind::Shear, -0.2, 0.2),
                TransformRange::new(TransformKind::Contrast, 0.6, 1.4),
                TransformRange::new(TransformKind::FlipH, 0.0, 0.0),
                TransformRange::new(TransformKind::Rotate, -20.0, 20.0),
                TransformRange::new(TransformKind::Zoom, 0.8, 1.25),
                TransformRange::new(TransformKind::Blur, 1.0, 2.0),
            ],
            copies_per_image: 6,
            seed: 0,
            target_width: 224,
            target_height: 224,
            grayscale_output: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::config("target size components must be positive"));
        }
        if self.copies_per_image > 0 && self.transforms.is_empty() {
            return Err(Error::config(
                "copies_per_image > 0 requires at least one transform",
            ));
        }
        for t in &self.transforms {
            let [lo, hi] = t.range;
            if !(lo <= hi) {
                return Err(Error::config(format!(
                    "{:?} range [{lo}, {hi}] has lo > hi",
                    t.kind
                )));
            }
            TransformSpec::new(t.kind, lo).validate()?;
            TransformSpec::new(t.kind, hi).validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AugmentConfig = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "augment config".into(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Applies a single transform, returning a new buffer.
pub fn apply_transform(img: &ImageBuffer, spec: &TransformSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    match spec.kind {
        TransformKind::FlipH => Ok(flip_horizontal(img)),
        TransformKind::Contrast => Ok(adjust_contrast(img, spec.magnitude)),
        TransformKind::Blur => Ok(box_blur(img, spec.magnitude.round() as usize)),
        TransformKind::Grayscale => to_grayscale(img),
        TransformKind::Rescale => {
            let side = spec.magnitude.round() as usize;
            rescale(img, side, side)
        }
        TransformKind::Rotate => {
            let theta = spec.magnitude.to_radians();
            let (sin, cos) = (theta.sin(), theta.cos());
            Ok(warp(img, |x, y, cx, cy| {
                (
                    cx + cos * (x - cx) + sin * (y - cy),
                    cy - sin * (x - cx) + cos * (y - cy),
                )
            }))
        }
        TransformKind::Shear => {
            let m = spec.magnitude;
            Ok(warp(img, |x, y, _cx, cy| (x - m * (y - cy), y)))
        }
        TransformKind::Zoom => {
            let z = spec.magnitude;
            Ok(warp(img, |x, y, cx, cy| {
                (cx + (x - cx) / z, cy + (y - cy) / z)
            }))
        }
    }
}

/// Mirrors the image about its vertical axis. Exact involution.
pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.set_sample(x, y, ch, img.sample(w - 1 - x, y, ch));
            }
        }
    }
    out
}

/// Contrast gain about mid-gray: `out = 128 + (in - 128) * factor`, clamped.
fn adjust_contrast(img: &ImageBuffer, factor: f64) -> ImageBuffer {
    let data = img
        .data()
        .iter()
        .map(|&v| clamp_u8(128.0 + (v as f64 - 128.0) * factor))
        .collect();
    ImageBuffer::from_raw(img.width(), img.height(), img.channels(), data)
        .expect("dimensions unchanged")
}

/// Box blur with the given radius; each output sample is the mean of the
/// in-bounds window around it. Radius 0 is the identity.
fn box_blur(img: &ImageBuffer, radius: usize) -> ImageBuffer {
    if radius == 0 {
        return img.clone();
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = radius as isize;
    let mut out = img.clone();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let x0 = (x - r).max(0) as usize;
            let x1 = ((x + r) as usize).min(w - 1);
            let y0 = (y - r).max(0) as usize;
            let y1 = ((y + r) as usize).min(h - 1);
            let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            for ch in 0..c {
                let mut sum = 0.0f64;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        sum += img.sample(xx, yy, ch) as f64;
                    }
                }
                out.set_sample(x as usize, y as usize, ch, clamp_u8(sum / count));
            }
        }
    }
    out
}

/// Resamples into the original frame through an inverse coordinate map, with
/// bilinear interpolation and black border fill.
fn warp(img: &ImageBuffer, inverse: impl Fn(f64, f64, f64, f64) -> (f64, f64)) -> ImageBuffer {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64, y as f64, cx, cy);
            for ch in 0..c {
                data.push(clamp_u8(bilinear_black(img, sx, sy, ch)));
            }
        }
    }
    ImageBuffer::from_raw(w, h, c, data).expect("dimensions unchanged")
}

/// Bilinear sample treating everything outside the image as black.
fn bilinear_black(img: &ImageBuffer, sx: f64, sy: f64, ch: usize) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= img.width() as f64 || yi >= img.height() as f64 {
            0.0
        } else {
            img.sample(xi as usize, yi as usize, ch) as f64
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1.0, y0))
        + fy * ((1.0 - fx) * at(x0, y0 + 1.0) + fx * at(x0 + 1.0, y0 + 1.0))
}

/// Bilinear resize to (w, h) with half-pixel sample centers and edge clamping.
/// Channels are preserved; constant images stay constant.
pub fn rescale(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    if w == 0 || h == 0 {
        return Err(Error::image("rescale target must be positive"));
    }
    let (sw, sh, c) = (img.width(), img.height(), img.channels());
    let scale_x = sw as f64 / w as f64;
    let scale_y = sh as f64 / h as f64;
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, sh as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, sw as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = (1.0 - fx) * img.sample(x0, y0, ch) as f64
                    + fx * img.sample(x1, y0, ch) as f64;
                let bottom = (1.0 - fx) * img.sample(x0, y1, ch) as f64
                    + fx * img.sample(x1, y1, ch) as f64;
                data.push(clamp_u8((1.0 - fy) * top + fy * bottom));
            }
        }
    }
    ImageBuffer::from_raw(w, h, c, data)
}

/// 3-channel to 1-channel: `luma = round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels() != 3 {
        return Err(Error::image("to_grayscale expects a 3-channel image"));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| clamp_u8(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64))
        .collect();
    ImageBuffer::from_raw(img.width(), img.height(), 1, data)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// FNV-1a over the record path; keeps per-record streams stable when the
/// manifest grows.
fn stable_path_hash(path: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in path.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

/// Expands the TRAIN split of `manifest` into `out_dir`.
///
/// Every record is written to `out_dir` in its deterministic processed form
/// (rescaled to the target size, grayscale if configured) under
/// `<stem>.ppm`; each TRAIN record additionally gets `copies_per_image`
/// stochastic copies named `<stem>_aug<k>.ppm`, each produced by one
/// transform sampled from the configured ranges. The returned manifest lists
/// originals followed by their copies, all pointing into `out_dir`.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    cfg: &AugmentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if cfg.copies_per_image > 0 && manifest.count(Split::Train) == 0 {
        return Err(Error::EmptySplit {
            split: "train".into(),
        });
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut used_names = HashSet::new();
    let mut reserve = |name: String| -> Result<String> {
        if !used_names.insert(name.clone()) {
            return Err(Error::config(format!(
                "duplicate output filename {name:?}; record stems must be unique"
            )));
        }
        Ok(name)
    };

    let mut records = Vec::new();
    for rec in manifest.records() {
        let src = decode_image(&rec.path)?;
        let stem = Path::new(&rec.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.path.clone());

        let finished = finish(&src, cfg)?;
        let name = reserve(format!("{stem}.ppm"))?;
        let out_path = out_dir.join(&name);
        encode_image(&finished, &out_path)?;
        records.push(ManifestRecord {
            path: out_path.to_string_lossy().into_owned(),
            label: rec.label,
            split: rec.split,
        });

        if rec.split != Split::Train {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_path_hash(&rec.path));
        for k in 0..cfg.copies_per_image {
            let pick = &cfg.transforms[rng.gen_range(0..cfg.transforms.len())];
            let [lo, hi] = pick.range;
            let magnitude = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let transformed = apply_transform(&src, &TransformSpec::new(pick.kind, magnitude))?;
            let finished = finish(&transformed, cfg)?;
            let name = reserve(format!("{stem}_aug{k}.ppm"))?;
            let out_path = out_dir.join(&name);
            encode_image(&finished, &out_path)?;
            records.push(ManifestRecord {
                path: out_path.to_string_lossy().into_owned(),
                label: rec.label,
                split: Split::Train,
            });
        }
    }
    DatasetManifest::new(records)
}

/// Deterministic tail of the pipeline: rescale to the target size, then
/// grayscale when configured.
fn finish(img: &ImageBuffer, cfg: &AugmentConfig) -> Result<ImageBuffer> {
    let scaled = rescale(img, cfg.target_width, cfg.target_height)?;
    if cfg.grayscale_output && scaled.channels() == 3 {
        to_grayscale(&scaled)
    } else {
        Ok(scaled)
    }
}

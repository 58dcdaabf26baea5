//! Dataset manifests, image I/O and the synthetic curvilinear-structure
//! generator.
//!
//! A manifest is UTF-8 text with one record per line and four tab-separated
//! fields: `image_path  mask_path  split  domain_id`. Relative paths resolve
//! against the manifest's directory. Blank lines and lines starting with `#`
//! are ignored. Images and masks are 8-bit PNGs; masks use {0, 255}.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency_views::{gaussian_blur, GaussianParams};
use crate::image::{Image, Mask};

pub const DEFAULT_IMAGE_SIZE: usize = 512;
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Value(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub domain_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let index = records.len();
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Record {
                    index,
                    message: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let split = fields[2].parse().map_err(|e: Error| Error::Record {
                index,
                message: e.to_string(),
            })?;
            records.push(ManifestRecord {
                image_path: base.join(fields[0]),
                mask_path: base.join(fields[1]),
                split,
                domain_id: fields[3].to_string(),
            });
        }
        Ok(Self { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Serializes with paths made relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        self.records
            .iter()
            .map(|r| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    rel(&r.image_path),
                    rel(&r.mask_path),
                    r.split,
                    r.domain_id
                )
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_text(path.parent().unwrap_or(Path::new(".")));
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    pub split: Split,
    pub domain: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    pub fn domain(&self, domain: &str) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.domain == domain).cloned().collect()
    }

    /// Distinct domain ids in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.domain) {
                out.push(s.domain.clone());
            }
        }
        out
    }
}

pub fn read_image(path: &Path, channels: usize) -> Result<Image> {
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<f64> = match channels {
        1 => dynimg.to_luma8().into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        3 => dynimg.to_rgb8().into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        c => return Err(Error::param(format!("unsupported channel count {c}"))),
    };
    Image::new(h, w, channels, data)
}

/// Reads a mask and thresholds 8-bit luma at 128.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Mask::new(h, w, g.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image with values in `[0, 1]` as an 8-bit PNG.
pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let (h, w, c) = image.dims();
    let raw: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
    let res = if c == 3 {
        let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw).expect("rgb size");
        buf.save(path)
    } else {
        let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, raw).expect("gray size");
        buf.save(path)
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    let raw = mask.data().iter().map(|v| v * 255).collect();
    let buf: GrayImage =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("mask size");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every manifest record, resizing images bilinearly and masks with
/// nearest neighbour to `image_size`² (512 when `None`).
pub fn load_dataset(manifest_path: impl AsRef<Path>, image_size: Option<usize>, channels: usize) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    load_manifest(&manifest, image_size, channels)
}

pub fn load_manifest(manifest: &DatasetManifest, image_size: Option<usize>, channels: usize) -> Result<Dataset> {
    let size = image_size.unwrap_or(DEFAULT_IMAGE_SIZE);
    let samples = manifest
        .records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let wrap = |e: Error| Error::Record {
                index,
                message: e.to_string(),
            };
            let image = read_image(&r.image_path, channels)
                .and_then(|i| i.resized(size, size))
                .map(|i| i.map(|v| v.clamp(0.0, 1.0)))
                .map_err(wrap)?;
            let mask = read_mask(&r.mask_path).and_then(|m| m.resized(size, size)).map_err(wrap)?;
            let id = r
                .image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("record{index}"));
            Ok(Sample {
                id,
                image,
                mask,
                split: r.split,
                domain: r.domain_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

/// Photometric change applied to a synthetic domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub brightness: f64,
    pub contrast: f64,
    /// Gaussian blur sigma in pixels; 0 disables blurring.
    pub blur_sigma: f64,
}

impl DomainTransform {
    pub const IDENTITY: DomainTransform = DomainTransform {
        brightness: 0.0,
        contrast: 1.0,
        blur_sigma: 0.0,
    };

    /// `((v - 0.5) * contrast + 0.5 + brightness)` after optional blurring,
    /// clamped to `[0, 1]`.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let blurred = if self.blur_sigma > 0.0 {
            let radius = ((3.0 * self.blur_sigma).ceil() as usize).max(1);
            gaussian_blur(image, &GaussianParams::new(radius, self.blur_sigma)?)?
        } else {
            image.clone()
        };
        Ok(blurred.map(|v| ((v - 0.5) * self.contrast + 0.5 + self.brightness).clamp(0.0, 1.0)))
    }

    /// Domain `d` of the default sequence; domain 0 is the identity.
    pub fn default_for(d: usize) -> DomainTransform {
        const TABLE: [DomainTransform; 4] = [
            DomainTransform::IDENTITY,
            DomainTransform {
                brightness: 0.15,
                contrast: 0.8,
                blur_sigma: 0.0,
            },
            DomainTransform {
                brightness: -0.1,
                contrast: 1.2,
                blur_sigma: 0.8,
            },
            DomainTransform {
                brightness: 0.05,
                contrast: 0.6,
                blur_sigma: 1.2,
            },
        ];
        let base = TABLE[d % TABLE.len()];
        let cycle = (d / TABLE.len()) as f64;
        DomainTransform {
            brightness: base.brightness - 0.03 * cycle,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Images per domain.
    pub count: usize,
    pub channels: usize,
    /// Inclusive range of curves drawn per image.
    pub curves: (usize, usize),
    /// Inclusive stroke thickness range in pixels.
    pub thickness: (f64, f64),
    /// Accepted foreground fraction of each mask.
    pub foreground: (f64, f64),
    /// Peak amplitude of the smooth background field.
    pub background_amplitude: f64,
    /// Amplitude of the band-limited noise.
    pub noise_amplitude: f64,
    /// How much darker strokes are than the background.
    pub stroke_contrast: f64,
    pub domains: Vec<DomainTransform>,
    /// Reuse one geometry set for every domain instead of drawing fresh
    /// curves per domain.
    pub shared_geometry: bool,
    /// Fraction of domain-0 images assigned to the validation split.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            count: 10,
            channels: 3,
            curves: (3, 7),
            thickness: (1.5, 3.5),
            foreground: (0.02, 0.15),
            background_amplitude: 0.12,
            noise_amplitude: 0.03,
            stroke_contrast: 0.3,
            domains: vec![DomainTransform::IDENTITY],
            shared_geometry: false,
            val_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_domains(mut self, n: usize) -> Self {
        self.domains = (0..n).map(DomainTransform::default_for).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::param("synthetic images must be at least 16x16"));
        }
        if self.count == 0 {
            return Err(Error::param("count must be >= 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::param("channels must be 1 or 3"));
        }
        if self.curves.0 < 1 || self.curves.0 > self.curves.1 {
            return Err(Error::param("bad curves range"));
        }
        if self.thickness.0 < 1.0 || self.thickness.0 > self.thickness.1 {
            return Err(Error::param("thickness must be >= 1 with min <= max"));
        }
        let (fmin, fmax) = self.foreground;
        if !(0.0 <= fmin && fmin < fmax && fmax <= 1.0) {
            return Err(Error::param("bad foreground range"));
        }
        if self.domains.is_empty() {
            return Err(Error::param("at least one domain is required"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::param("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One rendered geometry before any domain transform.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: Image,
    pub mask: Mask,
    /// Pixels that were darkened by strokes.
    pub strokes: Mask,
}

const CHANNEL_TINT: [f64; 3] = [1.0, 0.85, 0.7];

fn smooth_background(rng: &mut ChaCha8Rng, size: usize, amplitude: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let period = rng.random_range(1.0..2.5) * size as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.3..1.0);
            (angle, period, phase, amp)
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let v: f64 = waves
                .iter()
                .map(|(a, p, ph, amp)| {
                    let t = (x as f64 * a.cos() + y as f64 * a.sin()) / p;
                    amp * (std::f64::consts::TAU * t + ph).cos()
                })
                .sum();
            out[y * size + x] = 0.55 + amplitude * v / norm;
        }
    }
    out
}

fn band_limited_noise(rng: &mut ChaCha8Rng, size: usize, amplitude: f64) -> Result<Vec<f64>> {
    let white = Image::from_fn(size, size, 1, |_, _, _| rng.random_range(-1.0..1.0))?;
    let smooth = gaussian_blur(&white, &GaussianParams::new(2, 1.0)?)?;
    let peak = smooth.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Ok(smooth.data().iter().map(|v| amplitude * v / peak).collect())
}

/// Random smooth curve rasterized as a union of discs.
fn draw_curve(rng: &mut ChaCha8Rng, size: usize, thickness: (f64, f64)) -> Vec<bool> {
    let s = size as f64;
    let mut out = vec![false; size * size];
    let radius = rng.random_range(thickness.0..=thickness.1) / 2.0;
    let (mut x, mut y) = (rng.random_range(0.1 * s..0.9 * s), rng.random_range(0.1 * s..0.9 * s));
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut turn = 0.0;
    let length = rng.random_range(0.6 * s..1.5 * s) as usize;
    let r = radius.ceil() as isize;
    for _ in 0..length {
        let (cx, cy) = (x.floor() as isize, y.floor() as isize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || py < 0 || px >= size as isize || py >= size as isize {
                    continue;
                }
                let ddx = px as f64 + 0.5 - x;
                let ddy = py as f64 + 0.5 - y;
                if ddx * ddx + ddy * ddy <= radius * radius {
                    out[py as usize * size + px as usize] = true;
                }
            }
        }
        turn = 0.9 * turn + rng.random_range(-0.04..0.04);
        heading += turn;
        x += heading.cos();
        y += heading.sin();
        if x < 0.0 || y < 0.0 || x >= s || y >= s {
            break;
        }
    }
    out
}

/// Renders one geometry: smooth background, band-limited noise and dark
/// curvilinear strokes whose support is the mask.
pub fn render_geometry(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthImage> {
    let size = cfg.image_size;
    let n = size * size;
    let target_curves = rng.random_range(cfg.curves.0..=cfg.curves.1);
    let mut support = vec![false; n];
    let mut ones = 0usize;
    let mut accepted = 0usize;
    for _ in 0..200 {
        let frac = ones as f64 / n as f64;
        if accepted >= target_curves && frac >= cfg.foreground.0 {
            break;
        }
        let curve = draw_curve(rng, size, cfg.thickness);
        let merged = support.iter().zip(&curve).filter(|(a, b)| **a || **b).count();
        if merged as f64 / n as f64 > cfg.foreground.1 || merged == ones {
            continue;
        }
        for (s, c) in support.iter_mut().zip(&curve) {
            *s |= *c;
        }
        ones = merged;
        accepted += 1;
    }
    let background = smooth_background(rng, size, cfg.background_amplitude);
    let noise = band_limited_noise(rng, size, cfg.noise_amplitude)?;
    let shade: Vec<f64> = (0..n)
        .map(|i| {
            let base = background[i] + noise[i];
            if support[i] {
                base - cfg.stroke_contrast
            } else {
                base
            }
        })
        .collect();
    let image = Image::from_fn(size, size, cfg.channels, |y, x, c| {
        let tint = if cfg.channels == 3 { CHANNEL_TINT[c] } else { 1.0 };
        (shade[y * size + x] * tint).clamp(0.0, 1.0)
    })?;
    let mask = Mask::new(size, size, support.iter().map(|b| u8::from(*b)).collect())?;
    Ok(SynthImage {
        image,
        strokes: mask.clone(),
        mask,
    })
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub domain: usize,
    /// Index of the geometry this sample was rendered from.
    pub geometry: usize,
    pub image: Image,
    pub mask: Mask,
    pub split: Split,
}

fn split_for(cfg: &SynthConfig, domain: usize, index: usize) -> Split {
    if domain > 0 {
        return Split::Test;
    }
    let val = (cfg.val_fraction * cfg.count as f64).round() as usize;
    if index >= cfg.count - val.min(cfg.count) {
        Split::Val
    } else {
        Split::Train
    }
}

/// Generates the synthetic dataset in memory. Domain 0 is split into
/// train/val; every other domain is test data.
pub fn generate_synthetic_samples(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared: Vec<SynthImage> = if cfg.shared_geometry {
        (0..cfg.count).map(|_| render_geometry(cfg, &mut rng)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(cfg.count * cfg.domains.len());
    for (d, transform) in cfg.domains.iter().enumerate() {
        for i in 0..cfg.count {
            let (geometry, base) = if cfg.shared_geometry {
                (i, shared[i].clone())
            } else {
                (d * cfg.count + i, render_geometry(cfg, &mut rng)?)
            };
            out.push(SynthSample {
                id: format!("d{d}_{i:04}"),
                domain: d,
                geometry,
                image: transform.apply(&base.image)?,
                mask: base.mask,
                split: split_for(cfg, d, i),
            });
        }
    }
    Ok(out)
}

/// Writes the dataset as PNGs under `out_dir/{images,masks}` plus
/// `out_dir/manifest.tsv`; returns the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let samples = generate_synthetic_samples(cfg)?;
    for sub in ["images", "masks"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = DatasetManifest::default();
    for s in &samples {
        let image_path = out_dir.join("images").join(format!("{}.png", s.id));
        let mask_path = out_dir.join("masks").join(format!("{}.png", s.id));
        write_image(&s.image, &image_path)?;
        write_mask(&s.mask, &mask_path)?;
        manifest.records.push(ManifestRecord {
            image_path,
            mask_path,
            split: s.split,
            domain_id: format!("d{}", s.domain),
        });
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}

/// Converts in-memory synthetic samples into a [`Dataset`].
pub fn synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(Dataset {
        samples: generate_synthetic_samples(cfg)?
            .into_iter()
            .map(|s| Sample {
                id: s.id,
                image: s.image,
                mask: s.mask,
                split: s.split,
                domain: format!("d{}", s.domain),
            })
            .collect(),
    })
}

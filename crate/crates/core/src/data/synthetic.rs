use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{split_manifest, Manifest, ManifestEntry, Split};
use super::netpbm::encode;
use super::Sample;
use crate::config::{self, Settings};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub extent: (usize, usize),
    pub ratio_range: (f64, f64),
    pub blobs_per_image: (usize, usize),
    pub noise: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 200,
            extent: (64, 64),
            ratio_range: (0.005, 0.05),
            blobs_per_image: (1, 2),
            noise: 0.05,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.extent;
        let (lo, hi) = self.ratio_range;
        let px = (h * w) as f64;
        if h == 0 || w == 0 {
            return Err(Error::invalid("synthetic extent must be non-empty"));
        }
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::invalid(format!("ratio range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1")));
        }
        if lo * px < 1.0 {
            return Err(Error::invalid(format!(
                "ratio {lo} is below one pixel at {h}x{w}"
            )));
        }
        let (bmin, bmax) = self.blobs_per_image;
        if bmin == 0 || bmin > bmax {
            return Err(Error::invalid("blobs_per_image must be a range with 1 <= min <= max"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise level must be non-negative"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        Ok(())
    }
}

/// Irregular blob: an ellipse whose radius is modulated by a few low
/// harmonics of the polar angle.
#[derive(Clone, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    aspect: f64,
    angle: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut impl Rng, h: usize, w: usize) -> Self {
        let margin = 0.15;
        Blob {
            cy: rng.gen_range(margin..1.0 - margin) * h as f64,
            cx: rng.gen_range(margin..1.0 - margin) * w as f64,
            radius: rng.gen_range(0.6..1.4),
            aspect: rng.gen_range(0.6..1.0),
            angle: rng.gen_range(0.0..PI),
            harmonics: [
                (rng.gen_range(0.0..0.15), rng.gen_range(0.0..2.0 * PI)),
                (rng.gen_range(0.0..0.1), rng.gen_range(0.0..2.0 * PI)),
                (rng.gen_range(0.0..0.06), rng.gen_range(0.0..2.0 * PI)),
            ],
        }
    }

    fn contains(&self, y: f64, x: f64, scale: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = (-dx * s + dy * c) / self.aspect;
        let theta = v.atan2(u);
        let mut r = 1.0;
        for (k, &(a, phase)) in self.harmonics.iter().enumerate() {
            r += a * ((k as f64 + 2.0) * theta + phase).cos();
        }
        (u * u + v * v).sqrt() <= scale * self.radius * r
    }
}

fn rasterize(blobs: &[Blob], h: usize, w: usize, scale: f64) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            m[y * w + x] = blobs.iter().any(|b| b.contains(py, px, scale));
        }
    }
    m
}

/// Mask whose foreground count is driven to `target` pixels by bisection on
/// a common radius scale. Returns the closest mask found.
fn fit_mask(blobs: &[Blob], h: usize, w: usize, target: f64) -> Vec<bool> {
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64;
    let (mut lo, mut hi) = (0.0, (h.max(w) as f64) * 2.0);
    let mut best = rasterize(blobs, h, w, hi);
    let mut best_err = (count(&best) - target).abs();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let m = rasterize(blobs, h, w, mid);
        let c = count(&m);
        let err = (c - target).abs();
        if err < best_err || (err == best_err && c > 0.0 && count(&best) == 0.0) {
            best = m;
            best_err = err;
        }
        if err / target < 0.1 && c > 0.0 {
            break;
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

/// Generate sample `index` of `spec` in memory.
pub fn synthesize(spec: &SyntheticSpec, index: usize) -> Result<Sample> {
    let (h, w) = spec.extent;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let (lo, hi) = spec.ratio_range;
    let target_ratio = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let n_blobs = rng.gen_range(spec.blobs_per_image.0..=spec.blobs_per_image.1);
    let blobs: Vec<Blob> = (0..n_blobs).map(|_| Blob::random(&mut rng, h, w)).collect();
    let target = target_ratio * (h * w) as f64;
    let mask = fit_mask(&blobs, h, w, target);
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::Data(format!("target ratio {target_ratio} unreachable at {h}x{w}")));
    }

    let base: [f64; 3] = [
        0.45 + rng.gen_range(-0.08..0.08),
        0.30 + rng.gen_range(-0.08..0.08),
        0.25 + rng.gen_range(-0.06..0.06),
    ];
    let contrast = rng.gen_range(0.18..0.32);
    let lesion: [f64; 3] = [1.0, 0.7, 0.35];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.02..0.08),
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut image = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let tex: f64 = waves
                .iter()
                .map(|&(a, fy, fx, ph)| a * (fy * y as f64 + fx * x as f64 + ph).sin())
                .sum();
            let inside = mask[y * w + x];
            for c in 0..3 {
                let mut v = base[c] + tex;
                if inside {
                    v += contrast * lesion[c];
                }
                if spec.noise > 0.0 {
                    v += rng.gen_range(-spec.noise..spec.noise);
                }
                // Quantize so the in-memory sample equals what is written.
                let q = (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() / 255.0;
                image.data_mut()[(c * h + y) * w + x] = q as f32;
            }
        }
    }
    let mask = Tensor::from_fn(&[1, h, w], |i| if mask[i] { 1.0 } else { 0.0 });
    Ok(Sample {
        id: format!("syn{index:05}"),
        image,
        mask,
    })
}

/// Encoded dataset files, keyed by path relative to the dataset root.
/// `manifest.tsv` comes last.
pub fn render_synthetic(spec: &SyntheticSpec) -> Result<(Manifest, Vec<(PathBuf, Vec<u8>)>)> {
    spec.validate()?;
    let results = par::map_indices(spec.n_samples, |i| -> Result<(ManifestEntry, Vec<u8>, Vec<u8>)> {
        let s = synthesize(spec, i)?;
        let entry = ManifestEntry {
            size_ratio: s.size_ratio(),
            image: PathBuf::from("images").join(format!("{}.ppm", s.id)),
            mask: PathBuf::from("masks").join(format!("{}.pgm", s.id)),
            id: s.id.clone(),
            split: Split::Train,
        };
        Ok((entry, encode(&s.image)?, encode(&s.mask)?))
    });
    let mut entries = Vec::with_capacity(spec.n_samples);
    let mut files = Vec::with_capacity(2 * spec.n_samples + 1);
    for r in results {
        let (entry, image, mask) = r?;
        files.push((entry.image.clone(), image));
        files.push((entry.mask.clone(), mask));
        entries.push(entry);
    }
    let entries = if entries.len() >= 2 {
        split_manifest(entries, spec.train_fraction, spec.seed)?
    } else {
        entries
    };
    let manifest = Manifest {
        root: PathBuf::new(),
        entries,
    };
    files.push((PathBuf::from("manifest.tsv"), manifest.to_text().into_bytes()));
    Ok((manifest, files))
}

/// Write the dataset under `dir` (`images/`, `masks/`, `manifest.tsv`) and
/// return the manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let (mut manifest, files) = render_synthetic(spec)?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (rel, bytes) in &files {
        let p = dir.join(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    manifest.root = dir.to_path_buf();
    Ok(manifest)
}

impl Settings for SyntheticSpec {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "n_samples" => self.n_samples = config::parse(key, v)?,
            "extent" => self.extent = config::parse_extent(key, v)?,
            "ratio_range" => self.ratio_range = config::parse_pair(key, v)?,
            "blobs_per_image" => self.blobs_per_image = config::parse_pair(key, v)?,
            "noise" => self.noise = config::parse(key, v)?,
            "train_fraction" => self.train_fraction = config::parse(key, v)?,
            "seed" => self.seed = config::parse(key, v)?,
            _ => return Err(config::unknown_key(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_samples", self.n_samples.to_string()),
            ("extent", format!("{}x{}", self.extent.0, self.extent.1)),
            ("ratio_range", format!("{},{}", self.ratio_range.0, self.ratio_range.1)),
            ("blobs_per_image", format!("{},{}", self.blobs_per_image.0, self.blobs_per_image.1)),
            ("noise", self.noise.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

//! Image datasets held as planar 8-bit pixels, directory ingestion and the
//! synthetic two-texture corpus.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::image::{load_prepared, save_png};
use crate::rng::{permutation, rng_for};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    shape: [usize; 3],
    pixels: Vec<u8>,
}

/// Files that could not be decoded while loading a directory.
#[derive(Debug, Default)]
pub struct Skipped(pub Vec<(PathBuf, String)>);

impl Dataset {
    pub fn new(shape: [usize; 3], ids: Vec<String>, pixels: Vec<u8>) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || pixels.len() != per * ids.len() {
            return Err(Error::InvalidShape(format!(
                "{} images of {shape:?} need {} bytes, got {}",
                ids.len(),
                per * ids.len(),
                pixels.len()
            )));
        }
        Ok(Dataset { ids, shape, pixels })
    }

    /// Loads every `.png` / `.ppm` below `root` (sorted, recursive), center
    /// cropped and box-downsampled to `size`. Undecodable files are skipped
    /// and reported.
    pub fn load_dir(root: &Path, size: usize, channels: usize) -> Result<(Self, Skipped)> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(root).to_path_buf();
                Error::io(path, e.into())
            })?;
            let ext = entry
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if entry.file_type().is_file() && matches!(ext.as_deref(), Some("png" | "ppm")) {
                files.push(entry.into_path());
            }
        }
        let mut ids = Vec::new();
        let mut pixels = Vec::new();
        let mut skipped = Skipped::default();
        for f in files {
            match load_prepared(&f, size, channels) {
                Ok(px) => {
                    let rel = f.strip_prefix(root).unwrap_or(&f);
                    ids.push(rel.to_string_lossy().replace('\\', "/"));
                    pixels.extend(px);
                }
                Err(e) => skipped.0.push((f, e.to_string())),
            }
        }
        Ok((Dataset::new([channels, size, size], ids, pixels)?, skipped))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn per_image(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Integer pixel values of the selected images as `[n, C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let [c, h, w] = self.shape;
        let data = indices
            .iter()
            .flat_map(|&i| self.image(i).iter().map(|&v| v as f64))
            .collect();
        Tensor::from_shape_vec(&[indices.len(), c, h, w], data)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            shape: self.shape,
            pixels: indices.iter().flat_map(|&i| self.image(i).iter().copied()).collect(),
        }
    }

    /// Seeded `(train, held_out)` index split with `round(fraction * n)`
    /// held-out images; both sides keep at least one image when `n >= 2`.
    pub fn holdout_split(&self, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let mut held = ((n as f64) * fraction).round() as usize;
        if n >= 2 {
            held = held.clamp(usize::from(fraction > 0.0), n - 1);
        } else {
            held = 0;
        }
        let perm = permutation(&mut rng_for(seed, &[0x4e1d]), n);
        let (mut h, mut t): (Vec<usize>, Vec<usize>) = (perm[..held].to_vec(), perm[held..].to_vec());
        h.sort_unstable();
        t.sort_unstable();
        (t, h)
    }

    /// Writes each image as `<dir>/<stem>.png`.
    pub fn save_pngs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, id) in self.ids.iter().enumerate() {
            let planar: Vec<f64> = self.image(i).iter().map(|&v| v as f64 / 255.0).collect();
            save_png(&dir.join(format!("{id}.png")), &planar, self.shape)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    /// Gently curved intensity ramps at a random angle, with faint grain.
    Smooth,
    /// Period-2 or period-3 stripes at a random orientation.
    Stripes,
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Texture::Smooth => "smooth",
            Texture::Stripes => "stripes",
        })
    }
}

impl FromStr for Texture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Texture::Smooth),
            "stripes" => Ok(Texture::Stripes),
            _ => Err(Error::InvalidArgument(format!("unknown texture {s:?}"))),
        }
    }
}

/// Per-pixel sensor-like grain of the smooth class, in `[0, 1]` units.
const GRAIN: f64 = 1.5 / 255.0;

/// One planar `C x size x size` texture image: a gently curved gradient
/// with faint grain, or hard-edged stripes of period 2-3 pixels.
pub fn texture_image(kind: Texture, size: usize, channels: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = vec![0u8; channels * size * size];
    let base: f64 = rng.random_range(0.3..0.7);
    let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.05..0.05)).collect();
    let coord = |k: usize| (k as f64 + 0.5) / size as f64 - 0.5;
    match kind {
        Texture::Smooth => {
            let theta: f64 = rng.random_range(0.0..2.0 * PI);
            let amp: f64 = rng.random_range(0.1..0.4);
            let bend: f64 = rng.random_range(-0.2..0.2);
            let grain = Normal::new(0.0, GRAIN).expect("positive std");
            for c in 0..channels {
                let amp_c = amp * rng.random_range(0.8..1.2);
                for i in 0..size {
                    for j in 0..size {
                        let t = theta.cos() * coord(j) + theta.sin() * coord(i);
                        let u = theta.cos() * coord(i) - theta.sin() * coord(j);
                        let v = base + tint[c] + amp_c * t + bend * u * u + grain.sample(rng);
                        out[(c * size + i) * size + j] = to_byte(v);
                    }
                }
            }
        }
        Texture::Stripes => {
            let period = rng.random_range(2..=3) as f64;
            let (di, dj) = [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (1.0, -1.0)][rng.random_range(0..4)];
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let amp: f64 = rng.random_range(0.15..0.3);
            for c in 0..channels {
                for i in 0..size {
                    for j in 0..size {
                        let s = (2.0 * PI * (di * i as f64 + dj * j as f64) / period + phase).sin();
                        out[(c * size + i) * size + j] = to_byte(base + tint[c] + amp * s.signum());
                    }
                }
            }
        }
    }
    out
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `n` seeded textures named `<kind>_<index>`.
pub fn texture_dataset(kind: Texture, n: usize, size: usize, channels: usize, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, &[0x7e47, kind as u64]);
    let mut pixels = Vec::with_capacity(n * channels * size * size);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        pixels.extend(texture_image(kind, size, channels, &mut rng));
        ids.push(format!("{kind}_{i:04}"));
    }
    Dataset { ids, shape: [channels, size, size], pixels }
}

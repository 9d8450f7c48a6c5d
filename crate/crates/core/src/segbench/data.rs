use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rejection-sampling budget for placing the two circles.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub width: usize,
    pub height: usize,
    pub radius: usize,
    pub dark: f64,
    pub bright: f64,
    pub background: f64,
    /// Noise levels, assigned to images in turn.
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 100,
            width: 64,
            height: 64,
            radius: 10,
            dark: 0.3,
            bright: 0.7,
            background: 1.0,
            sigmas: vec![0.0, 0.03, 0.06],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("sigmas must be a nonempty list of nonnegative values".into()));
        }
        for v in [self.dark, self.bright, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("intensity {v} outside [0, 1]")));
            }
        }
        if self.dark >= self.bright {
            return Err(Error::Config("the target circle must be the darker one".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: usize,
    pub cy: usize,
    pub radius: usize,
}

impl Circle {
    /// Pixel centers at distance `<= radius`.
    pub fn contains(&self, col: usize, row: usize) -> bool {
        let dx = col as i64 - self.cx as i64;
        let dy = row as i64 - self.cy as i64;
        let r = self.radius as i64;
        dx * dx + dy * dy <= r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One image with its target mask (the darker circle).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in `[0, 1]`, quantized to 16 bits.
    pub image: Vec<f64>,
    pub mask: Vec<bool>,
    pub sigma: f64,
    pub dark: Circle,
    pub bright: Circle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub sigma: f64,
    pub dark: Circle,
    pub bright: Circle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_seed: u64,
    /// How circles are placed and noise levels assigned.
    pub placement: String,
    pub noise_assignment: String,
    pub config: SynthConfig,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn place(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<(Circle, Circle)> {
    let r = cfg.radius;
    if 2 * r + 1 > cfg.width || 2 * r + 1 > cfg.height {
        return Err(Error::Placement { attempts: 0 });
    }
    let draw = |rng: &mut ChaCha8Rng| Circle {
        cx: rng.random_range(r..cfg.width - r),
        cy: rng.random_range(r..cfg.height - r),
        radius: r,
    };
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let (a, b) = (draw(rng), draw(rng));
        let dx = a.cx as f64 - b.cx as f64;
        let dy = a.cy as f64 - b.cy as f64;
        // Strictly more than a diameter apart: no pixel lies in both disks.
        if dx * dx + dy * dy > (4 * r * r) as f64 {
            return Ok((a, b));
        }
    }
    Err(Error::Placement {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// The `index`-th image of `split`; independent of every other image.
pub fn generate_sample(cfg: &SynthConfig, split: Split, index: usize) -> Result<Sample> {
    let global = match split {
        Split::Train => index,
        Split::Val => cfg.n_train + index,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(global as u64);
    let (dark, bright) = place(&mut rng, cfg)?;
    let sigma = cfg.sigmas[global % cfg.sigmas.len()];
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let in_dark = dark.contains(col, row);
            let base = if in_dark {
                cfg.dark
            } else if bright.contains(col, row) {
                cfg.bright
            } else {
                cfg.background
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            image.push(quantize(base + sigma * z) as f64 / 65535.0);
            mask.push(in_dark);
        }
    }
    Ok(Sample {
        id: format!("{global:05}"),
        width: w,
        height: h,
        image,
        mask,
        sigma,
        dark,
        bright,
    })
}

/// Generate both splits in memory.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let gen = |split, n| (0..n).into_par_iter().map(|i| generate_sample(cfg, split, i)).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        config: cfg.clone(),
        train: gen(Split::Train, cfg.n_train)?,
        val: gen(Split::Val, cfg.n_val)?,
    })
}

fn manifest_entries(samples: &[Sample]) -> Vec<ManifestEntry> {
    samples
        .iter()
        .map(|s| ManifestEntry {
            id: s.id.clone(),
            sigma: s.sigma,
            dark: s.dark,
            bright: s.bright,
        })
        .collect()
}

/// Write the dataset under `root` and return the manifest path.
pub fn generate_dataset(cfg: &SynthConfig, root: &Path) -> Result<PathBuf> {
    let data = synthesize(cfg)?;
    for (split, samples) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
        let dir = root.join(split.dir());
        fs::create_dir_all(&dir)?;
        samples.par_iter().try_for_each(|s| -> Result<()> {
            let pixels: Vec<u16> = s.image.iter().map(|&v| quantize(v)).collect();
            fs::write(dir.join(format!("{}.img.pgm", s.id)), encode_pgm16(s.width, s.height, &pixels))?;
            let mask: Vec<u8> = s.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
            fs::write(dir.join(format!("{}.mask.pgm", s.id)), encode_pgm8(s.width, s.height, &mask))?;
            Ok(())
        })?;
    }
    let manifest = Manifest {
        generator_seed: cfg.seed,
        placement: "uniform integer centers per image, both disks inside the frame, centers more than one diameter apart".into(),
        noise_assignment: "image k (train then val, k from 0) uses sigmas[k mod len]".into(),
        config: cfg.clone(),
        train: manifest_entries(&data.train),
        val: manifest_entries(&data.val),
    };
    let path = root.join("manifest.json");
    let mut file = fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    Ok(path)
}

/// Read a dataset written by [`generate_dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::Format {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    let load = |split: Split, entries: &[ManifestEntry]| -> Result<Vec<Sample>> {
        entries
            .par_iter()
            .map(|e| {
                let dir = root.join(split.dir());
                let (w, h, img) = read_pgm(&dir.join(format!("{}.img.pgm", e.id)))?;
                let (mw, mh, mask) = read_pgm(&dir.join(format!("{}.mask.pgm", e.id)))?;
                if (w, h) != (mw, mh) {
                    return Err(Error::Format {
                        path: dir.join(&e.id),
                        detail: format!("image {w}x{h} but mask {mw}x{mh}"),
                    });
                }
                Ok(Sample {
                    id: e.id.clone(),
                    width: w,
                    height: h,
                    image: img.iter().map(|&v| v as f64 / 65535.0).collect(),
                    mask: mask.iter().map(|&v| v > 0).collect(),
                    sigma: e.sigma,
                    dark: e.dark,
                    bright: e.bright,
                })
            })
            .collect()
    };
    Ok(Dataset {
        train: load(Split::Train, &manifest.train)?,
        val: load(Split::Val, &manifest.val)?,
        config: manifest.config,
    })
}

/// Binary PGM with maxval 65535 (big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, pixels: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

pub fn encode_pgm8(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decode a binary PGM into `(width, height, samples)`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u16>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes.get(pos + 1..).ok_or("missing raster")?;
    let n = w * h;
    let samples = match maxval {
        1..=255 if data.len() == n => data.iter().map(|&b| b as u16).collect(),
        256..=65535 if data.len() == 2 * n => data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        1..=65535 => return Err(format!("raster has {} bytes for {w}x{h} at maxval {maxval}", data.len())),
        _ => return Err(format!("invalid maxval {maxval}")),
    };
    Ok((w, h, samples))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    decode_pgm(&fs::read(path)?).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}

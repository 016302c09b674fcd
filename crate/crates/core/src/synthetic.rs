//! Synthetic co-registered scenes with known informative bands.
//!
//! * Labels: a grid of square blocks, each assigned a random class; every
//!   class owns at least one block.
//! * Planted bands: each class has a binary code over the planted bands; a
//!   band sits at `LOW` or `LOW + sep` for the class, plus Gaussian noise.
//! * LiDAR: smooth terrain plus a small class-dependent height offset plus
//!   noise. The terrain dominates, so LiDAR is only weakly discriminative.
//! * Redundant bands: `a · lidar + b + noise`, highly correlated with LiDAR.
//! * Every other band is pure noise.
//!
//! Cube and LiDAR are min-max normalized per band / channel at the end.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{normalize_per_band, normalize_per_channel, HsiCube, LabelMap, LidarRaster};
use crate::error::{Error, Result};

const LOW: f64 = 0.3;
const NOISE_MEAN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub lidar_channels: usize,
    pub classes: usize,
    pub planted_bands: Vec<usize>,
    pub lidar_redundant_bands: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_block")]
    pub block_size: usize,
}

fn default_block() -> usize {
    8
}

impl SynthSpec {
    /// Spec with `planted` and `redundant` band positions drawn from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_layout(
        width: usize,
        height: usize,
        bands: usize,
        classes: usize,
        planted: usize,
        redundant: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if planted + redundant > bands {
            return Err(Error::Validation(format!(
                "{planted} planted + {redundant} redundant bands exceed {bands} bands"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a40);
        let mut idx: Vec<usize> = (0..bands).collect();
        idx.shuffle(&mut rng);
        let mut p = idx[..planted].to_vec();
        let mut r = idx[planted..planted + redundant].to_vec();
        p.sort_unstable();
        r.sort_unstable();
        let spec = Self {
            width,
            height,
            bands,
            lidar_channels: 1,
            classes,
            planted_bands: p,
            lidar_redundant_bands: r,
            noise_sigma,
            seed,
            block_size: default_block(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 64×64 scene, 40 bands, 8 planted, 8 LiDAR-redundant, σ = 0.05, 8 classes.
    pub fn standard(seed: u64) -> Self {
        Self::with_random_layout(64, 64, 40, 8, 8, 8, 0.05, seed).expect("standard spec is valid")
    }

    /// Separation between the two planted levels.
    pub fn separation(&self) -> f64 {
        (4.0 * self.noise_sigma).max(0.1)
    }

    pub fn validate(&self) -> Result<()> {
        let v = |m: String| Err(Error::Validation(m));
        if self.width == 0 || self.height == 0 || self.bands == 0 || self.lidar_channels == 0 {
            return v("scene dimensions must be positive".into());
        }
        if self.classes < 2 {
            return v(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return v(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.block_size == 0 {
            return v("block_size must be positive".into());
        }
        let blocks = self.width.div_ceil(self.block_size) * self.height.div_ceil(self.block_size);
        if blocks < self.classes {
            return v(format!("{blocks} label blocks cannot hold {} classes", self.classes));
        }
        if self.planted_bands.is_empty() {
            return v("need at least one planted band".into());
        }
        if self.planted_bands.windows(2).any(|w| w[0] >= w[1]) {
            return v("planted_bands must be strictly increasing".into());
        }
        let all = self.planted_bands.iter().chain(&self.lidar_redundant_bands);
        if let Some(b) = all.clone().find(|&&b| b >= self.bands) {
            return v(format!("band {b} out of range for {} bands", self.bands));
        }
        if let Some(b) = self
            .lidar_redundant_bands
            .iter()
            .find(|b| self.planted_bands.contains(b))
        {
            return v(format!("band {b} is both planted and redundant"));
        }
        let mut r = self.lidar_redundant_bands.clone();
        r.sort_unstable();
        if r.windows(2).any(|w| w[0] == w[1]) {
            return v("duplicate redundant band".into());
        }
        if (self.classes as f64).log2() > self.planted_bands.len() as f64 {
            return v(format!(
                "{} classes need at least {} planted bands for distinct codes",
                self.classes,
                (self.classes as f64).log2().ceil()
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantBand {
    pub band: usize,
    pub lidar_channel: usize,
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub planted_bands: Vec<usize>,
    /// `[class][planted]` pre-normalization mean level.
    pub signatures: Vec<Vec<f64>>,
    /// `[class][channel]` height offset above terrain.
    pub lidar_heights: Vec<Vec<f64>>,
    pub redundant: Vec<RedundantBand>,
    pub spec: SynthSpec,
}

impl SynthTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad truth manifest: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_json(&text).map_err(|e| Error::load(path, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub lidar: LidarRaster,
    pub labels: LabelMap,
    pub truth: SynthTruth,
}

#[derive(Clone, Copy)]
enum Role {
    Planted(usize),
    Redundant(usize),
    Noise,
}

fn block_labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let bw = spec.width.div_ceil(spec.block_size);
    let bh = spec.height.div_ceil(spec.block_size);
    let mut blocks: Vec<u32> = (0..bw * bh)
        .map(|_| rng.gen_range(1..=spec.classes as u32))
        .collect();
    let mut slots: Vec<usize> = (0..blocks.len()).collect();
    slots.shuffle(rng);
    for (k, &slot) in slots.iter().take(spec.classes).enumerate() {
        blocks[slot] = k as u32 + 1;
    }
    let mut labels = vec![0; spec.width * spec.height];
    for r in 0..spec.height {
        for c in 0..spec.width {
            labels[r * spec.width + c] = blocks[(r / spec.block_size) * bw + c / spec.block_size];
        }
    }
    labels
}

fn balanced_column(k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut col: Vec<bool> = (0..k).map(|i| i < k / 2).collect();
    col.shuffle(rng);
    col
}

fn min_hamming(codes: &[Vec<bool>]) -> usize {
    let mut best = usize::MAX;
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d = codes[i].iter().zip(&codes[j]).filter(|(a, b)| a != b).count();
            best = best.min(d);
        }
    }
    best
}

/// `[class][planted]` bits: random balanced columns, preferring large
/// pairwise Hamming distance.
fn class_codes(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<bool>>> {
    for target in (1..=3.min(n)).rev() {
        for _ in 0..4000 {
            let cols: Vec<Vec<bool>> = (0..n).map(|_| balanced_column(k, rng)).collect();
            let codes: Vec<Vec<bool>> = (0..k).map(|c| cols.iter().map(|col| col[c]).collect()).collect();
            if min_hamming(&codes) >= target {
                return Ok(codes);
            }
        }
    }
    Err(Error::Validation(format!(
        "could not find distinct codes for {k} classes over {n} planted bands"
    )))
}

/// Scene before per-band normalization.
pub fn generate_raw(spec: &SynthSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h, b, ch, k) = (spec.width, spec.height, spec.bands, spec.lidar_channels, spec.classes);
    let labels = block_labels(spec, &mut rng);
    let sep = spec.separation();

    let codes = class_codes(k, spec.planted_bands.len(), &mut rng)?;
    let signatures: Vec<Vec<f64>> = codes
        .iter()
        .map(|code| code.iter().map(|&bit| if bit { LOW + sep } else { LOW }).collect())
        .collect();
    let height_cols: Vec<Vec<bool>> = (0..ch).map(|_| balanced_column(k, &mut rng)).collect();
    let lidar_heights: Vec<Vec<f64>> = (0..k)
        .map(|c| height_cols.iter().map(|col| if col[c] { sep } else { 0.0 }).collect())
        .collect();
    let terrain: Vec<[f64; 4]> = (0..ch)
        .map(|_| {
            [
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let redundant: Vec<RedundantBand> = spec
        .lidar_redundant_bands
        .iter()
        .enumerate()
        .map(|(i, &band)| RedundantBand {
            band,
            lidar_channel: i % ch,
            scale: rng.gen_range(0.5..1.5),
            offset: rng.gen_range(0.0..0.5),
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let eps = |rng: &mut ChaCha8Rng| if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };

    let mut role = vec![Role::Noise; b];
    for (j, &band) in spec.planted_bands.iter().enumerate() {
        role[band] = Role::Planted(j);
    }
    for (i, r) in redundant.iter().enumerate() {
        role[r.band] = Role::Redundant(i);
    }

    let mut lidar = Vec::with_capacity(w * h * ch);
    let mut cube = Vec::with_capacity(w * h * b);
    for r in 0..h {
        for c in 0..w {
            let class = labels[r * w + c] as usize - 1;
            let (y, x) = (r as f64 / h as f64, c as f64 / w as f64);
            let px_lidar: Vec<f64> = (0..ch)
                .map(|m| {
                    let [f1, p1, f2, p2] = terrain[m];
                    let t = 0.5 * ((2.0 * PI * f1 * y + p1).sin() + (2.0 * PI * f2 * x + p2).cos());
                    t + lidar_heights[class][m] + eps(&mut rng)
                })
                .collect();
            for band_role in &role {
                let v = match band_role {
                    Role::Planted(j) => signatures[class][*j] + eps(&mut rng),
                    Role::Redundant(i) => {
                        let rb = &redundant[*i];
                        rb.scale * px_lidar[rb.lidar_channel] + rb.offset + eps(&mut rng)
                    }
                    Role::Noise => NOISE_MEAN + eps(&mut rng),
                };
                cube.push(v);
            }
            lidar.extend(px_lidar);
        }
    }

    let class_names = (1..=k).map(|i| format!("class_{i}")).collect();
    Ok(Scene {
        cube: HsiCube::new(w, h, b, cube)?,
        lidar: LidarRaster::new(w, h, ch, lidar)?,
        labels: LabelMap::new(w, h, labels, class_names)?,
        truth: SynthTruth {
            planted_bands: spec.planted_bands.clone(),
            signatures,
            lidar_heights,
            redundant,
            spec: spec.clone(),
        },
    })
}

/// Normalized scene; a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Scene> {
    let raw = generate_raw(spec)?;
    Ok(Scene {
        cube: normalize_per_band(&raw.cube),
        lidar: normalize_per_channel(&raw.lidar),
        ..raw
    })
}

/// `|selected ∩ planted| / min(|selected|, |planted|)`; 0 when either is empty.
pub fn recovery_score(selected: &[usize], truth: &SynthTruth) -> f64 {
    let denom = selected.len().min(truth.planted_bands.len());
    if denom == 0 {
        return 0.0;
    }
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    sel.dedup();
    let hits = sel.iter().filter(|b| truth.planted_bands.contains(b)).count();
    hits as f64 / denom as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, n) in [(8, 8), (9, 8), (3, 8), (2, 1), (12, 8)] {
            let codes = class_codes(k, n, &mut rng).unwrap();
            assert!(min_hamming(&codes) >= 1, "{k} {n}");
            for j in 0..n {
                assert!(codes.iter().any(|c| c[j]) && codes.iter().any(|c| !c[j]), "{k} {n} band {j}");
            }
        }
        assert!(min_hamming(&class_codes(8, 8, &mut rng).unwrap()) >= 3);
        assert!(class_codes(5, 2, &mut rng).is_err());
    }

    #[test]
    fn every_class_present() {
        let spec = SynthSpec {
            classes: 16,
            ..SynthSpec::with_random_layout(32, 32, 10, 16, 4, 2, 0.05, 3).unwrap()
        };
        let labels = block_labels(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        for k in 1..=16 {
            assert!(labels.contains(&k));
        }
    }
}

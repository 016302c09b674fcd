//! Co-registered hyperspectral / LiDAR / label rasters, patch sampling,
//! tokenization, splits, augmentation, and band–LiDAR correlation.
//!
//! All rasters store pixels row-major with channels interleaved: the value
//! of channel `c` at `(row, col)` lives at `(row * width + col) * channels + c`.

mod patch;
mod pearson;
pub mod presets;
pub(crate) mod raster;
mod split;

pub use patch::{augment, extract_patch, mirror_index, rotate_bilinear, tokenize, Augmentation, SamplePair};
pub use pearson::{pearson, pearson_band_lidar, write_correlation_csv};
pub use raster::{
    load_cube, load_labels, load_lidar, save_cube, save_labels, save_lidar, DType, RasterHeader,
};
pub use split::{split, SplitCounts, SplitSpec};

use crate::error::{Error, Result};

/// Hyperspectral reflectance cube, `width × height × bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    values: Vec<f64>,
    pub band_names: Option<Vec<String>>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        check_dims("hsi cube", width, height, bands, values.len())?;
        Ok(Self {
            width,
            height,
            bands,
            values,
            band_names: None,
        })
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(Error::Validation(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[(row * self.width + col) * self.bands + band]
    }

    /// All pixels of one band in row-major order.
    pub fn band(&self, band: usize) -> Vec<f64> {
        self.values.iter().skip(band).step_by(self.bands).copied().collect()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Rasterized LiDAR (DSM) channels, `width × height × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    values: Vec<f64>,
}

impl LidarRaster {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_dims("lidar raster", width, height, channels, values.len())?;
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.values.iter().skip(channel).step_by(self.channels).copied().collect()
    }
}

/// Per-pixel class ids: 0 is unlabeled, `1..=K` are classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u32>,
    pub class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>, class_names: Vec<String>) -> Result<Self> {
        check_dims("label map", width, height, 1, labels.len())?;
        let k = class_names.len() as u32;
        if let Some(&bad) = labels.iter().find(|&&l| l > k) {
            return Err(Error::Validation(format!(
                "label {bad} exceeds the {k} declared classes"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            class_names,
        })
    }

    /// Label map with generic class names `class_1..class_K`, K = max label.
    pub fn unnamed(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        let names = (1..=k).map(|i| format!("class_{i}")).collect();
        Self::new(width, height, labels, names)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Labeled pixel count per class, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

fn check_dims(what: &str, w: usize, h: usize, c: usize, len: usize) -> Result<()> {
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::Validation(format!(
            "{what} dimensions must be positive, got {w}x{h}x{c}"
        )));
    }
    if w * h * c != len {
        return Err(Error::Validation(format!(
            "{what} of {w}x{h}x{c} needs {} values, got {len}",
            w * h * c
        )));
    }
    Ok(())
}

pub(crate) fn check_coregistered(cube: &HsiCube, lidar: &LidarRaster) -> Result<()> {
    if cube.width != lidar.width || cube.height != lidar.height {
        return Err(Error::Validation(format!(
            "cube is {}x{} but lidar is {}x{}",
            cube.width, cube.height, lidar.width, lidar.height
        )));
    }
    Ok(())
}

/// Min-max scales each interleaved channel to [0, 1]; constant channels map to 0.
fn normalize_interleaved(values: &mut [f64], channels: usize) {
    for c in 0..channels {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.iter().skip(c).step_by(channels) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let range = hi - lo;
        for v in values.iter_mut().skip(c).step_by(channels) {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
}

pub fn normalize_per_band(cube: &HsiCube) -> HsiCube {
    let mut out = cube.clone();
    normalize_interleaved(&mut out.values, out.bands);
    out
}

pub fn normalize_per_channel(lidar: &LidarRaster) -> LidarRaster {
    let mut out = lidar.clone();
    normalize_interleaved(&mut out.values, out.channels);
    out
}

/// Extracts patches around `centers`, one sample per center.
pub fn build_samples(
    cube: &HsiCube,
    lidar: &LidarRaster,
    labels: &LabelMap,
    centers: &[(usize, usize)],
    patch_size: usize,
) -> Result<Vec<SamplePair>> {
    centers
        .iter()
        .map(|&(r, c)| {
            let mut s = extract_patch(cube, lidar, (r, c), patch_size)?;
            s.label = labels.get(r, c);
            if s.label == 0 {
                return Err(Error::Validation(format!("pixel ({r}, {c}) is unlabeled")));
            }
            Ok(s)
        })
        .collect()
}

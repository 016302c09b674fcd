use super::{check_coregistered, HsiCube, LidarRaster};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One `P×P` neighborhood of the cube and LiDAR raster around a pixel.
///
/// Patches are stored row-major with channels interleaved, like the rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub hsi_patch: Vec<f64>,
    pub lidar_patch: Vec<f64>,
    pub patch_size: usize,
    pub bands: usize,
    pub channels: usize,
    pub label: u32,
    pub center: (usize, usize),
}

impl SamplePair {
    pub fn hsi_at(&self, row: usize, col: usize, band: usize) -> f64 {
        self.hsi_patch[(row * self.patch_size + col) * self.bands + band]
    }

    pub fn lidar_at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.lidar_patch[(row * self.patch_size + col) * self.channels + channel]
    }

    fn map_pixels(&self, f: impl Fn(&[f64], usize) -> Vec<f64>) -> Self {
        Self {
            hsi_patch: f(&self.hsi_patch, self.bands),
            lidar_patch: f(&self.lidar_patch, self.channels),
            ..self.clone()
        }
    }
}

/// Reflects an out-of-range index back into `0..n` without repeating the
/// edge pixel (index -1 maps to 1).
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// `P×P` patch centered on `center = (row, col)`, mirror-padded at borders.
/// The label is left at 0; callers fill it from the label map.
pub fn extract_patch(
    cube: &HsiCube,
    lidar: &LidarRaster,
    center: (usize, usize),
    patch_size: usize,
) -> Result<SamplePair> {
    if patch_size == 0 || patch_size % 2 == 0 {
        return Err(Error::Config(format!("patch size must be odd, got {patch_size}")));
    }
    check_coregistered(cube, lidar)?;
    let (row, col) = center;
    if row >= cube.height || col >= cube.width {
        return Err(Error::Validation(format!(
            "center ({row}, {col}) outside {}x{} raster",
            cube.width, cube.height
        )));
    }
    let half = (patch_size / 2) as isize;
    let (b, c) = (cube.bands, lidar.channels);
    let mut hsi = Vec::with_capacity(patch_size * patch_size * b);
    let mut lid = Vec::with_capacity(patch_size * patch_size * c);
    for dr in -half..=half {
        let r = mirror_index(row as isize + dr, cube.height);
        for dc in -half..=half {
            let cc = mirror_index(col as isize + dc, cube.width);
            let base = (r * cube.width + cc) * b;
            hsi.extend_from_slice(&cube.values()[base..base + b]);
            let lbase = (r * lidar.width + cc) * c;
            lid.extend_from_slice(&lidar.values()[lbase..lbase + c]);
        }
    }
    Ok(SamplePair {
        hsi_patch: hsi,
        lidar_patch: lid,
        patch_size,
        bands: b,
        channels: c,
        label: 0,
        center,
    })
}

fn channel_tokens(patch: &[f64], channels: usize, pixels: usize) -> Tensor {
    let mut data = vec![0.0; channels * pixels];
    for p in 0..pixels {
        for ch in 0..channels {
            data[ch * pixels + p] = patch[p * channels + ch];
        }
    }
    Tensor::new(vec![channels, pixels], data).expect("positive dims")
}

/// Band-wise tokens: row `i` of the HSI tensor holds band `i`'s `P²` pixels
/// in row-major order. Same for LiDAR channels.
pub fn tokenize(sample: &SamplePair) -> (Tensor, Tensor) {
    let m = sample.patch_size * sample.patch_size;
    (
        channel_tokens(&sample.hsi_patch, sample.bands, m),
        channel_tokens(&sample.lidar_patch, sample.channels, m),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    Identity,
    Rot45,
    Rot90,
    FlipVertical,
    FlipHorizontal,
}

impl Augmentation {
    pub const ALL: [Augmentation; 5] = [
        Augmentation::Identity,
        Augmentation::Rot45,
        Augmentation::Rot90,
        Augmentation::FlipVertical,
        Augmentation::FlipHorizontal,
    ];

    pub fn apply(self, s: &SamplePair) -> SamplePair {
        let p = s.patch_size;
        match self {
            Augmentation::Identity => s.clone(),
            Augmentation::Rot45 => s.map_pixels(|x, ch| rotate_bilinear(x, p, ch, 45.0)),
            // counter-clockwise: out[r][c] = in[c][P-1-r]
            Augmentation::Rot90 => s.map_pixels(|x, ch| permute(x, p, ch, |r, c| (c, p - 1 - r))),
            Augmentation::FlipVertical => s.map_pixels(|x, ch| permute(x, p, ch, |r, c| (p - 1 - r, c))),
            Augmentation::FlipHorizontal => s.map_pixels(|x, ch| permute(x, p, ch, |r, c| (r, p - 1 - c))),
        }
    }
}

/// `[original, rot45, rot90, flip_v, flip_h]`, labels preserved.
pub fn augment(sample: &SamplePair) -> Vec<SamplePair> {
    Augmentation::ALL.iter().map(|a| a.apply(sample)).collect()
}

/// `out[r][c] = in[src(r, c)]` per channel.
fn permute(x: &[f64], p: usize, channels: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..p {
        for c in 0..p {
            let (sr, sc) = src(r, c);
            let dst = (r * p + c) * channels;
            let from = (sr * p + sc) * channels;
            out[dst..dst + channels].copy_from_slice(&x[from..from + channels]);
        }
    }
    out
}

/// Counter-clockwise rotation by `degrees` about the patch center with
/// bilinear resampling from the mirror-padded patch. Output keeps the `P×P`
/// size.
pub fn rotate_bilinear(x: &[f64], p: usize, channels: usize, degrees: f64) -> Vec<f64> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let ctr = (p as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; x.len()];
    let at = |r: isize, c: isize, ch: usize| x[(mirror_index(r, p) * p + mirror_index(c, p)) * channels + ch];
    for r in 0..p {
        for c in 0..p {
            let (y, xx) = (r as f64 - ctr, c as f64 - ctr);
            let ys = cos * y + sin * xx + ctr;
            let xs = -sin * y + cos * xx + ctr;
            let (y0, x0) = (ys.floor(), xs.floor());
            let (wy, wx) = (ys - y0, xs - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..channels {
                let top = lerp(at(y0, x0, ch), at(y0, x0 + 1, ch), wx);
                let bottom = lerp(at(y0 + 1, x0, ch), at(y0 + 1, x0 + 1, ch), wx);
                out[(r * p + c) * channels + ch] = lerp(top, bottom, wy);
            }
        }
    }
    out
}

// a + (b - a)·t returns `a` exactly when a == b
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

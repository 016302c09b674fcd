use std::fmt::Write as _;
use std::path::Path;

use super::{check_coregistered, HsiCube, LidarRaster};
use crate::error::{Error, Result};

/// Single-pass co-moment accumulator (Welford update).
#[derive(Debug, Default, Clone, Copy)]
struct CoMoments {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    fn correlation(&self) -> f64 {
        if self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return 0.0;
        }
        (self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Pearson r of two equal-length series; 0 when either is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson inputs differ in length");
    let mut acc = CoMoments::default();
    for (&a, &b) in x.iter().zip(y) {
        acc.push(a, b);
    }
    acc.correlation()
}

/// Correlation of every band with one LiDAR channel over all pixels.
pub fn pearson_band_lidar(cube: &HsiCube, lidar: &LidarRaster, channel: usize) -> Result<Vec<f64>> {
    check_coregistered(cube, lidar)?;
    if channel >= lidar.channels {
        return Err(Error::Validation(format!(
            "channel {channel} out of range for {} lidar channels",
            lidar.channels
        )));
    }
    let mut acc = vec![CoMoments::default(); cube.bands];
    for px in 0..cube.pixels() {
        let y = lidar.values()[px * lidar.channels + channel];
        let row = &cube.values()[px * cube.bands..(px + 1) * cube.bands];
        for (a, &x) in acc.iter_mut().zip(row) {
            a.push(x, y);
        }
    }
    Ok(acc.iter().map(CoMoments::correlation).collect())
}

/// CSV with header `band_index,r`.
pub fn write_correlation_csv(path: &Path, r: &[f64]) -> Result<()> {
    let mut out = String::from("band_index,r\n");
    for (i, v) in r.iter().enumerate() {
        writeln!(out, "{i},{v}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

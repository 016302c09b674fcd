//! Raster container: a TOML header beside a raw little-endian binary file.
//!
//! ```toml
//! width = 64
//! height = 64
//! channels = 40
//! dtype = "f32"          # "f32" | "f64" | "i32"
//! byte_order = "little"
//! data_file = "cube.bin" # relative to the header's directory
//! names = ["b0", "b1"]   # optional band or class names
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelMap, LidarRaster};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dtype: DType,
    pub byte_order: String,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl RasterHeader {
    pub fn value_count(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        let header: RasterHeader =
            toml::from_str(&text).map_err(|e| Error::load(path, format!("bad header: {e}")))?;
        if header.byte_order != "little" {
            return Err(Error::load(
                path,
                format!("unsupported byte_order {:?}", header.byte_order),
            ));
        }
        if header.value_count() == 0 {
            return Err(Error::load(path, "dimensions must be positive"));
        }
        Ok(header)
    }

    fn data_path(&self, header_path: &Path) -> PathBuf {
        header_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.data_file)
    }
}

enum RawValues {
    Float(Vec<f64>),
    Int(Vec<i32>),
}

fn read_raster(path: &Path) -> Result<(RasterHeader, RawValues)> {
    let header = RasterHeader::read(path)?;
    let data_path = header.data_path(path);
    let bytes = fs::read(&data_path).map_err(|e| Error::load(&data_path, e.to_string()))?;
    let expected = header.value_count() * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::load(
            &data_path,
            format!(
                "header declares {expected} bytes ({}x{}x{} {:?}) but file has {} bytes",
                header.width,
                header.height,
                header.channels,
                header.dtype,
                bytes.len()
            ),
        ));
    }
    let values = match header.dtype {
        DType::F32 => RawValues::Float(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        DType::F64 => RawValues::Float(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I32 => RawValues::Int(
            bytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok((header, values))
}

fn expect_float(path: &Path, values: RawValues) -> Result<Vec<f64>> {
    match values {
        RawValues::Float(v) => Ok(v),
        RawValues::Int(_) => Err(Error::load(path, "expected a float raster, found i32")),
    }
}

pub(crate) fn read_float_raster(path: &Path) -> Result<(RasterHeader, Vec<f64>)> {
    let (h, raw) = read_raster(path)?;
    Ok((h, expect_float(path, raw)?))
}

pub fn load_cube(header_path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = header_path.as_ref();
    let (h, raw) = read_raster(path)?;
    let values = expect_float(path, raw)?;
    let cube = HsiCube::new(h.width, h.height, h.channels, values)
        .map_err(|e| Error::load(path, e.to_string()))?;
    match h.names {
        Some(names) => cube
            .with_band_names(names)
            .map_err(|e| Error::load(path, e.to_string())),
        None => Ok(cube),
    }
}

pub fn load_lidar(header_path: impl AsRef<Path>) -> Result<LidarRaster> {
    let path = header_path.as_ref();
    let (h, raw) = read_raster(path)?;
    let values = expect_float(path, raw)?;
    LidarRaster::new(h.width, h.height, h.channels, values).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_labels(header_path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = header_path.as_ref();
    let (h, raw) = read_raster(path)?;
    let RawValues::Int(ints) = raw else {
        return Err(Error::load(path, "label maps must use dtype i32"));
    };
    if h.channels != 1 {
        return Err(Error::load(path, format!("label map needs 1 channel, got {}", h.channels)));
    }
    if let Some(&neg) = ints.iter().find(|&&v| v < 0) {
        return Err(Error::load(path, format!("negative label {neg}")));
    }
    let labels: Vec<u32> = ints.into_iter().map(|v| v as u32).collect();
    let map = match h.names {
        Some(names) => LabelMap::new(h.width, h.height, labels, names),
        None => LabelMap::unnamed(h.width, h.height, labels),
    };
    map.map_err(|e| Error::load(path, e.to_string()))
}

pub(crate) fn write_raster(
    header_path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    dtype: DType,
    names: Option<Vec<String>>,
    bytes: Vec<u8>,
) -> Result<()> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("bad header path {}", header_path.display())))?;
    let header = RasterHeader {
        width,
        height,
        channels,
        dtype,
        byte_order: "little".into(),
        data_file: format!("{stem}.bin"),
        names,
    };
    let text = toml::to_string(&header).expect("header serializes");
    fs::write(header_path, text).map_err(|e| Error::io(header_path, e))?;
    let data_path = header.data_path(header_path);
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

pub(crate) fn float_bytes(values: &[f64], dtype: DType) -> Result<Vec<u8>> {
    match dtype {
        DType::F32 => Ok(values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()),
        DType::F64 => Ok(values.iter().flat_map(|&v| v.to_le_bytes()).collect()),
        DType::I32 => Err(Error::Validation("float rasters cannot be saved as i32".into())),
    }
}

/// Writes `<stem>.toml`-style header at `header_path` plus `<stem>.bin` beside it.
pub fn save_cube(cube: &HsiCube, header_path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let bytes = float_bytes(cube.values(), dtype)?;
    write_raster(
        header_path.as_ref(),
        cube.width,
        cube.height,
        cube.bands,
        dtype,
        cube.band_names.clone(),
        bytes,
    )
}

pub fn save_lidar(lidar: &LidarRaster, header_path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let bytes = float_bytes(lidar.values(), dtype)?;
    write_raster(header_path.as_ref(), lidar.width, lidar.height, lidar.channels, dtype, None, bytes)
}

pub fn save_labels(labels: &LabelMap, header_path: impl AsRef<Path>) -> Result<()> {
    let bytes = labels
        .labels()
        .iter()
        .flat_map(|&l| (l as i32).to_le_bytes())
        .collect();
    write_raster(
        header_path.as_ref(),
        labels.width,
        labels.height,
        1,
        DType::I32,
        Some(labels.class_names.clone()),
        bytes,
    )
}

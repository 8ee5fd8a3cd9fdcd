//! Raster exchange format: a JSON sidecar header next to a raw
//! band-sequential little-endian payload.
//!
//! A raster named `scene` lives in `scene.json` + `scene.bin`. Any of
//! `scene`, `scene.json` or `scene.bin` may be passed as the path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DEFAULT_EPSILON;
use crate::grid::{EntropyRaster, GridShape, LabelRaster, ProbabilityRaster, NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: DType,
    pub class_names: Vec<String>,
    pub nodata: Option<i64>,
    pub byte_order: String,
}

/// Header and payload paths for a raster path.
pub fn raster_paths(path: &Path) -> Result<(PathBuf, PathBuf)> {
    if path.as_os_str().is_empty() {
        return Err(Error::EmptyPath);
    }
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = stem.clone().into_os_string();
    header.push(".json");
    let mut payload = stem.into_os_string();
    payload.push(".bin");
    Ok((header.into(), payload.into()))
}

pub fn read_header(path: &Path) -> Result<RasterHeader> {
    let (header_path, _) = raster_paths(path)?;
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RasterHeader =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: header_path.clone(),
            msg: e.to_string(),
        })?;
    let malformed = |msg: String| Error::MalformedHeader {
        path: header_path.clone(),
        msg,
    };
    if header.byte_order != "little" {
        return Err(malformed(format!(
            "unsupported byte_order {:?}",
            header.byte_order
        )));
    }
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(malformed("width, height and bands must be >= 1".into()));
    }
    Ok(header)
}

fn write_pair(path: &Path, header: &RasterHeader, payload: &[u8]) -> Result<()> {
    let (header_path, payload_path) = raster_paths(path)?;
    if let Some(dir) = header_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))?;
    Ok(())
}

fn read_payload(path: &Path, header: &RasterHeader) -> Result<Vec<u8>> {
    let (_, payload_path) = raster_paths(path)?;
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected = header.width * header.height * header.bands * header.dtype.size();
    if bytes.len() != expected {
        let plane = header.width * header.height * header.dtype.size();
        return Err(Error::DimensionMismatch(format!(
            "header declares {} band(s) of {}x{} {:?} ({expected} bytes) but payload has {} bytes (~{} band(s))",
            header.bands,
            header.width,
            header.height,
            header.dtype,
            bytes.len(),
            bytes.len() / plane
        )));
    }
    Ok(bytes)
}

/// Writes pixel-interleaved `values` as a band-sequential f32 raster.
fn write_f32_bands(
    path: &Path,
    width: usize,
    height: usize,
    names: &[String],
    values: &[f64],
) -> Result<()> {
    let bands = names.len();
    let n = width * height;
    debug_assert_eq!(values.len(), n * bands);
    let mut payload = Vec::with_capacity(n * bands * 4);
    for b in 0..bands {
        for i in 0..n {
            payload.extend_from_slice(&(values[i * bands + b] as f32).to_le_bytes());
        }
    }
    let header = RasterHeader {
        width,
        height,
        bands,
        dtype: DType::F32,
        class_names: names.to_vec(),
        nodata: None,
        byte_order: "little".into(),
    };
    write_pair(path, &header, &payload)
}

pub fn save_probability_raster(raster: &ProbabilityRaster, path: &Path) -> Result<()> {
    let s = raster.shape();
    write_f32_bands(path, s.width(), s.height(), s.class_names(), raster.values())
}

/// Saves an arbitrary f32 multi-band grid (pixel-interleaved input).
pub fn save_f32_raster(
    path: &Path,
    width: usize,
    height: usize,
    band_names: &[String],
    values: &[f64],
) -> Result<()> {
    if values.len() != width * height * band_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {width}x{height}x{}",
            values.len(),
            band_names.len()
        )));
    }
    write_f32_bands(path, width, height, band_names, values)
}

pub fn load_probability_raster(path: &Path) -> Result<ProbabilityRaster> {
    load_probability_raster_with_epsilon(path, DEFAULT_EPSILON)
}

pub fn load_probability_raster_with_epsilon(path: &Path, epsilon: f64) -> Result<ProbabilityRaster> {
    let header = read_header(path)?;
    if header.dtype != DType::F32 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            msg: "probability rasters must have dtype f32".into(),
        });
    }
    if header.class_names.len() != header.bands {
        return Err(Error::DimensionMismatch(format!(
            "header lists {} class names for {} bands",
            header.class_names.len(),
            header.bands
        )));
    }
    let shape = GridShape::new(header.width, header.height, header.class_names.clone())?;
    let bytes = read_payload(path, &header)?;
    let n = shape.n_pixels();
    let c = shape.n_classes();
    let mut values = vec![0.0; n * c];
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        let (band, pixel) = (k / n, k % n);
        values[pixel * c + band] = v;
    }
    ProbabilityRaster::with_epsilon(shape, values, epsilon)
}

pub fn save_label_raster(raster: &LabelRaster, path: &Path) -> Result<()> {
    let s = raster.shape();
    let header = RasterHeader {
        width: s.width(),
        height: s.height(),
        bands: 1,
        dtype: DType::U8,
        class_names: s.class_names().to_vec(),
        nodata: Some(NODATA as i64),
        byte_order: "little".into(),
    };
    write_pair(path, &header, raster.values())
}

pub fn load_label_raster(path: &Path) -> Result<LabelRaster> {
    let header = read_header(path)?;
    if header.dtype != DType::U8 || header.bands != 1 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            msg: "label rasters must be single-band u8".into(),
        });
    }
    let shape = GridShape::new(header.width, header.height, header.class_names.clone())?;
    let mut bytes = read_payload(path, &header)?;
    match header.nodata {
        None => {}
        Some(v) if v == NODATA as i64 => {}
        Some(v) if (0..=255).contains(&v) && v as usize >= shape.n_classes() => {
            // foreign sentinel: remap to ours
            for b in bytes.iter_mut().filter(|b| **b as i64 == v) {
                *b = NODATA;
            }
        }
        Some(v) => {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                msg: format!("nodata {v} collides with class range or u8 range"),
            })
        }
    }
    LabelRaster::new(shape, bytes)
}

/// Single-band f32 entropy raster.
pub fn save_entropy_raster(raster: &EntropyRaster, path: &Path) -> Result<()> {
    let s = raster.shape();
    write_f32_bands(
        path,
        s.width(),
        s.height(),
        &["entropy".to_string()],
        raster.values(),
    )
}

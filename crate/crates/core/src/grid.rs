//! Raster data model shared by every other module.
//!
//! Probability rasters are stored pixel-interleaved in memory (all `C`
//! probabilities of pixel 0, then pixel 1, ...) so per-pixel kernels touch
//! one contiguous slice. The on-disk layout is band-sequential; see
//! [`crate::raster_io`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{regularize, DEFAULT_EPSILON};

/// Reserved label value for pixels without a class.
pub const NODATA: u8 = u8::MAX;

/// Largest class count a [`LabelRaster`] can carry; index 255 is [`NODATA`].
pub const MAX_CLASSES: usize = NODATA as usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawShape")]
pub struct GridShape {
    width: usize,
    height: usize,
    class_names: Vec<String>,
}

#[derive(Deserialize)]
struct RawShape {
    width: usize,
    height: usize,
    class_names: Vec<String>,
}

impl TryFrom<RawShape> for GridShape {
    type Error = Error;

    fn try_from(raw: RawShape) -> Result<Self> {
        GridShape::new(raw.width, raw.height, raw.class_names)
    }
}

impl GridShape {
    pub fn new(width: usize, height: usize, class_names: Vec<String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape(format!(
                "width and height must be >= 1, got {width}x{height}"
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if class_names.len() > MAX_CLASSES {
            return Err(Error::InvalidShape(format!(
                "at most {MAX_CLASSES} classes supported, got {}",
                class_names.len()
            )));
        }
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidShape(format!("class name {i} is empty")));
            }
            if class_names[..i].contains(name) {
                return Err(Error::InvalidShape(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self {
            width,
            height,
            class_names,
        })
    }

    /// Shape with generated class names `class_0 .. class_{n-1}`.
    pub fn with_classes(width: usize, height: usize, n_classes: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            (0..n_classes).map(|c| format!("class_{c}")).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Pixel index of (row, col), row-major.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub(crate) fn ensure_same(&self, other: &GridShape, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width,
                self.height,
                self.n_classes(),
                other.width,
                other.height,
                other.n_classes()
            )));
        }
        Ok(())
    }
}

/// Per-pixel class-probability vectors for one map.
///
/// Every vector is regularized on construction: zeros become `epsilon` and
/// the vector is renormalized, so all components are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRaster {
    shape: GridShape,
    values: Vec<f64>,
}

impl ProbabilityRaster {
    /// Builds a raster from pixel-interleaved values, regularizing with the
    /// default epsilon.
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        Self::with_epsilon(shape, values, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(shape: GridShape, mut values: Vec<f64>, epsilon: f64) -> Result<Self> {
        let c = shape.n_classes();
        if values.len() != shape.n_pixels() * c {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {}x{}x{}, got {}",
                shape.n_pixels() * c,
                shape.width,
                shape.height,
                c,
                values.len()
            )));
        }
        for (i, px) in values.chunks_exact_mut(c).enumerate() {
            regularize(px, epsilon).map_err(|e| match e {
                Error::Degenerate(msg) => Error::Degenerate(format!("pixel {i}: {msg}")),
                Error::InvalidValue(msg) => Error::InvalidValue(format!("pixel {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self { shape, values })
    }

    /// Wraps values already known to be valid simplex points (fusion output).
    pub(crate) fn from_normalized(shape: GridShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.n_pixels() * shape.n_classes());
        Self { shape, values }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn n_classes(&self) -> usize {
        self.shape.n_classes()
    }

    /// Pixel-interleaved probabilities.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        let c = self.n_classes();
        &self.values[index * c..(index + 1) * c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_classes())
    }
}

/// Categorical grid of class indices, with [`NODATA`] for unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    shape: GridShape,
    values: Vec<u8>,
}

impl LabelRaster {
    pub fn new(shape: GridShape, values: Vec<u8>) -> Result<Self> {
        if values.len() != shape.n_pixels() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} labels, got {}",
                shape.n_pixels(),
                values.len()
            )));
        }
        let c = shape.n_classes();
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v != NODATA && v as usize >= c)
        {
            return Err(Error::InvalidValue(format!(
                "label {v} at pixel {i} out of range for {c} classes"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[self.shape.index(row, col)]
    }

    /// Pixel counts per class, NODATA excluded.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.shape.n_classes()];
        for &v in &self.values {
            if v != NODATA {
                counts[v as usize] += 1;
            }
        }
        counts
    }
}

/// Per-pixel Shannon entropy in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRaster {
    shape: GridShape,
    values: Vec<f64>,
}

impl EntropyRaster {
    pub(crate) fn from_values(shape: GridShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.n_pixels());
        Self { shape, values }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel most probable class.
pub fn hard_classify(p: &ProbabilityRaster) -> LabelRaster {
    let values = p.pixels().map(|px| argmax(px) as u8).collect();
    LabelRaster {
        shape: p.shape.clone(),
        values,
    }
}

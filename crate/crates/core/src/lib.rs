//! Consensus land-cover maps from several investigators' probability rasters.
//!
//! The per-pixel posterior under a Dirichlet prior is available in closed
//! form ([`fusion`]); investigator reliability can be inferred as Dirichlet
//! concentration weights ([`weights`]); maps can be pre-grouped by their
//! entropy signatures ([`cluster`]) before fusion. [`accuracy`] and
//! [`landscape`] score the results, [`synth`] builds scenes with known truth,
//! and [`pipeline`] runs the whole sweep from a config file.

pub mod accuracy;
pub mod cluster;
pub mod entropy;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod landscape;
pub mod pipeline;
pub mod raster_io;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use fusion::{fuse, fused_label_map, FusionConfig, PosteriorField};
pub use grid::{hard_classify, EntropyRaster, GridShape, LabelRaster, ProbabilityRaster, NODATA};

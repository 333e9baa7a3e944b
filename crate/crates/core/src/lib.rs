//! Crop-residue burn indicators from multi-band satellite scenes and
//! household surveys, with fixed-effects regressions linking zero-tillage
//! adoption to burning.
//!
//! The crate is organised by stage:
//!
//! - [`raster`]: grid geometry, bands, binary masks and the on-disk bundle format
//! - [`spectral`]: NBR, BAI and BAIS2, cloud/water/urban masking, weekly median composites
//! - [`burnmask`]: thresholded burn masks, maximum composites, active-fire checks
//! - [`zones`]: village and plot analysis rectangles and zonal burn fractions
//! - [`survey`]: survey ingest, cleaning and indicator coding
//! - [`econ`]: OLS with absorbed fixed effects and cluster-robust inference
//! - [`pipeline`]: configuration, end-to-end runs, tables and figures
//! - [`synthetic`]: a reproducible fixture generator with known ground truth

pub mod burnmask;
pub mod econ;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod raster;
pub mod spectral;
pub mod survey;
pub mod synthetic;
pub mod zones;

pub use error::{Error, Result};

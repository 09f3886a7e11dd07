//! Raster analytics and spray planning for weed mapping.
//!
//! The crate covers the whole evaluation chain: aligning drone and satellite
//! rasters, turning binary drone annotations into per-pixel weed fractions,
//! regressing those fractions from multispectral pixels with small voting
//! ensembles, and picking spray thresholds that reach a weed-coverage target
//! while accounting for the land that gets sprayed on top of the weed.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod error;
pub mod raster;
pub mod regress;
pub mod report;
pub mod scalar;
pub mod softmask;
pub mod spray;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Square metres per international acre.
pub const SQ_METRES_PER_ACRE: f64 = 4046.856_422_4;

pub type Raster = raster::GeoRaster<f64>;
pub type Raster32 = raster::GeoRaster<f32>;
pub type FractionMask = softmask::FractionMask<f64>;
pub type FeatureTable = regress::FeatureTable<f64>;
pub type Model = regress::Model<f64>;
pub type VotingEnsemble = regress::VotingEnsemble<f64>;
pub type CoverageCurve = spray::CoverageCurve<f64>;
pub type SprayPlan = spray::SprayPlan<f64>;

//! Synthetic SRS beam-space testbed for dynamic user grouping by location
//! and heading.
//!
//! The crate is organized as a pipeline:
//!
//! * [`scene`] generates campaign geometry and lap trajectories.
//! * [`channel`] turns poses into multipath components and beam-space CTFs.
//! * [`srs`] reduces raw PRB grids to 128-value amplitude snapshots.
//! * [`neural`] is a small dense/1-D convolution network trained with Adam.
//! * [`positioning`] regresses position and heading from snapshots.
//! * [`clustering`] groups users with DBSCAN and Ward-linkage clustering.
//! * [`evaluation`] computes RMSE/R² tables and error CDFs.
//! * [`experiment`] runs everything end to end and writes plot-ready tables.

pub mod channel;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod neural;
pub mod positioning;
pub mod scene;
pub mod srs;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Derives an independent RNG seed from a base seed and a stream tag.
pub(crate) fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    // splitmix64 chain
    let mut z = base;
    for &t in tags {
        z = z
            .wrapping_add(t.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

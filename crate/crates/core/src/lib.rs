//! Direction-of-arrival estimation for small microphone arrays with SRP-PHAT
//! and its pair-merging variant SMP-PHAT.
//!
//! The offline side builds the array geometry, the hemispherical search grid,
//! the TDoA lookup table and the pair-merging plan. The online side turns
//! multichannel audio into PHAT-weighted cross-spectra and scans the grid for
//! the direction with the most steered power. [`room`] and [`bench`] hold the
//! image-method simulator and the timing harness used to compare both
//! estimators.

pub mod bench;
pub mod cli;
pub mod error;
pub mod gcc;
pub mod geometry;
pub mod localize;
pub mod pipeline;
pub mod plan;
pub mod room;
pub mod wav;

pub use error::{Error, Result};
pub use gcc::{CorrelationVector, CrossSpectra, PhatSpectra, SpectralFrame, Window};
pub use geometry::{DoaGrid, MicArray, Pair, PairSet, TdoaTable, Vec3};
pub use localize::{Counts, LocalizationResult, Localizer, MergedSpectra, Method};
pub use plan::{MergeGroup, MergePlan, Sign};

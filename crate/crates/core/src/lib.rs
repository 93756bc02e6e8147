//! Binaural sonar simulation and direction finding with frequency-scanning pinna beams.
//!
//! The library covers the full chain of a pinna-based echolocation experiment:
//! synthesizing far-field beam patterns from aperture fields ([`farfield`]), a
//! parametric two-lobe beam model whose side lobe sweeps elevation with frequency
//! ([`beam`]), binaural chirp-echo synthesis ([`echo`]), spectrogram band-energy
//! features ([`features`]), a small neural regressor from features to angle
//! ([`estimator`]), pulse-train fusion by cumulative moving windows ([`decision`]),
//! and cross-validated evaluation protocols ([`evaluation`]).
//!
//! All randomness is seeded and all pipelines are deterministic: the same master
//! seed reproduces every waveform, feature row, and report byte for byte.

pub mod beam;
pub mod decision;
pub mod echo;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod farfield;
pub mod features;
pub mod geometry;
pub mod io;
pub mod seed;

pub use error::{Error, Result};

/// Speed of sound in air used throughout, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

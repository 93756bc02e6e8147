//! Error type shared by all library modules.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the simulation and estimation chain.
#[derive(Debug)]
pub enum Error {
    /// Angles outside the azimuth/elevation domain.
    InvalidDirection { azimuth_deg: f64, elevation_deg: f64 },
    /// A constructor or configuration precondition was violated.
    InvalidConfig(String),
    /// A lattice or sweep range with `min > max` or an empty axis.
    EmptyRange,
    /// Aperture cells are too coarse for the requested frequency.
    SamplingTooCoarse { spacing_m: f64, max_spacing_m: f64 },
    /// No directions to project onto.
    EmptyLattice,
    /// Lobe analysis found no local maximum outside the main lobe.
    NoSideLobe,
    /// The half-power contour runs off the sampled lattice.
    LobeTruncated,
    /// A least-squares fit had no unique solution.
    SingularFit,
    /// Requested band or chirp edge at or above Nyquist.
    Nyquist { frequency_hz: f64, sample_rate_hz: f64 },
    /// Echo delay falls outside the record window.
    DelayExceedsWindow { delay_s: f64, window_s: f64 },
    /// Endpoint detection found no frames above the noise floor.
    NoSignal,
    /// Segment shorter than one analysis window.
    SegmentTooShort { samples: usize, window: usize },
    /// Requested band is not covered by the spectrogram.
    BandOutsideSupport,
    /// Two containers that must agree in length do not.
    LengthMismatch { left: usize, right: usize },
    /// A vector fed to the network has the wrong dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// Training loss became non-finite.
    Divergence { epoch: usize },
    /// An operation that needs at least one element got none.
    EmptyInput,
    /// Pulses per cell cannot be split into the requested number of trains.
    IndivisiblePulses { pulses: usize, trains: usize },
    /// A pulse-train size exceeds the pulses available.
    SizeExceedsPulses { size: usize, available: usize },
    /// A condition filter (e.g. azimuth limit) matched no cells.
    EmptyFilter,
    Io(std::io::Error),
    /// A file did not parse as the expected format.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDirection { azimuth_deg, elevation_deg } => write!(
                f,
                "direction ({azimuth_deg}, {elevation_deg}) outside az [-180, 180), el [-90, 90]"
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyRange => write!(f, "empty range: min exceeds max"),
            Error::SamplingTooCoarse { spacing_m, max_spacing_m } => write!(
                f,
                "aperture spacing {spacing_m} m too coarse; need <= {max_spacing_m} m (5 cells per wavelength)"
            ),
            Error::EmptyLattice => write!(f, "no directions in lattice"),
            Error::NoSideLobe => write!(f, "no side lobe outside the main lobe's -3 dB region"),
            Error::LobeTruncated => write!(f, "half-power contour leaves the sampled lattice"),
            Error::SingularFit => write!(f, "least-squares fit is singular"),
            Error::Nyquist { frequency_hz, sample_rate_hz } => write!(
                f,
                "frequency {frequency_hz} Hz not below Nyquist for sample rate {sample_rate_hz} Hz"
            ),
            Error::DelayExceedsWindow { delay_s, window_s } => write!(
                f,
                "echo delay {delay_s} s exceeds record window {window_s} s"
            ),
            Error::NoSignal => write!(f, "no signal found above the noise floor"),
            Error::SegmentTooShort { samples, window } => write!(
                f,
                "segment of {samples} samples shorter than one {window}-sample window"
            ),
            Error::BandOutsideSupport => write!(f, "band lies outside spectrogram support"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::Divergence { epoch } => {
                write!(f, "training loss became non-finite at epoch {epoch}")
            }
            Error::EmptyInput => write!(f, "empty input"),
            Error::IndivisiblePulses { pulses, trains } => write!(
                f,
                "{pulses} pulses per cell cannot form {trains} equal trains"
            ),
            Error::SizeExceedsPulses { size, available } => write!(
                f,
                "train size {size} exceeds the {available} pulses available"
            ),
            Error::EmptyFilter => write!(f, "condition filter matched no cells"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

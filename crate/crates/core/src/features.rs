//! Echo-to-feature pipeline: endpoint detection anchors the useful segment,
//! a Hamming-window STFT turns it into a 0.5 kHz spectrogram, off-ridge
//! masking keeps only the chirp's sweep line, and 30 per-band energy sums
//! per ear concatenate into the 60-element feature vector the estimator
//! consumes.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::echo::{ChirpParams, EchoRecording, RecordTruth};
use crate::geometry::Direction;
use crate::io::{fmt_f64, CsvTable};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// endpoint detection
// ---------------------------------------------------------------------------

/// Short-time-energy endpoint detector settings. The noise floor is
/// estimated from the leading frames, which must therefore be echo-free
/// (true for ranges beyond ~0.75 m with the default 1 ms frames).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointConfig {
    /// Analysis frame, samples (1 ms at 100 kHz). Frames slide by half a
    /// frame so that short beam-filtered echoes (the sidelobe passes only a
    /// ~1 ms slice of the sweep) still cover `min_run` consecutive frames.
    pub frame_samples: usize,
    /// Consecutive qualifying frames required to open/close the segment.
    pub min_run: usize,
    /// Energy factor over the leading-frame noise floor (power ratio):
    /// a frame qualifies when its energy exceeds `noise_factor` times the
    /// mean leading-frame energy.
    pub noise_factor: f64,
    /// Leading frames used for the noise-floor estimate.
    pub lead_frames: usize,
    /// Short window for the sample-level onset refinement.
    pub refine_samples: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            frame_samples: 100,
            min_run: 3,
            noise_factor: 4.0,
            lead_frames: 4,
            refine_samples: 10,
        }
    }
}

/// Finds the effective echo segment `(start, end)` in samples (half-open).
///
/// Frame energies are computed on half-frame-overlapped windows; a frame
/// qualifies when its energy exceeds the floor threshold. The segment opens
/// at the first `min_run` consecutive qualifying frames and closes before
/// the first `min_run`-frame quiet gap after it, so a later second echo is
/// excluded. The start is then refined to sample resolution with a short
/// sliding window around the opening frame, which is what keeps band
/// energies nearly invariant to sub-frame input delays.
pub fn detect_endpoints(signal: &[f64], cfg: &EndpointConfig) -> Result<(usize, usize)> {
    let flen = cfg.frame_samples;
    if signal.len() < flen {
        return Err(Error::SegmentTooShort { samples: signal.len(), window: flen });
    }
    let hop = (flen / 2).max(1);
    let frame_count = (signal.len() - flen) / hop + 1;
    let frames: Vec<f64> = (0..frame_count)
        .map(|j| signal[j * hop..j * hop + flen].iter().map(|v| v * v).sum())
        .collect();
    let max_energy = frames.iter().copied().fold(0.0f64, f64::max);
    if max_energy <= 0.0 {
        return Err(Error::NoSignal);
    }

    // Noise floor from the leading non-overlapping frames; the relative
    // guard keeps the threshold meaningful for noiseless synthetic signals.
    let lead_samples = (cfg.lead_frames * flen).min(signal.len());
    let noise_power =
        signal[..lead_samples].iter().map(|v| v * v).sum::<f64>() / lead_samples as f64;
    let threshold = (flen as f64 * cfg.noise_factor * noise_power).max(1e-6 * max_energy);

    let qualifies: Vec<bool> = frames.iter().map(|&e| e > threshold).collect();
    let open = (0..qualifies.len())
        .find(|&j| {
            j + cfg.min_run <= qualifies.len() && qualifies[j..j + cfg.min_run].iter().all(|&q| q)
        })
        .ok_or(Error::NoSignal)?;

    // Close before the first min_run-frame quiet gap after the opening.
    let mut close = qualifies.len() - 1;
    let mut quiet = 0;
    for j in open..qualifies.len() {
        if qualifies[j] {
            quiet = 0;
            close = j;
        } else {
            quiet += 1;
            if quiet >= cfg.min_run {
                break;
            }
        }
    }
    let end = (close * hop + flen).min(signal.len());

    // Sample-level onset: first short window around the opening frame whose
    // energy clears the same per-sample floor.
    let w = cfg.refine_samples.max(1);
    let refine_threshold = (w as f64 * cfg.noise_factor * noise_power)
        .max(1e-6 * max_energy * w as f64 / flen as f64);
    let coarse = open * hop;
    let lo = coarse.saturating_sub(flen);
    let hi = (coarse + flen).min(signal.len() - w);
    let mut start = coarse.min(hi);
    let mut window_energy: f64 = signal[lo..lo + w].iter().map(|v| v * v).sum();
    let mut i = lo;
    loop {
        if window_energy > refine_threshold {
            start = i;
            break;
        }
        if i >= hi {
            break;
        }
        window_energy += signal[i + w] * signal[i + w] - signal[i] * signal[i];
        i += 1;
    }

    debug_assert!(end > start);
    Ok((start, end))
}

// ---------------------------------------------------------------------------
// spectrogram
// ---------------------------------------------------------------------------

/// Time-frequency energy matrix: `values[frame][bin]` is |X|² at
/// `bin * df_hz`, one-sided (bin 0 through Nyquist).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<Vec<f64>>,
    pub df_hz: f64,
    pub frame_hop: usize,
    pub fs_hz: f64,
    pub window_len: usize,
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Hamming STFT of one segment: 1 ms windows, half-window hop, transform
/// zero-padded to twice the window so the bins land every 0.5 kHz at the
/// default 100 kHz rate.
pub fn spectrogram(segment: &[f64], fs_hz: f64) -> Result<Spectrogram> {
    let window_len = (0.001 * fs_hz).round() as usize;
    if segment.len() < window_len {
        return Err(Error::SegmentTooShort { samples: segment.len(), window: window_len });
    }
    let hop = window_len / 2;
    let nfft = 2 * window_len;
    let window = hamming(window_len);
    let fft = FftPlanner::new().plan_fft_forward(nfft);

    let mut values = Vec::new();
    let mut frame_start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    while frame_start + window_len <= segment.len() {
        for slot in buf.iter_mut() {
            *slot = Complex64::new(0.0, 0.0);
        }
        for (n, w) in window.iter().enumerate() {
            buf[n] = Complex64::new(segment[frame_start + n] * w, 0.0);
        }
        fft.process(&mut buf);
        values.push(buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect());
        frame_start += hop;
    }
    Ok(Spectrogram { values, df_hz: fs_hz / nfft as f64, frame_hop: hop, fs_hz, window_len })
}

// ---------------------------------------------------------------------------
// off-ridge masking
// ---------------------------------------------------------------------------

/// Zeroes every bin farther than `halfwidth_bins` from the chirp's nominal
/// instantaneous-frequency ridge at each frame's center (the segment is
/// assumed to start at the chirp onset, which endpoint detection ensures).
/// Frames past the chirp duration keep the ridge clamped at the end
/// frequency. Masking never increases energy and is idempotent.
pub fn mask_off_ridge(
    s: &Spectrogram,
    chirp: &ChirpParams,
    halfwidth_bins: usize,
) -> Result<Spectrogram> {
    if (s.fs_hz - chirp.fs_hz).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "spectrogram at {} Hz but chirp sampled at {} Hz",
            s.fs_hz, chirp.fs_hz
        )));
    }
    chirp.validate()?;
    let sweep_rate = (chirp.f_end_hz - chirp.f_start_hz) / chirp.duration_s;
    let (f_min, f_max) = if chirp.f_start_hz <= chirp.f_end_hz {
        (chirp.f_start_hz, chirp.f_end_hz)
    } else {
        (chirp.f_end_hz, chirp.f_start_hz)
    };
    let mut masked = s.clone();
    for (t, row) in masked.values.iter_mut().enumerate() {
        let center_s = (t * s.frame_hop + s.window_len / 2) as f64 / s.fs_hz;
        let nominal = (chirp.f_start_hz + sweep_rate * center_s).clamp(f_min, f_max);
        let ridge = (nominal / s.df_hz).round() as isize;
        for (k, v) in row.iter_mut().enumerate() {
            if (k as isize - ridge).unsigned_abs() > halfwidth_bins {
                *v = 0.0;
            }
        }
    }
    Ok(masked)
}

// ---------------------------------------------------------------------------
// band energies and feature vectors
// ---------------------------------------------------------------------------

/// Number of 0.5 kHz bands covering 5–20 kHz.
pub const BAND_COUNT: usize = 30;
/// Band k covers [BAND_START_HZ + k·BAND_WIDTH_HZ, +1) Hz.
pub const BAND_START_HZ: f64 = 5_000.0;
pub const BAND_WIDTH_HZ: f64 = 500.0;

/// Sums the spectrogram over time into 30 half-kilohertz band energies
/// covering 5.0–20.0 kHz. Requires the paper's 0.5 kHz bin grid, where each
/// band holds exactly one bin (band k ↔ bin k + 10).
pub fn band_energies(s: &Spectrogram) -> Result<Vec<f64>> {
    if (s.df_hz - BAND_WIDTH_HZ).abs() > 1e-9 {
        return Err(Error::BandOutsideSupport);
    }
    let first_bin = (BAND_START_HZ / BAND_WIDTH_HZ).round() as usize;
    let bins = s.values.first().map_or(0, Vec::len);
    if first_bin + BAND_COUNT > bins {
        return Err(Error::BandOutsideSupport);
    }
    let mut bands = vec![0.0; BAND_COUNT];
    for row in &s.values {
        for (k, band) in bands.iter_mut().enumerate() {
            *band += row[first_bin + k];
        }
    }
    Ok(bands)
}

/// How raw band energies are conditioned before they reach the network.
/// Z-scoring is a separate, training-set-fitted step ([`ZScore`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Band energies as summed.
    Raw,
    /// Scaled to sum to one (removes overall level).
    UnitSum,
    /// log10(1e-12 + e): compresses the orders-of-magnitude dynamic range.
    Log,
}

impl Normalization {
    pub fn tag(&self) -> &'static str {
        match self {
            Normalization::Raw => "raw",
            Normalization::UnitSum => "unit-sum",
            Normalization::Log => "log",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "raw" => Ok(Normalization::Raw),
            "unit-sum" => Ok(Normalization::UnitSum),
            "log" => Ok(Normalization::Log),
            other => Err(Error::Format(format!("unknown normalization tag `{other}`"))),
        }
    }
}

/// The 60-element input of the estimator: left-ear bands then right-ear
/// bands, conditioned per the tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

/// Concatenates the two ears' band energies (left first) and applies the
/// chosen conditioning.
pub fn make_feature_vector(
    left: &[f64],
    right: &[f64],
    norm: Normalization,
) -> Result<FeatureVector> {
    if left.len() != BAND_COUNT || right.len() != BAND_COUNT {
        return Err(Error::LengthMismatch { left: left.len(), right: right.len() });
    }
    let mut values: Vec<f64> = left.iter().chain(right).copied().collect();
    match norm {
        Normalization::Raw => {}
        Normalization::UnitSum => {
            let sum: f64 = values.iter().sum();
            if sum <= 0.0 {
                return Err(Error::NoSignal);
            }
            for v in values.iter_mut() {
                *v /= sum;
            }
        }
        Normalization::Log => {
            for v in values.iter_mut() {
                *v = (1e-12 + *v).log10();
            }
        }
    }
    Ok(FeatureVector { values, normalization: norm })
}

/// Per-dimension standardization fitted on a training set (population
/// statistics; zero-variance dimensions pass through unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn fit(rows: &[FeatureVector]) -> Result<ZScore> {
        let dim = rows.first().ok_or(Error::EmptyInput)?.values.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.values.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.values.len() });
            }
            for (m, v) in mean.iter_mut().zip(&row.values) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for (s, (v, m)) in std.iter_mut().zip(row.values.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(ZScore { mean, std })
    }

    pub fn apply(&self, fv: &FeatureVector) -> Result<FeatureVector> {
        if fv.values.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: fv.values.len() });
        }
        let values = fv
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        Ok(FeatureVector { values, normalization: fv.normalization })
    }
}

// ---------------------------------------------------------------------------
// full per-record extraction
// ---------------------------------------------------------------------------

/// What to do when endpoint detection finds no segment (deeply buried
/// echoes at high off-axis attenuation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoSignalFallback {
    /// Propagate the no-signal error to the caller.
    Propagate,
    /// Align the analysis window by maximizing on-ridge spectral energy
    /// over candidate onsets (a time-frequency matched filter): far more
    /// sensitive than the time-domain energy gate, and it degrades to an
    /// arbitrary noise window when there is truly nothing, which is what a
    /// batch evaluation over low-SNR cells needs.
    RidgeSearch,
}

/// How the analysis segment is anchored before the spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    /// Short-time-energy endpoint detection, with `NoSignalFallback`
    /// deciding what happens when no frame crosses the threshold.
    ///
    /// Caveat for frequency-selective receivers: the energy gate fires on
    /// the first *audible* part of the echo. When the receive gain buries
    /// the early chirp below the noise floor and only a later spectral
    /// region pokes out, the gate anchors mid-chirp and the ridge mask —
    /// which assumes the segment starts where the sweep starts — shears
    /// away from the signal.
    Detected,
    /// Matched alignment: always pick the chirp-length window with maximal
    /// on-ridge energy over the whole record. Insensitive to how much of
    /// the sweep is below the noise floor, at the cost of assuming exactly
    /// one chirp echo per record.
    RidgeAligned,
}

/// Extraction settings for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub endpoint: EndpointConfig,
    /// Ridge mask halfwidth, bins.
    pub halfwidth_bins: usize,
    pub normalization: Normalization,
    pub segmentation: Segmentation,
    /// Consulted only under `Segmentation::Detected`.
    pub fallback: NoSignalFallback,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            endpoint: EndpointConfig::default(),
            halfwidth_bins: 2,
            normalization: Normalization::Log,
            segmentation: Segmentation::Detected,
            fallback: NoSignalFallback::Propagate,
        }
    }
}

/// Picks the chirp-length window whose on-ridge spectral energy is largest:
/// spectrogram the whole channel once, then for each candidate onset frame
/// score the sum of bins within `halfwidth_bins` of the chirp ridge over
/// the chirp's duration. Returns the segment bounds of the best candidate.
fn ridge_search(
    channel: &[f64],
    fs_hz: f64,
    chirp: &ChirpParams,
    halfwidth_bins: usize,
) -> Result<(usize, usize)> {
    let s = spectrogram(channel, fs_hz)?;
    let chirp_frames =
        ((chirp.duration_s * fs_hz) as usize).div_ceil(s.frame_hop).max(1);
    let sweep_rate = (chirp.f_end_hz - chirp.f_start_hz) / chirp.duration_s;
    let (f_min, f_max) = if chirp.f_start_hz <= chirp.f_end_hz {
        (chirp.f_start_hz, chirp.f_end_hz)
    } else {
        (chirp.f_end_hz, chirp.f_start_hz)
    };
    let bins = s.values.first().map_or(0, Vec::len) as isize;
    // Per-offset ridge bin for a segment starting exactly at a frame edge.
    let ridge: Vec<isize> = (0..chirp_frames)
        .map(|t| {
            let center_s = (t * s.frame_hop + s.window_len / 2) as f64 / fs_hz;
            let nominal = (chirp.f_start_hz + sweep_rate * center_s).clamp(f_min, f_max);
            (nominal / s.df_hz).round() as isize
        })
        .collect();
    if s.values.len() < chirp_frames {
        return Err(Error::SegmentTooShort { samples: channel.len(), window: s.window_len });
    }
    let (mut best_j, mut best_score) = (0usize, f64::NEG_INFINITY);
    for j in 0..=s.values.len() - chirp_frames {
        let mut score = 0.0;
        for (t, &r) in ridge.iter().enumerate() {
            let row = &s.values[j + t];
            let lo = (r - halfwidth_bins as isize).clamp(0, bins - 1) as usize;
            let hi = (r + halfwidth_bins as isize).clamp(0, bins - 1) as usize;
            score += row[lo..=hi].iter().sum::<f64>();
        }
        if score > best_score {
            best_score = score;
            best_j = j;
        }
    }
    let start = best_j * s.frame_hop;
    let end = (start + chirp_frames * s.frame_hop + s.window_len).min(channel.len());
    Ok((start, end))
}

/// Runs the whole pipeline on one recording: per ear, detect the echo
/// segment, spectrogram it, mask off-ridge energy, and sum the 30 bands;
/// then concatenate and condition.
pub fn extract_features(
    rec: &EchoRecording,
    chirp: &ChirpParams,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let mut bands = Vec::with_capacity(2);
    for channel in [&rec.left, &rec.right] {
        let (start, end) = match cfg.segmentation {
            Segmentation::RidgeAligned => {
                ridge_search(channel, rec.fs_hz, chirp, cfg.halfwidth_bins)?
            }
            Segmentation::Detected => match detect_endpoints(channel, &cfg.endpoint) {
                Ok(span) => span,
                Err(Error::NoSignal) if cfg.fallback == NoSignalFallback::RidgeSearch => {
                    ridge_search(channel, rec.fs_hz, chirp, cfg.halfwidth_bins)?
                }
                Err(e) => return Err(e),
            },
        };
        let s = spectrogram(&channel[start..end], rec.fs_hz)?;
        let masked = mask_off_ridge(&s, chirp, cfg.halfwidth_bins)?;
        bands.push(band_energies(&masked)?);
    }
    make_feature_vector(&bands[0], &bands[1], cfg.normalization)
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

/// One row per pulse: site, azimuth, elevation, pulse, then the 60 features.
/// The normalization tag rides along as a comment.
pub fn features_to_csv(rows: &[(RecordTruth, FeatureVector)]) -> Result<CsvTable> {
    let mut header: Vec<String> =
        ["site", "az_deg", "el_deg", "pulse"].iter().map(|s| s.to_string()).collect();
    for k in 0..2 * BAND_COUNT {
        header.push(format!("f{k:02}"));
    }
    let mut table = CsvTable {
        comments: Vec::new(),
        header,
        rows: Vec::new(),
    };
    if let Some((_, first)) = rows.first() {
        table.comments.push(format!("normalization = {}", first.normalization.tag()));
    }
    for (truth, fv) in rows {
        if fv.values.len() != 2 * BAND_COUNT {
            return Err(Error::DimensionMismatch { expected: 2 * BAND_COUNT, got: fv.values.len() });
        }
        let mut row = vec![
            truth.site.to_string(),
            fmt_f64(truth.direction.azimuth_deg),
            fmt_f64(truth.direction.elevation_deg),
            truth.pulse.to_string(),
        ];
        row.extend(fv.values.iter().map(|v| fmt_f64(*v)));
        table.rows.push(row);
    }
    Ok(table)
}

/// Inverse of [`features_to_csv`]. Range is not stored in feature files, so
/// truths come back with `range_m = 0`.
pub fn features_from_csv(table: &CsvTable) -> Result<Vec<(RecordTruth, FeatureVector)>> {
    let norm = table
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("normalization ="))
        .map(|tag| Normalization::from_tag(tag.trim()))
        .transpose()?
        .unwrap_or(Normalization::Raw);
    let site_col = table.column("site")?;
    let az_col = table.column("az_deg")?;
    let el_col = table.column("el_deg")?;
    let pulse_col = table.column("pulse")?;
    let f0_col = table.column("f00")?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let field = |col: usize| -> Result<f64> {
            row.get(col)
                .ok_or_else(|| Error::Format("short CSV row".into()))?
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}`", row[col])))
        };
        let truth = RecordTruth {
            direction: Direction::new(field(az_col)?, field(el_col)?)?,
            range_m: 0.0,
            site: field(site_col)? as usize,
            pulse: field(pulse_col)? as usize,
        };
        let mut values = Vec::with_capacity(2 * BAND_COUNT);
        for k in 0..2 * BAND_COUNT {
            values.push(field(f0_col + k)?);
        }
        rows.push((truth, FeatureVector { values, normalization: norm }));
    }
    Ok(rows)
}

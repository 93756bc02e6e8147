//! LFM chirp generation and binaural echo synthesis: each ear hears the
//! chirp spectrally shaped by its pinna's beam gain toward the target,
//! delayed by the out-and-back path to its microphone, attenuated by
//! transmitter directivity and spherical spreading, and buried in white
//! noise sized against a boresight reference. Dataset generation sweeps a
//! direction grid over acquisition sites with fresh noise per pulse.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::beam::BeamModel;
use crate::geometry::{local_direction, DeviceConfig, Direction, Ear, PinnaMode};
use crate::io::{fmt_f64, KvFile};
use crate::{seed, Error, Result, SPEED_OF_SOUND};

/// Length of one recording, seconds. Fixed so every record has the same
/// shape; fits round trips out to about 8 m.
pub const RECORD_WINDOW_S: f64 = 0.050;

// ---------------------------------------------------------------------------
// chirp
// ---------------------------------------------------------------------------

/// Linear frequency-modulated pulse parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpParams {
    pub f_start_hz: f64,
    pub f_end_hz: f64,
    pub duration_s: f64,
    pub fs_hz: f64,
    pub amplitude: f64,
}

impl Default for ChirpParams {
    /// The scaled-down sounder: 5 -> 20 kHz over 5 ms at 100 kHz sampling.
    fn default() -> Self {
        ChirpParams {
            f_start_hz: 5_000.0,
            f_end_hz: 20_000.0,
            duration_s: 0.005,
            fs_hz: 100_000.0,
            amplitude: 1.0,
        }
    }
}

impl ChirpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz > 0.0) || !(self.duration_s > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "chirp needs positive fs and duration, got fs {} Hz, {} s",
                self.fs_hz, self.duration_s
            )));
        }
        for f in [self.f_start_hz, self.f_end_hz] {
            if !(f > 0.0 && f < self.fs_hz / 2.0) {
                return Err(Error::Nyquist { frequency_hz: f, sample_rate_hz: self.fs_hz });
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }
}

/// s(n) = A sin(2π (f_start t + ½ ((f_end − f_start)/T) t²)), t = n/fs —
/// instantaneous frequency ramps linearly from f_start to f_end.
pub fn make_chirp(p: &ChirpParams) -> Result<Vec<f64>> {
    p.validate()?;
    let sweep_rate = (p.f_end_hz - p.f_start_hz) / p.duration_s;
    Ok((0..p.sample_count())
        .map(|n| {
            let t = n as f64 / p.fs_hz;
            let phase = 2.0 * std::f64::consts::PI * (p.f_start_hz * t + 0.5 * sweep_rate * t * t);
            p.amplitude * phase.sin()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// scene and noise
// ---------------------------------------------------------------------------

/// One point target: where it is (world frame) and how strongly it reflects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub target_direction: Direction,
    pub range_m: f64,
    pub target_strength: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_m > 0.0) {
            return Err(Error::InvalidConfig(format!("range {} m must be positive", self.range_m)));
        }
        if !self.target_strength.is_finite() {
            return Err(Error::InvalidConfig("target strength must be finite".into()));
        }
        Ok(())
    }
}

/// Additive-noise and transmitter-directivity model. `None` SNR disables
/// noise entirely. The transmitter stares at azimuth 0, so off-axis targets
/// are insonified by cos(azimuth)^exponent (clamped at the horizon).
///
/// `seed` seeds this one synthesis; dataset generation derives a fresh seed
/// per record from its master seed instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub snr_db_at_boresight: Option<f64>,
    pub tx_directivity_exponent: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { snr_db_at_boresight: Some(20.0), tx_directivity_exponent: 2.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tx_directivity_exponent < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tx directivity exponent {} must be >= 0",
                self.tx_directivity_exponent
            )));
        }
        Ok(())
    }
}

/// Ground truth attached to every recording. For single syntheses `site`
/// and `pulse` are 0; dataset generation stamps the real indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordTruth {
    pub direction: Direction,
    pub range_m: f64,
    pub site: usize,
    pub pulse: usize,
}

/// One two-channel recording plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoRecording {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub fs_hz: f64,
    pub truth: RecordTruth,
}

// ---------------------------------------------------------------------------
// single-echo synthesis
// ---------------------------------------------------------------------------

/// The noise standard deviation that realizes `snr_db` against the boresight
/// reference: a unit-gain ear listening to the same target dead ahead.
/// Signal power is averaged over the chirp's active samples.
fn noise_sigma(chirp_samples: &[f64], scene: &Scene, snr_db: f64) -> f64 {
    let p_chirp =
        chirp_samples.iter().map(|s| s * s).sum::<f64>() / chirp_samples.len() as f64;
    let ref_amplitude = scene.target_strength / (scene.range_m * scene.range_m);
    (ref_amplitude * ref_amplitude * p_chirp * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Noiseless received waveform for one ear: delayed, scaled chirp shaped by
/// the ear's beam gain in the frequency domain.
fn ear_signal(
    chirp: &ChirpParams,
    chirp_samples: &[f64],
    scene: &Scene,
    beam: &BeamModel,
    device: &DeviceConfig,
    noise: &NoiseConfig,
    ear: Ear,
) -> Result<Vec<f64>> {
    let window = (RECORD_WINDOW_S * chirp.fs_hz).round() as usize;

    // Out-and-back path: transmitter at the origin to the target (range),
    // target back to this ear's microphone.
    let unit = scene.target_direction.to_unit_vector();
    let mic = device.microphone_position(ear);
    let mut return_sq = 0.0;
    for k in 0..3 {
        let d = scene.range_m * unit[k] - mic[k];
        return_sq += d * d;
    }
    let path_m = scene.range_m + return_sq.sqrt();
    let delay = (chirp.fs_hz * path_m / SPEED_OF_SOUND).round() as usize;
    if delay + chirp_samples.len() > window {
        return Err(Error::DelayExceedsWindow {
            delay_s: path_m / SPEED_OF_SOUND,
            window_s: RECORD_WINDOW_S,
        });
    }

    // Transmitter directivity (the loudspeaker stares at azimuth 0) and
    // spherical spreading.
    let cos_az = scene.target_direction.azimuth_deg.to_radians().cos().max(0.0);
    let scale = scene.target_strength / (scene.range_m * scene.range_m)
        * cos_az.powf(noise.tx_directivity_exponent);

    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); window];
    for (i, &s) in chirp_samples.iter().enumerate() {
        buf[delay + i] = Complex64::new(scale * s, 0.0);
    }

    // Zero-phase beam-gain filter: multiply bin k and its mirror by the real
    // gain at that bin's frequency toward the target's local direction.
    let local = local_direction(device.pose(ear), scene.target_direction);
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(window).process(&mut buf);
    for k in 0..=window / 2 {
        let f = k as f64 * chirp.fs_hz / window as f64;
        let g = beam.gain(f, local);
        buf[k] *= g;
        if k > 0 && k < window - k {
            buf[window - k] *= g;
        }
    }
    planner.plan_fft_inverse(window).process(&mut buf);
    let norm = 1.0 / window as f64;
    Ok(buf.into_iter().map(|c| c.re * norm).collect())
}

fn add_noise(x: &mut [f64], sigma: f64, seed: u64) {
    let normal = Normal::new(0.0, sigma).expect("noise sigma is finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in x.iter_mut() {
        *s += normal.sample(&mut rng);
    }
}

/// Synthesizes one two-channel echo recording. Deterministic given
/// `noise.seed`: the left and right noise streams are derived from it, so
/// the same call always reproduces the same waveforms.
pub fn synthesize_echo(
    chirp: &ChirpParams,
    scene: &Scene,
    beam: &BeamModel,
    device: &DeviceConfig,
    noise: &NoiseConfig,
) -> Result<EchoRecording> {
    chirp.validate()?;
    scene.validate()?;
    noise.validate()?;
    beam.validate()?;
    let chirp_samples = make_chirp(chirp)?;
    let mut left = ear_signal(chirp, &chirp_samples, scene, beam, device, noise, Ear::Left)?;
    let mut right = ear_signal(chirp, &chirp_samples, scene, beam, device, noise, Ear::Right)?;
    if let Some(snr_db) = noise.snr_db_at_boresight {
        let sigma = noise_sigma(&chirp_samples, scene, snr_db);
        add_noise(&mut left, sigma, seed::derive(noise.seed, &[0]));
        add_noise(&mut right, sigma, seed::derive(noise.seed, &[1]));
    }
    Ok(EchoRecording {
        left,
        right,
        fs_hz: chirp.fs_hz,
        truth: RecordTruth {
            direction: scene.target_direction,
            range_m: scene.range_m,
            site: 0,
            pulse: 0,
        },
    })
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

/// One acquisition site: the device stands at `range_m` from the target,
/// optionally with a small pointing offset (placement error) that shifts
/// where the target really is relative to the labeled grid direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SitePlacement {
    pub range_m: f64,
    pub azimuth_offset_deg: f64,
    pub elevation_offset_deg: f64,
}

impl SitePlacement {
    pub fn at_range(range_m: f64) -> Self {
        SitePlacement { range_m, azimuth_offset_deg: 0.0, elevation_offset_deg: 0.0 }
    }
}

/// Eight sites spread over 1.1–1.8 m, no pointing offsets.
pub fn default_sites() -> Vec<SitePlacement> {
    (0..8).map(|i| SitePlacement::at_range(1.1 + 0.1 * i as f64)).collect()
}

/// Everything the simulator needs besides the acquisition plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub chirp: ChirpParams,
    pub beam: BeamModel,
    pub device: DeviceConfig,
    pub noise: NoiseConfig,
    pub target_strength: f64,
}

/// The generated records plus a manifest of every parameter that shaped
/// them. Record order is site-major, then direction, then pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<EchoRecording>,
    pub manifest: KvFile,
}

fn build_manifest(
    grid: &[Direction],
    sites: &[SitePlacement],
    pulses_per_cell: usize,
    sim: &SimulationConfig,
) -> KvFile {
    let mut kv = sim.beam.to_kv();
    kv.set("chirp.f_start_hz", sim.chirp.f_start_hz);
    kv.set("chirp.f_end_hz", sim.chirp.f_end_hz);
    kv.set("chirp.duration_s", sim.chirp.duration_s);
    kv.set("chirp.fs_hz", sim.chirp.fs_hz);
    kv.set("chirp.amplitude", sim.chirp.amplitude);
    kv.set(
        "device.mode",
        match sim.device.mode {
            PinnaMode::Parallel => "parallel",
            PinnaMode::Orthogonal => "orthogonal",
        },
    );
    kv.set("device.left_tilt_deg", sim.device.left.forward_tilt_deg);
    kv.set("device.left_roll_deg", sim.device.left.roll_deg);
    kv.set("device.right_tilt_deg", sim.device.right.forward_tilt_deg);
    kv.set("device.right_roll_deg", sim.device.right.roll_deg);
    kv.set("device.baseline_offset_m", sim.device.baseline_offset_m);
    match sim.noise.snr_db_at_boresight {
        Some(snr) => kv.set("noise.snr_db_at_boresight", snr),
        None => kv.set("noise.snr_db_at_boresight", "off"),
    }
    kv.set("noise.tx_directivity_exponent", sim.noise.tx_directivity_exponent);
    kv.set("noise.seed", sim.noise.seed);
    kv.set("scene.target_strength", sim.target_strength);
    kv.set("record.window_s", RECORD_WINDOW_S);
    let dirs: Vec<String> = grid
        .iter()
        .map(|d| format!("{}/{}", fmt_f64(d.azimuth_deg), fmt_f64(d.elevation_deg)))
        .collect();
    kv.set("grid.count", grid.len());
    kv.set("grid.directions", dirs.join(";"));
    let site_rows: Vec<String> = sites
        .iter()
        .map(|s| {
            format!(
                "{}/{}/{}",
                fmt_f64(s.range_m),
                fmt_f64(s.azimuth_offset_deg),
                fmt_f64(s.elevation_offset_deg)
            )
        })
        .collect();
    kv.set("site.count", sites.len());
    kv.set("site.placements", site_rows.join(";"));
    kv.set("acquisition.pulses_per_cell", pulses_per_cell);
    kv.set("acquisition.record_count", grid.len() * sites.len() * pulses_per_cell);
    kv
}

/// Generates one record per (site, grid direction, pulse). The filtered
/// noiseless waveform is computed once per (site, direction) cell; each
/// pulse then adds fresh noise from a seed derived from (master seed, site,
/// direction, pulse), so parallel and serial generation agree bit-exactly.
pub fn generate_dataset(
    grid: &[Direction],
    sites: &[SitePlacement],
    pulses_per_cell: usize,
    sim: &SimulationConfig,
) -> Result<Dataset> {
    if grid.is_empty() || sites.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pulses_per_cell == 0 {
        return Err(Error::InvalidConfig("pulses_per_cell must be at least 1".into()));
    }
    sim.chirp.validate()?;
    sim.beam.validate()?;
    sim.noise.validate()?;
    let chirp_samples = make_chirp(&sim.chirp)?;

    let cells: Vec<(usize, usize)> = (0..sites.len())
        .flat_map(|s| (0..grid.len()).map(move |d| (s, d)))
        .collect();

    let per_cell: Vec<Vec<EchoRecording>> = cells
        .par_iter()
        .map(|&(site_idx, dir_idx)| -> Result<Vec<EchoRecording>> {
            let site = &sites[site_idx];
            let labeled = grid[dir_idx];
            let scene = Scene {
                target_direction: Direction::new(
                    labeled.azimuth_deg + site.azimuth_offset_deg,
                    labeled.elevation_deg + site.elevation_offset_deg,
                )?,
                range_m: site.range_m,
                target_strength: sim.target_strength,
            };
            scene.validate()?;
            let clean_left =
                ear_signal(&sim.chirp, &chirp_samples, &scene, &sim.beam, &sim.device, &sim.noise, Ear::Left)?;
            let clean_right =
                ear_signal(&sim.chirp, &chirp_samples, &scene, &sim.beam, &sim.device, &sim.noise, Ear::Right)?;
            let sigma = sim
                .noise
                .snr_db_at_boresight
                .map(|snr| noise_sigma(&chirp_samples, &scene, snr));
            let mut records = Vec::with_capacity(pulses_per_cell);
            for pulse in 0..pulses_per_cell {
                let mut left = clean_left.clone();
                let mut right = clean_right.clone();
                if let Some(sigma) = sigma {
                    let record_seed = seed::derive(
                        sim.noise.seed,
                        &[site_idx as u64, dir_idx as u64, pulse as u64],
                    );
                    add_noise(&mut left, sigma, seed::derive(record_seed, &[0]));
                    add_noise(&mut right, sigma, seed::derive(record_seed, &[1]));
                }
                records.push(EchoRecording {
                    left,
                    right,
                    fs_hz: sim.chirp.fs_hz,
                    truth: RecordTruth {
                        direction: labeled,
                        range_m: site.range_m,
                        site: site_idx,
                        pulse,
                    },
                });
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    Ok(Dataset {
        records: per_cell.into_iter().flatten().collect(),
        manifest: build_manifest(grid, sites, pulses_per_cell, sim),
    })
}

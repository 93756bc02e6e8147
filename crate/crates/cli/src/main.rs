//! Command-line pipeline around the pinna-sonar library.
//!
//! Each subcommand is one stage: `beam` analyzes a synthetic aperture,
//! `simulate` writes an echo dataset, `extract` turns it into features,
//! `train` fits networks, `evaluate` scores predictions, and `report` runs
//! a whole preset protocol in one shot. Stages communicate through files in
//! the `--out` directory; every stage leaves a `<stage>.manifest` recording
//! the configuration it ran under, and every artifact embeds the manifest's
//! hash, so any CSV can be traced back to the exact settings (and seed)
//! that produced it.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use pinna_sonar::beam::BeamModel;
use pinna_sonar::echo::{
    default_sites, generate_dataset, ChirpParams, EchoRecording, RecordTruth, SitePlacement,
};
use pinna_sonar::estimator::{init_network, save_network, train};
use pinna_sonar::evaluation::{
    accuracy_within, azimuth_limit_sweep, cross_validate, pulse_train_sweep,
    run_orthogonal_experiment, run_parallel_experiment, target_range, window_length_sweep,
    AccuracyReport, CvConfig, ExperimentConfig, RobustnessConfig, Target,
};
use pinna_sonar::farfield::{
    circular_piston, kirchhoff_far_field, sweep_lobe_track, DirectionLattice, Obliquity,
};
use pinna_sonar::features::{
    extract_features, features_from_csv, features_to_csv, FeatureVector, NoSignalFallback,
    Normalization, Segmentation, ZScore,
};
use pinna_sonar::geometry::{grid_directions, DeviceConfig, Direction, PinnaMode};
use pinna_sonar::io::{
    config_hash, fmt_f64, read_wav_stereo, svg_line_chart, write_wav_stereo, CsvTable, KvFile,
};
use pinna_sonar::{seed, Error, SPEED_OF_SOUND};

// ---------------------------------------------------------------------------
// exit codes
// ---------------------------------------------------------------------------

/// Configuration problems: bad flags, bad config keys or values, invalid
/// parameter combinations, missing output directory, unparseable files.
const CODE_CONFIG: u8 = 2;
/// Numeric or signal-processing failures on valid configuration (no side
/// lobe found, endpoint detection empty, singular fit, ...).
const CODE_NUMERIC: u8 = 3;
/// A stage artifact the subcommand depends on is missing or inconsistent.
const CODE_UPSTREAM: u8 = 4;
/// Training diverged (loss became non-finite).
const CODE_DIVERGENCE: u8 = 5;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: CODE_CONFIG, message: message.into() }
    }

    fn upstream(message: impl Into<String>) -> Self {
        CliError { code: CODE_UPSTREAM, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } => CODE_DIVERGENCE,
            // Precondition violations: the run was misconfigured.
            Error::InvalidDirection { .. }
            | Error::InvalidConfig(_)
            | Error::EmptyRange
            | Error::EmptyLattice
            | Error::SamplingTooCoarse { .. }
            | Error::Nyquist { .. }
            | Error::EmptyInput
            | Error::EmptyFilter
            | Error::IndivisiblePulses { .. }
            | Error::SizeExceedsPulses { .. }
            | Error::Format(_)
            | Error::Io(_) => CODE_CONFIG,
            // Valid configuration, but the numbers did not cooperate.
            Error::NoSideLobe
            | Error::LobeTruncated
            | Error::SingularFit
            | Error::DelayExceedsWindow { .. }
            | Error::NoSignal
            | Error::SegmentTooShort { .. }
            | Error::BandOutsideSupport
            | Error::LengthMismatch { .. }
            | Error::DimensionMismatch { .. } => CODE_NUMERIC,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("i/o error: {e}"))
    }
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

/// Synthetic binaural sonar pipeline: aperture analysis, echo simulation,
/// feature extraction, network training, scoring, and one-shot reports.
#[derive(Parser)]
#[command(name = "pinna-sonar", version)]
struct Cli {
    /// Flat `key = value` config file layered over the preset defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed. Required by `simulate`, `train`, and `report`; every
    /// random stream is derived from it, so equal seed + config means
    /// byte-identical artifacts.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads. Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Protocol preset supplying the default configuration.
    #[arg(long, global = true, value_enum, default_value = "parallel-2.1")]
    preset: PresetArg,

    /// Existing directory that receives this stage's artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Far-field patterns of a synthetic circular aperture across a
    /// frequency sweep, plus the side-lobe track over frequency.
    Beam,
    /// Generate the echo dataset: one stereo WAV per pulse, a truth table,
    /// and the acquisition manifest.
    Simulate,
    /// Turn the recordings into 60-band spectral feature vectors.
    Extract,
    /// Cross-validate an angle network over the features and fit a final
    /// full-data network for deployment.
    Train,
    /// Score the predictions: per-threshold ratios, pulse-train fusion,
    /// and the optional window-length and azimuth-limit sweeps.
    Evaluate,
    /// Run a full preset protocol in one shot and write its result tables.
    Report,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// Parallel pinnae; elevation network, fusion and window sweeps.
    #[value(name = "parallel-2.1")]
    Parallel,
    /// Orthogonal pinnae; azimuth + elevation networks, joint CDFs.
    #[value(name = "orthogonal-2.2")]
    Orthogonal,
    /// Orthogonal protocol plus the random-scene robustness probe.
    #[value(name = "robustness")]
    Robustness,
}

// ---------------------------------------------------------------------------
// seed streams
// ---------------------------------------------------------------------------

// Stage seed tags, derived from the master seed. The values mirror the
// library's one-shot experiment layout, so a staged run with the same seed
// and configuration reproduces the experiment's conditioning.
const TAG_NOISE: u64 = 1;
const TAG_CV_CYCLE: u64 = 2;
const TAG_FINAL: u64 = 5;

// ---------------------------------------------------------------------------
// run parameters
// ---------------------------------------------------------------------------

/// Grid ranges in generator form. The library keeps only the expanded
/// direction list, so range edits need the parameters that produced it.
#[derive(Debug, Clone, Copy)]
struct GridSpec {
    az_min: f64,
    az_max: f64,
    az_step: f64,
    el_min: f64,
    el_max: f64,
    el_step: f64,
}

impl GridSpec {
    fn directions(&self) -> Result<Vec<Direction>, Error> {
        grid_directions(self.az_min, self.az_max, self.az_step, self.el_min, self.el_max, self.el_step)
    }

    /// Collapsed azimuth span means an elevation cut; anything else is a
    /// full two-dimensional lattice.
    fn lattice(&self) -> Result<DirectionLattice, Error> {
        if self.az_min == self.az_max {
            DirectionLattice::elevation_cut(self.az_min, self.el_min, self.el_max, self.el_step)
        } else {
            DirectionLattice::from_ranges(
                self.az_min, self.az_max, self.az_step, self.el_min, self.el_max, self.el_step,
            )
        }
    }
}

/// `beam` stage settings: a piston disk swept over frequency. Defaults put
/// the disk at ka = 10 for the sweep center and sample the pattern on an
/// elevation cut fine enough for half-power analysis.
#[derive(Debug, Clone, Copy)]
struct SweepSpec {
    radius_m: f64,
    /// Aperture cell pitch, in cells per wavelength at the sweep's highest
    /// frequency (the pitch is shared across the sweep).
    cells_per_wavelength: f64,
    f_start_hz: f64,
    f_end_hz: f64,
    f_step_hz: f64,
    obliquity: Obliquity,
    pattern: GridSpec,
}

fn default_sweep() -> SweepSpec {
    SweepSpec {
        radius_m: 10.0 * SPEED_OF_SOUND / (2.0 * std::f64::consts::PI * 40_000.0),
        cells_per_wavelength: 8.0,
        f_start_hz: 30_000.0,
        f_end_hz: 50_000.0,
        f_step_hz: 5_000.0,
        obliquity: Obliquity::Kirchhoff,
        pattern: GridSpec {
            az_min: 0.0,
            az_max: 0.0,
            az_step: 1.0,
            el_min: -90.0,
            el_max: 90.0,
            el_step: 0.05,
        },
    }
}

/// Everything a run can configure: preset defaults, then the `--config`
/// file, then command-line flags, later layers winning.
struct RunParams {
    exp: ExperimentConfig,
    grid: GridSpec,
    device_mode: PinnaMode,
    device_tilt_deg: f64,
    /// Which angle the staged `train` command regresses (the one-shot
    /// orthogonal report always trains both).
    train_target: Target,
    sweep: SweepSpec,
    master_seed: Option<u64>,
    /// Keys the config file actually set, so stages can tell an explicit
    /// choice from a preset default.
    set_keys: BTreeSet<String>,
}

impl RunParams {
    fn new(preset: PresetArg) -> Result<Self, CliError> {
        // The master seed placeholder is overwritten before any stage
        // derives from it; presets only store it.
        let (exp, grid, tilt) = match preset {
            PresetArg::Parallel => (
                ExperimentConfig::parallel_preset(0)?,
                GridSpec { az_min: -21.0, az_max: 21.0, az_step: 7.0, el_min: 20.0, el_max: 55.0, el_step: 5.0 },
                0.0,
            ),
            PresetArg::Orthogonal | PresetArg::Robustness => {
                let mut exp = ExperimentConfig::orthogonal_preset(0)?;
                if preset == PresetArg::Orthogonal {
                    exp.robustness = None;
                }
                (
                    exp,
                    GridSpec { az_min: -20.0, az_max: 20.0, az_step: 10.0, el_min: 20.0, el_max: 60.0, el_step: 10.0 },
                    40.0,
                )
            }
        };
        let device_mode = exp.sim.device.mode;
        Ok(RunParams {
            exp,
            grid,
            device_mode,
            device_tilt_deg: tilt,
            train_target: Target::Elevation,
            sweep: default_sweep(),
            master_seed: None,
            set_keys: BTreeSet::new(),
        })
    }

    /// The azimuth-limit ladder the parallel report runs alongside the main
    /// protocol: a wide azimuth fan at a reduced budget, one per-condition
    /// network per training limit.
    fn for_limit_ladder() -> Result<Self, CliError> {
        Ok(RunParams {
            exp: ExperimentConfig::azimuth_limit_preset(0)?,
            grid: GridSpec { az_min: -84.0, az_max: 84.0, az_step: 7.0, el_min: 30.0, el_max: 45.0, el_step: 5.0 },
            device_mode: PinnaMode::Parallel,
            device_tilt_deg: 0.0,
            train_target: Target::Elevation,
            sweep: default_sweep(),
            master_seed: None,
            set_keys: BTreeSet::new(),
        })
    }

    fn require_seed(&self) -> Result<u64, CliError> {
        self.master_seed.ok_or_else(|| {
            CliError::config("this stage needs a master seed: pass --seed <u64> or set `seed` in the config")
        })
    }

    /// Applies a config file on top of the preset. Unknown keys are
    /// rejected rather than ignored so a typo cannot silently fall back to
    /// a default. Derived structures (grid, device, beam model) are rebuilt
    /// after the scan so key order never matters.
    fn apply_config(&mut self, kv: &KvFile) -> Result<(), CliError> {
        let mut beam_overlay: Vec<(String, String)> = Vec::new();
        for (key, value) in kv.pairs() {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "seed" => self.master_seed = Some(parse_u64(k, v)?),

                "grid.az_min" => self.grid.az_min = parse_f64(k, v)?,
                "grid.az_max" => self.grid.az_max = parse_f64(k, v)?,
                "grid.az_step" => self.grid.az_step = parse_f64(k, v)?,
                "grid.el_min" => self.grid.el_min = parse_f64(k, v)?,
                "grid.el_max" => self.grid.el_max = parse_f64(k, v)?,
                "grid.el_step" => self.grid.el_step = parse_f64(k, v)?,

                "sites.count" => {
                    let n = parse_usize(k, v)?;
                    let pool = default_sites();
                    if n == 0 || n > pool.len() {
                        return Err(CliError::config(format!(
                            "key `sites.count`: must be 1..={}, got {n}",
                            pool.len()
                        )));
                    }
                    self.exp.sites = pool.into_iter().take(n).collect();
                }
                "sites.placements" => self.exp.sites = parse_placements(v)?,

                "pulses_per_cell" => self.exp.pulses_per_cell = parse_usize(k, v)?,
                "trains_per_cell" => self.exp.trains_per_cell = parse_usize(k, v)?,

                "chirp.f_start_hz" => self.exp.sim.chirp.f_start_hz = parse_f64(k, v)?,
                "chirp.f_end_hz" => self.exp.sim.chirp.f_end_hz = parse_f64(k, v)?,
                "chirp.duration_s" => self.exp.sim.chirp.duration_s = parse_f64(k, v)?,
                "chirp.fs_hz" => self.exp.sim.chirp.fs_hz = parse_f64(k, v)?,
                "chirp.amplitude" => self.exp.sim.chirp.amplitude = parse_f64(k, v)?,

                "device.mode" => {
                    self.device_mode = match v {
                        "parallel" => PinnaMode::Parallel,
                        "orthogonal" => PinnaMode::Orthogonal,
                        other => {
                            return Err(CliError::config(format!(
                                "key `device.mode`: expected `parallel` or `orthogonal`, got `{other}`"
                            )))
                        }
                    }
                }
                "device.tilt_deg" => self.device_tilt_deg = parse_f64(k, v)?,

                "noise.snr_db" => {
                    self.exp.sim.noise.snr_db_at_boresight =
                        if v == "off" { None } else { Some(parse_f64(k, v)?) }
                }
                "noise.tx_directivity_exponent" => {
                    self.exp.sim.noise.tx_directivity_exponent = parse_f64(k, v)?
                }
                "scene.target_strength" => self.exp.sim.target_strength = parse_f64(k, v)?,

                "features.normalization" => {
                    self.exp.features.normalization =
                        Normalization::from_tag(v).map_err(CliError::from)?
                }
                "features.halfwidth_bins" => self.exp.features.halfwidth_bins = parse_usize(k, v)?,
                "features.segmentation" => {
                    self.exp.features.segmentation = match v {
                        "detected" => Segmentation::Detected,
                        "ridge-aligned" => Segmentation::RidgeAligned,
                        other => {
                            return Err(CliError::config(format!(
                                "key `features.segmentation`: expected `detected` or `ridge-aligned`, got `{other}`"
                            )))
                        }
                    }
                }
                "features.fallback" => {
                    self.exp.features.fallback = match v {
                        "propagate" => NoSignalFallback::Propagate,
                        "ridge-search" => NoSignalFallback::RidgeSearch,
                        other => {
                            return Err(CliError::config(format!(
                                "key `features.fallback`: expected `propagate` or `ridge-search`, got `{other}`"
                            )))
                        }
                    }
                }

                "train.learning_rate" => self.exp.train.learning_rate = parse_f64(k, v)?,
                "train.epochs" => self.exp.train.epochs = parse_usize(k, v)?,
                "train.batch_size" => self.exp.train.batch_size = parse_usize(k, v)?,
                "train.patience" => self.exp.train.patience = parse_usize(k, v)?,
                "train.validation_fraction" => {
                    self.exp.train.validation_fraction =
                        if v == "off" { None } else { Some(parse_f64(k, v)?) }
                }
                "train.target" => {
                    self.train_target = match v {
                        "azimuth" => Target::Azimuth,
                        "elevation" => Target::Elevation,
                        other => {
                            return Err(CliError::config(format!(
                                "key `train.target`: expected `azimuth` or `elevation`, got `{other}`"
                            )))
                        }
                    }
                }

                "mw.window_length_deg" => self.exp.mw.window_length_deg = parse_f64(k, v)?,
                "mw.step_deg" => self.exp.mw.step_deg = parse_f64(k, v)?,
                "mw.levels" => self.exp.mw.levels = parse_usize(k, v)?,

                "eval.train_sizes" => self.exp.train_sizes = parse_list_usize(k, v)?,
                "eval.thresholds_deg" => self.exp.thresholds_deg = parse_list_f64(k, v)?,
                "eval.azimuth_limits_deg" => self.exp.azimuth_limits_deg = parse_list_f64(k, v)?,
                "eval.window_lengths_deg" => self.exp.window_lengths_deg = parse_list_f64(k, v)?,
                "eval.limit_threshold_deg" => self.exp.limit_threshold_deg = parse_f64(k, v)?,
                "eval.fused_train_size" => self.exp.fused_train_size = parse_usize(k, v)?,
                "eval.angle_margin_deg" => self.exp.angle_margin_deg = parse_f64(k, v)?,

                "robust.scenes" => {
                    let n = parse_usize(k, v)?;
                    if n == 0 {
                        self.exp.robustness = None;
                    } else {
                        robust_mut(&mut self.exp).scenes = n;
                    }
                }
                "robust.az_min" => robust_mut(&mut self.exp).azimuth_deg.0 = parse_f64(k, v)?,
                "robust.az_max" => robust_mut(&mut self.exp).azimuth_deg.1 = parse_f64(k, v)?,
                "robust.el_min" => robust_mut(&mut self.exp).elevation_deg.0 = parse_f64(k, v)?,
                "robust.el_max" => robust_mut(&mut self.exp).elevation_deg.1 = parse_f64(k, v)?,
                "robust.range_min" => robust_mut(&mut self.exp).range_m.0 = parse_f64(k, v)?,
                "robust.range_max" => robust_mut(&mut self.exp).range_m.1 = parse_f64(k, v)?,

                "aperture.radius_m" => self.sweep.radius_m = parse_f64(k, v)?,
                "aperture.cells_per_wavelength" => {
                    self.sweep.cells_per_wavelength = parse_f64(k, v)?
                }
                "sweep.f_start_hz" => self.sweep.f_start_hz = parse_f64(k, v)?,
                "sweep.f_end_hz" => self.sweep.f_end_hz = parse_f64(k, v)?,
                "sweep.f_step_hz" => self.sweep.f_step_hz = parse_f64(k, v)?,
                "sweep.obliquity" => {
                    self.sweep.obliquity = match v {
                        "unity" => Obliquity::Unity,
                        "kirchhoff" => Obliquity::Kirchhoff,
                        other => {
                            return Err(CliError::config(format!(
                                "key `sweep.obliquity`: expected `unity` or `kirchhoff`, got `{other}`"
                            )))
                        }
                    }
                }
                "pattern.az_min" => self.sweep.pattern.az_min = parse_f64(k, v)?,
                "pattern.az_max" => self.sweep.pattern.az_max = parse_f64(k, v)?,
                "pattern.az_step" => self.sweep.pattern.az_step = parse_f64(k, v)?,
                "pattern.el_min" => self.sweep.pattern.el_min = parse_f64(k, v)?,
                "pattern.el_max" => self.sweep.pattern.el_max = parse_f64(k, v)?,
                "pattern.el_step" => self.sweep.pattern.el_step = parse_f64(k, v)?,

                _ if k.starts_with("beam.") => {
                    if !BEAM_KEYS.contains(&k) {
                        return Err(CliError::config(format!("unknown config key `{k}`")));
                    }
                    beam_overlay.push((key.clone(), value.clone()));
                }
                _ => return Err(CliError::config(format!("unknown config key `{k}`"))),
            }
            self.set_keys.insert(key.clone());
        }

        self.exp.grid = self.grid.directions()?;
        self.exp.sim.device = match self.device_mode {
            PinnaMode::Parallel => DeviceConfig::parallel(self.device_tilt_deg)?,
            PinnaMode::Orthogonal => DeviceConfig::orthogonal(self.device_tilt_deg)?,
        };
        if !beam_overlay.is_empty() {
            // Overlay on the preset's model, not the library default, so a
            // single beam key never resets the others.
            let mut base = self.exp.sim.beam.to_kv();
            for (k, v) in beam_overlay {
                base.set(&k, v);
            }
            self.exp.sim.beam = BeamModel::from_kv(&base)?;
        }
        Ok(())
    }
}

/// The beam-model keys `BeamModel::to_kv` emits; anything else under
/// `beam.` is a typo (the library would silently default it).
const BEAM_KEYS: [&str; 12] = [
    "beam.main_center_az_deg",
    "beam.main_center_el_deg",
    "beam.main_width_deg",
    "beam.main_gain",
    "beam.side_width_el_deg",
    "beam.side_width_az_deg",
    "beam.side_gain",
    "beam.scan_f_lo_hz",
    "beam.scan_f_hi_hz",
    "beam.scan_slope_deg_per_hz",
    "beam.scan_intercept_deg",
    "beam.side_azimuth_center_deg",
];

fn robust_mut(exp: &mut ExperimentConfig) -> &mut RobustnessConfig {
    exp.robustness.get_or_insert_with(RobustnessConfig::default)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("key `{key}`: `{value}` is not a number")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("key `{key}`: `{value}` is not an unsigned integer")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("key `{key}`: `{value}` is not an unsigned integer")))
}

/// Semicolon-separated list; an empty value is an empty list (which turns
/// the optional sweeps off).
fn parse_list_f64(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(';').map(|tok| parse_f64(key, tok.trim())).collect()
}

fn parse_list_usize(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(';').map(|tok| parse_usize(key, tok.trim())).collect()
}

/// `range/azimuth-offset/elevation-offset` triplets joined by `;`, the same
/// shape the dataset manifest records.
fn parse_placements(value: &str) -> Result<Vec<SitePlacement>, CliError> {
    let mut sites = Vec::new();
    for part in value.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let fields: Vec<&str> = part.split('/').collect();
        if fields.len() != 3 {
            return Err(CliError::config(format!(
                "key `sites.placements`: `{part}` is not `range/az_offset/el_offset`"
            )));
        }
        sites.push(SitePlacement {
            range_m: parse_f64("sites.placements", fields[0])?,
            azimuth_offset_deg: parse_f64("sites.placements", fields[1])?,
            elevation_offset_deg: parse_f64("sites.placements", fields[2])?,
        });
    }
    if sites.is_empty() {
        return Err(CliError::config("key `sites.placements`: no placements given"));
    }
    Ok(sites)
}

// ---------------------------------------------------------------------------
// artifact plumbing
// ---------------------------------------------------------------------------

/// Clears any inherited hash, digests the manifest's configuration content,
/// and stamps the result under `cli.config_hash`. Artifact-pointer keys are
/// deterministic, so including them keeps re-runs byte-identical.
fn stamp_hash(man: &mut KvFile) -> String {
    man.set("cli.config_hash", "");
    let hash = config_hash(man);
    man.set("cli.config_hash", &hash);
    hash
}

fn upstream_path(out: &Path, name: &str) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    if !path.is_file() {
        return Err(CliError::upstream(format!(
            "missing upstream artifact `{}`; run the earlier stage into this directory first",
            path.display()
        )));
    }
    Ok(path)
}

fn save_table(out: &Path, name: &str, table: &CsvTable) -> Result<(), CliError> {
    table.save(&out.join(name))?;
    Ok(())
}

/// SVG with the config hash as a leading XML comment, mirroring the CSV
/// provenance comments.
fn save_svg(path: &Path, hash: &str, svg: &str) -> Result<(), CliError> {
    fs::write(path, format!("<!-- config_hash = {hash} -->\n{svg}"))?;
    Ok(())
}

/// Same columns as the library's report tables, so staged and one-shot
/// outputs share a dialect.
fn reports_csv(reports: &[AccuracyReport], hash: &str) -> CsvTable {
    let mut table = CsvTable::new(&[
        "azimuth_limit_deg",
        "train_size",
        "window_length_deg",
        "threshold_deg",
        "ratio",
        "samples",
    ]);
    table.comments.push(format!("config_hash = {hash}"));
    for r in reports {
        table.push_row(vec![
            r.azimuth_limit_deg.map(fmt_f64).unwrap_or_default(),
            r.train_size.map(|s| s.to_string()).unwrap_or_default(),
            r.window_length_deg.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.threshold_deg),
            fmt_f64(r.ratio),
            r.samples.to_string(),
        ]);
    }
    table
}

fn per_angle_csv(report: &AccuracyReport, angle_label: &str, hash: &str) -> CsvTable {
    let mut table = CsvTable::new(&[angle_label, "mean_error_deg", "std_error_deg", "count"]);
    table.comments.push(format!("config_hash = {hash}"));
    for s in &report.per_angle {
        table.push_row(vec![
            fmt_f64(s.angle_deg),
            fmt_f64(s.mean_error_deg),
            fmt_f64(s.std_error_deg),
            s.count.to_string(),
        ]);
    }
    table
}

fn segmentation_tag(s: Segmentation) -> &'static str {
    match s {
        Segmentation::Detected => "detected",
        Segmentation::RidgeAligned => "ridge-aligned",
    }
}

fn fallback_tag(f: NoSignalFallback) -> &'static str {
    match f {
        NoSignalFallback::Propagate => "propagate",
        NoSignalFallback::RidgeSearch => "ridge-search",
    }
}

fn join_f64(items: &[f64]) -> String {
    items.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

fn join_usize(items: &[usize]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Accuracy-versus-train-size chart, one series per threshold, with the
/// single-pulse ratio as the size-1 point. `None` when there is nothing to
/// plot.
fn train_size_svg(
    single: &[AccuracyReport],
    sweep: &[AccuracyReport],
    thresholds: &[f64],
) -> Result<Option<String>, CliError> {
    if sweep.is_empty() {
        return Ok(None);
    }
    let mut labels = Vec::new();
    let mut series_pts = Vec::new();
    for &t in thresholds {
        let mut pts = Vec::new();
        if let Some(r) = single.iter().find(|r| r.threshold_deg == t) {
            pts.push((1.0, r.ratio));
        }
        for r in sweep.iter().filter(|r| r.threshold_deg == t && r.window_length_deg.is_none()) {
            if let Some(size) = r.train_size {
                pts.push((size as f64, r.ratio));
            }
        }
        if pts.is_empty() {
            continue;
        }
        labels.push(format!("within {}°", fmt_f64(t)));
        series_pts.push(pts);
    }
    if series_pts.is_empty() {
        return Ok(None);
    }
    let series: Vec<(&str, Vec<(f64, f64)>)> =
        labels.iter().map(String::as_str).zip(series_pts).collect();
    Ok(Some(svg_line_chart(
        "Accuracy vs pulse-train size",
        "train size (pulses)",
        "fraction within threshold",
        &series,
    )?))
}

fn limit_svg(limit_sweep: &[AccuracyReport]) -> Result<Option<String>, CliError> {
    let pts: Vec<(f64, f64)> = limit_sweep
        .iter()
        .filter_map(|r| r.azimuth_limit_deg.map(|l| (l, r.ratio)))
        .collect();
    if pts.is_empty() {
        return Ok(None);
    }
    let label = format!("within {}°", fmt_f64(limit_sweep[0].threshold_deg));
    Ok(Some(svg_line_chart(
        "Accuracy vs training azimuth limit",
        "azimuth limit (deg)",
        "fraction within threshold",
        &[(label.as_str(), pts)],
    )?))
}

// ---------------------------------------------------------------------------
// beam
// ---------------------------------------------------------------------------

fn cmd_beam(out: &Path, params: &RunParams) -> Result<(), CliError> {
    let spec = &params.sweep;
    if !(spec.f_step_hz > 0.0) {
        return Err(CliError::config("sweep.f_step_hz must be positive"));
    }
    let mut freqs = Vec::new();
    let mut f = spec.f_start_hz;
    while f <= spec.f_end_hz + 1e-9 {
        freqs.push(f);
        f += spec.f_step_hz;
    }
    if freqs.len() < 2 {
        return Err(CliError::config("the frequency sweep needs at least two points"));
    }
    // One physical cell pitch across the sweep, set by the shortest
    // wavelength so every frequency satisfies the sampling guard.
    let spacing = SPEED_OF_SOUND / freqs[freqs.len() - 1] / spec.cells_per_wavelength;
    let apertures = freqs
        .iter()
        .map(|&f| circular_piston(spec.radius_m, spacing, f))
        .collect::<Result<Vec<_>, Error>>()?;
    let lattice = spec.pattern.lattice()?;

    let mut man = KvFile::new();
    man.set("cli.stage", "beam");
    man.set("aperture.radius_m", fmt_f64(spec.radius_m));
    man.set("aperture.cells_per_wavelength", fmt_f64(spec.cells_per_wavelength));
    man.set("aperture.cell_spacing_m", fmt_f64(spacing));
    man.set("sweep.f_start_hz", fmt_f64(spec.f_start_hz));
    man.set("sweep.f_end_hz", fmt_f64(spec.f_end_hz));
    man.set("sweep.f_step_hz", fmt_f64(spec.f_step_hz));
    man.set(
        "sweep.obliquity",
        match spec.obliquity {
            Obliquity::Unity => "unity",
            Obliquity::Kirchhoff => "kirchhoff",
        },
    );
    man.set("pattern.az_min", fmt_f64(spec.pattern.az_min));
    man.set("pattern.az_max", fmt_f64(spec.pattern.az_max));
    man.set("pattern.az_step", fmt_f64(spec.pattern.az_step));
    man.set("pattern.el_min", fmt_f64(spec.pattern.el_min));
    man.set("pattern.el_max", fmt_f64(spec.pattern.el_max));
    man.set("pattern.el_step", fmt_f64(spec.pattern.el_step));
    man.set("cli.track", "lobe_track.csv");
    let hash = stamp_hash(&mut man);

    for (&f, aperture) in freqs.iter().zip(&apertures) {
        let pattern = kirchhoff_far_field(aperture, &lattice, spec.obliquity)?;
        let mut table = CsvTable::new(&["azimuth_deg", "elevation_deg", "magnitude"]);
        table.comments.push(format!("config_hash = {hash}"));
        table.comments.push(format!("frequency_hz = {}", fmt_f64(f)));
        for (ei, &el) in lattice.elevations_deg.iter().enumerate() {
            for (ai, &az) in lattice.azimuths_deg.iter().enumerate() {
                table.push_row(vec![fmt_f64(az), fmt_f64(el), fmt_f64(pattern.magnitude(ei, ai))]);
            }
        }
        save_table(out, &format!("pattern_{f:.0}.csv"), &table)?;
    }

    let track = sweep_lobe_track(&apertures, &lattice, spec.obliquity)?;
    let mut table = CsvTable::new(&[
        "frequency_hz",
        "main_az_deg",
        "main_el_deg",
        "hpbw_deg",
        "side_az_deg",
        "side_el_deg",
        "side_level_db",
        "energy_ratio",
    ]);
    table.comments.push(format!("config_hash = {hash}"));
    for (f, lobes) in &track {
        table.push_row(vec![
            fmt_f64(*f),
            fmt_f64(lobes.main_direction.azimuth_deg),
            fmt_f64(lobes.main_direction.elevation_deg),
            fmt_f64(lobes.hpbw_deg),
            fmt_f64(lobes.side_direction.azimuth_deg),
            fmt_f64(lobes.side_direction.elevation_deg),
            fmt_f64(lobes.side_level_db),
            fmt_f64(lobes.energy_ratio),
        ]);
    }
    save_table(out, "lobe_track.csv", &table)?;

    let side: Vec<(f64, f64)> =
        track.iter().map(|(f, l)| (f / 1000.0, l.side_direction.elevation_deg)).collect();
    let width: Vec<(f64, f64)> = track.iter().map(|(f, l)| (f / 1000.0, l.hpbw_deg)).collect();
    let svg = svg_line_chart(
        "Lobe track across the frequency sweep",
        "frequency (kHz)",
        "degrees",
        &[("side-lobe elevation", side), ("half-power width", width)],
    )?;
    save_svg(&out.join("lobe_track.svg"), &hash, &svg)?;
    man.save(&out.join("beam.manifest"))?;
    println!(
        "beam: {} patterns + lobe track -> {} (config {hash})",
        freqs.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(out: &Path, params: &mut RunParams) -> Result<(), CliError> {
    let master = params.require_seed()?;
    // The staged pipeline defaults to a reduced acquisition so a bare run
    // stays tens of megabytes; the full preset budgets (hundreds of
    // megabytes of WAV) remain one config key away, and `report` runs them
    // in memory without this cap.
    if !params.set_keys.contains("pulses_per_cell") {
        params.exp.pulses_per_cell = 10;
    }
    if !params.set_keys.contains("sites.count") && !params.set_keys.contains("sites.placements") {
        params.exp.sites.truncate(2);
    }

    let mut sim = params.exp.sim.clone();
    sim.noise.seed = seed::derive(master, &[TAG_NOISE]);
    let dataset = generate_dataset(&params.exp.grid, &params.exp.sites, params.exp.pulses_per_cell, &sim)?;

    let rec_dir = out.join("recordings");
    fs::create_dir_all(&rec_dir)?;

    let mut man = dataset.manifest.clone();
    man.set("cli.stage", "simulate");
    man.set("cli.master_seed", master);
    man.set("cli.recordings", "recordings");
    man.set("cli.truth", "truth.csv");
    let hash = stamp_hash(&mut man);

    let mut truth = CsvTable::new(&["wav", "site", "az_deg", "el_deg", "range_m", "pulse"]);
    truth.comments.push(format!("config_hash = {hash}"));
    for (i, rec) in dataset.records.iter().enumerate() {
        let name = format!("rec_{i:06}.wav");
        let left: Vec<f32> = rec.left.iter().map(|&v| v as f32).collect();
        let right: Vec<f32> = rec.right.iter().map(|&v| v as f32).collect();
        write_wav_stereo(&rec_dir.join(&name), rec.fs_hz as u32, &left, &right)?;
        truth.push_row(vec![
            name,
            rec.truth.site.to_string(),
            fmt_f64(rec.truth.direction.azimuth_deg),
            fmt_f64(rec.truth.direction.elevation_deg),
            fmt_f64(rec.truth.range_m),
            rec.truth.pulse.to_string(),
        ]);
    }
    save_table(out, "truth.csv", &truth)?;
    man.save(&out.join("simulate.manifest"))?;
    println!(
        "simulate: {} records -> {} (config {hash})",
        dataset.records.len(),
        rec_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

fn chirp_from_manifest(man: &KvFile) -> Result<ChirpParams, CliError> {
    Ok(ChirpParams {
        f_start_hz: man.get_f64("chirp.f_start_hz")?,
        f_end_hz: man.get_f64("chirp.f_end_hz")?,
        duration_s: man.get_f64("chirp.duration_s")?,
        fs_hz: man.get_f64("chirp.fs_hz")?,
        amplitude: man.get_f64("chirp.amplitude")?,
    })
}

fn row_f64(row: &[String], col: usize) -> Result<f64, CliError> {
    let raw = row
        .get(col)
        .ok_or_else(|| CliError::config("short CSV row".to_string()))?;
    raw.parse()
        .map_err(|_| CliError::config(format!("bad number `{raw}` in CSV")))
}

fn row_usize(row: &[String], col: usize) -> Result<usize, CliError> {
    let raw = row
        .get(col)
        .ok_or_else(|| CliError::config("short CSV row".to_string()))?;
    raw.parse()
        .map_err(|_| CliError::config(format!("bad integer `{raw}` in CSV")))
}

fn cmd_extract(out: &Path, params: &RunParams) -> Result<(), CliError> {
    let man_path = upstream_path(out, "simulate.manifest")?;
    let upstream = KvFile::load(&man_path)?;
    // Extraction aligns to the chirp that made the data, so the sweep
    // parameters come from the manifest rather than the config.
    let chirp = chirp_from_manifest(&upstream)?;
    let rec_dir = out.join(upstream.get("cli.recordings").unwrap_or("recordings"));
    let truth_path = upstream_path(out, upstream.get("cli.truth").unwrap_or("truth.csv"))?;
    let truth = CsvTable::load(&truth_path)?;
    let wav_col = truth.column("wav")?;
    let site_col = truth.column("site")?;
    let az_col = truth.column("az_deg")?;
    let el_col = truth.column("el_deg")?;
    let range_col = truth.column("range_m")?;
    let pulse_col = truth.column("pulse")?;

    let fcfg = &params.exp.features;
    let pairs = truth
        .rows
        .par_iter()
        .map(|row| {
            let wav = rec_dir.join(&row[wav_col]);
            if !wav.is_file() {
                return Err(CliError::upstream(format!(
                    "missing recording `{}` named by truth.csv",
                    wav.display()
                )));
            }
            let (fs, left, right) = read_wav_stereo(&wav)?;
            let truth = RecordTruth {
                direction: Direction::new(row_f64(row, az_col)?, row_f64(row, el_col)?)?,
                range_m: row_f64(row, range_col)?,
                site: row_usize(row, site_col)?,
                pulse: row_usize(row, pulse_col)?,
            };
            let rec = EchoRecording {
                left: left.iter().map(|&v| v as f64).collect(),
                right: right.iter().map(|&v| v as f64).collect(),
                fs_hz: fs as f64,
                truth,
            };
            let fv = extract_features(&rec, &chirp, fcfg)?;
            Ok((rec.truth, fv))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut man = upstream.clone();
    man.set("cli.stage", "extract");
    man.set("cli.upstream_hash", upstream.get("cli.config_hash").unwrap_or(""));
    man.set("features.normalization", params.exp.features.normalization.tag());
    man.set("features.halfwidth_bins", params.exp.features.halfwidth_bins);
    man.set("features.segmentation", segmentation_tag(params.exp.features.segmentation));
    man.set("features.fallback", fallback_tag(params.exp.features.fallback));
    man.set("cli.features", "features.csv");
    let hash = stamp_hash(&mut man);

    let mut table = features_to_csv(&pairs)?;
    table.comments.push(format!("config_hash = {hash}"));
    save_table(out, "features.csv", &table)?;
    man.save(&out.join("extract.manifest"))?;
    println!("extract: {} feature rows -> features.csv (config {hash})", pairs.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(out: &Path, params: &RunParams) -> Result<(), CliError> {
    let master = params.require_seed()?;
    let upstream = KvFile::load(&upstream_path(out, "extract.manifest")?)?;
    let features_path = upstream_path(out, "features.csv")?;
    let samples = features_from_csv(&CsvTable::load(&features_path)?)?;

    let target = params.train_target;
    let range = target_range(&samples, target, params.exp.angle_margin_deg)?;
    let mut cycle = params.exp.train.clone();
    cycle.seed = seed::derive(master, &[TAG_CV_CYCLE]);
    let cv = CvConfig {
        trains_per_cell: params.exp.trains_per_cell,
        target,
        angle_range_deg: range,
        train: cycle,
        standardize: true,
    };
    let outcome = cross_validate(&samples, &cv)?;

    // A full-data network (with its feature scaler) for use outside the
    // cross-validation cycle; the predictions below stay strictly
    // out-of-fold.
    let rows: Vec<FeatureVector> = samples.iter().map(|(_, f)| f.clone()).collect();
    let scaler = ZScore::fit(&rows)?;
    let mut pairs = Vec::with_capacity(samples.len());
    for (truth, fv) in &samples {
        pairs.push((scaler.apply(fv)?.values, target.of(truth)));
    }
    let start = init_network(seed::derive(master, &[TAG_FINAL]), range)?;
    let mut ftrain = params.exp.train.clone();
    ftrain.seed = seed::derive(master, &[TAG_FINAL, 1]);
    let (net, report) = train(&start, &pairs, &ftrain)?;

    let mut man = upstream.clone();
    man.set("cli.stage", "train");
    man.set("cli.upstream_hash", upstream.get("cli.config_hash").unwrap_or(""));
    man.set("cli.master_seed", master);
    man.set("train.target", target.label());
    man.set("train.learning_rate", fmt_f64(params.exp.train.learning_rate));
    man.set("train.epochs", params.exp.train.epochs);
    man.set("train.batch_size", params.exp.train.batch_size);
    man.set("train.patience", params.exp.train.patience);
    man.set(
        "train.validation_fraction",
        params.exp.train.validation_fraction.map(fmt_f64).unwrap_or_else(|| "off".to_string()),
    );
    man.set("train.trains_per_cell", params.exp.trains_per_cell);
    man.set("train.angle_min_deg", fmt_f64(range.0));
    man.set("train.angle_max_deg", fmt_f64(range.1));
    man.set("final.best_epoch", report.best_epoch);
    man.set("final.stopped_early", report.stopped_early);
    man.set("cli.predictions", "predictions.csv");
    man.set("cli.network", "network.bin");
    man.set("cli.scaler", "scaler.csv");
    let hash = stamp_hash(&mut man);

    let mut predictions = CsvTable::new(&[
        "site",
        "az_deg",
        "el_deg",
        "pulse",
        "truth_deg",
        "prediction_deg",
    ]);
    predictions.comments.push(format!("config_hash = {hash}"));
    predictions.comments.push(format!("target = {}", target.label()));
    for ((truth, _), pred) in samples.iter().zip(&outcome.predictions) {
        predictions.push_row(vec![
            truth.site.to_string(),
            fmt_f64(truth.direction.azimuth_deg),
            fmt_f64(truth.direction.elevation_deg),
            truth.pulse.to_string(),
            fmt_f64(target.of(truth)),
            fmt_f64(*pred),
        ]);
    }
    save_table(out, "predictions.csv", &predictions)?;

    save_network(&net, &out.join("network.bin"))?;
    let mut scaler_table = CsvTable::new(&["feature", "mean", "std"]);
    scaler_table.comments.push(format!("config_hash = {hash}"));
    for (k, (m, s)) in scaler.mean.iter().zip(&scaler.std).enumerate() {
        scaler_table.push_row(vec![format!("f{k:02}"), fmt_f64(*m), fmt_f64(*s)]);
    }
    save_table(out, "scaler.csv", &scaler_table)?;

    let mut loss = CsvTable::new(&["epoch", "mse"]);
    loss.comments.push(format!("config_hash = {hash}"));
    for (epoch, mse) in report.epoch_losses.iter().enumerate() {
        loss.push_row(vec![epoch.to_string(), fmt_f64(*mse)]);
    }
    save_table(out, "train_loss.csv", &loss)?;
    man.save(&out.join("train.manifest"))?;

    let truths: Vec<f64> = samples.iter().map(|(t, _)| target.of(t)).collect();
    let ratio = accuracy_within(&outcome.predictions, &truths, 5.0)?;
    println!(
        "train: {} cycle over {} rotations, {:.4} within 5°; final network best epoch {} (config {hash})",
        target.label(),
        outcome.reports.len(),
        ratio,
        report.best_epoch
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(out: &Path, params: &RunParams) -> Result<(), CliError> {
    let upstream = KvFile::load(&upstream_path(out, "train.manifest")?)?;
    let samples = features_from_csv(&CsvTable::load(&upstream_path(out, "features.csv")?)?)?;
    let pred_table = CsvTable::load(&upstream_path(out, "predictions.csv")?)?;

    let target = match upstream.get("train.target") {
        Some("azimuth") => Target::Azimuth,
        Some("elevation") => Target::Elevation,
        other => {
            return Err(CliError::config(format!(
                "train.manifest: bad `train.target` {other:?}"
            )))
        }
    };

    // The predictions must be the ones made for exactly these features;
    // row-by-row truth agreement is the cheap proof.
    if pred_table.rows.len() != samples.len() {
        return Err(CliError::upstream(format!(
            "predictions.csv has {} rows but features.csv has {}; regenerate the train stage",
            pred_table.rows.len(),
            samples.len()
        )));
    }
    let site_col = pred_table.column("site")?;
    let az_col = pred_table.column("az_deg")?;
    let el_col = pred_table.column("el_deg")?;
    let pulse_col = pred_table.column("pulse")?;
    let pred_col = pred_table.column("prediction_deg")?;
    let mut predictions = Vec::with_capacity(samples.len());
    for (i, (row, (truth, _))) in pred_table.rows.iter().zip(&samples).enumerate() {
        let aligned = row_usize(row, site_col)? == truth.site
            && row_f64(row, az_col)? == truth.direction.azimuth_deg
            && row_f64(row, el_col)? == truth.direction.elevation_deg
            && row_usize(row, pulse_col)? == truth.pulse;
        if !aligned {
            return Err(CliError::upstream(format!(
                "predictions.csv row {i} does not match features.csv; regenerate the train stage"
            )));
        }
        predictions.push(row_f64(row, pred_col)?);
    }

    let thresholds = &params.exp.thresholds_deg;
    let mw = &params.exp.mw;
    let single = pulse_train_sweep(&samples, &predictions, &[1], thresholds, target, mw)?;

    // Default fusion sizes larger than the acquisition cannot form a single
    // train; drop them unless the config asked for them explicitly.
    let pulses = upstream
        .get_u64("acquisition.pulses_per_cell")
        .map(|v| v as usize)
        .unwrap_or(usize::MAX);
    let sizes: Vec<usize> = if params.set_keys.contains("eval.train_sizes") {
        params.exp.train_sizes.clone()
    } else {
        params.exp.train_sizes.iter().copied().filter(|&s| s <= pulses).collect()
    };
    let sweep = if sizes.is_empty() {
        Vec::new()
    } else {
        pulse_train_sweep(&samples, &predictions, &sizes, thresholds, target, mw)?
    };
    let window_sweep = if params.exp.window_lengths_deg.is_empty() || sizes.is_empty() {
        Vec::new()
    } else {
        window_length_sweep(
            &samples,
            &predictions,
            &params.exp.window_lengths_deg,
            &sizes,
            thresholds,
            target,
            mw,
        )?
    };
    let limit_sweep = if params.exp.azimuth_limits_deg.is_empty() {
        Vec::new()
    } else {
        // Per-condition retraining reuses the train stage's conditioning:
        // same cycle seed stream, same fold structure.
        let master = match params.master_seed {
            Some(s) => s,
            None => upstream.get_u64("cli.master_seed").map_err(|_| {
                CliError::config("the azimuth-limit sweep retrains networks: pass --seed or run train first")
            })?,
        };
        let mut cycle = params.exp.train.clone();
        cycle.seed = seed::derive(master, &[TAG_CV_CYCLE]);
        let trains_per_cell = if params.set_keys.contains("trains_per_cell") {
            params.exp.trains_per_cell
        } else {
            upstream
                .get_u64("train.trains_per_cell")
                .map(|v| v as usize)
                .unwrap_or(params.exp.trains_per_cell)
        };
        let cv = CvConfig {
            trains_per_cell,
            target,
            angle_range_deg: target_range(&samples, target, params.exp.angle_margin_deg)?,
            train: cycle,
            standardize: true,
        };
        azimuth_limit_sweep(&samples, &params.exp.azimuth_limits_deg, &cv, params.exp.limit_threshold_deg)?
    };

    let mut man = upstream.clone();
    man.set("cli.stage", "evaluate");
    man.set("cli.upstream_hash", upstream.get("cli.config_hash").unwrap_or(""));
    man.set("eval.thresholds_deg", join_f64(thresholds));
    man.set("eval.train_sizes", join_usize(&sizes));
    man.set("eval.window_lengths_deg", join_f64(&params.exp.window_lengths_deg));
    man.set("eval.azimuth_limits_deg", join_f64(&params.exp.azimuth_limits_deg));
    man.set("eval.limit_threshold_deg", fmt_f64(params.exp.limit_threshold_deg));
    man.set("eval.mw_window_deg", fmt_f64(mw.window_length_deg));
    man.set("eval.mw_step_deg", fmt_f64(mw.step_deg));
    man.set("eval.mw_levels", mw.levels);
    let hash = stamp_hash(&mut man);

    save_table(out, "eval_single_pulse.csv", &reports_csv(&single, &hash))?;
    save_table(
        out,
        "eval_per_angle.csv",
        &per_angle_csv(&single[0], &format!("{}_deg", target.label()), &hash),
    )?;
    if !sweep.is_empty() {
        save_table(out, "eval_pulse_train_sweep.csv", &reports_csv(&sweep, &hash))?;
    }
    if !window_sweep.is_empty() {
        save_table(out, "eval_window_sweep.csv", &reports_csv(&window_sweep, &hash))?;
    }
    if !limit_sweep.is_empty() {
        save_table(out, "eval_azimuth_limit_sweep.csv", &reports_csv(&limit_sweep, &hash))?;
    }

    if let Some(svg) = train_size_svg(&single, &sweep, thresholds)? {
        save_svg(&out.join("accuracy_vs_train_size.svg"), &hash, &svg)?;
    }
    if let Some(svg) = limit_svg(&limit_sweep)? {
        save_svg(&out.join("ratio_vs_limit.svg"), &hash, &svg)?;
    }
    let mean_pts: Vec<(f64, f64)> =
        single[0].per_angle.iter().map(|s| (s.angle_deg, s.mean_error_deg)).collect();
    let std_pts: Vec<(f64, f64)> =
        single[0].per_angle.iter().map(|s| (s.angle_deg, s.std_error_deg)).collect();
    if mean_pts.len() > 1 {
        let svg = svg_line_chart(
            "Single-pulse error by true angle",
            &format!("true {} (deg)", target.label()),
            "error (deg)",
            &[("mean error", mean_pts), ("error spread", std_pts)],
        )?;
        save_svg(&out.join("error_by_angle.svg"), &hash, &svg)?;
    }
    man.save(&out.join("evaluate.manifest"))?;

    let summary: Vec<String> = single
        .iter()
        .map(|r| format!("{:.4} within {}°", r.ratio, fmt_f64(r.threshold_deg)))
        .collect();
    println!("evaluate: single-pulse {} (config {hash})", summary.join(", "));
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(out: &Path, params: &RunParams, kv: &KvFile, preset: PresetArg) -> Result<(), CliError> {
    let master = params.require_seed()?;
    let mut exp = params.exp.clone();
    exp.master_seed = master;
    let preset_name = match preset {
        PresetArg::Parallel => "parallel-2.1",
        PresetArg::Orthogonal => "orthogonal-2.2",
        PresetArg::Robustness => "robustness",
    };

    match preset {
        PresetArg::Parallel => {
            println!("report: running the parallel protocol (cross-validated, takes a minute or two)");
            let outcome = run_parallel_experiment(&exp)?;
            // The library already stamped this hash into every table.
            let hash = config_hash(&outcome.manifest);
            for (name, table) in &outcome.tables {
                save_table(out, &format!("report_{name}.csv"), table)?;
            }
            if let Some(svg) = train_size_svg(&outcome.single_pulse, &outcome.train_sweep, &exp.thresholds_deg)? {
                save_svg(&out.join("accuracy_vs_train_size.svg"), &hash, &svg)?;
            }

            let mut man = outcome.manifest.clone();

            // The azimuth-limit ladder is a separate acquisition (a wide
            // fan at reduced budget); skip it only when the config asked
            // for no limits at all.
            let skip_ladder =
                params.set_keys.contains("eval.azimuth_limits_deg") && exp.azimuth_limits_deg.is_empty();
            if !skip_ladder {
                println!("report: running the azimuth-limit ladder (one network per condition)");
                let mut ladder = RunParams::for_limit_ladder()?;
                ladder.apply_config(kv)?;
                let mut lexp = ladder.exp;
                lexp.master_seed = master;
                let lout = run_parallel_experiment(&lexp)?;
                let lhash = config_hash(&lout.manifest);
                if let Some((_, table)) = lout.tables.iter().find(|(n, _)| n == "azimuth_limit_sweep") {
                    save_table(out, "report_azimuth_limit_sweep.csv", table)?;
                }
                if let Some(svg) = limit_svg(&lout.limit_sweep)? {
                    save_svg(&out.join("ratio_vs_limit.svg"), &lhash, &svg)?;
                }
                let mut lman = lout.manifest.clone();
                lman.set("cli.stage", "report-limit-ladder");
                lman.set("cli.preset", preset_name);
                lman.set("cli.master_seed", master);
                lman.set("cli.config_hash", &lhash);
                lman.save(&out.join("report_limit.manifest"))?;
                man.set("ladder.config_hash", &lhash);
            }

            man.set("cli.stage", "report");
            man.set("cli.preset", preset_name);
            man.set("cli.master_seed", master);
            man.set("cli.config_hash", &hash);
            man.save(&out.join("report.manifest"))?;

            let summary: Vec<String> = outcome
                .single_pulse
                .iter()
                .map(|r| format!("{:.4} within {}°", r.ratio, fmt_f64(r.threshold_deg)))
                .collect();
            println!(
                "report: {} tables; single-pulse {} (config {hash})",
                outcome.tables.len(),
                summary.join(", ")
            );
        }
        PresetArg::Orthogonal | PresetArg::Robustness => {
            println!("report: running the orthogonal protocol (two networks, takes a minute)");
            let outcome = run_orthogonal_experiment(&exp)?;
            let hash = config_hash(&outcome.manifest);
            for (name, table) in &outcome.tables {
                save_table(out, &format!("report_{name}.csv"), table)?;
            }
            let mut labels = vec!["single pulse", "fused trains"];
            let mut series_pts = vec![outcome.single_cdf.clone(), outcome.fused_cdf.clone()];
            if let Some(cdf) = &outcome.robustness_cdf {
                labels.push("random scenes");
                series_pts.push(cdf.clone());
            }
            let series: Vec<(&str, Vec<(f64, f64)>)> =
                labels.into_iter().zip(series_pts).collect();
            let svg = svg_line_chart(
                "Joint error CDF",
                "threshold (deg)",
                "fraction with both errors within",
                &series,
            )?;
            save_svg(&out.join("joint_cdf.svg"), &hash, &svg)?;

            let mut man = outcome.manifest.clone();
            man.set("cli.stage", "report");
            man.set("cli.preset", preset_name);
            man.set("cli.master_seed", master);
            man.set("cli.config_hash", &hash);
            man.save(&out.join("report.manifest"))?;

            let fused_at = |t: f64| {
                outcome
                    .fused_cdf
                    .iter()
                    .find(|(thr, _)| *thr == t)
                    .map(|(_, r)| format!("{r:.4}"))
                    .unwrap_or_else(|| "-".to_string())
            };
            println!(
                "report: {} tables; fused joint CDF {} at 3°, {} at 6° (config {hash})",
                outcome.tables.len(),
                fused_at(3.0),
                fused_at(6.0)
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// entry
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::config("--out <dir> is required"))?;
    if !out.is_dir() {
        return Err(CliError::config(format!(
            "output directory `{}` does not exist",
            out.display()
        )));
    }

    let mut params = RunParams::new(cli.preset)?;
    let kv = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::config(format!("config file `{}` not found", path.display())));
            }
            KvFile::load(path)?
        }
        None => KvFile::new(),
    };
    params.apply_config(&kv)?;
    if cli.seed.is_some() {
        params.master_seed = cli.seed;
    }

    match cli.command {
        Command::Beam => cmd_beam(out, &params),
        Command::Simulate => cmd_simulate(out, &mut params),
        Command::Extract => cmd_extract(out, &params),
        Command::Train => cmd_train(out, &params),
        Command::Evaluate => cmd_evaluate(out, &params),
        Command::Report => cmd_report(out, &params, &kv, cli.preset),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvFile {
        KvFile::parse(text).unwrap()
    }

    fn params(preset: PresetArg) -> RunParams {
        RunParams::new(preset).unwrap()
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut p = params(PresetArg::Parallel);
        let err = p.apply_config(&kv("grid.az_minn = 3")).unwrap_err();
        assert_eq!(err.code, CODE_CONFIG);
        assert!(err.message.contains("grid.az_minn"), "message names the key: {}", err.message);

        let mut p = params(PresetArg::Parallel);
        let err = p.apply_config(&kv("beam.main_widht_deg = 9")).unwrap_err();
        assert_eq!(err.code, CODE_CONFIG, "misspelled beam keys must not silently default");
    }

    #[test]
    fn bad_values_name_key_and_value() {
        let mut p = params(PresetArg::Parallel);
        let err = p.apply_config(&kv("pulses_per_cell = many")).unwrap_err();
        assert_eq!(err.code, CODE_CONFIG);
        assert!(err.message.contains("pulses_per_cell") && err.message.contains("many"));
    }

    #[test]
    fn beam_overrides_keep_the_presets_other_fields() {
        // The orthogonal preset re-centers the scan map; one unrelated beam
        // key must not reset that to the library default.
        let mut p = params(PresetArg::Orthogonal);
        assert_eq!(p.exp.sim.beam.scan_intercept_deg, 60.0);
        p.apply_config(&kv("beam.main_gain = 0.9")).unwrap();
        assert_eq!(p.exp.sim.beam.main_gain, 0.9);
        assert_eq!(p.exp.sim.beam.scan_intercept_deg, 60.0);
    }

    #[test]
    fn grid_keys_rebuild_the_direction_list() {
        let mut p = params(PresetArg::Parallel);
        p.apply_config(&kv("grid.az_min = -7\ngrid.az_max = 7\ngrid.az_step = 7")).unwrap();
        // 3 azimuths, preset elevations 20..55 step 5 = 8 rows.
        assert_eq!(p.exp.grid.len(), 24);
        assert!(p.exp.grid.iter().all(|d| d.azimuth_deg.abs() <= 7.0));
    }

    #[test]
    fn empty_list_values_turn_sweeps_off() {
        let mut p = params(PresetArg::Parallel);
        p.apply_config(&kv("eval.train_sizes = 2;4\neval.window_lengths_deg =")).unwrap();
        assert_eq!(p.exp.train_sizes, vec![2, 4]);
        assert!(p.exp.window_lengths_deg.is_empty());
    }

    #[test]
    fn robustness_keys_toggle_the_probe() {
        let mut p = params(PresetArg::Orthogonal);
        assert!(p.exp.robustness.is_none());
        p.apply_config(&kv("robust.scenes = 12")).unwrap();
        assert_eq!(p.exp.robustness.as_ref().unwrap().scenes, 12);

        let mut p = params(PresetArg::Robustness);
        assert!(p.exp.robustness.is_some());
        p.apply_config(&kv("robust.scenes = 0")).unwrap();
        assert!(p.exp.robustness.is_none());
    }

    #[test]
    fn placements_parse_as_range_and_offsets() {
        let mut p = params(PresetArg::Parallel);
        p.apply_config(&kv("sites.placements = 1.2/0/0;1.5/3/-2")).unwrap();
        assert_eq!(p.exp.sites.len(), 2);
        assert_eq!(p.exp.sites[1].range_m, 1.5);
        assert_eq!(p.exp.sites[1].azimuth_offset_deg, 3.0);
        assert_eq!(p.exp.sites[1].elevation_offset_deg, -2.0);
    }

    #[test]
    fn noise_accepts_off() {
        let mut p = params(PresetArg::Parallel);
        p.apply_config(&kv("noise.snr_db = off")).unwrap();
        assert!(p.exp.sim.noise.snr_db_at_boresight.is_none());
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::from(Error::Divergence { epoch: 3 }).code, CODE_DIVERGENCE);
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).code, CODE_CONFIG);
        assert_eq!(CliError::from(Error::EmptyRange).code, CODE_CONFIG);
        assert_eq!(CliError::from(Error::NoSignal).code, CODE_NUMERIC);
        assert_eq!(CliError::from(Error::LobeTruncated).code, CODE_NUMERIC);
        assert_eq!(CliError::from(Error::SingularFit).code, CODE_NUMERIC);
    }

    #[test]
    fn manifest_hash_is_stable_across_restamps() {
        let mut a = KvFile::new();
        a.set("x", 1);
        let first = stamp_hash(&mut a);
        let second = stamp_hash(&mut a);
        assert_eq!(first, second, "the stamp itself must not feed the digest");
    }
}

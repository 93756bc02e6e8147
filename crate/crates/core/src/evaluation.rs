//! Cross-validation and accuracy reporting over simulated echo datasets.
//!
//! The workflow mirrors the measurement protocol end to end: extract a
//! feature vector from every recorded pulse, split each (site, direction)
//! cell's pulses into consecutive trains, run tenfold cross-validation
//! (train on nine trains per cell, test on the held-out one), pool the
//! out-of-fold predictions, and score them — singly, fused into pulse
//! trains, under azimuth-limit filters on the training region, or as joint
//! azimuth/elevation error CDFs. Two orchestrators bundle the common
//! experiment shapes: `run_parallel_experiment` (one elevation network) and
//! `run_orthogonal_experiment` (an azimuth and an elevation network reading
//! the same features, plus an optional random-scene robustness probe).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::decision::{moving_window_estimate, MovingWindowConfig};
use crate::echo::{
    generate_dataset, synthesize_echo, ChirpParams, Dataset, RecordTruth, Scene,
    SimulationConfig, SitePlacement,
};
use crate::error::{Error, Result};
use crate::estimator::{init_network, predict, train, NetworkParams, TrainConfig, TrainReport};
use crate::features::{extract_features, FeatureConfig, FeatureVector, ZScore};
use crate::geometry::{Direction, PinnaMode};
use crate::io::{config_hash, fmt_f64, CsvTable, KvFile};
use crate::seed;

/// One extracted pulse: the ground truth it was recorded at plus its
/// conditioned feature vector. The tuple shape matches the feature CSV
/// round-trip helpers.
pub type Sample = (RecordTruth, FeatureVector);

// Seed-derivation tags, so every consumer of the master seed draws from its
// own independent stream.
const TAG_NOISE: u64 = 1;
const TAG_CV_INIT: u64 = 2;
const TAG_CV_SHUFFLE: u64 = 3;
const TAG_LIMIT: u64 = 4;
const TAG_FINAL: u64 = 5;
const TAG_ROBUST: u64 = 6;

// ---------------------------------------------------------------------------
// batch feature extraction
// ---------------------------------------------------------------------------

/// Extracts features from every record, in parallel, preserving record
/// order. Any per-record failure aborts the batch.
pub fn extract_dataset(
    dataset: &Dataset,
    chirp: &ChirpParams,
    cfg: &FeatureConfig,
) -> Result<Vec<Sample>> {
    dataset
        .records
        .par_iter()
        .map(|rec| Ok((rec.truth, extract_features(rec, chirp, cfg)?)))
        .collect()
}

// ---------------------------------------------------------------------------
// fold plans
// ---------------------------------------------------------------------------

/// Which angle a network learns from the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Azimuth,
    Elevation,
}

impl Target {
    pub fn of(&self, truth: &RecordTruth) -> f64 {
        match self {
            Target::Azimuth => truth.direction.azimuth_deg,
            Target::Elevation => truth.direction.elevation_deg,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Target::Azimuth => "azimuth",
            Target::Elevation => "elevation",
        }
    }
}

#[derive(Debug, Clone)]
struct CellTrains {
    /// Sample indices, grouped into consecutive trains in pulse order.
    trains: Vec<Vec<usize>>,
}

/// Per-cell partition of pulses into consecutive trains; rotation `r` of
/// the cross-validation cycle holds out train `r` of every cell and trains
/// on the rest.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    trains_per_cell: usize,
    cells: Vec<CellTrains>,
}

impl FoldPlan {
    /// Number of train/test rotations (= trains per cell).
    pub fn rotations(&self) -> usize {
        self.trains_per_cell
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Sample indices held out in rotation `r`: train `r` of every cell.
    pub fn test_indices(&self, rotation: usize) -> Vec<usize> {
        self.cells.iter().flat_map(|c| c.trains[rotation].iter().copied()).collect()
    }

    /// Sample indices trained on in rotation `r`: every other train.
    pub fn train_indices(&self, rotation: usize) -> Vec<usize> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.trains
                    .iter()
                    .enumerate()
                    .filter(move |(t, _)| *t != rotation)
                    .flat_map(|(_, idx)| idx.iter().copied())
            })
            .collect()
    }
}

/// Groups samples into (site, direction) cells, orders each cell's pulses,
/// and chunks them into `trains_per_cell` consecutive trains. Every cell's
/// pulse count must divide evenly; 200 pulses make 10 trains of 20.
pub fn make_folds(samples: &[Sample], trains_per_cell: usize) -> Result<FoldPlan> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if trains_per_cell == 0 {
        return Err(Error::InvalidConfig("trains_per_cell must be at least 1".into()));
    }
    let mut cells: BTreeMap<(usize, u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, (truth, _)) in samples.iter().enumerate() {
        cells.entry(cell_key(truth)).or_default().push(i);
    }
    let mut keyed: Vec<(usize, f64, f64, Vec<usize>)> = cells
        .into_values()
        .map(|idx| {
            let t = &samples[idx[0]].0;
            (t.site, t.direction.azimuth_deg, t.direction.elevation_deg, idx)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
    });
    let mut plan = Vec::with_capacity(keyed.len());
    for (_, _, _, mut idx) in keyed {
        idx.sort_by_key(|&i| samples[i].0.pulse);
        if idx.len() % trains_per_cell != 0 {
            return Err(Error::IndivisiblePulses { pulses: idx.len(), trains: trains_per_cell });
        }
        let per_train = idx.len() / trains_per_cell;
        let trains = idx.chunks(per_train).map(|c| c.to_vec()).collect();
        plan.push(CellTrains { trains });
    }
    Ok(FoldPlan { trains_per_cell, cells: plan })
}

fn cell_key(truth: &RecordTruth) -> (usize, u64, u64) {
    (
        truth.site,
        truth.direction.azimuth_deg.to_bits(),
        truth.direction.elevation_deg.to_bits(),
    )
}

// ---------------------------------------------------------------------------
// cross-validation
// ---------------------------------------------------------------------------

/// Knobs for one cross-validation cycle. `train.seed` acts as the cycle's
/// master seed: each rotation derives its own initialization and shuffle
/// streams from it.
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub trains_per_cell: usize,
    pub target: Target,
    /// Output range the network squashes into; must cover every target.
    pub angle_range_deg: (f64, f64),
    pub train: TrainConfig,
    /// Standardize features per rotation, fitted on that rotation's
    /// training rows only.
    pub standardize: bool,
}

/// Out-of-fold predictions from one cross-validation cycle, aligned with
/// the input samples, plus each rotation's training diagnostics.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub predictions: Vec<f64>,
    pub reports: Vec<TrainReport>,
}

/// Runs the tenfold (or `trains_per_cell`-fold) cycle: per rotation, fits a
/// fresh network on the training trains and predicts the held-out one.
/// Every sample is predicted exactly once, by a network that never saw it.
pub fn cross_validate(samples: &[Sample], cfg: &CvConfig) -> Result<CvOutcome> {
    let plan = make_folds(samples, cfg.trains_per_cell)?;
    let master = cfg.train.seed;
    let rotations: Result<Vec<(Vec<(usize, f64)>, TrainReport)>> = (0..plan.rotations())
        .into_par_iter()
        .map(|r| {
            let train_idx = plan.train_indices(r);
            let test_idx = plan.test_indices(r);
            // Cross-validation hygiene: the held-out pulses must be invisible
            // to this rotation's training set.
            let mut in_train = vec![false; samples.len()];
            for &i in &train_idx {
                in_train[i] = true;
            }
            for &i in &test_idx {
                assert!(!in_train[i], "sample {i} appears in both folds of rotation {r}");
            }
            let scaler = if cfg.standardize {
                let rows: Vec<FeatureVector> =
                    train_idx.iter().map(|&i| samples[i].1.clone()).collect();
                Some(ZScore::fit(&rows)?)
            } else {
                None
            };
            let conditioned = |i: usize| -> Result<Vec<f64>> {
                Ok(match &scaler {
                    Some(z) => z.apply(&samples[i].1)?.values,
                    None => samples[i].1.values.clone(),
                })
            };
            let mut pairs = Vec::with_capacity(train_idx.len());
            for &i in &train_idx {
                pairs.push((conditioned(i)?, cfg.target.of(&samples[i].0)));
            }
            let start = init_network(
                seed::derive(master, &[TAG_CV_INIT, r as u64]),
                cfg.angle_range_deg,
            )?;
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed::derive(master, &[TAG_CV_SHUFFLE, r as u64]);
            let (net, report) = train(&start, &pairs, &tcfg)?;
            let mut preds = Vec::with_capacity(test_idx.len());
            for &i in &test_idx {
                preds.push((i, predict(&net, &conditioned(i)?)?));
            }
            Ok((preds, report))
        })
        .collect();
    let rotations = rotations?;
    let mut predictions = vec![f64::NAN; samples.len()];
    let mut reports = Vec::with_capacity(plan.rotations());
    for (preds, report) in rotations {
        for (i, p) in preds {
            assert!(predictions[i].is_nan(), "sample {i} predicted twice");
            predictions[i] = p;
        }
        reports.push(report);
    }
    assert!(
        predictions.iter().all(|p| !p.is_nan()),
        "some samples were never held out"
    );
    Ok(CvOutcome { predictions, reports })
}

/// The tightest angle range covering every target, padded by `margin_deg`
/// on both sides so the squashing output never needs to saturate.
pub fn target_range(samples: &[Sample], target: Target, margin_deg: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(margin_deg >= 0.0) {
        return Err(Error::InvalidConfig(format!("margin {margin_deg} must be nonnegative")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (truth, _) in samples {
        let v = target.of(truth);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo - margin_deg, hi + margin_deg.max(f64::MIN_POSITIVE)))
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Fraction of estimates within `eps_deg` of the truth.
pub fn accuracy_within(predictions: &[f64], truths: &[f64], eps_deg: f64) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: truths.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(eps_deg >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold {eps_deg} must be nonnegative")));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() <= eps_deg)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Signed-error statistics for one true angle (mean ± one standard
/// deviation convention).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleErrorStat {
    pub angle_deg: f64,
    pub mean_error_deg: f64,
    pub std_error_deg: f64,
    pub count: usize,
}

/// One scored condition: which filter/fusion produced it, the fraction of
/// estimates within the threshold, and per-true-angle error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub azimuth_limit_deg: Option<f64>,
    pub train_size: Option<usize>,
    pub window_length_deg: Option<f64>,
    pub threshold_deg: f64,
    pub ratio: f64,
    pub samples: usize,
    pub per_angle: Vec<AngleErrorStat>,
}

/// Groups signed errors by their exact true angle and reports mean/std
/// (population convention) per angle, in ascending angle order.
fn per_angle_stats(pairs: &[(f64, f64)]) -> Vec<AngleErrorStat> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(angle, err) in pairs {
        groups.entry(angle.to_bits()).or_default().push(err);
    }
    let mut stats: Vec<AngleErrorStat> = groups
        .into_iter()
        .map(|(bits, errs)| {
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
            AngleErrorStat {
                angle_deg: f64::from_bits(bits),
                mean_error_deg: mean,
                std_error_deg: var.sqrt(),
                count: errs.len(),
            }
        })
        .collect();
    stats.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
    stats
}

fn single_pulse_report(
    samples: &[Sample],
    predictions: &[f64],
    target: Target,
    threshold_deg: f64,
) -> Result<AccuracyReport> {
    let truths: Vec<f64> = samples.iter().map(|(t, _)| target.of(t)).collect();
    let ratio = accuracy_within(predictions, &truths, threshold_deg)?;
    let pairs: Vec<(f64, f64)> =
        truths.iter().zip(predictions).map(|(t, p)| (*t, p - t)).collect();
    Ok(AccuracyReport {
        azimuth_limit_deg: None,
        train_size: None,
        window_length_deg: None,
        threshold_deg,
        ratio,
        samples: samples.len(),
        per_angle: per_angle_stats(&pairs),
    })
}

// ---------------------------------------------------------------------------
// azimuth-limit sweep
// ---------------------------------------------------------------------------

/// For each azimuth limit, keeps only the cells with |azimuth| ≤ limit,
/// trains a fresh per-condition network under the full cross-validation
/// cycle, and reports the within-threshold ratio plus per-elevation error
/// statistics. The reference protocol sweeps limits 0°, ±10°, …, ±90°.
pub fn azimuth_limit_sweep(
    samples: &[Sample],
    limits_deg: &[f64],
    cv: &CvConfig,
    threshold_deg: f64,
) -> Result<Vec<AccuracyReport>> {
    if limits_deg.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(limits_deg.len());
    for (li, &limit) in limits_deg.iter().enumerate() {
        let subset: Vec<Sample> = samples
            .iter()
            .filter(|(t, _)| t.direction.azimuth_deg.abs() <= limit + 1e-9)
            .cloned()
            .collect();
        if subset.is_empty() {
            return Err(Error::EmptyFilter);
        }
        let mut sub_cfg = cv.clone();
        sub_cfg.train.seed = seed::derive(cv.train.seed, &[TAG_LIMIT, li as u64]);
        let outcome = cross_validate(&subset, &sub_cfg)?;
        let mut report =
            single_pulse_report(&subset, &outcome.predictions, cv.target, threshold_deg)?;
        report.azimuth_limit_deg = Some(limit);
        out.push(report);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pulse-train fusion sweeps
// ---------------------------------------------------------------------------

/// Chunks each cell's pooled out-of-fold predictions (in pulse order) into
/// consecutive trains of `size` and fuses each train with the moving-window
/// estimator. Only complete chunks count: P pooled pulses yield ⌊P/size⌋
/// trains. Returns (true angle, fused estimate) pairs.
fn fuse_cells(
    samples: &[Sample],
    predictions: &[f64],
    size: usize,
    target: Target,
    mw: &MovingWindowConfig,
) -> Result<Vec<(f64, f64)>> {
    if predictions.len() != samples.len() {
        return Err(Error::LengthMismatch { left: samples.len(), right: predictions.len() });
    }
    if size == 0 {
        return Err(Error::InvalidConfig("train size must be at least 1".into()));
    }
    let mut cells: BTreeMap<(usize, u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, (truth, _)) in samples.iter().enumerate() {
        cells.entry(cell_key(truth)).or_default().push(i);
    }
    let mut fused = Vec::new();
    for idx in cells.values() {
        let mut idx = idx.clone();
        idx.sort_by_key(|&i| samples[i].0.pulse);
        if size > idx.len() {
            return Err(Error::SizeExceedsPulses { size, available: idx.len() });
        }
        let angle = target.of(&samples[idx[0]].0);
        for chunk in idx.chunks_exact(size) {
            let values: Vec<f64> = chunk.iter().map(|&i| predictions[i]).collect();
            fused.push((angle, moving_window_estimate(&values, mw)?));
        }
    }
    Ok(fused)
}

/// Scores fused pulse trains of each requested size at each threshold.
/// Size 1 reduces to single-pulse accuracy (fusing one value is the
/// identity), and nested thresholds give nested ratios by construction.
pub fn pulse_train_sweep(
    samples: &[Sample],
    predictions: &[f64],
    sizes: &[usize],
    thresholds_deg: &[f64],
    target: Target,
    mw: &MovingWindowConfig,
) -> Result<Vec<AccuracyReport>> {
    if sizes.is_empty() || thresholds_deg.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(sizes.len() * thresholds_deg.len());
    for &size in sizes {
        let fused = fuse_cells(samples, predictions, size, target, mw)?;
        let (angles, estimates): (Vec<f64>, Vec<f64>) = fused.iter().copied().unzip();
        let pairs: Vec<(f64, f64)> =
            fused.iter().map(|&(angle, est)| (angle, est - angle)).collect();
        for &threshold in thresholds_deg {
            out.push(AccuracyReport {
                azimuth_limit_deg: None,
                train_size: Some(size),
                window_length_deg: None,
                threshold_deg: threshold,
                ratio: accuracy_within(&estimates, &angles, threshold)?,
                samples: fused.len(),
                per_angle: per_angle_stats(&pairs),
            });
        }
    }
    Ok(out)
}

/// Repeats the pulse-train sweep for several level-1 window lengths,
/// tagging each report with the length that produced it.
pub fn window_length_sweep(
    samples: &[Sample],
    predictions: &[f64],
    window_lengths_deg: &[f64],
    sizes: &[usize],
    thresholds_deg: &[f64],
    target: Target,
    base: &MovingWindowConfig,
) -> Result<Vec<AccuracyReport>> {
    if window_lengths_deg.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::new();
    for &length in window_lengths_deg {
        let mw = MovingWindowConfig { window_length_deg: length, ..*base };
        for mut report in pulse_train_sweep(samples, predictions, sizes, thresholds_deg, target, &mw)? {
            report.window_length_deg = Some(length);
            out.push(report);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// joint error CDF
// ---------------------------------------------------------------------------

/// For each threshold t, the fraction of paired estimates with BOTH
/// |azimuth error| ≤ t and |elevation error| ≤ t. Non-decreasing when the
/// thresholds ascend.
pub fn joint_error_cdf(
    az_errors: &[f64],
    el_errors: &[f64],
    thresholds_deg: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if az_errors.len() != el_errors.len() {
        return Err(Error::LengthMismatch { left: az_errors.len(), right: el_errors.len() });
    }
    if az_errors.is_empty() || thresholds_deg.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = az_errors.len() as f64;
    Ok(thresholds_deg
        .iter()
        .map(|&t| {
            let hits = az_errors
                .iter()
                .zip(el_errors)
                .filter(|(a, e)| a.abs() <= t && e.abs() <= t)
                .count();
            (t, hits as f64 / n)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// experiment orchestration
// ---------------------------------------------------------------------------

/// Random test scenes for the robustness probe: uniform draws over the
/// azimuth/elevation box and range interval, disjoint from the training
/// lattice (continuous draws never land on grid points).
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub scenes: usize,
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub range_m: (f64, f64),
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            scenes: 50,
            azimuth_deg: (-28.0, 28.0),
            elevation_deg: (12.0, 68.0),
            range_m: (1.0, 2.0),
        }
    }
}

/// Draws the robustness scenes deterministically from `seed`.
pub fn robustness_scenes(
    cfg: &RobustnessConfig,
    target_strength: f64,
    seed_value: u64,
) -> Result<Vec<Scene>> {
    use rand::{Rng, SeedableRng};
    if cfg.scenes == 0 {
        return Err(Error::EmptyInput);
    }
    for (label, (lo, hi)) in [
        ("azimuth", cfg.azimuth_deg),
        ("elevation", cfg.elevation_deg),
        ("range", cfg.range_m),
    ] {
        if !(lo < hi) {
            return Err(Error::InvalidConfig(format!("{label} bounds [{lo}, {hi}] not ordered")));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_value);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    for _ in 0..cfg.scenes {
        let az = rng.gen_range(cfg.azimuth_deg.0..cfg.azimuth_deg.1);
        let el = rng.gen_range(cfg.elevation_deg.0..cfg.elevation_deg.1);
        let range_m = rng.gen_range(cfg.range_m.0..cfg.range_m.1);
        scenes.push(Scene {
            target_direction: Direction::new(az, el)?,
            range_m,
            target_strength,
        });
    }
    Ok(scenes)
}

/// Everything one end-to-end experiment needs. `master_seed` drives noise
/// synthesis, network initialization, and shuffling (the seeds embedded in
/// `sim.noise` and `train` are overwritten with derived streams), so two
/// runs of an equal config are bit-identical.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: Vec<Direction>,
    pub sites: Vec<SitePlacement>,
    pub pulses_per_cell: usize,
    pub sim: SimulationConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub trains_per_cell: usize,
    pub mw: MovingWindowConfig,
    pub train_sizes: Vec<usize>,
    pub thresholds_deg: Vec<f64>,
    /// Azimuth-limit sweep conditions; empty skips the sweep.
    pub azimuth_limits_deg: Vec<f64>,
    /// Threshold the limit sweep reports (±5° in the reference protocol).
    pub limit_threshold_deg: f64,
    /// Level-1 window lengths for the fusion sweep; empty skips it.
    pub window_lengths_deg: Vec<f64>,
    /// Train size for the orthogonal joint CDF.
    pub fused_train_size: usize,
    /// Padding around the target range for the network's output squash.
    pub angle_margin_deg: f64,
    pub robustness: Option<RobustnessConfig>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    fn manifest(&self, dataset: &Dataset, mode: &str) -> KvFile {
        let mut kv = dataset.manifest.clone();
        kv.set("eval.mode", mode);
        kv.set("eval.master_seed", self.master_seed);
        kv.set("eval.trains_per_cell", self.trains_per_cell);
        kv.set("eval.epochs", self.train.epochs);
        kv.set("eval.learning_rate", fmt_f64(self.train.learning_rate));
        kv.set("eval.batch_size", self.train.batch_size);
        kv.set("eval.angle_margin_deg", fmt_f64(self.angle_margin_deg));
        kv.set("eval.mw_window_deg", fmt_f64(self.mw.window_length_deg));
        kv.set("eval.mw_step_deg", fmt_f64(self.mw.step_deg));
        kv.set("eval.mw_levels", self.mw.levels);
        kv.set("eval.fused_train_size", self.fused_train_size);
        kv.set("eval.limit_threshold_deg", fmt_f64(self.limit_threshold_deg));
        kv.set("eval.train_sizes", join(self.train_sizes.iter()));
        kv.set("eval.thresholds_deg", join(self.thresholds_deg.iter().map(|t| fmt_f64(*t))));
        kv.set("eval.azimuth_limits_deg", join(self.azimuth_limits_deg.iter().map(|t| fmt_f64(*t))));
        kv.set("eval.window_lengths_deg", join(self.window_lengths_deg.iter().map(|t| fmt_f64(*t))));
        kv.set("eval.feature_normalization", self.features.normalization.tag());
        kv.set("eval.feature_halfwidth_bins", self.features.halfwidth_bins);
        if let Some(r) = &self.robustness {
            kv.set("eval.robustness_scenes", r.scenes);
            kv.set("eval.robustness_azimuth_deg", format!("{}..{}", fmt_f64(r.azimuth_deg.0), fmt_f64(r.azimuth_deg.1)));
            kv.set("eval.robustness_elevation_deg", format!("{}..{}", fmt_f64(r.elevation_deg.0), fmt_f64(r.elevation_deg.1)));
            kv.set("eval.robustness_range_m", format!("{}..{}", fmt_f64(r.range_m.0), fmt_f64(r.range_m.1)));
        }
        kv
    }

    fn cv_config(&self, samples: &[Sample], target: Target, tag: u64) -> Result<CvConfig> {
        let mut train = self.train.clone();
        train.seed = seed::derive(self.master_seed, &[tag]);
        Ok(CvConfig {
            trains_per_cell: self.trains_per_cell,
            target,
            angle_range_deg: target_range(samples, target, self.angle_margin_deg)?,
            train,
            standardize: true,
        })
    }

    fn generate(&self) -> Result<Dataset> {
        let mut sim = self.sim.clone();
        sim.noise.seed = seed::derive(self.master_seed, &[TAG_NOISE]);
        generate_dataset(&self.grid, &self.sites, self.pulses_per_cell, &sim)
    }
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Results of the parallel-pinnae protocol: one elevation network under
/// cross-validation, scored singly and fused.
#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    /// Single-pulse accuracy, one report per requested threshold.
    pub single_pulse: Vec<AccuracyReport>,
    /// Fused accuracy over every (train size, threshold) pair.
    pub train_sweep: Vec<AccuracyReport>,
    /// Fused accuracy per level-1 window length (empty if not requested).
    pub window_sweep: Vec<AccuracyReport>,
    /// Per-condition accuracy per azimuth limit (empty if not requested).
    pub limit_sweep: Vec<AccuracyReport>,
    pub manifest: KvFile,
    pub tables: Vec<(String, CsvTable)>,
}

/// Runs generate → extract → cross-validate → fuse → score for the
/// parallel-pinnae device and bundles the standard CSV tables.
pub fn run_parallel_experiment(cfg: &ExperimentConfig) -> Result<ParallelOutcome> {
    if cfg.sim.device.mode != PinnaMode::Parallel {
        return Err(Error::InvalidConfig("parallel experiment needs a parallel device".into()));
    }
    let dataset = cfg.generate()?;
    let samples = extract_dataset(&dataset, &cfg.sim.chirp, &cfg.features)?;
    let cv = cfg.cv_config(&samples, Target::Elevation, TAG_CV_INIT)?;
    let outcome = cross_validate(&samples, &cv)?;

    let mut single_pulse = Vec::with_capacity(cfg.thresholds_deg.len());
    for &t in &cfg.thresholds_deg {
        single_pulse.push(single_pulse_report(&samples, &outcome.predictions, cv.target, t)?);
    }
    let train_sweep = pulse_train_sweep(
        &samples,
        &outcome.predictions,
        &cfg.train_sizes,
        &cfg.thresholds_deg,
        cv.target,
        &cfg.mw,
    )?;
    let window_sweep = if cfg.window_lengths_deg.is_empty() {
        Vec::new()
    } else {
        window_length_sweep(
            &samples,
            &outcome.predictions,
            &cfg.window_lengths_deg,
            &cfg.train_sizes,
            &cfg.thresholds_deg,
            cv.target,
            &cfg.mw,
        )?
    };
    let limit_sweep = if cfg.azimuth_limits_deg.is_empty() {
        Vec::new()
    } else {
        azimuth_limit_sweep(&samples, &cfg.azimuth_limits_deg, &cv, cfg.limit_threshold_deg)?
    };

    let manifest = cfg.manifest(&dataset, "parallel");
    let hash = config_hash(&manifest);
    let mut tables = vec![
        ("single_pulse".to_string(), reports_table(&single_pulse, &hash)),
        ("pulse_train_sweep".to_string(), reports_table(&train_sweep, &hash)),
        (
            "per_elevation".to_string(),
            per_angle_table(&single_pulse[0], "elevation_deg", &hash),
        ),
    ];
    if !window_sweep.is_empty() {
        tables.push(("window_sweep".to_string(), reports_table(&window_sweep, &hash)));
    }
    if !limit_sweep.is_empty() {
        tables.push(("azimuth_limit_sweep".to_string(), reports_table(&limit_sweep, &hash)));
    }
    Ok(ParallelOutcome { single_pulse, train_sweep, window_sweep, limit_sweep, manifest, tables })
}

/// Results of the orthogonal-pinnae protocol: an azimuth network and an
/// elevation network reading the same features, scored jointly.
#[derive(Debug, Clone)]
pub struct OrthogonalOutcome {
    pub azimuth_single: Vec<AccuracyReport>,
    pub elevation_single: Vec<AccuracyReport>,
    /// Joint |Δaz|,|Δel| ≤ t fraction per threshold, single pulses.
    pub single_cdf: Vec<(f64, f64)>,
    /// Same, after fusing `fused_train_size`-pulse trains per cell.
    pub fused_cdf: Vec<(f64, f64)>,
    /// Joint CDF over the random-scene probe, when requested.
    pub robustness_cdf: Option<Vec<(f64, f64)>>,
    pub manifest: KvFile,
    pub tables: Vec<(String, CsvTable)>,
}

/// Runs the two-network orthogonal protocol: cross-validated azimuth and
/// elevation estimates from the same 60-band features, joint CDFs over
/// single pulses and fused trains, and an optional robustness probe on
/// random off-grid scenes (networks retrained on the full grid dataset).
pub fn run_orthogonal_experiment(cfg: &ExperimentConfig) -> Result<OrthogonalOutcome> {
    if cfg.sim.device.mode != PinnaMode::Orthogonal {
        return Err(Error::InvalidConfig("orthogonal experiment needs an orthogonal device".into()));
    }
    let dataset = cfg.generate()?;
    let samples = extract_dataset(&dataset, &cfg.sim.chirp, &cfg.features)?;
    let az_cv = cfg.cv_config(&samples, Target::Azimuth, TAG_CV_INIT)?;
    let el_cv = cfg.cv_config(&samples, Target::Elevation, TAG_CV_SHUFFLE)?;
    let az_out = cross_validate(&samples, &az_cv)?;
    let el_out = cross_validate(&samples, &el_cv)?;

    let mut azimuth_single = Vec::with_capacity(cfg.thresholds_deg.len());
    let mut elevation_single = Vec::with_capacity(cfg.thresholds_deg.len());
    for &t in &cfg.thresholds_deg {
        azimuth_single.push(single_pulse_report(&samples, &az_out.predictions, Target::Azimuth, t)?);
        elevation_single.push(single_pulse_report(&samples, &el_out.predictions, Target::Elevation, t)?);
    }

    let az_errors: Vec<f64> = samples
        .iter()
        .zip(&az_out.predictions)
        .map(|((t, _), p)| p - Target::Azimuth.of(t))
        .collect();
    let el_errors: Vec<f64> = samples
        .iter()
        .zip(&el_out.predictions)
        .map(|((t, _), p)| p - Target::Elevation.of(t))
        .collect();
    let single_cdf = joint_error_cdf(&az_errors, &el_errors, &cfg.thresholds_deg)?;

    let az_fused = fuse_cells(&samples, &az_out.predictions, cfg.fused_train_size, Target::Azimuth, &cfg.mw)?;
    let el_fused = fuse_cells(&samples, &el_out.predictions, cfg.fused_train_size, Target::Elevation, &cfg.mw)?;
    let az_fused_err: Vec<f64> = az_fused.iter().map(|(a, e)| e - a).collect();
    let el_fused_err: Vec<f64> = el_fused.iter().map(|(a, e)| e - a).collect();
    let fused_cdf = joint_error_cdf(&az_fused_err, &el_fused_err, &cfg.thresholds_deg)?;

    let robustness_cdf = match &cfg.robustness {
        None => None,
        Some(rcfg) => Some(robustness_probe(cfg, rcfg, &samples, &az_cv, &el_cv)?),
    };

    let manifest = cfg.manifest(&dataset, "orthogonal");
    let hash = config_hash(&manifest);
    let mut cdf_table = CsvTable::new(&["threshold_deg", "single_pulse_ratio", "fused_ratio"]);
    cdf_table.comments.push(format!("config_hash = {hash}"));
    for ((t, single), (_, fused)) in single_cdf.iter().zip(&fused_cdf) {
        cdf_table.push_row(vec![fmt_f64(*t), fmt_f64(*single), fmt_f64(*fused)]);
    }
    let mut tables = vec![
        ("azimuth_accuracy".to_string(), reports_table(&azimuth_single, &hash)),
        ("elevation_accuracy".to_string(), reports_table(&elevation_single, &hash)),
        ("per_azimuth".to_string(), per_angle_table(&azimuth_single[0], "azimuth_deg", &hash)),
        ("per_elevation".to_string(), per_angle_table(&elevation_single[0], "elevation_deg", &hash)),
        ("joint_cdf".to_string(), cdf_table),
    ];
    if let Some(cdf) = &robustness_cdf {
        let mut t = CsvTable::new(&["threshold_deg", "joint_ratio"]);
        t.comments.push(format!("config_hash = {hash}"));
        for (thr, ratio) in cdf {
            t.push_row(vec![fmt_f64(*thr), fmt_f64(*ratio)]);
        }
        tables.push(("robustness_cdf".to_string(), t));
    }
    Ok(OrthogonalOutcome {
        azimuth_single,
        elevation_single,
        single_cdf,
        fused_cdf,
        robustness_cdf,
        manifest,
        tables,
    })
}

/// Trains final azimuth/elevation networks on the full grid dataset (same
/// conditioning as the CV cycle) and scores them on seeded random scenes.
fn robustness_probe(
    cfg: &ExperimentConfig,
    rcfg: &RobustnessConfig,
    samples: &[Sample],
    az_cv: &CvConfig,
    el_cv: &CvConfig,
) -> Result<Vec<(f64, f64)>> {
    let rows: Vec<FeatureVector> = samples.iter().map(|(_, f)| f.clone()).collect();
    let scaler = ZScore::fit(&rows)?;
    let fit_final = |cv: &CvConfig, tag: u64| -> Result<NetworkParams> {
        let mut pairs = Vec::with_capacity(samples.len());
        for (truth, fv) in samples {
            pairs.push((scaler.apply(fv)?.values, cv.target.of(truth)));
        }
        let start = init_network(
            seed::derive(cfg.master_seed, &[TAG_FINAL, tag]),
            cv.angle_range_deg,
        )?;
        let mut tcfg = cv.train.clone();
        tcfg.seed = seed::derive(cfg.master_seed, &[TAG_FINAL, tag, 1]);
        Ok(train(&start, &pairs, &tcfg)?.0)
    };
    let az_net = fit_final(az_cv, 0)?;
    let el_net = fit_final(el_cv, 1)?;

    let scenes = robustness_scenes(
        rcfg,
        cfg.sim.target_strength,
        seed::derive(cfg.master_seed, &[TAG_ROBUST]),
    )?;
    let mut sim = cfg.sim.clone();
    sim.noise.seed = seed::derive(cfg.master_seed, &[TAG_ROBUST, 1]);
    let errors: Result<Vec<(f64, f64)>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut noise = sim.noise;
            noise.seed = seed::derive(sim.noise.seed, &[i as u64]);
            let rec = synthesize_echo(&sim.chirp, scene, &sim.beam, &sim.device, &noise)?;
            let fv = extract_features(&rec, &sim.chirp, &cfg.features)?;
            let scaled = scaler.apply(&fv)?.values;
            let az_err = predict(&az_net, &scaled)? - scene.target_direction.azimuth_deg;
            let el_err = predict(&el_net, &scaled)? - scene.target_direction.elevation_deg;
            Ok((az_err, el_err))
        })
        .collect();
    let errors = errors?;
    let (az_errors, el_errors): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
    joint_error_cdf(&az_errors, &el_errors, &cfg.thresholds_deg)
}

// ---------------------------------------------------------------------------
// report tables
// ---------------------------------------------------------------------------

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn reports_table(reports: &[AccuracyReport], hash: &str) -> CsvTable {
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
            opt_f64(r.azimuth_limit_deg),
            r.train_size.map(|s| s.to_string()).unwrap_or_default(),
            opt_f64(r.window_length_deg),
            fmt_f64(r.threshold_deg),
            fmt_f64(r.ratio),
            r.samples.to_string(),
        ]);
    }
    table
}

fn per_angle_table(report: &AccuracyReport, angle_label: &str, hash: &str) -> CsvTable {
    let mut table =
        CsvTable::new(&[angle_label, "mean_error_deg", "std_error_deg", "count"]);
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

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

impl ExperimentConfig {
    /// Desk-scale parallel-pinnae protocol: 9 azimuth columns within ±30°
    /// by 8 elevations, 8 sites, 40 pulses per cell, tenfold
    /// cross-validation, fusion sizes 3–20.
    pub fn parallel_preset(master_seed: u64) -> Result<Self> {
        use crate::geometry::{grid_directions, DeviceConfig};
        // Azimuth columns stay inside the scanned sidelobe's azimuth window
        // (σ = 12°): beyond ~2σ the sidelobe is 20+ dB down and the band
        // profile carries no elevation cue at the default SNR, so sampling
        // there would only measure the noise floor. Elevations span the
        // scan map's 20°–60° sweep.
        let grid = grid_directions(-21.0, 21.0, 7.0, 20.0, 55.0, 5.0)?;
        let sim = SimulationConfig {
            chirp: ChirpParams::default(),
            beam: crate::beam::BeamModel::default(),
            device: DeviceConfig::parallel(0.0)?,
            noise: crate::echo::NoiseConfig::default(),
            target_strength: 1.0,
        };
        Ok(ExperimentConfig {
            grid,
            sites: crate::echo::default_sites(),
            pulses_per_cell: 40,
            sim,
            features: FeatureConfig {
                // Cells far off the scanned sidelobe sit below the energy
                // gate, and near boresight the gate triggers mid-chirp where
                // the sweep first clears the noise floor — matched alignment
                // is the only anchoring that works across the whole grid.
                segmentation: crate::features::Segmentation::RidgeAligned,
                fallback: crate::features::NoSignalFallback::RidgeSearch,
                ..FeatureConfig::default()
            },
            // A step five times the default converges the saturating output
            // stage fully within 500 epochs on grids this size; the default
            // rate plateaus a few percent short.
            train: TrainConfig { learning_rate: 0.05, ..TrainConfig::default() },
            trains_per_cell: 10,
            mw: MovingWindowConfig::default(),
            train_sizes: vec![3, 5, 10, 15, 20],
            thresholds_deg: vec![1.0, 3.0, 5.0],
            azimuth_limits_deg: Vec::new(),
            limit_threshold_deg: 5.0,
            window_lengths_deg: vec![10.0, 5.0, 2.0],
            fused_train_size: 10,
            angle_margin_deg: 5.0,
            robustness: None,
            master_seed,
        })
    }

    /// Azimuth-limit degradation protocol: a wide ±84° azimuth fan at a
    /// reduced elevation/site/pulse budget, swept over training limits
    /// 0°, ±10°, …, ±90° with a per-condition network each.
    pub fn azimuth_limit_preset(master_seed: u64) -> Result<Self> {
        use crate::geometry::grid_directions;
        let mut cfg = Self::parallel_preset(master_seed)?;
        // The fan reaches ±84° so every limit up to ±90° filters a larger
        // set than the one before. Beyond |az| ≈ 26° the sidelobe window
        // and the cos² transmitter leave no usable echo, so wide-limit
        // ratios measure how often a prior-collapsed estimate still lands
        // within tolerance; the elevation span stays compact (step 5°
        // around the scan-map center, like the parallel protocol) so that
        // regime degrades the ratio instead of zeroing it.
        cfg.grid = grid_directions(-84.0, 84.0, 7.0, 30.0, 45.0, 5.0)?;
        cfg.sites = crate::echo::default_sites().into_iter().take(4).collect();
        cfg.pulses_per_cell = 20;
        cfg.azimuth_limits_deg = (0..=9).map(|i| 10.0 * i as f64).collect();
        cfg.window_lengths_deg = Vec::new();
        Ok(cfg)
    }

    /// Desk-scale orthogonal-pinnae protocol: upright + rolled pinnae
    /// tilted 40° with the sidelobe sweeping local elevations ±20°, a 5×5
    /// direction grid, 4 sites, 40 pulses per cell, 10-pulse trains.
    pub fn orthogonal_preset(master_seed: u64) -> Result<Self> {
        use crate::geometry::{grid_directions, DeviceConfig};
        let mut cfg = Self::parallel_preset(master_seed)?;
        // The tilt-40° mount maps this grid to local angles within ~±21° on
        // both pinnae, so every cell sits inside the scan sweep (local ±20°)
        // and inside each pinna's sidelobe azimuth window. Corner cells of
        // the full protocol ranges (az ±28°, el 12°–68°) would land near
        // local 30° — outside both — and measure only noise.
        cfg.grid = grid_directions(-20.0, 20.0, 10.0, 20.0, 60.0, 10.0)?;
        cfg.sites = crate::echo::default_sites().into_iter().take(4).collect();
        cfg.sim.device = DeviceConfig::orthogonal(40.0)?;
        cfg.sim.beam.scan_intercept_deg = 60.0;
        cfg.thresholds_deg = (1..=10).map(f64::from).collect();
        cfg.window_lengths_deg = Vec::new();
        cfg.fused_train_size = 10;
        cfg.robustness = Some(RobustnessConfig::default());
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------

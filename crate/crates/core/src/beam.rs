//! Parametric pinna gain surface: a fixed Gaussian main lobe plus a weaker
//! Gaussian sidelobe whose elevation center sweeps linearly with frequency
//! across a scan band while its azimuth center stays put. This surface is
//! the simulator's ground truth — the angle-dependent spectral coloring that
//! the feature pipeline and estimator later try to invert.

use crate::farfield::LobeReport;
use crate::geometry::{angular_separation_deg, lattice_axis, Direction};
use crate::io::KvFile;
use crate::{Error, Result};

/// Gain model parameters. All angles are local-frame degrees, all gains
/// linear amplitude factors. The sidelobe's elevation center at frequency
/// `f` is the affine map `scan_intercept_deg + scan_slope_deg_per_hz * f`,
/// active only inside `scan_band_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamModel {
    pub main_center: Direction,
    /// Gaussian std of the main lobe (applied to angular distance).
    pub main_width_deg: f64,
    pub main_gain: f64,
    /// Gaussian stds of the sidelobe along elevation and azimuth.
    pub side_width_el_deg: f64,
    pub side_width_az_deg: f64,
    pub side_gain: f64,
    pub scan_band_hz: (f64, f64),
    pub scan_slope_deg_per_hz: f64,
    pub scan_intercept_deg: f64,
    /// The sidelobe's azimuth center, constant over frequency.
    pub side_azimuth_center_deg: f64,
}

impl Default for BeamModel {
    /// Calibration for the scaled-down device: main lobe at boresight with a
    /// 10-degree std (about 23.5 degrees between half-power points), and a
    /// 0.7-gain sidelobe that sweeps from elevation 60 at 10 kHz down to 20
    /// at 20 kHz.
    fn default() -> Self {
        BeamModel {
            main_center: Direction { azimuth_deg: 0.0, elevation_deg: 0.0 },
            main_width_deg: 10.0,
            main_gain: 1.0,
            side_width_el_deg: 6.0,
            side_width_az_deg: 12.0,
            side_gain: 0.7,
            scan_band_hz: (10_000.0, 20_000.0),
            scan_slope_deg_per_hz: -0.004,
            scan_intercept_deg: 100.0,
            side_azimuth_center_deg: 0.0,
        }
    }
}

impl BeamModel {
    /// Checks the model invariants: ordered scan band, positive widths and
    /// gains, nonzero slope, and a scan center that stays on the sphere
    /// across the band.
    pub fn validate(&self) -> Result<()> {
        let (f_lo, f_hi) = self.scan_band_hz;
        if !(f_lo > 0.0 && f_lo < f_hi) {
            return Err(Error::InvalidConfig(format!("scan band ({f_lo}, {f_hi}) must satisfy 0 < f_lo < f_hi")));
        }
        for (name, v) in [
            ("main_width_deg", self.main_width_deg),
            ("main_gain", self.main_gain),
            ("side_width_el_deg", self.side_width_el_deg),
            ("side_width_az_deg", self.side_width_az_deg),
            ("side_gain", self.side_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        if self.scan_slope_deg_per_hz == 0.0 {
            return Err(Error::InvalidConfig("scan slope must be nonzero".into()));
        }
        // The map is affine, so checking the band edges bounds the whole band.
        for f in [f_lo, f_hi] {
            let mu = self.scan_elevation_deg(f);
            if !(-90.0..=90.0).contains(&mu) {
                return Err(Error::InvalidConfig(format!(
                    "scan center {mu} deg at {f} Hz leaves [-90, 90]"
                )));
            }
        }
        Ok(())
    }

    /// Sidelobe elevation center at `frequency_hz` (defined for any
    /// frequency; only meaningful inside the scan band).
    pub fn scan_elevation_deg(&self, frequency_hz: f64) -> f64 {
        self.scan_intercept_deg + self.scan_slope_deg_per_hz * frequency_hz
    }

    /// Receive gain at one frequency toward one local-frame direction:
    /// main Gaussian everywhere plus, inside the scan band, the scanned
    /// sidelobe Gaussian (separable in elevation/azimuth offsets). Strictly
    /// positive: the main term never underflows to zero on the sphere.
    pub fn gain(&self, frequency_hz: f64, local: Direction) -> f64 {
        assert!(frequency_hz >= 0.0, "gain queried at negative frequency");
        let d_main = angular_separation_deg(local, self.main_center);
        let mut g = self.main_gain
            * (-d_main * d_main / (2.0 * self.main_width_deg * self.main_width_deg)).exp();
        let (f_lo, f_hi) = self.scan_band_hz;
        if (f_lo..=f_hi).contains(&frequency_hz) {
            let d_el = local.elevation_deg - self.scan_elevation_deg(frequency_hz);
            let d_az = local.azimuth_deg - self.side_azimuth_center_deg;
            g += self.side_gain
                * (-(d_el * d_el / (2.0 * self.side_width_el_deg * self.side_width_el_deg)
                    + d_az * d_az / (2.0 * self.side_width_az_deg * self.side_width_az_deg)))
                    .exp();
        }
        g
    }

    /// Gain sampled at `f_lo, f_lo + df, ...` toward a fixed direction —
    /// the spectral signature that makes elevations separable. Returns
    /// (frequency, gain) pairs.
    pub fn frequency_response(
        &self,
        local: Direction,
        band_hz: (f64, f64),
        df_hz: f64,
    ) -> Result<Vec<(f64, f64)>> {
        if band_hz.0 <= 0.0 {
            return Err(Error::InvalidConfig(format!("band start {} Hz must be positive", band_hz.0)));
        }
        let freqs = lattice_axis(band_hz.0, band_hz.1, df_hz)?;
        Ok(freqs.into_iter().map(|f| (f, self.gain(f, local))).collect())
    }

    /// Refits the scan map (slope and intercept) to a measured lobe track by
    /// least squares on side elevation vs frequency, adopting the track's
    /// frequency extent as the new scan band and its mean side azimuth as
    /// the azimuth center. All other parameters carry over from `self`.
    pub fn calibrate_from_track(&self, track: &[(f64, LobeReport)]) -> Result<TrackFit> {
        if track.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "calibration needs at least 2 track points, got {}",
                track.len()
            )));
        }
        let n = track.len() as f64;
        let f_mean = track.iter().map(|(f, _)| f).sum::<f64>() / n;
        let el_mean = track.iter().map(|(_, r)| r.side_direction.elevation_deg).sum::<f64>() / n;
        let mut sff = 0.0;
        let mut sfe = 0.0;
        for (f, r) in track {
            sff += (f - f_mean) * (f - f_mean);
            sfe += (f - f_mean) * (r.side_direction.elevation_deg - el_mean);
        }
        if sff <= f_mean.abs().max(1.0) * 1e-12 {
            return Err(Error::SingularFit);
        }
        let slope = sfe / sff;
        let intercept = el_mean - slope * f_mean;

        let mut residual_sq = 0.0;
        let mut f_lo = f64::INFINITY;
        let mut f_hi = f64::NEG_INFINITY;
        let mut az_sum = 0.0;
        for (f, r) in track {
            let residual = r.side_direction.elevation_deg - (intercept + slope * f);
            residual_sq += residual * residual;
            f_lo = f_lo.min(*f);
            f_hi = f_hi.max(*f);
            az_sum += r.side_direction.azimuth_deg;
        }
        let model = BeamModel {
            scan_slope_deg_per_hz: slope,
            scan_intercept_deg: intercept,
            scan_band_hz: (f_lo, f_hi),
            side_azimuth_center_deg: az_sum / n,
            ..self.clone()
        };
        model.validate()?;
        Ok(TrackFit { model, residual_rms_deg: (residual_sq / n).sqrt() })
    }

    // -- persistence as a flat key = value file --

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("beam.main_center_az_deg", self.main_center.azimuth_deg);
        kv.set("beam.main_center_el_deg", self.main_center.elevation_deg);
        kv.set("beam.main_width_deg", self.main_width_deg);
        kv.set("beam.main_gain", self.main_gain);
        kv.set("beam.side_width_el_deg", self.side_width_el_deg);
        kv.set("beam.side_width_az_deg", self.side_width_az_deg);
        kv.set("beam.side_gain", self.side_gain);
        kv.set("beam.scan_f_lo_hz", self.scan_band_hz.0);
        kv.set("beam.scan_f_hi_hz", self.scan_band_hz.1);
        kv.set("beam.scan_slope_deg_per_hz", self.scan_slope_deg_per_hz);
        kv.set("beam.scan_intercept_deg", self.scan_intercept_deg);
        kv.set("beam.side_azimuth_center_deg", self.side_azimuth_center_deg);
        kv
    }

    /// Reads a model from key = value pairs (keys as written by [`to_kv`]);
    /// missing keys fall back to the default calibration so configs only
    /// need to list overrides.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let base = BeamModel::default();
        let get = |key: &str, fallback: f64| -> Result<f64> {
            if kv.get(key).is_some() {
                kv.get_f64(key)
            } else {
                Ok(fallback)
            }
        };
        let model = BeamModel {
            main_center: Direction::new(
                get("beam.main_center_az_deg", base.main_center.azimuth_deg)?,
                get("beam.main_center_el_deg", base.main_center.elevation_deg)?,
            )?,
            main_width_deg: get("beam.main_width_deg", base.main_width_deg)?,
            main_gain: get("beam.main_gain", base.main_gain)?,
            side_width_el_deg: get("beam.side_width_el_deg", base.side_width_el_deg)?,
            side_width_az_deg: get("beam.side_width_az_deg", base.side_width_az_deg)?,
            side_gain: get("beam.side_gain", base.side_gain)?,
            scan_band_hz: (
                get("beam.scan_f_lo_hz", base.scan_band_hz.0)?,
                get("beam.scan_f_hi_hz", base.scan_band_hz.1)?,
            ),
            scan_slope_deg_per_hz: get("beam.scan_slope_deg_per_hz", base.scan_slope_deg_per_hz)?,
            scan_intercept_deg: get("beam.scan_intercept_deg", base.scan_intercept_deg)?,
            side_azimuth_center_deg: get(
                "beam.side_azimuth_center_deg",
                base.side_azimuth_center_deg,
            )?,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Result of [`BeamModel::calibrate_from_track`]: the refitted model and the
/// RMS of the elevation residuals around the fitted line.
#[derive(Debug, Clone)]
pub struct TrackFit {
    pub model: BeamModel,
    pub residual_rms_deg: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: expected {b}, got {a} (tol {tol})");
    }

    fn dir(az: f64, el: f64) -> Direction {
        Direction::new(az, el).unwrap()
    }

    /// A model whose main lobe is parked far from the scanned elevations, so
    /// the sidelobe dominates the region the scan sweeps through.
    fn sidelobe_dominant() -> BeamModel {
        BeamModel {
            main_center: dir(90.0, -60.0),
            ..BeamModel::default()
        }
    }

    // ---- defaults and validation ----

    #[test]
    fn default_model_is_valid_and_scans_60_down_to_20() {
        let m = BeamModel::default();
        m.validate().unwrap();
        assert_close(m.scan_elevation_deg(10_000.0), 60.0, 1e-12, "scan center at 10 kHz");
        assert_close(m.scan_elevation_deg(20_000.0), 20.0, 1e-12, "scan center at 20 kHz");
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let base = BeamModel::default();
        let cases = [
            BeamModel { scan_band_hz: (20_000.0, 10_000.0), ..base.clone() },
            BeamModel { main_width_deg: 0.0, ..base.clone() },
            BeamModel { side_gain: -0.5, ..base.clone() },
            BeamModel { scan_slope_deg_per_hz: 0.0, ..base.clone() },
            // Scan center runs off the sphere at the low band edge.
            BeamModel { scan_intercept_deg: 135.0, ..base.clone() },
        ];
        for (i, m) in cases.iter().enumerate() {
            assert!(m.validate().is_err(), "case {i} should fail validation");
        }
    }

    // ---- gain ----

    #[test]
    fn gain_at_scanned_center_is_side_gain_plus_main_tail() {
        let m = BeamModel::default();
        // At 15 kHz the sidelobe sits at elevation 40; the main lobe's tail
        // there is exp(-40^2 / 200) = 3.4e-4.
        let g = m.gain(15_000.0, dir(0.0, 40.0));
        assert!(g > m.side_gain, "sidelobe center gain must exceed side_gain");
        assert_close(g, m.side_gain, 4e-4, "gain at scanned center");
    }

    #[test]
    fn gain_is_mirror_symmetric_in_azimuth() {
        let m = BeamModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let az = rng.gen_range(0.0..90.0);
            let el = rng.gen_range(-30.0..=80.0);
            let f = rng.gen_range(5_000.0..25_000.0);
            assert_eq!(
                m.gain(f, dir(az, el)),
                m.gain(f, dir(-az, el)),
                "mirror symmetry at az {az}, el {el}, f {f}"
            );
        }
    }

    #[test]
    fn gain_is_positive_and_bounded_everywhere() {
        let m = BeamModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let local = dir(rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..=90.0));
            let f = rng.gen_range(1_000.0..45_000.0);
            let g = m.gain(f, local);
            assert!(g > 0.0, "gain must stay strictly positive, got {g}");
            assert!(g <= m.main_gain + m.side_gain, "gain {g} exceeds lobe-sum bound");
        }
    }

    #[test]
    fn gain_outside_scan_band_has_no_sidelobe() {
        let m = sidelobe_dominant();
        let at_side = dir(0.0, 40.0);
        let inside = m.gain(15_000.0, at_side);
        let below = m.gain(9_999.0, at_side);
        let above = m.gain(20_001.0, at_side);
        assert!(inside > 100.0 * below, "sidelobe must vanish below the band");
        assert_eq!(below, above, "outside the band only the main lobe remains");
    }

    // ---- scan monotonicity (dense elevation-scan oracle) ----

    #[test]
    fn elevation_argmax_tracks_frequency_in_slope_direction() {
        // Dense elevation scan at the sidelobe azimuth; the gain argmax must
        // move strictly with frequency, in the direction of the slope sign.
        let rising = BeamModel {
            scan_slope_deg_per_hz: 0.004,
            scan_intercept_deg: -20.0,
            ..sidelobe_dominant()
        };
        let falling = sidelobe_dominant();
        for (m, sign) in [(&rising, 1.0), (&falling, -1.0)] {
            m.validate().unwrap();
            let argmax = |f: f64| -> f64 {
                let mut best = (f64::NEG_INFINITY, 0.0);
                let mut el = -90.0;
                while el <= 90.0 {
                    let g = m.gain(f, dir(0.0, el));
                    if g > best.0 {
                        best = (g, el);
                    }
                    el += 0.05;
                }
                best.1
            };
            let peaks: Vec<f64> =
                [11_000.0, 13_000.0, 15_000.0, 17_000.0, 19_000.0].map(argmax).to_vec();
            for pair in peaks.windows(2) {
                assert!(
                    sign * (pair[1] - pair[0]) > 0.0,
                    "argmax must move {} with frequency, got {peaks:?}",
                    if sign > 0.0 { "up" } else { "down" }
                );
            }
        }
    }

    // ---- frequency response ----

    #[test]
    fn distinct_elevations_peak_at_distinct_frequencies() {
        let m = BeamModel::default();
        let band = m.scan_band_hz;
        let peak = |el: f64| -> f64 {
            let response = m.frequency_response(dir(0.0, el), band, 100.0).unwrap();
            response.iter().copied().fold((0.0, f64::NEG_INFINITY), |best, (f, g)| {
                if g > best.1 {
                    (f, g)
                } else {
                    best
                }
            }).0
        };
        let (peak_20, peak_60) = (peak(20.0), peak(60.0));
        // With the default falling scan, elevation 60 answers near 10 kHz
        // and elevation 20 near 20 kHz.
        assert!(peak_60 < peak_20, "elevation 60 must peak below elevation 20");
        assert!(peak_20 - peak_60 > 5_000.0, "peaks {peak_60} / {peak_20} Hz barely differ");
    }

    #[test]
    fn sidelobe_free_model_has_flat_response() {
        // Degenerate diagnostic model: no sidelobe, very broad main lobe.
        // (Deliberately skips validate(): side_gain = 0 is not a legal
        // operating model, just a flatness probe.)
        let m = BeamModel {
            side_gain: 0.0,
            main_width_deg: 500.0,
            ..BeamModel::default()
        };
        let response = m.frequency_response(dir(4.0, 31.0), (10_000.0, 20_000.0), 250.0).unwrap();
        let max = response.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
        let min = response.iter().map(|(_, g)| *g).fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.01, "flat model response varies by {}", max / min);
    }

    #[test]
    fn response_peak_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = BeamModel {
                main_center: dir(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)),
                side_gain: rng.gen_range(0.3..1.5),
                ..BeamModel::default()
            };
            let local = dir(rng.gen_range(-20.0..20.0), rng.gen_range(0.0..70.0));
            let response = m.frequency_response(local, m.scan_band_hz, 50.0).unwrap();
            // Independent pass: walk the same frequencies and track the best.
            let mut best_f = response[0].0;
            let mut best_g = f64::NEG_INFINITY;
            for &(f, _) in &response {
                let g = m.gain(f, local);
                if g > best_g {
                    best_g = g;
                    best_f = f;
                }
            }
            let peak = response
                .iter()
                .copied()
                .fold((0.0, f64::NEG_INFINITY), |acc, (f, g)| if g > acc.1 { (f, g) } else { acc });
            assert_eq!(peak.0, best_f, "argmax frequency");
            assert_eq!(peak.1, best_g, "argmax gain");
        }
    }

    #[test]
    fn response_rejects_degenerate_bands() {
        let m = BeamModel::default();
        assert!(m.frequency_response(dir(0.0, 0.0), (20_000.0, 10_000.0), 100.0).is_err());
        assert!(m.frequency_response(dir(0.0, 0.0), (10_000.0, 20_000.0), 0.0).is_err());
        assert!(m.frequency_response(dir(0.0, 0.0), (0.0, 20_000.0), 100.0).is_err());
    }

    // ---- calibration ----

    fn track_point(f: f64, el: f64) -> (f64, LobeReport) {
        (
            f,
            LobeReport {
                main_direction: dir(0.0, 0.0),
                hpbw_deg: 20.0,
                side_direction: dir(0.0, el),
                side_level_db: -4.0,
                energy_ratio: 0.1,
            },
        )
    }

    #[test]
    fn exact_affine_track_is_recovered() {
        // el = 5 + 2 * f_kHz, i.e. slope 0.002 deg per Hz.
        let track: Vec<(f64, LobeReport)> = (10..=20)
            .map(|f_khz| track_point(f_khz as f64 * 1000.0, 5.0 + 2.0 * f_khz as f64))
            .collect();
        let fit = BeamModel::default().calibrate_from_track(&track).unwrap();
        assert_close(fit.model.scan_intercept_deg, 5.0, 1e-9, "intercept");
        assert_close(fit.model.scan_slope_deg_per_hz, 0.002, 1e-12, "slope");
        assert_close(fit.residual_rms_deg, 0.0, 1e-9, "exact-fit residual");
        assert_eq!(fit.model.scan_band_hz, (10_000.0, 20_000.0));
    }

    #[test]
    fn noisy_affine_track_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let track: Vec<(f64, LobeReport)> = (0..40)
            .map(|i| {
                let f = 10_000.0 + 250.0 * i as f64;
                track_point(f, 100.0 - 0.004 * f + rng.gen_range(-0.5..0.5))
            })
            .collect();
        let fit = BeamModel::default().calibrate_from_track(&track).unwrap();

        // Oracle: solve the 2x2 normal equations [n, Sf; Sf, Sff][a, b]^T =
        // [Se, Sfe]^T by Cramer's rule (a numerically different route than
        // the centered form used by the implementation).
        let n = track.len() as f64;
        let (mut sf, mut sff, mut se, mut sfe) = (0.0, 0.0, 0.0, 0.0);
        for (f, r) in &track {
            // Work in kHz so the determinant keeps plenty of precision.
            let fk = f / 1000.0;
            sf += fk;
            sff += fk * fk;
            se += r.side_direction.elevation_deg;
            sfe += fk * r.side_direction.elevation_deg;
        }
        let det = n * sff - sf * sf;
        let a = (se * sff - sf * sfe) / det;
        let b_per_khz = (n * sfe - sf * se) / det;
        assert_close(fit.model.scan_intercept_deg, a, 1e-9, "oracle intercept");
        assert_close(fit.model.scan_slope_deg_per_hz, b_per_khz / 1000.0, 1e-12, "oracle slope");
        // Residuals are the injected +-0.5 uniform noise.
        assert!(fit.residual_rms_deg > 0.0 && fit.residual_rms_deg < 0.5);
    }

    #[test]
    fn calibration_rejects_degenerate_tracks() {
        let m = BeamModel::default();
        assert!(m.calibrate_from_track(&[track_point(10_000.0, 60.0)]).is_err());
        let flat = vec![track_point(15_000.0, 40.0), track_point(15_000.0, 42.0)];
        assert!(matches!(m.calibrate_from_track(&flat), Err(Error::SingularFit)));
    }

    // ---- azimuth stability ----

    #[test]
    fn sidelobe_azimuth_argmax_is_frequency_independent() {
        let m = BeamModel { side_azimuth_center_deg: 4.0, ..sidelobe_dominant() };
        for f in [11_000.0, 14_000.0, 17_000.0, 19_500.0] {
            let el = m.scan_elevation_deg(f);
            let mut best = (f64::NEG_INFINITY, 0.0);
            // Grid contains the center exactly, so the argmax must land on it.
            let mut az = -60.0;
            while az <= 60.0 {
                let g = m.gain(f, dir(az, el));
                if g > best.0 {
                    best = (g, az);
                }
                az += 0.5;
            }
            assert_close(best.1, 4.0, 1e-12, "sidelobe azimuth argmax");
        }
    }

    // ---- persistence ----

    #[test]
    fn kv_round_trip_preserves_model() {
        let m = BeamModel {
            scan_slope_deg_per_hz: 0.0031,
            scan_intercept_deg: -11.5,
            side_gain: 0.55,
            ..BeamModel::default()
        };
        let back = BeamModel::from_kv(&m.to_kv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn kv_missing_keys_fall_back_to_defaults() {
        let kv = KvFile::parse("beam.side_gain = 0.9\n").unwrap();
        let m = BeamModel::from_kv(&kv).unwrap();
        assert_eq!(m.side_gain, 0.9);
        assert_eq!(m.main_width_deg, BeamModel::default().main_width_deg);
    }

    #[test]
    fn kv_rejects_invalid_models() {
        let kv = KvFile::parse("beam.main_width_deg = -3\n").unwrap();
        assert!(BeamModel::from_kv(&kv).is_err());
        let kv = KvFile::parse("beam.side_gain = not-a-number\n").unwrap();
        assert!(BeamModel::from_kv(&kv).is_err());
    }
}

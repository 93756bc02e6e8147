//! Directions, pinna poses, and scan lattices.
//!
//! Axis convention: `x` forward, `y` left, `z` up. Azimuth turns left
//! (positive toward `+y`), elevation raises toward `+z`. A pinna pose is a
//! forward tilt (boresight raised in elevation) followed by a roll about the
//! boresight axis; `local_direction` maps a world direction into that pinna's
//! frame.

use crate::error::{Error, Result};

/// Azimuth/elevation pair in degrees; azimuth in `[-180, 180)`, elevation in `[-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        let ok = (-180.0..180.0).contains(&azimuth_deg)
            && (-90.0..=90.0).contains(&elevation_deg)
            && azimuth_deg.is_finite()
            && elevation_deg.is_finite();
        if !ok {
            return Err(Error::InvalidDirection { azimuth_deg, elevation_deg });
        }
        Ok(Direction { azimuth_deg, elevation_deg })
    }

    /// Unit vector `(cos el cos az, cos el sin az, sin el)`.
    pub fn to_unit_vector(self) -> [f64; 3] {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    /// Inverse of [`Direction::to_unit_vector`]; the input must be unit length.
    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let elevation_deg = v[2].clamp(-1.0, 1.0).asin().to_degrees();
        let mut azimuth_deg = v[1].atan2(v[0]).to_degrees();
        // atan2 yields (-180, 180]; fold the single point +180 into the domain.
        if azimuth_deg >= 180.0 {
            azimuth_deg -= 360.0;
        }
        Direction { azimuth_deg, elevation_deg }
    }
}

/// Great-circle angle between two directions, in degrees.
pub fn angular_separation_deg(a: Direction, b: Direction) -> f64 {
    let u = a.to_unit_vector();
    let v = b.to_unit_vector();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    // atan2 form stays accurate for both near-parallel and near-opposite pairs.
    cross.atan2(dot).to_degrees()
}

/// Orientation of one pinna relative to the device frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnaPose {
    /// Rotation of the boresight upward in elevation, degrees in `[0, 90]`.
    pub forward_tilt_deg: f64,
    /// Rotation about the boresight axis, degrees; `0` (upright) or `90` (rolled).
    pub roll_deg: f64,
}

impl PinnaPose {
    pub fn new(forward_tilt_deg: f64, roll_deg: f64) -> Result<Self> {
        if !(0.0..=90.0).contains(&forward_tilt_deg) {
            return Err(Error::InvalidConfig(format!(
                "forward tilt {forward_tilt_deg} outside [0, 90]"
            )));
        }
        if roll_deg != 0.0 && roll_deg != 90.0 {
            return Err(Error::InvalidConfig(format!(
                "roll {roll_deg} not one of the supported values 0 or 90"
            )));
        }
        Ok(PinnaPose { forward_tilt_deg, roll_deg })
    }

    pub fn upright(forward_tilt_deg: f64) -> Result<Self> {
        PinnaPose::new(forward_tilt_deg, 0.0)
    }

    pub fn rolled(forward_tilt_deg: f64) -> Result<Self> {
        PinnaPose::new(forward_tilt_deg, 90.0)
    }
}

fn rotate_about_y(v: [f64; 3], angle_deg: f64) -> [f64; 3] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn rotate_about_x(v: [f64; 3], angle_deg: f64) -> [f64; 3] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

/// World direction expressed in the pinna's local frame.
///
/// Undoes the pose on the unit vector: first the forward tilt (a pitch, so a
/// target at the boresight elevation maps to local elevation 0), then the roll
/// about the boresight axis (so a rolled pinna trades azimuth for elevation).
pub fn local_direction(pose: PinnaPose, world: Direction) -> Direction {
    let v = world.to_unit_vector();
    let pitched = rotate_about_y(v, pose.forward_tilt_deg);
    let rolled = rotate_about_x(pitched, pose.roll_deg);
    Direction::from_unit_vector(rolled)
}

/// Which pinnae point where, and how far apart the microphones sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinnaMode {
    Parallel,
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub left: PinnaPose,
    pub right: PinnaPose,
    /// Each microphone sits this far from the midline along `y`, in meters.
    pub baseline_offset_m: f64,
    pub mode: PinnaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ear {
    Left,
    Right,
}

impl DeviceConfig {
    pub fn new(
        left: PinnaPose,
        right: PinnaPose,
        baseline_offset_m: f64,
        mode: PinnaMode,
    ) -> Result<Self> {
        if !(baseline_offset_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline offset {baseline_offset_m} must be positive"
            )));
        }
        match mode {
            PinnaMode::Parallel => {
                if left.roll_deg != 0.0 || right.roll_deg != 0.0 {
                    return Err(Error::InvalidConfig(
                        "parallel mode requires both rolls to be 0".into(),
                    ));
                }
            }
            PinnaMode::Orthogonal => {
                if (left.roll_deg - right.roll_deg).abs() != 90.0 {
                    return Err(Error::InvalidConfig(
                        "orthogonal mode requires the rolls to differ by 90".into(),
                    ));
                }
            }
        }
        Ok(DeviceConfig { left, right, baseline_offset_m, mode })
    }

    /// Both pinnae upright at the same forward tilt, default 2.5 cm half-baseline.
    pub fn parallel(forward_tilt_deg: f64) -> Result<Self> {
        let pose = PinnaPose::upright(forward_tilt_deg)?;
        DeviceConfig::new(pose, pose, 0.025, PinnaMode::Parallel)
    }

    /// Left pinna upright, right pinna rolled 90 degrees.
    pub fn orthogonal(forward_tilt_deg: f64) -> Result<Self> {
        DeviceConfig::new(
            PinnaPose::upright(forward_tilt_deg)?,
            PinnaPose::rolled(forward_tilt_deg)?,
            0.025,
            PinnaMode::Orthogonal,
        )
    }

    pub fn pose(&self, ear: Ear) -> PinnaPose {
        match ear {
            Ear::Left => self.left,
            Ear::Right => self.right,
        }
    }

    /// Microphone position in the device frame (`y` points left).
    pub fn microphone_position(&self, ear: Ear) -> [f64; 3] {
        match ear {
            Ear::Left => [0.0, self.baseline_offset_m, 0.0],
            Ear::Right => [0.0, -self.baseline_offset_m, 0.0],
        }
    }
}

/// Inclusive-start lattice over azimuth and elevation, row-major with
/// elevation as the outer axis. Values that would exceed the axis max are
/// dropped, so the end point is included only when the step divides the span.
pub fn grid_directions(
    az_min: f64,
    az_max: f64,
    az_step: f64,
    el_min: f64,
    el_max: f64,
    el_step: f64,
) -> Result<Vec<Direction>> {
    let az = lattice_axis(az_min, az_max, az_step)?;
    let el = lattice_axis(el_min, el_max, el_step)?;
    let mut grid = Vec::with_capacity(az.len() * el.len());
    for &e in &el {
        for &a in &az {
            grid.push(Direction::new(a, e)?);
        }
    }
    Ok(grid)
}

/// Inclusive-start arithmetic progression `min, min + step, …` capped at `max`.
pub fn lattice_axis(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if min > max {
        return Err(Error::EmptyRange);
    }
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step {step} must be positive")));
    }
    let mut values = Vec::new();
    let mut i = 0u32;
    // Tiny slack keeps exact endpoints (min + n*step == max) on the lattice.
    while min + f64::from(i) * step <= max + 1e-9 {
        values.push(min + f64::from(i) * step);
        i += 1;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: expected {b}, got {a} (tol {tol})");
    }

    // ---- 1. direction basics ----

    #[test]
    fn unit_vectors_of_cardinal_directions() {
        let fwd = Direction::new(0.0, 0.0).unwrap().to_unit_vector();
        assert_close(fwd[0], 1.0, 1e-12, "forward x");
        assert_close(fwd[1], 0.0, 1e-12, "forward y");
        assert_close(fwd[2], 0.0, 1e-12, "forward z");

        let left = Direction::new(90.0, 0.0).unwrap().to_unit_vector();
        assert_close(left[1], 1.0, 1e-12, "left y");

        let up = Direction::new(0.0, 90.0).unwrap().to_unit_vector();
        assert_close(up[2], 1.0, 1e-12, "up z");
    }

    #[test]
    fn direction_round_trip_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let az = rng.gen_range(-180.0..180.0);
            let el = rng.gen_range(-89.9..=89.9);
            let d = Direction::new(az, el).unwrap();
            let back = Direction::from_unit_vector(d.to_unit_vector());
            assert_close(back.azimuth_deg, az, 1e-9, "azimuth round trip");
            assert_close(back.elevation_deg, el, 1e-9, "elevation round trip");
        }
    }

    #[test]
    fn direction_domain_is_enforced() {
        assert!(Direction::new(180.0, 0.0).is_err(), "azimuth 180 is out of domain");
        assert!(Direction::new(-180.0, 0.0).is_ok());
        assert!(Direction::new(0.0, 90.5).is_err());
        assert!(Direction::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn angular_separation_basics() {
        let a = Direction::new(0.0, 0.0).unwrap();
        let b = Direction::new(90.0, 0.0).unwrap();
        assert_close(angular_separation_deg(a, b), 90.0, 1e-12, "quarter turn");
        assert_close(angular_separation_deg(a, a), 0.0, 1e-12, "self separation");
        assert_close(
            angular_separation_deg(b, a),
            angular_separation_deg(a, b),
            1e-12,
            "symmetry",
        );
    }

    // ---- 2. pose transforms ----

    #[test]
    fn identity_pose_returns_input() {
        let pose = PinnaPose::upright(0.0).unwrap();
        let d = Direction::new(12.5, -33.25).unwrap();
        let local = local_direction(pose, d);
        assert_close(local.azimuth_deg, d.azimuth_deg, 1e-12, "identity azimuth");
        assert_close(local.elevation_deg, d.elevation_deg, 1e-12, "identity elevation");
    }

    #[test]
    fn forward_tilt_brings_boresight_to_local_zero() {
        let pose = PinnaPose::upright(40.0).unwrap();
        let local = local_direction(pose, Direction::new(0.0, 40.0).unwrap());
        assert_close(local.azimuth_deg, 0.0, 1e-12, "boresight azimuth");
        assert_close(local.elevation_deg, 0.0, 1e-12, "boresight elevation");
    }

    #[test]
    fn roll_maps_azimuth_into_elevation() {
        let pose = PinnaPose::rolled(0.0).unwrap();
        let local = local_direction(pose, Direction::new(10.0, 0.0).unwrap());
        assert_close(local.elevation_deg.abs(), 10.0, 1e-12, "rolled elevation magnitude");
        assert_close(local.azimuth_deg, 0.0, 1e-12, "rolled azimuth");
    }

    #[test]
    fn local_direction_matches_rotation_matrix_oracle() {
        // Independent oracle: explicit matrix product R_x(roll) * R_y(tilt).
        fn oracle(pose: PinnaPose, world: Direction) -> [f64; 3] {
            let (st, ct) = pose.forward_tilt_deg.to_radians().sin_cos();
            let (sr, cr) = pose.roll_deg.to_radians().sin_cos();
            let ry = [[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]];
            let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
            let v = world.to_unit_vector();
            let mut mid = [0.0; 3];
            let mut out = [0.0; 3];
            for i in 0..3 {
                mid[i] = ry[i][0] * v[0] + ry[i][1] * v[1] + ry[i][2] * v[2];
            }
            for i in 0..3 {
                out[i] = rx[i][0] * mid[0] + rx[i][1] * mid[1] + rx[i][2] * mid[2];
            }
            out
        }

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let pose = PinnaPose::new(
                rng.gen_range(0.0..=90.0),
                if rng.gen_bool(0.5) { 0.0 } else { 90.0 },
            )
            .unwrap();
            let world =
                Direction::new(rng.gen_range(-179.0..179.0), rng.gen_range(-89.0..=89.0)).unwrap();
            let got = local_direction(pose, world).to_unit_vector();
            let want = oracle(pose, world);
            for k in 0..3 {
                assert_close(got[k], want[k], 1e-12, "matrix oracle component");
            }
        }
    }

    #[test]
    fn successive_tilts_compose_additively() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let a = rng.gen_range(0.0..45.0);
            let b = rng.gen_range(0.0..45.0);
            let world =
                Direction::new(rng.gen_range(-90.0..90.0), rng.gen_range(-45.0..=45.0)).unwrap();
            let step1 = local_direction(PinnaPose::upright(a).unwrap(), world);
            let step2 = local_direction(PinnaPose::upright(b).unwrap(), step1);
            let direct = local_direction(PinnaPose::upright(a + b).unwrap(), world);
            assert_close(step2.azimuth_deg, direct.azimuth_deg, 1e-9, "composed azimuth");
            assert_close(step2.elevation_deg, direct.elevation_deg, 1e-9, "composed elevation");
        }
    }

    #[test]
    fn rolled_pinna_elevation_tracks_world_azimuth() {
        // Small-angle orthogonality: the rolled pinna reads world azimuth as
        // local elevation, el_local = asin(sin az * cos el). The deviation
        // grows as az * el^2 / 2, so the tight 1.5-degree bound holds for
        // |el| <= 18 and a looser 4.5-degree bound covers the full 30-degree
        // box (worst corner: 4.1 degrees at az = el = 30).
        let pose = PinnaPose::rolled(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..300 {
            let az = rng.gen_range(-30.0..=30.0);
            let el = rng.gen_range(-30.0..=30.0);
            let local = local_direction(pose, Direction::new(az, el).unwrap());
            let stray = (local.elevation_deg - az).abs();
            let bound = if el.abs() <= 18.0 { 1.5 } else { 4.5 };
            assert!(
                stray <= bound,
                "rolled elevation {} strays {stray} deg from azimuth {az} (el {el})",
                local.elevation_deg
            );
        }
        // Exact at the equator.
        let local = local_direction(pose, Direction::new(17.0, 0.0).unwrap());
        assert_close(local.elevation_deg, 17.0, 1e-12, "equator mapping");
    }

    // ---- 3. device validation ----

    #[test]
    fn device_mode_invariants() {
        let upright = PinnaPose::upright(40.0).unwrap();
        let rolled = PinnaPose::rolled(40.0).unwrap();
        assert!(DeviceConfig::new(upright, rolled, 0.025, PinnaMode::Parallel).is_err());
        assert!(DeviceConfig::new(upright, upright, 0.025, PinnaMode::Orthogonal).is_err());
        assert!(DeviceConfig::new(upright, rolled, 0.0, PinnaMode::Orthogonal).is_err());
        let dev = DeviceConfig::orthogonal(40.0).unwrap();
        assert_eq!(dev.mode, PinnaMode::Orthogonal);
        assert_close(dev.microphone_position(Ear::Left)[1], 0.025, 1e-15, "left mic y");
        assert_close(dev.microphone_position(Ear::Right)[1], -0.025, 1e-15, "right mic y");
    }

    #[test]
    fn pose_domain_is_enforced() {
        assert!(PinnaPose::new(-1.0, 0.0).is_err());
        assert!(PinnaPose::new(91.0, 0.0).is_err());
        assert!(PinnaPose::new(40.0, 45.0).is_err(), "only rolls 0 and 90 are supported");
    }

    // ---- 4. lattices ----

    #[test]
    fn elevation_axis_of_the_narrow_scan() {
        let grid = grid_directions(0.0, 0.0, 1.0, 20.0, 55.0, 5.0).unwrap();
        assert_eq!(grid.len(), 8, "20..55 in steps of 5 has 8 values");
        assert_close(grid[0].elevation_deg, 20.0, 1e-12, "first elevation");
        assert_close(grid[7].elevation_deg, 55.0, 1e-12, "last elevation");
    }

    #[test]
    fn wide_scan_lattice_is_9_by_9() {
        let grid = grid_directions(-28.0, 28.0, 7.0, 12.0, 68.0, 7.0).unwrap();
        assert_eq!(grid.len(), 81);
        // Row-major: elevation outer, azimuth inner.
        assert_close(grid[0].azimuth_deg, -28.0, 1e-12, "first azimuth");
        assert_close(grid[0].elevation_deg, 12.0, 1e-12, "first elevation");
        assert_close(grid[1].azimuth_deg, -21.0, 1e-12, "second azimuth");
        assert_close(grid[1].elevation_deg, 12.0, 1e-12, "second elevation still row 0");
        assert_close(grid[9].elevation_deg, 19.0, 1e-12, "row stride is 9");
    }

    #[test]
    fn overshooting_values_are_dropped() {
        let grid = grid_directions(-90.0, 90.0, 7.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(grid.len(), 26, "-90..90 by 7 stops at 85");
        assert_close(grid[25].azimuth_deg, 85.0, 1e-12, "last azimuth below the max");
    }

    #[test]
    fn degenerate_and_empty_ranges() {
        let single = grid_directions(7.0, 7.0, 1.0, -3.0, -3.0, 1.0).unwrap();
        assert_eq!(single.len(), 1, "point ranges give a single cell");
        assert!(matches!(
            grid_directions(10.0, -10.0, 1.0, 0.0, 10.0, 1.0),
            Err(Error::EmptyRange)
        ));
        assert!(grid_directions(0.0, 10.0, 0.0, 0.0, 10.0, 1.0).is_err(), "zero step");
    }
}

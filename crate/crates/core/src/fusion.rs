//! Attitude estimation and gravity removal.
//!
//! A complementary filter: gyro integration predicts the device-to-world
//! quaternion, the accelerometer pulls the tilt toward the measured gravity
//! direction and the magnetometer pulls the heading toward magnetic north.
//! World frame is z-up with gravity `[0, 0, -9.80665]`; at rest a device
//! accelerometer reads the gravity vector expressed in the device frame.

use std::io::Write;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::ingest::Recording;

pub const STANDARD_GRAVITY: f64 = 9.80665;
pub const DEFAULT_GAIN_TILT: f64 = 0.02;
pub const DEFAULT_GAIN_YAW: f64 = 0.01;
/// Leading interval whose frames are marked as filter warm-up.
pub const WARMUP_S: f64 = 0.5;

const TILT_MIN_ACCEL: f64 = 1.0;
const TILT_MAX_ACCEL: f64 = 30.0;
const GIMBAL_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("quaternion norm {0} is not 1 within 1e-6")]
    NonUnitQuaternion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterGains {
    pub tilt: f64,
    pub yaw: f64,
}

impl Default for FilterGains {
    fn default() -> Self {
        Self {
            tilt: DEFAULT_GAIN_TILT,
            yaw: DEFAULT_GAIN_YAW,
        }
    }
}

/// Yaw, pitch and roll in radians (intrinsic Z-Y'-X'').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AttitudeFrame {
    pub t: f64,
    /// Device-to-world rotation.
    pub q: UnitQuaternion<f64>,
    pub euler: EulerAngles,
    pub gravity_dev: Vector3<f64>,
    pub linear_acc: Vector3<f64>,
    pub warmup: bool,
}

fn gravity_world() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

/// Rotation taking direction `from` onto `to`, scaled by `fraction` of its angle.
fn partial_rotation(from: &Vector3<f64>, to: &Vector3<f64>, fraction: f64) -> UnitQuaternion<f64> {
    if let Some(r) = UnitQuaternion::scaled_rotation_between(from, to, fraction) {
        return r;
    }
    // Antiparallel: any axis orthogonal to `from` works.
    let helper = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let axis = Unit::new_normalize(from.cross(&helper));
    UnitQuaternion::from_axis_angle(&axis, std::f64::consts::PI * fraction)
}

fn tilt_usable(accel: &Vector3<f64>) -> bool {
    let n = accel.norm();
    (TILT_MIN_ACCEL..=TILT_MAX_ACCEL).contains(&n)
}

/// Rotation about world z that brings the horizontal magnetometer component
/// onto +x, scaled by `fraction`.
fn heading_correction(q: &UnitQuaternion<f64>, mag: &Vector3<f64>, fraction: f64) -> UnitQuaternion<f64> {
    let m = q.transform_vector(mag);
    if m.x.hypot(m.y) < 1e-9 {
        return UnitQuaternion::identity();
    }
    let heading = m.y.atan2(m.x);
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -heading * fraction)
}

fn tilt_correction(q: &UnitQuaternion<f64>, accel: &Vector3<f64>, fraction: f64) -> UnitQuaternion<f64> {
    let measured_down = q.transform_vector(&accel.normalize());
    partial_rotation(&measured_down, &-Vector3::z(), fraction)
}

/// Attitude from a single accelerometer/magnetometer sample.
pub fn initial_attitude(accel: &Vector3<f64>, mag: &Vector3<f64>) -> UnitQuaternion<f64> {
    let mut q = UnitQuaternion::identity();
    if tilt_usable(accel) {
        q = tilt_correction(&q, accel, 1.0);
    }
    heading_correction(&q, mag, 1.0) * q
}

fn frame(t: f64, q: UnitQuaternion<f64>, accel: Vector3<f64>, warmup: bool) -> AttitudeFrame {
    let gravity_dev = q.inverse_transform_vector(&gravity_world());
    AttitudeFrame {
        t,
        q,
        euler: euler_unchecked(q.quaternion()),
        gravity_dev,
        linear_acc: accel - gravity_dev,
        warmup,
    }
}

/// Runs the filter over a uniformly sampled recording, one frame per sample.
///
/// Step k integrates the gyro reading of sample k-1 over `1 / rate`, then
/// applies the tilt and heading corrections from sample k. Samples with an
/// accelerometer norm outside [1, 30] m/s² skip the tilt correction.
pub fn attitude_filter(rec: &Recording, gains: FilterGains) -> Vec<AttitudeFrame> {
    let samples = &rec.samples;
    if samples.is_empty() {
        return Vec::new();
    }
    let dt = 1.0 / rec.rate;
    let t0 = samples[0].t;
    let vec3 = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);

    let first_acc = vec3(samples[0].accel);
    let mut q = initial_attitude(&first_acc, &vec3(samples[0].mag));
    let mut frames = Vec::with_capacity(samples.len());
    frames.push(frame(t0, q, first_acc, true));

    for pair in samples.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let omega = vec3(prev.gyro);
        q *= UnitQuaternion::from_scaled_axis(omega * dt);

        let accel = vec3(cur.accel);
        if gains.tilt > 0.0 && tilt_usable(&accel) {
            q = tilt_correction(&q, &accel, gains.tilt) * q;
        }
        if gains.yaw > 0.0 {
            q = heading_correction(&q, &vec3(cur.mag), gains.yaw) * q;
        }
        q.renormalize();
        frames.push(frame(cur.t, q, accel, cur.t - t0 < WARMUP_S));
    }
    frames
}

/// Maps any angle into (-π, π].
fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

fn euler_unchecked(q: &Quaternion<f64>) -> EulerAngles {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let sin_pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    if std::f64::consts::FRAC_PI_2 - pitch.abs() < GIMBAL_EPS {
        // Only yaw - roll is observable; put it all in yaw.
        return EulerAngles {
            yaw: wrap_pi(2.0 * z.atan2(w)),
            pitch,
            roll: 0.0,
        };
    }
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    EulerAngles {
        yaw: wrap_pi(yaw),
        pitch,
        roll: wrap_pi(roll),
    }
}

/// Intrinsic Z-Y'-X'' decomposition. Yaw and roll are in (-π, π], pitch in
/// [-π/2, π/2]. At gimbal lock roll is reported as 0.
pub fn to_euler(q: &Quaternion<f64>) -> Result<EulerAngles, FusionError> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(FusionError::NonUnitQuaternion(n));
    }
    Ok(euler_unchecked(q))
}

/// Inverse of [`to_euler`]: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_quaternion(e: EulerAngles) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), e.yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), e.pitch)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), e.roll)
}

pub const ATTITUDE_DUMP_HEADER: &str = "t,qw,qx,qy,qz,yaw,pitch,roll,lax,lay,laz";

/// Debug dump of filter output, one row per frame.
pub fn write_attitude_csv<W: Write>(frames: &[AttitudeFrame], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ATTITUDE_DUMP_HEADER}")?;
    for f in frames {
        let q = f.q.quaternion();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            f.t, q.w, q.i, q.j, q.k, f.euler.yaw, f.euler.pitch, f.euler.roll,
            f.linear_acc.x, f.linear_acc.y, f.linear_acc.z
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SensorSample;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn stationary(n: usize, accel: [f64; 3], gyro: [f64; 3], mag: [f64; 3]) -> Recording {
        let samples = (0..n)
            .map(|i| SensorSample { t: i as f64 / 100.0, accel, gyro, mag })
            .collect();
        Recording::new("p", Utc.with_ymd_and_hms(2024, 1, 1, 20, 0, 0).unwrap(), samples).unwrap()
    }

    #[test]
    fn flat_device_at_rest() {
        let rec = stationary(200, [0.0, 0.0, -STANDARD_GRAVITY], [0.0; 3], [20.0, 0.0, -40.0]);
        let frames = attitude_filter(&rec, FilterGains::default());
        for f in frames.iter().filter(|f| f.t >= 1.0) {
            assert!(f.linear_acc.norm() < 0.02);
            assert!(f.euler.pitch.abs() < 1e-9 && f.euler.roll.abs() < 1e-9);
            assert!((f.gravity_dev.norm() - STANDARD_GRAVITY).abs() < 1e-9);
        }
        assert!(frames[49].warmup && !frames[50].warmup);
    }

    #[test]
    fn constant_yaw_rate_integrates_exactly() {
        // 101 samples: 100 steps of 10 ms.
        let rec = stationary(101, [0.0, 0.0, -STANDARD_GRAVITY], [0.0, 0.0, FRAC_PI_2], [20.0, 0.0, -40.0]);
        let frames = attitude_filter(&rec, FilterGains { tilt: 0.0, yaw: 0.0 });
        let dyaw = frames[100].euler.yaw - frames[0].euler.yaw;
        assert!((dyaw - FRAC_PI_2).abs() < 1e-3, "{dyaw}");
    }

    #[test]
    fn no_gyro_no_gains_is_constant() {
        let rec = stationary(150, [1.0, -2.0, -9.0], [0.0; 3], [10.0, 5.0, -30.0]);
        let frames = attitude_filter(&rec, FilterGains { tilt: 0.0, yaw: 0.0 });
        for f in &frames {
            assert!(f.q.angle_to(&frames[0].q) < 1e-12);
        }
    }

    #[test]
    fn degenerate_accel_skips_tilt() {
        // Free fall: tilt must not be pulled anywhere.
        let mut rec = stationary(150, [0.0, 0.0, -STANDARD_GRAVITY], [0.0; 3], [20.0, 0.0, -40.0]);
        for s in rec.samples.iter_mut().skip(1) {
            s.accel = [0.5, 0.0, 0.0];
        }
        let frames = attitude_filter(&rec, FilterGains { tilt: 0.5, yaw: 0.0 });
        assert!((frames.last().unwrap().q.angle_to(&frames[0].q)).abs() < 1e-12);
    }

    #[test]
    fn euler_axis_cases() {
        let e = to_euler(UnitQuaternion::identity().quaternion()).unwrap();
        assert_eq!((e.yaw, e.pitch, e.roll), (0.0, 0.0, 0.0));
        let qz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let e = to_euler(qz.quaternion()).unwrap();
        assert!((e.yaw - FRAC_PI_2).abs() < 1e-12 && e.pitch.abs() < 1e-12 && e.roll.abs() < 1e-12);
        let half_turn = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        assert!((to_euler(half_turn.quaternion()).unwrap().yaw - PI).abs() < 1e-12);
    }

    #[test]
    fn gimbal_lock_sets_roll_zero() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let q = euler_to_quaternion(EulerAngles { yaw: 0.7, pitch, roll: 0.3 });
            let e = to_euler(q.quaternion()).unwrap();
            assert_eq!(e.roll, 0.0);
            let back = euler_to_quaternion(e);
            assert!(back.angle_to(&q) < 1e-6, "pitch {pitch}: {e:?}");
        }
    }

    #[test]
    fn non_unit_rejected() {
        let q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(to_euler(&q), Err(FusionError::NonUnitQuaternion(_))));
    }

    proptest! {
        #[test]
        fn euler_round_trip(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let raw = Quaternion::new(w, x, y, z);
            prop_assume!(raw.norm() > 0.1);
            let q = UnitQuaternion::from_quaternion(raw);
            let e = to_euler(q.quaternion()).unwrap();
            prop_assume!(FRAC_PI_2 - e.pitch.abs() > 1e-4);
            prop_assert!(e.yaw > -PI && e.yaw <= PI && e.roll > -PI && e.roll <= PI);
            let back = euler_to_quaternion(e).into_inner();
            let q = q.into_inner();
            let d = (back - q).norm().min((back + q).norm());
            prop_assert!(d < 1e-9, "distance {}", d);
        }

        #[test]
        fn quaternion_stays_unit(gx in -3.0f64..3.0, gy in -3.0f64..3.0, gz in -3.0f64..3.0, ax in -5.0f64..5.0) {
            let rec = stationary(120, [ax, 1.0, -9.0], [gx, gy, gz], [15.0, -3.0, -35.0]);
            for f in attitude_filter(&rec, FilterGains::default()) {
                prop_assert!((f.q.quaternion().norm() - 1.0).abs() < 1e-9);
                prop_assert!((f.linear_acc - (Vector3::new(ax, 1.0, -9.0) - f.gravity_dev)).norm() == 0.0);
            }
        }
    }
}

//! Runs the complementary filter on a motionless device and on a walking
//! recording, and reports the residual linear acceleration.

use gaitbac::fusion::{attitude_filter, write_attitude_csv, FilterGains};
use gaitbac::synth::{evening_start, gait_recording, stationary_recording, GaitParams};
use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rms_linear(frames: &[gaitbac::fusion::AttitudeFrame]) -> f64 {
    let settled: Vec<f64> = frames.iter().filter(|f| !f.warmup).map(|f| f.linear_acc.norm_squared()).collect();
    (settled.iter().sum::<f64>() / settled.len() as f64).sqrt()
}

fn main() {
    let q = UnitQuaternion::from_euler_angles(0.4, -0.3, 2.0);
    let still = stationary_recording("P01", evening_start(0), q, 100.0, 10.0);
    let frames = attitude_filter(&still, FilterGains::default());
    let last = frames.last().unwrap();
    println!("stationary: rms linear acceleration {:.2e} m/s²", rms_linear(&frames));
    println!("  true  roll/pitch/yaw {:?}", q.euler_angles());
    println!("  final roll/pitch/yaw {:?}", last.q.euler_angles());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = GaitParams { ebac: 0.1, vigor: 1.0, stride_hz: 1.8, sway_gain: 2.0, heading: 1.0, tilt: (0.1, -0.05) };
    let walk = gait_recording("P01", evening_start(0), &g, 100.0, 30.0, &mut rng);
    let frames = attitude_filter(&walk, FilterGains::default());
    println!("walking: rms linear acceleration {:.3} m/s²", rms_linear(&frames));

    let mut dump = Vec::new();
    write_attitude_csv(&frames[..4], &mut dump).unwrap();
    print!("{}", String::from_utf8(dump).unwrap());
}

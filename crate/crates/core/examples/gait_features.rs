//! Extracts the 24 window-aggregated features from a sober and an
//! intoxicated synthetic walk.

use gaitbac::features::{featurize, FEATURE_NAMES};
use gaitbac::fusion::{attitude_filter, FilterGains};
use gaitbac::synth::{evening_start, gait_recording, GaitParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rows = Vec::new();
    for ebac in [0.0, 0.15] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GaitParams { ebac, vigor: 1.0, stride_hz: 1.8, sway_gain: 2.0, heading: 0.3, tilt: (0.05, 0.02) };
        let rec = gait_recording("P01", evening_start(0), &g, 100.0, 30.0, &mut rng);
        let frames = attitude_filter(&rec, FilterGains::default());
        rows.push(featurize(&rec, &frames, 256)?);
    }
    println!("{:<14} {:>12} {:>12}", "feature", "eBAC 0.00", "eBAC 0.15");
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        println!("{name:<14} {:>12.5} {:>12.5}", rows[0].values[j], rows[1].values[j]);
    }
    Ok(())
}

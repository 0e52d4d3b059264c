//! Writes a sensor log with jittered timestamps, reads it back and
//! resamples it onto a uniform 100 Hz grid.

use chrono::{TimeZone, Utc};
use gaitbac::ingest::{parse_sensor_log, resample, write_sensor_log, Recording, SensorSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples: Vec<SensorSample> = (0..500)
        .map(|k| {
            let t = k as f64 / 100.0 + if k % 3 == 1 { 0.002 } else { 0.0 };
            let s = (2.0 * std::f64::consts::PI * 1.8 * t).sin();
            SensorSample { t, accel: [0.3 * s, 0.0, 9.80665 + s], gyro: [0.1 * s, 0.0, 0.0], mag: [20.0, 0.0, -40.0] }
        })
        .collect();
    let session = Utc.with_ymd_and_hms(2018, 4, 6, 20, 3, 0).unwrap();
    let rec = Recording::new("P01", session, samples)?;

    let dir = tempfile::tempdir()?;
    let path = write_sensor_log(&rec, dir.path())?;
    let parsed = parse_sensor_log(&path)?;
    println!("{}: {} samples, inferred rate {:.3} Hz", path.file_name().unwrap().to_string_lossy(), parsed.samples.len(), parsed.rate);

    let uniform = resample(&parsed, 100.0)?;
    let steps: Vec<f64> = uniform.samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    let (lo, hi) = steps.iter().fold((f64::MAX, f64::MIN), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    println!("resampled: {} samples, step range [{lo:.6}, {hi:.6}] s", uniform.samples.len());
    Ok(())
}

//! Sliding-window gait features.
//!
//! Four statistics per window (mean, population standard deviation,
//! inter-axis Pearson correlation, spectral energy) over the three axes of
//! linear acceleration and of rotation rate, 24 values in total. Windows
//! overlap by half; a recording's vector is the mean over its windows.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::fusion::AttitudeFrame;
use crate::ingest::Recording;

pub const N_FEATURES: usize = 24;
pub const DEFAULT_WINDOW: usize = 256;
pub const MIN_WINDOW: usize = 64;

/// Canonical feature order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "acc_mean_x", "acc_mean_y", "acc_mean_z",
    "acc_std_x", "acc_std_y", "acc_std_z",
    "acc_corr_xy", "acc_corr_xz", "acc_corr_yz",
    "acc_energy_x", "acc_energy_y", "acc_energy_z",
    "gyr_mean_x", "gyr_mean_y", "gyr_mean_z",
    "gyr_std_x", "gyr_std_y", "gyr_std_z",
    "gyr_corr_xy", "gyr_corr_xz", "gyr_corr_yz",
    "gyr_energy_x", "gyr_energy_y", "gyr_energy_z",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("recording has {n_samples} usable samples, window needs {window}")]
    RecordingTooShort { n_samples: usize, window: usize },
    #[error("window length {0} must be even and at least 64")]
    BadWindow(usize),
    #[error("no windows to aggregate")]
    EmptyWindowSet,
    #[error("feature file: {0}")]
    Format(String),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub recording_id: String,
    pub participant_id: String,
    pub session_time: DateTime<Utc>,
    pub values: [f64; N_FEATURES],
}

/// Half-overlapping windows `[start, start + w)`; any trailing remainder is dropped.
pub fn make_windows(n_samples: usize, w: usize) -> Result<Vec<Range<usize>>> {
    if w < MIN_WINDOW || !w.is_multiple_of(2) {
        return Err(FeatureError::BadWindow(w));
    }
    if n_samples < w {
        return Err(FeatureError::RecordingTooShort { n_samples, window: w });
    }
    let hop = w / 2;
    Ok((0..=(n_samples - w) / hop).map(|k| k * hop..k * hop + w).collect())
}

/// Spectral energy with a cached transform plan for one window length.
pub struct SpectralEnergy {
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectralEnergy {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buf: vec![Complex::default(); len],
            scratch,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Sum of squared DFT magnitudes over all bins (DC included), divided by
    /// the window length.
    pub fn energy(&mut self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.buf.len(), "window length mismatch");
        for (b, &v) in self.buf.iter_mut().zip(x) {
            *b = Complex::new(v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        self.buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64
    }
}

/// One-off energy of `x`. For many windows of equal length prefer [`SpectralEnergy`].
pub fn energy(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    SpectralEnergy::new(x.len()).energy(x)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn population_std(x: &[f64], m: f64) -> f64 {
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pearson correlation, 0 when either series has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Per-axis samples of one sensor stream, column-major.
pub struct AxisBlock<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
}

fn sensor_features(block: &AxisBlock<'_>, spectral: &mut SpectralEnergy, out: &mut [f64]) {
    let axes = [block.x, block.y, block.z];
    let means = axes.map(mean);
    for i in 0..3 {
        out[i] = means[i];
        out[3 + i] = population_std(axes[i], means[i]);
        out[9 + i] = spectral.energy(axes[i]);
    }
    out[6] = correlation(block.x, block.y);
    out[7] = correlation(block.x, block.z);
    out[8] = correlation(block.y, block.z);
}

/// The 24 features of one window, in canonical order.
pub fn window_features(acc: &AxisBlock<'_>, gyro: &AxisBlock<'_>, spectral: &mut SpectralEnergy) -> [f64; N_FEATURES] {
    let mut out = [0.0; N_FEATURES];
    sensor_features(acc, spectral, &mut out[..12]);
    sensor_features(gyro, spectral, &mut out[12..]);
    out
}

/// Element-wise mean across windows. Uses a running mean so that identical
/// windows reproduce their values exactly.
pub fn aggregate_features(per_window: &[[f64; N_FEATURES]]) -> Result<[f64; N_FEATURES]> {
    let (first, rest) = per_window.split_first().ok_or(FeatureError::EmptyWindowSet)?;
    let mut mean = *first;
    for (k, w) in rest.iter().enumerate() {
        let n = (k + 2) as f64;
        for (m, v) in mean.iter_mut().zip(w) {
            *m += (v - *m) / n;
        }
    }
    Ok(mean)
}

/// Features of a whole recording from its attitude frames. Warm-up frames are
/// dropped before windowing; gyro comes from the matching raw samples.
pub fn featurize(rec: &Recording, frames: &[AttitudeFrame], window: usize) -> Result<FeatureVector> {
    assert_eq!(rec.samples.len(), frames.len(), "one frame per sample");
    let keep: Vec<usize> = (0..frames.len()).filter(|&i| !frames[i].warmup).collect();
    let column = |f: &dyn Fn(usize) -> f64| keep.iter().map(|&i| f(i)).collect::<Vec<_>>();
    let lax = column(&|i| frames[i].linear_acc.x);
    let lay = column(&|i| frames[i].linear_acc.y);
    let laz = column(&|i| frames[i].linear_acc.z);
    let gx = column(&|i| rec.samples[i].gyro[0]);
    let gy = column(&|i| rec.samples[i].gyro[1]);
    let gz = column(&|i| rec.samples[i].gyro[2]);

    let mut spectral = SpectralEnergy::new(window);
    let per_window = make_windows(keep.len(), window)?
        .into_iter()
        .map(|r| {
            let acc = AxisBlock { x: &lax[r.clone()], y: &lay[r.clone()], z: &laz[r.clone()] };
            let gyr = AxisBlock { x: &gx[r.clone()], y: &gy[r.clone()], z: &gz[r] };
            window_features(&acc, &gyr, &mut spectral)
        })
        .collect::<Vec<_>>();
    Ok(FeatureVector {
        recording_id: rec.id(),
        participant_id: rec.participant_id.clone(),
        session_time: rec.session_time,
        values: aggregate_features(&per_window)?,
    })
}

pub fn feature_header() -> Vec<String> {
    ["recording_id", "participant_id", "session_time"]
        .into_iter()
        .chain(FEATURE_NAMES)
        .map(String::from)
        .collect()
}

pub fn write_feature_csv<W: Write>(rows: &[FeatureVector], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(feature_header())?;
    for fv in rows {
        let mut rec = vec![
            fv.recording_id.clone(),
            fv.participant_id.clone(),
            fv.session_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        ];
        rec.extend(fv.values.iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let fmt = |e: &dyn fmt::Display| FeatureError::Format(e.to_string());
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| fmt(&e))?;
    if header.iter().ne(feature_header().iter().map(String::as_str)) {
        return Err(FeatureError::Format("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| fmt(&e))?;
        let session_time = crate::ingest::parse_timestamp(&record[2])
            .ok_or_else(|| FeatureError::Format(format!("bad session_time `{}`", &record[2])))?;
        let mut values = [0.0; N_FEATURES];
        for (v, raw) in values.iter_mut().zip(record.iter().skip(3)) {
            *v = raw.parse().map_err(|e| fmt(&e))?;
        }
        rows.push(FeatureVector {
            recording_id: record[0].to_string(),
            participant_id: record[1].to_string(),
            session_time,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct O(w²) transform, independent of the fast path.
    fn energy_by_definition(x: &[f64]) -> f64 {
        let w = x.len();
        let mut total = 0.0;
        for k in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / w as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            total += re * re + im * im;
        }
        total / w as f64
    }

    #[test]
    fn window_counts() {
        let w = make_windows(3000, 256).unwrap();
        assert_eq!(w.len(), 22);
        assert_eq!(w.last().unwrap().start, 2688);
        assert!(w.windows(2).all(|p| p[1].start - p[0].start == 128));
        assert_eq!(make_windows(256, 256).unwrap(), vec![0..256]);
        assert_eq!(
            make_windows(255, 256),
            Err(FeatureError::RecordingTooShort { n_samples: 255, window: 256 })
        );
        assert_eq!(make_windows(1000, 63), Err(FeatureError::BadWindow(63)));
        assert_eq!(make_windows(1000, 66).unwrap().len(), (1000 - 66) / 33 + 1);
    }

    #[test]
    fn energy_small_cases() {
        assert_eq!(energy(&[0.0; 4]), 0.0);
        assert!((energy(&[1.0; 4]) - 4.0).abs() < 1e-12);
        assert!((energy(&[1.0, -1.0, 1.0, -1.0]) - 4.0).abs() < 1e-12);
        assert!((energy_by_definition(&[1.0; 4]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_blocks_give_zero_vector() {
        let z = vec![0.0; 64];
        let b = AxisBlock { x: &z, y: &z, z: &z };
        let mut s = SpectralEnergy::new(64);
        assert_eq!(window_features(&b, &b, &mut s), [0.0; N_FEATURES]);
    }

    #[test]
    fn identical_axes_correlate_fully() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let z: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).cos()).collect();
        let b = AxisBlock { x: &x, y: &x, z: &z };
        let zero = vec![0.0; 64];
        let g = AxisBlock { x: &zero, y: &zero, z: &zero };
        let f = window_features(&b, &g, &mut SpectralEnergy::new(64));
        assert!((f[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_mean() {
        let one = [[0.5; N_FEATURES]];
        assert_eq!(aggregate_features(&one).unwrap(), one[0]);
        assert_eq!(aggregate_features(&[[0.0; N_FEATURES], [2.0; N_FEATURES]]).unwrap(), [1.0; N_FEATURES]);
        let mut v = [0.0; N_FEATURES];
        v.iter_mut().enumerate().for_each(|(i, x)| *x = 0.1 * i as f64 - 0.7);
        assert_eq!(aggregate_features(&[v; 5]).unwrap(), v);
        assert_eq!(aggregate_features(&[]), Err(FeatureError::EmptyWindowSet));
    }

    #[test]
    fn feature_csv_round_trip() {
        let mut values = [0.0; N_FEATURES];
        values.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sqrt() / 7.0);
        let fv = FeatureVector {
            recording_id: "p01_20240315T210200Z".into(),
            participant_id: "p01".into(),
            session_time: crate::ingest::parse_timestamp("2024-03-15T21:02:00Z").unwrap(),
            values,
        };
        let mut buf = Vec::new();
        write_feature_csv(std::slice::from_ref(&fv), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("recording_id,participant_id,session_time,acc_mean_x,"));
        assert!(text.lines().next().unwrap().ends_with(",gyr_energy_z"));
        assert_eq!(read_feature_csv(buf.as_slice()).unwrap(), vec![fv]);
    }

    fn window_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![Just(64usize), Just(128), Just(256)]
            .prop_flat_map(|w| proptest::collection::vec(-20.0f64..20.0, w))
    }

    proptest! {
        #[test]
        fn parseval_and_direct_dft(x in window_strategy()) {
            let e = energy(&x);
            let time_domain: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((e - time_domain).abs() <= 1e-9 * time_domain.max(f64::MIN_POSITIVE));
            let direct = energy_by_definition(&x);
            prop_assert!((e - direct).abs() <= 1e-9 * direct.max(f64::MIN_POSITIVE));
            let m = mean(&x);
            prop_assert!(e / x.len() as f64 >= m * m - 1e-12);
        }

        #[test]
        fn correlation_symmetric_and_affine_invariant(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 8..64),
            scale in 0.1f64..10.0, shift in -3.0f64..3.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = correlation(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - correlation(&b, &a)).abs() < 1e-12);
            let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            prop_assert!((r - correlation(&a2, &b)).abs() < 1e-9);
        }
    }
}

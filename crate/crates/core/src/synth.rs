//! Synthetic drinking studies with a known eBAC to gait mapping.
//!
//! Every participant reports drinks hourly from 20:00 to 24:00 on Friday and
//! Saturday evenings; a random subset of prompts also yields a 30 s walking
//! recording a few minutes later. Gait is a sum of sinusoids at the stride
//! frequency plus band-limited lateral sway whose amplitude grows linearly
//! with eBAC. A per-recording vigor factor scales all gait amplitudes, so
//! eBAC is encoded in ratios of features rather than in any one of them.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ebac::{label_reports, EbacParams, Limb};
use crate::fusion::STANDARD_GRAVITY;
use crate::ingest::{ema_to_json, write_sensor_log, EmaReport, Participant, Recording, SensorSample, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub slots_per_evening: usize,
    pub n_evenings: usize,
    pub stride_hz: f64,
    /// Fractional increase of sway amplitude per 0.1 eBAC.
    pub sway_gain: f64,
    pub label_noise_sigma: f64,
    /// Probability that a prompt yields a usable recording.
    pub capture_prob: f64,
    pub rate: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 10,
            slots_per_evening: 5,
            n_evenings: 8,
            stride_hz: 1.8,
            sway_gain: 2.0,
            label_noise_sigma: 0.005,
            capture_prob: 0.32,
            rate: 100.0,
            duration_s: 30.0,
            seed: 20_180_401,
        }
    }
}

impl SynthConfig {
    pub fn is_valid(&self) -> bool {
        let counts = [self.n_participants, self.slots_per_evening, self.n_evenings];
        let reals = [self.stride_hz, self.sway_gain, self.rate, self.duration_s];
        counts.iter().all(|c| *c > 0)
            && reals.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.label_noise_sigma >= 0.0
            && self.capture_prob > 0.0
            && self.capture_prob <= 1.0
            && self.slots_per_evening <= 24
    }
}

/// Ground truth of one captured assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub recording_id: String,
    pub participant_id: String,
    pub report_time: DateTime<Utc>,
    /// eBAC from the drink log by the closed-form estimate.
    pub ebac: f64,
    /// Noisy eBAC that drove the gait signal.
    pub gait_ebac: f64,
    pub vigor: f64,
    pub limb: Limb,
}

#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub participants: Vec<(Participant, Vec<EmaReport>)>,
    pub recordings: Vec<Recording>,
    pub truth: Vec<TruthRow>,
}

/// Gait parameters of one recording.
#[derive(Debug, Clone, Copy)]
pub struct GaitParams {
    pub ebac: f64,
    pub vigor: f64,
    pub stride_hz: f64,
    pub sway_gain: f64,
    pub heading: f64,
    /// Device tilt about the walker's forward and lateral axes, radians.
    pub tilt: (f64, f64),
}

const FIRST_EVENING: (i32, u32, u32) = (2018, 4, 6);
const FIRST_SLOT_HOUR: u32 = 20;
const MAX_TILT: f64 = 10.0 * PI / 180.0;
const VIGOR_RANGE: (f64, f64) = (0.5, 2.0);
const WEIGHT_RANGE: (f64, f64) = (120.0, 240.0);
const P_DRINKING_EVENING: f64 = 0.7;
const P_STOP: f64 = 0.1;
const EBAC_SOFT_CAP: f64 = 0.16;
const HOURLY_RISE: (f64, f64) = (0.015, 0.045);
const SENSOR_RESOLUTION: f64 = 1e-6;

/// Device-frame oscillation amplitudes (m/s²) and phases of the gait
/// acceleration; the shared stride phase correlates the axes.
const ACC_AMP: [f64; 3] = [0.8, 0.5, 1.5];
const ACC_PHASE: [f64; 3] = [0.0, 0.8, 0.4];
/// Sway noise per axis at zero eBAC; the lateral axis sways most.
const ACC_SWAY: [f64; 3] = [0.15, 0.15, 0.2];
const GYRO_AMP: [f64; 3] = [0.3, 0.2, 0.15];
const GYRO_PHASE: [f64; 3] = [0.3, 0.0, 1.1];
const GYRO_SWAY: [f64; 3] = [0.05, 0.04, 0.03];
const SWAY_CORRELATION: f64 = 0.5;
/// Pull of the attitude back toward its resting value, 1/s.
const ATTITUDE_RESTORE: f64 = 0.5;
const RAMP_S: f64 = 1.0;
const ACC_NOISE: f64 = 0.02;
const GYRO_NOISE: f64 = 0.005;
const MAG_NOISE: f64 = 0.2;
const EARTH_FIELD: [f64; 3] = [20.0, 0.0, -40.0];

fn quantize(v: f64) -> f64 {
    (v / SENSOR_RESOLUTION).round() * SENSOR_RESOLUTION
}

pub fn evening_start(evening: usize) -> DateTime<Utc> {
    let (y, m, d) = FIRST_EVENING;
    let friday = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");
    let date = friday + Duration::days(7 * (evening / 2) as i64 + (evening % 2) as i64);
    Utc.from_utc_datetime(&date.and_hms_opt(FIRST_SLOT_HOUR, 0, 0).expect("valid hour"))
}

/// Unit-variance AR(1) sequence.
fn ar1(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = normal.sample(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = rho * x + innovation * normal.sample(rng);
            v
        })
        .collect()
}

fn device_orientation(heading: f64, tilt: (f64, f64)) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(0.0, 0.0, heading) * UnitQuaternion::from_euler_angles(tilt.0, tilt.1, 0.0)
}

/// Sensor samples for attitudes `qs` (one more than samples; device to world)
/// and device-frame linear accelerations `lin`. Gyro readings are the body
/// rates carrying each attitude to the next.
fn render(qs: &[UnitQuaternion<f64>], lin: &[Vector3<f64>], rate: f64, noise: Option<&mut ChaCha8Rng>) -> Vec<SensorSample> {
    debug_assert_eq!(qs.len(), lin.len() + 1);
    let dt = 1.0 / rate;
    let gravity = Vector3::new(0.0, 0.0, -STANDARD_GRAVITY);
    let field = Vector3::from(EARTH_FIELD);
    let mut rng = noise;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut jitter = |s: f64| match rng.as_deref_mut() {
        Some(r) => s * unit.sample(r),
        None => 0.0,
    };
    lin.iter()
        .enumerate()
        .map(|(k, a)| {
            let q = qs[k];
            let acc = a + q.inverse_transform_vector(&gravity);
            let gyro = (q.inverse() * qs[k + 1]).scaled_axis() / dt;
            let mag = q.inverse_transform_vector(&field);
            let mut s = SensorSample {
                t: k as f64 / rate,
                accel: [0.0; 3],
                gyro: [0.0; 3],
                mag: [0.0; 3],
            };
            for i in 0..3 {
                s.accel[i] = quantize(acc[i] + jitter(ACC_NOISE));
                s.gyro[i] = quantize(gyro[i] + jitter(GYRO_NOISE));
                s.mag[i] = quantize(mag[i] + jitter(MAG_NOISE));
            }
            s
        })
        .collect()
}

/// Sway amplitude multiplier at a given eBAC.
pub fn sway_factor(ebac: f64, sway_gain: f64) -> f64 {
    1.0 + sway_gain * ebac / 0.1
}

/// One walking recording. Acceleration and body rate on each device axis are
/// a stride-frequency sinusoid plus band-limited sway noise whose amplitude is
/// multiplied by [`sway_factor`]; vigor scales both.
pub fn gait_recording(
    participant_id: &str,
    session_time: DateTime<Utc>,
    g: &GaitParams,
    rate: f64,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> Recording {
    let n = (duration_s * rate).round() as usize + 1;
    let dt = 1.0 / rate;
    let sway = sway_factor(g.ebac, g.sway_gain);
    let acc_noise: Vec<Vec<f64>> = (0..3).map(|_| ar1(n, SWAY_CORRELATION, rng)).collect();
    let gyro_noise: Vec<Vec<f64>> = (0..3).map(|_| ar1(n, SWAY_CORRELATION, rng)).collect();
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let w = 2.0 * PI * g.stride_hz;
    let rest = device_orientation(g.heading, g.tilt);

    let mut qs = Vec::with_capacity(n + 1);
    let mut lin = Vec::with_capacity(n);
    let mut q = rest;
    qs.push(q);
    for k in 0..n {
        let t = k as f64 * dt;
        let env = (t / RAMP_S).min(1.0);
        let s = w * t + phase;
        let a = Vector3::from_fn(|i, _| env * (g.vigor * ACC_AMP[i] * (s + ACC_PHASE[i]).sin() + g.vigor * ACC_SWAY[i] * sway * acc_noise[i][k]));
        let pull = (q.inverse() * rest).scaled_axis() * ATTITUDE_RESTORE;
        let omega = Vector3::from_fn(|i, _| {
            env * (g.vigor * GYRO_AMP[i] * (s + GYRO_PHASE[i]).cos() + g.vigor * GYRO_SWAY[i] * sway * gyro_noise[i][k]) + pull[i]
        });
        lin.push(a);
        q *= UnitQuaternion::from_scaled_axis(omega * dt);
        qs.push(q);
    }
    let samples = render(&qs, &lin, rate, Some(rng));
    Recording::new(participant_id, session_time, samples).expect("synthetic recording satisfies ingest invariants")
}

/// A motionless, noise-free device held at `attitude`.
pub fn stationary_recording(
    participant_id: &str,
    session_time: DateTime<Utc>,
    attitude: UnitQuaternion<f64>,
    rate: f64,
    duration_s: f64,
) -> Recording {
    let n = (duration_s * rate).round() as usize + 1;
    let samples = render(&vec![attitude; n + 1], &vec![Vector3::zeros(); n], rate, None);
    Recording::new(participant_id, session_time, samples).expect("synthetic recording satisfies ingest invariants")
}

/// Drink counts per slot of one evening.
fn evening_drinks(
    slots: usize,
    p: &Participant,
    start: DateTime<Utc>,
    params: &EbacParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut drinks = vec![0.0; slots];
    if !rng.random_bool(P_DRINKING_EVENING) {
        return drinks;
    }
    let first = rng.random_range(0..slots.min(3));
    let mut reports: Vec<EmaReport> = Vec::new();
    for (s, d) in drinks.iter_mut().enumerate() {
        let t = start + Duration::hours(s as i64);
        if s >= first {
            let current = crate::ebac::ebac_at(&reports, p, t, params);
            if s > first && rng.random_bool(P_STOP) {
                break;
            }
            if current < EBAC_SOFT_CAP {
                // Enough drinks to raise eBAC by the drawn hourly increment net of elimination.
                let rise = rng.random_range(HOURLY_RISE.0..HOURLY_RISE.1) + params.metabolism_rate;
                let per_drink = params.gender_constant(p.sex) / (params.drink_divisor * p.weight_lbs);
                *d = (rise / per_drink).round().max(1.0);
            }
        }
        reports.push(EmaReport { participant_id: p.id.clone(), timestamp: t, drinks: *d });
    }
    drinks
}

/// Generates a whole study. Identical configs give identical studies.
pub fn generate_study(cfg: &SynthConfig) -> SynthStudy {
    let params = EbacParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.label_noise_sigma.max(0.0)).expect("finite sigma");
    let mut participants = Vec::new();
    let mut recordings = Vec::new();
    let mut truth = Vec::new();

    for i in 0..cfg.n_participants {
        let p = Participant {
            id: format!("P{:02}", i + 1),
            sex: if rng.random_bool(0.5) { Sex::Male } else { Sex::Female },
            weight_lbs: rng.random_range(WEIGHT_RANGE.0..WEIGHT_RANGE.1).round(),
        };
        let mut reports = Vec::new();
        for e in 0..cfg.n_evenings {
            let start = evening_start(e);
            let drinks = evening_drinks(cfg.slots_per_evening, &p, start, &params, &mut rng);
            for (s, d) in drinks.into_iter().enumerate() {
                reports.push(EmaReport {
                    participant_id: p.id.clone(),
                    timestamp: start + Duration::hours(s as i64),
                    drinks: d,
                });
            }
        }
        for label in label_reports(&p, &reports, &params) {
            if !rng.random_bool(cfg.capture_prob) {
                continue;
            }
            let gait_ebac = (label.ebac + noise.sample(&mut rng)).max(0.0);
            let delay = Duration::seconds(rng.random_range(120..=360));
            let g = GaitParams {
                ebac: gait_ebac,
                vigor: rng.random_range(VIGOR_RANGE.0..VIGOR_RANGE.1),
                stride_hz: cfg.stride_hz,
                sway_gain: cfg.sway_gain,
                heading: rng.random_range(-PI..PI),
                tilt: (rng.random_range(-MAX_TILT..MAX_TILT), rng.random_range(-MAX_TILT..MAX_TILT)),
            };
            let rec = gait_recording(&p.id, label.t + delay, &g, cfg.rate, cfg.duration_s, &mut rng);
            truth.push(TruthRow {
                recording_id: rec.id(),
                participant_id: p.id.clone(),
                report_time: label.t,
                ebac: label.ebac,
                gait_ebac,
                vigor: g.vigor,
                limb: label.limb,
            });
            recordings.push(rec);
        }
        participants.push((p, reports));
    }
    SynthStudy { participants, recordings, truth }
}

pub const TRUTH_HEADER: &str = "recording_id,participant_id,report_time,ebac,gait_ebac,vigor,limb";

pub fn truth_csv(rows: &[TruthRow]) -> String {
    let mut out = format!("{TRUTH_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.recording_id,
            r.participant_id,
            r.report_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            r.ebac,
            r.gait_ebac,
            r.vigor,
            r.limb.as_str()
        ));
    }
    out
}

/// Writes `recordings/*.csv`, `ema/*.json` and `truth.csv` under `dir`.
pub fn write_study(study: &SynthStudy, dir: &Path) -> io::Result<()> {
    let rec_dir = dir.join("recordings");
    let ema_dir = dir.join("ema");
    fs::create_dir_all(&rec_dir)?;
    fs::create_dir_all(&ema_dir)?;
    for rec in &study.recordings {
        write_sensor_log(rec, &rec_dir)?;
    }
    for (p, reports) in &study.participants {
        fs::write(ema_dir.join(format!("{}.json", p.id)), ema_to_json(p, reports))?;
    }
    fs::write(dir.join("truth.csv"), truth_csv(&study.truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebac::ebac_at;
    use crate::fusion::{attitude_filter, FilterGains};

    fn small() -> SynthConfig {
        SynthConfig { n_participants: 3, duration_s: 5.0, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let a = generate_study(&small());
        let b = generate_study(&small());
        assert_eq!(a.recordings, b.recordings);
        assert_eq!(a.truth, b.truth);
        let c = generate_study(&SynthConfig { seed: 3, ..small() });
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn truth_matches_formula() {
        let s = generate_study(&small());
        let params = EbacParams::default();
        for row in &s.truth {
            let (p, reports) = s.participants.iter().find(|(p, _)| p.id == row.participant_id).unwrap();
            assert_eq!(row.ebac, ebac_at(reports, p, row.report_time, &params));
            assert!(row.gait_ebac >= 0.0);
        }
    }

    #[test]
    fn default_scale_and_limb_mix() {
        let cfg = SynthConfig { duration_s: 2.0, ..Default::default() };
        let s = generate_study(&cfg);
        let n = s.truth.len();
        assert!((100..=160).contains(&n), "{n} points");
        let share = |l: Limb| s.truth.iter().filter(|r| r.limb == l).count() as f64 / n as f64;
        assert!((0.35..0.6).contains(&share(Limb::None)), "{}", share(Limb::None));
        assert!((0.3..0.55).contains(&share(Limb::Ascending)), "{}", share(Limb::Ascending));
        assert!((0.04..0.2).contains(&share(Limb::Descending)), "{}", share(Limb::Descending));
        assert!(s.truth.iter().any(|r| r.ebac >= 0.08));
    }

    fn lateral_std_with_gain(ebac: f64, sway_gain: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GaitParams { ebac, vigor: 1.0, stride_hz: 1.8, sway_gain, heading: 0.7, tilt: (0.02, -0.01) };
        let rec = gait_recording("P01", evening_start(0), &g, 100.0, 30.0, &mut rng);
        let frames = attitude_filter(&rec, FilterGains::default());
        let y: Vec<f64> = frames.iter().filter(|f| !f.warmup).map(|f| f.linear_acc.y).collect();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
    }

    fn lateral_std(ebac: f64, seed: u64) -> f64 {
        lateral_std_with_gain(ebac, 2.0, seed)
    }

    #[test]
    fn ebac_signal_grows_with_sway_gain() {
        let contrast = |gain: f64| lateral_std_with_gain(0.2, gain, 3) - lateral_std_with_gain(0.0, gain, 3);
        let c: Vec<f64> = [0.0, 0.5, 2.0, 4.0].into_iter().map(contrast).collect();
        assert!(c[0].abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[1] > w[0]), "{c:?}");
    }

    #[test]
    fn sway_grows_with_ebac() {
        for seed in 0..5 {
            assert!(lateral_std(0.2, seed) > lateral_std(0.0, seed));
        }
    }

    #[test]
    fn stationary_readings() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0);
        let rec = stationary_recording("P01", evening_start(0), q, 100.0, 2.0);
        let s = rec.samples[10];
        let norm = s.accel.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - STANDARD_GRAVITY).abs() < 1e-5);
        assert!(s.gyro.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn written_corpus_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let study = generate_study(&SynthConfig { n_participants: 1, duration_s: 2.0, ..Default::default() });
        write_study(&study, dir.path()).unwrap();
        for rec in &study.recordings {
            let path = dir.path().join("recordings").join(format!("{}.csv", rec.id()));
            assert_eq!(&crate::ingest::parse_sensor_log(&path).unwrap(), rec);
        }
        let (p, reports) = crate::ingest::parse_ema_log(&dir.path().join("ema/P01.json")).unwrap();
        assert_eq!((&p, &reports), (&study.participants[0].0, &study.participants[0].1));
    }
}

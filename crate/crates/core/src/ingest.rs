//! Sensor recordings and drink-report logs.
//!
//! Sensor logs are CSV files named `<participant_id>_<YYYYMMDDTHHMMSSZ>.csv`
//! with the header `t,ax,ay,az,gx,gy,gz,mx,my,mz`. Accelerometer values are
//! m/s² including gravity, gyro rad/s, magnetometer µT. Drink reports are
//! JSON documents, one per participant.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SENSOR_HEADER: [&str; 10] = ["t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];

/// Format of the timestamp part of a recording filename.
pub const BASIC_TIMESTAMP: &str = "%Y%m%dT%H%M%SZ";

/// Minimum accepted recording length in seconds.
pub const MIN_DURATION_S: f64 = 1.0;
/// Minimum accepted number of samples.
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("row {row}: malformed field `{field}`: {reason}")]
    MalformedRow { row: usize, field: String, reason: String },
    #[error("row {row}: time {t} precedes previous sample at {previous}")]
    NonMonotoneTime { row: usize, t: f64, previous: f64 },
    #[error("recording too short: {samples} samples over {duration} s")]
    TooShort { samples: usize, duration: f64 },
    #[error("filename `{0}` does not follow <participant_id>_<YYYYMMDDTHHMMSSZ>.csv")]
    BadFilename(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("report {index}: negative drink count {drinks}")]
    NegativeDrinks { index: usize, drinks: f64 },
    #[error("unknown sex `{0}` (expected \"male\" or \"female\")")]
    UnknownSex(String),
    #[error("invalid resample rate {0}")]
    InvalidRate(f64),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t: f64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    pub mag: [f64; 3],
}

impl SensorSample {
    fn channels(&self) -> [f64; 9] {
        let [ax, ay, az] = self.accel;
        let [gx, gy, gz] = self.gyro;
        let [mx, my, mz] = self.mag;
        [ax, ay, az, gx, gy, gz, mx, my, mz]
    }

    fn from_channels(t: f64, c: [f64; 9]) -> Self {
        Self {
            t,
            accel: [c[0], c[1], c[2]],
            gyro: [c[3], c[4], c[5]],
            mag: [c[6], c[7], c[8]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub participant_id: String,
    pub session_time: DateTime<Utc>,
    pub samples: Vec<SensorSample>,
    pub rate: f64,
}

impl Recording {
    /// Builds a recording from samples, inferring the rate and checking the
    /// length and ordering invariants.
    pub fn new(
        participant_id: impl Into<String>,
        session_time: DateTime<Utc>,
        samples: Vec<SensorSample>,
    ) -> Result<Self> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t < pair[0].t {
                return Err(IngestError::NonMonotoneTime {
                    row: i + 2,
                    t: pair[1].t,
                    previous: pair[0].t,
                });
            }
        }
        let duration = match (samples.first(), samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        };
        if samples.len() < MIN_SAMPLES || duration < MIN_DURATION_S {
            return Err(IngestError::TooShort {
                samples: samples.len(),
                duration,
            });
        }
        let rate = (samples.len() - 1) as f64 / duration;
        Ok(Self {
            participant_id: participant_id.into(),
            session_time,
            samples,
            rate,
        })
    }

    /// `<participant_id>_<basic timestamp>`, also the file stem on disk.
    pub fn id(&self) -> String {
        format!(
            "{}_{}",
            self.participant_id,
            self.session_time.format(BASIC_TIMESTAMP)
        )
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t) - self.samples.first().map_or(0.0, |s| s.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub sex: Sex,
    pub weight_lbs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaReport {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub drinks: f64,
}

/// Splits `<participant_id>_<YYYYMMDDTHHMMSSZ>.csv` into its two parts.
pub fn parse_recording_filename(path: &Path) -> Result<(String, DateTime<Utc>)> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let stem = name
        .strip_suffix(".csv")
        .ok_or_else(|| IngestError::BadFilename(name.clone()))?;
    let (pid, ts) = stem
        .rsplit_once('_')
        .ok_or_else(|| IngestError::BadFilename(name.clone()))?;
    if pid.is_empty() {
        return Err(IngestError::BadFilename(name));
    }
    let naive = NaiveDateTime::parse_from_str(ts, BASIC_TIMESTAMP)
        .map_err(|_| IngestError::BadFilename(name.clone()))?;
    Ok((pid.to_string(), naive.and_utc()))
}

/// Reads a sensor log, taking participant and session time from the filename.
pub fn parse_sensor_log(path: &Path) -> Result<Recording> {
    let (pid, session_time) = parse_recording_filename(path)?;
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_sensor_csv(file, pid, session_time)
}

/// Parses sensor CSV content from any reader.
pub fn read_sensor_csv<R: Read>(
    reader: R,
    participant_id: impl Into<String>,
    session_time: DateTime<Utc>,
) -> Result<Recording> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| IngestError::MalformedRow {
        row: 1,
        field: "header".into(),
        reason: e.to_string(),
    })?;
    if header.iter().ne(SENSOR_HEADER.iter().copied()) {
        return Err(IngestError::BadHeader {
            expected: SENSOR_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| IngestError::MalformedRow {
            row,
            field: String::new(),
            reason: e.to_string(),
        })?;
        let mut values = [0.0; 10];
        for (slot, (name, raw)) in values.iter_mut().zip(SENSOR_HEADER.iter().zip(record.iter())) {
            let v: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
                row,
                field: (*name).into(),
                reason: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(IngestError::MalformedRow {
                    row,
                    field: (*name).into(),
                    reason: format!("`{raw}` is not finite"),
                });
            }
            *slot = v;
        }
        let mut channels = [0.0; 9];
        channels.copy_from_slice(&values[1..]);
        samples.push(SensorSample::from_channels(values[0], channels));
    }
    Recording::new(participant_id, session_time, samples)
}

/// Writes the CSV body of a recording. Values use the shortest exact decimal
/// representation, so parsing the output reproduces every sample bit for bit.
pub fn write_sensor_csv<W: Write>(rec: &Recording, writer: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SENSOR_HEADER)?;
    for s in &rec.samples {
        let mut fields = Vec::with_capacity(10);
        fields.push(s.t.to_string());
        fields.extend(s.channels().iter().map(f64::to_string));
        wtr.write_record(&fields)?;
    }
    wtr.flush()
}

/// Writes `<dir>/<recording id>.csv` and returns the path.
pub fn write_sensor_log(rec: &Recording, dir: &Path) -> std::io::Result<PathBuf> {
    let path = dir.join(format!("{}.csv", rec.id()));
    let file = fs::File::create(&path)?;
    write_sensor_csv(rec, std::io::BufWriter::new(file))?;
    Ok(path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmaDocument {
    participant_id: String,
    sex: String,
    weight_lbs: f64,
    reports: Vec<EmaEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmaEntry {
    timestamp: String,
    drinks: f64,
}

/// Accepts RFC 3339 timestamps, plus offset-free ISO-8601 forms read as UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", BASIC_TIMESTAMP]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|n| n.and_utc())
}

pub fn parse_ema_log(path: &Path) -> Result<(Participant, Vec<EmaReport>)> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ema_str(&text)
}

pub fn parse_ema_str(text: &str) -> Result<(Participant, Vec<EmaReport>)> {
    let doc: EmaDocument =
        serde_json::from_str(text).map_err(|e| IngestError::SchemaError(e.to_string()))?;
    let sex = match doc.sex.as_str() {
        "male" => Sex::Male,
        "female" => Sex::Female,
        other => return Err(IngestError::UnknownSex(other.to_string())),
    };
    if !(doc.weight_lbs > 50.0 && doc.weight_lbs < 600.0) {
        return Err(IngestError::SchemaError(format!(
            "weight_lbs {} outside (50, 600)",
            doc.weight_lbs
        )));
    }
    if doc.participant_id.is_empty() {
        return Err(IngestError::SchemaError("empty participant_id".into()));
    }
    let mut reports = Vec::with_capacity(doc.reports.len());
    for (index, entry) in doc.reports.into_iter().enumerate() {
        if !entry.drinks.is_finite() || entry.drinks < 0.0 {
            return Err(IngestError::NegativeDrinks {
                index,
                drinks: entry.drinks,
            });
        }
        let timestamp = parse_timestamp(&entry.timestamp).ok_or_else(|| {
            IngestError::SchemaError(format!("report {index}: bad timestamp `{}`", entry.timestamp))
        })?;
        reports.push(EmaReport {
            participant_id: doc.participant_id.clone(),
            timestamp,
            drinks: entry.drinks,
        });
    }
    reports.sort_by_key(|r| r.timestamp);
    let participant = Participant {
        id: doc.participant_id,
        sex,
        weight_lbs: doc.weight_lbs,
    };
    Ok((participant, reports))
}

pub fn ema_to_json(participant: &Participant, reports: &[EmaReport]) -> String {
    let doc = EmaDocument {
        participant_id: participant.id.clone(),
        sex: participant.sex.as_str().to_string(),
        weight_lbs: participant.weight_lbs,
        reports: reports
            .iter()
            .map(|r| EmaEntry {
                timestamp: r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                drinks: r.drinks,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("EMA document serializes")
}

/// Linearly interpolates every channel onto the grid
/// `t_first + k / target_rate`, for all grid points inside the recording.
pub fn resample(rec: &Recording, target_rate: f64) -> Result<Recording> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(IngestError::InvalidRate(target_rate));
    }
    let samples = &rec.samples;
    let t0 = samples[0].t;
    let span = rec.duration();
    // Small slack so a last knot that lands on the grid up to rounding is kept.
    let n_out = (span * target_rate + 1e-9).floor() as usize + 1;
    if (n_out as f64) < target_rate {
        return Err(IngestError::TooShort {
            samples: n_out,
            duration: span,
        });
    }

    let mut out = Vec::with_capacity(n_out);
    let mut j = 0;
    for k in 0..n_out {
        let t = t0 + k as f64 / target_rate;
        while j + 2 < samples.len() && samples[j + 1].t <= t {
            j += 1;
        }
        let (a, b) = if samples.len() == 1 {
            (&samples[0], &samples[0])
        } else {
            (&samples[j], &samples[j + 1])
        };
        let dt = b.t - a.t;
        let frac = if dt > 0.0 { ((t - a.t) / dt).clamp(0.0, 1.0) } else { 1.0 };
        let (ca, cb) = (a.channels(), b.channels());
        let mut c = [0.0; 9];
        for i in 0..9 {
            c[i] = ca[i] + frac * (cb[i] - ca[i]);
        }
        out.push(SensorSample::from_channels(t, c));
    }
    Ok(Recording {
        participant_id: rec.participant_id.clone(),
        session_time: rec.session_time,
        samples: out,
        rate: target_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn session() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 15, 21, 2, 0).unwrap()
    }

    fn csv_rows(n: usize, dt: f64) -> String {
        let mut s = String::from("t,ax,ay,az,gx,gy,gz,mx,my,mz\n");
        for i in 0..n {
            let t = i as f64 * dt;
            s.push_str(&format!("{t},0.1,0.2,-9.8,0,0,0.01,20,0,-40\n"));
        }
        s
    }

    #[test]
    fn rate_inferred_from_span() {
        let mut s = String::from("t,ax,ay,az,gx,gy,gz,mx,my,mz\n");
        for i in 0..3000 {
            s.push_str(&format!("{:.2},0,0,-9.8,0,0,0,20,0,-40\n", i as f64 / 100.0));
        }
        let rec = read_sensor_csv(s.as_bytes(), "p01", session()).unwrap();
        assert_eq!(rec.samples.len(), 3000);
        assert_eq!(rec.samples.last().unwrap().t, 29.99);
        assert!((rec.rate - 2999.0 / 29.99).abs() < 1e-12);
        assert!((rec.rate - 100.0).abs() < 1e-9);
    }

    #[test]
    fn fifty_rows_is_too_short() {
        let err = read_sensor_csv(csv_rows(50, 0.01).as_bytes(), "p", session()).unwrap_err();
        assert!(matches!(err, IngestError::TooShort { samples: 50, .. }));
    }

    #[test]
    fn nan_field_is_malformed() {
        let mut s = csv_rows(200, 0.01);
        s.push_str("2.0,NaN,0,0,0,0,0,0,0,0\n");
        let err = read_sensor_csv(s.as_bytes(), "p", session()).unwrap_err();
        match err {
            IngestError::MalformedRow { row, field, .. } => {
                assert_eq!(row, 202);
                assert_eq!(field, "ax");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_malformed() {
        let mut s = csv_rows(200, 0.01);
        s.push_str("2.0,0,abc,0,0,0,0,0,0,0\n");
        assert!(matches!(
            read_sensor_csv(s.as_bytes(), "p", session()),
            Err(IngestError::MalformedRow { .. })
        ));
    }

    #[test]
    fn backwards_time_rejected() {
        let mut s = csv_rows(200, 0.01);
        s.push_str("1.0,0,0,0,0,0,0,0,0,0\n");
        assert!(matches!(
            read_sensor_csv(s.as_bytes(), "p", session()),
            Err(IngestError::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn crlf_and_header_checks() {
        let s = csv_rows(150, 0.01).replace('\n', "\r\n");
        assert_eq!(read_sensor_csv(s.as_bytes(), "p", session()).unwrap().samples.len(), 150);
        let bad = csv_rows(150, 0.01).replacen("mz", "mag_z", 1);
        assert!(matches!(
            read_sensor_csv(bad.as_bytes(), "p", session()),
            Err(IngestError::BadHeader { .. })
        ));
    }

    #[test]
    fn filename_convention() {
        let (pid, t) = parse_recording_filename(Path::new("/x/p_07_20240315T210200Z.csv")).unwrap();
        assert_eq!(pid, "p_07");
        assert_eq!(t, session());
        assert!(parse_recording_filename(Path::new("p07.csv")).is_err());
        assert!(parse_recording_filename(Path::new("p07_2024.csv")).is_err());
    }

    const EMA: &str = r#"{"participant_id": "p01", "sex": "female", "weight_lbs": 130,
        "reports": [
          {"timestamp": "2024-03-15T23:00:00Z", "drinks": 1},
          {"timestamp": "2024-03-15T20:00:00Z", "drinks": 0},
          {"timestamp": "2024-03-15T22:00:00Z", "drinks": 2},
          {"timestamp": "2024-03-16T00:00:00Z", "drinks": 0},
          {"timestamp": "2024-03-15T21:00:00+00:00", "drinks": 1.5}
        ]}"#;

    #[test]
    fn ema_sorted_ascending() {
        let (p, reports) = parse_ema_str(EMA).unwrap();
        assert_eq!(p.sex, Sex::Female);
        assert_eq!(p.weight_lbs, 130.0);
        assert_eq!(reports.len(), 5);
        assert!(reports.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert_eq!(reports[1].drinks, 1.5);
    }

    #[test]
    fn ema_errors() {
        let neg = EMA.replace("\"drinks\": 2", "\"drinks\": -1");
        assert!(matches!(parse_ema_str(&neg), Err(IngestError::NegativeDrinks { drinks, .. }) if drinks == -1.0));
        let sex = EMA.replace("female", "other");
        assert!(matches!(parse_ema_str(&sex), Err(IngestError::UnknownSex(s)) if s == "other"));
        let missing = EMA.replace("\"weight_lbs\": 130,", "");
        assert!(matches!(parse_ema_str(&missing), Err(IngestError::SchemaError(_))));
        let heavy = EMA.replace("130", "900");
        assert!(matches!(parse_ema_str(&heavy), Err(IngestError::SchemaError(_))));
    }

    #[test]
    fn ema_json_round_trip() {
        let (p, reports) = parse_ema_str(EMA).unwrap();
        let (p2, reports2) = parse_ema_str(&ema_to_json(&p, &reports)).unwrap();
        assert_eq!(p, p2);
        assert_eq!(reports, reports2);
    }

    #[test]
    fn resample_midpoint() {
        let mut samples = Vec::new();
        for i in 0..=150 {
            let v = if i == 1 { 1.0 } else { 0.0 };
            samples.push(SensorSample {
                t: i as f64 * 0.02,
                accel: [v, 0.0, 0.0],
                gyro: [0.0; 3],
                mag: [0.0; 3],
            });
        }
        let rec = Recording::new("p", session(), samples).unwrap();
        let out = resample(&rec, 100.0).unwrap();
        assert_eq!(out.rate, 100.0);
        assert!((out.samples[1].t - 0.01).abs() < 1e-15);
        assert!((out.samples[1].accel[0] - 0.5).abs() < 1e-12);
        assert!((out.samples[2].accel[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_too_short() {
        let samples: Vec<_> = (0..120)
            .map(|i| SensorSample { t: i as f64 * 0.01, accel: [0.0; 3], gyro: [0.0; 3], mag: [0.0; 3] })
            .collect();
        let rec = Recording::new("p", session(), samples).unwrap();
        assert_eq!(resample(&rec, 50.0).unwrap().samples.len(), 60);
        assert!(matches!(resample(&rec, 0.0), Err(IngestError::InvalidRate(_))));
        // Built by hand: 0.5 s does not hold one second of output.
        let short = Recording { samples: rec.samples[..51].to_vec(), ..rec };
        assert!(matches!(resample(&short, 100.0), Err(IngestError::TooShort { .. })));
    }
}

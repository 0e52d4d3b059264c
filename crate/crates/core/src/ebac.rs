//! Estimated blood alcohol concentration from self-reported drinks.
//!
//! `eBAC = (c / divisor) · (gender_constant / weight_lbs) − metabolism · h`,
//! clamped at zero, where `c` counts standard drinks reported in the current
//! drinking episode and `h` is the hours since the episode's first drink.
//! An episode ends once its eBAC has decayed to zero.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::ingest::{EmaReport, Participant, Sex};

/// Legal driving limit on the decimal g/dL scale.
pub const LEGAL_LIMIT: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbacParams {
    pub male_constant: f64,
    pub female_constant: f64,
    /// Elimination per hour.
    pub metabolism_rate: f64,
    pub drink_divisor: f64,
}

impl Default for EbacParams {
    fn default() -> Self {
        Self {
            male_constant: 7.5,
            female_constant: 9.0,
            metabolism_rate: 0.016,
            drink_divisor: 2.0,
        }
    }
}

impl EbacParams {
    pub fn gender_constant(&self, sex: Sex) -> f64 {
        match sex {
            Sex::Male => self.male_constant,
            Sex::Female => self.female_constant,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.male_constant, self.female_constant, self.metabolism_rate, self.drink_divisor]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// The closed-form estimate for `drinks` consumed over `hours`.
pub fn ebac_formula(drinks: f64, hours: f64, sex: Sex, weight_lbs: f64, params: &EbacParams) -> f64 {
    let v = (drinks / params.drink_divisor) * (params.gender_constant(sex) / weight_lbs)
        - params.metabolism_rate * hours;
    v.max(0.0)
}

fn hours_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_milliseconds() as f64 / 3_600_000.0
}

/// eBAC at time `t` given time-sorted reports.
pub fn ebac_at(reports: &[EmaReport], p: &Participant, t: DateTime<Utc>, params: &EbacParams) -> f64 {
    let mut episode: Option<(DateTime<Utc>, f64)> = None;
    let eval = |ep: Option<(DateTime<Utc>, f64)>, at: DateTime<Utc>| {
        ep.map_or(0.0, |(start, c)| ebac_formula(c, hours_between(start, at), p.sex, p.weight_lbs, params))
    };
    for r in reports.iter().take_while(|r| r.timestamp <= t) {
        if episode.is_some() && eval(episode, r.timestamp) <= 0.0 {
            episode = None;
        }
        if r.drinks > 0.0 {
            match &mut episode {
                Some((_, c)) => *c += r.drinks,
                None => episode = Some((r.timestamp, r.drinks)),
            }
        }
    }
    eval(episode, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limb {
    None,
    Ascending,
    Descending,
}

impl Limb {
    pub fn as_str(self) -> &'static str {
        match self {
            Limb::None => "none",
            Limb::Ascending => "ascending",
            Limb::Descending => "descending",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Limb::None),
            "ascending" => Some(Limb::Ascending),
            "descending" => Some(Limb::Descending),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbacLabel {
    pub participant_id: String,
    pub t: DateTime<Utc>,
    pub ebac: f64,
    pub limb: Limb,
}

/// Limb tags for one participant's time-ordered eBAC series.
pub fn label_limb(participant_id: &str, series: &[(DateTime<Utc>, f64)]) -> Vec<EbacLabel> {
    let mut prev: Option<(f64, Limb)> = None;
    series
        .iter()
        .map(|&(t, ebac)| {
            let limb = match prev {
                None | Some((_, Limb::None)) if ebac == 0.0 => Limb::None,
                None => Limb::Ascending,
                Some((p, _)) if ebac > p => Limb::Ascending,
                Some((p, _)) if ebac < p => Limb::Descending,
                Some((_, inherited)) if ebac > 0.0 => inherited,
                Some(_) => Limb::None,
            };
            prev = Some((ebac, limb));
            EbacLabel {
                participant_id: participant_id.to_string(),
                t,
                ebac,
                limb,
            }
        })
        .collect()
}

/// Labels at every report time of one participant.
pub fn label_reports(p: &Participant, reports: &[EmaReport], params: &EbacParams) -> Vec<EbacLabel> {
    let series: Vec<_> = reports
        .iter()
        .map(|r| (r.timestamp, ebac_at(reports, p, r.timestamp, params)))
        .collect();
    label_limb(&p.id, &series)
}

#[derive(Debug, Error, PartialEq)]
pub enum EbacError {
    #[error("recording {recording_id} is equidistant from labels at {a} and {b}")]
    AmbiguousMatch {
        recording_id: String,
        a: DateTime<Utc>,
        b: DateTime<Utc>,
    },
    #[error("label file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub features: FeatureVector,
    pub label: EbacLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinOutcome {
    pub matched: Vec<LabeledPoint>,
    /// Recording ids with no same-participant label within tolerance.
    pub unmatched: Vec<String>,
}

pub const DEFAULT_JOIN_TOLERANCE_MIN: i64 = 10;

/// Pairs each feature vector with its nearest same-participant label inside
/// `tolerance`. Unmatched recordings are listed, not dropped silently.
pub fn join_labels(
    features: &[FeatureVector],
    labels: &[EbacLabel],
    tolerance: Duration,
) -> Result<JoinOutcome, EbacError> {
    let mut by_participant: BTreeMap<&str, Vec<&EbacLabel>> = BTreeMap::new();
    for l in labels {
        by_participant.entry(&l.participant_id).or_default().push(l);
    }
    let mut out = JoinOutcome::default();
    for fv in features {
        let mut best: Option<(Duration, &EbacLabel)> = None;
        let mut tie: Option<&EbacLabel> = None;
        for &l in by_participant.get(fv.participant_id.as_str()).into_iter().flatten() {
            let d = (l.t - fv.session_time).abs();
            if d > tolerance {
                continue;
            }
            match best {
                Some((bd, _)) if d > bd => {}
                Some((bd, _)) if d == bd => tie = Some(l),
                _ => {
                    best = Some((d, l));
                    tie = None;
                }
            }
        }
        match (best, tie) {
            (Some((_, a)), Some(b)) => {
                return Err(EbacError::AmbiguousMatch {
                    recording_id: fv.recording_id.clone(),
                    a: a.t.min(b.t),
                    b: a.t.max(b.t),
                })
            }
            (Some((_, l)), None) => out.matched.push(LabeledPoint {
                features: fv.clone(),
                label: l.clone(),
            }),
            (None, _) => out.unmatched.push(fv.recording_id.clone()),
        }
    }
    Ok(out)
}

pub const LABEL_HEADER: [&str; 4] = ["participant_id", "timestamp", "ebac", "limb"];

pub fn write_label_csv<W: Write>(labels: &[EbacLabel], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(LABEL_HEADER)?;
    for l in labels {
        wtr.write_record([
            l.participant_id.clone(),
            l.t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            l.ebac.to_string(),
            l.limb.as_str().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_label_csv<R: Read>(reader: R) -> Result<Vec<EbacLabel>, EbacError> {
    let err = |m: String| EbacError::Format(m);
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().ne(LABEL_HEADER) {
        return Err(err("unexpected header".into()));
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| err(e.to_string()))?;
            Ok(EbacLabel {
                participant_id: r[0].to_string(),
                t: crate::ingest::parse_timestamp(&r[1]).ok_or_else(|| err(format!("bad timestamp `{}`", &r[1])))?,
                ebac: r[2].parse().map_err(|_| err(format!("bad ebac `{}`", &r[2])))?,
                limb: Limb::parse(&r[3]).ok_or_else(|| err(format!("bad limb `{}`", &r[3])))?,
            })
        })
        .collect()
}

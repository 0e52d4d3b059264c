//! Turns one evening of drink reports into eBAC labels with limb tags.

use chrono::{Duration, TimeZone, Utc};
use gaitbac::ebac::{label_reports, EbacParams};
use gaitbac::ingest::{EmaReport, Participant, Sex};

fn main() {
    let p = Participant { id: "P07".into(), sex: Sex::Female, weight_lbs: 140.0 };
    let start = Utc.with_ymd_and_hms(2018, 4, 7, 20, 0, 0).unwrap();
    let reports: Vec<EmaReport> = [0.0, 2.0, 2.0, 0.0, 0.0]
        .iter()
        .enumerate()
        .map(|(h, &drinks)| EmaReport { participant_id: p.id.clone(), timestamp: start + Duration::hours(h as i64), drinks })
        .collect();
    for label in label_reports(&p, &reports, &EbacParams::default()) {
        println!("{}  eBAC {:.4}  {}", label.t.format("%H:%M"), label.ebac, label.limb.as_str());
    }
}

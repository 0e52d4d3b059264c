//! Generates the default synthetic study and summarises its labels.

use gaitbac::ebac::Limb;
use gaitbac::synth::{generate_study, write_study, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let study = generate_study(&SynthConfig::default());
    let n = study.truth.len();
    let count = |l: Limb| study.truth.iter().filter(|r| r.limb == l).count();
    println!("{} participants, {} recordings", study.participants.len(), study.recordings.len());
    println!(
        "not drinking {}, ascending {}, descending {}",
        count(Limb::None),
        count(Limb::Ascending),
        count(Limb::Descending)
    );
    let peak = study.truth.iter().map(|r| r.ebac).fold(0.0, f64::max);
    let over = study.truth.iter().filter(|r| r.ebac >= 0.08).count();
    println!("peak eBAC {peak:.3}; {over} of {n} at or above 0.08");

    let dir = tempfile::tempdir()?;
    write_study(&study, dir.path())?;
    let files = std::fs::read_dir(dir.path().join("recordings"))?.count();
    println!("wrote {files} sensor logs under {}", dir.path().display());
    Ok(())
}

//! Runs every stage on a small synthetic corpus and prints the comparison
//! table.

use gaitbac::pipeline::{Command, Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = tempfile::tempdir()?;
    let mut cfg = PipelineConfig { data_dir: root.path().join("data"), out_dir: root.path().join("out"), ..Default::default() };
    cfg.parse("synth.n_participants = 6\nmlp.max_epochs = 100\n")?;
    cfg.validate()?;
    let pipeline = Pipeline::new(cfg);
    let written = pipeline.run(&Command::Pipeline { synth: true })?;
    println!("config hash {}; {} artifacts", pipeline.config_hash(), written.len());
    print!("{}", pipeline.read_report()?.to_table());
    Ok(())
}

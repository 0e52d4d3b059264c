//! Gait-based estimation of blood alcohol concentration from phone sensors.
//!
//! The pipeline runs sensor recordings through attitude estimation and
//! gravity removal, reduces each recording to 24 windowed gait features,
//! labels assessments with eBAC computed from drink reports, and regresses
//! eBAC with a Bayesian-regularized network alongside linear and
//! support-vector baselines.

pub mod baselines;
pub mod dataset;
pub mod eval;
pub mod ebac;
pub mod features;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;

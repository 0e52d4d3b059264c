//! Orchestration behind the command-line tool: layered configuration,
//! subcommands chaining the library stages, and artifact persistence.
//!
//! Every artifact is written atomically and accompanied by a
//! `<artifact>.manifest.json` recording its SHA-256, the configuration hash
//! and the seed that produced it, plus digests of the files it was derived
//! from. Reruns with the same inputs and configuration reproduce every
//! manifest byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::Duration;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{fit_ols, fit_svr, BaselineError, LinearModel, SvrConfig, SvrModel};
use crate::dataset::{self, DatasetError, Split, SplitManifest, SplitSpec};
use crate::ebac::{self, EbacLabel, EbacParams, LabeledPoint, Limb, DEFAULT_JOIN_TOLERANCE_MIN};
use crate::eval::{self, ComparisonReport, EvalError, ModelEvaluation, DEFAULT_BINS};
use crate::features::{self, FeatureVector, DEFAULT_WINDOW, MIN_WINDOW};
use crate::fusion::{attitude_filter, write_attitude_csv, FilterGains};
use crate::ingest::{self, ema_to_json, parse_timestamp, write_sensor_csv};
use crate::model::{self, MlpFile, ModelError, TrainConfig};
use crate::synth::{self, SynthConfig};

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const JOINED_FILE: &str = "joined.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const CORPUS_MANIFEST: &str = "corpus.manifest.json";
pub const NOMINAL_RATE: f64 = 100.0;

const JOINED_HEADER: [&str; 5] = ["recording_id", "participant_id", "label_time", "ebac", "limb"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{}", self.describe())]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub path: Option<PathBuf>,
    pub message: String,
}

/// Machine-readable form of a [`PipelineError`].
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: ErrorKind,
    pub exit_code: i32,
    pub path: Option<String>,
    pub message: &'a str,
}

impl PipelineError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, path: None, message: message.into() }
    }

    pub fn data(path: &Path, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Data, path: Some(path.to_path_buf()), message: message.to_string() }
    }

    pub fn numerical(path: &Path, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Numerical, path: Some(path.to_path_buf()), message: message.to_string() }
    }

    fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }

    fn describe(&self) -> String {
        match &self.path {
            Some(p) => format!("{}: {}", p.display(), self.message),
            None => self.message.clone(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    pub fn record(&self) -> ErrorRecord<'_> {
        ErrorRecord {
            error: self.kind,
            exit_code: self.exit_code(),
            path: self.path.as_ref().map(|p| p.display().to_string()),
            message: &self.message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.record()).expect("error record serializes")
    }
}

fn model_error(path: &Path, e: ModelError) -> PipelineError {
    match e {
        ModelError::NonFinite | ModelError::SingularNormalMatrix => PipelineError::numerical(path, e),
        _ => PipelineError::data(path, e),
    }
}

fn baseline_error(path: &Path, e: BaselineError) -> PipelineError {
    PipelineError::data(path, e)
}

fn eval_error(path: &Path, e: EvalError) -> PipelineError {
    PipelineError::data(path, e)
}

fn dataset_error(path: &Path, e: DatasetError) -> PipelineError {
    match e {
        DatasetError::BadFractions => PipelineError::config(e.to_string()),
        _ => PipelineError::data(path, e),
    }
}

/// All tunable settings of a run. Keys are `section.name`; see
/// [`PipelineConfig::keys`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub rate: f64,
    pub window: usize,
    pub gains: FilterGains,
    pub ebac: EbacParams,
    pub join_tolerance_min: i64,
    pub split: SplitSpec,
    pub mlp: TrainConfig,
    pub svr: SvrConfig,
    pub synth: SynthConfig,
    pub histogram_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            rate: NOMINAL_RATE,
            window: DEFAULT_WINDOW,
            gains: FilterGains::default(),
            ebac: EbacParams::default(),
            join_tolerance_min: DEFAULT_JOIN_TOLERANCE_MIN,
            split: SplitSpec::default(),
            mlp: TrainConfig::default(),
            svr: SvrConfig::default(),
            synth: SynthConfig::default(),
            histogram_bins: DEFAULT_BINS,
        }
    }
}

enum Slot<'a> {
    Path(&'a mut PathBuf),
    Real(&'a mut f64),
    Count(&'a mut usize),
    Int(&'a mut i64),
    Seed(&'a mut u64),
}

impl Slot<'_> {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        fn parse<T: FromStr>(raw: &str) -> Result<T, String> {
            raw.parse().map_err(|_| format!("cannot parse `{raw}`"))
        }
        match self {
            Slot::Path(p) => **p = PathBuf::from(raw),
            Slot::Real(v) => **v = parse(raw)?,
            Slot::Count(v) => **v = parse(raw)?,
            Slot::Int(v) => **v = parse(raw)?,
            Slot::Seed(v) => **v = parse(raw)?,
        }
        Ok(())
    }

    fn render(&self) -> String {
        match self {
            Slot::Path(p) => p.display().to_string(),
            Slot::Real(v) => v.to_string(),
            Slot::Count(v) => v.to_string(),
            Slot::Int(v) => v.to_string(),
            Slot::Seed(v) => v.to_string(),
        }
    }
}

impl PipelineConfig {
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        use Slot::*;
        vec![
            ("paths.data_dir", Path(&mut self.data_dir)),
            ("paths.out_dir", Path(&mut self.out_dir)),
            ("ingest.rate", Real(&mut self.rate)),
            ("features.window", Count(&mut self.window)),
            ("fusion.gain_tilt", Real(&mut self.gains.tilt)),
            ("fusion.gain_yaw", Real(&mut self.gains.yaw)),
            ("ebac.male_constant", Real(&mut self.ebac.male_constant)),
            ("ebac.female_constant", Real(&mut self.ebac.female_constant)),
            ("ebac.metabolism_rate", Real(&mut self.ebac.metabolism_rate)),
            ("ebac.drink_divisor", Real(&mut self.ebac.drink_divisor)),
            ("join.tolerance_min", Int(&mut self.join_tolerance_min)),
            ("split.train_frac", Real(&mut self.split.train_frac)),
            ("split.val_frac", Real(&mut self.split.val_frac)),
            ("split.test_frac", Real(&mut self.split.test_frac)),
            ("split.seed", Seed(&mut self.split.seed)),
            ("mlp.n_hidden", Count(&mut self.mlp.n_hidden)),
            ("mlp.max_epochs", Count(&mut self.mlp.max_epochs)),
            ("mlp.mu_init", Real(&mut self.mlp.mu_init)),
            ("mlp.min_grad", Real(&mut self.mlp.min_grad)),
            ("mlp.seed", Seed(&mut self.mlp.seed)),
            ("svr.c", Real(&mut self.svr.c)),
            ("svr.epsilon", Real(&mut self.svr.epsilon)),
            ("svr.gamma", Real(&mut self.svr.gamma)),
            ("svr.tolerance", Real(&mut self.svr.tolerance)),
            ("synth.n_participants", Count(&mut self.synth.n_participants)),
            ("synth.slots_per_evening", Count(&mut self.synth.slots_per_evening)),
            ("synth.n_evenings", Count(&mut self.synth.n_evenings)),
            ("synth.stride_hz", Real(&mut self.synth.stride_hz)),
            ("synth.sway_gain", Real(&mut self.synth.sway_gain)),
            ("synth.label_noise_sigma", Real(&mut self.synth.label_noise_sigma)),
            ("synth.capture_prob", Real(&mut self.synth.capture_prob)),
            ("synth.rate", Real(&mut self.synth.rate)),
            ("synth.duration_s", Real(&mut self.synth.duration_s)),
            ("synth.seed", Seed(&mut self.synth.seed)),
            ("eval.histogram_bins", Count(&mut self.histogram_bins)),
        ]
    }

    /// Every recognised key, in declaration order.
    pub fn keys() -> Vec<&'static str> {
        Self::default().slots().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its textual value. Does not validate.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), PipelineError> {
        let mut slots = self.slots();
        let (_, slot) = slots
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| PipelineError::config(format!("unknown key `{key}`")))?;
        slot.set(raw.trim()).map_err(|m| PipelineError::config(format!("{key}: {m}")))
    }

    /// Key to canonical value, sorted by key.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let mut copy = self.clone();
        copy.slots().into_iter().map(|(k, s)| (k, s.render())).collect()
    }

    /// Serializes every key; [`PipelineConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over the sorted non-path entries. Paths are excluded so that
    /// relocating inputs or outputs leaves the hash unchanged.
    pub fn hash(&self) -> String {
        let canonical: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("paths."))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        sha256_hex(canonical.as_bytes())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment;
    /// a key may appear once per text.
    pub fn parse(&mut self, text: &str) -> Result<(), PipelineError> {
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), i + 1) {
                return Err(PipelineError::config(format!("line {}: `{key}` already set on line {first}", i + 1)));
            }
            self.set(key, value).map_err(|e| PipelineError::config(format!("line {}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `overrides` in order; validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::config(e.to_string()).at(path))?;
            cfg.parse(&text).map_err(|e| e.at(path))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |key: &str, why: &str| Err(PipelineError::config(format!("{key}: {why}")));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.rate) {
            return bad("ingest.rate", "must be positive");
        }
        if self.window < MIN_WINDOW || !self.window.is_multiple_of(2) {
            return bad("features.window", "must be even and at least 64");
        }
        for (key, g) in [("fusion.gain_tilt", self.gains.tilt), ("fusion.gain_yaw", self.gains.yaw)] {
            if !(0.0..=1.0).contains(&g) {
                return bad(key, "must lie in [0, 1]");
            }
        }
        if !self.ebac.is_valid() {
            return bad("ebac", "constants must be positive");
        }
        if self.join_tolerance_min <= 0 {
            return bad("join.tolerance_min", "must be positive");
        }
        if self.split.validate().is_err() {
            return bad("split", "fractions must be positive and sum to 1");
        }
        if self.mlp.n_hidden == 0 || self.mlp.max_epochs == 0 {
            return bad("mlp", "n_hidden and max_epochs must be at least 1");
        }
        if !positive(self.mlp.mu_init) || !non_negative(self.mlp.min_grad) {
            return bad("mlp", "mu_init must be positive and min_grad non-negative");
        }
        if !positive(self.svr.c) || !positive(self.svr.gamma) || !positive(self.svr.tolerance) || !non_negative(self.svr.epsilon) {
            return bad("svr", "c, gamma and tolerance must be positive, epsilon non-negative");
        }
        if !self.synth.is_valid() {
            return bad("synth", "all settings must be positive and capture_prob at most 1");
        }
        if self.histogram_bins == 0 {
            return bad("eval.histogram_bins", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Ols,
    Svr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Ols, ModelKind::Svr];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Ols => "ols",
            ModelKind::Svr => "svr",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected mlp, ols or svr)"))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Linear baseline on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFile {
    #[serde(flatten)]
    pub model: LinearModel,
    pub seed: u64,
    pub config_hash: String,
}

/// Support vector baseline on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrFile {
    #[serde(flatten)]
    pub model: SvrModel,
    pub seed: u64,
    pub config_hash: String,
}

/// Any trained model, tagged by `model_type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
pub enum SavedModel {
    Mlp(MlpFile),
    Ols(LinearFile),
    Svr(SvrFile),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Mlp(_) => ModelKind::Mlp,
            SavedModel::Ols(_) => ModelKind::Ols,
            SavedModel::Svr(_) => ModelKind::Svr,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Clamped predictions, one per row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, String> {
        match self {
            SavedModel::Mlp(f) => f.clone().into_model()?.predict(x).map_err(|e| e.to_string()),
            SavedModel::Ols(f) => f.model.predict(x).map_err(|e| e.to_string()),
            SavedModel::Svr(f) => f.model.predict(x).map_err(|e| e.to_string()),
        }
    }
}

/// Digest of one file an artifact depends on or contains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub sha256: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contents: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::data(path, e);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(path.file_name().unwrap_or_default());
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::data(path, e))
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::data(path, e))
}

fn require_dir(path: &Path) -> Result<(), PipelineError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::data(path, "directory does not exist"))
    }
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, PipelineError> {
    require_dir(dir)?;
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::data(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::data(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Runs the stages against one configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    config_hash: String,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let config_hash = config.hash();
        Self { config, config_hash }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    pub fn model_path(&self, kind: ModelKind) -> PathBuf {
        self.out("models").join(format!("{kind}.json"))
    }

    pub fn eval_path(&self, kind: ModelKind) -> PathBuf {
        self.out("eval").join(format!("{kind}.json"))
    }

    pub fn histogram_path(&self, kind: ModelKind) -> PathBuf {
        self.out("histograms").join(format!("{kind}.csv"))
    }

    fn relative(&self, path: &Path) -> String {
        let strip = |root: &Path, tag: &str| path.strip_prefix(root).ok().map(|r| format!("{tag}/{}", r.display()));
        strip(&self.config.out_dir, "out")
            .or_else(|| strip(&self.config.data_dir, "data"))
            .unwrap_or_else(|| path.display().to_string())
    }

    fn digest(&self, path: &Path, bytes: &[u8]) -> FileDigest {
        FileDigest { path: self.relative(path), sha256: sha256_hex(bytes) }
    }

    fn digest_file(&self, path: &Path) -> Result<FileDigest, PipelineError> {
        Ok(self.digest(path, &read_bytes(path)?))
    }

    /// Writes `bytes` to `path` together with its manifest.
    fn emit(&self, path: &Path, bytes: &[u8], seed: u64, inputs: Vec<FileDigest>) -> Result<PathBuf, PipelineError> {
        write_atomic(path, bytes)?;
        let manifest = Manifest {
            artifact: self.relative(path),
            sha256: sha256_hex(bytes),
            config_hash: self.config_hash.clone(),
            seed,
            inputs,
            contents: Vec::new(),
        };
        write_atomic(&manifest_path(path), manifest_json(&manifest).as_bytes())?;
        Ok(path.to_path_buf())
    }

    /// Writes the synthetic corpus into the data directory.
    pub fn synth(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let study = synth::generate_study(&self.config.synth);
        let dir = &self.config.data_dir;
        let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        for rec in &study.recordings {
            let mut buf = Vec::new();
            write_sensor_csv(rec, &mut buf).expect("in-memory write");
            files.push((dir.join("recordings").join(format!("{}.csv", rec.id())), buf));
        }
        for (p, reports) in &study.participants {
            files.push((dir.join("ema").join(format!("{}.json", p.id)), ema_to_json(p, reports).into_bytes()));
        }
        files.push((dir.join("truth.csv"), synth::truth_csv(&study.truth).into_bytes()));

        let mut contents = Vec::new();
        for (path, bytes) in &files {
            write_atomic(path, bytes)?;
            contents.push(self.digest(path, bytes));
        }
        let listing: String = contents.iter().map(|d| format!("{} {}\n", d.sha256, d.path)).collect();
        let manifest = Manifest {
            artifact: self.relative(dir),
            sha256: sha256_hex(listing.as_bytes()),
            config_hash: self.config_hash.clone(),
            seed: self.config.synth.seed,
            inputs: Vec::new(),
            contents,
        };
        let path = dir.join(CORPUS_MANIFEST);
        write_atomic(&path, manifest_json(&manifest).as_bytes())?;
        Ok(vec![path])
    }

    /// Recordings to one feature row each, fanned out across threads; rows
    /// keep file-name order. With `dump_attitude`, also writes the filter
    /// trace of every recording.
    pub fn featurize(&self, dump_attitude: bool) -> Result<Vec<PathBuf>, PipelineError> {
        require_dir(&self.config.data_dir)?;
        let files = list_files(&self.config.data_dir.join("recordings"), "csv")?;
        let cfg = &self.config;
        type Row = (FeatureVector, FileDigest, Option<Vec<u8>>);
        let rows: Vec<Row> = files
            .par_iter()
            .map(|path| -> Result<Row, PipelineError> {
                let bytes = read_bytes(path)?;
                let rec = ingest::parse_sensor_log(path).map_err(|e| PipelineError::data(path, e))?;
                let rec = ingest::resample(&rec, cfg.rate).map_err(|e| PipelineError::data(path, e))?;
                let frames = attitude_filter(&rec, cfg.gains);
                let fv = features::featurize(&rec, &frames, cfg.window).map_err(|e| PipelineError::data(path, e))?;
                let dump = dump_attitude.then(|| {
                    let mut buf = Vec::new();
                    write_attitude_csv(&frames, &mut buf).expect("in-memory write");
                    buf
                });
                Ok((fv, self.digest(path, &bytes), dump))
            })
            .collect::<Result<_, _>>()?;
        if rows.is_empty() {
            return Err(PipelineError::data(&cfg.data_dir.join("recordings"), "no recordings found"));
        }

        let mut written = Vec::new();
        let mut fvs = Vec::with_capacity(rows.len());
        let mut inputs = Vec::with_capacity(rows.len());
        for (fv, digest, dump) in rows {
            if let Some(bytes) = dump {
                let path = self.out("attitude").join(format!("{}.csv", fv.recording_id));
                written.push(self.emit(&path, &bytes, 0, vec![digest.clone()])?);
            }
            fvs.push(fv);
            inputs.push(digest);
        }
        let mut buf = Vec::new();
        features::write_feature_csv(&fvs, &mut buf).expect("in-memory write");
        written.push(self.emit(&self.out(FEATURES_FILE), &buf, 0, inputs)?);
        Ok(written)
    }

    /// EMA logs to eBAC labels for every report.
    pub fn label(&self) -> Result<Vec<PathBuf>, PipelineError> {
        require_dir(&self.config.data_dir)?;
        let files = list_files(&self.config.data_dir.join("ema"), "json")?;
        if files.is_empty() {
            return Err(PipelineError::data(&self.config.data_dir.join("ema"), "no EMA logs found"));
        }
        let mut labels = Vec::new();
        let mut inputs = Vec::new();
        for path in &files {
            inputs.push(self.digest_file(path)?);
            let (p, reports) = ingest::parse_ema_log(path).map_err(|e| PipelineError::data(path, e))?;
            labels.extend(ebac::label_reports(&p, &reports, &self.config.ebac));
        }
        let mut buf = Vec::new();
        ebac::write_label_csv(&labels, &mut buf).expect("in-memory write");
        Ok(vec![self.emit(&self.out(LABELS_FILE), &buf, 0, inputs)?])
    }

    fn read_features(&self) -> Result<Vec<FeatureVector>, PipelineError> {
        let path = self.out(FEATURES_FILE);
        features::read_feature_csv(read_bytes(&path)?.as_slice()).map_err(|e| PipelineError::data(&path, e))
    }

    /// Pairs every feature row with its nearest label.
    pub fn join(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let feats = self.read_features()?;
        let labels_path = self.out(LABELS_FILE);
        let labels = ebac::read_label_csv(read_bytes(&labels_path)?.as_slice())
            .map_err(|e| PipelineError::data(&labels_path, e))?;
        let tolerance = Duration::minutes(self.config.join_tolerance_min);
        let joined = ebac::join_labels(&feats, &labels, tolerance).map_err(|e| PipelineError::data(&labels_path, e))?;

        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(JOINED_HEADER).expect("in-memory write");
        for p in &joined.matched {
            wtr.write_record([
                p.features.recording_id.as_str(),
                p.label.participant_id.as_str(),
                &p.label.t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                &p.label.ebac.to_string(),
                p.label.limb.as_str(),
            ])
            .expect("in-memory write");
        }
        let buf = wtr.into_inner().expect("in-memory write");
        let inputs = vec![self.digest_file(&self.out(FEATURES_FILE))?, self.digest_file(&labels_path)?];
        Ok(vec![self.emit(&self.out(JOINED_FILE), &buf, 0, inputs)?])
    }

    /// Rebuilds labeled points from the feature table and the join table.
    pub fn load_points(&self) -> Result<Vec<LabeledPoint>, PipelineError> {
        let by_id: BTreeMap<String, FeatureVector> =
            self.read_features()?.into_iter().map(|f| (f.recording_id.clone(), f)).collect();
        let path = self.out(JOINED_FILE);
        let bad = |m: String| PipelineError::data(&path, m);
        let bytes = read_bytes(&path)?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        if rdr.headers().map_err(|e| bad(e.to_string()))?.iter().ne(JOINED_HEADER) {
            return Err(bad("unexpected header".into()));
        }
        let mut points = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let features = by_id
                .get(&row[0])
                .cloned()
                .ok_or_else(|| bad(format!("recording `{}` missing from {FEATURES_FILE}", &row[0])))?;
            let label = EbacLabel {
                participant_id: row[1].to_string(),
                t: parse_timestamp(&row[2]).ok_or_else(|| bad(format!("bad label_time `{}`", &row[2])))?,
                ebac: row[3].parse().map_err(|_| bad(format!("bad ebac `{}`", &row[3])))?,
                limb: Limb::parse(&row[4]).ok_or_else(|| bad(format!("bad limb `{}`", &row[4])))?,
            };
            points.push(LabeledPoint { features, label });
        }
        Ok(points)
    }

    /// Seeded train/validation/test partition of the joined points.
    pub fn split(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let points = self.load_points()?;
        let joined = self.out(JOINED_FILE);
        let split = dataset::split(&points, &self.config.split).map_err(|e| dataset_error(&joined, e))?;
        let manifest = SplitManifest::new(&split, self.config.split.seed);
        let json = serde_json::to_string_pretty(&manifest).expect("split serializes") + "\n";
        let inputs = vec![self.digest_file(&joined)?];
        Ok(vec![self.emit(&self.out(SPLIT_FILE), json.as_bytes(), self.config.split.seed, inputs)?])
    }

    pub fn load_split(&self) -> Result<Split, PipelineError> {
        let points = self.load_points()?;
        let path = self.out(SPLIT_FILE);
        let manifest: SplitManifest =
            serde_json::from_str(&read_text(&path)?).map_err(|e| PipelineError::data(&path, e))?;
        manifest
            .resolve(&points)
            .ok_or_else(|| PipelineError::data(&path, format!("split names recordings missing from {JOINED_FILE}")))
    }

    fn seed_of(&self, kind: ModelKind) -> u64 {
        match kind {
            ModelKind::Mlp => self.config.mlp.seed,
            ModelKind::Ols | ModelKind::Svr => self.config.split.seed,
        }
    }

    /// Fits one model on the training split.
    pub fn train(&self, kind: ModelKind) -> Result<Vec<PathBuf>, PipelineError> {
        let split = self.load_split()?;
        let (x, y) = dataset::design(&split.train);
        let path = self.model_path(kind);
        let hash = self.config_hash.clone();
        let seed = self.seed_of(kind);
        let mut written = Vec::new();
        let saved = match kind {
            ModelKind::Mlp => {
                let (m, log) = model::train(&x, &y, &self.config.mlp).map_err(|e| model_error(&path, e))?;
                let log_path = self.out("models").join("mlp_trainlog.csv");
                let inputs = vec![self.digest_file(&self.out(SPLIT_FILE))?];
                written.push(self.emit(&log_path, log.to_csv().as_bytes(), seed, inputs)?);
                SavedModel::Mlp(MlpFile::from_model(&m, &hash).map_err(|e| model_error(&path, e))?)
            }
            ModelKind::Ols => {
                let model = fit_ols(&x, &y).map_err(|e| baseline_error(&path, e))?;
                SavedModel::Ols(LinearFile { model, seed, config_hash: hash })
            }
            ModelKind::Svr => {
                let fit = fit_svr(&x, &y, &self.config.svr).map_err(|e| baseline_error(&path, e))?;
                SavedModel::Svr(SvrFile { model: fit.model, seed, config_hash: hash })
            }
        };
        let inputs = vec![self.digest_file(&self.out(FEATURES_FILE))?, self.digest_file(&self.out(JOINED_FILE))?, self.digest_file(&self.out(SPLIT_FILE))?];
        written.push(self.emit(&path, saved.to_json().as_bytes(), seed, inputs)?);
        Ok(written)
    }

    pub fn load_model(&self, kind: ModelKind) -> Result<SavedModel, PipelineError> {
        let path = self.model_path(kind);
        let saved = SavedModel::from_json(&read_text(&path)?).map_err(|e| PipelineError::data(&path, e))?;
        if saved.kind() != kind {
            return Err(PipelineError::data(&path, format!("holds a {} model, expected {kind}", saved.kind())));
        }
        Ok(saved)
    }

    /// Metrics of a stored model on every split, plus the train and test
    /// prediction errors for the histogram.
    pub fn assess(&self, kind: ModelKind, split: &Split) -> Result<(ModelEvaluation, String), PipelineError> {
        let saved = self.load_model(kind)?;
        let path = self.model_path(kind);
        let mut splits = Vec::new();
        let mut errors = BTreeMap::new();
        for (name, points) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let (x, y) = dataset::design(points);
            let p = saved.predict(&x).map_err(|m| PipelineError::data(&path, m))?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(PipelineError::numerical(&path, "non-finite prediction"));
            }
            splits.push(eval::evaluate(name, y.as_slice(), p.as_slice()).map_err(|e| eval_error(&path, e))?);
            errors.insert(name, eval::errors(y.as_slice(), p.as_slice()));
        }
        let histogram = eval::joint_histogram_csv(&errors["train"], &errors["test"], self.config.histogram_bins);
        Ok((ModelEvaluation { model: kind.to_string(), splits }, histogram))
    }

    fn eval_inputs(&self, kinds: &[ModelKind]) -> Result<Vec<FileDigest>, PipelineError> {
        let mut inputs = vec![self.digest_file(&self.out(JOINED_FILE))?, self.digest_file(&self.out(SPLIT_FILE))?];
        for &k in kinds {
            inputs.push(self.digest_file(&self.model_path(k))?);
        }
        Ok(inputs)
    }

    /// Writes one model's evaluation report and error histogram.
    pub fn evaluate(&self, kind: ModelKind) -> Result<Vec<PathBuf>, PipelineError> {
        let split = self.load_split()?;
        let (evaluation, histogram) = self.assess(kind, &split)?;
        let json = serde_json::to_string_pretty(&evaluation).expect("evaluation serializes") + "\n";
        let inputs = self.eval_inputs(&[kind])?;
        let seed = self.seed_of(kind);
        Ok(vec![
            self.emit(&self.eval_path(kind), json.as_bytes(), seed, inputs.clone())?,
            self.emit(&self.histogram_path(kind), histogram.as_bytes(), seed, inputs)?,
        ])
    }

    /// Comparison of all three models on every split.
    pub fn report(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let split = self.load_split()?;
        let mut models = Vec::new();
        let mut written = Vec::new();
        let inputs = self.eval_inputs(&ModelKind::ALL)?;
        for kind in ModelKind::ALL {
            let (evaluation, histogram) = self.assess(kind, &split)?;
            written.push(self.emit(&self.histogram_path(kind), histogram.as_bytes(), self.seed_of(kind), inputs.clone())?);
            models.push(evaluation);
        }
        let report = ComparisonReport { config_hash: self.config_hash.clone(), seed: self.config.split.seed, models };
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        written.push(self.emit(&self.out(REPORT_FILE), json.as_bytes(), self.config.split.seed, inputs.clone())?);
        written.push(self.emit(&self.out(TABLE_FILE), report.to_table().as_bytes(), self.config.split.seed, inputs)?);
        Ok(written)
    }

    /// Every stage in order, optionally starting from a fresh synthetic
    /// corpus.
    pub fn run_all(&self, with_synth: bool) -> Result<Vec<PathBuf>, PipelineError> {
        let mut written = Vec::new();
        if with_synth {
            written.extend(self.synth()?);
        }
        written.extend(self.featurize(false)?);
        written.extend(self.label()?);
        written.extend(self.join()?);
        written.extend(self.split()?);
        for kind in ModelKind::ALL {
            written.extend(self.train(kind)?);
            written.extend(self.evaluate(kind)?);
        }
        written.extend(self.report()?);
        Ok(written)
    }

    pub fn run(&self, command: &Command) -> Result<Vec<PathBuf>, PipelineError> {
        match *command {
            Command::Synth => self.synth(),
            Command::Featurize { dump_attitude } => self.featurize(dump_attitude),
            Command::Label => self.label(),
            Command::Join => self.join(),
            Command::Split => self.split(),
            Command::Train(kind) => self.train(kind),
            Command::Evaluate(kind) => self.evaluate(kind),
            Command::Report => self.report(),
            Command::Pipeline { synth } => self.run_all(synth),
        }
    }

    pub fn read_report(&self) -> Result<ComparisonReport, PipelineError> {
        let path = self.out(REPORT_FILE);
        serde_json::from_str(&read_text(&path)?).map_err(|e| PipelineError::data(&path, e))
    }
}

fn manifest_json(m: &Manifest) -> String {
    serde_json::to_string_pretty(m).expect("manifest serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Featurize { dump_attitude: bool },
    Label,
    Join,
    Split,
    Train(ModelKind),
    Evaluate(ModelKind),
    Report,
    Pipeline { synth: bool },
}

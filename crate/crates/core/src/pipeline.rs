//! Stage orchestration behind the command-line tool.
//!
//! A run directory is named after the SHA-256 digest of the effective
//! configuration, so one configuration always maps to one directory and
//! every stage reads its upstream artifacts from there. Each stage also
//! writes a manifest keyed by the digest of its inputs; an existing
//! manifest is never rewritten.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::copula::{estimate, pseudo_observations, BootstrapOptions, CopulaFit, Estimator, DEFAULT_BOOTSTRAP_REPS};
use crate::error::{Error, Result};
use crate::ingest::{
    aggregate_weekly, build_features, build_scenario_features, parse_daily_reader, read_scenario_csv, read_weekly_csv,
    split_train_test, write_daily_csv, write_scenario_csv, write_weekly_csv, ClaimAggregation, ScenarioSet,
    WeeklySeries,
};
use crate::marginals::{select_family_predictions, FamilySelection, MarginalFamily};
use crate::mlp::{predict, rmse, train, NetworkConfig, TrainedNetwork};
use crate::scenario::{simulate_world, WorldConfig};
use crate::selection::{candidate, enumerate_candidates, read_selection_csv, run_selection, write_selection_csv, SelectionReport};
use crate::tail::{
    compare_risk, default_z_grid, read_risk_csv, risk_curve, univariate_tail_curve, write_comparison_csv,
    write_risk_csv, Period, RiskCurve, RiskQuery,
};

/// Model used by `train` when neither the config nor a selection report names one.
pub const DEFAULT_MODEL_ID: u8 = 3;

/// Series id of control-period rows in `predictions.csv`.
pub const CONTROL_SERIES: &str = "control";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Daily CSV; defaults to the simulated control file in the run directory.
    pub daily: Option<PathBuf>,
    /// Scenario weekly CSV; defaults to the simulated scenario file.
    pub scenarios: Option<PathBuf>,
    pub week_origin: Option<NaiveDate>,
    pub aggregation: ClaimAggregation,
    pub city: String,
    /// Accepted scenario ids; defaults to the world's scenario names.
    pub scenario_ids: Option<Vec<String>>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            daily: None,
            scenarios: None,
            week_origin: None,
            aggregation: ClaimAggregation::Mean,
            city: "city".to_string(),
            scenario_ids: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub fraction: f64,
    /// Seeds for multi-seed medians; defaults to the network seed.
    pub seeds: Option<Vec<u64>>,
    /// Epoch override for selection runs.
    pub epochs: Option<usize>,
    /// Model trained by `train`; defaults to the selection winner, else 3.
    pub model_id: Option<u8>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            fraction: 0.8,
            seeds: None,
            epochs: None,
            model_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalSection {
    pub families: Vec<MarginalFamily>,
    /// Multiplier turning predictions into counts for discrete families.
    pub exposure: f64,
}

impl Default for MarginalSection {
    fn default() -> Self {
        MarginalSection {
            families: vec![MarginalFamily::Lognormal],
            exposure: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopulaSection {
    pub estimator: Estimator,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for CopulaSection {
    fn default() -> Self {
        CopulaSection {
            estimator: Estimator::TauInversion,
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    /// Explicit thresholds; otherwise a log-spaced grid over the pooled
    /// scenario predictions.
    pub z: Option<Vec<f64>>,
    pub grid_points: usize,
    pub lo_quantile: f64,
    pub hi_quantile: f64,
    pub mc_draws: usize,
    pub seed: u64,
    /// Another city's `risk_curve.csv` to compare against in `report`.
    pub compare_with: Option<PathBuf>,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection {
            z: None,
            grid_points: 50,
            lo_quantile: 0.5,
            hi_quantile: 0.999,
            mc_draws: 100_000,
            seed: 0,
            compare_with: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("claimrisk-out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; when set it replaces every section seed.
    pub seed: Option<u64>,
    pub world: WorldConfig,
    pub ingest: IngestSection,
    pub network: NetworkConfig,
    pub selection: SelectionSection,
    pub marginals: MarginalSection,
    pub copula: CopulaSection,
    pub risk: RiskSection,
    pub output: OutputSection,
}

fn config_err(pointer: &str, e: Error) -> Error {
    let msg = match e {
        Error::InvalidParameter(m) => m,
        other => other.to_string(),
    };
    Error::Config {
        pointer: pointer.to_string(),
        msg,
    }
}

fn check(cond: bool, pointer: &str, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config {
            pointer: pointer.to_string(),
            msg: msg.into(),
        })
    }
}

impl PipelineConfig {
    /// Parses JSON, reporting schema violations by JSON pointer, then
    /// validates every section.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            pointer: json_pointer(e.path()),
            msg: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate().map_err(|e| config_err("/world", e))?;
        NetworkConfig {
            input_dim: 1,
            ..self.network.clone()
        }
        .validate()
        .map_err(|e| config_err("/network", e))?;
        let s = &self.selection;
        check(
            s.fraction > 0.0 && s.fraction < 1.0,
            "/selection/fraction",
            format!("must lie in (0,1), got {}", s.fraction),
        )?;
        if let Some(seeds) = &s.seeds {
            check(!seeds.is_empty(), "/selection/seeds", "must not be empty")?;
        }
        if let Some(id) = s.model_id {
            candidate(id).map_err(|e| config_err("/selection/model_id", e))?;
        }
        check(!self.marginals.families.is_empty(), "/marginals/families", "must not be empty")?;
        check(
            self.marginals.exposure > 0.0 && self.marginals.exposure.is_finite(),
            "/marginals/exposure",
            "must be positive",
        )?;
        let r = &self.risk;
        if let Some(z) = &r.z {
            check(
                !z.is_empty() && z.iter().all(|v| v.is_finite()) && z.windows(2).all(|w| w[1] > w[0]),
                "/risk/z",
                "must be a non-empty strictly increasing list",
            )?;
        }
        check(r.grid_points >= 2, "/risk/grid_points", "must be >= 2")?;
        check(
            0.0 <= r.lo_quantile && r.lo_quantile < r.hi_quantile && r.hi_quantile <= 1.0,
            "/risk/lo_quantile",
            "need 0 <= lo_quantile < hi_quantile <= 1",
        )?;
        check(
            r.mc_draws == 0 || r.mc_draws >= crate::tail::MIN_MC_DRAWS,
            "/risk/mc_draws",
            format!("must be 0 or >= {}", crate::tail::MIN_MC_DRAWS),
        )?;
        check(!self.ingest.city.is_empty(), "/ingest/city", "must not be empty")?;
        Ok(())
    }

    /// Applies the master seed to every section.
    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.world.seed = seed;
            self.network.seed = seed;
            self.copula.seed = seed;
            self.risk.seed = seed;
        }
    }

    pub fn selection_seeds(&self) -> Vec<u64> {
        self.selection.seeds.clone().unwrap_or_else(|| vec![self.network.seed])
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        self.ingest.scenario_ids.clone().unwrap_or_else(|| self.world.scenario_ids())
    }

    /// Hex SHA-256 of the effective configuration, excluding the output
    /// directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Simulate,
    Ingest,
    Train,
    Select,
    Predict,
    FitMarginals,
    FitCopula,
    Risk,
    Report,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Simulate,
        Command::Ingest,
        Command::Train,
        Command::Select,
        Command::Predict,
        Command::FitMarginals,
        Command::FitCopula,
        Command::Risk,
        Command::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Select => "select",
            Command::Predict => "predict",
            Command::FitMarginals => "fit-marginals",
            Command::FitCopula => "fit-copula",
            Command::Risk => "risk",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown command '{s}'")))
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scenarios: Option<PathBuf>,
}

/// Artifact file names inside a run directory.
pub mod artifacts {
    pub const DAILY_CONTROL: &str = "daily_control.csv";
    pub const SCENARIOS: &str = "scenarios_weekly.csv";
    pub const WEEKLY: &str = "weekly.csv";
    pub const SELECTION_CSV: &str = "selection.csv";
    pub const SELECTION_JSON: &str = "selection.json";
    pub const MODEL: &str = "model.json";
    pub const LOSS_HISTORY: &str = "loss_history.csv";
    pub const TRAIN_METRICS: &str = "train_metrics.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const MARGINALS: &str = "marginals.json";
    pub const COPULA: &str = "copula.json";
    pub const RISK: &str = "risk_curve.csv";
    pub const DENSITY: &str = "density_curves.csv";
    pub const TABLE1: &str = "table1.csv";
    pub const TABLE2: &str = "table2.csv";
    pub const COMPARISON: &str = "comparison.csv";
    pub const REPORT: &str = "report.json";
    pub const MANIFESTS: &str = "manifests";
}
use artifacts as a;

/// Resolved configuration plus the locations a run reads and writes.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: PipelineConfig,
    pub config_dir: PathBuf,
    pub run_dir: PathBuf,
    pub digest: String,
}

impl RunContext {
    /// Loads `config_path` and applies the overrides. Relative paths inside
    /// the config resolve against the config file's directory.
    pub fn load(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(config_path).map_err(|e| Error::Config {
            pointer: String::new(),
            msg: format!("cannot read {}: {e}", config_path.display()),
        })?;
        let config = PipelineConfig::from_json(&text)?;
        let dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &dir, overrides)
    }

    pub fn new(mut config: PipelineConfig, config_dir: &Path, overrides: &Overrides) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(s) = &overrides.scenarios {
            config.ingest.scenarios = Some(s.clone());
        }
        config.apply_seed();
        config.validate()?;
        let digest = config.digest();
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => config_dir.join(&config.output.dir),
        };
        let run_dir = out.join(format!("run-{}", &digest[..16]));
        Ok(RunContext {
            config,
            config_dir: config_dir.to_path_buf(),
            run_dir,
            digest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }
}

/// Result of one stage.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: String,
    pub run_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub messages: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_digest: &'a str,
    inputs_digest: &'a str,
    seed: Option<u64>,
    version: &'a str,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks the files a stage reads and writes.
struct Stage<'c> {
    ctx: &'c RunContext,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
    messages: Vec<String>,
}

impl<'c> Stage<'c> {
    fn new(ctx: &'c RunContext) -> Self {
        Stage {
            ctx,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            written: Vec::new(),
            messages: Vec::new(),
        }
    }

    fn read(&mut self, path: &Path, producer: &str) -> Result<Vec<u8>> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                command: producer.to_string(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        // run-directory files are keyed by name so manifests do not depend on where the run lives
        let key = match path.strip_prefix(&self.ctx.run_dir) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => path.display().to_string(),
        };
        self.inputs.insert(key, sha_hex(&bytes));
        Ok(bytes)
    }

    fn read_artifact(&mut self, name: &str, producer: &str) -> Result<Vec<u8>> {
        let p = self.ctx.path(name);
        self.read(&p, producer)
    }

    fn read_json<T: DeserializeOwned>(&mut self, name: &str, producer: &str) -> Result<T> {
        let bytes = self.read_artifact(name, producer)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.ctx.path(name);
        fs::create_dir_all(&self.ctx.run_dir).map_err(|e| Error::io(&self.ctx.run_dir, e))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.to_string(), sha_hex(bytes));
        self.written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn write_with<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&mut self, name: &str, f: F) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }

    fn finish(self, command: Command) -> Result<Outcome> {
        let mut h = Sha256::new();
        h.update(self.ctx.digest.as_bytes());
        for (k, v) in &self.inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        let inputs_digest = hex::encode(h.finalize());
        let dir = self.ctx.path(a::MANIFESTS);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}-{}.json", command.as_str(), &inputs_digest[..16]));
        if !path.exists() {
            let m = Manifest {
                command: command.as_str(),
                config_digest: &self.ctx.digest,
                inputs_digest: &inputs_digest,
                seed: self.ctx.config.seed,
                version: env!("CARGO_PKG_VERSION"),
                inputs: &self.inputs,
                outputs: &self.outputs,
            };
            let mut bytes = serde_json::to_vec_pretty(&m)?;
            bytes.push(b'\n');
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(Outcome {
            command: command.as_str().to_string(),
            run_dir: self.ctx.run_dir.clone(),
            outputs: self.written,
            manifest: path,
            messages: self.messages,
        })
    }
}

/// Runs one stage in `ctx.run_dir`.
pub fn run(ctx: &RunContext, command: Command) -> Result<Outcome> {
    let mut st = Stage::new(ctx);
    match command {
        Command::Simulate => simulate(&mut st)?,
        Command::Ingest => ingest(&mut st)?,
        Command::Train => train_stage(&mut st)?,
        Command::Select => select_stage(&mut st)?,
        Command::Predict => predict_stage(&mut st)?,
        Command::FitMarginals => fit_marginals_stage(&mut st)?,
        Command::FitCopula => fit_copula_stage(&mut st)?,
        Command::Risk => risk_stage(&mut st)?,
        Command::Report => report_stage(&mut st)?,
    }
    st.finish(command)
}

fn simulate(st: &mut Stage) -> Result<()> {
    let world = simulate_world(&st.ctx.config.world)?;
    st.write_with(a::DAILY_CONTROL, |b| write_daily_csv(b, &world.control_daily))?;
    st.write_with(a::SCENARIOS, |b| write_scenario_csv(b, &world.scenarios))?;
    st.note(format!(
        "simulated {} control days and {} scenarios",
        world.control_daily.len(),
        world.scenarios.scenarios.len()
    ));
    Ok(())
}

fn daily_weekly(st: &mut Stage) -> Result<WeeklySeries> {
    let cfg = &st.ctx.config.ingest;
    let path = match &cfg.daily {
        Some(p) => st.ctx.resolve(p),
        None => st.ctx.path(a::DAILY_CONTROL),
    };
    let bytes = st.read(&path, "simulate")?;
    let days = parse_daily_reader(bytes.as_slice(), &path.display().to_string())?;
    aggregate_weekly(&days, cfg.week_origin, cfg.aggregation)
}

/// Weekly control series: `weekly.csv` when `ingest` has run, otherwise
/// aggregated from the daily source.
fn load_weekly(st: &mut Stage) -> Result<WeeklySeries> {
    if st.ctx.path(a::WEEKLY).exists() {
        let bytes = st.read_artifact(a::WEEKLY, "ingest")?;
        read_weekly_csv(bytes.as_slice())
    } else {
        daily_weekly(st)
    }
}

fn scenario_source(ctx: &RunContext) -> PathBuf {
    match &ctx.config.ingest.scenarios {
        Some(p) => ctx.resolve(p),
        None => ctx.path(a::SCENARIOS),
    }
}

fn load_scenarios(st: &mut Stage) -> Result<ScenarioSet> {
    let path = scenario_source(st.ctx);
    let bytes = st.read(&path, "simulate")?;
    read_scenario_csv(bytes.as_slice(), &st.ctx.config.scenario_ids())
}

fn ingest(st: &mut Stage) -> Result<()> {
    let weekly = daily_weekly(st)?;
    st.write_with(a::WEEKLY, |b| write_weekly_csv(b, &weekly))?;
    st.note(format!("aggregated {} weeks", weekly.len()));
    let path = scenario_source(st.ctx);
    if path.exists() {
        let set = load_scenarios(st)?;
        if path != st.ctx.path(a::SCENARIOS) {
            st.write_with(a::SCENARIOS, |b| write_scenario_csv(b, &set))?;
        }
        st.note(format!("validated {} scenarios", set.scenarios.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub model_id: u8,
    pub columns: Vec<String>,
    pub fraction: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub final_loss: Option<f64>,
}

fn train_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.clone();
    let model_id = match cfg.selection.model_id {
        Some(id) => id,
        None if st.ctx.path(a::SELECTION_JSON).exists() => {
            let report: SelectionReport = st.read_json(a::SELECTION_JSON, "select")?;
            report.winner
        }
        None => DEFAULT_MODEL_ID,
    };
    let spec = candidate(model_id)?;
    let weekly = load_weekly(st)?;
    let frame = build_features(&weekly, &spec.columns)?;
    let (train_frame, test_frame) = split_train_test(&frame, cfg.selection.fraction)?;
    let net_cfg = NetworkConfig {
        input_dim: spec.columns.len(),
        ..cfg.network.clone()
    };
    let net = train(&train_frame, &net_cfg)?;
    let metrics = TrainMetrics {
        model_id,
        columns: spec.columns.iter().map(|c| c.to_string()).collect(),
        fraction: cfg.selection.fraction,
        train_rows: train_frame.len(),
        test_rows: test_frame.len(),
        train_rmse: rmse(&predict(&net, &train_frame)?, &train_frame.target)?,
        test_rmse: rmse(&predict(&net, &test_frame)?, &test_frame.target)?,
        final_loss: net.final_loss,
    };
    let mut model = net.to_json()?.into_bytes();
    model.push(b'\n');
    st.write(a::MODEL, &model)?;
    st.write_with(a::LOSS_HISTORY, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["epoch", "loss"])?;
        for (i, l) in net.loss_history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))
    })?;
    st.write_json(a::TRAIN_METRICS, &metrics)?;
    st.note(format!(
        "model {model_id}: train RMSE {:.4}, test RMSE {:.4}",
        metrics.train_rmse, metrics.test_rmse
    ));
    Ok(())
}

fn select_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.clone();
    let weekly = load_weekly(st)?;
    let mut net_cfg = cfg.network.clone();
    if let Some(e) = cfg.selection.epochs {
        net_cfg.epochs = e;
    }
    let report = run_selection(
        &weekly,
        &enumerate_candidates(),
        &net_cfg,
        cfg.selection.fraction,
        &cfg.selection_seeds(),
    )?;
    st.write_with(a::SELECTION_CSV, |b| write_selection_csv(b, &report))?;
    st.write_json(a::SELECTION_JSON, &report)?;
    st.note(format!("winner: model {}", report.winner));
    Ok(())
}

/// One predicted series per id, in file order.
pub type PredictionSeries = Vec<(String, Vec<(NaiveDate, f64)>)>;

pub fn write_predictions_csv<W: std::io::Write>(writer: W, series: &PredictionSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["week_start", "scenario_id", "n_hat"])?;
    for (id, rows) in series {
        for (date, v) in rows {
            w.write_record([date.to_string(), id.clone(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    week_start: NaiveDate,
    scenario_id: String,
    n_hat: f64,
}

pub fn read_predictions_csv<R: std::io::Read>(reader: R) -> Result<PredictionSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: PredictionSeries = Vec::new();
    for rec in rdr.deserialize::<PredictionRow>() {
        let r = rec?;
        if !(r.n_hat >= 0.0 && r.n_hat.is_finite()) {
            return Err(Error::Data(format!("prediction {} for {} is not a non-negative number", r.n_hat, r.scenario_id)));
        }
        match out.iter_mut().find(|(id, _)| *id == r.scenario_id) {
            Some((_, rows)) => rows.push((r.week_start, r.n_hat)),
            None => out.push((r.scenario_id, vec![(r.week_start, r.n_hat)])),
        }
    }
    Ok(out)
}

fn predict_stage(st: &mut Stage) -> Result<()> {
    let bytes = st.read_artifact(a::MODEL, "train")?;
    let net = TrainedNetwork::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::Data(e.to_string()))?)?;
    let scaler = net
        .scaler
        .clone()
        .ok_or_else(|| Error::Data("model has no input scaler".to_string()))?;
    let weekly = load_weekly(st)?;
    let scenarios = load_scenarios(st)?;

    let mut series: PredictionSeries = Vec::new();
    let control = build_features(&weekly, &net.columns)?.standardize_with(&scaler)?;
    let preds = predict(&net, &control)?;
    series.push((CONTROL_SERIES.to_string(), control.week_start.iter().copied().zip(preds).collect()));
    for (id, weeks) in &scenarios.scenarios {
        let frame = build_scenario_features(weeks, &net.columns)?.standardize_with(&scaler)?;
        let preds = predict(&net, &frame)?;
        series.push((id.clone(), frame.week_start.iter().copied().zip(preds).collect()));
    }
    st.write_with(a::PREDICTIONS, |b| write_predictions_csv(b, &series))?;
    st.note(format!("predicted {} series", series.len()));
    Ok(())
}

fn load_predictions(st: &mut Stage) -> Result<PredictionSeries> {
    let bytes = st.read_artifact(a::PREDICTIONS, "predict")?;
    let series = read_predictions_csv(bytes.as_slice())?;
    if series.is_empty() {
        return Err(Error::Data("predictions file is empty".to_string()));
    }
    Ok(series)
}

fn scenario_series(series: &PredictionSeries) -> Vec<&(String, Vec<(NaiveDate, f64)>)> {
    series.iter().filter(|(id, _)| id != CONTROL_SERIES).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMarginal {
    pub series: String,
    pub selection: FamilySelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalsArtifact {
    pub exposure: f64,
    pub families: Vec<MarginalFamily>,
    pub fits: Vec<SeriesMarginal>,
}

fn fit_marginals_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.marginals.clone();
    let series = load_predictions(st)?;
    let observed: Vec<f64> = load_weekly(st)?.weeks().iter().map(|w| w.n).collect();
    let mut fits = Vec::with_capacity(series.len());
    for (id, rows) in &series {
        // the control period has one realization, so its marginal describes observed claims
        let values: Vec<f64> = if id == CONTROL_SERIES {
            observed.clone()
        } else {
            rows.iter().map(|(_, v)| *v).collect()
        };
        let selection = select_family_predictions(&values, &cfg.families, cfg.exposure)
            .map_err(|e| Error::Data(format!("series {id}: {e}")))?;
        st.note(format!("{id}: {}", selection.best.family()));
        fits.push(SeriesMarginal {
            series: id.clone(),
            selection,
        });
    }
    st.write_json(
        a::MARGINALS,
        &MarginalsArtifact {
            exposure: cfg.exposure,
            families: cfg.families,
            fits,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaArtifact {
    pub city: String,
    pub series: Vec<String>,
    pub fit: CopulaFit,
}

/// Scenario predictions as rows (weeks) by columns (scenarios); every
/// scenario must cover the same weeks.
pub fn aligned_rows(series: &PredictionSeries) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let sc = scenario_series(series);
    if sc.is_empty() {
        return Err(Error::Data("no scenario predictions".to_string()));
    }
    let dates: Vec<NaiveDate> = sc[0].1.iter().map(|(d, _)| *d).collect();
    for (id, rows) in &sc {
        if rows.len() != dates.len() || rows.iter().zip(&dates).any(|((d, _), e)| d != e) {
            return Err(Error::Data(format!("scenario {id} does not cover the same weeks as {}", sc[0].0)));
        }
    }
    let rows = (0..dates.len()).map(|i| sc.iter().map(|(_, r)| r[i].1).collect()).collect();
    Ok((sc.iter().map(|(id, _)| id.clone()).collect(), rows))
}

fn fit_copula_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.clone();
    let series = load_predictions(st)?;
    let (ids, rows) = aligned_rows(&series)?;
    if ids.len() < 2 {
        return Err(Error::Data("copula fitting needs at least two scenarios".to_string()));
    }
    let p = pseudo_observations(&rows)?;
    let fit = estimate(
        &p,
        cfg.copula.estimator,
        BootstrapOptions {
            reps: cfg.copula.bootstrap_reps,
            seed: cfg.copula.seed,
        },
    )?;
    st.note(format!("theta = {:.4} (se {:.4})", fit.theta, fit.se));
    st.write_json(
        a::COPULA,
        &CopulaArtifact {
            city: cfg.ingest.city.clone(),
            series: ids,
            fit,
        },
    )
}

fn risk_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.clone();
    let marg: MarginalsArtifact = st.read_json(a::MARGINALS, "fit-marginals")?;
    let cop: CopulaArtifact = st.read_json(a::COPULA, "fit-copula")?;
    let series = load_predictions(st)?;
    let z = match &cfg.risk.z {
        Some(z) => z.clone(),
        None => {
            let pooled: Vec<f64> = scenario_series(&series).iter().flat_map(|(_, r)| r.iter().map(|(_, v)| *v)).collect();
            default_z_grid(&pooled, cfg.risk.grid_points, cfg.risk.lo_quantile, cfg.risk.hi_quantile)?
        }
    };
    let fit_for = |id: &str| -> Result<crate::marginals::MarginalFit> {
        marg.fits
            .iter()
            .find(|f| f.series == id)
            .map(|f| f.selection.best.clone())
            .ok_or_else(|| Error::Data(format!("no marginal fit for series {id}; rerun fit-marginals")))
    };
    let marginals = cop.series.iter().map(|id| fit_for(id)).collect::<Result<Vec<_>>>()?;
    let scenario = risk_curve(&RiskQuery {
        z: z.clone(),
        marginals,
        copula: cop.fit.clone(),
        mc_draws: cfg.risk.mc_draws,
        seed: cfg.risk.seed,
        city: cfg.ingest.city.clone(),
    })?;
    let mut curves = Vec::new();
    if let Ok(control_fit) = fit_for(CONTROL_SERIES) {
        curves.push(univariate_tail_curve(&control_fit, &z, cfg.risk.mc_draws, cfg.risk.seed, &cfg.ingest.city)?);
    }
    curves.push(scenario);
    for c in &curves {
        for w in &c.warnings {
            st.note(format!("warning ({}): {w}", c.period.as_str()));
        }
    }
    st.write_with(a::RISK, |b| write_risk_csv(b, &curves))?;
    st.note(format!("risk curve over {} thresholds", z.len()));
    Ok(())
}

/// Gaussian kernel density on `grid` with Silverman's bandwidth.
pub fn kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let h = (1.06 * sd * n.powf(-0.2)).max(1e-6);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&y| values.iter().map(|v| (-0.5 * ((y - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub city: String,
    pub theta: f64,
    pub theta_se: f64,
    pub files: Vec<String>,
    pub dominance: Option<f64>,
}

const DENSITY_POINTS: usize = 200;

fn report_stage(st: &mut Stage) -> Result<()> {
    let cfg = st.ctx.config.clone();
    let series = load_predictions(st)?;
    let cop: CopulaArtifact = st.read_json(a::COPULA, "fit-copula")?;
    let risk_bytes = st.read_artifact(a::RISK, "risk")?;
    let curves = read_risk_csv(risk_bytes.as_slice())?;
    let mut files = Vec::new();

    let top = series
        .iter()
        .flat_map(|(_, r)| r.iter().map(|(_, v)| *v))
        .fold(0.0f64, f64::max)
        * 1.1;
    let grid: Vec<f64> = (0..DENSITY_POINTS)
        .map(|i| top * i as f64 / (DENSITY_POINTS - 1) as f64)
        .collect();
    st.write_with(a::DENSITY, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["series", "y", "density"])?;
        for (id, rows) in &series {
            let values: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
            for (y, d) in grid.iter().zip(kde(&values, &grid)) {
                w.write_record([id.clone(), y.to_string(), d.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))
    })?;
    files.push(a::DENSITY.to_string());

    if st.ctx.path(a::SELECTION_CSV).exists() {
        let bytes = st.read_artifact(a::SELECTION_CSV, "select")?;
        read_selection_csv(bytes.as_slice())?;
        st.write(a::TABLE1, &bytes)?;
        files.push(a::TABLE1.to_string());
    } else if st.ctx.path(a::TRAIN_METRICS).exists() {
        let m: TrainMetrics = st.read_json(a::TRAIN_METRICS, "train")?;
        st.write_with(a::TABLE1, |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["model_id", "rmse", "winner"])?;
            w.write_record([m.model_id.to_string(), m.test_rmse.to_string(), "true".to_string()])?;
            w.flush().map_err(|e| Error::io("<csv writer>", e))
        })?;
        files.push(a::TABLE1.to_string());
    }

    st.write_with(a::TABLE2, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["city", "theta", "se", "estimator", "n", "d", "bootstrap_reps"])?;
        let f = &cop.fit;
        let est = serde_json::to_value(f.estimator)?;
        w.write_record([
            cop.city.clone(),
            f.theta.to_string(),
            f.se.to_string(),
            est.as_str().unwrap_or_default().to_string(),
            f.n.to_string(),
            f.d.to_string(),
            f.bootstrap_reps.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<csv writer>", e))
    })?;
    files.push(a::TABLE2.to_string());

    let mut dominance = None;
    if let Some(other) = &cfg.risk.compare_with {
        let path = st.ctx.resolve(other);
        let bytes = st.read(&path, "risk (for the comparison city)")?;
        let theirs = read_risk_csv(bytes.as_slice())?;
        let pick = |cs: &[RiskCurve], what: &str| -> Result<RiskCurve> {
            cs.iter()
                .find(|c| c.period == Period::Scenario)
                .cloned()
                .ok_or_else(|| Error::Data(format!("{what} has no scenario-period curve")))
        };
        let cmp = compare_risk(&pick(&curves, "risk_curve.csv")?, &pick(&theirs, &path.display().to_string())?)?;
        dominance = Some(cmp.dominance);
        st.write_with(a::COMPARISON, |b| write_comparison_csv(b, &cmp))?;
        files.push(a::COMPARISON.to_string());
        st.note(format!("comparison city above this one on {:.0}% of the grid", 100.0 * cmp.dominance));
    }

    files.push(a::RISK.to_string());
    st.write_json(
        a::REPORT,
        &ReportSummary {
            city: cfg.ingest.city.clone(),
            theta: cop.fit.theta,
            theta_se: cop.fit.se,
            files,
            dominance,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_pointer() {
        let err = PipelineConfig::from_json(r#"{"network": {"dropout": 0.1}}"#).unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert!(pointer.starts_with("/network"), "{pointer}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_value_reports_section() {
        let err = PipelineConfig::from_json(r#"{"selection": {"fraction": 1.0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/selection/fraction"));
        assert_eq!(err.exit_code(), 1);
        let err = PipelineConfig::from_json(r#"{"network": {"dropout_rate": 1.5}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/network"));
    }

    #[test]
    fn digest_ignores_output_dir_and_tracks_seed() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.seed = Some(9);
        b.apply_seed();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(b.network.seed, 9);
        assert_eq!(b.world.seed, 9);
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.as_str().parse::<Command>().unwrap(), c);
        }
        assert!("fit".parse::<Command>().is_err());
    }

    #[test]
    fn predictions_round_trip() {
        let d = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let series: PredictionSeries = vec![
            ("control".into(), vec![(d, 0.5)]),
            ("s1".into(), vec![(d, 1.25), (d + chrono::Days::new(7), 0.0)]),
        ];
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &series).unwrap();
        assert_eq!(read_predictions_csv(buf.as_slice()).unwrap(), series);
    }

    #[test]
    fn kde_integrates_to_one() {
        let values: Vec<f64> = (0..200).map(|i| 5.0 + (i as f64 * 0.37).sin()).collect();
        let grid: Vec<f64> = (0..2001).map(|i| i as f64 * 0.005).collect();
        let dens = kde(&values, &grid);
        let integral: f64 = dens.windows(2).map(|w| 0.5 * (w[0] + w[1]) * 0.005).sum();
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }
}

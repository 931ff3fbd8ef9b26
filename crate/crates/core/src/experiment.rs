//! Config-driven experiment runs.
//!
//! An experiment file uses the `kv` grammar:
//!
//! ```text
//! seeds = 0,1,2,3,4
//! out = runs/table
//! formats = text,csv,json
//!
//! [data]          # synthetic spec keys, or train_csv / test_csv / test_iid_csv
//! corr = 0.95
//!
//! [model]         # hidden, feature_dim
//! [estimator]     # Cobias estimator used by reports
//! [train]         # defaults shared by every method
//! lr = 1e-3
//!
//! [method.erm]
//! method = erm
//!
//! [method.noise]
//! method = noise
//! rho = 0.2
//! ```
//!
//! Each `(method, seed)` pair runs in `<out>/<method>/seed<k>/`. Seed `k`
//! offsets the data seed, seeds training, and seeds the report's estimator,
//! so runs with the same `k` are paired across methods.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Map, Value};

use crate::debias::{linear_probe_experiment, train, TrainConfig};
use crate::error::{Error, Result};
use crate::fairmetrics::{full_report, GroupReport, ReportConfig};
use crate::kv::{self, KvFile, Section};
use crate::mine::EstimatorConfig;
use crate::model::{BiasModel, DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN};
use crate::ndcore::{mix, RngState};
use crate::synthdata::{generate, generate_in_distribution, LabeledDataset, SpuriousSpec};

pub const SEED_ENV: &str = "COBIAS_SEED";

const MODEL_INIT_STREAM: u64 = 0x6d6f_6465_6c00;
const ESTIMATOR_SEED_SALT: u64 = 0x6573_7469_6d00;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected text, csv, json)")),
        }
    }
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Text => "text",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SpuriousSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
        test_iid: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: DEFAULT_HIDDEN.to_vec(),
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSpec {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub train: TrainConfig,
    /// Head-only fine-tuning after training; the run reports the probed model.
    pub probe: Option<ProbeSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelSpec,
    pub estimator: EstimatorConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
}

const TOP_KEYS: &[&str] = &["seeds", "out", "formats"];
const MODEL_KEYS: &[&str] = &["hidden", "feature_dim"];
const CSV_KEYS: &[&str] = &["train_csv", "test_csv", "test_iid_csv"];
const PROBE_KEYS: &[&str] = &["probe", "probe_epochs", "probe_lr"];
const ESTIMATOR_KEYS: &[&str] = &[
    "hidden",
    "epochs",
    "batch",
    "lr",
    "weight_decay",
    "eval_last",
    "ma_correction",
    "ma_rate",
    "clip",
    "divergence_limit",
];

pub fn estimator_from_section(s: &Section) -> Result<EstimatorConfig> {
    s.reject_unknown(ESTIMATOR_KEYS)?;
    let d = EstimatorConfig::default();
    let cfg = EstimatorConfig {
        hidden: s.parse_list("hidden")?.unwrap_or(d.hidden),
        epochs: s.parse_or("epochs", d.epochs)?,
        batch: s.parse_or("batch", d.batch)?,
        lr: s.parse_or("lr", d.lr)?,
        weight_decay: s.parse_or("weight_decay", d.weight_decay)?,
        eval_last: s.parse_or("eval_last", d.eval_last)?,
        ma_correction: s.parse_or("ma_correction", d.ma_correction)?,
        ma_rate: s.parse_or("ma_rate", d.ma_rate)?,
        clip: s.parse_or("clip", d.clip)?,
        divergence_limit: s.parse_or("divergence_limit", d.divergence_limit)?,
    };
    cfg.validate()
        .map_err(|e| Error::Config(format!("section `estimator`: {e}")))?;
    Ok(cfg)
}

pub fn estimator_to_section(cfg: &EstimatorConfig, name: &str) -> Section {
    let mut s = Section::new(name);
    s.set("hidden", kv::join(&cfg.hidden));
    s.set("epochs", cfg.epochs);
    s.set("batch", cfg.batch);
    s.set("lr", cfg.lr);
    s.set("weight_decay", cfg.weight_decay);
    s.set("eval_last", cfg.eval_last);
    s.set("ma_correction", cfg.ma_correction);
    s.set("ma_rate", cfg.ma_rate);
    s.set("clip", cfg.clip);
    s.set("divergence_limit", cfg.divergence_limit);
    s
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let file = KvFile::parse(text, origin)?;
        for s in file.sections() {
            let known = matches!(s.name.as_str(), "" | "data" | "model" | "estimator" | "train")
                || s.name.starts_with("method.");
            if !known {
                return Err(Error::Config(format!("unknown section `[{}]`", s.name)));
            }
        }
        let empty = Section::new("");
        let top = file.section("").unwrap_or(&empty);
        top.reject_unknown(TOP_KEYS)?;

        let data_sec = file
            .section("data")
            .ok_or_else(|| Error::Config("missing section `[data]`".into()))?;
        let data = if data_sec.get("train_csv").is_some() {
            data_sec.reject_unknown(CSV_KEYS)?;
            DataSource::Csv {
                train: data_sec.require::<String>("train_csv")?.into(),
                test: data_sec.require::<String>("test_csv")?.into(),
                test_iid: data_sec.parse::<String>("test_iid_csv")?.map(PathBuf::from),
            }
        } else {
            data_sec.reject_unknown(SpuriousSpec::allowed_keys())?;
            DataSource::Synthetic(SpuriousSpec::from_section(data_sec).map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(format!("section `data`: {other}")),
            })?)
        };

        let model = match file.section("model") {
            Some(s) => {
                s.reject_unknown(MODEL_KEYS)?;
                let d = ModelSpec::default();
                ModelSpec {
                    hidden: s.parse_list("hidden")?.unwrap_or(d.hidden),
                    feature_dim: s.parse_or("feature_dim", d.feature_dim)?,
                }
            }
            None => ModelSpec::default(),
        };
        let estimator = match file.section("estimator") {
            Some(s) => estimator_from_section(s)?,
            None => EstimatorConfig::default(),
        };

        let mut base = TrainConfig::default();
        if let Some(s) = file.section("train") {
            s.reject_unknown(TrainConfig::allowed_keys())?;
            base.apply_section(s)?;
        }
        let mut methods = Vec::new();
        for s in file.sections_with_prefix("method") {
            let name = s.name["method.".len()..].to_string();
            if name.is_empty() || name.contains('/') {
                return Err(Error::Config(format!("bad method name in `[{}]`", s.name)));
            }
            let allowed: Vec<&str> = TrainConfig::allowed_keys().iter().chain(PROBE_KEYS).copied().collect();
            s.reject_unknown(&allowed)?;
            let mut train = base.clone();
            train.apply_section(s)?;
            let probe = if s.parse_or("probe", false)? {
                Some(ProbeSpec {
                    epochs: s.parse_or("probe_epochs", train.epochs)?,
                    lr: s.parse_or("probe_lr", train.lr)?,
                })
            } else {
                None
            };
            methods.push(MethodSpec { name, train, probe });
        }
        if methods.is_empty() {
            return Err(Error::Config("no `[method.<name>]` sections".into()));
        }

        let seeds = top.parse_list::<u64>("seeds")?.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::Config("field `seeds` is empty".into()));
        }
        let formats = top
            .parse_list::<Format>("formats")?
            .unwrap_or_else(|| vec![Format::Text, Format::Csv, Format::Json]);
        Ok(ExperimentConfig {
            data,
            model,
            estimator,
            methods,
            seeds,
            out: top.parse_or::<String>("out", "runs".into())?.into(),
            formats,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Replaces the seed list with the value of `COBIAS_SEED`, if set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let mut f = KvFile::new();
        let mut top = Section::new("");
        top.set("seeds", kv::join(&self.seeds));
        top.set("out", self.out.display());
        top.set(
            "formats",
            self.formats.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(","),
        );
        f.push(top);
        f.push(match &self.data {
            DataSource::Synthetic(spec) => spec.to_section("data"),
            DataSource::Csv { train, test, test_iid } => {
                let mut s = Section::new("data");
                s.set("train_csv", train.display());
                s.set("test_csv", test.display());
                if let Some(p) = test_iid {
                    s.set("test_iid_csv", p.display());
                }
                s
            }
        });
        let mut m = Section::new("model");
        m.set("hidden", kv::join(&self.model.hidden));
        m.set("feature_dim", self.model.feature_dim);
        f.push(m);
        f.push(estimator_to_section(&self.estimator, "estimator"));
        for method in &self.methods {
            let mut s = Section::new(format!("method.{}", method.name));
            method.train.write_section(&mut s);
            if let Some(p) = &method.probe {
                s.set("probe", true);
                s.set("probe_epochs", p.epochs);
                s.set("probe_lr", p.lr);
            }
            f.push(s);
        }
        f
    }
}

/// Datasets for one seed: training, group-balanced test, and (optionally)
/// an in-distribution test split.
pub struct RunData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub test_iid: Option<LabeledDataset>,
}

pub fn load_data(source: &DataSource, seed: u64) -> Result<RunData> {
    match source {
        DataSource::Synthetic(spec) => {
            let spec = seeded_spec(spec, seed);
            let (train, test) = generate(&spec)?;
            Ok(RunData {
                train,
                test,
                test_iid: Some(generate_in_distribution(&spec)?),
            })
        }
        DataSource::Csv { train, test, test_iid } => Ok(RunData {
            train: LabeledDataset::load_csv(train)?,
            test: LabeledDataset::load_csv(test)?,
            test_iid: test_iid.as_deref().map(LabeledDataset::load_csv).transpose()?,
        }),
    }
}

pub fn seeded_spec(spec: &SpuriousSpec, seed: u64) -> SpuriousSpec {
    SpuriousSpec {
        seed: spec.seed.wrapping_add(seed),
        ..spec.clone()
    }
}

pub fn estimator_seed(seed: u64) -> u64 {
    mix(seed ^ ESTIMATOR_SEED_SALT)
}

/// Everything persisted about one finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    /// Sweep parameter and value, when the run is part of a sweep.
    pub sweep: Option<(String, f64)>,
    pub test: GroupReport,
    pub test_iid: Option<GroupReport>,
    /// Pre-probe report for probe runs.
    pub before_probe: Option<GroupReport>,
}

impl RunSummary {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("method".into(), json!(self.method));
        m.insert("seed".into(), json!(self.seed));
        if let Some((p, v)) = &self.sweep {
            m.insert("sweep_param".into(), json!(p));
            m.insert("sweep_value".into(), json!(v));
        }
        m.insert("test".into(), self.test.to_json());
        m.insert("test_iid".into(), self.test_iid.as_ref().map_or(Value::Null, GroupReport::to_json));
        if let Some(b) = &self.before_probe {
            m.insert("before_probe".into(), b.to_json());
        }
        Value::Object(m)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let field = |k: &str| v.get(k).ok_or_else(|| Error::MissingColumn(k.to_string()));
        let opt_report = |k: &str| -> Result<Option<GroupReport>> {
            match v.get(k) {
                None | Some(Value::Null) => Ok(None),
                Some(r) => GroupReport::from_json(r).map(Some),
            }
        };
        let sweep = match (v.get("sweep_param"), v.get("sweep_value")) {
            (Some(p), Some(x)) => Some((
                p.as_str().unwrap_or_default().to_string(),
                x.as_f64().ok_or_else(|| Error::Config("sweep_value is not a number".into()))?,
            )),
            _ => None,
        };
        Ok(RunSummary {
            method: field("method")?
                .as_str()
                .ok_or_else(|| Error::Config("method is not a string".into()))?
                .to_string(),
            seed: field("seed")?
                .as_u64()
                .ok_or_else(|| Error::Config("seed is not an integer".into()))?,
            sweep,
            test: GroupReport::from_json(field("test")?)?,
            test_iid: opt_report("test_iid")?,
            before_probe: opt_report("before_probe")?,
        })
    }

    /// Accuracy on the in-distribution split when one exists.
    pub fn average_acc(&self) -> f64 {
        self.test_iid.as_ref().unwrap_or(&self.test).average_acc
    }
}

pub const RUN_FILE: &str = "run.json";

pub fn run_dir(out: &Path, method: &str, seed: u64) -> PathBuf {
    out.join(method).join(format!("seed{seed}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Trains and evaluates one `(method, seed)` pair, persisting checkpoint,
/// log, resolved config and reports into `dir`.
pub fn run_one(
    exp: &ExperimentConfig,
    method: &MethodSpec,
    seed: u64,
    sweep: Option<(String, f64)>,
    dir: &Path,
) -> Result<RunSummary> {
    let data = load_data(&exp.data, seed)?;
    let mut init = RngState::with_stream(seed, MODEL_INIT_STREAM);
    let model = BiasModel::new(
        data.train.input_dim(),
        &exp.model.hidden,
        exp.model.feature_dim,
        data.train.a,
        &mut init,
    )?;
    let cfg = TrainConfig {
        seed,
        ..method.train.clone()
    };

    let mut resolved = exp.to_kv();
    if let DataSource::Synthetic(spec) = &exp.data {
        *resolved.section_mut("data") = seeded_spec(spec, seed).to_section("data");
    }
    resolved.section_mut("").set("seeds", seed);
    write(&dir.join("config.cfg"), resolved.to_string())?;

    let out = match train(model, None, &data.train, Some(&data.test), &cfg) {
        Ok(out) => out,
        Err(failure) => {
            write(&dir.join("train_log.csv"), failure.log.to_csv())?;
            failure.last_good.save(&dir.join("last_good.ckpt"))?;
            return Err(failure.error);
        }
    };
    write(&dir.join("train_log.csv"), out.log.to_csv())?;
    out.model.save(&dir.join("model.ckpt"))?;

    let rho = if cfg.method.label_noise { cfg.rho } else { 0.0 };
    let report_cfg = ReportConfig {
        estimator: Some(exp.estimator.clone()),
        seed: estimator_seed(seed),
        rho: Some(rho),
        ratio_joint: Some(data.train.label_joint()?),
    };
    let iid_cfg = ReportConfig {
        estimator: None,
        ..report_cfg.clone()
    };

    let (final_model, before_probe) = match &method.probe {
        Some(p) => {
            let probe_cfg = TrainConfig {
                epochs: p.epochs,
                lr: p.lr,
                ..cfg.clone()
            };
            let probe = linear_probe_experiment(&out.model, &data.train, &data.test, &probe_cfg, &report_cfg)?;
            write(&dir.join("probe_log.csv"), probe.log.to_csv())?;
            probe.model.save(&dir.join("probe.ckpt"))?;
            (probe.model, Some(probe.before.report))
        }
        None => (out.model, None),
    };
    let test = full_report(&final_model, &data.test, &report_cfg)?.report;
    let test_iid = match &data.test_iid {
        Some(ds) => Some(full_report(&final_model, ds, &iid_cfg)?.report),
        None => None,
    };
    let summary = RunSummary {
        method: method.name.clone(),
        seed,
        sweep,
        test,
        test_iid,
        before_probe,
    };
    write(&dir.join(RUN_FILE), pretty(&summary.to_json()))?;
    let mut csv = format!("split,{}\n", summary.test.csv_header());
    csv.push_str(&format!("test,{}\n", summary.test.csv_row()));
    if let Some(r) = &summary.test_iid {
        csv.push_str(&format!("test_iid,{}\n", r.csv_row()));
    }
    write(&dir.join("report.csv"), csv)?;
    Ok(summary)
}

/// Runs `jobs` in parallel on up to `workers` threads; results keep job order.
pub fn run_parallel<T, F>(n_jobs: usize, workers: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n_jobs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n_jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n_jobs {
                    break;
                }
                let r = f(i);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

/// Runs every `(method, seed)` pair of the experiment.
pub fn run_experiment(exp: &ExperimentConfig, jobs: usize) -> Result<Vec<RunSummary>> {
    let pairs: Vec<(&MethodSpec, u64)> = exp
        .methods
        .iter()
        .flat_map(|m| exp.seeds.iter().map(move |&s| (m, s)))
        .collect();
    run_parallel(pairs.len(), jobs, |i| {
        let (m, s) = pairs[i];
        run_one(exp, m, s, None, &run_dir(&exp.out, &m.name, s))
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Rho,
    Corr,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "rho" => Ok(SweepParam::Rho),
            "corr" => Ok(SweepParam::Corr),
            other => Err(format!("unknown sweep parameter `{other}` (expected beta, rho, corr)")),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Rho => "rho",
            SweepParam::Corr => "corr",
        }
    }

    /// The experiment with this parameter set to `value` everywhere.
    pub fn apply(self, exp: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut e = exp.clone();
        match self {
            SweepParam::Beta => e.methods.iter_mut().for_each(|m| m.train.beta = value),
            SweepParam::Rho => e.methods.iter_mut().for_each(|m| m.train.rho = value),
            SweepParam::Corr => match &mut e.data {
                DataSource::Synthetic(spec) => {
                    spec.corr = value;
                    spec.validate()?;
                }
                DataSource::Csv { .. } => {
                    return Err(Error::Config("a corr sweep needs a synthetic `[data]` section".into()))
                }
            },
        }
        Ok(e)
    }
}

pub fn sweep_dir(out: &Path, param: SweepParam, value: f64) -> PathBuf {
    out.join(format!("sweep-{}", param.as_str()))
        .join(format!("{}-{value}", param.as_str()))
}

pub fn run_sweep(exp: &ExperimentConfig, param: SweepParam, values: &[f64], jobs: usize) -> Result<Vec<RunSummary>> {
    let variants: Vec<ExperimentConfig> = values.iter().map(|&v| param.apply(exp, v)).collect::<Result<_>>()?;
    let mut jobs_list = Vec::new();
    for (vi, e) in variants.iter().enumerate() {
        for m in &e.methods {
            for &s in &e.seeds {
                jobs_list.push((vi, m, s));
            }
        }
    }
    run_parallel(jobs_list.len(), jobs, |i| {
        let (vi, m, s) = jobs_list[i];
        let value = values[vi];
        let dir = run_dir(&sweep_dir(&exp.out, param, value), &m.name, s);
        run_one(&variants[vi], m, s, Some((param.as_str().to_string(), value)), &dir)
    })
    .into_iter()
    .collect()
}

/// Finds `run.json` files under `roots` (recursively), sorted by path.
pub fn collect_runs(roots: &[PathBuf]) -> Result<Vec<RunSummary>> {
    let mut files = Vec::new();
    for r in roots {
        find_run_files(r, &mut files)?;
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(Error::invalid(format!("no {RUN_FILE} found under the given directories")));
    }
    files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            RunSummary::from_json(&v)
        })
        .collect()
}

fn find_run_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.is_file() {
        if dir.file_name().is_some_and(|n| n == RUN_FILE) {
            out.push(dir.to_path_buf());
        }
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_run_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == RUN_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

pub const TABLE_COLUMNS: &[&str] = &["cobias", "unbiased_acc", "worst_group_acc", "ba", "eo", "di", "average_acc"];

fn row_values(r: &RunSummary) -> Vec<Option<f64>> {
    vec![
        r.test.cobias,
        Some(r.test.unbiased_acc),
        Some(r.test.worst_group_acc),
        r.test.ba,
        r.test.eo,
        r.test.di,
        Some(r.average_acc()),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub n: usize,
}

pub fn stat(xs: &[f64]) -> Option<Stat> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Stat {
        mean,
        std,
        median: median(xs),
        n,
    })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// A comparison table in three renderings.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub csv: String,
    pub json: Value,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn method_order(runs: &[RunSummary]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in runs {
        if !names.contains(&r.method) {
            names.push(r.method.clone());
        }
    }
    names
}

/// Rows per `(method, seed)`, then one aggregate row per method with
/// mean ± std (and the median Cobias).
pub fn comparison_table(runs: &[RunSummary]) -> Rendered {
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    let order = method_order(runs);
    sorted.sort_by_key(|r| (order.iter().position(|m| *m == r.method), r.seed));

    let mut text_rows = vec![{
        let mut h = vec!["method".to_string(), "seed".to_string()];
        h.extend(TABLE_COLUMNS.iter().map(|c| c.to_string()));
        h
    }];
    let mut csv = format!("method,seed,{}\n", TABLE_COLUMNS.join(","));
    let mut json_runs = Vec::new();
    for r in &sorted {
        let vals = row_values(r);
        let mut row = vec![r.method.clone(), r.seed.to_string()];
        row.extend(vals.iter().map(|v| fmt_cell(*v)));
        text_rows.push(row);
        csv.push_str(&format!(
            "{},{},{}\n",
            r.method,
            r.seed,
            vals.iter().map(|v| v.map(crate::fmt_f64).unwrap_or_default()).collect::<Vec<_>>().join(",")
        ));
        let mut m = Map::new();
        m.insert("method".into(), json!(r.method));
        m.insert("seed".into(), json!(r.seed));
        for (c, v) in TABLE_COLUMNS.iter().zip(&vals) {
            m.insert((*c).into(), v.map_or(Value::Null, Value::from));
        }
        json_runs.push(Value::Object(m));
    }

    text_rows.push(vec![]);
    let mut agg_header = vec!["method".to_string(), "n".to_string()];
    agg_header.extend(TABLE_COLUMNS.iter().map(|c| c.to_string()));
    agg_header.push("cobias_median".into());
    text_rows.push(agg_header);
    csv.push_str(&format!(
        "\nmethod,n,{},cobias_median\n",
        TABLE_COLUMNS
            .iter()
            .flat_map(|c| [format!("{c}_mean"), format!("{c}_std")])
            .collect::<Vec<_>>()
            .join(",")
    ));
    let mut json_agg = Vec::new();
    for name in &order {
        let group: Vec<&&RunSummary> = sorted.iter().filter(|r| &r.method == name).collect();
        let cols: Vec<Vec<f64>> = (0..TABLE_COLUMNS.len())
            .map(|c| group.iter().filter_map(|r| row_values(r)[c]).collect())
            .collect();
        let stats: Vec<Option<Stat>> = cols.iter().map(|c| stat(c)).collect();
        let cob_median = stats[0].as_ref().map(|s| s.median);
        let mut row = vec![name.clone(), group.len().to_string()];
        row.extend(stats.iter().map(|s| {
            s.as_ref()
                .map_or_else(|| "-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
        }));
        row.push(fmt_cell(cob_median));
        text_rows.push(row);
        let mut line = vec![name.clone(), group.len().to_string()];
        for s in &stats {
            match s {
                Some(s) => {
                    line.push(crate::fmt_f64(s.mean));
                    line.push(crate::fmt_f64(s.std));
                }
                None => line.extend([String::new(), String::new()]),
            }
        }
        line.push(cob_median.map(crate::fmt_f64).unwrap_or_default());
        csv.push_str(&line.join(","));
        csv.push('\n');
        let mut m = Map::new();
        m.insert("method".into(), json!(name));
        m.insert("n".into(), json!(group.len()));
        for (c, s) in TABLE_COLUMNS.iter().zip(&stats) {
            m.insert(
                (*c).into(),
                s.as_ref().map_or(Value::Null, |s| json!({"mean": s.mean, "std": s.std, "median": s.median})),
            );
        }
        json_agg.push(Value::Object(m));
    }
    Rendered {
        text: align(&text_rows),
        csv,
        json: json!({"runs": json_runs, "summary": json_agg}),
    }
}

/// Per `(value, method)` medians plus the Spearman correlation between the
/// swept value and the median Cobias of each method.
pub fn sweep_table(param: &str, runs: &[RunSummary]) -> Rendered {
    let order = method_order(runs);
    let mut values: Vec<f64> = runs.iter().filter_map(|r| r.sweep.as_ref().map(|s| s.1)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();

    let header = [
        param.to_string(),
        "method".into(),
        "n".into(),
        "cobias_median".into(),
        "cobias_mean".into(),
        "cobias_std".into(),
        "unbiased_acc_median".into(),
        "worst_group_acc_median".into(),
        "average_acc_median".into(),
    ];
    let mut text_rows = vec![header.to_vec()];
    let mut csv = header.join(",") + "\n";
    let mut json_rows = Vec::new();
    let mut trends = Map::new();
    for name in &order {
        let mut medians = Vec::new();
        for &v in &values {
            let group: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| &r.method == name && r.sweep.as_ref().is_some_and(|s| s.1 == v))
                .collect();
            if group.is_empty() {
                continue;
            }
            let cob: Vec<f64> = group.iter().filter_map(|r| r.test.cobias).collect();
            let cs = stat(&cob);
            let unb = median(&group.iter().map(|r| r.test.unbiased_acc).collect::<Vec<_>>());
            let worst = median(&group.iter().map(|r| r.test.worst_group_acc).collect::<Vec<_>>());
            let avg = median(&group.iter().map(|r| r.average_acc()).collect::<Vec<_>>());
            if let Some(s) = &cs {
                medians.push((v, s.median));
            }
            let cells = [
                cs.as_ref().map(|s| s.median),
                cs.as_ref().map(|s| s.mean),
                cs.as_ref().map(|s| s.std),
                Some(unb),
                Some(worst),
                Some(avg),
            ];
            let mut row = vec![format!("{v}"), name.clone(), group.len().to_string()];
            row.extend(cells.iter().map(|c| fmt_cell(*c)));
            text_rows.push(row);
            csv.push_str(&format!(
                "{v},{name},{},{}\n",
                group.len(),
                cells.iter().map(|c| c.map(crate::fmt_f64).unwrap_or_default()).collect::<Vec<_>>().join(",")
            ));
            json_rows.push(json!({
                param: v,
                "method": name,
                "n": group.len(),
                "cobias_median": cells[0],
                "cobias_mean": cells[1],
                "cobias_std": cells[2],
                "unbiased_acc_median": unb,
                "worst_group_acc_median": worst,
                "average_acc_median": avg,
            }));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = medians.into_iter().unzip();
        trends.insert(name.clone(), spearman(&xs, &ys).map_or(Value::Null, Value::from));
    }
    let mut text = align(&text_rows);
    for (name, rho) in &trends {
        text.push_str(&format!(
            "spearman({param}, median cobias) [{name}] = {}\n",
            rho.as_f64().map_or("-".to_string(), |r| format!("{r:.4}"))
        ));
    }
    Rendered {
        text,
        csv,
        json: json!({"param": param, "rows": json_rows, "spearman_cobias": Value::Object(trends)}),
    }
}

/// Writes the renderings selected by `formats` as `<dir>/<stem>.{txt,csv,json}`.
pub fn write_rendered(r: &Rendered, dir: &Path, stem: &str, formats: &[Format]) -> Result<()> {
    for f in formats {
        match f {
            Format::Text => write(&dir.join(format!("{stem}.txt")), &r.text)?,
            Format::Csv => write(&dir.join(format!("{stem}.csv")), &r.csv)?,
            Format::Json => write(&dir.join(format!("{stem}.json")), pretty(&r.json))?,
        }
    }
    Ok(())
}

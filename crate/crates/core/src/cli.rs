//! Command-line front end: `gen-data`, `estimate-mi`, `train`, `report`,
//! `sweep`.
//!
//! Exit codes: 0 on success, 1 for bad input (arguments, configs, files),
//! 2 when the numerics fail (divergence, non-finite values).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::experiment::{
    collect_runs, comparison_table, pretty, run_experiment, run_sweep, sweep_table, write_rendered, ExperimentConfig,
    Format, RunSummary, SweepParam, SEED_ENV,
};
use crate::infomeasure::{exact_conditional_mi, exact_mi, gaussian_mi_oracle, ContingencyTable, MiEstimate};
use crate::kv::Section;
use crate::mine::{history_csv, train_mi_estimator, EstimatorConfig};
use crate::ndcore::{Matrix, RngState};
use crate::synthdata::{generate, generate_in_distribution, SpuriousSpec};

#[derive(Parser, Debug)]
#[command(name = "cobias", version, about = "Measure and reduce feature-level bias via conditional mutual information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic spurious-correlation dataset as CSV files.
    GenData(GenDataArgs),
    /// Estimate mutual information between CSV columns.
    EstimateMi(EstimateMiArgs),
    /// Train every (method, seed) pair of an experiment config.
    Train(TrainArgs),
    /// Build a comparison (or sweep) table from finished run directories.
    Report(ReportArgs),
    /// Re-run an experiment over a list of values of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory (train.csv, test.csv, test_iid.csv, spec.cfg).
    #[arg(long)]
    pub out: PathBuf,
    /// Spec assignments such as `corr=0.9 n=4000 seed=3`.
    #[arg(value_name = "KEY=VALUE")]
    pub assignments: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EstimateMiArgs {
    /// Input CSV with a header row.
    pub csv: PathBuf,
    /// Comma-separated column names for U.
    #[arg(long, value_delimiter = ',', required = true)]
    pub u: Vec<String>,
    /// Comma-separated column names for V.
    #[arg(long, value_delimiter = ',', required = true)]
    pub v: Vec<String>,
    /// Condition on this discrete column (exact mode only).
    #[arg(long)]
    pub given: Option<String>,
    /// Treat columns as discrete labels and compute the plug-in value.
    #[arg(long, conflicts_with = "gaussian")]
    pub exact: bool,
    /// Closed form from the sample correlation of two scalar columns.
    #[arg(long)]
    pub gaussian: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Critic hidden widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Write the estimate as JSON here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the per-epoch bound history (neural mode) as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories (searched recursively for run.json).
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Where to write the table files; defaults to the first directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "text,csv,json")]
    pub formats: Vec<Format>,
    /// File stem of the written tables.
    #[arg(long, default_value = "report")]
    pub stem: String,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::EstimateMi(a) => estimate_mi(&a),
        Command::Train(a) => train(&a),
        Command::Report(a) => report(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`"))),
        Err(_) => Ok(None),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let mut section = Section::new("data");
    for a in &args.assignments {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{a}`")))?;
        section.set(k.trim(), v.trim());
    }
    if let Some(seed) = seed_override()? {
        section.set("seed", seed);
    }
    section.reject_unknown(SpuriousSpec::allowed_keys())?;
    let spec = SpuriousSpec::from_section(&section)?;
    let (train, test) = generate(&spec)?;
    let iid = generate_in_distribution(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    train.save_csv(&args.out.join("train.csv"))?;
    test.save_csv(&args.out.join("test.csv"))?;
    iid.save_csv(&args.out.join("test_iid.csv"))?;
    let mut cfg = crate::kv::KvFile::new();
    cfg.push(spec.to_section("data"));
    write(&args.out.join("spec.cfg"), cfg.to_string())?;
    let mi = exact_mi(&train.label_joint()?)?;
    println!(
        "wrote {} train / {} test / {} iid rows to {}; train I(Y;Z) = {:.6} nats",
        train.len(),
        test.len(),
        iid.len(),
        args.out.display(),
        mi.value
    );
    Ok(())
}

/// Named columns of a CSV file, all parsed as floats.
struct Columns {
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Columns {
    fn read(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let csv_err = |e: csv::Error| Error::Parse {
            path: shown.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let names: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut data = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            for (j, raw) in rec.iter().enumerate() {
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    path: shown.clone(),
                    line,
                    msg: format!("column `{}`: bad number `{raw}`", names[j]),
                })?;
                data[j].push(v);
            }
        }
        Ok(Columns { names, data })
    }

    fn get(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn matrix(&self, names: &[String]) -> Result<Matrix> {
        let cols: Vec<&[f64]> = names.iter().map(|n| self.get(n)).collect::<Result<_>>()?;
        let rows = cols.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(rows * cols.len());
        for i in 0..rows {
            data.extend(cols.iter().map(|c| c[i]));
        }
        Matrix::from_vec(rows, cols.len(), data)
    }

    /// Several discrete columns folded into one label (mixed radix).
    fn discrete(&self, names: &[String]) -> Result<(Vec<usize>, usize)> {
        let mut labels: Vec<usize> = Vec::new();
        let mut card = 1usize;
        for name in names {
            let col = self.get(name)?;
            let mut vals = Vec::with_capacity(col.len());
            for &v in col {
                if !(v >= 0.0 && v.fract() == 0.0 && v < 1e6) {
                    return Err(Error::invalid(format!(
                        "column `{name}` holds `{v}`, which is not a discrete label"
                    )));
                }
                vals.push(v as usize);
            }
            let k = vals.iter().max().map_or(1, |m| m + 1);
            if labels.is_empty() {
                labels = vals;
            } else {
                labels.iter_mut().zip(&vals).for_each(|(l, v)| *l = *l * k + v);
            }
            card *= k;
        }
        Ok((labels, card))
    }
}

fn estimate_mi(args: &EstimateMiArgs) -> Result<()> {
    let cols = Columns::read(&args.csv)?;
    let label = |xs: &[String]| xs.join(",");
    let mut name = format!("I({};{}", label(&args.u), label(&args.v));
    if let Some(g) = &args.given {
        name.push_str(&format!("|{g}"));
    }
    name.push(')');

    let est: MiEstimate = if args.exact {
        let (u, cu) = cols.discrete(&args.u)?;
        let (v, cv) = cols.discrete(&args.v)?;
        match &args.given {
            Some(g) => {
                let (w, cw) = cols.discrete(std::slice::from_ref(g))?;
                exact_conditional_mi(&ContingencyTable::from_samples(&[&u, &v, &w], &[cu, cv, cw])?, 2)?
            }
            None => exact_mi(&ContingencyTable::from_samples(&[&u, &v], &[cu, cv])?)?,
        }
    } else if args.given.is_some() {
        return Err(Error::invalid("--given requires --exact"));
    } else if args.gaussian {
        if args.u.len() != 1 || args.v.len() != 1 {
            return Err(Error::invalid("--gaussian takes exactly one U and one V column"));
        }
        let (u, v) = (cols.get(&args.u[0])?, cols.get(&args.v[0])?);
        let r = pearson(u, v).ok_or_else(|| Error::invalid("need at least two non-constant samples"))?;
        MiEstimate {
            value: gaussian_mi_oracle(r.clamp(-1.0 + 1e-12, 1.0 - 1e-12))?,
            estimator: crate::infomeasure::EstimatorKind::GaussianClosedForm,
            is_lower_bound: false,
            n_samples: Some(u.len()),
        }
    } else {
        let d = EstimatorConfig::default();
        let cfg = EstimatorConfig {
            epochs: args.epochs.unwrap_or(d.epochs),
            batch: args.batch.unwrap_or(d.batch),
            lr: args.lr.unwrap_or(d.lr),
            hidden: args.hidden.clone().unwrap_or(d.hidden.clone()),
            ..d
        };
        let seed = seed_override()?.unwrap_or(args.seed);
        let u = cols.matrix(&args.u)?;
        let v = cols.matrix(&args.v)?;
        let trained = train_mi_estimator(&u, &v, &cfg, &mut RngState::new(seed))?;
        if let Some(p) = &args.history {
            write(p, history_csv(&trained.history))?;
        }
        trained.estimate
    };

    println!(
        "{name} = {:.6} nats ({:.6} bits), {}{}",
        est.value,
        est.bits(),
        est.estimator.as_str(),
        if est.is_lower_bound { ", lower bound" } else { "" }
    );
    let doc = pretty(&json!({
        "quantity": name,
        "value": est.value,
        "bits": est.bits(),
        "estimator": est.estimator.as_str(),
        "is_lower_bound": est.is_lower_bound,
        "n_samples": est.n_samples,
    }));
    match &args.json {
        Some(p) => write(p, doc),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn pearson(u: &[f64], v: &[f64]) -> Option<f64> {
    let n = u.len().min(v.len());
    if n < 2 {
        return None;
    }
    let mu = u[..n].iter().sum::<f64>() / n as f64;
    let mv = v[..n].iter().sum::<f64>() / n as f64;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (u[i] - mu, v[i] - mv);
        suv += a * b;
        suu += a * a;
        svv += b * b;
    }
    (suu > 0.0 && svv > 0.0).then(|| suv / (suu * svv).sqrt())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut exp = ExperimentConfig::load(path)?;
    exp.apply_seed_env()?;
    Ok(exp)
}

fn train(args: &TrainArgs) -> Result<()> {
    let exp = load_config(&args.config)?;
    let runs = run_experiment(&exp, args.jobs)?;
    let table = comparison_table(&runs);
    write_rendered(&table, &exp.out, "summary", &exp.formats)?;
    print!("{}", table.text);
    Ok(())
}

/// A sweep table when every run carries the same sweep parameter, a
/// comparison table otherwise.
fn render(runs: &[RunSummary]) -> crate::experiment::Rendered {
    let param = runs.first().and_then(|r| r.sweep.as_ref()).map(|(p, _)| p.clone());
    match param {
        Some(p) if runs.iter().all(|r| r.sweep.as_ref().is_some_and(|(q, _)| *q == p)) => sweep_table(&p, runs),
        _ => comparison_table(runs),
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let runs = collect_runs(&args.dirs)?;
    let table = render(&runs);
    let out = args.out.clone().unwrap_or_else(|| args.dirs[0].clone());
    write_rendered(&table, &out, &args.stem, &args.formats)?;
    print!("{}", table.text);
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let exp = load_config(&args.config)?;
    let runs = run_sweep(&exp, args.param, &args.values, args.jobs)?;
    let table = sweep_table(args.param.as_str(), &runs);
    let dir = exp.out.join(format!("sweep-{}", args.param.as_str()));
    write_rendered(&table, &dir, "sweep", &exp.formats)?;
    print!("{}", table.text);
    Ok(())
}

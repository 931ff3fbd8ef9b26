//! Seeded spurious-correlation datasets, label noise, class resampling and
//! CSV persistence.
//!
//! A sample draws a target `Y`, then a bias label `Z` that equals the
//! "matched" value `Y mod B` with probability `corr` (uniform over the other
//! values otherwise). Inputs concatenate three blocks: core dimensions with a
//! `Y`-dependent mean pattern, bias dimensions with a `Z`-dependent pattern,
//! and pure noise dimensions. Every coordinate carries `N(0, sigma^2)` noise.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::infomeasure::{check_noise_rate, ContingencyTable};
use crate::kv::{self, Section};
use crate::ndcore::{Matrix, RngState};

/// Test-split override used to express a distribution/domain shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    pub corr: f64,
    pub signal_sep: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousSpec {
    pub n: usize,
    pub n_test: usize,
    /// Target classes.
    pub a: usize,
    /// Bias classes.
    pub b: usize,
    /// p(Z = matched | Y), in [1/B, 1].
    pub corr: f64,
    pub d_core: usize,
    pub d_bias: usize,
    pub d_noise: usize,
    /// Mean separation of the core pattern.
    pub signal_sep: f64,
    /// Mean separation of the bias pattern; `None` uses `signal_sep`.
    pub bias_sep: Option<f64>,
    pub noise_sigma: f64,
    /// Training-split class prior; `None` is uniform. The test split is
    /// always class-uniform.
    pub y_prior: Option<Vec<f64>>,
    pub shift: Option<Shift>,
    pub seed: u64,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        SpuriousSpec {
            n: 4000,
            n_test: 4000,
            a: 2,
            b: 2,
            corr: 0.9,
            d_core: 2,
            d_bias: 2,
            d_noise: 4,
            signal_sep: 2.0,
            bias_sep: None,
            noise_sigma: 1.0,
            y_prior: None,
            shift: None,
            seed: 0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "n",
    "n_test",
    "a",
    "b",
    "corr",
    "d_core",
    "d_bias",
    "d_noise",
    "signal_sep",
    "bias_sep",
    "noise_sigma",
    "y_prior",
    "shift_corr",
    "shift_signal_sep",
    "seed",
];

impl SpuriousSpec {
    pub fn input_dim(&self) -> usize {
        self.d_core + self.d_bias + self.d_noise
    }

    pub fn bias_separation(&self) -> f64 {
        self.bias_sep.unwrap_or(self.signal_sep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a < 1 || self.b < 1 {
            return Err(Error::invalid("need at least one target and one bias class"));
        }
        let lo = 1.0 / self.b as f64;
        if !(self.corr >= lo - 1e-12 && self.corr <= 1.0) {
            return Err(Error::invalid(format!("corr {} outside [{lo}, 1]", self.corr)));
        }
        let groups = self.a * self.b;
        if self.n < groups || self.n_test < groups {
            return Err(Error::invalid(format!(
                "n = {} / n_test = {} must be at least A*B = {groups}",
                self.n, self.n_test
            )));
        }
        if self.input_dim() == 0 {
            return Err(Error::invalid("dataset needs at least one input dimension"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be positive"));
        }
        if let Some(p) = &self.y_prior {
            if p.len() != self.a || p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("y_prior must be {} probabilities summing to 1", self.a)));
            }
        }
        if let Some(s) = &self.shift {
            if !(s.corr >= lo - 1e-12 && s.corr <= 1.0) {
                return Err(Error::invalid(format!("shift corr {} outside [{lo}, 1]", s.corr)));
            }
        }
        Ok(())
    }

    pub fn to_section(&self, name: &str) -> Section {
        let mut s = Section::new(name);
        s.set("n", self.n);
        s.set("n_test", self.n_test);
        s.set("a", self.a);
        s.set("b", self.b);
        s.set("corr", self.corr);
        s.set("d_core", self.d_core);
        s.set("d_bias", self.d_bias);
        s.set("d_noise", self.d_noise);
        s.set("signal_sep", self.signal_sep);
        if let Some(v) = self.bias_sep {
            s.set("bias_sep", v);
        }
        s.set("noise_sigma", self.noise_sigma);
        if let Some(p) = &self.y_prior {
            s.set("y_prior", kv::join(p));
        }
        if let Some(sh) = &self.shift {
            s.set("shift_corr", sh.corr);
            s.set("shift_signal_sep", sh.signal_sep);
        }
        s.set("seed", self.seed);
        s
    }

    /// Reads a spec from a section, defaulting absent keys.
    pub fn from_section(s: &Section) -> Result<Self> {
        let d = SpuriousSpec::default();
        let shift = match (s.parse::<f64>("shift_corr")?, s.parse::<f64>("shift_signal_sep")?) {
            (None, None) => None,
            (corr, sep) => Some(Shift {
                corr: corr.unwrap_or(1.0 / s.parse_or("b", d.b)? as f64),
                signal_sep: sep.unwrap_or(s.parse_or("signal_sep", d.signal_sep)?),
            }),
        };
        let n = s.parse_or("n", d.n)?;
        let spec = SpuriousSpec {
            n,
            n_test: s.parse_or("n_test", n)?,
            a: s.parse_or("a", d.a)?,
            b: s.parse_or("b", d.b)?,
            corr: s.parse_or("corr", d.corr)?,
            d_core: s.parse_or("d_core", d.d_core)?,
            d_bias: s.parse_or("d_bias", d.d_bias)?,
            d_noise: s.parse_or("d_noise", d.d_noise)?,
            signal_sep: s.parse_or("signal_sep", d.signal_sep)?,
            bias_sep: s.parse("bias_sep")?,
            noise_sigma: s.parse_or("noise_sigma", d.noise_sigma)?,
            y_prior: s.parse_list("y_prior")?,
            shift,
            seed: s.parse_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn allowed_keys() -> &'static [&'static str] {
        SPEC_KEYS
    }
}

/// Inputs with aligned target and bias labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
    /// Number of target classes.
    pub a: usize,
    /// Number of bias classes.
    pub b: usize,
}

impl LabeledDataset {
    pub fn new(x: Matrix, y: Vec<usize>, z: Vec<usize>, a: usize, b: usize) -> Result<Self> {
        if x.rows() != y.len() || y.len() != z.len() {
            return Err(Error::invalid(format!(
                "misaligned dataset: {} rows, {} targets, {} bias labels",
                x.rows(),
                y.len(),
                z.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v >= a) {
            return Err(Error::invalid(format!("target label {bad} out of range for A = {a}")));
        }
        if let Some(bad) = z.iter().find(|&&v| v >= b) {
            return Err(Error::invalid(format!("bias label {bad} out of range for B = {b}")));
        }
        Ok(LabeledDataset { x, y, z, a, b })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn group(&self, i: usize) -> usize {
        self.y[i] * self.b + self.z[i]
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.a * self.b];
        for i in 0..self.len() {
            c[self.group(i)] += 1;
        }
        c
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.a];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            a: self.a,
            b: self.b,
        }
    }

    /// Empirical (Y, Z) table.
    pub fn label_joint(&self) -> Result<ContingencyTable> {
        ContingencyTable::from_samples(&[&self.y, &self.z], &[self.a.max(1), self.b.max(1)])
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let d = self.x.cols();
        let mut out = Vec::with_capacity(self.len() * (d + 2) * 24);
        let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        if d > 0 {
            write!(out, "{},", header.join(",")).unwrap();
        }
        writeln!(out, "y,z").unwrap();
        for i in 0..self.len() {
            for v in self.x.row(i) {
                write!(out, "{},", crate::fmt_f64(*v)).unwrap();
            }
            writeln!(out, "{},{}", self.y[i], self.z[i]).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads `x0..x{d-1},y,z`. A and B are inferred as one past the largest
    /// label seen.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_err(&shown, e))?;
        let headers = rdr.headers().map_err(|e| csv_err(&shown, e))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let yi = col("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
        let zi = col("z").ok_or_else(|| Error::MissingColumn("z".into()))?;
        let mut xi = Vec::new();
        for j in 0.. {
            match col(&format!("x{j}")) {
                Some(p) => xi.push(p),
                None => break,
            }
        }
        let d = xi.len();
        let (mut data, mut y, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(&shown, e))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |what: &str, raw: &str| Error::Parse {
                path: shown.clone(),
                line,
                msg: format!("bad {what} value `{raw}`"),
            };
            for (j, &p) in xi.iter().enumerate() {
                let raw = rec.get(p).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| bad(&format!("x{j}"), raw))?;
                if !v.is_finite() {
                    return Err(bad(&format!("x{j}"), raw));
                }
                data.push(v);
            }
            let ry = rec.get(yi).unwrap_or("");
            let rz = rec.get(zi).unwrap_or("");
            y.push(ry.parse::<usize>().map_err(|_| bad("y", ry))?);
            z.push(rz.parse::<usize>().map_err(|_| bad("z", rz))?);
        }
        let n = y.len();
        let a = y.iter().max().map_or(1, |m| m + 1);
        let b = z.iter().max().map_or(1, |m| m + 1);
        LabeledDataset::new(Matrix::from_vec(n, d, data)?, y, z, a, b)
    }
}

fn csv_err(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_string(),
        line,
        msg: e.to_string(),
    }
}

struct SplitParams<'a> {
    n: usize,
    corr: f64,
    core_sep: f64,
    prior: Option<&'a [f64]>,
}

fn draw_split(spec: &SpuriousSpec, p: SplitParams<'_>, rng: &mut RngState) -> Result<LabeledDataset> {
    let d = spec.input_dim();
    let mut x = Matrix::zeros(p.n, d);
    let mut y = Vec::with_capacity(p.n);
    let mut z = Vec::with_capacity(p.n);
    let bias_sep = spec.bias_separation();
    for i in 0..p.n {
        let yi = match p.prior {
            Some(prior) => sample_categorical(prior, rng),
            None => rng.below(spec.a),
        };
        let matched = yi % spec.b;
        let zi = if spec.b == 1 || rng.uniform() < p.corr {
            matched
        } else {
            let k = rng.below(spec.b - 1);
            if k >= matched {
                k + 1
            } else {
                k
            }
        };
        let row = x.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let mean = if j < spec.d_core {
                pattern(j, yi, spec.a) * p.core_sep / 2.0
            } else if j < spec.d_core + spec.d_bias {
                pattern(j - spec.d_core, zi, spec.b) * bias_sep / 2.0
            } else {
                0.0
            };
            *v = mean + spec.noise_sigma * rng.normal();
        }
        y.push(yi);
        z.push(zi);
    }
    LabeledDataset::new(x, y, z, spec.a, spec.b)
}

/// +1 on dimensions "owned" by the class, -1 elsewhere. For two classes and a
/// single dimension this is the usual +-sep/2 pair.
fn pattern(dim: usize, class: usize, classes: usize) -> f64 {
    if classes <= 1 {
        0.0
    } else if dim % classes == class {
        1.0
    } else {
        -1.0
    }
}

fn sample_categorical(p: &[f64], rng: &mut RngState) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn check_groups(ds: &LabeledDataset, split: &str) -> Result<()> {
    if let Some(g) = ds.group_counts().iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "{split} split has an empty group (y={}, z={}); increase n or lower corr",
            g / ds.b,
            g % ds.b
        )));
    }
    Ok(())
}

/// Draws the training and test splits. The test split is group-balanced
/// (uniform Y, `corr = 1/B`) unless `shift` overrides it.
pub fn generate(spec: &SpuriousSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let train = draw_split(
        spec,
        SplitParams {
            n: spec.n,
            corr: spec.corr,
            core_sep: spec.signal_sep,
            prior: spec.y_prior.as_deref(),
        },
        &mut root.derive(1),
    )?;
    let (corr_test, sep_test) = match &spec.shift {
        Some(s) => (s.corr, s.signal_sep),
        None => (1.0 / spec.b as f64, spec.signal_sep),
    };
    let test = draw_split(
        spec,
        SplitParams {
            n: spec.n_test,
            corr: corr_test,
            core_sep: sep_test,
            prior: None,
        },
        &mut root.derive(2),
    )?;
    check_groups(&train, "train")?;
    check_groups(&test, "test")?;
    Ok((train, test))
}

/// A held-out split drawn from the training distribution (same `corr` and
/// class prior), on its own random stream. Groups may be empty.
pub fn generate_in_distribution(spec: &SpuriousSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    draw_split(
        spec,
        SplitParams {
            n: spec.n_test,
            corr: spec.corr,
            core_sep: spec.signal_sep,
            prior: spec.y_prior.as_deref(),
        },
        &mut RngState::new(spec.seed).derive(3),
    )
}

/// Resamples each label through the symmetric noise channel: with probability
/// `rho` the label moves to one of the other `K - 1` classes, uniformly.
pub fn apply_label_noise(y: &[usize], rho: f64, k: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    check_noise_rate(rho, k)?;
    if let Some(bad) = y.iter().find(|&&v| v >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for K = {k}")));
    }
    if rho == 0.0 {
        return Ok(y.to_vec());
    }
    Ok(y.iter()
        .map(|&yi| {
            if rng.uniform() < rho {
                let j = rng.below(k - 1);
                if j >= yi {
                    j + 1
                } else {
                    j
                }
            } else {
                yi
            }
        })
        .collect())
}

/// Indices drawn with replacement so that every class is equally likely;
/// same length as `y`.
pub fn class_resample_indices(y: &[usize], a: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); a];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {c} has no samples to resample from")));
    }
    Ok((0..y.len())
        .map(|_| {
            let members = &by_class[rng.below(a)];
            members[rng.below(members.len())]
        })
        .collect())
}

pub fn resample_by_class(ds: &LabeledDataset, rng: &mut RngState) -> Result<LabeledDataset> {
    let idx = class_resample_indices(&ds.y, ds.a, rng)?;
    Ok(ds.subset(&idx))
}

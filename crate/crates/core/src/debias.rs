//! Training loops: ERM, stochastic label noise, the minimax Cobias
//! regularizer, group DRO, and the head-only linear probe.
//!
//! All randomness comes from independent streams of the run seed, so turning
//! a component off (zero noise, zero regularizer weight) leaves the other
//! streams, and hence the model trajectory, untouched.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fairmetrics::{full_report, group_accuracies, FullReport, ReportConfig};
use crate::infomeasure::check_noise_rate;
use crate::kv::Section;
use crate::mine::{batch_ranges, surrogate_bias_term, surrogate_inputs, DvTrainer, EstimatorConfig, StatisticsNetwork};
use crate::model::BiasModel;
use crate::ndcore::{Adam, Matrix, RngState, Tape, Var};
use crate::synthdata::{apply_label_noise, class_resample_indices, LabeledDataset};

const STREAM_BATCHES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_CRITIC: u64 = 3;
const STREAM_INIT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMethod {
    Erm,
    GroupDro,
}

/// A base loss plus optional label noise and Cobias regularizer, written
/// `erm`, `noise`, `regularizer`, `group_dro`, or joined with `+`
/// (`group_dro+noise`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Method {
    pub base: BaseMethod,
    pub label_noise: bool,
    pub regularizer: bool,
}

impl Method {
    pub const ERM: Method = Method {
        base: BaseMethod::Erm,
        label_noise: false,
        regularizer: false,
    };
    pub const NOISE: Method = Method {
        label_noise: true,
        ..Method::ERM
    };
    pub const REGULARIZER: Method = Method {
        regularizer: true,
        ..Method::ERM
    };
    pub const GROUP_DRO: Method = Method {
        base: BaseMethod::GroupDro,
        ..Method::ERM
    };
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = Vec::new();
        if self.base == BaseMethod::GroupDro {
            parts.push("group_dro");
        }
        if self.label_noise {
            parts.push("noise");
        }
        if self.regularizer {
            parts.push("regularizer");
        }
        if parts.is_empty() {
            parts.push("erm");
        }
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut m = Method::ERM;
        for part in s.split('+').map(str::trim) {
            match part {
                "erm" => {}
                "group_dro" => m.base = BaseMethod::GroupDro,
                "noise" => m.label_noise = true,
                "regularizer" => m.regularizer = true,
                other => {
                    return Err(format!(
                        "unknown method `{other}` (expected erm, noise, regularizer, group_dro)"
                    ))
                }
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta: f64,
    pub rho: f64,
    pub method: Method,
    pub critic: EstimatorConfig,
    pub dro_eta: f64,
    /// Class-balanced resampling of every epoch.
    pub resample: bool,
    /// Alternate model and critic every batch instead of every epoch.
    pub per_step_alternation: bool,
    /// Reinitialise the critic at the start of each of its epochs.
    pub critic_cold_start: bool,
    /// Linear probe: keep the trained head instead of reinitialising it.
    pub probe_keep_head: bool,
    /// Record group accuracies every this many epochs (0 = never).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch: 256,
            lr: 1e-4,
            weight_decay: 1e-4,
            beta: 5.0,
            rho: 0.2,
            method: Method::ERM,
            critic: EstimatorConfig::default(),
            dro_eta: 0.01,
            resample: true,
            per_step_alternation: false,
            critic_cold_start: false,
            probe_keep_head: false,
            snapshot_every: 0,
            seed: 0,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "method",
    "epochs",
    "batch",
    "lr",
    "weight_decay",
    "beta",
    "rho",
    "dro_eta",
    "resample",
    "per_step_alternation",
    "critic_cold_start",
    "probe_keep_head",
    "snapshot_every",
    "critic_hidden",
    "critic_lr",
    "critic_batch",
    "critic_weight_decay",
    "critic_ma_correction",
];

impl TrainConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        check_noise_rate(self.rho, classes)?;
        if self.batch < crate::mine::MIN_BATCH {
            return Err(Error::Config(format!("batch must be >= {}", crate::mine::MIN_BATCH)));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.dro_eta >= 0.0) {
            return Err(Error::Config("lr must be positive; weight_decay and dro_eta non-negative".into()));
        }
        Ok(())
    }

    pub fn allowed_keys() -> &'static [&'static str] {
        TRAIN_KEYS
    }

    /// Applies the keys present in `s` on top of `self`.
    pub fn apply_section(&mut self, s: &Section) -> Result<()> {
        if let Some(m) = s.parse::<Method>("method")? {
            self.method = m;
        }
        self.epochs = s.parse_or("epochs", self.epochs)?;
        self.batch = s.parse_or("batch", self.batch)?;
        self.lr = s.parse_or("lr", self.lr)?;
        self.weight_decay = s.parse_or("weight_decay", self.weight_decay)?;
        self.beta = s.parse_or("beta", self.beta)?;
        self.rho = s.parse_or("rho", self.rho)?;
        self.dro_eta = s.parse_or("dro_eta", self.dro_eta)?;
        self.resample = s.parse_or("resample", self.resample)?;
        self.per_step_alternation = s.parse_or("per_step_alternation", self.per_step_alternation)?;
        self.critic_cold_start = s.parse_or("critic_cold_start", self.critic_cold_start)?;
        self.probe_keep_head = s.parse_or("probe_keep_head", self.probe_keep_head)?;
        self.snapshot_every = s.parse_or("snapshot_every", self.snapshot_every)?;
        if let Some(h) = s.parse_list::<usize>("critic_hidden")? {
            self.critic.hidden = h;
        }
        self.critic.lr = s.parse_or("critic_lr", self.critic.lr)?;
        self.critic.batch = s.parse_or("critic_batch", self.critic.batch)?;
        self.critic.weight_decay = s.parse_or("critic_weight_decay", self.critic.weight_decay)?;
        self.critic.ma_correction = s.parse_or("critic_ma_correction", self.critic.ma_correction)?;
        Ok(())
    }

    pub fn write_section(&self, s: &mut Section) {
        s.set("method", self.method);
        s.set("epochs", self.epochs);
        s.set("batch", self.batch);
        s.set("lr", self.lr);
        s.set("weight_decay", self.weight_decay);
        s.set("beta", self.beta);
        s.set("rho", self.rho);
        s.set("dro_eta", self.dro_eta);
        s.set("resample", self.resample);
        s.set("per_step_alternation", self.per_step_alternation);
        s.set("critic_cold_start", self.critic_cold_start);
        s.set("probe_keep_head", self.probe_keep_head);
        s.set("snapshot_every", self.snapshot_every);
        s.set("critic_hidden", crate::kv::join(&self.critic.hidden));
        s.set("critic_lr", self.critic.lr);
        s.set("critic_batch", self.critic.batch);
        s.set("critic_weight_decay", self.critic.weight_decay);
        s.set("critic_ma_correction", self.critic.ma_correction);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Model,
    Critic,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Model => "model",
            Phase::Critic => "critic",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub train_unbiased_acc: f64,
    pub train_worst_group_acc: f64,
    pub eval_unbiased_acc: Option<f64>,
    pub eval_worst_group_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean task loss over the epoch's batches (model phases).
    pub task_loss: Option<f64>,
    /// Mean surrogate bias term seen by the model.
    pub reg_value: Option<f64>,
    /// Mean DV bound reached by the critic.
    pub critic_bound: Option<f64>,
    pub extractor_checksum: u64,
    pub head_checksum: u64,
    pub critic_checksum: Option<u64>,
    pub snapshot: Option<Snapshot>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(crate::fmt_f64).unwrap_or_default();
        let mut out = String::from(
            "epoch,phase,task_loss,reg_value,critic_bound,extractor_checksum,head_checksum,critic_checksum,\
             train_unbiased_acc,train_worst_group_acc,eval_unbiased_acc,eval_worst_group_acc\n",
        );
        for e in &self.epochs {
            let s = e.snapshot;
            out.push_str(&format!(
                "{},{},{},{},{},{:016x},{:016x},{},{},{},{},{}\n",
                e.epoch,
                e.phase.as_str(),
                opt(e.task_loss),
                opt(e.reg_value),
                opt(e.critic_bound),
                e.extractor_checksum,
                e.head_checksum,
                e.critic_checksum.map(|c| format!("{c:016x}")).unwrap_or_default(),
                opt(s.map(|s| s.train_unbiased_acc)),
                opt(s.map(|s| s.train_worst_group_acc)),
                opt(s.and_then(|s| s.eval_unbiased_acc)),
                opt(s.and_then(|s| s.eval_worst_group_acc)),
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: BiasModel,
    pub critic: Option<StatisticsNetwork>,
    pub log: TrainLog,
}

/// A failed run: the error, the model as of the last completed epoch, and
/// the log up to that point.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Box<BiasModel>,
    pub log: TrainLog,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Error {
        f.error
    }
}

pub type TrainResult = std::result::Result<TrainOutput, TrainFailure>;

pub fn train_erm(m: BiasModel, ds: &LabeledDataset, cfg: &TrainConfig) -> TrainResult {
    let cfg = TrainConfig {
        method: Method::ERM,
        ..cfg.clone()
    };
    train(m, None, ds, None, &cfg)
}

pub fn train_label_noise(m: BiasModel, ds: &LabeledDataset, cfg: &TrainConfig) -> TrainResult {
    let cfg = TrainConfig {
        method: Method::NOISE,
        ..cfg.clone()
    };
    train(m, None, ds, None, &cfg)
}

pub fn train_with_regularizer(
    m: BiasModel,
    critic: Option<StatisticsNetwork>,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> TrainResult {
    let cfg = TrainConfig {
        method: Method::REGULARIZER,
        ..cfg.clone()
    };
    train(m, critic, ds, None, &cfg)
}

pub fn train_group_dro(m: BiasModel, ds: &LabeledDataset, cfg: &TrainConfig) -> TrainResult {
    let cfg = TrainConfig {
        method: Method::GROUP_DRO,
        ..cfg.clone()
    };
    train(m, None, ds, None, &cfg)
}

/// Trains `m` on `ds` with `cfg.method`. `eval` is only used for snapshots.
pub fn train(
    m: BiasModel,
    critic: Option<StatisticsNetwork>,
    ds: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> TrainResult {
    let mut run = match Run::new(m, critic, ds, cfg) {
        Ok(r) => r,
        Err((error, m)) => {
            return Err(TrainFailure {
                error,
                last_good: Box::new(m),
                log: TrainLog::default(),
            })
        }
    };
    for epoch in 0..cfg.epochs {
        let last_good = run.model.clone();
        if let Err(error) = run.epoch(epoch, ds, eval) {
            return Err(TrainFailure {
                error,
                last_good: Box::new(last_good),
                log: run.log,
            });
        }
    }
    Ok(TrainOutput {
        model: run.model,
        critic: run.critic.map(|t| t.net),
        log: run.log,
    })
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    model: BiasModel,
    adam: Adam,
    critic: Option<DvTrainer>,
    dro_q: Vec<f64>,
    batch_rng: RngState,
    noise_rng: RngState,
    critic_rng: RngState,
    log: TrainLog,
}

impl<'a> Run<'a> {
    fn new(
        model: BiasModel,
        critic: Option<StatisticsNetwork>,
        ds: &LabeledDataset,
        cfg: &'a TrainConfig,
    ) -> std::result::Result<Self, (Error, BiasModel)> {
        if let Err(e) = Self::check(&model, critic.as_ref(), ds, cfg) {
            return Err((e, model));
        }
        let critic = if cfg.method.regularizer {
            let net = match critic {
                Some(net) => net,
                None => {
                    let mut init = RngState::with_stream(cfg.seed, STREAM_INIT);
                    match StatisticsNetwork::new(
                        model.feature_dim() + ds.a,
                        ds.b,
                        &cfg.critic.hidden,
                        cfg.critic.clip,
                        &mut init,
                    ) {
                        Ok(n) => n,
                        Err(e) => return Err((e, model)),
                    }
                }
            };
            Some(DvTrainer::new(net, &cfg.critic))
        } else {
            None
        };
        // Groups absent from the training data get no weight.
        let counts = ds.group_counts();
        let present = counts.iter().filter(|&&c| c > 0).count().max(1);
        let dro_q = counts
            .iter()
            .map(|&c| if c > 0 { 1.0 / present as f64 } else { 0.0 })
            .collect();
        Ok(Run {
            adam: Adam::new(cfg.lr, cfg.weight_decay),
            dro_q,
            batch_rng: RngState::with_stream(cfg.seed, STREAM_BATCHES),
            noise_rng: RngState::with_stream(cfg.seed, STREAM_NOISE),
            critic_rng: RngState::with_stream(cfg.seed, STREAM_CRITIC),
            critic,
            model,
            cfg,
            log: TrainLog::default(),
        })
    }

    fn check(model: &BiasModel, critic: Option<&StatisticsNetwork>, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<()> {
        cfg.validate(ds.a)?;
        if model.input_dim() != ds.input_dim() || model.classes() != ds.a {
            return Err(Error::invalid(format!(
                "model maps {} inputs to {} classes but the data has {} inputs and {} classes",
                model.input_dim(),
                model.classes(),
                ds.input_dim(),
                ds.a
            )));
        }
        if let Some(net) = critic {
            if net.u_dim() != model.feature_dim() + ds.a || net.v_dim() != ds.b {
                return Err(Error::invalid(format!(
                    "critic input must be {} feature + target columns and {} bias columns",
                    model.feature_dim() + ds.a,
                    ds.b
                )));
            }
        }
        Ok(())
    }

    fn epoch(&mut self, epoch: usize, ds: &LabeledDataset, eval: Option<&LabeledDataset>) -> Result<()> {
        let phase = match (self.critic.is_some(), self.cfg.per_step_alternation) {
            (false, _) => Phase::Model,
            (true, true) => Phase::Joint,
            (true, false) if epoch % 2 == 0 => Phase::Model,
            (true, false) => Phase::Critic,
        };
        let mut entry = EpochLog {
            epoch,
            phase,
            task_loss: None,
            reg_value: None,
            critic_bound: None,
            extractor_checksum: 0,
            head_checksum: 0,
            critic_checksum: None,
            snapshot: None,
        };
        match phase {
            Phase::Model | Phase::Joint => {
                let (loss, reg, bound) = self.model_epoch(ds, phase == Phase::Joint)?;
                entry.task_loss = Some(loss);
                entry.reg_value = reg;
                entry.critic_bound = bound;
            }
            Phase::Critic => {
                entry.critic_bound = Some(self.critic_epoch(ds)?);
            }
        }
        entry.extractor_checksum = self.model.extractor_checksum();
        entry.head_checksum = self.model.head_checksum();
        entry.critic_checksum = self.critic.as_ref().map(|c| c.net.checksum());
        if self.cfg.snapshot_every > 0 && (epoch + 1) % self.cfg.snapshot_every == 0 {
            entry.snapshot = Some(self.snapshot(ds, eval)?);
        }
        self.log.epochs.push(entry);
        Ok(())
    }

    fn snapshot(&self, ds: &LabeledDataset, eval: Option<&LabeledDataset>) -> Result<Snapshot> {
        let tr = group_accuracies(&self.model.predict(&ds.x)?, &ds.y, &ds.z, ds.a, ds.b)?;
        let ev = match eval {
            Some(e) => Some(group_accuracies(&self.model.predict(&e.x)?, &e.y, &e.z, e.a, e.b)?),
            None => None,
        };
        Ok(Snapshot {
            train_unbiased_acc: tr.unbiased_acc,
            train_worst_group_acc: tr.worst_group_acc,
            eval_unbiased_acc: ev.as_ref().map(|r| r.unbiased_acc),
            eval_worst_group_acc: ev.as_ref().map(|r| r.worst_group_acc),
        })
    }

    fn epoch_order(&mut self, ds: &LabeledDataset) -> Result<Vec<usize>> {
        if self.cfg.resample {
            class_resample_indices(&ds.y, ds.a, &mut self.batch_rng)
        } else {
            Ok(self.batch_rng.permutation(ds.len()))
        }
    }

    /// Returns mean task loss, mean surrogate value and, for joint epochs,
    /// the mean critic bound.
    fn model_epoch(&mut self, ds: &LabeledDataset, joint: bool) -> Result<(f64, Option<f64>, Option<f64>)> {
        let order = self.epoch_order(ds)?;
        let batches = batch_ranges(order.len(), self.cfg.batch);
        let (mut loss_sum, mut reg_sum, mut bound_sum) = (0.0, 0.0, 0.0);
        let mut reg_seen = false;
        for r in &batches {
            let idx = &order[r.clone()];
            let x = ds.x.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| ds.y[i]).collect();
            let z: Vec<usize> = idx.iter().map(|&i| ds.z[i]).collect();
            let (loss, reg) = self.model_step(&x, &y, &z, ds.a, ds.b)?;
            loss_sum += loss;
            if let Some(v) = reg {
                reg_sum += v;
                reg_seen = true;
            }
            if joint {
                let f = self.model.features(&x)?;
                let (u, v) = surrogate_inputs(&f, &y, &z, ds.a, ds.b)?;
                let trainer = self.critic.as_mut().expect("joint phase has a critic");
                bound_sum += trainer.step(&u, &v, &mut self.critic_rng).map_err(smaller_beta)?;
            }
        }
        let nb = batches.len() as f64;
        Ok((
            loss_sum / nb,
            reg_seen.then(|| reg_sum / nb),
            joint.then(|| bound_sum / nb),
        ))
    }

    fn model_step(&mut self, x: &Matrix, y: &[usize], z: &[usize], a: usize, b: usize) -> Result<(f64, Option<f64>)> {
        let targets = if self.cfg.method.label_noise {
            apply_label_noise(y, self.cfg.rho, a, &mut self.noise_rng)?
        } else {
            y.to_vec()
        };
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true)?;
        let out = self.model.forward_tape(&mut tape, x, &bound)?;
        let task = match self.cfg.method.base {
            BaseMethod::Erm => tape.softmax_cross_entropy(out.logits, &targets)?,
            BaseMethod::GroupDro => self.dro_loss(&mut tape, out.logits, &targets, z, b)?,
        };
        let task_value = tape.value(task).item();
        let mut total = task;
        let mut reg_value = None;
        if let Some(trainer) = &self.critic {
            if self.cfg.beta > 0.0 {
                let nodes = surrogate_bias_term(&mut tape, &trainer.net, out.features, y, z, a, b, &mut self.critic_rng)?;
                reg_value = Some(tape.value(nodes.bound).item());
                let weighted = tape.scale(nodes.bound, self.cfg.beta)?;
                total = tape.add(task, weighted)?;
            }
        }
        let mut grads = tape.backward(total)?;
        let mut params = Vec::new();
        let mut g = Vec::new();
        let mut names = Vec::new();
        if !self.model.is_frozen() {
            g.extend(self.model.extractor().collect_grads(&mut grads, &bound.extractor)?);
            params.extend(self.model.extractor().params().iter().cloned());
            names.extend(self.model.extractor().param_names());
        }
        g.extend(self.model.head().collect_grads(&mut grads, &bound.head)?);
        params.extend(self.model.head().params().iter().cloned());
        names.extend(self.model.head().param_names());
        self.adam.step(&mut params, &g, &names)?;
        let mut it = params.into_iter();
        if !self.model.is_frozen() {
            for p in self.model.extractor_mut().params_mut() {
                *p = it.next().expect("parameter count");
            }
        }
        for p in self.model.head_mut().params_mut() {
            *p = it.next().expect("parameter count");
        }
        Ok((task_value, reg_value))
    }

    /// Weighted per-group mean loss; weights move towards high-loss groups
    /// by `q_g <- q_g exp(eta L_g)` before the loss is formed.
    fn dro_loss(&mut self, tape: &mut Tape, logits: Var, y: &[usize], z: &[usize], b: usize) -> Result<Var> {
        let ce = tape.cross_entropy_rows(logits, y)?;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.dro_q.len()];
        for (i, (&yi, &zi)) in y.iter().zip(z).enumerate() {
            members[yi * b + zi].push(i);
        }
        let mut group_losses = Vec::new();
        for (g, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let sel = tape.select_rows(ce, idx)?;
            let mean = tape.mean(sel)?;
            let lg = tape.value(mean).item();
            self.dro_q[g] *= (self.cfg.dro_eta * lg).exp();
            group_losses.push((g, mean));
        }
        let total: f64 = self.dro_q.iter().sum();
        for q in &mut self.dro_q {
            *q /= total;
        }
        let mut acc: Option<Var> = None;
        for (g, mean) in group_losses {
            let term = tape.scale(mean, self.dro_q[g])?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        Ok(acc.expect("a batch has at least one group"))
    }

    fn critic_epoch(&mut self, ds: &LabeledDataset) -> Result<f64> {
        let f = self.model.features(&ds.x)?;
        let (u, v) = surrogate_inputs(&f, &ds.y, &ds.z, ds.a, ds.b)?;
        let trainer = self.critic.as_mut().expect("critic phase has a critic");
        if self.cfg.critic_cold_start {
            let mut init = self.critic_rng.fork();
            trainer.reset(&mut init)?;
        }
        trainer.epoch(&u, &v, &mut self.critic_rng).map_err(smaller_beta)
    }
}

fn smaller_beta(e: Error) -> Error {
    match e {
        Error::Diverged(msg) => Error::Diverged(format!("critic diverged: {msg}; try a smaller beta")),
        other => other,
    }
}

/// Reports before and after head-only fine-tuning of a trained model.
#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub before: FullReport,
    pub after: FullReport,
    pub model: BiasModel,
    pub log: TrainLog,
}

/// Freezes the extractor of `m`, reinitialises the head (unless
/// `cfg.probe_keep_head`) and retrains it with class resampling on `train`;
/// both reports are computed on `eval` with the same report config.
pub fn linear_probe_experiment(
    m: &BiasModel,
    train_ds: &LabeledDataset,
    eval: &LabeledDataset,
    cfg: &TrainConfig,
    report: &ReportConfig,
) -> Result<ProbeResult> {
    let before = full_report(m, eval, report)?;
    let mut probe = m.clone();
    probe.freeze_extractor();
    if !cfg.probe_keep_head {
        probe.reinit_head(&mut RngState::with_stream(cfg.seed, STREAM_INIT).derive(1))?;
    }
    let probe_cfg = TrainConfig {
        method: Method::ERM,
        resample: true,
        ..cfg.clone()
    };
    let out = train(probe, None, train_ds, None, &probe_cfg)?;
    let after = full_report(&out.model, eval, report)?;
    Ok(ProbeResult {
        before,
        after,
        model: out.model,
        log: out.log,
    })
}

//! Donsker-Varadhan neural lower bounds on mutual information.
//!
//! For paired samples `(u_i, v_i)` and a critic `T`, the batch bound is
//!
//! ```text
//! mean_i T(u_i, v_i) - ln( mean_i exp T(u_i, v_perm(i)) )
//! ```
//!
//! where `perm` is a random permutation of the batch, so the second term sees
//! samples from the product of marginals. The critic output is soft-clipped
//! to `c * tanh(x / c)` before use.

use std::thread;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::infomeasure::MiEstimate;
use crate::ndcore::{logsumexp, Activation, Adam, Axis, Matrix, Mlp, RngState, Tape, Var};

pub const MIN_BATCH: usize = 8;
pub const MIN_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The reported estimate averages full-data bounds over this many final epochs.
    pub eval_last: usize,
    /// Moving-average correction of the log-term gradient.
    pub ma_correction: bool,
    pub ma_rate: f64,
    /// Soft-clip level for critic outputs.
    pub clip: f64,
    /// Abort when the bound leaves `[-limit, limit]` nats.
    pub divergence_limit: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            hidden: vec![64, 64],
            epochs: 40,
            batch: 256,
            lr: 2e-3,
            weight_decay: 0.0,
            eval_last: 10,
            ma_correction: false,
            ma_rate: 0.01,
            clip: 30.0,
            divergence_limit: 50.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < MIN_BATCH {
            return Err(Error::invalid(format!("estimator batch must be >= {MIN_BATCH}")));
        }
        if self.epochs == 0 || self.eval_last == 0 {
            return Err(Error::invalid("estimator needs at least one epoch and one evaluation"));
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(Error::invalid("estimator lr and clip must be positive"));
        }
        Ok(())
    }
}

/// The critic `T(u, v)`: an MLP on the concatenation `[u, v]` with tanh
/// hidden layers and a scalar linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticsNetwork {
    mlp: Mlp,
    u_dim: usize,
    v_dim: usize,
    clip: f64,
}

impl StatisticsNetwork {
    pub fn new(u_dim: usize, v_dim: usize, hidden: &[usize], clip: f64, rng: &mut RngState) -> Result<Self> {
        let mut sizes = vec![u_dim + v_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mlp = Mlp::new("critic", &sizes, Activation::Tanh, Activation::Identity, 1.0, rng)?;
        Ok(StatisticsNetwork {
            mlp,
            u_dim,
            v_dim,
            clip,
        })
    }

    pub fn from_mlp(mlp: Mlp, u_dim: usize, clip: f64) -> Result<Self> {
        if mlp.output_dim() != 1 || mlp.input_dim() <= u_dim {
            return Err(Error::invalid("critic must map u_dim + v_dim inputs to one output"));
        }
        let v_dim = mlp.input_dim() - u_dim;
        Ok(StatisticsNetwork {
            mlp,
            u_dim,
            v_dim,
            clip,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.u_dim + self.v_dim
    }

    pub fn u_dim(&self) -> usize {
        self.u_dim
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn checksum(&self) -> u64 {
        self.mlp.checksum()
    }

    fn clip_plain(&self, raw: Matrix) -> Matrix {
        raw.scale(1.0 / self.clip).map(f64::tanh).scale(self.clip)
    }

    fn clip_tape(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        let s = tape.scale(raw, 1.0 / self.clip)?;
        let t = tape.tanh(s)?;
        tape.scale(t, self.clip)
    }

    /// Clipped critic scores, one per row.
    pub fn scores(&self, u: &Matrix, v: &Matrix) -> Result<Matrix> {
        let input = Matrix::hcat(&[u, v])?;
        Ok(self.clip_plain(self.mlp.forward(&input)?))
    }

    fn scores_tape(&self, tape: &mut Tape, params: &[Var], u: Var, v: Var) -> Result<Var> {
        let input = tape.concat(&[u, v], Axis::Cols)?;
        let raw = self.mlp.forward_tape(tape, input, params)?;
        self.clip_tape(tape, raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DvBatchResult {
    pub bound_value: f64,
    pub joint_term: f64,
    pub marginal_term: f64,
}

/// Random permutation of `0..n`; an identity draw is re-drawn once and then
/// accepted.
pub fn marginal_permutation(n: usize, rng: &mut RngState) -> Vec<usize> {
    let p = rng.permutation(n);
    if n > 1 && p.iter().enumerate().all(|(i, &j)| i == j) {
        return rng.permutation(n);
    }
    p
}

fn check_pair(u: &Matrix, v: &Matrix) -> Result<()> {
    if u.rows() != v.rows() {
        return Err(Error::Shape {
            op: "dv_bound rows",
            left: u.shape(),
            right: v.shape(),
        });
    }
    if u.rows() < MIN_BATCH {
        return Err(Error::invalid(format!(
            "DV bound needs a batch of at least {MIN_BATCH}, got {}",
            u.rows()
        )));
    }
    Ok(())
}

/// Evaluates the DV bound on one batch with a fresh marginal permutation.
pub fn dv_bound(net: &StatisticsNetwork, u: &Matrix, v: &Matrix, rng: &mut RngState) -> Result<DvBatchResult> {
    check_pair(u, v)?;
    let perm = marginal_permutation(u.rows(), rng);
    dv_bound_with_perm(net, u, v, &perm)
}

pub fn dv_bound_with_perm(net: &StatisticsNetwork, u: &Matrix, v: &Matrix, perm: &[usize]) -> Result<DvBatchResult> {
    check_pair(u, v)?;
    let joint = net.scores(u, v)?;
    let marg = net.scores(u, &v.select_rows(perm))?;
    let joint_term = joint.mean();
    let marginal_term = logsumexp(&marg, Axis::Rows).item() + -(u.rows() as f64).ln();
    Ok(DvBatchResult {
        bound_value: joint_term - marginal_term,
        joint_term,
        marginal_term,
    })
}

/// DV bound recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DvNodes {
    pub bound: Var,
    pub joint: Var,
    pub marginal: Var,
    /// Clipped critic scores on the product-of-marginals pairs (n x 1).
    pub marginal_scores: Var,
}

/// Records the DV bound for `(u, v)` on `tape`. `u` may carry gradients (it
/// does when training the feature extractor); `v` is data.
pub fn dv_bound_tape(
    tape: &mut Tape,
    net: &StatisticsNetwork,
    critic_params: &[Var],
    u: Var,
    v: &Matrix,
    perm: &[usize],
) -> Result<DvNodes> {
    check_pair(tape.value(u), v)?;
    let n = v.rows() as f64;
    let v_joint = tape.constant(v.clone())?;
    let v_marg = tape.constant(v.select_rows(perm))?;
    let joint_scores = net.scores_tape(tape, critic_params, u, v_joint)?;
    let marginal_scores = net.scores_tape(tape, critic_params, u, v_marg)?;
    let joint = tape.mean(joint_scores)?;
    let lse = tape.logsumexp(marginal_scores, Axis::Rows)?;
    let marginal = tape.add_scalar(lse, -n.ln())?;
    let bound = tape.sub(joint, marginal)?;
    Ok(DvNodes {
        bound,
        joint,
        marginal,
        marginal_scores,
    })
}

/// Differentiable surrogate `I(F, Y; Z)` for the feature-extractor update:
/// `u = [F, onehot(Y)]`, `v = onehot(Z)`. The critic enters as constants.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_bias_term(
    tape: &mut Tape,
    net: &StatisticsNetwork,
    features: Var,
    y: &[usize],
    z: &[usize],
    a: usize,
    b: usize,
    rng: &mut RngState,
) -> Result<DvNodes> {
    let (u, v) = surrogate_inputs_tape(tape, features, y, z, a, b)?;
    let perm = marginal_permutation(y.len(), rng);
    let critic = net.mlp.bind(tape, false)?;
    dv_bound_tape(tape, net, &critic, u, &v, &perm)
}

fn surrogate_inputs_tape(
    tape: &mut Tape,
    features: Var,
    y: &[usize],
    z: &[usize],
    a: usize,
    b: usize,
) -> Result<(Var, Matrix)> {
    let yh = tape.constant(Matrix::one_hot(y, a)?)?;
    let u = tape.concat(&[features, yh], Axis::Cols)?;
    Ok((u, Matrix::one_hot(z, b)?))
}

/// Plain-matrix inputs of the surrogate critic: `([F, onehot(Y)], onehot(Z))`.
pub fn surrogate_inputs(features: &Matrix, y: &[usize], z: &[usize], a: usize, b: usize) -> Result<(Matrix, Matrix)> {
    let u = Matrix::hcat(&[features, &Matrix::one_hot(y, a)?])?;
    Ok((u, Matrix::one_hot(z, b)?))
}

/// Gradient-ascent trainer for a critic on fixed `(u, v)` data.
#[derive(Clone, Debug)]
pub struct DvTrainer {
    pub net: StatisticsNetwork,
    adam: Adam,
    cfg: EstimatorConfig,
    moving_avg: Option<f64>,
}

impl DvTrainer {
    pub fn new(net: StatisticsNetwork, cfg: &EstimatorConfig) -> Self {
        DvTrainer {
            adam: Adam::new(cfg.lr, cfg.weight_decay),
            net,
            cfg: cfg.clone(),
            moving_avg: None,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    /// Reinitialises the critic and optimiser state.
    pub fn reset(&mut self, rng: &mut RngState) -> Result<()> {
        self.net = StatisticsNetwork::new(self.net.u_dim, self.net.v_dim, &self.cfg.hidden, self.cfg.clip, rng)?;
        self.adam.reset();
        self.moving_avg = None;
        Ok(())
    }

    /// One ascent step on a batch; returns the batch bound.
    pub fn step(&mut self, u: &Matrix, v: &Matrix, rng: &mut RngState) -> Result<f64> {
        check_pair(u, v)?;
        let perm = marginal_permutation(u.rows(), rng);
        let mut tape = Tape::new();
        let params = self.net.mlp.bind(&mut tape, true)?;
        let uv = tape.constant(u.clone())?;
        let nodes = dv_bound_tape(&mut tape, &self.net, &params, uv, v, &perm)?;
        let bound = tape.value(nodes.bound).item();
        self.check_divergence(bound)?;

        let loss = if self.cfg.ma_correction {
            // Replace the biased gradient of ln(mean exp T) with
            // grad(mean exp T) / moving average.
            let e = tape.exp(nodes.marginal_scores)?;
            let batch_mean = tape.value(e).mean();
            let ma = match self.moving_avg {
                Some(m) => (1.0 - self.cfg.ma_rate) * m + self.cfg.ma_rate * batch_mean,
                None => batch_mean,
            };
            self.moving_avg = Some(ma);
            let s = tape.sum(e)?;
            let corrected = tape.scale(s, 1.0 / (u.rows() as f64 * ma))?;
            let neg_joint = tape.scale(nodes.joint, -1.0)?;
            tape.add(neg_joint, corrected)?
        } else {
            tape.scale(nodes.bound, -1.0)?
        };
        let mut grads = tape.backward(loss)?;
        let g = self.net.mlp.collect_grads(&mut grads, &params)?;
        let names = self.net.mlp.param_names();
        self.adam.step(self.net.mlp.params_mut(), &g, &names)?;
        Ok(bound)
    }

    /// One shuffled pass over the data; returns the mean batch bound.
    pub fn epoch(&mut self, u: &Matrix, v: &Matrix, rng: &mut RngState) -> Result<f64> {
        check_pair(u, v)?;
        let order = rng.permutation(u.rows());
        let batches = batch_ranges(order.len(), self.cfg.batch);
        let mut total = 0.0;
        for r in &batches {
            let idx = &order[r.clone()];
            total += self.step(&u.select_rows(idx), &v.select_rows(idx), rng)?;
        }
        Ok(total / batches.len() as f64)
    }

    /// Full-data bound with a fresh permutation.
    pub fn evaluate(&self, u: &Matrix, v: &Matrix, rng: &mut RngState) -> Result<DvBatchResult> {
        let r = dv_bound(&self.net, u, v, rng)?;
        self.check_divergence(r.bound_value)?;
        Ok(r)
    }

    fn check_divergence(&self, bound: f64) -> Result<()> {
        if !bound.is_finite() || bound.abs() > self.cfg.divergence_limit {
            return Err(Error::Diverged(format!(
                "DV bound reached {bound} nats (limit {}); lower the learning rate",
                self.cfg.divergence_limit
            )));
        }
        Ok(())
    }
}

/// Contiguous batch ranges; a trailing remainder smaller than the minimum DV
/// batch is merged into the previous batch.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        if n - end < MIN_BATCH && end < n {
            out.push(start..n);
            break;
        }
        out.push(start..end);
        start = end;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch bound during the epoch.
    pub bound_value: f64,
    /// Full-data bound, for the averaged final epochs.
    pub eval_value: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedEstimator {
    pub net: StatisticsNetwork,
    pub estimate: MiEstimate,
    pub history: Vec<EpochRecord>,
}

/// Maximises the DV bound over the critic and reports the full-data bound
/// averaged over the final `eval_last` epochs.
pub fn train_mi_estimator(u: &Matrix, v: &Matrix, cfg: &EstimatorConfig, rng: &mut RngState) -> Result<TrainedEstimator> {
    cfg.validate()?;
    if u.rows() != v.rows() {
        return Err(Error::Shape {
            op: "train_mi_estimator",
            left: u.shape(),
            right: v.shape(),
        });
    }
    if u.rows() < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "MI estimation needs at least {MIN_SAMPLES} paired samples, got {}",
            u.rows()
        )));
    }
    let mut init_rng = rng.fork();
    let net = StatisticsNetwork::new(u.cols(), v.cols(), &cfg.hidden, cfg.clip, &mut init_rng)?;
    let mut trainer = DvTrainer::new(net, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut evals = Vec::new();
    let eval_from = cfg.epochs.saturating_sub(cfg.eval_last);
    for epoch in 0..cfg.epochs {
        let bound_value = trainer.epoch(u, v, rng)?;
        let eval_value = if epoch >= eval_from {
            let r = trainer.evaluate(u, v, rng)?;
            evals.push(r.bound_value);
            Some(r.bound_value)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            bound_value,
            eval_value,
        });
    }
    let value = evals.iter().sum::<f64>() / evals.len() as f64;
    Ok(TrainedEstimator {
        net: trainer.net,
        estimate: MiEstimate::dv(value, u.rows()),
        history,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,bound_value,eval_value\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            crate::fmt_f64(r.bound_value),
            r.eval_value.map(crate::fmt_f64).unwrap_or_default()
        ));
    }
    out
}

/// `I(F; Z | Y)` as the difference of two DV estimates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CobiasEstimate {
    /// `I(F; Z, Y) - I(F; Y)`, unclamped. It is a difference of two lower
    /// bounds, so it is not itself a bound and may dip below zero.
    pub value: f64,
    /// `max(value, 0)`.
    pub clamped: f64,
    /// `I(F; Z, Y)`.
    pub joint: MiEstimate,
    /// `I(F; Y)`.
    pub target: MiEstimate,
}

impl CobiasEstimate {
    pub fn as_estimate(&self) -> MiEstimate {
        MiEstimate {
            value: self.value,
            estimator: crate::infomeasure::EstimatorKind::DvNeural,
            is_lower_bound: false,
            n_samples: self.joint.n_samples,
        }
    }
}

/// Estimates `I(F; Z | Y)` by the chain rule with two independent critics.
pub fn estimate_cobias(
    features: &Matrix,
    z: &[usize],
    y: &[usize],
    a: usize,
    b: usize,
    cfg: &EstimatorConfig,
    rng: &RngState,
) -> Result<CobiasEstimate> {
    if features.rows() != y.len() || y.len() != z.len() {
        return Err(Error::invalid("features, Z and Y must be row-aligned"));
    }
    let zh = Matrix::one_hot(z, b)?;
    let yh = Matrix::one_hot(y, a)?;
    let zy = Matrix::hcat(&[&zh, &yh])?;
    let (joint, target) = thread::scope(|s| {
        let jh = s.spawn(|| train_mi_estimator(features, &zy, cfg, &mut rng.derive(1)));
        let target = train_mi_estimator(features, &yh, cfg, &mut rng.derive(2));
        let joint = jh.join().expect("joint estimator thread panicked");
        (joint, target)
    });
    let joint = joint?.estimate;
    let target = target?.estimate;
    let value = joint.value - target.value;
    Ok(CobiasEstimate {
        value,
        clamped: value.max(0.0),
        joint,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_critic(c: f64) -> StatisticsNetwork {
        // One layer of zeros with bias c: T = clip(c).
        let w = Matrix::zeros(2, 1);
        let b = Matrix::scalar(c);
        let mlp = Mlp::from_params("critic", Activation::Tanh, Activation::Identity, vec![w, b]).unwrap();
        StatisticsNetwork::from_mlp(mlp, 1, 30.0).unwrap()
    }

    fn toy(n: usize) -> (Matrix, Matrix) {
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin() + 0.1 * (i as f64).cos()).collect();
        (Matrix::column(&u), Matrix::column(&v))
    }

    #[test]
    fn constant_critic_carries_no_information() {
        let (u, v) = toy(16);
        for c in [0.0, 1.7, -3.0] {
            let r = dv_bound(&constant_critic(c), &u, &v, &mut RngState::new(1)).unwrap();
            assert!(r.bound_value.abs() < 1e-12, "c={c}: {r:?}");
        }
    }

    #[test]
    fn bound_is_joint_minus_marginal() {
        let (u, v) = toy(32);
        let net = StatisticsNetwork::new(1, 1, &[8], 30.0, &mut RngState::new(2)).unwrap();
        let r = dv_bound(&net, &u, &v, &mut RngState::new(3)).unwrap();
        assert_eq!(r.bound_value, r.joint_term - r.marginal_term);
    }

    #[test]
    fn small_batches_rejected() {
        let (u, v) = toy(7);
        assert!(dv_bound(&constant_critic(0.0), &u, &v, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn tape_and_plain_bounds_agree_bitwise() {
        let (u, v) = toy(40);
        let net = StatisticsNetwork::new(1, 1, &[8, 8], 30.0, &mut RngState::new(2)).unwrap();
        let perm = marginal_permutation(40, &mut RngState::new(4));
        let plain = dv_bound_with_perm(&net, &u, &v, &perm).unwrap();
        let mut tape = Tape::new();
        let params = net.mlp().bind(&mut tape, true).unwrap();
        let uv = tape.constant(u).unwrap();
        let nodes = dv_bound_tape(&mut tape, &net, &params, uv, &v, &perm).unwrap();
        assert_eq!(tape.value(nodes.bound).item(), plain.bound_value);
    }

    #[test]
    fn batch_ranges_merge_small_tail() {
        assert_eq!(batch_ranges(20, 8), vec![0..8, 8..20]);
        assert_eq!(batch_ranges(24, 8), vec![0..8, 8..16, 16..24]);
        assert_eq!(batch_ranges(5, 8), vec![0..5]);
    }

    #[test]
    fn too_few_samples_rejected() {
        let (u, v) = toy(100);
        let err = train_mi_estimator(&u, &v, &EstimatorConfig::default(), &mut RngState::new(1)).unwrap_err();
        assert!(err.to_string().contains("1000"));
    }

    #[test]
    fn divergence_is_reported() {
        let (u, v) = toy(64);
        let net = StatisticsNetwork::new(1, 1, &[4], 30.0, &mut RngState::new(2)).unwrap();
        let cfg = EstimatorConfig {
            divergence_limit: 1e-9,
            ..EstimatorConfig::default()
        };
        let mut t = DvTrainer::new(net, &cfg);
        let err = t.epoch(&u, &v, &mut RngState::new(1)).unwrap_err();
        assert!(err.is_numerical());
    }
}

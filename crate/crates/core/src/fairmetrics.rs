//! Group-fairness evaluation.
//!
//! Groups are `(y, z)` pairs. Definitions used for the binary extra metrics:
//!
//! * `EO = |TPR(z=0) - TPR(z=1)|` on the positive class `y = 1`;
//! * `DI = |p(ŷ=1 | z=0) - p(ŷ=1 | z=1)|`;
//! * `BA = p(ŷ=1, z=z*) - p(y=1, z=z*)` with `z* = argmax_z p(y=1 | z)`.
//!   Positive values mean predictions over-associate the positive class with
//!   the bias value it already co-occurs with.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::infomeasure::{label_noise_mi_curve, ContingencyTable};
use crate::mine::{estimate_cobias, CobiasEstimate, EstimatorConfig};
use crate::model::BiasModel;
use crate::ndcore::{Matrix, RngState};
use crate::synthdata::LabeledDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub a: usize,
    pub b: usize,
    /// Row-major `a x b`; `None` for empty groups.
    pub group_acc: Vec<Option<f64>>,
    pub group_n: Vec<usize>,
    pub unbiased_acc: f64,
    pub worst_group_acc: f64,
    pub disparity: f64,
    pub average_acc: f64,
    pub ba: Option<f64>,
    pub eo: Option<f64>,
    pub di: Option<f64>,
    pub cobias: Option<f64>,
    pub cobias_clamped: Option<f64>,
    pub ratio_r: Option<f64>,
    pub empty_groups: bool,
}

impl GroupReport {
    pub fn group(&self, y: usize, z: usize) -> Option<f64> {
        self.group_acc[y * self.b + z]
    }

    /// Flat `(name, value)` list in the fixed serialization order.
    pub fn fields(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("cobias".to_string(), self.cobias),
            ("cobias_clamped".to_string(), self.cobias_clamped),
            ("unbiased_acc".to_string(), Some(self.unbiased_acc)),
            ("worst_group_acc".to_string(), Some(self.worst_group_acc)),
            ("disparity".to_string(), Some(self.disparity)),
            ("average_acc".to_string(), Some(self.average_acc)),
            ("ba".to_string(), self.ba),
            ("eo".to_string(), self.eo),
            ("di".to_string(), self.di),
            ("ratio_r".to_string(), self.ratio_r),
            ("empty_groups".to_string(), Some(if self.empty_groups { 1.0 } else { 0.0 })),
            ("a".to_string(), Some(self.a as f64)),
            ("b".to_string(), Some(self.b as f64)),
        ];
        for y in 0..self.a {
            for z in 0..self.b {
                out.push((format!("acc_y{y}_z{z}"), self.group(y, z)));
            }
        }
        for y in 0..self.a {
            for z in 0..self.b {
                out.push((format!("n_y{y}_z{z}"), Some(self.group_n[y * self.b + z] as f64)));
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in self.fields() {
            let value = match (k.as_str(), v) {
                (_, None) => Value::Null,
                ("empty_groups", Some(x)) => Value::Bool(x != 0.0),
                ("a" | "b", Some(x)) => Value::from(x as u64),
                (k, Some(x)) if k.starts_with("n_") => Value::from(x as u64),
                (_, Some(x)) => Value::from(x),
            };
            m.insert(k, value);
        }
        Value::Object(m)
    }

    pub fn csv_header(&self) -> String {
        self.fields().into_iter().map(|(k, _)| k).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(_, v)| v.map(crate::fmt_f64).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("group report must be a JSON object".into()))?;
        let num = |k: &str| -> Result<Option<f64>> {
            match obj.get(k) {
                None => Err(Error::MissingColumn(k.to_string())),
                Some(Value::Null) => Ok(None),
                Some(x) => x
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| Error::Config(format!("field `{k}` is not a number"))),
            }
        };
        let req = |k: &str| -> Result<f64> { num(k)?.ok_or_else(|| Error::Config(format!("field `{k}` is null"))) };
        let a = req("a")? as usize;
        let b = req("b")? as usize;
        let mut group_acc = Vec::with_capacity(a * b);
        let mut group_n = Vec::with_capacity(a * b);
        for y in 0..a {
            for z in 0..b {
                group_acc.push(num(&format!("acc_y{y}_z{z}"))?);
                group_n.push(req(&format!("n_y{y}_z{z}"))? as usize);
            }
        }
        Ok(GroupReport {
            a,
            b,
            group_acc,
            group_n,
            unbiased_acc: req("unbiased_acc")?,
            worst_group_acc: req("worst_group_acc")?,
            disparity: req("disparity")?,
            average_acc: req("average_acc")?,
            ba: num("ba")?,
            eo: num("eo")?,
            di: num("di")?,
            cobias: num("cobias")?,
            cobias_clamped: num("cobias_clamped")?,
            ratio_r: num("ratio_r")?,
            empty_groups: obj.get("empty_groups").and_then(Value::as_bool).unwrap_or(false),
        })
    }
}

fn check_labels(pred: &[usize], y: &[usize], z: &[usize], a: usize, b: usize) -> Result<()> {
    if pred.len() != y.len() || y.len() != z.len() {
        return Err(Error::invalid(format!(
            "label arrays must be aligned: {} predictions, {} targets, {} bias labels",
            pred.len(),
            y.len(),
            z.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(y).find(|&&v| v >= a) {
        return Err(Error::invalid(format!("target label {bad} out of range for A = {a}")));
    }
    if let Some(&bad) = z.iter().find(|&&v| v >= b) {
        return Err(Error::invalid(format!("bias label {bad} out of range for B = {b}")));
    }
    Ok(())
}

/// Per-group accuracies and their aggregates; extra fields are left empty.
pub fn group_accuracies(pred: &[usize], y: &[usize], z: &[usize], a: usize, b: usize) -> Result<GroupReport> {
    check_labels(pred, y, z, a, b)?;
    let mut correct = vec![0usize; a * b];
    let mut total = vec![0usize; a * b];
    for i in 0..y.len() {
        let g = y[i] * b + z[i];
        total[g] += 1;
        correct[g] += usize::from(pred[i] == y[i]);
    }
    let group_acc: Vec<Option<f64>> = correct
        .iter()
        .zip(&total)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let populated: Vec<f64> = group_acc.iter().flatten().copied().collect();
    if populated.is_empty() {
        return Err(Error::invalid("every group is empty"));
    }
    let unbiased_acc = populated.iter().sum::<f64>() / populated.len() as f64;
    let worst = populated.iter().copied().fold(f64::INFINITY, f64::min);
    let best = populated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_correct: usize = correct.iter().sum();
    Ok(GroupReport {
        a,
        b,
        empty_groups: populated.len() < a * b,
        group_acc,
        group_n: total,
        unbiased_acc,
        worst_group_acc: worst,
        disparity: best - worst,
        average_acc: n_correct as f64 / y.len() as f64,
        ba: None,
        eo: None,
        di: None,
        cobias: None,
        cobias_clamped: None,
        ratio_r: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtraFairness {
    pub ba: f64,
    /// `None` when a bias slice has no positive targets.
    pub eo: Option<f64>,
    pub di: f64,
}

/// BA, EO and DI for binary targets and binary bias labels.
pub fn extra_fairness(pred: &[usize], y: &[usize], z: &[usize]) -> Result<ExtraFairness> {
    check_labels(pred, y, z, 2, 2).map_err(|e| Error::invalid(format!("extra fairness metrics need binary Y and Z: {e}")))?;
    let n = y.len() as f64;
    let mut n_z = [0usize; 2];
    let mut pos_z = [0usize; 2];
    let mut tp_z = [0usize; 2];
    let mut pred_pos_z = [0usize; 2];
    for i in 0..y.len() {
        let zi = z[i];
        n_z[zi] += 1;
        if y[i] == 1 {
            pos_z[zi] += 1;
            tp_z[zi] += usize::from(pred[i] == 1);
        }
        pred_pos_z[zi] += usize::from(pred[i] == 1);
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let eo = (pos_z[0] > 0 && pos_z[1] > 0).then(|| (rate(tp_z[0], pos_z[0]) - rate(tp_z[1], pos_z[1])).abs());
    let di = (rate(pred_pos_z[0], n_z[0]) - rate(pred_pos_z[1], n_z[1])).abs();
    let z_star = usize::from(rate(pos_z[1], n_z[1]) > rate(pos_z[0], n_z[0]));
    let ba = (pred_pos_z[z_star] as f64 - pos_z[z_star] as f64) / n;
    Ok(ExtraFairness { ba, eo, di })
}

#[derive(Clone, Debug, Default)]
pub struct ReportConfig {
    /// Cobias is skipped when `None`.
    pub estimator: Option<EstimatorConfig>,
    pub seed: u64,
    /// Noise rate and `(Y, Z)` joint of the training labels, for the ratio R.
    pub rho: Option<f64>,
    pub ratio_joint: Option<ContingencyTable>,
}

/// A report together with the exact inputs it was computed from.
#[derive(Clone, Debug)]
pub struct FullReport {
    pub report: GroupReport,
    pub features: Matrix,
    pub predictions: Vec<usize>,
    pub cobias: Option<CobiasEstimate>,
}

pub fn full_report(m: &BiasModel, ds: &LabeledDataset, cfg: &ReportConfig) -> Result<FullReport> {
    let features = m.features(&ds.x)?;
    let predictions = crate::model::argmax_rows(&m.head_logits(&features)?);
    let mut report = group_accuracies(&predictions, &ds.y, &ds.z, ds.a, ds.b)?;
    if ds.a == 2 && ds.b == 2 {
        let extra = extra_fairness(&predictions, &ds.y, &ds.z)?;
        report.ba = Some(extra.ba);
        report.eo = extra.eo;
        report.di = Some(extra.di);
    }
    let cobias = match &cfg.estimator {
        Some(est) => Some(estimate_cobias(
            &features,
            &ds.z,
            &ds.y,
            ds.a,
            ds.b,
            est,
            &RngState::new(cfg.seed),
        )?),
        None => None,
    };
    if let Some(c) = &cobias {
        report.cobias = Some(c.value);
        report.cobias_clamped = Some(c.clamped);
    }
    if let (Some(rho), Some(joint)) = (cfg.rho, &cfg.ratio_joint) {
        report.ratio_r = label_noise_mi_curve(joint, &[rho], ds.a)?[0].ratio;
    }
    Ok(FullReport {
        report,
        features,
        predictions,
        cobias,
    })
}

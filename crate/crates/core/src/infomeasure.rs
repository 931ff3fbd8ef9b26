//! Exact information quantities over discrete joint distributions, plus the
//! closed-form Gaussian oracle. All values are in nats.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Which route produced an [`MiEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    ExactDiscrete,
    DvNeural,
    GaussianClosedForm,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::ExactDiscrete => "exact-discrete",
            EstimatorKind::DvNeural => "dv-neural",
            EstimatorKind::GaussianClosedForm => "gaussian-closed-form",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    pub estimator: EstimatorKind,
    pub is_lower_bound: bool,
    pub n_samples: Option<usize>,
}

impl MiEstimate {
    fn exact(value: f64, n_samples: Option<usize>) -> Self {
        MiEstimate {
            value: clamp_tiny_negative(value),
            estimator: EstimatorKind::ExactDiscrete,
            is_lower_bound: false,
            n_samples,
        }
    }

    pub fn dv(value: f64, n_samples: usize) -> Self {
        MiEstimate {
            value,
            estimator: EstimatorKind::DvNeural,
            is_lower_bound: true,
            n_samples: Some(n_samples),
        }
    }

    pub fn clamped(&self) -> f64 {
        self.value.max(0.0)
    }

    pub fn bits(&self) -> f64 {
        self.value / std::f64::consts::LN_2
    }
}

fn clamp_tiny_negative(v: f64) -> f64 {
    if v < 0.0 {
        debug_assert!(v > -1e-9, "exact MI far below zero: {v}");
        0.0
    } else {
        v
    }
}

/// Joint probability table over 2 or 3 discrete variables, stored row-major
/// with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    cards: Vec<usize>,
    probs: Vec<f64>,
    n_samples: Option<usize>,
}

impl ContingencyTable {
    pub fn from_probs(cards: &[usize], probs: Vec<f64>) -> Result<Self> {
        check_cards(cards)?;
        let cells: usize = cards.iter().product();
        if probs.len() != cells {
            return Err(Error::invalid(format!(
                "table with cardinalities {cards:?} needs {cells} cells, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ContingencyTable {
            cards: cards.to_vec(),
            probs: probs.iter().map(|p| p / total).collect(),
            n_samples: None,
        })
    }

    pub fn from_counts(cards: &[usize], counts: &[u64]) -> Result<Self> {
        check_cards(cards)?;
        let cells: usize = cards.iter().product();
        if counts.len() != cells {
            return Err(Error::invalid(format!(
                "table with cardinalities {cards:?} needs {cells} cells, got {}",
                counts.len()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("cannot build a table from zero samples"));
        }
        Ok(ContingencyTable {
            cards: cards.to_vec(),
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            n_samples: Some(total as usize),
        })
    }

    /// Empirical (maximum-likelihood) table from aligned label columns.
    pub fn from_samples(columns: &[&[usize]], cards: &[usize]) -> Result<Self> {
        if columns.len() != cards.len() {
            return Err(Error::invalid("one cardinality per column required"));
        }
        check_cards(cards)?;
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("label columns have different lengths"));
        }
        let mut counts = vec![0u64; cards.iter().product()];
        for i in 0..n {
            let mut flat = 0;
            for (col, &card) in columns.iter().zip(cards) {
                let v = col[i];
                if v >= card {
                    return Err(Error::invalid(format!("label {v} out of range for cardinality {card}")));
                }
                flat = flat * card + v;
            }
            counts[flat] += 1;
        }
        Self::from_counts(cards, &counts)
    }

    pub fn arity(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_samples(&self) -> Option<usize> {
        self.n_samples
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.probs[self.flat(idx)]
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cards).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.cards.len()];
        for (slot, &c) in idx.iter_mut().zip(&self.cards).rev() {
            *slot = flat % c;
            flat /= c;
        }
        idx
    }

    /// Marginal over the kept axes, flattened in the order given.
    pub fn marginal(&self, keep: &[usize]) -> Vec<f64> {
        let size: usize = keep.iter().map(|&a| self.cards[a]).product();
        let mut out = vec![0.0; size];
        for (flat, &p) in self.probs.iter().enumerate() {
            let idx = self.unflat(flat);
            let k = keep.iter().fold(0, |acc, &a| acc * self.cards[a] + idx[a]);
            out[k] += p;
        }
        out
    }

    /// Two-axis marginal as a table.
    pub fn marginal_table(&self, a: usize, b: usize) -> ContingencyTable {
        ContingencyTable {
            cards: vec![self.cards[a], self.cards[b]],
            probs: self.marginal(&[a, b]),
            n_samples: self.n_samples,
        }
    }

    pub fn transpose(&self) -> Result<ContingencyTable> {
        if self.arity() != 2 {
            return Err(Error::invalid("transpose needs an arity-2 table"));
        }
        Ok(self.marginal_table(1, 0))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header: Vec<String> = (0..self.arity()).map(|i| format!("i{i}")).collect();
        writeln!(out, "{},p", header.join(",")).unwrap();
        for (flat, p) in self.probs.iter().enumerate() {
            let idx: Vec<String> = self.unflat(flat).iter().map(|i| i.to_string()).collect();
            writeln!(out, "{},{}", idx.join(","), crate::fmt_f64(*p)).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let shown = path.display().to_string();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: shown.clone(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let arity = header.split(',').count().saturating_sub(1);
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != arity + 1 {
                return Err(parse_err(i + 1, format!("expected {} fields", arity + 1)));
            }
            let idx = fields[..arity]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            let p: f64 = fields[arity]
                .trim()
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse_err(i + 1, e.to_string()))?;
            rows.push((idx, p));
        }
        let mut cards = vec![0; arity];
        for (idx, _) in &rows {
            for (c, &i) in cards.iter_mut().zip(idx) {
                *c = (*c).max(i + 1);
            }
        }
        let mut probs = vec![0.0; cards.iter().product()];
        let proto = ContingencyTable {
            cards: cards.clone(),
            probs: Vec::new(),
            n_samples: None,
        };
        for (idx, p) in rows {
            probs[proto.flat(&idx)] += p;
        }
        Self::from_probs(&cards, probs)
    }
}

fn check_cards(cards: &[usize]) -> Result<()> {
    if !(2..=3).contains(&cards.len()) {
        return Err(Error::invalid(format!(
            "contingency tables have arity 2 or 3, got {}",
            cards.len()
        )));
    }
    if cards.contains(&0) {
        return Err(Error::invalid("zero cardinality axis"));
    }
    Ok(())
}

/// Shannon entropy of a probability vector, with 0 ln 0 := 0.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Entropy of one axis' marginal.
pub fn entropy(t: &ContingencyTable, axis: usize) -> f64 {
    entropy_of(&t.marginal(&[axis]))
}

/// Mutual information between two disjoint groups of axes by direct
/// summation of `p ln(p / (p_a p_b))`.
pub fn mi_between(t: &ContingencyTable, a: &[usize], b: &[usize]) -> f64 {
    let pa = t.marginal(a);
    let pb = t.marginal(b);
    let mut keep = a.to_vec();
    keep.extend_from_slice(b);
    let pab = t.marginal(&keep);
    let nb = pb.len();
    let mut mi = 0.0;
    for (flat, &p) in pab.iter().enumerate() {
        if p > 0.0 {
            mi += p * (p / (pa[flat / nb] * pb[flat % nb])).ln();
        }
    }
    mi
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MiOptions {
    /// Miller–Madow bias correction; needs a count-built table.
    pub miller_madow: bool,
}

pub fn exact_mi(t: &ContingencyTable) -> Result<MiEstimate> {
    exact_mi_with(t, MiOptions::default())
}

pub fn exact_mi_with(t: &ContingencyTable, opts: MiOptions) -> Result<MiEstimate> {
    if t.arity() != 2 {
        return Err(Error::invalid("exact_mi needs an arity-2 table"));
    }
    let mut value = mi_between(t, &[0], &[1]);
    if opts.miller_madow {
        let n = t
            .n_samples
            .ok_or_else(|| Error::invalid("Miller-Madow correction needs a count-built table"))?;
        let support = |p: &[f64]| p.iter().filter(|&&x| x > 0.0).count() as f64;
        let mu = support(&t.marginal(&[0]));
        let mv = support(&t.marginal(&[1]));
        let muv = support(&t.probs);
        value += ((mu - 1.0) + (mv - 1.0) - (muv - 1.0)) / (2.0 * n as f64);
    }
    Ok(MiEstimate::exact(value, t.n_samples))
}

/// `I(U; V | W)` where `given` is the axis of `W` and `U`, `V` are the other
/// two axes in order. Empty conditioning slices contribute nothing.
pub fn exact_conditional_mi(t: &ContingencyTable, given: usize) -> Result<MiEstimate> {
    if t.arity() != 3 || given > 2 {
        return Err(Error::invalid(
            "exact_conditional_mi needs an arity-3 table and a conditioning axis < 3",
        ));
    }
    let (u, v) = match given {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (cu, cv, cw) = (t.cards[u], t.cards[v], t.cards[given]);
    let mut total = 0.0;
    for w in 0..cw {
        let mut slice = vec![0.0; cu * cv];
        let mut idx = [0usize; 3];
        for i in 0..cu {
            for j in 0..cv {
                idx[u] = i;
                idx[v] = j;
                idx[given] = w;
                slice[i * cv + j] = t.get(&idx);
            }
        }
        let pw: f64 = slice.iter().sum();
        if pw <= 0.0 {
            continue;
        }
        let norm: Vec<f64> = slice.iter().map(|p| p / pw).collect();
        let st = ContingencyTable {
            cards: vec![cu, cv],
            probs: norm,
            n_samples: None,
        };
        total += pw * mi_between(&st, &[0], &[1]);
    }
    Ok(MiEstimate::exact(total, t.n_samples))
}

/// Closed-form MI of a standard bivariate Gaussian with correlation `rho`.
pub fn gaussian_mi_oracle(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::invalid(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    Ok((-0.5 * (1.0 - rho * rho).ln()).max(0.0))
}

/// Symmetric label-noise channel `p(noisy = k | y)`: `1 - rho` on the
/// diagonal, `rho / (K - 1)` elsewhere.
pub fn noise_channel(rho: f64, k: usize) -> Result<Vec<Vec<f64>>> {
    check_noise_rate(rho, k)?;
    let off = if k > 1 { rho / (k - 1) as f64 } else { 0.0 };
    Ok((0..k)
        .map(|y| (0..k).map(|j| if j == y { 1.0 - rho } else { off }).collect())
        .collect())
}

pub fn check_noise_rate(rho: f64, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("label noise needs at least 2 classes"));
    }
    let upper = 1.0 - 1.0 / k as f64;
    if !(0.0..upper).contains(&rho) {
        return Err(Error::invalid(format!(
            "noise rate {rho} outside [0, {upper}) for {k} classes"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseCurvePoint {
    pub rho: f64,
    /// I(Z; noisy Y)
    pub mi_bias_noisy: f64,
    /// I(Y; noisy Y)
    pub mi_target_noisy: f64,
    /// Ratio of the two; `None` when the denominator vanishes.
    pub ratio: Option<f64>,
}

/// Pushes a `(Y, Z)` joint through the label-noise channel for each rate and
/// reports `I(Z; Ỹ)`, `I(Y; Ỹ)` and their ratio, exactly.
pub fn label_noise_mi_curve(
    joint_yz: &ContingencyTable,
    rhos: &[f64],
    k: usize,
) -> Result<Vec<NoiseCurvePoint>> {
    if joint_yz.arity() != 2 {
        return Err(Error::invalid("label_noise_mi_curve needs a (Y, Z) table"));
    }
    if joint_yz.cards[0] != k {
        return Err(Error::invalid(format!(
            "Y axis has {} values but K = {k}",
            joint_yz.cards[0]
        )));
    }
    let b = joint_yz.cards[1];
    rhos.iter()
        .map(|&rho| {
            let ch = noise_channel(rho, k)?;
            let mut probs = vec![0.0; k * b * k];
            for y in 0..k {
                for z in 0..b {
                    let p = joint_yz.get(&[y, z]);
                    for (yt, &c) in ch[y].iter().enumerate() {
                        probs[(y * b + z) * k + yt] = p * c;
                    }
                }
            }
            let t = ContingencyTable {
                cards: vec![k, b, k],
                probs,
                n_samples: None,
            };
            let mi_bias_noisy = clamp_tiny_negative(mi_between(&t, &[1], &[2]));
            let mi_target_noisy = clamp_tiny_negative(mi_between(&t, &[0], &[2]));
            let ratio = (mi_target_noisy > 1e-15).then(|| mi_bias_noisy / mi_target_noisy);
            Ok(NoiseCurvePoint {
                rho,
                mi_bias_noisy,
                mi_target_noisy,
                ratio,
            })
        })
        .collect()
}

/// The (Y, Z) joint implied by a uniform target and a bias that matches
/// `y mod B` with probability `corr`, uniform over the rest otherwise.
pub fn spurious_joint(a: usize, b: usize, corr: f64) -> Result<ContingencyTable> {
    spurious_joint_with_prior(&vec![1.0 / a as f64; a], b, corr)
}

pub fn spurious_joint_with_prior(prior: &[f64], b: usize, corr: f64) -> Result<ContingencyTable> {
    let a = prior.len();
    if b == 0 || a == 0 {
        return Err(Error::invalid("empty label sets"));
    }
    let lo = 1.0 / b as f64;
    if !(lo - 1e-12..=1.0).contains(&corr) {
        return Err(Error::invalid(format!("corr {corr} outside [{lo}, 1]")));
    }
    let mut probs = vec![0.0; a * b];
    for (y, &py) in prior.iter().enumerate() {
        let matched = y % b;
        for z in 0..b {
            let pz = if z == matched {
                corr
            } else if b > 1 {
                (1.0 - corr) / (b - 1) as f64
            } else {
                0.0
            };
            probs[y * b + z] = py * pz;
        }
    }
    ContingencyTable::from_probs(&[a, b], probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn t2(p: [[f64; 2]; 2]) -> ContingencyTable {
        ContingencyTable::from_probs(&[2, 2], vec![p[0][0], p[0][1], p[1][0], p[1][1]]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_of(&[0.5, 0.5]) - LN_2).abs() < 1e-15);
        assert_eq!(entropy_of(&[1.0, 0.0]), 0.0);
        assert!((entropy_of(&[0.8, 0.2]) - 0.500402).abs() < 1e-6);
    }

    #[test]
    fn mi_examples() {
        let indep = t2([[0.3 * 0.6, 0.3 * 0.4], [0.7 * 0.6, 0.7 * 0.4]]);
        assert!(exact_mi(&indep).unwrap().value.abs() < 1e-12);
        let diag = t2([[0.5, 0.0], [0.0, 0.5]]);
        assert!((exact_mi(&diag).unwrap().value - LN_2).abs() < 1e-15);
        let t = t2([[0.4, 0.1], [0.1, 0.4]]);
        assert!((exact_mi(&t).unwrap().value - 0.192745).abs() < 1e-6);
    }

    #[test]
    fn conditional_mi_when_conditioning_determines_u() {
        // U = W, V arbitrary.
        let mut probs = vec![0.0; 8];
        let pv = [0.3, 0.7];
        let pw = [0.4, 0.6];
        for w in 0..2 {
            for v in 0..2 {
                probs[(w * 2 + v) * 2 + w] = pw[w] * pv[v];
            }
        }
        let t = ContingencyTable::from_probs(&[2, 2, 2], probs).unwrap();
        assert!(exact_conditional_mi(&t, 2).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn conditional_mi_when_u_equals_v_independent_of_w() {
        let pu = [0.25, 0.75];
        let pw = [0.5, 0.5];
        let mut probs = vec![0.0; 8];
        for u in 0..2 {
            for w in 0..2 {
                probs[(u * 2 + u) * 2 + w] = pu[u] * pw[w];
            }
        }
        let t = ContingencyTable::from_probs(&[2, 2, 2], probs).unwrap();
        let want = entropy_of(&pu);
        assert!((exact_conditional_mi(&t, 2).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn gaussian_oracle() {
        assert_eq!(gaussian_mi_oracle(0.0).unwrap(), 0.0);
        assert!((gaussian_mi_oracle(0.8).unwrap() - 0.510826).abs() < 1e-6);
        assert_eq!(gaussian_mi_oracle(0.8).unwrap(), gaussian_mi_oracle(-0.8).unwrap());
        assert!(gaussian_mi_oracle(1.0).is_err());
    }

    #[test]
    fn noise_curve_identity_channel() {
        let t = t2([[0.4, 0.1], [0.1, 0.4]]);
        let pts = label_noise_mi_curve(&t, &[0.0], 2).unwrap();
        let iyz = exact_mi(&t).unwrap().value;
        assert!((pts[0].mi_bias_noisy - iyz).abs() < 1e-12);
        assert!((pts[0].ratio.unwrap() - iyz / LN_2).abs() < 1e-12);
    }

    #[test]
    fn noise_curve_independent_bias() {
        let t = t2([[0.25, 0.25], [0.25, 0.25]]);
        for p in label_noise_mi_curve(&t, &[0.0, 0.2, 0.4], 2).unwrap() {
            assert_eq!(p.mi_bias_noisy, 0.0);
            assert_eq!(p.ratio, Some(0.0));
        }
    }

    #[test]
    fn noise_rate_out_of_range() {
        let t = t2([[0.4, 0.1], [0.1, 0.4]]);
        assert!(label_noise_mi_curve(&t, &[0.5], 2).is_err());
        assert!(label_noise_mi_curve(&t, &[-0.1], 2).is_err());
    }

    #[test]
    fn spurious_joint_matches_hand_table() {
        let t = spurious_joint(2, 2, 0.9).unwrap();
        for (p, want) in t.probs().iter().zip([0.45, 0.05, 0.05, 0.45]) {
            assert!((p - want).abs() < 1e-15);
        }
        assert!((exact_mi(&t).unwrap().value - 0.368064).abs() < 1e-6);
    }

    #[test]
    fn bad_tables_rejected() {
        assert!(ContingencyTable::from_probs(&[2, 2], vec![0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(ContingencyTable::from_probs(&[2, 2], vec![-0.1, 0.6, 0.25, 0.25]).is_err());
        assert!(ContingencyTable::from_probs(&[4], vec![0.25; 4]).is_err());
    }

    #[test]
    fn miller_madow_adds_positive_correction_for_full_support() {
        let t = ContingencyTable::from_counts(&[2, 2], &[40, 10, 10, 40]).unwrap();
        let ml = exact_mi(&t).unwrap().value;
        let mm = exact_mi_with(&t, MiOptions { miller_madow: true }).unwrap().value;
        // (1 + 1 - 3) / 200
        assert!((mm - (ml - 0.005)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = ContingencyTable::from_probs(&[2, 3, 2], (1..=12).map(|i| i as f64 / 78.0).collect()).unwrap();
        t.write_csv(&path).unwrap();
        let back = ContingencyTable::read_csv(&path).unwrap();
        assert_eq!(back.cards(), t.cards());
        for (a, b) in back.probs().iter().zip(t.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

//! wasm-bindgen entry points for `www/index.html`. Each returns a JSON
//! string; errors come back as `{"error": "..."}`.

use cobias::debias::{train, Method, TrainConfig};
use cobias::experiment::ModelSpec;
use cobias::fairmetrics::group_accuracies;
use cobias::infomeasure::{gaussian_mi_oracle, label_noise_mi_curve, ContingencyTable};
use cobias::mine::{train_mi_estimator, EstimatorConfig};
use cobias::model::BiasModel;
use cobias::ndcore::{Matrix, RngState};
use cobias::synthdata::{generate, SpuriousSpec};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

/// Analytic I(Z;Ỹ), I(Y;Ỹ) and their ratio for a binary (Y, Z) with
/// p(Z = Y) = `agreement`, at `steps` noise rates spread over [0, 0.5).
pub fn noise_curve_value(agreement: f64, steps: usize) -> Result<Value, String> {
    if !(0.0..=1.0).contains(&agreement) {
        return Err(format!("agreement must lie in [0, 1], got {agreement}"));
    }
    let (same, diff) = (agreement / 2.0, (1.0 - agreement) / 2.0);
    let joint = ContingencyTable::from_probs(&[2, 2], vec![same, diff, diff, same]).map_err(|e| e.to_string())?;
    let steps = steps.clamp(2, 200);
    let rhos: Vec<f64> = (0..steps).map(|i| 0.49 * i as f64 / (steps - 1) as f64).collect();
    let curve = label_noise_mi_curve(&joint, &rhos, 2).map_err(|e| e.to_string())?;
    let points: Vec<Value> = curve
        .iter()
        .map(|p| json!({ "rho": p.rho, "bias": p.mi_bias_noisy, "target": p.mi_target_noisy, "ratio": p.ratio }))
        .collect();
    Ok(json!({ "points": points, "limit": (1.0 - 2.0 * 0.49f64).powi(2) }))
}

/// Neural DV estimate of I(U;V) for a bivariate Gaussian with correlation
/// `rho`, next to the closed form.
pub fn gaussian_mi_value(rho: f64, n: usize, epochs: usize, seed: u64) -> Result<Value, String> {
    let oracle = gaussian_mi_oracle(rho).map_err(|e| e.to_string())?;
    let mut rng = RngState::with_stream(seed, 9);
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a = rng.normal();
        u.push(a);
        v.push(rho * a + (1.0 - rho * rho).sqrt() * rng.normal());
    }
    let cfg = EstimatorConfig {
        epochs: epochs.max(1),
        eval_last: epochs.clamp(1, 10),
        ..EstimatorConfig::default()
    };
    let t = train_mi_estimator(&Matrix::column(&u), &Matrix::column(&v), &cfg, &mut RngState::new(seed))
        .map_err(|e| e.to_string())?;
    let history: Vec<f64> = t.history.iter().map(|h| h.bound_value).collect();
    Ok(json!({ "estimate": t.estimate.value, "oracle": oracle, "history": history }))
}

/// Trains a small model on the spurious-correlation task and reports
/// per-group test accuracy.
pub fn group_run_value(method: &str, corr: f64, rho: f64, epochs: usize, seed: u64) -> Result<Value, String> {
    let method: Method = method.parse()?;
    let spec = SpuriousSpec {
        n: 2000,
        n_test: 2000,
        corr,
        seed,
        ..SpuriousSpec::default()
    };
    let (tr, te) = generate(&spec).map_err(|e| e.to_string())?;
    let ms = ModelSpec::default();
    let mut rng = RngState::with_stream(seed, 4);
    let m = BiasModel::new(tr.input_dim(), &ms.hidden, ms.feature_dim, 2, &mut rng).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs,
        lr: 1e-3,
        rho,
        method,
        seed,
        ..TrainConfig::default()
    };
    let out = train(m, None, &tr, None, &cfg).map_err(|f| f.error.to_string())?;
    let pred = out.model.predict(&te.x).map_err(|e| e.to_string())?;
    let r = group_accuracies(&pred, &te.y, &te.z, 2, 2).map_err(|e| e.to_string())?;
    Ok(json!({
        "groups": r.group_acc,
        "worst_group": r.worst_group_acc,
        "unbiased": r.unbiased_acc,
        "average": r.average_acc,
    }))
}

#[wasm_bindgen]
pub fn noise_curve(agreement: f64, steps: usize) -> String {
    respond(noise_curve_value(agreement, steps))
}

#[wasm_bindgen]
pub fn gaussian_mi(rho: f64, n: usize, epochs: usize, seed: u32) -> String {
    respond(gaussian_mi_value(rho, n, epochs, seed as u64))
}

#[wasm_bindgen]
pub fn group_run(method: &str, corr: f64, rho: f64, epochs: usize, seed: u32) -> String {
    respond(group_run_value(method, corr, rho, epochs, seed as u64))
}

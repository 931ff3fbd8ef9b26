use cobias::debias::{
    linear_probe_experiment, train, train_erm, train_group_dro, train_label_noise, train_with_regularizer, Method,
    Phase, TrainConfig,
};
use cobias::fairmetrics::ReportConfig;
use cobias::mine::EstimatorConfig;
use cobias::model::BiasModel;
use cobias::ndcore::{Matrix, RngState};
use cobias::synthdata::{generate, LabeledDataset, SpuriousSpec};

fn data() -> (LabeledDataset, LabeledDataset) {
    generate(&SpuriousSpec {
        n: 600,
        n_test: 400,
        corr: 0.9,
        d_noise: 4,
        seed: 3,
        ..SpuriousSpec::default()
    })
    .unwrap()
}

fn model(ds: &LabeledDataset) -> BiasModel {
    BiasModel::new(ds.input_dim(), &[8], 4, ds.a, &mut RngState::new(21)).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 64,
        lr: 1e-2,
        critic: EstimatorConfig {
            hidden: vec![16],
            batch: 64,
            ..EstimatorConfig::default()
        },
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_noise_rate_is_erm_bit_for_bit() {
    let (ds, _) = data();
    let erm = train_erm(model(&ds), &ds, &cfg(4)).unwrap();
    let noise = train_label_noise(model(&ds), &ds, &TrainConfig { rho: 0.0, ..cfg(4) }).unwrap();
    assert_eq!(erm.model, noise.model);
    assert_eq!(erm.log.to_csv(), noise.log.to_csv());
}

#[test]
fn zero_beta_model_epochs_replay_erm() {
    let (ds, _) = data();
    let erm = train_erm(model(&ds), &ds, &cfg(3)).unwrap();
    let reg = train_with_regularizer(model(&ds), None, &ds, &TrainConfig { beta: 0.0, ..cfg(6) }).unwrap();
    assert_eq!(erm.model, reg.model);
    let model_epochs: Vec<_> = reg.log.epochs.iter().filter(|e| e.phase == Phase::Model).collect();
    for (a, b) in erm.log.epochs.iter().zip(model_epochs) {
        assert_eq!(a.extractor_checksum, b.extractor_checksum);
        assert_eq!(a.task_loss.map(f64::to_bits), b.task_loss.map(f64::to_bits));
    }
}

#[test]
fn single_group_dro_is_erm() {
    // One target class and one bias value: a single group with weight 1.
    let mut rng = RngState::new(2);
    let n = 200;
    let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap();
    let ds = LabeledDataset::new(x, vec![0; n], vec![0; n], 2, 1).unwrap();
    let c = TrainConfig { resample: false, ..cfg(3) };
    let erm = train_erm(model(&ds), &ds, &c).unwrap();
    let dro = train_group_dro(model(&ds), &ds, &c).unwrap();
    for (a, b) in erm.model.head().params().iter().zip(dro.model.head().params()) {
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let (ds, _) = data();
    for method in [Method::ERM, Method::NOISE, Method::REGULARIZER, Method::GROUP_DRO] {
        let m = model(&ds);
        let out = train(m.clone(), None, &ds, None, &TrainConfig { method, ..cfg(0) }).unwrap();
        assert_eq!(out.model, m);
        assert!(out.log.epochs.is_empty());
    }
}

#[test]
fn alternation_freezes_the_idle_player() {
    let (ds, _) = data();
    let out = train_with_regularizer(model(&ds), None, &ds, &TrainConfig { beta: 1.0, ..cfg(4) }).unwrap();
    let log = &out.log.epochs;
    assert_eq!(
        log.iter().map(|e| e.phase).collect::<Vec<_>>(),
        [Phase::Model, Phase::Critic, Phase::Model, Phase::Critic]
    );
    for w in log.windows(2) {
        match w[1].phase {
            // The critic epoch leaves the classifier untouched.
            Phase::Critic => {
                assert_eq!(w[0].extractor_checksum, w[1].extractor_checksum);
                assert_eq!(w[0].head_checksum, w[1].head_checksum);
                assert_ne!(w[0].critic_checksum, w[1].critic_checksum);
            }
            // The model epoch leaves the critic untouched.
            _ => {
                assert_eq!(w[0].critic_checksum, w[1].critic_checksum);
                assert_ne!(w[0].extractor_checksum, w[1].extractor_checksum);
            }
        }
    }
}

#[test]
fn per_step_alternation_moves_both_players_every_epoch() {
    let (ds, _) = data();
    let c = TrainConfig {
        beta: 1.0,
        per_step_alternation: true,
        ..cfg(2)
    };
    let out = train_with_regularizer(model(&ds), None, &ds, &c).unwrap();
    let log = &out.log.epochs;
    assert!(log.iter().all(|e| e.phase == Phase::Joint));
    assert_ne!(log[0].critic_checksum, log[1].critic_checksum);
    assert_ne!(log[0].extractor_checksum, log[1].extractor_checksum);
}

#[test]
fn erm_learns_a_separable_task() {
    let mut rng = RngState::new(8);
    let n = 400;
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data: Vec<f64> = y
        .iter()
        .flat_map(|&c| {
            let s = if c == 1 { 3.0 } else { -3.0 };
            [s + 0.3 * rng.normal(), 0.3 * rng.normal()]
        })
        .collect();
    let ds = LabeledDataset::new(Matrix::from_vec(n, 2, data).unwrap(), y.clone(), y, 2, 2).unwrap();
    let out = train_erm(model(&ds), &ds, &cfg(20)).unwrap();
    let pred = out.model.predict(&ds.x).unwrap();
    let acc = pred.iter().zip(&ds.y).filter(|(p, t)| p == t).count() as f64 / n as f64;
    assert!(acc > 0.99, "{acc}");
    let losses: Vec<f64> = out.log.epochs.iter().filter_map(|e| e.task_loss).collect();
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn training_is_deterministic() {
    let (ds, _) = data();
    for method in [Method::NOISE, Method::REGULARIZER, Method::GROUP_DRO] {
        let c = TrainConfig { method, beta: 1.0, ..cfg(2) };
        let a = train(model(&ds), None, &ds, None, &c).unwrap();
        let b = train(model(&ds), None, &ds, None, &c).unwrap();
        assert_eq!(a.model, b.model, "{method}");
        assert_eq!(a.log.to_csv(), b.log.to_csv());
    }
}

#[test]
fn bad_configs_are_rejected_before_training() {
    let (ds, _) = data();
    let err = train(model(&ds), None, &ds, None, &TrainConfig { rho: 0.5, method: Method::NOISE, ..cfg(1) })
        .unwrap_err();
    assert!(!err.error.is_numerical());
    assert_eq!(err.last_good.as_ref(), &model(&ds));
}

#[test]
fn critic_divergence_is_numerical_and_keeps_last_good_model() {
    let (ds, _) = data();
    let mut c = TrainConfig { beta: 1.0, ..cfg(4) };
    c.critic.divergence_limit = 1e-9;
    let f = train_with_regularizer(model(&ds), None, &ds, &c).unwrap_err();
    assert!(f.error.is_numerical(), "{}", f.error);
    assert!(f.error.to_string().contains("smaller beta"));
    // Epoch 0 (model) completed; epoch 1 (critic) failed.
    assert_eq!(f.log.epochs.len(), 1);
    assert_eq!(f.log.epochs[0].extractor_checksum, f.last_good.extractor_checksum());
}

#[test]
fn linear_probe_keeps_features_byte_identical() {
    let (ds, test) = data();
    let base = train_erm(model(&ds), &ds, &cfg(3)).unwrap().model;
    let report = ReportConfig::default();
    let probe = linear_probe_experiment(&base, &ds, &test, &cfg(3), &report).unwrap();
    assert_eq!(probe.before.features, probe.after.features);
    assert_eq!(probe.model.extractor(), base.extractor());
    assert!(probe.model.is_frozen());
    assert_ne!(probe.model.head(), base.head());
}

use cobias::model::BiasModel;
use cobias::ndcore::{RngState, Tape};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_round_trip(seed in 0u64..10_000, input in 1usize..6, hidden in 1usize..6, feat in 1usize..5, classes in 2usize..4) {
        let m = BiasModel::new(input, &[hidden], feat, classes, &mut RngState::new(seed)).unwrap();
        let back = BiasModel::from_checkpoint(&m.to_checkpoint(), "mem").unwrap();
        prop_assert_eq!(m, back);
    }
}

#[test]
fn save_and_load_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = BiasModel::with_defaults(5, 3, &mut RngState::new(1)).unwrap();
    m.save(&path).unwrap();
    assert_eq!(BiasModel::load(&path).unwrap(), m);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let m = BiasModel::with_defaults(3, 2, &mut RngState::new(1)).unwrap();
    let text = m.to_checkpoint();
    let cut = &text[..text.len() / 2];
    assert!(BiasModel::from_checkpoint(cut, "cut.ckpt").is_err());
    assert!(BiasModel::load(std::path::Path::new("/nonexistent/m.ckpt")).is_err());
}

#[test]
fn frozen_extractor_receives_no_gradient() {
    let mut m = BiasModel::new(3, &[4], 2, 2, &mut RngState::new(4)).unwrap();
    let x = cobias::ndcore::Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]).unwrap();
    m.freeze_extractor();
    let mut t = Tape::new();
    let b = m.bind(&mut t, true).unwrap();
    let out = m.forward_tape(&mut t, &x, &b).unwrap();
    let loss = t.softmax_cross_entropy(out.logits, &[0, 1]).unwrap();
    let g = t.backward(loss).unwrap();
    assert!(b.extractor.iter().all(|v| !g.contains(*v)));
    assert!(b.head.iter().all(|v| g.contains(*v)));
    m.unfreeze();
    assert!(!m.is_frozen());
}

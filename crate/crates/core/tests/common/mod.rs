//! Helpers shared by integration tests.
#![allow(dead_code)]

use cobias::ndcore::{Axis, Matrix, RngState, Tape, Var};
use cobias::Result;

pub fn randn(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Normal entries pushed away from zero so kinks are not straddled.
pub fn randn_off_zero(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    randn(rows, cols, rng).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One differentiable operation with sampled inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Matrix>,
    pub build: Build,
}

/// Every tape operation, each as a small case with random inputs.
pub fn op_cases(rng: &mut RngState) -> Vec<OpCase> {
    let labels3 = vec![2usize, 0, 1, 1];
    let mut cases: Vec<OpCase> = vec![
        OpCase {
            name: "matmul",
            inputs: vec![randn(3, 4, rng), randn(4, 2, rng)],
            build: Box::new(|t, v| t.matmul(v[0], v[1])),
        },
        OpCase {
            name: "add",
            inputs: vec![randn(3, 2, rng), randn(3, 2, rng)],
            build: Box::new(|t, v| t.add(v[0], v[1])),
        },
        OpCase {
            name: "sub",
            inputs: vec![randn(3, 2, rng), randn(3, 2, rng)],
            build: Box::new(|t, v| t.sub(v[0], v[1])),
        },
        OpCase {
            name: "mul",
            inputs: vec![randn(3, 2, rng), randn(3, 2, rng)],
            build: Box::new(|t, v| t.mul(v[0], v[1])),
        },
        OpCase {
            name: "add_row",
            inputs: vec![randn(4, 3, rng), randn(1, 3, rng)],
            build: Box::new(|t, v| t.add_row(v[0], v[1])),
        },
        OpCase {
            name: "scale",
            inputs: vec![randn(2, 3, rng)],
            build: Box::new(|t, v| t.scale(v[0], -1.7)),
        },
        OpCase {
            name: "add_scalar",
            inputs: vec![randn(2, 3, rng)],
            build: Box::new(|t, v| t.add_scalar(v[0], 0.3)),
        },
        OpCase {
            name: "relu",
            inputs: vec![randn_off_zero(3, 3, rng)],
            build: Box::new(|t, v| t.relu(v[0])),
        },
        OpCase {
            name: "tanh",
            inputs: vec![randn(3, 3, rng)],
            build: Box::new(|t, v| t.tanh(v[0])),
        },
        OpCase {
            name: "exp",
            inputs: vec![randn(3, 2, rng)],
            build: Box::new(|t, v| t.exp(v[0])),
        },
        OpCase {
            name: "log",
            inputs: vec![uniform(3, 2, 0.5, 2.0, rng)],
            build: Box::new(|t, v| t.log(v[0])),
        },
        OpCase {
            name: "sum",
            inputs: vec![randn(3, 4, rng)],
            build: Box::new(|t, v| t.sum(v[0])),
        },
        OpCase {
            name: "mean",
            inputs: vec![randn(3, 4, rng)],
            build: Box::new(|t, v| t.mean(v[0])),
        },
        OpCase {
            name: "logsumexp_rows",
            inputs: vec![randn(4, 3, rng)],
            build: Box::new(|t, v| t.logsumexp(v[0], Axis::Rows)),
        },
        OpCase {
            name: "logsumexp_cols",
            inputs: vec![randn(4, 3, rng)],
            build: Box::new(|t, v| t.logsumexp(v[0], Axis::Cols)),
        },
        OpCase {
            name: "concat_rows",
            inputs: vec![randn(2, 3, rng), randn(1, 3, rng)],
            build: Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Rows)),
        },
        OpCase {
            name: "concat_cols",
            inputs: vec![randn(3, 2, rng), randn(3, 1, rng)],
            build: Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Cols)),
        },
        OpCase {
            name: "select_rows",
            inputs: vec![randn(4, 2, rng)],
            build: Box::new(|t, v| t.select_rows(v[0], &[3, 0, 3, 1])),
        },
    ];
    let l = labels3.clone();
    cases.push(OpCase {
        name: "cross_entropy_rows",
        inputs: vec![randn(4, 3, rng)],
        build: Box::new(move |t, v| t.cross_entropy_rows(v[0], &l)),
    });
    cases.push(OpCase {
        name: "softmax_cross_entropy",
        inputs: vec![randn(4, 3, rng)],
        build: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels3)),
    });
    cases.push(OpCase {
        name: "composite_mlp",
        inputs: vec![randn(5, 3, rng), randn(3, 4, rng), randn(1, 4, rng), randn(4, 2, rng)],
        build: Box::new(|t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_row(h, v[2])?;
            let h = t.tanh(h)?;
            let o = t.matmul(h, v[3])?;
            let s = t.scale(o, 1.0 / 30.0)?;
            let s = t.tanh(s)?;
            let s = t.scale(s, 30.0)?;
            t.logsumexp(s, Axis::Rows)
        }),
    });
    cases
}

/// Relative error `|g - g_fd| / (|g| + |g_fd|)` (Euclidean norms over every
/// input entry) between tape gradients and central differences of
/// `sum(op(inputs) * w)` for a fixed random `w`.
pub fn gradient_error(case: &OpCase, rng: &mut RngState) -> f64 {
    let out_shape = {
        let mut t = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|m| t.param(m.clone()).unwrap()).collect();
        let o = (case.build)(&mut t, &vars).unwrap();
        t.value(o).shape()
    };
    let w = randn(out_shape.0, out_shape.1, rng);
    let objective = |inputs: &[Matrix]| -> (f64, Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| t.param(m.clone()).unwrap()).collect();
        let o = (case.build)(&mut t, &vars).unwrap();
        let wv = t.constant(w.clone()).unwrap();
        let p = t.mul(o, wv).unwrap();
        let s = t.sum(p).unwrap();
        (t.value(s).item(), t, vars, s)
    };

    let (_, tape, vars, root) = objective(&case.inputs);
    let grads = tape.backward(root).unwrap();
    let h = 1e-5;
    let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
    for (k, input) in case.inputs.iter().enumerate() {
        let g = grads.get(vars[k]).expect("every input requires grad");
        for idx in 0..input.len() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[idx] -= h;
            let fd = (objective(&plus).0 - objective(&minus).0) / (2.0 * h);
            let an = g.data()[idx];
            diff += (an - fd).powi(2);
            norm_a += an * an;
            norm_n += fd * fd;
        }
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Worst relative gradient error per op over `seeds` seeds.
pub fn gradient_check(seeds: u64) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..seeds {
        let mut rng = RngState::with_stream(seed, 77);
        for case in op_cases(&mut rng) {
            let e = gradient_error(&case, &mut rng);
            match worst.iter_mut().find(|(n, _)| *n == case.name) {
                Some(slot) => slot.1 = slot.1.max(e),
                None => worst.push((case.name, e)),
            }
        }
    }
    worst
}

/// A random joint table; roughly one cell in ten is exactly zero.
pub fn random_table(cards: &[usize], rng: &mut RngState) -> cobias::infomeasure::ContingencyTable {
    let n: usize = cards.iter().product();
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.1 { 0.0 } else { rng.uniform().powi(3) })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            let p = w.iter().map(|x| x / s).collect();
            return cobias::infomeasure::ContingencyTable::from_probs(cards, p).unwrap();
        }
    }
}

/// Worst deviations over `trials` random tables: (symmetry, negativity,
/// entropy-route gap) for the given 2-D shape.
pub fn mi_identity_errors(cards: [usize; 2], trials: usize, rng: &mut RngState) -> (f64, f64, f64) {
    use cobias::infomeasure::{entropy, entropy_of, exact_mi};
    let (mut sym, mut neg, mut route) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let t = random_table(&cards, rng);
        let i = exact_mi(&t).unwrap().value;
        let it = exact_mi(&t.transpose().unwrap()).unwrap().value;
        sym = sym.max((i - it).abs());
        neg = neg.max(-i);
        let h_u_given_v = entropy_of(t.probs()) - entropy(&t, 1);
        route = route.max((i - (entropy(&t, 0) - h_u_given_v)).abs());
    }
    (sym, neg, route)
}

/// Worst gap in `I(U; V,W) = I(U; W) + I(U; V | W)` over random 2x2x2 tables.
pub fn chain_rule_error(trials: usize, rng: &mut RngState) -> f64 {
    use cobias::infomeasure::{exact_conditional_mi, mi_between};
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let t = random_table(&[2, 2, 2], rng);
        let lhs = mi_between(&t, &[0], &[1, 2]);
        let rhs = mi_between(&t, &[0], &[2]) + exact_conditional_mi(&t, 2).unwrap().value;
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// A discrete-feature construction whose `I(F; Z | Y)` is computable exactly.
pub struct CobiasToy {
    pub name: &'static str,
    /// One-hot rows of the discrete feature.
    pub features: Matrix,
    pub feature_label: Vec<usize>,
    pub feature_card: usize,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
    pub a: usize,
    pub b: usize,
}

impl CobiasToy {
    /// Plug-in `I(F; Z | Y)` of the sampled triples.
    pub fn exact(&self) -> f64 {
        use cobias::infomeasure::{exact_conditional_mi, ContingencyTable};
        let t = ContingencyTable::from_samples(
            &[&self.feature_label, &self.z, &self.y],
            &[self.feature_card, self.b, self.a],
        )
        .unwrap();
        exact_conditional_mi(&t, 2).unwrap().value
    }
}

fn labels(n: usize, a: usize, b: usize, corr: f64, rng: &mut RngState) -> (Vec<usize>, Vec<usize>) {
    let y: Vec<usize> = (0..n).map(|_| rng.below(a)).collect();
    let z = y
        .iter()
        .map(|&yy| {
            let matched = yy % b;
            if rng.bernoulli(corr) || b == 1 {
                matched
            } else {
                let other = rng.below(b - 1);
                if other >= matched {
                    other + 1
                } else {
                    other
                }
            }
        })
        .collect();
    (y, z)
}

fn toy(name: &'static str, f: Vec<usize>, card: usize, y: Vec<usize>, z: Vec<usize>, a: usize, b: usize) -> CobiasToy {
    CobiasToy {
        name,
        features: Matrix::one_hot(&f, card).unwrap(),
        feature_label: f,
        feature_card: card,
        y,
        z,
        a,
        b,
    }
}

/// Five constructions spanning zero, partial and full bias information.
pub fn cobias_toys(n: usize, seed: u64) -> Vec<CobiasToy> {
    let mut rng = RngState::with_stream(seed, 31);
    let mut out = Vec::new();

    let (y, z) = labels(n, 2, 2, 0.9, &mut rng);
    out.push(toy("feature_copies_z", z.clone(), 2, y, z, 2, 2));

    let (y, z) = labels(n, 2, 2, 0.9, &mut rng);
    out.push(toy("feature_copies_y", y.clone(), 2, y, z, 2, 2));

    let (y, z) = labels(n, 2, 2, 0.7, &mut rng);
    let f = z.iter().map(|&zz| if rng.bernoulli(0.2) { 1 - zz } else { zz }).collect();
    out.push(toy("feature_is_flipped_z", f, 2, y, z, 2, 2));

    let (y, z) = labels(n, 2, 2, 0.8, &mut rng);
    let f = y.iter().zip(&z).map(|(&yy, &zz)| 2 * yy + zz).collect();
    out.push(toy("feature_encodes_y_and_z", f, 4, y, z, 2, 2));

    let (y, z) = labels(n, 3, 3, 0.6, &mut rng);
    let f = z.iter().map(|&zz| if rng.bernoulli(0.3) { rng.below(3) } else { zz }).collect();
    out.push(toy("three_classes_noisy_z", f, 3, y, z, 3, 3));
    out
}

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, RngState, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, m: Matrix) -> Matrix {
        match self {
            Activation::Identity => m,
            Activation::Tanh => m.map(f64::tanh),
            Activation::Relu => m.map(|x| x.max(0.0)),
        }
    }

    fn apply_tape(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

/// Fully connected network. Parameters are stored flat as
/// `[w0, b0, w1, b1, ...]` with `w_i: in x out` and `b_i: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<Matrix>,
}

impl Mlp {
    /// Glorot-uniform weights scaled by `gain`, zero biases.
    pub fn new(
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        gain: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?} for {name}")));
        }
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
                .collect();
            params.push(Matrix::from_vec(fan_in, fan_out, w)?);
            params.push(Matrix::zeros(1, fan_out));
        }
        Ok(Mlp {
            name: name.to_string(),
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        })
    }

    pub fn from_params(
        name: &str,
        hidden: Activation,
        output: Activation,
        params: Vec<Matrix>,
    ) -> Result<Self> {
        if params.is_empty() || params.len() % 2 != 0 {
            return Err(Error::invalid(format!("{name}: expected weight/bias pairs")));
        }
        let mut sizes = vec![params[0].rows()];
        for pair in params.chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.rows() != *sizes.last().unwrap() || b.shape() != (1, w.cols()) {
                return Err(Error::invalid(format!(
                    "{name}: inconsistent layer shapes {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            sizes.push(w.cols());
        }
        Ok(Mlp {
            name: name.to_string(),
            sizes,
            hidden,
            output,
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.params.len())
            .map(|i| {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                format!("{}.{}.{kind}", self.name, i / 2)
            })
            .collect()
    }

    pub fn checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0u64, |acc, p| acc.rotate_left(7) ^ p.checksum())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                left: (0, cols),
                right: (0, self.input_dim()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.cols())?;
        let last = self.params.len() / 2 - 1;
        let mut h = x.clone();
        for (i, pair) in self.params.chunks(2).enumerate() {
            let z = h.matmul(&pair[0])?.add_row(&pair[1])?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(z);
        }
        h.ensure_finite(&self.name)?;
        Ok(h)
    }

    /// Places the parameters on the tape, trainable or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Forward pass on the tape using previously bound parameters. Performs the
    /// same arithmetic as [`Mlp::forward`].
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, bound: &[Var]) -> Result<Var> {
        self.check_input(tape.value(x).cols())?;
        let last = bound.len() / 2 - 1;
        let mut h = x;
        for (i, pair) in bound.chunks(2).enumerate() {
            let z = tape.matmul(h, pair[0])?;
            let z = tape.add_row(z, pair[1])?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply_tape(tape, z)?;
        }
        Ok(h)
    }

    /// Collects gradients for bound parameters, in parameter order.
    pub fn collect_grads(
        &self,
        grads: &mut crate::ndcore::Gradients,
        bound: &[Var],
    ) -> Result<Vec<Matrix>> {
        bound
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                Ok(grads
                    .take(v)
                    .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            })
            .collect()
    }
}

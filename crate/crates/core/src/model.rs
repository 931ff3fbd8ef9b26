//! The classifier under study: `c(x) = h(g(x))`, an MLP feature extractor `g`
//! followed by a linear head `h`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::{Activation, Matrix, Mlp, RngState, Tape, Var};

pub const DEFAULT_HIDDEN: &[usize] = &[32];
pub const DEFAULT_FEATURE_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct BiasModel {
    extractor: Mlp,
    head: Mlp,
    frozen: bool,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub extractor: Vec<Var>,
    pub head: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct TapeOutputs {
    pub features: Var,
    pub logits: Var,
}

impl BiasModel {
    pub fn new(input_dim: usize, hidden: &[usize], feature_dim: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(feature_dim);
        let extractor = Mlp::new("extractor", &sizes, Activation::Tanh, Activation::Tanh, 1.0, rng)?;
        let head = Self::fresh_head(feature_dim, classes, rng)?;
        Ok(BiasModel {
            extractor,
            head,
            frozen: false,
        })
    }

    pub fn with_defaults(input_dim: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        Self::new(input_dim, DEFAULT_HIDDEN, DEFAULT_FEATURE_DIM, classes, rng)
    }

    pub fn from_parts(extractor: Mlp, head: Mlp) -> Result<Self> {
        if extractor.output_dim() != head.input_dim() || head.sizes().len() != 2 {
            return Err(Error::invalid(format!(
                "head must be a single linear layer on {} features",
                extractor.output_dim()
            )));
        }
        Ok(BiasModel {
            extractor,
            head,
            frozen: false,
        })
    }

    fn fresh_head(feature_dim: usize, classes: usize, rng: &mut RngState) -> Result<Mlp> {
        Mlp::new("head", &[feature_dim, classes], Activation::Identity, Activation::Identity, 1.0, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn extractor(&self) -> &Mlp {
        &self.extractor
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn extractor_mut(&mut self) -> &mut Mlp {
        &mut self.extractor
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze_extractor(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn reinit_head(&mut self, rng: &mut RngState) -> Result<()> {
        self.head = Self::fresh_head(self.feature_dim(), self.classes(), rng)?;
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "model input",
                left: x.shape(),
                right: (x.rows(), self.input_dim()),
            });
        }
        Ok(())
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.extractor.forward(x)
    }

    pub fn head_logits(&self, f: &Matrix) -> Result<Matrix> {
        self.head.forward(f)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.head_logits(&self.features(x)?)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Binds parameters to `tape`; the extractor is trainable unless frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundModel> {
        Ok(BoundModel {
            extractor: self.extractor.bind(tape, trainable && !self.frozen)?,
            head: self.head.bind(tape, trainable)?,
        })
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: &Matrix, bound: &BoundModel) -> Result<TapeOutputs> {
        self.check_input(x)?;
        let xv = tape.constant(x.clone())?;
        let features = self.extractor.forward_tape(tape, xv, &bound.extractor)?;
        let logits = self.head.forward_tape(tape, features, &bound.head)?;
        Ok(TapeOutputs { features, logits })
    }

    pub fn extractor_checksum(&self) -> u64 {
        self.extractor.checksum()
    }

    pub fn head_checksum(&self) -> u64 {
        self.head.checksum()
    }

    /// One line per parameter: `name,rows,cols,v0,v1,...` (row-major), after
    /// a header naming the layer sizes.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!(
            "extractor_sizes,{}\nhead_sizes,{}\n",
            join_sizes(self.extractor.sizes()),
            join_sizes(self.head.sizes())
        );
        for mlp in [&self.extractor, &self.head] {
            for (name, p) in mlp.param_names().iter().zip(mlp.params()) {
                out.push_str(&format!("{name},{},{}", p.rows(), p.cols()));
                for v in p.data() {
                    out.push(',');
                    out.push_str(&crate::fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut extractor = Vec::new();
        let mut head = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let key = fields[0];
            if key.ends_with("_sizes") || line.trim().is_empty() {
                continue;
            }
            if fields.len() < 3 {
                return Err(perr(i + 1, "expected `name,rows,cols,values...`".into()));
            }
            let dims: Vec<usize> = fields[1..3]
                .iter()
                .map(|s| s.parse().map_err(|_| perr(i + 1, format!("bad shape `{s}`"))))
                .collect::<Result<_>>()?;
            let values: Vec<f64> = fields[3..]
                .iter()
                .map(|s| s.parse().map_err(|_| perr(i + 1, format!("bad value `{s}`"))))
                .collect::<Result<_>>()?;
            let m = Matrix::from_vec(dims[0], dims[1], values).map_err(|e| perr(i + 1, e.to_string()))?;
            if key.starts_with("extractor.") {
                extractor.push(m);
            } else if key.starts_with("head.") {
                head.push(m);
            } else {
                return Err(perr(i + 1, format!("unknown parameter `{key}`")));
            }
        }
        let extractor = Mlp::from_params("extractor", Activation::Tanh, Activation::Tanh, extractor)?;
        let head = Mlp::from_params("head", Activation::Identity, Activation::Identity, head)?;
        Self::from_parts(extractor, head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text, &path.display().to_string())
    }
}

fn join_sizes(s: &[usize]) -> String {
    s.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

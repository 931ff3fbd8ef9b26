use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: Option<AdamState>,
}

#[derive(Clone, Debug)]
struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: None,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.t)
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// One update. `names` label parameters in error messages.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name));
            }
        }
        let state = self.state.get_or_insert_with(|| AdamState {
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            t: 0,
        });
        if state.m.len() != params.len() {
            return Err(Error::invalid("adam: parameter count changed between steps"));
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pi);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut adam = Adam::new(0.1, 0.0);
        let mut p = vec![Matrix::row_vector(&[1.0, -2.0])];
        adam.step(&mut p, &[Matrix::zeros(1, 2)], &names(1)).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction.
        let mut adam = Adam::new(0.1, 0.0);
        let mut p = vec![Matrix::scalar(0.5)];
        adam.step(&mut p, &[Matrix::scalar(1.0)], &names(1)).unwrap();
        assert!((p[0].item() - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut adam = Adam::new(0.1, 0.01);
        let mut p = vec![Matrix::scalar(2.0)];
        adam.step(&mut p, &[Matrix::scalar(0.0)], &names(1)).unwrap();
        assert!((p[0].item() - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = Adam::new(0.1, 0.0);
        let mut p = vec![Matrix::scalar(1.0), Matrix::scalar(1.0)];
        let err = adam
            .step(&mut p, &[Matrix::scalar(0.0), Matrix::scalar(f64::NAN)], &names(2))
            .unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
        assert_eq!(p[0].item(), 1.0);
    }
}

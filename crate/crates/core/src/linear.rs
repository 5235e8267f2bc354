use serde::{Deserialize, Serialize};

use crate::error::{ApnetError, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, DenseMatrix, SeededRng};

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights uniform in `±1/√in`, bias zero.
    pub fn init(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: DenseMatrix::from_fn(output, input, |_, _| rng.uniform(-bound, bound)),
            bias: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Row-wise application: `X Wᵀ + 1 bᵀ`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(ApnetError::dims(
                "Linear::forward",
                format!("input has {} columns, map expects {}", x.cols(), self.input_dim()),
            ));
        }
        let mut y = matmul_nt(x, &self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub(crate) fn backward(&self, x: &DenseMatrix, d_out: &DenseMatrix, grad: &mut Linear) -> DenseMatrix {
        let dw = matmul_tn(d_out, x).expect("shapes fixed by forward");
        grad.weight.add_assign(&dw);
        for r in 0..d_out.rows() {
            for (g, d) in grad.bias.iter_mut().zip(d_out.row(r)) {
                *g += d;
            }
        }
        matmul(d_out, &self.weight).expect("shapes fixed by forward")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_adds_bias_per_row() {
        let lin = Linear {
            weight: DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, -2.0]]).unwrap(),
            bias: vec![0.5, 0.0, 1.0],
        };
        let x = DenseMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.row(0), &[2.5, 5.0, -5.0]);
        assert_eq!(y.row(1), &[0.5, 0.0, 1.0]);
        assert!(lin.forward(&DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn init_respects_bound() {
        let lin = Linear::init(16, 4, &mut SeededRng::new(3));
        assert!(lin.weight.data().iter().all(|v| v.abs() <= 0.25));
        assert!(lin.bias.iter().all(|&b| b == 0.0));
    }
}

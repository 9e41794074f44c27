//! Forward and backward kernels for the fixed operator set used by the
//! encoder and objective: affine maps, ReLU, sum-pooling, column
//! concatenation, row dot products, softplus and means.
//!
//! Each `*_backward` takes the upstream gradient and returns the gradient
//! with respect to the operator input; parameter gradients are accumulated
//! on the [`ParamTape`].

use rand::Rng;

use super::{Matrix, ParamId, ParamTape};

/// Affine layer `y = x·W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn register<R: Rng>(tape: &mut ParamTape, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect();
        let weight = tape.register(format!("{name}.weight"), Matrix::from_vec(inputs, outputs, data));
        let bias = tape.register(format!("{name}.bias"), Matrix::zeros(1, outputs));
        Dense { weight, bias }
    }

    /// Looks up a layer previously registered under `name`.
    pub fn find(tape: &ParamTape, name: &str) -> Option<Self> {
        Some(Dense {
            weight: tape.id_of(&format!("{name}.weight"))?,
            bias: tape.id_of(&format!("{name}.bias"))?,
        })
    }

    pub fn inputs(&self, tape: &ParamTape) -> usize {
        tape.value(self.weight).rows()
    }

    pub fn outputs(&self, tape: &ParamTape) -> usize {
        tape.value(self.weight).cols()
    }

    pub fn forward(&self, tape: &ParamTape, x: &Matrix) -> Matrix {
        let mut y = x.matmul(tape.value(self.weight));
        y.add_row_broadcast(tape.value(self.bias));
        y
    }

    pub fn backward(&self, tape: &mut ParamTape, x: &Matrix, dy: &Matrix) -> Matrix {
        tape.accumulate(self.weight, &x.matmul_tn(dy));
        tape.accumulate(self.bias, &dy.column_sums());
        dy.matmul_nt(tape.value(self.weight))
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// `pre` is the ReLU input.
pub fn relu_backward(pre: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (g, &p) in dx.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Sum over rows (sum READOUT), `N×d -> 1×d`.
pub fn sum_pool(x: &Matrix) -> Matrix {
    x.column_sums()
}

/// Broadcasts a `1×d` gradient back onto all `rows` rows.
pub fn sum_pool_backward(rows: usize, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(rows, dy.cols());
    dx.add_row_broadcast(dy);
    dx
}

pub fn concat_cols(blocks: &[&Matrix]) -> Matrix {
    Matrix::hcat(blocks)
}

/// Splits a concatenated gradient back into blocks of the given widths.
pub fn concat_cols_backward(widths: &[usize], dy: &Matrix) -> Vec<Matrix> {
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let block = dy.column_block(offset, w);
            offset += w;
            block
        })
        .collect()
}

/// All pairwise row dot products `S = A·Bᵀ`.
pub fn pairwise_dot(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul_nt(b)
}

/// Returns `(dA, dB)` for `S = A·Bᵀ`.
pub fn pairwise_dot_backward(a: &Matrix, b: &Matrix, ds: &Matrix) -> (Matrix, Matrix) {
    (ds.matmul(b), ds.matmul_tn(a))
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Gradient of [`mean`] with respect to each input, scaled by `dy`.
pub fn mean_backward(n: usize, dy: f64) -> Vec<f64> {
    vec![dy / n as f64; n]
}

use crate::dense::Matrix;
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates shaped like `E^(0)`.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub step: u64,
    pub params: AdamParams,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(rows: usize, cols: usize, params: AdamParams) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            params,
        }
    }
}

/// One bias-corrected Adam update. The L2 term enters the gradient as
/// `2λE^(0)`; rows whose total gradient is exactly zero are left untouched,
/// moments included.
pub fn adam_step<T: Scalar>(
    table: &mut EmbeddingTable<T>,
    grad: &Matrix<T>,
    state: &mut OptimizerState<T>,
    lambda: f64,
    context: &str,
) -> Result<()> {
    let shape = table.matrix.shape();
    if grad.shape() != shape || state.m.shape() != shape {
        return Err(Error::Dimension(format!(
            "table {:?}, gradient {:?}, moments {:?}",
            shape,
            grad.shape(),
            state.m.shape()
        )));
    }
    if let Some(pos) = grad.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient {
            row: pos / shape.1.max(1),
            context: context.to_owned(),
        });
    }
    state.step += 1;
    let p = state.params;
    let (b1, b2) = (T::lit(p.beta1), T::lit(p.beta2));
    let one = T::one();
    let bc1 = one - T::lit(p.beta1.powi(state.step as i32));
    let bc2 = one - T::lit(p.beta2.powi(state.step as i32));
    let lr = T::lit(p.lr);
    let eps = T::lit(p.eps);
    let two_lambda = T::lit(2.0 * lambda);
    let cols = shape.1;
    let mut g = vec![T::zero(); cols];
    for r in 0..shape.0 {
        let params = table.matrix.row_mut(r);
        for ((gi, &d), &w) in g.iter_mut().zip(grad.row(r)).zip(params.iter()) {
            *gi = d + two_lambda * w;
        }
        if g.iter().all(|x| x.is_zero()) {
            continue;
        }
        let m = state.m.row_mut(r);
        for (mi, &gi) in m.iter_mut().zip(&g) {
            *mi = b1 * *mi + (one - b1) * gi;
        }
        let v = state.v.row_mut(r);
        for (vi, &gi) in v.iter_mut().zip(&g) {
            *vi = b2 * *vi + (one - b2) * gi * gi;
        }
        let (m, v) = (state.m.row(r), state.v.row(r));
        for ((w, &mi), &vi) in params.iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

//! The multi-resolution spectral loss as a function of `(T, A)` and its derivatives.
//!
//! For one direction, with `Phi` truncated to the largest order `K` of the schedule:
//!
//! ```text
//! Pi  = softmax(F_Y A (F_X A)^T / alpha)
//! H   = Pi Phi_X,                 P = Phi_Y^T M_Y H
//! C_k = G^-1 P_k G                (the projection Psi_Y^+ Pi Psi_X at order k)
//! R_k = Phi_Y,k G - H_k W_k,      W_k[i][j] = g_i^2 P[j][i] / g_j
//! L   = sum_k ||R_k||^2
//! ```
//!
//! Reverse mode runs through `W`, `P`, `H`, the softmax and the transform.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::pointwise::softmax_rows;

/// One shape of a pair as seen by the loss: truncated eigenbasis, lumped mass and raw features.
pub(crate) struct Side<'a> {
    pub phi: DMatrixView<'a, f64>,
    pub mass: &'a [f64],
    pub features: &'a DMatrix<f64>,
}

pub(crate) struct Directed {
    pub loss: f64,
    /// `dL/dg` for the first `K` gains.
    pub grad_g: Vec<f64>,
    pub grad_a: DMatrix<f64>,
}

/// Loss for the map from `y` back onto `x`, with gradients when `want_grad`.
pub(crate) fn directed(
    x: &Side,
    y: &Side,
    a: &DMatrix<f64>,
    gains: &[f64],
    alpha: f64,
    ks: &[usize],
    want_grad: bool,
) -> Result<Directed> {
    let big_k = x.phi.ncols();
    let tx = x.features * a;
    let ty = y.features * a;
    let pi = softmax_rows(&ty * tx.transpose() / alpha);
    let h = &pi * x.phi;
    let mh = DMatrix::from_fn(h.nrows(), big_k, |v, j| y.mass[v] * h[(v, j)]);
    let p = y.phi.tr_mul(&mh);

    let mut loss = 0.0;
    let mut grad_g = vec![0.0; big_k];
    let mut h_bar = DMatrix::zeros(h.nrows(), big_k);
    let mut p_bar = DMatrix::zeros(big_k, big_k);
    for &k in ks {
        let g = &gains[..k];
        let w = DMatrix::from_fn(k, k, |i, j| g[i] * g[i] * p[(j, i)] / g[j]);
        let hk = h.columns(0, k);
        let mut r = hk * &w;
        for j in 0..k {
            for v in 0..r.nrows() {
                r[(v, j)] = y.phi[(v, j)] * g[j] - r[(v, j)];
            }
        }
        loss += r.norm_squared();
        if !want_grad {
            continue;
        }
        let r_bar = r * 2.0;
        for j in 0..k {
            grad_g[j] += r_bar.column(j).dot(&y.phi.column(j));
        }
        let w_bar = -(hk.tr_mul(&r_bar));
        let hk_bar = -(&r_bar * w.transpose());
        let mut view = h_bar.columns_mut(0, k);
        view += &hk_bar;
        for i in 0..k {
            for j in 0..k {
                let wb = w_bar[(i, j)];
                grad_g[i] += wb * 2.0 * g[i] * p[(j, i)] / g[j];
                grad_g[j] -= wb * g[i] * g[i] * p[(j, i)] / (g[j] * g[j]);
                p_bar[(j, i)] += wb * g[i] * g[i] / g[j];
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite spectral loss".into()));
    }
    if !want_grad {
        return Ok(Directed { loss, grad_g, grad_a: DMatrix::zeros(a.nrows(), a.ncols()) });
    }

    // P = Phi_Y^T M_Y H
    let phi_p = y.phi * &p_bar;
    for v in 0..h_bar.nrows() {
        for j in 0..big_k {
            h_bar[(v, j)] += y.mass[v] * phi_p[(v, j)];
        }
    }
    // H = Pi Phi_X, then the row softmax
    let pi_bar = &h_bar * x.phi.transpose();
    let mut s_bar = pi_bar;
    for v in 0..s_bar.nrows() {
        let dot = s_bar.row(v).dot(&pi.row(v));
        for u in 0..s_bar.ncols() {
            s_bar[(v, u)] = pi[(v, u)] * (s_bar[(v, u)] - dot);
        }
    }
    let ty_bar = &s_bar * &tx / alpha;
    let tx_bar = s_bar.tr_mul(&ty) / alpha;
    let grad_a = y.features.tr_mul(&ty_bar) + x.features.tr_mul(&tx_bar);
    Ok(Directed { loss, grad_g, grad_a })
}

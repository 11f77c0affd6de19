//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Direct-form linear convolution truncated to `x.len()` samples.
pub fn conv(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| (0..h.len().min(n + 1)).map(|k| h[k] * x[n - k]).sum())
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Length-`l` FIR `w` minimising `Σ_n (d(n) - Σ_k w_k xf(n-k))²` with zero
/// pre-history, via the normal equations and a Cholesky solve. A ridge of
/// 1e-10 of the mean diagonal keeps weakly excited directions well posed.
pub fn least_squares_filter(xf: &[f64], d: &[f64], l: usize) -> Vec<f64> {
    let n = xf.len();
    let at = |i: isize| if i >= 0 { xf[i as usize] } else { 0.0 };
    let mut r = DMatrix::<f64>::zeros(l, l);
    for j in 0..l {
        let s: f64 = (0..n).map(|t| at(t as isize) * at(t as isize - j as isize)).sum();
        r[(0, j)] = s;
        r[(j, 0)] = s;
    }
    // R[i+1][j+1] = R[i][j] - xf(N-1-i)·xf(N-1-j): the shifted window loses its last sample
    for i in 0..l - 1 {
        for j in i..l - 1 {
            let v = r[(i, j)] - at(n as isize - 1 - i as isize) * at(n as isize - 1 - j as isize);
            r[(i + 1, j + 1)] = v;
            r[(j + 1, i + 1)] = v;
        }
    }
    let p = DVector::<f64>::from_iterator(l, (0..l).map(|j| (j..n).map(|t| d[t] * xf[t - j]).sum::<f64>()));
    let ridge = 1e-10 * r.trace() / l as f64;
    for i in 0..l {
        r[(i, i)] += ridge;
    }
    r.cholesky().expect("normal equations are positive definite").solve(&p).iter().copied().collect()
}

//! Pieces shared by the mixture-model fits.

use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{Error, Result};

/// Counters collected over a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Bins or frames where every component underflowed and a uniform
    /// posterior was substituted.
    pub underflow: usize,
    /// Spectral components left dormant at the last M-step.
    pub dormant: Vec<bool>,
    /// Spatial `(l, f)` covariances frozen at the last M-step.
    pub frozen: usize,
    /// Coupling rows reset to uniform at the last M-step.
    pub alpha_resets: usize,
}

/// `[K, T, F]` array to flat `[K][F][T]`.
pub(crate) fn ktf_to_kft(a: ArrayView3<f64>) -> Vec<f64> {
    let (k, t, f) = a.dim();
    let mut out = vec![0.0; k * f * t];
    for ki in 0..k {
        for ti in 0..t {
            for fi in 0..f {
                out[(ki * f + fi) * t + ti] = a[[ki, ti, fi]];
            }
        }
    }
    out
}

/// Flat `[K][F][T]` to `[K, T, F]`.
pub(crate) fn kft_to_ktf(v: &[f64], k: usize, t: usize, f: usize) -> Array3<f64> {
    Array3::from_shape_fn((k, t, f), |(ki, ti, fi)| v[(ki * f + fi) * t + ti])
}

/// Frequency average of a flat `[K][F][T]` posterior, as `[K, T]`.
pub(crate) fn freq_average(v: &[f64], k: usize, t: usize, f: usize) -> Array2<f64> {
    let mut out = Array2::zeros((k, t));
    for ki in 0..k {
        let mut row = out.row_mut(ki);
        for fi in 0..f {
            let s = &v[(ki * f + fi) * t..(ki * f + fi + 1) * t];
            for (o, x) in row.iter_mut().zip(s) {
                *o += x;
            }
        }
        row.mapv_inplace(|x| x / f as f64);
    }
    out
}

pub(crate) fn check_finite(ll: f64, iteration: usize, what: &str) -> Result<()> {
    if ll.is_nan() || ll == f64::INFINITY {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("{what} log-likelihood is {ll}"),
        });
    }
    Ok(())
}

/// Relative decrease of `next` below `prev`, zero if it increased.
pub fn relative_decrease(prev: f64, next: f64) -> f64 {
    if next >= prev {
        0.0
    } else {
        (prev - next) / prev.abs().max(1.0)
    }
}

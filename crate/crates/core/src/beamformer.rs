//! Mask-based MVDR beamforming (Souden formulation).

use ndarray::{Array2, ArrayView2, ArrayView3};
use num_complex::Complex64;

use crate::linalg::HermMat;
use crate::par;

/// Relative diagonal loading of the noise covariance.
pub const NOISE_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CovPair {
    pub phi_s: HermMat,
    pub phi_n: HermMat,
    /// The speech or noise side had no weight and used uniform weights.
    pub fallback: bool,
}

fn weighted_cov(y: ArrayView3<Complex64>, f: usize, w: impl Fn(usize) -> f64) -> (HermMat, f64) {
    let (t, _, c) = y.dim();
    let mut s = HermMat::zeros(c);
    let mut total = 0.0;
    for ti in 0..t {
        let wt = w(ti);
        if wt == 0.0 {
            continue;
        }
        total += wt;
        for i in 0..c {
            let yi = y[[ti, f, i]] * wt;
            for j in 0..c {
                let v = s.get(i, j) + yi * y[[ti, f, j]].conj();
                s.set(i, j, v);
            }
        }
    }
    if total > 0.0 {
        s.scale(1.0 / total);
    }
    (s, total)
}

/// Speech and noise covariances at one frequency from a `[T, F]` mask.
pub fn estimate_covariances_at(y: ArrayView3<Complex64>, mask: ArrayView2<f64>, f: usize) -> CovPair {
    let c = y.dim().2;
    let (mut phi_s, ws) = weighted_cov(y, f, |t| mask[[t, f]]);
    let (mut phi_n, wn) = weighted_cov(y, f, |t| 1.0 - mask[[t, f]]);
    let mut fallback = false;
    if ws <= 0.0 {
        phi_s = weighted_cov(y, f, |_| 1.0).0;
        fallback = true;
    }
    if wn <= 0.0 {
        phi_n = weighted_cov(y, f, |_| 1.0).0;
        fallback = true;
    }
    phi_s.symmetrize();
    phi_n.symmetrize();
    let load = NOISE_LOADING * phi_n.trace() / c as f64;
    phi_n.add_diagonal(if load > 0.0 { load } else { NOISE_LOADING });
    CovPair { phi_s, phi_n, fallback }
}

/// Covariance pairs for all frequencies. `y` is the raw STFT `[T, F, C]`.
pub fn estimate_covariances(y: ArrayView3<Complex64>, mask: ArrayView2<f64>) -> Vec<CovPair> {
    par::map_range(y.dim().1, |f| estimate_covariances_at(y, mask, f))
}

/// `w = Phi_n^-1 Phi_s u_ref / trace(Phi_n^-1 Phi_s)`; `None` when the trace
/// vanishes or the noise covariance cannot be inverted.
pub fn mvdr_weights(cov: &CovPair, ref_channel: usize) -> Option<Vec<Complex64>> {
    let inv = cov.phi_n.inverse()?;
    let m = inv.matmul(&cov.phi_s);
    let tr: Complex64 = (0..m.dim()).map(|i| m.get(i, i)).sum();
    if tr.norm() <= 1e-12 || !tr.re.is_finite() {
        return None;
    }
    Some((0..m.dim()).map(|i| m.get(i, ref_channel) / tr).collect())
}

#[derive(Debug, Clone)]
pub struct Extraction {
    /// `[T, F]`.
    pub stft: Array2<Complex64>,
    /// Frequencies whose weights were zeroed.
    pub zeroed_bins: usize,
    pub fallback_bins: usize,
    /// The mask was zero everywhere; the output is silent.
    pub empty_mask: bool,
}

/// `s_tf = w_f^H y_tf` for speaker `k`. `masks` is `[K, T, F]`.
pub fn extract_speaker(
    y: ArrayView3<Complex64>,
    masks: ArrayView3<f64>,
    k: usize,
    ref_channel: usize,
) -> Extraction {
    let (t, f, _) = y.dim();
    let mask = masks.index_axis(ndarray::Axis(0), k);
    if mask.iter().all(|&m| m == 0.0) {
        return Extraction {
            stft: Array2::zeros((t, f)),
            zeroed_bins: f,
            fallback_bins: 0,
            empty_mask: true,
        };
    }
    let per_f = par::map_range(f, |fi| {
        let cov = estimate_covariances_at(y, mask, fi);
        let w = mvdr_weights(&cov, ref_channel);
        let col: Vec<Complex64> = match &w {
            Some(w) => (0..t)
                .map(|ti| w.iter().enumerate().map(|(ci, wc)| wc.conj() * y[[ti, fi, ci]]).sum())
                .collect(),
            None => vec![Complex64::new(0.0, 0.0); t],
        };
        (col, w.is_none(), cov.fallback)
    });
    let mut stft = Array2::zeros((t, f));
    let mut zeroed_bins = 0;
    let mut fallback_bins = 0;
    for (fi, (col, zeroed, fb)) in per_f.into_iter().enumerate() {
        for (ti, v) in col.into_iter().enumerate() {
            stft[[ti, fi]] = v;
        }
        zeroed_bins += usize::from(zeroed);
        fallback_bins += usize::from(fb);
    }
    Extraction {
        stft,
        zeroed_bins,
        fallback_bins,
        empty_mask: false,
    }
}

//! Speaker masks from the loose model's joint posterior.
//!
//! The location with the most overall mass is treated as noise and dropped.
//! The reverse coupling `beta_klf = p(k | l, f)` is estimated from the rest,
//! thresholded, and used to collapse `delta` over locations.

use ndarray::{s, Array3, Array4, ArrayView4, Axis};

use crate::archive::NamedTensor;
use crate::par;

pub const DEFAULT_TAU: f64 = 0.55;

#[derive(Debug, Clone)]
pub struct MaskResult {
    /// `[K, T, F]`.
    pub masks: Array3<f64>,
    /// `[K, L-1, F]` over the surviving locations.
    pub beta: Array3<f64>,
    pub beta_thresholded: Array3<f64>,
    /// Index of the removed location in the original `L` axis.
    pub noise_location: usize,
    pub tau: f64,
    /// `(l, f)` columns with no mass, set to uniform over speakers.
    pub empty_columns: usize,
    /// Speakers with posterior mass whose thresholded beta is zero everywhere.
    pub lost_speakers: Vec<usize>,
}

impl MaskResult {
    pub fn to_entries(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor::f64("masks", self.masks.clone()),
            NamedTensor::f64("beta", self.beta.clone()),
            NamedTensor::f64("beta_thresholded", self.beta_thresholded.clone()),
            NamedTensor::f64("noise_location", ndarray::arr0(self.noise_location as f64)),
        ]
    }
}

/// `argmax_l sum_{k,t,f} delta_kltf`, lowest index on ties.
pub fn identify_noise_location(delta: ArrayView4<f64>) -> usize {
    let l = delta.dim().1;
    let mut best = 0;
    let mut best_mass = f64::NEG_INFINITY;
    for li in 0..l {
        let m = delta.slice(s![.., li, .., ..]).sum();
        if m > best_mass {
            best = li;
            best_mass = m;
        }
    }
    best
}

/// `delta` with location `l` removed.
pub fn remove_location(delta: ArrayView4<f64>, l: usize) -> Array4<f64> {
    let keep: Vec<usize> = (0..delta.dim().1).filter(|&i| i != l).collect();
    delta.select(Axis(1), &keep)
}

/// `beta_klf = sum_t delta_kltf / sum_t sum_k delta_kltf`. Returns beta and
/// the number of empty columns (set to uniform).
pub fn estimate_beta(delta_reduced: ArrayView4<f64>) -> (Array3<f64>, usize) {
    let (k, l, _, f) = delta_reduced.dim();
    let sums = delta_reduced.sum_axis(Axis(2));
    let mut beta = Array3::zeros((k, l, f));
    let mut empty = 0;
    for li in 0..l {
        for fi in 0..f {
            let den: f64 = (0..k).map(|ki| sums[[ki, li, fi]]).sum();
            if den > 0.0 {
                for ki in 0..k {
                    beta[[ki, li, fi]] = sums[[ki, li, fi]] / den;
                }
            } else {
                empty += 1;
                for ki in 0..k {
                    beta[[ki, li, fi]] = 1.0 / k as f64;
                }
            }
        }
    }
    (beta, empty)
}

/// Entries below `tau` become zero; the rest are kept.
pub fn threshold_beta(beta: &Array3<f64>, tau: f64) -> Array3<f64> {
    beta.mapv(|b| if b >= tau { b } else { 0.0 })
}

pub fn extract_masks(delta: ArrayView4<f64>, tau: f64) -> MaskResult {
    let (k, l, t, f) = delta.dim();
    let noise_location = identify_noise_location(delta);
    let reduced = remove_location(delta, noise_location);
    let (beta, empty_columns) = estimate_beta(reduced.view());
    let bt = threshold_beta(&beta, tau);
    let lr = l - 1;
    let per_f = par::map_range(f, |fi| {
        let mut m = vec![0.0; k * t];
        for ki in 0..k {
            for li in 0..lr {
                let b = bt[[ki, li, fi]];
                if b == 0.0 {
                    continue;
                }
                for ti in 0..t {
                    m[ki * t + ti] += b * reduced[[ki, li, ti, fi]];
                }
            }
        }
        m
    });
    let masks = Array3::from_shape_fn((k, t, f), |(ki, ti, fi)| per_f[fi][ki * t + ti].clamp(0.0, 1.0));
    let lost_speakers = (0..k)
        .filter(|&ki| {
            let mass = delta.slice(s![ki, .., .., ..]).sum();
            mass > 0.0 && bt.slice(s![ki, .., ..]).iter().all(|&b| b == 0.0)
        })
        .collect();
    MaskResult {
        masks,
        beta,
        beta_thresholded: bt,
        noise_location,
        tau,
        empty_columns,
        lost_speakers,
    }
}

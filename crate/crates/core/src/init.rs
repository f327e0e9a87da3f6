//! Initial posteriors for the EM fits.
//!
//! Spectral side: energy VAD, cosine k-means with `2K` classes on speech-frame
//! embeddings, a short vMF mixture fit, greedy fusion down to `K`, softening,
//! and extension of labels across non-speech frames. Spatial side: per-frequency
//! k-means on phase-normalized observations, greedy permutation alignment from
//! low to high frequencies, and a short cACGMM warm-up.

use ndarray::{s, Array2, Array3, Array4, ArrayView1, ArrayView2, Ix2, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{Archive, NamedTensor};
use crate::distributions::vmf::{vmf_m_step, VmfParams};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, Metric};
use crate::obs::ObservationSet;
use crate::par;
use crate::tight::cacgmm_fit;

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    /// Percentile of log energy inside the sliding window used as noise
    /// floor; 0 is the sliding minimum.
    pub vad_percentile: f64,
    /// Nats above the floor for a frame to count as speech.
    pub vad_margin: f64,
    pub vad_window_s: f64,
    pub kmeans_restarts: usize,
    pub vmf_iters: usize,
    pub spatial_warmup_iters: usize,
    /// Weight on the hard label when softening one-hot rows.
    pub soft_weight: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            vad_percentile: 0.0,
            vad_margin: 3.0,
            vad_window_s: 1.5,
            kmeans_restarts: 5,
            vmf_iters: 10,
            spatial_warmup_iters: 30,
            soft_weight: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitPosterior {
    /// `[K, T]`.
    pub z_spec0: Array2<f64>,
    /// `[L, T, F]`.
    pub z_spat0: Array3<f64>,
}

impl InitPosterior {
    pub fn delta0(&self) -> Array4<f64> {
        build_delta0(self.z_spec0.view(), self.z_spat0.view())
    }

    /// Initial posterior for the tight model: `z_spec0` repeated over frequency.
    pub fn tight_posterior(&self, freqs: usize) -> Array3<f64> {
        let (k, t) = self.z_spec0.dim();
        Array3::from_shape_fn((k, t, freqs), |(ki, ti, _)| self.z_spec0[[ki, ti]])
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor::f64("z_spec0", self.z_spec0.clone()),
            NamedTensor::f64("z_spat0", self.z_spat0.clone()),
        ]
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        Ok(InitPosterior {
            z_spec0: a.f64_dim::<Ix2>("z_spec0")?,
            z_spat0: a.f64_dim::<Ix3>("z_spat0")?,
        })
    }
}

/// Speech iff the frame exceeds the sliding-window noise floor by `vad_margin`.
pub fn energy_vad(log_energy: &[f64], frame_rate: f64, cfg: &InitConfig) -> Vec<bool> {
    let t = log_energy.len();
    let half = ((cfg.vad_window_s * frame_rate) / 2.0).round().max(0.0) as usize;
    (0..t)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            let mut w: Vec<f64> = log_energy[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let idx = ((cfg.vad_percentile.clamp(0.0, 1.0)) * (w.len() - 1) as f64).round() as usize;
            log_energy[i] > w[idx] + cfg.vad_margin
        })
        .collect()
}

/// `soft * onehot + (1 - soft) / K`.
fn soften(labels: &[usize], k: usize, soft: f64) -> Array2<f64> {
    let mut z = Array2::from_elem((k, labels.len()), (1.0 - soft) / k as f64);
    for (t, &l) in labels.iter().enumerate() {
        z[[l, t]] += soft;
    }
    z
}

/// Copies each non-speech column from the nearest speech column (earlier on ties).
fn extend_across_pauses(z: &mut Array2<f64>, speech: &[bool]) {
    let t = speech.len();
    let idx: Vec<usize> = (0..t).filter(|&i| speech[i]).collect();
    if idx.is_empty() {
        return;
    }
    for i in 0..t {
        if speech[i] {
            continue;
        }
        let pos = idx.partition_point(|&s| s < i);
        let src = match (pos.checked_sub(1).map(|p| idx[p]), idx.get(pos).copied()) {
            (Some(b), Some(a)) if a - i < i - b => a,
            (Some(b), _) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("idx is non-empty"),
        };
        let col = z.column(src).to_owned();
        z.column_mut(i).assign(&col);
    }
}

fn vmf_e_step(e: ArrayView2<f64>, p: &VmfParams, weights: &[f64]) -> Result<Array2<f64>> {
    let ll = p.log_likelihoods(e)?;
    let (k, t) = ll.dim();
    let mut g = Array2::zeros((k, t));
    for ti in 0..t {
        let a: Vec<f64> = (0..k).map(|ki| weights[ki].ln() + ll[[ki, ti]]).collect();
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a.iter().map(|v| (v - m).exp()).sum();
        for ki in 0..k {
            g[[ki, ti]] = (a[ki] - m).exp() / s;
        }
    }
    Ok(g)
}

fn mixture_weights(g: &Array2<f64>) -> Vec<f64> {
    let t = g.ncols() as f64;
    g.rows().into_iter().map(|r| r.sum() / t).collect()
}

/// Hard labels over speech frames: k-means with `2K` classes, vMF mixture
/// refinement and greedy fusion to `K`.
fn cluster_embeddings(e: ArrayView2<f64>, k: usize, cfg: &InitConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = e.nrows();
    let classes = (2 * k).min(n);
    let km = kmeans(e, classes, Metric::Cosine, cfg.kmeans_restarts, rng);
    let mut used: Vec<usize> = km.labels.clone();
    used.sort_unstable();
    used.dedup();
    if used.len() < k {
        return Err(Error::TooFewClusters {
            achievable: used.len(),
            requested: k,
        });
    }
    let j = used.len();
    let mut g = Array2::zeros((j, n));
    for (t, &l) in km.labels.iter().enumerate() {
        let pos = used.binary_search(&l).expect("label present");
        g[[pos, t]] = 1.0;
    }
    let mut params = VmfParams {
        mu: km.centers.select(ndarray::Axis(0), &used),
        kappa: ndarray::Array1::zeros(j),
    };
    for mut row in params.mu.rows_mut() {
        let nr = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / nr);
    }
    for _ in 0..cfg.vmf_iters {
        params = vmf_m_step(e, g.view(), &params).params;
        g = vmf_e_step(e, &params, &mixture_weights(&g))?;
    }
    params = vmf_m_step(e, g.view(), &params).params;
    while g.nrows() > k {
        let m = g.nrows();
        let mut best = (0, 1, f64::NEG_INFINITY);
        for a in 0..m {
            for b in a + 1..m {
                let c = params.mu.row(a).dot(&params.mu.row(b));
                if c > best.2 {
                    best = (a, b, c);
                }
            }
        }
        let (a, b, _) = best;
        let merged = &g.row(a) + &g.row(b);
        g.row_mut(a).assign(&merged);
        let keep: Vec<usize> = (0..m).filter(|&i| i != b).collect();
        g = g.select(ndarray::Axis(0), &keep);
        let prev = VmfParams {
            mu: params.mu.select(ndarray::Axis(0), &keep),
            kappa: params.kappa.select(ndarray::Axis(0), &keep),
        };
        params = vmf_m_step(e, g.view(), &prev).params;
    }
    let g = vmf_e_step(e, &params, &mixture_weights(&g))?;
    Ok((0..n)
        .map(|t| argmax(g.column(t)))
        .collect())
}

fn argmax(v: ArrayView1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

/// `[K, T]` spectral initialization.
pub fn spectral_init(e: ArrayView2<f64>, speech: &[bool], k: usize, cfg: &InitConfig) -> Result<Array2<f64>> {
    let t = e.nrows();
    if k == 1 {
        return Ok(Array2::ones((1, t)));
    }
    let idx: Vec<usize> = (0..t).filter(|&i| speech[i]).collect();
    if idx.len() < k {
        return Err(Error::TooFewClusters {
            achievable: idx.len(),
            requested: k,
        });
    }
    let sub = e.select(ndarray::Axis(0), &idx);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = cluster_embeddings(sub.view(), k, cfg, &mut rng)?;
    let mut full = vec![0; t];
    for (&i, &l) in idx.iter().zip(&labels) {
        full[i] = l;
    }
    let mut z = soften(&full, k, cfg.soft_weight);
    extend_across_pauses(&mut z, speech);
    Ok(z)
}

/// `[K, T]` initialization from 0/1 oracle activity. Overlapped frames split
/// the hard weight; silent frames copy the nearest active frame.
pub fn oracle_spectral_init(activity: ArrayView2<f64>, soft: f64) -> Array2<f64> {
    let (k, t) = activity.dim();
    let mut z = Array2::from_elem((k, t), (1.0 - soft) / k as f64);
    let mut active = vec![false; t];
    for ti in 0..t {
        let n: f64 = activity.column(ti).iter().filter(|&&a| a > 0.5).count() as f64;
        if n == 0.0 {
            continue;
        }
        active[ti] = true;
        for ki in 0..k {
            if activity[[ki, ti]] > 0.5 {
                z[[ki, ti]] += soft / n;
            }
        }
    }
    if active.iter().any(|&a| a) {
        extend_across_pauses(&mut z, &active);
    } else {
        z.fill(1.0 / k as f64);
    }
    z
}

/// Phase-normalized real features `[T, 2C]` at one frequency.
fn spatial_features(obs: &ObservationSet, f: usize) -> Array2<f64> {
    let (t, _, c) = obs.y.dim();
    let mut x = Array2::zeros((t, 2 * c));
    for ti in 0..t {
        let y0 = obs.y[[ti, f, 0]];
        let rot = if y0.norm() > 0.0 { y0.conj() / y0.norm() } else { num_complex::Complex64::new(1.0, 0.0) };
        for ci in 0..c {
            let v = obs.y[[ti, f, ci]] * rot;
            x[[ti, 2 * ci]] = v.re;
            x[[ti, 2 * ci + 1]] = v.im;
        }
    }
    x
}

fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Greedy permutation of `profile` rows onto `reference` rows by correlation.
/// Returns `perm` with `perm[class] = aligned index`.
fn greedy_alignment(reference: &Array2<f64>, profile: &Array2<f64>) -> Vec<usize> {
    let l = reference.nrows();
    let mut pairs = Vec::with_capacity(l * l);
    for r in 0..l {
        for c in 0..l {
            pairs.push((pearson(reference.row(r), profile.row(c)), r, c));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; l];
    let mut ref_used = vec![false; l];
    for (_, r, c) in pairs {
        if perm[c] == usize::MAX && !ref_used[r] {
            perm[c] = r;
            ref_used[r] = true;
        }
    }
    perm
}

/// Aligned hard spatial labels `[F][T]` before the cACGMM warm-up.
pub fn spatial_labels(obs: &ObservationSet, l: usize, cfg: &InitConfig) -> Vec<Vec<usize>> {
    let (t, f, _) = obs.y.dim();
    let raw: Vec<Vec<usize>> = par::map_range(f, |fi| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fi as u64));
        let x = spatial_features(obs, fi);
        kmeans(x.view(), l.min(t), Metric::Euclidean, cfg.kmeans_restarts, &mut rng).labels
    });
    let mut reference = Array2::<f64>::zeros((l, t));
    let mut aligned = Vec::with_capacity(f);
    for labels in raw {
        let mut profile = Array2::<f64>::zeros((l, t));
        for (ti, &c) in labels.iter().enumerate() {
            profile[[c, ti]] = 1.0;
        }
        let perm = if reference.sum() == 0.0 {
            (0..l).collect()
        } else {
            greedy_alignment(&reference, &profile)
        };
        let mapped: Vec<usize> = labels.iter().map(|&c| perm[c]).collect();
        for (ti, &c) in mapped.iter().enumerate() {
            reference[[c, ti]] += 1.0;
        }
        aligned.push(mapped);
    }
    aligned
}

/// `[L, T, F]` spatial initialization.
pub fn spatial_init(obs: &ObservationSet, l: usize, cfg: &InitConfig) -> Result<Array3<f64>> {
    let (t, f, _) = obs.y.dim();
    if l == 1 {
        return Ok(Array3::ones((1, t, f)));
    }
    if t * f < l {
        return Err(Error::InvalidArgument(format!("T*F = {} is below L = {l}", t * f)));
    }
    let labels = spatial_labels(obs, l, cfg);
    let soft = cfg.soft_weight;
    let mut z = Array3::from_elem((l, t, f), (1.0 - soft) / l as f64);
    for (fi, lab) in labels.iter().enumerate() {
        for (ti, &c) in lab.iter().enumerate() {
            z[[c, ti, fi]] += soft;
        }
    }
    if cfg.spatial_warmup_iters == 0 {
        return Ok(z);
    }
    Ok(cacgmm_fit(obs, z.view(), cfg.spatial_warmup_iters)?.posterior)
}

/// `delta0[k, l, t, f] = z_spec0[k, t] * z_spat0[l, t, f]`.
pub fn build_delta0(z_spec0: ArrayView2<f64>, z_spat0: ndarray::ArrayView3<f64>) -> Array4<f64> {
    let (k, t) = z_spec0.dim();
    let (l, t2, f) = z_spat0.dim();
    assert_eq!(t, t2, "build_delta0: frame counts differ");
    let mut d = Array4::from_shape_fn((k, l, t, f), |(ki, li, ti, fi)| z_spec0[[ki, ti]] * z_spat0[[li, ti, fi]]);
    for ti in 0..t {
        for fi in 0..f {
            let sum = d.slice(s![.., .., ti, fi]).sum();
            if sum > 0.0 {
                d.slice_mut(s![.., .., ti, fi]).mapv_inplace(|v| v / sum);
            }
        }
    }
    d
}

/// Full initialization from observations and raw-signal log energy.
pub fn initialize(
    obs: &ObservationSet,
    log_energy: &[f64],
    k: usize,
    l: usize,
    oracle_activity: Option<ArrayView2<f64>>,
    cfg: &InitConfig,
) -> Result<InitPosterior> {
    let z_spec0 = match oracle_activity {
        Some(a) => oracle_spectral_init(a, cfg.soft_weight),
        None => {
            let frame_rate = obs.sample_rate / obs.stft.frame_shift as f64;
            let speech = energy_vad(log_energy, frame_rate, cfg);
            spectral_init(obs.e.view(), &speech, k, cfg)?
        }
    };
    let z_spat0 = spatial_init(obs, l, cfg)?;
    Ok(InitPosterior { z_spec0, z_spat0 })
}

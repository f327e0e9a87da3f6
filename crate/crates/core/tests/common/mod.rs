#![allow(dead_code)]

use diarsep::distributions::{CacgParams, VmfParams};
use diarsep::linalg::HermMat;
use diarsep::loose::LooseParams;
use diarsep::obs::ObservationSet;
use diarsep::tight::TightParams;
use ndarray::{Array1, Array2, Array3, Array4};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn cplx(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn unit_complex(c: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..c).map(|_| cplx(rng)).collect();
    let n: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn unit_real(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.dot(&v).sqrt();
    v / n
}

pub fn simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_pd(c: usize, rng: &mut ChaCha8Rng) -> HermMat {
    let mut b = HermMat::zeros(c);
    for _ in 0..c + 1 {
        b.add_assign(&HermMat::outer(&unit_complex(c, rng)).scaled(rng.random::<f64>() * 3.0));
    }
    b.add_diagonal(0.05);
    b
}

pub fn random_obs(t: usize, f: usize, c: usize, d: usize, rng: &mut ChaCha8Rng) -> ObservationSet {
    let mut y = Array3::zeros((t, f, c));
    for ti in 0..t {
        for fi in 0..f {
            for (ci, v) in unit_complex(c, rng).into_iter().enumerate() {
                y[[ti, fi, ci]] = v;
            }
        }
    }
    let mut e = Array2::zeros((t, d));
    for ti in 0..t {
        e.row_mut(ti).assign(&unit_real(d, rng));
    }
    ObservationSet {
        y,
        e,
        degenerate: Array2::from_elem((t, f), false),
        sample_rate: 8000.0,
        stft: Default::default(),
    }
}

pub fn random_vmf(k: usize, d: usize, rng: &mut ChaCha8Rng) -> VmfParams {
    let mut mu = Array2::zeros((k, d));
    for ki in 0..k {
        mu.row_mut(ki).assign(&unit_real(d, rng));
    }
    VmfParams {
        mu,
        kappa: (0..k).map(|_| 0.5 + 4.0 * rng.random::<f64>()).collect(),
    }
}

pub fn random_cacg(l: usize, f: usize, c: usize, rng: &mut ChaCha8Rng) -> CacgParams {
    let mats = (0..l * f).map(|_| random_pd(c, rng)).collect();
    CacgParams::from_matrices(l, f, c, mats).unwrap()
}

pub fn random_loose_params(k: usize, l: usize, f: usize, c: usize, d: usize, rng: &mut ChaCha8Rng) -> LooseParams {
    let mut alpha = Array3::zeros((k, l, f));
    for ki in 0..k {
        for fi in 0..f {
            for (li, v) in simplex(l, rng).into_iter().enumerate() {
                alpha[[ki, li, fi]] = v;
            }
        }
    }
    LooseParams {
        vmf: random_vmf(k, d, rng),
        cacg: random_cacg(l, f, c, rng),
        pi: Array1::from(simplex(k, rng)),
        alpha,
    }
}

pub fn random_tight_params(k: usize, t: usize, f: usize, c: usize, d: usize, rng: &mut ChaCha8Rng) -> TightParams {
    let mut pi = Array2::zeros((k, t));
    for ti in 0..t {
        for (ki, v) in simplex(k, rng).into_iter().enumerate() {
            pi[[ki, ti]] = v;
        }
    }
    TightParams {
        vmf: Some(random_vmf(k, d, rng)),
        cacg: random_cacg(k, f, c, rng),
        pi,
    }
}

/// Random joint posterior `[K, L, T, F]`, normalized over `(k, l)`.
pub fn random_delta(k: usize, l: usize, t: usize, f: usize, rng: &mut ChaCha8Rng) -> Array4<f64> {
    let mut d = Array4::zeros((k, l, t, f));
    for ti in 0..t {
        for fi in 0..f {
            let w = simplex(k * l, rng);
            for ki in 0..k {
                for li in 0..l {
                    d[[ki, li, ti, fi]] = w[ki * l + li];
                }
            }
        }
    }
    d
}

/// Random posterior `[K, T, F]`, normalized over `k`.
pub fn random_posterior(k: usize, t: usize, f: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let mut p = Array3::zeros((k, t, f));
    for ti in 0..t {
        for fi in 0..f {
            for (ki, v) in simplex(k, rng).into_iter().enumerate() {
                p[[ki, ti, fi]] = v;
            }
        }
    }
    p
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn dense_log_cacg(obs: &ObservationSet, p: &CacgParams, l: usize, t: usize, f: usize) -> f64 {
    let y: Vec<Complex64> = obs.y.slice(ndarray::s![t, f, ..]).to_vec();
    diarsep::distributions::cacg_log_pdf(&y, p.b(l, f)).unwrap()
}

fn dense_log_vmf(obs: &ObservationSet, p: &VmfParams, k: usize, t: usize) -> f64 {
    diarsep::distributions::vmf_log_pdf(obs.e.row(t), p.mu.row(k), p.kappa[k]).unwrap()
}

/// Joint posterior by enumerating `(z_kt, z_l1t, ..., z_lFt)` for every frame,
/// plus the log-likelihood summed over frames.
pub fn brute_force_loose(obs: &ObservationSet, p: &LooseParams) -> (Array4<f64>, f64) {
    let (t, f, _) = obs.y.dim();
    let (k, l) = (p.speakers(), p.locations());
    let mut delta = Array4::zeros((k, l, t, f));
    let mut total = 0.0;
    let configs = l.pow(f as u32);
    for ti in 0..t {
        let mut logs = Vec::with_capacity(k * configs);
        let mut labels = Vec::with_capacity(k * configs);
        for ki in 0..k {
            for cfg in 0..configs {
                let mut locs = Vec::with_capacity(f);
                let mut rest = cfg;
                for _ in 0..f {
                    locs.push(rest % l);
                    rest /= l;
                }
                let mut v = p.pi[ki].ln() + dense_log_vmf(obs, &p.vmf, ki, ti);
                for (fi, &li) in locs.iter().enumerate() {
                    v += p.alpha[[ki, li, fi]].ln() + dense_log_cacg(obs, &p.cacg, li, ti, fi);
                }
                logs.push(v);
                labels.push((ki, locs));
            }
        }
        let norm = lse(&logs);
        total += norm;
        for (v, (ki, locs)) in logs.iter().zip(&labels) {
            let w = (v - norm).exp();
            for (fi, &li) in locs.iter().enumerate() {
                delta[[*ki, li, ti, fi]] += w;
            }
        }
    }
    (delta, total)
}

/// Per-bin Bayes rule for the tight model, plus its log-likelihood.
pub fn brute_force_tight(obs: &ObservationSet, p: &TightParams) -> (Array3<f64>, f64) {
    let (t, f, _) = obs.y.dim();
    let k = p.components();
    let mut post = Array3::zeros((k, t, f));
    let mut total = 0.0;
    for ti in 0..t {
        for fi in 0..f {
            let mut w = Vec::with_capacity(k);
            for ki in 0..k {
                let mut v = p.pi[[ki, ti]] * dense_log_cacg(obs, &p.cacg, ki, ti, fi).exp();
                if let Some(vmf) = &p.vmf {
                    v *= dense_log_vmf(obs, vmf, ki, ti).exp();
                }
                w.push(v);
            }
            let s: f64 = w.iter().sum();
            total += s.ln();
            for ki in 0..k {
                post[[ki, ti, fi]] = w[ki] / s;
            }
        }
    }
    (post, total)
}

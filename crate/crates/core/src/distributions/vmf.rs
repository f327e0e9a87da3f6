//! von Mises-Fisher distribution on the real unit sphere `S^(D-1)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::bessel::log_bessel_i;
use crate::error::{Error, Result};

/// Upper bound on the concentration.
pub const KAPPA_MAX: f64 = 5.0e3;

/// Relative weight floor below which a component is left untouched.
pub const SPECTRAL_WEIGHT_FLOOR: f64 = 1e-8;

/// `log C_D(kappa)`, the log normalizer of the vMF density in `D` dimensions.
pub fn vmf_log_normalizer(d: usize, kappa: f64) -> f64 {
    let half_d = d as f64 / 2.0;
    if kappa == 0.0 {
        // 1 / surface area of the unit sphere.
        return ln_gamma(half_d) - 2f64.ln() - half_d * std::f64::consts::PI.ln();
    }
    let nu = half_d - 1.0;
    nu * kappa.ln() - half_d * (2.0 * std::f64::consts::PI).ln() - log_bessel_i(nu, kappa)
}

/// `log C_D(kappa) + kappa mu^T e`.
pub fn vmf_log_pdf(e: ArrayView1<f64>, mu: ArrayView1<f64>, kappa: f64) -> Result<f64> {
    if kappa > KAPPA_MAX || kappa.is_nan() {
        return Err(Error::KappaOutOfRange {
            kappa,
            max: KAPPA_MAX,
        });
    }
    if kappa < 0.0 {
        return Err(Error::InvalidArgument(format!("negative kappa {kappa}")));
    }
    Ok(vmf_log_normalizer(e.len(), kappa) + kappa * mu.dot(&e))
}

/// Mixture of `K` vMF components: `mu` is `[K, D]`, `kappa` is `[K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub mu: Array2<f64>,
    pub kappa: Array1<f64>,
}

impl VmfParams {
    pub fn components(&self) -> usize {
        self.kappa.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    /// `[K, T]` table of `log p(e_t | k)`.
    pub fn log_likelihoods(&self, e: ArrayView2<f64>) -> Result<Array2<f64>> {
        let k = self.components();
        for &kap in self.kappa.iter() {
            if !(0.0..=KAPPA_MAX).contains(&kap) {
                return Err(Error::KappaOutOfRange {
                    kappa: kap,
                    max: KAPPA_MAX,
                });
            }
        }
        let norms: Vec<f64> = self
            .kappa
            .iter()
            .map(|&kap| vmf_log_normalizer(self.dim(), kap))
            .collect();
        let dots = self.mu.dot(&e.t());
        Ok(Array2::from_shape_fn((k, e.nrows()), |(ki, t)| {
            norms[ki] + self.kappa[ki] * dots[[ki, t]]
        }))
    }

    pub fn check(&self) -> Result<()> {
        for (k, row) in self.mu.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("mu[{k}] has norm {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VmfUpdate {
    pub params: VmfParams,
    /// Components whose total weight fell below the floor and kept `prev`.
    pub dormant: Vec<bool>,
}

/// Banerjee estimator. `e` is `[T, D]`, `weights` is `[K, T]`.
///
/// `mu_k = r_k / |r_k|`, `kappa_k = rbar (D - rbar^2) / (1 - rbar^2)` with
/// `r_k = sum_t w_kt e_t` and `rbar = |r_k| / sum_t w_kt`, clamped to
/// `[0, KAPPA_MAX]`.
pub fn vmf_m_step(e: ArrayView2<f64>, weights: ArrayView2<f64>, prev: &VmfParams) -> VmfUpdate {
    let (t, d) = e.dim();
    let k = weights.nrows();
    assert_eq!(weights.ncols(), t, "vmf_m_step: weight/frame count mismatch");
    assert_eq!(prev.components(), k, "vmf_m_step: component count mismatch");
    let floor = SPECTRAL_WEIGHT_FLOOR * t as f64;
    let resultants = weights.dot(&e);
    let mut params = prev.clone();
    let mut dormant = vec![false; k];
    for ki in 0..k {
        let total: f64 = weights.row(ki).sum();
        let r = resultants.row(ki);
        let norm = r.dot(&r).sqrt();
        if total < floor || norm <= 0.0 || !norm.is_finite() {
            dormant[ki] = true;
            continue;
        }
        params.mu.row_mut(ki).assign(&(&r / norm));
        let rbar = (norm / total).min(1.0);
        let df = d as f64;
        let kappa = if rbar >= 1.0 - 1e-12 {
            KAPPA_MAX
        } else {
            rbar * (df - rbar * rbar) / (1.0 - rbar * rbar)
        };
        params.kappa[ki] = kappa.clamp(0.0, KAPPA_MAX);
    }
    VmfUpdate { params, dormant }
}

/// Wood's rejection sampler. Returns `[n, D]` unit vectors.
pub fn sample_vmf<R: Rng + ?Sized>(mu: ArrayView1<f64>, kappa: f64, n: usize, rng: &mut R) -> Array2<f64> {
    let d = mu.len();
    let mut out = Array2::zeros((n, d));
    if n == 0 {
        return out;
    }
    let df = d as f64;
    let dm1 = df - 1.0;
    // b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), rearranged to avoid cancellation.
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters");
    for i in 0..n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        // Uniform direction orthogonal to mu.
        let v = loop {
            let g: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let proj = g.dot(&mu);
            let v = &g - &(&mu * proj);
            let nv = v.dot(&v).sqrt();
            if nv > 1e-12 {
                break v / nv;
            }
        };
        let s = (1.0 - w * w).max(0.0).sqrt();
        let x = &mu * w + &v * s;
        let nx = x.dot(&x).sqrt();
        out.row_mut(i).assign(&(x / nx));
    }
    out
}

/// Uniformly distributed unit vector in `D` dimensions.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let g: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = g.dot(&g).sqrt();
        if n > 1e-12 {
            return g / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_case_d3() {
        let e = array![0.0, 0.6, 0.8];
        let mu = array![1.0, 0.0, 0.0];
        let v = vmf_log_pdf(e.view(), mu.view(), 0.0).unwrap();
        assert!((v - (1.0 / (4.0 * std::f64::consts::PI)).ln()).abs() < 1e-12);
        assert!((v + 2.5310).abs() < 1e-4);
    }

    #[test]
    fn closed_form_d3() {
        // C_3(k) = k / (4 pi sinh k)
        for &kappa in &[0.1f64, 1.0, 5.0, 40.0, 300.0] {
            let want = (kappa / (4.0 * std::f64::consts::PI * kappa.sinh())).ln();
            assert!((vmf_log_normalizer(3, kappa) - want).abs() < 1e-11, "kappa {kappa}");
        }
        let mu = array![0.0, 0.0, 1.0];
        let v = vmf_log_pdf(mu.view(), mu.view(), 1.0).unwrap();
        let want = (1.0 / (4.0 * std::f64::consts::PI * 1f64.sinh())).ln() + 1.0;
        assert!((v - want).abs() < 1e-12);
        assert!((v + 1.6925).abs() < 1e-4);
    }

    #[test]
    fn normalizer_continuous_at_zero() {
        for d in [3, 16, 64, 256] {
            let at0 = vmf_log_normalizer(d, 0.0);
            let near = vmf_log_normalizer(d, 1e-9);
            assert!((at0 - near).abs() < 1e-6, "d={d}");
        }
    }

    #[test]
    fn kappa_bound_enforced() {
        let mu = array![1.0, 0.0, 0.0];
        assert!(matches!(
            vmf_log_pdf(mu.view(), mu.view(), KAPPA_MAX * 1.01),
            Err(Error::KappaOutOfRange { .. })
        ));
    }

    #[test]
    fn rotation_about_mu_is_invariant() {
        let mu = array![0.0, 0.0, 1.0];
        let e = array![0.6, 0.0, 0.8];
        let base = vmf_log_pdf(e.view(), mu.view(), 3.0).unwrap();
        for k in 1..8 {
            let th = k as f64 * 0.7;
            let r = array![0.6 * th.cos(), 0.6 * th.sin(), 0.8];
            assert!((vmf_log_pdf(r.view(), mu.view(), 3.0).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_concentration() {
        let e = Array2::from_shape_fn((20, 4), |(_, j)| if j == 2 { 1.0 } else { 0.0 });
        let mut w = Array2::zeros((2, 20));
        w.row_mut(0).fill(1.0);
        let prev = VmfParams {
            mu: Array2::from_shape_fn((2, 4), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
            kappa: array![1.0, 2.0],
        };
        let up = vmf_m_step(e.view(), w.view(), &prev);
        assert_eq!(up.params.mu.row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(up.params.kappa[0], KAPPA_MAX);
        assert!(up.dormant[1] && !up.dormant[0]);
        assert_eq!(up.params.mu.row(1), prev.mu.row(1));
        assert_eq!(up.params.kappa[1], 2.0);
    }

    #[test]
    fn sample_count_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mu = array![1.0, 0.0];
        assert_eq!(sample_vmf(mu.view(), 3.0, 0, &mut rng).dim(), (0, 2));
    }

    #[test]
    fn uniform_sampling_has_small_resultant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mu = Array1::zeros(16);
        mu[0] = 1.0;
        let x = sample_vmf(mu.view(), 0.0, 10_000, &mut rng);
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(mean.dot(&mean).sqrt() < 0.05);
    }

    #[test]
    fn concentrated_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mu = random_unit_vector(8, &mut rng);
        let x = sample_vmf(mu.view(), 200.0, 1000, &mut rng);
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let dir = &mean / mean.dot(&mean).sqrt();
        assert!(dir.dot(&mu) > 0.995);
        for row in x.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integrates_to_one_d3() {
        // Uniform sphere samples: E[p(e)] * area = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mu = array![0.0, 1.0, 0.0];
        let n = 100_000;
        let area = 4.0 * std::f64::consts::PI;
        for &kappa in &[0.5, 5.0] {
            let mut acc = 0.0;
            for _ in 0..n {
                let e = random_unit_vector(3, &mut rng);
                acc += vmf_log_pdf(e.view(), mu.view(), kappa).unwrap().exp();
            }
            let integral = acc / n as f64 * area;
            assert!((integral - 1.0).abs() < 0.02, "kappa {kappa}: {integral}");
        }
    }

    #[test]
    fn estimator_recovers_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mu = random_unit_vector(64, &mut rng);
        let x = sample_vmf(mu.view(), 20.0, 10_000, &mut rng);
        let w = Array2::ones((1, 10_000));
        let prev = VmfParams {
            mu: Array2::from_shape_fn((1, 64), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
            kappa: array![1.0],
        };
        let up = vmf_m_step(x.view(), w.view(), &prev);
        assert!((up.params.kappa[0] - 20.0).abs() < 2.0, "kappa {}", up.params.kappa[0]);
        assert!(up.params.mu.row(0).dot(&mu) > 0.99);
    }

    #[test]
    fn one_hot_identical_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v = random_unit_vector(5, &mut rng);
        let e = Array2::from_shape_fn((7, 5), |(_, j)| v[j]);
        let mut w = Array2::zeros((2, 7));
        w.row_mut(1).fill(1.0);
        let prev = VmfParams {
            mu: Array2::from_shape_fn((2, 5), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
            kappa: array![1.0, 1.0],
        };
        let up = vmf_m_step(e.view(), w.view(), &prev);
        for j in 0..5 {
            assert!((up.params.mu[[1, j]] - v[j]).abs() < 1e-12);
        }
    }
}

//! Tightly integrated model: one latent `z_ktf` shared by the vMF embedding
//! model and the cACG spatial model, with a time-varying prior `pi_kt`.
//!
//! With the spectral part switched off this is a plain cACGMM with a
//! time-varying prior, used for spatial initialization and as a baseline.

use ndarray::{Array1, Array2, Array3, ArrayView3, Ix1, Ix2, Ix3, Ix4};

use crate::archive::{Archive, NamedTensor};
use crate::distributions::cacg::cacg_m_step_planar;
use crate::distributions::{CacgParams, PlanarObs, VmfParams};
use crate::distributions::vmf::vmf_m_step;
use crate::em::{check_finite, freq_average, kft_to_ktf, ktf_to_kft, FitDiagnostics};
use crate::error::{Error, Result};
use crate::obs::ObservationSet;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TightConfig {
    pub iters: usize,
    /// Include the vMF embedding likelihood. `false` gives a plain cACGMM.
    pub spectral: bool,
}

impl Default for TightConfig {
    fn default() -> Self {
        TightConfig {
            iters: 100,
            spectral: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightParams {
    pub vmf: Option<VmfParams>,
    /// `K` components at `F` frequencies.
    pub cacg: CacgParams,
    /// `[K, T]`.
    pub pi: Array2<f64>,
}

impl TightParams {
    /// Starting point for the first M-step: identity covariances, zero
    /// concentrations, uniform prior.
    pub fn neutral(k: usize, t: usize, f: usize, c: usize, d: usize, spectral: bool) -> Self {
        TightParams {
            vmf: spectral.then(|| VmfParams {
                mu: Array2::from_shape_fn((k, d), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
                kappa: Array1::zeros(k),
            }),
            cacg: CacgParams::identity(k, f, c),
            pi: Array2::from_elem((k, t), 1.0 / k as f64),
        }
    }

    pub fn components(&self) -> usize {
        self.pi.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct TightState {
    pub params: TightParams,
    /// `[K, T, F]` posterior of the last E-step (the initial posterior when
    /// no E-step ran).
    pub posterior: Array3<f64>,
    /// Log-likelihood at every E-step.
    pub loglik: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone)]
pub struct TightEStep {
    /// `[K, T, F]`.
    pub posterior: Array3<f64>,
    pub loglik: f64,
    pub underflow: usize,
}

struct Model<'a> {
    obs: &'a ObservationSet,
    planar: PlanarObs,
    k: usize,
}

struct EStep {
    post: Vec<f64>,
    quad: Vec<f64>,
    loglik: f64,
    underflow: usize,
}

impl<'a> Model<'a> {
    fn new(obs: &'a ObservationSet, k: usize) -> Self {
        Model {
            obs,
            planar: PlanarObs::new(obs),
            k,
        }
    }

    fn e_step(&self, p: &TightParams) -> Result<EStep> {
        let (k, t, f) = (self.k, self.planar.t, self.planar.f);
        let lv = match &p.vmf {
            Some(v) => Some(v.log_likelihoods(self.obs.e.view())?),
            None => None,
        };
        let (lc, quad) = self.planar.log_pdfs(&p.cacg);
        let log_pi = p.pi.mapv(f64::ln);
        // Per frequency: [K][T] posteriors, log-likelihood, underflow count.
        let per_f = par::map_range(f, |fi| {
            let mut post = vec![0.0; k * t];
            let mut ll = 0.0;
            let mut under = 0;
            let mut a = vec![0.0; k];
            for ti in 0..t {
                let mut max = f64::NEG_INFINITY;
                for (ki, ak) in a.iter_mut().enumerate() {
                    let mut v = log_pi[[ki, ti]] + lc[(ki * f + fi) * t + ti];
                    if let Some(lv) = &lv {
                        v += lv[[ki, ti]];
                    }
                    *ak = v;
                    max = max.max(v);
                }
                if !max.is_finite() {
                    under += 1;
                    for ki in 0..k {
                        post[ki * t + ti] = 1.0 / k as f64;
                    }
                    continue;
                }
                let mut sum = 0.0;
                for v in a.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for ki in 0..k {
                    post[ki * t + ti] = a[ki] / sum;
                }
                ll += max + sum.ln();
            }
            (post, ll, under)
        });
        let mut post = vec![0.0; k * f * t];
        let mut loglik = 0.0;
        let mut underflow = 0;
        for (fi, (pf, ll, under)) in per_f.into_iter().enumerate() {
            for ki in 0..k {
                post[(ki * f + fi) * t..(ki * f + fi + 1) * t]
                    .copy_from_slice(&pf[ki * t..(ki + 1) * t]);
            }
            loglik += ll;
            underflow += under;
        }
        Ok(EStep {
            post,
            quad,
            loglik,
            underflow,
        })
    }

    fn m_step(
        &self,
        post: &[f64],
        quad: Option<&[f64]>,
        prev: &TightParams,
        diag: &mut FitDiagnostics,
    ) -> Result<TightParams> {
        let (k, t, f) = (self.k, self.planar.t, self.planar.f);
        let pi = freq_average(post, k, t, f);
        let vmf = match &prev.vmf {
            Some(v) => {
                let up = vmf_m_step(self.obs.e.view(), pi.view(), v);
                diag.dormant = up.dormant;
                Some(up.params)
            }
            None => None,
        };
        let up = cacg_m_step_planar(&self.planar, post, quad, &prev.cacg)?;
        diag.frozen = up.frozen.iter().filter(|&&x| x).count();
        Ok(TightParams {
            vmf,
            cacg: up.params,
            pi,
        })
    }
}

fn check_posterior(init: ArrayView3<f64>, obs: &ObservationSet) -> Result<()> {
    let (_, t, f) = init.dim();
    if (t, f) != (obs.frames(), obs.freqs()) || init.dim().0 == 0 {
        return Err(Error::Shape(format!(
            "posterior {:?} does not match T={} F={}",
            init.dim(),
            obs.frames(),
            obs.freqs()
        )));
    }
    Ok(())
}

/// Posterior `[K, T, F]` of the components under `params`.
pub fn tight_e_step(obs: &ObservationSet, params: &TightParams) -> Result<TightEStep> {
    let k = params.components();
    let m = Model::new(obs, k);
    let es = m.e_step(params)?;
    Ok(TightEStep {
        posterior: kft_to_ktf(&es.post, k, obs.frames(), obs.freqs()),
        loglik: es.loglik,
        underflow: es.underflow,
    })
}

/// Parameter update from a `[K, T, F]` posterior. `prev` supplies values for
/// dormant or frozen components and the fixed-point starting covariances.
pub fn tight_m_step(
    obs: &ObservationSet,
    posterior: ArrayView3<f64>,
    prev: &TightParams,
) -> Result<TightParams> {
    check_posterior(posterior, obs)?;
    let k = posterior.dim().0;
    let m = Model::new(obs, k);
    m.m_step(&ktf_to_kft(posterior), None, prev, &mut FitDiagnostics::default())
}

/// M-step from `init`, then `cfg.iters` rounds of E-step and M-step.
pub fn tight_fit(obs: &ObservationSet, init: ArrayView3<f64>, cfg: &TightConfig) -> Result<TightState> {
    check_posterior(init, obs)?;
    let (k, t, f) = init.dim();
    let model = Model::new(obs, k);
    let mut diag = FitDiagnostics::default();
    let start = TightParams::neutral(k, t, f, obs.channels(), obs.embed_dim(), cfg.spectral);
    let mut post = ktf_to_kft(init);
    let mut params = model.m_step(&post, None, &start, &mut diag)?;
    let mut loglik = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let es = model.e_step(&params)?;
        check_finite(es.loglik, it, "tight")?;
        loglik.push(es.loglik);
        diag.underflow += es.underflow;
        params = model.m_step(&es.post, Some(&es.quad), &params, &mut diag)?;
        post = es.post;
    }
    Ok(TightState {
        params,
        posterior: kft_to_ktf(&post, k, t, f),
        loglik,
        diagnostics: diag,
    })
}

/// Plain cACGMM with time-varying prior.
pub fn cacgmm_fit(obs: &ObservationSet, init: ArrayView3<f64>, iters: usize) -> Result<TightState> {
    tight_fit(
        obs,
        init,
        &TightConfig {
            iters,
            spectral: false,
        },
    )
}

impl TightState {
    /// Frame-level activity posteriors `[K, T]` (the frequency average).
    pub fn frame_posterior(&self) -> Array2<f64> {
        self.posterior.mean_axis(ndarray::Axis(2)).expect("F > 0")
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        if let Some(v) = &self.params.vmf {
            out.push(NamedTensor::f64("mu", v.mu.clone()));
            out.push(NamedTensor::f64("kappa", v.kappa.clone()));
        }
        out.push(NamedTensor::f64("pi", self.params.pi.clone()));
        out.push(NamedTensor::c128("B", self.params.cacg.to_array()));
        out.push(NamedTensor::f64("posterior", self.posterior.clone()));
        out.push(NamedTensor::f64("loglik", Array1::from(self.loglik.clone())));
        out
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let vmf = if a.contains("mu") {
            Some(VmfParams {
                mu: a.f64_dim::<Ix2>("mu")?,
                kappa: a.f64_dim::<Ix1>("kappa")?,
            })
        } else {
            None
        };
        Ok(TightState {
            params: TightParams {
                vmf,
                cacg: CacgParams::from_array(&a.c128_dim::<Ix4>("B")?)?,
                pi: a.f64_dim::<Ix2>("pi")?,
            },
            posterior: a.f64_dim::<Ix3>("posterior")?,
            loglik: a.f64_dim::<Ix1>("loglik")?.to_vec(),
            diagnostics: FitDiagnostics::default(),
        })
    }
}

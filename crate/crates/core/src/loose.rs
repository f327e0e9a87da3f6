//! Loosely coupled model: a frame-level speaker variable `z_kt` (vMF over
//! embeddings) and a bin-level location variable `z_ltf` (cACG over spatial
//! vectors), linked by coupling weights `alpha_klf = p(l | k, f)`.
//!
//! The joint posterior factorizes exactly as
//! `delta_kltf = gamma_kt * rho_klf|t` with
//! `rho = alpha_klf p(y_tf | l) / s_ktf` and `s_ktf = sum_l alpha_klf p(y_tf | l)`,
//! so the E-step never forms products over frequencies per `(k, l, t, f)`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView4, Ix1, Ix2, Ix3, Ix4};

use crate::archive::{Archive, NamedTensor};
use crate::distributions::cacg::cacg_m_step_planar;
use crate::distributions::vmf::vmf_m_step;
use crate::distributions::{CacgParams, PlanarObs, VmfParams};
use crate::em::{check_finite, FitDiagnostics};
use crate::error::{Error, Result};
use crate::obs::ObservationSet;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct LooseParams {
    pub vmf: VmfParams,
    /// `L` components at `F` frequencies.
    pub cacg: CacgParams,
    /// `[K]`.
    pub pi: Array1<f64>,
    /// `[K, L, F]`, each `(k, f)` row on the simplex over `l`.
    pub alpha: Array3<f64>,
}

impl LooseParams {
    pub fn neutral(k: usize, l: usize, f: usize, c: usize, d: usize) -> Self {
        LooseParams {
            vmf: VmfParams {
                mu: Array2::from_shape_fn((k, d), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
                kappa: Array1::zeros(k),
            },
            cacg: CacgParams::identity(l, f, c),
            pi: Array1::from_elem(k, 1.0 / k as f64),
            alpha: Array3::from_elem((k, l, f), 1.0 / l as f64),
        }
    }

    pub fn speakers(&self) -> usize {
        self.pi.len()
    }

    pub fn locations(&self) -> usize {
        self.cacg.components
    }
}

/// Sufficient statistics of one posterior, consumed by the M-step.
#[derive(Debug, Clone)]
pub struct LooseStats {
    /// `[K, T]`.
    pub gamma: Array2<f64>,
    /// Flat `[L][F][T]`.
    eta: Vec<f64>,
    /// `[K, L, F]`: `sum_t delta_kltf`.
    alpha_num: Array3<f64>,
    /// `[K, F]`: `sum_t sum_l delta_kltf`.
    alpha_den: Array2<f64>,
    /// Flat `[L][F][T]` quadratic forms under the covariances that produced
    /// this posterior.
    quad: Option<Vec<f64>>,
}

impl LooseStats {
    /// Statistics of an explicit joint posterior `[K, L, T, F]`.
    pub fn from_delta(delta: ArrayView4<f64>) -> Self {
        let (k, l, t, f) = delta.dim();
        let mut gamma = Array2::zeros((k, t));
        let mut eta = vec![0.0; l * f * t];
        let mut alpha_num = Array3::zeros((k, l, f));
        let mut alpha_den = Array2::zeros((k, f));
        for ki in 0..k {
            for li in 0..l {
                for ti in 0..t {
                    for fi in 0..f {
                        let d = delta[[ki, li, ti, fi]];
                        gamma[[ki, ti]] += d;
                        eta[(li * f + fi) * t + ti] += d;
                        alpha_num[[ki, li, fi]] += d;
                        alpha_den[[ki, fi]] += d;
                    }
                }
            }
        }
        gamma.mapv_inplace(|v| v / f as f64);
        LooseStats {
            gamma,
            eta,
            alpha_num,
            alpha_den,
            quad: None,
        }
    }

    /// `[L, T, F]`.
    pub fn eta(&self) -> Array3<f64> {
        let (t, f) = (self.gamma.ncols(), self.alpha_den.ncols());
        let l = self.alpha_num.dim().1;
        Array3::from_shape_fn((l, t, f), |(li, ti, fi)| self.eta[(li * f + fi) * t + ti])
    }
}

/// Everything needed to rebuild `delta` for the posterior of one E-step.
#[derive(Debug, Clone)]
struct DeltaParts {
    alpha: Array3<f64>,
    /// Flat `[L][F][T]`: `p(y_tf | l)` scaled by the per-bin maximum over `l`.
    pnorm: Vec<f64>,
    /// Flat `[K][F][T]`: `sum_l alpha_klf pnorm_ltf`.
    snorm: Vec<f64>,
}

#[derive(Debug, Clone)]
enum DeltaSource {
    Explicit(Array4<f64>),
    Factored(DeltaParts),
}

#[derive(Debug, Clone)]
pub struct LooseEStep {
    pub stats: LooseStats,
    pub loglik: f64,
    /// Frames where every speaker underflowed.
    pub underflow: usize,
    parts: DeltaParts,
}

impl LooseEStep {
    /// Materialized joint posterior `[K, L, T, F]`.
    pub fn delta(&self) -> Array4<f64> {
        materialize(&self.parts, &self.stats.gamma)
    }
}

fn materialize(parts: &DeltaParts, gamma: &Array2<f64>) -> Array4<f64> {
    let (k, l, f) = parts.alpha.dim();
    let t = gamma.ncols();
    Array4::from_shape_fn((k, l, t, f), |(ki, li, ti, fi)| {
        let s = parts.snorm[(ki * f + fi) * t + ti];
        let rho = if s > 0.0 {
            parts.alpha[[ki, li, fi]] * parts.pnorm[(li * f + fi) * t + ti] / s
        } else {
            parts.alpha[[ki, li, fi]]
        };
        gamma[[ki, ti]] * rho
    })
}

struct Model<'a> {
    obs: &'a ObservationSet,
    planar: PlanarObs,
}

impl<'a> Model<'a> {
    fn new(obs: &'a ObservationSet) -> Self {
        Model {
            obs,
            planar: PlanarObs::new(obs),
        }
    }

    fn e_step(&self, p: &LooseParams) -> Result<LooseEStep> {
        let (t, f) = (self.planar.t, self.planar.f);
        let (k, l) = (p.speakers(), p.locations());
        let lv = p.vmf.log_likelihoods(self.obs.e.view())?;
        let (lc, quad) = self.planar.log_pdfs(&p.cacg);

        // Per frequency: scaled spatial likelihoods, mixtures s_ktf and log s_ktf.
        let per_f = par::map_range(f, |fi| {
            let a: Vec<f64> = (0..k * l).map(|i| p.alpha[[i / l, i % l, fi]]).collect();
            let mut pn = vec![0.0; l * t];
            let mut sn = vec![0.0; k * t];
            let mut logs = vec![0.0; k * t];
            let mut max = vec![f64::NEG_INFINITY; t];
            for li in 0..l {
                let row = &lc[(li * f + fi) * t..(li * f + fi + 1) * t];
                for (m, &v) in max.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            for li in 0..l {
                let row = &lc[(li * f + fi) * t..(li * f + fi + 1) * t];
                for ((o, &v), &m) in pn[li * t..(li + 1) * t].iter_mut().zip(row).zip(&max) {
                    *o = (v - m).exp();
                }
            }
            for ki in 0..k {
                let srow = &mut sn[ki * t..(ki + 1) * t];
                for li in 0..l {
                    let w = a[ki * l + li];
                    for (o, &v) in srow.iter_mut().zip(&pn[li * t..(li + 1) * t]) {
                        *o += w * v;
                    }
                }
                for ((o, &v), &m) in logs[ki * t..(ki + 1) * t].iter_mut().zip(srow.iter()).zip(&max) {
                    *o = v.ln() + m;
                }
            }
            (pn, sn, logs)
        });

        // Frame posteriors: log pi_k + log p(e_t|k) + sum_f log s_ktf.
        let mut acc = Array2::zeros((k, t));
        for ki in 0..k {
            for ti in 0..t {
                acc[[ki, ti]] = p.pi[ki].ln() + lv[[ki, ti]];
            }
        }
        for (_, _, logs) in &per_f {
            for ki in 0..k {
                let row = &logs[ki * t..(ki + 1) * t];
                for (ti, v) in row.iter().enumerate() {
                    acc[[ki, ti]] += v;
                }
            }
        }
        let mut gamma = Array2::zeros((k, t));
        let mut loglik = 0.0;
        let mut underflow = 0;
        for ti in 0..t {
            let col = acc.column(ti);
            let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            if !max.is_finite() {
                underflow += 1;
                gamma.column_mut(ti).fill(1.0 / k as f64);
                continue;
            }
            let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
            for ki in 0..k {
                gamma[[ki, ti]] = (acc[[ki, ti]] - max).exp() / sum;
            }
            loglik += max + sum.ln();
        }

        // Spatial marginals and coupling statistics, per frequency.
        let gamma_ref = &gamma;
        let per_f_ref = &per_f;
        let stats_f = par::map_range(f, |fi| {
            let (pn, sn, _) = &per_f_ref[fi];
            let mut eta = vec![0.0; l * t];
            let mut num = vec![0.0; k * l];
            let mut den = vec![0.0; k];
            let mut w = vec![0.0; t];
            for ki in 0..k {
                // gamma / s, or gamma alone where s underflowed
                let g = gamma_ref.row(ki);
                let mut zero_s = false;
                for ((o, &gv), &s) in w.iter_mut().zip(g.iter()).zip(&sn[ki * t..(ki + 1) * t]) {
                    *o = if s > 0.0 {
                        gv / s
                    } else {
                        zero_s = true;
                        0.0
                    };
                }
                for li in 0..l {
                    let a = p.alpha[[ki, li, fi]];
                    let mut acc = 0.0;
                    for ((e, &wv), &pv) in eta[li * t..(li + 1) * t].iter_mut().zip(&w).zip(&pn[li * t..(li + 1) * t]) {
                        let d = a * pv * wv;
                        *e += d;
                        acc += d;
                    }
                    if zero_s {
                        for ti in (0..t).filter(|&ti| sn[ki * t + ti] <= 0.0) {
                            let d = a * g[ti];
                            eta[li * t + ti] += d;
                            acc += d;
                        }
                    }
                    num[ki * l + li] = acc;
                    den[ki] += acc;
                }
            }
            (eta, num, den)
        });

        let mut eta = vec![0.0; l * f * t];
        let mut alpha_num = Array3::zeros((k, l, f));
        let mut alpha_den = Array2::zeros((k, f));
        for (fi, (ef, num, den)) in stats_f.into_iter().enumerate() {
            for li in 0..l {
                eta[(li * f + fi) * t..(li * f + fi + 1) * t].copy_from_slice(&ef[li * t..(li + 1) * t]);
            }
            for ki in 0..k {
                alpha_den[[ki, fi]] = den[ki];
                for li in 0..l {
                    alpha_num[[ki, li, fi]] = num[ki * l + li];
                }
            }
        }
        let mut pnorm = vec![0.0; l * f * t];
        let mut snorm = vec![0.0; k * f * t];
        for (fi, (pn, sn, _)) in per_f.into_iter().enumerate() {
            for li in 0..l {
                pnorm[(li * f + fi) * t..(li * f + fi + 1) * t].copy_from_slice(&pn[li * t..(li + 1) * t]);
            }
            for ki in 0..k {
                snorm[(ki * f + fi) * t..(ki * f + fi + 1) * t].copy_from_slice(&sn[ki * t..(ki + 1) * t]);
            }
        }
        Ok(LooseEStep {
            stats: LooseStats {
                gamma,
                eta,
                alpha_num,
                alpha_den,
                quad: Some(quad),
            },
            loglik,
            underflow,
            parts: DeltaParts {
                alpha: p.alpha.clone(),
                pnorm,
                snorm,
            },
        })
    }

    fn m_step(&self, s: &LooseStats, prev: &LooseParams, diag: &mut FitDiagnostics) -> Result<LooseParams> {
        let (k, l, f) = s.alpha_num.dim();
        let t = s.gamma.ncols();
        let mut alpha = Array3::zeros((k, l, f));
        let mut resets = 0;
        for ki in 0..k {
            for fi in 0..f {
                let den = s.alpha_den[[ki, fi]];
                if den > 0.0 && den.is_finite() {
                    for li in 0..l {
                        alpha[[ki, li, fi]] = s.alpha_num[[ki, li, fi]] / den;
                    }
                } else {
                    resets += 1;
                    for li in 0..l {
                        alpha[[ki, li, fi]] = 1.0 / l as f64;
                    }
                }
            }
        }
        let pi = s.gamma.sum_axis(ndarray::Axis(1)) / t as f64;
        let vup = vmf_m_step(self.obs.e.view(), s.gamma.view(), &prev.vmf);
        let cup = cacg_m_step_planar(&self.planar, &s.eta, s.quad.as_deref(), &prev.cacg)?;
        diag.alpha_resets = resets;
        diag.dormant = vup.dormant;
        diag.frozen = cup.frozen.iter().filter(|&&x| x).count();
        Ok(LooseParams {
            vmf: vup.params,
            cacg: cup.params,
            pi,
            alpha,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LooseState {
    pub params: LooseParams,
    /// `[K, T]` frame posteriors of the last E-step (or of the initial posterior).
    pub gamma: Array2<f64>,
    /// `[L, T, F]` spatial posteriors, same provenance as `gamma`.
    pub eta: Array3<f64>,
    pub loglik: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    delta: DeltaSource,
}

impl LooseState {
    /// Joint posterior `[K, L, T, F]` matching `gamma` and `eta`.
    pub fn delta(&self) -> Array4<f64> {
        match &self.delta {
            DeltaSource::Explicit(d) => d.clone(),
            DeltaSource::Factored(parts) => materialize(parts, &self.gamma),
        }
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        let p = &self.params;
        vec![
            NamedTensor::f64("mu", p.vmf.mu.clone()),
            NamedTensor::f64("kappa", p.vmf.kappa.clone()),
            NamedTensor::f64("pi", p.pi.clone()),
            NamedTensor::f64("alpha", p.alpha.clone()),
            NamedTensor::c128("B", p.cacg.to_array()),
            NamedTensor::f64("gamma", self.gamma.clone()),
            NamedTensor::f64("eta", self.eta.clone()),
            NamedTensor::f64("delta", self.delta()),
            NamedTensor::f64("loglik", Array1::from(self.loglik.clone())),
        ]
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        Ok(LooseState {
            params: LooseParams {
                vmf: VmfParams {
                    mu: a.f64_dim::<Ix2>("mu")?,
                    kappa: a.f64_dim::<Ix1>("kappa")?,
                },
                cacg: CacgParams::from_array(&a.c128_dim::<Ix4>("B")?)?,
                pi: a.f64_dim::<Ix1>("pi")?,
                alpha: a.f64_dim::<Ix3>("alpha")?,
            },
            gamma: a.f64_dim::<Ix2>("gamma")?,
            eta: a.f64_dim::<Ix3>("eta")?,
            loglik: a.f64_dim::<Ix1>("loglik")?.to_vec(),
            diagnostics: FitDiagnostics::default(),
            delta: DeltaSource::Explicit(a.f64_dim::<Ix4>("delta")?),
        })
    }
}

fn check_delta(delta: ArrayView4<f64>, obs: &ObservationSet) -> Result<()> {
    let (k, l, t, f) = delta.dim();
    if k == 0 || l == 0 || (t, f) != (obs.frames(), obs.freqs()) {
        return Err(Error::Shape(format!(
            "delta {:?} does not match T={} F={}",
            delta.dim(),
            obs.frames(),
            obs.freqs()
        )));
    }
    Ok(())
}

/// Joint and marginal posteriors under `params`.
pub fn loose_e_step(obs: &ObservationSet, params: &LooseParams) -> Result<LooseEStep> {
    Model::new(obs).e_step(params)
}

/// Parameter update from posterior statistics.
pub fn loose_m_step(obs: &ObservationSet, stats: &LooseStats, prev: &LooseParams) -> Result<LooseParams> {
    Model::new(obs).m_step(stats, prev, &mut FitDiagnostics::default())
}

/// `sum_t log sum_k pi_k p(e_t|k) prod_f sum_l alpha_klf p(y_tf|l)`.
pub fn loose_loglik(obs: &ObservationSet, params: &LooseParams) -> Result<f64> {
    Ok(loose_e_step(obs, params)?.loglik)
}

/// M-step from `delta0`, then `iters` rounds of E-step and M-step.
pub fn loose_fit(obs: &ObservationSet, delta0: ArrayView4<f64>, iters: usize) -> Result<LooseState> {
    check_delta(delta0, obs)?;
    let (k, l, _, f) = delta0.dim();
    let model = Model::new(obs);
    let mut diag = FitDiagnostics::default();
    let start = LooseParams::neutral(k, l, f, obs.channels(), obs.embed_dim());
    let init = LooseStats::from_delta(delta0);
    let mut params = model.m_step(&init, &start, &mut diag)?;
    let mut gamma = init.gamma.clone();
    let mut eta = init.eta();
    let mut delta = DeltaSource::Explicit(delta0.to_owned());
    let mut loglik = Vec::with_capacity(iters);
    for it in 0..iters {
        let es = model.e_step(&params)?;
        check_finite(es.loglik, it, "loose")?;
        loglik.push(es.loglik);
        diag.underflow += es.underflow;
        params = model.m_step(&es.stats, &params, &mut diag)?;
        if it + 1 == iters {
            gamma = es.stats.gamma.clone();
            eta = es.stats.eta();
            delta = DeltaSource::Factored(es.parts);
        }
    }
    Ok(LooseState {
        params,
        gamma,
        eta,
        loglik,
        diagnostics: diag,
        delta,
    })
}

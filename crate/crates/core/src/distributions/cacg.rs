//! Complex Angular Central Gaussian distribution on the complex unit sphere.

use ndarray::{Array4, ArrayView3};
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::HermMat;
use crate::obs::ObservationSet;
use crate::par;

/// Relative eigenvalue floor applied after every covariance update.
pub const EIG_FLOOR: f64 = 1e-6;

/// Relative weight floor below which an `(l, f)` covariance is frozen.
pub const SPATIAL_WEIGHT_FLOOR: f64 = 1e-8;

/// `log[(C-1)! / (2 pi^C)]`.
pub fn cacg_log_const(c: usize) -> f64 {
    let cf = c as f64;
    ln_gamma(cf) - 2f64.ln() - cf * std::f64::consts::PI.ln()
}

/// Single-vector log density. `b` need not be trace-normalized.
pub fn cacg_log_pdf(y: &[Complex64], b: &HermMat) -> Result<f64> {
    let comp = CacgComponent::new(b.clone()).ok_or(Error::SingularCovariance {
        component: 0,
        bin: 0,
    })?;
    let q = comp.inv.quad_form(y);
    Ok(cacg_log_const(y.len()) - comp.log_det - y.len() as f64 * q.ln())
}

/// One covariance with its inverse and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct CacgComponent {
    pub b: HermMat,
    pub inv: HermMat,
    pub log_det: f64,
}

impl CacgComponent {
    /// `None` if `b` is not numerically positive definite.
    pub fn new(b: HermMat) -> Option<Self> {
        let eig = b.eigh();
        let max = eig.values.last().copied().unwrap_or(0.0);
        if !(max > 0.0) || !max.is_finite() || eig.values[0] <= max * 1e-14 {
            return None;
        }
        let log_det = eig.values.iter().map(|v| v.ln()).sum();
        let inv = eig.reconstruct(|v| 1.0 / v);
        Some(CacgComponent { b, inv, log_det })
    }

    /// Symmetrizes, floors eigenvalues at `EIG_FLOOR * trace / C` and rescales
    /// to trace `C`.
    pub fn regularized(mut b: HermMat) -> Option<Self> {
        let c = b.dim() as f64;
        b.symmetrize();
        let eig = b.eigh();
        let trace: f64 = eig.values.iter().sum();
        if !(trace > 0.0) || !trace.is_finite() {
            return None;
        }
        let floor = EIG_FLOOR * trace / c;
        let floored: Vec<f64> = eig.values.iter().map(|&v| v.max(floor)).collect();
        let scale = c / floored.iter().sum::<f64>();
        let vals: Vec<f64> = floored.iter().map(|v| v * scale).collect();
        let mut eig = eig;
        eig.values = vals;
        let mut b = eig.reconstruct(|v| v);
        b.symmetrize();
        let mut inv = eig.reconstruct(|v| 1.0 / v);
        inv.symmetrize();
        let log_det = eig.values.iter().map(|v| v.ln()).sum();
        Some(CacgComponent { b, inv, log_det })
    }

    pub fn identity(c: usize) -> Self {
        CacgComponent {
            b: HermMat::identity(c),
            inv: HermMat::identity(c),
            log_det: 0.0,
        }
    }
}

/// Covariances for `L` components at `F` frequencies, indexed `[l][f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CacgParams {
    pub components: usize,
    pub freqs: usize,
    pub channels: usize,
    comps: Vec<CacgComponent>,
}

impl CacgParams {
    pub fn identity(l: usize, f: usize, c: usize) -> Self {
        CacgParams {
            components: l,
            freqs: f,
            channels: c,
            comps: vec![CacgComponent::identity(c); l * f],
        }
    }

    /// Builds parameters from raw matrices (indexed `l * F + f`), regularizing each.
    pub fn from_matrices(l: usize, f: usize, c: usize, mats: Vec<HermMat>) -> Result<Self> {
        if mats.len() != l * f {
            return Err(Error::Shape(format!(
                "expected {} covariance matrices, got {}",
                l * f,
                mats.len()
            )));
        }
        let comps = mats
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                CacgComponent::regularized(m).ok_or(Error::SingularCovariance {
                    component: i / f,
                    bin: i % f,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CacgParams {
            components: l,
            freqs: f,
            channels: c,
            comps,
        })
    }

    #[inline]
    pub fn get(&self, l: usize, f: usize) -> &CacgComponent {
        &self.comps[l * self.freqs + f]
    }

    pub fn b(&self, l: usize, f: usize) -> &HermMat {
        &self.get(l, f).b
    }

    /// `[L, F, C, C]` tensor.
    pub fn to_array(&self) -> Array4<Complex64> {
        let c = self.channels;
        Array4::from_shape_fn((self.components, self.freqs, c, c), |(l, f, i, j)| {
            self.b(l, f).get(i, j)
        })
    }

    pub fn from_array(b: &Array4<Complex64>) -> Result<Self> {
        let (l, f, c, c2) = b.dim();
        if c != c2 {
            return Err(Error::Shape(format!("B must be [L,F,C,C], got {:?}", b.dim())));
        }
        let mats = (0..l * f)
            .map(|i| {
                let data = (0..c * c)
                    .map(|k| b[[i / f, i % f, k / c, k % c]])
                    .collect();
                HermMat::from_rows(c, data)
            })
            .collect();
        Self::from_matrices(l, f, c, mats)
    }

    /// Largest deviation from the Hermitian, trace and eigenvalue contracts.
    pub fn check(&self) -> Result<()> {
        let c = self.channels as f64;
        for (i, comp) in self.comps.iter().enumerate() {
            let herm = comp.b.hermitian_error();
            let tr = comp.b.trace();
            let min_eig = comp.b.eigh().values[0];
            if herm > 1e-10 || (tr - c).abs() > 1e-9 || min_eig < EIG_FLOOR * 0.5 {
                return Err(Error::InvalidArgument(format!(
                    "B[{}][{}]: hermitian error {herm:e}, trace {tr}, min eigenvalue {min_eig:e}",
                    i / self.freqs,
                    i % self.freqs
                )));
            }
        }
        Ok(())
    }
}

/// Observations in split real/imaginary layout `[f][c][t]` for fast
/// per-frequency quadratic forms and scatter matrices.
#[derive(Debug, Clone)]
pub struct PlanarObs {
    pub t: usize,
    pub f: usize,
    pub c: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    /// `[f][t]`, false for degenerate bins.
    valid: Vec<bool>,
}

impl PlanarObs {
    pub fn new(obs: &ObservationSet) -> Self {
        let (t, f, c) = obs.y.dim();
        let mut re = vec![0.0; f * c * t];
        let mut im = vec![0.0; f * c * t];
        let mut valid = vec![true; f * t];
        for ti in 0..t {
            for fi in 0..f {
                valid[fi * t + ti] = !obs.degenerate[[ti, fi]];
                for ci in 0..c {
                    let v = obs.y[[ti, fi, ci]];
                    re[(fi * c + ci) * t + ti] = v.re;
                    im[(fi * c + ci) * t + ti] = v.im;
                }
            }
        }
        PlanarObs {
            t,
            f,
            c,
            re,
            im,
            valid,
        }
    }

    #[inline]
    fn chan(&self, f: usize, c: usize) -> (&[f64], &[f64]) {
        let s = (f * self.c + c) * self.t;
        (&self.re[s..s + self.t], &self.im[s..s + self.t])
    }

    #[inline]
    pub fn valid(&self, f: usize) -> &[bool] {
        &self.valid[f * self.t..(f + 1) * self.t]
    }

    pub fn vector(&self, t: usize, f: usize) -> Vec<Complex64> {
        (0..self.c)
            .map(|c| {
                let (re, im) = self.chan(f, c);
                Complex64::new(re[t], im[t])
            })
            .collect()
    }

    /// `out[t] = y_tf^H A y_tf` for every frame.
    pub fn quad_forms(&self, f: usize, a: &HermMat, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.t);
        out.fill(0.0);
        for i in 0..self.c {
            let (ri, ii) = self.chan(f, i);
            let aii = a.get(i, i).re;
            for ((o, &r), &m) in out.iter_mut().zip(ri).zip(ii) {
                *o += aii * (r * r + m * m);
            }
            for j in i + 1..self.c {
                let (rj, ij) = self.chan(f, j);
                let aij = a.get(i, j);
                let (ar, ai) = (2.0 * aij.re, 2.0 * aij.im);
                for ((o, (&a, &b)), (&c, &d)) in out.iter_mut().zip(ri.iter().zip(ii)).zip(rj.iter().zip(ij)) {
                    *o += ar * (a * c + b * d) - ai * (a * d - b * c);
                }
            }
        }
    }

    /// `sum_t w[t] y_tf y_tf^H`.
    pub fn scatter(&self, f: usize, w: &[f64]) -> HermMat {
        let c = self.c;
        let mut s = HermMat::zeros(c);
        for i in 0..c {
            let (ri, ii) = self.chan(f, i);
            let d: f64 = w
                .iter()
                .zip(ri.iter().zip(ii))
                .map(|(&wt, (&r, &m))| wt * (r * r + m * m))
                .sum();
            s.set(i, i, Complex64::new(d, 0.0));
            for j in i + 1..c {
                let (rj, ij) = self.chan(f, j);
                let (mut p, mut q) = (0.0, 0.0);
                for ((&wt, (&a, &b)), (&c, &d)) in w.iter().zip(ri.iter().zip(ii)).zip(rj.iter().zip(ij)) {
                    p += wt * (a * c + b * d);
                    q += wt * (a * d - b * c);
                }
                s.set(i, j, Complex64::new(p, -q));
                s.set(j, i, Complex64::new(p, q));
            }
        }
        s
    }

    /// Log densities of all frames at frequency `f` under one component,
    /// plus the quadratic forms `y^H B^-1 y` needed by the next M-step.
    /// Degenerate bins get log density 0 and quadratic form 1.
    pub fn log_pdf_row(&self, f: usize, comp: &CacgComponent, logp: &mut [f64], q: &mut [f64]) {
        self.quad_forms(f, &comp.inv, q);
        let base = cacg_log_const(self.c) - comp.log_det;
        let cf = self.c as f64;
        for ((lp, qv), &ok) in logp.iter_mut().zip(q.iter_mut()).zip(self.valid(f)) {
            if ok {
                *qv = qv.max(f64::MIN_POSITIVE);
                *lp = base - cf * qv.ln();
            } else {
                *qv = 1.0;
                *lp = 0.0;
            }
        }
    }

    /// `[L][F][T]` log densities and quadratic forms for all components.
    pub fn log_pdfs(&self, params: &CacgParams) -> (Vec<f64>, Vec<f64>) {
        let (t, f) = (self.t, self.f);
        let rows = par::map_range(params.components * f, |i| {
            let mut lp = vec![0.0; t];
            let mut q = vec![0.0; t];
            self.log_pdf_row(i % f, params.get(i / f, i % f), &mut lp, &mut q);
            (lp, q)
        });
        let mut logp = Vec::with_capacity(rows.len() * t);
        let mut quad = Vec::with_capacity(rows.len() * t);
        for (lp, q) in rows {
            logp.extend(lp);
            quad.extend(q);
        }
        (logp, quad)
    }
}

#[derive(Debug, Clone)]
pub struct CacgUpdate {
    pub params: CacgParams,
    /// `[L * F]`, true where the covariance was left at its previous value.
    pub frozen: Vec<bool>,
}

/// One fixed-point sweep on planar data.
///
/// `weights` and `quad` are `[L][F][T]`; `quad` holds `y^H B_prev^-1 y` and is
/// recomputed when `None`.
pub fn cacg_m_step_planar(
    obs: &PlanarObs,
    weights: &[f64],
    quad: Option<&[f64]>,
    prev: &CacgParams,
) -> Result<CacgUpdate> {
    let (t, f, c) = (obs.t, obs.f, obs.c);
    let l = prev.components;
    assert_eq!(weights.len(), l * f * t, "cacg_m_step: weight shape");
    let floor = SPATIAL_WEIGHT_FLOOR * (t * f) as f64;
    let results = par::map_range(l * f, |i| {
        let fi = i % f;
        let w = &weights[i * t..(i + 1) * t];
        let valid = obs.valid(fi);
        let mut q = vec![0.0; t];
        match quad {
            Some(qs) => q.copy_from_slice(&qs[i * t..(i + 1) * t]),
            None => obs.quad_forms(fi, &prev.get(i / f, fi).inv, &mut q),
        }
        let mut total = 0.0;
        let mut scaled = vec![0.0; t];
        for ti in 0..t {
            if valid[ti] {
                total += w[ti];
                scaled[ti] = w[ti] / q[ti].max(f64::MIN_POSITIVE);
            }
        }
        if total < floor {
            return Ok(None);
        }
        let mut s = obs.scatter(fi, &scaled);
        s.scale(c as f64 / total);
        CacgComponent::regularized(s)
            .map(Some)
            .ok_or(Error::SingularCovariance {
                component: i / f,
                bin: fi,
            })
    });
    let mut params = prev.clone();
    let mut frozen = vec![false; l * f];
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(comp) => params.comps[i] = comp,
            None => frozen[i] = true,
        }
    }
    Ok(CacgUpdate { params, frozen })
}

/// One fixed-point sweep with spatial posteriors `eta` laid out `[L, T, F]`.
pub fn cacg_m_step(obs: &ObservationSet, eta: ArrayView3<f64>, prev: &CacgParams) -> Result<CacgUpdate> {
    let planar = PlanarObs::new(obs);
    let (l, t, f) = eta.dim();
    if (t, f) != (planar.t, planar.f) || l != prev.components {
        return Err(Error::Shape(format!(
            "eta {:?} does not match T={} F={} L={}",
            eta.dim(),
            planar.t,
            planar.f,
            prev.components
        )));
    }
    let mut w = vec![0.0; l * f * t];
    for li in 0..l {
        for ti in 0..t {
            for fi in 0..f {
                w[(li * f + fi) * t + ti] = eta[[li, ti, fi]];
            }
        }
    }
    cacg_m_step_planar(&planar, &w, None, prev)
}

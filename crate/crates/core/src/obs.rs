//! Observation containers and dimension bookkeeping.

use ndarray::{s, Array1, Array2, Array3, Axis};
use num_complex::Complex64;

use crate::archive::{Archive, NamedTensor};
use crate::error::{Error, Result};
use crate::stft::StftConfig;

/// Problem dimensions. `k` spectral components, `l` spatial components,
/// `n` true speakers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub t: usize,
    pub f: usize,
    pub c: usize,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub l: usize,
}

impl Dims {
    /// Default pipeline sizing: `K = N` and `L = 2N + 1`.
    pub fn for_speakers(t: usize, f: usize, c: usize, d: usize, n: usize) -> Self {
        Dims {
            t,
            f,
            c,
            d,
            k: n,
            n,
            l: 2 * n + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.t, self.f, self.c, self.d, self.k, self.n, self.l];
        if all.iter().any(|&v| v == 0) {
            return Err(Error::InvalidArgument(format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Length-normalized multichannel STFT features plus frame embeddings.
///
/// `y` is `[T, F, C]` with unit norm per `(t, f)`; `e` is `[T, D]` with unit
/// rows. `degenerate[t, f]` marks bins whose raw STFT was all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub y: Array3<Complex64>,
    pub e: Array2<f64>,
    pub degenerate: Array2<bool>,
    pub sample_rate: f64,
    pub stft: StftConfig,
}

impl ObservationSet {
    /// Builds an observation set from a raw STFT and raw embeddings, normalizing both.
    pub fn from_raw(
        raw_y: &Array3<Complex64>,
        raw_e: &Array2<f64>,
        sample_rate: f64,
        stft: StftConfig,
    ) -> Result<Self> {
        if raw_y.shape()[0] != raw_e.shape()[0] {
            return Err(Error::Shape(format!(
                "STFT has {} frames but embeddings have {}",
                raw_y.shape()[0],
                raw_e.shape()[0]
            )));
        }
        let (y, degenerate) = normalize_observations(raw_y);
        let e = normalize_rows(raw_e);
        Ok(ObservationSet {
            y,
            e,
            degenerate,
            sample_rate,
            stft,
        })
    }

    pub fn frames(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn freqs(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.y.shape()[2]
    }

    pub fn embed_dim(&self) -> usize {
        self.e.shape()[1]
    }

    /// Checks the unit-norm invariants at 1e-6.
    pub fn check_invariants(&self) -> Result<()> {
        let (t, f, _) = self.y.dim();
        if self.e.nrows() != t || self.degenerate.dim() != (t, f) {
            return Err(Error::Shape("inconsistent frame counts".into()));
        }
        for ((ti, fi), v) in self.y.lanes(Axis(2)).into_iter().enumerate().map(|(i, v)| ((i / f, i % f), v)) {
            let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("y[{ti},{fi}] has norm {n}")));
            }
        }
        for (ti, row) in self.e.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("e[{ti}] has norm {n}")));
            }
        }
        Ok(())
    }

    /// Time slice `[start, end)` of frames.
    pub fn slice_frames(&self, start: usize, end: usize) -> ObservationSet {
        ObservationSet {
            y: self.y.slice(s![start..end, .., ..]).to_owned(),
            e: self.e.slice(s![start..end, ..]).to_owned(),
            degenerate: self.degenerate.slice(s![start..end, ..]).to_owned(),
            sample_rate: self.sample_rate,
            stft: self.stft,
        }
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor::c128("y", self.y.clone()),
            NamedTensor::f64("e", self.e.clone()),
            NamedTensor::u8("degenerate", self.degenerate.mapv(u8::from)),
            NamedTensor::f64("stft_config", self.stft_vector()),
        ]
    }

    fn stft_vector(&self) -> Array1<f64> {
        Array1::from(vec![
            self.stft.frame_length as f64,
            self.stft.frame_shift as f64,
            self.stft.fft_length as f64,
            self.sample_rate,
            self.stft.window.code(),
        ])
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let y = a.c128_dim::<ndarray::Ix3>("y")?;
        let e = a.f64_dim::<ndarray::Ix2>("e")?;
        let degenerate = a.u8_dim::<ndarray::Ix2>("degenerate")?.mapv(|v| v != 0);
        let (stft, sample_rate) = read_stft_config(a)?;
        let obs = ObservationSet {
            y,
            e,
            degenerate,
            sample_rate,
            stft,
        };
        if obs.degenerate.dim() != (obs.frames(), obs.freqs()) || obs.e.nrows() != obs.frames() {
            return Err(Error::Shape("observation archive entries disagree on T/F".into()));
        }
        Ok(obs)
    }
}

pub fn read_stft_config(a: &Archive) -> Result<(StftConfig, f64)> {
    let v = a.f64("stft_config")?;
    let v: Vec<f64> = v.iter().copied().collect();
    if v.len() != 5 {
        return Err(Error::Shape("stft_config must hold 5 values".into()));
    }
    let cfg = StftConfig {
        frame_length: v[0] as usize,
        frame_shift: v[1] as usize,
        fft_length: v[2] as usize,
        window: crate::stft::Window::from_code(v[4])?,
    };
    Ok((cfg, v[3]))
}

/// Scales each `(t, f)` slice to unit Euclidean norm.
///
/// All-zero slices become the first unit basis vector and are flagged in the
/// returned `[T, F]` mask.
pub fn normalize_observations(raw_y: &Array3<Complex64>) -> (Array3<Complex64>, Array2<bool>) {
    let (t, f, c) = raw_y.dim();
    let mut y = raw_y.to_owned();
    let mut degenerate = Array2::from_elem((t, f), false);
    for ti in 0..t {
        for fi in 0..f {
            let mut lane = y.slice_mut(s![ti, fi, ..]);
            let n: f64 = lane.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                lane.mapv_inplace(|z| z / n);
            } else {
                lane.fill(Complex64::new(0.0, 0.0));
                if c > 0 {
                    lane[0] = Complex64::new(1.0, 0.0);
                }
                degenerate[[ti, fi]] = true;
            }
        }
    }
    (y, degenerate)
}

/// Scales each row to unit norm; zero rows become the first basis vector.
pub fn normalize_rows(raw: &Array2<f64>) -> Array2<f64> {
    let mut out = raw.to_owned();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 && n.is_finite() {
            row.mapv_inplace(|v| v / n);
        } else {
            row.fill(0.0);
            if !row.is_empty() {
                row[0] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scales_slice() {
        let raw = Array3::from_shape_vec((1, 1, 2), vec![c(3.0, 0.0), c(0.0, 4.0)]).unwrap();
        let (y, deg) = normalize_observations(&raw);
        assert!((y[[0, 0, 0]] - c(0.6, 0.0)).norm() < 1e-15);
        assert!((y[[0, 0, 1]] - c(0.0, 0.8)).norm() < 1e-15);
        assert!(!deg[[0, 0]]);
    }

    #[test]
    fn zero_slice_is_flagged() {
        let raw = Array3::from_elem((1, 1, 2), c(0.0, 0.0));
        let (y, deg) = normalize_observations(&raw);
        assert_eq!(y[[0, 0, 0]], c(1.0, 0.0));
        assert_eq!(y[[0, 0, 1]], c(0.0, 0.0));
        assert!(deg[[0, 0]]);
    }

    #[test]
    fn unit_slice_unchanged() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let raw = Array3::from_shape_vec((1, 1, 2), vec![c(s, 0.0), c(0.0, s)]).unwrap();
        let (y, _) = normalize_observations(&raw);
        for (a, b) in y.iter().zip(raw.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dims_for_speakers() {
        let d = Dims::for_speakers(10, 5, 7, 64, 2);
        assert_eq!((d.k, d.l), (2, 5));
        d.validate().unwrap();
        assert!(Dims { t: 0, ..d }.validate().is_err());
    }
}

//! Multichannel STFT / inverse STFT and frame energies.
//!
//! Frame `t` covers samples `[t * shift, t * shift + frame_length)`; only full
//! frames are produced, so `T = 1 + (S - frame_length) / shift`. Spectra are
//! one-sided with `F = fft_length / 2 + 1` bins.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }

    pub(crate) fn code(&self) -> f64 {
        match self {
            Window::Hann => 0.0,
            Window::Rectangular => 1.0,
        }
    }

    pub(crate) fn from_code(v: f64) -> Result<Self> {
        match v as i64 {
            0 => Ok(Window::Hann),
            1 => Ok(Window::Rectangular),
            _ => Err(Error::InvalidArgument(format!("unknown window code {v}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hann" => Ok(Window::Hann),
            "rect" | "rectangular" => Ok(Window::Rectangular),
            _ => Err(Error::InvalidArgument(format!("unknown window {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_length: usize,
    pub window: Window,
}

impl Default for StftConfig {
    /// 1024-sample Hann frames with a 256-sample shift (64 ms / 16 ms at 16 kHz).
    fn default() -> Self {
        StftConfig {
            frame_length: 1024,
            frame_shift: 256,
            fft_length: 1024,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_length: usize, frame_shift: usize, fft_length: usize) -> Result<Self> {
        let cfg = StftConfig {
            frame_length,
            frame_shift,
            fft_length,
            window: Window::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.frame_shift == 0 {
            return Err(Error::InvalidArgument("frame length and shift must be positive".into()));
        }
        if self.frame_shift > self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "frame shift {} exceeds frame length {}",
                self.frame_shift, self.frame_length
            )));
        }
        if !self.fft_length.is_power_of_two() || self.fft_length < self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "fft length {} must be a power of two >= frame length {}",
                self.fft_length, self.frame_length
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        if samples < self.frame_length {
            0
        } else {
            1 + (samples - self.frame_length) / self.frame_shift
        }
    }

    pub fn num_samples(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.frame_shift + self.frame_length
        }
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize, sample_rate: f64) -> f64 {
        f as f64 * sample_rate / self.fft_length as f64
    }

    /// Frame `t` start time in seconds.
    pub fn frame_time(&self, t: usize, sample_rate: f64) -> f64 {
        (t * self.frame_shift) as f64 / sample_rate
    }

    /// The constant `sum_m w[n - m * shift]` if the window satisfies COLA at
    /// this shift, else an error.
    pub fn cola_constant(&self) -> Result<f64> {
        let w = self.window.coefficients(self.frame_length);
        let h = self.frame_shift;
        let sums: Vec<f64> = (0..h)
            .map(|n| w.iter().skip(n).step_by(h).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / h as f64;
        let worst = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        if mean <= 0.0 || worst > 1e-10 * mean {
            return Err(Error::ColaViolation(format!(
                "{:?} window of length {} at shift {} sums to {:.6}..{:.6}",
                self.window,
                self.frame_length,
                h,
                sums.iter().cloned().fold(f64::INFINITY, f64::min),
                sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            )));
        }
        Ok(mean)
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// Single-channel STFT, `[T, F]`.
pub fn stft_channel(x: &[f64], cfg: &StftConfig) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    if x.len() < cfg.frame_length {
        return Err(Error::SignalTooShort {
            samples: x.len(),
            frame_length: cfg.frame_length,
        });
    }
    let t = cfg.num_frames(x.len());
    let nb = cfg.num_bins();
    let w = cfg.window.coefficients(cfg.frame_length);
    let fft = plan(cfg.fft_length, false);
    let mut out = Array2::zeros((t, nb));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_length];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for ti in 0..t {
        let start = ti * cfg.frame_shift;
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (n, (b, &wn)) in buf.iter_mut().zip(&w).enumerate() {
            *b = Complex64::new(x[start + n] * wn, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (fi, v) in buf.iter().take(nb).enumerate() {
            out[[ti, fi]] = *v;
        }
    }
    Ok(out)
}

/// Multichannel STFT of `wave` `[S, C]`, returning `[T, F, C]`.
pub fn stft(wave: ArrayView2<f64>, cfg: &StftConfig) -> Result<Array3<Complex64>> {
    let (s, c) = wave.dim();
    cfg.validate()?;
    if s < cfg.frame_length {
        return Err(Error::SignalTooShort {
            samples: s,
            frame_length: cfg.frame_length,
        });
    }
    let per_channel = par::map_range(c, |ci| {
        let x: Vec<f64> = wave.column(ci).to_vec();
        stft_channel(&x, cfg)
    });
    let t = cfg.num_frames(s);
    let mut out = Array3::zeros((t, cfg.num_bins(), c));
    for (ci, spec) in per_channel.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(2), ci).assign(&spec?);
    }
    Ok(out)
}

/// Single-channel inverse STFT from a `[T, F]` one-sided spectrum.
pub fn istft_channel(spec: ArrayView2<Complex64>, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (t, nb) = spec.dim();
    if nb != cfg.num_bins() {
        return Err(Error::Shape(format!(
            "spectrum has {nb} bins, config expects {}",
            cfg.num_bins()
        )));
    }
    let k = cfg.cola_constant()?;
    let n = cfg.fft_length;
    let ifft = plan(n, true);
    let mut out = vec![0.0; cfg.num_samples(t)];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    for ti in 0..t {
        for fi in 0..nb {
            buf[fi] = spec[[ti, fi]];
        }
        // DC and Nyquist of a real signal are real.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for fi in 1..n / 2 {
            buf[n - fi] = buf[fi].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = ti * cfg.frame_shift;
        for j in 0..cfg.frame_length {
            out[start + j] += buf[j].re / (n as f64 * k);
        }
    }
    Ok(out)
}

/// Multichannel inverse STFT of `[T, F, C]`, returning `[S, C]` with
/// `S = (T - 1) * shift + frame_length`.
pub fn istft(spec: ArrayView3<Complex64>, cfg: &StftConfig) -> Result<Array2<f64>> {
    let (t, _, c) = spec.dim();
    let per_channel = par::map_range(c, |ci| istft_channel(spec.index_axis(ndarray::Axis(2), ci), cfg));
    let mut out = Array2::zeros((cfg.num_samples(t), c));
    for (ci, x) in per_channel.into_iter().enumerate() {
        out.column_mut(ci).assign(&Array1::from(x?));
    }
    Ok(out)
}

/// Log energy per frame summed over channels, floored 30 nats below the
/// loudest frame. An all-silent signal maps to a constant -30.
pub fn frame_log_energy(wave: ArrayView2<f64>, cfg: &StftConfig) -> Vec<f64> {
    let (s, _) = wave.dim();
    let t = cfg.num_frames(s);
    let energies: Vec<f64> = (0..t)
        .map(|ti| {
            let start = ti * cfg.frame_shift;
            wave.slice(ndarray::s![start..start + cfg.frame_length, ..])
                .iter()
                .map(|v| v * v)
                .sum()
        })
        .collect();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![-30.0; t];
    }
    let floor = max.ln() - 30.0;
    energies
        .iter()
        .map(|&e| if e > 0.0 { e.ln().max(floor) } else { floor })
        .collect()
}

//! Synthetic meeting scenes: turn-taking speech surrogates on a circular
//! array with diffuse noise, frame embeddings and full ground truth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::archive::{Archive, NamedTensor};
use crate::config::KvConfig;
use crate::distributions::vmf::{random_unit_vector, sample_vmf};
use crate::error::{Error, Result};
use crate::obs::ObservationSet;
use crate::par;
use crate::postprocess::{speaker_name, Segment};
use crate::stft::{frame_log_energy, istft, istft_channel, stft_channel, StftConfig, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relocation {
    None,
    /// Second half produced by rotating the outer channels.
    Rotate,
    /// Every speaker moves by the equivalent angle at the midpoint.
    Move,
}

impl Relocation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "static" => Ok(Relocation::None),
            "rotate" => Ok(Relocation::Rotate),
            "move" => Ok(Relocation::Move),
            _ => Err(Error::InvalidArgument(format!("unknown relocation mode {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Relocation::None => "none",
            Relocation::Rotate => "rotate",
            Relocation::Move => "move",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub speakers: usize,
    /// Seconds.
    pub duration: f64,
    /// Overlapped time over total speech time.
    pub overlap_ratio: f64,
    pub sample_rate: f64,
    pub stft: StftConfig,
    /// Center microphone plus `channels - 1` on the circle.
    pub channels: usize,
    /// Meters.
    pub radius: f64,
    pub sound_speed: f64,
    /// Diffuse-noise power relative to the mean active speech power.
    pub noise_level: f64,
    pub embed_dim: usize,
    pub embed_kappa: f64,
    /// Degrees; drawn at random when absent.
    pub azimuths: Option<Vec<f64>>,
    pub relocation: Relocation,
    pub rotate_positions: usize,
    pub min_turn: f64,
    pub max_turn: f64,
    pub lead_silence: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            speakers: 2,
            duration: 30.0,
            overlap_ratio: 0.2,
            sample_rate: 8000.0,
            stft: StftConfig {
                frame_length: 512,
                frame_shift: 256,
                fft_length: 512,
                window: Window::Hann,
            },
            channels: 7,
            radius: 0.0425,
            sound_speed: 343.0,
            noise_level: 0.03,
            embed_dim: 64,
            embed_kappa: 100.0,
            azimuths: None,
            relocation: Relocation::None,
            rotate_positions: 2,
            min_turn: 2.0,
            max_turn: 5.0,
            lead_silence: 0.5,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "speakers",
    "duration",
    "overlap_ratio",
    "sample_rate",
    "frame_length",
    "frame_shift",
    "fft_length",
    "window",
    "channels",
    "radius",
    "sound_speed",
    "noise_level",
    "embed_dim",
    "embed_kappa",
    "azimuths",
    "relocation",
    "rotate_positions",
    "min_turn",
    "max_turn",
    "lead_silence",
    "seed",
];

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvConfig::parse(text)?;
        kv.reject_unknown(KEYS)?;
        let d = ScenarioConfig::default();
        let window = match kv.raw("window") {
            Some(w) => Window::parse(w)?,
            None => d.stft.window,
        };
        let stft = StftConfig {
            frame_length: kv.get_or("frame_length", d.stft.frame_length)?,
            frame_shift: kv.get_or("frame_shift", d.stft.frame_shift)?,
            fft_length: kv.get_or("fft_length", d.stft.fft_length)?,
            window,
        };
        let relocation = match kv.raw("relocation") {
            Some(r) => Relocation::parse(r)?,
            None => d.relocation,
        };
        let cfg = ScenarioConfig {
            speakers: kv.get_or("speakers", d.speakers)?,
            duration: kv.get_or("duration", d.duration)?,
            overlap_ratio: kv.get_or("overlap_ratio", d.overlap_ratio)?,
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            stft,
            channels: kv.get_or("channels", d.channels)?,
            radius: kv.get_or("radius", d.radius)?,
            sound_speed: kv.get_or("sound_speed", d.sound_speed)?,
            noise_level: kv.get_or("noise_level", d.noise_level)?,
            embed_dim: kv.get_or("embed_dim", d.embed_dim)?,
            embed_kappa: kv.get_or("embed_kappa", d.embed_kappa)?,
            azimuths: kv.list("azimuths")?,
            relocation,
            rotate_positions: kv.get_or("rotate_positions", d.rotate_positions)?,
            min_turn: kv.get_or("min_turn", d.min_turn)?,
            max_turn: kv.get_or("max_turn", d.max_turn)?,
            lead_silence: kv.get_or("lead_silence", d.lead_silence)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "speakers = {}\nduration = {}\noverlap_ratio = {}\nsample_rate = {}\nframe_length = {}\nframe_shift = {}\nfft_length = {}\nwindow = {}\nchannels = {}\nradius = {}\nsound_speed = {}\nnoise_level = {}\nembed_dim = {}\nembed_kappa = {}\nrelocation = {}\nrotate_positions = {}\nmin_turn = {}\nmax_turn = {}\nlead_silence = {}\nseed = {}\n",
            self.speakers,
            self.duration,
            self.overlap_ratio,
            self.sample_rate,
            self.stft.frame_length,
            self.stft.frame_shift,
            self.stft.fft_length,
            match self.stft.window {
                Window::Hann => "hann",
                Window::Rectangular => "rect",
            },
            self.channels,
            self.radius,
            self.sound_speed,
            self.noise_level,
            self.embed_dim,
            self.embed_kappa,
            self.relocation.name(),
            self.rotate_positions,
            self.min_turn,
            self.max_turn,
            self.lead_silence,
            self.seed,
        );
        if let Some(a) = &self.azimuths {
            let list: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("azimuths = {}\n", list.join(", ")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.speakers == 0 {
            return bad("speakers must be positive".into());
        }
        if self.channels < 3 {
            return bad("need at least 3 channels".into());
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return bad(format!("overlap_ratio {} outside [0, 1)", self.overlap_ratio));
        }
        if !(self.min_turn > 0.0 && self.max_turn >= self.min_turn) {
            return bad("need 0 < min_turn <= max_turn".into());
        }
        if self.noise_level < 0.0 || self.embed_kappa < 0.0 || self.radius <= 0.0 {
            return bad("noise_level, embed_kappa must be >= 0 and radius > 0".into());
        }
        if let Some(a) = &self.azimuths {
            if a.len() != self.speakers {
                return bad(format!("{} azimuths for {} speakers", a.len(), self.speakers));
            }
        }
        self.stft.validate()?;
        let samples = (self.duration * self.sample_rate).round() as usize;
        if samples < self.stft.frame_length {
            return Err(Error::SignalTooShort {
                samples,
                frame_length: self.stft.frame_length,
            });
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.stft.num_frames((self.duration * self.sample_rate).round() as usize)
    }

    /// Azimuth step of the outer ring times `rotate_positions`, degrees.
    pub fn move_angle(&self) -> f64 {
        360.0 * self.rotate_positions as f64 / (self.channels - 1) as f64
    }
}

/// Microphone coordinates `[C, 2]`: channel 0 at the center, the rest evenly
/// spaced counter-clockwise from azimuth 0.
pub fn mic_positions(channels: usize, radius: f64) -> Array2<f64> {
    let ring = channels - 1;
    Array2::from_shape_fn((channels, 2), |(c, j)| {
        if c == 0 {
            return 0.0;
        }
        let th = 2.0 * PI * (c - 1) as f64 / ring as f64;
        radius * if j == 0 { th.cos() } else { th.sin() }
    })
}

/// Far-field steering vectors `[F, C]` for a source at `azimuth_deg`,
/// unity at the center microphone.
pub fn steering_vector(
    azimuth_deg: f64,
    mics: &Array2<f64>,
    stft: &StftConfig,
    sample_rate: f64,
    sound_speed: f64,
) -> Array2<Complex64> {
    let th = azimuth_deg.to_radians();
    let u = [th.cos(), th.sin()];
    let f = stft.num_bins();
    Array2::from_shape_fn((f, mics.nrows()), |(fi, c)| {
        let tau = -(mics[[c, 0]] * u[0] + mics[[c, 1]] * u[1]) / sound_speed;
        let w = 2.0 * PI * stft.bin_frequency(fi, sample_rate);
        Complex64::from_polar(1.0, -w * tau)
    })
}

/// Cyclically shifts the outer channels of frames `from_frame..` so that
/// outer channel `i` moves to position `i + k_positions`.
pub fn rotate_array(y: &Array3<Complex64>, k_positions: usize, center_channel: usize, from_frame: usize) -> Array3<Complex64> {
    let c = y.dim().2;
    let outer: Vec<usize> = (0..c).filter(|&ch| ch != center_channel).collect();
    let m = outer.len();
    let mut out = y.clone();
    if m == 0 {
        return out;
    }
    for t in from_frame.min(y.dim().0)..y.dim().0 {
        for (i, &src) in outer.iter().enumerate() {
            let dst = outer[(i + k_positions) % m];
            out.slice_mut(s![t, .., dst]).assign(&y.slice(s![t, .., src]));
        }
    }
    out
}

/// Rotates the outer channels in the second temporal half (`t >= T / 2`).
pub fn rotate_channels(obs: &ObservationSet, k_positions: usize, center_channel: usize) -> Result<ObservationSet> {
    if obs.channels() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rotate_channels needs C >= 3, got {}",
            obs.channels()
        )));
    }
    if center_channel >= obs.channels() {
        return Err(Error::InvalidArgument(format!("center channel {center_channel} out of range")));
    }
    let mut out = obs.clone();
    out.y = rotate_array(&obs.y, k_positions, center_channel, obs.frames() / 2);
    Ok(out)
}

/// Time-axis concatenation.
pub fn concat_segments(a: &ObservationSet, b: &ObservationSet) -> Result<ObservationSet> {
    if a.stft != b.stft || a.sample_rate != b.sample_rate {
        return Err(Error::InvalidArgument("concat: STFT configurations differ".into()));
    }
    if a.frames() == 0 {
        return Ok(b.clone());
    }
    if b.frames() == 0 {
        return Ok(a.clone());
    }
    if a.freqs() != b.freqs() || a.channels() != b.channels() || a.embed_dim() != b.embed_dim() {
        return Err(Error::InvalidArgument(format!(
            "concat: (F, C, D) = {:?} vs {:?}",
            (a.freqs(), a.channels(), a.embed_dim()),
            (b.freqs(), b.channels(), b.embed_dim())
        )));
    }
    Ok(ObservationSet {
        y: ndarray::concatenate(Axis(0), &[a.y.view(), b.y.view()]).expect("shapes checked"),
        e: ndarray::concatenate(Axis(0), &[a.e.view(), b.e.view()]).expect("shapes checked"),
        degenerate: ndarray::concatenate(Axis(0), &[a.degenerate.view(), b.degenerate.view()]).expect("shapes checked"),
        sample_rate: a.sample_rate,
        stft: a.stft,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub speaker: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnLayout {
    pub turns: Vec<Turn>,
    /// Overlap ratio actually realized.
    pub achieved_overlap: f64,
    /// Set when the requested ratio could not be reached.
    pub infeasible: bool,
}

const MAX_OVERLAP_FRACTION: f64 = 0.5;
const TAIL_SILENCE: f64 = 0.5;

/// Overlap ratio of a set of intervals on a 10 ms grid.
pub fn overlap_ratio(turns: &[Turn], duration: f64) -> f64 {
    let n = (duration / 0.01).ceil() as usize + 1;
    let mut count = vec![0u32; n];
    for tr in turns {
        let lo = (tr.start / 0.01).round() as usize;
        let hi = ((tr.end / 0.01).round() as usize).min(n);
        for c in &mut count[lo.min(hi)..hi] {
            *c += 1;
        }
    }
    let speech = count.iter().filter(|&&c| c > 0).count();
    let ov = count.iter().filter(|&&c| c > 1).count();
    if speech == 0 {
        0.0
    } else {
        ov as f64 / speech as f64
    }
}

/// Alternating turns; each transition overlaps by a fixed fraction of the
/// shorter of the two turns, chosen to meet the target ratio.
pub fn layout_turns<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> TurnLayout {
    let end_limit = cfg.duration - TAIL_SILENCE;
    let span = (end_limit - cfg.lead_silence).max(0.0);
    let r = cfg.overlap_ratio;
    let mut lens = Vec::new();
    let mut speakers = Vec::new();
    let mut total = 0.0;
    while total < span * (1.0 + r) + cfg.max_turn {
        lens.push(rng.random_range(cfg.min_turn..=cfg.max_turn));
        let prev = speakers.last().copied();
        let next = if cfg.speakers == 1 {
            0
        } else {
            loop {
                let s = rng.random_range(0..cfg.speakers);
                if Some(s) != prev {
                    break s;
                }
            }
        };
        speakers.push(next);
        total += lens.last().unwrap();
    }
    let mins: f64 = lens.windows(2).map(|w| w[0].min(w[1])).sum();
    let mut frac = if mins > 0.0 && cfg.speakers > 1 {
        r * total / ((1.0 + r) * mins)
    } else {
        0.0
    };
    let mut infeasible = r > 0.0 && cfg.speakers == 1;
    if frac > MAX_OVERLAP_FRACTION {
        frac = MAX_OVERLAP_FRACTION;
        infeasible = true;
    }
    let mut turns = Vec::new();
    let mut start = cfg.lead_silence;
    for (i, (&len, &spk)) in lens.iter().zip(&speakers).enumerate() {
        if start >= end_limit - cfg.min_turn * 0.25 {
            break;
        }
        let end = (start + len).min(end_limit);
        turns.push(Turn {
            speaker: spk,
            start,
            end,
        });
        start = if r > 0.0 {
            let next = lens.get(i + 1).copied().unwrap_or(len);
            end - frac * len.min(next)
        } else {
            end + rng.random_range(0.1..0.5)
        };
    }
    let achieved_overlap = overlap_ratio(&turns, cfg.duration);
    if r > 0.0 && (achieved_overlap - r).abs() > 0.05 {
        infeasible = true;
    }
    TurnLayout {
        turns,
        achieved_overlap,
        infeasible,
    }
}

fn raised_cosine_band(f: f64, lo: f64, hi: f64, edge: f64) -> f64 {
    if f <= lo - edge || f >= hi + edge {
        0.0
    } else if f < lo + edge {
        0.5 - 0.5 * (PI * (f - (lo - edge)) / (2.0 * edge)).cos()
    } else if f > hi - edge {
        0.5 - 0.5 * (PI * ((hi + edge) - f) / (2.0 * edge)).cos()
    } else {
        1.0
    }
}

/// Spectral floor between formant peaks (amplitude, -30 dB).
const VALLEY: f64 = 0.03;
const FORMANTS: usize = 4;
/// Amplitude between words, relative to the word peaks.
const DIP_FLOOR: f64 = 0.3;

/// Amplitude envelope of one speaker (words separated by shallow dips
/// inside turns, zero outside) and the start time of every word.
fn word_envelope<R: Rng + ?Sized>(
    turns: &[Turn],
    speaker: usize,
    samples: usize,
    fs: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut env = vec![0.0; samples];
    let mut starts = Vec::new();
    let ramp = (0.02 * fs) as usize;
    for tr in turns.iter().filter(|t| t.speaker == speaker) {
        let lo = (tr.start * fs) as usize;
        let hi = ((tr.end * fs) as usize).min(samples);
        env[lo.min(hi)..hi].fill(DIP_FLOOR);
        let mut cursor = tr.start;
        while cursor < tr.end {
            starts.push(cursor);
            let word = rng.random_range(0.15..0.6);
            let gain = rng.random_range(0.6..1.0);
            let lo = (cursor * fs) as usize;
            let hi = ((((cursor + word).min(tr.end)) * fs) as usize).min(samples);
            let n = hi.saturating_sub(lo);
            for (j, v) in env[lo.min(hi)..hi].iter_mut().enumerate() {
                let edge = j.min(n - 1 - j);
                let w = if edge < ramp {
                    0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
                *v = DIP_FLOOR + (gain - DIP_FLOOR) * w;
            }
            cursor += word + rng.random_range(0.05..0.2);
        }
    }
    (env, starts)
}

/// Band-limited noise surrogate for one speaker: white noise shaped by a
/// narrow-formant filter drawn per word, times the word envelope, scaled to
/// unit mean power over the speaker's turns.
fn speech_surrogate<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    turns: &[Turn],
    speaker: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let fs = cfg.sample_rate;
    let hi = (3800.0f64).min(0.95 * fs / 2.0);
    let (env, starts) = word_envelope(turns, speaker, samples, fs, rng);
    let nf = cfg.stft.num_bins();
    let freqs: Vec<f64> = (0..nf).map(|fi| cfg.stft.bin_frequency(fi, fs)).collect();
    let filters: Vec<Vec<f64>> = starts
        .iter()
        .map(|_| {
            let bumps: Vec<(f64, f64)> = (0..FORMANTS)
                .map(|_| (rng.random_range(200.0..hi), rng.random_range(40.0..120.0)))
                .collect();
            freqs
                .iter()
                .map(|&f| {
                    let g: f64 = bumps
                        .iter()
                        .map(|&(c, w)| (-(f - c) * (f - c) / (2.0 * w * w)).exp())
                        .sum();
                    raised_cosine_band(f, 150.0, hi, 50.0) * (VALLEY + g)
                })
                .collect()
        })
        .collect();
    let white: Vec<f64> = (0..samples).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = stft_channel(&white, &cfg.stft)?;
    let h = cfg.stft.frame_shift as f64 / fs;
    let center = cfg.stft.frame_length as f64 / (2.0 * fs);
    for (t, mut row) in spec.rows_mut().into_iter().enumerate() {
        let tc = t as f64 * h + center;
        let w = starts.partition_point(|&s| s <= tc);
        if w == 0 {
            continue;
        }
        for (v, g) in row.iter_mut().zip(&filters[w - 1]) {
            *v *= *g;
        }
    }
    let mut x = istft_channel(spec.view(), &cfg.stft)?;
    x.resize(samples, 0.0);
    let mut active = 0usize;
    let mut power = 0.0;
    for tr in turns.iter().filter(|t| t.speaker == speaker) {
        let lo = (tr.start * fs) as usize;
        let hi = ((tr.end * fs) as usize).min(samples);
        active += hi.saturating_sub(lo);
        power += (lo..hi).map(|n| (x[n] * env[n]).powi(2)).sum::<f64>();
    }
    let scale = if power > 0.0 { (active as f64 / power).sqrt() } else { 0.0 };
    Ok(x.iter().zip(&env).map(|(v, e)| v * e * scale).collect())
}

/// Mixing matrices `[F]` of `C x C` factors `A` with `A A^T` the diffuse
/// coherence (spherically isotropic, plus 10% spatially white).
fn diffuse_factors(mics: &Array2<f64>, cfg: &ScenarioConfig) -> Vec<DMatrix<f64>> {
    let c = mics.nrows();
    (0..cfg.stft.num_bins())
        .map(|fi| {
            let f = cfg.stft.bin_frequency(fi, cfg.sample_rate);
            let gamma = DMatrix::from_fn(c, c, |i, j| {
                let d = ((mics[[i, 0]] - mics[[j, 0]]).powi(2) + (mics[[i, 1]] - mics[[j, 1]]).powi(2)).sqrt();
                let x = 2.0 * PI * f * d / cfg.sound_speed;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
                0.9 * sinc + if i == j { 0.1 } else { 0.0 }
            });
            let eig = SymmetricEigen::new(gamma);
            let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sq)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `[K, T]` 0/1.
    pub activity: Array2<f64>,
    /// `[K, T, F]` 0/1, speaker at least 3 dB above everything else.
    pub oracle_masks: Array3<f64>,
    /// `[K, T, F]` source images at the center microphone.
    pub clean_stfts: Array3<Complex64>,
    /// `[T, F]` noise at the center microphone.
    pub noise_stft: Array2<Complex64>,
    /// `[K, T]` location index per frame.
    pub location_track: Array2<f64>,
    /// `[locations, F, C]`.
    pub steering: Array3<Complex64>,
    /// `[K, D]`.
    pub embed_mu: Array2<f64>,
    pub segments: Vec<Segment>,
    pub achieved_overlap: f64,
    pub infeasible_overlap: bool,
}

impl GroundTruth {
    pub fn speakers(&self) -> usize {
        self.activity.nrows()
    }

    pub fn activity_bool(&self) -> Array2<bool> {
        self.activity.mapv(|v| v > 0.5)
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor::f64("activity", self.activity.clone()),
            NamedTensor::f64("oracle_masks", self.oracle_masks.clone()),
            NamedTensor::c128("clean_stfts", self.clean_stfts.clone()),
            NamedTensor::c128("noise_stft", self.noise_stft.clone()),
            NamedTensor::f64("location_track", self.location_track.clone()),
            NamedTensor::c128("steering", self.steering.clone()),
            NamedTensor::f64("embed_mu", self.embed_mu.clone()),
            NamedTensor::f64("achieved_overlap", Array1::from(vec![self.achieved_overlap])),
        ]
    }

    /// Reads the tensors; `segments` come from the reference RTTM.
    pub fn from_archive(a: &Archive, segments: Vec<Segment>) -> Result<Self> {
        Ok(GroundTruth {
            activity: a.f64_dim("activity")?,
            oracle_masks: a.f64_dim("oracle_masks")?,
            clean_stfts: a.c128_dim("clean_stfts")?,
            noise_stft: a.c128_dim("noise_stft")?,
            location_track: a.f64_dim("location_track")?,
            steering: a.c128_dim("steering")?,
            embed_mu: a.f64_dim("embed_mu")?,
            segments,
            achieved_overlap: a.scalar("achieved_overlap")?,
            infeasible_overlap: false,
        })
    }
}

/// A simulated recording: normalized observations, the raw multichannel
/// STFT, frame log energies for the VAD and the ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub obs: ObservationSet,
    /// `[T, F, C]`.
    pub raw: Array3<Complex64>,
    pub log_energy: Vec<f64>,
    pub truth: GroundTruth,
}

impl Scene {
    /// Observation archive entries plus `stft` (raw) and `log_energy`.
    pub fn obs_entries(&self) -> Vec<NamedTensor> {
        let mut v = self.obs.to_entries();
        v.push(NamedTensor::c128("stft", self.raw.clone()));
        v.push(NamedTensor::f64("log_energy", Array1::from(self.log_energy.clone())));
        v
    }

    /// Center-channel mixture waveform.
    pub fn mixture_wave(&self) -> Result<Vec<f64>> {
        istft_channel(self.raw.slice(s![.., .., 0]), &self.obs.stft)
    }

    pub fn clean_wave(&self, k: usize) -> Result<Vec<f64>> {
        istft_channel(self.truth.clean_stfts.index_axis(Axis(0), k), &self.obs.stft)
    }
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r
}

fn pick_azimuths<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<f64> {
    if let Some(a) = &cfg.azimuths {
        return a.clone();
    }
    let min_sep = (360.0 / cfg.speakers as f64 / 2.0).min(45.0);
    let mut out: Vec<f64> = Vec::new();
    while out.len() < cfg.speakers {
        let a = rng.random_range(0.0..360.0);
        let ok = out.iter().all(|&b: &f64| {
            let d = (a - b).rem_euclid(360.0);
            d.min(360.0 - d) >= min_sep
        });
        if ok {
            out.push(a);
        }
    }
    out
}

/// Generates a scene; identical configurations give bit-identical scenes.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Scene> {
    cfg.validate()?;
    let fs = cfg.sample_rate;
    let n = cfg.speakers;
    let t_frames = cfg.frames();
    let samples = cfg.stft.num_samples(t_frames);
    let nf = cfg.stft.num_bins();
    let c = cfg.channels;
    let half = t_frames / 2;

    let mut layout_rng = stream(cfg.seed, 0);
    let azimuths = pick_azimuths(cfg, &mut layout_rng);
    let layout = layout_turns(cfg, &mut layout_rng);

    let sources = par::map_range(n, |k| {
        let mut rng = stream(cfg.seed, 16 + k as u64);
        let x = speech_surrogate(cfg, &layout.turns, k, samples, &mut rng)?;
        stft_channel(&x, &cfg.stft)
    });
    let mut clean = Array3::zeros((n, t_frames, nf));
    for (k, sk) in sources.into_iter().enumerate() {
        clean.index_axis_mut(Axis(0), k).assign(&sk?);
    }

    let mics = mic_positions(c, cfg.radius);
    let moved = cfg.relocation != Relocation::None;
    let n_loc = if moved { 2 * n } else { n };
    let mut steering = Array3::zeros((n_loc, nf, c));
    for loc in 0..n_loc {
        let az = azimuths[loc % n] + if loc >= n { cfg.move_angle() } else { 0.0 };
        steering
            .index_axis_mut(Axis(0), loc)
            .assign(&steering_vector(az, &mics, &cfg.stft, fs, cfg.sound_speed));
    }
    let location_track = Array2::from_shape_fn((n, t_frames), |(k, t)| {
        if moved && t >= half {
            (n + k) as f64
        } else {
            k as f64
        }
    });

    let h = cfg.stft.frame_shift as f64 / fs;
    let center = cfg.stft.frame_length as f64 / (2.0 * fs);
    let activity = Array2::from_shape_fn((n, t_frames), |(k, t)| {
        let tc = t as f64 * h + center;
        let on = layout.turns.iter().any(|tr| tr.speaker == k && tr.start <= tc && tc < tr.end);
        f64::from(u8::from(on))
    });

    let mut active_power = 0.0;
    let mut active_count = 0usize;
    for k in 0..n {
        for t in 0..t_frames {
            if activity[[k, t]] > 0.5 {
                active_power += clean.slice(s![k, t, ..]).iter().map(|v| v.norm_sqr()).sum::<f64>();
                active_count += nf;
            }
        }
    }
    let speech_power = if active_count > 0 { active_power / active_count as f64 } else { 1.0 };
    let noise_sd = (cfg.noise_level * speech_power / 2.0).sqrt();

    let mut raw = Array3::<Complex64>::zeros((t_frames, nf, c));
    let loc_at = |k: usize, t: usize| if cfg.relocation == Relocation::Move && t >= half { n + k } else { k };
    for t in 0..t_frames {
        for k in 0..n {
            let loc = loc_at(k, t);
            for fi in 0..nf {
                let sv = clean[[k, t, fi]];
                if sv == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for ch in 0..c {
                    raw[[t, fi, ch]] += steering[[loc, fi, ch]] * sv;
                }
            }
        }
    }

    let mut noise_rng = stream(cfg.seed, 1);
    let factors = diffuse_factors(&mics, cfg);
    let mut noise_ref = Array2::zeros((t_frames, nf));
    if cfg.noise_level > 0.0 {
        for t in 0..t_frames {
            for (fi, a) in factors.iter().enumerate() {
                let g: Vec<Complex64> = (0..c)
                    .map(|_| {
                        Complex64::new(noise_rng.sample(StandardNormal), noise_rng.sample(StandardNormal)) * noise_sd
                    })
                    .collect();
                for ch in 0..c {
                    let mut v = Complex64::new(0.0, 0.0);
                    for (j, gj) in g.iter().enumerate() {
                        v += gj * a[(ch, j)];
                    }
                    raw[[t, fi, ch]] += v;
                    if ch == 0 {
                        noise_ref[[t, fi]] = v;
                    }
                }
            }
        }
    }

    if cfg.relocation == Relocation::Rotate {
        raw = rotate_array(&raw, cfg.rotate_positions, 0, half);
    }

    let dominance = 10f64.powf(0.3);
    let mut oracle_masks = Array3::zeros((n, t_frames, nf));
    for t in 0..t_frames {
        for fi in 0..nf {
            let pw: Vec<f64> = (0..n).map(|k| clean[[k, t, fi]].norm_sqr()).collect();
            let total: f64 = pw.iter().sum::<f64>() + noise_ref[[t, fi]].norm_sqr();
            for k in 0..n {
                if pw[k] > 0.0 && pw[k] >= dominance * (total - pw[k]) {
                    oracle_masks[[k, t, fi]] = 1.0;
                }
            }
        }
    }

    let mut emb_rng = stream(cfg.seed, 2);
    let mut embed_mu = Array2::zeros((n, cfg.embed_dim));
    for k in 0..n {
        embed_mu.row_mut(k).assign(&random_unit_vector(cfg.embed_dim, &mut emb_rng));
    }
    let noise_mu = random_unit_vector(cfg.embed_dim, &mut emb_rng);
    let mut e = Array2::zeros((t_frames, cfg.embed_dim));
    for t in 0..t_frames {
        let on: Vec<usize> = (0..n).filter(|&k| activity[[k, t]] > 0.5).collect();
        let (mu, kappa) = match on.len() {
            0 => (noise_mu.clone(), cfg.embed_kappa),
            1 => (embed_mu.row(on[0]).to_owned(), cfg.embed_kappa),
            _ => {
                let mut m = Array1::zeros(cfg.embed_dim);
                for &k in &on {
                    m += &embed_mu.row(k);
                }
                let norm = m.dot(&m).sqrt();
                if norm > 1e-12 {
                    m /= norm;
                } else {
                    m = noise_mu.clone();
                }
                (m, cfg.embed_kappa / 2.0)
            }
        };
        e.row_mut(t).assign(&sample_vmf(mu.view(), kappa, 1, &mut emb_rng).row(0));
    }

    let obs = ObservationSet::from_raw(&raw, &e, fs, cfg.stft)?;
    let wave = istft(raw.view(), &cfg.stft)?;
    let log_energy = frame_log_energy(wave.view(), &cfg.stft);

    let segments = layout
        .turns
        .iter()
        .map(|tr| Segment {
            speaker: speaker_name(tr.speaker),
            start: tr.start,
            end: tr.end,
        })
        .collect();

    Ok(Scene {
        obs,
        raw,
        log_energy,
        truth: GroundTruth {
            activity,
            oracle_masks,
            clean_stfts: clean,
            noise_stft: noise_ref,
            location_track,
            steering,
            embed_mu,
            segments,
            achieved_overlap: layout.achieved_overlap,
            infeasible_overlap: layout.infeasible,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            duration: 8.0,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = small(3);
        cfg.azimuths = Some(vec![10.0, 200.0]);
        cfg.relocation = Relocation::Move;
        let back = ScenarioConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(ScenarioConfig::parse("speakerz = 2").is_err());
        assert!(ScenarioConfig::parse("speakers = 2\nazimuths = 1").is_err());
    }

    #[test]
    fn rotation_group() {
        let y = Array3::from_shape_fn((4, 2, 7), |(t, f, c)| Complex64::new((t * 100 + f * 10 + c) as f64, 0.0));
        assert_eq!(rotate_array(&y, 0, 0, 2), y);
        let mut r = y.clone();
        for _ in 0..3 {
            r = rotate_array(&r, 2, 0, 2);
        }
        assert_eq!(r, y);
        let once = rotate_array(&y, 2, 0, 2);
        assert_eq!(once.slice(s![..2, .., ..]), y.slice(s![..2, .., ..]));
        assert_eq!(once[[3, 1, 3]], y[[3, 1, 1]]);
        assert_eq!(once[[3, 1, 0]], y[[3, 1, 0]]);
    }

    #[test]
    fn rotation_equals_move() {
        let mics = mic_positions(7, 0.0425);
        let cfg = ScenarioConfig::default();
        let d = steering_vector(30.0, &mics, &cfg.stft, 8000.0, 343.0);
        let moved = steering_vector(30.0 + cfg.move_angle(), &mics, &cfg.stft, 8000.0, 343.0);
        let y = d.clone().insert_axis(Axis(0));
        let r = rotate_array(&y, 2, 0, 0);
        for (a, b) in r.iter().zip(moved.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let a = simulate(&small(5)).unwrap();
        let b = simulate(&small(5)).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.obs.e, b.obs.e);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&small(6)).unwrap();
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn no_overlap_when_ratio_zero() {
        for seed in 0..5 {
            let mut cfg = small(seed);
            cfg.overlap_ratio = 0.0;
            let s = simulate(&cfg).unwrap();
            let act = &s.truth.activity;
            for t in 0..act.ncols() {
                assert!(act.column(t).sum() <= 1.0);
            }
        }
    }

    #[test]
    fn overlap_target_met() {
        for seed in 0..5 {
            let cfg = ScenarioConfig {
                seed,
                ..ScenarioConfig::default()
            };
            let mut rng = stream(seed, 0);
            let lay = layout_turns(&cfg, &mut rng);
            assert!((lay.achieved_overlap - 0.2).abs() < 0.05, "{}", lay.achieved_overlap);
            assert!(!lay.infeasible);
            assert!(lay.turns.iter().all(|t| t.start >= 0.0 && t.end <= cfg.duration && t.start < t.end));
        }
        let mut cfg = ScenarioConfig::default();
        cfg.overlap_ratio = 0.9;
        let lay = layout_turns(&cfg, &mut stream(0, 0));
        assert!(lay.infeasible);
    }

    #[test]
    fn oracle_masks_partition() {
        let s = simulate(&small(1)).unwrap();
        let m = &s.truth.oracle_masks;
        for t in 0..m.dim().1 {
            for f in 0..m.dim().2 {
                assert!(m.slice(s![.., t, f]).sum() <= 1.0);
            }
        }
        assert!(m.sum() > 0.0);
    }

    #[test]
    fn relocation_tracks() {
        let mut cfg = small(2);
        cfg.relocation = Relocation::Move;
        let s = simulate(&cfg).unwrap();
        for k in 0..2 {
            let mut v: Vec<i64> = s.truth.location_track.row(k).iter().map(|&x| x as i64).collect();
            v.dedup();
            assert_eq!(v.len(), 2);
        }
    }

    #[test]
    fn embeddings_classifiable() {
        let mut cfg = small(4);
        cfg.embed_kappa = 50.0;
        cfg.overlap_ratio = 0.0;
        let s = simulate(&cfg).unwrap();
        let mut right = 0;
        let mut total = 0;
        for t in 0..s.obs.frames() {
            let on: Vec<usize> = (0..2).filter(|&k| s.truth.activity[[k, t]] > 0.5).collect();
            if on.len() != 1 {
                continue;
            }
            let scores: Vec<f64> = (0..2).map(|k| s.truth.embed_mu.row(k).dot(&s.obs.e.row(t))).collect();
            let best = if scores[0] >= scores[1] { 0 } else { 1 };
            right += usize::from(best == on[0]);
            total += 1;
        }
        assert!(right as f64 >= 0.99 * total as f64);
    }
}

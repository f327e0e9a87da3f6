//! Stages from a simulated scene to scores, shared by the command-line tool
//! and the tests.
//!
//! Directory layout written by [`run_to_dir`]:
//!
//! | file | content |
//! |---|---|
//! | `scenario.cfg` | the scenario, all keys |
//! | `obs.tna` | observations plus raw `stft` and `log_energy` |
//! | `truth.tna`, `truth.rttm`, `mixture.wav` | ground truth |
//! | `init.tna` | initial posteriors |
//! | `<model>.tna` | fitted state |
//! | `<model>_masks.tna` | masks and frame activity |
//! | `<model>.rttm` | diarization |
//! | `beam_<model>/spk<k>.wav` | beamformed speakers |
//! | `report.txt` | scores |
//! | `provenance.txt` | one line per stage |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Ix1, Ix2, Ix3};
use num_complex::Complex64;

use crate::archive::{Archive, NamedTensor};
use crate::beamformer::extract_speaker;
use crate::error::{Error, Result};
use crate::init::{initialize, InitConfig, InitPosterior};
use crate::loose::{loose_fit, LooseState};
use crate::masks::{extract_masks, MaskResult, DEFAULT_TAU};
use crate::metrics::{best_assignment, der_breakdown, mask_divergence, si_sdr, DerBreakdown, DEFAULT_COLLAR};
use crate::obs::{read_stft_config, ObservationSet};
use crate::postprocess::{
    activity_to_segments, parse_rttm, remove_duplicates, smooth_activity, speaker_name, to_rttm, Diarization,
    DuplicateConfig, SmoothConfig,
};
use crate::sim::{simulate, GroundTruth, Scene, ScenarioConfig};
use crate::stft::{istft_channel, StftConfig};
use crate::tight::{cacgmm_fit, tight_fit, TightConfig, TightState};
use crate::wav::{read_wav, write_wav, WavFormat};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    Cacgmm,
    Tight,
    Loose,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Cacgmm, ModelKind::Tight, ModelKind::Loose];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cacgmm => "cacgmm",
            ModelKind::Tight => "tight",
            ModelKind::Loose => "loose",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model {s:?} (cacgmm, tight, loose)")))
    }

    fn code(self) -> f64 {
        self as u8 as f64
    }

    fn from_code(v: f64) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.code() == v)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model code {v}")))
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone)]
pub enum Fitted {
    Loose(LooseState),
    Tight(TightState),
    Cacgmm(TightState),
}

/// Fits `kind` from an initial posterior. The spatial-only and tight models
/// start from `z_spec0` broadcast over frequency.
pub fn fit(kind: ModelKind, obs: &ObservationSet, init: &InitPosterior, iters: usize) -> Result<Fitted> {
    Ok(match kind {
        ModelKind::Loose => Fitted::Loose(loose_fit(obs, init.delta0().view(), iters)?),
        ModelKind::Tight => Fitted::Tight(tight_fit(
            obs,
            init.tight_posterior(obs.freqs()).view(),
            &TightConfig { iters, spectral: true },
        )?),
        ModelKind::Cacgmm => Fitted::Cacgmm(cacgmm_fit(obs, init.tight_posterior(obs.freqs()).view(), iters)?),
    })
}

impl Fitted {
    pub fn kind(&self) -> ModelKind {
        match self {
            Fitted::Loose(_) => ModelKind::Loose,
            Fitted::Tight(_) => ModelKind::Tight,
            Fitted::Cacgmm(_) => ModelKind::Cacgmm,
        }
    }

    pub fn loglik(&self) -> &[f64] {
        match self {
            Fitted::Loose(s) => &s.loglik,
            Fitted::Tight(s) | Fitted::Cacgmm(s) => &s.loglik,
        }
    }

    /// Soft speaker activity `[K, T]`: `gamma` for the loose model, the
    /// frequency-averaged posterior otherwise.
    pub fn frame_activity(&self) -> Array2<f64> {
        match self {
            Fitted::Loose(s) => s.gamma.clone(),
            Fitted::Tight(s) | Fitted::Cacgmm(s) => s.frame_posterior(),
        }
    }

    /// Speaker prototypes, absent for the spatial-only model.
    pub fn mu(&self) -> Option<Array2<f64>> {
        match self {
            Fitted::Loose(s) => Some(s.params.vmf.mu.clone()),
            Fitted::Tight(s) => s.params.vmf.as_ref().map(|v| v.mu.clone()),
            Fitted::Cacgmm(_) => None,
        }
    }

    pub fn masks(&self, tau: f64) -> Masks {
        let (masks, detail) = match self {
            Fitted::Loose(s) => {
                let r = extract_masks(s.delta().view(), tau);
                (r.masks.clone(), Some(r))
            }
            Fitted::Tight(s) | Fitted::Cacgmm(s) => (s.posterior.clone(), None),
        };
        Masks {
            kind: self.kind(),
            masks,
            activity: self.frame_activity(),
            mu: self.mu(),
            detail,
        }
    }

    pub fn to_entries(&self) -> Vec<NamedTensor> {
        let mut v = match self {
            Fitted::Loose(s) => s.to_entries(),
            Fitted::Tight(s) | Fitted::Cacgmm(s) => s.to_entries(),
        };
        v.push(NamedTensor::f64("model", ndarray::arr1(&[self.kind().code()])));
        v
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        Ok(match ModelKind::from_code(a.scalar("model")?)? {
            ModelKind::Loose => Fitted::Loose(LooseState::from_archive(a)?),
            ModelKind::Tight => Fitted::Tight(TightState::from_archive(a)?),
            ModelKind::Cacgmm => Fitted::Cacgmm(TightState::from_archive(a)?),
        })
    }
}

/// Masks with what diarization needs downstream.
#[derive(Debug, Clone)]
pub struct Masks {
    pub kind: ModelKind,
    /// `[K, T, F]`.
    pub masks: Array3<f64>,
    /// `[K, T]` soft activity.
    pub activity: Array2<f64>,
    pub mu: Option<Array2<f64>>,
    /// Mask heuristic internals, loose model only; not read back.
    pub detail: Option<MaskResult>,
}

impl Masks {
    pub fn to_entries(&self) -> Vec<NamedTensor> {
        let mut v = vec![
            NamedTensor::f64("model", ndarray::arr1(&[self.kind.code()])),
            NamedTensor::f64("activity", self.activity.clone()),
        ];
        if let Some(mu) = &self.mu {
            v.push(NamedTensor::f64("mu", mu.clone()));
        }
        match &self.detail {
            Some(d) => v.extend(d.to_entries()),
            None => v.push(NamedTensor::f64("masks", self.masks.clone())),
        }
        v
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        Ok(Masks {
            kind: ModelKind::from_code(a.scalar("model")?)?,
            masks: a.f64_dim::<Ix3>("masks")?,
            activity: a.f64_dim::<Ix2>("activity")?,
            mu: if a.contains("mu") { Some(a.f64_dim::<Ix2>("mu")?) } else { None },
            detail: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiarizeConfig {
    pub smooth: SmoothConfig,
    pub dedup: DuplicateConfig,
}

/// Smoothing, duplicate removal (when prototypes are known) and segmentation.
/// Surviving speakers keep their component index in the segment names.
pub fn diarize(
    activity: ArrayView2<f64>,
    mu: Option<ArrayView2<f64>>,
    frame_shift: usize,
    sample_rate: f64,
    cfg: &DiarizeConfig,
) -> Diarization {
    let frame_rate = sample_rate / frame_shift as f64;
    let smooth = smooth_activity(activity, frame_rate, &cfg.smooth);
    let (kept, act) = match mu {
        Some(mu) => {
            let d = remove_duplicates(smooth.view(), mu, &cfg.dedup);
            (d.kept, d.activity)
        }
        None => ((0..smooth.nrows()).collect(), smooth),
    };
    let mut d = activity_to_segments(act.view(), frame_shift, sample_rate);
    for s in &mut d.segments {
        let row: usize = s.speaker.trim_start_matches("spk").parse().expect("generated name");
        s.speaker = speaker_name(kept[row]);
    }
    d
}

/// MVDR output waveform per mask, from the raw `[T, F, C]` STFT.
pub fn beamform(
    raw: ArrayView3<Complex64>,
    masks: ArrayView3<f64>,
    ref_channel: usize,
    stft: &StftConfig,
) -> Result<Vec<Vec<f64>>> {
    if ref_channel >= raw.dim().2 {
        return Err(Error::InvalidArgument(format!(
            "reference channel {ref_channel} out of range for {} channels",
            raw.dim().2
        )));
    }
    if masks.dim().1 != raw.dim().0 || masks.dim().2 != raw.dim().1 {
        return Err(Error::Shape(format!("masks {:?} do not match STFT {:?}", masks.dim(), raw.dim())));
    }
    (0..masks.dim().0)
        .map(|k| istft_channel(extract_speaker(raw, masks, k, ref_channel).stft.view(), stft))
        .collect()
}

/// SI-SDR of each reference under the best one-to-one assignment of
/// estimates. References without an estimate score `-SI_SDR_CAP`.
pub fn matched_si_sdr(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut score = Array2::zeros((references.len(), estimates.len()));
    for (i, r) in references.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            let m = r.len().min(e.len());
            score[[i, j]] = si_sdr(&e[..m], &r[..m])?;
        }
    }
    let shifted = score.mapv(|v| v + crate::metrics::SI_SDR_CAP);
    let mut out = vec![-crate::metrics::SI_SDR_CAP; references.len()];
    for (i, j) in best_assignment(&shifted) {
        out[i] = score[[i, j]];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub models: Vec<ModelKind>,
    pub iters: usize,
    /// Initialize the speaker posteriors from the true activity.
    pub oracle_init: bool,
    pub init: InitConfig,
    pub tau: f64,
    pub diarize: DiarizeConfig,
    pub collar: f64,
    pub ref_channel: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            models: ModelKind::ALL.to_vec(),
            iters: 100,
            oracle_init: true,
            init: InitConfig::default(),
            tau: DEFAULT_TAU,
            diarize: DiarizeConfig::default(),
            collar: DEFAULT_COLLAR,
            ref_channel: 0,
        }
    }
}

/// `K` speakers and `L = 2K + 1` locations.
pub fn init_scene(scene: &Scene, cfg: &PipelineConfig) -> Result<InitPosterior> {
    let k = scene.truth.speakers();
    let oracle = cfg.oracle_init.then(|| scene.truth.activity.view());
    initialize(&scene.obs, &scene.log_energy, k, 2 * k + 1, oracle, &cfg.init)
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub fitted: Fitted,
    pub masks: Masks,
    pub diarization: Diarization,
}

pub fn run_model(kind: ModelKind, obs: &ObservationSet, init: &InitPosterior, cfg: &PipelineConfig) -> Result<ModelRun> {
    let fitted = fit(kind, obs, init, cfg.iters)?;
    let masks = fitted.masks(cfg.tau);
    let diarization = diarize(
        masks.activity.view(),
        masks.mu.as_ref().map(|m| m.view()),
        obs.stft.frame_shift,
        obs.sample_rate,
        &cfg.diarize,
    );
    Ok(ModelRun {
        fitted,
        masks,
        diarization,
    })
}

/// Flat `key = value` scores, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    /// Single line `name k=v k=v ...`.
    pub fn summary_line(&self, name: &str) -> String {
        let mut s = name.to_string();
        for (k, v) in &self.entries {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

fn push_der(r: &mut Report, model: &str, b: &DerBreakdown) {
    r.push(format!("{model}.der"), format!("{:.6}", b.der()));
    r.push(format!("{model}.missed"), format!("{:.6}", b.missed / b.total));
    r.push(format!("{model}.false_alarm"), format!("{:.6}", b.false_alarm / b.total));
    r.push(format!("{model}.confusion"), format!("{:.6}", b.confusion / b.total));
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

// ---------------------------------------------------------------- file I/O

/// Appends `stage=<s> seed=<n> version=<v> command=<...>` to `provenance.txt`.
pub fn append_provenance(dir: &Path, stage: &str, seed: Option<u64>, command: &str) -> Result<()> {
    let path = dir.join("provenance.txt");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    writeln!(f, "stage={stage} seed={seed} version=diarsep-{VERSION} command={command}").map_err(|e| Error::io(&path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_mono(path: &Path, x: &[f64], sample_rate: f64) -> Result<()> {
    let a = Array2::from_shape_vec((x.len(), 1), x.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
    write_wav(path, a.view(), sample_rate, WavFormat::Float32)
}

fn read_mono(path: &Path) -> Result<Vec<f64>> {
    Ok(read_wav(path)?.0.column(0).to_vec())
}

/// Writes `scenario.cfg`, `obs.tna`, `truth.tna`, `truth.rttm` and `mixture.wav`.
pub fn write_scene(scene: &Scene, scenario: &ScenarioConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("scenario.cfg"), &scenario.to_text())?;
    Archive::from(scene.obs_entries()).write(dir.join("obs.tna"))?;
    let mut truth = Archive::from(scene.truth.to_entries());
    truth.push(timing_entry(&scene.obs));
    truth.write(dir.join("truth.tna"))?;
    let truth_rttm = to_rttm(
        &Diarization {
            segments: scene.truth.segments.clone(),
            frame_activity: scene.truth.activity_bool(),
        },
        "truth",
    );
    write_text(&dir.join("truth.rttm"), &truth_rttm)?;
    write_mono(&dir.join("mixture.wav"), &scene.mixture_wave()?, scenario.sample_rate)
}

/// Observations from an archive written by [`write_scene`], with the raw
/// STFT and log energies when present.
#[derive(Debug, Clone)]
pub struct ObsBundle {
    pub obs: ObservationSet,
    pub raw: Option<Array3<Complex64>>,
    pub log_energy: Option<Vec<f64>>,
}

pub fn read_obs(path: &Path) -> Result<ObsBundle> {
    let a = Archive::read(path)?;
    let obs = ObservationSet::from_archive(&a)?;
    let raw = if a.contains("stft") { Some(a.c128_dim::<ndarray::Ix3>("stft")?) } else { None };
    let log_energy = if a.contains("log_energy") {
        Some(a.f64_dim::<Ix1>("log_energy")?.to_vec())
    } else {
        None
    };
    Ok(ObsBundle { obs, raw, log_energy })
}

impl ObsBundle {
    /// Stored log energies, or ones recomputed from the raw STFT.
    pub fn log_energy(&self) -> Result<Vec<f64>> {
        if let Some(e) = &self.log_energy {
            return Ok(e.clone());
        }
        let raw = self
            .raw
            .as_ref()
            .ok_or_else(|| Error::MissingEntry("log_energy or stft".into()))?;
        let wave = crate::stft::istft(raw.view(), &self.obs.stft)?;
        Ok(crate::stft::frame_log_energy(wave.view(), &self.obs.stft))
    }
}

/// Frame timing `(frame_shift, sample_rate)` kept next to states and masks.
fn timing_entry(obs: &ObservationSet) -> NamedTensor {
    NamedTensor::f64(
        "stft_config",
        Array1::from(vec![
            obs.stft.frame_length as f64,
            obs.stft.frame_shift as f64,
            obs.stft.fft_length as f64,
            obs.sample_rate,
            obs.stft.window.code(),
        ]),
    )
}

pub fn write_state(path: &Path, fitted: &Fitted, obs: &ObservationSet) -> Result<()> {
    let mut a = Archive::from(fitted.to_entries());
    a.push(timing_entry(obs));
    a.write(path)
}

pub fn write_masks(path: &Path, masks: &Masks, stft: &StftConfig, sample_rate: f64) -> Result<()> {
    let mut a = Archive::from(masks.to_entries());
    a.push(NamedTensor::f64(
        "stft_config",
        Array1::from(vec![
            stft.frame_length as f64,
            stft.frame_shift as f64,
            stft.fft_length as f64,
            sample_rate,
            stft.window.code(),
        ]),
    ));
    a.write(path)
}

/// Soft activity, prototypes and timing from a state or masks archive.
pub fn read_activity_source(path: &Path) -> Result<(Array2<f64>, Option<Array2<f64>>, StftConfig, f64)> {
    let a = Archive::read(path)?;
    let (stft, sr) = read_stft_config(&a)?;
    if a.contains("masks") {
        let m = Masks::from_archive(&a)?;
        Ok((m.activity, m.mu, stft, sr))
    } else {
        let f = Fitted::from_archive(&a)?;
        Ok((f.frame_activity(), f.mu(), stft, sr))
    }
}

/// Ground truth and reference segments from a directory written by [`write_scene`].
pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let segments = parse_rttm(&read_text(&dir.join("truth.rttm"))?)?;
    GroundTruth::from_archive(&Archive::read(dir.join("truth.tna"))?, segments)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scores every `<name>.rttm`, `<name>_masks.tna` and `beam_<name>/` found in
/// `dir` against the truth in `truth_dir`.
pub fn evaluate_dir(dir: &Path, truth_dir: &Path, collar: f64) -> Result<Report> {
    let truth_archive = Archive::read(truth_dir.join("truth.tna"))?;
    let truth = read_truth(truth_dir)?;
    let mut r = Report::default();
    r.push("achieved_overlap", format!("{:.6}", truth.achieved_overlap));
    let entries = sorted_entries(dir)?;
    for p in &entries {
        let name = stem(p);
        if p.extension().is_some_and(|e| e == "rttm") && name != "truth" {
            let hyp = parse_rttm(&read_text(p)?)?;
            push_der(&mut r, &name, &der_breakdown(&truth.segments, &hyp, collar)?);
        }
    }
    for p in &entries {
        if let Some(model) = stem(p).strip_suffix("_masks") {
            let m = Masks::from_archive(&Archive::read(p)?)?;
            r.push(
                format!("{model}.mask_divergence"),
                format!("{:.6}", mask_divergence(m.masks.view(), truth.oracle_masks.view())),
            );
        }
    }
    let beams: Vec<(String, &PathBuf)> = entries
        .iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| stem(p).strip_prefix("beam_").map(|m| (m.to_string(), p)))
        .collect();
    if beams.is_empty() {
        return Ok(r);
    }
    let (stft, _) = read_stft_config(&truth_archive)?;
    let refs = (0..truth.speakers())
        .map(|k| istft_channel(truth.clean_stfts.index_axis(Axis(0), k), &stft))
        .collect::<Result<Vec<_>>>()?;
    let mix = read_mono(&truth_dir.join("mixture.wav"))?;
    let mix_sdr = mean(
        &refs
            .iter()
            .map(|rf| {
                let m = rf.len().min(mix.len());
                si_sdr(&mix[..m], &rf[..m])
            })
            .collect::<Result<Vec<_>>>()?,
    );
    r.push("mixture.si_sdr", format!("{mix_sdr:.4}"));
    for (model, p) in beams {
        let mut est = Vec::new();
        for w in sorted_entries(p)? {
            if w.extension().is_some_and(|e| e == "wav") {
                est.push(read_mono(&w)?);
            }
        }
        let sdr = mean(&matched_si_sdr(&est, &refs)?);
        r.push(format!("{model}.si_sdr"), format!("{sdr:.4}"));
        r.push(format!("{model}.si_sdr_improvement"), format!("{:.4}", sdr - mix_sdr));
    }
    Ok(r)
}

/// Writes the outputs of one model run next to the scene.
pub fn write_model_run(dir: &Path, run: &ModelRun, obs: &ObsBundle, cfg: &PipelineConfig) -> Result<()> {
    let name = run.fitted.kind().name();
    write_state(&dir.join(format!("{name}.tna")), &run.fitted, &obs.obs)?;
    write_masks(&dir.join(format!("{name}_masks.tna")), &run.masks, &obs.obs.stft, obs.obs.sample_rate)?;
    write_text(&dir.join(format!("{name}.rttm")), &to_rttm(&run.diarization, name))?;
    if let Some(raw) = &obs.raw {
        let beam = dir.join(format!("beam_{name}"));
        fs::create_dir_all(&beam).map_err(|e| Error::io(&beam, e))?;
        let waves = beamform(raw.view(), run.masks.masks.view(), cfg.ref_channel, &obs.obs.stft)?;
        for (k, w) in waves.iter().enumerate() {
            write_mono(&beam.join(format!("{}.wav", speaker_name(k))), w, obs.obs.sample_rate)?;
        }
    }
    Ok(())
}

/// All stages for one scenario into `dir`; returns the report also written
/// to `report.txt`. The scenario seed drives the initializer.
pub fn run_to_dir(scenario: &ScenarioConfig, cfg: &PipelineConfig, dir: &Path, command: &str) -> Result<Report> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seed = Some(scenario.seed);
    let scene = simulate(scenario)?;
    write_scene(&scene, scenario, dir)?;
    append_provenance(dir, "simulate", seed, command)?;

    let cfg = PipelineConfig {
        init: InitConfig {
            seed: scenario.seed,
            ..cfg.init.clone()
        },
        ..cfg.clone()
    };
    let init = init_scene(&scene, &cfg)?;
    Archive::from(init.to_entries()).write(dir.join("init.tna"))?;
    append_provenance(dir, "init", seed, command)?;

    let bundle = ObsBundle {
        obs: scene.obs.clone(),
        raw: Some(scene.raw.clone()),
        log_energy: Some(scene.log_energy.clone()),
    };
    for &kind in &cfg.models {
        let run = run_model(kind, &scene.obs, &init, &cfg)?;
        write_model_run(dir, &run, &bundle, &cfg)?;
        append_provenance(dir, &format!("fit-{}", kind.name()), seed, command)?;
    }

    let report = evaluate_dir(dir, dir, cfg.collar)?;
    write_text(&dir.join("report.txt"), &report.to_text())?;
    append_provenance(dir, "eval", seed, command)?;
    Ok(report)
}

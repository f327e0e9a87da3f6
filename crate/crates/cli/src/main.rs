use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use diarsep::archive::Archive;
use diarsep::init::{initialize, InitConfig, InitPosterior};
use diarsep::masks::DEFAULT_TAU;
use diarsep::metrics::DEFAULT_COLLAR;
use diarsep::pipeline::{
    append_provenance, beamform, diarize, evaluate_dir, fit, read_activity_source, read_obs, run_to_dir, write_masks,
    write_mono, write_scene, write_state, DiarizeConfig, Fitted, Masks, ModelKind, PipelineConfig,
};
use diarsep::postprocess::{parse_rttm, segments_to_activity, speaker_name, to_rttm, DuplicateConfig, SmoothConfig};
use diarsep::sim::{simulate, ScenarioConfig};
use ndarray::Ix2;

#[derive(Parser)]
#[command(name = "diarsep", version, about = "Joint diarization and separation with spectral-spatial mixture models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario into a directory.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Initial posteriors for the EM fits.
    Init {
        obs: PathBuf,
        /// Activity archive (entry "activity") or RTTM used as oracle.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Number of speakers; defaults to the oracle's.
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit one of the models.
    Fit {
        #[arg(value_parser = parse_model)]
        model: ModelKind,
        obs: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Recorded in the provenance; the fits themselves are deterministic.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time-frequency masks from a fitted state.
    Masks {
        state: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// MVDR extraction of every masked speaker.
    Beamform {
        obs: PathBuf,
        masks: PathBuf,
        #[arg(long = "ref", default_value_t = 0)]
        ref_channel: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// RTTM from a state or masks archive.
    Diarize {
        source: PathBuf,
        #[command(flatten)]
        post: PostArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a directory of outputs against a simulated truth.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_COLLAR)]
        collar: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Every stage, for every model, into one directory.
    Pipeline {
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Estimate the speaker initialization instead of using the true activity.
        #[arg(long)]
        estimated_init: bool,
        /// Comma-separated subset of cacgmm, tight, loose.
        #[arg(long, value_delimiter = ',', value_parser = parse_model)]
        models: Option<Vec<ModelKind>>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_COLLAR)]
        collar: f64,
        #[arg(long = "ref", default_value_t = 0)]
        ref_channel: usize,
        #[command(flatten)]
        post: PostArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct PostArgs {
    #[arg(long, default_value_t = 0.5)]
    on_thresh: f64,
    /// Seconds.
    #[arg(long, default_value_t = 0.3)]
    min_on: f64,
    /// Seconds.
    #[arg(long, default_value_t = 0.3)]
    min_off: f64,
    #[arg(long, default_value_t = 0.9)]
    cos_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap_thresh: f64,
}

impl PostArgs {
    fn config(self) -> DiarizeConfig {
        DiarizeConfig {
            smooth: SmoothConfig {
                on_thresh: self.on_thresh,
                min_on: self.min_on,
                min_off: self.min_off,
            },
            dedup: DuplicateConfig {
                cos_thresh: self.cos_thresh,
                overlap_thresh: self.overlap_thresh,
            },
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

/// Paths created by the running command, deleted unless the command succeeds.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    /// Pre-existing directories and their entries before the command.
    snapshots: Vec<(PathBuf, BTreeSet<PathBuf>)>,
    done: bool,
}

fn listing(dir: &Path) -> BTreeSet<PathBuf> {
    fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default()
}

impl Outputs {
    fn file(&mut self, p: &Path) -> Result<()> {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        if !p.exists() {
            self.files.push(p.to_path_buf());
        }
        Ok(())
    }

    fn dir(&mut self, d: &Path) -> Result<()> {
        if d.exists() {
            if !self.snapshots.iter().any(|(p, _)| p == d) {
                self.snapshots.push((d.to_path_buf(), listing(d)));
            }
        } else {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            self.dirs.push(d.to_path_buf());
        }
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for (d, before) in &self.snapshots {
            for p in listing(d).difference(before) {
                let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
            }
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn provenance_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioConfig::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn oracle_activity(path: &Path, frames: usize, frame_shift: usize, sample_rate: f64) -> Result<ndarray::Array2<f64>> {
    if path.extension().is_some_and(|e| e == "rttm") {
        let segs = parse_rttm(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?;
        let names: BTreeSet<String> = segs.iter().map(|s| s.speaker.clone()).collect();
        let names: Vec<String> = names.into_iter().collect();
        Ok(segments_to_activity(&segs, &names, frames, frame_shift, sample_rate).mapv(f64::from))
    } else {
        Ok(Archive::read(path)?.f64_dim::<Ix2>("activity")?)
    }
}

fn run(cmd: Command, out: &mut Outputs) -> Result<()> {
    let line = command_line();
    match cmd {
        Command::Simulate { scenario, out: dir } => {
            let cfg = read_scenario(&scenario)?;
            out.dir(&dir)?;
            let scene = simulate(&cfg)?;
            write_scene(&scene, &cfg, &dir)?;
            append_provenance(&dir, "simulate", Some(cfg.seed), &line)?;
            if scene.truth.infeasible_overlap {
                eprintln!(
                    "warning: overlap_ratio {} is not achievable; achieved {:.3}",
                    cfg.overlap_ratio, scene.truth.achieved_overlap
                );
            }
        }
        Command::Init {
            obs,
            oracle,
            speakers,
            seed,
            out: path,
        } => {
            let b = read_obs(&obs)?;
            let oracle = oracle
                .map(|p| oracle_activity(&p, b.obs.frames(), b.obs.stft.frame_shift, b.obs.sample_rate))
                .transpose()?;
            let k = match (speakers, &oracle) {
                (Some(k), _) => k,
                (None, Some(a)) => a.nrows(),
                (None, None) => bail!("--speakers is required without --oracle"),
            };
            if let Some(a) = &oracle {
                if a.nrows() != k {
                    bail!("oracle has {} speakers, --speakers says {k}", a.nrows());
                }
            }
            out.file(&path)?;
            let cfg = InitConfig {
                seed,
                ..InitConfig::default()
            };
            let init = initialize(&b.obs, &b.log_energy()?, k, 2 * k + 1, oracle.as_ref().map(|a| a.view()), &cfg)?;
            Archive::from(init.to_entries()).write(&path)?;
            out.file(&provenance_dir(&path).join("provenance.txt"))?;
            append_provenance(&provenance_dir(&path), "init", Some(seed), &line)?;
        }
        Command::Fit {
            model,
            obs,
            init,
            iters,
            seed,
            out: path,
        } => {
            let b = read_obs(&obs)?;
            let init = InitPosterior::from_archive(&Archive::read(&init)?)?;
            out.file(&path)?;
            let fitted = fit(model, &b.obs, &init, iters)?;
            write_state(&path, &fitted, &b.obs)?;
            out.file(&provenance_dir(&path).join("provenance.txt"))?;
            append_provenance(&provenance_dir(&path), &format!("fit-{}", model.name()), seed, &line)?;
        }
        Command::Masks { state, tau, out: path } => {
            if !(tau > 0.0 && tau <= 1.0) {
                bail!("--tau must lie in (0, 1]");
            }
            let a = Archive::read(&state)?;
            let (stft, sr) = diarsep::obs::read_stft_config(&a)?;
            let fitted = Fitted::from_archive(&a)?;
            out.file(&path)?;
            write_masks(&path, &fitted.masks(tau), &stft, sr)?;
            out.file(&provenance_dir(&path).join("provenance.txt"))?;
            append_provenance(&provenance_dir(&path), "masks", None, &line)?;
        }
        Command::Beamform {
            obs,
            masks,
            ref_channel,
            out: dir,
        } => {
            let b = read_obs(&obs)?;
            let raw = b.raw.as_ref().context("observation archive has no raw \"stft\" entry")?;
            let m = Masks::from_archive(&Archive::read(&masks)?)?;
            out.dir(&dir)?;
            let waves = beamform(raw.view(), m.masks.view(), ref_channel, &b.obs.stft)?;
            for (k, w) in waves.iter().enumerate() {
                write_mono(&dir.join(format!("{}.wav", speaker_name(k))), w, b.obs.sample_rate)?;
            }
            append_provenance(&dir, "beamform", None, &line)?;
        }
        Command::Diarize { source, post, out: path } => {
            let (act, mu, stft, sr) = read_activity_source(&source)?;
            let d = diarize(act.view(), mu.as_ref().map(|m| m.view()), stft.frame_shift, sr, &post.config());
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "rec".into());
            out.file(&path)?;
            fs::write(&path, to_rttm(&d, &id)).with_context(|| format!("writing {}", path.display()))?;
            out.file(&provenance_dir(&path).join("provenance.txt"))?;
            append_provenance(&provenance_dir(&path), "diarize", None, &line)?;
        }
        Command::Eval {
            dir,
            truth,
            collar,
            out: path,
        } => {
            let report = evaluate_dir(&dir, &truth, collar)?;
            out.file(&path)?;
            fs::write(&path, report.to_text()).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", report.summary_line(&dir.display().to_string()));
        }
        Command::Pipeline {
            scenario,
            iters,
            estimated_init,
            models,
            tau,
            collar,
            ref_channel,
            post,
            out: dir,
        } => {
            let sc = read_scenario(&scenario)?;
            let cfg = PipelineConfig {
                models: models.unwrap_or_else(|| ModelKind::ALL.to_vec()),
                iters,
                oracle_init: !estimated_init,
                tau,
                diarize: post.config(),
                collar,
                ref_channel,
                ..PipelineConfig::default()
            };
            out.dir(&dir)?;
            let report = run_to_dir(&sc, &cfg, &dir, &line)?;
            println!("{}", report.summary_line(&dir.display().to_string()));
        }
    }
    out.done = true;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = Outputs::default();
    match run(cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            drop(out);
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Model behavior on simulated scenes, checked against the simulator's
//! ground truth.

use std::sync::OnceLock;

use diarsep::beamformer::estimate_covariances_at;
use diarsep::distributions::sample_vmf;
use diarsep::distributions::vmf::random_unit_vector;
use diarsep::init::{spatial_init, spectral_init, InitConfig};
use diarsep::tight::cacgmm_fit;
use diarsep::linalg::{abs_cos, HermMat};
use diarsep::metrics::{frame_accuracy, si_sdr};
use diarsep::pipeline::{beamform, init_scene, run_model, Fitted, ModelKind, ModelRun, PipelineConfig};
use diarsep::sim::{rotate_channels, simulate, Relocation, ScenarioConfig, Scene};
use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fits {
    scene: Scene,
    loose: ModelRun,
    tight: ModelRun,
}

fn fit_scene(relocation: Relocation) -> Fits {
    let seed = 11;
    let scene = simulate(&ScenarioConfig {
        relocation,
        seed,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.init.seed = seed;
    let init = init_scene(&scene, &cfg).unwrap();
    let loose = run_model(ModelKind::Loose, &scene.obs, &init, &cfg).unwrap();
    let tight = run_model(ModelKind::Tight, &scene.obs, &init, &cfg).unwrap();
    Fits { scene, loose, tight }
}

fn static_fits() -> &'static Fits {
    static F: OnceLock<Fits> = OnceLock::new();
    F.get_or_init(|| fit_scene(Relocation::None))
}

fn relocation_fits() -> &'static Fits {
    static F: OnceLock<Fits> = OnceLock::new();
    F.get_or_init(|| fit_scene(Relocation::Rotate))
}

/// Best mapping from true speaker to model component by shared active frames.
fn speaker_map(truth: &Array2<f64>, hyp: &Array2<f64>) -> Vec<usize> {
    let score = Array2::from_shape_fn((truth.nrows(), hyp.nrows()), |(i, j)| {
        truth.row(i).iter().zip(hyp.row(j)).map(|(a, b)| a * b).sum::<f64>()
    });
    let mut out = vec![0; truth.nrows()];
    for (i, j) in diarsep::metrics::best_assignment(&score) {
        out[i] = j;
    }
    out
}

fn argmax_col(a: &Array2<f64>, t: usize) -> usize {
    (0..a.nrows()).fold(0, |b, k| if a[[k, t]] > a[[b, t]] { k } else { b })
}

#[test]
fn tight_static_argmax_tracks_speakers() {
    let f = static_fits();
    let truth = &f.scene.truth.activity;
    let post = f.tight.fitted.frame_activity();
    let map = speaker_map(truth, &post);
    let (mut hit, mut total) = (0, 0);
    for t in 0..truth.ncols() {
        let active: Vec<usize> = (0..truth.nrows()).filter(|&k| truth[[k, t]] > 0.5).collect();
        if active.len() == 1 {
            total += 1;
            hit += usize::from(map[active[0]] == argmax_col(&post, t));
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc >= 0.95, "single-speaker frame accuracy {acc:.3}");
}

/// Frame-level DER under the best speaker mapping: each speech frame
/// contributes max(ref, hyp) - correct.
fn frame_der(truth: &Array2<f64>, hyp: &Array2<f64>) -> f64 {
    let map = speaker_map(truth, hyp);
    let (mut err, mut speech) = (0usize, 0usize);
    for t in 0..truth.ncols() {
        let r: Vec<bool> = (0..truth.nrows()).map(|k| truth[[k, t]] > 0.5).collect();
        let h: Vec<bool> = (0..hyp.nrows()).map(|j| hyp[[j, t]] >= 0.5).collect();
        let nr = r.iter().filter(|&&v| v).count();
        let nh = h.iter().filter(|&&v| v).count();
        let correct = (0..truth.nrows()).filter(|&k| r[k] && h[map[k]]).count();
        speech += nr;
        err += nr.max(nh) - correct;
    }
    err as f64 / speech as f64
}

#[test]
fn loose_static_frame_der() {
    let f = static_fits();
    let der = frame_der(&f.scene.truth.activity, &f.loose.fitted.frame_activity());
    assert!(der <= 0.05, "frame-level DER {der:.4}");
}

#[test]
fn loose_relocation_keeps_speaker_identity() {
    let f = relocation_fits();
    let truth = &f.scene.truth.activity;
    let Fitted::Loose(state) = &f.loose.fitted else { unreachable!() };
    let gamma = &state.gamma;
    let map = speaker_map(truth, gamma);
    let half = truth.ncols() / 2;
    for k in 0..truth.nrows() {
        let (mut hit, mut total) = (0, 0);
        for t in 0..truth.ncols() {
            let solo = truth[[k, t]] > 0.5 && (0..truth.nrows()).all(|j| j == k || truth[[j, t]] < 0.5);
            if solo {
                total += 1;
                hit += usize::from(argmax_col(gamma, t) == map[k]);
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc >= 0.9, "speaker {k}: {acc:.3} of solo frames on one component");
        let before = truth.slice(s![k, ..half]).sum();
        let after = truth.slice(s![k, half..]).sum();
        assert!(before > 0.0 && after > 0.0);
        let alpha = &state.params.alpha;
        let two = (0..alpha.dim().2).any(|fi| (0..alpha.dim().1).filter(|&l| alpha[[map[k], l, fi]] > 0.3).count() >= 2);
        assert!(two, "speaker {k}: no frequency splits coupling over two locations");
    }
}

#[test]
fn loose_masks_are_disjoint_on_static_scene() {
    let f = static_fits();
    let m = &f.loose.masks.masks;
    let cross = (&m.index_axis(Axis(0), 0) * &m.index_axis(Axis(0), 1)).sum();
    for k in 0..2 {
        let ratio = cross / m.index_axis(Axis(0), k).sum();
        assert!(ratio < 0.05, "speaker {k}: overlap ratio {ratio:.4}");
    }
}

#[test]
fn loose_masks_cover_both_halves_after_relocation() {
    let f = relocation_fits();
    let m = &f.loose.masks.masks;
    let half = m.dim().1 / 2;
    for k in 0..m.dim().0 {
        let total = m.index_axis(Axis(0), k).sum();
        let first = m.slice(s![k, ..half, ..]).sum() / total;
        assert!((0.2..=0.8).contains(&first), "speaker {k}: first-half share {first:.3}");
    }
}

#[test]
fn rotated_cacgmm_loses_track() {
    let seed = 12;
    let mut scene = simulate(&ScenarioConfig { seed, ..Default::default() }).unwrap();
    scene.obs = rotate_channels(&scene.obs, 2, 0).unwrap();
    let n = scene.truth.activity.nrows();
    let cfg = InitConfig { seed, ..InitConfig::default() };
    let z = spatial_init(&scene.obs, n + 1, &cfg).unwrap();
    let state = cacgmm_fit(&scene.obs, z.view(), 100).unwrap();
    let post = state.frame_posterior();
    let half = scene.obs.frames() / 2;
    let truth = &scene.truth.activity;
    // Permutation fixed on the first half, then carried into the second.
    let map = speaker_map(&truth.slice(s![.., ..half]).to_owned(), &post.slice(s![.., ..half]).to_owned());
    let mapped = Array2::from_shape_fn(truth.raw_dim(), |(k, t)| post[[map[k], t]] >= 0.5);
    let tb = scene.truth.activity_bool();
    let first = frame_accuracy(tb.slice(s![.., ..half]), mapped.slice(s![.., ..half]));
    let second = frame_accuracy(tb.slice(s![.., half..]), mapped.slice(s![.., half..]));
    assert!(second < 0.7, "second-half accuracy {second:.3} (first half {first:.3})");
}

fn principal(m: &HermMat) -> Vec<Complex64> {
    m.eigh().principal().to_vec()
}

#[test]
fn single_speaker_direction_matches_steering() {
    let scene = simulate(&ScenarioConfig {
        speakers: 1,
        duration: 6.0,
        noise_level: 0.0,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let active: Vec<usize> = (0..scene.obs.frames()).filter(|&t| scene.truth.activity[[0, t]] > 0.5).collect();
    let mut checked = 0;
    for fi in 0..scene.obs.freqs() {
        let mut cov = HermMat::zeros(7);
        let mut energy = 0.0;
        for &t in &active {
            let y: Vec<Complex64> = scene.raw.slice(s![t, fi, ..]).to_vec();
            energy += y.iter().map(|v| v.norm_sqr()).sum::<f64>();
            cov.add_assign(&HermMat::outer(&y));
        }
        if energy == 0.0 {
            continue;
        }
        let steer: Vec<Complex64> = scene.truth.steering.slice(s![0, fi, ..]).to_vec();
        let c = abs_cos(&principal(&cov), &steer);
        assert!(c > 0.99, "bin {fi}: |cos| {c:.4}");
        checked += 1;
    }
    assert!(checked > scene.obs.freqs() / 2);
}

#[test]
fn spectral_init_separates_embedding_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = 64;
    let mu1 = random_unit_vector(d, &mut rng);
    let mut mu2 = random_unit_vector(d, &mut rng);
    while mu1.dot(&mu2) >= 0.2 {
        mu2 = random_unit_vector(d, &mut rng);
    }
    let t = 400;
    let truth = Array2::from_shape_fn((2, t), |(k, ti)| f64::from(u8::from((ti / 40) % 2 == k)));
    let a = sample_vmf(mu1.view(), 50.0, t, &mut rng);
    let b = sample_vmf(mu2.view(), 50.0, t, &mut rng);
    let e = Array2::from_shape_fn((t, d), |(ti, j)| if truth[[0, ti]] > 0.5 { a[[ti, j]] } else { b[[ti, j]] });
    let z = spectral_init(e.view(), &vec![true; t], 2, &InitConfig::default()).unwrap();
    let hard = Array2::from_shape_fn((2, t), |(k, ti)| argmax_col(&z, ti) == k);
    let acc = frame_accuracy(truth.mapv(|v| v > 0.5).view(), hard.view());
    assert!(acc >= 0.95, "accuracy {acc:.3}");
}

#[test]
fn spatial_init_single_source_concentrates() {
    let scene = simulate(&ScenarioConfig {
        speakers: 1,
        duration: 8.0,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let z = spatial_init(&scene.obs, 3, &InitConfig::default()).unwrap();
    let mask = scene.truth.oracle_masks.index_axis(Axis(0), 0);
    let mut worst = 1.0f64;
    let mut best_class = vec![0; scene.obs.freqs()];
    for fi in 1..scene.obs.freqs() {
        let speech: Vec<usize> = (0..scene.obs.frames()).filter(|&t| mask[[t, fi]] > 0.5).collect();
        if speech.is_empty() {
            continue;
        }
        let mass: Vec<f64> = (0..3).map(|l| speech.iter().map(|&t| z[[l, t, fi]]).sum()).collect();
        let total: f64 = mass.iter().sum();
        let (arg, top) = mass.iter().enumerate().fold((0, 0.0), |acc, (l, &m)| if m > acc.1 { (l, m) } else { acc });
        best_class[fi] = arg;
        worst = worst.min(top / total);
    }
    assert!(worst >= 0.9, "weakest frequency carries {worst:.3} in one class");
    assert!(best_class[1..].iter().all(|&c| c == best_class[1]), "classes not aligned across frequency");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spatial_init_profiles_follow_disjoint_speakers() {
    let scene = simulate(&ScenarioConfig {
        overlap_ratio: 0.0,
        duration: 16.0,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let z = spatial_init(&scene.obs, 2, &InitConfig::default()).unwrap();
    let profile = z.mean_axis(Axis(2)).unwrap();
    let truth = &scene.truth.activity;
    let speech: Vec<usize> = (0..truth.ncols()).filter(|&t| truth.column(t).sum() > 0.5).collect();
    let pick = |a: &Array2<f64>, k: usize| -> Vec<f64> { speech.iter().map(|&t| a[[k, t]]).collect() };
    let corr = Array2::from_shape_fn((2, 2), |(k, l)| pearson(&pick(truth, k), &pick(&profile, l)));
    let best = (corr[[0, 0]] + corr[[1, 1]]).max(corr[[0, 1]] + corr[[1, 0]]) / 2.0;
    assert!(best >= 0.8, "mean correlation {best:.3}");
}

fn oracle_scene(speakers: usize, seed: u64) -> Scene {
    simulate(&ScenarioConfig {
        speakers,
        duration: 10.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn oracle_speech_covariance_points_at_source() {
    let scene = oracle_scene(2, 8);
    for k in 0..2 {
        let mask = scene.truth.oracle_masks.index_axis(Axis(0), k);
        for fi in 1..scene.obs.freqs() {
            if mask.column(fi).sum() < 5.0 {
                continue;
            }
            let cov = estimate_covariances_at(scene.raw.view(), mask, fi);
            let loc = scene.truth.location_track[[k, 0]] as usize;
            let steer: Vec<Complex64> = scene.truth.steering.slice(s![loc, fi, ..]).to_vec();
            let c = abs_cos(&principal(&cov.phi_s), &steer);
            assert!(c > 0.95, "speaker {k} bin {fi}: |cos| {c:.4}");
        }
    }
}

#[test]
fn oracle_mvdr_single_source_gain() {
    // One source active at a time: two speakers without overlap.
    let scene = simulate(&ScenarioConfig {
        speakers: 2,
        overlap_ratio: 0.0,
        duration: 10.0,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let out = beamform(scene.raw.view(), scene.truth.oracle_masks.view(), 0, &scene.obs.stft).unwrap();
    let mix = scene.mixture_wave().unwrap();
    for (k, est) in out.iter().enumerate() {
        let clean = scene.clean_wave(k).unwrap();
        let n = clean.len().min(est.len());
        let gain = si_sdr(&est[..n], &clean[..n]).unwrap() - si_sdr(&mix[..n], &clean[..n]).unwrap();
        assert!(gain >= 10.0, "speaker {k}: gain {gain:.2} dB");
    }
}

#[test]
fn oracle_mvdr_outputs_are_decorrelated() {
    let scene = oracle_scene(2, 10);
    let out = beamform(scene.raw.view(), scene.truth.oracle_masks.view(), 0, &scene.obs.stft).unwrap();
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let (a, b) = (Array1::from(out[i].clone()), Array1::from(out[j].clone()));
            let c = a.dot(&b).abs() / (a.dot(&a) * b.dot(&b)).sqrt();
            assert!(c < 0.1, "outputs {i} and {j}: correlation {c:.3}");
        }
    }
}

#[test]
fn si_sdr_of_orthogonal_noise_is_very_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let r = random_unit_vector(10_000, &mut rng);
    let mut e = random_unit_vector(10_000, &mut rng);
    let proj = e.dot(&r);
    e.zip_mut_with(&r, |x, y| *x -= proj * y);
    let v = si_sdr(e.as_slice().unwrap(), r.as_slice().unwrap()).unwrap();
    assert!(v <= -40.0, "{v}");
}

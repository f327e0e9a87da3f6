mod common;

use common::*;
use diarsep::archive::{decode, encode, NamedTensor};
use diarsep::beamformer::{mvdr_weights, CovPair};
use diarsep::distributions::{cacg_log_pdf, CacgParams};
use diarsep::init::build_delta0;
use diarsep::linalg::HermMat;
use diarsep::loose::loose_loglik;
use diarsep::masks::{estimate_beta, extract_masks, remove_location};
use diarsep::metrics::{der, frame_accuracy, mask_divergence};
use diarsep::obs::normalize_observations;
use diarsep::postprocess::{
    activity_to_segments, remove_duplicates, segments_to_activity, smooth_activity, speaker_name, DuplicateConfig,
    Segment, SmoothConfig,
};
use diarsep::sim::rotate_array;
use diarsep::stft::{stft, StftConfig};
use ndarray::{s, Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bool_grid(k: usize, t: usize, bits: &[bool]) -> Array2<bool> {
    Array2::from_shape_fn((k, t), |(a, b)| bits[(a * t + b) % bits.len()])
}

fn permute_rows<T: Clone>(a: &Array2<T>, perm: &[usize]) -> Array2<T> {
    Array2::from_shape_fn(a.dim(), |(k, t)| a[[perm[k], t]].clone())
}

fn perm_of(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, r.random_range(0..=i));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_is_idempotent(
        vals in prop::collection::vec(0.0f64..1.0, 1..400),
        k in 1usize..4,
        thresh in 0.2f64..0.8,
        min_on in 0.0f64..0.5,
        min_off in 0.0f64..0.5,
    ) {
        let t = vals.len().div_ceil(k);
        let g = Array2::from_shape_fn((k, t), |(a, b)| vals[(a * t + b) % vals.len()]);
        let cfg = SmoothConfig { on_thresh: thresh, min_on, min_off };
        let once = smooth_activity(g.view(), 31.25, &cfg);
        let twice = smooth_activity(once.mapv(f64::from).view(), 31.25, &cfg);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn duplicate_removal_never_adds_speakers(
        bits in prop::collection::vec(any::<bool>(), 1..300),
        k in 1usize..6,
        seed in any::<u64>(),
        cos in 0.0f64..1.0,
        ov in 0.0f64..1.0,
    ) {
        let t = 60;
        let act = bool_grid(k, t, &bits);
        let mut r = rng(seed);
        let base = unit_real(4, &mut r);
        let mu = Array2::from_shape_fn((k, 4), |(ki, j)| base[j] + 0.3 * ki as f64 * r.random::<f64>());
        let out = remove_duplicates(act.view(), mu.view(), &DuplicateConfig { cos_thresh: cos, overlap_thresh: ov });
        prop_assert!(out.kept.len() <= k && !out.kept.is_empty());
        prop_assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        let union_before: Vec<bool> = (0..t).map(|ti| (0..k).any(|ki| act[[ki, ti]])).collect();
        let union_after: Vec<bool> = (0..t).map(|ti| (0..out.kept.len()).any(|ki| out.activity[[ki, ti]])).collect();
        prop_assert_eq!(union_before, union_after);
    }

    #[test]
    fn segments_round_trip_on_frame_grid(bits in prop::collection::vec(any::<bool>(), 1..500), k in 1usize..4) {
        let t = bits.len().div_ceil(k);
        let act = bool_grid(k, t, &bits);
        let d = activity_to_segments(act.view(), 256, 8000.0);
        let names: Vec<String> = (0..k).map(speaker_name).collect();
        prop_assert_eq!(segments_to_activity(&d.segments, &names, t, 256, 8000.0), act);
    }

    #[test]
    fn archive_round_trip_is_bit_exact(seed in any::<u64>(), n in 0usize..50) {
        let mut r = rng(seed);
        let a = Array2::from_shape_fn((n, 3), |_| f64::from_bits(r.random::<u64>() & !(0x7ffu64 << 52) | (0x3ffu64 << 52)));
        let c = Array3::from_shape_fn((2, n, 2), |_| cplx(&mut r));
        let entries = vec![NamedTensor::f64("a", a.clone()), NamedTensor::c128("c", c.clone())];
        let back = decode(&encode(&entries).unwrap()).unwrap();
        prop_assert_eq!(back, entries);
    }

    #[test]
    fn normalization_idempotent_and_phase_preserving(seed in any::<u64>(), zero_frac in 0.0f64..0.3) {
        let mut r = rng(seed);
        let raw = Array3::from_shape_fn((5, 4, 3), |_| {
            if r.random::<f64>() < zero_frac { Complex64::new(0.0, 0.0) } else { cplx(&mut r) * 10f64.powf(r.random_range(-3.0..3.0)) }
        });
        let (y, degenerate) = normalize_observations(&raw);
        let (y2, _) = normalize_observations(&y);
        for (a, b) in y.iter().zip(y2.iter()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        for ((t, f, c), v) in y.indexed_iter() {
            let raw_v = raw[[t, f, c]];
            if !degenerate[[t, f]] && raw_v.norm() > 0.0 {
                let d = (v.arg() - raw_v.arg()).rem_euclid(std::f64::consts::TAU);
                prop_assert!(d.min(std::f64::consts::TAU - d) < 1e-9);
            }
        }
    }

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let cfg = StftConfig::new(64, 32, 64).unwrap();
        let x = Array2::from_shape_fn((700, 2), |_| r.sample::<f64, _>(StandardNormal));
        let z = Array2::from_shape_fn((700, 2), |_| r.sample::<f64, _>(StandardNormal));
        let lhs = stft((&x * a + &z * b).view(), &cfg).unwrap();
        let rhs = stft(x.view(), &cfg).unwrap() * Complex64::new(a, 0.0) + stft(z.view(), &cfg).unwrap() * Complex64::new(b, 0.0);
        let scale = rhs.iter().map(|v| v.norm()).fold(1e-300, f64::max);
        let err = lhs.iter().zip(rhs.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        prop_assert!(err / scale < 1e-10);
    }

    #[test]
    fn cacg_phase_and_scale_invariance(seed in any::<u64>(), theta in 0.0f64..6.3, scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let b = random_pd(4, &mut r);
        let y = unit_complex(4, &mut r);
        let base = cacg_log_pdf(&y, &b).unwrap();
        let phase = Complex64::from_polar(1.0, theta);
        let rot: Vec<Complex64> = y.iter().map(|v| v * phase).collect();
        prop_assert!((cacg_log_pdf(&rot, &b).unwrap() - base).abs() < 1e-10);
        prop_assert!((cacg_log_pdf(&y, &b.scaled(scale)).unwrap() - base).abs() < 1e-10);
        let tn = b.scaled(4.0 / b.trace());
        prop_assert!((cacg_log_pdf(&y, &tn).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn loose_loglik_ignores_covariance_scale(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let obs = random_obs(6, 3, 3, 4, &mut r);
        let mut p = random_loose_params(2, 3, 3, 3, 4, &mut r);
        let base = loose_loglik(&obs, &p).unwrap();
        let mats: Vec<HermMat> = (0..3).flat_map(|l| (0..3).map(move |f| (l, f))).map(|(l, f)| {
            let m = p.cacg.b(l, f);
            if (l + f) % 2 == 0 { m.scaled(scale) } else { m.clone() }
        }).collect();
        p.cacg = CacgParams::from_matrices(3, 3, 3, mats).unwrap();
        prop_assert!((loose_loglik(&obs, &p).unwrap() - base).abs() < 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn masks_are_bounded_and_subnormalized(seed in any::<u64>(), tau in 0.0f64..1.0, k in 1usize..4, l in 2usize..6) {
        let mut r = rng(seed);
        let delta = random_delta(k, l, 7, 3, &mut r);
        let m = extract_masks(delta.view(), tau);
        prop_assert!(m.masks.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for s in m.masks.sum_axis(Axis(0)).iter() {
            prop_assert!(*s <= 1.0 + 1e-9);
        }
        for s in m.beta.sum_axis(Axis(0)).iter() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_without_threshold_collapse_locations(seed in any::<u64>(), k in 1usize..4, l in 2usize..6) {
        let mut r = rng(seed);
        let delta = random_delta(k, l, 6, 3, &mut r);
        let m = extract_masks(delta.view(), 0.0);
        let reduced = remove_location(delta.view(), m.noise_location);
        let (beta, _) = estimate_beta(reduced.view());
        for ((ki, ti, fi), v) in m.masks.indexed_iter() {
            let want: f64 = (0..l - 1).map(|li| beta[[ki, li, fi]] * reduced[[ki, li, ti, fi]]).sum();
            prop_assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_follow_speaker_permutation(seed in any::<u64>(), tau in 0.0f64..1.0, k in 2usize..4) {
        let mut r = rng(seed);
        let delta = random_delta(k, 4, 6, 3, &mut r);
        let perm = perm_of(k, seed);
        let pd = Array4::from_shape_fn(delta.dim(), |(ki, li, ti, fi)| delta[[perm[ki], li, ti, fi]]);
        let a = extract_masks(delta.view(), tau);
        let b = extract_masks(pd.view(), tau);
        for ((ki, ti, fi), v) in b.masks.indexed_iter() {
            prop_assert!((v - a.masks[[perm[ki], ti, fi]]).abs() < 1e-12);
        }
    }

    #[test]
    fn delta0_reproduces_its_factors(seed in any::<u64>(), k in 1usize..4, l in 1usize..5) {
        let mut r = rng(seed);
        let spec = Array2::from_shape_fn((k, 5), |_| 0.05 + r.random::<f64>());
        let spec = &spec / &spec.sum_axis(Axis(0)).insert_axis(Axis(0));
        let spat = random_posterior(l, 5, 3, &mut r);
        let d = build_delta0(spec.view(), spat.view());
        let over_l = d.sum_axis(Axis(1));
        let over_k = d.sum_axis(Axis(0));
        for ((ki, ti, _), v) in over_l.indexed_iter() {
            prop_assert!((v - spec[[ki, ti]]).abs() < 1e-12);
        }
        for (ix, v) in over_k.indexed_iter() {
            prop_assert!((v - spat[ix]).abs() < 1e-12);
        }
    }

    #[test]
    fn outer_rotation_has_order_six(seed in any::<u64>(), from in 0usize..6) {
        let mut r = rng(seed);
        let y = Array3::from_shape_fn((6, 2, 7), |_| cplx(&mut r));
        prop_assert_eq!(rotate_array(&y, 0, 0, from), y.clone());
        let mut x = y.clone();
        for _ in 0..3 {
            x = rotate_array(&x, 2, 0, from);
        }
        prop_assert_eq!(&x, &y);
        let once = rotate_array(&y, 2, 0, from);
        prop_assert_eq!(once.slice(s![..from, .., ..]), y.slice(s![..from, .., ..]));
        prop_assert_eq!(once.slice(s![.., .., 0]), y.slice(s![.., .., 0]));
    }

    #[test]
    fn metrics_ignore_hypothesis_labels(bits in prop::collection::vec(any::<bool>(), 30..300), seed in any::<u64>()) {
        let k = 3;
        let t = bits.len() / k;
        let truth = bool_grid(k, t, &bits);
        let mut r = rng(seed);
        let hyp = truth.mapv(|v| if r.random::<f64>() < 0.1 { !v } else { v });
        let perm = perm_of(k, seed);
        let hyp_p = permute_rows(&hyp, &perm);
        let refs = activity_to_segments(truth.view(), 256, 8000.0).segments;
        let h1 = activity_to_segments(hyp.view(), 256, 8000.0).segments;
        let h2 = activity_to_segments(hyp_p.view(), 256, 8000.0).segments;
        prop_assume!(!refs.is_empty());
        if let Ok(d1) = der(&refs, &h1, 0.0) {
            prop_assert!((d1 - der(&refs, &h2, 0.0).unwrap()).abs() < 1e-12);
        }
        prop_assert_eq!(frame_accuracy(truth.view(), hyp.view()), frame_accuracy(truth.view(), hyp_p.view()));
        let m = Array3::from_shape_fn((k, t, 2), |(ki, ti, _)| f64::from(u8::from(hyp[[ki, ti]])) * 0.8);
        let o = Array3::from_shape_fn((k, t, 2), |(ki, ti, _)| f64::from(u8::from(truth[[ki, ti]])));
        let mp = Array3::from_shape_fn(m.dim(), |(ki, ti, fi)| m[[perm[ki], ti, fi]]);
        prop_assert!((mask_divergence(m.view(), o.view()) - mask_divergence(mp.view(), o.view())).abs() < 1e-12);
    }

    #[test]
    fn wider_collar_never_increases_der_for_boundary_errors(seed in any::<u64>(), collar in 0.0f64..0.4, jitter in 0.0f64..0.5) {
        let mut r = rng(seed);
        let mut refs = Vec::new();
        let mut t = 0.0;
        for i in 0..12 {
            t += r.random_range(0.0..1.0);
            let e = t + r.random_range(1.5..4.0);
            refs.push(Segment { speaker: ["a", "b"][i % 2].to_string(), start: t, end: e });
            t = e;
        }
        let hyp: Vec<Segment> = refs
            .iter()
            .map(|s| Segment {
                speaker: if s.speaker == "a" { "x".into() } else { "y".into() },
                start: (s.start + r.random_range(-jitter..=jitter)).max(0.0),
                end: s.end + r.random_range(-jitter..=jitter),
            })
            .collect();
        let narrow = der(&refs, &hyp, collar).unwrap();
        let wide = der(&refs, &hyp, 2.0 * collar).unwrap();
        prop_assert!(wide <= narrow + 1e-12, "collar {collar}: {narrow} -> {wide}");
    }

    #[test]
    fn mvdr_weights_ignore_joint_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let pair = CovPair { phi_s: random_pd(4, &mut r), phi_n: random_pd(4, &mut r), fallback: false };
        let scaled = CovPair { phi_s: pair.phi_s.scaled(scale), phi_n: pair.phi_n.scaled(scale), fallback: false };
        let a = mvdr_weights(&pair, 0).unwrap();
        let b = mvdr_weights(&scaled, 0).unwrap();
        let norm = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() < 1e-8 * norm.max(1.0));
        }
    }
}

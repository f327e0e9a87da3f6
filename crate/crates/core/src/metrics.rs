//! Diarization and separation scores.

use ndarray::{Array2, ArrayView2, ArrayView3};
use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};
use crate::postprocess::Segment;

/// Scoring grid for segment-based DER, seconds.
pub const DER_RESOLUTION: f64 = 0.01;
pub const DEFAULT_COLLAR: f64 = 0.25;
pub const SI_SDR_CAP: f64 = 60.0;

/// One-to-one assignment maximizing `sum score[i, j]`, as `(row, col)` pairs
/// over the real (unpadded) rows and columns.
pub fn best_assignment(score: &Array2<f64>) -> Vec<(usize, usize)> {
    let (r, c) = score.dim();
    let n = r.max(c);
    if n == 0 {
        return Vec::new();
    }
    let max = score.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let scale = 1e12 / max;
    let w = Matrix::from_fn(n, n, |(i, j)| {
        if i < r && j < c {
            (score[[i, j]] * scale).round() as i64
        } else {
            0
        }
    });
    let (_, assign) = kuhn_munkres(&w);
    assign
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < r && j < c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerBreakdown {
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    /// Scored reference speech, seconds.
    pub total: f64,
}

impl DerBreakdown {
    pub fn der(&self) -> f64 {
        (self.missed + self.false_alarm + self.confusion) / self.total
    }
}

fn speakers(segs: &[Segment]) -> Vec<String> {
    let mut s: Vec<String> = segs.iter().map(|x| x.speaker.clone()).collect();
    s.sort();
    s.dedup();
    s
}

fn grid(segs: &[Segment], names: &[String], n: usize) -> Array2<bool> {
    let mut a = Array2::from_elem((names.len(), n), false);
    for s in segs {
        let k = names.iter().position(|x| *x == s.speaker).expect("known speaker");
        let lo = (s.start / DER_RESOLUTION).round().max(0.0) as usize;
        let hi = ((s.end / DER_RESOLUTION).round() as usize).min(n);
        for t in lo..hi {
            a[[k, t]] = true;
        }
    }
    a
}

/// Missed, false-alarm and confusion time under the optimal speaker mapping.
/// Reference boundaries are surrounded by an unscored collar of `collar` seconds.
pub fn der_breakdown(reference: &[Segment], hypothesis: &[Segment], collar: f64) -> Result<DerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let end = reference
        .iter()
        .chain(hypothesis)
        .fold(0.0f64, |m, s| m.max(s.end));
    let n = (end / DER_RESOLUTION).ceil() as usize + 1;
    let rn = speakers(reference);
    let hn = speakers(hypothesis);
    let r = grid(reference, &rn, n);
    let h = grid(hypothesis, &hn, n);
    let mut scored = vec![true; n];
    let c = (collar / DER_RESOLUTION).round() as usize;
    if c > 0 {
        for s in reference {
            for b in [s.start, s.end] {
                let center = (b / DER_RESOLUTION).round() as usize;
                let lo = center.saturating_sub(c);
                let hi = (center + c).min(n);
                scored[lo..hi].fill(false);
            }
        }
    }
    let mut overlap = Array2::zeros((rn.len(), hn.len()));
    for i in 0..rn.len() {
        for j in 0..hn.len() {
            overlap[[i, j]] = (0..n).filter(|&t| scored[t] && r[[i, t]] && h[[j, t]]).count() as f64;
        }
    }
    let mapping = best_assignment(&overlap);
    let mut out = DerBreakdown {
        missed: 0.0,
        false_alarm: 0.0,
        confusion: 0.0,
        total: 0.0,
    };
    for t in (0..n).filter(|&t| scored[t]) {
        let nr = r.column(t).iter().filter(|&&v| v).count() as f64;
        let nh = h.column(t).iter().filter(|&&v| v).count() as f64;
        let correct = mapping.iter().filter(|&&(i, j)| r[[i, t]] && h[[j, t]]).count() as f64;
        out.total += nr;
        out.missed += (nr - nh).max(0.0);
        out.false_alarm += (nh - nr).max(0.0);
        out.confusion += nr.min(nh) - correct;
    }
    if out.total == 0.0 {
        return Err(Error::EmptyReference);
    }
    for v in [&mut out.missed, &mut out.false_alarm, &mut out.confusion, &mut out.total] {
        *v *= DER_RESOLUTION;
    }
    Ok(out)
}

pub fn der(reference: &[Segment], hypothesis: &[Segment], collar: f64) -> Result<f64> {
    Ok(der_breakdown(reference, hypothesis, collar)?.der())
}

/// Best-permutation fraction of agreeing `(k, t)` entries. The smaller input
/// is padded with inactive rows.
pub fn frame_accuracy(reference: ArrayView2<bool>, hypothesis: ArrayView2<bool>) -> f64 {
    let t = reference.ncols().max(hypothesis.ncols());
    let k = reference.nrows().max(hypothesis.nrows());
    if t == 0 || k == 0 {
        return 1.0;
    }
    let get = |a: &ArrayView2<bool>, i: usize, ti: usize| i < a.nrows() && ti < a.ncols() && a[[i, ti]];
    let agree = Array2::from_shape_fn((k, k), |(i, j)| {
        (0..t).filter(|&ti| get(&reference, i, ti) == get(&hypothesis, j, ti)).count() as f64
    });
    let total: f64 = best_assignment(&agree).iter().map(|&(i, j)| agree[[i, j]]).sum();
    total / (k * t) as f64
}

/// Scale-invariant SDR in dB, capped at `SI_SDR_CAP`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "si_sdr: lengths {} and {} differ",
            estimate.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|x| x * x).sum();
    if rr == 0.0 {
        return Err(Error::ZeroReference);
    }
    let a = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / rr;
    let target: f64 = a * a * rr;
    let noise: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - a * r) * (e - a * r))
        .sum();
    if noise == 0.0 {
        return Ok(SI_SDR_CAP);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// Best-permutation mean absolute mask error over bins where the oracle
/// marks some speaker as dominant.
pub fn mask_divergence(masks: ArrayView3<f64>, oracle: ArrayView3<f64>) -> f64 {
    let (k, t, f) = oracle.dim();
    let km = masks.dim().0;
    let n = k.max(km);
    let dominant: Vec<(usize, usize)> = (0..t)
        .flat_map(|ti| (0..f).map(move |fi| (ti, fi)))
        .filter(|&(ti, fi)| (0..k).any(|ki| oracle[[ki, ti, fi]] >= 0.5))
        .collect();
    if dominant.is_empty() {
        return 0.0;
    }
    let get = |a: &ArrayView3<f64>, i: usize, ti: usize, fi: usize| if i < a.dim().0 { a[[i, ti, fi]] } else { 0.0 };
    let err = Array2::from_shape_fn((n, n), |(i, j)| {
        dominant
            .iter()
            .map(|&(ti, fi)| (get(&oracle, i, ti, fi) - get(&masks, j, ti, fi)).abs())
            .sum::<f64>()
    });
    let neg = err.mapv(|v| -v);
    let total: f64 = best_assignment(&neg).iter().map(|&(i, j)| err[[i, j]]).sum();
    total / (n * dominant.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn seg(s: &str, a: f64, b: f64) -> Segment {
        Segment {
            speaker: s.into(),
            start: a,
            end: b,
        }
    }

    #[test]
    fn der_basics() {
        let r = vec![seg("a", 0.0, 2.0), seg("b", 2.5, 5.0), seg("a", 4.0, 6.0)];
        assert_eq!(der(&r, &r, 0.25).unwrap(), 0.0);
        assert!((der(&r, &[], 0.25).unwrap() - 1.0).abs() < 1e-12);
        let swapped: Vec<Segment> = r
            .iter()
            .map(|s| seg(if s.speaker == "a" { "x" } else { "y" }, s.start, s.end))
            .collect();
        assert_eq!(der(&r, &swapped, 0.0).unwrap(), 0.0);
        assert!(matches!(der(&[], &r, 0.25), Err(Error::EmptyReference)));
    }

    #[test]
    fn der_counts_confusion_and_false_alarm() {
        let r = vec![seg("a", 0.0, 4.0), seg("b", 4.0, 8.0)];
        let h = vec![seg("x", 0.0, 6.0), seg("y", 6.0, 8.0), seg("z", 8.0, 9.0)];
        let b = der_breakdown(&r, &h, 0.0).unwrap();
        assert!((b.total - 8.0).abs() < 1e-9);
        assert!((b.confusion - 2.0).abs() < 1e-9);
        assert!((b.false_alarm - 1.0).abs() < 1e-9);
        assert!(b.missed.abs() < 1e-9);
    }

    #[test]
    fn frame_accuracy_cases() {
        let a = Array2::from_shape_vec((2, 4), vec![true, true, false, false, false, false, true, true]).unwrap();
        assert_eq!(frame_accuracy(a.view(), a.view()), 1.0);
        let comp = a.mapv(|v| !v);
        // The complement of row 0 equals row 1, so test a single row.
        let one = a.slice(ndarray::s![0..1, ..]);
        let onec = comp.slice(ndarray::s![0..1, ..]);
        assert_eq!(frame_accuracy(one, onec), 0.0);
        let perm = Array2::from_shape_fn((2, 4), |(k, t)| a[[1 - k, t]]);
        assert_eq!(frame_accuracy(a.view(), perm.view()), 1.0);
    }

    #[test]
    fn si_sdr_cases() {
        let r: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(si_sdr(&r, &r).unwrap(), 60.0);
        let twice: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), 60.0);
        assert!(matches!(si_sdr(&r, &vec![0.0; 100]), Err(Error::ZeroReference)));
    }

    #[test]
    fn mask_divergence_cases() {
        let o = Array3::from_shape_fn((2, 3, 2), |(k, t, _)| if (t % 2) == k { 1.0 } else { 0.0 });
        assert_eq!(mask_divergence(o.view(), o.view()), 0.0);
        let p = Array3::from_shape_fn((2, 3, 2), |(k, t, f)| o[[1 - k, t, f]]);
        assert_eq!(mask_divergence(p.view(), o.view()), 0.0);
        let half = Array3::from_elem((2, 3, 2), 0.5);
        assert!((mask_divergence(half.view(), o.view()) - 0.5).abs() < 1e-12);
    }
}

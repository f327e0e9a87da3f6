//! Activity smoothing, duplicate-speaker removal and segment output.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConfig {
    pub on_thresh: f64,
    /// Shortest kept on-run, seconds.
    pub min_on: f64,
    /// Shortest kept off-gap between on-runs, seconds.
    pub min_off: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            on_thresh: 0.5,
            min_on: 0.3,
            min_off: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicateConfig {
    pub cos_thresh: f64,
    pub overlap_thresh: f64,
}

impl Default for DuplicateConfig {
    fn default() -> Self {
        DuplicateConfig {
            cos_thresh: 0.9,
            overlap_thresh: 0.5,
        }
    }
}

/// Maximal runs of `true` as `[start, end)`.
pub fn runs(x: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in x.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, x.len()));
    }
    out
}

/// Fills interior gaps shorter than `min_off` frames, then drops runs shorter
/// than `min_on` frames.
pub fn close_open(x: &mut [bool], min_on: usize, min_off: usize) {
    let r = runs(x);
    for w in r.windows(2) {
        if w[1].0 - w[0].1 < min_off {
            x[w[0].1..w[1].0].fill(true);
        }
    }
    for (s, e) in runs(x) {
        if e - s < min_on {
            x[s..e].fill(false);
        }
    }
}

/// Thresholded and morphologically cleaned activity `[K, T]`.
pub fn smooth_activity(gamma: ArrayView2<f64>, frame_rate: f64, cfg: &SmoothConfig) -> Array2<bool> {
    let min_on = (cfg.min_on * frame_rate).round() as usize;
    let min_off = (cfg.min_off * frame_rate).round() as usize;
    let mut out = gamma.mapv(|g| g >= cfg.on_thresh);
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        close_open(&mut v, min_on, min_off);
        row.assign(&ndarray::Array1::from(v));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deduplicated {
    /// Original indices of the surviving speakers.
    pub kept: Vec<usize>,
    /// `[K', T]` activity of the survivors.
    pub activity: Array2<bool>,
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Merges speaker pairs with similar `mu` and largely shared activity until
/// no pair qualifies.
pub fn remove_duplicates(activity: ArrayView2<bool>, mu: ArrayView2<f64>, cfg: &DuplicateConfig) -> Deduplicated {
    let mut kept: Vec<usize> = (0..activity.nrows()).collect();
    let mut act: Vec<Vec<bool>> = activity.rows().into_iter().map(|r| r.to_vec()).collect();
    loop {
        let mut merge = None;
        'search: for a in 0..kept.len() {
            for b in a + 1..kept.len() {
                if cosine(mu.row(kept[a]), mu.row(kept[b])) <= cfg.cos_thresh {
                    continue;
                }
                let na = act[a].iter().filter(|&&v| v).count();
                let nb = act[b].iter().filter(|&&v| v).count();
                let inter = act[a].iter().zip(&act[b]).filter(|(x, y)| **x && **y).count();
                let denom = na.min(nb);
                if denom > 0 && inter as f64 / denom as f64 > cfg.overlap_thresh {
                    merge = Some(if na >= nb { (a, b) } else { (b, a) });
                    break 'search;
                }
            }
        }
        let Some((into, from)) = merge else { break };
        let src = act[from].clone();
        for (x, y) in act[into].iter_mut().zip(src) {
            *x |= y;
        }
        act.remove(from);
        kept.remove(from);
    }
    let t = activity.ncols();
    let activity = Array2::from_shape_fn((kept.len(), t), |(k, ti)| act[k][ti]);
    Deduplicated { kept, activity }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diarization {
    pub segments: Vec<Segment>,
    /// `[K, T]`.
    pub frame_activity: Array2<bool>,
}

pub fn speaker_name(k: usize) -> String {
    format!("spk{k}")
}

/// Runs of active frames as timed segments.
pub fn activity_to_segments(activity: ArrayView2<bool>, frame_shift: usize, sample_rate: f64) -> Diarization {
    let h = frame_shift as f64 / sample_rate;
    let mut segments = Vec::new();
    for (k, row) in activity.rows().into_iter().enumerate() {
        for (s, e) in runs(&row.to_vec()) {
            segments.push(Segment {
                speaker: speaker_name(k),
                start: s as f64 * h,
                end: e as f64 * h,
            });
        }
    }
    segments.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.speaker.cmp(&b.speaker)));
    Diarization {
        segments,
        frame_activity: activity.to_owned(),
    }
}

/// Frame grid activity `[K, T]` covered by the segments of each named speaker.
pub fn segments_to_activity(
    segments: &[Segment],
    speakers: &[String],
    frames: usize,
    frame_shift: usize,
    sample_rate: f64,
) -> Array2<bool> {
    let h = frame_shift as f64 / sample_rate;
    let mut a = Array2::from_elem((speakers.len(), frames), false);
    for seg in segments {
        let Some(k) = speakers.iter().position(|s| *s == seg.speaker) else { continue };
        let s = (seg.start / h).round() as usize;
        let e = ((seg.end / h).round() as usize).min(frames);
        for t in s..e {
            a[[k, t]] = true;
        }
    }
    a
}

pub fn to_rttm(d: &Diarization, file_id: &str) -> String {
    let mut out = String::new();
    for s in &d.segments {
        let _ = writeln!(
            out,
            "SPEAKER {file_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            s.start,
            s.end - s.start,
            s.speaker
        );
    }
    out
}

pub fn parse_rttm(text: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 8 || f[0] != "SPEAKER" {
            return Err(Error::Config {
                line: i + 1,
                message: format!("not an RTTM speaker line: {line}"),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Config {
                line: i + 1,
                message: format!("bad number {s:?}: {e}"),
            })
        };
        let start = num(f[3])?;
        let dur = num(f[4])?;
        out.push(Segment {
            speaker: f[7].to_string(),
            start,
            end: start + dur,
        });
    }
    Ok(out)
}

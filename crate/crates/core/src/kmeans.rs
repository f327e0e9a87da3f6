//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// `1 - cos`; centers are renormalized to unit length.
    Cosine,
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn dist(metric: Metric, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match metric {
        Metric::Euclidean => match (a.as_slice(), b.as_slice()) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            _ => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        },
        Metric::Cosine => {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - a.dot(&b) / (na * nb)
            }
        }
    }
}

fn seed_plus_plus<R: Rng + ?Sized>(x: ArrayView2<f64>, k: usize, metric: Metric, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| dist(metric, x.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist(metric, x.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign(x: ArrayView2<f64>, centers: &Array2<f64>, metric: Metric) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(x.nrows());
    let mut dists = Vec::with_capacity(x.nrows());
    for row in x.rows() {
        let (best, d) = centers
            .rows()
            .into_iter()
            .map(|c| dist(metric, row, c))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        labels.push(best);
        dists.push(d);
    }
    (labels, dists)
}

fn single_run<R: Rng + ?Sized>(x: ArrayView2<f64>, k: usize, metric: Metric, max_iter: usize, rng: &mut R) -> KMeans {
    let (n, d) = x.dim();
    let mut centers = seed_plus_plus(x, k, metric, rng);
    let (mut labels, mut dists) = assign(x, &centers, metric);
    for _ in 0..max_iter {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &lab) in labels.iter().enumerate() {
            let mut r = sums.row_mut(lab);
            r += &x.row(i);
            counts[lab] += 1;
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed from the point farthest from its current center.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .unwrap_or(0);
                taken.push(far);
                centers.row_mut(c).assign(&x.row(far));
                dists[far] = 0.0;
                continue;
            }
            let mut m: Array1<f64> = sums.row(c).to_owned() / counts[c] as f64;
            if metric == Metric::Cosine {
                let nm = m.dot(&m).sqrt();
                if nm > 0.0 {
                    m /= nm;
                }
            }
            centers.row_mut(c).assign(&m);
        }
        let (new_labels, new_dists) = assign(x, &centers, metric);
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        if !changed {
            break;
        }
    }
    KMeans {
        centers,
        labels,
        inertia: dists.iter().sum(),
    }
}

/// Best of `restarts` runs by inertia. Requires `1 <= k <= x.nrows()`.
pub fn kmeans<R: Rng + ?Sized>(x: ArrayView2<f64>, k: usize, metric: Metric, restarts: usize, rng: &mut R) -> KMeans {
    assert!(k >= 1 && k <= x.nrows(), "kmeans: need 1 <= k <= n");
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = single_run(x, k, metric, 100, rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one run")
}

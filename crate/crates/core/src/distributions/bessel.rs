//! Log of the modified Bessel function of the first kind, `log I_nu(x)`.
//!
//! Three regimes, all evaluated in the log domain:
//! - power series for `x <= SERIES_MAX_X` (all terms positive, no cancellation);
//! - Hankel large-argument expansion for large `x` and small order;
//! - Debye uniform expansion for large `x` and large order.

use statrs::function::gamma::ln_gamma;

const SERIES_MAX_X: f64 = 700.0;
const HANKEL_MAX_NU: f64 = 25.0;

/// `log I_nu(x)` for `nu >= 0`, `x >= 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x >= 0.0);
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x <= SERIES_MAX_X {
        log_bessel_i_series(nu, x)
    } else if nu < HANKEL_MAX_NU {
        log_bessel_i_hankel(nu, x)
    } else {
        log_bessel_i_debye(nu, x)
    }
}

/// `sum_m (x/2)^(2m+nu) / (m! Gamma(m+nu+1))`, accumulated with a running max.
pub fn log_bessel_i_series(nu: f64, x: f64) -> f64 {
    let log_half_x = (0.5 * x).ln();
    let mut term = nu * log_half_x - ln_gamma(nu + 1.0);
    let mut peak = term;
    let mut acc = 1.0;
    let mut m = 0.0;
    loop {
        let step = 2.0 * log_half_x - (m + 1.0f64).ln() - (m + nu + 1.0).ln();
        term += step;
        m += 1.0;
        if term > peak {
            acc = acc * (peak - term).exp() + 1.0;
            peak = term;
        } else {
            acc += (term - peak).exp();
        }
        if step < 0.0 && term < peak - 40.0 {
            break;
        }
    }
    peak + acc.ln()
}

fn log_bessel_i_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = -term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

fn log_bessel_i_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let sq = (1.0 + z * z).sqrt();
    let t = 1.0 / sq;
    let eta = sq + (z / (1.0 + sq)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    let u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2)
        / 414720.0;
    let u4 = t2
        * t2
        * (4465125.0 - 94121676.0 * t2 + 349922430.0 * t2 * t2 - 446185740.0 * t2 * t2 * t2
            + 185910725.0 * t2 * t2 * t2 * t2)
        / 39813120.0;
    let series = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu) + u4 / (nu * nu * nu * nu);
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * sq.ln() + series.ln()
}

//! Standard normal tails, truncated-normal probabilities, and sampling.

use rand::Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI, SQRT_2};

/// Beyond this point the upper tail is evaluated by its asymptotic series.
const ASYMPTOTIC_FROM: f64 = 30.0;

/// `P(Z > x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `P(Z <= x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln P(Z > x)`, accurate far into the upper tail.
pub fn log_norm_sf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x < ASYMPTOTIC_FROM {
        (0.5 * erfc(x * FRAC_1_SQRT_2)).ln()
    } else {
        let z = 1.0 / (x * x);
        let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z * (1.0 - 9.0 * z))));
        -0.5 * x * x - x.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// `ln(1 - exp(a))` for `a <= 0`.
fn log1m_exp(a: f64) -> f64 {
    if a > -LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// `ln P(a <= Z <= b)` for `a < b`.
pub fn log_norm_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        let la = log_norm_sf(a);
        let lb = log_norm_sf(b);
        la + log1m_exp(lb - la)
    } else if b <= 0.0 {
        log_norm_mass(-b, -a)
    } else {
        ((0.5 - norm_sf(b)) + (0.5 - norm_sf(-a))).ln()
    }
}

/// `P(Z >= x | lo <= Z <= hi)` for a standard normal `Z`.
pub fn truncated_sf(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        return 1.0;
    }
    if x >= hi {
        return 0.0;
    }
    let v = (log_norm_mass(x, hi) - log_norm_mass(lo, hi)).exp();
    v.clamp(0.0, 1.0)
}

/// `P(Z <= x | lo <= Z <= hi)` for a standard normal `Z`.
pub fn truncated_cdf(x: f64, lo: f64, hi: f64) -> f64 {
    truncated_sf(-x, -hi, -lo)
}

/// Upper-tail quantile: `x` with `P(Z > x) = q`, for `q` in `(0, 1)`.
fn sf_inverse(q: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * q)
}

/// One draw of `Z ~ N(0, 1)` conditioned on `lo <= Z <= hi`.
///
/// Inverse-CDF sampling on whichever side of zero keeps the tail masses
/// representable; exponential-proposal rejection takes over where the tail
/// mass underflows, and narrow intervals use a uniform proposal.
pub fn sample_truncated_std_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi, "empty truncation interval [{lo}, {hi}]");
    if !(lo < hi) {
        return if lo.is_finite() { lo } else { hi };
    }
    if hi <= 0.0 {
        return -sample_truncated_std_normal(-hi, -lo, rng);
    }
    let x = if lo >= 0.0 {
        sample_upper(lo, hi, rng)
    } else if hi - lo < 1.0 {
        uniform_rejection(lo, hi, 0.0, rng)
    } else {
        let plo = norm_cdf(lo);
        let phi = norm_cdf(hi);
        let u: f64 = rng.random();
        let q = plo + u * (phi - plo);
        // Phi^{-1}(q) via the upper-tail inverse on the smaller side
        if q < 0.5 {
            -sf_inverse(q)
        } else {
            sf_inverse(1.0 - q)
        }
    };
    x.clamp(lo, hi)
}

fn sample_upper<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi.is_finite() && (hi - lo) * hi < 1.0 {
        return uniform_rejection(lo, hi, lo, rng);
    }
    let slo = norm_sf(lo);
    if lo < ASYMPTOTIC_FROM && slo > 1e-280 {
        let shi = norm_sf(hi);
        let u: f64 = rng.random();
        let q = shi + u * (slo - shi);
        if q > 0.0 {
            return sf_inverse(q);
        }
    }
    exponential_rejection(lo, hi, rng)
}

/// Uniform proposal on `[lo, hi]` accepted with `phi(x) / phi(mode)`.
fn uniform_rejection<R: Rng + ?Sized>(lo: f64, hi: f64, mode: f64, rng: &mut R) -> f64 {
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        let log_acc = -0.5 * (x * x - mode * mode);
        if rng.random::<f64>().ln() <= log_acc {
            return x;
        }
    }
}

/// Robert (1995) translated-exponential proposal for `lo > 0`.
fn exponential_rejection<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let alpha = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        let e = -(1.0 - rng.random::<f64>()).ln();
        let x = lo + e / alpha;
        if x > hi {
            continue;
        }
        let log_acc = -0.5 * (x - alpha) * (x - alpha);
        if rng.random::<f64>().ln() <= log_acc {
            return x;
        }
    }
}

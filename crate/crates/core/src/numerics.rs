//! Small numerical helpers shared by the analytic and simulation modules.

use statrs::function::gamma::ln_gamma;

/// log(Σ exp(xᵢ)), −∞ for an empty or all −∞ input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// log I_ν(z) for ν > −1, z ≥ 0, evaluated without overflow.
pub fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    assert!(nu > -1.0 && z >= 0.0, "ln_bessel_i domain: nu={nu}, z={z}");
    if z == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if z > 40.0 + 2.0 * nu * nu {
        ln_bessel_i_asymptotic(nu, z)
    } else {
        ln_bessel_i_series(nu, z)
    }
}

fn ln_bessel_i_asymptotic(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    {
        // Hankel expansion: I_ν(z) ≈ e^z/√(2πz) Σ (−1)^k a_k(ν)/z^k
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * z);
            if next.abs() > term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        z - 0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
    }
}

fn ln_bessel_i_series(nu: f64, z: f64) -> f64 {
    // Power series Σ (z/2)^{2k+ν} / (k! Γ(k+ν+1)) accumulated relative to its
    // largest term.
    let half_ln = (0.5 * z).ln();
    let log_term = |k: f64| (2.0 * k + nu) * half_ln - ln_gamma(k + 1.0) - ln_gamma(k + nu + 1.0);
    let peak = {
        // terms grow while (z/2)² > (k+1)(k+ν+1)
        let q = 0.25 * z * z;
        let k = (-(nu + 2.0) + ((nu + 2.0).powi(2) - 4.0 * (nu + 1.0 - q)).max(0.0).sqrt()) / 2.0;
        k.max(0.0).floor()
    };
    let top = log_term(peak);
    let ratio = 0.25 * z * z;
    let mut sum = 1.0;
    // forward
    let mut t = 1.0;
    let mut k = peak;
    loop {
        t *= ratio / ((k + 1.0) * (k + nu + 1.0));
        sum += t;
        k += 1.0;
        if t < 1e-18 * sum {
            break;
        }
    }
    // backward
    let mut t = 1.0;
    let mut k = peak;
    while k >= 1.0 {
        t *= k * (k + nu) / ratio;
        sum += t;
        k -= 1.0;
        if t < 1e-18 * sum {
            break;
        }
    }
    top + sum.ln()
}

/// log ∫_{lo}^{hi} exp(f(s)) ds with the trapezoid rule on `n` intervals,
/// computed in log space. Spectrally accurate for smooth integrands that
/// decay at both ends.
pub fn log_trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let v = f(lo + h * i as f64);
            if i == 0 || i == n {
                v - std::f64::consts::LN_2
            } else {
                v
            }
        })
        .collect();
    log_sum_exp(&vals) + h.ln()
}

/// log ∫₀^∞ exp(g(x)) dx via the substitution x = e^s.
pub fn log_integrate_positive(g: impl Fn(f64) -> f64, ln_lo: f64, ln_hi: f64, n: usize) -> f64 {
    log_trapezoid(|s| g(s.exp()) + s, ln_lo, ln_hi, n)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of a unimodal function on [lo, hi].
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    (x, fx)
}

/// √(s² + x) − s without cancellation, for s² + x ≥ 0.
pub fn sqrt_sum_minus(s: f64, x: f64) -> f64 {
    let root = (s * s + x).sqrt();
    if s > 0.0 {
        x / (root + s)
    } else {
        root - s
    }
}

/// `n` points log-spaced over [lo, hi].
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `n` points evenly spaced over [lo, hi].
pub fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

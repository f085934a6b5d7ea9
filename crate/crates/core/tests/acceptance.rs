//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use letf_core::catalog::{quadratic_spec, validate, ModelSpec, Problem, Strictness, ValidatedProblem};
use letf_core::eigen::{default_grid, eigenpair, generator_residual, ResidualMode};
use letf_core::growth::{
    cir_exponential_moment_growth, growth_rate, inverse_garch_discount_growth, Formula,
};
use letf_core::mc::{cir_log_density, martingale_check, simulate_discount_growth, simulate_growth, SimConfig};
use letf_core::numerics::{lin_space, log_integrate_positive};
use letf_core::optimal::{optimal_beta, optimal_beta_with, Method, OptimalOptions, MARKET_CAP};
use letf_core::riccati::{analyze_quadratic, q_coefficient, riccati_residual, solve_stabilizing_riccati};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relaxed(model: ModelSpec, alpha: f64, beta: f64, r: Option<f64>) -> ValidatedProblem {
    validate(&Problem::new(model, alpha, beta, r), Strictness::Relaxed).expect("valid problem")
}

fn strict(model: ModelSpec, alpha: f64, beta: f64, r: Option<f64>) -> ValidatedProblem {
    validate(&Problem::new(model, alpha, beta, r), Strictness::Strict).expect("valid problem")
}

fn figure_one(mu: f64) -> ValidatedProblem {
    relaxed(
        ModelSpec::HestonSv {
            mu,
            theta: 0.16,
            a: 3.1,
            delta: 0.89,
            rho: -0.5,
            v0: 0.16 / 3.1,
        },
        0.5,
        1.0,
        Some(0.01),
    )
}

fn figure_two(mu: f64) -> ValidatedProblem {
    relaxed(
        ModelSpec::GbmVasicek {
            mu,
            sigma: 0.3,
            theta: 0.16,
            a: 3.0,
            delta: 0.89,
            rho: -0.5,
            r0: 0.01,
        },
        0.8,
        1.0,
        None,
    )
}

fn quadratic_model() -> ModelSpec {
    quadratic_spec(
        &DVector::from_vec(vec![0.05, -0.02]),
        &DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -1.5]),
        &DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.25]),
    )
}

/// One representative parameter set per model, each strictly valid.
fn scenarios() -> Vec<(&'static str, ModelSpec, Option<f64>)> {
    vec![
        ("Gbm", ModelSpec::Gbm { mu: 0.05, sigma: 0.2 }, Some(0.01)),
        (
            "Garch",
            ModelSpec::Garch {
                theta: 0.1,
                a: 1.0,
                sigma: 0.3,
            },
            Some(0.01),
        ),
        (
            "InverseGarch",
            ModelSpec::InverseGarch {
                theta: 0.5,
                a: 0.5,
                sigma: 0.2,
            },
            Some(0.01),
        ),
        (
            "ExtendedCir",
            ModelSpec::ExtendedCir {
                theta: 0.05,
                mu: 0.2,
                sigma: 0.2,
            },
            Some(0.01),
        ),
        (
            "ThreeHalves",
            ModelSpec::ThreeHalves {
                theta: 1.0,
                a: 1.0,
                sigma: 0.2,
            },
            Some(0.01),
        ),
        (
            "HestonSV",
            ModelSpec::HestonSv {
                mu: 0.05,
                theta: 0.08,
                a: 2.0,
                delta: 0.3,
                rho: -0.5,
                v0: 0.04,
            },
            Some(0.01),
        ),
        (
            "ThreeHalvesSV",
            ModelSpec::ThreeHalvesSv {
                mu: 0.05,
                theta: 0.5,
                a: 10.0,
                delta: 1.0,
                rho: -0.5,
                v0: 0.05,
            },
            Some(0.01),
        ),
        (
            "GbmVasicek",
            ModelSpec::GbmVasicek {
                mu: 0.06,
                sigma: 0.2,
                theta: 0.03,
                a: 1.0,
                delta: 0.02,
                rho: -0.3,
                r0: 0.03,
            },
            None,
        ),
        (
            "GbmInverseGarchRate",
            ModelSpec::GbmInverseGarchRate {
                mu: 0.06,
                sigma: 0.2,
                theta: 0.5,
                a: 10.0,
                delta: 0.1,
                rho: -0.3,
                r0: 0.05,
            },
            None,
        ),
        ("Quadratic", quadratic_model(), Some(0.01)),
    ]
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn criterion_1(rep: &mut Report) {
    let start = Instant::now();
    let expected = [(0.05, 1.93), (0.01, 0.0), (-0.05, -1.95)];
    let mut ok = true;
    let mut found = Vec::new();
    for (mu, target) in expected {
        let p = figure_one(mu);
        let o = optimal_beta(&p, Some(MARKET_CAP)).expect("optimum");
        let closed_ok = o.method == Method::ClosedForm && (o.beta_star - target).abs() <= 0.01;
        let grid = lin_space(-3.0, 3.0, 601);
        let (arg, _) = grid
            .iter()
            .map(|&b| (b, growth_rate(&p.with_beta(b).unwrap()).unwrap().value().unwrap()))
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, (b, v)| if v > acc.1 { (b, v) } else { acc });
        let grid_ok = (arg - target).abs() <= 0.02;
        ok &= closed_ok && grid_ok;
        found.push(format!("{:.4}/{:.2}", o.beta_star, arg));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    rep.line(
        1,
        ok,
        format!("Heston beta* closed/grid = [{}] vs [1.93, 0.00, -1.95], {secs:.3}s", found.join(", ")),
    );
}

fn criterion_2(rep: &mut Report) {
    let start = Instant::now();
    let expected = [(0.05, 3.65), (0.01, 1.52), (-0.05, -1.68)];
    let mut ok = true;
    let mut found = Vec::new();
    let opts = OptimalOptions {
        formula: Formula::Published,
        ..OptimalOptions::default()
    };
    for (mu, target) in expected {
        let o = optimal_beta_with(&figure_two(mu), &opts).expect("optimum");
        ok &= o.method == Method::QuadraticVertex && (o.beta_star - target).abs() <= 0.01;
        found.push(format!("{:.4}", o.beta_star));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    rep.line(
        2,
        ok,
        format!("Vasicek vertex -C2/(2C1) = [{}] vs [3.65, 1.52, -1.68], {secs:.3}s", found.join(", ")),
    );
}

fn criterion_3(rep: &mut Report) {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut worst_rel: f64 = 0.0;
    let mut ok = true;
    for (name, model, r) in scenarios() {
        for alpha in [0.3, 0.7, 1.0] {
            for beta in [-3.0, 2.0, 3.0] {
                let p = relaxed(model.clone(), alpha, beta, r);
                let res = eigenpair(&p).and_then(|e| generator_residual(&p, &e, None, ResidualMode::Exact));
                match res {
                    Ok(res) => {
                        if res.max_abs_residual > worst.0 || res.max_abs_residual.is_nan() {
                            worst = (res.max_abs_residual, format!("{name} alpha={alpha} beta={beta}"));
                        }
                        worst_rel = worst_rel.max(res.max_rel_residual);
                        ok &= res.max_abs_residual <= 1e-9 && res.max_rel_residual <= 1e-9;
                    }
                    Err(e) => {
                        ok = false;
                        worst = (f64::NAN, format!("{name} alpha={alpha} beta={beta}: {e}"));
                    }
                }
            }
        }
    }
    let n = default_grid(&relaxed(ModelSpec::Gbm { mu: 0.05, sigma: 0.2 }, 0.5, 2.0, Some(0.01))).len();
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 5.0;
    rep.line(
        3,
        ok,
        format!(
            "90 eigenpairs on {n}-point default grids, worst residual {:.2e} ({}), worst relative {worst_rel:.2e}, {secs:.2}s",
            worst.0, worst.1
        ),
    );
}

fn criterion_4(rep: &mut Report) {
    let start = Instant::now();
    let cfg = SimConfig::new(1.0, 400, 200_000, 2024);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, model, r) in scenarios() {
        let p = strict(model, 0.5, 2.0, r);
        let pair = eigenpair(&p).expect("eigenpair");
        match martingale_check(&p, &pair, 1.0, &cfg) {
            Ok(m) => {
                ok &= m.certified();
                parts.push(format!(
                    "{name} {:.5}±{:.1e}{}",
                    m.mean,
                    m.stderr,
                    if m.certified() { "" } else { " (gap)" }
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} error {e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    rep.line(4, ok, format!("E[M_1] within 3 s.e. of 1: {}; {secs:.1}s", parts.join(", ")));
}

/// Runs criterion 5 and returns the quadratic-model comparison for criterion 7.
fn criterion_5(rep: &mut Report) -> Option<(f64, f64, f64)> {
    let start = Instant::now();
    let cfg = SimConfig::new(20.0, 1000, 200_000, 42);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut quadratic = None;
    for (name, model, r) in scenarios() {
        let p = strict(model, 0.5, 2.0, r);
        let analytic = growth_rate(&p).expect("growth rate").value().expect("finite");
        match simulate_growth(&p, &cfg) {
            Ok(g) => {
                let gap = (g.slope - analytic).abs();
                let pass = if name == "Gbm" {
                    gap <= 3.0 * g.slope_stderr && g.slope_stderr < 1e-3
                } else {
                    gap <= (0.05 * analytic.abs()).max(3.0 * g.slope_stderr)
                };
                ok &= pass && !g.diverged;
                if name == "Quadratic" {
                    quadratic = Some((g.slope, g.slope_stderr, analytic));
                }
                parts.push(format!(
                    "{name} {:.5}±{:.5} vs {:.5}{}",
                    g.slope,
                    g.slope_stderr,
                    analytic,
                    if pass { "" } else { " (gap)" }
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} error {e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    rep.line(5, ok, format!("MC slope vs Λ at α=0.5, β=2: {}; {secs:.1}s", parts.join(", ")));
    quadratic
}

fn criterion_6(rep: &mut Report) {
    let p = relaxed(
        ModelSpec::Garch {
            theta: 0.5,
            a: 0.5,
            sigma: 0.5,
        },
        1.0,
        10.0,
        Some(0.01),
    );
    let g = growth_rate(&p).expect("growth rate");
    let cfg = SimConfig::new(20.0, 1000, 200_000, 6);
    let mc = simulate_growth(&p, &cfg).expect("simulation");
    let ok = !g.is_finite() && mc.diverged;
    rep.line(
        6,
        ok,
        format!(
            "GARCH αβ=10 ≥ 2a/σ²+1=5: analytic {:?}, MC diverged={} (tail index {:.3})",
            g.classification, mc.diverged, mc.tail_index
        ),
    );
}

fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let s = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let a = &s * s.transpose() + DMatrix::identity(d, d) * 0.1;
    let bmat = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)) - DMatrix::identity(d, d) * 0.5;
    let alpha: f64 = rng.random_range(0.1..1.0);
    let beta: f64 = if rng.random_bool(0.5) {
        rng.random_range(1.0..4.0)
    } else {
        rng.random_range(-3.0..0.0)
    };
    (a, bmat, q_coefficient(alpha, beta))
}

fn criterion_7(rep: &mut Report, quadratic: Option<(f64, f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_residual: f64 = 0.0;
    let mut all_stable = true;
    let mut solved = 0;
    for i in 0..100 {
        let d = 1 + i % 6;
        let (a, bmat, q) = random_instance(&mut rng, d);
        match solve_stabilizing_riccati(&a, &bmat, q) {
            Ok(sol) => {
                solved += 1;
                let res = riccati_residual(&sol.v, &a, &bmat, q).amax();
                worst_residual = worst_residual.max(res);
                all_stable &= sol.stable && sol.max_real_part < 0.0;
            }
            Err(_) => all_stable = false,
        }
    }
    let mut scalar_gap: f64 = 0.0;
    for i in 0..50 {
        let a = 0.1 + 0.05 * i as f64;
        let b = -2.0 + 0.09 * i as f64;
        let q = 0.02 * i as f64;
        let sol = solve_stabilizing_riccati(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            q,
        )
        .expect("scalar solve");
        let exact = (b + (b * b + 2.0 * q * a * a).sqrt()) / (2.0 * a);
        scalar_gap = scalar_gap.max((sol.v[(0, 0)] - exact).abs());
    }
    let p = strict(quadratic_model(), 0.5, 2.0, Some(0.01));
    let analysis = analyze_quadratic(&p).expect("quadratic analysis");
    let conv = &analysis.convergence;
    let (mc_ok, mc_text) = match quadratic {
        Some((slope, se, analytic)) => {
            let gap = (slope - analytic).abs();
            (
                gap <= (0.05 * analytic.abs()).max(3.0 * se) && conv.all_eigs_negative_exponent,
                format!("MC {slope:.5}±{se:.5} vs Λ {analytic:.5}"),
            )
        }
        None => (false, "no MC result".to_string()),
    };
    let ok = solved == 100 && worst_residual <= 1e-10 && all_stable && scalar_gap <= 1e-12 && mc_ok;
    rep.line(
        7,
        ok,
        format!(
            "{solved}/100 random CARE solved, worst residual {worst_residual:.2e}, Hurwitz={all_stable}; d=1 gap {scalar_gap:.1e}; {mc_text}; \
             C test exponent form finite={} / literal form finite={} (data supports the exponent form: {})",
            conv.all_eigs_negative_exponent,
            conv.all_eigs_negative_literal,
            mc_ok
        ),
    );
}

fn criterion_8(rep: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut worst: f64 = 0.0;
    for (_, model, r) in scenarios() {
        let Some(r) = r else { continue };
        for alpha in [0.3, 0.7, 1.0] {
            let p = relaxed(model.clone(), alpha, 0.0, Some(r));
            let v = growth_rate(&p).unwrap().value().unwrap();
            worst = worst.max((v - alpha * r).abs());
        }
    }
    ok &= worst == 0.0;
    notes.push(format!("max |Λ(0) − αr| = {worst:.1e}"));
    // GARCH and inverse GARCH coincide where both are finite
    let mut gap: f64 = 0.0;
    for beta in [-3.0, -1.0, 0.5, 2.0, 3.0] {
        let g = growth_rate(&relaxed(
            ModelSpec::Garch {
                theta: 0.5,
                a: 0.5,
                sigma: 0.2,
            },
            0.5,
            beta,
            Some(0.01),
        ))
        .unwrap();
        let ig = growth_rate(&relaxed(
            ModelSpec::InverseGarch {
                theta: 0.5,
                a: 0.5,
                sigma: 0.2,
            },
            0.5,
            beta,
            Some(0.01),
        ))
        .unwrap();
        if let (Some(x), Some(y)) = (g.value(), ig.value()) {
            gap = gap.max((x - y).abs());
        }
    }
    ok &= gap == 0.0;
    notes.push(format!("GARCH vs inverse GARCH gap {gap:.1e}"));
    // extended CIR independent of (θ, σ)
    let base = growth_rate(&relaxed(
        ModelSpec::ExtendedCir {
            theta: 0.05,
            mu: 0.2,
            sigma: 0.2,
        },
        0.5,
        2.0,
        Some(0.01),
    ))
    .unwrap()
    .value()
    .unwrap();
    let mut spread: f64 = 0.0;
    for (theta, sigma) in [(0.1, 0.2), (0.5, 0.3), (1.0, 0.7), (0.3, 0.5)] {
        let v = growth_rate(&relaxed(ModelSpec::ExtendedCir { theta, mu: 0.2, sigma }, 0.5, 2.0, Some(0.01)))
            .unwrap()
            .value()
            .unwrap();
        spread = spread.max((v - base).abs());
    }
    ok &= spread <= 1e-12;
    notes.push(format!("extended CIR spread over (θ, σ) {spread:.1e}"));
    // Heston with δ → 0, ρ = 0 reduces to GBM with σ² = θ/a
    let (theta, a) = (0.04, 2.0);
    let mut heston_gap: f64 = 0.0;
    for beta in [-3.0, 2.0, 3.0] {
        let h = growth_rate(&relaxed(
            ModelSpec::HestonSv {
                mu: 0.05,
                theta,
                a,
                delta: 1e-4,
                rho: 0.0,
                v0: theta / a,
            },
            0.5,
            beta,
            Some(0.01),
        ))
        .unwrap()
        .value()
        .unwrap();
        let g = growth_rate(&relaxed(
            ModelSpec::Gbm {
                mu: 0.05,
                sigma: (theta / a).sqrt(),
            },
            0.5,
            beta,
            Some(0.01),
        ))
        .unwrap()
        .value()
        .unwrap();
        heston_gap = heston_gap.max((h - g).abs());
    }
    ok &= heston_gap <= 1e-6;
    notes.push(format!("Heston δ=1e-4 vs GBM gap {heston_gap:.1e}"));
    rep.line(8, ok, notes.join("; "));
}

fn criterion_9(rep: &mut Report) {
    // CIR exponential moment via quadrature of the transition density
    let (p, ell, mu, sigma, x0) = (0.5, 0.08, 0.5, 0.3, 0.04);
    let k = 2.0 * mu / (sigma * sigma);
    let log_moment = |t: f64| {
        // decay rate of the integrand, c − k = k·e^{−μt}/(1 − e^{−μt})
        let excess = k * (-mu * t).exp() / (-(-mu * t).exp_m1());
        let hi = (1e4 / excess).ln() + 5.0;
        log_integrate_positive(
            |x| cir_log_density(x, t, ell, mu, sigma, x0) + p * x.ln() + k * x,
            -40.0,
            hi,
            40_000,
        )
    };
    let quad_slope = (log_moment(20.0) - log_moment(10.0)) / 10.0;
    let formula_a = cir_exponential_moment_growth(p, ell, mu, sigma).value().unwrap();
    let rel_a = (quad_slope / formula_a - 1.0).abs();

    // inverse GARCH discount growth via Monte Carlo
    let (c, theta, a, s) = (1.0, 0.3, 1.0, 0.2);
    let formula_b = inverse_garch_discount_growth(c, theta, a, s).unwrap().value().unwrap();
    let cfg = SimConfig::new(20.0, 2000, 200_000, 9);
    let mc = simulate_discount_growth(c, theta, a, s, theta / a, &cfg).expect("simulation");
    let rel_b = (mc.slope / formula_b - 1.0).abs();
    let ok = rel_a <= 0.05 && rel_b <= 0.05;
    rep.line(
        9,
        ok,
        format!(
            "CIR moment growth {formula_a:.5} vs quadrature {quad_slope:.5} ({:.2}%); discount growth {formula_b:.5} vs MC {:.5}±{:.5} ({:.2}%)",
            100.0 * rel_a,
            mc.slope,
            mc.slope_stderr,
            100.0 * rel_b
        ),
    );
}

fn main() -> ExitCode {
    let mut rep = Report { failures: 0 };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep);
    criterion_6(&mut rep);
    criterion_4(&mut rep);
    let quadratic = criterion_5(&mut rep);
    criterion_7(&mut rep, quadratic);
    if rep.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", rep.failures);
        ExitCode::FAILURE
    }
}


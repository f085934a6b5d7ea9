use std::path::PathBuf;

use letf_core::catalog::ModelSpec;
use letf_core::growth::{growth_rate_with, Formula};
use letf_core::optimal::{optimal_beta_with, OptimalOptions, MARKET_CAP};
use letf_core::{Problem, Strictness};

use crate::commands::{checked, problem_json, record, CliResult};
use crate::output::{emit, fmt_num, fmt_opt, Csv, SimOverrides};
use crate::Cli;

pub const FIGURE_MUS: [f64; 3] = [0.05, 0.01, -0.05];

/// Heston volatility, α = 0.5, r = 0.01, started at the long-run mean.
pub fn figure_one_problem(mu: f64) -> Problem {
    let (theta, a) = (0.16, 3.1);
    Problem::new(
        ModelSpec::HestonSv {
            mu,
            theta,
            a,
            delta: 0.89,
            rho: -0.5,
            v0: theta / a,
        },
        0.5,
        1.0,
        Some(0.01),
    )
}

/// Vasicek short rate, α = 0.8, r₀ = 0.01.
pub fn figure_two_problem(mu: f64) -> Problem {
    Problem::new(
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

struct FigureSetup {
    strictness: Strictness,
    formula: Formula,
    cap: Option<(f64, f64)>,
    problem: fn(f64) -> Problem,
}

fn setup(id: u8) -> FigureSetup {
    match id {
        1 => FigureSetup {
            strictness: Strictness::Relaxed,
            formula: Formula::Derived,
            cap: Some(MARKET_CAP),
            problem: figure_one_problem,
        },
        _ => FigureSetup {
            strictness: Strictness::Strict,
            formula: Formula::Published,
            cap: None,
            problem: figure_two_problem,
        },
    }
}

/// β ∈ [−3, 3] in steps of 0.01.
pub fn figure_grid() -> Vec<f64> {
    (-300..=300).map(|i| i as f64 / 100.0).collect()
}

/// Writes one (beta, rate) CSV per μ plus a summary into `--out` (a
/// directory). Without `--out`, prints the summary only.
pub fn run_figures(cli: &Cli, argv: &[String], id: u8) -> CliResult<()> {
    let s = setup(id);
    let mut summary = Csv::new(&["mu", "beta_star", "rate_at_star"]);
    let mut curves = Vec::new();
    let mut problems = Vec::new();
    for mu in FIGURE_MUS {
        let problem = (s.problem)(mu);
        let p = checked(&problem, s.strictness)?;
        let opts = OptimalOptions {
            cap: s.cap,
            formula: s.formula,
            ..OptimalOptions::default()
        };
        let o = optimal_beta_with(&p, &opts)?;
        summary.push(vec![fmt_num(mu), fmt_num(o.beta_star), fmt_opt(o.rate_at_star)]);
        let mut curve = Csv::new(&["beta", "rate"]);
        for beta in figure_grid() {
            let g = growth_rate_with(&p.with_beta(beta)?, s.formula)?;
            curve.push(vec![fmt_num(beta), fmt_opt(g.value())]);
        }
        curves.push((mu, curve));
        problems.push(problem_json(&problem));
    }
    let Some(dir) = &cli.out else {
        emit(None, &summary.render())?;
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for (mu, curve) in &curves {
        let path = dir.join(format!("figure{id}_mu_{}.csv", fmt_num(*mu)));
        emit(Some(&path), &curve.render())?;
        files.push(path);
    }
    let path = dir.join(format!("figure{id}_summary.csv"));
    emit(Some(&path), &summary.render())?;
    files.push(path);
    record(
        cli,
        argv,
        dir,
        files,
        &format!("figures {id}"),
        problems,
        SimOverrides {
            horizon: None,
            steps: None,
            paths: None,
            seed: None,
        },
    )
}

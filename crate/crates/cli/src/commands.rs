use std::fs;
use std::path::{Path, PathBuf};

use letf_core::eigen::{eigenpair, generator_residual, ResidualMode};
use letf_core::growth::{growth_rate_with, Classification, Formula};
use letf_core::mc::{martingale_check, simulate_growth, SimConfig};
use letf_core::optimal::{optimal_beta_with, OptimalOptions};
use letf_core::riccati::analyze_quadratic;
use letf_core::{validate, Error, Problem, Strictness, ValidatedProblem};

use crate::output::{emit, fmt_num, fmt_opt, write_manifest, Csv, RunManifest, SimOverrides};
use crate::{Cli, CliError, Command, GrowthArgs, OptimalArgs, PointArgs, VerifyArgs};

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli, argv: &[String]) -> CliResult<()> {
    match &cli.command {
        Command::Eigenpair(args) => eigenpair_cmd(cli, argv, args),
        Command::Growth(args) => growth_cmd(cli, argv, args),
        Command::Optimal(args) => optimal_cmd(cli, argv, args),
        Command::Riccati(args) => riccati_cmd(cli, argv, args),
        Command::Verify(args) => verify_cmd(cli, argv, args),
        Command::Figures { id } => crate::figures::run_figures(cli, argv, *id),
    }
}

pub fn strictness(cli: &Cli) -> Strictness {
    if cli.relax {
        Strictness::Relaxed
    } else {
        Strictness::Strict
    }
}

fn load_problem(cli: &Cli) -> CliResult<Problem> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this subcommand needs --config <path>".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    Ok(Problem::from_json(&text)?)
}

pub fn checked(problem: &Problem, strictness: Strictness) -> CliResult<ValidatedProblem> {
    let v = validate(problem, strictness)?;
    for w in v.warnings() {
        eprintln!("warning ({}): {}", w.field, w.constraint);
    }
    Ok(v)
}

fn resolve(cli: &Cli, point: &PointArgs) -> CliResult<ValidatedProblem> {
    let mut problem = load_problem(cli)?;
    if let Some(alpha) = point.alpha {
        problem.pref.alpha = alpha;
    }
    if let Some(beta) = point.beta {
        problem.leverage.beta = beta;
    }
    checked(&problem, strictness(cli))
}

fn formula(published: bool) -> Formula {
    if published {
        Formula::Published
    } else {
        Formula::Derived
    }
}

/// Quotes a CSV field when it contains a separator or quote.
pub fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn problem_json(p: &Problem) -> serde_json::Value {
    serde_json::from_str(&p.to_json()).expect("problem JSON")
}

pub struct Finish<'a> {
    pub subcommand: &'a str,
    pub problems: Vec<serde_json::Value>,
    pub files: Vec<PathBuf>,
    pub sim: SimOverrides,
}

/// Emits `text` and, when an output path was given, the manifest sidecar.
pub fn finish(cli: &Cli, argv: &[String], text: &str, meta: Finish<'_>) -> CliResult<()> {
    emit(cli.out.as_deref(), text)?;
    if let Some(out) = &cli.out {
        let mut files = meta.files;
        if files.is_empty() {
            files.push(out.clone());
        }
        record(cli, argv, out, files, meta.subcommand, meta.problems, meta.sim)?;
    }
    Ok(())
}

pub fn record(
    cli: &Cli,
    argv: &[String],
    out: &Path,
    files: Vec<PathBuf>,
    subcommand: &str,
    problems: Vec<serde_json::Value>,
    sim: SimOverrides,
) -> CliResult<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config: cli.config.clone(),
        problems,
        output: out.to_path_buf(),
        files,
        sim,
        relax: cli.relax,
        argv: argv.to_vec(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_manifest(&manifest)?;
    Ok(())
}

fn no_sim() -> SimOverrides {
    SimOverrides {
        horizon: None,
        steps: None,
        paths: None,
        seed: None,
    }
}

fn eigenpair_cmd(cli: &Cli, argv: &[String], args: &PointArgs) -> CliResult<()> {
    let p = resolve(cli, args)?;
    let pair = eigenpair(&p)?;
    let res = generator_residual(&p, &pair, None, ResidualMode::Exact)?;
    let mut csv = Csv::new(&[
        "model",
        "alpha",
        "beta",
        "lambda",
        "family",
        "kappa",
        "max_abs_residual",
        "max_rel_residual",
        "worst_point",
    ]);
    let worst: Vec<String> = res.worst_point.iter().map(|&x| fmt_num(x)).collect();
    csv.push(vec![
        p.model.kind().to_string(),
        fmt_num(p.alpha()),
        fmt_num(p.beta()),
        fmt_num(pair.lambda),
        pair.phi.family().to_string(),
        pair.kappa.map(fmt_num).unwrap_or_default(),
        fmt_num(res.max_abs_residual),
        fmt_num(res.max_rel_residual),
        worst.join(";"),
    ]);
    finish(
        cli,
        argv,
        &csv.render(),
        Finish {
            subcommand: "eigenpair",
            problems: vec![problem_json(p.problem())],
            files: Vec::new(),
            sim: no_sim(),
        },
    )
}

/// Parses `lo:hi:step` into an evenly spaced grid including both ends.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("grid `{spec}` must be lo:hi:step")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(CliError::Usage(format!("grid `{spec}` must be lo:hi:step")));
    };
    if !(lo.is_finite() && hi.is_finite() && step > 0.0 && hi >= lo) {
        return Err(CliError::Usage(format!("grid `{spec}` needs lo ≤ hi and step > 0")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(CliError::Usage(format!("grid `{spec}` has too many points")));
    }
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

fn parse_cap(spec: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("cap `{spec}` must be lo:hi"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

pub fn growth_row(p: &ValidatedProblem, formula: Formula) -> CliResult<Vec<String>> {
    let g = growth_rate_with(p, formula)?;
    let (class, rate) = match g.classification {
        Classification::Finite(v) => ("Finite", fmt_num(v)),
        Classification::Infinite => ("Infinite", "inf".to_string()),
    };
    Ok(vec![
        fmt_num(p.beta()),
        class.to_string(),
        rate,
        quote(&g.condition.description),
        fmt_num(g.condition.lhs),
        fmt_num(g.condition.threshold),
    ])
}

fn growth_cmd(cli: &Cli, argv: &[String], args: &GrowthArgs) -> CliResult<()> {
    let p = resolve(cli, &args.point)?;
    let formula = formula(args.published);
    let betas = match &args.betas {
        Some(spec) => parse_grid(spec)?,
        None => vec![p.beta()],
    };
    let mut csv = Csv::new(&["beta", "classification", "rate", "condition", "condition_lhs", "condition_threshold"]);
    for beta in betas {
        csv.push(growth_row(&p.with_beta(beta)?, formula)?);
    }
    finish(
        cli,
        argv,
        &csv.render(),
        Finish {
            subcommand: "growth",
            problems: vec![problem_json(p.problem())],
            files: Vec::new(),
            sim: no_sim(),
        },
    )
}

fn optimal_cmd(cli: &Cli, argv: &[String], args: &OptimalArgs) -> CliResult<()> {
    let p = resolve(
        cli,
        &PointArgs {
            alpha: args.alpha,
            beta: None,
        },
    )?;
    let opts = OptimalOptions {
        cap: args.cap.as_deref().map(parse_cap).transpose()?,
        formula: formula(args.published),
        ..OptimalOptions::default()
    };
    let o = optimal_beta_with(&p, &opts)?;
    for note in &o.notes {
        eprintln!("note: {note}");
    }
    let mut csv = Csv::new(&["alpha", "beta_star", "rate_at_star", "method", "finite_beta", "finite_rate"]);
    csv.push(vec![
        fmt_num(p.alpha()),
        fmt_num(o.beta_star),
        fmt_opt(o.rate_at_star),
        o.method.to_string(),
        o.finite_branch.map(|b| fmt_num(b.0)).unwrap_or_default(),
        o.finite_branch.map(|b| fmt_num(b.1)).unwrap_or_default(),
    ]);
    finish(
        cli,
        argv,
        &csv.render(),
        Finish {
            subcommand: "optimal",
            problems: vec![problem_json(p.problem())],
            files: Vec::new(),
            sim: no_sim(),
        },
    )
}

fn riccati_cmd(cli: &Cli, argv: &[String], args: &PointArgs) -> CliResult<()> {
    let p = resolve(cli, args)?;
    if p.model.quadratic_parts().is_none() {
        return Err(CliError::Core(Error::InvalidConfig(format!(
            "riccati needs a Quadratic model, got {}",
            p.model.kind()
        ))));
    }
    let q = analyze_quadratic(&p)?;
    let s = &q.solution;
    let mut csv = Csv::new(&["quantity", "value"]);
    let mut row = |k: String, v: String| csv.push(vec![k, v]);
    row("lambda".into(), fmt_num(s.lambda));
    row("residual".into(), fmt_num(s.residual));
    row("stable".into(), s.stable.to_string());
    for i in 0..s.v.nrows() {
        for j in 0..s.v.ncols() {
            row(format!("V[{i}][{j}]"), fmt_num(s.v[(i, j)]));
        }
    }
    for (i, u) in s.u.iter().enumerate() {
        row(format!("u[{i}]"), fmt_num(*u));
    }
    for (i, m) in q.stationary.mean.iter().enumerate() {
        row(format!("stationary_mean[{i}]"), fmt_num(*m));
    }
    for (i, e) in q.convergence.eigs_exponent.iter().enumerate() {
        row(format!("c_exponent_eig[{i}]"), fmt_num(*e));
    }
    for (i, e) in q.convergence.eigs_literal.iter().enumerate() {
        row(format!("c_literal_eig[{i}]"), fmt_num(*e));
    }
    row(
        "c_test_exponent".into(),
        q.convergence.all_eigs_negative_exponent.to_string(),
    );
    row("c_test_literal".into(), q.convergence.all_eigs_negative_literal.to_string());
    finish(
        cli,
        argv,
        &csv.render(),
        Finish {
            subcommand: "riccati",
            problems: vec![problem_json(p.problem())],
            files: Vec::new(),
            sim: no_sim(),
        },
    )
}

fn verify_cmd(cli: &Cli, argv: &[String], args: &VerifyArgs) -> CliResult<()> {
    let p = resolve(cli, &args.point)?;
    let sim = SimOverrides {
        horizon: args.horizon,
        steps: args.steps,
        paths: args.paths,
        seed: cli.seed,
    };
    let cfg = SimConfig::new(
        args.horizon.unwrap_or(20.0),
        args.steps.unwrap_or(1000),
        args.paths.unwrap_or(200_000),
        cli.seed.unwrap_or(42),
    );
    cfg.validate()?;
    let mut csv = Csv::new(&["check", "analytic", "estimate", "stderr", "tolerance", "status"]);
    let mut failures = 0;
    let mut push = |csv: &mut Csv, name: &str, vals: [String; 4], pass: bool| {
        if !pass {
            failures += 1;
        }
        let [a, e, s, t] = vals;
        csv.push(vec![name.into(), a, e, s, t, if pass { "PASS" } else { "FAIL" }.into()]);
    };

    match eigenpair(&p) {
        Ok(pair) => {
            let res = generator_residual(&p, &pair, None, ResidualMode::Exact)?;
            push(
                &mut csv,
                "generator_residual",
                [fmt_num(0.0), fmt_num(res.max_abs_residual), String::new(), fmt_num(1e-9)],
                res.max_abs_residual <= 1e-9,
            );
            let m = martingale_check(&p, &pair, 1.0, &cfg)?;
            push(
                &mut csv,
                "martingale_mean",
                [fmt_num(1.0), fmt_num(m.mean), fmt_num(m.stderr), fmt_num(3.0 * m.stderr)],
                m.certified(),
            );
        }
        Err(e @ Error::ComplexKappa { .. }) => eprintln!("note: no eigenpair ({e})"),
        Err(e) => return Err(e.into()),
    }

    let g = growth_rate_with(&p, formula(args.published))?;
    match g.classification {
        Classification::Finite(rate) => {
            let mc = simulate_growth(&p, &cfg)?;
            let tol = (0.05 * rate.abs()).max(3.0 * mc.slope_stderr);
            push(
                &mut csv,
                "growth_rate",
                [fmt_num(rate), fmt_num(mc.slope), fmt_num(mc.slope_stderr), fmt_num(tol)],
                (mc.slope - rate).abs() <= tol && !mc.diverged,
            );
        }
        Classification::Infinite => {
            let (estimate, se, diverged) = match simulate_growth(&p, &cfg) {
                Ok(mc) => (fmt_num(mc.slope), fmt_num(mc.slope_stderr), mc.diverged),
                Err(Error::AllPathsDiverged) => ("inf".into(), String::new(), true),
                Err(e) => return Err(e.into()),
            };
            push(
                &mut csv,
                "growth_divergence",
                ["inf".into(), estimate, se, String::new()],
                diverged,
            );
        }
    }

    let text = csv.render();
    finish(
        cli,
        argv,
        &text,
        Finish {
            subcommand: "verify",
            problems: vec![problem_json(p.problem())],
            files: Vec::new(),
            sim,
        },
    )?;
    if cli.out.is_some() {
        eprint!("{text}");
    }
    if failures > 0 {
        return Err(CliError::VerifyFailed(failures));
    }
    Ok(())
}

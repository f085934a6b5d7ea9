//! The leverage β* maximizing Λ(β), by closed form where one exists and by
//! certified numeric search otherwise.

use std::fmt;

use rayon::prelude::*;

use crate::catalog::{ModelSpec, ValidatedProblem};
use crate::error::{Error, Result};
use crate::growth::{growth_rate_with, Classification, Formula};
use crate::numerics::{golden_section_max, lin_space};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Λ = offset + scale·(Dβ − √(C1β² + 2C2β + C3))
    StrictlyConcaveSqrt,
    /// Λ = C1β² + C2β + C0
    Quadratic,
    /// Λ = C2β + C0
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityProfile {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub d: Option<f64>,
    pub shape: Shape,
    /// Multiplier of the sqrt form (θ/δ² for the stochastic-volatility models,
    /// θ for the 3/2 model); 1 otherwise.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    ClosedForm,
    ConcaveSearch,
    QuadraticVertex,
    /// Optimum at a cap endpoint, or ±∞ when unbounded.
    Boundary(f64),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ClosedForm => write!(f, "ClosedForm"),
            Method::ConcaveSearch => write!(f, "ConcaveSearch"),
            Method::QuadraticVertex => write!(f, "QuadraticVertex"),
            Method::Boundary(b) if b.is_infinite() => {
                write!(f, "Boundary({}inf)", if *b > 0.0 { "+" } else { "-" })
            }
            Method::Boundary(b) => write!(f, "Boundary({}{})", if *b >= 0.0 { "+" } else { "" }, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalLeverage {
    /// ±∞ when growth is unbounded in that direction.
    pub beta_star: f64,
    /// None when the growth rate at β* is infinite or unbounded.
    pub rate_at_star: Option<f64>,
    pub method: Method,
    pub profile: Option<ConcavityProfile>,
    /// Maximizer over the Finite branch alone, when part of the domain is Infinite.
    pub finite_branch: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

impl OptimalLeverage {
    pub fn is_boundary(&self) -> bool {
        matches!(self.method, Method::Boundary(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalOptions {
    /// Closed interval of admissible β; None means ℝ.
    pub cap: Option<(f64, f64)>,
    /// Search bracket used in place of ℝ when uncapped.
    pub bracket: (f64, f64),
    pub formula: Formula,
    pub scan_points: usize,
}

impl Default for OptimalOptions {
    fn default() -> Self {
        OptimalOptions {
            cap: None,
            bracket: (-50.0, 50.0),
            formula: Formula::Derived,
            scan_points: 2001,
        }
    }
}

pub const MARKET_CAP: (f64, f64) = (-3.0, 3.0);

/// Sum of the growth-rate terms at β, ignoring the finiteness condition.
fn formula_value(problem: &ValidatedProblem, beta: f64, formula: Formula) -> Result<f64> {
    let g = growth_rate_with(&problem.with_beta(beta)?, formula)?;
    Ok(g.components.iter().map(|(_, v)| v).sum())
}

fn rate(problem: &ValidatedProblem, beta: f64, formula: Formula) -> Result<Classification> {
    Ok(growth_rate_with(&problem.with_beta(beta)?, formula)?.classification)
}

fn finite_rate(problem: &ValidatedProblem, beta: f64, formula: Formula) -> Option<f64> {
    rate(problem, beta, formula).ok().and_then(|c| c.value())
}

fn sqrt_profile(c1: f64, c2: f64, c3: f64, d: f64, scale: f64) -> ConcavityProfile {
    ConcavityProfile {
        c1: Some(c1),
        c2: Some(c2),
        c3: Some(c3),
        d: Some(d),
        shape: Shape::StrictlyConcaveSqrt,
        scale,
    }
}

/// The analytic shape of Λ(β), when the model has one.
pub fn concavity_profile(problem: &ValidatedProblem, formula: Formula) -> Result<Option<ConcavityProfile>> {
    let alpha = problem.alpha();
    let r = problem.r();
    Ok(match &problem.model {
        ModelSpec::Gbm { .. }
        | ModelSpec::Garch { .. }
        | ModelSpec::InverseGarch { .. }
        | ModelSpec::GbmVasicek { .. }
        | ModelSpec::GbmInverseGarchRate { .. } => {
            let (lm, l0, lp) = (
                formula_value(problem, -1.0, formula)?,
                formula_value(problem, 0.0, formula)?,
                formula_value(problem, 1.0, formula)?,
            );
            let c1 = 0.5 * (lp + lm) - l0;
            let c2 = 0.5 * (lp - lm);
            if c1 == 0.0 {
                Some(ConcavityProfile {
                    c1: None,
                    c2: Some(c2),
                    c3: None,
                    d: None,
                    shape: Shape::Linear,
                    scale: 1.0,
                })
            } else {
                Some(ConcavityProfile {
                    c1: Some(c1),
                    c2: Some(c2),
                    c3: None,
                    d: None,
                    shape: Shape::Quadratic,
                    scale: 1.0,
                })
            }
        }
        ModelSpec::ExtendedCir { mu, .. } => Some(ConcavityProfile {
            c1: None,
            c2: Some(alpha * (mu - r)),
            c3: None,
            d: None,
            shape: Shape::Linear,
            scale: 1.0,
        }),
        ModelSpec::ThreeHalves { theta, a, sigma } => {
            let g = 0.5 + a / (sigma * sigma);
            Some(sqrt_profile(alpha, -0.5 * alpha, g * g, -r * alpha / theta, *theta))
        }
        ModelSpec::HestonSv {
            mu,
            theta,
            a,
            delta,
            rho,
            ..
        }
        | ModelSpec::ThreeHalvesSv {
            mu,
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let speed = match problem.model {
                ModelSpec::HestonSv { .. } => *a,
                _ => a + 0.5 * delta * delta,
            };
            let d2 = delta * delta;
            let c1 = alpha * (1.0 - alpha) * d2 + alpha * alpha * d2 * rho * rho;
            let c2 = -speed * alpha * delta * rho;
            let d = alpha * d2 * (mu - r) / theta - alpha * delta * rho;
            Some(sqrt_profile(c1, c2, speed * speed, d, theta / d2))
        }
        ModelSpec::Quadratic { .. } => None,
    })
}

fn is_strictly_concave_sqrt(p: &ConcavityProfile) -> bool {
    match (p.c1, p.c2, p.c3) {
        (Some(c1), Some(c2), Some(c3)) => c1 > 0.0 && c2 * c2 - c1 * c3 < 0.0,
        _ => false,
    }
}

/// Λ′(β): exact for the sqrt, quadratic and linear shapes, a central
/// difference with h = 1e−6·max(1, |β|) otherwise.
pub fn lambda_derivative(problem: &ValidatedProblem, beta: f64) -> Result<f64> {
    lambda_derivative_with(problem, beta, Formula::Derived)
}

pub fn lambda_derivative_with(problem: &ValidatedProblem, beta: f64, formula: Formula) -> Result<f64> {
    match concavity_profile(problem, formula)? {
        Some(p) => Ok(profile_derivative(&p, beta)?),
        None => lambda_derivative_fd(problem, beta, formula),
    }
}

fn profile_derivative(p: &ConcavityProfile, beta: f64) -> Result<f64> {
    match p.shape {
        Shape::Linear => Ok(p.c2.unwrap_or(0.0)),
        Shape::Quadratic => Ok(2.0 * p.c1.unwrap_or(0.0) * beta + p.c2.unwrap_or(0.0)),
        Shape::StrictlyConcaveSqrt => {
            let (c1, c2, c3, d) = (p.c1.unwrap(), p.c2.unwrap(), p.c3.unwrap(), p.d.unwrap());
            let radicand = c1 * beta * beta + 2.0 * c2 * beta + c3;
            if radicand < 0.0 {
                return Err(Error::ComplexKappa { radicand });
            }
            Ok(p.scale * (d - (c1 * beta + c2) / radicand.sqrt()))
        }
    }
}

pub fn lambda_derivative_fd(problem: &ValidatedProblem, beta: f64, formula: Formula) -> Result<f64> {
    let h = 1e-6 * beta.abs().max(1.0);
    Ok((formula_value(problem, beta + h, formula)? - formula_value(problem, beta - h, formula)?) / (2.0 * h))
}

enum Candidate {
    Interior(f64, Method),
    Increasing,
    Decreasing,
    Search,
}

fn closed_form(problem: &ValidatedProblem, profile: Option<&ConcavityProfile>) -> Candidate {
    let Some(p) = profile else {
        return Candidate::Search;
    };
    let vertex_method = match problem.model {
        ModelSpec::GbmVasicek { .. } | ModelSpec::GbmInverseGarchRate { .. } => Method::QuadraticVertex,
        _ => Method::ClosedForm,
    };
    let by_sign = |s: f64| {
        if s > 0.0 {
            Candidate::Increasing
        } else if s < 0.0 {
            Candidate::Decreasing
        } else {
            Candidate::Interior(0.0, Method::ClosedForm)
        }
    };
    match p.shape {
        Shape::Linear => by_sign(p.c2.unwrap_or(0.0)),
        Shape::Quadratic => {
            let (c1, c2) = (p.c1.unwrap(), p.c2.unwrap());
            if c1 < 0.0 {
                Candidate::Interior(-c2 / (2.0 * c1), vertex_method)
            } else {
                // convex: unbounded on the side away from the vertex
                by_sign(c2 / (2.0 * c1))
            }
        }
        Shape::StrictlyConcaveSqrt => {
            if !is_strictly_concave_sqrt(p) {
                return Candidate::Search;
            }
            let (c1, c2, c3, d) = (p.c1.unwrap(), p.c2.unwrap(), p.c3.unwrap(), p.d.unwrap());
            if c1 > d * d {
                let beta = -c2 / c1 + (d / c1) * ((c1 * c3 - c2 * c2) / (c1 - d * d)).sqrt();
                Candidate::Interior(beta, Method::ClosedForm)
            } else {
                by_sign(d)
            }
        }
    }
}

/// One Newton step on Λ′ when it lowers |Λ′|.
fn polish(problem: &ValidatedProblem, beta: f64, formula: Formula) -> f64 {
    let mut best = beta;
    let Ok(mut best_d) = lambda_derivative_with(problem, beta, formula) else {
        return beta;
    };
    for _ in 0..20 {
        if best_d == 0.0 {
            break;
        }
        let h = 1e-4 * best.abs().max(1.0);
        let (Ok(up), Ok(down)) = (
            lambda_derivative_with(problem, best + h, formula),
            lambda_derivative_with(problem, best - h, formula),
        ) else {
            break;
        };
        let curvature = (up - down) / (2.0 * h);
        if curvature >= 0.0 {
            break;
        }
        let next = best - best_d / curvature;
        match lambda_derivative_with(problem, next, formula) {
            Ok(d) if d.abs() < best_d.abs() => {
                best = next;
                best_d = d;
            }
            _ => break,
        }
    }
    best
}

/// Golden-section maximization of the Finite branch of Λ on [lo, hi],
/// followed by Newton refinement of Λ′ = 0.
pub fn search_optimum(problem: &ValidatedProblem, lo: f64, hi: f64, formula: Formula) -> Result<(f64, f64)> {
    let f = |b: f64| finite_rate(problem, b, formula).unwrap_or(f64::NEG_INFINITY);
    let (b, _) = golden_section_max(f, lo, hi, 1e-10 * (hi - lo).abs().max(1.0));
    let b = polish(problem, b, formula).clamp(lo, hi);
    let v = finite_rate(problem, b, formula).ok_or(Error::NoFiniteRegion)?;
    Ok((b, v))
}

pub fn optimal_beta(problem: &ValidatedProblem, cap: Option<(f64, f64)>) -> Result<OptimalLeverage> {
    optimal_beta_with(
        problem,
        &OptimalOptions {
            cap,
            ..OptimalOptions::default()
        },
    )
}

pub fn optimal_beta_with(problem: &ValidatedProblem, opts: &OptimalOptions) -> Result<OptimalLeverage> {
    let formula = opts.formula;
    let (lo, hi, capped) = match opts.cap {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("cap [{lo}, {hi}] is not a nonempty closed interval")));
            }
            (lo, hi, true)
        }
        None => (opts.bracket.0, opts.bracket.1, false),
    };
    let profile = concavity_profile(problem, formula)?;
    let n = if lo == hi { 1 } else { opts.scan_points.max(3) };
    let grid = if n == 1 { vec![lo] } else { lin_space(lo, hi, n) };
    let scan: Vec<Option<Classification>> = grid.par_iter().map(|&b| rate(problem, b, formula).ok()).collect();

    let finite: Vec<(usize, f64)> = scan
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.and_then(|c| c.value()).map(|v| (i, v)))
        .collect();
    if finite.is_empty() {
        return Err(Error::NoFiniteRegion);
    }
    let (best_i, _) = finite
        .iter()
        .copied()
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let neighbor_bracket = |i: usize| (grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]);
    let unbounded = |side: f64| if capped { side } else { side.signum() * f64::INFINITY };
    let mut notes = Vec::new();
    if !problem.warnings().is_empty() {
        notes.push("evaluated in relaxed mode".to_string());
    }

    let infinite: Vec<usize> = scan
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, Some(Classification::Infinite)))
        .map(|(i, _)| i)
        .collect();
    if !infinite.is_empty() {
        let side = if infinite.iter().any(|&i| i > best_i) { hi } else { lo };
        let (blo, bhi) = neighbor_bracket(best_i);
        let branch = search_optimum(problem, blo, bhi, formula).ok();
        let condition = growth_rate_with(&problem.with_beta(grid[infinite[0]])?, formula)?.condition;
        notes.push(format!(
            "growth is infinite where the condition {} fails; the Finite branch is maximized separately",
            condition.description
        ));
        return Ok(OptimalLeverage {
            beta_star: unbounded(side),
            rate_at_star: None,
            method: Method::Boundary(unbounded(side)),
            profile,
            finite_branch: branch,
            notes,
        });
    }

    let boundary = |side: f64, notes: Vec<String>| -> Result<OptimalLeverage> {
        let beta_star = unbounded(side);
        Ok(OptimalLeverage {
            beta_star,
            rate_at_star: if capped { finite_rate(problem, side, formula) } else { None },
            method: Method::Boundary(beta_star),
            profile,
            finite_branch: None,
            notes,
        })
    };

    match closed_form(problem, profile.as_ref()) {
        Candidate::Increasing => return boundary(hi, notes),
        Candidate::Decreasing => return boundary(lo, notes),
        Candidate::Interior(b, method) => {
            let b = polish(problem, b, formula);
            if capped && b > hi {
                return boundary(hi, notes);
            }
            if capped && b < lo {
                return boundary(lo, notes);
            }
            if let Some(v) = finite_rate(problem, b, formula) {
                if capped && ((b - hi).abs() < 1e-9 || (b - lo).abs() < 1e-9) {
                    notes.push("the interior optimum coincides with a cap endpoint".to_string());
                }
                return Ok(OptimalLeverage {
                    beta_star: b,
                    rate_at_star: Some(v),
                    method,
                    profile,
                    finite_branch: None,
                    notes,
                });
            }
        }
        Candidate::Search => {}
    }

    if best_i == 0 || best_i == n - 1 {
        return boundary(grid[best_i], notes);
    }
    let (blo, bhi) = neighbor_bracket(best_i);
    let (b, v) = search_optimum(problem, blo, bhi, formula)?;
    Ok(OptimalLeverage {
        beta_star: b,
        rate_at_star: Some(v),
        method: Method::ConcaveSearch,
        profile,
        finite_branch: None,
        notes,
    })
}

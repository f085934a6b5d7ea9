//! Long-term growth rate Λ(β) = lim (1/t) log E[L_t^α] and its finiteness
//! condition for every model, plus related closed-form limits.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::catalog::{ModelSpec, ValidatedProblem};
use crate::eigen::{eigenpair, extended_cir_kappa, sv_kappa, three_halves_kappa};
use crate::error::{Error, Result};
use crate::riccati;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    Finite(f64),
    Infinite,
}

impl Classification {
    pub fn value(&self) -> Option<f64> {
        match self {
            Classification::Finite(v) => Some(*v),
            Classification::Infinite => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Classification::Finite(_))
    }
}

/// An inequality `lhs > threshold` that decides finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitenessCondition {
    pub description: String,
    pub lhs: f64,
    pub threshold: f64,
    pub satisfied: bool,
    /// |lhs − threshold| ≤ 1e−12
    pub near_boundary: bool,
}

impl FinitenessCondition {
    pub fn new(description: &str, lhs: f64, threshold: f64, satisfied: bool) -> Self {
        FinitenessCondition {
            description: description.to_string(),
            lhs,
            threshold,
            satisfied,
            near_boundary: (lhs - threshold).abs() <= 1e-12,
        }
    }

    /// lhs > threshold
    pub fn greater(description: &str, lhs: f64, threshold: f64) -> Self {
        Self::new(description, lhs, threshold, lhs > threshold)
    }

    pub fn unconditional() -> Self {
        FinitenessCondition {
            description: "always finite".to_string(),
            lhs: f64::INFINITY,
            threshold: 0.0,
            satisfied: true,
            near_boundary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRate {
    pub classification: Classification,
    pub condition: FinitenessCondition,
    /// Named additive terms; they sum to the rate when finite.
    pub components: Vec<(String, f64)>,
}

impl GrowthRate {
    pub fn new(classification: Classification, condition: FinitenessCondition, components: Vec<(&str, f64)>) -> Self {
        GrowthRate {
            classification,
            condition,
            components: components.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    fn from_condition(condition: FinitenessCondition, components: Vec<(&str, f64)>) -> Self {
        let total: f64 = components.iter().map(|(_, v)| v).sum();
        let classification = if condition.satisfied {
            Classification::Finite(total)
        } else {
            Classification::Infinite
        };
        Self::new(classification, condition, components)
    }

    pub fn value(&self) -> Option<f64> {
        self.classification.value()
    }

    pub fn is_finite(&self) -> bool {
        self.classification.is_finite()
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Which closed form to evaluate where two versions exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Formula {
    /// Forms consistent with the eigenpair (default).
    #[default]
    Derived,
    /// The alternative printed displays for the GBM, Vasicek and
    /// inverse-GARCH-rate limits, kept for figure comparison.
    Published,
}

pub fn growth_rate(problem: &ValidatedProblem) -> Result<GrowthRate> {
    growth_rate_with(problem, Formula::Derived)
}

pub fn growth_rate_with(problem: &ValidatedProblem, formula: Formula) -> Result<GrowthRate> {
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let ab = alpha * beta;
    let r = problem.r();
    let rate_term = r * alpha * (1.0 - beta);
    if formula == Formula::Published {
        if let Some(g) = published_growth(problem) {
            return Ok(g);
        }
    }
    if let ModelSpec::Quadratic { .. } = problem.model {
        return riccati::quadratic_growth_rate(problem);
    }
    let lambda = eigenpair(problem)?.lambda;
    let eig = -lambda;
    Ok(match &problem.model {
        ModelSpec::Gbm { .. } => GrowthRate::from_condition(
            FinitenessCondition::unconditional(),
            vec![("rate_term", rate_term), ("eigenvalue_term", eig)],
        ),
        ModelSpec::Garch { a, sigma, .. } => GrowthRate::from_condition(
            FinitenessCondition::greater("2a/σ² + 1 > αβ", 2.0 * a / (sigma * sigma) + 1.0, ab),
            vec![("rate_term", rate_term), ("eigenvalue_term", eig)],
        ),
        ModelSpec::InverseGarch { theta, sigma, .. } => GrowthRate::from_condition(
            FinitenessCondition::greater("αβ + 2θ/σ² > 1", ab + 2.0 * theta / (sigma * sigma), 1.0),
            vec![("rate_term", rate_term), ("eigenvalue_term", eig)],
        ),
        ModelSpec::ExtendedCir { theta, mu, sigma } => {
            let kappa = extended_cir_kappa(alpha, beta, *theta, *sigma)?;
            let lhs = ab + 2.0 * theta / (sigma * sigma) + kappa;
            let condition = FinitenessCondition::greater("αβ + 2θ/σ² + κ > 0", lhs, 0.0);
            // κ and θ terms cancel
            let classification = if condition.satisfied {
                Classification::Finite(rate_term + ab * mu)
            } else {
                Classification::Infinite
            };
            GrowthRate::new(
                classification,
                condition,
                vec![
                    ("rate_term", rate_term),
                    ("eigenvalue_term", eig),
                    ("transformed_moment_term", lhs * mu),
                ],
            )
        }
        ModelSpec::ThreeHalves { a, sigma, .. } => {
            let kappa = three_halves_kappa(alpha, beta, *a, *sigma)?;
            GrowthRate::from_condition(
                FinitenessCondition::greater(
                    "2a/σ² + κ − αβ + 2 > 0",
                    2.0 * a / (sigma * sigma) + kappa - ab + 2.0,
                    0.0,
                ),
                vec![("rate_term", rate_term), ("eigenvalue_term", eig)],
            )
        }
        ModelSpec::HestonSv {
            mu, a, delta, rho, ..
        } => {
            let big_a = a - ab * delta * rho;
            let kappa = sv_kappa(alpha, beta, big_a, *delta);
            let s = kappa * delta * delta + big_a;
            if s + big_a <= 0.0 {
                return Err(Error::PropositionInapplicable(format!(
                    "transformed variance moment E[e^(κv)] diverges: √(A² + α(1−α)β²δ²) + A = {} ≤ 0 with A = a − αβδρ",
                    s + big_a
                )));
            }
            GrowthRate::from_condition(
                FinitenessCondition::unconditional(),
                vec![
                    ("rate_term", rate_term),
                    ("drift_term", ab * mu),
                    ("eigenvalue_term", eig),
                ],
            )
        }
        ModelSpec::ThreeHalvesSv {
            mu, a, delta, rho, ..
        } => {
            let big_a = a - ab * delta * rho + 0.5 * delta * delta;
            let kappa = sv_kappa(alpha, beta, big_a, *delta);
            let root = kappa * delta * delta + big_a;
            GrowthRate::from_condition(
                FinitenessCondition::greater(
                    "(√(A² + α(1−α)β²δ²) + A)/δ² + 1 > 0 with A = a − αβδρ + δ²/2",
                    (root + big_a) / (delta * delta) + 1.0,
                    0.0,
                ),
                vec![
                    ("rate_term", rate_term),
                    ("drift_term", ab * mu),
                    ("eigenvalue_term", eig),
                ],
            )
        }
        ModelSpec::GbmVasicek { mu, sigma, .. } => GrowthRate::from_condition(
            FinitenessCondition::unconditional(),
            vec![
                ("drift_term", ab * mu - 0.5 * alpha * (1.0 - alpha) * beta * beta * sigma * sigma),
                ("eigenvalue_term", eig),
            ],
        ),
        ModelSpec::GbmInverseGarchRate {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let theta_hat = theta + ab * delta * sigma * rho;
            GrowthRate::from_condition(
                FinitenessCondition::greater(
                    "α(1−β)/a + (2/δ²)(θ + αβδσρ) − 1 > 0",
                    alpha * (1.0 - beta) / a + 2.0 * theta_hat / (delta * delta) - 1.0,
                    0.0,
                ),
                vec![
                    ("drift_term", ab * mu - 0.5 * alpha * (1.0 - alpha) * beta * beta * sigma * sigma),
                    ("eigenvalue_term", eig),
                ],
            )
        }
        ModelSpec::Quadratic { .. } => unreachable!("handled above"),
    })
}

/// The printed alternative forms: the GBM limit with the rate term listed
/// twice, and the rate-model limit αβμ − ½α(1−α)β²σ² + α²δ²(1−β)²/(2a²)
/// − α(1−β)(θ + αβδσρ)/a (shared by both stochastic-rate models).
fn published_growth(problem: &ValidatedProblem) -> Option<GrowthRate> {
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let ab = alpha * beta;
    match &problem.model {
        ModelSpec::Gbm { mu, sigma } => {
            let r = problem.r();
            Some(GrowthRate::from_condition(
                FinitenessCondition::unconditional(),
                vec![
                    ("rate_term", alpha * (1.0 - beta) * r),
                    ("drift_term", ab * mu - alpha * (beta - 1.0) * r),
                    ("volatility_term", -0.5 * alpha * (1.0 - alpha) * beta * beta * sigma * sigma),
                ],
            ))
        }
        ModelSpec::GbmVasicek {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            ..
        }
        | ModelSpec::GbmInverseGarchRate {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let condition = match &problem.model {
                ModelSpec::GbmInverseGarchRate { .. } => FinitenessCondition::greater(
                    "α(1−β)/a + (2/δ²)(θ + αβδσρ) − 1 > 0",
                    alpha * (1.0 - beta) / a + 2.0 * (theta + ab * delta * sigma * rho) / (delta * delta) - 1.0,
                    0.0,
                ),
                _ => FinitenessCondition::unconditional(),
            };
            Some(GrowthRate::from_condition(
                condition,
                vec![
                    ("drift_term", ab * mu - 0.5 * alpha * (1.0 - alpha) * beta * beta * sigma * sigma),
                    ("rate_variance_term", alpha * alpha * delta * delta * (1.0 - beta).powi(2) / (2.0 * a * a)),
                    ("rate_level_term", -alpha * (1.0 - beta) * (theta + ab * delta * sigma * rho) / a),
                ],
            ))
        }
        _ => None,
    }
}

/// Λ over a β grid; per-point errors are collected, not fatal.
pub fn growth_curve(problem: &ValidatedProblem, betas: &[f64]) -> Vec<(f64, Result<GrowthRate>)> {
    growth_curve_with(problem, betas, Formula::Derived)
}

pub fn growth_curve_with(problem: &ValidatedProblem, betas: &[f64], formula: Formula) -> Vec<(f64, Result<GrowthRate>)> {
    betas
        .par_iter()
        .map(|&b| (b, problem.with_beta(b).and_then(|p| growth_rate_with(&p, formula))))
        .collect()
}

/// lim (1/t) log E[X_t^p e^{2μX_t/σ²}] for the CIR process
/// dX = (ℓ − μX)dt + σ√X dW: (p + 2ℓ/σ²)μ when p + 2ℓ/σ² > 0, else infinite.
pub fn cir_exponential_moment_growth(p: f64, ell: f64, mu: f64, sigma: f64) -> GrowthRate {
    let lhs = p + 2.0 * ell / (sigma * sigma);
    GrowthRate::from_condition(
        FinitenessCondition::greater("p + 2ℓ/σ² > 0", lhs, 0.0),
        vec![("exponential_moment_term", lhs * mu)],
    )
}

/// lim (1/t) log E[exp(−c∫r)] for dr = (θ − ar)r dt + σr dW, with κ = c/a:
/// −θκ + ½σ²κ(κ+1), established when θ > (κ+1)σ².
pub fn inverse_garch_discount_growth(c: f64, theta: f64, a: f64, sigma: f64) -> Result<GrowthRate> {
    let kappa = c / a;
    let s2 = sigma * sigma;
    let condition = FinitenessCondition::greater("θ > (κ+1)σ²", theta, (kappa + 1.0) * s2);
    if !condition.satisfied {
        return Err(Error::ConditionUnmet(format!(
            "θ > (κ+1)σ² fails: θ = {theta}, (κ+1)σ² = {}",
            (kappa + 1.0) * s2
        )));
    }
    Ok(GrowthRate::from_condition(
        condition,
        vec![
            ("eigenvalue_term", -theta * kappa),
            ("variance_term", 0.5 * s2 * kappa * (kappa + 1.0)),
        ],
    ))
}

/// Limit of E[X_t^p] for the GARCH diffusion (φ = 1, so Q = P):
/// (2θ/σ²)^p Γ(γ−p)/Γ(γ) with γ = 2a/σ² + 1, infinite when γ ≤ p.
pub fn stationary_power_moment_garch(p: f64, theta: f64, a: f64, sigma: f64) -> Classification {
    let s2 = sigma * sigma;
    let gamma = 2.0 * a / s2 + 1.0;
    if gamma <= p {
        return Classification::Infinite;
    }
    if p == 0.0 {
        return Classification::Finite(1.0);
    }
    Classification::Finite((p * (2.0 * theta / s2).ln() + ln_gamma(gamma - p) - ln_gamma(gamma)).exp())
}

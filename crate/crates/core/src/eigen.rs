//! Eigenpairs (λ, φ) with 𝓛φ = −λφ for the generator-with-killing of each
//! model's factor process, plus numerical certificates.
//!
//! The factor G is the process whose generator is used: the reference X for
//! the univariate models, the variance v (under P̂) for the stochastic
//! volatility models, the short rate r (under P̂) for the stochastic-rate
//! models and Y for the quadratic model.

use nalgebra::{DMatrix, DVector};

use crate::catalog::{ModelSpec, ValidatedProblem};
use crate::error::{Error, Result};
use crate::numerics::{lin_space, log_space, sqrt_sum_minus};
use crate::riccati;

#[derive(Debug, Clone, PartialEq)]
pub enum EigenFunction {
    /// φ = 1
    Constant,
    /// φ(x) = x^κ
    Power { kappa: f64 },
    /// φ(x) = e^{−c·x}
    ExpLinear { c: f64 },
    /// φ(x) = e^{−c·x}·x^κ
    ExpLinearPower { c: f64, kappa: f64 },
    /// φ(y) = exp(−uᵀy − yᵀVy)
    ExpQuadratic { u: DVector<f64>, v: DMatrix<f64> },
}

impl EigenFunction {
    pub fn family(&self) -> &'static str {
        match self {
            EigenFunction::Constant => "Constant",
            EigenFunction::Power { .. } => "Power",
            EigenFunction::ExpLinear { .. } => "ExpLinear",
            EigenFunction::ExpLinearPower { .. } => "ExpLinearPower",
            EigenFunction::ExpQuadratic { .. } => "ExpQuadratic",
        }
    }

    /// log φ(x).
    pub fn ln_value(&self, x: &[f64]) -> f64 {
        match self {
            EigenFunction::Constant => 0.0,
            EigenFunction::Power { kappa } => kappa * x[0].ln(),
            EigenFunction::ExpLinear { c } => -c * x[0],
            EigenFunction::ExpLinearPower { c, kappa } => -c * x[0] + kappa * x[0].ln(),
            EigenFunction::ExpQuadratic { u, v } => {
                let y = DVector::from_column_slice(x);
                -u.dot(&y) - y.dot(&(v * &y))
            }
        }
    }

    /// (φ′/φ, φ″/φ) for scalar families.
    pub fn log_derivatives(&self, x: f64) -> (f64, f64) {
        match self {
            EigenFunction::Constant => (0.0, 0.0),
            EigenFunction::Power { kappa } => (kappa / x, kappa * (kappa - 1.0) / (x * x)),
            EigenFunction::ExpLinear { c } => (-c, c * c),
            EigenFunction::ExpLinearPower { c, kappa } => {
                let d1 = -c + kappa / x;
                (d1, d1 * d1 - kappa / (x * x))
            }
            EigenFunction::ExpQuadratic { .. } => panic!("vector family has no scalar derivatives"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    pub phi: EigenFunction,
    pub kappa: Option<f64>,
}

/// Factor dynamics. Scalar families are written in (level, speed, vol) form.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorProcess {
    /// dG = μG dt + σG dW
    Gbm { mu: f64, sigma: f64 },
    /// dG = (level − speed·G) dt + vol·G dW
    Garch { level: f64, speed: f64, vol: f64 },
    /// dG = (level − speed·G)G dt + vol·G dW
    InverseGarch { level: f64, speed: f64, vol: f64 },
    /// dG = (level − speed·G) dt + vol·√G dW
    Cir { level: f64, speed: f64, vol: f64 },
    /// dG = (level − speed·G)G dt + vol·G^{3/2} dW
    ThreeHalves { level: f64, speed: f64, vol: f64 },
    /// dG = (level − speed·G) dt + vol dW
    Ou { level: f64, speed: f64, vol: f64 },
    /// dY = (drift + matrix·Y) dt + σ dW with σσᵀ = cov
    OuVector {
        drift: DVector<f64>,
        matrix: DMatrix<f64>,
        cov: DMatrix<f64>,
    },
}

impl FactorProcess {
    pub fn positive_state(&self) -> bool {
        !matches!(self, FactorProcess::Ou { .. } | FactorProcess::OuVector { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            FactorProcess::OuVector { drift, .. } => drift.len(),
            _ => 1,
        }
    }

    /// Scalar drift b(x).
    pub fn drift(&self, x: f64) -> f64 {
        match *self {
            FactorProcess::Gbm { mu, .. } => mu * x,
            FactorProcess::Garch { level, speed, .. } => level - speed * x,
            FactorProcess::InverseGarch { level, speed, .. } => (level - speed * x) * x,
            FactorProcess::Cir { level, speed, .. } => level - speed * x,
            FactorProcess::ThreeHalves { level, speed, .. } => (level - speed * x) * x,
            FactorProcess::Ou { level, speed, .. } => level - speed * x,
            FactorProcess::OuVector { .. } => panic!("vector process"),
        }
    }

    /// Scalar squared diffusion coefficient.
    pub fn diffusion_sq(&self, x: f64) -> f64 {
        match *self {
            FactorProcess::Gbm { sigma, .. } => sigma * sigma * x * x,
            FactorProcess::Garch { vol, .. } | FactorProcess::InverseGarch { vol, .. } => vol * vol * x * x,
            FactorProcess::Cir { vol, .. } => vol * vol * x,
            FactorProcess::ThreeHalves { vol, .. } => vol * vol * x * x * x,
            FactorProcess::Ou { vol, .. } => vol * vol,
            FactorProcess::OuVector { .. } => panic!("vector process"),
        }
    }
}

/// Killing rate k(G).
#[derive(Debug, Clone, PartialEq)]
pub enum Killing {
    Constant(f64),
    /// c·x
    Linear(f64),
    /// c/x
    Reciprocal(f64),
    /// yᵀMy
    QuadraticForm(DMatrix<f64>),
}

impl Killing {
    pub fn rate(&self, x: &[f64]) -> f64 {
        match self {
            Killing::Constant(c) => *c,
            Killing::Linear(c) => c * x[0],
            Killing::Reciprocal(c) => c / x[0],
            Killing::QuadraticForm(m) => {
                let y = DVector::from_column_slice(x);
                y.dot(&(m * &y))
            }
        }
    }
}

/// The factor whose generator (minus killing) carries the eigenpair.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub process: FactorProcess,
    pub killing: Killing,
    pub initial: Vec<f64>,
}

/// Factor dynamics under the measure used for the eigenproblem: P for the
/// univariate and quadratic models, P̂ (the measure removing the α-power of the
/// reference's own Brownian motion) for the stochastic-volatility and
/// stochastic-rate models.
pub fn factor_model(problem: &ValidatedProblem) -> FactorModel {
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let half_kill = 0.5 * alpha * beta * (beta - 1.0);
    match &problem.model {
        ModelSpec::Gbm { mu, sigma } => FactorModel {
            process: FactorProcess::Gbm { mu: *mu, sigma: *sigma },
            killing: Killing::Constant(half_kill * sigma * sigma),
            initial: vec![1.0],
        },
        ModelSpec::Garch { theta, a, sigma } => FactorModel {
            process: FactorProcess::Garch {
                level: *theta,
                speed: *a,
                vol: *sigma,
            },
            killing: Killing::Constant(half_kill * sigma * sigma),
            initial: vec![1.0],
        },
        ModelSpec::InverseGarch { theta, a, sigma } => FactorModel {
            process: FactorProcess::InverseGarch {
                level: *theta,
                speed: *a,
                vol: *sigma,
            },
            killing: Killing::Constant(half_kill * sigma * sigma),
            initial: vec![1.0],
        },
        ModelSpec::ExtendedCir { theta, mu, sigma } => FactorModel {
            process: FactorProcess::Cir {
                level: *theta,
                speed: -mu,
                vol: *sigma,
            },
            killing: Killing::Reciprocal(half_kill * sigma * sigma),
            initial: vec![1.0],
        },
        ModelSpec::ThreeHalves { theta, a, sigma } => FactorModel {
            process: FactorProcess::ThreeHalves {
                level: *theta,
                speed: *a,
                vol: *sigma,
            },
            killing: Killing::Linear(half_kill * sigma * sigma),
            initial: vec![1.0],
        },
        ModelSpec::HestonSv {
            theta,
            a,
            delta,
            rho,
            v0,
            ..
        } => FactorModel {
            process: FactorProcess::Cir {
                level: *theta,
                speed: a - alpha * beta * delta * rho,
                vol: *delta,
            },
            killing: Killing::Linear(0.5 * alpha * (1.0 - alpha) * beta * beta),
            initial: vec![*v0],
        },
        ModelSpec::ThreeHalvesSv {
            theta,
            a,
            delta,
            rho,
            v0,
            ..
        } => FactorModel {
            process: FactorProcess::ThreeHalves {
                level: *theta,
                speed: a - alpha * beta * delta * rho,
                vol: *delta,
            },
            killing: Killing::Linear(0.5 * alpha * (1.0 - alpha) * beta * beta),
            initial: vec![*v0],
        },
        ModelSpec::GbmVasicek {
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
            ..
        } => FactorModel {
            process: FactorProcess::Ou {
                level: theta + alpha * beta * delta * sigma * rho,
                speed: *a,
                vol: *delta,
            },
            killing: Killing::Linear(alpha * (beta - 1.0)),
            initial: vec![*r0],
        },
        ModelSpec::GbmInverseGarchRate {
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
            ..
        } => FactorModel {
            process: FactorProcess::InverseGarch {
                level: theta + alpha * beta * delta * sigma * rho,
                speed: *a,
                vol: *delta,
            },
            killing: Killing::Linear(alpha * (beta - 1.0)),
            initial: vec![*r0],
        },
        ModelSpec::Quadratic { .. } => {
            let parts = problem.model.quadratic_parts().expect("quadratic");
            let a = parts.a();
            let q = riccati::q_coefficient(alpha, beta);
            FactorModel {
                killing: Killing::QuadraticForm(&a * q),
                initial: vec![0.0; parts.dim()],
                process: FactorProcess::OuVector {
                    drift: parts.b,
                    matrix: parts.bmat,
                    cov: a,
                },
            }
        }
    }
}

fn radicand_check(radicand: f64) -> Result<()> {
    if radicand < 0.0 {
        Err(Error::ComplexKappa { radicand })
    } else {
        Ok(())
    }
}

/// κ for the extended CIR model, √((½−θ/σ²)² + αβ(β−1)) + ½ − θ/σ².
pub fn extended_cir_kappa(alpha: f64, beta: f64, theta: f64, sigma: f64) -> Result<f64> {
    let h = 0.5 - theta / (sigma * sigma);
    let x = alpha * beta * (beta - 1.0);
    radicand_check(h * h + x)?;
    Ok(sqrt_sum_minus(-h, x))
}

/// κ for the 3/2 model, √((½+a/σ²)² + αβ(β−1)) − (½+a/σ²).
pub fn three_halves_kappa(alpha: f64, beta: f64, a: f64, sigma: f64) -> Result<f64> {
    let g = 0.5 + a / (sigma * sigma);
    let x = alpha * beta * (beta - 1.0);
    radicand_check(g * g + x)?;
    Ok(sqrt_sum_minus(g, x))
}

/// κ = (√(A² + α(1−α)β²δ²) − A)/δ², shared by the two stochastic-volatility
/// models (A = a − αβδρ for Heston, plus δ²/2 for the 3/2 volatility model).
pub fn sv_kappa(alpha: f64, beta: f64, big_a: f64, delta: f64) -> f64 {
    sqrt_sum_minus(big_a, alpha * (1.0 - alpha) * beta * beta * delta * delta) / (delta * delta)
}

/// The eigenpair of the problem's factor generator.
pub fn eigenpair(problem: &ValidatedProblem) -> Result<Eigenpair> {
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let ab = alpha * beta;
    Ok(match &problem.model {
        ModelSpec::Gbm { mu, sigma } => Eigenpair {
            lambda: -ab * mu + 0.5 * alpha * (1.0 - alpha) * beta * beta * sigma * sigma,
            phi: EigenFunction::Power { kappa: ab },
            kappa: None,
        },
        ModelSpec::Garch { sigma, .. } | ModelSpec::InverseGarch { sigma, .. } => Eigenpair {
            lambda: 0.5 * ab * (beta - 1.0) * sigma * sigma,
            phi: EigenFunction::Constant,
            kappa: None,
        },
        ModelSpec::ExtendedCir { theta, mu, sigma } => {
            let kappa = extended_cir_kappa(alpha, beta, *theta, *sigma)?;
            let s2 = sigma * sigma;
            Eigenpair {
                lambda: mu * kappa + 2.0 * theta * mu / s2,
                phi: EigenFunction::ExpLinearPower {
                    c: 2.0 * mu / s2,
                    kappa,
                },
                kappa: Some(kappa),
            }
        }
        ModelSpec::ThreeHalves { theta, a, sigma } => {
            let kappa = three_halves_kappa(alpha, beta, *a, *sigma)?;
            Eigenpair {
                lambda: theta * kappa,
                phi: EigenFunction::Power { kappa: -kappa },
                kappa: Some(kappa),
            }
        }
        ModelSpec::HestonSv {
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let kappa = sv_kappa(alpha, beta, a - ab * delta * rho, *delta);
            Eigenpair {
                lambda: theta * kappa,
                phi: EigenFunction::ExpLinear { c: kappa },
                kappa: Some(kappa),
            }
        }
        ModelSpec::ThreeHalvesSv {
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let kappa = sv_kappa(alpha, beta, a - ab * delta * rho + 0.5 * delta * delta, *delta);
            Eigenpair {
                lambda: theta * kappa,
                phi: EigenFunction::Power { kappa: -kappa },
                kappa: Some(kappa),
            }
        }
        ModelSpec::GbmVasicek {
            sigma,
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let theta_hat = theta + ab * delta * sigma * rho;
            let c = alpha * (beta - 1.0) / a;
            Eigenpair {
                lambda: c * theta_hat - 0.5 * delta * delta * c * c,
                phi: EigenFunction::ExpLinear { c },
                kappa: Some(-c),
            }
        }
        ModelSpec::GbmInverseGarchRate {
            sigma,
            theta,
            a,
            delta,
            rho,
            ..
        } => {
            let theta_hat = theta + ab * delta * sigma * rho;
            let m = alpha * (1.0 - beta) / a;
            Eigenpair {
                lambda: -m * theta_hat - 0.5 * delta * delta * m * (m - 1.0),
                phi: EigenFunction::Power { kappa: m },
                kappa: Some(m),
            }
        }
        ModelSpec::Quadratic { .. } => {
            let parts = problem.model.quadratic_parts().expect("quadratic");
            let sol = riccati::solve_quadratic_model(&parts, alpha, beta)?;
            Eigenpair {
                lambda: sol.lambda,
                phi: EigenFunction::ExpQuadratic { u: sol.u, v: sol.v },
                kappa: None,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualMode {
    /// Closed-form derivatives of the eigenfunction family.
    #[default]
    Exact,
    /// Central differences of φ, as an independent cross-check.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorResidual {
    pub grid: Vec<Vec<f64>>,
    /// max |𝓛φ + λφ| / |φ|
    pub max_abs_residual: f64,
    /// max |𝓛φ + λφ| / (|λφ| + 1e−300)
    pub max_rel_residual: f64,
    pub worst_point: Vec<f64>,
}

/// 50 log-spaced points on [0.01, 100] for positive factors, 50 points on
/// [−5, 5] (a rank-1 lattice when d > 1) otherwise.
pub fn default_grid(problem: &ValidatedProblem) -> Vec<Vec<f64>> {
    let f = factor_model(problem);
    let n = 50;
    if f.process.positive_state() {
        return log_space(0.01, 100.0, n).into_iter().map(|x| vec![x]).collect();
    }
    let d = f.process.dim();
    if d == 1 {
        return lin_space(-5.0, 5.0, n).into_iter().map(|x| vec![x]).collect();
    }
    let gens: Vec<usize> = (0..d).map(|j| [1, 11, 21, 31, 41, 7, 17, 23, 29, 37, 43, 47, 13, 19, 3, 9][j]).collect();
    (0..n)
        .map(|i| {
            gens.iter()
                .map(|&g| {
                    let frac = (((i * g) % n) as f64 + 0.5) / n as f64;
                    -5.0 + 10.0 * frac
                })
                .collect()
        })
        .collect()
}

/// (𝓛φ)/φ at one point, with exact derivatives.
fn generator_ratio_exact(model: &FactorModel, phi: &EigenFunction, x: &[f64]) -> f64 {
    match (&model.process, phi) {
        (FactorProcess::OuVector { drift, matrix, cov }, EigenFunction::ExpQuadratic { u, v }) => {
            let y = DVector::from_column_slice(x);
            let g = -(u + 2.0 * v * &y);
            let b = drift + matrix * &y;
            g.dot(&b) + 0.5 * g.dot(&(cov * &g)) - (cov * v).trace() - model.killing.rate(x)
        }
        (FactorProcess::OuVector { .. }, _) => panic!("vector factor needs an ExpQuadratic eigenfunction"),
        (process, phi) => {
            let (d1, d2) = phi.log_derivatives(x[0]);
            process.drift(x[0]) * d1 + 0.5 * process.diffusion_sq(x[0]) * d2 - model.killing.rate(x)
        }
    }
}

fn generator_ratio_fd(model: &FactorModel, phi: &EigenFunction, x: &[f64]) -> f64 {
    let l0 = phi.ln_value(x);
    let ratio = |dx: &[(usize, f64)]| -> f64 {
        let mut p = x.to_vec();
        for &(i, h) in dx {
            p[i] += h;
        }
        (phi.ln_value(&p) - l0).exp()
    };
    match &model.process {
        FactorProcess::OuVector { drift, matrix, cov } => {
            let d = x.len();
            let h = 1e-3;
            let y = DVector::from_column_slice(x);
            let b = drift + matrix * &y;
            let mut total = 0.0;
            for i in 0..d {
                let grad = (ratio(&[(i, h)]) - ratio(&[(i, -h)])) / (2.0 * h);
                total += b[i] * grad;
                for j in 0..d {
                    let hess = if i == j {
                        (ratio(&[(i, h)]) - 2.0 + ratio(&[(i, -h)])) / (h * h)
                    } else {
                        (ratio(&[(i, h), (j, h)]) - ratio(&[(i, h), (j, -h)]) - ratio(&[(i, -h), (j, h)])
                            + ratio(&[(i, -h), (j, -h)]))
                            / (4.0 * h * h)
                    };
                    total += 0.5 * cov[(i, j)] * hess;
                }
            }
            total - model.killing.rate(x)
        }
        process => {
            let h = 1e-5 * x[0].abs().max(if process.positive_state() { 0.0 } else { 1.0 });
            let up = ratio(&[(0, h)]);
            let down = ratio(&[(0, -h)]);
            let d1 = (up - down) / (2.0 * h);
            let d2 = (up - 2.0 + down) / (h * h);
            process.drift(x[0]) * d1 + 0.5 * process.diffusion_sq(x[0]) * d2 - model.killing.rate(x)
        }
    }
}

pub fn generator_residual(
    problem: &ValidatedProblem,
    pair: &Eigenpair,
    grid: Option<&[Vec<f64>]>,
    mode: ResidualMode,
) -> Result<GeneratorResidual> {
    let model = factor_model(problem);
    let grid: Vec<Vec<f64>> = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(problem),
    };
    if grid.is_empty() {
        return Err(Error::GridOutsideDomain("empty grid".into()));
    }
    let d = model.process.dim();
    for p in &grid {
        if p.len() != d || p.iter().any(|v| !v.is_finite()) || (model.process.positive_state() && p[0] <= 0.0) {
            return Err(Error::GridOutsideDomain(format!("{p:?}")));
        }
    }
    let mut out = GeneratorResidual {
        grid: grid.clone(),
        max_abs_residual: 0.0,
        max_rel_residual: 0.0,
        worst_point: grid[0].clone(),
    };
    for p in &grid {
        let g = match mode {
            ResidualMode::Exact => generator_ratio_exact(&model, &pair.phi, p),
            ResidualMode::FiniteDifference => generator_ratio_fd(&model, &pair.phi, p),
        };
        let abs = (g + pair.lambda).abs();
        let rel = abs / (pair.lambda.abs() + 1e-300);
        if abs > out.max_abs_residual || abs.is_nan() {
            out.max_abs_residual = abs;
            out.worst_point = p.clone();
        }
        out.max_rel_residual = out.max_rel_residual.max(rel);
    }
    Ok(out)
}

/// Factor dynamics under the transformed measure Q: drift b + v·vφ′/φ with the
/// diffusion unchanged.
pub fn q_dynamics(problem: &ValidatedProblem, pair: &Eigenpair) -> FactorProcess {
    let process = factor_model(problem).process;
    match (process, &pair.phi) {
        (p, EigenFunction::Constant) => p,
        (FactorProcess::Gbm { mu, sigma }, EigenFunction::Power { kappa }) => FactorProcess::Gbm {
            mu: mu + sigma * sigma * kappa,
            sigma,
        },
        (FactorProcess::Cir { level, speed, vol }, EigenFunction::ExpLinearPower { c, kappa }) => FactorProcess::Cir {
            level: level + vol * vol * kappa,
            speed: speed + vol * vol * c,
            vol,
        },
        (FactorProcess::Cir { level, speed, vol }, EigenFunction::ExpLinear { c }) => FactorProcess::Cir {
            level,
            speed: speed + vol * vol * c,
            vol,
        },
        (FactorProcess::ThreeHalves { level, speed, vol }, EigenFunction::Power { kappa }) => {
            FactorProcess::ThreeHalves {
                level,
                speed: speed - vol * vol * kappa,
                vol,
            }
        }
        (FactorProcess::InverseGarch { level, speed, vol }, EigenFunction::Power { kappa }) => {
            FactorProcess::InverseGarch {
                level: level + vol * vol * kappa,
                speed,
                vol,
            }
        }
        (FactorProcess::Ou { level, speed, vol }, EigenFunction::ExpLinear { c }) => FactorProcess::Ou {
            level: level - vol * vol * c,
            speed,
            vol,
        },
        (FactorProcess::OuVector { drift, matrix, cov }, EigenFunction::ExpQuadratic { u, v }) => {
            FactorProcess::OuVector {
                drift: &drift - &cov * u,
                matrix: &matrix - 2.0 * &cov * v,
                cov,
            }
        }
        (p, phi) => panic!("no transformed dynamics for {p:?} with {}", phi.family()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{validate, Problem, Strictness};

    fn vp(model: ModelSpec, alpha: f64, beta: f64, r: Option<f64>) -> ValidatedProblem {
        validate(&Problem::new(model, alpha, beta, r), Strictness::Relaxed).unwrap()
    }

    #[test]
    fn gbm_pair() {
        let p = vp(ModelSpec::Gbm { mu: 0.05, sigma: 0.2 }, 0.5, 2.0, Some(0.01));
        let e = eigenpair(&p).unwrap();
        assert!((e.lambda + 0.03).abs() < 1e-15);
        assert_eq!(e.phi, EigenFunction::Power { kappa: 1.0 });
        let grid = vec![vec![0.5], vec![1.0], vec![2.0]];
        let r = generator_residual(&p, &e, Some(&grid), ResidualMode::Exact).unwrap();
        assert!(r.max_abs_residual < 1e-12);
    }

    #[test]
    fn gbm_unleveraged_full_utility() {
        let p = vp(ModelSpec::Gbm { mu: 0.07, sigma: 0.3 }, 1.0, 1.0, Some(0.01));
        let e = eigenpair(&p).unwrap();
        assert!((e.lambda + 0.07).abs() < 1e-15);
        assert_eq!(e.phi, EigenFunction::Power { kappa: 1.0 });
    }

    #[test]
    fn garch_pair_is_constant() {
        let p = vp(
            ModelSpec::Garch {
                theta: 0.1,
                a: 1.0,
                sigma: 0.3,
            },
            0.7,
            3.0,
            Some(0.01),
        );
        let e = eigenpair(&p).unwrap();
        assert_eq!(e.phi, EigenFunction::Constant);
        assert!((e.lambda - 0.5 * 0.7 * 3.0 * 2.0 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn extended_cir_residual_on_wide_grid() {
        let p = vp(
            ModelSpec::ExtendedCir {
                theta: 0.05,
                mu: 0.2,
                sigma: 0.2,
            },
            0.5,
            2.0,
            Some(0.01),
        );
        let e = eigenpair(&p).unwrap();
        let grid: Vec<Vec<f64>> = (1..=100).map(|i| vec![0.1 * i as f64]).collect();
        let r = generator_residual(&p, &e, Some(&grid), ResidualMode::Exact).unwrap();
        assert!(r.max_rel_residual < 1e-10, "{}", r.max_rel_residual);
    }

    #[test]
    fn perturbed_lambda_is_detected() {
        let p = vp(
            ModelSpec::ExtendedCir {
                theta: 0.05,
                mu: 0.2,
                sigma: 0.2,
            },
            0.5,
            2.0,
            Some(0.01),
        );
        let mut e = eigenpair(&p).unwrap();
        e.lambda += 0.01;
        let r = generator_residual(&p, &e, None, ResidualMode::Exact).unwrap();
        assert!(r.max_abs_residual >= 0.009);
    }

    #[test]
    fn complex_kappa_inside_unit_interval() {
        // (½ − θ/σ²)² = 0 when θ = σ²/2, and αβ(β−1) < 0 for β ∈ (0, 1)
        let p = vp(
            ModelSpec::ExtendedCir {
                theta: 0.02,
                mu: 0.2,
                sigma: 0.2,
            },
            1.0,
            0.5,
            Some(0.01),
        );
        assert!(matches!(eigenpair(&p), Err(Error::ComplexKappa { .. })));
    }

    #[test]
    fn kappa_vanishes_without_leverage_correction() {
        for beta in [0.0, 1.0] {
            assert_eq!(extended_cir_kappa(0.5, beta, 0.05, 0.2).unwrap(), 0.0);
            assert_eq!(three_halves_kappa(0.5, beta, 1.0, 0.2).unwrap(), 0.0);
        }
    }

    #[test]
    fn finite_difference_mode_agrees() {
        let models = [
            ModelSpec::ThreeHalves {
                theta: 1.0,
                a: 1.0,
                sigma: 0.2,
            },
            ModelSpec::ExtendedCir {
                theta: 0.05,
                mu: 0.2,
                sigma: 0.2,
            },
        ];
        for m in models {
            let p = vp(m, 0.5, 2.0, Some(0.01));
            let e = eigenpair(&p).unwrap();
            let grid: Vec<Vec<f64>> = log_space(0.1, 10.0, 20).into_iter().map(|x| vec![x]).collect();
            let r = generator_residual(&p, &e, Some(&grid), ResidualMode::FiniteDifference).unwrap();
            assert!(r.max_rel_residual < 1e-4, "{:?} {} {:?}", p.model, r.max_rel_residual, r.worst_point);
        }
    }

    #[test]
    fn grid_outside_domain() {
        let p = vp(ModelSpec::Gbm { mu: 0.05, sigma: 0.2 }, 0.5, 2.0, Some(0.01));
        let e = eigenpair(&p).unwrap();
        let grid = vec![vec![-1.0]];
        assert!(matches!(
            generator_residual(&p, &e, Some(&grid), ResidualMode::Exact),
            Err(Error::GridOutsideDomain(_))
        ));
    }

    #[test]
    fn extended_cir_q_drift() {
        let p = vp(
            ModelSpec::ExtendedCir {
                theta: 0.05,
                mu: 0.2,
                sigma: 0.2,
            },
            0.5,
            2.0,
            Some(0.01),
        );
        let e = eigenpair(&p).unwrap();
        let k = e.kappa.unwrap();
        match q_dynamics(&p, &e) {
            FactorProcess::Cir { level, speed, vol } => {
                assert!((level - (0.05 + k * 0.04)).abs() < 1e-15);
                assert!((speed - 0.2).abs() < 1e-15);
                assert_eq!(vol, 0.2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn heston_q_speed() {
        let (alpha, beta, a, delta, rho) = (0.5, 2.0, 3.1, 0.89, -0.5);
        let p = vp(
            ModelSpec::HestonSv {
                mu: 0.05,
                theta: 0.16,
                a,
                delta,
                rho,
                v0: 0.05,
            },
            alpha,
            beta,
            Some(0.01),
        );
        let e = eigenpair(&p).unwrap();
        let big_a: f64 = a - alpha * beta * delta * rho;
        let s = (big_a * big_a + alpha * (1.0 - alpha) * beta * beta * delta * delta).sqrt();
        match q_dynamics(&p, &e) {
            FactorProcess::Cir { speed, .. } => assert!((speed - s).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garch_q_equals_p() {
        let p = vp(
            ModelSpec::Garch {
                theta: 0.1,
                a: 1.0,
                sigma: 0.3,
            },
            0.5,
            2.0,
            Some(0.01),
        );
        let e = eigenpair(&p).unwrap();
        assert_eq!(q_dynamics(&p, &e), factor_model(&p).process);
    }
}

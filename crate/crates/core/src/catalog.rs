//! Model parameterizations, investor preferences and validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power-utility exponent, u(w) = w^α with α in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub alpha: f64,
}

impl Preference {
    /// Relative risk aversion 1 − α.
    pub fn risk_aversion(&self) -> f64 {
        1.0 - self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leverage {
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantRate {
    pub r: f64,
}

/// The ten reference / volatility / rate models.
///
/// X₀ = 1 for every model and Y₀ = 0 for the quadratic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ModelSpec {
    /// dX = μX dt + σX dB
    Gbm { mu: f64, sigma: f64 },
    /// dX = (θ − aX) dt + σX dB
    Garch { theta: f64, a: f64, sigma: f64 },
    /// dX = (θ − aX)X dt + σX dB
    InverseGarch { theta: f64, a: f64, sigma: f64 },
    /// dX = (θ + μX) dt + σ√X dB
    ExtendedCir { theta: f64, mu: f64, sigma: f64 },
    /// dX = (θ − aX)X dt + σX^{3/2} dB
    ThreeHalves { theta: f64, a: f64, sigma: f64 },
    /// dX/X = μ dt + √v dB, dv = (θ − av) dt + δ√v dZ, d⟨B,Z⟩ = ρ dt
    #[serde(rename = "HestonSV")]
    HestonSv {
        mu: f64,
        theta: f64,
        a: f64,
        delta: f64,
        rho: f64,
        v0: f64,
    },
    /// dX/X = μ dt + √v dB, dv = (θ − av)v dt + δv^{3/2} dZ
    #[serde(rename = "ThreeHalvesSV")]
    ThreeHalvesSv {
        mu: f64,
        theta: f64,
        a: f64,
        delta: f64,
        rho: f64,
        v0: f64,
    },
    /// dX/X = μ dt + σ dB, dr = (θ − ar) dt + δ dZ
    GbmVasicek {
        mu: f64,
        sigma: f64,
        theta: f64,
        a: f64,
        delta: f64,
        rho: f64,
        r0: f64,
    },
    /// dX/X = μ dt + σ dB, dr = (θ − ar)r dt + δr dZ
    GbmInverseGarchRate {
        mu: f64,
        sigma: f64,
        theta: f64,
        a: f64,
        delta: f64,
        rho: f64,
        r0: f64,
    },
    /// X = exp(|Y|²), dY = (b + BY) dt + σ dW
    Quadratic {
        d: usize,
        b: Vec<f64>,
        #[serde(rename = "Bmat")]
        bmat: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Gbm { .. } => "Gbm",
            ModelSpec::Garch { .. } => "Garch",
            ModelSpec::InverseGarch { .. } => "InverseGarch",
            ModelSpec::ExtendedCir { .. } => "ExtendedCir",
            ModelSpec::ThreeHalves { .. } => "ThreeHalves",
            ModelSpec::HestonSv { .. } => "HestonSV",
            ModelSpec::ThreeHalvesSv { .. } => "ThreeHalvesSV",
            ModelSpec::GbmVasicek { .. } => "GbmVasicek",
            ModelSpec::GbmInverseGarchRate { .. } => "GbmInverseGarchRate",
            ModelSpec::Quadratic { .. } => "Quadratic",
        }
    }

    pub fn has_stochastic_rate(&self) -> bool {
        matches!(
            self,
            ModelSpec::GbmVasicek { .. } | ModelSpec::GbmInverseGarchRate { .. }
        )
    }

    /// Quadratic-model data as matrices: (b, B, σ, a = σσᵀ).
    pub fn quadratic_parts(&self) -> Option<QuadraticParts> {
        match self {
            ModelSpec::Quadratic { d, b, bmat, sigma } => Some(QuadraticParts {
                b: DVector::from_column_slice(b),
                bmat: rows_to_matrix(*d, bmat),
                sigma: rows_to_matrix(*d, sigma),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticParts {
    pub b: DVector<f64>,
    pub bmat: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl QuadraticParts {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> DMatrix<f64> {
        let a = &self.sigma * self.sigma.transpose();
        (&a + a.transpose()) * 0.5
    }
}

fn rows_to_matrix(d: usize, rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

/// Build the `Quadratic` variant from matrices.
pub fn quadratic_spec(b: &DVector<f64>, bmat: &DMatrix<f64>, sigma: &DMatrix<f64>) -> ModelSpec {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    ModelSpec::Quadratic {
        d: b.len(),
        b: b.iter().copied().collect(),
        bmat: rows(bmat),
        sigma: rows(sigma),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub model: ModelSpec,
    pub pref: Preference,
    pub leverage: Leverage,
    pub rate: Option<ConstantRate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    model: ModelSpec,
    alpha: f64,
    beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
}

impl Problem {
    pub fn new(model: ModelSpec, alpha: f64, beta: f64, r: Option<f64>) -> Self {
        Problem {
            model,
            pref: Preference { alpha },
            leverage: Leverage { beta },
            rate: r.map(|r| ConstantRate { r }),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.pref.alpha
    }

    pub fn beta(&self) -> f64 {
        self.leverage.beta
    }

    /// Constant short rate; zero for stochastic-rate models.
    pub fn r(&self) -> f64 {
        self.rate.map_or(0.0, |c| c.r)
    }

    pub fn with_beta(&self, beta: f64) -> Problem {
        let mut p = self.clone();
        p.leverage.beta = beta;
        p
    }

    pub fn from_json(text: &str) -> Result<Problem> {
        let doc: ConfigDoc =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Problem::new(doc.model, doc.alpha, doc.beta, doc.r))
    }

    pub fn to_json(&self) -> String {
        let doc = ConfigDoc {
            model: self.model.clone(),
            alpha: self.alpha(),
            beta: self.beta(),
            r: self.rate.map(|c| c.r),
        };
        serde_json::to_string(&doc).expect("problem serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Parameter-bound violations become warnings.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationWarning {
    pub field: String,
    pub constraint: String,
}

/// A problem certified against every invariant of its model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem {
    problem: Problem,
    warnings: Vec<ValidationWarning>,
    strictness: Strictness,
}

impl std::ops::Deref for ValidatedProblem {
    type Target = Problem;
    fn deref(&self) -> &Problem {
        &self.problem
    }
}

impl ValidatedProblem {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn warnings(&self) -> &[ValidationWarning] {
        &self.warnings
    }

    pub fn strictness(&self) -> Strictness {
        self.strictness
    }

    /// Same problem at a different leverage. Leverage is any finite real, so
    /// the other certifications carry over.
    pub fn with_beta(&self, beta: f64) -> Result<ValidatedProblem> {
        if !beta.is_finite() {
            return Err(Error::violation("beta", "β must be finite"));
        }
        let mut v = self.clone();
        v.problem.leverage.beta = beta;
        Ok(v)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<ValidatedProblem> {
        let mut p = self.problem.clone();
        p.pref.alpha = alpha;
        validate(&p, self.strictness)
    }
}

struct Checker {
    strictness: Strictness,
    warnings: Vec<ValidationWarning>,
}

impl Checker {
    /// A hard requirement; never relaxed.
    fn hard(&self, ok: bool, field: &str, constraint: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::violation(field, constraint))
        }
    }

    /// A stated parameter bound; relaxed mode downgrades it to a warning.
    fn bound(&mut self, ok: bool, field: &str, constraint: String) -> Result<()> {
        if ok {
            return Ok(());
        }
        match self.strictness {
            Strictness::Strict => Err(Error::violation(field, constraint)),
            Strictness::Relaxed => {
                self.warnings.push(ValidationWarning {
                    field: field.to_string(),
                    constraint,
                });
                Ok(())
            }
        }
    }

    fn finite(&self, pairs: &[(&str, f64)]) -> Result<()> {
        for (name, v) in pairs {
            self.hard(v.is_finite(), name, &format!("{name} must be finite"))?;
        }
        Ok(())
    }

    fn positive(&mut self, name: &str, symbol: &str, v: f64) -> Result<()> {
        self.bound(v > 0.0, name, format!("requires {symbol} > 0 (got {v})"))
    }
}

pub fn validate(problem: &Problem, strictness: Strictness) -> Result<ValidatedProblem> {
    let mut c = Checker {
        strictness,
        warnings: Vec::new(),
    };
    let alpha = problem.alpha();
    let beta = problem.beta();
    c.finite(&[("alpha", alpha), ("beta", beta)])?;
    c.hard(
        alpha > 0.0 && alpha <= 1.0,
        "alpha",
        &format!("power-utility exponent requires 0 < α ≤ 1 (got {alpha})"),
    )?;

    match (problem.model.has_stochastic_rate(), problem.rate) {
        (true, Some(_)) => return Err(Error::ExtraneousRate),
        (false, None) => return Err(Error::MissingRate),
        (false, Some(ConstantRate { r })) => {
            c.finite(&[("r", r)])?;
            c.hard(r >= 0.0, "r", &format!("short rate requires r > 0 (got {r})"))?;
            c.bound(r > 0.0, "r", format!("short rate requires r > 0 (got {r})"))?;
        }
        (true, None) => {}
    }

    match &problem.model {
        ModelSpec::Gbm { mu, sigma } => {
            c.finite(&[("mu", *mu), ("sigma", *sigma)])?;
            c.hard(*sigma > 0.0, "sigma", "volatility requires σ > 0")?;
        }
        ModelSpec::Garch { theta, a, sigma } => {
            c.finite(&[("theta", *theta), ("a", *a), ("sigma", *sigma)])?;
            c.hard(*sigma > 0.0, "sigma", "GARCH requires σ > 0")?;
            c.positive("theta", "θ", *theta)?;
            c.positive("a", "a", *a)?;
        }
        ModelSpec::InverseGarch { theta, a, sigma } => {
            c.finite(&[("theta", *theta), ("a", *a), ("sigma", *sigma)])?;
            c.hard(*sigma > 0.0, "sigma", "inverse GARCH requires σ > 0")?;
            c.positive("a", "a", *a)?;
            c.bound(
                *theta > sigma * sigma,
                "theta, sigma",
                format!(
                    "inverse GARCH requires θ > σ² (θ = {theta}, σ² = {})",
                    sigma * sigma
                ),
            )?;
        }
        ModelSpec::ExtendedCir { theta, mu, sigma } => {
            c.finite(&[("theta", *theta), ("mu", *mu), ("sigma", *sigma)])?;
            c.hard(*sigma > 0.0, "sigma", "extended CIR requires σ > 0")?;
            c.positive("mu", "μ", *mu)?;
            c.bound(
                *theta >= sigma * sigma,
                "theta, sigma",
                format!(
                    "extended CIR requires θ ≥ σ² (θ = {theta}, σ² = {})",
                    sigma * sigma
                ),
            )?;
        }
        ModelSpec::ThreeHalves { theta, a, sigma } => {
            c.finite(&[("theta", *theta), ("a", *a), ("sigma", *sigma)])?;
            c.hard(*sigma > 0.0, "sigma", "3/2 model requires σ > 0")?;
            c.positive("theta", "θ", *theta)?;
            c.positive("a", "a", *a)?;
        }
        ModelSpec::HestonSv {
            mu,
            theta,
            a,
            delta,
            rho,
            v0,
        } => {
            c.finite(&[
                ("mu", *mu),
                ("theta", *theta),
                ("a", *a),
                ("delta", *delta),
                ("rho", *rho),
                ("v0", *v0),
            ])?;
            c.hard(*delta > 0.0, "delta", "Heston requires δ > 0")?;
            c.hard((-1.0..=1.0).contains(rho), "rho", "correlation requires ρ ∈ [−1, 1]")?;
            c.hard(*v0 >= 0.0, "v0", "initial variance requires v0 ≥ 0")?;
            c.positive("mu", "μ", *mu)?;
            c.positive("theta", "θ", *theta)?;
            c.positive("a", "a", *a)?;
            c.positive("v0", "v0", *v0)?;
            c.bound(
                2.0 * theta > delta * delta,
                "theta, delta",
                format!(
                    "Heston requires 2θ > δ² (2θ = {}, δ² = {})",
                    2.0 * theta,
                    delta * delta
                ),
            )?;
        }
        ModelSpec::ThreeHalvesSv {
            mu,
            theta,
            a,
            delta,
            rho,
            v0,
        } => {
            c.finite(&[
                ("mu", *mu),
                ("theta", *theta),
                ("a", *a),
                ("delta", *delta),
                ("rho", *rho),
                ("v0", *v0),
            ])?;
            c.hard(*delta > 0.0, "delta", "3/2 volatility requires δ > 0")?;
            c.hard((-1.0..=1.0).contains(rho), "rho", "correlation requires ρ ∈ [−1, 1]")?;
            c.hard(*v0 > 0.0, "v0", "3/2 volatility requires v0 > 0")?;
            c.positive("theta", "θ", *theta)?;
            c.positive("a", "a", *a)?;
        }
        ModelSpec::GbmVasicek {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
        } => {
            c.finite(&[
                ("mu", *mu),
                ("sigma", *sigma),
                ("theta", *theta),
                ("a", *a),
                ("delta", *delta),
                ("rho", *rho),
                ("r0", *r0),
            ])?;
            c.hard(*sigma > 0.0, "sigma", "volatility requires σ > 0")?;
            c.hard(*a > 0.0, "a", "Vasicek rate requires a > 0")?;
            c.hard(*delta >= 0.0, "delta", "rate volatility requires δ ≥ 0")?;
            c.hard((-1.0..=1.0).contains(rho), "rho", "correlation requires ρ ∈ [−1, 1]")?;
        }
        ModelSpec::GbmInverseGarchRate {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
        } => {
            c.finite(&[
                ("mu", *mu),
                ("sigma", *sigma),
                ("theta", *theta),
                ("a", *a),
                ("delta", *delta),
                ("rho", *rho),
                ("r0", *r0),
            ])?;
            c.hard(*sigma > 0.0, "sigma", "volatility requires σ > 0")?;
            c.hard(*a > 0.0, "a", "inverse-GARCH rate requires a > 0")?;
            c.hard(*delta > 0.0, "delta", "inverse-GARCH rate requires δ > 0")?;
            c.hard((-1.0..=1.0).contains(rho), "rho", "correlation requires ρ ∈ [−1, 1]")?;
            c.hard(*r0 > 0.0, "r0", "inverse-GARCH rate requires r0 > 0")?;
            c.positive("mu", "μ", *mu)?;
            c.bound(
                *theta > delta * delta,
                "theta, delta",
                format!(
                    "inverse-GARCH rate requires θ > δ² (θ = {theta}, δ² = {})",
                    delta * delta
                ),
            )?;
        }
        ModelSpec::Quadratic { d, b, bmat, sigma } => {
            let d = *d;
            c.hard((1..=16).contains(&d), "d", "dimension must satisfy 1 ≤ d ≤ 16")?;
            c.hard(b.len() == d, "b", "b must have length d")?;
            let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|row| row.len() == d);
            c.hard(square(bmat), "Bmat", "Bmat must be d×d")?;
            c.hard(square(sigma), "sigma", "sigma must be d×d")?;
            let all_finite = b
                .iter()
                .chain(bmat.iter().flatten())
                .chain(sigma.iter().flatten())
                .all(|v| v.is_finite());
            c.hard(all_finite, "b, Bmat, sigma", "entries must be finite")?;
            let parts = problem.model.quadratic_parts().expect("quadratic");
            let pd = parts
                .a()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .all(|&l| l > 0.0);
            c.hard(pd, "sigma", "σσᵀ must be strictly positive definite")?;
        }
    }

    Ok(ValidatedProblem {
        problem: problem.clone(),
        warnings: c.warnings,
        strictness,
    })
}

/// Where the short rate in log L_t comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateTerm {
    Constant(f64),
    /// The path accumulator ∫r_s ds.
    Integrated,
}

/// Path functionals accumulated along one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathFunctionals {
    pub t: f64,
    /// log X_t − log X_0 (|Y_t|² − |Y_0|² for the quadratic model).
    pub log_x: f64,
    /// ∫₀ᵗ r_s ds
    pub int_rate: f64,
    /// ∫₀ᵗ |σ_s|² ds, the quadratic variation rate of log X.
    pub int_var: f64,
}

/// log L_t = β·log X_t − (β−1)·∫r − ½β(β−1)·∫|σ|².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPriceRecipe {
    pub beta: f64,
    pub rate: RateTerm,
    /// Coefficient on ∫r ds, −(β−1).
    pub rate_coefficient: f64,
    /// Coefficient on ∫|σ|² ds, −½β(β−1).
    pub variance_coefficient: f64,
}

impl LogPriceRecipe {
    pub fn evaluate(&self, f: &PathFunctionals) -> f64 {
        let int_rate = match self.rate {
            RateTerm::Constant(r) => r * f.t,
            RateTerm::Integrated => f.int_rate,
        };
        self.beta * f.log_x + self.rate_coefficient * int_rate + self.variance_coefficient * f.int_var
    }

    /// Coefficient on ∫|σᵀY|² du in the quadratic model, where |σ_s|² = 4|σᵀY_s|².
    pub fn quadratic_form_coefficient(&self) -> f64 {
        4.0 * self.variance_coefficient
    }
}

pub fn letf_log_price(model: &ModelSpec, beta: f64, rate: Option<ConstantRate>) -> LogPriceRecipe {
    let rate = if model.has_stochastic_rate() {
        RateTerm::Integrated
    } else {
        RateTerm::Constant(rate.map_or(0.0, |c| c.r))
    };
    LogPriceRecipe {
        beta,
        rate,
        rate_coefficient: -(beta - 1.0),
        variance_coefficient: -0.5 * beta * (beta - 1.0),
    }
}

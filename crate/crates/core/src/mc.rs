//! Monte Carlo oracle: path simulation of every model, growth-slope
//! estimation, martingale certificates and transition densities.
//!
//! Paths are simulated in antithetic pairs. Pair k draws its normals from
//! ChaCha8 stream k of the configured seed, and per-pair results are reduced
//! in pair order, so estimates do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::catalog::{letf_log_price, ConstantRate, LogPriceRecipe, ModelSpec, PathFunctionals, ValidatedProblem};
use crate::eigen::{factor_model, EigenFunction, Eigenpair, FactorModel, FactorProcess, Killing};
use crate::error::{Error, Result};
use crate::numerics::ln_bessel_i;

const MAX_DIM: usize = 16;
const PAIRS_PER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Exact or structure-preserving scheme per model.
    #[default]
    Default,
    /// Plain Euler on the original coordinates, truncated at zero for
    /// positive factors. For bias comparisons.
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub checkpoints: Vec<f64>,
    pub antithetic: bool,
}

impl SimConfig {
    /// Twenty evenly spaced checkpoints ending at the horizon.
    pub fn new(horizon: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            n_steps,
            n_paths,
            seed,
            scheme: Scheme::Default,
            checkpoints: (1..=20).map(|i| horizon * i as f64 / 20.0).collect(),
            antithetic: true,
        }
    }

    /// T = 20 years, 400 steps per year, 2e5 paths.
    pub fn desk() -> Self {
        Self::new(20.0, 8000, 200_000, 42)
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<f64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSimConfig(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if (self.n_steps as f64) < self.horizon * 50.0 - 1e-9 {
            return bad(format!("n_steps must be at least 50 per year, got {} for T = {}", self.n_steps, self.horizon));
        }
        if self.n_paths < 1000 {
            return bad(format!("n_paths must be at least 1000, got {}", self.n_paths));
        }
        if self.checkpoints.is_empty() {
            return bad("checkpoints must be nonempty".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if self.checkpoints.iter().any(|&t| !(t > 0.0 && t <= self.horizon * (1.0 + 1e-12))) {
            return bad("checkpoints must lie in (0, horizon]".into());
        }
        Ok(())
    }

    /// Step index of each checkpoint (nearest grid time, at least 1).
    fn checkpoint_steps(&self) -> Vec<usize> {
        let h = self.dt();
        self.checkpoints
            .iter()
            .map(|t| ((t / h).round() as usize).clamp(1, self.n_steps))
            .collect()
    }

    fn n_pairs(&self) -> usize {
        if self.antithetic {
            self.n_paths.div_ceil(2)
        } else {
            self.n_paths
        }
    }

    fn paths_per_pair(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar factor steppers

#[derive(Debug, Clone)]
enum Stepper {
    /// state log G
    Gbm { drift: f64, vol: f64 },
    /// G′ = G·E + level·h·(1+E)/2, E = exp(−(speed + vol²/2)h + vol·ΔW)
    Garch { decay: f64, vol: f64, level_h: f64 },
    /// state √G, drift-implicit
    CirImplicit { vol: f64, a: f64, k: f64 },
    /// state G̃ with G = max(G̃, 0)
    CirTruncated { level: f64, speed: f64, vol: f64 },
    /// exact (r′, ∫r, ΔZ) transition; `chol` is a square root of the
    /// covariance
    Ou {
        decay: f64,
        mean: f64,
        integral_slope: f64,
        chol: [[f64; 3]; 3],
    },
    /// state 1/G of the inner stepper, driven by −ΔW
    Reciprocal(Box<Stepper>),
    Euler { process: FactorProcess },
}

#[derive(Debug, Clone)]
struct Factor {
    stepper: Stepper,
    h: f64,
    sqrt_h: f64,
}

struct StepOut {
    state: f64,
    /// Brownian increment of the original factor's equation
    dz: f64,
    /// ∫G over the step when the scheme provides it exactly
    exact_integral: Option<f64>,
    truncated: bool,
}

fn cir_stepper(level: f64, speed: f64, vol: f64, h: f64, truncate: bool) -> Stepper {
    let a = 1.0 + 0.5 * speed * h;
    if !truncate && level >= 0.25 * vol * vol && a > 0.0 {
        Stepper::CirImplicit {
            vol,
            a,
            k: 0.5 * (level - 0.25 * vol * vol) * h,
        }
    } else {
        Stepper::CirTruncated { level, speed, vol }
    }
}

fn garch_stepper(level: f64, speed: f64, vol: f64, h: f64) -> Stepper {
    Stepper::Garch {
        decay: -(speed + 0.5 * vol * vol) * h,
        vol,
        level_h: level * h,
    }
}

/// Σ_{n≥n0} (−1)ⁿ cₙ xⁿ/n! summed directly, for the small-x forms below.
fn alternating_series(x: f64, n0: u32, coef: impl Fn(u32) -> f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for n in 1..60u32 {
        term *= -x / n as f64;
        if n >= n0 {
            let t = coef(n) * term;
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
    }
    sum
}

fn ou_stepper(level: f64, speed: f64, vol: f64, h: f64) -> Result<Stepper> {
    let a = speed;
    let x = a * h;
    let e1 = (-x).exp();
    let one_e1 = -(-x).exp_m1();
    let one_e2 = -(-2.0 * x).exp_m1();
    // x − (1 − e^{−x}), x − 2(1 − e^{−x}) + (1 − e^{−2x})/2, (1 − e^{−x}) − (1 − e^{−2x})/2
    let (f1, f2, f3) = if x.abs() < 0.5 {
        (
            alternating_series(x, 2, |_| 1.0),
            alternating_series(x, 3, |n| 2.0 - 2f64.powi(n as i32 - 1)),
            alternating_series(x, 2, |n| 2f64.powi(n as i32 - 1) - 1.0),
        )
    } else {
        (x - one_e1, x - 2.0 * one_e1 + 0.5 * one_e2, one_e1 - 0.5 * one_e2)
    };
    let d2 = vol * vol;
    let var_r = d2 * one_e2 / (2.0 * a);
    let var_i = d2 * f2 / (a * a * a);
    let cov_ri = d2 * f3 / (a * a);
    let cov_rz = vol * one_e1 / a;
    let cov_iz = vol * f1 / (a * a);
    let cov = DMatrix::from_row_slice(3, 3, &[var_r, cov_ri, cov_rz, cov_ri, var_i, cov_iz, cov_rz, cov_iz, h]);
    // nearly singular for small steps, so factor through the eigenbasis
    let eig = cov.symmetric_eigen();
    let mut chol = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            chol[i][j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
        }
    }
    Ok(Stepper::Ou {
        decay: e1,
        mean: level / a,
        integral_slope: one_e1 / a,
        chol,
    })
}

impl Factor {
    /// `truncate` selects full-truncation Euler for square-root factors.
    fn new(process: &FactorProcess, h: f64, scheme: Scheme, truncate: bool) -> Result<Factor> {
        let stepper = match (scheme, process) {
            (_, FactorProcess::OuVector { .. }) => {
                return Err(Error::InvalidSimConfig("vector factor needs the vector stepper".into()))
            }
            (Scheme::Euler, p) => Stepper::Euler { process: p.clone() },
            (Scheme::Default, &FactorProcess::Gbm { mu, sigma }) => Stepper::Gbm {
                drift: (mu - 0.5 * sigma * sigma) * h,
                vol: sigma,
            },
            (Scheme::Default, &FactorProcess::Garch { level, speed, vol }) => garch_stepper(level, speed, vol, h),
            (Scheme::Default, &FactorProcess::InverseGarch { level, speed, vol }) => {
                Stepper::Reciprocal(Box::new(garch_stepper(speed, level - vol * vol, vol, h)))
            }
            (Scheme::Default, &FactorProcess::Cir { level, speed, vol }) => cir_stepper(level, speed, vol, h, truncate),
            (Scheme::Default, &FactorProcess::ThreeHalves { level, speed, vol }) => {
                Stepper::Reciprocal(Box::new(cir_stepper(speed + vol * vol, level, vol, h, truncate)))
            }
            (Scheme::Default, &FactorProcess::Ou { level, speed, vol }) => ou_stepper(level, speed, vol, h)?,
        };
        Ok(Factor {
            stepper,
            h,
            sqrt_h: h.sqrt(),
        })
    }

    fn normals(&self) -> usize {
        match self.stepper {
            Stepper::Ou { .. } => 3,
            _ => 1,
        }
    }

    fn init(&self, x0: f64) -> f64 {
        fn go(s: &Stepper, x: f64) -> f64 {
            match s {
                Stepper::Gbm { .. } => x.ln(),
                Stepper::CirImplicit { .. } => x.sqrt(),
                Stepper::Reciprocal(inner) => go(inner, 1.0 / x),
                _ => x,
            }
        }
        go(&self.stepper, x0)
    }

    fn value(&self, s: f64) -> f64 {
        fn go(st: &Stepper, s: f64) -> f64 {
            match st {
                Stepper::Gbm { .. } => s.exp(),
                Stepper::CirImplicit { .. } => s * s,
                Stepper::CirTruncated { .. } => s.max(0.0),
                Stepper::Reciprocal(inner) => 1.0 / go(inner, s),
                Stepper::Euler { process } if process.positive_state() => s.max(0.0),
                _ => s,
            }
        }
        go(&self.stepper, s)
    }

    fn left_point(&self) -> bool {
        matches!(self.stepper, Stepper::CirTruncated { .. } | Stepper::Euler { .. })
            || matches!(&self.stepper, Stepper::Reciprocal(inner) if matches!(**inner, Stepper::CirTruncated { .. }))
    }

    fn step(&self, s: f64, z: &[f64]) -> StepOut {
        self.step_inner(&self.stepper, s, z)
    }

    fn step_inner(&self, st: &Stepper, s: f64, z: &[f64]) -> StepOut {
        let h = self.h;
        let dw = self.sqrt_h * z[0];
        let plain = |state: f64| StepOut {
            state,
            dz: dw,
            exact_integral: None,
            truncated: false,
        };
        match st {
            Stepper::Gbm { drift, vol } => plain(s + drift + vol * dw),
            Stepper::Garch { decay, vol, level_h } => {
                let e = (decay + vol * dw).exp();
                plain(s * e + level_h * 0.5 * (1.0 + e))
            }
            Stepper::CirImplicit { vol, a, k } => {
                let c = s + 0.5 * vol * dw;
                plain((c + (c * c + 4.0 * a * k).sqrt()) / (2.0 * a))
            }
            Stepper::CirTruncated { level, speed, vol } => {
                let v = s.max(0.0);
                let next = s + (level - speed * v) * h + vol * v.sqrt() * dw;
                StepOut {
                    state: next,
                    dz: dw,
                    exact_integral: None,
                    truncated: next < 0.0,
                }
            }
            Stepper::Ou {
                decay,
                mean,
                integral_slope,
                chol,
            } => {
                let eps: Vec<f64> = (0..3).map(|i| (0..3).map(|j| chol[i][j] * z[j]).sum()).collect();
                StepOut {
                    state: mean + (s - mean) * decay + eps[0],
                    dz: eps[2],
                    exact_integral: Some(mean * h + (s - mean) * integral_slope + eps[1]),
                    truncated: false,
                }
            }
            Stepper::Reciprocal(inner) => {
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                let out = self.step_inner(inner, s, &neg);
                StepOut {
                    dz: -out.dz,
                    exact_integral: None,
                    ..out
                }
            }
            Stepper::Euler { process } => {
                let x = if process.positive_state() { s.max(0.0) } else { s };
                let next = s + process.drift(x) * h + process.diffusion_sq(x).sqrt() * dw;
                StepOut {
                    state: next,
                    dz: dw,
                    exact_integral: None,
                    truncated: process.positive_state() && next < 0.0,
                }
            }
        }
    }

    /// (∫G, ∫1/G) over a step.
    fn integrals(&self, s0: f64, out: &StepOut) -> (f64, f64) {
        let g0 = self.value(s0);
        if let Some(i) = out.exact_integral {
            return (i, f64::NAN);
        }
        if self.left_point() {
            return (g0 * self.h, self.h / g0);
        }
        let g1 = self.value(out.state);
        (0.5 * self.h * (g0 + g1), 0.5 * self.h * (1.0 / g0 + 1.0 / g1))
    }
}

// ---------------------------------------------------------------------------
// Vector OU stepper

#[derive(Debug, Clone)]
struct VectorOu {
    d: usize,
    transition: Vec<f64>,
    shift: Vec<f64>,
    chol: Vec<f64>,
}

impl VectorOu {
    fn new(drift: &DVector<f64>, matrix: &DMatrix<f64>, cov: &DMatrix<f64>, h: f64) -> Result<Self> {
        let d = drift.len();
        let mut van_loan = DMatrix::zeros(2 * d, 2 * d);
        van_loan.view_mut((0, 0), (d, d)).copy_from(&(-matrix * h));
        van_loan.view_mut((0, d), (d, d)).copy_from(&(cov * h));
        van_loan.view_mut((d, d), (d, d)).copy_from(&(matrix.transpose() * h));
        let e = van_loan.exp();
        let e22 = e.view((d, d), (d, d)).into_owned();
        let e12 = e.view((0, d), (d, d)).into_owned();
        let phi = e22.transpose();
        let q = &phi * e12;
        let q = (&q + q.transpose()) * 0.5;
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&(matrix * h));
        aug.view_mut((0, d), (d, 1)).copy_from(&(drift * h));
        let shift = aug.exp().view((0, d), (d, 1)).into_owned();
        let l = q
            .cholesky()
            .ok_or_else(|| Error::InvalidSimConfig("OU transition covariance is not positive definite".into()))?
            .l();
        Ok(VectorOu {
            d,
            transition: phi.transpose().as_slice().to_vec(),
            shift: shift.as_slice().to_vec(),
            chol: l.transpose().as_slice().to_vec(),
        })
    }

    /// Row-major products: y′ = Φy + c + Lz.
    fn step(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let mut acc = self.shift[i];
            for j in 0..d {
                acc += self.transition[i * d + j] * y[j];
            }
            for j in 0..=i {
                acc += self.chol[i * d + j] * z[j];
            }
            out[i] = acc;
        }
    }
}

fn quad_form(m: &[f64], y: &[f64]) -> f64 {
    let d = y.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += y[i] * m[i * d + j] * y[j];
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Path models

#[derive(Debug, Clone, Copy)]
struct PathState {
    s: [f64; MAX_DIM],
    acc: [f64; 3],
    truncations: u64,
}

trait PathModel: Sync {
    fn normals(&self) -> usize;
    fn init(&self) -> PathState;
    fn step(&self, st: &mut PathState, z: &[f64]);
    /// The recorded functional at time t.
    fn functional(&self, st: &PathState, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
enum VarRule {
    Constant(f64),
    /// σ²/G
    Reciprocal(f64),
    /// σ²·G
    Linear(f64),
}

enum LetfKind {
    /// The factor is X itself.
    Univariate { factor: Factor, var: VarRule },
    /// Factor is the variance; log X by Euler.
    StochasticVol { factor: Factor, mu: f64, rho: f64 },
    /// Factor is the short rate; log X is exact given ΔB.
    StochasticRate { factor: Factor, mu: f64, sigma: f64, rho: f64 },
    Quadratic { ou: VectorOu, a: Vec<f64> },
}

struct LetfPath {
    kind: LetfKind,
    recipe: LogPriceRecipe,
    alpha: f64,
    x0: f64,
    h: f64,
}

impl PathModel for LetfPath {
    fn normals(&self) -> usize {
        match &self.kind {
            LetfKind::Univariate { factor, .. } => factor.normals(),
            LetfKind::StochasticVol { factor, .. } | LetfKind::StochasticRate { factor, .. } => factor.normals() + 1,
            LetfKind::Quadratic { ou, .. } => ou.d,
        }
    }

    fn init(&self) -> PathState {
        let mut st = PathState {
            s: [0.0; MAX_DIM],
            acc: [0.0; 3],
            truncations: 0,
        };
        match &self.kind {
            LetfKind::Univariate { factor, .. } => st.s[0] = factor.init(1.0),
            LetfKind::StochasticVol { factor, .. } | LetfKind::StochasticRate { factor, .. } => {
                st.s[0] = factor.init(self.x0)
            }
            LetfKind::Quadratic { .. } => {}
        }
        st
    }

    fn step(&self, st: &mut PathState, z: &[f64]) {
        let h = self.h;
        // acc = [log X, ∫r, ∫|σ|²]
        match &self.kind {
            LetfKind::Univariate { factor, var } => {
                let s0 = st.s[0];
                let out = factor.step(s0, z);
                st.truncations += out.truncated as u64;
                st.acc[2] += match *var {
                    VarRule::Constant(c) => c * h,
                    VarRule::Reciprocal(c) => c * factor.integrals(s0, &out).1,
                    VarRule::Linear(c) => c * factor.integrals(s0, &out).0,
                };
                st.s[0] = out.state;
                st.acc[0] = factor.value(out.state).ln();
            }
            LetfKind::StochasticVol { factor, mu, rho } => {
                let s0 = st.s[0];
                let v = factor.value(s0);
                let out = factor.step(s0, z);
                st.truncations += out.truncated as u64;
                let db = rho * out.dz + (1.0 - rho * rho).sqrt() * factor.sqrt_h * z[factor.normals()];
                st.acc[0] += (mu - 0.5 * v) * h + v.sqrt() * db;
                st.acc[2] += v * h;
                st.s[0] = out.state;
            }
            LetfKind::StochasticRate { factor, mu, sigma, rho } => {
                let s0 = st.s[0];
                let out = factor.step(s0, z);
                st.truncations += out.truncated as u64;
                let db = rho * out.dz + (1.0 - rho * rho).sqrt() * factor.sqrt_h * z[factor.normals()];
                st.acc[0] += (mu - 0.5 * sigma * sigma) * h + sigma * db;
                st.acc[1] += factor.integrals(s0, &out).0;
                st.acc[2] += sigma * sigma * h;
                st.s[0] = out.state;
            }
            LetfKind::Quadratic { ou, a } => {
                let d = ou.d;
                let mut next = [0.0; MAX_DIM];
                ou.step(&st.s[..d], z, &mut next[..d]);
                let q0 = quad_form(a, &st.s[..d]);
                let q1 = quad_form(a, &next[..d]);
                st.acc[2] += 4.0 * 0.5 * h * (q0 + q1);
                st.acc[0] = next[..d].iter().map(|v| v * v).sum();
                st.s[..d].copy_from_slice(&next[..d]);
            }
        }
    }

    fn functional(&self, st: &PathState, t: f64) -> f64 {
        self.alpha
            * self.recipe.evaluate(&PathFunctionals {
                t,
                log_x: st.acc[0],
                int_rate: st.acc[1],
                int_var: st.acc[2],
            })
    }
}

fn letf_path(problem: &ValidatedProblem, cfg: &SimConfig) -> Result<LetfPath> {
    let h = cfg.dt();
    let scheme = cfg.scheme;
    let mut x0 = 1.0;
    let kind = match &problem.model {
        &ModelSpec::Gbm { mu, sigma } => LetfKind::Univariate {
            factor: Factor::new(&FactorProcess::Gbm { mu, sigma }, h, scheme, false)?,
            var: VarRule::Constant(sigma * sigma),
        },
        &ModelSpec::Garch { theta, a, sigma } => LetfKind::Univariate {
            factor: Factor::new(
                &FactorProcess::Garch {
                    level: theta,
                    speed: a,
                    vol: sigma,
                },
                h,
                scheme,
                false,
            )?,
            var: VarRule::Constant(sigma * sigma),
        },
        &ModelSpec::InverseGarch { theta, a, sigma } => LetfKind::Univariate {
            factor: Factor::new(
                &FactorProcess::InverseGarch {
                    level: theta,
                    speed: a,
                    vol: sigma,
                },
                h,
                scheme,
                false,
            )?,
            var: VarRule::Constant(sigma * sigma),
        },
        &ModelSpec::ExtendedCir { theta, mu, sigma } => LetfKind::Univariate {
            factor: Factor::new(
                &FactorProcess::Cir {
                    level: theta,
                    speed: -mu,
                    vol: sigma,
                },
                h,
                scheme,
                false,
            )?,
            var: VarRule::Reciprocal(sigma * sigma),
        },
        &ModelSpec::ThreeHalves { theta, a, sigma } => LetfKind::Univariate {
            factor: Factor::new(
                &FactorProcess::ThreeHalves {
                    level: theta,
                    speed: a,
                    vol: sigma,
                },
                h,
                scheme,
                false,
            )?,
            var: VarRule::Linear(sigma * sigma),
        },
        &ModelSpec::HestonSv {
            mu,
            theta,
            a,
            delta,
            rho,
            v0,
        } => {
            x0 = v0;
            LetfKind::StochasticVol {
                factor: Factor::new(
                    &FactorProcess::Cir {
                        level: theta,
                        speed: a,
                        vol: delta,
                    },
                    h,
                    scheme,
                    true,
                )?,
                mu,
                rho,
            }
        }
        &ModelSpec::ThreeHalvesSv {
            mu,
            theta,
            a,
            delta,
            rho,
            v0,
        } => {
            x0 = v0;
            LetfKind::StochasticVol {
                factor: Factor::new(
                    &FactorProcess::ThreeHalves {
                        level: theta,
                        speed: a,
                        vol: delta,
                    },
                    h,
                    scheme,
                    false,
                )?,
                mu,
                rho,
            }
        }
        &ModelSpec::GbmVasicek {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
        }
        | &ModelSpec::GbmInverseGarchRate {
            mu,
            sigma,
            theta,
            a,
            delta,
            rho,
            r0,
        } => {
            x0 = r0;
            let process = match problem.model {
                ModelSpec::GbmVasicek { .. } => FactorProcess::Ou {
                    level: theta,
                    speed: a,
                    vol: delta,
                },
                _ => FactorProcess::InverseGarch {
                    level: theta,
                    speed: a,
                    vol: delta,
                },
            };
            LetfKind::StochasticRate {
                factor: Factor::new(&process, h, scheme, false)?,
                mu,
                sigma,
                rho,
            }
        }
        ModelSpec::Quadratic { .. } => {
            let parts = problem.model.quadratic_parts().expect("quadratic");
            let a = parts.a();
            LetfKind::Quadratic {
                ou: VectorOu::new(&parts.b, &parts.bmat, &a, h)?,
                a: a.transpose().as_slice().to_vec(),
            }
        }
    };
    let rate = problem.rate.or(if problem.model.has_stochastic_rate() {
        None
    } else {
        Some(ConstantRate { r: problem.r() })
    });
    Ok(LetfPath {
        kind,
        recipe: letf_log_price(&problem.model, problem.beta(), rate),
        alpha: problem.alpha(),
        x0,
        h,
    })
}

struct MartingalePath {
    factor: Option<Factor>,
    vector: Option<VectorOu>,
    killing: Killing,
    killing_flat: Vec<f64>,
    lambda: f64,
    phi: EigenFunction,
    initial: Vec<f64>,
    ln_phi0: f64,
    h: f64,
}

impl PathModel for MartingalePath {
    fn normals(&self) -> usize {
        match (&self.factor, &self.vector) {
            (Some(f), _) => f.normals(),
            (_, Some(v)) => v.d,
            _ => unreachable!(),
        }
    }

    fn init(&self) -> PathState {
        let mut st = PathState {
            s: [0.0; MAX_DIM],
            acc: [0.0; 3],
            truncations: 0,
        };
        match &self.factor {
            Some(f) => st.s[0] = f.init(self.initial[0]),
            None => st.s[..self.initial.len()].copy_from_slice(&self.initial),
        }
        st
    }

    fn step(&self, st: &mut PathState, z: &[f64]) {
        // acc[0] = ∫k
        if let Some(f) = &self.factor {
            let s0 = st.s[0];
            let out = f.step(s0, z);
            st.truncations += out.truncated as u64;
            st.acc[0] += match self.killing {
                Killing::Constant(c) => c * self.h,
                Killing::Linear(c) => c * f.integrals(s0, &out).0,
                Killing::Reciprocal(c) => c * f.integrals(s0, &out).1,
                Killing::QuadraticForm(_) => unreachable!(),
            };
            st.s[0] = out.state;
        } else if let Some(ou) = &self.vector {
            let d = ou.d;
            let mut next = [0.0; MAX_DIM];
            ou.step(&st.s[..d], z, &mut next[..d]);
            st.acc[0] += 0.5 * self.h * (quad_form(&self.killing_flat, &st.s[..d]) + quad_form(&self.killing_flat, &next[..d]));
            st.s[..d].copy_from_slice(&next[..d]);
        }
    }

    fn functional(&self, st: &PathState, t: f64) -> f64 {
        let ln_phi = match &self.factor {
            Some(f) => self.phi.ln_value(&[f.value(st.s[0])]),
            None => self.phi.ln_value(&st.s[..self.initial.len()]),
        };
        self.lambda * t - st.acc[0] + ln_phi - self.ln_phi0
    }
}

// ---------------------------------------------------------------------------
// Engine

struct RawRun {
    /// per pair, per path in pair, per checkpoint
    values: Vec<f64>,
    n_pairs: usize,
    per_pair: usize,
    n_checkpoints: usize,
    truncations: u64,
}

fn run_paths(model: &dyn PathModel, cfg: &SimConfig) -> RawRun {
    let steps = cfg.checkpoint_steps();
    let nc = steps.len();
    let n_pairs = cfg.n_pairs();
    let per_pair = cfg.paths_per_pair();
    let m = model.normals();
    let h = cfg.dt();
    let n_chunks = n_pairs.div_ceil(PAIRS_PER_CHUNK);
    let chunks: Vec<(Vec<f64>, u64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * PAIRS_PER_CHUNK;
            let hi = (lo + PAIRS_PER_CHUNK).min(n_pairs);
            let mut out = Vec::with_capacity((hi - lo) * per_pair * nc);
            let mut truncations = 0u64;
            let mut z = vec![0.0; m];
            let mut zneg = vec![0.0; m];
            for k in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(k as u64);
                let mut paths = [model.init(), model.init()];
                let mut rec = vec![0.0; per_pair * nc];
                let mut next_cp = 0;
                for step in 1..=cfg.n_steps {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    model.step(&mut paths[0], &z);
                    if per_pair == 2 {
                        for (n, v) in zneg.iter_mut().zip(&z) {
                            *n = -v;
                        }
                        model.step(&mut paths[1], &zneg);
                    }
                    while next_cp < nc && steps[next_cp] == step {
                        let t = step as f64 * h;
                        for p in 0..per_pair {
                            rec[p * nc + next_cp] = model.functional(&paths[p], t);
                        }
                        next_cp += 1;
                    }
                    if next_cp == nc {
                        break;
                    }
                }
                for p in paths.iter().take(per_pair) {
                    truncations += p.truncations;
                }
                out.extend_from_slice(&rec);
            }
            (out, truncations)
        })
        .collect();
    let mut values = Vec::with_capacity(n_pairs * per_pair * nc);
    let mut truncations = 0;
    for (v, t) in chunks {
        values.extend(v);
        truncations += t;
    }
    RawRun {
        values,
        n_pairs,
        per_pair,
        n_checkpoints: nc,
        truncations,
    }
}

impl RawRun {
    fn get(&self, pair: usize, path: usize, cp: usize) -> f64 {
        self.values[(pair * self.per_pair + path) * self.n_checkpoints + cp]
    }

    /// Pairs whose paths are all finite at checkpoint `cp`.
    fn finite_pair(&self, pair: usize, cp: usize) -> bool {
        (0..self.per_pair).all(|p| self.get(pair, p, cp).is_finite())
    }

    fn overflowed(&self, cp: usize) -> usize {
        (0..self.n_pairs)
            .flat_map(|k| (0..self.per_pair).map(move |p| (k, p)))
            .filter(|&(k, p)| !self.get(k, p, cp).is_finite())
            .count()
    }

    /// Pair averages of exp(value − shift) and the shift, over finite pairs.
    fn pair_means(&self, cp: usize) -> Option<(Vec<f64>, f64)> {
        let shift = (0..self.n_pairs)
            .filter(|&k| self.finite_pair(k, cp))
            .flat_map(|k| (0..self.per_pair).map(move |p| (k, p)))
            .map(|(k, p)| self.get(k, p, cp))
            .fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return None;
        }
        let means = (0..self.n_pairs)
            .filter(|&k| self.finite_pair(k, cp))
            .map(|k| (0..self.per_pair).map(|p| (self.get(k, p, cp) - shift).exp()).sum::<f64>() / self.per_pair as f64)
            .collect();
        Some((means, shift))
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Hill estimate of the tail index of e^v from the top 1% of log values.
fn hill_tail_index(log_values: &[f64]) -> f64 {
    let mut v: Vec<f64> = log_values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 20 {
        return f64::INFINITY;
    }
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = (v.len() / 100).max(10);
    let xi = v[..k].iter().map(|x| x - v[k]).sum::<f64>() / k as f64;
    if xi > 0.0 {
        1.0 / xi
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// Growth estimation

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEstimate {
    pub t: f64,
    /// log of the sample mean of L_t^α
    pub log_mean_utility: f64,
    pub stderr: f64,
    pub overflowed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthEstimate {
    pub checkpoints: Vec<CheckpointEstimate>,
    pub slope: f64,
    pub slope_stderr: f64,
    /// 99% confidence interval for the slope
    pub ci99: (f64, f64),
    pub diverged: bool,
    /// Hill tail index of L_T^α; below 1 signals an infinite mean.
    pub tail_index: f64,
    pub overflow_fraction: f64,
    pub truncation_fraction: f64,
    pub n_paths: usize,
}

fn check_truncation(raw: &RawRun, cfg: &SimConfig) -> Result<f64> {
    let total = (raw.n_pairs * raw.per_pair) as f64 * cfg.n_steps as f64;
    let frac = raw.truncations as f64 / total;
    if frac > 0.01 {
        return Err(Error::SchemeUnstable(format!(
            "{:.2}% of steps produced a negative value before truncation",
            100.0 * frac
        )));
    }
    Ok(frac)
}

pub fn simulate_growth(problem: &ValidatedProblem, cfg: &SimConfig) -> Result<GrowthEstimate> {
    cfg.validate()?;
    let model = letf_path(problem, cfg)?;
    estimate_growth(&model, cfg)
}

fn estimate_growth(model: &dyn PathModel, cfg: &SimConfig) -> Result<GrowthEstimate> {
    let raw = run_paths(model, cfg);
    let truncation_fraction = check_truncation(&raw, cfg)?;
    let h = cfg.dt();
    let steps = cfg.checkpoint_steps();
    let nc = raw.n_checkpoints;
    let n_paths = raw.n_pairs * raw.per_pair;

    let mut checkpoints = Vec::with_capacity(nc);
    let mut pair_means = Vec::with_capacity(nc);
    for (j, &step) in steps.iter().enumerate() {
        let overflowed = raw.overflowed(j);
        let t = step as f64 * h;
        match raw.pair_means(j) {
            Some((means, shift)) => {
                let (m, sd) = mean_sd(&means);
                checkpoints.push(CheckpointEstimate {
                    t,
                    log_mean_utility: shift + m.ln(),
                    stderr: sd / ((means.len() as f64).sqrt() * m),
                    overflowed,
                });
                pair_means.push(Some((means, m)));
            }
            None => {
                checkpoints.push(CheckpointEstimate {
                    t,
                    log_mean_utility: f64::NAN,
                    stderr: f64::NAN,
                    overflowed,
                });
                pair_means.push(None);
            }
        }
    }
    if checkpoints[nc - 1].overflowed == n_paths {
        return Err(Error::AllPathsDiverged);
    }
    let overflow_fraction = checkpoints[nc - 1].overflowed as f64 / n_paths as f64;
    let last: Vec<f64> = (0..raw.n_pairs)
        .flat_map(|k| (0..raw.per_pair).map(move |p| (k, p)))
        .map(|(k, p)| raw.get(k, p, nc - 1))
        .collect();
    let tail_index = hill_tail_index(&last);

    // weighted least squares over the last half of the usable checkpoints
    let usable: Vec<usize> = (nc / 2..nc)
        .filter(|&j| checkpoints[j].log_mean_utility.is_finite() && checkpoints[j].overflowed == 0)
        .collect();
    let (slope, slope_stderr) = if usable.is_empty() {
        (f64::NAN, f64::NAN)
    } else if usable.len() == 1 {
        let c = &checkpoints[usable[0]];
        (c.log_mean_utility / c.t, c.stderr / c.t)
    } else {
        let weights: Vec<f64> = usable
            .iter()
            .map(|&j| {
                let se = checkpoints[j].stderr;
                if se > 0.0 {
                    1.0 / (se * se)
                } else {
                    1.0
                }
            })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let tbar = usable.iter().zip(&weights).map(|(&j, w)| w * checkpoints[j].t).sum::<f64>() / wsum;
        let sxx: f64 = usable
            .iter()
            .zip(&weights)
            .map(|(&j, w)| w * (checkpoints[j].t - tbar).powi(2))
            .sum();
        let coef: Vec<f64> = usable
            .iter()
            .zip(&weights)
            .map(|(&j, w)| w * (checkpoints[j].t - tbar) / sxx)
            .collect();
        let slope: f64 = usable
            .iter()
            .zip(&coef)
            .map(|(&j, c)| c * checkpoints[j].log_mean_utility)
            .sum();
        // delta method: per-pair influence Σ c_j p_kj / p̄_j over pairs finite at every used checkpoint
        let common: Vec<usize> = (0..raw.n_pairs)
            .filter(|&k| usable.iter().all(|&j| raw.finite_pair(k, j)))
            .collect();
        let influence: Vec<f64> = common
            .iter()
            .map(|&k| {
                usable
                    .iter()
                    .zip(&coef)
                    .map(|(&j, c)| {
                        let (_, m) = pair_means[j].as_ref().unwrap();
                        let shift = checkpoints[j].log_mean_utility - m.ln();
                        let p = (0..raw.per_pair).map(|p| (raw.get(k, p, j) - shift).exp()).sum::<f64>()
                            / raw.per_pair as f64;
                        c * p / m
                    })
                    .sum()
            })
            .collect();
        let (_, sd) = mean_sd(&influence);
        (slope, sd / (influence.len() as f64).sqrt())
    };
    let z99 = 2.575_829_303_548_901;
    Ok(GrowthEstimate {
        checkpoints,
        slope,
        slope_stderr,
        ci99: (slope - z99 * slope_stderr, slope + z99 * slope_stderr),
        diverged: overflow_fraction > 0.001 || tail_index < 1.0,
        tail_index,
        overflow_fraction,
        truncation_fraction,
        n_paths,
    })
}

// ---------------------------------------------------------------------------
// Martingale certificate

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleEstimate {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl MartingaleEstimate {
    /// |mean − 1| ≤ 3·stderr, with a 1e−12 floor for deterministic M.
    pub fn certified(&self) -> bool {
        (self.mean - 1.0).abs() <= 3.0 * self.stderr + 1e-12
    }
}

/// Simulates M_t = exp(λt − ∫k(G))·φ(G_t)/φ(G_0) and estimates E[M_t].
/// The horizon and checkpoints of `cfg` are replaced by t.
pub fn martingale_check(problem: &ValidatedProblem, pair: &Eigenpair, t: f64, cfg: &SimConfig) -> Result<MartingaleEstimate> {
    let mut cfg = cfg.clone();
    let per_year = cfg.n_steps as f64 / cfg.horizon;
    cfg.horizon = t;
    cfg.n_steps = ((per_year * t).ceil() as usize).max(1);
    cfg.checkpoints = vec![t];
    cfg.validate()?;
    let FactorModel {
        process,
        killing,
        initial,
    } = factor_model(problem);
    let h = cfg.dt();
    let (factor, vector) = match &process {
        FactorProcess::OuVector { drift, matrix, cov } => (None, Some(VectorOu::new(drift, matrix, cov, h)?)),
        p => {
            let truncate = matches!(problem.model, ModelSpec::HestonSv { .. });
            (Some(Factor::new(p, h, cfg.scheme, truncate)?), None)
        }
    };
    let killing_flat = match &killing {
        Killing::QuadraticForm(m) => m.transpose().as_slice().to_vec(),
        _ => Vec::new(),
    };
    let model = MartingalePath {
        factor,
        vector,
        ln_phi0: pair.phi.ln_value(&initial),
        killing,
        killing_flat,
        lambda: pair.lambda,
        phi: pair.phi.clone(),
        initial,
        h,
    };
    let raw = run_paths(&model, &cfg);
    check_truncation(&raw, &cfg)?;
    let (means, shift) = raw.pair_means(0).ok_or(Error::AllPathsDiverged)?;
    let (m, sd) = mean_sd(&means);
    let scale = shift.exp();
    Ok(MartingaleEstimate {
        t: cfg.checkpoint_steps()[0] as f64 * h,
        mean: m * scale,
        stderr: sd * scale / (means.len() as f64).sqrt(),
        n_paths: raw.n_pairs * raw.per_pair,
    })
}

/// Terminal values G_T of a scalar factor started at x0, one per path.
pub fn sample_factor(process: &FactorProcess, x0: f64, cfg: &SimConfig) -> Result<Vec<f64>> {
    struct Terminal {
        factor: Factor,
        x0: f64,
    }
    impl PathModel for Terminal {
        fn normals(&self) -> usize {
            self.factor.normals()
        }
        fn init(&self) -> PathState {
            let mut st = PathState {
                s: [0.0; MAX_DIM],
                acc: [0.0; 3],
                truncations: 0,
            };
            st.s[0] = self.factor.init(self.x0);
            st
        }
        fn step(&self, st: &mut PathState, z: &[f64]) {
            let out = self.factor.step(st.s[0], z);
            st.truncations += out.truncated as u64;
            st.s[0] = out.state;
        }
        fn functional(&self, st: &PathState, _t: f64) -> f64 {
            self.factor.value(st.s[0])
        }
    }
    let mut cfg = cfg.clone();
    cfg.checkpoints = vec![cfg.horizon];
    cfg.validate()?;
    let model = Terminal {
        factor: Factor::new(process, cfg.dt(), cfg.scheme, false)?,
        x0,
    };
    let raw = run_paths(&model, &cfg);
    check_truncation(&raw, &cfg)?;
    Ok(raw.values)
}

/// Slope estimate of (1/t)·log E[exp(−c∫₀ᵗ r)] for the inverse GARCH short
/// rate dr = (θ − ar)r dt + σr dW started at r₀.
pub fn simulate_discount_growth(c: f64, theta: f64, a: f64, sigma: f64, r0: f64, cfg: &SimConfig) -> Result<GrowthEstimate> {
    struct Discount {
        factor: Factor,
        c: f64,
        r0: f64,
    }
    impl PathModel for Discount {
        fn normals(&self) -> usize {
            self.factor.normals()
        }
        fn init(&self) -> PathState {
            let mut st = PathState {
                s: [0.0; MAX_DIM],
                acc: [0.0; 3],
                truncations: 0,
            };
            st.s[0] = self.factor.init(self.r0);
            st
        }
        fn step(&self, st: &mut PathState, z: &[f64]) {
            let s0 = st.s[0];
            let out = self.factor.step(s0, z);
            st.acc[0] += self.factor.integrals(s0, &out).0;
            st.s[0] = out.state;
        }
        fn functional(&self, st: &PathState, _t: f64) -> f64 {
            -self.c * st.acc[0]
        }
    }
    cfg.validate()?;
    let process = FactorProcess::InverseGarch {
        level: theta,
        speed: a,
        vol: sigma,
    };
    let model = Discount {
        factor: Factor::new(&process, cfg.dt(), cfg.scheme, false)?,
        c,
        r0,
    };
    estimate_growth(&model, cfg)
}

// ---------------------------------------------------------------------------
// Densities

/// log of the CIR transition density of dX = (ℓ − μX)dt + σ√X dW from x0 to x
/// over time t.
pub fn cir_log_density(x: f64, t: f64, ell: f64, mu: f64, sigma: f64, x0: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let s2 = sigma * sigma;
    let c = 2.0 * mu / (s2 * (-(-mu * t).exp_m1()));
    let u = c * x0 * (-mu * t).exp();
    let v = c * x;
    let q = 2.0 * ell / s2 - 1.0;
    c.ln() - u - v + 0.5 * q * (v / u).ln() + ln_bessel_i(q, 2.0 * (u * v).sqrt())
}

pub fn cir_density(x: f64, t: f64, ell: f64, mu: f64, sigma: f64, x0: f64) -> f64 {
    cir_log_density(x, t, ell, mu, sigma, x0).exp()
}

/// Gamma(γ, 1) density of Y = 2θ/(σ²X) for the stationary GARCH diffusion,
/// γ = 2a/σ² + 1.
pub fn garch_stationary_density(y: f64, _theta: f64, a: f64, sigma: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let gamma = 2.0 * a / (sigma * sigma) + 1.0;
    ((gamma - 1.0) * y.ln() - y - ln_gamma(gamma)).exp()
}

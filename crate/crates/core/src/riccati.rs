//! Stabilizing solution of 2VaV − BᵀV − VB − q·a = 0 and the quantities of
//! the quadratic model built on it.
//!
//! The solver forms the Hamiltonian
//!
//! ```text
//!     H = [  B    −2a ]
//!         [ −q·a  −Bᵀ ]
//! ```
//!
//! whose graph subspaces [I; V] are exactly the Riccati solutions, with
//! H[I; V] = [I; V](B − 2aV). The stable invariant subspace is extracted with
//! the matrix sign function (scaled Newton iteration), V = U₂U₁⁻¹ is formed
//! from an orthonormal basis [U₁; U₂] of that subspace, and the result is
//! polished with Newton–Kleinman steps. If the subspace step fails, Newton–
//! Kleinman is run alone from V₀ = c·a⁻¹ with c large enough that B − 2c·I is
//! Hurwitz.

use nalgebra::{DMatrix, DVector};

use crate::catalog::{QuadraticParts, ValidatedProblem};
use crate::error::{Error, Result};
use crate::growth::{Classification, FinitenessCondition, GrowthRate};

/// Real parts within this margin of zero are reported as marginal.
pub const STABILITY_MARGIN: f64 = 1e-10;
const MAX_BASIS_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Stabilizing,
    /// The unstable invariant subspace; used to check branch uniqueness.
    AntiStabilizing,
}

/// V together with its closed loop F = B − 2aV.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizingSolution {
    pub v: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
    /// Largest real part among the eigenvalues of the closed loop.
    pub max_real_part: f64,
    pub stable: bool,
    pub marginally_stable: bool,
    /// ‖2VaV − BᵀV − VB − q·a‖_max
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub v: DMatrix<f64>,
    pub u: DVector<f64>,
    pub lambda: f64,
    pub closed_loop: DMatrix<f64>,
    pub stable: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMatrix {
    pub c_literal: DMatrix<f64>,
    pub c_exponent: DMatrix<f64>,
    pub eigs_literal: Vec<f64>,
    pub eigs_exponent: Vec<f64>,
    pub all_eigs_negative_literal: bool,
    pub all_eigs_negative_exponent: bool,
}

pub fn riccati_residual(v: &DMatrix<f64>, a: &DMatrix<f64>, bmat: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    2.0 * v * a * v - bmat.transpose() * v - v * bmat - q * a
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, z| acc.max(z.re))
}

/// Solve A X + X Aᵀ... in the general Sylvester form L X + X R = C through the
/// Kronecker system (I ⊗ L + Rᵀ ⊗ I) vec X = vec C.
pub fn solve_sylvester(l: &DMatrix<f64>, r: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = l.nrows();
    let m = r.nrows();
    let mut k = DMatrix::<f64>::zeros(n * m, n * m);
    for j in 0..m {
        for i in 0..n {
            let row = j * n + i;
            for p in 0..n {
                k[(row, j * n + p)] += l[(i, p)];
            }
            for q in 0..m {
                k[(row, q * n + i)] += r[(q, j)];
            }
        }
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = k.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, m, x.as_slice()))
}

/// Σ solving FΣ + ΣFᵀ + a = 0.
pub fn solve_lyapunov(f: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    solve_sylvester(f, &f.transpose(), &(-a)).map(|s| symmetrize(&s))
}

fn ln_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut s = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        s += d.ln();
    }
    Some(s)
}

/// Matrix sign function by the determinant-scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..100 {
        let c = (-ln_abs_det(&z)? / n).exp();
        let zc = &z * c;
        let inv = zc.clone().try_inverse()?;
        let next = (zc + inv) * 0.5;
        let delta = (&next - &z).abs().sum();
        let size = next.abs().sum();
        z = next;
        if !size.is_finite() {
            return None;
        }
        if delta <= 1e-13 * size {
            return Some(z);
        }
    }
    None
}

fn graph_from_projector(p: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let svd = p.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors");
    let mut order: Vec<usize> = (0..2 * d).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(d - 1) < 0.5 || sv(d) > 1e-6 {
        return Err(Error::NoStabilizingSolution(
            "invariant subspace does not have dimension d (eigenvalues on the imaginary axis)"
                .into(),
        ));
    }
    let basis = DMatrix::from_fn(2 * d, d, |i, j| u[(i, order[j])]);
    let u1 = basis.rows(0, d).into_owned();
    let u2 = basis.rows(d, d).into_owned();
    let s1 = u1.clone().svd(false, false).singular_values;
    let smax = s1.iter().fold(0.0_f64, |a, &b| a.max(b));
    let smin = s1.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_BASIS_CONDITION {
        return Err(Error::IllConditioned { cond });
    }
    let inv = u1
        .try_inverse()
        .ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    Ok(symmetrize(&(u2 * inv)))
}

fn newton_kleinman(
    mut v: DMatrix<f64>,
    a: &DMatrix<f64>,
    bmat: &DMatrix<f64>,
    q: f64,
    max_iter: usize,
) -> DMatrix<f64> {
    let mut res = max_abs(&riccati_residual(&v, a, bmat, q));
    for _ in 0..max_iter {
        if res == 0.0 {
            break;
        }
        let f = bmat - 2.0 * a * &v;
        let r = riccati_residual(&v, a, bmat, q);
        let Some(delta) = solve_sylvester(&f.transpose(), &f, &r) else {
            break;
        };
        let cand = symmetrize(&(&v + delta));
        let cand_res = max_abs(&riccati_residual(&cand, a, bmat, q));
        if !(cand_res < res) {
            break;
        }
        v = cand;
        res = cand_res;
    }
    v
}

fn finish(v: DMatrix<f64>, a: &DMatrix<f64>, bmat: &DMatrix<f64>, q: f64) -> StabilizingSolution {
    let closed_loop = bmat - 2.0 * a * &v;
    let max_real_part = max_real_eigenvalue(&closed_loop);
    let residual = max_abs(&riccati_residual(&v, a, bmat, q));
    StabilizingSolution {
        v,
        closed_loop,
        max_real_part,
        stable: max_real_part < -STABILITY_MARGIN,
        marginally_stable: max_real_part.abs() <= STABILITY_MARGIN,
        residual,
    }
}

fn hamiltonian(a: &DMatrix<f64>, bmat: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(bmat);
    h.view_mut((0, d), (d, d)).copy_from(&(-2.0 * a));
    h.view_mut((d, 0), (d, d)).copy_from(&(-q * a));
    h.view_mut((d, d), (d, d)).copy_from(&(-bmat.transpose()));
    h
}

/// Solution attached to the requested invariant subspace of the Hamiltonian.
pub fn solve_riccati_branch(
    a: &DMatrix<f64>,
    bmat: &DMatrix<f64>,
    q: f64,
    branch: Branch,
) -> Result<StabilizingSolution> {
    let d = a.nrows();
    let h = hamiltonian(a, bmat, q);
    let sign = matrix_sign(&h).ok_or_else(|| {
        Error::NoStabilizingSolution("Hamiltonian has eigenvalues on the imaginary axis".into())
    })?;
    let id = DMatrix::<f64>::identity(2 * d, 2 * d);
    let proj = match branch {
        Branch::Stabilizing => (&id - &sign) * 0.5,
        Branch::AntiStabilizing => (&id + &sign) * 0.5,
    };
    let v = graph_from_projector(&proj, d)?;
    let v = match branch {
        Branch::Stabilizing => newton_kleinman(v, a, bmat, q, 6),
        Branch::AntiStabilizing => v,
    };
    Ok(finish(v, a, bmat, q))
}

fn newton_from_shift(a: &DMatrix<f64>, bmat: &DMatrix<f64>, q: f64) -> Option<StabilizingSolution> {
    let shift = 0.5 * max_real_eigenvalue(bmat).max(0.0) + 1.0;
    let a_inv = a.clone().try_inverse()?;
    let mut v = symmetrize(&(a_inv * shift));
    for _ in 0..200 {
        let f = bmat - 2.0 * a * &v;
        let rhs = -(2.0 * &v * a * &v + q * a);
        let next = symmetrize(&solve_sylvester(&f.transpose(), &f, &rhs)?);
        let step = max_abs(&(&next - &v));
        v = next;
        if step <= 1e-15 * (1.0 + max_abs(&v)) {
            break;
        }
    }
    Some(finish(newton_kleinman(v, a, bmat, q, 4), a, bmat, q))
}

pub fn solve_stabilizing_riccati(a: &DMatrix<f64>, bmat: &DMatrix<f64>, q: f64) -> Result<StabilizingSolution> {
    let primary = solve_riccati_branch(a, bmat, q, Branch::Stabilizing);
    let sol = match primary {
        Ok(s) if s.stable => s,
        Ok(s) => match newton_from_shift(a, bmat, q) {
            Some(n) if n.stable => n,
            _ => s,
        },
        Err(e) => match newton_from_shift(a, bmat, q) {
            Some(n) if n.stable => n,
            _ => return Err(e),
        },
    };
    if sol.marginally_stable {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop is only marginally stable (max real part {:.3e})",
            sol.max_real_part
        )));
    }
    if !sol.stable {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop B − 2aV is not Hurwitz (max real part {:.3e})",
            sol.max_real_part
        )));
    }
    if !sol.v.iter().all(|x| x.is_finite()) {
        return Err(Error::NoStabilizingSolution("non-finite solution".into()));
    }
    Ok(sol)
}

/// u solving (2Va − Bᵀ)u = 2Vb.
pub fn compute_u(v: &DMatrix<f64>, a: &DMatrix<f64>, bmat: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let m = 2.0 * v * a - bmat.transpose();
    let rhs = 2.0 * v * b;
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("2Va − Bᵀ is singular".into()))
}

/// λ = −½uᵀau + tr(aV) + uᵀb.
pub fn quadratic_eigenvalue(v: &DMatrix<f64>, u: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    -0.5 * u.dot(&(a * u)) + (a * v).trace() + u.dot(b)
}

pub fn stationary_covariance(f: &DMatrix<f64>, a: &DMatrix<f64>, drift: &DVector<f64>) -> Result<StationaryGaussian> {
    let max_real_part = max_real_eigenvalue(f);
    if max_real_part >= -STABILITY_MARGIN {
        return Err(Error::NotHurwitz { max_real_part });
    }
    let covariance = solve_lyapunov(f, a).ok_or_else(|| Error::SingularSystem("Lyapunov operator".into()))?;
    let mean = -f
        .clone()
        .lu()
        .solve(drift)
        .ok_or_else(|| Error::SingularSystem("closed loop".into()))?;
    Ok(StationaryGaussian { mean, covariance })
}

/// q = 2αβ(β−1), the coefficient of a in the killing rate q·yᵀay.
pub fn q_coefficient(alpha: f64, beta: f64) -> f64 {
    2.0 * alpha * beta * (beta - 1.0)
}

pub fn solve_quadratic_model(parts: &QuadraticParts, alpha: f64, beta: f64) -> Result<RiccatiSolution> {
    let a = parts.a();
    let q = q_coefficient(alpha, beta);
    let s = solve_stabilizing_riccati(&a, &parts.bmat, q)?;
    let u = compute_u(&s.v, &a, &parts.bmat, &parts.b)?;
    let lambda = quadratic_eigenvalue(&s.v, &u, &a, &parts.b);
    Ok(RiccatiSolution {
        v: s.v,
        u,
        lambda,
        closed_loop: s.closed_loop,
        stable: s.stable,
        residual: s.residual,
    })
}

/// Stationary law of Y under the transformed measure, dY = (b − au + FY)dt + σdW.
pub fn transformed_stationary_law(parts: &QuadraticParts, sol: &RiccatiSolution) -> Result<StationaryGaussian> {
    let a = parts.a();
    let drift = &parts.b - &a * &sol.u;
    stationary_covariance(&sol.closed_loop, &a, &drift)
}

pub fn convergence_matrix(v: &DMatrix<f64>, alpha: f64, beta: f64, sigma_inf: &DMatrix<f64>) -> Result<ConvergenceMatrix> {
    let d = v.nrows();
    let shift = DMatrix::<f64>::identity(d, d) * (alpha * beta);
    let inv = sigma_inf
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("stationary covariance".into()))?;
    let c_literal = symmetrize(&(v + &shift - sigma_inf * 0.5));
    let c_exponent = symmetrize(&(v + &shift - inv * 0.5));
    let eigs = |m: &DMatrix<f64>| -> Vec<f64> {
        let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    };
    let eigs_literal = eigs(&c_literal);
    let eigs_exponent = eigs(&c_exponent);
    Ok(ConvergenceMatrix {
        all_eigs_negative_literal: eigs_literal.iter().all(|&x| x < 0.0),
        all_eigs_negative_exponent: eigs_exponent.iter().all(|&x| x < 0.0),
        c_literal,
        c_exponent,
        eigs_literal,
        eigs_exponent,
    })
}

/// Everything the quadratic model needs for its growth rate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAnalysis {
    pub solution: RiccatiSolution,
    pub stationary: StationaryGaussian,
    pub convergence: ConvergenceMatrix,
}

pub fn analyze_quadratic(problem: &ValidatedProblem) -> Result<QuadraticAnalysis> {
    let parts = problem
        .model
        .quadratic_parts()
        .ok_or_else(|| Error::InvalidConfig("quadratic model required".into()))?;
    let solution = solve_quadratic_model(&parts, problem.alpha(), problem.beta())?;
    let stationary = transformed_stationary_law(&parts, &solution)?;
    let convergence = convergence_matrix(&solution.v, problem.alpha(), problem.beta(), &stationary.covariance)?;
    Ok(QuadraticAnalysis {
        solution,
        stationary,
        convergence,
    })
}

/// Λ = rα(1−β) + ½uᵀau − tr(aV) − uᵀb, finite iff V + αβI − ½Σ∞⁻¹ ≺ 0.
pub fn quadratic_growth_rate(problem: &ValidatedProblem) -> Result<GrowthRate> {
    let parts = problem
        .model
        .quadratic_parts()
        .ok_or_else(|| Error::InvalidConfig("quadratic model required".into()))?;
    let an = analyze_quadratic(problem)?;
    let a = parts.a();
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let u = &an.solution.u;
    let rate_term = problem.r() * alpha * (1.0 - beta);
    let half_uau = 0.5 * u.dot(&(&a * u));
    let trace_av = -(&a * &an.solution.v).trace();
    let u_b = -u.dot(&parts.b);
    let lhs = an.convergence.eigs_exponent.last().copied().unwrap_or(f64::NEG_INFINITY);
    let condition = FinitenessCondition::new(
        "largest eigenvalue of V + αβI − ½Σ∞⁻¹ < 0",
        lhs,
        0.0,
        lhs < 0.0,
    );
    let value = rate_term + half_uau + trace_av + u_b;
    Ok(GrowthRate::new(
        if condition.satisfied {
            Classification::Finite(value)
        } else {
            Classification::Infinite
        },
        condition,
        vec![
            ("rate_term", rate_term),
            ("half_uau", half_uau),
            ("trace_aV", trace_av),
            ("u_b", u_b),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn zero_killing_with_stable_drift_gives_zero() {
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let s = solve_stabilizing_riccati(&a, &b, 0.0).unwrap();
        assert!(max_abs(&s.v) < 1e-12);
        assert!(s.stable);
    }

    #[test]
    fn scalar_quadratic_formula() {
        for c in [0.5, 2.0, 4.0, 10.0] {
            let s = solve_stabilizing_riccati(&scalar(1.0), &scalar(-1.0), c).unwrap();
            let expected = (-1.0 + (1.0 + 2.0 * c).sqrt()) / 2.0;
            assert!((s.v[(0, 0)] - expected).abs() < 1e-12);
            assert!((s.closed_loop[(0, 0)] + (1.0 + 2.0 * c).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn isotropic_case_reduces_to_scalar() {
        let c = 3.0;
        let id = DMatrix::<f64>::identity(2, 2);
        let s = solve_stabilizing_riccati(&id, &(-&id), c).unwrap();
        let v = (-1.0 + (1.0 + 2.0 * c).sqrt()) / 2.0;
        assert!(max_abs(&(&s.v - &id * v)) < 1e-12);
    }

    #[test]
    fn scalar_u_and_lambda() {
        let a = scalar(1.0);
        let bm = scalar(-1.0);
        let s = solve_stabilizing_riccati(&a, &bm, 4.0).unwrap();
        assert!((s.v[(0, 0)] - 1.0).abs() < 1e-12);
        let b = DVector::from_element(1, 1.0);
        let u = compute_u(&s.v, &a, &bm, &b).unwrap();
        assert!((u[0] - 2.0 / 3.0).abs() < 1e-12);
        let lam = quadratic_eigenvalue(&s.v, &u, &a, &b);
        assert!((lam - 13.0 / 9.0).abs() < 1e-12);
        let lam0 = quadratic_eigenvalue(&s.v, &DVector::zeros(1), &a, &DVector::zeros(1));
        assert!((lam0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_u_is_zero() {
        let a = scalar(1.0);
        let bm = scalar(-1.0);
        let u = compute_u(&scalar(0.0), &a, &bm, &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(u[0], 0.0);
        let s = solve_stabilizing_riccati(&a, &bm, 4.0).unwrap();
        let u = compute_u(&s.v, &a, &bm, &DVector::zeros(1)).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn scalar_stationary_variance() {
        let g = stationary_covariance(&scalar(-2.0), &scalar(0.09), &DVector::from_element(1, 0.4)).unwrap();
        assert!((g.covariance[(0, 0)] - 0.09 / 4.0).abs() < 1e-15);
        assert!((g.mean[0] - 0.2).abs() < 1e-15);
        let id = DMatrix::<f64>::identity(2, 2);
        let g = stationary_covariance(&(-&id), &id, &DVector::zeros(2)).unwrap();
        assert!(max_abs(&(&g.covariance - &id * 0.5)) < 1e-15);
        assert!(matches!(
            stationary_covariance(&scalar(0.5), &scalar(1.0), &DVector::zeros(1)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn anti_stable_branch_is_unstable() {
        let b = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -0.3, -1.2]);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let anti = solve_riccati_branch(&a, &b, 2.0, Branch::AntiStabilizing).unwrap();
        assert!(anti.max_real_part > 0.0);
        assert!(anti.residual < 1e-8);
        let stab = solve_stabilizing_riccati(&a, &b, 2.0).unwrap();
        assert!(stab.stable);
    }

    #[test]
    fn unstable_drift_zero_killing() {
        // V = 0 is a solution but not stabilizing; the solver must find the other one.
        let s = solve_stabilizing_riccati(&scalar(1.0), &scalar(0.7), 0.0).unwrap();
        assert!((s.v[(0, 0)] - 0.7).abs() < 1e-12);
    }

    fn random_instance(d: usize, vals: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = DMatrix::from_fn(d, d, |i, j| vals[i * d + j] + if i == j { 1.0 } else { 0.0 });
        let a = &s * s.transpose() + DMatrix::<f64>::identity(d, d) * 0.1;
        let b = DMatrix::from_fn(d, d, |i, j| vals[d * d + i * d + j]);
        (symmetrize(&a), b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_instances_are_certified(
            d in 1usize..=6,
            vals in proptest::collection::vec(-1.0f64..1.0, 72),
            q in 0.0f64..20.0,
        ) {
            let (a, b) = random_instance(d, &vals);
            let s = solve_stabilizing_riccati(&a, &b, q).unwrap();
            prop_assert!(s.residual <= 1e-10, "residual {}", s.residual);
            prop_assert!(s.stable);
            prop_assert!(max_abs(&(&s.v - s.v.transpose())) <= 1e-12);
        }

        #[test]
        fn scalar_solver_matches_formula(a in 0.05f64..5.0, bm in -3.0f64..3.0, q in 0.0f64..30.0) {
            let s = solve_stabilizing_riccati(&scalar(a), &scalar(bm), q).unwrap();
            let expected = (bm + (bm * bm + 2.0 * q * a * a).sqrt()) / (2.0 * a);
            prop_assert!((s.v[(0, 0)] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

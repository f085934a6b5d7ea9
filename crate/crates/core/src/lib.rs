//! Long-horizon growth rates of expected power utility for leveraged ETFs.
//!
//! A leveraged ETF with leverage β on a reference X, financed at the short
//! rate, has log L_t = β log X_t − (β−1)∫r − ½β(β−1)∫|σ|². For each model in
//! [`catalog::ModelSpec`] this crate computes the eigenpair of the associated
//! generator with killing ([`eigen`]), the limit Λ(β) = lim (1/t) log E[L_t^α]
//! with its finiteness condition ([`growth`]), the leverage maximizing Λ
//! ([`optimal`]), the Riccati machinery of the quadratic model ([`riccati`])
//! and an independent Monte Carlo oracle ([`mc`]).

pub mod catalog;
pub mod eigen;
pub mod error;
pub mod mc;
pub mod growth;
pub mod numerics;
pub mod optimal;
pub mod riccati;

pub use catalog::{validate, ModelSpec, Problem, Strictness, ValidatedProblem};
pub use error::{Error, Result};

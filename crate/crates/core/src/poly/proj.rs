//! Kernel/range projections of the homological operator `L_0 = [H_0, .]`.
//!
//! In the complex basis `L_0` is diagonal with eigenvalue
//! `i omega (|k| - |j|)` on `xi^j eta^k`, so the kernel is spanned by the
//! resonant monomials `|j| = |k|` and everything else is in the range.

use num_complex::Complex64;

use super::{Basis, Polynomial};
use crate::error::CoreError;

fn require_complex(f: &Polynomial) -> Result<(), CoreError> {
    if f.basis() != Basis::ComplexXiEta {
        return Err(CoreError::BasisMismatch {
            left: f.basis().to_string(),
            right: Basis::ComplexXiEta.to_string(),
        });
    }
    Ok(())
}

/// Keep exactly the resonant (`|j| = |k|`) terms.
pub fn project_kernel(f: &Polynomial) -> Result<Polynomial, CoreError> {
    require_complex(f)?;
    Ok(Polynomial::from_terms(
        Basis::ComplexXiEta,
        f.terms()
            .filter(|(idx, _)| idx.a_degree() == idx.b_degree())
            .map(|(idx, c)| (idx.clone(), *c)),
    ))
}

/// Complement of [`project_kernel`]; the two sum back to the input.
pub fn project_range(f: &Polynomial) -> Result<Polynomial, CoreError> {
    require_complex(f)?;
    Ok(Polynomial::from_terms(
        Basis::ComplexXiEta,
        f.terms()
            .filter(|(idx, _)| idx.a_degree() != idx.b_degree())
            .map(|(idx, c)| (idx.clone(), *c)),
    ))
}

/// Apply `L_0` through its diagonal action.
pub fn l0_apply(f: &Polynomial, omega: f64) -> Result<Polynomial, CoreError> {
    require_complex(f)?;
    Ok(Polynomial::from_terms(
        Basis::ComplexXiEta,
        f.terms().map(|(idx, c)| {
            let gap = idx.b_degree() as f64 - idx.a_degree() as f64;
            (idx.clone(), c * Complex64::new(0.0, omega * gap))
        }),
    ))
}

/// Solve `L_0 u = f` for `f` in the range: divide each term by its
/// eigenvalue. Resonant terms make the system unsolvable and are reported.
pub fn solve_homological(f: &Polynomial, omega: f64) -> Result<Polynomial, CoreError> {
    require_complex(f)?;
    let offending: Vec<String> = f
        .terms()
        .filter(|(idx, _)| idx.a_degree() == idx.b_degree())
        .map(|(idx, _)| format!("{:?}", idx.entries()))
        .collect();
    if !offending.is_empty() {
        return Err(CoreError::KernelTerms { terms: offending.join(", ") });
    }
    Ok(Polynomial::from_terms(
        Basis::ComplexXiEta,
        f.terms().map(|(idx, c)| {
            let gap = idx.b_degree() as f64 - idx.a_degree() as f64;
            (idx.clone(), c / Complex64::new(0.0, omega * gap))
        }),
    ))
}

//! Poisson bracket on sparse polynomials.
//!
//! The convention is fixed once and for all as
//! `[f, g] = sum_l (df/dq_l dg/dp_l - df/dp_l dg/dq_l)`
//! in the real basis. The complex pair `(xi, eta)` is canonical with
//! multiplier one and `xi` in the position role, so in the complex basis
//! the same formula applies with `(q, p) -> (xi, eta)`.

use std::collections::HashMap;

use num_complex::Complex64;

use super::{Basis, Polynomial};
use crate::error::CoreError;

pub fn poisson_bracket(f: &Polynomial, g: &Polynomial) -> Result<Polynomial, CoreError> {
    f.check_same_basis(g)?;
    // In slot language: positions are the b slot for RealPq (q), the a slot
    // for ComplexXiEta (xi); the per-site factor below flips sign between
    // the two conventions.
    let sign = match f.basis() {
        Basis::RealPq => 1.0,
        Basis::ComplexXiEta => -1.0,
    };

    let g_terms: Vec<(&super::MultiIndex, Complex64)> =
        g.terms().map(|(i, c)| (i, *c)).collect();
    let mut by_site: HashMap<u32, Vec<usize>> = HashMap::new();
    for (k, (idx, _)) in g_terms.iter().enumerate() {
        for e in idx.entries() {
            by_site.entry(e.site).or_default().push(k);
        }
    }

    let mut out = Polynomial::zero(f.basis());
    let mut candidates: Vec<usize> = Vec::new();
    for (i1, c1) in f.terms() {
        candidates.clear();
        for e in i1.entries() {
            if let Some(v) = by_site.get(&e.site) {
                candidates.extend_from_slice(v);
            }
        }
        candidates.sort_unstable();
        candidates.dedup();

        for &k in &candidates {
            let (i2, c2) = g_terms[k];
            let merged = i1.mul(i2);
            // walk shared sites
            let (e1, e2) = (i1.entries(), i2.entries());
            let (mut u, mut v) = (0, 0);
            while u < e1.len() && v < e2.len() {
                if e1[u].site < e2[v].site {
                    u += 1;
                } else if e1[u].site > e2[v].site {
                    v += 1;
                } else {
                    let l = e1[u].site;
                    let (a1, b1) = (e1[u].a as f64, e1[u].b as f64);
                    let (a2, b2) = (e2[v].a as f64, e2[v].b as f64);
                    let factor = sign * (b1 * a2 - a1 * b2);
                    if factor != 0.0 {
                        let (ma, mb) = merged.at(l);
                        let idx = merged.with_at(l, ma - 1, mb - 1);
                        out.add_term(idx, c1 * c2 * factor);
                    }
                    u += 1;
                    v += 1;
                }
            }
        }
    }
    out.prune();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::MultiIndex;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn q(site: u32) -> Polynomial {
        Polynomial::monomial(Basis::RealPq, site, 0, 1, c(1.0))
    }

    fn p(site: u32) -> Polynomial {
        Polynomial::monomial(Basis::RealPq, site, 1, 0, c(1.0))
    }

    #[test]
    fn canonical_pair() {
        // [q_1, p_1] = 1
        let b = poisson_bracket(&q(1), &p(1)).unwrap();
        assert_eq!(b.num_terms(), 1);
        assert!((b.coeff(&MultiIndex::unit()) - c(1.0)).norm() < 1e-15);
        // and antisymmetrically [p_1, q_1] = -1
        let b = poisson_bracket(&p(1), &q(1)).unwrap();
        assert!((b.coeff(&MultiIndex::unit()) + c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn disjoint_supports_commute() {
        let f = q(1).mul(&q(2));
        let g = p(5).mul(&p(6)).add(&q(5).scale_re(0.3));
        assert!(poisson_bracket(&f, &g).unwrap().is_zero());
    }

    #[test]
    fn h0_moves_q_to_minus_omega_p() {
        // [H_0, q_i] = -omega p_i with H_0 = sum omega (p^2 + q^2)/2
        let omega = 1.3;
        let mut h0 = Polynomial::zero(Basis::RealPq);
        for i in 1..=3 {
            h0.add_term(MultiIndex::single(i, 2, 0), c(omega / 2.0));
            h0.add_term(MultiIndex::single(i, 0, 2), c(omega / 2.0));
        }
        let b = poisson_bracket(&h0, &q(2)).unwrap();
        let expected = p(2).scale_re(-omega);
        assert!(b.rel_distance(&expected) < 1e-15);
    }

    #[test]
    fn basis_mismatch_rejected() {
        let f = q(1);
        let g = Polynomial::monomial(Basis::ComplexXiEta, 1, 1, 0, c(1.0));
        assert!(poisson_bracket(&f, &g).is_err());
    }

    #[test]
    fn degree_and_radius_postcondition() {
        let f = q(1).mul(&q(2)).mul(&p(2)); // degree 3, radius 1
        let g = p(2).mul(&p(3)).mul(&p(3)); // degree 3, radius 1
        let b = poisson_bracket(&f, &g).unwrap();
        let prof = b.profile();
        assert_eq!(prof.degree_max, 4);
        assert!(prof.radius <= 2);
    }
}

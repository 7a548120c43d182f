//! Change of variables between the real pair `(p, q)` and the complex pair
//! `(xi, eta)` that diagonalizes the homological operator:
//!
//! `q = (xi + i eta)/sqrt(2)`, `p = (i xi + eta)/sqrt(2)`,
//!
//! with inverse `xi = (q - i p)/sqrt(2)`, `eta = (p - i q)/sqrt(2)`.
//! The transformation is canonical with multiplier one, so Poisson brackets
//! commute with it and `L_0 xi^j eta^k = i omega (|k| - |j|) xi^j eta^k`.

use num_complex::Complex64;

use super::{binomial, Basis, MultiIndex, Polynomial, SiteExp};
use crate::error::CoreError;

fn ipow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// One site's expansion: the list of `(a', b', factor)` replacing `(a, b)`.
type SiteExpansion = Vec<(u8, u8, Complex64)>;

fn expand_term(
    idx: &MultiIndex,
    coeff: Complex64,
    site_rule: impl Fn(u8, u8) -> SiteExpansion,
    out: &mut Polynomial,
) {
    // partial expansions share the site prefix; sites arrive in order
    let mut acc: Vec<(Vec<SiteExp>, Complex64)> = vec![(Vec::new(), coeff)];
    for e in idx.entries() {
        let choices = site_rule(e.a, e.b);
        let mut next = Vec::with_capacity(acc.len() * choices.len());
        for (prefix, c) in &acc {
            for &(na, nb, f) in &choices {
                let mut v = prefix.clone();
                if na != 0 || nb != 0 {
                    v.push(SiteExp { site: e.site, a: na, b: nb });
                }
                next.push((v, c * f));
            }
        }
        acc = next;
    }
    for (entries, c) in acc {
        out.add_term(MultiIndex(entries), c);
    }
}

/// Rewrite a real-basis polynomial in the complex variables. Exact linear
/// substitution; degree and radius are preserved.
pub fn to_complex(f: &Polynomial) -> Result<Polynomial, CoreError> {
    if f.basis() != Basis::RealPq {
        return Err(CoreError::BasisMismatch {
            left: f.basis().to_string(),
            right: Basis::ComplexXiEta.to_string(),
        });
    }
    let mut out = Polynomial::zero(Basis::ComplexXiEta);
    for (idx, c) in f.terms() {
        expand_term(
            idx,
            *c,
            |a, b| {
                // p^a q^b -> sum over (i, j)
                let scale = 0.5f64.powf((a as f64 + b as f64) / 2.0);
                let mut v = Vec::with_capacity(((a + 1) as usize) * ((b + 1) as usize));
                for i in 0..=a {
                    for j in 0..=b {
                        let f = scale
                            * binomial(a as u32, i as u32)
                            * binomial(b as u32, j as u32);
                        let phase = ipow(i as u32 + (b - j) as u32);
                        v.push((i + j, (a - i) + (b - j), phase * f));
                    }
                }
                v
            },
            &mut out,
        );
    }
    out.prune();
    Ok(out)
}

/// Rewrite a complex-basis polynomial in the real variables.
pub fn to_real(f: &Polynomial) -> Result<Polynomial, CoreError> {
    if f.basis() != Basis::ComplexXiEta {
        return Err(CoreError::BasisMismatch {
            left: f.basis().to_string(),
            right: Basis::RealPq.to_string(),
        });
    }
    let mut out = Polynomial::zero(Basis::RealPq);
    for (idx, c) in f.terms() {
        expand_term(
            idx,
            *c,
            |a, b| {
                // xi^A eta^B -> sum over (u, v); (-i)^k = conj(i^k)
                let scale = 0.5f64.powf((a as f64 + b as f64) / 2.0);
                let mut v = Vec::with_capacity(((a + 1) as usize) * ((b + 1) as usize));
                for u in 0..=a {
                    for w in 0..=b {
                        let f = scale
                            * binomial(a as u32, u as u32)
                            * binomial(b as u32, w as u32);
                        let phase = ipow((a - u) as u32 + (b - w) as u32).conj();
                        v.push(((a - u) + w, u + (b - w), phase * f));
                    }
                }
                v
            },
            &mut out,
        );
    }
    out.prune();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::poisson_bracket;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn q1_maps_to_paper_formula() {
        // q_1 -> (xi_1 + i eta_1)/sqrt(2)
        let q1 = Polynomial::monomial(Basis::RealPq, 1, 0, 1, c(1.0, 0.0));
        let z = to_complex(&q1).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert!((z.coeff(&MultiIndex::single(1, 1, 0)) - c(s, 0.0)).norm() < 1e-15);
        assert!((z.coeff(&MultiIndex::single(1, 0, 1)) - c(0.0, s)).norm() < 1e-15);
    }

    #[test]
    fn roundtrip_is_identity() {
        // a messy mixed polynomial survives the round trip coefficient-wise
        let mut f = Polynomial::zero(Basis::RealPq);
        f.add_term(MultiIndex::single(1, 2, 1).mul(&MultiIndex::single(2, 0, 1)), c(0.7, 0.0));
        f.add_term(MultiIndex::single(3, 0, 4), c(-1.25, 0.0));
        f.add_term(MultiIndex::single(2, 1, 0), c(0.01, 0.0));
        f.add_term(MultiIndex::unit(), c(2.0, 0.0));
        let back = to_real(&to_complex(&f).unwrap()).unwrap();
        assert!(back.rel_distance(&f) < 1e-12);
    }

    #[test]
    fn single_site_h0_diagonalizes() {
        // omega (p^2 + q^2)/2 -> i omega xi eta
        let omega = 1.7;
        let mut h0 = Polynomial::zero(Basis::RealPq);
        h0.add_term(MultiIndex::single(1, 2, 0), c(omega / 2.0, 0.0));
        h0.add_term(MultiIndex::single(1, 0, 2), c(omega / 2.0, 0.0));
        let z = to_complex(&h0).unwrap();
        assert_eq!(z.num_terms(), 1);
        assert!((z.coeff(&MultiIndex::single(1, 1, 1)) - c(0.0, omega)).norm() < 1e-14);
    }

    #[test]
    fn transform_commutes_with_bracket() {
        // canonical with multiplier one: [f, g]' = [f', g']
        let f = Polynomial::from_terms(
            Basis::RealPq,
            [
                (MultiIndex::single(1, 1, 2), c(0.4, 0.0)),
                (MultiIndex::single(2, 0, 1).mul(&MultiIndex::single(3, 2, 0)), c(-1.0, 0.0)),
            ],
        );
        let g = Polynomial::from_terms(
            Basis::RealPq,
            [
                (MultiIndex::single(1, 1, 1).mul(&MultiIndex::single(2, 1, 0)), c(0.9, 0.0)),
                (MultiIndex::single(3, 0, 3), c(0.2, 0.0)),
            ],
        );
        let lhs = to_complex(&poisson_bracket(&f, &g).unwrap()).unwrap();
        let rhs = poisson_bracket(&to_complex(&f).unwrap(), &to_complex(&g).unwrap()).unwrap();
        assert!(lhs.rel_distance(&rhs) < 1e-12);
    }

    #[test]
    fn eval_consistency_at_random_points() {
        // f(p, q) equals f'(xi(p,q), eta(p,q)) pointwise
        let f = Polynomial::from_terms(
            Basis::RealPq,
            [
                (MultiIndex::single(1, 3, 1), c(1.0, 0.0)),
                (MultiIndex::single(1, 0, 2).mul(&MultiIndex::single(2, 2, 2)), c(-0.3, 0.0)),
            ],
        );
        let fz = to_complex(&f).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let pts = [[0.3, -1.1], [0.77, 0.12]];
        let q: Vec<Complex64> = pts.iter().map(|x| c(x[0], 0.0)).collect();
        let p: Vec<Complex64> = pts.iter().map(|x| c(x[1], 0.0)).collect();
        let i = c(0.0, 1.0);
        let xi: Vec<Complex64> = q.iter().zip(&p).map(|(&q, &p)| (q - i * p) * s).collect();
        let eta: Vec<Complex64> = q.iter().zip(&p).map(|(&q, &p)| (p - i * q) * s).collect();
        let lhs = f.eval(&p, &q);
        let rhs = fz.eval(&xi, &eta);
        assert!((lhs - rhs).norm() < 1e-12);
    }
}

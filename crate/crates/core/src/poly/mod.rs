//! Sparse polynomial algebra over lattice phase-space variables.
//!
//! Polynomials live on a 1-d chain of sites. Each site carries a canonical
//! pair: `(p_i, q_i)` in the real basis or `(xi_i, eta_i)` in the complex
//! basis that diagonalizes the harmonic part of the dynamics. A monomial is
//! stored as a sparse multi-index of per-site exponent pairs; exponent slot
//! `a` is the `p` (resp. `xi`) power and slot `b` the `q` (resp. `eta`)
//! power. Coefficients are complex doubles; anything below `PRUNE_ABS` in
//! magnitude is dropped so that equality of canonical forms is
//! representation equality.

mod basis;
mod bracket;
mod proj;
mod serial;

pub use basis::{to_complex, to_real};
pub use bracket::poisson_bracket;
pub use proj::{l0_apply, project_kernel, project_range, solve_homological};

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::CoreError;

/// Coefficients below this absolute magnitude are pruned on normalization.
pub const PRUNE_ABS: f64 = 1e-14;

/// Which canonical pair the exponent slots refer to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum Basis {
    /// `a` is the `p` exponent, `b` the `q` exponent.
    #[serde(rename = "pq")]
    RealPq,
    /// `a` is the `xi` exponent, `b` the `eta` exponent.
    #[serde(rename = "xieta")]
    ComplexXiEta,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::RealPq => write!(f, "pq"),
            Basis::ComplexXiEta => write!(f, "xieta"),
        }
    }
}

/// Exponent pair at one site. Sites are 1-based.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SiteExp {
    pub site: u32,
    pub a: u8,
    pub b: u8,
}

/// Sparse multi-site exponent vector: strictly increasing sites, no entry
/// with both exponents zero. The derived ordering (lexicographic on
/// `(site, a, b)` sequences) is the canonical term order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct MultiIndex(Vec<SiteExp>);

impl MultiIndex {
    /// The constant monomial.
    pub fn unit() -> Self {
        MultiIndex(Vec::new())
    }

    /// Build from arbitrary entries; merges duplicates and drops zeros.
    pub fn new(mut entries: Vec<SiteExp>) -> Self {
        entries.sort_by_key(|e| e.site);
        let mut out: Vec<SiteExp> = Vec::with_capacity(entries.len());
        for e in entries {
            match out.last_mut() {
                Some(last) if last.site == e.site => {
                    last.a += e.a;
                    last.b += e.b;
                }
                _ => out.push(e),
            }
        }
        out.retain(|e| e.a != 0 || e.b != 0);
        MultiIndex(out)
    }

    /// Single-variable monomial with `a`-slot exponent `a` and `b`-slot `b`.
    pub fn single(site: u32, a: u8, b: u8) -> Self {
        MultiIndex::new(vec![SiteExp { site, a, b }])
    }

    pub fn entries(&self) -> &[SiteExp] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|e| e.a as u32 + e.b as u32).sum()
    }

    /// Total `a`-slot degree (the `p` degree in the real basis).
    pub fn a_degree(&self) -> u32 {
        self.0.iter().map(|e| e.a as u32).sum()
    }

    /// Total `b`-slot degree.
    pub fn b_degree(&self) -> u32 {
        self.0.iter().map(|e| e.b as u32).sum()
    }

    /// Leftmost occupied site; `None` for the constant monomial.
    pub fn anchor(&self) -> Option<u32> {
        self.0.first().map(|e| e.site)
    }

    /// Site spread `max_site - min_site` (0 for single-site and constants).
    pub fn span(&self) -> u32 {
        match (self.0.first(), self.0.last()) {
            (Some(f), Some(l)) => l.site - f.site,
            _ => 0,
        }
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    /// Product of monomials: exponents add sitewise.
    pub fn mul(&self, other: &MultiIndex) -> MultiIndex {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (x, y) = (self.0[i], other.0[j]);
            if x.site < y.site {
                out.push(x);
                i += 1;
            } else if x.site > y.site {
                out.push(y);
                j += 1;
            } else {
                out.push(SiteExp { site: x.site, a: x.a + y.a, b: x.b + y.b });
                i += 1;
                j += 1;
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        MultiIndex(out)
    }

    /// Exponents at `site`, `(0, 0)` if unoccupied.
    pub fn at(&self, site: u32) -> (u8, u8) {
        match self.0.binary_search_by_key(&site, |e| e.site) {
            Ok(k) => (self.0[k].a, self.0[k].b),
            Err(_) => (0, 0),
        }
    }

    /// Replace the exponent pair at `site` (removing it if both are zero).
    fn with_at(&self, site: u32, a: u8, b: u8) -> MultiIndex {
        let mut v = self.0.clone();
        match v.binary_search_by_key(&site, |e| e.site) {
            Ok(k) => {
                if a == 0 && b == 0 {
                    v.remove(k);
                } else {
                    v[k] = SiteExp { site, a, b };
                }
            }
            Err(k) => {
                if a != 0 || b != 0 {
                    v.insert(k, SiteExp { site, a, b });
                }
            }
        }
        MultiIndex(v)
    }
}

/// A single term: coefficient, exponents and the basis tag.
#[derive(Clone, PartialEq, Debug)]
pub struct Monomial {
    pub coeff: Complex64,
    pub index: MultiIndex,
    pub basis: Basis,
}

/// Parity of a polynomial in the momenta.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

/// Degree/locality summary of a polynomial (see [`Polynomial::profile`]).
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
pub struct LocalityProfile {
    pub degree_min: u32,
    pub degree_max: u32,
    /// Max over terms of the site spread measured from the leftmost
    /// occupied site of each term.
    pub radius: u32,
    /// Parity in `p` (computed in the real basis).
    pub parity_p: Parity,
}

/// Sparse polynomial: canonical map from multi-index to coefficient.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    basis: Basis,
    terms: BTreeMap<MultiIndex, Complex64>,
}

impl Polynomial {
    pub fn zero(basis: Basis) -> Self {
        Polynomial { basis, terms: BTreeMap::new() }
    }

    pub fn from_terms<I>(basis: Basis, terms: I) -> Self
    where
        I: IntoIterator<Item = (MultiIndex, Complex64)>,
    {
        let mut p = Polynomial::zero(basis);
        for (idx, c) in terms {
            p.add_term(idx, c);
        }
        p.prune();
        p
    }

    /// Real-basis monomial `c * p^a q^b` at one site.
    pub fn monomial(basis: Basis, site: u32, a: u8, b: u8, c: Complex64) -> Self {
        Polynomial::from_terms(basis, [(MultiIndex::single(site, a, b), c)])
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, idx: &MultiIndex) -> Complex64 {
        self.terms.get(idx).copied().unwrap_or_default()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Accumulate one term without pruning.
    pub fn add_term(&mut self, idx: MultiIndex, c: Complex64) {
        let slot = self.terms.entry(idx).or_insert(Complex64::default());
        *slot += c;
    }

    /// Drop coefficients below the canonical absolute threshold.
    pub fn prune(&mut self) {
        self.terms.retain(|_, c| c.norm() > PRUNE_ABS);
    }

    pub fn scale(&self, s: Complex64) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn scale_re(&self, s: f64) -> Polynomial {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.basis, other.basis, "basis mismatch in add");
        let mut out = self.clone();
        for (idx, c) in &other.terms {
            out.add_term(idx.clone(), *c);
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale_re(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.basis, other.basis, "basis mismatch in mul");
        let mut out = Polynomial::zero(self.basis);
        for (i1, c1) in &self.terms {
            for (i2, c2) in &other.terms {
                out.add_term(i1.mul(i2), c1 * c2);
            }
        }
        out.prune();
        out
    }

    /// Locality-aware surrogate norm: every monomial is anchored at its
    /// leftmost occupied site and the norm is the max over anchor sites of
    /// the summed coefficient magnitudes. Upper-bounds the min-over-
    /// decompositions norm. Constant terms are booked on a pseudo-anchor.
    pub fn plus_norm(&self) -> f64 {
        let mut per_anchor: BTreeMap<u32, f64> = BTreeMap::new();
        for (idx, c) in &self.terms {
            let anchor = idx.anchor().unwrap_or(0);
            *per_anchor.entry(anchor).or_insert(0.0) += c.norm();
        }
        per_anchor.values().copied().fold(0.0, f64::max)
    }

    /// Exact degree/radius/parity report. For the complex basis the
    /// `p`-parity is read off after conversion to the real basis.
    pub fn profile(&self) -> LocalityProfile {
        if self.is_zero() {
            return LocalityProfile {
                degree_min: 0,
                degree_max: 0,
                radius: 0,
                parity_p: Parity::Even,
            };
        }
        let mut degree_min = u32::MAX;
        let mut degree_max = 0;
        let mut radius = 0;
        for idx in self.terms.keys() {
            let d = idx.degree();
            degree_min = degree_min.min(d);
            degree_max = degree_max.max(d);
            radius = radius.max(idx.span());
        }
        let real = match self.basis {
            Basis::RealPq => None,
            Basis::ComplexXiEta => Some(to_real(self).expect("complex input")),
        };
        let real_ref = real.as_ref().unwrap_or(self);
        let mut seen_even = false;
        let mut seen_odd = false;
        for idx in real_ref.terms.keys() {
            if idx.a_degree() % 2 == 0 {
                seen_even = true;
            } else {
                seen_odd = true;
            }
        }
        let parity_p = match (seen_even, seen_odd) {
            (true, false) => Parity::Even,
            (false, true) => Parity::Odd,
            _ => Parity::Mixed,
        };
        LocalityProfile { degree_min, degree_max, radius, parity_p }
    }

    /// Keep only terms of the given total degree.
    pub fn degree_part(&self, degree: u32) -> Polynomial {
        Polynomial {
            basis: self.basis,
            terms: self
                .terms
                .iter()
                .filter(|(idx, _)| idx.degree() == degree)
                .map(|(idx, c)| (idx.clone(), *c))
                .collect(),
        }
    }

    /// Distinct total degrees present.
    pub fn degrees(&self) -> Vec<u32> {
        let mut ds: Vec<u32> = self.terms.keys().map(|i| i.degree()).collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }

    /// Direct evaluation; `x[i]` and `y[i]` are the slot-`a` and slot-`b`
    /// variables at site `i + 1` (so `x = p`, `y = q` in the real basis).
    pub fn eval(&self, x: &[Complex64], y: &[Complex64]) -> Complex64 {
        let mut total = Complex64::default();
        for (idx, c) in &self.terms {
            let mut prod = *c;
            for e in idx.entries() {
                let k = (e.site - 1) as usize;
                prod *= x[k].powu(e.a as u32) * y[k].powu(e.b as u32);
            }
            total += prod;
        }
        total
    }

    /// Real-basis evaluation on a phase-space point.
    pub fn eval_real(&self, q: &[f64], p: &[f64]) -> Complex64 {
        assert_eq!(self.basis, Basis::RealPq);
        let x: Vec<Complex64> = p.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let y: Vec<Complex64> = q.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.eval(&x, &y)
    }

    /// `max |a - b|` over all indices, scaled by `max(1, coefficient scale)`.
    pub fn rel_distance(&self, other: &Polynomial) -> f64 {
        assert_eq!(self.basis, other.basis, "basis mismatch in rel_distance");
        let scale = self.max_abs_coeff().max(other.max_abs_coeff());
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for idx in self.terms.keys().chain(other.terms.keys()) {
            let d = (self.coeff(idx) - other.coeff(idx)).norm();
            worst = worst.max(d);
        }
        worst / scale
    }

    pub(crate) fn check_same_basis(&self, other: &Polynomial) -> Result<(), CoreError> {
        if self.basis != other.basis {
            return Err(CoreError::BasisMismatch {
                left: self.basis.to_string(),
                right: other.basis.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let (va, vb) = match self.basis {
            Basis::RealPq => ("p", "q"),
            Basis::ComplexXiEta => ("xi", "eta"),
        };
        let mut first = true;
        for (idx, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6e}{:+.6e}i)", c.re, c.im)?;
            for e in idx.entries() {
                if e.a > 0 {
                    write!(f, " {}{}^{}", va, e.site, e.a)?;
                }
                if e.b > 0 {
                    write!(f, " {}{}^{}", vb, e.site, e.b)?;
                }
            }
        }
        Ok(())
    }
}

/// Binomial coefficient as f64 (exact for the small arguments used here).
pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn multi_index_normalizes() {
        let idx = MultiIndex::new(vec![
            SiteExp { site: 3, a: 1, b: 0 },
            SiteExp { site: 1, a: 0, b: 2 },
            SiteExp { site: 3, a: 0, b: 1 },
            SiteExp { site: 2, a: 0, b: 0 },
        ]);
        assert_eq!(
            idx.entries(),
            &[SiteExp { site: 1, a: 0, b: 2 }, SiteExp { site: 3, a: 1, b: 1 }]
        );
        assert_eq!(idx.degree(), 4);
        assert_eq!(idx.span(), 2);
        assert_eq!(idx.anchor(), Some(1));
    }

    #[test]
    fn mul_merges_sites() {
        let a = MultiIndex::single(2, 1, 0);
        let b = MultiIndex::single(2, 0, 3).mul(&MultiIndex::single(4, 1, 0));
        let ab = a.mul(&b);
        assert_eq!(ab.at(2), (1, 3));
        assert_eq!(ab.at(4), (1, 0));
        assert_eq!(ab.degree(), 5);
    }

    #[test]
    fn plus_norm_single_monomial() {
        // 3 p_1 q_2 -> 3
        let p = Polynomial::from_terms(
            Basis::RealPq,
            [(MultiIndex::single(1, 1, 0).mul(&MultiIndex::single(2, 0, 1)), c(3.0))],
        );
        assert_eq!(p.plus_norm(), 3.0);
    }

    #[test]
    fn profile_examples() {
        // p_1 p_2 -> degree 2, radius 1, even
        let p = Polynomial::from_terms(
            Basis::RealPq,
            [(MultiIndex::single(1, 1, 0).mul(&MultiIndex::single(2, 1, 0)), c(1.0))],
        );
        let prof = p.profile();
        assert_eq!((prof.degree_min, prof.degree_max), (2, 2));
        assert_eq!(prof.radius, 1);
        assert_eq!(prof.parity_p, Parity::Even);

        // q_1^3 p_2 -> degree 4, radius 1, odd
        let p = Polynomial::from_terms(
            Basis::RealPq,
            [(MultiIndex::single(1, 0, 3).mul(&MultiIndex::single(2, 1, 0)), c(1.0))],
        );
        let prof = p.profile();
        assert_eq!((prof.degree_min, prof.degree_max), (4, 4));
        assert_eq!(prof.radius, 1);
        assert_eq!(prof.parity_p, Parity::Odd);
    }

    #[test]
    fn pruning_drops_dust() {
        let mut p = Polynomial::zero(Basis::RealPq);
        p.add_term(MultiIndex::single(1, 0, 1), c(1.0));
        p.add_term(MultiIndex::single(1, 0, 1), c(-1.0 + 1e-16));
        p.prune();
        assert!(p.is_zero());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(10, 0), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
    }
}

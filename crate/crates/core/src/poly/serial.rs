//! JSON form of a polynomial: `{"basis": "pq"|"xieta", "terms": [...]}` with
//! one `{"sites": [...], "a": [...], "b": [...], "re": .., "im": ..}` object
//! per term. Floats use shortest round-trip formatting, so serialize ->
//! deserialize is bit-stable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Basis, MultiIndex, Polynomial, SiteExp};

#[derive(Serialize, Deserialize)]
struct TermRepr {
    sites: Vec<u32>,
    a: Vec<u8>,
    b: Vec<u8>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    basis: Basis,
    terms: Vec<TermRepr>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let terms = self
            .terms()
            .map(|(idx, c)| TermRepr {
                sites: idx.entries().iter().map(|e| e.site).collect(),
                a: idx.entries().iter().map(|e| e.a).collect(),
                b: idx.entries().iter().map(|e| e.b).collect(),
                re: c.re,
                im: c.im,
            })
            .collect();
        PolyRepr { basis: self.basis(), terms }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PolyRepr::deserialize(deserializer)?;
        let mut out = Polynomial::zero(repr.basis);
        for t in repr.terms {
            if t.sites.len() != t.a.len() || t.sites.len() != t.b.len() {
                return Err(serde::de::Error::custom("sites/a/b length mismatch"));
            }
            let entries = t
                .sites
                .iter()
                .zip(t.a.iter().zip(t.b.iter()))
                .map(|(&site, (&a, &b))| SiteExp { site, a, b })
                .collect();
            out.add_term(MultiIndex::new(entries), Complex64::new(t.re, t.im));
        }
        Ok(out)
    }
}

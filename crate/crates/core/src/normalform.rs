//! Order-by-order construction of the formal integral `T_chi H_0` for the
//! Klein-Gordon chain and the truncated invariant `X_n` built from it.
//!
//! The generating sequence `chi_s` solves the homological ladder
//! `Theta_s - L_0 chi_s = Psi_s` with `Theta_s` in the kernel and `chi_s`
//! in the range of `L_0`; `Psi_1 = H_1` and for `s >= 2`
//!
//! `Psi_s = - sum_{l<s} (l/s) [chi_l, (T_chi H_0)_{s-l}]
//!          - sum_{l<s} (T_chi Theta_l)_{s-l}`,
//!
//! where `(T_chi f)_s = sum_{j<=s} (j/s) [chi_j, (T_chi f)_{s-j}]`. The
//! truncation `Y_n = H_0 + sum P_j` with `P_j = (T_chi H_0)_j` yields
//! `X_n = Y_n - H` and the exact identity `[X_n, H] = [P_n, H_1]`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::CoreError;
use crate::poly::{
    binomial, l0_apply, poisson_bracket, project_kernel, project_range, solve_homological,
    to_complex, to_real, Basis, MultiIndex, Parity, Polynomial,
};

/// Boundary mode. The symbolic construction is always on the open chain;
/// the periodic variant only drives the transfer-operator oracle.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Model parameters `(N, eps, beta)` with the derived frequency cached.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ModelParams {
    pub n_sites: usize,
    pub eps: f64,
    pub beta: f64,
    /// `omega = sqrt(1 + 2 eps)`.
    omega: f64,
    pub boundary: Boundary,
}

impl ModelParams {
    pub fn new(n_sites: usize, eps: f64, beta: f64, boundary: Boundary) -> Result<Self, CoreError> {
        if n_sites < 2 {
            return Err(CoreError::InvalidParam {
                field: "n_sites",
                reason: format!("need at least 2 sites, got {n_sites}"),
            });
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(CoreError::InvalidParam {
                field: "eps",
                reason: format!("must be finite and >= 0, got {eps}"),
            });
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CoreError::InvalidParam {
                field: "beta",
                reason: format!("must be finite and > 0, got {beta}"),
            });
        }
        Ok(ModelParams { n_sites, eps, beta, omega: (1.0 + 2.0 * eps).sqrt(), boundary })
    }

    pub fn open(n_sites: usize, eps: f64, beta: f64) -> Result<Self, CoreError> {
        ModelParams::new(n_sites, eps, beta, Boundary::Open)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
}

/// `H_0 = sum_i omega (p_i^2 + q_i^2)/2` and
/// `H_1 = eps sum_{i<N} q_i q_{i+1}/omega + sum_i q_i^4/(4 omega^2)`,
/// open-chain couplings, real basis.
pub fn build_hamiltonian(params: &ModelParams) -> (Polynomial, Polynomial) {
    let n = params.n_sites as u32;
    let w = params.omega();
    let mut h0 = Polynomial::zero(Basis::RealPq);
    let mut h1 = Polynomial::zero(Basis::RealPq);
    for i in 1..=n {
        h0.add_term(MultiIndex::single(i, 2, 0), Complex64::new(w / 2.0, 0.0));
        h0.add_term(MultiIndex::single(i, 0, 2), Complex64::new(w / 2.0, 0.0));
        h1.add_term(MultiIndex::single(i, 0, 4), Complex64::new(0.25 / (w * w), 0.0));
        if i < n && params.eps != 0.0 {
            h1.add_term(
                MultiIndex::single(i, 0, 1).mul(&MultiIndex::single(i + 1, 0, 1)),
                Complex64::new(params.eps / w, 0.0),
            );
        }
    }
    (h0, h1)
}

/// Default cap on the term count of any ladder polynomial.
pub const DEFAULT_TERM_CAP: usize = 2_000_000;

/// The ladder `chi_s / Theta_s / Psi_s` together with the memoized
/// `T_chi` rows it was built from. All ladder members live in the complex
/// basis; the cached `P_j` are converted to the real basis.
pub struct NormalFormState {
    params: ModelParams,
    term_cap: usize,
    h1_real: Polynomial,
    chi: Vec<Polynomial>,
    theta: Vec<Polynomial>,
    psi: Vec<Polynomial>,
    /// `t_h0[s] = (T_chi H_0)_s`; `t_h0[0] = H_0`.
    t_h0: Vec<Polynomial>,
    /// `t_theta[l - 1][m] = (T_chi Theta_l)_m`; rows grow lazily.
    t_theta: Vec<Vec<Polynomial>>,
    /// `P_j` in the real basis; `p_real[j - 1]`.
    p_real: Vec<Polynomial>,
}

impl NormalFormState {
    pub fn new(params: ModelParams) -> Self {
        NormalFormState::with_term_cap(params, DEFAULT_TERM_CAP)
    }

    pub fn with_term_cap(params: ModelParams, term_cap: usize) -> Self {
        let (h0, h1) = build_hamiltonian(&params);
        let h0_z = to_complex(&h0).expect("real input");
        NormalFormState {
            params,
            term_cap,
            h1_real: h1,
            chi: Vec::new(),
            theta: Vec::new(),
            psi: Vec::new(),
            t_h0: vec![h0_z],
            t_theta: Vec::new(),
            p_real: Vec::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Highest order the ladder has reached.
    pub fn order(&self) -> usize {
        self.chi.len()
    }

    pub fn chi(&self, s: usize) -> &Polynomial {
        &self.chi[s - 1]
    }

    pub fn theta(&self, s: usize) -> &Polynomial {
        &self.theta[s - 1]
    }

    pub fn psi(&self, s: usize) -> &Polynomial {
        &self.psi[s - 1]
    }

    /// `P_j = (T_chi H_0)_j` in the real basis.
    pub fn p_term(&self, j: usize) -> &Polynomial {
        &self.p_real[j - 1]
    }

    pub fn h1_real(&self) -> &Polynomial {
        &self.h1_real
    }

    fn guard(&self, f: &Polynomial, order: usize) -> Result<(), CoreError> {
        if f.num_terms() > self.term_cap {
            return Err(CoreError::TermCapExceeded {
                count: f.num_terms(),
                cap: self.term_cap,
                order,
            });
        }
        Ok(())
    }

    /// `(T_chi f)_m` rows for `f = Theta_l`, extended on demand.
    fn t_theta_row(&mut self, l: usize, m: usize) -> Result<(), CoreError> {
        while self.t_theta[l - 1].len() <= m {
            let s = self.t_theta[l - 1].len();
            let mut acc = Polynomial::zero(Basis::ComplexXiEta);
            for j in 1..=s {
                let b = poisson_bracket(&self.chi[j - 1], &self.t_theta[l - 1][s - j])?;
                acc = acc.add(&b.scale_re(j as f64 / s as f64));
            }
            self.guard(&acc, s)?;
            self.t_theta[l - 1].push(acc);
        }
        Ok(())
    }

    /// Compute the next ladder order. Returns the order just completed.
    pub fn advance_order(&mut self) -> Result<usize, CoreError> {
        let s = self.order() + 1;
        let psi = if s == 1 {
            to_complex(&self.h1_real).expect("real input")
        } else {
            let mut acc = Polynomial::zero(Basis::ComplexXiEta);
            for l in 1..=s - 1 {
                let b = poisson_bracket(&self.chi[l - 1], &self.t_h0[s - l])?;
                acc = acc.add(&b.scale_re(-(l as f64) / s as f64));
                self.t_theta_row(l, s - l)?;
                acc = acc.sub(&self.t_theta[l - 1][s - l]);
            }
            acc
        };
        self.guard(&psi, s)?;

        let omega = self.params.omega();
        let chi = solve_homological(&project_range(&psi)?, omega)?.scale_re(-1.0);
        let theta = project_kernel(&psi)?;
        self.guard(&chi, s)?;

        self.chi.push(chi);
        self.theta.push(theta);
        self.psi.push(psi);
        self.t_theta.push(vec![self.theta[s - 1].clone()]);

        // (T_chi H_0)_s needs chi_s, so it comes last
        let mut th0 = Polynomial::zero(Basis::ComplexXiEta);
        for j in 1..=s {
            let b = poisson_bracket(&self.chi[j - 1], &self.t_h0[s - j])?;
            th0 = th0.add(&b.scale_re(j as f64 / s as f64));
        }
        self.guard(&th0, s)?;
        self.p_real.push(to_real(&th0)?);
        self.t_h0.push(th0);
        Ok(s)
    }

    /// Residual of `Theta_s - L_0 chi_s = Psi_s` with `L_0` applied through
    /// its diagonal action (relative, coefficient-wise).
    pub fn ladder_residual(&self, s: usize) -> f64 {
        let lhs = self
            .theta(s)
            .sub(&l0_apply(self.chi(s), self.params.omega()).expect("complex input"));
        lhs.rel_distance(self.psi(s))
    }
}

/// Truncated invariant `X_n = Y_n - H` and its exact time derivative.
#[derive(Clone, Serialize)]
pub struct TruncatedInvariant {
    pub n: usize,
    /// `X_n` in the real basis.
    pub xn: Polynomial,
    /// `dX_n/dt = [P_n, H_1]`, real basis.
    pub xn_dot: Polynomial,
    pub report: StructureReport,
}

/// Run the ladder through order `n` and assemble `X_n` and `dX_n/dt`.
pub fn build_invariant(state: &mut NormalFormState, n: usize) -> Result<TruncatedInvariant, CoreError> {
    assert!(n >= 1, "truncation order must be at least 1");
    while state.order() < n {
        state.advance_order()?;
    }
    let theta1 = to_real(state.theta(1))?;
    let mut xn = theta1.scale_re(-1.0);
    for j in 2..=n {
        xn = xn.add(state.p_term(j));
    }
    let xn_dot = poisson_bracket(state.p_term(n), state.h1_real())?;
    let report = verify_structure(state.params(), n, state.p_term(n), &xn_dot);
    Ok(TruncatedInvariant { n, xn, xn_dot, report })
}

/// One row of the structural report: a fixed-degree slice of `P_n` or of
/// `dX_n/dt` checked against the locality/parity/norm claims.
#[derive(Clone, Debug, Serialize)]
pub struct StructureEntry {
    pub target: String,
    pub degree: u32,
    pub l: u32,
    pub radius: u32,
    pub radius_bound: u32,
    pub radius_ok: bool,
    pub parity: Parity,
    pub parity_ok: bool,
    /// `plus_norm(slice) / (binom * eps^power)`, i.e. the surrogate norm of
    /// the normalized component this slice represents.
    pub component_norm: f64,
    pub norm_bound: f64,
    pub norm_ok: bool,
    /// `norm_bound / component_norm` (infinite when the slice vanishes).
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub n: usize,
    pub eps: f64,
    pub entries: Vec<StructureEntry>,
    pub all_ok: bool,
}

fn structure_entries(
    target: &str,
    poly: &Polynomial,
    order: usize, // n for P_n, n+1 for dX_n
    eps: f64,
    bound: f64,
    want_parity: Parity,
    entries: &mut Vec<StructureEntry>,
) {
    for degree in poly.degrees() {
        let slice = poly.degree_part(degree);
        let prof = slice.profile();
        // every slice must sit at an even degree 2l+2 with l <= order
        let l = if degree >= 2 && degree % 2 == 0 { (degree - 2) / 2 } else { u32::MAX };
        let l_ok = l != u32::MAX && l as usize <= order;
        let radius_bound = if l_ok { order as u32 - l } else { 0 };
        let radius_ok = l_ok && prof.radius <= radius_bound;
        let parity_ok = l_ok && prof.parity_p == want_parity;
        let power = if l_ok { (order as u32 - l) as i32 } else { 0 };
        let scale = binomial(order as u32, l.min(order as u32)) * eps.powi(power);
        let component_norm = if scale > 0.0 { slice.plus_norm() / scale } else { f64::INFINITY };
        let norm_ok = component_norm <= bound;
        let margin = if component_norm > 0.0 { bound / component_norm } else { f64::INFINITY };
        entries.push(StructureEntry {
            target: target.to_string(),
            degree,
            l: if l_ok { l } else { 0 },
            radius: prof.radius,
            radius_bound,
            radius_ok,
            parity: prof.parity_p,
            parity_ok,
            component_norm,
            norm_bound: bound,
            norm_ok,
            margin,
        });
    }
}

/// `D_n = 2^{12n} (n!)^3`.
pub fn norm_bound_p(n: usize) -> f64 {
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    2f64.powi(12 * n as i32) * fact.powi(3)
}

/// `C_n = 48 * 2^{12n} n! ((n+1)!)^2`.
pub fn norm_bound_xdot(n: usize) -> f64 {
    let fact_n: f64 = (1..=n).map(|k| k as f64).product();
    let fact_n1 = fact_n * (n + 1) as f64;
    48.0 * 2f64.powi(12 * n as i32) * fact_n * fact_n1 * fact_n1
}

/// Split `P_n` and `dX_n/dt` by degree into the `(l, order - l)`
/// components and check radius, parity and surrogate-norm bounds.
pub fn verify_structure(
    params: &ModelParams,
    n: usize,
    p_n: &Polynomial,
    xn_dot: &Polynomial,
) -> StructureReport {
    let mut entries = Vec::new();
    structure_entries("P_n", p_n, n, params.eps, norm_bound_p(n), Parity::Even, &mut entries);
    structure_entries(
        "Xn_dot",
        xn_dot,
        n + 1,
        params.eps,
        norm_bound_xdot(n),
        Parity::Odd,
        &mut entries,
    );
    let all_ok = entries.iter().all(|e| e.radius_ok && e.parity_ok && e.norm_ok);
    StructureReport { n, eps: params.eps, entries, all_ok }
}

/// Stability-time scale `exp[(kappa (eps + 1/beta))^{-1/4}]`.
pub fn tbar(kappa: f64, params: &ModelParams) -> f64 {
    assert!(kappa > 0.0, "kappa must be positive");
    let x = kappa * (params.eps + 1.0 / params.beta);
    x.powf(-0.25).exp()
}

//! Numeric evaluation of the chain Hamiltonian
//! `H = sum_i omega (p_i^2 + q_i^2)/2 + eps sum q_i q_{i+1}/omega
//!      + sum q_i^4/(4 omega^2)`
//! shared by the sampler and the integrator. The open chain drops the
//! missing neighbors at the ends; the periodic variant (oracle only) adds
//! the wrap bond.

use crate::normalform::{Boundary, ModelParams};

/// On-site potential `V(x) = omega x^2/2 + x^4/(4 omega^2)`.
pub fn onsite_potential(params: &ModelParams, x: f64) -> f64 {
    let w = params.omega();
    0.5 * w * x * x + x.powi(4) / (4.0 * w * w)
}

/// `V'(x) = omega x + x^3/omega^2`.
pub fn onsite_potential_d(params: &ModelParams, x: f64) -> f64 {
    let w = params.omega();
    w * x + x.powi(3) / (w * w)
}

/// Configurational energy `U_N(q)`.
pub fn potential_energy(params: &ModelParams, q: &[f64]) -> f64 {
    let w = params.omega();
    let n = q.len();
    let mut u: f64 = q.iter().map(|&x| onsite_potential(params, x)).sum();
    for i in 0..n - 1 {
        u += params.eps * q[i] * q[i + 1] / w;
    }
    if params.boundary == Boundary::Periodic && n > 2 {
        u += params.eps * q[n - 1] * q[0] / w;
    }
    u
}

pub fn kinetic_energy(params: &ModelParams, p: &[f64]) -> f64 {
    let w = params.omega();
    0.5 * w * p.iter().map(|&x| x * x).sum::<f64>()
}

pub fn total_energy(params: &ModelParams, q: &[f64], p: &[f64]) -> f64 {
    kinetic_energy(params, p) + potential_energy(params, q)
}

/// `F_i = -[omega q_i + q_i^3/omega^2 + (eps/omega)(q_{i-1} + q_{i+1})]`,
/// missing neighbors dropped at open ends. When `quartic` is false the
/// cubic part of the force is omitted (integrator verification mode).
pub fn forces(params: &ModelParams, q: &[f64], quartic: bool, out: &mut [f64]) {
    let w = params.omega();
    let ew = params.eps / w;
    let n = q.len();
    for i in 0..n {
        let mut f = -w * q[i];
        if quartic {
            f -= q[i] * q[i] * q[i] / (w * w);
        }
        if i > 0 {
            f -= ew * q[i - 1];
        }
        if i + 1 < n {
            f -= ew * q[i + 1];
        }
        if params.boundary == Boundary::Periodic && n > 2 {
            if i == 0 {
                f -= ew * q[n - 1];
            }
            if i == n - 1 {
                f -= ew * q[0];
            }
        }
        out[i] = f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalform::build_hamiltonian;

    #[test]
    fn numeric_energy_matches_symbolic_hamiltonian() {
        let params = ModelParams::open(5, 0.07, 3.0).unwrap();
        let (h0, h1) = build_hamiltonian(&params);
        let h = h0.add(&h1);
        let q = [0.3, -0.8, 0.11, 0.0, 1.4];
        let p = [-0.2, 0.5, 0.9, -1.0, 0.05];
        let sym = h.eval_real(&q, &p).re;
        let num = total_energy(&params, &q, &p);
        assert!((sym - num).abs() < 1e-12 * num.abs().max(1.0));
    }

    #[test]
    fn force_is_minus_gradient() {
        let params = ModelParams::open(4, 0.05, 2.0).unwrap();
        let q = [0.4, -0.3, 0.9, 0.1];
        let mut f = [0.0; 4];
        forces(&params, &q, true, &mut f);
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = -(potential_energy(&params, &qp) - potential_energy(&params, &qm)) / (2.0 * h);
            assert!((f[i] - fd).abs() < 1e-8, "site {i}: {} vs {}", f[i], fd);
        }
    }
}

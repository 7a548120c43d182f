//! Hamiltonian dynamics: velocity-Verlet integration of the chain, ensemble
//! time-autocorrelation curves, and the a-priori bounds they must satisfy
//! (`C_X(t) >= 1 - eta^2 t^2/2` with `eta = ||[X,H]||/sigma_X`, the
//! displacement inequality, and the relaxation-time lower bound
//! `t(a) >= sqrt(2(1-a))/eta`).
//!
//! Autocorrelations are ensemble averages over many short trajectories
//! started from equilibrium samples, matching the measure-theoretic
//! definition without any ergodicity assumption.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CoreError;
use crate::estimators::{CompiledObservable, MCEstimate};
use crate::gibbs::{ChainState, SampleSet};
use crate::model::{forces, total_energy};
use crate::normalform::ModelParams;

/// Relative energy deviation beyond which a trajectory is rejected.
pub const ENERGY_DRIFT_LIMIT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Ensemble size for autocorrelation runs.
    pub ensemble: usize,
    /// Record every `thin`-th step in [`integrate`].
    pub thin: usize,
    pub seed: u64,
}

impl IntegratorConfig {
    /// Default step `0.01/omega`, the scale validated by the drift guard.
    pub fn with_default_dt(params: &ModelParams, t_max: f64, ensemble: usize, seed: u64) -> Self {
        IntegratorConfig { dt: 0.01 / params.omega(), t_max, ensemble, thin: 10, seed }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<(), CoreError> {
        if !(self.dt > 0.0) || self.dt > 0.1 / params.omega() {
            return Err(CoreError::InvalidParam {
                field: "dt",
                reason: format!("dt must be in (0, 0.1/omega]; got {}", self.dt),
            });
        }
        if !(self.t_max > 0.0) {
            return Err(CoreError::InvalidParam {
                field: "t_max",
                reason: "t_max must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One velocity-Verlet step (kick-drift-kick) for the splitting
/// `H = sum omega p^2/2 + U(q)`: `qdot = omega p`, `pdot = F(q)`.
/// `f` must hold the forces at `q` on entry and holds those at the new `q`
/// on exit. `quartic = false` drops the cubic force (verification mode).
pub fn vv_step(params: &ModelParams, q: &mut [f64], p: &mut [f64], f: &mut [f64], dt: f64, quartic: bool) {
    let w = params.omega();
    for i in 0..q.len() {
        p[i] += 0.5 * dt * f[i];
    }
    for i in 0..q.len() {
        q[i] += dt * w * p[i];
    }
    forces(params, q, quartic, f);
    for i in 0..q.len() {
        p[i] += 0.5 * dt * f[i];
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ChainState>,
    /// Max relative energy deviation observed at recorded points.
    pub energy_drift: f64,
}

/// Integrate one trajectory, recording every `thin`-th step. Fails when the
/// relative energy deviation exceeds [`ENERGY_DRIFT_LIMIT`].
pub fn integrate(
    state: &ChainState,
    params: &ModelParams,
    config: &IntegratorConfig,
    quartic: bool,
) -> Result<Trajectory, CoreError> {
    config.validate(params)?;
    let n = state.q.len();
    let (mut q, mut p) = (state.q.clone(), state.p.clone());
    let mut f = vec![0.0; n];
    forces(params, &q, quartic, &mut f);
    // with the quartic force disabled the conserved quantity drops the
    // quartic potential as well
    let energy = |q: &[f64], p: &[f64]| -> f64 {
        if quartic {
            total_energy(params, q, p)
        } else {
            let w = params.omega();
            let mut e = crate::model::kinetic_energy(params, p);
            for &x in q {
                e += 0.5 * w * x * x;
            }
            for i in 0..q.len() - 1 {
                e += params.eps * q[i] * q[i + 1] / w;
            }
            e
        }
    };
    let e0 = energy(&q, &p);
    let steps = (config.t_max / config.dt).round() as usize;
    let mut times = vec![0.0];
    let mut states = vec![state.clone()];
    let mut drift: f64 = 0.0;
    for s in 1..=steps {
        vv_step(params, &mut q, &mut p, &mut f, config.dt, quartic);
        if s % config.thin == 0 || s == steps {
            drift = drift.max(((energy(&q, &p) - e0) / e0).abs());
            times.push(s as f64 * config.dt);
            states.push(ChainState { q: q.clone(), p: p.clone(), sweep: s as u64 });
        }
    }
    if drift > ENERGY_DRIFT_LIMIT {
        return Err(CoreError::EnergyDrift { drift, limit: ENERGY_DRIFT_LIMIT });
    }
    Ok(Trajectory { times, states, energy_drift: drift })
}

/// Jacobian determinant of one velocity-Verlet step at `(q, p)`: the
/// analytic tangent map assembled from its three shears (kick, drift,
/// kick), whose determinant a symplectic map keeps at exactly one.
pub fn step_tangent_det(params: &ModelParams, q: &[f64], p: &[f64], dt: f64) -> f64 {
    let n = q.len();
    let w = params.omega();
    let force_jac = |q: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            j[(i, i)] = -(w + 3.0 * q[i] * q[i] / (w * w));
            if i > 0 {
                j[(i, i - 1)] = -params.eps / w;
            }
            if i + 1 < n {
                j[(i, i + 1)] = -params.eps / w;
            }
        }
        j
    };
    // state ordering (q, p); kick: p += dt/2 F(q); drift: q += dt w p
    let id = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let block = |tr: &DMatrix<f64>, bl: &DMatrix<f64>| {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&id);
        m.view_mut((0, n), (n, n)).copy_from(tr);
        m.view_mut((n, 0), (n, n)).copy_from(bl);
        m.view_mut((n, n), (n, n)).copy_from(&id);
        m
    };
    let a1 = force_jac(q);
    // the second kick is evaluated at the drifted position
    let mut q_drift = q.to_vec();
    let mut f = vec![0.0; n];
    forces(params, q, true, &mut f);
    for i in 0..n {
        let p_half = p[i] + 0.5 * dt * f[i];
        q_drift[i] += dt * w * p_half;
    }
    let a2 = force_jac(&q_drift);
    let jac = block(&zero, &(0.5 * dt * &a2)) * block(&(dt * w * &id), &zero) * block(&zero, &(0.5 * dt * &a1));
    jac.determinant()
}

/// Ensemble autocorrelation data for one observable.
#[derive(Clone, Debug, Serialize)]
pub struct CorrCurve {
    pub times: Vec<f64>,
    pub c: Vec<f64>,
    pub se: Vec<f64>,
    /// `1 - eta^2 t^2 / 2` when an eta has been attached.
    pub reference: Option<Vec<f64>>,
    /// Empirical `P(|X_t - X_0| >= lambda sigma_X)` per grid time with
    /// binomial errors, for the displacement inequality.
    pub displacement_lambda: f64,
    pub displacement_p: Vec<f64>,
    pub displacement_se: Vec<f64>,
    pub ensemble: usize,
}

/// Logarithmic time grid in units of steps: strictly increasing step
/// multiples from `t_min` to `t_max`, `points` entries, starting at 0.
fn log_step_grid(dt: f64, t_max: f64, points: usize) -> Vec<usize> {
    let total_steps = (t_max / dt).round() as usize;
    let t_min_steps = 5.max(total_steps / 10_000);
    let mut grid = vec![0usize];
    let lo = (t_min_steps as f64).ln();
    let hi = (total_steps as f64).ln();
    for k in 0..points {
        let f = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let s = f.exp().round() as usize;
        if *grid.last().unwrap() < s {
            grid.push(s);
        }
    }
    grid
}

/// Ensemble autocorrelation `C_X(t) = (<X_t X> - <X>^2)/sigma_X^2` on a
/// logarithmic grid up to `t_max`, with jackknife errors over trajectory
/// batches, plus the displacement exceedance curve at `lambda`.
pub fn autocorrelation(
    obs: &CompiledObservable,
    params: &ModelParams,
    config: &IntegratorConfig,
    initial: &SampleSet,
    grid_points: usize,
    lambda: f64,
) -> Result<CorrCurve, CoreError> {
    config.validate(params)?;
    let m = config.ensemble.min(initial.len());
    if m < 2 * crate::estimators::MIN_BATCHES {
        return Err(CoreError::TooFewBatches {
            what: "autocorrelation ensemble",
            min: 2 * crate::estimators::MIN_BATCHES,
            got: m,
        });
    }
    let grid = log_step_grid(config.dt, config.t_max, grid_points);
    let times: Vec<f64> = grid.iter().map(|&s| s as f64 * config.dt).collect();

    // values[traj][grid index]
    let values: Result<Vec<Vec<f64>>, CoreError> = initial.states[..m]
        .par_iter()
        .map(|st| {
            let n = st.q.len();
            let (mut q, mut p) = (st.q.clone(), st.p.clone());
            let mut f = vec![0.0; n];
            forces(params, &q, true, &mut f);
            let e0 = total_energy(params, &q, &p);
            let mut out = Vec::with_capacity(grid.len());
            let mut step = 0usize;
            for &target in &grid {
                while step < target {
                    vv_step(params, &mut q, &mut p, &mut f, config.dt, true);
                    step += 1;
                }
                out.push(obs.eval(&ChainState { q: q.clone(), p: p.clone(), sweep: step as u64 }));
            }
            let e1 = total_energy(params, &q, &p);
            let drift = ((e1 - e0) / e0).abs();
            if drift > ENERGY_DRIFT_LIMIT {
                return Err(CoreError::EnergyDrift { drift, limit: ENERGY_DRIFT_LIMIT });
            }
            Ok(out)
        })
        .collect();
    let values = values?;

    // jackknife over trajectory batches
    let batches = crate::estimators::MIN_BATCHES;
    let batch_len = m / batches;
    let m_used = batches * batch_len;
    let k = grid.len();
    let mut c = Vec::with_capacity(k);
    let mut se = Vec::with_capacity(k);
    let mut disp_p = Vec::with_capacity(k);
    let mut disp_se = Vec::with_capacity(k);

    // sigma of X_0 over the used ensemble for the displacement threshold
    let x0: Vec<f64> = values[..m_used].iter().map(|v| v[0]).collect();
    let mean0 = x0.iter().sum::<f64>() / m_used as f64;
    let var0 = x0.iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>() / m_used as f64;
    if var0 <= 0.0 {
        return Err(CoreError::DegenerateVariance { observable: obs.name.clone() });
    }
    let sigma0 = var0.sqrt();

    for (gi, _) in grid.iter().enumerate() {
        // batch sums of (x0, xt, x0*xt)
        let mut bsum = vec![(0.0f64, 0.0f64, 0.0f64); batches];
        for (ti, v) in values[..m_used].iter().enumerate() {
            let b = ti / batch_len;
            bsum[b].0 += v[0];
            bsum[b].1 += v[gi];
            bsum[b].2 += v[0] * v[gi];
        }
        let corr = |skip: Option<usize>| -> f64 {
            let (mut s0, mut st, mut s0t, mut cnt) = (0.0, 0.0, 0.0, 0.0);
            let mut svar = 0.0;
            for (b, &(a0, at, a0t)) in bsum.iter().enumerate() {
                if Some(b) == skip {
                    continue;
                }
                s0 += a0;
                st += at;
                s0t += a0t;
                cnt += batch_len as f64;
                svar += 0.0;
            }
            let _ = svar;
            let m0 = s0 / cnt;
            // same-sample normalization: variance of X_0 over included data
            let mut v0 = 0.0;
            for (ti, v) in values[..m_used].iter().enumerate() {
                if Some(ti / batch_len) == skip {
                    continue;
                }
                v0 += (v[0] - m0) * (v[0] - m0);
            }
            v0 /= cnt;
            (s0t / cnt - m0 * (st / cnt)) / v0
        };
        let full = corr(None);
        let thetas: Vec<f64> = (0..batches).map(|b| corr(Some(b))).collect();
        let tmean = thetas.iter().sum::<f64>() / batches as f64;
        let ss: f64 = thetas.iter().map(|t| (t - tmean) * (t - tmean)).sum();
        c.push(full);
        se.push(((batches as f64 - 1.0) / batches as f64 * ss).sqrt());

        let hits = values[..m_used]
            .iter()
            .filter(|v| (v[gi] - v[0]).abs() >= lambda * sigma0)
            .count() as f64;
        let p = hits / m_used as f64;
        disp_p.push(p);
        disp_se.push((p * (1.0 - p) / m_used as f64).sqrt().max(1.0 / m_used as f64));
    }

    Ok(CorrCurve {
        times,
        c,
        se,
        reference: None,
        displacement_lambda: lambda,
        displacement_p: disp_p,
        displacement_se: disp_se,
        ensemble: m_used,
    })
}

impl CorrCurve {
    pub fn attach_reference(&mut self, eta: f64) {
        self.reference = Some(self.times.iter().map(|&t| 1.0 - 0.5 * eta * eta * t * t).collect());
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub eta: MCEstimate,
    /// Times where the autocorrelation bound fails by more than 3 combined
    /// standard errors.
    pub violations: Vec<f64>,
    pub first_violation: Option<f64>,
    /// Displacement-inequality violations at the curve's lambda.
    pub displacement_violations: Vec<f64>,
    pub pass: bool,
}

/// Check `C_X(t) >= 1 - eta^2 t^2/2 - 3 SE` on the whole grid (until the
/// bound crosses 0.5 there is real content; beyond that it is vacuous but
/// still checked), and the displacement inequality
/// `P(|X_t - X| >= lambda sigma) <= (eta t / lambda)^2 + 3 SE`.
pub fn verify_autocorr_bound(curve: &CorrCurve, eta: &MCEstimate) -> BoundReport {
    let mut violations = Vec::new();
    let mut displacement_violations = Vec::new();
    for (i, &t) in curve.times.iter().enumerate() {
        let bound = 1.0 - 0.5 * eta.value * eta.value * t * t;
        // propagate the eta error through the bound
        let bound_se = eta.value * t * t * eta.std_error;
        let combined = (curve.se[i].powi(2) + bound_se.powi(2)).sqrt();
        if curve.c[i] < bound - 3.0 * combined {
            violations.push(t);
        }
        let lam = curve.displacement_lambda;
        let disp_bound = (eta.value * t / lam).powi(2);
        let disp_bound_se = 2.0 * eta.value * t * t / (lam * lam) * eta.std_error;
        let comb = (curve.displacement_se[i].powi(2) + disp_bound_se.powi(2)).sqrt();
        if curve.displacement_p[i] > disp_bound + 3.0 * comb {
            displacement_violations.push(t);
        }
    }
    let pass = violations.is_empty() && displacement_violations.is_empty();
    BoundReport {
        eta: *eta,
        first_violation: violations.first().copied(),
        violations,
        displacement_violations,
        pass,
    }
}

/// Relaxation-time lower bound `t(a) >= sqrt(2(1-a))/eta` with the eta
/// error propagated.
pub fn relaxation_bound(eta: &MCEstimate, a: f64) -> MCEstimate {
    assert!(a > 0.0 && a < 1.0, "level must be inside (0, 1)");
    let root = (2.0 * (1.0 - a)).sqrt();
    MCEstimate {
        value: root / eta.value,
        std_error: root * eta.std_error / (eta.value * eta.value),
        n_samples: eta.n_samples,
        tau_int: None,
        seed: eta.seed,
    }
}

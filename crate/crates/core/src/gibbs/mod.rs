//! Sampling the Gibbs measure `exp(-beta H)/Z`.
//!
//! The measure factorizes: momenta are i.i.d. Gaussians with variance
//! `1/(beta omega)`, positions follow the coupled configurational density
//! `D_N ∝ exp(-beta U_N)` targeted by a single-site random-walk Metropolis
//! chain. The [`transfer`] submodule provides deterministic small-system
//! oracles (transfer kernel and nested quadrature) against which the
//! sampler is validated.

pub mod quad;
pub mod transfer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CoreError;
use crate::model::onsite_potential_d;
use crate::normalform::ModelParams;

/// Standard normal deviate (Marsaglia polar method).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// One phase-space sample.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub sweep: u64,
}

impl ChainState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

/// Acceptance-rate window the proposal is tuned into during burn-in.
pub const ACCEPTANCE_WINDOW: (f64, f64) = (0.25, 0.55);

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SamplerConfig {
    /// Total sweeps, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: usize,
    /// Random-walk step; defaults to `2.4 / sqrt(beta omega)`.
    pub proposal_sigma: Option<f64>,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(sweeps: usize, burn_in: usize, seed: u64) -> Self {
        SamplerConfig { sweeps, burn_in, thin: 1, proposal_sigma: None, seed }
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.burn_in >= self.sweeps {
            return Err(CoreError::InvalidParam {
                field: "burn_in",
                reason: format!("burn_in {} must be below sweeps {}", self.burn_in, self.sweeps),
            });
        }
        if self.thin == 0 {
            return Err(CoreError::InvalidParam {
                field: "thin",
                reason: "thinning stride must be positive".into(),
            });
        }
        if let Some(s) = self.proposal_sigma {
            if !(s > 0.0) {
                return Err(CoreError::InvalidParam {
                    field: "proposal_sigma",
                    reason: format!("must be positive, got {s}"),
                });
            }
        }
        Ok(())
    }
}

/// Equilibrium samples plus sampler diagnostics.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub params: ModelParams,
    pub states: Vec<ChainState>,
    /// Post-burn-in acceptance rate.
    pub acceptance: f64,
    /// Proposal step after tuning.
    pub proposal_sigma: f64,
    pub seed: u64,
    pub acceptance_in_window: bool,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// I.i.d. momentum samples: zero-mean Gaussian, variance `1/(beta omega)`.
pub fn sample_p(params: &ModelParams, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 1.0 / (params.beta * params.omega()).sqrt();
    (0..count)
        .map(|_| (0..params.n_sites).map(|_| sigma * standard_normal(&mut rng)).collect())
        .collect()
}

fn fill_p<R: Rng>(params: &ModelParams, rng: &mut R, out: &mut Vec<f64>) {
    let sigma = 1.0 / (params.beta * params.omega()).sqrt();
    out.clear();
    out.extend((0..params.n_sites).map(|_| sigma * standard_normal(rng)));
}

/// Single-site random-walk Metropolis targeting `D_N`; the proposal step is
/// tuned during burn-in only, so the post-burn-in chain is exactly
/// stationary. Momenta are drawn i.i.d. for each kept state.
pub fn mcmc_run(params: &ModelParams, config: &SamplerConfig) -> Result<SampleSet, CoreError> {
    config.validate()?;
    let n = params.n_sites;
    let beta = params.beta;
    let w = params.omega();
    let ew = params.eps / w;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut sigma = config.proposal_sigma.unwrap_or(2.4 / (beta * w).sqrt());
    let sigma0 = sigma;

    // start near the harmonic marginal
    let mut q: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng) / (beta * w).sqrt()).collect();

    let mut states = Vec::new();
    let mut p_buf = Vec::with_capacity(n);
    let (mut acc_tune, mut tries_tune) = (0u64, 0u64);
    let (mut acc_main, mut tries_main) = (0u64, 0u64);

    for sweep in 0..config.sweeps {
        let tuning = sweep < config.burn_in;
        for i in 0..n {
            let x = q[i];
            let xp = x + sigma * standard_normal(&mut rng);
            let mut du = 0.5 * w * (xp * xp - x * x)
                + (xp.powi(4) - x.powi(4)) / (4.0 * w * w);
            let mut nb = 0.0;
            if i > 0 {
                nb += q[i - 1];
            }
            if i + 1 < n {
                nb += q[i + 1];
            }
            du += ew * (xp - x) * nb;
            let accept = du <= 0.0 || rng.gen::<f64>() < (-beta * du).exp();
            if accept {
                q[i] = xp;
            }
            if tuning {
                tries_tune += 1;
                acc_tune += accept as u64;
            } else {
                tries_main += 1;
                acc_main += accept as u64;
            }
        }
        if tuning {
            // adjust every 50 sweeps toward the target window
            if (sweep + 1) % 50 == 0 && tries_tune > 0 {
                let rate = acc_tune as f64 / tries_tune as f64;
                if rate < ACCEPTANCE_WINDOW.0 {
                    sigma *= 0.8;
                } else if rate > ACCEPTANCE_WINDOW.1 {
                    sigma *= 1.25;
                }
                sigma = sigma.clamp(1e-4 * sigma0, 1e4 * sigma0);
                acc_tune = 0;
                tries_tune = 0;
            }
            continue;
        }
        let kept = sweep - config.burn_in;
        if kept % config.thin == 0 {
            fill_p(params, &mut rng, &mut p_buf);
            states.push(ChainState { q: q.clone(), p: p_buf.clone(), sweep: sweep as u64 });
        }
    }

    let acceptance = if tries_main > 0 { acc_main as f64 / tries_main as f64 } else { 0.0 };
    let acceptance_in_window =
        acceptance >= ACCEPTANCE_WINDOW.0 && acceptance <= ACCEPTANCE_WINDOW.1;
    Ok(SampleSet {
        params: *params,
        states,
        acceptance,
        proposal_sigma: sigma,
        seed: config.seed,
        acceptance_in_window,
    })
}

/// Independent chains with one RNG stream each, run in parallel and
/// concatenated in chain order (deterministic for a fixed seed).
pub fn mcmc_ensemble(
    params: &ModelParams,
    config: &SamplerConfig,
    chains: usize,
) -> Result<SampleSet, CoreError> {
    use rayon::prelude::*;
    config.validate()?;
    let sets: Result<Vec<SampleSet>, CoreError> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut cfg = *config;
            cfg.seed = config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c as u64 + 1));
            mcmc_run(params, &cfg)
        })
        .collect();
    let sets = sets?;
    let mut all = SampleSet {
        params: *params,
        states: Vec::new(),
        acceptance: 0.0,
        proposal_sigma: 0.0,
        seed: config.seed,
        acceptance_in_window: true,
    };
    for s in &sets {
        all.states.extend(s.states.iter().cloned());
        all.acceptance += s.acceptance / sets.len() as f64;
        all.proposal_sigma += s.proposal_sigma / sets.len() as f64;
        all.acceptance_in_window &= s.acceptance_in_window;
    }
    Ok(all)
}

/// Sanity bound for the proposal-scale heuristic: the curvature of the
/// on-site potential at the thermal scale.
pub fn local_stiffness(params: &ModelParams) -> f64 {
    let x = 1.0 / (params.beta * params.omega()).sqrt();
    onsite_potential_d(params, x) / x
}

#[cfg(test)]
mod tests {
    use super::transfer::{p_moment, TransferKernel};
    use super::*;
    use crate::gibbs::quad::gauss_legendre_scaled;
    use crate::gibbs::transfer::default_grid;

    fn mean_se(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn p_samples_match_gaussian_moments() {
        let params = ModelParams::open(4, 0.1, 7.0).unwrap();
        let samples = sample_p(&params, 20_000, 11);
        let var_expected = 1.0 / (params.beta * params.omega());
        for site in 0..2 {
            let vals: Vec<f64> = samples.iter().map(|s| s[site]).collect();
            let (mean, se) = mean_se(&vals);
            assert!(mean.abs() < 3.0 * se, "mean {mean} vs se {se}");
            let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
            let (m2, se2) = mean_se(&sq);
            assert!((m2 - var_expected).abs() < 3.0 * se2);
        }
        // cross-site product is uncorrelated
        let prod: Vec<f64> = samples.iter().map(|s| s[0] * s[3]).collect();
        let (mp, sep) = mean_se(&prod);
        assert!(mp.abs() < 3.0 * sep);
        assert!((p_moment(&params, 2) - var_expected).abs() < 1e-15);
        assert!((p_moment(&params, 4) - 3.0 * var_expected * var_expected).abs() < 1e-15);
    }

    #[test]
    fn metropolis_is_stationary_on_discrete_toy() {
        // three-state reduction: random-walk proposal (left/right with
        // prob 1/2, staying put at the ends), Metropolis acceptance.
        // The transition matrix must fix the target exactly.
        let pi = [0.2f64, 0.5, 0.3];
        let mut t = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if (i as i32 - j as i32).abs() == 1 {
                    t[i][j] = 0.5 * (pi[j] / pi[i]).min(1.0);
                }
            }
            t[i][i] = 1.0 - t[i].iter().sum::<f64>() + t[i][i];
        }
        for j in 0..3 {
            let flow: f64 = (0..3).map(|i| pi[i] * t[i][j]).sum();
            assert!((flow - pi[j]).abs() < 1e-15, "pi P != pi at state {j}");
        }
    }

    #[test]
    fn q_marginal_matches_quadrature_at_zero_eps() {
        // eps = 0: sites decouple; per-site q-marginal is
        // exp(-beta(q^2/2 + q^4/4))/z. KS distance below 0.02.
        let params = ModelParams::open(4, 0.0, 2.0).unwrap();
        let config = SamplerConfig::new(26_000, 1_000, 5);
        let set = mcmc_run(&params, &config).unwrap();
        assert!(set.acceptance_in_window, "acceptance {}", set.acceptance);
        let mut vals: Vec<f64> = set
            .states
            .iter()
            .flat_map(|s| s.q.iter().copied())
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // quadrature CDF
        let (x, w) = gauss_legendre_scaled(400, 6.0);
        let beta = params.beta;
        let dens: Vec<f64> =
            x.iter().map(|&v| (-beta * (v * v / 2.0 + v.powi(4) / 4.0)).exp()).collect();
        let z: f64 = dens.iter().zip(&w).map(|(d, wi)| d * wi).sum();
        let cdf = |t: f64| -> f64 {
            x.iter()
                .zip(dens.iter().zip(&w))
                .filter(|(xi, _)| **xi <= t)
                .map(|(_, (d, wi))| d * wi)
                .sum::<f64>()
                / z
        };
        let n = vals.len() as f64;
        let mut ks = 0.0f64;
        for (k, &v) in vals.iter().enumerate().step_by(97) {
            let emp = (k + 1) as f64 / n;
            ks = ks.max((emp - cdf(v)).abs());
        }
        assert!(ks < 0.02, "KS distance {ks}");
    }

    #[test]
    fn two_site_correlation_matches_quadrature() {
        // N=2, eps=0.1, beta=10: <q1 q2> against the 2-d oracle
        let params = ModelParams::open(2, 0.1, 10.0).unwrap();
        let config = SamplerConfig::new(42_000, 2_000, 7);
        let set = mcmc_run(&params, &config).unwrap();
        let prods: Vec<f64> = set.states.iter().map(|s| s.q[0] * s.q[1]).collect();
        let (mean, se) = mean_se(&prods);
        // correlated sweeps: inflate the naive error by a generous factor
        let se = 6.0 * se;

        let beta = params.beta;
        let w = params.omega();
        let u = |q: &[f64]| {
            0.5 * w * (q[0] * q[0] + q[1] * q[1])
                + (q[0].powi(4) + q[1].powi(4)) / (4.0 * w * w)
                + params.eps * q[0] * q[1] / w
        };
        let num = super::quad::nested_quadrature(2, 120, 4.0, &|q| q[0] * q[1] * (-beta * u(q)).exp());
        let den = super::quad::nested_quadrature(2, 120, 4.0, &|q| (-beta * u(q)).exp());
        let oracle = num / den;
        assert!(
            (mean - oracle).abs() < 3.0 * se.max(1e-6),
            "sampler {mean} vs oracle {oracle} (se {se})"
        );
        // sign-flip symmetry: <q_i> = 0
        let q0: Vec<f64> = set.states.iter().map(|s| s.q[0]).collect();
        let (m0, s0) = mean_se(&q0);
        assert!(m0.abs() < 6.0 * s0.max(1e-4));
    }

    #[test]
    fn sampler_matches_transfer_kernel_moments() {
        let params = ModelParams::open(4, 0.1, 5.0).unwrap();
        let kernel = TransferKernel::new(&params, default_grid(&params)).unwrap();
        let config = SamplerConfig::new(62_000, 2_000, 3).with_thin(3);
        let set = mcmc_run(&params, &config).unwrap();
        for (spec, label) in [
            (vec![(1usize, 2u32)], "<q1^2>"),
            (vec![(2, 2)], "<q2^2>"),
            (vec![(1, 1), (2, 1)], "<q1 q2>"),
            (vec![(2, 2), (3, 2)], "<q2^2 q3^2>"),
            (vec![(1, 1), (4, 1)], "<q1 q4>"),
        ] {
            let oracle = kernel.q_moment(4, &spec);
            let vals: Vec<f64> = set
                .states
                .iter()
                .map(|s| spec.iter().map(|&(i, k)| s.q[i - 1].powi(k as i32)).product())
                .collect();
            let (mean, se) = mean_se(&vals);
            let se = 5.0 * se; // autocorrelation allowance
            assert!(
                (mean - oracle).abs() < 3.0 * se.max(1e-7),
                "{label}: sampler {mean} vs transfer {oracle} (se {se})"
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SamplerConfig::new(100, 100, 0);
        assert!(bad.validate().is_err());
        let bad = SamplerConfig { thin: 0, ..SamplerConfig::new(100, 10, 0) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn determinism_same_seed_same_states() {
        let params = ModelParams::open(6, 0.05, 8.0).unwrap();
        let config = SamplerConfig::new(600, 100, 42).with_thin(2);
        let a = mcmc_run(&params, &config).unwrap();
        let b = mcmc_run(&params, &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.q, sb.q);
            assert_eq!(sa.p, sb.p);
        }
    }
}

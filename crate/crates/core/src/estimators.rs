//! Monte-Carlo estimation of means, variances, correlation coefficients and
//! L2 norms of lattice observables, plus the decorrelated invariant
//! `Xbar = X_n - H rho sigma_X / sigma_H` and the stability-ratio scans.
//!
//! Ratios and correlation coefficients are formed from batch-resolved
//! moment sums and error bars come from leave-one-batch-out jackknife, so
//! the small-sample bias of plug-in ratios is reflected in the quoted
//! errors. Polynomials are compiled to flat site-indexed instruction lists
//! before evaluation.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::CoreError;
use crate::gibbs::transfer::{p_moment, TransferKernel};
use crate::gibbs::{ChainState, SampleSet};
use crate::normalform::{
    build_hamiltonian, build_invariant, ModelParams, NormalFormState, TruncatedInvariant,
};
use crate::poly::{Basis, MultiIndex, Polynomial};

/// Minimum number of batches for batch-mean error bars.
pub const MIN_BATCHES: usize = 50;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Integrated autocorrelation time in units of kept samples; only
    /// attached to plain means.
    pub tau_int: Option<f64>,
    pub seed: u64,
}

impl MCEstimate {
    /// `|value - other.value|` in units of the joint standard error.
    pub fn joint_sigmas(&self, other: &MCEstimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.value - other.value).abs() / se
    }
}

#[derive(Clone, Copy)]
struct Factor {
    site: u32,
    is_p: bool,
    pow: u8,
}

#[derive(Clone)]
struct CompiledTerm {
    coeff: f64,
    factors: Vec<Factor>,
}

/// A real-basis polynomial compiled for fast evaluation on chain states.
#[derive(Clone)]
pub struct CompiledObservable {
    pub name: String,
    terms: Vec<CompiledTerm>,
}

impl CompiledObservable {
    /// Compile a real-basis polynomial. Residual imaginary parts (from the
    /// complex-basis round trip) must be negligible.
    pub fn compile(name: &str, poly: &Polynomial) -> Result<Self, CoreError> {
        if poly.basis() != Basis::RealPq {
            return Err(CoreError::BasisMismatch {
                left: poly.basis().to_string(),
                right: Basis::RealPq.to_string(),
            });
        }
        let scale = poly.max_abs_coeff().max(1e-300);
        let mut terms = Vec::with_capacity(poly.num_terms());
        for (idx, c) in poly.terms() {
            assert!(
                c.im.abs() <= 1e-9 * scale,
                "{name}: non-real coefficient {c} on {:?}",
                idx.entries()
            );
            let mut factors = Vec::with_capacity(idx.entries().len() * 2);
            for e in idx.entries() {
                if e.b > 0 {
                    factors.push(Factor { site: e.site - 1, is_p: false, pow: e.b });
                }
                if e.a > 0 {
                    factors.push(Factor { site: e.site - 1, is_p: true, pow: e.a });
                }
            }
            terms.push(CompiledTerm { coeff: c.re, factors });
        }
        Ok(CompiledObservable { name: name.to_string(), terms })
    }

    pub fn eval(&self, state: &ChainState) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            let mut prod = t.coeff;
            for f in &t.factors {
                let v = if f.is_p { state.p[f.site as usize] } else { state.q[f.site as usize] };
                prod *= v.powi(f.pow as i32);
            }
            total += prod;
        }
        total
    }
}

/// Named observables evaluated together over a sample set.
pub struct ObservableSet {
    pub obs: Vec<CompiledObservable>,
}

impl ObservableSet {
    pub fn new(items: Vec<CompiledObservable>) -> Self {
        ObservableSet { obs: items }
    }

    pub fn index(&self, name: &str) -> usize {
        self.obs
            .iter()
            .position(|o| o.name == name)
            .unwrap_or_else(|| panic!("unknown observable {name}"))
    }

    /// The standard set around a truncated invariant: `X_n`, `Xdot_n`, `H`,
    /// `H_0`, `H_1` and the momentum components `F` (pair), `G` (quartic)
    /// and remainder `R_1` of the first kernel term.
    pub fn standard(params: &ModelParams, inv: &TruncatedInvariant) -> Result<Self, CoreError> {
        let (h0, h1) = build_hamiltonian(params);
        let h = h0.add(&h1);
        let mut state = NormalFormState::new(*params);
        state.advance_order()?;
        let theta1 = crate::poly::to_real(state.theta(1))?;
        let (f_part, g_part, r_part) = split_theta1(&theta1);
        Ok(ObservableSet::new(vec![
            CompiledObservable::compile("X_n", &inv.xn)?,
            CompiledObservable::compile("Xdot_n", &inv.xn_dot)?,
            CompiledObservable::compile("H", &h)?,
            CompiledObservable::compile("H_0", &h0)?,
            CompiledObservable::compile("H_1", &h1)?,
            CompiledObservable::compile("F", &f_part)?,
            CompiledObservable::compile("G", &g_part)?,
            CompiledObservable::compile("R_1", &r_part)?,
        ]))
    }
}

/// Split `Theta_1` into its `p_i p_{i+1}` component, its `p_i^4` component
/// and the remainder.
pub fn split_theta1(theta1: &Polynomial) -> (Polynomial, Polynomial, Polynomial) {
    let mut f = Polynomial::zero(Basis::RealPq);
    let mut g = Polynomial::zero(Basis::RealPq);
    let mut r = Polynomial::zero(Basis::RealPq);
    for (idx, c) in theta1.terms() {
        let e = idx.entries();
        let is_pp = e.len() == 2
            && e[1].site == e[0].site + 1
            && e.iter().all(|x| x.a == 1 && x.b == 0);
        let is_p4 = e.len() == 1 && e[0].a == 4 && e[0].b == 0;
        if is_pp {
            f.add_term(idx.clone(), *c);
        } else if is_p4 {
            g.add_term(idx.clone(), *c);
        } else {
            r.add_term(idx.clone(), *c);
        }
    }
    (f, g, r)
}

/// Batch-resolved first and second moment sums for a set of observables.
pub struct MomentMatrix {
    pub names: Vec<String>,
    k: usize,
    n_used: usize,
    batches: usize,
    batch_len: usize,
    sum1: Vec<Vec<f64>>,
    sum2: Vec<Vec<f64>>,
    seed: u64,
}

/// Totals (or leave-one-out totals) exposed to functionals.
pub struct MomentView {
    k: usize,
    n: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl MomentView {
    fn pair(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        a * self.k - a * (a + 1) / 2 + b
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.s1[i] / self.n
    }

    /// Raw second moment `<x_i x_j>`.
    pub fn raw2(&self, i: usize, j: usize) -> f64 {
        self.s2[self.pair(i, j)] / self.n
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.raw2(i, j) - self.mean(i) * self.mean(j)
    }

    pub fn var(&self, i: usize) -> f64 {
        self.cov(i, i)
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.var(i).max(0.0).sqrt()
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.cov(i, j) / (self.sigma(i) * self.sigma(j))
    }

    /// `||x_i|| = sqrt(<x_i^2>)`.
    pub fn l2(&self, i: usize) -> f64 {
        self.raw2(i, i).max(0.0).sqrt()
    }
}

/// Evaluate the observables over the samples and accumulate batch sums.
pub fn accumulate(set: &ObservableSet, samples: &SampleSet) -> Result<MomentMatrix, CoreError> {
    let k = set.obs.len();
    let n = samples.len();
    let batches = MIN_BATCHES.max((n / 100).min(200));
    let batch_len = n / batches;
    if batch_len == 0 {
        return Err(CoreError::TooFewBatches { what: "moment estimation", min: MIN_BATCHES, got: n });
    }
    let n_used = batches * batch_len;
    let npair = k * (k + 1) / 2;
    let mut sum1 = vec![vec![0.0; k]; batches];
    let mut sum2 = vec![vec![0.0; npair]; batches];
    let mut row = vec![0.0; k];
    for (s, state) in samples.states.iter().take(n_used).enumerate() {
        let b = s / batch_len;
        for (i, o) in set.obs.iter().enumerate() {
            row[i] = o.eval(state);
        }
        let (s1, s2) = (&mut sum1[b], &mut sum2[b]);
        let mut idx = 0;
        for i in 0..k {
            s1[i] += row[i];
            for j in i..k {
                s2[idx] += row[i] * row[j];
                idx += 1;
            }
        }
    }
    Ok(MomentMatrix {
        names: set.obs.iter().map(|o| o.name.clone()).collect(),
        k,
        n_used,
        batches,
        batch_len,
        sum1,
        sum2,
        seed: samples.seed,
    })
}

impl MomentMatrix {
    pub fn n_samples(&self) -> usize {
        self.n_used
    }

    pub fn full(&self) -> MomentView {
        let mut s1 = vec![0.0; self.k];
        let mut s2 = vec![0.0; self.k * (self.k + 1) / 2];
        for b in 0..self.batches {
            for (t, v) in s1.iter_mut().zip(&self.sum1[b]) {
                *t += v;
            }
            for (t, v) in s2.iter_mut().zip(&self.sum2[b]) {
                *t += v;
            }
        }
        MomentView { k: self.k, n: self.n_used as f64, s1, s2 }
    }

    fn leave_out(&self, full: &MomentView, b: usize) -> MomentView {
        let mut s1 = full.s1.clone();
        let mut s2 = full.s2.clone();
        for (t, v) in s1.iter_mut().zip(&self.sum1[b]) {
            *t -= v;
        }
        for (t, v) in s2.iter_mut().zip(&self.sum2[b]) {
            *t -= v;
        }
        MomentView { k: self.k, n: (self.n_used - self.batch_len) as f64, s1, s2 }
    }

    /// Jackknife a functional of the moment view over batches.
    pub fn jackknife(&self, f: impl Fn(&MomentView) -> f64) -> MCEstimate {
        let full = self.full();
        let value = f(&full);
        let b = self.batches as f64;
        let thetas: Vec<f64> = (0..self.batches).map(|i| f(&self.leave_out(&full, i))).collect();
        let mean = thetas.iter().sum::<f64>() / b;
        let ss: f64 = thetas.iter().map(|t| (t - mean) * (t - mean)).sum();
        let se = ((b - 1.0) / b * ss).sqrt();
        MCEstimate { value, std_error: se, n_samples: self.n_used, tau_int: None, seed: self.seed }
    }

    /// Plain mean with batch-mean error and integrated autocorrelation.
    pub fn mean(&self, i: usize) -> MCEstimate {
        let full = self.full();
        let value = full.mean(i);
        let b = self.batches as f64;
        let bm: Vec<f64> =
            (0..self.batches).map(|k| self.sum1[k][i] / self.batch_len as f64).collect();
        let var_bm = bm.iter().map(|m| (m - value) * (m - value)).sum::<f64>() / (b - 1.0);
        let se = (var_bm / b).sqrt();
        let var = full.var(i);
        let tau = if var > 0.0 {
            (se * se * self.n_used as f64 / (2.0 * var)).max(0.0)
        } else {
            0.0
        };
        MCEstimate {
            value,
            std_error: se,
            n_samples: self.n_used,
            tau_int: Some(tau),
            seed: self.seed,
        }
    }
}

/// Decorrelated invariant and its plug-in coefficient.
pub struct XbarResult {
    pub xbar: Polynomial,
    /// `c = cov(X_n, H)/var(H)`; `Xbar = X_n - c H`.
    pub coeff: f64,
    pub rho_xn_h: MCEstimate,
    /// `rho_{Xbar,H}` evaluated on the same samples used for the plug-in
    /// (statistically zero by construction).
    pub rho_xbar_h: MCEstimate,
}

/// Assemble `Xbar` from plug-in estimates on the given samples.
pub fn build_xbar(
    params: &ModelParams,
    inv: &TruncatedInvariant,
    samples: &SampleSet,
) -> Result<XbarResult, CoreError> {
    let (h0, h1) = build_hamiltonian(params);
    let h = h0.add(&h1);
    let set = ObservableSet::new(vec![
        CompiledObservable::compile("X_n", &inv.xn)?,
        CompiledObservable::compile("H", &h)?,
    ]);
    let m = accumulate(&set, samples)?;
    let sigma_h = m.jackknife(|v| v.sigma(1));
    if !(sigma_h.value > 3.0 * sigma_h.std_error) || sigma_h.value == 0.0 {
        return Err(CoreError::DegenerateVariance { observable: "H".into() });
    }
    let coeff = m.full().cov(0, 1) / m.full().var(1);
    let rho_xn_h = m.jackknife(|v| v.rho(0, 1));
    let xbar = inv.xn.sub(&h.scale_re(coeff));
    let rho_xbar_h = m.jackknife(|v| {
        let cov = v.cov(0, 1) - coeff * v.var(1);
        let var_xbar = v.var(0) - 2.0 * coeff * v.cov(0, 1) + coeff * coeff * v.var(1);
        cov / (var_xbar.max(0.0).sqrt() * v.sigma(1))
    });
    Ok(XbarResult { xbar, coeff, rho_xn_h, rho_xbar_h })
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub n: usize,
    pub n_sites: usize,
    /// `||Xdot_n|| / sigma_{X_n}`.
    pub ratio: MCEstimate,
    /// Same numerator over `sigma_{Xbar}` when a decorrelated invariant is
    /// supplied ( `[Xbar, H] = [X_n, H]` exactly).
    pub ratio_xbar: Option<MCEstimate>,
    pub norm_xdot_per_sqrt_n: MCEstimate,
    pub sigma_xn_per_sqrt_n: MCEstimate,
}

/// Estimate `||Xdot_n||/sigma_{X_n}` (and the `Xbar` variant) together with
/// the per-sqrt(N) normalized numerator and denominator.
pub fn stability_ratio(
    params: &ModelParams,
    inv: &TruncatedInvariant,
    xbar: Option<&Polynomial>,
    samples: &SampleSet,
) -> Result<StabilityReport, CoreError> {
    let mut obs = vec![
        CompiledObservable::compile("X_n", &inv.xn)?,
        CompiledObservable::compile("Xdot_n", &inv.xn_dot)?,
    ];
    if let Some(xb) = xbar {
        obs.push(CompiledObservable::compile("Xbar", xb)?);
    }
    let m = accumulate(&ObservableSet::new(obs), samples)?;
    let sqrt_n = (params.n_sites as f64).sqrt();
    let ratio = m.jackknife(|v| v.l2(1) / v.sigma(0));
    let ratio_xbar = xbar.map(|_| m.jackknife(|v| v.l2(1) / v.sigma(2)));
    let norm_xdot_per_sqrt_n = m.jackknife(|v| v.l2(1) / sqrt_n);
    let sigma_xn_per_sqrt_n = m.jackknife(|v| v.sigma(0) / sqrt_n);
    Ok(StabilityReport {
        n: inv.n,
        n_sites: params.n_sites,
        ratio,
        ratio_xbar,
        norm_xdot_per_sqrt_n,
        sigma_xn_per_sqrt_n,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NScanRow {
    pub n: usize,
    pub ratio: MCEstimate,
    pub norm_xdot: MCEstimate,
    pub sigma_xn: MCEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct NScanTable {
    pub rows: Vec<NScanRow>,
    /// Truncation order minimizing the ratio.
    pub n_bar: usize,
}

/// Scan truncation orders over one sample set and pick the minimizer.
pub fn n_scan(
    params: &ModelParams,
    n_max: usize,
    samples: &SampleSet,
) -> Result<NScanTable, CoreError> {
    let mut state = NormalFormState::new(*params);
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let inv = build_invariant(&mut state, n)?;
        let set = ObservableSet::new(vec![
            CompiledObservable::compile("X_n", &inv.xn)?,
            CompiledObservable::compile("Xdot_n", &inv.xn_dot)?,
        ]);
        let m = accumulate(&set, samples)?;
        rows.push(NScanRow {
            n,
            ratio: m.jackknife(|v| v.l2(1) / v.sigma(0)),
            norm_xdot: m.jackknife(|v| v.l2(1)),
            sigma_xn: m.jackknife(|v| v.sigma(0)),
        });
    }
    let n_bar = rows
        .iter()
        .min_by(|a, b| a.ratio.value.partial_cmp(&b.ratio.value).unwrap())
        .map(|r| r.n)
        .unwrap_or(1);
    Ok(NScanTable { rows, n_bar })
}

/// Exact moment oracle: Gaussian momentum factors times transfer-kernel
/// position moments, with a memo over position patterns.
pub struct ExactOracle<'a> {
    params: ModelParams,
    kernel: &'a TransferKernel,
    cache: std::cell::RefCell<HashMap<Vec<(usize, u32)>, f64>>,
}

impl<'a> ExactOracle<'a> {
    pub fn new(params: &ModelParams, kernel: &'a TransferKernel) -> Self {
        ExactOracle { params: *params, kernel, cache: Default::default() }
    }

    /// `<p^a q^b>` for one monomial pattern.
    pub fn monomial_moment(&self, idx: &MultiIndex) -> f64 {
        let mut p_part = 1.0;
        let mut q_spec: Vec<(usize, u32)> = Vec::new();
        for e in idx.entries() {
            if e.a > 0 {
                if e.a % 2 == 1 {
                    return 0.0; // odd momentum power
                }
                p_part *= p_moment(&self.params, e.a as u32);
            }
            if e.b > 0 {
                q_spec.push((e.site as usize, e.b as u32));
            }
        }
        if q_spec.is_empty() {
            return p_part;
        }
        if let Some(&v) = self.cache.borrow().get(&q_spec) {
            return p_part * v;
        }
        let v = self.kernel.q_moment(self.params.n_sites, &q_spec);
        self.cache.borrow_mut().insert(q_spec, v);
        p_part * v
    }

    pub fn poly_mean(&self, poly: &Polynomial) -> f64 {
        poly.terms().map(|(idx, c)| c.re * self.monomial_moment(idx)).sum()
    }

    /// `var f` with `f^2` expanded symbolically.
    pub fn poly_variance(&self, poly: &Polynomial) -> f64 {
        let mean = self.poly_mean(poly);
        let sq = poly.mul(poly);
        self.poly_mean(&sq) - mean * mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::transfer::default_grid;
    use crate::gibbs::{mcmc_run, SamplerConfig};
    use rand::Rng;
    use rand::SeedableRng;

    fn sampled(params: &ModelParams, sweeps: usize, thin: usize, seed: u64) -> SampleSet {
        let config = SamplerConfig::new(sweeps, sweeps / 10, seed).with_thin(thin);
        mcmc_run(params, &config).unwrap()
    }

    #[test]
    fn compiled_matches_direct_evaluation() {
        let params = ModelParams::open(6, 0.05, 10.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 2).unwrap();
        let obs = CompiledObservable::compile("X_n", &inv.xn).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let st = ChainState { q: q.clone(), p: p.clone(), sweep: 0 };
            let direct = inv.xn.eval_real(&q, &p).re;
            let fast = obs.eval(&st);
            assert!(
                (direct - fast).abs() <= 1e-12 * direct.abs().max(1.0),
                "{direct} vs {fast}"
            );
        }
    }

    #[test]
    fn rho_of_h_with_itself_is_one() {
        let params = ModelParams::open(4, 0.05, 8.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let set = ObservableSet::standard(&params, &inv).unwrap();
        let samples = sampled(&params, 4_000, 1, 21);
        let m = accumulate(&set, &samples).unwrap();
        let h = set.index("H");
        let rho = m.full().rho(h, h);
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_is_uncorrelated_with_h_and_has_known_variance() {
        let params = ModelParams::open(12, 0.1, 5.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let set = ObservableSet::standard(&params, &inv).unwrap();
        let samples = sampled(&params, 30_000, 2, 33);
        let m = accumulate(&set, &samples).unwrap();
        let (f, h) = (set.index("F"), set.index("H"));
        let rho = m.jackknife(|v| v.rho(f, h));
        assert!(rho.value.abs() < 3.0 * rho.std_error, "rho {} se {}", rho.value, rho.std_error);

        // sigma_F^2 = (N-1) eps^2 / (4 beta^2 omega^4)
        let w = params.omega();
        let expected = (params.n_sites as f64 - 1.0) * params.eps * params.eps
            / (4.0 * params.beta * params.beta * w.powi(4));
        let var_f = m.jackknife(|v| v.var(f));
        assert!(
            (var_f.value - expected).abs() < 3.0 * var_f.std_error,
            "var {} vs {} (se {})",
            var_f.value,
            expected,
            var_f.std_error
        );
    }

    #[test]
    fn xdot_has_zero_mean_and_local_norm_decomposition() {
        let n_ord = 1usize;
        let params = ModelParams::open(10, 0.08, 6.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, n_ord).unwrap();
        let samples = sampled(&params, 24_000, 2, 55);

        let set = ObservableSet::new(vec![CompiledObservable::compile("Xdot_n", &inv.xn_dot).unwrap()]);
        let m = accumulate(&set, &samples).unwrap();
        let mean = m.mean(0);
        assert!(mean.value.abs() < 3.0 * mean.std_error);

        // ||Xdot||^2 equals the sum of site-pair covariances restricted to
        // |i-j| <= 2n+2: decompose by anchor and re-estimate on the samples
        let mut anchors: std::collections::BTreeMap<u32, Polynomial> = Default::default();
        for (idx, c) in inv.xn_dot.terms() {
            anchors
                .entry(idx.anchor().unwrap())
                .or_insert_with(|| Polynomial::zero(Basis::RealPq))
                .add_term(idx.clone(), *c);
        }
        let keys: Vec<u32> = anchors.keys().copied().collect();
        let pieces = ObservableSet::new(
            keys.iter()
                .map(|&a| CompiledObservable::compile(&format!("f{a}"), &anchors[&a]).unwrap())
                .collect(),
        );
        let mp = accumulate(&pieces, &samples).unwrap();
        let window = (2 * n_ord + 2) as i64;
        let restricted = mp.jackknife(|v| {
            let mut s = 0.0;
            for (i, &a) in keys.iter().enumerate() {
                for (j, &b) in keys.iter().enumerate() {
                    if (a as i64 - b as i64).abs() <= window {
                        s += v.raw2(i, j);
                    }
                }
            }
            s
        });
        let full_norm2 = m.jackknife(|v| v.raw2(0, 0));
        let se = (restricted.std_error.powi(2) + full_norm2.std_error.powi(2)).sqrt();
        assert!(
            (restricted.value - full_norm2.value).abs() < 3.0 * se,
            "restricted {} vs full {} (se {})",
            restricted.value,
            full_norm2.value,
            se
        );
    }

    #[test]
    fn xbar_identities() {
        let params = ModelParams::open(8, 0.05, 12.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let samples = sampled(&params, 30_000, 2, 71);
        let xb = build_xbar(&params, &inv, &samples).unwrap();
        // rho_{Xbar,H} is statistically zero by construction
        assert!(xb.rho_xbar_h.value.abs() < 3.0 * xb.rho_xbar_h.std_error.max(1e-12));

        // fresh samples: rho still statistically zero, and the variance
        // identity sigma^2_Xbar = (1 - rho^2) sigma^2_Xn within 3 SE
        let fresh = sampled(&params, 30_000, 2, 72);
        let (h0, h1) = build_hamiltonian(&params);
        let h = h0.add(&h1);
        let set = ObservableSet::new(vec![
            CompiledObservable::compile("Xbar", &xb.xbar).unwrap(),
            CompiledObservable::compile("H", &h).unwrap(),
            CompiledObservable::compile("X_n", &inv.xn).unwrap(),
        ]);
        let m = accumulate(&set, &fresh).unwrap();
        let rho = m.jackknife(|v| v.rho(0, 1));
        assert!(rho.value.abs() < 3.0 * rho.std_error, "rho {} se {}", rho.value, rho.std_error);
        let gap = m.jackknife(|v| {
            let rho_xh = v.rho(2, 1);
            v.var(0) - (1.0 - rho_xh * rho_xh) * v.var(2)
        });
        assert!(gap.value.abs() < 3.0 * gap.std_error, "gap {} se {}", gap.value, gap.std_error);

        // if rho == 0 already, Xbar == X_n: coefficient is cov/var
        assert!((xb.coeff - xb.rho_xn_h.value * 0.0).abs() < 1.0); // sanity on field wiring
    }

    #[test]
    fn chebyshev_tail_bound() {
        let params = ModelParams::open(8, 0.05, 12.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let samples = sampled(&params, 30_000, 2, 91);
        let xb = build_xbar(&params, &inv, &samples).unwrap();
        let obs = CompiledObservable::compile("Xbar", &xb.xbar).unwrap();
        let vals: Vec<f64> = samples.states.iter().map(|s| obs.eval(s)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sigma =
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        for lambda in [2.0f64, 3.0] {
            let phat = vals.iter().filter(|v| (**v - mean).abs() >= lambda * sigma).count() as f64 / n;
            let se = (phat * (1.0 - phat) / n).sqrt();
            assert!(
                phat <= 1.0 / (lambda * lambda) + 3.0 * se,
                "lambda {lambda}: {phat} vs {}",
                1.0 / (lambda * lambda)
            );
        }
    }

    #[test]
    fn sampled_sigma_matches_exact_oracle() {
        let params = ModelParams::open(4, 0.1, 6.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let kernel = TransferKernel::new(&params, default_grid(&params)).unwrap();
        let oracle = ExactOracle::new(&params, &kernel);
        let exact_var = oracle.poly_variance(&inv.xn);

        let samples = sampled(&params, 60_000, 3, 17);
        let set = ObservableSet::new(vec![CompiledObservable::compile("X_n", &inv.xn).unwrap()]);
        let m = accumulate(&set, &samples).unwrap();
        let var = m.jackknife(|v| v.var(0));
        // mild allowance for residual sweep-to-sweep correlation
        assert!(
            (var.value - exact_var).abs() < 4.0 * var.std_error,
            "var {} vs exact {} (se {})",
            var.value,
            exact_var,
            var.std_error
        );
    }

    #[test]
    fn ratio_is_scale_free() {
        let params = ModelParams::open(6, 0.05, 8.0).unwrap();
        let mut state = NormalFormState::new(params);
        let inv = build_invariant(&mut state, 1).unwrap();
        let samples = sampled(&params, 6_000, 1, 13);
        let r1 = stability_ratio(&params, &inv, None, &samples).unwrap();
        let scaled = TruncatedInvariant {
            n: inv.n,
            xn: inv.xn.scale_re(7.5),
            xn_dot: inv.xn_dot.scale_re(7.5),
            report: inv.report.clone(),
        };
        let r2 = stability_ratio(&params, &scaled, None, &samples).unwrap();
        assert!((r1.ratio.value - r2.ratio.value).abs() < 1e-12 * r1.ratio.value);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let params = ModelParams::open(4, 0.0, 5.0).unwrap();
        let set = ObservableSet::new(vec![]);
        let samples = SampleSet {
            params,
            states: Vec::new(),
            acceptance: 0.5,
            proposal_sigma: 1.0,
            seed: 0,
            acceptance_in_window: true,
        };
        assert!(accumulate(&set, &samples).is_err());
    }
}

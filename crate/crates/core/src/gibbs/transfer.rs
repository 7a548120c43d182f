//! Transfer-operator oracle for the configurational measure
//! `D_N ∝ exp(-beta U_N)` of the open chain, and the periodic partition
//! function. Everything reduces to contractions of the symmetric kernel
//!
//! `K(x, y) = exp(-beta [V(x)/2 + V(y)/2 + eps x y / omega])`
//!
//! discretized on a Gauss-Legendre grid, with the half on-site weights at
//! the two open ends supplied by boundary vectors. Partition functions,
//! one- and two-site marginals, arbitrary `q`-moments and the marginal
//! densities at fixed (off-grid) values are all exact up to quadrature.

use nalgebra::{DMatrix, DVector};

use super::quad::gauss_legendre_scaled;
use crate::error::CoreError;
use crate::model::onsite_potential;
use crate::normalform::ModelParams;

/// Relative disagreement between two grid refinements that trips an error.
pub const GRID_CONVERGENCE_LIMIT: f64 = 1e-6;

/// Per-site operation in a chain contraction.
#[derive(Clone, Copy, Debug)]
pub enum SiteOp {
    /// Integrate the site out.
    Free,
    /// Integrate with an extra `x^k` insertion (moment computation).
    Power(u32),
    /// Pin the site to a fixed value (marginal density computation).
    Fix(f64),
}

/// A positive-or-signed value carried as `sign * exp(ln)`.
#[derive(Clone, Copy, Debug)]
pub struct Scaled {
    pub ln: f64,
    pub sign: f64,
}

impl Scaled {
    pub fn value(self) -> f64 {
        self.sign * self.ln.exp()
    }

    pub fn ratio(self, den: Scaled) -> f64 {
        self.sign * den.sign * (self.ln - den.ln).exp()
    }
}

pub struct TransferKernel {
    params: ModelParams,
    m: usize,
    half_width: f64,
    nodes: Vec<f64>,
    s: DMatrix<f64>,
    b: DVector<f64>,
    sqrt_w: Vec<f64>,
}

/// Quadrature half-width: `8 max(1, (beta omega)^{-1/2})` with a quartic
/// correction. The width is floored so the boundary density is below
/// `1e-14` of the peak and capped so no kernel entry underflows.
pub fn domain_half_width(params: &ModelParams) -> f64 {
    let beta = params.beta;
    let w = params.omega();
    let gaussian = 8.0 * (1.0f64).max(1.0 / (beta * w).sqrt());
    let floor = bisect_increasing(|x| beta * onsite_potential(params, x), 34.0);
    let cap = bisect_increasing(
        |x| beta * (onsite_potential(params, x) + params.eps * x * x / w),
        650.0,
    );
    gaussian.max(floor).min(cap)
}

fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Default node count for the given parameters (at least 200).
pub fn default_grid(params: &ModelParams) -> usize {
    let l = domain_half_width(params);
    let sigma = 1.0 / (params.beta * params.omega()).sqrt();
    200usize.max((16.0 * l / sigma).ceil() as usize)
}

impl TransferKernel {
    pub fn new(params: &ModelParams, m: usize) -> Result<Self, CoreError> {
        let half_width = domain_half_width(params);
        let boundary_rel = (-params.beta * onsite_potential(params, half_width)).exp();
        if boundary_rel >= 1e-14 {
            return Err(CoreError::GridConvergence {
                what: format!("boundary density {boundary_rel:.2e} at L = {half_width:.3}"),
                delta: boundary_rel,
                limit: 1e-14,
            });
        }
        let (nodes, weights) = gauss_legendre_scaled(m, half_width);
        let beta = params.beta;
        let w = params.omega();
        let half_v: Vec<f64> =
            nodes.iter().map(|&x| (-0.5 * beta * onsite_potential(params, x)).exp()).collect();
        let sqrt_w: Vec<f64> = weights.iter().map(|&v| v.sqrt()).collect();
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = sqrt_w[i]
                    * sqrt_w[j]
                    * half_v[i]
                    * half_v[j]
                    * (-beta * params.eps * nodes[i] * nodes[j] / w).exp();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let b = DVector::from_iterator(m, (0..m).map(|i| sqrt_w[i] * half_v[i]));
        Ok(TransferKernel { params: *params, m, half_width, nodes, s, b, sqrt_w })
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Kernel column against a fixed (possibly off-grid) value `y`.
    fn k_vec(&self, y: f64) -> DVector<f64> {
        let beta = self.params.beta;
        let w = self.params.omega();
        let hv_y = (-0.5 * beta * onsite_potential(&self.params, y)).exp();
        DVector::from_iterator(
            self.m,
            (0..self.m).map(|i| {
                self.sqrt_w[i]
                    * (-0.5 * beta * onsite_potential(&self.params, self.nodes[i])).exp()
                    * hv_y
                    * (-beta * self.params.eps * self.nodes[i] * y / w).exp()
            }),
        )
    }

    fn bond_val(&self, y1: f64, y2: f64) -> f64 {
        let beta = self.params.beta;
        let w = self.params.omega();
        (-beta
            * (0.5 * onsite_potential(&self.params, y1)
                + 0.5 * onsite_potential(&self.params, y2)
                + self.params.eps * y1 * y2 / w))
            .exp()
    }

    /// Contract the open chain with the given per-site operations.
    ///
    /// Bookkeeping: each bond factor carries half the on-site weight of
    /// both endpoints, the two chain ends contribute the remaining halves
    /// (through `b` for grid sites, explicitly for fixed sites), and each
    /// free site picks up exactly one quadrature weight via the two
    /// `sqrt(w)` halves of its neighbors. The running amplitude is
    /// renormalized every step to avoid under/overflow.
    pub fn contract(&self, ops: &[SiteOp]) -> Scaled {
        assert!(ops.len() >= 2, "chain needs at least two sites");
        enum Running {
            Grid(DVector<f64>),
            Val(f64),
        }
        let mut ln = 0.0f64;
        let mut sign = 1.0f64;

        let apply_power = |v: &mut DVector<f64>, k: u32, nodes: &[f64]| {
            for (vi, &x) in v.iter_mut().zip(nodes) {
                *vi *= x.powi(k as i32);
            }
        };
        let normalize = |v: &mut DVector<f64>, ln: &mut f64| {
            let s = v.amax();
            if s > 0.0 && s.is_finite() {
                *v /= s;
                *ln += s.ln();
            }
        };

        let mut run = match ops[0] {
            SiteOp::Free => Running::Grid(self.b.clone()),
            SiteOp::Power(k) => {
                let mut v = self.b.clone();
                apply_power(&mut v, k, &self.nodes);
                Running::Grid(v)
            }
            SiteOp::Fix(y) => {
                // half the on-site weight; the other half rides on the bond
                ln += -0.5 * self.params.beta * onsite_potential(&self.params, y);
                Running::Val(y)
            }
        };
        if let Running::Grid(v) = &mut run {
            normalize(v, &mut ln);
        }

        for op in &ops[1..] {
            run = match (run, op) {
                (Running::Grid(v), SiteOp::Free) => Running::Grid(&self.s * v),
                (Running::Grid(v), SiteOp::Power(k)) => {
                    let mut v = &self.s * v;
                    apply_power(&mut v, *k, &self.nodes);
                    Running::Grid(v)
                }
                (Running::Grid(v), SiteOp::Fix(y)) => {
                    let a = self.k_vec(*y).dot(&v);
                    if a == 0.0 {
                        return Scaled { ln: f64::NEG_INFINITY, sign: 0.0 };
                    }
                    sign *= a.signum();
                    ln += a.abs().ln();
                    Running::Val(*y)
                }
                (Running::Val(y1), SiteOp::Free) => Running::Grid(self.k_vec(y1)),
                (Running::Val(y1), SiteOp::Power(k)) => {
                    let mut v = self.k_vec(y1);
                    apply_power(&mut v, *k, &self.nodes);
                    Running::Grid(v)
                }
                (Running::Val(y1), SiteOp::Fix(y2)) => {
                    ln += self.bond_val(y1, *y2).ln();
                    Running::Val(*y2)
                }
            };
            if let Running::Grid(v) = &mut run {
                normalize(v, &mut ln);
            }
        }

        match run {
            Running::Grid(v) => {
                let total = v.dot(&self.b);
                if total == 0.0 {
                    return Scaled { ln: f64::NEG_INFINITY, sign: 0.0 };
                }
                Scaled { ln: ln + total.abs().ln(), sign: sign * total.signum() }
            }
            Running::Val(y) => {
                ln += -0.5 * self.params.beta * onsite_potential(&self.params, y);
                Scaled { ln, sign }
            }
        }
    }

    /// `ln Z_N` for the open chain of `n` sites.
    pub fn log_z(&self, n: usize) -> f64 {
        self.contract(&vec![SiteOp::Free; n]).ln
    }

    /// `< prod q_{site}^{pow} >` over the open chain of `n` sites.
    /// Sites are 1-based.
    pub fn q_moment(&self, n: usize, spec: &[(usize, u32)]) -> f64 {
        let mut ops = vec![SiteOp::Free; n];
        for &(site, pow) in spec {
            assert!(site >= 1 && site <= n, "site out of range");
            ops[site - 1] = match ops[site - 1] {
                SiteOp::Power(k) => SiteOp::Power(k + pow),
                _ => SiteOp::Power(pow),
            };
        }
        let num = self.contract(&ops);
        let den = self.contract(&vec![SiteOp::Free; n]);
        num.ratio(den)
    }

    /// Marginal density `F^{(N)}_{s,x}` at the given fixed site values.
    pub fn marginal_density(&self, n: usize, points: &[(usize, f64)]) -> f64 {
        let mut ops = vec![SiteOp::Free; n];
        for &(site, y) in points {
            assert!(site >= 1 && site <= n, "site out of range");
            ops[site - 1] = SiteOp::Fix(y);
        }
        let num = self.contract(&ops);
        let den = self.contract(&vec![SiteOp::Free; n]);
        num.ratio(den)
    }

    /// `ln Q_N = ln tr(S^N)` for the periodic chain, for every `N` in
    /// `2..=n_max`, by normalized matrix powers.
    pub fn periodic_log_q(&self, n_max: usize) -> Vec<(usize, f64)> {
        assert!(n_max >= 2);
        let mut out = Vec::with_capacity(n_max - 1);
        let mut power = &self.s * &self.s;
        let mut ln_scale = 0.0f64;
        for n in 2..=n_max {
            if n > 2 {
                power = &self.s * power;
            }
            let norm = power.amax();
            if norm > 0.0 {
                power /= norm;
                ln_scale += norm.ln();
            }
            out.push((n, ln_scale + power.trace().ln()));
        }
        out
    }
}

/// Gaussian momentum moment `<p^{2k}> = (2k-1)!! / (beta omega)^k`.
pub fn p_moment(params: &ModelParams, two_k: u32) -> f64 {
    if two_k % 2 == 1 {
        return 0.0;
    }
    let k = two_k / 2;
    let mut df = 1.0;
    let mut i = 1;
    while i < two_k {
        df *= i as f64;
        i += 2;
    }
    df / (params.beta * params.omega()).powi(k as i32)
}

/// Moments with an internal grid-refinement check: values from grids `m`
/// and `2m` must agree to [`GRID_CONVERGENCE_LIMIT`].
pub fn q_moments_checked(
    params: &ModelParams,
    n: usize,
    specs: &[Vec<(usize, u32)>],
) -> Result<Vec<f64>, CoreError> {
    let m = default_grid(params);
    let coarse = TransferKernel::new(params, m)?;
    let fine = TransferKernel::new(params, 2 * m)?;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let a = coarse.q_moment(n, spec);
        let b = fine.q_moment(n, spec);
        let scale = b.abs().max(1e-300);
        let delta = (a - b).abs() / scale;
        if delta > GRID_CONVERGENCE_LIMIT {
            return Err(CoreError::GridConvergence {
                what: format!("moment {spec:?} on {n} sites"),
                delta,
                limit: GRID_CONVERGENCE_LIMIT,
            });
        }
        out.push(b);
    }
    Ok(out)
}

/// Number of maximal runs of consecutive indices.
pub fn block_count(sites: &[usize]) -> usize {
    if sites.is_empty() {
        return 0;
    }
    1 + sites.windows(2).filter(|w| w[1] != w[0] + 1).count()
}

/// First and last site of each block, deduplicated for singletons.
pub fn block_boundary_sites(sites: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..sites.len() {
        let last_of_block = i + 1 == sites.len() || sites[i + 1] != sites[i] + 1;
        if last_of_block {
            out.push(sites[start]);
            if sites[i] != sites[start] {
                out.push(sites[i]);
            }
            start = i + 1;
        }
    }
    out
}

/// Free-boundary comparison density `n_{s,x}` of the marginal lemma.
pub fn n_free(params: &ModelParams, sites: &[usize], values: &[f64]) -> f64 {
    let beta = params.beta;
    let w = params.omega();
    let mut expo = 0.0;
    for &v in values {
        expo += v * v / (2.0 * w) + v.powi(4) / (4.0 * w * w);
    }
    for k in 0..sites.len() {
        for l in 0..sites.len() {
            if sites[l] == sites[k] + 1 {
                let d = values[k] - values[l];
                expo += params.eps * d * d / (2.0 * w);
            }
        }
    }
    (-beta * expo).exp()
}

/// Fixed-boundary comparison density `n~_{s,x}`.
pub fn n_fixed(params: &ModelParams, sites: &[usize], values: &[f64]) -> f64 {
    let beta = params.beta;
    let w = params.omega();
    let mut expo = 0.0;
    for &v in values {
        expo += 0.5 * w * v * v + v.powi(4) / (4.0 * w * w);
    }
    for k in 0..sites.len() {
        for l in 0..sites.len() {
            if sites[l] == sites[k] + 1 {
                expo += params.eps * values[k] * values[l] / w;
            }
        }
    }
    (-beta * expo).exp()
}

/// Evaluation grid and site pattern for a marginal query.
#[derive(Clone, Debug)]
pub struct MarginalQuery {
    pub sites: Vec<usize>,
    pub points: Vec<Vec<f64>>,
}

impl MarginalQuery {
    pub fn block_count(&self) -> usize {
        block_count(&self.sites)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MarginalRatioRow {
    pub n_sites: usize,
    pub sup_upper: f64,
    pub inf_lower: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MarginalReport {
    pub offsets: Vec<usize>,
    pub block_count: usize,
    pub rows: Vec<MarginalRatioRow>,
    pub sup_variation: f64,
    pub inf_variation: f64,
    pub pass: bool,
}

/// Check N-uniformity of the normalized marginal-density ratios across a
/// range of chain lengths. The site pattern `offsets` (e.g. `[0]`, `[0,1]`,
/// `[0,2]`) is centered on each chain; the grid of evaluation values is
/// shared. Passes when the sup of the upper ratio and the inf of the lower
/// ratio each vary by less than 20% over the range and the inf is positive.
pub fn marginal_bound_check(
    eps: f64,
    beta: f64,
    offsets: &[usize],
    points: &[Vec<f64>],
    n_range: std::ops::RangeInclusive<usize>,
) -> Result<MarginalReport, CoreError> {
    let s = offsets.len();
    if s > 3 {
        return Err(CoreError::InvalidParam {
            field: "offsets",
            reason: format!("marginal check supports s <= 3, got {s}"),
        });
    }
    if *n_range.end() > 8 {
        return Err(CoreError::InvalidParam {
            field: "n_range",
            reason: "marginal check is a quadrature-regime oracle, N <= 8".into(),
        });
    }
    let span = *offsets.last().unwrap_or(&0);
    let mut rows = Vec::new();
    for n in n_range.clone() {
        let params = ModelParams::open(n, eps, beta)?;
        let w = params.omega();
        let anchor = (n - span).div_ceil(2).max(1);
        let sites: Vec<usize> = offsets.iter().map(|&o| anchor + o).collect();
        let x = block_count(&sites) as f64;
        let boundary = block_boundary_sites(&sites);
        let kernel = TransferKernel::new(&params, default_grid(&params))?;
        let norm = (beta / (2.0 * std::f64::consts::PI * w)).powf(s as f64 / 2.0);
        let mut sup_upper = f64::NEG_INFINITY;
        let mut inf_lower = f64::INFINITY;
        for values in points {
            assert_eq!(values.len(), s);
            let pts: Vec<(usize, f64)> =
                sites.iter().copied().zip(values.iter().copied()).collect();
            let f = kernel.marginal_density(n, &pts);
            let upper = f / (n_free(&params, &sites, values) * norm);
            let mut damp = 0.0;
            for (k, &site) in sites.iter().enumerate() {
                if boundary.contains(&site) {
                    damp += values[k].abs();
                }
            }
            let lower_env = n_fixed(&params, &sites, values)
                * norm
                * (-8.0 * eps * x * (beta / (2.0 * w)).sqrt() * damp).exp();
            let lower = f / lower_env;
            sup_upper = sup_upper.max(upper);
            inf_lower = inf_lower.min(lower);
        }
        rows.push(MarginalRatioRow { n_sites: n, sup_upper, inf_lower });
    }
    let sup_max = rows.iter().map(|r| r.sup_upper).fold(f64::NEG_INFINITY, f64::max);
    let sup_min = rows.iter().map(|r| r.sup_upper).fold(f64::INFINITY, f64::min);
    let inf_max = rows.iter().map(|r| r.inf_lower).fold(f64::NEG_INFINITY, f64::max);
    let inf_min = rows.iter().map(|r| r.inf_lower).fold(f64::INFINITY, f64::min);
    let sup_variation = sup_max / sup_min - 1.0;
    let inf_variation = inf_max / inf_min - 1.0;
    let pass = inf_min > 0.0 && sup_variation < 0.2 && inf_variation < 0.2;
    Ok(MarginalReport {
        offsets: offsets.to_vec(),
        block_count: block_count(&offsets.iter().map(|&o| o + 1).collect::<Vec<_>>()),
        rows,
        sup_variation,
        inf_variation,
        pass,
    })
}

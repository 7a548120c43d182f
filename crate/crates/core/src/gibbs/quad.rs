//! Gauss-Legendre quadrature nodes and weights (Newton iteration on the
//! Legendre recurrence), plus a dense nested-quadrature helper used as the
//! small-system oracle.

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for k in 0..m {
        // Tricomi-style initial guess, then Newton
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

/// Nodes and weights scaled to `[-half_width, half_width]`.
pub fn gauss_legendre_scaled(n: usize, half_width: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut x, mut w) = gauss_legendre(n);
    for v in &mut x {
        *v *= half_width;
    }
    for v in &mut w {
        *v *= half_width;
    }
    (x, w)
}

/// Dense nested quadrature of `f` over `[-l, l]^dim` with `m` nodes per
/// axis. Exponential cost; strictly an oracle for tiny systems.
pub fn nested_quadrature(dim: usize, m: usize, l: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let (x, w) = gauss_legendre_scaled(m, l);
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for d in 0..dim {
            point[d] = x[idx[d]];
            weight *= w[idx[d]];
        }
        total += weight * f(&point);
        // odometer
        let mut d = 0;
        loop {
            if d == dim {
                return total;
            }
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

use kglat_core::gibbs::{mcmc_run, SamplerConfig};
use kglat_core::model::{forces, total_energy};
use kglat_core::normalform::ModelParams;

fn drift(n: usize, beta: f64, eps: f64, dt_factor: f64, t_max: f64) -> f64 {
    let params = ModelParams::open(n, eps, beta).unwrap();
    let set = mcmc_run(&params, &SamplerConfig::new(300, 100, 7)).unwrap();
    let st = &set.states[set.states.len() - 1];
    let (mut q, mut p) = (st.q.clone(), st.p.clone());
    let w = params.omega();
    let dt = dt_factor / w;
    let steps = (t_max / dt) as usize;
    let e0 = total_energy(&params, &q, &p);
    let mut f = vec![0.0; n];
    let mut worst: f64 = 0.0;
    forces(&params, &q, true, &mut f);
    for s in 0..steps {
        for i in 0..n { p[i] += 0.5 * dt * f[i]; }
        for i in 0..n { q[i] += dt * w * p[i]; }
        forces(&params, &q, true, &mut f);
        for i in 0..n { p[i] += 0.5 * dt * f[i]; }
        if s % 50 == 0 || s == steps - 1 {
            let e = total_energy(&params, &q, &p);
            worst = worst.max(((e - e0) / e0).abs());
        }
    }
    worst
}

fn main() {
    for (n, beta) in [(64usize, 100.0), (256, 100.0), (1024, 100.0), (1024, 50.0), (256, 400.0)] {
        let d = drift(n, beta, 0.02, 0.01, 1000.0);
        println!("N={n:5} beta={beta:5}: max rel drift {d:.3e}");
    }
    for f in [0.01, 0.02, 0.05] {
        let d = drift(32, 100.0, 0.02, f, 1000.0);
        println!("N=32 dt={f}/w: {d:.3e}");
    }
}

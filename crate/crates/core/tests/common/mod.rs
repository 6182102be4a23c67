#![allow(dead_code)]

use rand::Rng;

/// Euclidean projection onto `{x : x_i ≥ lo, Σ x = 1}`.
pub fn project_simplex(y: &[f64], lo: f64) -> Vec<f64> {
    let n = y.len() as f64;
    let mass = 1.0 - n * lo;
    let shifted: Vec<f64> = y.iter().map(|v| v - lo).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - mass) / (k as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|v| (v - theta).max(0.0) + lo).collect()
}

/// `E_φ[Q] + λ·E_φ[log m − log φ]`.
pub fn tilt_objective(phi: &[f64], m: &[f64], q: &[f64], lambda: f64) -> f64 {
    phi.iter()
        .zip(m)
        .zip(q)
        .map(|((p, m), q)| p * q + lambda * p * (m.ln() - p.ln()))
        .sum()
}

/// Projected gradient ascent with backtracking on the simplex, started from
/// the uniform distribution.
pub fn maximise_on_simplex(m: &[f64], q: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let n = m.len();
    let lo = 1e-12;
    let mut phi = vec![1.0 / n as f64; n];
    let mut f = tilt_objective(&phi, m, q, lambda);
    let mut step = 1.0;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| q[i] + lambda * (m[i].ln() - phi[i].ln() - 1.0))
            .collect();
        loop {
            let y: Vec<f64> = (0..n).map(|i| phi[i] + step * grad[i]).collect();
            let cand = project_simplex(&y, lo);
            let fc = tilt_objective(&cand, m, q, lambda);
            let d: Vec<f64> = (0..n).map(|i| cand[i] - phi[i]).collect();
            let lin: f64 = (0..n).map(|i| grad[i] * d[i]).sum();
            let sq: f64 = d.iter().map(|v| v * v).sum();
            if fc >= f + lin - sq / (2.0 * step) || step < 1e-16 {
                phi = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
        step *= 1.5;
    }
    phi
}

/// Random tilt instance: floored prior row, Q in [−1, 1], λ in [0.5, 2].
pub fn tilt_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<f64>, f64) {
    let m = rpc_core::bounds::random_simplex(rng, 4, 0.1);
    let q = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    (m, q, rng.random_range(0.5..2.0))
}

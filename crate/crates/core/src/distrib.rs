//! Diagonal-Gaussian machinery: range squashing, densities, closed-form KL,
//! reparameterised sampling, and tanh-squashed action densities.
//!
//! Every function exists twice: once over plain vectors (used by evaluation
//! code and as a reference in tests) and once as graph builders that produce
//! per-row quantities for batched losses. All costs are in nats;
//! [`nats_to_bits`] converts for reporting.

use crate::numgraph::{Graph, NodeId};
use crate::scalar::Real;

/// Encoder and prior means are squashed into `[-MEAN_LIMIT, MEAN_LIMIT]`.
pub const MEAN_LIMIT: f64 = 30.0;
pub const STD_MIN: f64 = 0.1;
pub const STD_MAX: f64 = 10.0;
/// Floor inside the tanh change-of-variables log.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistribError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("standard deviation must be positive and finite (coordinate {0})")]
    InvalidStddev(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub stddev: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TanhGaussianAction<T> {
    pub pre_squash: Vec<T>,
    pub action: Vec<T>,
    pub log_prob: T,
}

fn check_dim(expected: usize, got: usize) -> Result<(), DistribError> {
    if expected == got {
        Ok(())
    } else {
        Err(DistribError::DimensionMismatch { expected, got })
    }
}

impl<T: Real> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, stddev: Vec<T>) -> Result<Self, DistribError> {
        check_dim(mean.len(), stddev.len())?;
        if let Some(i) = stddev.iter().position(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(DistribError::InvalidStddev(i));
        }
        Ok(Self { mean, stddev })
    }

    /// Zero mean, unit variance.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            stddev: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> T {
        let half_log_2pi_e = T::lit(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
        self.stddev.iter().map(|&s| half_log_2pi_e + s.ln()).sum()
    }

    /// Whether every coordinate satisfies the encoder/prior clamps.
    pub fn within_clamps(&self) -> bool {
        let (m, lo, hi) = (T::lit(MEAN_LIMIT), T::lit(STD_MIN), T::lit(STD_MAX));
        self.mean.iter().all(|&v| v >= -m && v <= m)
            && self.stddev.iter().all(|&s| s >= lo && s <= hi)
    }
}

/// `−low·tanh(t/−low)` for `t < 0`, `high·tanh(t/high)` otherwise.
pub fn squash_to_range<T: Real>(t: T, low: T, high: T) -> T {
    if t < T::zero() {
        let s = -low;
        s * (t / s).tanh()
    } else {
        high * (t / high).tanh()
    }
}

/// Raw network output to a standard deviation in `[STD_MIN, STD_MAX]`.
pub fn stddev_from_raw<T: Real>(raw: T) -> T {
    let sig = if raw >= T::zero() {
        T::one() / (T::one() + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (T::one() + e)
    };
    T::lit(STD_MIN) + T::lit(STD_MAX - STD_MIN) * sig
}

/// Per-coordinate `KL(p ‖ q)` in nats.
pub fn kl_per_coordinate<T: Real>(
    p: &DiagGaussian<T>,
    q: &DiagGaussian<T>,
) -> Result<Vec<T>, DistribError> {
    check_dim(p.dim(), q.dim())?;
    let half = T::lit(0.5);
    Ok((0..p.dim())
        .map(|i| {
            let (mp, sp, mq, sq) = (p.mean[i], p.stddev[i], q.mean[i], q.stddev[i]);
            let d = mp - mq;
            let term = (sq / sp).ln() + (sp * sp + d * d) / (T::lit(2.0) * sq * sq) - half;
            // Exact zero when the coordinates coincide; rounding can otherwise
            // leave a negative ulp.
            if term < T::zero() {
                T::zero()
            } else {
                term
            }
        })
        .collect())
}

pub fn kl_diag<T: Real>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<T, DistribError> {
    Ok(kl_per_coordinate(p, q)?.into_iter().sum())
}

pub fn log_prob<T: Real>(d: &DiagGaussian<T>, x: &[T]) -> Result<T, DistribError> {
    check_dim(d.dim(), x.len())?;
    let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    Ok((0..d.dim())
        .map(|i| {
            let z = (x[i] - d.mean[i]) / d.stddev[i];
            -half_log_2pi - d.stddev[i].ln() - T::lit(0.5) * z * z
        })
        .sum())
}

pub fn sample_reparam<T: Real>(d: &DiagGaussian<T>, noise: &[T]) -> Result<Vec<T>, DistribError> {
    check_dim(d.dim(), noise.len())?;
    Ok(d.mean
        .iter()
        .zip(&d.stddev)
        .zip(noise)
        .map(|((&m, &s), &e)| m + s * e)
        .collect())
}

/// Density of `tanh(pre_squash)` when `pre_squash ~ d`.
pub fn tanh_policy_log_prob<T: Real>(
    d: &DiagGaussian<T>,
    pre_squash: &[T],
) -> Result<TanhGaussianAction<T>, DistribError> {
    let base = log_prob(d, pre_squash)?;
    let eps = T::lit(TANH_EPS);
    let action: Vec<T> = pre_squash.iter().map(|u| u.tanh()).collect();
    let correction: T = action.iter().map(|&a| (T::one() - a * a + eps).ln()).sum();
    Ok(TanhGaussianAction {
        pre_squash: pre_squash.to_vec(),
        action,
        log_prob: base - correction,
    })
}

pub fn nats_to_bits<T: Real>(x: T) -> T {
    x / T::LN_2()
}

pub fn bits_to_nats<T: Real>(x: T) -> T {
    x * T::LN_2()
}

// ---- graph builders ---------------------------------------------------------

/// Batched diagonal Gaussian living in a graph: `mean` and `stddev` are
/// `B×K` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianNodes {
    pub mean: NodeId,
    pub stddev: NodeId,
}

/// Split a `B×2K` raw head into a clamped Gaussian. `mean_base`, when given,
/// is added to the raw mean before squashing (difference parameterisation).
pub fn gaussian_head<T: Real>(
    g: &mut Graph<T>,
    raw: NodeId,
    dim: usize,
    mean_base: Option<NodeId>,
) -> GaussianNodes {
    let raw_mean = g.slice(raw, 0, dim);
    let raw_std = g.slice(raw, dim, 2 * dim);
    let pre = match mean_base {
        Some(b) => g.add(raw_mean, b),
        None => raw_mean,
    };
    let mean = g.squash_range(pre, T::lit(-MEAN_LIMIT), T::lit(MEAN_LIMIT));
    let sig = g.sigmoid(raw_std);
    let scaled = g.scale(sig, T::lit(STD_MAX - STD_MIN));
    let stddev = g.offset(scaled, T::lit(STD_MIN));
    GaussianNodes { mean, stddev }
}

/// Row-wise log-density, `B×1`.
pub fn log_prob_node<T: Real>(g: &mut Graph<T>, d: GaussianNodes, x: NodeId) -> NodeId {
    let diff = g.sub(x, d.mean);
    let z = g.div(diff, d.stddev);
    let z2 = g.square(z);
    let half_z2 = g.scale(z2, T::lit(-0.5));
    let log_std = g.ln(d.stddev);
    let t = g.sub(half_z2, log_std);
    let per = g.offset(t, T::lit(-0.5 * (2.0 * std::f64::consts::PI).ln()));
    g.sum_cols(per)
}

/// Row-wise `KL(p ‖ q)`, `B×1`.
pub fn kl_node<T: Real>(g: &mut Graph<T>, p: GaussianNodes, q: GaussianNodes) -> NodeId {
    let log_ratio = {
        let lq = g.ln(q.stddev);
        let lp = g.ln(p.stddev);
        g.sub(lq, lp)
    };
    let vp = g.square(p.stddev);
    let diff = g.sub(p.mean, q.mean);
    let d2 = g.square(diff);
    let num = g.add(vp, d2);
    let vq = g.square(q.stddev);
    let ratio = g.div(num, vq);
    let half = g.scale(ratio, T::lit(0.5));
    let t = g.add(log_ratio, half);
    let per = g.offset(t, T::lit(-0.5));
    g.sum_cols(per)
}

/// `mean + stddev ⊙ noise`.
pub fn sample_node<T: Real>(g: &mut Graph<T>, d: GaussianNodes, noise: NodeId) -> NodeId {
    let s = g.mul(d.stddev, noise);
    g.add(d.mean, s)
}

/// Returns `(action, log_prob)` for `action = tanh(pre)`, `pre ~ d`.
pub fn tanh_log_prob_node<T: Real>(
    g: &mut Graph<T>,
    d: GaussianNodes,
    pre: NodeId,
) -> (NodeId, NodeId) {
    let base = log_prob_node(g, d, pre);
    let action = g.tanh(pre);
    let a2 = g.square(action);
    let one_minus = g.scale(a2, -T::one());
    let inner = g.offset(one_minus, T::one() + T::lit(TANH_EPS));
    let logs = g.ln(inner);
    let corr = g.sum_cols(logs);
    let lp = g.sub(base, corr);
    (action, lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgraph::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn g1(m: f64, s: f64) -> DiagGaussian<f64> {
        DiagGaussian::new(vec![m], vec![s]).unwrap()
    }

    const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

    #[test]
    fn squash_examples() {
        assert_eq!(squash_to_range::<f64>(0.0, -30.0, 30.0), 0.0);
        assert!((squash_to_range::<f64>(1e6, -30.0, 30.0) - 30.0).abs() < 1e-12);
        assert!((squash_to_range::<f64>(-1e6, -30.0, 30.0) + 30.0).abs() < 1e-12);
        let v = squash_to_range::<f64>(30.0, -30.0, 30.0);
        assert!((v - 30.0 * 1f64.tanh()).abs() < 1e-12);
        assert!((v - 22.8478).abs() < 1e-4);
    }

    #[test]
    fn squash_is_smooth_monotone_with_unit_slope_at_zero() {
        let h = 1e-5;
        let slope = (squash_to_range::<f64>(h, -30.0, 30.0) - squash_to_range::<f64>(-h, -30.0, 30.0)) / (2.0 * h);
        assert!((slope - 1.0).abs() < 1e-9);
        // asymmetric range: still continuous and unit slope at 0
        let slope = (squash_to_range::<f64>(h, -2.0, 5.0) - squash_to_range::<f64>(-h, -2.0, 5.0)) / (2.0 * h);
        assert!((slope - 1.0).abs() < 1e-9);
        let mut prev = f64::NEG_INFINITY;
        for k in -40..=40 {
            let v = squash_to_range::<f64>(k as f64 * 0.25, -2.0, 5.0);
            assert!(v > prev && v > -2.0 && v < 5.0);
            prev = v;
        }
    }

    #[test]
    fn stddev_parameterisation_is_bounded() {
        assert!((stddev_from_raw::<f64>(0.0) - 5.05).abs() < 1e-12);
        assert!(stddev_from_raw::<f64>(-800.0) >= STD_MIN);
        assert!(stddev_from_raw::<f64>(800.0) <= STD_MAX);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap(), 0.0);
        assert!((kl_diag(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_diag(&g1(0.0, 2.0), &g1(0.0, 1.0)).unwrap();
        let expected = -(2f64.ln()) + 2.0 - 0.5;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let p = DiagGaussian::<f64>::standard(2);
        let q = DiagGaussian::<f64>::standard(3);
        assert_eq!(
            kl_diag(&p, &q).unwrap_err(),
            DistribError::DimensionMismatch { expected: 2, got: 3 }
        );
        assert!(kl_per_coordinate(&p, &q).is_err());
        assert!(log_prob(&p, &[0.0]).is_err());
        assert!(sample_reparam(&p, &[0.0]).is_err());
    }

    #[test]
    fn per_coordinate_examples() {
        let p = DiagGaussian::<f64>::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(kl_per_coordinate(&p, &p).unwrap(), vec![0.0, 0.0]);
        let q = DiagGaussian::<f64>::new(vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
        let per = kl_per_coordinate(&p, &q).unwrap();
        assert_eq!(per[0], 0.0);
        assert!(per[1] > 0.0);
    }

    #[test]
    fn log_prob_examples() {
        assert!((log_prob(&g1(0.0, 1.0), &[0.0]).unwrap() + HALF_LOG_2PI).abs() < 1e-15);
        let d = DiagGaussian::new(vec![0.5, -1.0, 2.0], vec![1.0; 3]).unwrap();
        assert!((log_prob(&d, &d.mean.clone()).unwrap() + 3.0 * HALF_LOG_2PI).abs() < 1e-14);
    }

    #[test]
    fn reparam_examples() {
        let d = DiagGaussian::new(vec![1.5, -2.0], vec![0.1, 3.0]).unwrap();
        assert_eq!(sample_reparam(&d, &[0.0, 0.0]).unwrap(), d.mean);
        let s: Vec<f64> = sample_reparam(&d, &[1.0, 0.0]).unwrap();
        assert!((s[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn invalid_stddev_rejected() {
        assert_eq!(
            DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap_err(),
            DistribError::InvalidStddev(1)
        );
    }

    #[test]
    fn tanh_log_prob_at_origin() {
        let r = tanh_policy_log_prob(&g1(0.0, 1.0), &[0.0]).unwrap();
        let expected = -HALF_LOG_2PI - (1.0f64 + 1e-6).ln();
        assert!((r.log_prob - expected).abs() < 1e-15);
        assert!((r.log_prob + 0.9189).abs() < 1e-4);
        assert_eq!(r.action, vec![0.0]);
    }

    #[test]
    fn tanh_density_integrates_to_one() {
        // Midpoint rule over a ∈ (−1, 1), substituting u = atanh(a).
        let d = g1(0.4, 0.7);
        let n = 400_000;
        let mut total = 0.0;
        for k in 0..n {
            let a = -1.0 + (k as f64 + 0.5) * 2.0 / n as f64;
            let u = a.atanh();
            let lp = tanh_policy_log_prob(&d, &[u]).unwrap().log_prob;
            total += lp.exp() * 2.0 / n as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn bits_conversion() {
        assert_eq!(nats_to_bits::<f64>(0.0), 0.0);
        assert!((nats_to_bits::<f64>(2f64.ln()) - 1.0).abs() < 1e-15);
        assert!((nats_to_bits::<f64>(1.0) - std::f64::consts::LOG2_E).abs() < 1e-15);
        assert!((bits_to_nats::<f64>(nats_to_bits::<f64>(0.37)) - 0.37).abs() < 1e-15);
    }

    fn random_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DiagGaussian<f64> {
        use rand::Rng;
        DiagGaussian::new(
            (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..dim).map(|_| rng.random_range(0.3..2.0)).collect(),
        )
        .unwrap()
    }

    /// MC mean and standard error of `f(x)`, `x ~ p`.
    fn mc(p: &DiagGaussian<f64>, n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e: Vec<f64> = (0..p.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = sample_reparam(p, &e).unwrap();
            let v = f(&x);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn log_prob_mc_mean_is_negative_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_gaussian(&mut rng, 3);
        let (mean, se) = mc(&p, 100_000, 4, |x| log_prob(&p, x).unwrap());
        assert!((mean + p.entropy()).abs() < 3.0 * se, "{mean} vs {}", -p.entropy());
    }

    #[test]
    fn sample_mean_matches_mu() {
        let p = DiagGaussian::new(vec![1.25], vec![0.8]).unwrap();
        let n = 100_000;
        let (mean, _) = mc(&p, n, 9, |x| x[0]);
        assert!((mean - 1.25).abs() < 3.0 * 0.8 / (n as f64).sqrt());
    }

    #[test]
    fn kl_matches_monte_carlo_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_gaussian(&mut rng, 4);
        let q = random_gaussian(&mut rng, 4);
        let kl = kl_diag(&p, &q).unwrap();
        let (mean, se) = mc(&p, 100_000, 6, |x| {
            log_prob(&p, x).unwrap() - log_prob(&q, x).unwrap()
        });
        assert!((kl - mean).abs() < 3.0 * se, "{kl} vs {mean} ± {se}");
    }

    #[test]
    fn graph_builders_agree_with_vector_versions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_gaussian(&mut rng, 3);
        let q = random_gaussian(&mut rng, 3);
        let x = vec![0.2, -0.7, 1.1];
        let mut g = Graph::<f64>::new();
        let pm = g.input_with("pm", Tensor::row(&p.mean));
        let ps = g.input_with("ps", Tensor::row(&p.stddev));
        let qm = g.input_with("qm", Tensor::row(&q.mean));
        let qs = g.input_with("qs", Tensor::row(&q.stddev));
        let xn = g.input_with("x", Tensor::row(&x));
        let pn = GaussianNodes { mean: pm, stddev: ps };
        let qn = GaussianNodes { mean: qm, stddev: qs };
        let kl = kl_node(&mut g, pn, qn);
        let lp = log_prob_node(&mut g, pn, xn);
        let (act, tlp) = tanh_log_prob_node(&mut g, pn, xn);
        let smp = sample_node(&mut g, pn, xn);
        g.eval().unwrap();
        assert!((g.value(kl).unwrap().item() - kl_diag(&p, &q).unwrap()).abs() < 1e-12);
        assert!((g.value(lp).unwrap().item() - log_prob(&p, &x).unwrap()).abs() < 1e-12);
        let t = tanh_policy_log_prob(&p, &x).unwrap();
        assert!((g.value(tlp).unwrap().item() - t.log_prob).abs() < 1e-12);
        assert_eq!(g.value(act).unwrap().data(), t.action.as_slice());
        assert_eq!(g.value(smp).unwrap().data(), sample_reparam(&p, &x).unwrap().as_slice());
    }

    #[test]
    fn gaussian_head_respects_clamps() {
        let mut g = Graph::<f64>::new();
        let raw = g.input_with(
            "raw",
            Tensor::matrix(2, 4, vec![1e4, -1e4, 900.0, -900.0, 0.0, 3.0, 0.0, -2.0]),
        );
        let head = gaussian_head(&mut g, raw, 2, None);
        g.eval().unwrap();
        let m = g.value(head.mean).unwrap();
        let s = g.value(head.stddev).unwrap();
        assert!(m.data().iter().all(|v| v.abs() <= MEAN_LIMIT));
        assert!(s.data().iter().all(|&v| (STD_MIN..=STD_MAX).contains(&v)));
        assert_eq!(s.at(1, 0), 0.1 + 9.9 * 0.5);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_iff_equal(
            params in prop::collection::vec((-5.0f64..5.0, 0.1f64..5.0, -5.0f64..5.0, 0.1f64..5.0), 1..6)
        ) {
            let p = DiagGaussian::new(params.iter().map(|t| t.0).collect(), params.iter().map(|t| t.1).collect()).unwrap();
            let q = DiagGaussian::new(params.iter().map(|t| t.2).collect(), params.iter().map(|t| t.3).collect()).unwrap();
            let kl = kl_diag(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
            let per = kl_per_coordinate(&p, &q).unwrap();
            prop_assert!(per.iter().all(|&v| v >= 0.0));
            let sum: f64 = per.iter().sum();
            prop_assert!((sum - kl).abs() <= 1e-12 * kl.max(1.0));
            if p != q {
                prop_assert!(kl > 0.0);
            }
        }
    }
}

//! Exact checks of the open-loop return bounds on tabular MDPs with discrete
//! latents, plus the closed-form optimal encoder.
//!
//! Trajectories run for `t = 1..=H`; returns are `Σ_t γ^t r(s_t, a_t)`.
//! Under the reactive policy `z_t ~ φ(·|s_t)`; under the open-loop policy
//! `z_1 ~ m₁` and `z_{t+1} ~ m(·|z_t, a_t)`. In both, `a_t ~ π(·|z_t)` and the
//! true dynamics move the state.

use rand::Rng;

/// Maximum number of length-H trajectories the enumerator will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;
const ROW_TOL: f64 = 1e-12;
/// Floor on every entry of randomly drawn tables.
pub const TABLE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundsError {
    #[error("enumeration would visit {paths:.3e} trajectories (limit {limit:.0e})")]
    EnumerationBudget { paths: f64, limit: f64 },
    #[error("reward table must be strictly positive (found {0})")]
    NonPositiveReward(f64),
    #[error("invalid table `{0}`")]
    InvalidTable(String),
    #[error("discount must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("KL routes disagree: direct {direct} vs log-ratio {log_ratio}")]
    RoutesDisagree { direct: f64, log_ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Reactive,
    OpenLoop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_s: usize,
    pub n_a: usize,
    /// `p[(s * n_a + a) * n_s + s2]`
    pub p: Vec<f64>,
    /// `r[s * n_a + a]`
    pub r: Vec<f64>,
    pub p1: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicyTriple {
    pub n_z: usize,
    /// `encoder[s * n_z + z]`
    pub encoder: Vec<f64>,
    pub prior_init: Vec<f64>,
    /// `prior[(z * n_a + a) * n_z + z2]`
    pub prior: Vec<f64>,
    /// `decoder[z * n_a + a]`
    pub decoder: Vec<f64>,
}

fn check_rows(name: &str, table: &[f64], width: usize, rows: usize) -> Result<(), BoundsError> {
    if table.len() != width * rows || width == 0 {
        return Err(BoundsError::InvalidTable(format!(
            "{name}: expected {rows}x{width} entries, got {}",
            table.len()
        )));
    }
    for (i, row) in table.chunks(width).enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BoundsError::InvalidTable(format!("{name}: row {i} has a negative entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(BoundsError::InvalidTable(format!("{name}: row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Random probability row with every entry at least `floor`.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    assert!(floor * n as f64 <= 1.0);
    let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-9).collect();
    let total: f64 = u.iter().sum();
    let free = 1.0 - floor * n as f64;
    let mut row: Vec<f64> = u.iter().map(|x| floor + free * x / total).collect();
    // Put the rounding residue on the largest entry so the row sums to 1.
    let residue = 1.0 - row.iter().sum::<f64>();
    let imax = (0..n)
        .max_by(|&i, &j| row[i].total_cmp(&row[j]))
        .unwrap();
    row[imax] += residue;
    row
}

fn random_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, n: usize) -> Vec<f64> {
    (0..rows)
        .flat_map(|_| random_simplex(rng, n, TABLE_FLOOR))
        .collect()
}

impl TabularMdp {
    pub fn new(
        n_s: usize,
        n_a: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        p1: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self, BoundsError> {
        let mdp = Self {
            n_s,
            n_a,
            p,
            r,
            p1,
            gamma,
            horizon,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        check_rows("P", &self.p, self.n_s, self.n_s * self.n_a)?;
        check_rows("p1", &self.p1, self.n_s, 1)?;
        if self.r.len() != self.n_s * self.n_a {
            return Err(BoundsError::InvalidTable("r: wrong size".into()));
        }
        if let Some(bad) = self.r.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(BoundsError::NonPositiveReward(*bad));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(BoundsError::BadDiscount(self.gamma));
        }
        Ok(())
    }

    /// Random MDP with floored transition rows and rewards in `[0.05, 1]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_s: usize,
        n_a: usize,
        gamma: f64,
        horizon: usize,
    ) -> Self {
        let p = random_rows(rng, n_s * n_a, n_s);
        let r = (0..n_s * n_a).map(|_| rng.random_range(0.05..1.0)).collect();
        let p1 = random_simplex(rng, n_s, TABLE_FLOOR);
        Self {
            n_s,
            n_a,
            p,
            r,
            p1,
            gamma,
            horizon,
        }
    }

    #[inline]
    pub fn trans(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_a + a) * self.n_s + s2]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_a + a]
    }

    pub fn max_reward(&self) -> f64 {
        self.r.iter().copied().fold(f64::MIN, f64::max)
    }

    /// `γ^H · max r / (1 − γ)`: bounds the return beyond the horizon.
    pub fn tail_bound(&self) -> f64 {
        self.gamma.powi(self.horizon as i32) * self.max_reward().max(0.0) / (1.0 - self.gamma)
    }

    /// Largest truncated return `Σ_{t≤H} γ^t r` of any trajectory with
    /// nonzero probability under some action sequence.
    pub fn r_max(&self) -> f64 {
        // best[s] = best return-to-go from state s at the current step.
        let mut best = vec![0.0; self.n_s];
        for t in (1..=self.horizon).rev() {
            let g = self.gamma.powi(t as i32);
            let next: Vec<f64> = (0..self.n_s)
                .map(|s| {
                    (0..self.n_a)
                        .map(|a| {
                            let future = if t == self.horizon {
                                0.0
                            } else {
                                (0..self.n_s)
                                    .filter(|&s2| self.trans(s, a, s2) > 0.0)
                                    .map(|s2| best[s2])
                                    .fold(f64::MIN, f64::max)
                            };
                            g * self.reward(s, a) + future
                        })
                        .fold(f64::MIN, f64::max)
                })
                .collect();
            best = next;
        }
        (0..self.n_s)
            .filter(|&s| self.p1[s] > 0.0)
            .map(|s| best[s])
            .fold(f64::MIN, f64::max)
    }
}

impl TabularPolicyTriple {
    pub fn new(
        n_z: usize,
        encoder: Vec<f64>,
        prior_init: Vec<f64>,
        prior: Vec<f64>,
        decoder: Vec<f64>,
        mdp: &TabularMdp,
    ) -> Result<Self, BoundsError> {
        let t = Self {
            n_z,
            encoder,
            prior_init,
            prior,
            decoder,
        };
        t.validate(mdp)?;
        Ok(t)
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), BoundsError> {
        check_rows("encoder", &self.encoder, self.n_z, mdp.n_s)?;
        check_rows("prior_init", &self.prior_init, self.n_z, 1)?;
        check_rows("prior", &self.prior, self.n_z, self.n_z * mdp.n_a)?;
        check_rows("decoder", &self.decoder, mdp.n_a, self.n_z)?;
        let all = [&self.encoder, &self.prior_init, &self.prior, &self.decoder];
        if all.iter().any(|t| t.iter().any(|v| *v <= 0.0)) {
            return Err(BoundsError::InvalidTable(
                "policy tables must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, mdp: &TabularMdp, n_z: usize) -> Self {
        Self {
            n_z,
            encoder: random_rows(rng, mdp.n_s, n_z),
            prior_init: random_simplex(rng, n_z, TABLE_FLOOR),
            prior: random_rows(rng, n_z * mdp.n_a, n_z),
            decoder: random_rows(rng, n_z, mdp.n_a),
        }
    }

    /// Encoder ignores the state and the prior ignores its inputs, all
    /// sharing the row `q`; reactive and open-loop trajectories then coincide.
    pub fn state_independent(mdp: &TabularMdp, q: &[f64], decoder: Vec<f64>) -> Self {
        let n_z = q.len();
        Self {
            n_z,
            encoder: q.repeat(mdp.n_s),
            prior_init: q.to_vec(),
            prior: q.repeat(n_z * mdp.n_a),
            decoder,
        }
    }

    #[inline]
    pub fn enc(&self, s: usize, z: usize) -> f64 {
        self.encoder[s * self.n_z + z]
    }

    #[inline]
    pub fn dec(&self, z: usize, a: usize, n_a: usize) -> f64 {
        self.decoder[z * n_a + a]
    }

    #[inline]
    pub fn pri(&self, z: usize, a: usize, z2: usize, n_a: usize) -> f64 {
        self.prior[(z * n_a + a) * self.n_z + z2]
    }
}

fn path_count(mdp: &TabularMdp, triple: &TabularPolicyTriple) -> f64 {
    ((mdp.n_s * mdp.n_a * triple.n_z) as f64).powi(mdp.horizon as i32)
}

fn check_budget(mdp: &TabularMdp, triple: &TabularPolicyTriple) -> Result<(), BoundsError> {
    let paths = path_count(mdp, triple);
    if paths > ENUMERATION_LIMIT {
        return Err(BoundsError::EnumerationBudget {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Visits every length-H trajectory, handing the leaf callback the log
/// probability under each policy and the discounted return.
struct Enumerator<'a, F: FnMut(f64, f64, f64)> {
    mdp: &'a TabularMdp,
    triple: &'a TabularPolicyTriple,
    leaf: F,
}

impl<F: FnMut(f64, f64, f64)> Enumerator<'_, F> {
    fn run(&mut self) {
        for s in 0..self.mdp.n_s {
            let lp = self.mdp.p1[s].ln();
            for z in 0..self.triple.n_z {
                let lr = lp + self.triple.enc(s, z).ln();
                let lo = lp + self.triple.prior_init[z].ln();
                self.pick_action(1, s, z, lr, lo, 0.0);
            }
        }
    }

    fn pick_action(&mut self, t: usize, s: usize, z: usize, lr: f64, lo: f64, ret: f64) {
        let n_a = self.mdp.n_a;
        for a in 0..n_a {
            let la = self.triple.dec(z, a, n_a).ln();
            let ret = ret + self.mdp.gamma.powi(t as i32) * self.mdp.reward(s, a);
            if t == self.mdp.horizon {
                (self.leaf)(lr + la, lo + la, ret);
                continue;
            }
            for s2 in 0..self.mdp.n_s {
                let ls = self.mdp.trans(s, a, s2).ln();
                for z2 in 0..self.triple.n_z {
                    let lr2 = lr + la + ls + self.triple.enc(s2, z2).ln();
                    let lo2 = lo + la + ls + self.triple.pri(z, a, z2, n_a).ln();
                    self.pick_action(t + 1, s2, z2, lr2, lo2, ret);
                }
            }
        }
    }
}

fn enumerate<F: FnMut(f64, f64, f64)>(mdp: &TabularMdp, triple: &TabularPolicyTriple, leaf: F) {
    if mdp.horizon == 0 {
        return;
    }
    Enumerator { mdp, triple, leaf }.run();
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumeratedReturn {
    pub value: f64,
    pub tail_bound: f64,
}

/// Exact truncated expected return by summing over every trajectory.
pub fn enumerate_return(
    mdp: &TabularMdp,
    triple: &TabularPolicyTriple,
    mode: Mode,
) -> Result<EnumeratedReturn, BoundsError> {
    check_budget(mdp, triple)?;
    let mut value = 0.0;
    enumerate(mdp, triple, |lr, lo, ret| {
        let lw = if mode == Mode::Reactive { lr } else { lo };
        value += lw.exp() * ret;
    });
    Ok(EnumeratedReturn {
        value,
        tail_bound: mdp.tail_bound(),
    })
}

/// Joint law of `(s_t, z_t)` at each step, `t = 1..=H`.
fn marginals(mdp: &TabularMdp, triple: &TabularPolicyTriple, mode: Mode) -> Vec<Vec<f64>> {
    let (n_s, n_a, n_z) = (mdp.n_s, mdp.n_a, triple.n_z);
    let mut out = Vec::with_capacity(mdp.horizon);
    if mdp.horizon == 0 {
        return out;
    }
    let mut cur = vec![0.0; n_s * n_z];
    for s in 0..n_s {
        for z in 0..n_z {
            let qz = match mode {
                Mode::Reactive => triple.enc(s, z),
                Mode::OpenLoop => triple.prior_init[z],
            };
            cur[s * n_z + z] = mdp.p1[s] * qz;
        }
    }
    for _ in 1..mdp.horizon {
        let mut next = vec![0.0; n_s * n_z];
        for s in 0..n_s {
            for z in 0..n_z {
                let w = cur[s * n_z + z];
                for a in 0..n_a {
                    let wa = w * triple.dec(z, a, n_a);
                    for s2 in 0..n_s {
                        let ws = wa * mdp.trans(s, a, s2);
                        for z2 in 0..n_z {
                            let qz = match mode {
                                Mode::Reactive => triple.enc(s2, z2),
                                Mode::OpenLoop => triple.pri(z, a, z2, n_a),
                            };
                            next[s2 * n_z + z2] += ws * qz;
                        }
                    }
                }
            }
        }
        out.push(std::mem::replace(&mut cur, next));
    }
    out.push(cur);
    out
}

/// Per-step expectations under the reactive policy of `log r(s_t, a_t)` and
/// of `log m(z_t | z_{t−1}, a_{t−1}) − log φ(z_t | s_t)` (with `m₁` at t = 1).
fn reactive_log_terms(mdp: &TabularMdp, triple: &TabularPolicyTriple) -> (Vec<f64>, Vec<f64>) {
    let (n_s, n_a, n_z) = (mdp.n_s, mdp.n_a, triple.n_z);
    let marg = marginals(mdp, triple, Mode::Reactive);
    let mut log_r = Vec::with_capacity(mdp.horizon);
    let mut log_ratio = Vec::with_capacity(mdp.horizon);
    for (t, cur) in marg.iter().enumerate() {
        let mut lr = 0.0;
        for s in 0..n_s {
            for z in 0..n_z {
                for a in 0..n_a {
                    lr += cur[s * n_z + z] * triple.dec(z, a, n_a) * mdp.reward(s, a).ln();
                }
            }
        }
        log_r.push(lr);
        let x = if t == 0 {
            let mut x = 0.0;
            for s in 0..n_s {
                for z in 0..n_z {
                    x += cur[s * n_z + z] * (triple.prior_init[z].ln() - triple.enc(s, z).ln());
                }
            }
            x
        } else {
            let prev = &marg[t - 1];
            let mut x = 0.0;
            for s in 0..n_s {
                for z in 0..n_z {
                    for a in 0..n_a {
                        let wa = prev[s * n_z + z] * triple.dec(z, a, n_a);
                        for s2 in 0..n_s {
                            let ws = wa * mdp.trans(s, a, s2);
                            for z2 in 0..n_z {
                                let q = triple.enc(s2, z2);
                                x += ws * q * (triple.pri(z, a, z2, n_a).ln() - q.ln());
                            }
                        }
                    }
                }
            }
            x
        };
        log_ratio.push(x);
    }
    (log_r, log_ratio)
}

/// Exact truncated expected return by propagating state-latent marginals;
/// no enumeration budget.
pub fn dp_return(mdp: &TabularMdp, triple: &TabularPolicyTriple, mode: Mode) -> f64 {
    let (n_s, n_a, n_z) = (mdp.n_s, mdp.n_a, triple.n_z);
    marginals(mdp, triple, mode)
        .iter()
        .enumerate()
        .map(|(i, cur)| {
            let mut er = 0.0;
            for s in 0..n_s {
                for z in 0..n_z {
                    for a in 0..n_a {
                        er += cur[s * n_z + z] * triple.dec(z, a, n_a) * mdp.reward(s, a);
                    }
                }
            }
            mdp.gamma.powi(i as i32 + 1) * er
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryKl {
    /// `Σ_τ p^reactive(τ) · log(p^reactive(τ) / p^open(τ))`.
    pub direct: f64,
    /// `E_reactive[Σ_t log φ(z_t|s_t) − log m(z_t|z_{t−1}, a_{t−1})]`.
    pub log_ratio: f64,
}

/// KL between reactive and open-loop trajectory laws, computed both by full
/// enumeration and as the expected encoder-prior log ratio.
pub fn trajectory_kl(
    mdp: &TabularMdp,
    triple: &TabularPolicyTriple,
) -> Result<TrajectoryKl, BoundsError> {
    check_budget(mdp, triple)?;
    let mut direct = 0.0;
    enumerate(mdp, triple, |lr, lo, _| direct += lr.exp() * (lr - lo));
    let (_, x) = reactive_log_terms(mdp, triple);
    let log_ratio = -x.iter().sum::<f64>();
    if (direct - log_ratio).abs() > 1e-10 {
        return Err(BoundsError::RoutesDisagree { direct, log_ratio });
    }
    Ok(TrajectoryKl { direct, log_ratio })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma2Check {
    pub open_return: f64,
    pub reactive_return: f64,
    pub kl: f64,
    pub r_max: f64,
    pub tail_bound: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Lemma2Check {
    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Open-loop return versus reactive return minus `R_max·√(KL/2)`, with
/// `2·tail` slack for truncation.
pub fn check_lemma2(
    mdp: &TabularMdp,
    triple: &TabularPolicyTriple,
) -> Result<Lemma2Check, BoundsError> {
    let open = enumerate_return(mdp, triple, Mode::OpenLoop)?;
    let reactive = enumerate_return(mdp, triple, Mode::Reactive)?;
    let kl = trajectory_kl(mdp, triple)?.direct.max(0.0);
    let r_max = mdp.r_max();
    let tail = open.tail_bound;
    let lhs = open.value;
    let rhs = reactive.value - r_max * (kl / 2.0).sqrt() - 2.0 * tail;
    Ok(Lemma2Check {
        open_return: open.value,
        reactive_return: reactive.value,
        kl,
        r_max,
        tail_bound: tail,
        lhs,
        rhs,
        holds: lhs >= rhs,
    })
}

/// `f(x) = γ/(1−γ) · e^{x/γ}`.
pub fn lemma1_f(x: f64, gamma: f64) -> f64 {
    gamma / (1.0 - gamma) * (x / gamma).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Check {
    /// Truncated open-loop return.
    pub lhs: f64,
    /// Truncated compression objective
    /// `E_reactive[Σ_t γ^t ((1−γ) log r + log m − log φ)]`.
    pub objective: f64,
    /// `f(objective − objective_tail)`.
    pub rhs: f64,
    /// Upper bound on the open-loop return beyond the horizon.
    pub return_tail: f64,
    /// Upper bound on the magnitude of the objective beyond the horizon.
    pub objective_tail: f64,
    pub holds: bool,
}

impl Lemma1Check {
    pub fn margin(&self) -> f64 {
        self.lhs + self.return_tail - self.rhs
    }
}

/// Open-loop return against the exponentiated compression objective.
///
/// Both sides are exact over the first H steps (state-latent marginals, so H
/// is not limited by the enumeration budget). The truncated tails are bounded
/// and credited to the open-loop side, so a violation here is a violation of
/// the infinite-horizon inequality.
pub fn check_lemma1(
    mdp: &TabularMdp,
    triple: &TabularPolicyTriple,
) -> Result<Lemma1Check, BoundsError> {
    mdp.validate()?;
    triple.validate(mdp)?;
    let g = mdp.gamma;
    let lhs = dp_return(mdp, triple, Mode::OpenLoop);
    let (log_r, x) = reactive_log_terms(mdp, triple);
    let objective: f64 = log_r
        .iter()
        .zip(&x)
        .enumerate()
        .map(|(i, (lr, xi))| g.powi(i as i32 + 1) * ((1.0 - g) * lr + xi))
        .sum();
    // Per-step objective magnitude: |(1−γ) log r| + max(−log m, −log φ).
    let min_r = mdp.r.iter().copied().fold(f64::MAX, f64::min);
    let max_r = mdp.max_reward();
    let min_table = triple
        .encoder
        .iter()
        .chain(&triple.prior)
        .copied()
        .fold(f64::MAX, f64::min);
    let per_step = (1.0 - g) * min_r.ln().abs().max(max_r.ln().abs()) - min_table.ln();
    let geometric_tail = g.powi(mdp.horizon as i32 + 1) / (1.0 - g);
    let objective_tail = geometric_tail * per_step;
    let return_tail = geometric_tail * max_r;
    let rhs = lemma1_f(objective - objective_tail, g);
    Ok(Lemma1Check {
        lhs,
        objective,
        rhs,
        return_tail,
        objective_tail,
        holds: lhs + return_tail >= rhs,
    })
}

/// Closed-form maximiser over the simplex of
/// `E_φ[Q] + λ·E_φ[log m − log φ]`: `φ*[z] ∝ m[z]·exp(Q[z]/λ)`.
pub fn optimal_encoder_tilt(
    prior_row: &[f64],
    q_values: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, BoundsError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(BoundsError::BadLambda(lambda));
    }
    if prior_row.len() != q_values.len() || prior_row.is_empty() {
        return Err(BoundsError::InvalidTable("prior row and Q differ in length".into()));
    }
    let logits: Vec<f64> = prior_row
        .iter()
        .zip(q_values)
        .map(|(m, q)| m.ln() + q / lambda)
        .collect();
    let top = logits.iter().copied().fold(f64::MIN, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.iter().map(|x| x / total).collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawSummary {
    pub draws: usize,
    pub violations: usize,
    pub min_margin: f64,
    /// `(lhs, rhs, margin)` per draw.
    pub rows: Vec<(f64, f64, f64)>,
}

/// The open-loop gap bound on `draws` random problems with `n_s=3, n_a=2, n_z=2, H=6`.
pub fn lemma2_draws<R: Rng + ?Sized>(rng: &mut R, draws: usize) -> Result<DrawSummary, BoundsError> {
    let mut rows = Vec::with_capacity(draws);
    for _ in 0..draws {
        let gamma = rng.random_range(0.5..0.99);
        let mdp = TabularMdp::random(rng, 3, 2, gamma, 6);
        let triple = TabularPolicyTriple::random(rng, &mdp, 2);
        let c = check_lemma2(&mdp, &triple)?;
        rows.push((c.lhs, c.rhs, c.margin()));
    }
    Ok(summarise(rows))
}

/// The open-loop lower bound on `draws` random problems with `n_s=3, n_a=2, n_z=2, γ=0.5, H=25`.
pub fn lemma1_draws<R: Rng + ?Sized>(rng: &mut R, draws: usize) -> Result<DrawSummary, BoundsError> {
    let mut rows = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mdp = TabularMdp::random(rng, 3, 2, 0.5, 25);
        let triple = TabularPolicyTriple::random(rng, &mdp, 2);
        let c = check_lemma1(&mdp, &triple)?;
        rows.push((c.lhs + c.return_tail, c.rhs, c.margin()));
    }
    Ok(summarise(rows))
}

fn summarise(rows: Vec<(f64, f64, f64)>) -> DrawSummary {
    DrawSummary {
        draws: rows.len(),
        violations: rows.iter().filter(|r| r.2 < 0.0).count(),
        min_margin: rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
        rows,
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_episode, run_episodes, Condition, EvalError, EvalReport, ObsHook};
use crate::agent::{eval_episode_seeds, AgentParams, CarriedState};
use crate::distrib::{gaussian_head, sample_node};
use crate::envs::{Env, EnvSpec};
use crate::{Graph, Tensor};

/// Size of each signed-gradient step for both attacks.
pub const PGD_STEP_SIZE: f64 = 0.1;
pub const OBS_ATTACK_STEPS: usize = 3;
/// The dynamics attack's iteration count is not pinned down elsewhere; 10
/// steps of 0.1 reach any corner of an ε ≤ 1 ball.
pub const DYN_ATTACK_STEPS: usize = 10;

/// `min(Q1, Q2)(q_obs, tanh(mean π(z)))` with `z = μ_φ(x) + σ_φ(x) ⊙ noise`,
/// differentiable in the row `x`. `q_obs = None` evaluates the critics at `x`
/// itself. Returns the value and `∂/∂x`.
pub(super) fn value_and_grad(
    params: &AgentParams,
    x: &[f64],
    q_obs: Option<&[f64]>,
    z_noise: &[f64],
) -> Result<(f64, Vec<f64>), EvalError> {
    let nets = params.nets();
    let store = &params.store;
    let mut g = Graph::new();
    let xin = g.input_with("x", Tensor::row(x));
    let raw = nets.encoder.apply(&mut g, store, xin, false);
    let phi = gaussian_head(&mut g, raw, params.latent_dim(), None);
    let eps = g.constant(Tensor::row(z_noise));
    let z = sample_node(&mut g, phi, eps);
    let raw = nets.policy.apply(&mut g, store, z, false);
    let pi = gaussian_head(&mut g, raw, params.arch.act_dim, None);
    let action = g.tanh(pi.mean);
    let obs = match q_obs {
        Some(s) => g.constant(Tensor::row(s)),
        None => xin,
    };
    let qin = g.concat(&[obs, action]);
    let q1 = nets.q1.apply(&mut g, store, qin, false);
    let q2 = nets.q2.apply(&mut g, store, qin, false);
    let v = g.minimum(q1, q2);
    g.eval().map_err(crate::agent::AgentError::from)?;
    let value = g.value(v).map_err(crate::agent::AgentError::from)?.item();
    let grads = g
        .backward(v, &Tensor::matrix(1, 1, vec![1.0]))
        .map_err(crate::agent::AgentError::from)?;
    let grad = grads
        .of(xin)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    Ok((value, grad))
}

/// Projected signed-gradient descent on `value_and_grad` inside the L∞ ball
/// of radius `epsilon` around `centre`.
pub(super) fn pgd(
    params: &AgentParams,
    centre: &[f64],
    q_obs: Option<&[f64]>,
    z_noise: &[f64],
    epsilon: f64,
    steps: usize,
) -> Result<Vec<f64>, EvalError> {
    let mut x = centre.to_vec();
    if epsilon == 0.0 {
        return Ok(x);
    }
    for _ in 0..steps {
        let (_, grad) = value_and_grad(params, &x, q_obs, z_noise)?;
        for ((xi, gi), ci) in x.iter_mut().zip(&grad).zip(centre) {
            let dir = if *gi > 0.0 {
                1.0
            } else if *gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *xi = (*xi - PGD_STEP_SIZE * dir).clamp(ci - epsilon, ci + epsilon);
        }
    }
    let worst = x
        .iter()
        .zip(centre)
        .map(|(a, b)| (a - b).abs() - epsilon)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > 1e-12 {
        return Err(EvalError::Projection(worst));
    }
    Ok(x)
}

fn check_epsilon(epsilon: f64) -> Result<(), EvalError> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(EvalError::BadEpsilon(epsilon))
    }
}

/// Perturb every observation the agent reads (the true state is untouched)
/// to minimise `min Q(s, π(s_adv))`, using three 0.1-sized signed steps.
pub fn pgd_obs_attack(
    params: &AgentParams,
    spec: &EnvSpec,
    epsilon: f64,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    check_epsilon(epsilon)?;
    let mut hook = |obs: &[f64], noise: &[f64], _: Option<&CarriedState>| {
        pgd(params, obs, Some(obs), noise, epsilon, OBS_ATTACK_STEPS)
    };
    let eps = run_episodes(params, spec, 0.0, episodes, seed, Some(&mut hook as &mut ObsHook<'_>))?;
    let cond = Condition {
        mode: "pgd_obs".into(),
        epsilon,
        ..Condition::clean(spec)
    };
    Ok(EvalReport::from_episodes(cond, &eps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynAttackRow {
    pub state_index: usize,
    pub epsilon: f64,
    /// `min Q(s, π(s))` at the visited state.
    pub value_clean: f64,
    /// The same at the perturbed state.
    pub value_adv: f64,
    pub value_drop: f64,
    /// Realised return of a full-horizon rollout from the visited state.
    pub return_clean: f64,
    /// The same from the perturbed state.
    pub return_adv: f64,
    pub return_drop: f64,
}

/// Attack the true state. States are gathered from the agent's own reactive
/// rollouts and spread evenly over the visited steps; for each, ten signed
/// steps of 0.1 minimise `V(s_adv) = min Q(s_adv, π(s_adv))`, then the
/// environment is placed at `s` and at `s_adv` in turn and rolled out for a
/// full horizon with identical latent noise.
pub fn pgd_dyn_attack(
    params: &AgentParams,
    spec: &EnvSpec,
    epsilon: f64,
    n_states: usize,
    seed: u64,
) -> Result<Vec<DynAttackRow>, EvalError> {
    check_epsilon(epsilon)?;
    if n_states == 0 {
        return Err(EvalError::Empty("pgd_dyn_attack", "state"));
    }
    // Visited states from as many evaluation episodes as needed.
    let mut visited: Vec<Vec<f64>> = Vec::new();
    let mut episode = 0;
    while visited.len() < n_states {
        let (reset_seed, noise_seed) = eval_episode_seeds(seed, episode);
        let mut env = Env::new(spec.clone())?;
        let obs = env.reset(reset_seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let mut hook = |o: &[f64], _: &[f64], _: Option<&CarriedState>| {
            visited.push(o.to_vec());
            Ok(o.to_vec())
        };
        run_episode(params, &mut env, obs, 0.0, &mut noise_rng, &mut drop_rng, Some(&mut hook))?;
        episode += 1;
    }
    let stride = visited.len() / n_states;
    let mut rows = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let idx = i * stride;
        let s = &visited[idx];
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64 + 1));
        let z_noise = super::normals(&mut noise_rng, params.latent_dim());
        let s_adv = pgd(params, s, None, &z_noise, epsilon, DYN_ATTACK_STEPS)?;
        let (value_clean, _) = value_and_grad(params, s, None, &z_noise)?;
        let (value_adv, _) = value_and_grad(params, &s_adv, None, &z_noise)?;
        let realised = |start: &[f64]| -> Result<f64, EvalError> {
            let mut e = env_at(spec, start)?;
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64 + 1));
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let obs = e.observe();
            Ok(run_episode(params, &mut e, obs, 0.0, &mut noise_rng, &mut drop_rng, None)?.ret)
        };
        let return_clean = realised(s)?;
        let return_adv = realised(&s_adv)?;
        rows.push(DynAttackRow {
            state_index: idx,
            epsilon,
            value_clean,
            value_adv,
            value_drop: value_clean - value_adv,
            return_clean,
            return_adv,
            return_drop: return_clean - return_adv,
        });
    }
    Ok(rows)
}

/// A fresh-episode environment positioned at the state `obs` describes.
fn env_at(spec: &EnvSpec, obs: &[f64]) -> Result<Env, EvalError> {
    let mut env = Env::new(spec.clone())?;
    env.reset(0);
    env.set_state_from_obs(obs)?;
    Ok(env)
}

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{initial_prior, AgentError, AgentParams, Batch, Transition};
use crate::distrib::{self, gaussian_head, kl_diag, kl_node, log_prob_node, sample_node, GaussianNodes};
use crate::numgraph::{adam_step, AdamState, Mlp, NodeId};
use crate::{Graph, Tensor};

/// Standard-normal draws for one update: latent noise for `obs` and
/// `next_obs`, and pre-squash action noise.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise {
    pub z: Tensor,
    pub z_next: Tensor,
    pub action: Tensor,
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Tensor::matrix(rows, cols, data)
}

impl BatchNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, latent: usize, act: usize) -> Self {
        Self {
            z: normal_matrix(rng, batch, latent),
            z_next: normal_matrix(rng, batch, latent),
            action: normal_matrix(rng, batch, act),
        }
    }

    pub fn zeros(batch: usize, latent: usize, act: usize) -> Self {
        Self {
            z: Tensor::zeros(&[batch, latent]),
            z_next: Tensor::zeros(&[batch, latent]),
            action: Tensor::zeros(&[batch, act]),
        }
    }
}

/// `reward − λ·cost`.
pub fn augmented_reward(reward: f64, info_cost_nats: f64, lambda: f64) -> f64 {
    reward - lambda * info_cost_nats
}

/// `KL(φ(·|s′) ‖ m(·|z_t, a))`, plus `KL(φ(·|s) ‖ N(0, I))` when the
/// transition starts an episode. In nats.
pub fn info_cost(params: &AgentParams, t: &Transition, z_t: &[f64]) -> Result<f64, AgentError> {
    let (_, next) = params.encode(&t.next_obs, &vec![0.0; params.latent_dim()])?;
    let prior = params.prior_predict(z_t, &t.action)?;
    let mut cost = kl_diag(&next, &prior)?;
    if t.is_first {
        let first = params.encoder_dist(&t.obs);
        cost += kl_diag(&first, &initial_prior(params.latent_dim()))?;
    }
    Ok(cost)
}

/// One Adam step on `log λ` with gradient `budget − measured`: λ grows while
/// the measured cost exceeds the budget.
pub fn dual_update(
    state: &mut AdamState<f64>,
    log_lambda: f64,
    measured_cost_nats: f64,
    budget_nats: f64,
) -> Result<f64, AgentError> {
    let mut p = Tensor::scalar(log_lambda);
    let g = Tensor::scalar(budget_nats - measured_cost_nats);
    adam_step(state, &mut p, &g)?;
    Ok(p.item())
}

struct Inputs {
    obs: NodeId,
    action: NodeId,
    reward: NodeId,
    next_obs: NodeId,
    not_terminal: NodeId,
    is_first: NodeId,
    eps_z: NodeId,
    eps_z_next: NodeId,
    eps_a: NodeId,
}

fn bind_inputs(g: &mut Graph, batch: &Batch, noise: &BatchNoise) -> Inputs {
    Inputs {
        obs: g.input_with("obs", batch.obs.clone()),
        action: g.input_with("action", batch.action.clone()),
        reward: g.input_with("reward", batch.reward.clone()),
        next_obs: g.input_with("next_obs", batch.next_obs.clone()),
        not_terminal: g.input_with("not_terminal", batch.not_terminal.clone()),
        is_first: g.input_with("is_first", batch.is_first.clone()),
        eps_z: g.input_with("eps_z", noise.z.clone()),
        eps_z_next: g.input_with("eps_z_next", noise.z_next.clone()),
        eps_a: g.input_with("eps_a", noise.action.clone()),
    }
}

fn check_batch(p: &AgentParams, batch: &Batch, noise: &BatchNoise) -> Result<(), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let a = &p.arch;
    let checks = [
        ("batch observations", batch.obs.cols(), a.obs_dim),
        ("batch actions", batch.action.cols(), a.act_dim),
        ("latent noise", noise.z.cols(), a.latent_dim),
        ("action noise", noise.action.cols(), a.act_dim),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(AgentError::Dim { what, expected, got });
        }
    }
    if noise.z.rows() != batch.len() {
        return Err(AgentError::Dim {
            what: "noise rows",
            expected: batch.len(),
            got: noise.z.rows(),
        });
    }
    Ok(())
}

fn standard_nodes(g: &mut Graph, rows: usize, dim: usize) -> GaussianNodes {
    GaussianNodes {
        mean: g.constant(Tensor::zeros(&[rows, dim])),
        stddev: g.constant(Tensor::filled(&[rows, dim], 1.0)),
    }
}

fn encoder_nodes(g: &mut Graph, p: &AgentParams, x: NodeId, trainable: bool) -> GaussianNodes {
    let raw = p.nets().encoder.apply(g, &p.store, x, trainable);
    gaussian_head(g, raw, p.latent_dim(), None)
}

fn prior_nodes(
    g: &mut Graph,
    p: &AgentParams,
    z: NodeId,
    action: NodeId,
    trainable: bool,
) -> GaussianNodes {
    let x = g.concat(&[z, action]);
    let raw = p.nets().prior.apply(g, &p.store, x, trainable);
    gaussian_head(g, raw, p.latent_dim(), Some(z))
}

fn critic_node(g: &mut Graph, p: &AgentParams, net: &Mlp, obs: NodeId, a: NodeId, trainable: bool) -> NodeId {
    let x = g.concat(&[obs, a]);
    net.apply(g, &p.store, x, trainable)
}

/// Tanh-squashed reparameterised action for latents `z`.
fn action_node(g: &mut Graph, p: &AgentParams, z: NodeId, eps: NodeId, trainable: bool) -> NodeId {
    let raw = p.nets().policy.apply(g, &p.store, z, trainable);
    let d = gaussian_head(g, raw, p.arch.act_dim, None);
    let pre = sample_node(g, d, eps);
    g.tanh(pre)
}

/// Critic update graph; only `q1`/`q2` weights are parameters.
pub struct CriticGraph {
    pub graph: Graph,
    pub loss: NodeId,
    /// Per-transition information cost in nats, `B×1`.
    pub cost: NodeId,
    /// TD target `y`, `B×1`.
    pub target: NodeId,
    pub q1: NodeId,
    pub q2: NodeId,
}

impl CriticGraph {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).map(|t| t.item()).unwrap_or(f64::NAN)
    }

    pub fn mean_cost(&self) -> f64 {
        let c = self.graph.value(self.cost).expect("evaluated");
        c.data().iter().sum::<f64>() / c.len() as f64
    }
}

/// Twin-critic TD loss `Σ_i mean ½(Q_i(s,a) − y)²` with
/// `y = r̃ + γ·(1 − terminal)·min_j Q̄_j(s′, a′)`, `a′ ~ π^z(φ(s′))`.
///
/// Everything feeding `y` enters as constants, so no gradient reaches the
/// encoder, prior, policy or target critics. The returned graph is already
/// evaluated.
pub fn critic_loss(
    params: &AgentParams,
    batch: &Batch,
    noise: &BatchNoise,
    gamma: f64,
) -> Result<CriticGraph, AgentError> {
    check_batch(params, batch, noise)?;
    let (b, k) = (batch.len(), params.latent_dim());
    let lambda = params.lambda();
    let mut g = Graph::new();
    let inp = bind_inputs(&mut g, batch, noise);

    let phi = encoder_nodes(&mut g, params, inp.obs, false);
    let z = sample_node(&mut g, phi, inp.eps_z);
    let phi_next = encoder_nodes(&mut g, params, inp.next_obs, false);
    let z_next = sample_node(&mut g, phi_next, inp.eps_z_next);
    let prior = if params.variant.predicted_prior() {
        prior_nodes(&mut g, params, z, inp.action, false)
    } else {
        standard_nodes(&mut g, b, k)
    };
    let unit = standard_nodes(&mut g, b, k);
    let step_cost = kl_node(&mut g, phi_next, prior);
    let first_kl = kl_node(&mut g, phi, unit);
    let first_cost = g.mul(inp.is_first, first_kl);
    let cost = g.add(step_cost, first_cost);

    let reward = if params.variant.reward_augmented() && lambda > 0.0 {
        let penalty = g.scale(cost, -lambda);
        g.add(inp.reward, penalty)
    } else {
        inp.reward
    };
    let a_next = action_node(&mut g, params, z_next, inp.eps_a, false);
    let nets = params.nets();
    let t1 = critic_node(&mut g, params, &nets.q1_target, inp.next_obs, a_next, false);
    let t2 = critic_node(&mut g, params, &nets.q2_target, inp.next_obs, a_next, false);
    let tmin = g.minimum(t1, t2);
    let boot = g.mul(inp.not_terminal, tmin);
    let boot = g.scale(boot, gamma);
    let y = g.add(reward, boot);
    let y = g.stop_gradient(y);

    let q1 = critic_node(&mut g, params, &nets.q1, inp.obs, inp.action, true);
    let q2 = critic_node(&mut g, params, &nets.q2, inp.obs, inp.action, true);
    let mut terms = Vec::new();
    for q in [q1, q2] {
        let d = g.sub(q, y);
        let sq = g.square(d);
        let m = g.mean_all(sq);
        terms.push(g.scale(m, 0.5));
    }
    let loss = g.add(terms[0], terms[1]);
    g.set_output("loss", loss);
    g.eval()?;
    Ok(CriticGraph {
        graph: g,
        loss,
        cost,
        target: y,
        q1,
        q2,
    })
}

/// Actor/encoder/prior update graph; critic weights enter as constants.
pub struct ActorGraph {
    pub graph: Graph,
    pub loss: NodeId,
    /// `min(Q1, Q2)(s′, a′)`, `B×1`.
    pub q: NodeId,
    /// Sampled `log m − log φ` terms, `B×1` (absent when λ = 0).
    pub info: Option<NodeId>,
}

impl ActorGraph {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).map(|t| t.item()).unwrap_or(f64::NAN)
    }
}

/// `−mean[min Q(s′, a′) + λ(log m(z′|z,a) − log φ(z′|s′))]`, with
/// `z ~ φ(s)`, `z′ ~ φ(s′)`, `a′ ~ π^z(z′)` all reparameterised; episode
/// starts add `λ(log N(z; 0, I) − log φ(z|s))`. λ is a constant here.
///
/// The unconstrained variant additionally fits the prior by maximum
/// likelihood on stopped-gradient latents. The returned graph is evaluated.
pub fn actor_loss(
    params: &AgentParams,
    batch: &Batch,
    noise: &BatchNoise,
) -> Result<ActorGraph, AgentError> {
    check_batch(params, batch, noise)?;
    let (b, k) = (batch.len(), params.latent_dim());
    let lambda = params.lambda();
    let mut g = Graph::new();
    let inp = bind_inputs(&mut g, batch, noise);

    let phi = encoder_nodes(&mut g, params, inp.obs, true);
    let z = sample_node(&mut g, phi, inp.eps_z);
    let phi_next = encoder_nodes(&mut g, params, inp.next_obs, true);
    let z_next = sample_node(&mut g, phi_next, inp.eps_z_next);

    let a_next = action_node(&mut g, params, z_next, inp.eps_a, true);
    let nets = params.nets();
    let q1 = critic_node(&mut g, params, &nets.q1, inp.next_obs, a_next, false);
    let q2 = critic_node(&mut g, params, &nets.q2, inp.next_obs, a_next, false);
    let q = g.minimum(q1, q2);

    let mut info = None;
    let objective = if lambda > 0.0 {
        let prior = if params.variant.predicted_prior() {
            prior_nodes(&mut g, params, z, inp.action, true)
        } else {
            standard_nodes(&mut g, b, k)
        };
        let lm = log_prob_node(&mut g, prior, z_next);
        let lphi = log_prob_node(&mut g, phi_next, z_next);
        let step = g.sub(lm, lphi);
        let unit = standard_nodes(&mut g, b, k);
        let l0 = log_prob_node(&mut g, unit, z);
        let lphi0 = log_prob_node(&mut g, phi, z);
        let first = g.sub(l0, lphi0);
        let first = g.mul(inp.is_first, first);
        let total = g.add(step, first);
        info = Some(total);
        let weighted = g.scale(total, lambda);
        g.add(q, weighted)
    } else {
        q
    };
    let mean = g.mean_all(objective);
    let mut loss = g.neg(mean);
    if !params.variant.constrained() {
        let zs = g.stop_gradient(z);
        let zs_next = g.stop_gradient(z_next);
        let prior = prior_nodes(&mut g, params, zs, inp.action, true);
        let lm = log_prob_node(&mut g, prior, zs_next);
        let nll = g.mean_all(lm);
        let nll = g.neg(nll);
        loss = g.add(loss, nll);
    }
    g.set_output("loss", loss);
    g.eval()?;
    Ok(ActorGraph {
        graph: g,
        loss,
        q,
        info,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxEntRow {
    pub reward: f64,
    pub augmented: f64,
    pub log_phi: f64,
    /// Identity decoder: the action is the latent itself.
    pub action: Vec<f64>,
}

/// Augmented rewards when the prior density is the constant `e^c` and the
/// decoder is the identity, using the single-sample cost
/// `log φ(z|s) − c`. Each row then satisfies `r̃ − r + λ·log φ(z|s) = λ·c`.
pub fn maxent_batch_check(
    params: &AgentParams,
    observations: &[Vec<f64>],
    rewards: &[f64],
    noise: &[Vec<f64>],
    lambda: f64,
    log_prior_const: f64,
) -> Result<Vec<MaxEntRow>, AgentError> {
    observations
        .iter()
        .zip(rewards)
        .zip(noise)
        .map(|((obs, &r), eps)| {
            let (z, dist) = params.encode(obs, eps)?;
            let log_phi = distrib::log_prob(&dist, &z)?;
            let cost = log_phi - log_prior_const;
            Ok(MaxEntRow {
                reward: r,
                augmented: augmented_reward(r, cost, lambda),
                log_phi,
                action: z,
            })
        })
        .collect()
}

pub(crate) fn grads_for(
    graph: &Graph,
    loss: NodeId,
) -> Result<BTreeMap<String, Tensor>, AgentError> {
    let grads = graph.backward_params(loss, &Tensor::matrix(1, 1, vec![1.0]))?;
    Ok(graph.param_grads(&grads))
}

//! The compressed-policy learner: encoder, latent prior, latent policy, twin
//! critics with Polyak targets, and a dual variable on the bitrate.

mod checkpoint;
mod learner;
mod losses;
mod replay;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    CheckpointError,
};
pub use learner::{
    eval_episode_seeds, evaluate_reactive, train, write_metrics, EvalPoint, Learner, MetricsRecord, StepMetrics,
    TrainConfig, TrainOutput,
};
pub use losses::{
    actor_loss, augmented_reward, critic_loss, dual_update, info_cost, maxent_batch_check,
    ActorGraph, BatchNoise, CriticGraph, MaxEntRow,
};
pub use replay::{Batch, ReplayBuffer, Transition};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distrib::{self, kl_diag, squash_to_range, stddev_from_raw, MEAN_LIMIT};
use crate::envs::EnvError;
use crate::numgraph::{GraphError, Mlp, MlpSpec};
use crate::{DiagGaussian, ParamStore};

/// `log(1e-6)`, the initial dual variable.
pub const INITIAL_LOG_LAMBDA: f64 = -13.815_510_557_964_274;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("{what} has {got} dimensions, expected {expected}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("open-loop acting needs a carried latent from an earlier observation")]
    OpenLoopWithoutState,
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown variant `{0}` (expected rpc, vib, vib_reward or sac)")]
    UnknownVariant(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Distrib(#[from] distrib::DistribError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Learned predictive prior, information cost subtracted from the reward.
    Rpc,
    /// Fixed unit-Gaussian prior, cost only in the actor objective.
    Vib,
    /// Fixed unit-Gaussian prior, cost subtracted from the reward.
    VibReward,
    /// No information cost (λ = 0). The prior is still fitted as a latent
    /// model so open-loop rollouts are possible.
    Sac,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Rpc,
        VariantKind::Vib,
        VariantKind::VibReward,
        VariantKind::Sac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Rpc => "rpc",
            VariantKind::Vib => "vib",
            VariantKind::VibReward => "vib_reward",
            VariantKind::Sac => "sac",
        }
    }

    /// Prior predicts the next latent from `(z, a)` instead of being `N(0, I)`.
    pub fn predicted_prior(self) -> bool {
        matches!(self, VariantKind::Rpc | VariantKind::Sac)
    }

    /// Critic targets use `r − λ·cost`.
    pub fn reward_augmented(self) -> bool {
        matches!(self, VariantKind::Rpc | VariantKind::VibReward)
    }

    /// λ is adapted by dual ascent; otherwise it stays at 0.
    pub fn constrained(self) -> bool {
        self != VariantKind::Sac
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            VariantKind::Rpc => 0,
            VariantKind::Vib => 1,
            VariantKind::VibReward => 2,
            VariantKind::Sac => 3,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, AgentError> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AgentError::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub bitrate_budget_bits_per_step: f64,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, bits: f64) -> Result<Self, AgentError> {
        if !(bits.is_finite() && bits >= 0.0) {
            return Err(AgentError::Config(format!("bitrate must be ≥ 0, got {bits}")));
        }
        Ok(Self {
            kind,
            bitrate_budget_bits_per_step: bits,
        })
    }

    pub fn budget_nats(&self) -> f64 {
        distrib::bits_to_nats(self.bitrate_budget_bits_per_step)
    }
}

/// Network sizes shared by every component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

/// The component networks, addressed by name prefix in the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub encoder: Mlp,
    pub prior: Mlp,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

impl Architecture {
    pub fn networks(&self) -> Networks {
        let (o, a, k, h) = (self.obs_dim, self.act_dim, self.latent_dim, &self.hidden);
        let spec = |i, out| MlpSpec::new(i, h, out, 0);
        Networks {
            encoder: Mlp::new("enc", &spec(o, 2 * k)),
            prior: Mlp::new("prior", &spec(k + a, 2 * k)),
            policy: Mlp::new("pi", &spec(k, 2 * a)),
            q1: Mlp::new("q1", &spec(o + a, 1)),
            q2: Mlp::new("q2", &spec(o + a, 1)),
            q1_target: Mlp::new("q1_targ", &spec(o + a, 1)),
            q2_target: Mlp::new("q2_targ", &spec(o + a, 1)),
        }
    }
}

/// Everything a trained agent consists of.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub arch: Architecture,
    pub variant: VariantKind,
    pub store: ParamStore,
    pub log_lambda: f64,
    nets: Networks,
}

fn split_head(raw: &[f64], dim: usize, base: Option<&[f64]>) -> DiagGaussian {
    let mean = (0..dim)
        .map(|i| {
            let pre = raw[i] + base.map_or(0.0, |b| b[i]);
            squash_to_range(pre, -MEAN_LIMIT, MEAN_LIMIT)
        })
        .collect();
    let stddev = raw[dim..2 * dim].iter().map(|r| stddev_from_raw(*r)).collect();
    DiagGaussian::new(mean, stddev).expect("head output has matching dims")
}

fn check_dim(what: &'static str, v: &[f64], expected: usize) -> Result<(), AgentError> {
    if v.len() != expected {
        return Err(AgentError::Dim {
            what,
            expected,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AgentError::NonFinite(what));
    }
    Ok(())
}

impl AgentParams {
    /// Fresh Glorot-initialised networks; targets start equal to critics.
    pub fn init(arch: Architecture, variant: VariantKind, seed: u64) -> Self {
        let nets = arch.networks();
        let mut store = ParamStore::new();
        let seeded = [&nets.encoder, &nets.prior, &nets.policy, &nets.q1, &nets.q2];
        for (i, net) in seeded.iter().enumerate() {
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64 + 1);
            store.extend(net.init::<f64>(s));
        }
        for (src, dst) in [(&nets.q1, &nets.q1_target), (&nets.q2, &nets.q2_target)] {
            for (a, b) in src.param_names().iter().zip(dst.param_names()) {
                let v = store.expect(a).clone();
                store.insert(b, v);
            }
        }
        Self {
            arch,
            variant,
            store,
            log_lambda: INITIAL_LOG_LAMBDA,
            nets,
        }
    }

    pub(crate) fn from_parts(
        arch: Architecture,
        variant: VariantKind,
        store: ParamStore,
        log_lambda: f64,
    ) -> Self {
        let nets = arch.networks();
        Self {
            arch,
            variant,
            store,
            log_lambda,
            nets,
        }
    }

    pub fn nets(&self) -> &Networks {
        &self.nets
    }

    /// `exp(log_lambda)`; exactly 0 for the unconstrained variant, whose
    /// `log_lambda` is never updated.
    pub fn lambda(&self) -> f64 {
        if self.variant.constrained() {
            self.log_lambda.exp()
        } else {
            0.0
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// `φ(·|obs)` and the reparameterised sample `mean + std ⊙ noise`.
    pub fn encode(&self, obs: &[f64], noise: &[f64]) -> Result<(Vec<f64>, DiagGaussian), AgentError> {
        check_dim("observation", obs, self.arch.obs_dim)?;
        check_dim("latent noise", noise, self.arch.latent_dim)?;
        let dist = self.encoder_dist(obs);
        let z = distrib::sample_reparam(&dist, noise)?;
        Ok((z, dist))
    }

    pub(crate) fn encoder_dist(&self, obs: &[f64]) -> DiagGaussian {
        let raw = self.nets.encoder.forward_row(&self.store, obs);
        split_head(&raw, self.arch.latent_dim, None)
    }

    /// `m(·|z, a)`; `N(0, I)` for the fixed-prior variants.
    pub fn prior_predict(&self, z: &[f64], action: &[f64]) -> Result<DiagGaussian, AgentError> {
        check_dim("latent", z, self.arch.latent_dim)?;
        check_dim("action", action, self.arch.act_dim)?;
        if !self.variant.predicted_prior() {
            return Ok(initial_prior(self.arch.latent_dim));
        }
        Ok(self.learned_prior(z, action))
    }

    /// The prior network's prediction regardless of variant.
    pub fn learned_prior(&self, z: &[f64], action: &[f64]) -> DiagGaussian {
        let mut input = z.to_vec();
        input.extend_from_slice(action);
        let raw = self.nets.prior.forward_row(&self.store, &input);
        split_head(&raw, self.arch.latent_dim, Some(z))
    }

    /// Pre-squash action distribution `π^z(·|z)`.
    pub fn policy_dist(&self, z: &[f64]) -> DiagGaussian {
        let raw = self.nets.policy.forward_row(&self.store, z);
        split_head(&raw, self.arch.act_dim, None)
    }

    /// `min(Q1, Q2)(obs, action)`.
    pub fn q_value(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        let a = self.nets.q1.forward_row(&self.store, &x)[0];
        let b = self.nets.q2.forward_row(&self.store, &x)[0];
        a.min(b)
    }

    /// Overwrite every weight of one network with zeros.
    pub fn zero_network(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .store
            .names()
            .filter(|n| n.split('.').next() == Some(prefix))
            .cloned()
            .collect();
        for n in names {
            let t = self.store.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// `N(0, I)` over `latent_dim` coordinates.
pub fn initial_prior(latent_dim: usize) -> DiagGaussian {
    DiagGaussian::standard(latent_dim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Reactive,
    OpenLoop,
}

/// Latent and action of the previous step, needed to form the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct CarriedState {
    pub z: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    pub z: Vec<f64>,
    /// Information read from the observation this step; 0 when open-loop.
    pub cost_nats: f64,
    pub carried: CarriedState,
}

/// Choose an action.
///
/// Reactive: `z ~ φ(·|obs)` using `z_noise`, cost `KL(φ ‖ prior)` where the
/// prior is the prediction from `carried` (or `N(0, I)` at the first step).
/// Open-loop: `z` is the prior mean from `carried`; the observation is not
/// read. The action is `tanh(mean + std ⊙ action_noise)`, or `tanh(mean)`
/// when `action_noise` is `None`.
pub fn act(
    params: &AgentParams,
    obs: &[f64],
    mode: ActMode,
    carried: Option<&CarriedState>,
    z_noise: &[f64],
    action_noise: Option<&[f64]>,
) -> Result<ActOutput, AgentError> {
    let k = params.arch.latent_dim;
    let (z, cost_nats) = match mode {
        ActMode::Reactive => {
            let (z, dist) = params.encode(obs, z_noise)?;
            let prior = match carried {
                Some(c) => params.prior_predict(&c.z, &c.action)?,
                None => initial_prior(k),
            };
            (z, kl_diag(&dist, &prior)?)
        }
        ActMode::OpenLoop => {
            let c = carried.ok_or(AgentError::OpenLoopWithoutState)?;
            let prior = params.prior_predict(&c.z, &c.action)?;
            (prior.mean, 0.0)
        }
    };
    let pd = params.policy_dist(&z);
    let pre: Vec<f64> = match action_noise {
        Some(n) => {
            check_dim("action noise", n, params.arch.act_dim)?;
            distrib::sample_reparam(&pd, n)?
        }
        None => pd.mean.clone(),
    };
    let action: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();
    Ok(ActOutput {
        carried: CarriedState {
            z: z.clone(),
            action: action.clone(),
        },
        action,
        z,
        cost_nats,
    })
}

#[cfg(test)]
mod tests;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::grads_for;
use super::{
    act, actor_loss, critic_loss, dual_update, ActMode, AgentError, AgentParams, Architecture,
    BatchNoise, CarriedState, ReplayBuffer, Transition, VariantSpec,
};
use crate::distrib::nats_to_bits;
use crate::envs::{Env, EnvSpec};
use crate::numgraph::{Adam, AdamConfig, AdamState};

/// Reset seeds of evaluation episodes start here, away from training seeds.
const EVAL_SEED_BASE: u64 = 1 << 40;

/// `(reset seed, latent-noise seed)` of evaluation episode `episode`.
/// Episode `i` always starts from the same state, so successive
/// checkpoints face identical start states.
pub fn eval_episode_seeds(seed: u64, episode: usize) -> (u64, u64) {
    (
        EVAL_SEED_BASE + episode as u64,
        seed.wrapping_mul(31).wrapping_add(episode as u64),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub variant: VariantSpec,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Adam learning rate of the dual variable.
    pub dual_lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    /// Uniform-random actions before the first update.
    pub warmup_steps: usize,
    /// Environment steps between evaluation rounds; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Environment steps per metrics record.
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(env: EnvSpec, variant: VariantSpec) -> Self {
        Self {
            env,
            variant,
            latent_dim: 8,
            hidden: vec![64, 64],
            lr: 3e-4,
            dual_lr: 3e-4,
            batch_size: 256,
            total_steps: 100_000,
            replay_capacity: 100_000,
            gamma: 0.99,
            tau: 0.005,
            seed: 0,
            warmup_steps: 1000,
            eval_every: 5000,
            eval_episodes: 5,
            log_every: 1000,
        }
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            obs_dim: self.env.obs_dim,
            act_dim: self.env.act_dim,
            latent_dim: self.latent_dim,
            hidden: self.hidden.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be ≥ 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be ≥ 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.dual_lr > 0.0 && self.dual_lr.is_finite()) {
            return bad(format!("dual_lr must be positive, got {}", self.dual_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be ≥ batch_size".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1".into());
        }
        self.env.validate()?;
        VariantSpec::new(self.variant.kind, self.variant.bitrate_budget_bits_per_step)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Batch-mean information cost before the update, nats.
    pub cost_nats: f64,
    pub cost_bits: f64,
    /// λ after the dual update.
    pub lambda: f64,
}

/// Parameters plus optimiser state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub params: AgentParams,
    critic_opt: Adam<f64>,
    actor_opt: Adam<f64>,
    dual_state: AdamState<f64>,
    gamma: f64,
    tau: f64,
    budget_nats: f64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(params: AgentParams, config: &TrainConfig) -> Self {
        Self {
            params,
            critic_opt: Adam::new(AdamConfig::with_lr(config.lr)),
            actor_opt: Adam::new(AdamConfig::with_lr(config.lr)),
            dual_state: AdamState::new(1, AdamConfig::with_lr(config.dual_lr)),
            gamma: config.gamma,
            tau: config.tau,
            budget_nats: config.variant.budget_nats(),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x00de_c0de),
        }
    }

    /// Sample a batch and apply one update.
    pub fn train_step(
        &mut self,
        buffer: &mut ReplayBuffer,
        batch_size: usize,
    ) -> Result<StepMetrics, AgentError> {
        let batch = buffer.sample(batch_size)?;
        let a = &self.params.arch;
        let (k, na) = (a.latent_dim, a.act_dim);
        let critic_noise = BatchNoise::sample(&mut self.rng, batch.len(), k, na);
        let actor_noise = BatchNoise::sample(&mut self.rng, batch.len(), k, na);
        self.update(&batch, &critic_noise, &actor_noise)
    }

    /// Critic step, then actor/encoder/prior step against the updated
    /// critics, then the dual step, then Polyak averaging of the targets.
    pub fn update(
        &mut self,
        batch: &super::Batch,
        critic_noise: &BatchNoise,
        actor_noise: &BatchNoise,
    ) -> Result<StepMetrics, AgentError> {
        let cg = critic_loss(&self.params, batch, critic_noise, self.gamma)?;
        let critic_loss_value = cg.loss_value();
        let cost_nats = cg.mean_cost();
        let grads = grads_for(&cg.graph, cg.loss)?;
        self.critic_opt.step(&mut self.params.store, &grads)?;

        let ag = actor_loss(&self.params, batch, actor_noise)?;
        let actor_loss_value = ag.loss_value();
        let grads = grads_for(&ag.graph, ag.loss)?;
        self.actor_opt.step(&mut self.params.store, &grads)?;

        if self.params.variant.constrained() {
            self.params.log_lambda = dual_update(
                &mut self.dual_state,
                self.params.log_lambda,
                cost_nats,
                self.budget_nats,
            )?;
        }
        self.polyak();
        Ok(StepMetrics {
            critic_loss: critic_loss_value,
            actor_loss: actor_loss_value,
            cost_nats,
            cost_bits: nats_to_bits(cost_nats),
            lambda: self.params.lambda(),
        })
    }

    fn polyak(&mut self) {
        let tau = self.tau;
        let nets = self.params.nets().clone();
        for (src, dst) in [(&nets.q1, &nets.q1_target), (&nets.q2, &nets.q2_target)] {
            for (s, d) in src.param_names().iter().zip(dst.param_names()) {
                let online = self.params.store.expect(s).data().to_vec();
                let target = self.params.store.get_mut(&d).expect("target present");
                for (t, o) in target.data_mut().iter_mut().zip(online) {
                    *t = (1.0 - tau) * *t + tau * o;
                }
            }
        }
    }
}

/// One line of `metrics.jsonl`, summarising the preceding `log_every` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Return of the most recent finished training episode.
    pub episode_return: Option<f64>,
    pub info_bits_per_step: Option<f64>,
    pub lambda: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub mean_return: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: AgentParams,
    pub metrics: Vec<MetricsRecord>,
    /// Measured batch cost (bits) of every gradient step.
    pub step_costs_bits: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub episode_returns: Vec<f64>,
}

impl TrainOutput {
    /// Mean measured cost (bits) over the last `fraction` of gradient steps.
    pub fn final_cost_bits(&self, fraction: f64) -> f64 {
        let n = self.step_costs_bits.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let tail = &self.step_costs_bits[n.saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// Evaluations recorded in the last `fraction` of training.
    pub fn final_evals(&self, total_steps: usize, fraction: f64) -> Vec<f64> {
        let cutoff = (total_steps as f64 * (1.0 - fraction)).floor() as usize;
        self.evals
            .iter()
            .filter(|e| e.step > cutoff)
            .map(|e| e.mean_return)
            .collect()
    }
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Mean undiscounted return of `episodes` reactive rollouts with sampled
/// latents and mean actions.
pub fn evaluate_reactive(
    params: &AgentParams,
    env_spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<f64, AgentError> {
    let mut env = Env::new(env_spec.clone())?;
    let mut total = 0.0;
    for ep in 0..episodes {
        let (reset_seed, noise_seed) = eval_episode_seeds(seed, ep);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut obs = env.reset(reset_seed);
        let mut carried: Option<CarriedState> = None;
        loop {
            let noise = standard_normal_vec(&mut rng, params.latent_dim());
            let out = act(params, &obs, ActMode::Reactive, carried.as_ref(), &noise, None)?;
            let res = env.step(&out.action)?;
            total += res.reward;
            carried = Some(out.carried);
            obs = res.next_obs;
            if res.terminal || res.truncated {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

#[derive(Default)]
struct Window {
    critic: f64,
    actor: f64,
    bits: f64,
    updates: usize,
}

/// Collect one environment step per gradient step for `total_steps` steps.
pub fn train(config: &TrainConfig) -> Result<TrainOutput, AgentError> {
    config.validate()?;
    let params = AgentParams::init(config.arch(), config.variant.kind, config.seed);
    let mut learner = Learner::new(params, config);
    let mut buffer = ReplayBuffer::new(config.replay_capacity, config.seed ^ 0x5a5a_5a5a);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut env = Env::new(config.env.clone())?;
    let (k, na) = (config.latent_dim, config.env.act_dim);
    let train_seed = |episode: u64| config.seed.wrapping_mul(1_000_003).wrapping_add(episode);

    let mut episode = 0u64;
    let mut obs = env.reset(train_seed(episode));
    let mut carried: Option<CarriedState> = None;
    let mut is_first = true;
    let mut ep_return = 0.0;
    let mut last_return = None;
    let mut out = TrainOutput {
        params: learner.params.clone(),
        metrics: Vec::new(),
        step_costs_bits: Vec::new(),
        evals: Vec::new(),
        episode_returns: Vec::new(),
    };
    let mut window = Window::default();
    let start_updates = config.batch_size.max(config.warmup_steps);

    for step in 1..=config.total_steps {
        let action = if step <= config.warmup_steps {
            carried = None;
            (0..na).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            let zn = standard_normal_vec(&mut rng, k);
            let an = standard_normal_vec(&mut rng, na);
            let o = act(&learner.params, &obs, ActMode::Reactive, carried.as_ref(), &zn, Some(&an))?;
            carried = Some(o.carried);
            o.action
        };
        let res = env.step(&action)?;
        ep_return += res.reward;
        buffer.push(Transition {
            obs: std::mem::take(&mut obs),
            action,
            reward: res.reward,
            next_obs: res.next_obs.clone(),
            is_first,
            is_terminal: res.terminal,
            is_truncated: res.truncated,
        });
        is_first = false;
        obs = res.next_obs;
        if res.terminal || res.truncated {
            out.episode_returns.push(ep_return);
            last_return = Some(ep_return);
            ep_return = 0.0;
            episode += 1;
            obs = env.reset(train_seed(episode));
            carried = None;
            is_first = true;
        }

        if buffer.len() >= start_updates {
            let m = learner.train_step(&mut buffer, config.batch_size)?;
            out.step_costs_bits.push(m.cost_bits);
            window.critic += m.critic_loss;
            window.actor += m.actor_loss;
            window.bits += m.cost_bits;
            window.updates += 1;
        }

        if config.eval_every > 0 && step % config.eval_every == 0 {
            let mean_return =
                evaluate_reactive(&learner.params, &config.env, config.eval_episodes, config.seed)?;
            out.evals.push(EvalPoint { step, mean_return });
        }
        if step % config.log_every == 0 || step == config.total_steps {
            let n = window.updates as f64;
            let avg = |v: f64| (window.updates > 0).then(|| v / n);
            out.metrics.push(MetricsRecord {
                step,
                episode_return: last_return,
                info_bits_per_step: avg(window.bits),
                lambda: learner.params.lambda(),
                critic_loss: avg(window.critic),
                actor_loss: avg(window.actor),
                seed: config.seed,
            });
            window = Window::default();
        }
    }
    out.params = learner.params;
    Ok(out)
}

/// Write records as JSON lines.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), AgentError> {
    let io = |e: std::io::Error| AgentError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| AgentError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

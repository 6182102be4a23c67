//! Evaluation probes over frozen agents: dropout rollouts, adversarial
//! attacks, value of information, latent sparsity, robustness and bitrate
//! sweeps, and following-gap statistics.
//!
//! Every probe takes an [`AgentParams`] snapshot by reference and is a
//! deterministic function of its arguments.

mod attacks;
mod probes;
mod report;
mod sweeps;

pub use attacks::{pgd_dyn_attack, pgd_obs_attack, DynAttackRow, DYN_ATTACK_STEPS, OBS_ATTACK_STEPS, PGD_STEP_SIZE};
pub use probes::{
    collect_transitions, coord_kl_sparsity, gap_statistics, pearson, value_of_info, voi_scatter,
    GapBin, GapStats, LatentTransition, VoiPoint, VOI_SAMPLES,
};
pub use report::{write_report, Condition, EvalReport};
pub use sweeps::{bitrate_sweep, quantile, robust_sweep, SweepRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::{act, eval_episode_seeds, ActMode, AgentError, AgentParams, CarriedState};
use crate::distrib::nats_to_bits;
use crate::envs::{Env, EnvError, EnvSpec, EnvState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("dropout probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("attack radius must be ≥ 0 and finite, got {0}")]
    BadEpsilon(f64),
    #[error("{0} needs at least one {1}")]
    Empty(&'static str, &'static str),
    #[error("{probe} needs the {expected} environment, got {got}")]
    WrongEnv {
        probe: &'static str,
        expected: &'static str,
        got: &'static str,
    },
    #[error("projection left the ε-ball by {0}")]
    Projection(f64),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io: {0}")]
    Io(String),
}

pub(crate) fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Per-episode tallies.
#[derive(Clone, Debug, Default)]
pub(crate) struct Episode {
    pub ret: f64,
    pub bits: f64,
    pub steps: usize,
    pub crashed: bool,
    /// `(gap, bits)` per step, lanedrive only.
    pub gaps: Vec<(f64, f64)>,
}

/// Rewrites the observation the agent sees at a step. Receives the true
/// observation, the latent noise for this step and the carried state.
pub(crate) type ObsHook<'a> =
    dyn FnMut(&[f64], &[f64], Option<&CarriedState>) -> Result<Vec<f64>, EvalError> + 'a;

/// Run one evaluation episode from `obs` (the environment is already reset
/// or positioned). Latent noise comes from `noise_rng` every step whether or
/// not the observation is read, so the same seed drives the same noise
/// regardless of `dropout_p`. Actions are distribution means.
pub(crate) fn run_episode(
    params: &AgentParams,
    env: &mut Env,
    mut obs: Vec<f64>,
    dropout_p: f64,
    noise_rng: &mut ChaCha8Rng,
    drop_rng: &mut ChaCha8Rng,
    hook: Option<&mut ObsHook<'_>>,
) -> Result<Episode, EvalError> {
    let mut hook = hook;
    let mut ep = Episode::default();
    let mut carried: Option<CarriedState> = None;
    loop {
        let noise = normals(noise_rng, params.latent_dim());
        let withheld = carried.is_some() && dropout_p > 0.0 && drop_rng.random::<f64>() < dropout_p;
        let out = if withheld {
            act(params, &obs, ActMode::OpenLoop, carried.as_ref(), &noise, None)?
        } else {
            let seen = match hook.as_deref_mut() {
                Some(h) => h(&obs, &noise, carried.as_ref())?,
                None => obs.clone(),
            };
            act(params, &seen, ActMode::Reactive, carried.as_ref(), &noise, None)?
        };
        let bits = nats_to_bits(out.cost_nats);
        if let Some(EnvState::LaneDrive { gap, .. }) = env.state() {
            ep.gaps.push((*gap, bits));
        }
        let res = env.step(&out.action)?;
        ep.ret += res.reward;
        ep.bits += bits;
        ep.steps += 1;
        carried = Some(out.carried);
        obs = res.next_obs;
        if res.terminal || res.truncated {
            ep.crashed = res.terminal;
            return Ok(ep);
        }
    }
}

fn drop_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ (episode as u64).wrapping_add(0xd0)
}

/// Evaluate `episodes` episodes, each observation withheld independently
/// with probability `dropout_p` (the first is always read).
/// [`ActMode::OpenLoop`] withholds everything after the first step,
/// whatever `dropout_p` says.
pub(crate) fn run_episodes(
    params: &AgentParams,
    spec: &EnvSpec,
    dropout_p: f64,
    episodes: usize,
    seed: u64,
    mut hook: Option<&mut ObsHook<'_>>,
) -> Result<Vec<Episode>, EvalError> {
    if !(0.0..=1.0).contains(&dropout_p) {
        return Err(EvalError::BadProbability(dropout_p));
    }
    if episodes == 0 {
        return Err(EvalError::Empty("evaluation", "episode"));
    }
    let mut env = Env::new(spec.clone())?;
    (0..episodes)
        .map(|i| {
            let (reset_seed, noise_seed) = eval_episode_seeds(seed, i);
            let obs = env.reset(reset_seed);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(drop_seed(seed, i));
            run_episode(params, &mut env, obs, dropout_p, &mut noise_rng, &mut drop_rng, hook.as_deref_mut())
        })
        .collect()
}

/// Dropout evaluation.
pub fn rollout(
    params: &AgentParams,
    spec: &EnvSpec,
    mode: ActMode,
    dropout_p: f64,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let p = match mode {
        ActMode::Reactive => dropout_p,
        ActMode::OpenLoop => 1.0,
    };
    let eps = run_episodes(params, spec, p, episodes, seed, None)?;
    let mode_name = match mode {
        ActMode::OpenLoop => "open_loop",
        ActMode::Reactive if p > 0.0 => "dropout",
        ActMode::Reactive => "reactive",
    };
    let cond = Condition {
        mode: mode_name.into(),
        dropout_p: p,
        ..Condition::clean(spec)
    };
    Ok(EvalReport::from_episodes(cond, &eps))
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normals, run_episodes, EvalError};
use crate::agent::{info_cost, AgentParams, CarriedState, Transition};
use crate::distrib::{kl_per_coordinate, nats_to_bits, sample_reparam};
use crate::envs::{EnvKind, EnvSpec};
use crate::DiagGaussian;

/// Monte-Carlo samples per expectation in [`value_of_info`].
pub const VOI_SAMPLES: usize = 32;

/// A transition together with the latent the agent sampled for `obs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTransition {
    pub transition: Transition,
    pub z: Vec<f64>,
}

/// `n` transitions from reactive evaluation rollouts. Rewards are not
/// recorded.
pub fn collect_transitions(
    params: &AgentParams,
    spec: &EnvSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<LatentTransition>, EvalError> {
    if n == 0 {
        return Err(EvalError::Empty("collect_transitions", "transition"));
    }
    let mut out = Vec::with_capacity(n);
    let mut episode_seed = seed;
    while out.len() < n {
        // At step t + 1 the hook sees `s_{t+1}` and the carried `(z_t, a_t)`.
        let mut seen: Vec<(Vec<f64>, Option<CarriedState>)> = Vec::new();
        let mut hook = |obs: &[f64], _: &[f64], carried: Option<&CarriedState>| {
            seen.push((obs.to_vec(), carried.cloned()));
            Ok(obs.to_vec())
        };
        run_episodes(params, spec, 0.0, 1, episode_seed, Some(&mut hook))?;
        for (i, w) in seen.windows(2).enumerate() {
            let ((obs, _), (next_obs, carried)) = (&w[0], &w[1]);
            let c = carried.as_ref().expect("carried state after the first step");
            out.push(LatentTransition {
                transition: Transition {
                    obs: obs.clone(),
                    action: c.action.clone(),
                    reward: 0.0,
                    next_obs: next_obs.clone(),
                    is_first: i == 0,
                    is_terminal: false,
                    is_truncated: false,
                },
                z: c.z.clone(),
            });
            if out.len() == n {
                break;
            }
        }
        episode_seed = episode_seed.wrapping_add(1);
    }
    Ok(out)
}

fn mean_q_over(
    params: &AgentParams,
    dist: &DiagGaussian,
    obs: &[f64],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for _ in 0..samples {
        let z = sample_reparam(dist, &normals(rng, dist.dim())).map_err(crate::agent::AgentError::from)?;
        let pd = params.policy_dist(&z);
        let pre = sample_reparam(&pd, &normals(rng, pd.dim())).map_err(crate::agent::AgentError::from)?;
        let a: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();
        total += params.q_value(obs, &a);
    }
    Ok(total / samples as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiPoint {
    /// Expected `min Q(s′, a)` when acting on `φ(s′)` minus the same when
    /// acting on the prior's prediction.
    pub voi: f64,
    pub coi_nats: f64,
}

/// Value and cost of reading `next_obs`, with 32-sample expectations.
pub fn value_of_info(
    params: &AgentParams,
    lt: &LatentTransition,
    rng: &mut ChaCha8Rng,
) -> Result<VoiPoint, EvalError> {
    let t = &lt.transition;
    let phi = params.encoder_dist(&t.next_obs);
    let prior = params.prior_predict(&lt.z, &t.action)?;
    let with_obs = mean_q_over(params, &phi, &t.next_obs, VOI_SAMPLES, rng)?;
    let without = mean_q_over(params, &prior, &t.next_obs, VOI_SAMPLES, rng)?;
    let step = Transition {
        is_first: false,
        ..t.clone()
    };
    Ok(VoiPoint {
        voi: with_obs - without,
        coi_nats: info_cost(params, &step, &lt.z)?,
    })
}

/// [`value_of_info`] over `n` visited transitions.
pub fn voi_scatter(
    params: &AgentParams,
    spec: &EnvSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<VoiPoint>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0501);
    collect_transitions(params, spec, n, seed)?
        .iter()
        .map(|lt| value_of_info(params, lt, &mut rng))
        .collect()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Mean per-coordinate `KL(φ(s′) ‖ m(z, a))` in bits, sorted descending.
pub fn coord_kl_sparsity(params: &AgentParams, states: &[LatentTransition]) -> Result<Vec<f64>, EvalError> {
    if states.is_empty() {
        return Err(EvalError::Empty("coord_kl_sparsity", "state"));
    }
    let mut acc = vec![0.0; params.latent_dim()];
    for lt in states {
        let phi = params.encoder_dist(&lt.transition.next_obs);
        let prior = params.prior_predict(&lt.z, &lt.transition.action)?;
        let per = kl_per_coordinate(&phi, &prior).map_err(crate::agent::AgentError::from)?;
        for (a, k) in acc.iter_mut().zip(per) {
            *a += k;
        }
    }
    let mut bits: Vec<f64> = acc
        .into_iter()
        .map(|a| nats_to_bits(a / states.len() as f64))
        .collect();
    bits.sort_by(|a, b| b.total_cmp(a));
    Ok(bits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBin {
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub count: usize,
    pub mean_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean_gap: f64,
    pub min_gap: f64,
    pub episodes: usize,
    pub crashes: usize,
    /// Equal-count bins over the visited gaps, ascending.
    pub bins: Vec<GapBin>,
}

/// Following-gap statistics of reactive evaluation on lanedrive, with
/// per-step bits grouped into `n_bins` equal-count gap bins.
pub fn gap_statistics(
    params: &AgentParams,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    n_bins: usize,
) -> Result<GapStats, EvalError> {
    if spec.kind != EnvKind::LaneDrive {
        return Err(EvalError::WrongEnv {
            probe: "gap_statistics",
            expected: EnvKind::LaneDrive.name(),
            got: spec.kind.name(),
        });
    }
    if n_bins == 0 {
        return Err(EvalError::Empty("gap_statistics", "bin"));
    }
    let eps = run_episodes(params, spec, 0.0, episodes, seed, None)?;
    let mut pts: Vec<(f64, f64)> = eps.iter().flat_map(|e| e.gaps.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let bins = (0..n_bins)
        .filter_map(|b| {
            let chunk = &pts[b * n / n_bins..(b + 1) * n / n_bins];
            (!chunk.is_empty()).then(|| GapBin {
                gap_lo: chunk[0].0,
                gap_hi: chunk[chunk.len() - 1].0,
                count: chunk.len(),
                mean_bits: chunk.iter().map(|p| p.1).sum::<f64>() / chunk.len() as f64,
            })
        })
        .collect();
    Ok(GapStats {
        mean_gap: pts.iter().map(|p| p.0).sum::<f64>() / n as f64,
        min_gap: pts.first().map_or(f64::NAN, |p| p.0),
        episodes,
        crashes: eps.iter().filter(|e| e.crashed).count(),
        bins,
    })
}

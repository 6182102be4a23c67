//! Reuse of a trained latent space for new tasks: a short list of latent
//! codes, each unrolled open-loop through the prior, searched with the
//! cross-entropy method.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentError, AgentParams};
use crate::envs::{Env, EnvError, EnvSpec};

/// Search box for every latent coordinate; the encoder mean never leaves it.
pub const LATENT_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HrlError {
    #[error("plan needs at least one latent code")]
    EmptyPlan,
    #[error("latent code {index} has {got} dimensions, expected {expected}")]
    LatentDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("latent code {0} is not finite")]
    NonFinite(usize),
    #[error("bad CEM config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// `z_list[i]` is commanded for `segment_horizon` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPlan {
    pub z_list: Vec<Vec<f64>>,
    pub segment_horizon: usize,
}

impl BehaviorPlan {
    pub fn validate(&self, latent_dim: usize) -> Result<(), HrlError> {
        if self.z_list.is_empty() {
            return Err(HrlError::EmptyPlan);
        }
        for (index, z) in self.z_list.iter().enumerate() {
            if z.len() != latent_dim {
                return Err(HrlError::LatentDim {
                    index,
                    expected: latent_dim,
                    got: z.len(),
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(HrlError::NonFinite(index));
            }
        }
        Ok(())
    }

    fn from_flat(flat: &[f64], latent_dim: usize, segment_horizon: usize) -> Self {
        Self {
            z_list: flat.chunks(latent_dim).map(<[f64]>::to_vec).collect(),
            segment_horizon,
        }
    }
}

/// Total reward of `plan` from `env.reset(seed)`. Within a segment the
/// action is the policy mean `tanh(μ_π(z))` and `z` then moves to the prior
/// mean `m(z, a)`; at a segment boundary the next planned code replaces
/// the chain state. Observations are never read.
pub fn plan_return(
    params: &AgentParams,
    spec: &EnvSpec,
    plan: &BehaviorPlan,
    seed: u64,
) -> Result<f64, HrlError> {
    plan.validate(params.latent_dim())?;
    let mut env = Env::new(spec.clone())?;
    env.reset(seed);
    let mut total = 0.0;
    for z0 in &plan.z_list {
        let mut z = z0.clone();
        for _ in 0..plan.segment_horizon {
            let action: Vec<f64> = params.policy_dist(&z).mean.iter().map(|m| m.tanh()).collect();
            let res = env.step(&action)?;
            total += res.reward;
            if res.terminal || res.truncated {
                return Ok(total);
            }
            z = params.prior_predict(&z, &action)?.mean;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub initial_std: f64,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elite_fraction: 0.25,
            iterations: 20,
            initial_std: 1.0,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), HrlError> {
        if self.population < 2 {
            return Err(HrlError::BadConfig(format!("population {} < 2", self.population)));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(HrlError::BadConfig(format!(
                "elite_fraction {} outside (0, 1]",
                self.elite_fraction
            )));
        }
        if !(self.initial_std.is_finite() && self.initial_std > 0.0) {
            return Err(HrlError::BadConfig(format!("initial_std {}", self.initial_std)));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    /// Best of this iteration's population.
    pub iteration_best: f64,
    /// Best seen so far.
    pub best_return: f64,
    pub mean_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemResult {
    pub best: BehaviorPlan,
    pub best_return: f64,
    pub curve: Vec<CemIteration>,
}

/// Cross-entropy search over the `k · K` concatenated codes. Every candidate
/// is scored by [`plan_return`] from the same reset `env_seed`.
pub fn cem_optimize(
    params: &AgentParams,
    spec: &EnvSpec,
    k: usize,
    segment_horizon: usize,
    cem: &CemConfig,
    env_seed: u64,
) -> Result<CemResult, HrlError> {
    cem.validate()?;
    if k == 0 {
        return Err(HrlError::EmptyPlan);
    }
    let latent = params.latent_dim();
    let dim = k * latent;
    let mut rng = ChaCha8Rng::seed_from_u64(cem.seed);
    let mut mean = vec![0.0; dim];
    let mut std = vec![cem.initial_std; dim];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut curve = Vec::with_capacity(cem.iterations);
    let n_elite = cem.elites();

    for iteration in 0..cem.iterations {
        let mut scored = Vec::with_capacity(cem.population);
        for _ in 0..cem.population {
            let x: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (m + s * e).clamp(-LATENT_BOUND, LATENT_BOUND)
                })
                .collect();
            let plan = BehaviorPlan::from_flat(&x, latent, segment_horizon);
            let ret = plan_return(params, spec, &plan, env_seed)?;
            scored.push((x, ret));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        if best.as_ref().is_none_or(|b| scored[0].1 > b.1) {
            best = Some(scored[0].clone());
        }
        let elites = &scored[..n_elite];
        for d in 0..dim {
            let m = elites.iter().map(|e| e.0[d]).sum::<f64>() / n_elite as f64;
            let v = elites.iter().map(|e| (e.0[d] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[d] = m;
            std[d] = v.sqrt();
        }
        curve.push(CemIteration {
            iteration,
            iteration_best: scored[0].1,
            best_return: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1),
            mean_std: std.iter().sum::<f64>() / dim as f64,
        });
    }

    let (x, best_return) = match best {
        Some(b) => b,
        None => {
            let plan = BehaviorPlan::from_flat(&mean, latent, segment_horizon);
            let r = plan_return(params, spec, &plan, env_seed)?;
            (mean, r)
        }
    };
    Ok(CemResult {
        best: BehaviorPlan::from_flat(&x, latent, segment_horizon),
        best_return,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Architecture, VariantKind};
    use crate::envs::EnvKind;

    fn params(seed: u64) -> (AgentParams, EnvSpec) {
        let spec = EnvSpec::new(EnvKind::PointMass);
        let arch = Architecture {
            obs_dim: spec.obs_dim,
            act_dim: spec.act_dim,
            latent_dim: 3,
            hidden: vec![16, 16],
        };
        (AgentParams::init(arch, VariantKind::Rpc, seed), spec)
    }

    #[test]
    fn zero_horizon_earns_nothing() {
        let (p, spec) = params(0);
        let plan = BehaviorPlan {
            z_list: vec![vec![0.5; 3]],
            segment_horizon: 0,
        };
        assert_eq!(plan_return(&p, &spec, &plan, 1).unwrap(), 0.0);
    }

    #[test]
    fn plan_return_matches_a_hand_unrolled_chain() {
        let (p, spec) = params(1);
        let z_list = vec![vec![0.3, -1.0, 2.0], vec![-0.5, 0.0, 0.7]];
        let plan = BehaviorPlan {
            z_list: z_list.clone(),
            segment_horizon: 40,
        };
        let mut env = Env::new(spec.clone()).unwrap();
        env.reset(9);
        let mut want = 0.0;
        for z0 in &z_list {
            let mut z = z0.clone();
            for _ in 0..40 {
                let a: Vec<f64> = p.policy_dist(&z).mean.iter().map(|m| m.tanh()).collect();
                want += env.step(&a).unwrap().reward;
                z = p.learned_prior(&z, &a).mean;
            }
        }
        let got = plan_return(&p, &spec, &plan, 9).unwrap();
        assert_eq!(got, want);
        assert_eq!(plan_return(&p, &spec, &plan, 9).unwrap(), got);
    }

    #[test]
    fn plan_return_never_touches_the_encoder() {
        let (mut p, spec) = params(2);
        let plan = BehaviorPlan {
            z_list: vec![vec![1.0, 0.0, -1.0]],
            segment_horizon: 100,
        };
        let before = plan_return(&p, &spec, &plan, 3).unwrap();
        let names: Vec<String> = p.store.names().filter(|n| n.starts_with("enc.")).cloned().collect();
        for n in names {
            p.store.get_mut(&n).unwrap().data_mut().fill(f64::NAN);
        }
        assert_eq!(plan_return(&p, &spec, &plan, 3).unwrap(), before);
    }

    #[test]
    fn episode_end_stops_the_plan() {
        let (p, spec) = params(3);
        let plan = BehaviorPlan {
            z_list: vec![vec![0.0; 3]; 3],
            segment_horizon: 100,
        };
        // The 100-step horizon ends the episode with the first segment.
        let r = plan_return(&p, &spec, &plan, 0).unwrap();
        let one = BehaviorPlan {
            z_list: vec![vec![0.0; 3]],
            segment_horizon: 100,
        };
        assert_eq!(r, plan_return(&p, &spec, &one, 0).unwrap());
    }

    #[test]
    fn plan_validation() {
        let (p, spec) = params(4);
        let bad = |z_list: Vec<Vec<f64>>| BehaviorPlan {
            z_list,
            segment_horizon: 5,
        };
        assert!(matches!(plan_return(&p, &spec, &bad(vec![]), 0), Err(HrlError::EmptyPlan)));
        assert!(matches!(
            plan_return(&p, &spec, &bad(vec![vec![0.0; 2]]), 0),
            Err(HrlError::LatentDim { .. })
        ));
        assert!(matches!(
            plan_return(&p, &spec, &bad(vec![vec![f64::NAN; 3]]), 0),
            Err(HrlError::NonFinite(0))
        ));
    }

    #[test]
    fn tiny_cem_returns_the_better_of_two() {
        let (p, spec) = params(5);
        let cem = CemConfig {
            population: 2,
            elite_fraction: 0.5,
            iterations: 1,
            initial_std: 1.0,
            seed: 7,
        };
        let res = cem_optimize(&p, &spec, 1, 50, &cem, 2).unwrap();
        // Replay the two draws.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let returns: Vec<f64> = (0..2)
            .map(|_| {
                let z: Vec<f64> = (0..3)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        e
                    })
                    .collect();
                let plan = BehaviorPlan {
                    z_list: vec![z],
                    segment_horizon: 50,
                };
                plan_return(&p, &spec, &plan, 2).unwrap()
            })
            .collect();
        assert_eq!(res.best_return, returns[0].max(returns[1]));
        assert_eq!(plan_return(&p, &spec, &res.best, 2).unwrap(), res.best_return);
    }

    #[test]
    fn best_so_far_is_monotone() {
        let (p, spec) = params(6);
        let cem = CemConfig {
            population: 8,
            iterations: 6,
            ..CemConfig::default()
        };
        let res = cem_optimize(&p, &spec, 2, 20, &cem, 1).unwrap();
        assert_eq!(res.curve.len(), 6);
        assert!(res.curve.windows(2).all(|w| w[1].best_return >= w[0].best_return));
        assert_eq!(res.curve.last().unwrap().best_return, res.best_return);
        assert!(res.best.z_list.iter().flatten().all(|v| v.abs() <= LATENT_BOUND));
    }

    #[test]
    fn cem_config_bounds() {
        let base = CemConfig::default();
        assert!(CemConfig { population: 1, ..base.clone() }.validate().is_err());
        assert!(CemConfig { elite_fraction: 0.0, ..base.clone() }.validate().is_err());
        assert!(CemConfig { elite_fraction: 1.5, ..base.clone() }.validate().is_err());
        assert!(CemConfig { initial_std: 0.0, ..base.clone() }.validate().is_err());
        assert_eq!(base.elites(), 8);
    }
}

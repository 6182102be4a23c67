use serde::{Deserialize, Serialize};

use super::{rollout, Condition, EvalError, EvalReport};
use crate::agent::{train, ActMode, AgentParams, TrainConfig, VariantKind, VariantSpec};
use crate::envs::EnvSpec;

/// Clean evaluation on every `(mass, friction)` pair. Rows follow
/// `mass_scales`, columns `friction_scales`.
pub fn robust_sweep(
    params: &AgentParams,
    spec: &EnvSpec,
    mass_scales: &[f64],
    friction_scales: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<EvalReport>>, EvalError> {
    if mass_scales.is_empty() || friction_scales.is_empty() {
        return Err(EvalError::Empty("robust_sweep", "scale"));
    }
    mass_scales
        .iter()
        .map(|&m| {
            friction_scales
                .iter()
                .map(|&f| {
                    let perturbed = spec.perturb_params(m, f)?;
                    let mut r = rollout(params, &perturbed, ActMode::Reactive, 0.0, episodes, seed)?;
                    r.condition = Condition {
                        mode: "robust".into(),
                        ..Condition::clean(&perturbed)
                    };
                    Ok(r)
                })
                .collect()
        })
        .collect()
}

/// Linear-interpolation quantile of an unsorted sample, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub budget_bits: f64,
    pub median_return: f64,
    pub q25_return: f64,
    pub q75_return: f64,
    /// Per seed, the mean of its last evaluations.
    pub seed_returns: Vec<f64>,
    /// Mean over seeds of the per-step cost over the final 10% of training.
    pub mean_bits: f64,
}

/// Train every `(variant, budget, seed)` from `base` and summarise each
/// `(variant, budget)` by median and interquartile range over seeds. A seed
/// scores the mean of its last `last_evals` evaluation rounds. Runs happen
/// one after another.
pub fn bitrate_sweep(
    base: &TrainConfig,
    variants: &[VariantKind],
    budgets_bits: &[f64],
    seeds: &[u64],
    last_evals: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if budgets_bits.is_empty() {
        return Err(EvalError::Empty("bitrate_sweep", "budget"));
    }
    if seeds.is_empty() {
        return Err(EvalError::Empty("bitrate_sweep", "seed"));
    }
    if variants.is_empty() {
        return Err(EvalError::Empty("bitrate_sweep", "variant"));
    }
    let mut rows = Vec::new();
    for &kind in variants {
        for &budget in budgets_bits {
            let mut returns = Vec::with_capacity(seeds.len());
            let mut bits = 0.0;
            for &seed in seeds {
                let config = TrainConfig {
                    variant: VariantSpec::new(kind, budget)?,
                    seed,
                    ..base.clone()
                };
                let out = train(&config)?;
                let evals: Vec<f64> = out.evals.iter().map(|e| e.mean_return).collect();
                let tail = &evals[evals.len().saturating_sub(last_evals.max(1))..];
                let score = if tail.is_empty() {
                    super::rollout(&out.params, &config.env, ActMode::Reactive, 0.0, config.eval_episodes.max(1), seed)?
                        .mean_return
                } else {
                    tail.iter().sum::<f64>() / tail.len() as f64
                };
                returns.push(score);
                bits += out.final_cost_bits(0.1);
            }
            rows.push(SweepRow {
                variant: kind.name().into(),
                budget_bits: budget,
                median_return: quantile(&returns, 0.5),
                q25_return: quantile(&returns, 0.25),
                q75_return: quantile(&returns, 0.75),
                seed_returns: returns,
                mean_bits: bits / seeds.len() as f64,
            });
        }
    }
    Ok(rows)
}

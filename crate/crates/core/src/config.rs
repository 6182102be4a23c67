//! Flat `key = value` run configuration. Files and `--key value` flags share
//! one key space; later assignments win, unknown keys are errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{TrainConfig, VariantKind, VariantSpec};
use crate::envs::{EnvKind, EnvSpec};
use crate::hrl::CemConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse `{value}` as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("flag `{0}` needs a value")]
    FlagWithoutValue(String),
    #[error("expected a `--key` flag, got `{0}`")]
    NotAFlag(String),
    #[error("io: {0}")]
    Io(String),
}

/// Everything a subcommand needs. Probe knobs default to sizes that finish
/// in minutes on one core.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub variant: VariantKind,
    /// Budget in bits per step.
    pub bitrate: f64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub dual_lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub log_every: usize,
    pub out_dir: PathBuf,
    /// Trained agent for the evaluation subcommands.
    pub checkpoint: Option<PathBuf>,
    /// Episodes per evaluation condition.
    pub episodes: usize,
    pub dropout_ps: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub n_states: usize,
    pub mass_scales: Vec<f64>,
    pub friction_scales: Vec<f64>,
    pub budgets: Vec<f64>,
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    pub last_evals: usize,
    pub voi_states: usize,
    pub draws: usize,
    pub hrl_k: usize,
    pub segment_horizon: usize,
    pub cem_population: usize,
    pub cem_elite_fraction: f64,
    pub cem_iterations: usize,
    pub cem_initial_std: f64,
    pub hrl_env_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass,
            variant: VariantKind::Rpc,
            bitrate: 1.0,
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
            out_dir: PathBuf::from("runs/default"),
            checkpoint: None,
            episodes: 10,
            dropout_ps: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            epsilons: vec![0.05, 0.1, 0.2],
            n_states: 20,
            mass_scales: vec![0.5, 1.0, 2.0],
            friction_scales: vec![0.5, 1.0, 2.0],
            budgets: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            variants: VariantKind::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            last_evals: 50,
            voi_states: 500,
            draws: 100,
            hrl_k: 1,
            segment_horizon: 100,
            cem_population: 32,
            cem_elite_fraction: 0.25,
            cem_iterations: 20,
            cem_initial_std: 1.0,
            hrl_env_seed: 0,
        }
    }
}

fn one<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Type {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn list<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| one(key, s, expected))
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key in file order, each with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("env", self.env.name().into()),
            ("variant", self.variant.name().into()),
            ("bitrate", self.bitrate.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("hidden", join(&self.hidden)),
            ("lr", self.lr.to_string()),
            ("dual_lr", self.dual_lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("seed", self.seed.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("log_every", self.log_every.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            (
                "checkpoint",
                self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("episodes", self.episodes.to_string()),
            ("dropout_ps", join(&self.dropout_ps)),
            ("epsilons", join(&self.epsilons)),
            ("n_states", self.n_states.to_string()),
            ("mass_scales", join(&self.mass_scales)),
            ("friction_scales", join(&self.friction_scales)),
            ("budgets", join(&self.budgets)),
            (
                "variants",
                self.variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","),
            ),
            ("seeds", join(&self.seeds)),
            ("last_evals", self.last_evals.to_string()),
            ("voi_states", self.voi_states.to_string()),
            ("draws", self.draws.to_string()),
            ("hrl_k", self.hrl_k.to_string()),
            ("segment_horizon", self.segment_horizon.to_string()),
            ("cem_population", self.cem_population.to_string()),
            ("cem_elite_fraction", self.cem_elite_fraction.to_string()),
            ("cem_iterations", self.cem_iterations.to_string()),
            ("cem_initial_std", self.cem_initial_std.to_string()),
            ("hrl_env_seed", self.hrl_env_seed.to_string()),
        ]
    }

    /// Assign one key. `-` in keys is read as `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        const REAL: &str = "a number";
        const COUNT: &str = "a non-negative integer";
        match k {
            "env" => {
                self.env = v.parse().map_err(|_| ConfigError::Type {
                    key: key.clone(),
                    value: v.into(),
                    expected: "pointmass, lanedrive or pendulum",
                })?
            }
            "variant" => self.variant = one(k, v, "rpc, vib, vib_reward or sac")?,
            "bitrate" => self.bitrate = one(k, v, REAL)?,
            "latent_dim" => self.latent_dim = one(k, v, COUNT)?,
            "hidden" => self.hidden = list(k, v, "comma-separated integers")?,
            "lr" => self.lr = one(k, v, REAL)?,
            "dual_lr" => self.dual_lr = one(k, v, REAL)?,
            "batch_size" => self.batch_size = one(k, v, COUNT)?,
            "total_steps" => self.total_steps = one(k, v, COUNT)?,
            "replay_capacity" => self.replay_capacity = one(k, v, COUNT)?,
            "gamma" => self.gamma = one(k, v, REAL)?,
            "tau" => self.tau = one(k, v, REAL)?,
            "seed" => self.seed = one(k, v, COUNT)?,
            "warmup_steps" => self.warmup_steps = one(k, v, COUNT)?,
            "eval_every" => self.eval_every = one(k, v, COUNT)?,
            "eval_episodes" => self.eval_episodes = one(k, v, COUNT)?,
            "log_every" => self.log_every = one(k, v, COUNT)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "episodes" => self.episodes = one(k, v, COUNT)?,
            "dropout_ps" => self.dropout_ps = list(k, v, "comma-separated numbers")?,
            "epsilons" => self.epsilons = list(k, v, "comma-separated numbers")?,
            "n_states" => self.n_states = one(k, v, COUNT)?,
            "mass_scales" => self.mass_scales = list(k, v, "comma-separated numbers")?,
            "friction_scales" => self.friction_scales = list(k, v, "comma-separated numbers")?,
            "budgets" => self.budgets = list(k, v, "comma-separated numbers")?,
            "variants" => self.variants = list(k, v, "comma-separated variant names")?,
            "seeds" => self.seeds = list(k, v, "comma-separated integers")?,
            "last_evals" => self.last_evals = one(k, v, COUNT)?,
            "voi_states" => self.voi_states = one(k, v, COUNT)?,
            "draws" => self.draws = one(k, v, COUNT)?,
            "hrl_k" => self.hrl_k = one(k, v, COUNT)?,
            "segment_horizon" => self.segment_horizon = one(k, v, COUNT)?,
            "cem_population" => self.cem_population = one(k, v, COUNT)?,
            "cem_elite_fraction" => self.cem_elite_fraction = one(k, v, REAL)?,
            "cem_iterations" => self.cem_iterations = one(k, v, COUNT)?,
            "cem_initial_std" => self.cem_initial_std = one(k, v, REAL)?,
            "hrl_env_seed" => self.hrl_env_seed = one(k, v, COUNT)?,
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Apply `key = value` lines. `#` starts a comment; blank lines are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Apply `--key value` (or `--key=value`) pairs.
    pub fn apply_flags<S: AsRef<str>>(&mut self, flags: &[S]) -> Result<(), ConfigError> {
        let mut it = flags.iter().map(AsRef::as_ref);
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| ConfigError::NotAFlag(flag.into()))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it.next().ok_or_else(|| ConfigError::FlagWithoutValue(flag.into()))?;
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    /// Defaults, then the optional file, then flags; validated.
    pub fn load<S: AsRef<str>>(file: Option<&Path>, flags: &[S]) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
            c.apply_text(&text)?;
        }
        c.apply_flags(flags)?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// The text [`RunConfig::parse_str`] reads back to `self`.
    pub fn resolved(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, reason: String| Err(ConfigError::Invalid { key, reason });
        let positive = |key: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                bad(key, format!("must be positive and finite, got {v}"))
            }
        };
        let nonzero = |key: &'static str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                bad(key, "must be at least 1".into())
            }
        };
        if !(self.bitrate.is_finite() && self.bitrate >= 0.0) {
            return bad("bitrate", format!("must be ≥ 0 and finite, got {}", self.bitrate));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        positive("lr", self.lr)?;
        positive("dual_lr", self.dual_lr)?;
        positive("cem_initial_std", self.cem_initial_std)?;
        nonzero("latent_dim", self.latent_dim)?;
        nonzero("batch_size", self.batch_size)?;
        nonzero("total_steps", self.total_steps)?;
        nonzero("eval_episodes", self.eval_episodes)?;
        nonzero("log_every", self.log_every)?;
        nonzero("episodes", self.episodes)?;
        nonzero("n_states", self.n_states)?;
        nonzero("voi_states", self.voi_states)?;
        nonzero("draws", self.draws)?;
        nonzero("hrl_k", self.hrl_k)?;
        nonzero("last_evals", self.last_evals)?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one layer, all widths ≥ 1".into());
        }
        if self.replay_capacity < self.batch_size {
            return bad(
                "replay_capacity",
                format!("{} is below batch_size {}", self.replay_capacity, self.batch_size),
            );
        }
        if self.dropout_ps.is_empty() || self.dropout_ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("dropout_ps", "needs probabilities in [0, 1]".into());
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("epsilons", "needs radii ≥ 0".into());
        }
        for (key, xs) in [("mass_scales", &self.mass_scales), ("friction_scales", &self.friction_scales)] {
            if xs.is_empty() || xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad(key, "needs positive scales".into());
            }
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("budgets", "needs budgets ≥ 0".into());
        }
        if self.variants.is_empty() {
            return bad("variants", "needs at least one variant".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "needs at least one seed".into());
        }
        self.cem().validate().map_err(|e| ConfigError::Invalid {
            key: "cem_population",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    pub fn train_config(&self) -> TrainConfig {
        // `validate` has already checked the budget.
        let variant = VariantSpec::new(self.variant, self.bitrate).expect("validated bitrate");
        TrainConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden.clone(),
            lr: self.lr,
            dual_lr: self.dual_lr,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            replay_capacity: self.replay_capacity,
            gamma: self.gamma,
            tau: self.tau,
            seed: self.seed,
            warmup_steps: self.warmup_steps,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            log_every: self.log_every,
            ..TrainConfig::new(self.env_spec(), variant)
        }
    }

    pub fn cem(&self) -> CemConfig {
        CemConfig {
            population: self.cem_population,
            elite_fraction: self.cem_elite_fraction,
            iterations: self.cem_iterations,
            initial_std: self.cem_initial_std,
            seed: self.seed,
        }
    }

    pub fn require_checkpoint(&self) -> Result<&Path, ConfigError> {
        self.checkpoint.as_deref().ok_or(ConfigError::Missing("checkpoint"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.lr, 3e-4);
        assert_eq!(c.latent_dim, 8);
    }

    #[test]
    fn bitrate_sets_the_budget() {
        let c = RunConfig::parse_str("bitrate=0.3").unwrap();
        let t = c.train_config();
        assert_eq!(t.variant.bitrate_budget_bits_per_step, 0.3);
        assert_eq!(t.variant.kind, VariantKind::Rpc);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse_str("gamma = 1.5").unwrap_err();
        assert!(e.to_string().contains("gamma"), "{e}");
        let e = RunConfig::parse_str("gama = 0.5").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("gama".into()));
        let e = RunConfig::parse_str("batch_size = lots").unwrap_err();
        assert!(matches!(&e, ConfigError::Type { key, .. } if key == "batch_size"));
        assert!(e.to_string().contains("batch_size"));
        let e = RunConfig::parse_str("just words").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        let e = RunConfig::default().require_checkpoint().unwrap_err();
        assert!(e.to_string().contains("checkpoint"));
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# pilot\nseed = 3\nenv = pendulum\nbitrate = 2\n").unwrap();
        let c = RunConfig::load(Some(&path), &["--seed", "9", "--total-steps=500"]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.total_steps, 500);
        assert_eq!(c.env, EnvKind::Pendulum);
        assert_eq!(c.bitrate, 2.0);
        assert!(matches!(
            RunConfig::load(None, &["--seed"]),
            Err(ConfigError::FlagWithoutValue(_))
        ));
        assert!(matches!(RunConfig::load(None, &["seed", "1"]), Err(ConfigError::NotAFlag(_))));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text(
            "variant = vib_reward\nhidden = 32, 16\nbudgets = 0.1,1\nvariants = rpc,sac\ncheckpoint = a/b.bin\nlr = 0.00123\n",
        )
        .unwrap();
        let back = RunConfig::parse_str(&c.resolved()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hidden, vec![32, 16]);
        assert_eq!(back.variants, vec![VariantKind::Rpc, VariantKind::Sac]);
    }

    #[test]
    fn every_entry_key_is_settable() {
        let c = RunConfig::default();
        for (k, v) in c.entries() {
            let mut d = RunConfig::default();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }

    #[test]
    fn validation_bounds() {
        for text in [
            "tau = 0",
            "lr = -1",
            "bitrate = -0.1",
            "hidden = 0",
            "dropout_ps = 1.2",
            "mass_scales = 0",
            "cem_population = 1",
            "replay_capacity = 10",
            "seeds = ",
        ] {
            assert!(RunConfig::parse_str(text).is_err(), "{text}");
        }
    }
}

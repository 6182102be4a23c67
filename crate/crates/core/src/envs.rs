//! Desk-scale continuous-control environments with strictly positive
//! per-step rewards, scalable physics, and seeded stochasticity.
//!
//! * `pointmass`: 2-D point driven toward a random goal inside `[-1, 1]²`.
//! * `lanedrive`: single-lane car following a leader whose speed random-walks;
//!   reward is ego speed, collisions cost −50 and end the episode.
//! * `pendulum`: torque-limited swing-up, reward `(1 + cos θ)/2`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Lower bound on every non-crash reward.
pub const REWARD_FLOOR: f64 = 1e-3;
pub const CRASH_PENALTY: f64 = -50.0;

const POINTMASS_DRAG: f64 = 0.1;
const LANEDRIVE_DRAG: f64 = 0.02;
const LANEDRIVE_MAX_SPEED: f64 = 30.0;
const LANEDRIVE_ACCEL: f64 = 3.0;
const LEADER_MIN: f64 = 5.0;
const LEADER_MAX: f64 = 25.0;
const GAP_SCALE: f64 = 50.0;
const REL_SPEED_SCALE: f64 = 10.0;
const PENDULUM_MASS: f64 = 0.5;
const PENDULUM_LENGTH: f64 = 1.0;
const PENDULUM_DAMPING: f64 = 0.05;
const GRAVITY: f64 = 9.8;
const MAX_TORQUE: f64 = 2.0;
const MAX_ANG_VEL: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment `{0}` (expected pointmass, lanedrive or pendulum)")]
    UnknownEnv(String),
    #[error("step called after the episode ended; reset first")]
    EpisodeOver,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} dimensions, environment expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("observation has {got} dimensions, environment expects {expected}")]
    ObsDim { expected: usize, got: usize },
    #[error("{0} must be positive and finite")]
    NonPositiveScale(&'static str),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    PointMass,
    LaneDrive,
    Pendulum,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::LaneDrive => "lanedrive",
            EnvKind::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "pointmass" => Ok(EnvKind::PointMass),
            "lanedrive" => Ok(EnvKind::LaneDrive),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub dt: f64,
    pub mass_scale: f64,
    pub friction_scale: f64,
    /// Standard deviation of the process noise (velocity kicks for
    /// pointmass/pendulum, leader speed changes for lanedrive).
    pub noise_scale: f64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let (obs_dim, act_dim, horizon, dt, noise_scale) = match kind {
            EnvKind::PointMass => (6, 2, 100, 0.1, 0.0),
            EnvKind::LaneDrive => (3, 1, 200, 0.5, 1.0),
            EnvKind::Pendulum => (3, 1, 200, 0.05, 0.0),
        };
        Self {
            kind,
            obs_dim,
            act_dim,
            horizon,
            dt,
            mass_scale: 1.0,
            friction_scale: 1.0,
            noise_scale,
        }
    }

    pub fn named(name: &str) -> Result<Self, EnvError> {
        Ok(Self::new(name.parse()?))
    }

    /// Copy with mass and drag/friction multiplied by the given factors.
    pub fn perturb_params(&self, mass_scale: f64, friction_scale: f64) -> Result<Self, EnvError> {
        if !(mass_scale.is_finite() && mass_scale > 0.0) {
            return Err(EnvError::NonPositiveScale("mass_scale"));
        }
        if !(friction_scale.is_finite() && friction_scale > 0.0) {
            return Err(EnvError::NonPositiveScale("friction_scale"));
        }
        Ok(Self {
            mass_scale: self.mass_scale * mass_scale,
            friction_scale: self.friction_scale * friction_scale,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.mass_scale.is_finite() && self.mass_scale > 0.0) {
            return Err(EnvError::NonPositiveScale("mass_scale"));
        }
        if !(self.friction_scale.is_finite() && self.friction_scale > 0.0) {
            return Err(EnvError::NonPositiveScale("friction_scale"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(EnvError::NonPositiveScale("noise_scale"));
        }
        Ok(())
    }

    /// Pointmass drag coefficient per step.
    pub fn drag(&self) -> f64 {
        match self.kind {
            EnvKind::PointMass => POINTMASS_DRAG * self.friction_scale,
            EnvKind::LaneDrive => LANEDRIVE_DRAG * self.friction_scale,
            EnvKind::Pendulum => PENDULUM_DAMPING * self.friction_scale,
        }
    }

    pub fn mass(&self) -> f64 {
        match self.kind {
            EnvKind::Pendulum => PENDULUM_MASS * self.mass_scale,
            _ => self.mass_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    /// Some action coordinate was outside `[-1, 1]` and got clipped.
    pub action_clipped: bool,
}

/// Physical state; public so evaluation code can inspect and overwrite it.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvState {
    PointMass {
        pos: [f64; 2],
        vel: [f64; 2],
        goal: [f64; 2],
    },
    LaneDrive {
        ego_speed: f64,
        leader_speed: f64,
        gap: f64,
    },
    Pendulum {
        theta: f64,
        omega: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
    state: Option<EnvState>,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y.is_finite() {
        y
    } else {
        0.0
    }
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: None,
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Deterministic initial observation for `seed`; zeroes the step counter.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_e417);
        let rng = &mut self.rng;
        self.state = Some(match self.spec.kind {
            EnvKind::PointMass => EnvState::PointMass {
                pos: [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)],
                vel: [0.0, 0.0],
                goal: [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)],
            },
            EnvKind::LaneDrive => EnvState::LaneDrive {
                ego_speed: rng.random_range(10.0..20.0),
                leader_speed: rng.random_range(10.0..20.0),
                gap: rng.random_range(30.0..60.0),
            },
            EnvKind::Pendulum => EnvState::Pendulum {
                theta: rng.random_range(-PI..PI),
                omega: rng.random_range(-1.0..1.0),
            },
        });
        self.t = 0;
        self.done = false;
        self.observe()
    }

    /// Observation of the current state, normalised to O(1) magnitudes.
    pub fn observe(&self) -> Vec<f64> {
        match self.state.as_ref().expect("reset before observe") {
            EnvState::PointMass { pos, vel, goal } => {
                vec![pos[0], pos[1], vel[0], vel[1], goal[0], goal[1]]
            }
            EnvState::LaneDrive {
                ego_speed,
                leader_speed,
                gap,
            } => vec![
                ego_speed / LANEDRIVE_MAX_SPEED,
                gap / GAP_SCALE,
                (leader_speed - ego_speed) / REL_SPEED_SCALE,
            ],
            EnvState::Pendulum { theta, omega } => {
                vec![theta.cos(), theta.sin(), omega / MAX_ANG_VEL]
            }
        }
    }

    /// Overwrite the physical state with the one an observation describes
    /// (clipped into the valid state space). The step counter is kept.
    pub fn set_state_from_obs(&mut self, obs: &[f64]) -> Result<(), EnvError> {
        if obs.len() != self.spec.obs_dim {
            return Err(EnvError::ObsDim {
                expected: self.spec.obs_dim,
                got: obs.len(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite("observation"));
        }
        self.state = Some(match self.spec.kind {
            EnvKind::PointMass => EnvState::PointMass {
                pos: [obs[0].clamp(-1.0, 1.0), obs[1].clamp(-1.0, 1.0)],
                vel: [obs[2], obs[3]],
                goal: [obs[4], obs[5]],
            },
            EnvKind::LaneDrive => {
                let ego_speed = (obs[0] * LANEDRIVE_MAX_SPEED).clamp(0.0, LANEDRIVE_MAX_SPEED);
                EnvState::LaneDrive {
                    ego_speed,
                    leader_speed: (ego_speed + obs[2] * REL_SPEED_SCALE)
                        .clamp(LEADER_MIN, LEADER_MAX),
                    gap: (obs[1] * GAP_SCALE).max(1e-3),
                }
            }
            EnvKind::Pendulum => EnvState::Pendulum {
                theta: obs[1].atan2(obs[0]),
                omega: (obs[2] * MAX_ANG_VEL).clamp(-MAX_ANG_VEL, MAX_ANG_VEL),
            },
        });
        self.done = false;
        Ok(())
    }

    pub fn set_state(&mut self, state: EnvState) {
        self.state = Some(state);
        self.done = false;
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.state.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != self.spec.act_dim {
            return Err(EnvError::ActionDim {
                expected: self.spec.act_dim,
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFinite("action"));
        }
        let clipped = action.iter().any(|a| a.abs() > 1.0);
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let dt = self.spec.dt;
        let drag = self.spec.drag();
        let mass = self.spec.mass();
        let noise = self.spec.noise_scale;
        let mut kick = || -> f64 {
            if noise > 0.0 {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                xi * noise
            } else {
                0.0
            }
        };

        let state = self.state.as_mut().unwrap();
        let (reward, terminal) = match state {
            EnvState::PointMass { pos, vel, goal } => {
                for i in 0..2 {
                    vel[i] = (1.0 - drag) * vel[i] + a[i] / mass * dt + kick() * dt;
                    let p = pos[i] + vel[i] * dt;
                    if p.abs() > 1.0 {
                        pos[i] = p.clamp(-1.0, 1.0);
                        vel[i] = 0.0;
                    } else {
                        pos[i] = p;
                    }
                }
                let d = ((pos[0] - goal[0]).powi(2) + (pos[1] - goal[1]).powi(2)).sqrt();
                ((-4.0 * d).exp().max(REWARD_FLOOR), false)
            }
            EnvState::LaneDrive {
                ego_speed,
                leader_speed,
                gap,
            } => {
                let accel = LANEDRIVE_ACCEL * a[0] / mass - drag * *ego_speed;
                *ego_speed = (*ego_speed + accel * dt).clamp(0.0, LANEDRIVE_MAX_SPEED);
                *leader_speed = (*leader_speed + kick()).clamp(LEADER_MIN, LEADER_MAX);
                *gap += (*leader_speed - *ego_speed) * dt;
                if *gap <= 0.0 {
                    (CRASH_PENALTY, true)
                } else {
                    ((*ego_speed / LANEDRIVE_MAX_SPEED).max(REWARD_FLOOR), false)
                }
            }
            EnvState::Pendulum { theta, omega } => {
                let inertia = mass * PENDULUM_LENGTH * PENDULUM_LENGTH;
                let accel = GRAVITY / PENDULUM_LENGTH * theta.sin() + MAX_TORQUE * a[0] / inertia
                    - drag * *omega;
                *omega = (*omega + accel * dt + kick() * dt).clamp(-MAX_ANG_VEL, MAX_ANG_VEL);
                *theta = wrap_angle(*theta + *omega * dt);
                (((1.0 + theta.cos()) / 2.0).max(REWARD_FLOOR), false)
            }
        };
        self.t += 1;
        let truncated = !terminal && self.t >= self.spec.horizon;
        self.done = terminal || truncated;
        Ok(StepResult {
            next_obs: self.observe(),
            reward,
            terminal,
            truncated,
            action_clipped: clipped,
        })
    }
}

/// Fresh environment reset with `seed`.
pub fn reset(spec: &EnvSpec, seed: u64) -> Result<(Env, Vec<f64>), EnvError> {
    let mut env = Env::new(spec.clone())?;
    let obs = env.reset(seed);
    Ok((env, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(spec: &EnvSpec, seed: u64, actions: &[Vec<f64>]) -> Vec<StepResult> {
        let (mut env, _) = reset(spec, seed).unwrap();
        let mut out = Vec::new();
        for a in actions {
            if env.is_done() {
                break;
            }
            out.push(env.step(a).unwrap());
        }
        out
    }

    #[test]
    fn reset_is_deterministic() {
        let spec = EnvSpec::named("pointmass").unwrap();
        let (_, a) = reset(&spec, 0).unwrap();
        let (_, b) = reset(&spec, 0).unwrap();
        assert_eq!(a, b);
        let (_, c) = reset(&spec, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn observation_dims() {
        for (name, dim) in [("pointmass", 6), ("lanedrive", 3), ("pendulum", 3)] {
            let spec = EnvSpec::named(name).unwrap();
            let (_, obs) = reset(&spec, 3).unwrap();
            assert_eq!(obs.len(), dim);
            assert_eq!(spec.obs_dim, dim);
        }
    }

    #[test]
    fn unknown_env_is_rejected() {
        assert_eq!(
            EnvSpec::named("cartpole").unwrap_err(),
            EnvError::UnknownEnv("cartpole".into())
        );
    }

    #[test]
    fn pointmass_statics() {
        let spec = EnvSpec::named("pointmass").unwrap();
        let (mut env, _) = reset(&spec, 0).unwrap();
        env.set_state(EnvState::PointMass {
            pos: [0.3, -0.2],
            vel: [0.0, 0.0],
            goal: [0.0, 0.0],
        });
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(&r.next_obs[..2], &[0.3, -0.2]);
    }

    #[test]
    fn pointmass_mass_scale_halves_acceleration() {
        let base = EnvSpec::named("pointmass").unwrap();
        let heavy = base.perturb_params(2.0, 1.0).unwrap();
        let dv = |spec: &EnvSpec| {
            let (mut env, _) = reset(spec, 0).unwrap();
            env.set_state(EnvState::PointMass {
                pos: [0.0, 0.0],
                vel: [0.0, 0.0],
                goal: [0.5, 0.5],
            });
            env.step(&[1.0, 0.0]).unwrap().next_obs[2]
        };
        assert!((dv(&heavy) - dv(&base) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perturb_params_examples() {
        let base = EnvSpec::named("pointmass").unwrap();
        assert_eq!(base.perturb_params(1.0, 1.0).unwrap(), base);
        let slick = base.perturb_params(1.0, 0.2).unwrap();
        assert!((slick.drag() - 0.2 * base.drag()).abs() < 1e-15);
        assert_eq!(base.mass_scale, 1.0);
        assert_eq!(
            base.perturb_params(0.0, 1.0).unwrap_err(),
            EnvError::NonPositiveScale("mass_scale")
        );
        assert!(base.perturb_params(1.0, -1.0).is_err());
    }

    #[test]
    fn lanedrive_crash_penalty() {
        let spec = EnvSpec::named("lanedrive").unwrap();
        let (mut env, _) = reset(&spec, 0).unwrap();
        env.set_state(EnvState::LaneDrive {
            ego_speed: 25.0,
            leader_speed: 5.0,
            gap: 0.1,
        });
        let r = env.step(&[1.0]).unwrap();
        assert_eq!(r.reward, -50.0);
        assert!(r.terminal);
        assert!(!r.truncated);
        assert_eq!(env.step(&[0.0]).unwrap_err(), EnvError::EpisodeOver);
    }

    #[test]
    fn pendulum_hanging_down_hits_floor() {
        let spec = EnvSpec::named("pendulum").unwrap();
        let (mut env, _) = reset(&spec, 0).unwrap();
        env.set_state(EnvState::Pendulum {
            theta: PI,
            omega: 0.0,
        });
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(r.reward, REWARD_FLOOR);
    }

    #[test]
    fn horizon_truncates() {
        let spec = EnvSpec::named("pointmass").unwrap();
        let steps = run(&spec, 4, &vec![vec![0.3, -0.1]; 150]);
        assert_eq!(steps.len(), 100);
        assert!(steps[..99].iter().all(|s| !s.truncated && !s.terminal));
        assert!(steps[99].truncated);
    }

    #[test]
    fn out_of_range_actions_are_clipped_and_flagged() {
        let spec = EnvSpec::named("pointmass").unwrap();
        let a = run(&spec, 2, &[vec![5.0, -3.0]]);
        let b = run(&spec, 2, &[vec![1.0, -1.0]]);
        assert!(a[0].action_clipped);
        assert!(!b[0].action_clipped);
        assert_eq!(a[0].next_obs, b[0].next_obs);
    }

    #[test]
    fn action_dimension_checked() {
        let spec = EnvSpec::named("pendulum").unwrap();
        let (mut env, _) = reset(&spec, 0).unwrap();
        assert_eq!(
            env.step(&[0.0, 0.0]).unwrap_err(),
            EnvError::ActionDim {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn set_state_from_obs_round_trips() {
        for name in ["pointmass", "lanedrive", "pendulum"] {
            let spec = EnvSpec::named(name).unwrap();
            let (mut env, obs) = reset(&spec, 9).unwrap();
            env.set_state_from_obs(&obs).unwrap();
            let back = env.observe();
            for (a, b) in obs.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12, "{name}: {obs:?} vs {back:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn trajectories_are_deterministic_bounded_and_positive(
            kind in 0usize..3,
            seed in 0u64..1000,
            actions in prop::collection::vec(prop::collection::vec(-1.5f64..1.5, 2), 1..250),
        ) {
            let name = ["pointmass", "lanedrive", "pendulum"][kind];
            let spec = EnvSpec::named(name).unwrap();
            let acts: Vec<Vec<f64>> = actions.iter().map(|a| a[..spec.act_dim].to_vec()).collect();
            let a = run(&spec, seed, &acts);
            let b = run(&spec, seed, &acts);
            prop_assert_eq!(&a, &b);
            for s in &a {
                prop_assert!(s.next_obs.iter().all(|v| v.is_finite()));
                if s.terminal {
                    prop_assert_eq!(s.reward, CRASH_PENALTY);
                } else {
                    prop_assert!(s.reward > 0.0 && s.reward <= 1.0);
                }
                match spec.kind {
                    EnvKind::PointMass => {
                        prop_assert!(s.next_obs[0].abs() <= 1.0 && s.next_obs[1].abs() <= 1.0);
                    }
                    EnvKind::LaneDrive => {
                        let v = s.next_obs[0] * 30.0;
                        prop_assert!((0.0..=30.0).contains(&v));
                    }
                    EnvKind::Pendulum => {}
                }
            }
            if a.len() == spec.horizon {
                let last = a.last().unwrap();
                prop_assert!(last.terminal || last.truncated);
            }
        }
    }
}

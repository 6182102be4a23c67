use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::distrib::{kl_diag, log_prob, squash_to_range, stddev_from_raw, MEAN_LIMIT};
use crate::envs::{EnvKind, EnvSpec};
use crate::numgraph::{grad_check, AdamConfig, AdamState, GradCheckOptions};

fn arch(obs: usize, act: usize, k: usize) -> Architecture {
    Architecture {
        obs_dim: obs,
        act_dim: act,
        latent_dim: k,
        hidden: vec![16, 16],
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_transition(rng: &mut ChaCha8Rng, a: &Architecture, first: bool, terminal: bool) -> Transition {
    let act: Vec<f64> = normals(rng, a.act_dim).iter().map(|x| x.tanh()).collect();
    Transition {
        obs: normals(rng, a.obs_dim),
        action: act,
        reward: normals(rng, 1)[0],
        next_obs: normals(rng, a.obs_dim),
        is_first: first,
        is_terminal: terminal,
        is_truncated: false,
    }
}

fn random_batch(rng: &mut ChaCha8Rng, a: &Architecture, n: usize) -> Batch {
    let items: Vec<Transition> = (0..n)
        .map(|i| random_transition(rng, a, i % 3 == 0, i % 4 == 1))
        .collect();
    Batch::from_transitions(&items)
}

/// Raw pre-activation giving standard deviation `s`.
fn raw_for_std(s: f64) -> f64 {
    let p = (s - 0.1) / 9.9;
    (p / (1.0 - p)).ln()
}

/// Raw pre-activation whose squashed value is `m`.
fn raw_for_mean(m: f64) -> f64 {
    MEAN_LIMIT * (m / MEAN_LIMIT).atanh()
}

/// Make `net`'s output constant: zero weights, last-layer bias `bias`.
fn set_constant_output(p: &mut AgentParams, net: &crate::numgraph::Mlp, bias: &[f64]) {
    p.zero_network(net.prefix());
    let b = net.bias_name(net.layers() - 1);
    p.store.get_mut(&b).unwrap().data_mut().copy_from_slice(bias);
}

#[test]
fn encode_zero_noise_gives_mean_and_respects_clamps() {
    let p = AgentParams::init(arch(5, 2, 4), VariantKind::Rpc, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let obs: Vec<f64> = normals(&mut rng, 5).iter().map(|x| 50.0 * x).collect();
        let (z, d) = p.encode(&obs, &[0.0; 4]).unwrap();
        assert_eq!(z, d.mean);
        assert!(d.within_clamps());
        let noise = normals(&mut rng, 4);
        assert_eq!(p.encode(&obs, &noise).unwrap(), p.encode(&obs, &noise).unwrap());
    }
    assert!(matches!(
        p.encode(&[f64::NAN, 0.0, 0.0, 0.0, 0.0], &[0.0; 4]),
        Err(AgentError::NonFinite(_))
    ));
}

#[test]
fn zero_weight_prior_is_squashed_identity() {
    let mut p = AgentParams::init(arch(3, 1, 2), VariantKind::Rpc, 0);
    p.zero_network("prior");
    let d = p.prior_predict(&[0.3, -0.2], &[0.5]).unwrap();
    assert_eq!(d.mean, vec![squash_to_range(0.3, -30.0, 30.0), squash_to_range(-0.2, -30.0, 30.0)]);
    assert!((d.mean[0] - 0.3).abs() < 1e-4);
    let mid = stddev_from_raw(0.0);
    assert_eq!(d.stddev, vec![mid, mid]);
    assert!((mid - 5.05).abs() < 1e-12);
    assert!(p.prior_predict(&[0.0], &[0.5]).is_err());
}

#[test]
fn prior_chain_stays_bounded() {
    let mut p = AgentParams::init(arch(3, 1, 3), VariantKind::Rpc, 9);
    let prior = p.nets().prior.clone();
    set_constant_output(&mut p, &prior, &[25.0, -25.0, 7.0, 0.0, 0.0, 0.0]);
    let mut z = vec![0.0; 3];
    for _ in 0..10 {
        let d = p.prior_predict(&z, &[1.0]).unwrap();
        assert!(d.within_clamps());
        z = d.mean;
    }
    assert!(z.iter().all(|v| v.abs() <= 30.0));
}

#[test]
fn initial_prior_values() {
    let d = initial_prior(3);
    assert_eq!(d.mean, vec![0.0; 3]);
    assert_eq!(d.stddev, vec![1.0; 3]);
    assert_eq!(kl_diag(&d, &d).unwrap(), 0.0);
    assert!((log_prob(&initial_prior(1), &[0.0]).unwrap() + 0.9189).abs() < 1e-4);
    assert!((INITIAL_LOG_LAMBDA - 1e-6f64.ln()).abs() < 1e-12);
    assert!((INITIAL_LOG_LAMBDA + 13.8155).abs() < 1e-4);
}

fn tr(obs: Vec<f64>, action: Vec<f64>, next_obs: Vec<f64>, first: bool) -> Transition {
    Transition {
        obs,
        action,
        reward: 0.0,
        next_obs,
        is_first: first,
        is_terminal: false,
        is_truncated: false,
    }
}

#[test]
fn info_cost_zero_when_encoder_matches_prior() {
    let mut p = AgentParams::init(arch(2, 1, 2), VariantKind::Rpc, 0);
    p.zero_network("enc");
    p.zero_network("prior");
    let t = tr(vec![0.4, 0.1], vec![0.2], vec![-1.0, 2.0], false);
    assert_eq!(info_cost(&p, &t, &[0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn info_cost_closed_form_unit_shift() {
    let mut p = AgentParams::init(arch(2, 1, 1), VariantKind::Rpc, 0);
    let nets = p.nets().clone();
    set_constant_output(&mut p, &nets.encoder, &[0.0, raw_for_std(1.0)]);
    set_constant_output(&mut p, &nets.prior, &[raw_for_mean(1.0), raw_for_std(1.0)]);
    let t = tr(vec![0.0, 0.0], vec![0.0], vec![1.0, 1.0], false);
    let c = info_cost(&p, &t, &[0.0]).unwrap();
    assert!((c - 0.5).abs() < 1e-12, "{c}");
    // First step adds KL(N(0,1) ‖ N(0,1)) = 0.
    let first = tr(vec![0.0, 0.0], vec![0.0], vec![1.0, 1.0], true);
    assert!((info_cost(&p, &first, &[0.0]).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn info_cost_matches_monte_carlo_log_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = arch(3, 2, 3);
    for seed in 0..3 {
        let p = AgentParams::init(a.clone(), VariantKind::Rpc, seed);
        let t = random_transition(&mut rng, &a, false, false);
        let z_t = normals(&mut rng, 3);
        let analytic = info_cost(&p, &t, &z_t).unwrap();
        let phi = p.encoder_dist(&t.next_obs);
        let m = p.prior_predict(&z_t, &t.action).unwrap();
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = distrib::sample_reparam(&phi, &normals(&mut rng, 3)).unwrap();
            let r = log_prob(&phi, &z).unwrap() - log_prob(&m, &z).unwrap();
            sum += r;
            sq += r * r;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - analytic).abs() < 3.0 * se, "mc {mean} ± {se}, analytic {analytic}");
    }
}

#[test]
fn augmented_reward_arithmetic() {
    assert_eq!(augmented_reward(1.0, 1.0, 0.5), 0.5);
    assert_eq!(augmented_reward(2.5, 7.0, 0.0), 2.5);
    assert_eq!(augmented_reward(2.5, 0.0, 3.0), 2.5);
}

fn sac_with_constant_targets(a: &Architecture, target: f64) -> AgentParams {
    let mut p = AgentParams::init(a.clone(), VariantKind::Sac, 0);
    let nets = p.nets().clone();
    set_constant_output(&mut p, &nets.q1_target, &[target]);
    set_constant_output(&mut p, &nets.q2_target, &[target + 1.0]);
    p
}

fn one_transition_batch(reward: f64, terminal: bool) -> Batch {
    let t = Transition {
        obs: vec![0.1, 0.2],
        action: vec![0.3],
        reward,
        next_obs: vec![0.0, -0.1],
        is_first: false,
        is_terminal: terminal,
        is_truncated: false,
    };
    Batch::from_transitions([&t])
}

#[test]
fn critic_target_bootstrap_arithmetic() {
    let a = arch(2, 1, 2);
    let p = sac_with_constant_targets(&a, 10.0);
    let noise = BatchNoise::zeros(1, 2, 1);
    let cg = critic_loss(&p, &one_transition_batch(0.5, false), &noise, 0.99).unwrap();
    let y = cg.graph.value(cg.target).unwrap().item();
    assert!((y - 10.4).abs() < 1e-12, "{y}");
    let cg = critic_loss(&p, &one_transition_batch(0.5, true), &noise, 0.99).unwrap();
    assert_eq!(cg.graph.value(cg.target).unwrap().item(), 0.5);
}

#[test]
fn terminal_target_is_augmented_reward() {
    let a = arch(2, 1, 2);
    let mut p = AgentParams::init(a, VariantKind::Rpc, 4);
    p.log_lambda = 0.3f64.ln();
    let noise = BatchNoise::zeros(1, 2, 1);
    let cg = critic_loss(&p, &one_transition_batch(1.5, true), &noise, 0.99).unwrap();
    let cost = cg.graph.value(cg.cost).unwrap().item();
    assert!(cost > 0.0);
    let y = cg.graph.value(cg.target).unwrap().item();
    assert!((y - augmented_reward(1.5, cost, 0.3)).abs() < 1e-12);
}

#[test]
fn critic_loss_zero_when_q_equals_target() {
    let a = arch(2, 1, 2);
    let mut p = sac_with_constant_targets(&a, 0.0);
    let nets = p.nets().clone();
    for n in [&nets.q1, &nets.q2, &nets.q1_target, &nets.q2_target] {
        p.zero_network(n.prefix());
    }
    let noise = BatchNoise::zeros(1, 2, 1);
    let cg = critic_loss(&p, &one_transition_batch(0.0, false), &noise, 0.99).unwrap();
    assert_eq!(cg.loss_value(), 0.0);
}

#[test]
fn vib_cost_stays_out_of_critic_target() {
    let a = arch(2, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(&mut rng, &a, 8);
    let noise = BatchNoise::sample(&mut rng, 8, 2, 1);
    let targets = |kind| {
        let mut p = AgentParams::init(a.clone(), kind, 5);
        p.log_lambda = 0.0;
        let cg = critic_loss(&p, &batch, &noise, 0.9).unwrap();
        (cg.graph.value(cg.target).unwrap().clone(), cg.graph.value(cg.cost).unwrap().clone())
    };
    let (y_vib, cost) = targets(VariantKind::Vib);
    let (y_vr, _) = targets(VariantKind::VibReward);
    for i in 0..8 {
        let diff = y_vib.data()[i] - y_vr.data()[i];
        assert!((diff - cost.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn actor_loss_with_zero_lambda_is_negative_mean_q() {
    let a = arch(3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = AgentParams::init(a.clone(), VariantKind::Rpc, 1);
    p.log_lambda = f64::NEG_INFINITY;
    let batch = random_batch(&mut rng, &a, 6);
    let noise = BatchNoise::sample(&mut rng, 6, 2, 2);
    let ag = actor_loss(&p, &batch, &noise).unwrap();
    assert!(ag.info.is_none());
    let q = ag.graph.value(ag.q).unwrap();
    let mean = q.data().iter().sum::<f64>() / 6.0;
    assert!((ag.loss_value() + mean).abs() < 1e-12);
}

#[test]
fn fixed_prior_variants_share_actor_loss() {
    let a = arch(3, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = random_batch(&mut rng, &a, 8);
    let noise = BatchNoise::sample(&mut rng, 8, 2, 1);
    let loss = |kind| {
        let mut p = AgentParams::init(a.clone(), kind, 2);
        p.log_lambda = 0.5;
        actor_loss(&p, &batch, &noise).unwrap().loss_value()
    };
    assert_eq!(loss(VariantKind::Vib), loss(VariantKind::VibReward));
    assert_ne!(loss(VariantKind::Vib), loss(VariantKind::Rpc));
}

fn gradcheck_opts() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        tolerance: 1e-4,
        ..GradCheckOptions::default()
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (i, kind) in VariantKind::ALL.into_iter().enumerate() {
        let a = arch(3, 2, 2);
        let mut p = AgentParams::init(a.clone(), kind, i as u64);
        p.log_lambda = -1.0;
        let batch = random_batch(&mut rng, &a, 4);
        let noise = BatchNoise::sample(&mut rng, 4, 2, 2);
        let mut cg = critic_loss(&p, &batch, &noise, 0.95).unwrap();
        let r = grad_check(&mut cg.graph, &Default::default(), cg.loss, &gradcheck_opts()).unwrap();
        assert!(r.passed(), "{kind} critic: {r:?}");
        let mut ag = actor_loss(&p, &batch, &noise).unwrap();
        let r = grad_check(&mut ag.graph, &Default::default(), ag.loss, &gradcheck_opts()).unwrap();
        assert!(r.passed(), "{kind} actor: {r:?}");
    }
}

#[test]
fn loss_graphs_only_train_their_own_networks() {
    let a = arch(3, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = random_batch(&mut rng, &a, 8);
    let noise = BatchNoise::sample(&mut rng, 8, 2, 1);
    for kind in VariantKind::ALL {
        let mut p = AgentParams::init(a.clone(), kind, 3);
        p.log_lambda = 0.0;
        let cg = critic_loss(&p, &batch, &noise, 0.99).unwrap();
        let critic_keys: Vec<String> = losses::grads_for(&cg.graph, cg.loss).unwrap().into_keys().collect();
        assert!(critic_keys.iter().all(|k| k.starts_with("q1.") || k.starts_with("q2.")), "{critic_keys:?}");
        assert_eq!(critic_keys.len(), 12);
        let ag = actor_loss(&p, &batch, &noise).unwrap();
        let actor_keys: Vec<String> = losses::grads_for(&ag.graph, ag.loss).unwrap().into_keys().collect();
        assert!(actor_keys.iter().all(|k| !k.starts_with('q')), "{actor_keys:?}");
        let prior_trained = actor_keys.iter().any(|k| k.starts_with("prior."));
        assert_eq!(prior_trained, kind.predicted_prior(), "{kind}");
    }
}

#[test]
fn updates_leave_other_networks_untouched() {
    let a = arch(3, 1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = random_batch(&mut rng, &a, 8);
    let noise = BatchNoise::sample(&mut rng, 8, 2, 1);
    let mut p = AgentParams::init(a, VariantKind::Rpc, 3);
    p.log_lambda = 0.0;
    let mut opt = crate::numgraph::Adam::new(AdamConfig::with_lr(1e-2));

    let before = p.clone();
    let ag = actor_loss(&p, &batch, &noise).unwrap();
    opt.step(&mut p.store, &losses::grads_for(&ag.graph, ag.loss).unwrap()).unwrap();
    for (name, t) in before.store.iter() {
        let moved = p.store.expect(name) != t;
        assert_eq!(moved, !name.starts_with('q'), "{name}");
    }

    let before = p.clone();
    let cg = critic_loss(&p, &batch, &noise, 0.99).unwrap();
    opt.step(&mut p.store, &losses::grads_for(&cg.graph, cg.loss).unwrap()).unwrap();
    for (name, t) in before.store.iter() {
        let moved = p.store.expect(name) != t;
        assert_eq!(moved, name.starts_with("q1.") || name.starts_with("q2."), "{name}");
    }
}

#[test]
fn dual_update_signs() {
    let cfg = AdamConfig::with_lr(3e-4);
    let l0 = INITIAL_LOG_LAMBDA;
    let mut s = AdamState::new(1, cfg);
    assert_eq!(dual_update(&mut s, l0, 0.7, 0.7).unwrap(), l0);
    let mut s = AdamState::new(1, cfg);
    assert!(dual_update(&mut s, l0, 2.0, 0.7).unwrap() > l0);
    let mut s = AdamState::new(1, cfg);
    assert!(dual_update(&mut s, l0, 0.1, 0.7).unwrap() < l0);
}

proptest! {
    #[test]
    fn lambda_stays_positive_and_finite(costs in prop::collection::vec(0.0f64..1e6, 1..200), budget in 0.0f64..10.0) {
        let mut s = AdamState::new(1, AdamConfig::with_lr(0.1));
        let mut l = INITIAL_LOG_LAMBDA;
        for c in costs {
            l = dual_update(&mut s, l, c, budget).unwrap();
            prop_assert!(l.is_finite());
            prop_assert!(l.exp() > 0.0);
        }
    }

    #[test]
    fn info_cost_is_nonnegative(seed in 0u64..10_000, first in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = arch(3, 2, 3);
        let p = AgentParams::init(a.clone(), VariantKind::Rpc, seed);
        let t = random_transition(&mut rng, &a, first, false);
        let z = normals(&mut rng, 3);
        prop_assert!(info_cost(&p, &t, &z).unwrap() >= 0.0);
    }
}

#[test]
fn variant_table() {
    use VariantKind::*;
    let table = [(Rpc, true, true), (Vib, false, false), (VibReward, false, true), (Sac, true, false)];
    for (k, prior, reward) in table {
        assert_eq!(k.predicted_prior(), prior, "{k}");
        assert_eq!(k.reward_augmented(), reward, "{k}");
        assert_eq!(k.constrained(), k != Sac);
        assert_eq!(k.name().parse::<VariantKind>().unwrap(), k);
        assert_eq!(VariantKind::from_code(k.code()), Some(k));
    }
    let p = AgentParams::init(arch(2, 1, 2), Vib, 0);
    let d = p.prior_predict(&[3.0, -1.0], &[0.5]).unwrap();
    assert_eq!(d, initial_prior(2));
    assert_eq!(AgentParams::init(arch(2, 1, 2), Sac, 0).lambda(), 0.0);
    assert!("ppo".parse::<VariantKind>().is_err());
}

#[test]
fn maxent_rows_are_constant() {
    let a = arch(4, 3, 3);
    let p = AgentParams::init(a, VariantKind::Rpc, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let obs: Vec<Vec<f64>> = (0..32).map(|_| normals(&mut rng, 4)).collect();
    let rewards = normals(&mut rng, 32);
    let noise: Vec<Vec<f64>> = (0..32).map(|_| normals(&mut rng, 3)).collect();
    let (lambda, c) = (0.37, -1.25);
    let rows = maxent_batch_check(&p, &obs, &rewards, &noise, lambda, c).unwrap();
    for r in rows {
        let v = r.augmented - r.reward + lambda * r.log_phi;
        assert!((v - lambda * c).abs() < 1e-12, "{v}");
        assert_eq!(r.action.len(), 3);
    }
}

#[test]
fn act_modes() {
    let mut p = AgentParams::init(arch(3, 1, 2), VariantKind::Rpc, 1);
    let obs = [0.2, -0.4, 1.0];
    assert_eq!(
        act(&p, &obs, ActMode::OpenLoop, None, &[0.0; 2], None).unwrap_err(),
        AgentError::OpenLoopWithoutState
    );
    let first = act(&p, &obs, ActMode::Reactive, None, &[0.3, -0.1], None).unwrap();
    assert!(first.cost_nats > 0.0);
    let open = act(&p, &obs, ActMode::OpenLoop, Some(&first.carried), &[0.0; 2], None).unwrap();
    assert_eq!(open.cost_nats, 0.0);
    let again = act(&p, &obs, ActMode::Reactive, Some(&first.carried), &[0.5, 0.5], None).unwrap();
    assert_eq!(again, act(&p, &obs, ActMode::Reactive, Some(&first.carried), &[0.5, 0.5], None).unwrap());
    assert!(again.action.iter().all(|x| x.abs() < 1.0));

    // Encoder and prior both constant and equal: nothing is learned from obs.
    let nets = p.nets().clone();
    set_constant_output(&mut p, &nets.encoder, &[0.0, 0.0, 0.0, 0.0]);
    set_constant_output(&mut p, &nets.prior, &[0.0, 0.0, 0.0, 0.0]);
    let carried = CarriedState { z: vec![0.0, 0.0], action: vec![0.1] };
    let out = act(&p, &obs, ActMode::Reactive, Some(&carried), &[0.0; 2], None).unwrap();
    assert_eq!(out.cost_nats, 0.0);
}

fn smoke_config(kind: VariantKind, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(EnvSpec::new(EnvKind::PointMass), VariantSpec::new(kind, 0.5).unwrap());
    cfg.total_steps = steps;
    cfg.warmup_steps = 200;
    cfg.batch_size = 32;
    cfg.hidden = vec![32, 32];
    cfg.eval_every = steps / 2;
    cfg.eval_episodes = 1;
    cfg.log_every = 100;
    cfg
}

#[test]
fn defaults() {
    let cfg = TrainConfig::new(EnvSpec::new(EnvKind::PointMass), VariantSpec::new(VariantKind::Rpc, 0.5).unwrap());
    assert_eq!(cfg.batch_size, 256);
    assert_eq!(cfg.latent_dim, 8);
    assert_eq!(cfg.tau, 0.005);
    cfg.validate().unwrap();
    let mut bad = cfg.clone();
    bad.gamma = 1.0;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.replay_capacity = 10;
    assert!(bad.validate().is_err());
}

#[test]
fn train_smoke_is_finite_and_deterministic() {
    let cfg = smoke_config(VariantKind::Rpc, 1000);
    let a = train(&cfg).unwrap();
    assert_eq!(a.step_costs_bits.len(), 801);
    assert_eq!(a.metrics.len(), 10);
    for m in &a.metrics[2..] {
        for v in [m.info_bits_per_step, m.critic_loss, m.actor_loss] {
            assert!(v.unwrap().is_finite());
        }
        assert!(m.lambda.is_finite() && m.lambda > 0.0);
    }
    assert_eq!(a.evals.len(), 2);
    let b = train(&cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    let mut other = cfg;
    other.seed = 1;
    assert_ne!(train(&other).unwrap().metrics, a.metrics);
}

#[test]
fn vib_never_updates_prior() {
    let cfg = smoke_config(VariantKind::Vib, 400);
    let init = AgentParams::init(cfg.arch(), VariantKind::Vib, cfg.seed);
    let out = train(&cfg).unwrap();
    for name in init.nets().prior.param_names() {
        assert_eq!(out.params.store.expect(&name), init.store.expect(&name));
    }
    let enc = &init.nets().encoder.param_names()[0];
    assert_ne!(out.params.store.expect(enc), init.store.expect(enc));
}

#[test]
fn sac_keeps_lambda_at_zero() {
    let out = train(&smoke_config(VariantKind::Sac, 400)).unwrap();
    assert_eq!(out.params.lambda(), 0.0);
    assert_eq!(out.params.log_lambda, INITIAL_LOG_LAMBDA);
    assert!(out.metrics.iter().all(|m| m.lambda == 0.0));
}

#[test]
fn train_step_requires_full_buffer() {
    let cfg = smoke_config(VariantKind::Rpc, 10);
    let p = AgentParams::init(cfg.arch(), VariantKind::Rpc, 0);
    let mut learner = Learner::new(p, &cfg);
    let mut buf = ReplayBuffer::new(100, 0);
    assert!(matches!(
        learner.train_step(&mut buf, 32),
        Err(AgentError::BufferUnderfull { have: 0, need: 32 })
    ));
}

#[test]
fn polyak_moves_targets_towards_critics() {
    let cfg = smoke_config(VariantKind::Rpc, 10);
    let p = AgentParams::init(cfg.arch(), VariantKind::Rpc, 0);
    let mut learner = Learner::new(p, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReplayBuffer::new(100, 0);
    let a = cfg.arch();
    for _ in 0..64 {
        buf.push(random_transition(&mut rng, &a, false, false));
    }
    let before = learner.params.clone();
    learner.train_step(&mut buf, 32).unwrap();
    let name = "q1.l0.w";
    let (q_old, t_old) = (before.store.expect(name), before.store.expect("q1_targ.l0.w"));
    assert_eq!(q_old, t_old);
    let q_new = learner.params.store.expect(name);
    let t_new = learner.params.store.expect("q1_targ.l0.w");
    for i in 0..q_new.len() {
        let expect = 0.995 * t_old.data()[i] + 0.005 * q_new.data()[i];
        assert!((t_new.data()[i] - expect).abs() < 1e-15);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    for kind in VariantKind::ALL {
        let mut p = AgentParams::init(arch(5, 2, 3), kind, 17);
        p.log_lambda = -2.345678901234;
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_checkpoint(&q), std::fs::read(&path).unwrap());
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let p = AgentParams::init(arch(5, 2, 8), VariantKind::Rpc, 0);
    save_checkpoint(&p, &path).unwrap();
    let wide = arch(5, 2, 16);
    assert!(matches!(
        load_checkpoint_for(&path, &wide),
        Err(CheckpointError::ShapeMismatch { .. })
    ));
    assert!(load_checkpoint_for(&path, &arch(5, 2, 8)).is_ok());
    let bytes = encode_checkpoint(&p);
    assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err(), CheckpointError::Truncated);
    assert_eq!(decode_checkpoint(b"NOTACKPT....").unwrap_err(), CheckpointError::BadMagic);
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.bin")),
        Err(CheckpointError::Io(_))
    ));
}

#[test]
fn metrics_jsonl_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let rec = MetricsRecord {
        step: 5,
        episode_return: None,
        info_bits_per_step: Some(0.5),
        lambda: 1e-6,
        critic_loss: Some(1.0),
        actor_loss: Some(-2.0),
        seed: 3,
    };
    write_metrics(&path, &[rec.clone(), rec]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(
        keys,
        ["actor_loss", "critic_loss", "episode_return", "info_bits_per_step", "lambda", "seed", "step"]
    );
    assert!(v["episode_return"].is_null());
}


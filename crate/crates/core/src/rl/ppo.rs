use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_bar, evaluate, mirror, BestSnapshot, GaussianPolicy, MetricsRow, Normalizer, TrainConfig,
    Trained, TrainingEnv, training_perturbation,
};
use crate::envs::{ActionSpace, Observation};
use crate::error::RlError;
use crate::nn::{global_norm, Adam, Mlp};

struct Sample {
    obs: [f64; 2],
    action: f64,
    log_prob: f64,
    advantage: f64,
    ret: f64,
}

/// Generalized advantage estimates.
///
/// `ends[t]` marks that the episode ended after step `t` (no bootstrapping
/// across it); `last_value` bootstraps the final step when it is not an end.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    ends: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if ends[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    adv
}

/// Trains a Gaussian actor-critic with the clipped surrogate objective on a
/// continuous-action environment.
pub fn train_ppo<E: TrainingEnv + ?Sized>(
    env: &E,
    cfg: &TrainConfig,
    warm_start: Option<&GaussianPolicy>,
) -> Result<Trained<GaussianPolicy>, RlError> {
    cfg.validate()?;
    let (low, high) = match env.env().action_space() {
        ActionSpace::Continuous { low, high } => (low, high),
        ActionSpace::Discrete(_) => {
            return Err(RlError::WrongPolicyKind(
                "PPO requires a continuous action interval".into(),
            ))
        }
    };
    let p = &cfg.ppo;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normalizer = Normalizer::for_env(env.env());
    let mut policy = match warm_start {
        Some(w) => w.clone(),
        None => {
            let mut mean_net = Mlp::new(&cfg.layer_dims(1), &mut rng);
            // small initial output layer keeps early actions near zero
            let last = mean_net.num_layers() - 1;
            mean_net.layer_mut(last).0.iter_mut().for_each(|w| *w *= 0.01);
            GaussianPolicy {
                mean_net,
                log_std: vec![p.log_std_init],
                action_bounds: (low, high),
                normalizer,
                value_net: None,
            }
        }
    };
    let mut critic = match policy.value_net.take() {
        Some(v) => v,
        None => Mlp::new(&cfg.layer_dims(1), &mut rng),
    };
    let mut actor_opt = Adam::for_net(&policy.mean_net, cfg.learning_rate);
    let mut critic_opt = Adam::for_net(&critic, cfg.learning_rate);
    let mut std_opt = Adam::new(1, cfg.learning_rate);

    let base = env.env();
    let augment = cfg.mirror_augmentation && env.is_mirror_symmetric();
    let value_of = |critic: &Mlp, obs: &[f64; 2]| -> Result<f64, RlError> { Ok(critic.forward(obs)?[0]) };

    let mut metrics = Vec::new();
    let mut best = BestSnapshot::new();
    let mut recent_returns: Vec<f64> = Vec::new();
    let mut episodes = 0usize;
    let mut s = env.reset(&mut rng);
    let mut ep_len = 0usize;
    let mut ep_return = 0.0;
    let mut steps = 0usize;
    let mut next_eval = cfg.eval_interval;

    while steps < cfg.total_steps {
        let n = p.rollout_len.min(cfg.total_steps - steps);
        let mut obs_buf = Vec::with_capacity(n);
        let mut act_buf = Vec::with_capacity(n);
        let mut logp_buf = Vec::with_capacity(n);
        let mut rew_buf = Vec::with_capacity(n);
        let mut val_buf = Vec::with_capacity(n);
        let mut end_buf = Vec::with_capacity(n);
        for _ in 0..n {
            let obs = base.observe(s, training_perturbation(&mut rng, cfg.observation_noise));
            let x = normalizer.apply(&obs);
            let (a, logp) = policy.sample(&obs, &mut rng);
            let v = value_of(&critic, &x)?;
            let r = env.step(s, a.clamp(low, high));
            ep_len += 1;
            ep_return += r.reward;
            let mut reward = r.reward;
            let terminal = r.cause.is_some();
            let truncated = !terminal && ep_len >= env.horizon();
            if truncated {
                let xn = normalizer.apply(&base.observe(r.next_state, 0.0));
                reward += cfg.gamma * value_of(&critic, &xn)?;
            }
            obs_buf.push(x);
            act_buf.push(a);
            logp_buf.push(logp);
            rew_buf.push(reward);
            val_buf.push(v);
            end_buf.push(terminal || truncated);
            if terminal || truncated {
                episodes += 1;
                recent_returns.push(ep_return);
                if recent_returns.len() > 20 {
                    recent_returns.remove(0);
                }
                s = env.reset(&mut rng);
                ep_len = 0;
                ep_return = 0.0;
            } else {
                s = r.next_state;
            }
        }
        steps += n;
        let last_value = value_of(&critic, &normalizer.apply(&base.observe(s, 0.0)))?;
        let adv = gae(&rew_buf, &val_buf, &end_buf, last_value, cfg.gamma, p.gae_lambda);
        let mut samples: Vec<Sample> = (0..n)
            .map(|t| Sample {
                obs: obs_buf[t],
                action: act_buf[t],
                log_prob: logp_buf[t],
                advantage: adv[t],
                ret: adv[t] + val_buf[t],
            })
            .collect();
        if augment {
            for t in 0..n {
                let obs = mirror(obs_buf[t]);
                let mu = policy.mean_net.forward(&obs)?[0];
                samples.push(Sample {
                    obs,
                    action: -act_buf[t],
                    log_prob: super::gaussian_log_density(-act_buf[t], mu, policy.log_std[0]),
                    advantage: adv[t],
                    ret: adv[t] + val_buf[t],
                });
            }
        }

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut stats = EpochStats::default();
        for _ in 0..p.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mb: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                minibatch_update(
                    &mut policy,
                    &mut critic,
                    (&mut actor_opt, &mut critic_opt, &mut std_opt),
                    &mb,
                    cfg,
                    &mut stats,
                )?;
            }
        }
        metrics.push(MetricsRow {
            step: steps,
            episodes,
            mean_return: if recent_returns.is_empty() {
                f64::NAN
            } else {
                recent_returns.iter().sum::<f64>() / recent_returns.len() as f64
            },
            loss: stats.policy_loss / stats.batches.max(1) as f64,
            value_loss: stats.value_loss / stats.batches.max(1) as f64,
            entropy: policy.log_std[0] + 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon: f64::NAN,
            clip_fraction: stats.clipped as f64 / stats.samples.max(1) as f64,
        });
        if steps >= next_eval || steps >= cfg.total_steps {
            next_eval += cfg.eval_interval;
            let mut snapshot = policy.clone();
            snapshot.value_net = Some(critic.clone());
            let eval = evaluate(env, |o: &Observation| snapshot.act(o));
            best.offer(&snapshot, eval);
        }
    }
    let rate = best.eval.success_rate;
    check_bar(rate, cfg.success_bar)?;
    Ok(Trained {
        policy: best.policy.expect("at least one evaluation ran"),
        metrics,
        success_rate: rate,
    })
}

#[derive(Default)]
struct EpochStats {
    policy_loss: f64,
    value_loss: f64,
    clipped: usize,
    samples: usize,
    batches: usize,
}

fn minibatch_update(
    policy: &mut GaussianPolicy,
    critic: &mut Mlp,
    opts: (&mut Adam, &mut Adam, &mut Adam),
    mb: &[&Sample],
    cfg: &TrainConfig,
    stats: &mut EpochStats,
) -> Result<(), RlError> {
    let p = &cfg.ppo;
    let m = mb.len() as f64;
    let adv_mean = mb.iter().map(|s| s.advantage).sum::<f64>() / m;
    let adv_std = if mb.len() > 1 {
        (mb.iter().map(|s| (s.advantage - adv_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let log_std = policy.log_std[0];
    let sigma = log_std.exp();

    let mut g_actor = vec![0.0; policy.mean_net.num_params()];
    let mut g_critic = vec![0.0; critic.num_params()];
    let mut g_std = [0.0];
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    for s in mb {
        let a_hat = (s.advantage - adv_mean) / (adv_std + 1e-8);
        let trace = policy.mean_net.forward_traced(&s.obs)?;
        let mu = trace.output().expect("trace holds the output")[0];
        let z = (s.action - mu) / sigma;
        let logp = super::gaussian_log_density(s.action, mu, log_std);
        let ratio = (logp - s.log_prob).exp();
        let unclipped = ratio * a_hat;
        let clipped = ratio.clamp(1.0 - p.clip_ratio, 1.0 + p.clip_ratio) * a_hat;
        policy_loss -= unclipped.min(clipped) / m;
        if (ratio - 1.0).abs() > p.clip_ratio {
            stats.clipped += 1;
        }
        // gradient flows only through the unclipped branch when it is the minimum
        if unclipped <= clipped {
            let dlogp = -a_hat * ratio / m;
            policy
                .mean_net
                .backward_accumulate(&trace, &[dlogp * z / sigma], &mut g_actor)?;
            g_std[0] += dlogp * (z * z - 1.0);
        }
        g_std[0] -= p.entropy_coef / m;

        let vtrace = critic.forward_traced(&s.obs)?;
        let v = vtrace.output().expect("trace holds the output")[0];
        value_loss += (v - s.ret).powi(2) / m;
        critic.backward_accumulate(&vtrace, &[p.value_coef * 2.0 * (v - s.ret) / m], &mut g_critic)?;
    }
    // one global norm over every trainable parameter
    let norm = (global_norm(&g_actor).powi(2) + global_norm(&g_critic).powi(2) + g_std[0].powi(2)).sqrt();
    if norm > p.max_grad_norm {
        let k = p.max_grad_norm / norm;
        g_actor.iter_mut().chain(g_critic.iter_mut()).chain(g_std.iter_mut()).for_each(|g| *g *= k);
    }
    let (actor_opt, critic_opt, std_opt) = opts;
    actor_opt.apply_update(&mut policy.mean_net, &g_actor)?;
    critic_opt.apply_update(critic, &g_critic)?;
    std_opt.step(&mut policy.log_std, &g_std)?;
    stats.policy_loss += policy_loss;
    stats.value_loss += value_loss;
    stats.samples += mb.len();
    stats.batches += 1;
    Ok(())
}

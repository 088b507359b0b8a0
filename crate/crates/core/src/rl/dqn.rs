use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, check_bar, evaluate, mirror, BestSnapshot, MetricsRow, Normalizer, QPolicy, ReplayBuffer,
    TrainConfig, Trained, TrainingEnv, Transition, training_perturbation,
};
use crate::envs::{ActionSpace, Observation};
use crate::error::RlError;
use crate::nn::{clip_global_norm, Adam, Mlp};

/// One-step bootstrapped target `r + γ (1 - terminal) max_a' Q_target(s', a')`.
pub fn td_target(reward: f64, gamma: f64, terminal: bool, next_q: &[f64]) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q[argmax(next_q)]
    }
}

/// Trains a deep Q-network on a discrete-action environment.
///
/// `warm_start` initializes both the online and target networks.
pub fn train_dqn<E: TrainingEnv + ?Sized>(
    env: &E,
    cfg: &TrainConfig,
    warm_start: Option<&QPolicy>,
) -> Result<Trained<QPolicy>, RlError> {
    cfg.validate()?;
    let actions = match env.env().action_space() {
        ActionSpace::Discrete(a) => a,
        ActionSpace::Continuous { .. } => {
            return Err(RlError::WrongPolicyKind(
                "DQN requires a discrete action set".into(),
            ))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normalizer = Normalizer::for_env(env.env());
    let mut policy = match warm_start {
        Some(p) => {
            if p.action_table != actions {
                return Err(RlError::WrongPolicyKind(
                    "warm-start policy has a different action table".into(),
                ));
            }
            p.clone()
        }
        None => QPolicy {
            q_net: Mlp::new(&cfg.layer_dims(actions.len()), &mut rng),
            action_table: actions.clone(),
            normalizer,
        },
    };
    let mirrored_index: Vec<usize> = (0..actions.len()).map(|i| actions.len() - 1 - i).collect();
    if cfg.mirror_augmentation
        && actions
            .iter()
            .zip(mirrored_index.iter().map(|&j| actions[j]))
            .any(|(a, b)| (a + b).abs() > 1e-12)
    {
        return Err(RlError::InvalidConfig(
            "mirror augmentation needs an action table symmetric about zero".into(),
        ));
    }
    let mut target = policy.q_net.clone();
    let mut opt = Adam::for_net(&policy.q_net, cfg.learning_rate);
    let d = &cfg.dqn;
    let mut buffer = ReplayBuffer::new(d.buffer_capacity);
    let decay_steps = (d.epsilon_fraction * cfg.total_steps as f64).max(1.0);
    let epsilon_at = |t: usize| {
        let frac = (t as f64 / decay_steps).min(1.0);
        d.epsilon_start + frac * (d.epsilon_end - d.epsilon_start)
    };

    let base = env.env();
    let augment = cfg.mirror_augmentation && env.is_mirror_symmetric();
    let mut metrics = Vec::new();
    let mut best = BestSnapshot::new();
    let mut recent_returns: Vec<f64> = Vec::new();
    let mut episodes = 0usize;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;

    let mut s = env.reset(&mut rng);
    let mut ep_len = 0usize;
    let mut ep_return = 0.0;
    let log_every = cfg.eval_interval.min(1000).max(1);

    for t in 0..cfg.total_steps {
        let obs = base.observe(s, training_perturbation(&mut rng, cfg.observation_noise));
        let epsilon = epsilon_at(t);
        let a = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..actions.len())
        } else {
            policy.greedy_index(&obs)
        };
        let r = env.step(s, actions[a]);
        ep_len += 1;
        ep_return += r.reward;
        let terminal = r.cause.is_some();
        let tr = Transition {
            obs: normalizer.apply(&obs),
            action: a,
            reward: r.reward,
            next_obs: normalizer.apply(&base.observe(
                r.next_state,
                training_perturbation(&mut rng, cfg.observation_noise),
            )),
            terminal,
        };
        buffer.push(tr);
        if augment {
            buffer.push(Transition {
                obs: mirror(tr.obs),
                action: mirrored_index[a],
                next_obs: mirror(tr.next_obs),
                ..tr
            });
        }
        if terminal || ep_len >= env.horizon() {
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

        if t >= d.learning_starts && t % d.train_freq == 0 {
            let batch = buffer.sample(&mut rng, cfg.batch_size);
            loss_sum += update(&mut policy.q_net, &target, &mut opt, &batch, cfg)?;
            loss_n += 1;
        }
        if (t + 1) % d.target_sync_interval == 0 {
            target = policy.q_net.clone();
        }
        if (t + 1) % log_every == 0 {
            metrics.push(MetricsRow {
                step: t + 1,
                episodes,
                mean_return: mean(&recent_returns),
                loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                value_loss: f64::NAN,
                entropy: f64::NAN,
                epsilon,
                clip_fraction: f64::NAN,
            });
            loss_sum = 0.0;
            loss_n = 0;
        }
        if (t + 1) % cfg.eval_interval == 0 && t + 1 >= d.learning_starts {
            best.offer(&policy, evaluate(env, |o: &Observation| policy.act(o)));
        }
    }
    best.offer(&policy, evaluate(env, |o: &Observation| policy.act(o)));
    let rate = best.eval.success_rate;
    check_bar(rate, cfg.success_bar)?;
    Ok(Trained {
        policy: best.policy.expect("at least one evaluation ran"),
        metrics,
        success_rate: rate,
    })
}

/// One gradient step on the Huber TD loss; returns the mean loss.
fn update(
    net: &mut Mlp,
    target: &Mlp,
    opt: &mut Adam,
    batch: &[Transition],
    cfg: &TrainConfig,
) -> Result<f64, RlError> {
    let n = batch.len() as f64;
    let mut grads = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    let mut upstream = vec![0.0; net.output_dim()];
    for tr in batch {
        let next_q = target.forward(&tr.next_obs)?;
        let y = td_target(tr.reward, cfg.gamma, tr.terminal, &next_q);
        let trace = net.forward_traced(&tr.obs)?;
        let q = trace.output().expect("trace holds the output")[tr.action];
        let delta = q - y;
        loss += if delta.abs() <= 1.0 {
            0.5 * delta * delta
        } else {
            delta.abs() - 0.5
        };
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[tr.action] = delta.clamp(-1.0, 1.0) / n;
        net.backward_accumulate(&trace, &upstream, &mut grads)?;
    }
    clip_global_norm(&mut grads, cfg.dqn.max_grad_norm);
    opt.apply_update(net, &grads)?;
    Ok(loss / n)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

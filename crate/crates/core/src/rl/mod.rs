//! Policy training (DQN for discrete actions, clipped-surrogate PPO for
//! continuous actions) and region-restricted training environments.

mod dqn;
mod policy;
mod ppo;
mod replay;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{rollout, Env, EnvKind, Observation, State, StepResult, TerminationCause};
use crate::error::RlError;
use crate::region::Region;

pub use dqn::{td_target, train_dqn};
pub use policy::{
    argmax, gaussian_log_density, GaussianPolicy, Normalizer, Policy, QPolicy, POLICY_FORMAT,
    POLICY_VERSION,
};
pub use ppo::{gae, train_ppo};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub train_freq: usize,
    pub target_sync_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 50_000,
            learning_starts: 1_000,
            train_freq: 4,
            target_sync_interval: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub epochs: usize,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub log_std_init: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout_len: 2048,
            epochs: 10,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            log_std_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Required noise-free success rate over the evaluation initial states.
    pub success_bar: f64,
    /// Steps between greedy evaluations; the best evaluated snapshot is kept.
    pub eval_interval: usize,
    /// Also learn from every transition reflected through y = 0 (both
    /// benchmark systems are symmetric under y -> -y, u -> -u).
    pub mirror_augmentation: bool,
    /// Bound of uniform measurement noise on the observations collected for
    /// learning; evaluation stays noise-free.
    pub observation_noise: f64,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_env(EnvKind::UnitCircle)
    }
}

impl TrainConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::UnitCircle => Self {
                gamma: 0.99,
                learning_rate: 3e-4,
                batch_size: 64,
                total_steps: 150_000,
                seed: 0,
                hidden: vec![64, 64],
                success_bar: 0.9,
                eval_interval: 5_000,
                mirror_augmentation: true,
                observation_noise: 0.0,
                dqn: DqnConfig::default(),
                ppo: PpoConfig::default(),
            },
            EnvKind::Obstacle => Self {
                gamma: 0.99,
                learning_rate: 5e-4,
                batch_size: 32,
                total_steps: 100_000,
                seed: 0,
                hidden: vec![64, 64],
                success_bar: 0.9,
                eval_interval: 5_000,
                mirror_augmentation: true,
                observation_noise: 0.0,
                dqn: DqnConfig::default(),
                ppo: PpoConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.total_steps == 0 {
            return bad("learning rate, batch size and total steps must be positive");
        }
        if self.eval_interval == 0 {
            return bad("evaluation interval must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.success_bar) {
            return bad("success bar must lie in [0, 1]");
        }
        if !(self.observation_noise >= 0.0) {
            return bad("observation noise must be non-negative");
        }
        let d = &self.dqn;
        if d.buffer_capacity == 0 || d.train_freq == 0 || d.target_sync_interval == 0 {
            return bad("dqn buffer, train frequency and sync interval must be positive");
        }
        if !(d.epsilon_fraction > 0.0) || !(0.0..=1.0).contains(&d.epsilon_end) {
            return bad("invalid exploration schedule");
        }
        let p = &self.ppo;
        if p.rollout_len == 0 || p.epochs == 0 || !(p.clip_ratio > 0.0) {
            return bad("ppo rollout length, epochs and clip ratio must be positive");
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) {
            return bad("gae lambda must lie in [0, 1]");
        }
        Ok(())
    }

    pub(crate) fn layer_dims(&self, outputs: usize) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend(&self.hidden);
        dims.push(outputs);
        dims
    }
}

/// An episodic environment a trainer can interact with.
pub trait TrainingEnv {
    fn env(&self) -> &Env;
    fn reset(&self, rng: &mut dyn rand::RngCore) -> State;
    fn step(&self, s: State, u: f64) -> StepResult;
    fn evaluation_states(&self) -> Vec<State>;

    fn horizon(&self) -> usize {
        self.env().horizon()
    }

    /// Whether transitions reflected through y = 0 are valid experience.
    fn is_mirror_symmetric(&self) -> bool {
        true
    }
}

impl TrainingEnv for Env {
    fn env(&self) -> &Env {
        self
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> State {
        self.sample_initial(rng)
    }

    fn step(&self, s: State, u: f64) -> StepResult {
        self.step_unchecked(s, u)
    }

    fn evaluation_states(&self) -> Vec<State> {
        Env::evaluation_states(self)
    }
}

/// Base environment whose episodes end, with the crash-level penalty, as
/// soon as the state leaves `region`.
#[derive(Debug, Clone)]
pub struct RestrictedEnv {
    pub base: Env,
    pub region: Region,
    pub exit_penalty: f64,
}

impl RestrictedEnv {
    pub fn new(base: Env, region: Region) -> Self {
        let exit_penalty = match &base {
            Env::Obstacle(o) => o.crash_penalty,
            // must exceed the cost of the longest in-region path to the setpoint
            Env::UnitCircle(_) => 30.0,
        };
        Self {
            base,
            region,
            exit_penalty,
        }
    }
}

impl TrainingEnv for RestrictedEnv {
    fn env(&self) -> &Env {
        &self.base
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> State {
        loop {
            let s = self.base.sample_initial(rng);
            if self.region.contains(&s) {
                return s;
            }
        }
    }

    fn step(&self, s: State, u: f64) -> StepResult {
        let mut r = self.base.step_unchecked(s, u);
        let reached = r.cause == Some(TerminationCause::ReachedSetpoint);
        if !reached && r.cause.is_none() && !self.region.contains(&r.next_state) {
            r.cause = Some(TerminationCause::LeftDomain);
            r.reward -= self.exit_penalty;
        }
        r
    }

    fn is_mirror_symmetric(&self) -> bool {
        false
    }

    fn evaluation_states(&self) -> Vec<State> {
        // dense, so that states next to the region boundary are checked too
        self.base
            .dense_evaluation_states()
            .into_iter()
            .filter(|s| self.region.contains(s))
            .collect()
    }
}

/// Noise-free performance over the evaluation initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of episodes that reach the setpoint within the horizon.
    pub success_rate: f64,
    pub mean_return: f64,
}

impl Evaluation {
    fn better_than(&self, other: &Evaluation) -> bool {
        (self.success_rate, self.mean_return) > (other.success_rate, other.mean_return)
    }
}

pub fn evaluate<E: TrainingEnv + ?Sized>(env: &E, controller: impl Fn(&Observation) -> f64) -> Evaluation {
    let states = env.evaluation_states();
    if states.is_empty() {
        return Evaluation {
            success_rate: 0.0,
            mean_return: f64::NEG_INFINITY,
        };
    }
    let mut ok = 0usize;
    let mut total = 0.0;
    for &s0 in &states {
        let ep = run_episode(env, s0, &controller);
        ok += usize::from(ep.cause == TerminationCause::ReachedSetpoint);
        total += ep.total_reward;
    }
    let n = states.len() as f64;
    Evaluation {
        success_rate: ok as f64 / n,
        mean_return: total / n,
    }
}

pub fn success_rate<E: TrainingEnv + ?Sized>(env: &E, controller: impl Fn(&Observation) -> f64) -> f64 {
    evaluate(env, controller).success_rate
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<State>,
    pub total_reward: f64,
    pub cause: TerminationCause,
}

/// Noise-free episode through a [`TrainingEnv`].
pub fn run_episode<E: TrainingEnv + ?Sized>(
    env: &E,
    s0: State,
    controller: &impl Fn(&Observation) -> f64,
) -> Episode {
    let base = env.env();
    let mut ep = Episode {
        states: vec![s0],
        total_reward: 0.0,
        cause: TerminationCause::Horizon,
    };
    if let Some(c) = base.event(&s0) {
        ep.cause = c;
        return ep;
    }
    let mut s = s0;
    for _ in 0..env.horizon() {
        let r = env.step(s, controller(&base.observe(s, 0.0)));
        s = r.next_state;
        ep.states.push(s);
        ep.total_reward += r.reward;
        if let Some(c) = r.cause {
            ep.cause = c;
            return ep;
        }
    }
    ep
}

/// Measurement perturbation for training data; draws nothing when `bound` is zero.
pub(crate) fn training_perturbation<R: rand::Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Noise-free rollout on the unrestricted environment.
pub fn noise_free_rollout(env: &Env, policy: &Policy, s0: State, steps: usize) -> crate::envs::Rollout {
    rollout(env, s0, steps, |o| policy.act(o), |_, _| 0.0)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub epsilon: f64,
    pub clip_fraction: f64,
}

pub const METRICS_HEADER: &str = "step,episodes,mean_return,loss,value_loss,entropy,epsilon,clip_fraction";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step, r.episodes, r.mean_return, r.loss, r.value_loss, r.entropy, r.epsilon, r.clip_fraction
        )?;
    }
    out.flush()
}

/// Result of a successful training run.
#[derive(Debug, Clone)]
pub struct Trained<P> {
    pub policy: P,
    pub metrics: Vec<MetricsRow>,
    pub success_rate: f64,
}

pub(crate) fn check_bar(rate: f64, bar: f64) -> Result<(), RlError> {
    if rate + 1e-12 < bar {
        Err(RlError::TrainingFailed {
            success_rate: rate,
            required: bar,
        })
    } else {
        Ok(())
    }
}

/// Reflection of a normalized observation through y = 0.
pub(crate) fn mirror(obs: [f64; 2]) -> [f64; 2] {
    [obs[0], -obs[1]]
}

/// Keeps the best evaluated snapshot seen during training.
pub(crate) struct BestSnapshot<P> {
    pub policy: Option<P>,
    pub eval: Evaluation,
}

impl<P: Clone> BestSnapshot<P> {
    pub fn new() -> Self {
        Self {
            policy: None,
            eval: Evaluation {
                success_rate: -1.0,
                mean_return: f64::NEG_INFINITY,
            },
        }
    }

    pub fn offer(&mut self, policy: &P, eval: Evaluation) {
        if self.policy.is_none() || eval.better_than(&self.eval) {
            self.policy = Some(policy.clone());
            self.eval = eval;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn restricted_env_terminates_on_exit() {
        let env = Env::unit_circle();
        let grid = Grid::angular(0.01);
        // upper half only
        let region = Region::from_fn(grid, |c| grid.center(c).y > 0.0);
        let renv = RestrictedEnv::new(env.clone(), region.clone());
        let s = State::on_circle(PI - 0.05);
        let r = renv.step(s, 1.0);
        assert_eq!(r.cause, Some(TerminationCause::LeftDomain));
        assert!(r.reward < -10.0);
        let r = renv.step(s, -1.0);
        assert_eq!(r.cause, None);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert!(region.contains(&renv.reset(&mut rng)));
        }
        assert!(renv.evaluation_states().iter().all(|s| region.contains(s)));
        assert_eq!(renv.evaluation_states().len(), 40);
    }

    #[test]
    fn restricted_episodes_stay_inside_until_terminal() {
        let env = Env::unit_circle();
        let grid = Grid::angular(0.01);
        let region = Region::from_fn(grid, |c| grid.center(c).angle() < 1.2 * PI);
        let renv = RestrictedEnv::new(env, region.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s0 = renv.reset(&mut rng);
            let u = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let ep = run_episode(&renv, s0, &|_| u);
            let n = ep.states.len();
            assert!(ep.states[..n - 1].iter().all(|s| region.contains(s)));
            if ep.cause == TerminationCause::LeftDomain {
                assert!(!region.contains(&ep.states[n - 1]));
            }
        }
    }
}

//! Benchmark control environments and their Euler discretization.
//!
//! Both environments live on a two-dimensional state `(x, y)`. The unit-circle
//! environment constrains the state to `|ξ| = 1` and takes a continuous input
//! in `[-1, 1]`; the obstacle environment is a planar vehicle moving at unit
//! horizontal speed with a discrete vertical-rate input.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

/// Slack used when comparing positions against domain bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Point on the unit circle at `angle` radians.
    pub fn on_circle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &State) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Angle in `[0, 2π)`.
    pub fn angle(&self) -> f64 {
        wrap_angle(self.y.atan2(self.x))
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed shortest angular difference `to - from` in `(-π, π]`.
pub fn angle_diff(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Measured state handed to a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; 2]);

impl Observation {
    pub fn as_state(&self) -> State {
        State::new(self.0[0], self.0[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    ReachedSetpoint,
    Crashed,
    LeftDomain,
    Horizon,
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerminationCause::ReachedSetpoint => "reached_setpoint",
            TerminationCause::Crashed => "crashed",
            TerminationCause::LeftDomain => "left_domain",
            TerminationCause::Horizon => "horizon",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: State,
    pub reward: f64,
    pub cause: Option<TerminationCause>,
}

impl StepResult {
    pub fn terminated(&self) -> bool {
        self.cause.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    UnitCircle,
    Obstacle,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::UnitCircle => "unit-circle",
            EnvKind::Obstacle => "obstacle",
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

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit-circle" => Ok(EnvKind::UnitCircle),
            "obstacle" => Ok(EnvKind::Obstacle),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, s: &State) -> bool {
        s.x >= self.x_min && s.x <= self.x_max && s.y >= self.y_min && s.y <= self.y_max
    }

    pub fn is_symmetric_about_x_axis(&self) -> bool {
        (self.y_min + self.y_max).abs() < 1e-12
    }
}

/// Tunable environment parameters; `None` horizons select the per-environment default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub setpoint_tolerance: f64,
    pub horizon: Option<usize>,
    pub obstacle: Rect,
    pub crash_penalty: f64,
    pub exit_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            setpoint_tolerance: 0.1,
            horizon: None,
            obstacle: Rect {
                x_min: 0.8,
                x_max: 1.3,
                y_min: -0.25,
                y_max: 0.25,
            },
            crash_penalty: 10.0,
            exit_penalty: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitCircleEnv {
    pub dt: f64,
    pub setpoint_tolerance: f64,
    pub horizon: usize,
}

impl UnitCircleEnv {
    pub const SETPOINT: State = State::new(1.0, 0.0);
    pub const ACTION_BOUNDS: (f64, f64) = (-1.0, 1.0);
}

impl Default for UnitCircleEnv {
    fn default() -> Self {
        Self {
            dt: 0.1,
            setpoint_tolerance: 0.1,
            horizon: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleEnv {
    pub dt: f64,
    pub setpoint_tolerance: f64,
    pub horizon: usize,
    pub obstacle: Rect,
    pub crash_penalty: f64,
    pub exit_penalty: f64,
}

impl ObstacleEnv {
    pub const SETPOINT: State = State::new(3.0, 0.0);
    pub const STATE_BOX: Rect = Rect {
        x_min: 0.0,
        x_max: 3.0,
        y_min: -1.5,
        y_max: 1.5,
    };
    pub const ACTIONS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    /// Normalizer `‖[3, 1.5]‖` keeping the shaping term in `[-1, 0]`.
    pub fn reward_scale() -> f64 {
        3.0f64.hypot(1.5)
    }
}

impl Default for ObstacleEnv {
    fn default() -> Self {
        let cfg = EnvConfig::default();
        Self {
            dt: cfg.dt,
            setpoint_tolerance: cfg.setpoint_tolerance,
            horizon: 60,
            obstacle: cfg.obstacle,
            crash_penalty: cfg.crash_penalty,
            exit_penalty: cfg.exit_penalty,
        }
    }
}

/// Action space of an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Continuous { low: f64, high: f64 },
    Discrete(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    UnitCircle(UnitCircleEnv),
    Obstacle(ObstacleEnv),
}

impl Env {
    pub fn new(kind: EnvKind, cfg: &EnvConfig) -> Result<Self, EnvError> {
        if !(cfg.dt > 0.0) || !(cfg.setpoint_tolerance > 0.0) {
            return Err(EnvError::InvalidConfig(
                "dt and setpoint_tolerance must be positive".into(),
            ));
        }
        Ok(match kind {
            EnvKind::UnitCircle => Env::UnitCircle(UnitCircleEnv {
                dt: cfg.dt,
                setpoint_tolerance: cfg.setpoint_tolerance,
                horizon: cfg.horizon.unwrap_or(200),
            }),
            EnvKind::Obstacle => {
                let o = cfg.obstacle;
                if !o.is_symmetric_about_x_axis() || o.x_min >= o.x_max || o.y_min >= o.y_max {
                    return Err(EnvError::InvalidConfig(
                        "obstacle must be a non-empty rectangle symmetric about y = 0".into(),
                    ));
                }
                Env::Obstacle(ObstacleEnv {
                    dt: cfg.dt,
                    setpoint_tolerance: cfg.setpoint_tolerance,
                    horizon: cfg.horizon.unwrap_or(60),
                    obstacle: o,
                    crash_penalty: cfg.crash_penalty,
                    exit_penalty: cfg.exit_penalty,
                })
            }
        })
    }

    pub fn unit_circle() -> Self {
        Env::UnitCircle(UnitCircleEnv::default())
    }

    pub fn obstacle() -> Self {
        Env::Obstacle(ObstacleEnv::default())
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::UnitCircle(_) => EnvKind::UnitCircle,
            Env::Obstacle(_) => EnvKind::Obstacle,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Env::UnitCircle(e) => e.dt,
            Env::Obstacle(e) => e.dt,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::UnitCircle(e) => e.horizon,
            Env::Obstacle(e) => e.horizon,
        }
    }

    pub fn setpoint(&self) -> State {
        match self {
            Env::UnitCircle(_) => UnitCircleEnv::SETPOINT,
            Env::Obstacle(_) => ObstacleEnv::SETPOINT,
        }
    }

    pub fn setpoint_tolerance(&self) -> f64 {
        match self {
            Env::UnitCircle(e) => e.setpoint_tolerance,
            Env::Obstacle(e) => e.setpoint_tolerance,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::UnitCircle(_) => ActionSpace::Continuous {
                low: UnitCircleEnv::ACTION_BOUNDS.0,
                high: UnitCircleEnv::ACTION_BOUNDS.1,
            },
            Env::Obstacle(_) => ActionSpace::Discrete(ObstacleEnv::ACTIONS.to_vec()),
        }
    }

    fn check_action(&self, u: f64) -> Result<(), EnvError> {
        let ok = match self {
            Env::UnitCircle(_) => u.is_finite() && (-1.0..=1.0).contains(&u),
            Env::Obstacle(_) => ObstacleEnv::ACTIONS.iter().any(|a| (a - u).abs() < 1e-12),
        };
        if ok {
            Ok(())
        } else {
            Err(EnvError::ActionOutOfBounds(u))
        }
    }

    /// Continuous-time vector field `f(ξ, u)`.
    pub fn flow(&self, s: State, u: f64) -> Result<[f64; 2], EnvError> {
        self.check_action(u)?;
        Ok(self.flow_unchecked(s, u))
    }

    pub(crate) fn flow_unchecked(&self, s: State, u: f64) -> [f64; 2] {
        match self {
            // u · [[0, -1], [1, 0]] · ξ
            Env::UnitCircle(_) => [-u * s.y, u * s.x],
            Env::Obstacle(_) => [1.0, u],
        }
    }

    /// Maps a raw Euler update back onto the environment's constraint set.
    pub fn project(&self, s: State) -> State {
        match self {
            Env::UnitCircle(_) => {
                let n = s.norm();
                if n > 0.0 {
                    State::new(s.x / n, s.y / n)
                } else {
                    UnitCircleEnv::SETPOINT
                }
            }
            Env::Obstacle(_) => State::new(
                s.x,
                s.y.clamp(ObstacleEnv::STATE_BOX.y_min, ObstacleEnv::STATE_BOX.y_max),
            ),
        }
    }

    /// One Euler step `ξ + f(ξ, u)Δt` followed by projection and event detection.
    pub fn step(&self, s: State, u: f64) -> Result<StepResult, EnvError> {
        self.check_action(u)?;
        Ok(self.step_unchecked(s, u))
    }

    pub(crate) fn step_unchecked(&self, s: State, u: f64) -> StepResult {
        let f = self.flow_unchecked(s, u);
        let dt = self.dt();
        let next = self.project(State::new(s.x + f[0] * dt, s.y + f[1] * dt));
        let cause = self.event(&next);
        let mut reward = self.reward(next);
        if let Env::Obstacle(e) = self {
            match cause {
                Some(TerminationCause::Crashed) => reward -= e.crash_penalty,
                Some(TerminationCause::LeftDomain) => reward -= e.exit_penalty,
                _ => {}
            }
        }
        StepResult {
            next_state: next,
            reward,
            cause,
        }
    }

    /// Terminal event at a state, if any (the horizon is tracked by callers).
    pub fn event(&self, s: &State) -> Option<TerminationCause> {
        if self.reached(s) {
            return Some(TerminationCause::ReachedSetpoint);
        }
        match self {
            Env::UnitCircle(_) => None,
            Env::Obstacle(e) => {
                if e.obstacle.contains(s) {
                    Some(TerminationCause::Crashed)
                } else if !Self::in_box(s) {
                    Some(TerminationCause::LeftDomain)
                } else {
                    None
                }
            }
        }
    }

    fn in_box(s: &State) -> bool {
        let b = ObstacleEnv::STATE_BOX;
        s.x >= b.x_min - BOUND_SLACK
            && s.x <= b.x_max + BOUND_SLACK
            && s.y >= b.y_min - BOUND_SLACK
            && s.y <= b.y_max + BOUND_SLACK
    }

    pub fn reached(&self, s: &State) -> bool {
        s.distance(&self.setpoint()) <= self.setpoint_tolerance() + BOUND_SLACK
    }

    /// State reward (without the crash/exit penalties applied in `step`).
    pub fn reward(&self, s: State) -> f64 {
        match self {
            Env::UnitCircle(_) => -(s.y.atan2(s.x)).abs() / PI,
            Env::Obstacle(_) => -s.distance(&ObstacleEnv::SETPOINT) / ObstacleEnv::reward_scale(),
        }
    }

    /// Measured state. `perturbation` is rotated onto the circle for the
    /// unit-circle environment and added to `y` for the obstacle environment.
    pub fn observe(&self, s: State, perturbation: f64) -> Observation {
        match self {
            Env::UnitCircle(_) => {
                if perturbation == 0.0 {
                    Observation(s.as_array())
                } else {
                    let (sn, cs) = perturbation.sin_cos();
                    Observation([cs * s.x - sn * s.y, sn * s.x + cs * s.y])
                }
            }
            Env::Obstacle(_) => Observation([s.x, s.y + perturbation]),
        }
    }

    /// Coordinate in which measurement noise and overlap widths are expressed:
    /// the angle on the circle, `y` for the obstacle course.
    pub fn transversal(&self, s: &State) -> f64 {
        match self {
            Env::UnitCircle(_) => s.angle(),
            Env::Obstacle(_) => s.y,
        }
    }

    /// Whether `s` belongs to the environment's constraint set.
    pub fn in_constraint_set(&self, s: &State) -> bool {
        match self {
            Env::UnitCircle(_) => (s.norm() - 1.0).abs() < 1e-6,
            Env::Obstacle(_) => Self::in_box(s),
        }
    }

    pub fn obstacle_rect(&self) -> Option<Rect> {
        match self {
            Env::Obstacle(e) => Some(e.obstacle),
            Env::UnitCircle(_) => None,
        }
    }

    /// Random episode start used during training.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            Env::UnitCircle(_) => loop {
                let s = State::on_circle(rng.gen_range(0.0..TAU));
                if !self.reached(&s) {
                    return s;
                }
            },
            Env::Obstacle(e) => loop {
                let x = if rng.gen_bool(0.5) {
                    0.0
                } else {
                    rng.gen_range(0.0..2.5)
                };
                let s = State::new(x, rng.gen_range(-1.5..1.5));
                if !e.obstacle.contains(&s) && !self.reached(&s) {
                    return s;
                }
            },
        }
    }

    /// Standard noise-free evaluation set (20 initial conditions, none on the symmetry line).
    pub fn evaluation_states(&self) -> Vec<State> {
        match self {
            Env::UnitCircle(_) => (0..20)
                .map(|k| State::on_circle(TAU * (k as f64 + 0.5) / 20.0))
                .collect(),
            Env::Obstacle(_) => (0..20)
                .map(|k| State::new(0.0, -1.425 + 0.15 * k as f64))
                .collect(),
        }
    }

    /// Finer version of [`Env::evaluation_states`]: 80 angles on the circle,
    /// one state per 0.05 of y on the obstacle's start line.
    pub fn dense_evaluation_states(&self) -> Vec<State> {
        match self {
            Env::UnitCircle(_) => (0..80)
                .map(|k| State::on_circle(TAU * (k as f64 + 0.5) / 80.0))
                .collect(),
            Env::Obstacle(_) => (0..60)
                .map(|k| State::new(0.0, -1.475 + 0.05 * k as f64))
                .collect(),
        }
    }
}

/// Outcome of a closed-loop rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<State>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub cause: TerminationCause,
}

impl Rollout {
    pub fn final_state(&self) -> State {
        *self.states.last().expect("rollout always holds its initial state")
    }
}

/// Runs the closed loop `u = controller(o(ξ))` for at most `max_steps` steps.
/// `noise(k, ξ)` supplies the measurement perturbation at step `k`.
pub fn rollout<C, N>(env: &Env, s0: State, max_steps: usize, mut controller: C, mut noise: N) -> Rollout
where
    C: FnMut(&Observation) -> f64,
    N: FnMut(usize, &State) -> f64,
{
    let mut states = vec![s0];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    if let Some(cause) = env.event(&s0) {
        return Rollout {
            states,
            actions,
            rewards,
            cause,
        };
    }
    let mut s = s0;
    for k in 0..max_steps {
        let obs = env.observe(s, noise(k, &s));
        let u = controller(&obs);
        let r = env.step_unchecked(s, u);
        s = r.next_state;
        states.push(s);
        actions.push(u);
        rewards.push(r.reward);
        if let Some(cause) = r.cause {
            return Rollout {
                states,
                actions,
                rewards,
                cause,
            };
        }
    }
    Rollout {
        states,
        actions,
        rewards,
        cause: TerminationCause::Horizon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn unit_circle_flow_matches_rotation_generator() {
        let env = Env::unit_circle();
        assert_eq!(env.flow(State::new(0.0, 1.0), 1.0).unwrap(), [-1.0, 0.0]);
        let f = env.flow(State::new(0.3, -0.9), 0.0).unwrap();
        assert_eq!(f, [0.0, 0.0]);
    }

    #[test]
    fn obstacle_flow_has_unit_horizontal_speed() {
        let env = Env::obstacle();
        assert_eq!(env.flow(State::new(1.7, -0.4), 0.5).unwrap(), [1.0, 0.5]);
    }

    #[test]
    fn out_of_range_actions_are_rejected() {
        assert!(matches!(
            Env::unit_circle().flow(State::new(1.0, 0.0), 1.5),
            Err(EnvError::ActionOutOfBounds(_))
        ));
        assert!(Env::obstacle().step(State::new(0.0, 0.0), 0.3).is_err());
        assert!(Env::unit_circle().step(State::new(1.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn unit_circle_step_example() {
        let env = Env::unit_circle();
        let r = env.step(State::new(1.0, 0.0), 1.0).unwrap();
        assert!(close(r.next_state.x, 0.99504, 1e-5));
        assert!(close(r.next_state.y, 0.09950, 1e-5));
        let oracle = State::on_circle(0.1);
        assert!(r.next_state.distance(&oracle) < 1e-3);
    }

    #[test]
    fn setpoint_is_a_fixed_point() {
        let env = Env::unit_circle();
        let r = env.step(State::new(1.0, 0.0), 0.0).unwrap();
        assert_eq!(r.next_state, State::new(1.0, 0.0));
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn obstacle_reaches_setpoint_from_just_before_it() {
        let env = Env::obstacle();
        let r = env.step(State::new(2.9, 0.0), 0.0).unwrap();
        assert!(close(r.next_state.x, 3.0, 1e-12));
        assert_eq!(r.next_state.y, 0.0);
        assert!(r.terminated());
        assert_eq!(r.cause, Some(TerminationCause::ReachedSetpoint));
    }

    #[test]
    fn obstacle_crash_and_exit_terminate() {
        let env = Env::obstacle();
        let r = env.step(State::new(0.75, 0.0), 0.0).unwrap();
        assert_eq!(r.cause, Some(TerminationCause::Crashed));
        assert!(r.reward < -10.0);
        let r = env.step(State::new(2.95, 1.0), 0.0).unwrap();
        assert_eq!(r.cause, Some(TerminationCause::LeftDomain));
        assert!(r.reward < -5.0);
        // y is clamped to the box rather than leaving it
        let r = env.step(State::new(0.0, 1.45), 1.0).unwrap();
        assert_eq!(r.next_state.y, 1.5);
        assert_eq!(r.cause, None);
    }

    #[test]
    fn unit_circle_rewards() {
        let env = Env::unit_circle();
        assert_eq!(env.reward(State::new(1.0, 0.0)), 0.0);
        assert_eq!(env.reward(State::new(-1.0, 0.0)), -1.0);
        assert!(close(env.reward(State::new(0.0, 1.0)), -0.5, 1e-15));
    }

    #[test]
    fn noise_free_observation_is_identity() {
        for env in [Env::unit_circle(), Env::obstacle()] {
            let s = State::new(0.6, 0.8);
            assert_eq!(env.observe(s, 0.0), Observation([0.6, 0.8]));
        }
    }

    #[test]
    fn worst_case_observation_offsets() {
        let env = Env::unit_circle();
        let s = State::on_circle(2.0);
        assert!(close(env.observe(s, 0.1).as_state().angle(), 2.1, 1e-12));
        assert!(close(env.observe(s, -0.1).as_state().angle(), 1.9, 1e-12));
        let env = Env::obstacle();
        assert_eq!(env.observe(State::new(0.0, 0.0), 0.1), Observation([0.0, 0.1]));
        assert_eq!(env.observe(State::new(0.0, 0.0), -0.1), Observation([0.0, -0.1]));
    }

    #[test]
    fn obstacle_reward_is_symmetric_on_grid() {
        let env = Env::obstacle();
        for i in 0..100 {
            for j in 0..100 {
                let x = 3.0 * i as f64 / 99.0;
                let y = -1.5 + 3.0 * j as f64 / 99.0;
                assert_eq!(env.reward(State::new(x, y)), env.reward(State::new(x, -y)));
            }
        }
    }

    #[test]
    fn reward_argmax_is_the_setpoint() {
        let env = Env::obstacle();
        let mut best = (f64::NEG_INFINITY, State::default());
        for i in 0..=100 {
            for j in 0..=100 {
                let s = State::new(3.0 * i as f64 / 100.0, -1.5 + 3.0 * j as f64 / 100.0);
                let r = env.reward(s);
                if r > best.0 {
                    best = (r, s);
                }
            }
        }
        assert_eq!(best.1, ObstacleEnv::SETPOINT);

        let env = Env::unit_circle();
        let mut best = (f64::NEG_INFINITY, State::default());
        for k in 0..1000 {
            let s = State::on_circle(TAU * k as f64 / 1000.0);
            let r = env.reward(s);
            if r > best.0 {
                best = (r, s);
            }
        }
        assert_eq!(best.1, UnitCircleEnv::SETPOINT);
    }

    #[test]
    fn unit_circle_rewards_stay_in_range() {
        let env = Env::unit_circle();
        for k in 0..1000 {
            let r = env.reward(State::on_circle(TAU * k as f64 / 1000.0));
            assert!((-1.0..=0.0).contains(&r));
        }
    }

    #[test]
    fn sampled_initial_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for env in [Env::unit_circle(), Env::obstacle()] {
            for _ in 0..500 {
                let s = env.sample_initial(&mut rng);
                assert!(env.in_constraint_set(&s));
                assert!(env.event(&s).is_none());
            }
        }
    }

    #[test]
    fn angle_helpers() {
        assert!(close(angle_diff(0.1, TAU - 0.1), -0.2, 1e-12));
        assert!(close(angle_diff(TAU - 0.1, 0.1), 0.2, 1e-12));
        assert_eq!(wrap_angle(-1e-20), 0.0);
        assert!(close(State::on_circle(1.5 * PI).angle(), 1.5 * PI, 1e-12));
    }

    #[test]
    fn rejects_asymmetric_obstacle() {
        let cfg = EnvConfig {
            obstacle: Rect {
                x_min: 0.8,
                x_max: 1.3,
                y_min: -0.2,
                y_max: 0.3,
            },
            ..EnvConfig::default()
        };
        assert!(Env::new(EnvKind::Obstacle, &cfg).is_err());
        assert!(Env::new(EnvKind::Obstacle, &EnvConfig::default()).is_ok());
    }
}

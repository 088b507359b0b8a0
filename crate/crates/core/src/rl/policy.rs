use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvKind, Observation};
use crate::error::RlError;
use crate::nn::Mlp;

pub const POLICY_FORMAT: &str = "hysteresis-rl-policy";
pub const POLICY_VERSION: u32 = 1;

/// Affine input normalization applied before the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer {
        offset: [0.0, 0.0],
        scale: [1.0, 1.0],
    };

    pub fn for_env(env: &Env) -> Self {
        match env.kind() {
            EnvKind::UnitCircle => Self::IDENTITY,
            EnvKind::Obstacle => Normalizer {
                offset: [1.5, 0.0],
                scale: [1.0 / 1.5, 1.0 / 1.5],
            },
        }
    }

    pub fn apply(&self, obs: &Observation) -> [f64; 2] {
        [
            (obs.0[0] - self.offset[0]) * self.scale[0],
            (obs.0[1] - self.offset[1]) * self.scale[1],
        ]
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy policy over a learned action-value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub q_net: Mlp,
    pub action_table: Vec<f64>,
    pub normalizer: Normalizer,
}

impl QPolicy {
    pub fn q_values(&self, obs: &Observation) -> Vec<f64> {
        self.q_net
            .forward(&self.normalizer.apply(obs))
            .expect("q-network input width is fixed at 2")
    }

    pub fn greedy_index(&self, obs: &Observation) -> usize {
        argmax(&self.q_values(obs))
    }

    pub fn act(&self, obs: &Observation) -> f64 {
        self.action_table[self.greedy_index(obs)]
    }
}

/// Diagonal Gaussian actor with a state-independent standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
    pub action_bounds: (f64, f64),
    pub normalizer: Normalizer,
    /// Critic kept alongside the actor so training can be resumed.
    #[serde(default)]
    pub value_net: Option<Mlp>,
}

impl GaussianPolicy {
    pub fn mean(&self, obs: &Observation) -> f64 {
        self.mean_net
            .forward(&self.normalizer.apply(obs))
            .expect("actor input width is fixed at 2")[0]
    }

    pub fn std(&self) -> f64 {
        self.log_std[0].exp()
    }

    /// Deterministic action: the mean clamped to the action bounds.
    pub fn act(&self, obs: &Observation) -> f64 {
        self.mean(obs).clamp(self.action_bounds.0, self.action_bounds.1)
    }

    /// Unclamped Gaussian sample and its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> (f64, f64) {
        let mu = self.mean(obs);
        let z: f64 = rng.sample(StandardNormal);
        let a = mu + self.std() * z;
        (a, gaussian_log_density(a, mu, self.log_std[0]))
    }

    pub fn log_density(&self, obs: &Observation, action: f64) -> f64 {
        gaussian_log_density(action, self.mean(obs), self.log_std[0])
    }
}

pub fn gaussian_log_density(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Q(QPolicy),
    Gaussian(GaussianPolicy),
}

impl Policy {
    /// Deterministic control action.
    pub fn act(&self, obs: &Observation) -> f64 {
        match self {
            Policy::Q(p) => p.act(obs),
            Policy::Gaussian(p) => p.act(obs),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Policy::Q(_) => "q",
            Policy::Gaussian(_) => "gaussian",
        }
    }

    pub fn as_q(&self) -> Option<&QPolicy> {
        match self {
            Policy::Q(p) => Some(p),
            Policy::Gaussian(_) => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianPolicy> {
        match self {
            Policy::Gaussian(p) => Some(p),
            Policy::Q(_) => None,
        }
    }

    pub fn to_json(&self) -> Result<String, RlError> {
        let file = PolicyFileRef {
            format: POLICY_FORMAT,
            version: POLICY_VERSION,
            policy: self,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.format != POLICY_FORMAT || file.version != POLICY_VERSION {
            return Err(RlError::WrongPolicyKind(format!(
                "unsupported policy file {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.policy)
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct PolicyFileRef<'a> {
    format: &'a str,
    version: u32,
    policy: &'a Policy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    format: String,
    version: u32,
    policy: Policy,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3, 0.2, 0.9]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    fn gaussian_with_bias(bias: f64) -> GaussianPolicy {
        let mut net = Mlp::zeros(&[2, 1]);
        net.layer_mut(0).1[0] = bias;
        GaussianPolicy {
            mean_net: net,
            log_std: vec![-0.5],
            action_bounds: (-1.0, 1.0),
            normalizer: Normalizer::IDENTITY,
            value_net: None,
        }
    }

    #[test]
    fn deterministic_action_is_clamped_mean() {
        let p = gaussian_with_bias(1.7);
        assert_eq!(p.act(&Observation([0.0, 0.0])), 1.0);
        let p = gaussian_with_bias(-0.3);
        assert_eq!(p.act(&Observation([0.0, 0.0])), -0.3);
    }

    #[test]
    fn sample_log_density_matches_closed_form() {
        let p = gaussian_with_bias(0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = (-0.5f64).exp();
        for _ in 0..100 {
            let (a, logp) = p.sample(&Observation([0.3, 0.1]), &mut rng);
            let density =
                (-(a - 0.25).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
            assert!(logp.is_finite());
            assert!((logp - density.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_file_round_trip() {
        let q = Policy::Q(QPolicy {
            q_net: Mlp::new(&[2, 3, 5], &mut ChaCha8Rng::seed_from_u64(1)),
            action_table: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            normalizer: Normalizer::IDENTITY,
        });
        let back = Policy::from_json(&q.to_json().unwrap()).unwrap();
        assert_eq!(back, q);
        assert!(q.to_json().unwrap().contains("\"kind\":\"q\""));
        assert!(Policy::from_json("{\"format\":\"other\",\"version\":1}").is_err());
    }
}

//! POMDP environments that emit a privileged state and a partial observation
//! on every step.

mod nav;
mod repeat;
mod stack;
mod tiger;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Action, Head};

pub use nav::{heading_search_ceiling, NavParams, NoisyMaskedNav};
pub use repeat::{RepeatPrevious, REPEAT_HORIZON};
pub use stack::StackObservations;
pub use tiger::{TigerDoor, TigerDoorAlt, LISTEN, OPEN_LEFT, OPEN_RIGHT, TIGER_CAP};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{env}: invalid action {action:?}")]
    InvalidAction { env: &'static str, action: Action },
    #[error("{env}: step called after episode end")]
    AfterDone { env: &'static str },
    #[error("{env}: invalid parameter: {msg}")]
    BadParam { env: &'static str, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Distribution head matching this space.
    pub fn head(&self) -> Head {
        match *self {
            ActionSpace::Discrete(n) => Head::Categorical { n_actions: n },
            ActionSpace::Continuous { dim, .. } => Head::DiagGaussian { action_dim: dim },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PomdpSpec {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An environment instance owns its random stream; reseeding is done by
/// constructing a new instance.
pub trait PomdpEnv: Send {
    fn name(&self) -> &'static str;
    fn spec(&self) -> PomdpSpec;
    fn reset(&mut self) -> StepResult;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
}

pub(crate) fn discrete(env: &'static str, action: &Action, n: usize) -> Result<usize, EnvError> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        _ => Err(EnvError::InvalidAction { env, action: action.clone() }),
    }
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Environment identifier plus parameters, as written in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "EnvConfigRepr", into = "EnvConfigRepr")]
pub enum EnvConfig {
    TigerDoor,
    TigerDoorAlt,
    NoisyMaskedNav { sigma: f64 },
    RepeatPrevious { k: usize },
}

// Serde ignores `deny_unknown_fields` on unit variants of a tagged enum, so
// every variant here carries braces.
#[derive(Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
enum EnvConfigRepr {
    #[serde(rename = "tigerdoor")]
    TigerDoor {},
    #[serde(rename = "tigerdoor_alt")]
    TigerDoorAlt {},
    NoisyMaskedNav {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    RepeatPrevious {
        #[serde(default = "default_k")]
        k: usize,
    },
}

impl From<EnvConfigRepr> for EnvConfig {
    fn from(r: EnvConfigRepr) -> Self {
        match r {
            EnvConfigRepr::TigerDoor {} => EnvConfig::TigerDoor,
            EnvConfigRepr::TigerDoorAlt {} => EnvConfig::TigerDoorAlt,
            EnvConfigRepr::NoisyMaskedNav { sigma } => EnvConfig::NoisyMaskedNav { sigma },
            EnvConfigRepr::RepeatPrevious { k } => EnvConfig::RepeatPrevious { k },
        }
    }
}

impl From<EnvConfig> for EnvConfigRepr {
    fn from(c: EnvConfig) -> Self {
        match c {
            EnvConfig::TigerDoor => EnvConfigRepr::TigerDoor {},
            EnvConfig::TigerDoorAlt => EnvConfigRepr::TigerDoorAlt {},
            EnvConfig::NoisyMaskedNav { sigma } => EnvConfigRepr::NoisyMaskedNav { sigma },
            EnvConfig::RepeatPrevious { k } => EnvConfigRepr::RepeatPrevious { k },
        }
    }
}

fn default_sigma() -> f64 {
    0.2
}

fn default_k() -> usize {
    2
}

impl EnvConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::TigerDoor => "tigerdoor",
            EnvConfig::TigerDoorAlt => "tigerdoor_alt",
            EnvConfig::NoisyMaskedNav { .. } => "noisy_masked_nav",
            EnvConfig::RepeatPrevious { .. } => "repeat_previous",
        }
    }

    /// Parses the short command-line form, e.g. `tigerdoor`,
    /// `noisy_masked_nav:0.3` or `repeat_previous:2`.
    pub fn parse_short(text: &str) -> Result<Self, EnvError> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        let bad = |msg: String| EnvError::BadParam { env: "env", msg };
        match (name, arg) {
            ("tigerdoor", None) => Ok(EnvConfig::TigerDoor),
            ("tigerdoor_alt", None) => Ok(EnvConfig::TigerDoorAlt),
            ("noisy_masked_nav", a) => Ok(EnvConfig::NoisyMaskedNav {
                sigma: a.map_or(Ok(default_sigma()), str::parse).map_err(|e| bad(format!("{e}")))?,
            }),
            ("repeat_previous", a) => Ok(EnvConfig::RepeatPrevious {
                k: a.map_or(Ok(default_k()), str::parse).map_err(|e| bad(format!("{e}")))?,
            }),
            _ => Err(bad(format!("unknown environment `{text}`"))),
        }
    }

    /// Builds one instance, optionally wrapped in an observation stack.
    pub fn build(&self, rng: ChaCha8Rng, stack: usize) -> Result<Box<dyn PomdpEnv>, EnvError> {
        let env: Box<dyn PomdpEnv> = match *self {
            EnvConfig::TigerDoor => Box::new(TigerDoor::new(rng)),
            EnvConfig::TigerDoorAlt => Box::new(TigerDoorAlt::new(rng)),
            EnvConfig::NoisyMaskedNav { sigma } => Box::new(NoisyMaskedNav::new(NavParams { sigma, ..NavParams::default() }, rng)?),
            EnvConfig::RepeatPrevious { k } => Box::new(RepeatPrevious::new(k, rng)?),
        };
        if stack > 1 {
            Ok(Box::new(StackObservations::new(env, stack)?))
        } else if stack == 1 {
            Ok(env)
        } else {
            Err(EnvError::BadParam { env: "stack", msg: "window must be at least 1".into() })
        }
    }
}

/// `n` independent instances. Instance `i` draws from ChaCha stream `i` of
/// the pool seed, so its trajectory depends only on that stream and the
/// actions it receives.
pub struct EnvPool {
    envs: Vec<Box<dyn PomdpEnv>>,
}

impl EnvPool {
    pub fn new(config: &EnvConfig, n: usize, seed: u64, stack: usize) -> Result<Self, EnvError> {
        let envs = (0..n)
            .map(|i| config.build(instance_rng(seed, i), stack))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { envs })
    }

    pub fn from_envs(envs: Vec<Box<dyn PomdpEnv>>) -> Self {
        Self { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> PomdpSpec {
        self.envs[0].spec()
    }

    pub fn envs_mut(&mut self) -> &mut [Box<dyn PomdpEnv>] {
        &mut self.envs
    }
}

pub fn instance_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

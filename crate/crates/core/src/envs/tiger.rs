use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{discrete, one_hot, ActionSpace, EnvError, PomdpEnv, PomdpSpec, StepResult};
use crate::nn::Action;

/// Maximum number of actions in one TigerDoor episode.
pub const TIGER_CAP: usize = 4;

pub const OPEN_LEFT: usize = 0;
pub const OPEN_RIGHT: usize = 1;
pub const LISTEN: usize = 2;

const OBS_UNKNOWN: usize = 0;
const LISTEN_REWARD: f64 = -0.1;

/// Classic two-door problem with a listening action. State is one-hot over
/// (tiger left, tiger right); observation is one-hot over
/// (unknown, revealed left, revealed right).
#[derive(Clone, Debug)]
pub struct TigerDoor {
    rng: ChaCha8Rng,
    tiger: usize,
    revealed: bool,
    t: usize,
    done: bool,
}

impl TigerDoor {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, tiger: 0, revealed: false, t: 0, done: true }
    }

    /// Starts an episode with a chosen hidden state.
    pub fn reset_to(&mut self, tiger: usize) -> StepResult {
        assert!(tiger < 2);
        self.tiger = tiger;
        self.revealed = false;
        self.t = 0;
        self.done = false;
        self.observe(0.0)
    }

    fn observe(&self, reward: f64) -> StepResult {
        let obs = if self.revealed { 1 + self.tiger } else { OBS_UNKNOWN };
        StepResult {
            state: one_hot(self.tiger, 2),
            obs: one_hot(obs, 3),
            reward,
            done: self.done,
        }
    }

    pub fn payoff(tiger: usize, action: usize) -> f64 {
        match action {
            LISTEN => LISTEN_REWARD,
            a if a == tiger => 1.0,
            _ => 0.0,
        }
    }
}

impl PomdpEnv for TigerDoor {
    fn name(&self) -> &'static str {
        "tigerdoor"
    }

    fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: 2,
            obs_dim: 3,
            action_space: ActionSpace::Discrete(3),
            horizon: TIGER_CAP,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> StepResult {
        let tiger = self.rng.random_range(0..2);
        self.reset_to(tiger)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::AfterDone { env: self.name() });
        }
        let a = discrete(self.name(), action, 3)?;
        let reward = Self::payoff(self.tiger, a);
        self.t += 1;
        if a == LISTEN {
            self.revealed = true;
        }
        self.done = a != LISTEN || self.t >= TIGER_CAP;
        Ok(self.observe(reward))
    }
}

/// Single-step variant with asymmetric payoffs and no informative action.
#[derive(Clone, Debug)]
pub struct TigerDoorAlt {
    rng: ChaCha8Rng,
    tiger: usize,
    done: bool,
}

impl TigerDoorAlt {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, tiger: 0, done: true }
    }

    pub fn reset_to(&mut self, tiger: usize) -> StepResult {
        assert!(tiger < 2);
        self.tiger = tiger;
        self.done = false;
        self.observe(0.0)
    }

    fn observe(&self, reward: f64) -> StepResult {
        StepResult {
            state: one_hot(self.tiger, 2),
            obs: vec![1.0],
            reward,
            done: self.done,
        }
    }

    pub fn payoff(tiger: usize, action: usize) -> f64 {
        match (tiger, action) {
            (0, 0) => 2.0,
            (1, 1) => 1.0,
            _ => 0.0,
        }
    }
}

impl PomdpEnv for TigerDoorAlt {
    fn name(&self) -> &'static str {
        "tigerdoor_alt"
    }

    fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: 2,
            obs_dim: 1,
            action_space: ActionSpace::Discrete(2),
            horizon: 1,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> StepResult {
        let tiger = self.rng.random_range(0..2);
        self.reset_to(tiger)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::AfterDone { env: self.name() });
        }
        let a = discrete(self.name(), action, 2)?;
        self.done = true;
        Ok(self.observe(Self::payoff(self.tiger, a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn tiger_payoff_table() {
        let table = [[1.0, 0.0, -0.1], [0.0, 1.0, -0.1]];
        for (s, row) in table.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                let mut env = TigerDoor::new(rng());
                env.reset_to(s);
                let out = env.step(&Action::Discrete(a)).unwrap();
                assert_eq!(out.reward, r);
                assert_eq!(out.done, a != LISTEN);
            }
        }
    }

    #[test]
    fn listening_reveals_right() {
        let mut env = TigerDoor::new(rng());
        let first = env.reset_to(1);
        assert_eq!(first.obs, vec![1.0, 0.0, 0.0]);
        let out = env.step(&Action::Discrete(LISTEN)).unwrap();
        assert_eq!(out.reward, -0.1);
        assert!(!out.done);
        assert_eq!(out.obs, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn listening_is_capped() {
        let mut env = TigerDoor::new(rng());
        env.reset();
        let mut ret = 0.0;
        for t in 0..TIGER_CAP {
            let out = env.step(&Action::Discrete(LISTEN)).unwrap();
            ret += out.reward;
            assert_eq!(out.done, t + 1 == TIGER_CAP);
        }
        assert!((ret + 0.4).abs() < 1e-12);
        assert!(matches!(env.step(&Action::Discrete(0)), Err(EnvError::AfterDone { .. })));
    }

    #[test]
    fn alt_payoff_table() {
        let table = [[2.0, 0.0], [0.0, 1.0]];
        for (s, row) in table.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                let mut env = TigerDoorAlt::new(rng());
                env.reset_to(s);
                let out = env.step(&Action::Discrete(a)).unwrap();
                assert_eq!(out.reward, r);
                assert!(out.done);
            }
        }
    }

    #[test]
    fn invalid_actions_rejected() {
        let mut env = TigerDoorAlt::new(rng());
        env.reset();
        assert!(matches!(env.step(&Action::Discrete(2)), Err(EnvError::InvalidAction { .. })));
        let mut env = TigerDoor::new(rng());
        env.reset();
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }
}

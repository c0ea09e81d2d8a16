use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{discrete, one_hot, ActionSpace, EnvError, PomdpEnv, PomdpSpec, StepResult};
use crate::nn::Action;

const SYMBOLS: usize = 4;
pub const REPEAT_HORIZON: usize = 32;

/// Emit the symbol seen `k` steps ago. The privileged state is the one-hot
/// target symbol (all zeros before step `k`); the observation is the current
/// symbol.
#[derive(Clone, Debug)]
pub struct RepeatPrevious {
    k: usize,
    rng: ChaCha8Rng,
    history: VecDeque<usize>,
    t: usize,
    done: bool,
}

impl RepeatPrevious {
    pub fn new(k: usize, rng: ChaCha8Rng) -> Result<Self, EnvError> {
        if !(1..=4).contains(&k) {
            return Err(EnvError::BadParam {
                env: "repeat_previous",
                msg: format!("k = {k} outside 1..=4"),
            });
        }
        Ok(Self { k, rng, history: VecDeque::new(), t: 0, done: true })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Symbol the agent must emit at the current step, if any.
    pub fn target(&self) -> Option<usize> {
        (self.t >= self.k).then(|| self.history[self.history.len() - 1 - self.k])
    }

    fn observe(&mut self, reward: f64) -> StepResult {
        let state = match self.target() {
            Some(v) => one_hot(v, SYMBOLS),
            None => vec![0.0; SYMBOLS],
        };
        let current = *self.history.back().unwrap();
        StepResult { state, obs: one_hot(current, SYMBOLS), reward, done: self.done }
    }

    fn draw(&mut self) {
        let v = self.rng.random_range(0..SYMBOLS);
        self.history.push_back(v);
        if self.history.len() > self.k + 1 {
            self.history.pop_front();
        }
    }
}

impl PomdpEnv for RepeatPrevious {
    fn name(&self) -> &'static str {
        "repeat_previous"
    }

    fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: SYMBOLS,
            obs_dim: SYMBOLS,
            action_space: ActionSpace::Discrete(SYMBOLS),
            horizon: REPEAT_HORIZON,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> StepResult {
        self.history.clear();
        self.t = 0;
        self.done = false;
        self.draw();
        self.observe(0.0)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::AfterDone { env: self.name() });
        }
        let a = discrete(self.name(), action, SYMBOLS)?;
        let scale = 1.0 / (REPEAT_HORIZON - self.k) as f64;
        let reward = match self.target() {
            Some(v) if v == a => scale,
            Some(_) => -scale,
            None => 0.0,
        };
        self.t += 1;
        self.done = self.t >= REPEAT_HORIZON;
        self.draw();
        Ok(self.observe(reward))
    }
}

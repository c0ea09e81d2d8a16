use std::collections::VecDeque;

use super::{EnvError, PomdpEnv, PomdpSpec, StepResult};
use crate::nn::Action;

/// Replaces the observation with the concatenation of the last `w`
/// observations, oldest first, zero-padded at episode start. The state is
/// passed through.
pub struct StackObservations {
    inner: Box<dyn PomdpEnv>,
    window: usize,
    frames: VecDeque<Vec<f64>>,
    obs_dim: usize,
}

impl StackObservations {
    pub fn new(inner: Box<dyn PomdpEnv>, window: usize) -> Result<Self, EnvError> {
        if window == 0 {
            return Err(EnvError::BadParam { env: "stack", msg: "window must be at least 1".into() });
        }
        let obs_dim = inner.spec().obs_dim;
        Ok(Self { inner, window, frames: VecDeque::new(), obs_dim })
    }

    fn push(&mut self, mut out: StepResult) -> StepResult {
        self.frames.push_back(std::mem::take(&mut out.obs));
        if self.frames.len() > self.window {
            self.frames.pop_front();
        }
        let mut obs = vec![0.0; (self.window - self.frames.len()) * self.obs_dim];
        for f in &self.frames {
            obs.extend_from_slice(f);
        }
        out.obs = obs;
        out
    }
}

impl PomdpEnv for StackObservations {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn spec(&self) -> PomdpSpec {
        let mut spec = self.inner.spec();
        spec.obs_dim *= self.window;
        spec
    }

    fn reset(&mut self) -> StepResult {
        self.frames.clear();
        let out = self.inner.reset();
        self.push(out)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let out = self.inner.step(action)?;
        Ok(self.push(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, RepeatPrevious};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_one_is_identity() {
        let mut plain = RepeatPrevious::new(2, ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut wrapped = StackObservations::new(Box::new(RepeatPrevious::new(2, ChaCha8Rng::seed_from_u64(4)).unwrap()), 1).unwrap();
        assert_eq!(plain.reset(), wrapped.reset());
        for a in [0, 3, 1, 2, 2] {
            assert_eq!(plain.step(&Action::Discrete(a)).unwrap(), wrapped.step(&Action::Discrete(a)).unwrap());
        }
        assert_eq!(plain.spec(), wrapped.spec());
    }

    #[test]
    fn first_frame_is_zero_padded() {
        let mut env = EnvConfig::RepeatPrevious { k: 1 }.build(ChaCha8Rng::seed_from_u64(0), 3).unwrap();
        let out = env.reset();
        assert_eq!(out.obs.len(), 12);
        assert!(out.obs[..8].iter().all(|&x| x == 0.0));
        assert_eq!(out.obs[8..].iter().sum::<f64>(), 1.0);
        assert_eq!(env.spec().obs_dim, 12);
    }

    #[test]
    fn window_covering_lag_exposes_target() {
        let k = 2;
        let mut env = EnvConfig::RepeatPrevious { k }.build(ChaCha8Rng::seed_from_u64(1), k + 1).unwrap();
        let mut out = env.reset();
        let mut ret = 0.0;
        while !out.done {
            // the oldest frame holds the target once the episode is k steps in
            let a = out.obs[..4].iter().position(|&x| x == 1.0).unwrap_or(0);
            out = env.step(&Action::Discrete(a)).unwrap();
            ret += out.reward;
        }
        assert!((ret - 1.0).abs() < 1e-12);
    }
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ActionSpace, EnvError, PomdpEnv, PomdpSpec, StepResult};
use crate::nn::Action;

/// Point mass in the plane chasing a goal. The learner sees a noisy position
/// and the goal but not the velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct NavParams {
    pub sigma: f64,
    pub dt: f64,
    pub friction: f64,
    pub horizon: usize,
    pub goal_radius: f64,
    pub bonus: f64,
    /// When false the learner observation also carries the velocity.
    pub mask_velocity: bool,
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            dt: 0.1,
            friction: 0.5,
            horizon: 100,
            goal_radius: 0.1,
            bonus: 1.0,
            mask_velocity: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NoisyMaskedNav {
    params: NavParams,
    rng: ChaCha8Rng,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
    done: bool,
    warned: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl NoisyMaskedNav {
    pub fn new(params: NavParams, rng: ChaCha8Rng) -> Result<Self, EnvError> {
        if !(params.sigma >= 0.0 && params.sigma.is_finite()) || params.horizon == 0 || params.dt <= 0.0 {
            return Err(EnvError::BadParam {
                env: "noisy_masked_nav",
                msg: format!("{params:?}"),
            });
        }
        Ok(Self {
            params,
            rng,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
            done: true,
            warned: false,
        })
    }

    pub fn params(&self) -> &NavParams {
        &self.params
    }

    /// Starts an episode at rest from `pos` toward `goal`.
    pub fn reset_to(&mut self, pos: [f64; 2], goal: [f64; 2]) -> StepResult {
        self.pos = pos;
        self.vel = [0.0; 2];
        self.goal = goal;
        self.t = 0;
        self.done = false;
        self.warned = false;
        self.observe(0.0)
    }

    fn observe(&mut self, reward: f64) -> StepResult {
        let state = vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]];
        let mut obs = Vec::with_capacity(6);
        for p in self.pos {
            let noise: f64 = if self.params.sigma > 0.0 { self.rng.sample(StandardNormal) } else { 0.0 };
            obs.push(p + self.params.sigma * noise);
        }
        if !self.params.mask_velocity {
            obs.extend_from_slice(&self.vel);
        }
        obs.extend_from_slice(&self.goal);
        StepResult { state, obs, reward, done: self.done }
    }

    /// Deterministic dynamics and reward for one step; returns (reward, arrived).
    fn advance(params: &NavParams, pos: &mut [f64; 2], vel: &mut [f64; 2], goal: [f64; 2], a: [f64; 2]) -> (f64, bool) {
        for i in 0..2 {
            pos[i] += vel[i] * params.dt;
            vel[i] += a[i] * params.dt - params.friction * vel[i] * params.dt;
        }
        let d = dist(*pos, goal);
        let arrived = d < params.goal_radius;
        let reward = -d * params.dt + if arrived { params.bonus } else { 0.0 };
        (reward, arrived)
    }
}

impl PomdpEnv for NoisyMaskedNav {
    fn name(&self) -> &'static str {
        "noisy_masked_nav"
    }

    fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: 6,
            obs_dim: if self.params.mask_velocity { 4 } else { 6 },
            action_space: ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 },
            horizon: self.params.horizon,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> StepResult {
        let draw = |rng: &mut ChaCha8Rng| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let pos = draw(&mut self.rng);
        let mut goal = draw(&mut self.rng);
        while dist(pos, goal) < 2.0 * self.params.goal_radius {
            goal = draw(&mut self.rng);
        }
        self.reset_to(pos, goal)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::AfterDone { env: self.name() });
        }
        let raw = match action {
            Action::Continuous(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => [v[0], v[1]],
            _ => return Err(EnvError::InvalidAction { env: self.name(), action: action.clone() }),
        };
        let a = raw.map(|x| x.clamp(-1.0, 1.0));
        if a != raw && !self.warned {
            log::warn!("noisy_masked_nav: action {raw:?} clamped to [-1, 1]");
            self.warned = true;
        }
        let (reward, arrived) = Self::advance(&self.params, &mut self.pos, &mut self.vel, self.goal, a);
        self.t += 1;
        self.done = arrived || self.t >= self.params.horizon;
        Ok(self.observe(reward))
    }
}

/// Best return over constant actions `throttle * (cos h, sin h)` on a grid of
/// headings and throttles, from rest at `start`. Used as a calibration
/// ceiling for learned policies.
pub fn heading_search_ceiling(params: &NavParams, start: [f64; 2], goal: [f64; 2], n_headings: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for h in 0..n_headings {
        let theta = 2.0 * std::f64::consts::PI * h as f64 / n_headings as f64;
        for throttle in [0.25, 0.5, 0.75, 1.0] {
            let a = [throttle * theta.cos(), throttle * theta.sin()];
            let (mut pos, mut vel) = (start, [0.0; 2]);
            let mut ret = 0.0;
            for _ in 0..params.horizon {
                let (r, arrived) = NoisyMaskedNav::advance(params, &mut pos, &mut vel, goal, a);
                ret += r;
                if arrived {
                    break;
                }
            }
            best = best.max(ret);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn env(params: NavParams) -> NoisyMaskedNav {
        NoisyMaskedNav::new(params, ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn zero_action_from_rest_keeps_position() {
        let mut e = env(NavParams::default());
        e.reset_to([0.3, -0.2], [0.8, 0.4]);
        let out = e.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(&out.state[..4], &[0.3, -0.2, 0.0, 0.0]);
        let d = dist([0.3, -0.2], [0.8, 0.4]);
        assert_eq!(out.reward, -d * 0.1);
        assert!(!out.done);
    }

    #[test]
    fn noiseless_unmasked_observation_is_state() {
        let mut e = env(NavParams { sigma: 0.0, mask_velocity: false, ..NavParams::default() });
        let mut out = e.reset();
        for _ in 0..10 {
            let s = &out.state;
            assert_eq!(out.obs, vec![s[0], s[1], s[2], s[3], s[4], s[5]]);
            out = e.step(&Action::Continuous(vec![0.5, -1.0])).unwrap();
        }
    }

    #[test]
    fn arrival_pays_bonus_and_terminates() {
        let mut e = env(NavParams::default());
        e.reset_to([0.0, 0.0], [0.05, 0.0]);
        let out = e.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert!(out.done);
        assert!((out.reward - (1.0 - 0.005)).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_actions_are_clamped() {
        let mut a = env(NavParams::default());
        let mut b = env(NavParams::default());
        a.reset_to([0.0, 0.0], [1.0, 1.0]);
        b.reset_to([0.0, 0.0], [1.0, 1.0]);
        for _ in 0..3 {
            let x = a.step(&Action::Continuous(vec![5.0, -7.0])).unwrap();
            let y = b.step(&Action::Continuous(vec![1.0, -1.0])).unwrap();
            assert_eq!(x.state, y.state);
        }
    }

    #[test]
    fn ceiling_dominates_standing_still() {
        let p = NavParams::default();
        let (start, goal) = ([-0.5, -0.5], [0.5, 0.3]);
        let ceiling = heading_search_ceiling(&p, start, goal, 72);
        let still = -dist(start, goal) * p.dt * p.horizon as f64;
        assert!(ceiling > still);
    }
}

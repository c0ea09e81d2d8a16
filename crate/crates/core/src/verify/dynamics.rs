use super::tabular::softmax;

pub const SATURATION: f64 = 1e-9;

/// Trajectory of the two-door co-training recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct DoorDynamics {
    /// `pi_t(a_L)` from `t = 0` until `n_steps` or saturation.
    pub pi_left: Vec<f64>,
    /// Guider move toward `a_L` in the left-door state.
    pub p: Vec<f64>,
    /// Guider move toward `a_R` in the right-door state.
    pub q: Vec<f64>,
}

impl DoorDynamics {
    pub fn p_exceeds_q(&self) -> bool {
        self.p.iter().zip(&self.q).all(|(p, q)| p > q)
    }

    pub fn strictly_increasing(&self) -> bool {
        self.pi_left.windows(2).all(|w| w[1] > w[0])
    }

    pub fn final_left(&self) -> f64 {
        *self.pi_left.last().expect("trajectory starts at t = 0")
    }
}

/// Runs the recursion on the TigerDoor-alt payoffs from the uniform policy.
pub fn tigerdoor_alt_dynamics(n_steps: usize, eta: f64) -> DoorDynamics {
    door_dynamics([[2.0, 0.0], [0.0, 1.0]], 0.5, n_steps, eta)
}

/// Each step the guider starts from the shared learner policy `(x, 1-x)` in
/// both states and takes an exact mirror-descent step on the one-step
/// payoffs `payoff[state][action]`; the learner then minimizes the average
/// `KL(mu_s || pi)` over the two equally likely states, which is the
/// arithmetic mean of the guider rows. With `mu(a_L|s_L) = x + p` and
/// `mu(a_L|s_R) = x - q` this is `x + (p - q) / 2`.
pub fn door_dynamics(payoff: [[f64; 2]; 2], x0: f64, n_steps: usize, eta: f64) -> DoorDynamics {
    let mut x = x0;
    let mut out = DoorDynamics {
        pi_left: vec![x],
        p: Vec::with_capacity(n_steps),
        q: Vec::with_capacity(n_steps),
    };
    for _ in 0..n_steps {
        if x >= 1.0 - SATURATION {
            break;
        }
        let step = |row: [f64; 2]| softmax(&[x.ln() + eta * row[0], (1.0 - x).ln() + eta * row[1]])[0];
        let p = step(payoff[0]) - x;
        let q = x - step(payoff[1]);
        x += (p - q) / 2.0;
        out.p.push(p);
        out.q.push(q);
        out.pi_left.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_from_uniform_moves_left() {
        let d = tigerdoor_alt_dynamics(1, 0.05);
        assert!(d.pi_left[1] > 0.5);
        // exact first step: p = tanh(eta)/2, q = tanh(eta/2)/2
        assert!((d.p[0] - 0.05f64.tanh() / 2.0).abs() < 1e-15);
        assert!((d.q[0] - 0.025f64.tanh() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn equal_payoffs_are_stationary() {
        let d = door_dynamics([[1.0, 0.0], [0.0, 1.0]], 0.5, 50, 0.1);
        for (p, q) in d.p.iter().zip(&d.q) {
            assert!((p - q).abs() < 1e-15);
        }
        assert!(d.pi_left.iter().all(|x| (x - 0.5).abs() < 1e-15));
    }
}

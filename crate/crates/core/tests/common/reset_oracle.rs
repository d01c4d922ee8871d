//! Budget dynamic program for the deterministic reset instance, written
//! directly from the game data and independent of the grid solver.
//!
//! With `a ≡ σ ≡ 0` the state is frozen between interventions and every
//! intervention sends it to 0. `B_k(n, x)` is the best payoff from mesh time
//! `t_n` with at most `k` interventions left:
//! `B_k(n, x) = max(ψ(x), max_{m ≥ n} −ℓ(t_m, x) + B_{k−1}(m, 0))`.

#![allow(dead_code)]

pub struct ResetOracle {
    pub horizon: f64,
    pub steps: usize,
    pub cost: f64,
    pub ramp_start: f64,
    pub ramp_slope: f64,
}

impl ResetOracle {
    pub fn new(cost: f64, steps: usize) -> Self {
        ResetOracle {
            horizon: 1.0,
            steps,
            cost,
            ramp_start: 0.8,
            ramp_slope: 2.0,
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.horizon / self.steps as f64
    }

    pub fn ell(&self, t: f64, x: f64) -> f64 {
        let start = self.ramp_start * self.horizon;
        let ramp = ((t - start) / (self.horizon - start)).clamp(0.0, 1.0);
        self.cost + self.ramp_slope * x * x * ramp
    }

    pub fn psi(&self, x: f64) -> f64 {
        -x * x
    }

    /// `B_k(n, 0)` for every `n`, indexed `[k][n]`, up to the first budget
    /// that adds nothing.
    fn at_origin(&self) -> Vec<Vec<f64>> {
        let m = self.steps;
        let mut levels = vec![vec![self.psi(0.0); m + 1]];
        loop {
            let prev = levels.last().unwrap();
            let next: Vec<f64> = (0..=m)
                .map(|n| {
                    (n..=m)
                        .map(|j| -self.ell(self.time(j), 0.0) + prev[j])
                        .fold(self.psi(0.0), f64::max)
                })
                .collect();
            let done = next == *prev;
            levels.push(next);
            if done || levels.len() > 64 {
                return levels;
            }
        }
    }

    /// Best payoff and optimal intervention count from `(t_n, x)`.
    pub fn value(&self, n: usize, x: f64) -> (f64, usize) {
        let origin = self.at_origin();
        let k = origin.len() - 1;
        let mut best = (self.psi(x), 0);
        for j in n..=self.steps {
            let cand = -self.ell(self.time(j), x) + origin[k - 1][j];
            if cand > best.0 {
                best = (cand, 1 + self.count_from_origin(&origin, j));
            }
        }
        best
    }

    fn count_from_origin(&self, origin: &[Vec<f64>], n: usize) -> usize {
        let k = origin.len() - 1;
        let mut best = (self.psi(0.0), 0);
        for j in n..=self.steps {
            let cand = -self.ell(self.time(j), 0.0) + origin[k - 1][j];
            if cand > best.0 {
                best = (cand, 1);
            }
        }
        best.1
    }

    /// Whether intervening right now attains the optimum at `(t_n, x)`.
    pub fn intervenes(&self, n: usize, x: f64) -> bool {
        if n == self.steps {
            return false;
        }
        let origin = self.at_origin();
        let k = origin.len() - 1;
        let now = -self.ell(self.time(n), x) + origin[k - 1][n];
        now >= self.value(n, x).0 - 1e-12
    }
}

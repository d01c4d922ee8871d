//! Sampled checks of the standing assumptions on a [`ProblemSpec`].
//!
//! Every check reduces to a signed violation per sample (positive means the
//! condition is broken by that amount); a check passes iff its worst
//! violation is at most the tolerance. Evaluation failures count as an
//! infinite violation at the offending point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::problem::ProblemSpec;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Uniform sample cloud over `[0, T] × box`, deterministic in `seed`.
pub fn sample_points(spec: &ProblemSpec, lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| SamplePoint {
            t: rng.random::<f64>() * spec.horizon,
            x: lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub action: Option<usize>,
    pub impulse: Option<usize>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The condition being checked.
    pub anchor: String,
    pub samples: usize,
    pub worst_violation: f64,
    pub pass: bool,
    /// Violating points, worst first, at most [`MAX_WITNESSES`].
    pub violations: Vec<Witness>,
}

pub const MAX_WITNESSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tol: f64,
    pub checks: Vec<CheckRecord>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Accumulator {
    name: &'static str,
    anchor: &'static str,
    samples: usize,
    worst: f64,
    witnesses: Vec<Witness>,
}

impl Accumulator {
    fn new(name: &'static str, anchor: &'static str) -> Self {
        Accumulator {
            name,
            anchor,
            samples: 0,
            worst: f64::NEG_INFINITY,
            witnesses: Vec::new(),
        }
    }

    fn push(&mut self, w: Witness, tol: f64) {
        self.samples += 1;
        let v = if w.violation.is_nan() { f64::INFINITY } else { w.violation };
        self.worst = self.worst.max(v);
        if v > tol {
            self.witnesses.push(Witness { violation: v, ..w });
        }
    }

    fn push_result(&mut self, r: Result<f64>, t: f64, x: &[f64], action: Option<usize>, impulse: Option<usize>, tol: f64) {
        let violation = r.unwrap_or(f64::INFINITY);
        self.push(
            Witness {
                t,
                x: x.to_vec(),
                action,
                impulse,
                violation,
            },
            tol,
        );
    }

    fn finish(mut self, tol: f64) -> CheckRecord {
        self.witnesses
            .sort_by(|a, b| b.violation.total_cmp(&a.violation));
        self.witnesses.truncate(MAX_WITNESSES);
        let worst = if self.samples == 0 { 0.0 } else { self.worst };
        CheckRecord {
            name: self.name.into(),
            anchor: self.anchor.into(),
            samples: self.samples,
            worst_violation: worst,
            pass: worst <= tol,
            violations: self.witnesses,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Run all checks on `samples`. Lipschitz probes pair each sample with the
/// next one in the list (and the last with the first).
pub fn validate_assumptions(spec: &ProblemSpec, samples: &[SamplePoint], tol: f64) -> ValidationReport {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    let c = spec.constants;
    let big_t = spec.horizon;

    let mut cost_floor = Accumulator::new("cost_lower_bound", "ℓ(t,x,b) ≥ δ > 0");
    let mut growth = Accumulator::new("impulse_growth", "|Γ(t,x,b)| ≤ K_Γ ∨ |x|");
    let mut no_gain = Accumulator::new("terminal_no_gain", "ψ(x) > ψ(Γ(T,x,b)) − ℓ(T,x,b)");
    let mut lip_a = Accumulator::new("drift_lipschitz", "|a(t,x,α) − a(t,x',α)| ≤ C|x − x'|");
    let mut lip_s = Accumulator::new("diffusion_lipschitz", "|σ(t,x,α) − σ(t,x',α)| ≤ C|x − x'|");
    let mut lip_f = Accumulator::new(
        "driver_lipschitz",
        "|f(t,x',y',z',α) − f(t,x,y,z,α)| ≤ k_f((1+|x|^ρ+|x'|^ρ)|x'−x| + |y'−y| + |z'−z|)",
    );

    let mut gamma = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_eed0_fa55);

    for (i, s) in samples.iter().enumerate() {
        let x = &s.x;
        for (bi, b) in spec.impulses.iter().enumerate() {
            let bi = Some(bi);
            cost_floor.push_result(spec.cost(s.t, x, b).map(|l| c.delta_floor - l), s.t, x, None, bi, tol);

            let g = spec
                .impulse_into(s.t, x, b, &mut gamma)
                .map(|_| norm(&gamma) - c.k_gamma.max(norm(x)));
            growth.push_result(g, s.t, x, None, bi, tol);

            let ng = (|| {
                spec.impulse_into(big_t, x, b, &mut gamma)?;
                Ok(spec.terminal(&gamma)? - spec.cost(big_t, x, b)? - spec.terminal(x)?)
            })();
            no_gain.push_result(ng, big_t, x, None, bi, tol);
        }

        let other = &samples[(i + 1) % samples.len()];
        let xp = &other.x;
        let dx = dist(x, xp);
        for (ai, alpha) in spec.actions.iter().enumerate() {
            let ai = Some(ai);
            let mut a1 = vec![0.0; n];
            let mut a2 = vec![0.0; n];
            let r = spec
                .drift_into(s.t, x, alpha, &mut a1)
                .and_then(|_| spec.drift_into(s.t, xp, alpha, &mut a2))
                .map(|_| dist(&a1, &a2) - c.lipschitz_c * dx);
            lip_a.push_result(r, s.t, x, ai, None, tol);

            let mut s1 = vec![0.0; n * d];
            let mut s2 = vec![0.0; n * d];
            let r = spec
                .diffusion_into(s.t, x, alpha, &mut s1)
                .and_then(|_| spec.diffusion_into(s.t, xp, alpha, &mut s2))
                .map(|_| dist(&s1, &s2) - c.lipschitz_c * dx);
            lip_s.push_result(r, s.t, x, ai, None, tol);

            let y1: f64 = rng.random_range(-1.0..1.0);
            let y2: f64 = rng.random_range(-1.0..1.0);
            let z1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z2: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = (|| {
                let f1 = spec.driver(s.t, x, y1, &z1, alpha)?;
                let f2 = spec.driver(s.t, xp, y2, &z2, alpha)?;
                let rho = c.growth_rho;
                let weight = 1.0 + norm(x).powf(rho) + norm(xp).powf(rho);
                let bound = c.lipschitz_kf * (weight * dx + (y1 - y2).abs() + dist(&z1, &z2));
                Ok((f1 - f2).abs() - bound)
            })();
            lip_f.push_result(r, s.t, x, ai, None, tol);
        }
    }

    ValidationReport {
        tol,
        checks: [cost_floor, growth, no_gain, lip_a, lip_s, lip_f]
            .into_iter()
            .map(|a| a.finish(tol))
            .collect(),
    }
}

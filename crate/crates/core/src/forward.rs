//! Euler–Maruyama simulation of the impulsively and continuously controlled
//! state, with the intervention-cost process carried alongside.
//!
//! Impulses only fire at mesh times. Within a node the impulse (if any) is
//! applied first and the diffusion step then starts from the post-impulse
//! state. Stored states are post-impulse; pre-impulse states live in the
//! per-path event log.
//!
//! Path `p` draws its Brownian increments from `ChaCha8Rng` seeded with the
//! master seed and switched to stream `p` (stream `p / 2` with the sign of
//! every draw flipped for odd `p` under antithetic sampling). Increments are
//! consumed step by step, so two runs sharing a seed and a step size see the
//! same noise on their common prefix.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Slack used when matching schedule times to mesh times.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub time: f64,
    /// Index into the impulse set.
    pub impulse: usize,
}

/// Open-loop impulse control: nondecreasing times, impulses from the set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSchedule {
    interventions: Vec<Intervention>,
}

impl ImpulseSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(spec: &ProblemSpec, interventions: Vec<Intervention>) -> Result<Self> {
        for w in interventions.windows(2) {
            if w[1].time < w[0].time {
                return Err(Error::Config(format!(
                    "intervention times must be nondecreasing ({} after {})",
                    w[1].time, w[0].time
                )));
            }
        }
        for iv in &interventions {
            spec.impulse(iv.impulse)?;
            if !(0.0..=spec.horizon).contains(&iv.time) {
                return Err(Error::Config(format!(
                    "intervention time {} outside [0, {}]",
                    iv.time, spec.horizon
                )));
            }
        }
        Ok(ImpulseSchedule { interventions })
    }

    /// Shorthand for `new` from `(time, impulse index)` pairs.
    pub fn from_pairs(spec: &ProblemSpec, pairs: &[(f64, usize)]) -> Result<Self> {
        Self::new(
            spec,
            pairs
                .iter()
                .map(|&(time, impulse)| Intervention { time, impulse })
                .collect(),
        )
    }

    pub fn interventions(&self) -> &[Intervention] {
        &self.interventions
    }

    pub fn len(&self) -> usize {
        self.interventions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interventions.is_empty()
    }

    /// The first `j` interventions.
    pub fn truncate(&self, j: usize) -> Self {
        ImpulseSchedule {
            interventions: self.interventions.iter().take(j).copied().collect(),
        }
    }

    /// Interventions strictly before `s`.
    pub fn before(&self, s: f64) -> Self {
        ImpulseSchedule {
            interventions: self.interventions.iter().filter(|iv| iv.time < s).copied().collect(),
        }
    }

    /// Interventions at or after `s`.
    pub fn from_time(&self, s: f64) -> Self {
        ImpulseSchedule {
            interventions: self.interventions.iter().filter(|iv| iv.time >= s).copied().collect(),
        }
    }
}

/// `u1` followed by `u2`, with each time of `u2` pushed up to the last time of `u1`.
pub fn concat_controls(u1: &ImpulseSchedule, u2: &ImpulseSchedule) -> ImpulseSchedule {
    let floor = u1.interventions.last().map_or(f64::NEG_INFINITY, |iv| iv.time);
    let mut interventions = u1.interventions.clone();
    interventions.extend(u2.interventions.iter().map(|iv| Intervention {
        time: iv.time.max(floor),
        impulse: iv.impulse,
    }));
    ImpulseSchedule { interventions }
}

pub type ImpulseRule = Arc<dyn Fn(f64, &[f64]) -> Option<usize> + Send + Sync>;
pub type ActionRule = Arc<dyn Fn(f64, &[f64]) -> usize + Send + Sync>;

#[derive(Clone, Default)]
pub enum ImpulsePolicy {
    #[default]
    None,
    Schedule(ImpulseSchedule),
    /// Evaluated once per mesh time; `Some(b)` fires impulse `b`.
    Feedback(ImpulseRule),
}

#[derive(Clone)]
pub enum ContinuousPolicy {
    Constant(usize),
    Feedback(ActionRule),
}

impl Default for ContinuousPolicy {
    fn default() -> Self {
        ContinuousPolicy::Constant(0)
    }
}

impl ContinuousPolicy {
    pub fn action(&self, t: f64, x: &[f64]) -> usize {
        match self {
            ContinuousPolicy::Constant(a) => *a,
            ContinuousPolicy::Feedback(rule) => rule(t, x),
        }
    }
}

#[derive(Clone, Default)]
pub struct PolicyPair {
    pub impulse: ImpulsePolicy,
    pub continuous: ContinuousPolicy,
}

impl PolicyPair {
    pub fn new(impulse: ImpulsePolicy, continuous: ContinuousPolicy) -> Self {
        PolicyPair { impulse, continuous }
    }

    pub fn schedule(schedule: ImpulseSchedule, action: usize) -> Self {
        Self::new(ImpulsePolicy::Schedule(schedule), ContinuousPolicy::Constant(action))
    }

    pub fn constant(action: usize) -> Self {
        Self::new(ImpulsePolicy::None, ContinuousPolicy::Constant(action))
    }
}

impl std::fmt::Debug for PolicyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let imp = match &self.impulse {
            ImpulsePolicy::None => "none".to_string(),
            ImpulsePolicy::Schedule(s) => format!("schedule({} interventions)", s.len()),
            ImpulsePolicy::Feedback(_) => "feedback".to_string(),
        };
        let cont = match &self.continuous {
            ContinuousPolicy::Constant(a) => format!("constant({a})"),
            ContinuousPolicy::Feedback(_) => "feedback".to_string(),
        };
        write!(f, "PolicyPair {{ impulse: {imp}, continuous: {cont} }}")
    }
}

/// `(Γ(t, x, b), ℓ(t, x, b))` for impulse index `b`.
pub fn apply_impulse(spec: &ProblemSpec, t: f64, x: &[f64], b: usize) -> Result<(Vec<f64>, f64)> {
    let beta = spec.impulse(b)?;
    let mut out = vec![0.0; spec.state_dim];
    spec.impulse_into(t, x, beta, &mut out)?;
    Ok((out, spec.cost(t, x, beta)?))
}

/// Mix a master seed with a tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseEvent {
    pub step: usize,
    pub time: f64,
    pub impulse: usize,
    pub pre_state: Vec<f64>,
    pub cost: f64,
}

/// Where paths start.
#[derive(Debug, Clone, Copy)]
pub enum Starts<'a> {
    Point(&'a [f64]),
    /// Flat `n_paths × n` array.
    PerPath(&'a [f64]),
}

/// Mesh and sampling parameters of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSetup {
    pub t0: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Whether impulses may fire at the first mesh time.
    pub impulses_at_start: bool,
}

impl SimSetup {
    pub fn new(t0: f64, t_end: f64, n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimSetup {
            t0,
            t_end,
            n_paths,
            n_steps,
            seed,
            antithetic: false,
            impulses_at_start: true,
        }
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.step()
        }
    }
}

/// Simulated ensemble. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub setup: SimSetup,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub times: Vec<f64>,
    /// `n_paths × (n_steps + 1) × n`, post-impulse.
    pub states: Vec<f64>,
    /// `Ξ` at each mesh time (cost of impulses strictly earlier), `n_paths × (n_steps + 1)`.
    pub xi: Vec<f64>,
    /// Total cost including impulses at the final mesh time.
    pub xi_total: Vec<f64>,
    /// `n_paths × n_steps × d`.
    pub increments: Vec<f64>,
    /// Action index used on each step, `n_paths × n_steps`.
    pub actions: Vec<usize>,
    pub events: Vec<Vec<ImpulseEvent>>,
}

struct PathOut {
    states: Vec<f64>,
    xi: Vec<f64>,
    xi_total: f64,
    increments: Vec<f64>,
    actions: Vec<usize>,
    events: Vec<ImpulseEvent>,
}

fn simulate_one(spec: &ProblemSpec, setup: &SimSetup, x0: &[f64], policies: &PolicyPair, path: usize) -> Result<PathOut> {
    let n = spec.state_dim;
    let d = spec.noise_dim;
    let m = setup.n_steps;
    let h = setup.step();
    let sqrt_h = h.sqrt();

    let (stream, sign) = if setup.antithetic {
        (path as u64 / 2, if path % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (path as u64, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    rng.set_stream(stream);

    let mut out = PathOut {
        states: Vec::with_capacity((m + 1) * n),
        xi: Vec::with_capacity(m + 1),
        xi_total: 0.0,
        increments: Vec::with_capacity(m * d),
        actions: Vec::with_capacity(m),
        events: Vec::new(),
    };
    let mut x = x0.to_vec();
    let mut post = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut sigma = vec![0.0; n * d];
    let mut dw = vec![0.0; d];
    let mut xi = 0.0;
    let mut next = 0usize;
    let schedule = match &policies.impulse {
        ImpulsePolicy::Schedule(s) => s.interventions(),
        _ => &[],
    };
    let non_finite = |step| Error::NonFiniteState { path, step };

    for i in 0..=m {
        let t = setup.time(i);
        out.xi.push(xi);

        let mut fire = |b: usize, x: &mut Vec<f64>, out: &mut PathOut, xi: &mut f64| -> Result<()> {
            let beta = spec.impulse(b)?;
            spec.impulse_into(t, x, beta, &mut post)?;
            let cost = spec.cost(t, x, beta)?;
            if !cost.is_finite() || post.iter().any(|v| !v.is_finite()) {
                return Err(non_finite(i));
            }
            out.events.push(ImpulseEvent {
                step: i,
                time: t,
                impulse: b,
                pre_state: x.clone(),
                cost,
            });
            *xi += cost;
            x.copy_from_slice(&post);
            Ok(())
        };

        let active = i > 0 || setup.impulses_at_start;
        // Interventions dated before the window are skipped when the start node is closed.
        while next < schedule.len() && schedule[next].time <= t + TIME_EPS {
            if active {
                fire(schedule[next].impulse, &mut x, &mut out, &mut xi)?;
            }
            next += 1;
        }
        if active {
            if let ImpulsePolicy::Feedback(rule) = &policies.impulse {
                if let Some(b) = rule(t, &x) {
                    fire(b, &mut x, &mut out, &mut xi)?;
                }
            }
        }
        out.states.extend_from_slice(&x);
        if i == m {
            break;
        }

        let a = policies.continuous.action(t, &x);
        if a >= spec.actions.len() {
            return Err(Error::Config(format!("action index {a} outside the action set")));
        }
        let alpha = spec.action(a);
        spec.drift_into(t, &x, alpha, &mut drift)?;
        spec.diffusion_into(t, &x, alpha, &mut sigma)?;
        for w in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = sign * sqrt_h * z;
        }
        for (k, xk) in x.iter_mut().enumerate() {
            let noise: f64 = (0..d).map(|j| sigma[k * d + j] * dw[j]).sum();
            *xk += drift[k] * h + noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(i + 1));
        }
        out.increments.extend_from_slice(&dw);
        out.actions.push(a);
    }
    out.xi_total = xi;
    Ok(out)
}

/// Simulate on `[setup.t0, setup.t_end]` from the given starting points.
pub fn simulate_window(spec: &ProblemSpec, setup: &SimSetup, starts: Starts<'_>, policies: &PolicyPair) -> Result<PathBundle> {
    let n = spec.state_dim;
    if setup.n_paths == 0 || setup.n_steps == 0 {
        return Err(Error::Config("n_paths and n_steps must be at least 1".into()));
    }
    if !(setup.t_end > setup.t0) {
        return Err(Error::Config(format!(
            "empty time window [{}, {}]",
            setup.t0, setup.t_end
        )));
    }
    match starts {
        Starts::Point(x) if x.len() != n => {
            return Err(Error::Dimension(format!("initial state has {} components, expected {n}", x.len())))
        }
        Starts::PerPath(x) if x.len() != n * setup.n_paths => {
            return Err(Error::Dimension("per-path starts do not match n_paths × n".into()))
        }
        _ => {}
    }

    let results: Vec<Result<PathOut>> = (0..setup.n_paths)
        .into_par_iter()
        .map(|p| {
            let x0 = match starts {
                Starts::Point(x) => x,
                Starts::PerPath(xs) => &xs[p * n..(p + 1) * n],
            };
            simulate_one(spec, setup, x0, policies, p)
        })
        .collect();

    let m = setup.n_steps;
    let mut bundle = PathBundle {
        setup: setup.clone(),
        state_dim: n,
        noise_dim: spec.noise_dim,
        times: (0..=m).map(|i| setup.time(i)).collect(),
        states: Vec::with_capacity(setup.n_paths * (m + 1) * n),
        xi: Vec::with_capacity(setup.n_paths * (m + 1)),
        xi_total: Vec::with_capacity(setup.n_paths),
        increments: Vec::with_capacity(setup.n_paths * m * spec.noise_dim),
        actions: Vec::with_capacity(setup.n_paths * m),
        events: Vec::with_capacity(setup.n_paths),
    };
    for r in results {
        let p = r?;
        bundle.states.extend(p.states);
        bundle.xi.extend(p.xi);
        bundle.xi_total.push(p.xi_total);
        bundle.increments.extend(p.increments);
        bundle.actions.extend(p.actions);
        bundle.events.push(p.events);
    }
    Ok(bundle)
}

/// Simulate `n_paths` paths from `(t0, x0)` to the horizon.
pub fn simulate_paths(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    policies: &PolicyPair,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBundle> {
    if !(0.0..spec.horizon).contains(&t0) {
        return Err(Error::Config(format!("t0 = {t0} outside [0, {})", spec.horizon)));
    }
    let setup = SimSetup::new(t0, spec.horizon, n_paths, n_steps, seed);
    simulate_window(spec, &setup, Starts::Point(x0), policies)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> MomentEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stderr = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    MomentEstimate { estimate: mean, stderr }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.setup.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.setup.n_steps
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let n = self.state_dim;
        let off = (path * (self.n_steps() + 1) + step) * n;
        &self.states[off..off + n]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let d = self.noise_dim;
        let off = (path * self.n_steps() + step) * d;
        &self.increments[off..off + d]
    }

    pub fn action(&self, path: usize, step: usize) -> usize {
        self.actions[path * self.n_steps() + step]
    }

    /// `Ξ` at mesh time `step`, excluding impulses at that time.
    pub fn xi_at(&self, path: usize, step: usize) -> f64 {
        self.xi[path * (self.n_steps() + 1) + step]
    }

    /// `Ξ` just after mesh time `step`.
    pub fn xi_after(&self, path: usize, step: usize) -> f64 {
        if step == self.n_steps() {
            self.xi_total[path]
        } else {
            self.xi_at(path, step + 1)
        }
    }

    pub fn final_states(&self) -> Vec<f64> {
        (0..self.n_paths())
            .flat_map(|p| self.state(p, self.n_steps()).to_vec())
            .collect()
    }

    pub fn impulse_counts(&self) -> Vec<usize> {
        self.events.iter().map(Vec::len).collect()
    }

    /// Monte Carlo estimate of `E[sup_s |X_s|^p]`, counting pre-impulse states.
    pub fn estimate_moment_bound(&self, p: f64) -> MomentEstimate {
        let sups: Vec<f64> = (0..self.n_paths())
            .map(|k| {
                let along = (0..=self.n_steps()).map(|i| norm(self.state(k, i)));
                let pre = self.events[k].iter().map(|e| norm(&e.pre_state));
                along.chain(pre).fold(0.0, f64::max).powf(p)
            })
            .collect();
        mean_stderr(&sups)
    }

    /// CSV with one row per path and mesh time. `xi_cumulative` includes
    /// costs charged at that mesh time; `impulse_value` is the last impulse
    /// applied there (components joined by `;`).
    pub fn write_csv<W: Write>(&self, spec: &ProblemSpec, mut w: W) -> Result<()> {
        let n = self.state_dim;
        let xs: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        writeln!(w, "path_id,step,t,{},xi_cumulative,impulse_flag,impulse_value", xs.join(","))?;
        for p in 0..self.n_paths() {
            let mut ev = self.events[p].iter().peekable();
            for i in 0..=self.n_steps() {
                let mut last = None;
                while let Some(e) = ev.next_if(|e| e.step == i) {
                    last = Some(e.impulse);
                }
                let state: Vec<String> = self.state(p, i).iter().map(|v| format!("{v:?}")).collect();
                let value = match last {
                    Some(b) => spec
                        .impulse(b)?
                        .iter()
                        .map(|v| format!("{v:?}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                    None => String::new(),
                };
                writeln!(
                    w,
                    "{p},{i},{:?},{},{:?},{},{}",
                    self.times[i],
                    state.join(","),
                    self.xi_after(p, i),
                    u8::from(last.is_some()),
                    value
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problem::{Constants, Sources};
    use proptest::prelude::*;

    fn spec_with(drift: &str, sigma: &str, gamma: &str, cost: &str, impulses: &[f64]) -> ProblemSpec {
        ProblemSpec::from_sources(&Sources {
            horizon: 1.0,
            state_dim: 1,
            noise_dim: 1,
            drift: vec![drift.into()],
            diffusion: vec![sigma.into()],
            driver: "0".into(),
            terminal: "x".into(),
            cost: cost.into(),
            impulse_map: vec![gamma.into()],
            actions: vec![vec![0.0]],
            impulses: impulses.iter().map(|b| vec![*b]).collect(),
            constants: Constants::default(),
        })
        .unwrap()
    }

    #[test]
    fn apply_impulse_examples() {
        let s = spec_with("0", "0", "x + b", "0.5", &[2.0]);
        assert_eq!(apply_impulse(&s, 0.0, &[1.0], 0).unwrap(), (vec![3.0], 0.5));
        let s = spec_with("0", "0", "b", "0.1", &[0.0]);
        assert_eq!(apply_impulse(&s, 0.0, &[7.0], 0).unwrap(), (vec![0.0], 0.1));
        assert_eq!(apply_impulse(&s, 0.0, &[7.0], 3), Err(Error::NotInImpulseSet(3)));
    }

    #[test]
    fn apply_impulse_euclidean_cost() {
        let s = ProblemSpec::from_sources(&Sources {
            horizon: 1.0,
            state_dim: 2,
            noise_dim: 1,
            drift: vec!["0".into(), "0".into()],
            diffusion: vec!["0".into(), "0".into()],
            driver: "0".into(),
            terminal: "0".into(),
            cost: "sqrt(x1^2 + x2^2)".into(),
            impulse_map: vec!["x1".into(), "x2".into()],
            actions: vec![vec![0.0]],
            impulses: vec![vec![0.0]],
            constants: Constants::default(),
        })
        .unwrap();
        assert_eq!(apply_impulse(&s, 0.2, &[3.0, 4.0], 0).unwrap(), (vec![3.0, 4.0], 5.0));
    }

    #[test]
    fn concat_examples() {
        let s = spec_with("0", "0", "x", "1", &[1.0, 2.0]);
        let u1 = ImpulseSchedule::from_pairs(&s, &[(0.5, 0)]).unwrap();
        let u2 = ImpulseSchedule::from_pairs(&s, &[(0.2, 1)]).unwrap();
        let c = concat_controls(&u1, &u2);
        assert_eq!(
            c.interventions(),
            &[Intervention { time: 0.5, impulse: 0 }, Intervention { time: 0.5, impulse: 1 }]
        );
        let e = ImpulseSchedule::empty();
        assert_eq!(concat_controls(&e, &u2), u2);
        let u3 = ImpulseSchedule::from_pairs(&s, &[(0.1, 0)]).unwrap();
        assert_eq!(concat_controls(&u3, &e), u3);
    }

    #[test]
    fn schedule_validation() {
        let s = spec_with("0", "0", "x", "1", &[1.0]);
        assert!(ImpulseSchedule::from_pairs(&s, &[(0.5, 0), (0.2, 0)]).is_err());
        assert_eq!(
            ImpulseSchedule::from_pairs(&s, &[(0.5, 4)]),
            Err(Error::NotInImpulseSet(4))
        );
        assert!(ImpulseSchedule::from_pairs(&s, &[(1.5, 0)]).is_err());
    }

    #[test]
    fn frozen_dynamics() {
        let s = spec_with("0", "0", "x + 2", "0.3*x", &[0.0]);
        let b = simulate_paths(&s, 0.0, &[1.0], &PolicyPair::constant(0), 4, 10, 1).unwrap();
        assert!(b.states.iter().all(|&v| v == 1.0));
        assert!(b.xi_total.iter().all(|&v| v == 0.0));

        let sched = ImpulseSchedule::from_pairs(&s, &[(0.5, 0)]).unwrap();
        let b = simulate_paths(&s, 0.0, &[1.0], &PolicyPair::schedule(sched, 0), 3, 10, 1).unwrap();
        for p in 0..3 {
            for i in 0..=10 {
                let want = if i < 5 { 1.0 } else { 3.0 };
                assert_eq!(b.state(p, i), &[want]);
                // càglàd: the cost is not visible at the impulse time itself
                let xi = if i <= 5 { 0.0 } else { 0.3 };
                assert!((b.xi_at(p, i) - xi).abs() < 1e-15);
            }
            assert_eq!(b.events[p][0].pre_state, vec![1.0]);
            assert!((b.xi_total[p] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn moment_examples() {
        let s = spec_with("0", "0", "b", "0.1", &[0.0]);
        let b = simulate_paths(&s, 0.0, &[2.0], &PolicyPair::constant(0), 5, 8, 3).unwrap();
        let m = b.estimate_moment_bound(2.0);
        assert_eq!((m.estimate, m.stderr), (4.0, 0.0));
        let sched = ImpulseSchedule::from_pairs(&s, &[(0.0, 0)]).unwrap();
        let b = simulate_paths(&s, 0.0, &[2.0], &PolicyPair::schedule(sched, 0), 5, 8, 3).unwrap();
        assert!(b.states.iter().all(|&v| v == 0.0));
        assert_eq!(b.estimate_moment_bound(2.0).estimate, 4.0);
    }

    #[test]
    fn euler_converges_to_exponential() {
        let s = spec_with("x", "0", "x", "1", &[0.0]);
        let err = |m: usize| {
            let b = simulate_paths(&s, 0.0, &[1.0], &PolicyPair::constant(0), 1, m, 0).unwrap();
            (b.state(0, m)[0] - std::f64::consts::E).abs()
        };
        let (e1, e2) = (err(100), err(200));
        assert!(e1 < 0.02 && e2 < e1);
        assert!((e1 / e2 - 2.0).abs() < 0.05);
    }

    #[test]
    fn feedback_fires_once_per_node() {
        let s = spec_with("0", "0", "x + 1", "0.5", &[1.0]);
        let rule: ImpulseRule = Arc::new(|_, _| Some(0));
        let pol = PolicyPair::new(ImpulsePolicy::Feedback(rule), ContinuousPolicy::Constant(0));
        let b = simulate_paths(&s, 0.0, &[0.0], &pol, 1, 4, 0).unwrap();
        assert_eq!(b.impulse_counts(), vec![5]);
        assert_eq!(b.state(0, 4), &[5.0]);
        assert!((b.xi_total[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let s = spec_with("exp(exp(x))", "0", "x", "1", &[0.0]);
        let r = simulate_paths(&s, 0.0, &[3.0], &PolicyPair::constant(0), 1, 4, 0);
        assert!(matches!(r, Err(Error::NonFiniteState { path: 0, .. })));
    }

    #[test]
    fn antithetic_pairs_mirror() {
        let s = spec_with("0", "1", "x", "1", &[0.0]);
        let mut setup = SimSetup::new(0.0, 1.0, 4, 5, 9);
        setup.antithetic = true;
        let b = simulate_window(&s, &setup, Starts::Point(&[0.0]), &PolicyPair::constant(0)).unwrap();
        for i in 0..5 {
            assert_eq!(b.increment(0, i)[0], -b.increment(1, i)[0]);
        }
    }

    #[test]
    fn csv_layout() {
        let s = spec_with("0", "0", "x + b", "1", &[2.0]);
        let sched = ImpulseSchedule::from_pairs(&s, &[(0.5, 0)]).unwrap();
        let b = simulate_paths(&s, 0.0, &[1.0], &PolicyPair::schedule(sched, 0), 1, 2, 0).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,step,t,x_1,xi_cumulative,impulse_flag,impulse_value");
        assert_eq!(lines[2], "0,1,0.5,3.0,1.0,1,2.0");
        assert_eq!(lines.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cost_accounting_and_confinement(
            x0 in -3.0f64..3.0,
            times in proptest::collection::vec(0.0f64..1.0, 0..6),
            seed in 0u64..1000,
        ) {
            // reset to 0 or shrink by half; both satisfy |Γ| ≤ max(1, |x|)
            let s = spec_with("0", "0", "b*x", "0.2 + 0.1*abs(x)", &[0.0, 0.5]);
            let mut times = times;
            times.sort_by(f64::total_cmp);
            let pairs: Vec<(f64, usize)> = times.iter().enumerate().map(|(k, &t)| (t, k % 2)).collect();
            let sched = ImpulseSchedule::from_pairs(&s, &pairs).unwrap();
            let b = simulate_paths(&s, 0.0, &[x0], &PolicyPair::schedule(sched, 0), 2, 7, seed).unwrap();
            for p in 0..2 {
                let total: f64 = b.events[p]
                    .iter()
                    .map(|e| s.cost(e.time, &e.pre_state, s.impulse(e.impulse).unwrap()).unwrap())
                    .sum();
                prop_assert_eq!(total, b.xi_total[p]);
                prop_assert_eq!(b.xi_at(p, 0), 0.0);
                for i in 0..7 {
                    prop_assert!(b.xi_at(p, i) <= b.xi_at(p, i + 1));
                    prop_assert!(b.state(p, i)[0].abs() <= 1f64.max(x0.abs()));
                }
            }
        }

        #[test]
        fn deterministic_across_pools(seed in 0u64..1000) {
            let s = spec_with("-x", "0.7", "x", "1", &[0.0]);
            let run = |threads| {
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                    simulate_paths(&s, 0.0, &[0.5], &PolicyPair::constant(0), 33, 6, seed).unwrap()
                })
            };
            prop_assert_eq!(run(1), run(4));
        }
    }
}

//! Monte-Carlo environment: GBM paths driven by reflection policies,
//! discounted rewards, randomized stopping times and the residual entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{ClosedFormSolution, StoppingSolution};
use crate::boundary::Boundary;
use crate::model::Model;
use crate::numerics::compensated_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("dt must lie in (0, 1e-2] (got {0})")]
    TimeStep(f64),
    #[error("horizon must be a positive multiple of dt (horizon {horizon}, dt {dt})")]
    Horizon { horizon: f64, dt: f64 },
    #[error("n_paths must be positive (and even with antithetic draws)")]
    Paths,
    #[error("initial state out of range: x0 = {x0}, y0 = {y0}")]
    Initial { x0: f64, y0: f64 },
}

/// A reflection policy: a nondecreasing level `x -> g(x)` in `[0, 1]`.
///
/// The simulator relies on monotonicity: `Y_t = min(y0, g(min_{s<=t} X_s))`.
pub trait Policy: Sync {
    fn level(&self, x: f64) -> f64;
}

impl Policy for Boundary<f64> {
    fn level(&self, x: f64) -> f64 {
        self.eval(x)
    }
}

impl Policy for ClosedFormSolution<f64> {
    fn level(&self, x: f64) -> f64 {
        self.g(x.max(0.0))
    }
}

/// `g = 1`: never act.
#[derive(Debug, Clone, Copy)]
pub struct NeverAct;

impl Policy for NeverAct {
    fn level(&self, _x: f64) -> f64 {
        1.0
    }
}

/// Constant level.
#[derive(Debug, Clone, Copy)]
pub struct Flat(pub f64);

impl Policy for Flat {
    fn level(&self, _x: f64) -> f64 {
        self.0
    }
}

/// Hitting rule: all mass is released once `X <= at`.
#[derive(Debug, Clone, Copy)]
pub struct Threshold {
    pub at: f64,
}

impl Policy for Threshold {
    fn level(&self, x: f64) -> f64 {
        if x > self.at {
            1.0
        } else {
            0.0
        }
    }
}

/// Mass released gradually while `X` falls from `at + width` to `at - width`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedThreshold {
    pub at: f64,
    pub width: f64,
}

impl Policy for SmoothedThreshold {
    fn level(&self, x: f64) -> f64 {
        ((x - (self.at - self.width)) / (2.0 * self.width)).clamp(0.0, 1.0)
    }
}

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 20.0,
            n_paths: 10_000,
            seed: 42,
            antithetic: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return Err(SimError::TimeStep(self.dt));
        }
        let n = self.horizon / self.dt;
        if !(self.horizon > 0.0) || (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(SimError::Horizon {
                horizon: self.horizon,
                dt: self.dt,
            });
        }
        if self.n_paths == 0 || (self.antithetic && self.n_paths % 2 == 1) {
            return Err(SimError::Paths);
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Upper bound on `|int_T^inf e^{-rho t}((X^theta - rho kappa) Y - lambda Y log Y) dt|`
/// for `Y <= y0`: `y0 P x0^theta e^{-T/P} + (kappa y0 + lambda/(rho e)) e^{-rho T}`.
pub fn tail_bound(model: &Model<f64>, x0: f64, y0: f64, horizon: f64) -> f64 {
    let p = model.resolvent_constant();
    y0 * p * x0.powf(model.theta()) * (-horizon / p).exp()
        + (model.kappa() * y0 + model.lambda() / (model.rho() * std::f64::consts::E)) * (-model.rho() * horizon).exp()
}

/// Exact log-normal step `x exp((mu - sigma^2/2) dt + sigma sqrt(dt) z)`.
pub fn step_gbm(model: &Model<f64>, x: f64, dt: f64, z: f64) -> f64 {
    let s = model.sigma();
    x * ((model.mu() - 0.5 * s * s) * dt + s * dt.sqrt() * z).exp()
}

/// Counter-based substream: key `seed`, stream `stream`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-step constants shared by every path of one configuration.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub drift: f64,
    pub vol: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Exact discount weight of panel `k`: `e^{-rho k dt}(1 - e^{-rho dt})/rho`.
    pub weights: Vec<f64>,
}

impl Stepper {
    pub fn new(model: &Model<f64>, cfg: &SimConfig) -> Self {
        let s = model.sigma();
        let n = cfg.n_steps();
        let rho = model.rho();
        let w0 = -(-rho * cfg.dt).exp_m1() / rho;
        let weights = (0..n).map(|k| w0 * (-rho * k as f64 * cfg.dt).exp()).collect();
        Self {
            drift: (model.mu() - 0.5 * s * s) * cfg.dt,
            vol: s * cfg.dt.sqrt(),
            dt: cfg.dt,
            n_steps: n,
            weights,
        }
    }

    /// Fills `z` with the normal increments of one path (`sign = -1` gives
    /// the antithetic partner).
    pub fn draw(&self, rng: &mut ChaCha8Rng, sign: f64, z: &mut Vec<f64>) {
        z.clear();
        z.extend((1..self.n_steps).map(|_| sign * rng.sample::<f64, _>(StandardNormal)));
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x_path: Vec<f64>,
    pub y_path: Vec<f64>,
    pub xi_path: Vec<f64>,
    pub reward: f64,
}

/// Runs one path given its increments; `observe(k, x, y)` is called at
/// every grid time `k = 0..n-1` after the reflection.
fn run_path<P: Policy + ?Sized, O: FnMut(usize, f64, f64)>(
    model: &Model<f64>,
    policy: &P,
    st: &Stepper,
    x0: f64,
    y0: f64,
    z: &[f64],
    mut observe: O,
) -> f64 {
    let theta = model.theta();
    let rk = model.rho() * model.kappa();
    let lam = model.lambda();
    let x0t = x0.powf(theta);
    let mut log_x = 0.0;
    let mut log_min = 0.0;
    let mut y = y0.min(policy.level(x0));
    let coef = |y: f64| -rk * y - lam * if y > 0.0 { y * y.ln() } else { 0.0 };
    let mut c0 = coef(y);
    let mut terms = Vec::with_capacity(st.n_steps);
    observe(0, x0, y);
    terms.push(st.weights[0] * (x0t * y + c0));
    for k in 1..st.n_steps {
        log_x += st.drift + st.vol * z[k - 1];
        if x0 > 0.0 && log_x < log_min {
            log_min = log_x;
            let ny = policy.level(x0 * log_x.exp());
            if ny < y {
                y = ny;
                c0 = coef(y);
            }
        }
        let xt = if x0 > 0.0 { x0t * (theta * log_x).exp() } else { 0.0 };
        observe(k, x0 * log_x.exp(), y);
        terms.push(st.weights[k] * (xt * y + c0));
    }
    compensated_sum(&terms)
}

/// Simulates and records one path; `path_index` selects the substream.
pub fn simulate_policy<P: Policy + ?Sized>(
    model: &Model<f64>,
    policy: &P,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    check_initial(x0, y0)?;
    let st = Stepper::new(model, cfg);
    let (stream, sign) = stream_of(cfg, path_index);
    let mut z = Vec::new();
    st.draw(&mut substream(cfg.seed, stream), sign, &mut z);
    let n = st.n_steps;
    let mut t = Trajectory {
        times: Vec::with_capacity(n),
        x_path: Vec::with_capacity(n),
        y_path: Vec::with_capacity(n),
        xi_path: Vec::with_capacity(n),
        reward: 0.0,
    };
    t.reward = run_path(model, policy, &st, x0, y0, &z, |k, x, y| {
        t.times.push(k as f64 * st.dt);
        t.x_path.push(x);
        t.y_path.push(y);
        t.xi_path.push(y0 - y);
    });
    Ok(t)
}

fn check_initial(x0: f64, y0: f64) -> Result<(), SimError> {
    if !(x0 >= 0.0 && x0.is_finite() && (0.0..=1.0).contains(&y0)) {
        return Err(SimError::Initial { x0, y0 });
    }
    Ok(())
}

fn stream_of(cfg: &SimConfig, path_index: u64) -> (u64, f64) {
    if cfg.antithetic {
        (path_index / 2, if path_index.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (path_index, 1.0)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl Estimate {
    /// Mean and standard error of i.i.d. samples, summed in order.
    pub fn from_samples(samples: &[f64], n_paths: usize) -> Self {
        let n = samples.len() as f64;
        let mean = compensated_sum(samples) / n;
        let dev: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if samples.len() > 1 { compensated_sum(&dev) / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            stderr: (var / n).sqrt(),
            n_paths,
        }
    }
}

/// Monte-Carlo value of the reflection policy started from `(x0, y0)`.
/// Independent of the number of worker threads.
pub fn estimate_value<P: Policy + ?Sized>(
    model: &Model<f64>,
    policy: &P,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
) -> Result<Estimate, SimError> {
    cfg.validate()?;
    check_initial(x0, y0)?;
    if y0 == 0.0 {
        return Ok(Estimate {
            mean: 0.0,
            stderr: 0.0,
            n_paths: cfg.n_paths,
        });
    }
    let st = Stepper::new(model, cfg);
    let units = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let samples: Vec<f64> = (0..units as u64)
        .into_par_iter()
        .map_init(Vec::new, |z, u| {
            let mut rng = substream(cfg.seed, u);
            st.draw(&mut rng, 1.0, z);
            let r = run_path(model, policy, &st, x0, y0, z, |_, _, _| {});
            if cfg.antithetic {
                z.iter_mut().for_each(|v| *v = -*v);
                0.5 * (r + run_path(model, policy, &st, x0, y0, z, |_, _, _| {}))
            } else {
                r
            }
        })
        .collect();
    Ok(Estimate::from_samples(&samples, cfg.n_paths))
}

/// Randomized stopping time `inf{k : xi_k > u}`; `None` if it never fires.
pub fn sample_randomized_stop(xi_path: &[f64], u: f64) -> Option<usize> {
    xi_path.iter().position(|&xi| xi > u)
}

/// Kolmogorov-Smirnov distance between the empirical law of the randomized
/// stopping index over `uniforms` and `k -> xi_k`.
pub fn randomized_stop_ks(xi_path: &[f64], uniforms: &[f64]) -> f64 {
    let n = xi_path.len();
    let mut counts = vec![0usize; n];
    for &u in uniforms {
        if let Some(k) = sample_randomized_stop(xi_path, u) {
            counts[k] += 1;
        }
    }
    let total = uniforms.len() as f64;
    let mut cum = 0usize;
    let mut ks: f64 = 0.0;
    for k in 0..n {
        let before = cum as f64 / total;
        cum += counts[k];
        let after = cum as f64 / total;
        let prev_xi = if k == 0 { 0.0 } else { xi_path[k - 1].clamp(0.0, 1.0) };
        ks = ks.max((after - xi_path[k].clamp(0.0, 1.0)).abs()).max((before - prev_xi).abs());
    }
    ks
}

/// Cumulative residual entropy `-int_0^T e^{-rho t}(1 - xi_t) log(1 - xi_t) dt`
/// for panel-start values `xi_path[k]` at `t = k dt`, with exact discount
/// weights per panel.
pub fn cre(xi_path: &[f64], rho: f64, dt: f64) -> f64 {
    let w0 = -(-rho * dt).exp_m1() / rho;
    let terms: Vec<f64> = xi_path
        .iter()
        .enumerate()
        .map(|(k, &xi)| {
            let s = 1.0 - xi;
            let h = if s > 0.0 && s < 1.0 { -s * s.ln() } else { 0.0 };
            w0 * (-rho * k as f64 * dt).exp() * h
        })
        .collect();
    compensated_sum(&terms)
}

/// One row of the randomized-control comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRow {
    pub control: String,
    pub estimate: Estimate,
    /// Classical optimal value `V(x0)`.
    pub optimal: f64,
    /// `estimate <= V + 3 stderr`.
    pub dominated: bool,
}

/// Evaluates a family of hitting and smoothed-threshold controls with the
/// entropy term switched off and compares each with the classical value.
pub fn no_exploration_benefit_test(model: &Model<f64>, x0: f64, cfg: &SimConfig) -> Result<Vec<ExplorationRow>, SimError> {
    let m0 = model.with_lambda(0.0).expect("lambda = 0 is admissible");
    let stop = StoppingSolution::new(&m0);
    let b = stop.b_star();
    let v = stop.value(x0).map_err(|_| SimError::Initial { x0, y0: 1.0 })?;
    let mut controls: Vec<(String, Box<dyn Policy>)> = vec![
        ("hitting b*".into(), Box::new(Threshold { at: b })),
        ("hitting 0.75 b*".into(), Box::new(Threshold { at: 0.75 * b })),
        ("hitting 1.25 b*".into(), Box::new(Threshold { at: 1.25 * b })),
        ("hitting 1.5 b*".into(), Box::new(Threshold { at: 1.5 * b })),
    ];
    for w in [0.1, 0.25, 0.5] {
        controls.push((format!("smoothed b* +-{w}b*"), Box::new(SmoothedThreshold { at: b, width: w * b })));
    }
    controls.push(("never".into(), Box::new(NeverAct)));
    controls
        .into_iter()
        .map(|(name, p)| {
            let e = estimate_value(&m0, p.as_ref(), x0, 1.0, cfg)?;
            Ok(ExplorationRow {
                control: name,
                dominated: e.mean <= v + 3.0 * e.stderr,
                estimate: e,
                optimal: v,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn model() -> Model<f64> {
        ModelParams::reference().validate().unwrap()
    }

    fn small(n_paths: usize) -> SimConfig {
        SimConfig {
            dt: 1e-2,
            horizon: 20.0,
            n_paths,
            seed: 7,
            antithetic: false,
        }
    }

    #[test]
    fn drift_cancellation() {
        let mut p = ModelParams::reference();
        p.mu = 0.02;
        p.sigma = 0.2;
        let m = p.validate().unwrap();
        assert_eq!(step_gbm(&m, 1.7, 0.01, 0.0), 1.7);
    }

    #[test]
    fn lognormal_mean() {
        let m = model();
        let mut rng = substream(1, 0);
        let n = 1_000_000;
        let dt = 0.01;
        let xs: Vec<f64> = (0..n).map(|_| step_gbm(&m, 1.0, dt, rng.sample(StandardNormal))).collect();
        let e = Estimate::from_samples(&xs, n);
        assert!((e.mean - (m.mu() * dt).exp()).abs() < 4.0 * e.stderr);
    }

    #[test]
    fn never_act_keeps_mass() {
        let t = simulate_policy(&model(), &NeverAct, 2.0, 0.7, &small(1), 3).unwrap();
        assert!(t.y_path.iter().all(|&y| y == 0.7));
        assert!(t.xi_path.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_policy_clamps_once() {
        let t = simulate_policy(&model(), &Flat(0.4), 2.0, 0.7, &small(1), 3).unwrap();
        assert!(t.y_path.iter().all(|&y| y == 0.4));
        assert!((t.xi_path[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn reflection_invariant_and_reproducibility() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let cfg = small(1);
        let t = simulate_policy(&m, &s, 3.0, 1.0, &cfg, 11).unwrap();
        let mut run_min = f64::INFINITY;
        for k in 0..t.x_path.len() {
            run_min = run_min.min(s.g(t.x_path[k]));
            assert_eq!(t.y_path[k], run_min.min(1.0));
        }
        for w in t.xi_path.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(t, simulate_policy(&m, &s, 3.0, 1.0, &cfg, 11).unwrap());
        // The recording path and the estimator agree on the reward.
        let one = SimConfig { n_paths: 1, seed: cfg.seed, ..cfg };
        let t0 = simulate_policy(&m, &s, 3.0, 1.0, &one, 0).unwrap();
        assert_eq!(estimate_value(&m, &s, 3.0, 1.0, &one).unwrap().mean, t0.reward);
    }

    #[test]
    fn zero_mass_is_exact() {
        let e = estimate_value(&model(), &NeverAct, 2.0, 0.0, &small(10)).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let cfg = small(64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| estimate_value(&m, &s, 2.0, 1.0, &cfg).unwrap());
        let b = three.install(|| estimate_value(&m, &s, 2.0, 1.0, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn stderr_scales_with_paths() {
        let m = model();
        let mut ratios = Vec::new();
        for rep in 0..30 {
            let a = estimate_value(&m, &NeverAct, 2.0, 1.0, &SimConfig { seed: rep, ..small(200) }).unwrap();
            let b = estimate_value(&m, &NeverAct, 2.0, 1.0, &SimConfig { seed: 1000 + rep, ..small(400) }).unwrap();
            ratios.push(b.stderr / a.stderr);
        }
        let r = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((r - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{r}");
    }

    #[test]
    fn antithetic_pairs() {
        let m = model();
        let cfg = SimConfig { antithetic: true, ..small(100) };
        let e = estimate_value(&m, &NeverAct, 2.0, 1.0, &cfg).unwrap();
        let t0 = simulate_policy(&m, &NeverAct, 2.0, 1.0, &cfg, 0).unwrap();
        let t1 = simulate_policy(&m, &NeverAct, 2.0, 1.0, &cfg, 1).unwrap();
        let d = Stepper::new(&m, &cfg).drift;
        let (l0, l1) = ((t0.x_path[1] / 2.0).ln() - d, (t1.x_path[1] / 2.0).ln() - d);
        assert!((l0 + l1).abs() < 1e-12 && l0.abs() > 1e-6);
        assert!(e.stderr > 0.0);
        assert!(SimConfig { n_paths: 3, ..cfg }.validate().is_err());
    }

    #[test]
    fn randomized_stop_basics() {
        let xi: Vec<f64> = (0..100).map(|k| if k >= 40 { 1.0 } else { 0.0 }).collect();
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(sample_randomized_stop(&xi, u), Some(40));
        }
        assert_eq!(sample_randomized_stop(&[0.0; 10], 0.2), None);
        assert_eq!(cre(&xi, 0.5, 0.01), 0.0);
    }

    #[test]
    fn cre_of_constant_path() {
        let (rho, dt, n) = (0.5, 0.01, 2000);
        let xi = vec![1.0 - (-1f64).exp(); n];
        let want = (1.0 - (-rho * n as f64 * dt).exp()) / rho * (-1f64).exp();
        assert!((cre(&xi, rho, dt) - want).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_controls_horizon_doubling() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let a = estimate_value(&m, &s, 2.0, 1.0, &SimConfig { horizon: 10.0, ..small(200) }).unwrap();
        let b = estimate_value(&m, &s, 2.0, 1.0, &SimConfig { horizon: 20.0, ..small(200) }).unwrap();
        // Same seeds: the first half of each path coincides.
        assert!((a.mean - b.mean).abs() <= tail_bound(&m, 2.0, 1.0, 10.0));
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { dt: 0.02, ..small(1) }.validate().is_err());
        assert!(SimConfig { horizon: 0.0, ..small(1) }.validate().is_err());
        assert!(SimConfig { n_paths: 0, ..small(1) }.validate().is_err());
        assert!(small(1).validate().is_ok());
    }
}

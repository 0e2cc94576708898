//! Model-free boundary learning: the zeroth-order search for the starting
//! mass level and sample-based policy iteration on a value grid.
//!
//! The learner only talks to a [`ValueSource`]; the Monte-Carlo source owns
//! the model as its environment, the exact source stands in for noise-free
//! values.

use rayon::prelude::*;
use thiserror::Error;

use crate::boundary::{Boundary, BoundaryError, PolicyValue};
use crate::model::{Grid, Model};
use crate::numerics::isotonic_nondecreasing;
use crate::policy_iteration::{distances, IterationReport};
use crate::simulator::{estimate_value, substream, NeverAct, SimConfig, SimError, Stepper};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("iterate pinned at the clamp for {0} consecutive steps")]
    Diverged(usize),
    #[error("node ({i}, {j}) has no neighbours on both sides")]
    BoundaryNode { i: usize, j: usize },
    #[error("value oracle failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

const CLAMP: f64 = 1e-6;
const PINNED_LIMIT: usize = 50;

/// Settings of the zeroth-order search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitMassConfig {
    pub eta0: f64,
    pub c0: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for InitMassConfig {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            c0: 0.01,
            max_iters: 200,
            grad_tol: 1e-6,
        }
    }
}

/// Iterates `y_0, y_1, ...` and the two-point gradients used at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct InitMassTrace {
    pub iterates: Vec<f64>,
    pub gradients: Vec<f64>,
    pub converged: bool,
}

impl InitMassTrace {
    pub fn estimate(&self) -> f64 {
        *self.iterates.last().expect("trace starts with y_init")
    }

    /// Iterate after `i` steps; a run that stopped early keeps its last one.
    pub fn at(&self, i: usize) -> f64 {
        self.iterates[i.min(self.iterates.len() - 1)]
    }
}

/// Two-point zeroth-order descent on `f = -J` where `value(y)` returns the
/// reward of starting at `x = 0` with mass `y` and never acting.
pub fn learn_initial_mass<F>(value: F, y_init: f64, cfg: &InitMassConfig) -> Result<InitMassTrace, LearnError>
where
    F: Fn(f64) -> Result<f64, LearnError>,
{
    if !(y_init > 0.0 && y_init < 1.0) {
        return Err(LearnError::Config(format!("y_init must lie in (0, 1), got {y_init}")));
    }
    if !(cfg.eta0 > 0.0 && cfg.c0 > 0.0 && cfg.grad_tol >= 0.0) {
        return Err(LearnError::Config("eta0 and c0 must be positive".into()));
    }
    let mut y = y_init;
    let mut trace = InitMassTrace {
        iterates: vec![y],
        gradients: Vec::new(),
        converged: false,
    };
    let mut pinned = 0;
    for i in 1..=cfg.max_iters {
        let it = i as f64;
        let eps = y.min(1.0 - y).min(cfg.c0 / it);
        let grad = -(value(y + eps)? - value(y - eps)?) / (2.0 * eps);
        trace.gradients.push(grad);
        if grad.abs() < cfg.grad_tol {
            trace.converged = true;
            break;
        }
        let raw = y - cfg.eta0 / it.sqrt() * grad;
        y = raw.clamp(CLAMP, 1.0 - CLAMP);
        trace.iterates.push(y);
        pinned = if y != raw { pinned + 1 } else { 0 };
        if pinned >= PINNED_LIMIT {
            return Err(LearnError::Diverged(pinned));
        }
    }
    Ok(trace)
}

/// `y -> J(0, y; xi = 0)` from the simulator.
pub fn zero_state_oracle(model: Model<f64>, sim: SimConfig) -> impl Fn(f64) -> Result<f64, LearnError> {
    move |y| Ok(estimate_value(&model, &NeverAct, 0.0, y, &sim)?.mean)
}

/// Settings of sample-based policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub grid: Grid<f64>,
    pub n_paths_per_node: usize,
    pub outer_iters: usize,
    /// Time step, horizon, seed and antithetic pairing; `n_paths` is
    /// ignored in favour of `n_paths_per_node`.
    pub sim: SimConfig,
    pub crn: bool,
    /// Keep `g_k(x)` unless the cross-difference there is below
    /// `-noise_gate * stderr`.
    pub noise_gate: f64,
}

impl LearnConfig {
    /// Grid `0.02 x 0.02` up to `x = 5`, `M = 20`, ten outer iterations.
    pub fn reference(seed: u64) -> Self {
        Self {
            grid: Grid::reference(),
            n_paths_per_node: 20,
            outer_iters: 10,
            sim: SimConfig {
                dt: 1e-2,
                horizon: 20.0,
                n_paths: 20,
                seed,
                antithetic: false,
            },
            crn: true,
            noise_gate: 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_paths_per_node < 2 {
            return Err(LearnError::Config("need at least two paths per node".into()));
        }
        if self.outer_iters == 0 {
            return Err(LearnError::Config("outer_iters must be positive".into()));
        }
        if !(self.noise_gate >= 0.0) {
            return Err(LearnError::Config("noise_gate must be nonnegative".into()));
        }
        if self.grid.y_nodes.first().is_none_or(|&y| y <= 0.0) || self.grid.x_nodes.len() < 3 {
            return Err(LearnError::Config("grid needs >= 3 x-nodes and positive y-nodes".into()));
        }
        SimConfig {
            n_paths: self.n_paths_per_node,
            ..self.sim
        }
        .validate()?;
        if self.sim.antithetic && self.n_paths_per_node < 4 {
            return Err(LearnError::Config("antithetic sampling needs at least two pairs".into()));
        }
        Ok(())
    }
}

/// Sample means over the grid plus the cross-differences used by the
/// improvement step.
///
/// `cross[i][j]` approximates `u_xy` at `(x_i, y_j - dy/2)` from the
/// y-increment `u(., y_j) - u(., y_{j-1})` (with `u(., 0) = 0`) differenced
/// centrally in x, backward at the last node. `top_cross[i]` does the same
/// for the increment between `top_lower[i]` and the boundary height
/// `top_levels[i] = g(x_i)`. Row 0 is `NaN`. Standard errors are taken over
/// per-path differences, so they include the correlation that common random
/// numbers introduce.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGridEstimate {
    pub x_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub stderrs: Vec<Vec<f64>>,
    pub cross: Vec<Vec<f64>>,
    pub cross_stderr: Vec<Vec<f64>>,
    pub top_levels: Vec<f64>,
    pub top_lower: Vec<f64>,
    pub top_cross: Vec<f64>,
    pub top_cross_stderr: Vec<f64>,
}

impl ValueGridEstimate {
    /// Noise-free values on a plain grid, without the top stencil.
    pub fn from_values(x_nodes: Vec<f64>, y_nodes: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let cross = left_cross(&x_nodes, &y_nodes, &values);
        let zeros = vec![vec![0.0; y_nodes.len()]; x_nodes.len()];
        Self {
            x_nodes,
            y_nodes,
            values,
            stderrs: zeros.clone(),
            cross,
            cross_stderr: zeros,
            top_levels: Vec::new(),
            top_lower: Vec::new(),
            top_cross: Vec::new(),
            top_cross_stderr: Vec::new(),
        }
    }
}

/// Smallest y-extent of the top stencil, in grid cells.
const TOP_MIN_WIDTH: f64 = 0.5;

/// Where every sample is valued: row `r` holds the grid y-nodes followed by
/// `g(x_{r-1}), g(x_r), g(x_{r+1})` (indices clamped to the grid).
struct Layout {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tops: Vec<f64>,
    lower: Vec<f64>,
}

impl Layout {
    fn new(boundary: &Boundary<f64>, grid: &Grid<f64>) -> Self {
        let ys = grid.y_nodes.clone();
        let dy = ys[0];
        let tops: Vec<f64> = grid.x_nodes.iter().map(|&x| boundary.eval(x)).collect();
        let lower = tops
            .iter()
            .map(|&t| ys.iter().copied().take_while(|&y| y <= t - TOP_MIN_WIDTH * dy).last().unwrap_or(0.0))
            .collect();
        Self {
            xs: grid.x_nodes.clone(),
            ys,
            tops,
            lower,
        }
    }

    fn levels(&self, r: usize) -> Vec<f64> {
        let last = self.xs.len() - 1;
        let mut l = self.ys.clone();
        l.extend([self.tops[r.saturating_sub(1)], self.tops[r], self.tops[(r + 1).min(last)]]);
        l
    }

    fn stencil(&self, i: usize) -> (usize, usize) {
        (i - 1, (i + 1).min(self.xs.len() - 1))
    }

    /// Value of row `r` at the grid level `y` (or 0 below the first node).
    fn at(&self, rows: &[Vec<f64>], r: usize, y: f64) -> f64 {
        match self.ys.iter().position(|&v| v == y) {
            Some(j) => rows[r][j],
            None => 0.0,
        }
    }

    /// Flattened values, half-level cross-differences and top
    /// cross-differences of one sample.
    fn derive(&self, rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ny = self.ys.len();
        let values: Vec<f64> = rows.iter().flat_map(|r| r[..ny].iter().copied()).collect();
        let plain: Vec<Vec<f64>> = rows.iter().map(|r| r[..ny].to_vec()).collect();
        let cross = left_cross(&self.xs, &self.ys, &plain).concat();
        let top = (0..self.xs.len())
            .map(|i| {
                if i == 0 {
                    return f64::NAN;
                }
                let (lo, hi) = self.stencil(i);
                // Column of row `lo` / `hi` that holds g(x_i).
                let (clo, chi) = (ny + 2, if hi == i { ny + 1 } else { ny });
                let yl = self.lower[i];
                let dlo = rows[lo][clo] - self.at(rows, lo, yl);
                let dhi = rows[hi][chi] - self.at(rows, hi, yl);
                (dhi - dlo) / ((self.xs[hi] - self.xs[lo]) * (self.tops[i] - yl))
            })
            .collect();
        (values, cross, top)
    }

    fn finish(self, vals: (Vec<f64>, Vec<f64>), cross: (Vec<f64>, Vec<f64>), top: (Vec<f64>, Vec<f64>)) -> ValueGridEstimate {
        let ny = self.ys.len();
        ValueGridEstimate {
            values: reshape(&vals.0, ny),
            stderrs: reshape(&vals.1, ny),
            cross: reshape(&cross.0, ny),
            cross_stderr: reshape(&cross.1, ny),
            top_cross: top.0,
            top_cross_stderr: top.1,
            x_nodes: self.xs,
            y_nodes: self.ys,
            top_levels: self.tops,
            top_lower: self.lower,
        }
    }
}

fn left_cross(xs: &[f64], ys: &[f64], u: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let nx = xs.len();
    (0..nx)
        .map(|i| {
            if i == 0 {
                return vec![f64::NAN; ys.len()];
            }
            let (lo, hi) = (i - 1, (i + 1).min(nx - 1));
            (0..ys.len())
                .map(|j| {
                    let (ylo, dlo, dhi) = if j == 0 {
                        (0.0, u[lo][0], u[hi][0])
                    } else {
                        (ys[j - 1], u[lo][j] - u[lo][j - 1], u[hi][j] - u[hi][j - 1])
                    };
                    (dhi - dlo) / ((xs[hi] - xs[lo]) * (ys[j] - ylo))
                })
                .collect()
        })
        .collect()
}

fn reshape(flat: &[f64], ny: usize) -> Vec<Vec<f64>> {
    flat.chunks(ny).map(|c| c.to_vec()).collect()
}

/// Central cross-difference
/// `[u(i+1,j+1) - u(i+1,j-1) - u(i-1,j+1) + u(i-1,j-1)] / (4 dx dy)`.
pub fn finite_diff_mixed(est: &ValueGridEstimate, i: usize, j: usize) -> Result<f64, LearnError> {
    let (nx, ny) = (est.x_nodes.len(), est.y_nodes.len());
    if i == 0 || j == 0 || i + 1 >= nx || j + 1 >= ny {
        return Err(LearnError::BoundaryNode { i, j });
    }
    let u = &est.values;
    let dx = 0.5 * (est.x_nodes[i + 1] - est.x_nodes[i - 1]);
    let dy = 0.5 * (est.y_nodes[j + 1] - est.y_nodes[j - 1]);
    Ok((u[i + 1][j + 1] - u[i + 1][j - 1] - u[i - 1][j + 1] + u[i - 1][j - 1]) / (4.0 * dx * dy))
}

/// Anything that can value a reflection boundary on a grid.
pub trait ValueSource: Sync {
    /// `round` distinguishes the outer iterations so that each one draws
    /// fresh randomness.
    fn estimate(&self, boundary: &Boundary<f64>, grid: &Grid<f64>, round: u64) -> Result<ValueGridEstimate, LearnError>;

    /// Exact sources are read without a noise gate.
    fn is_exact(&self) -> bool {
        false
    }
}

/// Noise-free values of the reflection policy.
#[derive(Debug, Clone)]
pub struct ExactValues {
    pub model: Model<f64>,
}

impl ValueSource for ExactValues {
    fn estimate(&self, boundary: &Boundary<f64>, grid: &Grid<f64>, _round: u64) -> Result<ValueGridEstimate, LearnError> {
        let pv = PolicyValue::new(&self.model, boundary.clone())?;
        let layout = Layout::new(boundary, grid);
        let rows: Result<Vec<Vec<f64>>, BoundaryError> = (0..grid.x_nodes.len())
            .into_par_iter()
            .map(|r| layout.levels(r).iter().map(|&y| pv.value(grid.x_nodes[r], y)).collect())
            .collect();
        let (v, c, t) = layout.derive(&rows?);
        let zeros = |n: usize| vec![0.0; n];
        let (nv, nt) = (v.len(), t.len());
        Ok(layout.finish((v, zeros(nv)), (c, zeros(nv)), (t, zeros(nt))))
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Monte-Carlo values: `M` paths per node, each node reusing the same path
/// index streams when `crn` is set.
#[derive(Debug, Clone)]
pub struct MonteCarloValues {
    pub model: Model<f64>,
    pub sim: SimConfig,
    pub n_paths: usize,
    pub crn: bool,
}

impl MonteCarloValues {
    pub fn new(model: Model<f64>, cfg: &LearnConfig) -> Self {
        Self {
            model,
            sim: SimConfig {
                n_paths: cfg.n_paths_per_node,
                ..cfg.sim
            },
            n_paths: cfg.n_paths_per_node,
            crn: cfg.crn,
        }
    }

    fn stream(&self, round: u64, node: u64, path: u64) -> u64 {
        if self.crn {
            (round << 32) | path
        } else {
            (round << 48) | (node << 24) | path
        }
    }
}

/// One log-price path reduced to its running-minimum records and the
/// discounted sums needed to value any reflection policy on it.
struct RecordPath {
    /// Running minimum of the log-price on each record segment.
    mins: Vec<f64>,
    /// Discount weight of each segment.
    s0: Vec<f64>,
    /// Discount-weighted `e^{theta l}` of each segment.
    s1: Vec<f64>,
}

impl RecordPath {
    fn new(st: &Stepper, theta: f64, z: &[f64]) -> Self {
        let mut p = RecordPath {
            mins: vec![0.0],
            s0: vec![0.0],
            s1: vec![0.0],
        };
        let mut l = 0.0;
        for k in 0..st.n_steps {
            if k > 0 {
                l += st.drift + st.vol * z[k - 1];
                if l < *p.mins.last().unwrap() {
                    p.mins.push(l);
                    p.s0.push(0.0);
                    p.s1.push(0.0);
                }
            }
            let w = st.weights[k];
            *p.s0.last_mut().unwrap() += w;
            *p.s1.last_mut().unwrap() += w * (theta * l).exp();
        }
        p
    }

    /// Rewards for every mass level in `ys` from state `x`.
    fn rewards(&self, model: &Model<f64>, g: &Boundary<f64>, x: f64, ys: &[f64], out: &mut [f64]) {
        let xt = x.powf(model.theta());
        let rk = model.rho() * model.kappa();
        let lam = model.lambda();
        let levels: Vec<f64> = if x > 0.0 {
            self.mins.iter().map(|m| g.eval(x * m.exp())).collect()
        } else {
            vec![g.eval(0.0); self.mins.len()]
        };
        for (o, &y) in out.iter_mut().zip(ys) {
            let mut r = 0.0;
            for ((&lv, &s0), &s1) in levels.iter().zip(&self.s0).zip(&self.s1) {
                let ys = y.min(lv);
                let ent = if ys > 0.0 { ys * ys.ln() } else { 0.0 };
                r += ys * (xt * s1 - rk * s0) - lam * ent * s0;
            }
            *o = r;
        }
    }
}

/// Running mean and sum of squared deviations, updated in path order.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let d = x - *m;
            *m += d / self.n;
            *s += d * (x - *m);
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let se = self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
        (self.mean, se)
    }
}

impl ValueSource for MonteCarloValues {
    fn estimate(&self, boundary: &Boundary<f64>, grid: &Grid<f64>, round: u64) -> Result<ValueGridEstimate, LearnError> {
        self.sim.validate()?;
        let layout = Layout::new(boundary, grid);
        let nx = grid.x_nodes.len();
        let st = Stepper::new(&self.model, &self.sim);
        let theta = self.model.theta();
        // With antithetic pairing each sample is the mean over a path and
        // its mirror image.
        let signs: &[f64] = if self.sim.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let draw_paths = |stream: u64, z: &mut Vec<f64>| -> Vec<RecordPath> {
            signs
                .iter()
                .map(|&sign| {
                    st.draw(&mut substream(self.sim.seed, stream), sign, z);
                    RecordPath::new(&st, theta, z)
                })
                .collect()
        };
        let value_on = |paths: &[RecordPath], x: f64, levels: &[f64], out: &mut [f64]| {
            let mut tmp = vec![0.0; out.len()];
            out.fill(0.0);
            for p in paths {
                p.rewards(&self.model, boundary, x, levels, &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t / paths.len() as f64);
            }
        };
        let nl = grid.y_nodes.len() + 3;
        let mut acc: Option<[Welford; 3]> = None;
        let mut z = Vec::new();
        for m in 0..(self.n_paths / signs.len()) as u64 {
            let shared = self.crn.then(|| draw_paths(self.stream(round, 0, m), &mut z));
            let rows: Vec<Vec<f64>> = (0..nx)
                .into_par_iter()
                .map_init(Vec::new, |z, r| {
                    let levels = layout.levels(r);
                    let x = grid.x_nodes[r];
                    let mut row = vec![0.0; nl];
                    match &shared {
                        Some(p) => value_on(p, x, &levels, &mut row),
                        None => {
                            for j in 0..nl {
                                let p = draw_paths(self.stream(round, (r * nl + j) as u64, m), z);
                                value_on(&p, x, &levels[j..=j], &mut row[j..=j]);
                            }
                        }
                    }
                    row
                })
                .collect();
            let (v, c, t) = layout.derive(&rows);
            let acc = acc.get_or_insert_with(|| [Welford::new(v.len()), Welford::new(c.len()), Welford::new(t.len())]);
            acc[0].push(&v);
            acc[1].push(&c);
            acc[2].push(&t);
        }
        let [v, c, t] = acc.expect("at least one path");
        Ok(layout.finish(v.finish(), c.finish(), t.finish()))
    }
}

/// One sample-based improvement of `g` from an estimate taken on `g`.
///
/// At each `x > 0` the node is kept unless the top cross-difference is
/// significantly negative. Otherwise the cross-difference is read as a
/// piecewise-linear function of `y` through the midpoints of the top
/// stencil and the grid cells below it, and the node moves to its highest
/// zero crossing; without a crossing it stays. The table is then made
/// nondecreasing, capped by `g` and floored at `g(0)`.
pub fn spi_step(g: &Boundary<f64>, est: &ValueGridEstimate, noise_gate: f64) -> Result<Boundary<f64>, LearnError> {
    let xs = g.x_nodes();
    if xs != est.x_nodes.as_slice() || est.top_cross.len() != xs.len() {
        return Err(LearnError::Config("estimate was not taken on this boundary's nodes".into()));
    }
    let ys = &est.y_nodes;
    let floor = g.start();
    let mut next = g.y_values().to_vec();
    #[allow(clippy::needless_range_loop)]
    for i in 1..xs.len() {
        let (top, yl, dt) = (est.top_levels[i], est.top_lower[i], est.top_cross[i]);
        if !(dt < -noise_gate * est.top_cross_stderr[i]) {
            continue;
        }
        let (mut hi_y, mut hi_d) = (0.5 * (yl + top), dt);
        for j in (0..ys.len()).rev().filter(|&j| ys[j] <= yl) {
            let lo_y = if j == 0 { 0.5 * ys[0] } else { 0.5 * (ys[j - 1] + ys[j]) };
            let lo_d = est.cross[i][j];
            if lo_d >= 0.0 {
                next[i] = lo_y + (hi_y - lo_y) * lo_d / (lo_d - hi_d);
                break;
            }
            (hi_y, hi_d) = (lo_y, lo_d);
        }
    }
    let iso = isotonic_nondecreasing(&next);
    let ys: Vec<f64> = iso
        .iter()
        .zip(g.y_values())
        .map(|(&n, &o)| n.min(o).max(floor))
        .collect();
    Ok(g.with_values(ys)?)
}

/// Runs `outer_iters` rounds of sample-based policy iteration from `init`.
/// When `reference` is given, sup and L1 distances to it are recorded;
/// value improvements are not observable here and are reported as `NaN`.
pub fn spi_run<S: ValueSource>(
    source: &S,
    init: &Boundary<f64>,
    cfg: &LearnConfig,
    reference: Option<&dyn Fn(f64) -> f64>,
) -> Result<IterationReport<f64>, LearnError> {
    cfg.validate()?;
    if init.x_nodes() != cfg.grid.x_nodes.as_slice() {
        return Err(LearnError::Config("initial boundary must live on the grid's x-nodes".into()));
    }
    let gate = if source.is_exact() { 0.0 } else { cfg.noise_gate };
    let mut rep = IterationReport {
        boundaries: vec![init.clone()],
        sup_err: Vec::new(),
        l1_err: Vec::new(),
        min_value_improvement: vec![f64::INFINITY],
        converged: false,
    };
    let mut g = init.clone();
    for k in 0..cfg.outer_iters {
        let est = source.estimate(&g, &cfg.grid, k as u64)?;
        g = spi_step(&g, &est, gate)?;
        rep.boundaries.push(g.clone());
        rep.min_value_improvement.push(f64::NAN);
    }
    if let Some(r) = reference {
        for b in &rep.boundaries {
            let (s, l) = distances(b, r);
            rep.sup_err.push(s);
            rep.l1_err.push(l);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ClosedFormSolution;
    use crate::model::ModelParams;
    use crate::policy_iteration::{improve, init_exponential, tabulate};

    fn model() -> Model<f64> {
        ModelParams::reference().validate().unwrap()
    }

    fn toy(f: impl Fn(f64, f64) -> f64) -> ValueGridEstimate {
        let xs: Vec<f64> = (0..6).map(|i| 0.5 * i as f64).collect();
        let ys: Vec<f64> = (1..=5).map(|j| 0.2 * j as f64).collect();
        let u = xs.iter().map(|&x| ys.iter().map(|&y| f(x, y)).collect()).collect();
        ValueGridEstimate::from_values(xs, ys, u)
    }

    #[test]
    fn central_cross_difference() {
        let e = toy(|x, y| x * y);
        assert!((finite_diff_mixed(&e, 2, 2).unwrap() - 1.0).abs() < 1e-12);
        let e = toy(|x, y| x * x + y * y);
        assert!(finite_diff_mixed(&e, 2, 2).unwrap().abs() < 1e-12);
        assert!(finite_diff_mixed(&e, 0, 2).is_err());
        assert!(finite_diff_mixed(&e, 2, 4).is_err());
    }

    #[test]
    fn cross_difference_matches_mixed_partial() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let coarse = Grid::uniform(5.0, 0.02, 0.02).unwrap();
        let pv = PolicyValue::new(&m, tabulate(&m, &coarse, |x| s.g(x)).unwrap()).unwrap();
        let (x, y) = (3.0, 0.1);
        let want = pv.mixed_partial(x, y).unwrap();
        let mut errs = Vec::new();
        for h in [0.02, 0.01] {
            let xs = vec![x - h, x, x + h];
            let ys = vec![y - h, y, y + h];
            let u = xs.iter().map(|&a| ys.iter().map(|&b| pv.value(a, b).unwrap()).collect()).collect();
            let e = ValueGridEstimate::from_values(xs, ys, u);
            errs.push((finite_diff_mixed(&e, 1, 1).unwrap() - want).abs());
        }
        assert!(errs[0] < 1e-2 * want.abs().max(1.0), "{errs:?}");
        assert!(errs[1] < 0.35 * errs[0], "{errs:?}");
    }

    #[test]
    fn zeroth_order_search() {
        let m = model();
        let sim = SimConfig {
            dt: 1e-2,
            n_paths: 1,
            ..SimConfig::default()
        };
        let trace = learn_initial_mass(zero_state_oracle(m, sim), 0.5, &InitMassConfig::default()).unwrap();
        let ys = m.y_lambda();
        assert!((trace.estimate() - ys).abs() < 1e-3);
        assert!((trace.at(100) - ys).abs() * 10.0 <= (trace.at(10) - ys).abs());
        let start = learn_initial_mass(zero_state_oracle(m, sim), ys, &InitMassConfig::default()).unwrap();
        assert!(start.iterates.iter().all(|y| (y - ys).abs() < 0.01));
        assert!(learn_initial_mass(zero_state_oracle(m, sim), 1.0, &InitMassConfig::default()).is_err());
    }

    #[test]
    fn pinned_iterates_diverge() {
        let r = learn_initial_mass(|y| Ok(-10.0 * y), 0.5, &InitMassConfig::default());
        assert!(matches!(r, Err(LearnError::Diverged(_))));
    }

    #[test]
    fn small_mass_values_vanish() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let mut cfg = LearnConfig::reference(3);
        cfg.grid = Grid::uniform(2.0, 0.25, 0.1).unwrap();
        // The entropy term -(lambda/rho) y log y decays slowly, so go far down.
        cfg.grid.y_nodes = vec![1e-9, 2e-9];
        let g = tabulate(&m, &cfg.grid, |x| s.g(x)).unwrap();
        let est = MonteCarloValues::new(m, &cfg).estimate(&g, &cfg.grid, 0).unwrap();
        for i in 0..est.x_nodes.len() {
            assert!(est.values[i][0].abs() <= 3.0 * est.stderrs[i][0] + 1e-7);
        }
    }

    #[test]
    fn monte_carlo_grid_matches_closed_form() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let mut cfg = LearnConfig::reference(11);
        cfg.grid = Grid::uniform(4.5, 0.5, 0.1).unwrap();
        cfg.grid.y_nodes = vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
        cfg.n_paths_per_node = 400;
        cfg.sim.dt = 1e-3;
        let g = tabulate(&m, &Grid::reference(), |x| s.g(x)).unwrap();
        let pv = PolicyValue::new(&m, g.clone()).unwrap();
        let est = MonteCarloValues::new(m, &cfg).estimate(&g, &cfg.grid, 0).unwrap();
        let mut worst: f64 = 0.0;
        for (i, &x) in est.x_nodes.iter().enumerate().skip(1) {
            for (j, &y) in est.y_nodes.iter().enumerate() {
                let zs = (est.values[i][j] - pv.value(x, y).unwrap()) / est.stderrs[i][j];
                worst = worst.max(zs.abs());
            }
        }
        assert!(worst < 4.0, "{worst}");
    }

    #[test]
    fn common_random_numbers_tighten_cross_differences() {
        let m = model();
        let s = ClosedFormSolution::new(&m).unwrap();
        let mut cfg = LearnConfig::reference(5);
        cfg.grid = Grid::uniform(3.0, 0.5, 0.1).unwrap();
        cfg.grid.y_nodes.truncate(4);
        let g = tabulate(&m, &cfg.grid, |x| s.g(x)).unwrap();
        let mut wins = 0;
        for seed in 0..30 {
            cfg.sim.seed = seed;
            let mut spread = [0.0; 2];
            for (k, crn) in [true, false].into_iter().enumerate() {
                cfg.crn = crn;
                let e = MonteCarloValues::new(m, &cfg).estimate(&g, &cfg.grid, 0).unwrap();
                spread[k] = e.cross_stderr[3].iter().sum::<f64>();
            }
            if spread[0] < spread[1] {
                wins += 1;
            }
        }
        assert_eq!(wins, 30);
    }

    #[test]
    fn oracle_step_tracks_model_based_improvement() {
        let m = model();
        let grid = Grid::reference();
        let g0 = init_exponential(&m, &grid, 0.4).unwrap();
        let est = ExactValues { model: m }.estimate(&g0, &grid, 0).unwrap();
        let spi = spi_step(&g0, &est, 0.0).unwrap();
        let pi = improve(&PolicyValue::new(&m, g0.clone()).unwrap(), 1e-10).unwrap();
        let worst = spi
            .y_values()
            .iter()
            .zip(pi.y_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < grid.delta_y, "{worst}");
    }

    #[test]
    fn large_sample_step_tracks_model_based_improvement() {
        let m = model();
        let mut cfg = LearnConfig::reference(5);
        cfg.n_paths_per_node = 4000;
        let g0 = init_exponential(&m, &cfg.grid, 0.4).unwrap();
        let est = MonteCarloValues::new(m, &cfg).estimate(&g0, &cfg.grid, 0).unwrap();
        let spi = spi_step(&g0, &est, 0.0).unwrap();
        let pi = improve(&PolicyValue::new(&m, g0.clone()).unwrap(), 1e-10).unwrap();
        for (a, b) in spi.y_values().iter().zip(pi.y_values()) {
            assert!((a - b).abs() < 2.0 * cfg.grid.delta_y, "{a} vs {b}");
        }
    }

    #[test]
    fn learned_boundaries_stay_admissible() {
        let m = model();
        let mut cfg = LearnConfig::reference(1);
        cfg.outer_iters = 2;
        let g0 = init_exponential(&m, &cfg.grid, 0.4).unwrap();
        let rep = spi_run(&MonteCarloValues::new(m, &cfg), &g0, &cfg, None).unwrap();
        for b in &rep.boundaries {
            assert!(b.y_values().windows(2).all(|w| w[0] <= w[1]));
            assert!(b.y_values().iter().all(|&y| y > 0.0 && y <= 1.0));
            assert_eq!(b.start(), g0.start());
        }
    }
}

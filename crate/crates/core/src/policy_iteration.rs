//! Model-based policy iteration over reflection boundaries.

use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{AnalyticError, ClosedFormSolution};
use crate::boundary::{Boundary, BoundaryError, Interpolation, PolicyValue};
use crate::model::{Grid, Model};
use crate::numerics::{bisect, NumericError};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PiError {
    #[error("initial boundary is not strictly increasing before it reaches 1 (x = {x})")]
    NotIncreasing { x: f64 },
    #[error("initial boundary must start at y_lambda = {expected} (got {got})")]
    WrongStart { got: f64, expected: f64 },
    #[error("initial boundary lies below the optimal boundary at x = {x} (condition value {value})")]
    BelowOptimal { x: f64, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no sign change of the mixed partial below g(x) at node x = {x}")]
    NoRoot { x: f64 },
    #[error("mixed partial changes sign more than once below g(x) at node x = {x}")]
    MultipleRoots { x: f64 },
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Initial boundary family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind<T> {
    /// `min{y_lambda + 2(1 - y_lambda)(-alpha_-(kappa + lambda/rho)/(theta - alpha_-))^theta x, 1}`.
    Linear,
    /// `min{exp((rho/lambda)[(kappa + lambda/rho)(x/x_hat)^zeta - kappa - lambda/rho]), 1}`
    /// with `zeta` in `(0, theta]`; `zeta = theta` is the optimal boundary.
    Exponential { zeta: T },
    /// `min{exp(rho(zeta - alpha_-)x^zeta/(-alpha_- lambda) - (rho/lambda)(kappa + lambda/rho)), 1}`
    /// with `zeta` in `(theta, 1)`. Kept for comparison: it falls below the
    /// optimal boundary near the origin and is rejected by the check.
    ExponentialRaw { zeta: T },
}

/// Settings of [`run`].
#[derive(Debug, Clone)]
pub struct PiConfig<T> {
    pub grid: Grid<T>,
    pub max_iters: usize,
    /// Stop once `sup |g_{k+1} - g_k|` drops below this.
    pub boundary_tol: T,
    /// Tolerance of the y-root solve.
    pub root_tol: T,
    pub init: InitKind<T>,
}

impl<T: Real> PiConfig<T> {
    pub fn reference(init: InitKind<T>) -> Self {
        Self {
            grid: Grid::reference(),
            max_iters: 50,
            boundary_tol: lit(1e-10),
            root_tol: lit(1e-10),
            init,
        }
    }

    pub fn validate(&self) -> Result<(), PiError> {
        if !(self.root_tol > T::zero() && self.root_tol < self.grid.delta_y) {
            return Err(PiError::Config("root_tol must lie in (0, delta_y)".into()));
        }
        if self.max_iters == 0 || !(self.boundary_tol > T::zero()) {
            return Err(PiError::Config("max_iters and boundary_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration boundaries and diagnostics. Entry `k` of each metric
/// belongs to `boundaries[k]`; `min_value_improvement[0]` is `+inf`.
#[derive(Debug, Clone)]
pub struct IterationReport<T> {
    pub boundaries: Vec<Boundary<T>>,
    pub sup_err: Vec<f64>,
    pub l1_err: Vec<f64>,
    pub min_value_improvement: Vec<f64>,
    pub converged: bool,
}

/// Builds the initial boundary on the grid and checks that it satisfies the
/// initial-policy conditions.
pub fn init_boundary<T: Real>(model: &Model<T>, grid: &Grid<T>, init: InitKind<T>) -> Result<Boundary<T>, PiError> {
    let b = match init {
        InitKind::Linear => init_linear(model, grid)?,
        InitKind::Exponential { zeta } => init_exponential(model, grid, zeta)?,
        InitKind::ExponentialRaw { zeta } => init_exponential_raw(model, grid, zeta)?,
    };
    Ok(b)
}

/// Samples `f` on the grid, interpolating linearly in `(x^theta, log y)`.
pub fn tabulate<T: Real, F: Fn(T) -> T>(model: &Model<T>, grid: &Grid<T>, f: F) -> Result<Boundary<T>, PiError> {
    Ok(Boundary::from_fn(&grid.x_nodes, f)?.with_interpolation(Interpolation::LogPower { p: model.theta() }))
}

fn needs_temperature<T: Real>(model: &Model<T>) -> Result<(), PiError> {
    if model.lambda() <= T::zero() {
        return Err(AnalyticError::ZeroTemperature.into());
    }
    Ok(())
}

pub fn init_linear<T: Real>(model: &Model<T>, grid: &Grid<T>) -> Result<Boundary<T>, PiError> {
    needs_temperature(model)?;
    let y0 = model.y_lambda();
    let am = model.alpha_minus();
    let c = model.kappa() + model.lambda() / model.rho();
    let slope = lit::<T>(2.0) * (T::one() - y0) * (-am * c / (model.theta() - am)).powf(model.theta());
    let b = tabulate(model, grid, |x| (y0 + slope * x).min(T::one()))?;
    verify_initial_assumption(model, &b)?;
    Ok(b)
}

pub fn init_exponential<T: Real>(model: &Model<T>, grid: &Grid<T>, zeta: T) -> Result<Boundary<T>, PiError> {
    needs_temperature(model)?;
    if !(zeta > T::zero() && zeta <= model.theta()) {
        return Err(PiError::Config(format!("zeta must lie in (0, theta], got {zeta}")));
    }
    let x_hat = ClosedFormSolution::new(model)?.x_hat();
    let c = model.kappa() + model.lambda() / model.rho();
    let r = model.rho() / model.lambda();
    let b = tabulate(model, grid, |x| {
        (r * (c * (x / x_hat).powf(zeta) - c)).exp().min(T::one())
    })?;
    verify_initial_assumption(model, &b)?;
    Ok(b)
}

pub fn init_exponential_raw<T: Real>(model: &Model<T>, grid: &Grid<T>, zeta: T) -> Result<Boundary<T>, PiError> {
    needs_temperature(model)?;
    if !(zeta > model.theta() && zeta < T::one()) {
        return Err(PiError::Config(format!("zeta must lie in (theta, 1), got {zeta}")));
    }
    let am = model.alpha_minus();
    let (rho, lam) = (model.rho(), model.lambda());
    let c = model.kappa() + lam / rho;
    let b = tabulate(model, grid, |x| {
        (rho * (zeta - am) * x.powf(zeta) / (-am * lam) - rho / lam * c).exp().min(T::one())
    })?;
    verify_initial_assumption(model, &b)?;
    Ok(b)
}

/// Checks (a) strict increase before the boundary reaches 1, (b)
/// `g(0) = y_lambda`, and (c)
/// `-alpha_- (kappa + (lambda/rho)(1 + log g)) + alpha_- H - H' x >= 0`
/// wherever `g < 1`, i.e. the boundary dominates the optimal one.
pub fn verify_initial_assumption<T: Real>(model: &Model<T>, b: &Boundary<T>) -> Result<(), PiError> {
    if !b.strictly_increasing_before_hat() {
        let i = (1..b.len()).find(|&i| b.y_values()[i] <= b.y_values()[i - 1]).unwrap_or(0);
        return Err(PiError::NotIncreasing { x: to_f64(b.x_nodes()[i]) });
    }
    let yl = model.y_lambda();
    if (b.start() - yl).abs() > lit::<T>(1e-12) * yl {
        return Err(PiError::WrongStart {
            got: to_f64(b.start()),
            expected: to_f64(yl),
        });
    }
    let am = model.alpha_minus();
    for (&x, &y) in b.x_nodes().iter().zip(b.y_values()) {
        if y >= T::one() {
            break;
        }
        let c = -am * model.level(y) + am * model.h(x) - model.theta() * model.h(x);
        let scale = model.kappa() * (-am);
        if c < -lit::<T>(1e-9) * scale {
            return Err(PiError::BelowOptimal {
                x: to_f64(x),
                value: to_f64(c),
            });
        }
    }
    Ok(())
}

const SCAN_POINTS: usize = 48;

/// One improvement step: at every node with `x > 0` keep `g_k(x)` if the
/// mixed partial at `(x, g_k(x))` is not negative, otherwise move down to
/// the largest root of `y -> u_xy(x, y)` below `g_k(x)`.
pub fn improve<T: Real>(pv: &PolicyValue<T>, root_tol: T) -> Result<Boundary<T>, PiError> {
    let b = pv.boundary();
    let lo = b.start();
    let ys: Result<Vec<T>, PiError> = b
        .x_nodes()
        .par_iter()
        .zip(b.y_values().par_iter())
        .map(|(&x, &top)| {
            if x == T::zero() {
                return Ok(top);
            }
            let f = |y: T| pv.mixed_unchecked(x, y);
            if f(top) >= -root_tol {
                return Ok(top);
            }
            // Coarse scan downwards for the highest sign change.
            let step = (top - lo) / lit(SCAN_POINTS as f64);
            let mut hi = top;
            let mut bracket = None;
            let mut changes = 0;
            let mut prev_neg = true;
            for s in 1..=SCAN_POINTS {
                let y = if s == SCAN_POINTS { lo } else { top - step * lit(s as f64) };
                let neg = f(y) < T::zero();
                if neg != prev_neg {
                    changes += 1;
                    if bracket.is_none() {
                        bracket = Some((y, hi));
                    }
                }
                prev_neg = neg;
                hi = y;
            }
            let Some((a, c)) = bracket else {
                return Err(PiError::NoRoot { x: to_f64(x) });
            };
            if changes > 1 {
                return Err(PiError::MultipleRoots { x: to_f64(x) });
            }
            Ok(bisect(f, a, c, root_tol)?)
        })
        .collect();
    let ys = ys?;
    // Bisection noise must not undo the ordering of the old table.
    let ys: Vec<T> = ys.iter().zip(b.y_values()).map(|(&n, &o)| n.min(o)).collect();
    Ok(b.with_values(ys)?)
}

/// Sup and grid-L1 distance between a boundary and a reference curve on
/// the boundary's nodes.
pub fn distances<T: Real, F: Fn(T) -> T>(b: &Boundary<T>, reference: F) -> (f64, f64) {
    let xs = b.x_nodes();
    let mut sup: f64 = 0.0;
    let mut l1 = 0.0;
    for i in 0..xs.len() {
        let d = to_f64((b.y_values()[i] - reference(xs[i])).abs());
        sup = sup.max(d);
        let w = if i + 1 < xs.len() { to_f64(xs[i + 1] - xs[i]) } else { 0.0 };
        let wl = if i > 0 { to_f64(xs[i] - xs[i - 1]) } else { 0.0 };
        l1 += d * 0.5 * (w + wl);
    }
    (sup, l1)
}

/// Runs policy iteration from the configured initial boundary.
pub fn run<T: Real>(model: &Model<T>, config: &PiConfig<T>) -> Result<IterationReport<T>, PiError> {
    config.validate()?;
    let optimal = ClosedFormSolution::new(model)?;
    let g0 = init_boundary(model, &config.grid, config.init)?;
    let mut pv = PolicyValue::new(model, g0)?;
    let (s, l) = distances(pv.boundary(), |x| optimal.g(x));
    let mut rep = IterationReport {
        boundaries: vec![pv.boundary().clone()],
        sup_err: vec![s],
        l1_err: vec![l],
        min_value_improvement: vec![f64::INFINITY],
        converged: false,
    };
    for _ in 0..config.max_iters {
        let next = improve(&pv, config.root_tol)?;
        let change = next
            .y_values()
            .iter()
            .zip(pv.boundary().y_values())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), |m, v| m.max(v));
        let next_pv = PolicyValue::new(model, next)?;
        let imp = min_improvement(&pv, &next_pv, &config.grid)?;
        let (s, l) = distances(next_pv.boundary(), |x| optimal.g(x));
        rep.boundaries.push(next_pv.boundary().clone());
        rep.sup_err.push(s);
        rep.l1_err.push(l);
        rep.min_value_improvement.push(imp);
        pv = next_pv;
        if change < config.boundary_tol {
            rep.converged = true;
            break;
        }
    }
    Ok(rep)
}

/// `min over the grid of V_{g_new} - V_{g_old}`.
pub fn min_improvement<T: Real>(old: &PolicyValue<T>, new: &PolicyValue<T>, grid: &Grid<T>) -> Result<f64, PiError> {
    let vals: Result<Vec<f64>, PiError> = grid
        .x_nodes
        .par_iter()
        .map(|&x| {
            let mut m = f64::INFINITY;
            for &y in &grid.y_nodes {
                let d = new.value(x, y)? - old.value(x, y)?;
                m = m.min(to_f64(d));
            }
            Ok(m)
        })
        .collect();
    Ok(vals?.into_iter().fold(f64::INFINITY, f64::min))
}

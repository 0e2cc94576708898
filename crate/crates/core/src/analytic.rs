//! Closed-form solution of the entropy-regularized real option and of its
//! unregularized counterpart.

use thiserror::Error;

use crate::model::{Model, NegativeState};
use crate::numerics::{adaptive_simpson, bracket_upward, NumericError};
use crate::scalar::{lit, to_f64, xlogx, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("the regularized closed form needs lambda > 0; use StoppingSolution for lambda = 0")]
    ZeroTemperature,
    #[error("mass y = {0} outside (0, 1]")]
    MassOutOfRange(f64),
    #[error("A2 is only defined for y >= y_lambda = {y_lambda} (got {y})")]
    BelowMinimalMass { y: f64, y_lambda: f64 },
    #[error(transparent)]
    State(#[from] NegativeState),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Number of panels in the cumulative A2 table.
const A2_PANELS: usize = 256;

/// Relative quadrature tolerance appropriate for `T`.
pub(crate) fn quad_rel_tol<T: Real>() -> T {
    lit::<T>(1e-12).max(T::epsilon() * lit(64.0))
}

/// `K = P (theta - alpha_-)/(-alpha_-)`: the boundary equation
/// `-x H'(x)/alpha_- + H(x) = c` reads `K x^theta = c`.
fn boundary_coef<T: Real>(model: &Model<T>) -> T {
    let am = model.alpha_minus();
    model.resolvent_constant() * (model.theta() - am) / (-am)
}

/// Optimal classical stopping threshold `b*` and value `V`.
#[derive(Debug, Clone, Copy)]
pub struct StoppingSolution<T> {
    model: Model<T>,
    b_star: T,
    coef_b: T,
}

impl<T: Real> StoppingSolution<T> {
    /// Works for any temperature; lambda is ignored.
    pub fn new(model: &Model<T>) -> Self {
        let k = boundary_coef(model);
        let b_star = (model.kappa() / k).powf(T::one() / model.theta());
        let am = model.alpha_minus();
        let coef_b = -model.theta() * model.resolvent_constant() * b_star.powf(model.theta() - am) / am;
        Self {
            model: *model,
            b_star,
            coef_b,
        }
    }

    pub fn b_star(&self) -> T {
        self.b_star
    }

    /// `V(x) = 0` below `b*`, `B x^alpha_- + P x^theta - kappa` above, with
    /// `B` fixed by value matching and smooth pasting at `b*`.
    pub fn value(&self, x: T) -> Result<T, NegativeState> {
        self.model.resolvent(x)?;
        if x <= self.b_star {
            return Ok(T::zero());
        }
        Ok(self.coef_b * x.powf(self.model.alpha_minus()) + self.model.h(x) - self.model.kappa())
    }

    /// `V'(x)`.
    pub fn value_prime(&self, x: T) -> Result<T, NegativeState> {
        self.model.resolvent(x)?;
        if x <= self.b_star {
            return Ok(T::zero());
        }
        let am = self.model.alpha_minus();
        Ok(am * self.coef_b * x.powf(am - T::one()) + self.model.h_prime(x))
    }
}

/// Closed-form optimal boundary `g_lambda`, its inverse `b_lambda`, the
/// coefficient `A2` and the value `V^lambda`.
#[derive(Debug, Clone)]
pub struct ClosedFormSolution<T> {
    model: Model<T>,
    k: T,
    y_lambda: T,
    x_hat: T,
    knots: Vec<T>,
    prefix: Vec<T>,
    stopping: StoppingSolution<T>,
}

impl<T: Real> ClosedFormSolution<T> {
    pub fn new(model: &Model<T>) -> Result<Self, AnalyticError> {
        if model.lambda() <= T::zero() {
            return Err(AnalyticError::ZeroTemperature);
        }
        let k = boundary_coef(model);
        let y_lambda = model.y_lambda();
        let top = model.kappa() + model.lambda() / model.rho();
        let x_hat = bracket_upward(
            |x: T| k * x.powf(model.theta()) - top,
            T::zero(),
            T::one(),
            lit(1e-12),
        )?;
        let mut sol = Self {
            model: *model,
            k,
            y_lambda,
            x_hat,
            knots: Vec::new(),
            prefix: Vec::new(),
            stopping: StoppingSolution::new(model),
        };
        // Knots in the state variable: with u = g(z) the integrand is smooth,
        // whereas in u it has a thin layer at y_lambda for small lambda.
        let n = A2_PANELS;
        let knots: Vec<T> = (0..=n)
            .map(|i| if i == n { x_hat } else { x_hat * lit::<T>(i as f64) / lit::<T>(n as f64) })
            .collect();
        let mut prefix = vec![T::zero(); n + 1];
        for i in 0..n {
            let piece = sol.integrate_a2(knots[i], knots[i + 1])?;
            prefix[i + 1] = prefix[i] + piece;
        }
        sol.knots = knots;
        sol.prefix = prefix;
        Ok(sol)
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }
    pub fn alpha_minus(&self) -> T {
        self.model.alpha_minus()
    }
    pub fn resolvent_constant(&self) -> T {
        self.model.resolvent_constant()
    }
    pub fn y_lambda(&self) -> T {
        self.y_lambda
    }
    /// Smallest `x` with `g_lambda(x) = 1`.
    pub fn x_hat(&self) -> T {
        self.x_hat
    }
    pub fn b_star(&self) -> T {
        self.stopping.b_star()
    }
    pub fn stopping(&self) -> &StoppingSolution<T> {
        &self.stopping
    }

    #[inline]
    fn log_g(&self, x: T) -> T {
        let m = &self.model;
        (m.rho() / m.lambda()) * (self.k * m.pi(x) - m.kappa() - m.lambda() / m.rho())
    }

    /// Optimal reflection boundary
    /// `g_lambda(x) = min{exp((rho/lambda)(-x H'(x)/alpha_- + H(x) - kappa - lambda/rho)), 1}`.
    pub fn g_lambda(&self, x: T) -> Result<T, NegativeState> {
        self.model.resolvent(x)?;
        Ok(self.g(x))
    }

    #[inline]
    pub(crate) fn g(&self, x: T) -> T {
        self.log_g(x).exp().min(T::one())
    }

    /// Inverse boundary; zero below `y_lambda`.
    pub fn b_lambda(&self, y: T) -> Result<T, AnalyticError> {
        if !(y > T::zero() && y <= T::one()) {
            return Err(AnalyticError::MassOutOfRange(to_f64(y)));
        }
        Ok(self.b(y))
    }

    #[inline]
    fn b(&self, y: T) -> T {
        if y <= self.y_lambda {
            return T::zero();
        }
        let l = self.model.level(y);
        if l <= T::zero() {
            T::zero()
        } else {
            (l / self.k).powf(T::one() / self.model.theta())
        }
    }

    /// `A2'(u) = [kappa + (lambda/rho)(1 + log u) - H(b_lambda(u))] b_lambda(u)^{-alpha_-}`,
    /// continuous with value 0 at `u = y_lambda`.
    pub fn a2_prime(&self, u: T) -> T {
        let b = self.b(u);
        if b <= T::zero() {
            return T::zero();
        }
        (self.model.level(u) - self.model.h(b)) * b.powf(-self.model.alpha_minus())
    }

    fn a2_second(&self, u: T) -> T {
        let b = self.b(u);
        if b <= T::zero() {
            return T::zero();
        }
        let m = &self.model;
        let am = m.alpha_minus();
        let l = m.level(u);
        let dl = m.lambda() / (m.rho() * u);
        let db = b * dl / (m.theta() * l);
        let num = l - m.h(b);
        (dl - m.h_prime(b) * db) * b.powf(-am) - am * num * b.powf(-am - T::one()) * db
    }

    /// `int A2'(g(z)) g'(z) dz` over `[z0, z1]`, i.e. `A2(g(z1)) - A2(g(z0))`.
    fn integrate_a2(&self, z0: T, z1: T) -> Result<T, NumericError> {
        let m = &self.model;
        let c = m.rho() / m.lambda() * self.k * m.theta();
        let integrand = |z: T| {
            if z <= T::zero() {
                return T::zero();
            }
            let g = self.g(z);
            self.a2_prime(g) * g * c * z.powf(m.theta() - T::one())
        };
        adaptive_simpson(&integrand, z0, z1, T::min_positive_value(), quad_rel_tol())
    }

    /// `A2(y) = int_{y_lambda}^y A2'(u) du`.
    pub fn a2(&self, y: T) -> Result<T, AnalyticError> {
        if !(y <= T::one()) {
            return Err(AnalyticError::MassOutOfRange(to_f64(y)));
        }
        if y < self.y_lambda {
            return Err(AnalyticError::BelowMinimalMass {
                y: to_f64(y),
                y_lambda: to_f64(self.y_lambda),
            });
        }
        let z = self.b(y).min(self.x_hat);
        let n = self.knots.len() - 1;
        let idx = self.knots.partition_point(|&k| k <= z).saturating_sub(1).min(n - 1);
        Ok(self.prefix[idx] + self.integrate_a2(self.knots[idx], z)?)
    }

    /// `F(x, y) = A2(y) x^alpha_- + H(x) y - kappa y - (lambda/rho) y log y`.
    fn f(&self, x: T, y: T) -> Result<T, AnalyticError> {
        let a = self.a2(y)?;
        let head = if a == T::zero() || x == T::zero() {
            T::zero()
        } else {
            a * x.powf(self.model.alpha_minus())
        };
        Ok(head + self.model.h(x) * y + self.model.y_terms(y))
    }

    /// Optimal value `V^lambda(x, y)`.
    pub fn value(&self, x: T, y: T) -> Result<T, AnalyticError> {
        self.model.resolvent(x)?;
        if !(y >= T::zero() && y <= T::one()) {
            return Err(AnalyticError::MassOutOfRange(to_f64(y)));
        }
        if y == T::zero() {
            return Ok(T::zero());
        }
        if y < self.y_lambda {
            return Ok(self.model.h(x) * y + self.model.y_terms(y));
        }
        let g = self.g(x);
        self.f(x, y.min(g))
    }

    /// Analytic derivatives `(u, u_x, u_xx, u_y)` of the value at an interior
    /// point `x > 0`, `0 < y <= 1`.
    pub fn derivatives(&self, x: T, y: T) -> Result<ValueDerivatives<T>, AnalyticError> {
        let value = self.value(x, y)?;
        let m = &self.model;
        let am = m.alpha_minus();
        let one = T::one();
        if y < self.y_lambda {
            return Ok(ValueDerivatives {
                u: value,
                u_x: m.h_prime(x) * y,
                u_xx: m.h_second(x) * y,
                u_y: m.h(x) - m.level(y),
                in_exploration: true,
            });
        }
        let g = self.g(x);
        if y <= g {
            let a = self.a2(y)?;
            let xa = x.powf(am);
            return Ok(ValueDerivatives {
                u: value,
                u_x: am * a * xa / x + m.h_prime(x) * y,
                u_xx: am * (am - one) * a * xa / (x * x) + m.h_second(x) * y,
                u_y: self.a2_prime(y) * xa + m.h(x) - m.level(y),
                in_exploration: true,
            });
        }
        // u(x, y) = F(x, g(x)): chain rule with every term kept.
        let a = self.a2(g)?;
        let xa = x.powf(am);
        let c = m.rho() / m.lambda() * self.k * m.theta();
        let dg = g * c * x.powf(m.theta() - one);
        let d2g = g * (c * c * x.powf(lit::<T>(2.0) * m.theta() - lit(2.0)) + c * (m.theta() - one) * x.powf(m.theta() - lit(2.0)));
        let f_x = am * a * xa / x + m.h_prime(x) * g;
        let f_xx = am * (am - one) * a * xa / (x * x) + m.h_second(x) * g;
        let f_y = self.a2_prime(g) * xa + m.h(x) - m.level(g);
        let f_xy = am * self.a2_prime(g) * xa / x + m.h_prime(x);
        let f_yy = self.a2_second(g) * xa - m.lambda() / (m.rho() * g);
        Ok(ValueDerivatives {
            u: value,
            u_x: f_x + f_y * dg,
            u_xx: f_xx + lit::<T>(2.0) * f_xy * dg + f_yy * dg * dg + f_y * d2g,
            u_y: T::zero(),
            in_exploration: false,
        })
    }

    /// Mixed partial `u_xy` in the exploration region `y_lambda <= y <= g(x)`.
    pub fn mixed_partial(&self, x: T, y: T) -> T {
        let am = self.model.alpha_minus();
        am * self.a2_prime(y) * x.powf(am - T::one()) + self.model.h_prime(x)
    }

    /// Second `y`-derivative of `F` in the exploration region.
    pub fn u_yy(&self, x: T, y: T) -> T {
        self.a2_second(y) * x.powf(self.model.alpha_minus()) - self.model.lambda() / (self.model.rho() * y)
    }

    /// HJB residuals of the closed form over a tensor grid of interior points.
    pub fn verify_hjb(&self, xs: &[T], ys: &[T]) -> Result<HjbReport, AnalyticError> {
        let mut rep = HjbReport::default();
        let m = &self.model;
        let half = lit::<T>(0.5);
        for &x in xs {
            for &y in ys {
                let d = self.derivatives(x, y)?;
                let gen = m.mu() * x * d.u_x + half * m.sigma() * m.sigma() * x * x * d.u_xx - m.rho() * d.u;
                let pde = to_f64(gen + (m.pi(x) - m.rho() * m.kappa()) * y - m.lambda() * xlogx(y));
                let uy = to_f64(d.u_y);
                let (xf, yf) = (to_f64(x), to_f64(y));
                if d.in_exploration {
                    rep.exploration_points += 1;
                    rep.exploration_pde.update(pde.abs(), xf, yf);
                    rep.exploration_neg_uy.update(-uy, xf, yf);
                } else {
                    rep.stopping_points += 1;
                    rep.stopping_uy.update(uy.abs(), xf, yf);
                    rep.stopping_pde.update(pde, xf, yf);
                }
                rep.rows.push(HjbRow {
                    x: xf,
                    y: yf,
                    in_exploration: d.in_exploration,
                    pde_residual: pde,
                    u_y: uy,
                });
            }
        }
        Ok(rep)
    }
}

/// Value and the derivatives that enter the HJB operator.
#[derive(Debug, Clone, Copy)]
pub struct ValueDerivatives<T> {
    pub u: T,
    pub u_x: T,
    pub u_xx: T,
    pub u_y: T,
    pub in_exploration: bool,
}

/// Largest observed quantity and where it happened.
#[derive(Debug, Clone, Copy)]
pub struct Worst {
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

impl Default for Worst {
    fn default() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            x: f64::NAN,
            y: f64::NAN,
        }
    }
}

impl Worst {
    fn update(&mut self, v: f64, x: f64, y: f64) {
        if v > self.value || v.is_nan() {
            *self = Self { value: v, x, y };
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HjbRow {
    pub x: f64,
    pub y: f64,
    pub in_exploration: bool,
    pub pde_residual: f64,
    pub u_y: f64,
}

/// Worst HJB violations, split by region.
///
/// Exploration: `|PDE|` and `-u_y` should be `<= tol`.
/// Stopping: `|u_y|` and the signed PDE expression should be `<= tol`.
#[derive(Debug, Clone, Default)]
pub struct HjbReport {
    pub exploration_points: usize,
    pub stopping_points: usize,
    pub exploration_pde: Worst,
    pub exploration_neg_uy: Worst,
    pub stopping_uy: Worst,
    pub stopping_pde: Worst,
    pub rows: Vec<HjbRow>,
}

impl HjbReport {
    pub fn passes(&self, tol: f64) -> bool {
        let ok = |w: &Worst| w.value.is_infinite() || w.value <= tol;
        ok(&self.exploration_pde) && ok(&self.exploration_neg_uy) && ok(&self.stopping_uy) && ok(&self.stopping_pde)
    }
}

/// One row of the vanishing-temperature table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishRow {
    pub lambda: f64,
    pub y: f64,
    pub b_lambda: f64,
    pub gap: f64,
}

/// Convergence pattern of `b_lambda(y) - b*` along decreasing lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishFlag {
    pub y: f64,
    /// Gap has the sign predicted by `1 + log y`.
    pub sign_ok: bool,
    /// `|gap|` is nonincreasing as lambda decreases.
    pub shrinking: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishTable {
    pub rows: Vec<VanishRow>,
    pub flags: Vec<VanishFlag>,
}

/// Tabulates `b_lambda(y)` and its gap to `b*` for every pair, rows sorted
/// by lambda descending (then by y).
pub fn vanishing_sweep(model: &Model<f64>, lambdas: &[f64], ys: &[f64]) -> Result<VanishTable, AnalyticError> {
    let mut ls = lambdas.to_vec();
    ls.sort_by(|a, b| b.total_cmp(a));
    let b_star = StoppingSolution::new(model).b_star();
    let mut rows = Vec::new();
    for &l in &ls {
        let sol = ClosedFormSolution::new(&model.with_lambda(l).map_err(|_| AnalyticError::ZeroTemperature)?)?;
        for &y in ys {
            let b = sol.b_lambda(y)?;
            rows.push(VanishRow {
                lambda: l,
                y,
                b_lambda: b,
                gap: b - b_star,
            });
        }
    }
    let flags = ys
        .iter()
        .map(|&y| {
            let gaps: Vec<f64> = rows.iter().filter(|r| r.y == y).map(|r| r.gap).collect();
            let up = 1.0 + y.ln();
            let sign_ok = gaps.iter().all(|&g| if up >= 0.0 { g >= 0.0 } else { g <= 0.0 });
            let shrinking = gaps.windows(2).all(|w| w[1].abs() <= w[0].abs());
            VanishFlag { y, sign_ok, shrinking }
        })
        .collect();
    Ok(VanishTable { rows, flags })
}

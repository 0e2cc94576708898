//! Tabulated reflection boundaries and their exact policy values.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analytic::quad_rel_tol;
use crate::model::{Model, NegativeState};
use crate::numerics::{adaptive_simpson, NumericError};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("boundary needs at least two nodes and matching lengths")]
    Shape,
    #[error("x nodes must start at 0 and increase strictly (node {0})")]
    XNodes(usize),
    #[error("boundary value at node {0} outside (0, 1] or not finite")]
    Range(usize),
    #[error("boundary decreases at node {0}")]
    NotMonotone(usize),
    #[error("y = {y} outside the invertible range [{lo}, {hi}]")]
    InverseRange { y: f64, lo: f64, hi: f64 },
    #[error("mass y = {0} outside [0, 1]")]
    Mass(f64),
    #[error("mixed partial needs x > 0 and g(0) <= y <= g(x) (x = {x}, y = {y})")]
    MixedDomain { x: f64, y: f64 },
    #[error("malformed boundary csv at line {0}")]
    Csv(usize),
    #[error(transparent)]
    State(#[from] NegativeState),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// How a boundary is interpolated between its nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interpolation<T> {
    /// Straight segments in `(x, y)`.
    Linear,
    /// Straight segments in `(x^p, log y)`. With `p = theta` the optimal
    /// boundary is reproduced exactly, and a table that dominates it at the
    /// nodes dominates it everywhere.
    LogPower { p: T },
}

/// Nondecreasing boundary `y = g(x)` sampled on `x_nodes` (starting at 0),
/// interpolated between nodes and extended flat past the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary<T> {
    x_nodes: Vec<T>,
    y_values: Vec<T>,
    interp: Interpolation<T>,
    /// Transformed node coordinates `(s_i, w_i)`.
    s_nodes: Vec<T>,
    w_values: Vec<T>,
}

impl<T: Real> Boundary<T> {
    pub fn new(x_nodes: Vec<T>, y_values: Vec<T>) -> Result<Self, BoundaryError> {
        if x_nodes.len() < 2 || x_nodes.len() != y_values.len() {
            return Err(BoundaryError::Shape);
        }
        if x_nodes[0] != T::zero() {
            return Err(BoundaryError::XNodes(0));
        }
        for i in 1..x_nodes.len() {
            if !(x_nodes[i] > x_nodes[i - 1]) || !x_nodes[i].is_finite() {
                return Err(BoundaryError::XNodes(i));
            }
        }
        for (i, &y) in y_values.iter().enumerate() {
            if !(y > T::zero() && y <= T::one()) {
                return Err(BoundaryError::Range(i));
            }
            if i > 0 && y < y_values[i - 1] {
                return Err(BoundaryError::NotMonotone(i));
            }
        }
        Ok(Self {
            x_nodes,
            y_values,
            interp: Interpolation::Linear,
            s_nodes: Vec::new(),
            w_values: Vec::new(),
        })
    }

    /// Same nodes, different interpolation.
    pub fn with_interpolation(mut self, interp: Interpolation<T>) -> Self {
        self.interp = interp;
        match interp {
            Interpolation::Linear => {
                self.s_nodes.clear();
                self.w_values.clear();
            }
            Interpolation::LogPower { p } => {
                self.s_nodes = self.x_nodes.iter().map(|&x| x.powf(p)).collect();
                self.w_values = self.y_values.iter().map(|&y| y.ln()).collect();
            }
        }
        self
    }

    pub fn interpolation(&self) -> Interpolation<T> {
        self.interp
    }

    /// New values on the same nodes with the same interpolation.
    pub fn with_values(&self, y_values: Vec<T>) -> Result<Self, BoundaryError> {
        Ok(Self::new(self.x_nodes.clone(), y_values)?.with_interpolation(self.interp))
    }

    /// Samples `f` on the given nodes.
    pub fn from_fn<F: Fn(T) -> T>(x_nodes: &[T], f: F) -> Result<Self, BoundaryError> {
        Self::new(x_nodes.to_vec(), x_nodes.iter().map(|&x| f(x)).collect())
    }

    pub fn x_nodes(&self) -> &[T] {
        &self.x_nodes
    }
    pub fn y_values(&self) -> &[T] {
        &self.y_values
    }
    pub fn len(&self) -> usize {
        self.x_nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x_nodes.is_empty()
    }

    /// `g(0)`.
    pub fn start(&self) -> T {
        self.y_values[0]
    }

    /// Last tabulated value, which `g` keeps beyond the table.
    pub fn top(&self) -> T {
        *self.y_values.last().unwrap()
    }

    /// First node where `g = 1`; `None` stands for `+inf`.
    pub fn x_hat(&self) -> Option<T> {
        self.y_values.iter().position(|&y| y >= T::one()).map(|i| self.x_nodes[i])
    }

    /// True when values strictly increase up to the first node at 1.
    pub fn strictly_increasing_before_hat(&self) -> bool {
        for i in 1..self.len() {
            if self.y_values[i - 1] >= T::one() {
                break;
            }
            if self.y_values[i] <= self.y_values[i - 1] {
                return false;
            }
        }
        true
    }

    /// Piecewise-linear evaluation; flat beyond the last node.
    pub fn eval(&self, x: T) -> T {
        let n = self.len();
        if x <= T::zero() {
            return self.y_values[0];
        }
        if x >= self.x_nodes[n - 1] {
            return self.y_values[n - 1];
        }
        let i = self.x_nodes.partition_point(|&v| v <= x) - 1;
        self.eval_in(i, x)
    }

    /// Evaluation inside segment `i`.
    #[inline]
    fn eval_in(&self, i: usize, x: T) -> T {
        let (x0, x1) = (self.x_nodes[i], self.x_nodes[i + 1]);
        let (y0, y1) = (self.y_values[i], self.y_values[i + 1]);
        if x <= x0 || y0 == y1 {
            return y0;
        }
        if x >= x1 {
            return y1;
        }
        match self.interp {
            Interpolation::Linear => y0 + (y1 - y0) * (x - x0) / (x1 - x0),
            Interpolation::LogPower { p } => {
                let (s0, s1) = (self.s_nodes[i], self.s_nodes[i + 1]);
                let (w0, w1) = (self.w_values[i], self.w_values[i + 1]);
                (w0 + (w1 - w0) * (x.powf(p) - s0) / (s1 - s0)).exp().min(y1).max(y0)
            }
        }
    }

    /// `g'` inside segment `i` at `x`.
    #[inline]
    fn slope_in(&self, i: usize, x: T) -> T {
        let (x0, x1) = (self.x_nodes[i], self.x_nodes[i + 1]);
        let (y0, y1) = (self.y_values[i], self.y_values[i + 1]);
        match self.interp {
            Interpolation::Linear => (y1 - y0) / (x1 - x0),
            Interpolation::LogPower { p } => {
                let c = (self.w_values[i + 1] - self.w_values[i]) / (self.s_nodes[i + 1] - self.s_nodes[i]);
                self.eval_in(i, x) * c * p * x.powf(p - T::one())
            }
        }
    }

    /// Generalized inverse `inf{x : g(x) >= y}` for `y` in `[g(0), top]`.
    /// On flat stretches the leftmost point is returned.
    pub fn inverse(&self, y: T) -> Result<T, BoundaryError> {
        if !(y >= self.start() && y <= self.top()) {
            return Err(BoundaryError::InverseRange {
                y: to_f64(y),
                lo: to_f64(self.start()),
                hi: to_f64(self.top()),
            });
        }
        Ok(self.inverse_unchecked(y))
    }

    #[inline]
    fn inverse_unchecked(&self, y: T) -> T {
        let i = self.y_values.partition_point(|&v| v < y);
        if i == 0 {
            return T::zero();
        }
        if i >= self.len() {
            return self.x_nodes[self.len() - 1];
        }
        if self.y_values[i] == y {
            return self.x_nodes[i];
        }
        let (x0, x1) = (self.x_nodes[i - 1], self.x_nodes[i]);
        let (y0, y1) = (self.y_values[i - 1], self.y_values[i]);
        let x = match self.interp {
            Interpolation::Linear => x0 + (x1 - x0) * (y - y0) / (y1 - y0),
            Interpolation::LogPower { p } => {
                let (s0, s1) = (self.s_nodes[i - 1], self.s_nodes[i]);
                let (w0, w1) = (self.w_values[i - 1], self.w_values[i]);
                (s0 + (s1 - s0) * (y.ln() - w0) / (w1 - w0)).powf(T::one() / p)
            }
        };
        x.max(x0).min(x1)
    }

    /// Exchange format: header `x,y`, one row per node, shortest
    /// round-trip decimal text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in self.x_nodes.iter().zip(&self.y_values) {
            let _ = writeln!(s, "{},{}", to_f64(*x), to_f64(*y));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, BoundaryError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "x,y" => {}
            _ => return Err(BoundaryError::Csv(1)),
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<T, BoundaryError> {
                p.and_then(|s| s.trim().parse::<f64>().ok())
                    .and_then(T::from_f64)
                    .ok_or(BoundaryError::Csv(i + 1))
            };
            xs.push(parse(parts.next())?);
            ys.push(parse(parts.next())?);
            if parts.next().is_some() {
                return Err(BoundaryError::Csv(i + 1));
            }
        }
        Self::new(xs, ys)
    }
}

/// Value of the reflection policy attached to a boundary:
/// `u(x, y) = A(y) x^alpha_- + H(x) y - kappa y - (lambda/rho) y log y`
/// on `{y <= g(x)}`, and `u(x, g(x))` above the boundary.
#[derive(Debug, Clone)]
pub struct PolicyValue<T> {
    model: Model<T>,
    boundary: Boundary<T>,
    /// `A(g(x_i))`.
    prefix: Vec<T>,
}

impl<T: Real> PolicyValue<T> {
    pub fn new(model: &Model<T>, boundary: Boundary<T>) -> Result<Self, BoundaryError> {
        let mut pv = Self {
            model: *model,
            boundary,
            prefix: Vec::new(),
        };
        let n = pv.boundary.len();
        let mut prefix = vec![T::zero(); n];
        for i in 0..n - 1 {
            prefix[i + 1] = prefix[i] + pv.segment_integral(i, pv.boundary.x_nodes[i + 1])?;
        }
        pv.prefix = prefix;
        Ok(pv)
    }

    pub fn boundary(&self) -> &Boundary<T> {
        &self.boundary
    }
    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    /// Integral of `A'(g(z)) g'(z)` over `[x_i, z]` inside segment `i`.
    /// With `u = g(z)` this is the increment of `A` along the segment.
    fn segment_integral(&self, i: usize, z: T) -> Result<T, NumericError> {
        let b = &self.boundary;
        let x0 = b.x_nodes[i];
        if b.y_values[i + 1] <= b.y_values[i] || z <= x0 {
            return Ok(T::zero());
        }
        let m = &self.model;
        let am = m.alpha_minus();
        let f = |w: T| {
            if w <= T::zero() {
                return T::zero();
            }
            let u = b.eval_in(i, w);
            (m.level(u) - m.h(w)) * w.powf(-am) * b.slope_in(i, w)
        };
        adaptive_simpson(&f, x0, z, T::min_positive_value(), quad_rel_tol())
    }

    /// `A(y) = int_{g(0)}^y [kappa + (lambda/rho)(1 + log u) - H(g^-1(u))] (g^-1(u))^{-alpha_-} du`.
    pub fn a_coefficient(&self, y: T) -> Result<T, BoundaryError> {
        let z = self.boundary.inverse(y)?;
        self.a_at(z)
    }

    fn a_at(&self, z: T) -> Result<T, BoundaryError> {
        let xs = &self.boundary.x_nodes;
        let i = xs.partition_point(|&v| v <= z).saturating_sub(1).min(xs.len() - 1);
        if i == xs.len() - 1 || z == xs[i] {
            return Ok(self.prefix[i]);
        }
        Ok(self.prefix[i] + self.segment_integral(i, z)?)
    }

    /// `A'(y)`: the integrand of [`Self::a_coefficient`].
    pub fn a_prime(&self, y: T) -> Result<T, BoundaryError> {
        let z = self.boundary.inverse(y)?;
        if z <= T::zero() {
            return Ok(T::zero());
        }
        Ok((self.model.level(y) - self.model.h(z)) * z.powf(-self.model.alpha_minus()))
    }

    /// Policy value `V_g(x, y)`.
    pub fn value(&self, x: T, y: T) -> Result<T, BoundaryError> {
        self.model.resolvent(x)?;
        if !(y >= T::zero() && y <= T::one()) {
            return Err(BoundaryError::Mass(to_f64(y)));
        }
        if y == T::zero() {
            return Ok(T::zero());
        }
        let yy = y.min(self.boundary.eval(x));
        let m = &self.model;
        if yy < self.boundary.start() {
            return Ok(m.h(x) * yy + m.y_terms(yy));
        }
        let head = if x == T::zero() {
            T::zero()
        } else {
            let a = self.a_at(self.boundary.inverse_unchecked(yy))?;
            if a == T::zero() {
                T::zero()
            } else {
                a * x.powf(m.alpha_minus())
            }
        };
        Ok(head + m.h(x) * yy + m.y_terms(yy))
    }

    /// Exploration-region derivatives `(u_x, u_xx, u_y)` at `x > 0`,
    /// `g(0) <= y <= g(x)`.
    pub fn derivatives(&self, x: T, y: T) -> Result<(T, T, T), BoundaryError> {
        self.check_mixed_domain(x, y)?;
        let m = &self.model;
        let am = m.alpha_minus();
        let a = self.a_coefficient(y)?;
        let xa = x.powf(am);
        let u_x = am * a * xa / x + m.h_prime(x) * y;
        let u_xx = am * (am - T::one()) * a * xa / (x * x) + m.h_second(x) * y;
        let u_y = self.a_prime(y)? * xa + m.h(x) - m.level(y);
        Ok((u_x, u_xx, u_y))
    }

    fn check_mixed_domain(&self, x: T, y: T) -> Result<(), BoundaryError> {
        let slack = T::one() + lit::<T>(1e-12);
        if !(x > T::zero()) || !(y >= self.boundary.start()) || y > self.boundary.eval(x) * slack {
            return Err(BoundaryError::MixedDomain { x: to_f64(x), y: to_f64(y) });
        }
        Ok(())
    }

    /// `u_xy(x, y) = alpha_- A'(y) x^{alpha_- - 1} + H'(x)` on the
    /// exploration region, evaluated as
    /// `(alpha_-/x) [L(y) - H(z)] (z/x)^{-alpha_-} + H'(x)` with `z = g^-1(y) <= x`.
    pub fn mixed_partial(&self, x: T, y: T) -> Result<T, BoundaryError> {
        self.check_mixed_domain(x, y)?;
        Ok(self.mixed_unchecked(x, y.min(self.boundary.top())))
    }

    #[inline]
    pub(crate) fn mixed_unchecked(&self, x: T, y: T) -> T {
        let m = &self.model;
        let am = m.alpha_minus();
        let z = self.boundary.inverse_unchecked(y);
        let ratio = (z / x).powf(-am);
        am / x * (m.level(y) - m.h(z)) * ratio + m.h_prime(x)
    }
}

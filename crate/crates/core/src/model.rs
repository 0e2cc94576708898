//! Problem constants, profit function, resolvent and characteristic roots.

use thiserror::Error;

use crate::scalar::{lit, to_f64, Real};

/// Reasons a parameter set is rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("sigma must be > 0 (got {0})")]
    NonPositiveSigma(f64),
    #[error("rho must be > 0 (got {0})")]
    NonPositiveRho(f64),
    #[error("kappa must be > 0 (got {0})")]
    NonPositiveKappa(f64),
    #[error("theta must lie in (0,1) (got {0})")]
    ThetaOutOfRange(f64),
    #[error("lambda must be >= 0 (got {0})")]
    NegativeLambda(f64),
    #[error("resolvent divergence: rho = {rho} <= theta*(mu + sigma^2*(theta-1)/2) = {bound}")]
    ResolventDivergence { rho: f64, bound: f64 },
    #[error("rho <= mu (rho = {rho}, mu = {mu})")]
    RhoNotAboveMu { rho: f64, mu: f64 },
}

/// Negative state passed where `x >= 0` is required.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("state x must be >= 0 (got {0})")]
pub struct NegativeState(pub f64);

/// Raw model constants: drift `mu`, volatility `sigma`, discount `rho`,
/// stopping reward `kappa`, temperature `lambda` and profit exponent `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub mu: T,
    pub sigma: T,
    pub rho: T,
    pub kappa: T,
    pub lambda: T,
    pub theta: T,
}

impl<T: Real> ModelParams<T> {
    /// The reference real-option parameters (mu=0.2, sigma=0.2, rho=0.5,
    /// kappa=5, lambda=1, theta=0.5).
    pub fn reference() -> Self {
        Self {
            mu: lit(0.2),
            sigma: lit(0.2),
            rho: lit(0.5),
            kappa: lit(5.0),
            lambda: lit(1.0),
            theta: lit(0.5),
        }
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    /// Checks every admissibility condition and builds a [`Model`].
    pub fn validate(self) -> Result<Model<T>, ParamError> {
        let named = [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("theta", self.theta),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(ParamError::NonFinite(name));
            }
        }
        let zero = T::zero();
        if self.sigma <= zero {
            return Err(ParamError::NonPositiveSigma(to_f64(self.sigma)));
        }
        if self.rho <= zero {
            return Err(ParamError::NonPositiveRho(to_f64(self.rho)));
        }
        if self.kappa <= zero {
            return Err(ParamError::NonPositiveKappa(to_f64(self.kappa)));
        }
        if self.theta <= zero || self.theta >= T::one() {
            return Err(ParamError::ThetaOutOfRange(to_f64(self.theta)));
        }
        if self.lambda < zero {
            return Err(ParamError::NegativeLambda(to_f64(self.lambda)));
        }
        let half = lit::<T>(0.5);
        let bound = self.theta * (self.mu + self.sigma * self.sigma * (self.theta - T::one()) * half);
        if self.rho <= bound {
            return Err(ParamError::ResolventDivergence {
                rho: to_f64(self.rho),
                bound: to_f64(bound),
            });
        }
        if self.rho <= self.mu {
            return Err(ParamError::RhoNotAboveMu {
                rho: to_f64(self.rho),
                mu: to_f64(self.mu),
            });
        }
        let (alpha_minus, alpha_plus) = char_roots(&self);
        let p = T::one() / (self.rho + half * self.sigma * self.sigma * self.theta * (T::one() - self.theta) - self.theta * self.mu);
        Ok(Model {
            params: self,
            alpha_minus,
            alpha_plus,
            p,
        })
    }
}

/// Roots of `sigma^2/2 a(a-1) + mu a - rho = 0`, returned as
/// `(alpha_minus, alpha_plus)`.
///
/// The large-magnitude root comes from the cancellation-free branch of the
/// quadratic formula; the other one from the product `-2 rho / sigma^2`.
pub fn char_roots<T: Real>(params: &ModelParams<T>) -> (T, T) {
    let half = lit::<T>(0.5);
    let a = half * params.sigma * params.sigma;
    let b = params.mu - a;
    let c = -params.rho;
    let disc = (b * b - lit::<T>(4.0) * a * c).sqrt();
    let q = if b >= T::zero() {
        -half * (b + disc)
    } else {
        -half * (b - disc)
    };
    let r1 = q / a;
    let r2 = c / q;
    if r1 < r2 {
        (r1, r2)
    } else {
        (r2, r1)
    }
}

/// Residual of the characteristic quadratic at `alpha`.
pub fn char_residual<T: Real>(params: &ModelParams<T>, alpha: T) -> T {
    lit::<T>(0.5) * params.sigma * params.sigma * alpha * (alpha - T::one()) + params.mu * alpha - params.rho
}

/// Validated parameters together with the derived constants every other
/// module needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model<T> {
    params: ModelParams<T>,
    alpha_minus: T,
    alpha_plus: T,
    p: T,
}

impl<T: Real> Model<T> {
    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }
    pub fn mu(&self) -> T {
        self.params.mu
    }
    pub fn sigma(&self) -> T {
        self.params.sigma
    }
    pub fn rho(&self) -> T {
        self.params.rho
    }
    pub fn kappa(&self) -> T {
        self.params.kappa
    }
    pub fn lambda(&self) -> T {
        self.params.lambda
    }
    pub fn theta(&self) -> T {
        self.params.theta
    }
    pub fn alpha_minus(&self) -> T {
        self.alpha_minus
    }
    pub fn alpha_plus(&self) -> T {
        self.alpha_plus
    }

    /// Resolvent constant `P = 1/(rho + sigma^2 theta(1-theta)/2 - theta mu)`,
    /// so that the resolvent of the profit is `P x^theta`.
    pub fn resolvent_constant(&self) -> T {
        self.p
    }

    /// Same model with a different temperature. Validation is not affected
    /// by lambda beyond its sign.
    pub fn with_lambda(&self, lambda: T) -> Result<Self, ParamError> {
        self.params.with_lambda(lambda).validate()
    }

    /// Profit `x^theta`.
    pub fn profit(&self, x: T) -> Result<T, NegativeState> {
        check_state(x)?;
        Ok(self.pi(x))
    }

    /// Resolvent `H(x) = P x^theta`.
    pub fn resolvent(&self, x: T) -> Result<T, NegativeState> {
        check_state(x)?;
        Ok(self.h(x))
    }

    /// `H'(x) = theta P x^(theta-1)`; `+inf` at `x = 0`.
    pub fn resolvent_prime(&self, x: T) -> Result<T, NegativeState> {
        check_state(x)?;
        Ok(self.h_prime(x))
    }

    /// `x H'(x) = theta P x^theta`, finite (zero) at the origin.
    pub fn x_resolvent_prime(&self, x: T) -> Result<T, NegativeState> {
        check_state(x)?;
        Ok(self.params.theta * self.h(x))
    }

    #[inline]
    pub(crate) fn pi(&self, x: T) -> T {
        x.powf(self.params.theta)
    }

    #[inline]
    pub(crate) fn h(&self, x: T) -> T {
        self.p * self.pi(x)
    }

    #[inline]
    pub(crate) fn h_prime(&self, x: T) -> T {
        if x == T::zero() {
            T::infinity()
        } else {
            self.params.theta * self.p * x.powf(self.params.theta - T::one())
        }
    }

    #[inline]
    pub(crate) fn h_second(&self, x: T) -> T {
        let th = self.params.theta;
        th * (th - T::one()) * self.p * x.powf(th - lit(2.0))
    }

    /// `kappa + (lambda/rho)(1 + log y)`, the marginal cost of keeping mass `y`.
    #[inline]
    pub(crate) fn level(&self, y: T) -> T {
        self.params.kappa + self.params.lambda / self.params.rho * (T::one() + y.ln())
    }

    /// `-kappa y - (lambda/rho) y log y`, the value of holding mass `y` at `x = 0`.
    #[inline]
    pub(crate) fn y_terms(&self, y: T) -> T {
        -self.params.kappa * y - self.params.lambda / self.params.rho * crate::scalar::xlogx(y)
    }

    /// Minimal mass level `exp(-1 - kappa rho / lambda)`; zero when lambda = 0.
    pub fn y_lambda(&self) -> T {
        if self.params.lambda <= T::zero() {
            T::zero()
        } else {
            (-T::one() - self.params.kappa * self.params.rho / self.params.lambda).exp()
        }
    }
}

fn check_state<T: Real>(x: T) -> Result<(), NegativeState> {
    if x < T::zero() || x.is_nan() {
        Err(NegativeState(to_f64(x)))
    } else {
        Ok(())
    }
}

/// Uniform tensor grid: `x_nodes = 0, dx, .., x_max` and
/// `y_nodes = dy, 2dy, .., 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub x_max: T,
    pub delta_x: T,
    pub delta_y: T,
    pub x_nodes: Vec<T>,
    pub y_nodes: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid spacings and x_max must be positive and finite")]
    NonPositive,
    #[error("x_max / delta_x = {0} is not (close to) an integer")]
    XNotAligned(f64),
    #[error("1 / delta_y = {0} is not (close to) an integer")]
    YNotAligned(f64),
}

impl<T: Real> Grid<T> {
    pub fn uniform(x_max: T, delta_x: T, delta_y: T) -> Result<Self, GridError> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if !(ok(x_max) && ok(delta_x) && ok(delta_y)) {
            return Err(GridError::NonPositive);
        }
        let nx = to_f64(x_max / delta_x);
        let ny = to_f64(T::one() / delta_y);
        if (nx - nx.round()).abs() > 1e-6 || nx.round() < 1.0 {
            return Err(GridError::XNotAligned(nx));
        }
        if (ny - ny.round()).abs() > 1e-6 || ny.round() < 1.0 {
            return Err(GridError::YNotAligned(ny));
        }
        let nx = nx.round() as usize;
        let ny = ny.round() as usize;
        let x_nodes = (0..=nx)
            .map(|i| x_max * lit::<T>(i as f64) / lit::<T>(nx as f64))
            .collect();
        let y_nodes = (1..=ny)
            .map(|j| lit::<T>(j as f64) / lit::<T>(ny as f64))
            .collect();
        Ok(Self {
            x_max,
            delta_x: x_max / lit(nx as f64),
            delta_y: T::one() / lit(ny as f64),
            x_nodes,
            y_nodes,
        })
    }

    /// Grid used by the reference experiments: dx = dy = 0.02, x_max = 5.
    pub fn reference() -> Self {
        Self::uniform(lit(5.0), lit(0.02), lit(0.02)).expect("reference grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_params_validate() {
        let m = ModelParams::<f64>::reference().validate().unwrap();
        let am = (-9.0 - 181f64.sqrt()) / 2.0;
        assert!((m.alpha_minus() - am).abs() < 1e-12);
        assert!((m.alpha_plus() - (-9.0 + 181f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((m.resolvent_constant() - 1.0 / 0.405).abs() < 1e-14);
        assert!((m.resolvent(4.0).unwrap() - 2.0 / 0.405).abs() < 1e-13);
        assert_eq!(m.resolvent(1.0).unwrap(), m.resolvent_constant());
        assert_eq!(m.x_resolvent_prime(0.0).unwrap(), 0.0);
        assert!(m.resolvent_prime(0.0).unwrap().is_infinite());
        assert!(m.profit(-1.0).is_err());
    }

    #[test]
    fn rejections_name_the_inequality() {
        let mut p = ModelParams::<f64>::reference();
        p.mu = 0.5;
        assert!(matches!(p.validate(), Err(ParamError::RhoNotAboveMu { .. })));
        let mut p = ModelParams::<f64>::reference();
        p.rho = 0.09;
        match p.validate() {
            Err(ParamError::ResolventDivergence { bound, .. }) => assert!((bound - 0.095).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
        let mut p = ModelParams::<f64>::reference();
        p.theta = 1.0;
        assert!(matches!(p.validate(), Err(ParamError::ThetaOutOfRange(_))));
        let mut p = ModelParams::<f64>::reference();
        p.lambda = -0.1;
        assert!(matches!(p.validate(), Err(ParamError::NegativeLambda(_))));
    }

    #[test]
    fn symmetric_roots_without_drift() {
        let mut p = ModelParams::<f64>::reference();
        p.mu = 0.0;
        let m = p.validate().unwrap();
        let s = (0.25 + 2.0 * p.rho / (p.sigma * p.sigma)).sqrt();
        assert!((m.alpha_minus() - (0.5 - s)).abs() < 1e-12);
        assert!((m.alpha_plus() - (0.5 + s)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_resolvent_constants() {
        let mut p = ModelParams::<f64>::reference();
        p.theta = 1e-9;
        let m = p.validate().unwrap();
        assert!((m.resolvent_constant() - 1.0 / p.rho).abs() < 1e-7);
    }

    #[test]
    fn resolvent_solves_its_ode() {
        let m = ModelParams::<f64>::reference().validate().unwrap();
        for k in 0..100 {
            let x = 0.1 + 9.9 * k as f64 / 99.0;
            let lhs = m.mu() * x * m.h_prime(x) - m.rho() * m.h(x) + m.pi(x)
                + 0.5 * m.sigma().powi(2) * x * x * m.h_second(x);
            assert!(lhs.abs() <= 1e-9 * m.h(x), "x={x} residual={lhs}");
        }
    }

    #[test]
    fn f32_model_agrees() {
        let m = ModelParams::<f32>::reference().validate().unwrap();
        assert!((m.alpha_minus() as f64 + 11.2268).abs() < 1e-3);
    }

    #[test]
    fn grid_shape() {
        let g = Grid::<f64>::reference();
        assert_eq!(g.x_nodes.len(), 251);
        assert_eq!(g.y_nodes.len(), 50);
        assert_eq!(*g.x_nodes.last().unwrap(), 5.0);
        assert_eq!(*g.y_nodes.last().unwrap(), 1.0);
        assert!(Grid::<f64>::uniform(5.0, 0.03, 0.02).is_err());
    }
}

//! Scalar SDE models `dX = μ(X) dt + σ(X) dW`.
//!
//! Coefficients are finite sums of terms `c · x^p · |x|^a`, so both the
//! coefficient and its first derivative are available in closed form. This
//! covers the two benchmark models (Ginzburg-Landau and the low-regularity
//! model), geometric Brownian motion, and user models loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One term `coeff · x^power · |x|^abs_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    #[serde(default)]
    pub power: u32,
    #[serde(default)]
    pub abs_power: f64,
}

impl Term {
    pub fn new(coeff: f64, power: u32, abs_power: f64) -> Self {
        Self {
            coeff,
            power,
            abs_power,
        }
    }

    #[inline]
    fn value(&self, x: f64) -> f64 {
        self.coeff * int_pow(x, self.power) * abs_pow(x, self.abs_power)
    }

    /// d/dx of the term. For `power >= 1` this is `c (p + a) x^(p-1) |x|^a`,
    /// which is finite everywhere. For `power == 0` it is
    /// `c a sign(x) |x|^(a-1)` with `sign(0) = 0`, so the value at the
    /// origin is 0.
    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        if self.power >= 1 {
            let p = self.power as f64;
            self.coeff * (p + self.abs_power) * int_pow(x, self.power - 1) * abs_pow(x, self.abs_power)
        } else if self.abs_power == 0.0 || x == 0.0 {
            0.0
        } else {
            self.coeff * self.abs_power * x.signum() * abs_pow(x, self.abs_power - 1.0)
        }
    }
}

#[inline]
fn int_pow(x: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(n as i32),
    }
}

#[inline]
pub(crate) fn abs_pow(x: f64, a: f64) -> f64 {
    let ax = x.abs();
    if a == 0.0 {
        1.0
    } else if a == 1.0 {
        ax
    } else if a == 2.0 {
        ax * ax
    } else if a == 0.5 {
        ax.sqrt()
    } else {
        ax.powf(a)
    }
}

/// A coefficient function given as a sum of [`Term`]s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficient {
    terms: Vec<Term>,
}

impl Coefficient {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![Term::new(c, 0, 0.0)])
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.derivative(x)).sum()
    }

    fn validate(&self, what: &str) -> Result<()> {
        for t in &self.terms {
            if !t.coeff.is_finite() || !t.abs_power.is_finite() || t.abs_power < 0.0 {
                return invalid(format!(
                    "{what}: term needs finite coeff and finite abs_power >= 0, got {t:?}"
                ));
            }
        }
        Ok(())
    }
}

/// Constants of the growth and monotonicity conditions.
///
/// `alpha` and `l` describe the local Hölder continuity of the coefficient
/// derivatives, `(gamma, eta, p0)` the dissipativity bound
/// `x μ(x) + (p0-1)/2 σ²(x) <= γ x² + η`, and `lambda_os` the one-sided
/// Lipschitz bound `(x-y)(μ(x)-μ(y)) + ½|σ(x)-σ(y)|² <= λ |x-y|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub alpha: f64,
    pub l: f64,
    pub gamma: f64,
    pub eta: f64,
    #[serde(alias = "lambda")]
    pub lambda_os: f64,
    pub p0: f64,
}

impl RegularityConstants {
    /// Ginzburg-Landau model.
    pub const MODEL1: Self = Self {
        alpha: 1.0,
        l: 1.0,
        gamma: 0.65,
        eta: 0.0,
        lambda_os: 0.015,
        p0: 12.0,
    };

    /// Low-regularity model.
    pub const MODEL2: Self = Self {
        alpha: 0.2,
        l: 0.3,
        gamma: -0.2,
        eta: 6.0e6,
        lambda_os: -0.2,
        p0: 6.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.l, self.gamma, self.eta, self.lambda_os, self.p0];
        if all.iter().any(|v| !v.is_finite()) {
            return invalid("regularity constants must be finite");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.l < 0.0 {
            return invalid(format!("l must be >= 0, got {}", self.l));
        }
        if self.eta < 0.0 {
            return invalid(format!("eta must be >= 0, got {}", self.eta));
        }
        if self.p0 < self.min_p0() {
            return invalid(format!(
                "p0 = {} is below 4(l + alpha + 1) = {}",
                self.p0,
                self.min_p0()
            ));
        }
        Ok(())
    }

    pub fn min_p0(&self) -> f64 {
        4.0 * (self.l + self.alpha + 1.0)
    }

    /// Smallest admissible `l0` for the step function: `max(2, 4l / (3(1+α)))`.
    pub fn min_l0(&self) -> f64 {
        f64::max(2.0, 4.0 * self.l / (3.0 * (1.0 + self.alpha)))
    }

    /// Theoretical strong L2 rate `(1+α)/2`.
    pub fn theoretical_rate(&self) -> f64 {
        (1.0 + self.alpha) / 2.0
    }
}

/// The four coefficient values at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub mu: f64,
    pub sigma: f64,
    pub mu_prime: f64,
    pub sigma_prime: f64,
}

/// A scalar SDE with its initial condition and declared regularity.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    name: String,
    x0: f64,
    drift: Coefficient,
    diffusion: Coefficient,
    regularity: RegularityConstants,
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        x0: f64,
        drift: Coefficient,
        diffusion: Coefficient,
        regularity: RegularityConstants,
    ) -> Result<Self> {
        if !x0.is_finite() {
            return invalid(format!("x0 must be finite, got {x0}"));
        }
        drift.validate("drift")?;
        diffusion.validate("diffusion")?;
        regularity.validate()?;
        Ok(Self {
            name: name.into(),
            x0,
            drift,
            diffusion,
            regularity,
        })
    }

    /// Model 1: `μ(x) = 0.1(x - x³)`, `σ(x) = 0.1x`, `x0 = 0.1`.
    pub fn model1() -> Self {
        Self {
            name: "model1".into(),
            x0: 0.1,
            drift: Coefficient::new(vec![Term::new(0.1, 1, 0.0), Term::new(-0.1, 3, 0.0)]),
            diffusion: Coefficient::new(vec![Term::new(0.1, 1, 0.0)]),
            regularity: RegularityConstants::MODEL1,
        }
    }

    /// Model 2: `μ(x) = -0.1(1 + 3x + x|x|^0.5)`, `σ(x) = 0.3(1 + |x|^1.2)`,
    /// `x0 = 0.1`.
    pub fn model2() -> Self {
        Self {
            name: "model2".into(),
            x0: 0.1,
            drift: Coefficient::new(vec![
                Term::new(-0.1, 0, 0.0),
                Term::new(-0.3, 1, 0.0),
                Term::new(-0.1, 1, 0.5),
            ]),
            diffusion: Coefficient::new(vec![Term::new(0.3, 0, 0.0), Term::new(0.3, 0, 1.2)]),
            regularity: RegularityConstants::MODEL2,
        }
    }

    /// Geometric Brownian motion `μ(x) = a x`, `σ(x) = b x`.
    ///
    /// Declared constants: `α = 1`, `l = 0`, `p0 = 8`, `η = 0`,
    /// `γ = a + 3.5 b²` and `λ = a + b²/2`, which are exact for linear
    /// coefficients.
    pub fn gbm(a: f64, b: f64, x0: f64) -> Self {
        Self {
            name: "gbm".into(),
            x0,
            drift: Coefficient::new(vec![Term::new(a, 1, 0.0)]),
            diffusion: Coefficient::new(vec![Term::new(b, 1, 0.0)]),
            regularity: RegularityConstants {
                alpha: 1.0,
                l: 0.0,
                gamma: a + 3.5 * b * b,
                eta: 0.0,
                lambda_os: a + 0.5 * b * b,
                p0: 8.0,
            },
        }
    }

    /// Constant coefficients `μ ≡ mu`, `σ ≡ sigma`.
    pub fn constant(mu: f64, sigma: f64, x0: f64) -> Self {
        Self {
            name: "constant".into(),
            x0,
            drift: Coefficient::constant(mu),
            diffusion: Coefficient::constant(sigma),
            regularity: RegularityConstants {
                alpha: 1.0,
                l: 0.0,
                gamma: 1.0,
                eta: 0.25 * mu * mu + 3.5 * sigma * sigma,
                lambda_os: 0.0,
                p0: 8.0,
            },
        }
    }

    /// Built-in models by name: `model1`, `model2`, and `gbm`
    /// (`a = 0.05`, `b = 0.2`, `x0 = 1`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "model1" => Some(Self::model1()),
            "model2" => Some(Self::model2()),
            "gbm" => Some(Self::gbm(0.05, 0.2, 1.0)),
            _ => None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(s).map_err(|e| Error::InvalidInput(format!("model file: {e}")))?;
        Self::new(
            file.name,
            file.x0,
            file.drift,
            file.diffusion,
            file.regularity,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            x0: self.x0,
            drift: self.drift.clone(),
            diffusion: self.diffusion.clone(),
            regularity: self.regularity,
        };
        toml::to_string(&file).expect("model serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn regularity(&self) -> &RegularityConstants {
        &self.regularity
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        self.drift.value(x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        self.diffusion.value(x)
    }

    #[inline]
    pub fn drift_prime(&self, x: f64) -> f64 {
        self.drift.derivative(x)
    }

    #[inline]
    pub fn diffusion_prime(&self, x: f64) -> f64 {
        self.diffusion.derivative(x)
    }

    /// All four coefficient values, without input checks.
    #[inline]
    pub fn coefficients(&self, x: f64) -> Coefficients {
        Coefficients {
            mu: self.drift(x),
            sigma: self.diffusion(x),
            mu_prime: self.drift_prime(x),
            sigma_prime: self.diffusion_prime(x),
        }
    }

    pub fn evaluate_coefficients(&self, x: f64) -> Result<Coefficients> {
        if !x.is_finite() {
            return invalid(format!("coefficient evaluation at non-finite x = {x}"));
        }
        Ok(self.coefficients(x))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    name: String,
    x0: f64,
    #[serde(default)]
    drift: Coefficient,
    #[serde(default)]
    diffusion: Coefficient,
    regularity: RegularityConstants,
}

/// Worst case of the dissipativity check over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub holds: bool,
    pub worst_x: f64,
    /// `min (γx² + η) - (xμ(x) + (p0-1)/2 σ²(x))` over the grid.
    pub worst_margin: f64,
    pub points: usize,
}

/// Worst case of the one-sided Lipschitz check over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneSidedLipschitzReport {
    pub holds: bool,
    pub worst_pair: (f64, f64),
    /// `min λ|x-y|² - ((x-y)(μ(x)-μ(y)) + ½|σ(x)-σ(y)|²)` over the pairs.
    pub worst_margin: f64,
    /// Smallest λ that would make every pair with `x != y` pass.
    pub required_lambda: f64,
    pub pairs: usize,
}

pub fn check_dissipativity(model: &SdeModel, xs: &[f64]) -> Result<DissipativityReport> {
    if xs.is_empty() {
        return invalid("dissipativity check needs a non-empty grid");
    }
    if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
        return invalid(format!("dissipativity grid contains non-finite point {x}"));
    }
    let rc = model.regularity();
    let mut worst_x = xs[0];
    let mut worst_margin = f64::INFINITY;
    for &x in xs {
        let sigma = model.diffusion(x);
        let lhs = x * model.drift(x) + 0.5 * (rc.p0 - 1.0) * sigma * sigma;
        let rhs = rc.gamma * x * x + rc.eta;
        let margin = rhs - lhs;
        if margin < worst_margin {
            worst_margin = margin;
            worst_x = x;
        }
    }
    Ok(DissipativityReport {
        holds: worst_margin >= 0.0,
        worst_x,
        worst_margin,
        points: xs.len(),
    })
}

pub fn check_one_sided_lipschitz(
    model: &SdeModel,
    pairs: &[(f64, f64)],
) -> Result<OneSidedLipschitzReport> {
    if pairs.is_empty() {
        return invalid("one-sided Lipschitz check needs at least one pair");
    }
    if let Some(p) = pairs.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return invalid(format!("one-sided Lipschitz pairs contain non-finite {p:?}"));
    }
    let lambda = model.regularity().lambda_os;
    let mut worst_pair = pairs[0];
    let mut worst_margin = f64::INFINITY;
    let mut required_lambda = f64::NEG_INFINITY;
    for &(x, y) in pairs {
        let d = x - y;
        let ds = model.diffusion(x) - model.diffusion(y);
        let lhs = d * (model.drift(x) - model.drift(y)) + 0.5 * ds * ds;
        let margin = lambda * d * d - lhs;
        if margin < worst_margin {
            worst_margin = margin;
            worst_pair = (x, y);
        }
        if d != 0.0 {
            required_lambda = required_lambda.max(lhs / (d * d));
        }
    }
    Ok(OneSidedLipschitzReport {
        holds: worst_margin >= 0.0,
        worst_pair,
        worst_margin,
        required_lambda,
        pairs: pairs.len(),
    })
}

/// Closed-form GBM solution `x0 exp((a - b²/2) T + b W_T)`.
pub fn exact_gbm_terminal(a: f64, b: f64, x0: f64, t: f64, w_t: f64) -> f64 {
    x0 * ((a - 0.5 * b * b) * t + b * w_t).exp()
}

/// `n` evenly spaced points covering `[lo, hi]` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Consecutive pairs of a grid, the tightest test of the one-sided bound.
pub fn consecutive_pairs(xs: &[f64]) -> Vec<(f64, f64)> {
    xs.windows(2).map(|w| (w[0], w[1])).collect()
}

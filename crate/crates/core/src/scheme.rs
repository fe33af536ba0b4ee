//! Tamed-adaptive Milstein (TAM) and fixed-step tamed Milstein (TM) steppers.
//!
//! One TAM step from `x` over `dt` with Brownian increment `dW` is
//!
//! ```text
//! x + μ(x) dt + σ(x) dW + ½ q_Δ(x) (dW² - dt),   q_Δ = σσ' / (1 + Δ^½ |σσ'|)
//! ```
//!
//! with `dt = h(x) Δ` chosen by [`adaptive_step`]. The TM baseline uses a
//! fixed step `Δ` and divides the whole increment by `1 + Δ x²`.

use crate::driver::IncrementSource;
use crate::error::{invalid, Error, Result};
use crate::model::{abs_pow, Coefficients, SdeModel};

pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

/// Step parameters of the adaptive scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    /// The Δ scale, in (0, 1).
    pub delta: f64,
    pub h0: f64,
    pub l0: f64,
    pub t_end: f64,
    pub max_steps: u64,
}

impl SchemeConfig {
    pub fn new(delta: f64, h0: f64, l0: f64, t_end: f64) -> Result<Self> {
        let cfg = Self {
            delta,
            h0,
            l0,
            t_end,
            max_steps: DEFAULT_MAX_STEPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `Δ = 2^-k`.
    pub fn for_level(k: u32, h0: f64, l0: f64, t_end: f64) -> Result<Self> {
        Self::new(level_delta(k), h0, l0, t_end)
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return invalid(format!("h0 must be positive and finite, got {}", self.h0));
        }
        if !(self.l0 >= 2.0 && self.l0.is_finite()) {
            return invalid(format!("l0 must be >= 2, got {}", self.l0));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return invalid(format!("t_end must be positive and finite, got {}", self.t_end));
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be positive");
        }
        Ok(())
    }

    /// Checks `l0 >= max(2, 4l / (3(1+α)))` for the model's constants.
    pub fn check_for(&self, model: &SdeModel) -> Result<()> {
        self.validate()?;
        let min = model.regularity().min_l0();
        if self.l0 < min {
            return invalid(format!(
                "l0 = {} is below {} required by model {}",
                self.l0,
                min,
                model.name()
            ));
        }
        Ok(())
    }
}

/// `2^-k`.
pub fn level_delta(k: u32) -> f64 {
    (-(k as f64)).exp2()
}

#[inline]
fn tamed_from(c: &Coefficients, delta: f64) -> f64 {
    let g = c.sigma * c.sigma_prime;
    g / (1.0 + delta.sqrt() * g.abs())
}

/// The tamed Milstein coefficient `q_Δ(x)`.
pub fn tamed_correction(model: &SdeModel, x: f64, delta: f64) -> f64 {
    tamed_from(&model.coefficients(x), delta)
}

#[inline]
fn step_from(c: &Coefficients, x: f64, delta: f64, h0: f64, l0: f64) -> f64 {
    let q = tamed_from(c, delta);
    let s2 = c.sigma * c.sigma;
    let sp2 = c.sigma_prime * c.sigma_prime;
    let denom = 1.0
        + c.mu * c.mu
        + c.mu_prime.abs()
        + s2 * s2
        + sp2 * sp2
        + q.abs()
        + abs_pow(x, l0);
    let step = h0 / (denom * denom) * delta;
    // overflow saturates instead of stalling at zero
    if step > 0.0 {
        step
    } else {
        f64::MIN_POSITIVE
    }
}

/// The adaptive step `h(x) Δ`, always in `(0, h0 Δ]`.
pub fn adaptive_step(model: &SdeModel, config: &SchemeConfig, x: f64) -> f64 {
    step_from(&model.coefficients(x), x, config.delta, config.h0, config.l0)
}

/// One TAM step.
pub fn tam_step(model: &SdeModel, x: f64, delta: f64, dt: f64, dw: f64) -> f64 {
    let c = model.coefficients(x);
    tam_from(&c, x, delta, dt, dw)
}

#[inline]
fn tam_from(c: &Coefficients, x: f64, delta: f64, dt: f64, dw: f64) -> f64 {
    x + c.mu * dt + c.sigma * dw + 0.5 * tamed_from(c, delta) * (dw * dw - dt)
}

/// One TM step of length `Δ`.
pub fn tm_step(model: &SdeModel, x: f64, delta: f64, dw: f64) -> f64 {
    tm_step_with(model, x, delta, delta, dw)
}

/// TM step over an arbitrary `dt` (used when the last step is clamped at
/// the horizon); the taming factor still uses `Δ`.
pub fn tm_step_with(model: &SdeModel, x: f64, delta: f64, dt: f64, dw: f64) -> f64 {
    let c = model.coefficients(x);
    let incr = c.mu * dt + c.sigma * dw + 0.5 * c.sigma * c.sigma_prime * (dw * dw - dt);
    x + incr / (1.0 + delta * x * x)
}

/// Continuous interpolant between grid points.
pub fn interpolate(
    model: &SdeModel,
    x_grid: f64,
    t_grid: f64,
    t: f64,
    delta: f64,
    dw: f64,
) -> Result<f64> {
    if !(t >= t_grid) {
        return invalid(format!("interpolation time {t} precedes grid time {t_grid}"));
    }
    Ok(tam_step(model, x_grid, delta, t - t_grid, dw))
}

/// A one-dimensional time stepper: proposes the next step length from the
/// current state and advances the state given a step and its Brownian
/// increment.
pub trait Stepper {
    fn step_size(&self, x: f64) -> f64;
    fn advance(&self, x: f64, dt: f64, dw: f64) -> f64;
}

/// TAM with step `h(x) Δ`.
#[derive(Debug, Clone, Copy)]
pub struct TamedAdaptive<'a> {
    pub model: &'a SdeModel,
    pub delta: f64,
    pub h0: f64,
    pub l0: f64,
}

impl<'a> TamedAdaptive<'a> {
    pub fn new(model: &'a SdeModel, config: &SchemeConfig) -> Self {
        Self {
            model,
            delta: config.delta,
            h0: config.h0,
            l0: config.l0,
        }
    }
}

impl Stepper for TamedAdaptive<'_> {
    #[inline]
    fn step_size(&self, x: f64) -> f64 {
        step_from(&self.model.coefficients(x), x, self.delta, self.h0, self.l0)
    }

    #[inline]
    fn advance(&self, x: f64, dt: f64, dw: f64) -> f64 {
        tam_from(&self.model.coefficients(x), x, self.delta, dt, dw)
    }
}

/// TM with fixed step `Δ`.
#[derive(Debug, Clone, Copy)]
pub struct TamedFixed<'a> {
    pub model: &'a SdeModel,
    pub delta: f64,
}

impl Stepper for TamedFixed<'_> {
    #[inline]
    fn step_size(&self, _x: f64) -> f64 {
        self.delta
    }

    #[inline]
    fn advance(&self, x: f64, dt: f64, dw: f64) -> f64 {
        tm_step_with(self.model, x, self.delta, dt, dw)
    }
}

/// A simulated path on its (random) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `increments[i]` drives the step from `times[i]` to `times[i+1]`.
    pub increments: Vec<f64>,
    pub step_count: u64,
}

impl Trajectory {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("trajectory holds x0")
    }

    pub fn brownian_terminal(&self) -> f64 {
        let mut s = crate::sum::CompensatedSum::default();
        self.increments.iter().for_each(|&d| s.add(d));
        s.value()
    }
}

/// Terminal state of a path simulated without recording the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEnd {
    pub value: f64,
    pub steps: u64,
    /// `W_T` as the sum of the increments used.
    pub brownian: f64,
}

/// Runs `stepper` from `(0, x0)` to exactly `t_end`, clamping the last step.
pub fn run_stepper<S: Stepper, N: IncrementSource + ?Sized>(
    stepper: &S,
    x0: f64,
    t_end: f64,
    max_steps: u64,
    noise: &mut N,
    mut record: Option<&mut Trajectory>,
) -> Result<PathEnd> {
    let mut t = 0.0;
    let mut x = x0;
    let mut steps = 0u64;
    let mut w = crate::sum::CompensatedSum::default();
    if let Some(tr) = record.as_deref_mut() {
        tr.times.push(0.0);
        tr.values.push(x0);
    }
    while t < t_end {
        let explosion = || Error::Explosion {
            steps,
            time: t,
            value: x,
        };
        if steps >= max_steps {
            return Err(explosion());
        }
        let h = stepper.step_size(x);
        let (dt, next_t) = if t + h >= t_end {
            (t_end - t, t_end)
        } else {
            (h, t + h)
        };
        if next_t <= t {
            return Err(explosion());
        }
        let dw = noise.increment(dt);
        let next_x = stepper.advance(x, dt, dw);
        if !next_x.is_finite() {
            return Err(explosion());
        }
        x = next_x;
        t = next_t;
        steps += 1;
        w.add(dw);
        if let Some(tr) = record.as_deref_mut() {
            tr.times.push(t);
            tr.values.push(x);
            tr.increments.push(dw);
        }
    }
    if let Some(tr) = record {
        tr.step_count = steps;
    }
    Ok(PathEnd {
        value: x,
        steps,
        brownian: w.value(),
    })
}

/// Simulates one TAM path on `[0, t_end]`, recording the grid.
pub fn simulate_path<N: IncrementSource + ?Sized>(
    model: &SdeModel,
    config: &SchemeConfig,
    noise: &mut N,
) -> Result<Trajectory> {
    config.validate()?;
    let mut tr = Trajectory {
        times: Vec::new(),
        values: Vec::new(),
        increments: Vec::new(),
        step_count: 0,
    };
    run_stepper(
        &TamedAdaptive::new(model, config),
        model.x0(),
        config.t_end,
        config.max_steps,
        noise,
        Some(&mut tr),
    )?;
    Ok(tr)
}

/// Simulates one TAM path keeping only the terminal state.
pub fn simulate_terminal<N: IncrementSource + ?Sized>(
    model: &SdeModel,
    config: &SchemeConfig,
    noise: &mut N,
) -> Result<PathEnd> {
    config.validate()?;
    run_stepper(
        &TamedAdaptive::new(model, config),
        model.x0(),
        config.t_end,
        config.max_steps,
        noise,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::NoiseSource;
    use crate::model::{Coefficient, RegularityConstants, Term};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Frozen values below come from an independent re-evaluation of the
    // formulas in double precision.

    #[test]
    fn tamed_correction_examples() {
        let m = SdeModel::model1();
        assert_relative_eq!(tamed_correction(&m, 1.0, 0.25), 0.009950248756218909, max_relative = 1e-14);
        assert_relative_eq!(tamed_correction(&m, 1e3, 0.25), 1.6666666666666667, max_relative = 1e-14);
        assert!(tamed_correction(&m, 1e3, 0.25) <= 2.0);
        assert_eq!(tamed_correction(&SdeModel::model2(), 0.0, 0.25), 0.0);
        assert_eq!(tamed_correction(&SdeModel::constant(1.0, 1.0, 0.0), 3.0, 0.25), 0.0);
    }

    #[test]
    fn adaptive_step_examples() {
        let m = SdeModel::model1();
        let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(adaptive_step(&m, &cfg, 0.0), 0.20657400962986883, max_relative = 1e-14);
        assert_relative_eq!(adaptive_step(&m, &cfg, 2.0), 0.005950982766243867, max_relative = 1e-14);
        let flat = SdeModel::constant(0.0, 0.0, 0.0);
        assert_eq!(adaptive_step(&flat, &cfg, 0.0), 0.25);
    }

    #[test]
    fn adaptive_step_saturates_on_overflow() {
        let m = SdeModel::model1();
        let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(adaptive_step(&m, &cfg, 1e200), f64::MIN_POSITIVE);
    }

    #[test]
    fn tam_step_examples() {
        let bm = SdeModel::constant(0.0, 1.0, 0.0);
        assert_relative_eq!(tam_step(&bm, 5.0, 0.25, 0.1, 0.3), 5.3, epsilon = 1e-15);
        let m = SdeModel::model1();
        assert_relative_eq!(tam_step(&m, 0.1, 0.25, 0.2, 0.0), 0.1018800499750125, max_relative = 1e-14);
        // dW² = dt removes the Milstein correction
        let dt: f64 = 0.09;
        let dw = dt.sqrt();
        let x = 1.7;
        assert_relative_eq!(
            tam_step(&m, x, 0.25, dt, dw),
            x + m.drift(x) * dt + m.diffusion(x) * dw,
            epsilon = 1e-15
        );
    }

    #[test]
    fn tm_step_examples() {
        let m = SdeModel::model1();
        assert_relative_eq!(tm_step(&m, 1.0, 0.5, 0.0), 0.9983333333333333, max_relative = 1e-14);
        let bm = SdeModel::constant(0.0, 1.0, 0.0);
        assert_relative_eq!(tm_step(&bm, 10.0, 0.25, 1.0), 10.0 + 1.0 / 26.0, max_relative = 1e-14);
        // no taming at the origin: plain Milstein step
        let x = 0.0;
        let (d, dw) = (0.25, 0.4);
        let plain = x + m.drift(x) * d + m.diffusion(x) * dw
            + 0.5 * m.diffusion(x) * m.diffusion_prime(x) * (dw * dw - d);
        assert_eq!(tm_step(&m, x, d, dw), plain);
    }

    #[test]
    fn interpolate_examples() {
        let m = SdeModel::model2();
        assert_eq!(interpolate(&m, 0.7, 1.0, 1.0, 0.125, 0.0).unwrap(), 0.7);
        assert_relative_eq!(
            interpolate(&m, 0.1, 0.0, 0.01, 0.125, 0.05).unwrap(),
            0.1143499363222309,
            max_relative = 1e-14
        );
        assert!(interpolate(&m, 0.1, 1.0, 0.5, 0.125, 0.0).is_err());
        assert_eq!(
            interpolate(&m, -0.3, 2.0, 2.03, 0.125, 0.1).unwrap(),
            tam_step(&m, -0.3, 0.125, 2.03 - 2.0, 0.1)
        );
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::new(1.0, 1.0, 2.0, 1.0).is_err());
        assert!(SchemeConfig::new(0.5, 0.0, 2.0, 1.0).is_err());
        assert!(SchemeConfig::new(0.5, 1.0, 1.5, 1.0).is_err());
        assert!(SchemeConfig::new(0.5, 1.0, 2.0, 0.0).is_err());
        let big_l = SdeModel::new(
            "l9",
            0.0,
            Coefficient::zero(),
            Coefficient::new(vec![Term::new(1.0, 1, 0.0)]),
            RegularityConstants {
                alpha: 1.0,
                l: 9.0,
                gamma: 0.0,
                eta: 0.0,
                lambda_os: 0.0,
                p0: 44.0,
            },
        )
        .unwrap();
        let cfg = SchemeConfig::new(0.5, 1.0, 2.0, 1.0).unwrap();
        assert!(cfg.check_for(&big_l).is_err());
        assert!(cfg.check_for(&SdeModel::model2()).is_ok());
    }

    #[test]
    fn constant_path_takes_maximal_steps() {
        // at x = 0 every term of the step denominator vanishes
        let m = SdeModel::constant(0.0, 0.0, 0.0);
        let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 1.1).unwrap();
        let tr = simulate_path(&m, &cfg, &mut NoiseSource::new(1)).unwrap();
        assert_eq!(tr.step_count, 5);
        assert!(tr.values.iter().all(|&v| v == 0.0));
        assert_eq!(*tr.times.last().unwrap(), 1.1);
    }

    #[test]
    fn trajectory_grid_invariants() {
        let m = SdeModel::model1();
        let cfg = SchemeConfig::new(0.125, 1.0, 2.0, 5.0).unwrap();
        let tr = simulate_path(&m, &cfg, &mut NoiseSource::new(9)).unwrap();
        assert_eq!(tr.times[0], 0.0);
        assert_eq!(*tr.times.last().unwrap(), 5.0);
        assert_eq!(tr.times.len(), tr.values.len());
        assert_eq!(tr.increments.len() as u64, tr.step_count);
        for w in tr.times.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= cfg.h0 * cfg.delta * (1.0 + 1e-12));
        }
        // the interpolant at the next grid time reproduces the grid value
        for i in 0..tr.increments.len() {
            let v = interpolate(&m, tr.values[i], tr.times[i], tr.times[i + 1], cfg.delta, tr.increments[i]).unwrap();
            let clamped = i + 1 == tr.increments.len();
            if clamped {
                assert_relative_eq!(v, tr.values[i + 1], max_relative = 1e-12);
            } else {
                assert_relative_eq!(v, tr.values[i + 1], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn path_is_deterministic_per_seed() {
        let m = SdeModel::model1();
        let cfg = SchemeConfig::new(0.125, 1.0, 2.0, 5.0).unwrap();
        let a = simulate_path(&m, &cfg, &mut NoiseSource::new(42)).unwrap();
        let b = simulate_path(&m, &cfg, &mut NoiseSource::new(42)).unwrap();
        assert_eq!(a.terminal().to_bits(), b.terminal().to_bits());
        assert_eq!(a, b);
        let c = simulate_path(&m, &cfg, &mut NoiseSource::new(43)).unwrap();
        assert_ne!(a.terminal(), c.terminal());
    }

    #[test]
    fn step_budget_raises_explosion() {
        let m = SdeModel::model1();
        let cfg = SchemeConfig::new(0.125, 1.0, 2.0, 5.0).unwrap().with_max_steps(3);
        match simulate_path(&m, &cfg, &mut NoiseSource::new(1)) {
            Err(Error::Explosion { steps, .. }) => assert_eq!(steps, 3),
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn far_out_start_stalls_into_explosion() {
        let m = SdeModel::model1().with_x0(1e200);
        let cfg = SchemeConfig::new(0.125, 1.0, 2.0, 1.0).unwrap();
        assert!(matches!(
            simulate_terminal(&m, &cfg, &mut NoiseSource::new(1)),
            Err(Error::Explosion { .. })
        ));
    }

    #[test]
    fn zero_noise_is_adaptive_euler() {
        let m = SdeModel::new(
            "ode",
            0.4,
            Coefficient::new(vec![Term::new(0.1, 1, 0.0), Term::new(-0.1, 3, 0.0)]),
            Coefficient::zero(),
            RegularityConstants::MODEL1,
        )
        .unwrap();
        for &x in &[-3.0, 0.4, 2.5] {
            assert_eq!(tam_step(&m, x, 0.25, 0.01, 0.0), x + m.drift(x) * 0.01);
        }
    }

    fn builtin_model() -> impl Strategy<Value = SdeModel> {
        prop_oneof![Just(SdeModel::model1()), Just(SdeModel::model2())]
    }

    proptest! {
        #[test]
        fn taming_bounds(m in builtin_model(), x in -1e4f64..1e4, delta in 1e-9f64..1.0) {
            prop_assume!(delta < 1.0);
            let q = tamed_correction(&m, x, delta);
            let g = m.diffusion(x) * m.diffusion_prime(x);
            prop_assert!(q.abs() <= 1.0 / delta.sqrt());
            prop_assert!(q.abs() <= g.abs());
            prop_assert!((g - q).abs() <= delta.sqrt() * g * g * (1.0 + 1e-12));
            prop_assert!(q == 0.0 || q.signum() == g.signum());
        }

        #[test]
        fn step_bounds(m in builtin_model(), x in -1e6f64..1e6, k in 1u32..20, h0 in 0.01f64..10.0) {
            let cfg = SchemeConfig::for_level(k, h0, 2.0, 1.0).unwrap();
            let h = adaptive_step(&m, &cfg, x);
            prop_assert!(h > 0.0 && h <= h0 * cfg.delta);
        }

        #[test]
        fn step_monotone_in_state_size(x in 0.0f64..100.0, dx in 0.0f64..100.0) {
            // every term of the denominator grows with |x| for model 1 off [0, 1)
            let m = SdeModel::model1();
            let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 1.0).unwrap();
            let a = 1.0 + x;
            prop_assert!(adaptive_step(&m, &cfg, a + dx) <= adaptive_step(&m, &cfg, a));
        }
    }

    #[test]
    fn step_monotone_in_each_term() {
        // h as a function of the denominator terms, evaluated directly
        let h = |terms: [f64; 6]| {
            let d: f64 = 1.0 + terms.iter().sum::<f64>();
            1.0 / (d * d)
        };
        let base = [0.3, 0.2, 0.1, 0.05, 0.4, 2.0];
        for i in 0..6 {
            let mut bigger = base;
            bigger[i] += 0.5;
            assert!(h(bigger) < h(base));
        }
    }
}

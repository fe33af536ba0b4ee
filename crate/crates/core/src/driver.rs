//! Gaussian increment sources and the two-leg coupled Brownian driver.
//!
//! [`simulate_coupled`] runs a fine and a coarse discretization on one
//! Brownian path. Neither grid is known in advance, so the driver keeps each
//! leg's next event time, draws a single increment over the gap to the
//! earlier event, and credits it to both legs' pending increments. A leg
//! steps when its event time is reached and consumes what it has
//! accumulated. Each leg thus sees the restriction of the same path to its
//! own grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Leg, Result};
use crate::model::SdeModel;
use crate::scheme::{
    level_delta, SchemeConfig, Stepper, TamedAdaptive, TamedFixed, DEFAULT_MAX_STEPS,
};
use crate::sum::CompensatedSum;

/// Something that yields Brownian increments `W(t + d) - W(t)`.
pub trait IncrementSource {
    /// Normal(0, duration) sample. `duration` must be positive.
    fn increment(&mut self, duration: f64) -> f64;
}

/// Seeded Gaussian increment stream.
///
/// Backed by ChaCha8 with a 64-bit stream id, so `(seed, stream)` pairs give
/// independent, reproducible streams regardless of scheduling.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    current_time: f64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            rng,
            current_time: 0.0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Total duration requested so far.
    pub fn current_time(&self) -> f64 {
        self.current_time
    }

    pub fn gaussian_increment(&mut self, duration: f64) -> Result<f64> {
        if !(duration > 0.0 && duration.is_finite()) {
            return invalid(format!("increment duration must be positive, got {duration}"));
        }
        Ok(self.increment(duration))
    }
}

impl IncrementSource for NoiseSource {
    #[inline]
    fn increment(&mut self, duration: f64) -> f64 {
        debug_assert!(duration > 0.0);
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.current_time += duration;
        duration.sqrt() * z
    }
}

/// Stream ids separating the different uses of one seed.
pub mod streams {
    /// Coupled pair at level `k`.
    pub fn coupled(k: u32) -> u64 {
        k as u64
    }
    pub const MOMENTS: u64 = 1 << 32;
    pub const STEP_COUNTS: u64 = (1 << 32) + 1;
    /// Single-path strong error against an exact solution at level `k`.
    pub fn oracle(k: u32) -> u64 {
        (1 << 33) + k as u64
    }
}

/// Outcome of one coupled simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledSample {
    pub fine_terminal: f64,
    pub coarse_terminal: f64,
    pub fine_steps: u64,
    pub coarse_steps: u64,
    pub squared_diff: f64,
    /// Sum of the increments consumed by each leg; both equal `W_T`.
    pub fine_brownian: f64,
    pub coarse_brownian: f64,
    /// Number of increments drawn by the merged driver.
    pub merged_events: u64,
}

/// Which discretization a coupled pair uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    #[serde(rename = "TAM")]
    TamedAdaptive,
    #[serde(rename = "TM")]
    TamedFixed,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::TamedAdaptive => f.write_str("TAM"),
            Scheme::TamedFixed => f.write_str("TM"),
        }
    }
}

/// Parameters shared by both legs of a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    pub scheme: Scheme,
    pub h0: f64,
    pub l0: f64,
    pub t_end: f64,
    pub max_steps: u64,
}

impl CouplingParams {
    pub fn tam(h0: f64, l0: f64, t_end: f64) -> Self {
        Self {
            scheme: Scheme::TamedAdaptive,
            h0,
            l0,
            t_end,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn tm(t_end: f64) -> Self {
        Self {
            scheme: Scheme::TamedFixed,
            h0: 1.0,
            l0: 2.0,
            t_end,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Scheme configuration for `Δ = 2^-k`.
    pub fn level(&self, k: u32) -> Result<SchemeConfig> {
        Ok(SchemeConfig::for_level(k, self.h0, self.l0, self.t_end)?.with_max_steps(self.max_steps))
    }
}

struct LegState {
    t: f64,
    x: f64,
    steps: u64,
    next_t: f64,
    dt: f64,
    pending: CompensatedSum,
    delivered: CompensatedSum,
    done: bool,
}

impl LegState {
    fn new(x0: f64) -> Self {
        Self {
            t: 0.0,
            x: x0,
            steps: 0,
            next_t: 0.0,
            dt: 0.0,
            pending: CompensatedSum::default(),
            delivered: CompensatedSum::default(),
            done: false,
        }
    }

    fn explosion(&self, leg: Leg) -> Error {
        Error::LegExplosion {
            leg,
            steps: self.steps,
            time: self.t,
            value: self.x,
        }
    }

    fn schedule<S: Stepper>(&mut self, stepper: &S, t_end: f64, max_steps: u64, leg: Leg) -> Result<()> {
        if self.t >= t_end {
            self.done = true;
            self.next_t = f64::INFINITY;
            return Ok(());
        }
        if self.steps >= max_steps {
            return Err(self.explosion(leg));
        }
        let h = stepper.step_size(self.x);
        if self.t + h >= t_end {
            self.dt = t_end - self.t;
            self.next_t = t_end;
        } else {
            self.dt = h;
            self.next_t = self.t + h;
        }
        if self.next_t <= self.t {
            return Err(self.explosion(leg));
        }
        Ok(())
    }

    fn fire<S: Stepper>(&mut self, stepper: &S, leg: Leg) -> Result<()> {
        let dw = self.pending.value();
        let x = stepper.advance(self.x, self.dt, dw);
        self.t = self.next_t;
        self.steps += 1;
        self.delivered.add(dw);
        self.pending = CompensatedSum::default();
        if !x.is_finite() {
            return Err(self.explosion(leg));
        }
        self.x = x;
        Ok(())
    }
}

/// Runs `fine` and `coarse` from `x0` to `t_end` on one Brownian path.
pub fn simulate_coupled<F, C, N>(
    fine: &F,
    coarse: &C,
    x0: f64,
    t_end: f64,
    max_steps: u64,
    noise: &mut N,
) -> Result<CoupledSample>
where
    F: Stepper,
    C: Stepper,
    N: IncrementSource + ?Sized,
{
    if !(t_end > 0.0 && t_end.is_finite()) {
        return invalid(format!("horizon must be positive, got {t_end}"));
    }
    let mut f = LegState::new(x0);
    let mut c = LegState::new(x0);
    f.schedule(fine, t_end, max_steps, Leg::Fine)?;
    c.schedule(coarse, t_end, max_steps, Leg::Coarse)?;

    let mut now = 0.0;
    let mut merged_events = 0u64;
    while !(f.done && c.done) {
        let next = f.next_t.min(c.next_t);
        let gap = next - now;
        if gap > 0.0 {
            let dw = noise.increment(gap);
            merged_events += 1;
            if !f.done {
                f.pending.add(dw);
            }
            if !c.done {
                c.pending.add(dw);
            }
        }
        now = next;
        if f.next_t == now {
            f.fire(fine, Leg::Fine)?;
            f.schedule(fine, t_end, max_steps, Leg::Fine)?;
        }
        if c.next_t == now {
            c.fire(coarse, Leg::Coarse)?;
            c.schedule(coarse, t_end, max_steps, Leg::Coarse)?;
        }
    }

    let d = f.x - c.x;
    Ok(CoupledSample {
        fine_terminal: f.x,
        coarse_terminal: c.x,
        fine_steps: f.steps,
        coarse_steps: c.steps,
        squared_diff: d * d,
        fine_brownian: f.delivered.value(),
        coarse_brownian: c.delivered.value(),
        merged_events,
    })
}

/// Coupled pair of `params.scheme` at `Δ = 2^-(k+1)` (fine) and `Δ = 2^-k`
/// (coarse), driven by `noise`.
pub fn simulate_coupled_with<N: IncrementSource + ?Sized>(
    model: &SdeModel,
    params: &CouplingParams,
    k: u32,
    noise: &mut N,
) -> Result<CoupledSample> {
    if k < 1 {
        return invalid("level k must be >= 1");
    }
    let fine_cfg = params.level(k + 1)?;
    let coarse_cfg = params.level(k)?;
    match params.scheme {
        Scheme::TamedAdaptive => simulate_coupled(
            &TamedAdaptive::new(model, &fine_cfg),
            &TamedAdaptive::new(model, &coarse_cfg),
            model.x0(),
            params.t_end,
            params.max_steps,
            noise,
        ),
        Scheme::TamedFixed => simulate_coupled(
            &TamedFixed {
                model,
                delta: level_delta(k + 1),
            },
            &TamedFixed {
                model,
                delta: level_delta(k),
            },
            model.x0(),
            params.t_end,
            params.max_steps,
            noise,
        ),
    }
}

/// TAM coupled pair at level `k` on the stream `(seed, k)`.
pub fn simulate_coupled_pair(
    model: &SdeModel,
    h0: f64,
    l0: f64,
    k: u32,
    t_end: f64,
    seed: u64,
) -> Result<CoupledSample> {
    let params = CouplingParams::tam(h0, l0, t_end);
    let mut noise = NoiseSource::with_stream(seed, streams::coupled(k));
    simulate_coupled_with(model, &params, k, &mut noise)
}

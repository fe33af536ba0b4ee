//! Monte Carlo estimators: MSE between successive levels, moments of the
//! approximation, and mean step counts.
//!
//! Path `m` always draws from `NoiseSource::with_stream(base_seed + m, s)`
//! with a purpose-specific stream `s`, and per-path results are reduced in
//! path order. Output is therefore identical for any worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::{simulate_coupled_with, streams, CouplingParams, NoiseSource};
use crate::error::{invalid, Error, Result};
use crate::model::{exact_gbm_terminal, SdeModel};
use crate::scheme::{level_delta, simulate_terminal, SchemeConfig};
use crate::sum::CompensatedSum;

/// Rows with more than this fraction of exploded paths are rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// One level of the successive-difference MSE estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseRow {
    pub k: u32,
    pub delta: f64,
    pub n_paths: usize,
    pub failures: usize,
    pub mse: f64,
    /// `log2(mse)`; `-inf` when `mse == 0`.
    pub log2_mse: f64,
    pub std_error: f64,
    pub mean_fine_steps: f64,
    pub mean_coarse_steps: f64,
}

/// Strong L2 error of one level against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongErrorRow {
    pub k: u32,
    pub delta: f64,
    pub n_paths: usize,
    pub failures: usize,
    /// `E|X̂_T - X_T|²`.
    pub mse: f64,
    pub log2_mse: f64,
    pub std_error: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub t_end: f64,
    pub p: f64,
    pub n_paths: usize,
    pub failures: usize,
    pub mean_abs_p: f64,
    pub std_error: f64,
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStats {
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

impl MeanStats {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let n = count as f64;
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / n;
        let std_error = if count < 2 {
            0.0
        } else {
            let ss = values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .value();
            (ss / (n - 1.0) / n).sqrt()
        };
        Self {
            count,
            mean,
            std_error,
        }
    }
}

fn check_failures(failures: usize, n_paths: usize) -> Result<()> {
    if failures as f64 >= MAX_FAILURE_FRACTION * n_paths as f64 && failures > 0 {
        return Err(Error::Estimation { failures, n_paths });
    }
    Ok(())
}

fn run_paths<T: Send>(n_paths: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Vec<Result<T>> {
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

fn safe_log2(v: f64) -> f64 {
    if v > 0.0 {
        v.log2()
    } else {
        f64::NEG_INFINITY
    }
}

/// MSE(k) for the coupled pair described by `params`.
pub fn estimate_coupled_mse(
    model: &SdeModel,
    params: &CouplingParams,
    k: u32,
    n_paths: usize,
    base_seed: u64,
) -> Result<MseRow> {
    if n_paths < 2 {
        return invalid(format!("n_paths must be >= 2, got {n_paths}"));
    }
    if k < 1 {
        return invalid("level k must be >= 1");
    }
    params.level(k + 1)?;
    let results = run_paths(n_paths, |m| {
        let mut noise = NoiseSource::with_stream(base_seed.wrapping_add(m), streams::coupled(k));
        simulate_coupled_with(model, params, k, &mut noise)
    });
    let mut diffs = Vec::with_capacity(n_paths);
    let mut fine_steps = CompensatedSum::default();
    let mut coarse_steps = CompensatedSum::default();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(s) => {
                diffs.push(s.squared_diff);
                fine_steps.add(s.fine_steps as f64);
                coarse_steps.add(s.coarse_steps as f64);
            }
            Err(Error::LegExplosion { .. } | Error::Explosion { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failures, n_paths)?;
    let stats = MeanStats::from_values(&diffs);
    let ok = diffs.len() as f64;
    Ok(MseRow {
        k,
        delta: level_delta(k),
        n_paths,
        failures,
        mse: stats.mean,
        log2_mse: safe_log2(stats.mean),
        std_error: stats.std_error,
        mean_fine_steps: fine_steps.value() / ok,
        mean_coarse_steps: coarse_steps.value() / ok,
    })
}

/// MSE(k) of the tamed-adaptive scheme.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mse(
    model: &SdeModel,
    h0: f64,
    l0: f64,
    k: u32,
    n_paths: usize,
    t_end: f64,
    base_seed: u64,
) -> Result<MseRow> {
    estimate_coupled_mse(model, &CouplingParams::tam(h0, l0, t_end), k, n_paths, base_seed)
}

/// Monte Carlo estimate of `E|X̂_T|^p` from independent TAM paths.
pub fn estimate_moment(
    model: &SdeModel,
    config: &SchemeConfig,
    p: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if !(p > 0.0 && p.is_finite()) {
        return invalid(format!("moment order must be positive, got {p}"));
    }
    if n_paths < 2 {
        return invalid(format!("n_paths must be >= 2, got {n_paths}"));
    }
    config.validate()?;
    let results = run_paths(n_paths, |m| {
        let mut noise = NoiseSource::with_stream(seed.wrapping_add(m), streams::MOMENTS);
        simulate_terminal(model, config, &mut noise)
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(end) => values.push(end.value.abs().powf(p)),
            Err(Error::Explosion { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failures, n_paths)?;
    let stats = MeanStats::from_values(&values);
    Ok(MomentEstimate {
        t_end: config.t_end,
        p,
        n_paths,
        failures,
        mean_abs_p: stats.mean,
        std_error: stats.std_error,
    })
}

/// Mean and standard error of the TAM step count `N(T)`.
pub fn step_count_stats(
    model: &SdeModel,
    config: &SchemeConfig,
    n_paths: usize,
    seed: u64,
) -> Result<MeanStats> {
    if n_paths < 1 {
        return invalid("n_paths must be >= 1");
    }
    config.validate()?;
    let results = run_paths(n_paths, |m| {
        let mut noise = NoiseSource::with_stream(seed.wrapping_add(m), streams::STEP_COUNTS);
        simulate_terminal(model, config, &mut noise)
    });
    let mut counts = Vec::with_capacity(n_paths);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(end) => counts.push(end.steps as f64),
            Err(Error::Explosion { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failures, n_paths)?;
    Ok(MeanStats::from_values(&counts))
}

/// `N(T)` averaged over `n_paths` TAM paths.
pub fn mean_step_count(model: &SdeModel, config: &SchemeConfig, n_paths: usize, seed: u64) -> Result<f64> {
    Ok(step_count_stats(model, config, n_paths, seed)?.mean)
}

/// `N(T) = T / Δ` for the fixed-step scheme.
pub fn tm_step_count(t_end: f64, delta: f64) -> f64 {
    t_end / delta
}

/// Strong error of the TAM scheme for geometric Brownian motion
/// `dX = aX dt + bX dW` against the exact solution on the same path.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gbm_strong_error(
    a: f64,
    b: f64,
    x0: f64,
    h0: f64,
    l0: f64,
    k: u32,
    n_paths: usize,
    t_end: f64,
    seed: u64,
) -> Result<StrongErrorRow> {
    if n_paths < 2 {
        return invalid(format!("n_paths must be >= 2, got {n_paths}"));
    }
    let model = SdeModel::gbm(a, b, x0);
    let config = SchemeConfig::for_level(k, h0, l0, t_end)?;
    let results = run_paths(n_paths, |m| {
        let mut noise = NoiseSource::with_stream(seed.wrapping_add(m), streams::oracle(k));
        simulate_terminal(&model, &config, &mut noise)
    });
    let mut errors = Vec::with_capacity(n_paths);
    let mut steps = CompensatedSum::default();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(end) => {
                let exact = exact_gbm_terminal(a, b, x0, t_end, end.brownian);
                let e = end.value - exact;
                errors.push(e * e);
                steps.add(end.steps as f64);
            }
            Err(Error::Explosion { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failures, n_paths)?;
    let stats = MeanStats::from_values(&errors);
    Ok(StrongErrorRow {
        k,
        delta: level_delta(k),
        n_paths,
        failures,
        mse: stats.mean,
        log2_mse: safe_log2(stats.mean),
        std_error: stats.std_error,
        mean_steps: steps.value() / errors.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::driver::simulate_coupled_pair;

    #[test]
    fn brownian_motion_has_zero_mse() {
        let m = SdeModel::constant(0.0, 1.0, 0.0);
        for k in 1..4 {
            let row = estimate_mse(&m, 1.0, 2.0, k, 50, 1.0, 9).unwrap();
            assert!(row.mse < 1e-24);
            assert_eq!(row.failures, 0);
        }
    }

    #[test]
    fn two_path_mse_is_hand_average() {
        let m = SdeModel::model1();
        let row = estimate_mse(&m, 1.0, 2.0, 2, 2, 1.0, 100).unwrap();
        let a = simulate_coupled_pair(&m, 1.0, 2.0, 2, 1.0, 100).unwrap();
        let b = simulate_coupled_pair(&m, 1.0, 2.0, 2, 1.0, 101).unwrap();
        assert_relative_eq!(row.mse, (a.squared_diff + b.squared_diff) / 2.0, max_relative = 1e-15);
        assert_relative_eq!(row.mean_fine_steps, (a.fine_steps + b.fine_steps) as f64 / 2.0);
        assert_eq!(row.log2_mse, row.mse.log2());
    }

    #[test]
    fn mse_rejects_bad_input() {
        let m = SdeModel::model1();
        assert!(estimate_mse(&m, 1.0, 2.0, 2, 1, 1.0, 0).is_err());
        assert!(estimate_mse(&m, 1.0, 2.0, 0, 10, 1.0, 0).is_err());
    }

    #[test]
    fn mse_deterministic_and_finer_leg_steps_more() {
        let m = SdeModel::model2();
        let a = estimate_mse(&m, 1.0, 2.0, 2, 200, 2.0, 5).unwrap();
        let b = estimate_mse(&m, 1.0, 2.0, 2, 200, 2.0, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_fine_steps > a.mean_coarse_steps);
        let c = estimate_mse(&m, 1.0, 2.0, 2, 200, 2.0, 6).unwrap();
        assert_ne!(a.mse, c.mse);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = SdeModel::model1();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_mse(&m, 1.0, 2.0, 3, 300, 1.0, 17).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn explosions_over_threshold_fail_the_row() {
        let m = SdeModel::model1();
        let params = CouplingParams::tam(1.0, 2.0, 5.0).with_max_steps(20);
        match estimate_coupled_mse(&m, &params, 2, 10, 0) {
            Err(Error::Estimation { failures, n_paths }) => assert_eq!((failures, n_paths), (10, 10)),
            other => panic!("expected estimation error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_moment() {
        let m = SdeModel::constant(0.0, 0.0, -0.5);
        let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 3.0).unwrap();
        let est = estimate_moment(&m, &cfg, 3.0, 10, 1).unwrap();
        assert_eq!(est.mean_abs_p, 0.125);
        assert_eq!(est.std_error, 0.0);
        assert!(estimate_moment(&m, &cfg, 0.0, 10, 1).is_err());
        assert!(estimate_moment(&m, &cfg, 2.0, 1, 1).is_err());
    }

    #[test]
    fn gbm_second_moment_matches_closed_form() {
        let (a, b) = (0.05, 0.2);
        let m = SdeModel::gbm(a, b, 1.0);
        let cfg = SchemeConfig::for_level(8, 1.0, 2.0, 1.0).unwrap();
        let est = estimate_moment(&m, &cfg, 2.0, 4000, 3).unwrap();
        let exact = ((2.0 * a + b * b) * 1.0f64).exp();
        assert!((est.mean_abs_p - exact).abs() <= 3.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn constant_path_step_count() {
        let m = SdeModel::constant(0.0, 0.0, 0.0);
        let cfg = SchemeConfig::new(0.25, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(mean_step_count(&m, &cfg, 5, 0).unwrap(), 4.0);
        assert_eq!(tm_step_count(5.0, level_delta(4)), 80.0);
    }

    #[test]
    fn std_error_shrinks_like_inverse_root_n() {
        let m = SdeModel::model1();
        let small = estimate_mse(&m, 1.0, 2.0, 1, 4000, 1.0, 1000).unwrap();
        let big = estimate_mse(&m, 1.0, 2.0, 1, 64_000, 1.0, 1000).unwrap();
        let ratio = small.std_error / big.std_error;
        assert!((3.5..=4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn gbm_strong_error_decreases() {
        let coarse = estimate_gbm_strong_error(0.05, 0.2, 1.0, 1.0, 2.0, 2, 500, 1.0, 4).unwrap();
        let fine = estimate_gbm_strong_error(0.05, 0.2, 1.0, 1.0, 2.0, 5, 500, 1.0, 4).unwrap();
        assert!(fine.mse < coarse.mse / 8.0, "{coarse:?} {fine:?}");
    }

    #[test]
    fn mean_stats_basics() {
        let s = MeanStats::from_values(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_relative_eq!(s.std_error, 1.0);
        assert_eq!(MeanStats::from_values(&[4.0]).std_error, 0.0);
    }
}

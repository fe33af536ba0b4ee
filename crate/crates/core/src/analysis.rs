//! Rate fits and the TAM-vs-TM cost/accuracy comparison.

use serde::Serialize;

use crate::driver::{CouplingParams, Scheme};
use crate::error::{invalid, Error, Result};
use crate::model::SdeModel;
use crate::montecarlo::{estimate_coupled_mse, tm_step_count, MseRow, StrongErrorRow};
use crate::scheme::level_delta;

/// Least-squares fit of `log2 MSE(k) = slope k + intercept`.
///
/// With `MSE(k) ≈ C 2^(-k(1+α'))` the strong rate is `(1+α')/2 = -slope/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub empirical_rate: f64,
    pub alpha_prime: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// A level with a mean squared error, as consumed by [`fit_convergence_rate`].
pub trait LevelError {
    fn level(&self) -> u32;
    fn mean_squared_error(&self) -> f64;
}

impl LevelError for MseRow {
    fn level(&self) -> u32 {
        self.k
    }
    fn mean_squared_error(&self) -> f64 {
        self.mse
    }
}

impl LevelError for StrongErrorRow {
    fn level(&self) -> u32 {
        self.k
    }
    fn mean_squared_error(&self) -> f64 {
        self.mse
    }
}

impl LevelError for (u32, f64) {
    fn level(&self) -> u32 {
        self.0
    }
    fn mean_squared_error(&self) -> f64 {
        self.1
    }
}

pub fn fit_convergence_rate<R: LevelError>(rows: &[R]) -> Result<RateFit> {
    let mut points = Vec::with_capacity(rows.len());
    for r in rows {
        let mse = r.mean_squared_error();
        if !(mse > 0.0 && mse.is_finite()) {
            return Err(Error::Regression(format!(
                "level {} has mse = {mse}; log2 is undefined",
                r.level()
            )));
        }
        points.push((r.level() as f64, mse.log2()));
    }
    fit_log2_points(&points)
}

/// OLS of `y` on `k` for precomputed `(k, log2 mse)` points.
pub fn fit_log2_points(points: &[(f64, f64)]) -> Result<RateFit> {
    let n = points.len();
    let distinct = {
        let mut ks: Vec<f64> = points.iter().map(|p| p.0).collect();
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks.len()
    };
    if distinct < 2 {
        return invalid(format!("rate fit needs at least 2 distinct levels, got {distinct}"));
    }
    let nf = n as f64;
    let mean_k = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_k).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_k;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        empirical_rate: -slope / 2.0,
        alpha_prime: -slope - 1.0,
        r_squared,
        n_points: n,
    })
}

/// One point of a cost/accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRecord {
    pub scheme: Scheme,
    pub t_end: f64,
    pub k: u32,
    /// `log2 N(T)` at `Δ = 2^-k`.
    pub log2_nt: f64,
    pub log2_mse: f64,
}

/// Cost/accuracy curves of TAM and TM for every horizon and level.
///
/// TAM cost is the mean step count of the `Δ = 2^-k` leg; TM cost is
/// `T / Δ`. Both MSEs come from successive-Δ pairs on a shared path.
#[allow(clippy::too_many_arguments)]
pub fn compare_schemes(
    model: &SdeModel,
    h0: f64,
    l0: f64,
    ks: &[u32],
    n_paths: usize,
    t_values: &[f64],
    seed: u64,
) -> Result<Vec<ComparisonRecord>> {
    if ks.is_empty() || t_values.is_empty() {
        return invalid("comparison needs at least one level and one horizon");
    }
    let mut out = Vec::with_capacity(2 * ks.len() * t_values.len());
    for &t_end in t_values {
        for &k in ks {
            let tam = estimate_coupled_mse(model, &CouplingParams::tam(h0, l0, t_end), k, n_paths, seed)?;
            out.push(ComparisonRecord {
                scheme: Scheme::TamedAdaptive,
                t_end,
                k,
                log2_nt: tam.mean_coarse_steps.log2(),
                log2_mse: tam.log2_mse,
            });
        }
        for &k in ks {
            let tm = estimate_coupled_mse(model, &CouplingParams::tm(t_end), k, n_paths, seed)?;
            out.push(ComparisonRecord {
                scheme: Scheme::TamedFixed,
                t_end,
                k,
                log2_nt: tm_step_count(t_end, level_delta(k)).log2(),
                log2_mse: tm.log2_mse,
            });
        }
    }
    Ok(out)
}

/// Both curves evaluated at the same cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedCost {
    pub log2_nt: f64,
    pub tam_log2_mse: f64,
    pub tm_log2_mse: f64,
}

fn curve(records: &[ComparisonRecord], scheme: Scheme, t_end: f64) -> Vec<(f64, f64)> {
    let mut pts: Vec<_> = records
        .iter()
        .filter(|r| r.scheme == scheme && r.t_end == t_end && r.log2_mse.is_finite())
        .map(|r| (r.log2_nt, r.log2_mse))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn interp(pts: &[(f64, f64)], x: f64) -> f64 {
    let i = pts.partition_point(|p| p.0 < x).clamp(1, pts.len() - 1);
    let (a, b) = (pts[i - 1], pts[i]);
    if b.0 == a.0 {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Compares the curves at the largest cost both of them cover, using
/// piecewise-linear interpolation in `(log2 N, log2 MSE)`.
///
/// Returns `None` when the cost ranges do not overlap or a curve has fewer
/// than two points.
pub fn matched_cost_at_largest(records: &[ComparisonRecord], t_end: f64) -> Option<MatchedCost> {
    let tam = curve(records, Scheme::TamedAdaptive, t_end);
    let tm = curve(records, Scheme::TamedFixed, t_end);
    if tam.len() < 2 || tm.len() < 2 {
        return None;
    }
    let lo = tam[0].0.max(tm[0].0);
    let hi = tam[tam.len() - 1].0.min(tm[tm.len() - 1].0);
    if hi < lo {
        return None;
    }
    Some(MatchedCost {
        log2_nt: hi,
        tam_log2_mse: interp(&tam, hi),
        tm_log2_mse: interp(&tm, hi),
    })
}

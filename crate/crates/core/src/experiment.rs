//! Experiment orchestration behind the `tamsde` binary.
//!
//! Every experiment writes its tables into the output directory and returns
//! a JSON summary. Numbers are printed with Rust's shortest round-trip
//! formatting, so reruns with the same configuration are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{compare_schemes, fit_convergence_rate, matched_cost_at_largest};
use crate::driver::{CouplingParams, Scheme};
use crate::error::Error;
use crate::model::{
    check_dissipativity, check_one_sided_lipschitz, consecutive_pairs, uniform_grid, SdeModel,
};
use crate::montecarlo::{estimate_coupled_mse, estimate_gbm_strong_error, estimate_moment};
use crate::scheme::SchemeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// MSE(k) table and rate fit.
    Rate,
    /// `E|X̂_T|^p` for several horizons.
    Moments,
    /// TAM vs TM cost/accuracy curves.
    Compare,
    /// Grid sweep of the dissipativity and one-sided Lipschitz bounds.
    VerifyAssumptions,
    /// Strong error against exact geometric Brownian motion.
    Oracle,
}

/// Closed grid `lo:hi:n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("grid must look like lo:hi:n, got '{s}'"));
        };
        let lo: f64 = lo.parse().map_err(|e| format!("grid lower bound: {e}"))?;
        let hi: f64 = hi.parse().map_err(|e| format!("grid upper bound: {e}"))?;
        let n: usize = n.parse().map_err(|e| format!("grid size: {e}"))?;
        if !(lo.is_finite() && hi.is_finite() && lo < hi && n >= 2) {
            return Err(format!("grid needs finite lo < hi and n >= 2, got '{s}'"));
        }
        Ok(Self { lo, hi, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Built-in model name or path to a model file.
    pub model: String,
    pub k_min: u32,
    pub k_max: u32,
    pub n_paths: usize,
    #[serde(rename = "T")]
    pub t_values: Vec<f64>,
    pub h0: f64,
    pub l0: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Scheme for `rate`.
    pub scheme: Scheme,
    /// Moment order for `moments`.
    pub p: f64,
    /// `moments` runs at `Δ = 2^-moment_k`.
    pub moment_k: u32,
    pub grid: GridSpec,
    /// Extra random pairs from the grid for the one-sided Lipschitz sweep.
    pub random_pairs: usize,
    /// GBM parameters for `oracle`.
    pub gbm_a: f64,
    pub gbm_b: f64,
    pub gbm_x0: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Rate,
            model: "model1".into(),
            k_min: 1,
            k_max: 5,
            n_paths: 10_000,
            t_values: vec![5.0],
            h0: 1.0,
            l0: 2.0,
            seed: 42,
            out: PathBuf::from("."),
            threads: None,
            scheme: Scheme::TamedAdaptive,
            p: 2.0,
            moment_k: 4,
            grid: GridSpec {
                lo: -50.0,
                hi: 50.0,
                n: 10_000,
            },
            random_pairs: 10_000,
            gbm_a: 0.05,
            gbm_b: 0.2,
            gbm_x0: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn levels(&self) -> Result<Vec<u32>, ExperimentError> {
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(ExperimentError::InvalidKRange {
                k_min: self.k_min,
                k_max: self.k_max,
            });
        }
        Ok((self.k_min..=self.k_max).collect())
    }

    fn check_paths(&self) -> Result<(), ExperimentError> {
        if self.n_paths < 2 {
            return Err(ExperimentError::Config(format!(
                "n_paths must be >= 2, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }

    fn horizons(&self) -> Result<&[f64], ExperimentError> {
        if self.t_values.is_empty() {
            return Err(ExperimentError::Config("at least one horizon T is required".into()));
        }
        if let Some(t) = self.t_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(ExperimentError::Config(format!("horizon T must be positive, got {t}")));
        }
        Ok(&self.t_values)
    }

    fn single_horizon(&self) -> Result<f64, ExperimentError> {
        match self.horizons()? {
            [t] => Ok(*t),
            ts => Err(ExperimentError::Config(format!(
                "{:?} takes exactly one horizon T, got {}",
                self.kind,
                ts.len()
            ))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown model '{0}': expected model1, model2, gbm, or a path to a model file")]
    UnknownModel(String),
    #[error("invalid k range: k_min = {k_min}, k_max = {k_max} (need 1 <= k_min <= k_max)")]
    InvalidKRange { k_min: u32, k_max: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write output {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] Error),
}

impl ExperimentError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::UnknownModel(_) => 2,
            ExperimentError::InvalidKRange { .. } => 3,
            ExperimentError::Config(_) | ExperimentError::Run(Error::InvalidInput(_)) => 4,
            ExperimentError::Output { .. } => 5,
            ExperimentError::Run(_) => 6,
        }
    }
}

/// Resolves a built-in model name or loads a model file.
pub fn resolve_model(spec: &str) -> Result<SdeModel, ExperimentError> {
    if let Some(m) = SdeModel::builtin(spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return SdeModel::load(path).map_err(|e| ExperimentError::Config(e.to_string()));
    }
    Err(ExperimentError::UnknownModel(spec.to_string()))
}

/// Runs one experiment, writing its files under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    match config.threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(config))
        }
        Some(_) => Err(ExperimentError::Config("threads must be positive".into())),
        None => dispatch(config),
    }
}

fn dispatch(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    match config.kind {
        ExperimentKind::Rate => run_rate(config),
        ExperimentKind::Moments => run_moments(config),
        ExperimentKind::Compare => run_compare(config),
        ExperimentKind::VerifyAssumptions => run_verify(config),
        ExperimentKind::Oracle => run_oracle(config),
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| ExperimentError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// JSON has no infinities; map them to null explicitly.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn run_rate(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    let model = resolve_model(&config.model)?;
    let levels = config.levels()?;
    config.check_paths()?;
    let t_end = config.single_horizon()?;
    let params = match config.scheme {
        Scheme::TamedAdaptive => {
            let cfg = SchemeConfig::new(0.5, config.h0, config.l0, t_end)?;
            cfg.check_for(&model)?;
            CouplingParams::tam(config.h0, config.l0, t_end)
        }
        Scheme::TamedFixed => CouplingParams::tm(t_end),
    };

    let mut rows = Vec::with_capacity(levels.len());
    let mut csv = String::from("k,delta,n_paths,mse,log2_mse,std_error,mean_fine_steps,mean_coarse_steps\n");
    for &k in &levels {
        let row = estimate_coupled_mse(&model, &params, k, config.n_paths, config.seed)?;
        eprintln!(
            "[rate] {} {} k={k}: mse={:e} failures={}",
            model.name(),
            params.scheme,
            row.mse,
            row.failures
        );
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            row.k,
            row.delta,
            row.n_paths,
            row.mse,
            row.log2_mse,
            row.std_error,
            row.mean_fine_steps,
            row.mean_coarse_steps
        )
        .unwrap();
        rows.push(row);
    }
    write_output(&config.out, "rate.csv", &csv)?;

    let fit = fit_convergence_rate(&rows)?;
    let summary = json!({
        "experiment": "rate",
        "model": model.name(),
        "scheme": params.scheme,
        "T": t_end,
        "k_min": config.k_min,
        "k_max": config.k_max,
        "n_paths": config.n_paths,
        "h0": config.h0,
        "l0": config.l0,
        "seed": config.seed,
        "failures": rows.iter().map(|r| r.failures).sum::<usize>(),
        "slope": fit.slope,
        "intercept": fit.intercept,
        "empirical_rate": fit.empirical_rate,
        "alpha_prime": fit.alpha_prime,
        "r_squared": fit.r_squared,
        "n_points": fit.n_points,
        "theoretical_rate": model.regularity().theoretical_rate(),
    });
    write_output(&config.out, "rate.json", &to_json(&summary))?;
    Ok(summary)
}

fn run_moments(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    let model = resolve_model(&config.model)?;
    config.check_paths()?;
    let horizons = config.horizons()?;
    let mut csv = String::from("T,p,mean_abs_p,std_error\n");
    let mut estimates = Vec::new();
    for &t_end in horizons {
        let cfg = SchemeConfig::for_level(config.moment_k, config.h0, config.l0, t_end)?;
        cfg.check_for(&model)?;
        let est = estimate_moment(&model, &cfg, config.p, config.n_paths, config.seed)?;
        eprintln!(
            "[moments] {} T={t_end}: E|X|^{}={} failures={}",
            model.name(),
            config.p,
            est.mean_abs_p,
            est.failures
        );
        writeln!(csv, "{},{},{},{}", est.t_end, est.p, est.mean_abs_p, est.std_error).unwrap();
        estimates.push(est);
    }
    write_output(&config.out, "moments.csv", &csv)?;
    let summary = json!({
        "experiment": "moments",
        "model": model.name(),
        "delta": crate::scheme::level_delta(config.moment_k),
        "n_paths": config.n_paths,
        "seed": config.seed,
        "estimates": estimates,
    });
    write_output(&config.out, "moments.json", &to_json(&summary))?;
    Ok(summary)
}

fn run_compare(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    let model = resolve_model(&config.model)?;
    let levels = config.levels()?;
    config.check_paths()?;
    let horizons = config.horizons()?.to_vec();
    SchemeConfig::new(0.5, config.h0, config.l0, horizons[0])?.check_for(&model)?;
    let records = compare_schemes(
        &model,
        config.h0,
        config.l0,
        &levels,
        config.n_paths,
        &horizons,
        config.seed,
    )?;
    let mut csv = String::from("scheme,T,k,log2_NT,log2_mse\n");
    for r in &records {
        writeln!(csv, "{},{},{},{},{}", r.scheme, r.t_end, r.k, r.log2_nt, r.log2_mse).unwrap();
    }
    write_output(&config.out, "compare.csv", &csv)?;
    let matched: Vec<Value> = horizons
        .iter()
        .map(|&t| match matched_cost_at_largest(&records, t) {
            Some(m) => json!({
                "T": t,
                "log2_NT": m.log2_nt,
                "tam_log2_mse": m.tam_log2_mse,
                "tm_log2_mse": m.tm_log2_mse,
                "tam_at_or_below_tm": m.tam_log2_mse <= m.tm_log2_mse,
            }),
            None => json!({ "T": t, "log2_NT": null }),
        })
        .collect();
    let summary = json!({
        "experiment": "compare",
        "model": model.name(),
        "n_paths": config.n_paths,
        "seed": config.seed,
        "matched_at_largest_cost": matched,
    });
    write_output(&config.out, "compare.json", &to_json(&summary))?;
    Ok(summary)
}

fn run_verify(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    let model = resolve_model(&config.model)?;
    let g = config.grid;
    let xs = uniform_grid(g.lo, g.hi, g.n);
    let mut pairs = consecutive_pairs(&xs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    pairs.extend((0..config.random_pairs).map(|_| {
        (
            xs[rng.random_range(0..xs.len())],
            xs[rng.random_range(0..xs.len())],
        )
    }));
    let a1 = check_dissipativity(&model, &xs)?;
    let a2 = check_one_sided_lipschitz(&model, &pairs)?;
    eprintln!(
        "[verify] {}: dissipativity holds={} one-sided Lipschitz holds={}",
        model.name(),
        a1.holds,
        a2.holds
    );
    let summary = json!({
        "experiment": "verify-assumptions",
        "model": model.name(),
        "grid": { "lo": g.lo, "hi": g.hi, "n": g.n },
        "regularity": model.regularity(),
        "dissipativity": {
            "holds": a1.holds,
            "worst_x": a1.worst_x,
            "worst_margin": a1.worst_margin,
            "points": a1.points,
        },
        "one_sided_lipschitz": {
            "holds": a2.holds,
            "worst_pair": [a2.worst_pair.0, a2.worst_pair.1],
            "worst_margin": a2.worst_margin,
            "required_lambda": num(a2.required_lambda),
            "pairs": a2.pairs,
        },
    });
    write_output(&config.out, "assumptions.json", &to_json(&summary))?;
    Ok(summary)
}

fn run_oracle(config: &ExperimentConfig) -> Result<Value, ExperimentError> {
    let levels = config.levels()?;
    config.check_paths()?;
    let t_end = config.single_horizon()?;
    let (a, b, x0) = (config.gbm_a, config.gbm_b, config.gbm_x0);
    let mut csv = String::from("k,delta,n_paths,mse,log2_mse,std_error,mean_steps\n");
    let mut rows = Vec::new();
    for &k in &levels {
        let row = estimate_gbm_strong_error(a, b, x0, config.h0, config.l0, k, config.n_paths, t_end, config.seed)?;
        eprintln!("[oracle] gbm k={k}: strong mse={:e}", row.mse);
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.k, row.delta, row.n_paths, row.mse, row.log2_mse, row.std_error, row.mean_steps
        )
        .unwrap();
        rows.push(row);
    }
    write_output(&config.out, "oracle.csv", &csv)?;
    let fit = fit_convergence_rate(&rows)?;
    let summary = json!({
        "experiment": "oracle",
        "model": "gbm",
        "a": a,
        "b": b,
        "x0": x0,
        "T": t_end,
        "k_min": config.k_min,
        "k_max": config.k_max,
        "n_paths": config.n_paths,
        "seed": config.seed,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "strong_order": fit.empirical_rate,
        "r_squared": fit.r_squared,
    });
    write_output(&config.out, "oracle.json", &to_json(&summary))?;
    Ok(summary)
}

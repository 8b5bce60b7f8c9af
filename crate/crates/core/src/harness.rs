//! Monte Carlo driver for the experiment family with CSV output.
//!
//! Each trial draws one dataset of the largest requested size with seed
//! `seed + trial` and evaluates every smaller size on a prefix of it. Errors are
//! measured exactly on the dyadic grid against the population fixed point and
//! capped at `truncation_multiplier · ‖θ*‖²_μ`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    sample_size_grid, ExperimentConfig, InstanceSpec, KernelFamily, LinearPath, ModeSpec,
    RidgeSpec, SolverSpec, WeightSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{
    build_feature_system, build_kernel_matrices, solve_features, solve_lstd, KernelEstimate,
    WeightVector,
};
use crate::mrp::{build_experiment_mrp, Dataset, MrpGrid, MrpInstance};
use crate::oracle::{noise_report, PopulationReport};
use crate::rkhs::KernelSpec;
use crate::theory::{critical_radius, radius_bracket, select_ridge};
use crate::trace::{sa_run, solve_backward};

/// Identifies one curve of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodKey {
    /// MRP instance.
    pub instance: InstanceSpec,
    /// Sampling mode.
    pub mode: ModeSpec,
    /// Weight scheme.
    pub weights: WeightSpec,
    /// Estimator.
    pub solver: SolverSpec,
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tau={:.4};theta={:.4};{};{};{}",
            self.instance.tau, self.instance.theta, self.mode, self.weights, self.solver
        )
    }
}

/// One line of the result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Curve label, see [`MethodKey`].
    pub method: String,
    /// Sample size.
    pub n: usize,
    /// Mean truncated error over successful trials.
    pub mse_mean: f64,
    /// Sample standard deviation over `√trials`.
    pub mse_stderr: f64,
    /// Number of successful trials.
    pub trials: usize,
    /// Number of trials whose solver failed.
    pub failures: usize,
}

/// Population constants and regularization of one curve.
#[derive(Clone, Debug)]
pub struct CurveSummary {
    /// Curve label.
    pub key: MethodKey,
    /// Effective noise level `ζ₀`.
    pub zeta0: f64,
    /// Radius `R` used by the critical-radius inequality.
    pub radius: f64,
    /// Effective discount `γ̄`.
    pub gamma_bar: f64,
    /// `‖θ*‖²_μ`.
    pub theta_norm_sq: f64,
    /// Critical radius per sample size (`NaN` for a fixed ridge).
    pub deltas: Vec<f64>,
    /// Ridge per sample size.
    pub ridges: Vec<f64>,
}

/// Output of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    /// One row per curve and sample size.
    pub rows: Vec<ResultRow>,
    /// Number of capped errors, aligned with `rows`.
    pub truncated: Vec<usize>,
    /// One summary per curve.
    pub curves: Vec<CurveSummary>,
}

impl ExperimentResult {
    /// Rows of one curve in sample-size order.
    pub fn curve(&self, key: &MethodKey) -> Vec<&ResultRow> {
        let label = key.to_string();
        self.rows.iter().filter(|r| r.method == label).collect()
    }

    /// Row of one curve at sample size `n`.
    pub fn row(&self, key: &MethodKey, n: usize) -> Option<&ResultRow> {
        let label = key.to_string();
        self.rows.iter().find(|r| r.method == label && r.n == n)
    }
}

/// Runs one estimator on `data`.
pub fn solve(
    solver: SolverSpec,
    path: LinearPath,
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
    ridge: f64,
) -> Result<KernelEstimate> {
    match solver {
        SolverSpec::Forward => {
            let n_tilde = data.n().saturating_sub(w.look_ahead());
            if path.use_kernel(spec.truncation(), n_tilde) {
                solve_lstd(&build_kernel_matrices(data, mrp, spec, w)?, ridge)
            } else {
                solve_features(&build_feature_system(data, mrp, spec, w)?, ridge)
            }
        }
        SolverSpec::Backward => solve_backward(data, mrp, spec, w, ridge),
        SolverSpec::Sa => sa_run(data, mrp, spec, w, ridge).map(|(est, _)| est),
    }
}

/// Draws a dataset of `n` observations in the given mode.
pub fn sample(mrp: &MrpInstance, mode: ModeSpec, n: usize, seed: u64) -> Result<Dataset> {
    match mode {
        ModeSpec::Path => Ok(mrp.sample_single_path(n, seed)),
        ModeSpec::Iid => Ok(mrp.sample_iid_pairs(n, seed)),
        ModeSpec::Episodes(l) => mrp.sample_episodes(n, l, seed),
    }
}

/// Population quantities needed to regularize and score estimates.
#[derive(Clone, Debug)]
pub struct Reference {
    /// Exact discretization of the instance.
    pub grid: MrpGrid,
    /// Oracle report.
    pub report: PopulationReport,
    /// Feature values `ϕ_j` on the grid cells (`m × J`).
    pub features: DMatrix<f64>,
    /// Radius `R = max(‖β*‖, ‖r‖_∞ / b)`.
    pub radius: f64,
}

impl Reference {
    /// Computes the oracle quantities of `mrp` for kernel `spec`, weights `w` and
    /// episode length `episode_len`.
    pub fn new(
        mrp: &MrpInstance,
        spec: &KernelSpec,
        w: &WeightVector,
        episode_len: Option<usize>,
    ) -> Result<Self> {
        let grid = mrp.discretize(spec.grid_size())?;
        let report = noise_report(&grid, spec, w, episode_len)?;
        let features = spec.feature_matrix(grid.size())?;
        let radius = report.hilbert_norm.max(report.reward_sup / spec.b());
        Ok(Self {
            grid,
            report,
            features,
            radius,
        })
    }

    /// Critical radius `δ_n` at sample size `n`.
    pub fn delta(&self, spec: &KernelSpec, n: usize) -> Result<f64> {
        let (eigs, n, kappa, zeta) = (
            spec.eigenvalues(),
            n as f64,
            spec.kappa(),
            self.report.zeta0,
        );
        let upper = spec
            .b()
            .max(radius_bracket(eigs, n, self.radius, kappa, zeta));
        critical_radius(eigs, n, self.radius, kappa, zeta, upper)
    }

    /// Ridge and critical radius (`NaN` for a fixed ridge) at sample size `n`.
    pub fn ridge(&self, spec: &KernelSpec, ridge: RidgeSpec, n: usize) -> Result<(f64, f64)> {
        match ridge {
            RidgeSpec::Fixed(v) => Ok((v, f64::NAN)),
            RidgeSpec::Rule(rule) => {
                let delta = self.delta(spec, n)?;
                Ok((
                    select_ridge(delta, self.report.gamma_bar, n as f64, rule),
                    delta,
                ))
            }
        }
    }

    /// `‖θ̂ − θ*‖²_μ`.
    pub fn error(&self, est: &KernelEstimate) -> f64 {
        let diff: DVector<f64> = est.coordinates() - &self.report.fixed_point.coordinates;
        let vals = &self.features * diff;
        vals.iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v * v)
            .sum()
    }

    /// `‖θ*‖²_μ`.
    pub fn theta_norm_sq(&self) -> f64 {
        let v = &self.report.fixed_point.values;
        self.grid.inner(v, v)
    }
}

/// Mean and standard error (sample standard deviation over `√count`).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

struct Curve {
    key: MethodKey,
    mrp: MrpInstance,
    spec: KernelSpec,
    w: WeightVector,
    reference: Reference,
    ridges: Vec<f64>,
    deltas: Vec<f64>,
    cap: f64,
}

/// Outcome of one trial at one sample size: `None` on solver failure, else
/// `(error, capped)`.
type Outcome = Option<(f64, bool)>;

impl Curve {
    fn trial(&self, cfg: &ExperimentConfig, sizes: &[usize], index: usize) -> Vec<Outcome> {
        let seed = cfg.seed.wrapping_add(index as u64);
        let full = match sample(&self.mrp, self.key.mode, *sizes.last().unwrap_or(&0), seed) {
            Ok(d) => d,
            Err(_) => return vec![None; sizes.len()],
        };
        sizes
            .iter()
            .zip(&self.ridges)
            .map(|(&n, &ridge)| {
                let data = full.prefix(n);
                solve(
                    cfg.solver,
                    cfg.linear_path,
                    &data,
                    &self.mrp,
                    &self.spec,
                    &self.w,
                    ridge,
                )
                .ok()
                .map(|est| {
                    let err = self.reference.error(&est);
                    if err.is_finite() && err <= self.cap {
                        (err, false)
                    } else {
                        (self.cap, true)
                    }
                })
            })
            .collect()
    }
}

fn prepare(
    cfg: &ExperimentConfig,
    inst: InstanceSpec,
    mode: ModeSpec,
    weights: WeightSpec,
    sizes: &[usize],
) -> Result<Curve> {
    let mrp = build_experiment_mrp(inst.tau, inst.theta, cfg.r0, cfg.gamma)?;
    let spec = cfg.kernel_spec(inst.theta)?;
    let w = weights.build()?;
    let reference = Reference::new(&mrp, &spec, &w, mode.episode_len())?;
    let mut ridges = Vec::with_capacity(sizes.len());
    let mut deltas = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (r, d) = reference.ridge(&spec, cfg.ridge, n)?;
        ridges.push(r);
        deltas.push(d);
    }
    let cap = cfg.truncation_multiplier * reference.theta_norm_sq();
    Ok(Curve {
        key: MethodKey {
            instance: inst,
            mode,
            weights,
            solver: cfg.solver,
        },
        mrp,
        spec,
        w,
        reference,
        ridges,
        deltas,
        cap,
    })
}

/// Runs every curve of `cfg` and aggregates trials in index order.
///
/// The result does not depend on `cfg.threads`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sizes = cfg.sizes();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = ExperimentResult {
        rows: Vec::new(),
        truncated: Vec::new(),
        curves: Vec::new(),
    };
    for &inst in &cfg.instances {
        for &mode in &cfg.modes {
            for &weights in &cfg.weights {
                let curve = prepare(cfg, inst, mode, weights, &sizes)?;
                let outcomes: Vec<Vec<Outcome>> = if cfg.threads <= 1 {
                    (0..cfg.trials)
                        .map(|i| curve.trial(cfg, &sizes, i))
                        .collect()
                } else {
                    pool.install(|| {
                        (0..cfg.trials)
                            .into_par_iter()
                            .map(|i| curve.trial(cfg, &sizes, i))
                            .collect()
                    })
                };
                let label = curve.key.to_string();
                for (j, &n) in sizes.iter().enumerate() {
                    let ok: Vec<(f64, bool)> = outcomes.iter().filter_map(|t| t[j]).collect();
                    let values: Vec<f64> = ok.iter().map(|o| o.0).collect();
                    let (mean, se) = mean_and_stderr(&values);
                    out.rows.push(ResultRow {
                        method: label.clone(),
                        n,
                        mse_mean: mean,
                        mse_stderr: se,
                        trials: values.len(),
                        failures: cfg.trials - values.len(),
                    });
                    out.truncated.push(ok.iter().filter(|o| o.1).count());
                }
                out.curves.push(CurveSummary {
                    key: curve.key,
                    zeta0: curve.reference.report.zeta0,
                    radius: curve.reference.radius,
                    gamma_bar: curve.reference.report.gamma_bar,
                    theta_norm_sq: curve.reference.theta_norm_sq(),
                    deltas: curve.deltas,
                    ridges: curve.ridges,
                });
            }
        }
    }
    Ok(out)
}

/// Named parameter sets of the reported figures.
pub const FIGURES: [&str; 4] = ["fig1a", "fig1b", "fig2a", "fig2b"];

/// Configuration of a named figure; `full_scale` selects 15 sample sizes and 5000 trials.
pub fn figure_preset(name: &str, full_scale: bool) -> Result<ExperimentConfig> {
    let fast = 4f64.exp() / 2.0;
    let slow = 6f64.exp() / 2.0;
    let pi = std::f64::consts::PI;
    let both = |theta: f64| {
        vec![
            InstanceSpec { tau: fast, theta },
            InstanceSpec { tau: slow, theta },
        ]
    };
    let mut cfg = ExperimentConfig {
        name: name.to_string(),
        ..ExperimentConfig::default()
    };
    match name {
        "fig1a" | "fig1b" => {
            cfg.instances = both(if name == "fig1a" { 0.0 } else { pi / 4.0 });
            cfg.modes = vec![ModeSpec::Path, ModeSpec::Iid];
            cfg.weights = vec![WeightSpec::KStep(1)];
            cfg.kernel = KernelFamily::Poly;
            cfg.exponent = 1.2;
            cfg.truncation = 1024;
        }
        "fig2a" | "fig2b" => {
            cfg.instances = if name == "fig2a" {
                vec![
                    InstanceSpec {
                        tau: 2.0,
                        theta: pi / 16.0,
                    },
                    InstanceSpec {
                        tau: slow,
                        theta: 0.0,
                    },
                ]
            } else {
                vec![InstanceSpec {
                    tau: slow,
                    theta: pi / 16.0,
                }]
            };
            cfg.modes = vec![ModeSpec::Path];
            cfg.weights = vec![
                WeightSpec::KStep(1),
                WeightSpec::KStep(5),
                WeightSpec::KStep(10),
            ];
            cfg.kernel = KernelFamily::Exp;
            cfg.truncation = 8;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown figure '{other}' (expected one of {})",
                FIGURES.join(", ")
            )))
        }
    }
    if full_scale {
        cfg.sample_sizes = sample_size_grid(15);
        cfg.trials = 5000;
    }
    Ok(cfg)
}

const HEADER: [&str; 6] = [
    "method",
    "n",
    "mse_mean",
    "mse_stderr",
    "trials",
    "failures",
];

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows to `path`.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// Parses rows written by [`write_csv`].
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Reads rows from `path`.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    parse_csv(std::fs::File::open(path)?)
}

/// Least-squares slope of `log mse_mean` against `log n` over rows of `method`
/// with `n ≥ n_min`.
pub fn fit_loglog_slope(rows: &[ResultRow], method: &str, n_min: usize) -> Result<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.n >= n_min && r.mse_mean > 0.0)
        .map(|r| ((r.n as f64).ln(), r.mse_mean.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs 3 points, found {} for '{method}'",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "slope fit needs distinct sample sizes".into(),
        ));
    }
    Ok(sxy / sxx)
}

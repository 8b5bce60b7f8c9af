//! Backward-view kernel LSTD with eligibility traces and its online
//! stochastic-approximation recursion. Everything runs in feature
//! coordinates `ϕ_j = √μ_j φ_j`, writing `θ = r + Σ_j β_j ϕ_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::{anchor_positions, cells_of, KernelEstimate, WeightVector};
use crate::linalg;
use crate::mrp::{Dataset, MrpInstance};
use crate::rkhs::KernelSpec;

/// Number of rank-one updates between two fresh inversions of `Â_t`.
pub const REFRESH_PERIOD: usize = 256;

/// One backward transition: trace `z_t`, difference `ϕ(x_t) − γ ϕ(x_{t+1})`
/// and target `γ r(x_{t+1})`.
#[derive(Clone, Debug)]
pub struct TraceStep {
    /// Eligibility trace `z_t = Σ_{k<K} (Σ_{ℓ>k} w_ℓ) γ^k ϕ(x_{t-k})`.
    pub trace: DVector<f64>,
    /// Temporal difference of features.
    pub diff: DVector<f64>,
    /// Reward target `γ r(x_{t+1})`.
    pub target: f64,
}

/// Positions `t` (zero-based) that enter the backward sums: the trace needs
/// `K − 1` predecessors and one successor inside the same block.
fn backward_positions(data: &Dataset, w: &WeightVector) -> Result<Vec<usize>> {
    let k = w.look_ahead();
    Ok(anchor_positions(data, k)?
        .into_iter()
        .map(|t| t + k - 1)
        .collect())
}

/// Eligibility traces and temporal differences along the data, in order.
pub fn trace_steps(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<Vec<TraceStep>> {
    let gamma = mrp.gamma();
    let coef = trace_coefficients(w, gamma);
    let bits = spec.grid_bits();
    let fm = spec.feature_matrix(1 << bits)?;
    let cells = cells_of(data.states(), bits);
    let rewards = data.rewards();
    let dim = spec.truncation();
    backward_positions(data, w)?
        .into_iter()
        .map(|t| {
            let mut trace = DVector::zeros(dim);
            for (k, c) in coef.iter().enumerate() {
                trace += fm.row(cells[t - k]).transpose() * *c;
            }
            let diff = (fm.row(cells[t]) - fm.row(cells[t + 1]) * gamma).transpose();
            Ok(TraceStep {
                trace,
                diff,
                target: gamma * rewards[t + 1],
            })
        })
        .collect()
}

/// Trace coefficients `(Σ_{ℓ>k} w_ℓ) γ^k` for `k = 0, …, K-1`.
fn trace_coefficients(w: &WeightVector, gamma: f64) -> Vec<f64> {
    w.tail_sums()
        .iter()
        .enumerate()
        .map(|(k, c)| c * gamma.powi(k as i32))
        .collect()
}

/// Empirical backward operator `Â` and right-hand side, both divided by `ñ`.
#[derive(Clone, Debug)]
pub struct BackwardSystem {
    /// `Â = ñ^{-1} Σ_t z_t (ϕ(x_t) − γ ϕ(x_{t+1}))ᵀ`.
    pub a_hat: DMatrix<f64>,
    /// `ñ^{-1} Σ_t z_t γ r(x_{t+1})`, the right-hand side for `β`.
    pub rhs: DVector<f64>,
    /// Number of transitions `ñ`.
    pub n_tilde: usize,
}

/// Assembles the backward operator with one Walsh–Hadamard transform per column.
pub fn build_backward_system(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<BackwardSystem> {
    let gamma = mrp.gamma();
    let coef = trace_coefficients(w, gamma);
    let pos = backward_positions(data, w)?;
    let nt = pos.len() as f64;
    let bits = spec.grid_bits();
    let m = 1usize << bits;
    let cells = cells_of(data.states(), bits);
    let fm = spec.feature_matrix(m)?;
    let dim = spec.truncation();
    let mut a_hat = DMatrix::zeros(dim, dim);
    let mut g = vec![0.0; m];
    for j in 0..dim {
        let col = fm.column(j);
        g.iter_mut().for_each(|v| *v = 0.0);
        for &t in &pos {
            let d = col[cells[t]] - gamma * col[cells[t + 1]];
            for (k, c) in coef.iter().enumerate() {
                g[cells[t - k]] += c * d;
            }
        }
        a_hat.set_column(j, &(spec.project_cells(&g)? / nt));
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    let rewards = data.rewards();
    for &t in &pos {
        let target = gamma * rewards[t + 1];
        for (k, c) in coef.iter().enumerate() {
            g[cells[t - k]] += c * target;
        }
    }
    let rhs = spec.project_cells(&g)? / nt;
    Ok(BackwardSystem {
        a_hat,
        rhs,
        n_tilde: pos.len(),
    })
}

/// Solves `(Â + λ I) θ = b̂ + λ r`, written for `β = θ − r` as
/// `(Â + λ I) β = ñ^{-1} Σ_t z_t γ r(x_{t+1})`.
pub fn solve_backward(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
    ridge: f64,
) -> Result<KernelEstimate> {
    if !(ridge > 0.0) {
        return Err(Error::Domain(format!("ridge {ridge} must be positive")));
    }
    let sys = build_backward_system(data, mrp, spec, w)?;
    let dim = spec.truncation();
    let beta = linalg::solve(&(sys.a_hat + DMatrix::identity(dim, dim) * ridge), &sys.rhs)?;
    KernelEstimate::from_coordinates(spec, mrp.reward_cells(), beta)
}

/// State of the online recursion.
#[derive(Clone, Debug)]
pub struct TraceState {
    /// Most recent eligibility trace.
    pub z: DVector<f64>,
    /// Accumulated operator `Â_t = ñ λ I + Σ_{s ≤ t} z_s d_sᵀ`.
    pub a: DMatrix<f64>,
    /// Maintained inverse of `Â_t`.
    pub a_inv: DMatrix<f64>,
    /// Current iterate `β_t`.
    pub beta: DVector<f64>,
    /// Number of updates performed.
    pub t: usize,
    /// Largest `‖Â_t Â_t^{-1} − I‖_max` seen right before a refresh.
    pub max_drift: f64,
}

impl TraceState {
    /// Starts from `θ_0 = r` and `Â_0 = ñ λ I`.
    pub fn new(dim: usize, n_tilde: usize, ridge: f64) -> Self {
        let scale = n_tilde as f64 * ridge;
        Self {
            z: DVector::zeros(dim),
            a: DMatrix::identity(dim, dim) * scale,
            a_inv: DMatrix::identity(dim, dim) / scale,
            beta: DVector::zeros(dim),
            t: 0,
            max_drift: 0.0,
        }
    }

    /// Rank-one update with step `c_t = 1/(1 + d_tᵀ Â_{t-1}^{-1} z_t)`:
    /// `β_t = β_{t-1} + c_t Â_{t-1}^{-1} z_t (γ r' + γ β·ϕ(x') − β·ϕ(x))`.
    pub fn update(&mut self, step: &TraceStep) -> Result<()> {
        let u = &self.a_inv * &step.trace;
        let denominator = 1.0 + step.diff.dot(&u);
        if !(denominator > 1e-14) {
            return Err(Error::Breakdown {
                step: self.t,
                denominator,
            });
        }
        let c = 1.0 / denominator;
        let td_error = step.target - step.diff.dot(&self.beta);
        self.beta.axpy(c * td_error, &u, 1.0);
        let v = self.a_inv.tr_mul(&step.diff);
        self.a_inv.ger(-c, &u, &v, 1.0);
        self.a.ger(1.0, &step.trace, &step.diff, 1.0);
        self.z.copy_from(&step.trace);
        self.t += 1;
        if self.t % REFRESH_PERIOD == 0 {
            self.refresh()?;
        }
        Ok(())
    }

    /// Replaces the maintained inverse by a fresh inversion of `Â_t`.
    pub fn refresh(&mut self) -> Result<()> {
        let dim = self.a.nrows();
        let drift = (&self.a * &self.a_inv - DMatrix::identity(dim, dim))
            .abs()
            .max();
        self.max_drift = self.max_drift.max(drift);
        self.a_inv = linalg::inverse(&self.a)?;
        Ok(())
    }
}

/// Runs the online recursion over the whole dataset and returns the final iterate.
pub fn sa_run(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
    ridge: f64,
) -> Result<(KernelEstimate, TraceState)> {
    if !(ridge > 0.0) {
        return Err(Error::Domain(format!("ridge {ridge} must be positive")));
    }
    let steps = trace_steps(data, mrp, spec, w)?;
    let mut state = TraceState::new(spec.truncation(), steps.len(), ridge);
    for step in &steps {
        state.update(step)?;
    }
    let est = KernelEstimate::from_coordinates(spec, mrp.reward_cells(), state.beta.clone())?;
    Ok((est, state))
}

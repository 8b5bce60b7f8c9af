//! Population quantities computed exactly on a dyadic grid: value
//! functions, Bellman operators, the projected fixed point and the noise
//! functionals that drive the estimation error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::WeightVector;
use crate::linalg;
use crate::mrp::MrpGrid;
use crate::rkhs::KernelSpec;

/// Value function `V* = (I − γ P)^{-1} r`.
pub fn value_function(grid: &MrpGrid) -> Result<Vec<f64>> {
    grid.resolvent(grid.gamma(), grid.reward())
}

/// `k`-step Bellman operator `B^k f = Σ_{ℓ<k} γ^ℓ P^ℓ r + γ^k P^k f`.
pub fn bellman_apply(grid: &MrpGrid, f: &[f64], k: usize) -> Vec<f64> {
    let mut g = f.to_vec();
    for _ in 0..k {
        g = step(grid, &g);
    }
    g
}

fn step(grid: &MrpGrid, f: &[f64]) -> Vec<f64> {
    let pf = grid.apply(f);
    grid.reward()
        .iter()
        .zip(pf)
        .map(|(r, v)| r + grid.gamma() * v)
        .collect()
}

/// Weighted Bellman operator `B^w f = Σ_k w_k B^k f`.
pub fn weighted_bellman(grid: &MrpGrid, f: &[f64], w: &WeightVector) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut g = f.to_vec();
    for wk in w.weights() {
        g = step(grid, &g);
        for (o, v) in out.iter_mut().zip(&g) {
            *o += wk * v;
        }
    }
    out
}

/// `L f = Σ_k w_k γ^k P^k f`.
fn discounted_lookahead(grid: &MrpGrid, f: &[f64], w: &WeightVector) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut g = f.to_vec();
    for (i, wk) in w.weights().iter().enumerate() {
        g = grid.apply(&g);
        let c = wk * grid.gamma().powi(i as i32 + 1);
        for (o, v) in out.iter_mut().zip(&g) {
            *o += c * v;
        }
    }
    out
}

/// `Σ_k w_k Σ_{ℓ=1}^{k} γ^ℓ P^ℓ r`.
fn compound_reward(grid: &MrpGrid, w: &WeightVector) -> Vec<f64> {
    let coef = w.reward_coefficients(grid.gamma());
    let mut out = vec![0.0; grid.size()];
    let mut g = grid.reward().to_vec();
    for c in coef {
        g = grid.apply(&g);
        for (o, v) in out.iter_mut().zip(&g) {
            *o += c * v;
        }
    }
    out
}

/// The hypothesis space on a grid: basis values and their Gram matrix.
#[derive(Clone, Debug)]
pub struct GridBasis {
    basis: DMatrix<f64>,
    weighted: DMatrix<f64>,
    gram: DMatrix<f64>,
    eigs: Vec<f64>,
}

impl GridBasis {
    /// Unscaled basis `φ_j` of `spec` on the cells of `grid`.
    pub fn new(grid: &MrpGrid, spec: &KernelSpec) -> Result<Self> {
        let basis = spec.basis_matrix(grid.size())?;
        let mut weighted = basis.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(grid.weights()) {
            row *= *w;
        }
        let gram = basis.transpose() * &weighted;
        Ok(Self {
            basis,
            weighted,
            gram,
            eigs: spec.eigenvalues().to_vec(),
        })
    }

    /// Basis values (`m × J`).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `(⟨φ_j, f⟩_μ)_j`.
    pub fn moments(&self, f: &[f64]) -> DVector<f64> {
        self.weighted.tr_mul(&DVector::from_column_slice(f))
    }

    /// Basis coefficients of the `L²(μ)` projection of `f`.
    pub fn project_coefficients(&self, f: &[f64]) -> Result<DVector<f64>> {
        linalg::solve(&self.gram, &self.moments(f))
    }

    /// `L²(μ)` projection of `f` onto the span of the basis.
    pub fn project(&self, f: &[f64]) -> Result<Vec<f64>> {
        let c = self.project_coefficients(f)?;
        Ok((&self.basis * c).iter().copied().collect())
    }

    /// Function with basis coefficients `c`.
    pub fn synthesize(&self, c: &DVector<f64>) -> Vec<f64> {
        (&self.basis * c).iter().copied().collect()
    }

    /// Feature coordinates `β_j = c_j/√μ_j` from basis coefficients.
    pub fn to_feature_coordinates(&self, c: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            c.len(),
            c.iter().zip(&self.eigs).map(|(v, mu)| v / mu.sqrt()),
        )
    }
}

/// Projected fixed point `θ* = r + Σ_j β_j ϕ_j`.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    /// Values of `θ*` on the grid.
    pub values: Vec<f64>,
    /// Feature coordinates `β` of `θ* − r`.
    pub coordinates: DVector<f64>,
    /// Basis coefficients of `θ* − r`.
    pub coefficients: DVector<f64>,
}

/// Solves `Σ_cov θ* = Σ_cov r + y_0 + C_r θ*` in basis coordinates.
pub fn projected_fixed_point(
    grid: &MrpGrid,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<FixedPoint> {
    let basis = GridBasis::new(grid, spec)?;
    projected_fixed_point_with(grid, &basis, w)
}

/// [`projected_fixed_point`] with a precomputed basis.
pub fn projected_fixed_point_with(
    grid: &MrpGrid,
    basis: &GridBasis,
    w: &WeightVector,
) -> Result<FixedPoint> {
    if w.effective_discount(grid.gamma()) >= 1.0 {
        return Err(Error::Domain("effective discount must be below one".into()));
    }
    let dim = basis.basis.ncols();
    let m = grid.size();
    let mut shifted = DMatrix::zeros(m, dim);
    for j in 0..dim {
        let col: Vec<f64> = basis.basis.column(j).iter().copied().collect();
        shifted.set_column(j, &DVector::from_vec(discounted_lookahead(grid, &col, w)));
    }
    let cross = basis.weighted.transpose() * shifted;
    let y = basis.moments(&compound_reward(grid, w));
    let coefficients = linalg::solve(&(&basis.gram - cross), &y)?;
    let f = basis.synthesize(&coefficients);
    let values = grid.reward().iter().zip(&f).map(|(r, v)| r + v).collect();
    Ok(FixedPoint {
        values,
        coordinates: basis.to_feature_coordinates(&coefficients),
        coefficients,
    })
}

/// `‖Π_H(θ − B^w θ)‖_μ`, which equals `‖θ − Π_H B^w θ‖_μ` whenever `θ` lies in the span.
pub fn fixed_point_residual(
    grid: &MrpGrid,
    basis: &GridBasis,
    w: &WeightVector,
    theta: &[f64],
) -> Result<f64> {
    let bw = weighted_bellman(grid, theta, w);
    let diff: Vec<f64> = theta.iter().zip(&bw).map(|(a, b)| a - b).collect();
    let proj = basis.project(&diff)?;
    Ok(grid.norm(&proj))
}

/// Bellman fluctuation `σ_m(θ) = Σ_ℓ γ^ℓ √E[Var((Σ_{k ≥ ℓ} w_k B^{k-ℓ} θ)(X') | X)]`.
pub fn sigma_m(grid: &MrpGrid, w: &WeightVector, theta: &[f64]) -> f64 {
    let kk = w.look_ahead();
    let mut powers = vec![theta.to_vec()];
    for _ in 1..kk {
        let next = step(grid, powers.last().unwrap());
        powers.push(next);
    }
    (1..=kk)
        .map(|l| {
            let mut g = vec![0.0; theta.len()];
            for k in l..=kk {
                let wk = w.weights()[k - 1];
                for (o, v) in g.iter_mut().zip(&powers[k - l]) {
                    *o += wk * v;
                }
            }
            grid.gamma().powi(l as i32) * grid.conditional_variance(&g).sqrt()
        })
        .sum()
}

/// Mixing penalty `σ_a = 2 √τ ‖res‖_μ (1 + ¼ log(‖res‖_∞/‖res‖_μ))`, or its
/// multi-episode variant `2 ‖res‖_μ min{√L, √τ (1 + ¼ log(…))}`.
pub fn sigma_a(
    residual_norm: f64,
    residual_sup: f64,
    mixing_time: f64,
    episode_len: Option<usize>,
) -> f64 {
    if residual_norm <= 0.0 {
        return 0.0;
    }
    let ratio = (residual_sup / residual_norm).max(1.0);
    let mixing = mixing_time.sqrt() * (1.0 + 0.25 * ratio.ln());
    let factor = match episode_len {
        None => mixing,
        Some(l) => (l as f64).sqrt().min(mixing),
    };
    2.0 * residual_norm * factor
}

/// Population summary of an instance, a kernel and a weight vector.
#[derive(Clone, Debug)]
pub struct PopulationReport {
    /// `V*` on the grid.
    pub value: Vec<f64>,
    /// Projected fixed point.
    pub fixed_point: FixedPoint,
    /// `‖V* − Π_H V*‖_μ`.
    pub vperp_norm: f64,
    /// `‖θ* − V*‖_μ`.
    pub theta_error_norm: f64,
    /// `‖B^w θ* − θ*‖_μ`.
    pub residual_norm: f64,
    /// `‖B^w θ* − θ*‖_∞`.
    pub residual_sup: f64,
    /// `‖Π_H(θ* − B^w θ*)‖_μ`.
    pub fixed_point_residual: f64,
    /// `σ(V*) = √E[Var(V*(X') | X)]`.
    pub sigma_v: f64,
    /// `σ_m(θ*)`.
    pub sigma_m: f64,
    /// `σ_a(θ*)`.
    pub sigma_a: f64,
    /// `ζ_0 = H̄ (σ_m + σ_a)`.
    pub zeta0: f64,
    /// `ζ̃_0 = H σ(V*) + H̄ √max{H, τ} ‖V*_⊥‖_μ`, reported with prefactor one.
    pub zeta0_tilde: f64,
    /// Effective discount `γ̄`.
    pub gamma_bar: f64,
    /// Discount `γ`.
    pub gamma: f64,
    /// Mixing time `τ*`.
    pub mixing_time: f64,
    /// `‖θ* − r‖_H`.
    pub hilbert_norm: f64,
    /// `‖r‖_∞`.
    pub reward_sup: f64,
}

/// Computes every population functional by exact sums on the grid.
///
/// `episode_len` selects the multi-episode form of `σ_a`.
pub fn noise_report(
    grid: &MrpGrid,
    spec: &KernelSpec,
    w: &WeightVector,
    episode_len: Option<usize>,
) -> Result<PopulationReport> {
    let basis = GridBasis::new(grid, spec)?;
    let value = value_function(grid)?;
    let fp = projected_fixed_point_with(grid, &basis, w)?;
    let vproj = basis.project(&value)?;
    let vperp: Vec<f64> = value.iter().zip(&vproj).map(|(a, b)| a - b).collect();
    let theta_err: Vec<f64> = fp.values.iter().zip(&value).map(|(a, b)| a - b).collect();
    let bw = weighted_bellman(grid, &fp.values, w);
    let res: Vec<f64> = bw.iter().zip(&fp.values).map(|(a, b)| a - b).collect();
    let residual_norm = grid.norm(&res);
    let residual_sup = grid.sup_norm(&res);
    let gamma = grid.gamma();
    let gamma_bar = w.effective_discount(gamma);
    let hbar = 1.0 / (1.0 - gamma_bar);
    let h = 1.0 / (1.0 - gamma);
    let tau = grid.mixing_time();
    let sm = sigma_m(grid, w, &fp.values);
    let sa = sigma_a(residual_norm, residual_sup, tau, episode_len);
    let sigma_v = grid.conditional_variance(&value).sqrt();
    let vperp_norm = grid.norm(&vperp);
    Ok(PopulationReport {
        fixed_point_residual: fixed_point_residual(grid, &basis, w, &fp.values)?,
        theta_error_norm: grid.norm(&theta_err),
        hilbert_norm: fp.coordinates.norm(),
        reward_sup: grid.sup_norm(grid.reward()),
        value,
        fixed_point: fp,
        vperp_norm,
        residual_norm,
        residual_sup,
        sigma_v,
        sigma_m: sm,
        sigma_a: sa,
        zeta0: hbar * (sm + sa),
        zeta0_tilde: h * sigma_v + hbar * h.max(tau).sqrt() * vperp_norm,
        gamma_bar,
        gamma,
        mixing_time: tau,
    })
}

/// Slack (right side minus left side) of each population inequality.
#[derive(Clone, Debug)]
pub struct SigmaBounds {
    /// `γ(1-γ̄)/(1-γ) σ(V*) + √(γ(1-γ̄)/(1-γ)) ‖θ* − V*‖_μ − σ_m(θ*)`.
    pub fluctuation: f64,
    /// `2 ‖V*_⊥‖_μ − ‖B^w θ* − θ*‖_μ`.
    pub residual: f64,
    /// `(1-γ̄)^{-1/2} ‖V*_⊥‖_μ − ‖θ* − V*‖_μ`.
    pub fixed_point_gap: f64,
    /// `√τ σ(V*) − ‖V*_⊥‖_μ`.
    pub projection_error: f64,
}

impl SigmaBounds {
    /// Whether the fluctuation and residual inequalities hold up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.fluctuation >= -tol && self.residual >= -tol
    }
}

/// Evaluates both sides of the variance and residual inequalities.
pub fn check_sigma_bounds(report: &PopulationReport) -> SigmaBounds {
    let (g, gb) = (report.gamma, report.gamma_bar);
    let a = g * (1.0 - gb) / (1.0 - g);
    SigmaBounds {
        fluctuation: a * report.sigma_v + a.sqrt() * report.theta_error_norm - report.sigma_m,
        residual: 2.0 * report.vperp_norm - report.residual_norm,
        fixed_point_gap: report.vperp_norm / (1.0 - gb).sqrt() - report.theta_error_norm,
        projection_error: report.mixing_time.sqrt() * report.sigma_v - report.vperp_norm,
    }
}

/// Population backward operator `A = E[z (ϕ(X) − γ ϕ(X'))ᵀ]` in feature
/// coordinates, together with the right-hand side for `β = θ − r`.
pub fn population_backward(
    grid: &MrpGrid,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let gamma = grid.gamma();
    let fm = spec.feature_matrix(grid.size())?;
    let dim = spec.truncation();
    let tails = w.tail_sums();
    let mut weighted = fm.clone();
    for (mut row, mu) in weighted.row_iter_mut().zip(grid.weights()) {
        row *= *mu;
    }
    let diff_of = |f: &[f64]| -> Vec<f64> {
        let pf = grid.apply(f);
        f.iter().zip(&pf).map(|(a, b)| a - gamma * b).collect()
    };
    let lagged = |f: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        let mut g = f.to_vec();
        for (k, c) in tails.iter().enumerate() {
            if k > 0 {
                g = grid.apply(&g);
            }
            let coef = c * gamma.powi(k as i32);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += coef * v;
            }
        }
        out
    };
    let mut a = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let col: Vec<f64> = fm.column(j).iter().copied().collect();
        let g = DVector::from_vec(lagged(&diff_of(&col)));
        a.set_column(j, &weighted.tr_mul(&g));
    }
    let pr: Vec<f64> = grid
        .apply(grid.reward())
        .iter()
        .map(|v| gamma * v)
        .collect();
    let b = weighted.tr_mul(&DVector::from_vec(lagged(&pr)));
    Ok((a, b))
}

/// Forward population operators `(Σ_cov, C_r)` in feature coordinates.
pub fn population_forward(
    grid: &MrpGrid,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let fm = spec.feature_matrix(grid.size())?;
    let mut weighted = fm.clone();
    for (mut row, mu) in weighted.row_iter_mut().zip(grid.weights()) {
        row *= *mu;
    }
    let cov = fm.transpose() * &weighted;
    let mut shifted = DMatrix::zeros(fm.nrows(), fm.ncols());
    for j in 0..fm.ncols() {
        let col: Vec<f64> = fm.column(j).iter().copied().collect();
        shifted.set_column(j, &DVector::from_vec(discounted_lookahead(grid, &col, w)));
    }
    let cross = weighted.transpose() * shifted;
    Ok((cov, cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::make_kstep_weights;
    use crate::mrp::build_experiment_mrp;

    #[test]
    fn constant_reward_value() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let mu = vec![6.0 / 13.0, 7.0 / 13.0];
        let grid = MrpGrid::from_matrix(p.clone(), mu.clone(), vec![2.0, 2.0], 0.8, 1.0).unwrap();
        for v in value_function(&grid).unwrap() {
            assert!((v - 10.0).abs() < 1e-12);
        }
        let grid0 = MrpGrid::from_matrix(p, mu, vec![1.0, -3.0], 0.0, 1.0).unwrap();
        assert_eq!(value_function(&grid0).unwrap(), vec![1.0, -3.0]);
    }

    #[test]
    fn one_step_bellman_of_zero_is_reward() {
        let mrp = build_experiment_mrp(3.0, 0.2, 1.0, 0.9).unwrap();
        let grid = mrp.discretize(8).unwrap();
        assert_eq!(bellman_apply(&grid, &[0.0; 8], 1), grid.reward().to_vec());
    }

    #[test]
    fn permutation_chain_has_no_variance() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let grid =
            MrpGrid::from_matrix(p, vec![1.0 / 3.0; 3], vec![1.0, 0.0, -2.0], 0.9, 1.0).unwrap();
        let v = value_function(&grid).unwrap();
        assert!(grid.conditional_variance(&v) < 1e-20);
        let w = make_kstep_weights(2).unwrap();
        assert!(sigma_m(&grid, &w, &v) < 1e-10);
    }

    #[test]
    fn sigma_a_worked_value() {
        assert!((sigma_a(0.5, 0.5, 4.0, None) - 2.0).abs() < 1e-15);
        assert_eq!(sigma_a(0.0, 0.0, 4.0, None), 0.0);
        assert!((sigma_a(0.5, 0.5, 4.0, Some(2)) - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn well_specified_fixed_point_is_value() {
        let mrp = build_experiment_mrp(27.3, 0.0, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, 16, 0.0).unwrap();
        let grid = mrp.discretize(spec.grid_size()).unwrap();
        let w = make_kstep_weights(1).unwrap();
        let rep = noise_report(&grid, &spec, &w, None).unwrap();
        assert!(rep.theta_error_norm < 1e-10);
        assert!(rep.vperp_norm < 1e-10);
        assert!(rep.sigma_a < 1e-8);
        assert!(rep.fixed_point_residual < 1e-10);
    }
}

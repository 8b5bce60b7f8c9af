//! The minimax-hard instance family: 3-state local chains, their
//! tensorization into a continuous-state chain on `[0, 1)`, a Hamming
//! packing, and numeric certificates for every property the family needs.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{MrpInstance, Transition};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Parameters of the hard family.
#[derive(Clone, Debug)]
pub struct LbParams {
    /// Standard-deviation level `σ̄`.
    pub sigma_bar: f64,
    /// Mis-specification level `ϱ̄_⊥`.
    pub rho_perp: f64,
    /// Mixing time `τ̄*`.
    pub tau_bar: f64,
    /// Discount `γ`.
    pub gamma: f64,
    /// Sample size `n`.
    pub n: f64,
    /// Number of blocks `U` (a power of two).
    pub blocks: usize,
    /// Kernel eigenvalues `μ_1 ≥ μ_2 ≥ …` used for the Hilbert-norm constraint.
    pub eigenvalues: Vec<f64>,
}

impl LbParams {
    /// Parameters with `ϱ̄_⊥` at the midpoint of its admissible interval and
    /// eigenvalues `μ_j = j^{-2}` truncated at `4U`.
    pub fn with_midpoint(sigma_bar: f64, tau_bar: f64, gamma: f64, n: f64, blocks: usize) -> Self {
        let mut p = Self {
            sigma_bar,
            rho_perp: 0.0,
            tau_bar,
            gamma,
            n,
            blocks,
            eigenvalues: (1..=4 * blocks.max(1))
                .map(|j| (j as f64).powi(-2))
                .collect(),
        };
        let (lo, hi) = p.rho_interval();
        p.rho_perp = 0.5 * (lo + hi);
        p
    }

    /// `ς = 1/(8 τ̄*)`.
    pub fn varsigma(&self) -> f64 {
        1.0 / (8.0 * self.tau_bar)
    }

    /// Local discount `γ̃ = γ (1 − ς)`.
    pub fn gamma_tilde(&self) -> f64 {
        self.gamma * (1.0 - self.varsigma())
    }

    /// Horizon `H = 1/(1 − γ)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    /// Statistical dimension attached to the block count, `d_n = 2U`.
    pub fn dimension(&self) -> usize {
        2 * self.blocks
    }

    /// Noise level `ζ̄ = H σ̄ + √τ̄* ϱ̄_⊥`.
    pub fn zeta_bar(&self) -> f64 {
        self.horizon() * self.sigma_bar + self.tau_bar.sqrt() * self.rho_perp
    }

    /// Admissible interval `[σ̄ H √(d/n)/50, σ̄ min{H, √τ̄*}/108]` for `ϱ̄_⊥`.
    pub fn rho_interval(&self) -> (f64, f64) {
        let h = self.horizon();
        let lo = self.sigma_bar * h * (self.dimension() as f64 / self.n).sqrt() / 50.0;
        let hi = self.sigma_bar * h.min(self.tau_bar.sqrt()) / 108.0;
        (lo, hi)
    }

    /// Kernel sup bound `b = 2 √(Σ μ_j)`.
    pub fn kernel_bound(&self) -> f64 {
        2.0 * self.eigenvalues.iter().sum::<f64>().sqrt()
    }

    /// Radius `R̄ = max{2(σ̄ + ϱ̄_⊥)/√μ_2, σ̄/(4b)}`.
    pub fn radius_bar(&self) -> f64 {
        let mu2 = self.eigenvalues.get(1).copied().unwrap_or(f64::NAN);
        (2.0 * (self.sigma_bar + self.rho_perp) / mu2.sqrt())
            .max(self.sigma_bar / (4.0 * self.kernel_bound()))
    }

    /// Per-block perturbations `(Δp, Δq)` for an active block.
    pub fn perturbation(&self) -> (f64, f64) {
        let dq = (self.dimension() as f64 / self.n).sqrt() / 60.0;
        (dq / self.varsigma().sqrt(), dq)
    }

    /// Angle `ϑ̄` of the local feature plane.
    pub fn angle(&self) -> Result<f64> {
        let s = self.varsigma();
        let g = self.gamma;
        let arg = 4.0 * self.rho_perp * (1.0 - g + 5.0 * g * s - 4.0 * g * s * s)
            / (self.sigma_bar * g * (1.0 - s) * (1.0 - 4.0 * s));
        if !(0.0..=1.0).contains(&arg) {
            return Err(Error::Domain(format!(
                "angle argument {arg} is outside [0, 1]"
            )));
        }
        Ok(std::f64::consts::FRAC_PI_2 - 0.5 * arg.asin())
    }

    /// Violated family constraints, empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sigma_bar > 0.0 && self.tau_bar > 0.0 && self.n >= 1.0) {
            out.push("σ̄, τ̄* and n must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) || self.gamma == 0.0 {
            out.push(format!("discount {} is outside (0, 1)", self.gamma));
        }
        if self.blocks < 2 || !self.blocks.is_power_of_two() {
            out.push(format!(
                "block count {} is not a power of two of at least 2",
                self.blocks
            ));
        }
        if self.eigenvalues.len() < 2 * self.blocks {
            out.push("fewer than 2U eigenvalues".into());
        }
        let (lo, hi) = self.rho_interval();
        if self.rho_perp < lo {
            out.push(format!(
                "ϱ̄_⊥ = {} is below the lower limit {lo}",
                self.rho_perp
            ));
        }
        if self.rho_perp > hi {
            out.push(format!(
                "ϱ̄_⊥ = {} is above the upper limit {hi}",
                self.rho_perp
            ));
        }
        if self.tau_bar < self.horizon() {
            out.push(format!(
                "τ̄* = {} is below the horizon {}",
                self.tau_bar,
                self.horizon()
            ));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(v.join("; ")))
        }
    }
}

/// Stationary law `((1+Δp)(1+Δq)/4, (1+Δp)(1−Δq)/4, (1−Δp)/2)`.
pub fn three_state_stationary(dp: f64, dq: f64) -> Vector3<f64> {
    Vector3::new(
        0.25 * (1.0 + dp) * (1.0 + dq),
        0.25 * (1.0 + dp) * (1.0 - dq),
        0.5 * (1.0 - dp),
    )
}

/// Transition matrix `P(Δp, Δq)` with switching level `ς`.
pub fn three_state_matrix(dp: f64, dq: f64, varsigma: f64) -> Matrix3<f64> {
    let a = 0.5 - varsigma * (1.0 - dp);
    let c = varsigma * (1.0 + dp);
    Matrix3::new(
        a * (1.0 + dq),
        a * (1.0 - dq),
        2.0 * varsigma * (1.0 - dp),
        a * (1.0 + dq),
        a * (1.0 - dq),
        2.0 * varsigma * (1.0 - dp),
        c * (1.0 + dq),
        c * (1.0 - dq),
        1.0 - 2.0 * c,
    )
}

/// The base basis `U_0`, orthonormal in `L²((1/4, 1/4, 1/2))`.
pub fn base_basis() -> Matrix3<f64> {
    Matrix3::new(1.0, 1.0, SQRT2, 1.0, 1.0, -SQRT2, 1.0, -1.0, 0.0)
}

/// Basis `U(Δp, Δq)`, orthonormal in `L²(μ(Δp, Δq))`.
pub fn perturbed_basis(dp: f64, dq: f64) -> Matrix3<f64> {
    let a = ((1.0 - dp) / (1.0 + dp)).sqrt();
    Matrix3::new(
        1.0,
        a,
        (2.0 * (1.0 - dq) / ((1.0 + dp) * (1.0 + dq))).sqrt(),
        1.0,
        a,
        -(2.0 * (1.0 + dq) / ((1.0 + dp) * (1.0 - dq))).sqrt(),
        1.0,
        -1.0 / a,
        0.0,
    )
}

/// A local 3-state reward process.
#[derive(Clone, Debug)]
pub struct ThreeStateModel {
    /// `Δp`.
    pub dp: f64,
    /// `Δq`.
    pub dq: f64,
    /// `ς`.
    pub varsigma: f64,
    /// Local discount `γ̃`.
    pub gamma_tilde: f64,
    /// Transition matrix.
    pub p: Matrix3<f64>,
    /// Stationary law.
    pub mu: Vector3<f64>,
    /// Feature vectors `φ̃_1, φ̃_2`.
    pub features: [Vector3<f64>; 2],
    /// Reward `(σ̄/4) φ̃_2`.
    pub reward: Vector3<f64>,
    /// Reward coordinates `ω_r` in the base basis.
    pub omega: Vector3<f64>,
    /// Angle `ϑ̄`.
    pub angle: f64,
}

/// Upper limit on `Δq` for the local estimates to apply.
pub fn dq_limit(params: &LbParams) -> f64 {
    let s = params.varsigma();
    let gt = params.gamma_tilde();
    let c = 1.0 - gt + 4.0 * gt * s;
    (1.0_f64 / 3.0)
        .min(c / (2.0 * (2.0 * s).sqrt()))
        .min(2.0 * SQRT2 * params.rho_perp / (3.0 * params.sigma_bar) * c)
}

/// Builds the local model for `(Δp, Δq)` with the family angle.
pub fn three_state(dp: f64, dq: f64, params: &LbParams) -> Result<ThreeStateModel> {
    three_state_with_angle(dp, dq, params, params.angle()?)
}

/// Builds the local model for `(Δp, Δq)` with an explicit feature angle.
pub fn three_state_with_angle(
    dp: f64,
    dq: f64,
    params: &LbParams,
    angle: f64,
) -> Result<ThreeStateModel> {
    if !(0.0..=1.0 / 3.0).contains(&dp) {
        return Err(Error::Domain(format!("Δp = {dp} is outside [0, 1/3]")));
    }
    let lim = dq_limit(params);
    if !(0.0..=lim).contains(&dq) {
        return Err(Error::Domain(format!("Δq = {dq} is outside [0, {lim}]")));
    }
    let s = params.varsigma();
    let p = three_state_matrix(dp, dq, s);
    let mu = three_state_stationary(dp, dq);
    let residual = (p.transpose() * mu - mu).amax();
    if residual > 1e-12 {
        return Err(Error::Domain(format!(
            "stationarity residual {residual:.2e}"
        )));
    }
    let u0 = base_basis();
    let (c, sn) = (angle.cos(), angle.sin());
    let phi1 = u0.column(0).into_owned();
    let phi2 = u0.column(1) * c + u0.column(2) * sn;
    let omega = Vector3::new(0.0, c, sn) * (params.sigma_bar / 4.0);
    Ok(ThreeStateModel {
        dp,
        dq,
        varsigma: s,
        gamma_tilde: params.gamma_tilde(),
        p,
        mu,
        features: [phi1, phi2],
        reward: u0 * omega,
        omega,
        angle,
    })
}

/// Residuals of the spectral description of a local model.
#[derive(Clone, Copy, Debug)]
pub struct EigenCheck {
    /// `‖P − U diag(1, 1−4ς, 0) Uᵀ diag(μ)‖_F`.
    pub reconstruction: f64,
    /// `‖Uᵀ diag(μ) U − I‖_F`.
    pub orthonormality: f64,
    /// `max_k ‖P u_k − λ_k u_k‖_∞`.
    pub eigenpairs: f64,
}

impl EigenCheck {
    /// Largest of the three residuals.
    pub fn max(&self) -> f64 {
        self.reconstruction
            .max(self.orthonormality)
            .max(self.eigenpairs)
    }
}

/// Reconstructs `P` from its eigenbasis and reports residuals.
pub fn eigendecomp_check(model: &ThreeStateModel) -> EigenCheck {
    let u = perturbed_basis(model.dp, model.dq);
    let d = Matrix3::from_diagonal(&model.mu);
    let lambda = Vector3::new(1.0, 1.0 - 4.0 * model.varsigma, 0.0);
    let rebuilt = u * Matrix3::from_diagonal(&lambda) * u.transpose() * d;
    let eigenpairs = (0..3)
        .map(|k| (model.p * u.column(k) - u.column(k) * lambda[k]).amax())
        .fold(0.0, f64::max);
    EigenCheck {
        reconstruction: (model.p - rebuilt).norm(),
        orthonormality: (u.transpose() * d * u - Matrix3::identity()).norm(),
        eigenpairs,
    }
}

/// Value function of a local model and its split along the feature plane.
#[derive(Clone, Debug)]
pub struct LocalValue {
    /// `V* = (I − γ̃ P)^{-1} r`.
    pub value: Vector3<f64>,
    /// Projection onto `span{φ̃_1, φ̃_2}` in `L²(μ)`.
    pub projected: Vector3<f64>,
    /// `V* − projected`.
    pub perp: Vector3<f64>,
    /// `V*` from the spectral formula.
    pub spectral: Vector3<f64>,
}

fn weighted_norm(v: &Vector3<f64>, mu: &Vector3<f64>) -> f64 {
    v.component_mul(v).dot(mu).sqrt()
}

/// Projects `v` onto `span{f_1, f_2}` in `L²(w)`.
fn project_plane(
    v: &Vector3<f64>,
    f: &[Vector3<f64>; 2],
    w: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let ip = |a: &Vector3<f64>, b: &Vector3<f64>| a.component_mul(b).dot(w);
    let g = DMatrix::from_row_slice(
        2,
        2,
        &[
            ip(&f[0], &f[0]),
            ip(&f[0], &f[1]),
            ip(&f[1], &f[0]),
            ip(&f[1], &f[1]),
        ],
    );
    let rhs = DVector::from_vec(vec![ip(&f[0], v), ip(&f[1], v)]);
    let c = linalg::solve(&g, &rhs)?;
    Ok(f[0] * c[0] + f[1] * c[1])
}

/// Solves for `V*` directly and through the eigenbasis.
pub fn value_3state(model: &ThreeStateModel) -> Result<LocalValue> {
    let gt = model.gamma_tilde;
    let system = Matrix3::identity() - model.p * gt;
    let value = system
        .lu()
        .solve(&model.reward)
        .ok_or_else(|| Error::IllConditioned {
            estimate: f64::INFINITY,
        })?;
    let projected = project_plane(&value, &model.features, &model.mu)?;
    let u = perturbed_basis(model.dp, model.dq);
    let omega_t = u.transpose() * Matrix3::from_diagonal(&model.mu) * base_basis() * model.omega;
    let scale = Vector3::new(
        1.0 / (1.0 - gt),
        1.0 / (1.0 - gt + 4.0 * gt * model.varsigma),
        1.0,
    );
    let spectral = u * omega_t.component_mul(&scale);
    Ok(LocalValue {
        value,
        projected,
        perp: value - projected,
        spectral,
    })
}

/// Greedy maximal `1/4`-packing of the weight-`U/2` vectors of `{0,1}^U`,
/// scanning candidates in lexicographic order.
pub fn build_packing(blocks: usize) -> Result<Vec<Vec<u8>>> {
    if blocks < 2 || !blocks.is_power_of_two() || blocks > 24 {
        return Err(Error::Domain(format!(
            "block count {blocks} must be a power of two in [2, 16]"
        )));
    }
    let half = blocks / 2;
    let min_diff = blocks.div_ceil(4);
    let mut kept: Vec<u32> = Vec::new();
    for code in 0u32..(1u32 << blocks) {
        let bits = code.reverse_bits() >> (32 - blocks);
        if bits.count_ones() as usize != half {
            continue;
        }
        if kept
            .iter()
            .all(|&k| ((k ^ bits).count_ones() as usize) >= min_diff)
        {
            kept.push(bits);
        }
    }
    let m = kept.len();
    if ((m as f64).ln()) < blocks as f64 / 11.0 {
        return Err(Error::Domain(format!(
            "packing of size {m} is below e^(U/11)"
        )));
    }
    Ok(kept
        .into_iter()
        .map(|b| (0..blocks).map(|u| ((b >> u) & 1) as u8).collect())
        .collect())
}

/// Normalized Hamming distance between two boolean vectors.
pub fn hamming(a: &[u8], b: &[u8]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Which local state and block a cell of the `4U`-cell grid belongs to.
fn cell_state(c: usize, blocks: usize) -> (usize, usize) {
    if c < blocks {
        (c, 0)
    } else if c < 2 * blocks {
        (c - blocks, 1)
    } else {
        ((c - 2 * blocks) / 2, 2)
    }
}

/// Fraction of its interval that one grid cell covers.
fn cell_fraction(i: usize) -> f64 {
    if i == 2 {
        0.5
    } else {
        1.0
    }
}

/// One member of the hard family, described on its `4U`-cell grid.
#[derive(Clone, Debug)]
pub struct FamilyMember {
    /// Boolean code `z_m`.
    pub code: Vec<u8>,
    /// Local models, one per block.
    pub blocks: Vec<ThreeStateModel>,
    /// Cell-to-cell transition matrix.
    pub transition: DMatrix<f64>,
    /// Local part `P̃` of the transition, without the `1 − ς` factor.
    pub local: DMatrix<f64>,
    /// Stationary cell masses.
    pub stationary: Vec<f64>,
    /// Reward per cell.
    pub reward: Vec<f64>,
    /// Value function per cell.
    pub value: Vec<f64>,
    /// Projection of the value function onto the hypothesis space.
    pub projected: Vec<f64>,
}

impl FamilyMember {
    /// Continuous-state instance on `[0, 1)`.
    pub fn instance(&self, params: &LbParams) -> Result<MrpInstance> {
        MrpInstance::new(
            Transition::Cells(self.transition.clone()),
            self.reward.clone(),
            self.stationary.clone(),
            params.gamma,
            params.tau_bar,
        )
    }

    /// Sup-norm of `μᵀP − μᵀ`.
    pub fn stationarity_residual(&self) -> f64 {
        let mu = DVector::from_column_slice(&self.stationary);
        (self.transition.tr_mul(&mu) - mu).amax()
    }

    /// Projection error `V* − Π V*`.
    pub fn perp(&self) -> Vec<f64> {
        self.value
            .iter()
            .zip(&self.projected)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Projection of an arbitrary cell function under the member's own law.
    pub fn project(&self, f: &[f64], params: &LbParams) -> Result<Vec<f64>> {
        project_blockwise(f, &self.stationary, &self.blocks[0].features, params.blocks)
    }
}

fn block_vector(f: &[f64], u: usize, blocks: usize) -> Vector3<f64> {
    Vector3::new(f[u], f[blocks + u], f[2 * blocks + 2 * u])
}

fn project_blockwise(
    f: &[f64],
    weights: &[f64],
    features: &[Vector3<f64>; 2],
    blocks: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.len()];
    for u in 0..blocks {
        let w = Vector3::new(
            weights[u],
            weights[blocks + u],
            weights[2 * blocks + 2 * u] + weights[2 * blocks + 2 * u + 1],
        );
        let pr = project_plane(&block_vector(f, u, blocks), features, &w)?;
        for c in 0..f.len() {
            let (cu, i) = cell_state(c, blocks);
            if cu == u {
                out[c] = pr[i];
            }
        }
    }
    Ok(out)
}

/// Assembles the family member indexed by `code`.
pub fn build_full_mrp(code: &[u8], params: &LbParams) -> Result<FamilyMember> {
    params.validate()?;
    let nb = params.blocks;
    if code.len() != nb {
        return Err(Error::Dimension(format!(
            "code has {} entries for {nb} blocks",
            code.len()
        )));
    }
    let angle = params.angle()?;
    let (dp, dq) = params.perturbation();
    let blocks = code
        .iter()
        .map(|&z| three_state_with_angle(dp * z as f64, dq * z as f64, params, angle))
        .collect::<Result<Vec<_>>>()?;
    let s = params.varsigma();
    let m = 4 * nb;
    let mut transition = DMatrix::zeros(m, m);
    let mut local = DMatrix::zeros(m, m);
    for c in 0..m {
        let (u, i) = cell_state(c, nb);
        for c2 in 0..m {
            let (u2, i2) = cell_state(c2, nb);
            let frac = cell_fraction(i2);
            let mix = s * blocks[u2].mu[i2] / nb as f64;
            let loc = if u == u2 { blocks[u].p[(i, i2)] } else { 0.0 };
            local[(c, c2)] = loc * frac;
            transition[(c, c2)] = ((1.0 - s) * loc + mix) * frac;
        }
    }
    let stationary: Vec<f64> = (0..m)
        .map(|c| {
            let (u, i) = cell_state(c, nb);
            blocks[u].mu[i] / nb as f64 * cell_fraction(i)
        })
        .collect();
    let reward: Vec<f64> = (0..m)
        .map(|c| blocks[0].reward[cell_state(c, nb).1])
        .collect();
    let system = DMatrix::identity(m, m) - &transition * params.gamma;
    let value: Vec<f64> = linalg::solve(&system, &DVector::from_column_slice(&reward))?
        .iter()
        .copied()
        .collect();
    let projected = project_blockwise(&value, &stationary, &blocks[0].features, nb)?;
    Ok(FamilyMember {
        code: code.to_vec(),
        blocks,
        transition,
        local,
        stationary,
        reward,
        value,
        projected,
    })
}

/// Lebesgue cell masses on the `4U`-cell grid.
pub fn lebesgue_cells(blocks: usize) -> Vec<f64> {
    vec![1.0 / (4 * blocks) as f64; 4 * blocks]
}

fn chi2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / b)
        .sum()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Divergences between two members.
#[derive(Clone, Copy, Debug)]
pub struct Divergences {
    /// `χ²(μ_m ‖ μ_m′)` computed directly.
    pub chi2_stationary: f64,
    /// `2/U Σ_u {(Δp_m − Δp_m′)² + (Δq_m − Δq_m′)²}`.
    pub chi2_stationary_bound: f64,
    /// `E_{μ_m} χ²(P̃_m(·|X) ‖ P̃_m′(·|X))` computed directly.
    pub chi2_local: f64,
    /// `12/U Σ_u {ς (Δp_m − Δp_m′)² + (Δq_m − Δq_m′)²}`.
    pub chi2_local_bound: f64,
    /// `(1 + 2nς) χ²_stat + 2n(1 − ς) χ²_local` with direct divergences.
    pub kl_bound_direct: f64,
    /// The same bound with both divergences replaced by their bounds.
    pub kl_bound: f64,
    /// Exact trajectory divergence `KL(μ_m‖μ_m′) + n E_{μ_m} KL(P_m(·|X) ‖ P_m′(·|X))`.
    pub kl_exact: f64,
}

/// Stationary, transition and trajectory divergences between two members.
pub fn divergence_certificates(
    a: &FamilyMember,
    b: &FamilyMember,
    params: &LbParams,
) -> Divergences {
    let n = params.n;
    let s = params.varsigma();
    let nb = params.blocks as f64;
    let chi2_stationary = chi2(&a.stationary, &b.stationary);
    let row = |mat: &DMatrix<f64>, c: usize| -> Vec<f64> { mat.row(c).iter().copied().collect() };
    let mut chi2_local = 0.0;
    let mut kl_rows = 0.0;
    for c in 0..a.stationary.len() {
        chi2_local += a.stationary[c] * chi2(&row(&a.local, c), &row(&b.local, c));
        kl_rows += a.stationary[c] * kl(&row(&a.transition, c), &row(&b.transition, c));
    }
    let (mut sp, mut sq) = (0.0, 0.0);
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        sp += (x.dp - y.dp).powi(2);
        sq += (x.dq - y.dq).powi(2);
    }
    let chi2_stationary_bound = 2.0 / nb * (sp + sq);
    let chi2_local_bound = 12.0 / nb * (s * sp + sq);
    let combine = |stat: f64, loc: f64| (1.0 + 2.0 * n * s) * stat + 2.0 * n * (1.0 - s) * loc;
    Divergences {
        chi2_stationary,
        chi2_stationary_bound,
        chi2_local,
        chi2_local_bound,
        kl_bound_direct: combine(chi2_stationary, chi2_local),
        kl_bound: combine(chi2_stationary_bound, chi2_local_bound),
        kl_exact: kl(&a.stationary, &b.stationary) + n * kl_rows,
    }
}

/// `‖V*_{H,m} − V*_{H,m′}‖_{μ̄}` under Lebesgue measure.
pub fn value_gap(a: &FamilyMember, b: &FamilyMember) -> f64 {
    let w = 1.0 / a.projected.len() as f64;
    a.projected
        .iter()
        .zip(&b.projected)
        .map(|(x, y)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-block gaps `‖V_{H,m}^{(u)} − V_{H,m′}^{(u)}‖_{μ_0}` of the local models.
pub fn local_value_gaps(a: &FamilyMember, b: &FamilyMember) -> Result<Vec<f64>> {
    let mu0 = three_state_stationary(0.0, 0.0);
    a.blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| {
            let vx = value_3state(x)?.projected;
            let vy = value_3state(y)?.projected;
            Ok(weighted_norm(&(vx - vy), &mu0))
        })
        .collect()
}

/// Largest discrepancy in `⟨f, Δ_A⟩_{μ_m} = ⟨f, V*_{⊥,m′}⟩_{μ_m − μ_m′}` over the
/// first two features, where `Δ_A = (Π_{μ_m} − Π_{μ_m′}) V*_{m′}`.
pub fn approximation_identity_residual(
    a: &FamilyMember,
    b: &FamilyMember,
    params: &LbParams,
) -> Result<f64> {
    let nb = params.blocks;
    let cross = project_blockwise(&b.value, &a.stationary, &a.blocks[0].features, nb)?;
    let delta: Vec<f64> = cross.iter().zip(&b.projected).map(|(x, y)| x - y).collect();
    let perp = b.perp();
    let mut worst: f64 = 0.0;
    for feat in &a.blocks[0].features {
        let f: Vec<f64> = (0..4 * nb).map(|c| feat[cell_state(c, nb).1]).collect();
        let lhs: f64 = (0..f.len())
            .map(|c| a.stationary[c] * f[c] * delta[c])
            .sum();
        let rhs: f64 = (0..f.len())
            .map(|c| (a.stationary[c] - b.stationary[c]) * f[c] * perp[c])
            .sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Squared Hilbert norm of a blockwise function `a_u φ̃_1 + b_u φ̃_2` in the
/// feature basis `φ_{2j+i}(x) = φ̃_i(state) w_j(block)`.
pub fn hilbert_norm(member: &FamilyMember, params: &LbParams) -> Result<f64> {
    let nb = params.blocks;
    let mu0 = three_state_stationary(0.0, 0.0);
    let feats = &member.blocks[0].features;
    let mut ca = vec![0.0; nb];
    let mut cb = vec![0.0; nb];
    for u in 0..nb {
        let v = block_vector(&member.projected, u, nb);
        let w = project_coefficients(&v, feats, &mu0)?;
        ca[u] = w.0;
        cb[u] = w.1;
    }
    linalg::fwht(&mut ca);
    linalg::fwht(&mut cb);
    let bits = nb.trailing_zeros();
    let mut total = 0.0;
    for j in 0..nb {
        let k = linalg::bit_reverse(j, bits);
        let (fa, fb) = (ca[k] / nb as f64, cb[k] / nb as f64);
        total += fa * fa / params.eigenvalues[2 * j] + fb * fb / params.eigenvalues[2 * j + 1];
    }
    Ok(total.sqrt())
}

fn project_coefficients(
    v: &Vector3<f64>,
    f: &[Vector3<f64>; 2],
    w: &Vector3<f64>,
) -> Result<(f64, f64)> {
    let ip = |a: &Vector3<f64>, b: &Vector3<f64>| a.component_mul(b).dot(w);
    let g = DMatrix::from_row_slice(
        2,
        2,
        &[
            ip(&f[0], &f[0]),
            ip(&f[0], &f[1]),
            ip(&f[1], &f[0]),
            ip(&f[1], &f[1]),
        ],
    );
    let c = linalg::solve(&g, &DVector::from_vec(vec![ip(&f[0], v), ip(&f[1], v)]))?;
    Ok((c[0], c[1]))
}

/// One certified property.
#[derive(Clone, Debug)]
pub struct Certificate {
    /// Property name.
    pub name: String,
    /// Observed value.
    pub value: f64,
    /// Threshold the value is compared with.
    pub limit: f64,
    /// Comparison direction: `true` when the value must not exceed the limit.
    pub upper: bool,
    /// Whether the property holds.
    pub passed: bool,
}

impl Certificate {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            upper: true,
            passed: value <= limit,
        }
    }

    fn above(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            upper: false,
            passed: value > limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            upper: false,
            passed: value >= limit,
        }
    }

    /// Signed margin, positive when the property holds.
    pub fn slack(&self) -> f64 {
        if self.upper {
            self.limit - self.value
        } else {
            self.value - self.limit
        }
    }
}

/// The assembled family with its packing.
#[derive(Clone, Debug)]
pub struct HardFamily {
    /// Parameters.
    pub params: LbParams,
    /// Members, one per packing vector.
    pub members: Vec<FamilyMember>,
}

impl HardFamily {
    /// Builds every member of the packing.
    pub fn new(params: LbParams) -> Result<Self> {
        params.validate()?;
        let members = build_packing(params.blocks)?
            .iter()
            .map(|z| build_full_mrp(z, &params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, members })
    }

    /// Family size `M`.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Evaluates every certificate.
    pub fn certify(&self) -> Result<Vec<Certificate>> {
        let p = &self.params;
        let s = p.varsigma();
        let d = p.dimension() as f64;
        let zeta = p.zeta_bar();
        let leb = lebesgue_cells(p.blocks);
        let mut local_stat: f64 = 0.0;
        let mut eig: f64 = 0.0;
        let mut full_stat: f64 = 0.0;
        let mut ratio_lo = f64::INFINITY;
        let mut ratio_hi: f64 = 0.0;
        let mut minor = f64::INFINITY;
        let mut hnorm: f64 = 0.0;
        let mut sup_r: f64 = 0.0;
        let mut cond_var: f64 = 0.0;
        let mut perp: f64 = 0.0;
        let mut chi_leb: f64 = 0.0;
        let mut spectral: f64 = 0.0;
        for m in &self.members {
            for b in &m.blocks {
                local_stat = local_stat.max((b.p.transpose() * b.mu - b.mu).amax());
                eig = eig.max(eigendecomp_check(b).max());
                let lv = value_3state(b)?;
                spectral = spectral.max((lv.value - lv.spectral).amax());
            }
            full_stat = full_stat.max(m.stationarity_residual());
            for (mu, l) in m.stationary.iter().zip(&leb) {
                ratio_lo = ratio_lo.min(mu / l);
                ratio_hi = ratio_hi.max(mu / l);
            }
            for c in 0..leb.len() {
                for c2 in 0..leb.len() {
                    minor = minor.min(m.transition[(c, c2)] - s * m.stationary[c2]);
                }
            }
            hnorm = hnorm.max(hilbert_norm(m, p)?);
            sup_r = sup_r.max(m.reward.iter().fold(0.0, |a: f64, v| a.max(v.abs())));
            let grid = m.instance(p)?.discretize(leb.len())?;
            cond_var = cond_var.max(grid.conditional_variance(&m.value));
            perp = perp.max(grid.norm(&m.perp()));
            chi_leb = chi_leb.max(chi2(&m.stationary, &leb));
        }
        let mut kl_bound: f64 = 0.0;
        let mut kl_direct: f64 = 0.0;
        let mut kl_exact: f64 = 0.0;
        let mut gap_lo = f64::INFINITY;
        let mut gap_hi: f64 = 0.0;
        let mut local_lo = f64::INFINITY;
        let mut local_hi: f64 = 0.0;
        let mut identity: f64 = 0.0;
        for (ia, a) in self.members.iter().enumerate() {
            for (ib, b) in self.members.iter().enumerate() {
                if ia == ib {
                    continue;
                }
                let dv = divergence_certificates(a, b, p);
                kl_bound = kl_bound.max(dv.kl_bound);
                kl_direct = kl_direct.max(dv.kl_bound_direct);
                kl_exact = kl_exact.max(dv.kl_exact);
                if ia < ib {
                    let dq: f64 = a
                        .blocks
                        .iter()
                        .zip(&b.blocks)
                        .map(|(x, y)| (x.dq - y.dq).powi(2))
                        .sum::<f64>()
                        / p.blocks as f64;
                    let ratio = value_gap(a, b) / (zeta * dq.sqrt());
                    gap_lo = gap_lo.min(ratio);
                    gap_hi = gap_hi.max(ratio);
                    for ((x, y), g) in a.blocks.iter().zip(&b.blocks).zip(local_value_gaps(a, b)?) {
                        let diff = (x.dq - y.dq).abs();
                        if diff > 0.0 {
                            local_lo = local_lo.min(g / (zeta * diff));
                            local_hi = local_hi.max(g / (zeta * diff));
                        }
                    }
                    identity = identity.max(approximation_identity_residual(a, b, p)?);
                }
            }
        }
        let (rho_lo, rho_hi) = p.rho_interval();
        let (dp, dq) = p.perturbation();
        let radius = p.radius_bar();
        Ok(vec![
            Certificate::at_least(
                "packing_log_size",
                (self.size() as f64).ln(),
                p.blocks as f64 / 11.0,
            ),
            Certificate::at_most("local_stationarity_residual", local_stat, 1e-10),
            Certificate::at_most("full_stationarity_residual", full_stat, 1e-10),
            Certificate::at_most("eigendecomposition_residual", eig, 1e-12),
            Certificate::at_most("spectral_value_residual", spectral, 1e-10),
            Certificate::at_least("density_ratio_min", ratio_lo, 0.5),
            Certificate::at_most("density_ratio_max", ratio_hi, 2.0),
            Certificate::at_least("minorization_slack", minor, -1e-15),
            Certificate::at_most("kl_trajectory_bound", kl_bound, d / 45.0),
            Certificate::at_most("kl_trajectory_bound_direct", kl_direct, d / 45.0),
            Certificate::at_most("kl_trajectory_exact", kl_exact, kl_direct),
            Certificate::above("value_gap_ratio_min", gap_lo, 0.0),
            Certificate::at_most("value_gap_ratio_max", gap_hi, 10.0),
            Certificate::above("local_value_gap_ratio_min", local_lo, 0.0),
            Certificate::at_most("local_value_gap_ratio_max", local_hi, 10.0),
            Certificate::at_most("approximation_identity_residual", identity, 1e-10),
            Certificate::at_most("hilbert_norm", hnorm, radius),
            Certificate::at_most("reward_sup_over_b", sup_r / p.kernel_bound(), radius),
            Certificate::at_most("conditional_variance", cond_var, p.sigma_bar * p.sigma_bar),
            Certificate::at_most("misspecification", perp, p.rho_perp),
            Certificate::at_most("chi2_to_lebesgue", chi_leb, p.tau_bar * d / (200.0 * p.n)),
            Certificate::at_least("rho_lower_limit", p.rho_perp, rho_lo),
            Certificate::at_most("rho_upper_limit", p.rho_perp, rho_hi),
            Certificate::at_least("mixing_time_over_horizon", p.tau_bar, p.horizon()),
            Certificate::at_most("dp_limit", dp, 1.0 / 3.0),
            Certificate::at_most("dq_limit", dq, dq_limit(p)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LbParams {
        LbParams::with_midpoint(1.0, 20.0, 0.9, 1e4, 8)
    }

    #[test]
    fn base_stationary_law() {
        let m = three_state(0.0, 0.0, &params()).unwrap();
        assert!((m.mu - Vector3::new(0.25, 0.25, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn uniform_stationary_law() {
        let mu = three_state_stationary(1.0 / 3.0, 0.0);
        assert!((mu - Vector3::repeat(1.0 / 3.0)).amax() < 1e-15);
        let p = three_state_matrix(1.0 / 3.0, 0.0, 1.0 / 16.0);
        assert!((p.transpose() * mu - mu).amax() < 1e-15);
    }

    #[test]
    fn spectrum_of_base_model() {
        let mut p = params();
        p.tau_bar = 1.0;
        let m = three_state_with_angle(0.0, 0.0, &p, 0.3).unwrap();
        assert!((1.0 - 4.0 * m.varsigma - 0.5).abs() < 1e-15);
        assert!(eigendecomp_check(&m).max() < 1e-12);
    }

    #[test]
    fn value_matches_neumann_series() {
        let m = three_state(0.0, 0.0, &params()).unwrap();
        let v = value_3state(&m).unwrap();
        let mut acc = Vector3::zeros();
        let mut term = m.reward;
        for _ in 0..2000 {
            acc += term;
            term = m.p * term * m.gamma_tilde;
        }
        assert!((acc - v.value).amax() < 1e-12);
        assert!((v.value - v.spectral).amax() < 1e-10);
    }

    #[test]
    fn aligned_reward_is_well_specified() {
        let m = three_state_with_angle(0.0, 0.0, &params(), std::f64::consts::FRAC_PI_2).unwrap();
        let v = value_3state(&m).unwrap();
        assert!(weighted_norm(&v.perp, &m.mu) < 1e-12);
    }

    #[test]
    fn base_misspecification_is_bounded() {
        let p = params();
        let m = three_state(0.0, 0.0, &p).unwrap();
        let v = value_3state(&m).unwrap();
        assert!(weighted_norm(&v.perp, &m.mu) <= p.rho_perp);
    }

    #[test]
    fn packing_examples() {
        assert_eq!(build_packing(4).unwrap().len(), 6);
        let two = build_packing(2).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.contains(&vec![1, 0]) && two.contains(&vec![0, 1]));
        let eight = build_packing(8).unwrap();
        assert!(eight.len() >= 3);
        for (i, a) in eight.iter().enumerate() {
            assert_eq!(a.iter().map(|&v| v as usize).sum::<usize>(), 4);
            for b in &eight[i + 1..] {
                assert!(hamming(a, b) >= 0.25);
            }
        }
    }

    #[test]
    fn zero_code_gives_base_blocks() {
        let p = params();
        let m = build_full_mrp(&[0; 8], &p).unwrap();
        for mu in &m.stationary {
            assert!((mu - 1.0 / 32.0).abs() < 1e-15);
        }
        assert!(m.stationarity_residual() < 1e-15);
        let d = divergence_certificates(&m, &m, &p);
        assert_eq!(d.chi2_stationary, 0.0);
        assert_eq!(d.kl_exact, 0.0);
        assert_eq!(value_gap(&m, &m), 0.0);
    }

    #[test]
    fn gap_scales_with_perturbation() {
        let p = params();
        let mut q = p.clone();
        q.n = p.n * 4.0;
        let a = [1, 1, 1, 1, 0, 0, 0, 0];
        let b = [0, 0, 0, 0, 1, 1, 1, 1];
        let g1 = value_gap(
            &build_full_mrp(&a, &p).unwrap(),
            &build_full_mrp(&b, &p).unwrap(),
        );
        let g2 = value_gap(
            &build_full_mrp(&a, &q).unwrap(),
            &build_full_mrp(&b, &q).unwrap(),
        );
        assert!((g1 / g2 - 2.0).abs() < 0.05, "ratio {}", g1 / g2);
    }

    #[test]
    fn approximation_identity_holds() {
        let p = params();
        let a = build_full_mrp(&[1, 1, 0, 0, 1, 0, 1, 0], &p).unwrap();
        let b = build_full_mrp(&[0, 1, 1, 0, 0, 1, 1, 0], &p).unwrap();
        assert!(approximation_identity_residual(&a, &b, &p).unwrap() < 1e-10);
    }
}

//! Multi-step weight vectors and the forward kernel-LSTD estimator, solved
//! either in kernel coordinates (one coefficient per anchor state) or in
//! feature coordinates (one coefficient per eigenfunction).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{Dataset, MrpInstance};
use crate::rkhs::KernelSpec;

const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Weights `w_1, …, w_K` of a multi-step Bellman operator `Σ_k w_k B^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    /// Validates a weight vector on the probability simplex.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Domain("weight vector must be nonempty".into()));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { w })
    }

    /// Pure `K`-step weights `e_K`.
    pub fn kstep(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("look-ahead must be at least 1".into()));
        }
        let mut w = vec![0.0; k];
        w[k - 1] = 1.0;
        Self::new(w)
    }

    /// `K`-truncated TD(λ) weights `(1-λ)/(1-λ^K) · (1, λ, …, λ^{K-1})`.
    pub fn td_lambda(k: usize, lambda: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("look-ahead must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Domain(format!(
                "trace parameter {lambda} is outside [0, 1)"
            )));
        }
        let raw: Vec<f64> = (0..k).map(|i| lambda.powi(i as i32)).collect();
        let total: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|v| v / total).collect())
    }

    /// Look-ahead `K`.
    pub fn look_ahead(&self) -> usize {
        self.w.len()
    }

    /// Weights `w_1, …, w_K`.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Effective discount `γ̄ = Σ_k w_k γ^k`.
    pub fn effective_discount(&self, gamma: f64) -> f64 {
        self.w
            .iter()
            .enumerate()
            .map(|(i, w)| w * gamma.powi(i as i32 + 1))
            .sum()
    }

    /// Effective timescale `H̄ = 1/(1-γ̄)`.
    pub fn effective_horizon(&self, gamma: f64) -> f64 {
        1.0 / (1.0 - self.effective_discount(gamma))
    }

    /// Tail sums `Σ_{ℓ>k} w_ℓ` for `k = 0, …, K-1`.
    pub fn tail_sums(&self) -> Vec<f64> {
        (0..self.w.len())
            .map(|k| self.w[k..].iter().sum())
            .collect()
    }

    /// Discounted weights `w_k γ^k` for `k = 1, …, K`.
    pub fn discounted(&self, gamma: f64) -> Vec<f64> {
        self.w
            .iter()
            .enumerate()
            .map(|(i, w)| w * gamma.powi(i as i32 + 1))
            .collect()
    }

    /// Coefficients `Σ_{k ≥ ℓ} w_k γ^ℓ` of the reward `r(x_{t+ℓ})` in the
    /// compound return, for `ℓ = 1, …, K`.
    pub fn reward_coefficients(&self, gamma: f64) -> Vec<f64> {
        (1..=self.w.len())
            .map(|l| self.w[l - 1..].iter().sum::<f64>() * gamma.powi(l as i32))
            .collect()
    }
}

/// Pure `K`-step weights.
pub fn make_kstep_weights(k: usize) -> Result<WeightVector> {
    WeightVector::kstep(k)
}

/// `K`-truncated TD(λ) weights.
pub fn make_td_lambda_weights(k: usize, lambda: f64) -> Result<WeightVector> {
    WeightVector::td_lambda(k, lambda)
}

/// Effective discount `γ̄ = Σ_k w_k γ^k`.
pub fn effective_discount(w: &WeightVector, gamma: f64) -> f64 {
    w.effective_discount(gamma)
}

/// Closed form of the TD(λ) effective discount
/// `γ(1-λ)/(1-λγ) · (1-λ^Kγ^K)/(1-λ^K)`.
pub fn td_lambda_discount(k: usize, lambda: f64, gamma: f64) -> f64 {
    if lambda == 0.0 {
        return gamma;
    }
    let kk = k as i32;
    gamma * (1.0 - lambda) / (1.0 - lambda * gamma) * (1.0 - (lambda * gamma).powi(kk))
        / (1.0 - lambda.powi(kk))
}

/// Limit of the TD(λ) effective discount as `K → ∞`: `γ(1-λ)/(1-λγ)`.
pub fn td_lambda_discount_limit(lambda: f64, gamma: f64) -> f64 {
    gamma * (1.0 - lambda) / (1.0 - lambda * gamma)
}

/// Positions `t` such that `t + K` lies in the same block as `t`.
pub fn anchor_positions(data: &Dataset, look_ahead: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (start, end) in data.blocks() {
        if end - start > look_ahead {
            out.extend(start..end - look_ahead);
        }
    }
    if let Some(l) = data.episode_len() {
        if look_ahead >= l {
            return Err(Error::InsufficientData(format!(
                "look-ahead {look_ahead} exceeds what blocks of length {l} provide"
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "need more than {look_ahead} consecutive states"
        )));
    }
    Ok(out)
}

/// Compound returns `Σ_k w_k Σ_{ℓ=1}^{k} γ^ℓ r(x_{t+ℓ})` at each anchor.
fn compound_returns(data: &Dataset, anchors: &[usize], w: &WeightVector, gamma: f64) -> Vec<f64> {
    let coef = w.reward_coefficients(gamma);
    let r = data.rewards();
    anchors
        .iter()
        .map(|&t| coef.iter().enumerate().map(|(i, c)| c * r[t + i + 1]).sum())
        .collect()
}

/// Kernel covariance, cross-covariance and compound-reward vector.
#[derive(Clone, Debug)]
pub struct KernelMatrices {
    /// `K_cov(i, j) = K(x_i, x_j)/ñ`.
    pub cov: DMatrix<f64>,
    /// `K_cr(i, j) = Σ_k w_k γ^k K(x_{i+k}, x_j)/ñ`.
    pub cross: DMatrix<f64>,
    /// `y(i) = ñ^{-1/2} Σ_k w_k Σ_{ℓ ≤ k} γ^ℓ r(x_{i+ℓ})`.
    pub y: DVector<f64>,
    /// Anchor states `x_1, …, x_ñ`.
    pub anchors: Vec<f64>,
    spec: KernelSpec,
    reward: Vec<f64>,
}

impl KernelMatrices {
    /// Number of anchors `ñ`.
    pub fn n_tilde(&self) -> usize {
        self.anchors.len()
    }
}

/// Assembles the kernel matrices by direct kernel evaluation.
pub fn build_kernel_matrices(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<KernelMatrices> {
    let gamma = mrp.gamma();
    let pos = anchor_positions(data, w.look_ahead())?;
    let nt = pos.len();
    let states = data.states();
    let disc = w.discounted(gamma);
    let mut cov = DMatrix::zeros(nt, nt);
    for i in 0..nt {
        for j in 0..=i {
            let v = spec.kernel_eval(states[pos[i]], states[pos[j]])? / nt as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut cross = DMatrix::zeros(nt, nt);
    for i in 0..nt {
        for j in 0..nt {
            let mut v = 0.0;
            for (k, c) in disc.iter().enumerate() {
                if *c != 0.0 {
                    v += c * spec.kernel_eval(states[pos[i] + k + 1], states[pos[j]])?;
                }
            }
            cross[(i, j)] = v / nt as f64;
        }
    }
    let scale = 1.0 / (nt as f64).sqrt();
    let y = DVector::from_vec(
        compound_returns(data, &pos, w, gamma)
            .into_iter()
            .map(|v| v * scale)
            .collect(),
    );
    Ok(KernelMatrices {
        cov,
        cross,
        y,
        anchors: pos.iter().map(|&t| states[t]).collect(),
        spec: spec.clone(),
        reward: mrp.reward_cells().to_vec(),
    })
}

fn check_ridge(ridge: f64) -> Result<()> {
    if ridge > 0.0 && ridge.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("ridge {ridge} must be positive")))
    }
}

/// Solves `(K_cov + λ I − K_cr) α = y` and returns the estimate
/// `θ̂ = r + ñ^{-1/2} Σ_t α_t K(·, x_t)`.
pub fn solve_lstd(mats: &KernelMatrices, ridge: f64) -> Result<KernelEstimate> {
    check_ridge(ridge)?;
    let nt = mats.n_tilde();
    let system = &mats.cov - &mats.cross + DMatrix::identity(nt, nt) * ridge;
    let alpha = linalg::solve(&system, &mats.y)?;
    let residual = (&system * &alpha - &mats.y).norm();
    if residual > 1e-10 * mats.y.norm().max(f64::MIN_POSITIVE) && residual > 1e-300 {
        return Err(Error::IllConditioned {
            estimate: residual / mats.y.norm(),
        });
    }
    let scale = 1.0 / (nt as f64).sqrt();
    let mut beta = DVector::zeros(mats.spec.truncation());
    for (a, &x) in alpha.iter().zip(&mats.anchors) {
        beta.axpy(a * scale, &mats.spec.feature_map(x)?, 1.0);
    }
    Ok(KernelEstimate {
        spec: mats.spec.clone(),
        reward: mats.reward.clone(),
        beta,
        kernel_form: Some((mats.anchors.clone(), alpha)),
    })
}

/// Empirical operators in feature coordinates.
#[derive(Clone, Debug)]
pub struct FeatureSystem {
    /// `Σ̂ = ñ^{-1} Σ_t ϕ(x_t) ϕ(x_t)ᵀ`.
    pub cov: DMatrix<f64>,
    /// `Ĉ = ñ^{-1} Σ_t ϕ(x_t) (Σ_k w_k γ^k ϕ(x_{t+k}))ᵀ`.
    pub cross: DMatrix<f64>,
    /// `ŷ = ñ^{-1} Σ_t ϕ(x_t) Σ_k w_k Σ_{ℓ ≤ k} γ^ℓ r(x_{t+ℓ})`.
    pub y: DVector<f64>,
    /// Number of anchors `ñ`.
    pub n_tilde: usize,
    spec: KernelSpec,
    reward: Vec<f64>,
}

/// Grid cell of each state on a `2^bits`-cell dyadic grid.
pub(crate) fn cells_of(states: &[f64], bits: u32) -> Vec<usize> {
    let m = 1usize << bits;
    states
        .iter()
        .map(|&x| ((x * m as f64) as usize).min(m - 1))
        .collect()
}

/// Assembles the feature-coordinate operators.
///
/// States are binned on the dyadic grid on which every feature is constant,
/// and each column is obtained with one Walsh–Hadamard transform.
pub fn build_feature_system(
    data: &Dataset,
    mrp: &MrpInstance,
    spec: &KernelSpec,
    w: &WeightVector,
) -> Result<FeatureSystem> {
    let gamma = mrp.gamma();
    let pos = anchor_positions(data, w.look_ahead())?;
    let nt = pos.len() as f64;
    let bits = spec.grid_bits();
    let m = 1usize << bits;
    let cells = cells_of(data.states(), bits);
    let fm = spec.feature_matrix(m)?;
    let dim = spec.truncation();
    let disc = w.discounted(gamma);

    let mut counts = vec![0.0; m];
    for &t in &pos {
        counts[cells[t]] += 1.0;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    let mut cross = DMatrix::zeros(dim, dim);
    let mut g = vec![0.0; m];
    for k in 0..dim {
        let col = fm.column(k);
        for c in 0..m {
            g[c] = counts[c] * col[c];
        }
        cov.set_column(k, &(spec.project_cells(&g)? / nt));
        g.iter_mut().for_each(|v| *v = 0.0);
        for &t in &pos {
            let mut acc = 0.0;
            for (i, c) in disc.iter().enumerate() {
                acc += c * col[cells[t + i + 1]];
            }
            g[cells[t]] += acc;
        }
        cross.set_column(k, &(spec.project_cells(&g)? / nt));
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    for (&t, ret) in pos.iter().zip(compound_returns(data, &pos, w, gamma)) {
        g[cells[t]] += ret;
    }
    let y = spec.project_cells(&g)? / nt;
    Ok(FeatureSystem {
        cov,
        cross,
        y,
        n_tilde: pos.len(),
        spec: spec.clone(),
        reward: mrp.reward_cells().to_vec(),
    })
}

/// Solves `(Σ̂ + λ I − Ĉ) β = ŷ` and returns `θ̂ = r + Σ_j β_j ϕ_j`.
pub fn solve_features(sys: &FeatureSystem, ridge: f64) -> Result<KernelEstimate> {
    check_ridge(ridge)?;
    let dim = sys.cov.nrows();
    let system = &sys.cov - &sys.cross + DMatrix::identity(dim, dim) * ridge;
    let beta = linalg::solve(&system, &sys.y)?;
    Ok(KernelEstimate {
        spec: sys.spec.clone(),
        reward: sys.reward.clone(),
        beta,
        kernel_form: None,
    })
}

/// A value-function estimate `θ̂ = r + Σ_j β_j ϕ_j`.
#[derive(Clone, Debug)]
pub struct KernelEstimate {
    spec: KernelSpec,
    reward: Vec<f64>,
    beta: DVector<f64>,
    kernel_form: Option<(Vec<f64>, DVector<f64>)>,
}

impl KernelEstimate {
    /// Builds an estimate from feature coordinates.
    pub fn from_coordinates(spec: &KernelSpec, reward: &[f64], beta: DVector<f64>) -> Result<Self> {
        if beta.len() != spec.truncation() {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                spec.truncation(),
                beta.len()
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            reward: reward.to_vec(),
            beta,
            kernel_form: None,
        })
    }

    /// Feature coordinates `β` of `θ̂ − r`.
    pub fn coordinates(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Anchor states and kernel coefficients, when solved in kernel coordinates.
    pub fn kernel_form(&self) -> Option<(&[f64], &DVector<f64>)> {
        self.kernel_form.as_ref().map(|(a, c)| (a.as_slice(), c))
    }

    /// Kernel used by the estimate.
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn reward_at(&self, x: f64) -> f64 {
        let m = self.reward.len();
        self.reward[((x * m as f64) as usize).min(m - 1)]
    }

    /// Value `θ̂(x)` from feature coordinates.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        Ok(self.reward_at(x) + self.spec.feature_map(x)?.dot(&self.beta))
    }

    /// Value `θ̂(x) = r(x) + ñ^{-1/2} Σ_t α_t K(x, x_t)` from kernel coordinates,
    /// falling back to feature coordinates when no kernel form is stored.
    pub fn evaluate_kernel(&self, x: f64) -> Result<f64> {
        match &self.kernel_form {
            None => self.evaluate(x),
            Some((anchors, alpha)) => {
                let scale = 1.0 / (anchors.len() as f64).sqrt();
                let mut acc = 0.0;
                for (a, &xt) in alpha.iter().zip(anchors) {
                    acc += a * self.spec.kernel_eval(x, xt)?;
                }
                Ok(self.reward_at(x) + scale * acc)
            }
        }
    }

    /// Values on the cells of an `m`-cell dyadic grid.
    pub fn grid_values(&self, m: usize) -> Result<Vec<f64>> {
        if m < self.reward.len() {
            return Err(Error::Dimension(format!(
                "grid of {m} cells is coarser than the reward grid"
            )));
        }
        let fm = self.spec.feature_matrix(m)?;
        let f = fm * &self.beta;
        let factor = m / self.reward.len();
        Ok((0..m).map(|c| self.reward[c / factor] + f[c]).collect())
    }
}

/// Squared weighted error `Σ_c w_c (a_c − b_c)²`.
pub fn l2mu_error(values: &[f64], reference: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != reference.len() || values.len() != weights.len() {
        return Err(Error::Dimension("grids of different sizes".into()));
    }
    Ok(values
        .iter()
        .zip(reference)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum())
}

//! Kernel complexity, critical radius, ridge selection and the rate bounds
//! of kernel LSTD, all evaluated with universal constants set to one.

use crate::error::{Error, Result};

/// Smallest admissible radius in the bisection bracket.
pub const RADIUS_FLOOR: f64 = 1e-12;

/// Relative tolerance of the critical-radius bisection.
pub const RADIUS_TOLERANCE: f64 = 1e-10;

/// Kernel complexity `C(δ) = √(Σ_j min{μ_j/δ², 1})`.
pub fn kernel_complexity(eigs: &[f64], delta: f64) -> f64 {
    let d2 = delta * delta;
    eigs.iter().map(|mu| (mu / d2).min(1.0)).sum::<f64>().sqrt()
}

/// Smallest `δ ∈ [RADIUS_FLOOR, upper]` with `C(δ) ≤ √n R δ / (κ ζ)`.
///
/// Bisection runs in log space until the bracket has relative width below
/// [`RADIUS_TOLERANCE`] and returns the upper end, which always satisfies the
/// inequality.
pub fn critical_radius(
    eigs: &[f64],
    n: f64,
    radius: f64,
    kappa: f64,
    zeta: f64,
    upper: f64,
) -> Result<f64> {
    if !(zeta > 0.0 && n >= 1.0 && radius > 0.0 && kappa > 0.0 && upper > RADIUS_FLOOR) {
        return Err(Error::Domain(format!(
            "critical radius needs ζ > 0, n ≥ 1, R > 0, κ > 0 and an upper end above {RADIUS_FLOOR}; got ζ={zeta}, n={n}, R={radius}, κ={kappa}, upper={upper}"
        )));
    }
    let slope = n.sqrt() * radius / (kappa * zeta);
    let gap = |d: f64| kernel_complexity(eigs, d) - slope * d;
    if gap(upper) > 0.0 {
        return Err(Error::NoCrossing {
            lo: RADIUS_FLOOR,
            hi: upper,
        });
    }
    if gap(RADIUS_FLOOR) <= 0.0 {
        return Ok(RADIUS_FLOOR);
    }
    let (mut lo, mut hi) = (RADIUS_FLOOR.ln(), upper.ln());
    while hi - lo > RADIUS_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if gap(mid.exp()) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// A radius at which the critical inequality is guaranteed to hold.
///
/// Above `√μ_1` the complexity equals `√(Σμ)/δ`, so the inequality holds from
/// `max(√μ_1, ((κζ/(√n R)) √(Σμ))^{1/2})` on; the returned value doubles it.
pub fn radius_bracket(eigs: &[f64], n: f64, radius: f64, kappa: f64, zeta: f64) -> f64 {
    let top = eigs.iter().cloned().fold(0.0, f64::max).sqrt();
    let total: f64 = eigs.iter().sum();
    let slope = n.sqrt() * radius / (kappa * zeta);
    2.0 * top.max((total.sqrt() / slope).sqrt()).max(RADIUS_FLOOR)
}

/// Statistical dimension `d_n = #{j : μ_j ≥ δ²}`.
pub fn statistical_dimension(eigs: &[f64], delta: f64) -> usize {
    eigs.iter().filter(|&&mu| mu >= delta * delta).count()
}

/// Ridge selection rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RidgeRule {
    /// `λ = 0.01 δ² (1 − γ̄)`.
    Experiment,
    /// `λ = c0 δ² (1 − γ̄) log n`.
    Theorem {
        /// Leading constant `c0`.
        c0: f64,
    },
}

/// Regularization level `λ_n` for radius `δ`, effective discount `γ̄` and sample size `n`.
pub fn select_ridge(delta: f64, gamma_bar: f64, n: f64, rule: RidgeRule) -> f64 {
    match rule {
        RidgeRule::Experiment => 0.01 * delta * delta * (1.0 - gamma_bar),
        RidgeRule::Theorem { c0 } => c0 * delta * delta * (1.0 - gamma_bar) * n.ln(),
    }
}

/// Finite-rank closed form `(κζ/R) √(d/n)` of the critical radius.
pub fn finite_rank_radius(d: usize, n: f64, radius: f64, kappa: f64, zeta: f64) -> f64 {
    kappa * zeta / radius * (d as f64 / n).sqrt()
}

/// Predicted log-log slope of the martingale term for a finite-rank kernel.
pub fn predicted_slope_finite_rank() -> f64 {
    -1.0
}

/// Predicted log-log slope `−2α/(2α+1)` for `μ_j ≲ j^{-2α}`.
pub fn predicted_slope_poly(alpha: f64) -> f64 {
    -2.0 * alpha / (2.0 * alpha + 1.0)
}

/// Eigendecay structure used by the rate bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayClass {
    /// Rank-`d` kernel.
    FiniteRank(usize),
    /// `μ_j ≲ j^{-2α}`.
    Poly(f64),
}

/// Problem constants entering the rate bounds.
#[derive(Clone, Copy, Debug)]
pub struct BoundInputs {
    /// `σ_m(θ*)`.
    pub sigma_m: f64,
    /// `‖B^w θ* − θ*‖_μ`.
    pub residual_norm: f64,
    /// `κ`.
    pub kappa: f64,
    /// `γ`.
    pub gamma: f64,
    /// `γ̄`.
    pub gamma_bar: f64,
    /// `τ*`.
    pub mixing_time: f64,
    /// Look-ahead `K`.
    pub look_ahead: usize,
    /// Sample size `n`.
    pub n: f64,
    /// Radius `R`.
    pub radius: f64,
    /// Reward bound `ϱ_r` with `‖r‖_∞ ≤ ϱ_r`.
    pub reward_bound: f64,
    /// Value bound `ϱ_V` with `‖V*‖_μ ≤ ϱ_V`.
    pub value_bound: f64,
    /// Eigendecay class.
    pub decay: DecayClass,
}

/// Evaluated right-hand sides, each with leading constant one.
#[derive(Clone, Copy, Debug)]
pub struct RateBounds {
    /// Martingale part `ε_m²` of the structural bound (before `log² n`).
    pub eps_m_sq: f64,
    /// Mixing part `ε_a²` of the structural bound (before `log² n`).
    pub eps_a_sq: f64,
    /// Finite-rank or α-polynomial bound including `log² n`.
    pub structural: f64,
    /// Bound for uniformly bounded rewards.
    pub uniform_reward: f64,
    /// Bound for value functions bounded in `L²(μ)`.
    pub bounded_value: f64,
}

/// Evaluates the finite-rank or α-polynomial bound, together with the
/// bounded-reward and bounded-value variants.
pub fn evaluate_bounds(inp: &BoundInputs) -> RateBounds {
    let h = 1.0 / (1.0 - inp.gamma);
    let gb2 = (1.0 - inp.gamma_bar).powi(2);
    let log2 = inp.n.ln().powi(2);
    let m = inp.kappa.powi(2) * inp.sigma_m.powi(2) / gb2 / inp.n;
    let a = inp.kappa.powi(2) * inp.residual_norm.powi(2) / gb2 / (inp.n / inp.mixing_time);
    let hr = h.max(inp.mixing_time);
    let hv = (h * h).max(inp.mixing_time);
    let rr = inp.reward_bound.powi(2) * h * h;
    let vv = inp.value_bound.powi(2);
    let (eps_m_sq, eps_a_sq, uniform_reward, bounded_value) = match inp.decay {
        DecayClass::FiniteRank(d) => {
            let d = d as f64;
            (m * d, a * d, rr * hr * d / inp.n, vv * hv * d / inp.n)
        }
        DecayClass::Poly(alpha) => {
            let e = 2.0 * alpha / (2.0 * alpha + 1.0);
            (m, a, rr * (hr / inp.n).powf(e), vv * (hv / inp.n).powf(e))
        }
    };
    let structural = match inp.decay {
        DecayClass::FiniteRank(_) => (eps_m_sq + eps_a_sq) * log2,
        DecayClass::Poly(alpha) => {
            let e = 2.0 * alpha / (2.0 * alpha + 1.0);
            inp.radius.powf(2.0 / (2.0 * alpha + 1.0)) * (eps_m_sq + eps_a_sq).powf(e) * log2
        }
    };
    RateBounds {
        eps_m_sq,
        eps_a_sq,
        structural,
        uniform_reward: uniform_reward * log2,
        bounded_value: bounded_value * log2,
    }
}

/// General bound `R² (δ² log² n + λ/(1 − γ̄))`.
pub fn theorem_bound(radius: f64, delta: f64, ridge: f64, gamma_bar: f64, n: f64) -> f64 {
    radius * radius * (delta * delta * n.ln().powi(2) + ridge / (1.0 - gamma_bar))
}

/// Sample-size condition `R² δ² ≤ (1 − γ̄) ζ² / √((τ + K) n)`.
pub fn sample_size_condition(
    radius: f64,
    delta: f64,
    gamma_bar: f64,
    zeta: f64,
    mixing_time: f64,
    look_ahead: usize,
    n: f64,
) -> bool {
    radius * radius * delta * delta
        <= (1.0 - gamma_bar) * zeta * zeta / ((mixing_time + look_ahead as f64) * n).sqrt()
}

/// Theoretical summary for one sample size.
#[derive(Clone, Debug)]
pub struct TheoryReport {
    /// Kernel eigenvalues, the argument of [`TheoryReport::complexity`].
    pub eigenvalues: Vec<f64>,
    /// Noise level `ζ` used in the critical inequality.
    pub zeta: f64,
    /// Radius `R`.
    pub radius: f64,
    /// Critical radius `δ_n`.
    pub delta: f64,
    /// Ridge `λ_n`.
    pub ridge: f64,
    /// Statistical dimension `d_n`.
    pub dimension: usize,
    /// Rate bounds.
    pub bounds: RateBounds,
    /// Theorem bound `R² (δ² log² n + λ/(1 − γ̄))`.
    pub theorem: f64,
    /// Whether the sample-size condition holds.
    pub sample_size_ok: bool,
}

impl TheoryReport {
    /// Kernel complexity `C(δ)` for the stored eigenvalues.
    pub fn complexity(&self, delta: f64) -> f64 {
        kernel_complexity(&self.eigenvalues, delta)
    }

    /// Multi-line `key: value` rendering, listing the unit constants.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        line("zeta", format!("{:.6e}", self.zeta));
        line("radius", format!("{:.6e}", self.radius));
        line("delta_n", format!("{:.6e}", self.delta));
        line("lambda_n", format!("{:.6e}", self.ridge));
        line("d_n", self.dimension.to_string());
        line("eps_m_sq", format!("{:.6e}", self.bounds.eps_m_sq));
        line("eps_a_sq", format!("{:.6e}", self.bounds.eps_a_sq));
        line(
            "bound_structural",
            format!("{:.6e}", self.bounds.structural),
        );
        line(
            "bound_uniform_reward",
            format!("{:.6e}", self.bounds.uniform_reward),
        );
        line(
            "bound_bounded_value",
            format!("{:.6e}", self.bounds.bounded_value),
        );
        line("bound_theorem", format!("{:.6e}", self.theorem));
        line("sample_size_condition", self.sample_size_ok.to_string());
        line("constants", "c = c0 = c1 = c' = 1".to_string());
        s
    }
}

/// Builds a [`TheoryReport`] from population constants.
pub fn theory_report(
    eigs: &[f64],
    zeta: f64,
    upper: f64,
    rule: RidgeRule,
    inputs: &BoundInputs,
) -> Result<TheoryReport> {
    let delta = critical_radius(eigs, inputs.n, inputs.radius, inputs.kappa, zeta, upper)?;
    let ridge = select_ridge(delta, inputs.gamma_bar, inputs.n, rule);
    Ok(TheoryReport {
        eigenvalues: eigs.to_vec(),
        zeta,
        radius: inputs.radius,
        delta,
        ridge,
        dimension: statistical_dimension(eigs, delta),
        bounds: evaluate_bounds(inputs),
        theorem: theorem_bound(inputs.radius, delta, ridge, inputs.gamma_bar, inputs.n),
        sample_size_ok: sample_size_condition(
            inputs.radius,
            delta,
            inputs.gamma_bar,
            zeta,
            inputs.mixing_time,
            inputs.look_ahead,
            inputs.n,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(decay: DecayClass) -> BoundInputs {
        BoundInputs {
            sigma_m: 1.0,
            residual_norm: 0.5,
            kappa: 2.0,
            gamma: 0.9,
            gamma_bar: 0.9,
            mixing_time: 10.0,
            look_ahead: 1,
            n: 1000.0,
            radius: 3.0,
            reward_bound: 1.0,
            value_bound: 5.0,
            decay,
        }
    }

    #[test]
    fn complexity_limits() {
        assert!(kernel_complexity(&[1.0, 0.5], 1e9) < 1e-8);
        assert!((kernel_complexity(&[1.0, 0.5, 0.2], 1e-9) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn complexity_matches_direct_sum() {
        let eigs: Vec<f64> = (1..=4096).map(|j| (j as f64).powf(-1.2)).collect();
        let mut direct = 0.0;
        for mu in &eigs {
            direct += if mu / 0.01 < 1.0 { mu / 0.01 } else { 1.0 };
        }
        assert!((kernel_complexity(&eigs, 0.1) - direct.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn single_eigenvalue_radius() {
        let d = critical_radius(&[1.0], 100.0, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((d - 0.1).abs() < 1e-9);
        let gap = kernel_complexity(&[1.0], d) - 10.0 * d;
        assert!(gap <= 0.0 && gap > -1e-8);
    }

    #[test]
    fn doubling_n_shrinks_radius() {
        let eigs = vec![1.0; 5];
        let a = critical_radius(&eigs, 400.0, 2.0, 1.0, 1.0, 4.0).unwrap();
        let b = critical_radius(&eigs, 800.0, 2.0, 1.0, 1.0, 4.0).unwrap();
        assert!((a / b - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn no_crossing_is_reported() {
        assert!(matches!(
            critical_radius(&[1.0; 4], 1.0, 1.0, 1.0, 100.0, 1.0),
            Err(Error::NoCrossing { .. })
        ));
        assert!(critical_radius(&[1.0], 1.0, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn ridge_rules() {
        assert!((select_ridge(0.1, 0.9, 100.0, RidgeRule::Experiment) - 1e-5).abs() < 1e-18);
        let t = select_ridge(0.1, 0.9, 100.0, RidgeRule::Theorem { c0: 1.0 });
        assert!((t - 1e-3 * 100f64.ln()).abs() < 1e-15);
        assert_eq!(select_ridge(0.1, 1.0, 100.0, RidgeRule::Experiment), 0.0);
    }

    #[test]
    fn finite_rank_bound_is_linear_in_d() {
        let a = evaluate_bounds(&inputs(DecayClass::FiniteRank(3)));
        let b = evaluate_bounds(&inputs(DecayClass::FiniteRank(6)));
        assert!((b.structural / a.structural - 2.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_mixing_doubles_eps_a() {
        let a = evaluate_bounds(&inputs(DecayClass::FiniteRank(3)));
        let mut i = inputs(DecayClass::FiniteRank(3));
        i.mixing_time *= 2.0;
        let b = evaluate_bounds(&i);
        assert!((b.eps_a_sq / a.eps_a_sq - 2.0).abs() < 1e-12);
        assert_eq!(a.eps_m_sq, b.eps_m_sq);
    }

    #[test]
    fn zero_residual_leaves_martingale_term() {
        let mut i = inputs(DecayClass::Poly(0.6));
        i.residual_norm = 0.0;
        let b = evaluate_bounds(&i);
        let e = 1.2 / 2.2;
        let expect = 3f64.powf(2.0 / 2.2) * b.eps_m_sq.powf(e) * 1000f64.ln().powi(2);
        assert_eq!(b.eps_a_sq, 0.0);
        assert!((b.structural - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn predicted_slopes() {
        assert_eq!(predicted_slope_finite_rank(), -1.0);
        assert!((predicted_slope_poly(0.6) + 6.0 / 11.0).abs() < 1e-15);
    }
}

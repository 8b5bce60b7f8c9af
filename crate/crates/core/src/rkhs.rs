//! Walsh functions, the Walsh-product feature basis with a mis-specification
//! angle, and truncated Mercer kernels with a chosen eigendecay.
//!
//! Every feature with index at most `J` is a finite signed combination of
//! Walsh functions, so it is exactly piecewise constant on a dyadic grid of
//! [`KernelSpec::grid_size`] cells. Feature coordinates are scaled as
//! `ϕ_j(x) = √μ_j φ_j(x)`, which turns the Hilbert inner product into the
//! Euclidean dot product and gives `K(x, y) = ϕ(x)·ϕ(y)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{bit_reverse, fwht};

/// Number of binary digits of a state used when evaluating Walsh functions.
pub const WALSH_BITS: u32 = 53;

/// Uniform bound on the sup-norm of every basis function.
pub const KAPPA: f64 = 2.0;

fn check_unit_interval(x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("state {x} is outside [0, 1)")))
    }
}

/// Binary digits `x_1 x_2 … x_53` of `x ∈ [0, 1)` packed so that `x_1` is the
/// most significant of the low 53 bits.
pub fn binary_digits(x: f64) -> u64 {
    ((x * (1u64 << WALSH_BITS) as f64) as u64).min((1u64 << WALSH_BITS) - 1)
}

/// Sign of the Walsh function with index `j` at a state given by its packed digits.
fn walsh_sign(j: u64, digits: u64) -> f64 {
    let reversed = digits.reverse_bits() >> (64 - WALSH_BITS);
    if (j & reversed).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Walsh function `w_j(x) = (-1)^{Σ_i k_i x_{i+1}}`, where `k_i` are the bits
/// of `j` (least significant first) and `x_i` the binary digits of `x`.
pub fn walsh(j: u64, x: f64) -> Result<f64> {
    check_unit_interval(x)?;
    Ok(walsh_sign(j, binary_digits(x)))
}

/// Walsh function evaluated on cell `c` of a dyadic grid with `2^bits` cells.
pub fn walsh_on_cell(j: usize, c: usize, bits: u32) -> f64 {
    if (j & bit_reverse(c, bits)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Walsh expansion of the feature with one-based index `j` and angle `theta`,
/// as `(walsh index, coefficient)` pairs with distinct indices.
pub fn feature_terms(j: usize, theta: f64) -> Vec<(usize, f64)> {
    assert!(j >= 1, "feature indices start at 1");
    let pair = (j - 1) / 2;
    let base = [
        (2 * pair, 0.5),
        (2 * pair + 1, -0.5),
        (4 * pair, 0.5),
        (4 * pair + 1, 0.5),
    ];
    let mut terms: Vec<(usize, f64)> = Vec::with_capacity(12);
    if (j - 1) % 2 == 0 {
        terms.extend_from_slice(&base);
    } else {
        let s = theta.sin() / std::f64::consts::SQRT_2;
        let tilt = [(1usize, theta.cos()), (2, s), (3, s)];
        for &(a, ca) in &base {
            for &(b, cb) in &tilt {
                terms.push((a ^ b, ca * cb));
            }
        }
    }
    terms.sort_by_key(|t| t.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (idx, c) in terms {
        match merged.last_mut() {
            Some(last) if last.0 == idx => last.1 += c,
            _ => merged.push((idx, c)),
        }
    }
    merged.retain(|t| t.1.abs() > 1e-15);
    merged
}

/// Value of the feature `φ_j(x)` with one-based index `j` and angle `theta`.
pub fn feature(j: usize, x: f64, theta: f64) -> Result<f64> {
    if j == 0 {
        return Err(Error::Domain("feature indices start at 1".into()));
    }
    check_unit_interval(x)?;
    let digits = binary_digits(x);
    Ok(feature_terms(j, theta)
        .iter()
        .map(|&(a, c)| c * walsh_sign(a as u64, digits))
        .sum())
}

/// Eigenvalue sequence of a truncated Mercer kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum Eigendecay {
    /// `μ_j = j^{-exponent}`; the exponent equals `2α` for α-polynomial decay.
    Poly {
        /// Decay exponent `2α > 0`.
        exponent: f64,
    },
    /// `μ_j = exp(-(j-1)^2)`.
    Exp,
    /// An explicit nonincreasing list of positive eigenvalues.
    FiniteRank(Vec<f64>),
}

impl Eigendecay {
    /// First `count` eigenvalues of the sequence.
    pub fn eigenvalues(&self, count: usize) -> Vec<f64> {
        match self {
            Eigendecay::Poly { exponent } => {
                (1..=count).map(|j| (j as f64).powf(-exponent)).collect()
            }
            Eigendecay::Exp => (0..count).map(|j| (-((j * j) as f64)).exp()).collect(),
            Eigendecay::FiniteRank(list) => list.iter().copied().take(count).collect(),
        }
    }
}

/// A truncated kernel `K(x, y) = Σ_{j ≤ J} μ_j φ_j(x) φ_j(y)` over the Walsh
/// feature basis.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    decay: Eigendecay,
    angle: f64,
    eigs: Vec<f64>,
    terms: Vec<Vec<(usize, f64)>>,
    b: f64,
    bits: u32,
}

impl KernelSpec {
    /// Builds a kernel with `truncation` eigenpairs. For a finite-rank decay
    /// the truncation is the length of the list.
    pub fn new(decay: Eigendecay, truncation: usize, angle: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&angle) {
            return Err(Error::Domain(format!("angle {angle} is outside [0, π/2]")));
        }
        let count = match &decay {
            Eigendecay::FiniteRank(list) => list.len(),
            Eigendecay::Poly { exponent } => {
                if !(*exponent > 0.0) {
                    return Err(Error::Domain(format!(
                        "decay exponent {exponent} must be positive"
                    )));
                }
                truncation
            }
            Eigendecay::Exp => truncation,
        };
        if count == 0 {
            return Err(Error::Domain(
                "a kernel needs at least one eigenpair".into(),
            ));
        }
        let eigs = decay.eigenvalues(count);
        if eigs.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Domain(
                "eigenvalues must be positive and finite".into(),
            ));
        }
        if eigs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("eigenvalues must be nonincreasing".into()));
        }
        let terms: Vec<_> = (1..=count).map(|j| feature_terms(j, angle)).collect();
        let max_index = terms
            .iter()
            .flat_map(|t| t.iter().map(|p| p.0))
            .max()
            .unwrap_or(0);
        let bits = (usize::BITS - max_index.leading_zeros()).max(2);
        let b = terms
            .iter()
            .zip(&eigs)
            .map(|(t, mu)| {
                let sup = (0..1usize << bits)
                    .map(|c| {
                        t.iter()
                            .map(|&(a, coef)| coef * walsh_on_cell(a, c, bits))
                            .sum::<f64>()
                            .abs()
                    })
                    .fold(0.0, f64::max);
                mu * sup * sup
            })
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            decay,
            angle,
            eigs,
            terms,
            b,
            bits,
        })
    }

    /// Polynomial decay `μ_j = j^{-exponent}` truncated at `truncation`.
    pub fn poly(exponent: f64, truncation: usize, angle: f64) -> Result<Self> {
        Self::new(Eigendecay::Poly { exponent }, truncation, angle)
    }

    /// Exponential decay `μ_j = exp(-(j-1)^2)` truncated at `truncation`.
    pub fn exponential(truncation: usize, angle: f64) -> Result<Self> {
        Self::new(Eigendecay::Exp, truncation, angle)
    }

    /// Finite-rank kernel with the listed eigenvalues.
    pub fn finite_rank(eigs: Vec<f64>, angle: f64) -> Result<Self> {
        Self::new(Eigendecay::FiniteRank(eigs), 0, angle)
    }

    /// Eigendecay family of the kernel.
    pub fn decay(&self) -> &Eigendecay {
        &self.decay
    }

    /// Mis-specification angle of the feature basis.
    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Truncation order `J`.
    pub fn truncation(&self) -> usize {
        self.eigs.len()
    }

    /// Eigenvalues `μ_1 ≥ … ≥ μ_J`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    /// Uniform sup-norm bound `κ` on the basis functions.
    pub fn kappa(&self) -> f64 {
        KAPPA
    }

    /// Kernel sup bound `b = √(Σ_j μ_j sup φ_j²)`.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Walsh expansion of the feature with one-based index `j`.
    pub fn terms(&self, j: usize) -> &[(usize, f64)] {
        &self.terms[j - 1]
    }

    /// Number of binary digits on which every feature depends.
    pub fn grid_bits(&self) -> u32 {
        self.bits
    }

    /// Smallest dyadic grid on which every feature is piecewise constant.
    pub fn grid_size(&self) -> usize {
        1 << self.bits
    }

    /// Basis value `φ_j(x)` for a one-based index `j ≤ J`.
    pub fn feature(&self, j: usize, x: f64) -> Result<f64> {
        if j == 0 || j > self.truncation() {
            return Err(Error::Domain(format!(
                "feature index {j} outside 1..={}",
                self.truncation()
            )));
        }
        check_unit_interval(x)?;
        let digits = binary_digits(x);
        Ok(self.terms[j - 1]
            .iter()
            .map(|&(a, c)| c * walsh_sign(a as u64, digits))
            .sum())
    }

    /// Scaled coordinates `ϕ(x) = (√μ_j φ_j(x))_{j ≤ J}`.
    pub fn feature_map(&self, x: f64) -> Result<DVector<f64>> {
        check_unit_interval(x)?;
        let digits = binary_digits(x);
        Ok(DVector::from_iterator(
            self.truncation(),
            self.terms.iter().zip(&self.eigs).map(|(t, mu)| {
                mu.sqrt()
                    * t.iter()
                        .map(|&(a, c)| c * walsh_sign(a as u64, digits))
                        .sum::<f64>()
            }),
        ))
    }

    /// Kernel value `K(x, y) = Σ_j μ_j φ_j(x) φ_j(y)`.
    pub fn kernel_eval(&self, x: f64, y: f64) -> Result<f64> {
        check_unit_interval(x)?;
        check_unit_interval(y)?;
        let (dx, dy) = (binary_digits(x), binary_digits(y));
        Ok(self
            .terms
            .iter()
            .zip(&self.eigs)
            .map(|(t, mu)| {
                let fx: f64 = t.iter().map(|&(a, c)| c * walsh_sign(a as u64, dx)).sum();
                let fy: f64 = t.iter().map(|&(a, c)| c * walsh_sign(a as u64, dy)).sum();
                mu * fx * fy
            })
            .sum())
    }

    fn check_grid(&self, m: usize) -> Result<u32> {
        if !m.is_power_of_two() || m < self.grid_size() {
            return Err(Error::Dimension(format!(
                "grid of {m} cells cannot represent features needing {} cells",
                self.grid_size()
            )));
        }
        Ok(m.trailing_zeros())
    }

    /// Unscaled basis values `φ_j` on the cells of an `m`-cell dyadic grid (`m × J`).
    pub fn basis_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        let bits = self.check_grid(m)?;
        let mut out = DMatrix::zeros(m, self.truncation());
        for (j, t) in self.terms.iter().enumerate() {
            for c in 0..m {
                out[(c, j)] = t
                    .iter()
                    .map(|&(a, coef)| coef * walsh_on_cell(a, c, bits))
                    .sum();
            }
        }
        Ok(out)
    }

    /// Scaled coordinates `ϕ_j` on the cells of an `m`-cell dyadic grid (`m × J`).
    pub fn feature_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        let mut out = self.basis_matrix(m)?;
        for (j, mu) in self.eigs.iter().enumerate() {
            out.column_mut(j).scale_mut(mu.sqrt());
        }
        Ok(out)
    }

    /// Inner products `(Σ_c ϕ_j(c) g[c])_{j ≤ J}` of the scaled features with
    /// a vector of cell values, computed with one Walsh–Hadamard transform.
    pub fn project_cells(&self, g: &[f64]) -> Result<DVector<f64>> {
        let bits = self.check_grid(g.len())?;
        let mut work = vec![0.0; g.len()];
        for (c, v) in g.iter().enumerate() {
            work[bit_reverse(c, bits)] = *v;
        }
        fwht(&mut work);
        Ok(DVector::from_iterator(
            self.truncation(),
            self.terms
                .iter()
                .zip(&self.eigs)
                .map(|(t, mu)| mu.sqrt() * t.iter().map(|&(a, c)| c * work[a]).sum::<f64>()),
        ))
    }

    /// Hilbert norm `√(Σ_j c_j²/μ_j)` of `f = Σ_j c_j φ_j`.
    pub fn hilbert_norm(&self, coeffs: &[f64]) -> Result<f64> {
        if coeffs.len() != self.truncation() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                self.truncation(),
                coeffs.len()
            )));
        }
        Ok(coeffs
            .iter()
            .zip(&self.eigs)
            .map(|(c, mu)| c * c / mu)
            .sum::<f64>()
            .sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn digit_oracle(j: u64, x: f64) -> f64 {
        let mut exponent = 0;
        let mut frac = x;
        for i in 0..WALSH_BITS {
            frac *= 2.0;
            let bit = frac >= 1.0;
            if bit {
                frac -= 1.0;
            }
            if bit && (j >> i) & 1 == 1 {
                exponent += 1;
            }
        }
        if exponent % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    #[test]
    fn walsh_known_values() {
        assert_eq!(walsh(0, 0.3).unwrap(), 1.0);
        assert_eq!(walsh(1, 0.25).unwrap(), 1.0);
        assert_eq!(walsh(1, 0.75).unwrap(), -1.0);
        assert_eq!(walsh(2, 0.25).unwrap(), -1.0);
        assert!(walsh(1, 1.0).is_err());
        assert!(walsh(1, -0.1).is_err());
    }

    #[test]
    fn walsh_matches_digit_expansion() {
        for k in 0..200 {
            let x = ((k as f64) * 0.618_033_988_75).fract();
            for j in [0u64, 1, 2, 3, 5, 12, 255, 1023, 40_000] {
                assert_eq!(walsh(j, x).unwrap(), digit_oracle(j, x));
            }
        }
    }

    #[test]
    fn walsh_product_rule() {
        for k in 0..50 {
            let x = ((k as f64) * 0.377).fract();
            for (a, b) in [(3u64, 5u64), (12, 7), (100, 33)] {
                let lhs = walsh(a, x).unwrap() * walsh(b, x).unwrap();
                assert_eq!(lhs, walsh(a ^ b, x).unwrap());
            }
        }
    }

    #[test]
    fn first_feature_is_constant_and_second_is_reward_shape() {
        let theta = 0.4_f64;
        for k in 0..64 {
            let x = (k as f64 + 0.5) / 64.0;
            assert!((feature(1, x, theta).unwrap() - 1.0).abs() < 1e-15);
            let expected = if x < 0.25 {
                theta.cos() + 2f64.sqrt() * theta.sin()
            } else if x < 0.5 {
                theta.cos() - 2f64.sqrt() * theta.sin()
            } else {
                -theta.cos()
            };
            assert!((feature(2, x, theta).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn features_are_orthonormal_on_grid() {
        for theta in [0.0, PI / 16.0, PI / 4.0, PI / 2.0] {
            let spec = KernelSpec::poly(1.2, 40, theta).unwrap();
            let m = spec.grid_size().max(32);
            let basis = spec.basis_matrix(m).unwrap();
            let gram = basis.transpose() * &basis / m as f64;
            let err = (gram - DMatrix::<f64>::identity(40, 40)).abs().max();
            assert!(err < 1e-12, "theta {theta}: {err}");
            assert!(basis.abs().max() <= KAPPA);
        }
    }

    #[test]
    fn kernel_matches_feature_dot_product() {
        let spec = KernelSpec::exponential(8, PI / 16.0).unwrap();
        for k in 0..30 {
            let x = ((k as f64) * 0.137).fract();
            let y = ((k as f64) * 0.731 + 0.2).fract();
            let fx = spec.feature_map(x).unwrap();
            let fy = spec.feature_map(y).unwrap();
            let kxy = spec.kernel_eval(x, y).unwrap();
            assert!((fx.dot(&fy) - kxy).abs() < 1e-12);
            assert!((kxy - spec.kernel_eval(y, x).unwrap()).abs() < 1e-15);
            assert!((fx.norm_squared() - spec.kernel_eval(x, x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_constant_eigenpair_gives_unit_kernel() {
        let spec = KernelSpec::finite_rank(vec![1.0], 0.0).unwrap();
        assert_eq!(spec.kernel_eval(0.1, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn project_cells_matches_dense_product() {
        let spec = KernelSpec::poly(1.2, 24, PI / 5.0).unwrap();
        let m = spec.grid_size() * 2;
        let g: Vec<f64> = (0..m).map(|c| ((c * 7 % 11) as f64) - 3.0).collect();
        let dense = spec.feature_matrix(m).unwrap().transpose() * DVector::from_vec(g.clone());
        let fast = spec.project_cells(&g).unwrap();
        assert!((dense - fast).abs().max() < 1e-10);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(KernelSpec::finite_rank(vec![], 0.0).is_err());
        assert!(KernelSpec::finite_rank(vec![0.5, 1.0], 0.0).is_err());
        assert!(KernelSpec::poly(-1.0, 4, 0.0).is_err());
        assert!(KernelSpec::poly(1.2, 4, 2.0).is_err());
    }
}

//! Markov reward processes on `[0, 1)` with piecewise-constant structure,
//! the two-half experiment family, and trajectory, episode and pair sampling.
//!
//! An [`MrpInstance`] is described on a base dyadic grid of cells. From a
//! state in cell `i` the next state lands in cell `k` with probability
//! `P[i, k]` and is uniform inside that cell. Rewards and the stationary
//! density are constant on each cell. Refining the grid therefore gives an
//! exact finite description of the chain, see [`MrpInstance::discretize`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-12;

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Seeded random number generator used by every sampler.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Transition structure of an instance.
#[derive(Clone, Debug)]
pub enum Transition {
    /// The chain never moves: `x' = x`.
    Identity,
    /// Cell-to-cell probabilities on the base grid, uniform inside the target cell.
    Cells(DMatrix<f64>),
}

/// A discounted Markov reward process on `[0, 1)`.
#[derive(Clone, Debug)]
pub struct MrpInstance {
    transition: Transition,
    reward: Vec<f64>,
    stationary: Vec<f64>,
    gamma: f64,
    mixing_time: f64,
    cumulative: Vec<Vec<f64>>,
    cumulative_stationary: Vec<f64>,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw_index(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

impl MrpInstance {
    /// Builds an instance from its base-grid description.
    ///
    /// `reward` and `stationary` hold one value per base cell; `stationary`
    /// holds cell masses. For [`Transition::Cells`] the matrix must be
    /// row-stochastic and leave `stationary` invariant.
    pub fn new(
        transition: Transition,
        reward: Vec<f64>,
        stationary: Vec<f64>,
        gamma: f64,
        mixing_time: f64,
    ) -> Result<Self> {
        let m = reward.len();
        if m == 0 || !m.is_power_of_two() {
            return Err(Error::Domain(format!(
                "base grid size {m} is not a power of two"
            )));
        }
        if stationary.len() != m {
            return Err(Error::Dimension(format!(
                "reward has {m} cells but stationary law has {}",
                stationary.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("discount {gamma} is outside [0, 1)")));
        }
        if !(mixing_time >= 1.0) {
            return Err(Error::Domain(format!(
                "mixing time {mixing_time} is below 1"
            )));
        }
        if stationary.iter().any(|&p| p < 0.0)
            || (stationary.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Domain(
                "stationary masses must be a probability vector".into(),
            ));
        }
        let mut cumulative_rows = Vec::new();
        if let Transition::Cells(p) = &transition {
            if p.nrows() != m || p.ncols() != m {
                return Err(Error::Dimension(format!(
                    "transition matrix is {}x{} but the base grid has {m} cells",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for (i, row) in p.row_iter().enumerate() {
                if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::Domain(format!(
                        "row {i} is not a probability vector"
                    )));
                }
                cumulative_rows.push(cumulative(&row.iter().copied().collect::<Vec<_>>()));
            }
            let mu = DVector::from_column_slice(&stationary);
            let residual = (p.transpose() * &mu - &mu).abs().max();
            if residual > 1e-10 {
                return Err(Error::Domain(format!(
                    "stationary law is not invariant (residual {residual:.2e})"
                )));
            }
        }
        let cumulative_stationary = cumulative(&stationary);
        Ok(Self {
            transition,
            reward,
            stationary,
            gamma,
            mixing_time,
            cumulative: cumulative_rows,
            cumulative_stationary,
        })
    }

    /// Number of cells in the base grid.
    pub fn base_cells(&self) -> usize {
        self.reward.len()
    }

    /// Transition structure.
    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    /// Discount factor `γ`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Effective horizon `H = 1/(1-γ)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    /// Declared mixing time `τ*`.
    pub fn mixing_time(&self) -> f64 {
        self.mixing_time
    }

    /// Reward on each base cell.
    pub fn reward_cells(&self) -> &[f64] {
        &self.reward
    }

    /// Stationary mass of each base cell.
    pub fn stationary_cells(&self) -> &[f64] {
        &self.stationary
    }

    fn cell_of(&self, x: f64) -> usize {
        ((x * self.base_cells() as f64) as usize).min(self.base_cells() - 1)
    }

    /// Reward `r(x)`.
    pub fn reward(&self, x: f64) -> f64 {
        self.reward[self.cell_of(x)]
    }

    fn uniform_in_cell<R: Rng>(&self, cell: usize, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        ((cell as f64 + u) / self.base_cells() as f64).min(BELOW_ONE)
    }

    /// Draws a state from the stationary law.
    pub fn sample_stationary<R: Rng>(&self, rng: &mut R) -> f64 {
        let cell = draw_index(&self.cumulative_stationary, rng.random());
        self.uniform_in_cell(cell, rng)
    }

    /// Draws a successor of `x`.
    pub fn sample_next<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        match &self.transition {
            Transition::Identity => x,
            Transition::Cells(_) => {
                let row = &self.cumulative[self.cell_of(x)];
                let cell = draw_index(row, rng.random());
                self.uniform_in_cell(cell, rng)
            }
        }
    }

    /// Exact description of the chain on an `m`-cell dyadic grid.
    pub fn discretize(&self, m: usize) -> Result<MrpGrid> {
        let base = self.base_cells();
        if !m.is_power_of_two() || m < base {
            return Err(Error::Domain(format!(
                "grid size {m} must be a power of two of at least {base}"
            )));
        }
        let factor = m / base;
        let expand =
            |v: &[f64], scale: f64| -> Vec<f64> { (0..m).map(|c| v[c / factor] * scale).collect() };
        let transition = match &self.transition {
            Transition::Identity => GridTransition::Identity,
            Transition::Cells(p) => GridTransition::Block {
                base: p.clone(),
                factor,
            },
        };
        Ok(MrpGrid {
            transition,
            weights: expand(&self.stationary, 1.0 / factor as f64),
            reward: expand(&self.reward, 1.0),
            gamma: self.gamma,
            mixing_time: self.mixing_time,
        })
    }

    /// Smallest ratio `P(dy|x) / ν(dy)` over all cells, where `ν` is Lebesgue
    /// measure. The chain satisfies the minorization condition with mixing
    /// time `τ` whenever this value is at least `1/τ`.
    pub fn minorization_constant(&self) -> f64 {
        match &self.transition {
            Transition::Identity => 0.0,
            Transition::Cells(p) => p.min() * self.base_cells() as f64,
        }
    }

    /// Single trajectory `x_1, …, x_n` with `x_1` drawn from the stationary law.
    pub fn sample_single_path(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut states = Vec::with_capacity(n);
        if n > 0 {
            let mut x = self.sample_stationary(&mut rng);
            states.push(x);
            for _ in 1..n {
                x = self.sample_next(x, &mut rng);
                states.push(x);
            }
        }
        self.dataset(SamplingMode::SinglePath, states)
    }

    /// `⌈n/L⌉` independent trajectories of length `L` (the last one possibly
    /// shorter), each started from the stationary law.
    pub fn sample_episodes(&self, n: usize, episode_len: usize, seed: u64) -> Result<Dataset> {
        if episode_len < 2 {
            return Err(Error::Domain("episodes need length at least 2".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut states = Vec::with_capacity(n);
        while states.len() < n {
            let len = episode_len.min(n - states.len());
            let mut x = self.sample_stationary(&mut rng);
            states.push(x);
            for _ in 1..len {
                x = self.sample_next(x, &mut rng);
                states.push(x);
            }
        }
        Ok(self.dataset(SamplingMode::Episodes(episode_len), states))
    }

    /// `n` independent pairs `(x_i, x_i')` with `x_i` stationary and
    /// `x_i' ~ P(·|x_i)`, stored as episodes of length two.
    pub fn sample_iid_pairs(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut states = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let x = self.sample_stationary(&mut rng);
            states.push(x);
            states.push(self.sample_next(x, &mut rng));
        }
        self.dataset(SamplingMode::IidPairs, states)
    }

    fn dataset(&self, mode: SamplingMode, states: Vec<f64>) -> Dataset {
        let rewards = states.iter().map(|&x| self.reward(x)).collect();
        Dataset {
            mode,
            states,
            rewards,
        }
    }
}

/// Probability that the experiment chain switches halves in one step.
pub fn switch_probability(mixing_time: f64) -> f64 {
    0.5 / mixing_time
}

/// Density of the experiment kernel on the half that contains the current state.
pub fn same_half_density(mixing_time: f64) -> f64 {
    2.0 - 1.0 / mixing_time
}

/// The two-half experiment family on `[0, 1)`.
///
/// With probability `1/(2τ)` the next state is uniform on the opposite half,
/// otherwise uniform on the current half. The reward is
/// `r0 (cos ϑ + √2 sin ϑ)` on `[0, 1/4)`, `r0 (cos ϑ − √2 sin ϑ)` on
/// `[1/4, 1/2)` and `−r0 cos ϑ` on `[1/2, 1)`. Lebesgue measure is stationary.
pub fn build_experiment_mrp(
    mixing_time: f64,
    theta: f64,
    r0: f64,
    gamma: f64,
) -> Result<MrpInstance> {
    if !(mixing_time >= 1.0) {
        return Err(Error::Domain(format!(
            "mixing time {mixing_time} is below 1"
        )));
    }
    if !(r0 > 0.0) {
        return Err(Error::Domain(format!("reward scale {r0} must be positive")));
    }
    let p = switch_probability(mixing_time);
    let p0 = DMatrix::from_fn(4, 4, |i, k| {
        if (i < 2) == (k < 2) {
            (1.0 - p) / 2.0
        } else {
            p / 2.0
        }
    });
    let (c, s) = (theta.cos(), theta.sin());
    let root2 = std::f64::consts::SQRT_2;
    let reward = vec![r0 * (c + root2 * s), r0 * (c - root2 * s), -r0 * c, -r0 * c];
    MrpInstance::new(
        Transition::Cells(p0),
        reward,
        vec![0.25; 4],
        gamma,
        mixing_time,
    )
}

/// How a dataset was collected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// One trajectory.
    SinglePath,
    /// Consecutive independent trajectories of the given length.
    Episodes(usize),
    /// Independent transition pairs.
    IidPairs,
}

/// Observed states with cached rewards.
#[derive(Clone, Debug)]
pub struct Dataset {
    mode: SamplingMode,
    states: Vec<f64>,
    rewards: Vec<f64>,
}

impl Dataset {
    /// Wraps states and rewards collected under `mode`.
    pub fn new(mode: SamplingMode, states: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        if states.len() != rewards.len() {
            return Err(Error::Dimension(
                "states and rewards differ in length".into(),
            ));
        }
        if let SamplingMode::Episodes(l) = mode {
            if l < 2 {
                return Err(Error::Domain("episodes need length at least 2".into()));
            }
        }
        if mode == SamplingMode::IidPairs && states.len() % 2 != 0 {
            return Err(Error::Dimension(
                "pair data must have an even number of states".into(),
            ));
        }
        Ok(Self {
            mode,
            states,
            rewards,
        })
    }

    /// Sampling mode.
    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Observed states in order.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Cached rewards `r(x_t)`.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Number of observations: states for trajectories, pairs for pair data.
    pub fn n(&self) -> usize {
        match self.mode {
            SamplingMode::IidPairs => self.states.len() / 2,
            _ => self.states.len(),
        }
    }

    /// Episode length, when the data come in blocks.
    pub fn episode_len(&self) -> Option<usize> {
        match self.mode {
            SamplingMode::SinglePath => None,
            SamplingMode::Episodes(l) => Some(l),
            SamplingMode::IidPairs => Some(2),
        }
    }

    /// Index ranges `[start, end)` of the independent blocks.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let total = self.states.len();
        match self.episode_len() {
            None => vec![(0, total)],
            Some(l) => (0..total)
                .step_by(l)
                .map(|s| (s, (s + l).min(total)))
                .collect(),
        }
    }

    /// First `n` observations, keeping the sampling mode.
    pub fn prefix(&self, n: usize) -> Dataset {
        let len = match self.mode {
            SamplingMode::IidPairs => 2 * n,
            _ => n,
        }
        .min(self.states.len());
        Dataset {
            mode: self.mode,
            states: self.states[..len].to_vec(),
            rewards: self.rewards[..len].to_vec(),
        }
    }

    /// Fraction of states lying in `[0, 1/2)`.
    pub fn lower_half_fraction(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.states.iter().filter(|&&x| x < 0.5).count() as f64 / self.states.len() as f64
    }
}

/// Transition operator of a discretized chain.
#[derive(Clone, Debug)]
pub enum GridTransition {
    /// `P = I`.
    Identity,
    /// Base-grid matrix refined by `factor`: `P[i, k] = base[i/f, k/f] / f`.
    Block {
        /// Base-grid cell-to-cell matrix.
        base: DMatrix<f64>,
        /// Number of fine cells per base cell.
        factor: usize,
    },
}

/// Exact finite description of an instance on a dyadic grid.
#[derive(Clone, Debug)]
pub struct MrpGrid {
    transition: GridTransition,
    weights: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    mixing_time: f64,
}

impl MrpGrid {
    /// Finite chain given by an explicit row-stochastic matrix.
    pub fn from_matrix(
        p: DMatrix<f64>,
        weights: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        mixing_time: f64,
    ) -> Result<Self> {
        let m = p.nrows();
        if p.ncols() != m || weights.len() != m || reward.len() != m {
            return Err(Error::Dimension(
                "matrix, weights and reward must agree in size".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("discount {gamma} is outside [0, 1)")));
        }
        Ok(Self {
            transition: GridTransition::Block { base: p, factor: 1 },
            weights,
            reward,
            gamma,
            mixing_time,
        })
    }

    /// Number of grid cells.
    pub fn size(&self) -> usize {
        self.weights.len()
    }

    /// Stationary cell masses.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Reward on each cell.
    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// Discount factor.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Declared mixing time.
    pub fn mixing_time(&self) -> f64 {
        self.mixing_time
    }

    /// Transition operator.
    pub fn transition(&self) -> &GridTransition {
        &self.transition
    }

    /// Applies the transition operator: `(Pf)(x) = E[f(X') | X = x]`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match &self.transition {
            GridTransition::Identity => f.to_vec(),
            GridTransition::Block { base, factor } => {
                let b = base.nrows();
                let avg = DVector::from_iterator(
                    b,
                    (0..b).map(|i| {
                        f[i * factor..(i + 1) * factor].iter().sum::<f64>() / *factor as f64
                    }),
                );
                let next = base * avg;
                (0..self.size()).map(|c| next[c / factor]).collect()
            }
        }
    }

    /// Dense `m × m` transition matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.size();
        match &self.transition {
            GridTransition::Identity => DMatrix::identity(m, m),
            GridTransition::Block { base, factor } => {
                DMatrix::from_fn(m, m, |i, k| base[(i / factor, k / factor)] / *factor as f64)
            }
        }
    }

    /// Largest deviation of a row sum from one.
    pub fn row_sum_residual(&self) -> f64 {
        match &self.transition {
            GridTransition::Identity => 0.0,
            GridTransition::Block { base, .. } => base
                .row_iter()
                .map(|r| (r.sum() - 1.0).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Sup-norm of `μᵀP − μᵀ`.
    pub fn stationarity_residual(&self) -> f64 {
        let m = self.size();
        let mut out = vec![0.0; m];
        match &self.transition {
            GridTransition::Identity => return 0.0,
            GridTransition::Block { base, factor } => {
                let b = base.nrows();
                let mut mass = vec![0.0; b];
                for (c, w) in self.weights.iter().enumerate() {
                    mass[c / factor] += w;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    let kb = k / factor;
                    *o = (0..b).map(|i| mass[i] * base[(i, kb)]).sum::<f64>() / *factor as f64;
                }
            }
        }
        out.iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Solves `(I − c P) x = rhs` for `0 ≤ c < 1`.
    pub fn resolvent(&self, c: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.transition {
            GridTransition::Identity => Ok(rhs.iter().map(|v| v / (1.0 - c)).collect()),
            GridTransition::Block { base, factor } => {
                let b = base.nrows();
                let avg = DVector::from_iterator(
                    b,
                    (0..b).map(|i| {
                        rhs[i * factor..(i + 1) * factor].iter().sum::<f64>() / *factor as f64
                    }),
                );
                let system = DMatrix::identity(b, b) - base * c;
                let coarse = crate::linalg::solve(&system, &avg)?;
                let next = base * coarse;
                Ok((0..self.size())
                    .map(|k| rhs[k] + c * next[k / factor])
                    .collect())
            }
        }
    }

    /// Inner product `⟨f, g⟩_μ`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    /// Norm `‖f‖_μ`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// Sup-norm over cells with positive mass.
    pub fn sup_norm(&self, f: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Expected conditional variance `E_μ[Var(f(X') | X)]`.
    pub fn conditional_variance(&self, f: &[f64]) -> f64 {
        let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
        let p_sq = self.apply(&sq);
        let p_f = self.apply(f);
        self.weights
            .iter()
            .zip(p_sq.iter().zip(&p_f))
            .map(|(w, (a, b))| w * (a - b * b))
            .sum::<f64>()
            .max(0.0)
    }
}

//! Key-value experiment configuration.
//!
//! Files are TOML documents. Every key is optional; missing keys take the
//! defaults of [`ExperimentConfig::default`]. A minimal file:
//!
//! ```toml
//! name = "slow-mixing"
//! kernel = "exp"
//! truncation = 8
//! modes = ["path"]
//! weights = ["k1", "k5", "td10:0.5"]
//! ridge = "auto"
//!
//! [[instance]]
//! tau = 201.7
//! theta = 0.19635
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::WeightVector;
use crate::rkhs::KernelSpec;
use crate::theory::RidgeRule;

macro_rules! string_serde {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    };
}

/// How each trial's data are collected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModeSpec {
    /// One trajectory (`path`).
    Path,
    /// Independent transition pairs (`iid`).
    Iid,
    /// Independent episodes of the given length (`episodes:L`).
    Episodes(usize),
}

impl ModeSpec {
    /// Episode length used by the multi-episode noise functional.
    pub fn episode_len(&self) -> Option<usize> {
        match self {
            ModeSpec::Path => None,
            ModeSpec::Iid => Some(2),
            ModeSpec::Episodes(l) => Some(*l),
        }
    }
}

impl FromStr for ModeSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "path" => Ok(ModeSpec::Path),
            "iid" => Ok(ModeSpec::Iid),
            other => match other.strip_prefix("episodes:") {
                Some(l) => {
                    let l: usize = l
                        .parse()
                        .map_err(|_| Error::Config(format!("bad episode length in '{other}'")))?;
                    if l < 2 {
                        return Err(Error::Config("episode length must be at least 2".into()));
                    }
                    Ok(ModeSpec::Episodes(l))
                }
                None => Err(Error::Config(format!(
                    "unknown mode '{other}' (expected path, iid or episodes:L)"
                ))),
            },
        }
    }
}

impl fmt::Display for ModeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeSpec::Path => write!(f, "path"),
            ModeSpec::Iid => write!(f, "iid"),
            ModeSpec::Episodes(l) => write!(f, "episodes:{l}"),
        }
    }
}

string_serde!(ModeSpec);

/// Weight scheme: `kN` for the `N`-step operator, `tdN:λ` for truncated TD(λ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightSpec {
    /// `w = e_K`.
    KStep(usize),
    /// `w ∝ (1, λ, …, λ^{K−1})`.
    TdLambda(usize, f64),
}

impl WeightSpec {
    /// Materializes the weight vector.
    pub fn build(&self) -> Result<WeightVector> {
        match *self {
            WeightSpec::KStep(k) => WeightVector::kstep(k),
            WeightSpec::TdLambda(k, l) => WeightVector::td_lambda(k, l),
        }
    }

    /// Look-ahead `K`.
    pub fn look_ahead(&self) -> usize {
        match *self {
            WeightSpec::KStep(k) | WeightSpec::TdLambda(k, _) => k,
        }
    }
}

impl FromStr for WeightSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            Error::Config(format!(
                "bad weight scheme '{s}' (expected kN or tdN:lambda)"
            ))
        };
        if let Some(rest) = s.strip_prefix("td") {
            let (k, l) = rest.split_once(':').ok_or_else(bad)?;
            let k: usize = k.parse().map_err(|_| bad())?;
            let l: f64 = l.parse().map_err(|_| bad())?;
            if k == 0 || !(0.0..1.0).contains(&l) {
                return Err(bad());
            }
            Ok(WeightSpec::TdLambda(k, l))
        } else if let Some(k) = s.strip_prefix('k') {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            Ok(WeightSpec::KStep(k))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::KStep(k) => write!(f, "k{k}"),
            WeightSpec::TdLambda(k, l) => write!(f, "td{k}:{l}"),
        }
    }
}

string_serde!(WeightSpec);

/// Estimator used for every trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SolverSpec {
    /// Batch forward LSTD.
    Forward,
    /// Batch backward (eligibility trace) solve.
    Backward,
    /// Online recursion.
    Sa,
}

impl FromStr for SolverSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(SolverSpec::Forward),
            "backward" => Ok(SolverSpec::Backward),
            "sa" => Ok(SolverSpec::Sa),
            other => Err(Error::Config(format!(
                "unknown solver '{other}' (expected forward, backward or sa)"
            ))),
        }
    }
}

impl fmt::Display for SolverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverSpec::Forward => "forward",
            SolverSpec::Backward => "backward",
            SolverSpec::Sa => "sa",
        })
    }
}

string_serde!(SolverSpec);

/// Linear-algebra route for the forward solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LinearPath {
    /// `J × J` feature-coordinate system.
    Feature,
    /// `ñ × ñ` kernel-matrix system.
    Kernel,
    /// Feature path when `J ≤ 512` or `J < ñ`, kernel path otherwise.
    Auto,
}

impl LinearPath {
    /// Whether the kernel-matrix system is used for truncation `j` and `n_tilde` anchors.
    pub fn use_kernel(&self, j: usize, n_tilde: usize) -> bool {
        match self {
            LinearPath::Feature => false,
            LinearPath::Kernel => true,
            LinearPath::Auto => j > 512 && n_tilde <= j,
        }
    }
}

impl FromStr for LinearPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "feature" => Ok(LinearPath::Feature),
            "kernel" => Ok(LinearPath::Kernel),
            "auto" => Ok(LinearPath::Auto),
            other => Err(Error::Config(format!(
                "unknown linear path '{other}' (expected feature, kernel or auto)"
            ))),
        }
    }
}

impl fmt::Display for LinearPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearPath::Feature => "feature",
            LinearPath::Kernel => "kernel",
            LinearPath::Auto => "auto",
        })
    }
}

string_serde!(LinearPath);

/// Regularization choice: a fixed value or a rule driven by the critical radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RidgeValue", into = "RidgeValue")]
pub enum RidgeSpec {
    /// Fixed `λ_n`.
    Fixed(f64),
    /// `λ_n` from the critical radius.
    Rule(RidgeRule),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RidgeValue {
    Number(f64),
    Text(String),
}

impl FromStr for RidgeSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            Error::Config(format!(
                "bad ridge '{s}' (expected a number, auto or theorem[:c0])"
            ))
        };
        match s {
            "auto" => Ok(RidgeSpec::Rule(RidgeRule::Experiment)),
            "theorem" => Ok(RidgeSpec::Rule(RidgeRule::Theorem { c0: 1.0 })),
            _ => {
                if let Some(c0) = s.strip_prefix("theorem:") {
                    let c0: f64 = c0.parse().map_err(|_| bad())?;
                    if !(c0 > 0.0) {
                        return Err(bad());
                    }
                    return Ok(RidgeSpec::Rule(RidgeRule::Theorem { c0 }));
                }
                let v: f64 = s.parse().map_err(|_| bad())?;
                if !(v > 0.0) {
                    return Err(bad());
                }
                Ok(RidgeSpec::Fixed(v))
            }
        }
    }
}

impl fmt::Display for RidgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RidgeSpec::Fixed(v) => write!(f, "{v}"),
            RidgeSpec::Rule(RidgeRule::Experiment) => write!(f, "auto"),
            RidgeSpec::Rule(RidgeRule::Theorem { c0 }) => write!(f, "theorem:{c0}"),
        }
    }
}

impl TryFrom<RidgeValue> for RidgeSpec {
    type Error = Error;
    fn try_from(v: RidgeValue) -> Result<Self> {
        match v {
            RidgeValue::Number(x) if x > 0.0 => Ok(RidgeSpec::Fixed(x)),
            RidgeValue::Number(x) => Err(Error::Config(format!("ridge {x} must be positive"))),
            RidgeValue::Text(s) => s.parse(),
        }
    }
}

impl From<RidgeSpec> for RidgeValue {
    fn from(r: RidgeSpec) -> Self {
        match r {
            RidgeSpec::Fixed(x) => RidgeValue::Number(x),
            other => RidgeValue::Text(other.to_string()),
        }
    }
}

/// Eigendecay family of the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `μ_j = j^{-exponent}`.
    Poly,
    /// `μ_j = exp(−(j−1)²)`.
    Exp,
}

/// One MRP of the experiment family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    /// Mixing time `τ*`.
    pub tau: f64,
    /// Mis-specification angle `ϑ`.
    pub theta: f64,
}

/// Full description of a Monte Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label.
    pub name: String,
    /// Discount factor `γ`.
    pub gamma: f64,
    /// Reward scale `r0`.
    pub r0: f64,
    /// Kernel eigendecay family.
    pub kernel: KernelFamily,
    /// Exponent `2α` of the polynomial decay.
    pub exponent: f64,
    /// Number of retained eigenpairs `J`.
    pub truncation: usize,
    /// Sampling modes to compare.
    pub modes: Vec<ModeSpec>,
    /// Weight schemes to compare.
    pub weights: Vec<WeightSpec>,
    /// Estimator.
    pub solver: SolverSpec,
    /// Linear-algebra route of the forward solver.
    pub linear_path: LinearPath,
    /// Sample sizes; empty means the default grid.
    pub sample_sizes: Vec<usize>,
    /// Monte Carlo trials per sample size.
    pub trials: usize,
    /// Seed of trial 0; trial `i` uses `seed + i`.
    pub seed: u64,
    /// Regularization.
    pub ridge: RidgeSpec,
    /// Errors are capped at this multiple of `‖θ*‖²_μ`.
    pub truncation_multiplier: f64,
    /// Worker threads; results do not depend on this value.
    pub threads: usize,
    /// MRP instances.
    #[serde(rename = "instance")]
    pub instances: Vec<InstanceSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            gamma: 0.9,
            r0: 1.0,
            kernel: KernelFamily::Poly,
            exponent: 1.2,
            truncation: 1024,
            modes: vec![ModeSpec::Path],
            weights: vec![WeightSpec::KStep(1)],
            solver: SolverSpec::Forward,
            linear_path: LinearPath::Feature,
            sample_sizes: Vec::new(),
            trials: 200,
            seed: 0,
            ridge: RidgeSpec::Rule(RidgeRule::Experiment),
            truncation_multiplier: 100.0,
            threads: 1,
            instances: vec![InstanceSpec {
                tau: 4f64.exp() / 2.0,
                theta: 0.0,
            }],
        }
    }
}

/// Sample-size grid `⌊exp(7 + 0.3 i)⌋` for `i = 0..count`.
pub fn sample_size_grid(count: usize) -> Vec<usize> {
    (0..count)
        .map(|i| (7.0 + 0.3 * i as f64).exp().floor() as usize)
        .collect()
}

impl ExperimentConfig {
    /// Parses a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a file.
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let over: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        base.extend(over);
        let cfg: Self = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sample sizes with the default grid substituted for an empty list.
    pub fn sizes(&self) -> Vec<usize> {
        if self.sample_sizes.is_empty() {
            sample_size_grid(7)
        } else {
            self.sample_sizes.clone()
        }
    }

    /// Kernel for mis-specification angle `theta`.
    pub fn kernel_spec(&self, theta: f64) -> Result<KernelSpec> {
        match self.kernel {
            KernelFamily::Poly => KernelSpec::poly(self.exponent, self.truncation, theta),
            KernelFamily::Exp => KernelSpec::exponential(self.truncation, theta),
        }
    }

    /// Checks the invariants of a runnable configuration.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.r0 > 0.0) {
            return fail(format!("r0 {} must be positive", self.r0));
        }
        if self.truncation == 0 {
            return fail("truncation must be positive".into());
        }
        if !(self.truncation_multiplier > 0.0) {
            return fail("truncation_multiplier must be positive".into());
        }
        if self.modes.is_empty() || self.weights.is_empty() || self.instances.is_empty() {
            return fail("modes, weights and instances must be non-empty".into());
        }
        let sizes = self.sizes();
        if sizes.windows(2).any(|p| p[0] >= p[1]) {
            return fail("sample sizes must be strictly increasing".into());
        }
        for inst in &self.instances {
            if !(inst.tau >= 1.0) {
                return fail(format!("mixing time {} must be at least 1", inst.tau));
            }
            if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&inst.theta) {
                return fail(format!("angle {} outside [0, pi/2]", inst.theta));
            }
        }
        for mode in &self.modes {
            for w in &self.weights {
                let k = w.look_ahead();
                if let Some(l) = mode.episode_len() {
                    if k + 1 > l {
                        return fail(format!(
                            "look-ahead {k} needs episodes longer than {l} ({mode})"
                        ));
                    }
                }
                if sizes[0] <= k {
                    return fail(format!(
                        "sample size {} too small for look-ahead {k}",
                        sizes[0]
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_field_kind() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "t"
            kernel = "exp"
            truncation = 8
            modes = ["path", "episodes:20"]
            weights = ["k1", "td5:0.5"]
            solver = "backward"
            ridge = 0.001
            sample_sizes = [100, 200]

            [[instance]]
            tau = 2.0
            theta = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.kernel, KernelFamily::Exp);
        assert_eq!(cfg.modes, vec![ModeSpec::Path, ModeSpec::Episodes(20)]);
        assert_eq!(cfg.weights[1], WeightSpec::TdLambda(5, 0.5));
        assert_eq!(cfg.ridge, RidgeSpec::Fixed(0.001));
        assert_eq!(cfg.solver, SolverSpec::Backward);
        assert_eq!(
            cfg.instances,
            vec![InstanceSpec {
                tau: 2.0,
                theta: 0.1
            }]
        );
        assert_eq!(cfg.trials, 200);
    }

    #[test]
    fn ridge_rules_parse() {
        assert_eq!(
            "auto".parse::<RidgeSpec>().unwrap(),
            RidgeSpec::Rule(RidgeRule::Experiment)
        );
        assert_eq!(
            "theorem:2.5".parse::<RidgeSpec>().unwrap(),
            RidgeSpec::Rule(RidgeRule::Theorem { c0: 2.5 })
        );
        assert!("-1".parse::<RidgeSpec>().is_err());
        assert!("often".parse::<RidgeSpec>().is_err());
    }

    #[test]
    fn pairs_reject_multi_step_weights() {
        let err = ExperimentConfig::from_toml("modes = [\"iid\"]\nweights = [\"k3\"]");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_sizes() {
        assert!(ExperimentConfig::from_toml("colour = 3").is_err());
        assert!(ExperimentConfig::from_toml("sample_sizes = [200, 100]").is_err());
        assert!(ExperimentConfig::from_toml("trials = 0").is_err());
    }

    #[test]
    fn toml_round_trip_and_overlay() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
        let over = cfg.overlay("trials = 3\nseed = 9").unwrap();
        assert_eq!((over.trials, over.seed), (3, 9));
        assert_eq!(over.truncation, cfg.truncation);
    }

    #[test]
    fn default_grid_matches_formula() {
        assert_eq!(
            sample_size_grid(7),
            vec![1096, 1480, 1998, 2697, 3640, 4914, 6634]
        );
    }
}

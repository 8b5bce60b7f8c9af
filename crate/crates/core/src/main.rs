use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kernel_td::config::{
    ExperimentConfig, InstanceSpec, KernelFamily, ModeSpec, RidgeSpec, SolverSpec, WeightSpec,
};
use kernel_td::estimator::l2mu_error;
use kernel_td::harness::{
    emit_csv, figure_preset, run_experiment, sample, solve, write_csv, Reference,
};
use kernel_td::lowerbound::{HardFamily, LbParams};
use kernel_td::mrp::build_experiment_mrp;
use kernel_td::theory::{theory_report, BoundInputs, DecayClass};
use kernel_td::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kernel-td",
    version,
    about = "Kernel LSTD policy evaluation from trajectory data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimate and print grid values (stdout) and errors (stderr) as CSV.
    Estimate {
        #[command(flatten)]
        setup: Setup,
        /// Estimator.
        #[arg(long, default_value = "forward")]
        method: SolverSpec,
        /// Write the grid CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print population constants, critical radius and rate bounds.
    Theory {
        #[command(flatten)]
        setup: Setup,
        /// Print the full population report instead of the rate summary.
        #[arg(long)]
        report: bool,
    },
    /// Build the hard family and print its certificates as CSV.
    LbVerify {
        /// Standard-deviation level.
        #[arg(long, default_value_t = 1.0)]
        sigma_bar: f64,
        /// Mis-specification level; defaults to the midpoint of its admissible interval.
        #[arg(long)]
        rho_perp: Option<f64>,
        /// Mixing time; defaults to twice the horizon.
        #[arg(long)]
        tau_bar: Option<f64>,
        /// Discount factor.
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Sample size.
        #[arg(long, default_value_t = 1e4)]
        n: f64,
        /// Number of blocks (a power of two).
        #[arg(long, default_value_t = 8)]
        blocks: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment and write the result table as CSV.
    Experiment {
        /// Configuration file; keys override the figure preset when both are given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        /// Named figure preset.
        #[arg(long, value_parser = ["fig1a", "fig1b", "fig2a", "fig2b"])]
        figure: Option<String>,
        /// Use the full sample-size grid and 5000 trials.
        #[arg(long)]
        full_scale: bool,
    },
}

/// Instance, kernel, weights and data settings shared by `estimate` and `theory`.
#[derive(Args)]
struct Setup {
    /// Configuration file; its first instance, mode and weight scheme are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mixing time.
    #[arg(long)]
    tau: Option<f64>,
    /// Mis-specification angle.
    #[arg(long)]
    theta: Option<f64>,
    /// Reward scale.
    #[arg(long)]
    r0: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Kernel family.
    #[arg(long, value_parser = ["poly", "exp"])]
    kernel: Option<String>,
    /// Polynomial decay exponent.
    #[arg(long)]
    exponent: Option<f64>,
    /// Number of retained eigenpairs.
    #[arg(long)]
    truncation: Option<usize>,
    /// Sampling mode: path, iid or episodes:L.
    #[arg(long)]
    mode: Option<ModeSpec>,
    /// Look-ahead K.
    #[arg(long)]
    k: Option<usize>,
    /// TD(λ) parameter; without it the K-step weights are used.
    #[arg(long)]
    lambda: Option<f64>,
    /// Ridge: a positive number, auto or theorem[:c0].
    #[arg(long)]
    ridge: Option<RidgeSpec>,
    /// Sample size.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
}

struct Resolved {
    cfg: ExperimentConfig,
    instance: InstanceSpec,
    mode: ModeSpec,
    weights: WeightSpec,
    n: usize,
}

impl Setup {
    fn resolve(&self) -> Result<Resolved> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let mut instance = cfg.instances[0];
        if let Some(v) = self.tau {
            instance.tau = v;
        }
        if let Some(v) = self.theta {
            instance.theta = v;
        }
        if let Some(v) = self.r0 {
            cfg.r0 = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(k) = &self.kernel {
            cfg.kernel = if k == "exp" {
                KernelFamily::Exp
            } else {
                KernelFamily::Poly
            };
            if self.truncation.is_none() && cfg.kernel == KernelFamily::Exp {
                cfg.truncation = 8;
            }
        }
        if let Some(v) = self.exponent {
            cfg.exponent = v;
        }
        if let Some(v) = self.truncation {
            cfg.truncation = v;
        }
        if let Some(v) = self.ridge {
            cfg.ridge = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        let mode = self.mode.unwrap_or(cfg.modes[0]);
        let weights = match (self.k, self.lambda) {
            (None, None) => cfg.weights[0],
            (k, None) => WeightSpec::KStep(k.unwrap_or(1)),
            (k, Some(l)) => WeightSpec::TdLambda(k.unwrap_or(1), l),
        };
        cfg.instances = vec![instance];
        cfg.modes = vec![mode];
        cfg.weights = vec![weights];
        cfg.sample_sizes = vec![self.n];
        cfg.validate()?;
        Ok(Resolved {
            cfg,
            instance,
            mode,
            weights,
            n: self.n,
        })
    }
}

fn estimate(setup: &Setup, method: SolverSpec, out: Option<PathBuf>) -> Result<()> {
    let r = setup.resolve()?;
    let mrp = build_experiment_mrp(r.instance.tau, r.instance.theta, r.cfg.r0, r.cfg.gamma)?;
    let spec = r.cfg.kernel_spec(r.instance.theta)?;
    let w = r.weights.build()?;
    let reference = Reference::new(&mrp, &spec, &w, r.mode.episode_len())?;
    let (ridge, delta) = reference.ridge(&spec, r.cfg.ridge, r.n)?;
    let data = sample(&mrp, r.mode, r.n, r.cfg.seed)?;
    let est = solve(method, r.cfg.linear_path, &data, &mrp, &spec, &w, ridge)?;
    let m = reference.grid.size();
    let values = est.grid_values(m)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(["x", "estimate", "fixed_point", "value_function"])?;
    let fp = &reference.report.fixed_point.values;
    for c in 0..m {
        let x = (c as f64 + 0.5) / m as f64;
        csv.write_record(&[x, values[c], fp[c], reference.report.value[c]].map(|v| v.to_string()))?;
    }
    csv.flush()?;
    let weights = reference.grid.weights();
    let mut summary = csv::Writer::from_writer(std::io::stderr());
    summary.write_record(["metric", "value"])?;
    for (k, v) in [
        ("ridge", ridge),
        ("critical_radius", delta),
        ("error_to_fixed_point", reference.error(&est)),
        (
            "error_to_value_function",
            l2mu_error(&values, &reference.report.value, weights)?,
        ),
    ] {
        summary.write_record([k.to_string(), v.to_string()])?;
    }
    summary.flush()?;
    Ok(())
}

fn theory(setup: &Setup, full: bool) -> Result<()> {
    let r = setup.resolve()?;
    let mrp = build_experiment_mrp(r.instance.tau, r.instance.theta, r.cfg.r0, r.cfg.gamma)?;
    let spec = r.cfg.kernel_spec(r.instance.theta)?;
    let w = r.weights.build()?;
    let reference = Reference::new(&mrp, &spec, &w, r.mode.episode_len())?;
    let rep = &reference.report;
    if full {
        println!("{}", render_population(rep, &reference));
        return Ok(());
    }
    let decay = match r.cfg.kernel {
        KernelFamily::Poly => DecayClass::Poly(r.cfg.exponent / 2.0),
        KernelFamily::Exp => DecayClass::FiniteRank(spec.truncation()),
    };
    let inputs = BoundInputs {
        sigma_m: rep.sigma_m,
        residual_norm: rep.residual_norm,
        kappa: spec.kappa(),
        gamma: rep.gamma,
        gamma_bar: rep.gamma_bar,
        mixing_time: rep.mixing_time,
        look_ahead: r.weights.look_ahead(),
        n: r.n as f64,
        radius: reference.radius,
        reward_bound: rep.reward_sup,
        value_bound: reference.grid.sup_norm(&rep.value),
        decay,
    };
    let rule = match r.cfg.ridge {
        RidgeSpec::Rule(rule) => rule,
        RidgeSpec::Fixed(_) => kernel_td::theory::RidgeRule::Experiment,
    };
    let upper = spec.b().max(kernel_td::theory::radius_bracket(
        spec.eigenvalues(),
        r.n as f64,
        reference.radius,
        spec.kappa(),
        rep.zeta0,
    ));
    let report = theory_report(spec.eigenvalues(), rep.zeta0, upper, rule, &inputs)?;
    println!("{}", report.render());
    Ok(())
}

fn render_population(rep: &kernel_td::oracle::PopulationReport, reference: &Reference) -> String {
    let fields: Vec<(&str, f64)> = vec![
        ("gamma", rep.gamma),
        ("gamma_bar", rep.gamma_bar),
        ("mixing_time", rep.mixing_time),
        ("vperp_norm", rep.vperp_norm),
        ("theta_error_norm", rep.theta_error_norm),
        ("residual_norm", rep.residual_norm),
        ("residual_sup", rep.residual_sup),
        ("fixed_point_residual", rep.fixed_point_residual),
        ("sigma_v", rep.sigma_v),
        ("sigma_m", rep.sigma_m),
        ("sigma_a", rep.sigma_a),
        ("zeta0", rep.zeta0),
        ("zeta0_tilde", rep.zeta0_tilde),
        ("hilbert_norm", rep.hilbert_norm),
        ("reward_sup", rep.reward_sup),
        ("radius", reference.radius),
    ];
    let mut s = String::from("{\n");
    for (k, v) in fields {
        s.push_str(&format!("  \"{k}\": {v:e},\n"));
    }
    s.push_str("  \"zeta0_tilde_constant\": \"c' = 1\",\n");
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    s.push_str(&format!("  \"value\": [{}],\n", list(&rep.value)));
    s.push_str(&format!(
        "  \"fixed_point\": [{}]\n}}",
        list(&rep.fixed_point.values)
    ));
    s
}

#[allow(clippy::too_many_arguments)]
fn lb_verify(
    sigma_bar: f64,
    rho_perp: Option<f64>,
    tau_bar: Option<f64>,
    gamma: f64,
    n: f64,
    blocks: usize,
    out: Option<PathBuf>,
) -> Result<bool> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount {gamma} is outside [0, 1)")));
    }
    let tau_bar = tau_bar.unwrap_or(2.0 / (1.0 - gamma));
    let mut params = LbParams::with_midpoint(sigma_bar, tau_bar, gamma, n, blocks);
    if let Some(r) = rho_perp {
        params.rho_perp = r;
    }
    let family = HardFamily::new(params)?;
    let certs = family.certify()?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(["certificate", "value", "limit", "direction", "passed"])?;
    for c in &certs {
        csv.write_record([
            c.name.clone(),
            c.value.to_string(),
            c.limit.to_string(),
            if c.upper { "at_most" } else { "above" }.to_string(),
            c.passed.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(certs.iter().all(|c| c.passed))
}

fn experiment(
    config: Option<PathBuf>,
    out: PathBuf,
    figure: Option<String>,
    full_scale: bool,
) -> Result<()> {
    let base = match &figure {
        Some(f) => figure_preset(f, full_scale)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = match &config {
        Some(p) => base.overlay(&std::fs::read_to_string(p)?)?,
        None if figure.is_some() => base,
        None => {
            return Err(Error::Config(
                "experiment needs --config or --figure".into(),
            ))
        }
    };
    if full_scale && figure.is_none() {
        cfg.sample_sizes = kernel_td::config::sample_size_grid(15);
        cfg.trials = 5000;
    }
    let res = run_experiment(&cfg)?;
    if out.as_os_str() == "-" {
        write_csv(&res.rows, std::io::stdout())?;
    } else {
        emit_csv(&res.rows, &out)?;
    }
    for (row, t) in res.rows.iter().zip(&res.truncated) {
        if *t > 0 {
            eprintln!("{} n={}: {} capped errors", row.method, row.n, t);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate { setup, method, out } => estimate(&setup, method, out).map(|_| true),
        Command::Theory { setup, report } => theory(&setup, report).map(|_| true),
        Command::LbVerify {
            sigma_bar,
            rho_perp,
            tau_bar,
            gamma,
            n,
            blocks,
            out,
        } => lb_verify(sigma_bar, rho_perp, tau_bar, gamma, n, blocks, out),
        Command::Experiment {
            config,
            out,
            figure,
            full_scale,
        } => experiment(config, out, figure, full_scale).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some certificates failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

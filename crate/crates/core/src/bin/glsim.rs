use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use glsim::harness::{run_experiment, ExperimentSpec};

/// Simulator and statistical probes for the stochastic real Ginzburg-Landau
/// equation on the circle driven by alpha-stable noise.
///
/// Settings resolve as: command-line flag, then GLSIM_WORKERS (for the worker
/// count only), then the --config file, then built-in defaults.
#[derive(Parser)]
#[command(name = "glsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the stable sampler against its characteristic function.
    NoiseTest(Flags),
    /// Maximal moments of the Ornstein-Uhlenbeck part over growing horizons.
    OuProbe(Flags),
    /// Simulate one trajectory; writes <out>.trajectory.csv as well.
    Simulate(Flags),
    /// Compare the closed-form Riccati solution with RK4 and its half-interval bound.
    RiccatiVerify(Flags),
    /// Integer-time hitting times of H_delta balls and their exponential moments.
    Recurrence(Flags),
    /// Occupation averages of functionals from several initial conditions.
    Occupation(Flags),
    /// Moments of |X_T|_{H_delta} across initial conditions.
    MomentProbe(Flags),
    /// Decay of deviation probabilities of occupation averages.
    LdpProbe(Flags),
    /// Run the acceptance checks (--preset full or quick).
    VerifyAll(Flags),
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Report path; the manifest goes to <PATH>.manifest.json.
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Number of Fourier modes.
    #[arg(long = "K", value_name = "K")]
    modes: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    /// Time horizon.
    #[arg(long = "T", value_name = "T")]
    horizon: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    record_stride: Option<String>,
    /// Common factor on every noise mode amplitude.
    #[arg(long)]
    noise_scale: Option<String>,
    #[arg(long)]
    n_traj: Option<String>,
    /// Comma-separated horizons.
    #[arg(long)]
    horizons: Option<String>,
    /// Comma-separated H_delta thresholds.
    #[arg(long = "M-grid", value_name = "LIST")]
    m_grid: Option<String>,
    #[arg(long, value_name = "LIST")]
    lambda_grid: Option<String>,
    /// Comma-separated |x0|_H values.
    #[arg(long, value_name = "LIST")]
    initial_norms: Option<String>,
    /// exp_neg_h2, tanh_h2, tanh_hdelta2:M, one or const:C (comma-separated).
    #[arg(long)]
    functional: Option<String>,
    #[arg(long)]
    x0_norm: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    /// Moment order for ou-probe.
    #[arg(long)]
    moment_p: Option<String>,
    #[arg(long)]
    hitting_horizon: Option<String>,
    /// X or Y, for moment-probe.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    c_hat: Option<String>,
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    pi_hat: Option<String>,
    #[arg(long)]
    reference_horizon: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    #[arg(long)]
    two_sided: Option<String>,
    /// full or quick, for verify-all.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated subset of acceptance checks, for verify-all.
    #[arg(long, value_name = "LIST")]
    criteria: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs: [(&str, Option<String>); 31] = [
            ("out", self.out.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("K", self.modes.clone()),
            ("dt", self.dt.clone()),
            ("T", self.horizon.clone()),
            ("alpha", self.alpha.clone()),
            ("beta", self.beta.clone()),
            ("delta", self.delta.clone()),
            ("p", self.p.clone()),
            ("record_stride", self.record_stride.clone()),
            ("noise_scale", self.noise_scale.clone()),
            ("n_traj", self.n_traj.clone()),
            ("horizons", self.horizons.clone()),
            ("M_grid", self.m_grid.clone()),
            ("lambda_grid", self.lambda_grid.clone()),
            ("initial_norms", self.initial_norms.clone()),
            ("functional", self.functional.clone()),
            ("x0_norm", self.x0_norm.clone()),
            ("theta", self.theta.clone()),
            ("moment_p", self.moment_p.clone()),
            ("hitting_horizon", self.hitting_horizon.clone()),
            ("target", self.target.clone()),
            ("c_hat", self.c_hat.clone()),
            ("level", self.level.clone()),
            ("pi_hat", self.pi_hat.clone()),
            ("reference_horizon", self.reference_horizon.clone()),
            ("burn_in", self.burn_in.clone()),
            ("two_sided", self.two_sided.clone()),
            ("preset", self.preset.clone()),
            ("criteria", self.criteria.clone()),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }
}

const USAGE_EXIT: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE_EXIT),
            };
        }
    };
    let (name, flags) = match &cli.command {
        Command::NoiseTest(f) => ("noise-test", f),
        Command::OuProbe(f) => ("ou-probe", f),
        Command::Simulate(f) => ("simulate", f),
        Command::RiccatiVerify(f) => ("riccati-verify", f),
        Command::Recurrence(f) => ("recurrence", f),
        Command::Occupation(f) => ("occupation", f),
        Command::MomentProbe(f) => ("moment-probe", f),
        Command::LdpProbe(f) => ("ldp-probe", f),
        Command::VerifyAll(f) => ("verify-all", f),
    };
    let result = ExperimentSpec::resolve(name, flags.config.as_deref(), &flags.overrides())
        .and_then(|spec| run_experiment(&spec, &mut |line| eprintln!("{line}")));
    match result {
        Ok(summary) => {
            eprintln!(
                "wrote {} rows to {} in {:.2} s",
                summary.rows,
                summary.report.display(),
                summary.wall_time_s
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("glsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

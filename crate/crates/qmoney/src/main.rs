//! Operator command line: mint/verify/serve wrappers around the bank
//! service, the parameter optimizer, device calibration and the CSV
//! experiment harnesses.
//!
//! Exit codes: 0 success or accepted, 2 verification rejected, 3 infeasible
//! parameters, 4 I/O or protocol error.

use clap::{Args, Parser, Subcommand};
use qmoney::experiment::{
    self, apply_config_map, default_curve_grid, error_rate_csv, optimize_csv, parse_config_file,
    run_calibration, run_error_rate_experiment, run_optimize, run_security_curves,
    security_curves_csv, EpsSetting, ExperimentConfig, ExperimentError,
};
use qmoney::photonics::{DetailedDevice, DeviceModel};
use qmoney::security::{SecurityError, DEFAULT_FORGE_TARGET, DEFAULT_MU};
use qmoney::service::{client_verify, request_mint, Bank, BankOptions, ServiceError};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_OK: u8 = 0;
const EXIT_REJECTED: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "qmoney", version, about = "Quantum banknote toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Request a new banknote from a running bank and store it as a file.
    Mint(MintArgs),
    /// Verify a banknote file against a running bank.
    Verify(VerifyArgs),
    /// Run the bank daemon.
    Serve(ServeArgs),
    /// Optimize the slack parameter ε for the configured and the strict
    /// (β=0) threshold settings.
    Optimize(OptimizeArgs),
    /// Calibrate the detailed device model: exact (η, β) plus a Monte
    /// Carlo cross-check.
    Calibrate(CalibrateArgs),
    /// Measured error rate vs number of states, as CSV.
    ExperimentErrorRate(ExperimentArgs),
    /// Forging-probability curves vs number of states, as CSV.
    SecurityCurves(ExperimentArgs),
}

#[derive(Args)]
struct MintArgs {
    /// Bank endpoint, host:port.
    #[arg(long, default_value = "127.0.0.1:9025")]
    endpoint: String,
    /// Number of states in the note.
    #[arg(long)]
    n: u32,
    /// Mean photon number per pulse.
    #[arg(long)]
    mu: Option<f64>,
    /// Verification attempt cap T.
    #[arg(long)]
    cap_t: Option<u32>,
    /// Where to write the banknote file.
    #[arg(long)]
    out: PathBuf,
    /// Seed for request ids (defaults to OS entropy).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DeviceArgs {
    /// Device model: abstract or detailed.
    #[arg(long, default_value = "abstract")]
    device: String,
    /// Abstract model: conclusive-outcome probability.
    #[arg(long, default_value_t = qmoney::security::DEFAULT_ETA)]
    eta_c: f64,
    /// Abstract model: conclusive bit-flip probability.
    #[arg(long, default_value_t = qmoney::security::DEFAULT_BETA)]
    e_flip: f64,
    /// Detailed model: detector+path efficiency.
    #[arg(long)]
    eta_det: Option<f64>,
    /// Detailed model: dark-count probability per detector per gate.
    #[arg(long)]
    p_dark: Option<f64>,
    /// Detailed model: interference visibility.
    #[arg(long)]
    visibility: Option<f64>,
    /// Detailed model: fraction of μ reaching each interferometer.
    #[arg(long)]
    split_loss: Option<f64>,
}

impl DeviceArgs {
    fn detailed(&self) -> DetailedDevice {
        let mut d = DetailedDevice::reference_defaults();
        if let Some(v) = self.eta_det {
            d.eta_det = v;
        }
        if let Some(v) = self.p_dark {
            d.p_dark = v;
        }
        if let Some(v) = self.visibility {
            d.visibility = v;
        }
        if let Some(v) = self.split_loss {
            d.split_loss = v;
        }
        d
    }

    fn model(&self) -> Result<DeviceModel, String> {
        match self.device.as_str() {
            "abstract" => {
                for (value, name) in [(self.eta_c, "eta-c"), (self.e_flip, "e-flip")] {
                    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                        return Err(format!("{name} must be a probability in [0, 1], got {value}"));
                    }
                }
                Ok(DeviceModel::Abstract { eta_c: self.eta_c, e_flip: self.e_flip })
            }
            "detailed" => {
                let d = self.detailed();
                d.validate().map_err(|e| e.to_string())?;
                Ok(DeviceModel::Detailed(d))
            }
            other => Err(format!("device must be abstract or detailed, got {other:?}")),
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "127.0.0.1:9025")]
    endpoint: String,
    /// Banknote file to spend from.
    #[arg(long)]
    note: PathBuf,
    /// Number of fresh states to measure.
    #[arg(long)]
    l: u32,
    /// Measurement seed (defaults to OS entropy).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    device: DeviceArgs,
}

#[derive(Args)]
struct ServeArgs {
    /// Ledger journal path.
    #[arg(long)]
    ledger: PathBuf,
    /// Listen address, host:port.
    #[arg(long, default_value = "127.0.0.1:9025")]
    listen: String,
    /// Seed for the minting generator (defaults to OS entropy).
    #[arg(long)]
    mint_seed: Option<u64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, default_value_t = qmoney::security::DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = qmoney::security::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value_t = DEFAULT_FORGE_TARGET)]
    target: f64,
    /// ε grid step.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Write the machine-readable rows here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = DEFAULT_MU)]
    mu: f64,
    /// Monte Carlo sample count for the cross-check.
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Flat key=value config file; CLI flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Comma-separated list of l values.
    #[arg(long)]
    l_grid: Option<String>,
    /// ε for the calibrated case: a number or "auto".
    #[arg(long)]
    eps: Option<String>,
    /// ε for the strict case: a number or "auto".
    #[arg(long)]
    eps_strict: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn build_config(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let map = parse_config_file(path)?;
            apply_config_map(&mut cfg, &map)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
        if let Some(grid) = &self.l_grid {
            cfg.l_grid = grid
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ExperimentError::Config(format!("l_grid: {e}")))?;
        }
        if let Some(eta) = self.eta {
            cfg.eta = eta;
            if let DeviceModel::Abstract { ref mut eta_c, .. } = cfg.device {
                *eta_c = eta;
            }
        }
        if let Some(beta) = self.beta {
            cfg.beta = beta;
            if let DeviceModel::Abstract { ref mut e_flip, .. } = cfg.device {
                *e_flip = beta;
            }
        }
        if let Some(eps) = &self.eps {
            cfg.eps = parse_eps(eps)?;
        }
        if let Some(eps) = &self.eps_strict {
            cfg.eps_strict = parse_eps(eps)?;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn parse_eps(text: &str) -> Result<EpsSetting, ExperimentError> {
    if text.eq_ignore_ascii_case("auto") {
        Ok(EpsSetting::Auto)
    } else {
        text.parse::<f64>()
            .map(EpsSetting::Fixed)
            .map_err(|e| ExperimentError::Config(format!("eps: {e}")))
    }
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn seeded_rng(seed: Option<u64>) -> ChaCha12Rng {
    match seed {
        Some(s) => ChaCha12Rng::seed_from_u64(s),
        None => ChaCha12Rng::from_rng(rand::rngs::OsRng).expect("os entropy"),
    }
}

fn exit_for_service(err: &ServiceError) -> u8 {
    match err {
        ServiceError::Security(SecurityError::Infeasible(_)) => EXIT_INFEASIBLE,
        _ => EXIT_IO,
    }
}

fn run() -> Result<u8, (u8, String)> {
    let cli = Cli::try_parse().map_err(|e| (EXIT_IO, e.to_string()))?;
    match cli.command {
        Command::Mint(args) => {
            let mut rng = seeded_rng(args.seed);
            let file = request_mint(
                &args.endpoint,
                args.n,
                args.mu,
                args.cap_t,
                &args.out,
                &mut rng,
            )
            .map_err(|e| (exit_for_service(&e), e.to_string()))?;
            println!(
                "minted serial={} n={} mu={} -> {}",
                file.serial,
                file.n(),
                file.mu,
                args.out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Verify(args) => {
            let dev = args.device.model().map_err(|e| (EXIT_IO, e))?;
            let mut rng = seeded_rng(args.seed);
            let (verdict, stats) =
                client_verify(&args.endpoint, &args.note, args.l, &dev, &mut rng)
                    .map_err(|e| (exit_for_service(&e), e.to_string()))?;
            println!(
                "verdict={} reason={} l={} l_conclusive={} errors={} threshold={} error_rate={:.6}",
                if verdict.accepted { "ACCEPTED" } else { "REJECTED" },
                verdict.reason,
                stats.l,
                stats.l_conclusive,
                verdict.errors_observed,
                verdict.threshold_used,
                stats.error_rate,
            );
            Ok(if verdict.accepted { EXIT_OK } else { EXIT_REJECTED })
        }
        Command::Serve(args) => {
            let bank = Bank::open(
                &args.ledger,
                BankOptions { mint_seed: args.mint_seed, ..Default::default() },
            )
            .map_err(|e| (exit_for_service(&e), e.to_string()))?;
            qmoney::service::serve_forever(Arc::new(bank), &args.listen)
                .map_err(|e| (exit_for_service(&e), e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Optimize(args) => {
            let report = run_optimize(args.eta, args.beta, args.mu, args.target, args.grid_step)
                .map_err(|e| match e {
                    SecurityError::Infeasible(ref msg) => {
                        (EXIT_INFEASIBLE, format!("infeasible: {msg}"))
                    }
                    other => (EXIT_IO, other.to_string()),
                })?;
            for row in [&report.calibrated, &report.strict] {
                println!(
                    "{}: beta={:.6} eps={:.6} delta={:.8} e_min={:.8} min_l={} total_bound={:.6e}",
                    row.label,
                    row.beta,
                    row.point.eps,
                    row.point.delta,
                    row.point.emin,
                    row.point.min_l,
                    row.breakdown.total,
                );
            }
            write_or_print(&args.out, &optimize_csv(&report))
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Calibrate(args) => {
            let dev = args.device.detailed();
            dev.validate().map_err(|e| (EXIT_IO, e.to_string()))?;
            let report = run_calibration(&dev, args.mu, args.samples, args.seed);
            match report.analytic.beta {
                Some(beta) => println!(
                    "analytic: eta={:.8} beta={:.8}",
                    report.analytic.eta, beta
                ),
                None => println!(
                    "analytic: eta={:.8} beta=not-applicable (no conclusive outcomes)",
                    report.analytic.eta
                ),
            }
            match report.empirical_beta {
                Some(beta) => println!(
                    "monte-carlo ({} samples): eta={:.8} (z={:+.2}) beta={:.8} (z={:+.2})",
                    report.samples,
                    report.empirical_eta,
                    report.eta_z,
                    beta,
                    report.beta_z.unwrap_or(0.0),
                ),
                None => println!(
                    "monte-carlo ({} samples): eta={:.8} (z={:+.2}) beta=not-applicable",
                    report.samples, report.empirical_eta, report.eta_z,
                ),
            }
            let mut arms: Vec<_> = report.per_arm_conclusive.iter().collect();
            arms.sort();
            for (arm, count) in arms {
                println!("conclusive in {arm} arm: {count}");
            }
            Ok(EXIT_OK)
        }
        Command::ExperimentErrorRate(args) => {
            let cfg = args.build_config().map_err(experiment_exit)?;
            let report = run_error_rate_experiment(&cfg).map_err(experiment_exit)?;
            let csv = error_rate_csv(&report);
            let out = cfg.output.clone().or(args.out.clone());
            write_or_print(&out, &csv).map_err(|e| (EXIT_IO, e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::SecurityCurves(args) => {
            let cfg = args.build_config().map_err(experiment_exit)?;
            // the curve command has its own default grid; an explicit
            // l_grid (file or flag) still wins
            let grid = if args.l_grid.is_none()
                && cfg.l_grid == experiment::DEFAULT_ERROR_RATE_GRID.to_vec()
            {
                default_curve_grid()
            } else {
                cfg.l_grid.clone()
            };
            let report = run_security_curves(&cfg, &grid).map_err(experiment_exit)?;
            println!(
                "crossing_calibrated_l={} crossing_strict_l={}",
                report.crossing_calibrated, report.crossing_strict
            );
            let csv = security_curves_csv(&report);
            let out = cfg.output.clone().or(args.out.clone());
            write_or_print(&out, &csv).map_err(|e| (EXIT_IO, e.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}

fn experiment_exit(err: ExperimentError) -> (u8, String) {
    match err {
        ExperimentError::Security(SecurityError::Infeasible(ref msg)) => {
            (EXIT_INFEASIBLE, format!("infeasible: {msg}"))
        }
        other => (EXIT_IO, other.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

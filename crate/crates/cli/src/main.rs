use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semcom_cli::{
    cmd_baseline, cmd_sweep, cmd_train, cmd_transmit, parse_grid, BaselineArgs, CliError, RunConfig, SweepArgs,
    TransmitArgs, DATA_DIR_VAR,
};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Semantic video transmission over simulated wireless channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transceiver and write a checkpoint plus loss curve.
    Train(TrainCmd),
    /// Evaluate PSNR and MS-SSIM over an SNR grid.
    Sweep(SweepCmd),
    /// Send one clip through encoder, channel and decoder.
    Transmit(TransmitCmd),
    /// Run the quantize + Hamming + BPSK baseline over an SNR grid.
    Baseline(BaselineCmd),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override the target bandwidth ratio.
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// SNR values in dB: `low:high:step`, a comma list, `inf` for noiseless.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Fix the channel SNR and sweep the estimate given to the model.
    #[arg(long, allow_hyphen_values = true)]
    snr_test: Option<f64>,
    /// Bandwidth ratio for an untrained model (without --checkpoint).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    with_baseline: bool,
    /// Output CSV.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Also render the curves to this SVG file.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct TransmitCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// SVC1 file or directory of PNG frames.
    #[arg(long)]
    clip: PathBuf,
    /// Channel SNR in dB, or `inf` for a noiseless link.
    #[arg(long, allow_hyphen_values = true, default_value = "inf")]
    snr: f64,
    /// SNR handed to the model; defaults to --snr.
    #[arg(long, allow_hyphen_values = true)]
    snr_est: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reconstructed clip (SVC1).
    #[arg(long, default_value = "reconstructed.svc1")]
    out: PathBuf,
    /// Per-frame metrics CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value = "baseline.csv")]
    out: PathBuf,
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<Option<RunConfig>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let cfg = RunConfig::load(path)?;
    Ok(Some(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    }))
}

fn grid(spec: &str) -> Result<Vec<f64>, CliError> {
    parse_grid(spec).map_err(|e| CliError::Usage(format!("--grid: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let data_root = std::env::var_os(DATA_DIR_VAR).map(PathBuf::from);
    let data_root = data_root.as_deref();
    match cli.command {
        Command::Train(c) => {
            let mut cfg = load_config(c.common.config.as_ref(), c.common.seed)?
                .ok_or_else(|| CliError::Usage("train needs --config".into()))?;
            if let Some(rho) = c.rho {
                cfg = cfg.with_rho(rho)?;
            }
            let s = cmd_train(&cfg, c.checkpoint.as_deref(), data_root)?;
            println!("checkpoint: {}", s.checkpoint.display());
            println!("loss curve: {} ({} steps)", s.loss_csv.display(), s.steps);
            if let Some(l) = s.final_loss {
                println!("final loss: {l:.6}");
            }
        }
        Command::Sweep(c) => {
            let mut cfg = load_config(c.common.config.as_ref(), c.common.seed)?;
            if let Some(rho) = c.rho {
                if c.checkpoint.is_some() {
                    return Err(CliError::Usage("--rho applies only without --checkpoint".into()));
                }
                let base = cfg.ok_or_else(|| CliError::Usage("--rho needs --config".into()))?;
                cfg = Some(base.with_rho(rho)?);
            }
            let values = grid(&c.grid)?;
            let seed = cfg.as_ref().map(|c| c.seed).unwrap_or(0);
            let res = cmd_sweep(&SweepArgs {
                config: cfg.as_ref(),
                checkpoint: c.checkpoint.as_deref(),
                grid: &values,
                mismatch_snr_test: c.snr_test,
                with_baseline: c.with_baseline,
                seed: c.common.seed.unwrap_or(seed),
                out: &c.out,
                plot: c.plot.as_deref(),
                data_root,
            })?;
            println!("snr_test_db snr_est_db system psnr_db ms_ssim symbols");
            for r in &res.rows {
                println!(
                    "{:>11} {:>10} {:>7?} {:>8.3} {:>8.5} {}",
                    r.snr_test_db, r.snr_est_db, r.system, r.psnr_db, r.ms_ssim, r.symbols
                );
            }
            println!("wrote {}", c.out.display());
        }
        Command::Transmit(c) => {
            let rep = cmd_transmit(&TransmitArgs {
                checkpoint: &c.checkpoint,
                clip: &c.clip,
                snr_test_db: c.snr,
                snr_est_db: c.snr_est,
                seed: c.seed,
                out: &c.out,
                report_csv: c.report.as_deref(),
                data_root,
            })?;
            println!("PSNR {:.3} dB  MS-SSIM {:.5}", rep.psnr_db, rep.ms_ssim);
            println!("wrote {}", c.out.display());
        }
        Command::Baseline(c) => {
            let cfg = load_config(c.common.config.as_ref(), c.common.seed)?
                .ok_or_else(|| CliError::Usage("baseline needs --config".into()))?;
            let values = grid(&c.grid)?;
            let res = cmd_baseline(&BaselineArgs {
                config: &cfg,
                grid: &values,
                seed: cfg.seed,
                out: &c.out,
                plot: c.plot.as_deref(),
                data_root,
            })?;
            println!("snr_test_db psnr_db ms_ssim");
            for r in &res.rows {
                println!("{:>11} {:>8.3} {:>8.5}", r.snr_test_db, r.psnr_db, r.ms_ssim);
            }
            println!("wrote {}", c.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

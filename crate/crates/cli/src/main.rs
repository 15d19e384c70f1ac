//! `oac`: run simulations and sweeps, query the privacy accountant and
//! generate synthetic score tables.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 calibration failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oac_ensemble::accounting::{
    calibrate_sigma, theorem2_delta, AccountingError, AmplifiedPrivacyParams, MechanismParams, PrivacyGuarantee,
};
use oac_ensemble::harness::config::SyntheticDataset;
use oac_ensemble::harness::report::{format_real, write_audit, write_results, write_summary};
use oac_ensemble::harness::{run_sweep_on, summarize, HarnessError, SweepConfig};
use oac_ensemble::providers::save_score_dataset;

#[derive(Parser)]
#[command(name = "oac", version, about = "Over-the-air private ensemble inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config holding a single cell and print its rows as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Also write per-sample predictions here.
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run every cell of a config grid and write the results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-cell means across seeds.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Per-sample predictions of every row.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Overrides `workers` in the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print δ′ for a noise level σ under participation probability p.
    #[command(allow_negative_numbers = true)]
    Accountant {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Print the smallest σ meeting (ε, δ) under participation probability p.
    #[command(allow_negative_numbers = true)]
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Allowed slack below δ.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Write a synthetic score table described by a key = value spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

impl From<AccountingError> for Failure {
    fn from(e: AccountingError) -> Self {
        let code = match e {
            AccountingError::InvalidParameter { .. } => 2,
            AccountingError::ZeroDelta | AccountingError::SigmaCeilingExceeded { .. } => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

fn output_error(path: &Path, e: io::Error) -> Failure {
    Failure { code: 3, message: format!("cannot write {}: {e}", path.display()) }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| output_error(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| output_error(path, e))
}

fn load_config(path: &Path, workers: Option<usize>) -> Result<SweepConfig, Failure> {
    let mut config = SweepConfig::from_file(path)?;
    if let Some(w) = workers {
        config.workers = (w > 0).then_some(w);
    }
    Ok(config)
}

fn simulate(config: &Path, audit: Option<&Path>, workers: Option<usize>) -> Result<(), Failure> {
    let config = load_config(config, workers)?;
    config.single_cell()?;
    let dataset = config.dataset.load()?;
    let out = run_sweep_on(&config, &dataset)?;
    let stdout = io::stdout();
    write_results(&out.rows, stdout.lock()).map_err(|e| output_error(Path::new("<stdout>"), e))?;
    if let Some(path) = audit {
        write_file(path, |w| write_audit(&out.rows, &out.audits, w))?;
    }
    Ok(())
}

fn sweep(
    config: &Path,
    out: &Path,
    summary: Option<&Path>,
    audit: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let config = load_config(config, workers)?;
    let dataset = config.dataset.load()?;
    let result = run_sweep_on(&config, &dataset)?;
    write_file(out, |w| write_results(&result.rows, w))?;
    if let Some(path) = summary {
        write_file(path, |w| write_summary(&summarize(&result.rows), w))?;
    }
    if let Some(path) = audit {
        write_file(path, |w| write_audit(&result.rows, &result.audits, w))?;
    }
    eprintln!("wrote {} rows to {}", result.rows.len(), out.display());
    Ok(())
}

fn accountant(epsilon: f64, sigma: f64, p: f64, n: usize) -> Result<(), Failure> {
    let params = MechanismParams::new(sigma, p, n)?;
    let amplified = AmplifiedPrivacyParams::new(epsilon, p, n)?;
    let delta = theorem2_delta(epsilon, &params)?;
    println!("delta={}", format_real(delta));
    println!("eta={}", format_real(amplified.eta));
    println!("inner_epsilon={}", format_real(amplified.inner_epsilon));
    Ok(())
}

fn calibrate(epsilon: f64, delta: f64, p: f64, n: usize, tol: f64) -> Result<(), Failure> {
    let target = PrivacyGuarantee::new(epsilon, delta)?;
    let sigma = calibrate_sigma(target, p, n, tol)?;
    println!("sigma={}", format_real(sigma));
    if sigma > 0.0 {
        let achieved = theorem2_delta(epsilon, &MechanismParams::new(sigma, p, n)?)?;
        println!("delta_at_sigma={}", format_real(achieved));
    }
    Ok(())
}

fn gen_data(spec: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Failure { code: 2, message: format!("cannot read {}: {e}", spec.display()) })?;
    let dataset = SyntheticDataset::from_spec_text(&text)?.generate()?;
    save_score_dataset(&dataset, out).map_err(HarnessError::from)?;
    eprintln!(
        "wrote {} clients x {} samples x {} classes to {}",
        dataset.num_clients(),
        dataset.num_samples(),
        dataset.num_classes(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, audit, workers } => simulate(&config, audit.as_deref(), workers),
        Command::Sweep { config, out, summary, audit, workers } => {
            sweep(&config, &out, summary.as_deref(), audit.as_deref(), workers)
        }
        Command::Accountant { epsilon, sigma, p, n } => accountant(epsilon, sigma, p, n),
        Command::Calibrate { epsilon, delta, p, n, tol } => calibrate(epsilon, delta, p, n, tol),
        Command::GenData { spec, out } => gen_data(&spec, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

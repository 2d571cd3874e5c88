use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgld_bounds::harness::calc::{bound_calc, CalcKind};
use sgld_bounds::harness::csv::{fmt_float, render, CsvRow};
use sgld_bounds::harness::lemmas::{failures, report_rows, verify_lemmas, Suite, SuiteOptions};
use sgld_bounds::harness::twin::{run_twin_chain, write_probe_table, TwinConfig};
use sgld_bounds::harness::{
    run_experiment, HarnessError, KvConfig, RunConfig, StepRecord, STEP_HEADER,
};
use sgld_bounds::kl_lab::{quadrature_phi_constant, REPORT_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "sgld-bounds",
    version,
    about = "Noisy gradient training with online generalization bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train with online bound tracking and write the per-step CSV.
    Train(Settings),
    /// Run Langevin chains on neighbouring datasets and compare the loss gap with the stability bounds.
    TwinChain(Settings),
    /// Evaluate a closed-form bound over a parameter sweep.
    BoundCalc {
        /// cld-finite-t, gibbs, gibbs-crossover, gld-l2, sgld or log-lipschitz
        bound: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run the divergence certification suites.
    VerifyLemmas {
        /// all, chain-rule, phi-scan, mixture, gaussian, pinsker, dtd or quadrature
        #[arg(default_value = "all")]
        suite: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Evaluate the mixture-bound quadrature constant.
    Quadrature {
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

#[derive(Debug, Args)]
struct Settings {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides of the form --key=value, applied after the file.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY=VALUE"
    )]
    overrides: Vec<String>,
}

impl Settings {
    fn load(&self) -> Result<KvConfig, HarnessError> {
        let mut kv = match &self.config {
            Some(path) => KvConfig::load(path)?,
            None => KvConfig::default(),
        };
        kv.apply_overrides(&self.overrides)?;
        Ok(kv)
    }
}

fn print(text: &str) -> Result<(), HarnessError> {
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|source| HarnessError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn key_values(rows: Vec<(&str, String)>) -> String {
    render(
        &["key", "value"],
        rows.into_iter()
            .map(|(k, v)| CsvRow(vec![k.to_string(), v])),
    )
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(settings) => {
            let cfg = RunConfig::from_kv(&settings.load()?)?;
            let out = run_experiment(&cfg)?;
            if cfg.output.is_none() {
                print(&render(
                    STEP_HEADER,
                    out.records.iter().map(StepRecord::to_row),
                ))?;
            }
            Ok(())
        }
        Command::TwinChain(settings) => {
            let cfg = TwinConfig::from_kv(&settings.load()?)?;
            let report = run_twin_chain(&cfg)?;
            if let Some(path) = &cfg.output {
                write_probe_table(path, &report)?;
            }
            if !report.sufficient_samples {
                eprintln!("warning: one seed gives no Monte Carlo error estimate");
            }
            print(&key_values(report.summary_rows()))
        }
        Command::BoundCalc { bound, settings } => {
            let kind = CalcKind::parse(&bound)?;
            print(&bound_calc(kind, &settings.load()?)?)
        }
        Command::VerifyLemmas { suite, settings } => {
            let suites = Suite::parse_selector(&suite)?;
            let kv = settings.load()?;
            let opts = SuiteOptions::from_kv(&kv)?;
            let output = kv.raw("output").map(PathBuf::from);
            let rows = verify_lemmas(&suites, &opts, output.as_deref())?;
            if output.is_none() {
                print(&render(REPORT_HEADER, report_rows(&rows)))?;
            }
            let failed = failures(&rows);
            if failed.is_empty() {
                Ok(())
            } else {
                Err(HarnessError::Verification(format!(
                    "{} failing instance(s): {}",
                    failed.len(),
                    failed.join(" ")
                )))
            }
        }
        Command::Quadrature { tol } => {
            let r = quadrature_phi_constant(tol)
                .map_err(|e| HarnessError::Verification(e.to_string()))?;
            print(&key_values(vec![
                ("value", fmt_float(r.value)),
                ("inner", fmt_float(r.inner)),
                ("inner_closed_form", fmt_float(r.inner_closed_form)),
                ("outer", fmt_float(r.outer)),
                ("truncation_point", fmt_float(r.truncation_point)),
                ("tail_bound", fmt_float(r.tail_bound)),
                ("error_estimate", fmt_float(r.error_estimate)),
                ("pieces", r.pieces.to_string()),
                ("implied_constant", fmt_float(r.implied_constant)),
                (
                    "within_published_value",
                    r.within_published_value.to_string(),
                ),
                (
                    "within_mixture_constant",
                    r.within_mixture_constant.to_string(),
                ),
            ]))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use dichotomy::driver::{
    self, parse_matrix_text, run_certify, run_sweep, run_verify, sweep_to_csv, RunConfig,
    VerifySuite,
};
use dichotomy::models::{ModelName, ModelSpec};
use dichotomy::nonlinear::Conclusion;
use dichotomy::spectral::hyperbolic_splitting;
use dichotomy::Error;

const EXIT_OK: u8 = 0;
const EXIT_NO_CERTIFICATE: u8 = 1;
const EXIT_ASSUMPTIONS: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_IO: u8 = 74;

/// Bifurcation analysis of discrete non-autonomous dynamical systems over
/// compact parameter spaces.
#[derive(Parser)]
#[command(name = "dichotomy", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stable/unstable splitting of one square matrix.
    ///
    /// INPUT is either inline text ("0.5 0; 0 2") or a path to a file with
    /// the same format.
    Spectral {
        input: String,
        /// Hyperbolicity tolerance on | |mu| - 1 |.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Run assumption checks, bundle comparison and sweep; write the report.
    ///
    /// Exit code: 0 certified bifurcation, 1 no certificate, 2 assumptions
    /// violated, 3 numerical failure.
    Certify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in model name (used when no config is given).
        #[arg(long)]
        model: Option<String>,
        /// Vertices per generator loop.
        #[arg(long = "mesh-m")]
        mesh_m: Option<usize>,
        /// Lattice window half-length.
        #[arg(long)]
        window: Option<usize>,
        /// Seed for the random model.
        #[arg(long)]
        seed: Option<u64>,
        /// Report destination (JSON); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-vertex sigma_min / kernel dimension as CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "mesh-m")]
        mesh_m: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run an oracle suite on a seeded random corpus.
    ///
    /// SUITE is one of: index, right_inverse, splice, adjoint, contour, all.
    Verify {
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Spectral { input, tol } => cmd_spectral(&input, tol),
        Command::Certify {
            config,
            model,
            mesh_m,
            window,
            seed,
            out,
        } => cmd_certify(config, model, mesh_m, window, seed, out),
        Command::Sweep {
            config,
            model,
            mesh_m,
            window,
            seed,
            csv,
        } => cmd_sweep(config, model, mesh_m, window, seed, csv),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed.unwrap_or(0xd1c0)),
    };
    ExitCode::from(code)
}

/// DICHOTOMY_THREADS caps the rayon pool; 0 or unset means automatic.
fn configure_threads() {
    if let Ok(value) = std::env::var("DICHOTOMY_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        } else {
            eprintln!("warning: ignoring non-numeric DICHOTOMY_THREADS='{value}'");
        }
    }
}

fn cmd_spectral(input: &str, tol: f64) -> u8 {
    let text = if std::path::Path::new(input).is_file() {
        match std::fs::read_to_string(input) {
            Ok(text) => text,
            Err(err) => {
                eprintln!("error: cannot read '{input}': {err}");
                return EXIT_IO;
            }
        }
    } else {
        input.to_string()
    };
    let matrix = match parse_matrix_text(&text) {
        Ok(matrix) => matrix,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_USAGE;
        }
    };
    match hyperbolic_splitting(&matrix, tol) {
        Ok(split) => {
            println!("dimension: {}", matrix.nrows());
            println!("margin:    {:.6e}", split.margin);
            println!("k_s:       {}", split.k_s);
            println!("k_u:       {}", split.k_u);
            println!("stable basis (columns):{:.6}", split.vs);
            println!("unstable basis (columns):{:.6}", split.vu);
            println!("stable projector:{:.6}", split.ps);
            EXIT_OK
        }
        Err(err @ (Error::HyperbolicityViolation { .. } | Error::NotInvertible { .. })) => {
            eprintln!("error: {err}");
            EXIT_ASSUMPTIONS
        }
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_NUMERICAL
        }
    }
}

fn load_run_config(
    config: Option<PathBuf>,
    model: Option<String>,
    mesh_m: Option<usize>,
    window: Option<usize>,
    seed: Option<u64>,
) -> Result<RunConfig, u8> {
    let mut cfg = if let Some(path) = config {
        let text = std::fs::read_to_string(&path).map_err(|err| {
            eprintln!("error: cannot read '{}': {err}", path.display());
            EXIT_IO
        })?;
        driver::parse_config(&text).map_err(|err| {
            eprintln!("error: {err}");
            EXIT_USAGE
        })?
    } else {
        let name = model.as_deref().unwrap_or("torus_example");
        let name: ModelName = name.parse().map_err(|err| {
            eprintln!("error: {err}");
            EXIT_USAGE
        })?;
        RunConfig::for_model(ModelSpec::named(name))
    };
    if let Some(m) = mesh_m {
        cfg.mesh.m = m;
    }
    if let Some(w) = window {
        cfg.window = w;
    }
    if let Some(s) = seed {
        cfg.model.params.insert("seed".into(), s as f64);
    }
    Ok(cfg)
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> Result<(), u8> {
    match path {
        Some(path) => std::fs::write(path, content).map_err(|err| {
            eprintln!("error: cannot write '{}': {err}", path.display());
            EXIT_IO
        }),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_certify(
    config: Option<PathBuf>,
    model: Option<String>,
    mesh_m: Option<usize>,
    window: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> u8 {
    let cfg = match load_run_config(config, model, mesh_m, window, seed) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    let report = match run_certify(&cfg) {
        Ok(report) => report,
        Err(err @ Error::Parse(_)) => {
            eprintln!("error: {err}");
            return EXIT_USAGE;
        }
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_NUMERICAL;
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    let destination = out.or(cfg.outputs.report);
    if let Err(code) = write_or_print(destination.as_ref(), &json) {
        return code;
    }
    if let Some(path) = &destination {
        eprintln!(
            "conclusion: {:?}; report written to {}",
            report.conclusion,
            path.display()
        );
    }
    match report.conclusion {
        Conclusion::CertifiedBifurcation => EXIT_OK,
        Conclusion::NoCertificate => EXIT_NO_CERTIFICATE,
        Conclusion::AssumptionsViolated => EXIT_ASSUMPTIONS,
    }
}

fn cmd_sweep(
    config: Option<PathBuf>,
    model: Option<String>,
    mesh_m: Option<usize>,
    window: Option<usize>,
    seed: Option<u64>,
    csv: Option<PathBuf>,
) -> u8 {
    let cfg = match load_run_config(config, model, mesh_m, window, seed) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    let records = match run_sweep(&cfg) {
        Ok(records) => records,
        Err(err @ Error::Parse(_)) => {
            eprintln!("error: {err}");
            return EXIT_USAGE;
        }
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_NUMERICAL;
        }
    };
    let text = sweep_to_csv(cfg.mesh.k, &records);
    let destination = csv.or(cfg.outputs.sweep_csv);
    match write_or_print(destination.as_ref(), &text) {
        Ok(()) => EXIT_OK,
        Err(code) => code,
    }
}

fn cmd_verify(suite: &str, seed: u64) -> u8 {
    let suite: VerifySuite = match suite.parse() {
        Ok(suite) => suite,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("usage: dichotomy verify <index|right_inverse|splice|adjoint|contour|all>");
            return EXIT_USAGE;
        }
    };
    let mut all_passed = true;
    for report in run_verify(suite, seed) {
        let status = if report.passed { "pass" } else { "FAIL" };
        println!(
            "{status}  {:14} {:3} cases; {}",
            report.name, report.cases, report.detail
        );
        if !report.passed {
            all_passed = false;
            println!("      failing seeds: {:?}", report.failures);
        }
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_NO_CERTIFICATE
    }
}

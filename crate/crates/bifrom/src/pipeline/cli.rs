//! Command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 convergence failure,
//! 4 missing artifact. Diagnostics go to standard error; artifact files are
//! the only stdout-adjacent product. `BIFROM_SEED` overrides the config
//! seed before the workspace is opened, so the config hash reflects it.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::RunConfig;
use super::plot;
use super::workspace::{Workspace, WorkspaceError};

#[derive(Parser, Debug)]
#[command(
    name = "bifrom",
    about = "Reduced-order models and a neural surrogate for a bifurcating reaction-diffusion system",
    disable_help_subcommand = true
)]
struct Cli {
    /// Workspace directory holding artifacts and reports.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// Configuration file (key=value lines); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and persist the training snapshot set.
    Snapshots {
        /// Grid points along mu1 (overrides snap_n1).
        #[arg(long)]
        n1: Option<usize>,
        /// Grid points along mu2 (overrides snap_n2).
        #[arg(long)]
        n2: Option<usize>,
    },
    /// Generate and persist the reference solution set.
    Reference {
        /// Grid points along mu1 (overrides ref_n1).
        #[arg(long)]
        n1: Option<usize>,
        /// Grid points along mu2 (overrides ref_n2).
        #[arg(long)]
        n2: Option<usize>,
    },
    /// Run the offline stages of one surrogate family.
    Build {
        /// Which surrogate to build.
        #[arg(long, value_parser = ["global", "local", "podnn"])]
        method: String,
        /// Selection criterion to train for the local method (trained
        /// criteria only; geometric ones need no artifacts). `all` trains
        /// every trainable criterion.
        #[arg(long)]
        criterion: Option<String>,
        /// Override the configured overlap setting (on|off).
        #[arg(long)]
        overlap: Option<String>,
    },
    /// Evaluate one method over the reference grid; writes diagram.csv.
    Evaluate {
        #[arg(long, value_parser = ["reference", "global", "local", "podnn"])]
        method: String,
        /// Criterion used by the local method (default regression).
        #[arg(long)]
        criterion: Option<String>,
    },
    /// Compare all built methods over the reference set; writes errors.csv
    /// and per-point files.
    Compare,
    /// Render diagram.csv into diagram.svg and diagram.txt.
    Plot {
        /// Input CSV (defaults to the workspace diagram.csv).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output SVG (defaults to the workspace diagram.svg).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn fail(code: i32, message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    code
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, (i32, String)> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| (2, format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| (2, e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Ok(seed_text) = std::env::var("BIFROM_SEED") {
        let seed = seed_text
            .parse::<u64>()
            .map_err(|_| (2, format!("BIFROM_SEED={seed_text:?} is not a u64")))?;
        config.seed = seed;
    }
    Ok(config)
}

/// Runs the CLI; returns the process exit code.
pub fn run_cli(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes by convention.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };

    let mut config = match load_config(cli.config.as_ref()) {
        Ok(c) => c,
        Err((code, msg)) => return fail(code, msg),
    };

    // Grid and overlap flags refine the configuration before the workspace
    // opens, so the config hash covers exactly what runs.
    match &cli.command {
        Command::Snapshots { n1, n2 } => {
            if let Some(n1) = n1 {
                config.snap_n1 = *n1;
            }
            if let Some(n2) = n2 {
                config.snap_n2 = *n2;
            }
        }
        Command::Reference { n1, n2 } => {
            if let Some(n1) = n1 {
                config.ref_n1 = *n1;
            }
            if let Some(n2) = n2 {
                config.ref_n2 = *n2;
            }
        }
        Command::Build {
            overlap: Some(value),
            ..
        } => match value.as_str() {
            "on" => config.overlap = true,
            "off" => config.overlap = false,
            other => return fail(2, format!("--overlap expects on|off, got {other:?}")),
        },
        _ => {}
    }
    if let Err(e) = config.validate() {
        return fail(2, e);
    }

    let mut ws = match Workspace::open_or_create(&cli.workspace, config) {
        Ok(ws) => ws,
        Err(e) => return fail(e.exit_code(), e),
    };
    let _lock = match ws.lock() {
        Ok(lock) => lock,
        Err(e) => return fail(e.exit_code(), e),
    };

    let outcome: Result<(), WorkspaceError> = match &cli.command {
        Command::Snapshots { .. } => ws.run_snapshots().map(|()| {
            eprintln!(
                "snapshots: {}x{} grid ready",
                ws.config.snap_n1, ws.config.snap_n2
            );
        }),
        Command::Reference { .. } => ws.run_reference().map(|()| {
            eprintln!(
                "reference: {}x{} grid ready",
                ws.config.ref_n1, ws.config.ref_n2
            );
        }),
        Command::Build { method, criterion, .. } => match method.as_str() {
            "global" => ws.build_global(),
            "podnn" => ws.build_podnn(),
            "local" => ws.build_local().and_then(|()| match criterion.as_deref() {
                None => Ok(()),
                Some("all") => {
                    for name in ["classifier", "regression", "regression-independent"] {
                        ws.build_criterion(name)?;
                    }
                    Ok(())
                }
                Some(name) => ws.build_criterion(name),
            }),
            _ => unreachable!("clap restricts methods"),
        },
        Command::Evaluate { method, criterion } => {
            ws.evaluate(method, criterion.as_deref()).map(|()| {
                eprintln!("evaluate: wrote {}", ws.path("diagram.csv").display());
            })
        }
        Command::Compare => ws.compare().map(|reports| {
            for r in &reports {
                eprintln!(
                    "compare: {:28} samples {:4} mean_l2 {:.6e} mean_linf {:.6e} ({:.2}s online)",
                    r.method, r.samples, r.mean_l2, r.mean_linf, r.online_seconds
                );
            }
            eprintln!("compare: wrote {}", ws.path("errors.csv").display());
        }),
        Command::Plot { input, output } => {
            let input = input.clone().unwrap_or_else(|| ws.path("diagram.csv"));
            let svg = output.clone().unwrap_or_else(|| ws.path("diagram.svg"));
            let text = svg.with_extension("txt");
            match plot::plot_diagram(&input, &svg, &text) {
                Ok(()) => {
                    eprintln!("plot: wrote {} and {}", svg.display(), text.display());
                    Ok(())
                }
                Err(plot::PlotError::Read { path, source })
                    if source.kind() == std::io::ErrorKind::NotFound =>
                {
                    return fail(4, format!("missing diagram input {path}; run evaluate first"));
                }
                Err(e) => return fail(2, e),
            }
        }
    };

    match outcome {
        Ok(()) => 0,
        Err(e) => fail(e.exit_code(), e),
    }
}

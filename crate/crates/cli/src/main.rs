use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use floquet_cli::{emit_plots, exit, parse_config, run};

#[derive(Parser)]
#[command(name = "floquet", version, about = "Run periodic semiflow scenarios")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run { config: PathBuf },
    /// Check a scenario without running it.
    Validate { config: PathBuf },
    /// Run every `*.json` scenario in a directory, in name order.
    Batch { dir: PathBuf },
    /// Write gnuplot scripts for a finished run.
    Plots { report: PathBuf },
}

fn run_one(path: &Path, out: &Path, quiet: bool) -> u8 {
    let cfg = match parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return exit::CONFIG;
        }
    };
    match run(&cfg, out) {
        Ok((report, report_path)) => {
            let ok = report.passed();
            if !quiet {
                println!(
                    "{} [{}] {:.2}s -> {}",
                    report.name,
                    if ok { "pass" } else { "FAIL" },
                    report.wall_time_s,
                    report_path.display()
                );
                print!("{}", report.summary());
            }
            if ok {
                exit::OK
            } else {
                exit::FAILED
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.cmd {
        Cmd::Run { config } => run_one(config, &cli.out, cli.quiet),
        Cmd::Validate { config } => match parse_config(config) {
            Ok(cfg) => {
                if !cli.quiet {
                    println!(
                        "{}: ok ({} / {})",
                        config.display(),
                        cfg.model.kind(),
                        cfg.experiment.kind()
                    );
                }
                exit::OK
            }
            Err(e) => {
                eprintln!("{e}");
                exit::CONFIG
            }
        },
        Cmd::Batch { dir } => {
            let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
                Ok(rd) => rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect(),
                Err(e) => {
                    eprintln!("cannot read {}: {e}", dir.display());
                    return ExitCode::from(exit::FAILED);
                }
            };
            files.sort();
            files
                .iter()
                .map(|f| run_one(f, &cli.out, cli.quiet))
                .max()
                .unwrap_or(exit::OK)
        }
        Cmd::Plots { report } => match emit_plots(report) {
            Ok(out) => {
                for w in &out.warnings {
                    eprintln!("warning: {w}");
                }
                if !cli.quiet {
                    for s in &out.scripts {
                        println!("{}", s.display());
                    }
                }
                exit::OK
            }
            Err(e) => {
                eprintln!("{e}");
                exit::FAILED
            }
        },
    };
    ExitCode::from(code)
}

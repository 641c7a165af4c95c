use clap::{Parser, Subcommand};
use sgweyl_cli::config::ExperimentConfig;
use sgweyl_cli::report::RunReport;
use sgweyl_cli::{run, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sgweyl", version, about = "Weyl-law experiments for SG-elliptic model operators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// model id: A, B or oracle-H
    #[arg(long, global = true)]
    model: Option<String>,
    /// single basis size for the selected model (replaces the configured list)
    #[arg(long, global = true)]
    basis_dim: Option<usize>,
    /// relative tolerance for trusting an eigenvalue across basis sizes
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    lambda_min: Option<f64>,
    #[arg(long, global = true)]
    lambda_max: Option<f64>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON experiment config; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// eigenvalues of the selected model at the configured basis sizes (cached)
    Spectrum,
    /// closed-form leading constants, d0 and c0
    Constants,
    /// Weyl fit on the trusted spectrum
    WeylFit,
    /// eikonal phase and its certificate
    Phase,
    /// direct trace quadrature, decay regions and the fixed-point suite
    Oscillatory,
    /// smoothed counts, Tauberian recovery and the trace cross-check
    Tauber,
    /// consolidated report over all criteria, with a determinism rerun
    Report,
}

fn config(cli: &Cli) -> sgweyl::Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &cli.model {
        c.model = sgweyl::spectral::canonical_model(m)?.to_string();
    }
    if let Some(n) = cli.basis_dim {
        c.basis_dims.insert(c.model_id().to_string(), vec![n]);
    }
    if let Some(t) = cli.tol {
        c.tolerances.trust_rel = t;
    }
    if cli.lambda_min.is_some() {
        c.windows.lambda_min = cli.lambda_min;
    }
    if cli.lambda_max.is_some() {
        c.windows.lambda_max = cli.lambda_max;
    }
    if let Some(o) = &cli.output {
        c.output = o.clone();
    }
    if let Some(d) = &cli.cache_dir {
        c.cache_dir = d.clone();
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    c.validate()?;
    Ok(c)
}

fn print(rep: &RunReport) {
    for c in &rep.criteria {
        println!("criterion {:>2} {}: {}", c.id, c.name, if c.pass { "PASS" } else { "FAIL" });
        for p in &c.parts {
            for k in &p.checks {
                println!(
                    "    [{}] {}: measured {:.6e}, predicted {:.6e}, tolerance {:.1e} {}",
                    p.part,
                    k.name,
                    k.measured,
                    k.predicted,
                    k.tolerance,
                    if k.pass { "ok" } else { "FAILED" }
                );
            }
        }
    }
    println!("{}: {}", rep.stage, if rep.pass { "all executed criteria pass" } else { "some criteria fail" });
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = match cli.cmd {
        Cmd::Spectrum => Stage::Spectrum,
        Cmd::Constants => Stage::Constants,
        Cmd::WeylFit => Stage::WeylFit,
        Cmd::Phase => Stage::Phase,
        Cmd::Oscillatory => Stage::Oscillatory,
        Cmd::Tauber => Stage::Tauber,
        Cmd::Report => Stage::Report,
    };
    let res = config(&cli).and_then(|c| run(&c, stage, None));
    match res {
        Ok(rep) => {
            print(&rep);
            if rep.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

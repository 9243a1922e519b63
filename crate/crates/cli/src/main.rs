use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vulab_cli::{init_threads, output_dir, run, write_bundle, Campaign, ExperimentConfig, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "vulab", version, about = "VU-decomposition verification campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subdifferential polytope and the U/V subspaces.
    Decompose(Common),
    /// Tilt stability, Moreau criterion and prox-regularity.
    TiltTest(Common),
    /// Convexity, little-oh and conjugacy checks of the U-Lagrangian.
    Lagrangian(Common),
    /// Rank-one supports, U² and subjet membership.
    Subjet(Common),
    /// Trace of the smooth manifold and its first- and second-order checks.
    Manifold(Common),
    /// Moreau envelopes, para-convexity and Hessian duality.
    Appendix(Common),
    /// Every campaign listed in the config.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("vulab: {msg}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (single, args) = match cli.command {
        Command::Decompose(a) => (Some(Campaign::Decompose), a),
        Command::TiltTest(a) => (Some(Campaign::TiltTest), a),
        Command::Lagrangian(a) => (Some(Campaign::Lagrangian), a),
        Command::Subjet(a) => (Some(Campaign::Subjet), a),
        Command::Manifold(a) => (Some(Campaign::Manifold), a),
        Command::Appendix(a) => (Some(Campaign::Appendix), a),
        Command::All(a) => (None, a),
    };
    if let Err(e) = init_threads() {
        return usage(e);
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", args.config.display())),
    };
    let cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => return usage(format!("invalid config {}: {e}", args.config.display())),
    };
    let base_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let campaigns = match single {
        Some(c) => vec![c],
        None => cfg.campaign.clone(),
    };
    let started = chrono::Utc::now();
    let bundle = match run(&cfg, &campaigns, &base_dir) {
        Ok(b) => b,
        Err(e) => return usage(format!("invalid config {}: {e}", args.config.display())),
    };
    let out = output_dir(args.out.as_deref(), &cfg, &base_dir);
    if let Err(e) = write_bundle(&out, &bundle, &cfg, started) {
        eprintln!("vulab: cannot write to {}: {e}", out.display());
        return ExitCode::from(1);
    }
    for r in &bundle.reports {
        println!("{:<11} {:?}", r.campaign, r.status());
        for c in &r.checks {
            println!("  {:<28} {:?}", c.check, c.status);
        }
    }
    println!("manifest: {}", out.join("manifest.json").display());
    ExitCode::from(bundle.exit_code() as u8)
}

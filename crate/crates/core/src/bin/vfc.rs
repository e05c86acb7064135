use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vfc_core::experiments::{analyze, load_config, repro_all, run_scenario, ReproOptions};

/// Heterogeneous networks that align their parameters through coupling.
#[derive(Parser)]
#[command(name = "vfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario, write its CSV/SVG and print the run report.
    Simulate {
        /// Scenario JSON file or preset name (fig1a, fig1b, fig1c, fig2).
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the certificate report of a scenario as JSON.
    Analyze {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every acceptance criterion and print a summary.
    Repro {
        /// Halve horizons and multiply tolerances by 5.
        #[arg(long)]
        quick: bool,
        /// Seed for random initial states.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `VFC_OUT` takes precedence over `--out`; the default is `./out`.
fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    std::env::var_os("VFC_OUT")
        .map(PathBuf::from)
        .or(flag)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json(path: &std::path::Path, value: &impl serde::Serialize) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Simulate { config, out } => {
            let out = out_dir(out);
            let cfg = load_config(&config).map_err(|e| e.to_string())?;
            println!("vfc simulate");
            println!("  config     {config}");
            println!("  out        {}", out.display());
            println!(
                "  model      {}  k = {}  g = {}  dt = {}  t_end = {}  seed = {}",
                cfg.model_name, cfg.gains.k, cfg.gains.g, cfg.dt, cfg.t_end, cfg.seed
            );
            let (_, report, files) = run_scenario(&cfg, &out).map_err(|e| e.to_string())?;
            for path in files.csv.iter().chain(&files.plot) {
                println!("  wrote      {}", path.display());
            }
            let report_path = out.join(format!("{}.report.json", cfg.name));
            write_json(&report_path, &report)?;
            println!("  wrote      {}", report_path.display());
            if cfg.outputs.analysis {
                let a = analyze(&cfg).map_err(|e| e.to_string())?;
                let path = out.join(format!("{}.analysis.json", cfg.name));
                write_json(&path, &a)?;
                println!("  wrote      {}", path.display());
            }
            for c in &report.checks {
                println!(
                    "  {}  {:<32} value {:.4e}  limit {:.4e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            Ok(report.pass)
        }
        Command::Analyze { config, out } => {
            let cfg = load_config(&config).map_err(|e| e.to_string())?;
            eprintln!(
                "vfc analyze  config {config}  model {}  seed {}",
                cfg.model_name, cfg.seed
            );
            let report = analyze(&cfg).map_err(|e| e.to_string())?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            println!("{text}");
            if out.is_some() || std::env::var_os("VFC_OUT").is_some() {
                let path = out_dir(out).join(format!("{}.analysis.json", cfg.name));
                write_json(&path, &report)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(report.pass)
        }
        Command::Repro { quick, seed, out } => {
            let out = out_dir(out);
            println!("vfc repro");
            println!("  out        {}", out.display());
            println!(
                "  quick      {quick}{}",
                if quick { " (horizons halved, tolerances x5)" } else { "" }
            );
            println!(
                "  seed       {}",
                seed.map_or("preset defaults".to_string(), |s| s.to_string())
            );
            let summary = repro_all(ReproOptions {
                quick,
                seed,
                out_dir: Some(out.clone()),
            })
            .map_err(|e| e.to_string())?;
            print!("{}", summary.table());
            println!("  wrote      {}", out.join("summary.json").display());
            Ok(summary.pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

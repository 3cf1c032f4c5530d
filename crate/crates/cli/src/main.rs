use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_reuse_cli::config::{load_config, CONFIG_SCHEMA};
use latent_reuse_cli::{default_config, run_to_dir, PRESET_NAMES};

#[derive(Parser)]
#[command(
    name = "latent-reuse",
    about = "Numerical laboratory for frozen latent reuse vs mixed-projector training in diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment preset and write report.json, tables/*.csv and
    /// manifest.json.
    Run {
        /// Path to a JSON config file (see `schema` for the contract).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Preset name when no config file is given, or an override.
        #[arg(long)]
        preset: Option<String>,
        /// Replaces the root seed from the config.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print the default config JSON for a preset.
    Config { preset: String },
    /// Print the published JSON schema for config files.
    Schema,
    /// List the shipped presets.
    Presets,
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn main_inner() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            preset,
            seed_override,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => load_config(path)?,
                (None, Some(name)) => default_config(name)?,
                (None, None) => anyhow::bail!("pass --config <path> or --preset <name>"),
            };
            if let (Some(name), Some(_)) = (&preset, &config) {
                cfg.preset = name.clone();
            }
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            let out_dir = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.preset));
            cfg.out_dir = Some(out_dir.clone());
            let (report, files) = run_to_dir(&cfg, &out_dir)?;
            for file in &files {
                println!("wrote {}", file.display());
            }
            let failures = report
                .scalar("failures")
                .map(|v| v.value() as usize)
                .unwrap_or(0);
            if failures > 0 {
                eprintln!("{failures} invariant check(s) failed; see report.json");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Config { preset } => {
            let cfg = default_config(&preset)?;
            let value = serde_json::to_value(&cfg)?;
            print!("{}", latent_reuse::report::to_canonical_json(&value));
            Ok(ExitCode::SUCCESS)
        }
        Command::Schema => {
            print!("{CONFIG_SCHEMA}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! `dephasim` command-line runner.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 bad config or
//! arguments, 3 numerical or I/O failure.

mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use artifact::{sha256_hex, Artifacts, Overrides, RunMeta};
use commands::Context;
use config::Scale;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "dephasim", version, about = "Qubit dephasing experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "DEPHASIM_THREADS")]
    threads: Option<usize>,

    /// Overrides `scale`, which sets default bath size and ensemble size.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Ramsey decay over a grid of control points, with analytic predictions.
    RamseySweep,
    /// Hahn-echo decay over a grid of control points.
    EchoSweep,
    /// Grid scan and root search for a driven sweet spot.
    FloquetSearch,
    /// Static vs driven Ramsey at a sweet spot from `floquet-search`.
    FloquetRamsey,
    /// Consistency checks of the config and the models.
    Validate,
    /// Transition frequency and its derivatives over λ.
    Spectrum,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::RamseySweep => "ramsey-sweep",
            Command::EchoSweep => "echo-sweep",
            Command::FloquetSearch => "floquet-search",
            Command::FloquetRamsey => "floquet-ramsey",
            Command::Validate => "validate",
            Command::Spectrum => "spectrum",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = config::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(s) = cli.seed {
        cfg.master_seed = Some(s);
    }
    if let Some(s) = cli.scale {
        cfg.scale = Some(s);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numeric(e.to_string()))?;
    }

    let scale = cfg.scale();
    let overrides = Overrides {
        seed: cli.seed,
        scale: cli.scale.map(|s| format!("{s:?}").to_lowercase()),
    };
    let hashed = format!("{text}\n# overrides: {}\n", serde_json::to_string(&overrides)?);
    let meta = RunMeta {
        command: cli.command.name().to_string(),
        config_sha256: sha256_hex(hashed.as_bytes()),
        master_seed: cfg.seed(),
        scale: format!("{scale:?}").to_lowercase(),
        code_version: dephasim::CODE_VERSION.to_string(),
        rng: dephasim::rng::RNG_ID.to_string(),
        overrides,
        config_toml: text,
    };
    let ctx = Context {
        cfg,
        config_dir: path.parent().map(PathBuf::from).unwrap_or_default(),
    };
    let mut art = Artifacts::create(&cli.out, meta)?;
    let result = match cli.command {
        Command::RamseySweep => commands::control_sweep(&ctx, &mut art, false),
        Command::EchoSweep => commands::control_sweep(&ctx, &mut art, true),
        Command::FloquetSearch => commands::floquet_search(&ctx, &mut art),
        Command::FloquetRamsey => commands::floquet_ramsey(&ctx, &mut art),
        Command::Validate => commands::validate(&ctx, &mut art),
        Command::Spectrum => commands::spectrum(&ctx, &mut art),
    };
    // Property failures still leave a complete, hashed output directory.
    match result {
        Ok(()) | Err(CliError::Property(_)) => {
            art.finish()?;
            result
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dephasim: {e}");
            e.exit_code()
        }
    }
}

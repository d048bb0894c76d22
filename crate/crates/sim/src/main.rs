use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xlris::codebook::Codebook;
use xlris_sim::{replay, run, Experiment, ExperimentConfig, Manifest, Profile, RunInputs, SimError};

#[derive(Parser)]
#[command(name = "xlris", version, about = "XL-RIS codebook, beam training and multiuser precoding experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Config JSON; overrides the profile field by field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in parameter set used as the base config.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Output directory (defaults to the config's output_dir, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Clone)]
struct WithCodebook {
    #[command(flatten)]
    common: Common,
    /// Use this codebook JSON instead of building one.
    #[arg(long)]
    codebook: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CodebookCmd {
    /// Design every codeword and write codebook.json.
    Build(Common),
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Codebook(CodebookCmd),
    /// Hierarchical and exhaustive beam training over seeded user placements.
    Train(WithCodebook),
    /// Interference management with fairness adaptation.
    Im(Common),
    /// WMMSE sum-rate baseline.
    Wmmse(Common),
    /// Hybrid analog/digital factorization of codebook precoders.
    Hybrid(WithCodebook),
    /// Parameter sweep comparing interference management and WMMSE.
    Sweep(Common),
    /// Re-run a manifest and check that every artifact hash matches.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Print a built-in profile as JSON.
    Profile {
        #[arg(value_enum)]
        profile: Profile,
    },
}

fn read(path: &PathBuf) -> Result<String, SimError> {
    std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.clone(), source })
}

fn load_config(c: &Common) -> Result<ExperimentConfig, SimError> {
    let text = match &c.config {
        Some(p) => read(p)?,
        None if c.profile.is_some() => "{}".to_string(),
        None => return Err(SimError::Config { field: "config".into(), message: "pass --config or --profile".into() }),
    };
    let mut cfg = ExperimentConfig::from_json(&text, c.profile)?;
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    Ok(cfg)
}

fn load_codebook(path: &Option<PathBuf>) -> Result<RunInputs, SimError> {
    let codebook = match path {
        Some(p) => Some(
            Codebook::from_json(&read(p)?)
                .map_err(|source| SimError::Core { stage: format!("reading {}", p.display()), source })?,
        ),
        None => None,
    };
    Ok(RunInputs { codebook })
}

fn execute(exp: Experiment, c: &Common, inputs: RunInputs) -> Result<(), SimError> {
    let cfg = load_config(c)?;
    let out =
        c.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    eprintln!("[{}] running, output in {}", exp.name(), out.display());
    let m = run(exp, &cfg, &inputs, &out)?;
    for name in m.artifacts.keys() {
        eprintln!("[{}] wrote {}", exp.name(), out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Codebook(CodebookCmd::Build(c)) => execute(Experiment::CodebookBuild, &c, RunInputs::default()),
        Cmd::Train(w) => load_codebook(&w.codebook).and_then(|i| execute(Experiment::Train, &w.common, i)),
        Cmd::Im(c) => execute(Experiment::Im, &c, RunInputs::default()),
        Cmd::Wmmse(c) => execute(Experiment::Wmmse, &c, RunInputs::default()),
        Cmd::Hybrid(w) => load_codebook(&w.codebook).and_then(|i| execute(Experiment::Hybrid, &w.common, i)),
        Cmd::Sweep(c) => execute(Experiment::Sweep, &c, RunInputs::default()),
        Cmd::Replay { manifest, codebook } => (|| {
            let m: Manifest = serde_json::from_str(&read(&manifest)?)?;
            replay(&m, &load_codebook(&codebook)?)?;
            eprintln!("[replay] {} artifacts match", m.artifacts.len());
            Ok(())
        })(),
        Cmd::Profile { profile } => {
            println!("{}", serde_json::to_string_pretty(&profile.json()).expect("serializes"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

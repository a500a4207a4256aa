use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aes_core::ensemble::EnsembleParams;
use aes_core::harness::{self, HarnessError, RationaleJob, RunConfig};
use aes_core::rationale::HttpProvider;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aes", version, about = "Essay scoring evaluation and ensemble harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// ASAP-format TSV corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 6)]
    prompt: i64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Split manifest (defaults to <out>/split.csv).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus, write the split manifest and distribution summary.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Generate scoring rationales through a chat-completion endpoint.
    Rationales {
        #[command(flatten)]
        common: Common,
        /// JSON job file (generator, prompt overrides, provider settings).
        #[arg(long)]
        config: PathBuf,
    },
    /// Score individual members on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Member manifest: model_id,source_tag,path
        #[arg(long)]
        members: PathBuf,
    },
    /// Fit all ensemble strategies on validation and report on test.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        members: PathBuf,
        /// JSON overrides for ensemble parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render report.md and report.json from the stored tables.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus and 21 member prediction files.
    Synth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(common: Common, members: Option<PathBuf>) -> RunConfig {
    let mut c = RunConfig::new(common.corpus, common.out);
    c.prompt = common.prompt;
    c.seed = common.seed;
    c.manifest = common.manifest;
    c.members = members;
    c
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Ingest { common } => {
            let prompt = common.prompt;
            let summary = harness::cmd_ingest(&run_config(common, None))?;
            print!("{}", summary.render(prompt));
        }
        Command::Rationales { common, config } => {
            let job: RationaleJob = read_json(&config)?;
            let job_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            let provider = HttpProvider::from_config(&job.provider);
            let (summary, outcome) = harness::cmd_rationales(&run_config(common, None), &job, &job_dir, &provider)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            if !outcome.failed.is_empty() {
                return Err(HarnessError::Provider(format!(
                    "{} essays failed; rerun the same command to resume",
                    outcome.failed.len()
                )));
            }
        }
        Command::Evaluate { common, members } => {
            for table in harness::cmd_evaluate(&run_config(common, Some(members)))? {
                println!("{}\n{}", table.kind.title(), table.to_csv());
            }
        }
        Command::Ensemble { common, members, config } => {
            let mut rc = run_config(common, Some(members));
            if let Some(path) = config {
                rc.ensemble = read_json::<EnsembleParams>(&path)?;
            }
            for table in harness::cmd_ensemble(&rc)? {
                println!("{}\n{}", table.kind.title(), table.to_csv());
            }
        }
        Command::Report { out } => {
            let (md, _) = harness::cmd_report(&RunConfig::new("", out))?;
            print!("{md}");
        }
        Command::Synth { seed, out } => {
            let run = aes_core::synth::write_run(&out, seed).map_err(HarnessError::io(&out))?;
            println!("corpus:  {}\nmembers: {}", run.corpus.display(), run.members.display());
        }
    }
    Ok(())
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

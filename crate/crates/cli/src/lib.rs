//! Command-line interface over the toolkit's run drivers.
//!
//! `run_cli` is the testable entry point: it parses arguments, dispatches,
//! and returns the process exit code (0 success, 1 runtime failure, 2 usage
//! errors).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use latentlm_core::harness::{
    run_diagnose, run_eval, run_sample, run_train, synth_corpus, Config,
};
use latentlm_core::Rng;

#[derive(Parser)]
#[command(
    name = "latentlm",
    version,
    about = "Latent-variable models of token sequences: synthesize data, train, evaluate, sample, diagnose"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (plus vocab, latents, and ground-truth
    /// checkpoint) from random parameters of the configured family
    Synth {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train per the config's `inference` key; writes resolved config,
    /// metrics, and a final checkpoint
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint instead of a fresh initialization
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Per-sentence ELBO, IWAE bound, and importance-sampled log-likelihood
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ancestral samples from a checkpointed model
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of sentences to draw
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Per-sentence inference-gap decomposition for an amortized checkpoint
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> anyhow::Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

/// Prints a line, treating a closed stdout (e.g. piping into `head`) as a
/// request to stop rather than an error.
fn emit(line: std::fmt::Arguments<'_>) -> bool {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Ok(()) => true,
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => false,
        Err(e) => {
            eprintln!("error: {e}");
            false
        }
    }
}

macro_rules! emit {
    ($($arg:tt)*) => {
        if !emit(format_args!($($arg)*)) {
            return Ok(());
        }
    };
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { config, out } => {
            let cfg = load_config(&config, out)?;
            let dir = cfg.resolved_out_dir();
            let mut rng = Rng::seeded(cfg.seed);
            let synth = synth_corpus(&cfg, &dir, &mut rng)?;
            cfg.write_echo(&dir.join("resolved.cfg"))?;
            emit!(
                "wrote {} sentences (V={}, truncation rate {:.2}%) to {}",
                synth.corpus.len(),
                synth.vocab.size(),
                100.0 * synth.truncation_rate,
                dir.display()
            );
        }
        Command::Train { config, out, resume } => {
            let mut cfg = load_config(&config, out)?;
            if let Some(resume) = resume {
                cfg.init_checkpoint = Some(resume);
            }
            let outcome = run_train(&cfg)?;
            emit!(
                "trained {} via {}; final objective {:.6}; checkpoint {}",
                cfg.family.name(),
                cfg.inference.name(),
                outcome.final_value,
                outcome.checkpoint.display()
            );
        }
        Command::Eval { config, checkpoint, out } => {
            let cfg = load_config(&config, out)?;
            let records = run_eval(&cfg, &checkpoint)?;
            for r in &records {
                emit!(
                    "sentence_id={} elbo={} iwae_{}={} lp_is_{}={}",
                    r.sentence_id, r.elbo, cfg.iwae_k, r.iwae, cfg.is_k, r.lp_is
                );
            }
        }
        Command::Sample { config, checkpoint, n } => {
            let cfg = load_config(&config, None)?;
            for line in run_sample(&cfg, &checkpoint, n)? {
                emit!("{line}");
            }
        }
        Command::Diagnose { config, checkpoint, out } => {
            let cfg = load_config(&config, out)?;
            for r in run_diagnose(&cfg, &checkpoint)? {
                emit!(
                    "sentence_id={} inference_gap={} approximation_gap={} amortization_gap={} exact={}",
                    r.sentence_id,
                    r.report.inference_gap,
                    r.report.approximation_gap,
                    r.report.amortization_gap,
                    r.report.exact
                );
            }
        }
    }
    Ok(())
}

/// Parses and runs; returns the exit status. Unknown subcommands and other
/// usage errors print clap's message and return 2; runtime failures print to
/// stderr and return 1.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

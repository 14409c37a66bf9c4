//! `longspan`: corpus building, training, perplexity evaluation and n-best
//! rescoring from one executable.

mod asr;
mod config;
mod corpus;
mod error;
mod models;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, render, resolve, ConfigArgs, RunConfig};
use crate::error::{output_err, Result};

#[derive(Parser, Debug)]
#[command(name = "longspan", version, about = "Long-span language modeling and session-level n-best rescoring")]
#[command(after_help = "Logging goes to standard error; set LONGSPAN_LOG (error, warn, info, debug) to change it.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize raw text and write sentence and paragraph corpora.
    BuildCorpus(ConfigArgs),
    /// Build a frequency-ranked vocabulary file.
    BuildVocab(ConfigArgs),
    /// Item length histogram of a corpus.
    Stats(ConfigArgs),
    /// Write a synthetic topic corpus and its confusion groups.
    SynthCorpus(ConfigArgs),
    /// Train a neural language model.
    Train(ConfigArgs),
    /// Train a Kneser-Ney n-gram model.
    TrainNgram(ConfigArgs),
    /// Perplexity grid over models and corpora, with optional span sweep.
    EvalPpl(ConfigArgs),
    /// Synthesize n-best sessions from a paragraph corpus.
    MakeFixtures(ConfigArgs),
    /// Rerank n-best sessions with a neural model.
    Rerank(ConfigArgs),
    /// Word error rate of transcripts against references.
    Wer(ConfigArgs),
}

/// Writes through `f` to `path`, or to standard output when `None`.
pub(crate) fn stdout_or_file(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p).map_err(output_err(p))?);
            f(&mut w)?;
            w.flush().map_err(output_err(p))
        }
        None => {
            let out = std::io::stdout();
            let mut lock = out.lock();
            f(&mut lock)
        }
    }
}

fn execute<C: RunConfig>(name: &str, args: &ConfigArgs, run: fn(&C) -> Result<()>) -> Result<()> {
    let config: C = resolve(args)?;
    let text = render(&config)?;
    if args.dump_config {
        print!("{text}");
        return Ok(());
    }
    log::info!("{name} config:\n{}", text.trim_end());
    run(&config)
}

fn command() -> clap::Command {
    let footers = [
        ("build-corpus", keys_help::<corpus::BuildCorpusConfig>()),
        ("build-vocab", keys_help::<corpus::BuildVocabConfig>()),
        ("stats", keys_help::<corpus::StatsConfig>()),
        ("synth-corpus", keys_help::<corpus::SynthCorpusConfig>()),
        ("train", keys_help::<models::TrainCmdConfig>()),
        ("train-ngram", keys_help::<models::TrainNgramConfig>()),
        ("eval-ppl", keys_help::<models::EvalPplConfig>()),
        ("make-fixtures", keys_help::<asr::MakeFixturesConfig>()),
        ("rerank", keys_help::<asr::RerankConfig>()),
        ("wer", keys_help::<asr::WerConfig>()),
    ];
    footers
        .into_iter()
        .fold(Cli::command(), |cmd, (name, help)| cmd.mut_subcommand(name, |s| s.after_help(help)))
}

fn main() -> ExitCode {
    let cli = match Cli::from_arg_matches(&command().get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LONGSPAN_LOG", "info"))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::BuildCorpus(a) => execute("build-corpus", a, corpus::build_corpus),
        Command::BuildVocab(a) => execute("build-vocab", a, corpus::build_vocab),
        Command::Stats(a) => execute("stats", a, corpus::stats),
        Command::SynthCorpus(a) => execute("synth-corpus", a, corpus::synth_corpus),
        Command::Train(a) => execute("train", a, models::train_model),
        Command::TrainNgram(a) => execute("train-ngram", a, models::train_ngram),
        Command::EvalPpl(a) => execute("eval-ppl", a, models::eval_ppl),
        Command::MakeFixtures(a) => execute("make-fixtures", a, asr::make_fixtures_cmd),
        Command::Rerank(a) => execute("rerank", a, asr::rerank),
        Command::Wer(a) => execute("wer", a, asr::wer_cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("longspan: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

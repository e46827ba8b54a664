//! The `seqrank` command line. All configuration arrives as flags so a run is
//! reproducible from its shell line alone.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::bptt::{train_from, TrainConfig, Truncation, Velocity};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::{evaluate_bm25, evaluate_model, format_table, rank_candidates_scored, BM25_B, BM25_K1};
use crate::grad_oracle::{GradCheckCase, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use crate::lstm::{count_parameters, init_parameters, ModelDims};
use crate::synthetic::{generate, SyntheticConfig};
use crate::text::{judgments_to_string, load_judgments, read_clickthrough, tokenize, TrigramVocabulary};

#[derive(Debug, Parser)]
#[command(name = "seqrank", version, about = "LSTM sentence embeddings for click-through ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a letter-trigram vocabulary from every tab-separated field of a text file.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a click-through file and write a checkpoint and a loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a judgment file with NDCG@1/3/10.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        /// Add a BM25 row to the table.
        #[arg(long)]
        with_bm25: bool,
    },
    /// Score BM25 on a judgment file with NDCG@1/3/10.
    EvalBm25 {
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, default_value_t = BM25_K1)]
        k1: f64,
        #[arg(long, default_value_t = BM25_B)]
        b: f64,
    },
    /// Rank candidate texts, one per line, against a query.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Compare analytic gradients with finite differences on small random models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        cases: u64,
        #[arg(long, default_value_t = 50)]
        input_dim: usize,
        #[arg(long, default_value_t = 8)]
        ncell: usize,
        #[arg(long, default_value_t = 2)]
        negatives: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Print the number of trainable parameters for the given dimensions.
    ParamCount {
        #[arg(long)]
        input_dim: usize,
        #[arg(long)]
        ncell: usize,
    },
    /// Write a seeded synthetic dataset: train.tsv, heldout.tsv, judgments.tsv.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        held_out: usize,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss log to write; defaults to the checkpoint path plus `.loss.tsv`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Continue from this checkpoint, including its momentum.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Negatives sampled for lines that carry none.
    #[arg(long, default_value_t = 4)]
    n_negatives: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// `full` or a number of steps.
    #[arg(long, default_value = "full")]
    truncation: Truncation,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    /// Disable gradient clipping.
    #[arg(long, conflicts_with = "clip_norm")]
    no_clip: bool,
    #[arg(long, default_value_t = 64)]
    max_seq_len: usize,
    /// Memory cells; taken from the checkpoint when resuming. [default: 32]
    #[arg(long)]
    ncell: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            n_negatives: self.n_negatives,
            batch_size: self.batch_size,
            epochs: self.epochs,
            gamma: self.gamma,
            truncation: self.truncation,
            clip_norm: (!self.no_clip).then_some(self.clip_norm),
            max_sequence_length: self.max_seq_len,
            ncell: self.ncell.unwrap_or(defaults.ncell),
            seed: self.seed,
        }
    }
}

/// Runs the command line with process stdout and stderr. Returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Runs the command line against the given output streams.
///
/// Exit codes: 0 success, 1 runtime failure or failed gradient check, 2 usage
/// error.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                2
            } else {
                let _ = write!(out, "{rendered}");
                0
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", error_chain(&e));
            1
        }
    }
}

/// Names the file in I/O errors, which otherwise only carry the OS message.
fn in_file<T>(path: &Path, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn read_text(path: &Path) -> Result<String> {
    in_file(path, fs::read_to_string(path).map_err(Error::from))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    in_file(path, fs::write(path, contents).map_err(Error::from))
}

fn error_chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let next = s.to_string();
        if !msg.contains(&next) {
            msg.push_str(": ");
            msg.push_str(&next);
        }
        source = s.source();
    }
    msg
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::BuildVocab { corpus, out: path } => {
            let text = read_text(&corpus)?;
            let vocab = TrigramVocabulary::build(text.lines().flat_map(|l| l.split('\t')).map(tokenize))?;
            in_file(&path, vocab.save(&path))?;
            writeln!(out, "{} trigrams", vocab.dimension())?;
        }
        Command::Train(args) => train_command(&args, out)?,
        Command::Eval {
            checkpoint,
            vocab,
            judgments,
            with_bm25,
        } => {
            let (ck, vocab) = load_model(&checkpoint, &vocab)?;
            let judged = in_file(&judgments, load_judgments(&judgments))?;
            let model = evaluate_model(&ck.params, &judged, &vocab)?;
            let table = if with_bm25 {
                let bm25 = evaluate_bm25(&judged, BM25_K1, BM25_B)?;
                format_table(&[("BM25", &bm25), ("LSTM", &model)])
            } else {
                format_table(&[("LSTM", &model)])
            };
            write!(out, "{table}")?;
        }
        Command::EvalBm25 { judgments, k1, b } => {
            let result = evaluate_bm25(&in_file(&judgments, load_judgments(&judgments))?, k1, b)?;
            write!(out, "{}", format_table(&[("BM25", &result)]))?;
        }
        Command::Rank {
            checkpoint,
            vocab,
            query,
            candidates,
        } => {
            let (ck, vocab) = load_model(&checkpoint, &vocab)?;
            let text = read_text(&candidates)?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let words: Vec<_> = lines.iter().map(|l| tokenize(l)).collect();
            let ranked = rank_candidates_scored(&ck.params, &tokenize(&query), &words, &vocab)?;
            for (rank, (i, score)) in ranked.into_iter().enumerate() {
                writeln!(out, "{}\t{}\t{}", rank + 1, significant(score, 9), lines[i])?;
            }
        }
        Command::Gradcheck {
            seed,
            cases,
            input_dim,
            ncell,
            negatives,
            gamma,
            tolerance,
            epsilon,
        } => {
            let mut all_pass = true;
            for s in seed..seed + cases {
                let report = GradCheckCase::random(s, input_dim, ncell, negatives)?.check(gamma, tolerance, epsilon)?;
                writeln!(out, "seed {s}")?;
                writeln!(out, "{report}")?;
                all_pass &= report.pass;
            }
            return Ok(if all_pass { 0 } else { 1 });
        }
        Command::ParamCount { input_dim, ncell } => {
            writeln!(out, "{}", count_parameters(ModelDims::new(input_dim, ncell)?))?;
        }
        Command::Synth {
            out_dir,
            seed,
            train,
            held_out,
        } => {
            let config = SyntheticConfig {
                seed,
                train_instances: train,
                held_out_instances: held_out,
                ..SyntheticConfig::default()
            };
            let data = generate(&config)?;
            in_file(&out_dir, fs::create_dir_all(&out_dir).map_err(Error::from))?;
            let lines = |set: &[crate::text::ClickThroughInstance]| -> String {
                set.iter().map(|i| i.to_line() + "\n").collect()
            };
            write_file(&out_dir.join("train.tsv"), lines(&data.train))?;
            write_file(&out_dir.join("heldout.tsv"), lines(&data.held_out))?;
            write_file(&out_dir.join("judgments.tsv"), judgments_to_string(&data.judged))?;
            writeln!(out, "{} training, {} held-out instances", data.train.len(), data.held_out.len())?;
        }
    }
    Ok(0)
}

/// Fixed-point rendering of `x` with `digits` significant digits.
fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits - 1, x);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn load_model(checkpoint: &Path, vocab: &Path) -> Result<(Checkpoint, TrigramVocabulary)> {
    let ck = in_file(checkpoint, load_checkpoint(checkpoint))?;
    let vocab = in_file(vocab, TrigramVocabulary::load(vocab))?;
    ck.check_vocabulary(&vocab)?;
    Ok((ck, vocab))
}

fn train_command(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = args.config();
    let vocab = in_file(&args.vocab, TrigramVocabulary::load(&args.vocab))?;
    let data = in_file(&args.data, read_clickthrough(&args.data))?;

    let (params, velocity, prior_steps) = match &args.resume {
        Some(path) => {
            let ck = in_file(path, load_checkpoint(path))?;
            ck.check_vocabulary(&vocab)?;
            if let Some(n) = args.ncell {
                if n != ck.dims.ncell {
                    return Err(Error::Config(format!(
                        "--ncell {n} disagrees with the resumed checkpoint's {}",
                        ck.dims.ncell
                    )));
                }
            }
            config.ncell = ck.dims.ncell;
            let velocity = ck.velocity.unwrap_or_else(|| Velocity::zeros(ck.dims));
            (ck.params, velocity, ck.step)
        }
        None => {
            config.validate()?;
            let dims = ModelDims::new(vocab.dimension(), config.ncell)?;
            (init_parameters(dims, config.seed), Velocity::zeros(dims), 0)
        }
    };
    info!(
        "training {} instances, {} parameters, {} epochs",
        data.len(),
        params.len(),
        config.epochs
    );
    let outcome = train_from(&config, &data, &vocab, params, velocity)?;
    for (epoch, loss) in outcome.epoch_mean_losses().iter().enumerate() {
        info!("epoch {epoch}: mean batch loss {loss:.6}");
    }

    let mut ck = Checkpoint::new(outcome.params.clone(), &vocab, config.gamma);
    ck.velocity = Some(outcome.velocity.clone());
    ck.step = prior_steps + outcome.steps;
    in_file(&args.out, save_checkpoint(&args.out, &ck))?;
    let log_path = args.loss_log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.tsv");
        PathBuf::from(p)
    });
    write_file(&log_path, outcome.log_string())?;
    let last = outcome.epoch_mean_losses().last().copied().unwrap_or(f64::NAN);
    writeln!(
        out,
        "{} updates, final epoch mean batch loss {last:.6}; wrote {} and {}",
        ck.step,
        args.out.display(),
        log_path.display()
    )?;
    Ok(())
}

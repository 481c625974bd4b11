//! Command-line front end: tokenizer training, vocabulary building,
//! streaming encode/decode, casing reports, toy pretraining, and
//! verification commands.
//!
//! Every run echoes its resolved configuration to stderr as one JSON line
//! so results can be reproduced. Encode output is one document per line,
//! tokens as `base_id:shape` separated by spaces; word-initial tokens carry
//! a leading `_` boundary marker and `--with-offsets` appends `@start-end`.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use unicase_core::encoder;
use unicase_core::harness;
use unicase_core::model::{
    self, flat_embedding_params, grad_check, letter_flags, mlm_mask, param_count, ModelConfig,
    ModelParams, SgdMomentum,
};
use unicase_core::normalize::Shape;
use unicase_core::trainer::{
    train_with_threads, BaseVocab, CorpusCasing, CorpusTable, TrainerConfig,
};
use unicase_core::vocab::{expand_variants, UniCaseVocab};
use unicase_core::Token;

#[derive(Parser)]
#[command(
    name = "unicase",
    version,
    about = "Case-aware subword tokenizer and toy MLM"
)]
struct Cli {
    /// Random seed (env fallback: UNICASE_SEED).
    #[arg(long, global = true, env = "UNICASE_SEED", default_value_t = 42)]
    seed: u64,
    /// Worker threads for parallel stages (trainer E-step).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Report errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a unigram base vocabulary over the case-folded corpus.
    TrainTokenizer(TrainTokenizerArgs),
    /// Expand a base vocabulary into surface entries observed in a corpus.
    BuildVocab(BuildVocabArgs),
    /// Encode text from stdin (or a file) into base_id:shape tokens.
    Encode(EncodeArgs),
    /// Decode base_id:shape tokens back into text.
    Decode(DecodeArgs),
    /// Casing-invariance and fragmentation report for two tokenizers.
    Report(ReportArgs),
    /// Train the toy masked language model on an encoded corpus.
    PretrainToy(PretrainArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Itemize trainable parameter counts.
    Paramcount(ParamcountArgs),
}

#[derive(Args)]
struct TrainTokenizerArgs {
    /// Corpus file, UTF-8, one document per line.
    corpus: PathBuf,
    /// Target number of base pieces.
    #[arg(long, default_value_t = 1000)]
    base_size: usize,
    /// Seed candidates kept before EM (default: 10x base size).
    #[arg(long)]
    seed_size: Option<usize>,
    #[arg(long, default_value_t = 0.75)]
    shrink_factor: f64,
    #[arg(long, default_value_t = 2)]
    em_iterations: usize,
    #[arg(long, default_value_t = 16)]
    max_piece_length: usize,
    /// Train on raw surfaces instead of folded chunks (cased baseline).
    #[arg(long)]
    raw: bool,
    /// Output TSV path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Base vocabulary TSV from train-tokenizer.
    base: PathBuf,
    /// The raw (unfolded) corpus the variants are counted in.
    corpus: PathBuf,
    /// Occurrences required before an upper/title variant gets an entry.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Surface vocabulary TSV from build-vocab.
    #[arg(long)]
    vocab: PathBuf,
    /// Append @start-end byte offsets to each token.
    #[arg(long)]
    with_offsets: bool,
    /// Read from a file instead of stdin.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Corpus to audit.
    corpus: PathBuf,
    /// Surface vocabulary TSV (case-invariant tokenizer).
    #[arg(long)]
    unicase_vocab: PathBuf,
    /// Base vocabulary TSV of the cased baseline (trained with --raw).
    #[arg(long)]
    baseline: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Training corpus, one document per line.
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    n_layers: usize,
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    /// Feed-forward width (default: 2x d_model).
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long, default_value_t = 64)]
    max_positions: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.15)]
    mask_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Write the trained parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 1)]
    n_layers: usize,
    #[arg(long, default_value_t = 2)]
    n_heads: usize,
    #[arg(long, default_value_t = 20)]
    vocab_size: usize,
    #[arg(long, default_value_t = 10)]
    sequence_length: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ParamcountArgs {
    #[arg(long, default_value_t = 32_768)]
    base_size: usize,
    #[arg(long, default_value_t = 768)]
    d_model: usize,
    #[arg(long, default_value_t = 512)]
    max_positions: usize,
    #[arg(long, default_value_t = 12)]
    n_layers: usize,
    #[arg(long, default_value_t = 12)]
    n_heads: usize,
    #[arg(long, default_value_t = 3_072)]
    d_ff: usize,
    /// Flat surface-vocabulary size to compare embedding cost against.
    #[arg(long, default_value_t = 90_000)]
    surface: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if json_errors {
                let payload = json!({ "error": format!("{err:#}") });
                eprintln!("{payload}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn echo_config(value: serde_json::Value) {
    eprintln!("config: {value}");
}

fn read_corpus(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTokenizer(args) => cmd_train_tokenizer(args, cli.seed, cli.threads),
        Command::BuildVocab(args) => cmd_build_vocab(args, cli.seed),
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Report(args) => cmd_report(args),
        Command::PretrainToy(args) => cmd_pretrain_toy(args, cli.seed),
        Command::Gradcheck(args) => cmd_gradcheck(args, cli.seed),
        Command::Paramcount(args) => cmd_paramcount(args),
    }
}

fn cmd_train_tokenizer(args: TrainTokenizerArgs, seed: u64, threads: usize) -> Result<()> {
    let mut config = TrainerConfig::new(args.base_size);
    if let Some(seed_size) = args.seed_size {
        config.seed_size = seed_size;
    }
    config.shrink_factor = args.shrink_factor;
    config.em_iterations_per_round = args.em_iterations;
    config.max_piece_length = args.max_piece_length;
    let casing = if args.raw {
        CorpusCasing::Raw
    } else {
        CorpusCasing::Folded
    };
    echo_config(json!({
        "command": "train-tokenizer",
        "corpus": args.corpus.display().to_string(),
        "base_size": config.target_base_size,
        "seed_size": config.seed_size,
        "shrink_factor": config.shrink_factor,
        "em_iterations": config.em_iterations_per_round,
        "max_piece_length": config.max_piece_length,
        "raw": args.raw,
        "seed": seed,
        "threads": threads,
        "output": args.output.display().to_string(),
    }));

    let text = read_corpus(&args.corpus)?;
    let table = CorpusTable::from_text(&text, casing);
    let outcome = train_with_threads(&table, &config, threads)?;
    for round in &outcome.rounds {
        let lls: Vec<String> = round
            .log_likelihoods
            .iter()
            .map(|ll| format!("{ll:.4}"))
            .collect();
        eprintln!(
            "round: vocab={} loglik=[{}]",
            round.vocab_size,
            lls.join(", ")
        );
    }
    outcome.vocab.save(&args.output, config.hash())?;
    eprintln!(
        "wrote {} pieces to {}",
        outcome.vocab.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_build_vocab(args: BuildVocabArgs, seed: u64) -> Result<()> {
    echo_config(json!({
        "command": "build-vocab",
        "base": args.base.display().to_string(),
        "corpus": args.corpus.display().to_string(),
        "min_count": args.min_count,
        "seed": seed,
        "output": args.output.display().to_string(),
    }));
    let base = BaseVocab::load(&args.base)?;
    let corpus = read_corpus(&args.corpus)?;
    let (vocab, report) = expand_variants(base, &corpus, args.min_count)?;
    for piece in &report.unobserved_pieces {
        eprintln!("warning: piece {piece:?} never occurs in the corpus");
    }
    vocab.save(&args.output)?;
    eprintln!(
        "wrote {} entries over {} base pieces to {}",
        vocab.n_entries(),
        vocab.base().len(),
        args.output.display()
    );
    Ok(())
}

fn format_token(token: &Token, with_offsets: bool) -> String {
    let marker = if token.word_initial { "_" } else { "" };
    if with_offsets {
        format!(
            "{marker}{}:{}@{}-{}",
            token.base_id,
            token.shape.letter(),
            token.span.0,
            token.span.1
        )
    } else {
        format!("{marker}{}:{}", token.base_id, token.shape.letter())
    }
}

fn parse_token(text: &str) -> Result<Token> {
    let (word_initial, rest) = match text.strip_prefix('_') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let rest = rest
        .split('@')
        .next()
        .expect("split yields at least one part");
    let (id, shape) = rest
        .split_once(':')
        .ok_or_else(|| anyhow!("token {text:?} is not base_id:shape"))?;
    let base_id: u32 = id
        .parse()
        .with_context(|| format!("token {text:?}: bad base id"))?;
    let shape = shape
        .chars()
        .next()
        .and_then(Shape::from_letter)
        .filter(|_| shape.len() == 1)
        .ok_or_else(|| anyhow!("token {text:?}: shape must be one of L,U,T,N"))?;
    Ok(Token {
        base_id,
        shape,
        span: (0, 0),
        word_initial,
    })
}

fn for_each_input_line(input: Option<&Path>, mut f: impl FnMut(&str) -> Result<()>) -> Result<()> {
    match input {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for line in text.lines() {
                f(line)?;
            }
            Ok(())
        }
        None => {
            let stdin = io::stdin();
            for line in stdin.lock().lines() {
                let line = line.context("reading stdin")?;
                f(&line)?;
            }
            Ok(())
        }
    }
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    echo_config(json!({
        "command": "encode",
        "vocab": args.vocab.display().to_string(),
        "with_offsets": args.with_offsets,
        "input": args.input.as_ref().map(|p| p.display().to_string()),
    }));
    let vocab = UniCaseVocab::load(&args.vocab)?;
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    for_each_input_line(args.input.as_deref(), |line| {
        let encoding = encoder::encode(line, &vocab)?;
        let tokens: Vec<String> = encoding
            .tokens
            .iter()
            .map(|t| format_token(t, args.with_offsets))
            .collect();
        writeln!(out, "{}", tokens.join(" ")).context("writing stdout")?;
        Ok(())
    })?;
    out.flush().context("flushing stdout")
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    echo_config(json!({
        "command": "decode",
        "vocab": args.vocab.display().to_string(),
        "input": args.input.as_ref().map(|p| p.display().to_string()),
    }));
    let vocab = UniCaseVocab::load(&args.vocab)?;
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    for_each_input_line(args.input.as_deref(), |line| {
        let tokens: Vec<Token> = line
            .split_whitespace()
            .map(parse_token)
            .collect::<Result<_>>()?;
        let text = encoder::decode(&tokens, &vocab)?;
        writeln!(out, "{text}").context("writing stdout")?;
        Ok(())
    })?;
    out.flush().context("flushing stdout")
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    echo_config(json!({
        "command": "report",
        "corpus": args.corpus.display().to_string(),
        "unicase_vocab": args.unicase_vocab.display().to_string(),
        "baseline": args.baseline.display().to_string(),
    }));
    let unicase = UniCaseVocab::load(&args.unicase_vocab)?;
    let baseline = BaseVocab::load(&args.baseline)?;
    let corpus = read_corpus(&args.corpus)?;
    let comparison = harness::compare(&corpus, &unicase, &baseline)?;

    // Human-readable tables on stderr, machine records on stdout.
    eprint!("{}", comparison.unicase.table("unicase tokenizer"));
    eprintln!();
    eprint!("{}", comparison.baseline.table("cased baseline"));
    eprintln!(
        "unicase upper==lower: {}; baseline upper>original: {}",
        comparison.unicase_upper_equals_lower(),
        comparison.baseline_upper_exceeds_original()
    );
    let stdout = io::stdout();
    let mut out = stdout.lock();
    write!(
        out,
        "{}",
        prefix_records("unicase", &comparison.unicase.records())
    )?;
    write!(
        out,
        "{}",
        prefix_records("baseline", &comparison.baseline.records())
    )?;
    Ok(())
}

/// `tokenizer<TAB>mode<TAB>tokens_per_word<TAB>violations` per line.
fn prefix_records(name: &str, records: &str) -> String {
    let mut out = String::new();
    for line in records.lines() {
        out.push_str(name);
        out.push('\t');
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn cmd_pretrain_toy(args: PretrainArgs, seed: u64) -> Result<()> {
    let vocab = UniCaseVocab::load(&args.vocab)?;
    let base_len = vocab.base().len();
    let config = ModelConfig {
        d_model: args.d_model,
        n_layers: args.n_layers,
        n_heads: args.n_heads,
        d_ff: args.d_ff.unwrap_or(args.d_model * 2),
        max_positions: args.max_positions,
        base_vocab_size: base_len + 1,
        n_shapes: Shape::COUNT,
        mask_id: base_len as u32,
        alpha: args.alpha,
        mask_fraction: args.mask_fraction,
        mask_prob: 0.8,
        random_prob: 0.1,
        keep_prob: 0.1,
        seed,
    };
    config.validate()?;
    echo_config(json!({
        "command": "pretrain-toy",
        "corpus": args.corpus.display().to_string(),
        "vocab": args.vocab.display().to_string(),
        "steps": args.steps,
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "model": serde_json::to_value(&config).expect("config serializes"),
        "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
    }));

    let corpus = read_corpus(&args.corpus)?;
    let sequences = model::encode_corpus_lines(&corpus, &vocab, config.max_positions)?;
    if sequences.is_empty() {
        bail!("corpus {} produced no sequences", args.corpus.display());
    }
    let flags = letter_flags(&vocab);
    let mut params = ModelParams::init(&config, config.seed);
    let mut optimizer = SgdMomentum::new(args.learning_rate, args.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let records = model::train_loop(
        &sequences,
        &mut params,
        &config,
        &mut optimizer,
        &flags,
        args.steps,
        &mut rng,
    )?;

    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    for record in &records {
        writeln!(out, "{}", record.log_line()).context("writing stdout")?;
    }
    out.flush().context("flushing stdout")?;

    if let Some(path) = &args.checkpoint {
        model::save_checkpoint(path, &params, &config)?;
        eprintln!("wrote checkpoint to {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, seed: u64) -> Result<()> {
    let mut config = ModelConfig::toy(args.vocab_size);
    config.d_model = args.d_model;
    config.n_layers = args.n_layers;
    config.n_heads = args.n_heads;
    config.d_ff = args.d_model * 4;
    config.seed = seed;
    config.validate()?;
    echo_config(json!({
        "command": "gradcheck",
        "epsilon": args.epsilon,
        "tolerance": args.tolerance,
        "sequence_length": args.sequence_length,
        "model": serde_json::to_value(&config).expect("config serializes"),
    }));

    let params = ModelParams::init(&config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut is_letter = vec![true; config.base_vocab_size];
    is_letter[config.mask_id as usize] = false;
    let tokens: Vec<(u32, Shape)> = (0..args.sequence_length.max(1))
        .map(|_| {
            let id = rng.gen_range(0..config.base_vocab_size.saturating_sub(1) as u32);
            (id, Shape::from_id(rng.gen_range(0..3)).expect("shape id"))
        })
        .collect();
    let batch = mlm_mask(&tokens, &config, &is_letter, &mut rng);
    let report = grad_check(&params, &batch, &config, args.epsilon)?;
    println!(
        "max relative error {:.3e} over {} parameters (worst: {} [{}])",
        report.max_rel_error, report.checked_params, report.worst.0, report.worst.1
    );
    if report.max_rel_error >= args.tolerance {
        bail!(
            "gradient check failed: {:.3e} >= {:.0e}",
            report.max_rel_error,
            args.tolerance
        );
    }
    Ok(())
}

fn cmd_paramcount(args: ParamcountArgs) -> Result<()> {
    let config = ModelConfig {
        d_model: args.d_model,
        n_layers: args.n_layers,
        n_heads: args.n_heads,
        d_ff: args.d_ff,
        max_positions: args.max_positions,
        base_vocab_size: args.base_size,
        n_shapes: Shape::COUNT,
        mask_id: 0,
        alpha: 0.1,
        mask_fraction: 0.15,
        mask_prob: 0.8,
        random_prob: 0.1,
        keep_prob: 0.1,
        seed: 0,
    };
    config.validate()?;
    echo_config(json!({
        "command": "paramcount",
        "model": serde_json::to_value(&config).expect("config serializes"),
        "surface": args.surface,
    }));
    let counts = param_count(&config);
    println!("{:<24} {:>14}", "tensor group", "parameters");
    println!("{:<24} {:>14}", "base embeddings", counts.base_embedding);
    println!("{:<24} {:>14}", "case embeddings", counts.case_embedding);
    println!(
        "{:<24} {:>14}",
        "positional embeddings", counts.positional_embedding
    );
    println!("{:<24} {:>14}", "encoder", counts.encoder);
    println!("{:<24} {:>14}", "heads", counts.heads);
    println!("{:<24} {:>14}", "total", counts.total);
    println!();
    let flat = flat_embedding_params(args.surface, args.d_model);
    println!(
        "embedding total {} vs flat {}-surface vocabulary {} ({}, ratio {:.3})",
        counts.embedding_total(),
        args.surface,
        flat,
        if counts.embedding_total() < flat {
            "smaller"
        } else {
            "NOT smaller"
        },
        counts.embedding_total() as f64 / flat as f64
    );
    Ok(())
}

//! `nepgpt`: one binary for every pipeline stage.

mod manifest;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use walkdir::WalkDir;

use nepgpt::corpus::{clean_documents, corpus_report, CleanConfig, DigitPolicy, RawDoc};
use nepgpt::error::{Error, ErrorClass};
use nepgpt::eval::{evaluate, generate, SampleConfig};
use nepgpt::model::Checkpoint;
use nepgpt::shards::{list_shards, open_dir, verify_shard, write_shards};
use nepgpt::tensor::{primitive_suite, Precision};
use nepgpt::tokenizer::{stride_sample, train_bpe_with_report, BpeVocab, Encoder, TokenizerConfig};
use nepgpt::trainer::{train, MetricsRecord, RunConfig};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "nepgpt", version, about = "Devanagari GPT pretraining toolkit")]
struct Cli {
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean raw text files into one line-per-sentence corpus.
    Clean(CleanArgs),
    /// Learn a BPE vocabulary from a cleaned corpus.
    TrainTokenizer(TrainTokenizerArgs),
    /// Show the segmentation and ids of a string.
    Tokenize(TokenizeArgs),
    /// Encode a cleaned corpus into binary shards.
    Shard(ShardArgs),
    /// Check the headers and checksums of every shard in a directory.
    Verify(VerifyArgs),
    /// Train a model on shards.
    Train(TrainArgs),
    /// Validation loss and perplexity of a checkpoint.
    Eval(EvalArgs),
    /// Generate text from a checkpoint.
    Sample(SampleArgs),
    #[command(hide = true)]
    SelfTest(SelfTestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Digits {
    Keep,
    Map,
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct CleanArgs {
    /// Directory of UTF-8 text files; each file is one document.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_chars: Option<usize>,
    #[arg(long)]
    max_chars: Option<usize>,
    #[arg(long, value_enum, default_value = "map")]
    digits: Digits,
    /// Drop short lines without sentence-final punctuation.
    #[arg(long, value_enum, default_value = "off")]
    fragments: Switch,
    /// Where to write the counters as CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainTokenizerArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16_384)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0.9995)]
    coverage: f64,
    #[arg(long, default_value_t = 8_000_000)]
    sample_chars: usize,
}

#[derive(Args, Debug)]
struct TokenizeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    text: String,
}

#[derive(Args, Debug)]
struct ShardArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000_000)]
    shard_tokens: usize,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Shard directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Fraction of shards held out for validation.
    #[arg(long, default_value_t = 0.01)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 8)]
    micro_batch: usize,
    #[arg(long, default_value_t = 0.01)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, default_value_t = 100)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// 0 keeps the whole vocabulary.
    #[arg(long, default_value_t = 0)]
    top_k: usize,
}

#[derive(Args, Debug)]
struct SelfTestArgs {
    #[arg(long)]
    grad_check: bool,
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
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Gradient checks that ran but missed their tolerance.
#[derive(Debug)]
struct CheckFailed(usize);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient checks over tolerance", self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<CheckFailed>().is_some() {
            return ErrorClass::Numeric.exit_code() as u8;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return err.class().exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorClass::Io.exit_code() as u8;
        }
    }
    ErrorClass::Usage.exit_code() as u8
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Globals {
        config: cli.config,
        seed: cli.seed,
    };
    match cli.command {
        Command::Clean(a) => clean(&ctx, a),
        Command::TrainTokenizer(a) => train_tokenizer(&ctx, a),
        Command::Tokenize(a) => tokenize(a),
        Command::Shard(a) => shard(&ctx, a),
        Command::Verify(a) => verify(a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::SelfTest(a) => self_test(a),
    }
}

/// Global flags every stage may consult.
struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
}

impl Globals {
    /// Defaults, then the config file, then `--seed`.
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }
}

fn read_docs(dir: &Path) -> anyhow::Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", dir.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let bytes = fs::read(entry.path())
            .map_err(|e| Error::io(format!("reading {}", entry.path().display()), e))?;
        let source_id = entry
            .path()
            .strip_prefix(dir)
            .unwrap_or(entry.path())
            .display()
            .to_string();
        docs.push(RawDoc {
            source_id,
            text: String::from_utf8_lossy(&bytes).into_owned(),
        });
    }
    Ok(docs)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(f))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("writing {}", path.display()), e)
}

fn clean(ctx: &Globals, a: CleanArgs) -> anyhow::Result<()> {
    let mut cfg = CleanConfig {
        digit_policy: match a.digits {
            Digits::Keep => DigitPolicy::KeepAscii,
            Digits::Map => DigitPolicy::MapToDevanagari,
            Digits::Drop => DigitPolicy::Drop,
        },
        drop_fragments: a.fragments == Switch::On,
        ..CleanConfig::default()
    };
    if let Some(n) = a.min_chars {
        cfg.min_sentence_chars = n;
    }
    if let Some(n) = a.max_chars {
        cfg.max_sentence_chars = n;
    }
    cfg.validate()?;
    RunManifest::new("clean", ctx.seed)
        .setting("digits", format!("{:?}", cfg.digit_policy))
        .setting("drop_fragments", cfg.drop_fragments)
        .setting("min_chars", cfg.min_sentence_chars)
        .setting("max_chars", cfg.max_sentence_chars)
        .input(&a.input)
        .output(&a.out)
        .write_beside(&a.out)?;

    let raw = read_docs(&a.input)?;
    let (docs, stats) = clean_documents(&raw, &cfg);
    let mut out = create(&a.out)?;
    for d in &docs {
        for line in d.text.lines() {
            writeln!(out, "{line}").map_err(io_err(&a.out))?;
        }
    }
    out.flush().map_err(io_err(&a.out))?;
    if let Some(p) = &a.stats {
        let mut f = create(p)?;
        f.write_all(stats.to_csv().as_bytes()).map_err(io_err(p))?;
        f.flush().map_err(io_err(p))?;
    }
    println!("{}", corpus_report(&stats));
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e).into())
}

fn train_tokenizer(ctx: &Globals, a: TrainTokenizerArgs) -> anyhow::Result<()> {
    let cfg = TokenizerConfig {
        vocab_size: a.vocab_size,
        sample_chars: a.sample_chars,
        character_coverage: a.coverage,
        ..TokenizerConfig::default()
    };
    cfg.validate()?;
    let seed = ctx.seed_or(0);
    RunManifest::new("train-tokenizer", Some(seed))
        .setting("vocab_size", cfg.vocab_size)
        .setting("coverage", cfg.character_coverage)
        .setting("sample_chars", cfg.sample_chars)
        .input(&a.input)
        .output(&a.out)
        .write_beside(&a.out)?;

    let lines = read_lines(&a.input)?;
    let total: usize = lines.iter().map(|l| l.chars().count()).sum();
    let sample = stride_sample(&lines, total, &cfg, seed);
    let (vocab, report) = train_bpe_with_report(&sample, &cfg, seed)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    vocab.save(&a.out)?;
    println!(
        "vocab {} pieces ({} merges) from {} lines / {} chars -> {}",
        vocab.len(),
        vocab.merges().len(),
        report.sampled_lines,
        report.sampled_chars,
        a.out.display()
    );
    Ok(())
}

fn tokenize(a: TokenizeArgs) -> anyhow::Result<()> {
    let vocab = BpeVocab::load(&a.vocab)?;
    let mut enc = Encoder::new(&vocab);
    let ids = enc.encode(&a.text, false, false);
    let pieces = enc.pieces(&a.text);
    println!("{}", pieces.join(" "));
    let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
    println!("{}", ids.join(" "));
    Ok(())
}

fn shard(ctx: &Globals, a: ShardArgs) -> anyhow::Result<()> {
    let vocab = BpeVocab::load(&a.vocab)?;
    RunManifest::new("shard", ctx.seed)
        .setting("shard_tokens", a.shard_tokens)
        .setting("vocab_size", vocab.len())
        .input(&a.vocab)
        .input(&a.input)
        .output(&a.out)
        .write_into(&a.out)?;
    let lines = read_lines(&a.input)?;
    let mut enc = Encoder::new(&vocab);
    let ids = lines
        .iter()
        .filter(|l| !l.is_empty())
        .flat_map(|l| enc.encode(l, true, true))
        .collect::<Vec<_>>();
    let shards = write_shards(ids, a.shard_tokens, &a.out, vocab.len())?;
    let tokens: u64 = shards.iter().map(|s| s.header.token_count).sum();
    println!("{} shards, {tokens} tokens -> {}", shards.len(), a.out.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> anyhow::Result<()> {
    let paths = list_shards(&a.dir)?;
    if paths.is_empty() {
        return Err(Error::SplitEmpty.into());
    }
    let mut tokens = 0u64;
    for p in &paths {
        let h = verify_shard(p)?;
        tokens += h.token_count;
        println!("ok {} {} tokens", p.display(), h.token_count);
    }
    println!("{} shards, {tokens} tokens", paths.len());
    Ok(())
}

fn train_cmd(ctx: &Globals, a: TrainArgs) -> anyhow::Result<()> {
    let cfg = ctx.run_config()?;
    let vocab = BpeVocab::load(&a.vocab)?;
    if vocab.len() != cfg.model.vocab_size {
        return Err(Error::VocabMismatch {
            left_name: "config vocab_size".into(),
            left: cfg.model.vocab_size,
            right_name: format!("vocab file {}", a.vocab.display()),
            right: vocab.len(),
        }
        .into());
    }
    let mut m = RunManifest::new("train", Some(cfg.train.seed))
        .config(&cfg)
        .setting("val_fraction", a.val_fraction)
        .input(&a.data)
        .input(&a.vocab)
        .output(&a.out);
    if let Some(r) = &a.resume {
        m = m.input(r);
    }
    m.write_into(&a.out)?;
    let (train_split, val) = open_dir(&a.data, a.val_fraction)?;
    let summary = train(cfg, train_split, Some(val), &a.out, a.resume.as_deref())?;
    println!(
        "{} steps, {} tokens, metrics in {}",
        summary.steps,
        summary.tokens,
        summary.metrics_path.display()
    );
    if let Some(last) = summary.checkpoints.last() {
        println!("checkpoint {}", last.display());
    }
    Ok(())
}

fn eval_cmd(ctx: &Globals, a: EvalArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let params = ck.params()?;
    let (_, val) = open_dir(&a.data, a.val_fraction)?;
    if val.vocab_size() != ck.config.vocab_size {
        return Err(Error::VocabMismatch {
            left_name: "checkpoint".into(),
            left: ck.config.vocab_size,
            right_name: "val shards".into(),
            right: val.vocab_size(),
        }
        .into());
    }
    let tiling = ctx.run_config()?.tiling;
    let report = evaluate(&params, &val, a.batches, a.micro_batch, tiling)?;
    let row = MetricsRecord {
        step: ck.state.step,
        train_loss: None,
        val_loss: Some(report.mean_loss),
        lr: None,
        tokens: ck.state.tokens_seen,
        perplexity: Some(report.perplexity),
        wall_time: 0.0,
    };
    println!("{row}");
    Ok(())
}

fn sample(ctx: &Globals, a: SampleArgs) -> anyhow::Result<()> {
    if a.temperature < 0.0 || !a.temperature.is_finite() {
        bail!("--temperature must be a finite value >= 0");
    }
    let ck = Checkpoint::load(&a.ckpt)?;
    let params = ck.params()?;
    let vocab = BpeVocab::load(&a.vocab)?;
    let cfg = SampleConfig {
        max_new_tokens: a.max_tokens,
        temperature: a.temperature,
        top_k: a.top_k,
        seed: ctx.seed_or(0),
    };
    println!("{}", generate(&params, &vocab, &a.prompt, &cfg)?);
    Ok(())
}

fn self_test(a: SelfTestArgs) -> anyhow::Result<()> {
    if !a.grad_check {
        bail!("nothing to do; pass --grad-check");
    }
    let mut failed = 0;
    for (precision, tol) in [(Precision::Single, 1e-3), (Precision::Double, 1e-6)] {
        for c in primitive_suite(0, precision)? {
            let ok = c.report.max_rel_error < tol;
            failed += usize::from(!ok);
            println!(
                "{} {:<14} {:?} max_rel_error {:.3e}",
                if ok { "pass" } else { "FAIL" },
                c.name,
                precision,
                c.report.max_rel_error
            );
        }
    }
    if failed > 0 {
        return Err(CheckFailed(failed).into());
    }
    Ok(())
}

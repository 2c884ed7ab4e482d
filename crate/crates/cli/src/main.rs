//! `bt`: command-line driver for back-translation experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bt_core::augment::{back_translate, filter_copies, AugmentManifest, AugmentedDataset};
use bt_core::corpus::io::{
    read_lines, read_mono, read_parallel_tsv, write_atomic, write_mono, write_parallel_tsv,
};
use bt_core::corpus::{dedup, filter_pairs, learn_bpe, tokenize, BpeModel, FilterConfig};
use bt_core::decode::Method;
use bt_core::eval::bleu;
use bt_core::experiment::{load_data, train_direction, translate, ExperimentConfig, Runner};
use bt_core::lm::{perplexity, train_lm, LmConfig, NgramLm};
use bt_core::model::TranslationModel;
use bt_core::toy::{generate_toy, write_toy, ToyConfig};
use bt_core::{Error, Granularity, MonoCorpus, ParallelCorpus, Sentence, SentencePair};

#[derive(Parser)]
#[command(name = "bt", version, about = "Back-translation toolkit")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize raw text, filter by length and ratio, drop duplicates.
    Prep(PrepArgs),
    /// Learn joint BPE merges from tokenized files.
    LearnBpe(LearnBpeArgs),
    /// Train a model on the configured bitext.
    Train(TrainArgs),
    /// Generate synthetic sources for monolingual target text.
    Backtranslate(BacktranslateArgs),
    /// Combine bitext and synthetic pairs into one training set.
    Augment(AugmentArgs),
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu(BleuArgs),
    /// Train an n-gram LM and optionally report perplexity.
    Lm(LmArgs),
    /// Richness and loss analyses; writes richness.csv and loss.csv.
    Analyze,
    /// Runs the configured grid; writes bleu.csv.
    Sweep,
    /// Writes the synthetic toy language pair.
    MakeToy(MakeToyArgs),
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Input is one sentence per line rather than source<TAB>target.
    #[arg(long)]
    mono: bool,
}

#[derive(Args)]
struct LearnBpeArgs {
    /// Tokenized TSV or text files; every tab-separated column is used.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    ops: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Reverse,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "forward")]
    direction: Direction,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BacktranslateArgs {
    /// Reverse (target-to-source) model.
    #[arg(long)]
    model: PathBuf,
    /// Defaults to `gen.method` from the config.
    #[arg(long)]
    method: Option<Method>,
    /// Monolingual target text; defaults to `paths.mono`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Only the first N sentences.
    #[arg(long)]
    amount: Option<usize>,
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Output of `backtranslate`.
    #[arg(long)]
    synthetic: PathBuf,
    /// Defaults to the configured bitext after filtering.
    #[arg(long)]
    bitext: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "beam")]
    method: Method,
    #[arg(long)]
    bpe: Option<PathBuf>,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Also print n-gram precisions and the brevity penalty.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct LmArgs {
    /// Training text, one sentence per line.
    #[arg(long, conflicts_with = "model")]
    input: Option<PathBuf>,
    /// Load a saved LM instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    order: usize,
    #[arg(long, default_value_t = 0.75)]
    discount: f64,
    #[arg(long, default_value_t = 2)]
    min_count: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Text to compute perplexity on.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct MakeToyArgs {
    #[arg(long, default_value_t = 10_000)]
    bitext: usize,
    #[arg(long, default_value_t = 50_000)]
    mono: usize,
    #[arg(long, default_value_t = 500)]
    valid: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
}

/// Bad invocation that clap cannot see, such as a missing `--config`.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_)) => 1,
        Some(
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Empty(_)
            | Error::InvalidToken { .. }
            | Error::Version { .. },
        ) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Usage("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("[bt] {msg}");
}

fn stage_manifest(output: &Path, cfg: Option<&ExperimentConfig>, extra: serde_json::Value) -> anyhow::Result<()> {
    let mut m = serde_json::json!({
        "output": output.file_name().and_then(|n| n.to_str()).unwrap_or_default(),
    });
    if let Some(cfg) = cfg {
        m["config_hash"] = cfg.hash().into();
        m["seeds"] = serde_json::to_value(cfg.seeds())?;
    }
    if let serde_json::Value::Object(extra) = extra {
        m.as_object_mut().expect("object").extend(extra);
    }
    let mut path = output.as_os_str().to_owned();
    path.push(".manifest.json");
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    write_atomic(Path::new(&path), &text)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Prep(a) => prep(cli, a),
        Command::LearnBpe(a) => {
            let mut sentences = Vec::new();
            for f in &a.input {
                for line in read_lines(f)? {
                    for col in line.split('\t') {
                        sentences.push(Sentence::from_whitespace(col, Granularity::Word));
                    }
                }
            }
            let model = learn_bpe(&sentences, a.ops);
            model.save(&a.output)?;
            log(&format!("learned {} merges", model.num_ops()));
            Ok(())
        }
        Command::Train(a) => train(cli, a),
        Command::Backtranslate(a) => backtranslate_cmd(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::Translate(a) => {
            let model = TranslationModel::load(&a.model)?;
            let bpe = a.bpe.as_deref().map(BpeModel::load).transpose()?;
            let src = read_mono(&a.input, "src", Granularity::Word)?;
            let mut gen = match cli.config {
                Some(_) => config(cli)?.eval_generation(),
                None => Default::default(),
            };
            gen.method = a.method;
            if let Some(s) = cli.seed {
                gen.seed = s;
            }
            let out = translate(&model, &src.items, &gen, bpe.as_ref())?;
            write_mono(&a.output, &MonoCorpus::mono("hyp", out))?;
            Ok(())
        }
        Command::Bleu(a) => {
            let hyp = read_mono(&a.hyp, "hyp", Granularity::Word)?;
            let refs = read_mono(&a.reference, "ref", Granularity::Word)?;
            let r = bleu(&hyp.items, &refs.items)?;
            println!("{}", r.score_line());
            if a.verbose {
                let p = r.precisions;
                println!(
                    "p1={:.4} p2={:.4} p3={:.4} p4={:.4} bp={:.6} hyp_len={} ref_len={}",
                    p[0], p[1], p[2], p[3], r.brevity_penalty, r.hyp_len, r.ref_len
                );
            }
            Ok(())
        }
        Command::Lm(a) => lm(a),
        Command::Analyze => {
            let cfg = config(cli)?;
            let data = load_data(&cfg)?;
            let mut runner = Runner::new(&cfg, &data, &cli.out_dir);
            runner.log = Box::new(log);
            let (rich, loss) = runner.analyze()?;
            for r in &rich.rows {
                println!("{}\t{:.2}", r.method, r.perplexity);
            }
            log(&format!("{} loss rows in loss.csv", loss.rows.len()));
            Ok(())
        }
        Command::Sweep => {
            let cfg = config(cli)?;
            let data = load_data(&cfg)?;
            let mut runner = Runner::new(&cfg, &data, &cli.out_dir);
            runner.log = Box::new(log);
            let out = runner.sweep()?;
            for row in out.rows() {
                println!("{}\t{}\t{}", row.config_id, row.test_set, row.report.score_line());
            }
            log(&format!(
                "{} cells, {} reused, {} failed",
                out.results.len(),
                out.reused,
                out.failures.len()
            ));
            Ok(())
        }
        Command::MakeToy(a) => {
            let toy = ToyConfig {
                seed: cli.seed.unwrap_or(1),
                bitext: a.bitext,
                mono: a.mono,
                valid: a.valid,
                test: a.test,
                ..Default::default()
            };
            write_toy(&generate_toy(&toy), &cli.out_dir)?;
            log(&format!("wrote toy task to {}", cli.out_dir.display()));
            Ok(())
        }
    }
}

fn prep(cli: &Cli, a: &PrepArgs) -> anyhow::Result<()> {
    let lines = read_lines(&a.input)?;
    if a.mono {
        let corpus = MonoCorpus::mono("text", lines.iter().map(|l| tokenize(l)).filter(|s| !s.is_empty()).collect());
        let kept = dedup(&corpus);
        write_mono(&a.output, &kept)?;
        log(&format!("{} of {} lines kept", kept.len(), lines.len()));
        return Ok(());
    }
    let filter = match cli.config {
        Some(_) => config(cli)?.filter,
        None => FilterConfig::default(),
    };
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse {
                path: a.input.display().to_string(),
                line: i + 1,
                message: "expected source<TAB>target".into(),
            })?;
        let tgt = tgt.split('\t').next().unwrap_or_default();
        pairs.push(SentencePair {
            source: tokenize(src),
            target: tokenize(tgt),
        });
    }
    let raw = ParallelCorpus::parallel("src", "tgt", pairs);
    let kept = dedup(&filter_pairs(&raw, &filter)?);
    write_parallel_tsv(&a.output, &kept, None)?;
    log(&format!("{} of {} pairs kept", kept.len(), raw.len()));
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = config(cli)?;
    let data = load_data(&cfg)?;
    let (pairs, valid): (Vec<SentencePair>, Vec<SentencePair>) = match a.direction {
        Direction::Forward => (data.bitext.items.clone(), data.valid.items.clone()),
        Direction::Reverse => (
            data.bitext.iter().map(SentencePair::swapped).collect(),
            data.valid.iter().map(SentencePair::swapped).collect(),
        ),
    };
    let trained = train_direction(&pairs, &vec![1; pairs.len()], &valid, &cfg.model, data.bpe.as_ref())?;
    trained.model.save(&a.output)?;
    if let Some(bpe) = &data.bpe {
        bpe.save(&sibling(&a.output, ".bpe"))?;
    }
    log(&format!(
        "{} EM iterations, held-out cross-entropy {:.4}",
        trained.iterations,
        trained.heldout_ce.last().copied().unwrap_or(f64::NAN)
    ));
    stage_manifest(
        &a.output,
        Some(&cfg),
        serde_json::json!({
            "direction": match a.direction { Direction::Forward => "forward", Direction::Reverse => "reverse" },
            "pairs": pairs.len(),
            "em_iterations": trained.iterations,
            "heldout_ce": trained.heldout_ce,
        }),
    )
}

fn backtranslate_cmd(cli: &Cli, a: &BacktranslateArgs) -> anyhow::Result<()> {
    let cfg = config(cli)?;
    let method = a.method.unwrap_or(cfg.gen.method);
    let model = TranslationModel::load(&a.model)?;
    let bpe = a.bpe.as_deref().map(BpeModel::load).transpose()?;
    let input = a.input.clone().unwrap_or_else(|| cfg.paths.mono.clone());
    let mut mono = read_mono(&input, "tgt", Granularity::Word)?;
    if let Some(n) = a.amount {
        mono = mono.prefix(n);
    }
    let gen = cfg.generation(method);
    let noise = (method == Method::BeamNoise).then(|| cfg.noise_config());
    let start = Instant::now();
    let bt = back_translate(&model, &mono, &gen, noise.as_ref(), bpe.as_ref())?;
    write_parallel_tsv(&a.output, &bt.corpus, Some(method.name()))?;
    log(&format!(
        "{} pairs, {} failed, {} unfinished in {:.1}s",
        bt.corpus.len(),
        bt.dropped.len(),
        bt.unfinished,
        start.elapsed().as_secs_f64()
    ));
    stage_manifest(
        &a.output,
        Some(&cfg),
        serde_json::json!({
            "method": method.name(),
            "generation": gen,
            "noise": noise,
            "input_sentences": mono.len(),
            "synthetic_pairs": bt.corpus.len(),
            "failed": bt.dropped,
            "unfinished": bt.unfinished,
        }),
    )
}

fn augment(cli: &Cli, a: &AugmentArgs) -> anyhow::Result<()> {
    let cfg = config(cli)?;
    let bitext = match &a.bitext {
        Some(p) => read_parallel_tsv(p, ("src", "tgt"), Granularity::Word)?,
        None => load_data(&cfg)?.bitext,
    };
    let synthetic_raw = read_parallel_tsv(&a.synthetic, ("synthetic", "tgt"), Granularity::Word)?;
    let tags: Vec<String> = read_lines(&a.synthetic)?
        .iter()
        .filter_map(|l| l.split('\t').nth(2).map(str::to_string))
        .collect();
    let method = match tags.first() {
        Some(t) if tags.iter().all(|x| x == t) => t.clone(),
        Some(_) => bail!("{}: mixed method tags", a.synthetic.display()),
        None => "unknown".to_string(),
    };
    let mut synthetic = synthetic_raw;
    let mut copy_rate = 0.0;
    if cfg.copy_filter.enabled {
        let f = filter_copies(&synthetic, cfg.copy_filter.threshold)?;
        copy_rate = f.copy_rate;
        log(&format!("copy rate {}", f.rate_line()));
        if cfg.copy_filter.drop {
            synthetic = f.kept;
        }
    }
    let ds = AugmentedDataset::new(bitext, synthetic, a.rate)?;
    let (wb, ws) = ds.epoch_weights(cfg.seed_for("upsample"));
    let mut text = String::new();
    for (pool, items, weights) in [("bitext", &ds.bitext, &wb), ("synthetic", &ds.synthetic, &ws)] {
        for (p, w) in items.iter().zip(weights.iter()) {
            text.push_str(&format!("{}\t{}\t{pool}\t{w}\n", p.source.to_line(), p.target.to_line()));
        }
    }
    write_atomic(&a.output, &text)?;
    let manifest = AugmentManifest {
        method,
        bitext_pairs: ds.bitext.len(),
        synthetic_pairs: ds.synthetic.len(),
        upsample_rate: a.rate,
        copy_rate,
        copies_dropped: cfg.copy_filter.enabled && cfg.copy_filter.drop,
        failed: 0,
        unfinished: 0,
    };
    stage_manifest(
        &a.output,
        Some(&cfg),
        serde_json::json!({ "augment": manifest, "bitext_fraction": ds.bitext_fraction() }),
    )
}

fn lm(a: &LmArgs) -> anyhow::Result<()> {
    let model = match (&a.input, &a.model) {
        (_, Some(m)) => NgramLm::load(m)?,
        (Some(input), None) => {
            let corpus = read_mono(input, "text", Granularity::Word)?;
            let cfg = LmConfig {
                order: a.order,
                discount: a.discount,
                min_count: a.min_count,
            };
            train_lm(&corpus.items, &cfg)?
        }
        (None, None) => return Err(anyhow!(Usage("lm needs --input or --model".into()))),
    };
    if let Some(out) = &a.output {
        model.save(out).context("saving LM")?;
    }
    if let Some(eval) = &a.eval {
        let corpus = read_mono(eval, "text", Granularity::Word)?;
        println!("{:.4}", perplexity(&model, &corpus.items)?);
    }
    Ok(())
}

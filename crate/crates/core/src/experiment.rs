//! Configured runs: loading and preparing data, the generation-method sweep and the two
//! training-data analyses. Every report is a deterministic function of the config and its
//! input files. Sweep cells are cached under `cells/` in the output directory and skipped
//! when already complete, and back-translations are cached under `cache/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{back_translate, filter_copies, AugmentedDataset};
use crate::corpus::io::{read_mono, read_parallel_tsv, write_atomic, write_parallel_tsv};
use crate::corpus::{
    apply_bpe, dedup, filter_pairs, learn_bpe, reverse_bpe, subsample, BpeModel, FilterConfig,
    Granularity, MonoCorpus, ParallelCorpus, Sentence, SentencePair,
};
use crate::decode::{generate_batch, GenerationConfig, Method};
use crate::error::{Error, Result};
use crate::eval::{
    bleu, loss_analysis, richness_analysis, write_bleu_csv, write_loss_csv, write_richness_csv,
    BleuReport, BleuRow, LossReport, RichnessConfig, RichnessReport,
};
use crate::lm::LmConfig;
use crate::model::{train_checkpoints, train_until_converged, ModelConfig, TranslationModel};
use crate::noise::NoiseConfig;
use crate::rng::component_seed;

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Tokenized `source<TAB>target` bitext.
    pub bitext: PathBuf,
    /// Tokenized target-language sentences, one per line.
    pub mono: PathBuf,
    /// Held-out pairs for convergence checks.
    pub valid: PathBuf,
    /// Test sets; each is reported under its file stem.
    #[serde(default)]
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopyFilterConfig {
    pub enabled: bool,
    pub threshold: f64,
    /// Drop flagged pairs; otherwise they are kept and only counted.
    pub drop: bool,
}

impl Default for CopyFilterConfig {
    fn default() -> Self {
        CopyFilterConfig {
            enabled: false,
            threshold: 0.5,
            drop: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Reverse-model / LM / back-translated shares of the bitext for the richness analysis.
    pub richness_fractions: [f64; 3],
    pub richness_methods: Vec<Method>,
    pub lm: LmConfig,
    /// Pairs per pool in the loss analysis.
    pub loss_sample: usize,
    pub loss_methods: Vec<Method>,
    pub loss_epochs: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            richness_fractions: [0.123, 0.790, 0.087],
            richness_methods: vec![Method::Beam, Method::TopK, Method::Sampling, Method::BeamNoise],
            lm: LmConfig::default(),
            loss_sample: 5000,
            loss_methods: Method::ALL.to_vec(),
            loss_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Joint BPE merge operations; 0 trains and decodes on words.
    #[serde(default)]
    pub bpe_ops: usize,
    #[serde(default)]
    pub model: ModelConfig,
    /// Back-translation settings; `method` is replaced by each swept method.
    #[serde(default)]
    pub gen: GenerationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Bitext prefix sizes; empty means the whole bitext.
    #[serde(default)]
    pub bitext_sizes: Vec<usize>,
    #[serde(default = "default_amounts")]
    pub synthetic_amounts: Vec<usize>,
    #[serde(default = "default_rates")]
    pub upsample_rates: Vec<f64>,
    #[serde(default)]
    pub copy_filter: CopyFilterConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_amounts() -> Vec<usize> {
    vec![0]
}

fn default_rates() -> Vec<f64> {
    vec![1.0]
}

/// Names of the derived component seeds, in manifest order.
pub const SEED_COMPONENTS: [&str; 6] =
    ["bitext-order", "generation", "noise", "upsample", "richness", "loss-sample"];

impl ExperimentConfig {
    /// Parses TOML; unknown keys and type errors are reported with the offending key.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.paths.bitext);
        resolve(&mut cfg.paths.mono);
        resolve(&mut cfg.paths.valid);
        cfg.paths.test.iter_mut().for_each(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.filter.validate()?;
        self.model.validate()?;
        self.gen.validate()?;
        self.noise.validate()?;
        self.analysis.lm.validate()?;
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.synthetic_amounts.is_empty() {
            return bad("synthetic_amounts must not be empty".into());
        }
        if self.upsample_rates.is_empty() {
            return bad("upsample_rates must not be empty".into());
        }
        if let Some(r) = self.upsample_rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return bad(format!("upsample_rates: {r} is not positive"));
        }
        if self.bitext_sizes.contains(&0) {
            return bad("bitext_sizes: sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.copy_filter.threshold) {
            return bad("copy_filter.threshold must be in [0, 1]".into());
        }
        let f = self.analysis.richness_fractions;
        if f.iter().any(|x| !(*x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("analysis.richness_fractions must be positive and sum to 1".into());
        }
        if self.analysis.loss_epochs < 1 {
            return bad("analysis.loss_epochs must be >= 1".into());
        }
        Ok(())
    }

    /// Seed of a named stochastic component, derived from the top-level seed.
    pub fn seed_for(&self, component: &str) -> u64 {
        component_seed(self.seed, component)
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        SEED_COMPONENTS
            .iter()
            .map(|c| (c.to_string(), self.seed_for(c)))
            .collect()
    }

    /// Generation config for `method` with the derived seed.
    pub fn generation(&self, method: Method) -> GenerationConfig {
        GenerationConfig {
            method,
            seed: self.seed_for("generation"),
            ..self.gen.clone()
        }
    }

    /// Noise config with the derived seed.
    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            seed: self.seed_for("noise"),
            ..self.noise.clone()
        }
    }

    /// Decoding settings for evaluation: beam search with the configured width.
    pub fn eval_generation(&self) -> GenerationConfig {
        self.generation(Method::Beam)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex(&Sha256::digest(&json))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Word-level corpora of one experiment, plus the joint BPE model when `bpe_ops > 0`.
#[derive(Debug, Clone)]
pub struct Data {
    /// Bitext after length/ratio filtering and deduplication.
    pub bitext: ParallelCorpus,
    pub mono: MonoCorpus,
    pub valid: ParallelCorpus,
    pub tests: Vec<(String, ParallelCorpus)>,
    pub bpe: Option<BpeModel>,
    /// Hash over all input files, part of every cache key.
    pub fingerprint: String,
    pub raw_bitext_len: usize,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let labels = ("src", "tgt");
    let raw = read_parallel_tsv(&cfg.paths.bitext, labels, Granularity::Word)?;
    let raw_bitext_len = raw.len();
    let bitext = dedup(&filter_pairs(&raw, &cfg.filter)?);
    if bitext.is_empty() {
        return Err(Error::Empty("bitext after filtering"));
    }
    let mono = read_mono(&cfg.paths.mono, labels.1, Granularity::Word)?;
    let valid = read_parallel_tsv(&cfg.paths.valid, labels, Granularity::Word)?;
    if valid.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut tests = Vec::new();
    let mut names = BTreeSet::new();
    for p in &cfg.paths.test {
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("test")
            .to_string();
        if !names.insert(name.clone()) {
            return Err(Error::Config(format!("paths.test: two test sets named {name:?}")));
        }
        tests.push((name, read_parallel_tsv(p, labels, Granularity::Word)?));
    }
    let mut files = vec![&cfg.paths.bitext, &cfg.paths.mono, &cfg.paths.valid];
    files.extend(&cfg.paths.test);
    let mut fp = Vec::new();
    for f in files {
        fp.push(hash_file(f)?);
    }
    let bpe = (cfg.bpe_ops > 0).then(|| learn_bpe(bitext.sentences(), cfg.bpe_ops));
    Ok(Data {
        bitext,
        mono,
        valid,
        tests,
        bpe,
        fingerprint: hash_json(&fp),
        raw_bitext_len,
    })
}

fn segment(bpe: Option<&BpeModel>, s: &Sentence) -> Sentence {
    match bpe {
        Some(b) => apply_bpe(b, s),
        None => s.clone(),
    }
}

fn segment_pairs(bpe: Option<&BpeModel>, pairs: &[SentencePair]) -> Vec<SentencePair> {
    pairs
        .iter()
        .map(|p| SentencePair {
            source: segment(bpe, &p.source),
            target: segment(bpe, &p.target),
        })
        .collect()
}

/// Decodes `sources` and returns word-level outputs.
pub fn translate(
    model: &TranslationModel,
    sources: &[Sentence],
    gen: &GenerationConfig,
    bpe: Option<&BpeModel>,
) -> Result<Vec<Sentence>> {
    let inputs: Vec<Sentence> = sources.iter().map(|s| segment(bpe, s)).collect();
    let hyps = generate_batch(model, &inputs, gen)?;
    Ok(hyps
        .iter()
        .map(|h| {
            let out = model.decode_target(&h.tokens);
            if bpe.is_some() {
                reverse_bpe(&Sentence::from_parts_unchecked(
                    out.into_tokens(),
                    Granularity::Subword,
                ))
                .0
            } else {
                out
            }
        })
        .collect())
}

/// BLEU of `model` on a word-level test set.
pub fn evaluate(
    model: &TranslationModel,
    test: &ParallelCorpus,
    gen: &GenerationConfig,
    bpe: Option<&BpeModel>,
) -> Result<BleuReport> {
    let src: Vec<Sentence> = test.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Sentence> = test.iter().map(|p| p.target.clone()).collect();
    bleu(&translate(model, &src, gen, bpe)?, &refs)
}

/// Trains a model on `pairs` (word level) until held-out convergence on `valid`.
pub fn train_direction(
    pairs: &[SentencePair],
    weights: &[u64],
    valid: &[SentencePair],
    cfg: &ModelConfig,
    bpe: Option<&BpeModel>,
) -> Result<crate::model::ConvergedModel> {
    let seg = segment_pairs(bpe, pairs);
    let weighted: Vec<(&SentencePair, u64)> = seg
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0)
        .map(|(p, &w)| (p, w))
        .collect();
    if weighted.is_empty() {
        return Err(Error::Empty("training data"));
    }
    train_until_converged(&weighted, &segment_pairs(bpe, valid), cfg)
}

/// Output of one back-translation run, as cached on disk.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: ParallelCorpus,
    /// Index into the monolingual corpus of every synthetic pair.
    pub origin: Vec<usize>,
    pub failed: usize,
    pub unfinished: usize,
}

#[derive(Serialize, Deserialize)]
struct SyntheticMeta {
    origin: Vec<usize>,
    failed: usize,
    unfinished: usize,
}

/// Shared state for stages that need reverse models and back-translations.
pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub data: &'a Data,
    pub out_dir: PathBuf,
    /// Order in which bitext pairs enter the prefixes of the low-resource sweep.
    order: Vec<usize>,
    reverse: BTreeMap<usize, TranslationModel>,
    pub log: Box<dyn Fn(&str) + 'a>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a Data, out_dir: &Path) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..data.bitext.len()).collect();
        order.shuffle(&mut crate::rng::seeded(cfg.seed_for("bitext-order")));
        Runner {
            cfg,
            data,
            out_dir: out_dir.to_path_buf(),
            order,
            reverse: BTreeMap::new(),
            log: Box::new(|_| {}),
        }
    }

    /// The bitext sizes swept, in config order, capped at the bitext size.
    pub fn sizes(&self) -> Vec<usize> {
        let full = self.data.bitext.len();
        if self.cfg.bitext_sizes.is_empty() {
            return vec![full];
        }
        let mut sizes = Vec::new();
        for n in self.cfg.bitext_sizes.iter().map(|&n| n.min(full)) {
            if !sizes.contains(&n) {
                sizes.push(n);
            }
        }
        sizes
    }

    /// First `n` pairs of the shuffled bitext; the full bitext keeps its file order.
    pub fn bitext(&self, n: usize) -> Vec<SentencePair> {
        if n >= self.data.bitext.len() {
            return self.data.bitext.items.clone();
        }
        let mut idx = self.order[..n].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.data.bitext.items[i].clone()).collect()
    }

    fn key<T: Serialize>(&self, what: &str, extra: &T) -> String {
        #[derive(Serialize)]
        struct Key<'k, T> {
            what: &'k str,
            data: &'k str,
            seed: u64,
            filter: &'k FilterConfig,
            bpe_ops: usize,
            model: &'k ModelConfig,
            extra: &'k T,
        }
        hash_json(&Key {
            what,
            data: &self.data.fingerprint,
            seed: self.cfg.seed,
            filter: &self.cfg.filter,
            bpe_ops: self.cfg.bpe_ops,
            model: &self.cfg.model,
            extra,
        })[..16]
            .to_string()
    }

    /// Target-to-source model trained on the first `n` bitext pairs.
    pub fn reverse_model(&mut self, n: usize) -> Result<&TranslationModel> {
        if !self.reverse.contains_key(&n) {
            (self.log)(&format!("training reverse model on {n} pairs"));
            let pairs: Vec<SentencePair> = self.bitext(n).iter().map(SentencePair::swapped).collect();
            let valid: Vec<SentencePair> = self.data.valid.iter().map(SentencePair::swapped).collect();
            let m = train_direction(
                &pairs,
                &vec![1; pairs.len()],
                &valid,
                &self.cfg.model,
                self.data.bpe.as_ref(),
            )?;
            self.reverse.insert(n, m.model);
        }
        Ok(&self.reverse[&n])
    }

    /// Held-out BLEU of the reverse model for bitext size `n`, cached.
    pub fn reverse_bleu(&mut self, n: usize) -> Result<BleuReport> {
        let path = self.out_dir.join("cache").join(format!("reverse-{}.json", self.key("reverse-bleu", &n)));
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(r) = serde_json::from_str(&text) {
                return Ok(r);
            }
        }
        let gen = self.cfg.eval_generation();
        let bpe = self.data.bpe.clone();
        let valid = self.data.valid.swapped();
        let report = evaluate(self.reverse_model(n)?, &valid, &gen, bpe.as_ref())?;
        write_atomic(&path, &serde_json::to_string(&report).expect("report serializes"))?;
        Ok(report)
    }

    /// Back-translation of the first `amount` monolingual sentences with the reverse model
    /// of bitext size `n`, cached on disk.
    pub fn synthetic(&mut self, n: usize, method: Method, amount: usize) -> Result<Synthetic> {
        let amount = amount.min(self.data.mono.len());
        let gen = self.cfg.generation(method);
        let noise = (method == Method::BeamNoise).then(|| self.cfg.noise_config());
        let key = self.key("synthetic", &(n, &gen, &noise, amount));
        let dir = self.out_dir.join("cache");
        let tsv = dir.join(format!("bt-{}-{key}.tsv", method.name()));
        let meta = dir.join(format!("bt-{}-{key}.json", method.name()));
        if let (Ok(corpus), Ok(text)) = (
            read_parallel_tsv(&tsv, ("synthetic", "tgt"), Granularity::Word),
            fs::read_to_string(&meta),
        ) {
            if let Ok(m) = serde_json::from_str::<SyntheticMeta>(&text) {
                if m.origin.len() == corpus.len() {
                    return Ok(Synthetic {
                        corpus,
                        origin: m.origin,
                        failed: m.failed,
                        unfinished: m.unfinished,
                    });
                }
            }
        }
        let mono = self.data.mono.prefix(amount);
        let bpe = self.data.bpe.clone();
        (self.log)(&format!("back-translating {amount} sentences with {method} (bitext {n})"));
        let reverse = self.reverse_model(n)?;
        let bt = back_translate(reverse, &mono, &gen, noise.as_ref(), bpe.as_ref())?;
        let dropped: BTreeSet<usize> = bt.dropped.iter().copied().collect();
        let origin: Vec<usize> = (0..mono.len()).filter(|i| !dropped.contains(i)).collect();
        write_parallel_tsv(&tsv, &bt.corpus, Some(method.name()))?;
        let m = SyntheticMeta {
            origin,
            failed: bt.dropped.len(),
            unfinished: bt.unfinished,
        };
        write_atomic(&meta, &serde_json::to_string(&m).expect("meta serializes"))?;
        Ok(Synthetic {
            corpus: bt.corpus,
            origin: m.origin,
            failed: m.failed,
            unfinished: m.unfinished,
        })
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub bitext_size: usize,
    pub method: Method,
    pub synthetic_amount: usize,
    pub upsample_rate: f64,
}

impl GridCell {
    /// Readable identifier used as `config_id` in reports.
    pub fn id(&self) -> String {
        format!(
            "n{}-{}-s{}-r{}",
            self.bitext_size,
            self.method.name(),
            self.synthetic_amount,
            self.upsample_rate
        )
    }

    /// The method that actually matters: none without synthetic data, so bitext-only cells
    /// of different methods share one trained model.
    pub fn effective_method(&self) -> Option<Method> {
        (self.synthetic_amount > 0).then_some(self.method)
    }

    fn training_id(&self) -> String {
        format!(
            "n{}-{}-s{}-r{}",
            self.bitext_size,
            self.effective_method().map_or("bitext", Method::name),
            self.synthetic_amount,
            self.upsample_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTest {
    pub test_set: String,
    pub report: BleuReport,
}

/// One row of the grid with the record of the model behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config_id: String,
    pub cell: GridCell,
    #[serde(flatten)]
    pub record: CellRecord,
}

/// Everything recorded for a trained cell, as stored in its directory. Bitext-only rows of
/// different methods share one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub training_id: String,
    pub seeds: BTreeMap<String, u64>,
    pub bitext_pairs: usize,
    pub synthetic_pairs: usize,
    pub failed: usize,
    pub unfinished: usize,
    pub copy_rate: f64,
    pub em_iterations: usize,
    pub heldout_ce: Vec<f64>,
    pub tests: Vec<CellTest>,
}

/// Grid in report order: bitext size (as configured), method, amount, rate.
pub fn sweep_cells(cfg: &ExperimentConfig, sizes: &[usize]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &n in sizes {
        for &method in &cfg.methods {
            for &amount in &cfg.synthetic_amounts {
                for &rate in &cfg.upsample_rates {
                    cells.push(GridCell {
                        bitext_size: n,
                        method,
                        synthetic_amount: amount,
                        upsample_rate: rate,
                    });
                }
            }
        }
    }
    cells
}

/// Identifier of a sweep that was run, with where its reports went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub sizes: BTreeMap<String, usize>,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, &text)
    }
}

/// Outcome of [`Runner::sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub results: Vec<CellResult>,
    pub failures: Vec<(String, String)>,
    /// Cells loaded from a previous run instead of recomputed.
    pub reused: usize,
    pub reverse: Vec<(usize, BleuReport)>,
}

impl SweepOutcome {
    /// One row per cell and test set, in grid order.
    pub fn rows(&self) -> Vec<BleuRow> {
        self.results
            .iter()
            .flat_map(|c| {
                c.record.tests.iter().map(move |t| BleuRow {
                    config_id: c.config_id.clone(),
                    test_set: t.test_set.clone(),
                    report: t.report.clone(),
                })
            })
            .collect()
    }
}

impl Runner<'_> {
    fn cell_dir(&self, cell: &GridCell) -> PathBuf {
        let method = cell.effective_method();
        let key = self.key(
            "cell",
            &(
                cell.bitext_size,
                cell.synthetic_amount,
                cell.upsample_rate,
                &self.cfg.eval_generation(),
                method.map(|m| self.cfg.generation(m)),
                (method == Some(Method::BeamNoise)).then(|| self.cfg.noise_config()),
                method.map(|_| &self.cfg.copy_filter),
            ),
        );
        self.out_dir.join("cells").join(format!("{}-{key}", cell.training_id()))
    }

    fn run_cell(&mut self, cell: &GridCell) -> Result<CellRecord> {
        let bitext = self.bitext(cell.bitext_size);
        let (synthetic, failed, unfinished, copy_rate) = match cell.effective_method() {
            None => (Vec::new(), 0, 0, 0.0),
            Some(m) => {
                let bt = self.synthetic(cell.bitext_size, m, cell.synthetic_amount)?;
                let mut pairs = bt.corpus;
                let mut rate = 0.0;
                if self.cfg.copy_filter.enabled {
                    let f = filter_copies(&pairs, self.cfg.copy_filter.threshold)?;
                    rate = f.copy_rate;
                    if self.cfg.copy_filter.drop {
                        pairs = f.kept;
                    }
                }
                (pairs.items, bt.failed, bt.unfinished, rate)
            }
        };
        let ds = AugmentedDataset::new(
            ParallelCorpus::parallel("src", "tgt", bitext),
            ParallelCorpus::parallel("synthetic", "tgt", synthetic),
            cell.upsample_rate,
        )?;
        let (wb, ws) = ds.epoch_weights(self.cfg.seed_for("upsample"));
        let pairs: Vec<SentencePair> = ds.bitext.items.iter().chain(&ds.synthetic.items).cloned().collect();
        let weights: Vec<u64> = wb.into_iter().chain(ws).collect();
        (self.log)(&format!("training {}", cell.training_id()));
        let bpe = self.data.bpe.as_ref();
        let trained = train_direction(&pairs, &weights, &self.data.valid.items, &self.cfg.model, bpe)?;
        let gen = self.cfg.eval_generation();
        let mut tests = Vec::new();
        for (name, test) in &self.data.tests {
            tests.push(CellTest {
                test_set: name.clone(),
                report: evaluate(&trained.model, test, &gen, bpe)?,
            });
        }
        Ok(CellRecord {
            training_id: cell.training_id(),
            seeds: self.cfg.seeds(),
            bitext_pairs: ds.bitext.len(),
            synthetic_pairs: ds.synthetic.len(),
            failed,
            unfinished,
            copy_rate,
            em_iterations: trained.iterations,
            heldout_ce: trained.heldout_ce,
            tests,
        })
    }

    /// Runs (or reloads) every cell of the grid, then writes `bleu.csv`,
    /// `reverse_bleu.csv`, `failures.csv` and `sweep_manifest.json`.
    pub fn sweep(&mut self) -> Result<SweepOutcome> {
        let start = Instant::now();
        let sizes = self.sizes();
        let cells = sweep_cells(self.cfg, &sizes);
        let mut results = Vec::new();
        let mut failures = Vec::new();
        let mut reused = 0;
        let mut done: BTreeMap<String, CellRecord> = BTreeMap::new();
        let mut failed: BTreeMap<String, String> = BTreeMap::new();
        for cell in &cells {
            let tid = cell.training_id();
            let as_row = |r: &CellRecord| CellResult {
                config_id: cell.id(),
                cell: cell.clone(),
                record: r.clone(),
            };
            if let Some(r) = done.get(&tid) {
                results.push(as_row(r));
                continue;
            }
            if let Some(e) = failed.get(&tid) {
                failures.push((cell.id(), e.clone()));
                continue;
            }
            let dir = self.cell_dir(cell);
            let cached = fs::read_to_string(dir.join("result.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<CellRecord>(&t).ok());
            let r = match cached {
                Some(r) => {
                    reused += 1;
                    r
                }
                None => match self.run_cell(cell) {
                    Ok(r) => {
                        write_cell(&dir, &r)?;
                        r
                    }
                    Err(e) => {
                        (self.log)(&format!("cell {} failed: {e}", cell.id()));
                        failures.push((cell.id(), e.to_string()));
                        failed.insert(tid, e.to_string());
                        continue;
                    }
                },
            };
            results.push(as_row(&r));
            done.insert(tid, r);
        }
        let mut reverse = Vec::new();
        for &n in &sizes {
            reverse.push((n, self.reverse_bleu(n)?));
        }

        let outcome = SweepOutcome {
            results,
            failures,
            reused,
            reverse,
        };
        write_bleu_csv(&self.out_dir.join("bleu.csv"), &outcome.rows())?;
        let reverse_rows: Vec<BleuRow> = outcome
            .reverse
            .iter()
            .map(|(n, r)| BleuRow {
                config_id: format!("reverse-n{n}"),
                test_set: "valid".to_string(),
                report: r.clone(),
            })
            .collect();
        write_bleu_csv(&self.out_dir.join("reverse_bleu.csv"), &reverse_rows)?;
        let mut failures_csv = String::from("config_id,error\n");
        for (id, e) in &outcome.failures {
            failures_csv.push_str(&format!("{id},\"{}\"\n", e.replace('"', "'")));
        }
        write_atomic(&self.out_dir.join("failures.csv"), &failures_csv)?;
        self.manifest(
            start,
            &["bleu.csv", "reverse_bleu.csv", "failures.csv"],
            "sweep_manifest.json",
        )?;
        Ok(outcome)
    }

    fn manifest(&self, start: Instant, outputs: &[&str], name: &str) -> Result<()> {
        let mut sizes = BTreeMap::new();
        sizes.insert("bitext_raw".to_string(), self.data.raw_bitext_len);
        sizes.insert("bitext".to_string(), self.data.bitext.len());
        sizes.insert("mono".to_string(), self.data.mono.len());
        sizes.insert("valid".to_string(), self.data.valid.len());
        for (n, t) in &self.data.tests {
            sizes.insert(format!("test:{n}"), t.len());
        }
        RunManifest {
            config_hash: self.cfg.hash(),
            seeds: self.cfg.seeds(),
            sizes,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
        .write(&self.out_dir.join(name))
    }

    /// Richness analysis on the (word-level) bitext; writes `richness.csv`.
    pub fn richness(&self) -> Result<RichnessReport> {
        let f = self.cfg.analysis.richness_fractions;
        let rc = RichnessConfig {
            fractions: (f[0], f[1], f[2]),
            generation: self
                .cfg
                .analysis
                .richness_methods
                .iter()
                .map(|&m| self.cfg.generation(m))
                .collect(),
            noise: self.cfg.noise_config(),
            lm: self.cfg.analysis.lm.clone(),
            model: self.cfg.model.clone(),
            seed: self.cfg.seed_for("richness"),
        };
        (self.log)("richness analysis");
        let report = richness_analysis(&self.data.bitext, &rc)?;
        write_richness_csv(&self.out_dir.join("richness.csv"), &report)?;
        Ok(report)
    }

    /// Loss analysis: per method, trains on the full bitext plus all back-translated
    /// monolingual data (no upsampling) and tracks cross-entropy per EM epoch on equal-size
    /// samples of both pools. Synthetic samples share their targets across methods.
    pub fn loss(&mut self) -> Result<LossReport> {
        let methods = self.cfg.analysis.loss_methods.clone();
        let n = self.data.bitext.len();
        let amount = self.data.mono.len();
        let mut synth = Vec::new();
        for &m in &methods {
            synth.push(self.synthetic(n, m, amount)?);
        }
        // Monolingual positions that every method turned into a pair.
        let mut common: BTreeSet<usize> = (0..amount).collect();
        for s in &synth {
            let have: BTreeSet<usize> = s.origin.iter().copied().collect();
            common = common.intersection(&have).copied().collect();
        }
        let size = self.cfg.analysis.loss_sample.min(common.len()).min(n);
        if size == 0 {
            return Err(Error::Empty("loss analysis sample"));
        }
        let seed = self.cfg.seed_for("loss-sample");
        let common: Vec<usize> = common.into_iter().collect();
        let picked = subsample(&crate::corpus::Corpus::new(vec![], common), size, seed)?.items;
        let bitext_sample = subsample(&self.data.bitext, size, seed ^ 1)?.items;
        let bpe = self.data.bpe.clone();
        let bitext_seg = segment_pairs(bpe.as_ref(), &bitext_sample);
        let cfg = ModelConfig {
            em_iterations: self.cfg.analysis.loss_epochs,
            ..self.cfg.model.clone()
        };
        let mut report = LossReport::default();
        for (m, s) in methods.iter().zip(&synth) {
            (self.log)(&format!("loss analysis for {m}"));
            let pos: BTreeMap<usize, usize> = s.origin.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let sample: Vec<SentencePair> = picked.iter().map(|i| s.corpus.items[pos[i]].clone()).collect();
            let train: Vec<SentencePair> = segment_pairs(
                bpe.as_ref(),
                &self.data.bitext.items.iter().chain(&s.corpus.items).cloned().collect::<Vec<_>>(),
            );
            let weighted: Vec<(&SentencePair, u64)> = train.iter().map(|p| (p, 1)).collect();
            let checkpoints = train_checkpoints(&weighted, &cfg)?;
            report.extend(loss_analysis(
                &checkpoints,
                m.name(),
                &segment_pairs(bpe.as_ref(), &sample),
                &bitext_seg,
            )?);
        }
        write_loss_csv(&self.out_dir.join("loss.csv"), &report)?;
        Ok(report)
    }

    /// Both analyses plus a manifest.
    pub fn analyze(&mut self) -> Result<(RichnessReport, LossReport)> {
        let start = Instant::now();
        let r = self.richness()?;
        let l = self.loss()?;
        self.manifest(start, &["richness.csv", "loss.csv"], "analysis_manifest.json")?;
        Ok((r, l))
    }
}

fn write_cell(dir: &Path, r: &CellRecord) -> Result<()> {
    // Build in a private sibling directory and rename it into place.
    let parent = dir.parent().expect("cell dir has a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("cell")
    ));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let rows: Vec<BleuRow> = r
        .tests
        .iter()
        .map(|t| BleuRow {
            config_id: r.training_id.clone(),
            test_set: t.test_set.clone(),
            report: t.report.clone(),
        })
        .collect();
    write_bleu_csv(&tmp.join("bleu.csv"), &rows)?;
    let mut json = serde_json::to_string_pretty(r).expect("cell serializes");
    json.push('\n');
    fs::write(tmp.join("result.json"), json).map_err(|e| Error::io(&tmp, e))?;
    let _ = fs::remove_dir_all(dir);
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

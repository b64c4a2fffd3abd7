//! Experiment orchestration: manifests, per-pair runs, the language-pair
//! grid and its report tables.
//!
//! A manifest is an INI-style text file:
//!
//! ```text
//! [corpora]
//! en = corpora/en.tsv
//! fr = corpora/fr.tsv
//!
//! [inventories]          # optional, per language
//! fr = corpora/fr.inv
//!
//! [experiment]
//! mode = hybrid          # bayes | neural | hybrid | proportional
//! seeds = 1 2
//! pivot = en             # optional length filter language
//! pairs = all            # or e.g. `en:fr fr:en`
//! output = runs
//!
//! [hyperparameters]
//! epochs = 40
//! ```
//!
//! Each language file uses the corpus TSV format. A pair `(s, t)` takes
//! source words from `s` and phonemes with their gold spacing from `t`,
//! joined on utterance id. Relative paths resolve against the manifest's
//! directory.
//!
//! Every run writes into `<output>/<s>-<t>/<mode>-seeds<...>-<hash>/`,
//! where `<hash>` digests the resolved hyperparameters. A directory that
//! holds a `report.tsv` is complete and is never recomputed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::align::{
    attention_segment, average_normalized_entropy, hybrid_segment, proportional_segment_words,
    rank_alignments, ranking_to_tsv, AlignedSegmentation, RankInput,
};
use crate::bayes::{segment_corpus, BayesHyperparams, BayesResult, GibbsConfig};
use crate::corpus::{
    filter_by_length, insert_soft_boundaries, load_corpus, valid_ids, Inventory, ParallelCorpus,
    Segmentation, Side, UtterancePair, DEFAULT_MARKER,
};
use crate::error::{Error, Result};
use crate::metrics::{bleu4, EvalReport};
use crate::neural::{
    average_matrices, save_checkpoint, train_model, Model, ModelConfig, SeqPair,
    SoftAlignmentMatrix, TrainConfig, TrainingLog,
};

/// Environment variable holding the number of pairs run concurrently.
pub const WORKERS_ENV: &str = "WORDSEG_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Bayes,
    Neural,
    Hybrid,
    Proportional,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Bayes, Mode::Neural, Mode::Hybrid, Mode::Proportional];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bayes => "bayes",
            Mode::Neural => "neural",
            Mode::Hybrid => "hybrid",
            Mode::Proportional => "proportional",
        }
    }

    pub fn trains(self) -> bool {
        matches!(self, Mode::Neural | Mode::Hybrid)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown mode `{s}`")))
    }
}

/// Every tunable of a run, with the defaults used when a manifest does not
/// override them.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub model: ModelConfig,
    /// Training settings; the seed is replaced by each run seed.
    pub train: TrainConfig,
    pub alpha0: f64,
    pub p_hash: f64,
    pub sweeps: usize,
    pub bayes_seed: u64,
    pub valid_fraction: f64,
    pub split_seed: u64,
    pub max_tokens: usize,
    pub marker: String,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            alpha0: BayesHyperparams::DEFAULT_ALPHA0,
            p_hash: BayesHyperparams::DEFAULT_P_HASH,
            sweeps: GibbsConfig::default().sweeps(),
            bayes_seed: 0,
            valid_fraction: 0.1,
            split_seed: 0,
            max_tokens: 100,
            marker: DEFAULT_MARKER.to_string(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Hyperparam(format!("{key} = `{value}`")))
}

impl Hyperparams {
    pub const KEYS: [&'static str; 19] = [
        "alpha0",
        "attention_hidden",
        "batch_size",
        "bayes_seed",
        "clip_norm",
        "decoder_hidden",
        "encoder_hidden",
        "epochs",
        "learning_rate",
        "marker",
        "max_tokens",
        "min_count",
        "p_hash",
        "patience",
        "source_embedding",
        "split_seed",
        "sweeps",
        "target_embedding",
        "valid_fraction",
    ];

    /// Overrides one value by name. `clip_norm = 0` disables clipping.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha0" => self.alpha0 = parse_value(key, value)?,
            "attention_hidden" => self.model.attention_hidden = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "bayes_seed" => self.bayes_seed = parse_value(key, value)?,
            "clip_norm" => {
                let c: f64 = parse_value(key, value)?;
                self.train.clip_norm = (c > 0.0).then_some(c);
            }
            "decoder_hidden" => self.model.decoder_hidden = parse_value(key, value)?,
            "encoder_hidden" => self.model.encoder_hidden = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "marker" => self.marker = value.to_string(),
            "max_tokens" => self.max_tokens = parse_value(key, value)?,
            "min_count" => self.train.min_count = parse_value(key, value)?,
            "p_hash" => self.p_hash = parse_value(key, value)?,
            "patience" => self.train.patience = parse_value(key, value)?,
            "source_embedding" => self.model.source_embedding = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "sweeps" => self.sweeps = parse_value(key, value)?,
            "target_embedding" => self.model.target_embedding = parse_value(key, value)?,
            "valid_fraction" => self.valid_fraction = parse_value(key, value)?,
            _ => {
                return Err(Error::Hyperparam(format!(
                    "unknown key `{key}` (valid: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// `key=value` lines in key order, covering every setting.
    pub fn canonical(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let fields: [(&str, String); 19] = [
            ("alpha0", self.alpha0.to_string()),
            ("attention_hidden", m.attention_hidden.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("bayes_seed", self.bayes_seed.to_string()),
            ("clip_norm", t.clip_norm.unwrap_or(0.0).to_string()),
            ("decoder_hidden", m.decoder_hidden.to_string()),
            ("encoder_hidden", m.encoder_hidden.to_string()),
            ("epochs", t.epochs.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("marker", self.marker.clone()),
            ("max_tokens", self.max_tokens.to_string()),
            ("min_count", t.min_count.to_string()),
            ("p_hash", self.p_hash.to_string()),
            ("patience", t.patience.to_string()),
            ("source_embedding", m.source_embedding.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("sweeps", self.sweeps.to_string()),
            ("target_embedding", m.target_embedding.to_string()),
            ("valid_fraction", self.valid_fraction.to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 12 hex digits of the SHA-256 of [`Hyperparams::canonical`].
    pub fn digest(&self) -> String {
        let full = hex::encode(Sha256::digest(self.canonical().as_bytes()));
        full[..12].to_string()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig::with_sweeps(self.sweeps, self.bayes_seed)
    }

    pub fn bayes_hyperparams(&self, utterances: &[Vec<String>]) -> Result<BayesHyperparams> {
        BayesHyperparams::uniform(self.alpha0, self.p_hash, utterances.iter().flatten())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub corpora: BTreeMap<String, PathBuf>,
    pub inventories: BTreeMap<String, PathBuf>,
    pub pivot: Option<String>,
    pub pairs: Vec<(String, String)>,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub hyper: Hyperparams,
    pub output: PathBuf,
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut corpora = BTreeMap::new();
        let mut inventories = BTreeMap::new();
        let mut experiment: BTreeMap<String, String> = BTreeMap::new();
        let mut hyper = Hyperparams::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Manifest(format!("line {}: {m}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            match section.as_str() {
                "corpora" => {
                    corpora.insert(key.to_string(), resolve(value));
                }
                "inventories" => {
                    inventories.insert(key.to_string(), resolve(value));
                }
                "experiment" => {
                    experiment.insert(key.to_string(), value.to_string());
                }
                "hyperparameters" => hyper.set(key, value).map_err(|e| err(e.to_string()))?,
                "" => return Err(err("entry outside any section".into())),
                s => return Err(err(format!("unknown section `{s}`"))),
            }
        }

        let mode: Mode = experiment
            .remove("mode")
            .ok_or_else(|| Error::Manifest("missing `mode`".into()))?
            .parse()?;
        let seeds = match experiment.remove("seeds") {
            Some(s) => s
                .split_whitespace()
                .map(|x| {
                    x.parse()
                        .map_err(|_| Error::Manifest(format!("bad seed `{x}`")))
                })
                .collect::<Result<Vec<u64>>>()?,
            None => vec![1, 2],
        };
        let output = resolve(&experiment.remove("output").unwrap_or_else(|| "runs".into()));
        let pivot = experiment.remove("pivot");
        let pairs = match experiment.remove("pairs").as_deref() {
            None | Some("all") => all_pairs(corpora.keys()),
            Some(list) => list
                .split_whitespace()
                .map(|p| {
                    p.split_once(':')
                        .map(|(s, t)| (s.to_string(), t.to_string()))
                        .ok_or_else(|| {
                            Error::Manifest(format!("pair `{p}` is not `source:target`"))
                        })
                })
                .collect::<Result<_>>()?,
        };
        if let Some(k) = experiment.keys().next() {
            return Err(Error::Manifest(format!("unknown experiment key `{k}`")));
        }
        let m = Self {
            corpora,
            inventories,
            pivot,
            pairs,
            mode,
            seeds,
            hyper,
            output,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let declared = |l: &String| self.corpora.contains_key(l);
        for (s, t) in &self.pairs {
            if !declared(s) || !declared(t) {
                return Err(Error::Manifest(format!(
                    "pair {s}:{t} uses an undeclared language"
                )));
            }
            if s == t {
                return Err(Error::Manifest(format!(
                    "pair {s}:{t} has identical languages"
                )));
            }
        }
        if let Some(p) = self.pivot.as_ref().filter(|p| !declared(p)) {
            return Err(Error::Manifest(format!(
                "pivot `{p}` is not a declared language"
            )));
        }
        if let Some(l) = self.inventories.keys().find(|l| !declared(l)) {
            return Err(Error::Manifest(format!(
                "inventory for undeclared language `{l}`"
            )));
        }
        if self.mode.trains() && self.seeds.is_empty() {
            return Err(Error::Manifest(format!(
                "{} mode needs at least one seed",
                self.mode
            )));
        }
        Ok(())
    }

    /// Directory of the run for one pair.
    pub fn run_dir(&self, source: &str, target: &str) -> PathBuf {
        self.output
            .join(format!("{source}-{target}"))
            .join(run_name(self.mode, &self.seeds, &self.hyper))
    }
}

fn all_pairs<'a>(langs: impl Iterator<Item = &'a String> + Clone) -> Vec<(String, String)> {
    langs
        .clone()
        .flat_map(|s| {
            langs
                .clone()
                .filter(move |t| *t != s)
                .map(move |t| (s.clone(), t.clone()))
        })
        .collect()
}

fn run_name(mode: Mode, seeds: &[u64], hyper: &Hyperparams) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("{mode}-seeds{}-{}", seeds.join("_"), hyper.digest())
}

/// Scores and identity of one run. `wall_seconds` is kept out of
/// `report.tsv` (it lives in `timing.tsv`) so reports are reproducible
/// byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub source: String,
    pub target: String,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub hyper_digest: String,
    pub sentences: usize,
    pub eval: EvalReport,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn pair_id(&self) -> String {
        format!("{}-{}", self.source, self.target)
    }

    pub fn to_tsv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let _ = writeln!(out, "pair\t{}", self.pair_id());
        let _ = writeln!(out, "source\t{}", self.source);
        let _ = writeln!(out, "target\t{}", self.target);
        let _ = writeln!(out, "mode\t{}", self.mode);
        let _ = writeln!(out, "seeds\t{}", seeds.join(" "));
        let _ = writeln!(out, "hyperparameters\t{}", self.hyper_digest);
        let _ = writeln!(out, "sentences\t{}", self.sentences);
        out.push_str(&self.eval.to_tsv());
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let fields: BTreeMap<&str, &str> =
            text.lines().filter_map(|l| l.split_once('\t')).collect();
        let get = |k: &str| {
            fields.get(k).copied().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("report lacks {k}"),
            })
        };
        let seeds = get("seeds")?
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::invalid(format!("bad seed `{s}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            source: get("source")?.to_string(),
            target: get("target")?.to_string(),
            mode: get("mode")?.parse()?,
            seeds,
            hyper_digest: get("hyperparameters")?.to_string(),
            sentences: get("sentences")?
                .parse()
                .map_err(|_| Error::invalid("bad sentence count"))?,
            eval: EvalReport::from_tsv(text)?,
            wall_seconds: 0.0,
        })
    }

    /// Reads `report.tsv` and `timing.tsv` from a finished run directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("report.tsv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut r = Self::from_tsv(&text)?;
        if let Ok(t) = std::fs::read_to_string(dir.join("timing.tsv")) {
            r.wall_seconds = t
                .lines()
                .find_map(|l| l.strip_prefix("wall_seconds\t"))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0.0);
        }
        Ok(r)
    }
}

/// Loads one language file: field 2 holds its words, field 3 its phonemes.
pub fn load_language(manifest: &ExperimentManifest, lang: &str) -> Result<ParallelCorpus> {
    let path = manifest
        .corpora
        .get(lang)
        .ok_or_else(|| Error::Manifest(format!("undeclared language `{lang}`")))?;
    let inventory = match manifest.inventories.get(lang) {
        Some(p) => Inventory::load(p)?,
        None => Inventory::default(),
    };
    load_corpus(path, lang, lang, &inventory)
}

/// Joins the words of `source` with the phonemes of `target` on id, in
/// target order.
pub fn build_pair_corpus(
    source: &ParallelCorpus,
    target: &ParallelCorpus,
) -> Result<ParallelCorpus> {
    let by_id: BTreeMap<&str, &UtterancePair> =
        source.pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let missing: Vec<&str> = target.ids().filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "ids of {} missing from {}: {}",
            target.target_language,
            source.source_language,
            missing.join(", ")
        )));
    }
    let pairs = target
        .pairs
        .iter()
        .map(|t| {
            UtterancePair::new(
                t.id.clone(),
                by_id[t.id.as_str()].source_tokens.clone(),
                t.target_phonemes.clone(),
                t.gold.clone(),
            )
        })
        .collect::<Result<_>>()?;
    ParallelCorpus::new(&source.source_language, &target.target_language, pairs)
}

/// Output of the neural path over one corpus.
#[derive(Clone)]
pub struct NeuralRun {
    /// Seed-averaged matrices, one per corpus pair, over the training
    /// targets (marker rows included).
    pub matrices: Vec<SoftAlignmentMatrix>,
    /// Mean over seeds of validation BLEU, with markers removed from the
    /// hypotheses. `None` when the validation split is empty.
    pub bleu: Option<f64>,
    /// Per seed, the marker-free greedy decodes of the validation sources
    /// that BLEU was computed on.
    pub valid_hypotheses: Vec<Vec<Vec<String>>>,
    pub models: Vec<Model<f32>>,
    pub logs: Vec<TrainingLog>,
}

/// Trains one model per seed on `targets` (aligned with `corpus.pairs`),
/// forced-decodes every pair and averages the matrices across seeds. The
/// train/valid split depends on the ids and `hyper.split_seed` only.
pub fn train_and_align(
    corpus: &ParallelCorpus,
    targets: &[Vec<String>],
    marker: Option<&str>,
    seeds: &[u64],
    hyper: &Hyperparams,
) -> Result<NeuralRun> {
    if seeds.is_empty() {
        return Err(Error::invalid("neural training needs at least one seed"));
    }
    if targets.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} pairs",
            targets.len(),
            corpus.len()
        )));
    }
    let ids: Vec<&str> = corpus.ids().collect();
    let valid = valid_ids(&ids, hyper.valid_fraction, hyper.split_seed);
    let mut train_pairs: Vec<SeqPair> = Vec::new();
    let mut valid_pairs: Vec<SeqPair> = Vec::new();
    let mut valid_refs: Vec<&[String]> = Vec::new();
    for (p, t) in corpus.pairs.iter().zip(targets) {
        let pair = (p.source_tokens.clone(), t.clone());
        if valid.contains(&p.id) {
            valid_pairs.push(pair);
            valid_refs.push(&p.target_phonemes);
        } else {
            train_pairs.push(pair);
        }
    }
    let max_len = 2 * targets.iter().map(Vec::len).max().unwrap_or(0) + 10;

    let mut per_seed: Vec<Vec<SoftAlignmentMatrix>> = Vec::with_capacity(seeds.len());
    let mut bleus = Vec::new();
    let mut valid_hypotheses = Vec::new();
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for &seed in seeds {
        log::info!("training seed {seed} on {} pairs", train_pairs.len());
        let (model, log) = train_model(
            &train_pairs,
            &valid_pairs,
            hyper.model,
            &hyper.train_config(seed),
            marker,
        )?;
        let matrices = corpus
            .pairs
            .par_iter()
            .zip(targets)
            .map(|(p, t)| model.forced_decode_matrix(&p.source_tokens, t))
            .collect::<Result<Vec<_>>>()?;
        if !valid_pairs.is_empty() {
            let hyps: Vec<Vec<String>> = valid_pairs
                .par_iter()
                .map(|(s, _)| {
                    let mut h = model.greedy_decode(s, max_len);
                    if let Some(m) = marker {
                        h.retain(|x| x != m);
                    }
                    h
                })
                .collect();
            let refs: Vec<Vec<String>> = valid_refs.iter().map(|r| r.to_vec()).collect();
            bleus.push(bleu4(&hyps, &refs)?);
            valid_hypotheses.push(hyps);
        }
        per_seed.push(matrices);
        models.push(model);
        logs.push(log);
    }
    let matrices = (0..corpus.len())
        .map(|i| {
            let ms: Vec<SoftAlignmentMatrix> = per_seed.iter().map(|s| s[i].clone()).collect();
            average_matrices(&ms)
        })
        .collect::<Result<_>>()?;
    let bleu = (!bleus.is_empty()).then(|| bleus.iter().sum::<f64>() / bleus.len() as f64);
    Ok(NeuralRun {
        matrices,
        bleu,
        valid_hypotheses,
        models,
        logs,
    })
}

/// Targets with `marker` inserted at the boundaries of `segs`.
pub fn augmented_targets(
    corpus: &ParallelCorpus,
    segs: &[Segmentation],
    marker: &str,
) -> Result<Vec<Vec<String>>> {
    corpus
        .pairs
        .iter()
        .zip(segs)
        .map(|(p, s)| insert_soft_boundaries(&p.target_phonemes, s, marker))
        .collect()
}

fn run_bayes(corpus: &ParallelCorpus, hyper: &Hyperparams) -> Result<BayesResult> {
    let utts: Vec<Vec<String>> = corpus
        .pairs
        .iter()
        .map(|p| p.target_phonemes.clone())
        .collect();
    let hp = hyper.bayes_hyperparams(&utts)?;
    segment_corpus(&utts, &hp, &hyper.gibbs_config())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// File-name-safe rendering of an utterance id.
fn file_stem(id: &str) -> String {
    let mut out = String::new();
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b"._-".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

pub fn save_matrix(matrix: &SoftAlignmentMatrix, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), matrix.to_text())
}

/// Loads a matrix file. Rows that are not distributions are logged and
/// returned alongside the matrix.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<(SoftAlignmentMatrix, Vec<usize>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (m, invalid) = SoftAlignmentMatrix::from_text(&text)?;
    if !invalid.is_empty() {
        log::warn!("{}: rows {invalid:?} are not distributions", path.display());
    }
    Ok((m, invalid))
}

/// `epoch<TAB>train_loss<TAB>valid_loss` lines, epoch 0 being the
/// untrained model.
pub fn training_log_tsv(log: &TrainingLog) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_loss\n");
    for e in &log.epochs {
        let train = e.train_loss.map_or("NA".to_string(), |l| format!("{l:.6}"));
        let _ = writeln!(out, "{}\t{train}\t{:.6}", e.epoch, e.valid_loss);
    }
    let _ = writeln!(out, "# best_epoch\t{}", log.best_epoch);
    out
}

fn bayes_log_tsv(result: &BayesResult) -> String {
    let mut out = String::from("temperature\tsweeps\tlog_prob\ttypes\ttokens\n");
    for s in &result.log {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}\t{}",
            s.temperature, s.sweeps, s.log_prob, s.num_types, s.num_tokens
        );
    }
    out
}

/// Runs one mode over an already-joined corpus and writes its artifacts
/// into `dir`, which must exist.
pub fn run_corpus(
    corpus: &ParallelCorpus,
    mode: Mode,
    seeds: &[u64],
    hyper: &Hyperparams,
    dir: &Path,
) -> Result<RunReport> {
    let started = Instant::now();
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let gold: Vec<Segmentation> = corpus
        .pairs
        .iter()
        .map(|p| {
            p.gold.clone().ok_or_else(|| {
                Error::invalid(format!("pair {} has no reference segmentation", p.id))
            })
        })
        .collect::<Result<_>>()?;
    let phonemes: Vec<Vec<String>> = corpus
        .pairs
        .iter()
        .map(|p| p.target_phonemes.clone())
        .collect();

    let mut bleu = None;
    let mut ane = Vec::new();
    let segs: Vec<Segmentation> = match mode {
        Mode::Proportional => corpus
            .pairs
            .iter()
            .map(|p| proportional_segment_words(&p.source_tokens, p.target_phonemes.len()))
            .collect(),
        Mode::Bayes => {
            let r = run_bayes(corpus, hyper)?;
            write(&dir.join("bayes-log.tsv"), bayes_log_tsv(&r))?;
            r.segmentations
        }
        Mode::Neural | Mode::Hybrid => {
            let (targets, marker) = if mode == Mode::Hybrid {
                let r = run_bayes(corpus, hyper)?;
                write(&dir.join("bayes-log.tsv"), bayes_log_tsv(&r))?;
                (
                    augmented_targets(corpus, &r.segmentations, &hyper.marker)?,
                    Some(hyper.marker.as_str()),
                )
            } else {
                (phonemes.clone(), None)
            };
            let run = train_and_align(corpus, &targets, marker, seeds, hyper)?;
            for ((seed, model), log) in seeds.iter().zip(&run.models).zip(&run.logs) {
                save_checkpoint(model, dir.join(format!("model-seed{seed}.ckpt")))?;
                write(
                    &dir.join(format!("train-seed{seed}.tsv")),
                    training_log_tsv(log),
                )?;
            }
            for (seed, hyps) in seeds.iter().zip(&run.valid_hypotheses) {
                let lines: String = hyps.iter().map(|h| h.join(" ") + "\n").collect();
                write(&dir.join(format!("bleu-hyp-seed{seed}.txt")), lines)?;
            }
            let matrix_dir = dir.join("matrices");
            create_dir(&matrix_dir)?;
            let mut aligned: Vec<AlignedSegmentation> = Vec::with_capacity(corpus.len());
            for (p, m) in corpus.pairs.iter().zip(&run.matrices) {
                save_matrix(m, matrix_dir.join(format!("{}.mat", file_stem(&p.id))))?;
                ane.push(average_normalized_entropy(m));
                aligned.push(match marker {
                    Some(mk) => hybrid_segment(m, mk),
                    None => attention_segment(m),
                });
            }
            let inputs: Vec<RankInput<'_>> = aligned
                .iter()
                .zip(&phonemes)
                .zip(&ane)
                .map(|((a, t), &e)| RankInput {
                    alignment: a,
                    target_symbols: t,
                    ane: e,
                })
                .collect();
            write(
                &dir.join("ranking.tsv"),
                ranking_to_tsv(&rank_alignments(&inputs)),
            )?;
            bleu = run.bleu;
            aligned.into_iter().map(|a| a.segmentation).collect()
        }
    };

    let mut eval = EvalReport::evaluate(&phonemes, &gold, &segs)?.with_ane(&ane);
    eval.bleu = bleu;
    let hyp_corpus = corpus.with_pairs(
        corpus
            .pairs
            .iter()
            .zip(&segs)
            .map(|(p, s)| UtterancePair {
                gold: Some(s.clone()),
                ..p.clone()
            })
            .collect(),
    );
    write(&dir.join("segmentation.tsv"), hyp_corpus.to_tsv())?;
    let report = RunReport {
        source: corpus.source_language.clone(),
        target: corpus.target_language.clone(),
        mode,
        seeds: seeds.to_vec(),
        hyper_digest: hyper.digest(),
        sentences: corpus.len(),
        eval,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write(
        &dir.join("timing.tsv"),
        format!("wall_seconds\t{:.3}\n", report.wall_seconds),
    )?;
    write(&dir.join("hyperparameters.txt"), hyper.canonical())?;
    // Written last: its presence marks the run complete.
    write(&dir.join("report.tsv"), report.to_tsv())?;
    Ok(report)
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub enum PairStatus {
    Computed(RunReport),
    Resumed(RunReport),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub source: String,
    pub target: String,
    pub status: PairStatus,
}

impl PairOutcome {
    pub fn report(&self) -> Option<&RunReport> {
        match &self.status {
            PairStatus::Computed(r) | PairStatus::Resumed(r) => Some(r),
            PairStatus::Failed(_) => None,
        }
    }
}

type Corpora = BTreeMap<String, std::result::Result<ParallelCorpus, String>>;

fn load_languages<'a>(
    manifest: &ExperimentManifest,
    langs: impl IntoIterator<Item = &'a String>,
) -> Corpora {
    langs
        .into_iter()
        .map(|l| {
            (
                l.clone(),
                load_language(manifest, l).map_err(|e| e.to_string()),
            )
        })
        .collect()
}

fn corpus_for_pair(
    manifest: &ExperimentManifest,
    corpora: &Corpora,
    source: &str,
    target: &str,
) -> Result<ParallelCorpus> {
    let get = |l: &str| -> Result<&ParallelCorpus> {
        corpora
            .get(l)
            .ok_or_else(|| Error::Manifest(format!("language `{l}` not loaded")))?
            .as_ref()
            .map_err(|e| Error::invalid(format!("loading {l}: {e}")))
    };
    let corpus = build_pair_corpus(get(source)?, get(target)?)?;
    match &manifest.pivot {
        Some(p) => filter_by_length(&corpus, get(p)?, Side::Source, manifest.hyper.max_tokens),
        None => Ok(corpus),
    }
}

fn execute_pair(
    manifest: &ExperimentManifest,
    corpora: &Corpora,
    source: &str,
    target: &str,
) -> Result<PairStatus> {
    let dir = manifest.run_dir(source, target);
    if dir.join("report.tsv").is_file() {
        log::info!("{source}-{target}: resuming from {}", dir.display());
        return RunReport::load(&dir).map(PairStatus::Resumed);
    }
    let corpus = corpus_for_pair(manifest, corpora, source, target)?;
    let parent = dir.parent().expect("run dirs are nested");
    create_dir(parent)?;
    let name = dir.file_name().expect("named").to_string_lossy();
    let partial = parent.join(format!(".{name}.partial"));
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    create_dir(&partial)?;
    log::info!(
        "{source}-{target}: {} over {} sentences",
        manifest.mode,
        corpus.len()
    );
    let report = run_corpus(
        &corpus,
        manifest.mode,
        &manifest.seeds,
        &manifest.hyper,
        &partial,
    )?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::rename(&partial, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(PairStatus::Computed(report))
}

fn isolated(
    manifest: &ExperimentManifest,
    corpora: &Corpora,
    source: &str,
    target: &str,
) -> PairOutcome {
    let status = match catch_unwind(AssertUnwindSafe(|| {
        execute_pair(manifest, corpora, source, target)
    })) {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => PairStatus::Failed(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            PairStatus::Failed(format!("panic: {msg}"))
        }
    };
    if let PairStatus::Failed(e) = &status {
        log::error!("{source}-{target}: {e}");
    }
    PairOutcome {
        source: source.to_string(),
        target: target.to_string(),
        status,
    }
}

/// Runs (or resumes) one pair of the manifest. Failures are returned as
/// [`PairStatus::Failed`], never propagated.
pub fn run_pair(manifest: &ExperimentManifest, source: &str, target: &str) -> PairOutcome {
    let langs: BTreeSet<&String> = [source, target]
        .iter()
        .filter_map(|l| manifest.corpora.get_key_value(*l).map(|(k, _)| k))
        .chain(manifest.pivot.as_ref())
        .collect();
    let corpora = load_languages(manifest, langs);
    isolated(manifest, &corpora, source, target)
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every pair of the manifest, up to [`worker_count`] at a time.
/// Failures are recorded in `<output>/failures.tsv` and do not affect
/// other pairs.
pub fn run_grid(manifest: &ExperimentManifest) -> Result<Vec<PairOutcome>> {
    manifest.validate()?;
    if manifest.corpora.len() < 2 {
        return Err(Error::Manifest(
            "a grid needs at least two languages".into(),
        ));
    }
    create_dir(&manifest.output)?;
    let used: BTreeSet<&String> = manifest
        .pairs
        .iter()
        .flat_map(|(s, t)| [s, t])
        .chain(manifest.pivot.as_ref())
        .collect();
    let corpora = load_languages(manifest, used);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let outcomes: Vec<PairOutcome> = pool.install(|| {
        manifest
            .pairs
            .par_iter()
            .map(|(s, t)| isolated(manifest, &corpora, s, t))
            .collect()
    });
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| match &o.status {
            PairStatus::Failed(e) => Some(format!(
                "{}\t{}\t{}\n",
                o.source,
                o.target,
                e.replace('\n', " ")
            )),
            _ => None,
        })
        .collect();
    let path = manifest.output.join("failures.tsv");
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        write(
            &path,
            format!("source\ttarget\terror\n{}", failures.concat()),
        )?;
    }
    Ok(outcomes)
}

/// Reports already present on disk for the manifest's pairs.
pub fn collect_reports(manifest: &ExperimentManifest) -> Result<Vec<RunReport>> {
    manifest
        .pairs
        .iter()
        .map(|(s, t)| manifest.run_dir(s, t))
        .filter(|d| d.join("report.tsv").is_file())
        .map(|d| RunReport::load(&d))
        .collect()
}

/// Metric names accepted by [`emit_grid_report`].
pub const METRICS: [&str; 10] = [
    "boundary_precision",
    "boundary_recall",
    "boundary_f1",
    "type_precision",
    "type_recall",
    "type_f1",
    "discovered_types",
    "mean_token_length",
    "bleu",
    "ane_mean",
];

fn canonical_metric(name: &str) -> Result<&'static str> {
    let name = match name {
        "f1" | "f" => "boundary_f1",
        "precision" => "boundary_precision",
        "recall" => "boundary_recall",
        other => other,
    };
    METRICS
        .iter()
        .copied()
        .find(|m| *m == name)
        .ok_or_else(|| Error::UnknownMetric {
            name: name.to_string(),
            valid: METRICS.iter().map(|s| s.to_string()).collect(),
        })
}

/// Value of a named metric; `None` when the run does not produce it.
pub fn metric_value(report: &RunReport, metric: &str) -> Result<Option<f64>> {
    let e = &report.eval;
    Ok(match canonical_metric(metric)? {
        "boundary_precision" => Some(e.boundary.precision),
        "boundary_recall" => Some(e.boundary.recall),
        "boundary_f1" => Some(e.boundary.f1),
        "type_precision" => Some(e.type_precision),
        "type_recall" => Some(e.type_recall),
        "type_f1" => Some(e.type_f1),
        "discovered_types" => Some(e.discovered_types as f64),
        "mean_token_length" => Some(e.mean_token_length),
        "bleu" => e.bleu,
        "ane_mean" => e.ane_mean,
        _ => unreachable!("canonical names are exhaustive"),
    })
}

fn format_metric(metric: &str, value: Option<f64>) -> String {
    match value {
        None => "NA".into(),
        Some(v) if metric == "discovered_types" => format!("{v:.0}"),
        Some(v) => format!("{v:.6}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTables {
    /// Rows are source languages, columns target languages; the diagonal
    /// is empty.
    pub matrix: String,
    /// One row per report with every metric.
    pub long: String,
}

pub fn emit_grid_report(reports: &[RunReport], metric: &str) -> Result<GridTables> {
    let metric = canonical_metric(metric)?;
    let langs: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| [r.source.as_str(), r.target.as_str()])
        .collect();
    let cells: BTreeMap<(&str, &str), &RunReport> = reports
        .iter()
        .map(|r| ((r.source.as_str(), r.target.as_str()), r))
        .collect();
    let mut matrix = String::from("source\\target");
    for t in &langs {
        let _ = write!(matrix, "\t{t}");
    }
    matrix.push('\n');
    for s in &langs {
        matrix.push_str(s);
        for t in &langs {
            matrix.push('\t');
            if s != t {
                if let Some(r) = cells.get(&(*s, *t)) {
                    matrix.push_str(&format_metric(metric, metric_value(r, metric)?));
                }
            }
        }
        matrix.push('\n');
    }

    let mut long = String::from("source\ttarget\tmode\tseeds");
    for m in METRICS {
        let _ = write!(long, "\t{m}");
    }
    long.push('\n');
    for r in cells.values() {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = write!(
            long,
            "{}\t{}\t{}\t{}",
            r.source,
            r.target,
            r.mode,
            seeds.join(" ")
        );
        for m in METRICS {
            let _ = write!(long, "\t{}", format_metric(m, metric_value(r, m)?));
        }
        long.push('\n');
    }
    Ok(GridTables { matrix, long })
}

/// Writes `grid-<metric>.tsv` and `grid-long.tsv` into `dir`.
pub fn write_grid_report(reports: &[RunReport], metric: &str, dir: &Path) -> Result<GridTables> {
    let tables = emit_grid_report(reports, metric)?;
    create_dir(dir)?;
    write(
        &dir.join(format!("grid-{}.tsv", canonical_metric(metric)?)),
        &tables.matrix,
    )?;
    write(&dir.join("grid-long.tsv"), &tables.long)?;
    Ok(tables)
}

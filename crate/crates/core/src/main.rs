use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wordseg::align::{
    attention_segment, average_normalized_entropy, hybrid_segment, rank_alignments, ranking_to_tsv,
    RankInput,
};
use wordseg::corpus::{
    insert_soft_boundaries, load_corpus, valid_ids, Inventory, ParallelCorpus, UtterancePair,
};
use wordseg::harness::{
    collect_reports, load_matrix, run_corpus, run_grid, save_matrix, training_log_tsv,
    write_grid_report, ExperimentManifest, Hyperparams, Mode, PairStatus,
};
use wordseg::metrics::EvalReport;
use wordseg::neural::{average_matrices, load_checkpoint, save_checkpoint, train_model, SeqPair};
use wordseg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wordseg",
    version,
    about = "Word segmentation of phoneme sequences from translations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus TSV: id, source words, target phonemes (spaces mark words).
    #[arg(long)]
    corpus: PathBuf,
    /// Target phoneme inventory, one symbol per line.
    #[arg(long)]
    inventory: Option<PathBuf>,
    #[arg(long, default_value = "src")]
    source_lang: String,
    #[arg(long, default_value = "tgt")]
    target_lang: String,
}

impl CorpusArgs {
    fn inventory(&self) -> Result<Inventory> {
        self.inventory
            .as_ref()
            .map_or(Ok(Inventory::default()), Inventory::load)
    }

    fn load(&self) -> Result<ParallelCorpus> {
        load_corpus(
            &self.corpus,
            &self.source_lang,
            &self.target_lang,
            &self.inventory()?,
        )
    }
}

#[derive(Args)]
struct HyperArgs {
    /// Hyperparameter override `key=value`, as in a manifest.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<Hyperparams> {
        let mut h = Hyperparams::default();
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Hyperparam(format!("`{o}` is not KEY=VALUE")))?;
            h.set(k.trim(), v.trim())?;
        }
        Ok(h)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, num_args = 1.., default_values_t = [1u64, 2])]
    seeds: Vec<u64>,
    /// Output directory for the report and artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Bayesian segmentation of the target phonemes.
    SegmentBayes(RunArgs),
    /// Proportional baseline.
    SegmentProp(RunArgs),
    /// Bayesian soft boundaries followed by neural alignment.
    Hybrid(RunArgs),
    /// Train one attention model on the training split.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Segmentation TSV whose boundaries are inserted as markers.
        #[arg(long)]
        soft_boundaries: Option<PathBuf>,
        /// Checkpoint path; the training log goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment from the averaged attention of one or more trained models.
    SegmentAttn {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Segmentation TSV used as soft boundaries when the models were
        /// trained on marked targets.
        #[arg(long)]
        soft_boundaries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a segmentation TSV against a reference corpus.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Rank word alignments by the entropy of their sentence's matrix.
    Rank {
        /// Directory of `.mat` files.
        #[arg(long)]
        matrices: PathBuf,
        /// Marker symbol when the matrices cover marked targets.
        #[arg(long)]
        marker: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run or resume every pair of a manifest.
    Grid {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "boundary_f1")]
        metric: String,
    },
    /// Tabulate the finished reports of a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "boundary_f1")]
        metric: String,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn run_mode(mode: Mode, args: &RunArgs) -> Result<bool> {
    let corpus = args.corpus.load()?;
    create_dir(&args.out)?;
    let report = run_corpus(
        &corpus,
        mode,
        &args.seeds,
        &args.hyper.resolve()?,
        &args.out,
    )?;
    print!("{}", report.to_tsv());
    Ok(true)
}

/// Targets with markers at the boundaries of the segmentation file, when
/// one is given.
fn targets(
    corpus: &ParallelCorpus,
    args: &CorpusArgs,
    soft: Option<&PathBuf>,
    marker: &str,
) -> Result<Vec<Vec<String>>> {
    let Some(path) = soft else {
        return Ok(corpus
            .pairs
            .iter()
            .map(|p| p.target_phonemes.clone())
            .collect());
    };
    let seg = load_corpus(
        path,
        &args.source_lang,
        &args.target_lang,
        &args.inventory()?,
    )?;
    let by_id: HashMap<&str, &UtterancePair> =
        seg.pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    corpus
        .pairs
        .iter()
        .map(|p| {
            let s = by_id
                .get(p.id.as_str())
                .and_then(|s| s.gold.as_ref())
                .ok_or_else(|| Error::Invalid(format!("no soft boundaries for {}", p.id)))?;
            insert_soft_boundaries(&p.target_phonemes, s, marker)
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::SegmentBayes(a) => run_mode(Mode::Bayes, &a),
        Command::SegmentProp(a) => run_mode(Mode::Proportional, &a),
        Command::Hybrid(a) => run_mode(Mode::Hybrid, &a),
        Command::Train {
            corpus,
            hyper,
            seed,
            soft_boundaries,
            out,
        } => {
            let h = hyper.resolve()?;
            let c = corpus.load()?;
            let tgts = targets(&c, &corpus, soft_boundaries.as_ref(), &h.marker)?;
            let ids: Vec<&str> = c.ids().collect();
            let valid = valid_ids(&ids, h.valid_fraction, h.split_seed);
            let (mut train, mut dev): (Vec<SeqPair>, Vec<SeqPair>) = (vec![], vec![]);
            for (p, t) in c.pairs.iter().zip(tgts) {
                let pair = (p.source_tokens.clone(), t);
                if valid.contains(&p.id) {
                    dev.push(pair);
                } else {
                    train.push(pair);
                }
            }
            let marker = soft_boundaries.is_some().then_some(h.marker.as_str());
            let (model, log) = train_model(&train, &dev, h.model, &h.train_config(seed), marker)?;
            save_checkpoint(&model, &out)?;
            write(&out.with_extension("log.tsv"), training_log_tsv(&log))?;
            eprintln!(
                "best epoch {} of {}, valid loss {:.4}",
                log.best_epoch,
                log.epochs.len() - 1,
                log.best_valid_loss()
            );
            Ok(true)
        }
        Command::SegmentAttn {
            corpus,
            hyper,
            models,
            soft_boundaries,
            out,
        } => {
            let h = hyper.resolve()?;
            let c = corpus.load()?;
            let tgts = targets(&c, &corpus, soft_boundaries.as_ref(), &h.marker)?;
            let models = models
                .iter()
                .map(load_checkpoint)
                .collect::<Result<Vec<_>>>()?;
            let matrix_dir = out.join("matrices");
            create_dir(&matrix_dir)?;
            let (mut segs, mut anes, mut aligned) = (vec![], vec![], vec![]);
            for (i, (p, t)) in c.pairs.iter().zip(&tgts).enumerate() {
                let ms = models
                    .iter()
                    .map(|m| m.forced_decode_matrix(&p.source_tokens, t))
                    .collect::<Result<Vec<_>>>()?;
                let m = average_matrices(&ms)?;
                save_matrix(&m, matrix_dir.join(format!("{i:06}.mat")))?;
                anes.push(average_normalized_entropy(&m));
                let a = match soft_boundaries {
                    Some(_) => hybrid_segment(&m, &h.marker),
                    None => attention_segment(&m),
                };
                segs.push(a.segmentation.clone());
                aligned.push(a);
            }
            let phonemes: Vec<Vec<String>> =
                c.pairs.iter().map(|p| p.target_phonemes.clone()).collect();
            let inputs: Vec<RankInput<'_>> = aligned
                .iter()
                .zip(&phonemes)
                .zip(&anes)
                .map(|((a, t), &ane)| RankInput {
                    alignment: a,
                    target_symbols: t,
                    ane,
                })
                .collect();
            write(
                &out.join("ranking.tsv"),
                ranking_to_tsv(&rank_alignments(&inputs)),
            )?;
            let hyp = c.with_pairs(
                c.pairs
                    .iter()
                    .zip(&segs)
                    .map(|(p, s)| UtterancePair {
                        gold: Some(s.clone()),
                        ..p.clone()
                    })
                    .collect(),
            );
            write(&out.join("segmentation.tsv"), hyp.to_tsv())?;
            let gold: Vec<_> = c.pairs.iter().filter_map(|p| p.gold.clone()).collect();
            let report = EvalReport::evaluate(&phonemes, &gold, &segs)?.with_ane(&anes);
            write(&out.join("report.tsv"), report.to_tsv())?;
            print!("{}", report.to_tsv());
            Ok(true)
        }
        Command::Evaluate { corpus, hyp } => {
            let gold = corpus.load()?;
            let hyp = load_corpus(
                &hyp,
                &corpus.source_lang,
                &corpus.target_lang,
                &corpus.inventory()?,
            )?;
            let by_id: HashMap<&str, &UtterancePair> =
                hyp.pairs.iter().map(|p| (p.id.as_str(), p)).collect();
            let mut phonemes = vec![];
            let mut g = vec![];
            let mut h = vec![];
            for p in &gold.pairs {
                let q = by_id
                    .get(p.id.as_str())
                    .ok_or_else(|| Error::Invalid(format!("hypothesis lacks {}", p.id)))?;
                if q.target_phonemes != p.target_phonemes {
                    return Err(Error::Invalid(format!("phonemes of {} differ", p.id)));
                }
                phonemes.push(p.target_phonemes.clone());
                g.push(p.gold.clone().expect("loaded corpora carry spacing"));
                h.push(q.gold.clone().expect("loaded corpora carry spacing"));
            }
            print!("{}", EvalReport::evaluate(&phonemes, &g, &h)?.to_tsv());
            Ok(true)
        }
        Command::Rank {
            matrices,
            marker,
            out,
        } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&matrices)
                .map_err(|e| Error::Invalid(format!("{}: {e}", matrices.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "mat"))
                .collect();
            paths.sort();
            let mut loaded = vec![];
            for p in &paths {
                let (m, invalid) = load_matrix(p)?;
                if !invalid.is_empty() {
                    eprintln!(
                        "skipping {}: rows {invalid:?} are not distributions",
                        p.display()
                    );
                    continue;
                }
                let a = match &marker {
                    Some(mk) => hybrid_segment(&m, mk),
                    None => attention_segment(&m),
                };
                let target: Vec<String> = m
                    .target_symbols()
                    .iter()
                    .filter(|s| Some(*s) != marker.as_ref())
                    .cloned()
                    .collect();
                loaded.push((a, target, average_normalized_entropy(&m)));
            }
            let inputs: Vec<RankInput<'_>> = loaded
                .iter()
                .map(|(a, t, ane)| RankInput {
                    alignment: a,
                    target_symbols: t,
                    ane: *ane,
                })
                .collect();
            let tsv = ranking_to_tsv(&rank_alignments(&inputs));
            match out {
                Some(p) => write(&p, tsv)?,
                None => print!("{tsv}"),
            }
            Ok(true)
        }
        Command::Grid { manifest, metric } => {
            let m = ExperimentManifest::load(&manifest)?;
            let outcomes = run_grid(&m)?;
            let mut ok = true;
            for o in &outcomes {
                let status = match &o.status {
                    PairStatus::Computed(r) => format!("computed\t{:.4}", r.eval.boundary.f1),
                    PairStatus::Resumed(r) => format!("resumed\t{:.4}", r.eval.boundary.f1),
                    PairStatus::Failed(e) => {
                        ok = false;
                        format!("failed\t{e}")
                    }
                };
                eprintln!("{}-{}\t{status}", o.source, o.target);
            }
            let reports: Vec<_> = outcomes
                .iter()
                .filter_map(|o| o.report().cloned())
                .collect();
            let tables = write_grid_report(&reports, &metric, &m.output)?;
            print!("{}", tables.matrix);
            Ok(ok)
        }
        Command::Report { manifest, metric } => {
            let m = ExperimentManifest::load(&manifest)?;
            let reports = collect_reports(&m)?;
            let tables = write_grid_report(&reports, &metric, &m.output)?;
            print!("{}", tables.matrix);
            Ok(reports.len() == m.pairs.len())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

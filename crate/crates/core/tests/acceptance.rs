//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `cargo test --release --test acceptance -- <filter>` runs only the
//! criteria whose name contains `<filter>`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wordseg::align::{
    attention_segment, average_normalized_entropy, hybrid_segment, proportional_segment,
    proportional_segment_words, rank_alignments, AlignedSegmentation, RankInput,
};
use wordseg::bayes::{segment_corpus, BayesHyperparams, GibbsConfig};
use wordseg::corpus::{ParallelCorpus, Segmentation, DEFAULT_MARKER};
use wordseg::harness::{
    augmented_targets, load_matrix, run_corpus, run_grid, train_and_align, ExperimentManifest,
    Hyperparams, Mode, NeuralRun, PairStatus,
};
use wordseg::metrics::{
    bleu4, boundary_prf, corpus_boundary_prf, mean_token_length, pearson_r, type_metrics,
};
use wordseg::neural::tape::softmax;
use wordseg::neural::{
    average_matrices, constant_output_model, gradient_check, output_bias_index, EncodedPair, Model,
    ModelConfig, SoftAlignmentMatrix, Vocab,
};
use wordseg::synth::{bilingual_corpus, zipf_corpus, BilingualSpec, ZipfSpec};

const BLEU_TOLERANCE: f64 = 0.1;
const PEARSON_TOLERANCE: f64 = 1e-9;
const GRAD_TOLERANCE: f64 = 1e-6;
const GRAD_EPSILON: f64 = 1e-2;
const GRAD_WEIGHT_SCALE: f64 = 10.0;
const ROW_TOLERANCE: f64 = 1e-5;
const ANE_TOLERANCE: f64 = 1e-9;
const NEURAL_MIN_F: f64 = 0.80;
const BAYES_MIN_F: f64 = 0.75;
const NEURAL_EPOCHS: &str = "25";
const HYBRID_SMOKE_EPOCHS: &str = "3";
const SEEDS: [u64; 2] = [1, 2];

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    check(
        (a - b).abs() <= tol,
        format!("{what}: got {a}, want {b} ± {tol}"),
    )
}

fn seg(len: usize, b: &[usize]) -> Segmentation {
    Segmentation::new(len, b.iter().copied()).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn metric_oracles() -> Outcome {
    let s = boundary_prf(&seg(5, &[2, 3]), &seg(5, &[2])).unwrap();
    close(s.precision, 1.0, 0.0, "boundary P")?;
    close(s.recall, 0.5, 0.0, "boundary R")?;
    close(s.f1, 2.0 / 3.0, 1e-15, "boundary F")?;
    let id = boundary_prf(&seg(5, &[2, 3]), &seg(5, &[2, 3])).unwrap();
    check(
        id.precision == 1.0 && id.recall == 1.0 && id.f1 == 1.0,
        "identity score",
    )?;
    let empty = boundary_prf(&seg(5, &[2, 3]), &seg(5, &[])).unwrap();
    check(
        empty.precision == 0.0 && empty.recall == 0.0 && empty.f1 == 0.0,
        "empty hypothesis",
    )?;
    check(
        boundary_prf(&seg(5, &[2]), &seg(4, &[2])).is_err(),
        "length mismatch accepted",
    )?;

    let t = type_metrics(&[toks("ab cd")], &[toks("ab c")]);
    check(
        t.correct.iter().map(String::as_str).eq(["ab"]),
        "correct types",
    )?;
    close(t.precision, 0.5, 0.0, "type P")?;
    close(t.recall, 0.5, 0.0, "type R")?;
    close(
        type_metrics(&[toks("ab cd")], &[toks("ab cd")]).f1,
        1.0,
        0.0,
        "type identity",
    )?;

    let r = vec![toks("a b c d e f")];
    close(bleu4(&r, &r).unwrap(), 100.0, 1e-9, "BLEU identity")?;
    close(
        bleu4(&[toks("x y z w")], &[toks("a b c d")]).unwrap(),
        0.0,
        0.0,
        "BLEU disjoint",
    )?;
    let b = bleu4(&[toks("a b c d e")], &[toks("a b c d f")]).unwrap();
    close(b, 66.9, BLEU_TOLERANCE, "BLEU partial")?;
    check(bleu4::<String>(&[], &[]).is_err(), "empty BLEU accepted")?;

    let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 1.0).collect();
    let affine: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    close(
        pearson_r(&xs, &affine).unwrap().0,
        1.0,
        1e-12,
        "pearson affine",
    )?;
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    close(
        pearson_r(&xs, &neg).unwrap().0,
        -1.0,
        1e-12,
        "pearson negated",
    )?;
    let (r, p) = pearson_r(
        &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        &[2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0, 9.0],
    )
    .unwrap();
    close(r, 0.884_889_259_215_023_9, PEARSON_TOLERANCE, "pearson r")?;
    close(
        p,
        0.003_491_557_488_627_220_4,
        PEARSON_TOLERANCE,
        "pearson p",
    )?;
    check(
        pearson_r(&xs, &[1.0; 10]).is_err(),
        "zero variance accepted",
    )?;

    close(mean_token_length(&[seg(6, &[2])]), 3.0, 0.0, "mean length")?;
    close(
        mean_token_length(&[seg(7, &[])]),
        7.0,
        0.0,
        "single word length",
    )?;
    check(
        proportional_segment(&[1, 2], 6) == seg(6, &[2]),
        "proportional [1,2] T=6",
    )?;
    check(
        proportional_segment(&[4], 6) == seg(6, &[]),
        "proportional single word",
    )?;
    Ok(format!("BLEU partial {b:.2}, r {r:.12}, p {p:.12}"))
}

fn grad_fixture(seed: u64) -> (Model<f64>, Vec<EncodedPair>) {
    let config = ModelConfig {
        source_embedding: 6,
        encoder_hidden: 5,
        target_embedding: 4,
        decoder_hidden: 7,
        attention_hidden: 8,
    };
    let src: Vec<Vec<String>> = vec![toks("x y z"), toks("y"), toks("z x")];
    let tgt: Vec<Vec<String>> = vec![toks("p q r s"), toks("q"), toks("s p")];
    let sv = Vocab::build(&src, 1, None);
    let tv = Vocab::build(&tgt, 1, Some(DEFAULT_MARKER));
    assert!(sv.len() <= 10 && tv.len() <= 10);
    let model = Model::<f64>::new(config, sv, tv, seed);
    let batch = vec![
        model.encode_pair(
            &toks("x y z"),
            &vec!["p", "q", DEFAULT_MARKER, "r", "s"]
                .into_iter()
                .map(String::from)
                .collect::<Vec<_>>(),
        ),
        model.encode_pair(&toks("y"), &toks("q")),
        model.encode_pair(&toks("z w x"), &toks("s p p")),
    ];
    (model, batch)
}

fn gradient_check_criterion() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut checked = 0;
    for seed in 0..3 {
        let (mut model, batch) = grad_fixture(seed);
        for t in &mut model.params.tensors {
            t.data.iter_mut().for_each(|x| *x *= GRAD_WEIGHT_SCALE);
        }
        let r = gradient_check(&model, &batch, GRAD_EPSILON).unwrap();
        checked += r.checked;
        if r.max_relative_error > worst {
            worst = r.max_relative_error;
            worst_at = format!("seed {seed} {}", r.worst_parameter);
        }
    }
    let (model, batch) = grad_fixture(0);
    let at_init = gradient_check(&model, &batch, 1e-5).unwrap();

    let constant = constant_output_model(&model);
    let b = output_bias_index(&constant);
    let mut grads = constant.params.zeros_like();
    for p in &batch {
        constant.accumulate_gradient(p, 1.0, &mut grads);
    }
    let probs = softmax(&constant.params.tensors[b].data);
    let mut expected: Vec<f64> = vec![0.0; probs.len()];
    for p in &batch {
        for &y in p.target.iter().chain([Vocab::EOS].iter()) {
            for (e, q) in expected.iter_mut().zip(&probs) {
                *e += q;
            }
            expected[y] -= 1.0;
        }
    }
    let bias_gap = grads.tensors[b]
        .data
        .iter()
        .zip(&expected)
        .map(|(g, e)| (g - e).abs())
        .fold(0.0, f64::max);
    check(
        bias_gap < 1e-9,
        format!("output bias gradient off by {bias_gap:e}"),
    )?;
    let stray = grads
        .tensors
        .iter()
        .enumerate()
        .filter(|(i, t)| *i != b && t.name != "out.w")
        .flat_map(|(_, t)| &t.data)
        .fold(0.0f64, |m, g| m.max(g.abs()));
    check(
        stray == 0.0,
        format!("constant model leaks gradient {stray:e}"),
    )?;
    let cr = gradient_check(&constant, &batch, GRAD_EPSILON).unwrap();
    check(
        cr.max_relative_error < GRAD_TOLERANCE,
        format!("constant model gradient check {:e}", cr.max_relative_error),
    )?;

    check(
        worst < GRAD_TOLERANCE,
        format!("max relative error {worst:e} at {worst_at}"),
    )?;
    Ok(format!(
        "{checked} parameters, max relative error {worst:.2e} (weights x{GRAD_WEIGHT_SCALE}, eps {GRAD_EPSILON}); \
         at default init {:.2e} ({}), not gated",
        at_init.max_relative_error, at_init.worst_parameter
    ))
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut decodes = 0;
    let mut averaged = 0;
    let mut worst = 0.0f64;
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let phones: Vec<String> = (0..9).map(|i| format!("p{i}")).collect();
    while decodes < 1000 {
        let config = ModelConfig {
            source_embedding: rng.random_range(2..=12),
            encoder_hidden: rng.random_range(2..=12),
            target_embedding: rng.random_range(2..=12),
            decoder_hidden: rng.random_range(2..=12),
            attention_hidden: rng.random_range(2..=12),
        };
        // Vocabularies cover only part of the symbols, so decodes see UNK.
        let sv = Vocab::build(&[words[..8].to_vec()], 1, None);
        let tv = Vocab::build(&[phones[..6].to_vec()], 1, Some(DEFAULT_MARKER));
        let scale = [0.1, 1.0, 5.0, 20.0][rng.random_range(0..4)];
        let mut models = Vec::new();
        for _ in 0..3 {
            let mut m = Model::<f32>::new(config, sv.clone(), tv.clone(), rng.random());
            for t in &mut m.params.tensors {
                t.data.iter_mut().for_each(|x| *x *= scale as f32);
            }
            models.push(m);
        }
        for _ in 0..10 {
            let a = rng.random_range(1..=15);
            let t = rng.random_range(1..=40);
            let src: Vec<String> = (0..a)
                .map(|_| words[rng.random_range(0..12)].clone())
                .collect();
            let tgt: Vec<String> = (0..t)
                .map(|_| phones[rng.random_range(0..9)].clone())
                .collect();
            let ms: Vec<SoftAlignmentMatrix> = models
                .iter()
                .map(|m| m.forced_decode_matrix(&src, &tgt).unwrap())
                .collect();
            for m in &ms {
                for row in m.rows() {
                    let s: f64 = row.iter().sum();
                    worst = worst.max((s - 1.0).abs());
                    check(row.iter().all(|&x| x >= 0.0), "negative attention weight")?;
                }
                decodes += 1;
            }
            let avg = average_matrices(&ms).unwrap();
            check(avg.is_row_stochastic(), "average is not row-stochastic")?;
            averaged += 1;
        }
    }
    check(worst <= ROW_TOLERANCE, format!("row sum off by {worst:e}"))?;
    Ok(format!(
        "{decodes} decodes, {averaged} averages, max |row sum - 1| {worst:.1e}"
    ))
}

fn boundary_f(corpus: &ParallelCorpus, segs: &[Segmentation]) -> f64 {
    let gold: Vec<Segmentation> = corpus
        .pairs
        .iter()
        .map(|p| p.gold.clone().unwrap())
        .collect();
    corpus_boundary_prf(&gold, segs).unwrap().f1
}

fn bilingual() -> &'static ParallelCorpus {
    static CORPUS: OnceLock<ParallelCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| bilingual_corpus(&BilingualSpec::default()))
}

fn neural_hyper() -> Hyperparams {
    let mut h = Hyperparams::default();
    h.set("epochs", NEURAL_EPOCHS).unwrap();
    h
}

/// Attention-only run on the bilingual corpus and its boundary F.
fn neural_run() -> &'static (NeuralRun, f64) {
    static RUN: OnceLock<(NeuralRun, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let corpus = bilingual();
        let targets: Vec<Vec<String>> = corpus
            .pairs
            .iter()
            .map(|p| p.target_phonemes.clone())
            .collect();
        let run = train_and_align(corpus, &targets, None, &SEEDS, &neural_hyper()).unwrap();
        let segs: Vec<Segmentation> = run
            .matrices
            .iter()
            .map(|m| attention_segment(m).segmentation)
            .collect();
        let f = boundary_f(corpus, &segs);
        (run, f)
    })
}

fn synthetic_bilingual() -> Outcome {
    let corpus = bilingual();
    let (run, f) = neural_run();
    let prop: Vec<Segmentation> = corpus
        .pairs
        .iter()
        .map(|p| proportional_segment_words(&p.source_tokens, p.target_phonemes.len()))
        .collect();
    let fp = boundary_f(corpus, &prop);
    let detail = format!(
        "neural F {f:.4} (min {NEURAL_MIN_F}), proportional F {fp:.4}, best epochs {:?}, BLEU {:.1}",
        run.logs.iter().map(|l| l.best_epoch).collect::<Vec<_>>(),
        run.bleu.unwrap_or(f64::NAN)
    );
    check(*f >= NEURAL_MIN_F && fp < *f, detail.clone())?;
    Ok(detail)
}

fn synthetic_bayes() -> Outcome {
    let corpus = zipf_corpus(&ZipfSpec::default());
    let utts: Vec<Vec<String>> = corpus
        .pairs
        .iter()
        .map(|p| p.target_phonemes.clone())
        .collect();
    let hp = BayesHyperparams::for_corpus(&utts).unwrap();
    let r = segment_corpus(&utts, &hp, &GibbsConfig::default()).unwrap();
    let f = boundary_f(&corpus, &r.segmentations);
    let detail = format!(
        "boundary F {f:.4} (min {BAYES_MIN_F}), {} types",
        r.lexicon.num_types()
    );
    check(f >= BAYES_MIN_F, detail.clone())?;
    Ok(detail)
}

fn hybrid_integrity() -> Outcome {
    let corpus = bilingual();
    let marker = DEFAULT_MARKER;

    let dir = tempfile::tempdir().unwrap();
    let mut hyper = Hyperparams::default();
    hyper.set("epochs", HYBRID_SMOKE_EPOCHS).unwrap();
    let report = run_corpus(corpus, Mode::Hybrid, &SEEDS, &hyper, dir.path()).unwrap();
    let seg_text = std::fs::read_to_string(dir.path().join("segmentation.tsv")).unwrap();
    check(!seg_text.contains(marker), "marker in segmentation.tsv")?;
    for s in SEEDS {
        let hyp =
            std::fs::read_to_string(dir.path().join(format!("bleu-hyp-seed{s}.txt"))).unwrap();
        check(
            !hyp.contains(marker),
            format!("marker in BLEU hypotheses of seed {s}"),
        )?;
    }
    let mut marker_rows = 0;
    for entry in std::fs::read_dir(dir.path().join("matrices")).unwrap() {
        let (m, _) = load_matrix(entry.unwrap().path()).unwrap();
        marker_rows += m.target_symbols().iter().filter(|s| *s == marker).count();
    }
    check(marker_rows > 0, "no marker rows reached the neural model")?;

    let gold: Vec<Segmentation> = corpus
        .pairs
        .iter()
        .map(|p| p.gold.clone().unwrap())
        .collect();
    let targets = augmented_targets(corpus, &gold, marker).unwrap();
    let oracle = train_and_align(corpus, &targets, Some(marker), &SEEDS, &neural_hyper()).unwrap();
    let segs: Vec<Segmentation> = oracle
        .matrices
        .iter()
        .map(|m| hybrid_segment(m, marker).segmentation)
        .collect();
    let fh = boundary_f(corpus, &segs);
    let (_, fn_) = neural_run();
    let detail = format!(
        "end-to-end F {:.4}, {marker_rows} marker rows; oracle hybrid F {fh:.4} vs neural F {fn_:.4}",
        report.eval.boundary.f1
    );
    check(fh >= *fn_, detail.clone())?;
    Ok(detail)
}

fn ane_and_ranking() -> Outcome {
    let names = |n: usize, p: &str| -> Vec<String> { (0..n).map(|i| format!("{p}{i}")).collect() };
    let onehot = SoftAlignmentMatrix::from_rows(
        &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        names(3, "s"),
        names(2, "t"),
    )
    .unwrap();
    close(
        average_normalized_entropy(&onehot),
        0.0,
        ANE_TOLERANCE,
        "one-hot",
    )?;
    let uniform =
        SoftAlignmentMatrix::from_rows(&vec![vec![0.25; 4]; 3], names(4, "s"), names(3, "t"))
            .unwrap();
    close(
        average_normalized_entropy(&uniform),
        1.0,
        ANE_TOLERANCE,
        "uniform",
    )?;
    let mixed = SoftAlignmentMatrix::from_rows(
        &[vec![1.0, 0.0], vec![0.5, 0.5]],
        names(2, "s"),
        names(2, "t"),
    )
    .unwrap();
    close(
        average_normalized_entropy(&mixed),
        0.5,
        ANE_TOLERANCE,
        "mixed 2x2",
    )?;
    let skew =
        SoftAlignmentMatrix::from_rows(&[vec![0.5, 0.25, 0.25]], names(3, "s"), names(1, "t"))
            .unwrap();
    close(
        average_normalized_entropy(&skew),
        0.946_394_630_357_186,
        ANE_TOLERANCE,
        "skewed row",
    )?;
    let single =
        SoftAlignmentMatrix::from_rows(&[vec![1.0], vec![1.0]], names(1, "s"), names(2, "t"))
            .unwrap();
    close(
        average_normalized_entropy(&single),
        0.0,
        0.0,
        "single column",
    )?;

    let target = toks("a b c d");
    let src = toks("x y");
    let align = |b: &[usize], spans: Vec<usize>| AlignedSegmentation {
        segmentation: seg(4, b),
        span_alignments: spans,
        source_tokens: src.clone(),
    };
    let confident = align(&[2], vec![0, 1]);
    let vague = align(&[1], vec![1, 0]);
    let repeat = align(&[2], vec![0, 0]);
    let inputs = [
        RankInput {
            alignment: &vague,
            target_symbols: &target,
            ane: 0.9,
        },
        RankInput {
            alignment: &confident,
            target_symbols: &target,
            ane: 0.1,
        },
        RankInput {
            alignment: &repeat,
            target_symbols: &target,
            ane: 0.5,
        },
    ];
    let ranking = rank_alignments(&inputs);
    check(
        ranking.windows(2).all(|w| w[0].ane <= w[1].ane),
        "ranking not ascending",
    )?;
    let first: HashSet<(&str, &str)> = ranking
        .iter()
        .take_while(|e| e.ane == 0.1)
        .map(|e| (e.target.as_str(), e.source.as_str()))
        .collect();
    check(
        first == HashSet::from([("ab", "x"), ("cd", "y")]),
        format!("first entries {first:?}"),
    )?;
    let ab = ranking
        .iter()
        .find(|e| e.target == "ab" && e.source == "x")
        .unwrap();
    check(
        ab.frequency == 2 && ab.ane == 0.1,
        "duplicate pair not merged",
    )?;
    Ok(format!("{} ranked entries", ranking.len()))
}

fn write_grid_corpora(dir: &Path) {
    let spec = BilingualSpec {
        sentences: 40,
        lexicon: wordseg::synth::LexiconSpec {
            words: 12,
            min_phonemes: 2,
            max_phonemes: 4,
            inventory: 8,
        },
        min_words: 2,
        max_words: 4,
        seed: 5,
    };
    let corpus = bilingual_corpus(&spec);
    std::fs::write(dir.join("aa.tsv"), corpus.to_tsv()).unwrap();
    // The second language swaps the roles of words and phonemes.
    let mut swapped = String::new();
    for p in &corpus.pairs {
        let words = p.gold_words().unwrap().join(" ");
        let phones: Vec<String> = p
            .source_tokens
            .iter()
            .map(|w| w.chars().map(String::from).collect::<Vec<_>>().join(""))
            .collect();
        swapped.push_str(&format!("{}\t{words}\t{}\n", p.id, phones.join(" ")));
    }
    std::fs::write(dir.join("bb.tsv"), swapped).unwrap();
}

fn tree_bytes(root: &Path, names: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if names.iter().any(|n| p.file_name().unwrap() == *n) {
                out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_grid_corpora(dir.path());
    let compared = ["report.tsv", "segmentation.tsv", "ranking.tsv"];
    let mut files = 0;
    for mode in Mode::ALL {
        let text = format!(
            "[corpora]\naa = aa.tsv\nbb = bb.tsv\n\n[experiment]\nmode = {mode}\nseeds = 1 2\noutput = out-{mode}\n\n\
             [hyperparameters]\nepochs = 2\nsweeps = 50\nsource_embedding = 8\nencoder_hidden = 8\n\
             target_embedding = 8\ndecoder_hidden = 8\nattention_hidden = 8\n"
        );
        let manifest = ExperimentManifest::parse(&text, dir.path()).unwrap();
        let first = run_grid(&manifest).unwrap();
        check(
            first
                .iter()
                .all(|o| matches!(o.status, PairStatus::Computed(_))),
            format!("{mode}: first run did not compute every pair"),
        )?;
        let before = tree_bytes(&manifest.output, &compared);
        for o in &first {
            std::fs::remove_dir_all(manifest.run_dir(&o.source, &o.target)).unwrap();
        }
        run_grid(&manifest).unwrap();
        let again = tree_bytes(&manifest.output, &compared);
        check(
            before == again,
            format!("{mode}: rerun changed output bytes"),
        )?;

        let all = tree_bytes(
            &manifest.output,
            &[
                "report.tsv",
                "segmentation.tsv",
                "timing.tsv",
                "model-seed1.ckpt",
            ],
        );
        let resumed = run_grid(&manifest).unwrap();
        check(
            resumed
                .iter()
                .all(|o| matches!(o.status, PairStatus::Resumed(_))),
            format!("{mode}: resume recomputed a pair"),
        )?;
        check(
            all == tree_bytes(
                &manifest.output,
                &[
                    "report.tsv",
                    "segmentation.tsv",
                    "timing.tsv",
                    "model-seed1.ckpt",
                ],
            ),
            format!("{mode}: resume touched files"),
        )?;
        files += before.len();
    }
    Ok(format!(
        "4 modes x 2 pairs, {files} files byte-identical, resume computed nothing"
    ))
}

fn mass_dataset() -> Option<Outcome> {
    None
}

struct Criterion {
    name: &'static str,
    run: fn() -> Option<Outcome>,
}

macro_rules! criterion {
    ($name:expr, $f:expr) => {
        Criterion {
            name: $name,
            run: || Some($f()),
        }
    };
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria = [
        criterion!("metric oracles", metric_oracles),
        criterion!("gradient check", gradient_check_criterion),
        criterion!("attention invariants", attention_invariants),
        criterion!("synthetic bilingual recovery", synthetic_bilingual),
        criterion!("synthetic bayesian recovery", synthetic_bayes),
        criterion!("hybrid pipeline integrity", hybrid_integrity),
        criterion!("ane bounds and ordering", ane_and_ranking),
        criterion!("determinism", determinism),
        Criterion {
            name: "mass dataset (optional)",
            run: mass_dataset,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Some(Err(format!("panicked: {msg}")))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Some(Ok(detail)) => println!("[PASS] {} ({secs:.1}s): {detail}", c.name),
            Some(Err(detail)) => {
                failed += 1;
                println!("[FAIL] {} ({secs:.1}s): {detail}", c.name)
            }
            None => println!("[SKIP] {}: corpus not available", c.name),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

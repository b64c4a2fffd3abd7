//! Seeded synthetic corpora with known segmentations.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Segmentation, UtterancePair};

/// Single-character phoneme symbols used by the generators.
pub const PHONEMES: &str = "aeioubdfgklmnprstvzhjwxcq";

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconSpec {
    pub words: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Number of distinct phoneme symbols drawn from [`PHONEMES`].
    pub inventory: usize,
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[char], min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect()
}

/// Distinct phoneme strings, one per lexicon entry.
pub fn phoneme_lexicon(spec: &LexiconSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let alphabet: Vec<char> = PHONEMES.chars().take(spec.inventory).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(spec.words);
    while out.len() < spec.words {
        let w = random_word(rng, &alphabet, spec.min_phonemes, spec.max_phonemes);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pair_from_words(id: String, source: Vec<String>, words: &[&str]) -> UtterancePair {
    let lengths: Vec<usize> = words.iter().map(|w| w.chars().count()).collect();
    let phonemes: Vec<String> = words
        .iter()
        .flat_map(|w| w.chars())
        .map(String::from)
        .collect();
    let gold = Segmentation::from_word_lengths(&lengths).expect("nonempty words");
    UtterancePair::new(id, source, phonemes, Some(gold)).expect("nonempty pair")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilingualSpec {
    pub lexicon: LexiconSpec,
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for BilingualSpec {
    fn default() -> Self {
        Self {
            lexicon: LexiconSpec {
                words: 50,
                min_phonemes: 3,
                max_phonemes: 8,
                inventory: 20,
            },
            sentences: 3000,
            min_words: 3,
            max_words: 10,
            seed: 2020,
        }
    }
}

/// Translation words paired with the concatenated phoneme strings of their
/// one-to-one target words, in the same order. Source spellings have
/// lengths unrelated to their phoneme strings.
pub fn bilingual_corpus(spec: &BilingualSpec) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let targets = phoneme_lexicon(&spec.lexicon, &mut rng);
    let letters: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
    let mut seen = HashSet::new();
    let mut sources = Vec::with_capacity(targets.len());
    while sources.len() < targets.len() {
        let w = random_word(&mut rng, &letters, 2, 9);
        if seen.insert(w.clone()) {
            sources.push(w);
        }
    }
    let pairs = (0..spec.sentences)
        .map(|i| {
            let n = rng.random_range(spec.min_words..=spec.max_words);
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..targets.len())).collect();
            let src = picks.iter().map(|&k| sources[k].clone()).collect();
            let words: Vec<&str> = picks.iter().map(|&k| targets[k].as_str()).collect();
            pair_from_words(format!("s{i:05}"), src, &words)
        })
        .collect();
    ParallelCorpus::new("src", "tgt", pairs).expect("unique ids")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfSpec {
    pub lexicon: LexiconSpec,
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for ZipfSpec {
    fn default() -> Self {
        Self {
            lexicon: LexiconSpec {
                words: 100,
                min_phonemes: 2,
                max_phonemes: 6,
                inventory: 20,
            },
            utterances: 5000,
            min_words: 2,
            max_words: 6,
            seed: 2019,
        }
    }
}

/// Utterances of words drawn independently with probability proportional
/// to `1 / rank`. The source side carries the word labels.
pub fn zipf_corpus(spec: &ZipfSpec) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let words = phoneme_lexicon(&spec.lexicon, &mut rng);
    let mut cumulative = Vec::with_capacity(words.len());
    let mut acc = 0.0;
    for r in 1..=words.len() {
        acc += 1.0 / r as f64;
        cumulative.push(acc);
    }
    let pairs = (0..spec.utterances)
        .map(|i| {
            let n = rng.random_range(spec.min_words..=spec.max_words);
            let picks: Vec<usize> = (0..n)
                .map(|_| {
                    let u = rng.random::<f64>() * acc;
                    cumulative.partition_point(|&c| c < u).min(words.len() - 1)
                })
                .collect();
            let src = picks.iter().map(|k| format!("w{k}")).collect();
            let ws: Vec<&str> = picks.iter().map(|&k| words[k].as_str()).collect();
            pair_from_words(format!("u{i:05}"), src, &ws)
        })
        .collect();
    ParallelCorpus::new("labels", "tgt", pairs).expect("unique ids")
}

/// Copy task: target symbols equal the source tokens.
pub fn copy_corpus(
    pairs: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..pairs)
        .map(|i| {
            let n = rng.random_range(min_len..=max_len);
            let toks: Vec<String> = (0..n)
                .map(|_| format!("t{}", rng.random_range(0..vocab)))
                .collect();
            let gold = Segmentation::from_word_lengths(&vec![1; n]).expect("nonempty");
            UtterancePair::new(format!("c{i:05}"), toks.clone(), toks, Some(gold))
                .expect("nonempty")
        })
        .collect();
    ParallelCorpus::new("a", "a", out).expect("unique ids")
}

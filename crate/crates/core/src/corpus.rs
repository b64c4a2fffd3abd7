//! Parallel corpus ingestion, filtering, train/valid splitting and the
//! soft-boundary augmentation used by the hybrid pipeline.
//!
//! Corpora are read from a three-field TSV format:
//!
//! ```text
//! id<TAB>source words<TAB>target phonemes, spaces at word boundaries
//! ```
//!
//! The spacing of the third field gives the gold segmentation; the
//! phonemes themselves are recovered with an [`Inventory`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved symbol standing for a monolingual boundary inside an
/// augmented phoneme sequence.
pub const DEFAULT_MARKER: &str = "‹B›";

/// A set of boundary positions over a phoneme sequence of length `len`.
///
/// Position `b` means "boundary after the `b`-th phoneme", so valid
/// positions satisfy `0 < b < len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    len: usize,
    boundaries: Vec<usize>,
}

impl Segmentation {
    /// Builds a segmentation from arbitrary boundary positions. Positions
    /// are sorted and deduplicated; anything outside `(0, len)` is rejected.
    pub fn new(len: usize, boundaries: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = boundaries.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&b| b == 0 || b >= len) {
            return Err(Error::Segmentation(format!(
                "boundary {bad} outside (0, {len})"
            )));
        }
        Ok(Self {
            len,
            boundaries: set.into_iter().collect(),
        })
    }

    /// Unsegmented sequence of `len` symbols.
    pub fn unsegmented(len: usize) -> Self {
        Self {
            len,
            boundaries: Vec::new(),
        }
    }

    /// Segmentation whose words have the given lengths (all must be ≥ 1).
    pub fn from_word_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.contains(&0) {
            return Err(Error::Segmentation("zero-length word".into()));
        }
        let len = lengths.iter().sum();
        let mut acc = 0;
        let mut boundaries = Vec::with_capacity(lengths.len().saturating_sub(1));
        for &l in &lengths[..lengths.len().saturating_sub(1)] {
            acc += l;
            boundaries.push(acc);
        }
        Ok(Self { len, boundaries })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_words(&self) -> usize {
        if self.len == 0 {
            0
        } else {
            self.boundaries.len() + 1
        }
    }

    /// Word spans tiling `[0, len)`.
    pub fn spans(&self) -> Vec<Range<usize>> {
        if self.len == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for &b in &self.boundaries {
            out.push(start..b);
            start = b;
        }
        out.push(start..self.len);
        out
    }

    /// The words this segmentation induces over `symbols`, each joined into
    /// one string.
    pub fn words<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<String> {
        debug_assert_eq!(symbols.len(), self.len);
        self.spans()
            .into_iter()
            .map(|r| symbols[r].iter().map(AsRef::as_ref).collect())
            .collect()
    }

    /// Renders `symbols` with a space at each boundary, as in the corpus
    /// TSV third field.
    pub fn render<S: AsRef<str>>(&self, symbols: &[S]) -> String {
        self.words(symbols).join(" ")
    }
}

/// Phoneme symbol inventory driving tokenization of the target field.
///
/// Tokenization is greedy longest-match against the declared symbols; a
/// character not covered by any symbol is an error. Without a declared
/// inventory every Unicode scalar value is its own symbol.
#[derive(Debug, Clone, Default)]
pub struct Inventory {
    symbols: HashSet<String>,
    max_chars: usize,
}

impl Inventory {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Self {
        let symbols: HashSet<String> = symbols
            .into_iter()
            .map(Into::into)
            .filter(|s: &String| !s.is_empty())
            .collect();
        let max_chars = symbols.iter().map(|s| s.chars().count()).max().unwrap_or(0);
        Self { symbols, max_chars }
    }

    /// Reads a sidecar file with one symbol per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
        ))
    }

    pub fn is_declared(&self) -> bool {
        !self.symbols.is_empty()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.symbols.contains(symbol)
    }

    pub fn tokenize(&self, word: &str) -> Result<Vec<String>> {
        if !self.is_declared() {
            return Ok(word.chars().map(String::from).collect());
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < chars.len() {
            let longest = self.max_chars.min(chars.len() - i);
            for n in (1..=longest).rev() {
                let start = chars[i].0;
                let end = chars.get(i + n).map_or(word.len(), |c| c.0);
                let candidate = &word[start..end];
                if self.symbols.contains(candidate) {
                    out.push(candidate.to_string());
                    i += n;
                    continue 'outer;
                }
            }
            return Err(Error::UnknownSymbol(chars[i].1.to_string()));
        }
        Ok(out)
    }
}

/// One sentence id with its translation words and unsegmented phonemes.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePair {
    pub id: String,
    pub source_tokens: Vec<String>,
    pub target_phonemes: Vec<String>,
    pub gold: Option<Segmentation>,
}

impl UtterancePair {
    pub fn new(
        id: impl Into<String>,
        source_tokens: Vec<String>,
        target_phonemes: Vec<String>,
        gold: Option<Segmentation>,
    ) -> Result<Self> {
        let id = id.into();
        if source_tokens.is_empty() {
            return Err(Error::invalid(format!("utterance `{id}`: empty source")));
        }
        if target_phonemes.is_empty() {
            return Err(Error::invalid(format!("utterance `{id}`: empty target")));
        }
        if let Some(g) = &gold {
            if g.len() != target_phonemes.len() {
                return Err(Error::Segmentation(format!(
                    "utterance `{id}`: gold covers {} phonemes, target has {}",
                    g.len(),
                    target_phonemes.len()
                )));
            }
        }
        Ok(Self {
            id,
            source_tokens,
            target_phonemes,
            gold,
        })
    }

    /// Gold target words as joined phoneme strings.
    pub fn gold_words(&self) -> Option<Vec<String>> {
        self.gold.as_ref().map(|g| g.words(&self.target_phonemes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub source_language: String,
    pub target_language: String,
    pub pairs: Vec<UtterancePair>,
}

impl ParallelCorpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(
        source_language: impl Into<String>,
        target_language: impl Into<String>,
        pairs: Vec<UtterancePair>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, p) in pairs.iter().enumerate() {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: p.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            source_language: source_language.into(),
            target_language: target_language.into(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    /// Same languages, different pairs.
    pub fn with_pairs(&self, pairs: Vec<UtterancePair>) -> Self {
        Self {
            source_language: self.source_language.clone(),
            target_language: self.target_language.clone(),
            pairs,
        }
    }

    /// Renders the corpus back into the TSV interchange format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            let target = match &p.gold {
                Some(g) => g.render(&p.target_phonemes),
                None => p.target_phonemes.concat(),
            };
            let _ = writeln!(out, "{}\t{}\t{}", p.id, p.source_tokens.join(" "), target);
        }
        out
    }
}

/// Parses corpus TSV text. See [`load_corpus`].
pub fn parse_corpus(
    text: &str,
    source_lang: &str,
    target_lang: &str,
    inventory: &Inventory,
) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if seen.insert(id.to_string(), line_no).is_some() {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                line: line_no,
            });
        }
        let source: Vec<String> = fields[1].split_whitespace().map(String::from).collect();
        let mut phonemes = Vec::new();
        let mut lengths = Vec::new();
        for word in fields[2].split_whitespace() {
            let symbols = inventory.tokenize(word).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            lengths.push(symbols.len());
            phonemes.extend(symbols);
        }
        let gold = Segmentation::from_word_lengths(&lengths).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let pair =
            UtterancePair::new(id, source, phonemes, Some(gold)).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        pairs.push(pair);
    }
    Ok(ParallelCorpus {
        source_language: source_lang.to_string(),
        target_language: target_lang.to_string(),
        pairs,
    })
}

/// Loads a three-field TSV corpus. Blank lines are skipped; an empty file
/// yields an empty corpus.
pub fn load_corpus(
    path: impl AsRef<Path>,
    source_lang: &str,
    target_lang: &str,
    inventory: &Inventory,
) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, source_lang, target_lang, inventory)
}

/// Number of tokens on one side of an utterance: source words, or gold
/// target words.
fn side_tokens(pair: &UtterancePair, side: Side) -> usize {
    match side {
        Side::Source => pair.source_tokens.len(),
        Side::Target => pair.gold.as_ref().map_or(1, Segmentation::num_words),
    }
}

/// Keeps the pairs whose pivot sentence has at most `max_tokens` tokens on
/// `pivot_side`, in their original order.
pub fn filter_by_length(
    corpus: &ParallelCorpus,
    pivot: &ParallelCorpus,
    pivot_side: Side,
    max_tokens: usize,
) -> Result<ParallelCorpus> {
    let lengths: HashMap<&str, usize> = pivot
        .pairs
        .iter()
        .map(|p| (p.id.as_str(), side_tokens(p, pivot_side)))
        .collect();
    let missing: Vec<String> = corpus
        .ids()
        .filter(|id| !lengths.contains_key(id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPivotIds(missing));
    }
    let kept = corpus
        .pairs
        .iter()
        .filter(|p| lengths[p.id.as_str()] <= max_tokens)
        .cloned()
        .collect();
    Ok(corpus.with_pairs(kept))
}

fn split_key(id: &str, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// The ids selected for validation. Depends only on the id set and the
/// seed, so corpora sharing ids share the split.
pub fn valid_ids(ids: &[&str], valid_fraction: f64, seed: u64) -> HashSet<String> {
    let mut sorted: Vec<&str> = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let n_valid = (valid_fraction * sorted.len() as f64).round() as usize;
    let mut keyed: Vec<([u8; 32], &str)> =
        sorted.iter().map(|id| (split_key(id, seed), *id)).collect();
    keyed.sort_unstable();
    keyed
        .into_iter()
        .take(n_valid)
        .map(|(_, id)| id.to_string())
        .collect()
}

/// Splits into `(train, valid)` with `|valid| = round(valid_fraction·N)`.
pub fn split_train_valid(
    corpus: &ParallelCorpus,
    valid_fraction: f64,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "valid fraction must lie in (0, 1), got {valid_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid(
            "cannot split a corpus with fewer than 2 pairs",
        ));
    }
    let ids: Vec<&str> = corpus.ids().collect();
    let valid = valid_ids(&ids, valid_fraction, seed);
    let (v, t): (Vec<_>, Vec<_>) = corpus
        .pairs
        .iter()
        .cloned()
        .partition(|p| valid.contains(&p.id));
    Ok((corpus.with_pairs(t), corpus.with_pairs(v)))
}

/// Inserts `marker` at every boundary of `seg`.
pub fn insert_soft_boundaries(
    phonemes: &[String],
    seg: &Segmentation,
    marker: &str,
) -> Result<Vec<String>> {
    if seg.len() != phonemes.len() {
        return Err(Error::Segmentation(format!(
            "segmentation covers {} symbols, sequence has {}",
            seg.len(),
            phonemes.len()
        )));
    }
    if phonemes.iter().any(|p| p == marker) {
        return Err(Error::MarkerCollision(marker.to_string()));
    }
    let mut out = Vec::with_capacity(phonemes.len() + seg.boundaries().len());
    let mut next = seg.boundaries().iter().peekable();
    for (i, p) in phonemes.iter().enumerate() {
        if next.peek() == Some(&&i) {
            out.push(marker.to_string());
            next.next();
        }
        out.push(p.clone());
    }
    Ok(out)
}

/// Maps a hypothesized segmentation of an augmented sequence back onto the
/// original phonemes.
///
/// Markers are deleted. A marker inside a hypothesized word leaves no
/// boundary; a hypothesized boundary next to a marker lands between the
/// flanking phonemes. Duplicate and edge boundaries are dropped.
pub fn remove_soft_boundaries<S: AsRef<str>>(spans: &[Vec<S>], marker: &str) -> Segmentation {
    let mut count = 0usize;
    let mut boundaries = Vec::with_capacity(spans.len());
    for span in spans {
        count += span.iter().filter(|s| s.as_ref() != marker).count();
        boundaries.push(count);
    }
    let total = count;
    let set: BTreeSet<usize> = boundaries
        .into_iter()
        .filter(|&b| b > 0 && b < total)
        .collect();
    Segmentation {
        len: total,
        boundaries: set.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub types: usize,
    pub tokens: usize,
    /// Mean token length in characters (source side) or phonemes (target).
    pub mean_token_length: f64,
    pub mean_tokens_per_sentence: f64,
    /// Mean symbols per sentence: characters without spaces on the source
    /// side, phonemes on the target side.
    pub mean_symbols_per_sentence: f64,
}

/// Type/token statistics over one side of the corpus. Target-side tokens
/// are the gold words.
pub fn corpus_stats(corpus: &ParallelCorpus, side: Side) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("statistics of an empty corpus"));
    }
    let mut types: HashSet<String> = HashSet::new();
    let mut tokens = 0usize;
    let mut symbols = 0usize;
    for p in &corpus.pairs {
        match side {
            Side::Source => {
                for t in &p.source_tokens {
                    symbols += t.chars().count();
                    types.insert(t.clone());
                    tokens += 1;
                }
            }
            Side::Target => {
                let seg = p
                    .gold
                    .clone()
                    .unwrap_or_else(|| Segmentation::unsegmented(p.target_phonemes.len()));
                for r in seg.spans() {
                    symbols += r.len();
                    types.insert(p.target_phonemes[r].concat());
                    tokens += 1;
                }
            }
        }
    }
    let n = corpus.len() as f64;
    Ok(CorpusStats {
        types: types.len(),
        tokens,
        mean_token_length: symbols as f64 / tokens as f64,
        mean_tokens_per_sentence: tokens as f64 / n,
        mean_symbols_per_sentence: symbols as f64 / n,
    })
}

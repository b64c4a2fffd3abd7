//! Segmentation, type-retrieval and translation scoring.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::corpus::Segmentation;
use crate::error::{Error, Result};

/// Boundary precision/recall/F over interior positions. Counts are kept so
/// scores aggregate over a corpus by summation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub proposed: usize,
    pub gold: usize,
    pub correct: usize,
}

impl BoundaryScore {
    pub fn from_counts(proposed: usize, gold: usize, correct: usize) -> Self {
        let precision = ratio(correct, proposed);
        let recall = ratio(correct, gold);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
            proposed,
            gold,
            correct,
        }
    }
}

impl std::ops::Add for BoundaryScore {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::from_counts(
            self.proposed + rhs.proposed,
            self.gold + rhs.gold,
            self.correct + rhs.correct,
        )
    }
}

impl std::iter::Sum for BoundaryScore {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores one utterance. Utterance edges are never counted.
pub fn boundary_prf(gold: &Segmentation, hyp: &Segmentation) -> Result<BoundaryScore> {
    if gold.len() != hyp.len() {
        return Err(Error::Shape(format!(
            "gold covers {} symbols, hypothesis {}",
            gold.len(),
            hyp.len()
        )));
    }
    let g = gold.boundaries();
    let h = hyp.boundaries();
    // Both lists are sorted.
    let (mut i, mut j, mut correct) = (0, 0, 0);
    while i < g.len() && j < h.len() {
        match g[i].cmp(&h[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                correct += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(BoundaryScore::from_counts(h.len(), g.len(), correct))
}

/// Sums per-utterance counts over aligned lists of segmentations.
pub fn corpus_boundary_prf(gold: &[Segmentation], hyp: &[Segmentation]) -> Result<BoundaryScore> {
    if gold.len() != hyp.len() {
        return Err(Error::Shape(format!(
            "{} gold segmentations, {} hypotheses",
            gold.len(),
            hyp.len()
        )));
    }
    gold.iter()
        .zip(hyp)
        .map(|(g, h)| boundary_prf(g, h))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().sum())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hyp_types: usize,
    pub gold_types: usize,
    pub correct: BTreeSet<String>,
}

/// Type retrieval: distinct hypothesized words that are also gold words.
/// Inputs are per-utterance word lists.
pub fn type_metrics<S: AsRef<str>>(gold: &[Vec<S>], hyp: &[Vec<S>]) -> TypeScore {
    let collect = |words: &[Vec<S>]| -> BTreeSet<String> {
        words
            .iter()
            .flatten()
            .map(|w| w.as_ref().to_string())
            .collect()
    };
    let g = collect(gold);
    let h = collect(hyp);
    let correct: BTreeSet<String> = h.intersection(&g).cloned().collect();
    let precision = ratio(correct.len(), h.len());
    let recall = ratio(correct.len(), g.len());
    TypeScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
        hyp_types: h.len(),
        gold_types: g.len(),
        correct,
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 with one reference per hypothesis, no smoothing,
/// on a 0–100 scale.
pub fn bleu4<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    const MAX_N: usize = 4;
    if hypotheses.is_empty() {
        return Err(Error::invalid("BLEU over an empty hypothesis set"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} hypotheses, {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let mut ref_total = [0usize; MAX_N];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_N {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, &c) in &hc {
                matched[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
            ref_total[n - 1] += r.len().saturating_sub(n - 1);
        }
    }
    // Orders longer than every sentence on both sides carry no evidence
    // and are left out of the geometric mean.
    let orders: Vec<usize> = (0..MAX_N)
        .filter(|&i| total[i] + ref_total[i] > 0)
        .collect();
    if orders.is_empty() || orders.iter().any(|&i| matched[i] == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = orders
        .iter()
        .map(|&i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / orders.len() as f64;
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok((100.0 * brevity * log_precision.exp()).clamp(0.0, 100.0))
}

/// Pearson's r with its two-tailed p-value from the t distribution with
/// `N − 2` degrees of freedom.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} xs, {} ys", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid(
            "Pearson correlation needs at least 3 points",
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("Pearson correlation of a constant series"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        // Two-tailed Student t tail: I_{df/(df+t²)}(df/2, 1/2).
        statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok((r, p))
}

/// Mean word length in symbols over all words of all segmentations.
pub fn mean_token_length(segmentations: &[Segmentation]) -> f64 {
    let (symbols, words) = segmentations.iter().fold((0usize, 0usize), |(s, w), seg| {
        (s + seg.len(), w + seg.num_words())
    });
    ratio(symbols, words)
}

/// Summary of one evaluated system output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub boundary: BoundaryScore,
    pub type_precision: f64,
    pub type_recall: f64,
    pub type_f1: f64,
    pub discovered_types: usize,
    pub mean_token_length: f64,
    pub bleu: Option<f64>,
    pub ane_mean: Option<f64>,
    pub ane_min: Option<f64>,
    pub ane_max: Option<f64>,
}

impl EvalReport {
    /// Scores hypothesized segmentations against gold over the same
    /// phoneme sequences.
    pub fn evaluate(
        phonemes: &[Vec<String>],
        gold: &[Segmentation],
        hyp: &[Segmentation],
    ) -> Result<Self> {
        let boundary = corpus_boundary_prf(gold, hyp)?;
        let words = |segs: &[Segmentation]| -> Vec<Vec<String>> {
            segs.iter().zip(phonemes).map(|(s, p)| s.words(p)).collect()
        };
        let types = type_metrics(&words(gold), &words(hyp));
        Ok(Self {
            boundary,
            type_precision: types.precision,
            type_recall: types.recall,
            type_f1: types.f1,
            discovered_types: types.hyp_types,
            mean_token_length: mean_token_length(hyp),
            ..Self::default()
        })
    }

    pub fn with_ane(mut self, ane: &[f64]) -> Self {
        if !ane.is_empty() {
            self.ane_mean = Some(ane.iter().sum::<f64>() / ane.len() as f64);
            self.ane_min = ane.iter().copied().reduce(f64::min);
            self.ane_max = ane.iter().copied().reduce(f64::max);
        }
        self
    }

    /// Flat `key<TAB>value` lines. Absent optional values are omitted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let b = &self.boundary;
        for (k, v) in [
            ("boundary_precision", b.precision),
            ("boundary_recall", b.recall),
            ("boundary_f1", b.f1),
        ] {
            let _ = writeln!(out, "{k}\t{v:.6}");
        }
        for (k, v) in [
            ("boundary_proposed", b.proposed),
            ("boundary_gold", b.gold),
            ("boundary_correct", b.correct),
        ] {
            let _ = writeln!(out, "{k}\t{v}");
        }
        for (k, v) in [
            ("type_precision", self.type_precision),
            ("type_recall", self.type_recall),
            ("type_f1", self.type_f1),
        ] {
            let _ = writeln!(out, "{k}\t{v:.6}");
        }
        let _ = writeln!(out, "discovered_types\t{}", self.discovered_types);
        let _ = writeln!(out, "mean_token_length\t{:.6}", self.mean_token_length);
        for (k, v) in [
            ("bleu", self.bleu),
            ("ane_mean", self.ane_mean),
            ("ane_min", self.ane_min),
            ("ane_max", self.ane_max),
        ] {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}\t{v:.6}");
            }
        }
        out
    }

    /// Reads the fields written by [`EvalReport::to_tsv`]. Lines with
    /// other keys are ignored.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut r = Self::default();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let Some((key, value)) = line.split_once('\t') else {
                continue;
            };
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("bad value `{value}` for {key}"),
            };
            let float = || value.parse::<f64>().map_err(|_| bad());
            let int = || value.parse::<usize>().map_err(|_| bad());
            match key {
                "boundary_precision" => r.boundary.precision = float()?,
                "boundary_recall" => r.boundary.recall = float()?,
                "boundary_f1" => r.boundary.f1 = float()?,
                "boundary_proposed" => r.boundary.proposed = int()?,
                "boundary_gold" => r.boundary.gold = int()?,
                "boundary_correct" => r.boundary.correct = int()?,
                "type_precision" => r.type_precision = float()?,
                "type_recall" => r.type_recall = float()?,
                "type_f1" => r.type_f1 = float()?,
                "discovered_types" => r.discovered_types = int()?,
                "mean_token_length" => r.mean_token_length = float()?,
                "bleu" => r.bleu = Some(float()?),
                "ane_mean" => r.ane_mean = Some(float()?),
                "ane_min" => r.ane_min = Some(float()?),
                "ane_max" => r.ane_max = Some(float()?),
                _ => continue,
            }
            seen.insert(key);
        }
        if let Some(missing) = [
            "boundary_f1",
            "type_f1",
            "discovered_types",
            "mean_token_length",
        ]
        .iter()
        .find(|k| !seen.contains(*k))
        {
            return Err(Error::Parse {
                line: 0,
                message: format!("report lacks {missing}"),
            });
        }
        Ok(r)
    }
}

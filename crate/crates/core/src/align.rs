//! From soft-alignment matrices to segmentations, the proportional
//! baseline, and confidence ranking by average normalized entropy.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::{remove_soft_boundaries, Segmentation};
use crate::neural::SoftAlignmentMatrix;

/// A segmentation of the target whose words each point at one source token.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSegmentation {
    pub segmentation: Segmentation,
    pub span_alignments: Vec<usize>,
    pub source_tokens: Vec<String>,
}

impl AlignedSegmentation {
    /// `(target word, aligned source token)` for each span.
    pub fn pairs<S: AsRef<str>>(&self, target: &[S]) -> Vec<(String, String)> {
        self.segmentation
            .words(target)
            .into_iter()
            .zip(&self.span_alignments)
            .map(|(w, &i)| (w, self.source_tokens[i].clone()))
            .collect()
    }
}

/// Source columns excluded from argmax competition, selected by token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnMask {
    pub tokens: HashSet<String>,
}

impl ColumnMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    fn allowed(&self, source: &[String]) -> Vec<bool> {
        let allowed: Vec<bool> = source.iter().map(|s| !self.tokens.contains(s)).collect();
        if allowed.iter().any(|&a| a) {
            allowed
        } else {
            vec![true; source.len()]
        }
    }
}

/// Index of the largest entry among allowed columns; ties go to the lowest
/// index.
fn argmax(row: &[f64], allowed: &[bool]) -> usize {
    let mut best = None;
    for (i, (&x, &ok)) in row.iter().zip(allowed).enumerate() {
        if ok && best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map_or(0, |(i, _)| i)
}

pub fn row_argmaxes(matrix: &SoftAlignmentMatrix, mask: &ColumnMask) -> Vec<usize> {
    let allowed = mask.allowed(matrix.source_tokens());
    matrix.rows().map(|r| argmax(r, &allowed)).collect()
}

/// Boundary between steps `t` and `t + 1` exactly where their argmax
/// source positions differ.
pub fn attention_segment(matrix: &SoftAlignmentMatrix) -> AlignedSegmentation {
    attention_segment_masked(matrix, &ColumnMask::none())
}

pub fn attention_segment_masked(
    matrix: &SoftAlignmentMatrix,
    mask: &ColumnMask,
) -> AlignedSegmentation {
    let peaks = row_argmaxes(matrix, mask);
    let boundaries: Vec<usize> = (1..peaks.len())
        .filter(|&t| peaks[t] != peaks[t - 1])
        .collect();
    let mut span_alignments = vec![peaks[0]];
    span_alignments.extend(boundaries.iter().map(|&b| peaks[b]));
    AlignedSegmentation {
        segmentation: Segmentation::new(peaks.len(), boundaries).expect("interior boundaries"),
        span_alignments,
        source_tokens: matrix.source_tokens().to_vec(),
    }
}

/// Attention segmentation of an augmented target, mapped back onto the
/// phonemes with markers removed.
pub fn hybrid_segment(matrix: &SoftAlignmentMatrix, marker: &str) -> AlignedSegmentation {
    hybrid_segment_masked(matrix, marker, &ColumnMask::none())
}

pub fn hybrid_segment_masked(
    matrix: &SoftAlignmentMatrix,
    marker: &str,
    mask: &ColumnMask,
) -> AlignedSegmentation {
    let augmented = attention_segment_masked(matrix, mask);
    let target = matrix.target_symbols();
    let spans: Vec<&[String]> = augmented
        .segmentation
        .spans()
        .into_iter()
        .map(|r| &target[r])
        .collect();
    let owned: Vec<Vec<&str>> = spans
        .iter()
        .map(|s| s.iter().map(String::as_str).collect())
        .collect();
    let segmentation = remove_soft_boundaries(&owned, marker);

    // Rows of the real phonemes, in order.
    let phoneme_rows: Vec<usize> = (0..target.len()).filter(|&t| target[t] != marker).collect();
    let allowed = mask.allowed(matrix.source_tokens());
    let span_alignments = segmentation
        .spans()
        .into_iter()
        .map(|r| {
            let mut mass = vec![0.0; matrix.shape().1];
            for &t in &phoneme_rows[r] {
                for (m, x) in mass.iter_mut().zip(matrix.row(t)) {
                    *m += x;
                }
            }
            argmax(&mass, &allowed)
        })
        .collect();
    AlignedSegmentation {
        segmentation,
        span_alignments,
        source_tokens: matrix.source_tokens().to_vec(),
    }
}

/// Allocates `target_len` phonemes to source words in proportion to their
/// lengths, rounding cumulative positions half-up.
pub fn proportional_segment(word_lengths: &[usize], target_len: usize) -> Segmentation {
    let total: usize = word_lengths.iter().sum();
    if total == 0 || target_len == 0 {
        return Segmentation::unsegmented(target_len);
    }
    let mut cum = 0usize;
    let mut boundaries = Vec::with_capacity(word_lengths.len());
    for &l in &word_lengths[..word_lengths.len() - 1] {
        cum += l;
        // round(T * cum / total), halves up, in integers.
        boundaries.push((2 * target_len * cum + total) / (2 * total));
    }
    Segmentation::new(
        target_len,
        boundaries.into_iter().filter(|&b| b > 0 && b < target_len),
    )
    .expect("filtered to interior")
}

/// Proportional baseline with lengths taken as character counts of the
/// source words.
pub fn proportional_segment_words<S: AsRef<str>>(source: &[S], target_len: usize) -> Segmentation {
    let lengths: Vec<usize> = source.iter().map(|w| w.as_ref().chars().count()).collect();
    proportional_segment(&lengths, target_len)
}

/// Mean over rows of `H(row) / ln A`; 0 when `A = 1`.
pub fn average_normalized_entropy(matrix: &SoftAlignmentMatrix) -> f64 {
    let (t, a) = matrix.shape();
    if a == 1 {
        return 0.0;
    }
    let norm = (a as f64).ln();
    let total: f64 = matrix
        .rows()
        .map(|r| {
            -r.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    (total / (t as f64 * norm)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEntry {
    pub target: String,
    pub source: String,
    pub ane: f64,
    pub frequency: usize,
}

/// One sentence's contribution to the ranking.
#[derive(Debug, Clone)]
pub struct RankInput<'a> {
    pub alignment: &'a AlignedSegmentation,
    pub target_symbols: &'a [String],
    pub ane: f64,
}

/// `(target word, source token)` pairs ordered by the ANE of the sentence
/// they came from, most confident first. Repeated pairs are merged, keeping
/// the lowest ANE and counting occurrences.
pub fn rank_alignments(inputs: &[RankInput<'_>]) -> Vec<ConfidenceEntry> {
    let mut merged: HashMap<(String, String), ConfidenceEntry> = HashMap::new();
    for inp in inputs {
        for (target, source) in inp.alignment.pairs(inp.target_symbols) {
            merged
                .entry((target.clone(), source.clone()))
                .and_modify(|e| {
                    e.frequency += 1;
                    e.ane = e.ane.min(inp.ane);
                })
                .or_insert(ConfidenceEntry {
                    target,
                    source,
                    ane: inp.ane,
                    frequency: 1,
                });
        }
    }
    let mut out: Vec<ConfidenceEntry> = merged.into_values().collect();
    out.sort_by(|a, b| {
        a.ane
            .total_cmp(&b.ane)
            .then(b.frequency.cmp(&a.frequency))
            .then_with(|| a.target.cmp(&b.target))
            .then_with(|| a.source.cmp(&b.source))
    });
    out
}

/// `ane<TAB>frequency<TAB>target-span<TAB>source-token` lines.
pub fn ranking_to_tsv(entries: &[ConfidenceEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(
            out,
            "{:.6}\t{}\t{}\t{}",
            e.ane, e.frequency, e.target, e.source
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopkIntersection {
    pub percentage: f64,
    /// Denominator actually used; below `k` when a ranking ran short.
    pub effective_k: usize,
    pub short: bool,
}

fn correct_types<'a>(
    ranking: &'a [ConfidenceEntry],
    gold: &HashSet<String>,
    k: usize,
) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .map(|e| e.target.as_str())
        .filter(|t| gold.contains(*t) && seen.insert(*t))
        .take(k)
        .collect()
}

/// Overlap of the top-`k` correct target types of two rankings, as a
/// percentage of `k`.
pub fn topk_type_intersection(
    ranking_a: &[ConfidenceEntry],
    ranking_b: &[ConfidenceEntry],
    gold: &HashSet<String>,
    k: usize,
) -> TopkIntersection {
    let a = correct_types(ranking_a, gold, k);
    let b = correct_types(ranking_b, gold, k);
    let effective_k = k.min(a.len().max(b.len()));
    let b_set: HashSet<&str> = b.iter().copied().collect();
    let shared = a.iter().filter(|t| b_set.contains(*t)).count();
    let percentage = if effective_k == 0 {
        0.0
    } else {
        shared as f64 / effective_k as f64 * 100.0
    };
    TopkIntersection {
        percentage,
        effective_k,
        short: effective_k < k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_MARKER;
    use proptest::prelude::*;

    fn toks(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    /// Matrix whose rows peak at the given source indices.
    fn peaked(peaks: &[usize], a: usize) -> SoftAlignmentMatrix {
        peaked_with(peaks, a, toks(peaks.len(), "t"))
    }

    fn peaked_with(peaks: &[usize], a: usize, target: Vec<String>) -> SoftAlignmentMatrix {
        let rows: Vec<Vec<f64>> = peaks
            .iter()
            .map(|&p| {
                let mut r = vec![0.1 / a as f64; a];
                r[p] += 0.9;
                r
            })
            .collect();
        SoftAlignmentMatrix::from_rows(&rows, toks(a, "s"), target).unwrap()
    }

    #[test]
    fn argmax_change_rule() {
        let s = attention_segment(&peaked(&[0, 0, 1, 1], 2));
        assert_eq!(s.segmentation.boundaries(), &[2]);
        assert_eq!(s.span_alignments, [0, 1]);

        let s = attention_segment(&peaked(&[0, 0, 0], 2));
        assert!(s.segmentation.boundaries().is_empty());
        assert_eq!(s.span_alignments, [0]);

        let s = attention_segment(&peaked(&[0, 1, 0], 2));
        assert_eq!(s.segmentation.boundaries(), &[1, 2]);
        assert_eq!(s.span_alignments, [0, 1, 0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = SoftAlignmentMatrix::from_rows(
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            toks(2, "s"),
            toks(2, "t"),
        )
        .unwrap();
        let s = attention_segment(&m);
        assert_eq!(s.span_alignments, [0, 1]);
    }

    #[test]
    fn mask_excludes_columns() {
        let m = peaked(&[1, 1, 0], 2);
        let mask = ColumnMask::new(["s1"]);
        let s = attention_segment_masked(&m, &mask);
        assert!(s.segmentation.boundaries().is_empty());
        // Masking every column falls back to all columns.
        let all = ColumnMask::new(["s0", "s1"]);
        assert_eq!(attention_segment_masked(&m, &all), attention_segment(&m));
    }

    #[test]
    fn hybrid_keeps_boundary_across_marker() {
        let target = vec!["a".to_string(), DEFAULT_MARKER.to_string(), "b".to_string()];
        let s = hybrid_segment(&peaked_with(&[0, 0, 1], 2, target), DEFAULT_MARKER);
        assert_eq!(s.segmentation.len(), 2);
        assert_eq!(s.segmentation.boundaries(), &[1]);
        assert_eq!(s.span_alignments, [0, 1]);
    }

    #[test]
    fn hybrid_removes_marker_inside_span() {
        let mut target: Vec<String> = "urat".chars().map(String::from).collect();
        target.push(DEFAULT_MARKER.into());
        target.extend("debine".chars().map(String::from));
        let m = peaked_with(&[0; 11], 2, target.clone());
        let s = hybrid_segment(&m, DEFAULT_MARKER);
        assert_eq!(s.segmentation.len(), 10);
        assert!(s.segmentation.boundaries().is_empty());
        let phon: Vec<&String> = target.iter().filter(|t| *t != DEFAULT_MARKER).collect();
        assert_eq!(s.pairs(&phon)[0].0, "uratdebine");
    }

    #[test]
    fn hybrid_without_markers_is_plain() {
        let m = peaked(&[0, 1, 1, 2, 0], 3);
        assert_eq!(hybrid_segment(&m, DEFAULT_MARKER), attention_segment(&m));
    }

    #[test]
    fn proportional_cases() {
        assert_eq!(proportional_segment(&[3, 3], 6).boundaries(), &[3]);
        assert_eq!(proportional_segment(&[1, 2], 6).boundaries(), &[2]);
        assert!(proportional_segment(&[5], 9).boundaries().is_empty());
        // 7 * 1/2 = 3.5 rounds up.
        assert_eq!(proportional_segment(&[1, 1], 7).boundaries(), &[4]);
        // Collisions and edges dropped.
        assert_eq!(proportional_segment(&[1, 1, 1, 1], 2).boundaries(), &[1]);
        assert_eq!(
            proportional_segment_words(&["ab", "abcd"], 3).boundaries(),
            &[1]
        );
    }

    #[test]
    fn ane_values() {
        let one_hot = SoftAlignmentMatrix::from_rows(
            &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            toks(3, "s"),
            toks(2, "t"),
        )
        .unwrap();
        assert_eq!(average_normalized_entropy(&one_hot), 0.0);

        let uniform = SoftAlignmentMatrix::from_rows(
            &[vec![0.25; 4], vec![0.25; 4]],
            toks(4, "s"),
            toks(2, "t"),
        )
        .unwrap();
        assert!((average_normalized_entropy(&uniform) - 1.0).abs() < 1e-12);

        let mixed = SoftAlignmentMatrix::from_rows(
            &[vec![1.0, 0.0], vec![0.5, 0.5]],
            toks(2, "s"),
            toks(2, "t"),
        )
        .unwrap();
        assert!((average_normalized_entropy(&mixed) - 0.5).abs() < 1e-9);

        let single =
            SoftAlignmentMatrix::from_rows(&[vec![1.0]], toks(1, "s"), toks(1, "t")).unwrap();
        assert_eq!(average_normalized_entropy(&single), 0.0);
    }

    #[test]
    fn ranking_sort_and_merge() {
        let a = attention_segment(&peaked(&[0, 0, 1], 2));
        let b = attention_segment(&peaked(&[0, 0, 0], 2));
        let ta: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
        let tb: Vec<String> = ["q", "q", "q"].map(String::from).to_vec();
        let ranked = rank_alignments(&[
            RankInput {
                alignment: &b,
                target_symbols: &tb,
                ane: 0.9,
            },
            RankInput {
                alignment: &a,
                target_symbols: &ta,
                ane: 0.1,
            },
        ]);
        assert_eq!(ranked[0].ane, 0.1);
        assert_eq!(ranked.last().unwrap().target, "qqq");
        assert!(ranked.windows(2).all(|w| w[0].ane <= w[1].ane));

        let twice = rank_alignments(&[
            RankInput {
                alignment: &a,
                target_symbols: &ta,
                ane: 0.4,
            },
            RankInput {
                alignment: &a,
                target_symbols: &ta,
                ane: 0.2,
            },
        ]);
        assert_eq!(twice.len(), 2);
        assert!(twice.iter().all(|e| e.frequency == 2 && e.ane == 0.2));
        assert!(ranking_to_tsv(&twice).starts_with("0.200000\t2\t"));
    }

    fn entries(targets: &[&str]) -> Vec<ConfidenceEntry> {
        targets
            .iter()
            .enumerate()
            .map(|(i, t)| ConfidenceEntry {
                target: t.to_string(),
                source: "s".into(),
                ane: i as f64 / 100.0,
                frequency: 1,
            })
            .collect()
    }

    #[test]
    fn topk_intersection() {
        let gold: HashSet<String> = ["a", "b", "c", "d"].map(String::from).into();
        let r = entries(&["a", "zz", "b", "c"]);
        let same = topk_type_intersection(&r, &r, &gold, 2);
        assert_eq!(
            (same.percentage, same.effective_k, same.short),
            (100.0, 2, false)
        );

        let other = entries(&["c", "d"]);
        assert_eq!(topk_type_intersection(&r, &other, &gold, 2).percentage, 0.0);

        let short = topk_type_intersection(&r, &r, &gold, 200);
        assert_eq!(
            (short.percentage, short.effective_k, short.short),
            (100.0, 3, true)
        );
    }

    proptest! {
        #[test]
        fn column_permutation_invariance(
            peaks in proptest::collection::vec(0usize..4, 1..12),
            perm_seed in any::<u64>(),
        ) {
            let m = peaked(&peaks, 4);
            let mut perm: Vec<usize> = (0..4).collect();
            let mut s = perm_seed;
            for i in (1..4).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let p = m.permute_columns(&perm).unwrap();
            let a = attention_segment(&m);
            let b = attention_segment(&p);
            prop_assert_eq!(a.segmentation.boundaries(), b.segmentation.boundaries());
            let changes = peaks.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(a.segmentation.boundaries().len(), changes);
            prop_assert!((average_normalized_entropy(&m) - average_normalized_entropy(&p)).abs() < 1e-12);
            let avg = crate::neural::average_matrices(&[m.clone(), m.clone()]).unwrap();
            prop_assert!((average_normalized_entropy(&avg) - average_normalized_entropy(&m)).abs() < 1e-12);
        }

        #[test]
        fn score_scaling_keeps_segmentation(
            scores in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..10),
            scale in proptest::collection::vec(0.1f64..10.0, 10),
        ) {
            let softmax = |r: &[f64], c: f64| -> Vec<f64> {
                let m = r.iter().fold(f64::MIN, |a, &b| a.max(b * c));
                let e: Vec<f64> = r.iter().map(|x| (x * c - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            };
            let base: Vec<Vec<f64>> = scores.iter().map(|r| softmax(r, 1.0)).collect();
            let scaled: Vec<Vec<f64>> = scores.iter().zip(&scale).map(|(r, &c)| softmax(r, c)).collect();
            let t = toks(scores.len(), "t");
            let a = SoftAlignmentMatrix::from_rows(&base, toks(3, "s"), t.clone()).unwrap();
            let b = SoftAlignmentMatrix::from_rows(&scaled, toks(3, "s"), t).unwrap();
            prop_assert_eq!(
                attention_segment(&a).segmentation,
                attention_segment(&b).segmentation
            );
        }

        #[test]
        fn proportional_is_monotone_interior(
            lengths in proptest::collection::vec(1usize..12, 1..10),
            t in 1usize..80,
        ) {
            let s = proportional_segment(&lengths, t);
            prop_assert!(s.boundaries().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.boundaries().iter().all(|&b| b > 0 && b < t));
        }
    }
}

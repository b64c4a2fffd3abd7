//! Monolingual word segmentation with a Dirichlet-process unigram lexicon,
//! sampled by annealed Gibbs sampling over boundary variables.
//!
//! Words are drawn from a Chinese-restaurant process whose base measure
//! generates phoneme strings with a geometric length distribution:
//!
//! ```text
//! P0(w)        = p# (1 - p#)^(|w| - 1) * prod_j base(w_j)
//! P(w | state) = (n_w + alpha0 * P0(w)) / (n + alpha0)
//! ```
//!
//! The sampler visits each interior position of each utterance, removes
//! the word(s) covering it from the lexicon, and resamples the boundary
//! from the two hypotheses "one word over the joined span" and "two words",
//! the second word conditioned on the first having been added.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::corpus::Segmentation;
use crate::error::{Error, Result};

pub type Symbol = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct BayesHyperparams {
    pub alpha0: f64,
    pub p_hash: f64,
    symbols: Vec<String>,
    index: HashMap<String, Symbol>,
    base: Vec<f64>,
}

impl BayesHyperparams {
    pub const DEFAULT_ALPHA0: f64 = 20.0;
    pub const DEFAULT_P_HASH: f64 = 0.5;

    /// Hyperparameters with an explicit phoneme distribution.
    pub fn new(alpha0: f64, p_hash: f64, base: Vec<(String, f64)>) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::Hyperparam(format!(
                "alpha0 must be > 0, got {alpha0}"
            )));
        }
        if !(p_hash > 0.0 && p_hash < 1.0) {
            return Err(Error::Hyperparam(format!(
                "p# must lie in (0, 1), got {p_hash}"
            )));
        }
        if base.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::Hyperparam("negative phoneme probability".into()));
        }
        let total: f64 = base.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Hyperparam(format!(
                "phoneme distribution sums to {total}"
            )));
        }
        let mut symbols = Vec::with_capacity(base.len());
        let mut probs = Vec::with_capacity(base.len());
        let mut index = HashMap::with_capacity(base.len());
        for (s, p) in base {
            if index.insert(s.clone(), symbols.len() as Symbol).is_some() {
                return Err(Error::Hyperparam(format!("phoneme `{s}` listed twice")));
            }
            symbols.push(s);
            probs.push(p);
        }
        Ok(Self {
            alpha0,
            p_hash,
            symbols,
            index,
            base: probs,
        })
    }

    /// Uniform phoneme distribution over `symbols` (deduplicated, sorted).
    pub fn uniform<S: AsRef<str>>(
        alpha0: f64,
        p_hash: f64,
        symbols: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let mut syms: Vec<String> = symbols
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        syms.sort();
        syms.dedup();
        if syms.is_empty() {
            return Err(Error::Hyperparam("empty phoneme inventory".into()));
        }
        let p = 1.0 / syms.len() as f64;
        Self::new(alpha0, p_hash, syms.into_iter().map(|s| (s, p)).collect())
    }

    /// Default hyperparameters with a uniform base over the symbols
    /// observed in `utterances`.
    pub fn for_corpus<S: AsRef<str>>(utterances: &[Vec<S>]) -> Result<Self> {
        Self::uniform(
            Self::DEFAULT_ALPHA0,
            Self::DEFAULT_P_HASH,
            utterances.iter().flatten().map(|s| s.as_ref()),
        )
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn encode<S: AsRef<str>>(&self, word: &[S]) -> Result<Vec<Symbol>> {
        word.iter()
            .map(|s| {
                self.index
                    .get(s.as_ref())
                    .copied()
                    .ok_or_else(|| Error::UnknownSymbol(s.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, word: &[Symbol]) -> String {
        word.iter()
            .map(|&s| self.symbols[s as usize].as_str())
            .collect()
    }

    fn ln_base_prob(&self, word: &[Symbol]) -> f64 {
        debug_assert!(!word.is_empty());
        let mut ln = self.p_hash.ln() + (word.len() - 1) as f64 * (1.0 - self.p_hash).ln();
        for &s in word {
            ln += self.base[s as usize].ln();
        }
        ln
    }
}

/// `P0(w)` for a word given as phoneme symbols.
pub fn base_prob<S: AsRef<str>>(word: &[S], hp: &BayesHyperparams) -> Result<f64> {
    if word.is_empty() {
        return Err(Error::invalid("base probability of an empty word"));
    }
    Ok(hp.ln_base_prob(&hp.encode(word)?).exp())
}

/// Word-type counts of the current segmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexiconState {
    counts: HashMap<Vec<Symbol>, usize>,
    total: usize,
}

impl LexiconState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, word: &[Symbol]) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Symbol], usize)> {
        self.counts.iter().map(|(w, &c)| (w.as_slice(), c))
    }

    pub fn add(&mut self, word: &[Symbol]) {
        match self.counts.get_mut(word) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(word.to_vec(), 1);
            }
        }
        self.total += 1;
    }

    /// Removes one occurrence. Panics if the word is absent, which means
    /// the state has drifted from the boundaries.
    pub fn remove(&mut self, word: &[Symbol]) {
        let c = self
            .counts
            .get_mut(word)
            .expect("removing a word that is not in the lexicon");
        *c -= 1;
        if *c == 0 {
            self.counts.remove(word);
        }
        self.total -= 1;
    }

    /// Counts of the words induced by `boundaries` over `utterances`.
    pub fn from_segmentations(utterances: &[Vec<Symbol>], segs: &[Segmentation]) -> Self {
        let mut s = Self::new();
        for (u, seg) in utterances.iter().zip(segs) {
            for r in seg.spans() {
                s.add(&u[r]);
            }
        }
        s
    }

    /// Log-probability of the word sequence under the predictive rule,
    /// in closed form:
    /// `sum_w [ln G(n_w + a P0(w)) - ln G(a P0(w))] + ln G(a) - ln G(a + n)`.
    pub fn log_prob(&self, hp: &BayesHyperparams) -> f64 {
        let a = hp.alpha0;
        let mut terms: Vec<(&Vec<Symbol>, f64)> = self
            .counts
            .iter()
            .map(|(w, &n)| {
                let ap0 = a * hp.ln_base_prob(w).exp();
                (w, ln_gamma(n as f64 + ap0) - ln_gamma(ap0))
            })
            .collect();
        terms.sort_unstable_by(|x, y| x.0.cmp(y.0));
        ln_gamma(a) - ln_gamma(a + self.total as f64) + terms.iter().map(|t| t.1).sum::<f64>()
    }
}

fn ln_crp(word: &[Symbol], n_w: usize, n: usize, hp: &BayesHyperparams) -> f64 {
    let a = hp.alpha0;
    let ln_p0 = hp.ln_base_prob(word);
    if n_w == 0 {
        a.ln() + ln_p0 - (n as f64 + a).ln()
    } else {
        (n_w as f64 + a * ln_p0.exp()).ln() - (n as f64 + a).ln()
    }
}

/// Predictive probability `(n_w + alpha0 P0(w)) / (n + alpha0)`.
pub fn crp_word_prob(word: &[Symbol], state: &LexiconState, hp: &BayesHyperparams) -> f64 {
    ln_crp(word, state.count(word), state.total(), hp).exp()
}

/// One annealing stage: `sweeps` full passes at `temperature`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealStage {
    pub temperature: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub stages: Vec<AnnealStage>,
    pub seed: u64,
    /// Probability of a boundary at each interior position at start.
    pub init_boundary_prob: f64,
}

impl GibbsConfig {
    pub const DEFAULT_SWEEPS: usize = 2000;

    /// `sweeps` passes split 10/20/20/50% over temperatures 2.0, 1.5, 1.2
    /// and 1.0.
    pub fn with_sweeps(sweeps: usize, seed: u64) -> Self {
        let temps = [2.0, 1.5, 1.2, 1.0];
        let shares = [0.1, 0.2, 0.2];
        let mut stages = Vec::with_capacity(4);
        let mut used = 0;
        for (t, s) in temps.iter().zip(shares) {
            let n = (sweeps as f64 * s).round() as usize;
            stages.push(AnnealStage {
                temperature: *t,
                sweeps: n,
            });
            used += n;
        }
        stages.push(AnnealStage {
            temperature: 1.0,
            sweeps: sweeps.saturating_sub(used),
        });
        stages.retain(|s| s.sweeps > 0);
        Self {
            stages,
            seed,
            init_boundary_prob: 0.3,
        }
    }

    pub fn sweeps(&self) -> usize {
        self.stages.iter().map(|s| s.sweeps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps() == 0 {
            return Err(Error::Hyperparam("at least one sweep required".into()));
        }
        if let Some(s) = self.stages.iter().find(|s| !(s.temperature > 0.0)) {
            return Err(Error::Hyperparam(format!(
                "temperature must be > 0, got {}",
                s.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.init_boundary_prob) {
            return Err(Error::Hyperparam(
                "initial boundary probability outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self::with_sweeps(Self::DEFAULT_SWEEPS, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub temperature: f64,
    pub sweeps: usize,
    pub log_prob: f64,
    pub num_types: usize,
    pub num_tokens: usize,
}

/// Boundary configuration of one utterance as a flag per position `0..=T`;
/// both edges are always set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlags(Vec<bool>);

impl BoundaryFlags {
    pub fn from_segmentation(seg: &Segmentation) -> Self {
        let mut flags = vec![false; seg.len() + 1];
        flags[0] = true;
        flags[seg.len()] = true;
        for &b in seg.boundaries() {
            flags[b] = true;
        }
        Self(flags)
    }

    pub fn to_segmentation(&self) -> Segmentation {
        let len = self.0.len() - 1;
        Segmentation::new(len, (1..len).filter(|&i| self.0[i]))
            .expect("interior flags are in range")
    }

    fn prev(&self, i: usize) -> usize {
        (0..i)
            .rev()
            .find(|&j| self.0[j])
            .expect("left edge is a boundary")
    }

    fn next(&self, i: usize) -> usize {
        (i + 1..self.0.len())
            .find(|&j| self.0[j])
            .expect("right edge is a boundary")
    }
}

fn check_consistency(
    utterances: &[Vec<Symbol>],
    flags: &[BoundaryFlags],
    state: &LexiconState,
) -> Result<()> {
    let segs: Vec<Segmentation> = flags.iter().map(BoundaryFlags::to_segmentation).collect();
    let expected = LexiconState::from_segmentations(utterances, &segs);
    if &expected != state {
        return Err(Error::InconsistentState(format!(
            "lexicon holds {} tokens, boundaries induce {}",
            state.total(),
            expected.total()
        )));
    }
    Ok(())
}

/// Probability that a boundary is placed at the current position, given
/// the joined word and its two halves, with the covering words already
/// removed from `state`.
fn boundary_probability(
    joined: &[Symbol],
    left: &[Symbol],
    right: &[Symbol],
    state: &LexiconState,
    hp: &BayesHyperparams,
    temperature: f64,
) -> f64 {
    let n = state.total();
    let l_one = ln_crp(joined, state.count(joined), n, hp);
    let n_left = state.count(left);
    let n_right = state.count(right) + usize::from(left == right);
    let l_two = ln_crp(left, n_left, n, hp) + ln_crp(right, n_right, n + 1, hp);
    // p2 / (p1 + p2) with both sharpened by 1/temperature.
    let d = (l_one - l_two) / temperature;
    1.0 / (1.0 + d.exp())
}

/// One pass over every interior position of every utterance.
pub fn gibbs_sweep<R: Rng>(
    utterances: &[Vec<Symbol>],
    flags: &mut [BoundaryFlags],
    state: &mut LexiconState,
    hp: &BayesHyperparams,
    temperature: f64,
    rng: &mut R,
) -> Result<()> {
    if cfg!(debug_assertions) {
        check_consistency(utterances, flags, state)?;
    }
    for (u, f) in utterances.iter().zip(flags.iter_mut()) {
        for i in 1..u.len() {
            let start = f.prev(i);
            let end = f.next(i);
            let (joined, left, right) = (&u[start..end], &u[start..i], &u[i..end]);
            if f.0[i] {
                state.remove(left);
                state.remove(right);
            } else {
                state.remove(joined);
            }
            let p = boundary_probability(joined, left, right, state, hp, temperature);
            let split = rng.random::<f64>() < p;
            f.0[i] = split;
            if split {
                state.add(left);
                state.add(right);
            } else {
                state.add(joined);
            }
        }
    }
    Ok(())
}

/// Output of [`segment_corpus`].
#[derive(Debug, Clone)]
pub struct BayesResult {
    pub segmentations: Vec<Segmentation>,
    pub lexicon: LexiconState,
    pub log: Vec<StageLog>,
}

/// Segments phoneme utterances with the annealed sampler.
pub fn segment_corpus<S: AsRef<str>>(
    utterances: &[Vec<S>],
    hp: &BayesHyperparams,
    cfg: &GibbsConfig,
) -> Result<BayesResult> {
    cfg.validate()?;
    if utterances.is_empty() {
        return Err(Error::invalid("segmenting an empty corpus"));
    }
    let encoded: Vec<Vec<Symbol>> = utterances
        .iter()
        .map(|u| hp.encode(u))
        .collect::<Result<_>>()?;
    if encoded.iter().any(Vec::is_empty) {
        return Err(Error::invalid("empty utterance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flags: Vec<BoundaryFlags> = encoded
        .iter()
        .map(|u| {
            let len = u.len();
            let mut f = vec![false; len + 1];
            f[0] = true;
            f[len] = true;
            for flag in &mut f[1..len] {
                *flag = rng.random::<f64>() < cfg.init_boundary_prob;
            }
            BoundaryFlags(f)
        })
        .collect();
    let segs: Vec<Segmentation> = flags.iter().map(BoundaryFlags::to_segmentation).collect();
    let mut state = LexiconState::from_segmentations(&encoded, &segs);

    let mut log = Vec::with_capacity(cfg.stages.len());
    for stage in &cfg.stages {
        for _ in 0..stage.sweeps {
            gibbs_sweep(
                &encoded,
                &mut flags,
                &mut state,
                hp,
                stage.temperature,
                &mut rng,
            )?;
        }
        let entry = StageLog {
            temperature: stage.temperature,
            sweeps: stage.sweeps,
            log_prob: state.log_prob(hp),
            num_types: state.num_types(),
            num_tokens: state.total(),
        };
        log::debug!(
            "T={} sweeps={} logP={:.2} types={} tokens={}",
            entry.temperature,
            entry.sweeps,
            entry.log_prob,
            entry.num_types,
            entry.num_tokens
        );
        log.push(entry);
    }
    Ok(BayesResult {
        segmentations: flags.iter().map(BoundaryFlags::to_segmentation).collect(),
        lexicon: state,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(word: &str) -> Vec<String> {
        word.chars().map(String::from).collect()
    }

    fn uniform50() -> BayesHyperparams {
        BayesHyperparams::uniform(1.0, 0.5, (0..50).map(|i| format!("p{i}"))).unwrap()
    }

    #[test]
    fn base_prob_direct_evaluation() {
        let hp = uniform50();
        let one = base_prob(&["p3"], &hp).unwrap();
        assert!((one - 0.5 * (1.0 / 50.0)).abs() < 1e-15);
        let two = base_prob(&["p3", "p7"], &hp).unwrap();
        assert!((two - 0.5 * 0.5 * (1.0f64 / 50.0).powi(2)).abs() < 1e-18);
        assert!(matches!(
            base_prob(&["zz"], &hp),
            Err(Error::UnknownSymbol(_))
        ));
        assert!(base_prob::<&str>(&[], &hp).is_err());
    }

    #[test]
    fn base_prob_vanishes_as_p_hash_approaches_one() {
        let hp = BayesHyperparams::uniform(1.0, 1.0 - 1e-12, ["a", "b"]).unwrap();
        assert!(base_prob(&s("ab"), &hp).unwrap() < 1e-12);
        assert!(base_prob(&s("a"), &hp).unwrap() > 0.49);
    }

    #[test]
    fn hyperparams_validated() {
        assert!(BayesHyperparams::uniform(0.0, 0.5, ["a"]).is_err());
        assert!(BayesHyperparams::uniform(1.0, 1.0, ["a"]).is_err());
        assert!(BayesHyperparams::new(1.0, 0.5, vec![("a".into(), 0.7)]).is_err());
    }

    #[test]
    fn crp_cases() {
        let hp = BayesHyperparams::uniform(1.0, 0.5, ["a", "b"]).unwrap();
        let w = hp.encode(&s("ab")).unwrap();
        let empty = LexiconState::new();
        let p0 = base_prob(&s("ab"), &hp).unwrap();
        assert!((crp_word_prob(&w, &empty, &hp) - p0).abs() < 1e-15);

        // n_w = 5, n = 9, alpha0 = 1, P0 = 0.01 gives 5.01 / 10.
        let hp = uniform50();
        let w = hp.encode(&["p1"]).unwrap();
        let other = hp.encode(&["p2"]).unwrap();
        let mut st = LexiconState::new();
        for _ in 0..5 {
            st.add(&w);
        }
        for _ in 0..4 {
            st.add(&other);
        }
        assert!((crp_word_prob(&w, &st, &hp) - 0.501).abs() < 1e-12);

        let big = BayesHyperparams::uniform(1e12, 0.5, (0..50).map(|i| format!("p{i}"))).unwrap();
        assert!((crp_word_prob(&w, &st, &big) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_symbol_boundary_probability() {
        // Hand evaluation: P0(a) = 0.25, P0(ab) = 0.5 * 0.5 * 0.25 = 0.0625.
        // p1 = 0.0625, p2 = 0.25 * (0 + 0.25) / 2 = 0.03125, so
        // P(boundary) = 0.03125 / 0.09375 = 1/3.
        let hp = BayesHyperparams::uniform(1.0, 0.5, ["a", "b"]).unwrap();
        let (a, b, ab) = (
            hp.encode(&["a"]).unwrap(),
            hp.encode(&["b"]).unwrap(),
            hp.encode(&s("ab")).unwrap(),
        );
        let p = boundary_probability(&ab, &a, &b, &LexiconState::new(), &hp, 1.0);
        assert!((p - 1.0 / 3.0).abs() < 1e-12, "{p}");

        // Empirical frequency over many single-position sweeps.
        let utt = vec![ab.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        let n = 20_000;
        for _ in 0..n {
            let mut flags = vec![BoundaryFlags::from_segmentation(
                &Segmentation::unsegmented(2),
            )];
            let mut st = LexiconState::from_segmentations(&utt, &[Segmentation::unsegmented(2)]);
            gibbs_sweep(&utt, &mut flags, &mut st, &hp, 1.0, &mut rng).unwrap();
            hits += usize::from(flags[0].0[1]);
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 1.0 / 3.0).abs() < 0.015, "{freq}");
    }

    #[test]
    fn annealing_limit_is_argmax() {
        let hp = BayesHyperparams::uniform(1.0, 0.5, ["a", "b"]).unwrap();
        let (a, b, ab) = (
            hp.encode(&["a"]).unwrap(),
            hp.encode(&["b"]).unwrap(),
            hp.encode(&s("ab")).unwrap(),
        );
        let p = boundary_probability(&ab, &a, &b, &LexiconState::new(), &hp, 1e-6);
        assert!(p < 1e-100);
        let mut st = LexiconState::new();
        for _ in 0..50 {
            st.add(&a);
            st.add(&b);
        }
        let p = boundary_probability(&ab, &a, &b, &st, &hp, 1e-6);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn inconsistent_state_rejected_in_debug() {
        if !cfg!(debug_assertions) {
            return;
        }
        let hp = BayesHyperparams::uniform(1.0, 0.5, ["a", "b"]).unwrap();
        let utt = vec![hp.encode(&s("ab")).unwrap()];
        let mut flags = vec![BoundaryFlags::from_segmentation(
            &Segmentation::unsegmented(2),
        )];
        let mut st = LexiconState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gibbs_sweep(&utt, &mut flags, &mut st, &hp, 1.0, &mut rng),
            Err(Error::InconsistentState(_))
        ));
    }

    #[test]
    fn single_phoneme_utterances_stay_unsegmented() {
        let utts = vec![s("a"), s("b"), s("a")];
        let hp = BayesHyperparams::for_corpus(&utts).unwrap();
        let out = segment_corpus(&utts, &hp, &GibbsConfig::with_sweeps(5, 1)).unwrap();
        assert!(out.segmentations.iter().all(|s| s.boundaries().is_empty()));
        assert_eq!(out.lexicon.total(), 3);
    }

    #[test]
    fn deterministic_under_seed() {
        let utts: Vec<Vec<String>> = ["abcab", "cabca", "abab", "ccab"]
            .iter()
            .map(|u| s(u))
            .collect();
        let hp = BayesHyperparams::for_corpus(&utts).unwrap();
        let cfg = GibbsConfig::with_sweeps(30, 11);
        let a = segment_corpus(&utts, &hp, &cfg).unwrap();
        let b = segment_corpus(&utts, &hp, &cfg).unwrap();
        assert_eq!(a.segmentations, b.segmentations);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn default_schedule_shape() {
        let cfg = GibbsConfig::default();
        let temps: Vec<f64> = cfg.stages.iter().map(|s| s.temperature).collect();
        let sweeps: Vec<usize> = cfg.stages.iter().map(|s| s.sweeps).collect();
        assert_eq!(temps, [2.0, 1.5, 1.2, 1.0]);
        assert_eq!(sweeps, [200, 400, 400, 1000]);
        assert_eq!(cfg.sweeps(), 2000);
        let mut bad = cfg.clone();
        bad.stages[0].temperature = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_prob_matches_sequential_crp() {
        // Chain rule over an arbitrary ordering equals the exchangeable form.
        let hp = BayesHyperparams::uniform(2.5, 0.4, ["a", "b", "c"]).unwrap();
        let words: Vec<Vec<Symbol>> = ["ab", "c", "ab", "a", "ab", "c"]
            .iter()
            .map(|w| hp.encode(&s(w)).unwrap())
            .collect();
        let mut st = LexiconState::new();
        let mut seq = 0.0;
        for w in &words {
            seq += crp_word_prob(w, &st, &hp).ln();
            st.add(w);
        }
        assert!((seq - st.log_prob(&hp)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn counts_track_boundaries(
            utts in proptest::collection::vec("[abc]{1,9}", 1..8),
            seed in 0u64..1000,
            temp in 0.5f64..3.0,
        ) {
            let utts: Vec<Vec<String>> = utts.iter().map(|u| s(u)).collect();
            let hp = BayesHyperparams::for_corpus(&utts).unwrap();
            let enc: Vec<Vec<Symbol>> = utts.iter().map(|u| hp.encode(u).unwrap()).collect();
            let segs: Vec<Segmentation> = enc.iter().map(|u| Segmentation::unsegmented(u.len())).collect();
            let mut flags: Vec<BoundaryFlags> = segs.iter().map(BoundaryFlags::from_segmentation).collect();
            let mut st = LexiconState::from_segmentations(&enc, &segs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..3 {
                gibbs_sweep(&enc, &mut flags, &mut st, &hp, temp, &mut rng).unwrap();
                let words: usize = flags.iter().map(|f| f.to_segmentation().num_words()).sum();
                prop_assert_eq!(st.total(), words);
                prop_assert!(check_consistency(&enc, &flags, &st).is_ok());
            }
            prop_assert!(st.log_prob(&hp).is_finite());
        }

        #[test]
        fn crp_monotone_in_count(n_w in 0usize..50, extra in 1usize..5) {
            let hp = BayesHyperparams::uniform(3.0, 0.5, ["a", "b"]).unwrap();
            let w = hp.encode(&s("ab")).unwrap();
            let n = 100;
            let lo = ln_crp(&w, n_w, n, &hp);
            let hi = ln_crp(&w, n_w + extra, n, &hp);
            prop_assert!(hi > lo);
        }
    }
}

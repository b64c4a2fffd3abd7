use std::collections::HashMap;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Token/index mapping for one side of the corpus.
///
/// Indices 0–3 are PAD, BOS, EOS and UNK; a soft-boundary marker, when
/// given, takes index 4. Remaining tokens follow by decreasing frequency,
/// ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;

    pub fn build<S: AsRef<str>>(
        sequences: &[Vec<S>],
        min_count: usize,
        marker: Option<&str>,
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in sequences.iter().flatten() {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
        let reserved = [PAD, BOS, EOS, UNK];
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !reserved.contains(t) && Some(*t) != marker)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = reserved
            .iter()
            .copied()
            .chain(marker)
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(String::from)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(s: &[&str]) -> Vec<Vec<String>> {
        s.iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn min_count_maps_rare_to_unk() {
        let v = Vocab::build(&seqs(&["a a b", "a"]), 2, None);
        assert_eq!(v.tokens(), [PAD, BOS, EOS, UNK, "a"]);
        assert_eq!(v.id("b"), Vocab::UNK);
        let all = Vocab::build(&seqs(&["a a b", "a"]), 1, None);
        assert_eq!(all.id("b"), 5);
    }

    #[test]
    fn ordering_and_marker() {
        let v = Vocab::build(&seqs(&["c b b a", "a"]), 1, Some("|"));
        assert_eq!(v.tokens(), [PAD, BOS, EOS, UNK, "|", "a", "b", "c"]);
        assert_eq!(v, Vocab::build(&seqs(&["c b b a", "a"]), 1, Some("|")));
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()), v);
    }
}

//! Attention encoder-decoder from translation words to phoneme symbols.
//!
//! The encoder is a bidirectional GRU whose concatenated states form the
//! annotations `h_1..h_A`. At target step `t` the attention weights are
//! `softmax_i(v . tanh(K h_i + Q s_{t-1} + b))`, with `s_{t-1}` the top
//! decoder state, and the context is `c_t = sum_i a_i h_i`. The two-layer
//! GRU decoder reads `[emb(y_{t-1}); c_t]`; the output layer reads
//! `[s_t; c_t; emb(y_{t-1})]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::SoftAlignmentMatrix;
use super::tape::{cast, NodeId, ParamId, ParamSet, Scalar, Tape, Tensor};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub source_embedding: usize,
    pub encoder_hidden: usize,
    pub target_embedding: usize,
    pub decoder_hidden: usize,
    pub attention_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            source_embedding: 64,
            encoder_hidden: 64,
            target_embedding: 16,
            decoder_hidden: 64,
            attention_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// Every dimension set to `d`; handy for gradient checks.
    pub fn uniform(d: usize) -> Self {
        Self {
            source_embedding: d,
            encoder_hidden: d,
            target_embedding: d,
            decoder_hidden: d,
            attention_hidden: d,
        }
    }

    fn annotation(&self) -> usize {
        2 * self.encoder_hidden
    }
}

#[derive(Debug, Clone, Copy)]
struct GruIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    src_emb: ParamId,
    enc_fwd: GruIds,
    enc_bwd: GruIds,
    init1_w: ParamId,
    init1_b: ParamId,
    init2_w: ParamId,
    init2_b: ParamId,
    tgt_emb: ParamId,
    dec1: GruIds,
    dec2: GruIds,
    att_key: ParamId,
    att_query: ParamId,
    att_bias: ParamId,
    att_v: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn gru_params<T: Scalar>(ps: &mut ParamSet<T>, name: &str, input: usize, hidden: usize) -> GruIds {
    GruIds {
        w_ih: ps.add(Tensor::zeros(format!("{name}.w_ih"), 3 * hidden, input)),
        w_hh: ps.add(Tensor::zeros(format!("{name}.w_hh"), 3 * hidden, hidden)),
        b_ih: ps.add(Tensor::zeros(format!("{name}.b_ih"), 1, 3 * hidden)),
        b_hh: ps.add(Tensor::zeros(format!("{name}.b_hh"), 1, 3 * hidden)),
    }
}

fn layout<T: Scalar>(
    cfg: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
) -> (ParamSet<T>, Layout) {
    let mut ps = ParamSet::new();
    let ann = cfg.annotation();
    let dh = cfg.decoder_hidden;
    let src_emb = ps.add(Tensor::zeros("src_emb", src_vocab, cfg.source_embedding));
    let enc_fwd = gru_params(&mut ps, "enc_fwd", cfg.source_embedding, cfg.encoder_hidden);
    let enc_bwd = gru_params(&mut ps, "enc_bwd", cfg.source_embedding, cfg.encoder_hidden);
    let init1_w = ps.add(Tensor::zeros("init1.w", dh, ann));
    let init1_b = ps.add(Tensor::zeros("init1.b", 1, dh));
    let init2_w = ps.add(Tensor::zeros("init2.w", dh, ann));
    let init2_b = ps.add(Tensor::zeros("init2.b", 1, dh));
    let tgt_emb = ps.add(Tensor::zeros("tgt_emb", tgt_vocab, cfg.target_embedding));
    let dec1 = gru_params(&mut ps, "dec1", cfg.target_embedding + ann, dh);
    let dec2 = gru_params(&mut ps, "dec2", dh, dh);
    let att_key = ps.add(Tensor::zeros("align.key", cfg.attention_hidden, ann));
    let att_query = ps.add(Tensor::zeros("align.query", cfg.attention_hidden, dh));
    let att_bias = ps.add(Tensor::zeros("align.bias", 1, cfg.attention_hidden));
    let att_v = ps.add(Tensor::zeros("align.v", 1, cfg.attention_hidden));
    let out_w = ps.add(Tensor::zeros(
        "out.w",
        tgt_vocab,
        dh + ann + cfg.target_embedding,
    ));
    let out_b = ps.add(Tensor::zeros("out.b", 1, tgt_vocab));
    let ids = Layout {
        src_emb,
        enc_fwd,
        enc_bwd,
        init1_w,
        init1_b,
        init2_w,
        init2_b,
        tgt_emb,
        dec1,
        dec2,
        att_key,
        att_query,
        att_bias,
        att_v,
        out_w,
        out_b,
    };
    (ps, ids)
}

/// A source/target pair as vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

pub struct Model<T> {
    pub config: ModelConfig,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
    pub params: ParamSet<T>,
    ids: Layout,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            params: self.params.clone(),
            ids: self.ids,
        }
    }
}

struct Encoded {
    annotations: NodeId,
    keys: NodeId,
    len: usize,
}

/// Recurrent decoder state after some number of steps.
#[derive(Clone, Copy)]
struct DecoderState {
    s1: NodeId,
    s2: NodeId,
}

impl<T: Scalar> Model<T> {
    /// Parameters drawn uniformly from `[-0.1, 0.1]` with a seeded RNG.
    pub fn new(config: ModelConfig, source_vocab: Vocab, target_vocab: Vocab, seed: u64) -> Self {
        let (mut params, ids) = layout::<T>(&config, source_vocab.len(), target_vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut params.tensors {
            for x in &mut t.data {
                *x = cast(rng.random_range(-0.1..0.1));
            }
        }
        Self {
            config,
            source_vocab,
            target_vocab,
            params,
            ids,
        }
    }

    /// Same architecture with the given parameters. Shapes must match.
    pub fn with_params(
        config: ModelConfig,
        source_vocab: Vocab,
        target_vocab: Vocab,
        params: ParamSet<T>,
    ) -> Result<Self> {
        let (expected, ids) = layout::<T>(&config, source_vocab.len(), target_vocab.len());
        if expected.tensors.len() != params.tensors.len()
            || expected
                .tensors
                .iter()
                .zip(&params.tensors)
                .any(|(e, p)| e.name != p.name || e.rows != p.rows || e.cols != p.cols)
        {
            return Err(Error::Shape(
                "parameters do not match the model layout".into(),
            ));
        }
        Ok(Self {
            config,
            source_vocab,
            target_vocab,
            params,
            ids,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            params: self.params.cast(),
            ids: self.ids,
        }
    }

    pub fn encode_pair<S: AsRef<str>>(&self, source: &[S], target: &[S]) -> EncodedPair {
        EncodedPair {
            source: self.source_vocab.encode(source),
            target: self.target_vocab.encode(target),
        }
    }

    pub(crate) fn output_bias(&self) -> ParamId {
        self.ids.out_b
    }

    pub(crate) fn output_weight(&self) -> ParamId {
        self.ids.out_w
    }

    fn gru_step(&self, tape: &mut Tape<'_, T>, g: GruIds, x: NodeId, h: NodeId) -> NodeId {
        let gx = tape.linear(g.w_ih, Some(g.b_ih), x);
        let gh = tape.linear(g.w_hh, Some(g.b_hh), h);
        tape.gru(gx, gh, h)
    }

    fn encode(&self, tape: &mut Tape<'_, T>, source: &[usize]) -> (Encoded, DecoderState) {
        let ids = self.ids;
        let hid = self.config.encoder_hidden;
        let embeds: Vec<NodeId> = source.iter().map(|&s| tape.embed(ids.src_emb, s)).collect();
        let zero = tape.input(vec![T::zero(); hid]);
        let mut fwd = Vec::with_capacity(source.len());
        let mut h = zero;
        for &x in &embeds {
            h = self.gru_step(tape, ids.enc_fwd, x, h);
            fwd.push(h);
        }
        let mut bwd = vec![zero; source.len()];
        let mut h = zero;
        for (i, &x) in embeds.iter().enumerate().rev() {
            h = self.gru_step(tape, ids.enc_bwd, x, h);
            bwd[i] = h;
        }
        let parts: Vec<NodeId> = fwd.iter().zip(&bwd).flat_map(|(&f, &b)| [f, b]).collect();
        let annotations = tape.concat(&parts);
        let keys = tape.linear_rows(ids.att_key, annotations, source.len());
        let mean = tape.mean_rows(annotations, source.len());
        let s1 = tape.linear(ids.init1_w, Some(ids.init1_b), mean);
        let s1 = tape.tanh(s1);
        let s2 = tape.linear(ids.init2_w, Some(ids.init2_b), mean);
        let s2 = tape.tanh(s2);
        (
            Encoded {
                annotations,
                keys,
                len: source.len(),
            },
            DecoderState { s1, s2 },
        )
    }

    /// One decoder step; returns the new state, output logits and the
    /// attention distribution used at this step.
    fn step(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        state: DecoderState,
        prev: usize,
    ) -> (DecoderState, NodeId, NodeId) {
        let ids = self.ids;
        let q = tape.linear(ids.att_query, Some(ids.att_bias), state.s2);
        let scores = tape.attn_scores(enc.keys, q, ids.att_v);
        let alpha = tape.softmax(scores);
        let ctx = tape.weighted_rows(alpha, enc.annotations);
        let y = tape.embed(ids.tgt_emb, prev);
        let input = tape.concat(&[y, ctx]);
        let s1 = self.gru_step(tape, ids.dec1, input, state.s1);
        let s2 = self.gru_step(tape, ids.dec2, s1, state.s2);
        let feat = tape.concat(&[s2, ctx, y]);
        let logits = tape.linear(ids.out_w, Some(ids.out_b), feat);
        (DecoderState { s1, s2 }, logits, alpha)
    }

    /// Teacher-forced loss (summed over the target symbols and the final
    /// EOS) and the attention node of each target step.
    pub(crate) fn forced(
        &self,
        tape: &mut Tape<'_, T>,
        pair: &EncodedPair,
    ) -> (NodeId, Vec<NodeId>) {
        let (enc, mut state) = self.encode(tape, &pair.source);
        let mut losses = Vec::with_capacity(pair.target.len() + 1);
        let mut alphas = Vec::with_capacity(pair.target.len() + 1);
        let mut prev = Vocab::BOS;
        for &gold in pair.target.iter().chain(std::iter::once(&Vocab::EOS)) {
            let (next, logits, alpha) = self.step(tape, &enc, state, prev);
            losses.push(tape.cross_entropy(logits, gold));
            alphas.push(alpha);
            state = next;
            prev = gold;
        }
        (tape.sum(&losses), alphas)
    }

    /// Summed teacher-forced cross-entropy of one pair.
    pub fn pair_loss(&self, pair: &EncodedPair) -> T {
        let mut tape = Tape::new(&self.params);
        let (loss, _) = self.forced(&mut tape, pair);
        tape.scalar(loss)
    }

    /// Adds `scale · d loss / d params` for one pair into `grads`; returns
    /// the unscaled loss.
    pub fn accumulate_gradient(&self, pair: &EncodedPair, scale: T, grads: &mut ParamSet<T>) -> T {
        let mut tape = Tape::new(&self.params);
        let (loss, _) = self.forced(&mut tape, pair);
        tape.backward(loss, scale, grads);
        tape.scalar(loss)
    }

    /// Attention weights harvested while consuming the gold target.
    pub fn forced_decode_matrix<S: AsRef<str>>(
        &self,
        source: &[S],
        target: &[S],
    ) -> Result<SoftAlignmentMatrix> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::invalid(
                "forced decoding needs nonempty source and target",
            ));
        }
        let pair = self.encode_pair(source, target);
        let mut tape = Tape::new(&self.params);
        let (_, alphas) = self.forced(&mut tape, &pair);
        let data = alphas[..target.len()]
            .iter()
            .flat_map(|&a| tape.value(a).iter().map(|x| x.to_f64().unwrap()))
            .collect();
        SoftAlignmentMatrix::new(
            data,
            source.iter().map(|s| s.as_ref().to_string()).collect(),
            target.iter().map(|s| s.as_ref().to_string()).collect(),
        )
    }

    /// Argmax decoding until EOS or `max_len` symbols.
    pub fn greedy_decode<S: AsRef<str>>(&self, source: &[S], max_len: usize) -> Vec<String> {
        if source.is_empty() || max_len == 0 {
            return Vec::new();
        }
        let src = self.source_vocab.encode(source);
        let mut tape = Tape::new(&self.params);
        let (enc, mut state) = self.encode(&mut tape, &src);
        let mut prev = Vocab::BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (next, logits, _) = self.step(&mut tape, &enc, state, prev);
            let scores = tape.value(logits);
            let best = (0..scores.len())
                .filter(|&k| k != Vocab::PAD && k != Vocab::BOS)
                .fold(None::<usize>, |b, k| match b {
                    Some(j) if scores[j] >= scores[k] => Some(j),
                    _ => Some(k),
                })
                .unwrap_or(Vocab::EOS);
            if best == Vocab::EOS {
                break;
            }
            out.push(self.target_vocab.token(best).to_string());
            state = next;
            prev = best;
        }
        debug_assert!(enc.len > 0);
        out
    }
}

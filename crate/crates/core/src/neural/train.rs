//! Mini-batch training with Adam and early stopping, plus a finite
//! difference gradient check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{EncodedPair, Model, ModelConfig};
use super::tape::{cast, ParamSet, Scalar};
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Pairs per gradient work unit. Fixed so that gradient summation order
/// does not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 1,
            patience: 10,
            clip_norm: Some(5.0),
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-symbol training loss over the epoch; absent for epoch 0,
    /// which records the untrained model.
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn initial_valid_loss(&self) -> f64 {
        self.epochs[0].valid_loss
    }

    pub fn best_valid_loss(&self) -> f64 {
        self.epochs[self.best_epoch].valid_loss
    }
}

/// A source word sequence and its target symbol sequence.
pub type SeqPair = (Vec<String>, Vec<String>);

struct Adam<T> {
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamSet<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) {
        self.step += 1;
        let (b1, b2): (T, T) = (cast(Self::BETA1), cast(Self::BETA2));
        let c1 = cast::<T>(1.0 - Self::BETA1.powi(self.step));
        let c2 = cast::<T>(1.0 - Self::BETA2.powi(self.step));
        let (lr, eps): (T, T) = (cast(lr), cast(Self::EPS));
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (one - b1) * gk;
                v.data[k] = b2 * v.data[k] + (one - b2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] = p.data[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Gradient of the summed loss over `batch`, scaled by `scale`, and the
/// summed loss.
fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    batch: &[&EncodedPair],
    scale: T,
) -> (ParamSet<T>, f64) {
    let parts: Vec<(ParamSet<T>, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let mut loss = 0.0;
            for pair in chunk {
                loss += model
                    .accumulate_gradient(pair, scale, &mut g)
                    .to_f64()
                    .unwrap();
            }
            (g, loss)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut total, mut loss) = iter.next().expect("nonempty batch");
    for (g, l) in iter {
        total.add_assign(&g);
        loss += l;
    }
    (total, loss)
}

fn symbols(pairs: &[EncodedPair]) -> usize {
    pairs.iter().map(|p| p.target.len() + 1).sum()
}

/// Mean per-symbol teacher-forced loss (EOS included).
pub fn mean_loss<T: Scalar>(model: &Model<T>, pairs: &[EncodedPair]) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    let per: Vec<f64> = pairs
        .par_iter()
        .map(|p| model.pair_loss(p).to_f64().unwrap())
        .collect();
    per.iter().sum::<f64>() / symbols(pairs) as f64
}

/// Builds vocabularies from `train`, initializes a model from the seed and
/// fits it. The returned model holds the parameters of the epoch with the
/// lowest validation loss (training loss when `valid` is empty).
pub fn train_model(
    train: &[SeqPair],
    valid: &[SeqPair],
    model_config: ModelConfig,
    cfg: &TrainConfig,
    target_marker: Option<&str>,
) -> Result<(Model<f32>, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if train
        .iter()
        .chain(valid)
        .any(|(s, t)| s.is_empty() || t.is_empty())
    {
        return Err(Error::invalid(
            "training pairs need nonempty source and target",
        ));
    }
    let src: Vec<Vec<String>> = train.iter().map(|p| p.0.clone()).collect();
    let tgt: Vec<Vec<String>> = train.iter().map(|p| p.1.clone()).collect();
    let model = Model::<f32>::new(
        model_config,
        Vocab::build(&src, cfg.min_count, None),
        Vocab::build(&tgt, cfg.min_count, target_marker),
        cfg.seed,
    );
    fit(model, train, valid, cfg)
}

/// Trains an already-initialized model.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train: &[SeqPair],
    valid: &[SeqPair],
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainingLog)> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let enc = |pairs: &[SeqPair]| -> Vec<EncodedPair> {
        pairs.iter().map(|(s, t)| model.encode_pair(s, t)).collect()
    };
    let train_enc = enc(train);
    let valid_enc = enc(valid);
    let monitor = |m: &Model<T>| {
        if valid_enc.is_empty() {
            mean_loss(m, &train_enc)
        } else {
            mean_loss(m, &valid_enc)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ee_d0fb_a7c4);
    let mut adam = Adam::new(&model.params);
    let mut log = TrainingLog {
        epochs: vec![EpochLog {
            epoch: 0,
            train_loss: None,
            valid_loss: monitor(&model),
        }],
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = model.params.clone();
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedPair> = idx.iter().map(|&i| &train_enc[i]).collect();
            let n_sym: usize = batch.iter().map(|p| p.target.len() + 1).sum();
            let scale = T::one() / cast(n_sym as f64);
            let (mut grads, loss) = batch_gradient(&model, &batch, scale);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(clip) = cfg.clip_norm {
                let norm = grads.sq_norm().to_f64().unwrap().sqrt();
                if norm > clip {
                    grads.scale(cast(clip / norm));
                }
            }
            adam.update(&mut model.params, &grads, cfg.learning_rate);
            epoch_loss += loss;
        }
        let valid_loss = monitor(&model);
        let train_loss = epoch_loss / symbols(&train_enc) as f64;
        log::debug!("epoch {epoch}: train {train_loss:.4} valid {valid_loss:.4}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss: Some(train_loss),
            valid_loss,
        });
        if valid_loss < log.best_valid_loss() {
            log.best_epoch = epoch;
            best = model.params.clone();
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    model.params = best;
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub checked: usize,
}

/// Relative error between an analytic and a numeric derivative. The
/// denominator is floored at `1e-8` so exact zeros on both sides count as
/// agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of the summed batch loss with central
/// differences for every scalar parameter. Central differences at `epsilon`
/// and `epsilon / 2` are combined by Richardson extrapolation, which
/// cancels the second-order truncation term.
pub fn gradient_check(
    model: &Model<f64>,
    batch: &[EncodedPair],
    epsilon: f64,
) -> Result<GradCheckReport> {
    if batch.is_empty()
        || batch
            .iter()
            .any(|p| p.target.is_empty() || p.source.is_empty())
    {
        return Err(Error::invalid("gradient check needs nonempty pairs"));
    }
    let loss = |m: &Model<f64>| batch.iter().map(|p| m.pair_loss(p)).sum::<f64>();
    let mut analytic = model.params.zeros_like();
    for p in batch {
        model.accumulate_gradient(p, 1.0, &mut analytic);
    }
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        checked: 0,
    };
    for t in 0..probe.params.tensors.len() {
        for k in 0..probe.params.tensors[t].data.len() {
            let orig = probe.params.tensors[t].data[k];
            let mut central = |h: f64| {
                probe.params.tensors[t].data[k] = orig + h;
                let up = loss(&probe);
                probe.params.tensors[t].data[k] = orig - h;
                let down = loss(&probe);
                probe.params.tensors[t].data[k] = orig;
                (up - down) / (2.0 * h)
            };
            let numeric = (4.0 * central(epsilon / 2.0) - central(epsilon)) / 3.0;
            let err = relative_error(analytic.tensors[t].data[k], numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = format!("{}[{k}]", probe.params.tensors[t].name);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

//! Adagrad with global-norm gradient clipping, and the epoch loop with
//! dev-set early stopping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chars::CharVocab;
use crate::config::TrainConfig;
use crate::corpus::Sentence;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{score_predictions, Metrics};
use crate::model::MnerModel;
use crate::params::{GradientMap, ParameterStore};
use crate::tensor::Tensor;

/// Per-parameter accumulators of squared gradients.
#[derive(Debug, Clone, Default)]
pub struct AdagradState {
    accumulators: BTreeMap<String, Tensor>,
}

impl AdagradState {
    pub fn new() -> Self {
        AdagradState::default()
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accumulators.get(name)
    }
}

/// One optimizer step: clip the whole gradient map to `clip_norm` (0
/// disables), then per coordinate acc += g^2 and
/// theta -= lr * g / (sqrt(acc) + eps). Weight decay, when nonzero, adds
/// wd * theta to the raw gradient first.
pub fn adagrad_step(
    store: &mut ParameterStore,
    grads: &GradientMap,
    state: &mut AdagradState,
    config: &TrainConfig,
) -> Result<()> {
    for (name, _) in grads.iter() {
        if !store.contains(name) {
            return Err(Error::UnknownParameter(name.to_string()));
        }
    }
    let clip_scale = if config.clip_norm > 0.0 {
        let norm = grads.l2_norm();
        if norm > config.clip_norm {
            config.clip_norm / norm
        } else {
            1.0
        }
    } else {
        1.0
    };

    for (name, g) in grads.iter() {
        let param = store.get_mut(name)?;
        if g.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "adagrad",
                left: param.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let acc = state
            .accumulators
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let lr = config.learning_rate;
        let eps = config.epsilon;
        let wd = config.weight_decay;
        for ((theta, gv), a) in param
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(acc.data_mut())
        {
            let mut gv = gv * clip_scale;
            if wd != 0.0 {
                gv += wd * *theta;
            }
            if gv == 0.0 {
                continue;
            }
            *a += gv * gv;
            *theta -= lr * gv / (a.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_typed_f1: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

impl TrainingLog {
    /// One line per epoch: `epoch<TAB>train_nll<TAB>dev_typed_f1`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_nll\tdev_typed_f1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.2}\n",
                e.epoch, e.train_nll, e.dev_typed_f1
            ));
        }
        out
    }
}

pub fn evaluate_model(model: &MnerModel, corpus: &[Sentence]) -> Result<Metrics> {
    let mut gold = Vec::with_capacity(corpus.len());
    let mut pred = Vec::with_capacity(corpus.len());
    for s in corpus {
        let labels = s.labels.clone().ok_or_else(|| {
            Error::InvalidArgument("evaluation requires gold labels".into())
        })?;
        pred.push(model.tag_sentence(s)?.labels);
        gold.push(labels);
    }
    score_predictions(&gold, &pred)
}

/// Mini-batch training with per-epoch seeded shuffles, batch-mean loss,
/// and early stopping on dev typed F1 (strict improvement, keep the best
/// snapshot).
pub fn train_model(
    train: &[Sentence],
    dev: &[Sentence],
    words: Option<EmbeddingTable>,
    config: &TrainConfig,
) -> Result<(MnerModel, TrainingLog)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument(
            "training and dev corpora must be non-empty".into(),
        ));
    }
    let char_vocab = if config.modalities.chars {
        CharVocab::build(train.iter().flat_map(|s| s.tokens.iter()))
    } else {
        CharVocab::from_chars(std::iter::empty())
    };
    let mut model = MnerModel::new(config.clone(), words, char_vocab)?;
    let mut state = AdagradState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5348_5546_464c_4553);

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParameterStore, usize)> = None;
    let mut since_improve = 0usize;

    for epoch in 1..=model.config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_nll = 0.0;
        for batch in order.chunks(model.config.batch_size) {
            let mut batch_grads = GradientMap::new();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let (loss, grads) = model.sentence_gradients(&train[idx])?;
                epoch_nll += loss;
                batch_grads.add_scaled(&grads, scale);
            }
            adagrad_step(&mut model.store, &batch_grads, &mut state, &model.config)?;
        }
        let train_nll = epoch_nll / train.len() as f64;

        let dev_metrics = evaluate_model(&model, dev)?;
        let dev_f1 = dev_metrics.typed.f1;
        log.epochs.push(EpochStats {
            epoch,
            train_nll,
            dev_typed_f1: dev_f1,
        });

        let improved = best.as_ref().map_or(true, |(f1, _, _)| dev_f1 > *f1);
        if improved {
            best = Some((dev_f1, model.store.clone(), epoch));
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve > model.config.patience {
                break;
            }
        }
    }

    let (best_f1, best_store, best_epoch) =
        best.expect("at least one epoch ran, so a best snapshot exists");
    model.store = best_store;
    log.best_epoch = best_epoch;
    log.best_dev_f1 = best_f1;
    Ok((model, log))
}

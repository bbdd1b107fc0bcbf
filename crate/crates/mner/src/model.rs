//! End-to-end model assembly: embed each token through the enabled
//! channels, project to the shared width, fuse (attention or concat), run
//! the entity Bi-LSTM, and score label sequences with the CRF head.

use std::collections::BTreeMap;

use crate::chars::{CharEncoderSpec, CharVocab};
use crate::config::TrainConfig;
use crate::corpus::Sentence;
use crate::crf::{self, apply_virtual_masks};
use crate::embeddings::{EmbeddingTable, LookupKind};
use crate::error::{Error, Result};
use crate::eval::{label_index, ENTITY_TYPES, LABELS, N_LABELS};
use crate::fusion::{self, FusionMode, Modality};
use crate::lstm::BiLstmSpec;
use crate::params::{init_parameters, GradientMap, InitScheme, ParameterStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const DEFAULT_INIT_RADIUS: f64 = 0.1;

pub const CRF_EMIT_WEIGHT: &str = "crf.emit_w";
pub const CRF_EMIT_BIAS: &str = "crf.emit_b";
pub const CRF_TRANS: &str = "crf.trans";

fn sigma_weight_name(m: Modality) -> String {
    format!("sigma_{}.weight", m.short())
}

fn sigma_bias_name(m: Modality) -> String {
    format!("sigma_{}.bias", m.short())
}

#[derive(Debug, Clone)]
pub struct MnerModel {
    pub config: TrainConfig,
    pub store: ParameterStore,
    pub words: Option<EmbeddingTable>,
    pub char_vocab: CharVocab,
}

#[derive(Debug, Clone)]
pub struct TagResult {
    pub labels: Vec<String>,
    /// Per-token attention weights, present in attention mode.
    pub alphas: Option<Vec<Vec<f64>>>,
    /// Per-token flag: word lookup fell through to the UNK vector.
    pub oov: Vec<bool>,
    pub viterbi_score: f64,
}

pub struct SentenceForward {
    pub tape: Tape,
    pub loss: Option<NodeId>,
    pub emissions: Vec<NodeId>,
    pub alphas: Option<Vec<NodeId>>,
    pub oov: Vec<bool>,
}

impl MnerModel {
    fn char_spec(config: &TrainConfig) -> CharEncoderSpec {
        CharEncoderSpec::new(config.char_embed, config.char_hidden, config.gate_mode)
    }

    fn entity_spec(config: &TrainConfig) -> BiLstmSpec {
        BiLstmSpec::new("entity", config.fused_width(), config.hidden, config.gate_mode)
    }

    fn modality_input_dim(config: &TrainConfig, m: Modality) -> usize {
        match m {
            Modality::Word => config.d_w,
            Modality::Char => 2 * config.char_hidden,
            Modality::Visual => config.d_v,
        }
    }

    pub fn parameter_shapes(
        config: &TrainConfig,
        char_vocab: &CharVocab,
    ) -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        if config.modalities.chars {
            let spec = Self::char_spec(config);
            weights.extend(spec.weight_shapes(char_vocab));
            biases.extend(spec.bias_shapes());
        }
        for m in config.modalities.members() {
            let d_m = Self::modality_input_dim(config, m);
            weights.push((sigma_weight_name(m), vec![config.p, d_m]));
            biases.push((sigma_bias_name(m), vec![config.p]));
        }
        if config.fusion == FusionMode::Attention {
            let k = config.modalities.len();
            let shapes = fusion::attention_shapes(k, config.p);
            weights.push(shapes[0].clone());
            biases.push(shapes[1].clone());
        }
        let entity = Self::entity_spec(config);
        weights.extend(entity.weight_shapes());
        biases.extend(entity.bias_shapes());
        weights.push((CRF_EMIT_WEIGHT.to_string(), vec![N_LABELS, 2 * config.hidden]));
        weights.push((
            CRF_TRANS.to_string(),
            vec![N_LABELS + 2, N_LABELS + 2],
        ));
        biases.push((CRF_EMIT_BIAS.to_string(), vec![N_LABELS]));
        (weights, biases)
    }

    /// Deterministic initialization: weights uniform(±0.1), biases zero,
    /// then the CRF's virtual-state masks.
    pub fn new(
        config: TrainConfig,
        words: Option<EmbeddingTable>,
        char_vocab: CharVocab,
    ) -> Result<Self> {
        let mut config = config;
        if config.modalities.word {
            let table = words
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("word channel needs an embedding table".into()))?;
            config.d_w = table.dim();
        }
        config.validate()?;
        let (weights, biases) = Self::parameter_shapes(&config, &char_vocab);
        let mut store =
            init_parameters(&weights, InitScheme::Uniform(DEFAULT_INIT_RADIUS), config.seed)?;
        store.absorb(init_parameters(&biases, InitScheme::Zeros, config.seed)?)?;
        apply_virtual_masks(store.get_mut(CRF_TRANS)?, N_LABELS);
        let words = if config.modalities.word { words } else { None };
        Ok(MnerModel {
            config,
            store,
            words,
            char_vocab,
        })
    }

    pub fn from_parts(
        config: TrainConfig,
        store: ParameterStore,
        words: Option<EmbeddingTable>,
        char_vocab: CharVocab,
    ) -> Result<Self> {
        config.validate()?;
        let (weights, biases) = Self::parameter_shapes(&config, &char_vocab);
        for (name, shape) in weights.iter().chain(biases.iter()) {
            let t = store.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "model parameter",
                    left: shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(MnerModel {
            config,
            store,
            words,
            char_vocab,
        })
    }

    /// Redraw every parameter (biases included) uniformly in [-r, r] and
    /// restore the CRF masks. Gradient checks need a non-degenerate
    /// evaluation point: at the tiny training init, deep-path gradients
    /// shrink below the finite-difference noise floor.
    pub fn reinitialize_uniform(&mut self, radius: f64, seed: u64) -> Result<()> {
        let (mut shapes, biases) = Self::parameter_shapes(&self.config, &self.char_vocab);
        shapes.extend(biases);
        self.store = init_parameters(&shapes, InitScheme::Uniform(radius), seed)?;
        apply_virtual_masks(self.store.get_mut(CRF_TRANS)?, N_LABELS);
        Ok(())
    }

    pub fn forward(&self, sentence: &Sentence, with_loss: bool) -> Result<SentenceForward> {
        build_sentence_forward(
            &self.config,
            &self.store,
            self.words.as_ref(),
            &self.char_vocab,
            sentence,
            with_loss,
        )
    }

    pub fn sentence_nll(&self, sentence: &Sentence) -> Result<f64> {
        let fwd = self.forward(sentence, true)?;
        Ok(fwd.tape.value(fwd.loss.unwrap()).scalar_value())
    }

    pub fn sentence_gradients(&self, sentence: &Sentence) -> Result<(f64, GradientMap)> {
        let fwd = self.forward(sentence, true)?;
        let loss = fwd.loss.unwrap();
        let grads = fwd.tape.backward(loss)?;
        Ok((fwd.tape.value(loss).scalar_value(), grads))
    }

    pub fn tag_sentence(&self, sentence: &Sentence) -> Result<TagResult> {
        let fwd = self.forward(sentence, false)?;
        let t_len = sentence.len();
        let mut emissions = Vec::with_capacity(t_len * N_LABELS);
        for &e in &fwd.emissions {
            emissions.extend_from_slice(fwd.tape.value(e).data());
        }
        let emissions = Tensor::new(vec![t_len, N_LABELS], emissions)?;
        let mut trans = self.store.get(CRF_TRANS)?.clone();
        if self.config.bio_constrain {
            apply_bio_constraint(&mut trans);
        }
        let (path, viterbi_score) = crf::viterbi_decode(&trans, &emissions)?;
        let labels = path.iter().map(|&i| LABELS[i].to_string()).collect();
        let alphas = fwd.alphas.map(|ids| {
            ids.iter()
                .map(|&id| fwd.tape.value(id).data().to_vec())
                .collect()
        });
        Ok(TagResult {
            labels,
            alphas,
            oov: fwd.oov,
            viterbi_score,
        })
    }
}

/// Validated passthrough for the precomputed sentence-level visual vector;
/// absence legally selects the two-modality path downstream.
pub fn embed_visual(visual: Option<&[f64]>, d_v: usize) -> Result<Option<&[f64]>> {
    match visual {
        Some(v) if v.len() != d_v => Err(Error::ShapeMismatch {
            op: "visual vector",
            left: vec![d_v],
            right: vec![v.len()],
        }),
        other => Ok(other),
    }
}

/// The per-modality transform sigma_m: tanh(W . raw + b), bringing a raw
/// channel vector into the shared width p.
pub fn project_modality(weight: &Tensor, bias: &Tensor, raw: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let x = tape.constant(raw.clone());
    let pre = tape.affine(w, x, Some(b))?;
    let out = tape.tanh(pre);
    Ok(tape.value(out).clone())
}

/// Mask transitions that violate the BIO scheme: I-X may only follow B-X or
/// I-X. Used at decode time only.
pub fn apply_bio_constraint(trans: &mut Tensor) {
    let n = N_LABELS + 2;
    debug_assert_eq!(trans.shape(), &[n, n]);
    for ty in ENTITY_TYPES {
        let inside = ty.inside_label();
        let begin = ty.begin_label();
        for from in 0..n {
            if from != inside && from != begin {
                trans.data_mut()[inside * n + from] = crf::MASK;
            }
        }
    }
}

pub fn bio_constrained(trans: &Tensor) -> Tensor {
    let mut out = trans.clone();
    apply_bio_constraint(&mut out);
    out
}

fn gold_indices(sentence: &Sentence) -> Result<Vec<usize>> {
    let labels = sentence.labels.as_ref().ok_or_else(|| {
        Error::InvalidArgument("training requires gold labels on every sentence".into())
    })?;
    if labels.len() != sentence.tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence has {} tokens but {} labels",
            sentence.tokens.len(),
            labels.len()
        )));
    }
    labels
        .iter()
        .map(|l| {
            label_index(l).ok_or_else(|| Error::InvalidArgument(format!("unknown label {l:?}")))
        })
        .collect()
}

/// Build the whole differentiable forward pass for one sentence on a fresh
/// tape. `store` is taken explicitly so gradient checks can rebuild the
/// same loss from perturbed parameters.
pub fn build_sentence_forward(
    config: &TrainConfig,
    store: &ParameterStore,
    words: Option<&EmbeddingTable>,
    char_vocab: &CharVocab,
    sentence: &Sentence,
    with_loss: bool,
) -> Result<SentenceForward> {
    if sentence.tokens.is_empty() {
        return Err(Error::InvalidArgument("empty sentence".into()));
    }
    for token in &sentence.tokens {
        if token.is_empty() {
            return Err(Error::InvalidArgument("empty token".into()));
        }
    }
    let gold = if with_loss {
        Some(gold_indices(sentence)?)
    } else {
        None
    };
    let visual = if config.modalities.visual {
        let v = sentence.visual.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "modality set includes v but the sentence has no visual vector".into(),
            )
        })?;
        if v.len() != config.d_v {
            return Err(Error::ShapeMismatch {
                op: "visual vector",
                left: vec![config.d_v],
                right: vec![v.len()],
            });
        }
        Some(v.clone())
    } else {
        None
    };
    let word_table = if config.modalities.word {
        Some(words.ok_or_else(|| {
            Error::InvalidArgument("word channel enabled but no embedding table given".into())
        })?)
    } else {
        None
    };

    let mut tape = Tape::new();
    let mut nodes: BTreeMap<String, NodeId> = BTreeMap::new();
    for (name, tensor) in store.iter() {
        nodes.insert(name.to_string(), tape.parameter(name, tensor.clone()));
    }
    let param = |nodes: &BTreeMap<String, NodeId>, name: &str| -> Result<NodeId> {
        nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    };

    let project = |tape: &mut Tape,
                   nodes: &BTreeMap<String, NodeId>,
                   m: Modality,
                   raw: NodeId|
     -> Result<NodeId> {
        let w = param(nodes, &sigma_weight_name(m))?;
        let b = param(nodes, &sigma_bias_name(m))?;
        let pre = tape.affine(w, raw, Some(b))?;
        Ok(tape.tanh(pre))
    };

    // the visual projection is token-independent; build it once
    let visual_proj = match &visual {
        Some(v) => {
            let raw = tape.constant(Tensor::vector(v.clone()));
            Some(project(&mut tape, &nodes, Modality::Visual, raw)?)
        }
        None => None,
    };

    let char_spec = MnerModel::char_spec(config);
    let mut fused_all = Vec::with_capacity(sentence.len());
    let mut alphas = Vec::with_capacity(sentence.len());
    let mut oov = Vec::with_capacity(sentence.len());

    for token in &sentence.tokens {
        let mut inputs: Vec<(Modality, NodeId)> = Vec::with_capacity(3);
        if let Some(table) = word_table {
            let (row, kind) = table.lookup(token);
            oov.push(kind == LookupKind::Unk);
            let raw = tape.constant(Tensor::vector(row.to_vec()));
            inputs.push((Modality::Word, project(&mut tape, &nodes, Modality::Word, raw)?));
        } else {
            oov.push(false);
        }
        if config.modalities.chars {
            let encoded = char_spec.encode(&mut tape, &nodes, char_vocab, token)?;
            inputs.push((
                Modality::Char,
                project(&mut tape, &nodes, Modality::Char, encoded)?,
            ));
        }
        if let Some(vp) = visual_proj {
            inputs.push((Modality::Visual, vp));
        }

        let fused = match config.fusion {
            FusionMode::Attention => {
                let (fused, alpha) = fusion::attend_on_tape(&mut tape, &nodes, &inputs)?;
                alphas.push(alpha);
                fused
            }
            FusionMode::Concat => fusion::concat_on_tape(&mut tape, &inputs)?,
        };
        fused_all.push(fused);
    }

    let entity = MnerModel::entity_spec(config);
    let contexts = entity.encode(&mut tape, &nodes, &fused_all)?;

    let emit_w = param(&nodes, CRF_EMIT_WEIGHT)?;
    let emit_b = param(&nodes, CRF_EMIT_BIAS)?;
    let emissions: Result<Vec<NodeId>> = contexts
        .iter()
        .map(|&ctx| tape.affine(emit_w, ctx, Some(emit_b)))
        .collect();
    let emissions = emissions?;

    let loss = match gold {
        Some(y) => {
            let trans = param(&nodes, CRF_TRANS)?;
            Some(crf::nll_on_tape(&mut tape, trans, &emissions, &y, N_LABELS)?)
        }
        None => None,
    };

    Ok(SentenceForward {
        tape,
        loss,
        emissions,
        alphas: (config.fusion == FusionMode::Attention).then_some(alphas),
        oov,
    })
}

/// Loss as a pure function of the parameter store; the closure handed to
/// the finite-difference checker.
pub fn sentence_nll_with_store(
    config: &TrainConfig,
    store: &ParameterStore,
    words: Option<&EmbeddingTable>,
    char_vocab: &CharVocab,
    sentence: &Sentence,
) -> Result<f64> {
    let fwd = build_sentence_forward(config, store, words, char_vocab, sentence, true)?;
    Ok(fwd.tape.value(fwd.loss.unwrap()).scalar_value())
}

/// A deliberately small model/sentence pair exercising every channel; used
/// by the gradcheck CLI command and the end-to-end gradient tests.
pub fn tiny_gradcheck_fixture(seed: u64) -> Result<(MnerModel, Sentence)> {
    let mut config = TrainConfig::default();
    config.p = 8;
    config.hidden = 6;
    config.char_embed = 4;
    config.char_hidden = 4;
    config.seed = seed;
    config.modalities = "wcv".parse()?;
    config.fusion = FusionMode::Attention;
    config.d_v = 5;

    let rows = vec![
        ("night".to_string(), vec![0.1, -0.3, 0.8]),
        ("the".to_string(), vec![0.05, 0.2, -0.1]),
        ("warriors".to_string(), vec![-0.4, 0.9, 0.3]),
    ];
    let (table, _) = EmbeddingTable::from_rows(rows, config.unk_policy)?;
    let char_vocab = CharVocab::build(["the", "warriors", "night", "gamex"]);
    let mut model = MnerModel::new(config, Some(table), char_vocab)?;
    model.reinitialize_uniform(0.8, seed)?;
    let sentence = Sentence {
        tokens: vec![
            "the".to_string(),
            "WaRriOoOrs".to_string(),
            "game".to_string(),
            "night".to_string(),
        ],
        labels: Some(vec![
            "O".to_string(),
            "B-ORG".to_string(),
            "O".to_string(),
            "O".to_string(),
        ]),
        visual: Some(vec![0.3, -0.6, 0.2, 0.9, -0.1]),
    };
    Ok((model, sentence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::eval::EntityType;
    use crate::gradcheck::finite_difference_check;

    fn small_model(modalities: &str, fusion: FusionMode) -> (MnerModel, Sentence) {
        let mut config = TrainConfig::default();
        config.p = 6;
        config.hidden = 4;
        config.char_embed = 3;
        config.char_hidden = 3;
        config.seed = 5;
        config.modalities = modalities.parse().unwrap();
        config.fusion = fusion;
        config.d_v = 4;
        let rows = vec![
            ("alpha".to_string(), vec![0.2, -0.1]),
            ("beta".to_string(), vec![0.4, 0.3]),
        ];
        let (table, _) = EmbeddingTable::from_rows(rows, config.unk_policy).unwrap();
        let vocab = CharVocab::build(["alpha", "beta"]);
        let model = MnerModel::new(config, Some(table), vocab).unwrap();
        let sentence = Sentence {
            tokens: vec!["alpha".into(), "zeta".into(), "beta".into()],
            labels: Some(vec!["B-PER".into(), "I-PER".into(), "O".into()]),
            visual: Some(vec![0.5, -0.5, 0.25, 0.0]),
        };
        (model, sentence)
    }

    #[test]
    fn zero_parameter_model_has_uniform_loss() {
        let (mut model, sentence) = small_model("wc", FusionMode::Concat);
        for name in model.store.names().map(str::to_string).collect::<Vec<_>>() {
            if name == CRF_TRANS {
                continue;
            }
            let t = model.store.get_mut(&name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let t = model.store.get_mut(CRF_TRANS).unwrap();
        for v in t.data_mut() {
            *v = 0.0;
        }
        apply_virtual_masks(model.store.get_mut(CRF_TRANS).unwrap(), N_LABELS);
        let loss = model.sentence_nll(&sentence).unwrap();
        assert_abs_diff_eq!(loss, 3.0 * 9.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn loss_depends_only_on_embedding_and_chars() {
        // two surface forms whose characters all map to UNK and whose word
        // lookups both miss: the loss cannot distinguish them
        let (model, mut sentence) = small_model("wc", FusionMode::Attention);
        sentence.tokens[1] = "ΩΨ".into();
        let a = model.sentence_nll(&sentence).unwrap();
        sentence.tokens[1] = "ΦΣ".into();
        let b = model.sentence_nll(&sentence).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn missing_visual_is_rejected() {
        let (model, mut sentence) = small_model("wcv", FusionMode::Attention);
        sentence.visual = None;
        assert!(model.sentence_nll(&sentence).is_err());
        sentence.visual = Some(vec![0.1; 3]);
        assert!(model.sentence_nll(&sentence).is_err());
    }

    #[test]
    fn identical_seeds_build_identical_models() {
        let (a, _) = small_model("wcv", FusionMode::Attention);
        let (b, _) = small_model("wcv", FusionMode::Attention);
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn tagging_returns_labels_and_alphas() {
        let (model, sentence) = small_model("wcv", FusionMode::Attention);
        let tag = model.tag_sentence(&sentence).unwrap();
        assert_eq!(tag.labels.len(), 3);
        let alphas = tag.alphas.unwrap();
        assert_eq!(alphas.len(), 3);
        assert_eq!(alphas[0].len(), 3);
        for alpha in &alphas {
            assert_abs_diff_eq!(alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert_eq!(tag.oov, vec![false, true, false]);
    }

    #[test]
    fn concat_mode_has_no_alphas() {
        let (model, sentence) = small_model("wc", FusionMode::Concat);
        let tag = model.tag_sentence(&sentence).unwrap();
        assert!(tag.alphas.is_none());
    }

    #[test]
    fn bio_constraint_blocks_orphan_inside() {
        let (model, _) = small_model("wc", FusionMode::Concat);
        let mut trans = model.store.get(CRF_TRANS).unwrap().clone();
        apply_bio_constraint(&mut trans);
        let n = N_LABELS + 2;
        let i_per = EntityType::Per.inside_label();
        let b_per = EntityType::Per.begin_label();
        for from in 0..n {
            let v = trans.data()[i_per * n + from];
            if from == b_per || from == i_per {
                assert!(v > crf::MASK);
            } else {
                assert_eq!(v, crf::MASK);
            }
        }
    }

    #[test]
    fn embed_visual_is_validated_passthrough() {
        let v = vec![0.0; 1024];
        assert_eq!(embed_visual(Some(&v), 1024).unwrap().unwrap().len(), 1024);
        assert!(embed_visual(None, 1024).unwrap().is_none());
        let short = vec![0.0; 512];
        assert!(embed_visual(Some(&short), 1024).is_err());
    }

    #[test]
    fn project_modality_zero_input_zero_bias_is_zero() {
        let w = Tensor::matrix(3, 2, vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3]).unwrap();
        let b = Tensor::zeros(vec![3]);
        let out = project_modality(&w, &b, &Tensor::zeros(vec![2])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn project_modality_output_is_bounded() {
        let w = Tensor::matrix(4, 2, vec![5.0, -3.0, 2.0, 8.0, -6.0, 1.0, 0.5, 0.5]).unwrap();
        let b = Tensor::vector(vec![10.0, -10.0, 0.1, 0.0]);
        let out = project_modality(&w, &b, &Tensor::vector(vec![3.0, -2.0])).unwrap();
        let norm: f64 = out.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        // mathematically (-1, 1); saturated tanh rounds to the endpoints
        assert!(out.data().iter().all(|v| v.abs() <= 1.0));
        assert!(norm <= 2.0); // sqrt(p) with p = 4
        assert!(project_modality(&w, &b, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_end_to_end() {
        for (mods, fusion) in [
            ("wcv", FusionMode::Attention),
            ("wc", FusionMode::Attention),
            ("wc", FusionMode::Concat),
            ("w", FusionMode::Concat),
            ("c", FusionMode::Concat),
        ] {
            let (mut model, sentence) = small_model(mods, fusion);
            model.reinitialize_uniform(0.8, 23).unwrap();
            let (_, analytic) = model.sentence_gradients(&sentence).unwrap();
            let report = finite_difference_check(
                |s| {
                    sentence_nll_with_store(
                        &model.config,
                        s,
                        model.words.as_ref(),
                        &model.char_vocab,
                        &sentence,
                    )
                },
                &model.store,
                &analytic,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass, "{mods}/{fusion:?}: {}", report.summary());
        }
    }
}

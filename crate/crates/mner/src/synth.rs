//! Synthetic multimodal corpus generator.
//!
//! Each sentence draws a visual topic; its feature vector comes from a
//! per-topic isotropic Gaussian. Tokens are emitted per slot from a
//! topic-conditioned mixture of filler words, entity mentions (only under
//! the topic aligned with the entity's type), and polysemous surface forms
//! used as common nouns (only under topics not aligned with their type).
//! A polysemous mention is therefore labelable only from the visual
//! channel. A configurable fraction of entity mentions is character-
//! perturbed (trailing-character repetition or random case flips), keeping
//! the gold label while falling out of the emitted word-vector vocabulary.
//!
//! Because the generator knows its own mixing weights, it can also compute
//! exact Bayes-optimal predictions with and without the visual channel;
//! the gap between the two scores bounds what any trained model can gain
//! from vision and is used to pin experiment thresholds.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::eval::{EntityType, Metrics, ENTITY_TYPES};
use crate::tensor::logsumexp;

const FILLER_LEXICON: usize = 80;
const EMBED_DIM: usize = 20;
const TOPIC_MEAN_SCALE: f64 = 3.0;
/// Popularity boost for polysemous forms in entity draws.
const POLY_BOOST: f64 = 3.0;
const P_ENTITY: f64 = 0.10;
const P_POLYNOUN_ALIGNED: f64 = 0.04;
/// Keeps the filler mass identical across aligned and neutral topics, so
/// filler tokens carry no topic information.
const P_POLYNOUN_NEUTRAL: f64 = P_ENTITY + P_POLYNOUN_ALIGNED;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_sentences: usize,
    pub mean_tokens: f64,
    pub lexicon_per_type: usize,
    pub n_visual_topics: usize,
    pub d_v: usize,
    pub polysemy: f64,
    pub oov_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_sentences: 10_000,
            mean_tokens: 6.0,
            lexicon_per_type: 20,
            n_visual_topics: 8,
            d_v: 1024,
            polysemy: 0.3,
            oov_noise: 0.15,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sentences == 0 || self.lexicon_per_type == 0 || self.d_v == 0 {
            return Err(Error::InvalidArgument(
                "synthetic config counts must be positive".into(),
            ));
        }
        if self.n_visual_topics < ENTITY_TYPES.len() {
            return Err(Error::InvalidArgument(format!(
                "need at least {} visual topics (one per entity type)",
                ENTITY_TYPES.len()
            )));
        }
        if !(self.mean_tokens >= 1.0) {
            return Err(Error::InvalidArgument(
                "mean tokens per sentence must be at least 1".into(),
            ));
        }
        for (name, v) in [("polysemy", self.polysemy), ("oov_noise", self.oov_noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} rate must be in [0, 1], got {v}"
                )));
            }
        }
        let poly_count = (self.polysemy * self.lexicon_per_type as f64).floor() as usize;
        if self.polysemy > 0.0 && poly_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "lexicon of {} names per type is too small for polysemy rate {}",
                self.lexicon_per_type, self.polysemy
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EntityForm {
    pub ty: EntityType,
    pub tokens: Vec<String>,
    pub poly: bool,
}

/// The fitted world: lexicons, rates, and topic means. Everything the
/// exact Bayes predictor needs.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub cfg: SyntheticConfig,
    pub fillers: Vec<String>,
    pub forms: Vec<EntityForm>,
    pub forms_by_type: [Vec<usize>; 4],
    pub topic_means: Vec<Vec<f64>>,
}

impl GeneratorModel {
    fn aligned_topics(&self) -> usize {
        ENTITY_TYPES.len()
    }

    fn type_weight_sum(&self, ty_idx: usize) -> f64 {
        self.forms_by_type[ty_idx]
            .iter()
            .map(|&f| if self.forms[f].poly { POLY_BOOST } else { 1.0 })
            .sum()
    }

    fn poly_count(&self, ty_idx: usize) -> usize {
        self.forms_by_type[ty_idx]
            .iter()
            .filter(|&&f| self.forms[f].poly)
            .count()
    }

    fn total_poly(&self) -> usize {
        self.forms.iter().filter(|f| f.poly).count()
    }

    /// Per-slot probability that topic `z` emits this form (as entity or
    /// noun, summed over the hidden role).
    fn form_likelihood(&self, form: usize, z: usize) -> f64 {
        let f = &self.forms[form];
        let ty_idx = ENTITY_TYPES.iter().position(|t| *t == f.ty).unwrap();
        let mut p = 0.0;
        if z == ty_idx {
            let w = if f.poly { POLY_BOOST } else { 1.0 };
            p += P_ENTITY * w / self.type_weight_sum(ty_idx);
        } else if f.poly {
            if z < self.aligned_topics() {
                let pool = self.total_poly() - self.poly_count(z);
                if pool > 0 {
                    p += P_POLYNOUN_ALIGNED / pool as f64;
                }
            } else {
                p += P_POLYNOUN_NEUTRAL / self.total_poly() as f64;
            }
        }
        p
    }

    /// Matches the generator exactly: when the noun pool for a topic is
    /// empty, its probability window falls through to fillers.
    fn filler_likelihood(&self, z: usize) -> f64 {
        let mass = if z < self.aligned_topics() {
            if self.total_poly() - self.poly_count(z) > 0 {
                1.0 - P_ENTITY - P_POLYNOUN_ALIGNED
            } else {
                1.0 - P_ENTITY
            }
        } else if self.total_poly() > 0 {
            1.0 - P_POLYNOUN_NEUTRAL
        } else {
            1.0
        };
        mass / self.fillers.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenOrigin {
    Filler,
    /// `part` indexes into the form's token list; `original` is the
    /// unperturbed surface form of this token.
    Entity {
        form: usize,
        part: usize,
        perturbed: bool,
        original: String,
    },
    PolyNoun {
        form: usize,
        part: usize,
    },
}

#[derive(Debug, Clone)]
pub struct GeneratedSentence {
    pub sentence: Sentence,
    pub topic: usize,
    pub origins: Vec<TokenOrigin>,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub train: Vec<GeneratedSentence>,
    pub dev: Vec<GeneratedSentence>,
    pub test: Vec<GeneratedSentence>,
    /// Word-vector file covering exactly the unperturbed vocabulary.
    pub embeddings_text: String,
    pub model: GeneratorModel,
}

impl SynthOutput {
    pub fn sentences(split: &[GeneratedSentence]) -> Vec<Sentence> {
        split.iter().map(|g| g.sentence.clone()).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

const CONSONANTS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Naming-pattern suffix per entity type. Appended to the final token of
/// each name, so spelling alone carries the type the way real surnames,
/// place names, and company names do. Fillers are consonant-vowel chains
/// and always end in a vowel, so suffixed tokens can never collide with
/// them.
fn type_suffix(ty: EntityType) -> &'static str {
    match ty {
        EntityType::Per => "son",
        EntityType::Loc => "ton",
        EntityType::Org => "corp",
        EntityType::Misc => "fest",
    }
}

fn syllable_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=4);
    let mut word = String::new();
    for _ in 0..syllables {
        word.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        word.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    word
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Draw a fresh word whose lowercase form has not been used anywhere yet;
/// keeps perturbed forms recognizably out-of-vocabulary later.
fn fresh_word(rng: &mut ChaCha8Rng, used_lower: &mut BTreeSet<String>) -> String {
    loop {
        let w = syllable_word(rng);
        if used_lower.insert(w.clone()) {
            return w;
        }
    }
}

pub fn build_generator_model(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> GeneratorModel {
    let mut used_lower = BTreeSet::new();
    let fillers: Vec<String> = (0..FILLER_LEXICON)
        .map(|_| fresh_word(rng, &mut used_lower))
        .collect();

    let mut forms = Vec::new();
    let mut forms_by_type: [Vec<usize>; 4] = Default::default();
    let poly_count = (cfg.polysemy * cfg.lexicon_per_type as f64).floor() as usize;
    for (ty_idx, ty) in ENTITY_TYPES.into_iter().enumerate() {
        for i in 0..cfg.lexicon_per_type {
            let n_tokens = if rng.gen::<f64>() < 0.6 { 1 } else { 2 };
            let tokens: Vec<String> = (0..n_tokens)
                .map(|part| {
                    let mut word = fresh_word(rng, &mut used_lower);
                    if part + 1 == n_tokens {
                        word.push_str(type_suffix(ty));
                        used_lower.insert(word.clone());
                    }
                    capitalize(&word)
                })
                .collect();
            forms_by_type[ty_idx].push(forms.len());
            forms.push(EntityForm {
                ty,
                tokens,
                poly: i < poly_count,
            });
        }
    }

    let topic_means: Vec<Vec<f64>> = (0..cfg.n_visual_topics)
        .map(|_| (0..cfg.d_v).map(|_| TOPIC_MEAN_SCALE * gaussian(rng)).collect())
        .collect();

    GeneratorModel {
        cfg: cfg.clone(),
        fillers,
        forms,
        forms_by_type,
        topic_means,
    }
}

fn perturb_token(rng: &mut ChaCha8Rng, token: &str) -> String {
    for _ in 0..16 {
        let out = if rng.gen::<f64>() < 0.5 {
            let mut out = token.to_string();
            let last = out.chars().last().unwrap();
            let extra = rng.gen_range(2..=5);
            for _ in 0..extra {
                out.push(last);
            }
            out
        } else {
            token
                .chars()
                .map(|c| {
                    if rng.gen::<f64>() < 0.5 {
                        if c.is_uppercase() {
                            c.to_lowercase().next().unwrap()
                        } else {
                            c.to_uppercase().next().unwrap()
                        }
                    } else {
                        c
                    }
                })
                .collect()
        };
        if out != token {
            return out;
        }
    }
    // flip everything as a last resort
    token
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                c.to_lowercase().next().unwrap()
            } else {
                c.to_uppercase().next().unwrap()
            }
        })
        .collect()
}

fn weighted_form_draw(model: &GeneratorModel, ty_idx: usize, rng: &mut ChaCha8Rng) -> usize {
    let total = model.type_weight_sum(ty_idx);
    let mut target = rng.gen::<f64>() * total;
    for &f in &model.forms_by_type[ty_idx] {
        let w = if model.forms[f].poly { POLY_BOOST } else { 1.0 };
        if target < w {
            return f;
        }
        target -= w;
    }
    *model.forms_by_type[ty_idx].last().unwrap()
}

fn poly_pool(model: &GeneratorModel, exclude_type: Option<usize>) -> Vec<usize> {
    model
        .forms
        .iter()
        .enumerate()
        .filter(|(_, f)| f.poly)
        .filter(|(_, f)| match exclude_type {
            Some(ty_idx) => f.ty != ENTITY_TYPES[ty_idx],
            None => true,
        })
        .map(|(i, _)| i)
        .collect()
}

fn generate_sentence(
    model: &GeneratorModel,
    rng: &mut ChaCha8Rng,
) -> GeneratedSentence {
    let cfg = &model.cfg;
    let n_topics = cfg.n_visual_topics;
    let aligned = ENTITY_TYPES.len();
    let topic = rng.gen_range(0..n_topics);

    let visual: Vec<f64> = model.topic_means[topic]
        .iter()
        .map(|m| m + gaussian(rng))
        .collect();

    let t_len = 1 + poisson(rng, cfg.mean_tokens - 1.0);
    let mut tokens = Vec::with_capacity(t_len + 1);
    let mut labels = Vec::with_capacity(t_len + 1);
    let mut origins = Vec::with_capacity(t_len + 1);

    while tokens.len() < t_len {
        let r: f64 = rng.gen();
        let is_aligned = topic < aligned;
        if is_aligned && r < P_ENTITY {
            let form = weighted_form_draw(model, topic, rng);
            let ty = model.forms[form].ty;
            let perturb_mention = rng.gen::<f64>() < cfg.oov_noise;
            let victim = if perturb_mention {
                rng.gen_range(0..model.forms[form].tokens.len())
            } else {
                usize::MAX
            };
            for (part, original) in model.forms[form].tokens.clone().into_iter().enumerate() {
                let perturbed = part == victim;
                let surface = if perturbed {
                    perturb_token(rng, &original)
                } else {
                    original.clone()
                };
                tokens.push(surface);
                labels.push(if part == 0 {
                    format!("B-{ty}")
                } else {
                    format!("I-{ty}")
                });
                origins.push(TokenOrigin::Entity {
                    form,
                    part,
                    perturbed,
                    original,
                });
            }
        } else {
            let noun_rate = if is_aligned {
                P_ENTITY + P_POLYNOUN_ALIGNED
            } else {
                P_POLYNOUN_NEUTRAL
            };
            let pool = if r < noun_rate {
                poly_pool(model, is_aligned.then_some(topic))
            } else {
                Vec::new()
            };
            if !pool.is_empty() {
                let form = pool[rng.gen_range(0..pool.len())];
                for (part, tok) in model.forms[form].tokens.iter().enumerate() {
                    tokens.push(tok.clone());
                    labels.push("O".to_string());
                    origins.push(TokenOrigin::PolyNoun { form, part });
                }
            } else {
                tokens.push(model.fillers[rng.gen_range(0..model.fillers.len())].clone());
                labels.push("O".to_string());
                origins.push(TokenOrigin::Filler);
            }
        }
    }

    GeneratedSentence {
        sentence: Sentence {
            tokens,
            labels: Some(labels),
            visual: Some(visual),
        },
        topic,
        origins,
    }
}

/// Emit the corpus triple, fully seeded: identical configs produce
/// bit-identical corpora and embedding files.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = build_generator_model(cfg, &mut rng);

    let mut sentences: Vec<GeneratedSentence> = (0..cfg.n_sentences)
        .map(|_| generate_sentence(&model, &mut rng))
        .collect();

    // seeded shuffle, then a deterministic 70/15/15 split by position
    for i in (1..sentences.len()).rev() {
        let j = rng.gen_range(0..=i);
        sentences.swap(i, j);
    }
    let n = sentences.len();
    let n_train = (0.7 * n as f64).floor() as usize;
    let n_dev = (0.15 * n as f64).floor() as usize;
    let test = sentences.split_off(n_train + n_dev);
    let dev = sentences.split_off(n_train);
    let train = sentences;

    // embedding file over the unperturbed vocabulary, in sorted order
    let mut vocab: BTreeSet<&str> = model.fillers.iter().map(String::as_str).collect();
    for form in &model.forms {
        vocab.extend(form.tokens.iter().map(String::as_str));
    }
    let mut embeddings_text = String::new();
    for token in vocab {
        embeddings_text.push_str(token);
        for _ in 0..EMBED_DIM {
            embeddings_text.push_str(&format!(" {:.6}", rng.gen_range(-0.5..0.5)));
        }
        embeddings_text.push('\n');
    }

    Ok(SynthOutput {
        train,
        dev,
        test,
        embeddings_text,
        model,
    })
}

/// Exact per-sentence MAP labeling under the generator's own mixture,
/// optionally conditioning on the visual vector. Perturbed mentions are
/// resolved through provenance, making this an upper bound on any learned
/// text model.
pub fn bayes_predict(
    model: &GeneratorModel,
    gs: &GeneratedSentence,
    use_visual: bool,
) -> Vec<String> {
    let n_topics = model.cfg.n_visual_topics;
    let mut log_post: Vec<f64> = vec![-(n_topics as f64).ln(); n_topics];

    for z in 0..n_topics {
        let mut acc = 0.0f64;
        for origin in &gs.origins {
            let p = match origin {
                TokenOrigin::Filler => model.filler_likelihood(z),
                TokenOrigin::Entity { form, part, .. } | TokenOrigin::PolyNoun { form, part } => {
                    if *part > 0 {
                        continue; // the mention is one draw; count its head only
                    }
                    model.form_likelihood(*form, z)
                }
            };
            acc += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        }
        if use_visual {
            let v = gs.sentence.visual.as_ref().expect("generated sentences carry visuals");
            let mean = &model.topic_means[z];
            let sq: f64 = v.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += -0.5 * sq;
        }
        log_post[z] += acc;
    }
    let norm = logsumexp(&log_post);

    let mut labels = Vec::with_capacity(gs.origins.len());
    for origin in &gs.origins {
        match origin {
            TokenOrigin::Filler => labels.push("O".to_string()),
            TokenOrigin::Entity { form, part, .. } | TokenOrigin::PolyNoun { form, part } => {
                let ty = model.forms[*form].ty;
                let ty_idx = ENTITY_TYPES.iter().position(|t| *t == ty).unwrap();
                let p_entity = (log_post[ty_idx] - norm).exp();
                if p_entity > 0.5 {
                    labels.push(if *part == 0 {
                        format!("B-{ty}")
                    } else {
                        format!("I-{ty}")
                    });
                } else {
                    labels.push("O".to_string());
                }
            }
        }
    }
    labels
}

/// Score the Bayes-optimal predictions on a split, with and without the
/// visual channel.
pub fn bayes_reference(
    model: &GeneratorModel,
    split: &[GeneratedSentence],
) -> Result<(Metrics, Metrics)> {
    let gold: Vec<Vec<String>> = split
        .iter()
        .map(|g| g.sentence.labels.clone().unwrap())
        .collect();
    let text: Vec<Vec<String>> = split.iter().map(|g| bayes_predict(model, g, false)).collect();
    let visual: Vec<Vec<String>> = split.iter().map(|g| bayes_predict(model, g, true)).collect();
    Ok((
        crate::eval::score_predictions(&gold, &text)?,
        crate::eval::score_predictions(&gold, &visual)?,
    ))
}

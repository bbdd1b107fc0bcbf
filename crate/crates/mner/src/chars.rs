//! Character-level encoder: per-character embeddings fed through a
//! bidirectional LSTM; the token representation is the concatenation of
//! the two final hidden states (width 2 * char hidden).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::lstm::{BiLstmSpec, GateMode};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const CHAR_EMBED_PARAM: &str = "char_embed";

/// Index 0 is reserved for characters unseen in training data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    index: BTreeMap<char, usize>,
}

impl CharVocab {
    /// Collect the characters of every token in the training corpus.
    pub fn build<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut set = BTreeSet::new();
        for token in tokens {
            set.extend(token.as_ref().chars());
        }
        CharVocab {
            index: set.into_iter().zip(1..).collect(),
        }
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        CharVocab {
            index: set.into_iter().zip(1..).collect(),
        }
    }

    /// Rows of the embedding matrix: vocabulary size plus the UNK slot.
    pub fn table_rows(&self) -> usize {
        self.index.len() + 1
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.index.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CharEncoderSpec {
    pub embed_dim: usize,
    pub hidden: usize,
    pub bilstm: BiLstmSpec,
}

impl CharEncoderSpec {
    pub fn new(embed_dim: usize, hidden: usize, mode: GateMode) -> Self {
        CharEncoderSpec {
            embed_dim,
            hidden,
            bilstm: BiLstmSpec::new("char", embed_dim, hidden, mode),
        }
    }

    /// Output width d_c = 2 * hidden.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn weight_shapes(&self, vocab: &CharVocab) -> Vec<(String, Vec<usize>)> {
        let mut shapes = vec![(
            CHAR_EMBED_PARAM.to_string(),
            vec![vocab.table_rows(), self.embed_dim],
        )];
        shapes.extend(self.bilstm.weight_shapes());
        shapes
    }

    pub fn bias_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.bilstm.bias_shapes()
    }

    /// Encode one token on the tape. Empty tokens are rejected.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &BTreeMap<String, NodeId>,
        vocab: &CharVocab,
        token: &str,
    ) -> Result<NodeId> {
        if token.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot character-encode an empty token".into(),
            ));
        }
        let embed = params
            .get(CHAR_EMBED_PARAM)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(CHAR_EMBED_PARAM.into()))?;
        let inputs: Result<Vec<NodeId>> = token
            .chars()
            .map(|c| tape.pick(embed, vocab.lookup(c)))
            .collect();
        self.bilstm.encode_final(tape, params, &inputs?)
    }
}

/// Value-level wrapper around `encode` for tests and parity checks.
pub fn encode_chars_values(
    spec: &CharEncoderSpec,
    vocab: &CharVocab,
    store: &crate::params::ParameterStore,
    token: &str,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut nodes = BTreeMap::new();
    for (name, _) in spec
        .weight_shapes(vocab)
        .iter()
        .chain(spec.bias_shapes().iter())
    {
        nodes.insert(name.clone(), tape.parameter(name, store.get(name)?.clone()));
    }
    let out = spec.encode(&mut tape, &nodes, vocab, token)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_parameters, InitScheme, ParameterStore};

    fn spec_and_vocab() -> (CharEncoderSpec, CharVocab) {
        let spec = CharEncoderSpec::new(3, 2, GateMode::Literal);
        let vocab = CharVocab::from_chars("abcdef".chars());
        (spec, vocab)
    }

    fn store_for(spec: &CharEncoderSpec, vocab: &CharVocab, scheme: InitScheme, seed: u64) -> ParameterStore {
        let mut store = init_parameters(&spec.weight_shapes(vocab), scheme, seed).unwrap();
        store
            .absorb(init_parameters(&spec.bias_shapes(), InitScheme::Zeros, 0).unwrap())
            .unwrap();
        store
    }

    #[test]
    fn unseen_chars_map_to_unk_slot() {
        let vocab = CharVocab::from_chars("ab".chars());
        assert_eq!(vocab.lookup('a'), 1);
        assert_eq!(vocab.lookup('b'), 2);
        assert_eq!(vocab.lookup('z'), 0);
        assert_eq!(vocab.table_rows(), 3);
    }

    #[test]
    fn zero_parameters_yield_zero_vector() {
        let (spec, vocab) = spec_and_vocab();
        let store = store_for(&spec, &vocab, InitScheme::Zeros, 0);
        let out = encode_chars_values(&spec, &vocab, &store, "a").unwrap();
        assert_eq!(out.shape(), &[4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let (spec, vocab) = spec_and_vocab();
        let store = store_for(&spec, &vocab, InitScheme::Uniform(0.4), 3);
        let a = encode_chars_values(&spec, &vocab, &store, "fade").unwrap();
        let b = encode_chars_values(&spec, &vocab, &store, "fade").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_token_rejected() {
        let (spec, vocab) = spec_and_vocab();
        let store = store_for(&spec, &vocab, InitScheme::Zeros, 0);
        assert!(encode_chars_values(&spec, &vocab, &store, "").is_err());
    }

    #[test]
    fn tied_directions_swap_halves_on_reversed_token() {
        let (spec, vocab) = spec_and_vocab();
        let fwd_w =
            init_parameters(&spec.bilstm.fwd.weight_shapes(), InitScheme::Uniform(0.5), 31).unwrap();
        let fwd_b =
            init_parameters(&spec.bilstm.fwd.bias_shapes(), InitScheme::Uniform(0.5), 32).unwrap();
        let embed = init_parameters(
            &[(CHAR_EMBED_PARAM.to_string(), vec![vocab.table_rows(), 3])],
            InitScheme::Uniform(0.5),
            33,
        )
        .unwrap();
        let mut store = ParameterStore::empty(0);
        store.absorb(embed).unwrap();
        for (name, t) in fwd_w.iter().chain(fwd_b.iter()) {
            store.insert(name, t.clone()).unwrap();
            store
                .insert(&name.replace("char_fwd", "char_bwd"), t.clone())
                .unwrap();
        }
        let fwd = encode_chars_values(&spec, &vocab, &store, "abcd").unwrap();
        let rev = encode_chars_values(&spec, &vocab, &store, "dcba").unwrap();
        let h = spec.hidden;
        assert_eq!(&fwd.data()[..h], &rev.data()[h..]);
        assert_eq!(&fwd.data()[h..], &rev.data()[..h]);
    }
}

//! Pre-trained word-vector table: text-file ingestion, total lookup with
//! case fallback, and seeded vocabulary ablation.
//!
//! Lookup never fails: exact match first, then the lowercased form, then
//! the UNK vector (all-zero by default, or one fixed seeded uniform draw).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnkPolicy {
    Zero,
    /// Every unknown token gets its own vector, uniform on [-0.5, 0.5]
    /// (the order of typical pre-trained embedding magnitudes), derived
    /// deterministically from this seed and the token string. What a
    /// trained model sees for an unseen OOV token is therefore noise, not
    /// a learnable indicator direction.
    UniformRandom(u64),
}

impl UnkPolicy {
    pub fn as_config_str(&self) -> String {
        match self {
            UnkPolicy::Zero => "zero".to_string(),
            UnkPolicy::UniformRandom(seed) => format!("uniform:{seed}"),
        }
    }
}

impl FromStr for UnkPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(UnkPolicy::Zero);
        }
        if let Some(seed) = s.strip_prefix("uniform:") {
            let seed = seed
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("bad unk policy seed in {s:?}")))?;
            return Ok(UnkPolicy::UniformRandom(seed));
        }
        Err(Error::InvalidArgument(format!(
            "unknown unk policy {s:?} (expected zero or uniform:<seed>)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupKind {
    Exact,
    Lowercase,
    Unk,
}

fn fnv1a(s: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    /// token -> row index, sorted by token for deterministic iteration.
    index: BTreeMap<String, usize>,
    /// Row-major [vocab, dim].
    rows: Vec<f64>,
    zero_unk: Vec<f64>,
    policy: UnkPolicy,
    duplicate_count: usize,
}

impl EmbeddingTable {
    pub fn from_rows(
        entries: Vec<(String, Vec<f64>)>,
        policy: UnkPolicy,
    ) -> Result<(Self, usize)> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("no rows".into()));
        }
        let dim = entries[0].1.len();
        let mut index = BTreeMap::new();
        let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
        let mut duplicate_count = 0;
        for (token, vec) in entries {
            if vec.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "row for {token:?} has width {} but table width is {dim}",
                    vec.len()
                )));
            }
            if index.contains_key(&token) {
                duplicate_count += 1;
                continue;
            }
            index.insert(token.clone(), 0);
            kept.push((token, vec));
        }
        kept.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rows = Vec::with_capacity(kept.len() * dim);
        for (slot, (token, vec)) in kept.into_iter().enumerate() {
            *index.get_mut(&token).unwrap() = slot;
            rows.extend(vec);
        }
        Ok((
            EmbeddingTable {
                dim,
                index,
                rows,
                zero_unk: vec![0.0; dim],
                policy,
                duplicate_count,
            },
            duplicate_count,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    pub fn policy(&self) -> UnkPolicy {
        self.policy
    }

    pub fn duplicate_count(&self) -> usize {
        self.duplicate_count
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Tokens in sorted order with their row slices.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.index
            .iter()
            .map(|(t, &i)| (t.as_str(), &self.rows[i * self.dim..(i + 1) * self.dim]))
    }

    /// The vector an unknown token receives under the table's policy.
    pub fn unk_vector(&self, token: &str) -> std::borrow::Cow<'_, [f64]> {
        match self.policy {
            UnkPolicy::Zero => std::borrow::Cow::Borrowed(&self.zero_unk),
            UnkPolicy::UniformRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(token));
                std::borrow::Cow::Owned(
                    (0..self.dim).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
                )
            }
        }
    }

    /// Total lookup: exact row, else lowercase row, else the UNK vector.
    pub fn lookup(&self, token: &str) -> (std::borrow::Cow<'_, [f64]>, LookupKind) {
        if let Some(&i) = self.index.get(token) {
            return (
                std::borrow::Cow::Borrowed(&self.rows[i * self.dim..(i + 1) * self.dim]),
                LookupKind::Exact,
            );
        }
        let lower = token.to_lowercase();
        if lower != token {
            if let Some(&i) = self.index.get(&lower) {
                return (
                    std::borrow::Cow::Borrowed(&self.rows[i * self.dim..(i + 1) * self.dim]),
                    LookupKind::Lowercase,
                );
            }
        }
        (self.unk_vector(token), LookupKind::Unk)
    }

    /// Keep a seeded uniform sample of ceil(fraction * vocab) rows; removed
    /// tokens fall back to UNK at lookup time.
    pub fn ablate(&self, fraction: f64, seed: u64) -> Result<EmbeddingTable> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep fraction must be in (0, 1], got {fraction}"
            )));
        }
        let keep = (fraction * self.vocab_size() as f64).ceil() as usize;
        let mut tokens: Vec<&str> = self.index.keys().map(String::as_str).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates prefix: the first `keep` slots are the sample
        for i in 0..keep.min(tokens.len().saturating_sub(1)) {
            let j = rng.gen_range(i..tokens.len());
            tokens.swap(i, j);
        }
        let kept: Vec<(String, Vec<f64>)> = tokens[..keep]
            .iter()
            .map(|t| {
                let &i = self.index.get(*t).unwrap();
                (
                    t.to_string(),
                    self.rows[i * self.dim..(i + 1) * self.dim].to_vec(),
                )
            })
            .collect();
        let (table, _) = EmbeddingTable::from_rows(kept, self.policy)?;
        Ok(table)
    }
}

/// Parse a whitespace-delimited text table: one token per line followed by
/// its d_w reals. Duplicates keep the first occurrence; the count of
/// dropped duplicates is returned alongside.
pub fn parse_word_vectors(text: &str, policy: UnkPolicy) -> Result<(EmbeddingTable, usize)> {
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap().to_string();
        let mut vec = Vec::new();
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("unparseable real {field:?}"),
            })?;
            vec.push(v);
        }
        match width {
            None => {
                if vec.is_empty() {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: "token with no vector components".into(),
                    });
                }
                width = Some(vec.len());
            }
            Some(w) if w != vec.len() => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("vector width {} != expected {w}", vec.len()),
                });
            }
            _ => {}
        }
        entries.push((token, vec));
    }
    EmbeddingTable::from_rows(entries, policy)
}

pub fn load_word_vectors(path: &Path, policy: UnkPolicy) -> Result<(EmbeddingTable, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, policy)
}

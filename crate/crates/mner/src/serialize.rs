//! Binary model files.
//!
//! Layout (all integers little-endian u32, all reals little-endian f64):
//! magic `MNER`, format version, length-prefixed config text, three vocab
//! blocks (words, characters, labels; each a count followed by
//! length-prefixed UTF-8 strings with their u32 indices), a tensor count,
//! then per tensor: length-prefixed name, rank, dims, row-major values.

use std::fs;
use std::path::Path;

use crate::chars::CharVocab;
use crate::config::TrainConfig;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::LABELS;
use crate::model::MnerModel;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MNER";
const VERSION: u32 = 1;
const WORD_EMBED_TENSOR: &str = "word_embed";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.string(name);
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptModel("non-UTF-8 string".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_vocab_block(w: &mut Writer, entries: &[(String, u32)]) {
    w.u32(entries.len() as u32);
    for (s, idx) in entries {
        w.string(s);
        w.u32(*idx);
    }
}

fn read_vocab_block(r: &mut Reader) -> Result<Vec<(String, u32)>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = r.string()?;
        let idx = r.u32()?;
        out.push((s, idx));
    }
    Ok(out)
}

pub fn model_to_bytes(model: &MnerModel) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.string(&model.config.to_config_text());

    let word_entries: Vec<(String, u32)> = match &model.words {
        Some(table) => table
            .iter()
            .enumerate()
            .map(|(i, (tok, _))| (tok.to_string(), i as u32))
            .collect(),
        None => Vec::new(),
    };
    write_vocab_block(&mut w, &word_entries);

    let char_entries: Vec<(String, u32)> = model
        .char_vocab
        .chars()
        .map(|c| {
            let idx = model.char_vocab.lookup(c) as u32;
            (c.to_string(), idx)
        })
        .collect();
    write_vocab_block(&mut w, &char_entries);

    let label_entries: Vec<(String, u32)> = LABELS
        .iter()
        .enumerate()
        .map(|(i, l)| (l.to_string(), i as u32))
        .collect();
    write_vocab_block(&mut w, &label_entries);

    let n_tensors = model.store.len() + usize::from(model.words.is_some());
    w.u32(n_tensors as u32);
    for (name, t) in model.store.iter() {
        w.tensor(name, t);
    }
    if let Some(table) = &model.words {
        let mut data = Vec::with_capacity(table.vocab_size() * table.dim());
        for (_, row) in table.iter() {
            data.extend_from_slice(row);
        }
        let embed = Tensor::new(vec![table.vocab_size(), table.dim()], data)?;
        w.tensor(WORD_EMBED_TENSOR, &embed);
    }
    Ok(w.buf)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MnerModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let config = TrainConfig::from_config_text(&r.string()?)?;

    let word_entries = read_vocab_block(&mut r)?;
    let char_entries = read_vocab_block(&mut r)?;
    let label_entries = read_vocab_block(&mut r)?;
    if label_entries.len() != LABELS.len()
        || label_entries
            .iter()
            .enumerate()
            .any(|(i, (l, idx))| *idx != i as u32 || l != LABELS[i])
    {
        return Err(Error::CorruptModel("label set mismatch".into()));
    }

    let n_tensors = r.u32()? as usize;
    let mut store = ParameterStore::empty(config.seed);
    let mut word_embed: Option<Tensor> = None;
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 2 {
            return Err(Error::CorruptModel(format!(
                "tensor {name} has unsupported rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data)?;
        if name == WORD_EMBED_TENSOR {
            word_embed = Some(tensor);
        } else {
            store.insert(&name, tensor)?;
        }
    }
    if !r.done() {
        return Err(Error::CorruptModel("trailing bytes".into()));
    }

    let words = match word_embed {
        Some(embed) => {
            if embed.rows() != word_entries.len() || embed.cols() != config.d_w {
                return Err(Error::CorruptModel("word embedding shape mismatch".into()));
            }
            let mut rows = vec![(String::new(), Vec::new()); word_entries.len()];
            for (token, idx) in word_entries {
                let idx = idx as usize;
                if idx >= rows.len() {
                    return Err(Error::CorruptModel(format!(
                        "word index {idx} out of range"
                    )));
                }
                rows[idx] = (token, embed.row(idx).to_vec());
            }
            let (table, _) = EmbeddingTable::from_rows(rows, config.unk_policy)?;
            Some(table)
        }
        None => {
            if !word_entries.is_empty() {
                return Err(Error::CorruptModel(
                    "word vocabulary without embedding tensor".into(),
                ));
            }
            None
        }
    };

    let mut chars = Vec::with_capacity(char_entries.len());
    for (s, idx) in &char_entries {
        let mut it = s.chars();
        let (Some(c), None) = (it.next(), it.next()) else {
            return Err(Error::CorruptModel(format!(
                "character entry {s:?} is not a single char"
            )));
        };
        chars.push((c, *idx));
    }
    let char_vocab = CharVocab::from_chars(chars.iter().map(|(c, _)| *c));
    for (c, idx) in chars {
        if char_vocab.lookup(c) != idx as usize {
            return Err(Error::CorruptModel("character index mismatch".into()));
        }
    }

    MnerModel::from_parts(config, store, words, char_vocab)
}

pub fn save_model(model: &MnerModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MnerModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

//! Experiment runners: the modality/fusion matrix and the word-vector
//! vocabulary ablation, each emitting a TSV of per-seed and mean scores.

use std::collections::BTreeMap;

use crate::config::TrainConfig;
use crate::corpus::Sentence;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::fusion::{FusionMode, ModalitySet};
use crate::train::{evaluate_model, train_model};

#[derive(Debug, Clone)]
pub struct CorpusTriple {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub rows: Vec<CellResult>,
}

impl ResultsTable {
    /// Mean typed F1 of one cell over its seeds.
    pub fn mean_typed_f1(&self, cell: &str) -> Option<f64> {
        let f1s: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.cell == cell)
            .map(|r| r.metrics.typed.f1)
            .collect();
        if f1s.is_empty() {
            None
        } else {
            Some(f1s.iter().sum::<f64>() / f1s.len() as f64)
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cell\tseed\ttyped_p\ttyped_r\ttyped_f1\tseg_p\tseg_r\tseg_f1\n");
        let mut cells: Vec<&str> = Vec::new();
        let mut grouped: BTreeMap<&str, Vec<&CellResult>> = BTreeMap::new();
        for row in &self.rows {
            if !grouped.contains_key(row.cell.as_str()) {
                cells.push(&row.cell);
            }
            grouped.entry(&row.cell).or_default().push(row);
        }
        for cell in cells {
            let rows = &grouped[cell];
            let mut sums = [0.0f64; 6];
            for r in rows.iter() {
                let m = &r.metrics;
                let vals = [
                    m.typed.precision,
                    m.typed.recall,
                    m.typed.f1,
                    m.segmentation.precision,
                    m.segmentation.recall,
                    m.segmentation.f1,
                ];
                out.push_str(&format!(
                    "{cell}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
                    r.seed, vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]
                ));
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
            }
            let n = rows.len() as f64;
            out.push_str(&format!(
                "{cell}\tmean\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
                sums[0] / n,
                sums[1] / n,
                sums[2] / n,
                sums[3] / n,
                sums[4] / n,
                sums[5] / n
            ));
        }
        out
    }
}

fn train_and_score(
    triple: &CorpusTriple,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<Metrics> {
    let words = config.modalities.word.then(|| table.clone());
    let (model, _) = train_model(&triple.train, &triple.dev, words, config)?;
    evaluate_model(&model, &triple.test)
}

pub fn cell_name(modalities: &ModalitySet, fusion: FusionMode) -> String {
    format!("{}/{}", modalities.as_config_str(), fusion.as_str())
}

/// Train one model per (modality set, fusion) cell per seed and score it
/// on the test split. Every cell is validated before any training starts.
pub fn run_matrix(
    triple: &CorpusTriple,
    table: &EmbeddingTable,
    base: &TrainConfig,
    cells: &[(ModalitySet, FusionMode)],
    seeds: &[u64],
) -> Result<ResultsTable> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "matrix needs at least one cell and one seed".into(),
        ));
    }
    let mut configs = Vec::new();
    for &(modalities, fusion) in cells {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.modalities = modalities;
            cfg.fusion = fusion;
            cfg.seed = seed;
            if cfg.modalities.word {
                cfg.d_w = table.dim();
            }
            cfg.validate()?;
            configs.push((cell_name(&modalities, fusion), seed, cfg));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (cell, seed, cfg) in configs {
        let metrics = train_and_score(triple, table, &cfg)?;
        rows.push(CellResult {
            cell,
            seed,
            metrics,
        });
    }
    Ok(ResultsTable { rows })
}

/// Table-3-style sweep: ablate the word-vector vocabulary to each fraction
/// (one seeded sample per fraction, shared by every fusion and seed), train
/// word+char models with and without attention, score on test.
pub fn run_vocab_ablation(
    triple: &CorpusTriple,
    table: &EmbeddingTable,
    base: &TrainConfig,
    fractions: &[f64],
    fusions: &[FusionMode],
    seeds: &[u64],
) -> Result<ResultsTable> {
    if fractions.is_empty() || fusions.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs fractions, fusions, and seeds".into(),
        ));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep fraction must be in (0, 1], got {f}"
            )));
        }
    }
    let mut rows = Vec::new();
    for &fraction in fractions {
        let ablation_seed = 1000 + (fraction * 100.0).round() as u64;
        let ablated = table.ablate(fraction, ablation_seed)?;
        for &fusion in fusions {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.modalities = ModalitySet {
                    word: true,
                    chars: true,
                    visual: false,
                };
                cfg.fusion = fusion;
                cfg.seed = seed;
                cfg.d_w = ablated.dim();
                cfg.validate()?;
                let metrics = train_and_score(triple, &ablated, &cfg)?;
                rows.push(CellResult {
                    cell: format!("{fraction:.2}/{}", fusion.as_str()),
                    seed,
                    metrics,
                });
            }
        }
    }
    Ok(ResultsTable { rows })
}

/// Grid file for the `matrix` subcommand: `train=`, `dev=`, `test=`,
/// `embeddings=` paths, `seeds=` comma list, repeated `cell=<modalities>
/// <fusion>` lines, and any model config key as an override.
#[derive(Debug, Clone)]
pub struct MatrixGrid {
    pub train: String,
    pub dev: String,
    pub test: String,
    pub embeddings: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<(ModalitySet, FusionMode)>,
    pub base: TrainConfig,
}

pub fn parse_matrix_grid(text: &str) -> Result<MatrixGrid> {
    let mut train = None;
    let mut dev = None;
    let mut test = None;
    let mut embeddings = None;
    let mut seeds = vec![1u64, 2, 3];
    let mut cells = Vec::new();
    let mut base = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "train" => train = Some(value.to_string()),
            "dev" => dev = Some(value.to_string()),
            "test" => test = Some(value.to_string()),
            "embeddings" => embeddings = Some(value.to_string()),
            "seeds" => {
                seeds = value
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<u64>().map_err(|_| Error::Parse {
                            line: lineno,
                            message: format!("bad seed {s:?}"),
                        })
                    })
                    .collect::<Result<Vec<u64>>>()?;
            }
            "cell" => {
                let mut parts = value.split_whitespace();
                let (Some(m), Some(f), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("cell wants \"<modalities> <fusion>\", got {value:?}"),
                    });
                };
                cells.push((m.parse()?, f.parse()?));
            }
            _ => base.apply_kv(key, value, lineno)?,
        }
    }
    let missing = |what: &str| Error::InvalidArgument(format!("config grid is missing {what}="));
    Ok(MatrixGrid {
        train: train.ok_or_else(|| missing("train"))?,
        dev: dev.ok_or_else(|| missing("dev"))?,
        test: test.ok_or_else(|| missing("test"))?,
        embeddings: embeddings.ok_or_else(|| missing("embeddings"))?,
        seeds,
        cells,
        base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::UnkPolicy;
    use crate::synth::{generate_synthetic_corpus, SynthOutput, SyntheticConfig};

    fn tiny_triple() -> (CorpusTriple, EmbeddingTable) {
        let cfg = SyntheticConfig {
            n_sentences: 60,
            mean_tokens: 5.0,
            lexicon_per_type: 6,
            n_visual_topics: 4,
            d_v: 4,
            polysemy: 0.34,
            oov_noise: 0.1,
            seed: 3,
        };
        let out = generate_synthetic_corpus(&cfg).unwrap();
        let (table, _) =
            crate::embeddings::parse_word_vectors(&out.embeddings_text, UnkPolicy::Zero).unwrap();
        (
            CorpusTriple {
                train: SynthOutput::sentences(&out.train),
                dev: SynthOutput::sentences(&out.dev),
                test: SynthOutput::sentences(&out.test),
            },
            table,
        )
    }

    fn fast_base() -> TrainConfig {
        let mut base = TrainConfig::default();
        base.p = 6;
        base.hidden = 5;
        base.char_embed = 3;
        base.char_hidden = 3;
        base.max_epochs = 2;
        base.patience = 1;
        base
    }

    #[test]
    fn matrix_emits_one_row_per_cell_seed_plus_means() {
        let (triple, table) = tiny_triple();
        let cells = vec![
            ("wc".parse().unwrap(), FusionMode::Attention),
            ("wc".parse().unwrap(), FusionMode::Concat),
        ];
        let result = run_matrix(&triple, &table, &fast_base(), &cells, &[1]).unwrap();
        assert_eq!(result.rows.len(), 2);
        let tsv = result.to_tsv();
        assert!(tsv.starts_with("cell\tseed\ttyped_p\ttyped_r\ttyped_f1\tseg_p\tseg_r\tseg_f1\n"));
        assert_eq!(tsv.lines().count(), 1 + 2 + 2); // header + rows + means
        assert!(tsv.contains("wc/attention\tmean"));
        for line in tsv.lines().skip(1) {
            assert_eq!(line.split('\t').count(), 8);
        }
    }

    #[test]
    fn matrix_is_deterministic() {
        let (triple, table) = tiny_triple();
        let cells = vec![("wc".parse().unwrap(), FusionMode::Concat)];
        let a = run_matrix(&triple, &table, &fast_base(), &cells, &[1, 2]).unwrap();
        let b = run_matrix(&triple, &table, &fast_base(), &cells, &[1, 2]).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
    }

    #[test]
    fn invalid_cell_rejected_before_training() {
        let (triple, table) = tiny_triple();
        let cells = vec![("w".parse().unwrap(), FusionMode::Attention)];
        assert!(run_matrix(&triple, &table, &fast_base(), &cells, &[1]).is_err());
    }

    #[test]
    fn ablation_rejects_bad_fraction() {
        let (triple, table) = tiny_triple();
        let r = run_vocab_ablation(
            &triple,
            &table,
            &fast_base(),
            &[0.0],
            &[FusionMode::Concat],
            &[1],
        );
        assert!(r.is_err());
    }

    #[test]
    fn grid_file_parses() {
        let text = "\
# demo grid
train = a.tsv
dev = b.tsv
test = c.tsv
embeddings = e.vec
seeds = 4,5
p=10
cell = wcv attention
cell = wc concat
";
        let grid = parse_matrix_grid(text).unwrap();
        assert_eq!(grid.train, "a.tsv");
        assert_eq!(grid.seeds, vec![4, 5]);
        assert_eq!(grid.cells.len(), 2);
        assert_eq!(grid.base.p, 10);
        assert_eq!(grid.cells[1].1, FusionMode::Concat);
    }

    #[test]
    fn grid_file_missing_path_rejected() {
        assert!(parse_matrix_grid("train=a\ndev=b\ntest=c\n").is_err());
    }
}

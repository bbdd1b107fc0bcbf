//! Command-line surface. Exit codes: 0 success, 1 usage error, 2
//! data/validation error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::TrainConfig;
use crate::corpus::{parse_corpus, write_corpus, Sentence};
use crate::embeddings::{load_word_vectors, UnkPolicy};
use crate::error::{Error, Result};
use crate::experiments::{parse_matrix_grid, run_matrix, run_vocab_ablation, CorpusTriple};
use crate::fusion::{emit_attention_report, FusionMode, ModalitySet};
use crate::gradcheck::finite_difference_check;
use crate::lstm::GateMode;
use crate::model::tiny_gradcheck_fixture;
use crate::serialize::{load_model, save_model};
use crate::synth::{bayes_reference, generate_synthetic_corpus, SynthOutput, SyntheticConfig};
use crate::train::{evaluate_model, train_model};

#[derive(Parser)]
#[command(name = "mner", version, about = "Multimodal NER with modality attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelDims {
    /// Shared projected modality width.
    #[arg(long, default_value_t = 150)]
    p: usize,
    /// Entity LSTM hidden size per direction.
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 25)]
    char_embed: usize,
    #[arg(long, default_value_t = 75)]
    char_hidden: usize,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, value_parser = parse_gate, default_value = "literal")]
    lstm_gate: GateMode,
    #[arg(long, value_parser = parse_unk, default_value = "zero")]
    unk_policy: UnkPolicy,
    #[arg(long, default_value_t = false)]
    bio_constrain: bool,
}

fn parse_gate(s: &str) -> Result<GateMode> {
    s.parse()
}

fn parse_unk(s: &str) -> Result<UnkPolicy> {
    s.parse()
}

fn parse_modalities(s: &str) -> Result<ModalitySet> {
    s.parse()
}

fn parse_fusion(s: &str) -> Result<FusionMode> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal corpus triple plus word vectors.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10000)]
        sentences: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        dv: usize,
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 0.3)]
        polysemy: f64,
        #[arg(long, default_value_t = 0.15)]
        oov_noise: f64,
        #[arg(long, default_value_t = 20)]
        lexicon: usize,
        #[arg(long, default_value_t = 6.0)]
        mean_tokens: f64,
    },
    /// Train a model and write it to a binary model file.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_modalities, default_value = "wc")]
        modalities: ModalitySet,
        #[arg(long, value_parser = parse_fusion, default_value = "attention")]
        fusion: FusionMode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        dims: ModelDims,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Label a corpus with a trained model.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-token modality-attention weights as TSV.
        #[arg(long)]
        emit_attention: Option<PathBuf>,
    },
    /// Score a trained model against a gold-labeled corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Vocabulary-ablation sweep over keep fractions and fusion modes.
    AblateVocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.75, 0.5, 0.25])]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_fusion,
              default_values = ["attention", "concat"])]
        fusions: Vec<FusionMode>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dims: ModelDims,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Train every cell of a (modalities, fusion) grid described by a
    /// config file.
    Matrix {
        #[arg(long)]
        config_grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full model gradient.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn infer_d_v(sentences: &[Sentence]) -> usize {
    sentences
        .iter()
        .find_map(|s| s.visual.as_ref().map(Vec::len))
        .unwrap_or(0)
}

fn build_config(
    modalities: ModalitySet,
    fusion: FusionMode,
    seed: u64,
    dims: &ModelDims,
    opts: &TrainOpts,
) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.modalities = modalities;
    cfg.fusion = fusion;
    cfg.seed = seed;
    cfg.p = dims.p;
    cfg.hidden = dims.hidden;
    cfg.char_embed = dims.char_embed;
    cfg.char_hidden = dims.char_hidden;
    cfg.learning_rate = opts.lr;
    cfg.batch_size = opts.batch;
    cfg.max_epochs = opts.epochs;
    cfg.patience = opts.patience;
    cfg.clip_norm = opts.clip;
    cfg.gate_mode = opts.lstm_gate;
    cfg.unk_policy = opts.unk_policy;
    cfg.bio_constrain = opts.bio_constrain;
    cfg
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            sentences,
            seed,
            dv,
            topics,
            polysemy,
            oov_noise,
            lexicon,
            mean_tokens,
        } => {
            let cfg = SyntheticConfig {
                n_sentences: sentences,
                mean_tokens,
                lexicon_per_type: lexicon,
                n_visual_topics: topics,
                d_v: dv,
                polysemy,
                oov_noise,
                seed,
            };
            let output = generate_synthetic_corpus(&cfg)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_corpus(&SynthOutput::sentences(&output.train), &out.join("train.tsv"))?;
            write_corpus(&SynthOutput::sentences(&output.dev), &out.join("dev.tsv"))?;
            write_corpus(&SynthOutput::sentences(&output.test), &out.join("test.tsv"))?;
            write_text(&out.join("embeddings.vec"), &output.embeddings_text)?;
            let (text, visual) = bayes_reference(&output.model, &output.test)?;
            println!(
                "wrote {} train / {} dev / {} test sentences to {}",
                output.train.len(),
                output.dev.len(),
                output.test.len(),
                out.display()
            );
            println!(
                "bayes reference on test: typed F1 {:.2} text-only, {:.2} with visual",
                text.typed.f1, visual.typed.f1
            );
            Ok(())
        }
        Command::Train {
            train,
            dev,
            embeddings,
            out,
            modalities,
            fusion,
            seed,
            dims,
            opts,
        } => {
            let mut cfg = build_config(modalities, fusion, seed, &dims, &opts);
            let train_corpus = parse_corpus(&train, cfg.modalities.visual, None)?;
            cfg.d_v = infer_d_v(&train_corpus);
            let dev_corpus = parse_corpus(&dev, cfg.modalities.visual, Some(cfg.d_v).filter(|&d| d > 0))?;
            let (table, dups) = load_word_vectors(&embeddings, cfg.unk_policy)?;
            if dups > 0 {
                eprintln!("warning: {dups} duplicate embedding rows ignored");
            }
            let (model, log) = train_model(&train_corpus, &dev_corpus, Some(table), &cfg)?;
            save_model(&model, &out)?;
            print!("{}", log.to_tsv());
            println!(
                "best epoch {} (dev typed F1 {:.2}); model written to {}",
                log.best_epoch,
                log.best_dev_f1,
                out.display()
            );
            Ok(())
        }
        Command::Tag {
            model,
            input,
            out,
            emit_attention,
        } => {
            let model = load_model(&model)?;
            let corpus = parse_corpus(
                &input,
                model.config.modalities.visual,
                (model.config.d_v > 0).then_some(model.config.d_v),
            )?;
            if emit_attention.is_some() && model.config.fusion != FusionMode::Attention {
                return Err(Error::InvalidArgument(
                    "--emit-attention needs a model trained with attention fusion".into(),
                ));
            }
            let mut tagged = Vec::with_capacity(corpus.len());
            let mut report = String::new();
            for sentence in &corpus {
                let result = model.tag_sentence(sentence)?;
                if emit_attention.is_some() {
                    let gold = sentence
                        .labels
                        .clone()
                        .unwrap_or_else(|| vec!["-".to_string(); sentence.len()]);
                    if !report.is_empty() {
                        report.push('\n');
                    }
                    report.push_str(&emit_attention_report(
                        &sentence.tokens,
                        result.alphas.as_ref().expect("attention model yields alphas"),
                        &model.config.modalities.members(),
                        &result.labels,
                        &gold,
                    )?);
                }
                tagged.push(Sentence {
                    tokens: sentence.tokens.clone(),
                    labels: Some(result.labels),
                    visual: None,
                });
            }
            write_corpus(&tagged, &out)?;
            if let Some(path) = emit_attention {
                write_text(&path, &report)?;
            }
            println!("tagged {} sentences into {}", tagged.len(), out.display());
            Ok(())
        }
        Command::Eval { model, corpus } => {
            let model = load_model(&model)?;
            let corpus = parse_corpus(
                &corpus,
                model.config.modalities.visual,
                (model.config.d_v > 0).then_some(model.config.d_v),
            )?;
            let metrics = evaluate_model(&model, &corpus)?;
            print!("{}", metrics.to_tsv());
            Ok(())
        }
        Command::AblateVocab {
            train,
            dev,
            test,
            embeddings,
            fractions,
            fusions,
            seeds,
            out,
            dims,
            opts,
        } => {
            let base = build_config("wc".parse()?, FusionMode::Attention, 1, &dims, &opts);
            let triple = CorpusTriple {
                train: parse_corpus(&train, false, None)?,
                dev: parse_corpus(&dev, false, None)?,
                test: parse_corpus(&test, false, None)?,
            };
            let (table, _) = load_word_vectors(&embeddings, base.unk_policy)?;
            let result = run_vocab_ablation(&triple, &table, &base, &fractions, &fusions, &seeds)?;
            write_text(&out, &result.to_tsv())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Matrix { config_grid, out } => {
            let text = fs::read_to_string(&config_grid).map_err(|e| Error::io(&config_grid, e))?;
            let grid = parse_matrix_grid(&text)?;
            let needs_visual = grid.cells.iter().any(|(m, _)| m.visual);
            let mut base = grid.base.clone();
            let train = parse_corpus(Path::new(&grid.train), needs_visual, None)?;
            base.d_v = infer_d_v(&train);
            let triple = CorpusTriple {
                train,
                dev: parse_corpus(Path::new(&grid.dev), needs_visual, None)?,
                test: parse_corpus(Path::new(&grid.test), needs_visual, None)?,
            };
            let (table, _) = load_word_vectors(Path::new(&grid.embeddings), base.unk_policy)?;
            let result = run_matrix(&triple, &table, &base, &grid.cells, &grid.seeds)?;
            write_text(&out, &result.to_tsv())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Gradcheck { seed, tol } => {
            let (model, sentence) = tiny_gradcheck_fixture(seed)?;
            let (_, analytic) = model.sentence_gradients(&sentence)?;
            let report = finite_difference_check(
                |store| {
                    crate::model::sentence_nll_with_store(
                        &model.config,
                        store,
                        model.words.as_ref(),
                        &model.char_vocab,
                        &sentence,
                    )
                },
                &model.store,
                &analytic,
                1e-5,
                tol,
            )?;
            println!("{}", report.summary());
            if report.pass {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "gradient check failed: max relative error {:.3e} over tolerance {tol:.1e}",
                    report.max_rel_error
                )))
            }
        }
    }
}

/// Returns the process exit code.
pub fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

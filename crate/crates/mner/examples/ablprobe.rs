use mner::config::TrainConfig;
use mner::embeddings::{parse_word_vectors, UnkPolicy};
use mner::experiments::{run_vocab_ablation, CorpusTriple};
use mner::fusion::FusionMode;
use mner::synth::{generate_synthetic_corpus, SynthOutput, SyntheticConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1200);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let p: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20);
    let unk: UnkPolicy = args
        .get(5)
        .cloned()
        .unwrap_or_else(|| "uniform:99".into())
        .parse()
        .unwrap();

    let cfg = SyntheticConfig {
        n_sentences: n,
        d_v: 16,
        seed: 7,
        ..Default::default()
    };
    let out = generate_synthetic_corpus(&cfg).unwrap();
    let (table, _) = parse_word_vectors(&out.embeddings_text, unk).unwrap();
    let triple = CorpusTriple {
        train: SynthOutput::sentences(&out.train),
        dev: SynthOutput::sentences(&out.dev),
        test: SynthOutput::sentences(&out.test),
    };

    let mut base = TrainConfig::default();
    base.p = p;
    base.hidden = p;
    base.char_embed = 10;
    base.char_hidden = 10;
    base.max_epochs = epochs;
    base.patience = epochs;
    base.learning_rate = lr;
    base.unk_policy = unk;

    let t0 = Instant::now();
    let result = run_vocab_ablation(
        &triple,
        &table,
        &base,
        &[1.0, 0.75, 0.5, 0.25],
        &[FusionMode::Attention, FusionMode::Concat],
        &[1, 2, 3],
    )
    .unwrap();
    print!("{}", result.to_tsv());
    println!("total {:?}", t0.elapsed());
}

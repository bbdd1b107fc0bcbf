use mner::config::TrainConfig;
use mner::embeddings::{parse_word_vectors, UnkPolicy};
use mner::fusion::FusionMode;
use mner::synth::{generate_synthetic_corpus, SynthOutput, SyntheticConfig};
use mner::train::{evaluate_model, train_model};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.2);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let patience: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
    let p: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(20);
    let ch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(10);
    let unk: String = args.get(7).cloned().unwrap_or_else(|| "zero".into());

    let cfg = SyntheticConfig {
        n_sentences: n,
        d_v: 16,
        seed: 7,
        ..Default::default()
    };
    let policy: UnkPolicy = unk.parse().unwrap();
    let out = generate_synthetic_corpus(&cfg).unwrap();
    let (table, _) = parse_word_vectors(&out.embeddings_text, policy).unwrap();
    let train = SynthOutput::sentences(&out.train);
    let dev = SynthOutput::sentences(&out.dev);
    let test = SynthOutput::sentences(&out.test);

    let mut base = TrainConfig::default();
    base.p = p;
    base.hidden = p;
    base.char_embed = ch;
    base.char_hidden = ch;
    base.max_epochs = epochs;
    base.patience = patience;
    base.learning_rate = lr;
    base.d_v = 16;
    base.unk_policy = policy;

    let t0 = Instant::now();
    for (mods, fusion) in [
        ("wcv", FusionMode::Attention),
        ("wc", FusionMode::Attention),
        ("wc", FusionMode::Concat),
    ] {
        let mut f1s = Vec::new();
        for seed in [1u64, 2, 3] {
            let mut cfg = base.clone();
            cfg.modalities = mods.parse().unwrap();
            cfg.fusion = fusion;
            cfg.seed = seed;
            let (model, log) = train_model(&train, &dev, Some(table.clone()), &cfg).unwrap();
            let m = evaluate_model(&model, &test).unwrap();
            f1s.push(m.typed.f1);
            print!("  [{seed}:{:.1}@{}ep]", m.typed.f1, log.epochs.len());
        }
        let mean = f1s.iter().sum::<f64>() / 3.0;
        println!("  => {mods}/{fusion:?} mean typed F1 {mean:.2}");
    }
    println!("total {:?}", t0.elapsed());
}

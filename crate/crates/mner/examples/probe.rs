use std::time::Instant;

use mner::config::TrainConfig;
use mner::embeddings::{parse_word_vectors, UnkPolicy};
use mner::eval::Metrics;
use mner::fusion::FusionMode;
use mner::synth::{bayes_reference, generate_synthetic_corpus, SynthOutput, SyntheticConfig};
use mner::train::{evaluate_model, train_model};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let p: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(16);

    let cfg = SyntheticConfig {
        n_sentences: n,
        d_v: 16,
        seed: 7,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = generate_synthetic_corpus(&cfg).unwrap();
    println!("generated {n} sentences in {:?}", t0.elapsed());
    let (btext, bvis) = bayes_reference(&out.model, &out.test).unwrap();
    println!(
        "bayes: text {:.2} visual {:.2} gap {:.2}",
        btext.typed.f1,
        bvis.typed.f1,
        bvis.typed.f1 - btext.typed.f1
    );

    let (table, _) = parse_word_vectors(&out.embeddings_text, UnkPolicy::Zero).unwrap();
    let train = SynthOutput::sentences(&out.train);
    let dev = SynthOutput::sentences(&out.dev);
    let test = SynthOutput::sentences(&out.test);

    let mut base = TrainConfig::default();
    base.p = p;
    base.hidden = p;
    base.char_embed = 8;
    base.char_hidden = 8;
    base.max_epochs = epochs;
    base.patience = 3;
    base.learning_rate = lr;
    base.d_v = 16;

    let mut run = |mods: &str, fusion: FusionMode, seed: u64| -> Metrics {
        let mut cfg = base.clone();
        cfg.modalities = mods.parse().unwrap();
        cfg.fusion = fusion;
        cfg.seed = seed;
        let t = Instant::now();
        let (model, log) = train_model(&train, &dev, Some(table.clone()), &cfg).unwrap();
        let m = evaluate_model(&model, &test).unwrap();
        println!(
            "{mods}/{:?} seed {seed}: test typed F1 {:.2} seg {:.2} | {} epochs, best dev {:.2}, {:?}",
            fusion,
            m.typed.f1,
            m.segmentation.f1,
            log.epochs.len(),
            log.best_dev_f1,
            t.elapsed()
        );
        m
    };

    let wcv = run("wcv", FusionMode::Attention, 1);
    let wc = run("wc", FusionMode::Attention, 1);
    let wcc = run("wc", FusionMode::Concat, 1);
    println!(
        "gap wcv-wc = {:.2}; wc(att)-wc(concat) = {:.2}",
        wcv.typed.f1 - wc.typed.f1,
        wc.typed.f1 - wcc.typed.f1
    );
}

use mner::synth::*;
fn main() {
    for seed in [1u64, 7, 11] {
        let cfg = SyntheticConfig { n_sentences: 2000, d_v: 16, lexicon_per_type: 20, seed, ..Default::default() };
        let out = generate_synthetic_corpus(&cfg).unwrap();
        let (text, visual) = bayes_reference(&out.model, &out.test).unwrap();
        println!("seed {seed}: text typed F1 {:.2} (P {:.1} R {:.1}), visual typed F1 {:.2}, gap {:.2}",
            text.typed.f1, text.typed.precision, text.typed.recall, visual.typed.f1, visual.typed.f1 - text.typed.f1);
        let (ttext, tvis) = bayes_reference(&out.model, &out.train).unwrap();
        println!("   train split: text {:.2} visual {:.2}", ttext.typed.f1, tvis.typed.f1);
    }
}

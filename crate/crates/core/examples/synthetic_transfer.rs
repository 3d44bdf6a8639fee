//! Zero-shot transfer on synthetic domains.
//!
//! Three source domains and one target share a matching rule (token Jaccard
//! >= 0.5) but draw part of their vocabulary from private word pools. The
//! model is trained on the sources only and evaluated on the target.
//!
//! ```text
//! cargo run --release --example synthetic_transfer [train_pairs_per_source]
//! ```

use std::time::Instant;

use dame::data::Split;
use dame::encoder::EncoderConfig;
use dame::eval::{evaluate_model, global_only_evaluate};
use dame::synth::{generate_registry, SynthConfig};
use dame::train::{l1_trend, train_da, TrainConfig};
use dame::vocab::{build_vocab, Tokenizer};

fn main() -> anyhow::Result<()> {
    let mut synth = SynthConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        synth.train_pairs = n.parse()?;
    }
    let reg = generate_registry(&synth)?;
    let enc = EncoderConfig::default();
    let tok = Tokenizer::new(build_vocab(&reg.corpus()?, 1)?, enc.max_len);
    println!(
        "{} sources x {} training pairs, vocabulary {} tokens",
        reg.num_sources(),
        synth.train_pairs,
        tok.vocab.len()
    );

    let start = Instant::now();
    let out = train_da(&reg, &tok, &enc, &TrainConfig::default())?;
    let (first, last) = l1_trend(&out.log, 50);
    println!(
        "{} steps in {:.1}s, expert loss {first:.3} -> {last:.3}",
        out.log.len(),
        start.elapsed().as_secs_f64()
    );

    let target = reg.target();
    let pairs = target.encode_split(Split::Test, &tok)?;
    let gold = target.labels(Split::Test)?;
    let zsl = evaluate_model(&out.model, &pairs, &gold)?;
    let global = global_only_evaluate(&out.model, &pairs, &gold)?;
    println!(
        "target, full model   P {:.3}  R {:.3}  F1 {:.3}",
        zsl.precision, zsl.recall, zsl.f1
    );
    println!(
        "target, global only  P {:.3}  R {:.3}  F1 {:.3}",
        global.precision, global.recall, global.f1
    );
    for (j, src) in reg.sources().iter().enumerate() {
        let m = evaluate_model(
            &out.model,
            &src.encode_split(Split::Test, &tok)?,
            &src.labels(Split::Test)?,
        )?;
        println!("source {j} ({}) test F1 {:.3}", src.name, m.f1);
    }
    Ok(())
}

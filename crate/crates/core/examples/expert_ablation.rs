//! Zero-shot F1 on the synthetic target for every subset of experts, plus
//! the global encoder alone.

use dame::data::Split;
use dame::encoder::EncoderConfig;
use dame::eval::{evaluate_expert_subset, global_only_evaluate};
use dame::synth::{generate_registry, SynthConfig};
use dame::train::{train_da, TrainConfig};
use dame::vocab::{build_vocab, Tokenizer};

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig {
        train_pairs: 1500,
        ..SynthConfig::default()
    };
    let reg = generate_registry(&synth)?;
    let enc = EncoderConfig::default();
    let tok = Tokenizer::new(build_vocab(&reg.corpus()?, 1)?, enc.max_len);
    let model = train_da(&reg, &tok, &enc, &TrainConfig::default())?.model;

    let target = reg.target();
    let pairs = target.encode_split(Split::Test, &tok)?;
    let gold = target.labels(Split::Test)?;
    let k = model.num_experts();
    let mut rows: Vec<(usize, Vec<usize>, f64)> = Vec::new();
    for mask in 1u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let f1 = evaluate_expert_subset(&model, &pairs, &gold, &subset)?.f1;
        rows.push((subset.len(), subset, f1));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    println!(
        "global only        F1 {:.3}",
        global_only_evaluate(&model, &pairs, &gold)?.f1
    );
    for size in 1..=k {
        let of_size: Vec<_> = rows.iter().filter(|r| r.0 == size).collect();
        for (_, subset, f1) in &of_size {
            println!("experts {:<10} F1 {f1:.3}", format!("{subset:?}"));
        }
        let mean = of_size.iter().map(|r| r.2).sum::<f64>() / of_size.len() as f64;
        println!("  mean over size {size}: {mean:.3}");
    }
    Ok(())
}

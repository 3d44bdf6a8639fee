//! Fine-tuning a zero-shot model on a labeled quarter of the target pool
//! chosen by each selection strategy.

use dame::adapt::{finetune_pairs, select_al, AlRequest, FinetuneConfig, Strategy};
use dame::data::Split;
use dame::encoder::EncoderConfig;
use dame::eval::evaluate_model;
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
    let zsl = train_da(&reg, &tok, &enc, &TrainConfig::default())?.model;

    let target = reg.target();
    let pool = target.encode_split(Split::Train, &tok)?;
    let pool_labels = target.labels(Split::Train)?;
    let test = target.encode_split(Split::Test, &tok)?;
    let gold = target.labels(Split::Test)?;
    println!("zero-shot F1 {:.3}", evaluate_model(&zsl, &test, &gold)?.f1);

    let budget = pool.len() / 4;
    println!("budget {budget} of {} pool pairs", pool.len());
    for strategy in Strategy::ALL {
        let req = AlRequest {
            strategy,
            budget,
            ..AlRequest::default()
        };
        let picked = select_al(&zsl, &pool, &req)?;
        let items: Vec<_> = picked.iter().map(|&i| (pool[i].clone(), pool_labels[i])).collect();
        let positives = items.iter().filter(|(_, y)| *y == 1).count();
        let mut model = zsl.clone();
        let losses = finetune_pairs(&mut model, &items, &FinetuneConfig::default())?;
        let f1 = evaluate_model(&model, &test, &gold)?.f1;
        println!(
            "{:<17} {positives:>3} matches picked, loss {:.3} -> {:.3}, F1 {f1:.3}",
            strategy.name(),
            losses.first().copied().unwrap_or(0.0),
            losses.last().copied().unwrap_or(0.0)
        );
    }
    Ok(())
}

//! The file-based workflow behind the `dame` binary: write a registry,
//! train into a checkpoint directory, predict, score the predictions file
//! and export embeddings.

use dame::checkpoint::load_checkpoint;
use dame::commands::{
    evaluate_file, export_embeddings_command, predict_command, train_da_command, write_predictions, DatasetSource,
    Predictor,
};
use dame::config::RunConfig;
use dame::data::Split;
use dame::synth::{generate_registry, write_registry, SynthConfig};

fn main() -> anyhow::Result<()> {
    let work = std::env::temp_dir().join("dame-checkpoint-workflow");
    let synth = SynthConfig {
        train_pairs: 1000,
        ..SynthConfig::default()
    };
    let registry = write_registry(&generate_registry(&synth)?, &work.join("data"))?;
    let mut cfg = RunConfig {
        registry: Some(registry.clone()),
        ..RunConfig::default()
    };
    // a small encoder keeps this run short, so expect a modest F1
    cfg.encoder.d = 32;
    cfg.encoder.ffn_dim = 64;

    let ck = work.join("checkpoint");
    let summary = train_da_command(&cfg, &ck)?;
    println!("trained {} steps into {}", summary.steps, ck.display());
    let loaded = load_checkpoint(&ck)?;
    println!(
        "checkpoint: {} experts, d = {}, step {}, {} vocabulary tokens",
        loaded.model.num_experts(),
        loaded.model.dim(),
        loaded.step,
        loaded.vocab.len()
    );

    let target = DatasetSource::RegistryTarget(registry);
    let preds = predict_command(&ck, &target, Split::Test, &Predictor::Full)?;
    let pred_path = work.join("predictions.jsonl");
    write_predictions(&pred_path, &preds)?;
    let report = evaluate_file(&pred_path, &target, Split::Test)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let emb = work.join("embeddings.csv");
    let rows = export_embeddings_command(&ck, &target, Split::Test, &emb)?;
    println!("{rows} embeddings -> {}", emb.display());
    Ok(())
}

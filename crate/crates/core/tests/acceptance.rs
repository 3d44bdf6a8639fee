//! Acceptance criteria. Prints one `[PASS]` or `[FAIL]` line per criterion
//! and exits non-zero if any fails. Runs sequentially so the timings are
//! those of a single process.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dame::adapt::{
    bald_scores, covering_radius, entropy_scores, finetune_pairs, finetune_trainable, k_centers_greedy,
    least_confidence_scores, select_al, usde_scores, AlRequest, FinetuneConfig, Strategy,
};
use dame::autograd::Mat;
use dame::commands::train_da_command;
use dame::config::RunConfig;
use dame::data::{Batch, DomainRegistry, Split};
use dame::encoder::{EncoderConfig, Mode};
use dame::eval::{evaluate, evaluate_expert_subset, evaluate_model, labels_of, predict};
use dame::model::{expert_predict, forward, global_predict, meta_forward, DameModel, ModelConfig, ParamGroup};
use dame::synth::{generate_registry, write_registry, SynthConfig};
use dame::train::{
    batch_objective, domain_loss_gradient, loss_discriminator, loss_expert, loss_global, loss_meta, total_loss,
    train_da, LossWeights, TrainConfig, Trainer,
};
use dame::vocab::{build_vocab, SerializedPair, Tokenizer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_secs: f64) -> bool {
    elapsed.as_secs_f64() < budget_secs
}

// ---------- shared fixtures ----------

fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        d: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 16,
        max_len: 12,
        vocab_size: 20,
        dropout_rate: 0.1,
    }
}

fn toy_model(k: usize, domains: usize, seed: u64) -> DameModel {
    let cfg = ModelConfig {
        encoder: toy_encoder(),
        num_experts: k,
        num_domains: domains,
    };
    DameModel::new(cfg, seed).unwrap()
}

/// `[CLS] w.. [SEP]` with 2..=9 random content ids, padded to 12.
fn random_pair(rng: &mut ChaCha8Rng) -> SerializedPair {
    let n = rng.gen_range(2..=9);
    let mut ids = vec![2usize];
    ids.extend((0..n).map(|_| rng.gen_range(6..20)));
    ids.push(3);
    let real = ids.len();
    ids.resize(12, 0);
    let mut mask = vec![1u8; real];
    mask.resize(12, 0);
    SerializedPair {
        token_ids: ids,
        attention_mask: mask,
    }
}

fn random_batch(domain: usize, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    Batch {
        domain_index: domain,
        pairs: (0..n).map(|_| random_pair(rng)).collect(),
        labels: (0..n).map(|_| rng.gen_range(0..2)).collect(),
        items: (0..n).collect(),
    }
}

struct Transfer {
    reg: DomainRegistry,
    tok: Tokenizer,
    model: DameModel,
    train_time: Duration,
    steps: usize,
}

/// Registry and zero-shot model shared by the transfer criteria; trained
/// on first use with the default synthetic and desk settings.
fn transfer() -> &'static Transfer {
    static CELL: OnceLock<Transfer> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let reg = generate_registry(&SynthConfig::default()).unwrap();
        let enc = EncoderConfig::default();
        let tok = Tokenizer::new(build_vocab(&reg.corpus().unwrap(), 1).unwrap(), enc.max_len);
        let out = train_da(&reg, &tok, &enc, &TrainConfig::default()).unwrap();
        Transfer {
            steps: out.log.len(),
            reg,
            tok,
            model: out.model,
            train_time: start.elapsed(),
        }
    })
}

fn target_test(t: &Transfer) -> (Vec<SerializedPair>, Vec<u8>) {
    let tgt = t.reg.target();
    (
        tgt.encode_split(Split::Test, &t.tok).unwrap(),
        tgt.labels(Split::Test).unwrap(),
    )
}

// ---------- criteria ----------

fn c1_readme() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&path).unwrap_or_default().to_lowercase();
    let needles = ["not reproduced", "distilbert", "0.9909"];
    let missing: Vec<&str> = needles.iter().copied().filter(|n| !text.contains(n)).collect();
    outcome(
        missing.is_empty(),
        format!("README mentions {needles:?}; missing {missing:?}"),
    )
}

fn labels_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> (Vec<u8>, Vec<u8>) {
    let mut preds = Vec::new();
    let mut gold = Vec::new();
    for (p, g, n) in [(1, 1, tp), (1, 0, fp), (0, 0, tn), (0, 1, fn_)] {
        preds.extend(std::iter::repeat_n(p, n));
        gold.extend(std::iter::repeat_n(g, n));
    }
    (preds, gold)
}

fn c2_metrics() -> Outcome {
    let start = Instant::now();
    // (tp, fp, tn, fn), expected (P, R, F1)
    let cases = [
        ((22, 1, 100, 0), (0.9565, 1.0, 0.9777)),
        ((676, 67, 50, 112), (0.9098, 0.8579, 0.8831)),
    ];
    let mut worst: f64 = 0.0;
    for ((tp, fp, tn, fn_), (p, r, f)) in cases {
        let (preds, gold) = labels_from_counts(tp, fp, tn, fn_);
        let m = evaluate(&preds, &gold).unwrap();
        worst = worst
            .max((m.precision - p).abs())
            .max((m.recall - r).abs())
            .max((m.f1 - f).abs());
    }
    let el = start.elapsed();
    outcome(
        worst <= 5e-4 && within(el, 1.0),
        format!(
            "max |P,R,F1 - published| = {worst:.2e} (tol 5e-4), {:.3}s (< 1s)",
            el.as_secs_f64()
        ),
    )
}

fn objective_value(m: &DameModel, b: &Batch, target: &[SerializedPair], w: &LossWeights, seed: u64) -> f64 {
    let (c, _) = batch_objective(m, b, Some(target), w, Some(seed)).unwrap();
    total_loss(c.as_tuple(), w)
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // K = 2 with the target as a third discriminator class, so every tensor
    // including the extra discriminator row receives gradient
    let mut m = toy_model(2, 3, 11);
    let b = random_batch(1, 3, &mut rng);
    let target: Vec<_> = (0..2).map(|_| random_pair(&mut rng)).collect();
    let w = LossWeights {
        l1: 1.0,
        l2: 0.8,
        l3: 1.2,
        l4: 0.3,
    };
    let seed = 17;
    let (_, grads) = batch_objective(&m, &b, Some(&target), &w, Some(seed)).unwrap();
    let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut entries = 0usize;
    for t in 0..names.len() {
        let len = m.tensors_mut()[t].len();
        for e in 0..len {
            let orig = m.tensors_mut()[t].as_slice().unwrap()[e];
            m.tensors_mut()[t].as_slice_mut().unwrap()[e] = orig + h;
            let up = objective_value(&m, &b, &target, &w, seed);
            m.tensors_mut()[t].as_slice_mut().unwrap()[e] = orig - h;
            let down = objective_value(&m, &b, &target, &w, seed);
            m.tensors_mut()[t].as_slice_mut().unwrap()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[t].as_slice().unwrap()[e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{e}]", names[t]);
            }
            entries += 1;
        }
    }
    // the value functions agree with the objective's components
    let (c, _) = batch_objective(&m, &b, None, &w, None).unwrap();
    let direct = total_loss(
        (
            loss_expert(&m, &b).unwrap(),
            loss_global(&m, &b).unwrap(),
            loss_meta(&m, &b).unwrap(),
            -loss_discriminator(&m, &b.pairs, b.domain_index).unwrap(),
        ),
        &w,
    );
    let agree = (direct - total_loss(c.as_tuple(), &w)).abs() < 1e-12;
    let el = start.elapsed();
    outcome(
        worst < 1e-4 && agree && within(el, 60.0),
        format!(
            "{entries} entries in {} tensors, max rel err {worst:.2e} at {worst_at} (< 1e-4), value functions agree: {agree}, {:.1}s (< 60s)",
            names.len(),
            el.as_secs_f64()
        ),
    )
}

fn tensors_of(m: &DameModel, keep: impl Fn(ParamGroup) -> bool) -> Vec<(String, Mat)> {
    m.named_tensors()
        .into_iter()
        .filter(|(_, g, _)| keep(*g))
        .map(|(n, _, t)| (n, t.clone()))
        .collect()
}

fn c4_invariants() -> Outcome {
    const N: usize = 100;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fails: Vec<String> = Vec::new();

    // attention weights form a probability simplex
    let mut simplex_err: f64 = 0.0;
    for inst in 0..N {
        let k = rng.gen_range(1..=4);
        let m = toy_model(k, k, rng.gen());
        let sp = random_pair(&mut rng);
        let size = rng.gen_range(1..=k);
        let mut subset: Vec<usize> = (0..k).collect();
        subset.shuffle(&mut rng);
        subset.truncate(size);
        let (_, w, _) = m.forward_subset_detailed(&sp, &subset, &mut Mode::Eval).unwrap();
        simplex_err = simplex_err.max((w.sum() - 1.0).abs());
        if w.len() != size || w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            fails.push(format!("simplex instance {inst}"));
        }
    }
    if simplex_err > 1e-6 {
        fails.push(format!("simplex sum error {simplex_err:.2e}"));
    }

    // reordering experts together with their heads leaves the output unchanged
    let mut perm_err: f64 = 0.0;
    for _ in 0..N {
        let k = rng.gen_range(2..=4);
        let m = toy_model(k, k, rng.gen());
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut p = m.clone();
        p.experts = order.iter().map(|&i| m.experts[i].clone()).collect();
        p.expert_heads = order.iter().map(|&i| m.expert_heads[i].clone()).collect();
        let sp = random_pair(&mut rng);
        let a = forward(&m, &sp, &mut Mode::Eval).unwrap();
        let b = forward(&p, &sp, &mut Mode::Eval).unwrap();
        perm_err = perm_err.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
    }
    if perm_err > 1e-9 {
        fails.push(format!("permutation error {perm_err:.2e}"));
    }

    // the excluded expert has no influence on the meta prediction
    let mut meta_changed = 0;
    for _ in 0..N {
        let k = rng.gen_range(2..=4);
        let m = toy_model(k, k, rng.gen());
        let j = rng.gen_range(0..k);
        let sp = random_pair(&mut rng);
        let before = meta_forward(&m, &sp, j, &mut Mode::Eval).unwrap();
        let mut q = m.clone();
        for t in q.experts[j].tensors_mut() {
            t.mapv_inplace(|v| v + rng.gen_range(-1.0..1.0));
        }
        q.expert_heads[j].w.mapv_inplace(|v| v * 3.0 + 0.5);
        let after = meta_forward(&q, &sp, j, &mut Mode::Eval).unwrap();
        if before.map(f64::to_bits) != after.map(f64::to_bits) {
            meta_changed += 1;
        }
    }
    if meta_changed > 0 {
        fails.push(format!("meta prediction moved in {meta_changed} instances"));
    }

    // the L4 gradient on the global encoder is the negated L_D gradient
    let mut opp_err: f64 = 0.0;
    let mut opp_norm: f64 = 0.0;
    let l4_only = LossWeights {
        l1: 0.0,
        l2: 0.0,
        l3: 0.0,
        l4: 1.0,
    };
    for _ in 0..N {
        let k = rng.gen_range(1..=3);
        let m = toy_model(k, k, rng.gen());
        let n = rng.gen_range(1..=4);
        let b = random_batch(rng.gen_range(0..k), n, &mut rng);
        let (_, g4) = batch_objective(&m, &b, None, &l4_only, None).unwrap();
        let (_, gd) = domain_loss_gradient(&m, &b.pairs, b.domain_index).unwrap();
        for (t, (_, group, _)) in m.named_tensors().iter().enumerate() {
            if *group == ParamGroup::Global {
                opp_err = opp_err.max((&g4[t] + &gd[t]).iter().fold(0.0, |a, v| a.max(v.abs())));
                opp_norm = opp_norm.max(gd[t].iter().fold(0.0, |a, v| a.max(v.abs())));
            }
        }
    }
    if opp_err > 1e-9 || opp_norm == 0.0 {
        fails.push(format!(
            "opposition error {opp_err:.2e} (gradient scale {opp_norm:.2e})"
        ));
    }

    // fine-tuning leaves experts, their heads, the global head and the
    // discriminator bit-for-bit unchanged
    let mut frozen_moved = 0;
    let mut trainable_still = 0;
    for _ in 0..N {
        let k = rng.gen_range(1..=3);
        let mut m = toy_model(k, k, rng.gen());
        let frozen = tensors_of(&m, |g| !finetune_trainable(g));
        let trainable = tensors_of(&m, finetune_trainable);
        let items: Vec<(SerializedPair, u8)> = (0..rng.gen_range(2..=6))
            .map(|_| (random_pair(&mut rng), rng.gen_range(0..2)))
            .collect();
        let cfg = FinetuneConfig {
            epochs: 1,
            batch_size: 2,
            learning_rate: 1e-2,
            seed: rng.gen(),
            ..FinetuneConfig::default()
        };
        finetune_pairs(&mut m, &items, &cfg).unwrap();
        let bits = |v: &[(String, Mat)]| -> Vec<Vec<u64>> {
            v.iter().map(|(_, t)| t.iter().map(|x| x.to_bits()).collect()).collect()
        };
        if bits(&frozen) != bits(&tensors_of(&m, |g| !finetune_trainable(g))) {
            frozen_moved += 1;
        }
        if bits(&trainable) == bits(&tensors_of(&m, finetune_trainable)) {
            trainable_still += 1;
        }
    }
    if frozen_moved > 0 || trainable_still > 0 {
        fails.push(format!(
            "finetune: frozen moved in {frozen_moved}, trainable unchanged in {trainable_still}"
        ));
    }

    let el = start.elapsed();
    if !within(el, 120.0) {
        fails.push(format!("runtime {:.1}s", el.as_secs_f64()));
    }
    outcome(
        fails.is_empty(),
        format!(
            "{N} instances each; simplex err {simplex_err:.1e} (1e-6), permutation {perm_err:.1e} (1e-9), \
             meta moved {meta_changed}, opposition {opp_err:.1e} (1e-9), frozen moved {frozen_moved}, \
             {:.1}s (< 120s){}",
            el.as_secs_f64(),
            if fails.is_empty() {
                String::new()
            } else {
                format!("; failures: {fails:?}")
            }
        ),
    )
}

fn f1_with(preds: Vec<[f64; 2]>, gold: &[u8]) -> f64 {
    let labels: Vec<u8> = preds.iter().map(|p| u8::from(p[1] > p[0])).collect();
    evaluate(&labels, gold).unwrap().f1
}

fn c5_overfit() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig {
        num_sources: 1,
        train_pairs: 50,
        valid_pairs: 5,
        test_pairs: 5,
        target_train_pairs: Some(5),
        ..SynthConfig::default()
    };
    let reg = generate_registry(&synth).unwrap();
    let enc = EncoderConfig::default();
    let tok = Tokenizer::new(build_vocab(&reg.corpus().unwrap(), 1).unwrap(), enc.max_len);
    let cfg = TrainConfig {
        epochs: 1000,
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let mc = dame::train::model_config_for(&reg, &tok, &enc, false);
    let model = DameModel::new(mc, dame::seed::derive_seed(cfg.seed, "init")).unwrap();
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let src = reg.source(0).unwrap();
    let pairs = src.encode_split(Split::Train, &tok).unwrap();
    let gold = src.labels(Split::Train).unwrap();
    let paths = |m: &DameModel| -> [f64; 4] {
        let run = |f: &dyn Fn(&SerializedPair) -> [f64; 2]| f1_with(pairs.iter().map(f).collect(), &gold);
        [
            run(&|sp| expert_predict(m, 0, sp, &mut Mode::Eval).unwrap()),
            run(&|sp| global_predict(m, sp, &mut Mode::Eval).unwrap()),
            run(&|sp| meta_forward(m, sp, 0, &mut Mode::Eval).unwrap()),
            run(&|sp| forward(m, sp, &mut Mode::Eval).unwrap()),
        ]
    };
    let mut reached = None;
    let mut last = [0.0; 4];
    for step in 1..=200 {
        trainer.step(&reg, &tok).unwrap();
        if step % 10 == 0 {
            last = paths(&trainer.model);
            if last[..3].iter().all(|&f| f == 1.0) {
                reached = Some(step);
                break;
            }
        }
    }
    let el = start.elapsed();
    outcome(
        reached.is_some() && within(el, 120.0),
        format!(
            "50 pairs, desk config: expert/global/meta train F1 = {:.3}/{:.3}/{:.3} at step {} (need 1.0 within 200); \
             attention path over the single expert {:.3} (not trained when K = 1, informational); {:.1}s (< 120s)",
            last[0],
            last[1],
            last[2],
            reached.map_or("-".into(), |s| s.to_string()),
            last[3],
            el.as_secs_f64()
        ),
    )
}

fn c6_transfer() -> Outcome {
    let t = transfer();
    let start = Instant::now();
    let (pairs, gold) = target_test(t);
    let m = evaluate_model(&t.model, &pairs, &gold).unwrap();
    let all_negative = evaluate(&vec![0; gold.len()], &gold).unwrap().f1;
    // a fair coin: expected counts give P = match rate, R = 1/2
    let pi = gold.iter().filter(|&&g| g == 1).count() as f64 / gold.len() as f64;
    let coin = pi / (pi + 0.5);
    let el = t.train_time + start.elapsed();
    let pass = m.f1 >= 0.80 && m.f1 > all_negative && m.f1 - coin >= 0.3 && within(el, 300.0);
    outcome(
        pass,
        format!(
            "ZSL F1 {:.4} (>= 0.80; P {:.3} R {:.3}), all-negative {all_negative:.3}, coin-flip expected {coin:.4} \
             (margin {:.4} >= 0.3), {} steps, {:.1}s (< 300s)",
            m.f1,
            m.precision,
            m.recall,
            m.f1 - coin,
            t.steps,
            el.as_secs_f64()
        ),
    )
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn c7_subsets() -> Outcome {
    let t = transfer();
    let (pairs, gold) = target_test(t);
    let k = t.model.num_experts();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes: Vec<usize> = (1..=k).collect();
    let mut means = Vec::new();
    for &s in &sizes {
        let mut total = 0.0;
        for _ in 0..5 {
            let mut subset: Vec<usize> = (0..k).collect();
            subset.shuffle(&mut rng);
            subset.truncate(s);
            total += evaluate_expert_subset(&t.model, &pairs, &gold, &subset).unwrap().f1;
        }
        means.push(total / 5.0);
    }
    let x: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let rho = spearman(&x, &means);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    outcome(
        rho > 0.0,
        format!("mean F1 by subset size {sizes:?} = {shown:?}, Spearman {rho:.3} (> 0)"),
    )
}

/// Items whose score is beaten by fewer than `b` others, where "beaten"
/// means a strictly larger score or an equal score at a smaller index.
fn oracle_select(scores: &[f64], b: usize) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| {
            let better = (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            better < b
        })
        .collect()
}

fn h2(p: [f64; 2]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn c8_al_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fails = Vec::new();
    let n = 100;
    for trial in 0..20 {
        let mut probs: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let p: f64 = rng.gen();
                [1.0 - p, p]
            })
            .collect();
        // exact duplicates and mirrored rows exercise the tie-breaking
        for i in 0..10 {
            probs[90 + i] = probs[i];
        }
        probs[50] = [probs[3][1], probs[3][0]];
        let passes = 10;
        let mc: Vec<Vec<[f64; 2]>> = (0..passes)
            .map(|_| {
                (0..n)
                    .map(|i| {
                        let p = (probs[i][1] + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0);
                        [1.0 - p, p]
                    })
                    .collect()
            })
            .collect();
        let b = rng.gen_range(1..=n);
        // independent scoring
        let lc: Vec<f64> = probs.iter().map(|p| 1.0 - p[0].max(p[1])).collect();
        let ent: Vec<f64> = probs.iter().map(|&p| h2(p)).collect();
        let t = passes as f64;
        let mean1: Vec<f64> = (0..n).map(|i| mc.iter().map(|r| r[i][1]).sum::<f64>() / t).collect();
        let var: Vec<f64> = (0..n)
            .map(|i| mc.iter().map(|r| (r[i][1] - mean1[i]).powi(2)).sum::<f64>() / t)
            .collect();
        let bald: Vec<f64> = (0..n)
            .map(|i| {
                let m0 = mc.iter().map(|r| r[i][0]).sum::<f64>() / t;
                h2([m0, mean1[i]]) - mc.iter().map(|r| h2(r[i])).sum::<f64>() / t
            })
            .collect();
        let checks = [
            ("least_confidence", least_confidence_scores(&probs), lc),
            ("entropy", entropy_scores(&probs), ent),
            ("usde", usde_scores(&mc).unwrap(), var),
            ("bald", bald_scores(&mc).unwrap(), bald),
        ];
        for (name, lib, oracle) in checks {
            let got = dame::adapt::top_b(&lib, b);
            let want = oracle_select(&oracle, b);
            if got != want {
                fails.push(format!("{name} trial {trial} b {b}"));
            }
        }
    }

    // k-center greedy against the exact optimum on 12-point pools
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..30 {
        let pts = Mat::from_shape_fn((12, 2), |_| rng.gen_range(-1.0..1.0));
        for b in 1..=4 {
            let greedy = covering_radius(&pts, &k_centers_greedy(&pts, b, rng.gen()));
            let mut best = f64::INFINITY;
            for mask in 0u32..(1 << 12) {
                if mask.count_ones() as usize == b {
                    let centers: Vec<usize> = (0..12).filter(|&i| mask >> i & 1 == 1).collect();
                    best = best.min(covering_radius(&pts, &centers));
                }
            }
            worst_ratio = worst_ratio.max(greedy / best);
        }
    }
    if worst_ratio > 2.0 + 1e-12 {
        fails.push(format!("k-center ratio {worst_ratio:.3}"));
    }
    let el = start.elapsed();
    outcome(
        fails.is_empty() && within(el, 60.0),
        format!(
            "20 pools x 4 strategies match the oracle{}; k-center worst ratio {worst_ratio:.3} (<= 2) over 120 pools; {:.2}s (< 60s)",
            if fails.is_empty() { String::new() } else { format!(" except {fails:?}") },
            el.as_secs_f64()
        ),
    )
}

fn c9_al_ordering() -> Outcome {
    let t = transfer();
    let start = Instant::now();
    let tgt = t.reg.target();
    let pool = tgt.encode_split(Split::Train, &t.tok).unwrap();
    let pool_labels = tgt.labels(Split::Train).unwrap();
    let (test, gold) = target_test(t);
    let budget = (0.25 * pool.len() as f64).round() as usize;
    let strategies = [
        Strategy::Random,
        Strategy::LeastConfidence,
        Strategy::Entropy,
        Strategy::Usde,
        Strategy::Bald,
    ];
    let seeds = 5;
    let mut f1 = vec![vec![0.0; seeds]; strategies.len()];
    for seed in 0..seeds {
        for (si, &strategy) in strategies.iter().enumerate() {
            let req = AlRequest {
                strategy,
                budget,
                seed: seed as u64,
                ..AlRequest::default()
            };
            let picked = select_al(&t.model, &pool, &req).unwrap();
            let items: Vec<_> = picked.iter().map(|&i| (pool[i].clone(), pool_labels[i])).collect();
            let mut m = t.model.clone();
            let cfg = FinetuneConfig {
                seed: seed as u64,
                ..FinetuneConfig::default()
            };
            finetune_pairs(&mut m, &items, &cfg).unwrap();
            f1[si][seed] = evaluate(&labels_of(&predict(&m, &test).unwrap()), &gold).unwrap().f1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let means: Vec<f64> = f1.iter().map(|v| mean(v)).collect();
    let (best_i, best) =
        means[1..].iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &m)| if m > acc.1 { (i + 1, m) } else { acc },
        );
    let random = means[0];
    let table: Vec<String> = strategies
        .iter()
        .zip(&means)
        .map(|(s, m)| format!("{s} {m:.4}"))
        .collect();
    let el = start.elapsed();
    outcome(
        best >= random - 0.02,
        format!(
            "budget {budget}/{} over {seeds} seeds, mean F1: {}; best confidence-based {} {best:.4} >= random {random:.4} - 0.02; {:.1}s",
            pool.len(),
            table.join(", "),
            strategies[best_i],
            el.as_secs_f64()
        ),
    )
}

fn c10_reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        train_pairs: 40,
        valid_pairs: 5,
        test_pairs: 10,
        target_train_pairs: Some(10),
        ..SynthConfig::default()
    };
    let index = write_registry(&generate_registry(&synth).unwrap(), &dir.path().join("data")).unwrap();
    let cfg = RunConfig {
        registry: Some(index),
        ..RunConfig::default()
    };
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|r| dir.path().join(r)).collect();
    for r in &runs {
        train_da_command(&cfg, r).unwrap();
    }
    let files = [
        "params.bin",
        "manifest.json",
        "config.json",
        "vocab.txt",
        "train_log.jsonl",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(runs[0].join(f)).unwrap() != std::fs::read(runs[1].join(f)).unwrap())
        .collect();
    let bytes = std::fs::metadata(runs[0].join("params.bin")).unwrap().len();
    outcome(
        differing.is_empty(),
        format!("two train-da runs, {bytes} parameter bytes; differing files: {differing:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("non-reproduction statement", c1_readme),
        ("metric oracle", c2_metrics),
        ("gradient check", c3_gradients),
        ("structural invariants", c4_invariants),
        ("overfit", c5_overfit),
        ("synthetic transfer", c6_transfer),
        ("expert subset trend", c7_subsets),
        ("active learning oracles", c8_al_oracles),
        ("active learning ordering", c9_al_ordering),
        ("reproducibility", c10_reproducible),
    ];
    // comma-separated criterion numbers to run a subset
    let only: Option<Vec<usize>> = std::env::var("DAME_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let res = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !res.pass {
            failed += 1;
        }
        println!(
            "[{}] {n} {name}: {}",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

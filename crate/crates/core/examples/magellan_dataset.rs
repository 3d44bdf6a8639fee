//! Loading a benchmark in the Magellan directory layout and looking at how
//! its pairs are serialized and tokenized.

use std::fs;

use dame::data::{domain_stats, load_domain, Split};
use dame::record::serialize_pair;
use dame::vocab::{build_vocab, Tokenizer};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("dame-magellan-example");
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("tableA.csv"),
        "id,name,city,phone\n\
         0,art's delicatessen,studio city,818-762-1221\n\
         1,hotel bel-air,bel air,310-472-1211\n\
         2,cafe bizou,sherman oaks,\n",
    )?;
    fs::write(
        dir.join("tableB.csv"),
        "id,name,city,phone\n\
         0,art's deli,studio city,818/762-1221\n\
         1,bel-air hotel,los angeles,310/472-1211\n\
         2,spago,west hollywood,310/652-4025\n",
    )?;
    fs::write(dir.join("train.csv"), "ltable_id,rtable_id,label\n0,0,1\n2,2,0\n")?;
    fs::write(dir.join("valid.csv"), "ltable_id,rtable_id,label\n1,2,0\n")?;
    // the label of the last test pair is withheld
    fs::write(dir.join("test.csv"), "ltable_id,rtable_id,label\n1,1,1\n0,2,\n")?;

    let ds = load_domain(&dir)?;
    let stats = domain_stats(&ds);
    println!(
        "{}: {} pairs, match rate {:.2}, {} attributes",
        ds.name, stats.size, stats.match_rate, stats.num_attributes
    );

    let vocab = build_vocab(&ds.corpus()?, 1)?;
    let tok = Tokenizer::new(vocab, 48);
    for pair in ds.pairs(Split::Test) {
        println!("{}", serialize_pair(&pair)?);
        let sp = tok.encode_pair(&pair)?;
        println!(
            "  label {:?}, {} of {} positions used",
            pair.label,
            sp.real_len(),
            sp.max_len()
        );
    }
    Ok(())
}

//! Regenerates the small synthetic corpus under `fixtures/`.
//!
//!     cargo run --example make_fixtures -- crates/core/fixtures

use std::path::PathBuf;

use diswic::dataset::{write_instances, write_judgments, JudgmentRecord, UsePair};
use diswic::rng::SplitMix64;
use diswic::synthetic::fake_store;

const DIM: usize = 16;

const LEMMAS: &[(&str, &str, &[&str])] = &[
    ("en", "bank", &["river", "money", "loan", "shore", "vault"]),
    ("en", "plant", &["garden", "factory", "leaf", "worker", "seed"]),
    ("en", "mouse", &["cheese", "cursor", "trap", "click", "tail"]),
    ("de", "Bank", &["Fluss", "Geld", "Kredit", "Park", "Sitz"]),
    ("de", "Schloss", &["Tür", "König", "Schlüssel", "Burg", "Garten"]),
    ("de", "Kiefer", &["Wald", "Zahn", "Nadel", "Arzt", "Holz"]),
];

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&out)?;
    let mut rng = SplitMix64::new(2023);
    let mut pairs = Vec::new();
    let mut judgments = Vec::new();
    for (lang, lemma, cues) in LEMMAS {
        for i in 0..10 {
            let a = cues[rng.below(cues.len() as u64) as usize];
            let b = cues[rng.below(cues.len() as u64) as usize];
            let id = format!("{lang}_{lemma}_{i:02}").to_lowercase();
            pairs.push(UsePair {
                instance_id: id.clone(),
                lemma: lemma.to_string(),
                language: lang.to_string(),
                context1: format!("the {lemma} near the {a} ({i})"),
                target_index1: 1,
                context2: format!("a {lemma} with a {b} ({i})"),
                target_index2: 1,
            });
            // One instance per language has a single judgment and gets skipped.
            let annotators = if i == 9 && *lemma == sparse_lemma(lang) {
                1
            } else {
                2 + rng.below(4) as usize
            };
            let base = if a == b { 4 } else { 1 + rng.below(4) as u8 };
            for k in 0..annotators {
                let spread = rng.below(3) as i16 - 1;
                let j = (base as i16 + spread).clamp(1, 4) as u8;
                judgments.push(JudgmentRecord {
                    instance_id: id.clone(),
                    annotator_id: format!("ann{k}"),
                    judgment: j,
                });
            }
        }
    }
    write_instances(out.join("instances.tsv"), &pairs)?;
    write_judgments(out.join("judgments.tsv"), &judgments)?;
    fake_store(&pairs, DIM)?.write(out.join("embeddings.embs"))?;
    std::fs::write(
        out.join("train.conf"),
        "# small network for the 16-dimensional fixture store\n\
         widths=32,16,8,4,1\nepochs=10\nbatch_size=8\nlearning_rate=0.01\nseed=42\n",
    )?;
    println!(
        "{} instances, {} judgments -> {}",
        pairs.len(),
        judgments.len(),
        out.display()
    );
    Ok(())
}

fn sparse_lemma(lang: &str) -> &'static str {
    match lang {
        "en" => "mouse",
        _ => "Kiefer",
    }
}

//! Deterministic stand-ins for encoder output, used by tests, the shipped
//! fixtures and smoke runs that must not depend on a real sentence encoder.

use crate::dataset::{LabeledInstance, UsePair};
use crate::embedding_store::{context_key, EmbeddingRecord, EmbeddingStore};
use crate::error::Result;
use crate::rng::SplitMix64;

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Pseudo-random standard-normal vector derived from a hash of `text`.
/// Identical strings always map to identical vectors.
pub fn fake_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut rng = SplitMix64::new(fnv1a(text));
    (0..dim).map(|_| rng.normal() as f32).collect()
}

/// Store holding fake embeddings for both contexts of every pair.
pub fn fake_store(pairs: &[UsePair], dim: usize) -> Result<EmbeddingStore> {
    let records = pairs
        .iter()
        .flat_map(|p| {
            [
                EmbeddingRecord {
                    key: context_key(&p.instance_id, 1),
                    vector: fake_embedding(&p.context1, dim),
                },
                EmbeddingRecord {
                    key: context_key(&p.instance_id, 2),
                    vector: fake_embedding(&p.context2, dim),
                },
            ]
        })
        .collect();
    EmbeddingStore::from_records(dim, records)
}

pub fn synthetic_pair(index: usize, language: &str) -> UsePair {
    UsePair {
        instance_id: format!("{language}_{index:05}"),
        lemma: format!("lemma{}", index % 13),
        language: language.to_string(),
        context1: format!("first context {index} in {language}"),
        target_index1: 1,
        context2: format!("second context {index} in {language}"),
        target_index2: 1,
    }
}

/// `n` instances with fake `dim`-dimensional embeddings whose label is an
/// affine function of the concatenated feature plus Gaussian noise of
/// standard deviation `noise`. The affine map is scaled so labels have mean
/// 1.5 and standard deviation about 0.5 before noise.
pub fn affine_dataset(n: usize, dim: usize, noise: f64, seed: u64) -> Result<(Vec<LabeledInstance>, EmbeddingStore)> {
    let pairs: Vec<UsePair> = (0..n).map(|i| synthetic_pair(i, "en")).collect();
    let mut store_rng = SplitMix64::new(seed);
    let records: Vec<EmbeddingRecord> = pairs
        .iter()
        .flat_map(|p| [context_key(&p.instance_id, 1), context_key(&p.instance_id, 2)])
        .map(|key| EmbeddingRecord {
            key,
            vector: (0..dim).map(|_| store_rng.normal() as f32).collect(),
        })
        .collect();
    let store = EmbeddingStore::from_records(dim, records)?;

    let mut rng = SplitMix64::new(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
    let w: Vec<f64> = (0..2 * dim).map(|_| rng.normal()).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let instances = pairs
        .into_iter()
        .map(|pair| {
            let x = store.pair_feature(&pair)?.x;
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / norm;
            Ok(LabeledInstance {
                pair,
                mean_disagreement: 1.5 + 0.5 * z + noise * rng.normal(),
                num_judgments: 4,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((instances, store))
}

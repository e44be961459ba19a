//! Word-in-context instances, annotator judgments, mean-disagreement labels
//! and deterministic train/validation splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tsv::{self, escape};

pub const INSTANCES_HEADER: [&str; 7] = [
    "instance_id",
    "lemma",
    "language",
    "context1",
    "target_index1",
    "context2",
    "target_index2",
];
pub const JUDGMENTS_HEADER: [&str; 3] = ["instance_id", "annotator_id", "judgment"];
pub const LABELS_HEADER: [&str; 3] = ["instance_id", "mean_disagreement", "num_judgments"];

/// Lowest and highest point of the ordinal relatedness scale.
pub const SCALE_MIN: u8 = 1;
pub const SCALE_MAX: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsePair {
    pub instance_id: String,
    pub lemma: String,
    pub language: String,
    pub context1: String,
    pub target_index1: usize,
    pub context2: String,
    pub target_index2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgmentRecord {
    pub instance_id: String,
    pub annotator_id: String,
    pub judgment: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub pair: UsePair,
    pub mean_disagreement: f64,
    pub num_judgments: usize,
}

/// Result of label construction: the labeled instances plus the ids that were
/// skipped for having fewer than two judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub instances: Vec<LabeledInstance>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Vec<LabeledInstance>,
    pub validation: Vec<LabeledInstance>,
    pub seed: u64,
    pub ratio: f64,
}

fn parse_index(path: &Path, line: usize, column: &str, raw: &str) -> Result<usize> {
    raw.parse::<usize>().map_err(|_| {
        Error::parse(
            path,
            line,
            format!("{column} must be a non-negative integer, got {raw:?}"),
        )
    })
}

pub fn parse_instances(path: impl AsRef<Path>) -> Result<Vec<UsePair>> {
    let path = path.as_ref();
    let rows = tsv::read_table(path, &INSTANCES_HEADER)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut pairs = Vec::with_capacity(rows.len());
    for row in rows {
        let mut f = row.fields.into_iter();
        let mut next = || f.next().expect("arity checked by read_table");
        let instance_id = next();
        let lemma = next();
        let language = next();
        let context1 = next();
        let target_index1 = parse_index(path, row.line, "target_index1", &next())?;
        let context2 = next();
        let target_index2 = parse_index(path, row.line, "target_index2", &next())?;

        if context1.is_empty() || context2.is_empty() {
            return Err(Error::Validation(format!(
                "{}:{}: instance {instance_id} has an empty context",
                path.display(),
                row.line
            )));
        }
        if !seen.insert(instance_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{}: duplicate instance_id {instance_id}",
                path.display(),
                row.line
            )));
        }
        pairs.push(UsePair {
            instance_id,
            lemma,
            language,
            context1,
            target_index1,
            context2,
            target_index2,
        });
    }
    Ok(pairs)
}

pub fn parse_judgments(path: impl AsRef<Path>) -> Result<Vec<JudgmentRecord>> {
    let path = path.as_ref();
    let rows = tsv::read_table(path, &JUDGMENTS_HEADER)?;
    rows.into_iter()
        .map(|row| {
            let [instance_id, annotator_id, raw]: [String; 3] =
                row.fields.try_into().expect("arity checked by read_table");
            let value: i64 = raw
                .parse()
                .map_err(|_| Error::parse(path, row.line, format!("judgment must be an integer, got {raw:?}")))?;
            if !(SCALE_MIN as i64..=SCALE_MAX as i64).contains(&value) {
                return Err(Error::Validation(format!(
                    "{}:{}: judgment {value} for instance {instance_id} is outside the scale {SCALE_MIN}-{SCALE_MAX}",
                    path.display(),
                    row.line
                )));
            }
            Ok(JudgmentRecord {
                instance_id,
                annotator_id,
                judgment: value as u8,
            })
        })
        .collect()
}

/// Mean absolute difference over all unordered pairs of judgments.
pub fn mean_pairwise_disagreement(judgments: &[u8]) -> Result<f64> {
    let n = judgments.len();
    if n < 2 {
        return Err(Error::InsufficientJudgments(n));
    }
    // Sum over i<j of |a_i - a_j| from the sorted order: each element
    // contributes (2k - n + 1) times its value when it sits at sorted index k.
    let mut sorted = judgments.to_vec();
    sorted.sort_unstable();
    let total: i64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &v)| (2 * k as i64 - n as i64 + 1) * v as i64)
        .sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total as f64 / pairs)
}

pub fn build_labeled_dataset(pairs: &[UsePair], judgments: &[JudgmentRecord]) -> Result<LabelSummary> {
    let by_id: HashMap<&str, &UsePair> = pairs.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let mut grouped: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for j in judgments {
        if !by_id.contains_key(j.instance_id.as_str()) {
            return Err(Error::Validation(format!(
                "judgment by {} references unknown instance_id {}",
                j.annotator_id, j.instance_id
            )));
        }
        grouped.entry(j.instance_id.as_str()).or_default().push(j.judgment);
    }

    let mut ids: Vec<&str> = by_id.keys().copied().collect();
    ids.sort_unstable();

    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for id in ids {
        let values = grouped.get(id).map(Vec::as_slice).unwrap_or(&[]);
        if values.len() < 2 {
            skipped.push(id.to_string());
            continue;
        }
        instances.push(LabeledInstance {
            pair: by_id[id].clone(),
            mean_disagreement: mean_pairwise_disagreement(values)?,
            num_judgments: values.len(),
        });
    }
    if !skipped.is_empty() {
        log::warn!(
            "skipped {} instance(s) with fewer than 2 judgments: {}",
            skipped.len(),
            skipped.join(", ")
        );
    }
    Ok(LabelSummary { instances, skipped })
}

/// Deterministic split: sort by instance_id, Fisher-Yates with SplitMix64
/// seeded by `seed`; the last round(ratio * N) items go to training and the
/// leading remainder to validation. The training size is clamped to
/// [1, N-1] so neither side is empty.
pub fn split_train_validation(data: &[LabeledInstance], ratio: f64, seed: u64) -> Result<DataSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 instances to split, got {n}"
        )));
    }
    let mut items: Vec<LabeledInstance> = data.to_vec();
    items.sort_by(|a, b| a.pair.instance_id.cmp(&b.pair.instance_id));
    SplitMix64::new(seed).shuffle(&mut items);

    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let train = items.split_off(n - n_train);
    Ok(DataSplit {
        train,
        validation: items,
        seed,
        ratio,
    })
}

pub fn write_instances(path: impl AsRef<Path>, pairs: &[UsePair]) -> Result<()> {
    let mut out = INSTANCES_HEADER.join("\t");
    out.push('\n');
    for p in pairs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape(&p.instance_id),
            escape(&p.lemma),
            escape(&p.language),
            escape(&p.context1),
            p.target_index1,
            escape(&p.context2),
            p.target_index2
        );
    }
    tsv::write_file(path.as_ref(), &out)
}

pub fn write_judgments(path: impl AsRef<Path>, judgments: &[JudgmentRecord]) -> Result<()> {
    let mut out = JUDGMENTS_HEADER.join("\t");
    out.push('\n');
    for j in judgments {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            escape(&j.instance_id),
            escape(&j.annotator_id),
            j.judgment
        );
    }
    tsv::write_file(path.as_ref(), &out)
}

pub fn write_labels(path: impl AsRef<Path>, labeled: &[LabeledInstance]) -> Result<()> {
    let mut out = LABELS_HEADER.join("\t");
    out.push('\n');
    for l in labeled {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{}",
            escape(&l.pair.instance_id),
            l.mean_disagreement,
            l.num_judgments
        );
    }
    tsv::write_file(path.as_ref(), &out)
}

/// One row of a labels file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub instance_id: String,
    pub mean_disagreement: f64,
    pub num_judgments: usize,
}

pub fn parse_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let rows = tsv::read_table(path, &LABELS_HEADER)?;
    let mut seen = HashSet::new();
    rows.into_iter()
        .map(|row| {
            let [instance_id, mean, count]: [String; 3] = row.fields.try_into().expect("arity checked by read_table");
            let mean_disagreement: f64 = mean
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite() && (0.0..=3.0).contains(v))
                .ok_or_else(|| Error::parse(path, row.line, format!("invalid mean_disagreement {mean:?}")))?;
            let num_judgments: usize = count
                .parse()
                .ok()
                .filter(|&c| c >= 2)
                .ok_or_else(|| Error::parse(path, row.line, format!("invalid num_judgments {count:?}")))?;
            if !seen.insert(instance_id.clone()) {
                return Err(Error::Validation(format!(
                    "{}:{}: duplicate instance_id {instance_id}",
                    path.display(),
                    row.line
                )));
            }
            Ok(LabelRow {
                instance_id,
                mean_disagreement,
                num_judgments,
            })
        })
        .collect()
}

/// Join label rows with their use pairs (needed for per-language scoring).
pub fn attach_labels(pairs: &[UsePair], labels: &[LabelRow]) -> Result<Vec<LabeledInstance>> {
    let by_id: HashMap<&str, &UsePair> = pairs.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    labels
        .iter()
        .map(|row| {
            let pair = by_id
                .get(row.instance_id.as_str())
                .ok_or_else(|| Error::Validation(format!("label for unknown instance_id {}", row.instance_id)))?;
            Ok(LabeledInstance {
                pair: (*pair).clone(),
                mean_disagreement: row.mean_disagreement,
                num_judgments: row.num_judgments,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn brute_force(values: &[u8]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                sum += (values[i] as f64 - values[j] as f64).abs();
                count += 1;
            }
        }
        sum / count as f64
    }

    fn pair(id: &str) -> UsePair {
        UsePair {
            instance_id: id.to_string(),
            lemma: "bank".into(),
            language: "en".into(),
            context1: "the river bank".into(),
            target_index1: 2,
            context2: "the bank loan".into(),
            target_index2: 1,
        }
    }

    fn judgment(id: &str, annotator: &str, value: u8) -> JudgmentRecord {
        JudgmentRecord {
            instance_id: id.into(),
            annotator_id: annotator.into(),
            judgment: value,
        }
    }

    fn labeled(id: &str, mean: f64) -> LabeledInstance {
        LabeledInstance {
            pair: pair(id),
            mean_disagreement: mean,
            num_judgments: 2,
        }
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(mean_pairwise_disagreement(&[4, 4, 4]).unwrap(), 0.0);
        assert_eq!(mean_pairwise_disagreement(&[1, 4]).unwrap(), 3.0);
        assert_eq!(mean_pairwise_disagreement(&[1, 2, 4]).unwrap(), 2.0);
        assert!(matches!(
            mean_pairwise_disagreement(&[3]),
            Err(Error::InsufficientJudgments(1))
        ));
        assert!(mean_pairwise_disagreement(&[]).is_err());
    }

    #[test]
    fn exhaustive_small_lists_match_brute_force() {
        // every list of length 2..=5 over the scale
        for n in 2..=5u32 {
            for code in 0..4usize.pow(n) {
                let values: Vec<u8> = (0..n).map(|k| (code / 4usize.pow(k) % 4) as u8 + 1).collect();
                assert_eq!(
                    mean_pairwise_disagreement(&values).unwrap(),
                    brute_force(&values),
                    "{values:?}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn disagreement_properties(mut values in proptest::collection::vec(1u8..=4, 2..=8), seed: u64) {
            let base = mean_pairwise_disagreement(&values).unwrap();
            prop_assert_eq!(base, brute_force(&values));
            prop_assert!((0.0..=3.0).contains(&base));
            SplitMix64::new(seed).shuffle(&mut values);
            prop_assert_eq!(mean_pairwise_disagreement(&values).unwrap(), base);
        }

        #[test]
        fn identical_judgments_have_zero_disagreement(v in 1u8..=4, n in 2usize..20) {
            prop_assert_eq!(mean_pairwise_disagreement(&vec![v; n]).unwrap(), 0.0);
        }

        #[test]
        fn split_invariants(n in 2usize..60, ratio in 0.05f64..0.95, seed: u64) {
            let data: Vec<_> = (0..n).map(|i| labeled(&format!("p{i:03}"), 0.0)).collect();
            let a = split_train_validation(&data, ratio, seed).unwrap();
            let b = split_train_validation(&data, ratio, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.train.is_empty() && !a.validation.is_empty());
            prop_assert_eq!(a.train.len() + a.validation.len(), n);
            let expected = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
            prop_assert_eq!(a.train.len(), expected);
            let mut ids: Vec<_> = a.train.iter().chain(&a.validation).map(|l| l.pair.instance_id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }

    #[test]
    fn split_sizes_and_seeds() {
        let ten: Vec<_> = (0..10).map(|i| labeled(&format!("p{i}"), 0.0)).collect();
        let s = split_train_validation(&ten, 0.8, 42).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (8, 2));

        let five: Vec<_> = (0..5).map(|i| labeled(&format!("p{i}"), 0.0)).collect();
        let a = split_train_validation(&five, 0.8, 1).unwrap();
        let b = split_train_validation(&five, 0.8, 2).unwrap();
        assert_eq!((a.train.len(), a.validation.len()), (4, 1));
        assert_eq!((b.train.len(), b.validation.len()), (4, 1));
        assert_ne!(a.validation[0].pair.instance_id, b.validation[0].pair.instance_id);
    }

    #[test]
    fn split_rejects_tiny_or_bad_ratio() {
        let one = vec![labeled("a", 0.0)];
        assert!(split_train_validation(&one, 0.8, 0).is_err());
        let two = vec![labeled("a", 0.0), labeled("b", 0.0)];
        assert!(split_train_validation(&two, 1.0, 0).is_err());
        assert!(split_train_validation(&two, 0.0, 0).is_err());
    }

    #[test]
    fn split_ignores_input_order() {
        let data: Vec<_> = (0..12).map(|i| labeled(&format!("p{i:02}"), 0.0)).collect();
        let mut reversed = data.clone();
        reversed.reverse();
        assert_eq!(
            split_train_validation(&data, 0.75, 9).unwrap(),
            split_train_validation(&reversed, 0.75, 9).unwrap()
        );
    }

    #[test]
    fn build_labels() {
        let pairs = vec![pair("a")];
        let out = build_labeled_dataset(&pairs, &[judgment("a", "x", 1), judgment("a", "y", 4)]).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.instances[0].mean_disagreement, 3.0);
        assert_eq!(out.instances[0].num_judgments, 2);
        assert!(out.skipped.is_empty());

        let out = build_labeled_dataset(&pairs, &[judgment("a", "x", 1)]).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!(out.skipped, vec!["a".to_string()]);

        let err = build_labeled_dataset(&pairs, &[judgment("zz", "x", 1)]).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn build_labels_matches_pairwise_oracle() {
        let pairs = vec![pair("c"), pair("a"), pair("b")];
        let raw: &[(&str, &[u8])] = &[("a", &[1, 2, 4]), ("b", &[3, 3, 1, 4, 2]), ("c", &[2])];
        let judgments: Vec<_> = raw
            .iter()
            .flat_map(|(id, vals)| {
                vals.iter()
                    .enumerate()
                    .map(move |(k, &v)| judgment(id, &format!("ann{k}"), v))
            })
            .collect();
        let out = build_labeled_dataset(&pairs, &judgments).unwrap();
        let ids: Vec<_> = out.instances.iter().map(|l| l.pair.instance_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(out.instances[0].mean_disagreement, brute_force(&[1, 2, 4]));
        assert_eq!(out.instances[1].mean_disagreement, brute_force(&[3, 3, 1, 4, 2]));
        assert_eq!(out.instances[1].mean_disagreement, 1.4);
        assert_eq!(out.skipped, vec!["c".to_string()]);
    }

    #[test]
    fn parse_instances_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.tsv");
        fs::write(
            &path,
            "instance_id\tlemma\tlanguage\tcontext1\ttarget_index1\tcontext2\ttarget_index2\n\
             p1\tbank\ten\tthe river bank\t2\ta bank\\tloan\t1\n\
             p2\tBank\tde\tdie Bank\t1\tam Ufer\t0\n",
        )
        .unwrap();
        let pairs = parse_instances(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].instance_id, "p1");
        assert_eq!(pairs[0].context2, "a bank\tloan");
        assert_eq!(pairs[1].language, "de");

        fs::write(&path, INSTANCES_HEADER.join("\t") + "\n").unwrap();
        assert!(parse_instances(&path).unwrap().is_empty());

        fs::write(&path, INSTANCES_HEADER.join("\t") + "\np1\tbank\ten\tctx\t2\n").unwrap();
        match parse_instances(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        fs::write(&path, INSTANCES_HEADER.join("\t") + "\np1\tbank\ten\tctx\tx\tctx\t0\n").unwrap();
        assert!(matches!(parse_instances(&path), Err(Error::Parse { line: 2, .. })));

        fs::write(
            &path,
            INSTANCES_HEADER.join("\t") + "\np1\tb\ten\tc\t0\tc\t0\np1\tb\ten\tc\t0\tc\t0\n",
        )
        .unwrap();
        assert!(matches!(parse_instances(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_judgment_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.tsv");
        fs::write(&path, "instance_id\tannotator_id\tjudgment\np1\tann1\t4\n").unwrap();
        assert_eq!(parse_judgments(&path).unwrap(), vec![judgment("p1", "ann1", 4)]);

        for bad in ["5", "0"] {
            fs::write(&path, format!("instance_id\tannotator_id\tjudgment\np1\tann1\t{bad}\n")).unwrap();
            let err = parse_judgments(&path).unwrap_err();
            assert!(matches!(err, Error::Validation(_)));
            assert!(err.to_string().contains("p1"));
        }

        fs::write(&path, "instance_id\tannotator_id\tjudgment\tcomment\np1\tann1\t4\tx\n").unwrap();
        assert!(matches!(parse_judgments(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        let data = vec![labeled("a", 2.0), labeled("b", 4.0 / 3.0)];
        write_labels(&path, &data).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "instance_id\tmean_disagreement\tnum_judgments\na\t2.000000\t2\nb\t1.333333\t2\n"
        );
        let rows = parse_labels(&path).unwrap();
        assert_eq!(rows[1].mean_disagreement, 1.333333);
        let joined = attach_labels(&[pair("a"), pair("b")], &rows).unwrap();
        assert_eq!(joined[0].pair.instance_id, "a");
        assert!(attach_labels(&[pair("a")], &rows).is_err());
    }
}

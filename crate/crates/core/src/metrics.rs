//! Spearman rank correlation with average-rank tie handling, and the
//! per-language report built on it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::tsv;

/// 1-based ascending ranks; tied values share the mean of the positions
/// they span.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
}

pub fn average_ranks(values: &[f64]) -> Result<RankVector> {
    if values.is_empty() {
        return Err(Error::Shape("cannot rank an empty vector".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("value {i} in ranking input")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end, averaged
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    Ok(RankVector { ranks })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

/// Pearson correlation of the two average-rank vectors.
pub fn spearman_rho(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "prediction length {} != gold length {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 items, got {}", pred.len())));
    }
    let rp = average_ranks(pred)?;
    let rg = average_ranks(gold)?;
    if is_constant(pred) {
        return Err(Error::Degenerate("predictions are constant".into()));
    }
    if is_constant(gold) {
        return Err(Error::Degenerate("gold values are constant".into()));
    }
    Ok(pearson(&rp.ranks, &rg.ranks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopeMetrics {
    pub n: usize,
    /// `None` when the ranking is undefined (fewer than two items or a
    /// constant side).
    pub spearman: Option<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Pooled over every instance.
    pub overall: ScopeMetrics,
    pub per_language: BTreeMap<String, ScopeMetrics>,
    /// Unweighted mean of the defined per-language correlations.
    pub avg_spearman: Option<f64>,
    /// Unweighted mean of per-language MSE over the same languages.
    pub avg_mse: Option<f64>,
    /// Number of instances in the languages that entered the average.
    pub avg_n: usize,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn n(&self) -> usize {
        self.overall.n
    }
}

fn scope_metrics(pred: &[f64], gold: &[f64]) -> (ScopeMetrics, Option<Error>) {
    let n = pred.len();
    let mse = pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n as f64;
    match spearman_rho(pred, gold) {
        Ok(rho) => (
            ScopeMetrics {
                n,
                spearman: Some(rho),
                mse,
            },
            None,
        ),
        Err(e) => (ScopeMetrics { n, spearman: None, mse }, Some(e)),
    }
}

pub fn evaluate_report(pred: &HashMap<String, f64>, gold: &[LabeledInstance]) -> Result<MetricReport> {
    let missing: Vec<String> = gold
        .iter()
        .filter(|g| !pred.contains_key(&g.pair.instance_id))
        .map(|g| g.pair.instance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    if gold.is_empty() {
        return Err(Error::Validation("no gold instances to evaluate".into()));
    }

    let mut warnings = Vec::new();
    let mut by_lang: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_p, mut all_g) = (Vec::with_capacity(gold.len()), Vec::with_capacity(gold.len()));
    for g in gold {
        let p = pred[&g.pair.instance_id];
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("prediction for {}", g.pair.instance_id)));
        }
        let entry = by_lang.entry(g.pair.language.as_str()).or_default();
        entry.0.push(p);
        entry.1.push(g.mean_disagreement);
        all_p.push(p);
        all_g.push(g.mean_disagreement);
    }

    let (overall, err) = scope_metrics(&all_p, &all_g);
    if let Some(e) = err {
        warnings.push(format!("ALL: spearman undefined ({e})"));
    }

    let mut per_language = BTreeMap::new();
    for (lang, (p, g)) in by_lang {
        let (m, err) = scope_metrics(&p, &g);
        if let Some(e) = err {
            warnings.push(format!("{lang}: spearman undefined, excluded from AVG ({e})"));
        }
        per_language.insert(lang.to_string(), m);
    }

    let defined: Vec<&ScopeMetrics> = per_language.values().filter(|m| m.spearman.is_some()).collect();
    let (avg_spearman, avg_mse, avg_n) = if defined.is_empty() {
        (None, None, 0)
    } else {
        let k = defined.len() as f64;
        (
            Some(defined.iter().map(|m| m.spearman.unwrap()).sum::<f64>() / k),
            Some(defined.iter().map(|m| m.mse).sum::<f64>() / k),
            defined.iter().map(|m| m.n).sum(),
        )
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MetricReport {
        overall,
        per_language,
        avg_spearman,
        avg_mse,
        avg_n,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn format_report(report: &MetricReport) -> String {
    let mut out = String::from("scope\tn\tspearman\tmse\n");
    for (lang, m) in &report.per_language {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}",
            tsv::escape(lang),
            m.n,
            fmt_opt(m.spearman),
            m.mse
        );
    }
    let o = &report.overall;
    let _ = writeln!(out, "ALL\t{}\t{}\t{:.6}", o.n, fmt_opt(o.spearman), o.mse);
    let _ = writeln!(
        out,
        "AVG\t{}\t{}\t{}",
        report.avg_n,
        fmt_opt(report.avg_spearman),
        fmt_opt(report.avg_mse)
    );
    out
}

pub fn write_report(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    tsv::write_file(path.as_ref(), &format_report(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UsePair;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn closed_form(pred: &[f64], gold: &[f64]) -> f64 {
        let rp = average_ranks(pred).unwrap().ranks;
        let rg = average_ranks(gold).unwrap().ranks;
        let n = pred.len() as f64;
        let d2: f64 = rp.iter().zip(&rg).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    fn instance(id: &str, lang: &str, mean: f64) -> LabeledInstance {
        LabeledInstance {
            pair: UsePair {
                instance_id: id.into(),
                lemma: "x".into(),
                language: lang.into(),
                context1: "a".into(),
                target_index1: 0,
                context2: "b".into(),
                target_index2: 0,
            },
            mean_disagreement: mean,
            num_judgments: 3,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(average_ranks(&[10.0, 20.0, 30.0]).unwrap().ranks, [1.0, 2.0, 3.0]);
        assert_eq!(average_ranks(&[5.0, 5.0]).unwrap().ranks, [1.5, 1.5]);
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]).unwrap().ranks,
            [3.5, 1.0, 3.5, 2.0]
        );
        assert!(average_ranks(&[1.0, f64::NAN]).is_err());
        assert!(average_ranks(&[]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let gold = [0.3, 1.2, 2.5, 0.9];
        assert_eq!(spearman_rho(&gold, &gold).unwrap(), 1.0);
        let rev: Vec<f64> = gold.iter().map(|v| -v).collect();
        assert_eq!(spearman_rho(&rev, &gold).unwrap(), -1.0);
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        assert!(matches!(
            spearman_rho(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            spearman_rho(&[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(spearman_rho(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
    }

    fn tied_vec() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=7).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..4).prop_map(f64::from), n),
                proptest::collection::vec((0u8..4).prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_sum_preserved(v in proptest::collection::vec((0u8..5).prop_map(f64::from), 1..30)) {
            let n = v.len() as f64;
            let sum: f64 = average_ranks(&v).unwrap().ranks.iter().sum();
            prop_assert_eq!(sum, n * (n + 1.0) / 2.0);
        }

        #[test]
        fn symmetric_bounded_and_invariant((a, b) in tied_vec()) {
            if let Ok(rho) = spearman_rho(&a, &b) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
                prop_assert!((rho - spearman_rho(&b, &a).unwrap()).abs() < 1e-12);
                let fa: Vec<f64> = a.iter().map(|v| v.exp()).collect();
                let gb: Vec<f64> = b.iter().map(|v| 3.0 * v - 7.0).collect();
                prop_assert!((rho - spearman_rho(&fa, &gb).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn self_correlation((a, _) in tied_vec()) {
            if !is_constant(&a) {
                prop_assert!((spearman_rho(&a, &a).unwrap() - 1.0).abs() < 1e-12);
                let neg: Vec<f64> = a.iter().map(|v| -v).collect();
                prop_assert!((spearman_rho(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn closed_form_without_ties(n in 2usize..40, s1: u64, s2: u64) {
            let mut a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut b = a.clone();
            SplitMix64::new(s1).shuffle(&mut a);
            SplitMix64::new(s2).shuffle(&mut b);
            prop_assert!((spearman_rho(&a, &b).unwrap() - closed_form(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn report_single_language_monotone() {
        let gold: Vec<_> = (0..6)
            .map(|i| instance(&format!("p{i}"), "en", i as f64 * 0.4))
            .collect();
        let pred: HashMap<_, _> = gold
            .iter()
            .map(|g| (g.pair.instance_id.clone(), 2.0 * g.mean_disagreement + 1.0))
            .collect();
        let r = evaluate_report(&pred, &gold).unwrap();
        assert_eq!(r.per_language["en"].spearman, Some(1.0));
        assert_eq!(r.avg_spearman, Some(1.0));
        assert_eq!(r.overall.spearman, Some(1.0));
        assert_eq!(r.n(), 6);
    }

    #[test]
    fn report_averages_languages() {
        let mut gold = Vec::new();
        let mut pred = HashMap::new();
        let mut add = |lang: &str, rows: &[(f64, f64)]| {
            for (i, &(p, g)) in rows.iter().enumerate() {
                gold.push(instance(&format!("{lang}{i}"), lang, g));
                pred.insert(format!("{lang}{i}"), p);
            }
        };
        // d = (0,-1,1,0): rho = 1 - 12/60 = 0.8
        add("en", &[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0), (4.0, 4.0)]);
        // d = (-3,1,1,1,0): rho = 1 - 72/120 = 0.4
        add("de", &[(1.0, 4.0), (2.0, 1.0), (3.0, 2.0), (4.0, 3.0), (5.0, 5.0)]);
        let r = evaluate_report(&pred, &gold).unwrap();
        assert!((r.per_language["en"].spearman.unwrap() - 0.8).abs() < 1e-12);
        assert!((r.per_language["de"].spearman.unwrap() - 0.4).abs() < 1e-12);
        assert!((r.avg_spearman.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(r.avg_n, 9);
        assert_eq!(r.per_language.values().map(|m| m.n).sum::<usize>(), r.n());
    }

    #[test]
    fn report_flags_undefined_languages() {
        let gold = vec![
            instance("a", "en", 1.0),
            instance("b", "en", 2.0),
            instance("c", "en", 0.5),
            instance("d", "sv", 1.0),
            instance("e", "zh", 1.0),
            instance("f", "zh", 1.0),
        ];
        let pred: HashMap<_, _> = gold
            .iter()
            .map(|g| (g.pair.instance_id.clone(), g.mean_disagreement))
            .collect();
        let r = evaluate_report(&pred, &gold).unwrap();
        assert_eq!(r.per_language["sv"].spearman, None);
        assert_eq!(r.per_language["zh"].spearman, None);
        assert_eq!(r.avg_spearman, Some(1.0));
        assert_eq!(r.avg_n, 3);
        assert_eq!(r.warnings.len(), 2);
        let text = format_report(&r);
        assert!(text.contains("sv\t1\tNA\t0.000000\n"));
        assert!(text.ends_with("AVG\t3\t1.000000\t0.000000\n"));
    }

    #[test]
    fn report_missing_prediction() {
        let gold = vec![instance("a", "en", 1.0), instance("b", "en", 2.0)];
        let pred: HashMap<_, _> = [("a".to_string(), 1.0)].into_iter().collect();
        match evaluate_report(&pred, &gold).unwrap_err() {
            Error::MissingPredictions(ids) => assert_eq!(ids, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}

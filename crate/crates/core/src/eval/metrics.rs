use std::collections::{HashMap, HashSet};

use crate::retrieval::RetrievalResult;

use super::{EvalError, Result};

/// Similarity scores of matching and non-matching pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredPairSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

/// Relevant candidate ids for each query id.
pub type RelevanceJudgment = HashMap<String, HashSet<String>>;

fn check(pairs: &ScoredPairSet) -> Result<()> {
    if pairs.positives.is_empty() || pairs.negatives.is_empty() {
        return Err(EvalError::EmptySide);
    }
    if pairs.positives.iter().chain(&pairs.negatives).any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    Ok(())
}

/// ROC vertices `(false-accept rate, false-reject rate)` for thresholds
/// +∞, every distinct score in decreasing order, and −∞; a pair is
/// accepted when its score is at least the threshold.
pub fn roc_points(pairs: &ScoredPairSet) -> Result<Vec<(f64, f64)>> {
    check(pairs)?;
    let (p, n) = (pairs.positives.len() as f64, pairs.negatives.len() as f64);
    let mut all: Vec<(f64, bool)> = pairs
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(pairs.negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n, 1.0 - tp as f64 / p));
    }
    points.push((1.0, 0.0));
    Ok(points)
}

/// Rate at which false accepts equal false rejects, interpolated linearly
/// between the two ROC vertices that straddle the crossing.
pub fn eer(pairs: &ScoredPairSet) -> Result<f64> {
    let pts = roc_points(pairs)?;
    for w in pts.windows(2) {
        let (d1, d2) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d1 == 0.0 {
            return Ok(w[0].0);
        }
        if d1 < 0.0 && d2 >= 0.0 {
            let a = d1 / (d1 - d2);
            return Ok(w[0].0 + a * (w[1].0 - w[0].0));
        }
    }
    unreachable!("the sweep runs from FAR < FRR to FAR > FRR")
}

/// Mid-ranks (1-based), ties sharing the mean of their positions.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(pairs: &ScoredPairSet) -> Result<f64> {
    check(pairs)?;
    let (p, n) = (pairs.positives.len(), pairs.negatives.len());
    let all: Vec<f64> = pairs.positives.iter().chain(&pairs.negatives).copied().collect();
    let ranks = mid_ranks(&all);
    let rank_sum: f64 = ranks[..p].iter().sum();
    Ok((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64))
}

fn judgment<'a>(rel: &'a RelevanceJudgment, query: &str) -> Result<&'a HashSet<String>> {
    rel.get(query).ok_or_else(|| EvalError::MissingJudgment(query.to_string()))
}

/// Fraction of queries with a relevant candidate among the first `k` hits.
pub fn hit_at_k(results: &[RetrievalResult], rel: &RelevanceJudgment, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut hits = 0usize;
    for r in results {
        let relevant = judgment(rel, &r.query)?;
        if r.hits.iter().take(k).any(|(id, _)| relevant.contains(id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

/// Mean over relevant items of the precision at each one's rank; relevant
/// items missing from the ranking contribute zero.
pub fn average_precision(result: &RetrievalResult, relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, (id, _)) in result.hits.iter().enumerate() {
        if relevant.contains(id) {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

pub fn mean_average_precision(results: &[RetrievalResult], rel: &RelevanceJudgment) -> Result<f64> {
    if results.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut total = 0.0;
    for r in results {
        total += average_precision(r, judgment(rel, &r.query)?);
    }
    Ok(total / results.len() as f64)
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(EvalError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let (rx, ry) = (mid_ranks(x), mid_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(p: &[f64], n: &[f64]) -> ScoredPairSet {
        ScoredPairSet {
            positives: p.to_vec(),
            negatives: n.to_vec(),
        }
    }

    fn result(q: &str, ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            query: q.into(),
            hits: ids.iter().enumerate().map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01)).collect(),
        }
    }

    fn rel(pairs: &[(&str, &[&str])]) -> RelevanceJudgment {
        pairs
            .iter()
            .map(|(q, ids)| (q.to_string(), ids.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 0.0);
        assert!((eer(&set(&[0.9, 0.8, 0.4], &[0.7, 0.3, 0.2])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(eer(&set(&[0.5], &[0.5])).unwrap(), 0.5);
        assert!(matches!(eer(&set(&[], &[0.5])), Err(EvalError::EmptySide)));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[0.9, 0.4], &[0.7, 0.3])).unwrap(), 0.75);
        assert_eq!(auc(&set(&[0.5], &[0.5])).unwrap(), 0.5);
        assert!(matches!(auc(&set(&[0.5], &[])), Err(EvalError::EmptySide)));
    }

    #[test]
    fn ranking_examples() {
        let r = rel(&[("q1", &["a"]), ("q2", &["b"]), ("q3", &["c"]), ("q4", &["d"])]);
        let results = vec![
            result("q1", &["a", "b"]),
            result("q2", &["b", "a"]),
            result("q3", &["a", "c"]),
            result("q4", &["a", "d"]),
        ];
        assert_eq!(hit_at_k(&results, &r, 1).unwrap(), 0.5);
        assert_eq!(hit_at_k(&results, &r, 2).unwrap(), 1.0);
        let ladder = rel(&[("q", &["a", "c"])]);
        let ap = mean_average_precision(&[result("q", &["a", "b", "c"])], &ladder).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let second = rel(&[("q", &["b"])]);
        assert_eq!(mean_average_precision(&[result("q", &["a", "b"])], &second).unwrap(), 0.5);
        assert_eq!(mean_average_precision(&[result("q", &["b", "a"])], &second).unwrap(), 1.0);
        assert!(matches!(
            hit_at_k(&[result("zz", &["a"])], &second, 1),
            Err(EvalError::MissingJudgment(_))
        ));
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 5.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1))));
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(EvalError::DegenerateConstantInput)));
    }

    /// Trapezoidal area under the ROC curve (true-accept against false-accept).
    fn trapezoid(pts: &[(f64, f64)]) -> f64 {
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * ((1.0 - w[0].1) + (1.0 - w[1].1)) / 2.0)
            .sum()
    }

    fn scores() -> impl Strategy<Value = ScoredPairSet> {
        let s = || proptest::collection::vec(prop_oneof![(0i32..6).prop_map(|k| k as f64 / 5.0), -1.0f64..1.0], 1..25);
        (s(), s()).prop_map(|(p, n)| ScoredPairSet { positives: p, negatives: n })
    }

    proptest! {
        #[test]
        fn auc_is_the_roc_area(pairs in scores()) {
            let a = auc(&pairs).unwrap();
            prop_assert!((a - trapezoid(&roc_points(&pairs).unwrap())).abs() < 1e-9);
        }

        #[test]
        fn eer_is_invariant_to_monotone_maps(pairs in scores()) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (3.0 * x).exp() - 7.0).collect::<Vec<_>>();
            let mapped = ScoredPairSet { positives: f(&pairs.positives), negatives: f(&pairs.negatives) };
            prop_assert!((eer(&pairs).unwrap() - eer(&mapped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn negating_scores_reflects_both_metrics(pairs in scores()) {
            let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<_>>();
            let flipped = ScoredPairSet { positives: neg(&pairs.positives), negatives: neg(&pairs.negatives) };
            let (e, a) = (eer(&pairs).unwrap(), auc(&pairs).unwrap());
            prop_assert!((auc(&flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
            prop_assert!((eer(&flipped).unwrap() - (1.0 - e)).abs() < 1e-12);
            // Negating and swapping the labels together changes nothing.
            let swapped = ScoredPairSet { positives: flipped.negatives.clone(), negatives: flipped.positives.clone() };
            prop_assert!((eer(&swapped).unwrap() - e).abs() < 1e-12);
            prop_assert!((auc(&swapped).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn spearman_is_rank_only(x in proptest::collection::vec(-5.0f64..5.0, 3..20), seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = spearman(&x, &y);
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
            match r {
                Ok(v) => prop_assert!((spearman(&cubed, &y).unwrap() - v).abs() < 1e-12),
                Err(_) => prop_assert!(spearman(&cubed, &y).is_err()),
            }
        }

        #[test]
        fn hit_at_one_is_at_most_hit_at_k(n in 2usize..12, k in 1usize..12, seed in 0u64..500) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            let mut results = Vec::new();
            let mut judg = RelevanceJudgment::new();
            for q in 0..5 {
                let mut order = ids.clone();
                order.shuffle(&mut rng);
                judg.insert(format!("q{q}"), ids.choose_multiple(&mut rng, 1 + q % 2).cloned().collect());
                results.push(RetrievalResult { query: format!("q{q}"), hits: order.into_iter().map(|i| (i, 0.0)).collect() });
            }
            let h1 = hit_at_k(&results, &judg, 1).unwrap();
            prop_assert!(h1 <= hit_at_k(&results, &judg, k).unwrap());
            let map = mean_average_precision(&results, &judg).unwrap();
            prop_assert!((0.0..=1.0).contains(&map));
            prop_assert_eq!(hit_at_k(&results, &judg, n).unwrap(), 1.0);
        }
    }
}

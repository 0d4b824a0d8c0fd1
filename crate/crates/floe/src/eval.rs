//! Scoring evaluation: rank-statistic AUC (with 0.5 credit per tie), ROC
//! curves, per-anomaly-type breakdowns, NLL/latent-norm separation
//! summaries, and Student-t confidence intervals for run aggregates.

use std::collections::BTreeMap;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::flow::FlowModel;

/// One scored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub score: f64,
    pub label: Label,
}

/// A set of scored samples ready for threshold-free evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, score: f64, label: Label) {
        self.entries.push(ScoredEntry { score, label });
    }

    fn counts(&self) -> (usize, usize) {
        let anomalies = self.entries.iter().filter(|e| e.label.is_anomaly()).count();
        (self.entries.len() - anomalies, anomalies)
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if let Some(e) = self.entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::non_finite(format!("score of a {} sample", e.label)));
        }
        let (normals, anomalies) = self.counts();
        if normals == 0 || anomalies == 0 {
            return Err(Error::usage(format!(
                "AUC needs both classes: {normals} normal and {anomalies} anomalous scores"
            )));
        }
        Ok((normals, anomalies))
    }

    /// Restriction to normals plus anomalies of the given types.
    pub fn restrict_to_types(&self, types: &[String]) -> ScoredSet {
        ScoredSet {
            entries: self
                .entries
                .iter()
                .filter(|e| match &e.label {
                    Label::Normal => true,
                    Label::Anomaly(tag) => types.iter().any(|t| t == tag),
                })
                .cloned()
                .collect(),
        }
    }
}

/// Area under the ROC curve by the rank statistic: the probability that a
/// random anomaly outscores a random normal, ties counting one half.
///
/// Computed from average ranks in O(n log n); the result equals the
/// all-pairs count exactly (both sides are sums of half-integers small
/// enough to be exact in doubles).
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let (normals, anomalies) = set.validate()?;
    let mut order: Vec<usize> = (0..set.entries.len()).collect();
    order.sort_by(|&a, &b| {
        set.entries[a]
            .score
            .partial_cmp(&set.entries[b].score)
            .expect("scores validated finite")
    });

    let mut anomaly_rank_sum = 0.0;
    let mut i = 0;
    let n = order.len();
    while i < n {
        let mut j = i;
        while j < n && set.entries[order[j]].score == set.entries[order[i]].score {
            j += 1;
        }
        // Ranks i+1 ..= j share the average (i + 1 + j) / 2.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if set.entries[idx].label.is_anomaly() {
                anomaly_rank_sum += avg_rank;
            }
        }
        i = j;
    }

    let u = anomaly_rank_sum - (anomalies * (anomalies + 1)) as f64 / 2.0;
    Ok(u / (anomalies as f64 * normals as f64))
}

/// ROC curve points `(false_positive_rate, true_positive_rate)`, one
/// threshold per distinct score, descending, starting at (0, 0). Both
/// coordinates are non-decreasing and the trapezoid area equals [`auc`].
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (normals, anomalies) = set.validate()?;
    let mut order: Vec<usize> = (0..set.entries.len()).collect();
    order.sort_by(|&a, &b| {
        set.entries[b]
            .score
            .partial_cmp(&set.entries[a].score)
            .expect("scores validated finite")
    });

    let mut points = Vec::with_capacity(set.entries.len() + 1);
    points.push((0.0, 0.0));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    let n = order.len();
    while i < n {
        let mut j = i;
        while j < n && set.entries[order[j]].score == set.entries[order[i]].score {
            if set.entries[order[j]].label.is_anomaly() {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / normals as f64, tp as f64 / anomalies as f64));
        i = j;
    }
    Ok(points)
}

/// Trapezoidal area under a curve of (x, y) points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// AUC per anomaly type: all normals against each type's anomalies.
/// Types present in the set are always covered; types with no scored
/// anomalies simply do not appear.
pub fn per_type_auc(set: &ScoredSet) -> Result<BTreeMap<String, f64>> {
    set.validate()?;
    let mut types: Vec<String> = set
        .entries
        .iter()
        .filter_map(|e| e.label.anomaly_type().map(str::to_owned))
        .collect();
    types.sort();
    types.dedup();

    let mut out = BTreeMap::new();
    for tag in types {
        let subset = set.restrict_to_types(std::slice::from_ref(&tag));
        out.insert(tag, auc(&subset)?);
    }
    Ok(out)
}

/// Five-number summary (min, quartiles, max) with linear interpolation
/// between order statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Result<FiveNumber> {
        if values.is_empty() {
            return Err(Error::usage("five-number summary of an empty set"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let q = |p: f64| -> f64 {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if lo + 1 < sorted.len() {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            } else {
                sorted[lo]
            }
        };
        Ok(FiveNumber {
            min: sorted[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Box-plot statistics of the NLL and of the latent norm `|m(x)|`, per
/// class, for a trained flow on a test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationStats {
    pub normal_nll: FiveNumber,
    pub anomaly_nll: FiveNumber,
    pub normal_latent_norm: FiveNumber,
    pub anomaly_latent_norm: FiveNumber,
}

pub fn separation_stats(
    model: &FlowModel,
    normal_test: &[Vec<f64>],
    anomaly_test: &[Vec<f64>],
) -> Result<SeparationStats> {
    let eval = |samples: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut nlls = Vec::with_capacity(samples.len());
        let mut norms = Vec::with_capacity(samples.len());
        for x in samples {
            let out = model.forward(x)?;
            norms.push(out.z.iter().map(|v| v * v).sum::<f64>().sqrt());
            nlls.push(crate::flow::nll_from_output(model.dimension(), &out.z, out.log_det));
        }
        Ok((nlls, norms))
    };
    let (normal_nll, normal_norm) = eval(normal_test)?;
    let (anomaly_nll, anomaly_norm) = eval(anomaly_test)?;
    Ok(SeparationStats {
        normal_nll: FiveNumber::of(&normal_nll)?,
        anomaly_nll: FiveNumber::of(&anomaly_nll)?,
        normal_latent_norm: FiveNumber::of(&normal_norm)?,
        anomaly_latent_norm: FiveNumber::of(&anomaly_norm)?,
    })
}

/// Two-sided 97.5% Student-t quantiles for df = 1..=30; beyond that the
/// normal quantile is used (error under 0.7%).
const T_975: [f64; 30] = [
    12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281, 2.2010,
    2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739,
    2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423,
];

pub fn t_quantile_975(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        T_975[df - 1]
    } else {
        1.9600
    }
}

/// Mean and 95% confidence half-width of run-level values. The half-width
/// is `None` for fewer than two runs.
pub fn mean_and_ci95(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile_975(n - 1) * (var / n as f64).sqrt();
    (mean, Some(half))
}

/// 95% half-width for the difference of two run-level means, using the
/// pooled two-sample variance. Used to judge whether two sweep points
/// differ by more than noise.
pub fn pooled_ci95(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss =
        a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() + b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>();
    let df = na + nb - 2;
    let pooled_var = ss / df as f64;
    Some(t_quantile_975(df) * (pooled_var * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn set_from(scores: &[f64], labels: &[bool]) -> ScoredSet {
        ScoredSet::new(
            scores
                .iter()
                .zip(labels)
                .map(|(&score, &anom)| ScoredEntry {
                    score,
                    label: if anom {
                        Label::Anomaly("a".into())
                    } else {
                        Label::Normal
                    },
                })
                .collect(),
        )
    }

    /// All-pairs oracle: wins plus half-credit ties over the pair count.
    fn brute_force_auc(set: &ScoredSet) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for a in set.entries.iter().filter(|e| e.label.is_anomaly()) {
            for n in set.entries.iter().filter(|e| !e.label.is_anomaly()) {
                pairs += 1.0;
                if a.score > n.score {
                    wins += 1.0;
                } else if a.score == n.score {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation_is_one() {
        let set = set_from(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]);
        assert_eq!(auc(&set).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let set = set_from(&[7.0, 7.0, 7.0, 7.0], &[false, false, true, true]);
        assert_eq!(auc(&set).unwrap(), 0.5);
    }

    #[test]
    fn rank_statistic_equals_brute_force_exactly() {
        let mut rng = seeded_rng(3);
        for _ in 0..50 {
            let n = rng.random_range(5..300);
            let mut entries = Vec::with_capacity(n);
            let mut has = [false, false];
            for _ in 0..n {
                // Coarse grid of scores forces plenty of ties.
                let score = (rng.random_range(-10.0..10.0) as f64 * 4.0).round() / 4.0;
                let anom = rng.random_range(0..2) == 1;
                has[anom as usize] = true;
                entries.push(ScoredEntry {
                    score,
                    label: if anom {
                        Label::Anomaly("x".into())
                    } else {
                        Label::Normal
                    },
                });
            }
            if !(has[0] && has[1]) {
                continue;
            }
            let set = ScoredSet::new(entries);
            assert_eq!(auc(&set).unwrap(), brute_force_auc(&set));
        }
    }

    proptest::proptest! {
        /// AUC is invariant under strictly increasing transformations.
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..40, proptest::bool::ANY), 4..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            proptest::prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let set = set_from(&scores, &labels);
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            let tset = set_from(&transformed, &labels);
            proptest::prop_assert_eq!(auc(&set).unwrap(), auc(&tset).unwrap());
        }

        /// Flipping labels mirrors the AUC when there are no ties.
        #[test]
        fn label_flip_mirrors_auc(
            pairs in proptest::collection::vec(proptest::bool::ANY, 4..50)
        ) {
            proptest::prop_assume!(pairs.iter().any(|&l| l) && pairs.iter().any(|&l| !l));
            let mut rng = seeded_rng(11);
            // Distinct scores: a shuffled ladder.
            let mut scores: Vec<f64> = (0..pairs.len()).map(|i| i as f64).collect();
            for i in (1..scores.len()).rev() {
                let j = rng.random_range(0..=i);
                scores.swap(i, j);
            }
            let set = set_from(&scores, &pairs);
            let flipped: Vec<bool> = pairs.iter().map(|l| !l).collect();
            let fset = set_from(&scores, &flipped);
            let a = auc(&set).unwrap();
            let b = auc(&fset).unwrap();
            proptest::prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_curve_shape_and_area() {
        // Single threshold between the classes.
        let set = set_from(&[1.0, 1.0, 2.0, 2.0], &[false, false, true, true]);
        let curve = roc_curve(&set).unwrap();
        assert_eq!(curve, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert!((trapezoid_area(&curve) - 1.0).abs() < 1e-15);

        // Perfect separation passes through (0, 1).
        let set = set_from(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]);
        let curve = roc_curve(&set).unwrap();
        assert!(curve.contains(&(0.0, 1.0)));
    }

    #[test]
    fn roc_area_equals_auc_on_random_sets() {
        let mut rng = seeded_rng(7);
        for _ in 0..30 {
            let n = rng.random_range(10..150);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-5.0..5.0) as f64 * 2.0).round() / 2.0)
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            if !labels.iter().any(|&l| l) || !labels.iter().any(|&l| !l) {
                continue;
            }
            let set = set_from(&scores, &labels);
            let curve = roc_curve(&set).unwrap();
            for w in curve.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "curve must be monotone");
            }
            assert!((trapezoid_area(&curve) - auc(&set).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_is_a_usage_error() {
        let set = set_from(&[1.0, 2.0], &[false, false]);
        assert!(matches!(auc(&set), Err(Error::Usage(_))));
        assert!(matches!(roc_curve(&set), Err(Error::Usage(_))));
    }

    #[test]
    fn per_type_auc_matches_construction() {
        let mut set = ScoredSet::default();
        // Normals at scores 0..10.
        for i in 0..10 {
            set.push(i as f64, Label::Normal);
        }
        // Type "clear" fully above; type "murky" right in the middle.
        for i in 0..5 {
            set.push(100.0 + i as f64, Label::Anomaly("clear".into()));
        }
        for i in 0..10 {
            set.push(i as f64, Label::Anomaly("murky".into()));
        }
        let by_type = per_type_auc(&set).unwrap();
        assert_eq!(by_type["clear"], 1.0);
        assert!((by_type["murky"] - 0.5).abs() < 1e-12);

        // With a single type, per-type equals global.
        let single = set.restrict_to_types(&["clear".into()]);
        assert_eq!(per_type_auc(&single).unwrap()["clear"], auc(&single).unwrap());
    }

    #[test]
    fn global_auc_between_type_extremes_for_equal_counts() {
        let mut rng = seeded_rng(13);
        for _ in 0..20 {
            let mut set = ScoredSet::default();
            for _ in 0..30 {
                set.push(rng.random_range(-1.0..1.0), Label::Normal);
            }
            for tag in ["a", "b", "c"] {
                let shift: f64 = rng.random_range(-1.0..2.0);
                for _ in 0..10 {
                    set.push(shift + rng.random_range(-1.0..1.0), Label::Anomaly(tag.into()));
                }
            }
            let global = auc(&set).unwrap();
            let per_type = per_type_auc(&set).unwrap();
            let lo = per_type.values().cloned().fold(f64::INFINITY, f64::min);
            let hi = per_type.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                global >= lo - 1e-12 && global <= hi + 1e-12,
                "global {global} outside [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn five_number_handles_interpolation() {
        let s = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.min, 1.0);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.max, 4.0);
    }

    #[test]
    fn identical_distributions_have_identical_summaries() {
        let values = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let a = FiveNumber::of(&values).unwrap();
        let b = FiveNumber::of(&values).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separation_stats_of_identity_model_report_input_norms() {
        let model = FlowModel::from_layers(2, Vec::new()).unwrap();
        let normals = vec![vec![3.0, 4.0], vec![0.0, 1.0]];
        let anomalies = vec![vec![6.0, 8.0], vec![0.0, 2.0]];
        let stats = separation_stats(&model, &normals, &anomalies).unwrap();
        assert_eq!(stats.normal_latent_norm.max, 5.0);
        assert_eq!(stats.anomaly_latent_norm.max, 10.0);
    }

    #[test]
    fn confidence_intervals_use_t_quantiles() {
        let (mean, half) = mean_and_ci95(&[1.0, 2.0, 3.0]);
        assert!((mean - 2.0).abs() < 1e-12);
        // sd = 1, n = 3: half-width = t(2) * 1/sqrt(3).
        let expected = 4.3027 / 3.0f64.sqrt();
        assert!((half.unwrap() - expected).abs() < 1e-3);

        assert_eq!(mean_and_ci95(&[5.0]).1, None);
        assert!(pooled_ci95(&[1.0], &[1.0, 2.0]).is_none());
        let pooled = pooled_ci95(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!(pooled > 0.0);
    }
}

//! AUC, inexact AUC and ROC curves.
//!
//! `empirical_auc` and `empirical_inexact_auc` count a pair only when the
//! anomaly side is strictly larger, so ties contribute nothing. The ROC
//! trapezoid counts ties as one half; the two numbers are reported
//! separately and agree whenever no anomaly/normal scores tie.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    match scores.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteScore { index }),
        None => Ok(()),
    }
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Number of (anomaly, normal) pairs with anomaly > normal, in
/// `O((m + n) log n)`.
fn strict_pair_count(anomaly_scores: &[f64], normal_scores: &[f64]) -> u64 {
    let normals = sorted(normal_scores);
    anomaly_scores
        .iter()
        .map(|a| normals.partition_point(|n| n < a) as u64)
        .sum()
}

/// Fraction of (anomaly, normal) pairs ranked correctly, ties counted as 0.
pub fn empirical_auc(anomaly_scores: &[f64], normal_scores: &[f64]) -> Result<f64> {
    check_finite(anomaly_scores, "anomaly scores")?;
    check_finite(normal_scores, "normal scores")?;
    let hits = strict_pair_count(anomaly_scores, normal_scores);
    Ok(hits as f64 / (anomaly_scores.len() as f64 * normal_scores.len() as f64))
}

/// Maximum score inside each set, in set order.
pub fn set_max_scores<S: AsRef<[f64]>>(sets: &[S]) -> Result<Vec<f64>> {
    sets.iter()
        .enumerate()
        .map(|(index, set)| {
            set.as_ref()
                .iter()
                .copied()
                .reduce(f64::max)
                .ok_or(Error::EmptySet { index })
        })
        .collect()
}

/// Fraction of (set, normal) pairs where the set's maximum beats the normal.
pub fn empirical_inexact_auc<S: AsRef<[f64]>>(sets: &[S], normal_scores: &[f64]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("inexact anomaly sets"));
    }
    let maxima = set_max_scores(sets)?;
    empirical_auc(&maxima, normal_scores)
}

/// Scores split by (possibly inexact) label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub anomaly_scores: Vec<f64>,
    pub normal_scores: Vec<f64>,
}

impl LabeledScores {
    pub fn from_sets<S: AsRef<[f64]>>(sets: &[S], normal_scores: Vec<f64>) -> Result<Self> {
        Ok(Self {
            anomaly_scores: set_max_scores(sets)?,
            normal_scores,
        })
    }

    pub fn auc(&self) -> Result<f64> {
        empirical_auc(&self.anomaly_scores, &self.normal_scores)
    }

    pub fn roc(&self) -> Result<RocCurve> {
        roc_curve(&self.anomaly_scores, &self.normal_scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Instances scoring at or above this value are flagged. The first
    /// point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Trapezoidal area under `points`.
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

pub fn roc_curve(anomaly_scores: &[f64], normal_scores: &[f64]) -> Result<RocCurve> {
    check_finite(anomaly_scores, "anomaly scores")?;
    check_finite(normal_scores, "normal scores")?;
    let mut tagged: Vec<(f64, bool)> = anomaly_scores
        .iter()
        .map(|&s| (s, true))
        .chain(normal_scores.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let (n_pos, n_neg) = (anomaly_scores.len() as f64, normal_scores.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let threshold = tagged[i].0;
        while i < tagged.len() && tagged[i].0.total_cmp(&threshold) == Ordering::Equal {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(a: &[f64], n: &[f64], tie: f64) -> f64 {
        let mut total = 0.0;
        for x in a {
            for y in n {
                if x > y {
                    total += 1.0;
                } else if x == y {
                    total += tie;
                }
            }
        }
        total / (a.len() * n.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(empirical_auc(&[0.9], &[0.1]).unwrap(), 1.0);
        assert_eq!(empirical_auc(&[0.9, 0.2], &[0.5, 0.1]).unwrap(), 0.75);
        assert_eq!(empirical_auc(&[0.5], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(
            empirical_auc(&[], &[0.1]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            empirical_auc(&[0.1], &[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            empirical_auc(&[0.1, f64::NAN], &[0.2]),
            Err(Error::NonFiniteScore { index: 1 })
        ));
    }

    #[test]
    fn set_maxima() {
        assert_eq!(set_max_scores(&[vec![0.1, 0.9]]).unwrap(), vec![0.9]);
        assert_eq!(
            set_max_scores(&[vec![0.3, 0.4], vec![0.8, 0.2]]).unwrap(),
            vec![0.4, 0.8]
        );
        let singles = vec![vec![0.5], vec![0.1], vec![0.7]];
        assert_eq!(set_max_scores(&singles).unwrap(), vec![0.5, 0.1, 0.7]);
        let with_empty: Vec<Vec<f64>> = vec![vec![0.1], vec![]];
        assert!(matches!(
            set_max_scores(&with_empty),
            Err(Error::EmptySet { index: 1 })
        ));
    }

    #[test]
    fn inexact_auc_examples() {
        let sets = vec![vec![0.3, 0.4], vec![0.8, 0.2]];
        assert_eq!(empirical_inexact_auc(&sets, &[0.5, 0.35]).unwrap(), 0.75);

        let sets = vec![vec![0.1, 0.95], vec![0.0]];
        let normals = [0.2, 0.5, 0.9];
        // First set beats all three normals, second beats none.
        assert_eq!(empirical_inexact_auc(&sets, &normals).unwrap(), 0.5);

        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(empirical_inexact_auc(&empty, &[0.1]).is_err());
    }

    #[test]
    fn singleton_sets_reduce_to_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let a: Vec<f64> = (0..rng.random_range(1..20)).map(|_| rng.random()).collect();
            let n: Vec<f64> = (0..rng.random_range(1..20)).map(|_| rng.random()).collect();
            let sets: Vec<Vec<f64>> = a.iter().map(|&v| vec![v]).collect();
            assert_eq!(
                empirical_inexact_auc(&sets, &n).unwrap().to_bits(),
                empirical_auc(&a, &n).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn roc_examples() {
        let c = roc_curve(&[0.9], &[0.1]).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(c.auc, 1.0);

        let c = roc_curve(&[0.4, 0.4], &[0.4, 0.4, 0.4]).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn roc_area_matches_midrank_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            // Coarse alphabet forces ties.
            let draw = |rng: &mut ChaCha8Rng| rng.random_range(0..4) as f64 / 4.0;
            let a: Vec<f64> = (0..rng.random_range(1..=6))
                .map(|_| draw(&mut rng))
                .collect();
            let n: Vec<f64> = (0..rng.random_range(1..=6))
                .map(|_| draw(&mut rng))
                .collect();
            let c = roc_curve(&a, &n).unwrap();
            assert!((c.auc - brute_auc(&a, &n, 0.5)).abs() < 1e-12);
            assert_eq!(empirical_auc(&a, &n).unwrap(), brute_auc(&a, &n, 0.0));
            let first = c.points.first().unwrap();
            let last = c.points.last().unwrap();
            assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in c.points.windows(2) {
                assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
                assert!(w[0].threshold > w[1].threshold);
            }
        }
    }

    #[test]
    fn roc_csv_layout() {
        let c = roc_curve(&[0.9, 0.3], &[0.1, 0.5]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("threshold,fpr,tpr"));
        assert_eq!(lines.next(), Some("inf,0,0"));
        assert_eq!(text.lines().count(), 1 + c.points.len());
    }

    #[test]
    fn labeled_scores_helpers() {
        let ls = LabeledScores::from_sets(&[vec![0.1, 0.6], vec![0.3]], vec![0.2, 0.5]).unwrap();
        assert_eq!(ls.anomaly_scores, vec![0.6, 0.3]);
        assert_eq!(ls.auc().unwrap(), 0.75);
        assert_eq!(ls.roc().unwrap().auc, 0.75);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    fn sets_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        vec(vec(-5.0f64..5.0, 1..5), 1..6)
    }

    proptest! {
        #[test]
        fn raising_a_score_never_hurts(
            sets in sets_strategy(),
            normals in vec(-5.0f64..5.0, 1..8),
            pick in any::<prop::sample::Index>(),
            bump in 0.0f64..3.0,
        ) {
            let base = empirical_inexact_auc(&sets, &normals).unwrap();
            let mut raised = sets.clone();
            let k = pick.index(raised.len());
            let i = pick.index(raised[k].len());
            raised[k][i] += bump;
            prop_assert!(empirical_inexact_auc(&raised, &normals).unwrap() >= base);
        }

        #[test]
        fn extra_normal_below_or_above(sets in sets_strategy(), normals in vec(-5.0f64..5.0, 1..8)) {
            let base = empirical_inexact_auc(&sets, &normals).unwrap();
            let maxima = set_max_scores(&sets).unwrap();
            let lo = maxima.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let mut below = normals.clone();
            below.push(lo);
            let mut above = normals.clone();
            above.push(hi);
            prop_assert!(empirical_inexact_auc(&sets, &below).unwrap() >= base);
            prop_assert!(empirical_inexact_auc(&sets, &above).unwrap() <= base);
        }

        #[test]
        fn invariant_under_increasing_transform(
            sets in sets_strategy(),
            normals in vec(-5.0f64..5.0, 1..8),
        ) {
            let f = |v: f64| (0.7 * v).exp() + 3.0 * v;
            let tsets: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect();
            let tnorm: Vec<f64> = normals.iter().map(|&v| f(v)).collect();
            prop_assert_eq!(
                empirical_inexact_auc(&sets, &normals).unwrap(),
                empirical_inexact_auc(&tsets, &tnorm).unwrap()
            );
            let flat: Vec<f64> = sets.concat();
            let tflat: Vec<f64> = tsets.concat();
            prop_assert_eq!(
                empirical_auc(&flat, &normals).unwrap(),
                empirical_auc(&tflat, &tnorm).unwrap()
            );
        }

        #[test]
        fn roc_area_in_unit_interval(a in vec(-1.0f64..1.0, 1..10), n in vec(-1.0f64..1.0, 1..10)) {
            let c = roc_curve(&a, &n).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.auc));
        }
    }
}

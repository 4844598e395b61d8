//! Calibration, multicalibration, and multiaccuracy violations of a
//! prediction vector over a group collection.
//!
//! Violations are observable: the binary outcome stands in for the true
//! outcome probability. All sums run in f64.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::groups::{members, GroupCollection};
use crate::textio::{fmt_g17, read_to_string, write_string};
use std::path::Path;

/// Per-row outcome probabilities, dataset-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    probs: Vec<f64>,
}

impl PredictionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Usage(format!(
                    "prediction {p} at row {i} lies outside [0, 1]"
                )));
            }
        }
        Ok(PredictionVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// One 17-significant-digit probability per line, row-aligned with
    /// the data file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for &p in &self.probs {
            out.push_str(&fmt_g17(p));
            out.push('\n');
        }
        write_string(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut probs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p: f64 = line.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad probability `{line}`"),
            })?;
            probs.push(p);
        }
        PredictionVector::new(probs)
    }
}

/// The unique v with v/d <= p < (v+1)/d; p = 1 lands in v = d.
#[inline]
pub fn interval_of(p: f64, d: usize) -> usize {
    let df = d as f64;
    let mut v = (p * df) as usize;
    if v > d {
        v = d;
    }
    // the float product can land one interval off; settle against the
    // defining inequality itself
    while v > 0 && p < v as f64 / df {
        v -= 1;
    }
    while v < d && p >= (v + 1) as f64 / df {
        v += 1;
    }
    v
}

/// Splits `group_rows` into the d+1 prediction intervals.
pub fn interval_membership(probs: &[f64], group_rows: &[usize], d: usize) -> Vec<Vec<usize>> {
    assert!(d >= 1, "discretization parameter must be positive");
    let mut buckets = vec![Vec::new(); d + 1];
    for &row in group_rows {
        buckets[interval_of(probs[row], d)].push(row);
    }
    buckets
}

/// Per-interval calibration violations of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    /// (member count, signed violation) per interval v in 0..=d.
    pub intervals: Vec<(usize, f64)>,
    /// Interval selected by the max-vs-min rule below.
    pub argmax_interval: usize,
    pub max_abs_violation: f64,
}

/// Signed violation per interval is (sum of outcomes - sum of
/// predictions) / count, zero for empty intervals. The reported interval
/// is the most positive entry when its magnitude strictly exceeds the
/// most negative entry's, otherwise the most negative one.
pub fn calibration_report(
    probs: &[f64],
    outcomes: &[u8],
    group_rows: &[usize],
    d: usize,
) -> IntervalReport {
    let buckets = interval_membership(probs, group_rows, d);
    let mut intervals = Vec::with_capacity(d + 1);
    for bucket in &buckets {
        if bucket.is_empty() {
            intervals.push((0, 0.0));
            continue;
        }
        let mut y_sum = 0.0;
        let mut p_sum = 0.0;
        for &row in bucket {
            y_sum += outcomes[row] as f64;
            p_sum += probs[row];
        }
        intervals.push((bucket.len(), (y_sum - p_sum) / bucket.len() as f64));
    }

    let argmax_of = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (v, &(_, viol)) in intervals.iter().enumerate() {
            if better(viol, intervals[best].1) {
                best = v;
            }
        }
        best
    };
    let v_max = argmax_of(|a, b| a > b);
    let v_min = argmax_of(|a, b| a < b);
    let argmax_interval = if intervals[v_max].1.abs() > intervals[v_min].1.abs() {
        v_max
    } else {
        v_min
    };
    IntervalReport {
        max_abs_violation: intervals[argmax_interval].1.abs(),
        argmax_interval,
        intervals,
    }
}

/// Mean of (outcome - prediction) over the group; `None` when the group
/// is empty (callers skip empty groups).
pub fn ma_violation(probs: &[f64], outcomes: &[u8], group_rows: &[usize]) -> Option<f64> {
    if group_rows.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &row in group_rows {
        sum += outcomes[row] as f64 - probs[row];
    }
    Some(sum / group_rows.len() as f64)
}

/// Worst-group audit over a collection.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSummary {
    /// Worst violation over all groups.
    pub alpha: f64,
    /// (label, violation) in collection order; empty groups report 0.
    pub per_group: Vec<(String, f64)>,
    /// Labels of groups with no members in the audited index set.
    pub empty_groups: Vec<String>,
}

/// Worst-group MC violation: max over groups of the per-group interval
/// report maximum, restricted to `idx`.
pub fn mc_alpha(
    probs: &[f64],
    outcomes: &[u8],
    ds: &Dataset,
    idx: &[usize],
    collection: &GroupCollection,
    d: usize,
) -> Result<AuditSummary> {
    audit_collection(ds, idx, collection, |rows| {
        if rows.is_empty() {
            None
        } else {
            Some(calibration_report(probs, outcomes, rows, d).max_abs_violation)
        }
    })
}

/// Worst-group MA violation, analogous to [`mc_alpha`].
pub fn ma_alpha(
    probs: &[f64],
    outcomes: &[u8],
    ds: &Dataset,
    idx: &[usize],
    collection: &GroupCollection,
) -> Result<AuditSummary> {
    audit_collection(ds, idx, collection, |rows| {
        ma_violation(probs, outcomes, rows).map(f64::abs)
    })
}

fn audit_collection(
    ds: &Dataset,
    idx: &[usize],
    collection: &GroupCollection,
    violation: impl Fn(&[usize]) -> Option<f64>,
) -> Result<AuditSummary> {
    let mut per_group = Vec::with_capacity(collection.len());
    let mut empty_groups = Vec::new();
    let mut alpha = 0.0f64;
    for g in &collection.groups {
        let rows = members(g, ds, idx)?;
        let v = match violation(&rows) {
            Some(v) => v,
            None => {
                empty_groups.push(g.label.clone());
                0.0
            }
        };
        alpha = alpha.max(v);
        per_group.push((g.label.clone(), v));
    }
    Ok(AuditSummary { alpha, per_group, empty_groups })
}

/// Full per-(group, interval) audit table as aligned text.
pub fn write_audit_report(
    path: &Path,
    probs: &[f64],
    outcomes: &[u8],
    ds: &Dataset,
    idx: &[usize],
    collection: &GroupCollection,
    d: usize,
) -> Result<AuditSummary> {
    let mut out = String::new();
    out.push_str(&format!("# audit d={d} rows={}\n", idx.len()));
    out.push_str("# group | interval | count | violation\n");
    let mut alpha = 0.0f64;
    let mut per_group = Vec::new();
    let mut empty_groups = Vec::new();
    for g in &collection.groups {
        let rows = members(g, ds, idx)?;
        if rows.is_empty() {
            out.push_str(&format!("{} | - | 0 | 0 (empty group)\n", g.label));
            empty_groups.push(g.label.clone());
            per_group.push((g.label.clone(), 0.0));
            continue;
        }
        let report = calibration_report(probs, outcomes, &rows, d);
        for (v, &(count, viol)) in report.intervals.iter().enumerate() {
            out.push_str(&format!("{} | {v} | {count} | {}\n", g.label, fmt_g17(viol)));
        }
        out.push_str(&format!(
            "{} | worst={} | {} | {}\n",
            g.label,
            report.argmax_interval,
            rows.len(),
            fmt_g17(report.max_abs_violation)
        ));
        alpha = alpha.max(report.max_abs_violation);
        per_group.push((g.label.clone(), report.max_abs_violation));
    }
    out.push_str(&format!("worst_group_alpha {}\n", fmt_g17(alpha)));
    write_string(path, &out)?;
    Ok(AuditSummary { alpha, per_group, empty_groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnKind, FeatureSchema};
    use crate::groups::{GroupCollection, GroupSpec, Setting};
    use rand::Rng;

    #[test]
    fn interval_of_matches_worked_examples() {
        assert_eq!(interval_of(0.63, 10), 6);
        assert_eq!(interval_of(1.0, 10), 10);
        assert_eq!(interval_of(0.0, 10), 0);
        assert_eq!(interval_of(0.7, 10), 7);
        assert_eq!(interval_of(0.9, 1), 0);
        assert_eq!(interval_of(1.0, 1), 1);
    }

    #[test]
    fn interval_membership_partitions_for_searched_d() {
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::DataGen);
        let probs: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let rows: Vec<usize> = (0..500).collect();
        for d in [1usize, 10, 55, 100] {
            let buckets = interval_membership(&probs, &rows, d);
            assert_eq!(buckets.len(), d + 1);
            let mut all: Vec<usize> = buckets.into_iter().flatten().collect();
            all.sort_unstable();
            assert_eq!(all, rows);
            // every bucketed row satisfies the defining inequality
            for &row in &rows {
                let v = interval_of(probs[row], d);
                assert!(v as f64 / d as f64 <= probs[row]);
                if v < d {
                    assert!(probs[row] < (v + 1) as f64 / d as f64);
                }
            }
        }
    }

    #[test]
    fn calibration_hand_example() {
        let report = calibration_report(&[0.2, 0.2], &[1, 0], &[0, 1], 10);
        assert_eq!(report.intervals[2], (2, (1.0 - 0.4) / 2.0));
        assert_eq!(report.argmax_interval, 2);
        assert!((report.max_abs_violation - 0.3).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor_has_zero_violation() {
        let probs = [0.0, 1.0, 1.0, 0.0];
        let outcomes = [0, 1, 1, 0];
        let report = calibration_report(&probs, &outcomes, &[0, 1, 2, 3], 10);
        assert_eq!(report.max_abs_violation, 0.0);
        assert_eq!(ma_violation(&probs, &outcomes, &[0, 1, 2, 3]), Some(0.0));
    }

    #[test]
    fn constant_prediction_closed_form_matches_row_scan() {
        // 40 rows at 0.63, q of them positive
        let m = 40;
        let positives = 13;
        let probs = vec![0.63; m];
        let mut outcomes = vec![0u8; m];
        for y in outcomes.iter_mut().take(positives) {
            *y = 1;
        }
        let rows: Vec<usize> = (0..m).collect();
        let report = calibration_report(&probs, &outcomes, &rows, 10);
        let q = positives as f64 / m as f64;
        assert!((report.intervals[6].1 - (q - 0.63)).abs() < 1e-15);
        // independent row scan
        let scan: f64 = rows.iter().map(|&r| outcomes[r] as f64 - probs[r]).sum::<f64>() / m as f64;
        assert!((report.intervals[6].1 - scan).abs() < 1e-15);
    }

    #[test]
    fn tie_between_extremes_selects_the_negative_interval() {
        // v=0 violation -0.5, v=10 violation +0.5: equal magnitude
        let probs = [0.0, 0.0, 1.0, 1.0];
        let outcomes = [1, 0, 1, 0];
        let report = calibration_report(&probs, &outcomes, &[0, 1, 2, 3], 10);
        assert_eq!(report.intervals[0].1, 0.5);
        assert_eq!(report.intervals[10].1, -0.5);
        assert_eq!(report.argmax_interval, 10);
    }

    #[test]
    fn ma_violation_hand_examples() {
        assert_eq!(ma_violation(&[0.5, 0.5], &[1, 0], &[0, 1]), Some(0.0));
        assert_eq!(ma_violation(&[0.1, 0.9], &[1, 1], &[0, 1]), Some(0.5));
        assert_eq!(ma_violation(&[], &[], &[]), None);
    }

    #[test]
    fn empty_group_report_is_all_zero() {
        let report = calibration_report(&[0.5], &[1], &[], 10);
        assert_eq!(report.max_abs_violation, 0.0);
        assert!(report.intervals.iter().all(|&(c, v)| c == 0 && v == 0.0));
    }

    fn tiny_ds() -> Dataset {
        let schema = FeatureSchema::new(vec![("g".into(), ColumnKind::Categorical(2))]).unwrap();
        Dataset::new(schema, vec![0.0, 0.0, 1.0, 1.0], vec![1, 1, 0, 0]).unwrap()
    }

    #[test]
    fn mc_alpha_takes_the_worse_group() {
        let ds = tiny_ds();
        // group 0: rows {0,1} p=0.6 y=1 -> violation 0.4
        // group 1: rows {2,3} p=0.1 y=0 -> violation -0.1
        let probs = [0.6, 0.6, 0.1, 0.1];
        let collection = GroupCollection {
            groups: vec![
                GroupSpec::new("g0", vec![("g".into(), 0.0)]).unwrap(),
                GroupSpec::new("g1", vec![("g".into(), 1.0)]).unwrap(),
            ],
            setting: Setting::All,
        };
        let summary =
            mc_alpha(&probs, &ds.outcomes, &ds, &[0, 1, 2, 3], &collection, 10).unwrap();
        assert!((summary.alpha - 0.4).abs() < 1e-15);
        assert!((summary.per_group[1].1 - 0.1).abs() < 1e-15);
        // singleton collection reduces to that group's report
        let single = GroupCollection {
            groups: vec![GroupSpec::new("g0", vec![("g".into(), 0.0)]).unwrap()],
            setting: Setting::Dis,
        };
        let s2 = mc_alpha(&probs, &ds.outcomes, &ds, &[0, 1, 2, 3], &single, 10).unwrap();
        assert!((s2.alpha - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_group_is_flagged_and_contributes_zero() {
        let ds = tiny_ds();
        let collection = GroupCollection {
            groups: vec![GroupSpec::new("g1", vec![("g".into(), 1.0)]).unwrap()],
            setting: Setting::Dis,
        };
        // idx restricted to rows of group 0 only
        let s = mc_alpha(&[0.6, 0.6, 0.1, 0.1], &ds.outcomes, &ds, &[0, 1], &collection, 10)
            .unwrap();
        assert_eq!(s.alpha, 0.0);
        assert_eq!(s.empty_groups, vec!["g1".to_string()]);
    }

    #[test]
    fn ma_alpha_never_exceeds_mc_alpha() {
        let ds = tiny_ds();
        let collection = GroupCollection {
            groups: vec![
                GroupSpec::new("g0", vec![("g".into(), 0.0)]).unwrap(),
                GroupSpec::new("g1", vec![("g".into(), 1.0)]).unwrap(),
            ],
            setting: Setting::All,
        };
        let mut rng = crate::rng::stream_rng(2, crate::rng::Stream::DataGen);
        for _ in 0..200 {
            let probs: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let ma = ma_alpha(&probs, &ds.outcomes, &ds, &[0, 1, 2, 3], &collection).unwrap();
            let mc = mc_alpha(&probs, &ds.outcomes, &ds, &[0, 1, 2, 3], &collection, 10).unwrap();
            assert!(ma.alpha <= mc.alpha + 1e-15);
        }
    }

    #[test]
    fn report_invariant_to_row_order() {
        let probs = [0.1, 0.4, 0.8, 0.3];
        let outcomes = [0, 1, 1, 0];
        let a = calibration_report(&probs, &outcomes, &[0, 1, 2, 3], 10);
        let b = calibration_report(&probs, &outcomes, &[3, 1, 0, 2], 10);
        assert_eq!(a.intervals, b.intervals);
        assert_eq!(a.argmax_interval, b.argmax_interval);
    }
}

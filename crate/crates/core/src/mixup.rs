//! Mini-batch selection under the five strategies, interpolation
//! coefficients, and synthetic-point construction.

use crate::audit::interval_of;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{sample_with_replacement, sample_without_replacement};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// How one mini-batch is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    /// One draw of b rows, split in half and paired at random.
    Uniform,
    /// One sub-batch from the focus group, one from its complement.
    ByGroup,
    /// Group sub-batches restricted to a shared true label.
    ByGroupAndLabel,
    /// Group sub-batches restricted to a shared prediction interval.
    ByGroupAndInterval,
}

/// Batch-size and replacement configuration shared across a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStrategy {
    pub kind: BatchKind,
    /// Full batch size b; balanced kinds use b/2 per side.
    pub batch_size: usize,
    /// When set, a focus group smaller than this many rows is sampled
    /// with replacement up to the side budget (the DP/MA-metric policy);
    /// `None` always samples min(pool, budget) without replacement.
    pub replacement_threshold: Option<usize>,
}

impl BatchStrategy {
    pub fn new(kind: BatchKind, batch_size: usize, replacement_threshold: Option<usize>) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Usage("batch size must be positive".into()));
        }
        if kind != BatchKind::Uniform && batch_size % 2 != 0 {
            return Err(Error::Usage("balanced strategies need an even batch size".into()));
        }
        Ok(BatchStrategy { kind, batch_size, replacement_threshold })
    }
}

/// Focus of one balanced iteration: the group's rows and its complement
/// within the training split, optionally restricted by label or interval.
#[derive(Debug, Clone, Copy)]
pub struct BatchFocus<'a> {
    pub group_rows: &'a [usize],
    pub complement_rows: &'a [usize],
    pub label: Option<u8>,
    pub interval: Option<usize>,
}

/// Draws t ~ Beta(eps, eps); eps = 1 is Uniform(0, 1).
pub fn sample_t(eps: f64, rng: &mut impl Rng) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Usage("mixup epsilon must be positive".into()));
    }
    let beta = Beta::new(eps, eps).map_err(|e| Error::Usage(format!("bad beta parameter: {e}")))?;
    Ok(beta.sample(rng))
}

/// Rowwise convex combination of two equally shaped batches:
/// t of the way toward the left batch.
pub fn interpolate(
    xa: &Matrix,
    ya: &[f64],
    xb: &Matrix,
    yb: &[f64],
    t: f64,
) -> Result<(Matrix, Vec<f64>)> {
    if xa.rows != xb.rows || xa.cols != xb.cols || ya.len() != xa.rows || yb.len() != xb.rows {
        return Err(Error::Shape {
            expected: format!("{}x{} with {} labels", xa.rows, xa.cols, xa.rows),
            found: format!("{}x{} with {} labels", xb.rows, xb.cols, yb.len()),
        });
    }
    let mut x = Matrix::zeros(xa.rows, xa.cols);
    for i in 0..x.data.len() {
        x.data[i] = t * xa.data[i] + (1.0 - t) * xb.data[i];
    }
    let y = ya.iter().zip(yb.iter()).map(|(&a, &b)| t * a + (1.0 - t) * b).collect();
    Ok((x, y))
}

fn filter_rows(
    rows: &[usize],
    label: Option<u8>,
    interval: Option<usize>,
    outcomes: &[u8],
    preds: Option<(&[f64], usize)>,
) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&r| label.is_none_or(|y| outcomes[r] == y))
        .filter(|&r| match (interval, preds) {
            (Some(v), Some((p, d))) => interval_of(p[r], d) == v,
            (None, _) => true,
            (Some(_), None) => unreachable!("interval focus requires current predictions"),
        })
        .collect()
}

fn sample_side(
    pool: &[usize],
    budget: usize,
    replacement_threshold: Option<usize>,
    rng: &mut impl Rng,
) -> Vec<usize> {
    match replacement_threshold {
        Some(thr) if pool.len() < thr && pool.len() < budget => {
            sample_with_replacement(pool, budget, rng)
        }
        _ => {
            let mut scratch = pool.to_vec();
            let count = budget.min(scratch.len());
            sample_without_replacement(&mut scratch, count, rng)
        }
    }
}

/// Selects one batch as two equal-length index lists (left drawn from
/// the focus group, right from its complement; for the uniform kind, one
/// draw split in half). Returns `None` as the skip signal when a side
/// has no candidates.
pub fn select_batch(
    strategy: &BatchStrategy,
    focus: Option<&BatchFocus<'_>>,
    outcomes: &[u8],
    current_preds: Option<(&[f64], usize)>,
    train_idx: &[usize],
    rng: &mut impl Rng,
) -> Option<(Vec<usize>, Vec<usize>)> {
    match strategy.kind {
        BatchKind::Uniform => {
            let count = strategy.batch_size.min(train_idx.len());
            if count < 2 {
                return None;
            }
            let mut scratch = train_idx.to_vec();
            let drawn = sample_without_replacement(&mut scratch, count, rng);
            let half = count / 2;
            Some((drawn[..half].to_vec(), drawn[half..2 * half].to_vec()))
        }
        BatchKind::ByGroup | BatchKind::ByGroupAndLabel | BatchKind::ByGroupAndInterval => {
            let focus = focus.expect("balanced kinds require a focus");
            let left_pool =
                filter_rows(focus.group_rows, focus.label, focus.interval, outcomes, current_preds);
            let right_pool = filter_rows(
                focus.complement_rows,
                focus.label,
                focus.interval,
                outcomes,
                current_preds,
            );
            if left_pool.is_empty() || right_pool.is_empty() {
                return None;
            }
            let budget = strategy.batch_size / 2;
            let mut left = sample_side(&left_pool, budget, strategy.replacement_threshold, rng);
            // the complement is the majority side; always without replacement
            let mut right = sample_side(&right_pool, budget, None, rng);
            // subsample the larger sub-batch down to the smaller
            let size = left.len().min(right.len());
            left.truncate(size);
            right.truncate(size);
            Some((left, right))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn t_is_deterministic_given_rng_state() {
        let mut a = stream_rng(5, Stream::MixCoeff);
        let mut b = stream_rng(5, Stream::MixCoeff);
        for _ in 0..10 {
            assert_eq!(sample_t(1.0, &mut a).unwrap(), sample_t(1.0, &mut b).unwrap());
        }
    }

    #[test]
    fn t_rejects_nonpositive_eps() {
        let mut rng = stream_rng(0, Stream::MixCoeff);
        assert!(sample_t(0.0, &mut rng).is_err());
        assert!(sample_t(-1.0, &mut rng).is_err());
    }

    #[test]
    fn t_with_unit_eps_has_uniform_mean() {
        let mut rng = stream_rng(1, Stream::MixCoeff);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| sample_t(1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() <= 0.01, "mean {mean}");
    }

    #[test]
    fn t_with_unit_eps_passes_ks_against_uniform() {
        let mut rng = stream_rng(2, Stream::MixCoeff);
        let n = 100_000usize;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_t(1.0, &mut rng).unwrap()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d_stat = 0.0f64;
        for (i, &x) in draws.iter().enumerate() {
            d_stat = d_stat.max((x - i as f64 / n as f64).abs());
            d_stat = d_stat.max(((i + 1) as f64 / n as f64 - x).abs());
        }
        // level 0.01 critical value for large n
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d_stat <= critical, "KS statistic {d_stat} exceeds {critical}");
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let xa = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let xb = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let ya = [1.0, 1.0];
        let yb = [0.0, 0.0];
        let (x1, y1) = interpolate(&xa, &ya, &xb, &yb, 1.0).unwrap();
        assert_eq!(x1, xa);
        assert_eq!(y1, ya.to_vec());
        let (x0, y0) = interpolate(&xa, &ya, &xb, &yb, 0.0).unwrap();
        assert_eq!(x0, xb);
        assert_eq!(y0, yb.to_vec());
        let (_, ym) = interpolate(&xa, &ya, &xb, &yb, 0.5).unwrap();
        assert_eq!(ym, vec![0.5, 0.5]);
    }

    #[test]
    fn interpolation_preserves_one_hot_block_sums() {
        // two 3-wide one-hot blocks per row
        let xa = Matrix::from_vec(1, 6, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let xb = Matrix::from_vec(1, 6, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let (x, _) = interpolate(&xa, &[1.0], &xb, &[0.0], 0.3).unwrap();
        let block1: f64 = x.data[..3].iter().sum();
        let block2: f64 = x.data[3..].iter().sum();
        assert!((block1 - 1.0).abs() < 1e-15);
        assert!((block2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_batch_splits_in_half_disjointly() {
        let strategy = BatchStrategy::new(BatchKind::Uniform, 500, None).unwrap();
        let train: Vec<usize> = (0..5000).collect();
        let outcomes = vec![0u8; 5000];
        let mut rng = stream_rng(3, Stream::BatchSelect);
        let (left, right) =
            select_batch(&strategy, None, &outcomes, None, &train, &mut rng).unwrap();
        assert_eq!(left.len(), 250);
        assert_eq!(right.len(), 250);
        let mut all: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 500);
    }

    #[test]
    fn small_group_without_replacement_caps_both_sides() {
        let strategy = BatchStrategy::new(BatchKind::ByGroup, 500, None).unwrap();
        let group: Vec<usize> = (0..30).collect();
        let complement: Vec<usize> = (30..4000).collect();
        let outcomes = vec![0u8; 4000];
        let focus = BatchFocus {
            group_rows: &group,
            complement_rows: &complement,
            label: None,
            interval: None,
        };
        let mut rng = stream_rng(4, Stream::BatchSelect);
        let (left, right) =
            select_batch(&strategy, Some(&focus), &outcomes, None, &[], &mut rng).unwrap();
        assert_eq!(left.len(), 30);
        assert_eq!(right.len(), 30);
        let mut l = left.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 30, "left side must not repeat rows");
    }

    #[test]
    fn replacement_policy_fills_the_side_budget() {
        let strategy = BatchStrategy::new(BatchKind::ByGroup, 500, Some(100)).unwrap();
        let group: Vec<usize> = (0..10).collect();
        let complement: Vec<usize> = (10..4000).collect();
        let outcomes = vec![0u8; 4000];
        let focus = BatchFocus {
            group_rows: &group,
            complement_rows: &complement,
            label: None,
            interval: None,
        };
        let mut rng = stream_rng(5, Stream::BatchSelect);
        let (left, right) =
            select_batch(&strategy, Some(&focus), &outcomes, None, &[], &mut rng).unwrap();
        assert_eq!(left.len(), 250);
        assert_eq!(right.len(), 250);
        assert!(left.iter().all(|r| *r < 10));
    }

    #[test]
    fn empty_interval_side_signals_skip() {
        let strategy = BatchStrategy::new(BatchKind::ByGroupAndInterval, 500, None).unwrap();
        let group: Vec<usize> = vec![0, 1];
        let complement: Vec<usize> = vec![2, 3];
        let outcomes = vec![0u8; 4];
        // complement predictions all sit in interval 0; focus interval 9 is empty there
        let preds = vec![0.95, 0.95, 0.01, 0.01];
        let focus = BatchFocus {
            group_rows: &group,
            complement_rows: &complement,
            label: None,
            interval: Some(9),
        };
        let mut rng = stream_rng(6, Stream::BatchSelect);
        let picked = select_batch(
            &strategy,
            Some(&focus),
            &outcomes,
            Some((&preds, 10)),
            &[],
            &mut rng,
        );
        assert!(picked.is_none());
    }

    #[test]
    fn label_focus_filters_both_sides() {
        let strategy = BatchStrategy::new(BatchKind::ByGroupAndLabel, 4, None).unwrap();
        let group: Vec<usize> = vec![0, 1, 2];
        let complement: Vec<usize> = vec![3, 4, 5];
        let outcomes = vec![1, 0, 1, 0, 1, 0];
        let focus = BatchFocus {
            group_rows: &group,
            complement_rows: &complement,
            label: Some(1),
            interval: None,
        };
        let mut rng = stream_rng(7, Stream::BatchSelect);
        let (left, right) =
            select_batch(&strategy, Some(&focus), &outcomes, None, &[], &mut rng).unwrap();
        assert!(left.iter().all(|&r| outcomes[r] == 1 && group.contains(&r)));
        assert!(right.iter().all(|&r| outcomes[r] == 1 && complement.contains(&r)));
        assert_eq!(left.len(), right.len());
    }

    #[test]
    fn same_rng_state_reproduces_batches() {
        let strategy = BatchStrategy::new(BatchKind::Uniform, 64, None).unwrap();
        let train: Vec<usize> = (0..1000).collect();
        let outcomes = vec![0u8; 1000];
        let a = select_batch(
            &strategy,
            None,
            &outcomes,
            None,
            &train,
            &mut stream_rng(8, Stream::BatchSelect),
        );
        let b = select_batch(
            &strategy,
            None,
            &outcomes,
            None,
            &train,
            &mut stream_rng(8, Stream::BatchSelect),
        );
        assert_eq!(a, b);
    }
}

//! The four Fair-Mixup penalties on a mixed batch, and multi-group
//! top-k aggregation.
//!
//! Every penalty reduces to sums of |bucket mean| where a bucket term is
//! the input-directional derivative of the model at the mixed point
//! (minus the pair's label difference for the error-based penalties).
//! Gradients with respect to the weights therefore flow through
//! [`crate::nn::penalty_backward`] with per-row coefficients
//! sign(bucket mean) / bucket size; label differences are constants.

use crate::dataset::EncodedMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{input_jvp, penalty_backward, Gradients, MlpModel};

/// Which pairwise metric the penalty realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Dp,
    Eo,
    Ma,
    Mc,
}

/// One bucket of mixed pairs: interpolated inputs, pair directions
/// (group member minus complement member), and label differences.
#[derive(Debug, Clone)]
pub struct PairBucket {
    pub x_mixed: Matrix,
    pub direction: Matrix,
    pub label_delta: Vec<f64>,
}

/// Builds a bucket from index pairs: row i interpolates left[i] (group
/// side) toward right[i] (complement side) at coefficient t.
pub fn make_bucket(
    enc: &EncodedMatrix,
    left: &[usize],
    right: &[usize],
    outcomes: &[u8],
    t: f64,
) -> PairBucket {
    assert_eq!(left.len(), right.len(), "pairs need equal sides");
    let xa = enc.gather(left);
    let xb = enc.gather(right);
    let mut x_mixed = Matrix::zeros(xa.rows, xa.cols);
    let mut direction = Matrix::zeros(xa.rows, xa.cols);
    for i in 0..xa.data.len() {
        x_mixed.data[i] = t * xa.data[i] + (1.0 - t) * xb.data[i];
        direction.data[i] = xa.data[i] - xb.data[i];
    }
    let label_delta = left
        .iter()
        .zip(right.iter())
        .map(|(&l, &r)| outcomes[l] as f64 - outcomes[r] as f64)
        .collect();
    PairBucket { x_mixed, direction, label_delta }
}

/// One group's penalty value plus everything needed to differentiate it.
#[derive(Debug, Clone)]
pub struct GroupPenalty {
    pub label: String,
    pub value: f64,
    x_mixed: Matrix,
    direction: Matrix,
    coeffs: Vec<f64>,
}

impl GroupPenalty {
    /// Exact weight gradients of this group's penalty value.
    pub fn backward(&self, m: &MlpModel) -> Result<Gradients> {
        penalty_backward(m, &self.x_mixed, &self.direction, &self.coeffs)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shared core: value = sum over nonempty buckets of |mean bucket term|,
/// term = directional derivative (minus the label difference when
/// `use_label_term`). `None` when every bucket is empty (skip signal).
fn penalty_from_buckets(
    m: &MlpModel,
    label: &str,
    buckets: &[PairBucket],
    use_label_term: bool,
) -> Result<Option<GroupPenalty>> {
    let width = m.input_width();
    let mut value = 0.0;
    let mut x_all = Vec::new();
    let mut d_all = Vec::new();
    let mut coeffs = Vec::new();
    let mut rows_total = 0;
    for bucket in buckets {
        let n = bucket.x_mixed.rows;
        if n == 0 {
            continue;
        }
        let jvp = input_jvp(m, &bucket.x_mixed, &bucket.direction)?;
        let mut mean = 0.0;
        for i in 0..n {
            let term = if use_label_term { jvp[i] - bucket.label_delta[i] } else { jvp[i] };
            mean += term;
        }
        mean /= n as f64;
        value += mean.abs();
        let c = sign(mean) / n as f64;
        x_all.extend_from_slice(&bucket.x_mixed.data);
        d_all.extend_from_slice(&bucket.direction.data);
        coeffs.extend(std::iter::repeat_n(c, n));
        rows_total += n;
    }
    if rows_total == 0 {
        return Ok(None);
    }
    Ok(Some(GroupPenalty {
        label: label.to_string(),
        value,
        x_mixed: Matrix::from_vec(rows_total, width, x_all),
        direction: Matrix::from_vec(rows_total, width, d_all),
        coeffs,
    }))
}

/// |mean over pairs of the directional derivative at the mixed points|.
pub fn penalty_dp(m: &MlpModel, label: &str, pairs: &PairBucket) -> Result<Option<GroupPenalty>> {
    penalty_from_buckets(m, label, std::slice::from_ref(pairs), false)
}

/// Sum over labels y of |mean over label-y pairs|; a missing label
/// contributes zero.
pub fn penalty_eo(
    m: &MlpModel,
    label: &str,
    pairs_by_label: &[PairBucket],
) -> Result<Option<GroupPenalty>> {
    penalty_from_buckets(m, label, pairs_by_label, false)
}

/// |mean over pairs of (directional derivative - label difference)|.
pub fn penalty_ma(m: &MlpModel, label: &str, pairs: &PairBucket) -> Result<Option<GroupPenalty>> {
    penalty_from_buckets(m, label, std::slice::from_ref(pairs), true)
}

/// Sum over prediction intervals of the per-interval MA-style penalty;
/// empty intervals contribute zero.
pub fn penalty_mc(
    m: &MlpModel,
    label: &str,
    pairs_by_interval: &[PairBucket],
) -> Result<Option<GroupPenalty>> {
    penalty_from_buckets(m, label, pairs_by_interval, true)
}

/// Mean of the min(k, count) largest penalty values; ties keep the
/// earlier group. Returns the contributing indices so gradients only
/// flow through active groups.
pub fn aggregate_topk(penalties: &[GroupPenalty], k: usize) -> Result<(f64, Vec<usize>)> {
    if k == 0 {
        return Err(Error::Usage("top-k aggregation needs k >= 1".into()));
    }
    if penalties.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let mut order: Vec<usize> = (0..penalties.len()).collect();
    // stable sort: equal values keep collection order
    order.sort_by(|&a, &b| penalties[b].value.partial_cmp(&penalties[a].value).unwrap());
    let take = k.min(order.len());
    let active: Vec<usize> = order[..take].to_vec();
    let value = active.iter().map(|&i| penalties[i].value).sum::<f64>() / take as f64;
    Ok((value, active))
}

//! MC and MA enforcement on a post-processing split, recording an ordered
//! rule circuit, plus circuit replay on unseen predictions.
//!
//! Enforcement loops over uniformly drawn groups, nudging the offending
//! interval (MC) or the whole group (MA) by its signed violation until
//! |collection| consecutive draws pass. Replay applies the recorded rules
//! in order against the evolving predictions; replaying the circuit on
//! the enforcement-source predictions reproduces the enforcer's output
//! bit for bit.

use crate::audit::{calibration_report, interval_of, ma_violation, PredictionVector};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::groups::{members, GroupCollection, GroupSpec};
use crate::rng::{stream_rng, Stream};
use crate::textio::{fmt_g17, read_to_string, write_string};
use rand::Rng;
use std::path::Path;

/// One learned correction: add `delta` to members of `group` (whose
/// current prediction lies in `interval`, for MC rules).
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRule {
    pub group: GroupSpec,
    /// Present for MC rules, absent for MA rules.
    pub interval: Option<usize>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircuitKind {
    Mc { d: usize },
    Ma,
}

/// Ordered rule list produced by one enforcement run.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleCircuit {
    pub rules: Vec<UpdateRule>,
    pub kind: CircuitKind,
    pub alpha: f64,
}

/// Enforcement result: corrected predictions, the circuit, and how many
/// group draws the loop consumed.
#[derive(Debug, Clone)]
pub struct EnforceOutcome {
    pub predictions: PredictionVector,
    pub circuit: RuleCircuit,
    pub draws: u64,
}

pub const DEFAULT_ITERATION_CAP: u64 = 1_000_000;

#[inline]
fn clamp01(x: f64) -> f64 {
    x.min(1.0).max(0.0)
}

/// Enforces per-interval calibration of every group down to `alpha` on
/// `postproc_idx`. Predictions outside `postproc_idx` pass through.
#[allow(clippy::too_many_arguments)]
pub fn enforce_mc(
    ds: &Dataset,
    postproc_idx: &[usize],
    preds: &PredictionVector,
    collection: &GroupCollection,
    outcomes: &[u8],
    alpha: f64,
    d: usize,
    seed: u64,
    cap: u64,
) -> Result<EnforceOutcome> {
    enforce(
        ds,
        postproc_idx,
        preds,
        collection,
        outcomes,
        alpha,
        seed,
        cap,
        CircuitKind::Mc { d },
        |p, rows| {
            let report = calibration_report(p, outcomes, rows, d);
            if report.max_abs_violation > alpha {
                Some((Some(report.argmax_interval), report.intervals[report.argmax_interval].1))
            } else {
                None
            }
        },
    )
}

/// Enforces the group-mean prediction error of every group down to
/// `alpha` on `postproc_idx`.
pub fn enforce_ma(
    ds: &Dataset,
    postproc_idx: &[usize],
    preds: &PredictionVector,
    collection: &GroupCollection,
    outcomes: &[u8],
    alpha: f64,
    seed: u64,
    cap: u64,
) -> Result<EnforceOutcome> {
    enforce(
        ds,
        postproc_idx,
        preds,
        collection,
        outcomes,
        alpha,
        seed,
        cap,
        CircuitKind::Ma,
        |p, rows| {
            let violation = ma_violation(p, outcomes, rows).expect("rows nonempty");
            if violation.abs() > alpha {
                Some((None, violation))
            } else {
                None
            }
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn enforce(
    ds: &Dataset,
    postproc_idx: &[usize],
    preds: &PredictionVector,
    collection: &GroupCollection,
    outcomes: &[u8],
    alpha: f64,
    seed: u64,
    cap: u64,
    kind: CircuitKind,
    violation_rule: impl Fn(&[f64], &[usize]) -> Option<(Option<usize>, f64)>,
) -> Result<EnforceOutcome> {
    if alpha <= 0.0 {
        return Err(Error::Usage("enforcement alpha must be positive".into()));
    }
    if collection.is_empty() {
        return Err(Error::Usage("enforcement needs a nonempty group collection".into()));
    }
    let group_rows: Vec<Vec<usize>> = collection
        .groups
        .iter()
        .map(|g| members(g, ds, postproc_idx))
        .collect::<Result<_>>()?;

    let mut p_new: Vec<f64> = preds.probs().to_vec();
    let mut rules = Vec::new();
    let mut rng = stream_rng(seed, Stream::Enforcement);
    // distinct groups that passed since the last update; the loop only
    // closes once every group has been re-checked against the current
    // predictions, which is what makes the termination a certificate
    let mut seen = vec![false; collection.len()];
    let mut n_seen = 0usize;
    let mut draws = 0u64;

    while n_seen < collection.len() {
        if draws >= cap {
            let worst = group_rows
                .iter()
                .filter(|rows| !rows.is_empty())
                .map(|rows| match kind {
                    CircuitKind::Mc { d } => {
                        calibration_report(&p_new, outcomes, rows, d).max_abs_violation
                    }
                    CircuitKind::Ma => {
                        ma_violation(&p_new, outcomes, rows).unwrap_or(0.0).abs()
                    }
                })
                .fold(0.0f64, f64::max);
            return Err(Error::IterationBudget { draws, worst_violation: worst });
        }
        let ind = rng.gen_range(0..collection.len());
        draws += 1;
        let rows = &group_rows[ind];
        let update = if rows.is_empty() { None } else { violation_rule(&p_new, rows) };
        if update.is_none() {
            if !seen[ind] {
                seen[ind] = true;
                n_seen += 1;
            }
            continue;
        }
        if let Some((interval, delta)) = update {
            seen.fill(false);
            n_seen = 0;
            rules.push(UpdateRule {
                group: collection.groups[ind].clone(),
                interval,
                delta,
            });
            match (kind, interval) {
                (CircuitKind::Mc { d }, Some(v)) => {
                    for &row in rows {
                        if interval_of(p_new[row], d) == v {
                            p_new[row] = clamp01(p_new[row] + delta);
                        }
                    }
                }
                (CircuitKind::Ma, None) => {
                    for &row in rows {
                        p_new[row] = clamp01(p_new[row] + delta);
                    }
                }
                _ => unreachable!("rule shape matches circuit kind"),
            }
        }
    }

    Ok(EnforceOutcome {
        predictions: PredictionVector::new(p_new)?,
        circuit: RuleCircuit { rules, kind, alpha },
        draws,
    })
}

/// Replays `circuit` over the rows in `idx`, strictly in recorded order.
/// MC rules touch a row only while its current prediction sits in the
/// rule's interval; clamping happens after every rule.
pub fn apply_circuit(
    ds: &Dataset,
    idx: &[usize],
    preds: &PredictionVector,
    circuit: &RuleCircuit,
) -> Result<PredictionVector> {
    let mut p: Vec<f64> = preds.probs().to_vec();
    for rule in &circuit.rules {
        let rows = members(&rule.group, ds, idx)?;
        match (circuit.kind, rule.interval) {
            (CircuitKind::Mc { d }, Some(v)) => {
                for &row in &rows {
                    if interval_of(p[row], d) == v {
                        p[row] = clamp01(p[row] + rule.delta);
                    }
                }
            }
            (CircuitKind::Ma, None) => {
                for &row in &rows {
                    p[row] = clamp01(p[row] + rule.delta);
                }
            }
            _ => {
                return Err(Error::Usage(
                    "circuit rule shape does not match circuit kind".into(),
                ))
            }
        }
    }
    PredictionVector::new(p)
}

impl RuleCircuit {
    /// Line format: `MC d=10 alpha=0.01` or `MA alpha=0.01` header, then
    /// one `label: clauses | interval | delta` (MC) or
    /// `label: clauses | delta` (MA) rule per line, deltas with 17
    /// significant digits.
    pub fn to_text(&self) -> String {
        let mut out = match self.kind {
            CircuitKind::Mc { d } => format!("MC d={d} alpha={}\n", self.alpha),
            CircuitKind::Ma => format!("MA alpha={}\n", self.alpha),
        };
        for rule in &self.rules {
            match rule.interval {
                Some(v) => out.push_str(&format!(
                    "{}: {} | {v} | {}\n",
                    rule.group.label,
                    rule.group.clause_expr(),
                    fmt_g17(rule.delta)
                )),
                None => out.push_str(&format!(
                    "{}: {} | {}\n",
                    rule.group.label,
                    rule.group.clause_expr(),
                    fmt_g17(rule.delta)
                )),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty circuit file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (kind, alpha) = match fields.as_slice() {
            ["MC", d_field, a_field] => {
                let d = d_field
                    .strip_prefix("d=")
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&d| d >= 1)
                    .ok_or_else(|| perr(1, format!("bad d field `{d_field}`")))?;
                let alpha = a_field
                    .strip_prefix("alpha=")
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| perr(1, format!("bad alpha field `{a_field}`")))?;
                (CircuitKind::Mc { d }, alpha)
            }
            ["MA", a_field] => {
                let alpha = a_field
                    .strip_prefix("alpha=")
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| perr(1, format!("bad alpha field `{a_field}`")))?;
                (CircuitKind::Ma, alpha)
            }
            _ => return Err(perr(1, format!("bad circuit header `{header}`"))),
        };

        let mut rules = Vec::new();
        for (i, raw_line) in lines {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, rest) = line
                .split_once(':')
                .ok_or_else(|| perr(i + 1, "expected `label: clauses | ...`".into()))?;
            let parts: Vec<&str> = rest.split('|').map(str::trim).collect();
            let (expr, interval, delta_str) = match (kind, parts.as_slice()) {
                (CircuitKind::Mc { .. }, [expr, v, delta]) => {
                    let v = v
                        .parse::<usize>()
                        .map_err(|_| perr(i + 1, format!("bad interval `{v}`")))?;
                    (*expr, Some(v), *delta)
                }
                (CircuitKind::Ma, [expr, delta]) => (*expr, None, *delta),
                _ => return Err(perr(i + 1, "rule shape does not match header".into())),
            };
            let delta = delta_str
                .parse::<f64>()
                .map_err(|_| perr(i + 1, format!("bad delta `{delta_str}`")))?;
            if !(-1.0..=1.0).contains(&delta) {
                return Err(perr(i + 1, format!("delta {delta} outside [-1, 1]")));
            }
            rules.push(UpdateRule {
                group: GroupSpec::parse_clauses(label.trim(), expr)?,
                interval,
                delta,
            });
        }
        Ok(RuleCircuit { rules, kind, alpha })
    }
}

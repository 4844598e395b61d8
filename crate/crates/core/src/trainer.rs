//! End-to-end execution of the thirteen training methods: epoch loop,
//! batch selection, augmentation, loss composition, epoch selection by
//! validation balanced accuracy, and the optional enforcement phase.

use crate::audit::PredictionVector;
use crate::dataset::{Dataset, EncodedMatrix, Splits};
use crate::error::{Error, Result};
use crate::eval::balanced_accuracy;
use crate::fairpen::{
    aggregate_topk, make_bucket, penalty_dp, penalty_eo, penalty_ma, penalty_mc, GroupPenalty,
    PairBucket, PenaltyKind,
};
use crate::groups::{members, GroupCollection};
use crate::matrix::Matrix;
use crate::mixup::{interpolate, sample_t, select_batch, BatchFocus, BatchKind, BatchStrategy};
use crate::nn::{adam_step, backward_with_loss, forward, AdamState, MlpModel};
use crate::postprocess::{
    apply_circuit, enforce_ma, enforce_mc, RuleCircuit, DEFAULT_ITERATION_CAP,
};
use crate::rng::{stream_rng, Stream};
use crate::textio::fmt_g17;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// The thirteen methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    Base,
    FairBase,
    Mixup,
    MixupEo,
    MixupMa,
    MixupMc,
    FmDp,
    FmEo,
    FmMa,
    FmMc,
    EnforceMa,
    EnforceMc,
    MixupEnforceMc,
}

impl MethodName {
    pub const ALL: [MethodName; 13] = [
        MethodName::Base,
        MethodName::FairBase,
        MethodName::Mixup,
        MethodName::MixupEo,
        MethodName::MixupMa,
        MethodName::MixupMc,
        MethodName::FmDp,
        MethodName::FmEo,
        MethodName::FmMa,
        MethodName::FmMc,
        MethodName::EnforceMa,
        MethodName::EnforceMc,
        MethodName::MixupEnforceMc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodName::Base => "base",
            MethodName::FairBase => "fair_base",
            MethodName::Mixup => "mixup",
            MethodName::MixupEo => "mixup_eo",
            MethodName::MixupMa => "mixup_ma",
            MethodName::MixupMc => "mixup_mc",
            MethodName::FmDp => "fm_dp",
            MethodName::FmEo => "fm_eo",
            MethodName::FmMa => "fm_ma",
            MethodName::FmMc => "fm_mc",
            MethodName::EnforceMa => "enforce_ma",
            MethodName::EnforceMc => "enforce_mc",
            MethodName::MixupEnforceMc => "mixup_enforce_mc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Usage(format!("unknown method `{s}`")))
    }

    /// Methods whose pipeline ends in a post-processing phase.
    pub fn is_enforcement(&self) -> bool {
        matches!(self, MethodName::EnforceMa | MethodName::EnforceMc | MethodName::MixupEnforceMc)
    }

    fn enforces_mc(&self) -> bool {
        matches!(self, MethodName::EnforceMc | MethodName::MixupEnforceMc)
    }

    /// Fairness penalty attached to the loss, for the FM family.
    pub fn fm_penalty(&self) -> Option<PenaltyKind> {
        match self {
            MethodName::FmDp => Some(PenaltyKind::Dp),
            MethodName::FmEo => Some(PenaltyKind::Eo),
            MethodName::FmMa => Some(PenaltyKind::Ma),
            MethodName::FmMc => Some(PenaltyKind::Mc),
            _ => None,
        }
    }

    /// Does the method construct interpolated points at all?
    fn interpolates(&self) -> bool {
        !matches!(
            self,
            MethodName::Base | MethodName::FairBase | MethodName::EnforceMa | MethodName::EnforceMc
        )
    }

    /// Loss is BCE on interpolated points only (no original-data term).
    fn interpolation_only_loss(&self) -> bool {
        matches!(self, MethodName::Mixup | MethodName::MixupEnforceMc)
    }

    /// Loss adds lambda * BCE on interpolated points to the original BCE.
    fn weighted_interp_bce(&self) -> bool {
        matches!(self, MethodName::MixupEo | MethodName::MixupMa | MethodName::MixupMc)
    }

    pub fn batch_kind(&self) -> BatchKind {
        match self {
            MethodName::Base
            | MethodName::Mixup
            | MethodName::EnforceMa
            | MethodName::EnforceMc
            | MethodName::MixupEnforceMc => BatchKind::Uniform,
            MethodName::FairBase | MethodName::MixupMa | MethodName::FmDp | MethodName::FmMa => {
                BatchKind::ByGroup
            }
            MethodName::MixupEo | MethodName::FmEo => BatchKind::ByGroupAndLabel,
            MethodName::MixupMc | MethodName::FmMc => BatchKind::ByGroupAndInterval,
        }
    }

    /// Does the method's loss consume a group collection?
    pub fn group_conditioned(&self) -> bool {
        self.batch_kind() != BatchKind::Uniform
    }
}

/// Which searched-hyperparameter block to ship as defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Employment,
    Income,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "employment" | "synthetic" => Ok(DatasetKind::Employment),
            "income" => Ok(DatasetKind::Income),
            other => Err(Error::Usage(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Searched (d, k, lambda) per method and dataset kind; methods without
/// a searched triple get d = 10, k = 1, lambda = 0.
pub fn hparam_defaults(kind: DatasetKind, name: MethodName) -> (usize, usize, f64) {
    use DatasetKind::*;
    use MethodName::*;
    match (kind, name) {
        (Employment, Mixup) => (10, 3, 0.25),
        (Employment, MixupEo) => (10, 100, 0.25),
        (Employment, MixupMa) => (10, 3, 0.25),
        (Employment, MixupMc) => (10, 40, 0.25),
        (Employment, FmDp) => (10, 100, 0.5),
        (Employment, FmEo) => (10, 100, 0.25),
        (Employment, FmMa) => (10, 100, 0.25),
        (Employment, FmMc) => (10, 100, 0.5),
        (Income, Mixup) => (10, 40, 0.25),
        (Income, MixupEo) => (10, 40, 0.5),
        (Income, MixupMa) => (10, 40, 0.25),
        (Income, MixupMc) => (10, 40, 0.5),
        (Income, FmDp) => (10, 3, 0.25),
        (Income, FmEo) => (10, 3, 0.5),
        (Income, FmMa) => (10, 3, 0.5),
        (Income, FmMc) => (10, 3, 0.25),
        _ => (10, 1, 0.0),
    }
}

/// Full configuration of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: MethodName,
    pub lambda: f64,
    pub k: usize,
    pub d: usize,
    /// Enforcement target violation.
    pub alpha: f64,
    pub epochs: usize,
    /// Batch-selection passes per epoch (n).
    pub iters: usize,
    pub batch_size: usize,
    /// Beta parameter for interpolation coefficients.
    pub eps: f64,
    pub iteration_cap: u64,
    /// Absolute group-size threshold for the with-replacement policy
    /// (DP/MA-metric methods). `None` computes 0.025 x train rows;
    /// 0 disables the policy.
    pub replacement_threshold: Option<f64>,
    /// Diagnostic hook: fix the interpolation coefficient.
    pub t_override: Option<f64>,
}

impl MethodSpec {
    pub fn new(name: MethodName, dataset_kind: DatasetKind) -> Self {
        let (d, k, lambda) = hparam_defaults(dataset_kind, name);
        MethodSpec {
            name,
            lambda,
            k,
            d,
            alpha: 0.01,
            epochs: 10,
            iters: 100,
            batch_size: 500,
            eps: 1.0,
            iteration_cap: DEFAULT_ITERATION_CAP,
            replacement_threshold: None,
            t_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub val_bacc: f64,
    pub mean_loss: f64,
    pub iterations: u64,
    pub skipped: u64,
}

/// Outcome of one training run: per-epoch metrics, the selected model
/// snapshot, and (for enforcement methods) its circuit.
#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub spec: MethodSpec,
    pub seed: u64,
    pub epoch_stats: Vec<EpochStats>,
    pub selected_epoch: usize,
    pub model: MlpModel,
    pub circuit: Option<RuleCircuit>,
    pub enforcement_draws: Option<u64>,
    /// Per-iteration training losses, in order, skips omitted.
    pub loss_trace: Vec<f64>,
    pub total_iterations: u64,
    pub total_skipped: u64,
    /// Wall-clock only; never serialized, so output trees stay
    /// byte-identical across reruns.
    pub wall_ms: u128,
}

impl TrainingRecord {
    /// Results-file form: spec echo, per-epoch metrics, selected epoch,
    /// and the circuit reference.
    pub fn to_text(&self, circuit_ref: Option<&str>) -> String {
        let mut out = String::new();
        out.push_str(&format!("method {}\n", self.spec.name.name()));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!(
            "spec lambda={} k={} d={} alpha={} epochs={} iters={} batch={} eps={}\n",
            self.spec.lambda,
            self.spec.k,
            self.spec.d,
            self.spec.alpha,
            self.spec.epochs,
            self.spec.iters,
            self.spec.batch_size,
            self.spec.eps
        ));
        for s in &self.epoch_stats {
            out.push_str(&format!(
                "epoch {} val_bacc {} mean_loss {} iterations {} skipped {}\n",
                s.epoch,
                fmt_g17(s.val_bacc),
                fmt_g17(s.mean_loss),
                s.iterations,
                s.skipped
            ));
        }
        out.push_str(&format!("selected_epoch {}\n", self.selected_epoch));
        match self.enforcement_draws {
            Some(d) => out.push_str(&format!("enforcement_draws {d}\n")),
            None => out.push_str("enforcement_draws -\n"),
        }
        out.push_str(&format!("circuit {}\n", circuit_ref.unwrap_or("-")));
        out.push_str(&format!(
            "iterations_total {} skipped_total {}\n",
            self.total_iterations, self.total_skipped
        ));
        out
    }
}

/// Fills a dataset-length vector with `vals` at the listed rows.
pub fn scatter(n_rows: usize, idx: &[usize], vals: &[f64]) -> Vec<f64> {
    assert_eq!(idx.len(), vals.len());
    let mut full = vec![0.0; n_rows];
    for (&row, &v) in idx.iter().zip(vals.iter()) {
        full[row] = v;
    }
    full
}

/// One iteration of the epoch plan.
#[derive(Debug, Clone, Copy)]
enum Plan {
    Uniform,
    Group(usize),
    GroupLabel(usize, u8),
    GroupInterval(usize, usize),
}

fn epoch_plans(name: MethodName, iters: usize, n_groups: usize, d: usize) -> Vec<Plan> {
    let mut plans = Vec::new();
    for _ in 0..iters {
        match name.batch_kind() {
            BatchKind::Uniform => plans.push(Plan::Uniform),
            BatchKind::ByGroup => {
                for g in 0..n_groups {
                    plans.push(Plan::Group(g));
                }
            }
            BatchKind::ByGroupAndLabel => {
                for g in 0..n_groups {
                    for y in 0..2u8 {
                        plans.push(Plan::GroupLabel(g, y));
                    }
                }
            }
            BatchKind::ByGroupAndInterval => {
                for g in 0..n_groups {
                    for v in 0..=d {
                        plans.push(Plan::GroupInterval(g, v));
                    }
                }
            }
        }
    }
    plans
}

struct GroupRows {
    group: Vec<Vec<usize>>,
    complement: Vec<Vec<usize>>,
}

fn group_rows_within(
    ds: &Dataset,
    collection: &GroupCollection,
    rows: &[usize],
) -> Result<GroupRows> {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let mut group = Vec::with_capacity(collection.len());
    let mut complement = Vec::with_capacity(collection.len());
    for g in &collection.groups {
        let inside = members(g, ds, rows)?;
        let mut outside = Vec::with_capacity(sorted.len() - inside.len());
        let mut it = inside.iter().peekable();
        for &r in &sorted {
            if it.peek() == Some(&&r) {
                it.next();
            } else {
                outside.push(r);
            }
        }
        group.push(inside);
        complement.push(outside);
    }
    Ok(GroupRows { group, complement })
}

fn forward_rows(m: &MlpModel, enc: &EncodedMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    forward(m, &enc.gather(rows))
}

#[allow(clippy::too_many_arguments)]
fn fm_group_penalties(
    model: &MlpModel,
    kind: PenaltyKind,
    focal: (usize, Option<u8>, Option<usize>),
    focal_pair: (&[usize], &[usize]),
    rows: &GroupRows,
    collection: &GroupCollection,
    enc: &EncodedMatrix,
    outcomes: &[u8],
    t: f64,
    d: usize,
    strategy: &BatchStrategy,
    epoch_preds: Option<&[f64]>,
    pen_rng: &mut ChaCha8Rng,
) -> Result<Vec<GroupPenalty>> {
    let width = enc.width;
    let empty = || PairBucket {
        x_mixed: Matrix::zeros(0, width),
        direction: Matrix::zeros(0, width),
        label_delta: vec![],
    };
    let (focal_group, focal_label, focal_interval) = focal;
    let mut pens = Vec::new();
    for (gi, gspec) in collection.groups.iter().enumerate() {
        let mut bucket_for = |label: Option<u8>, interval: Option<usize>| -> PairBucket {
            if gi == focal_group && label == focal_label && interval == focal_interval {
                return make_bucket(enc, focal_pair.0, focal_pair.1, outcomes, t);
            }
            let focus = BatchFocus {
                group_rows: &rows.group[gi],
                complement_rows: &rows.complement[gi],
                label,
                interval,
            };
            let preds = epoch_preds.map(|p| (p, d));
            match select_batch(strategy, Some(&focus), outcomes, preds, &[], pen_rng) {
                Some((l, r)) => make_bucket(enc, &l, &r, outcomes, t),
                None => empty(),
            }
        };
        let penalty = match kind {
            PenaltyKind::Dp => {
                let b = bucket_for(None, None);
                penalty_dp(model, &gspec.label, &b)?
            }
            PenaltyKind::Ma => {
                let b = bucket_for(None, None);
                penalty_ma(model, &gspec.label, &b)?
            }
            PenaltyKind::Eo => {
                let buckets = [bucket_for(Some(0), None), bucket_for(Some(1), None)];
                penalty_eo(model, &gspec.label, &buckets)?
            }
            PenaltyKind::Mc => {
                let buckets: Vec<PairBucket> =
                    (0..=d).map(|v| bucket_for(None, Some(v))).collect();
                penalty_mc(model, &gspec.label, &buckets)?
            }
        };
        if let Some(p) = penalty {
            pens.push(p);
        }
    }
    Ok(pens)
}

/// Trains one method end to end. `seed` drives every random phase
/// through its own stream: weight initialization, batch selection,
/// interpolation coefficients, penalty pair sampling, and enforcement.
pub fn train(
    spec: &MethodSpec,
    ds: &Dataset,
    enc: &EncodedMatrix,
    splits: &Splits,
    collection: &GroupCollection,
    seed: u64,
) -> Result<TrainingRecord> {
    let started = Instant::now();
    if spec.eps <= 0.0 {
        return Err(Error::Usage("mixup epsilon must be positive".into()));
    }
    if spec.d == 0 {
        return Err(Error::Usage("d must be at least 1".into()));
    }
    if spec.name.group_conditioned() && collection.is_empty() {
        return Err(Error::Usage(format!(
            "method {} needs a nonempty group collection",
            spec.name.name()
        )));
    }
    if spec.name.is_enforcement() && splits.postproc.is_empty() {
        return Err(Error::Split(format!(
            "method {} needs a postprocessing split (p > 0)",
            spec.name.name()
        )));
    }

    // enforcement methods train on the reduced set, others on the pool
    let train_rows: Vec<usize> =
        if spec.name.is_enforcement() { splits.train.clone() } else { splits.pool() };
    if train_rows.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }

    // resolved absolute threshold for the with-replacement policy,
    // applied only when the method's metric is DP or MA
    let replacement_threshold = match spec.name.fm_penalty() {
        Some(PenaltyKind::Dp) | Some(PenaltyKind::Ma) => {
            let thr = spec
                .replacement_threshold
                .unwrap_or(0.025 * train_rows.len() as f64);
            if thr > 0.0 {
                Some(thr.ceil() as usize)
            } else {
                None
            }
        }
        _ => None,
    };
    // penalty pair batches follow the same kind and budget
    let strategy =
        BatchStrategy::new(spec.name.batch_kind(), spec.batch_size, replacement_threshold)?;

    let rows = group_rows_within(ds, collection, &train_rows)?;
    let y_val: Vec<u8> = splits.val.iter().map(|&r| ds.outcomes[r]).collect();
    let targets_of = |idx: &[usize]| -> Vec<f64> {
        idx.iter().map(|&r| ds.outcomes[r] as f64).collect()
    };

    let mut model = MlpModel::new(enc.width, seed);
    let mut adam = AdamState::new(&model);
    let mut batch_rng = stream_rng(seed, Stream::BatchSelect);
    let mut t_rng = stream_rng(seed, Stream::MixCoeff);
    let mut pen_rng = stream_rng(seed, Stream::PenaltyPairs);

    let uses_intervals = spec.name.batch_kind() == BatchKind::ByGroupAndInterval;
    let plans = epoch_plans(spec.name, spec.iters, collection.len(), spec.d);

    let mut epoch_stats = Vec::with_capacity(spec.epochs);
    let mut loss_trace = Vec::new();
    let mut total_iterations = 0u64;
    let mut total_skipped = 0u64;
    let mut best: Option<(f64, usize, MlpModel, Option<RuleCircuit>, Option<u64>)> = None;

    for epoch in 0..spec.epochs {
        // interval strategies read predictions frozen at epoch start
        let epoch_preds: Option<Vec<f64>> = if uses_intervals {
            let p = forward_rows(&model, enc, &train_rows)?;
            Some(scatter(ds.n_rows(), &train_rows, &p))
        } else {
            None
        };

        let mut epoch_loss_sum = 0.0;
        let mut epoch_done = 0u64;
        let mut epoch_skipped = 0u64;

        for plan in &plans {
            total_iterations += 1;
            let focus_tuple = match *plan {
                Plan::Uniform => None,
                Plan::Group(g) => Some((g, None, None)),
                Plan::GroupLabel(g, y) => Some((g, Some(y), None)),
                Plan::GroupInterval(g, v) => Some((g, None, Some(v))),
            };
            let focus = focus_tuple.map(|(g, label, interval)| BatchFocus {
                group_rows: &rows.group[g],
                complement_rows: &rows.complement[g],
                label,
                interval,
            });
            let preds_for_select = epoch_preds.as_deref().map(|p| (p, spec.d));
            let picked = select_batch(
                &strategy,
                focus.as_ref(),
                &ds.outcomes,
                preds_for_select,
                &train_rows,
                &mut batch_rng,
            );
            let Some((left, right)) = picked else {
                epoch_skipped += 1;
                total_skipped += 1;
                continue;
            };

            let t = if spec.name.interpolates() {
                match spec.t_override {
                    Some(t) => t,
                    None => sample_t(spec.eps, &mut t_rng)?,
                }
            } else {
                0.0
            };

            let (loss, grads) = if spec.name.interpolation_only_loss() {
                let (xm, ym) = interpolate(
                    &enc.gather(&left),
                    &targets_of(&left),
                    &enc.gather(&right),
                    &targets_of(&right),
                    t,
                )?;
                backward_with_loss(&model, &xm, &ym)?
            } else {
                // BCE on the original (possibly balanced) batch
                let orig: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
                let (l_orig, mut g) =
                    backward_with_loss(&model, &enc.gather(&orig), &targets_of(&orig))?;
                let mut loss = l_orig;
                if spec.name.weighted_interp_bce() && spec.lambda > 0.0 {
                    let (xm, ym) = interpolate(
                        &enc.gather(&left),
                        &targets_of(&left),
                        &enc.gather(&right),
                        &targets_of(&right),
                        t,
                    )?;
                    let (l_mix, mut g_mix) = backward_with_loss(&model, &xm, &ym)?;
                    g_mix.scale(spec.lambda);
                    g.add(&g_mix);
                    loss += spec.lambda * l_mix;
                }
                if let Some(kind) = spec.name.fm_penalty() {
                    if spec.lambda > 0.0 {
                        let (fg, fl, fv) = focus_tuple.expect("FM methods are group-conditioned");
                        let pens = fm_group_penalties(
                            &model,
                            kind,
                            (fg, fl, fv),
                            (&left, &right),
                            &rows,
                            collection,
                            enc,
                            &ds.outcomes,
                            t,
                            spec.d,
                            &strategy,
                            epoch_preds.as_deref(),
                            &mut pen_rng,
                        )?;
                        let (value, active) = aggregate_topk(&pens, spec.k)?;
                        if !active.is_empty() {
                            let w = spec.lambda / active.len() as f64;
                            for &i in &active {
                                let mut gp = pens[i].backward(&model)?;
                                gp.scale(w);
                                g.add(&gp);
                            }
                            loss += spec.lambda * value;
                        }
                    }
                }
                (loss, g)
            };

            adam_step(&mut model, &mut adam, &grads);
            loss_trace.push(loss);
            epoch_loss_sum += loss;
            epoch_done += 1;
        }

        // epoch selection on validation balanced accuracy; enforcement
        // methods evaluate circuit-adjusted predictions
        let (val_probs, circuit, draws) = if spec.name.is_enforcement() {
            let pp_raw = forward_rows(&model, enc, &splits.postproc)?;
            let pp_full =
                PredictionVector::new(scatter(ds.n_rows(), &splits.postproc, &pp_raw))?;
            let outcome = if spec.name.enforces_mc() {
                enforce_mc(
                    ds,
                    &splits.postproc,
                    &pp_full,
                    collection,
                    &ds.outcomes,
                    spec.alpha,
                    spec.d,
                    seed,
                    spec.iteration_cap,
                )?
            } else {
                enforce_ma(
                    ds,
                    &splits.postproc,
                    &pp_full,
                    collection,
                    &ds.outcomes,
                    spec.alpha,
                    seed,
                    spec.iteration_cap,
                )?
            };
            let val_raw = forward_rows(&model, enc, &splits.val)?;
            let val_full = PredictionVector::new(scatter(ds.n_rows(), &splits.val, &val_raw))?;
            let adjusted = apply_circuit(ds, &splits.val, &val_full, &outcome.circuit)?;
            let probs: Vec<f64> = splits.val.iter().map(|&r| adjusted.probs()[r]).collect();
            (probs, Some(outcome.circuit), Some(outcome.draws))
        } else {
            (forward_rows(&model, enc, &splits.val)?, None, None)
        };
        let val_bacc = balanced_accuracy(&val_probs, &y_val, 0.5)?;

        epoch_stats.push(EpochStats {
            epoch,
            val_bacc,
            mean_loss: if epoch_done > 0 { epoch_loss_sum / epoch_done as f64 } else { 0.0 },
            iterations: epoch_done,
            skipped: epoch_skipped,
        });
        // earliest epoch wins ties
        if best.as_ref().is_none_or(|(b, _, _, _, _)| val_bacc > *b) {
            best = Some((val_bacc, epoch, model.clone(), circuit, draws));
        }
    }

    if total_skipped * 2 > total_iterations {
        return Err(Error::TooManySkips { skipped: total_skipped, total: total_iterations });
    }

    let (_, selected_epoch, best_model, circuit, enforcement_draws) =
        best.expect("epochs >= 1 produced at least one candidate");
    Ok(TrainingRecord {
        spec: spec.clone(),
        seed,
        epoch_stats,
        selected_epoch,
        model: best_model,
        circuit,
        enforcement_draws,
        loss_trace,
        total_iterations,
        total_skipped,
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Predictions of the selected-epoch model over `idx`, with the recorded
/// circuit replayed on top for enforcement methods. Aligned to `idx`.
pub fn predict(
    record: &TrainingRecord,
    ds: &Dataset,
    enc: &EncodedMatrix,
    idx: &[usize],
) -> Result<Vec<f64>> {
    let raw = forward_rows(&record.model, enc, idx)?;
    match &record.circuit {
        None => Ok(raw),
        Some(circuit) => {
            let full = PredictionVector::new(scatter(ds.n_rows(), idx, &raw))?;
            let adjusted = apply_circuit(ds, idx, &full, circuit)?;
            Ok(idx.iter().map(|&r| adjusted.probs()[r]).collect())
        }
    }
}

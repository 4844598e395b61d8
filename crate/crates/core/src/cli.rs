//! Operator-facing commands: `audit`, `run`, `postprocess`, `apply`, and
//! `synth`, plus the line-oriented experiment configuration they share.
//!
//! Every command is deterministic given its arguments and declared
//! seeds. `run` may execute (method, seed) jobs in parallel worker
//! threads (`MCFAIR_WORKERS`); job outputs are independent and the
//! summary fold runs after all jobs join, so the output tree is
//! byte-identical regardless of worker count.

use crate::audit::{mc_alpha, write_audit_report, PredictionVector};
use crate::dataset::{
    fit_encoder, generate_synthetic, load_csv, split, Dataset, FeatureSchema, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, summarize, write_summary, SummaryRow};
use crate::groups::{build_collection, GroupCollection, Setting, DEFAULT_SIZE_THRESHOLD};
use crate::postprocess::{apply_circuit, enforce_ma, enforce_mc, RuleCircuit};
use crate::textio::{fmt_g17, read_to_string, write_string};
use crate::trainer::{predict, scatter, train, DatasetKind, MethodName, MethodSpec};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where the experiment's rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { rows: usize, races: u32, seed: u64 },
    Csv { data: PathBuf, schema: PathBuf },
}

/// Per-method overrides of the shipped hyperparameter defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodOverride {
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub replacement_threshold: Option<f64>,
    pub epochs: Option<usize>,
    pub iters: Option<usize>,
    pub batch: Option<usize>,
}

/// Parsed experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub dataset_kind: DatasetKind,
    pub race_col: String,
    pub dis_col: String,
    pub split_fracs: (f64, f64, f64),
    pub postproc_frac: f64,
    pub setting: Setting,
    pub size_threshold: f64,
    pub methods: Vec<MethodName>,
    pub seeds: Vec<u64>,
    pub outdir: PathBuf,
    pub epochs: usize,
    pub iters: usize,
    pub batch: usize,
    /// Discretization used by the evaluation audits and the summary.
    pub eval_d: usize,
    pub overrides: BTreeMap<&'static str, MethodOverride>,
}

fn cfg_err(path: &Path, line: usize, msg: String) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg }
}

impl ExperimentConfig {
    /// Parses the sectioned `key = value` format; unknown sections or
    /// keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut section = String::new();

        let mut synthetic = false;
        let mut rows = 20000usize;
        let mut races = 8u32;
        let mut data_seed = 0u64;
        let mut csv: Option<PathBuf> = None;
        let mut schema: Option<PathBuf> = None;
        let mut dataset_kind = DatasetKind::Employment;
        let mut race_col = "race".to_string();
        let mut dis_col = "dis".to_string();
        let mut split_fracs = (0.6, 0.2, 0.2);
        let mut postproc_frac = 0.25;
        let mut setting = Setting::All;
        let mut size_threshold = DEFAULT_SIZE_THRESHOLD;
        let mut methods = Vec::new();
        let mut seeds = Vec::new();
        let mut outdir: Option<PathBuf> = None;
        let mut epochs = 10usize;
        let mut iters = 100usize;
        let mut batch = 500usize;
        let mut eval_d = 10usize;
        let mut overrides: BTreeMap<&'static str, MethodOverride> = BTreeMap::new();

        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                let known = ["data", "split", "groups", "run"];
                if !known.contains(&section.as_str()) && !section.starts_with("method.") {
                    return Err(cfg_err(path, i + 1, format!("unknown section `[{section}]`")));
                }
                if let Some(m) = section.strip_prefix("method.") {
                    let name = MethodName::parse(m)
                        .map_err(|e| cfg_err(path, i + 1, e.to_string()))?;
                    overrides.entry(name.name()).or_default();
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(path, i + 1, format!("expected `key = value`: `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let bad_key =
                || cfg_err(path, i + 1, format!("unknown key `{key}` in section `[{section}]`"));
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| cfg_err(path, i + 1, format!("bad number `{v}`")))
            };
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| cfg_err(path, i + 1, format!("bad integer `{v}`")))
            };
            match section.as_str() {
                "data" => match key {
                    "synthetic" => synthetic = value == "true",
                    "rows" => rows = parse_usize(value)?,
                    "races" => {
                        races = value.parse().map_err(|_| {
                            cfg_err(path, i + 1, format!("bad race count `{value}`"))
                        })?
                    }
                    "data_seed" => {
                        data_seed = value.parse().map_err(|_| {
                            cfg_err(path, i + 1, format!("bad seed `{value}`"))
                        })?
                    }
                    "csv" => csv = Some(PathBuf::from(value)),
                    "schema" => schema = Some(PathBuf::from(value)),
                    "kind" => dataset_kind = DatasetKind::parse(value)?,
                    "race_col" => race_col = value.to_string(),
                    "dis_col" => dis_col = value.to_string(),
                    _ => return Err(bad_key()),
                },
                "split" => match key {
                    "train" => split_fracs.0 = parse_f64(value)?,
                    "val" => split_fracs.1 = parse_f64(value)?,
                    "test" => split_fracs.2 = parse_f64(value)?,
                    "postproc" => postproc_frac = parse_f64(value)?,
                    _ => return Err(bad_key()),
                },
                "groups" => match key {
                    "setting" => setting = Setting::parse(value)?,
                    "threshold" => size_threshold = parse_f64(value)?,
                    _ => return Err(bad_key()),
                },
                "run" => match key {
                    "methods" => {
                        methods = value
                            .split(',')
                            .map(MethodName::parse)
                            .collect::<Result<Vec<_>>>()?
                    }
                    "seeds" => {
                        seeds = value
                            .split(',')
                            .map(|s| {
                                s.trim().parse::<u64>().map_err(|_| {
                                    cfg_err(path, i + 1, format!("bad seed `{s}`"))
                                })
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                    "outdir" => outdir = Some(PathBuf::from(value)),
                    "epochs" => epochs = parse_usize(value)?,
                    "iters" => iters = parse_usize(value)?,
                    "batch" => batch = parse_usize(value)?,
                    "eval_d" => eval_d = parse_usize(value)?,
                    _ => return Err(bad_key()),
                },
                method_section => {
                    let name = method_section
                        .strip_prefix("method.")
                        .expect("validated at section header");
                    let slot = overrides
                        .get_mut(MethodName::parse(name)?.name())
                        .expect("inserted at section header");
                    match key {
                        "lambda" => slot.lambda = Some(parse_f64(value)?),
                        "k" => slot.k = Some(parse_usize(value)?),
                        "d" => slot.d = Some(parse_usize(value)?),
                        "alpha" => slot.alpha = Some(parse_f64(value)?),
                        "eps" => slot.eps = Some(parse_f64(value)?),
                        "replacement_threshold" => {
                            slot.replacement_threshold = Some(parse_f64(value)?)
                        }
                        "epochs" => slot.epochs = Some(parse_usize(value)?),
                        "iters" => slot.iters = Some(parse_usize(value)?),
                        "batch" => slot.batch = Some(parse_usize(value)?),
                        _ => return Err(bad_key()),
                    }
                }
            }
        }

        if methods.is_empty() {
            return Err(Error::Usage("config lists no methods".into()));
        }
        if seeds.is_empty() {
            return Err(Error::Usage("config lists no seeds".into()));
        }
        let outdir = outdir.ok_or_else(|| Error::Usage("config sets no outdir".into()))?;
        let source = if synthetic {
            DataSource::Synthetic { rows, races, seed: data_seed }
        } else {
            let data = csv.ok_or_else(|| Error::Usage("config needs csv= or synthetic".into()))?;
            let schema =
                schema.ok_or_else(|| Error::Usage("csv mode needs a schema path".into()))?;
            DataSource::Csv { data, schema }
        };
        Ok(ExperimentConfig {
            source,
            dataset_kind,
            race_col,
            dis_col,
            split_fracs,
            postproc_frac,
            setting,
            size_threshold,
            methods,
            seeds,
            outdir,
            epochs,
            iters,
            batch,
            eval_d,
            overrides,
        })
    }

    fn method_spec(&self, name: MethodName) -> MethodSpec {
        let mut spec = MethodSpec::new(name, self.dataset_kind);
        spec.epochs = self.epochs;
        spec.iters = self.iters;
        spec.batch_size = self.batch;
        if let Some(ov) = self.overrides.get(name.name()) {
            if let Some(v) = ov.lambda {
                spec.lambda = v;
            }
            if let Some(v) = ov.k {
                spec.k = v;
            }
            if let Some(v) = ov.d {
                spec.d = v;
            }
            if let Some(v) = ov.alpha {
                spec.alpha = v;
            }
            if let Some(v) = ov.eps {
                spec.eps = v;
            }
            if let Some(v) = ov.replacement_threshold {
                spec.replacement_threshold = Some(v);
            }
            if let Some(v) = ov.epochs {
                spec.epochs = v;
            }
            if let Some(v) = ov.iters {
                spec.iters = v;
            }
            if let Some(v) = ov.batch {
                spec.batch_size = v;
            }
        }
        spec
    }
}

fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic { rows, races, seed } => Ok(generate_synthetic(*rows, *races, *seed)),
        DataSource::Csv { data, schema } => {
            let schema = FeatureSchema::load(schema)?;
            load_csv(data, &schema)
        }
    }
}

/// One `row<TAB>probability` line per split row.
fn write_split_preds(path: &Path, idx: &[usize], probs: &[f64]) -> Result<()> {
    let mut out = String::from("row\tprob\n");
    for (&r, &p) in idx.iter().zip(probs.iter()) {
        out.push_str(&format!("{r}\t{}\n", fmt_g17(p)));
    }
    write_string(path, &out)
}

/// Per-job scalar metrics, parsed back by the summary fold and tests.
#[derive(Debug, Clone, Copy)]
pub struct JobMetrics {
    pub test_bacc: f64,
    pub test_worst_alpha: f64,
    pub val_bacc: f64,
}

fn write_metrics(
    path: &Path,
    m: &JobMetrics,
    selected_epoch: usize,
    draws: Option<u64>,
    skipped: u64,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("test_bacc_pct\t{}\n", fmt_g17(100.0 * m.test_bacc)));
    out.push_str(&format!("test_worst_alpha\t{}\n", fmt_g17(m.test_worst_alpha)));
    out.push_str(&format!("val_bacc_selected\t{}\n", fmt_g17(m.val_bacc)));
    out.push_str(&format!("selected_epoch\t{selected_epoch}\n"));
    match draws {
        Some(d) => out.push_str(&format!("enforcement_draws\t{d}\n")),
        None => out.push_str("enforcement_draws\t-\n"),
    }
    out.push_str(&format!("skipped_iterations\t{skipped}\n"));
    write_string(path, &out)
}

/// Reads one value back out of a metrics file.
pub fn read_metric(path: &Path, key: &str) -> Result<f64> {
    let text = read_to_string(path)?;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('\t') {
            if k == key {
                return v.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    msg: format!("bad value for `{key}`"),
                });
            }
        }
    }
    Err(Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("metric `{key}` not found"),
    })
}

fn run_one_job(
    config: &ExperimentConfig,
    ds: &Dataset,
    collection: &GroupCollection,
    name: MethodName,
    seed: u64,
) -> Result<JobMetrics> {
    let split_spec = SplitSpec::new(
        config.split_fracs.0,
        config.split_fracs.1,
        config.split_fracs.2,
        config.postproc_frac,
        seed,
    )?;
    let splits = split(ds, &split_spec)?;
    let train_rows = if name.is_enforcement() { splits.train.clone() } else { splits.pool() };
    let enc = fit_encoder(ds, &train_rows)?;
    let spec = config.method_spec(name);
    let record = train(&spec, ds, &enc, &splits, collection, seed)?;

    let dir = config.outdir.join(name.name()).join(seed.to_string());
    let circuit_ref = record.circuit.as_ref().map(|_| "circuit.txt");
    write_string(&dir.join("record.txt"), &record.to_text(circuit_ref))?;
    if let Some(circuit) = &record.circuit {
        circuit.save(&dir.join("circuit.txt"))?;
    }

    let mut job = JobMetrics { test_bacc: 0.0, test_worst_alpha: 0.0, val_bacc: 0.0 };
    for (split_name, idx) in [("val", &splits.val), ("test", &splits.test)] {
        let probs = predict(&record, ds, &enc, idx)?;
        write_split_preds(&dir.join(format!("preds_{split_name}.tsv")), idx, &probs)?;
        let full = scatter(ds.n_rows(), idx, &probs);
        let summary = write_audit_report(
            &dir.join(format!("audit_{split_name}.txt")),
            &full,
            &ds.outcomes,
            ds,
            idx,
            collection,
            config.eval_d,
        )?;
        let y: Vec<u8> = idx.iter().map(|&r| ds.outcomes[r]).collect();
        let bacc = balanced_accuracy(&probs, &y, 0.5)?;
        if split_name == "test" {
            job.test_bacc = bacc;
            job.test_worst_alpha = summary.alpha;
        } else {
            job.val_bacc = bacc;
        }
    }
    if name.is_enforcement() {
        let probs = predict(&record, ds, &enc, &splits.postproc)?;
        write_split_preds(&dir.join("preds_postproc.tsv"), &splits.postproc, &probs)?;
    }
    write_metrics(
        &dir.join("metrics.tsv"),
        &job,
        record.selected_epoch,
        record.enforcement_draws,
        record.total_skipped,
    )?;
    Ok(job)
}

/// Runs every (method, seed) job of the config and folds the summary.
pub fn cmd_run(config_path: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let ds = load_dataset(&config.source)?;
    let base_split = SplitSpec::new(
        config.split_fracs.0,
        config.split_fracs.1,
        config.split_fracs.2,
        config.postproc_frac,
        0,
    )?;
    let collection = build_collection(
        &ds,
        &config.race_col,
        &config.dis_col,
        &base_split,
        &config.seeds,
        config.setting,
        config.size_threshold,
    )?;

    std::fs::create_dir_all(&config.outdir).map_err(|e| Error::Io {
        path: config.outdir.display().to_string(),
        msg: e.to_string(),
    })?;
    write_string(&config.outdir.join("config_echo.txt"), &read_to_string(config_path)?)?;
    collection.save(&config.outdir.join("groups.txt"))?;

    let jobs: Vec<(MethodName, u64)> = config
        .methods
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let workers: usize = std::env::var("MCFAIR_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1);

    let mut results: BTreeMap<usize, JobMetrics> = BTreeMap::new();
    if workers <= 1 {
        for (job_i, &(name, seed)) in jobs.iter().enumerate() {
            let job = run_one_job(&config, &ds, &collection, name, seed)?;
            results.insert(job_i, job);
        }
    } else {
        let errors = std::sync::Mutex::new(Vec::new());
        let collected = std::sync::Mutex::new(Vec::new());
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(jobs.len()) {
                scope.spawn(|| loop {
                    let job_i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if job_i >= jobs.len() {
                        break;
                    }
                    let (name, seed) = jobs[job_i];
                    match run_one_job(&config, &ds, &collection, name, seed) {
                        Ok(job) => collected.lock().unwrap().push((job_i, job)),
                        Err(e) => errors.lock().unwrap().push(e),
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
        for (job_i, job) in collected.into_inner().unwrap() {
            results.insert(job_i, job);
        }
    }

    // summary: per method, averages over seeds; combined score vs base
    let n_seeds = config.seeds.len() as f64;
    let mut per_method: Vec<(MethodName, f64, f64)> = Vec::new();
    for (mi, &name) in config.methods.iter().enumerate() {
        let mut bacc = 0.0;
        let mut alpha = 0.0;
        for si in 0..config.seeds.len() {
            let job = results.get(&(mi * config.seeds.len() + si)).expect("every job completed");
            bacc += job.test_bacc;
            alpha += job.test_worst_alpha;
        }
        per_method.push((name, 100.0 * bacc / n_seeds, alpha / n_seeds));
    }
    let base = per_method.iter().find(|(n, _, _)| *n == MethodName::Base).map(|&(_, b, a)| (b, a));
    let mut rows = Vec::new();
    for &(name, bacc_pct, alpha) in &per_method {
        let combined = match base {
            Some(b) => summarize(b, (bacc_pct, alpha))?,
            None => 0.0,
        };
        rows.push(SummaryRow { method: name.name().to_string(), bacc_pct, worst_alpha: alpha, combined });
    }
    write_summary(&rows, &config.outdir.join("summary.txt"), &config.outdir.join("summary.tsv"))
}

/// Audits a prediction file over a group collection and writes the
/// per-(group, interval) violation table.
pub fn cmd_audit(
    data: &Path,
    schema: &Path,
    preds: &Path,
    groups: &Path,
    d: usize,
    out: &Path,
) -> Result<()> {
    if d == 0 {
        return Err(Error::Usage("d must be at least 1".into()));
    }
    let schema = FeatureSchema::load(schema)?;
    let ds = load_csv(data, &schema)?;
    let preds = PredictionVector::load(preds)?;
    if preds.len() != ds.n_rows() {
        return Err(Error::Usage(format!(
            "{} predictions for {} data rows",
            preds.len(),
            ds.n_rows()
        )));
    }
    let collection = GroupCollection::load(groups, Setting::All)?;
    let idx: Vec<usize> = (0..ds.n_rows()).collect();
    write_audit_report(out, preds.probs(), &ds.outcomes, &ds, &idx, &collection, d)?;
    Ok(())
}

/// Enforces MC or MA over the whole file and writes the corrected
/// predictions plus the learned circuit.
#[allow(clippy::too_many_arguments)]
pub fn cmd_postprocess(
    data: &Path,
    schema: &Path,
    preds: &Path,
    groups: &Path,
    kind: &str,
    alpha: f64,
    d: usize,
    seed: u64,
    out_preds: &Path,
    out_circuit: &Path,
) -> Result<()> {
    if alpha <= 0.0 {
        return Err(Error::Usage("alpha must be positive".into()));
    }
    if d == 0 {
        return Err(Error::Usage("d must be at least 1".into()));
    }
    let schema = FeatureSchema::load(schema)?;
    let ds = load_csv(data, &schema)?;
    let preds = PredictionVector::load(preds)?;
    if preds.len() != ds.n_rows() {
        return Err(Error::Usage(format!(
            "{} predictions for {} data rows",
            preds.len(),
            ds.n_rows()
        )));
    }
    let collection = GroupCollection::load(groups, Setting::All)?;
    let idx: Vec<usize> = (0..ds.n_rows()).collect();
    let outcome = match kind {
        "mc" => enforce_mc(
            &ds,
            &idx,
            &preds,
            &collection,
            &ds.outcomes,
            alpha,
            d,
            seed,
            crate::postprocess::DEFAULT_ITERATION_CAP,
        )?,
        "ma" => enforce_ma(
            &ds,
            &idx,
            &preds,
            &collection,
            &ds.outcomes,
            alpha,
            seed,
            crate::postprocess::DEFAULT_ITERATION_CAP,
        )?,
        other => return Err(Error::Usage(format!("kind must be mc or ma, got `{other}`"))),
    };
    outcome.predictions.save(out_preds)?;
    outcome.circuit.save(out_circuit)
}

/// Replays a circuit file over a prediction file.
pub fn cmd_apply(
    preds: &Path,
    data: &Path,
    schema: &Path,
    circuit: &Path,
    out: &Path,
) -> Result<()> {
    let schema = FeatureSchema::load(schema)?;
    let ds = load_csv(data, &schema)?;
    let preds = PredictionVector::load(preds)?;
    if preds.len() != ds.n_rows() {
        return Err(Error::Usage(format!(
            "{} predictions for {} data rows",
            preds.len(),
            ds.n_rows()
        )));
    }
    let circuit = RuleCircuit::load(circuit)?;
    let idx: Vec<usize> = (0..ds.n_rows()).collect();
    let adjusted = apply_circuit(&ds, &idx, &preds, &circuit)?;
    adjusted.save(out)
}

/// Generates a synthetic dataset and writes its CSV and schema files.
pub fn cmd_synth(
    rows: usize,
    races: u32,
    seed: u64,
    out_csv: &Path,
    out_schema: &Path,
) -> Result<()> {
    if races < 2 {
        return Err(Error::Usage("need at least two race codes".into()));
    }
    if rows == 0 {
        return Err(Error::Usage("need at least one row".into()));
    }
    let ds = generate_synthetic(rows, races, seed);
    ds.write_csv(out_csv)?;
    ds.schema.save(out_schema)
}

/// Convenience wrapper used by tests: worst-group MC alpha of a
/// prediction file restricted to `idx`.
pub fn audit_alpha(
    ds: &Dataset,
    probs: &[f64],
    idx: &[usize],
    collection: &GroupCollection,
    d: usize,
) -> Result<f64> {
    Ok(mc_alpha(probs, &ds.outcomes, ds, idx, collection, d)?.alpha)
}

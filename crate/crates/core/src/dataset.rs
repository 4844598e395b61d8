//! Tabular data: schema, validated raw table, deterministic splits,
//! feature encoding, and a synthetic census-like generator.
//!
//! Raw cells stay untouched for group membership tests; the network only
//! ever sees the encoded matrix.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::textio::{fmt_cell, fmt_g17, read_to_string, write_string};
use rand::Rng;
use std::ops::Range;
use std::path::Path;

/// Kind of one raw column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnKind {
    Binary,
    /// Values in [0, cardinality).
    Categorical(u32),
    /// Values in [min, max].
    Continuous(f64, f64),
}

impl ColumnKind {
    pub fn encoded_width(&self) -> usize {
        match self {
            ColumnKind::Binary => 1,
            ColumnKind::Categorical(c) => *c as usize,
            ColumnKind::Continuous(_, _) => 1,
        }
    }

    fn is_integer(&self) -> bool {
        !matches!(self, ColumnKind::Continuous(_, _))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<(String, ColumnKind)>) -> Result<Self> {
        let mut names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate column name".into()));
        }
        for (name, kind) in &columns {
            match kind {
                ColumnKind::Categorical(c) if *c < 2 => {
                    return Err(Error::Schema(format!(
                        "column {name}: categorical cardinality must be at least 2"
                    )));
                }
                ColumnKind::Continuous(lo, hi) if lo >= hi => {
                    return Err(Error::Schema(format!("column {name}: min must be below max")));
                }
                _ => {}
            }
        }
        Ok(FeatureSchema { columns })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Total encoded feature width.
    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(|(_, k)| k.encoded_width()).sum()
    }

    fn validate_cell(&self, row: usize, col: usize, value: f64) -> Result<()> {
        let (name, kind) = &self.columns[col];
        let bad = |msg: String| Error::CellDomain {
            row,
            column: name.clone(),
            value: fmt_cell(value, kind.is_integer()),
            msg,
        };
        match kind {
            ColumnKind::Binary => {
                if value != 0.0 && value != 1.0 {
                    return Err(bad("not in {0, 1}".into()));
                }
            }
            ColumnKind::Categorical(c) => {
                if value.fract() != 0.0 || value < 0.0 || value >= *c as f64 {
                    return Err(bad(format!("outside [0, {c})")));
                }
            }
            ColumnKind::Continuous(lo, hi) => {
                if !(value >= *lo && value <= *hi) {
                    return Err(bad(format!("outside [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    /// Schema text format: one `name,kind[,params]` line per column.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, kind) in &self.columns {
            match kind {
                ColumnKind::Binary => out.push_str(&format!("{name},binary\n")),
                ColumnKind::Categorical(c) => out.push_str(&format!("{name},categorical,{c}\n")),
                ColumnKind::Continuous(lo, hi) => {
                    out.push_str(&format!("{name},continuous,{},{}\n", fmt_g17(*lo), fmt_g17(*hi)))
                }
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
        let mut columns = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() < 2 {
                return Err(perr(i + 1, "expected `name,kind[,params]`".into()));
            }
            let name = parts[0].to_string();
            let kind = match parts[1] {
                "binary" => ColumnKind::Binary,
                "categorical" => {
                    if parts.len() != 3 {
                        return Err(perr(i + 1, "categorical needs a cardinality".into()));
                    }
                    let c = parts[2]
                        .parse::<u32>()
                        .map_err(|_| perr(i + 1, format!("bad cardinality `{}`", parts[2])))?;
                    ColumnKind::Categorical(c)
                }
                "continuous" => {
                    if parts.len() != 4 {
                        return Err(perr(i + 1, "continuous needs min and max".into()));
                    }
                    let lo = parts[2]
                        .parse::<f64>()
                        .map_err(|_| perr(i + 1, format!("bad min `{}`", parts[2])))?;
                    let hi = parts[3]
                        .parse::<f64>()
                        .map_err(|_| perr(i + 1, format!("bad max `{}`", parts[3])))?;
                    ColumnKind::Continuous(lo, hi)
                }
                other => return Err(perr(i + 1, format!("unknown column kind `{other}`"))),
            };
            columns.push((name, kind));
        }
        FeatureSchema::new(columns)
    }
}

/// Validated raw table plus binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    /// Row-major cells, n_rows x n_columns. Integer-valued kinds store
    /// exact integers in the f64.
    raw: Vec<f64>,
    pub outcomes: Vec<u8>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, raw: Vec<f64>, outcomes: Vec<u8>) -> Result<Self> {
        let n_cols = schema.n_columns();
        if n_cols == 0 || raw.len() % n_cols != 0 {
            return Err(Error::Schema("raw table shape does not match schema".into()));
        }
        let n_rows = raw.len() / n_cols;
        if outcomes.len() != n_rows {
            return Err(Error::Schema(format!(
                "{} outcomes for {n_rows} rows",
                outcomes.len()
            )));
        }
        for r in 0..n_rows {
            for c in 0..n_cols {
                schema.validate_cell(r, c, raw[r * n_cols + c])?;
            }
            if outcomes[r] > 1 {
                return Err(Error::Outcome {
                    row: r,
                    value: outcomes[r].to_string(),
                });
            }
        }
        Ok(Dataset { schema, raw, outcomes, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.raw[row * self.schema.n_columns() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.schema.n_columns();
        &self.raw[row * w..(row + 1) * w]
    }

    /// CSV with header `col,...,col,__y`, one data row per dataset row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, _) in &self.schema.columns {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("__y\n");
        for r in 0..self.n_rows {
            for (c, (_, kind)) in self.schema.columns.iter().enumerate() {
                out.push_str(&fmt_cell(self.cell(r, c), kind.is_integer()));
                out.push(',');
            }
            out.push_str(&self.outcomes[r].to_string());
            out.push('\n');
        }
        write_string(path, &out)
    }
}

/// Loads and validates a CSV against `schema`. The header must list the
/// schema columns in order, then `__y`.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file".into(),
        })?;
    let expected: Vec<&str> = schema
        .columns
        .iter()
        .map(|(n, _)| n.as_str())
        .chain(std::iter::once("__y"))
        .collect();
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    if found != expected {
        return Err(Error::HeaderMismatch {
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let n_cols = schema.n_columns();
    let mut raw = Vec::new();
    let mut outcomes = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n_cols + 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected {} cells, found {}", n_cols + 1, cells.len()),
            });
        }
        let row = outcomes.len();
        for (c, cell) in cells[..n_cols].iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad cell `{cell}`"),
            })?;
            schema.validate_cell(row, c, value)?;
            raw.push(value);
        }
        let y = cells[n_cols];
        match y {
            "0" => outcomes.push(0),
            "1" => outcomes.push(1),
            _ => {
                return Err(Error::Outcome {
                    row,
                    value: y.to_string(),
                })
            }
        }
    }
    Dataset::new(schema.clone(), raw, outcomes)
}

/// Split fractions plus the post-processing carve-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Fraction p of the training pool reserved for post-processing.
    pub postproc_frac_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, postproc: f64, seed: u64) -> Result<Self> {
        if train < 0.0 || val < 0.0 || test < 0.0 {
            return Err(Error::Split("fractions must be nonnegative".into()));
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::Split("fractions must sum to 1".into()));
        }
        if !(0.0..1.0).contains(&postproc) {
            return Err(Error::Split("postprocessing fraction must lie in [0, 1)".into()));
        }
        Ok(SplitSpec {
            train_frac: train,
            val_frac: val,
            test_frac: test,
            postproc_frac_of_train: postproc,
            seed,
        })
    }

    /// 0.60/0.20/0.20 fractions with the given postprocessing carve.
    pub fn default_with_seed(postproc: f64, seed: u64) -> Self {
        SplitSpec {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            postproc_frac_of_train: postproc,
            seed,
        }
    }
}

/// Disjoint row-index lists. `train` is the pool minus the postprocessing
/// carve-out; `pool()` restores the full training portion.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub postproc: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Full training pool (postproc rows first, matching the carve order).
    pub fn pool(&self) -> Vec<usize> {
        let mut p = self.postproc.clone();
        p.extend_from_slice(&self.train);
        p
    }
}

/// Shuffles rows with the split stream of `spec.seed` and carves the four
/// lists. The postprocessing set is the first ceil(p * pool) shuffled
/// training-pool indices.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let n = ds.n_rows();
    let pool_count = (spec.train_frac * n as f64).round() as usize;
    let val_count = (spec.val_frac * n as f64).round() as usize;
    if pool_count + val_count > n {
        return Err(Error::Split("fractions allocate more rows than exist".into()));
    }
    let test_count = n - pool_count - val_count;
    for (frac, count, name) in [
        (spec.train_frac, pool_count, "train"),
        (spec.val_frac, val_count, "val"),
        (spec.test_frac, test_count, "test"),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::Split(format!("{name} split is empty for {n} rows")));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(spec.seed, Stream::SplitShuffle);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let pool = &order[..pool_count];
    let pp_count = (spec.postproc_frac_of_train * pool_count as f64).ceil() as usize;
    Ok(Splits {
        postproc: pool[..pp_count].to_vec(),
        train: pool[pp_count..].to_vec(),
        val: order[pool_count..pool_count + val_count].to_vec(),
        test: order[pool_count + val_count..].to_vec(),
    })
}

/// Encoded feature matrix over every dataset row.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    /// n_rows x width, row-major.
    pub data: Vec<f64>,
    pub width: usize,
    /// Per raw column, its slice of encoded feature indices.
    pub encoding_map: Vec<Range<usize>>,
    /// (mean, stddev) per continuous column, fit on the training split.
    pub standardization: Vec<Option<(f64, f64)>>,
    n_rows: usize,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    /// Copies the listed rows into a dense batch.
    pub fn gather(&self, idx: &[usize]) -> crate::matrix::Matrix {
        let mut m = crate::matrix::Matrix::zeros(idx.len(), self.width);
        for (out_r, &r) in idx.iter().enumerate() {
            m.row_mut(out_r).copy_from_slice(self.row(r));
        }
        m
    }
}

/// One-hot categoricals, z-scored continuous columns (statistics from
/// `train_idx` only, zero stddev replaced by 1), binary pass-through.
pub fn fit_encoder(ds: &Dataset, train_idx: &[usize]) -> Result<EncodedMatrix> {
    if train_idx.is_empty() {
        return Err(Error::Split("encoder needs a nonempty training split".into()));
    }
    let n_cols = ds.schema.n_columns();
    let width = ds.schema.encoded_width();

    let mut encoding_map = Vec::with_capacity(n_cols);
    let mut standardization = Vec::with_capacity(n_cols);
    let mut offset = 0;
    for (c, (_, kind)) in ds.schema.columns.iter().enumerate() {
        let w = kind.encoded_width();
        encoding_map.push(offset..offset + w);
        offset += w;
        standardization.push(match kind {
            ColumnKind::Continuous(_, _) => {
                let n = train_idx.len() as f64;
                let mean = train_idx.iter().map(|&r| ds.cell(r, c)).sum::<f64>() / n;
                let var = train_idx
                    .iter()
                    .map(|&r| {
                        let d = ds.cell(r, c) - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                let std = var.sqrt();
                Some((mean, if std == 0.0 { 1.0 } else { std }))
            }
            _ => None,
        });
    }

    let n_rows = ds.n_rows();
    let mut data = vec![0.0; n_rows * width];
    for r in 0..n_rows {
        let row = &mut data[r * width..(r + 1) * width];
        for (c, (_, kind)) in ds.schema.columns.iter().enumerate() {
            let slot = encoding_map[c].clone();
            let v = ds.cell(r, c);
            match kind {
                ColumnKind::Binary => row[slot.start] = v,
                ColumnKind::Categorical(_) => row[slot.start + v as usize] = 1.0,
                ColumnKind::Continuous(_, _) => {
                    let (mean, std) = standardization[c].unwrap();
                    row[slot.start] = (v - mean) / std;
                }
            }
        }
    }
    Ok(EncodedMatrix { data, width, encoding_map, standardization, n_rows })
}

/// Column names the synthetic generator emits, in order.
pub const SYNTH_RACE: &str = "race";
pub const SYNTH_DIS: &str = "dis";

/// Desk-scale census-like stand-in: a power-law race column, a disability
/// flag with marginal near 0.15, three continuous covariates, and outcomes
/// from a logistic model whose intercept and slope depend on group
/// membership, so an undertrained predictor is measurably miscalibrated
/// per group.
pub fn generate_synthetic(n_rows: usize, n_race_codes: u32, seed: u64) -> Dataset {
    assert!(n_race_codes >= 2, "need at least two race codes");
    assert!(n_rows > 0);
    let mut rng = stream_rng(seed, Stream::DataGen);

    // rank^-1.5 race frequencies
    let weights: Vec<f64> = (0..n_race_codes).map(|r| ((r + 1) as f64).powf(-1.5)).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }

    // group-dependent logistic coefficients, fixed per seed; rare races
    // flip the covariate slope sign, and disability flips it again, so a
    // predictor that only picks up the majority pattern is confidently
    // wrong on minority groups
    let race_shift: Vec<f64> = (0..n_race_codes).map(|_| rng.gen_range(-1.2..1.2)).collect();
    let race_slope: Vec<f64> = (0..n_race_codes).map(|_| rng.gen_range(0.9..1.8)).collect();
    let dis_inter: Vec<f64> = (0..n_race_codes).map(|_| rng.gen_range(-1.2..1.2)).collect();
    let slope_sign: Vec<f64> = (0..n_race_codes)
        .map(|r| if r >= n_race_codes.div_ceil(2) { -1.0 } else { 1.0 })
        .collect();
    let dis_shift = -0.9;

    let schema = FeatureSchema::new(vec![
        (SYNTH_RACE.to_string(), ColumnKind::Categorical(n_race_codes)),
        (SYNTH_DIS.to_string(), ColumnKind::Binary),
        ("age".to_string(), ColumnKind::Continuous(18.0, 90.0)),
        ("edu".to_string(), ColumnKind::Continuous(0.0, 24.0)),
        ("hours".to_string(), ColumnKind::Continuous(0.0, 99.0)),
    ])
    .expect("static schema is valid");

    let mut raw = Vec::with_capacity(n_rows * 5);
    let mut outcomes = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let u: f64 = rng.gen();
        let race = cdf.iter().position(|&c| u <= c).unwrap_or(cdf.len() - 1);
        let dis = if rng.gen::<f64>() < 0.15 { 1.0 } else { 0.0 };
        let age = rng.gen_range(18.0..=90.0);
        let edu = rng.gen_range(0.0..=24.0);
        let hours = rng.gen_range(0.0..=99.0);

        let age_n = (age - 54.0) / 36.0;
        let edu_n = (edu - 12.0) / 12.0;
        let hours_n = (hours - 49.5) / 49.5;
        let sign = slope_sign[race] * (1.0 - 2.0 * dis);
        let logit = race_shift[race]
            + dis * (dis_shift + dis_inter[race])
            + sign * race_slope[race] * (0.9 * age_n + 1.1 * edu_n + 0.6 * hours_n);
        let p = 1.0 / (1.0 + (-logit).exp());
        let y = if rng.gen::<f64>() < p { 1 } else { 0 };

        raw.extend_from_slice(&[race as f64, dis, age, edu, hours]);
        outcomes.push(y);
    }
    Dataset::new(schema, raw, outcomes).expect("generator respects its own schema")
}

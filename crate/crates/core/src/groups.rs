//! Demographic subgroups as conjunctions of raw-column equality tests,
//! and the five experimental group collections.

use crate::dataset::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::textio::{read_to_string, write_string};
use std::path::Path;

/// Conjunction of `(column, value)` equality tests over raw cells.
/// An empty clause list denotes the full population.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub clauses: Vec<(String, f64)>,
    pub label: String,
}

impl GroupSpec {
    pub fn new(label: impl Into<String>, clauses: Vec<(String, f64)>) -> Result<Self> {
        let mut cols: Vec<&str> = clauses.iter().map(|(c, _)| c.as_str()).collect();
        cols.sort_unstable();
        if cols.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("group clause repeats a column".into()));
        }
        Ok(GroupSpec { clauses, label: label.into() })
    }

    /// Clause expression, e.g. `race=3 & dis=1`, or `*` for the full
    /// population. Parseable back by [`GroupSpec::parse_clauses`].
    pub fn clause_expr(&self) -> String {
        if self.clauses.is_empty() {
            return "*".to_string();
        }
        self.clauses
            .iter()
            .map(|(c, v)| {
                if v.fract() == 0.0 {
                    format!("{c}={}", *v as i64)
                } else {
                    format!("{c}={v}")
                }
            })
            .collect::<Vec<_>>()
            .join(" & ")
    }

    pub fn parse_clauses(label: impl Into<String>, expr: &str) -> Result<Self> {
        let expr = expr.trim();
        if expr == "*" || expr.is_empty() {
            return GroupSpec::new(label, Vec::new());
        }
        let mut clauses = Vec::new();
        for part in expr.split('&') {
            let part = part.trim();
            let (col, val) = part
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("bad group clause `{part}`")))?;
            let value: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad clause value `{val}`")))?;
            clauses.push((col.trim().to_string(), value));
        }
        GroupSpec::new(label, clauses)
    }
}

/// Returns, in ascending order, the subset of `idx` whose raw cells
/// satisfy every clause of `g`.
pub fn members(g: &GroupSpec, ds: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    let cols: Vec<usize> = g
        .clauses
        .iter()
        .map(|(name, _)| ds.schema.column_index(name))
        .collect::<Result<_>>()?;
    let mut out: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&row| {
            cols.iter()
                .zip(g.clauses.iter())
                .all(|(&c, (_, v))| ds.cell(row, c) == *v)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// The five group-collection settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    All,
    Big,
    Small,
    Dis,
    Dlfr,
}

impl Setting {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Setting::All),
            "big" => Ok(Setting::Big),
            "small" => Ok(Setting::Small),
            "dis" => Ok(Setting::Dis),
            "dlfr" => Ok(Setting::Dlfr),
            other => Err(Error::Usage(format!("unknown setting `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Setting::All => "all",
            Setting::Big => "big",
            Setting::Small => "small",
            Setting::Dis => "dis",
            Setting::Dlfr => "dlfr",
        }
    }
}

/// Ordered set of groups for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCollection {
    pub groups: Vec<GroupSpec>,
    pub setting: Setting,
}

/// Races comprising more than this fraction of the dataset are "big".
pub const DEFAULT_SIZE_THRESHOLD: f64 = 0.0025;

impl GroupCollection {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// One `label: clause & clause` line per group.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            out.push_str(&format!("{}: {}\n", g.label, g.clause_expr()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path, setting: Setting) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut groups = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, expr) = line.split_once(':').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected `label: clauses`".into(),
            })?;
            groups.push(GroupSpec::parse_clauses(label.trim(), expr)?);
        }
        let mut labels: Vec<&str> = groups.iter().map(|g| g.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: "duplicate group label".into(),
            });
        }
        Ok(GroupCollection { groups, setting })
    }
}

fn race_group(race_col: &str, code: u32) -> GroupSpec {
    GroupSpec::new(format!("{race_col}{code}"), vec![(race_col.to_string(), code as f64)])
        .expect("single clause")
}

fn dis_group(dis_col: &str) -> GroupSpec {
    GroupSpec::new(dis_col.to_string(), vec![(dis_col.to_string(), 1.0)]).expect("single clause")
}

fn race_dis_group(race_col: &str, code: u32, dis_col: &str) -> GroupSpec {
    GroupSpec::new(
        format!("{race_col}{code}_{dis_col}"),
        vec![(race_col.to_string(), code as f64), (dis_col.to_string(), 1.0)],
    )
    .expect("two distinct columns")
}

/// Builds the collection for `setting`.
///
/// A race code is computationally possible when, for every seed in
/// `seeds`, its disabled members appear at least once in each of the
/// train pool, validation, and test splits derived from `split_spec`
/// with that seed. Size comparisons divide the race's row count by the
/// total dataset rows and compare against `size_threshold_frac`
/// (big: strictly above; small: at or below).
pub fn build_collection(
    ds: &Dataset,
    race_col: &str,
    dis_col: &str,
    split_spec: &SplitSpec,
    seeds: &[u64],
    setting: Setting,
    size_threshold_frac: f64,
) -> Result<GroupCollection> {
    let race_idx = ds.schema.column_index(race_col)?;
    ds.schema.column_index(dis_col)?;
    let n_codes = match ds.schema.columns[race_idx].1 {
        crate::dataset::ColumnKind::Categorical(c) => c,
        _ => return Err(Error::Schema(format!("column {race_col} is not categorical"))),
    };

    if setting == Setting::Dis {
        return Ok(GroupCollection { groups: vec![dis_group(dis_col)], setting });
    }

    // possibility check across all evaluation seeds
    let all_rows: Vec<usize> = (0..ds.n_rows()).collect();
    let mut possible: Vec<u32> = (0..n_codes).collect();
    for &seed in seeds {
        let spec = SplitSpec { seed, ..*split_spec };
        let splits = split(ds, &spec)?;
        let pool = splits.pool();
        possible.retain(|&code| {
            let g = race_dis_group(race_col, code, dis_col);
            [&pool, &splits.val, &splits.test].iter().all(|idx| {
                !members(&g, ds, idx).expect("validated columns").is_empty()
            })
        });
        if possible.is_empty() {
            break;
        }
    }
    if possible.is_empty() && matches!(setting, Setting::All | Setting::Dlfr) {
        return Err(Error::NoPossibleRace);
    }

    let total = ds.n_rows() as f64;
    let race_count = |code: u32| -> usize {
        members(&race_group(race_col, code), ds, &all_rows)
            .expect("validated columns")
            .len()
    };

    let chosen: Vec<u32> = match setting {
        Setting::All => possible.clone(),
        Setting::Big => possible
            .iter()
            .copied()
            .filter(|&c| race_count(c) as f64 / total > size_threshold_frac)
            .collect(),
        Setting::Small => possible
            .iter()
            .copied()
            .filter(|&c| race_count(c) as f64 / total <= size_threshold_frac)
            .collect(),
        Setting::Dlfr => {
            // least frequent possible race; ties go to the lowest code
            let lfr = possible
                .iter()
                .copied()
                .min_by_key(|&c| (race_count(c), c))
                .expect("possible set nonempty");
            let groups = vec![
                dis_group(dis_col),
                race_group(race_col, lfr),
                race_dis_group(race_col, lfr, dis_col),
            ];
            return Ok(GroupCollection { groups, setting });
        }
        Setting::Dis => unreachable!(),
    };

    let mut groups: Vec<GroupSpec> = chosen.iter().map(|&c| race_group(race_col, c)).collect();
    groups.push(dis_group(dis_col));
    groups.extend(chosen.iter().map(|&c| race_dis_group(race_col, c, dis_col)));
    Ok(GroupCollection { groups, setting })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, ColumnKind, FeatureSchema, SYNTH_DIS, SYNTH_RACE};

    fn toy() -> Dataset {
        let schema = FeatureSchema::new(vec![
            ("race".into(), ColumnKind::Categorical(8)),
            ("dis".into(), ColumnKind::Binary),
        ])
        .unwrap();
        // rows: (5,0) (3,1) (5,1)
        Dataset::new(schema, vec![5.0, 0.0, 3.0, 1.0, 5.0, 1.0], vec![0, 1, 0]).unwrap()
    }

    #[test]
    fn empty_conjunction_is_full_population() {
        let ds = toy();
        let g = GroupSpec::new("all", vec![]).unwrap();
        assert_eq!(members(&g, &ds, &[0, 1, 2]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn single_clause_row_scan() {
        let ds = toy();
        let g = GroupSpec::new("r5", vec![("race".into(), 5.0)]).unwrap();
        assert_eq!(members(&g, &ds, &[0, 1, 2]).unwrap(), vec![0, 2]);
    }

    #[test]
    fn conjunction_equals_intersection() {
        let ds = toy();
        let idx = [0usize, 1, 2];
        let r5 = GroupSpec::new("r5", vec![("race".into(), 5.0)]).unwrap();
        let d1 = GroupSpec::new("d1", vec![("dis".into(), 1.0)]).unwrap();
        let both =
            GroupSpec::new("b", vec![("race".into(), 5.0), ("dis".into(), 1.0)]).unwrap();
        let a = members(&r5, &ds, &idx).unwrap();
        let b = members(&d1, &ds, &idx).unwrap();
        let expect: Vec<usize> = a.iter().copied().filter(|i| b.contains(i)).collect();
        assert_eq!(members(&both, &ds, &idx).unwrap(), expect);
    }

    #[test]
    fn unknown_column_is_reported() {
        let ds = toy();
        let g = GroupSpec::new("x", vec![("nope".into(), 1.0)]).unwrap();
        assert!(matches!(members(&g, &ds, &[0]), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn members_subset_of_unsorted_idx_is_sorted() {
        let ds = toy();
        let g = GroupSpec::new("r5", vec![("race".into(), 5.0)]).unwrap();
        assert_eq!(members(&g, &ds, &[2, 0]).unwrap(), vec![0, 2]);
    }

    fn synth_collection(setting: Setting) -> (Dataset, GroupCollection, SplitSpec, Vec<u64>) {
        let ds = generate_synthetic(20000, 8, 7);
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 0.25, 0).unwrap();
        let seeds: Vec<u64> = (0..3).collect();
        let c = build_collection(
            &ds,
            SYNTH_RACE,
            SYNTH_DIS,
            &spec,
            &seeds,
            setting,
            DEFAULT_SIZE_THRESHOLD,
        )
        .unwrap();
        (ds, c, spec, seeds)
    }

    #[test]
    fn dis_setting_is_exactly_one_group() {
        let (_, c, _, _) = synth_collection(Setting::Dis);
        assert_eq!(c.len(), 1);
        assert_eq!(c.groups[0].clauses, vec![("dis".to_string(), 1.0)]);
    }

    #[test]
    fn all_setting_has_2n_plus_1_groups() {
        let (_, c, _, _) = synth_collection(Setting::All);
        assert_eq!(c.len() % 2, 1);
        let n = (c.len() - 1) / 2;
        assert!(n >= 1);
        // structure: n race groups, the dis group, n race&dis groups
        assert_eq!(c.groups[n].clauses.len(), 1);
        assert_eq!(c.groups[n].clauses[0].0, "dis");
        for g in &c.groups[n + 1..] {
            assert_eq!(g.clauses.len(), 2);
        }
    }

    #[test]
    fn dlfr_is_dis_lfr_and_intersection() {
        let (ds, c, _, _) = synth_collection(Setting::Dlfr);
        assert_eq!(c.len(), 3);
        assert_eq!(c.groups[0].clauses.len(), 1);
        assert_eq!(c.groups[1].clauses.len(), 1);
        assert_eq!(c.groups[1].clauses[0].0, "race");
        assert_eq!(c.groups[2].clauses.len(), 2);
        // the LFR really is a least frequent possible race
        let all: Vec<usize> = (0..ds.n_rows()).collect();
        let lfr_code = c.groups[1].clauses[0].1;
        let lfr_count = members(&c.groups[1], &ds, &all).unwrap().len();
        let (_, all_c, _, _) = synth_collection(Setting::All);
        let n = (all_c.len() - 1) / 2;
        for g in &all_c.groups[..n] {
            let count = members(g, &ds, &all).unwrap().len();
            assert!(
                count > lfr_count || (count == lfr_count && g.clauses[0].1 >= lfr_code),
                "race {} smaller than chosen LFR",
                g.clauses[0].1
            );
        }
    }

    #[test]
    fn big_and_small_partition_the_possible_races() {
        let (_, all_c, _, _) = synth_collection(Setting::All);
        let (_, big, _, _) = synth_collection(Setting::Big);
        let (_, small, _, _) = synth_collection(Setting::Small);
        let race_codes = |c: &GroupCollection| -> Vec<f64> {
            let n = (c.len() - 1) / 2;
            c.groups[..n].iter().map(|g| g.clauses[0].1).collect()
        };
        let mut union = race_codes(&big);
        union.extend(race_codes(&small));
        union.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect = race_codes(&all_c);
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(union, expect);
    }

    #[test]
    fn every_group_present_in_every_split_for_every_seed() {
        for setting in [Setting::All, Setting::Big, Setting::Dlfr] {
            let (ds, c, spec, seeds) = synth_collection(setting);
            for &seed in &seeds {
                let s = split(&ds, &SplitSpec { seed, ..spec }).unwrap();
                for g in &c.groups {
                    for idx in [&s.pool(), &s.val, &s.test] {
                        assert!(
                            !members(g, &ds, idx).unwrap().is_empty(),
                            "{} empty under seed {seed}",
                            g.label
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn collection_text_round_trip() {
        let (_, c, _, _) = synth_collection(Setting::Dlfr);
        let dir = std::env::temp_dir().join("mcfair_groups");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.txt");
        c.save(&path).unwrap();
        assert_eq!(GroupCollection::load(&path, Setting::Dlfr).unwrap(), c);
    }
}

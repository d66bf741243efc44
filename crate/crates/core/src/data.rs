//! Commit-aggregate dataset: CSV ingestion, log transform of predictors,
//! dense project/language indexing and descriptive summaries.
//!
//! Rows are one observation per `(project, language)` pair. Predictors are
//! used on the natural-log scale in the fixed order
//! `commits, insertions, age, devs`; `age` is measured in days.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analyze::Scenario;
use crate::error::{Error, Result};
use crate::stats;

pub const N_PREDICTORS: usize = 4;
pub const PREDICTOR_NAMES: [&str; N_PREDICTORS] = ["commits", "insertions", "age", "devs"];
pub const CSV_HEADER: [&str; 7] = [
    "project",
    "language",
    "commits",
    "insertions",
    "age",
    "devs",
    "bugs",
];
pub const SUMMARY_PROBS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub project: String,
    pub language: String,
    pub commits: f64,
    pub insertions: f64,
    pub age: f64,
    pub devs: f64,
    pub bugs: u64,
}

impl RawRecord {
    pub fn predictors(&self) -> [f64; N_PREDICTORS] {
        [self.commits, self.insertions, self.age, self.devs]
    }
}

/// How nonpositive predictor values are treated before taking logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogPolicy {
    /// `ln(x)`; zero or negative predictors are rejected.
    #[default]
    Strict,
    /// `ln(x + 0.5)` for every predictor value.
    Offset,
}

impl LogPolicy {
    pub const OFFSET: f64 = 0.5;

    pub fn forward(self, value: f64) -> Option<f64> {
        match self {
            LogPolicy::Strict if value > 0.0 => Some(value.ln()),
            LogPolicy::Strict => None,
            LogPolicy::Offset if value + Self::OFFSET > 0.0 => Some((value + Self::OFFSET).ln()),
            LogPolicy::Offset => None,
        }
    }

    pub fn inverse(self, log_value: f64) -> f64 {
        match self {
            LogPolicy::Strict => log_value.exp(),
            LogPolicy::Offset => log_value.exp() - Self::OFFSET,
        }
    }
}

/// Maps natural-unit predictors to the model's design scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorTransform {
    pub policy: LogPolicy,
    /// Subtracted from each log predictor; all zeros when centering is off.
    pub shift: [f64; N_PREDICTORS],
}

impl PredictorTransform {
    pub fn apply(&self, natural: [f64; N_PREDICTORS]) -> Option<[f64; N_PREDICTORS]> {
        let mut x = [0.0; N_PREDICTORS];
        for k in 0..N_PREDICTORS {
            x[k] = self.policy.forward(natural[k])? - self.shift[k];
        }
        Some(x)
    }

    pub fn invert(&self, x: [f64; N_PREDICTORS]) -> [f64; N_PREDICTORS] {
        let mut natural = [0.0; N_PREDICTORS];
        for k in 0..N_PREDICTORS {
            natural[k] = self.policy.inverse(x[k] + self.shift[k]);
        }
        natural
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparedRow {
    pub project_index: usize,
    pub language_index: usize,
    pub x: [f64; N_PREDICTORS],
    pub bugs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub policy: LogPolicy,
    /// Subtract the per-predictor mean of the log values.
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<PreparedRow>,
    pub language_names: Vec<String>,
    pub project_names: Vec<String>,
    pub transform: PredictorTransform,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_languages(&self) -> usize {
        self.language_names.len()
    }

    pub fn n_projects(&self) -> usize {
        self.project_names.len()
    }

    pub fn bugs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.bugs as f64).collect()
    }

    pub fn language_index(&self, name: &str) -> Option<usize> {
        self.language_names.iter().position(|l| l == name)
    }

    /// Builds a dataset from already prepared rows, checking index coverage.
    pub fn from_rows(
        rows: Vec<PreparedRow>,
        language_names: Vec<String>,
        project_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            rows,
            language_names,
            project_names,
            transform: PredictorTransform::default(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Dataset("no rows".into()));
        }
        let mut seen_l = vec![false; self.n_languages()];
        let mut seen_p = vec![false; self.n_projects()];
        let mut pairs = HashSet::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.language_index >= seen_l.len() || r.project_index >= seen_p.len() {
                return Err(Error::Dataset(format!("row {i}: index out of range")));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("row {i}: non-finite predictor")));
            }
            if !pairs.insert((r.project_index, r.language_index)) {
                return Err(Error::Dataset(format!(
                    "row {i}: duplicate (project, language) pair"
                )));
            }
            seen_l[r.language_index] = true;
            seen_p[r.project_index] = true;
        }
        if let Some(l) = seen_l.iter().position(|s| !s) {
            return Err(Error::Dataset(format!("language {l} has no rows")));
        }
        if let Some(p) = seen_p.iter().position(|s| !s) {
            return Err(Error::Dataset(format!("project {p} has no rows")));
        }
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

/// Parses the seven-column dataset format. Columns may appear in any order
/// but the header must name exactly the expected attributes.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data {
        line: 1,
        message: e.to_string(),
    })?;
    let mut columns = [usize::MAX; 7];
    for (c, name) in CSV_HEADER.iter().enumerate() {
        columns[c] = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data {
                line: 1,
                message: format!("missing column `{name}`"),
            })?;
    }
    if headers.len() != CSV_HEADER.len() {
        return Err(Error::Data {
            line: 1,
            message: format!(
                "expected {} columns, header has {}",
                CSV_HEADER.len(),
                headers.len()
            ),
        });
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| rec.get(columns[c]).unwrap_or("");
        let number = |c: usize| -> Result<f64> {
            let raw = field(c);
            let v: f64 = raw.parse().map_err(|_| Error::Data {
                line,
                message: format!("non-numeric {} value `{raw}`", CSV_HEADER[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    line,
                    message: format!("non-finite {} value", CSV_HEADER[c]),
                });
            }
            if v < 0.0 {
                return Err(Error::Data {
                    line,
                    message: format!("negative {} value {v}", CSV_HEADER[c]),
                });
            }
            Ok(v)
        };
        let bugs_raw = number(6)?;
        if bugs_raw.fract() != 0.0 {
            return Err(Error::Data {
                line,
                message: format!("bugs must be an integer count, got {bugs_raw}"),
            });
        }
        let record = RawRecord {
            project: field(0).to_string(),
            language: field(1).to_string(),
            commits: number(2)?,
            insertions: number(3)?,
            age: number(4)?,
            devs: number(5)?,
            bugs: bugs_raw as u64,
        };
        if (record.bugs as f64) > record.commits {
            return Err(Error::Data {
                line,
                message: format!("bugs exceed commits at line {line}"),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Log-transforms predictors and assigns contiguous indices to languages
/// and projects in order of first appearance.
pub fn prepare(records: &[RawRecord], options: PrepareOptions) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::Dataset("no records".into()));
    }
    let mut languages: Vec<String> = Vec::new();
    let mut projects: Vec<String> = Vec::new();
    let mut lang_ix: HashMap<&str, usize> = HashMap::new();
    let mut proj_ix: HashMap<&str, usize> = HashMap::new();
    let mut pairs = HashSet::new();
    let mut rows = Vec::with_capacity(records.len());

    for (i, rec) in records.iter().enumerate() {
        let language_index = *lang_ix.entry(&rec.language).or_insert_with(|| {
            languages.push(rec.language.clone());
            languages.len() - 1
        });
        let project_index = *proj_ix.entry(&rec.project).or_insert_with(|| {
            projects.push(rec.project.clone());
            projects.len() - 1
        });
        if !pairs.insert((project_index, language_index)) {
            return Err(Error::Dataset(format!(
                "record {}: duplicate pair ({}, {})",
                i + 1,
                rec.project,
                rec.language
            )));
        }
        let raw = rec.predictors();
        let mut x = [0.0; N_PREDICTORS];
        for k in 0..N_PREDICTORS {
            x[k] = options.policy.forward(raw[k]).ok_or_else(|| {
                Error::Dataset(format!(
                    "record {}: {} = {} cannot be log-transformed under the strict policy \
                     (use the log-offset policy)",
                    i + 1,
                    PREDICTOR_NAMES[k],
                    raw[k]
                ))
            })?;
        }
        rows.push(PreparedRow {
            project_index,
            language_index,
            x,
            bugs: rec.bugs,
        });
    }

    let mut shift = [0.0; N_PREDICTORS];
    if options.center {
        for k in 0..N_PREDICTORS {
            shift[k] = rows.iter().map(|r| r.x[k]).sum::<f64>() / rows.len() as f64;
        }
        for r in &mut rows {
            for k in 0..N_PREDICTORS {
                r.x[k] -= shift[k];
            }
        }
    }

    Ok(Dataset {
        rows,
        language_names: languages,
        project_names: projects,
        transform: PredictorTransform {
            policy: options.policy,
            shift,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_rows: usize,
    pub n_languages: usize,
    pub n_projects: usize,
    pub bug_mean: f64,
    pub bug_variance: f64,
    /// Probabilities at which `predictor_quantiles` are evaluated.
    pub probs: Vec<f64>,
    /// `predictor_quantiles[k][j]`: predictor `k` (log scale, before any
    /// centering) at `probs[j]`.
    pub predictor_quantiles: Vec<Vec<f64>>,
    pub rows_per_language: BTreeMap<String, usize>,
    /// Number of rows → number of projects with that many rows.
    pub rows_per_project: BTreeMap<usize, usize>,
    pub fraction_single_row_projects: f64,
    pub transform: PredictorTransform,
}

pub fn summarize(dataset: &Dataset) -> DataSummary {
    let bugs = dataset.bugs();
    let mut quantiles = Vec::with_capacity(N_PREDICTORS);
    for k in 0..N_PREDICTORS {
        let mut col: Vec<f64> = dataset
            .rows
            .iter()
            .map(|r| r.x[k] + dataset.transform.shift[k])
            .collect();
        col.sort_by(f64::total_cmp);
        quantiles.push(
            SUMMARY_PROBS
                .iter()
                .map(|&p| stats::quantile_sorted(&col, p))
                .collect(),
        );
    }

    let mut per_language = BTreeMap::new();
    let mut per_project = vec![0usize; dataset.n_projects()];
    for r in &dataset.rows {
        *per_language
            .entry(dataset.language_names[r.language_index].clone())
            .or_insert(0) += 1;
        per_project[r.project_index] += 1;
    }
    let mut histogram = BTreeMap::new();
    for &c in &per_project {
        *histogram.entry(c).or_insert(0) += 1;
    }
    let single = histogram.get(&1).copied().unwrap_or(0);

    DataSummary {
        n_rows: dataset.n_rows(),
        n_languages: dataset.n_languages(),
        n_projects: dataset.n_projects(),
        bug_mean: stats::mean(&bugs),
        bug_variance: stats::variance(&bugs),
        probs: SUMMARY_PROBS.to_vec(),
        predictor_quantiles: quantiles,
        rows_per_language: per_language,
        rows_per_project: histogram,
        fraction_single_row_projects: single as f64 / dataset.n_projects().max(1) as f64,
        transform: dataset.transform,
    }
}

impl DataSummary {
    /// Two-column `statistic,value` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value\n");
        s.push_str(&format!("n_rows,{}\n", self.n_rows));
        s.push_str(&format!("n_languages,{}\n", self.n_languages));
        s.push_str(&format!("n_projects,{}\n", self.n_projects));
        s.push_str(&format!("bug_mean,{}\n", self.bug_mean));
        s.push_str(&format!("bug_variance,{}\n", self.bug_variance));
        s.push_str(&format!(
            "fraction_single_row_projects,{}\n",
            self.fraction_single_row_projects
        ));
        for (k, name) in PREDICTOR_NAMES.iter().enumerate() {
            for (j, p) in self.probs.iter().enumerate() {
                s.push_str(&format!(
                    "log_{name}_q{:03},{}\n",
                    (p * 100.0).round() as u32,
                    self.predictor_quantiles[k][j]
                ));
            }
        }
        for (lang, n) in &self.rows_per_language {
            s.push_str(&format!("rows_language[{lang}],{n}\n"));
        }
        for (rows, n) in &self.rows_per_project {
            s.push_str(&format!("projects_with_{rows}_rows,{n}\n"));
        }
        s
    }

    /// Quantile of one log-scale predictor, linear in probability between the
    /// stored summary points when `q` is not one of them.
    fn log_quantile(&self, k: usize, q: f64) -> f64 {
        let probs = &self.probs;
        let vals = &self.predictor_quantiles[k];
        if let Some(j) = probs.iter().position(|&p| (p - q).abs() < 1e-12) {
            return vals[j];
        }
        let j = probs
            .iter()
            .position(|&p| p > q)
            .unwrap_or(probs.len() - 1)
            .max(1);
        let t = (q - probs[j - 1]) / (probs[j] - probs[j - 1]);
        vals[j - 1] + t * (vals[j] - vals[j - 1])
    }
}

/// Scenario with every predictor at its `q`-quantile (log scale) of the data.
pub fn quantile_scenario(summary: &DataSummary, q: f64) -> Result<Scenario> {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut natural = [0.0; N_PREDICTORS];
    for (k, v) in natural.iter_mut().enumerate() {
        *v = summary.transform.policy.inverse(summary.log_quantile(k, q));
    }
    Ok(Scenario {
        commits: natural[0],
        insertions: natural[1],
        age: natural[2],
        devs: natural[3],
        language: None,
        label: format!("q{:.2}", q),
    })
}

/// Exact-quantile scenario computed from the dataset rows rather than the
/// five-point summary.
pub fn dataset_quantile_scenario(dataset: &Dataset, q: f64) -> Result<Scenario> {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    let mut natural = [0.0; N_PREDICTORS];
    for (k, v) in natural.iter_mut().enumerate() {
        let col: Vec<f64> = dataset
            .rows
            .iter()
            .map(|r| r.x[k] + dataset.transform.shift[k])
            .collect();
        *v = dataset.transform.policy.inverse(stats::quantile(&col, q));
    }
    Ok(Scenario {
        commits: natural[0],
        insertions: natural[1],
        age: natural[2],
        devs: natural[3],
        language: None,
        label: format!("q{:.2}", q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_of(lines: &[&str]) -> String {
        let mut s = CSV_HEADER.join(",");
        s.push('\n');
        for l in lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    fn rec(project: &str, language: &str, v: [f64; 4], bugs: u64) -> RawRecord {
        RawRecord {
            project: project.into(),
            language: language.into(),
            commits: v[0],
            insertions: v[1],
            age: v[2],
            devs: v[3],
            bugs,
        }
    }

    #[test]
    fn parses_a_row() {
        let recs = read_csv(csv_of(&["p1,C,100,5000,365,4,10"]).as_bytes()).unwrap();
        assert_eq!(recs, vec![rec("p1", "C", [100.0, 5000.0, 365.0, 4.0], 10)]);
    }

    #[test]
    fn quoted_fields() {
        let recs = read_csv(csv_of(&["\"proj, inc\",\"C++\",3,4,5,6,1"]).as_bytes()).unwrap();
        assert_eq!(recs[0].project, "proj, inc");
        assert_eq!(recs[0].language, "C++");
    }

    #[test]
    fn bugs_over_commits_is_rejected_with_line() {
        let err = read_csv(csv_of(&["p0,C,1,1,1,1,0", "p1,C,100,5000,365,4,101"]).as_bytes())
            .unwrap_err();
        match err {
            Error::Data { line, message } => {
                assert_eq!(line, 3);
                assert!(
                    message.contains("bugs exceed commits at line 3"),
                    "{message}"
                );
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_and_bad_cells() {
        let bad = "project,language,commits,insertions,age,devs\np,C,1,1,1,1\n";
        assert!(matches!(
            read_csv(bad.as_bytes()),
            Err(Error::Data { line: 1, .. })
        ));
        let non_numeric = csv_of(&["p,C,abc,1,1,1,0"]);
        assert!(matches!(
            read_csv(non_numeric.as_bytes()),
            Err(Error::Data { line: 2, .. })
        ));
        let negative = csv_of(&["p,C,1,-1,1,1,0"]);
        assert!(matches!(
            read_csv(negative.as_bytes()),
            Err(Error::Data { line: 2, .. })
        ));
    }

    #[test]
    fn log_transform_examples() {
        let ds = prepare(
            &[rec("a", "C", [1.0, 2.0, 3.0, 4.0], 0)],
            PrepareOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.rows[0].x[0], 0.0);

        let e2 = std::f64::consts::E.powi(2);
        let ds = prepare(
            &[rec("a", "C", [e2, 1.0, 1.0, 1.0], 0)],
            PrepareOptions::default(),
        )
        .unwrap();
        assert!((ds.rows[0].x[0] - 2.0).abs() < 1e-12);

        let zero = [rec("a", "C", [0.0, 1.0, 1.0, 1.0], 0)];
        assert!(prepare(&zero, PrepareOptions::default()).is_err());
        let ds = prepare(
            &zero,
            PrepareOptions {
                policy: LogPolicy::Offset,
                center: false,
            },
        )
        .unwrap();
        assert!((ds.rows[0].x[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn indices_follow_first_appearance() {
        let recs = vec![
            rec("p1", "Go", [1.0; 4], 0),
            rec("p2", "C", [1.0; 4], 0),
            rec("p1", "C", [1.0; 4], 0),
        ];
        let ds = prepare(&recs, PrepareOptions::default()).unwrap();
        assert_eq!(ds.language_names, vec!["Go", "C"]);
        assert_eq!(ds.project_names, vec!["p1", "p2"]);
        assert_eq!(ds.rows[2].project_index, 0);
        assert_eq!(ds.rows[2].language_index, 1);
        ds.validate().unwrap();
    }

    #[test]
    fn duplicate_pair_rejected() {
        let recs = vec![rec("p1", "Go", [1.0; 4], 0), rec("p1", "Go", [2.0; 4], 0)];
        assert!(prepare(&recs, PrepareOptions::default()).is_err());
    }

    #[test]
    fn centering_records_shift() {
        let recs = vec![
            rec("p1", "Go", [1.0, 1.0, 1.0, 1.0], 0),
            rec("p2", "Go", [std::f64::consts::E.powi(2), 1.0, 1.0, 1.0], 0),
        ];
        let ds = prepare(
            &recs,
            PrepareOptions {
                policy: LogPolicy::Strict,
                center: true,
            },
        )
        .unwrap();
        assert!((ds.transform.shift[0] - 1.0).abs() < 1e-12);
        assert!((ds.rows[0].x[0] + 1.0).abs() < 1e-12);
        let back = ds.transform.invert(ds.rows[1].x);
        assert!((back[0] - recs[1].commits).abs() < 1e-9);
    }

    #[test]
    fn summary_of_constant_bugs() {
        let recs: Vec<_> = (0..3)
            .map(|i| rec(&format!("p{i}"), "C", [10.0, 10.0, 10.0, 10.0], 2))
            .collect();
        let s = summarize(&prepare(&recs, PrepareOptions::default()).unwrap());
        assert_eq!(s.bug_mean, 2.0);
        assert_eq!(s.bug_variance, 0.0);
        assert_eq!(s.fraction_single_row_projects, 1.0);
        assert!(s.to_csv().starts_with("statistic,value\nn_rows,3\n"));
    }

    #[test]
    fn quantile_scenarios() {
        let values = [0.0, 1.0, 2.0, 3.0, 4.0];
        let recs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v): (usize, &f64)| rec(&format!("p{i}"), "C", [v.exp(); 4], 0))
            .collect();
        let ds = prepare(&recs, PrepareOptions::default()).unwrap();
        let s = summarize(&ds);
        let med = quantile_scenario(&s, 0.5).unwrap();
        assert!((med.commits.ln() - 2.0).abs() < 1e-12);
        let min = quantile_scenario(&s, 0.0).unwrap();
        assert!((min.devs - 1.0).abs() < 1e-12);
        assert!(quantile_scenario(&s, 1.5).is_err());
        assert!(quantile_scenario(&s, -0.1).is_err());

        let recs: Vec<_> = [1.0, 2.0, 3.0, 4.0f64]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(&format!("p{i}"), "C", [v.exp(); 4], 0))
            .collect();
        let ds = prepare(&recs, PrepareOptions::default()).unwrap();
        let s = summarize(&ds);
        let q = quantile_scenario(&s, 0.75).unwrap();
        assert!((q.age.ln() - 3.25).abs() < 1e-12);
        let q2 = dataset_quantile_scenario(&ds, 0.75).unwrap();
        assert!((q2.age.ln() - 3.25).abs() < 1e-12);
    }
}

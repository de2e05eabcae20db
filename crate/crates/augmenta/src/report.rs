//! Report emission from a results directory: `summary.csv`, `per_task.csv`,
//! `augment_stats.csv` and `summary.txt`. Output depends only on the input
//! files, so re-emitting gives identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use augmenta_core::augment::{word_count, NonLlmMethod};
use augmenta_core::eval::{mean, EvalResult};
use augmenta_core::model::AugmentationRecord;
use augmenta_core::selector::SelectorKind;
use augmenta_core::text::rouge_l_text;

use crate::io::{read_jsonl, read_records, write_text, IoError};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no results in {0}")]
    NoResults(PathBuf),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    Original,
    NonLlm,
    Manual,
    Selector,
    SelfLlmda,
    Other,
}

impl Group {
    pub fn of(method: &str) -> Group {
        if method == "original" {
            Group::Original
        } else if method == "self_llmda" {
            Group::SelfLlmda
        } else if method.starts_with("manual:") {
            Group::Manual
        } else if method.parse::<NonLlmMethod>().is_ok() {
            Group::NonLlm
        } else if [
            SelectorKind::RandomSelect,
            SelectorKind::EmpiricalSelect,
            SelectorKind::LlmSelect,
        ]
        .iter()
        .any(|k| k.as_str() == method)
        {
            Group::Selector
        } else {
            Group::Other
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::Original => "Original",
            Group::NonLlm => "Non-LLMDA",
            Group::Manual => "Manual-LLMDA",
            Group::Selector => "Selector baselines",
            Group::SelfLlmda => "Self-LLMDA",
            Group::Other => "Other",
        }
    }

    /// Groups that get Average and Best rows.
    fn aggregated(self) -> bool {
        matches!(self, Group::NonLlm | Group::Manual)
    }
}

/// Canonical method order: by group, then algorithmic methods in their
/// declared order, everything else by name.
fn method_key(m: &str) -> MethodKey {
    let g = Group::of(m);
    let pos = m
        .parse::<NonLlmMethod>()
        .ok()
        .and_then(|x| NonLlmMethod::ALL.iter().position(|y| *y == x))
        .unwrap_or(0);
    (g, pos, m.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kind: &'static str,
    pub group: Group,
    pub label: String,
    pub cells: Vec<Option<f64>>,
    pub macro_avg: Option<f64>,
}

/// Methods × tasks grid of seed-mean values plus group Average/Best rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub tasks: Vec<String>,
    pub rows: Vec<Row>,
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v.iter().copied()).unwrap_or(0.0);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn row(kind: &'static str, group: Group, label: String, cells: Vec<Option<f64>>) -> Row {
    let macro_avg = mean(cells.iter().flatten().copied());
    Row {
        kind,
        group,
        label,
        cells,
        macro_avg,
    }
}

pub fn summarize(results: &[EvalResult]) -> Summary {
    let tasks: Vec<String> = results
        .iter()
        .map(|r| r.task_name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut methods: Vec<String> = results
        .iter()
        .map(|r| r.method_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    methods.sort_by_key(|m| method_key(m));
    let mut per: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in results {
        per.entry((&r.method_id, &r.task_name)).or_default().push(r.value);
    }
    let cell = |m: &str, t: &str| per.get(&(m, t)).and_then(|v| mean(v.iter().copied()));

    let mut rows = Vec::new();
    let mut i = 0;
    while i < methods.len() {
        let g = Group::of(&methods[i]);
        let start = i;
        while i < methods.len() && Group::of(&methods[i]) == g {
            i += 1;
        }
        let members: Vec<Row> = methods[start..i]
            .iter()
            .map(|m| row("method", g, m.clone(), tasks.iter().map(|t| cell(m, t)).collect()))
            .collect();
        rows.extend(members.iter().cloned());
        if !g.aggregated() {
            continue;
        }
        let column = |j: usize| members.iter().filter_map(move |r| r.cells[j]);
        let avg = (0..tasks.len()).map(|j| mean(column(j))).collect();
        rows.push(row("average", g, format!("{} Average", g.label()), avg));
        let best = members
            .iter()
            .filter(|r| r.macro_avg.is_some())
            .fold(None::<&Row>, |b, r| match b {
                Some(b) if b.macro_avg >= r.macro_avg => Some(b),
                _ => Some(r),
            });
        if let Some(b) = best {
            rows.push(row(
                "best_single",
                g,
                format!("{} Best (single: {})", g.label(), b.label),
                b.cells.clone(),
            ));
        }
        let per_task = (0..tasks.len()).map(|j| column(j).reduce(f64::max)).collect();
        rows.push(row(
            "best_per_task",
            g,
            format!("{} Best (per-task)", g.label()),
            per_task,
        ));
    }
    Summary { tasks, rows }
}

fn fmt_full(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn summary_csv(s: &Summary) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["kind".to_string(), "group".into(), "method".into()];
    header.extend(s.tasks.iter().cloned());
    header.push("macro_average".into());
    w.write_record(&header)?;
    for r in &s.rows {
        let mut rec = vec![r.kind.to_string(), r.group.label().into(), r.label.clone()];
        rec.extend(r.cells.iter().map(|c| fmt_full(*c)));
        rec.push(fmt_full(r.macro_avg));
        w.write_record(&rec)?;
    }
    finish(w)
}

fn summary_txt(s: &Summary) -> String {
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "-".into());
    let width = s.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
    let cols: Vec<usize> = s.tasks.iter().map(|t| t.len().max(7)).collect();
    let mut out = format!("{:<width$}", "method");
    for (t, c) in s.tasks.iter().zip(&cols) {
        let _ = write!(out, "  {t:>c$}");
    }
    out.push_str("  average\n");
    let mut last = None;
    for r in &s.rows {
        if last.is_some_and(|g| g != r.group) {
            out.push('\n');
        }
        last = Some(r.group);
        let _ = write!(out, "{:<width$}", r.label);
        for (v, c) in r.cells.iter().zip(&cols) {
            let _ = write!(out, "  {:>c$}", pct(*v));
        }
        let _ = writeln!(out, "  {:>7}", pct(r.macro_avg));
    }
    out.push_str("\nScores are the seed mean per task (x100); average is the mean over tasks.\n");
    out
}

/// Sort key of a method: group, position within the group, id.
type MethodKey = (Group, usize, String);

fn per_task_csv(results: &[EvalResult]) -> Result<String, ReportError> {
    let mut groups: BTreeMap<(String, MethodKey), Vec<&EvalResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.task_name.clone(), method_key(&r.method_id)))
            .or_default()
            .push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task", "method", "group", "metric", "n_seeds", "mean", "std", "min", "max",
    ])?;
    for ((task, (g, _, method)), rs) in &groups {
        let v: Vec<f64> = rs.iter().map(|r| r.value).collect();
        w.write_record([
            task.clone(),
            method.clone(),
            g.label().to_string(),
            rs[0].metric_name.as_str().to_string(),
            v.len().to_string(),
            fmt_full(mean(v.iter().copied())),
            format!("{}", std_dev(&v)),
            format!("{}", v.iter().copied().fold(f64::INFINITY, f64::min)),
            format!("{}", v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        ])?;
    }
    finish(w)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Word-count and distance-to-original statistics for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentStats {
    pub method: String,
    pub n_records: usize,
    pub words_mean: f64,
    pub words_std: f64,
    pub words_min: f64,
    pub words_q25: f64,
    pub words_median: f64,
    pub words_q75: f64,
    pub words_max: f64,
    /// Mean of `1 - rouge_l(augmented, original)`.
    pub distance_mean: f64,
    pub flagged: usize,
}

fn stats_of(method: String, texts: &[(&str, &str)], flagged: usize) -> AugmentStats {
    let mut words: Vec<f64> = texts.iter().map(|(a, _)| word_count(a) as f64).collect();
    words.sort_by(f64::total_cmp);
    let dist: Vec<f64> = texts.iter().map(|(a, o)| 1.0 - rouge_l_text(a, o)).collect();
    AugmentStats {
        method,
        n_records: texts.len(),
        words_mean: mean(words.iter().copied()).unwrap_or(f64::NAN),
        words_std: std_dev(&words),
        words_min: words.first().copied().unwrap_or(f64::NAN),
        words_q25: quantile(&words, 0.25),
        words_median: quantile(&words, 0.5),
        words_q75: quantile(&words, 0.75),
        words_max: words.last().copied().unwrap_or(f64::NAN),
        distance_mean: mean(dist).unwrap_or(f64::NAN),
        flagged,
    }
}

/// One row per method plus an `original` row over the distinct original
/// inputs.
pub fn augment_stats(records: &[AugmentationRecord]) -> Vec<AugmentStats> {
    let mut by_method: BTreeMap<(Group, usize, String), Vec<&AugmentationRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(method_key(&r.method_id)).or_default().push(r);
    }
    let originals: BTreeSet<(&str, &str)> = records
        .iter()
        .map(|r| (r.task_name.as_str(), r.original.input.as_str()))
        .collect();
    let orig_texts: Vec<(&str, &str)> = originals.iter().map(|(_, i)| (*i, *i)).collect();
    let mut out = Vec::new();
    if !orig_texts.is_empty() {
        out.push(stats_of("original".into(), &orig_texts, 0));
    }
    for ((_, _, m), rs) in by_method {
        let texts: Vec<(&str, &str)> = rs
            .iter()
            .map(|r| (r.augmented_input.as_str(), r.original.input.as_str()))
            .collect();
        let flagged = rs.iter().filter(|r| !r.flags.is_empty()).count();
        out.push(stats_of(m, &texts, flagged));
    }
    out
}

fn augment_stats_csv(stats: &[AugmentStats]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "n_records",
        "words_mean",
        "words_std",
        "words_min",
        "words_q25",
        "words_median",
        "words_q75",
        "words_max",
        "distance_mean",
        "flagged",
    ])?;
    for s in stats {
        w.write_record([
            s.method.clone(),
            s.n_records.to_string(),
            s.words_mean.to_string(),
            s.words_std.to_string(),
            s.words_min.to_string(),
            s.words_q25.to_string(),
            s.words_median.to_string(),
            s.words_q75.to_string(),
            s.words_max.to_string(),
            s.distance_mean.to_string(),
            s.flagged.to_string(),
        ])?;
    }
    finish(w)
}

/// Paths of the emitted files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub summary_csv: PathBuf,
    pub per_task_csv: PathBuf,
    pub augment_stats_csv: PathBuf,
    pub summary_txt: PathBuf,
}

impl ReportFiles {
    pub fn in_dir(dir: &Path) -> Self {
        ReportFiles {
            summary_csv: dir.join("summary.csv"),
            per_task_csv: dir.join("per_task.csv"),
            augment_stats_csv: dir.join("augment_stats.csv"),
            summary_txt: dir.join("summary.txt"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [
            &self.summary_csv,
            &self.per_task_csv,
            &self.augment_stats_csv,
            &self.summary_txt,
        ]
    }
}

/// Reads `results.jsonl` (required) and `records.jsonl` (optional) from
/// `results_dir` and writes the four report files next to them.
pub fn emit_report(results_dir: &Path) -> Result<ReportFiles, ReportError> {
    let results_path = results_dir.join(RESULTS_FILE);
    if !results_path.is_file() {
        return Err(ReportError::NoResults(results_dir.to_path_buf()));
    }
    let mut results: Vec<EvalResult> = read_jsonl(&results_path)?;
    if results.is_empty() {
        return Err(ReportError::NoResults(results_dir.to_path_buf()));
    }
    results.sort_by(|a, b| (&a.task_name, &a.method_id, a.seed).cmp(&(&b.task_name, &b.method_id, b.seed)));
    let records_path = results_dir.join(RECORDS_FILE);
    let records = if records_path.is_file() {
        read_records(&records_path)?
    } else {
        Vec::new()
    };
    let files = ReportFiles::in_dir(results_dir);
    let summary = summarize(&results);
    write_text(&files.summary_csv, &summary_csv(&summary)?)?;
    write_text(&files.per_task_csv, &per_task_csv(&results)?)?;
    write_text(&files.augment_stats_csv, &augment_stats_csv(&augment_stats(&records))?)?;
    write_text(&files.summary_txt, &summary_txt(&summary))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use augmenta_core::eval::MetricName;
    use augmenta_core::model::Example;

    fn res(task: &str, method: &str, seed: u64, value: f64) -> EvalResult {
        EvalResult {
            task_name: task.into(),
            method_id: method.into(),
            seed,
            metric_name: MetricName::Accuracy,
            value,
            n_test: 10,
        }
    }

    #[test]
    fn groups() {
        assert_eq!(Group::of("original"), Group::Original);
        assert_eq!(Group::of("char_swap"), Group::NonLlm);
        assert_eq!(Group::of("manual:Paraphrase"), Group::Manual);
        assert_eq!(Group::of("llm_select"), Group::Selector);
        assert_eq!(Group::of("self_llmda"), Group::SelfLlmda);
    }

    #[test]
    fn two_by_two_grid_with_aggregates() {
        let results = vec![
            res("t1", "char_swap", 1, 0.2),
            res("t1", "char_swap", 2, 0.4),
            res("t2", "char_swap", 1, 0.9),
            res("t1", "word_swap", 1, 0.5),
            res("t2", "word_swap", 1, 0.5),
        ];
        let s = summarize(&results);
        assert_eq!(s.tasks, ["t1", "t2"]);
        let labels: Vec<&str> = s.rows.iter().map(|r| r.kind).collect();
        assert_eq!(labels, ["method", "method", "average", "best_single", "best_per_task"]);
        let cs = &s.rows[0];
        assert!((cs.cells[0].unwrap() - 0.3).abs() < 1e-12);
        assert!((cs.macro_avg.unwrap() - 0.6).abs() < 1e-12);
        assert!((s.rows[2].cells[0].unwrap() - 0.4).abs() < 1e-12);
        assert!(s.rows[3].label.contains("char_swap"));
        assert_eq!(s.rows[4].cells, vec![Some(0.5), Some(0.9)]);
    }

    #[test]
    fn empty_dir_is_no_results() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(d.path()), Err(ReportError::NoResults(_))));
    }

    #[test]
    fn re_emit_is_byte_identical() {
        let d = tempfile::tempdir().unwrap();
        let results = vec![res("t2", "original", 1, 0.25), res("t1", "original", 1, 0.5)];
        crate::io::write_jsonl(&d.path().join(RESULTS_FILE), &results).unwrap();
        let rec = AugmentationRecord {
            task_name: "t1".into(),
            method_id: "word_swap".into(),
            original: Example::new("a b c d", "x", vec![]),
            augmented_input: "b a c d".into(),
            seed: 1,
            backend_fingerprint: None,
            flags: vec![],
        };
        crate::io::write_records(&d.path().join(RECORDS_FILE), &[rec]).unwrap();
        let f = emit_report(d.path()).unwrap();
        let first: Vec<Vec<u8>> = f.all().iter().map(|p| std::fs::read(p).unwrap()).collect();
        emit_report(d.path()).unwrap();
        let second: Vec<Vec<u8>> = f.all().iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        let stats = std::fs::read_to_string(&f.augment_stats_csv).unwrap();
        assert!(stats.contains("\noriginal,1,4,0,4,4,4,4,4,0,0\n"));
        // LCS of [b a c d] and [a b c d] is 3 of 4.
        assert!(stats.contains("\nword_swap,1,4,0,4,4,4,4,4,0.25,0\n"));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}

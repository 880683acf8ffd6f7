//! Entity-level scoring.
//!
//! A predicted span counts as a true positive only if start, end and type all
//! equal a gold span. Micro scores come from counts summed over all types and
//! sentences. Emitted tables show percentages with two decimals.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EntitySpan, TaggedSentence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold has {gold} tokens, prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("gold has {gold} sentences, prediction has {pred}")]
    SentenceCountMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}, token {token}: gold {gold:?} vs prediction {pred:?}")]
    TokenMismatch {
        sentence: usize,
        token: usize,
        gold: String,
        pred: String,
    },
    #[error("sentence {sentence}: {source}")]
    Sentence {
        sentence: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("no reports to aggregate")]
    NoRuns,
    #[error("report {index} has a different entity type set")]
    HeterogeneousTypes { index: usize },
    #[error("report line {line}: {message}")]
    ReportSyntax { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Per-type true/false positive and false negative counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub per_type: IndexMap<String, Counts>,
}

impl MatchCounts {
    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for v in self.per_type.values() {
            c.add(*v);
        }
        c
    }

    pub fn merge(&mut self, other: &MatchCounts) {
        for (ty, c) in &other.per_type {
            self.per_type.entry(ty.clone()).or_default().add(*c);
        }
    }
}

/// Compares the spans of two tag sequences over the same tokens.
pub fn match_spans(gold: &TaggedSentence, pred: &TaggedSentence) -> Result<MatchCounts, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(match_span_lists(&gold.spans(), &pred.spans()))
}

fn same_span(a: &EntitySpan, b: &EntitySpan) -> bool {
    a.start == b.start && a.end == b.end && a.entity_type == b.entity_type
}

fn match_span_lists(gold: &[EntitySpan], pred: &[EntitySpan]) -> MatchCounts {
    let mut counts = MatchCounts::default();
    for g in gold {
        let c = counts.per_type.entry(g.entity_type.clone()).or_default();
        if pred.iter().any(|p| same_span(g, p)) {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    for p in pred {
        let c = counts.per_type.entry(p.entity_type.clone()).or_default();
        if !gold.iter().any(|g| same_span(g, p)) {
            c.fp += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Precision and recall are 0 when their denominator is 0; F1 is 0 when
    /// P + R is 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divides by n - 1; defined as 0 for a single run.
    #[default]
    Sample,
    Population,
}

/// Standard deviations of an aggregated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub runs: usize,
    pub kind: StdKind,
    pub per_type: IndexMap<String, Prf>,
    pub micro: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_type: IndexMap<String, Prf>,
    pub micro: Prf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<MatchCounts>,
    /// Present when the values above are means over several runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<Spread>,
}

impl ScoreReport {
    pub fn from_counts(counts: MatchCounts) -> Self {
        let per_type = counts
            .per_type
            .iter()
            .map(|(ty, c)| (ty.clone(), c.prf()))
            .collect();
        Self {
            per_type,
            micro: counts.total().prf(),
            counts: Some(counts),
            spread: None,
        }
    }
}

/// Scores a prediction corpus against gold, sentence by sentence. Types are
/// reported in gold schema order, followed by any extra predicted types.
pub fn micro_f1(gold: &Corpus, pred: &Corpus) -> Result<ScoreReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut counts = MatchCounts::default();
    for name in gold.schema().names().chain(pred.schema().names()) {
        counts.per_type.entry(name.to_string()).or_default();
    }
    for (i, (g, p)) in gold.sentences().iter().zip(pred.sentences()).enumerate() {
        let per = match_spans(g, p).map_err(|e| EvalError::Sentence {
            sentence: i,
            source: Box::new(e),
        })?;
        if let Some((t, (a, b))) = g
            .surfaces()
            .zip(p.surfaces())
            .enumerate()
            .find(|(_, (a, b))| a != b)
        {
            return Err(EvalError::TokenMismatch {
                sentence: i,
                token: t,
                gold: a.to_string(),
                pred: b.to_string(),
            });
        }
        counts.merge(&per);
    }
    Ok(ScoreReport::from_counts(counts))
}

fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = match kind {
        StdKind::Sample if values.len() < 2 => 0.0,
        StdKind::Sample => (ss / (n - 1.0)).sqrt(),
        StdKind::Population => (ss / n).sqrt(),
    };
    (mean, std)
}

fn aggregate_prf(cells: &[Prf], kind: StdKind) -> (Prf, Prf) {
    let pick = |f: fn(&Prf) -> f64| mean_std(&cells.iter().map(f).collect::<Vec<_>>(), kind);
    let (pm, ps) = pick(|c| c.precision);
    let (rm, rs) = pick(|c| c.recall);
    let (fm, fs) = pick(|c| c.f1);
    (
        Prf {
            precision: pm,
            recall: rm,
            f1: fm,
        },
        Prf {
            precision: ps,
            recall: rs,
            f1: fs,
        },
    )
}

/// Per-cell mean and standard deviation over runs (e.g. seeds).
pub fn aggregate_runs(reports: &[ScoreReport], kind: StdKind) -> Result<ScoreReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoRuns)?;
    for (index, r) in reports.iter().enumerate() {
        let same = r.per_type.len() == first.per_type.len()
            && r.per_type.keys().all(|k| first.per_type.contains_key(k));
        if !same {
            return Err(EvalError::HeterogeneousTypes { index });
        }
    }
    let mut per_type = IndexMap::new();
    let mut per_type_std = IndexMap::new();
    for ty in first.per_type.keys() {
        let cells: Vec<Prf> = reports.iter().map(|r| r.per_type[ty]).collect();
        let (mean, std) = aggregate_prf(&cells, kind);
        per_type.insert(ty.clone(), mean);
        per_type_std.insert(ty.clone(), std);
    }
    let micro_cells: Vec<Prf> = reports.iter().map(|r| r.micro).collect();
    let (micro, micro_std) = aggregate_prf(&micro_cells, kind);
    Ok(ScoreReport {
        per_type,
        micro,
        counts: None,
        spread: Some(Spread {
            runs: reports.len(),
            kind,
            per_type: per_type_std,
            micro: micro_std,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Tsv => "tsv",
            Self::Json => "json",
            Self::Markdown => "md",
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

const TSV_HEADER: &str = "type\tprecision\trecall\tf1";
const TSV_STD_HEADER: &str = "\tprecision_std\trecall_std\tf1_std";

pub fn emit_report(report: &ScoreReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Tsv => emit_tsv(report).into_bytes(),
        ReportFormat::Markdown => emit_markdown(report).into_bytes(),
    }
}

fn rows(report: &ScoreReport) -> Vec<(&str, Prf, Option<Prf>)> {
    let mut out: Vec<(&str, Prf, Option<Prf>)> = report
        .per_type
        .iter()
        .map(|(ty, v)| {
            (
                ty.as_str(),
                *v,
                report.spread.as_ref().map(|s| s.per_type[ty]),
            )
        })
        .collect();
    out.push(("micro", report.micro, report.spread.as_ref().map(|s| s.micro)));
    out
}

fn emit_tsv(report: &ScoreReport) -> String {
    let mut out = String::from(TSV_HEADER);
    if report.spread.is_some() {
        out.push_str(TSV_STD_HEADER);
    }
    out.push('\n');
    if report.per_type.is_empty() {
        return out;
    }
    for (name, v, std) in rows(report) {
        let _ = write!(out, "{name}\t{}\t{}\t{}", pct(v.precision), pct(v.recall), pct(v.f1));
        if let Some(s) = std {
            let _ = write!(out, "\t{}\t{}\t{}", pct(s.precision), pct(s.recall), pct(s.f1));
        }
        out.push('\n');
    }
    out
}

/// Reads a report written by [`emit_report`] in TSV form. Values are the
/// rounded percentages divided by 100; run count and std kind are not stored
/// in TSV and come back as 0 and `Sample`.
pub fn parse_tsv_report(text: &str) -> Result<ScoreReport, EvalError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(EvalError::ReportSyntax {
        line: 1,
        message: "missing header".into(),
    })?;
    let with_std = if header == TSV_HEADER {
        false
    } else if header == format!("{TSV_HEADER}{TSV_STD_HEADER}") {
        true
    } else {
        return Err(EvalError::ReportSyntax {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    };
    let width = if with_std { 7 } else { 4 };
    let mut per_type = IndexMap::new();
    let mut per_type_std = IndexMap::new();
    let mut micro = None;
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(EvalError::ReportSyntax {
                line: line_no,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map(|v| v / 100.0).map_err(|e| EvalError::ReportSyntax {
                line: line_no,
                message: format!("{s:?}: {e}"),
            })
        };
        let prf = |a: &str, b: &str, c: &str| -> Result<Prf, EvalError> {
            Ok(Prf {
                precision: num(a)?,
                recall: num(b)?,
                f1: num(c)?,
            })
        };
        let value = prf(fields[1], fields[2], fields[3])?;
        let std = if with_std {
            Some(prf(fields[4], fields[5], fields[6])?)
        } else {
            None
        };
        if fields[0] == "micro" {
            micro = Some((value, std));
        } else {
            per_type.insert(fields[0].to_string(), value);
            if let Some(s) = std {
                per_type_std.insert(fields[0].to_string(), s);
            }
        }
    }
    let (micro, micro_std) = match micro {
        Some(m) => m,
        None if per_type.is_empty() => (Prf::default(), with_std.then(Prf::default)),
        None => {
            return Err(EvalError::ReportSyntax {
                line: text.lines().count(),
                message: "missing micro row".into(),
            })
        }
    };
    Ok(ScoreReport {
        per_type,
        micro,
        counts: None,
        spread: micro_std.map(|m| Spread {
            runs: 0,
            kind: StdKind::Sample,
            per_type: per_type_std,
            micro: m,
        }),
    })
}

fn emit_markdown(report: &ScoreReport) -> String {
    let rows = rows(report);
    let mut out = String::from("| Metric |");
    for (name, _, _) in &rows {
        let label = if *name == "micro" { "Micro" } else { name };
        let _ = write!(out, " {label} |");
    }
    out.push_str("\n|---|");
    for _ in &rows {
        out.push_str("---:|");
    }
    out.push('\n');
    type Getter = fn(&Prf) -> f64;
    let metrics: [(&str, Getter); 3] = [
        ("Precision", |p| p.precision),
        ("Recall", |p| p.recall),
        ("F1", |p| p.f1),
    ];
    for (label, get) in metrics {
        let _ = write!(out, "| {label} |");
        for (_, v, std) in &rows {
            match std {
                Some(s) => {
                    let _ = write!(out, " {}±{} |", pct(get(v)), pct(get(s)));
                }
                None => {
                    let _ = write!(out, " {} |", pct(get(v)));
                }
            }
        }
        out.push('\n');
    }
    out
}

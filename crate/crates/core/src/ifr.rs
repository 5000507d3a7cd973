//! Instruction-following rate: rule-based detection of whether a response
//! follows the requested format, per-task rates, accuracy among followed
//! samples, embedding similarity and table rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compute::Tensor2D;
use crate::error::{Error, Result};
use crate::synthdata::world::{ANSWER_PREFIX, CHOICE_LABELS, CIPHER_ALPHABET};
use crate::synthdata::{Task, TaskSample};

/// Share of non-space characters that must belong to the target alphabet.
pub const DEFAULT_ALPHABET_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionRule {
    AnswerFormat { prefix: String, allowed: Vec<char> },
    TargetAlphabet { alphabet: Vec<char>, threshold: f64 },
    ExactRepeat { reference: String, tolerance: f64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detection {
    pub followed: bool,
    pub answer: Option<String>,
    pub reason: String,
}

/// Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn detect_followed(response: &str, rule: &DetectionRule) -> Detection {
    match rule {
        DetectionRule::AnswerFormat { prefix, allowed } => match response.find(prefix.as_str()) {
            None => Detection { followed: false, answer: None, reason: "answer prefix missing".into() },
            Some(at) => match response[at + prefix.len()..].chars().next() {
                Some(c) if allowed.contains(&c) => Detection { followed: true, answer: Some(c.to_string()), reason: "format matched".into() },
                Some(c) => Detection { followed: false, answer: None, reason: format!("choice {c:?} not allowed") },
                None => Detection { followed: false, answer: None, reason: "nothing after the answer prefix".into() },
            },
        },
        DetectionRule::TargetAlphabet { alphabet, threshold } => {
            let chars: Vec<char> = response.chars().filter(|c| !c.is_whitespace()).collect();
            if chars.is_empty() {
                return Detection { followed: false, answer: None, reason: "empty response".into() };
            }
            let share = chars.iter().filter(|c| alphabet.contains(c)).count() as f64 / chars.len() as f64;
            Detection {
                followed: share >= *threshold,
                answer: Some(response.to_string()),
                reason: format!("{:.0}% in target alphabet", share * 100.0),
            }
        }
        DetectionRule::ExactRepeat { reference, tolerance } => {
            let r: Vec<char> = response.chars().collect();
            let e: Vec<char> = reference.chars().collect();
            let dist = edit_distance(&r, &e) as f64 / e.len().max(1) as f64;
            Detection {
                followed: dist <= *tolerance,
                answer: Some(response.to_string()),
                reason: format!("normalized edit distance {dist:.3}"),
            }
        }
    }
}

/// The detection rule of a zero-shot task; ASR tasks have none.
pub fn rule_for(sample: &TaskSample, alphabet_threshold: f64) -> Option<DetectionRule> {
    match sample.task {
        Task::CipherTranslate => Some(DetectionRule::TargetAlphabet { alphabet: CIPHER_ALPHABET.to_vec(), threshold: alphabet_threshold }),
        Task::McClassify | Task::CountMc => Some(DetectionRule::AnswerFormat {
            prefix: sample.answer_format.clone().unwrap_or_else(|| ANSWER_PREFIX.to_string()),
            allowed: CHOICE_LABELS.to_vec(),
        }),
        Task::Transcribe | Task::Repeat => None,
    }
}

/// One model response to one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub id: String,
    pub task: Task,
    pub response: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskIfr {
    pub n_total: usize,
    pub n_followed: usize,
    pub ifr: f64,
    /// Absent when nothing was followed.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub response: String,
    pub followed: bool,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfrReport {
    pub per_task: BTreeMap<Task, TaskIfr>,
    pub macro_ifr: f64,
    pub traces: Vec<Trace>,
}

/// Per-task IFR over the zero-shot results in `results`; ASR results are
/// ignored. Accuracy compares the extracted answer with the reference answer.
pub fn compute_ifr(samples: &[TaskSample], results: &[EvalResult], alphabet_threshold: f64) -> Result<IfrReport> {
    let by_id: BTreeMap<&str, &TaskSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut counts: BTreeMap<Task, (usize, usize, usize)> = BTreeMap::new();
    let mut traces = Vec::new();
    for r in results {
        let sample = by_id.get(r.id.as_str()).ok_or_else(|| Error::Input(format!("result for unknown sample {}", r.id)))?;
        let Some(rule) = rule_for(sample, alphabet_threshold) else { continue };
        let d = detect_followed(&r.response, &rule);
        let correct = d.followed
            && match sample.task {
                Task::CipherTranslate => r.response == sample.reference_answer,
                _ => d.answer.as_deref().map(|a| format!("{ANSWER_PREFIX}{a}")) == Some(sample.reference_answer.clone()),
            };
        let e = counts.entry(sample.task).or_default();
        e.0 += 1;
        e.1 += usize::from(d.followed);
        e.2 += usize::from(correct);
        traces.push(Trace { id: r.id.clone(), response: r.response.clone(), followed: d.followed, reason: d.reason });
    }
    if counts.is_empty() {
        return Err(Error::Input("no zero-shot results to score".into()));
    }
    let per_task: BTreeMap<Task, TaskIfr> = counts
        .into_iter()
        .map(|(t, (n, f, c))| {
            let accuracy = (f > 0).then(|| c as f64 / f as f64);
            (t, TaskIfr { n_total: n, n_followed: f, ifr: f as f64 / n as f64, accuracy })
        })
        .collect();
    let macro_ifr = per_task.values().map(|t| t.ifr).sum::<f64>() / per_task.len() as f64;
    Ok(IfrReport { per_task, macro_ifr, traces })
}

/// Token-level error rate of ASR responses (edit distance over characters of
/// the normalized strings divided by reference length).
pub fn asr_token_error(results: &[EvalResult]) -> Result<f64> {
    let (mut errors, mut total) = (0usize, 0usize);
    for r in results.iter().filter(|r| r.task.is_asr()) {
        let hyp: Vec<char> = r.response.chars().collect();
        let refc: Vec<char> = r.reference.chars().collect();
        errors += edit_distance(&hyp, &refc);
        total += refc.len();
    }
    if total == 0 {
        return Err(Error::Input("no ASR results".into()));
    }
    Ok(errors as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub mean: f64,
    pub per_utterance: Vec<f64>,
    /// Rows skipped because one side had zero norm.
    pub excluded_rows: usize,
}

/// Mean row-wise cosine similarity of paired matrices, averaged per
/// utterance and then over utterances.
pub fn cosine_report(pairs: &[(Tensor2D, Tensor2D)]) -> Result<CosineReport> {
    let mut per_utterance = Vec::new();
    let mut excluded_rows = 0;
    for (a, e) in pairs {
        if a.shape() != e.shape() {
            return Err(Error::Dimension(format!("cosine pair shapes {:?} vs {:?}", a.shape(), e.shape())));
        }
        let mut sims = Vec::new();
        for r in 0..a.rows() {
            let (x, y) = (a.row(r), e.row(r));
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                excluded_rows += 1;
                continue;
            }
            sims.push(x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny));
        }
        if !sims.is_empty() {
            per_utterance.push(sims.iter().sum::<f64>() / sims.len() as f64);
        }
    }
    if per_utterance.is_empty() {
        return Err(Error::Input("no rows to compare".into()));
    }
    let mean = per_utterance.iter().sum::<f64>() / per_utterance.len() as f64;
    Ok(CosineReport { mean, per_utterance, excluded_rows })
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub preset: String,
    pub task: String,
    pub metric_name: String,
    pub metric_value: Option<f64>,
    pub ifr: Option<f64>,
    pub n_total: usize,
    pub n_followed: Option<usize>,
}

pub const TABLE_HEADER: &str = "preset,task,metric_name,metric_value,ifr,n_total,n_followed";

/// Rows for one evaluated run: one per zero-shot task, the macro average and
/// optionally the ASR token error.
pub fn report_rows(preset: &str, report: &IfrReport, asr: Option<(f64, usize)>) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = report
        .per_task
        .iter()
        .map(|(t, r)| TableRow {
            preset: preset.into(),
            task: t.as_str().into(),
            metric_name: "accuracy".into(),
            metric_value: r.accuracy,
            ifr: Some(r.ifr),
            n_total: r.n_total,
            n_followed: Some(r.n_followed),
        })
        .collect();
    rows.push(TableRow {
        preset: preset.into(),
        task: "macro".into(),
        metric_name: "macro_ifr".into(),
        metric_value: Some(report.macro_ifr),
        ifr: Some(report.macro_ifr),
        n_total: report.per_task.values().map(|r| r.n_total).sum(),
        n_followed: Some(report.per_task.values().map(|r| r.n_followed).sum()),
    });
    if let Some((ter, n)) = asr {
        rows.push(TableRow {
            preset: preset.into(),
            task: "asr".into(),
            metric_name: "token_error".into(),
            metric_value: Some(ter),
            ifr: None,
            n_total: n,
            n_followed: None,
        });
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let nf = r.n_followed.map(|n| n.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.preset,
            r.task,
            r.metric_name,
            fmt_opt(r.metric_value),
            fmt_opt(r.ifr),
            r.n_total,
            nf
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TABLE_HEADER) {
        return Err(Error::Input("table header mismatch".into()));
    }
    let opt_f = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Input(format!("bad number {s:?}")))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Input(format!("expected 7 columns: {l:?}")));
            }
            Ok(TableRow {
                preset: f[0].into(),
                task: f[1].into(),
                metric_name: f[2].into(),
                metric_value: opt_f(f[3])?,
                ifr: opt_f(f[4])?,
                n_total: f[5].parse().map_err(|_| Error::Input(format!("bad count {:?}", f[5])))?,
                n_followed: if f[6].is_empty() {
                    None
                } else {
                    Some(f[6].parse().map_err(|_| Error::Input(format!("bad count {:?}", f[6])))?)
                },
            })
        })
        .collect()
}

/// Fixed-width text rendering of the same rows.
pub fn rows_to_text(rows: &[TableRow]) -> String {
    let header = ["preset", "task", "metric", "value", "ifr", "n", "followed"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.preset.clone(),
                r.task.clone(),
                r.metric_name.clone(),
                r.metric_value.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
                r.ifr.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
                r.n_total.to_string(),
                r.n_followed.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        let parts: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    for row in &cells {
        line(&mut out, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
        assert_eq!(edit_distance(b"abc", b"abc"), 0);
    }
}

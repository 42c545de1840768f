//! Print-job log analysis: cancellation rate, runtime histogram, and the most
//! common words in job file names.
//!
//! Input is CSV with the header columns `filename`, `duration_s` and
//! `canceled`, in any order; extra columns are ignored.
//!
//! ```
//! use printseg::jobstats::{failure_rate, load_jobs, word_frequency};
//!
//! let csv = "filename,duration_s,canceled\n\
//!            CubeStand.gcode,900,true\n\
//!            cube_v2.gcode,1200,false\n\
//!            test.gcode,60,true\n";
//! let log = load_jobs(csv.as_bytes()).unwrap();
//! let rate = failure_rate(&log.jobs, 300.0);
//! assert_eq!((rate.canceled, rate.total), (1, 2));
//! assert_eq!(rate.rate, Some(0.5));
//!
//! let names: Vec<&str> = log.jobs.iter().map(|j| j.filename.as_str()).collect();
//! let words = word_frequency(&names, 3);
//! assert_eq!(words[0].token, "cube");
//! assert_eq!(words[0].count, 2);
//! ```

use std::collections::HashMap;
use std::io::Read;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JobStatsError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("histogram needs at least two edges")]
    TooFewEdges,
    #[error("histogram edges must be finite and strictly increasing")]
    BadEdges,
    #[error("minimum duration must be finite and non-negative")]
    BadThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrintJob {
    pub filename: String,
    pub duration_s: f64,
    pub canceled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line in the input, header included.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JobLog {
    pub jobs: Vec<PrintJob>,
    pub errors: Vec<RowError>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" | "t" => Some(true),
        "false" | "0" | "no" | "n" | "f" => Some(false),
        _ => None,
    }
}

/// Reads jobs from CSV. Rows that fail to parse are collected, not fatal.
pub fn load_jobs<R: Read>(input: R) -> Result<JobLog, JobStatsError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(JobStatsError::MissingColumn(name))
    };
    let (fi, di, ci) = (col("filename")?, col("duration_s")?, col("canceled")?);
    let mut log = JobLog::default();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                log.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let fail = |message: String| RowError { line, message };
        let (Some(f), Some(d), Some(c)) = (rec.get(fi), rec.get(di), rec.get(ci)) else {
            log.errors.push(fail(format!("expected at least {} fields", fi.max(di).max(ci) + 1)));
            continue;
        };
        let duration = match d.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            Ok(v) => {
                log.errors.push(fail(format!("duration {v} is not a finite non-negative number")));
                continue;
            }
            Err(_) => {
                log.errors.push(fail(format!("duration `{d}` is not a number")));
                continue;
            }
        };
        let Some(canceled) = parse_bool(c) else {
            log.errors.push(fail(format!("canceled `{c}` is not a boolean")));
            continue;
        };
        log.jobs.push(PrintJob {
            filename: f.to_string(),
            duration_s: duration,
            canceled,
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRate {
    pub min_duration_s: f64,
    /// Canceled jobs longer than the threshold.
    pub canceled: usize,
    /// Jobs longer than the threshold.
    pub total: usize,
    /// `None` when no job is longer than the threshold.
    pub rate: Option<f64>,
    /// Jobs at or below the threshold, left out of the rate.
    pub excluded: usize,
    pub excluded_canceled: usize,
}

/// Cancellation rate over jobs with `duration_s > min_duration`.
pub fn failure_rate(jobs: &[PrintJob], min_duration: f64) -> FailureRate {
    let (mut canceled, mut total, mut ex, mut ex_canceled) = (0, 0, 0, 0);
    for j in jobs {
        if j.duration_s > min_duration {
            total += 1;
            canceled += j.canceled as usize;
        } else {
            ex += 1;
            ex_canceled += j.canceled as usize;
        }
    }
    FailureRate {
        min_duration_s: min_duration,
        canceled,
        total,
        rate: (total > 0).then(|| canceled as f64 / total as f64),
        excluded: ex,
        excluded_canceled: ex_canceled,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BinCount {
    pub finished: usize,
    pub canceled: usize,
}

impl BinCount {
    pub fn total(&self) -> usize {
        self.finished + self.canceled
    }

    fn add(&mut self, canceled: bool) {
        if canceled {
            self.canceled += 1
        } else {
            self.finished += 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeHistogram {
    pub edges: Vec<f64>,
    /// `bins[i]` covers `[edges[i], edges[i + 1])`.
    pub bins: Vec<BinCount>,
    /// Jobs shorter than the first edge.
    pub underflow: BinCount,
    /// Jobs at or beyond the last edge.
    pub overflow: BinCount,
}

impl RuntimeHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(BinCount::total).sum::<usize>() + self.underflow.total() + self.overflow.total()
    }
}

pub fn runtime_histogram(jobs: &[PrintJob], edges: &[f64]) -> Result<RuntimeHistogram, JobStatsError> {
    if edges.len() < 2 {
        return Err(JobStatsError::TooFewEdges);
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(JobStatsError::BadEdges);
    }
    let mut h = RuntimeHistogram {
        edges: edges.to_vec(),
        bins: vec![BinCount::default(); edges.len() - 1],
        underflow: BinCount::default(),
        overflow: BinCount::default(),
    };
    for j in jobs {
        // Number of edges <= duration; 0 means underflow, len means overflow.
        let k = edges.partition_point(|&e| e <= j.duration_s);
        match k {
            0 => h.underflow.add(j.canceled),
            k if k == edges.len() => h.overflow.add(j.canceled),
            k => h.bins[k - 1].add(j.canceled),
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordCount {
    pub token: String,
    pub count: usize,
}

fn strip_extension(name: &str) -> &str {
    // Only the final path component counts.
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    match base.rfind('.') {
        Some(i) if i > 0 => &base[..i],
        _ => base,
    }
}

/// Splits a file name into lowercase words.
///
/// Boundaries are non-alphanumeric characters, lower-to-upper case changes
/// (`cubeStand`), the last capital of an acronym run (`XMLParser` → `XML`,
/// `Parser`) and letter/digit changes. Purely numeric tokens and tokens
/// shorter than three characters are dropped.
pub fn tokenize(filename: &str) -> Vec<String> {
    let stem = strip_extension(filename);
    let mut out = Vec::new();
    for chunk in stem.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        for i in 1..=chars.len() {
            let split = i == chars.len() || {
                let (a, b) = (chars[i - 1], chars[i]);
                let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
                (a.is_lowercase() && b.is_uppercase())
                    || (a.is_uppercase() && b.is_uppercase() && next_lower)
                    || (a.is_numeric() != b.is_numeric())
            };
            if split {
                let tok: String = chars[start..i].iter().collect::<String>().to_lowercase();
                start = i;
                if tok.chars().count() >= 3 && !tok.chars().all(char::is_numeric) {
                    out.push(tok);
                }
            }
        }
    }
    out
}

/// The `top_k` most common words, by count descending then alphabetically.
pub fn word_frequency<S: AsRef<str>>(filenames: &[S], top_k: usize) -> Vec<WordCount> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for f in filenames {
        for t in tokenize(f.as_ref()) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<WordCount> = counts
        .into_iter()
        .map(|(token, count)| WordCount { token, count })
        .collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    ranked.truncate(top_k);
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobReport {
    pub jobs: usize,
    pub malformed_rows: Vec<RowError>,
    pub failure: FailureRate,
    pub histogram: RuntimeHistogram,
    pub top_words: Vec<WordCount>,
}

pub fn report(
    log: &JobLog,
    min_duration: f64,
    edges: &[f64],
    top_k: usize,
) -> Result<JobReport, JobStatsError> {
    if !(min_duration.is_finite() && min_duration >= 0.0) {
        return Err(JobStatsError::BadThreshold);
    }
    let names: Vec<&str> = log.jobs.iter().map(|j| j.filename.as_str()).collect();
    Ok(JobReport {
        jobs: log.jobs.len(),
        malformed_rows: log.errors.clone(),
        failure: failure_rate(&log.jobs, min_duration),
        histogram: runtime_histogram(&log.jobs, edges)?,
        top_words: word_frequency(&names, top_k),
    })
}

//! BLEU-4, forgetting percentages and report export.
//!
//! BLEU is the usual corpus-level geometric mean of clipped n-gram
//! precisions times a brevity penalty against the closest reference length.
//! A zero precision is replaced by `1 / (2·c)` where `c` is the candidate
//! length (summed over the corpus for corpus BLEU). An empty candidate
//! scores 0.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Zero precisions become `1 / (2·candidate_length)`.
    HalfOverLength,
    /// No smoothing: any zero precision makes the score 0.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::HalfOverLength,
        }
    }
}

/// Sufficient statistics of BLEU; add them up to get corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub cand_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            cand_len: 0,
            ref_len: 0,
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    /// Clipped n-gram precisions, before smoothing.
    pub fn precisions(&self) -> Vec<f64> {
        self.matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
            .collect()
    }

    pub fn score(&self, cfg: &BleuConfig) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let c = self.cand_len as f64;
        let mut log_sum = 0.0;
        for p in self.precisions() {
            let p = match (p, cfg.smoothing) {
                (p, _) if p > 0.0 => p,
                (_, Smoothing::HalfOverLength) => 1.0 / (2.0 * c),
                (_, Smoothing::None) => return 0.0,
            };
            log_sum += p.ln();
        }
        let r = self.ref_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / cfg.max_n as f64).exp()
    }
}

fn ngram_counts<T: Eq + Hash>(words: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Statistics of one candidate against its references.
pub fn bleu_stats<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], cfg: &BleuConfig) -> Result<BleuStats> {
    if references.is_empty() {
        return Err(Error::Domain("BLEU needs at least one reference".into()));
    }
    if cfg.max_n == 0 {
        return Err(Error::Domain("BLEU max_n must be >= 1".into()));
    }
    let mut stats = BleuStats::zero(cfg.max_n);
    stats.cand_len = candidate.len() as u64;
    // closest reference length, shorter on ties
    stats.ref_len = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(candidate.len()), len))
        .unwrap_or(0) as u64;
    for n in 1..=cfg.max_n {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[T], u64> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    Ok(stats)
}

/// Sentence-level BLEU with the default configuration.
pub fn bleu4<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>]) -> Result<f64> {
    let cfg = BleuConfig::default();
    Ok(bleu_stats(candidate, references, &cfg)?.score(&cfg))
}

/// Corpus BLEU over `(candidate, references)` pairs.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<Vec<T>>)], cfg: &BleuConfig) -> Result<f64> {
    let mut total = BleuStats::zero(cfg.max_n);
    for (c, refs) in pairs {
        total.add(&bleu_stats(c, refs, cfg)?);
    }
    Ok(total.score(cfg))
}

/// `100 · (1 − after_last / after_own)`; `None` when `after_own` is 0.
pub fn forgetting_pct(after_own: f64, after_last: f64) -> Option<f64> {
    (after_own > 0.0).then(|| 100.0 * (1.0 - after_last / after_own))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRecord {
    pub task: usize,
    pub after_own: f64,
    pub after_last: f64,
    /// `None` for the last task or when `after_own` is 0.
    pub percent: Option<f64>,
}

/// Paths written by [`export_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x}"))
}

/// The score matrix as CSV: header of task names, one row per training
/// session, then a `forgetting_pct` row. Unfilled cells and undefined
/// forgetting are `N/A`.
pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from("session");
    for name in &report.task_names {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for (i, row) in report.bleu.iter().enumerate() {
        write!(out, "after_{}", report.task_names[i]).unwrap();
        for &v in row {
            write!(out, ",{}", cell(v)).unwrap();
        }
        out.push('\n');
    }
    out.push_str("forgetting_pct");
    for r in &report.forgetting {
        write!(out, ",{}", cell(r.percent)).unwrap();
    }
    out.push('\n');
    out
}

/// Parses the matrix rows of [`report_csv`] back into values.
pub fn parse_report_csv(text: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let bad = |m: String| Error::format("<report csv>", m);
    text.lines()
        .skip(1)
        .filter(|l| l.starts_with("after_"))
        .map(|line| {
            line.split(',')
                .skip(1)
                .map(|c| match c {
                    "N/A" => Ok(None),
                    v => v.parse().map(Some).map_err(|e| bad(format!("{v:?}: {e}"))),
                })
                .collect()
        })
        .collect()
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn export_report(report: &RunReport, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        csv: dir.join("report.csv"),
        json: dir.join("report.json"),
    };
    std::fs::write(&files.csv, report_csv(report)).map_err(|e| Error::io(&files.csv, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::format(&files.json, e))?;
    std::fs::write(&files.json, json + "\n").map_err(|e| Error::io(&files.json, e))?;
    Ok(files)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

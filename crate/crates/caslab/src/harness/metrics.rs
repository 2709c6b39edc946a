use std::fs;
use std::io::Read;
use std::path::Path;

use super::HarnessError;
use crate::refinement::RefinementEvent;

/// One episode of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub trial: usize,
    pub episode: usize,
    pub level_optimality_all: Option<f64>,
    /// `None` until an obstacle has been visited.
    pub level_optimality_visited: Option<f64>,
    pub cumulative_signals: usize,
    /// Solved value of the start state before the episode.
    pub expected_cost: f64,
    pub incurred_cost_avg10: f64,
    pub cost_pct_diff: f64,
    pub active_feature_count: usize,
    pub refinement_event: bool,
    pub incurred_cost: f64,
    pub expected_cost_avg10: f64,
    pub episode_signals: usize,
    pub truncated: bool,
}

pub const METRICS_HEADER: [&str; 14] = [
    "trial",
    "episode",
    "level_optimality_all",
    "level_optimality_visited",
    "cumulative_signals",
    "expected_cost",
    "incurred_cost_avg10",
    "cost_pct_diff",
    "active_feature_count",
    "refinement_event",
    "incurred_cost",
    "expected_cost_avg10",
    "episode_signals",
    "truncated",
];

/// Columns averaged in aggregates.csv.
const AGGREGATED: [&str; 9] = [
    "level_optimality_all",
    "level_optimality_visited",
    "cumulative_signals",
    "expected_cost",
    "incurred_cost_avg10",
    "cost_pct_diff",
    "active_feature_count",
    "episode_signals",
    "incurred_cost",
];

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

impl MetricsRow {
    fn cells(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.episode.to_string(),
            fmt_opt(self.level_optimality_all),
            fmt_opt(self.level_optimality_visited),
            self.cumulative_signals.to_string(),
            fmt(self.expected_cost),
            fmt(self.incurred_cost_avg10),
            fmt(self.cost_pct_diff),
            self.active_feature_count.to_string(),
            u8::from(self.refinement_event).to_string(),
            fmt(self.incurred_cost),
            fmt(self.expected_cost_avg10),
            self.episode_signals.to_string(),
            u8::from(self.truncated).to_string(),
        ]
    }

    /// Value of an aggregated column.
    pub fn value(&self, column: &str) -> Option<f64> {
        match column {
            "level_optimality_all" => self.level_optimality_all,
            "level_optimality_visited" => self.level_optimality_visited,
            "cumulative_signals" => Some(self.cumulative_signals as f64),
            "expected_cost" => Some(self.expected_cost),
            "incurred_cost_avg10" => Some(self.incurred_cost_avg10),
            "cost_pct_diff" => Some(self.cost_pct_diff),
            "active_feature_count" => Some(self.active_feature_count as f64),
            "episode_signals" => Some(self.episode_signals as f64),
            "incurred_cost" => Some(self.incurred_cost),
            "expected_cost_avg10" => Some(self.expected_cost_avg10),
            _ => None,
        }
    }
}

/// Mean and standard error (sample deviation over the square root of n).
pub fn mean_stderr(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Some((mean, stderr))
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.cells()).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

/// Mean and standard error across trials for every episode index.
pub fn aggregates_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["episode".to_string(), "trials".to_string()];
    for c in AGGREGATED {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_stderr"));
    }
    w.write_record(&header).map_err(csv_err)?;
    let episodes = rows.iter().map(|r| r.episode + 1).max().unwrap_or(0);
    for e in 0..episodes {
        let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.episode == e).collect();
        let mut cells = vec![e.to_string(), group.len().to_string()];
        for c in AGGREGATED {
            let values: Vec<f64> = group.iter().filter_map(|r| r.value(c)).collect();
            match mean_stderr(&values) {
                Some((m, s)) => {
                    cells.push(fmt(m));
                    cells.push(fmt_opt(s));
                }
                None => cells.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&cells).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn refinements_log(events: &[(usize, RefinementEvent)]) -> Vec<u8> {
    let mut out = format!("trial\t{}\n", RefinementEvent::HEADER);
    for (trial, e) in events {
        out.push_str(&format!("{trial}\t{}\n", e.line()));
    }
    out.into_bytes()
}

/// Writes metrics.csv, aggregates.csv and refinements.log into `dir`.
pub fn emit(rows: &[MetricsRow], events: &[(usize, RefinementEvent)], dir: &Path) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(rows)?).map_err(io)?;
    fs::write(dir.join("aggregates.csv"), aggregates_csv(rows)?).map_err(io)?;
    fs::write(dir.join("refinements.log"), refinements_log(events)).map_err(io)?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(HarnessError::Io(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let bad = |col: &str| HarnessError::Io(format!("metrics line {line}: invalid {col}"));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(METRICS_HEADER[k]));
        let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(METRICS_HEADER[k]));
        let opt = |k: usize| if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) };
        rows.push(MetricsRow {
            trial: int(0)?,
            episode: int(1)?,
            level_optimality_all: opt(2)?,
            level_optimality_visited: opt(3)?,
            cumulative_signals: int(4)?,
            expected_cost: num(5)?,
            incurred_cost_avg10: num(6)?,
            cost_pct_diff: num(7)?,
            active_feature_count: int(8)?,
            refinement_event: int(9)? != 0,
            incurred_cost: num(10)?,
            expected_cost_avg10: num(11)?,
            episode_signals: int(12)?,
            truncated: int(13)? != 0,
        });
    }
    Ok(rows)
}

/// Mean over trials of each trial's mean over its last `window` episodes.
pub fn final_window_mean(rows: &[MetricsRow], column: &str, window: usize) -> Option<f64> {
    let trials: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.trial).collect();
    let per_trial: Vec<f64> = trials
        .iter()
        .filter_map(|&t| {
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.trial == t).collect();
            let start = mine.len().saturating_sub(window);
            let vals: Vec<f64> = mine[start..].iter().filter_map(|r| r.value(column)).collect();
            mean_stderr(&vals).map(|(m, _)| m)
        })
        .collect();
    mean_stderr(&per_trial).map(|(m, _)| m)
}

/// Plain-text summary of a metrics table.
pub fn summary(rows: &[MetricsRow]) -> String {
    let trials: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.trial).collect();
    let episodes = rows.iter().map(|r| r.episode + 1).max().unwrap_or(0);
    let refinements = rows.iter().filter(|r| r.refinement_event).count();
    let truncated = rows.iter().filter(|r| r.truncated).count();
    let mut out = format!(
        "trials {}  episodes {}  rows {}  refinements {}  truncated {}\n",
        trials.len(),
        episodes,
        rows.len(),
        refinements,
        truncated
    );
    let window = 20.min(episodes.max(1));
    out.push_str(&format!("{:<28}{:>14}{:>14}\n", "metric", "first", format!("last {window}")));
    for c in AGGREGATED {
        let first = final_window_mean(&rows.iter().filter(|r| r.episode == 0).cloned().collect::<Vec<_>>(), c, 1);
        let last = final_window_mean(rows, c, window);
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("{c:<28}{:>14}{:>14}\n", show(first), show(last)));
    }
    out
}

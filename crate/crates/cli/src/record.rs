//! Result rows and their CSV / JSON / TSV serializations.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Fixed column order of the per-run CSV.
pub const CSV_COLUMNS: [&str; 14] = [
    "problem",
    "grid",
    "run",
    "seed",
    "cache",
    "time_s",
    "loss_total",
    "loss_interior",
    "loss_boundary",
    "rmse",
    "lambda",
    "lr",
    "arch",
    "stop_iters",
];

/// Column order of the summary block appended to bench CSV output.
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "problem",
    "grid",
    "cache",
    "runs",
    "time_median",
    "time_min",
    "time_max",
    "rmse_median",
    "rmse_min",
    "rmse_max",
];

/// One training run. `stop_iters` echoes the configured iteration cap;
/// the iterations actually used are in `iterations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub grid: Vec<usize>,
    pub run: usize,
    pub seed: u64,
    pub cache: bool,
    pub time_s: f64,
    pub loss_total: f64,
    pub loss_interior: f64,
    pub loss_boundary: f64,
    pub rmse: Option<f64>,
    pub lambda: f64,
    pub lr: f64,
    pub arch: String,
    pub stop_iters: usize,
    pub method: String,
    pub iterations: usize,
    pub stop_reason: String,
    pub warm_started: bool,
}

pub fn grid_label(grid: &[usize]) -> String {
    grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

fn float(v: f64) -> String {
    format!("{v:e}")
}

impl RunRecord {
    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.problem.clone(),
            grid_label(&self.grid),
            self.run.to_string(),
            self.seed.to_string(),
            self.cache.to_string(),
            format!("{:.6}", self.time_s),
            float(self.loss_total),
            float(self.loss_interior),
            float(self.loss_boundary),
            self.rmse.map(float).unwrap_or_default(),
            float(self.lambda),
            float(self.lr),
            self.arch.clone(),
            self.stop_iters.to_string(),
        ]
    }
}

/// Median, minimum and maximum over one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub grid: Vec<usize>,
    pub cache: bool,
    pub runs: usize,
    pub time: Stats,
    pub rmse: Option<Stats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Stats {
            median: quantile(&sorted, 0.5),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear interpolation between order statistics of a sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Groups records by (problem, grid, cache) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<Summary> {
    let mut keys: Vec<(String, Vec<usize>, bool)> = Vec::new();
    for r in records {
        let key = (r.problem.clone(), r.grid.clone(), r.cache);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(problem, grid, cache)| {
            let group: Vec<&RunRecord> =
                records.iter().filter(|r| r.problem == problem && r.grid == grid && r.cache == cache).collect();
            let times: Vec<f64> = group.iter().map(|r| r.time_s).collect();
            let rmses: Vec<f64> = group.iter().filter_map(|r| r.rmse).collect();
            Summary {
                runs: group.len(),
                time: Stats::of(&times).expect("non-empty group"),
                rmse: Stats::of(&rmses),
                problem,
                grid,
                cache,
            }
        })
        .collect()
}

/// Per-run rows, then (for benches) a blank line and the summary block.
pub fn write_csv<W: Write>(mut out: W, records: &[RunRecord], summary: Option<&[Summary]>) -> csv::Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(CSV_COLUMNS)?;
        for r in records {
            w.write_record(r.csv_fields())?;
        }
        w.flush()?;
    }
    if let Some(summary) = summary {
        writeln!(out)?;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(SUMMARY_COLUMNS)?;
        for s in summary {
            let rmse = |f: fn(&Stats) -> f64| s.rmse.as_ref().map(|r| float(f(r))).unwrap_or_default();
            w.write_record([
                s.problem.clone(),
                grid_label(&s.grid),
                s.cache.to_string(),
                s.runs.to_string(),
                format!("{:.6}", s.time.median),
                format!("{:.6}", s.time.min),
                format!("{:.6}", s.time.max),
                rmse(|r| r.median),
                rmse(|r| r.min),
                rmse(|r| r.max),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    runs: &'a [RunRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a [Summary]>,
}

pub fn write_json<W: Write>(out: W, records: &[RunRecord], summary: Option<&[Summary]>) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, &JsonReport { runs: records, summary })
}

/// Plot data: one row per grid point with coordinates, solution, reference
/// and absolute error. Reference columns are empty when unknown.
pub fn write_plot_data<W: Write>(
    mut out: W,
    axes: &[String],
    points: &[Vec<f64>],
    solution: &[f64],
    reference: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut header: Vec<&str> = axes.iter().map(String::as_str).collect();
    header.extend(["solution", "reference", "abs_error"]);
    writeln!(out, "{}", header.join("\t"))?;
    for (i, p) in points.iter().enumerate() {
        let mut fields: Vec<String> = p.iter().map(|c| format!("{c:e}")).collect();
        fields.push(format!("{:e}", solution[i]));
        match reference {
            Some(r) => {
                fields.push(format!("{:e}", r[i]));
                fields.push(format!("{:e}", (solution[i] - r[i]).abs()));
            }
            None => fields.extend([String::new(), String::new()]),
        }
        writeln!(out, "{}", fields.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&s, 0.25), 1.75);
        let st = Stats::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((st.median, st.min, st.max), (2.0, 1.0, 3.0));
        assert_eq!(st.iqr(), 1.0);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn grid_labels() {
        assert_eq!(grid_label(&[100]), "100");
        assert_eq!(grid_label(&[10, 20]), "10x20");
    }
}

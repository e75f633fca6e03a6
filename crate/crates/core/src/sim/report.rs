//! Output formats: one CSV row per trial and a JSON-lines summary.

use std::io::Write;

use serde::Serialize;

use super::{Aggregate, Comparison, ExperimentReport, Scenario, TrialResult};
use crate::bounds::BoundReport;

/// Column set and order of the per-trial CSV; stable across versions.
pub const CSV_HEADER: [&str; 9] = [
    "trial",
    "seed",
    "recoverable",
    "first_loss_time",
    "bits_read",
    "bits_written",
    "avg_read_rate",
    "peak_read_rate",
    "counter_min",
];

fn row(t: &TrialResult) -> [String; 9] {
    [
        t.trial.to_string(),
        t.seed.to_string(),
        t.recoverable.to_string(),
        t.first_loss_time.map(|x| x.to_string()).unwrap_or_default(),
        t.bits_read.to_string(),
        t.bits_written.to_string(),
        t.avg_read_rate.to_string(),
        t.peak_read_rate.to_string(),
        t.counter_min.map(|x| x.to_string()).unwrap_or_default(),
    ]
}

pub fn write_trials_csv<W: Write>(out: W, trials: &[TrialResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in trials {
        w.write_record(row(t))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trials_csv(trials: &[TrialResult]) -> String {
    let mut buf = Vec::new();
    write_trials_csv(&mut buf, trials).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'static str,
    scenario: &'a Scenario,
    aggregate: &'a Aggregate,
    bound_report: &'a Option<BoundReport>,
    bound_error: &'a Option<String>,
    comparison: &'a Comparison,
}

/// One JSON object per line: a `trial` line per trial, then the `summary`.
pub fn write_summary_jsonl<W: Write>(mut out: W, report: &ExperimentReport) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        kind: &'static str,
        #[serde(flatten)]
        trial: &'a TrialResult,
    }
    for t in &report.trials {
        serde_json::to_writer(&mut out, &Line { kind: "trial", trial: t })?;
        out.write_all(b"\n")?;
    }
    let summary = Summary {
        kind: "summary",
        scenario: &report.scenario,
        aggregate: &report.aggregate,
        bound_report: &report.bound_report,
        bound_error: &report.bound_error,
        comparison: &report.comparison,
    };
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n")
}

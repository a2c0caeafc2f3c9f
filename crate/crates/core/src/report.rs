//! Output files. Every file starts with a header carrying the crate version
//! and the full resolved config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::protocol::{ExperimentReport, PhaseTimes, RunReport};

/// Comment lines for CSV files.
pub fn csv_header(config: &ExperimentConfig) -> Result<String> {
    Ok(format!(
        "# privfl {}\n# config {}\n",
        crate::VERSION,
        serde_json::to_string(&config.for_header())?
    ))
}

fn csv_writer(path: &Path, config: &ExperimentConfig) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(csv_header(config)?.as_bytes())?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round metrics. Every column is a deterministic function of the
/// config; timings live in a separate file.
pub fn write_metrics_csv(path: &Path, config: &ExperimentConfig, run: &RunReport) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record([
        "round",
        "oa",
        "sa",
        "asr",
        "n_selected",
        "rejected_cluster_size",
        "malicious_selected",
        "clipped",
    ])?;
    for r in &run.records {
        w.write_record([
            r.round.to_string(),
            r.metrics.oa.to_string(),
            opt(r.metrics.sa),
            opt(r.metrics.asr),
            r.n_selected.to_string(),
            r.rejected_cluster_size().to_string(),
            r.malicious_selected.to_string(),
            r.clipped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-round wall-clock seconds by phase.
pub fn write_timings_csv(path: &Path, config: &ExperimentConfig, run: &RunReport) -> Result<()> {
    let mut w = csv_writer(path, config)?;
    let mut head = vec!["round"];
    head.extend(PhaseTimes::NAMES);
    w.write_record(&head)?;
    for r in &run.records {
        let mut row = vec![r.round.to_string()];
        row.extend(r.wall_times.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonlHeader<'a> {
    version: &'a str,
    config: ExperimentConfig,
}

#[derive(Serialize)]
struct RoundLine<'a> {
    round: u64,
    gamma: &'a [u8],
    projections: &'a [Vec<f64>],
    cluster_report: &'a Option<crate::robust::ClusterReport>,
    probe: &'a Option<crate::protocol::InvarianceProbe>,
}

/// One JSON object per round with the selection, projections and cluster
/// report. The first line is the header object.
pub fn write_rounds_jsonl(path: &Path, config: &ExperimentConfig, run: &RunReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = JsonlHeader {
        version: crate::VERSION,
        config: config.for_header(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in run.records.iter().skip(1) {
        let line = RoundLine {
            round: r.round,
            gamma: &r.gamma,
            projections: &r.projections,
            cluster_report: &r.cluster_report,
            probe: &r.probe,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    label: &'a str,
    eta: Option<i64>,
    group_bits: Option<u64>,
    rounds: usize,
    final_metrics: crate::ml::Metrics,
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    malicious: &'a [bool],
    runs: Vec<RunSummary<'a>>,
}

fn summarize(run: &RunReport) -> RunSummary<'_> {
    RunSummary {
        label: &run.label,
        eta: run.eta,
        group_bits: run.group_bits,
        rounds: run.records.len() - 1,
        final_metrics: run.final_metrics(),
    }
}

/// Write the full output set of an experiment into `dir`.
pub fn write_experiment(dir: &Path, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let cfg = &report.config;
    let mut written = Vec::new();
    let mut runs = vec![&report.srfed];
    runs.extend(report.fedavg.as_ref());
    for run in &runs {
        let prefix = if run.label == "srfed" { String::new() } else { format!("{}_", run.label) };
        let metrics = dir.join(format!("{prefix}metrics.csv"));
        write_metrics_csv(&metrics, cfg, run)?;
        let timings = dir.join(format!("{prefix}timings.csv"));
        write_timings_csv(&timings, cfg, run)?;
        written.extend([metrics, timings]);
    }
    let rounds = dir.join("rounds.jsonl");
    write_rounds_jsonl(&rounds, cfg, &report.srfed)?;
    let summary = dir.join("summary.json");
    let s = Summary {
        version: &report.version,
        config: cfg,
        malicious: &report.malicious,
        runs: runs.iter().map(|r| summarize(r)).collect(),
    };
    std::fs::write(&summary, serde_json::to_string_pretty(&s)? + "\n")?;
    written.extend([rounds, summary]);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::Metrics;
    use crate::protocol::RoundRecord;

    fn record(round: u64, sa: Option<f64>) -> RoundRecord {
        RoundRecord {
            round,
            metrics: Metrics { oa: 0.5, sa, asr: sa.map(|s| 1.0 - s) },
            gamma: vec![1, 0],
            n_selected: 1,
            malicious_selected: 0,
            clipped: 0,
            cluster_report: None,
            projections: Vec::new(),
            probe: None,
            wall_times: PhaseTimes::default(),
        }
    }

    #[test]
    fn metrics_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let cfg = ExperimentConfig::synthetic_benchmark();
        let run = RunReport {
            label: "srfed".into(),
            eta: Some(3),
            group_bits: None,
            records: vec![record(0, Some(0.25)), record(1, None)],
        };
        write_metrics_csv(&path, &cfg, &run).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# privfl "));
        assert!(lines[1].starts_with("# config {"));
        assert_eq!(lines[2], "round,oa,sa,asr,n_selected,rejected_cluster_size,malicious_selected,clipped");
        assert_eq!(lines[3], "0,0.5,0.25,0.75,1,0,0,0");
        assert_eq!(lines[4], "1,0.5,,,1,0,0,0");
        assert!(!text.contains('\r'));
        let embedded: ExperimentConfig = serde_json::from_str(lines[1].trim_start_matches("# config ")).unwrap();
        assert_eq!(embedded, cfg.for_header());
    }
}

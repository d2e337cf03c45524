use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::experiment::ExperimentReport;
use crate::error::Result;

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    config_sha256: String,
    seed: u64,
    trial_streams: String,
    outputs: [&'static str; 3],
}

/// SHA-256 of the canonical JSON form of the configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `metrics.csv`, `trials.csv`, `manifest.json` and `table.txt` into
/// `dir`. The files depend only on the configuration.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let t = &report.table;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["experiment", "method", "metric", "value"])?;
    for (method, m) in [("adjusted", &t.adjusted), ("unadjusted", &t.unadjusted)] {
        for (metric, value) in [("coverage", m.coverage), ("fcr", m.fcr), ("risk", m.risk), ("mean_length", m.mean_length)] {
            if let Some(v) = value {
                w.write_record([t.experiment.as_str(), method, metric, &v.to_string()])?;
            }
        }
        w.write_record([t.experiment.as_str(), method, "intervals", &m.intervals.to_string()])?;
    }
    for (metric, v) in [("trials", t.trials), ("used", t.used), ("skipped", t.skipped), ("failed", t.failed)] {
        w.write_record([t.experiment.as_str(), "all", metric, &v.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
    w.write_record([
        "trial",
        "status",
        "selected",
        "formulation",
        "adjusted_covered",
        "adjusted_squared_error",
        "adjusted_total_length",
        "unadjusted_covered",
        "unadjusted_squared_error",
        "unadjusted_total_length",
        "step_size",
        "divergent_steps",
        "message",
    ])?;
    for r in &report.records {
        let status = match r.status {
            super::experiment::TrialStatus::Used => "used",
            super::experiment::TrialStatus::SkippedEmpty => "skipped_empty",
            super::experiment::TrialStatus::Failed => "failed",
        };
        let sel = r.selected.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ");
        let a = r.adjusted.as_ref();
        let u = r.unadjusted.as_ref();
        w.write_record([
            r.trial.to_string(),
            status.to_string(),
            sel,
            r.formulation.map(|f| f.name().to_string()).unwrap_or_default(),
            a.map(|m| m.covered.to_string()).unwrap_or_default(),
            opt(a.map(|m| m.squared_error)),
            opt(a.map(|m| m.total_length)),
            u.map(|m| m.covered.to_string()).unwrap_or_default(),
            opt(u.map(|m| m.squared_error)),
            opt(u.map(|m| m.total_length)),
            opt(r.step_size),
            r.divergent_steps.to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;

    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        config_sha256: config_hash(cfg)?,
        seed: cfg.seed,
        trial_streams: "ChaCha8(seed) with stream = trial index; fixed design on stream 2^64-1".into(),
        outputs: ["metrics.csv", "trials.csv", "table.txt"],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join("table.txt"), t.render())?;
    Ok(())
}

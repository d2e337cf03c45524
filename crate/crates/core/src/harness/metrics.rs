use serde::Serialize;

use super::config::{ExperimentConfig, RiskAggregation};
use super::experiment::{MethodTrial, MetricsTable, TrialRecord, TrialStatus};

/// Averages of one method over the used trials; `None` when no trial was
/// used.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MethodMetrics {
    /// Mean over trials of the fraction of covering intervals, `1 − FCR`.
    pub coverage: Option<f64>,
    pub fcr: Option<f64>,
    pub risk: Option<f64>,
    /// Mean length pooled over all intervals.
    pub mean_length: Option<f64>,
    pub intervals: usize,
}

/// False coverage rate `E[V / max(R, 1)]` from per-trial cover flags.
pub fn fcr(cover_flags: &[Vec<bool>]) -> f64 {
    if cover_flags.is_empty() {
        return 0.0;
    }
    let total: f64 = cover_flags
        .iter()
        .map(|t| {
            let v = t.iter().filter(|&&c| !c).count() as f64;
            v / (t.len().max(1) as f64)
        })
        .sum();
    total / cover_flags.len() as f64
}

fn method_metrics<'a>(trials: impl Iterator<Item = (usize, &'a MethodTrial)>, risk: RiskAggregation) -> MethodMetrics {
    let mut flags = Vec::new();
    let mut risks = Vec::new();
    let mut length = 0.0;
    let mut intervals = 0;
    for (r, t) in trials {
        let mut f = vec![true; t.covered];
        f.resize(r, false);
        flags.push(f);
        risks.push(match risk {
            RiskAggregation::Sum => t.squared_error,
            RiskAggregation::Mean => t.squared_error / r.max(1) as f64,
        });
        length += t.total_length;
        intervals += r;
    }
    if flags.is_empty() {
        return MethodMetrics::default();
    }
    let f = fcr(&flags);
    MethodMetrics {
        coverage: Some(1.0 - f),
        fcr: Some(f),
        risk: Some(risks.iter().sum::<f64>() / risks.len() as f64),
        mean_length: (intervals > 0).then(|| length / intervals as f64),
        intervals,
    }
}

pub(crate) fn aggregate(cfg: &ExperimentConfig, records: &[TrialRecord]) -> MetricsTable {
    let count = |s: TrialStatus| records.iter().filter(|r| r.status == s).count();
    let used: Vec<&TrialRecord> = records.iter().filter(|r| r.status == TrialStatus::Used).collect();
    let pick = |f: fn(&TrialRecord) -> Option<&MethodTrial>| {
        method_metrics(used.iter().filter_map(|r| f(r).map(|m| (r.selected.len(), m))), cfg.risk)
    };
    MetricsTable {
        experiment: cfg.name.clone(),
        trials: records.len(),
        used: used.len(),
        skipped: count(TrialStatus::SkippedEmpty),
        failed: count(TrialStatus::Failed),
        adjusted: pick(|r| r.adjusted.as_ref()),
        unadjusted: pick(|r| r.unadjusted.as_ref()),
    }
}

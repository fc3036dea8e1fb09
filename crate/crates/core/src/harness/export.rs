//! Tabular exports over episode reports.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{EpisodeReport, Mode};
use crate::metrics::METRIC_NAMES;

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricStats {
    /// `None` for no data.
    pub fn of(metric: &str, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            metric: metric.to_string(),
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub steer_angle: f64,
    pub accel_rate: f64,
    pub count: u64,
    pub relative_frequency: f64,
}

/// Selection counts summed over all reports, per grid action. Frequencies
/// are all zero when nothing was selected.
pub fn action_distribution(reports: &[EpisodeReport]) -> Result<Vec<ActionRow>, String> {
    let mut rows: Vec<ActionRow> = Vec::new();
    for r in reports {
        for c in &r.action_counts {
            if c.index == rows.len() {
                rows.push(ActionRow {
                    steer_angle: c.steer_angle,
                    accel_rate: c.accel_rate,
                    count: 0,
                    relative_frequency: 0.0,
                });
            }
            let row = rows.get_mut(c.index).ok_or_else(|| {
                format!("episode {}: action index {} out of order", r.seed, c.index)
            })?;
            if row.steer_angle != c.steer_angle || row.accel_rate != c.accel_rate {
                return Err(format!(
                    "episode {}: action grids differ at index {}",
                    r.seed, c.index
                ));
            }
            row.count += c.count;
        }
    }
    let total: u64 = rows.iter().map(|r| r.count).sum();
    if total > 0 {
        for row in &mut rows {
            row.relative_frequency = row.count as f64 / total as f64;
        }
    }
    Ok(rows)
}

pub fn write_action_distribution_csv<W: Write>(rows: &[ActionRow], mut out: W) -> io::Result<()> {
    writeln!(out, "steer_angle,accel_rate,count,relative_frequency")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.steer_angle, r.accel_rate, r.count, r.relative_frequency
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLongRow {
    pub mode: Mode,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// One row per (mode, episode with metrics, metric).
pub fn metrics_long(runs: &[(Mode, Vec<EpisodeReport>)]) -> Vec<MetricsLongRow> {
    let mut out = Vec::new();
    for (mode, reports) in runs {
        for r in reports {
            if let Some(q) = r.quality {
                for (metric, value) in q.values() {
                    out.push(MetricsLongRow {
                        mode: *mode,
                        seed: r.seed,
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
    }
    out
}

pub fn write_metrics_long_csv<W: Write>(rows: &[MetricsLongRow], mut out: W) -> io::Result<()> {
    writeln!(out, "mode,seed,metric,value")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.mode.as_str(),
            r.seed,
            r.metric,
            r.value
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub mode: Mode,
    pub stats: Vec<MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub label: String,
    /// Median per column, in column order.
    pub medians: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub columns: Vec<MetricColumn>,
    pub rows: Vec<MetricRow>,
    pub warnings: Vec<String>,
}

/// One column per requested mode that has reports; the others are
/// omitted with a warning.
pub fn metric_table(requested: &[Mode], runs: &[(Mode, Vec<EpisodeReport>)]) -> MetricTable {
    let mut columns = Vec::new();
    let mut warnings = Vec::new();
    for mode in requested {
        let reports: Vec<&EpisodeReport> = runs
            .iter()
            .filter(|(m, _)| m == mode)
            .flat_map(|(_, r)| r)
            .collect();
        if reports.iter().all(|r| r.quality.is_none()) {
            warnings.push(format!(
                "no episodes with metrics for mode {}",
                mode.as_str()
            ));
            continue;
        }
        let stats = METRIC_NAMES
            .iter()
            .filter_map(|(_, field)| {
                let values: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.quality.map(|q| q.field(field).expect("known field")))
                    .collect();
                MetricStats::of(field, &values)
            })
            .collect();
        columns.push(MetricColumn { mode: *mode, stats });
    }
    let rows = METRIC_NAMES
        .iter()
        .map(|(label, field)| MetricRow {
            metric: field.to_string(),
            label: label.to_string(),
            medians: columns
                .iter()
                .map(|c| {
                    c.stats
                        .iter()
                        .find(|s| s.metric == *field)
                        .map(|s| s.median)
                })
                .collect(),
        })
        .collect();
    MetricTable {
        columns,
        rows,
        warnings,
    }
}

/// Median table: one row per metric, one column per mode.
pub fn write_metric_table_csv<W: Write>(table: &MetricTable, mut out: W) -> io::Result<()> {
    write!(out, "metric")?;
    for c in &table.columns {
        write!(out, ",{}", c.mode.as_str())?;
    }
    writeln!(out)?;
    for r in &table.rows {
        write!(out, "{}", r.metric)?;
        for m in &r.medians {
            match m {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

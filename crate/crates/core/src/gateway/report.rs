//! Offline summaries of a readings log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use super::persist::ReadingRecord;
use super::GatewayError;
use crate::aggregation::{ParamStats, SiteAggregate, WindowStats};
use crate::frame::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum GroupBy {
    #[default]
    Device,
    Site,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

/// Site a device belongs to: the id up to its first `_`.
pub fn site_of(device_id: &DeviceId) -> &str {
    match device_id.as_str().split_once('_') {
        Some((site, _)) if !site.is_empty() => site,
        _ => device_id.as_str(),
    }
}

/// Rounds to two decimals, ties toward positive infinity.
pub fn round_half_up_2dp(x: f64) -> f64 {
    let scaled = x * 100.0;
    let floor = scaled.floor();
    // binary representation puts decimal ties like 1.005 a hair off .5
    let tie = ((scaled - floor) - 0.5).abs() <= 1e-9 * scaled.abs().max(1.0);
    let rounded = if tie { floor + 1.0 } else { scaled.round() };
    rounded / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub id: String,
    pub count: usize,
    pub temp_c: ParamStats,
    pub ph: ParamStats,
    pub tds_ppm: ParamStats,
    pub turbidity_ntu: ParamStats,
}

impl GroupSummary {
    fn from_stats(id: String, s: WindowStats) -> Self {
        GroupSummary {
            id,
            count: s.count,
            temp_c: s.temp_c,
            ph: s.ph,
            tds_ppm: s.tds_ppm,
            turbidity_ntu: s.turbidity_ntu,
        }
    }

    pub fn params(&self) -> [(&'static str, ParamStats); 4] {
        [
            ("temp_c", self.temp_c),
            ("ph", self.ph),
            ("tds_ppm", self.tds_ppm),
            ("turbidity_ntu", self.turbidity_ntu),
        ]
    }
}

/// Full-precision per-group statistics, ordered by group id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    /// 1-based line numbers that did not parse as a reading record.
    pub corrupt_lines: Vec<usize>,
}

impl Summary {
    pub fn group(&self, id: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn skipped(&self) -> usize {
        self.corrupt_lines.len()
    }
}

pub fn summarize(readings_path: &Path, group_by: GroupBy) -> Result<Summary, GatewayError> {
    let file = std::fs::File::open(readings_path).map_err(|source| GatewayError::Io {
        path: readings_path.to_path_buf(),
        source,
    })?;
    summarize_reader(std::io::BufReader::new(file), group_by).map_err(|source| GatewayError::Io {
        path: readings_path.to_path_buf(),
        source,
    })
}

/// Bad lines are skipped and recorded; blank lines are ignored.
pub fn summarize_reader(reader: impl BufRead, group_by: GroupBy) -> std::io::Result<Summary> {
    let mut groups: BTreeMap<String, SiteAggregate> = BTreeMap::new();
    let mut corrupt_lines = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: ReadingRecord = match serde_json::from_slice(&line) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(line = i + 1, error = %e, "skipping corrupt log line");
                corrupt_lines.push(i + 1);
                continue;
            }
        };
        let key = match group_by {
            GroupBy::Device => record.device_id.as_str(),
            GroupBy::Site => site_of(&record.device_id),
        };
        let agg = groups.entry(key.to_string()).or_insert_with(|| {
            SiteAggregate::new(DeviceId::new(key).expect("derived from a valid device id"))
        });
        agg.record(&record.reading());
    }
    Ok(Summary {
        groups: groups
            .into_iter()
            .filter_map(|(id, agg)| agg.stats().map(|s| GroupSummary::from_stats(id, s)))
            .collect(),
        corrupt_lines,
    })
}

#[derive(Serialize)]
struct DisplayStats {
    mean: f64,
    min: f64,
    max: f64,
}

impl From<ParamStats> for DisplayStats {
    fn from(p: ParamStats) -> Self {
        DisplayStats {
            mean: round_half_up_2dp(p.mean),
            min: round_half_up_2dp(p.min),
            max: round_half_up_2dp(p.max),
        }
    }
}

#[derive(Serialize)]
struct DisplayGroup<'a> {
    id: &'a str,
    count: usize,
    temp_c: DisplayStats,
    ph: DisplayStats,
    tds_ppm: DisplayStats,
    turbidity_ntu: DisplayStats,
}

#[derive(Serialize)]
struct DisplayReport<'a> {
    groups: Vec<DisplayGroup<'a>>,
    skipped_lines: usize,
    corrupt_lines: &'a [usize],
}

fn f2(x: f64) -> String {
    format!("{:.2}", round_half_up_2dp(x))
}

/// Renders a summary; every statistic is shown at two decimals.
pub fn render(summary: &Summary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let report = DisplayReport {
                groups: summary
                    .groups
                    .iter()
                    .map(|g| DisplayGroup {
                        id: &g.id,
                        count: g.count,
                        temp_c: g.temp_c.into(),
                        ph: g.ph.into(),
                        tds_ppm: g.tds_ppm.into(),
                        turbidity_ntu: g.turbidity_ntu.into(),
                    })
                    .collect(),
                skipped_lines: summary.skipped(),
                corrupt_lines: &summary.corrupt_lines,
            };
            let mut out = serde_json::to_string_pretty(&report).expect("plain data serializes");
            out.push('\n');
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("group,count");
            for name in ["temp_c", "ph", "tds_ppm", "turbidity_ntu"] {
                let _ = write!(out, ",{name}_mean,{name}_min,{name}_max");
            }
            out.push('\n');
            for g in &summary.groups {
                let _ = write!(out, "{},{}", g.id, g.count);
                for (_, p) in g.params() {
                    let _ = write!(out, ",{},{},{}", f2(p.mean), f2(p.min), f2(p.max));
                }
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let mut rows: Vec<Vec<String>> = vec![vec![
                "group".into(),
                "count".into(),
                "temp_c mean".into(),
                "min".into(),
                "max".into(),
                "ph mean".into(),
                "min".into(),
                "max".into(),
                "tds_ppm mean".into(),
                "min".into(),
                "max".into(),
                "turbidity_ntu mean".into(),
                "min".into(),
                "max".into(),
            ]];
            for g in &summary.groups {
                let mut row = vec![g.id.clone(), g.count.to_string()];
                for (_, p) in g.params() {
                    row.extend([f2(p.mean), f2(p.min), f2(p.max)]);
                }
                rows.push(row);
            }
            let widths: Vec<usize> = (0..rows[0].len())
                .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            for row in &rows {
                let cells: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (cell, &w))| {
                        if c == 0 {
                            format!("{cell:<w$}")
                        } else {
                            format!("{cell:>w$}")
                        }
                    })
                    .collect();
                out.push_str(cells.join("  ").trim_end());
                out.push('\n');
            }
            if summary.skipped() > 0 {
                let _ = writeln!(
                    out,
                    "skipped {} corrupt line(s): {:?}",
                    summary.skipped(),
                    summary.corrupt_lines
                );
            }
            out
        }
    }
}

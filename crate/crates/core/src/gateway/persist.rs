//! Append-only JSONL logs for readings and alerts.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::GatewayError;
use crate::assessment::{
    violated_threshold, Parameter, PhStatus, QualityAssessment, TdsStatus, TempStatus, Thresholds,
    TurbidityLevel, Verdict,
};
use crate::calibration::{Measurements, Reading};
use crate::frame::DeviceId;

/// ISO-8601 UTC with millisecond precision, e.g. `2024-05-01T12:00:00.250Z`.
pub mod ts_millis {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(FORMAT).to_string()
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&text, FORMAT)
            .map(|naive| naive.and_utc())
            .map_err(serde::de::Error::custom)
    }
}

/// One line of the readings log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingRecord {
    #[serde(with = "ts_millis")]
    pub ts: DateTime<Utc>,
    pub device_id: DeviceId,
    pub seq: u32,
    pub temp_c: f64,
    pub ph: f64,
    pub tds_ppm: f64,
    pub turbidity_ntu: f64,
    pub ph_status: PhStatus,
    pub turbidity_level: TurbidityLevel,
    pub temp_status: TempStatus,
    pub tds_status: TdsStatus,
    pub overall: Verdict,
    pub violations: Vec<Parameter>,
}

impl ReadingRecord {
    pub fn new(reading: &Reading, assessment: &QualityAssessment) -> Self {
        let m = reading.values;
        ReadingRecord {
            ts: reading.timestamp,
            device_id: reading.device_id.clone(),
            seq: reading.seq,
            temp_c: m.temp_c,
            ph: m.ph,
            tds_ppm: m.tds_ppm,
            turbidity_ntu: m.turbidity_ntu,
            ph_status: assessment.ph_status,
            turbidity_level: assessment.turbidity_level,
            temp_status: assessment.temp_status,
            tds_status: assessment.tds_status,
            overall: assessment.overall,
            violations: assessment.violations.clone(),
        }
    }

    pub fn measurements(&self) -> Measurements {
        Measurements::new(self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu)
    }

    pub fn reading(&self) -> Reading {
        Reading {
            device_id: self.device_id.clone(),
            timestamp: self.ts,
            seq: self.seq,
            values: self.measurements(),
        }
    }
}

/// One line of the alerts log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertEvent {
    #[serde(with = "ts_millis")]
    pub ts: DateTime<Utc>,
    pub device_id: DeviceId,
    pub parameter: Parameter,
    pub value: f64,
    pub threshold: f64,
    pub status: String,
}

/// Append-only JSONL file with a single serialized writer.
///
/// Every record is rendered in full and written with one `write_all` on an
/// `O_APPEND` handle, so lines never interleave.
#[derive(Debug)]
pub struct JsonlWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlWriter {
    /// Opens (creating if needed) `path` for appending. A trailing partial
    /// line left by a crash is terminated so new records start on a fresh line.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let fail = |source| GatewayError::Persistence {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(fail)?;
        let len = file.metadata().map_err(fail)?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::End(-1)).map_err(fail)?;
            file.read_exact(&mut last).map_err(fail)?;
            if last[0] != b'\n' {
                warn!(path = %path.display(), "terminating partial trailing line");
                file.write_all(b"\n").map_err(fail)?;
            }
        }
        Ok(JsonlWriter {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), GatewayError> {
        let mut line = serde_json::to_vec(record).map_err(|e| GatewayError::Persistence {
            path: self.path.clone(),
            source: std::io::Error::other(e),
        })?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line).map_err(|source| GatewayError::Persistence {
            path: self.path.clone(),
            source,
        })
    }

    pub fn sync(&self) -> Result<(), GatewayError> {
        let file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.sync_data().map_err(|source| GatewayError::Persistence {
            path: self.path.clone(),
            source,
        })
    }
}

/// Appends the reading and its assessment as one line.
pub fn persist_reading(
    reading: &Reading,
    assessment: &QualityAssessment,
    writer: &JsonlWriter,
) -> Result<ReadingRecord, GatewayError> {
    let record = ReadingRecord::new(reading, assessment);
    writer.append(&record)?;
    Ok(record)
}

/// One event per violated parameter, in channel order.
pub fn alerts_for(reading: &Reading, assessment: &QualityAssessment, thresholds: &Thresholds) -> Vec<AlertEvent> {
    assessment
        .violations
        .iter()
        .map(|&parameter| AlertEvent {
            ts: reading.timestamp,
            device_id: reading.device_id.clone(),
            parameter,
            value: parameter.value_of(&reading.values),
            threshold: violated_threshold(parameter, assessment, thresholds),
            status: assessment.status_of(parameter).to_string(),
        })
        .collect()
}

/// Builds, appends and logs the alerts for a reading.
pub fn emit_alerts(
    reading: &Reading,
    assessment: &QualityAssessment,
    thresholds: &Thresholds,
    writer: &JsonlWriter,
) -> Result<Vec<AlertEvent>, GatewayError> {
    let alerts = alerts_for(reading, assessment, thresholds);
    for alert in &alerts {
        writer.append(alert)?;
        warn!(
            device = %alert.device_id,
            parameter = %alert.parameter,
            value = alert.value,
            threshold = alert.threshold,
            status = %alert.status,
            "water quality alert"
        );
    }
    Ok(alerts)
}

//! Field-data fixtures: CSV rows of per-site takes, replayed as WQ2 frames.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::calibration::Measurements;
use crate::frame::{DeviceId, FrameKind, SensorFrame, FIXED_POINT_RANGES, FIXED_POINT_SCALES};

pub const FIXTURE_HEADER: [&str; 6] = ["site", "take", "temp_c", "ph", "tds_ppm", "turbidity_ntu"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub site: String,
    pub take: u32,
    pub temp_c: f64,
    pub ph: f64,
    pub tds_ppm: f64,
    pub turbidity_ntu: f64,
}

impl FixtureRow {
    pub fn measurements(&self) -> Measurements {
        Measurements::new(self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu)
    }

    /// WQ2 channel integers; exact for values with at most two decimals.
    pub fn fixed_point_channels(&self) -> Result<[i32; 4], String> {
        let physical = self.measurements().to_array();
        let mut channels = [0i32; 4];
        for i in 0..4 {
            let scaled = (physical[i] * FIXED_POINT_SCALES[i]).round();
            let (lo, hi) = FIXED_POINT_RANGES[i];
            if !(scaled >= f64::from(lo) && scaled <= f64::from(hi)) {
                return Err(format!("value {} outside the representable range", physical[i]));
            }
            channels[i] = scaled as i32;
        }
        Ok(channels)
    }
}

pub fn load_fixture(path: &Path) -> Result<Vec<FixtureRow>, SimError> {
    let file = std::fs::File::open(path).map_err(|e| SimError::FixtureParse {
        row: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    read_fixture(file)
}

/// Parses fixture CSV. Row numbers in errors count the header as row 1.
pub fn read_fixture(reader: impl Read) -> Result<Vec<FixtureRow>, SimError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers().map_err(|e| SimError::FixtureParse {
        row: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(FIXTURE_HEADER) {
        return Err(SimError::FixtureParse {
            row: 1,
            reason: format!("header must be `{}`", FIXTURE_HEADER.join(",")),
        });
    }

    let mut rows = Vec::new();
    for (i, record) in csv.deserialize::<FixtureRow>().enumerate() {
        let row = i + 2;
        let parsed = record.map_err(|e| SimError::FixtureParse {
            row,
            reason: e.to_string(),
        })?;
        if parsed.take == 0 {
            return Err(SimError::FixtureParse {
                row,
                reason: "take numbers start at 1".into(),
            });
        }
        parsed
            .measurements()
            .validate()
            .map_err(|e| SimError::FixtureParse {
                row,
                reason: e.to_string(),
            })?;
        parsed
            .fixed_point_channels()
            .map_err(|reason| SimError::FixtureParse { row, reason })?;
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(SimError::FixtureParse {
            row: 2,
            reason: "fixture has no data rows".into(),
        });
    }
    Ok(rows)
}

/// Distinct site names, in first-appearance order.
pub fn sites(rows: &[FixtureRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for row in rows {
        if !out.contains(&row.site) {
            out.push(row.site.clone());
        }
    }
    out
}

/// One WQ2 frame per row in take order; `seq` counts from 0 and `uptime_ms`
/// advances by `cadence_ms` per frame.
pub fn replay_fixture(
    rows: &[FixtureRow],
    device_id: &DeviceId,
    cadence_ms: u64,
) -> Result<Vec<SensorFrame>, SimError> {
    if rows.is_empty() {
        return Err(SimError::FixtureParse {
            row: 0,
            reason: "no rows to replay".into(),
        });
    }
    let mut ordered: Vec<&FixtureRow> = rows.iter().collect();
    ordered.sort_by_key(|r| r.take);
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let channels = row.fixed_point_channels().map_err(|reason| SimError::FixtureParse {
                row: i + 2,
                reason,
            })?;
            Ok(SensorFrame {
                kind: FrameKind::FixedPoint,
                device_id: device_id.clone(),
                seq: i as u32,
                uptime_ms: i as u64 * cadence_ms,
                channels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SITE4: &str = include_str!("../../fixtures/site-4.csv");

    #[test]
    fn site4_first_frame() {
        let rows = read_fixture(SITE4.as_bytes()).unwrap();
        assert_eq!(rows.len(), 5);
        let frames = replay_fixture(&rows, &DeviceId::new("Site-4").unwrap(), 5000).unwrap();
        assert_eq!(frames[0].channels, [3617, 8270, 17012, 2940]);
        assert_eq!(frames[0].seq, 0);
        assert_eq!(frames[4].seq, 4);
        assert_eq!(frames[4].uptime_ms, 20_000);
    }

    #[test]
    fn replay_orders_by_take() {
        let mut rows = read_fixture(SITE4.as_bytes()).unwrap();
        rows.reverse();
        let frames = replay_fixture(&rows, &DeviceId::new("s").unwrap(), 10).unwrap();
        assert_eq!(frames[0].channels[0], 3617);
    }

    #[test]
    fn empty_inputs() {
        let header_only = "site,take,temp_c,ph,tds_ppm,turbidity_ntu\n";
        assert!(matches!(
            read_fixture(header_only.as_bytes()),
            Err(SimError::FixtureParse { .. })
        ));
        assert!(matches!(read_fixture("".as_bytes()), Err(SimError::FixtureParse { row: 1, .. })));
        assert!(replay_fixture(&[], &DeviceId::new("s").unwrap(), 10).is_err());
    }

    #[test]
    fn malformed_rows_report_row_number() {
        let bad = "site,take,temp_c,ph,tds_ppm,turbidity_ntu\nS,1,20,7,100,1\nS,2,abc,7,100,1\n";
        assert!(matches!(
            read_fixture(bad.as_bytes()),
            Err(SimError::FixtureParse { row: 3, .. })
        ));
        let out_of_range = "site,take,temp_c,ph,tds_ppm,turbidity_ntu\nS,1,20,15,100,1\n";
        assert!(matches!(
            read_fixture(out_of_range.as_bytes()),
            Err(SimError::FixtureParse { row: 2, .. })
        ));
        let wrong_header = "site,take,temp,ph,tds_ppm,turbidity_ntu\nS,1,20,7,100,1\n";
        assert!(matches!(
            read_fixture(wrong_header.as_bytes()),
            Err(SimError::FixtureParse { row: 1, .. })
        ));
    }

    #[test]
    fn fixed_point_is_exact_for_two_decimals() {
        for cents in 0..20_000i32 {
            let value = f64::from(cents) / 100.0;
            let text = format!("{value:.2}");
            let parsed: f64 = text.parse().unwrap();
            let row = FixtureRow {
                site: "s".into(),
                take: 1,
                temp_c: parsed.min(125.0),
                ph: (parsed / 20.0).min(14.0),
                tds_ppm: parsed,
                turbidity_ntu: parsed,
            };
            let ch = row.fixed_point_channels().unwrap();
            assert_eq!(ch[2], cents);
            assert_eq!(f64::from(ch[2]) / 100.0, parsed);
            assert_eq!(f64::from(ch[3]) / 1000.0, parsed);
        }
    }
}

//! Per-device statistics: cumulative aggregates with sequence checking, and
//! fixed-capacity rolling windows.

use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Measurements, Reading};
use crate::frame::DeviceId;

/// Sequence numbers ahead of the last accepted one by less than this are new.
pub const SEQ_STALENESS_WINDOW: u32 = 1 << 31;

/// Rolling window capacity matching five takes per site.
pub const DEFAULT_WINDOW_LEN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("stale sequence from {device_id}: got {seq}, last accepted {last_seq}")]
    StaleSequence {
        device_id: DeviceId,
        seq: u32,
        last_seq: u32,
    },
    #[error("reading from {got} pushed into aggregate for {expected}")]
    DeviceMismatch { expected: DeviceId, got: DeviceId },
    #[error("no samples to average")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics over a set of readings, one [`ParamStats`] per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub count: usize,
    /// Sample capacity; `None` for cumulative statistics.
    pub window_len: Option<usize>,
    pub temp_c: ParamStats,
    pub ph: ParamStats,
    pub tds_ppm: ParamStats,
    pub turbidity_ntu: ParamStats,
}

impl WindowStats {
    pub fn params(&self) -> [ParamStats; 4] {
        [self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu]
    }

    pub fn means(&self) -> Measurements {
        Measurements::from_array(self.params().map(|p| p.mean))
    }
}

/// Running sums and extrema for the four parameters.
#[derive(Debug, Clone, Default, PartialEq)]
struct Accumulator {
    count: usize,
    sum: [f64; 4],
    min: [f64; 4],
    max: [f64; 4],
}

impl Accumulator {
    fn push(&mut self, m: &Measurements) {
        let values = m.to_array();
        if self.count == 0 {
            self.min = values;
            self.max = values;
        }
        for i in 0..4 {
            self.sum[i] += values[i];
            self.min[i] = self.min[i].min(values[i]);
            self.max[i] = self.max[i].max(values[i]);
        }
        self.count += 1;
    }

    fn stats(&self, window_len: Option<usize>) -> Option<WindowStats> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let p = |i: usize| ParamStats {
            // a mean of identical values can drift below min by one ulp
            mean: (self.sum[i] / n).clamp(self.min[i], self.max[i]),
            min: self.min[i],
            max: self.max[i],
        };
        Some(WindowStats {
            count: self.count,
            window_len,
            temp_c: p(0),
            ph: p(1),
            tds_ppm: p(2),
            turbidity_ntu: p(3),
        })
    }
}

/// Cumulative statistics for one device or site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteAggregate {
    id: DeviceId,
    acc: Accumulator,
    last_seq: Option<u32>,
    last_timestamp: Option<DateTime<Utc>>,
}

impl SiteAggregate {
    pub fn new(id: DeviceId) -> Self {
        SiteAggregate {
            id,
            acc: Accumulator::default(),
            last_seq: None,
            last_timestamp: None,
        }
    }

    pub fn id(&self) -> &DeviceId {
        &self.id
    }

    pub fn count(&self) -> usize {
        self.acc.count
    }

    pub fn last_seq(&self) -> Option<u32> {
        self.last_seq
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.last_timestamp
    }

    pub fn stats(&self) -> Option<WindowStats> {
        self.acc.stats(None)
    }

    /// Whether `seq` is newer than the last accepted sequence number,
    /// allowing for u32 wraparound.
    pub fn is_fresh(&self, seq: u32) -> bool {
        match self.last_seq {
            None => true,
            Some(last) => {
                let ahead = seq.wrapping_sub(last);
                ahead != 0 && ahead < SEQ_STALENESS_WINDOW
            }
        }
    }

    /// Folds `reading` in, rejecting duplicates and out-of-order sequence
    /// numbers without touching state.
    pub fn push_reading(&mut self, reading: &Reading) -> Result<(), AggregationError> {
        if reading.device_id != self.id {
            return Err(AggregationError::DeviceMismatch {
                expected: self.id.clone(),
                got: reading.device_id.clone(),
            });
        }
        if !self.is_fresh(reading.seq) {
            return Err(AggregationError::StaleSequence {
                device_id: self.id.clone(),
                seq: reading.seq,
                last_seq: self.last_seq.unwrap_or_default(),
            });
        }
        self.record(reading);
        self.last_seq = Some(reading.seq);
        Ok(())
    }

    /// Folds `reading` in without any sequence check.
    pub fn record(&mut self, reading: &Reading) {
        self.acc.push(&reading.values);
        self.last_timestamp = Some(match self.last_timestamp {
            Some(ts) => ts.max(reading.timestamp),
            None => reading.timestamp,
        });
    }
}

/// Arithmetic mean of each parameter.
pub fn site_average(samples: &[Reading]) -> Result<Measurements, AggregationError> {
    mean_of(samples.iter().map(|r| &r.values))
}

pub fn mean_of<'a>(
    samples: impl IntoIterator<Item = &'a Measurements>,
) -> Result<Measurements, AggregationError> {
    let mut acc = Accumulator::default();
    for m in samples {
        acc.push(m);
    }
    acc.stats(None)
        .map(|s| s.means())
        .ok_or(AggregationError::EmptyInput)
}

/// Fixed-capacity window; the oldest sample is evicted once full.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingWindow {
    capacity: usize,
    samples: VecDeque<Measurements>,
}

impl RollingWindow {
    /// A capacity of zero is treated as one.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        RollingWindow {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Pushes a reading and returns statistics over the retained samples.
    pub fn push(&mut self, reading: &Reading) -> WindowStats {
        self.push_values(reading.values)
    }

    pub fn push_values(&mut self, values: Measurements) -> WindowStats {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(values);
        self.stats().expect("window holds at least one sample")
    }

    /// Recomputed from scratch over the retained samples.
    pub fn stats(&self) -> Option<WindowStats> {
        let mut acc = Accumulator::default();
        for m in &self.samples {
            acc.push(m);
        }
        acc.stats(Some(self.capacity))
    }
}

impl Default for RollingWindow {
    fn default() -> Self {
        RollingWindow::new(DEFAULT_WINDOW_LEN)
    }
}

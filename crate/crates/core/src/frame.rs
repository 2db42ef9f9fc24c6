//! Line-oriented sensor frame codec.
//!
//! A frame is one ASCII line:
//!
//! ```text
//! $<TYPE>,<device_id>,<seq>,<uptime_ms>,<c1>,<c2>,<c3>,<c4>*<HH>\n
//! ```
//!
//! `TYPE` is `WQ1` (raw 10-bit ADC counts) or `WQ2` (fixed-point physical
//! values). `HH` is the XOR of every byte between `$` and `*`, as two
//! uppercase hex digits. Channel order is temperature, pH, TDS, turbidity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest line accepted or produced, terminator included.
pub const MAX_LINE_LEN: usize = 128;

pub const MAX_DEVICE_ID_LEN: usize = 16;

/// Upper bound of a WQ1 channel (10-bit ADC).
pub const ADC_COUNT_MAX: i32 = 1023;

/// Inclusive WQ2 channel ranges: centi-°C, milli-pH, centi-ppm, milli-NTU.
pub const FIXED_POINT_RANGES: [(i32, i32); 4] = [
    (-5_500, 12_500),
    (0, 14_000),
    (0, 10_000_000),
    (0, 1_000_000),
];

/// Divisors that turn WQ2 channel integers into physical units.
pub const FIXED_POINT_SCALES: [f64; 4] = [100.0, 1000.0, 100.0, 1000.0];

pub const CHANNEL_NAMES: [&str; 4] = ["temperature", "ph", "tds", "turbidity"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("checksum mismatch: line carries {stored:02X}, payload hashes to {computed:02X}")]
    BadChecksum { stored: u8, computed: u8 },
    #[error("malformed frame at byte {offset}: {reason}")]
    MalformedSyntax { offset: usize, reason: String },
    #[error("field `{field}` out of range: {value} not in {expected}")]
    RangeViolation {
        field: &'static str,
        value: String,
        expected: String,
    },
    #[error("line is {len} bytes, limit is {MAX_LINE_LEN}")]
    LineTooLong { len: usize },
    #[error("invalid frame, field `{field}`: {reason}")]
    InvalidFrame { field: &'static str, reason: String },
}

impl FrameError {
    fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        FrameError::MalformedSyntax {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    /// Raw ADC counts, `WQ1`.
    #[serde(rename = "WQ1")]
    RawAdc,
    /// Fixed-point physical values, `WQ2`.
    #[serde(rename = "WQ2")]
    FixedPoint,
}

impl FrameKind {
    pub fn tag(self) -> &'static str {
        match self {
            FrameKind::RawAdc => "WQ1",
            FrameKind::FixedPoint => "WQ2",
        }
    }

    /// Inclusive range allowed for channel `index`.
    pub fn channel_range(self, index: usize) -> (i32, i32) {
        match self {
            FrameKind::RawAdc => (0, ADC_COUNT_MAX),
            FrameKind::FixedPoint => FIXED_POINT_RANGES[index],
        }
    }
}

/// Validated device identifier: 1 to 16 characters from `[A-Za-z0-9_-]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Result<Self, FrameError> {
        let id = id.into();
        if id.is_empty() || id.len() > MAX_DEVICE_ID_LEN {
            return Err(FrameError::RangeViolation {
                field: "device_id",
                value: id.clone(),
                expected: format!("1..={MAX_DEVICE_ID_LEN} characters"),
            });
        }
        if let Some(pos) = id.bytes().position(|b| !is_id_byte(b)) {
            return Err(FrameError::malformed(
                pos,
                format!("device_id `{id}` contains a character outside [A-Za-z0-9_-]"),
            ));
        }
        Ok(DeviceId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn is_id_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DeviceId {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceId::new(s)
    }
}

impl TryFrom<String> for DeviceId {
    type Error = FrameError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DeviceId::new(value)
    }
}

impl From<DeviceId> for String {
    fn from(id: DeviceId) -> Self {
        id.0
    }
}

/// One wire message from a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub kind: FrameKind,
    pub device_id: DeviceId,
    pub seq: u32,
    pub uptime_ms: u64,
    /// Temperature, pH, TDS, turbidity.
    pub channels: [i32; 4],
}

impl SensorFrame {
    /// Checks the channel ranges for this frame's kind.
    pub fn validate(&self) -> Result<(), FrameError> {
        for (i, &value) in self.channels.iter().enumerate() {
            let (lo, hi) = self.kind.channel_range(i);
            if value < lo || value > hi {
                return Err(FrameError::InvalidFrame {
                    field: CHANNEL_NAMES[i],
                    reason: format!("{value} not in [{lo}, {hi}] for {}", self.kind.tag()),
                });
            }
        }
        Ok(())
    }
}

/// XOR of all payload bytes.
pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

/// Checksum rendered as two uppercase hex digits.
pub fn compute_checksum(payload: &[u8]) -> String {
    format!("{:02X}", checksum(payload))
}

/// Encodes a frame as one LF-terminated line.
pub fn encode_frame(frame: &SensorFrame) -> Result<String, FrameError> {
    frame.validate()?;
    let [c1, c2, c3, c4] = frame.channels;
    let payload = format!(
        "{},{},{},{},{},{},{},{}",
        frame.kind.tag(),
        frame.device_id,
        frame.seq,
        frame.uptime_ms,
        c1,
        c2,
        c3,
        c4
    );
    let line = format!("${payload}*{}\n", compute_checksum(payload.as_bytes()));
    debug_assert!(line.len() <= MAX_LINE_LEN);
    Ok(line)
}

/// Parses one line. A trailing `\n` or `\r\n` is optional.
pub fn parse_frame(line: &[u8]) -> Result<SensorFrame, FrameError> {
    if line.len() > MAX_LINE_LEN {
        return Err(FrameError::LineTooLong { len: line.len() });
    }
    let body = line
        .strip_suffix(b"\r\n")
        .or_else(|| line.strip_suffix(b"\n"))
        .unwrap_or(line);
    if body.len() + 1 > MAX_LINE_LEN {
        return Err(FrameError::LineTooLong { len: body.len() + 1 });
    }

    if body.first() != Some(&b'$') {
        return Err(FrameError::malformed(0, "line must start with '$'"));
    }
    // '$' + payload + '*' + two hex digits
    if body.len() < 4 || body[body.len() - 3] != b'*' {
        return Err(FrameError::malformed(
            body.len().saturating_sub(3),
            "expected '*' followed by two hex digits at end of line",
        ));
    }
    let star = body.len() - 3;
    let stored = parse_hex_byte(&body[star + 1..]).ok_or_else(|| {
        FrameError::malformed(star + 1, "checksum must be two uppercase hex digits")
    })?;
    let payload = &body[1..star];
    let computed = checksum(payload);
    if stored != computed {
        return Err(FrameError::BadChecksum { stored, computed });
    }

    parse_payload(payload)
}

fn parse_hex_byte(digits: &[u8]) -> Option<u8> {
    fn nibble(b: u8) -> Option<u8> {
        match b {
            b'0'..=b'9' => Some(b - b'0'),
            b'A'..=b'F' => Some(b - b'A' + 10),
            _ => None,
        }
    }
    match digits {
        [hi, lo] => Some(nibble(*hi)? << 4 | nibble(*lo)?),
        _ => None,
    }
}

const FIELD_NAMES: [&str; 8] = [
    "type",
    "device_id",
    "seq",
    "uptime_ms",
    "temperature",
    "ph",
    "tds",
    "turbidity",
];

fn parse_payload(payload: &[u8]) -> Result<SensorFrame, FrameError> {
    // Byte offsets are reported relative to the full line, hence the +1 for '$'.
    let mut fields: Vec<(usize, &[u8])> = Vec::with_capacity(8);
    let mut start = 0;
    for (i, &b) in payload.iter().enumerate() {
        if b == b',' {
            fields.push((start + 1, &payload[start..i]));
            start = i + 1;
        }
    }
    fields.push((start + 1, &payload[start..]));
    if fields.len() != FIELD_NAMES.len() {
        return Err(FrameError::malformed(
            1,
            format!("expected {} fields, found {}", FIELD_NAMES.len(), fields.len()),
        ));
    }

    let (offset, tag) = fields[0];
    let kind = match tag {
        b"WQ1" => FrameKind::RawAdc,
        b"WQ2" => FrameKind::FixedPoint,
        _ => return Err(FrameError::malformed(offset, "frame type must be WQ1 or WQ2")),
    };

    let (offset, id) = fields[1];
    let id = std::str::from_utf8(id)
        .map_err(|_| FrameError::malformed(offset, "device_id is not ASCII"))?;
    let device_id = DeviceId::new(id).map_err(|e| match e {
        FrameError::MalformedSyntax { offset: o, reason } => FrameError::MalformedSyntax {
            offset: offset + o,
            reason,
        },
        other => other,
    })?;

    let seq = parse_unsigned(fields[2], "seq")?;
    let seq = u32::try_from(seq).map_err(|_| FrameError::RangeViolation {
        field: "seq",
        value: seq.to_string(),
        expected: format!("[0, {}]", u32::MAX),
    })?;
    let uptime_ms = parse_unsigned(fields[3], "uptime_ms")?;

    let mut channels = [0i32; 4];
    for (i, slot) in channels.iter_mut().enumerate() {
        let (offset, text) = fields[4 + i];
        let value = parse_signed(offset, text, FIELD_NAMES[4 + i])?;
        let (lo, hi) = kind.channel_range(i);
        if value < i64::from(lo) || value > i64::from(hi) {
            return Err(FrameError::RangeViolation {
                field: CHANNEL_NAMES[i],
                value: value.to_string(),
                expected: format!("[{lo}, {hi}]"),
            });
        }
        *slot = value as i32;
    }

    Ok(SensorFrame {
        kind,
        device_id,
        seq,
        uptime_ms,
        channels,
    })
}

/// Canonical unsigned decimal: "0" or a nonzero digit followed by digits.
fn parse_unsigned((offset, text): (usize, &[u8]), field: &'static str) -> Result<u64, FrameError> {
    check_canonical_digits(offset, text, field)?;
    // at most 20 digits here, only u64 overflow can fail
    std::str::from_utf8(text)
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| FrameError::RangeViolation {
            field,
            value: String::from_utf8_lossy(text).into_owned(),
            expected: format!("[0, {}]", u64::MAX),
        })
}

fn parse_signed(offset: usize, text: &[u8], field: &'static str) -> Result<i64, FrameError> {
    let (negative, digits, digit_offset) = match text.split_first() {
        Some((b'-', rest)) => (true, rest, offset + 1),
        _ => (false, text, offset),
    };
    check_canonical_digits(digit_offset, digits, field)?;
    if negative && digits == b"0" {
        return Err(FrameError::malformed(offset, format!("`{field}`: negative zero")));
    }
    if digits.len() > 12 {
        return Err(FrameError::RangeViolation {
            field,
            value: String::from_utf8_lossy(text).into_owned(),
            expected: "a channel value".to_string(),
        });
    }
    let magnitude: i64 = std::str::from_utf8(digits)
        .expect("ascii digits")
        .parse()
        .expect("at most 12 digits");
    Ok(if negative { -magnitude } else { magnitude })
}

fn check_canonical_digits(offset: usize, text: &[u8], field: &str) -> Result<(), FrameError> {
    if text.is_empty() {
        return Err(FrameError::malformed(offset, format!("`{field}` is empty")));
    }
    if let Some(pos) = text.iter().position(|b| !b.is_ascii_digit()) {
        return Err(FrameError::malformed(
            offset + pos,
            format!("`{field}` is not a decimal integer"),
        ));
    }
    if text.len() > 1 && text[0] == b'0' {
        return Err(FrameError::malformed(offset, format!("`{field}` has a leading zero")));
    }
    Ok(())
}

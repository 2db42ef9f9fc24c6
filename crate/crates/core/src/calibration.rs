//! Conversion of raw ADC counts into physical water-quality measurements.
//!
//! The ADC model is a 10-bit converter over a 5 V reference. Temperature uses
//! the LM35 convention of 10 mV per °C. pH and turbidity use configurable
//! linear probe curves. TDS is derived from temperature-compensated
//! conductivity through `TDS = k_e * EC`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{DeviceId, FrameKind, SensorFrame, FIXED_POINT_SCALES};

/// °C per volt for an LM35 probe.
pub const LM35_SCALE: f64 = 100.0;

pub const TEMP_MIN_C: f64 = -55.0;
pub const TEMP_MAX_C: f64 = 125.0;
pub const PH_MIN: f64 = 0.0;
pub const PH_MAX: f64 = 14.0;
pub const KE_MIN: f64 = 0.55;
pub const KE_MAX: f64 = 0.8;

/// Reference temperature for conductivity, °C.
pub const EC_REFERENCE_C: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("{channel}: count {counts} outside [0, {adc_max}]")]
    RangeViolation {
        channel: &'static str,
        counts: i64,
        adc_max: u32,
    },
    #[error("{channel}: calibrated value {value} outside [{min}, {max}]")]
    Validation {
        channel: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{channel}: {reason}")]
    Domain { channel: &'static str, reason: String },
    #[error("calibration config: {0}")]
    Config(String),
    #[error("degenerate two-point calibration: voltages {v1} and {v2} coincide")]
    DegenerateCalibration { v1: f64, v2: f64 },
}

/// Conversion constants. Field names double as config-file keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// ADC reference voltage.
    pub vref: f64,
    /// Full-scale ADC count.
    pub adc_max: u32,
    /// pH per volt.
    pub ph_slope: f64,
    pub ph_intercept: f64,
    /// µS/cm per volt.
    pub ec_gain: f64,
    /// TDS/EC correlation factor.
    pub k_e: f64,
    /// Fractional EC change per °C away from 25 °C.
    pub alpha: f64,
    /// Turbidity probe output in clean water, volts.
    pub turb_v0: f64,
    /// NTU per volt below `turb_v0`.
    pub turb_slope: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            vref: 5.0,
            adc_max: 1023,
            ph_slope: -5.70,
            ph_intercept: 21.25,
            ec_gain: 200.0,
            k_e: 0.64,
            alpha: 0.02,
            turb_v0: 4.20,
            turb_slope: 100.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let finite = [
            self.vref,
            self.ph_slope,
            self.ph_intercept,
            self.ec_gain,
            self.k_e,
            self.alpha,
            self.turb_v0,
            self.turb_slope,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(CalibrationError::Config("all constants must be finite".into()));
        }
        if self.vref <= 0.0 {
            return Err(CalibrationError::Config(format!("vref must be > 0, got {}", self.vref)));
        }
        if self.adc_max < 1 {
            return Err(CalibrationError::Config("adc_max must be >= 1".into()));
        }
        check_k_e(self.k_e)?;
        if self.turb_slope <= 0.0 {
            return Err(CalibrationError::Config(format!(
                "turb_slope must be > 0, got {}",
                self.turb_slope
            )));
        }
        if self.ec_gain < 0.0 {
            return Err(CalibrationError::Config(format!(
                "ec_gain must be >= 0, got {}",
                self.ec_gain
            )));
        }
        Ok(())
    }

    pub fn with_ph_line(mut self, slope: f64, intercept: f64) -> Self {
        self.ph_slope = slope;
        self.ph_intercept = intercept;
        self
    }
}

fn check_k_e(k_e: f64) -> Result<(), CalibrationError> {
    if (KE_MIN..=KE_MAX).contains(&k_e) {
        Ok(())
    } else {
        Err(CalibrationError::Config(format!(
            "k_e must lie in [{KE_MIN}, {KE_MAX}], got {k_e}"
        )))
    }
}

/// The four physical quantities, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub temp_c: f64,
    pub ph: f64,
    pub tds_ppm: f64,
    pub turbidity_ntu: f64,
}

impl Measurements {
    pub fn new(temp_c: f64, ph: f64, tds_ppm: f64, turbidity_ntu: f64) -> Self {
        Measurements {
            temp_c,
            ph,
            tds_ppm,
            turbidity_ntu,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu]
    }

    pub fn from_array([temp_c, ph, tds_ppm, turbidity_ntu]: [f64; 4]) -> Self {
        Measurements::new(temp_c, ph, tds_ppm, turbidity_ntu)
    }

    /// Checks the physical plausibility bounds every reading must satisfy.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        check_range("temperature", self.temp_c, TEMP_MIN_C, TEMP_MAX_C)?;
        check_range("ph", self.ph, PH_MIN, PH_MAX)?;
        check_range("tds", self.tds_ppm, 0.0, f64::INFINITY)?;
        check_range("turbidity", self.turbidity_ntu, 0.0, f64::INFINITY).map(drop)
    }
}

fn check_range(channel: &'static str, value: f64, min: f64, max: f64) -> Result<f64, CalibrationError> {
    // NaN fails both comparisons
    if value >= min && value <= max {
        Ok(value)
    } else {
        Err(CalibrationError::Validation {
            channel,
            value,
            min,
            max,
        })
    }
}

/// A calibrated measurement set from one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub device_id: DeviceId,
    pub timestamp: DateTime<Utc>,
    pub seq: u32,
    pub values: Measurements,
}

pub fn adc_to_voltage(counts: i64, config: &CalibrationConfig) -> Result<f64, CalibrationError> {
    channel_voltage("adc", counts, config)
}

fn channel_voltage(
    channel: &'static str,
    counts: i64,
    config: &CalibrationConfig,
) -> Result<f64, CalibrationError> {
    if counts < 0 || counts > i64::from(config.adc_max) {
        return Err(CalibrationError::RangeViolation {
            channel,
            counts,
            adc_max: config.adc_max,
        });
    }
    Ok(counts as f64 * config.vref / f64::from(config.adc_max))
}

pub fn voltage_to_temperature(volts: f64, _config: &CalibrationConfig) -> Result<f64, CalibrationError> {
    check_range("temperature", LM35_SCALE * volts, TEMP_MIN_C, TEMP_MAX_C)
}

/// `pH = -log10(a_H+)`.
pub fn ph_from_hydrogen_activity(activity: f64) -> Result<f64, CalibrationError> {
    if !(activity > 0.0) || !activity.is_finite() {
        return Err(CalibrationError::Domain {
            channel: "ph",
            reason: format!("hydrogen ion activity must be positive and finite, got {activity}"),
        });
    }
    Ok(-activity.log10())
}

/// Linear probe curve; results outside [0, 14] are errors, never clamped.
pub fn voltage_to_ph(volts: f64, config: &CalibrationConfig) -> Result<f64, CalibrationError> {
    check_range("ph", config.ph_slope * volts + config.ph_intercept, PH_MIN, PH_MAX)
}

/// Line through two buffer-solution points, as `(slope, intercept)`.
pub fn calibrate_ph_two_point(v1: f64, ph1: f64, v2: f64, ph2: f64) -> Result<(f64, f64), CalibrationError> {
    if (v1 - v2).abs() < 1e-9 {
        return Err(CalibrationError::DegenerateCalibration { v1, v2 });
    }
    let slope = (ph2 - ph1) / (v2 - v1);
    Ok((slope, ph1 - slope * v1))
}

pub fn voltage_to_ec(volts: f64, config: &CalibrationConfig) -> f64 {
    config.ec_gain * volts
}

/// Refers a conductivity reading to 25 °C.
pub fn temperature_compensate_ec(
    ec: f64,
    temp_c: f64,
    config: &CalibrationConfig,
) -> Result<f64, CalibrationError> {
    let denominator = 1.0 + config.alpha * (temp_c - EC_REFERENCE_C);
    if !(denominator > 0.0) {
        return Err(CalibrationError::Domain {
            channel: "tds",
            reason: format!("compensation denominator {denominator} at {temp_c} °C is not positive"),
        });
    }
    Ok(ec / denominator)
}

/// `TDS (mg/L) = k_e * EC25 (µS/cm)`.
pub fn ec_to_tds(ec25: f64, config: &CalibrationConfig) -> Result<f64, CalibrationError> {
    check_k_e(config.k_e)?;
    Ok(config.k_e * ec25)
}

pub fn voltage_to_turbidity(volts: f64, config: &CalibrationConfig) -> f64 {
    ((config.turb_v0 - volts) * config.turb_slope).max(0.0)
}

/// Turns a decoded frame into a [`Reading`].
///
/// WQ1 channels go through the ADC model and the probe curves, temperature
/// first so the conductivity channel can be compensated with it. WQ2 channels
/// are only rescaled from fixed point.
pub fn calibrate_reading(
    frame: &SensorFrame,
    config: &CalibrationConfig,
    now: DateTime<Utc>,
) -> Result<Reading, CalibrationError> {
    let values = match frame.kind {
        FrameKind::RawAdc => {
            let [t, p, e, n] = frame.channels.map(i64::from);
            let temp_c = voltage_to_temperature(channel_voltage("temperature", t, config)?, config)?;
            let ph = voltage_to_ph(channel_voltage("ph", p, config)?, config)?;
            let ec = voltage_to_ec(channel_voltage("tds", e, config)?, config);
            let ec25 = temperature_compensate_ec(ec, temp_c, config)?;
            let tds_ppm = ec_to_tds(ec25, config)?;
            let turbidity_ntu = voltage_to_turbidity(channel_voltage("turbidity", n, config)?, config);
            Measurements::new(temp_c, ph, tds_ppm, turbidity_ntu)
        }
        FrameKind::FixedPoint => {
            let mut physical = [0.0; 4];
            for (out, (&raw, scale)) in physical
                .iter_mut()
                .zip(frame.channels.iter().zip(FIXED_POINT_SCALES))
            {
                *out = f64::from(raw) / scale;
            }
            Measurements::from_array(physical)
        }
    };
    values.validate()?;
    Ok(Reading {
        device_id: frame.device_id.clone(),
        timestamp: now,
        seq: frame.seq,
        values,
    })
}

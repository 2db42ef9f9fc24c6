//! Quality bands and the overall verdict for a calibrated reading.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Measurements, PH_MAX, PH_MIN, TEMP_MAX_C, TEMP_MIN_C};

/// Lower edges of the RatherTurbid, ModerateTurbid and HighlyTurbid bands, NTU.
pub const TURBIDITY_RATHER_NTU: f64 = 25.0;
pub const TURBIDITY_MODERATE_NTU: f64 = 35.0;
pub const TURBIDITY_HIGH_NTU: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("{parameter}: {value} is outside the assessable domain {domain}")]
    Domain {
        parameter: Parameter,
        value: f64,
        domain: &'static str,
    },
    #[error("thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Temperature,
    Ph,
    Tds,
    Turbidity,
}

impl Parameter {
    /// Channel order.
    pub const ALL: [Parameter; 4] = [
        Parameter::Temperature,
        Parameter::Ph,
        Parameter::Tds,
        Parameter::Turbidity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Temperature => "temperature",
            Parameter::Ph => "ph",
            Parameter::Tds => "tds",
            Parameter::Turbidity => "turbidity",
        }
    }

    pub fn value_of(self, m: &Measurements) -> f64 {
        match self {
            Parameter::Temperature => m.temp_c,
            Parameter::Ph => m.ph,
            Parameter::Tds => m.tds_ppm,
            Parameter::Turbidity => m.turbidity_ntu,
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhStatus {
    Acidic,
    Ideal,
    Alkaline,
}

/// Turbidity levels, ordered from clearest to cloudiest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TurbidityLevel {
    MediumTurbid,
    RatherTurbid,
    ModerateTurbid,
    HighlyTurbid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TempStatus {
    Normal,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TdsStatus {
    Acceptable,
    Alarming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    WithinLimits,
    Polluted,
}

macro_rules! status_names {
    ($($ty:ty { $($variant:ident),* })*) => {
        $(
            impl $ty {
                pub fn as_str(self) -> &'static str {
                    match self {
                        $(<$ty>::$variant => stringify!($variant),)*
                    }
                }
            }

            impl fmt::Display for $ty {
                fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    f.write_str(self.as_str())
                }
            }
        )*
    };
}

status_names! {
    PhStatus { Acidic, Ideal, Alkaline }
    TurbidityLevel { MediumTurbid, RatherTurbid, ModerateTurbid, HighlyTurbid }
    TempStatus { Normal, High }
    TdsStatus { Acceptable, Alarming }
    Verdict { WithinLimits, Polluted }
}

/// Assessment cutoffs. Field names double as config-file keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ph_ideal_lo: f64,
    pub ph_ideal_hi: f64,
    /// Temperatures strictly above this are `High`.
    pub temp_high_c: f64,
    /// TDS at or above this is `Alarming`.
    pub tds_alarm_ppm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ph_ideal_lo: 6.0,
            ph_ideal_hi: 8.0,
            temp_high_c: 35.0,
            tds_alarm_ppm: 170.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AssessmentError> {
        let bad = |msg: String| Err(AssessmentError::InvalidThresholds(msg));
        if !(self.ph_ideal_lo < self.ph_ideal_hi) {
            return bad(format!(
                "ph_ideal_lo ({}) must be below ph_ideal_hi ({})",
                self.ph_ideal_lo, self.ph_ideal_hi
            ));
        }
        if !(self.temp_high_c > TEMP_MIN_C && self.temp_high_c <= TEMP_MAX_C) {
            return bad(format!("temp_high_c ({}) must lie in (-55, 125]", self.temp_high_c));
        }
        if !(self.tds_alarm_ppm >= 0.0) || !self.tds_alarm_ppm.is_finite() {
            return bad(format!("tds_alarm_ppm ({}) must be >= 0", self.tds_alarm_ppm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub ph_status: PhStatus,
    pub turbidity_level: TurbidityLevel,
    pub temp_status: TempStatus,
    pub tds_status: TdsStatus,
    pub overall: Verdict,
    /// Offending parameters, in channel order.
    pub violations: Vec<Parameter>,
}

impl QualityAssessment {
    /// Name of the status reported for `parameter`.
    pub fn status_of(&self, parameter: Parameter) -> &'static str {
        match parameter {
            Parameter::Temperature => self.temp_status.as_str(),
            Parameter::Ph => self.ph_status.as_str(),
            Parameter::Tds => self.tds_status.as_str(),
            Parameter::Turbidity => self.turbidity_level.as_str(),
        }
    }

    pub fn is_violated(&self, parameter: Parameter) -> bool {
        match parameter {
            Parameter::Temperature => self.temp_status != TempStatus::Normal,
            Parameter::Ph => self.ph_status != PhStatus::Ideal,
            Parameter::Tds => self.tds_status != TdsStatus::Acceptable,
            Parameter::Turbidity => self.turbidity_level != TurbidityLevel::MediumTurbid,
        }
    }
}

fn domain_error(parameter: Parameter, value: f64, domain: &'static str) -> AssessmentError {
    AssessmentError::Domain {
        parameter,
        value,
        domain,
    }
}

/// Bands: [0, 25), [25, 35), [35, 50], (50, inf).
pub fn classify_turbidity(ntu: f64) -> Result<TurbidityLevel, AssessmentError> {
    if !ntu.is_finite() || ntu < 0.0 {
        return Err(domain_error(Parameter::Turbidity, ntu, "[0, inf)"));
    }
    Ok(if ntu < TURBIDITY_RATHER_NTU {
        TurbidityLevel::MediumTurbid
    } else if ntu < TURBIDITY_MODERATE_NTU {
        TurbidityLevel::RatherTurbid
    } else if ntu <= TURBIDITY_HIGH_NTU {
        TurbidityLevel::ModerateTurbid
    } else {
        TurbidityLevel::HighlyTurbid
    })
}

pub fn assess_ph(ph: f64, thresholds: &Thresholds) -> Result<PhStatus, AssessmentError> {
    if !(PH_MIN..=PH_MAX).contains(&ph) {
        return Err(domain_error(Parameter::Ph, ph, "[0, 14]"));
    }
    Ok(if ph < thresholds.ph_ideal_lo {
        PhStatus::Acidic
    } else if ph > thresholds.ph_ideal_hi {
        PhStatus::Alkaline
    } else {
        PhStatus::Ideal
    })
}

pub fn assess_temperature(temp_c: f64, thresholds: &Thresholds) -> Result<TempStatus, AssessmentError> {
    if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&temp_c) {
        return Err(domain_error(Parameter::Temperature, temp_c, "[-55, 125]"));
    }
    Ok(if temp_c > thresholds.temp_high_c {
        TempStatus::High
    } else {
        TempStatus::Normal
    })
}

pub fn assess_tds(tds_ppm: f64, thresholds: &Thresholds) -> Result<TdsStatus, AssessmentError> {
    if !(tds_ppm >= 0.0) || !tds_ppm.is_finite() {
        return Err(domain_error(Parameter::Tds, tds_ppm, "[0, inf)"));
    }
    Ok(if tds_ppm >= thresholds.tds_alarm_ppm {
        TdsStatus::Alarming
    } else {
        TdsStatus::Acceptable
    })
}

pub fn assess_measurements(
    m: &Measurements,
    thresholds: &Thresholds,
) -> Result<QualityAssessment, AssessmentError> {
    let mut assessment = QualityAssessment {
        ph_status: assess_ph(m.ph, thresholds)?,
        turbidity_level: classify_turbidity(m.turbidity_ntu)?,
        temp_status: assess_temperature(m.temp_c, thresholds)?,
        tds_status: assess_tds(m.tds_ppm, thresholds)?,
        overall: Verdict::WithinLimits,
        violations: Vec::new(),
    };
    assessment.violations = Parameter::ALL
        .into_iter()
        .filter(|&p| assessment.is_violated(p))
        .collect();
    if !assessment.violations.is_empty() {
        assessment.overall = Verdict::Polluted;
    }
    Ok(assessment)
}

pub fn assess_reading(
    reading: &crate::calibration::Reading,
    thresholds: &Thresholds,
) -> Result<QualityAssessment, AssessmentError> {
    assess_measurements(&reading.values, thresholds)
}

/// The cutoff that `parameter` crossed to earn its current status.
pub fn violated_threshold(
    parameter: Parameter,
    assessment: &QualityAssessment,
    thresholds: &Thresholds,
) -> f64 {
    match parameter {
        Parameter::Temperature => thresholds.temp_high_c,
        Parameter::Tds => thresholds.tds_alarm_ppm,
        Parameter::Ph => match assessment.ph_status {
            PhStatus::Acidic => thresholds.ph_ideal_lo,
            _ => thresholds.ph_ideal_hi,
        },
        Parameter::Turbidity => match assessment.turbidity_level {
            TurbidityLevel::MediumTurbid | TurbidityLevel::RatherTurbid => TURBIDITY_RATHER_NTU,
            TurbidityLevel::ModerateTurbid => TURBIDITY_MODERATE_NTU,
            TurbidityLevel::HighlyTurbid => TURBIDITY_HIGH_NTU,
        },
    }
}

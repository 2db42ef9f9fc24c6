//! Simulated sensor devices.
//!
//! Live devices draw noisy physical values around a base, invert the
//! calibration curves and send raw ADC counts (WQ1). Fixture replay sends
//! recorded field values as fixed-point WQ2 frames so they arrive unchanged.

mod fixture;
mod runner;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationConfig, Measurements, EC_REFERENCE_C, LM35_SCALE};
use crate::frame::{DeviceId, FrameKind, SensorFrame, CHANNEL_NAMES};

pub use fixture::{load_fixture, read_fixture, replay_fixture, sites, FixtureRow, FIXTURE_HEADER};
pub use runner::{run_device, Backoff, DeviceReport, FrameSource, RunOptions};

pub const DEFAULT_CADENCE_MS: u64 = 5000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{channel}: drawn value {value} maps to {volts} V, outside [0, {vref}] V")]
    InversionOutOfRange {
        channel: &'static str,
        value: f64,
        volts: f64,
        vref: f64,
    },
    #[error("fixture row {row}: {reason}")]
    FixtureParse { row: usize, reason: String },
    #[error("connection to {endpoint} refused after {attempts} attempt(s): {source}")]
    ConnectionRefused {
        endpoint: String,
        attempts: u32,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid device profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// Per-device synthesis settings. `base` and `noise_sigma` are in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub cadence_ms: u64,
    pub base: Measurements,
    pub noise_sigma: Measurements,
    pub rng_seed: u64,
}

/// The shareable part of a profile, as read from `--profile` files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileTemplate {
    pub base: Measurements,
    pub noise_sigma: Measurements,
}

impl Default for ProfileTemplate {
    fn default() -> Self {
        ProfileTemplate {
            base: Measurements::new(25.0, 7.0, 50.0, 0.5),
            noise_sigma: Measurements::default(),
        }
    }
}

impl ProfileTemplate {
    pub fn instantiate(&self, device_id: DeviceId, cadence_ms: u64, rng_seed: u64) -> DeviceProfile {
        DeviceProfile {
            device_id,
            cadence_ms,
            base: self.base,
            noise_sigma: self.noise_sigma,
            rng_seed,
        }
    }
}

impl DeviceProfile {
    pub fn new(device_id: DeviceId, rng_seed: u64) -> Self {
        ProfileTemplate::default().instantiate(device_id, DEFAULT_CADENCE_MS, rng_seed)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.cadence_ms < 1 {
            return Err(SimError::InvalidProfile("cadence_ms must be >= 1".into()));
        }
        if self
            .noise_sigma
            .to_array()
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(SimError::InvalidProfile("noise_sigma must be finite and >= 0".into()));
        }
        if self.base.to_array().iter().any(|b| !b.is_finite()) {
            return Err(SimError::InvalidProfile("base values must be finite".into()));
        }
        Ok(())
    }
}

/// Draws the physical values for frame `seq`.
///
/// The generator is keyed on `(rng_seed, seq)`, so any frame can be
/// regenerated without replaying the ones before it.
pub fn draw_values(profile: &DeviceProfile, seq: u32) -> Measurements {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.rng_seed);
    rng.set_stream(u64::from(seq));
    let base = profile.base.to_array();
    let sigma = profile.noise_sigma.to_array();
    let mut out = [0.0; 4];
    for i in 0..4 {
        let noise = Normal::new(0.0, sigma[i]).expect("sigma validated").sample(&mut rng);
        out[i] = base[i] + noise;
    }
    Measurements::from_array(out)
}

/// Probe voltages that the calibration curves map back to `values`.
pub fn invert_calibration(values: &Measurements, config: &CalibrationConfig) -> Result<[f64; 4], SimError> {
    let temp_v = values.temp_c / LM35_SCALE;
    let ph_v = if config.ph_slope == 0.0 {
        f64::NAN
    } else {
        (values.ph - config.ph_intercept) / config.ph_slope
    };
    let ec25 = values.tds_ppm / config.k_e;
    let ec = ec25 * (1.0 + config.alpha * (values.temp_c - EC_REFERENCE_C));
    let tds_v = if config.ec_gain == 0.0 {
        if ec == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        ec / config.ec_gain
    };
    let turb_v = config.turb_v0 - values.turbidity_ntu / config.turb_slope;

    let volts = [temp_v, ph_v, tds_v, turb_v];
    let physical = values.to_array();
    for i in 0..4 {
        if !(volts[i] >= 0.0 && volts[i] <= config.vref) {
            return Err(SimError::InversionOutOfRange {
                channel: CHANNEL_NAMES[i],
                value: physical[i],
                volts: volts[i],
                vref: config.vref,
            });
        }
    }
    Ok(volts)
}

/// Nearest ADC count for `volts` in `[0, vref]`.
pub fn quantize(volts: f64, config: &CalibrationConfig) -> i32 {
    let counts = (volts / config.vref * f64::from(config.adc_max)).round();
    counts.clamp(0.0, f64::from(config.adc_max)) as i32
}

/// Builds WQ1 frame `seq` for a live device.
pub fn synthesize_frame(
    profile: &DeviceProfile,
    seq: u32,
    uptime_ms: u64,
    config: &CalibrationConfig,
) -> Result<SensorFrame, SimError> {
    let values = draw_values(profile, seq);
    let volts = invert_calibration(&values, config)?;
    let frame = SensorFrame {
        kind: FrameKind::RawAdc,
        device_id: profile.device_id.clone(),
        seq,
        uptime_ms,
        channels: volts.map(|v| quantize(v, config)),
    };
    frame.validate()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_reading;
    use crate::frame::encode_frame;

    fn profile(base: Measurements, sigma: Measurements, seed: u64) -> DeviceProfile {
        DeviceProfile {
            device_id: DeviceId::new("sim_0").unwrap(),
            cadence_ms: 5000,
            base,
            noise_sigma: sigma,
            rng_seed: seed,
        }
    }

    #[test]
    fn noiseless_temperature_inversion() {
        let p = profile(Measurements::new(25.0, 7.0, 0.0, 0.0), Measurements::default(), 1);
        let f = synthesize_frame(&p, 0, 0, &CalibrationConfig::default()).unwrap();
        // round(0.25 / 5 * 1023) = round(51.15)
        assert_eq!(f.channels[0], 51);
        // round(2.5 / 5 * 1023) = round(511.5)
        assert_eq!(f.channels[1], 512);
        assert_eq!(f.kind, FrameKind::RawAdc);
    }

    #[test]
    fn default_profile_round_trips_through_calibration() {
        let config = CalibrationConfig::default();
        let p = DeviceProfile::new(DeviceId::new("d").unwrap(), 0);
        let f = synthesize_frame(&p, 3, 15_000, &config).unwrap();
        let r = calibrate_reading(&f, &config, chrono::Utc::now()).unwrap();
        // half an LSB is ~2.44 mV
        assert!((r.values.temp_c - 25.0).abs() < 0.25);
        assert!((r.values.ph - 7.0).abs() < 0.02);
        assert!((r.values.tds_ppm - 50.0).abs() < 1.0);
        assert!((r.values.turbidity_ntu - 0.5).abs() < 0.25);
    }

    #[test]
    fn same_seed_same_frame() {
        let sigma = Measurements::new(0.5, 0.1, 5.0, 0.1);
        let p = profile(Measurements::new(25.0, 7.0, 100.0, 1.0), sigma, 42);
        let config = CalibrationConfig::default();
        let a = synthesize_frame(&p, 9, 45_000, &config).unwrap();
        let b = synthesize_frame(&p, 9, 45_000, &config).unwrap();
        assert_eq!(encode_frame(&a).unwrap(), encode_frame(&b).unwrap());
        let other_seed = profile(p.base, sigma, 43);
        let draws: Vec<_> = (0..8).map(|s| draw_values(&other_seed, s)).collect();
        assert!(draws.iter().any(|d| *d != draw_values(&p, 9)));
    }

    #[test]
    fn noise_has_requested_spread() {
        let p = profile(Measurements::new(25.0, 7.0, 100.0, 1.0), Measurements::new(1.0, 0.0, 0.0, 0.0), 7);
        let n = 4000;
        let temps: Vec<f64> = (0..n).map(|s| draw_values(&p, s).temp_c).collect();
        let mean = temps.iter().sum::<f64>() / f64::from(n);
        let var = temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / f64::from(n - 1);
        assert!((mean - 25.0).abs() < 0.1, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.1, "sd {}", var.sqrt());
        assert!((0..50).all(|s| draw_values(&p, s).ph == 7.0));
    }

    #[test]
    fn inversion_out_of_range() {
        let p = profile(Measurements::new(25.0, 14.0, 0.0, 0.0), Measurements::default(), 1);
        // pH 14 needs (14 - 21.25) / -5.7 = 1.27 V: fine. pH 0 needs 3.73 V: fine. TDS huge is not.
        assert!(synthesize_frame(&p, 0, 0, &CalibrationConfig::default()).is_ok());
        let p = profile(Measurements::new(25.0, 7.0, 1e6, 0.0), Measurements::default(), 1);
        assert!(matches!(
            synthesize_frame(&p, 0, 0, &CalibrationConfig::default()),
            Err(SimError::InversionOutOfRange { channel: "tds", .. })
        ));
        let p = profile(Measurements::new(-10.0, 7.0, 0.0, 0.0), Measurements::default(), 1);
        assert!(matches!(
            synthesize_frame(&p, 0, 0, &CalibrationConfig::default()),
            Err(SimError::InversionOutOfRange { channel: "temperature", .. })
        ));
    }

    #[test]
    fn profile_validation() {
        let mut p = DeviceProfile::new(DeviceId::new("d").unwrap(), 0);
        p.validate().unwrap();
        p.cadence_ms = 0;
        assert!(p.validate().is_err());
        p.cadence_ms = 1;
        p.noise_sigma.ph = -0.1;
        assert!(p.validate().is_err());
    }
}

//! Water-quality telemetry.
//!
//! Simulated sensor devices stream checksummed line frames over TCP to a
//! gateway that calibrates raw readings into temperature, pH, TDS and
//! turbidity, classifies them against quality bands, keeps per-device
//! statistics, appends readings and alerts to JSONL logs and summarizes
//! those logs offline.
//!
//! * [`frame`]: the `$WQ1,...*HH` / `$WQ2,...*HH` line codec.
//! * [`calibration`]: ADC model and probe curves.
//! * [`assessment`]: quality bands and verdicts.
//! * [`aggregation`]: cumulative and rolling statistics.
//! * [`sim`]: live and fixture-replay devices.
//! * [`gateway`]: the ingestion service, persistence and reports.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregation;
pub mod assessment;
pub mod calibration;
pub mod frame;
pub mod gateway;
pub mod sim;

pub use aggregation::{site_average, RollingWindow, SiteAggregate, WindowStats};
pub use assessment::{assess_reading, classify_turbidity, QualityAssessment, Thresholds};
pub use calibration::{calibrate_reading, CalibrationConfig, Measurements, Reading};
pub use frame::{encode_frame, parse_frame, DeviceId, FrameKind, SensorFrame};

/// Resolves once `rx` holds `true`. A dropped sender never resolves.
pub async fn shutdown_signalled(rx: &mut tokio::sync::watch::Receiver<bool>) {
    loop {
        if *rx.borrow_and_update() {
            return;
        }
        if rx.changed().await.is_err() {
            std::future::pending::<()>().await;
        }
    }
}

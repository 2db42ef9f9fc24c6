//! Python bindings for the frame codec, calibration, assessment and
//! aggregation routines.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use wqgate_core::aggregation::{mean_of, RollingWindow as CoreWindow, WindowStats};
use wqgate_core::assessment::{self as assess, Parameter, QualityAssessment, Thresholds as CoreThresholds};
use wqgate_core::calibration::{self as cal, CalibrationConfig as CoreConfig, Measurements as CoreMeasurements};
use wqgate_core::frame::{self as codec, DeviceId, FrameKind, SensorFrame as CoreFrame};
use wqgate_core::gateway::report::{self, GroupBy, ReportFormat};

create_exception!(wqgate, FrameError, PyValueError, "Wire line could not be decoded or encoded.");
create_exception!(wqgate, CalibrationError, PyValueError, "Counts or physical values out of range.");
create_exception!(wqgate, AssessmentError, PyValueError, "Value outside the assessable domain.");

fn frame_err(e: codec::FrameError) -> PyErr {
    FrameError::new_err(e.to_string())
}

fn cal_err(e: cal::CalibrationError) -> PyErr {
    CalibrationError::new_err(e.to_string())
}

fn assess_err(e: assess::AssessmentError) -> PyErr {
    AssessmentError::new_err(e.to_string())
}

/// Accepts `str` or `bytes`.
fn line_bytes(obj: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s.into_bytes());
    }
    obj.extract::<Vec<u8>>()
}

#[pyclass(name = "SensorFrame", module = "wqgate", eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PySensorFrame {
    inner: CoreFrame,
}

#[pymethods]
impl PySensorFrame {
    /// `kind` is "WQ1" (raw ADC counts) or "WQ2" (fixed point).
    #[new]
    #[pyo3(signature = (kind, device_id, seq, uptime_ms, channels))]
    fn new(kind: &str, device_id: String, seq: u32, uptime_ms: u64, channels: [i32; 4]) -> PyResult<Self> {
        let kind = match kind {
            "WQ1" => FrameKind::RawAdc,
            "WQ2" => FrameKind::FixedPoint,
            other => return Err(FrameError::new_err(format!("unknown frame type {other:?}"))),
        };
        let inner = CoreFrame {
            kind,
            device_id: DeviceId::new(device_id).map_err(frame_err)?,
            seq,
            uptime_ms,
            channels,
        };
        inner.validate().map_err(frame_err)?;
        Ok(PySensorFrame { inner })
    }

    #[staticmethod]
    fn parse(line: &Bound<'_, PyAny>) -> PyResult<Self> {
        parse_frame(line)
    }

    fn encode(&self) -> PyResult<String> {
        codec::encode_frame(&self.inner).map_err(frame_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.tag()
    }

    #[getter]
    fn device_id(&self) -> String {
        self.inner.device_id.to_string()
    }

    #[getter]
    fn seq(&self) -> u32 {
        self.inner.seq
    }

    #[getter]
    fn uptime_ms(&self) -> u64 {
        self.inner.uptime_ms
    }

    #[getter]
    fn channels(&self) -> [i32; 4] {
        self.inner.channels
    }

    fn __repr__(&self) -> String {
        let f = &self.inner;
        format!(
            "SensorFrame({:?}, {:?}, {}, {}, {:?})",
            f.kind.tag(),
            f.device_id.as_str(),
            f.seq,
            f.uptime_ms,
            f.channels
        )
    }
}

#[pyclass(name = "CalibrationConfig", module = "wqgate", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyCalibrationConfig {
    vref: f64,
    adc_max: u32,
    ph_slope: f64,
    ph_intercept: f64,
    ec_gain: f64,
    k_e: f64,
    alpha: f64,
    turb_v0: f64,
    turb_slope: f64,
}

impl From<CoreConfig> for PyCalibrationConfig {
    fn from(c: CoreConfig) -> Self {
        PyCalibrationConfig {
            vref: c.vref,
            adc_max: c.adc_max,
            ph_slope: c.ph_slope,
            ph_intercept: c.ph_intercept,
            ec_gain: c.ec_gain,
            k_e: c.k_e,
            alpha: c.alpha,
            turb_v0: c.turb_v0,
            turb_slope: c.turb_slope,
        }
    }
}

impl PyCalibrationConfig {
    fn core(&self) -> CoreConfig {
        CoreConfig {
            vref: self.vref,
            adc_max: self.adc_max,
            ph_slope: self.ph_slope,
            ph_intercept: self.ph_intercept,
            ec_gain: self.ec_gain,
            k_e: self.k_e,
            alpha: self.alpha,
            turb_v0: self.turb_v0,
            turb_slope: self.turb_slope,
        }
    }
}

fn config_or_default(config: Option<&PyCalibrationConfig>) -> CoreConfig {
    config.map(PyCalibrationConfig::core).unwrap_or_default()
}

#[pymethods]
impl PyCalibrationConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut cfg = PyCalibrationConfig::from(CoreConfig::default());
        if let Some(kwargs) = kwargs {
            let obj = Bound::new(kwargs.py(), cfg)?;
            for (k, v) in kwargs.iter() {
                let name: String = k.extract()?;
                if !FIELDS.contains(&name.as_str()) {
                    return Err(PyValueError::new_err(format!("unknown calibration key {name:?}")));
                }
                obj.setattr(name.as_str(), v)?;
            }
            cfg = obj.borrow().clone();
        }
        cfg.core().validate().map_err(cal_err)?;
        Ok(cfg)
    }

    fn validate(&self) -> PyResult<()> {
        self.core().validate().map_err(cal_err)
    }

    /// Copy with the pH line replaced.
    fn with_ph_line(&self, slope: f64, intercept: f64) -> Self {
        self.core().with_ph_line(slope, intercept).into()
    }

    fn __repr__(&self) -> String {
        format!("CalibrationConfig({:?})", self.core())
    }
}

const FIELDS: [&str; 9] = [
    "vref",
    "adc_max",
    "ph_slope",
    "ph_intercept",
    "ec_gain",
    "k_e",
    "alpha",
    "turb_v0",
    "turb_slope",
];

#[pyclass(name = "Measurements", module = "wqgate", get_all, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyMeasurements {
    temp_c: f64,
    ph: f64,
    tds_ppm: f64,
    turbidity_ntu: f64,
}

impl From<CoreMeasurements> for PyMeasurements {
    fn from(m: CoreMeasurements) -> Self {
        PyMeasurements {
            temp_c: m.temp_c,
            ph: m.ph,
            tds_ppm: m.tds_ppm,
            turbidity_ntu: m.turbidity_ntu,
        }
    }
}

impl PyMeasurements {
    fn core(&self) -> CoreMeasurements {
        CoreMeasurements::new(self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu)
    }
}

#[pymethods]
impl PyMeasurements {
    #[new]
    fn new(temp_c: f64, ph: f64, tds_ppm: f64, turbidity_ntu: f64) -> Self {
        PyMeasurements {
            temp_c,
            ph,
            tds_ppm,
            turbidity_ntu,
        }
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu)
    }

    fn __repr__(&self) -> String {
        format!(
            "Measurements(temp_c={}, ph={}, tds_ppm={}, turbidity_ntu={})",
            self.temp_c, self.ph, self.tds_ppm, self.turbidity_ntu
        )
    }
}

#[pyclass(name = "Thresholds", module = "wqgate", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyThresholds {
    ph_ideal_lo: f64,
    ph_ideal_hi: f64,
    temp_high_c: f64,
    tds_alarm_ppm: f64,
}

impl PyThresholds {
    fn core(&self) -> CoreThresholds {
        CoreThresholds {
            ph_ideal_lo: self.ph_ideal_lo,
            ph_ideal_hi: self.ph_ideal_hi,
            temp_high_c: self.temp_high_c,
            tds_alarm_ppm: self.tds_alarm_ppm,
        }
    }
}

#[pymethods]
impl PyThresholds {
    #[new]
    #[pyo3(signature = (ph_ideal_lo=6.0, ph_ideal_hi=8.0, temp_high_c=35.0, tds_alarm_ppm=170.0))]
    fn new(ph_ideal_lo: f64, ph_ideal_hi: f64, temp_high_c: f64, tds_alarm_ppm: f64) -> PyResult<Self> {
        let t = PyThresholds {
            ph_ideal_lo,
            ph_ideal_hi,
            temp_high_c,
            tds_alarm_ppm,
        };
        t.core().validate().map_err(assess_err)?;
        Ok(t)
    }

    fn __repr__(&self) -> String {
        format!("Thresholds({:?})", self.core())
    }
}

#[pyclass(name = "Assessment", module = "wqgate", frozen)]
struct PyAssessment {
    inner: QualityAssessment,
}

#[pymethods]
impl PyAssessment {
    #[getter]
    fn ph_status(&self) -> &'static str {
        self.inner.ph_status.as_str()
    }

    #[getter]
    fn turbidity_level(&self) -> &'static str {
        self.inner.turbidity_level.as_str()
    }

    #[getter]
    fn temp_status(&self) -> &'static str {
        self.inner.temp_status.as_str()
    }

    #[getter]
    fn tds_status(&self) -> &'static str {
        self.inner.tds_status.as_str()
    }

    #[getter]
    fn overall(&self) -> &'static str {
        self.inner.overall.as_str()
    }

    /// Violated parameters in channel order.
    #[getter]
    fn violations(&self) -> Vec<&'static str> {
        self.inner.violations.iter().map(|p: &Parameter| p.as_str()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Assessment({:?})", self.inner)
    }
}

#[pyclass(name = "ParamStats", module = "wqgate", get_all, frozen)]
struct PyParamStats {
    mean: f64,
    min: f64,
    max: f64,
}

#[pyclass(name = "WindowStats", module = "wqgate", frozen)]
struct PyWindowStats {
    inner: WindowStats,
}

#[pymethods]
impl PyWindowStats {
    #[getter]
    fn count(&self) -> usize {
        self.inner.count
    }

    /// Per-parameter (mean, min, max), keyed by parameter name.
    fn params(&self) -> Vec<(&'static str, PyParamStats)> {
        let names = ["temp_c", "ph", "tds_ppm", "turbidity_ntu"];
        names
            .into_iter()
            .zip(self.inner.params())
            .map(|(n, p)| {
                (
                    n,
                    PyParamStats {
                        mean: p.mean,
                        min: p.min,
                        max: p.max,
                    },
                )
            })
            .collect()
    }

    fn means(&self) -> PyMeasurements {
        self.inner.means().into()
    }
}

#[pyclass(name = "RollingWindow", module = "wqgate")]
struct PyRollingWindow {
    inner: CoreWindow,
}

#[pymethods]
impl PyRollingWindow {
    #[new]
    #[pyo3(signature = (capacity=5))]
    fn new(capacity: usize) -> Self {
        PyRollingWindow {
            inner: CoreWindow::new(capacity),
        }
    }

    fn push(&mut self, values: &PyMeasurements) -> PyWindowStats {
        PyWindowStats {
            inner: self.inner.push_values(values.core()),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// XOR of the payload bytes.
#[pyfunction]
fn checksum(payload: &Bound<'_, PyAny>) -> PyResult<u8> {
    Ok(codec::checksum(&line_bytes(payload)?))
}

#[pyfunction]
fn encode_frame(frame: &PySensorFrame) -> PyResult<String> {
    frame.encode()
}

#[pyfunction]
fn parse_frame(line: &Bound<'_, PyAny>) -> PyResult<PySensorFrame> {
    let inner = codec::parse_frame(&line_bytes(line)?).map_err(frame_err)?;
    Ok(PySensorFrame { inner })
}

/// Physical values for a decoded frame.
#[pyfunction]
#[pyo3(signature = (frame, config=None))]
fn calibrate_frame(frame: &PySensorFrame, config: Option<&PyCalibrationConfig>) -> PyResult<PyMeasurements> {
    let reading = cal::calibrate_reading(&frame.inner, &config_or_default(config), chrono::Utc::now()).map_err(cal_err)?;
    Ok(reading.values.into())
}

#[pyfunction]
#[pyo3(signature = (counts, config=None))]
fn adc_to_voltage(counts: i64, config: Option<&PyCalibrationConfig>) -> PyResult<f64> {
    cal::adc_to_voltage(counts, &config_or_default(config)).map_err(cal_err)
}

#[pyfunction]
#[pyo3(signature = (volts, config=None))]
fn voltage_to_ph(volts: f64, config: Option<&PyCalibrationConfig>) -> PyResult<f64> {
    cal::voltage_to_ph(volts, &config_or_default(config)).map_err(cal_err)
}

/// (slope, intercept) of the line through two buffer readings.
#[pyfunction]
fn calibrate_ph_two_point(v1: f64, ph1: f64, v2: f64, ph2: f64) -> PyResult<(f64, f64)> {
    cal::calibrate_ph_two_point(v1, ph1, v2, ph2).map_err(cal_err)
}

#[pyfunction]
fn ph_from_hydrogen_activity(activity: f64) -> PyResult<f64> {
    cal::ph_from_hydrogen_activity(activity).map_err(cal_err)
}

#[pyfunction]
#[pyo3(signature = (ec, temp_c, config=None))]
fn temperature_compensate_ec(ec: f64, temp_c: f64, config: Option<&PyCalibrationConfig>) -> PyResult<f64> {
    cal::temperature_compensate_ec(ec, temp_c, &config_or_default(config)).map_err(cal_err)
}

#[pyfunction]
#[pyo3(signature = (ec25, config=None))]
fn ec_to_tds(ec25: f64, config: Option<&PyCalibrationConfig>) -> PyResult<f64> {
    cal::ec_to_tds(ec25, &config_or_default(config)).map_err(cal_err)
}

#[pyfunction]
fn classify_turbidity(ntu: f64) -> PyResult<&'static str> {
    assess::classify_turbidity(ntu).map(|l| l.as_str()).map_err(assess_err)
}

#[pyfunction]
#[pyo3(signature = (values, thresholds=None))]
fn assess_measurements(values: &PyMeasurements, thresholds: Option<&PyThresholds>) -> PyResult<PyAssessment> {
    let t = thresholds.map(PyThresholds::core).unwrap_or_default();
    let inner = assess::assess_measurements(&values.core(), &t).map_err(assess_err)?;
    Ok(PyAssessment { inner })
}

/// Per-parameter arithmetic mean.
#[pyfunction]
fn site_average(samples: Vec<PyMeasurements>) -> PyResult<PyMeasurements> {
    let values: Vec<CoreMeasurements> = samples.iter().map(PyMeasurements::core).collect();
    mean_of(&values)
        .map(Into::into)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// JSON summary of a readings log, grouped by "device" or "site".
#[pyfunction]
#[pyo3(signature = (path, by="device"))]
fn summarize_log(path: std::path::PathBuf, by: &str) -> PyResult<String> {
    let group_by = match by {
        "device" => GroupBy::Device,
        "site" => GroupBy::Site,
        other => return Err(PyValueError::new_err(format!("by must be 'device' or 'site', not {other:?}"))),
    };
    let summary = report::summarize(&path, group_by).map_err(|e| pyo3::exceptions::PyOSError::new_err(e.to_string()))?;
    Ok(report::render(&summary, ReportFormat::Json))
}

#[pymodule]
fn wqgate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("FrameError", py.get_type::<FrameError>())?;
    m.add("CalibrationError", py.get_type::<CalibrationError>())?;
    m.add("AssessmentError", py.get_type::<AssessmentError>())?;
    m.add_class::<PySensorFrame>()?;
    m.add_class::<PyCalibrationConfig>()?;
    m.add_class::<PyMeasurements>()?;
    m.add_class::<PyThresholds>()?;
    m.add_class::<PyAssessment>()?;
    m.add_class::<PyParamStats>()?;
    m.add_class::<PyWindowStats>()?;
    m.add_class::<PyRollingWindow>()?;
    m.add_function(wrap_pyfunction!(checksum, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(parse_frame, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_frame, m)?)?;
    m.add_function(wrap_pyfunction!(adc_to_voltage, m)?)?;
    m.add_function(wrap_pyfunction!(voltage_to_ph, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_ph_two_point, m)?)?;
    m.add_function(wrap_pyfunction!(ph_from_hydrogen_activity, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_compensate_ec, m)?)?;
    m.add_function(wrap_pyfunction!(ec_to_tds, m)?)?;
    m.add_function(wrap_pyfunction!(classify_turbidity, m)?)?;
    m.add_function(wrap_pyfunction!(assess_measurements, m)?)?;
    m.add_function(wrap_pyfunction!(site_average, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_log, m)?)?;
    Ok(())
}

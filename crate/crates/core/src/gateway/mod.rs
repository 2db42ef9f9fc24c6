//! Ingestion service.
//!
//! Each accepted TCP connection carries newline-delimited frames. Every frame
//! runs through parse, calibrate (with validation), assess, aggregate,
//! persist and alert, in that order; a frame that fails a stage never reaches
//! the next one.

pub mod persist;
pub mod report;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinSet;
use tracing::{debug, error, info, warn};

use crate::aggregation::{AggregationError, SiteAggregate};
use crate::assessment::{assess_reading, AssessmentError, QualityAssessment, Thresholds};
use crate::calibration::{calibrate_reading, CalibrationConfig, CalibrationError};
use crate::frame::{parse_frame, DeviceId, FrameError, MAX_LINE_LEN};
use crate::shutdown_signalled;
use persist::{emit_alerts, persist_reading, AlertEvent, JsonlWriter, ReadingRecord};

pub const DEFAULT_PORT: u16 = 7070;
pub const DEFAULT_MAX_CONNECTIONS: usize = 256;

/// Bytes buffered per line before the rest of it is discarded.
const LINE_BUFFER_LIMIT: usize = 1024;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("persistence failure on {}: {source}", path.display())]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
    pub readings_path: PathBuf,
    pub alerts_path: PathBuf,
    pub max_connections: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            listen: format!("0.0.0.0:{DEFAULT_PORT}"),
            readings_path: PathBuf::from("readings.jsonl"),
            alerts_path: PathBuf::from("alerts.jsonl"),
            max_connections: DEFAULT_MAX_CONNECTIONS,
        }
    }
}

/// The config file: one JSON document with `gateway`, `calibration` and
/// `thresholds` sections. Missing keys take defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub gateway: GatewaySection,
    pub calibration: CalibrationConfig,
    pub thresholds: Thresholds,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let config: ConfigFile =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        config
            .calibration
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        config
            .thresholds
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn into_gateway_config(self) -> GatewayConfig {
        GatewayConfig {
            listen: self.gateway.listen,
            calibration: self.calibration,
            thresholds: self.thresholds,
            readings_path: self.gateway.readings_path,
            alerts_path: self.gateway.alerts_path,
            max_connections: self.gateway.max_connections,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub listen: String,
    pub calibration: CalibrationConfig,
    pub thresholds: Thresholds,
    pub readings_path: PathBuf,
    pub alerts_path: PathBuf,
    pub max_connections: usize,
}

impl GatewayConfig {
    pub fn new(listen: impl Into<String>, readings_path: impl Into<PathBuf>, alerts_path: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            listen: listen.into(),
            calibration: CalibrationConfig::default(),
            thresholds: Thresholds::default(),
            readings_path: readings_path.into(),
            alerts_path: alerts_path.into(),
            max_connections: DEFAULT_MAX_CONNECTIONS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_connections < 1 {
            return Err(GatewayError::Config("max_connections must be >= 1".into()));
        }
        self.calibration
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        self.thresholds
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))
    }
}

/// Counters since the gateway started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GatewayStats {
    pub connections: u64,
    pub lines: u64,
    pub parse_errors: u64,
    /// Frames that failed calibration, validation or assessment.
    pub validation_rejections: u64,
    /// Duplicate or out-of-order frames.
    pub stale_drops: u64,
    pub persisted: u64,
    pub alerts: u64,
}

#[derive(Debug, Default)]
struct Counters {
    connections: AtomicU64,
    lines: AtomicU64,
    parse_errors: AtomicU64,
    validation_rejections: AtomicU64,
    stale_drops: AtomicU64,
    persisted: AtomicU64,
    alerts: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> GatewayStats {
        let get = |c: &AtomicU64| c.load(Ordering::SeqCst);
        GatewayStats {
            connections: get(&self.connections),
            lines: get(&self.lines),
            parse_errors: get(&self.parse_errors),
            validation_rejections: get(&self.validation_rejections),
            stale_drops: get(&self.stale_drops),
            persisted: get(&self.persisted),
            alerts: get(&self.alerts),
        }
    }
}

/// Why a frame stopped short of persistence.
#[derive(Debug, Error)]
pub enum Rejection {
    #[error(transparent)]
    Parse(#[from] FrameError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Stale(#[from] AggregationError),
}

/// Result of pushing one line through the pipeline.
#[derive(Debug)]
pub enum Outcome {
    Persisted {
        record: ReadingRecord,
        alerts: Vec<AlertEvent>,
    },
    Rejected(Rejection),
}

/// The per-frame pipeline with its shared state.
#[derive(Debug)]
pub struct Pipeline {
    calibration: CalibrationConfig,
    thresholds: Thresholds,
    aggregates: Mutex<HashMap<DeviceId, Arc<Mutex<SiteAggregate>>>>,
    readings: JsonlWriter,
    alerts: JsonlWriter,
    counters: Counters,
}

impl Pipeline {
    pub fn open(config: &GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Pipeline {
            calibration: config.calibration,
            thresholds: config.thresholds,
            aggregates: Mutex::new(HashMap::new()),
            readings: JsonlWriter::open(&config.readings_path)?,
            alerts: JsonlWriter::open(&config.alerts_path)?,
            counters: Counters::default(),
        })
    }

    pub fn stats(&self) -> GatewayStats {
        self.counters.snapshot()
    }

    fn aggregate_for(&self, id: &DeviceId) -> Arc<Mutex<SiteAggregate>> {
        let mut map = self.aggregates.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(id.clone())
            .or_insert_with(|| Arc::new(Mutex::new(SiteAggregate::new(id.clone()))))
            .clone()
    }

    /// Snapshot of the running aggregate for `id`.
    pub fn aggregate(&self, id: &DeviceId) -> Option<SiteAggregate> {
        let map = self.aggregates.lock().unwrap_or_else(|p| p.into_inner());
        map.get(id)
            .map(|a| a.lock().unwrap_or_else(|p| p.into_inner()).clone())
    }

    /// Runs one line through every stage. `Err` is only returned for
    /// persistence failures, which are fatal to the gateway.
    pub fn process_line(&self, line: &[u8], now: DateTime<Utc>) -> Result<Outcome, GatewayError> {
        self.counters.lines.fetch_add(1, Ordering::SeqCst);
        match self.run_stages(line, now) {
            Ok(Ok((record, alerts))) => {
                self.counters.persisted.fetch_add(1, Ordering::SeqCst);
                self.counters
                    .alerts
                    .fetch_add(alerts.len() as u64, Ordering::SeqCst);
                Ok(Outcome::Persisted { record, alerts })
            }
            Ok(Err(rejection)) => {
                let counter = match &rejection {
                    Rejection::Parse(_) => &self.counters.parse_errors,
                    Rejection::Calibration(_) | Rejection::Assessment(_) => {
                        &self.counters.validation_rejections
                    }
                    Rejection::Stale(_) => &self.counters.stale_drops,
                };
                counter.fetch_add(1, Ordering::SeqCst);
                warn!(error = %rejection, "frame rejected");
                Ok(Outcome::Rejected(rejection))
            }
            Err(e) => Err(e),
        }
    }

    #[allow(clippy::type_complexity)]
    fn run_stages(
        &self,
        line: &[u8],
        now: DateTime<Utc>,
    ) -> Result<Result<(ReadingRecord, Vec<AlertEvent>), Rejection>, GatewayError> {
        macro_rules! stage {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(e) => return Ok(Err(e.into())),
                }
            };
        }
        let frame = stage!(parse_frame(line));
        let reading = stage!(calibrate_reading(&frame, &self.calibration, now.trunc_subsecs(3)));
        let assessment: QualityAssessment = stage!(assess_reading(&reading, &self.thresholds));

        // held until the record is written so per-device order matches the log
        let aggregate = self.aggregate_for(&reading.device_id);
        let mut aggregate = aggregate.lock().unwrap_or_else(|p| p.into_inner());
        stage!(aggregate.push_reading(&reading));
        let record = persist_reading(&reading, &assessment, &self.readings)?;
        drop(aggregate);

        let alerts = emit_alerts(&reading, &assessment, &self.thresholds, &self.alerts)?;
        debug!(device = %reading.device_id, seq = reading.seq, alerts = alerts.len(), "persisted");
        Ok(Ok((record, alerts)))
    }

    pub fn flush(&self) -> Result<(), GatewayError> {
        self.readings.sync()?;
        self.alerts.sync()
    }
}

/// A bound, not yet running gateway.
pub struct Gateway {
    listener: TcpListener,
    pipeline: Arc<Pipeline>,
    max_connections: usize,
}

impl Gateway {
    pub async fn bind(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let pipeline = Arc::new(Pipeline::open(config)?);
        let listener = TcpListener::bind(&config.listen)
            .await
            .map_err(|source| GatewayError::Bind {
                endpoint: config.listen.clone(),
                source,
            })?;
        Ok(Gateway {
            listener,
            pipeline,
            max_connections: config.max_connections,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn pipeline(&self) -> Arc<Pipeline> {
        self.pipeline.clone()
    }

    /// Serves until `shutdown` flips to `true` or persistence fails, then
    /// closes all connections and flushes both logs.
    pub async fn run(self, mut shutdown: watch::Receiver<bool>) -> Result<GatewayStats, GatewayError> {
        let Gateway {
            listener,
            pipeline,
            max_connections,
        } = self;
        info!(addr = %listener.local_addr().map(|a| a.to_string()).unwrap_or_default(), "gateway listening");
        let permits = Arc::new(Semaphore::new(max_connections));
        let (fatal_tx, mut fatal_rx) = tokio::sync::mpsc::channel::<GatewayError>(1);
        let (stop_tx, stop_rx) = watch::channel(false);
        let mut connections = JoinSet::new();

        let fatal = loop {
            let permit = tokio::select! {
                _ = shutdown_signalled(&mut shutdown) => break None,
                e = fatal_rx.recv() => break e,
                p = permits.clone().acquire_owned() => p.expect("semaphore never closed"),
            };
            let (stream, peer) = tokio::select! {
                _ = shutdown_signalled(&mut shutdown) => break None,
                e = fatal_rx.recv() => break e,
                accepted = listener.accept() => match accepted {
                    Ok(pair) => pair,
                    Err(e) => {
                        warn!(error = %e, "accept failed");
                        continue;
                    }
                },
            };
            pipeline.counters.connections.fetch_add(1, Ordering::SeqCst);
            let pipeline = pipeline.clone();
            let fatal_tx = fatal_tx.clone();
            let stop_rx = stop_rx.clone();
            connections.spawn(async move {
                let _permit = permit;
                if let Err(e) = handle_connection(stream, peer, &pipeline, stop_rx).await {
                    let _ = fatal_tx.try_send(e);
                }
            });
            while connections.try_join_next().is_some() {}
        };

        let _ = stop_tx.send(true);
        while connections.join_next().await.is_some() {}
        let fatal = fatal.or_else(|| fatal_rx.try_recv().ok());
        pipeline.flush()?;
        let stats = pipeline.stats();
        match fatal {
            Some(e) => {
                error!(error = %e, "gateway stopped");
                Err(e)
            }
            None => {
                info!(?stats, "gateway stopped");
                Ok(stats)
            }
        }
    }
}

/// Binds and serves `config` until shutdown.
pub async fn run_gateway(config: &GatewayConfig, shutdown: watch::Receiver<bool>) -> Result<GatewayStats, GatewayError> {
    Gateway::bind(config).await?.run(shutdown).await
}

async fn handle_connection(
    stream: TcpStream,
    peer: SocketAddr,
    pipeline: &Pipeline,
    mut stop: watch::Receiver<bool>,
) -> Result<(), GatewayError> {
    info!(%peer, "device connected");
    let mut reader = BufReader::new(stream);
    let mut line = Vec::with_capacity(MAX_LINE_LEN);
    let mut overflow = 0usize;
    loop {
        let available = tokio::select! {
            _ = shutdown_signalled(&mut stop) => break,
            r = reader.fill_buf() => match r {
                Ok(buf) => buf,
                Err(e) => {
                    warn!(%peer, error = %e, "read failed");
                    break;
                }
            },
        };
        if available.is_empty() {
            if !line.is_empty() || overflow > 0 {
                // unterminated final line
                process(pipeline, &line, overflow)?;
            }
            break;
        }
        let (chunk, consumed, complete) = match available.iter().position(|&b| b == b'\n') {
            Some(i) => (&available[..=i], i + 1, true),
            None => (available, available.len(), false),
        };
        let room = LINE_BUFFER_LIMIT.saturating_sub(line.len());
        line.extend_from_slice(&chunk[..chunk.len().min(room)]);
        overflow += chunk.len().saturating_sub(room);
        reader.consume(consumed);
        if complete {
            process(pipeline, &line, overflow)?;
            line.clear();
            overflow = 0;
        }
    }
    info!(%peer, "device disconnected");
    Ok(())
}

fn process(pipeline: &Pipeline, line: &[u8], overflow: usize) -> Result<(), GatewayError> {
    if overflow > 0 {
        debug!(dropped = overflow, "line exceeded buffer limit");
    }
    // a truncated line is still longer than MAX_LINE_LEN, so it parses as LineTooLong
    pipeline.process_line(line, Utc::now()).map(drop)
}

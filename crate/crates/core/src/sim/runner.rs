use std::time::Duration;

use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::time::{sleep, Instant, MissedTickBehavior};
use tracing::{debug, info, warn};

use super::{synthesize_frame, DeviceProfile, SimError};
use crate::calibration::CalibrationConfig;
use crate::frame::{encode_frame, DeviceId, SensorFrame};

/// Exponential reconnect delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub initial: Duration,
    pub factor: u32,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mut d = self.initial;
        for _ in 0..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap {
                return self.cap;
            }
        }
        d.min(self.cap)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cadence: Duration,
    /// Reconnect attempts allowed after a failed connect, per outage.
    pub retry_budget: u32,
    pub backoff: Backoff,
    /// Stop after this long; `None` runs until the source is exhausted or
    /// shutdown is signalled.
    pub duration: Option<Duration>,
}

impl RunOptions {
    pub fn with_cadence_ms(cadence_ms: u64) -> Self {
        RunOptions {
            cadence: Duration::from_millis(cadence_ms),
            retry_budget: 8,
            backoff: Backoff::default(),
            duration: None,
        }
    }
}

/// Where a device's frames come from.
#[derive(Debug, Clone)]
pub enum FrameSource {
    /// Synthetic WQ1 frames, optionally capped at `max_frames`.
    Live {
        profile: DeviceProfile,
        calibration: CalibrationConfig,
        max_frames: Option<u64>,
    },
    /// Prepared frames sent once in order.
    Replay {
        device_id: DeviceId,
        frames: Vec<SensorFrame>,
    },
}

impl FrameSource {
    fn device_id(&self) -> &DeviceId {
        match self {
            FrameSource::Live { profile, .. } => &profile.device_id,
            FrameSource::Replay { device_id, .. } => device_id,
        }
    }

    /// Frame number `index`; `Ok(None)` when exhausted.
    fn frame(&self, index: u64, cadence_ms: u64) -> Result<Option<SensorFrame>, SimError> {
        match self {
            FrameSource::Live {
                profile,
                calibration,
                max_frames,
            } => {
                if max_frames.is_some_and(|max| index >= max) {
                    return Ok(None);
                }
                let seq = index as u32;
                synthesize_frame(profile, seq, index.saturating_mul(cadence_ms), calibration).map(Some)
            }
            FrameSource::Replay { frames, .. } => Ok(frames.get(index as usize).cloned()),
        }
    }
}

/// What one device did during a run.
#[derive(Debug, Clone, Default)]
pub struct DeviceReport {
    pub device_id: String,
    pub frames_sent: u64,
    /// Frames that could not be synthesized.
    pub frames_skipped: u64,
    pub reconnects: u32,
    /// Send time of each frame, relative to the first tick.
    pub send_offsets: Vec<Duration>,
}

impl DeviceReport {
    /// Mean gap between consecutive sends.
    pub fn mean_interval(&self) -> Option<Duration> {
        let n = self.send_offsets.len();
        if n < 2 {
            return None;
        }
        Some((self.send_offsets[n - 1] - self.send_offsets[0]) / (n as u32 - 1))
    }
}

async fn connect_with_retry(
    endpoint: &str,
    opts: &RunOptions,
    shutdown: &mut watch::Receiver<bool>,
) -> Result<Option<TcpStream>, SimError> {
    let mut attempt = 0u32;
    loop {
        match TcpStream::connect(endpoint).await {
            Ok(stream) => {
                let _ = stream.set_nodelay(true);
                return Ok(Some(stream));
            }
            Err(e) => {
                if attempt >= opts.retry_budget {
                    return Err(SimError::ConnectionRefused {
                        endpoint: endpoint.to_string(),
                        attempts: attempt + 1,
                        source: e,
                    });
                }
                let delay = opts.backoff.delay(attempt);
                warn!(%endpoint, error = %e, ?delay, "connect failed, retrying");
                attempt += 1;
                tokio::select! {
                    _ = sleep(delay) => {}
                    _ = crate::shutdown_signalled(shutdown) => return Ok(None),
                }
            }
        }
    }
}

/// Streams frames from `source` to `endpoint` at the configured cadence.
///
/// Lost connections are re-established with exponential backoff and the
/// frame that failed is re-sent. Returns early, with what was sent so far,
/// once `shutdown` flips to `true`.
pub async fn run_device(
    source: FrameSource,
    endpoint: &str,
    opts: RunOptions,
    mut shutdown: watch::Receiver<bool>,
) -> Result<DeviceReport, SimError> {
    if let FrameSource::Live { profile, .. } = &source {
        profile.validate()?;
    }
    let mut report = DeviceReport {
        device_id: source.device_id().to_string(),
        ..DeviceReport::default()
    };
    if *shutdown.borrow() {
        return Ok(report);
    }
    let Some(mut stream) = connect_with_retry(endpoint, &opts, &mut shutdown).await? else {
        return Ok(report);
    };
    info!(device = %report.device_id, %endpoint, "connected");

    let cadence_ms = opts.cadence.as_millis() as u64;
    let start = Instant::now();
    let deadline = opts.duration.map(|d| start + d);
    let mut ticker = tokio::time::interval_at(start, opts.cadence.max(Duration::from_millis(1)));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);

    let mut index = 0u64;
    loop {
        tokio::select! {
            biased;
            _ = crate::shutdown_signalled(&mut shutdown) => break,
            _ = async {
                match deadline {
                    Some(d) => tokio::time::sleep_until(d).await,
                    None => std::future::pending().await,
                }
            } => break,
            _ = ticker.tick() => {}
        }

        let frame = match source.frame(index, cadence_ms) {
            Ok(Some(frame)) => frame,
            Ok(None) => break,
            Err(e) => {
                warn!(device = %report.device_id, error = %e, "frame skipped");
                report.frames_skipped += 1;
                index += 1;
                continue;
            }
        };
        let line = encode_frame(&frame)?;
        loop {
            match stream.write_all(line.as_bytes()).await {
                Ok(()) => break,
                Err(e) => {
                    warn!(device = %report.device_id, error = %e, "connection lost");
                    let Some(s) = connect_with_retry(endpoint, &opts, &mut shutdown).await? else {
                        return Ok(report);
                    };
                    stream = s;
                    report.reconnects += 1;
                }
            }
        }
        report.send_offsets.push(start.elapsed());
        report.frames_sent += 1;
        index += 1;
        debug!(device = %report.device_id, seq = frame.seq, "sent");
    }

    let _ = stream.flush().await;
    let _ = stream.shutdown().await;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        let b = Backoff::default();
        let secs: Vec<u64> = (0..8).map(|i| b.delay(i).as_secs()).collect();
        assert_eq!(secs, vec![1, 2, 4, 8, 16, 30, 30, 30]);
        assert_eq!(b.delay(u32::MAX), Duration::from_secs(30));
    }

    #[tokio::test]
    async fn refused_without_retries() {
        // grab a free port, then close it
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let endpoint = format!("127.0.0.1:{port}");
        let mut opts = RunOptions::with_cadence_ms(10);
        opts.retry_budget = 0;
        let (_tx, rx) = watch::channel(false);
        let source = FrameSource::Replay {
            device_id: DeviceId::new("d").unwrap(),
            frames: vec![],
        };
        let err = run_device(source, &endpoint, opts, rx).await.unwrap_err();
        match err {
            SimError::ConnectionRefused { endpoint: e, attempts, .. } => {
                assert_eq!(e, endpoint);
                assert_eq!(attempts, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

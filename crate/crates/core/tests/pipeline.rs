use std::path::Path;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use wqgate_core::assessment::Parameter;
use wqgate_core::calibration::Measurements;
use wqgate_core::frame::{encode_frame, DeviceId, FrameKind, SensorFrame};
use wqgate_core::gateway::persist::{AlertEvent, ReadingRecord};
use wqgate_core::gateway::report::{summarize, GroupBy};
use wqgate_core::gateway::{Gateway, GatewayConfig, GatewayError, GatewayStats};
use wqgate_core::sim::{
    load_fixture, replay_fixture, run_device, Backoff, DeviceProfile, FrameSource, ProfileTemplate, RunOptions,
};
use wqgate_core::CalibrationConfig;

struct Running {
    addr: String,
    stop: watch::Sender<bool>,
    task: JoinHandle<Result<GatewayStats, GatewayError>>,
}

impl Running {
    async fn stop(self) -> GatewayStats {
        self.stop.send(true).unwrap();
        self.task.await.unwrap().unwrap()
    }
}

async fn start(dir: &Path, listen: &str) -> Running {
    let cfg = GatewayConfig::new(listen, dir.join("readings.jsonl"), dir.join("alerts.jsonl"));
    let gw = Gateway::bind(&cfg).await.unwrap();
    let addr = gw.local_addr().to_string();
    let (stop, rx) = watch::channel(false);
    Running {
        addr,
        stop,
        task: tokio::spawn(gw.run(rx)),
    }
}

fn lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

async fn wait_for_lines(path: &Path, n: usize) {
    for _ in 0..500 {
        if std::fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0) >= n {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("{} never reached {n} lines", path.display());
}

fn fixture(site: u32) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/site-{site}.csv"))
}

fn wq2(id: &str, seq: u32, values: Measurements) -> String {
    let scales = [100.0, 1000.0, 100.0, 1000.0];
    let v = values.to_array();
    let channels = std::array::from_fn(|i| (v[i] * scales[i]).round() as i32);
    encode_frame(&SensorFrame {
        kind: FrameKind::FixedPoint,
        device_id: DeviceId::new(id).unwrap(),
        seq,
        uptime_ms: u64::from(seq) * 5000,
        channels,
    })
    .unwrap()
}

#[tokio::test]
async fn site2_replay_raises_ph_and_tds_alerts() {
    let dir = tempfile::tempdir().unwrap();
    let gw = start(dir.path(), "127.0.0.1:0").await;
    let id = DeviceId::new("Site-2").unwrap();
    let frames = replay_fixture(&load_fixture(&fixture(2)).unwrap(), &id, 5).unwrap();
    let (_tx, rx) = watch::channel(false);
    let report = run_device(
        FrameSource::Replay { device_id: id, frames },
        &gw.addr,
        RunOptions::with_cadence_ms(5),
        rx,
    )
    .await
    .unwrap();
    assert_eq!(report.frames_sent, 5);
    wait_for_lines(&dir.path().join("alerts.jsonl"), 10).await;
    let stats = gw.stop().await;
    assert_eq!((stats.persisted, stats.alerts), (5, 10));

    let alerts: Vec<AlertEvent> = lines(&dir.path().join("alerts.jsonl"));
    for pair in alerts.chunks(2) {
        assert_eq!(pair[0].parameter, Parameter::Ph);
        assert_eq!(pair[0].status, "Alkaline");
        assert_eq!(pair[0].threshold, 8.0);
        assert_eq!(pair[1].parameter, Parameter::Tds);
        assert_eq!(pair[1].status, "Alarming");
        assert_eq!(pair[1].threshold, 170.0);
    }
    let records: Vec<ReadingRecord> = lines(&dir.path().join("readings.jsonl"));
    let seqs: Vec<u32> = records.iter().map(|r| r.seq).collect();
    assert_eq!(seqs, vec![0, 1, 2, 3, 4]);
}

#[tokio::test]
async fn bad_lines_do_not_close_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let gw = start(dir.path(), "127.0.0.1:0").await;
    let ideal = Measurements::new(25.0, 7.0, 50.0, 0.5);
    let good0 = wq2("dev", 0, ideal);
    let mut corrupt = wq2("dev", 1, ideal).into_bytes();
    corrupt[5] ^= 0x01;
    let overlong = format!("$WQ2,{}\n", "9".repeat(2000));
    let good1 = wq2("dev", 2, ideal);
    let stale = wq2("dev", 1, ideal);

    let mut stream = TcpStream::connect(&gw.addr).await.unwrap();
    stream.write_all(good0.as_bytes()).await.unwrap();
    stream.write_all(&corrupt).await.unwrap();
    stream.write_all(overlong.as_bytes()).await.unwrap();
    stream.write_all(b"garbage without terminator, then newline\r\n").await.unwrap();
    stream.write_all(good1.as_bytes()).await.unwrap();
    stream.write_all(stale.as_bytes()).await.unwrap();
    stream.shutdown().await.unwrap();
    wait_for_lines(&dir.path().join("readings.jsonl"), 2).await;
    tokio::time::sleep(Duration::from_millis(50)).await;

    let stats = gw.stop().await;
    assert_eq!(stats.persisted, 2);
    assert_eq!(stats.parse_errors, 3);
    assert_eq!(stats.stale_drops, 1);
    assert_eq!(stats.alerts, 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("alerts.jsonl")).unwrap(), "");
}

#[tokio::test]
async fn restart_after_torn_write_keeps_earlier_records() {
    let dir = tempfile::tempdir().unwrap();
    let readings = dir.path().join("readings.jsonl");
    let ideal = Measurements::new(25.0, 7.0, 50.0, 0.5);

    let gw = start(dir.path(), "127.0.0.1:0").await;
    let mut s = TcpStream::connect(&gw.addr).await.unwrap();
    for seq in 0..3 {
        s.write_all(wq2("a_1", seq, ideal).as_bytes()).await.unwrap();
    }
    drop(s);
    wait_for_lines(&readings, 3).await;
    gw.stop().await;

    // simulate a crash in the middle of a write
    let mut f = std::fs::OpenOptions::new().append(true).open(&readings).unwrap();
    std::io::Write::write_all(&mut f, br#"{"ts":"2024-05-01T12:00"#).unwrap();
    drop(f);

    let gw = start(dir.path(), "127.0.0.1:0").await;
    let mut s = TcpStream::connect(&gw.addr).await.unwrap();
    for seq in 0..2 {
        s.write_all(wq2("a_2", seq, ideal).as_bytes()).await.unwrap();
    }
    drop(s);
    wait_for_lines(&readings, 6).await;
    gw.stop().await;

    let summary = summarize(&readings, GroupBy::Site).unwrap();
    assert_eq!(summary.corrupt_lines, vec![4]);
    let site = summary.group("a").unwrap();
    assert_eq!(site.count, 5);
    assert_eq!(site.temp_c.mean, 25.0);
}

#[tokio::test]
async fn concurrent_devices_keep_per_device_order() {
    let dir = tempfile::tempdir().unwrap();
    let gw = start(dir.path(), "127.0.0.1:0").await;
    let template = ProfileTemplate {
        noise_sigma: Measurements::new(0.5, 0.05, 2.0, 0.05),
        ..ProfileTemplate::default()
    };
    let (_tx, rx) = watch::channel(false);
    let mut tasks = Vec::new();
    for i in 0..20u64 {
        let profile = template.instantiate(DeviceId::new(format!("p{i}_dev")).unwrap(), 2, i);
        let source = FrameSource::Live {
            profile,
            calibration: CalibrationConfig::default(),
            max_frames: Some(25),
        };
        let addr = gw.addr.clone();
        let rx = rx.clone();
        tasks.push(tokio::spawn(async move {
            run_device(source, &addr, RunOptions::with_cadence_ms(2), rx).await
        }));
    }
    let mut sent = 0;
    for t in tasks {
        sent += t.await.unwrap().unwrap().frames_sent;
    }
    assert_eq!(sent, 500);
    wait_for_lines(&dir.path().join("readings.jsonl"), 500).await;
    let stats = gw.stop().await;
    assert_eq!(stats.persisted, 500);
    assert_eq!(stats.connections, 20);

    let records: Vec<ReadingRecord> = lines(&dir.path().join("readings.jsonl"));
    for i in 0..20 {
        let id = format!("p{i}_dev");
        let seqs: Vec<u32> = records.iter().filter(|r| r.device_id.as_str() == id).map(|r| r.seq).collect();
        assert_eq!(seqs, (0..25).collect::<Vec<_>>(), "{id}");
    }
}

#[tokio::test]
async fn simulator_waits_for_a_late_gateway() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("127.0.0.1:{port}");
    let mut opts = RunOptions::with_cadence_ms(5);
    opts.backoff = Backoff {
        initial: Duration::from_millis(20),
        factor: 2,
        cap: Duration::from_millis(100),
    };
    let (_tx, rx) = watch::channel(false);
    let source = FrameSource::Live {
        profile: DeviceProfile::new(DeviceId::new("late").unwrap(), 1),
        calibration: CalibrationConfig::default(),
        max_frames: Some(3),
    };
    let sim = tokio::spawn({
        let endpoint = endpoint.clone();
        async move { run_device(source, &endpoint, opts, rx).await }
    });

    tokio::time::sleep(Duration::from_millis(150)).await;
    let dir = tempfile::tempdir().unwrap();
    let gw = start(dir.path(), &endpoint).await;
    assert_eq!(sim.await.unwrap().unwrap().frames_sent, 3);
    wait_for_lines(&dir.path().join("readings.jsonl"), 3).await;
    assert_eq!(gw.stop().await.persisted, 3);
}

#[tokio::test]
async fn shutdown_with_idle_connection_open() {
    let dir = tempfile::tempdir().unwrap();
    let gw = start(dir.path(), "127.0.0.1:0").await;
    let _idle = TcpStream::connect(&gw.addr).await.unwrap();
    tokio::time::sleep(Duration::from_millis(20)).await;
    let stats = tokio::time::timeout(Duration::from_secs(5), gw.stop()).await.unwrap();
    assert_eq!(stats.connections, 1);
    assert_eq!(stats.lines, 0);
}

/// Captures what one device sends to a plain listener.
async fn capture(seed: u64) -> Vec<String> {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let reader = tokio::spawn(async move {
        let (stream, _) = listener.accept().await.unwrap();
        let mut lines = BufReader::new(stream).lines();
        let mut out = Vec::new();
        while let Some(l) = lines.next_line().await.unwrap() {
            out.push(l);
        }
        out
    });
    let template = ProfileTemplate {
        noise_sigma: Measurements::new(1.0, 0.1, 5.0, 0.1),
        ..ProfileTemplate::default()
    };
    let source = FrameSource::Live {
        profile: template.instantiate(DeviceId::new("det").unwrap(), 1, seed),
        calibration: CalibrationConfig::default(),
        max_frames: Some(40),
    };
    let (_tx, rx) = watch::channel(false);
    run_device(source, &addr, RunOptions::with_cadence_ms(1), rx).await.unwrap();
    reader.await.unwrap()
}

#[tokio::test]
async fn seeded_runs_are_byte_identical() {
    let a = capture(42).await;
    let b = capture(42).await;
    let c = capture(43).await;
    assert_eq!(a.len(), 40);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

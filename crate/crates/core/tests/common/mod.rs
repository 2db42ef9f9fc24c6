#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub const BIN: &str = env!("CARGO_BIN_EXE_wqgate");

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixtures() -> Vec<PathBuf> {
    (1..=4).map(|i| fixture_dir().join(format!("site-{i}.csv"))).collect()
}

pub fn wqgate(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("run wqgate")
}

pub fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0)
}

/// `wqgate gateway run` on an ephemeral loopback port.
pub struct GatewayProc {
    child: Child,
    stdout: BufReader<ChildStdout>,
    pub addr: String,
    pub readings: PathBuf,
    pub alerts: PathBuf,
}

impl GatewayProc {
    pub fn start(dir: &Path, extra: &[&str]) -> Self {
        let readings = dir.join("readings.jsonl");
        let alerts = dir.join("alerts.jsonl");
        let mut child = Command::new(BIN)
            .args(["gateway", "run", "--listen", "127.0.0.1:0", "--out"])
            .arg(&readings)
            .arg("--alerts")
            .arg(&alerts)
            .args(extra)
            .env("RUST_LOG", "error")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn gateway");
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut first = String::new();
        stdout.read_line(&mut first).unwrap();
        let addr = first
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected gateway banner {first:?}"))
            .to_string();
        GatewayProc {
            child,
            stdout,
            addr,
            readings,
            alerts,
        }
    }

    /// Waits until the readings log holds `n` lines.
    pub fn wait_for_readings(&self, n: usize, timeout: Duration) -> bool {
        let start = Instant::now();
        while start.elapsed() < timeout {
            if line_count(&self.readings) >= n {
                return true;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        line_count(&self.readings) >= n
    }

    /// Interrupts the gateway and returns its final stats.
    pub fn stop(mut self) -> serde_json::Value {
        let status = Command::new("kill")
            .args(["-INT", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        let exit = self.child.wait().unwrap();
        assert!(exit.success(), "gateway exited with {exit}");
        let mut last = String::new();
        self.stdout.read_line(&mut last).unwrap();
        serde_json::from_str(last.trim()).unwrap_or_else(|e| panic!("stats line {last:?}: {e}"))
    }
}

impl Drop for GatewayProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

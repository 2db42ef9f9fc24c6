use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tokio::sync::watch;
use tracing_subscriber::EnvFilter;

use wqgate_core::assessment::assess_measurements;
use wqgate_core::calibration::{CalibrationConfig, Measurements};
use wqgate_core::frame::{encode_frame, parse_frame, DeviceId, SensorFrame};
use wqgate_core::gateway::report::{render, summarize, GroupBy, ReportFormat};
use wqgate_core::gateway::{ConfigFile, Gateway, DEFAULT_PORT};
use wqgate_core::sim::{
    load_fixture, replay_fixture, run_device, sites, DeviceReport, FrameSource, ProfileTemplate,
    RunOptions, DEFAULT_CADENCE_MS,
};

const EXIT_CODES: &str = "Exit codes: 0 success, 1 usage error, 2 runtime failure (bind, persistence, I/O).";

/// Water-quality telemetry gateway, device simulator and reporting tools.
#[derive(Parser, Debug)]
#[command(name = "wqgate", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingestion gateway.
    #[command(subcommand)]
    Gateway(GatewayCommand),
    /// Simulated devices.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Offline reports over a readings log.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Assess one set of physical values and print the result as JSON.
    Classify(ClassifyArgs),
    /// Frame codec passthrough on stdin/stdout.
    #[command(subcommand)]
    Frame(FrameCommand),
}

#[derive(Subcommand, Debug)]
enum GatewayCommand {
    /// Accept device connections and run the ingestion pipeline.
    Run(GatewayRunArgs),
}

#[derive(Args, Debug)]
struct GatewayRunArgs {
    /// Listen address [default: 0.0.0.0:7070, or the config file's value].
    #[arg(long)]
    listen: Option<String>,
    /// JSON config with `gateway`, `calibration` and `thresholds` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Readings log (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Alerts log (JSONL).
    #[arg(long)]
    alerts: Option<PathBuf>,
    #[arg(long)]
    max_connections: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum SimCommand {
    /// Stream synthetic raw-ADC frames from N devices.
    Run(SimRunArgs),
    /// Replay fixture CSV rows as fixed-point frames.
    Replay(SimReplayArgs),
}

#[derive(Args, Debug)]
struct ConnectArgs {
    /// Gateway address.
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    connect: String,
    #[arg(long, default_value_t = DEFAULT_CADENCE_MS)]
    cadence_ms: u64,
    /// Reconnect attempts per outage before giving up.
    #[arg(long, default_value_t = 8)]
    retries: u32,
}

#[derive(Args, Debug)]
struct SimRunArgs {
    #[command(flatten)]
    conn: ConnectArgs,
    #[arg(long, default_value_t = 1)]
    devices: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON with `base` and `noise_sigma` measurement sets.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Config file whose `calibration` section the devices invert.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Device ids are `<prefix>_<index>`.
    #[arg(long, default_value = "sim")]
    id_prefix: String,
    /// Stop after this many seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Stop each device after this many frames.
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Args, Debug)]
struct SimReplayArgs {
    #[command(flatten)]
    conn: ConnectArgs,
    /// Fixture CSV; repeat to replay several files concurrently.
    #[arg(long, required = true)]
    fixture: Vec<PathBuf>,
    /// Only replay rows for this site.
    #[arg(long)]
    site: Option<String>,
    /// Device id to send as [default: the site name].
    #[arg(long)]
    device_id: Option<String>,
}

#[derive(Subcommand, Debug)]
enum ReportCommand {
    /// Per-group count, mean, min and max of every parameter.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = GroupBy::Device)]
    by: GroupBy,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long, allow_hyphen_values = true)]
    temp: f64,
    #[arg(long)]
    ph: f64,
    #[arg(long)]
    tds: f64,
    #[arg(long)]
    turbidity: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum FrameCommand {
    /// JSON frames (one per line) in, wire lines out.
    Encode,
    /// Wire lines in, JSON frames (one per line) out.
    Decode,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    let result = match cli.command {
        Command::Gateway(GatewayCommand::Run(args)) => block_on(gateway_run(args)),
        Command::Sim(SimCommand::Run(args)) => block_on(sim_run(args)),
        Command::Sim(SimCommand::Replay(args)) => block_on(sim_replay(args)),
        Command::Report(ReportCommand::Summarize(args)) => report_summarize(args),
        Command::Classify(args) => classify(args),
        Command::Frame(FrameCommand::Encode) => frame_encode(),
        Command::Frame(FrameCommand::Decode) => frame_decode(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn block_on<F: std::future::Future<Output = anyhow::Result<()>>>(fut: F) -> anyhow::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?
        .block_on(fut)
}

/// Flips the returned receiver to `true` on Ctrl-C.
fn interrupt_channel() -> watch::Receiver<bool> {
    let (tx, rx) = watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            tracing::info!("interrupt received, shutting down");
            let _ = tx.send(true);
        }
        // keep the sender alive so receivers never see a closed channel
        std::future::pending::<()>().await;
    });
    rx
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default()),
    }
}

async fn gateway_run(args: GatewayRunArgs) -> anyhow::Result<()> {
    let file = load_config(args.config.as_deref())?;
    let mut config = file.into_gateway_config();
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(out) = args.out {
        config.readings_path = out;
    }
    if let Some(alerts) = args.alerts {
        config.alerts_path = alerts;
    }
    if let Some(n) = args.max_connections {
        config.max_connections = n;
    }
    let gateway = Gateway::bind(&config).await?;
    println!("listening on {}", gateway.local_addr());
    std::io::stdout().flush()?;
    let stats = gateway.run(interrupt_channel()).await?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn run_options(conn: &ConnectArgs, duration_s: Option<f64>) -> anyhow::Result<RunOptions> {
    if conn.cadence_ms < 1 {
        bail!("--cadence-ms must be >= 1");
    }
    let mut opts = RunOptions::with_cadence_ms(conn.cadence_ms);
    opts.retry_budget = conn.retries;
    opts.duration = duration_s.map(Duration::from_secs_f64);
    Ok(opts)
}

async fn run_all(
    sources: Vec<FrameSource>,
    endpoint: &str,
    opts: RunOptions,
) -> anyhow::Result<Vec<DeviceReport>> {
    let shutdown = interrupt_channel();
    let mut tasks = tokio::task::JoinSet::new();
    for source in sources {
        let endpoint = endpoint.to_string();
        let opts = opts.clone();
        let shutdown = shutdown.clone();
        tasks.spawn(async move { run_device(source, &endpoint, opts, shutdown).await });
    }
    let mut reports = Vec::new();
    let mut first_error = None;
    while let Some(joined) = tasks.join_next().await {
        match joined? {
            Ok(report) => reports.push(report),
            Err(e) => {
                tracing::error!(error = %e, "device failed");
                first_error.get_or_insert(e);
            }
        }
    }
    reports.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(reports),
    }
}

fn print_run_summary(reports: &[DeviceReport]) -> anyhow::Result<()> {
    let sent: u64 = reports.iter().map(|r| r.frames_sent).sum();
    let skipped: u64 = reports.iter().map(|r| r.frames_skipped).sum();
    let intervals: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.mean_interval())
        .map(|d| d.as_secs_f64() * 1000.0)
        .collect();
    let mean_interval_ms = if intervals.is_empty() {
        None
    } else {
        Some(intervals.iter().sum::<f64>() / intervals.len() as f64)
    };
    println!(
        "{}",
        serde_json::json!({
            "devices": reports.len(),
            "frames_sent": sent,
            "frames_skipped": skipped,
            "mean_interval_ms": mean_interval_ms,
        })
    );
    Ok(())
}

async fn sim_run(args: SimRunArgs) -> anyhow::Result<()> {
    let opts = run_options(&args.conn, args.duration_s)?;
    let template: ProfileTemplate = match &args.profile {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)
            .with_context(|| format!("parsing profile {}", p.display()))?,
        None => ProfileTemplate::default(),
    };
    let calibration: CalibrationConfig = load_config(args.config.as_deref())?.calibration;
    let sources = (0..args.devices)
        .map(|i| {
            let id = DeviceId::new(format!("{}_{i:04}", args.id_prefix))?;
            let profile = template.instantiate(id, args.conn.cadence_ms, args.seed.wrapping_add(u64::from(i)));
            profile.validate()?;
            Ok(FrameSource::Live {
                profile,
                calibration,
                max_frames: args.frames,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reports = run_all(sources, &args.conn.connect, opts).await?;
    print_run_summary(&reports)
}

async fn sim_replay(args: SimReplayArgs) -> anyhow::Result<()> {
    let opts = run_options(&args.conn, None)?;
    let mut rows = Vec::new();
    for path in &args.fixture {
        rows.extend(load_fixture(path).with_context(|| path.display().to_string())?);
    }
    let selected: Vec<String> = match &args.site {
        Some(site) => {
            if !rows.iter().any(|r| &r.site == site) {
                bail!("no fixture rows for site {site}");
            }
            vec![site.clone()]
        }
        None => sites(&rows),
    };
    if args.device_id.is_some() && selected.len() > 1 {
        bail!("--device-id needs a single site; select one with --site");
    }
    let mut sources = Vec::new();
    for site in selected {
        let site_rows: Vec<_> = rows.iter().filter(|r| r.site == site).cloned().collect();
        let id = DeviceId::new(args.device_id.clone().unwrap_or_else(|| site.clone()))
            .with_context(|| format!("site {site} is not a valid device id; pass --device-id"))?;
        let frames = replay_fixture(&site_rows, &id, args.conn.cadence_ms)?;
        sources.push(FrameSource::Replay { device_id: id, frames });
    }
    let reports = run_all(sources, &args.conn.connect, opts).await?;
    print_run_summary(&reports)
}

fn report_summarize(args: SummarizeArgs) -> anyhow::Result<()> {
    let summary = summarize(&args.input, args.by)?;
    if summary.skipped() > 0 {
        eprintln!(
            "warning: skipped {} corrupt line(s) at {:?}",
            summary.skipped(),
            summary.corrupt_lines
        );
    }
    print!("{}", render(&summary, args.format));
    Ok(())
}

fn classify(args: ClassifyArgs) -> anyhow::Result<()> {
    let thresholds = load_config(args.config.as_deref())?.thresholds;
    let m = Measurements::new(args.temp, args.ph, args.tds, args.turbidity);
    let assessment = assess_measurements(&m, &thresholds)?;
    println!("{}", serde_json::to_string_pretty(&assessment)?);
    Ok(())
}

fn frame_encode() -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut failures = 0usize;
    for (i, line) in std::io::stdin().lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let encoded = serde_json::from_str::<SensorFrame>(&line)
            .map_err(anyhow::Error::from)
            .and_then(|f| Ok(encode_frame(&f)?));
        match encoded {
            Ok(wire) => out.write_all(wire.as_bytes())?,
            Err(e) => {
                eprintln!("line {}: {e}", i + 1);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} frame(s) failed to encode");
    }
    Ok(())
}

fn frame_decode() -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut failures = 0usize;
    for (i, line) in std::io::stdin().lock().split(b'\n').enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_frame(&line) {
            Ok(frame) => writeln!(out, "{}", serde_json::to_string(&frame)?)?,
            Err(e) => {
                eprintln!("line {}: {e}", i + 1);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} line(s) failed to decode");
    }
    Ok(())
}

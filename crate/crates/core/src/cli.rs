//! The `holoface` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.

use std::io::Write;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_all, BenchRow};
use crate::config::{BackendMode, Config};
use crate::evaluation::{
    errors_from_pairs, errors_from_trace, read_landmark_csv, read_points, reduce_68_to_51, write_ced_csv, EvalReport,
    OUTER_EYES_51, OUTER_EYES_68,
};
use crate::failure::{calibrate_threshold, train_failure_predictor};
use crate::geometry::CameraIntrinsics;
use crate::netproto::{serve, AlignClient, BackendSource, RemoteBackend};
use crate::pipeline::{read_trace, BackendKind, TraceRecord, TraceWriter, Tracker, TrackerConfig};
use crate::pose_fit::{estimate_attributes, fit, initial_guess};
use crate::sim::{generate, perturbed_samples, PerturbationConfig, Scenario, ScenarioConfig};

/// Scenario used when neither the config nor the command names one.
pub const DEMO_SCENARIO: &str = include_str!("../data/demo_scenario.json");

const DEFAULT_INTRINSICS: (f64, f64, f64, f64) = (500.0, 500.0, 320.0, 240.0);

#[derive(Debug, Parser)]
#[command(name = "holoface", version, about = "Head-pose tracking toolkit")]
pub struct Cli {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective config (file plus flag overrides) and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    /// Report errors on stderr as a JSON object.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario through the tracking pipeline.
    Track(TrackArgs),
    /// Serve the scenario's oracle alignment backend over TCP.
    Serve(ServeArgs),
    /// Compute AUC, failure rate and CED from a trace or landmark CSV.
    Eval(EvalArgs),
    /// Fit head pose and blendshape weights to one landmark file.
    Fit(FitArgs),
    /// Time the per-frame operations.
    Bench(BenchArgs),
    /// Train a failure predictor on rendered frames of a scenario.
    TrainPredictor(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Scenario file; the bundled demo when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendMode>,
    /// Alignment server address (host:port).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Per-frame JSON-lines trace output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Listen address; the config endpoint when omitted. Port 0 picks a free port.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trace (.jsonl) or landmark pair CSV (.csv).
    pub input: PathBuf,
    /// Eye-corner landmark indices, e.g. `19,28`; picked from the landmark count when omitted.
    #[arg(long, value_parser = parse_pair)]
    pub eyes: Option<(usize, usize)>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub ced: Option<PathBuf>,
    /// Number of CED samples on [0, 0.08].
    #[arg(long, default_value_t = 81)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// `.pts` file or CSV with one `u,v` row per landmark (68 points are reduced to 51).
    pub landmarks: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output blob; a `.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub per_frame: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    /// Samples with at most this RMS landmark error (pixels) count as good when calibrating.
    #[arg(long, default_value_t = 2.0)]
    pub good_rms: f64,
    #[arg(long, default_value_t = 0.05)]
    pub false_failure_rate: f64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated indices")?;
    Ok((a.trim().parse().map_err(|_| "bad index")?, b.trim().parse().map_err(|_| "bad index")?))
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or input files (exit 2).
    Input(String),
    /// Failure while running (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }

    pub fn to_json(&self) -> String {
        let kind = match self {
            CliError::Input(_) => "input",
            CliError::Runtime(_) => "runtime",
        };
        serde_json::json!({ "error": { "kind": kind, "message": self.message(), "exit_code": self.exit_code() } })
            .to_string()
    }
}

fn input(e: impl ToString) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let error_json = cli.error_json;
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = if error_json { writeln!(err, "{}", e.to_json()) } else { writeln!(err, "error: {}", e.message()) };
            e.exit_code()
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(input)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Track(a) => {
            if let Some(s) = &a.scenario {
                cfg.scenario = Some(s.clone());
            }
            if let Some(b) = a.backend {
                cfg.backend.mode = b;
            }
            if let Some(e) = &a.endpoint {
                cfg.backend.endpoint = e.clone();
            }
            if let Some(t) = &a.trace {
                cfg.output.trace = Some(t.clone());
            }
        }
        Command::Serve(a) => {
            if let Some(s) = &a.scenario {
                cfg.scenario = Some(s.clone());
            }
            if let Some(l) = &a.listen {
                cfg.backend.endpoint = l.clone();
            }
        }
        Command::Eval(a) => {
            if let Some(r) = &a.report {
                cfg.output.report = Some(r.clone());
            }
            if let Some(c) = &a.ced {
                cfg.output.ced_csv = Some(c.clone());
            }
        }
        Command::TrainPredictor(a) => {
            if let Some(s) = &a.scenario {
                cfg.scenario = Some(s.clone());
            }
        }
        Command::Fit(_) | Command::Bench(_) => {}
    }
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    if cli.dump_config {
        writeln!(out, "{}", cfg.to_json_pretty()).map_err(runtime)?;
        return Ok(());
    }
    match &cli.command {
        Command::Track(a) => cmd_track(&cfg, a.json, out),
        Command::Serve(_) => cmd_serve(&cfg, out),
        Command::Eval(a) => cmd_eval(&cfg, a, out),
        Command::Fit(a) => cmd_fit(&cfg, a, out),
        Command::Bench(a) => cmd_bench(&cfg, a, out),
        Command::TrainPredictor(a) => cmd_train(&cfg, a, out),
    }
}

pub fn load_scenario_config(cfg: &Config) -> Result<ScenarioConfig, CliError> {
    match &cfg.scenario {
        Some(p) => ScenarioConfig::load(p).map_err(input),
        None => ScenarioConfig::from_json_str(DEMO_SCENARIO, "bundled demo").map_err(input),
    }
}

fn load_scenario(cfg: &Config) -> Result<Scenario, CliError> {
    let sc = load_scenario_config(cfg)?;
    let model = cfg.load_model().map_err(input)?;
    generate(&sc, &model).map_err(input)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSummary {
    pub scenario: String,
    pub frames: usize,
    pub tracked: usize,
    pub tracked_percent: f64,
    /// Tracked share over frames where the face is visible.
    pub tracked_visible_percent: f64,
    pub mean_rms_residual: Option<f64>,
    pub remote_frames: usize,
    pub local_frames: usize,
    pub fallbacks: usize,
    pub detections: usize,
    pub losses: usize,
    pub mean_translation_error_m: Option<f64>,
    pub trace: Option<PathBuf>,
}

/// Runs the configured scenario and optionally writes the trace.
pub fn track_scenario(cfg: &Config) -> Result<TrackSummary, CliError> {
    let scenario = load_scenario(cfg)?;
    let model = cfg.load_model().map_err(input)?;
    let k = cfg.intrinsics_or(scenario.config.intrinsics);
    let tcfg = TrackerConfig {
        image_size: cfg.tracker.image_size.or(Some(scenario.config.image_size)),
        ..cfg.tracker.clone()
    };
    let mut tracker = Tracker::new(
        model,
        k,
        tcfg,
        Box::new(scenario.oracle_detector()),
        Box::new(scenario.oracle_backend()),
    )
    .map_err(input)?;
    if cfg.backend.mode == BackendMode::Remote {
        let client = AlignClient::disconnected(&cfg.backend.endpoint, cfg.backend.timeout()).map_err(input)?;
        tracker = tracker.with_remote(Box::new(RemoteBackend::new(client)));
    }
    if let Some(p) = cfg.load_failure_predictor().map_err(input)? {
        tracker = tracker.with_failure_predictor(p);
    }
    let mut writer = match &cfg.output.trace {
        Some(p) => Some(TraceWriter::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?),
        None => None,
    };

    let delay = cfg.tracker.filter.acquisition_to_render_delay;
    let mut s = TrackSummary {
        scenario: scenario.config.name.clone(),
        frames: scenario.frames.len(),
        tracked: 0,
        tracked_percent: 0.0,
        tracked_visible_percent: 0.0,
        mean_rms_residual: None,
        remote_frames: 0,
        local_frames: 0,
        fallbacks: 0,
        detections: 0,
        losses: 0,
        mean_translation_error_m: None,
        trace: cfg.output.trace.clone(),
    };
    let (mut visible, mut visible_tracked) = (0usize, 0usize);
    let (mut rms_sum, mut err_sum) = (0.0, 0.0);
    for f in scenario.frames.iter() {
        let o = tracker.step(&f.frame, f.frame.acquisition_time + delay);
        if o.tracking_valid {
            s.tracked += 1;
            if let Some(r) = o.rms_residual {
                rms_sum += r;
            }
            if let Some(p) = &o.world_pose_raw {
                err_sum += (p.translation - f.head_world.translation).norm();
            }
        }
        if !f.occluded {
            visible += 1;
            visible_tracked += usize::from(o.tracking_valid);
        }
        match o.backend_used {
            Some(BackendKind::Remote) => s.remote_frames += 1,
            Some(BackendKind::Local) => s.local_frames += 1,
            None => {}
        }
        s.fallbacks += usize::from(o.fallback);
        s.detections += o.events.iter().filter(|e| *e == "detected").count();
        s.losses += o.events.iter().filter(|e| e.starts_with("tracking_lost")).count();
        if let Some(w) = writer.as_mut() {
            let mut rec = TraceRecord::new(o);
            rec.gt_landmarks = Some(f.true_landmarks.clone());
            let t = f.head_world.translation;
            rec.gt_world_translation = Some([t.x, t.y, t.z]);
            w.write(&rec).map_err(runtime)?;
        }
    }
    if let Some(w) = writer {
        w.finish().map_err(runtime)?;
    }
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    s.tracked_percent = pct(s.tracked, s.frames);
    s.tracked_visible_percent = pct(visible_tracked, visible);
    if s.tracked > 0 {
        s.mean_rms_residual = Some(rms_sum / s.tracked as f64);
        s.mean_translation_error_m = Some(err_sum / s.tracked as f64);
    }
    Ok(s)
}

fn cmd_track(cfg: &Config, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let s = track_scenario(cfg)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&s).map_err(runtime)?).map_err(runtime)?;
        return Ok(());
    }
    let opt = |v: Option<f64>, scale: f64, unit: &str| v.map_or("n/a".to_string(), |x| format!("{:.3} {unit}", x * scale));
    let mut text = format!(
        "scenario          {}\nframes            {}\ntracked           {} ({:.1}%, {:.1}% of visible frames)\nmean residual     {}\nmean position err {}\nbackend frames    remote {}, local {}\nfallbacks         {}\ndetections        {}\nlosses            {}\n",
        if s.scenario.is_empty() { "(unnamed)" } else { &s.scenario },
        s.frames,
        s.tracked,
        s.tracked_percent,
        s.tracked_visible_percent,
        opt(s.mean_rms_residual, 1.0, "px"),
        opt(s.mean_translation_error_m, 1000.0, "mm"),
        s.remote_frames,
        s.local_frames,
        s.fallbacks,
        s.detections,
        s.losses,
    );
    if s.fallbacks > 0 {
        text.push_str("note              remote backend unavailable; fell back to the local backend\n");
    }
    if let Some(t) = &s.trace {
        text.push_str(&format!("trace             {}\n", t.display()));
    }
    out.write_all(text.as_bytes()).map_err(runtime)
}

fn resolve(addr: &str) -> Result<SocketAddr, CliError> {
    addr.to_socket_addrs()
        .map_err(|e| input(format!("backend.endpoint '{addr}': {e}")))?
        .next()
        .ok_or_else(|| input(format!("backend.endpoint '{addr}' resolves to nothing")))
}

fn cmd_serve(cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = load_scenario(cfg)?;
    let listener = TcpListener::bind(resolve(&cfg.backend.endpoint)?)
        .map_err(|e| runtime(format!("bind {}: {e}", cfg.backend.endpoint)))?;
    let backend = scenario.oracle_backend();
    let handle = serve(listener, BackendSource::shared(backend)).map_err(runtime)?;
    writeln!(out, "listening on {}", handle.addr()).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    handle.join();
    Ok(())
}

fn default_eyes(landmarks: usize) -> (usize, usize) {
    if landmarks == 68 {
        OUTER_EYES_68
    } else {
        OUTER_EYES_51
    }
}

fn cmd_eval(cfg: &Config, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let is_csv = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let errors = if is_csv {
        let pairs = read_landmark_csv(&a.input).map_err(input)?;
        let eyes = a.eyes.unwrap_or_else(|| default_eyes(pairs[0].gt.len()));
        errors_from_pairs(&pairs, eyes).map_err(input)?
    } else {
        let recs = read_trace(&a.input).map_err(input)?;
        let n = recs.iter().find_map(|r| r.gt_landmarks.as_ref().map(Vec::len)).unwrap_or(51);
        errors_from_trace(&recs, a.eyes.unwrap_or_else(|| default_eyes(n))).map_err(input)?
    };
    if errors.is_empty() {
        return Err(input(format!("{}: no frames with ground truth", a.input.display())));
    }
    let report = EvalReport::from_errors(&errors, a.grid).map_err(input)?;
    let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
    if let Some(p) = &cfg.output.report {
        std::fs::write(p, &json).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &cfg.output.ced_csv {
        write_ced_csv(p, &report).map_err(runtime)?;
    }
    writeln!(out, "{json}").map_err(runtime)
}

fn cmd_fit(cfg: &Config, a: &FitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = cfg.load_model().map_err(input)?;
    let (fx, fy, cx, cy) = DEFAULT_INTRINSICS;
    let k = cfg.intrinsics_or(CameraIntrinsics::new(fx, fy, cx, cy).expect("default intrinsics"));
    let mut pts = read_points(&a.landmarks).map_err(input)?;
    if pts.len() == 68 && model.landmark_map().len() == 51 {
        pts = reduce_68_to_51(&pts).expect("68 points");
    }
    if pts.len() != model.landmark_map().len() {
        return Err(input(format!(
            "{}: {} landmarks, the model expects {}",
            a.landmarks.display(),
            pts.len(),
            model.landmark_map().len()
        )));
    }
    let init = initial_guess(&model, &pts, &k).map_err(input)?;
    let res = fit(&model, &pts, &k, &init, &cfg.tracker.fit).map_err(runtime)?;
    let attrs = estimate_attributes(&model, &res.weights, &cfg.tracker.attributes).map_err(runtime)?;
    let named: serde_json::Map<String, serde_json::Value> = model
        .blendshapes()
        .iter()
        .zip(res.weights.as_slice())
        .map(|(b, w)| (b.name.clone(), serde_json::json!(w)))
        .collect();
    let aa = crate::geometry::log_so3(&res.pose.rotation);
    let doc = serde_json::json!({
        "pose": res.pose,
        "axis_angle": [aa.x, aa.y, aa.z],
        "weights": named,
        "attributes": attrs,
        "rms_residual": res.rms_residual,
        "iterations": res.iterations,
        "converged": res.converged,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(runtime)?).map_err(runtime)
}

fn cmd_bench(cfg: &Config, a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = cfg.load_model().map_err(input)?;
    let (fx, fy, cx, cy) = DEFAULT_INTRINSICS;
    let k = cfg.intrinsics_or(CameraIntrinsics::new(fx, fy, cx, cy).expect("default intrinsics"));
    let rows: Vec<BenchRow> = run_all(&model, &k, &cfg.hog, a.iterations).map_err(runtime)?;
    if a.json {
        return writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(runtime)?).map_err(runtime);
    }
    writeln!(out, "{:<36} {:>10} {:>12} {:>12}", "operation", "runs", "median µs", "p95 µs").map_err(runtime)?;
    for r in rows {
        writeln!(out, "{:<36} {:>10} {:>12.2} {:>12.2}", r.name, r.iterations, r.median_us, r.p95_us).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_train(cfg: &Config, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut sc = load_scenario_config(cfg)?;
    sc.render_images = true;
    let model = cfg.load_model().map_err(input)?;
    let scenario = generate(&sc, &model).map_err(input)?;
    let pc = PerturbationConfig { per_frame: a.per_frame, ..PerturbationConfig::default() };
    let samples: Vec<_> = perturbed_samples(&scenario, &pc).map_err(input)?.into_iter().map(|s| s.sample).collect();
    let (mut pred, summary) = train_failure_predictor(&samples, &cfg.hog, a.ridge).map_err(runtime)?;
    let n = model.landmark_map().len() as f64;
    let good_limit = a.good_rms * a.good_rms * n;
    let good: Vec<f64> = samples
        .iter()
        .filter(|s| s.sse <= good_limit)
        .map(|s| pred.predict_error(&s.image, &s.landmarks))
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    pred.threshold = calibrate_threshold(&good, a.false_failure_rate).map_err(input)?;
    pred.save(&a.out).map_err(runtime)?;
    writeln!(
        out,
        "trained on {} samples (training RMS {:.2} px²), threshold {:.1} px² from {} good samples, wrote {}",
        summary.samples,
        summary.rms_residual,
        pred.threshold,
        good.len(),
        a.out.display()
    )
    .map_err(runtime)
}

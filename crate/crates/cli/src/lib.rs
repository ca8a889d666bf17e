//! Command-line front end: synthetic data, training, evaluation, offline
//! detection and the streaming service.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod service;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use sickwatch::detector::{detect_offline, DetectorConfig, HysteresisConfig};
use sickwatch::eval::{evaluate, render_report, EvalConfig, ReportFormat};
use sickwatch::features::{extract_features, FeatureConfig};
use sickwatch::ingest::{load_session, save_session, DEFAULT_RATE_HZ};
use sickwatch::labeling::{apply_blink_countermeasure, label_frames, write_labeled_csv, PRE_SS_LEN_S};
use sickwatch::rnn::{load_model, save_model, LstmModel};
use sickwatch::synth::{generate_with_truth, SynthSpec};
use sickwatch::trainer::{train, write_history_csv, TrainConfig};
use sickwatch::{features::detect_blinks, DetectionEvent, Error, Interval, ModelProfile, Perspective, Session};

use service::{replay, ServerMessage, Service, ServiceConfig};

#[derive(Parser, Debug)]
#[command(
    name = "sickwatch",
    version,
    about = "Simulator-sickness detection from eye and character telemetry"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic session recording
    Synth(SynthArgs),
    /// Train model A or B on session recordings
    Train(TrainArgs),
    /// Score a model on held-out recordings
    Eval(EvalArgs),
    /// Run detection over a recording offline
    Detect(DetectArgs),
    /// Run the TCP detection service
    Serve(ServeArgs),
    /// Export per-frame labels and features as CSV
    Label(LabelArgs),
    /// Stream a recording to a running service and print its detections
    Replay(ReplayArgs),
}

/// Accepted by every subcommand; values are injected as flags before the command line.
const CONFIG_HELP: &str = "JSON file of flag values, e.g. {\"epochs\": 10}";

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "1PP")]
    perspective: Perspective,
    /// Session length in seconds [default: 180]
    #[arg(long)]
    duration: Option<f64>,
    /// Frame rate [default: 60]
    #[arg(long)]
    rate: Option<f64>,
    /// Scripted episodes [default: 4 for 1PP, 2 for 3PP]
    #[arg(long)]
    episodes: Option<usize>,
    /// Eye-jitter variance gain at the peak of an episode [default: 3.0 for 1PP, 1.8 for 3PP]
    #[arg(long)]
    eye_gain: Option<f64>,
    /// Character maneuver amplitude multiplier [default: 1.0]
    #[arg(long)]
    motion_intensity: Option<f64>,
    /// Forced both-eye closure, START:END in seconds; repeatable
    #[arg(long = "blink", value_parser = parse_interval)]
    blinks: Vec<Interval>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output recording
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the scripted episodes as JSON
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Session recordings
    #[arg(required = true)]
    sessions: Vec<PathBuf>,
    #[arg(long, default_value = "A")]
    profile: ModelProfile,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Window length in frames
    #[arg(long, default_value_t = 120)]
    window: usize,
    /// Stride between training windows in frames
    #[arg(long, default_value_t = 30)]
    stride: usize,
    /// Fraction of sessions used for training
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 6)]
    patience: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Pre-sickness lead-up in seconds
    #[arg(long, default_value_t = PRE_SS_LEN_S)]
    pre_ss: f64,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    /// Output model file
    #[arg(short, long)]
    output: PathBuf,
    /// Per-epoch history CSV
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DetectorArgs {
    /// Window length in frames
    #[arg(long, default_value_t = 120)]
    window: usize,
    /// Frames between inferences
    #[arg(long, default_value_t = 15)]
    stride: usize,
    /// Consecutive high inferences to raise
    #[arg(long, default_value_t = 3)]
    k_raise: usize,
    /// Consecutive low inferences to clear
    #[arg(long, default_value_t = 8)]
    m_clear: usize,
    #[arg(long, default_value_t = 0.7)]
    theta_raise: f64,
    #[arg(long, default_value_t = 0.5)]
    theta_clear: f64,
}

impl DetectorArgs {
    fn config(&self, rate_hz: f64) -> DetectorConfig {
        DetectorConfig {
            rate_hz,
            window: self.window,
            stride: self.stride,
            features: FeatureConfig::default(),
            hysteresis: HysteresisConfig {
                k_raise: self.k_raise,
                m_clear: self.m_clear,
                theta_raise: self.theta_raise,
                theta_clear: self.theta_clear,
            },
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Held-out session recordings
    #[arg(required = true)]
    sessions: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    #[arg(long, default_value_t = PRE_SS_LEN_S)]
    pre_ss: f64,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Write the report here instead of stdout
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    session: PathBuf,
    /// Model file; repeat to run A and B together
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Write events here instead of stdout
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Model file; repeat to load A and B
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    max_sessions: usize,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LabelArgs {
    session: PathBuf,
    #[arg(long, default_value_t = PRE_SS_LEN_S)]
    pre_ss: f64,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    session: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Models to request, e.g. A,B [default: all loaded by the service]
    #[arg(long, value_delimiter = ',')]
    models: Vec<ModelProfile>,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
}

fn parse_interval(s: &str) -> Result<Interval, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let start: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let end: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(end > start) {
        return Err("END must exceed START".into());
    }
    Ok(Interval::new(start, end))
}

/// Replaces `--config FILE` with the flags it holds, placed right after the
/// subcommand so explicit flags later on the line win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (args.get(pos + 1).cloned().ok_or("--config needs a file argument")?, 2),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text).map_err(|e| format!("config {path}: {e}"))? else {
        return Err(format!("config {path}: expected a JSON object"));
    };
    let mut flags = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(format!("config key {key}: unsupported value {v}")),
        };
        match &value {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for v in items {
                    flags.push(flag.clone());
                    flags.push(scalar(v)?);
                }
            }
            v => {
                flags.push(flag);
                flags.push(scalar(v)?);
            }
        }
    }
    let mut out: Vec<String> = args[..pos].to_vec();
    let rest = &args[pos + consumed..];
    // the subcommand is the first argument after the program name
    let insert_at = out.len().min(2);
    let tail = out.split_off(insert_at);
    out.extend(flags);
    out.extend(tail);
    out.extend(rest.iter().cloned());
    Ok(out)
}

type CmdResult = Result<(), Error>;

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn output(path: &Option<PathBuf>, stdout: &mut dyn Write, body: &[u8]) -> CmdResult {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(body)?;
            w.flush()?;
        }
        None => stdout.write_all(body)?,
    }
    Ok(())
}

fn load_all(paths: &[PathBuf], rate: f64) -> Result<Vec<Session>, Error> {
    paths.iter().map(|p| load_session(p, rate)).collect()
}

/// Detection events as the service sends them, one JSON object per line.
pub fn events_jsonl(events: &[DetectionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(&ServerMessage::Detection(*e)).expect("events serialize"));
        out.push('\n');
    }
    out
}

fn cmd_synth(a: SynthArgs, stdout: &mut dyn Write) -> CmdResult {
    let mut spec = SynthSpec::for_perspective(a.perspective, a.seed);
    if let Some(v) = a.duration {
        spec.duration_s = v;
    }
    if let Some(v) = a.rate {
        spec.rate_hz = v;
    }
    if let Some(v) = a.episodes {
        spec.n_episodes = v;
    }
    if let Some(v) = a.eye_gain {
        spec.eye_gain = v;
    }
    if let Some(v) = a.motion_intensity {
        spec.motion_intensity = v;
    }
    spec.forced_blinks = a.blinks;
    let (session, episodes) = generate_with_truth(&spec)?;
    save_session(&session, &a.output)?;
    if let Some(p) = &a.truth {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &episodes).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    writeln!(
        stdout,
        "wrote {} frames, {} pauses to {}",
        session.frames.len(),
        session.pauses.len(),
        a.output.display()
    )?;
    Ok(())
}

fn cmd_train(a: TrainArgs, stdout: &mut dyn Write) -> CmdResult {
    let sessions = load_all(&a.sessions, a.rate)?;
    let cfg = TrainConfig {
        profile: a.profile,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        window: a.window,
        stride: a.stride,
        split: a.split,
        patience: a.patience,
        hidden: a.hidden,
        pre_ss_len_s: a.pre_ss,
        features: FeatureConfig::default(),
    };
    let outcome = train(&sessions, &cfg)?;
    save_model(&outcome.model, &a.output)?;
    if let Some(p) = &a.history {
        let mut w = create(p)?;
        write_history_csv(&mut w, &outcome.history)?;
        w.flush()?;
    }
    match outcome.best_epoch {
        Some(e) => writeln!(
            stdout,
            "model {} saved to {} (best epoch {e}, validation balanced accuracy {:.4})",
            a.profile,
            a.output.display(),
            outcome.history[e].val_balanced_accuracy
        )?,
        None => writeln!(
            stdout,
            "model {} saved to {} (untrained)",
            a.profile,
            a.output.display()
        )?,
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, stdout: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    let sessions = load_all(&a.sessions, a.rate)?;
    let cfg = EvalConfig {
        detector: a.detector.config(a.rate),
        pre_ss_len_s: a.pre_ss,
        training_sessions: Vec::new(),
    };
    let ev = evaluate(&model, &sessions, &cfg)?;
    output(&a.output, stdout, render_report(&ev, a.format).as_bytes())
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Arc<LstmModel>>, Error> {
    paths.iter().map(|p| load_model(p).map(Arc::new)).collect()
}

fn cmd_detect(a: DetectArgs, stdout: &mut dyn Write) -> CmdResult {
    let models = load_models(&a.models)?;
    let session = load_session(&a.session, a.rate)?;
    let events = detect_offline(&models, &session.frames, &a.detector.config(session.rate_hz))?;
    output(&a.output, stdout, events_jsonl(&events).as_bytes())
}

fn cmd_serve(a: ServeArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = ServiceConfig {
        listen: a.listen,
        models: load_models(&a.models)?,
        max_sessions: a.max_sessions,
        detector: a.detector.config(DEFAULT_RATE_HZ),
        record_latency: false,
    };
    let service = Service::bind(cfg)?;
    writeln!(stdout, "listening on {}", service.local_addr()?)?;
    stdout.flush()?;
    service.run()?;
    Ok(())
}

fn cmd_label(a: LabelArgs, stdout: &mut dyn Write) -> CmdResult {
    let session = load_session(&a.session, a.rate)?;
    let cfg = FeatureConfig::default();
    let feats = extract_features(&session.frames, session.rate_hz, &cfg)?;
    let ts = session.timestamps();
    let labels = label_frames(&ts, &session.pauses, a.pre_ss);
    let blinks = detect_blinks(
        &session.frames,
        session.rate_hz,
        cfg.openness_threshold,
        cfg.min_blink_s,
    );
    let series = apply_blink_countermeasure(&labels, &ts, &blinks);
    let mut buf = Vec::new();
    write_labeled_csv(&mut buf, &series, &feats)?;
    output(&a.output, stdout, &buf)
}

fn cmd_replay(a: ReplayArgs, stdout: &mut dyn Write) -> CmdResult {
    let session = load_session(&a.session, a.rate)?;
    let models = (!a.models.is_empty()).then_some(a.models.as_slice());
    let events = replay(&a.addr, &session.session_id, session.rate_hz, models, &session.frames)?;
    output(&a.output, stdout, events_jsonl(&events).as_bytes())
}

/// Runs the command line `args` (program name first). Returns the exit code:
/// 0 on success, 1 on a usage error, 2 on a runtime error.
pub fn run_cli<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Detect(a) => cmd_detect(a, stdout),
        Command::Serve(a) => cmd_serve(a, stdout),
        Command::Label(a) => cmd_label(a, stdout),
        Command::Replay(a) => cmd_replay(a, stdout),
    };
    match result {
        Ok(()) => {
            let _ = stdout.flush();
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn config_flags_go_before_explicit_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"epochs": 4, "batch_size": 8, "verbose": true, "model": ["a", "b"]}"#,
        )
        .unwrap();
        let args = strings(&[
            "sickwatch",
            "train",
            "x.jsonl",
            "--config",
            p.to_str().unwrap(),
            "--epochs",
            "9",
        ]);
        let out = expand_config(args).unwrap();
        assert_eq!(
            out,
            strings(&[
                "sickwatch",
                "train",
                "--batch-size",
                "8",
                "--epochs",
                "4",
                "--model",
                "a",
                "--model",
                "b",
                "--verbose",
                "x.jsonl",
                "--epochs",
                "9"
            ])
        );
    }

    #[test]
    fn interval_parsing() {
        assert_eq!(parse_interval("1.5:2.5").unwrap(), Interval::new(1.5, 2.5));
        assert!(parse_interval("2:1").is_err());
        assert!(parse_interval("2").is_err());
    }
}

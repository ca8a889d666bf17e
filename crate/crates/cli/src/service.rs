//! Newline-delimited JSON detection service over TCP.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sickwatch::detector::{Detector, DetectorConfig};
use sickwatch::ingest::FrameRecord;
use sickwatch::rnn::LstmModel;
use sickwatch::{DetectionEvent, Frame, ModelProfile, Vec3};

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        session_id: String,
        rate_hz: f64,
        #[serde(default)]
        models: Option<Vec<ModelProfile>>,
    },
    Frame(WireFrame),
    Bye,
}

/// A merged frame on the wire. `gap` marks frames interpolated across a
/// tracking gap; clients replaying aligned recordings set it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub t: f64,
    pub gaze_l: Vec3,
    pub gaze_r: Vec3,
    pub gaze_c: Vec3,
    pub open_l: f64,
    pub open_r: f64,
    pub pupil_l: f64,
    pub pupil_r: f64,
    pub pos: Vec3,
    pub quat: [f64; 4],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gap: bool,
}

impl WireFrame {
    pub fn from_frame(f: &Frame) -> Self {
        let r = FrameRecord::from_frame(f);
        WireFrame {
            t: r.t,
            gaze_l: r.gaze_l,
            gaze_r: r.gaze_r,
            gaze_c: r.gaze_c,
            open_l: r.open_l,
            open_r: r.open_r,
            pupil_l: r.pupil_l,
            pupil_r: r.pupil_r,
            pos: r.pos,
            quat: r.quat,
            gap: f.gap,
        }
    }

    pub fn to_frame(&self) -> sickwatch::Result<Frame> {
        let r = FrameRecord {
            t: self.t,
            gaze_l: self.gaze_l,
            gaze_r: self.gaze_r,
            gaze_c: self.gaze_c,
            open_l: self.open_l,
            open_r: self.open_r,
            pupil_l: self.pupil_l,
            pupil_r: self.pupil_r,
            pos: self.pos,
            quat: self.quat,
        };
        let mut f = r.to_frame()?;
        f.gap = self.gap;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack { session_id: String },
    Detection(DetectionEvent),
    Error { code: String, message: String },
}

impl ServerMessage {
    fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub listen: String,
    pub models: Vec<Arc<LstmModel>>,
    pub max_sessions: usize,
    /// Window, stride, feature and hysteresis settings; the rate comes from each hello.
    pub detector: DetectorConfig,
    /// Keep per-frame processing times for [`ServiceHandle::latencies`].
    pub record_latency: bool,
}

impl ServiceConfig {
    pub fn validate(&self) -> sickwatch::Result<()> {
        if self.models.is_empty() {
            return Err(sickwatch::Error::NoModels);
        }
        if self.max_sessions == 0 {
            return Err(sickwatch::Error::InvalidArgument(
                "max sessions must be positive".into(),
            ));
        }
        self.detector.validate()
    }
}

struct Shared {
    cfg: ServiceConfig,
    active: AtomicUsize,
    stop: AtomicBool,
    latencies: Mutex<Vec<Duration>>,
}

pub struct Service {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Service {
    pub fn bind(cfg: ServiceConfig) -> sickwatch::Result<Service> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen)?;
        Ok(Service {
            listener,
            shared: Arc::new(Shared {
                cfg,
                active: AtomicUsize::new(0),
                stop: AtomicBool::new(false),
                latencies: Mutex::new(Vec::new()),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped, one thread per connection.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            if self.shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle(stream, &shared) {
                    log::debug!("connection {peer:?} ended: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServiceHandle> {
        let addr = self.local_addr()?;
        let shared = Arc::clone(&self.shared);
        let thread = thread::spawn(move || self.run());
        Ok(ServiceHandle {
            addr,
            shared,
            thread: Some(thread),
        })
    }
}

pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn active_sessions(&self) -> usize {
        self.shared.active.load(Ordering::SeqCst)
    }

    /// Processing time of every frame handled so far, when recording is on.
    pub fn latencies(&self) -> Vec<Duration> {
        self.shared.latencies.lock().unwrap().clone()
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Releases a session slot when the connection ends.
struct Slot<'a>(&'a AtomicUsize);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn send<W: Write>(w: &mut W, msg: &ServerMessage) -> io::Result<()> {
    serde_json::to_writer(&mut *w, msg)?;
    w.write_all(b"\n")
}

fn fail<W: Write>(w: &mut W, code: &str, message: impl Into<String>) -> io::Result<()> {
    send(w, &ServerMessage::error(code, message))?;
    w.flush()
}

struct Session {
    detector: Detector,
    rate_hz: f64,
    last_t: Option<f64>,
}

fn handle(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut out = BufWriter::new(stream.try_clone()?);
    if shared.active.fetch_add(1, Ordering::SeqCst) >= shared.cfg.max_sessions {
        shared.active.fetch_sub(1, Ordering::SeqCst);
        return fail(&mut out, "busy", "busy");
    }
    let _slot = Slot(&shared.active);
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }

    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let mut session: Option<Session> = None;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let received = Instant::now();
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let msg: ClientMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return fail(&mut out, "bad_message", format!("unreadable message: {e}")),
        };
        match (msg, session.as_mut()) {
            (
                ClientMessage::Hello {
                    session_id,
                    rate_hz,
                    models,
                },
                None,
            ) => {
                match open_session(shared, rate_hz, models) {
                    Ok(s) => session = Some(s),
                    Err((code, message)) => return fail(&mut out, code, message),
                }
                send(&mut out, &ServerMessage::Ack { session_id })?;
                out.flush()?;
            }
            (ClientMessage::Hello { .. }, Some(_)) => {
                return fail(&mut out, "protocol", "duplicate hello");
            }
            (_, None) => return fail(&mut out, "expected_hello", "expected hello"),
            (ClientMessage::Bye, Some(_)) => {
                out.flush()?;
                return Ok(());
            }
            (ClientMessage::Frame(wire), Some(s)) => {
                if let Some(last) = s.last_t {
                    if !(wire.t > last) {
                        return fail(
                            &mut out,
                            "non_monotonic",
                            format!("timestamp {} not after {last}", wire.t),
                        );
                    }
                    if wire.t - last < 0.5 / s.rate_hz {
                        // dropped; the session continues
                        fail(
                            &mut out,
                            "rate_exceeded",
                            format!("frame at {} arrived faster than twice the declared rate", wire.t),
                        )?;
                        continue;
                    }
                }
                let frame = match wire.to_frame() {
                    Ok(f) => f,
                    Err(e) => return fail(&mut out, "invalid_frame", e.to_string()),
                };
                s.last_t = Some(frame.t);
                let events = match s.detector.push_frame(frame) {
                    Ok(ev) => ev,
                    Err(e) => return fail(&mut out, "invalid_frame", e.to_string()),
                };
                for e in events {
                    send(&mut out, &ServerMessage::Detection(e))?;
                }
                out.flush()?;
                if shared.cfg.record_latency {
                    shared.latencies.lock().unwrap().push(received.elapsed());
                }
            }
        }
    }
}

fn open_session(
    shared: &Shared,
    rate_hz: f64,
    requested: Option<Vec<ModelProfile>>,
) -> Result<Session, (&'static str, String)> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(("bad_hello", format!("invalid rate_hz {rate_hz}")));
    }
    let loaded = &shared.cfg.models;
    let models: Vec<Arc<LstmModel>> = match requested {
        None => loaded.clone(),
        Some(req) => {
            if let Some(p) = req.iter().find(|p| !loaded.iter().any(|m| m.profile == **p)) {
                return Err(("unknown_model", format!("model {p} is not loaded")));
            }
            loaded.iter().filter(|m| req.contains(&m.profile)).cloned().collect()
        }
    };
    if models.is_empty() {
        return Err(("unknown_model", "no models requested".to_string()));
    }
    let cfg = DetectorConfig {
        rate_hz,
        ..shared.cfg.detector
    };
    let detector = Detector::new(models, cfg).map_err(|e| ("bad_hello", e.to_string()))?;
    Ok(Session {
        detector,
        rate_hz,
        last_t: None,
    })
}

/// Streams `frames` to a running service and collects the detections it sends back.
pub fn replay(
    addr: impl ToSocketAddrs,
    session_id: &str,
    rate_hz: f64,
    models: Option<&[ModelProfile]>,
    frames: &[Frame],
) -> sickwatch::Result<Vec<DetectionEvent>> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    // read concurrently so neither side blocks on a full socket buffer
    let collector = thread::spawn(move || -> io::Result<Vec<ServerMessage>> {
        let mut msgs = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            msgs.push(serde_json::from_str(&line)?);
        }
        Ok(msgs)
    });

    let mut out = BufWriter::new(stream.try_clone()?);
    #[derive(Serialize)]
    struct Hello<'a> {
        #[serde(rename = "type")]
        kind: &'static str,
        session_id: &'a str,
        rate_hz: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        models: Option<&'a [ModelProfile]>,
    }
    #[derive(Serialize)]
    struct Tagged<'a> {
        #[serde(rename = "type")]
        kind: &'static str,
        #[serde(flatten)]
        frame: &'a WireFrame,
    }
    let hello = Hello {
        kind: "hello",
        session_id,
        rate_hz,
        models,
    };
    let mut write = || -> io::Result<()> {
        serde_json::to_writer(&mut out, &hello)?;
        out.write_all(b"\n")?;
        for f in frames {
            serde_json::to_writer(
                &mut out,
                &Tagged {
                    kind: "frame",
                    frame: &WireFrame::from_frame(f),
                },
            )?;
            out.write_all(b"\n")?;
        }
        out.write_all(b"{\"type\":\"bye\"}\n")?;
        out.flush()
    };
    // a server that closes early surfaces as an error message below
    let sent = write();
    let _ = stream.shutdown(std::net::Shutdown::Write);
    let msgs = collector
        .join()
        .map_err(|_| sickwatch::Error::InvalidArgument("reader thread panicked".into()))??;

    let mut events = Vec::new();
    let mut acked = false;
    for m in msgs {
        match m {
            ServerMessage::Ack { .. } => acked = true,
            ServerMessage::Detection(e) => events.push(e),
            ServerMessage::Error { code, message } => {
                return Err(sickwatch::Error::InvalidArgument(format!(
                    "server error {code}: {message}"
                )));
            }
        }
    }
    sent?;
    if !acked {
        return Err(sickwatch::Error::InvalidArgument(
            "server did not acknowledge hello".into(),
        ));
    }
    Ok(events)
}

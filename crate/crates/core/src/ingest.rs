//! Session recordings: newline-delimited JSON parsing, writing, and
//! resampling of the eye and character streams onto a common clock.
//!
//! Record types, one JSON object per line, header first:
//!
//! ```text
//! {"type":"header","session_id":..,"game":..,"perspective":"1PP"|"3PP","eye_rate_hz":..,"char_rate_hz":..}
//! {"type":"eye","t":..,"gaze_l":[x,y,z],"gaze_r":[..],"gaze_c":[..],"open_l":..,"open_r":..,"pupil_l":..,"pupil_r":..}
//! {"type":"char","t":..,"pos":[x,y,z],"quat":[w,x,y,z]}
//! {"type":"frame", ..eye and char fields merged..}
//! {"type":"pause_start","t":..} / {"type":"pause_end","t":..}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::telemetry::{
    lerp3, renormalize, CharacterSample, EyeSample, Frame, Interval, Perspective, Quat, Session, Vec3,
};

/// Default resampling rate.
pub const DEFAULT_RATE_HZ: f64 = 60.0;
/// Source-stream dropouts longer than this mark the frames inside them as gaps.
pub const GAP_THRESHOLD_S: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub session_id: String,
    pub game: String,
    pub perspective: Perspective,
    pub eye_rate_hz: f64,
    pub char_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub header: Header,
    pub eye: Vec<EyeSample>,
    pub char: Vec<CharacterSample>,
    pub pauses: Vec<Interval>,
    /// Records with an unrecognised `type`.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EyeRecord {
    t: f64,
    gaze_l: Vec3,
    gaze_r: Vec3,
    gaze_c: Vec3,
    open_l: f64,
    open_r: f64,
    pupil_l: f64,
    pupil_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CharRecord {
    t: f64,
    pos: Vec3,
    quat: [f64; 4],
}

#[derive(Debug, Clone, Deserialize)]
struct TimeRecord {
    t: f64,
}

/// Merged eye + character sample, as used by `frame` records and the wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
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
}

impl FrameRecord {
    pub fn from_frame(f: &Frame) -> Self {
        FrameRecord {
            t: f.t,
            gaze_l: f.eye.gaze_l,
            gaze_r: f.eye.gaze_r,
            gaze_c: f.eye.gaze_c,
            open_l: f.eye.open_l,
            open_r: f.eye.open_r,
            pupil_l: f.eye.pupil_l,
            pupil_r: f.eye.pupil_r,
            pos: f.char.pos,
            quat: f.char.quat.to_array(),
        }
    }

    pub fn to_frame(&self) -> Result<Frame> {
        let eye = self.eye_record().into_sample()?;
        let ch = self.char_record().into_sample()?;
        Ok(Frame::new(self.t, eye, ch))
    }

    fn eye_record(&self) -> EyeRecord {
        EyeRecord {
            t: self.t,
            gaze_l: self.gaze_l,
            gaze_r: self.gaze_r,
            gaze_c: self.gaze_c,
            open_l: self.open_l,
            open_r: self.open_r,
            pupil_l: self.pupil_l,
            pupil_r: self.pupil_r,
        }
    }

    fn char_record(&self) -> CharRecord {
        CharRecord {
            t: self.t,
            pos: self.pos,
            quat: self.quat,
        }
    }
}

impl EyeRecord {
    fn check_fields(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [("open_l", self.open_l), ("open_r", self.open_r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err((name, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn into_sample(self) -> Result<EyeSample> {
        if let Err((field, message)) = self.check_fields() {
            return Err(Error::InvalidSample(format!("{field}: {message}")));
        }
        EyeSample::new(
            self.t,
            self.gaze_l,
            self.gaze_r,
            self.gaze_c,
            self.open_l,
            self.open_r,
            self.pupil_l,
            self.pupil_r,
        )
    }
}

impl CharRecord {
    fn into_sample(self) -> Result<CharacterSample> {
        CharacterSample::new(self.t, self.pos, Quat::from_array(self.quat))
    }
}

fn typed<T: for<'de> Deserialize<'de>>(value: Value, line: usize) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

fn eye_sample(rec: EyeRecord, line: usize) -> Result<EyeSample> {
    if let Err((field, message)) = rec.check_fields() {
        return Err(Error::Field {
            line,
            field: field.into(),
            message,
        });
    }
    rec.into_sample().map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

fn char_sample(rec: CharRecord, line: usize) -> Result<CharacterSample> {
    rec.into_sample().map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

fn push_increasing<T>(buf: &mut Vec<T>, item: T, t: f64, last: impl Fn(&T) -> f64, line: usize) -> Result<()> {
    if let Some(prev) = buf.last() {
        if !(t > last(prev)) {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {t} not after {}", last(prev)),
            });
        }
    }
    buf.push(item);
    Ok(())
}

/// Parses a recording. Line numbers in errors are 1-based.
pub fn parse_session<R: Read>(input: R) -> Result<RawRecording> {
    let reader = BufReader::new(input);
    let mut header: Option<Header> = None;
    let mut eye = Vec::new();
    let mut char = Vec::new();
    let mut pauses = Vec::new();
    let mut open_pause: Option<f64> = None;
    let mut skipped = 0;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let kind = value
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse {
                line: lineno,
                message: "missing field `type`".into(),
            })?
            .to_owned();

        if header.is_none() {
            if kind != "header" {
                return Err(Error::MissingHeader);
            }
            let h: Header = typed(value, lineno)?;
            for (name, v) in [("eye_rate_hz", h.eye_rate_hz), ("char_rate_hz", h.char_rate_hz)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Field {
                        line: lineno,
                        field: name.into(),
                        message: "must be positive".into(),
                    });
                }
            }
            header = Some(h);
            continue;
        }

        match kind.as_str() {
            "header" => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "duplicate header".into(),
                })
            }
            "eye" => {
                let s = eye_sample(typed(value, lineno)?, lineno)?;
                push_increasing(&mut eye, s, s.t, |e| e.t, lineno)?;
            }
            "char" => {
                let s = char_sample(typed(value, lineno)?, lineno)?;
                push_increasing(&mut char, s, s.t, |c| c.t, lineno)?;
            }
            "frame" => {
                let rec: FrameRecord = typed(value, lineno)?;
                let e = eye_sample(rec.eye_record(), lineno)?;
                let c = char_sample(rec.char_record(), lineno)?;
                push_increasing(&mut eye, e, e.t, |e| e.t, lineno)?;
                push_increasing(&mut char, c, c.t, |c| c.t, lineno)?;
            }
            "pause_start" => {
                let r: TimeRecord = typed(value, lineno)?;
                if open_pause.is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "pause_start while a pause is already open".into(),
                    });
                }
                if let Some(prev) = pauses.last().map(|p: &Interval| p.end) {
                    if r.t < prev {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "pause_start before the previous pause ended".into(),
                        });
                    }
                }
                open_pause = Some(r.t);
            }
            "pause_end" => {
                let r: TimeRecord = typed(value, lineno)?;
                let start = open_pause.take().ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: "pause_end without pause_start".into(),
                })?;
                if !(r.t > start) {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "pause_end not after pause_start".into(),
                    });
                }
                pauses.push(Interval::new(start, r.t));
            }
            _ => skipped += 1,
        }
    }

    let header = header.ok_or(Error::MissingHeader)?;
    if open_pause.is_some() {
        return Err(Error::Parse {
            line: 0,
            message: "unterminated pause_start at end of input".into(),
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} records of unknown type");
    }
    Ok(RawRecording {
        header,
        eye,
        char,
        pauses,
        skipped,
    })
}

/// Index `j` such that `times[j] <= t < times[j + 1]`, advancing from `from`.
fn bracket(times: impl Fn(usize) -> f64, len: usize, from: usize, t: f64) -> usize {
    let mut j = from;
    while j + 1 < len && times(j + 1) <= t {
        j += 1;
    }
    j
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + w * (b - a)
}

/// Resamples both streams onto `t0 + k / target_rate_hz` over their common span.
pub fn align_streams(r: &RawRecording, target_rate_hz: f64) -> Result<Session> {
    if !(target_rate_hz > 0.0 && target_rate_hz.is_finite()) {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if r.eye.len() < 2 || r.char.len() < 2 {
        return Err(Error::InvalidArgument("each stream needs at least two samples".into()));
    }
    let t0 = r.eye[0].t.max(r.char[0].t);
    let t_end = r.eye[r.eye.len() - 1].t.min(r.char[r.char.len() - 1].t);
    if t_end < t0 {
        return Err(Error::NoOverlap);
    }
    let count = ((t_end - t0) * target_rate_hz + 1e-9).floor() as usize + 1;

    let mut frames = Vec::with_capacity(count);
    let (mut je, mut jc) = (0usize, 0usize);
    for k in 0..count {
        let t = (t0 + k as f64 / target_rate_hz).min(t_end);
        je = bracket(|i| r.eye[i].t, r.eye.len(), je, t);
        jc = bracket(|i| r.char[i].t, r.char.len(), jc, t);
        let (eye, eye_gap) = interp_eye(&r.eye, je, t);
        let (ch, char_gap) = interp_char(&r.char, jc, t);
        let mut frame = Frame::new(t, eye, ch);
        frame.gap = eye_gap || char_gap;
        frames.push(frame);
    }

    let last_t = frames.last().map(|f| f.t).unwrap_or(t0);
    let pauses = r
        .pauses
        .iter()
        .filter_map(|p| {
            let s = p.start.max(t0);
            let e = p.end.min(last_t);
            (e > s).then(|| Interval::new(s, e))
        })
        .collect();

    Ok(Session {
        session_id: r.header.session_id.clone(),
        game: r.header.game.clone(),
        perspective: r.header.perspective,
        rate_hz: target_rate_hz,
        frames,
        pauses,
    })
}

fn interp_eye(s: &[EyeSample], j: usize, t: f64) -> (EyeSample, bool) {
    let a = &s[j];
    if j + 1 == s.len() || t == a.t {
        let gap = j + 1 < s.len() && s[j + 1].t - a.t > GAP_THRESHOLD_S;
        return (*a, gap);
    }
    let b = &s[j + 1];
    let w = (t - a.t) / (b.t - a.t);
    let gaze = |u: &Vec3, v: &Vec3| renormalize(lerp3(u, v, w)).unwrap_or(*u);
    let out = EyeSample {
        t,
        gaze_l: gaze(&a.gaze_l, &b.gaze_l),
        gaze_r: gaze(&a.gaze_r, &b.gaze_r),
        gaze_c: gaze(&a.gaze_c, &b.gaze_c),
        open_l: lerp(a.open_l, b.open_l, w),
        open_r: lerp(a.open_r, b.open_r, w),
        pupil_l: lerp(a.pupil_l, b.pupil_l, w),
        pupil_r: lerp(a.pupil_r, b.pupil_r, w),
    };
    (out, b.t - a.t > GAP_THRESHOLD_S)
}

fn interp_char(s: &[CharacterSample], j: usize, t: f64) -> (CharacterSample, bool) {
    let a = &s[j];
    if j + 1 == s.len() || t == a.t {
        let gap = j + 1 < s.len() && s[j + 1].t - a.t > GAP_THRESHOLD_S;
        return (*a, gap);
    }
    let b = &s[j + 1];
    let w = (t - a.t) / (b.t - a.t);
    let out = CharacterSample {
        t,
        pos: lerp3(&a.pos, &b.pos, w),
        quat: a.quat.nlerp(&b.quat, w),
    };
    (out, b.t - a.t > GAP_THRESHOLD_S)
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    header: &'a Header,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct TimeOut {
    t: f64,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, kind: &'static str, body: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, &Tagged { kind, body }).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes a session as separate `eye` and `char` records at each frame time.
pub fn write_session<W: Write>(session: &Session, mut w: W) -> Result<()> {
    let header = Header {
        session_id: session.session_id.clone(),
        game: session.game.clone(),
        perspective: session.perspective,
        eye_rate_hz: session.rate_hz,
        char_rate_hz: session.rate_hz,
    };
    serde_json::to_writer(
        &mut w,
        &HeaderOut {
            kind: "header",
            header: &header,
        },
    )
    .map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;

    // (time, is_start) pause markers, emitted just before the first frame at or after them
    let mut marks: Vec<(f64, bool)> = session
        .pauses
        .iter()
        .flat_map(|p| [(p.start, true), (p.end, false)])
        .collect();
    marks.reverse();

    for f in &session.frames {
        while let Some(&(mt, start)) = marks.last() {
            if mt > f.t {
                break;
            }
            write_line(
                &mut w,
                if start { "pause_start" } else { "pause_end" },
                &TimeOut { t: mt },
            )?;
            marks.pop();
        }
        let rec = FrameRecord::from_frame(f);
        write_line(&mut w, "eye", &rec.eye_record())?;
        write_line(&mut w, "char", &rec.char_record())?;
    }
    while let Some((mt, start)) = marks.pop() {
        write_line(
            &mut w,
            if start { "pause_start" } else { "pause_end" },
            &TimeOut { t: mt },
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_session(session: &Session, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_session(session, BufWriter::new(file))
}

/// Reads and aligns a recording file.
pub fn load_session(path: impl AsRef<Path>, target_rate_hz: f64) -> Result<Session> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_session(file)?;
    align_streams(&raw, target_rate_hz)
}

//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Accepted norm range for vectors that are normalized on construction.
const NEAR_UNIT: std::ops::RangeInclusive<f64> = 0.99..=1.01;
/// Vectors already this close to unit length are stored untouched, which
/// keeps normalization idempotent down to the last bit.
const UNIT_EXACT: f64 = 1e-12;
/// Tolerance used when checking the unit-norm invariant.
pub const UNIT_TOLERANCE: f64 = 1e-6;

pub fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn lerp3(a: &Vec3, b: &Vec3, w: f64) -> Vec3 {
    [
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ]
}

/// Rescales `v` to unit length unless it already is (within 1e-12).
/// Returns `None` for zero or non-finite vectors.
pub fn renormalize(v: Vec3) -> Option<Vec3> {
    let n = norm(&v);
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    if (n - 1.0).abs() <= UNIT_EXACT {
        Some(v)
    } else {
        Some([v[0] / n, v[1] / n, v[2] / n])
    }
}

fn near_unit(v: Vec3, what: &str) -> Result<Vec3> {
    let n = norm(&v);
    if !NEAR_UNIT.contains(&n) {
        return Err(Error::InvalidSample(format!(
            "{what} has norm {n}, expected a unit vector"
        )));
    }
    Ok(renormalize(v).expect("norm checked above"))
}

/// Unit quaternion in (w, x, y, z) order with the Hamilton product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conj(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Same pass-through rule as [`renormalize`].
    pub fn renormalize(self) -> Option<Quat> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        if (n - 1.0).abs() <= UNIT_EXACT {
            Some(self)
        } else {
            Some(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
        }
    }

    /// Normalized linear interpolation along the shorter arc.
    pub fn nlerp(&self, other: &Quat, w: f64) -> Quat {
        let b = if self.dot(other) < 0.0 { other.neg() } else { *other };
        let q = Quat::new(
            self.w + w * (b.w - self.w),
            self.x + w * (b.x - self.x),
            self.y + w * (b.y - self.y),
            self.z + w * (b.z - self.z),
        );
        q.renormalize().unwrap_or(*self)
    }

    /// Rotation vector (axis times angle, radians) of a unit quaternion,
    /// taking the shorter of the two equivalent rotations.
    pub fn log_vec(&self) -> Vec3 {
        let q = if self.w < 0.0 { self.neg() } else { *self };
        let v = [q.x, q.y, q.z];
        let s = norm(&v);
        if s < 1e-12 {
            return [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]];
        }
        let angle = 2.0 * s.atan2(q.w);
        let k = angle / s;
        [v[0] * k, v[1] * k, v[2] * k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeSample {
    pub t: f64,
    pub gaze_l: Vec3,
    pub gaze_r: Vec3,
    pub gaze_c: Vec3,
    pub open_l: f64,
    pub open_r: f64,
    /// Pupil diameter in millimetres; values `<= 0` mark an invalid reading.
    pub pupil_l: f64,
    pub pupil_r: f64,
}

impl EyeSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: f64,
        gaze_l: Vec3,
        gaze_r: Vec3,
        gaze_c: Vec3,
        open_l: f64,
        open_r: f64,
        pupil_l: f64,
        pupil_r: f64,
    ) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::InvalidSample(format!("timestamp {t} is not finite")));
        }
        for (name, v) in [("open_l", open_l), ("open_r", open_r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidSample(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [("pupil_l", pupil_l), ("pupil_r", pupil_r)] {
            if !v.is_finite() {
                return Err(Error::InvalidSample(format!("{name} is not finite")));
            }
        }
        Ok(EyeSample {
            t,
            gaze_l: near_unit(gaze_l, "gaze_l")?,
            gaze_r: near_unit(gaze_r, "gaze_r")?,
            gaze_c: near_unit(gaze_c, "gaze_c")?,
            open_l,
            open_r,
            pupil_l,
            pupil_r,
        })
    }

    pub fn pupil_valid(&self) -> (bool, bool) {
        (self.pupil_l > 0.0, self.pupil_r > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterSample {
    pub t: f64,
    pub pos: Vec3,
    pub quat: Quat,
}

impl CharacterSample {
    pub fn new(t: f64, pos: Vec3, quat: Quat) -> Result<Self> {
        if !t.is_finite() || pos.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite character sample".into()));
        }
        let n = quat.norm();
        if !NEAR_UNIT.contains(&n) {
            return Err(Error::InvalidSample(format!(
                "quat has norm {n}, expected a unit quaternion"
            )));
        }
        Ok(CharacterSample {
            t,
            pos,
            quat: quat.renormalize().expect("norm checked above"),
        })
    }
}

/// Eye and character samples resampled to a common timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub eye: EyeSample,
    pub char: CharacterSample,
    /// Set by alignment when either source stream has a dropout around `t`.
    #[serde(default)]
    pub gap: bool,
}

impl Frame {
    pub fn new(t: f64, mut eye: EyeSample, mut char: CharacterSample) -> Self {
        eye.t = t;
        char.t = t;
        Frame {
            t,
            eye,
            char,
            gap: false,
        }
    }

    /// True when either eye's openness is below `threshold`.
    pub fn eye_closed(&self, threshold: f64) -> bool {
        self.eye.open_l < threshold || self.eye.open_r < threshold
    }
}

/// Number of kinematic features per frame.
pub const FEATURE_DIM: usize = 5;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["a_eye_l", "a_eye_r", "a_char", "v_char", "alpha_char"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub t: f64,
    /// Gaze-direction acceleration magnitudes, 1/s².
    pub a_eye_l: f64,
    pub a_eye_r: f64,
    /// Character speed, m/s.
    pub v_char: f64,
    /// Character acceleration magnitude, m/s².
    pub a_char: f64,
    /// Character angular acceleration magnitude, rad/s².
    pub alpha_char: f64,
    pub valid: bool,
}

impl FeatureFrame {
    pub fn from_values(t: f64, v: [f64; FEATURE_DIM], valid: bool) -> Self {
        FeatureFrame {
            t,
            a_eye_l: v[0],
            a_eye_r: v[1],
            a_char: v[2],
            v_char: v[3],
            alpha_char: v[4],
            valid,
        }
    }

    /// Feature vector in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; FEATURE_DIM] {
        [self.a_eye_l, self.a_eye_r, self.a_char, self.v_char, self.alpha_char]
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Perspective {
    #[serde(rename = "1PP")]
    FirstPerson,
    #[serde(rename = "3PP")]
    ThirdPerson,
}

impl Perspective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Perspective::FirstPerson => "1PP",
            Perspective::ThirdPerson => "3PP",
        }
    }
}

impl std::str::FromStr for Perspective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "1PP" => Ok(Perspective::FirstPerson),
            "3PP" => Ok(Perspective::ThirdPerson),
            _ => Err(Error::InvalidArgument(format!("unknown perspective `{s}`"))),
        }
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub game: String,
    pub perspective: Perspective,
    pub rate_hz: f64,
    pub frames: Vec<Frame>,
    pub pauses: Vec<Interval>,
}

impl Session {
    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Per-frame event ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EventLabel {
    Normal = 0,
    PreSs = 1,
    Paused = 2,
}

impl EventLabel {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(EventLabel::Normal),
            1 => Some(EventLabel::PreSs),
            2 => Some(EventLabel::Paused),
            _ => None,
        }
    }
}

/// Which of the two detection models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelProfile {
    /// Post-onset model: normal play versus the paused state.
    A,
    /// Pre-onset model: normal play versus the pre-sickness lead-up.
    B,
}

impl ModelProfile {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelProfile::A => "A",
            ModelProfile::B => "B",
        }
    }

    /// The event label this profile treats as its positive class.
    pub fn positive_label(&self) -> EventLabel {
        match self {
            ModelProfile::A => EventLabel::Paused,
            ModelProfile::B => EventLabel::PreSs,
        }
    }

    pub fn event(&self) -> SsEvent {
        match self {
            ModelProfile::A => SsEvent::PostSs,
            ModelProfile::B => SsEvent::PreSs,
        }
    }

    pub fn class_names(&self) -> [&'static str; 2] {
        match self {
            ModelProfile::A => ["normal", "post_ss"],
            ModelProfile::B => ["normal", "pre_ss"],
        }
    }
}

impl std::str::FromStr for ModelProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ModelProfile::A),
            "B" | "b" => Ok(ModelProfile::B),
            _ => Err(Error::InvalidArgument(format!("unknown model profile `{s}`"))),
        }
    }
}

impl fmt::Display for ModelProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsEvent {
    PreSs,
    PostSs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Raised,
    Cleared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub model: ModelProfile,
    pub kind: EventKind,
    pub event: SsEvent,
    pub t: f64,
    pub confidence: f64,
}

/// One broken invariant found by [`validate_session`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveRate,
    NonMonotonicTime { frame: usize },
    MisalignedTimestamps { frame: usize },
    NonUnitGaze { frame: usize, eye: &'static str },
    OpennessOutOfRange { frame: usize },
    NonFinitePupil { frame: usize },
    NonFinitePosition { frame: usize },
    NonUnitQuaternion { frame: usize },
    EmptyPause { pause: usize },
    UnsortedPauses { pause: usize },
    OverlappingPauses { pause: usize },
    PauseOutOfRange { pause: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NonPositiveRate => write!(f, "rate_hz must be positive"),
            NonMonotonicTime { frame } => write!(f, "frame {frame}: timestamps not strictly increasing"),
            MisalignedTimestamps { frame } => write!(f, "frame {frame}: eye/char timestamps differ from frame time"),
            NonUnitGaze { frame, eye } => write!(f, "frame {frame}: non-unit gaze ({eye})"),
            OpennessOutOfRange { frame } => write!(f, "frame {frame}: openness outside [0, 1]"),
            NonFinitePupil { frame } => write!(f, "frame {frame}: non-finite pupil diameter"),
            NonFinitePosition { frame } => write!(f, "frame {frame}: non-finite character position"),
            NonUnitQuaternion { frame } => write!(f, "frame {frame}: non-unit quaternion"),
            EmptyPause { pause } => write!(f, "pause {pause}: end not after start"),
            UnsortedPauses { pause } => write!(f, "pause {pause}: pauses not sorted"),
            OverlappingPauses { pause } => write!(f, "pause {pause}: overlapping pauses"),
            PauseOutOfRange { pause } => write!(f, "pause {pause}: outside the session time span"),
        }
    }
}

fn is_unit(v: &Vec3) -> bool {
    (norm(v) - 1.0).abs() <= UNIT_TOLERANCE
}

/// Checks every type invariant of a session; an empty list means it is well formed.
pub fn validate_session(s: &Session) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(s.rate_hz > 0.0 && s.rate_hz.is_finite()) {
        out.push(Violation::NonPositiveRate);
    }
    for (i, fr) in s.frames.iter().enumerate() {
        if i > 0 && !(fr.t > s.frames[i - 1].t) {
            out.push(Violation::NonMonotonicTime { frame: i });
        }
        if fr.eye.t != fr.t || fr.char.t != fr.t {
            out.push(Violation::MisalignedTimestamps { frame: i });
        }
        for (eye, g) in [
            ("left", &fr.eye.gaze_l),
            ("right", &fr.eye.gaze_r),
            ("combined", &fr.eye.gaze_c),
        ] {
            if !is_unit(g) {
                out.push(Violation::NonUnitGaze { frame: i, eye });
            }
        }
        if !(0.0..=1.0).contains(&fr.eye.open_l) || !(0.0..=1.0).contains(&fr.eye.open_r) {
            out.push(Violation::OpennessOutOfRange { frame: i });
        }
        if !fr.eye.pupil_l.is_finite() || !fr.eye.pupil_r.is_finite() {
            out.push(Violation::NonFinitePupil { frame: i });
        }
        if fr.char.pos.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinitePosition { frame: i });
        }
        if (fr.char.quat.norm() - 1.0).abs() > UNIT_TOLERANCE {
            out.push(Violation::NonUnitQuaternion { frame: i });
        }
    }
    let span = match (s.frames.first(), s.frames.last()) {
        (Some(a), Some(b)) => Some((a.t, b.t)),
        _ => None,
    };
    for (i, p) in s.pauses.iter().enumerate() {
        if !(p.end > p.start) {
            out.push(Violation::EmptyPause { pause: i });
        }
        if i > 0 {
            let prev = &s.pauses[i - 1];
            if p.start < prev.start {
                out.push(Violation::UnsortedPauses { pause: i });
            } else if p.start < prev.end {
                out.push(Violation::OverlappingPauses { pause: i });
            }
        }
        match span {
            Some((lo, hi)) if p.start >= lo && p.end <= hi => {}
            _ => out.push(Violation::PauseOutOfRange { pause: i }),
        }
    }
    out
}

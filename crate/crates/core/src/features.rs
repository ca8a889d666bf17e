//! Kinematic features, blink detection, normalization and windowing.
//!
//! Every frame yields five magnitudes: the acceleration of each eye's gaze
//! direction, the character's acceleration and speed, and the character's
//! angular acceleration. Derivatives are central differences, so a frame's
//! features need its successor; the first and last frames copy their
//! interior neighbour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{norm, sub, FeatureFrame, Frame, Vec3, FEATURE_DIM};

pub type FeatureVec = [f64; FEATURE_DIM];

/// Floor applied to standard deviations when normalizing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Openness below this counts as closed.
    pub openness_threshold: f64,
    /// Minimum closure length reported as a blink, seconds.
    pub min_blink_s: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            openness_threshold: 0.15,
            min_blink_s: 0.3,
        }
    }
}

#[inline]
fn second_diff<const N: usize>(prev: &[f64; N], cur: &[f64; N], next: &[f64; N], dt: f64) -> [f64; N] {
    std::array::from_fn(|i| (next[i] - 2.0 * cur[i] + prev[i]) / (dt * dt))
}

/// `(x[t+1] - 2 x[t] + x[t-1]) / dt²` at interior points; the two endpoints
/// copy their nearest interior value.
pub fn second_central_difference<const N: usize>(series: &[[f64; N]], dt: f64) -> Result<Vec<[f64; N]>> {
    if series.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "second difference needs at least 3 samples, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    out.push([0.0; N]);
    for w in series.windows(3) {
        out.push(second_diff(&w[0], &w[1], &w[2], dt));
    }
    out.push(out[out.len() - 1]);
    out[0] = out[1];
    Ok(out)
}

fn angular_velocity(a: &Frame, b: &Frame, rate_hz: f64) -> Vec3 {
    let rel = a.char.quat.conj().mul(&b.char.quat);
    let r = rel.log_vec();
    [r[0] * rate_hz, r[1] * rate_hz, r[2] * rate_hz]
}

/// The five raw features of `cur` from its two neighbours.
pub(crate) fn kinematics(prev: &Frame, cur: &Frame, next: &Frame, rate_hz: f64) -> FeatureVec {
    let dt = 1.0 / rate_hz;
    let a_eye_l = norm(&second_diff(&prev.eye.gaze_l, &cur.eye.gaze_l, &next.eye.gaze_l, dt));
    let a_eye_r = norm(&second_diff(&prev.eye.gaze_r, &cur.eye.gaze_r, &next.eye.gaze_r, dt));
    let a_char = norm(&second_diff(&prev.char.pos, &cur.char.pos, &next.char.pos, dt));
    let d = sub(&next.char.pos, &prev.char.pos);
    let v_char = norm(&d) / (2.0 * dt);
    let w_before = angular_velocity(prev, cur, rate_hz);
    let w_after = angular_velocity(cur, next, rate_hz);
    let alpha_char = norm(&sub(&w_after, &w_before)) * rate_hz;
    [a_eye_l, a_eye_r, a_char, v_char, alpha_char]
}

pub(crate) fn raw_valid(prev: &Frame, cur: &Frame, next: &Frame, cfg: &FeatureConfig) -> bool {
    [prev, cur, next]
        .iter()
        .all(|f| !f.gap && !f.eye_closed(cfg.openness_threshold))
}

/// Zero-order hold: invalid frames repeat the last valid feature vector.
#[derive(Debug, Clone, Default)]
pub(crate) struct Hold {
    last: Option<FeatureVec>,
}

impl Hold {
    pub(crate) fn apply(&mut self, t: f64, values: FeatureVec, valid: bool) -> FeatureFrame {
        let values = if valid {
            self.last = Some(values);
            values
        } else {
            self.last.unwrap_or(values)
        };
        FeatureFrame::from_values(t, values, valid)
    }
}

/// Features for every frame. Frames near a closed eye or an alignment gap
/// are marked invalid and hold the previous valid values.
pub fn extract_features(frames: &[Frame], rate_hz: f64, cfg: &FeatureConfig) -> Result<Vec<FeatureFrame>> {
    let n = frames.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "feature extraction needs at least 3 frames, got {n}"
        )));
    }
    if !(rate_hz > 0.0) {
        return Err(Error::InvalidArgument("rate must be positive".into()));
    }
    let mut raw: Vec<(FeatureVec, bool)> = Vec::with_capacity(n);
    raw.push(([0.0; FEATURE_DIM], false));
    for w in frames.windows(3) {
        raw.push((
            kinematics(&w[0], &w[1], &w[2], rate_hz),
            raw_valid(&w[0], &w[1], &w[2], cfg),
        ));
    }
    raw.push(raw[n - 2]);
    raw[0] = raw[1];

    let mut hold = Hold::default();
    Ok(frames
        .iter()
        .zip(raw)
        .map(|(f, (v, ok))| hold.apply(f.t, v, ok))
        .collect())
}

/// Incremental form of [`extract_features`]: a frame's features are emitted
/// once its successor has arrived.
#[derive(Debug, Clone)]
pub struct StreamingFeatures {
    rate_hz: f64,
    cfg: FeatureConfig,
    recent: [Option<Frame>; 3],
    seen: usize,
    hold: Hold,
}

impl StreamingFeatures {
    pub fn new(rate_hz: f64, cfg: FeatureConfig) -> Self {
        StreamingFeatures {
            rate_hz,
            cfg,
            recent: [None, None, None],
            seen: 0,
            hold: Hold::default(),
        }
    }

    pub fn reset(&mut self) {
        *self = StreamingFeatures::new(self.rate_hz, self.cfg);
    }

    /// Most recently pushed frame.
    pub fn last_frame(&self) -> Option<&Frame> {
        self.recent[2].as_ref()
    }

    /// Pushes a frame and returns the feature frames finalized by it, in order.
    pub fn push(&mut self, frame: Frame) -> Vec<(FeatureFrame, Frame)> {
        self.recent.rotate_left(1);
        self.recent[2] = Some(frame);
        self.seen += 1;
        if self.seen < 3 {
            return Vec::new();
        }
        let [a, b, c] = &self.recent;
        let (a, b, c) = (a.as_ref().unwrap(), b.as_ref().unwrap(), c.as_ref().unwrap());
        let values = kinematics(a, b, c, self.rate_hz);
        let valid = raw_valid(a, b, c, &self.cfg);
        let (a, b) = (*a, *b);
        let mut out = Vec::with_capacity(2);
        if self.seen == 3 {
            out.push((self.hold.apply(a.t, values, valid), a));
        }
        out.push((self.hold.apply(b.t, values, valid), b));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlinkEye {
    Left,
    Right,
    Both,
}

/// Closure interval, `[start, end)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlinkInterval {
    pub start: f64,
    pub end: f64,
    pub eye: BlinkEye,
}

impl BlinkInterval {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    fn overlaps(&self, o: &BlinkInterval) -> bool {
        self.start < o.end && o.start < self.end
    }
}

fn closed_runs(
    frames: &[Frame],
    dt: f64,
    threshold: f64,
    min_s: f64,
    open: impl Fn(&Frame) -> f64,
    eye: BlinkEye,
) -> Vec<BlinkInterval> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        if open(&frames[i]) >= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < frames.len() && open(&frames[i]) < threshold {
            i += 1;
        }
        let len = i - start;
        if len as f64 * dt + 1e-9 >= min_s {
            let end = if i < frames.len() {
                frames[i].t
            } else {
                frames[i - 1].t + dt
            };
            out.push(BlinkInterval {
                start: frames[start].t,
                end,
                eye,
            });
        }
    }
    out
}

/// Closures of at least `min_duration_s`. Left and right intervals that
/// overlap are merged into one `Both` interval covering their union.
pub fn detect_blinks(
    frames: &[Frame],
    rate_hz: f64,
    openness_threshold: f64,
    min_duration_s: f64,
) -> Vec<BlinkInterval> {
    let dt = 1.0 / rate_hz;
    let left = closed_runs(
        frames,
        dt,
        openness_threshold,
        min_duration_s,
        |f| f.eye.open_l,
        BlinkEye::Left,
    );
    let right = closed_runs(
        frames,
        dt,
        openness_threshold,
        min_duration_s,
        |f| f.eye.open_r,
        BlinkEye::Right,
    );

    let mut all: Vec<BlinkInterval> = left.into_iter().chain(right).collect();
    all.sort_by(|a, b| a.start.total_cmp(&b.start));

    // sweep connected components of overlapping intervals
    let mut out: Vec<BlinkInterval> = Vec::new();
    for iv in all {
        match out.last_mut() {
            Some(last) if last.overlaps(&iv) => {
                last.end = last.end.max(iv.end);
                if last.eye != iv.eye {
                    last.eye = BlinkEye::Both;
                }
            }
            _ => out.push(iv),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: FeatureVec,
    pub std: FeatureVec,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        }
    }

    #[inline]
    pub fn apply(&self, x: &FeatureVec) -> FeatureVec {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i].max(STD_FLOOR))
    }

    #[inline]
    pub fn invert(&self, y: &FeatureVec) -> FeatureVec {
        std::array::from_fn(|i| y[i] * self.std[i].max(STD_FLOOR) + self.mean[i])
    }
}

/// Per-dimension mean and population standard deviation over valid frames.
pub fn compute_norm_stats<'a>(features: impl IntoIterator<Item = &'a FeatureFrame>) -> Result<NormStats> {
    let valid: Vec<FeatureVec> = features.into_iter().filter(|f| f.valid).map(|f| f.values()).collect();
    if valid.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalization needs at least 2 valid frames, got {}",
            valid.len()
        )));
    }
    let n = valid.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for v in &valid {
        for i in 0..FEATURE_DIM {
            mean[i] += v[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURE_DIM];
    for v in &valid {
        for i in 0..FEATURE_DIM {
            let d = v[i] - mean[i];
            var[i] += d * d;
        }
    }
    Ok(NormStats {
        mean,
        std: var.map(|s| (s / n).sqrt()),
    })
}

pub fn normalize(features: &[FeatureFrame], stats: &NormStats) -> Vec<FeatureFrame> {
    features
        .iter()
        .map(|f| FeatureFrame::from_values(f.t, stats.apply(&f.values()), f.valid))
        .collect()
}

pub fn denormalize(features: &[FeatureFrame], stats: &NormStats) -> Vec<FeatureFrame> {
    features
        .iter()
        .map(|f| FeatureFrame::from_values(f.t, stats.invert(&f.values()), f.valid))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `L` consecutive feature vectors, oldest first.
    pub features: Vec<FeatureVec>,
    pub t_end: f64,
    /// Index of the last frame in the source sequence.
    pub end: usize,
    pub valid_fraction: f64,
}

/// Windows of `len` frames starting at `0, stride, 2 * stride, ...`.
pub fn make_windows(features: &[FeatureFrame], len: usize, stride: usize) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    if features.len() < len {
        return Ok(Vec::new());
    }
    Ok((0..=features.len() - len)
        .step_by(stride)
        .map(|start| {
            let slice = &features[start..start + len];
            let valid = slice.iter().filter(|f| f.valid).count();
            Window {
                features: slice.iter().map(FeatureFrame::values).collect(),
                t_end: slice[len - 1].t,
                end: start + len - 1,
                valid_fraction: valid as f64 / len as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{CharacterSample, EyeSample, Quat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(t: f64, gaze: Vec3, pos: Vec3, quat: Quat, open: (f64, f64)) -> Frame {
        let eye = EyeSample::new(t, gaze, gaze, gaze, open.0, open.1, 3.0, 3.0).unwrap();
        Frame::new(t, eye, CharacterSample::new(t, pos, quat).unwrap())
    }

    fn still(n: usize, rate: f64) -> Vec<Frame> {
        (0..n)
            .map(|k| {
                frame(
                    k as f64 / rate,
                    [0.0, 1.0, 0.0],
                    [1.0, 2.0, 0.0],
                    Quat::IDENTITY,
                    (1.0, 1.0),
                )
            })
            .collect()
    }

    #[test]
    fn second_difference_of_constant_is_zero() {
        let out = second_central_difference(&[[3.0, -1.0, 2.0]; 6], 0.1).unwrap();
        assert!(out.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn second_difference_exact_on_quadratic() {
        let dt = 0.1;
        let xs: Vec<[f64; 3]> = (0..20).map(|k| [(k as f64 * dt).powi(2), 0.0, 0.0]).collect();
        let out = second_central_difference(&xs, dt).unwrap();
        for v in &out {
            assert!((v[0] - 2.0).abs() < 1e-9, "{}", v[0]);
            assert_eq!(v[1], 0.0);
        }
    }

    #[test]
    fn second_difference_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let dt = 0.013;
        let out = second_central_difference(&xs, dt).unwrap();
        let n = xs.len();
        for t in 0..n {
            let k = t.clamp(1, n - 2);
            for d in 0..2 {
                let naive = (xs[k + 1][d] - 2.0 * xs[k][d] + xs[k - 1][d]) / (dt * dt);
                assert!((out[t][d] - naive).abs() <= 1e-12 * naive.abs().max(1.0));
            }
        }
    }

    #[test]
    fn second_difference_needs_three_samples() {
        assert!(second_central_difference(&[[0.0]; 2], 0.1).is_err());
    }

    #[test]
    fn stationary_scene_has_zero_features() {
        let f = extract_features(&still(10, 60.0), 60.0, &FeatureConfig::default()).unwrap();
        for ff in &f[1..9] {
            assert_eq!(ff.values(), [0.0; 5]);
            assert!(ff.valid);
        }
    }

    #[test]
    fn constant_velocity_motion() {
        let rate = 60.0;
        let frames: Vec<Frame> = (0..30)
            .map(|k| {
                let t = k as f64 / rate;
                frame(t, [0.0, 1.0, 0.0], [t, 0.0, 0.0], Quat::IDENTITY, (1.0, 1.0))
            })
            .collect();
        let f = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
        for ff in &f[1..29] {
            assert!((ff.v_char - 1.0).abs() < 1e-6);
            assert!(ff.a_char.abs() < 1e-6);
        }
    }

    #[test]
    fn constant_yaw_rate_has_no_angular_acceleration() {
        let rate = 60.0;
        let omega = std::f64::consts::FRAC_PI_2;
        let frames: Vec<Frame> = (0..40)
            .map(|k| {
                let t = k as f64 / rate;
                let q = Quat::from_axis_angle([0.0, 0.0, 1.0], omega * t);
                frame(t, [0.0, 1.0, 0.0], [0.0; 3], q, (1.0, 1.0))
            })
            .collect();
        // oracle: compose successive rotations explicitly and read back the step angle
        for w in frames.windows(2) {
            let step = w[0].char.quat.conj().mul(&w[1].char.quat);
            let angle = 2.0 * step.w.clamp(-1.0, 1.0).acos();
            assert!((angle * rate - omega).abs() < 1e-6);
        }
        let f = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
        for ff in &f[1..39] {
            assert!(ff.alpha_char.abs() < 1e-6, "{}", ff.alpha_char);
        }
    }

    #[test]
    fn eye_features_are_gaze_second_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rate = 60.0;
        let frames: Vec<Frame> = (0..25)
            .map(|k| {
                let g =
                    crate::telemetry::renormalize([rng.random_range(-0.05..0.05), 1.0, rng.random_range(-0.05..0.05)])
                        .unwrap();
                frame(k as f64 / rate, g, [0.0; 3], Quat::IDENTITY, (1.0, 1.0))
            })
            .collect();
        let gaze: Vec<Vec3> = frames.iter().map(|f| f.eye.gaze_l).collect();
        let acc = second_central_difference(&gaze, 1.0 / rate).unwrap();
        let f = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
        for (ff, a) in f.iter().zip(&acc) {
            assert_eq!(ff.a_eye_l, norm(a));
        }
    }

    #[test]
    fn closed_eyes_hold_the_last_valid_values() {
        let rate = 60.0;
        let frames: Vec<Frame> = (0..30)
            .map(|k| {
                let t = k as f64 / rate;
                let open = if (10..15).contains(&k) { 0.05 } else { 1.0 };
                frame(t, [0.0, 1.0, 0.0], [t * t, 0.0, 0.0], Quat::IDENTITY, (open, 1.0))
            })
            .collect();
        let f = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
        // frames 9..=15 touch a closed frame through the stencil
        for k in 9..=15 {
            assert!(!f[k].valid);
            assert_eq!(f[k].values(), f[8].values());
        }
        assert!(f[8].valid && f[16].valid);
    }

    #[test]
    fn streaming_matches_batch() {
        let rate = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<Frame> = (0..40)
            .map(|k| {
                let t = k as f64 / rate;
                let g = crate::telemetry::renormalize([rng.random_range(-0.1..0.1), 1.0, 0.0]).unwrap();
                let open = if rng.random_bool(0.1) { 0.0 } else { 1.0 };
                let q = Quat::from_axis_angle([0.0, 0.0, 1.0], rng.random_range(-1.0..1.0));
                frame(t, g, [rng.random(), rng.random(), 0.0], q, (open, 1.0))
            })
            .collect();
        let batch = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
        let mut s = StreamingFeatures::new(rate, FeatureConfig::default());
        let streamed: Vec<FeatureFrame> = frames.iter().flat_map(|f| s.push(*f)).map(|(ff, _)| ff).collect();
        assert_eq!(streamed.len(), frames.len() - 1);
        assert_eq!(&batch[..frames.len() - 1], &streamed[..]);
    }

    fn openness_frames(rate: f64, n: usize, l: impl Fn(usize) -> f64, r: impl Fn(usize) -> f64) -> Vec<Frame> {
        (0..n)
            .map(|k| frame(k as f64 / rate, [0.0, 1.0, 0.0], [0.0; 3], Quat::IDENTITY, (l(k), r(k))))
            .collect()
    }

    #[test]
    fn long_left_dip_is_a_left_blink() {
        let rate = 60.0;
        let frames = openness_frames(rate, 120, |k| if (30..54).contains(&k) { 0.02 } else { 0.9 }, |_| 0.9);
        let b = detect_blinks(&frames, rate, 0.15, 0.3);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].eye, BlinkEye::Left);
        assert!((b[0].end - b[0].start - 0.4).abs() < 1e-9);
    }

    #[test]
    fn short_dip_is_ignored() {
        let rate = 60.0;
        let frames = openness_frames(rate, 120, |k| if (30..36).contains(&k) { 0.02 } else { 0.9 }, |_| 0.9);
        assert!(detect_blinks(&frames, rate, 0.15, 0.3).is_empty());
    }

    #[test]
    fn simultaneous_dips_merge_to_both() {
        let rate = 60.0;
        let dip = |k: usize| if (30..60).contains(&k) { 0.0 } else { 1.0 };
        let frames = openness_frames(rate, 120, dip, dip);
        let b = detect_blinks(&frames, rate, 0.15, 0.3);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].eye, BlinkEye::Both);
        assert!((b[0].end - b[0].start - 0.5).abs() < 1e-9);
    }

    #[test]
    fn norm_stats_population_std() {
        let mk = |v: f64| FeatureFrame::from_values(0.0, [0.0, 0.0, 0.0, v, 0.0], true);
        let s = compute_norm_stats(&[mk(1.0), mk(3.0)]).unwrap();
        assert_eq!(s.mean[3], 2.0);
        assert_eq!(s.std[3], 1.0);
        assert_eq!(s.std[0], 0.0);
        let again = compute_norm_stats(&[mk(1.0), mk(3.0)]).unwrap();
        assert_eq!(s, again);
        let invalid = FeatureFrame {
            valid: false,
            ..mk(100.0)
        };
        assert!(compute_norm_stats(&[mk(1.0), invalid]).is_err());
    }

    #[test]
    fn normalize_guards_zero_std() {
        let stats = NormStats {
            mean: [1.0; 5],
            std: [0.0, 2.0, 1.0, 1.0, 1.0],
        };
        let at_mean = FeatureFrame::from_values(0.0, [1.0; 5], true);
        assert_eq!(normalize(&[at_mean], &stats)[0].values(), [0.0; 5]);
        let off = FeatureFrame::from_values(0.0, [6.0, 1.0, 1.0, 1.0, 1.0], false);
        let n = normalize(&[off], &stats)[0];
        assert_eq!(n.a_eye_l, 5.0 / 1e-8);
        assert!(!n.valid);
    }

    #[test]
    fn window_positions() {
        let f: Vec<FeatureFrame> = (0..10)
            .map(|k| FeatureFrame::from_values(k as f64, [k as f64; 5], k != 4))
            .collect();
        let w = make_windows(&f, 4, 3).unwrap();
        assert_eq!(w.iter().map(|w| w.end).collect::<Vec<_>>(), vec![3, 6, 9]);
        assert_eq!(w[1].valid_fraction, 0.75);
        for win in &w {
            let start = win.end + 1 - 4;
            let expected: Vec<FeatureVec> = f[start..=win.end].iter().map(|x| x.values()).collect();
            assert_eq!(win.features, expected);
            assert_eq!(win.t_end, f[win.end].t);
        }
        assert_eq!(make_windows(&f, 10, 3).unwrap().len(), 1);
        assert!(make_windows(&f, 11, 3).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(vals in prop::array::uniform5(-1e3f64..1e3),
                                mean in prop::array::uniform5(-10f64..10.0),
                                std in prop::array::uniform5(1e-6f64..100.0)) {
            let stats = NormStats { mean, std };
            let y = FeatureFrame::from_values(0.0, vals, true);
            let back = normalize(&denormalize(&[y], &stats), &stats)[0];
            for (a, b) in back.values().iter().zip(vals.iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }

        #[test]
        fn reversal_and_scaling_symmetry(seed in 0u64..500, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rate = 60.0;
            let frames: Vec<Frame> = (0..12).map(|k| {
                let g = crate::telemetry::renormalize([rng.random_range(-0.2..0.2), 1.0, rng.random_range(-0.2..0.2)]).unwrap();
                let p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0];
                frame(k as f64 / rate, g, p, Quat::IDENTITY, (1.0, 1.0))
            }).collect();
            let fwd = extract_features(&frames, rate, &FeatureConfig::default()).unwrap();
            let mut rev = frames.clone();
            rev.reverse();
            for (k, f) in rev.iter_mut().enumerate() { f.t = k as f64 / rate; f.eye.t = f.t; f.char.t = f.t; }
            let bwd = extract_features(&rev, rate, &FeatureConfig::default()).unwrap();
            let n = frames.len();
            for k in 1..n - 1 {
                let (a, b) = (fwd[k], bwd[n - 1 - k]);
                prop_assert!((a.a_eye_l - b.a_eye_l).abs() <= 1e-9 * a.a_eye_l.max(1.0));
                prop_assert!((a.a_char - b.a_char).abs() <= 1e-9 * a.a_char.max(1.0));
            }
            let scaled: Vec<Frame> = frames.iter().map(|f| {
                let mut g = *f;
                g.char.pos = f.char.pos.map(|x| x * scale);
                g
            }).collect();
            let sf = extract_features(&scaled, rate, &FeatureConfig::default()).unwrap();
            for k in 0..n {
                prop_assert!((sf[k].v_char - scale * fwd[k].v_char).abs() <= 1e-9 * fwd[k].v_char.max(1.0) * scale);
                prop_assert!((sf[k].a_char - scale * fwd[k].a_char).abs() <= 1e-9 * fwd[k].a_char.max(1.0) * scale);
                prop_assert_eq!(sf[k].a_eye_l, fwd[k].a_eye_l);
                prop_assert!(sf[k].values().iter().all(|v| v.is_finite() && *v >= 0.0));
            }
        }
    }
}

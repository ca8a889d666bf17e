//! Seeded generator of labelled gameplay sessions.
//!
//! Each sickness episode follows a fixed script: a burst of sharp character
//! turns, then a lead-up during which gaze jitter grows, then a pause with
//! the character at rest. The jitter growth is scaled per episode by a
//! random susceptibility, so weak episodes are genuinely hard to detect.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{renormalize, CharacterSample, EyeSample, Frame, Interval, Perspective, Quat, Session, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub perspective: Perspective,
    pub n_episodes: usize,
    /// Bounds on the calm stretch before each episode, seconds.
    pub spacing_min_s: f64,
    pub spacing_max_s: f64,
    /// Peak multiplier on gaze-jitter driving variance at the end of a lead-up.
    pub eye_gain: f64,
    /// Amplitude multiplier on scripted character turns.
    pub motion_intensity: f64,
    pub seed: u64,

    /// Baseline gaze-jitter driving noise, rad/sqrt(s).
    pub jitter_sigma: f64,
    /// Mean-reversion rate of the jitter process, 1/s.
    pub jitter_reversion: f64,
    /// Log-normal spread of the per-session baseline jitter level.
    pub baseline_spread: f64,
    /// Per-episode susceptibility range; scales how much of `eye_gain` is reached.
    pub susceptibility: (f64, f64),
    pub pre_ss_len_s: f64,
    /// Time from the onset of the triggering maneuver to the pause.
    pub maneuver_lead_s: f64,
    pub maneuver_len_s: f64,
    pub pause_min_s: f64,
    pub pause_max_s: f64,
    pub speed_mps: f64,
    /// Mean rate of ordinary turns, 1/s.
    pub turn_rate_hz: f64,
    /// Mean rate of spontaneous short blinks, 1/s.
    pub blink_rate_hz: f64,
    /// Extra both-eye closures, e.g. for exercising the long-blink handling.
    pub forced_blinks: Vec<Interval>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::first_person(0)
    }
}

impl SynthSpec {
    fn base(perspective: Perspective, n_episodes: usize, eye_gain: f64, seed: u64) -> Self {
        SynthSpec {
            duration_s: 180.0,
            rate_hz: 60.0,
            perspective,
            n_episodes,
            spacing_min_s: 8.0,
            spacing_max_s: 40.0,
            eye_gain,
            motion_intensity: 1.0,
            seed,
            jitter_sigma: 0.02,
            jitter_reversion: 10.0,
            baseline_spread: 0.15,
            susceptibility: (0.25, 1.0),
            pre_ss_len_s: 6.0,
            maneuver_lead_s: 12.0,
            maneuver_len_s: 3.0,
            pause_min_s: 3.0,
            pause_max_s: 8.0,
            speed_mps: 3.0,
            turn_rate_hz: 0.25,
            blink_rate_hz: 0.25,
            forced_blinks: Vec::new(),
        }
    }

    /// First-person profile: stronger eye response and twice the episodes.
    pub fn first_person(seed: u64) -> Self {
        SynthSpec::base(Perspective::FirstPerson, 4, 3.0, seed)
    }

    pub fn third_person(seed: u64) -> Self {
        SynthSpec::base(Perspective::ThirdPerson, 2, 1.8, seed)
    }

    pub fn for_perspective(p: Perspective, seed: u64) -> Self {
        match p {
            Perspective::FirstPerson => SynthSpec::first_person(seed),
            Perspective::ThirdPerson => SynthSpec::third_person(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.rate_hz > 0.0) {
            return bad("rate must be positive");
        }
        if !(self.eye_gain >= 1.0) {
            return bad("eye_gain must be at least 1");
        }
        if !(self.motion_intensity > 0.0) {
            return bad("motion_intensity must be positive");
        }
        if !(self.spacing_min_s >= 0.0 && self.spacing_max_s >= self.spacing_min_s) {
            return bad("spacing bounds must satisfy 0 <= min <= max");
        }
        if !(self.pause_min_s > 0.0 && self.pause_max_s >= self.pause_min_s) {
            return bad("pause bounds must satisfy 0 < min <= max");
        }
        if !(self.maneuver_lead_s >= self.pre_ss_len_s && self.pre_ss_len_s > 0.0) {
            return bad("maneuver lead must cover the pre-sickness lead-up");
        }
        let (lo, hi) = self.susceptibility;
        if !(0.0..=hi).contains(&lo) {
            return bad("susceptibility range must satisfy 0 <= lo <= hi");
        }
        Ok(())
    }

    fn game(&self) -> &'static str {
        match self.perspective {
            Perspective::FirstPerson => "parkour",
            Perspective::ThirdPerson => "racing",
        }
    }
}

/// Ground truth for one scripted episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub maneuver_start: f64,
    pub pause: Interval,
    /// Fraction of `eye_gain - 1` reached at the end of the lead-up.
    pub susceptibility: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn place_episodes(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
    let n = spec.n_episodes;
    let pauses: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.pause_min_s..=spec.pause_max_s))
        .collect();
    let gaps: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.spacing_min_s..=spec.spacing_max_s))
        .collect();
    let sus: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.susceptibility.0..=spec.susceptibility.1))
        .collect();
    // the session must also end with a calm stretch
    let fixed: f64 = pauses.iter().sum::<f64>() + n as f64 * spec.maneuver_lead_s + (n + 1) as f64 * spec.spacing_min_s;
    let avail = spec.duration_s - fixed;
    if n > 0 && avail < 0.0 {
        return Err(Error::EpisodesDoNotFit(format!(
            "{n} episodes need {fixed:.1} s but the session lasts {:.1} s",
            spec.duration_s
        )));
    }
    let extra: f64 = gaps.iter().map(|g| g - spec.spacing_min_s).sum();
    let shrink = if extra > avail { avail / extra } else { 1.0 };

    let mut t = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        t += spec.spacing_min_s + (gaps[i] - spec.spacing_min_s) * shrink;
        let maneuver_start = t;
        let start = t + spec.maneuver_lead_s;
        let end = start + pauses[i];
        out.push(Episode {
            maneuver_start,
            pause: Interval::new(start, end),
            susceptibility: sus[i],
        });
        t = end;
    }
    Ok(out)
}

/// Raised-cosine bump on `[start, start + len)` with unit peak.
fn bump(t: f64, start: f64, len: f64) -> f64 {
    if t < start || t >= start + len {
        0.0
    } else {
        0.5 * (1.0 - (TAU * (t - start) / len).cos())
    }
}

struct Turn {
    start: f64,
    len: f64,
    peak: f64,
}

/// Slowly wandering fixation: a few low-frequency sinusoids per axis.
struct Wander {
    terms: Vec<(f64, f64, f64)>,
}

impl Wander {
    fn new(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        Wander {
            terms: (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.3..1.0) * amp,
                        rng.random_range(0.03..0.25),
                        rng.random_range(0.0..TAU),
                    )
                })
                .collect(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, f, ph)| a * (TAU * f * t + ph).sin()).sum()
    }
}

fn direction(az: f64, el: f64) -> Vec3 {
    // forward is +y, up is +z
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    renormalize([ce * sa, ce * ca, se]).expect("unit by construction")
}

/// Generates a session; the episode pauses are recorded in `Session::pauses`.
pub fn generate_session(spec: &SynthSpec) -> Result<Session> {
    generate_with_truth(spec).map(|(s, _)| s)
}

pub fn generate_with_truth(spec: &SynthSpec) -> Result<(Session, Vec<Episode>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let episodes = place_episodes(spec, &mut rng)?;

    let dt = 1.0 / spec.rate_hz;
    let n = (spec.duration_s * spec.rate_hz).floor() as usize;

    // ordinary turns as a Poisson process
    let mut turns = Vec::new();
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / spec.turn_rate_hz.max(1e-9);
        if t >= spec.duration_s {
            break;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        turns.push(Turn {
            start: t,
            len: rng.random_range(1.0..2.0),
            peak: sign * rng.random_range(40.0..90.0f64).to_radians() * spec.motion_intensity,
        });
    }

    // spontaneous short blinks, both eyes
    let mut blinks: Vec<Interval> = Vec::new();
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / spec.blink_rate_hz.max(1e-9);
        if t >= spec.duration_s {
            break;
        }
        blinks.push(Interval::new(t, t + rng.random_range(0.1..0.25)));
    }
    blinks.extend(spec.forced_blinks.iter().copied());

    let baseline = (spec.baseline_spread * normal(&mut rng)).exp();
    let wander_az = Wander::new(&mut rng, 0.25);
    let wander_el = Wander::new(&mut rng, 0.1);
    let speed_phase = rng.random_range(0.0..TAU);
    let pupil_base = rng.random_range(3.0..4.5);
    let bob = match spec.perspective {
        Perspective::FirstPerson => 0.04,
        Perspective::ThirdPerson => 0.0,
    };

    // the variance multiplier ramps linearly over the lead-up to
    // 1 + (gain - 1) * susceptibility and holds there through the pause
    let variance_gain = |t: f64| -> f64 {
        for ep in &episodes {
            let lead = ep.pause.start - spec.pre_ss_len_s;
            if t >= lead && t < ep.pause.end {
                let frac = ((t - lead) / spec.pre_ss_len_s).min(1.0);
                return 1.0 + (spec.eye_gain - 1.0) * ep.susceptibility * frac;
            }
        }
        1.0
    };
    // 0 while paused, smooth ramps at both ends
    let mobility = |t: f64| -> f64 {
        let mut m: f64 = 1.0;
        for ep in &episodes {
            let p = ep.pause;
            if t >= p.start && t < p.end + 1.0 {
                let down = 1.0 - smoothstep((t - p.start) / 0.5);
                let up = smoothstep((t - p.end) / 1.0);
                m = m.min(down.max(up));
            }
        }
        m
    };
    let maneuver = |t: f64| -> f64 {
        episodes
            .iter()
            .map(|ep| {
                let s = ep.maneuver_start;
                if t >= s && t < s + spec.maneuver_len_s {
                    let env = bump(t, s, spec.maneuver_len_s);
                    env * (TAU * (t - s) / 1.0).sin() * 200f64.to_radians()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * spec.motion_intensity
    };

    let theta = spec.jitter_reversion;
    let mut jc = [0.0f64; 2];
    let mut jl = [0.0f64; 2];
    let mut jr = [0.0f64; 2];
    let mut heading = rng.random_range(-PI..PI);
    let mut pos: Vec3 = [0.0, 0.0, 0.0];
    let mut frames = Vec::with_capacity(n);

    for k in 0..n {
        let t = k as f64 * dt;
        let mob = mobility(t);

        let yaw_rate = mob * (turns.iter().map(|tr| tr.peak * bump(t, tr.start, tr.len)).sum::<f64>() + maneuver(t));
        let speed = mob * spec.speed_mps * (1.0 + 0.25 * (TAU * t / 17.0 + speed_phase).sin());
        heading += yaw_rate * dt;
        pos[0] += speed * heading.cos() * dt;
        pos[1] += speed * heading.sin() * dt;
        pos[2] = bob * mob * (TAU * 1.8 * t).sin();
        let pitch = 0.03 * mob * (TAU * 0.9 * t).sin();
        let quat = Quat::from_axis_angle([0.0, 0.0, 1.0], heading).mul(&Quat::from_axis_angle([1.0, 0.0, 0.0], pitch));

        let sigma = spec.jitter_sigma * baseline * variance_gain(t).sqrt();
        let s_dt = dt.sqrt();
        for (j, scale) in [(&mut jc, 1.0), (&mut jl, 0.5), (&mut jr, 0.5)] {
            for v in j.iter_mut() {
                *v += -theta * *v * dt + scale * sigma * s_dt * normal(&mut rng);
            }
        }
        let az = wander_az.at(t);
        let el = wander_el.at(t);
        let gaze_l = direction(az + jc[0] + jl[0], el + jc[1] + jl[1]);
        let gaze_r = direction(az + jc[0] + jr[0], el + jc[1] + jr[1]);
        let sum = [gaze_l[0] + gaze_r[0], gaze_l[1] + gaze_r[1], gaze_l[2] + gaze_r[2]];
        let gaze_c = renormalize(sum).unwrap_or(gaze_l);

        let closed = blinks.iter().any(|b| b.contains(t));
        let mut openness = || {
            if closed {
                0.02
            } else {
                (0.85 + 0.03 * normal(&mut rng)).clamp(0.3, 1.0)
            }
        };
        let (open_l, open_r) = (openness(), openness());
        let pupil = pupil_base + 0.3 * (TAU * t / 23.0).sin();

        let eye = EyeSample {
            t,
            gaze_l,
            gaze_r,
            gaze_c,
            open_l,
            open_r,
            pupil_l: pupil,
            pupil_r: pupil + 0.05,
        };
        let char = CharacterSample { t, pos, quat };
        frames.push(Frame::new(t, eye, char));
    }

    let last_t = frames.last().map(|f| f.t).unwrap_or(0.0);
    let pauses = episodes
        .iter()
        .map(|e| Interval::new(e.pause.start, e.pause.end.min(last_t)))
        .collect();
    let session = Session {
        session_id: format!("synth-{}-{}", spec.perspective, spec.seed),
        game: spec.game().to_string(),
        perspective: spec.perspective,
        rate_hz: spec.rate_hz,
        frames,
        pauses,
    };
    Ok((session, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::validate_session;

    fn short(seed: u64, episodes: usize) -> SynthSpec {
        SynthSpec {
            duration_s: 90.0,
            n_episodes: episodes,
            ..SynthSpec::first_person(seed)
        }
    }

    #[test]
    fn no_episodes_no_pauses() {
        let s = generate_session(&short(1, 0)).unwrap();
        assert!(s.pauses.is_empty());
        assert_eq!(s.frames.len(), 5400);
        assert!(validate_session(&s).is_empty());
    }

    #[test]
    fn episode_count_matches_pauses() {
        let s = generate_session(&short(2, 2)).unwrap();
        assert_eq!(s.pauses.len(), 2);
        assert!(validate_session(&s).is_empty(), "{:?}", validate_session(&s));
        for p in &s.pauses {
            assert!(p.duration() >= 3.0 && p.duration() <= 8.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_session(&short(5, 1)).unwrap();
        let b = generate_session(&short(5, 1)).unwrap();
        assert_eq!(a, b);
        let c = generate_session(&short(6, 1)).unwrap();
        assert_ne!(a.frames[100].eye.gaze_l, c.frames[100].eye.gaze_l);
    }

    #[test]
    fn too_many_episodes_is_an_error() {
        assert!(matches!(
            generate_session(&short(1, 4)),
            Err(Error::EpisodesDoNotFit(_))
        ));
    }

    #[test]
    fn character_rests_during_pauses() {
        let (s, eps) = generate_with_truth(&short(3, 2)).unwrap();
        for ep in eps {
            let inside: Vec<&Frame> = s
                .frames
                .iter()
                .filter(|f| f.t >= ep.pause.start + 0.6 && f.t < ep.pause.end)
                .collect();
            for w in inside.windows(2) {
                let d = crate::telemetry::norm(&crate::telemetry::sub(&w[1].char.pos, &w[0].char.pos));
                assert!(d < 1e-9);
            }
        }
    }
}

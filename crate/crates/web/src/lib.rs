//! Browser bindings for the demo page in `www/`.
//!
//! A [`Demo`] holds one synthetic session and its features. The page asks it
//! for plot traces, relabels the session with a different lead-up length and
//! rescans it for blinks at a chosen closure threshold.

use serde::Serialize;
use sickwatch::features::{detect_blinks, extract_features, BlinkEye, FeatureConfig};
use sickwatch::labeling::label_frames;
use sickwatch::synth::{generate_session, SynthSpec};
use sickwatch::{EventLabel, FeatureFrame, Interval, Perspective, Session};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Traces {
    session_id: String,
    perspective: String,
    duration_s: f64,
    t: Vec<f64>,
    a_eye: Vec<f64>,
    a_char: Vec<f64>,
    v_char: Vec<f64>,
    alpha_char: Vec<f64>,
    openness: Vec<f64>,
    pauses: Vec<Interval>,
}

#[derive(Serialize, Debug, PartialEq)]
struct Segment {
    start: f64,
    end: f64,
    label: &'static str,
}

#[derive(Serialize)]
struct Labels {
    segments: Vec<Segment>,
    counts: [usize; 3],
}

#[derive(Serialize)]
struct Blink {
    start: f64,
    end: f64,
    eye: &'static str,
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo payloads serialize")
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
    features: Vec<FeatureFrame>,
}

impl Demo {
    pub fn build(
        perspective: Perspective,
        seed: u64,
        duration_s: f64,
        blinks: Vec<Interval>,
    ) -> sickwatch::Result<Demo> {
        let mut spec = SynthSpec {
            duration_s,
            forced_blinks: blinks,
            ..SynthSpec::for_perspective(perspective, seed)
        };
        // short previews keep as many episodes as fit
        let session = loop {
            match generate_session(&spec) {
                Err(sickwatch::Error::EpisodesDoNotFit(_)) if spec.n_episodes > 0 => spec.n_episodes -= 1,
                other => break other?,
            }
        };
        let features = extract_features(&session.frames, session.rate_hz, &FeatureConfig::default())?;
        Ok(Demo { session, features })
    }

    fn traces(&self, step: usize) -> Traces {
        let step = step.max(1);
        let pick = |f: &dyn Fn(&FeatureFrame) -> f64| self.features.iter().step_by(step).map(f).collect();
        Traces {
            session_id: self.session.session_id.clone(),
            perspective: self.session.perspective.to_string(),
            duration_s: self.session.duration(),
            t: pick(&|f| f.t),
            a_eye: pick(&|f| 0.5 * (f.a_eye_l + f.a_eye_r)),
            a_char: pick(&|f| f.a_char),
            v_char: pick(&|f| f.v_char),
            alpha_char: pick(&|f| f.alpha_char),
            openness: self
                .session
                .frames
                .iter()
                .step_by(step)
                .map(|f| f.eye.open_l.min(f.eye.open_r))
                .collect(),
            pauses: self.session.pauses.clone(),
        }
    }

    fn labels(&self, pre_ss_len_s: f64) -> Labels {
        let ts = self.session.timestamps();
        let labels = label_frames(&ts, &self.session.pauses, pre_ss_len_s);
        let mut counts = [0; 3];
        let mut segments: Vec<Segment> = Vec::new();
        for (i, (&t, &l)) in ts.iter().zip(&labels).enumerate() {
            counts[l.id() as usize] += 1;
            let end = ts.get(i + 1).copied().unwrap_or(t);
            match segments.last_mut() {
                Some(s) if s.label == label_name(l) => s.end = end,
                _ => segments.push(Segment {
                    start: t,
                    end,
                    label: label_name(l),
                }),
            }
        }
        Labels { segments, counts }
    }

    fn blinks(&self, threshold: f64, min_s: f64) -> Vec<Blink> {
        detect_blinks(&self.session.frames, self.session.rate_hz, threshold, min_s)
            .into_iter()
            .map(|b| Blink {
                start: b.start,
                end: b.end,
                eye: match b.eye {
                    BlinkEye::Left => "left",
                    BlinkEye::Right => "right",
                    BlinkEye::Both => "both",
                },
            })
            .collect()
    }
}

fn label_name(l: EventLabel) -> &'static str {
    match l {
        EventLabel::Normal => "normal",
        EventLabel::PreSs => "pre_ss",
        EventLabel::Paused => "paused",
    }
}

#[wasm_bindgen]
impl Demo {
    /// `blinks` is a flat list of forced closures, `[start0, end0, start1, end1, ...]`.
    #[wasm_bindgen(constructor)]
    pub fn new(perspective: &str, seed: u32, duration_s: f64, blinks: Vec<f64>) -> Result<Demo, JsValue> {
        let p: Perspective = perspective.parse().map_err(js_err)?;
        if !blinks.len().is_multiple_of(2) {
            return Err(js_err("blink list needs start/end pairs"));
        }
        let forced = blinks.chunks(2).map(|c| Interval::new(c[0], c[1])).collect();
        Demo::build(p, seed as u64, duration_s, forced).map_err(js_err)
    }

    /// Feature and openness traces, every `step`-th frame, as JSON.
    pub fn traces_json(&self, step: usize) -> String {
        to_json(&self.traces(step))
    }

    /// Label runs for a lead-up of `pre_ss_len_s` seconds, as JSON.
    pub fn labels_json(&self, pre_ss_len_s: f64) -> Result<String, JsValue> {
        if !(pre_ss_len_s.is_finite() && pre_ss_len_s >= 0.0) {
            return Err(js_err("lead-up length must be a non-negative number"));
        }
        Ok(to_json(&self.labels(pre_ss_len_s)))
    }

    /// Eye closures at least `min_s` long below `threshold` openness, as JSON.
    pub fn blinks_json(&self, threshold: f64, min_s: f64) -> String {
        to_json(&self.blinks(threshold, min_s))
    }
}

//! Streaming detection over a live frame feed.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureVec, StreamingFeatures};
use crate::rnn::{sequence_forward, LstmModel};
use crate::telemetry::{DetectionEvent, EventKind, FeatureFrame, Frame, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HysteresisConfig {
    /// Consecutive inferences above `theta_raise` needed to raise.
    pub k_raise: usize,
    /// Consecutive inferences below `theta_clear` needed to clear.
    pub m_clear: usize,
    pub theta_raise: f64,
    pub theta_clear: f64,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        HysteresisConfig {
            k_raise: 3,
            m_clear: 8,
            theta_raise: 0.7,
            theta_clear: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub rate_hz: f64,
    pub window: usize,
    pub stride: usize,
    pub features: FeatureConfig,
    pub hysteresis: HysteresisConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            rate_hz: 60.0,
            window: 120,
            stride: 15,
            features: FeatureConfig::default(),
            hysteresis: HysteresisConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let h = &self.hysteresis;
        if self.window == 0 || self.stride == 0 || h.k_raise == 0 || h.m_clear == 0 {
            return Err(Error::InvalidArgument(
                "window, stride, K and M must be positive".into(),
            ));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidArgument("rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&h.theta_raise) || !(0.0..=1.0).contains(&h.theta_clear) {
            return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Raise/clear debouncing for one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hysteresis {
    pub active: bool,
    above: usize,
    below: usize,
}

impl Hysteresis {
    /// Feeds one inference. Suppressed inferences leave the counters untouched.
    pub fn update(&mut self, cfg: &HysteresisConfig, p: f64, suppressed: bool) -> Option<EventKind> {
        if suppressed {
            return None;
        }
        if !self.active {
            self.above = if p > cfg.theta_raise { self.above + 1 } else { 0 };
            if self.above >= cfg.k_raise {
                *self = Hysteresis {
                    active: true,
                    above: 0,
                    below: 0,
                };
                return Some(EventKind::Raised);
            }
        } else {
            self.below = if p < cfg.theta_clear { self.below + 1 } else { 0 };
            if self.below >= cfg.m_clear {
                *self = Hysteresis::default();
                return Some(EventKind::Cleared);
            }
        }
        None
    }
}

/// One model evaluation on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Index of the window's last frame.
    pub end: usize,
    pub t: f64,
    pub probs: Vec<f64>,
    /// The final frame had a closed eye.
    pub suppressed: bool,
}

fn check_model(m: &LstmModel) -> Result<()> {
    if m.params.input_dim != FEATURE_DIM {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} inputs, features have {FEATURE_DIM}",
            m.params.input_dim
        )));
    }
    Ok(())
}

fn infer<'a>(model: &LstmModel, window: impl Iterator<Item = &'a FeatureVec>) -> Result<Vec<f64>> {
    let normalized: Vec<FeatureVec> = window.map(|x| model.norm.apply(x)).collect();
    sequence_forward(&model.params, &normalized)
}

fn event(model: &LstmModel, kind: EventKind, inf: &Inference) -> DetectionEvent {
    DetectionEvent {
        model: model.profile,
        kind,
        event: model.profile.event(),
        t: inf.t,
        confidence: inf.probs[1],
    }
}

pub struct Detector {
    cfg: DetectorConfig,
    models: Vec<Arc<LstmModel>>,
    features: StreamingFeatures,
    /// Last `window` finalized feature vectors.
    ring: VecDeque<FeatureVec>,
    finalized: usize,
    last_t: Option<f64>,
    states: Vec<Hysteresis>,
}

impl Detector {
    pub fn new(models: Vec<Arc<LstmModel>>, cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        for m in &models {
            check_model(m)?;
        }
        Ok(Detector {
            features: StreamingFeatures::new(cfg.rate_hz, cfg.features),
            ring: VecDeque::with_capacity(cfg.window),
            finalized: 0,
            last_t: None,
            states: vec![Hysteresis::default(); models.len()],
            models,
            cfg,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn models(&self) -> &[Arc<LstmModel>] {
        &self.models
    }

    /// Whether each model currently has a raised event.
    pub fn active(&self) -> Vec<bool> {
        self.states.iter().map(|s| s.active).collect()
    }

    /// Clears buffers and counters; models stay loaded.
    pub fn reset(&mut self) {
        self.features.reset();
        self.ring.clear();
        self.finalized = 0;
        self.last_t = None;
        self.states.fill(Hysteresis::default());
    }

    pub fn push_frame(&mut self, frame: Frame) -> Result<Vec<DetectionEvent>> {
        if self.models.is_empty() {
            return Err(Error::NoModels);
        }
        if !frame.t.is_finite() {
            return Err(Error::InvalidSample(format!("non-finite timestamp {}", frame.t)));
        }
        if let Some(last) = self.last_t {
            if frame.t <= last {
                return Err(Error::NonMonotonic { t: frame.t, last });
            }
        }
        self.last_t = Some(frame.t);

        let mut events = Vec::new();
        for (f, src) in self.features.push(frame) {
            if self.ring.len() == self.cfg.window {
                self.ring.pop_front();
            }
            self.ring.push_back(f.values());
            let end = self.finalized;
            self.finalized += 1;
            if self.finalized < self.cfg.window || !(self.finalized - self.cfg.window).is_multiple_of(self.cfg.stride) {
                continue;
            }
            let suppressed = src.eye_closed(self.cfg.features.openness_threshold);
            for (model, state) in self.models.iter().zip(&mut self.states) {
                let inf = Inference {
                    end,
                    t: f.t,
                    probs: infer(model, self.ring.iter())?,
                    suppressed,
                };
                if let Some(kind) = state.update(&self.cfg.hysteresis, inf.probs[1], suppressed) {
                    events.push(event(model, kind, &inf));
                }
            }
        }
        Ok(events)
    }
}

/// Features a stream of `frames` has finalized: all but the last frame.
pub fn finalized_features(frames: &[Frame], cfg: &DetectorConfig) -> Result<Vec<FeatureFrame>> {
    if frames.len() < 3 {
        return Ok(Vec::new());
    }
    let mut f = extract_features(frames, cfg.rate_hz, &cfg.features)?;
    f.pop();
    Ok(f)
}

/// Every inference `model` makes on `frames`, in stream order.
pub fn offline_inferences(model: &LstmModel, frames: &[Frame], cfg: &DetectorConfig) -> Result<Vec<Inference>> {
    cfg.validate()?;
    check_model(model)?;
    let feats = finalized_features(frames, cfg)?;
    offline_inferences_on(model, frames, &feats, cfg)
}

fn offline_inferences_on(
    model: &LstmModel,
    frames: &[Frame],
    feats: &[FeatureFrame],
    cfg: &DetectorConfig,
) -> Result<Vec<Inference>> {
    if feats.len() < cfg.window {
        return Ok(Vec::new());
    }
    let values: Vec<FeatureVec> = feats.iter().map(FeatureFrame::values).collect();
    (cfg.window - 1..feats.len())
        .step_by(cfg.stride)
        .map(|end| {
            Ok(Inference {
                end,
                t: feats[end].t,
                probs: infer(model, values[end + 1 - cfg.window..=end].iter())?,
                suppressed: frames[end].eye_closed(cfg.features.openness_threshold),
            })
        })
        .collect()
}

/// Applies hysteresis to a sequence of inferences.
pub fn hysteresis_events(model: &LstmModel, inferences: &[Inference], cfg: &HysteresisConfig) -> Vec<DetectionEvent> {
    let mut state = Hysteresis::default();
    inferences
        .iter()
        .filter_map(|inf| {
            state
                .update(cfg, inf.probs[1], inf.suppressed)
                .map(|kind| event(model, kind, inf))
        })
        .collect()
}

/// Batch equivalent of feeding `frames` through [`Detector::push_frame`].
pub fn detect_offline(
    models: &[Arc<LstmModel>],
    frames: &[Frame],
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionEvent>> {
    if models.is_empty() {
        return Err(Error::NoModels);
    }
    cfg.validate()?;
    for m in models {
        check_model(m)?;
    }
    let feats = finalized_features(frames, cfg)?;
    let per_model: Vec<Vec<Inference>> = models
        .iter()
        .map(|m| offline_inferences_on(m, frames, &feats, cfg))
        .collect::<Result<_>>()?;
    let mut states = vec![Hysteresis::default(); models.len()];
    let mut out = Vec::new();
    let steps = per_model.first().map_or(0, Vec::len);
    for i in 0..steps {
        for ((m, infs), state) in models.iter().zip(&per_model).zip(&mut states) {
            let inf = &infs[i];
            if let Some(kind) = state.update(&cfg.hysteresis, inf.probs[1], inf.suppressed) {
                out.push(event(m, kind, inf));
            }
        }
    }
    Ok(out)
}

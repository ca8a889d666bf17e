//! Real-time simulator-sickness detection from eye-tracking and character
//! kinematics.
//!
//! The pipeline runs from raw recordings ([`ingest`]) through the five
//! kinematic features ([`features`]) and the per-frame event labels
//! ([`labeling`]) into two independent LSTM classifiers ([`rnn`],
//! [`trainer`]): profile A recognises the paused/post-onset state and
//! profile B the six seconds leading up to it. [`detector`] runs the models
//! over a live frame stream with hysteresis, [`synth`] produces labelled
//! sessions with known ground truth and [`eval`] scores trained models.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod labeling;
pub mod rnn;
pub mod synth;
pub mod telemetry;
pub mod trainer;

pub use error::{Error, Result};
pub use telemetry::{
    CharacterSample, DetectionEvent, EventKind, EventLabel, EyeSample, FeatureFrame, Frame, Interval, ModelProfile,
    Perspective, Quat, Session, SsEvent, Vec3,
};

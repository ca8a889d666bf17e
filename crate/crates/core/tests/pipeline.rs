use std::sync::{Arc, OnceLock};

use sickwatch::detector::{detect_offline, Detector, DetectorConfig};
use sickwatch::eval::{evaluate, EvalConfig};
use sickwatch::features::{detect_blinks, BlinkEye, FeatureConfig};
use sickwatch::rnn::LstmModel;
use sickwatch::synth::{generate_session, SynthSpec};
use sickwatch::trainer::{build_dataset, train, TrainConfig};
use sickwatch::{CharacterSample, DetectionEvent, EventKind, EyeSample, Frame, Interval, ModelProfile, Quat, Session};

fn sessions(seeds: std::ops::Range<u64>, gain: f64) -> Vec<Session> {
    seeds
        .map(|s| {
            generate_session(&SynthSpec {
                duration_s: 90.0,
                n_episodes: 2,
                eye_gain: gain,
                ..SynthSpec::first_person(s)
            })
            .unwrap()
        })
        .collect()
}

fn cfg(profile: ModelProfile) -> TrainConfig {
    TrainConfig {
        profile,
        hidden: 16,
        epochs: 12,
        patience: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn model(profile: ModelProfile) -> Arc<LstmModel> {
    static A: OnceLock<Arc<LstmModel>> = OnceLock::new();
    static B: OnceLock<Arc<LstmModel>> = OnceLock::new();
    let cell = if profile == ModelProfile::A { &A } else { &B };
    cell.get_or_init(|| Arc::new(train(&sessions(0..6, 6.0), &cfg(profile)).unwrap().model))
        .clone()
}

fn stream(det: &mut Detector, frames: &[Frame]) -> Vec<DetectionEvent> {
    frames.iter().flat_map(|f| det.push_frame(*f).unwrap()).collect()
}

#[test]
fn high_gain_model_a_separates_pauses() {
    let out = train(&sessions(0..6, 6.0), &cfg(ModelProfile::A)).unwrap();
    let best = out.history.iter().map(|r| r.val_balanced_accuracy).fold(0.0, f64::max);
    assert!(best >= 0.9, "best validation balanced accuracy {best}");
    assert!(out.history.len() <= 12);
}

#[test]
fn one_episode_raises_once_inside_the_pause() {
    let a = model(ModelProfile::A);
    for seed in 100..103 {
        let s = generate_session(&SynthSpec {
            duration_s: 60.0,
            n_episodes: 1,
            ..SynthSpec::first_person(seed)
        })
        .unwrap();
        let pause = s.pauses[0];
        let mut det = Detector::new(vec![a.clone()], DetectorConfig::default()).unwrap();
        let events = stream(&mut det, &s.frames);
        let raised: Vec<&DetectionEvent> = events.iter().filter(|e| e.kind == EventKind::Raised).collect();
        assert_eq!(raised.len(), 1, "seed {seed}: {events:?}");
        assert!(
            pause.contains(raised[0].t),
            "seed {seed}: raised at {} outside {pause:?}",
            raised[0].t
        );
        let cleared: Vec<&DetectionEvent> = events.iter().filter(|e| e.kind == EventKind::Cleared).collect();
        assert_eq!(cleared.len(), 1, "seed {seed}: {events:?}");
        assert!(cleared[0].t > raised[0].t);
    }
}

#[test]
fn streaming_equals_offline_with_trained_models() {
    let models = vec![model(ModelProfile::A), model(ModelProfile::B)];
    let cfg = DetectorConfig::default();
    for s in sessions(200..204, 3.0) {
        let mut det = Detector::new(models.clone(), cfg).unwrap();
        assert_eq!(
            stream(&mut det, &s.frames),
            detect_offline(&models, &s.frames, &cfg).unwrap()
        );
    }
}

#[test]
fn no_raise_inside_a_long_blink() {
    let models = vec![model(ModelProfile::A), model(ModelProfile::B)];
    let fc = FeatureConfig::default();
    for seed in 300..306 {
        // closures over the lead-up and the start of each pause
        let base = generate_session(&SynthSpec {
            duration_s: 90.0,
            n_episodes: 2,
            ..SynthSpec::first_person(seed)
        })
        .unwrap();
        let forced: Vec<Interval> = base
            .pauses
            .iter()
            .flat_map(|p| {
                [
                    Interval::new(p.start - 2.0, p.start - 1.0),
                    Interval::new(p.start + 0.5, p.start + 1.5),
                ]
            })
            .collect();
        let s = generate_session(&SynthSpec {
            duration_s: 90.0,
            n_episodes: 2,
            forced_blinks: forced,
            ..SynthSpec::first_person(seed)
        })
        .unwrap();
        let blinks: Vec<_> = detect_blinks(&s.frames, s.rate_hz, fc.openness_threshold, fc.min_blink_s)
            .into_iter()
            .filter(|b| b.eye == BlinkEye::Both)
            .collect();
        assert!(blinks.len() >= 4);
        let events = detect_offline(&models, &s.frames, &DetectorConfig::default()).unwrap();
        for e in events.iter().filter(|e| e.kind == EventKind::Raised) {
            assert!(
                !blinks.iter().any(|b| b.contains(e.t)),
                "seed {seed}: raise at {} inside a blink",
                e.t
            );
        }
    }
}

#[test]
fn zero_motion_stream_raises_nothing() {
    let g = [0.0, 0.0, 1.0];
    let frames: Vec<Frame> = (0..1800)
        .map(|k| {
            let t = k as f64 / 60.0;
            let eye = EyeSample::new(t, g, g, g, 0.9, 0.9, 3.5, 3.5).unwrap();
            Frame::new(t, eye, CharacterSample::new(t, [0.0; 3], Quat::IDENTITY).unwrap())
        })
        .collect();
    for p in [ModelProfile::A, ModelProfile::B] {
        let events = detect_offline(&[model(p)], &frames, &DetectorConfig::default()).unwrap();
        assert!(events.is_empty(), "model {p}: {events:?}");
    }
}

#[test]
fn profiles_split_labels_as_documented() {
    let s = sessions(0..3, 3.0);
    let c = TrainConfig {
        window: 60,
        stride: 10,
        ..cfg(ModelProfile::A)
    };
    let a = build_dataset(&s, ModelProfile::A, &c).unwrap();
    let b = build_dataset(&s, ModelProfile::B, &c).unwrap();
    // A positives are paused windows, B positives lead-up windows; both share the normal ones
    assert_eq!(a.train.class_counts()[0], b.train.class_counts()[0]);
    assert!(a.train.class_counts()[1] > 0 && b.train.class_counts()[1] > 0);
}

#[test]
fn evaluation_recount_matches_metrics() {
    let a = model(ModelProfile::A);
    let test = sessions(400..403, 3.0);
    let ev = evaluate(&a, &test, &EvalConfig::default()).unwrap();
    let mut confusion = [[0usize; 2]; 2];
    for p in &ev.predictions {
        confusion[p.truth][p.predicted] += 1;
    }
    assert_eq!(ev.overall.confusion, vec![confusion[0].to_vec(), confusion[1].to_vec()]);
    let recall = |k: usize| confusion[k][k] as f64 / (confusion[k][0] + confusion[k][1]) as f64;
    assert!((ev.overall.balanced_accuracy - (recall(0) + recall(1)) / 2.0).abs() < 1e-12);
    let hits = ev.episodes.iter().filter(|e| e.raised_at.is_some()).count();
    assert_eq!(ev.overall.hits, hits);
    assert_eq!(ev.overall.episodes, 6);
    assert_eq!(ev.overall.false_raises, ev.overall.raises - hits);
    assert!(ev.overall.hits <= ev.overall.episodes);
    assert!(evaluate(
        &a,
        &test[..1],
        &EvalConfig {
            training_sessions: vec![test[0].session_id.clone()],
            ..EvalConfig::default()
        }
    )
    .is_err());
}

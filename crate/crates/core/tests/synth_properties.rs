use sickwatch::features::{extract_features, FeatureConfig};
use sickwatch::ingest::{load_session, save_session};
use sickwatch::labeling::label_frames;
use sickwatch::synth::{generate_session, generate_with_truth, SynthSpec};
use sickwatch::telemetry::validate_session;
use sickwatch::{EventLabel, Perspective, Session};

fn mean_eye_accel(sessions: &[Session], label: EventLabel) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in sessions {
        let feats = extract_features(&s.frames, s.rate_hz, &FeatureConfig::default()).unwrap();
        let labels = label_frames(&s.timestamps(), &s.pauses, 6.0);
        for (f, l) in feats.iter().zip(&labels) {
            if *l == label && f.valid {
                sum += 0.5 * (f.a_eye_l + f.a_eye_r);
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn batch(p: Perspective, seeds: std::ops::Range<u64>) -> Vec<Session> {
    seeds
        .map(|s| generate_session(&SynthSpec::for_perspective(p, s)).unwrap())
        .collect()
}

#[test]
fn generated_sessions_are_well_formed() {
    for seed in 0..6 {
        for p in [Perspective::FirstPerson, Perspective::ThirdPerson] {
            let s = generate_session(&SynthSpec::for_perspective(p, seed)).unwrap();
            assert_eq!(validate_session(&s), vec![], "{p} seed {seed}");
        }
    }
}

#[test]
fn pre_ss_eye_acceleration_exceeds_baseline() {
    for p in [Perspective::FirstPerson, Perspective::ThirdPerson] {
        let sessions = batch(p, 0..10);
        let pre = mean_eye_accel(&sessions, EventLabel::PreSs);
        let normal = mean_eye_accel(&sessions, EventLabel::Normal);
        assert!(pre > normal, "{p}: pre-SS {pre} vs normal {normal}");
    }
}

#[test]
fn first_person_has_the_larger_eye_response() {
    let ratio = |p| {
        let s = batch(p, 0..10);
        mean_eye_accel(&s, EventLabel::PreSs) / mean_eye_accel(&s, EventLabel::Normal)
    };
    let (first, third) = (ratio(Perspective::FirstPerson), ratio(Perspective::ThirdPerson));
    assert!(first > third, "1PP ratio {first} vs 3PP ratio {third}");
}

#[test]
fn pauses_follow_the_scripted_maneuvers() {
    let spec = SynthSpec::first_person(11);
    let (s, episodes) = generate_with_truth(&spec).unwrap();
    assert_eq!(s.pauses.len(), spec.n_episodes);
    for (p, e) in s.pauses.iter().zip(&episodes) {
        assert_eq!(p.start, e.pause.start);
        assert!((p.start - e.maneuver_start - spec.maneuver_lead_s).abs() < 1e-9);
        let len = p.duration();
        assert!(
            (spec.pause_min_s..=spec.pause_max_s).contains(&len),
            "pause length {len}"
        );
    }
}

#[test]
fn recording_file_round_trip() {
    let s = generate_session(&SynthSpec {
        duration_s: 45.0,
        n_episodes: 1,
        ..SynthSpec::third_person(4)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    save_session(&s, &path).unwrap();
    let back = load_session(&path, s.rate_hz).unwrap();
    assert_eq!(back.session_id, s.session_id);
    assert_eq!(back.perspective, s.perspective);
    assert_eq!(back.frames.len(), s.frames.len());
    assert_eq!(back.pauses.len(), 1);
    for (a, b) in back.frames.iter().zip(&s.frames) {
        assert!((a.t - b.t).abs() < 1e-9);
        for k in 0..3 {
            assert!((a.eye.gaze_l[k] - b.eye.gaze_l[k]).abs() < 1e-9);
            assert!((a.char.pos[k] - b.char.pos[k]).abs() < 1e-9);
        }
        assert!(!a.gap);
    }
    assert!((back.pauses[0].start - s.pauses[0].start).abs() < 1e-9);
}

//! Per-frame event labels and the long-blink counter-measure.

use std::io::Write;

use crate::error::{Error, Result};
use crate::features::{BlinkEye, BlinkInterval};
use crate::telemetry::{EventLabel, FeatureFrame, Interval};

/// Default length of the pre-sickness lead-up, seconds.
pub const PRE_SS_LEN_S: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub labels: Vec<EventLabel>,
    /// False inside long both-eye blinks.
    pub validity: Vec<bool>,
}

impl LabeledSeries {
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[l.id() as usize] += 1;
        }
        c
    }
}

/// Labels `Paused` inside a pause, `PreSs` in the `pre_ss_len_s` seconds
/// before a pause starts, `Normal` elsewhere. The lead-up never reaches back
/// past the end of the preceding pause or the session start.
pub fn label_frames(timestamps: &[f64], pauses: &[Interval], pre_ss_len_s: f64) -> Vec<EventLabel> {
    let mut out = vec![EventLabel::Normal; timestamps.len()];
    // timestamps are increasing, so one cursor per pause list suffices
    let mut p = 0;
    for (i, &t) in timestamps.iter().enumerate() {
        while p < pauses.len() && pauses[p].end <= t {
            p += 1;
        }
        let Some(next) = pauses.get(p) else { continue };
        if next.contains(t) {
            out[i] = EventLabel::Paused;
        } else {
            let floor = if p > 0 { pauses[p - 1].end } else { f64::NEG_INFINITY };
            let lead_start = (next.start - pre_ss_len_s).max(floor);
            if t >= lead_start && t < next.start {
                out[i] = EventLabel::PreSs;
            }
        }
    }
    out
}

/// Marks frames inside both-eye blinks invalid; labels are kept.
pub fn apply_blink_countermeasure(
    labels: &[EventLabel],
    timestamps: &[f64],
    blinks: &[BlinkInterval],
) -> LabeledSeries {
    let both: Vec<&BlinkInterval> = blinks.iter().filter(|b| b.eye == BlinkEye::Both).collect();
    let validity = timestamps
        .iter()
        .map(|&t| !both.iter().any(|b| b.contains(t)))
        .collect();
    LabeledSeries {
        labels: labels.to_vec(),
        validity,
    }
}

/// Writes `t,label,valid,a_eye_l,a_eye_r,a_char,v_char,alpha_char`, one row per frame.
pub fn write_labeled_csv<W: Write>(mut w: W, series: &LabeledSeries, features: &[FeatureFrame]) -> Result<()> {
    if series.labels.len() != features.len() || series.validity.len() != features.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} feature frames",
            series.labels.len(),
            features.len()
        )));
    }
    writeln!(w, "t,label,valid,a_eye_l,a_eye_r,a_char,v_char,alpha_char")?;
    for ((f, l), ok) in features.iter().zip(&series.labels).zip(&series.validity) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            f.t,
            l.id(),
            u8::from(*ok && f.valid),
            f.a_eye_l,
            f.a_eye_r,
            f.a_char,
            f.v_char,
            f.alpha_char
        )?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Tests each rule on each frame directly, with no sweep state.
    pub(crate) fn label_oracle(ts: &[f64], pauses: &[Interval], pre: f64) -> Vec<EventLabel> {
        ts.iter()
            .map(|&t| {
                if pauses.iter().any(|p| p.start <= t && t < p.end) {
                    return EventLabel::Paused;
                }
                let lead = pauses.iter().enumerate().any(|(i, p)| {
                    let prev_end = if i == 0 { f64::NEG_INFINITY } else { pauses[i - 1].end };
                    t >= p.start - pre && t >= prev_end && t < p.start
                });
                if lead {
                    EventLabel::PreSs
                } else {
                    EventLabel::Normal
                }
            })
            .collect()
    }

    fn grid(rate: f64, secs: f64) -> Vec<f64> {
        (0..(secs * rate) as usize).map(|k| k as f64 / rate).collect()
    }

    #[test]
    fn single_pause_at_sixty_hz() {
        let ts = grid(60.0, 60.0);
        let labels = label_frames(&ts, &[Interval::new(30.0, 35.0)], 6.0);
        for (t, l) in ts.iter().zip(&labels) {
            let expect = if (24.0..30.0).contains(t) {
                EventLabel::PreSs
            } else if (30.0..35.0).contains(t) {
                EventLabel::Paused
            } else {
                EventLabel::Normal
            };
            assert_eq!(*l, expect, "t = {t}");
        }
    }

    #[test]
    fn no_pauses_all_normal() {
        let ts = grid(60.0, 5.0);
        assert!(label_frames(&ts, &[], 6.0).iter().all(|l| *l == EventLabel::Normal));
    }

    #[test]
    fn lead_up_truncated_by_previous_pause() {
        let ts = grid(60.0, 30.0);
        let pauses = [Interval::new(10.0, 12.0), Interval::new(15.0, 20.0)];
        let labels = label_frames(&ts, &pauses, 6.0);
        assert_eq!(labels, label_oracle(&ts, &pauses, 6.0));
        for (t, l) in ts.iter().zip(&labels) {
            if (12.0..15.0).contains(t) {
                assert_eq!(*l, EventLabel::PreSs);
            }
        }
        // truncated at session start too
        let labels = label_frames(&ts, &[Interval::new(3.0, 4.0)], 6.0);
        assert!(labels[..180].iter().all(|l| *l == EventLabel::PreSs));
    }

    #[test]
    fn blink_masks_exact_frames() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let labels = vec![EventLabel::PreSs; 20];
        let both = BlinkInterval {
            start: 5.0,
            end: 11.0,
            eye: BlinkEye::Both,
        };
        let s = apply_blink_countermeasure(&labels, &ts, &[both]);
        for (k, v) in s.validity.iter().enumerate() {
            assert_eq!(*v, !(5..=10).contains(&k));
        }
        assert_eq!(s.labels, labels);
        assert!(apply_blink_countermeasure(&labels, &ts, &[])
            .validity
            .iter()
            .all(|v| *v));
        let left = BlinkInterval {
            eye: BlinkEye::Left,
            ..both
        };
        assert!(apply_blink_countermeasure(&labels, &ts, &[left])
            .validity
            .iter()
            .all(|v| *v));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let f = vec![FeatureFrame::from_values(0.5, [1.0, 2.0, 3.0, 4.0, 5.0], true)];
        let s = LabeledSeries {
            labels: vec![EventLabel::Paused],
            validity: vec![true],
        };
        let mut buf = Vec::new();
        write_labeled_csv(&mut buf, &s, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,label,valid,a_eye_l,a_eye_r,a_char,v_char,alpha_char\n0.5,2,1,1,2,3,4,5\n"
        );
    }

    pub(crate) fn pause_set() -> impl Strategy<Value = Vec<Interval>> {
        prop::collection::vec((0.5f64..15.0, 0.2f64..8.0), 0..6).prop_map(|gaps| {
            let mut t = 0.0;
            gaps.into_iter()
                .map(|(gap, len)| {
                    let s = t + gap;
                    t = s + len;
                    Interval::new(s, t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sweep_matches_oracle(pauses in pause_set(), pre in 0.5f64..10.0) {
            let ts = grid(30.0, 80.0);
            let labels = label_frames(&ts, &pauses, pre);
            prop_assert_eq!(&labels, &label_oracle(&ts, &pauses, pre));
            let s = LabeledSeries { validity: vec![true; labels.len()], labels };
            prop_assert_eq!(s.counts().iter().sum::<usize>(), ts.len());
        }

        #[test]
        fn time_translation(pauses in pause_set(), shift in -64i32..64) {
            // quarter-second grid and shifts keep every comparison exact
            let c = shift as f64 * 0.25;
            let q = |x: f64| (x * 4.0).round() / 4.0;
            let pauses: Vec<Interval> = pauses.iter().map(|p| Interval::new(q(p.start), q(p.end).max(q(p.start) + 0.25))).collect();
            let ts: Vec<f64> = (0..400).map(|k| k as f64 * 0.25).collect();
            let shifted_ts: Vec<f64> = ts.iter().map(|t| t + c).collect();
            let shifted_p: Vec<Interval> = pauses.iter().map(|p| Interval::new(p.start + c, p.end + c)).collect();
            prop_assert_eq!(label_frames(&ts, &pauses, 6.0), label_frames(&shifted_ts, &shifted_p, 6.0));
        }
    }
}

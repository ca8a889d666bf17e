//! Window-level and event-level scoring of a trained model on labelled sessions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{hysteresis_events, offline_inferences, DetectorConfig};
use crate::error::{Error, Result};
use crate::labeling::PRE_SS_LEN_S;
use crate::rnn::LstmModel;
use crate::telemetry::{EventKind, ModelProfile, Perspective, Session};
use crate::trainer::{argmax, prepare_session, profile_class, window_usable};

/// Slack before the pre-sickness onset in which a raise still counts as a hit, seconds.
pub const HIT_SLACK_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    pub pre_ss_len_s: f64,
    /// Sessions the model was trained on; evaluating any of them is an error.
    pub training_sessions: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detector: DetectorConfig::default(),
            pre_ss_len_s: PRE_SS_LEN_S,
            training_sessions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub session_id: String,
    pub perspective: Perspective,
    pub t: f64,
    pub truth: usize,
    pub predicted: usize,
    pub confidence: f64,
}

/// Ground-truth episode outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub session_id: String,
    pub perspective: Perspective,
    pub pause_start: f64,
    pub pause_end: f64,
    /// Time of the matched raise, if any.
    pub raised_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub class_names: Vec<String>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub balanced_accuracy: f64,
    pub episodes: usize,
    pub hits: usize,
    pub hit_rate: f64,
    pub raises: usize,
    pub false_raises: usize,
    pub minutes: f64,
    pub false_raises_per_min: f64,
    /// Mean of raise time minus pause start over hits; negative is early.
    pub mean_latency_s: Option<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl Metrics {
    /// Computes metrics from window predictions, episode outcomes and raise counts.
    pub fn compute(
        class_names: &[&str],
        predictions: &[&WindowPrediction],
        episodes: &[&EpisodeOutcome],
        raises: usize,
        minutes: f64,
    ) -> Metrics {
        let c = class_names.len();
        let mut confusion = vec![vec![0usize; c]; c];
        for p in predictions {
            confusion[p.truth][p.predicted] += 1;
        }
        let mut precision = vec![0.0; c];
        let mut recall = vec![0.0; c];
        let mut f1 = vec![0.0; c];
        let mut recalls = Vec::new();
        for k in 0..c {
            let tp = confusion[k][k] as f64;
            let row: usize = confusion[k].iter().sum();
            let col: usize = confusion.iter().map(|r| r[k]).sum();
            precision[k] = ratio(tp, col as f64);
            recall[k] = ratio(tp, row as f64);
            f1[k] = ratio(2.0 * precision[k] * recall[k], precision[k] + recall[k]);
            if row > 0 {
                recalls.push(recall[k]);
            }
        }
        let hit_times: Vec<f64> = episodes
            .iter()
            .filter_map(|e| e.raised_at.map(|t| t - e.pause_start))
            .collect();
        let hits = hit_times.len();
        Metrics {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            confusion,
            precision,
            recall,
            f1,
            balanced_accuracy: ratio(recalls.iter().sum(), recalls.len() as f64),
            episodes: episodes.len(),
            hits,
            hit_rate: ratio(hits as f64, episodes.len() as f64),
            raises,
            false_raises: raises - hits,
            minutes,
            false_raises_per_min: ratio((raises - hits) as f64, minutes),
            mean_latency_s: (hits > 0).then(|| hit_times.iter().sum::<f64>() / hits as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub profile: ModelProfile,
    pub overall: Metrics,
    pub per_perspective: Vec<(Perspective, Metrics)>,
    pub predictions: Vec<WindowPrediction>,
    pub episodes: Vec<EpisodeOutcome>,
}

struct SessionResult {
    perspective: Perspective,
    predictions: Vec<WindowPrediction>,
    episodes: Vec<EpisodeOutcome>,
    raises: usize,
    minutes: f64,
}

fn evaluate_session(model: &LstmModel, s: &Session, cfg: &EvalConfig) -> Result<SessionResult> {
    let det = &cfg.detector;
    let prepared = prepare_session(s, &det.features, cfg.pre_ss_len_s)?;
    let inferences = offline_inferences(model, &s.frames, det)?;

    let mut predictions = Vec::new();
    for inf in &inferences {
        let Some(truth) = profile_class(model.profile, prepared.labels.labels[inf.end]) else {
            continue;
        };
        let start = inf.end + 1 - det.window;
        let window = &prepared.features[start..=inf.end];
        let valid_fraction = window.iter().filter(|f| f.valid).count() as f64 / det.window as f64;
        if !window_usable(prepared.features[inf.end].valid, valid_fraction, truth) {
            continue;
        }
        predictions.push(WindowPrediction {
            session_id: s.session_id.clone(),
            perspective: s.perspective,
            t: inf.t,
            truth,
            predicted: argmax(&inf.probs),
            confidence: inf.probs[1],
        });
    }

    let raised: Vec<f64> = hysteresis_events(model, &inferences, &det.hysteresis)
        .into_iter()
        .filter(|e| e.kind == EventKind::Raised)
        .map(|e| e.t)
        .collect();
    // each raise matches at most one episode, earliest first
    let mut used = vec![false; raised.len()];
    let episodes = s
        .pauses
        .iter()
        .map(|p| {
            let lo = p.start - cfg.pre_ss_len_s - HIT_SLACK_S;
            let matched = raised
                .iter()
                .enumerate()
                .find(|(i, &t)| !used[*i] && t >= lo && t <= p.end)
                .map(|(i, &t)| {
                    used[i] = true;
                    t
                });
            EpisodeOutcome {
                session_id: s.session_id.clone(),
                perspective: s.perspective,
                pause_start: p.start,
                pause_end: p.end,
                raised_at: matched,
            }
        })
        .collect();
    Ok(SessionResult {
        perspective: s.perspective,
        predictions,
        episodes,
        raises: raised.len(),
        minutes: s.duration() / 60.0,
    })
}

/// Scores `model` on `sessions` with the offline detection pipeline.
pub fn evaluate(model: &LstmModel, sessions: &[Session], cfg: &EvalConfig) -> Result<Evaluation> {
    if sessions.is_empty() {
        return Err(Error::InvalidArgument("no sessions to evaluate".into()));
    }
    if let Some(s) = sessions.iter().find(|s| cfg.training_sessions.contains(&s.session_id)) {
        return Err(Error::InvalidArgument(format!(
            "session {} was used for training",
            s.session_id
        )));
    }
    let results: Vec<SessionResult> = sessions
        .iter()
        .map(|s| evaluate_session(model, s, cfg))
        .collect::<Result<_>>()?;

    let names = model.profile.class_names();
    let merge = |filter: &dyn Fn(&SessionResult) -> bool| {
        let chosen: Vec<&SessionResult> = results.iter().filter(|r| filter(r)).collect();
        let preds: Vec<&WindowPrediction> = chosen.iter().flat_map(|r| &r.predictions).collect();
        let eps: Vec<&EpisodeOutcome> = chosen.iter().flat_map(|r| &r.episodes).collect();
        let raises = chosen.iter().map(|r| r.raises).sum();
        let minutes = chosen.iter().map(|r| r.minutes).sum();
        Metrics::compute(&names, &preds, &eps, raises, minutes)
    };
    let overall = merge(&|_| true);
    let per_perspective = [Perspective::FirstPerson, Perspective::ThirdPerson]
        .into_iter()
        .filter(|p| results.iter().any(|r| r.perspective == *p))
        .map(|p| (p, merge(&|r| r.perspective == p)))
        .collect();
    Ok(Evaluation {
        profile: model.profile,
        overall,
        per_perspective,
        predictions: results.iter().flat_map(|r| r.predictions.clone()).collect(),
        episodes: results.into_iter().flat_map(|r| r.episodes).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt4)
}

/// `(name, value)` pairs in report order.
fn metric_rows(prefix: &str, m: &Metrics) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    let mut push = |name: String, value: String| rows.push((format!("{prefix}.{name}"), value));
    for (i, row) in m.confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            push(format!("confusion_{i}_{j}"), v.to_string());
        }
    }
    for (k, name) in m.class_names.iter().enumerate() {
        push(format!("precision_{name}"), fmt4(m.precision[k]));
        push(format!("recall_{name}"), fmt4(m.recall[k]));
        push(format!("f1_{name}"), fmt4(m.f1[k]));
    }
    push("balanced_accuracy".into(), fmt4(m.balanced_accuracy));
    push("episodes".into(), m.episodes.to_string());
    push("hits".into(), m.hits.to_string());
    push("hit_rate".into(), fmt4(m.hit_rate));
    push("raises".into(), m.raises.to_string());
    push("false_raises".into(), m.false_raises.to_string());
    push("minutes".into(), fmt4(m.minutes));
    push("false_raises_per_min".into(), fmt4(m.false_raises_per_min));
    push("mean_latency_s".into(), fmt_opt(m.mean_latency_s));
    rows
}

fn text_block(out: &mut String, title: &str, m: &Metrics) {
    let _ = writeln!(out, "== {title} ==");
    let _ = writeln!(out, "confusion (rows true, columns predicted):");
    let width = m.class_names.iter().map(String::len).max().unwrap_or(0).max(8);
    let _ = write!(out, "  {:width$}", "");
    for name in &m.class_names {
        let _ = write!(out, " {name:>width$}");
    }
    let _ = writeln!(out);
    for (name, row) in m.class_names.iter().zip(&m.confusion) {
        let _ = write!(out, "  {name:width$}");
        for v in row {
            let _ = write!(out, " {v:>width$}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(
        out,
        "  {:width$} {:>9} {:>9} {:>9}",
        "class", "precision", "recall", "f1"
    );
    for (k, name) in m.class_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {name:width$} {:>9} {:>9} {:>9}",
            fmt4(m.precision[k]),
            fmt4(m.recall[k]),
            fmt4(m.f1[k])
        );
    }
    let _ = writeln!(out, "balanced_accuracy {}", fmt4(m.balanced_accuracy));
    let _ = writeln!(
        out,
        "episodes {} hits {} hit_rate {}",
        m.episodes,
        m.hits,
        fmt4(m.hit_rate)
    );
    let _ = writeln!(
        out,
        "raises {} false_raises {} false_raises_per_min {} over {} min",
        m.raises,
        m.false_raises,
        fmt4(m.false_raises_per_min),
        fmt4(m.minutes)
    );
    let _ = writeln!(out, "mean_latency_s {}", fmt_opt(m.mean_latency_s));
}

pub fn render_report(ev: &Evaluation, format: ReportFormat) -> String {
    let mut sections = vec![("overall".to_string(), &ev.overall)];
    sections.extend(ev.per_perspective.iter().map(|(p, m)| (p.to_string(), m)));
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            let _ = writeln!(out, "model {}", ev.profile);
            let _ = writeln!(
                out,
                "a raise is a hit when it falls within [pre-sickness onset - {HIT_SLACK_S:.0} s, pause end]"
            );
            for (name, m) in sections {
                let _ = writeln!(out);
                text_block(&mut out, &name, m);
            }
        }
        ReportFormat::Csv => {
            out.push_str("name,value\n");
            for (name, m) in sections {
                for (k, v) in metric_rows(&name, m) {
                    let _ = writeln!(out, "{k},{v}");
                }
            }
        }
    }
    out
}

/// Parses a CSV report back into `(name, value)` pairs.
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "name,value")) => {}
        _ => return Err(Error::MissingHeader),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (k, v) = l.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected name,value".into(),
            })?;
            let v = v.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok((k.to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(truth: usize, predicted: usize) -> WindowPrediction {
        WindowPrediction {
            session_id: "s".into(),
            perspective: Perspective::FirstPerson,
            t: 0.0,
            truth,
            predicted,
            confidence: 0.5,
        }
    }

    fn episode(raised_at: Option<f64>) -> EpisodeOutcome {
        EpisodeOutcome {
            session_id: "s".into(),
            perspective: Perspective::FirstPerson,
            pause_start: 10.0,
            pause_end: 15.0,
            raised_at,
        }
    }

    #[test]
    fn perfect_predictions() {
        let p: Vec<WindowPrediction> = [0, 0, 1, 1, 0].iter().map(|&k| pred(k, k)).collect();
        let refs: Vec<&WindowPrediction> = p.iter().collect();
        let m = Metrics::compute(&["normal", "post_ss"], &refs, &[], 0, 1.0);
        assert_eq!(m.confusion, vec![vec![3, 0], vec![0, 2]]);
        assert_eq!(m.balanced_accuracy, 1.0);
        let ev = Evaluation {
            profile: ModelProfile::A,
            overall: m,
            per_perspective: Vec::new(),
            predictions: p,
            episodes: Vec::new(),
        };
        assert!(render_report(&ev, ReportFormat::Text).contains("balanced_accuracy 1.0000"));
    }

    #[test]
    fn all_negative_predictor_has_zero_recall() {
        let p: Vec<WindowPrediction> = [0, 1, 1, 0].iter().map(|&k| pred(k, 0)).collect();
        let refs: Vec<&WindowPrediction> = p.iter().collect();
        let m = Metrics::compute(&["normal", "pre_ss"], &refs, &[], 0, 1.0);
        assert_eq!(m.recall[1], 0.0);
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.balanced_accuracy, 0.5);
    }

    #[test]
    fn event_counts() {
        let eps = [episode(Some(8.0)), episode(None), episode(Some(11.0))];
        let refs: Vec<&EpisodeOutcome> = eps.iter().collect();
        let m = Metrics::compute(&["normal", "pre_ss"], &[], &refs, 5, 2.0);
        assert_eq!(m.hits, 2);
        assert_eq!(m.false_raises, 3);
        assert_eq!(m.false_raises_per_min, 1.5);
        assert!((m.hit_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.mean_latency_s, Some(-0.5));
    }

    #[test]
    fn csv_round_trips_at_four_decimals() {
        let p: Vec<WindowPrediction> = [(0, 0), (0, 1), (1, 1), (1, 0), (1, 1), (0, 0), (0, 0)]
            .iter()
            .map(|&(a, b)| pred(a, b))
            .collect();
        let refs: Vec<&WindowPrediction> = p.iter().collect();
        let eps = [episode(Some(7.3)), episode(None)];
        let erefs: Vec<&EpisodeOutcome> = eps.iter().collect();
        let m = Metrics::compute(&["normal", "pre_ss"], &refs, &erefs, 3, 3.0);
        let ev = Evaluation {
            profile: ModelProfile::B,
            overall: m.clone(),
            per_perspective: vec![(Perspective::FirstPerson, m.clone())],
            predictions: p,
            episodes: eps.to_vec(),
        };
        let parsed = parse_report_csv(&render_report(&ev, ReportFormat::Csv)).unwrap();
        let get = |k: &str| parsed.iter().find(|(n, _)| n == k).unwrap().1;
        let r4 = |x: f64| fmt4(x).parse::<f64>().unwrap();
        assert_eq!(get("overall.balanced_accuracy"), r4(m.balanced_accuracy));
        assert_eq!(get("1PP.recall_pre_ss"), r4(m.recall[1]));
        assert_eq!(get("overall.confusion_1_0"), 1.0);
        assert_eq!(get("overall.hit_rate"), 0.5);
        assert_eq!(get("overall.mean_latency_s"), r4(-2.7));
        assert_eq!(get("overall.false_raises_per_min"), r4(2.0 / 3.0));
    }

    #[test]
    fn empty_session_set_is_an_error() {
        use crate::features::NormStats;
        use crate::rnn::LstmParams;
        let m = LstmModel::new(ModelProfile::A, LstmParams::zeros(5, 2, 2), NormStats::identity());
        assert!(evaluate(&m, &[], &EvalConfig::default()).is_err());
    }
}

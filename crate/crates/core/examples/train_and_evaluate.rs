//! Trains one model on synthetic 1PP sessions and prints its evaluation
//! report for held-out 1PP and 3PP sessions.
//!
//!     cargo run --release -p sickwatch --example train_and_evaluate -- B 10

use sickwatch::eval::{evaluate, render_report, EvalConfig, ReportFormat};
use sickwatch::synth::{generate_session, SynthSpec};
use sickwatch::trainer::{train, TrainConfig};
use sickwatch::{ModelProfile, Perspective, Session};

fn sessions(p: Perspective, seeds: std::ops::Range<u64>) -> sickwatch::Result<Vec<Session>> {
    seeds
        .map(|s| generate_session(&SynthSpec::for_perspective(p, s)))
        .collect()
}

fn main() -> sickwatch::Result<()> {
    let mut args = std::env::args().skip(1);
    let profile: ModelProfile = args.next().as_deref().unwrap_or("A").parse()?;
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let train_set = sessions(Perspective::FirstPerson, 0..20)?;
    let mut test = sessions(Perspective::FirstPerson, 1000..1010)?;
    test.extend(sessions(Perspective::ThirdPerson, 2000..2010)?);

    let out = train(
        &train_set,
        &TrainConfig {
            profile,
            epochs,
            ..TrainConfig::default()
        },
    )?;
    for r in &out.history {
        println!(
            "epoch {:>2}  train loss {:.4}  val balanced accuracy {:.4}",
            r.epoch, r.train_loss, r.val_balanced_accuracy
        );
    }
    let ev = evaluate(&out.model, &test, &EvalConfig::default())?;
    print!("{}", render_report(&ev, ReportFormat::Text));
    Ok(())
}

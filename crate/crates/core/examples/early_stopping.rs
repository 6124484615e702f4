//! The patience automaton on a metric that plateaus.

use hybseg::training::{Decision, EarlyStopState};

fn main() -> hybseg::Result<()> {
    let mut es = EarlyStopState::new(37, 1e-4);
    for epoch in 1..=100 {
        // Improves until epoch 30, then only by less than min_delta.
        let dsc = 0.5 + 0.01 * epoch.min(30) as f64 + 1e-6 * epoch as f64;
        if es.update(dsc, epoch)? == Decision::Stop {
            println!("stopped after epoch {epoch}");
            break;
        }
    }
    println!("best {:.4} at epoch {}", es.best_value, es.best_epoch);
    Ok(())
}

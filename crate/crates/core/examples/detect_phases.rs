//! Saturation, surges, rank extrema and regime labels on the synthetic
//! regime fixtures, or on a metrics file given as the first argument.
//!
//! cargo run --release --example detect_phases -- [runs/x/metrics.jsonl]

use std::path::Path;

use deepgrok::detect::{classify_run, detect_rank_double_descent, fixtures, ClassifyParams};
use deepgrok::report::phase_report;
use deepgrok::runner::MetricsFile;

fn main() -> deepgrok::Result<()> {
    if let Some(path) = std::env::args().nth(1) {
        let report = phase_report(&MetricsFile::read(Path::new(&path))?)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let params = ClassifyParams::default();
    for (name, (train, test)) in [
        ("grokking", fixtures::grokking()),
        ("generalizes", fixtures::generalizes()),
        ("fails", fixtures::fails()),
        ("two_stage", fixtures::two_stage()),
    ] {
        let r = classify_run(&train, &test, &[], &params)?;
        println!(
            "{name:<12} regime {:<20} train sat {:?}  test sat {:?}  surges {}",
            r.regime.as_str(),
            r.t_train_sat,
            r.t_test_sat,
            r.surges.len()
        );
    }
    let rank = detect_rank_double_descent(&fixtures::rank_v_then_fall())?;
    println!(
        "rank fixture legs {:?}, double descent {}",
        rank.legs(),
        rank.double_descent
    );
    Ok(())
}

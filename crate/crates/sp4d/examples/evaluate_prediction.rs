//! Score a decomposition against ground truth.
//!
//! Runs the full pipeline with *estimated* flow on the vanish scenario
//! and prints the Hungarian-matched accuracy, ID consistency, instance
//! count error and flow endpoint error.
//!
//! ```bash
//! cargo run --release --example evaluate_prediction
//! ```

use sp4d::config::PipelineConfig;
use sp4d::pipeline::{decompose, FlowSource};
use sp4d::synth::{evaluate, generate_scene, scenarios};

fn main() -> sp4d::Result<()> {
    let spec = scenarios::vanish_at_t();
    let (seq, truth) = generate_scene(&spec)?;
    let cfg = PipelineConfig::default();

    let dec = decompose(seq, &cfg, FlowSource::Estimate)?;
    let labels = dec.label_data();
    let report = evaluate(
        &labels.instance_labeling(),
        &dec.dynamic_flags(),
        &truth,
        Some(&dec.flow),
    )?;

    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

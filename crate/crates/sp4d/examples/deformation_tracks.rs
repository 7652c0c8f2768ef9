//! Canonical frames and per-point deformation initialization.
//!
//! Each instance picks the frame with its maximal point count as the
//! canonical shape, then accumulates instance mean flow into per-frame
//! translation offsets: zero at the canonical frame, forward sums after
//! it, negated backward sums before it. Scale and rotation offsets start
//! at exactly zero.
//!
//! ```bash
//! cargo run --release --example deformation_tracks
//! ```

#![allow(clippy::needless_range_loop)]

use sp4d::config::PipelineConfig;
use sp4d::pipeline::{decompose, FlowSource};
use sp4d::synth::{generate_scene, scenarios};

fn main() -> sp4d::Result<()> {
    let spec = scenarios::vanish_at_t();
    let (seq, truth) = generate_scene(&spec)?;
    let cfg = PipelineConfig::default();
    let dec = decompose(seq, &cfg, FlowSource::Provided(truth.flow.clone()))?;

    for track in &dec.tracks {
        let inst = &dec.instances.instances[track.instance_id];
        println!(
            "instance {} [{}..{}], canonical t* = {} ({} points):",
            inst.id,
            inst.t1,
            inst.t2,
            track.canonical_frame,
            track.canonical_points.len()
        );
        for step in &track.steps {
            let f = dec
                .instance_flow(inst.id, step.t)
                .map(|f| format!("F = [{:+.3}, {:+.3}, {:+.3}]", f[0], f[1], f[2]))
                .unwrap_or_else(|| "F undefined (last frame)".to_string());
            println!(
                "  t={}: dx = [{:+.3}, {:+.3}, {:+.3}]  ds = {:?}  dr = {:?}  {}",
                step.t, step.delta_x[0], step.delta_x[1], step.delta_x[2],
                step.delta_s, step.delta_r, f
            );
        }
        // the track telescopes: dx[t+1] - dx[t] equals the instance flow
        for w in track.steps.windows(2) {
            if w[0].t >= track.canonical_frame {
                let f = dec.instance_flow(inst.id, w[0].t).unwrap_or([0.0; 3]);
                for a in 0..3 {
                    assert_eq!(w[1].delta_x[a], w[0].delta_x[a] + f[a]);
                }
            }
        }
    }
    Ok(())
}

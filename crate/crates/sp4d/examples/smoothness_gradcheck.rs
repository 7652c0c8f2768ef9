//! Smoothness regularizers and their gradient check.
//!
//! Evaluates the edge-aware 2D flow smoothness and the 3D KNN velocity
//! smoothness on random inputs, then compares the analytic gradients
//! against central finite differences, as the `sp4d reg-check` subcommand
//! does.
//!
//! ```bash
//! cargo run --release --example smoothness_gradcheck
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sp4d::config::PipelineConfig;
use sp4d::pipeline::reg_check;
use sp4d::reg::{FlowMap2D, Image2D, VelocityField3D};

fn main() -> sp4d::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (h, w) = (12, 16);
    let flow = FlowMap2D::new(
        h,
        w,
        (0..h * w)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect(),
    )?;
    let image = Image2D::new(
        h,
        w,
        3,
        (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let positions: Vec<[f64; 3]> = (0..60)
        .map(|_| {
            [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let velocities: Vec<[f64; 3]> = (0..60)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.2..0.2),
            ]
        })
        .collect();
    let field = VelocityField3D::new(velocities, positions, 8)?;

    // moderate edge weighting for the check: under the production default
    // (lambda = 150) random edges damp terms below what central
    // differences can resolve in double precision
    let mut cfg = PipelineConfig::default();
    cfg.set("reg.lambda_edge", "2.0")?;
    let report = reg_check(&flow, &image, Some(&field), &cfg)?;
    println!("2D loss = {:.6}", report.loss2d);
    println!("2D gradient max relative error = {:.3e}", report.grad2d_max_rel_err);
    println!("3D loss = {:.6}", report.loss3d.expect("field given"));
    println!(
        "3D gradient max relative error = {:.3e}",
        report.grad3d_max_rel_err.expect("field given")
    );
    println!(
        "tolerance {:.0e}: {}",
        report.tolerance,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(())
}

//! Stability sweep for the shrinking-circle run (not part of the suite).

use varic_core::barriers::{sample_shape, Shape, ShapeSampler};
use varic_core::flow::{run_flow, FlowConfig, MassPolicy, Scheme, TangentPolicy};
use varic_core::kernels::default_bump_pair;
use varic_core::operator::OperatorSpec;

fn main() {
    let pair = default_bump_pair(2);
    for scheme in [Scheme::ContinuousRk4, Scheme::Explicit] {
        for mass in [MassPolicy::Frozen, MassPolicy::RecomputePerStep] {
            for (n, eps) in [(1000usize, 0.1f64), (1000, 0.15), (500, 0.15), (500, 0.2)] {
                let v = sample_shape(&ShapeSampler::new(Shape::unit_circle(), n)).unwrap();
                let tau = 1e-4;
                let mut cfg =
                    FlowConfig::new(eps, tau, scheme, OperatorSpec::parse("2*Id").unwrap());
                cfg.tangent_policy = TangentPolicy::Frozen;
                cfg.mass_policy = mass;
                let steps = (0.3 / tau).round() as usize;
                cfg.snapshot_every = steps / 10;
                let start = std::time::Instant::now();
                match run_flow(&v, &pair, &cfg, steps) {
                    Err(e) => println!(
                        "{scheme:?} {mass:?} N={n} eps={eps}: ERROR {e} ({:.1?})",
                        start.elapsed()
                    ),
                    Ok(traj) => {
                        let mut worst: f64 = 0.0;
                        for (idx, snap) in traj.snapshots.iter().enumerate() {
                            let t = traj.times[idx];
                            if t == 0.0 {
                                continue;
                            }
                            let mean_r: f64 = snap.points.iter().map(|p| p.norm()).sum::<f64>()
                                / snap.len() as f64;
                            worst = worst.max((mean_r - (1.0 - 2.0 * t).sqrt()).abs());
                        }
                        println!(
                            "{scheme:?} {mass:?} N={n} eps={eps}: worst {worst:.6} ({:.1?})",
                            start.elapsed()
                        );
                    }
                }
            }
        }
    }
}

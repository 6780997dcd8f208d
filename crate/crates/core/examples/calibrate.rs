//! Calibration sweep for the acceptance thresholds (not part of the suite).

use varic_core::barriers::{
    convergence_study, sample_shape, NRule, Shape, ShapeSampler, SpecLimit,
};
use varic_core::flow::{run_flow, FlowConfig, Scheme, TangentPolicy};
use varic_core::kernels::default_bump_pair;
use varic_core::operator::OperatorSpec;

const CONVERGING: [&str; 9] = [
    "S",
    "-2*Sperp",
    "2*Id",
    "Tperp.S",
    "-2*Tperp.Sperp",
    "2*Tperp",
    "2*Sperp.Tperp",
    "S.T",
    "-1*Sperp.T",
];
const NULL: [&str; 4] = ["T", "T.S", "S.Tperp", "T.Sperp"];

fn main() {
    let epsilons = [0.4, 0.2, 0.1, 0.05];

    println!("== circle ==");
    let sampler = ShapeSampler::new(Shape::unit_circle(), 0).with_wobble(2.0);
    let pair = default_bump_pair(2);
    let mut specs = Vec::new();
    for s in CONVERGING {
        specs.push((OperatorSpec::parse(s).unwrap(), SpecLimit::MeanCurvature));
    }
    for s in NULL {
        specs.push((OperatorSpec::parse(s).unwrap(), SpecLimit::Zero));
    }
    let rows = convergence_study(&sampler, &specs, &epsilons, &NRule::default(), &pair).unwrap();
    for s in CONVERGING.iter().chain(NULL.iter()) {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.spec == OperatorSpec::parse(s).unwrap().to_string())
            .map(|r| r.max_error)
            .collect();
        let mono = errs.windows(2).all(|w| w[1] < w[0]);
        println!(
            "{s:>16}: {:?} mono={mono} ratio={:.4}",
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            errs.last().unwrap() / errs.first().unwrap()
        );
    }

    println!("== sphere ==");
    let sampler = ShapeSampler::new(Shape::unit_sphere(), 0);
    let pair3 = default_bump_pair(3);
    let mut specs3 = Vec::new();
    for s in CONVERGING {
        specs3.push((OperatorSpec::parse(s).unwrap(), SpecLimit::MeanCurvature));
    }
    let rows = convergence_study(&sampler, &specs3, &epsilons, &NRule::default(), &pair3).unwrap();
    for s in CONVERGING {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.spec == OperatorSpec::parse(s).unwrap().to_string())
            .map(|r| r.max_error)
            .collect();
        let mono = errs.windows(2).all(|w| w[1] < w[0]);
        println!(
            "{s:>16}: {:?} mono={mono}",
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()
        );
    }

    println!("== shrinking circle ==");
    for (scheme, tau, n, eps) in [
        (Scheme::ContinuousRk4, 1e-4, 1000, 0.05),
        (Scheme::Explicit, 1e-4, 1000, 0.05),
        (Scheme::Implicit, 1e-3, 1000, 0.05),
    ] {
        let v = sample_shape(&ShapeSampler::new(Shape::unit_circle(), n)).unwrap();
        let pair = default_bump_pair(2);
        let mut cfg = FlowConfig::new(eps, tau, scheme, OperatorSpec::parse("2*Id").unwrap());
        cfg.tangent_policy = TangentPolicy::Frozen;
        let steps = (0.3 / tau).round() as usize;
        cfg.snapshot_every = steps / 10;
        let start = std::time::Instant::now();
        let traj = run_flow(&v, &pair, &cfg, steps).unwrap();
        let mut worst: f64 = 0.0;
        for (idx, snap) in traj.snapshots.iter().enumerate() {
            let t = traj.times[idx];
            if t == 0.0 {
                continue;
            }
            let mean_r: f64 =
                snap.points.iter().map(|p| p.norm()).sum::<f64>() / snap.len() as f64;
            let expected = (1.0 - 2.0 * t).sqrt();
            worst = worst.max((mean_r - expected).abs());
        }
        println!(
            "{scheme:?} tau={tau} N={n} eps={eps}: worst |mean_r - sqrt(1-2t)| = {worst:.5} ({:.1?})",
            start.elapsed()
        );
    }

    println!("== implicit vs explicit Richardson ==");
    let v = sample_shape(&ShapeSampler::new(Shape::unit_circle(), 400)).unwrap();
    let pair = default_bump_pair(2);
    let mut diffs = Vec::new();
    let taus = [2e-3, 1e-3, 5e-4, 2.5e-4];
    for &tau in &taus {
        let mut cfg_e = FlowConfig::new(0.1, tau, Scheme::Explicit, OperatorSpec::parse("2*Id").unwrap());
        cfg_e.tangent_policy = TangentPolicy::Frozen;
        let mut cfg_i = cfg_e.clone();
        cfg_i.scheme = Scheme::Implicit;
        let e = varic_core::flow::step_explicit(&v, &pair, &cfg_e).unwrap();
        let i = varic_core::flow::step_implicit(&v, &pair, &cfg_i).unwrap();
        let diff: f64 = e
            .points
            .iter()
            .zip(&i.points)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        diffs.push(diff);
    }
    let mut slopes = Vec::new();
    for k in 0..diffs.len() - 1 {
        slopes.push((diffs[k] / diffs[k + 1]).ln() / (taus[k] / taus[k + 1]).ln());
    }
    println!("diffs {diffs:?} slopes {slopes:?}");
}

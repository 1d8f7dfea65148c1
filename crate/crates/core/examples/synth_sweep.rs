//! Runs dense transfer over a range of synthetic pairs and prints per-pair
//! accuracy, collision and timing figures.
//!
//! ```text
//! cargo run --release --example synth_sweep -- 20 assembly_lambda_nav=0
//! ```

use std::time::Instant;

use traj_analogy::metrics::{collision_ratio, median, trajectory_aed, Obstacles};
use traj_analogy::pipeline::{run_transfer, Mode};
use traj_analogy::synth::{generate_pair, SynthSpec};
use traj_analogy::{Config, Trajectory};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count: u64 = args.first().and_then(|a| a.parse().ok()).unwrap_or(10);
    let mut config = Config::default();
    config.apply_overrides(&args[1.min(args.len())..]).expect("bad override");
    let mut aeds = Vec::new();
    let mut coll = Vec::new();
    for seed in 0..count {
        let spec = SynthSpec::random(seed);
        let pair = match generate_pair(&spec, &config) {
            Ok(p) => p,
            Err(e) => {
                println!("seed {seed}: synth failed: {e}");
                continue;
            }
        };
        let t = Instant::now();
        let out = match run_transfer(&pair.target, &pair.reference, &pair.source, Mode::Dense, &config, 0) {
            Ok(o) => o,
            Err(e) => {
                println!("seed {seed}: transfer failed: {e}");
                continue;
            }
        };
        let secs = t.elapsed().as_secs_f64();
        let aed = trajectory_aed(&out.trajectory, &pair.gt_reference, 256);
        let obstacles = Obstacles::new(&pair.reference);
        let c1 = collision_ratio(out.trajectory.points(), &obstacles, 0.1);
        let c0 = collision_ratio(&out.initial, &obstacles, 0.1);
        let init_aed = Trajectory::from_points_dedup(out.initial.clone(), None)
            .map(|t| trajectory_aed(&t, &pair.gt_reference, 256))
            .unwrap_or(f64::NAN);
        println!(
            "seed {seed:3} groups {:?} rot {} flip {} scale {:.2} jitter {:.2}: aed {aed:.3} (init {init_aed:.3}) coll {c1:.3} (init {c0:.3}) {secs:.2}s clusters {}/{}",
            spec.groups,
            spec.rotation,
            spec.flip,
            spec.scale,
            spec.jitter,
            out.report.target_clusters,
            out.report.reference_clusters
        );
        aeds.push(aed);
        coll.push(c1);
    }
    let ok = aeds.iter().filter(|&&a| a <= 0.5).count();
    println!(
        "median aed {:.3}, <=0.5: {}/{}, mean collision {:.4}",
        median(&aeds),
        ok,
        aeds.len(),
        coll.iter().sum::<f64>() / coll.len().max(1) as f64
    );
}

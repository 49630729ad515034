use anyhow::Result;
use hew_core::certificate::{objective_at, Geometry, NodeSchedule, UpperState};
use hew_core::solver::{alternating_solve, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{lu, unif, Check, Tracker};

const INSTANCES: usize = 1000;

pub(super) struct Instance {
    pub state: UpperState,
    pub geom: Geometry,
    pub schedules: Vec<NodeSchedule>,
}

pub(super) fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize) -> Instance {
    let l = lu(rng, 0.1, 10.0);
    let r = lu(rng, 0.1, 10.0);
    let geom = Geometry::new(l, r).unwrap();
    let u = unif(rng, 0.01, 1.0) * geom.bar_f();
    let q = if rng.random::<f64>() < 0.2 { 0.0 } else { lu(rng, 1e-6, 1.0) * l * u };
    let s = rng.random_range(1..=max_nodes);
    let schedules = (0..s)
        .map(|_| {
            let lo = lu(rng, 1e-3, 0.1);
            let hi = lo + rng.random::<f64>() * (1.0 - lo);
            let v2 = if rng.random::<f64>() < 0.1 { 0.0 } else { lu(rng, 1e-4, 10.0) * l * u };
            NodeSchedule::new([1, 2, 4, 8][rng.random_range(0..4)], rng.random_range(1..=32), v2, lo, hi).unwrap()
        })
        .collect();
    Instance { state: UpperState::new(u, q).unwrap(), geom, schedules }
}

pub fn run() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa17e);
    let instances: Vec<Instance> = (0..INSTANCES).map(|_| random_instance(&mut rng, 6)).collect();
    let cfg = SolverConfig::default();
    let results: Vec<_> = instances
        .par_iter()
        .map(|inst| -> Result<_> {
            let out = alternating_solve(&inst.state, &inst.schedules, &inst.geom, &cfg, None)?;
            let n = inst.schedules.len();
            let mid: Vec<f64> = inst.schedules.iter().map(|s| 0.5 * (s.theta_lo + s.theta_hi)).collect();
            let bench = objective_at(&inst.state, &inst.schedules, &inst.geom, &vec![1.0 / n as f64; n], &mid)?;
            Ok((out.trace, out.objective, bench))
        })
        .collect::<Result<_>>()?;
    let mut mono = Tracker::new("objective trace nonincreasing  [max J_(k+1) - J_k]", 0.0);
    let mut bench = Tracker::new("final value <= uniform-weight midpoint-amplitude benchmark  [max J - J_bench]", 0.0);
    let mut last = Tracker::new("reported objective equals last trace entry  [max |diff|]", 0.0);
    for (k, (trace, obj, jb)) in results.iter().enumerate() {
        let ctx = || format!("instance {k}, trace {trace:?}");
        let worst = trace.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        mono.record(if trace.len() < 2 { 0.0 } else { worst }, ctx);
        bench.record(obj - jb, ctx);
        last.record((trace.last().copied().unwrap_or(f64::NAN) - obj).abs(), ctx);
    }
    Ok(vec![mono, bench, last].into_iter().map(Tracker::finish).collect())
}

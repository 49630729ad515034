//! Every method driven for a few rounds on random synthetic quadratics.

use hew_core::algorithms::{CertificateSetup, Federation, MethodKind, MethodRunner, MethodSpec};
use hew_core::certificate::Geometry;
use hew_core::models::{FiniteSumModel, SyntheticConfig, SyntheticQuadratic};
use proptest::prelude::*;

const ROUNDS: usize = 6;

/// Per round: iterate, weights, scalars sent, server-average residual.
type Trace = Vec<(Vec<f64>, Vec<f64>, u64, Option<f64>)>;

fn model(seed: u64, n: usize) -> SyntheticQuadratic {
    SyntheticQuadratic::random(&SyntheticConfig {
        n_clients: n,
        components_per_client: (0..n).map(|i| 3 + i % 4).collect(),
        dim: 4,
        eig_range: (0.3, 2.0),
        offset_scale: 0.5,
        client_shift: 1.0,
        shared_client_hessian: false,
        seed,
    })
    .unwrap()
}

fn spec(kind: MethodKind, m: &SyntheticQuadratic, x0: &[f64]) -> MethodSpec {
    let ball = m.ball(x0, 2.0);
    let mut s = MethodSpec::new(kind);
    s.vartheta = 0.3;
    s.certificate = Some(CertificateSetup {
        geometry: Geometry::new(ball.l_hat, ball.r).unwrap(),
        v2: (0..m.n_clients()).map(|i| m.variance_sup(i, &ball.x_star_ref, ball.r)).collect(),
        theta_lo: 0.05,
        theta_hi: 1.0,
        u0: None,
        q0: 0.0,
        upload_proxies: false,
    });
    s
}

fn trace(kind: MethodKind, m: &SyntheticQuadratic, h: &[usize], seed: u64) -> Trace {
    let x0 = vec![0.0; m.dim()];
    let batches = vec![2; m.n_clients()];
    let fed = Federation::new(m, h.to_vec(), batches, m.exact_smoothness(), seed).unwrap();
    let mut r = MethodRunner::new(&fed, spec(kind, m, &x0), x0).unwrap();
    (0..ROUNDS)
        .map(|_| {
            let rec = r.step().unwrap();
            let st = r.state();
            let residual = kind.is_corrected().then(|| st.server_average_residual());
            (st.x.clone(), rec.metrics.weights, rec.metrics.comm, residual)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rounds_keep_weights_feasible_and_are_replayable(
        seed in any::<u64>(),
        n in 2usize..6,
        hs in proptest::collection::vec(prop_oneof![Just(1usize), Just(2), Just(4), Just(8)], 6),
    ) {
        let m = model(seed, n);
        let h = &hs[..n];
        for &kind in MethodKind::ALL.iter() {
            let t = trace(kind, &m, h, seed);
            for (x, w, comm, residual) in &t {
                prop_assert!(x.iter().all(|v| v.is_finite()), "{kind}: non-finite iterate");
                prop_assert!(w.iter().all(|&v| v >= 0.0), "{kind}: negative weight");
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "{kind}: weights sum to {}", w.iter().sum::<f64>());
                prop_assert!(*comm > 0, "{kind}: nothing transmitted");
                if let Some(r) = residual {
                    prop_assert!(*r <= 1e-10, "{kind}: server-average residual {r:e}");
                }
            }
            prop_assert_eq!(&t, &trace(kind, &m, h, seed), "{} is not replayable", kind);
        }
    }
}

use bdflow_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn triple(a: [f64; 3], b: [f64; 2]) -> ProblemTriple {
    let m = DMatrix::from_row_slice(2, 2, &[a[0], a[1], a[1], a[2]]);
    ProblemTriple::simple(m, DVector::from_row_slice(&b)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // the flow is −∇f for the metric g_ε
    #[test]
    fn vector_field_is_a_gradient(
        a in (2.0f64..5.0, -0.5f64..0.5, 1.0f64..4.0),
        b in (-0.5f64..0.5, -0.4f64..0.4),
        eps in 0.01f64..0.5,
        p in (-1.0f64..1.0, -1.0f64..1.0, -1.5f64..1.5),
    ) {
        let t = triple([a.0, a.1, a.2], [b.0, b.1]);
        let q = [p.0, p.1, p.2];
        let ginv = t.metric_inverse_flat(eps, &q).unwrap();
        let grad = t.potential_gradient(eps, &q);
        let v = t.rhs_flat(eps, &q);
        let diff = (&ginv * grad + &v).amax();
        prop_assert!(diff <= 1e-9 * v.amax().max(1.0), "{}", diff);
    }

    #[test]
    fn w_coordinates_round_trip(
        b in (-0.5f64..0.5, -0.4f64..0.4),
        p in (-3.0f64..3.0, -3.0f64..3.0, -2.0f64..2.0),
    ) {
        let t = triple([3.0, 0.2, -2.0], [b.0, b.1]);
        let q = Point::from_slice(&[p.0, p.1, p.2]);
        let back = t.from_w(&t.to_w(&q));
        prop_assert!((back.x - &q.x).amax() < 1e-12 && (back.z - q.z).abs() < 1e-15);
    }

    #[test]
    fn limit_solution_stays_on_slow_manifold(s in -10.0f64..10.0, b in (-0.5f64..0.5, -0.4f64..0.4)) {
        let t = triple([3.0, 0.2, 2.0], [b.0, b.1]);
        prop_assert!(t.to_w(&t.limit_solution(s)).w.amax() < 1e-14);
    }
}

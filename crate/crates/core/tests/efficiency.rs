//! Temporal efficiency against analytic integrals of piecewise-linear traces.

use agn_sim::metrics::{temporal_efficiency, Trace};
use proptest::prelude::*;

/// Exact integral over [0, bound] of the piecewise-linear interpolant of
/// `points`, extended flat before the first sample; segment by segment.
fn analytic(points: &[(f64, f64)], bound: f64) -> f64 {
    let (t0, v0) = points[0];
    let mut total = v0 * t0.min(bound);
    for w in points.windows(2) {
        let ((a, fa), (b, fb)) = (w[0], w[1]);
        if a >= bound {
            break;
        }
        let end = b.min(bound);
        let f_end = fa + (fb - fa) * (end - a) / (b - a);
        total += (end - a) * (fa + f_end) / 2.0;
    }
    total
}

fn trace_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.01f64..5.0, 0.0f64..1.0), 1..30).prop_map(|steps| {
        let mut t = 0.0;
        steps
            .into_iter()
            .map(|(dt, v)| {
                t += dt;
                (t, v + 0.01)
            })
            .collect()
    })
}

#[test]
fn analytic_fixtures() {
    let ramp = Trace::from_points("acc", [(0.0, 0.0), (10.0, 1.0)]).unwrap();
    let half = Trace::from_points("acc", [(0.0, 0.5), (20.0, 0.5)]).unwrap();
    let r = temporal_efficiency(&ramp, &half).unwrap();
    assert_eq!((r.m_shared, r.surface_a, r.surface_b, r.ratio), (10.0, 5.0, 5.0, 1.0));

    // tent on [0, 4] peaking at 2 vs a late-starting plateau: ∫ tent = 4, ∫ plateau = 0.5 * 4
    let tent = Trace::from_points("acc", [(0.0, 0.0), (2.0, 2.0), (4.0, 0.0)]).unwrap();
    let plateau = Trace::from_points("acc", [(1.0, 0.5), (6.0, 0.5)]).unwrap();
    let r = temporal_efficiency(&tent, &plateau).unwrap();
    assert!((r.surface_a - 4.0).abs() < 1e-12);
    assert!((r.surface_b - 2.0).abs() < 1e-12);
    assert!((r.ratio - 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn matches_analytic_integrals(a in trace_strategy(), b in trace_strategy()) {
        let ta = Trace::from_points("acc", a.clone()).unwrap();
        let tb = Trace::from_points("acc", b.clone()).unwrap();
        let r = temporal_efficiency(&ta, &tb).unwrap();
        let m = a.last().unwrap().0.min(b.last().unwrap().0);
        prop_assert_eq!(r.m_shared, m);
        prop_assert!((r.surface_a - analytic(&a, m)).abs() <= 1e-12 * r.surface_a.max(1.0));
        prop_assert!((r.surface_b - analytic(&b, m)).abs() <= 1e-12 * r.surface_b.max(1.0));
    }

    #[test]
    fn identity_antisymmetry_truncation(a in trace_strategy(), b in trace_strategy(), extra in trace_strategy()) {
        let ta = Trace::from_points("acc", a.clone()).unwrap();
        let tb = Trace::from_points("acc", b.clone()).unwrap();
        prop_assert_eq!(temporal_efficiency(&ta, &ta).unwrap().ratio, 1.0);
        let ab = temporal_efficiency(&ta, &tb).unwrap().ratio;
        let ba = temporal_efficiency(&tb, &ta).unwrap().ratio;
        prop_assert!((ab * ba - 1.0).abs() <= 1e-12);

        // extend whichever trace is longer past its end
        let (longer, shorter, a_is_longer) = if a.last().unwrap().0 >= b.last().unwrap().0 { (a, tb, true) } else { (b, ta, false) };
        let end = longer.last().unwrap().0;
        let mut extended = longer.clone();
        extended.extend(extra.iter().map(|(t, v)| (end + t, *v)));
        let te = Trace::from_points("acc", extended).unwrap();
        let tl = Trace::from_points("acc", longer).unwrap();
        let (before, after) = if a_is_longer {
            (temporal_efficiency(&tl, &shorter).unwrap(), temporal_efficiency(&te, &shorter).unwrap())
        } else {
            (temporal_efficiency(&shorter, &tl).unwrap(), temporal_efficiency(&shorter, &te).unwrap())
        };
        prop_assert_eq!(before, after);
    }
}

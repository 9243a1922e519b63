use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use vulab::manifold::{dv_continuity_check, grad_chain_check, trace};
use vulab::oracle::builtin;
use vulab::search::SolverConfig;
use vulab::tilt::tilt_map;
use vulab::ulag::ULagContext;

fn ctx(name: &str) -> ULagContext<f64> {
    ULagContext::at_base(builtin(name).unwrap(), 0.5, SolverConfig::default()).unwrap()
}

/// Minimizer of `v ↦ max(u² + (y+v−1)², y+v)` by bisection on the kink, where
/// `y` is the base ordinate: the crossing of the two pieces.
fn crossing_selection(u: f64) -> f64 {
    let y = (3.0 - 5f64.sqrt()) / 2.0;
    let gap = |v: f64| u * u + (y + v - 1.0).powi(2) - (y + v);
    let (mut lo, mut hi) = (0.0, 0.4);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn crossing_selection_matches_the_kink(u in -0.3..0.3f64) {
        let c = ctx("crossing_max");
        let p = c.v_of_u(&[u]).unwrap();
        let xb = c.model.base_point().to_vec();
        prop_assert!((p.x[1] - xb[1] - crossing_selection(u)).abs() <= 1e-8);
        prop_assert!((p.x[1] - xb[1] - (5f64.sqrt() - (5.0 - 4.0 * u * u).sqrt()) / 2.0).abs() <= 1e-8);
    }

    #[test]
    fn crossing_gradient_matches_the_chain_rule(u in -0.3..0.3f64) {
        let g = ctx("crossing_max").grad_l(&[u], None).unwrap();
        prop_assert!((g.z_u[0].abs() - (2.0 * u / (5.0 - 4.0 * u * u).sqrt()).abs()).abs() <= 1e-6);
    }

    #[test]
    fn quadratic_tilt_map_solves_the_linear_system(a in 0.5..4.0f64, b in 0.5..4.0f64, z1 in -0.2..0.2f64, z2 in -0.2..0.2f64) {
        let f = builtin::<f64>(&format!("quadratic(diag({a},{b}))")).unwrap();
        let t = tilt_map(&f, &[0.0, 0.0], 1.0, &[z1, z2], &SolverConfig::default());
        prop_assert!(t.single_valued);
        prop_assert!((t.minimizers[0][0] - z1 / a).abs() <= 1e-6);
        prop_assert!((t.minimizers[0][1] - z2 / b).abs() <= 1e-6);
    }

    #[test]
    fn tilting_by_the_gradient_recovers_the_trace_point(u in -0.2..0.2f64) {
        let c = ctx("abs_plus_quad");
        let g = c.grad_l(&[u], None).unwrap();
        let z: Vec<f64> = c.u_basis.mul_vec(&g.z_u).iter().zip(c.z_bar_v_full()).map(|(a, b)| a + b).collect();
        let t = tilt_map(&c.model, c.model.base_point(), 0.5, &z, &c.solver);
        prop_assert!(t.single_valued);
        let back = c.u_basis.tr_mul_vec(&t.minimizers[0]);
        prop_assert!((back[0] - u).abs() <= 1e-6);
    }
}

#[test]
fn abs_plus_quad_lagrangian_is_u_squared() {
    let c = ctx("abs_plus_quad");
    let p = c.v_of_u(&[0.3]).unwrap();
    assert_abs_diff_eq!(p.value, 0.09, epsilon = 1e-12);
    assert!(p.v.iter().all(|v| v.abs() <= 1e-9));
    assert_abs_diff_eq!(c.grad_l(&[0.3], None).unwrap().z_u[0].abs(), 0.6, epsilon = 1e-8);
    assert!(c.l_eps(&[0.6]).unwrap().is_infinite());
}

#[test]
fn chain_pairings_agree_at_a_tenth() {
    let c = ctx("crossing_max");
    let tr = trace(&c, 0.1, 3).unwrap();
    let rep = grad_chain_check(&tr).unwrap();
    let expected = 0.2 / (5.0f64 - 0.04).sqrt();
    let at_tenth: Vec<_> = rep.rows.iter().filter(|r| (r.u[0].abs() - 0.1).abs() < 1e-12).collect();
    assert_eq!(at_tenth.len(), 4);
    for r in at_tenth {
        assert_abs_diff_eq!(r.pairing[0].abs(), expected, epsilon = 1e-6);
    }
}

#[test]
fn dv_jumps_shrink_with_the_grid() {
    let c = ctx("crossing_max");
    let tr = trace(&c, 0.2, 11).unwrap();
    let levels = dv_continuity_check(&tr, 1).unwrap();
    let ratio = levels[1].max_jump / levels[0].max_jump;
    assert!((ratio - 0.5).abs() <= 0.15, "ratio {ratio}");
}

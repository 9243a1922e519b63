//! Acceptance criteria, one line each. Exits nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use vulab::jet2::{
    hessian_duality_check, limiting_hessians, moreau_envelope, moreau_model, para_convexity_check,
    rank1_support, second_order_component, subjet_membership, tilt_criterion_c11, BundleConfig, JetCandidate,
    MembershipConfig, Rank1Config, RankOneProfile,
};
use vulab::lattice::{linspace, sphere_directions};
use vulab::manifold::{c11_check, default_delta, grad_chain_check, lagrangian_model, taylor_lower_check, trace};
use vulab::oracle::{builtin, Flags, FunctionModel, QuadraticMinorant, CROSSING_BASE_POINT_NOTE, DEFAULT_ACTIVE_TOL};
use vulab::tilt::tilt_stability_test;
use vulab::ulag::{convexity_check, little_oh_check};
use vulab::vu::{decompose, relative_interior_point, DEFAULT_RANK_TOL};
use vulab::{LagrangianContext, Matrix, Model, SolverConfig};
use vulab_cli::{run, Campaign, ExperimentConfig, Status};

type Verdict = Result<String, String>;

fn model(name: &str) -> Model {
    builtin(name).unwrap()
}

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Minimizer of a unimodal function on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-13 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Sine of the angle between the line through `a` and the unit vector `b`.
fn line_gap(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / na;
    (1.0 - c * c).max(0.0).sqrt()
}

fn lagrangian(name: &str, eps: f64) -> LagrangianContext {
    LagrangianContext::at_base(model(name), eps, SolverConfig::default()).unwrap()
}

fn subjet_closed_form() -> Verdict {
    let m = model("abs_diff");
    let axis: Vec<f64> = linspace(-2.0, 2.0, 9);
    let mut lattice = Vec::new();
    for &a in &axis {
        for &g in &axis {
            for &b in &axis {
                if (a + 2.0 * g + b).abs() >= 0.1 {
                    lattice.push((a, g, b));
                }
            }
        }
    }
    let stride = lattice.len() / 200;
    let picks: Vec<_> = lattice.iter().step_by(stride).take(200).copied().collect();
    let cfg = MembershipConfig::default();
    let mut agree = 0;
    for &(a, g, b) in &picks {
        let q = Matrix::from_rows(&[vec![a, g], vec![g, b]]);
        let v = subjet_membership(&m, &JetCandidate::new(vec![0.0; 2], vec![0.0; 2], q).unwrap(), &cfg);
        let member = a + 2.0 * g + b <= 0.0;
        if (member && v.is_member()) || (!member && v.is_rejected()) {
            agree += 1;
        }
    }
    ensure(agree == 200 && picks.len() == 200, format!("{agree}/{} candidates agree with the sign rule", picks.len()))
}

fn barrier_cone() -> Verdict {
    let m = model("abs_diff");
    let cfg = Rank1Config::default();
    let diag = [std::f64::consts::FRAC_1_SQRT_2; 2];
    let dirs: Vec<Vec<f64>> = sphere_directions(2, 64);
    let one_degree = 1f64.to_radians().sin();
    let mut wrong = 0;
    let mut finite = 0;
    for d in &dirs {
        let is_finite = rank1_support(&m, &[0.0, 0.0], &[0.0, 0.0], d, &cfg).is_finite();
        finite += is_finite as usize;
        if is_finite != (line_gap(d, &diag) <= one_degree) {
            wrong += 1;
        }
    }
    let comp = second_order_component(&m, &[0.0, 0.0], &[0.0, 0.0], dirs, &cfg).map_err(|e| e.to_string())?;
    let gap = if comp.u2_basis.cols() == 1 { line_gap(&comp.u2_basis.column(0), &diag) } else { 1.0 };
    ensure(
        wrong == 0 && gap.asin() <= 1e-6,
        format!("{finite} finite of 64, {wrong} misclassified, U2 angle {:.1e}", gap.asin()),
    )
}

fn run_campaign(problem: &str, campaign: Campaign) -> vulab_cli::CampaignReport {
    let cfg = ExperimentConfig::new(problem);
    let bundle = run(&cfg, &[campaign], Path::new(".")).unwrap();
    bundle.reports.into_iter().next().unwrap()
}

fn degenerate_vu() -> Verdict {
    let m = model("four_quadrant_max");
    let poly = m.subdifferential_polytope(&[0.0, 0.0], DEFAULT_ACTIVE_TOL).unwrap();
    let frame = decompose(&poly, &relative_interior_point(&poly), DEFAULT_RANK_TOL).unwrap();
    let comp = second_order_component(&m, &[0.0, 0.0], &[0.0, 0.0], sphere_directions(2, 64), &Rank1Config::default())
        .map_err(|e| e.to_string())?;
    let rep = run_campaign("four_quadrant_max", Campaign::Manifold);
    let nodes = rep.data["nodes"].as_u64().unwrap_or(0);
    ensure(
        frame.dim_u() == 0 && frame.dim_v() == 2 && comp.u2_basis.cols() == 0 && nodes == 1 && rep.status() == Status::Pass,
        format!(
            "dim U {}, dim U2 {}, trace nodes {nodes}, manifold status {:?}",
            frame.dim_u(),
            comp.u2_basis.cols(),
            rep.status()
        ),
    )
}

fn final_example_subspaces() -> Verdict {
    let rep = run_campaign("crossing_max", Campaign::Decompose);
    let col = |key: &str| -> Vec<f64> {
        rep.data["frame"][key][0].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
    };
    let gu = line_gap(&col("u_basis"), &[1.0, 0.0]).asin();
    let gv = line_gap(&col("v_basis"), &[0.0, 1.0]).asin();
    let noted = rep.notes.iter().any(|n| n == CROSSING_BASE_POINT_NOTE);
    ensure(
        gu <= 1e-8 && gv <= 1e-8 && noted && rep.status() == Status::Pass,
        format!("U angle {gu:.1e}, V angle {gv:.1e}, base-point note present: {noted}"),
    )
}

fn selection_and_little_oh() -> Verdict {
    let ctx = lagrangian("crossing_max", 0.5);
    let m = &ctx.model;
    let xb = m.base_point().to_vec();
    let mut worst: f64 = 0.0;
    for u in linspace(-0.2, 0.2, 20) {
        let p = ctx.v_of_u(&[u]).map_err(|e| e.to_string())?;
        let oracle = golden_section(|v| m.value(&[xb[0] + u, xb[1] + v]), -0.5, 0.5);
        worst = worst.max((p.x[1] - xb[1] - oracle).abs()).max((p.x[0] - xb[0] - u).abs());
    }
    let ratio = little_oh_check(&ctx, &[1e-3]).map_err(|e| e.to_string())?[0].1;
    ensure(
        worst <= 1e-6 && ratio <= 1e-3,
        format!("max |v - oracle| {worst:.1e} over 20 nodes, ratio at 1e-3 {ratio:.2e}"),
    )
}

fn lagrangian_convexity() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["abs_plus_quad", "crossing_max", "quadratic(I)"] {
        let ctx = lagrangian(name, 0.5);
        let k = ctx.dim_u().max(1) as f64;
        let rep = convexity_check(&ctx, 0.5 / k.sqrt(), 31).map_err(|e| e.to_string())?;
        ok &= rep.worst_violation <= 1e-9 * rep.scale;
        parts.push(format!("{name} {:.1e} ({} pairs)", rep.worst_violation.max(0.0), rep.pairs));
    }
    ensure(ok, parts.join(", "))
}

fn conjugacy_identity() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, eps) in [("abs_plus_quad", 0.5), ("crossing_max", 0.2)] {
        let ctx = lagrangian(name, eps).with_eps_v(eps).unwrap();
        let grid: Vec<Vec<f64>> = linspace(-0.1, 0.1, 5).into_iter().map(|z| vec![z]).collect();
        let rep = vulab::envelope::conjugacy_identity_check(&ctx, &grid, 401).map_err(|e| e.to_string())?;
        ok &= rep.max_residual <= 1e-3 && rep.rows.len() == 5;
        parts.push(format!("{name} {:.1e}", rep.max_residual));
    }
    ensure(ok, format!("residuals {}", parts.join(", ")))
}

fn lipschitz_gradient_of_l() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["abs_plus_quad", "crossing_max"] {
        let ctx = lagrangian(name, 0.5);
        let tr = trace(&ctx, default_delta(&ctx), 31).map_err(|e| e.to_string())?;
        let rep = c11_check(&tr).map_err(|e| e.to_string())?;
        ok &= rep.stable(0.25) && rep.missing_gradients == 0;
        if name == "abs_plus_quad" {
            ok &= (rep.lipschitz - 2.0).abs() <= 1e-4;
        }
        parts.push(format!("{name} L {:.6} ratio {:.4}", rep.lipschitz, rep.ratio));
    }
    ensure(ok, parts.join(", "))
}

fn chain_formula() -> Verdict {
    let ctx = lagrangian("crossing_max", 0.5);
    let tr = trace(&ctx, default_delta(&ctx), 31).map_err(|e| e.to_string())?;
    let rep = grad_chain_check(&tr).map_err(|e| e.to_string())?;
    let nodes_with_two = tr
        .nodes
        .iter()
        .filter(|n| rep.rows.iter().filter(|r| r.u == n.u).count() >= 2)
        .count();
    ensure(
        rep.max_residual <= 1e-5 && nodes_with_two == tr.nodes.len(),
        format!("max residual {:.1e} over {} pairings, {} nodes", rep.max_residual, rep.rows.len(), tr.nodes.len()),
    )
}

fn lower_taylor() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    // closed-form second derivatives of L at 0
    for (name, l2) in [("abs_plus_quad", 2.0), ("crossing_max", 2.0 / 5f64.sqrt())] {
        let ctx = lagrangian(name, 0.5);
        let tr = trace(&ctx, default_delta(&ctx), 31).map_err(|e| e.to_string())?;
        let q = if name == "abs_plus_quad" { l2 } else { l2 - 0.1 };
        let qm = Matrix::from_rows(&[vec![q]]);
        let cfg = MembershipConfig::default();
        let certified = subjet_membership(&lagrangian_model(&ctx), &JetCandidate::new(vec![0.0], vec![0.0], qm.clone()).unwrap(), &cfg)
            .is_member();
        let lower = taylor_lower_check(&tr, &qm, &cfg).map_err(|e| e.to_string())?;
        let sharp = taylor_lower_check(&tr, &Matrix::from_rows(&[vec![q + 1.0]]), &cfg).map_err(|e| e.to_string())?;
        ok &= certified && lower.worst_margin >= -1e-9 && sharp.worst_margin < -1e-9;
        parts.push(format!(
            "{name} Q {q:.4} certified {certified} margin {:.1e}, inflated {:.1e}",
            lower.worst_margin, sharp.worst_margin
        ));
    }
    ensure(ok, parts.join("; "))
}

fn beta_hat(m: &Model, lambda: f64) -> f64 {
    let mm = moreau_model(m, lambda, SolverConfig::default());
    let cfg = BundleConfig { radii: vec![1e-2, 1e-3], directions: 8, gradient_tol: 0.5 };
    let bundle = limiting_hessians(&mm, &[0.0, 0.0], &[0.0, 0.0], &cfg).unwrap();
    tilt_criterion_c11(&bundle, &sphere_directions(2, 16))
}

fn tilt_chain() -> Verdict {
    let solver = SolverConfig::default();
    let apq = model("abs_plus_quad");
    let ad = model("abs_diff");
    let stable = tilt_stability_test(&apq, &[0.0, 0.0], 0.5, 0.1, 5, &solver).map_err(|e| e.to_string())?;
    let unstable = tilt_stability_test(&ad, &[0.0, 0.0], 0.5, 0.1, 5, &solver).map_err(|e| e.to_string())?;
    let (b1, b2) = (beta_hat(&apq, 1.0), beta_hat(&ad, 1.0));
    let witness_zero = unstable.witness.as_deref() == Some(&[0.0, 0.0][..]);
    ensure(
        stable.stable
            && stable.lipschitz_estimate <= 0.5 + 1e-3
            && b1 > 0.0
            && !unstable.stable
            && witness_zero
            && b2.abs() <= 1e-6,
        format!(
            "abs_plus_quad L {:.4} beta {b1:.3}; abs_diff stable {} witness {:?} beta {b2:.1e}",
            stable.lipschitz_estimate, unstable.stable, unstable.witness
        ),
    )
}

fn appendix_a() -> Verdict {
    let cfg = Rank1Config::default();
    let dirs: Vec<Vec<f64>> = sphere_directions(2, 64);
    let neg_sq: Model = FunctionModel::custom(
        "neg_sq",
        2,
        Arc::new(|x: &[f64]| -(x[0] * x[0] + x[1] * x[1])),
        Flags { quadratic_minorant: Some(QuadraticMinorant { alpha: 0.0, r: 2.0 }), ..Flags::default() },
    );
    let profiles = [
        (model("abs_diff"), 0.0),
        (model("quadratic(diag(1,3))"), 0.0),
        (neg_sq, 2.0),
    ];
    let mut para: f64 = 0.0;
    for (m, r) in &profiles {
        let p = RankOneProfile::compute(m, &[0.0, 0.0], &[0.0, 0.0], dirs.clone(), &cfg);
        para = para.max(para_convexity_check(&p, *r));
    }

    let abs = model("huber_source_abs");
    let lambda = 0.5;
    let mut huber: f64 = 0.0;
    for x in linspace::<f64>(-3.0, 3.0, 100) {
        let closed = if x.abs() <= lambda { x * x / (2.0 * lambda) } else { x.abs() - lambda / 2.0 };
        let v = moreau_envelope(&abs, lambda, &[x], &SolverConfig::default()).map_err(|e| e.to_string())?.value;
        huber = huber.max((v - closed).abs());
    }

    let quartic = FunctionModel::custom(
        "quartic",
        1,
        Arc::new(|x: &[f64]| x[0].powi(4) + 0.5 * x[0] * x[0]),
        Flags { convex: true, ..Flags::default() },
    )
    .with_gradient(Arc::new(|x: &[f64]| vec![4.0 * x[0].powi(3) + x[0]]));
    let d1 = hessian_duality_check(&model("quadratic(diag(2,5))"), &[0.0, 0.0], 401, 0.05).map_err(|e| e.to_string())?;
    let d2 = hessian_duality_check(&quartic, &[0.5], 401, 0.05).map_err(|e| e.to_string())?;
    let d3 = hessian_duality_check(&model("quadratic(I)"), &[0.0, 0.0], 401, 0.05).map_err(|e| e.to_string())?;
    ensure(
        para <= 1e-9 && huber <= 1e-6 && d1.residual <= 1e-3 && d2.residual <= 1e-2 && d3.residual <= 1e-6,
        format!(
            "para-convexity {para:.1e}, Huber {huber:.1e}, duality {:.1e} / {:.1e} / {:.1e}",
            d1.residual, d2.residual, d3.residual
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("subjet closed form on abs_diff", subjet_closed_form),
        ("barrier cone and U2 of abs_diff", barrier_cone),
        ("degenerate VU on four_quadrant_max", degenerate_vu),
        ("U and V of crossing_max with note", final_example_subspaces),
        ("selection v(u) and little-oh", selection_and_little_oh),
        ("convexity of L", lagrangian_convexity),
        ("conjugacy identity", conjugacy_identity),
        ("Lipschitz gradient of L", lipschitz_gradient_of_l),
        ("chain formula on crossing_max", chain_formula),
        ("lower Taylor estimate", lower_taylor),
        ("tilt criteria chain", tilt_chain),
        ("Moreau, para-convexity, duality", appendix_a),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = check();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! The named verification campaigns.

use serde_json::{json, Value};

use vulab::envelope::{conjugacy_identity_check, envelope_agreement_check};
use vulab::jet2::{
    default_directions, fd_hessian, hessian_duality_check, limiting_hessians, moreau_envelope, moreau_model,
    para_convexity_check, second_order_component, subjet_membership, tilt_criterion_c11, uniform_bound_check,
    BundleConfig, JetCandidate, Membership, MembershipConfig, Rank1Config, RankOneProfile,
};
use vulab::lattice::{box_lattice, linspace, sphere_directions};
use vulab::linalg::{norm, orthogonal_complement, subspace_gap};
use vulab::manifold::{
    c11_check, consistency_check, default_delta, dv_continuity_check, grad_chain_check, lagrangian_model,
    taylor_lower_check, trace,
};
use vulab::oracle::DEFAULT_ACTIVE_TOL;
use vulab::tilt::{default_r_grid, prox_regularity_test, quadratic_minorant_test, tilt_monotonicity, tilt_stability_test};
use vulab::ulag::{convexity_check, default_anchor, little_oh_check, subgradient_inequality_check};
use vulab::vu::{check_decomposition, decompose, relative_interior_point, DEFAULT_RANK_TOL};
use vulab::{Error, LagrangianContext, Matrix, Model, SolverConfig};

use crate::config::{Campaign, ExperimentConfig};
use crate::report::{report_schema_version, CampaignReport, Checks, DataFile};

const ENVELOPE_POINTS: usize = 100;

type Outcome = Result<(Checks, Value, Vec<DataFile>), Error>;

pub struct Env<'a> {
    pub cfg: &'a ExperimentConfig,
    pub model: &'a Model,
    pub solver: SolverConfig,
    pub rank1: Rank1Config<f64>,
}

impl<'a> Env<'a> {
    pub fn new(cfg: &'a ExperimentConfig, model: &'a Model) -> Self {
        let mut rank1 = Rank1Config::default();
        if let Some(t) = &cfg.grids.t_grid {
            rank1.t_grid = t.clone();
        }
        Env { cfg, model, solver: SolverConfig::default(), rank1 }
    }

    fn x_bar(&self) -> Vec<f64> {
        self.model.base_point().to_vec()
    }

    fn directions(&self) -> Vec<Vec<f64>> {
        let n = self.model.dim();
        if n == 2 {
            sphere_directions(2, self.cfg.grids.directions)
        } else {
            default_directions(n)
        }
    }

    fn lagrangian(&self, eps: f64) -> Result<LagrangianContext, Error> {
        let ctx = LagrangianContext::at_base(self.model.clone(), eps, self.solver.clone())?;
        ctx.with_eps_v(self.cfg.radii.eps_v.unwrap_or(eps))
    }

    fn prox_lambda(&self) -> f64 {
        self.cfg.radii.lambda.unwrap_or_else(|| match self.model.flags().quadratic_minorant {
            Some(q) if q.r > 0.0 => (0.5 / q.r).min(1.0),
            _ => 1.0,
        })
    }
}

/// Runs one campaign; errors become a single failed or skipped check.
pub fn run_campaign(env: &Env<'_>, campaign: Campaign) -> CampaignReport {
    let outcome = match campaign {
        Campaign::Decompose => decompose_campaign(env),
        Campaign::TiltTest => tilt_campaign(env),
        Campaign::Lagrangian => lagrangian_campaign(env),
        Campaign::Subjet => subjet_campaign(env),
        Campaign::Manifold => manifold_campaign(env),
        Campaign::Appendix => appendix_campaign(env),
    };
    let (checks, data, files) = outcome.unwrap_or_else(|e| {
        let mut checks = Checks::default();
        match e {
            Error::PreconditionFailed(_) | Error::DimensionTooLarge(_) => checks.skip("campaign", e.to_string()),
            _ => checks.fail("campaign", e.to_string()),
        }
        (checks, Value::Null, Vec::new())
    });
    CampaignReport {
        schema_version: report_schema_version(),
        campaign: campaign.name().to_string(),
        problem: env.model.name().to_string(),
        notes: env.model.notes().to_vec(),
        checks: checks.0,
        data,
        files,
    }
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

fn decompose_campaign(env: &Env<'_>) -> Outcome {
    let model = env.model;
    let tol = &env.cfg.tolerances;
    let x = env.x_bar();
    let poly = model.subdifferential_polytope(&x, DEFAULT_ACTIVE_TOL)?;
    let z = relative_interior_point(&poly);
    let frame = decompose(&poly, &z, DEFAULT_RANK_TOL)?.with_radius(env.cfg.radii.eps);
    let mut checks = Checks::default();
    match frame.validate(&poly) {
        Ok(()) => checks.flag("frame_valid", true, None),
        Err(e) => checks.fail("frame_valid", e.to_string()),
    }
    let mut report = Value::Null;
    match check_decomposition(model, &frame, 64) {
        Ok(rep) => {
            checks.at_most("support_gap_on_u", rep.max_support_gap_on_u, tol.subspace);
            checks.at_most("u_component_spread", rep.max_u_component_spread, tol.subspace);
            checks.flag(
                "off_u_witnesses",
                rep.witnesses_complete(),
                Some(format!("{}/{} sampled directions off U show a gap", rep.off_u_witnesses.len(), rep.off_u_samples)),
            );
            report = serde_json::to_value(&rep).expect("serializable");
        }
        Err(e @ Error::PreconditionFailed(_)) => checks.skip("support_gap_on_u", e.to_string()),
        Err(e) => return Err(e),
    }
    let mut gaps = Value::Null;
    if let Some(ku) = model.known_u() {
        let gu = subspace_gap(&frame.u_basis, ku);
        let gv = subspace_gap(&frame.v_basis, &orthogonal_complement(ku));
        checks.at_most("u_matches_closed_form", gu, tol.subspace);
        checks.at_most("v_matches_closed_form", gv, tol.subspace);
        gaps = json!({ "u": gu, "v": gv });
    } else {
        checks.skip("u_matches_closed_form", "no closed-form U for this problem");
    }
    let mut csv = String::from("index,");
    csv.push_str(&(0..model.dim()).map(|i| format!("g{i}")).collect::<Vec<_>>().join(","));
    csv.push('\n');
    for (i, g) in poly.generators().iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", csv_row(g.iter().copied())));
    }
    let data = json!({
        "dim": model.dim(),
        "dim_u": frame.dim_u(),
        "dim_v": frame.dim_v(),
        "frame": frame.to_json(),
        "exact_polytope": poly.is_exact(),
        "generators": poly.generators(),
        "decomposition": report,
        "closed_form_gap": gaps,
    });
    Ok((checks, data, vec![DataFile { name: "decompose_generators.csv".into(), contents: csv }]))
}

fn tilt_campaign(env: &Env<'_>) -> Outcome {
    let model = env.model;
    let r = &env.cfg.radii;
    let tol = &env.cfg.tolerances;
    let x = env.x_bar();
    let n = model.dim();
    let mut checks = Checks::default();
    let verdict = match tilt_stability_test(model, &x, r.eps, r.tilt_radius, env.cfg.grids.tilt_per_axis, &env.solver) {
        Ok(v) => v,
        Err(e @ Error::PreconditionFailed(_)) => {
            checks.skip("tilt_verdict", e.to_string());
            return Ok((checks, Value::Null, Vec::new()));
        }
        Err(e) => return Err(e),
    };
    if verdict.inconclusive {
        checks.inconclusive("tilt_verdict", "solver budget exhausted on some probe");
    } else {
        let reason = match &verdict.witness {
            None => format!("stable, lipschitz estimate {:e}", verdict.lipschitz_estimate),
            Some(w) => format!("not stable, witness z = {w:?}"),
        };
        checks.push("tilt_verdict", crate::report::Status::Pass, Some(verdict.lipschitz_estimate), None, Some(reason));
    }
    if model.flags().convex {
        checks.at_least("tilt_monotonicity", tilt_monotonicity(&verdict.probes), -1e-9);
    } else {
        checks.skip("tilt_monotonicity", "model is not flagged convex");
    }

    let lambda = env.prox_lambda();
    let zero = vec![0.0; n];
    let mm = moreau_model(model, lambda, env.solver.clone());
    let bundle_cfg = BundleConfig { radii: vec![1e-2, 1e-3], directions: 8, gradient_tol: 0.5 };
    let mut beta = Value::Null;
    match limiting_hessians(&mm, &x, &zero, &bundle_cfg) {
        Ok(bundle) => {
            let b = tilt_criterion_c11(&bundle, &sphere_directions(n, 16));
            let predicted = b > tol.beta_zero;
            let agree = verdict.inconclusive || predicted == verdict.stable;
            checks.push(
                "moreau_criterion_agreement",
                if verdict.inconclusive {
                    crate::report::Status::Inconclusive
                } else if agree {
                    crate::report::Status::Pass
                } else {
                    crate::report::Status::Fail
                },
                Some(b),
                Some(tol.beta_zero),
                Some(format!("lambda {lambda:e}, beta {b:e}, tilt stable {}", verdict.stable)),
            );
            beta = json!({ "lambda": lambda, "beta": b, "samples": bundle.samples.len() });
        }
        Err(e @ (Error::EmptyBundle | Error::LambdaTooLarge(_))) => checks.skip("moreau_criterion_agreement", e.to_string()),
        Err(e) => return Err(e),
    }

    let z_bar = {
        let poly = model.subdifferential_polytope(&x, DEFAULT_ACTIVE_TOL)?;
        if poly.contains(&zero, 1e-8) {
            zero.clone()
        } else {
            relative_interior_point(&poly)
        }
    };
    let prox_r = prox_regularity_test(model, &x, &z_bar, r.eps, &default_r_grid(), 5)?;
    match prox_r {
        Some(v) => checks.push("prox_regularity", crate::report::Status::Pass, Some(v), None, None),
        None => checks.fail("prox_regularity", "no r on the grid satisfies the prox-regularity inequality"),
    }

    let mut csv = String::from("probe,");
    csv.push_str(&(0..n).map(|i| format!("z{i}")).collect::<Vec<_>>().join(","));
    csv.push(',');
    csv.push_str(&(0..n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
    csv.push_str(",value,minimizers,approximate\n");
    for (i, p) in verdict.probes.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{:e},{},{}\n",
            csv_row(p.z.iter().copied()),
            csv_row(p.minimizers[0].iter().copied()),
            p.value,
            p.minimizers.len(),
            p.approximate
        ));
    }
    let data = json!({
        "verdict": verdict.summary(),
        "moreau": beta,
        "prox_regularity_r": prox_r,
    });
    Ok((checks, data, vec![DataFile { name: "tilt_probes.csv".into(), contents: csv }]))
}

fn lagrangian_campaign(env: &Env<'_>) -> Outcome {
    let cfg = env.cfg;
    let tol = &cfg.tolerances;
    let ctx = env.lagrangian(cfg.radii.eps)?;
    let k = ctx.dim_u();
    let per_axis = cfg.grids.lagrangian_per_axis;
    let radius = ctx.eps_u() / (k.max(1) as f64).sqrt() * (1.0 - 1e-9);
    let mut checks = Checks::default();

    let conv = convexity_check(&ctx, radius, per_axis)?;
    checks.at_most("convexity", conv.worst_violation, tol.convexity * conv.scale);

    let mut little_oh = Value::Null;
    if k == 0 {
        checks.skip("little_oh", "U = {0}");
    } else {
        let radii: Vec<f64> = [1e-2, 1e-3].into_iter().filter(|&r| r <= ctx.eps_u()).collect();
        let rows = little_oh_check(&ctx, &radii)?;
        let finest = rows.last().map_or(0.0, |r| r.1);
        checks.at_most("little_oh", finest, tol.little_oh);
        little_oh = json!(rows);
    }

    let sub_min = subgradient_inequality_check(&ctx, radius, per_axis)?;
    checks.at_least("subgradient_inequality", sub_min, -tol.convexity * conv.scale);

    let mut conjugacy = Value::Null;
    if env.model.dim() <= 3 {
        let cr = cfg.radii.conjugacy;
        let cctx = LagrangianContext::new(
            env.model.clone(),
            ctx.frame.clone().with_radius(cr),
            env.solver.clone(),
        )
        .with_eps_v(cr)?;
        let d = cfg.radii.conjugacy_dual;
        let grid = box_lattice(&vec![-d; k], &vec![d; k], 5);
        let rep = conjugacy_identity_check(&cctx, &grid, cfg.grids.conjugacy_resolution)?;
        checks.at_most("conjugacy_identity", rep.max_residual, tol.conjugacy);
        conjugacy = serde_json::to_value(&rep).expect("serializable");
    } else {
        checks.skip("conjugacy_identity", "grids are limited to dimension 3");
    }

    let pts = ctx.sample_grid(radius, per_axis)?;
    let mut csv = String::new();
    let head: Vec<String> = (0..k)
        .map(|i| format!("u{i}"))
        .chain((0..ctx.dim_v()).map(|i| format!("v{i}")))
        .chain(["l".to_string(), "f".to_string()])
        .chain((0..k).map(|i| format!("z_u{i}")))
        .chain(["boundary_active".to_string(), "approximate".to_string(), "gradient_error".to_string()])
        .collect();
    csv.push_str(&head.join(","));
    csv.push('\n');
    for p in &pts {
        let (grad, err) = match ctx.grad_l(&p.u, None) {
            Ok(g) => (g.z_u, String::new()),
            Err(e) => (vec![f64::NAN; k], e.to_string().replace(',', ";")),
        };
        let nums = csv_row(p.u.iter().chain(&p.v).copied().chain([p.value, p.f_value]).chain(grad));
        csv.push_str(&format!("{nums},{},{},{err}\n", p.boundary_active, p.approximate));
    }
    let data = json!({
        "dim_u": k,
        "dim_v": ctx.dim_v(),
        "anchor": ctx.frame.z_bar,
        "grid_radius": radius,
        "convexity": conv_json(conv.worst_violation, conv.scale, conv.pairs),
        "little_oh": little_oh,
        "subgradient_inequality_min": sub_min,
        "conjugacy": conjugacy,
    });
    Ok((checks, data, vec![DataFile { name: "lagrangian_grid.csv".into(), contents: csv }]))
}

fn conv_json(worst: f64, scale: f64, pairs: usize) -> Value {
    json!({ "worst_violation": worst, "scale": scale, "pairs": pairs })
}

/// Closed-form subjet rule for `|x₁ − x₂|` at the origin with `z = 0`:
/// `Q = [[α, γ], [γ, β]]` is a subhessian iff `α + 2γ + β ≤ 0`.
fn abs_diff_rule_agreement(model: &Model) -> (usize, usize, Vec<Value>) {
    let grid: Vec<f64> = linspace(-1.0, 1.0, 7);
    let mut cands = Vec::new();
    for &a in &grid {
        for &g in &grid {
            for &b in &grid {
                if (a + 2.0 * g + b).abs() >= 0.1 {
                    cands.push((a, g, b));
                }
            }
        }
    }
    let step = cands.len() as f64 / 200.0;
    let picks: Vec<(f64, f64, f64)> = (0..200).map(|i| cands[(i as f64 * step) as usize]).collect();
    let cfg = MembershipConfig::default();
    let mut agree = 0;
    let mut disagreements = Vec::new();
    for &(a, g, b) in &picks {
        let q = Matrix::from_rows(&[vec![a, g], vec![g, b]]);
        let cand = JetCandidate::new(vec![0.0, 0.0], vec![0.0, 0.0], q).expect("symmetric");
        let verdict = subjet_membership(model, &cand, &cfg);
        let expected = a + 2.0 * g + b <= 0.0;
        if verdict.is_member() == expected && (expected || verdict.is_rejected()) {
            agree += 1;
        } else {
            disagreements.push(json!({ "q": [a, g, b], "verdict": verdict }));
        }
    }
    (agree, picks.len(), disagreements)
}

fn subjet_campaign(env: &Env<'_>) -> Outcome {
    let model = env.model;
    let tol = &env.cfg.tolerances;
    let x = env.x_bar();
    let n = model.dim();
    let poly = model.subdifferential_polytope(&x, DEFAULT_ACTIVE_TOL)?;
    let z_bar = default_anchor(&poly);
    let mut checks = Checks::default();
    let mut files = Vec::new();
    let r = model.flags().quadratic_minorant.map_or(0.0, |q| q.r);

    let mut component = Value::Null;
    match second_order_component(model, &x, &z_bar, env.directions(), &env.rank1) {
        Ok(c) => {
            checks.flag("u2_subspace", true, Some(format!("dim U2 = {}", c.u2_basis.cols())));
            checks.at_most("u2_in_u", c.containment_gap, tol.u2_containment);
            checks.at_most("para_convexity", para_convexity_check(&c.profile, r), tol.para_convexity);
            let mut bound = Value::Null;
            if c.u2_basis.cols() > 0 {
                let ub = uniform_bound_check(model, &x, &z_bar, &c.u2_basis, &env.rank1)?;
                checks.flag("uniform_bound", ub.m_hat.is_finite(), Some(format!("m_hat {:e}", ub.m_hat)));
                bound = serde_json::to_value(&ub).expect("serializable");
            } else {
                checks.skip("uniform_bound", "U2 = {0}");
            }
            files.push(DataFile { name: "subjet_profile.csv".into(), contents: c.profile.to_csv() });
            component = json!({
                "dim_u": c.u_basis.cols(),
                "dim_u2": c.u2_basis.cols(),
                "u2_basis": c.u2_basis.columns(),
                "containment_gap": c.containment_gap,
                "midpoints_checked": c.midpoints_checked,
                "finite_directions": c.profile.finite_directions().len(),
                "directions": c.profile.directions.len(),
                "uniform_bound": bound,
            });
        }
        Err(e @ Error::NotASubspace(_)) => checks.fail("u2_subspace", e.to_string()),
        Err(e @ Error::PreconditionFailed(_)) => checks.skip("u2_subspace", e.to_string()),
        Err(e) => return Err(e),
    }

    let mut closed_form = Value::Null;
    if model.name() == "abs_diff" && x.iter().all(|&c| c == 0.0) {
        let (agree, total, disagreements) = abs_diff_rule_agreement(model);
        checks.at_least("closed_form_agreement", agree as f64, total as f64);
        closed_form = json!({ "agree": agree, "total": total, "disagreements": disagreements });
    } else {
        checks.skip("closed_form_agreement", "no closed-form subjet rule for this problem");
    }

    // the subjet is closed under Q ↦ Q − P for P ⪰ 0
    let mcfg = MembershipConfig::default();
    let base_q = Matrix::identity(n).scale(-(r + 1.0));
    let base = subjet_membership(model, &JetCandidate::new(x.clone(), z_bar.clone(), base_q.clone())?, &mcfg);
    if base.is_member() {
        let mut failures = 0;
        for (j, a) in sphere_directions::<f64>(n, 10).iter().enumerate() {
            let s = (j + 1) as f64 * 0.5;
            let p = Matrix::from_rows(&(0..n).map(|i| (0..n).map(|l| s * a[i] * a[l]).collect()).collect::<Vec<_>>());
            let cand = JetCandidate::new(x.clone(), z_bar.clone(), base_q.sub(&p).symmetrized())?;
            if !subjet_membership(model, &cand, &mcfg).is_member() {
                failures += 1;
            }
        }
        checks.flag("downward_closure", failures == 0, Some(format!("{failures} of 10 shifted candidates rejected")));
    } else {
        checks.inconclusive("downward_closure", format!("base candidate not accepted: {base:?}"));
    }

    let data = json!({
        "anchor": z_bar,
        "component": component,
        "closed_form": closed_form,
        "para_convexity_r": r,
    });
    Ok((checks, data, files))
}

fn manifold_campaign(env: &Env<'_>) -> Outcome {
    let cfg = env.cfg;
    let tol = &cfg.tolerances;
    let model = env.model;
    let x = env.x_bar();
    let mut checks = Checks::default();
    let mut ctx = env.lagrangian(cfg.radii.eps)?;
    let z_bar = ctx.frame.z_bar.clone();

    let mut restricted = false;
    match second_order_component(model, &x, &z_bar, env.directions(), &env.rank1) {
        Ok(c) => {
            checks.at_most("u2_in_u", c.containment_gap, tol.u2_containment);
            if c.u2_basis.cols() < ctx.dim_u() {
                ctx = ctx.with_u_prime(c.u2_basis.clone())?;
                restricted = true;
            }
        }
        Err(e @ (Error::NotASubspace(_) | Error::PreconditionFailed(_))) => {
            checks.skip("u2_in_u", format!("tracing on U: {e}"))
        }
        Err(e) => return Err(e),
    }
    let k = ctx.dim_u();
    let delta = cfg.radii.delta.unwrap_or_else(|| default_delta(&ctx));
    let tr = trace(&ctx, delta, cfg.grids.resolution)?;

    let flagged = tr
        .nodes
        .iter()
        .filter(|n| n.boundary_active || n.approximate || n.gradient_error.is_some())
        .count();
    if flagged == 0 {
        checks.push(
            "trace_complete",
            crate::report::Status::Pass,
            Some(tr.nodes.len() as f64),
            None,
            Some(format!("{} nodes, dim U' = {k}", tr.nodes.len())),
        );
    } else {
        checks.inconclusive("trace_complete", format!("{flagged} of {} nodes flagged", tr.nodes.len()));
    }
    checks.at_most("g_l_consistency", consistency_check(&tr), tol.consistency);

    let c11 = c11_check(&tr)?;
    checks.push(
        "c11_refinement",
        if c11.stable(tol.c11_refinement) { crate::report::Status::Pass } else { crate::report::Status::Fail },
        Some(c11.lipschitz),
        Some(tol.c11_refinement),
        Some(format!("refined {:e}, ratio {:e}", c11.refined_lipschitz, c11.ratio)),
    );
    let chain = grad_chain_check(&tr)?;
    checks.at_most("grad_chain", chain.max_residual, tol.chain);

    let levels = dv_continuity_check(&tr, 1)?;
    let (coarse, fine) = (levels[0].max_jump, levels[levels.len() - 1].max_jump);
    checks.flag(
        "dv_continuity",
        fine <= coarse * (1.0 + 1e-6) + 1e-8,
        Some(format!("max jump {coarse:e} then {fine:e} after refinement")),
    );

    let mut taylor = Value::Null;
    if k == 0 {
        checks.push("taylor_lower", crate::report::Status::Pass, None, None, Some("vacuous: dim U' = 0".into()));
        checks.push("taylor_sharpness", crate::report::Status::Pass, None, None, Some("vacuous: dim U' = 0".into()));
    } else {
        let lm = lagrangian_model(&ctx);
        let origin = vec![0.0; k];
        let q = fd_hessian(&lm, &origin).sub(&Matrix::identity(k).scale(0.1)).symmetrized();
        let z0 = tr
            .nodes
            .iter()
            .find(|n| norm(&n.u) == 0.0)
            .and_then(|n| n.z_u.clone())
            .unwrap_or_else(|| vec![0.0; k]);
        let mcfg = MembershipConfig::default();
        let cert = subjet_membership(&lm, &JetCandidate::new(origin.clone(), z0.clone(), q.clone())?, &mcfg);
        let lower = taylor_lower_check(&tr, &q, &mcfg)?;
        if cert.is_member() {
            checks.at_least("taylor_lower", lower.worst_margin, -tol.taylor);
        } else {
            checks.inconclusive("taylor_lower", format!("Q not certified as a subhessian: {cert:?}"));
        }
        let inflated = q.add(&Matrix::identity(k));
        let sharp = taylor_lower_check(&tr, &inflated, &mcfg)?;
        checks.push(
            "taylor_sharpness",
            if sharp.worst_margin < -tol.taylor { crate::report::Status::Pass } else { crate::report::Status::Fail },
            Some(sharp.worst_margin),
            Some(-tol.taylor),
            Some("inflated Q must violate the estimate".into()),
        );
        taylor = json!({
            "q": q.to_rows_f64(),
            "certified": matches!(cert, Membership::Member),
            "lower": lower,
            "sharpness": sharp,
        });
    }

    let mut agreement = Value::Null;
    if model.dim() <= 3 {
        // one LP per point, so large traces are thinned to an even stride
        let all = tr.points();
        let stride = all.len().div_ceil(ENVELOPE_POINTS);
        let points: Vec<Vec<f64>> = all.into_iter().step_by(stride).collect();
        let rep = envelope_agreement_check(model, &ctx.frame, &points, cfg.grids.envelope_resolution)?;
        checks.at_most("envelope_agreement", rep.max_residual, 2.0 * rep.grid_error + 1e-12);
        agreement = json!({
            "max_residual": rep.max_residual,
            "grid_error": rep.grid_error,
            "spacing": rep.spacing,
            "points_checked": points.len(),
        });
    } else {
        checks.skip("envelope_agreement", "grids are limited to dimension 3");
    }

    let data = json!({
        "dim_u": ctx.frame.dim_u(),
        "dim_u_prime": k,
        "restricted_to_u2": restricted,
        "delta": tr.delta,
        "shrinks": tr.shrinks,
        "resolution": tr.resolution,
        "nodes": tr.nodes.len(),
        "c11": c11,
        "chain_max_residual": chain.max_residual,
        "dv_continuity": levels,
        "taylor": taylor,
        "envelope": agreement,
    });
    Ok((checks, data, vec![DataFile { name: "manifold_trace.csv".into(), contents: tr.to_csv() }]))
}

fn huber(x: f64, lambda: f64) -> f64 {
    if x.abs() <= lambda {
        x * x / (2.0 * lambda)
    } else {
        x.abs() - lambda / 2.0
    }
}

fn appendix_campaign(env: &Env<'_>) -> Outcome {
    let cfg = env.cfg;
    let tol = &cfg.tolerances;
    let model = env.model;
    let x = env.x_bar();
    let n = model.dim();
    let lambda = env.prox_lambda();
    let mut checks = Checks::default();

    let mut csv = String::from("s,value,");
    csv.push_str(&(0..n).map(|i| format!("grad{i}")).collect::<Vec<_>>().join(","));
    csv.push('\n');
    let h = 1e-6;
    let mut worst_grad: f64 = 0.0;
    let shifted = |s: f64| {
        let mut p = x.clone();
        p[0] += s;
        p
    };
    for s in linspace(-2.0, 2.0, 40) {
        let m = moreau_envelope(model, lambda, &shifted(s), &env.solver)?;
        let up = moreau_envelope(model, lambda, &shifted(s + h), &env.solver)?.value;
        let dn = moreau_envelope(model, lambda, &shifted(s - h), &env.solver)?.value;
        worst_grad = worst_grad.max(((up - dn) / (2.0 * h) - m.gradient[0]).abs());
        csv.push_str(&format!("{},{}\n", csv_row([s, m.value]), csv_row(m.gradient.iter().copied())));
    }
    checks.at_most("moreau_gradient", worst_grad, tol.moreau);

    let mut huber_gap = Value::Null;
    if model.name() == "huber_source_abs" {
        let mut worst: f64 = 0.0;
        for s in linspace(-3.0, 3.0, 100) {
            worst = worst.max((moreau_envelope(model, lambda, &[s], &env.solver)?.value - huber(s, lambda)).abs());
        }
        checks.at_most("huber_closed_form", worst, 1e-6);
        huber_gap = json!(worst);
    } else {
        checks.skip("huber_closed_form", "closed form only for the one-dimensional absolute value");
    }

    let poly = model.subdifferential_polytope(&x, DEFAULT_ACTIVE_TOL)?;
    let z_bar = default_anchor(&poly);
    let r = model.flags().quadratic_minorant.map_or(0.0, |q| q.r);
    let profile = RankOneProfile::compute(model, &x, &z_bar, env.directions(), &env.rank1);
    checks.at_most("para_convexity", para_convexity_check(&profile, r), tol.para_convexity);

    let lower: Vec<f64> = x.iter().map(|c| c - 2.0).collect();
    let upper: Vec<f64> = x.iter().map(|c| c + 2.0).collect();
    let minorant = quadratic_minorant_test(model, &x, &default_r_grid(), &lower, &upper, 9);
    match minorant {
        Some((_, rr)) => checks.push("quadratic_minorant", crate::report::Status::Pass, Some(rr), None, None),
        None => checks.fail("quadratic_minorant", "no R on the grid gives a minorant"),
    }

    let mut duality = Value::Null;
    if !model.flags().convex || n > 3 {
        checks.skip("hessian_duality", "needs a convex model of dimension at most 3");
    } else {
        match hessian_duality_check(model, &x, cfg.grids.conjugacy_resolution, 0.05) {
            Ok(rep) => {
                checks.at_most("hessian_duality", rep.residual, tol.duality);
                duality = json!({
                    "residual": rep.residual,
                    "hessian": rep.hessian.to_rows_f64(),
                    "conjugate_hessian": rep.conjugate_hessian.to_rows_f64(),
                });
            }
            Err(e @ (Error::SingularHessian(_) | Error::PreconditionFailed(_))) => {
                checks.skip("hessian_duality", e.to_string())
            }
            Err(e) => return Err(e),
        }
    }

    // sampled limiting Hessians, slightly deflated, are subhessians nearby
    let mut upper_bound = Value::Null;
    match limiting_hessians(model, &x, &z_bar, &BundleConfig { gradient_tol: f64::INFINITY, ..BundleConfig::default() }) {
        Ok(bundle) => {
            let mcfg = MembershipConfig::default();
            let picks: Vec<_> = bundle.samples.iter().step_by((bundle.samples.len() / 8).max(1)).take(8).collect();
            let mut rejected = 0;
            for (xk, q) in &picks {
                let Some(g) = model.gradient(xk, DEFAULT_ACTIVE_TOL) else { continue };
                let cand = JetCandidate::new(xk.clone(), g, q.sub(&Matrix::identity(n).scale(1e-4)).symmetrized())?;
                if !subjet_membership(model, &cand, &mcfg).is_member() {
                    rejected += 1;
                }
            }
            checks.flag("hessian_subjet", rejected == 0, Some(format!("{rejected} of {} samples rejected", picks.len())));
            upper_bound = json!({ "samples": picks.len(), "rejected": rejected, "source": bundle.source });
        }
        Err(e @ Error::EmptyBundle) => checks.skip("hessian_subjet", e.to_string()),
        Err(e) => return Err(e),
    }

    let data = json!({
        "lambda": lambda,
        "moreau_gradient_error": worst_grad,
        "huber_gap": huber_gap,
        "para_convexity_r": r,
        "quadratic_minorant": minorant.map(|(a, rr)| json!({ "alpha": a, "r": rr })),
        "hessian_duality": duality,
        "hessian_subjet": upper_bound,
    });
    Ok((checks, data, vec![DataFile { name: "appendix_moreau.csv".into(), contents: csv }]))
}

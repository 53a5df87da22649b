//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured margins. Run with `--nocapture` to see the
//! lines for passing tests; failures always show them.

use std::time::Instant;

use lyapmin::circle_map::{circle_distance, wrap_unit, BumpLayer, ExpandingMap};
use lyapmin::conjugacy::{conjugacy_report, continue_orbit, itinerary};
use lyapmin::orbits::enumerate_periodic_orbits;
use lyapmin::perturbation::{assemble_plan, mollify_bump, PerturbationPlan, PlanOptions};
use lyapmin::subaction::{coboundary_f, solve_subaction, SolveParams};
use lyapmin::tol::Tolerances;
use lyapmin::verifier::{sample_perturbation_ball, verify_map, verify_neighborhood, VerifyConfig};

fn tols() -> Tolerances {
    Tolerances::default()
}

fn doubling() -> ExpandingMap {
    ExpandingMap::from_coeffs(2, vec![], vec![]).unwrap()
}

fn sine_map() -> ExpandingMap {
    ExpandingMap::from_coeffs(2, vec![0.1], vec![]).unwrap()
}

fn doubling_plan() -> PerturbationPlan {
    assemble_plan(&doubling(), 0.1, &PlanOptions::default(), &tols()).unwrap()
}

#[test]
fn criterion_1_orbit_machinery() {
    let start = Instant::now();
    let map = doubling();
    let catalog = enumerate_periodic_orbits(&map, 12, &tols()).unwrap();

    for n in 1..=12usize {
        let count = catalog.period_point_count(n);
        assert_eq!(count, (1u64 << n) - 1, "period-point count at n = {n}");
    }
    let mut max_residual = 0.0f64;
    let mut max_lyap_err = 0.0f64;
    for e in &catalog.orbits {
        let tau = e.orbit.period;
        for i in 0..tau {
            let img = map.image(e.orbit.points[i]);
            max_residual = max_residual.max(circle_distance(img, e.orbit.points[(i + 1) % tau]));
        }
        max_lyap_err = max_lyap_err.max((e.lyap_avg - 2.0f64.ln()).abs());
    }
    let elapsed = start.elapsed();
    assert!(max_residual < 1e-10, "orbit residual {max_residual}");
    assert!(max_lyap_err < 1e-12, "Lyapunov deviation {max_lyap_err}");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: {} orbits, counts 2^n-1 for n<=12, residual {:.2e}, lyap dev {:.2e}, {:?}",
        catalog.orbits.len(),
        max_residual,
        max_lyap_err,
        elapsed
    );
}

#[test]
fn criterion_2_subaction_certificate() {
    let start = Instant::now();
    let map = sine_map();
    let params = SolveParams {
        grid_n: 1 << 14,
        ..SolveParams::default()
    };
    let sub = solve_subaction(&map, &params, &tols()).unwrap();

    assert!(sub.defect < 1e-6, "defect {}", sub.defect);
    let catalog = enumerate_periodic_orbits(&map, 14, &tols()).unwrap();
    let orbit_min = catalog.min_lyapunov();
    assert!(
        (sub.alpha - orbit_min).abs() < 1e-4,
        "alpha {} vs orbit min {}",
        sub.alpha,
        orbit_min
    );
    let fine = 100_000usize;
    let grid_min_f = (0..fine)
        .map(|j| coboundary_f(&map, &sub.f, j as f64 / fine as f64))
        .fold(f64::INFINITY, f64::min);
    assert!(
        grid_min_f >= sub.alpha - 1e-5,
        "grid min F {} vs alpha {}",
        grid_min_f,
        sub.alpha
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 2 PASS: defect {:.2e}, |alpha - orbit min| {:.2e}, min F - (alpha - 1e-5) {:.2e}, {:?}",
        sub.defect,
        (sub.alpha - orbit_min).abs(),
        grid_min_f - (sub.alpha - 1e-5),
        elapsed
    );
}

#[test]
fn criterion_3_bump_exactness() {
    let plan = doubling_plan();
    let lg = &plan.ledger;
    let bump = &plan.bump;
    let w = bump.half_width;
    let eps = lg.epsilon;

    let mut worst_eq = 0.0f64;
    for (i, &p) in bump.centers.iter().enumerate() {
        let gamma = bump.gammas[i];
        // (1) h and Dh vanish at the center and the support endpoints.
        assert_eq!(bump.value(p), 0.0);
        for end in [wrap_unit(p + w), wrap_unit(p - w)] {
            assert_eq!(bump.value(end), 0.0);
            assert_eq!(bump.deriv(end), 0.0);
        }
        // One-sided limits at the endpoints vanish too.
        for u in [w * (1.0 - 1e-8), -w * (1.0 - 1e-8)] {
            let x = wrap_unit(p + u);
            worst_eq = worst_eq.max(bump.value(x).abs());
            worst_eq = worst_eq.max(bump.deriv(x).abs() / w);
        }
        // (2) Dh at the center equals -γ·ε·ρ·G*/(2K).
        let expected_slope = -gamma * eps * lg.rho * lg.g_star / (2.0 * lg.k);
        worst_eq = worst_eq.max((bump.deriv(p) - expected_slope).abs());
        // Analytic peak of |h| at p + w/3.
        let peak = eps * gamma * (4.0 * w * w / 27.0) / (2.0 * lg.k);
        worst_eq = worst_eq.max((bump.value(wrap_unit(p + w / 3.0)).abs() - peak).abs());
        // γ back-substitution into the derivative integral.
        let a = plan.base_map.deriv(p);
        let residual = ((a / (a - gamma * lg.c_max())).ln() - lg.delta()).abs();
        worst_eq = worst_eq.max(residual);
        assert!(residual < 1e-12, "gamma integral residual {residual}");
    }
    assert!(worst_eq < 1e-12, "equality residual {worst_eq}");

    // (3) Strict norm bounds: analytic and grid-scanned.
    let sup_h = bump.sup_value_bound();
    let sup_dh = bump.sup_deriv_bound();
    let lip_dh = bump.lip_deriv_bound();
    assert!(sup_h + sup_dh < eps / 2.0, "C1 norm {}", sup_h + sup_dh);
    assert!(lip_dh < eps / 2.0, "Lip(Dh) {lip_dh}");
    let p = bump.centers[0];
    let mut grid_h = 0.0f64;
    let mut grid_dh = 0.0f64;
    let mut grid_d2h = 0.0f64;
    for j in 0..20_000 {
        let x = wrap_unit(p + (j as f64 / 20_000.0 - 0.5) * 2.2 * w);
        grid_h = grid_h.max(bump.value(x).abs());
        grid_dh = grid_dh.max(bump.deriv(x).abs());
        grid_d2h = grid_d2h.max(bump.second_deriv(x).abs());
    }
    assert!(grid_h <= sup_h + 1e-12);
    assert!(grid_dh <= sup_dh + 1e-12);
    assert!(grid_d2h <= lip_dh + 1e-12);

    println!(
        "criterion 3 PASS: equality residuals {:.2e}, |h|+|Dh| = {:.3e} < {:.2e}, Lip(Dh) = {:.3e}",
        worst_eq,
        sup_h + sup_dh,
        eps / 2.0,
        lip_dh
    );
}

#[test]
fn criterion_4_perturbation_identity() {
    let plan = doubling_plan();
    let t = &plan.base_map;
    let s0 = &plan.perturbed_map;
    let f = &plan.subaction.f;
    let delta = plan.ledger.delta();

    let mut worst_fixed = 0.0f64;
    let mut worst_drop = 0.0f64;
    for &p in &plan.orbit.points {
        worst_fixed = worst_fixed.max(circle_distance(s0.image(p), t.image(p)));
        let drop = coboundary_f(s0, f, p) - coboundary_f(t, f, p);
        worst_drop = worst_drop.max((drop + delta).abs());
    }
    assert!(worst_fixed < 1e-14, "S0 moves the orbit by {worst_fixed}");
    assert!(worst_drop < 1e-10, "coboundary drop residual {worst_drop}");
    println!(
        "criterion 4 PASS: F drop residual {:.2e} (target Δ = {:.3e}), orbit fixed to {:.1e}",
        worst_drop, delta, worst_fixed
    );
}

/// Test-local closed form of the raw cubic bump derivative.
fn raw_dh(layer: &BumpLayer, x: f64) -> f64 {
    let w = layer.half_width;
    for (i, &p) in layer.centers.iter().enumerate() {
        let u = lyapmin::circle_map::signed_circle_diff(x, p);
        let c = layer.amplitude_scale * layer.gammas[i];
        if u == 0.0 {
            return -c * w * w;
        }
        if u > 0.0 && u < w {
            return -c * ((w - u).powi(2) - 2.0 * u * (w - u));
        }
        if u < 0.0 && u > -w {
            return -c * ((u + w).powi(2) + 2.0 * u * (u + w));
        }
    }
    0.0
}

#[test]
fn criterion_5_mollification() {
    // A desk-scale synthetic bump plus the plan's own mollified layer.
    let synthetic = BumpLayer::new(vec![0.3], 0.01, vec![0.7], 1.0).unwrap();
    let delta_s = synthetic.half_width / 8.0;
    let moll_s = mollify_bump(&synthetic, delta_s).unwrap();

    let plan = doubling_plan();
    let moll_p = plan.mollified_bump.clone().expect("plan carries h_delta");
    let raw_p = &plan.bump;
    let eps = plan.ledger.epsilon;

    for (raw, moll) in [(&synthetic, &moll_s), (raw_p, &moll_p)] {
        let delta = moll.mollify_delta;
        let p = raw.centers[0];
        let w = raw.half_width;
        // Exact second-derivative identity at 1e3 points across the support.
        let mut worst_identity = 0.0f64;
        for j in 0..1_000 {
            let x = wrap_unit(p + (j as f64 / 1_000.0 - 0.5) * 2.4 * w);
            let lhs = moll.second_deriv(x);
            let rhs = (raw_dh(raw, wrap_unit(x + delta)) - raw_dh(raw, wrap_unit(x - delta)))
                / (2.0 * delta);
            worst_identity = worst_identity.max((lhs - rhs).abs());
        }
        assert!(worst_identity < 1e-12, "identity residual {worst_identity}");

        // Quadrature oracle: 64-panel composite Simpson of the raw bump.
        let mut worst_quad = 0.0f64;
        for j in 0..200 {
            let x = wrap_unit(p + (j as f64 / 200.0 - 0.5) * 2.4 * w);
            let (a, b) = (x - delta, x + delta);
            let n = 64;
            let h = (b - a) / n as f64;
            let mut s = raw.value(wrap_unit(a)) + raw.value(wrap_unit(b));
            for i in 1..n {
                let t = a + i as f64 * h;
                s += raw.value(wrap_unit(t)) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = s * h / 3.0 / (2.0 * delta);
            worst_quad = worst_quad.max((moll.value(x) - quad).abs());
        }
        assert!(worst_quad < 1e-12, "quadrature residual {worst_quad}");
    }

    // Central second difference of h_delta on the synthetic layer, step 1e-5,
    // away from the piecewise-quartic knots.
    let delta = moll_s.mollify_delta;
    let p = synthetic.centers[0];
    let w = synthetic.half_width;
    let knots: Vec<f64> = [-w - delta, -w + delta, -delta, delta, w - delta, w + delta]
        .iter()
        .map(|u| wrap_unit(p + u))
        .collect();
    let step = 1e-5;
    let mut worst_fd = 0.0f64;
    let mut checked = 0usize;
    let mut j = 0usize;
    while checked < 1_000 {
        let x = wrap_unit(p + (j as f64 / 2_500.0 - 0.5) * 2.4 * w);
        j += 1;
        if knots.iter().any(|&k| circle_distance(x, k) < 3.0 * step) {
            continue;
        }
        let fd = (moll_s.value(wrap_unit(x + step)) - 2.0 * moll_s.value(x)
            + moll_s.value(wrap_unit(x - step)))
            / (step * step);
        worst_fd = worst_fd.max((moll_s.second_deriv(x) - fd).abs());
        checked += 1;
    }
    assert!(worst_fd < 1e-6, "finite-difference residual {worst_fd}");

    // Sup bound: |D2 h_delta| <= Lip(Dh) < eps/2 for the plan's layer.
    let mut grid_d2 = 0.0f64;
    for j in 0..20_000 {
        let x = wrap_unit(raw_p.centers[0] + (j as f64 / 20_000.0 - 0.5) * 2.4 * raw_p.half_width);
        grid_d2 = grid_d2.max(moll_p.second_deriv(x).abs());
    }
    assert!(grid_d2 <= raw_p.lip_deriv_bound() + 1e-15);
    assert!(grid_d2 < eps / 2.0);

    println!(
        "criterion 5 PASS: identity to 1e-12, quadrature to 1e-12, FD residual {:.2e}, |D2 h_d| = {:.3e} < {:.2e}",
        worst_fd,
        grid_d2,
        eps / 2.0
    );
}

#[test]
fn criterion_6_conjugacy() {
    let start = Instant::now();
    let plan = doubling_plan();
    let s0 = &plan.perturbed_map;
    let eps_tilde = plan.ledger.eps_tilde;
    let eps0 = plan.ledger.eps0_tilde;
    let samples = sample_perturbation_ball(s0, eps_tilde, 10, 2024);

    let mut worst_residual = 0.0f64;
    let mut worst_id = 0.0f64;
    let mut worst_reclose = 0.0f64;
    for s in &samples {
        let report = conjugacy_report(s0, s, 1_000, 48, &tols()).unwrap();
        assert!(report.monotone, "π not cyclically monotone");
        worst_residual = worst_residual.max(report.residual);
        worst_id = worst_id.max(report.id_distance);

        let cont = continue_orbit(&plan.orbit, s0, s, &tols()).unwrap();
        assert_eq!(cont.orbit.code, plan.orbit.code, "code not preserved");
        assert!(cont.max_drift < eps0, "drift {} vs eps0 {}", cont.max_drift, eps0);
        let tau = cont.orbit.period;
        for i in 0..tau {
            let img = s.image(cont.orbit.points[i]);
            worst_reclose =
                worst_reclose.max(circle_distance(img, cont.orbit.points[(i + 1) % tau]));
        }
        // The continued code is the itinerary of the continued orbit under S.
        let recomputed = itinerary(s, cont.orbit.points[0], tau, &tols()).unwrap();
        assert_eq!(recomputed.word, plan.orbit.code, "itinerary changed");
    }
    let elapsed = start.elapsed();
    assert!(worst_residual < 1e-8, "conjugacy residual {worst_residual}");
    assert!(worst_id < eps0, "id distance {worst_id} vs eps0 {eps0}");
    assert!(worst_reclose < 1e-12, "re-closure {worst_reclose}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 6 PASS: residual {:.2e} < 1e-8, id dist {:.2e} < {:.2e}, re-closure {:.2e}, {:?}",
        worst_residual, worst_id, eps0, worst_reclose, elapsed
    );
}

#[test]
fn criterion_7_theorem_level_check() {
    let start = Instant::now();
    let plan = doubling_plan();
    let cfg = VerifyConfig {
        seed: 7,
        ..VerifyConfig::default()
    };
    // S0 plus 20 sampled maps in the eps-tilde ball.
    let report = verify_neighborhood(&plan, 20, &cfg, &tols()).unwrap();
    assert_eq!(report.reports.len(), 21);
    assert!(report.all_pass, "neighborhood verification failed");
    let mut worst_margin = f64::INFINITY;
    for r in &report.reports {
        assert!(r.pass);
        assert!(r.minimality_margin > 0.0, "margin {}", r.minimality_margin);
        assert!(r.far_region_margin > 0.0);
        assert!(r
            .sum_positivity
            .iter()
            .all(|s| s.partial_sum > 0.0 && !s.horizon_exceeded));
        assert_eq!(r.ergodic_samples.len(), 32);
        assert!(r.ergodic_samples.iter().all(|b| b.average > 0.0));
        // Random orbits spend a positive fraction of time beyond the outer
        // escape radius.
        assert!(r.ergodic_samples.iter().all(|b| b.far_visit_freq > 0.0));
        worst_margin = worst_margin.min(r.minimality_margin);
    }

    // Control: the unperturbed doubling map must fail with margin exactly 0.
    let control = verify_map(&plan.base_map, &plan, &cfg, &tols()).unwrap();
    assert_eq!(control.minimality_margin, 0.0, "control margin nonzero");
    assert!(!control.pass, "control unexpectedly passed");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "criterion 7 PASS: 21 maps certified, worst margin {:.3e}, control fails with margin 0, {:?}",
        worst_margin, elapsed
    );
}

#[test]
fn criterion_8_determinism() {
    let opts = PlanOptions {
        grid_n: 1 << 12,
        max_period: 8,
        anchor_max_period: 8,
        ..PlanOptions::default()
    };
    let cfg = VerifyConfig {
        sum_samples: 30,
        max_period: 8,
        far_grid_n: 1 << 12,
        birkhoff_count: 8,
        birkhoff_steps: 20_000,
        seed: 99,
        ..VerifyConfig::default()
    };
    let run = || {
        let map = doubling();
        let catalog = enumerate_periodic_orbits(&map, 8, &tols()).unwrap();
        let plan = assemble_plan(&map, 0.1, &opts, &tols()).unwrap();
        let verification = verify_neighborhood(&plan, 3, &cfg, &tols()).unwrap();
        (
            catalog.to_csv(),
            serde_json::to_string(&plan.record()).unwrap(),
            serde_json::to_string(&verification).unwrap(),
        )
    };
    let (csv_a, plan_a, ver_a) = run();
    let (csv_b, plan_b, ver_b) = run();
    assert_eq!(csv_a, csv_b, "catalog differs");
    assert_eq!(plan_a, plan_b, "plan differs");
    assert_eq!(ver_a, ver_b, "verification differs");
    println!(
        "criterion 8 PASS: repeated runs byte-identical ({} B catalog, {} B plan, {} B verification)",
        csv_a.len(),
        plan_a.len(),
        ver_a.len()
    );
}

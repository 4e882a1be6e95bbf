use std::sync::Arc;

use tgpnp_core::fem::{prolongate, FeFunction};
use tgpnp_core::norms::l2_error;
use tgpnp_core::solvers::{gummel_change, solve_poisson};
use tgpnp_core::{
    gummel_solve, gummel_step, manufactured_benchmark, manufactured_benchmark_with_rate, march,
    Discretization, GummelNorm, Mesh, Method, PnpState, TimeGrid, Tolerances, TwoGrid,
};

fn coeff_gap(a: &FeFunction, b: &FeFunction) -> f64 {
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn gummel_restart_from_converged_state_stays_put() {
    let pb = manufactured_benchmark();
    let disc = Discretization::uniform(8).unwrap();
    let tols = Tolerances::default();
    let tau = 1.0 / 64.0;
    let mut state = PnpState::zero(disc.mesh().clone(), 0.0);
    for _ in 0..3 {
        state = gummel_step(&disc, &state, &pb, tau, &tols).unwrap().0;
    }
    let prev = state.clone();
    let first = gummel_solve(&disc, &prev, &prev, &pb, tau, &tols).unwrap();
    let again = gummel_solve(&disc, &prev, &first.state, &pb, tau, &tols).unwrap();
    for (a, b) in [
        (&first.state.p1, &again.state.p1),
        (&first.state.p2, &again.state.p2),
        (&first.state.phi, &again.state.phi),
    ] {
        let d: Vec<f64> = a
            .coeffs()
            .iter()
            .zip(b.coeffs())
            .map(|(x, y)| x - y)
            .collect();
        assert!(disc.l2_norm(&d) <= tols.gummel_tol);
    }
    assert!(again.residuals.len() <= first.residuals.len());
}

#[test]
fn reported_residual_can_be_recomputed() {
    let pb = manufactured_benchmark();
    let disc = Discretization::uniform(9).unwrap();
    let tols = Tolerances::default();
    let state = PnpState::zero(disc.mesh().clone(), 0.0);
    let out = gummel_solve(&disc, &state, &state, &pb, 0.5 / 41.0, &tols).unwrap();
    let last = *out.residuals.last().unwrap();
    assert!(last <= tols.gummel_tol);
    let recomputed = gummel_change(&disc, &out.state, &out.previous_iterate, GummelNorm::L2);
    assert!((recomputed - last).abs() <= 1e-12);
    // first time level of the m=9 FEM run
    assert!(
        out.stats.gummel_iterations <= 20,
        "{}",
        out.stats.gummel_iterations
    );
    assert_eq!(out.stats.gummel_iterations, out.residuals.len());
}

#[test]
fn euclidean_gummel_norm_also_converges() {
    let pb = manufactured_benchmark();
    let disc = Discretization::uniform(6).unwrap();
    let tols = Tolerances {
        gummel_norm: GummelNorm::Euclidean,
        ..Tolerances::default()
    };
    let state = PnpState::zero(disc.mesh().clone(), 0.0);
    let out = gummel_solve(&disc, &state, &state, &pb, 0.01, &tols).unwrap();
    let r = gummel_change(
        &disc,
        &out.state,
        &out.previous_iterate,
        GummelNorm::Euclidean,
    );
    assert!(r <= tols.gummel_tol);
}

#[test]
fn fully_decoupled_species_solves_are_order_independent() {
    let pb = manufactured_benchmark_with_rate(2.0);
    let mut grids = TwoGrid::new(3, 9).unwrap();
    let tols = Tolerances::default();
    let tau = 0.5 / 41.0;
    let coarse = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
    let fine = PnpState::zero(grids.fine.mesh().clone(), 0.0);
    let (c1, f1, s1) = grids.full_step(&coarse, &fine, &pb, tau, &tols).unwrap();
    grids.concurrent_species = false;
    let (c2, f2, s2) = grids.full_step(&coarse, &fine, &pb, tau, &tols).unwrap();
    assert!(coeff_gap(&c1.phi, &c2.phi) == 0.0);
    for (a, b) in [(&f1.p1, &f2.p1), (&f1.p2, &f2.p2), (&f1.phi, &f2.phi)] {
        assert!(coeff_gap(a, b) <= 1e-13);
    }
    assert_eq!(s1.linear_solve_count, s2.linear_solve_count);
    assert_eq!(s1.gummel_iterations, s2.gummel_iterations);
}

#[test]
fn two_grid_steps_add_three_fine_solves() {
    let pb = manufactured_benchmark();
    let grids = TwoGrid::new(3, 9).unwrap();
    let tols = Tolerances::default();
    let tau = 0.01;
    let coarse = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
    let fine = PnpState::zero(grids.fine.mesh().clone(), 0.0);
    let (_, coarse_stats) = gummel_step(&grids.coarse, &coarse, &pb, tau, &tols).unwrap();
    for semi in [true, false] {
        let (c, f, stats) = if semi {
            grids.semi_step(&coarse, &fine, &pb, tau, &tols).unwrap()
        } else {
            grids.full_step(&coarse, &fine, &pb, tau, &tols).unwrap()
        };
        assert_eq!(
            stats.linear_solve_count,
            coarse_stats.linear_solve_count + 3
        );
        assert_eq!(stats.gummel_iterations, coarse_stats.gummel_iterations);
        assert!(c.vanishes_on_boundary() && f.vanishes_on_boundary());
        assert_eq!(f.t, tau);
        assert_eq!(f.mesh().m(), 9);
    }
}

#[test]
fn matching_meshes_transfer_exactly() {
    let pb = manufactured_benchmark();
    let grids = TwoGrid::new(5, 5).unwrap();
    let tols = Tolerances {
        gummel_tol: 1e-11,
        lin_tol: 1e-13,
        ..Tolerances::default()
    };
    let coarse = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
    let fine = PnpState::zero(grids.fine.mesh().clone(), 0.0);
    let (c, f, _) = grids.semi_step(&coarse, &fine, &pb, 0.02, &tols).unwrap();
    let moved = prolongate(&c.p1, grids.fine.mesh()).unwrap();
    assert_eq!(moved.coeffs(), c.p1.coeffs());
    // with H = h the fine Poisson input is the converged coarse concentration pair,
    // so the fine potential reproduces the coarse one up to solver tolerance
    assert!(coeff_gap(&f.phi, &c.phi) <= 1e-9);
    assert!(coeff_gap(&f.p1, &c.p1) <= 1e-9);
    assert!(coeff_gap(&f.p2, &c.p2) <= 1e-9);
}

#[test]
fn every_method_keeps_homogeneous_boundary_values() {
    let pb = manufactured_benchmark();
    let time = TimeGrid::new(0.1, 5).unwrap();
    let tols = Tolerances::default();
    for method in [Method::Fem, Method::TwoGridSemi, Method::TwoGridFull] {
        let out = march(method, &pb, 8, Some(4), &time, &tols).unwrap();
        assert!(out.fine.vanishes_on_boundary());
        assert!((out.fine.t - 0.1).abs() < 1e-15);
        assert_eq!(out.coarse.is_some(), method.is_two_grid());
        if let Some(c) = &out.coarse {
            assert!(c.vanishes_on_boundary());
        }
        assert!(out.stats.wall_seconds >= 0.0);
    }
}

#[test]
fn poisson_with_exact_concentrations_is_second_order() {
    let pb = manufactured_benchmark();
    let t = 0.5;
    let err = |m: usize| {
        let mesh = Arc::new(Mesh::uniform(m).unwrap());
        let p1 = FeFunction::interpolate(mesh.clone(), |x, y| pb.exact_p1.eval(x, y, t));
        let p2 = FeFunction::interpolate(mesh.clone(), |x, y| pb.exact_p2.eval(x, y, t));
        let phi = solve_poisson(&mesh, &p1, &p2, &pb, t, 1e-12).unwrap();
        l2_error(&phi, |x, y, s| pb.exact_phi.eval(x, y, s), t)
    };
    let ratio = err(8) / err(16);
    assert!((3.4..=4.6).contains(&ratio), "{ratio}");
}

#[test]
fn fem_run_converges_under_refinement() {
    let pb = manufactured_benchmark();
    let tols = Tolerances::default();
    let err = |m: usize| {
        let time = TimeGrid::squared_mesh_size(0.5, m).unwrap();
        let out = march(Method::Fem, &pb, m, None, &time, &tols).unwrap();
        l2_error(&out.fine.p1, |x, y, s| pb.exact_p1.eval(x, y, s), 0.5)
    };
    let ratio = err(6) / err(12);
    assert!(ratio > 3.3, "{ratio}");
}

#[test]
fn starting_guess_only_moves_results_within_solver_tolerance() {
    let pb = manufactured_benchmark_with_rate(2.0);
    let grids = TwoGrid::new(3, 9).unwrap();
    let tols = Tolerances::default();
    let tau = 0.5 / 41.0;
    let mut coarse = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
    let mut older = PnpState::zero(grids.fine.mesh().clone(), 0.0);
    let mut fine = older.clone();
    for _ in 0..3 {
        let (c, f, _) = grids.semi_step(&coarse, &fine, &pb, tau, &tols).unwrap();
        coarse = c;
        older = std::mem::replace(&mut fine, f);
    }
    let guess = fine.extrapolated(&older).unwrap();
    assert!((guess.t - (fine.t + tau)).abs() < 1e-14);
    for full in [false, true] {
        let (plain, from) = if full {
            (
                grids.full_step(&coarse, &fine, &pb, tau, &tols).unwrap().1,
                grids
                    .full_step_from(&coarse, &fine, &guess, &pb, tau, &tols)
                    .unwrap()
                    .1,
            )
        } else {
            (
                grids.semi_step(&coarse, &fine, &pb, tau, &tols).unwrap().1,
                grids
                    .semi_step_from(&coarse, &fine, &guess, &pb, tau, &tols)
                    .unwrap()
                    .1,
            )
        };
        for (a, b) in [
            (&plain.p1, &from.p1),
            (&plain.p2, &from.p2),
            (&plain.phi, &from.phi),
        ] {
            assert!(coeff_gap(a, b) <= 1e-8, "{}", coeff_gap(a, b));
        }
    }
    let wrong = PnpState::zero(grids.coarse.mesh().clone(), 0.0);
    assert!(grids
        .semi_step_from(&coarse, &fine, &wrong, &pb, tau, &tols)
        .is_err());
    assert!(fine.extrapolated(&wrong).is_err());
}

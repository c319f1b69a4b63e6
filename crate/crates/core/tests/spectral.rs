use padic_ground::linalg::{power_iteration, PowerOptions};
use padic_ground::spectral::{
    apply_l, find_ground_state, find_ground_state_radial, green_kernel, q_matrix, radial_q_matrix,
    radial_q_matrix_for, GroundStateSearch, Potential, RadialPotential, SolverTolerances,
};
use padic_ground::{fourier_radial, GridSpec, KernelTable, RadialProfile};

/// λ* of the standard scenario at (M, K) = (4, 4), frozen as a regression
/// baseline.
const LAMBDA_STAR_BASELINE: f64 = 0.700_031_811_963;

fn standard() -> RadialProfile {
    RadialProfile::power_law(2, 1, 2.0 / 3.0, 1.0).unwrap()
}

fn kernel(a: &RadialProfile, lambda: f64, grid: &GridSpec) -> KernelTable {
    let m_ext = grid.m() + 48;
    let dual = fourier_radial(a, -grid.k() - 1, m_ext).unwrap();
    green_kernel(&dual, lambda, grid, m_ext, 1e-12).unwrap()
}

#[test]
fn lambda_star_regression() {
    for (m, k) in [(3, 3), (4, 4), (5, 3)] {
        let grid = GridSpec::new(2, 1, m, k).unwrap();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let out = find_ground_state(&standard(), &v, &SolverTolerances::default()).unwrap();
        let gs = out.found().unwrap();
        assert!(
            (gs.lambda_star - LAMBDA_STAR_BASELINE).abs() < 1e-9,
            "({m},{k}) {}",
            gs.lambda_star
        );
    }
}

#[test]
fn r_curve_is_strictly_decreasing() {
    let grid = GridSpec::new(2, 1, 3, 3).unwrap();
    let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
    let out = find_ground_state(&standard(), &v, &SolverTolerances::default()).unwrap();
    let gs = out.found().unwrap();
    assert!(gs.r_curve.len() > 5);
    assert!(gs
        .r_curve
        .windows(2)
        .all(|w| w[0].0 < w[1].0 && w[1].1 < w[0].1));
    assert!(!gs.flags.non_monotone_samples && !gs.flags.bisection_stalled);
}

#[test]
fn kernel_monotone_on_ten_lambdas() {
    let grid = GridSpec::new(3, 1, 2, 2).unwrap();
    let a = RadialProfile::normalized_power_law(3, 1, 0.8).unwrap();
    let v = Potential::indicator_ball(grid, 1, 0.6).unwrap();
    let lambdas: Vec<f64> = (0..10).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect();
    let kernels: Vec<_> = lambdas.iter().map(|&l| kernel(&a, l, &grid)).collect();
    let radii: Vec<f64> = kernels
        .iter()
        .map(|k| {
            power_iteration(q_matrix(k, &v).unwrap().matrix(), &PowerOptions::default())
                .unwrap()
                .radius
        })
        .collect();
    for w in kernels.windows(2) {
        assert!(w[0].shells().iter().zip(w[1].shells()).all(|(a, b)| b < a));
        assert!(w[1].diag_cell_integral() < w[0].diag_cell_integral());
        assert!(w[1].center_value() < w[0].center_value());
    }
    assert!(radii.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn row_scaling_bounds() {
    let grid = GridSpec::new(2, 1, 2, 2).unwrap();
    let lambda = 0.3;
    let k = kernel(&standard(), lambda, &grid);
    let v = Potential::from_cells(grid, (0..16).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap();
    let q = q_matrix(&k, &v).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            let unscaled = if i == j {
                k.diag_cell_integral()
            } else {
                grid.cell_volume() * k.shell(grid.distance_exponent(i, j).unwrap())
            } * v.values()[j];
            if unscaled > 0.0 {
                let factor = q.get(i, j) / unscaled;
                assert!(factor >= 1.0 / (lambda + 1.0) - 1e-15 && factor <= 1.0 / lambda + 1e-15);
            }
        }
    }
}

#[test]
fn radial_reduction_matches_full_grid() {
    // the Perron vector of a radial problem is radial, so the radii agree
    let grid = GridSpec::new(2, 1, 3, 3).unwrap();
    for lambda in [0.2, 1.0, 5.0] {
        let k = kernel(&standard(), lambda, &grid);
        let v = Potential::indicator_ball(grid, 1, 0.8).unwrap();
        let full =
            power_iteration(q_matrix(&k, &v).unwrap().matrix(), &PowerOptions::default()).unwrap();
        let radial = power_iteration(
            radial_q_matrix_for(&k, &v).unwrap().matrix(),
            &PowerOptions::default(),
        )
        .unwrap();
        assert!((full.radius - radial.radius).abs() < 1e-8 * full.radius);
    }
}

#[test]
fn single_shell_radial_matrix_matches_full_grid() {
    // V = 1 on the sphere of radius 1 only
    let grid = GridSpec::new(2, 1, 2, 2).unwrap();
    let values = vec![0.0, 0.0, 0.0, 1.0, 0.0];
    let rv = RadialPotential::new(2, 1, -2, values).unwrap();
    let v = Potential::from_radial(grid, rv.clone()).unwrap();
    let k = kernel(&standard(), 0.7, &grid);
    let full = q_matrix(&k, &v).unwrap();
    let radial = radial_q_matrix(&k, &rv).unwrap();
    // lumping: T[s][t] is the row sum of the full matrix over slot t for x in slot s
    let slot = |id: usize| grid.shell_of(id).map_or(0, |m| (m + 2) as usize);
    for i in 0..grid.cell_count() {
        for t in 0..5 {
            let lumped: f64 = (0..grid.cell_count())
                .filter(|&j| slot(j) == t)
                .map(|j| full.get(i, j))
                .sum();
            let want = radial.matrix().get(slot(i), t);
            assert!((lumped - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}

#[test]
fn radial_solver_in_two_dimensions() {
    let a = RadialProfile::normalized_power_law(3, 2, 2.0).unwrap();
    let v = RadialPotential::indicator_ball(3, 2, -2, 3, 0, 1.0).unwrap();
    let out = find_ground_state_radial(&a, &v, 2, &SolverTolerances::default()).unwrap();
    let gs = out.found().unwrap();
    assert!(gs.lambda_star > 0.0);
    assert!(gs.psi.iter().all(|x| *x > 0.0));
    assert!(gs.eigen_residual < 1e-6, "{}", gs.eigen_residual);
    assert!(gs.outermost_shell_max() < 1.0);
    // the full 2-d grid with (M, K) = (1, 1) has 81 cells and must agree
    let grid = GridSpec::new(3, 2, 1, 1).unwrap();
    let small = RadialPotential::indicator_ball(3, 2, -1, 1, 0, 1.0).unwrap();
    let full = find_ground_state(
        &a,
        &Potential::from_radial(grid, small.clone()).unwrap(),
        &SolverTolerances::default(),
    )
    .unwrap();
    let radial = find_ground_state_radial(&a, &small, 1, &SolverTolerances::default()).unwrap();
    assert!((full.found().unwrap().lambda_star - radial.found().unwrap().lambda_star).abs() < 1e-9);
}

#[test]
fn small_coupling_transient_has_no_ground_state() {
    let a = RadialProfile::normalized_power_law(2, 1, 0.2).unwrap();
    let grid = GridSpec::new(2, 1, 3, 3).unwrap();
    let v = Potential::indicator_ball(grid, 0, 1.0)
        .unwrap()
        .scaled(1e-6)
        .unwrap();
    match find_ground_state(&a, &v, &SolverTolerances::default()).unwrap() {
        GroundStateSearch::NoGroundStateDetected(report) => {
            assert!(report.radius_at_floor <= 1.0);
            assert!((report.lambda_floor - 1e-6).abs() < 1e-18);
            assert!(report.r_curve.windows(2).all(|w| w[1].1 < w[0].1));
            assert!(!report.flags.non_monotone_samples);
        }
        GroundStateSearch::Found(gs) => panic!("unexpected ground state at {}", gs.lambda_star),
    }
}

#[test]
fn recurrent_profile_binds_weak_potentials() {
    // α = n: λ* shrinks like exp(-c/β) but stays positive
    let grid = GridSpec::new(2, 1, 2, 2).unwrap();
    let mut last = f64::INFINITY;
    for beta in [0.3, 0.2, 0.1] {
        let v = Potential::indicator_ball(grid, 0, 1.0)
            .unwrap()
            .scaled(beta)
            .unwrap();
        let out = find_ground_state(&standard(), &v, &SolverTolerances::default()).unwrap();
        let gs = out.found().expect("ground state");
        assert!(gs.lambda_star > 1e-6 && gs.lambda_star < last);
        last = gs.lambda_star;
    }
    assert!(last < 1e-3);
}

#[test]
fn apply_l_constant_function_center_cell() {
    let grid = GridSpec::new(3, 1, 1, 2).unwrap();
    let a = RadialProfile::normalized_power_law(3, 1, 1.3).unwrap();
    let v = Potential::from_cells(grid, vec![0.0; grid.cell_count()]).unwrap();
    let l = apply_l(&a, &v, &vec![1.0; grid.cell_count()], None).unwrap();
    assert!((l[0] + a.outer_mass(1)).abs() < 1e-14);
    assert!(l.iter().all(|x| *x <= 0.0));
}

#[test]
fn eigen_equivalence_on_random_potentials() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let grid = GridSpec::new(3, 1, 1, 1).unwrap();
    for _ in 0..5 {
        let values: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let v = Potential::from_cells(grid, values).unwrap();
        let a = RadialProfile::normalized_power_law(3, 1, rng.random_range(0.8..2.0)).unwrap();
        if let Some(gs) = find_ground_state(&a, &v, &SolverTolerances::default())
            .unwrap()
            .found()
        {
            assert!(gs.fixed_point_residual <= 1e-8);
            assert!(gs.eigen_residual <= 1e-6);
            assert!(gs.psi.iter().all(|x| *x > 0.0));
        }
    }
}

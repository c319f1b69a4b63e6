use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use padic_ground::recurrence::{recurrence_report, ReturnProbabilities};
use padic_ground::spectral::{
    dissipativity_check, find_ground_state, find_ground_state_radial, green_kernel, q_matrix,
    quadratic_form, radial_q_matrix, GroundStateSearch,
};
use padic_ground::walk::simulate_walk;
use padic_ground::{fourier_radial, power_iteration, GridSpec, KernelTable, WalkConfig};

use crate::config::ScenarioConfig;
use crate::output::{Report, Table};
use crate::row;

pub const EXIT_NO_GROUND_STATE: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

/// Cell budget for the dissipativity check in `verify`.
const DISSIPATIVITY_CELLS: usize = 4096;
const ROUND_TRIP_TOL: f64 = 1e-9;
const BOUNDS_TOL: f64 = 1e-12;
const MASS_IDENTITY_TOL: f64 = 1e-8;

fn grid_json(config: &ScenarioConfig) -> Value {
    config.grid.map_or(Value::Null, |g| {
        json!({"p": config.profile.p(), "n": config.profile.n(), "m": g.m, "k": g.k, "radial": g.radial})
    })
}

pub fn fourier(config: &ScenarioConfig) -> Result<Report> {
    let a = &config.profile;
    let f = config.fourier;
    let dual = fourier_radial(a, f.n_min, f.n_max)?;
    let mut table = Table::new("transform", &["N", "a_hat", "one_minus_a_hat"]);
    let mut rows = Vec::new();
    for n in f.n_min..=f.n_max {
        let (v, g) = (dual.value(n), dual.gap(n));
        table.push(row![n, v, g]);
        rows.push(json!({"n": n, "a_hat": v, "one_minus_a_hat": g}));
    }
    let body = json!({
        "profile": a,
        "total_mass": a.total_mass(),
        "degenerate": a.is_degenerate(),
        "limit_at_zero_frequency": dual.limit_at_zero_frequency(),
        "tail_exponent_estimate": dual.tail_exponent_estimate(),
        "rows": rows,
    });
    Report::new("fourier", body, vec![table])
}

fn kernel_at(config: &ScenarioConfig, grid: &GridSpec, lambda: f64) -> Result<KernelTable> {
    let tol = config.tolerances()?;
    let m_ext = grid.m() + tol.exterior_shells.max(1);
    let dual = fourier_radial(&config.profile, -grid.k() - 1, m_ext)?;
    Ok(green_kernel(
        &dual,
        lambda,
        grid,
        m_ext,
        tol.kernel_tail_tol,
    )?)
}

/// `r(Q_λ)` for the configured potential, on the full grid or radial slots.
fn spectral_radius(config: &ScenarioConfig, kernel: &KernelTable) -> Result<(f64, bool)> {
    let opts = config.tolerances()?.power_options();
    let pair = if config.grid_config()?.radial {
        power_iteration(
            radial_q_matrix(kernel, &config.radial_potential()?)?.matrix(),
            &opts,
        )?
    } else {
        power_iteration(q_matrix(kernel, &config.potential()?)?.matrix(), &opts)?
    };
    Ok((pair.radius, pair.converged))
}

pub fn kernel(config: &ScenarioConfig) -> Result<Report> {
    let grid = config.grid()?;
    let lambda = config.kernel.lambda;
    let k = kernel_at(config, &grid, lambda)?;
    let mut table = Table::new("shells", &["m", "green", "ball_integral"]);
    let (lo, hi) = k.window();
    for m in lo..=hi {
        table.push(row![m, k.shell(m), k.ball_integral(m)]);
    }
    let radius = if config.has_potential() {
        let (r, converged) = spectral_radius(config, &k)?;
        json!({"radius": r, "converged": converged})
    } else {
        Value::Null
    };
    let body = json!({
        "grid": grid_json(config),
        "lambda": lambda,
        "center_value": k.center_value(),
        "diag_cell_integral": k.diag_cell_integral(),
        "outer_mass": k.outer_mass(),
        "remainder_bound": k.remainder_bound(),
        "mass_identity_error": k.mass_identity_error(),
        "degenerate": k.degenerate(),
        "spectral_radius": radius,
    });
    Report::new("kernel", body, vec![table])
}

pub fn groundstate(config: &ScenarioConfig) -> Result<Report> {
    let tol = config.tolerances()?;
    let g = config.grid_config()?;
    let search = if g.radial {
        find_ground_state_radial(&config.profile, &config.radial_potential()?, g.k, &tol)?
    } else {
        find_ground_state(&config.profile, &config.potential()?, &tol)?
    };
    let mut body = serde_json::to_value(&search)?;
    let object = body.as_object_mut().context("ground state report")?;
    object.insert("grid".into(), grid_json(config));
    object.insert("tolerances".into(), serde_json::to_value(tol)?);

    let mut curve = Table::new("r_curve", &["lambda", "spectral_radius"]);
    let (r_curve, exit) = match &search {
        GroundStateSearch::Found(gs) => {
            let exit = if gs.flags.power_not_converged {
                EXIT_CHECK_FAILED
            } else {
                0
            };
            (&gs.r_curve, exit)
        }
        GroundStateSearch::NoGroundStateDetected(r) => (&r.r_curve, EXIT_NO_GROUND_STATE),
    };
    for (l, r) in r_curve {
        curve.push(row![l, r]);
    }
    let mut tables = vec![curve];
    if let GroundStateSearch::Found(gs) = &search {
        let mut shells = Table::new("psi_shells", &["shell", "max"]);
        for s in &gs.shell_maxima {
            shells.push(row![s.shell, s.max]);
        }
        let mut psi = Table::new("psi", &["index", "value"]);
        for (i, v) in gs.psi.iter().enumerate() {
            psi.push(row![i, v]);
        }
        let mut exterior = Table::new("exterior", &["shell", "value"]);
        for (i, v) in gs.exterior.values.iter().enumerate() {
            exterior.push(row![gs.exterior.first_shell + i as i32, v]);
        }
        tables.extend([shells, psi, exterior]);
    }
    Ok(Report::new("groundstate", body, tables)?.with_exit(exit))
}

pub fn recurrence(config: &ScenarioConfig) -> Result<Report> {
    let r = config.recurrence;
    let green = (r.m_max > 0).then_some((r.ball, r.m_max));
    let report = recurrence_report(&config.profile, r.l, r.n_max, green)?;

    let mut criterion = Table::new("criterion", &["N", "term", "integral_partial_sum"]);
    for (i, term) in report.criterion_terms.iter().enumerate() {
        let n = r.l + i as i32;
        criterion.push(row![n, term, report.integral_partial_sums.get(i).copied()]);
    }
    let mut tables = vec![criterion];
    if let Some(g) = &report.green_series {
        let mut t = Table::new("green_series", &["m", "partial_sum"]);
        for (i, s) in g.partial_sums.iter().enumerate() {
            t.push(row![i + 1, s]);
        }
        tables.push(t);
    }
    let mut body = serde_json::to_value(&report)?;
    body.as_object_mut()
        .context("recurrence report")?
        .insert("label".into(), json!(report.classification.to_string()));
    Report::new("recurrence", body, tables)
}

pub fn walk(config: &ScenarioConfig, seed: u64) -> Result<Report> {
    let w = config.walk;
    let mut wc = WalkConfig::new(config.profile.clone(), w.steps, w.trials, w.ball, seed);
    wc.precision = w.k_low.zip(w.k_high);
    let stats = simulate_walk(&wc)?;
    let exact = if config.profile.is_degenerate() {
        None
    } else {
        let dual = fourier_radial(&config.profile, w.ball, w.ball + 1)?;
        Some(ReturnProbabilities::new(&dual, w.ball, w.steps)?)
    };
    let mut table = Table::new(
        "returns",
        &[
            "m",
            "hits",
            "probability",
            "standard_error",
            "exact",
            "z",
            "mean_log_p_norm",
        ],
    );
    let mut worst_z: Option<f64> = None;
    for m in 1..=w.steps {
        let e = stats.hit_probability(m);
        let exact_m = exact.as_ref().map(|t| t.probability(m).0);
        let z = exact_m
            .filter(|_| e.standard_error > 0.0)
            .map(|x| (e.mean - x) / e.standard_error);
        if let Some(z) = z {
            worst_z = Some(worst_z.map_or(z.abs(), |w| w.max(z.abs())));
        }
        table.push(row![
            m,
            stats.hits[(m - 1) as usize],
            e.mean,
            e.standard_error,
            exact_m,
            z,
            stats.mean_norm_exponent(m)
        ]);
    }
    #[derive(Serialize)]
    struct Body<'a> {
        seed: u64,
        stats: &'a padic_ground::WalkStats,
        visits: padic_ground::walk::Estimate,
        worst_abs_z: Option<f64>,
    }
    let exit = if stats.ultrametric_violations > 0 {
        EXIT_CHECK_FAILED
    } else {
        0
    };
    let body = Body {
        seed,
        stats: &stats,
        visits: stats.visit_estimate(),
        worst_abs_z: worst_z,
    };
    Ok(Report::new("walk", body, vec![table])?.with_exit(exit))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &'static str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: value <= limit,
            value,
            limit,
            detail: detail.into(),
        }
    }

    fn at_least(name: &'static str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: value >= limit,
            value,
            limit,
            detail: detail.into(),
        }
    }
}

/// Largest sub-grid of `grid` (dropping resolution first) with at most
/// `budget` cells.
fn shrink_grid(grid: &GridSpec, budget: usize) -> Result<GridSpec> {
    let (p, n) = (grid.p() as f64, grid.n() as i32);
    let (mut m, mut k) = (grid.m(), grid.k());
    while p.powi(n * (m + k)) > budget as f64 {
        if k > 0 {
            k -= 1;
        } else {
            m -= 1;
        }
    }
    Ok(GridSpec::new(grid.p(), grid.n(), m, k)?)
}

pub fn verify(config: &ScenarioConfig, seed: u64) -> Result<Report> {
    let a = &config.profile;
    let mut checks = Vec::new();
    let mut skipped: Vec<&str> = Vec::new();

    let f = config.fourier;
    let dual = fourier_radial(a, f.n_min, f.n_max)?;
    let scale = a.values().iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = (
        (a.j_min() - 2).max(f.n_min + 1),
        (a.j_max() + 4).min(f.n_max),
    );
    let mut round_trip = 0.0f64;
    for j in lo..=hi {
        let want = a.shell_value(j);
        let err = (dual.inverse_shell_value(j, 1e-14) - want).abs();
        round_trip = round_trip.max(err / if want > 0.0 { want } else { scale });
    }
    checks.push(Check::at_most(
        "fourier_round_trip",
        round_trip,
        ROUND_TRIP_TOL,
        format!("relative inversion error over shells {lo}..={hi}"),
    ));
    let mut bounds = 0.0f64;
    for n in f.n_min..=f.n_max {
        let (v, g) = (dual.value(n), dual.gap(n));
        bounds = bounds.max(v.abs() - 1.0).max((v + g - 1.0).abs()).max(-g);
    }
    checks.push(Check::at_most(
        "fourier_bounds",
        bounds,
        BOUNDS_TOL,
        "max of |a_hat| - 1, |a_hat + gap - 1| and -gap",
    ));

    let Some(g) = config.grid else {
        skipped.extend([
            "kernel",
            "dissipativity",
            "quadratic_form",
            "spectral_radius",
        ]);
        return finish_verify(checks, skipped);
    };
    let grid = config.grid()?;
    let mut lambdas = config.verify.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let kernels = lambdas
        .iter()
        .map(|&l| kernel_at(config, &grid, l))
        .collect::<Result<Vec<_>>>()?;

    let min_g = kernels
        .iter()
        .flat_map(|k| k.shells().iter().copied())
        .fold(f64::INFINITY, f64::min);
    if a.is_degenerate() {
        checks.push(Check::at_least(
            "kernel_nonnegative",
            min_g,
            0.0,
            "smallest G_λ shell value; compact support leaves G_λ = 0 far out",
        ));
    } else {
        checks.push(Check::at_least(
            "kernel_positive",
            min_g,
            f64::MIN_POSITIVE,
            "smallest G_λ shell value",
        ));
    }
    let radial_rise = kernels
        .iter()
        .flat_map(|k| k.shells().windows(2).map(|w| (w[1] - w[0]) / w[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "kernel_radially_nonincreasing",
        radial_rise,
        1e-12,
        "largest relative increase G(p^(m+1)) / G(p^m) - 1",
    ));
    let lambda_rise = kernels
        .windows(2)
        .flat_map(|w| {
            w[0].shells()
                .iter()
                .zip(w[1].shells())
                .map(|(a, b)| b / a - 1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "kernel_decreasing_in_lambda",
        lambda_rise,
        0.0,
        "largest relative change G_λ'/G_λ - 1 for λ < λ'",
    ));
    let mass = kernels
        .iter()
        .map(|k| k.mass_identity_error())
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "kernel_mass_identity",
        mass,
        MASS_IDENTITY_TOL,
        "|λ ∫ G_λ - 1| over the configured λ",
    ));

    let small = shrink_grid(&grid, DISSIPATIVITY_CELLS)?;
    let d = dissipativity_check(a, &small, config.verify.dissipativity_trials, seed)?;
    checks.push(Check {
        name: "dissipativity",
        passed: d.passed,
        value: d.min_margin,
        limit: -padic_ground::spectral::DISSIPATIVITY_ALLOWANCE,
        detail: format!(
            "min ‖λf - L_0 f‖ - λ‖f‖ over {} evaluations on B_{} at resolution p^-{}",
            d.evaluations,
            small.m(),
            small.k()
        ),
    });

    if !config.has_potential() {
        skipped.extend(["quadratic_form", "spectral_radius"]);
        return finish_verify(checks, skipped);
    }
    if g.radial && grid.cell_count() > crate::config::MAX_CELLS {
        skipped.push("quadratic_form");
    } else {
        let v = config.potential()?;
        let forms = (-grid.k()..=grid.m())
            .map(|n| quadratic_form(a, &v, n))
            .collect::<padic_ground::Result<Vec<_>>>()?;
        let rise = forms
            .windows(2)
            .map(|w| w[1].normalized_l0() - w[0].normalized_l0())
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            "quadratic_form_l0_decay",
            rise,
            1e-15,
            "largest increase of |(L_0 f_N, f_N)| / Vol(B_N) in N",
        ));
        let v_excess = forms
            .iter()
            .map(|q| (q.v_term - q.ball_volume).max(-q.v_term))
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            "quadratic_form_v_bounds",
            v_excess,
            1e-12,
            "0 <= (V f_N, f_N) <= Vol(B_N)",
        ));
        let l0_max = forms
            .iter()
            .map(|q| q.l0_term)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            "quadratic_form_l0_nonpositive",
            l0_max,
            0.0,
            "max (L_0 f_N, f_N)",
        ));
    }
    let radii = kernels
        .iter()
        .map(|k| spectral_radius(config, k).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let r_rise = radii
        .windows(2)
        .map(|w| w[1] / w[0] - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "spectral_radius_decreasing",
        r_rise,
        0.0,
        format!("r(Q_λ) at λ = {lambdas:?}: {radii:?}"),
    ));
    finish_verify(checks, skipped)
}

fn finish_verify(checks: Vec<Check>, skipped: Vec<&str>) -> Result<Report> {
    let passed = checks.iter().all(|c| c.passed);
    let mut table = Table::new("checks", &["name", "passed", "value", "limit"]);
    for c in &checks {
        table.push(row![c.name, c.passed, c.value, c.limit]);
    }
    let body = json!({"passed": passed, "checks": checks, "skipped": skipped});
    let exit = if passed { 0 } else { EXIT_CHECK_FAILED };
    Ok(Report::new("verify", body, vec![table])?.with_exit(exit))
}

//! The Green kernel `G_λ`, the Krein-Rutman operator `Q_λ` and the ground
//! state of `L = L_0 + V`.
//!
//! `A_λ = (λ+1)(λ-L_0)^-1 - 1` is convolution with `G_λ`, whose Fourier
//! multiplier is `ã/(λ+1-ã)`. `Q_λ` has kernel
//! `G_λ(x-y) V(y) / (λ+1-V(x))`, and `λ > 0` is an eigenvalue of `L` with a
//! positive eigenfunction exactly when `r(Q_λ) = 1`. Since `r(Q_λ)` decreases
//! in `λ`, the top eigenvalue is found by bisection.
//!
//! Discretization is exact. `V` is constant on the cosets of `B_{-K}` and
//! vanishes outside `B_M`, and `‖x-y‖` is constant over every pair of distinct
//! cells, so `Q_λ` acting on cell-constant functions is a finite matrix whose
//! entries are shell values of `G_λ` times cell volumes. The only
//! approximation is the truncation of dual-side series, which is bounded and
//! reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::{power_iteration, sup_norm, DenseMatrix, PerronPair, PowerOptions};
use crate::padic::GridSpec;
use crate::radial::{
    ball_volume, dual_tail_sum, fourier_radial, pow, sphere_volume, DualProfile, RadialProfile,
};

/// Numerical settings of the ground-state solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTolerances {
    /// Relative tolerance of power iteration.
    pub power_tol: f64,
    pub power_max_iter: usize,
    /// Target for `|r(Q_λ) - 1|`.
    pub bisection_tol: f64,
    /// Smallest `λ` probed before reporting that no ground state was found.
    pub lambda_floor: f64,
    /// Relative truncation bound for dual-side kernel series.
    pub kernel_tail_tol: f64,
    /// Shells beyond `B_M` on which the eigenfunction is extended.
    pub exterior_shells: i32,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            power_tol: 1e-12,
            power_max_iter: 100_000,
            bisection_tol: 1e-8,
            lambda_floor: 1e-6,
            kernel_tail_tol: 1e-12,
            exterior_shells: 48,
        }
    }
}

impl SolverTolerances {
    pub fn power_options(&self) -> PowerOptions {
        PowerOptions {
            tol: self.power_tol,
            max_iter: self.power_max_iter,
        }
    }
}

// ---------------------------------------------------------------------------
// Potentials

/// A radial potential on `B_outer`: `values[0]` on the ball `B_inner`,
/// `values[i]` on the sphere `‖x‖ = p^(inner+i)`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPotential {
    p: u32,
    n: u32,
    inner: i32,
    values: Vec<f64>,
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return param(format!("potential value {v} outside [0, 1]"));
    }
    Ok(())
}

impl RadialPotential {
    pub fn new(p: u32, n: u32, inner: i32, values: Vec<f64>) -> Result<Self> {
        crate::padic::check_prime(p)?;
        if values.is_empty() {
            return param("radial potential needs at least one value");
        }
        check_unit_interval(&values)?;
        Ok(Self {
            p,
            n,
            inner,
            values,
        })
    }

    /// `β` on `B_ball`, zero elsewhere, tabulated on `[inner, outer]`.
    pub fn indicator_ball(
        p: u32,
        n: u32,
        inner: i32,
        outer: i32,
        ball: i32,
        beta: f64,
    ) -> Result<Self> {
        if outer < inner {
            return param("outer shell below the inner ball");
        }
        let values = (inner..=outer)
            .map(|m| if m <= ball { beta } else { 0.0 })
            .collect();
        Self::new(p, n, inner, values)
    }

    pub fn inner(&self) -> i32 {
        self.inner
    }

    pub fn outer(&self) -> i32 {
        self.inner + self.values.len() as i32 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on the sphere `p^m` (`None` for the origin).
    pub fn value_at(&self, shell: Option<i32>) -> f64 {
        match shell {
            None => self.values[0],
            Some(m) if m <= self.inner => self.values[0],
            Some(m) if m <= self.outer() => self.values[(m - self.inner) as usize],
            Some(_) => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Haar measure of each radial slot.
    fn slot_volumes(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|s| {
                if s == 0 {
                    ball_volume(self.p, self.n, self.inner)
                } else {
                    sphere_volume(self.p, self.n, self.inner + s as i32)
                }
            })
            .collect()
    }
}

/// A cell-constant potential `V = 1 - m` on the grid, zero outside `B_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    grid: GridSpec,
    values: Vec<f64>,
    radial: Option<RadialPotential>,
}

impl Potential {
    pub fn from_cells(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "{} potential values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        check_unit_interval(&values)?;
        Ok(Self {
            grid,
            values,
            radial: None,
        })
    }

    pub fn from_radial(grid: GridSpec, radial: RadialPotential) -> Result<Self> {
        if radial.p != grid.p() || radial.n != grid.n() {
            return Err(Error::GridMismatch(
                "radial potential over another space".into(),
            ));
        }
        if radial.inner < -grid.k() {
            return Err(Error::GridMismatch(format!(
                "radial potential resolves B_{} below the grid resolution B_{}",
                radial.inner,
                -grid.k()
            )));
        }
        if radial.outer() > grid.m()
            && radial.values[(grid.m() + 1 - radial.inner) as usize..]
                .iter()
                .any(|v| *v != 0.0)
        {
            return Err(Error::GridMismatch(format!(
                "potential does not vanish outside B_{}",
                grid.m()
            )));
        }
        let values = (0..grid.cell_count())
            .map(|id| radial.value_at(grid.shell_of(id)))
            .collect();
        Ok(Self {
            grid,
            values,
            radial: Some(radial),
        })
    }

    /// `β` on `B_N`, zero elsewhere.
    pub fn indicator_ball(grid: GridSpec, ball: i32, beta: f64) -> Result<Self> {
        let radial =
            RadialPotential::indicator_ball(grid.p(), grid.n(), -grid.k(), grid.m(), ball, beta)?;
        Self::from_radial(grid, radial)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * factor).collect();
        let mut out = Self::from_cells(self.grid, values)?;
        if let Some(r) = &self.radial {
            out.radial = Some(RadialPotential::new(
                r.p,
                r.n,
                r.inner,
                r.values.iter().map(|v| v * factor).collect(),
            )?);
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// The shell-indexed form, recovered from the cell table when needed.
    pub fn radial_form(&self) -> Result<RadialPotential> {
        if let Some(r) = &self.radial {
            return Ok(r.clone());
        }
        let k = self.grid.k();
        let mut values: Vec<Option<f64>> = vec![None; (self.grid.m() + k + 1) as usize];
        for (id, &v) in self.values.iter().enumerate() {
            let slot = self.grid.shell_of(id).map_or(0, |m| (m + k) as usize);
            match values[slot] {
                None => values[slot] = Some(v),
                Some(w) if w == v => {}
                Some(_) => return Err(Error::NonRadial),
            }
        }
        RadialPotential::new(
            self.grid.p(),
            self.grid.n(),
            -k,
            values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Green kernel

/// Evaluates `G_λ` from the transform of a normalized jump density.
///
/// With `ε_N = 1 - ã_N` and the deficit `h_N = 1/λ - ã_N/(λ+1-ã_N)
/// = ε(1+λ) / (λ(λ+ε))`, the constant parts of the dual-shell sum cancel
/// exactly and
///
/// ```text
/// G_λ(p^m) = p^(-mn) h_{m-1} - (1 - p^-n) Σ_{N>=m} p^(-Nn) h_N
/// ```
///
/// which keeps full relative accuracy far from the origin.
#[derive(Debug, Clone)]
struct GreenEvaluator<'a> {
    dual: &'a DualProfile,
    lambda: f64,
    tol: f64,
}

impl GreenEvaluator<'_> {
    fn p(&self) -> u32 {
        self.dual.p()
    }

    fn n(&self) -> u32 {
        self.dual.n()
    }

    fn sphere_factor(&self) -> f64 {
        1.0 - pow(self.p(), -(self.n() as i32))
    }

    /// `ã/(λ+1-ã)` on the dual sphere `‖ξ‖ = p^-N`.
    fn multiplier(&self, k: i32) -> f64 {
        let eps = self.dual.gap(k);
        (1.0 - eps) / (self.lambda + eps)
    }

    fn deficit(&self, k: i32) -> f64 {
        let eps = self.dual.gap(k);
        eps * (1.0 + self.lambda) / (self.lambda * (self.lambda + eps))
    }

    fn deficit_bound(&self, k: i32) -> f64 {
        let t = self.dual.gap_bound(k);
        (1.0 + self.lambda) / self.lambda * (t / self.lambda).min(1.0)
    }

    /// `G_λ` on the sphere `‖x‖ = p^m`, with its truncation bound.
    fn shell(&self, m: i32) -> (f64, f64) {
        // h_N = 1/λ on the constant head, where the two terms cancel exactly
        let m = m.max(self.dual.profile().j_min());
        let lead = pow(self.p(), -m * self.n() as i32) * self.deficit(m - 1);
        let sum = dual_tail_sum(
            self.p(),
            self.n(),
            m,
            |k| self.deficit(k),
            |k| self.deficit_bound(k),
            self.tol * lead.max(f64::MIN_POSITIVE),
        );
        let f = self.sphere_factor();
        (lead - f * sum.value, f * sum.remainder_bound)
    }

    /// `∫_{B_m} G_λ = p^(mn) ∫_{‖ξ‖<=p^-m} ã/(λ+1-ã)`, a sum of nonnegative
    /// terms with the `1/λ` limit summed in closed form.
    fn ball_integral(&self, m: i32) -> (f64, f64) {
        let (p, n) = (self.p(), self.n() as i32);
        let f = self.sphere_factor();
        let mut acc = 0.0;
        let mut k = m;
        loop {
            let weight = pow(p, -k * n) / f;
            let remainder = self.deficit_bound(k) * weight;
            let closed = weight / self.lambda;
            if remainder <= self.tol * (acc + closed) || k - m > 20_000 {
                acc += closed;
                let scale = pow(p, m * n) * f;
                return (scale * acc, scale * remainder);
            }
            acc += pow(p, -k * n) * self.multiplier(k);
            k += 1;
        }
    }

    /// `∫_{‖x‖>p^m} G_λ = p^(mn)(1-p^-n) Σ_{N>=m} p^(-Nn) h_N`.
    fn outer_mass(&self, m: i32) -> (f64, f64) {
        let scale = pow(self.p(), m * self.n() as i32) * self.sphere_factor();
        let head = pow(self.p(), -m * self.n() as i32) * self.deficit(m);
        let sum = dual_tail_sum(
            self.p(),
            self.n(),
            m,
            |k| self.deficit(k),
            |k| self.deficit_bound(k),
            self.tol * head.max(f64::MIN_POSITIVE),
        );
        (scale * sum.value, scale * sum.remainder_bound)
    }
}

/// Shell table of the Green kernel `G_λ` on `[-K, m_ext]`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    dual: DualProfile,
    lambda: f64,
    k_res: i32,
    m_ext: i32,
    tol: f64,
    shells: Vec<f64>,
    ball_integrals: Vec<f64>,
    center_value: f64,
    outer_mass: f64,
    remainder_bound: f64,
    degenerate: bool,
}

/// Tabulate `G_λ` for a grid: shell values on `‖x‖ = p^m`, `-K <= m <= m_ext`,
/// and ball integrals `∫_{B_m} G_λ` over the same range.
pub fn green_kernel(
    a_hat: &DualProfile,
    lambda: f64,
    grid: &GridSpec,
    m_ext: i32,
    tol: f64,
) -> Result<KernelTable> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return param(format!("lambda = {lambda} must be positive"));
    }
    if a_hat.p() != grid.p() || a_hat.n() != grid.n() {
        return Err(Error::GridMismatch(
            "profile and grid live on different spaces".into(),
        ));
    }
    let mass = a_hat.limit_at_zero_frequency();
    if (mass - 1.0).abs() > 1e-10 {
        return param(format!("jump density has mass {mass}, expected 1"));
    }
    if m_ext < grid.m() {
        return param(format!(
            "kernel window m_ext = {m_ext} must cover B_{}",
            grid.m()
        ));
    }
    build_kernel(a_hat, lambda, grid.k(), m_ext, tol)
}

fn build_kernel(
    a_hat: &DualProfile,
    lambda: f64,
    k_res: i32,
    m_ext: i32,
    tol: f64,
) -> Result<KernelTable> {
    let eval = GreenEvaluator {
        dual: a_hat,
        lambda,
        tol,
    };
    let mut remainder_bound: f64 = 0.0;
    let mut shells = Vec::with_capacity((m_ext + k_res + 1) as usize);
    let mut ball_integrals = Vec::with_capacity(shells.capacity());
    for m in -k_res..=m_ext {
        let (g, rg) = eval.shell(m);
        let (b, rb) = eval.ball_integral(m);
        shells.push(g);
        ball_integrals.push(b);
        remainder_bound = remainder_bound.max(rg).max(rb);
    }
    let j_min = a_hat.profile().j_min();
    let (center_value, rc) = eval.shell(j_min.min(-k_res));
    let (outer_mass, ro) = eval.outer_mass(m_ext);
    remainder_bound = remainder_bound.max(rc).max(ro);
    Ok(KernelTable {
        dual: a_hat.clone(),
        lambda,
        k_res,
        m_ext,
        tol,
        shells,
        ball_integrals,
        center_value,
        outer_mass,
        remainder_bound,
        degenerate: a_hat.profile().is_degenerate(),
    })
}

impl KernelTable {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> u32 {
        self.dual.p()
    }

    pub fn n(&self) -> u32 {
        self.dual.n()
    }

    /// Shell window `[-K, m_ext]`.
    pub fn window(&self) -> (i32, i32) {
        (-self.k_res, self.m_ext)
    }

    pub fn dual(&self) -> &DualProfile {
        &self.dual
    }

    /// `G_λ` on `‖x‖ = p^m` for `m` in the window.
    pub fn shell(&self, m: i32) -> f64 {
        self.shells[(m + self.k_res) as usize]
    }

    pub fn shells(&self) -> &[f64] {
        &self.shells
    }

    /// `∫_{B_m} G_λ` for `m` in the window.
    pub fn ball_integral(&self, m: i32) -> f64 {
        self.ball_integrals[(m + self.k_res) as usize]
    }

    /// `∫_{B_{-K}} G_λ`, the diagonal cell integral.
    pub fn diag_cell_integral(&self) -> f64 {
        self.ball_integrals[0]
    }

    /// `G_λ(0)`.
    pub fn center_value(&self) -> f64 {
        self.center_value
    }

    /// `∫_{‖x‖>p^m_ext} G_λ`.
    pub fn outer_mass(&self) -> f64 {
        self.outer_mass
    }

    /// Largest truncation bound among the tabulated quantities.
    pub fn remainder_bound(&self) -> f64 {
        self.remainder_bound
    }

    /// Set for compactly supported jump densities: `G_λ` then vanishes far
    /// from the origin and `Q_λ` is not positivity improving.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    /// `G_λ` at a point of norm `p^m` (`None` for the origin), any `m`.
    pub fn value_at(&self, shell: Option<i32>) -> f64 {
        match shell {
            None => self.center_value,
            Some(m) if m >= -self.k_res && m <= self.m_ext => self.shell(m),
            Some(m) => {
                GreenEvaluator {
                    dual: &self.dual,
                    lambda: self.lambda,
                    tol: self.tol,
                }
                .shell(m)
                .0
            }
        }
    }

    /// `∫ G_λ` assembled from the shell table: the diagonal cell, the spheres
    /// `-K < m <= m_ext` and the closed-form mass beyond. Equals `1/λ`.
    pub fn mass_from_shells(&self) -> f64 {
        let (p, n) = (self.p(), self.n());
        let spheres: f64 = (-self.k_res + 1..=self.m_ext)
            .map(|m| sphere_volume(p, n, m) * self.shell(m))
            .sum();
        self.diag_cell_integral() + spheres + self.outer_mass
    }

    /// `|λ ∫G_λ - 1|`, checking the zero-frequency identity `∫ G_λ = 1/λ`.
    pub fn mass_identity_error(&self) -> f64 {
        (self.lambda * self.mass_from_shells() - 1.0).abs()
    }

    fn matches(&self, grid: &GridSpec) -> Result<()> {
        if self.p() != grid.p() || self.n() != grid.n() || self.k_res != grid.k() {
            return Err(Error::GridMismatch(format!(
                "kernel for (p, n, K) = ({}, {}, {}) used on ({}, {}, {})",
                self.p(),
                self.n(),
                self.k_res,
                grid.p(),
                grid.n(),
                grid.k()
            )));
        }
        if self.m_ext < grid.m() {
            return Err(Error::GridMismatch(format!(
                "kernel window ends at p^{} inside B_{}",
                self.m_ext,
                grid.m()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The operator Q_λ

/// Cell geometry reused across many `λ`.
#[derive(Debug, Clone)]
struct CellGeometry {
    grid: GridSpec,
    distances: Vec<i32>,
}

impl CellGeometry {
    fn new(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            distances: grid.distance_table(),
        }
    }

    fn count(&self) -> usize {
        self.grid.cell_count()
    }

    fn distance(&self, i: usize, j: usize) -> i32 {
        self.distances[i * self.count() + j]
    }

    /// `I_ij = ∫_{cell j} k(x_i - y) dy` for a radial kernel given by its
    /// shell values and the integral over `B_{-K}`.
    fn cell_integral(&self, i: usize, j: usize, shell: impl Fn(i32) -> f64, diag: f64) -> f64 {
        if i == j {
            diag
        } else {
            self.grid.cell_volume() * shell(self.distance(i, j))
        }
    }
}

/// `Q_λ` on cell-constant functions of `B_M`:
/// `Q[i][j] = V(x_j) / (λ+1-V(x_i)) · I_ij`.
#[derive(Debug, Clone)]
pub struct QMatrix {
    lambda: f64,
    grid: GridSpec,
    matrix: DenseMatrix,
    kernel_remainder: f64,
}

impl QMatrix {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn kernel_remainder(&self) -> f64 {
        self.kernel_remainder
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.matrix.matvec(phi)
    }
}

pub fn q_matrix(kernel: &KernelTable, v: &Potential) -> Result<QMatrix> {
    kernel.matches(&v.grid)?;
    let geometry = CellGeometry::new(&v.grid);
    Ok(assemble_q(kernel, v, &geometry))
}

fn assemble_q(kernel: &KernelTable, v: &Potential, geometry: &CellGeometry) -> QMatrix {
    let lambda = kernel.lambda;
    let vals = &v.values;
    let diag = kernel.diag_cell_integral();
    let matrix = DenseMatrix::from_fn(geometry.count(), geometry.count(), |i, j| {
        if vals[j] == 0.0 {
            return 0.0;
        }
        vals[j] / (lambda + 1.0 - vals[i]) * geometry.cell_integral(i, j, |m| kernel.shell(m), diag)
    });
    QMatrix {
        lambda,
        grid: v.grid,
        matrix,
        kernel_remainder: kernel.remainder_bound,
    }
}

/// Spectral radius and Perron vector of `Q_λ` by power iteration.
pub fn spectral_radius(q: &QMatrix, opts: &PowerOptions) -> Result<PerronPair> {
    power_iteration(&q.matrix, opts)
}

/// Largest `c0` with `(Qφ)(x) >= c0 φ(x)` on every cell where `φ > 0`.
pub fn witness_constant(q: &DenseMatrix, phi: &[f64]) -> f64 {
    let q_phi = q.matvec(phi);
    phi.iter()
        .zip(&q_phi)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, g)| g / f)
        .fold(f64::INFINITY, f64::min)
}

/// Whether `(Qφ)(x) >= c0 φ(x)` on every cell; if so `r(Q) >= c0`.
pub fn lower_bound_witness(q: &QMatrix, phi: &[f64], c0: f64) -> Result<bool> {
    if phi.len() != q.matrix.cols() {
        return Err(Error::GridMismatch("test function length".into()));
    }
    if phi.iter().any(|f| *f < 0.0) {
        return param("test function must be nonnegative");
    }
    let q_phi = q.apply(phi);
    Ok(phi.iter().zip(&q_phi).all(|(f, g)| *g >= c0 * f))
}

// ---------------------------------------------------------------------------
// Radial reduction

/// `Q_λ` restricted to radial functions: slot 0 is the ball `B_inner`, slot
/// `s` the sphere `‖x‖ = p^(inner+s)`.
#[derive(Debug, Clone)]
pub struct RadialQMatrix {
    lambda: f64,
    potential: RadialPotential,
    matrix: DenseMatrix,
}

impl RadialQMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn potential(&self) -> &RadialPotential {
        &self.potential
    }
}

/// `∫_{slot t} k(x - y) dy` for `x` in slot `s`, for a radial kernel with
/// shell values `shell(m)` and ball integrals `ball(m)`.
fn radial_slot_integral(
    p: u32,
    n: u32,
    inner: i32,
    s: usize,
    t: usize,
    shell: &impl Fn(i32) -> f64,
    ball: &impl Fn(i32) -> f64,
) -> f64 {
    let m_of = |slot: usize| inner + slot as i32;
    match (s, t) {
        (0, 0) => ball(inner),
        (_, 0) => ball_volume(p, n, inner) * shell(m_of(s)),
        (0, _) => sphere_volume(p, n, m_of(t)) * shell(m_of(t)),
        _ => {
            let (m, mt) = (m_of(s), m_of(t));
            if mt < m {
                sphere_volume(p, n, mt) * shell(m)
            } else if mt > m {
                sphere_volume(p, n, mt) * shell(mt)
            } else {
                ball(m) - ball_volume(p, n, m - 1) * shell(m)
            }
        }
    }
}

pub fn radial_q_matrix(kernel: &KernelTable, v: &RadialPotential) -> Result<RadialQMatrix> {
    if v.p != kernel.p() || v.n != kernel.n() {
        return Err(Error::GridMismatch(
            "potential and kernel on different spaces".into(),
        ));
    }
    let (lo, hi) = kernel.window();
    if v.inner < lo || v.outer() > hi {
        return Err(Error::GridMismatch(format!(
            "radial slots [{}, {}] outside the kernel window [{lo}, {hi}]",
            v.inner,
            v.outer()
        )));
    }
    let lambda = kernel.lambda;
    let size = v.values.len();
    let shell = |m: i32| kernel.shell(m);
    let ball = |m: i32| kernel.ball_integral(m);
    let matrix = DenseMatrix::from_fn(size, size, |s, t| {
        let vt = v.values[t];
        if vt == 0.0 {
            return 0.0;
        }
        vt / (lambda + 1.0 - v.values[s])
            * radial_slot_integral(v.p, v.n, v.inner, s, t, &shell, &ball)
    });
    Ok(RadialQMatrix {
        lambda,
        potential: v.clone(),
        matrix,
    })
}

/// [`radial_q_matrix`] for a cell potential, which must be radial.
pub fn radial_q_matrix_for(kernel: &KernelTable, v: &Potential) -> Result<RadialQMatrix> {
    radial_q_matrix(kernel, &v.radial_form()?)
}

// ---------------------------------------------------------------------------
// The operator L and its ground state

/// Eigenfunction values on the spheres `‖x‖ = p^m`, `m > M`.
///
/// Off the support of `V` the eigen-equation reads
/// `ψ(x) = (λ+1)^-1 ∫ G_λ(x-y) V(y) ψ(y) dy`, and for `‖x‖ > p^M` every
/// `y ∈ B_M` sits at distance `‖x‖`, so `ψ(x) = G_λ(‖x‖) ∫Vψ / (λ+1)`.
#[derive(Debug, Clone, Serialize)]
pub struct ExteriorExtension {
    pub first_shell: i32,
    pub values: Vec<f64>,
}

impl ExteriorExtension {
    fn from_kernel(kernel: &KernelTable, outer: i32, shells: i32, weight: f64) -> Self {
        let first_shell = outer + 1;
        let values = (first_shell..first_shell + shells)
            .map(|m| kernel.value_at(Some(m)) * weight / (kernel.lambda + 1.0))
            .collect();
        Self {
            first_shell,
            values,
        }
    }

    pub fn value(&self, m: i32) -> Option<f64> {
        usize::try_from(m - self.first_shell)
            .ok()
            .and_then(|i| self.values.get(i).copied())
    }

    /// `∫_{‖y‖>p^M} a(x - y) ψ(y) dy` for any `x ∈ B_M`.
    fn convolve_into_ball(&self, a: &RadialProfile) -> f64 {
        let (p, n) = (a.p(), a.n());
        self.values
            .iter()
            .enumerate()
            .map(|(i, psi)| {
                let m = self.first_shell + i as i32;
                sphere_volume(p, n, m) * a.shell_value(m) * psi
            })
            .sum()
    }
}

fn check_profile(a: &RadialProfile, grid: &GridSpec) -> Result<()> {
    if a.p() != grid.p() || a.n() != grid.n() {
        return Err(Error::GridMismatch(
            "profile and grid live on different spaces".into(),
        ));
    }
    Ok(())
}

/// `Σ_j J_ij ψ_j` with `J_ij` the exact cell integrals of `a`.
fn convolve_cells(a: &RadialProfile, geometry: &CellGeometry, psi: &[f64]) -> Vec<f64> {
    let diag = a.ball_mass(-geometry.grid.k());
    let j = DenseMatrix::from_fn(geometry.count(), geometry.count(), |i, j| {
        geometry.cell_integral(i, j, |m| a.shell_value(m), diag)
    });
    j.matvec(psi)
}

/// `(L_0 + V)ψ` on the cells of `B_M`, with `L_0 ψ = a*ψ - ψ`.
///
/// `ψ` is zero outside `B_M` unless an exterior extension is supplied.
pub fn apply_l(
    a: &RadialProfile,
    v: &Potential,
    psi: &[f64],
    exterior: Option<&ExteriorExtension>,
) -> Result<Vec<f64>> {
    check_profile(a, &v.grid)?;
    if psi.len() != v.grid.cell_count() {
        return Err(Error::GridMismatch(format!(
            "{} values for {} cells",
            psi.len(),
            v.grid.cell_count()
        )));
    }
    let geometry = CellGeometry::new(&v.grid);
    Ok(apply_l_with(a, v, psi, exterior, &geometry))
}

fn apply_l_with(
    a: &RadialProfile,
    v: &Potential,
    psi: &[f64],
    exterior: Option<&ExteriorExtension>,
    geometry: &CellGeometry,
) -> Vec<f64> {
    let outside = exterior.map_or(0.0, |e| e.convolve_into_ball(a));
    let conv = convolve_cells(a, geometry, psi);
    conv.iter()
        .zip(psi)
        .zip(&v.values)
        .map(|((c, f), w)| c + outside - f + w * f)
        .collect()
}

/// Radial analogue of [`apply_l`]: `ψ` given on the slots of `v`.
pub fn apply_l_radial(
    a: &RadialProfile,
    v: &RadialPotential,
    psi: &[f64],
    exterior: Option<&ExteriorExtension>,
) -> Result<Vec<f64>> {
    if a.p() != v.p || a.n() != v.n {
        return Err(Error::GridMismatch(
            "profile and potential on different spaces".into(),
        ));
    }
    if psi.len() != v.values.len() {
        return Err(Error::GridMismatch("radial vector length".into()));
    }
    let outside = exterior.map_or(0.0, |e| e.convolve_into_ball(a));
    let shell = |m: i32| a.shell_value(m);
    let ball = |m: i32| a.ball_mass(m);
    let size = psi.len();
    Ok((0..size)
        .map(|s| {
            let conv: f64 = (0..size)
                .map(|t| radial_slot_integral(v.p, v.n, v.inner, s, t, &shell, &ball) * psi[t])
                .sum();
            conv + outside - psi[s] + v.values[s] * psi[s]
        })
        .collect())
}

/// Layout of the eigenfunction vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// One value per grid cell, indexed by cell id.
    Cells,
    /// Slot 0 is the ball `B_inner`, slot `s` the sphere `p^(inner+s)`.
    RadialSlots { inner: i32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolverFlags {
    /// Some power iteration hit its iteration cap.
    pub power_not_converged: bool,
    /// Sampled `r(Q_λ)` values were not strictly decreasing in `λ`.
    pub non_monotone_samples: bool,
    /// The `λ` bracket shrank to rounding level before `|r - 1|` met the
    /// tolerance; the best bracketing sample was returned.
    pub bisection_stalled: bool,
    /// The jump density is compactly supported.
    pub degenerate_kernel: bool,
}

/// Maximum of `ψ` over one shell (`None` is the central cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShellMax {
    pub shell: Option<i32>,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundState {
    /// Top eigenvalue of `L`.
    pub lambda_star: f64,
    pub layout: Layout,
    /// Eigenfunction on `B_M`, positive, sup-norm 1.
    pub psi: Vec<f64>,
    pub spectral_radius_at_solution: f64,
    /// `sup_{B_M} |(L_0 + V - λ*)ψ|`.
    pub eigen_residual: f64,
    /// `sup |Q_λ* ψ - ψ|`.
    pub fixed_point_residual: f64,
    /// Sampled `(λ, r(Q_λ))`, sorted by `λ`.
    pub r_curve: Vec<(f64, f64)>,
    pub shell_maxima: Vec<ShellMax>,
    pub exterior: ExteriorExtension,
    pub kernel_remainder: f64,
    pub flags: SolverFlags,
}

impl GroundState {
    /// Maximum of `ψ` on the outermost shell of `B_M`.
    pub fn outermost_shell_max(&self) -> f64 {
        self.shell_maxima.last().map_or(0.0, |s| s.max)
    }
}

/// The search sampled `r(Q_λ)` down to the floor without crossing 1.
#[derive(Debug, Clone, Serialize)]
pub struct NoGroundState {
    pub lambda_floor: f64,
    pub radius_at_floor: f64,
    pub r_curve: Vec<(f64, f64)>,
    pub flags: SolverFlags,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GroundStateSearch {
    Found(GroundState),
    NoGroundStateDetected(NoGroundState),
}

impl GroundStateSearch {
    pub fn found(&self) -> Option<&GroundState> {
        match self {
            GroundStateSearch::Found(g) => Some(g),
            GroundStateSearch::NoGroundStateDetected(_) => None,
        }
    }
}

/// Outcome of the `λ` search before the eigenfunction is post-processed.
enum Crossing {
    Found { lambda: f64, pair: PerronPair },
    Below { floor: f64, radius: f64 },
}

struct Search<F> {
    eval: F,
    curve: Vec<(f64, f64)>,
    flags: SolverFlags,
}

impl<F: FnMut(f64) -> Result<PerronPair>> Search<F> {
    fn sample(&mut self, lambda: f64) -> Result<PerronPair> {
        let pair = (self.eval)(lambda)?;
        self.flags.power_not_converged |= !pair.converged;
        self.curve.push((lambda, pair.radius));
        Ok(pair)
    }

    /// Bracket `r(λ) = 1` and bisect, geometrically while the bracket spans
    /// more than a factor 2.
    fn run(&mut self, tol: &SolverTolerances) -> Result<Crossing> {
        let close = |r: f64| (r - 1.0).abs() <= tol.bisection_tol;
        let first = self.sample(1.0)?;
        if close(first.radius) {
            return Ok(Crossing::Found {
                lambda: 1.0,
                pair: first,
            });
        }
        let (mut lo, mut hi, mut lo_pair, mut hi_pair);
        if first.radius > 1.0 {
            lo = 1.0;
            lo_pair = first;
            hi = 2.0;
            loop {
                let pair = self.sample(hi)?;
                if close(pair.radius) {
                    return Ok(Crossing::Found { lambda: hi, pair });
                }
                if pair.radius < 1.0 {
                    hi_pair = pair;
                    break;
                }
                if hi > 1e15 {
                    return param("r(Q_λ) stays above 1 for every sampled λ");
                }
                lo = hi;
                lo_pair = pair;
                hi *= 2.0;
            }
        } else {
            hi = 1.0;
            hi_pair = first;
            lo = 1.0;
            loop {
                lo /= 10.0;
                if lo <= tol.lambda_floor * (1.0 + 1e-9) {
                    lo = tol.lambda_floor;
                }
                let pair = self.sample(lo)?;
                if close(pair.radius) {
                    return Ok(Crossing::Found { lambda: lo, pair });
                }
                if pair.radius > 1.0 {
                    lo_pair = pair;
                    break;
                }
                if lo <= tol.lambda_floor {
                    return Ok(Crossing::Below {
                        floor: lo,
                        radius: pair.radius,
                    });
                }
                hi = lo;
                hi_pair = pair;
            }
        }
        for _ in 0..400 {
            let mid = if hi / lo > 2.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let pair = self.sample(mid)?;
            if close(pair.radius) {
                return Ok(Crossing::Found { lambda: mid, pair });
            }
            if pair.radius > 1.0 {
                lo = mid;
                lo_pair = pair;
            } else {
                hi = mid;
                hi_pair = pair;
            }
        }
        self.flags.bisection_stalled = true;
        Ok(
            if (lo_pair.radius - 1.0).abs() <= (hi_pair.radius - 1.0).abs() {
                Crossing::Found {
                    lambda: lo,
                    pair: lo_pair,
                }
            } else {
                Crossing::Found {
                    lambda: hi,
                    pair: hi_pair,
                }
            },
        )
    }

    fn finish_curve(&mut self) -> Vec<(f64, f64)> {
        let mut curve = std::mem::take(&mut self.curve);
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        curve.dedup_by(|a, b| a.0 == b.0);
        self.flags.non_monotone_samples = curve.windows(2).any(|w| w[1].1 >= w[0].1);
        curve
    }
}

fn check_jump_density(a: &RadialProfile) -> Result<()> {
    let mass = a.total_mass();
    if (mass - 1.0).abs() > 1e-10 {
        return param(format!("jump density has mass {mass}, expected 1"));
    }
    if a.is_degenerate() {
        return Err(Error::Degenerate(
            "compactly supported jump density; the kernel is not positivity improving".into(),
        ));
    }
    Ok(())
}

fn kernel_dual(a: &RadialProfile, k_res: i32, m_ext: i32) -> Result<DualProfile> {
    fourier_radial(a, -k_res - 1, m_ext + 1)
}

/// Top eigenvalue and ground state of `L = L_0 + V` on the full cell grid.
pub fn find_ground_state(
    a: &RadialProfile,
    v: &Potential,
    tol: &SolverTolerances,
) -> Result<GroundStateSearch> {
    check_jump_density(a)?;
    check_profile(a, &v.grid)?;
    if v.is_zero() {
        return param("the potential vanishes identically");
    }
    let grid = v.grid;
    let m_ext = grid.m() + tol.exterior_shells.max(1);
    let dual = kernel_dual(a, grid.k(), m_ext)?;
    let geometry = CellGeometry::new(&grid);
    let opts = tol.power_options();

    let mut search = Search {
        eval: |lambda: f64| {
            let kernel = green_kernel(&dual, lambda, &grid, m_ext, tol.kernel_tail_tol)?;
            power_iteration(&assemble_q(&kernel, v, &geometry).matrix, &opts)
        },
        curve: Vec::new(),
        flags: SolverFlags::default(),
    };
    let crossing = search.run(tol)?;
    let r_curve = search.finish_curve();
    let flags = search.flags;
    let (lambda, pair) = match crossing {
        Crossing::Below { floor, radius } => {
            return Ok(GroundStateSearch::NoGroundStateDetected(NoGroundState {
                lambda_floor: floor,
                radius_at_floor: radius,
                r_curve,
                flags,
            }))
        }
        Crossing::Found { lambda, pair } => (lambda, pair),
    };

    let kernel = green_kernel(&dual, lambda, &grid, m_ext, tol.kernel_tail_tol)?;
    let q = assemble_q(&kernel, v, &geometry);
    let psi = pair.vector;
    let q_psi = q.apply(&psi);
    let fixed_point_residual = sup_diff(&q_psi, &psi);

    let weight: f64 =
        v.values.iter().zip(&psi).map(|(w, f)| w * f).sum::<f64>() * grid.cell_volume();
    let exterior = ExteriorExtension::from_kernel(&kernel, grid.m(), tol.exterior_shells, weight);
    let l_psi = apply_l_with(a, v, &psi, Some(&exterior), &geometry);
    let eigen_residual = l_psi
        .iter()
        .zip(&psi)
        .map(|(l, f)| (l - lambda * f).abs())
        .fold(0.0, f64::max);

    let mut shell_maxima: Vec<ShellMax> = Vec::new();
    for shell in std::iter::once(None).chain((-grid.k() + 1..=grid.m()).map(Some)) {
        let max = (0..grid.cell_count())
            .filter(|&id| grid.shell_of(id) == shell)
            .map(|id| psi[id])
            .fold(0.0, f64::max);
        shell_maxima.push(ShellMax { shell, max });
    }

    Ok(GroundStateSearch::Found(GroundState {
        lambda_star: lambda,
        layout: Layout::Cells,
        psi,
        spectral_radius_at_solution: pair.radius,
        eigen_residual,
        fixed_point_residual,
        r_curve,
        shell_maxima,
        exterior,
        kernel_remainder: kernel.remainder_bound,
        flags: SolverFlags {
            degenerate_kernel: kernel.degenerate,
            ..flags
        },
    }))
}

/// Ground state restricted to radial functions. `v` is tabulated from the
/// ball `B_inner` (with `inner >= -k_res`) out to its support.
pub fn find_ground_state_radial(
    a: &RadialProfile,
    v: &RadialPotential,
    k_res: i32,
    tol: &SolverTolerances,
) -> Result<GroundStateSearch> {
    check_jump_density(a)?;
    if a.p() != v.p || a.n() != v.n {
        return Err(Error::GridMismatch(
            "profile and potential on different spaces".into(),
        ));
    }
    if v.is_zero() {
        return param("the potential vanishes identically");
    }
    let outer = v.outer();
    let k_res = k_res.max(-v.inner);
    let m_ext = outer + tol.exterior_shells.max(1);
    let dual = kernel_dual(a, k_res, m_ext)?;
    let opts = tol.power_options();

    let mut search = Search {
        eval: |lambda: f64| {
            let kernel = build_kernel(&dual, lambda, k_res, m_ext, tol.kernel_tail_tol)?;
            power_iteration(&radial_q_matrix(&kernel, v)?.matrix, &opts)
        },
        curve: Vec::new(),
        flags: SolverFlags::default(),
    };
    let crossing = search.run(tol)?;
    let r_curve = search.finish_curve();
    let flags = search.flags;
    let (lambda, pair) = match crossing {
        Crossing::Below { floor, radius } => {
            return Ok(GroundStateSearch::NoGroundStateDetected(NoGroundState {
                lambda_floor: floor,
                radius_at_floor: radius,
                r_curve,
                flags,
            }))
        }
        Crossing::Found { lambda, pair } => (lambda, pair),
    };

    let kernel = build_kernel(&dual, lambda, k_res, m_ext, tol.kernel_tail_tol)?;
    let q = radial_q_matrix(&kernel, v)?;
    let psi = pair.vector;
    let fixed_point_residual = sup_diff(&q.matrix.matvec(&psi), &psi);
    let weight: f64 = v
        .slot_volumes()
        .iter()
        .zip(&v.values)
        .zip(&psi)
        .map(|((vol, w), f)| vol * w * f)
        .sum();
    let exterior = ExteriorExtension::from_kernel(&kernel, outer, tol.exterior_shells, weight);
    let l_psi = apply_l_radial(a, v, &psi, Some(&exterior))?;
    let eigen_residual = l_psi
        .iter()
        .zip(&psi)
        .map(|(l, f)| (l - lambda * f).abs())
        .fold(0.0, f64::max);
    let shell_maxima = psi
        .iter()
        .enumerate()
        .map(|(s, &max)| ShellMax {
            shell: (s > 0).then(|| v.inner + s as i32),
            max,
        })
        .collect();

    Ok(GroundStateSearch::Found(GroundState {
        lambda_star: lambda,
        layout: Layout::RadialSlots { inner: v.inner },
        psi,
        spectral_radius_at_solution: pair.radius,
        eigen_residual,
        fixed_point_residual,
        r_curve,
        shell_maxima,
        exterior,
        kernel_remainder: kernel.remainder_bound,
        flags,
    }))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Quadratic form and dissipativity

/// `(L f_N, f_N) = l0_term + v_term` for the indicator `f_N` of `B_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticForm {
    pub ball: i32,
    /// `(L_0 f_N, f_N) = -Vol(B_N) ∫_{‖z‖>p^N} a`.
    pub l0_term: f64,
    /// `(V f_N, f_N) = ∫_{B_N} V`.
    pub v_term: f64,
    pub ball_volume: f64,
}

impl QuadraticForm {
    pub fn total(&self) -> f64 {
        self.l0_term + self.v_term
    }

    /// `|(L_0 f_N, f_N)| / Vol(B_N)`, which tends to 0 as `N` grows.
    pub fn normalized_l0(&self) -> f64 {
        self.l0_term.abs() / self.ball_volume
    }
}

pub fn quadratic_form(a: &RadialProfile, v: &Potential, ball: i32) -> Result<QuadraticForm> {
    let grid = v.grid;
    check_profile(a, &grid)?;
    if ball > grid.m() || ball < -grid.k() {
        return Err(Error::Domain(format!(
            "B_{ball} is not resolved by a grid on B_{} at resolution p^-{}",
            grid.m(),
            grid.k()
        )));
    }
    let ball_volume = ball_volume(a.p(), a.n(), ball);
    let l0_term = -ball_volume * a.outer_mass(ball);
    let v_term = grid.cells_in_ball(ball).map(|id| v.values[id]).sum::<f64>() * grid.cell_volume();
    Ok(QuadraticForm {
        ball,
        l0_term,
        v_term,
        ball_volume,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipativityReport {
    pub passed: bool,
    /// Smallest `‖λf - L_0 f‖∞ - λ‖f‖∞` observed.
    pub min_margin: f64,
    pub evaluations: usize,
    pub lambdas: Vec<f64>,
}

/// Allowed rounding slack in the dissipativity inequality.
pub const DISSIPATIVITY_ALLOWANCE: f64 = 1e-9;

/// Check `‖λf - L_0 f‖∞ >= λ‖f‖∞` for random cell functions on `B_M` and
/// `λ ∈ {0.1, 1, 10}`.
pub fn dissipativity_check(
    a: &RadialProfile,
    grid: &GridSpec,
    trials: usize,
    seed: u64,
) -> Result<DissipativityReport> {
    check_profile(a, grid)?;
    let geometry = CellGeometry::new(grid);
    let diag = a.ball_mass(-grid.k());
    let j = DenseMatrix::from_fn(geometry.count(), geometry.count(), |i, k| {
        geometry.cell_integral(i, k, |m| a.shell_value(m), diag)
    });
    let lambdas = vec![0.1, 1.0, 10.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    let mut evaluations = 0;
    for trial in 0..trials {
        let f: Vec<f64> = if trial == 0 {
            vec![1.0; geometry.count()]
        } else {
            (0..geometry.count())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect()
        };
        let jf = j.matvec(&f);
        let f_norm = sup_norm(&f);
        for &lambda in &lambdas {
            let lhs = jf
                .iter()
                .zip(&f)
                .map(|(c, x)| (lambda * x - (c - x)).abs())
                .fold(0.0, f64::max);
            min_margin = min_margin.min(lhs - lambda * f_norm);
            evaluations += 1;
        }
    }
    Ok(DissipativityReport {
        passed: min_margin >= -DISSIPATIVITY_ALLOWANCE,
        min_margin,
        evaluations,
        lambdas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> RadialProfile {
        RadialProfile::power_law(2, 1, 2.0 / 3.0, 1.0).unwrap()
    }

    fn kernel_for(a: &RadialProfile, lambda: f64, grid: &GridSpec, m_ext: i32) -> KernelTable {
        let dual = fourier_radial(a, -grid.k() - 1, m_ext).unwrap();
        green_kernel(&dual, lambda, grid, m_ext, 1e-12).unwrap()
    }

    #[test]
    fn indicator_kernel_at_lambda_one() {
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        let grid = GridSpec::new(2, 1, 3, 2).unwrap();
        let k = kernel_for(&a, 1.0, &grid, 6);
        assert!(k.degenerate());
        assert!((k.shell(0) - 1.0).abs() < 1e-14);
        assert!(k.shell(1).abs() < 1e-14);
        assert!((k.center_value() - 1.0).abs() < 1e-14);
        assert!(k.mass_identity_error() < 1e-12);
    }

    #[test]
    fn kernel_mass_identity_and_positivity() {
        let grid = GridSpec::new(2, 1, 3, 3).unwrap();
        for (alpha, lambda) in [(1.0, 0.1), (1.0, 1.0), (0.3, 10.0), (2.5, 0.5)] {
            let a = RadialProfile::normalized_power_law(2, 1, alpha).unwrap();
            let k = kernel_for(&a, lambda, &grid, 40);
            assert!(k.mass_identity_error() < 1e-8, "{alpha} {lambda}");
            assert!(k.shells().iter().all(|g| *g > 0.0));
            assert!(k.diag_cell_integral() > 0.0);
        }
    }

    #[test]
    fn ball_integrals_accumulate_shells() {
        let grid = GridSpec::new(3, 2, 2, 2).unwrap();
        let a = RadialProfile::normalized_power_law(3, 2, 0.8).unwrap();
        let k = kernel_for(&a, 0.7, &grid, 10);
        for m in -1..=10 {
            let step = k.ball_integral(m - 1) + sphere_volume(3, 2, m) * k.shell(m);
            assert!((k.ball_integral(m) - step).abs() < 1e-11 * k.ball_integral(m));
        }
    }

    #[test]
    fn kernel_decreases_in_lambda() {
        let grid = GridSpec::new(2, 1, 3, 3).unwrap();
        let a = standard();
        let k1 = kernel_for(&a, 1.0, &grid, 12);
        let k2 = kernel_for(&a, 2.0, &grid, 12);
        for (g1, g2) in k1.shells().iter().zip(k2.shells()) {
            assert!(g2 < g1);
        }
        assert!(k2.diag_cell_integral() < k1.diag_cell_integral());
    }

    #[test]
    fn kernel_is_constant_inside_the_head() {
        let grid = GridSpec::new(2, 1, 2, 4).unwrap();
        let k = kernel_for(&standard(), 1.0, &grid, 8);
        for m in -4..=0 {
            assert!((k.shell(m) - k.center_value()).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let grid = GridSpec::new(2, 1, 1, 1).unwrap();
        let dual = fourier_radial(&standard(), -2, 4).unwrap();
        assert!(green_kernel(&dual, 0.0, &grid, 4, 1e-12).is_err());
        assert!(green_kernel(&dual, -1.0, &grid, 4, 1e-12).is_err());
    }

    #[test]
    fn zero_potential_gives_zero_matrix() {
        let grid = GridSpec::new(2, 1, 2, 1).unwrap();
        let k = kernel_for(&standard(), 1.0, &grid, 4);
        let v = Potential::from_cells(grid, vec![0.0; grid.cell_count()]).unwrap();
        let q = q_matrix(&k, &v).unwrap();
        assert!(q.matrix().as_slice().iter().all(|x| *x == 0.0));
        let rq = radial_q_matrix_for(&k, &v).unwrap();
        assert!(rq.matrix().as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn columns_vanish_off_the_support() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let k = kernel_for(&standard(), 1.0, &grid, 4);
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let q = q_matrix(&k, &v).unwrap();
        for j in 0..grid.cell_count() {
            let inside = grid.shell_of(j).is_none_or(|m| m <= 0);
            let zero = (0..grid.cell_count()).all(|i| q.get(i, j) == 0.0);
            assert_eq!(zero, !inside);
            if inside {
                assert!((0..grid.cell_count()).all(|i| q.get(i, j) > 0.0));
            }
        }
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let other = GridSpec::new(2, 1, 2, 1).unwrap();
        let k = kernel_for(&standard(), 1.0, &grid, 4);
        let v = Potential::indicator_ball(other, 0, 1.0).unwrap();
        assert!(matches!(q_matrix(&k, &v), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn non_radial_potential_is_rejected() {
        let grid = GridSpec::new(2, 1, 1, 1).unwrap();
        let k = kernel_for(&standard(), 1.0, &grid, 4);
        // cells 2 and 3 both lie on the sphere of radius 1
        let v = Potential::from_cells(grid, vec![1.0, 0.5, 0.2, 0.3]).unwrap();
        assert_eq!(radial_q_matrix_for(&k, &v).unwrap_err(), Error::NonRadial);
    }

    #[test]
    fn witness_against_perron_vector() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let k = kernel_for(&standard(), 0.5, &grid, 6);
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let q = q_matrix(&k, &v).unwrap();
        let pair = spectral_radius(&q, &PowerOptions::default()).unwrap();
        assert!(lower_bound_witness(&q, &pair.vector, pair.radius - 1e-9).unwrap());
        assert!(!lower_bound_witness(&q, &pair.vector, pair.radius + 0.1).unwrap());
    }

    #[test]
    fn witness_grows_as_lambda_shrinks() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let phi: Vec<f64> = v.values().to_vec();
        let mut last = 0.0;
        for lambda in [1.0, 0.1, 0.01] {
            let q = q_matrix(&kernel_for(&standard(), lambda, &grid, 6), &v).unwrap();
            let c0 = witness_constant(q.matrix(), &phi);
            assert!(lower_bound_witness(&q, &phi, c0).unwrap());
            assert!(c0 > last);
            last = c0;
        }
    }

    #[test]
    fn apply_l_on_constant() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let a = standard();
        let v = Potential::from_cells(grid, vec![0.0; grid.cell_count()]).unwrap();
        let l = apply_l(&a, &v, &vec![1.0; grid.cell_count()], None).unwrap();
        let expect = -a.outer_mass(grid.m());
        for x in l {
            assert!((x - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn apply_l_is_linear() {
        let grid = GridSpec::new(3, 1, 1, 1).unwrap();
        let a = RadialProfile::normalized_power_law(3, 1, 0.6).unwrap();
        let v = Potential::indicator_ball(grid, 0, 0.4).unwrap();
        let f: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let g: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).cos()).collect();
        let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let lf = apply_l(&a, &v, &f, None).unwrap();
        let lg = apply_l(&a, &v, &g, None).unwrap();
        let lc = apply_l(&a, &v, &comb, None).unwrap();
        for i in 0..9 {
            assert!((lc[i] - (2.0 * lf[i] - 0.5 * lg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_form_values() {
        let grid = GridSpec::new(2, 1, 6, 0).unwrap();
        let a = standard();
        let q0 = quadratic_form(&a, &Potential::indicator_ball(grid, 0, 0.5).unwrap(), 0).unwrap();
        assert!((q0.l0_term + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(q0.v_term, 0.5);
        let q3 = quadratic_form(&a, &Potential::indicator_ball(grid, 3, 0.5).unwrap(), 3).unwrap();
        assert!((q3.normalized_l0() - q0.normalized_l0() / 8.0).abs() < 1e-14);
        assert_eq!(q3.v_term, 4.0);
        assert!(quadratic_form(&a, &Potential::indicator_ball(grid, 3, 0.5).unwrap(), 7).is_err());
    }

    #[test]
    fn dissipativity_holds() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        let report = dissipativity_check(&a, &grid, 100, 3).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.evaluations, 300);
    }

    #[test]
    fn ground_state_on_small_grid() {
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let out = find_ground_state(&standard(), &v, &SolverTolerances::default()).unwrap();
        let gs = out.found().expect("ground state");
        assert!(gs.lambda_star > 0.0);
        assert!(gs.psi.iter().all(|x| *x > 0.0));
        assert!((gs.spectral_radius_at_solution - 1.0).abs() <= 1e-8);
        assert!(gs.fixed_point_residual <= 1e-8);
        assert!(gs.eigen_residual <= 1e-6, "{}", gs.eigen_residual);
        assert!(gs.outermost_shell_max() < 1.0);
        assert!(!gs.flags.non_monotone_samples);
    }

    #[test]
    fn exterior_matches_one_step_extension() {
        // On the first sphere outside B_M, ψ = (a*ψ)/(1+λ*) with ψ extended.
        let grid = GridSpec::new(2, 1, 2, 2).unwrap();
        let a = standard();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let tol = SolverTolerances::default();
        let gs = find_ground_state(&a, &v, &tol)
            .unwrap()
            .found()
            .unwrap()
            .clone();
        let (p, n, m) = (2, 1, grid.m());
        let first = m + 1;
        let interior: f64 = gs.psi.iter().sum::<f64>() * grid.cell_volume();
        let ext = &gs.exterior;
        let mut conv = a.shell_value(first) * interior;
        for (i, psi) in ext.values.iter().enumerate() {
            let mt = ext.first_shell + i as i32;
            conv += if mt == first {
                psi * (a.ball_mass(first) - ball_volume(p, n, m) * a.shell_value(first))
            } else {
                psi * sphere_volume(p, n, mt) * a.shell_value(mt)
            };
        }
        let one_step = conv / (1.0 + gs.lambda_star);
        let direct = ext.value(first).unwrap();
        assert!(
            (one_step - direct).abs() < 1e-8 * direct,
            "{one_step} vs {direct}"
        );
        assert!(direct < gs.outermost_shell_max());
    }

    #[test]
    fn radial_and_full_ground_states_agree() {
        let grid = GridSpec::new(2, 1, 3, 3).unwrap();
        let a = standard();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let tol = SolverTolerances::default();
        let full = find_ground_state(&a, &v, &tol).unwrap();
        let radial =
            find_ground_state_radial(&a, &v.radial_form().unwrap(), grid.k(), &tol).unwrap();
        let (f, r) = (full.found().unwrap(), radial.found().unwrap());
        assert!((f.lambda_star - r.lambda_star).abs() < 1e-7);
        assert!(r.eigen_residual < 1e-6);
    }

    #[test]
    fn zero_potential_is_rejected() {
        let grid = GridSpec::new(2, 1, 1, 1).unwrap();
        let v = Potential::from_cells(grid, vec![0.0; 4]).unwrap();
        assert!(find_ground_state(&standard(), &v, &SolverTolerances::default()).is_err());
    }

    #[test]
    fn degenerate_profile_is_rejected() {
        let grid = GridSpec::new(2, 1, 1, 1).unwrap();
        let v = Potential::indicator_ball(grid, 0, 1.0).unwrap();
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        assert!(matches!(
            find_ground_state(&a, &v, &SolverTolerances::default()),
            Err(Error::Degenerate(_))
        ));
    }
}

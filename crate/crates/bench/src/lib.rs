//! Scenarios shared by the benchmarks.

use padic_ground::spectral::{green_kernel, Potential, RadialPotential};
use padic_ground::{fourier_radial, DualProfile, GridSpec, KernelTable, RadialProfile};

/// `a(x) = (2/3) max(1, ‖x‖)^-2` on `Q_2`, mass 1, recurrent.
pub fn standard_profile() -> RadialProfile {
    RadialProfile::power_law(2, 1, 2.0 / 3.0, 1.0).expect("valid profile")
}

pub fn grid(p: u32, n: u32, m: i32, k: i32) -> GridSpec {
    GridSpec::new(p, n, m, k).expect("valid grid")
}

/// Indicator of `Z_p^n` on the grid.
pub fn unit_ball_potential(grid: GridSpec) -> Potential {
    Potential::indicator_ball(grid, 0, 1.0).expect("valid potential")
}

pub fn radial_unit_ball(p: u32, n: u32, m: i32, k: i32) -> RadialPotential {
    RadialPotential::indicator_ball(p, n, -k, m, 0, 1.0).expect("valid potential")
}

/// Dual profile covering the grid plus 48 exterior shells.
pub fn kernel_dual(a: &RadialProfile, grid: &GridSpec) -> DualProfile {
    fourier_radial(a, -grid.k() - 1, grid.m() + 48).expect("transform")
}

pub fn kernel(a: &RadialProfile, grid: &GridSpec, lambda: f64) -> KernelTable {
    green_kernel(&kernel_dual(a, grid), lambda, grid, grid.m() + 48, 1e-12).expect("kernel")
}

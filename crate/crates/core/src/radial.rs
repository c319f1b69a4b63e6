//! Radial functions on `Q_p^n` and their Fourier transforms.
//!
//! A radial function is a table of shell values `A_j` (its value on the sphere
//! `‖x‖ = p^j`) with a constant head below the table and either no tail or an
//! exact power-law tail above it. With these models every infinite shell sum
//! (masses, Fourier values, criterion series) is a geometric series and is
//! evaluated in closed form.
//!
//! Transforms rest on the shell character integral
//!
//! ```text
//! ∫_{‖x‖=p^j} χ(ξ·x) dx = (1 - p^-n) p^(jn)   if ‖ξ‖ <= p^-j
//!                       = -p^((j-1)n)         if ‖ξ‖ = p^(1-j)
//!                       = 0                   otherwise
//! ```
//!
//! so the transform of a radial `f` on the dual sphere `‖ξ‖ = p^-N` is
//! `(1 - p^-n) Σ_{j<=N} p^(jn) A_j - p^(Nn) A_{N+1}`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::padic::check_prime;

/// `p^e` as a float.
pub(crate) fn pow(p: u32, e: i32) -> f64 {
    (p as f64).powi(e)
}

/// Haar measure of the sphere `‖x‖ = p^j` in `Q_p^n`.
pub fn sphere_volume(p: u32, n: u32, j: i32) -> f64 {
    (1.0 - pow(p, -(n as i32))) * pow(p, j * n as i32)
}

/// Haar measure of the ball `‖x‖ <= p^j` in `Q_p^n`.
pub fn ball_volume(p: u32, n: u32, j: i32) -> f64 {
    pow(p, j * n as i32)
}

fn ratio_pow(p: u32, e: i64) -> Ratio<i128> {
    let base = (p as i128).pow(e.unsigned_abs() as u32);
    if e >= 0 {
        Ratio::from_integer(base)
    } else {
        Ratio::new(1, base)
    }
}

/// `∫_{‖x‖=p^j} χ(ξ·x) d^n x` for a frequency of norm `p^s`
/// (`xi_norm_exp = Some(s)`) or `ξ = 0` (`None`). Exact.
pub fn shell_character_integral(p: u32, n: u32, j: i32, xi_norm_exp: Option<i32>) -> Ratio<i128> {
    let n = n as i64;
    let j = j as i64;
    let full = (Ratio::from_integer(1) - ratio_pow(p, -n)) * ratio_pow(p, j * n);
    match xi_norm_exp {
        None => full,
        Some(s) if (s as i64) <= -j => full,
        Some(s) if s as i64 == 1 - j => -ratio_pow(p, (j - 1) * n),
        Some(_) => Ratio::from_integer(0),
    }
}

/// `Σ_{j=lo}^{hi} q^j` for `q = exp(log_q)`, with open ends meaning infinity.
/// An open lower end needs `q > 1`, an open upper end needs `q < 1`.
fn geometric_sum(log_q: f64, lo: Option<i32>, hi: Option<i32>) -> f64 {
    match (lo, hi) {
        (None, Some(h)) => {
            debug_assert!(log_q > 0.0);
            (h as f64 * log_q).exp() / -(-log_q).exp_m1()
        }
        (Some(l), None) => {
            debug_assert!(log_q < 0.0);
            (l as f64 * log_q).exp() / -log_q.exp_m1()
        }
        (Some(l), Some(h)) => {
            if l > h {
                return 0.0;
            }
            let count = (h - l + 1) as f64;
            (l as f64 * log_q).exp() * (count * log_q).exp_m1() / log_q.exp_m1()
        }
        (None, None) => f64::INFINITY,
    }
}

/// Behaviour of a radial profile above its explicit window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// `A_j = 0` for `j > j_max` (compact support).
    Zero,
    /// `A_j = c p^(-j(n+α))` for `j > j_max`.
    Power { c: f64, alpha: f64 },
}

/// A radial function on `Q_p^n` given by its shell values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileLiteral", into = "ProfileLiteral")]
pub struct RadialProfile {
    p: u32,
    n: u32,
    j_min: i32,
    values: Vec<f64>,
    tail: Tail,
}

impl RadialProfile {
    pub fn new(p: u32, n: u32, j_min: i32, values: Vec<f64>, tail: Tail) -> Result<Self> {
        check_prime(p)?;
        if n == 0 || n > 8 {
            return param(format!("dimension n = {n} must be between 1 and 8"));
        }
        if values.is_empty() {
            return param("profile needs at least one shell value");
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return param(format!("shell value {v} must be finite and nonnegative"));
        }
        if let Tail::Power { c, alpha } = tail {
            if !c.is_finite() || c < 0.0 {
                return param(format!("tail coefficient c = {c} must be nonnegative"));
            }
            if !alpha.is_finite() || alpha <= 0.0 {
                return param(format!("tail exponent alpha = {alpha} must be positive"));
            }
        }
        Ok(Self {
            p,
            n,
            j_min,
            values,
            tail,
        })
    }

    /// `a(x) = c·max(1, ‖x‖)^-(n+α)`: constant `c` on `Z_p^n`, power tail outside.
    pub fn power_law(p: u32, n: u32, c: f64, alpha: f64) -> Result<Self> {
        Self::new(p, n, 0, vec![c], Tail::Power { c, alpha })
    }

    /// [`power_law`](Self::power_law) scaled to total mass 1.
    pub fn normalized_power_law(p: u32, n: u32, alpha: f64) -> Result<Self> {
        Self::power_law(p, n, 1.0, alpha)?.normalize()
    }

    /// Indicator of the unit ball `Z_p^n`.
    pub fn unit_ball_indicator(p: u32, n: u32) -> Result<Self> {
        Self::new(p, n, 0, vec![1.0], Tail::Zero)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_min + self.values.len() as i32 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    /// Tail exponent `α`, if the profile has a power tail.
    pub fn alpha(&self) -> Option<f64> {
        match self.tail {
            Tail::Power { alpha, .. } => Some(alpha),
            Tail::Zero => None,
        }
    }

    fn ln_p(&self) -> f64 {
        (self.p as f64).ln()
    }

    /// `A_j`, the value on the sphere `‖x‖ = p^j`.
    pub fn shell_value(&self, j: i32) -> f64 {
        if j < self.j_min {
            self.values[0]
        } else if j <= self.j_max() {
            self.values[(j - self.j_min) as usize]
        } else {
            match self.tail {
                Tail::Zero => 0.0,
                Tail::Power { c, alpha } => {
                    c * (-(j as f64) * (self.n as f64 + alpha) * self.ln_p()).exp()
                }
            }
        }
    }

    /// Value at the origin (the head constant).
    pub fn center_value(&self) -> f64 {
        self.values[0]
    }

    /// `p^((j-1)n) A_j`, evaluated without forming large powers in the tail.
    pub(crate) fn shell_value_times_inner_ball(&self, j: i32) -> f64 {
        let n = self.n as i32;
        match self.tail {
            Tail::Power { c, alpha } if j > self.j_max() => {
                let ln_p = self.ln_p();
                c * (-(n as f64) * ln_p - j as f64 * alpha * ln_p).exp()
            }
            _ => pow(self.p, (j - 1) * n) * self.shell_value(j),
        }
    }

    /// Compact support makes `ã = 1` near the origin.
    pub fn is_degenerate(&self) -> bool {
        match self.tail {
            Tail::Zero => true,
            Tail::Power { c, .. } => c == 0.0,
        }
    }

    /// `Σ_{j=lo}^{hi} p^(jn) A_j` in closed form; open ends mean infinity.
    pub fn weighted_shell_sum(&self, lo: Option<i32>, hi: Option<i32>) -> f64 {
        let n = self.n as i32;
        let ln_p = self.ln_p();
        let j_max = self.j_max();
        let mut total = 0.0;

        let head_hi = hi.map_or(self.j_min - 1, |h| h.min(self.j_min - 1));
        if lo.is_none_or(|l| l <= head_hi) {
            total += self.values[0] * geometric_sum(n as f64 * ln_p, lo, Some(head_hi));
        }

        let w_lo = lo.map_or(self.j_min, |l| l.max(self.j_min));
        let w_hi = hi.map_or(j_max, |h| h.min(j_max));
        for j in w_lo..=w_hi {
            total += pow(self.p, j * n) * self.values[(j - self.j_min) as usize];
        }

        if let Tail::Power { c, alpha } = self.tail {
            let t_lo = lo.map_or(j_max + 1, |l| l.max(j_max + 1));
            if hi.is_none_or(|h| h >= t_lo) {
                total += c * geometric_sum(-alpha * ln_p, Some(t_lo), hi);
            }
        }
        total
    }

    fn sphere_factor(&self) -> f64 {
        1.0 - pow(self.p, -(self.n as i32))
    }

    /// `∫ f`.
    pub fn total_mass(&self) -> f64 {
        self.ball_mass(self.j_max()) + self.outer_mass(self.j_max())
    }

    /// `∫_{‖x‖ <= p^N} f`.
    pub fn ball_mass(&self, n: i32) -> f64 {
        self.sphere_factor() * self.weighted_shell_sum(None, Some(n))
    }

    /// `∫_{‖x‖ > p^N} f`, summed directly from the tail.
    pub fn outer_mass(&self, n: i32) -> f64 {
        self.sphere_factor() * self.outer_shell_sum(n)
    }

    /// `Σ_{j>N} p^(jn) A_j`, the series in the recurrence criterion.
    pub fn outer_shell_sum(&self, n: i32) -> f64 {
        self.weighted_shell_sum(n.checked_add(1), None)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let tail = match self.tail {
            Tail::Zero => Tail::Zero,
            Tail::Power { c, alpha } => Tail::Power {
                c: c * factor,
                alpha,
            },
        };
        Self::new(
            self.p,
            self.n,
            self.j_min,
            self.values.iter().map(|v| v * factor).collect(),
            tail,
        )
    }

    /// Rescale to total mass 1.
    pub fn normalize(&self) -> Result<Self> {
        let mass = self.total_mass();
        if mass <= 0.0 || !mass.is_finite() {
            return Err(Error::ZeroMass);
        }
        self.scaled(1.0 / mass)
    }

    /// `ã` on the dual sphere `‖ξ‖ = p^-N`.
    pub fn fourier_value(&self, n: i32) -> f64 {
        if n < self.j_min {
            // constant head: both terms equal A_{j_min} p^(Nn)
            return 0.0;
        }
        self.ball_mass(n) - self.shell_value_times_inner_ball(n + 1)
    }

    /// `ã(0) - ã` on the dual sphere `‖ξ‖ = p^-N`, from the complementary tail
    /// sum. For a probability density this is `1 - ã`.
    pub fn fourier_gap(&self, n: i32) -> f64 {
        self.outer_mass(n) + self.shell_value_times_inner_ball(n + 1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TailLiteral {
    Keyword(String),
    Power { c: f64, alpha: f64 },
}

/// On-disk form of a [`RadialProfile`]:
/// `p, n, j_min, j_max, values = [...], tail = "zero" | { c, alpha }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileLiteral {
    p: u32,
    n: u32,
    j_min: i32,
    j_max: i32,
    values: Vec<f64>,
    tail: TailLiteral,
}

impl TryFrom<ProfileLiteral> for RadialProfile {
    type Error = Error;

    fn try_from(lit: ProfileLiteral) -> Result<Self> {
        if lit.j_max as i64 - lit.j_min as i64 + 1 != lit.values.len() as i64 {
            return param(format!(
                "j_min = {} and j_max = {} need {} values, got {}",
                lit.j_min,
                lit.j_max,
                lit.j_max as i64 - lit.j_min as i64 + 1,
                lit.values.len()
            ));
        }
        let tail = match lit.tail {
            TailLiteral::Keyword(k) if k == "zero" => Tail::Zero,
            TailLiteral::Keyword(k) => {
                return param(format!(
                    "unknown tail `{k}`, expected \"zero\" or {{ c, alpha }}"
                ))
            }
            TailLiteral::Power { c, alpha } => Tail::Power { c, alpha },
        };
        RadialProfile::new(lit.p, lit.n, lit.j_min, lit.values, tail)
    }
}

impl From<RadialProfile> for ProfileLiteral {
    fn from(f: RadialProfile) -> Self {
        let j_max = f.j_max();
        Self {
            p: f.p,
            n: f.n,
            j_min: f.j_min,
            j_max,
            values: f.values,
            tail: match f.tail {
                Tail::Zero => TailLiteral::Keyword("zero".into()),
                Tail::Power { c, alpha } => TailLiteral::Power { c, alpha },
            },
        }
    }
}

/// Result of a truncated dual-side sum.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DualSum {
    pub value: f64,
    pub remainder_bound: f64,
}

const MAX_DUAL_TERMS: i32 = 20_000;

/// `Σ_{N >= start} p^(-Nn) d(N)` for `0 <= d(N) <= bound(N0)` whenever
/// `N >= N0`. Terms are added until the remainder bound
/// `bound(N0) p^(-N0 n) / (1 - p^-n)` drops to `tol`.
pub(crate) fn dual_tail_sum(
    p: u32,
    n: u32,
    start: i32,
    d: impl Fn(i32) -> f64,
    bound: impl Fn(i32) -> f64,
    tol: f64,
) -> DualSum {
    let n = n as i32;
    let geo = 1.0 / (1.0 - pow(p, -n));
    let mut value = 0.0;
    let mut k = start;
    loop {
        let remainder = bound(k) * pow(p, -k * n) * geo;
        if remainder <= tol || k - start >= MAX_DUAL_TERMS {
            return DualSum {
                value,
                remainder_bound: remainder,
            };
        }
        value += pow(p, -k * n) * d(k);
        k += 1;
    }
}

/// The Fourier transform of a radial profile on a window of dual shells.
///
/// Values outside the stored window are still available through
/// [`value`](Self::value) and [`gap`](Self::gap), which use the closed forms.
#[derive(Debug, Clone)]
pub struct DualProfile {
    profile: RadialProfile,
    n_min: i32,
    values: Vec<f64>,
    gaps: Vec<f64>,
    limit_at_zero_frequency: f64,
    tail_exponent_estimate: Option<f64>,
}

/// Transform `f` on the dual shells `‖ξ‖ = p^-N`, `n_min <= N <= n_max`.
pub fn fourier_radial(f: &RadialProfile, n_min: i32, n_max: i32) -> Result<DualProfile> {
    if n_min > n_max {
        return param(format!("empty dual window [{n_min}, {n_max}]"));
    }
    let values: Vec<f64> = (n_min..=n_max).map(|k| f.fourier_value(k)).collect();
    let gaps: Vec<f64> = (n_min..=n_max).map(|k| f.fourier_gap(k)).collect();
    let tail_exponent_estimate = fit_decay_exponent(f.p(), n_min, &gaps);
    Ok(DualProfile {
        profile: f.clone(),
        n_min,
        values,
        gaps,
        limit_at_zero_frequency: f.total_mass(),
        tail_exponent_estimate,
    })
}

/// Least-squares decay rate of `gap_N ~ p^(-rate N)` over the last 10 points.
pub(crate) fn fit_decay_exponent(p: u32, n_min: i32, gaps: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .enumerate()
        .rev()
        .take(10)
        .filter(|(_, g)| **g > 0.0)
        .map(|(i, g)| ((n_min + i as i32) as f64 * (p as f64).ln(), g.ln()))
        .collect();
    least_squares_slope(&pts).map(|s| -s)
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl DualProfile {
    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    pub fn p(&self) -> u32 {
        self.profile.p()
    }

    pub fn n(&self) -> u32 {
        self.profile.n()
    }

    pub fn window(&self) -> (i32, i32) {
        (self.n_min, self.n_min + self.values.len() as i32 - 1)
    }

    /// `ã_N` over the window.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `ã(0) - ã_N` over the window.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn limit_at_zero_frequency(&self) -> f64 {
        self.limit_at_zero_frequency
    }

    /// Fitted rate `r` in `1 - ã_N ≈ C p^(-rN)`; diagnostic only.
    pub fn tail_exponent_estimate(&self) -> Option<f64> {
        self.tail_exponent_estimate
    }

    /// `ã` on the dual sphere `‖ξ‖ = p^-N`, for any `N`.
    pub fn value(&self, n: i32) -> f64 {
        let (lo, hi) = self.window();
        if (lo..=hi).contains(&n) {
            self.values[(n - lo) as usize]
        } else {
            self.profile.fourier_value(n)
        }
    }

    /// `ã(0) - ã` on the dual sphere `‖ξ‖ = p^-N`, for any `N`.
    pub fn gap(&self, n: i32) -> f64 {
        let (lo, hi) = self.window();
        if (lo..=hi).contains(&n) {
            self.gaps[(n - lo) as usize]
        } else {
            self.profile.fourier_gap(n)
        }
    }

    /// Upper bound for `gap(N')` over all `N' >= N`.
    pub(crate) fn gap_bound(&self, n: i32) -> f64 {
        self.profile.outer_shell_sum(n)
    }

    /// Invert the transform on the sphere `‖x‖ = p^j`, recovering `A_j`.
    ///
    /// `A_j = (1-p^-n) Σ_{k>=j} p^(-kn) ã_k - p^(-jn) ã_{j-1}`, with the dual
    /// shells below `K0 = max(j, j_min)` summed through `ã` and the rest
    /// through `1 - ã`, so neither part cancels.
    pub fn inverse_shell_value(&self, j: i32, tol: f64) -> f64 {
        let (p, n) = (self.p(), self.n());
        let ni = n as i32;
        let f = 1.0 - pow(p, -ni);
        let k0 = j.max(self.profile.j_min());
        let lead = if k0 == j {
            pow(p, -j * ni) * self.gap(j - 1)
        } else {
            let head: f64 = (j..k0).map(|k| f * pow(p, -k * ni) * self.value(k)).sum();
            pow(p, -k0 * ni) - pow(p, -j * ni) * self.value(j - 1) + head
        };
        // stop relative to the running estimate of A_j
        let mut acc = 0.0;
        let mut k = k0;
        loop {
            let remainder = self.gap_bound(k) * pow(p, -k * ni);
            let estimate = lead - f * acc;
            if remainder <= tol * estimate.abs() || k - k0 >= MAX_DUAL_TERMS {
                return estimate;
            }
            acc += pow(p, -k * ni) * self.gap(k);
            k += 1;
        }
    }
}

/// `1 - ã_N` for a probability density, from the complementary tail sum.
pub fn one_minus_fourier(f: &RadialProfile, n: i32) -> f64 {
    f.fourier_gap(n)
}

//! Monte Carlo for the random walk `S_m = ξ_1 + ... + ξ_m` with steps drawn
//! from a radial jump density.
//!
//! Shells are drawn exactly: the infinite head (`j < j_min`) and power tail
//! (`j > j_max`) are chosen by their closed-form masses and the shell inside
//! them is geometric. Points are then uniform on the sphere. Each trial uses
//! its own ChaCha8 stream `(seed, trial)`, and statistics are integer counts
//! merged by addition, so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Result};
use crate::padic::{Norm, PadicApprox, PadicPoint, Precision};
use crate::radial::{sphere_volume, RadialProfile, Tail};

/// Extra digits kept below the target ball by default.
pub const DEFAULT_GUARD_DIGITS: i32 = 8;

/// Shell law `P(j) = (1 - p^-n) p^(jn) A_j` of a normalized radial density.
#[derive(Debug, Clone)]
pub struct ShellSampler {
    profile: RadialProfile,
    head_mass: f64,
    window_cdf: Vec<f64>,
    tail_mass: f64,
    tail_ratio_ln: f64,
}

impl ShellSampler {
    pub fn new(a: &RadialProfile) -> Result<Self> {
        let mass = a.total_mass();
        if (mass - 1.0).abs() > 1e-12 {
            return param(format!("step law has mass {mass}, expected 1"));
        }
        let head_mass = a.ball_mass(a.j_min() - 1);
        let mut acc = head_mass;
        let window_cdf = (a.j_min()..=a.j_max())
            .map(|j| {
                acc += sphere_volume(a.p(), a.n(), j) * a.shell_value(j);
                acc
            })
            .collect();
        let tail_mass = a.outer_mass(a.j_max());
        let tail_ratio_ln = match a.tail() {
            Tail::Power { alpha, .. } => -alpha * (a.p() as f64).ln(),
            Tail::Zero => f64::NEG_INFINITY,
        };
        Ok(Self {
            profile: a.clone(),
            head_mass,
            window_cdf,
            tail_mass,
            tail_ratio_ln,
        })
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    /// `P(‖ξ‖ = p^j)`.
    pub fn shell_probability(&self, j: i32) -> f64 {
        sphere_volume(self.profile.p(), self.profile.n(), j) * self.profile.shell_value(j)
    }

    /// Head, window and tail masses; they sum to 1.
    pub fn masses(&self) -> (f64, f64, f64) {
        let window = self.window_cdf.last().copied().unwrap_or(self.head_mass) - self.head_mass;
        (self.head_mass, window, self.tail_mass)
    }

    /// `P(‖ξ‖ > p^k)`.
    pub fn mass_above(&self, k: i32) -> f64 {
        self.profile.outer_mass(k)
    }

    pub fn sample_shell<R: Rng + ?Sized>(&self, rng: &mut R) -> i32 {
        let a = &self.profile;
        let total = self.head_mass + self.window_total() + self.tail_mass;
        let u = rng.random::<f64>() * total;
        if u < self.head_mass {
            let ln_ratio = -(a.n() as f64) * (a.p() as f64).ln();
            return a.j_min() - 1 - geometric(rng, ln_ratio);
        }
        if u < self.head_mass + self.window_total() || self.tail_mass == 0.0 {
            let idx = self.window_cdf.partition_point(|&c| c <= u);
            return a.j_min() + idx.min(self.window_cdf.len() - 1) as i32;
        }
        a.j_max() + 1 + geometric(rng, self.tail_ratio_ln)
    }

    fn window_total(&self) -> f64 {
        self.masses().1
    }
}

/// `G` with `P(G = g) = (1 - r) r^g`, given `ln r`.
fn geometric<R: Rng + ?Sized>(rng: &mut R, ln_ratio: f64) -> i32 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let g = (u.ln() / ln_ratio).floor();
    if g.is_finite() && g < i32::MAX as f64 / 2.0 {
        g as i32
    } else {
        i32::MAX / 2
    }
}

/// A uniform point on the sphere `‖x‖ = p^j`, or `None` above `k_high`.
///
/// Shells at or below `p^-k_low` are below resolution and give zero.
pub fn sample_on_sphere<R: Rng + ?Sized>(
    prec: Precision,
    n: u32,
    j: i32,
    rng: &mut R,
) -> Option<PadicPoint> {
    if j > prec.k_high() {
        return None;
    }
    let digits = prec.k_low() + j;
    if digits <= 0 {
        return Some(PadicPoint::zero(prec, n as usize));
    }
    let p = prec.p() as u128;
    let bound = p.pow(digits as u32);
    let shift = p.pow((prec.k_high() - j) as u32);
    let mut units = vec![0u128; n as usize];
    loop {
        for u in units.iter_mut() {
            *u = rng.random_range(0..bound);
        }
        if units.iter().any(|u| u % p != 0) {
            break;
        }
    }
    let coords = units
        .into_iter()
        .map(|u| PadicApprox::new(prec, u * shift).expect("residue below the modulus"))
        .collect();
    Some(PadicPoint::new(coords).expect("shared precision"))
}

/// One step `ξ ~ a(x) dx` together with its exact shell.
///
/// Shells above `k_high` are redrawn; the number of redraws is returned.
pub fn sample_step<R: Rng + ?Sized>(
    sampler: &ShellSampler,
    prec: Precision,
    rng: &mut R,
) -> (PadicPoint, i32, u64) {
    let mut rejected = 0;
    loop {
        let j = sampler.sample_shell(rng);
        if let Some(x) = sample_on_sphere(prec, sampler.profile.n(), j, rng) {
            return (x, j, rejected);
        }
        rejected += 1;
    }
}

#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub profile: RadialProfile,
    pub steps: u64,
    pub trials: u64,
    /// Target ball `B_N`.
    pub ball: i32,
    pub seed: u64,
    /// `(k_low, k_high)`; defaults to `k_low = max(-N, 0) + 8` and the
    /// largest representable `k_high`.
    pub precision: Option<(i32, i32)>,
}

impl WalkConfig {
    pub fn new(profile: RadialProfile, steps: u64, trials: u64, ball: i32, seed: u64) -> Self {
        Self {
            profile,
            steps,
            trials,
            ball,
            seed,
            precision: None,
        }
    }

    pub fn resolved_precision(&self) -> Result<Precision> {
        let p = self.profile.p();
        let (k_low, k_high) = self.precision.unwrap_or_else(|| {
            let k_low = (-self.ball).max(0) + DEFAULT_GUARD_DIGITS;
            (k_low, Precision::max_digits(p) as i32 - k_low)
        });
        if self.ball < -k_low {
            return param(format!(
                "target ball B_{} is finer than the resolution p^-{k_low}",
                self.ball
            ));
        }
        Precision::new(p, k_low, k_high)
    }

    fn validate(&self) -> Result<(ShellSampler, Precision)> {
        if self.steps == 0 {
            return param("steps must be at least 1");
        }
        Ok((
            ShellSampler::new(&self.profile)?,
            self.resolved_precision()?,
        ))
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkStats {
    pub trials: u64,
    pub steps: u64,
    pub ball: i32,
    pub k_low: i32,
    pub k_high: i32,
    /// Trials with `S_m ∈ B_N`, for `m = 1 ..= steps`.
    pub hits: Vec<u64>,
    /// `Σ log_p ‖S_m‖` over trials; unresolved norms count as `-k_low`.
    pub norm_exponent_sums: Vec<i64>,
    /// `Σ` and `Σ²` of per-trial visit counts to `B_N`.
    pub visit_sum: u64,
    pub visit_sq_sum: u64,
    pub steps_drawn: u64,
    /// Shell draws above `k_high`, redrawn.
    pub rejected_shells: u64,
    /// `P(‖ξ‖ > p^k_high)`, the bias bound from redrawing.
    pub fold_back_probability: f64,
    pub ultrametric_checks: u64,
    /// Steps where `‖S_m‖` broke `‖S_m‖ <= max ‖ξ_i‖`, or differed from a
    /// unique maximum.
    pub ultrametric_violations: u64,
}

impl WalkStats {
    fn empty(steps: u64, ball: i32, prec: Precision) -> Self {
        Self {
            trials: 0,
            steps,
            ball,
            k_low: prec.k_low(),
            k_high: prec.k_high(),
            hits: vec![0; steps as usize],
            norm_exponent_sums: vec![0; steps as usize],
            visit_sum: 0,
            visit_sq_sum: 0,
            steps_drawn: 0,
            rejected_shells: 0,
            fold_back_probability: 0.0,
            ultrametric_checks: 0,
            ultrametric_violations: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.trials += other.trials;
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        for (a, b) in self
            .norm_exponent_sums
            .iter_mut()
            .zip(&other.norm_exponent_sums)
        {
            *a += b;
        }
        self.visit_sum += other.visit_sum;
        self.visit_sq_sum += other.visit_sq_sum;
        self.steps_drawn += other.steps_drawn;
        self.rejected_shells += other.rejected_shells;
        self.ultrametric_checks += other.ultrametric_checks;
        self.ultrametric_violations += other.ultrametric_violations;
        self
    }

    /// `P(S_m ∈ B_N)`, `m >= 1`.
    pub fn hit_probability(&self, m: u64) -> Estimate {
        let t = self.trials as f64;
        let q = self.hits[(m - 1) as usize] as f64 / t;
        Estimate {
            mean: q,
            standard_error: (q * (1.0 - q) / t).sqrt(),
        }
    }

    /// `Σ_{m<=steps} P(S_m ∈ B_N)` as the mean visit count.
    pub fn visit_estimate(&self) -> Estimate {
        let t = self.trials as f64;
        let mean = self.visit_sum as f64 / t;
        let var = (self.visit_sq_sum as f64 / t - mean * mean).max(0.0);
        let unbiased = if self.trials > 1 {
            var * t / (t - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            standard_error: (unbiased / t).sqrt(),
        }
    }

    /// Mean of `log_p ‖S_m‖`.
    pub fn mean_norm_exponent(&self, m: u64) -> f64 {
        self.norm_exponent_sums[(m - 1) as usize] as f64 / self.trials as f64
    }
}

/// Path of one trial: step shells and the norms of the partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub step_shells: Vec<i32>,
    pub norms: Vec<Norm>,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn run_trial(
    config: &WalkConfig,
    sampler: &ShellSampler,
    prec: Precision,
    trial: u64,
    stats: &mut WalkStats,
    mut path: Option<&mut Trajectory>,
) {
    let mut rng = trial_rng(config.seed, trial);
    let n = config.profile.n() as usize;
    let mut s = PadicPoint::zero(prec, n);
    let mut top = i32::MIN;
    let mut top_count = 0u32;
    let mut visits = 0u64;
    for m in 0..config.steps as usize {
        let (xi, j, rejected) = sample_step(sampler, prec, &mut rng);
        stats.rejected_shells += rejected;
        stats.steps_drawn += 1;
        s.add_assign_unchecked(&xi);
        match j.cmp(&top) {
            std::cmp::Ordering::Greater => {
                top = j;
                top_count = 1;
            }
            std::cmp::Ordering::Equal => top_count += 1,
            std::cmp::Ordering::Less => {}
        }
        let norm = s.norm();
        stats.ultrametric_checks += 1;
        let ok = match norm {
            Norm::Exact(e) => e <= top && (top_count > 1 || e == top),
            Norm::BelowResolution(_) => top_count > 1 || top <= -prec.k_low(),
        };
        stats.ultrametric_violations += u64::from(!ok);
        stats.norm_exponent_sums[m] += norm.exponent() as i64;
        if s.in_ball(config.ball) {
            stats.hits[m] += 1;
            visits += 1;
        }
        if let Some(path) = path.as_deref_mut() {
            path.step_shells.push(j);
            path.norms.push(norm);
        }
    }
    stats.trials += 1;
    stats.visit_sum += visits;
    stats.visit_sq_sum += visits * visits;
}

/// Run all trials; identical config and seed give identical statistics.
pub fn simulate_walk(config: &WalkConfig) -> Result<WalkStats> {
    let (sampler, prec) = config.validate()?;
    let empty = || WalkStats::empty(config.steps, config.ball, prec);
    let mut stats = (0..config.trials)
        .into_par_iter()
        .fold(empty, |mut acc, trial| {
            run_trial(config, &sampler, prec, trial, &mut acc, None);
            acc
        })
        .reduce(empty, WalkStats::merge);
    stats.fold_back_probability = sampler.mass_above(prec.k_high());
    Ok(stats)
}

/// The path of a single trial, as drawn inside [`simulate_walk`].
pub fn trajectory(config: &WalkConfig, trial: u64) -> Result<Trajectory> {
    let (sampler, prec) = config.validate()?;
    let mut stats = WalkStats::empty(config.steps, config.ball, prec);
    let mut path = Trajectory {
        step_shells: Vec::with_capacity(config.steps as usize),
        norms: Vec::with_capacity(config.steps as usize),
    };
    run_trial(config, &sampler, prec, trial, &mut stats, Some(&mut path));
    Ok(path)
}

/// Monte Carlo estimate of `Σ_{m<=steps} P(S_m ∈ B_N)`.
pub fn recurrence_estimate(config: &WalkConfig) -> Result<Estimate> {
    if config.trials == 0 {
        return param("trials must be at least 1");
    }
    Ok(simulate_walk(config)?.visit_estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::fourier_radial;
    use crate::recurrence::return_probability_exact;

    fn standard() -> RadialProfile {
        RadialProfile::power_law(2, 1, 2.0 / 3.0, 1.0).unwrap()
    }

    #[test]
    fn shell_law_sums_to_one() {
        for a in [
            standard(),
            RadialProfile::normalized_power_law(3, 2, 0.4).unwrap(),
            RadialProfile::unit_ball_indicator(5, 1).unwrap(),
        ] {
            let s = ShellSampler::new(&a).unwrap();
            let (h, w, t) = s.masses();
            assert!((h + w + t - 1.0).abs() < 1e-12);
        }
        let s = ShellSampler::new(&standard()).unwrap();
        assert!((s.shell_probability(0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shell_frequencies_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for a in [
            standard(),
            RadialProfile::normalized_power_law(3, 1, 0.5).unwrap(),
        ] {
            let sampler = ShellSampler::new(&a).unwrap();
            // bins: j < lo, lo..=hi, j > hi, with every expected count >= 5
            let draws = 100_000;
            let (lo, hi) = (-6, 10);
            let mut counts = vec![0u64; (hi - lo + 3) as usize];
            let mut rng = trial_rng(77, 3);
            for _ in 0..draws {
                let j = sampler.sample_shell(&mut rng);
                let bin = if j < lo {
                    0
                } else if j > hi {
                    counts.len() - 1
                } else {
                    (j - lo + 1) as usize
                };
                counts[bin] += 1;
            }
            let mut expected: Vec<f64> = (lo..=hi).map(|j| sampler.shell_probability(j)).collect();
            expected.insert(0, a.ball_mass(lo - 1));
            expected.push(a.outer_mass(hi));
            let stat: f64 = counts
                .iter()
                .zip(&expected)
                .map(|(&o, &e)| {
                    let e = e * draws as f64;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            let crit = ChiSquared::new((counts.len() - 1) as f64)
                .unwrap()
                .inverse_cdf(1.0 - 1e-3);
            assert!(stat < crit, "chi-square {stat} >= {crit}");
        }
    }

    #[test]
    fn unnormalized_profile_is_rejected() {
        let a = RadialProfile::power_law(2, 1, 1.0, 1.0).unwrap();
        assert!(ShellSampler::new(&a).is_err());
    }

    #[test]
    fn sampled_points_lie_on_their_shell() {
        let prec = Precision::new(3, 6, 20).unwrap();
        let mut rng = trial_rng(7, 0);
        for j in -5..=20 {
            for _ in 0..50 {
                let x = sample_on_sphere(prec, 2, j, &mut rng).unwrap();
                assert_eq!(x.norm(), Norm::Exact(j));
            }
        }
        assert!(sample_on_sphere(prec, 2, 21, &mut rng).is_none());
        assert!(
            sample_on_sphere(prec, 2, -6, &mut rng)
                .unwrap()
                .norm()
                .exponent()
                == -6
        );
    }

    #[test]
    fn indicator_walk_stays_in_the_unit_ball() {
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        let stats = simulate_walk(&WalkConfig::new(a, 20, 500, 0, 1)).unwrap();
        assert!(stats.hits.iter().all(|&h| h == 500));
        assert_eq!(stats.ultrametric_violations, 0);
    }

    #[test]
    fn seed_determinism() {
        let cfg = WalkConfig::new(standard(), 30, 2_000, 0, 42);
        let a = simulate_walk(&cfg).unwrap();
        let b = simulate_walk(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_walk(&WalkConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.hits, c.hits);
    }

    #[test]
    fn trajectory_matches_simulation() {
        let cfg = WalkConfig::new(standard(), 25, 3, 0, 9);
        let stats = simulate_walk(&cfg).unwrap();
        let mut hits = vec![0u64; 25];
        for t in 0..3 {
            let path = trajectory(&cfg, t).unwrap();
            for (m, norm) in path.norms.iter().enumerate() {
                hits[m] += u64::from(norm.exponent() <= 0);
            }
        }
        assert_eq!(hits, stats.hits);
    }

    #[test]
    fn ultrametric_law_on_paths() {
        let cfg = WalkConfig::new(
            RadialProfile::normalized_power_law(3, 1, 0.7).unwrap(),
            200,
            200,
            0,
            5,
        );
        let stats = simulate_walk(&cfg).unwrap();
        assert_eq!(stats.ultrametric_checks, 40_000);
        assert_eq!(stats.ultrametric_violations, 0);
    }

    #[test]
    fn one_step_frequency_matches_ball_mass() {
        let stats = simulate_walk(&WalkConfig::new(standard(), 1, 100_000, 0, 11)).unwrap();
        let e = stats.hit_probability(1);
        assert!((e.mean - 2.0 / 3.0).abs() < 3.0 * e.standard_error);
    }

    #[test]
    fn monte_carlo_matches_exact_returns() {
        for alpha in [1.0, 0.5] {
            let a = RadialProfile::normalized_power_law(2, 1, alpha).unwrap();
            let dual = fourier_radial(&a, 0, 8).unwrap();
            let stats = simulate_walk(&WalkConfig::new(a, 10, 100_000, 0, 2024)).unwrap();
            for m in [1, 2, 5, 10] {
                let exact = return_probability_exact(&dual, m, 0).unwrap();
                let e = stats.hit_probability(m);
                assert!(
                    (e.mean - exact).abs() <= 3.0 * e.standard_error,
                    "alpha {alpha} m {m}: {} vs {exact}",
                    e.mean
                );
            }
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(recurrence_estimate(&WalkConfig::new(standard(), 5, 0, 0, 1)).is_err());
    }

    #[test]
    fn too_fine_target_ball_is_rejected() {
        let cfg = WalkConfig {
            precision: Some((2, 10)),
            ..WalkConfig::new(standard(), 5, 10, -3, 1)
        };
        assert!(simulate_walk(&cfg).is_err());
    }
}

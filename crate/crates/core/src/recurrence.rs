//! Analytic recurrence tests for the random walk with step law `a(x) dx`.
//!
//! The walk is recurrent iff `∫_{‖ξ‖<=1} dξ / (1 - ã(ξ))` diverges. A
//! sufficient condition is that `1 / (p^(Nn) Σ_{j>N} p^(jn) A_j)` stays bounded
//! below, which for a power tail `A_j ~ c p^(-j(n+α))` happens iff `α >= n`.
//! Return probabilities come from `P(S_m ∈ B_N) = p^(Nn) ∫_{‖ξ‖<=p^-N} ã^m`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::radial::{least_squares_slope, pow, DualProfile, RadialProfile};

/// Increment ratios at or above this count as non-summable.
pub const RATIO_MARGIN: f64 = 1e-6;

/// Points used by the least-squares fits.
const FIT_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// `α >= n`: the criterion series diverges in closed form.
    RecurrentBySeries,
    /// `α < n` and the integral increments decay geometrically.
    TransientIndicated,
    Inconclusive,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::RecurrentBySeries => "Recurrent-by-series-criterion",
            Classification::TransientIndicated => "TransientIndicated",
            Classification::Inconclusive => "Inconclusive",
        })
    }
}

/// Evidence behind a [`Classification`].
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub alpha: f64,
    /// `α - n`, the exact growth exponent of the criterion terms.
    pub closed_form_exponent: f64,
    /// Fitted decay rate of `1 - ã_N`; diagnostic only.
    pub fitted_gap_exponent: Option<f64>,
    /// Fitted geometric ratio of the integral increments.
    pub increment_ratio: Option<f64>,
    pub min_term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    pub l: i32,
    pub n_max: i32,
    /// `term_N` for `N = l ..= n_max`.
    pub criterion_terms: Vec<f64>,
    /// Fitted `log_p` growth rate of `term_N`.
    pub tail_exponent: Option<f64>,
    /// Cumulative dual-shell sums of `∫ dξ/(1-ã)` for `N = l ..= n_max`.
    pub integral_partial_sums: Vec<f64>,
    pub classification: Classification,
    pub certificate: Certificate,
    /// `Σ_{m<=k} P(S_m ∈ B_ball)` for `k = 1 ..= m_max`, when requested.
    pub green_series: Option<GreenSeries>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenSeries {
    pub ball: i32,
    pub partial_sums: Vec<f64>,
}

fn power_tail(a: &RadialProfile) -> Result<f64> {
    if a.is_degenerate() {
        return Err(Error::Degenerate(
            "compactly supported jump density; the criterion series is undefined".into(),
        ));
    }
    Ok(a.alpha()
        .expect("non-degenerate profiles have a power tail"))
}

/// `term_N = 1 / (p^(Nn) Σ_{j>N} p^(jn) A_j)` for `N = l ..= n_max`.
pub fn criterion_terms(a: &RadialProfile, l: i32, n_max: i32) -> Result<Vec<f64>> {
    power_tail(a)?;
    if n_max < l {
        return param(format!("empty window [{l}, {n_max}]"));
    }
    let n = a.n() as i32;
    Ok((l..=n_max)
        .map(|k| 1.0 / (pow(a.p(), k * n) * a.outer_shell_sum(k)))
        .collect())
}

/// Increments `(1 - p^-n) p^(-Nn) / (1 - ã_N)` for `N = l ..= l + depth`.
pub fn integral_increments(a_hat: &DualProfile, l: i32, depth: u32) -> Result<Vec<f64>> {
    let (p, n) = (a_hat.p(), a_hat.n() as i32);
    let f = 1.0 - pow(p, -n);
    (l..=l + depth as i32)
        .map(|k| {
            let gap = a_hat.gap(k);
            if gap <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "ã = 1 on the dual sphere of radius p^{}",
                    -k
                )));
            }
            Ok(f * pow(p, -k * n) / gap)
        })
        .collect()
}

/// Cumulative sums of [`integral_increments`].
pub fn integral_partial_sums(a_hat: &DualProfile, l: i32, depth: u32) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    Ok(integral_increments(a_hat, l, depth)?
        .into_iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect())
}

/// Fitted ratio `r` in `x_N ≈ C r^N` over the last points of a positive
/// sequence.
fn fitted_ratio(xs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .rev()
        .take(FIT_POINTS)
        .filter(|(_, x)| **x > 0.0)
        .map(|(i, x)| (i as f64, x.ln()))
        .collect();
    least_squares_slope(&pts).map(f64::exp)
}

pub fn classify(a: &RadialProfile, l: i32, n_max: i32) -> Result<(Classification, Certificate)> {
    let alpha = power_tail(a)?;
    let terms = criterion_terms(a, l, n_max)?;
    let dual = crate::radial::fourier_radial(a, l, n_max)?;
    let increments = integral_increments(&dual, l, (n_max - l) as u32)?;
    let increment_ratio = fitted_ratio(&increments);
    let closed_form_exponent = alpha - a.n() as f64;
    let classification = if closed_form_exponent >= 0.0 {
        Classification::RecurrentBySeries
    } else if increment_ratio.is_some_and(|r| r < 1.0 - RATIO_MARGIN) {
        Classification::TransientIndicated
    } else {
        Classification::Inconclusive
    };
    Ok((
        classification,
        Certificate {
            alpha,
            closed_form_exponent,
            fitted_gap_exponent: dual.tail_exponent_estimate(),
            increment_ratio,
            min_term: terms.iter().copied().fold(f64::INFINITY, f64::min),
        },
    ))
}

/// `P(S_m ∈ B_N | S_0 = 0)` for several `m` sharing one table of `ã`.
#[derive(Debug, Clone)]
pub struct ReturnProbabilities {
    p: u32,
    n: u32,
    /// `1 - ã_k` and `Σ_{j>k} p^(jn) A_j` for `k = ball, ball+1, ...`
    gaps: Vec<f64>,
    tails: Vec<f64>,
}

const MAX_DUAL_SHELLS: usize = 20_000;
const RETURN_TOL: f64 = 1e-15;

impl ReturnProbabilities {
    /// Tabulate enough dual shells for every `m <= m_max`.
    pub fn new(a_hat: &DualProfile, ball: i32, m_max: u64) -> Result<Self> {
        let mass = a_hat.limit_at_zero_frequency();
        if (mass - 1.0).abs() > 1e-10 {
            return param(format!("jump density has mass {mass}, expected 1"));
        }
        let mut gaps = Vec::new();
        let mut tails = Vec::new();
        for k in ball.. {
            let t = a_hat.gap_bound(k);
            gaps.push(a_hat.gap(k));
            tails.push(t);
            if m_max as f64 * t <= RETURN_TOL * 1e-3 || gaps.len() >= MAX_DUAL_SHELLS {
                break;
            }
        }
        Ok(Self {
            p: a_hat.p(),
            n: a_hat.n(),
            gaps,
            tails,
        })
    }

    /// `P(S_m ∈ B_N)` and a bound on its truncation error.
    ///
    /// `p^(Nn)(1-p^-n) Σ_{k>=N} p^(-kn) ã_k^m` is summed directly until
    /// `1 - ã_k^m <= m Σ_{j>k} p^(jn) A_j` is negligible; the rest of the
    /// series is `Σ p^(-kn)` in closed form.
    pub fn probability(&self, m: u64) -> (f64, f64) {
        let n = self.n as i32;
        let f = 1.0 - pow(self.p, -n);
        let mut acc = 0.0;
        for (i, (&g, &t)) in self.gaps.iter().zip(&self.tails).enumerate() {
            // weights relative to p^(-Nn)
            let weight = pow(self.p, -(i as i32) * n);
            let closed = weight / f;
            let remainder = closed * (m as f64 * t).min(2.0);
            if remainder <= RETURN_TOL * (acc + closed) || i + 1 == self.gaps.len() {
                let total = f * (acc + closed);
                return (total.clamp(0.0, 1.0), f * remainder);
            }
            acc += weight * power_from_gap(g, m);
        }
        unreachable!("the table is never empty")
    }
}

/// `(1 - g)^m` for `g ∈ [0, 2]`, accurate for small `g`.
fn power_from_gap(g: f64, m: u64) -> f64 {
    if g < 1.0 {
        (m as f64 * (-g).ln_1p()).exp()
    } else if g == 1.0 {
        0.0
    } else {
        let mag = (m as f64 * (g - 1.0).ln()).exp();
        if m.is_multiple_of(2) {
            mag
        } else {
            -mag
        }
    }
}

/// `P(S_m ∈ B_N | S_0 = 0)`.
pub fn return_probability_exact(a_hat: &DualProfile, m: u64, ball: i32) -> Result<f64> {
    if m == 0 {
        return param("step count must be at least 1");
    }
    Ok(ReturnProbabilities::new(a_hat, ball, m)?.probability(m).0)
}

/// `S(k) = Σ_{m=1}^k P(S_m ∈ B_N)` for `k = 1 ..= m_max`.
pub fn green_series(a_hat: &DualProfile, ball: i32, m_max: u64) -> Result<Vec<f64>> {
    if m_max == 0 {
        return param("m_max must be at least 1");
    }
    let table = ReturnProbabilities::new(a_hat, ball, m_max)?;
    let probs: Vec<f64> = (1..=m_max)
        .into_par_iter()
        .map(|m| table.probability(m).0)
        .collect();
    let mut acc = 0.0;
    Ok(probs
        .into_iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect())
}

/// Criterion terms, integral sums and classification over `[l, n_max]`, with
/// the return series for `B_ball` up to `m_max` steps if requested.
pub fn recurrence_report(
    a: &RadialProfile,
    l: i32,
    n_max: i32,
    green: Option<(i32, u64)>,
) -> Result<RecurrenceReport> {
    let criterion_terms = criterion_terms(a, l, n_max)?;
    let (classification, certificate) = classify(a, l, n_max)?;
    let dual = crate::radial::fourier_radial(a, l, n_max)?;
    let integral_partial_sums = integral_partial_sums(&dual, l, (n_max - l) as u32)?;
    let tail_exponent = fitted_ratio(&criterion_terms).map(|r| r.ln() / (a.p() as f64).ln());
    let green_series = green
        .map(|(ball, m_max)| {
            green_series(&dual, ball, m_max).map(|partial_sums| GreenSeries { ball, partial_sums })
        })
        .transpose()?;
    Ok(RecurrenceReport {
        l,
        n_max,
        criterion_terms,
        tail_exponent,
        integral_partial_sums,
        classification,
        certificate,
        green_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::fourier_radial;

    fn standard() -> RadialProfile {
        RadialProfile::power_law(2, 1, 2.0 / 3.0, 1.0).unwrap()
    }

    #[test]
    fn standard_terms_are_three_halves() {
        for t in criterion_terms(&standard(), 0, 20).unwrap() {
            assert!((t - 1.5).abs() < 1e-10);
        }
    }

    #[test]
    fn term_growth_follows_alpha() {
        let a2 = RadialProfile::normalized_power_law(2, 1, 2.0).unwrap();
        let t = criterion_terms(&a2, 0, 30).unwrap();
        assert!((t[30] / t[29] - 2.0).abs() < 1e-6);
        let a05 = RadialProfile::normalized_power_law(2, 1, 0.5).unwrap();
        let t = criterion_terms(&a05, 0, 30).unwrap();
        assert!((t[30] / t[29] - 2f64.powf(-0.5)).abs() < 1e-6);
    }

    #[test]
    fn classification_by_alpha() {
        for (alpha, expect) in [
            (1.0, Classification::RecurrentBySeries),
            (3.0, Classification::RecurrentBySeries),
            (0.5, Classification::TransientIndicated),
        ] {
            let a = RadialProfile::normalized_power_law(2, 1, alpha).unwrap();
            let (c, cert) = classify(&a, 0, 40).unwrap();
            assert_eq!(c, expect, "alpha {alpha}");
            assert!(cert.min_term > 0.0);
        }
        let a = RadialProfile::normalized_power_law(2, 1, 0.5).unwrap();
        let ratio = classify(&a, 0, 40).unwrap().1.increment_ratio.unwrap();
        assert!((ratio - 2f64.powf(-0.5)).abs() < 1e-6);
    }

    #[test]
    fn recurrent_increments_do_not_decay() {
        for alpha in [1.0, 1.5, 3.0] {
            let a = RadialProfile::normalized_power_law(2, 1, alpha).unwrap();
            let dual = fourier_radial(&a, 0, 40).unwrap();
            let inc = integral_increments(&dual, 0, 40).unwrap();
            assert!(fitted_ratio(&inc).unwrap() >= 1.0 - RATIO_MARGIN);
        }
    }

    #[test]
    fn degenerate_profile_errors() {
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        assert!(criterion_terms(&a, 0, 5).is_err());
        let dual = fourier_radial(&a, 0, 5).unwrap();
        assert!(integral_partial_sums(&dual, 0, 5).is_err());
    }

    #[test]
    fn one_step_return_is_ball_mass() {
        let a = standard();
        let dual = fourier_radial(&a, -5, 10).unwrap();
        assert!((return_probability_exact(&dual, 1, 0).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        for ball in -4..=8 {
            let p = return_probability_exact(&dual, 1, ball).unwrap();
            assert!((p - a.ball_mass(ball)).abs() < 1e-10, "ball {ball}");
        }
    }

    #[test]
    fn indicator_walk_stays_home() {
        let a = RadialProfile::unit_ball_indicator(2, 1).unwrap();
        let dual = fourier_radial(&a, -2, 4).unwrap();
        assert_eq!(return_probability_exact(&dual, 2, 0).unwrap(), 1.0);
    }

    #[test]
    fn large_balls_capture_everything() {
        let dual = fourier_radial(&standard(), 0, 4).unwrap();
        assert!(return_probability_exact(&dual, 3, 60).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn green_series_properties() {
        let dual = fourier_radial(&standard(), 0, 4).unwrap();
        let s = green_series(&dual, 0, 50).unwrap();
        assert_eq!(s[0], return_probability_exact(&dual, 1, 0).unwrap());
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn transient_series_matches_oracle() {
        // 40-digit evaluation of the shell-character sums for α = 1/2
        let a = RadialProfile::normalized_power_law(2, 1, 0.5).unwrap();
        let dual = fourier_radial(&a, 0, 4).unwrap();
        let s = green_series(&dual, 0, 100_000).unwrap();
        for (m, want) in [
            (1, 0.453_081_839_321_972_8),
            (1_000, 1.411_333_931_552_974),
            (10_000, 1.413_925_081_061_177),
        ] {
            assert!((s[m - 1] - want).abs() < 1e-12, "S({m}) = {}", s[m - 1]);
        }
        // P(S_m ∈ B_0) ~ C m^-2, so each decade adds a tenth of the previous one
        let d1 = s[9_999] - s[999];
        let d2 = s[99_999] - s[9_999];
        assert!((d2 / d1 - 0.1).abs() < 0.01, "{}", d2 / d1);
    }

    #[test]
    fn recurrent_series_keeps_growing() {
        let dual = fourier_radial(&standard(), 0, 4).unwrap();
        let s = green_series(&dual, 0, 10_000).unwrap();
        assert!(s[9_999] - s[999] > 0.1 * s[999]);
    }
}

//! Truncated p-adic arithmetic on `Q_p^n`, the additive character, and the
//! finite coset grid that every discretization in this crate lives on.
//!
//! A [`PadicApprox`] stores the digits of `x` between `p^(-k_high)` and
//! `p^(k_low - 1)` as an integer residue, so `x = p^(-k_high) * residue` modulo
//! the ball `B_{-k_low}`. Carries in addition run towards higher exponents,
//! which means that dropping digits at or above the precision floor never
//! disturbs the digits that are kept.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Largest prime accepted anywhere in the crate.
pub const MAX_PRIME: u32 = 97;

/// Residues are kept below this bound so that sums of two residues fit in
/// `u128` and every residue also fits in `i128`.
const RESIDUE_LIMIT: u128 = 1 << 126;

pub fn is_prime(p: u32) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub(crate) fn check_prime(p: u32) -> Result<()> {
    if !is_prime(p) || p > MAX_PRIME {
        return param(format!(
            "p = {p} must be a prime no larger than {MAX_PRIME}"
        ));
    }
    Ok(())
}

fn pow_u128(p: u32, e: u32) -> Option<u128> {
    (p as u128).checked_pow(e)
}

/// p-adic valuation of a nonzero integer.
fn valuation(mut r: u128, p: u32) -> u32 {
    debug_assert!(r != 0);
    let p = p as u128;
    let mut v = 0;
    while r.is_multiple_of(p) {
        r /= p;
        v += 1;
    }
    v
}

/// The norm of a truncated p-adic quantity.
///
/// `Exact(e)` is the value `p^e`. `BelowResolution(f)` means the digits that
/// are kept are all zero, so only `norm <= p^f` is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    Exact(i32),
    BelowResolution(i32),
}

impl Norm {
    pub fn exponent(self) -> i32 {
        match self {
            Norm::Exact(e) | Norm::BelowResolution(e) => e,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Norm::Exact(_))
    }

    /// Numeric value; below-resolution norms map to 0.
    pub fn value(self, p: u32) -> f64 {
        match self {
            Norm::Exact(e) => (p as f64).powi(e),
            Norm::BelowResolution(_) => 0.0,
        }
    }

    fn key(self) -> (i32, bool) {
        (self.exponent(), self.is_exact())
    }
}

impl PartialOrd for Norm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Norm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Digit window shared by a family of [`PadicApprox`] values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Precision {
    p: u32,
    k_low: i32,
    k_high: i32,
    modulus: u128,
}

impl Precision {
    pub fn new(p: u32, k_low: i32, k_high: i32) -> Result<Self> {
        check_prime(p)?;
        let digits = k_low as i64 + k_high as i64;
        if digits < 1 {
            return param(format!("k_low + k_high = {digits} must be at least 1"));
        }
        let modulus = u32::try_from(digits)
            .ok()
            .and_then(|d| pow_u128(p, d))
            .filter(|&m| m <= RESIDUE_LIMIT)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "{digits} digits in base {p} exceed the supported {} digits",
                    Self::max_digits(p)
                ))
            })?;
        Ok(Self {
            p,
            k_low,
            k_high,
            modulus,
        })
    }

    /// Largest digit count representable for the prime `p`.
    pub fn max_digits(p: u32) -> u32 {
        let mut d = 0;
        let mut m: u128 = 1;
        while let Some(next) = m.checked_mul(p as u128) {
            if next > RESIDUE_LIMIT {
                break;
            }
            m = next;
            d += 1;
        }
        d
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn k_low(&self) -> i32 {
        self.k_low
    }

    pub fn k_high(&self) -> i32 {
        self.k_high
    }

    pub fn digits(&self) -> u32 {
        (self.k_low + self.k_high) as u32
    }

    pub fn modulus(&self) -> u128 {
        self.modulus
    }

    fn pow(&self, e: u32) -> u128 {
        // e <= digits, so this never overflows
        (self.p as u128).pow(e)
    }
}

/// A truncated p-adic number: the coset `p^(-k_high) * residue + B_{-k_low}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadicApprox {
    prec: Precision,
    residue: u128,
}

impl PadicApprox {
    pub fn new(prec: Precision, residue: u128) -> Result<Self> {
        if residue >= prec.modulus {
            return param(format!(
                "residue {residue} out of range for modulus {}",
                prec.modulus
            ));
        }
        Ok(Self { prec, residue })
    }

    pub fn zero(prec: Precision) -> Self {
        Self { prec, residue: 0 }
    }

    /// The value `num * p^exp`, truncated to the precision window.
    ///
    /// Fails with a domain error when the value is larger than `p^k_high`.
    pub fn from_scaled(prec: Precision, num: i128, exp: i32) -> Result<Self> {
        if num == 0 {
            return Ok(Self::zero(prec));
        }
        let digits = prec.digits() as i64;
        let mut shift = exp as i64 + prec.k_high as i64;
        let mut num = num;
        let p = prec.p as i128;
        while shift < 0 {
            if num % p != 0 {
                return Err(Error::Domain(format!(
                    "value exceeds the norm ceiling p^{}",
                    prec.k_high
                )));
            }
            num /= p;
            shift += 1;
        }
        if shift >= digits {
            return Ok(Self::zero(prec));
        }
        let keep = prec.pow((digits - shift) as u32) as i128;
        let low = num.rem_euclid(keep) as u128;
        Ok(Self {
            prec,
            residue: low * prec.pow(shift as u32),
        })
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn residue(&self) -> u128 {
        self.residue
    }

    pub fn is_zero(&self) -> bool {
        self.residue == 0
    }

    /// `|x|_p`, read off the valuation of the residue.
    pub fn norm(&self) -> Norm {
        if self.residue == 0 {
            Norm::BelowResolution(-self.prec.k_low)
        } else {
            Norm::Exact(self.prec.k_high - valuation(self.residue, self.prec.p) as i32)
        }
    }

    /// Whether `|x|_p <= p^n`.
    pub fn in_ball(&self, n: i32) -> bool {
        let need = self.prec.k_high as i64 - n as i64;
        if need <= 0 {
            return true;
        }
        if need >= self.prec.digits() as i64 {
            return self.residue == 0;
        }
        self.residue.is_multiple_of(self.prec.pow(need as u32))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.prec != other.prec {
            return param(format!(
                "precision mismatch: {:?} vs {:?}",
                self.prec, other.prec
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(self.add_unchecked(other))
    }

    pub(crate) fn add_unchecked(&self, other: &Self) -> Self {
        let mut r = self.residue + other.residue;
        if r >= self.prec.modulus {
            r -= self.prec.modulus;
        }
        Self {
            prec: self.prec,
            residue: r,
        }
    }

    pub fn neg(&self) -> Self {
        let residue = if self.residue == 0 {
            0
        } else {
            self.prec.modulus - self.residue
        };
        Self {
            prec: self.prec,
            residue,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    /// The fractional part `{x}_p` as `(numerator, denominator exponent)`,
    /// i.e. `{x}_p = numerator / p^exponent`.
    pub fn fractional_part(&self) -> (u128, u32) {
        self.fractional_part_scaled(0)
    }

    /// Fractional part of `p^(-shift) * x`. Exact while `shift <= k_low`.
    fn fractional_part_scaled(&self, shift: i32) -> (u128, u32) {
        let below = (self.prec.k_high as i64 + shift as i64).min(self.prec.digits() as i64);
        if below <= 0 {
            return (0, 0);
        }
        let den = self.prec.pow(below as u32);
        (self.residue % den, below as u32)
    }

    /// The additive character `χ(x) = exp(2πi {x}_p)`.
    pub fn character(&self) -> Complex64 {
        self.character_scaled(0)
    }

    /// `χ(p^(-shift) * x)`: the character paired with a frequency of norm
    /// `p^shift`. Digits dropped at the precision floor only matter once
    /// `shift > k_low`.
    pub fn character_scaled(&self, shift: i32) -> Complex64 {
        let (num, den_exp) = self.fractional_part_scaled(shift);
        if num == 0 {
            return Complex64::new(1.0, 0.0);
        }
        let den = self.prec.pow(den_exp);
        // reduce before converting so the angle keeps full precision
        let angle = TAU * (num as f64 / den as f64);
        Complex64::from_polar(1.0, angle)
    }

    /// Base-p digits from exponent `-k_high` upward.
    pub fn digits(&self) -> Vec<u32> {
        let p = self.prec.p as u128;
        let mut r = self.residue;
        (0..self.prec.digits())
            .map(|_| {
                let d = (r % p) as u32;
                r /= p;
                d
            })
            .collect()
    }
}

/// A point of `Q_p^n`: `n` coordinates sharing one precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadicPoint {
    coords: Vec<PadicApprox>,
}

impl PadicPoint {
    pub fn new(coords: Vec<PadicApprox>) -> Result<Self> {
        let Some(first) = coords.first() else {
            return param("a point needs at least one coordinate");
        };
        if coords.iter().any(|c| c.prec != first.prec) {
            return param("coordinates must share one precision");
        }
        Ok(Self { coords })
    }

    pub fn zero(prec: Precision, n: usize) -> Self {
        Self {
            coords: vec![PadicApprox::zero(prec); n.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[PadicApprox] {
        &self.coords
    }

    pub fn precision(&self) -> Precision {
        self.coords[0].prec
    }

    /// `‖x‖ = max_i |x_i|_p`.
    pub fn norm(&self) -> Norm {
        self.coords.iter().map(PadicApprox::norm).max().unwrap()
    }

    pub fn in_ball(&self, n: i32) -> bool {
        self.coords.iter().all(|c| c.in_ball(n))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return param("dimension mismatch");
        }
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a.add(b))
            .collect::<Result<_>>()?;
        Ok(Self { coords })
    }

    pub(crate) fn add_assign_unchecked(&mut self, other: &Self) {
        for (a, b) in self.coords.iter_mut().zip(&other.coords) {
            *a = a.add_unchecked(b);
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(PadicApprox::neg).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    /// `χ(ξ·x)` for a frequency `ξ` whose coordinates are `p^(-s_i)` (or 0
    /// where the entry is `None`); `‖ξ‖ = p^(max s_i)`.
    pub fn character_dot(&self, shifts: &[Option<i32>]) -> Complex64 {
        self.coords
            .iter()
            .zip(shifts)
            .filter_map(|(c, s)| s.map(|s| c.character_scaled(s)))
            .product()
    }
}

/// The exact finite partition of `B_M ⊂ Q_p^n` into cosets of `B_{-K}`.
///
/// Cell ids are mixed-radix numbers whose digits are the per-coordinate
/// residues `r_i ∈ [0, p^(M+K))`, with `x_i = p^(-M) r_i`. The representative
/// of a cell is its canonical expansion with no digits at exponents `>= K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    p: u32,
    n: u32,
    m: i32,
    k: i32,
    #[serde(skip)]
    radix: u64,
}

impl GridSpec {
    pub fn new(p: u32, n: u32, m: i32, k: i32) -> Result<Self> {
        check_prime(p)?;
        if n == 0 {
            return param("dimension n must be at least 1");
        }
        if k < 0 {
            return param(format!("resolution K = {k} must be nonnegative"));
        }
        if m + k < 1 {
            return param(format!("M + K = {} must be at least 1", m + k));
        }
        let radix = (p as u64)
            .checked_pow((m + k) as u32)
            .ok_or_else(|| Error::Parameter("grid too large".into()))?;
        radix
            .checked_pow(n)
            .filter(|&c| c <= 1 << 40)
            .ok_or_else(|| Error::Parameter("grid has more than 2^40 cells".into()))?;
        Ok(Self { p, n, m, k, radix })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Exponent of the domain ball `B_M`.
    pub fn m(&self) -> i32 {
        self.m
    }

    /// Resolution: cells are cosets of `B_{-K}`.
    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn cell_count(&self) -> usize {
        self.radix.pow(self.n) as usize
    }

    /// Haar measure of one cell, `p^(-nK)`.
    pub fn cell_volume(&self) -> f64 {
        (self.p as f64).powi(-(self.n as i32) * self.k)
    }

    /// Haar measure of `B_M`, `p^(nM)`.
    pub fn domain_volume(&self) -> f64 {
        (self.p as f64).powi(self.n as i32 * self.m)
    }

    pub fn precision(&self) -> Precision {
        Precision::new(self.p, self.k, self.m).expect("validated grid")
    }

    /// Per-coordinate residues of a cell id.
    pub fn coordinates(&self, id: usize) -> impl Iterator<Item = u64> + '_ {
        let mut rest = id as u64;
        (0..self.n).map(move |_| {
            let r = rest % self.radix;
            rest /= self.radix;
            r
        })
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.cell_count() {
            return Err(Error::Domain(format!(
                "cell {id} outside a grid of {} cells",
                self.cell_count()
            )));
        }
        Ok(())
    }

    pub fn cell_representative(&self, id: usize) -> Result<PadicPoint> {
        self.check_id(id)?;
        let prec = self.precision();
        let coords = self
            .coordinates(id)
            .map(|r| PadicApprox::new(prec, r as u128))
            .collect::<Result<_>>()?;
        PadicPoint::new(coords)
    }

    /// The cell containing `x`. Points must carry at least the grid's
    /// resolution (`k_low >= K`).
    pub fn cell_index(&self, x: &PadicPoint) -> Result<usize> {
        if x.dim() != self.n as usize {
            return Err(Error::GridMismatch(format!(
                "point of dimension {} on a grid of dimension {}",
                x.dim(),
                self.n
            )));
        }
        let prec = x.precision();
        if prec.p() != self.p {
            return Err(Error::GridMismatch(format!(
                "point over Q_{} on a grid over Q_{}",
                prec.p(),
                self.p
            )));
        }
        if prec.k_low() < self.k {
            return param(format!(
                "point resolves only down to p^{}, the grid needs p^{}",
                prec.k_low(),
                self.k
            ));
        }
        if !x.in_ball(self.m) {
            return Err(Error::Domain(format!(
                "point of norm {:?} outside B_{}",
                x.norm(),
                self.m
            )));
        }
        let p = self.p as u128;
        let mut id: u64 = 0;
        for c in x.coords().iter().rev() {
            let mut r = c.residue();
            let mut shift = prec.k_high() - self.m;
            while shift > 0 {
                r /= p;
                shift -= 1;
            }
            let mut r = r % self.radix as u128;
            while shift < 0 {
                r = (r * p) % self.radix as u128;
                shift += 1;
            }
            id = id * self.radix + r as u64;
        }
        Ok(id as usize)
    }

    /// Norm exponent of a per-coordinate residue difference, `None` when zero.
    fn residue_norm(&self, d: u64) -> Option<i32> {
        if d == 0 {
            None
        } else {
            Some(self.m - valuation(d as u128, self.p) as i32)
        }
    }

    /// Exponent of `‖rep(i) - rep(j)‖`, or `None` for `i == j`.
    pub fn distance_exponent(&self, i: usize, j: usize) -> Option<i32> {
        self.coordinates(i)
            .zip(self.coordinates(j))
            .filter_map(|(a, b)| {
                let d = if a >= b { a - b } else { self.radix - (b - a) };
                self.residue_norm(d)
            })
            .max()
    }

    /// Distance between two cells. For `i != j` this is the constant value of
    /// `‖x - y‖` over all `x` in cell `i` and `y` in cell `j`.
    pub fn cell_distance(&self, i: usize, j: usize) -> Norm {
        match self.distance_exponent(i, j) {
            Some(e) => Norm::Exact(e),
            None => Norm::BelowResolution(-self.k),
        }
    }

    /// Norm exponent of a cell (its shell), `None` for the central cell `B_{-K}`.
    pub fn shell_of(&self, id: usize) -> Option<i32> {
        self.coordinates(id)
            .filter_map(|r| self.residue_norm(r))
            .max()
    }

    /// Ids of the cells inside `B_N`.
    pub fn cells_in_ball(&self, n: i32) -> impl Iterator<Item = usize> + '_ {
        (0..self.cell_count()).filter(move |&id| self.shell_of(id).is_none_or(|s| s <= n))
    }

    /// Row-major table of distance exponents (`i32::MIN` on the diagonal).
    pub fn distance_table(&self) -> Vec<i32> {
        let count = self.cell_count();
        let coords: Vec<Vec<u64>> = (0..count).map(|i| self.coordinates(i).collect()).collect();
        let mut out = vec![i32::MIN; count * count];
        for (i, ci) in coords.iter().enumerate() {
            for (j, cj) in coords.iter().enumerate() {
                let mut best = None;
                for (&a, &b) in ci.iter().zip(cj) {
                    let d = if a >= b { a - b } else { self.radix - (b - a) };
                    best = best.max(self.residue_norm(d));
                }
                out[i * count + j] = best.unwrap_or(i32::MIN);
            }
        }
        out
    }
}

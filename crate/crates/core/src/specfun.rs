//! Special functions and distributions that stay accurate deep in the tails.
//!
//! The chi distribution is evaluated through the regularized incomplete gamma
//! function, `F_chi_n(r) = P(n/2, r^2/2)`. Both tails are computed directly
//! (series for the lower tail, a continued fraction for the upper one) and
//! carried in log space, so quantiles at probabilities like `5e-11` remain
//! well defined for a million degrees of freedom.

use std::f64::consts::{LN_2, SQRT_2};

use rand::Rng;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SERIES_MAX_ITER: usize = 200_000;
const QUANTILE_MAX_ITER: usize = 400;

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln Phi(x)`, finite for every finite `x`.
///
/// The lower tail beyond `x = -30` uses the continued fraction for the Mills
/// ratio; the upper tail goes through `ln(1 - Phi(-x))`.
pub fn std_normal_ln_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * libm::erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * libm::erfc(-x / SQRT_2)).ln()
    } else {
        let t = -x;
        let mut f = t;
        for k in (1..=80).rev() {
            f = t + k as f64 / f;
        }
        -0.5 * x * x - LN_SQRT_2PI - f.ln()
    }
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation polished with two Halley steps.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    Ok(normal_quantile_unchecked(p))
}

fn normal_quantile_unchecked(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;

    if p > 0.5 {
        return -normal_quantile_unchecked(1.0 - p);
    }
    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..2 {
        // Halley step on ln Phi keeps the correction finite in the far tail.
        let e = std_normal_ln_cdf(x) - p.ln();
        let ratio = (std_normal_ln_cdf(x) - std_normal_pdf(x).ln()).exp();
        let u = e * ratio;
        let step = u / (1.0 + 0.5 * (x * u + e));
        if step.is_finite() {
            x -= step;
        }
    }
    x
}

/// `ln(1 + d) - d` without cancellation for small `d`.
fn log1pmx(d: f64) -> f64 {
    if d.abs() > 0.3 {
        return d.ln_1p() - d;
    }
    let mut term = d;
    let mut sum = 0.0;
    for k in 2..60 {
        term *= -d;
        let add = term / k as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// `ln Gamma(a) - [(a - 1/2) ln a - a + ln sqrt(2 pi)]` for `a >= 10`.
fn stirling_error(a: f64) -> f64 {
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))))
}

/// `ln(x^a e^{-x} / Gamma(a))`.
fn ln_gamma_prefix(a: f64, x: f64) -> f64 {
    if a < 10.0 {
        a * x.ln() - x - libm::lgamma(a)
    } else {
        let d = (x - a) / a;
        a * log1pmx(d) + 0.5 * a.ln() - LN_SQRT_2PI - stirling_error(a)
    }
}

fn ln_gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut denom = a;
    for _ in 0..SERIES_MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    ln_gamma_prefix(a, x) - a.ln() + sum.ln()
}

fn ln_gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..SERIES_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    ln_gamma_prefix(a, x) + h.ln()
}

/// `(ln P(a, x), ln Q(a, x))` for the regularized incomplete gamma functions.
pub fn ln_gamma_pq(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if x == f64::INFINITY {
        return (0.0, f64::NEG_INFINITY);
    }
    if x < a + 1.0 {
        let ln_p = ln_gamma_p_series(a, x);
        (ln_p, (-ln_p.exp()).ln_1p())
    } else {
        let ln_q = ln_gamma_q_fraction(a, x);
        ((-ln_q.exp()).ln_1p(), ln_q)
    }
}

fn gamma_density_ln(a: f64, x: f64) -> f64 {
    ln_gamma_prefix(a, x) - x.ln()
}

/// Solves `ln P(a, x) = ln_target` (or `ln Q` when `upper`) for `x`.
///
/// Newton iterations on the log-probability, safeguarded by a bracket that
/// falls back to geometric bisection.
fn gamma_quantile_ln(a: f64, ln_target: f64, upper: bool) -> f64 {
    if ln_target >= 0.0 {
        return if upper { 0.0 } else { f64::INFINITY };
    }
    if ln_target == f64::NEG_INFINITY {
        return if upper { f64::INFINITY } else { 0.0 };
    }

    // Initial guess: Wilson-Hilferty, or the small-x power law in the lower tail.
    let lower_tail_ln = if upper { (-ln_target.exp()).ln_1p() } else { ln_target };
    let z = if upper {
        let q = ln_target.exp();
        if q > 1e-300 {
            -normal_quantile_unchecked(q.min(1.0 - 1e-16))
        } else {
            (-2.0 * ln_target).sqrt()
        }
    } else {
        let p = ln_target.exp();
        if p > 1e-300 {
            normal_quantile_unchecked(p.min(1.0 - 1e-16))
        } else {
            -(-2.0 * ln_target).sqrt()
        }
    };
    let c = 1.0 / (9.0 * a);
    let wh = a * (1.0 - c + z * c.sqrt()).powi(3);
    let mut x = if wh.is_finite() && wh > 0.0 && (upper || z > -1.0 || a > 50.0) {
        wh
    } else {
        ((lower_tail_ln + libm::lgamma(a + 1.0)) / a).exp()
    };
    if !(x.is_finite() && x > 0.0) {
        x = a.max(1.0);
    }

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..QUANTILE_MAX_ITER {
        let (ln_p, ln_q) = ln_gamma_pq(a, x);
        let (value, slope) = if upper {
            (ln_q - ln_target, -(gamma_density_ln(a, x) - ln_q).exp())
        } else {
            (ln_p - ln_target, (gamma_density_ln(a, x) - ln_p).exp())
        };
        if value == 0.0 {
            return x;
        }
        // Increasing in x for the lower tail, decreasing for the upper one.
        if (value < 0.0) != upper {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - value / slope;
        if !(next.is_finite() && next > lo && next < hi) {
            next = if hi.is_infinite() {
                2.0 * x
            } else if lo <= 0.0 {
                0.5 * hi.min(x)
            } else {
                (lo * hi).sqrt()
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        if hi.is_finite() && lo > 0.0 && hi - lo <= 4.0 * f64::EPSILON * hi {
            return 0.5 * (lo + hi);
        }
        x = next;
    }
    x
}

/// Regularized lower incomplete gamma `P(shape, y)`, the unit-scale gamma CDF.
pub fn gamma_cdf(shape: f64, y: f64) -> Result<f64> {
    if !(shape > 0.0) || !(y >= 0.0) {
        return Err(Error::Domain(format!("gamma_cdf(shape={shape}, y={y})")));
    }
    Ok(ln_gamma_pq(shape, y).0.exp())
}

/// Upper tail `Q(shape, y) = 1 - P(shape, y)`, computed directly.
pub fn gamma_sf(shape: f64, y: f64) -> Result<f64> {
    if !(shape > 0.0) || !(y >= 0.0) {
        return Err(Error::Domain(format!("gamma_sf(shape={shape}, y={y})")));
    }
    Ok(ln_gamma_pq(shape, y).1.exp())
}

/// Unit-scale gamma quantile.
pub fn gamma_quantile(shape: f64, p: f64) -> Result<f64> {
    if !(shape > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("gamma_quantile(shape={shape}, p={p})")));
    }
    Ok(if p <= 0.5 { gamma_quantile_ln(shape, p.ln(), false) } else { gamma_quantile_ln(shape, (1.0 - p).ln(), true) })
}

/// Unit-scale gamma quantile addressed by its upper-tail probability.
pub fn gamma_quantile_upper(shape: f64, q: f64) -> Result<f64> {
    if !(shape > 0.0) || !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("gamma_quantile_upper(shape={shape}, q={q})")));
    }
    Ok(gamma_quantile_ln(shape, q.ln(), true))
}

/// Chi distribution with `n` degrees of freedom: the law of `||U||` for
/// `U ~ N(0, I_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChiDist {
    n: usize,
}

impl ChiDist {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("chi distribution needs n >= 1".into()));
        }
        Ok(Self { n })
    }

    pub fn dof(&self) -> usize {
        self.n
    }

    fn shape(&self) -> f64 {
        0.5 * self.n as f64
    }

    /// `(ln F(r), ln (1 - F(r)))`.
    pub fn ln_cdf_sf(&self, r: f64) -> (f64, f64) {
        if r <= 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        ln_gamma_pq(self.shape(), 0.5 * r * r)
    }

    pub fn cdf(&self, r: f64) -> f64 {
        self.ln_cdf_sf(r).0.exp()
    }

    pub fn sf(&self, r: f64) -> f64 {
        self.ln_cdf_sf(r).1.exp()
    }

    pub fn ln_pdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            // n = 1 is the half-normal with f(0) = sqrt(2/pi).
            return if self.n == 1 && r == 0.0 { 0.5 * (2.0 / std::f64::consts::PI).ln() } else { f64::NEG_INFINITY };
        }
        // f(r) = 2 r g(r^2 / 2) with g the unit-scale gamma density.
        LN_2 + ln_gamma_prefix(self.shape(), 0.5 * r * r) - r.ln()
    }

    pub fn pdf(&self, r: f64) -> f64 {
        self.ln_pdf(r).exp()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("chi quantile needs p in (0,1), got {p}")));
        }
        Ok(if p <= 0.5 { self.quantile_from_ln(p.ln(), false) } else { self.quantile_from_ln((1.0 - p).ln(), true) })
    }

    /// Quantile addressed by the upper-tail probability `q = 1 - p`.
    pub fn quantile_upper(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("chi upper quantile needs q in (0,1), got {q}")));
        }
        Ok(self.quantile_from_ln(q.ln(), true))
    }

    fn quantile_from_ln(&self, ln_prob: f64, upper: bool) -> f64 {
        (2.0 * gamma_quantile_ln(self.shape(), ln_prob, upper)).sqrt()
    }

    /// `ln Pr(lo <= R <= hi)`, evaluated on whichever tail is small.
    pub fn ln_interval_mass(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        if !(hi > lo) {
            return f64::NEG_INFINITY;
        }
        let a = self.shape();
        let (lp_lo, lq_lo) = self.ln_cdf_sf(lo);
        let (lp_hi, lq_hi) = self.ln_cdf_sf(hi);
        if 0.5 * lo * lo >= a {
            lq_lo + ln_1m_exp(lq_hi - lq_lo)
        } else if 0.5 * hi * hi <= a {
            lp_hi + ln_1m_exp(lp_lo - lp_hi)
        } else {
            (1.0 - lp_lo.exp() - lq_hi.exp()).max(0.0).ln()
        }
    }

    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        self.ln_interval_mass(lo, hi).exp()
    }

    /// Draws from the chi law restricted to `[lo, hi]` by inverting the CDF.
    fn sample_within<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let a = self.shape();
        let (lp_lo, lq_lo) = self.ln_cdf_sf(lo);
        let (lp_hi, lq_hi) = self.ln_cdf_sf(hi);
        let r = if 0.5 * lo * lo >= a {
            // Q(lo) - u (Q(lo) - Q(hi))
            let ratio = (lq_hi - lq_lo).exp();
            let target = lq_lo + (1.0 - u * (1.0 - ratio)).ln();
            self.quantile_from_ln(target, true)
        } else if 0.5 * hi * hi <= a {
            // P(hi) - (1 - u) (P(hi) - P(lo))
            let ratio = (lp_lo - lp_hi).exp();
            let target = lp_hi + (1.0 - (1.0 - u) * (1.0 - ratio)).ln();
            self.quantile_from_ln(target, false)
        } else {
            let p_lo = lp_lo.exp();
            let q_hi = lq_hi.exp();
            let mass = 1.0 - p_lo - q_hi;
            let p = p_lo + u * mass;
            if p <= 0.5 {
                self.quantile_from_ln(p.ln(), false)
            } else {
                self.quantile_from_ln((q_hi + (1.0 - u) * mass).ln(), true)
            }
        };
        r.clamp(lo, hi)
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
fn ln_1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Sorted union of disjoint closed intervals on `[0, inf]`: a radial failure set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let mut prev_hi = f64::NEG_INFINITY;
        for &(lo, hi) in &intervals {
            if !(lo >= 0.0 && lo < hi && lo >= prev_hi) {
                return Err(Error::InvalidParameter(format!(
                    "intervals must be sorted, disjoint and non-empty: ({lo}, {hi})"
                )));
            }
            prev_hi = hi;
        }
        Ok(Self { intervals })
    }

    /// `[0, inf)`.
    pub fn full() -> Self {
        Self { intervals: vec![(0.0, f64::INFINITY)] }
    }

    /// The set `{r : G(r a) <= 0}` implied by the sorted roots of `G(r a) = 0`
    /// along a direction whose origin is safe: `[r1, r2] U [r3, r4] U ...`,
    /// ending in `[r_m, inf)` when the number of roots is odd.
    pub fn from_sorted_roots(roots: &[f64]) -> Self {
        let intervals = roots
            .chunks(2)
            .map(|pair| match *pair {
                [lo, hi] => (lo, hi),
                [lo] => (lo, f64::INFINITY),
                _ => unreachable!(),
            })
            .filter(|&(lo, hi)| hi > lo)
            .collect();
        Self { intervals }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, r: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| r >= lo && r <= hi)
    }

    /// `ln` of the chi probability mass of the union.
    pub fn ln_chi_mass(&self, chi: &ChiDist) -> f64 {
        log_sum_exp(self.intervals.iter().map(|&(lo, hi)| chi.ln_interval_mass(lo, hi)))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draws `r` from the chi(n) law restricted to `set` and renormalized.
///
/// An interval is chosen with probability proportional to its chi mass and
/// the draw is then made by inverse CDF inside it, so far-tail sets cost the
/// same as central ones.
pub fn sample_truncated_chi<R: Rng + ?Sized>(n: usize, set: &IntervalUnion, rng: &mut R) -> Result<f64> {
    let chi = ChiDist::new(n)?;
    let ln_masses: Vec<f64> = set.intervals.iter().map(|&(lo, hi)| chi.ln_interval_mass(lo, hi)).collect();
    let ln_total = log_sum_exp(ln_masses.iter().copied());
    if ln_total == f64::NEG_INFINITY || ln_total.is_nan() {
        return Err(Error::ZeroMass);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = ln_masses.len() - 1;
    for (i, lm) in ln_masses.iter().enumerate() {
        acc += (lm - ln_total).exp();
        if u < acc {
            chosen = i;
            break;
        }
    }
    // Skip a trailing zero-mass pick caused by rounding of `acc`.
    while ln_masses[chosen] == f64::NEG_INFINITY && chosen > 0 {
        chosen -= 1;
    }
    let (lo, hi) = set.intervals[chosen];
    Ok(chi.sample_within(lo, hi, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        // f increasing, f(lo) < 0 < f(hi)
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_relative_eq!(std_normal_cdf(-3.5), 2.326_290_790_355_250_3e-4, max_relative = 1e-12);
        // Asymptotic series for the upper tail at 8.2.
        let x: f64 = 8.2;
        let tail =
            std_normal_pdf(x) / x * (1.0 - 1.0 / x.powi(2) + 3.0 / x.powi(4) - 15.0 / x.powi(6) + 105.0 / x.powi(8));
        assert!(tail > 1e-16 && tail < 1.3e-16);
        assert_relative_eq!(-std_normal_ln_cdf(x), tail, max_relative = 1e-6);
    }

    #[test]
    fn ln_cdf_is_continuous_across_branches() {
        for &x in &[-30.0_f64, 0.0] {
            let a = std_normal_ln_cdf(x - 1e-9);
            let b = std_normal_ln_cdf(x + 1e-9);
            assert!((a - b).abs() < 1e-6 * a.abs().max(1e-9), "{x}: {a} {b}");
        }
        let deep = std_normal_ln_cdf(-40.0);
        let t2 = 1600.0_f64;
        let series = 1.0 - 1.0 / t2 + 3.0 / t2.powi(2) - 15.0 / t2.powi(3) + 105.0 / t2.powi(4) - 945.0 / t2.powi(5);
        let asym = -800.0 - LN_SQRT_2PI - 40.0_f64.ln() + series.ln();
        assert_relative_eq!(deep, asym, max_relative = 1e-12);
    }

    #[test]
    fn normal_quantile_matches_bisection() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let q = std_normal_quantile(2.3263e-4).unwrap();
        let oracle = bisect(|x| std_normal_cdf(x) - 2.3263e-4, -10.0, 0.0);
        assert!((q - oracle).abs() < 1e-9);
        assert!((q + 3.5).abs() < 1e-4);
        let q = std_normal_quantile(1e-12).unwrap();
        let oracle = bisect(|x| std_normal_ln_cdf(x) - 1e-12_f64.ln(), -10.0, 0.0);
        assert!((q - oracle).abs() < 1e-9);
        assert!((q + 7.034).abs() < 1e-3);
        for p in [1e-300, 1e-50, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-10] {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() < 1e-10, "p={p}");
        }
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn chi_cdf_closed_forms() {
        let chi2 = ChiDist::new(2).unwrap();
        assert_relative_eq!(chi2.cdf(2.0), 1.0 - (-2.0_f64).exp(), max_relative = 1e-14);
        assert_eq!(ChiDist::new(10).unwrap().cdf(0.0), 0.0);
        let lower = ChiDist::new(100).unwrap().cdf(5.80);
        assert!((lower / 5e-11).ln().abs() < 0.1, "{lower}");
        assert!(ChiDist::new(0).is_err());
    }

    #[test]
    fn chi_pdf_closed_forms() {
        let chi2 = ChiDist::new(2).unwrap();
        assert_eq!(chi2.pdf(0.0), 0.0);
        assert_relative_eq!(chi2.pdf(1.0), (-0.5_f64).exp(), max_relative = 1e-13);
        let maxwell = (2.0 / std::f64::consts::PI).sqrt() * (-0.5_f64).exp();
        assert_relative_eq!(ChiDist::new(3).unwrap().pdf(1.0), maxwell, max_relative = 1e-13);
    }

    #[test]
    fn chi_quantile_values() {
        let chi2 = ChiDist::new(2).unwrap();
        assert_relative_eq!(chi2.quantile(1.0 - (-2.0_f64).exp()).unwrap(), 2.0, max_relative = 1e-12);
        let chi10 = ChiDist::new(10).unwrap();
        assert_eq!(format!("{:.2}", chi10.quantile(5e-11).unwrap()), "0.21");
        let big = ChiDist::new(1_000_000).unwrap();
        // Correctly rounded value is 1004.58; the published table shows 1004.57.
        assert!((big.quantile(1.0 - 5e-11).unwrap() - 1004.57).abs() < 0.01);
        assert!(chi10.quantile(0.0).is_err());
        assert!(chi10.quantile_upper(1.0).is_err());
    }

    #[test]
    fn gamma_identities() {
        for y in [0.0, 0.1, 1.0, 7.5, 40.0] {
            assert_relative_eq!(gamma_cdf(1.0, y).unwrap(), -(-y).exp_m1(), max_relative = 1e-13);
            let chi1 = 2.0 * std_normal_cdf((2.0 * y).sqrt()) - 1.0;
            assert!((gamma_cdf(0.5, y).unwrap() - chi1).abs() < 1e-14);
        }
        assert!(gamma_cdf(0.0, 1.0).is_err());
        assert!(gamma_cdf(1.0, -1.0).is_err());
        assert!(gamma_quantile(2.0, 1.0).is_err());
    }

    #[test]
    fn gamma_quantile_matches_bisection() {
        let ca = gamma_quantile(10.0, 1.0 - 5e-5).unwrap();
        let oracle = bisect(|y| 5e-5 - gamma_sf(10.0, y).unwrap(), 0.0, 100.0);
        assert_relative_eq!(ca, oracle, max_relative = 1e-10);
        assert_relative_eq!(gamma_sf(10.0, ca).unwrap(), 5e-5, max_relative = 1e-10);
        for shape in [0.3, 1.0, 5.0, 50.0, 500.0] {
            for p in [1e-8, 0.01, 0.5, 0.9, 1.0 - 1e-8] {
                let y = gamma_quantile(shape, p).unwrap();
                assert!((gamma_cdf(shape, y).unwrap() - p).abs() < 1e-10 * p.max(1e-3), "{shape} {p}");
            }
        }
    }

    #[test]
    fn interval_union_from_roots() {
        assert!(IntervalUnion::from_sorted_roots(&[]).is_empty());
        assert_eq!(IntervalUnion::from_sorted_roots(&[1.0, 2.0, 3.0]).intervals(), &[(1.0, 2.0), (3.0, f64::INFINITY)]);
        assert!(IntervalUnion::new(vec![(2.0, 1.0)]).is_err());
        assert!(IntervalUnion::new(vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn truncated_sampler_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = IntervalUnion::new(vec![(2.0, f64::INFINITY)]).unwrap();
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let r = sample_truncated_chi(2, &set, &mut rng).unwrap();
                assert!(r >= 2.0);
                r
            })
            .sum::<f64>()
            / n as f64;
        // int_2^inf r * r e^{-r^2/2} dr / e^{-2} by Simpson's rule on [2, 14].
        let m = 4000;
        let h = 12.0 / m as f64;
        let f = |r: f64| r * r * (-0.5 * r * r).exp();
        let mut s = f(2.0) + f(14.0);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(2.0 + i as f64 * h);
        }
        let oracle = s * h / 3.0 / (-2.0_f64).exp();
        // sd of r given r >= 2 is below 1
        assert!((mean - oracle).abs() < 3.0 / (n as f64).sqrt(), "{mean} vs {oracle}");
    }

    #[test]
    fn search_bounds_match_reference_implementation() {
        // scipy.stats.chi.ppf / chi.isf at 5e-11
        let expected = [
            (10, 0.213_380_049_250_841_42, 8.350_425_313_343_29),
            (100, 5.804_707_872_299_168_5, 14.838_878_760_146_34),
            (1000, 27.155_403_556_523_56, 36.289_917_922_735_235),
            (10_000, 95.459_256_406_695_45, 104.603_793_045_168_56),
            (100_000, 311.664_963_758_311_44, 320.810_502_366_201_1),
            (1_000_000, 995.430_332_393_834_5, 1_004.575_971_195_937),
        ];
        for (n, lo, hi) in expected {
            let chi = ChiDist::new(n).unwrap();
            assert_relative_eq!(chi.quantile(5e-11).unwrap(), lo, max_relative = 1e-9);
            assert_relative_eq!(chi.quantile_upper(5e-11).unwrap(), hi, max_relative = 1e-9);
        }
    }

    #[test]
    fn truncated_sampler_rejects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Log-space masses keep far-tail sets sampleable.
        let set = IntervalUnion::new(vec![(1e3, f64::INFINITY)]).unwrap();
        assert!(sample_truncated_chi(3, &set, &mut rng).unwrap() >= 1e3);
        assert_eq!(sample_truncated_chi(3, &IntervalUnion::default(), &mut rng), Err(Error::ZeroMass));
    }

    #[test]
    fn far_tail_sampling_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = IntervalUnion::new(vec![(30.0, f64::INFINITY)]).unwrap();
        for _ in 0..100 {
            let r = sample_truncated_chi(10, &set, &mut rng).unwrap();
            assert!((30.0..32.0).contains(&r), "{r}");
        }
    }
}

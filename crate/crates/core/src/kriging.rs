//! One-dimensional ordinary Kriging along a ray, and the active-learning
//! root finder built on it.
//!
//! The surrogate models `r -> G(sigma r a)` with a constant trend and a
//! Matérn-5/2 correlation. Training points are added where the expected
//! misclassification distance to the limit state is largest; the roots are
//! then read off the posterior mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LimitState;
use crate::specfun::{std_normal_cdf, std_normal_pdf, ChiDist};

const SQRT5: f64 = 2.236_067_977_499_79;
const BASE_NUGGET: f64 = 1e-10;
const MAX_NUGGET: f64 = 1e-4;

/// Matérn-5/2 correlation between `r` and `r_prime` with length scale `theta`.
pub fn matern52(r: f64, r_prime: f64, theta: f64) -> f64 {
    let h = SQRT5 * (r - r_prime).abs() / theta;
    (1.0 + h + h * h / 3.0) * (-h).exp()
}

/// In-place Cholesky factor (lower triangle, row-major); `None` if not SPD.
fn cholesky(mut a: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
        for k in j + 1..m {
            a[j * m + k] = 0.0;
        }
    }
    Some(a)
}

fn forward(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

fn backward(l: &[f64], m: usize, b: &mut [f64]) {
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

fn solve(l: &[f64], m: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    forward(l, m, &mut x);
    backward(l, m, &mut x);
    x
}

/// Quantities of the concentrated likelihood at one length scale, in
/// normalized units.
struct Factorization {
    chol: Vec<f64>,
    nugget: f64,
    beta0: f64,
    sigma0_sq: f64,
    kinv_f: Vec<f64>,
    ft_kinv_f: f64,
    alpha: Vec<f64>,
    objective: f64,
}

fn factorize(t: &[f64], y: &[f64], theta: f64) -> Result<Factorization> {
    let m = t.len();
    let mut nugget = BASE_NUGGET;
    let chol = loop {
        let mut k = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                k[i * m + j] = matern52(t[i], t[j], theta);
            }
            k[i * m + i] += nugget;
        }
        match cholesky(k, m) {
            Some(l) => break l,
            None if nugget < MAX_NUGGET => nugget *= 10.0,
            None => return Err(Error::SingularCorrelation(nugget)),
        }
    };
    let ones = vec![1.0; m];
    let kinv_f = solve(&chol, m, &ones);
    let kinv_y = solve(&chol, m, y);
    let ft_kinv_f: f64 = kinv_f.iter().sum();
    let beta0 = kinv_y.iter().sum::<f64>() / ft_kinv_f;
    let resid: Vec<f64> = y.iter().map(|yi| yi - beta0).collect();
    let alpha = solve(&chol, m, &resid);
    let sigma0_sq = (resid.iter().zip(&alpha).map(|(r, a)| r * a).sum::<f64>() / m as f64).max(0.0);
    let ln_det: f64 = (0..m).map(|i| 2.0 * chol[i * m + i].ln()).sum();
    let objective = m as f64 * sigma0_sq.max(1e-300).ln() + ln_det;
    Ok(Factorization { chol, nugget, beta0, sigma0_sq, kinv_f, ft_kinv_f, alpha, objective })
}

/// A fitted ordinary Kriging model on the real line.
///
/// Radii are mapped affinely to `[0, 1]` and responses standardized before
/// fitting; all public quantities are reported in raw units.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    x: Vec<f64>,
    y: Vec<f64>,
    x_offset: f64,
    x_scale: f64,
    y_mean: f64,
    y_scale: f64,
    t: Vec<f64>,
    theta_norm: f64,
    fac: Option<Factorization>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("beta0", &self.beta0)
            .field("sigma0_sq", &self.sigma0_sq)
            .field("nugget", &self.nugget)
            .finish()
    }
}

impl Clone for Factorization {
    fn clone(&self) -> Self {
        Self {
            chol: self.chol.clone(),
            nugget: self.nugget,
            beta0: self.beta0,
            sigma0_sq: self.sigma0_sq,
            kinv_f: self.kinv_f.clone(),
            ft_kinv_f: self.ft_kinv_f,
            alpha: self.alpha.clone(),
            objective: self.objective,
        }
    }
}

impl KrigingModel {
    /// Fits with the length scale searched over `[1e-2 W, 10 W]`, `W` the
    /// span of the training radii.
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let (lo, hi) = span(x);
        Self::fit_with_width(x, y, hi - lo)
    }

    /// Fits with the length scale searched over `[1e-2 W, 10 W]` for the
    /// given width `W`.
    pub fn fit_with_width(x: &[f64], y: &[f64], width: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter("x and y lengths differ".into()));
        }
        let (x, y) = dedup_sorted(x, y);
        if x.len() < 2 {
            return Err(Error::InvalidParameter("Kriging needs at least two distinct radii".into()));
        }
        let (lo, hi) = span(&x);
        let x_scale = hi - lo;
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y.len() as f64;
        let y_scale = y_var.sqrt();
        let t: Vec<f64> = x.iter().map(|xi| (xi - lo) / x_scale).collect();

        let mut model = Self { x, y, x_offset: lo, x_scale, y_mean, y_scale, t, theta_norm: 1.0, fac: None };
        if !(y_scale > 1e-14 * y_mean.abs().max(1e-300)) {
            // Constant response: the posterior is the constant itself.
            return Ok(model);
        }
        let ys: Vec<f64> = model.y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let width = if width > 0.0 { width } else { x_scale };
        let ln_lo = (1e-2 * width / x_scale).ln();
        let ln_hi = (10.0 * width / x_scale).ln();
        let ln_theta = minimize_bracketed(
            |lt| factorize(&model.t, &ys, lt.exp()).map(|f| f.objective).unwrap_or(f64::INFINITY),
            ln_lo,
            ln_hi,
        );
        model.theta_norm = ln_theta.exp();
        model.fac = Some(factorize(&model.t, &ys, model.theta_norm)?);
        Ok(model)
    }

    pub fn train_x(&self) -> &[f64] {
        &self.x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.y
    }

    /// Correlation length in raw radius units.
    pub fn theta(&self) -> f64 {
        self.theta_norm * self.x_scale
    }

    /// Diagonal nugget added to the correlation matrix.
    pub fn nugget(&self) -> f64 {
        self.fac.as_ref().map_or(0.0, |f| f.nugget)
    }

    /// Process mean in raw units.
    pub fn beta0(&self) -> f64 {
        self.y_mean + self.y_scale * self.fac.as_ref().map_or(0.0, |f| f.beta0)
    }

    /// Process variance in raw units.
    pub fn sigma0_sq(&self) -> f64 {
        self.y_scale * self.y_scale * self.fac.as_ref().map_or(0.0, |f| f.sigma0_sq)
    }

    /// True when the training responses are constant.
    pub fn is_degenerate(&self) -> bool {
        self.fac.is_none()
    }

    /// Posterior mean and variance at `r`.
    pub fn predict(&self, r: f64) -> (f64, f64) {
        let Some(fac) = &self.fac else {
            return (self.y_mean, 0.0);
        };
        let m = self.t.len();
        let tr = (r - self.x_offset) / self.x_scale;
        let k: Vec<f64> = self.t.iter().map(|&ti| matern52(tr, ti, self.theta_norm)).collect();
        let mu = fac.beta0 + k.iter().zip(&fac.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = k.clone();
        forward(&fac.chol, m, &mut v);
        let quad: f64 = v.iter().map(|x| x * x).sum();
        let u = fac.kinv_f.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() - 1.0;
        let s2 = fac.sigma0_sq * (1.0 - quad + u * u / fac.ft_kinv_f);
        (self.y_mean + self.y_scale * mu, (self.y_scale * self.y_scale * s2).max(0.0))
    }

    pub fn learning_value(&self, r: f64) -> f64 {
        let (mu, s2) = self.predict(r);
        learning_value(mu, s2.sqrt())
    }
}

fn span(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Sorts by radius and merges radii closer than `1e-12` of the span.
fn dedup_sorted(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = span(x);
    let tol = 1e-12 * (hi - lo).max(1e-300);
    let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
    let mut ys: Vec<f64> = Vec::with_capacity(pairs.len());
    for (xi, yi) in pairs {
        if xs.last().is_some_and(|&last| xi - last <= tol) {
            continue;
        }
        xs.push(xi);
        ys.push(yi);
    }
    (xs, ys)
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section search on `[lo, hi]`, started from the best cell of a
/// coarse pre-grid so the bracket holds one basin.
pub(crate) fn minimize_bracketed(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    minimize_with_grid(f, lo, hi, 16, 1e-4 * (hi - lo))
}

pub(crate) fn minimize_with_grid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize, tol: f64) -> f64 {
    let step = (hi - lo) / (grid - 1) as f64;
    let values: Vec<f64> = (0..grid).map(|i| f(lo + i as f64 * step)).collect();
    let best = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let mut a = lo + best.saturating_sub(1) as f64 * step;
    let mut b = lo + (best + 1).min(grid - 1) as f64 * step;
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let x_gs = 0.5 * (a + b);
    let f_gs = f(x_gs);
    let x_grid = lo + best as f64 * step;
    if values[best] < f_gs {
        x_grid
    } else {
        x_gs
    }
}

/// Expected distance past the limit state when the sign of `Y ~ N(mu, s^2)`
/// is misclassified: `E[max(-sgn(mu) Y, 0)]`, with `sgn(0) = +1`.
pub fn learning_value(mu: f64, s: f64) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    let sign = if mu < 0.0 { -1.0 } else { 1.0 };
    let v = -sign * mu * std_normal_cdf(-sign * mu / s) + s * std_normal_pdf(mu / s);
    v.max(0.0)
}

/// Radial interval searched for roots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchInterval {
    pub r_minus: f64,
    pub r_plus: f64,
    pub alpha: f64,
}

impl SearchInterval {
    pub fn new(r_minus: f64, r_plus: f64, alpha: f64) -> Result<Self> {
        if !(r_minus >= 0.0 && r_minus < r_plus) {
            return Err(Error::InvalidParameter(format!("bad interval [{r_minus}, {r_plus}]")));
        }
        Ok(Self { r_minus, r_plus, alpha })
    }

    /// `[F^-1(alpha/2), F^-1(1 - alpha/2)]` of the chi(n) law.
    pub fn chi_bounds(n: usize, alpha: f64) -> Result<Self> {
        let chi = ChiDist::new(n)?;
        Self::new(chi.quantile(0.5 * alpha)?, chi.quantile_upper(0.5 * alpha)?, alpha)
    }

    /// Chi bounds with the lower end divided by `sigma`, so that every root
    /// that matters after rescaling to a smaller magnification is covered.
    pub fn for_level(n: usize, alpha: f64, sigma: f64) -> Result<Self> {
        let base = Self::chi_bounds(n, alpha)?;
        Self::new(base.r_minus / sigma, base.r_plus, alpha)
    }

    pub fn width(&self) -> f64 {
        self.r_plus - self.r_minus
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.r_minus && r <= self.r_plus
    }

    fn near_upper(&self, r2: f64) -> bool {
        (r2 - self.r_plus).abs() < self.width() / 3.0
    }

    /// Third initial radius: midpoint towards `r_minus` when `r2` sits in the
    /// upper third of the interval, otherwise towards `r_plus`.
    pub fn third_radius(&self, r2: f64) -> f64 {
        if self.near_upper(r2) {
            0.5 * (self.r_minus + r2)
        } else {
            0.5 * (self.r_plus + r2)
        }
    }

    /// Fourth initial radius, which depends on the response at the third.
    pub fn fourth_radius(&self, r2: f64, r3: f64, g3: f64) -> f64 {
        if self.near_upper(r2) {
            if g3 > 0.0 {
                0.5 * (r3 + r2)
            } else {
                0.5 * (self.r_minus + r3)
            }
        } else {
            0.5 * (self.r_minus + r2)
        }
    }
}

/// The non-origin part of the initial design: `[r2, r3]` and, for `k = 4`,
/// `r4` once `g3` is known.
pub fn initial_design(interval: &SearchInterval, r2: f64, k: usize, g3: Option<f64>) -> Vec<f64> {
    let r3 = interval.third_radius(r2);
    let mut radii = vec![0.0, r2, r3];
    if k >= 4 {
        if let Some(g3) = g3 {
            radii.push(interval.fourth_radius(r2, r3, g3));
        }
    }
    radii
}

/// Sorted roots of `G(sigma r a) = 0` inside a search interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    pub roots: Vec<f64>,
    pub interval: SearchInterval,
    /// Points added by active learning.
    pub n_added: usize,
    /// All limit-state evaluations spent on this direction.
    pub n_evals: usize,
    /// Final training-set size, origin included.
    pub design_size: usize,
    pub converged: bool,
}

impl RootSet {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootFinderOptions {
    pub eps: f64,
    pub max_added: usize,
    pub grid_size: usize,
    /// Candidates closer than this fraction of the width to a design point
    /// are skipped.
    pub min_spacing: f64,
    /// Bisection tolerance as a fraction of the width.
    pub root_tol: f64,
}

impl Default for RootFinderOptions {
    fn default() -> Self {
        Self { eps: 5e-4, max_added: 30, grid_size: 1000, min_spacing: 1e-3, root_tol: 1e-6 }
    }
}

/// Starting information for one direction.
#[derive(Debug, Clone, Copy)]
pub struct DirectionSeed {
    /// `||u||` of the sample that defined the direction.
    pub r2: f64,
    /// `G(sigma u)` if it is already known.
    pub g2: Option<f64>,
    /// Initial design size, 3 or 4.
    pub init_k: usize,
}

/// Finds the roots of `G(sigma r a) = 0` on `interval` by active learning.
///
/// `origin_value` is `G(0)`, shared by every direction and not re-evaluated.
pub fn find_roots(
    ls: &LimitState,
    sigma: f64,
    a: &[f64],
    interval: &SearchInterval,
    seed: DirectionSeed,
    origin_value: f64,
    opts: &RootFinderOptions,
) -> Result<RootSet> {
    let width = interval.width();
    let spacing = opts.min_spacing * width;
    let mut xs = vec![0.0];
    let mut ys = vec![origin_value];
    let n_evals = std::cell::Cell::new(0usize);

    let add = |r: f64, known: Option<f64>, xs: &mut Vec<f64>, ys: &mut Vec<f64>| -> Option<f64> {
        if xs.iter().any(|&x| (x - r).abs() < spacing) {
            return None;
        }
        let g = known.unwrap_or_else(|| {
            n_evals.set(n_evals.get() + 1);
            ls.directional_value(sigma, a, r)
        });
        xs.push(r);
        ys.push(g);
        Some(g)
    };

    add(seed.r2, seed.g2, &mut xs, &mut ys);
    let r3 = interval.third_radius(seed.r2);
    let g3 = add(r3, None, &mut xs, &mut ys);
    if seed.init_k >= 4 {
        let g3 = g3.unwrap_or(seed.g2.unwrap_or(origin_value));
        add(interval.fourth_radius(seed.r2, r3, g3), None, &mut xs, &mut ys);
    }
    let init_evals = n_evals.get();

    let grid: Vec<f64> =
        (0..opts.grid_size).map(|i| interval.r_minus + width * i as f64 / (opts.grid_size - 1) as f64).collect();

    let mut n_added = 0;
    let mut converged = false;
    let mut model = KrigingModel::fit_with_width(&xs, &ys, width)?;
    loop {
        let mean_abs_y = ys.iter().map(|y| y.abs()).sum::<f64>() / ys.len() as f64;
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        for &r in &grid {
            if xs.iter().any(|&x| (x - r).abs() < spacing) {
                continue;
            }
            let l = model.learning_value(r);
            if l > best.0 {
                best = (l, r);
            }
        }
        if !best.1.is_finite() || best.0 <= opts.eps * mean_abs_y || best.0 == 0.0 {
            converged = true;
            break;
        }
        if n_added >= opts.max_added {
            break;
        }
        add(best.1, None, &mut xs, &mut ys);
        n_added += 1;
        match KrigingModel::fit_with_width(&xs, &ys, width) {
            Ok(m) => model = m,
            Err(_) => break,
        }
    }
    let n_evals = n_evals.get();
    debug_assert_eq!(n_evals, init_evals + n_added);

    let roots = posterior_roots(&model, interval, &grid, opts.root_tol * width);
    Ok(RootSet { roots, interval: *interval, n_added, n_evals, design_size: xs.len(), converged })
}

/// Sign changes of the posterior mean on the grid (plus the design points
/// inside the interval), refined by bisection and with near-coincident pairs
/// dropped.
fn posterior_roots(model: &KrigingModel, interval: &SearchInterval, grid: &[f64], tol: f64) -> Vec<f64> {
    let mut pts: Vec<f64> =
        grid.iter().copied().chain(model.train_x().iter().copied().filter(|&x| interval.contains(x))).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let failing = |r: f64| model.predict(r).0 <= 0.0;
    let mut roots = Vec::new();
    let mut prev_r = pts[0];
    let mut prev_fail = failing(prev_r);
    if prev_fail {
        // Failure already at the lower bound: the crossing lies below it.
        roots.push(interval.r_minus);
    }
    for &r in &pts[1..] {
        let fail = failing(r);
        if fail != prev_fail {
            let (mut lo, mut hi) = (prev_r, r);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if failing(mid) == prev_fail {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_r = r;
        prev_fail = fail;
    }

    // A pair of crossings closer than the merge tolerance is a tangency.
    let merge = 2.0 * tol;
    let mut cleaned: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        if cleaned.last().is_some_and(|&last| r - last <= merge) {
            cleaned.pop();
        } else {
            cleaned.push(r);
        }
    }
    cleaned
}

//! Sequential directional importance sampling.
//!
//! The failure probability is written as `P(G(sigma_1 U) <= 0)` times a
//! product of ratios between successively less magnified problems. Each
//! ratio is estimated along directions: a sample at level `sigma_i` carries
//! the roots of `G(sigma_i r a) = 0`, from which the radial failure mass at
//! any other magnification follows without new evaluations.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::{find_roots, minimize_with_grid, DirectionSeed, RootFinderOptions, RootSet, SearchInterval};
use crate::model::LimitState;
use crate::specfun::{sample_truncated_chi, ChiDist, IntervalUnion};
use crate::sus::{grow_chains, run_sus, AcsAdapter, EvaluatedSample, SusParams, INITIAL_LAMBDA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdisParams {
    pub sigma1: f64,
    pub n_s: usize,
    pub chain_len: usize,
    pub delta_target: f64,
    pub alpha_tail: f64,
    pub eps_learn: f64,
    pub fallback_factor: usize,
    pub p0: f64,
    pub max_added: usize,
    /// Directions per level fitted with three initial points before the
    /// design size may grow to four.
    pub init_window: usize,
    /// Cap on the number of ratio levels.
    pub max_levels: usize,
    /// Cap on Subset Simulation levels in the fallback.
    pub max_sus_levels: usize,
    /// Use the biased `n_s / N` first-level estimator instead of
    /// `(n_s - 1) / (N - 1)`. For comparison only.
    pub biased_first_level: bool,
}

impl Default for SdisParams {
    fn default() -> Self {
        Self {
            sigma1: 3.0,
            n_s: 150,
            chain_len: 5,
            delta_target: 1.5,
            alpha_tail: 1e-10,
            eps_learn: 5e-4,
            fallback_factor: 10,
            p0: 0.1,
            max_added: 30,
            init_window: 30,
            max_levels: 20,
            max_sus_levels: 30,
            biased_first_level: false,
        }
    }
}

impl SdisParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.sigma1 >= 1.0 && self.sigma1.is_finite()) {
            return bad(format!("sigma1 = {} must be >= 1", self.sigma1));
        }
        if self.n_s < 3 {
            return bad(format!("n_s = {} must be at least 3", self.n_s));
        }
        if self.chain_len == 0 {
            return bad("chain_len must be positive".into());
        }
        if !(self.delta_target > 0.0) {
            return bad("delta_target must be positive".into());
        }
        if !(self.alpha_tail > 0.0 && self.alpha_tail < 1.0) {
            return bad("alpha_tail must be in (0, 1)".into());
        }
        if !(self.eps_learn > 0.0) {
            return bad("eps_learn must be positive".into());
        }
        if self.fallback_factor < 2 {
            return bad("fallback_factor must be at least 2".into());
        }
        if self.max_levels == 0 {
            return bad("max_levels must be positive".into());
        }
        self.fallback_sus().validate()
    }

    /// Subset Simulation settings used when crude sampling of the first
    /// level is too slow: the level size equals the crude-sampling budget.
    pub fn fallback_sus(&self) -> SusParams {
        SusParams { n_level: self.fallback_factor * self.n_s, p0: self.p0, max_levels: self.max_sus_levels }
    }

    fn root_options(&self) -> RootFinderOptions {
        RootFinderOptions { eps: self.eps_learn, max_added: self.max_added, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstLevelMethod {
    Mcs,
    Sus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstLevel {
    pub method: FirstLevelMethod,
    pub p_hat: f64,
    pub cov: f64,
    /// Evaluations spent on this level, crude draws included.
    pub evals: u64,
    /// Intermediate Subset Simulation levels (0 for crude sampling).
    pub sus_levels: usize,
    #[serde(skip)]
    pub failure_points: Vec<EvaluatedSample>,
}

/// A failure point at one level together with its directional information.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalSample {
    pub a: Vec<f64>,
    pub r: f64,
    /// `G(sigma r a)`.
    pub g: f64,
    pub roots: RootSet,
    pub ln_p_cond: f64,
    pub p_cond: f64,
}

impl DirectionalSample {
    pub fn point(&self) -> Vec<f64> {
        self.a.iter().map(|ai| self.r * ai).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub sigma: f64,
    pub sigma_next: f64,
    pub s_hat: f64,
    pub delta_s: f64,
    /// Evaluations spent at this level: root finding plus the moves that
    /// produce the next level's samples.
    pub evals: u64,
    pub init_evals: u64,
    pub added_evals: u64,
    pub mcmc_evals: u64,
    /// `root_histogram[k]` counts directions with `k` roots.
    pub root_histogram: Vec<usize>,
    pub non_converged: usize,
    pub zero_p_cond: usize,
    /// Samples whose first true evaluation showed they were not failures.
    pub invalid_seeds: usize,
    pub mean_design_size: f64,
    pub acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub pf_hat: f64,
    pub cov_hat: f64,
    pub total_evals: u64,
    pub first_level: FirstLevel,
    pub levels: Vec<LevelRecord>,
    pub seed: Option<u64>,
    pub fallback: bool,
    /// True when every root search met its learning criterion.
    pub roots_converged: bool,
    pub origin_value: f64,
}

impl RunResult {
    pub fn sigmas(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.levels.iter().map(|l| l.sigma).collect();
        if let Some(last) = self.levels.last() {
            s.push(last.sigma_next);
        }
        s
    }

    /// Root-count histogram summed over levels.
    pub fn root_histogram(&self) -> Vec<usize> {
        let len = self.levels.iter().map(|l| l.root_histogram.len()).max().unwrap_or(0);
        let mut h = vec![0; len];
        for l in &self.levels {
            for (k, c) in l.root_histogram.iter().enumerate() {
                h[k] += c;
            }
        }
        h
    }
}

/// Chi(n) probability of the radial failure set implied by sorted roots.
pub fn conditional_prob(roots: &[f64], n: usize) -> Result<f64> {
    Ok(ln_conditional_prob(roots, n)?.exp())
}

/// Natural log of [`conditional_prob`].
pub fn ln_conditional_prob(roots: &[f64], n: usize) -> Result<f64> {
    let chi = ChiDist::new(n)?;
    Ok(IntervalUnion::from_sorted_roots(roots).ln_chi_mass(&chi))
}

/// Roots along the same direction at magnification `sigma_to`.
pub fn scale_roots(roots: &RootSet, sigma_from: f64, sigma_to: f64) -> RootSet {
    let f = sigma_from / sigma_to;
    RootSet {
        roots: roots.roots.iter().map(|r| r * f).collect(),
        interval: SearchInterval {
            r_minus: roots.interval.r_minus * f,
            r_plus: roots.interval.r_plus * f,
            alpha: roots.interval.alpha,
        },
        ..roots.clone()
    }
}

fn scaled_ln_mass(roots: &[f64], factor: f64, chi: &ChiDist) -> f64 {
    let scaled: Vec<f64> = roots.iter().map(|r| r * factor).collect();
    IntervalUnion::from_sorted_roots(&scaled).ln_chi_mass(chi)
}

/// `(p_hat, cov)` of the first level after `draws` draws produced `n_s`
/// failures.
pub fn inverse_binomial_estimate(n_s: usize, draws: usize, biased: bool) -> (f64, f64) {
    let (ns, n) = (n_s as f64, draws as f64);
    if biased {
        let p = ns / n;
        (p, ((1.0 - p) / (n * p)).sqrt())
    } else {
        let p = (ns - 1.0) / (n - 1.0);
        let cov = if n > 2.0 { ((1.0 - p) / ((n - 2.0) * p)).max(0.0).sqrt() } else { f64::INFINITY };
        (p, cov)
    }
}

/// Estimates `P(G(sigma_1 U) <= 0)` and returns `n_s` failure points.
///
/// Draws are made one at a time until `n_s` failures are seen; if the
/// budget of `fallback_factor * n_s` draws runs out first, those draws seed
/// a Subset Simulation run.
pub fn estimate_first_level<R: Rng + ?Sized>(ls: &LimitState, params: &SdisParams, rng: &mut R) -> Result<FirstLevel> {
    let budget = params.fallback_factor * params.n_s;
    let start = ls.evaluations();
    let mut draws: Vec<EvaluatedSample> = Vec::with_capacity(budget);
    let mut failures = Vec::with_capacity(params.n_s);
    while failures.len() < params.n_s && draws.len() < budget {
        let u: Vec<f64> = (0..ls.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let g = ls.scaled_value(params.sigma1, &u);
        if g <= 0.0 {
            failures.push(draws.len());
        }
        draws.push(EvaluatedSample { u, g });
    }
    if failures.len() == params.n_s {
        let (p_hat, cov) = inverse_binomial_estimate(params.n_s, draws.len(), params.biased_first_level);
        let failure_points = failures.into_iter().map(|i| draws[i].clone()).collect();
        return Ok(FirstLevel {
            method: FirstLevelMethod::Mcs,
            p_hat,
            cov,
            evals: ls.evaluations() - start,
            sus_levels: 0,
            failure_points,
        });
    }

    let sus = run_sus(ls, params.sigma1, &params.fallback_sus(), rng, Some(draws))?;
    let pool = sus.failure_samples;
    if pool.len() < params.n_s {
        return Err(Error::DegenerateLevel);
    }
    let failure_points = sample_indices(rng, pool.len(), params.n_s).into_iter().map(|i| pool[i].clone()).collect();
    Ok(FirstLevel {
        method: FirstLevelMethod::Sus,
        p_hat: sus.pf_hat,
        cov: sus.cov_hat,
        evals: ls.evaluations() - start,
        sus_levels: sus.thresholds.len() - 1,
        failure_points,
    })
}

/// Directional weights `p(sigma_next) / p(sigma_i)`; zero where the current
/// conditional probability vanishes.
pub fn directional_weights(samples: &[DirectionalSample], sigma_i: f64, sigma_next: f64, n: usize) -> Result<Vec<f64>> {
    let chi = ChiDist::new(n)?;
    let factor = sigma_i / sigma_next;
    Ok(samples
        .iter()
        .map(|s| {
            if s.ln_p_cond == f64::NEG_INFINITY {
                0.0
            } else {
                (scaled_ln_mass(&s.roots.roots, factor, &chi) - s.ln_p_cond).exp()
            }
        })
        .collect())
}

fn mean_and_cov(w: &[f64]) -> (f64, f64) {
    let m = w.len() as f64;
    let mean = w.iter().sum::<f64>() / m;
    if mean <= 0.0 {
        return (mean, f64::INFINITY);
    }
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt() / mean)
}

/// Sample CoV of the directional weights for a move to `sigma`.
pub fn weight_cov(samples: &[DirectionalSample], sigma_i: f64, sigma: f64, n: usize) -> Result<f64> {
    Ok(mean_and_cov(&directional_weights(samples, sigma_i, sigma, n)?).1)
}

/// Next magnification: the `sigma` in `[1, sigma_i]` whose weight CoV is
/// closest to `delta_target`, or 1 when that is already within target.
pub fn adapt_sigma(samples: &[DirectionalSample], sigma_i: f64, delta_target: f64, n: usize) -> Result<f64> {
    if samples.iter().all(|s| s.ln_p_cond == f64::NEG_INFINITY) {
        return Err(Error::DegenerateLevel);
    }
    let chi = ChiDist::new(n)?;
    let cov_at = |sigma: f64| -> f64 {
        let factor = sigma_i / sigma;
        let w: Vec<f64> = samples
            .iter()
            .map(|s| {
                if s.ln_p_cond == f64::NEG_INFINITY {
                    0.0
                } else {
                    (scaled_ln_mass(&s.roots.roots, factor, &chi) - s.ln_p_cond).exp()
                }
            })
            .collect();
        mean_and_cov(&w).1
    };
    if cov_at(1.0) <= delta_target || sigma_i <= 1.0 {
        return Ok(1.0);
    }
    let tol = 1e-6 * (sigma_i - 1.0);
    let sigma = minimize_with_grid(|s| (cov_at(s) - delta_target).abs(), 1.0, sigma_i, 200, tol);
    Ok(sigma.clamp(1.0, sigma_i))
}

/// `(S_hat, delta_S, weights)` for the move from `sigma_i` to `sigma_next`.
pub fn level_ratio(
    samples: &[DirectionalSample],
    sigma_i: f64,
    sigma_next: f64,
    n: usize,
) -> Result<(f64, f64, Vec<f64>)> {
    let w = directional_weights(samples, sigma_i, sigma_next, n)?;
    let (mean, cov) = mean_and_cov(&w);
    Ok((mean, cov / (w.len() as f64).sqrt(), w))
}

/// Draws `n_s` directions with probability proportional to `weights`, then
/// a radius from the chi law restricted to each direction's failure set at
/// `sigma_next`.
pub fn resample<R: Rng + ?Sized>(
    samples: &[DirectionalSample],
    weights: &[f64],
    sigma_i: f64,
    sigma_next: f64,
    n_s: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let index = WeightedIndex::new(weights).map_err(|_| Error::ZeroWeights)?;
    let factor = sigma_i / sigma_next;
    (0..n_s)
        .map(|_| {
            let s = &samples[index.sample(rng)];
            let scaled: Vec<f64> = s.roots.roots.iter().map(|r| r * factor).collect();
            let set = IntervalUnion::from_sorted_roots(&scaled);
            let r = sample_truncated_chi(n, &set, rng)?;
            Ok(s.a.iter().map(|ai| r * ai).collect())
        })
        .collect()
}

/// Outcome of [`mcmc_move`].
#[derive(Debug, Clone, PartialEq)]
pub struct MovedSamples {
    /// Final chain states with `G(sigma u)` when a proposal was ever
    /// accepted; `None` means the chain stayed on its seed.
    pub points: Vec<(Vec<f64>, Option<f64>)>,
    pub acceptance: f64,
    pub lambda: f64,
}

/// Runs one conditional-sampling chain of length `l` from each seed,
/// targeting `phi(u) I(G(sigma u) <= 0)`, and keeps the last state.
pub fn mcmc_move<R: Rng + ?Sized>(
    seeds: Vec<Vec<f64>>,
    ls: &LimitState,
    sigma: f64,
    l: usize,
    rng: &mut R,
) -> MovedSamples {
    let seeds: Vec<(Vec<f64>, Option<f64>)> = seeds.into_iter().map(|u| (u, None)).collect();
    let mut adapter = AcsAdapter::new(INITIAL_LAMBDA, seeds.len());
    let out = grow_chains(ls, sigma, 0.0, &seeds, l, false, &mut adapter, rng);
    MovedSamples {
        points: out.states,
        acceptance: out.accepted as f64 / out.proposed.max(1) as f64,
        lambda: adapter.lambda,
    }
}

/// Per-level root-finding summary.
struct RootSweep {
    samples: Vec<DirectionalSample>,
    init_evals: u64,
    added_evals: u64,
    invalid_seeds: usize,
    non_converged: usize,
    mean_design_size: f64,
}

fn find_level_roots(
    ls: &LimitState,
    params: &SdisParams,
    sigma: f64,
    points: Vec<(Vec<f64>, Option<f64>)>,
    origin_value: f64,
) -> Result<RootSweep> {
    let n = ls.dim();
    let chi = ChiDist::new(n)?;
    let interval = SearchInterval::for_level(n, params.alpha_tail, sigma)?;
    let opts = params.root_options();
    let mut sweep = RootSweep {
        samples: Vec::with_capacity(points.len()),
        init_evals: 0,
        added_evals: 0,
        invalid_seeds: 0,
        non_converged: 0,
        mean_design_size: 0.0,
    };
    let mut design_total = 0usize;
    for (k, (u, g)) in points.into_iter().enumerate() {
        let r = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a: Vec<f64> = u.iter().map(|x| x / r).collect();
        let g = match g {
            Some(g) => g,
            None => {
                sweep.init_evals += 1;
                let g = ls.scaled_value(sigma, &u);
                if g > 0.0 {
                    sweep.invalid_seeds += 1;
                }
                g
            }
        };
        let init_k = if k >= params.init_window && design_total as f64 / k as f64 > 4.0 { 4 } else { 3 };
        let seed = DirectionSeed { r2: r, g2: Some(g), init_k };
        let roots = find_roots(ls, sigma, &a, &interval, seed, origin_value, &opts)?;
        sweep.init_evals += (roots.n_evals - roots.n_added) as u64;
        sweep.added_evals += roots.n_added as u64;
        sweep.non_converged += (!roots.converged) as usize;
        design_total += roots.design_size;
        let ln_p_cond = IntervalUnion::from_sorted_roots(&roots.roots).ln_chi_mass(&chi);
        sweep.samples.push(DirectionalSample { a, r, g, roots, ln_p_cond, p_cond: ln_p_cond.exp() });
    }
    sweep.mean_design_size = design_total as f64 / sweep.samples.len().max(1) as f64;
    Ok(sweep)
}

/// Runs the estimator with a `ChaCha8Rng` seeded from `seed`.
pub fn run_with_seed(ls: &LimitState, params: &SdisParams, seed: u64) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = run(ls, params, &mut rng)?;
    result.seed = Some(seed);
    Ok(result)
}

/// Estimates `P(G(U) <= 0)`.
pub fn run<R: Rng + ?Sized>(ls: &LimitState, params: &SdisParams, rng: &mut R) -> Result<RunResult> {
    params.validate()?;
    let n = ls.dim();
    let start = ls.evaluations();
    let origin_value = ls.eval(&vec![0.0; n]);
    if !(origin_value > 0.0) {
        return Err(Error::UnsafeOrigin(origin_value));
    }

    let first = estimate_first_level(ls, params, rng)?;
    let mut points: Vec<(Vec<f64>, Option<f64>)> =
        first.failure_points.iter().map(|s| (s.u.clone(), Some(s.g))).collect();
    let mut sigma = params.sigma1;
    let mut levels = Vec::new();

    loop {
        if levels.len() >= params.max_levels {
            return Err(Error::NonConvergence(params.max_levels));
        }
        let sweep = find_level_roots(ls, params, sigma, points, origin_value)?;
        let samples = sweep.samples;
        let sigma_next = if sigma <= 1.0 { 1.0 } else { adapt_sigma(&samples, sigma, params.delta_target, n)? };
        let (s_hat, delta_s, weights) = level_ratio(&samples, sigma, sigma_next, n)?;

        let mut histogram = Vec::new();
        for s in &samples {
            let k = s.roots.len();
            if histogram.len() <= k {
                histogram.resize(k + 1, 0);
            }
            histogram[k] += 1;
        }
        let mut record = LevelRecord {
            sigma,
            sigma_next,
            s_hat,
            delta_s,
            evals: sweep.init_evals + sweep.added_evals,
            init_evals: sweep.init_evals,
            added_evals: sweep.added_evals,
            mcmc_evals: 0,
            root_histogram: histogram,
            non_converged: sweep.non_converged,
            zero_p_cond: samples.iter().filter(|s| s.ln_p_cond == f64::NEG_INFINITY).count(),
            invalid_seeds: sweep.invalid_seeds,
            mean_design_size: sweep.mean_design_size,
            acceptance: None,
        };

        if sigma_next <= 1.0 {
            levels.push(record);
            break;
        }
        let seeds = resample(&samples, &weights, sigma, sigma_next, params.n_s, n, rng)?;
        let moved = mcmc_move(seeds, ls, sigma_next, params.chain_len, rng);
        record.mcmc_evals = (params.n_s * params.chain_len) as u64;
        record.evals += record.mcmc_evals;
        record.acceptance = Some(moved.acceptance);
        levels.push(record);
        points = moved.points;
        sigma = sigma_next;
    }

    let pf_hat = first.p_hat * levels.iter().map(|l| l.s_hat).product::<f64>();
    let cov_hat = (first.cov.powi(2) + levels.iter().map(|l| l.delta_s.powi(2)).sum::<f64>()).sqrt();
    let roots_converged = levels.iter().all(|l| l.non_converged == 0);
    Ok(RunResult {
        pf_hat,
        cov_hat,
        total_evals: ls.evaluations() - start,
        fallback: first.method == FirstLevelMethod::Sus,
        first_level: first,
        levels,
        seed: None,
        roots_converged,
        origin_value,
    })
}

//! Subset Simulation with adaptive conditional sampling.
//!
//! Works on the magnified problem `G(sigma u) <= 0` so it can serve both as
//! the standalone baseline (`sigma = 1`) and as the first-level estimator of
//! the directional sampler when crude Monte Carlo is too slow.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LimitState;

/// Target acceptance rate of the conditional-sampling kernel.
pub const TARGET_ACCEPTANCE: f64 = 0.44;
/// Initial proposal scale.
pub const INITIAL_LAMBDA: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SusParams {
    pub n_level: usize,
    pub p0: f64,
    pub max_levels: usize,
}

impl Default for SusParams {
    fn default() -> Self {
        Self { n_level: 1000, p0: 0.1, max_levels: 30 }
    }
}

impl SusParams {
    /// Number of seeds per level, `p0 * n_level`.
    pub fn n_seeds(&self) -> usize {
        (self.p0 * self.n_level as f64).round() as usize
    }

    /// New states grown from each seed, `1 / p0`.
    pub fn chain_len(&self) -> usize {
        self.n_level / self.n_seeds()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::InvalidParameter(format!("p0 = {} not in (0, 1)", self.p0)));
        }
        let nc = self.p0 * self.n_level as f64;
        if (nc - nc.round()).abs() > 1e-9 || nc.round() < 2.0 {
            return Err(Error::InvalidParameter(format!("p0 * n_level = {nc} must be an integer >= 2")));
        }
        if !self.n_level.is_multiple_of(self.n_seeds()) {
            return Err(Error::InvalidParameter("1 / p0 must be an integer".into()));
        }
        if self.max_levels == 0 {
            return Err(Error::InvalidParameter("max_levels must be positive".into()));
        }
        Ok(())
    }
}

/// A point in standard normal space together with `G(sigma u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSample {
    pub u: Vec<f64>,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusLevel {
    /// Threshold `b_j` that defines the next intermediate event (0 for the
    /// final level).
    pub threshold: f64,
    /// Estimated conditional probability of reaching `threshold`.
    pub p_cond: f64,
    /// Chain-correlation factor of this level's samples.
    pub gamma: f64,
    /// CoV contribution of this level.
    pub delta: f64,
    /// Acceptance rate of the chains that produced this level (0 for the
    /// first level).
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusResult {
    pub pf_hat: f64,
    pub cov_hat: f64,
    pub thresholds: Vec<f64>,
    pub levels: Vec<SusLevel>,
    /// Final-level samples with `G(sigma u) <= 0`.
    pub failure_samples: Vec<EvaluatedSample>,
    /// Evaluations spent inside this call (a warm start costs none).
    pub total_evals: u64,
    pub lambda: f64,
}

impl SusResult {
    pub fn n_intermediate(&self) -> usize {
        self.thresholds.len() - 1
    }
}

/// Scale adaptation of the conditional-sampling proposal.
///
/// Chains are grouped in batches; after batch `t` the scale is updated by
/// `lambda *= exp((acc_t - 0.44) / sqrt(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcsAdapter {
    pub lambda: f64,
    batch_size: usize,
    batch: usize,
    in_batch: usize,
    accepted: usize,
    proposed: usize,
}

impl AcsAdapter {
    pub fn new(lambda: f64, n_chains: usize) -> Self {
        let batch_size = ((0.1 * n_chains as f64).ceil() as usize).max(1);
        Self { lambda, batch_size, batch: 0, in_batch: 0, accepted: 0, proposed: 0 }
    }

    /// Proposal standard deviation, `min(lambda, 1)`.
    pub fn proposal_std(&self) -> f64 {
        self.lambda.min(1.0)
    }

    /// Proposal correlation `rho = sqrt(1 - std^2)`.
    pub fn rho(&self) -> f64 {
        (1.0 - self.proposal_std().powi(2)).max(0.0).sqrt()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Records one finished chain and updates the scale when a batch closes.
    pub fn finish_chain(&mut self, accepted: usize, proposed: usize) {
        self.accepted += accepted;
        self.proposed += proposed;
        self.in_batch += 1;
        if self.in_batch == self.batch_size {
            self.close_batch();
        }
    }

    fn close_batch(&mut self) {
        if self.proposed > 0 {
            self.batch += 1;
            let rate = self.accepted as f64 / self.proposed as f64;
            self.lambda *= ((rate - TARGET_ACCEPTANCE) / (self.batch as f64).sqrt()).exp();
        }
        self.in_batch = 0;
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// One conditional-sampling step targeting `phi(u) I(G(sigma u) <= b)`.
///
/// Returns the next state, its response, and whether the proposal was
/// accepted. Exactly one limit-state evaluation is spent.
pub fn acs_chain_step<R: Rng + ?Sized>(
    state: &[f64],
    g_state: Option<f64>,
    threshold: f64,
    sigma: f64,
    lambda: f64,
    rng: &mut R,
    ls: &LimitState,
) -> (Vec<f64>, Option<f64>, bool) {
    let std = lambda.min(1.0);
    let rho = (1.0 - std * std).max(0.0).sqrt();
    let proposal: Vec<f64> = state
        .iter()
        .map(|&x| {
            let xi: f64 = rng.sample(StandardNormal);
            rho * x + std * xi
        })
        .collect();
    let g = ls.scaled_value(sigma, &proposal);
    if g <= threshold {
        (proposal, Some(g), true)
    } else {
        (state.to_vec(), g_state, false)
    }
}

/// Result of growing chains from a set of seeds.
#[derive(Debug, Clone)]
pub(crate) struct ChainOutput {
    /// States in chain order; chain `c` occupies `c * len .. (c + 1) * len`
    /// when all states are kept, index `c` when only the last is kept.
    pub states: Vec<(Vec<f64>, Option<f64>)>,
    /// Whether each chain accepted at least once.
    pub moved: Vec<bool>,
    pub accepted: usize,
    pub proposed: usize,
}

/// Runs one chain of `len` steps per seed, adapting the scale in batches.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grow_chains<R: Rng + ?Sized>(
    ls: &LimitState,
    sigma: f64,
    threshold: f64,
    seeds: &[(Vec<f64>, Option<f64>)],
    len: usize,
    keep_all: bool,
    adapter: &mut AcsAdapter,
    rng: &mut R,
) -> ChainOutput {
    let mut out = ChainOutput {
        states: Vec::with_capacity(if keep_all { seeds.len() * len } else { seeds.len() }),
        moved: Vec::with_capacity(seeds.len()),
        accepted: 0,
        proposed: 0,
    };
    for (seed, g_seed) in seeds {
        let mut u = seed.clone();
        let mut g = *g_seed;
        let mut acc = 0;
        for _ in 0..len {
            let (next, g_next, ok) = acs_chain_step(&u, g, threshold, sigma, adapter.lambda, rng, ls);
            u = next;
            g = g_next;
            acc += ok as usize;
            if keep_all {
                out.states.push((u.clone(), g));
            }
        }
        if !keep_all {
            out.states.push((u, g));
        }
        out.moved.push(acc > 0);
        out.accepted += acc;
        out.proposed += len;
        adapter.finish_chain(acc, len);
    }
    out
}

/// Chain-correlation factor from indicator autocovariances.
///
/// `indicators` holds `n_chains` consecutive chains of equal length.
pub fn chain_correlation_factor(indicators: &[bool], n_chains: usize) -> f64 {
    let n = indicators.len();
    if n_chains == 0 || !n.is_multiple_of(n_chains) {
        return 0.0;
    }
    let len = n / n_chains;
    let p = indicators.iter().filter(|&&b| b).count() as f64 / n as f64;
    let r0 = p * (1.0 - p);
    if r0 <= 0.0 {
        return 0.0;
    }
    let mut gamma = 0.0;
    for k in 1..len {
        let mut s = 0.0;
        for c in 0..n_chains {
            let chain = &indicators[c * len..(c + 1) * len];
            for t in 0..len - k {
                s += (chain[t] && chain[t + k]) as u8 as f64;
            }
        }
        let rk = s / (n - k * n_chains) as f64 - p * p;
        gamma += (1.0 - (k * n_chains) as f64 / n as f64) * rk / r0;
    }
    2.0 * gamma
}

/// CoV of a level probability estimated from `n` correlated samples.
fn level_delta(p: f64, n: usize, gamma: f64) -> f64 {
    ((1.0 - p) / (n as f64 * p) * (1.0 + gamma)).max(0.0).sqrt()
}

/// Draws `n` standard normal points and evaluates `G(sigma u)` at each.
pub fn sample_level<R: Rng + ?Sized>(ls: &LimitState, sigma: f64, n: usize, rng: &mut R) -> Vec<EvaluatedSample> {
    (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..ls.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let g = ls.scaled_value(sigma, &u);
            EvaluatedSample { u, g }
        })
        .collect()
}

/// Estimates `P(G(sigma U) <= 0)` by Subset Simulation.
///
/// A `warm_start` replaces the first level and is used as given; it must
/// hold exactly `params.n_level` samples.
pub fn run_sus<R: Rng + ?Sized>(
    ls: &LimitState,
    sigma: f64,
    params: &SusParams,
    rng: &mut R,
    warm_start: Option<Vec<EvaluatedSample>>,
) -> Result<SusResult> {
    params.validate()?;
    let n = params.n_level;
    let nc = params.n_seeds();
    let len = params.chain_len();
    let start = ls.evaluations();

    let mut samples = match warm_start {
        Some(w) if w.len() == n => w,
        Some(w) => return Err(Error::InvalidParameter(format!("warm start holds {} samples, expected {n}", w.len()))),
        None => sample_level(ls, sigma, n, rng),
    };
    // Chain count of the current level (0 for independent samples).
    let mut chains = 0usize;
    let mut acceptance = 0.0;
    let mut adapter = AcsAdapter::new(INITIAL_LAMBDA, nc);

    let mut pf = 1.0;
    let mut thresholds = Vec::new();
    let mut levels = Vec::new();

    loop {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| samples[i].g.total_cmp(&samples[j].g));
        let b = samples[order[nc - 1]].g;

        if b <= 0.0 {
            let ind: Vec<bool> = samples.iter().map(|s| s.g <= 0.0).collect();
            let p = ind.iter().filter(|&&x| x).count() as f64 / n as f64;
            let gamma = if chains > 0 { chain_correlation_factor(&ind, chains) } else { 0.0 };
            pf *= p;
            thresholds.push(0.0);
            levels.push(SusLevel { threshold: 0.0, p_cond: p, gamma, delta: level_delta(p, n, gamma), acceptance });
            let failure_samples = samples.into_iter().filter(|s| s.g <= 0.0).collect();
            let cov_hat = levels.iter().map(|l| l.delta * l.delta).sum::<f64>().sqrt();
            return Ok(SusResult {
                pf_hat: pf,
                cov_hat,
                thresholds,
                levels,
                failure_samples,
                total_evals: ls.evaluations() - start,
                lambda: adapter.lambda,
            });
        }

        if thresholds.len() + 1 >= params.max_levels {
            return Err(Error::NonConvergence(params.max_levels));
        }

        let ind: Vec<bool> = samples.iter().map(|s| s.g <= b).collect();
        let gamma = if chains > 0 { chain_correlation_factor(&ind, chains) } else { 0.0 };
        let p = params.p0;
        pf *= p;
        thresholds.push(b);
        levels.push(SusLevel { threshold: b, p_cond: p, gamma, delta: level_delta(p, n, gamma), acceptance });

        let mut seeds: Vec<(Vec<f64>, Option<f64>)> =
            order[..nc].iter().map(|&i| (samples[i].u.clone(), Some(samples[i].g))).collect();
        seeds.shuffle(rng);

        let mut level_adapter = AcsAdapter::new(adapter.lambda, nc);
        let out = grow_chains(ls, sigma, b, &seeds, len, true, &mut level_adapter, rng);
        adapter.lambda = level_adapter.lambda;
        acceptance = out.accepted as f64 / out.proposed as f64;
        samples = out
            .states
            .into_iter()
            .map(|(u, g)| EvaluatedSample { u, g: g.expect("seeds carry their responses") })
            .collect();
        chains = nc;
    }
}

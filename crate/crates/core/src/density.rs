//! Monte Carlo density evolution for rate-1/3 turbo codes with windowed
//! incoherent BPQM on each constituent trellis.
//!
//! The population holds 1-bit extrinsic message distributions. A new sample
//! runs one sampled BPQM trajectory on a window of `2w+1` trellis sections
//! around a systematic bit, with the neighbouring systematic bits fed
//! extrinsic messages drawn from the previous population.

use crate::dist::Distribution;
use crate::graphs::{turbo_window, ConvCode, GraphError, WindowLeaf};
use crate::mpg::{node_ensemble, CompiledMpg, MpgError, Scratch};
use crate::BitMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mpg(#[from] MpgError),
}

/// A use of `W_ω`: the pure-state channel with parameter `p = ½ − √(ω(1−ω))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelParam {
    pub omega: f64,
    pub p: f64,
}

pub fn channel_param(omega: f64) -> Result<ChannelParam, DensityError> {
    if !(0.0..=0.5).contains(&omega) {
        return Err(DensityError::OutOfRange(format!("omega = {omega} is outside [0, 1/2]")));
    }
    Ok(ChannelParam { omega, p: 0.5 - (omega * (1.0 - omega)).sqrt() })
}

pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Root of a function decreasing on `[0, ½]`.
fn bisect_decreasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_rate(rate: f64) -> Result<(), DensityError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(DensityError::OutOfRange(format!("rate {rate} is outside (0, 1)")));
    }
    Ok(())
}

/// Largest `ω` with `1 − h(ω) ≥ rate`: the classical-measurement limit.
pub fn shannon_limit(rate: f64) -> Result<f64, DensityError> {
    check_rate(rate)?;
    Ok(bisect_decreasing(|w| 1.0 - binary_entropy(w), rate))
}

/// Largest `ω` with `h(½ − √(ω(1−ω))) ≥ rate`: the collective-decoding limit.
pub fn holevo_limit(rate: f64) -> Result<f64, DensityError> {
    check_rate(rate)?;
    Ok(bisect_decreasing(|w| binary_entropy(0.5 - (w * (1.0 - w)).sqrt()), rate))
}

#[derive(Clone, Debug, Serialize)]
pub struct DeConfig {
    pub family: ConvCode,
    pub w: usize,
    pub l: usize,
    pub pop: usize,
    pub seed: u64,
}

impl DeConfig {
    pub fn new(family: ConvCode, w: usize, l: usize, pop: usize, seed: u64) -> Result<Self, DensityError> {
        if w < 1 || l < 1 || pop < 100 {
            return Err(DensityError::InvalidConfig(format!("need w >= 1, l >= 1, pop >= 100 (got {w}, {l}, {pop})")));
        }
        Ok(DeConfig { family, w, l, pop, seed })
    }

    pub fn desk(family: ConvCode, seed: u64) -> Self {
        DeConfig { family, w: 50, l: 50, pop: 2000, seed }
    }

    pub fn paper(family: ConvCode, seed: u64) -> Self {
        DeConfig { family, w: 200, l: 200, pop: 10000, seed }
    }
}

/// A compiled decoding window.
#[derive(Clone, Debug)]
pub struct Window {
    mpg: CompiledMpg,
    roles: Vec<WindowLeaf>,
    m: usize,
    extrinsic_slots: usize,
}

impl Window {
    pub fn new(code: &ConvCode, w: usize) -> Result<Self, DensityError> {
        let wg = turbo_window(code, w)?;
        let extrinsic_slots = wg.roles.iter().filter(|r| **r == WindowLeaf::Extrinsic).count();
        Ok(Window { mpg: wg.mpg.compile()?, roles: wg.roles, m: code.m, extrinsic_slots })
    }

    /// Number of extrinsic inputs, `2w`.
    pub fn extrinsic_slots(&self) -> usize {
        self.extrinsic_slots
    }

    /// One sampled trajectory; returns the extrinsic distribution of the
    /// centre systematic bit.
    pub fn extrinsic<R: Rng + ?Sized>(&self, p: f64, incoming: &[[f64; 2]], rng: &mut R, scratch: &mut Scratch) -> [f64; 2] {
        assert_eq!(incoming.len(), self.extrinsic_slots, "one incoming message per neighbouring systematic bit");
        let mut next = 0;
        let roles = &self.roles;
        let m = self.m;
        let root = self.mpg.sample_root(
            |i, buf| match roles[i] {
                WindowLeaf::Boundary => {
                    buf.resize(1 << m, 0.0);
                    buf[0] = 1.0;
                }
                WindowLeaf::Parity | WindowLeaf::Systematic => buf.extend_from_slice(&[1.0 - p, p]),
                WindowLeaf::Extrinsic => {
                    buf.extend_from_slice(&incoming[next]);
                    next += 1;
                }
            },
            rng,
            scratch,
        );
        [root[0], root[1]]
    }
}

/// Convenience wrapper building the window on every call.
pub fn windowed_extrinsic<R: Rng + ?Sized>(
    family: &ConvCode,
    omega: f64,
    incoming: &[[f64; 2]],
    w: usize,
    rng: &mut R,
) -> Result<[f64; 2], DensityError> {
    let ch = channel_param(omega)?;
    let win = Window::new(family, w)?;
    if incoming.len() != win.extrinsic_slots() {
        return Err(DensityError::InvalidConfig(format!("{} incoming messages for {} slots", incoming.len(), 2 * w)));
    }
    Ok(win.extrinsic(ch.p, incoming, rng, &mut Scratch::default()))
}

/// `(Σ√D)²/2`, the probability of guessing the bit from a 1-bit message.
pub fn guess(d: &[f64; 2]) -> f64 {
    let s = d[0].sqrt() + d[1].sqrt();
    (0.5 * s * s).min(1.0)
}

/// Combines 1-bit messages of the same bit at an equality node.
pub fn combine_equality(parts: &[[f64; 2]]) -> [f64; 2] {
    let n = parts.len();
    let dists: Vec<Distribution> =
        parts.iter().map(|d| Distribution::new(1, d.to_vec()).expect("valid message")).collect();
    let refs: Vec<&Distribution> = dists.iter().collect();
    let joint = Distribution::product_all(&refs);
    let g = BitMatrix::from_rows(vec![crate::BitVector::ones(n)], n).expect("width");
    let out = node_ensemble(&g, 1, &joint).expect("equality node");
    debug_assert_eq!(out.len(), 1);
    let p = out[0].dist.probs();
    [p[0], p[1]]
}

fn stream_rng(seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 32) | index);
    rng
}

/// Initial population: no extrinsic information.
pub fn initial_population(pop: usize) -> Vec<[f64; 2]> {
    vec![[1.0, 0.0]; pop]
}

/// One density evolution step. Sample `i` of iteration `t` uses the RNG
/// stream `(t << 32) | i`, so results do not depend on the thread count.
pub fn de_iteration(pop_in: &[[f64; 2]], window: &Window, p: f64, seed: u64, iteration: u64) -> Vec<[f64; 2]> {
    let slots = window.extrinsic_slots();
    (0..pop_in.len())
        .into_par_iter()
        .map_init(
            || (Scratch::default(), Vec::with_capacity(slots)),
            |(scratch, incoming), i| {
                let mut rng = stream_rng(seed, iteration, i as u64);
                incoming.clear();
                for _ in 0..slots {
                    incoming.push(pop_in[rng.gen_range(0..pop_in.len())]);
                }
                window.extrinsic(p, incoming, &mut rng, scratch)
            },
        )
        .collect()
}

/// Error after combining the channel with two independent extrinsic
/// messages, and with one, averaged over the population.
pub fn population_ber(pop: &[[f64; 2]], p: f64, seed: u64, iteration: u64) -> (f64, f64) {
    let ch = [1.0 - p, p];
    let n = pop.len();
    // Collected first so the float sums run in a fixed order.
    let terms: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed ^ 0x5bd1_e995_u64, iteration, i as u64);
            let j = rng.gen_range(0..n);
            let both = 1.0 - guess(&combine_equality(&[ch, pop[i], pop[j]]));
            let single = 1.0 - guess(&combine_equality(&[ch, pop[i]]));
            (both, single)
        })
        .collect();
    let both: f64 = terms.iter().map(|t| t.0).sum();
    let single: f64 = terms.iter().map(|t| t.1).sum();
    (both / n as f64, single / n as f64)
}

/// Mean single-message error `1 − (Σ√D)²/2` of a population.
pub fn population_error(pop: &[[f64; 2]]) -> f64 {
    pop.iter().map(|d| 1.0 - guess(d)).sum::<f64>() / pop.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BerRow {
    pub omega: f64,
    pub iteration: usize,
    pub ber: f64,
    pub ber_single: f64,
}

pub const CONVERGED_BER: f64 = 1e-4;

/// BER after each of `0..=l` iterations at one `ω`. With `stop_below`, the
/// run ends once the BER drops below that value.
pub fn ber_trajectory(
    cfg: &DeConfig,
    window: &Window,
    omega: f64,
    stop_below: Option<f64>,
) -> Result<Vec<BerRow>, DensityError> {
    let ch = channel_param(omega)?;
    let mut pop = initial_population(cfg.pop);
    let mut rows = Vec::with_capacity(cfg.l + 1);
    for t in 0..=cfg.l {
        if t > 0 {
            pop = de_iteration(&pop, window, ch.p, cfg.seed, t as u64);
        }
        let (ber, ber_single) = population_ber(&pop, ch.p, cfg.seed, t as u64);
        rows.push(BerRow { omega, iteration: t, ber, ber_single });
        if stop_below.is_some_and(|c| ber < c) {
            break;
        }
    }
    Ok(rows)
}

pub fn ber_curve(cfg: &DeConfig, omegas: &[f64]) -> Result<Vec<BerRow>, DensityError> {
    let window = Window::new(&cfg.family, cfg.w)?;
    let mut out = Vec::new();
    for &o in omegas {
        out.extend(ber_trajectory(cfg, &window, o, None)?);
    }
    Ok(out)
}

/// Whether the BER falls below `cutoff` within `l` iterations.
pub fn converges(cfg: &DeConfig, window: &Window, omega: f64, cutoff: f64) -> Result<bool, DensityError> {
    let rows = ber_trajectory(cfg, window, omega, Some(cutoff))?;
    Ok(rows.last().is_some_and(|r| r.ber < cutoff))
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub family: String,
    pub threshold: f64,
    pub tol: f64,
    /// BER below which a run counts as converged.
    pub cutoff: f64,
    pub config: DeConfig,
    /// Every probed `ω` with its outcome.
    pub probes: Vec<(f64, bool)>,
}

/// Bisection for the largest converging `ω` between the rate-1/3 Shannon
/// and Holevo limits, with convergence meaning BER below [`CONVERGED_BER`].
pub fn threshold(cfg: &DeConfig, tol: f64) -> Result<ThresholdReport, DensityError> {
    threshold_with_cutoff(cfg, tol, CONVERGED_BER)
}

pub fn threshold_with_cutoff(cfg: &DeConfig, tol: f64, cutoff: f64) -> Result<ThresholdReport, DensityError> {
    if tol < 1e-3 || !tol.is_finite() {
        return Err(DensityError::OutOfRange(format!("tolerance {tol} is below 1e-3")));
    }
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(DensityError::OutOfRange(format!("cutoff {cutoff} is outside (0, 1/2)")));
    }
    let window = Window::new(&cfg.family, cfg.w)?;
    let mut lo = shannon_limit(1.0 / 3.0)?;
    let mut hi = holevo_limit(1.0 / 3.0)?;
    let mut probes = Vec::new();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let ok = converges(cfg, &window, mid, cutoff)?;
        probes.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdReport { family: cfg.family.family(), threshold: 0.5 * (lo + hi), tol, cutoff, config: cfg.clone(), probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_param_values() {
        assert_eq!(channel_param(0.0).unwrap().p, 0.5);
        assert!(channel_param(0.5).unwrap().p.abs() < 1e-15);
        assert!((channel_param(0.25).unwrap().p - (0.5 - 0.1875f64.sqrt())).abs() < 1e-15);
        assert!(channel_param(0.6).is_err());
    }

    #[test]
    fn single_use_error_is_omega() {
        for w in [0.05, 0.1, 0.25] {
            let p = channel_param(w).unwrap().p;
            assert!((1.0 - guess(&[1.0 - p, p]) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn limits_go_to_zero_near_rate_one() {
        assert!(shannon_limit(0.999).unwrap() < 1e-3);
        assert!(holevo_limit(0.999).unwrap() < 1e-2);
        assert!(shannon_limit(1.0).is_err());
    }

    #[test]
    fn equality_combination() {
        let d = combine_equality(&[[0.9, 0.1], [1.0, 0.0]]);
        assert!((d[0] - 0.9).abs() < 1e-12);
        let u = combine_equality(&[[0.9, 0.1], [0.5, 0.5]]);
        assert!((u[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_is_a_fixed_point() {
        let code = ConvCode::from_family("5/7").unwrap();
        let win = Window::new(&code, 3).unwrap();
        let pop = vec![[0.5, 0.5]; 100];
        let out = de_iteration(&pop, &win, 0.5, 1, 1);
        assert!(out.iter().all(|d| (d[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_width_window_is_channel_only() {
        let code = ConvCode::from_family("5/7").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = windowed_extrinsic(&code, 0.2, &[], 0, &mut rng).unwrap();
        // Without neighbours the root learns nothing about the systematic bit.
        assert!((d[0] - 1.0).abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn iteration_is_deterministic() {
        let code = ConvCode::from_family("5/7").unwrap();
        let win = Window::new(&code, 4).unwrap();
        let p = channel_param(0.2).unwrap().p;
        let pop = initial_population(200);
        let a = de_iteration(&pop, &win, p, 9, 1);
        let b = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| de_iteration(&pop, &win, p, 9, 1));
        assert_eq!(a, b);
    }
}

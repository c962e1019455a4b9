//! Probability distributions over `F_2^m`.
//!
//! Entry `z` of a distribution is indexed by the integer reading of `z` with
//! bit 1 as the most significant bit, so the product of a distribution on `a`
//! bits with one on `b` bits places the first factor in the high `a` bits.

use crate::gf2::{BitMatrix, BitVector, Gf2Error};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the total mass accepted by [`Distribution::new`].
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("expected 2^{m} = {expected} entries, found {found}")]
    InvalidLength { m: usize, expected: usize, found: usize },
    #[error("entry {index} is negative or not finite: {value}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution {
    m: usize,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct DistJson {
    m: usize,
    probs: Vec<f64>,
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = DistJson::deserialize(d)?;
        Distribution::new(j.m, j.probs).map_err(serde::de::Error::custom)
    }
}

/// Discretization grid of resolution `2^-bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub bits: u32,
}

impl GridParams {
    pub fn new(bits: u32) -> Result<Self, DistError> {
        if !(1..=64).contains(&bits) {
            return Err(DistError::DimensionMismatch(format!("grid resolution B = {bits} outside 1..=64")));
        }
        Ok(GridParams { bits })
    }
}

impl Distribution {
    pub fn new(m: usize, probs: Vec<f64>) -> Result<Self, DistError> {
        if m > 30 {
            return Err(DistError::DimensionMismatch(format!("m = {m} is too large")));
        }
        let expected = 1usize << m;
        if probs.len() != expected {
            return Err(DistError::InvalidLength { m, expected, found: probs.len() });
        }
        let mut sum = 0.0;
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < -NORM_TOL {
                return Err(DistError::InvalidEntry { index, value });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(DistError::NotNormalized(sum));
        }
        let probs = probs.into_iter().map(|p| p.max(0.0)).collect();
        Ok(Distribution { m, probs })
    }

    /// Wraps entries without validation. The caller guarantees normalization.
    pub(crate) fn from_raw(m: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), 1 << m);
        Distribution { m, probs }
    }

    pub fn uniform(m: usize) -> Self {
        let n = 1usize << m;
        Distribution { m, probs: vec![1.0 / n as f64; n] }
    }

    /// Point mass on `0^m`.
    pub fn point_zero(m: usize) -> Self {
        let mut probs = vec![0.0; 1 << m];
        probs[0] = 1.0;
        Distribution { m, probs }
    }

    /// The one-bit distribution `(1 - p, p)`.
    pub fn bit(p: f64) -> Result<Self, DistError> {
        Self::new(1, vec![1.0 - p, p])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, z: &BitVector) -> f64 {
        self.probs[z.to_index()]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `P_1 ⊗ P_2` on `a + b` bits, `self` in the high bits.
    pub fn product(&self, other: &Distribution) -> Distribution {
        let mut probs = Vec::with_capacity(self.probs.len() * other.probs.len());
        for &a in &self.probs {
            for &b in &other.probs {
                probs.push(a * b);
            }
        }
        Distribution { m: self.m + other.m, probs }
    }

    /// Product of several distributions in the given order.
    pub fn product_all(parts: &[&Distribution]) -> Distribution {
        let mut acc = Distribution { m: 0, probs: vec![1.0] };
        for p in parts {
            acc = acc.product(p);
        }
        acc
    }

    /// `Q(w) = D(M^{-1} w)`, the law of `w = M z` when `z ~ D`.
    pub fn relabel(&self, m: &BitMatrix) -> Result<Distribution, DistError> {
        if m.ncols() != self.m || m.nrows() != self.m {
            return Err(DistError::DimensionMismatch(format!(
                "{}x{} relabel of a distribution on {} bits",
                m.nrows(),
                m.ncols(),
                self.m
            )));
        }
        if !m.is_invertible() {
            return Err(Gf2Error::Singular.into());
        }
        let mut probs = vec![0.0; self.probs.len()];
        for (z, &p) in self.probs.iter().enumerate() {
            let w = m.mul_vec(&BitVector::from_index(z, self.m)).to_index();
            probs[w] += p;
        }
        Ok(Distribution { m: self.m, probs })
    }

    /// Marginal on the first `keep` bits.
    pub fn marginal_prefix(&self, keep: usize) -> Distribution {
        assert!(keep <= self.m);
        let drop = self.m - keep;
        let mut probs = vec![0.0; 1 << keep];
        for (z, &p) in self.probs.iter().enumerate() {
            probs[z >> drop] += p;
        }
        Distribution { m: keep, probs }
    }

    /// Splits a distribution on `(y, s)` with `y` the first `l` bits into the
    /// marginal of `s` and the conditionals of `y`. Outcomes of zero mass are
    /// omitted. Returns `(s, P_S(s), P_{Y|S=s})` in increasing `s`.
    pub fn conditional_split(&self, l: usize) -> Vec<(usize, f64, Distribution)> {
        assert!(l <= self.m);
        let sb = self.m - l;
        let ns = 1usize << sb;
        let ny = 1usize << l;
        let mut out = Vec::new();
        for s in 0..ns {
            let ps: f64 = (0..ny).map(|y| self.probs[(y << sb) | s]).sum();
            if ps > 0.0 {
                let probs = (0..ny).map(|y| self.probs[(y << sb) | s] / ps).collect();
                out.push((s, ps, Distribution { m: l, probs }));
            }
        }
        out
    }

    /// `2 log2 Σ_z sqrt(D(z))`.
    pub fn renyi_half(&self) -> f64 {
        2.0 * self.sqrt_sum().log2()
    }

    pub(crate) fn sqrt_sum(&self) -> f64 {
        self.probs.iter().map(|p| p.sqrt()).sum()
    }

    /// `2^{H_{1/2}(D) - m}`, the optimal success probability of guessing `x`
    /// from `spsc[D](x)` with a uniform prior.
    pub fn guess_success(&self) -> f64 {
        let s = self.sqrt_sum();
        s * s / (1u64 << self.m) as f64
    }

    /// Law of the conjugate-basis measurement outcome on `spsc[D](x)`:
    /// `q(x̂) = 2^{-m} (Σ_z sqrt(D(z)) (-1)^{(x ⊕ x̂)·z})^2`.
    pub fn conjugate_outcome_dist(&self, x: &BitVector) -> Result<Distribution, DistError> {
        if x.len() != self.m {
            return Err(DistError::DimensionMismatch("outcome length".into()));
        }
        let mut w: Vec<f64> = self.probs.iter().map(|p| p.sqrt()).collect();
        walsh_hadamard(&mut w);
        let xi = x.to_index();
        let scale = 1.0 / w.len() as f64;
        let probs = (0..w.len()).map(|xh| w[xi ^ xh] * w[xi ^ xh] * scale).collect();
        Ok(Distribution { m: self.m, probs })
    }

    pub fn l1_distance(&self, other: &Distribution) -> f64 {
        assert_eq!(self.m, other.m);
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Rounds onto the grid `2^-B Z` so that the result still sums to one.
    ///
    /// Entries are floored and the missing units go to the entries with the
    /// largest remainders, so each entry moves by less than one grid unit and
    /// the L1 error is below `2^{m - B}`.
    pub fn round_to_grid(&self, grid: GridParams) -> Distribution {
        let total = self.total();
        let scale = (grid.bits as f64).exp2();
        let full: u128 = 1u128 << grid.bits;
        let mut units: Vec<u128> = Vec::with_capacity(self.probs.len());
        let mut rem: Vec<(f64, usize)> = Vec::with_capacity(self.probs.len());
        for (i, &p) in self.probs.iter().enumerate() {
            let v = (p / total) * scale;
            let f = v.floor();
            units.push(f as u128);
            rem.push((v - f, i));
        }
        let assigned: u128 = units.iter().sum();
        if assigned < full {
            let mut missing = full - assigned;
            rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut k = 0;
            while missing > 0 {
                units[rem[k % rem.len()].1] += 1;
                missing -= 1;
                k += 1;
            }
        } else if assigned > full {
            let mut excess = assigned - full;
            rem.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut k = 0;
            while excess > 0 {
                let i = rem[k % rem.len()].1;
                if units[i] > 0 {
                    units[i] -= 1;
                    excess -= 1;
                }
                k += 1;
            }
        }
        let probs = units.into_iter().map(|u| u as f64 / scale).collect();
        Distribution { m: self.m, probs }
    }

    /// Whether every entry is an integer multiple of `2^-B`.
    pub fn on_grid(&self, grid: GridParams) -> bool {
        let scale = (grid.bits as f64).exp2();
        self.probs.iter().all(|p| {
            let v = p * scale;
            v == v.round()
        })
    }
}

/// In-place unnormalized Walsh-Hadamard transform: `w(u) = Σ_z v(z) (-1)^{u·z}`.
pub(crate) fn walsh_hadamard(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

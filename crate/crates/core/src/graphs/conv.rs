//! Recursive systematic convolutional codes and their trellis sections.

use super::factor::{equality_relation, FactorGraph, FactorKind, RootMode};
use super::GraphError;
use crate::gf2::{BitMatrix, BitVector};
use crate::mpg::Mpg;
use serde::Serialize;

/// A rate-1/2 recursive systematic code `(1, p(D)/q(D))`.
///
/// Octal numerals are read with the least significant bit as the `D^0`
/// coefficient, so `13` is `1 + D + D^3`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvCode {
    pub p_octal: String,
    pub q_octal: String,
    /// Feedforward coefficients `p_0..p_m`.
    pub p: Vec<bool>,
    /// Feedback coefficients `q_0..q_m`.
    pub q: Vec<bool>,
    pub m: usize,
}

fn parse_octal(s: &str) -> Result<u64, GraphError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(GraphError::InvalidPolynomial("empty octal numeral".into()));
    }
    u64::from_str_radix(s, 8).map_err(|_| GraphError::InvalidPolynomial(format!("'{s}' is not an octal numeral")))
}

impl ConvCode {
    pub fn from_octal(p: &str, q: &str) -> Result<Self, GraphError> {
        let (pv, qv) = (parse_octal(p)?, parse_octal(q)?);
        if qv & 1 == 0 {
            return Err(GraphError::InvalidPolynomial(format!("feedback polynomial {q} has no constant term")));
        }
        if pv == 0 {
            return Err(GraphError::InvalidPolynomial("feedforward polynomial is zero".into()));
        }
        let deg = |v: u64| 63 - v.leading_zeros() as usize;
        let m = deg(pv).max(deg(qv));
        if m == 0 || m > 8 {
            return Err(GraphError::InvalidPolynomial(format!("memory {m} is outside 1..=8")));
        }
        let coeffs = |v: u64| (0..=m).map(|i| (v >> i) & 1 == 1).collect();
        Ok(ConvCode { p_octal: p.trim().into(), q_octal: q.trim().into(), p: coeffs(pv), q: coeffs(qv), m })
    }

    /// Parses `"p/q"`, e.g. `"5/7"`.
    pub fn from_family(s: &str) -> Result<Self, GraphError> {
        let (p, q) = s
            .split_once('/')
            .ok_or_else(|| GraphError::InvalidPolynomial(format!("'{s}' is not of the form p/q")))?;
        Self::from_octal(p, q)
    }

    pub fn family(&self) -> String {
        format!("{}/{}", self.p_octal, self.q_octal)
    }

    /// One encoder step in controller canonical form. The state holds
    /// `(w_{t-1}, .., w_{t-m})` with `w_{t-1}` in the most significant bit.
    /// Returns `(parity, next_state)`.
    pub fn step(&self, state: usize, x: bool) -> (bool, usize) {
        let m = self.m;
        let w_prev = |i: usize| (state >> (m - i)) & 1 == 1;
        let mut w = x;
        for i in 1..=m {
            w ^= self.q[i] & w_prev(i);
        }
        let mut parity = self.p[0] & w;
        for i in 1..=m {
            parity ^= self.p[i] & w_prev(i);
        }
        let next = ((w as usize) << (m - 1)) | (state >> 1);
        (parity, next)
    }

    /// Rows `(state, x, parity, next_state)` for all `2^{m+1}` inputs.
    pub fn transition_table(&self) -> Vec<(usize, bool, bool, usize)> {
        let mut t = Vec::with_capacity(1 << (self.m + 1));
        for s in 0..1usize << self.m {
            for x in [false, true] {
                let (p, n) = self.step(s, x);
                t.push((s, x, p, n));
            }
        }
        t
    }

    /// Encodes a systematic sequence from the zero state.
    pub fn encode(&self, xs: &[bool]) -> Vec<bool> {
        let mut s = 0;
        xs.iter()
            .map(|&x| {
                let (p, n) = self.step(s, x);
                s = n;
                p
            })
            .collect()
    }

    /// Section relation over `[s_prev (m) | x^s | x^p | s_next (m)]`.
    pub fn section_relation(&self) -> BitMatrix {
        let m = self.m;
        let width = 2 * m + 2;
        let row = |s: usize, x: bool| {
            let (p, n) = self.step(s, x);
            let mut v = BitVector::from_index(s, m).concat(&BitVector::from_bits(&[x as u8, p as u8]));
            v = v.concat(&BitVector::from_index(n, m));
            debug_assert_eq!(v.len(), width);
            v
        };
        let mut rows: Vec<BitVector> = (0..m).map(|i| row(1 << (m - 1 - i), false)).collect();
        rows.push(row(0, true));
        BitMatrix::from_rows(rows, width).expect("width")
    }
}

/// A chain of `sections` trellis sections with external boundary states.
#[derive(Clone, Debug)]
pub struct ConvTrellis {
    pub graph: FactorGraph,
    /// Edges `s_0 .. s_T`, each `m` bits wide.
    pub states: Vec<usize>,
    pub systematic: Vec<usize>,
    pub parity: Vec<usize>,
    pub sections: Vec<usize>,
}

pub fn conv_trellis(code: &ConvCode, sections: usize) -> ConvTrellis {
    let mut g = FactorGraph::new();
    let m = code.m;
    let rel = code.section_relation();
    let states: Vec<usize> = (0..=sections).map(|t| g.add_edge(format!("s{t}"), m)).collect();
    let mut systematic = Vec::with_capacity(sections);
    let mut parity = Vec::with_capacity(sections);
    let mut facs = Vec::with_capacity(sections);
    for t in 0..sections {
        let xs = g.add_edge(format!("xs{t}"), 1);
        let xp = g.add_edge(format!("xp{t}"), 1);
        facs.push(g.add_factor(vec![states[t], xs, xp, states[t + 1]], rel.clone(), FactorKind::Generic));
        systematic.push(xs);
        parity.push(xp);
    }
    ConvTrellis { graph: g, states, systematic, parity, sections: facs }
}

/// What each leaf of a decoding window observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WindowLeaf {
    /// Boundary state, fed the point mass on the zero state.
    Boundary,
    /// Channel output of a parity bit.
    Parity,
    /// Channel output of a neighbouring systematic bit.
    Systematic,
    /// Extrinsic message of a neighbouring systematic bit from the other code.
    Extrinsic,
}

#[derive(Clone, Debug)]
pub struct WindowGraph {
    pub mpg: Mpg,
    pub roles: Vec<WindowLeaf>,
}

/// MPG of `2w+1` sections rooted at the systematic bit of the centre
/// section. The root's own channel output is left out, so the root message
/// is extrinsic. Each neighbouring systematic bit combines its channel
/// output with an extrinsic leaf at an equality node.
pub fn turbo_window(code: &ConvCode, w: usize) -> Result<WindowGraph, GraphError> {
    let t = 2 * w + 1;
    let mut ct = conv_trellis(code, t);
    let centre = w;
    let mut leaves = vec![ct.states[0]];
    let mut roles = vec![WindowLeaf::Boundary];
    for s in 0..t {
        if s != centre {
            let ch = ct.graph.add_edge(format!("ch{s}"), 1);
            let ex = ct.graph.add_edge(format!("ex{s}"), 1);
            ct.graph.add_factor(vec![ct.systematic[s], ch, ex], equality_relation(3), FactorKind::Equality);
            leaves.extend([ch, ex]);
            roles.extend([WindowLeaf::Systematic, WindowLeaf::Extrinsic]);
        }
        leaves.push(ct.parity[s]);
        roles.push(WindowLeaf::Parity);
    }
    leaves.push(ct.states[t]);
    roles.push(WindowLeaf::Boundary);
    let mpg = ct.graph.to_mpg(RootMode::Direct(ct.systematic[centre]), &leaves)?;
    Ok(WindowGraph { mpg, roles })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Division of `x(D) p(D)` by `q(D)` as a power series.
    fn divide(code: &ConvCode, xs: &[bool]) -> Vec<bool> {
        let n = xs.len();
        let mut num = vec![false; n];
        for (t, &x) in xs.iter().enumerate() {
            if x {
                for (i, &c) in code.p.iter().enumerate() {
                    if c && t + i < n {
                        num[t + i] ^= true;
                    }
                }
            }
        }
        let mut out = vec![false; n];
        for t in 0..n {
            let mut v = num[t];
            for i in 1..=code.m {
                if t >= i {
                    v ^= code.q[i] & out[t - i];
                }
            }
            out[t] = v;
        }
        out
    }

    #[test]
    fn octal_reading() {
        let c = ConvCode::from_octal("13", "15").unwrap();
        assert_eq!(c.m, 3);
        assert_eq!(c.p, vec![true, true, false, true]);
        assert_eq!(c.q, vec![true, false, true, true]);
        assert!(ConvCode::from_octal("13", "14").is_err());
        assert!(ConvCode::from_octal("19", "15").is_err());
    }

    #[test]
    fn encoder_matches_series_division() {
        for fam in ["5/7", "13/15", "23/33"] {
            let c = ConvCode::from_family(fam).unwrap();
            let mut seed = 0x9e3779b97f4a7c15u64;
            for _ in 0..20 {
                let xs: Vec<bool> = (0..24)
                    .map(|_| {
                        seed ^= seed << 13;
                        seed ^= seed >> 7;
                        seed ^= seed << 17;
                        seed & 1 == 1
                    })
                    .collect();
                assert_eq!(c.encode(&xs), divide(&c, &xs), "{fam}");
            }
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        let c = ConvCode::from_family("13/15").unwrap();
        assert_eq!(c.step(0, false), (false, 0));
        assert_eq!(c.transition_table().len(), 16);
    }

    #[test]
    fn section_relation_spans_the_transitions() {
        let c = ConvCode::from_family("13/15").unwrap();
        let rel = c.section_relation();
        assert_eq!(rel.rank(), c.m + 1);
        let mut red = crate::gf2::Reducer::new(rel.ncols());
        for r in rel.rows() {
            red.insert(r.clone());
        }
        for (s, x, p, n) in c.transition_table() {
            let v = BitVector::from_index(s, c.m)
                .concat(&BitVector::from_bits(&[x as u8, p as u8]))
                .concat(&BitVector::from_index(n, c.m));
            assert!(red.reduce(v).is_zero());
        }
    }
}

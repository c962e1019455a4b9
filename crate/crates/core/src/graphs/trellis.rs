//! Trellis sections from a generator matrix with the LR property.
//!
//! Section `j` carries one free bit per row whose span covers `j`. The state
//! edge between sections `j` and `j+1` holds the bits of the rows covering
//! both positions, in row order. Orienting a section gives one of three
//! configurations: input from the left state (A), from the right state (B)
//! or from the code bit (C). Each combines with one of four cases depending
//! on whether a row ends (E) or starts (S) at the section.

use super::factor::{FactorGraph, FactorKind, RootMode};
use super::GraphError;
use crate::gf2::{has_lr_property, BitMatrix, BitVector};
use crate::mpg::Mpg;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct SectionInfo {
    /// 1-based code position.
    pub pos: usize,
    pub left_edge: Option<usize>,
    pub right_edge: Option<usize>,
    pub x_edge: usize,
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
    /// Rows passing through with a zero at this position.
    pub alpha: Vec<usize>,
    /// Rows passing through with a one at this position.
    pub beta: Vec<usize>,
    /// Row ending here.
    pub end: Option<usize>,
    /// Row starting here.
    pub start: Option<usize>,
    /// Rows supported on this position alone.
    pub single: Vec<usize>,
}

/// Labels of the bits a section touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lab {
    Left(usize),
    Right(usize),
    X,
}

impl SectionInfo {
    fn labels(&self, e: usize) -> Vec<Lab> {
        if Some(e) == self.left_edge {
            self.left_rows.iter().map(|&r| Lab::Left(r)).collect()
        } else if Some(e) == self.right_edge {
            self.right_rows.iter().map(|&r| Lab::Right(r)).collect()
        } else {
            debug_assert_eq!(e, self.x_edge);
            vec![Lab::X]
        }
    }

    fn case(&self) -> &'static str {
        match (self.end.is_some(), self.start.is_some()) {
            (false, false) => "i",
            (false, true) => "ii",
            (true, false) => "iii",
            (true, true) => "iv",
        }
    }
}

/// A generator in a local bit order: input labels, then output labels.
struct LocalForm {
    inputs: Vec<Lab>,
    outputs: Vec<Lab>,
    g: BitMatrix,
}

/// Places `b` into `m` at block position `(r, c)`.
fn put(m: &mut BitMatrix, r: usize, c: usize, b: &BitMatrix) {
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b.get(i, j) {
                m.set(r + i, c + j, true);
            }
        }
    }
}

fn ones_col(n: usize) -> BitMatrix {
    BitMatrix::from_rows(vec![BitVector::ones(1); n], 1).expect("width")
}

/// Configuration A (or B, with sides swapped): the input state passes the
/// rows `alpha`, `beta` and `extra_in`; `random` is a row that starts on the
/// output side.
fn a_form(
    side_in: fn(usize) -> Lab,
    side_out: fn(usize) -> Lab,
    alpha: &[usize],
    beta: &[usize],
    extra_in: Option<usize>,
    random: Option<usize>,
) -> LocalForm {
    let (a, b) = (alpha.len(), beta.len());
    let e = extra_in.is_some() as usize;
    let s = random.is_some() as usize;
    // Columns: out-alpha | out-beta | out-random | x.
    let ncols = a + b + s + 1;
    let mut g = BitMatrix::zeros(a + b + e + s, ncols);
    put(&mut g, 0, 0, &BitMatrix::identity(a));
    put(&mut g, a, a, &BitMatrix::identity(b));
    put(&mut g, a, a + b + s, &ones_col(b));
    if e == 1 {
        put(&mut g, a + b, a + b + s, &ones_col(1));
    }
    if s == 1 {
        put(&mut g, a + b + e, a + b, &BitMatrix::identity(1));
        put(&mut g, a + b + e, a + b + 1, &ones_col(1));
    }
    let mut inputs: Vec<Lab> = alpha.iter().chain(beta).map(|&r| side_in(r)).collect();
    inputs.extend(extra_in.map(side_in));
    let mut outputs: Vec<Lab> = alpha.iter().chain(beta).map(|&r| side_out(r)).collect();
    outputs.extend(random.map(side_out));
    outputs.push(Lab::X);
    LocalForm { inputs, outputs, g }
}

/// Configuration C: the code bit is the input and both states are outputs.
fn c_form(info: &SectionInfo) -> Option<LocalForm> {
    let (first, rest) = info.beta.split_first()?;
    let a = info.alpha.len();
    let b1 = rest.len();
    let e = info.end.is_some() as usize;
    let s = info.start.is_some() as usize;
    let half_l = a + 1 + b1 + e;
    let ncols = half_l + a + 1 + b1 + s;
    let nrows = 1 + b1 + a + e + s;
    let mut g = BitMatrix::zeros(nrows, ncols);
    let one = ones_col(1);
    // Row z: the first beta row on both sides.
    put(&mut g, 0, a, &one);
    put(&mut g, 0, half_l + a, &one);
    // Remaining beta rows.
    put(&mut g, 1, a, &ones_col(b1));
    put(&mut g, 1, a + 1, &BitMatrix::identity(b1));
    put(&mut g, 1, half_l + a, &ones_col(b1));
    put(&mut g, 1, half_l + a + 1, &BitMatrix::identity(b1));
    // Alpha rows.
    put(&mut g, 1 + b1, 0, &BitMatrix::identity(a));
    put(&mut g, 1 + b1, half_l, &BitMatrix::identity(a));
    let mut r = 1 + b1 + a;
    if e == 1 {
        put(&mut g, r, a, &one);
        put(&mut g, r, a + 1 + b1, &one);
        put(&mut g, r, half_l + a, &one);
        r += 1;
    }
    if s == 1 {
        put(&mut g, r, a, &one);
        put(&mut g, r, half_l + a, &one);
        put(&mut g, r, ncols - 1, &one);
    }
    let mut outputs: Vec<Lab> = info.alpha.iter().map(|&r| Lab::Left(r)).collect();
    outputs.push(Lab::Left(*first));
    outputs.extend(rest.iter().map(|&r| Lab::Left(r)));
    outputs.extend(info.end.map(Lab::Left));
    outputs.extend(info.alpha.iter().map(|&r| Lab::Right(r)));
    outputs.push(Lab::Right(*first));
    outputs.extend(rest.iter().map(|&r| Lab::Right(r)));
    outputs.extend(info.start.map(Lab::Right));
    Some(LocalForm { inputs: vec![Lab::X], outputs, g })
}

/// Rewrites a local form in the bit order of the actual input and outputs.
fn reorder(form: &LocalForm, inputs: &[Lab], outputs: &[Lab]) -> Option<BitMatrix> {
    let l = form.inputs.len();
    if inputs.len() != l || outputs.len() != form.outputs.len() {
        return None;
    }
    let mut rows = Vec::with_capacity(form.g.nrows());
    for lab in inputs {
        rows.push(form.inputs.iter().position(|x| x == lab)?);
    }
    rows.extend(l..form.g.nrows());
    let mut cols = Vec::with_capacity(outputs.len());
    for lab in outputs {
        cols.push(form.outputs.iter().position(|x| x == lab)?);
    }
    Some(form.g.select_rows(&rows).select_columns(&cols))
}

/// The standard generator of a section for the given orientation, or `None`
/// where no standard form applies.
pub(crate) fn case_generator(
    _g: &FactorGraph,
    info: &SectionInfo,
    in_edge: usize,
    outs: &[usize],
) -> Option<(BitMatrix, String)> {
    if !info.single.is_empty() {
        return None;
    }
    let (form, config) = if Some(in_edge) == info.left_edge {
        (a_form(Lab::Left, Lab::Right, &info.alpha, &info.beta, info.end, info.start), "A")
    } else if Some(in_edge) == info.right_edge {
        (a_form(Lab::Right, Lab::Left, &info.alpha, &info.beta, info.start, info.end), "B")
    } else {
        (c_form(info)?, "C")
    };
    let inputs = info.labels(in_edge);
    let outputs: Vec<Lab> = outs.iter().flat_map(|&o| info.labels(o)).collect();
    let g = reorder(&form, &inputs, &outputs)?;
    Some((g, format!("{config}{}", info.case())))
}

/// The sectioned factor graph of an LR generator matrix.
#[derive(Clone, Debug)]
pub struct TrellisGraph {
    pub graph: FactorGraph,
    /// External edge of each code bit.
    pub bits: Vec<usize>,
    /// Factor of each section.
    pub sections: Vec<usize>,
    pub spans: Vec<(usize, usize)>,
}

fn check_lr(g: &BitMatrix) -> Result<Vec<(usize, usize)>, GraphError> {
    if g.nrows() == 0 || g.rank() != g.nrows() || !has_lr_property(g) {
        return Err(GraphError::NotLR);
    }
    Ok(g.rows().iter().map(|r| r.span().expect("nonzero")).collect())
}

/// Builds one factor per code position from a generator with the LR property.
pub fn trellis_graph(g: &BitMatrix) -> Result<TrellisGraph, GraphError> {
    let spans = check_lr(g)?;
    let n = g.ncols();
    // A row supported on one position makes that bit independent of the
    // others; clearing its column elsewhere keeps every span and the code.
    let mut rows = g.rows().to_vec();
    for r in 0..rows.len() {
        if spans[r].0 == spans[r].1 {
            let single = rows[r].clone();
            for (t, row) in rows.iter_mut().enumerate() {
                if t != r && row.get(spans[r].0 - 1) {
                    row.xor_assign(&single);
                }
            }
        }
    }
    let g = &BitMatrix::from_rows(rows, n)?;
    let mut fg = FactorGraph::new();
    let bits: Vec<usize> = (0..n).map(|j| fg.add_edge(format!("x{}", j + 1), 1)).collect();
    let covers = |r: usize, j: usize| spans[r].0 <= j && j <= spans[r].1;
    let mut state_edges: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for j in 1..n {
        let rows: Vec<usize> = (0..g.nrows()).filter(|&r| covers(r, j) && covers(r, j + 1)).collect();
        let e = (!rows.is_empty()).then(|| fg.add_edge(format!("s{j}"), rows.len()));
        state_edges.push((e, rows));
    }
    let mut sections = Vec::with_capacity(n);
    for j in 1..=n {
        let (left_edge, left_rows) = if j > 1 { state_edges[j - 2].clone() } else { (None, Vec::new()) };
        let (right_edge, right_rows) = if j < n { state_edges[j - 1].clone() } else { (None, Vec::new()) };
        let here: Vec<usize> = (0..g.nrows()).filter(|&r| covers(r, j)).collect();
        let mut info = SectionInfo {
            pos: j,
            left_edge,
            right_edge,
            x_edge: bits[j - 1],
            left_rows: left_rows.clone(),
            right_rows: right_rows.clone(),
            alpha: Vec::new(),
            beta: Vec::new(),
            end: None,
            start: None,
            single: Vec::new(),
        };
        let width = left_rows.len() + right_rows.len() + 1;
        let mut basis = Vec::with_capacity(here.len());
        for &r in &here {
            let in_l = left_rows.contains(&r);
            let in_r = right_rows.contains(&r);
            let bit = g.get(r, j - 1);
            match (in_l, in_r) {
                (true, true) if bit => info.beta.push(r),
                (true, true) => info.alpha.push(r),
                (true, false) => info.end = Some(r),
                (false, true) => info.start = Some(r),
                (false, false) => info.single.push(r),
            }
            let mut v = BitVector::zeros(width);
            if let Some(p) = left_rows.iter().position(|&x| x == r) {
                v.set(p, true);
            }
            if let Some(p) = right_rows.iter().position(|&x| x == r) {
                v.set(left_rows.len() + p, true);
            }
            v.set(width - 1, bit);
            basis.push(v);
        }
        let mut edges = Vec::new();
        edges.extend(info.left_edge);
        edges.extend(info.right_edge);
        if !info.single.is_empty() {
            // The bit is free: a pass-through on the state and a lone bit.
            let free = fg.add_factor(vec![bits[j - 1]], BitMatrix::identity(1), FactorKind::Generic);
            let pass: Vec<BitVector> =
                basis.iter().filter(|v| v.slice(0, width - 1).weight() > 0).map(|v| v.slice(0, width - 1)).collect();
            sections.push(if edges.is_empty() {
                free
            } else {
                fg.add_factor(edges, BitMatrix::from_rows(pass, width - 1)?, FactorKind::Generic)
            });
            continue;
        }
        edges.push(bits[j - 1]);
        let rel = BitMatrix::from_rows(basis, width)?;
        sections.push(fg.add_factor(edges, rel, FactorKind::Section(info)));
    }
    Ok(TrellisGraph { graph: fg, bits, sections, spans })
}

fn validate_groups(groups: &[Vec<usize>], n: usize) -> Result<(), GraphError> {
    let mut used = vec![false; n + 1];
    for grp in groups {
        if grp.is_empty() || grp.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(GraphError::InvalidInput(format!("group {grp:?} is not a run of consecutive positions")));
        }
        for &p in grp {
            if p == 0 || p > n || used[p] {
                return Err(GraphError::InvalidInput(format!("position {p} is out of range or in two groups")));
            }
            used[p] = true;
        }
    }
    Ok(())
}

/// MPG for bit `i` (1-based) of the code generated by the LR matrix `G`.
///
/// `groups` lists runs of consecutive positions whose sections are merged
/// into one factor with a multi-bit label.
pub fn trellis_mpg(g: &BitMatrix, i: usize, groups: &[Vec<usize>]) -> Result<Mpg, GraphError> {
    let mut t = trellis_graph(g)?;
    let n = g.ncols();
    if i == 0 || i > n {
        return Err(GraphError::InvalidInput(format!("bit {i} out of range")));
    }
    if g.column(i - 1).is_zero() {
        return Err(GraphError::BitIdenticallyZero(i));
    }
    validate_groups(groups, n)?;
    for grp in groups {
        let mut acc = t.sections[grp[0] - 1];
        for &p in &grp[1..] {
            acc = t.graph.merge(acc, t.sections[p - 1], FactorKind::Generic);
        }
    }
    t.graph.to_mpg(RootMode::Copy(t.bits[i - 1]), &t.bits)
}

/// Number of rows covering both `j` and `j+1`, for `j = 1..n-1`.
pub fn beta_profile(spans: &[(usize, usize)], n: usize) -> Vec<usize> {
    (1..n).map(|j| spans.iter().filter(|&&(l, r)| l <= j && r > j).count()).collect()
}

/// Log state space after merging the given groups: boundaries inside a group
/// disappear.
pub fn merged_beta_profile(spans: &[(usize, usize)], n: usize, groups: &[Vec<usize>]) -> Vec<usize> {
    let inner: Vec<usize> = groups.iter().flat_map(|g| g[..g.len() - 1].iter().copied()).collect();
    beta_profile(spans, n).into_iter().enumerate().filter(|(j, _)| !inner.contains(&(j + 1))).map(|(_, b)| b).collect()
}

/// `k - dim(past code) - dim(future code)` at the boundary after position `j`.
pub fn state_dim_oracle(g: &BitMatrix, j: usize) -> usize {
    let n = g.ncols();
    let j = j.min(n);
    let prefix: Vec<usize> = (0..j).collect();
    let suffix: Vec<usize> = (j..n).collect();
    let k = g.rank();
    (g.select_columns(&prefix).rank() + g.select_columns(&suffix).rank()).saturating_sub(k)
}

/// Layered trellis: `layers[j]` states at depth `j` and the labelled edges of
/// each section.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Trellis {
    pub layers: Vec<usize>,
    /// Per section, the edges `(from, to, label)`.
    pub edges: Vec<Vec<(usize, usize, u8)>>,
}

impl Trellis {
    /// `S(T)`, the largest layer.
    pub fn max_states(&self) -> usize {
        self.layers.iter().copied().max().unwrap_or(1)
    }

    /// Labels of all source-to-sink paths.
    pub fn paths(&self) -> Vec<BitVector> {
        let mut cur: Vec<(usize, Vec<u8>)> = vec![(0, Vec::new())];
        for sec in &self.edges {
            let mut next = Vec::new();
            for (s, lab) in &cur {
                for &(a, b, x) in sec {
                    if a == *s {
                        let mut l = lab.clone();
                        l.push(x);
                        next.push((b, l));
                    }
                }
            }
            cur = next;
        }
        cur.into_iter().map(|(_, l)| BitVector::from_bits(&l)).collect()
    }
}

/// Trellis of an LR generator matrix, with states numbered by the bits of
/// the rows crossing each boundary.
pub fn trellis_from_msgm(g: &BitMatrix) -> Result<Trellis, GraphError> {
    let spans = check_lr(g)?;
    let n = g.ncols();
    let crossing = |j: usize| -> Vec<usize> {
        if j == 0 || j == n {
            return Vec::new();
        }
        (0..g.nrows()).filter(|&r| spans[r].0 <= j && spans[r].1 > j).collect()
    };
    let mut layers = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let b = crossing(j).len();
        if b > 20 {
            return Err(GraphError::InvalidInput(format!("state space 2^{b} at depth {j} is too large")));
        }
        layers.push(1usize << b);
    }
    let mut edges = Vec::with_capacity(n);
    for j in 1..=n {
        let here: Vec<usize> = (0..g.nrows()).filter(|&r| spans[r].0 <= j && j <= spans[r].1).collect();
        if here.len() > 22 {
            return Err(GraphError::InvalidInput(format!("section {j} has too many active rows")));
        }
        let (left, right) = (crossing(j - 1), crossing(j));
        let mut sec = Vec::new();
        for u in 0..1usize << here.len() {
            let bit = |r: usize| here.iter().position(|&x| x == r).map(|p| (u >> p) & 1 == 1).unwrap_or(false);
            let index = |rows: &[usize]| rows.iter().fold(0usize, |acc, &r| (acc << 1) | bit(r) as usize);
            let x = here.iter().filter(|&&r| bit(r) && g.get(r, j - 1)).count() % 2;
            let e = (index(&left), index(&right), x as u8);
            if !sec.contains(&e) {
                sec.push(e);
            }
        }
        sec.sort_unstable();
        edges.push(sec);
    }
    Ok(Trellis { layers, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2::{enumerate_codewords, msgm};

    fn hamming_msgm() -> BitMatrix {
        BitMatrix::from_strs(&["1110000", "0110110", "0011100", "0001111"])
    }

    #[test]
    fn hamming_beta_profile() {
        let g = hamming_msgm();
        let spans: Vec<_> = g.rows().iter().map(|r| r.span().unwrap()).collect();
        assert_eq!(beta_profile(&spans, 7), vec![1, 2, 2, 3, 2, 1]);
        assert_eq!(*merged_beta_profile(&spans, 7, &[vec![4, 5]]).iter().max().unwrap(), 2);
        for j in 0..=7 {
            let b = if j == 0 || j == 7 { 0 } else { beta_profile(&spans, 7)[j - 1] };
            assert_eq!(state_dim_oracle(&g, j), b);
        }
    }

    #[test]
    fn trellis_paths_are_codewords() {
        let g = hamming_msgm();
        let t = trellis_from_msgm(&g).unwrap();
        assert_eq!(t.max_states(), 8);
        let mut paths: Vec<_> = t.paths().into_iter().map(|p| p.to_string()).collect();
        let mut words: Vec<_> = enumerate_codewords(&g).unwrap().into_iter().map(|p| p.to_string()).collect();
        paths.sort();
        words.sort();
        assert_eq!(paths, words);
    }

    #[test]
    fn non_lr_matrix_is_rejected() {
        let g = BitMatrix::from_strs(&["110", "101"]);
        assert_eq!(trellis_graph(&g).unwrap_err(), GraphError::NotLR);
        let (m, _) = msgm(&g).unwrap();
        assert!(trellis_graph(&m).is_ok());
    }

    #[test]
    fn a_forms_have_the_printed_shapes() {
        let lf = a_form(Lab::Left, Lab::Right, &[0, 1], &[2, 3], Some(4), Some(5));
        let want = BitMatrix::from_strs(&[
            "100000", "010000", "001001", "000101", "000001", "000011",
        ]);
        assert_eq!(lf.g, want);
    }

    #[test]
    fn c_form_iv_shape() {
        let info = SectionInfo {
            pos: 2,
            left_edge: Some(0),
            right_edge: Some(1),
            x_edge: 2,
            left_rows: vec![0, 1, 2],
            right_rows: vec![0, 1, 3],
            alpha: vec![],
            beta: vec![0, 1],
            end: Some(2),
            start: Some(3),
            single: vec![],
        };
        let f = c_form(&info).unwrap();
        let want = BitMatrix::from_strs(&["100100", "110110", "101100", "100101"]);
        assert_eq!(f.g, want);
    }
}

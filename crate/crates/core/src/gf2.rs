//! Dense linear algebra over GF(2).
//!
//! Bit vectors pack bits into `u64` words. Bit positions are 0-based in the
//! low-level accessors and 1-based wherever a function talks about code
//! positions (spans, generator adaptation). When a bit vector is read as an
//! integer index, bit 1 is the most significant bit.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular")]
    Singular,
    #[error("column {0} of the generator is zero")]
    ZeroColumn(usize),
    #[error("matrix does not have full row rank")]
    RankDeficient,
    #[error("too large: {0}")]
    TooLarge(String),
    #[error("invalid matrix data: {0}")]
    InvalidData(String),
}

const W: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector { len, words: vec![0; len.div_ceil(W)] }
    }

    /// Unit vector with a one at 0-based position `i`.
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.set(i, true);
        }
        v
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b & 1 == 1 {
                v.set(i, true);
            }
        }
        v
    }

    /// Builds the vector whose integer reading (bit 1 most significant) is `value`.
    pub fn from_index(value: usize, len: usize) -> Self {
        debug_assert!(len <= 63);
        let mut v = Self::zeros(len);
        for i in 0..len {
            if (value >> (len - 1 - i)) & 1 == 1 {
                v.set(i, true);
            }
        }
        v
    }

    /// Integer reading with bit 1 as the most significant bit.
    pub fn to_index(&self) -> usize {
        debug_assert!(self.len <= 63);
        let mut x = 0usize;
        for i in 0..self.len {
            x = (x << 1) | self.get(i) as usize;
        }
        x
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / W] >> (i % W)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: bool) {
        debug_assert!(i < self.len);
        let m = 1u64 << (i % W);
        if b {
            self.words[i / W] |= m;
        } else {
            self.words[i / W] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i / W] ^= 1u64 << (i % W);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn dot(&self, other: &BitVector) -> bool {
        debug_assert_eq!(self.len, other.len);
        let mut acc = 0u32;
        for (a, b) in self.words.iter().zip(&other.words) {
            acc ^= (a & b).count_ones() & 1;
        }
        acc == 1
    }

    pub fn xor_assign(&mut self, other: &BitVector) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        let mut v = self.clone();
        v.xor_assign(other);
        v
    }

    pub fn concat(&self, other: &BitVector) -> BitVector {
        let mut v = BitVector::zeros(self.len + other.len);
        for i in self.iter_ones() {
            v.set(i, true);
        }
        for i in other.iter_ones() {
            v.set(self.len + i, true);
        }
        v
    }

    /// Bits `start..end` (0-based, half open).
    pub fn slice(&self, start: usize, end: usize) -> BitVector {
        let mut v = BitVector::zeros(end - start);
        for i in start..end {
            if self.get(i) {
                v.set(i - start, true);
            }
        }
        v
    }

    pub fn select(&self, positions: &[usize]) -> BitVector {
        let mut v = BitVector::zeros(positions.len());
        for (j, &p) in positions.iter().enumerate() {
            if self.get(p) {
                v.set(j, true);
            }
        }
        v
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    /// First and last 1-based positions holding a one.
    pub fn span(&self) -> Option<(usize, usize)> {
        let first = self.iter_ones().next()?;
        let last = (0..self.len).rev().find(|&i| self.get(i))?;
        Some((first + 1, last + 1))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            write!(f, "{}", self.get(i) as u8)?;
        }
        Ok(())
    }
}

/// Row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVector>,
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, r) in self.rows.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "]")
    }
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix { cols, rows: vec![BitVector::zeros(cols); rows] }
    }

    pub fn identity(n: usize) -> Self {
        BitMatrix { cols: n, rows: (0..n).map(|i| BitVector::unit(n, i)).collect() }
    }

    /// Builds a matrix from rows; every row must have length `cols`.
    pub fn from_rows(rows: Vec<BitVector>, cols: usize) -> Result<Self, Gf2Error> {
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Gf2Error::DimensionMismatch(format!(
                "row of length {} in a matrix with {cols} columns",
                r.len()
            )));
        }
        Ok(BitMatrix { cols, rows })
    }

    /// Builds a matrix from 0/1 rows. Panics on ragged input; meant for literals.
    pub fn from_u8(data: &[&[u8]]) -> Self {
        let cols = data.first().map_or(0, |r| r.len());
        let rows = data.iter().map(|r| {
            assert_eq!(r.len(), cols, "ragged matrix literal");
            BitVector::from_bits(r)
        });
        BitMatrix { cols, rows: rows.collect() }
    }

    /// Parses rows such as `"1110000"`.
    pub fn from_strs(data: &[&str]) -> Self {
        let rows: Vec<Vec<u8>> =
            data.iter().map(|s| s.bytes().map(|b| (b == b'1') as u8).collect()).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        Self::from_u8(&refs)
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> &[BitVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BitVector {
        &self.rows[i]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut BitVector {
        &mut self.rows[i]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    pub fn set(&mut self, r: usize, c: usize, b: bool) {
        self.rows[r].set(c, b)
    }

    pub fn push_row(&mut self, row: BitVector) {
        assert_eq!(row.len(), self.cols);
        self.rows.push(row);
    }

    pub fn column(&self, c: usize) -> BitVector {
        let mut v = BitVector::zeros(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            if r.get(c) {
                v.set(i, true);
            }
        }
        v
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            for j in r.iter_ones() {
                t.set(j, i, true);
            }
        }
        t
    }

    /// `M z` with `z` a column vector.
    pub fn mul_vec(&self, z: &BitVector) -> BitVector {
        assert_eq!(z.len(), self.cols);
        let mut out = BitVector::zeros(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            if r.dot(z) {
                out.set(i, true);
            }
        }
        out
    }

    /// `zᵀ M` with `z` a row vector.
    pub fn vec_mul(&self, z: &BitVector) -> BitVector {
        assert_eq!(z.len(), self.rows.len());
        let mut out = BitVector::zeros(self.cols);
        for i in z.iter_ones() {
            out.xor_assign(&self.rows[i]);
        }
        out
    }

    pub fn mul(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.rows.len() {
            return Err(Gf2Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows.len(),
                self.cols,
                other.rows.len(),
                other.cols
            )));
        }
        let rows = self.rows.iter().map(|r| other.vec_mul(r)).collect();
        Ok(BitMatrix { cols: other.cols, rows })
    }

    pub fn vstack(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.cols {
            return Err(Gf2Error::DimensionMismatch("vstack column count".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(BitMatrix { cols: self.cols, rows })
    }

    pub fn select_columns(&self, cols: &[usize]) -> BitMatrix {
        BitMatrix { cols: cols.len(), rows: self.rows.iter().map(|r| r.select(cols)).collect() }
    }

    pub fn select_rows(&self, rows: &[usize]) -> BitMatrix {
        BitMatrix { cols: self.cols, rows: rows.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    /// Reduced row echelon form. Returns the reduced matrix (zero rows removed)
    /// and the pivot column of each remaining row.
    pub fn rref(&self) -> (BitMatrix, Vec<usize>) {
        let mut rows = self.rows.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else { continue };
            rows.swap(r, p);
            let pivot = rows[r].clone();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != r && row.get(c) {
                    row.xor_assign(&pivot);
                }
            }
            pivots.push(c);
            r += 1;
            if r == rows.len() {
                break;
            }
        }
        rows.truncate(r);
        (BitMatrix { cols: self.cols, rows }, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    pub fn is_invertible(&self) -> bool {
        self.rows.len() == self.cols && self.rank() == self.cols
    }

    pub fn inverse(&self) -> Result<BitMatrix, Gf2Error> {
        let n = self.cols;
        if self.rows.len() != n {
            return Err(Gf2Error::DimensionMismatch("inverse of a non-square matrix".into()));
        }
        let mut a = self.rows.clone();
        let mut inv: Vec<BitVector> = (0..n).map(|i| BitVector::unit(n, i)).collect();
        for c in 0..n {
            let p = (c..n).find(|&i| a[i].get(c)).ok_or(Gf2Error::Singular)?;
            a.swap(c, p);
            inv.swap(c, p);
            let (pa, pi) = (a[c].clone(), inv[c].clone());
            for i in 0..n {
                if i != c && a[i].get(c) {
                    a[i].xor_assign(&pa);
                    inv[i].xor_assign(&pi);
                }
            }
        }
        Ok(BitMatrix { cols: n, rows: inv })
    }

    /// Basis of `{z : M z = 0}`.
    pub fn kernel(&self) -> BitMatrix {
        let (r, pivots) = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        let mut basis = Vec::with_capacity(free.len());
        for &f in &free {
            let mut v = BitVector::unit(self.cols, f);
            for (row, &p) in r.rows.iter().zip(&pivots) {
                if row.get(f) {
                    v.set(p, true);
                }
            }
            basis.push(v);
        }
        BitMatrix { cols: self.cols, rows: basis }
    }

    /// Whether both matrices have the same row space.
    pub fn same_row_space(&self, other: &BitMatrix) -> bool {
        if self.cols != other.cols {
            return false;
        }
        let r = self.rank();
        r == other.rank() && self.vstack(other).map(|s| s.rank() == r).unwrap_or(false)
    }

    /// Keeps the rows that increase the rank, in order.
    pub fn independent_rows(&self) -> BitMatrix {
        let mut kept = BitMatrix::zeros(0, self.cols);
        let mut reduced = Reducer::new(self.cols);
        for r in &self.rows {
            if reduced.insert(r.clone()) {
                kept.push_row(r.clone());
            }
        }
        kept
    }
}

/// Incremental Gaussian elimination used to test linear independence.
#[derive(Clone, Debug)]
pub struct Reducer {
    basis: Vec<(usize, BitVector)>,
    len: usize,
}

impl Reducer {
    pub fn new(len: usize) -> Self {
        Reducer { basis: Vec::new(), len }
    }

    pub fn reduce(&self, mut v: BitVector) -> BitVector {
        for (p, b) in &self.basis {
            if v.get(*p) {
                v.xor_assign(b);
            }
        }
        v
    }

    /// Inserts `v`; returns false when `v` was already in the span.
    pub fn insert(&mut self, v: BitVector) -> bool {
        debug_assert_eq!(v.len(), self.len);
        let v = self.reduce(v);
        let lead = v.iter_ones().next();
        match lead {
            None => false,
            Some(p) => {
                for (_, b) in self.basis.iter_mut() {
                    if b.get(p) {
                        b.xor_assign(&v);
                    }
                }
                self.basis.push((p, v));
                true
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

/// Extends the `l x n` full-rank matrix `G` with standard basis rows to an
/// invertible `n x n` matrix `M = (G; K)`. Rows `e_1, ..., e_n` are scanned in
/// order and `e_j` is kept only if it raises the rank.
pub fn complete_to_invertible(g: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let n = g.ncols();
    if g.nrows() > n {
        return Err(Gf2Error::DimensionMismatch(format!(
            "{}x{n} generator has more rows than columns",
            g.nrows()
        )));
    }
    let mut red = Reducer::new(n);
    for r in g.rows() {
        if !red.insert(r.clone()) {
            return Err(Gf2Error::RankDeficient);
        }
    }
    let mut m = g.clone();
    for j in 0..n {
        if red.rank() == n {
            break;
        }
        let e = BitVector::unit(n, j);
        if red.insert(e.clone()) {
            m.push_row(e);
        }
    }
    Ok(m)
}

/// Row-reduces `G` so that row 1 has a one in (1-based) column `i` and every
/// other row has a zero there. The row space is unchanged.
pub fn adapt_generator_for_bit(g: &BitMatrix, i: usize) -> Result<BitMatrix, Gf2Error> {
    if i == 0 || i > g.ncols() {
        return Err(Gf2Error::DimensionMismatch(format!("bit {i} out of range")));
    }
    let c = i - 1;
    let p = (0..g.nrows()).find(|&r| g.get(r, c)).ok_or(Gf2Error::ZeroColumn(i))?;
    let mut rows = g.rows().to_vec();
    rows.swap(0, p);
    let first = rows[0].clone();
    for r in rows.iter_mut().skip(1) {
        if r.get(c) {
            r.xor_assign(&first);
        }
    }
    BitMatrix::from_rows(rows, g.ncols())
}

/// 1-based `(L(g), R(g))` of a nonzero row.
pub fn span_info(row: &BitVector) -> Option<(usize, usize)> {
    row.span()
}

/// All `2^k` codewords `uᵀG`, indexed by `u` read with bit 1 most significant.
pub fn enumerate_codewords(g: &BitMatrix) -> Result<Vec<BitVector>, Gf2Error> {
    let k = g.nrows();
    if k > 20 {
        return Err(Gf2Error::TooLarge(format!("k = {k} exceeds 20")));
    }
    Ok((0..1usize << k).map(|u| g.vec_mul(&BitVector::from_index(u, k))).collect())
}

/// Whether all left indices are distinct and all right indices are distinct.
pub fn has_lr_property(g: &BitMatrix) -> bool {
    let spans: Vec<_> = g.rows().iter().map(|r| r.span()).collect();
    if spans.iter().any(|s| s.is_none()) {
        return false;
    }
    let spans: Vec<(usize, usize)> = spans.into_iter().flatten().collect();
    let mut ls: Vec<usize> = spans.iter().map(|s| s.0).collect();
    let mut rs: Vec<usize> = spans.iter().map(|s| s.1).collect();
    ls.sort_unstable();
    rs.sort_unstable();
    ls.windows(2).all(|w| w[0] != w[1]) && rs.windows(2).all(|w| w[0] != w[1])
}

/// Minimal-span generator matrix with the LR property.
///
/// Whenever two rows share a left (right) index, the row whose span is longer
/// is replaced by the sum of both; this strictly shrinks its span. Among
/// equal spans the lower row index absorbs the sum. The result is returned
/// with rows sorted by left index, together with the 1-based spans.
pub fn msgm(g: &BitMatrix) -> Result<(BitMatrix, Vec<(usize, usize)>), Gf2Error> {
    if g.rank() != g.nrows() {
        return Err(Gf2Error::RankDeficient);
    }
    let mut rows = g.rows().to_vec();
    loop {
        let spans: Vec<(usize, usize)> = rows.iter().map(|r| r.span().expect("nonzero row")).collect();
        let mut change = None;
        'outer: for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                if spans[a].0 == spans[b].0 || spans[a].1 == spans[b].1 {
                    let la = spans[a].1 - spans[a].0;
                    let lb = spans[b].1 - spans[b].0;
                    change = Some(if lb > la { (b, a) } else { (a, b) });
                    break 'outer;
                }
            }
        }
        match change {
            None => break,
            Some((dst, src)) => {
                let s = rows[src].clone();
                rows[dst].xor_assign(&s);
            }
        }
    }
    rows.sort_by_key(|r| r.span().expect("nonzero row").0);
    let spans = rows.iter().map(|r| r.span().expect("nonzero row")).collect();
    Ok((BitMatrix { cols: g.ncols(), rows }, spans))
}

/// Generator of the dual code: a basis of `{x : H x = 0}` as rows.
pub fn dual(m: &BitMatrix) -> BitMatrix {
    m.kernel()
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<Vec<u8>>,
}

impl Serialize for BitMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson {
            rows: self.nrows(),
            cols: self.cols,
            data: self.rows.iter().map(|r| r.to_bits()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let m = MatrixJson::deserialize(d)?;
        if m.data.len() != m.rows {
            return Err(D::Error::custom(format!("expected {} rows, found {}", m.rows, m.data.len())));
        }
        let mut rows = Vec::with_capacity(m.rows);
        for r in &m.data {
            if r.len() != m.cols {
                return Err(D::Error::custom(format!("row of length {} with cols = {}", r.len(), m.cols)));
            }
            if r.iter().any(|&b| b > 1) {
                return Err(D::Error::custom("matrix entries must be 0 or 1"));
            }
            rows.push(BitVector::from_bits(r));
        }
        Ok(BitMatrix { cols: m.cols, rows })
    }
}

//! Dense reference computations on explicit state vectors.
//!
//! All states of pure-state channels have real amplitudes, so everything here
//! is real symmetric linear algebra. These routines are exponential in the
//! number of qubits and only meant for cross-checking the efficient code.

use crate::dist::Distribution;
use crate::gf2::{complete_to_invertible, enumerate_codewords, BitMatrix, BitVector, Gf2Error};
use crate::mpg::Mpg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large for the dense oracle: {0}")]
    TooLarge(String),
    #[error("Gram matrix is singular (smallest eigenvalue {0:e})")]
    SingularGram(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

/// Square real matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.data[i * d.len() + i] = x;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                t.data[c * n + r] = self.data[r * n + c];
            }
        }
        t
    }

    pub fn mul(&self, o: &Dense) -> Dense {
        let n = self.n;
        assert_eq!(n, o.n);
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &o.data[k * n..(k + 1) * n];
                let dst = &mut out.data[r * n..(r + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| self.data[r * self.n..(r + 1) * self.n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn sub(&self, o: &Dense) -> Dense {
        Dense { n: self.n, data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect() }
    }

    /// Adds `w · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], w: f64) {
        let n = self.n;
        for r in 0..n {
            let a = w * v[r];
            if a == 0.0 {
                continue;
            }
            for c in 0..n {
                self.data[r * n + c] += a * v[c];
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, o: &Dense) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for r in 0..self.n {
            for c in 0..self.n {
                if r != c {
                    s += self.get(r, c).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix by cyclic
/// Jacobi rotations.
pub fn jacobi_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.n;
    let mut m = a.clone();
    let mut v = Dense::identity(n);
    for _sweep in 0..100 {
        if m.off_diagonal_norm() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| m.get(i, i)).collect(), v)
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
fn spectral_map(a: &Dense, f: impl Fn(f64) -> f64) -> Dense {
    let (vals, v) = jacobi_eigen(a);
    let n = a.n;
    let mut out = Dense::zeros(n);
    for (i, &l) in vals.iter().enumerate() {
        let w = f(l);
        if w == 0.0 {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|r| v.get(r, i)).collect();
        out.add_outer(&col, w);
    }
    out
}

/// Amplitudes `(-1)^{x·z} √P(z)` of `spsc[P](x)`.
pub fn spsc_state(p: &Distribution, x: &BitVector) -> Vec<f64> {
    assert_eq!(x.len(), p.m(), "input length must match the distribution");
    let xi = x.to_index();
    p.probs()
        .iter()
        .enumerate()
        .map(|(z, &q)| if (xi & z).count_ones() % 2 == 1 { -q.sqrt() } else { q.sqrt() })
        .collect()
}

/// Product distribution of independent bits with `P(z_j = 1) = p_j`.
pub fn product_bits(ps: &[f64]) -> Distribution {
    let n = ps.len();
    let probs = (0..1usize << n)
        .map(|z| (0..n).map(|j| if (z >> (n - 1 - j)) & 1 == 1 { ps[j] } else { 1.0 - ps[j] }).product())
        .collect();
    Distribution::new(n, probs).expect("valid probabilities")
}

/// `½ + ¼‖ρ0 − ρ1‖₁`.
pub fn helstrom(rho0: &Dense, rho1: &Dense) -> f64 {
    let (vals, _) = jacobi_eigen(&rho0.sub(rho1));
    0.5 + 0.25 * vals.iter().map(|l| l.abs()).sum::<f64>()
}

fn check_params(g: &BitMatrix, ps: &[f64]) -> Result<(), OracleError> {
    if ps.len() != g.ncols() {
        return Err(OracleError::InvalidInput(format!("{} channel parameters for {} bits", ps.len(), g.ncols())));
    }
    if ps.iter().any(|&p| !(0.0..=0.5).contains(&p)) {
        return Err(OracleError::InvalidInput("channel parameters must lie in [0, 1/2]".into()));
    }
    if g.rank() != g.nrows() {
        return Err(OracleError::InvalidInput("generator matrix is not of full rank".into()));
    }
    Ok(())
}

/// Gram matrix `⟨Ψ_x|Ψ_y⟩ = Π_j (1 − 2p_j)^{[c_x,j ≠ c_y,j]}` of the code states,
/// indexed by message.
pub fn gram(g: &BitMatrix, ps: &[f64]) -> Result<Dense, OracleError> {
    check_params(g, ps)?;
    let words = enumerate_codewords(g)?;
    let size = words.len();
    if size > 1 << 12 {
        return Err(OracleError::TooLarge(format!("k = {} exceeds 12", g.nrows())));
    }
    let mut m = Dense::zeros(size);
    for a in 0..size {
        for b in 0..size {
            let d = words[a].xor(&words[b]);
            let v: f64 = d.iter_ones().map(|j| 1.0 - 2.0 * ps[j]).product();
            m.set(a, b, v);
        }
    }
    Ok(m)
}

fn bit_signs(words: &[BitVector], i: usize) -> Result<Vec<f64>, OracleError> {
    if i == 0 || i > words.first().map_or(0, |w| w.len()) {
        return Err(OracleError::InvalidInput(format!("bit {i} out of range")));
    }
    let s: Vec<f64> = words.iter().map(|w| if w.get(i - 1) { -1.0 } else { 1.0 }).collect();
    if s.iter().all(|&x| x > 0.0) {
        return Err(OracleError::InvalidInput(format!("bit {i} is zero in every codeword")));
    }
    Ok(s)
}

/// Optimal probability of guessing codeword bit `i` (1-based) from the joint
/// channel output, using explicit `2^n`-dimensional density matrices.
pub fn bit_helstrom_dense(g: &BitMatrix, i: usize, ps: &[f64]) -> Result<f64, OracleError> {
    check_params(g, ps)?;
    let n = g.ncols();
    if n > 8 {
        return Err(OracleError::TooLarge(format!("n = {n} exceeds 8 for dense density matrices")));
    }
    let words = enumerate_codewords(g)?;
    let signs = bit_signs(&words, i)?;
    let p = product_bits(ps);
    let w = 1.0 / (words.len() / 2) as f64;
    let (mut r0, mut r1) = (Dense::zeros(1 << n), Dense::zeros(1 << n));
    for (c, &s) in words.iter().zip(&signs) {
        let psi = spsc_state(&p, c);
        if s > 0.0 { r0.add_outer(&psi, w) } else { r1.add_outer(&psi, w) }
    }
    Ok(helstrom(&r0, &r1))
}

/// The same value from the `2^k`-dimensional Gram matrix: the nonzero
/// spectrum of `ρ0 − ρ1` is that of `G^{1/2} C G^{1/2} / 2^{k-1}` with `C`
/// the diagonal of bit signs.
pub fn bit_helstrom_gram(g: &BitMatrix, i: usize, ps: &[f64]) -> Result<f64, OracleError> {
    let (n, k) = (g.ncols(), g.nrows());
    if k > 8 || n > 16 {
        return Err(OracleError::TooLarge(format!("[{n},{k}] code exceeds the Gram route (k <= 8, n <= 16)")));
    }
    let gm = gram(g, ps)?;
    let words = enumerate_codewords(g)?;
    let signs = bit_signs(&words, i)?;
    let root = spectral_map(&gm, |l| l.max(0.0).sqrt());
    let m = root.mul(&Dense::diag(&signs)).mul(&root);
    let (vals, _) = jacobi_eigen(&m);
    let scale = 1.0 / (words.len() / 2) as f64;
    Ok(0.5 + 0.25 * scale * vals.iter().map(|l| l.abs()).sum::<f64>())
}

/// Bit-optimal success probability, by whichever dense route fits.
pub fn bit_helstrom(g: &BitMatrix, i: usize, ps: &[f64]) -> Result<f64, OracleError> {
    if g.ncols() <= 8 {
        bit_helstrom_dense(g, i, ps)
    } else {
        bit_helstrom_gram(g, i, ps)
    }
}

/// `2^{-k} Σ_x ((G^{1/2})_{xx})²`, the PGM success for equiprobable states.
pub fn pgm_block_success(gm: &Dense) -> Result<f64, OracleError> {
    let (vals, v) = jacobi_eigen(gm);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-12 {
        return Err(OracleError::SingularGram(min));
    }
    let n = gm.n;
    let mut acc = 0.0;
    for x in 0..n {
        let d: f64 = (0..n).map(|i| vals[i].sqrt() * v.get(x, i) * v.get(x, i)).sum();
        acc += d * d;
    }
    Ok(acc / n as f64)
}

/// Block success of decoding the codeword bits on an information set one at
/// a time, each with its bit-optimal projective measurement, and chaining
/// the projections. Works in the span of the code states, where the states
/// are the columns of `S = G^{1/2}`.
pub fn sequential_block_success(g: &BitMatrix, ps: &[f64]) -> Result<f64, OracleError> {
    let (n, k) = (g.ncols(), g.nrows());
    if n > 10 || k > 8 {
        return Err(OracleError::TooLarge(format!("[{n},{k}] exceeds n <= 10, k <= 8")));
    }
    let gm = gram(g, ps)?;
    let (vals, _) = jacobi_eigen(&gm);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-12 {
        return Err(OracleError::SingularGram(min));
    }
    let s = spectral_map(&gm, |l| l.max(0.0).sqrt());
    let words = enumerate_codewords(g)?;
    let (_, info_set) = g.rref();
    let size = words.len();
    let mut projectors = Vec::with_capacity(k);
    for &j in &info_set {
        let signs: Vec<f64> = words.iter().map(|w| if w.get(j) { -1.0 } else { 1.0 }).collect();
        let m = s.mul(&Dense::diag(&signs)).mul(&s);
        projectors.push(spectral_map(&m, |l| if l > 0.0 { 1.0 } else { 0.0 }));
    }
    let mut acc = 0.0;
    for (x, w) in words.iter().enumerate() {
        let mut v: Vec<f64> = (0..size).map(|r| s.get(r, x)).collect();
        for (t, &j) in info_set.iter().enumerate() {
            let p0 = projectors[t].mul_vec(&v);
            v = if w.get(j) { v.iter().zip(&p0).map(|(a, b)| a - b).collect() } else { p0 };
        }
        acc += v.iter().map(|a| a * a).sum::<f64>();
    }
    Ok(acc / size as f64)
}

/// A subspace decoding task: decode the first `l` bits of `u` from
/// `spsc[P](uᵀG)` with the remaining bits of `u` uniform.
#[derive(Clone, Debug)]
pub struct SdtInstance {
    pub g: BitMatrix,
    pub l: usize,
    pub p: Distribution,
}

impl SdtInstance {
    fn validate(&self, max_n: usize) -> Result<(usize, usize), OracleError> {
        let (k, n) = (self.g.nrows(), self.g.ncols());
        if n > max_n {
            return Err(OracleError::TooLarge(format!("n = {n} exceeds {max_n}")));
        }
        if self.p.m() != n || self.l > k || self.g.rank() != k {
            return Err(OracleError::InvalidInput("inconsistent instance".into()));
        }
        Ok((k, n))
    }
}

/// `P_{Y,S}` and, per `(y,s)`, the normalised amplitudes over `a` after the
/// relabelling `w = Mz`.
struct Relabelled {
    /// `Q(w)` indexed by `w = (y, s, a)`.
    q: Vec<f64>,
    k: usize,
    n: usize,
}

fn relabel(inst: &SdtInstance) -> Result<(Relabelled, BitMatrix), OracleError> {
    let (k, n) = (inst.g.nrows(), inst.g.ncols());
    let m = complete_to_invertible(&inst.g)?;
    let mut q = vec![0.0; 1 << n];
    for z in 0..1usize << n {
        let w = m.mul_vec(&BitVector::from_index(z, n)).to_index();
        q[w] = inst.p.probs()[z];
    }
    Ok((Relabelled { q, k, n }, m))
}

impl Relabelled {
    fn p_ys(&self, ys: usize) -> f64 {
        let na = 1usize << (self.n - self.k);
        self.q[ys * na..(ys + 1) * na].iter().sum()
    }
}

/// The node unitary `U₂U₁` of an instance as a dense orthogonal matrix.
pub fn pno_matrix(inst: &SdtInstance) -> Result<Dense, OracleError> {
    let (k, n) = inst.validate(12)?;
    let (rel, m) = relabel(inst)?;
    let dim = 1usize << n;
    let na = 1usize << (n - k);
    // U1 |z> = |Mz>.
    let mut u1 = Dense::zeros(dim);
    for z in 0..dim {
        let w = m.mul_vec(&BitVector::from_index(z, n)).to_index();
        u1.set(w, z, 1.0);
    }
    let mut u2 = Dense::zeros(dim);
    for ys in 0..1usize << k {
        let base = ys * na;
        let pys = rel.p_ys(ys);
        let xi: Vec<f64> = if pys > 0.0 {
            (0..na).map(|a| (rel.q[base + a] / pys).sqrt()).collect()
        } else {
            Vec::new()
        };
        let mut v = xi.clone();
        if !v.is_empty() {
            v[0] -= 1.0;
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if pys == 0.0 || vv.sqrt() < 1e-14 {
            for a in 0..na {
                u2.set(base + a, base + a, 1.0);
            }
            continue;
        }
        for r in 0..na {
            for c in 0..na {
                let id = if r == c { 1.0 } else { 0.0 };
                u2.set(base + r, base + c, id - 2.0 * v[r] * v[c] / vv);
            }
        }
    }
    Ok(u2.mul(&u1))
}

/// Largest entrywise deviation between `U W(x) Uᵀ` and
/// `Σ_s P_S(s) spsc[P_{Y|S=s}](x) ⊗ |s⟩⟨s| ⊗ |0⟩⟨0|` over all `x`.
pub fn verify_node_lemma(inst: &SdtInstance) -> Result<f64, OracleError> {
    let (k, n) = inst.validate(10)?;
    let l = inst.l;
    let u = pno_matrix(inst)?;
    let (rel, _) = relabel(inst)?;
    let dim = 1usize << n;
    let (ns, na) = (1usize << (k - l), 1usize << (n - k));
    let mut worst: f64 = 0.0;
    for x in 0..1usize << l {
        let mut lhs = Dense::zeros(dim);
        let w = 1.0 / ns as f64;
        for r in 0..ns {
            let uvec = BitVector::from_index((x << (k - l)) | r, k);
            let psi = spsc_state(&inst.p, &inst.g.vec_mul(&uvec));
            lhs.add_outer(&u.mul_vec(&psi), w);
        }
        let mut rhs = Dense::zeros(dim);
        for s in 0..ns {
            let ps: f64 = (0..1usize << l).map(|y| rel.p_ys((y << (k - l)) | s)).sum();
            if ps == 0.0 {
                continue;
            }
            let mut vec = vec![0.0; dim];
            for y in 0..1usize << l {
                let pyy = rel.p_ys((y << (k - l)) | s) / ps;
                let sign = if (x & y).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                vec[((y << (k - l)) | s) * na] = sign * pyy.sqrt();
            }
            rhs.add_outer(&vec, ps);
        }
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    Ok(worst)
}

/// Outcome split of a node: for each `s` of positive probability, `P_S(s)`
/// and `P_{Y|S=s}`, computed directly from the definition.
fn node_split(g: &BitMatrix, l: usize, p: &Distribution) -> Result<Vec<Option<(f64, Vec<f64>)>>, OracleError> {
    let inst = SdtInstance { g: g.clone(), l, p: p.clone() };
    let (rel, _) = relabel(&inst)?;
    let k = g.nrows();
    let ns = 1usize << (k - l);
    Ok((0..ns)
        .map(|s| {
            let pys: Vec<f64> = (0..1usize << l).map(|y| rel.p_ys((y << (k - l)) | s)).collect();
            let ps: f64 = pys.iter().sum();
            (ps > 0.0).then(|| (ps, pys.iter().map(|v| v / ps).collect()))
        })
        .collect())
}

fn dist_of(v: &[f64]) -> Distribution {
    let m = v.len().trailing_zeros() as usize;
    Distribution::new(m, v.to_vec()).expect("normalised")
}

/// Applies the PNO of every node, leaves to root, each controlled on the
/// outcomes already produced below it, to `spsc[P](F[G](x, r))` for all `x`
/// and `r`. Compares the magnitudes of the result with
/// `√(p_s · D_s(y))` on `|y⟩|s⟩|0⟩` and zero elsewhere; returns the largest
/// deviation.
pub fn verify_chain(g: &Mpg, leaf_dists: &[Distribution]) -> Result<f64, OracleError> {
    let n = g.output_len();
    if n > 8 {
        return Err(OracleError::TooLarge(format!("{n} output bits exceed 8")));
    }
    if leaf_dists.len() != g.leaves().len() {
        return Err(OracleError::InvalidInput("one distribution per leaf".into()));
    }
    let refs: Vec<&Distribution> = leaf_dists.iter().collect();
    let joint = Distribution::product_all(&refs);
    // Qubit positions of each edge; leaves first, in output order.
    let mut pos: Vec<Vec<usize>> = vec![Vec::new(); g.edges().len()];
    let mut next = 0;
    for &e in g.leaves() {
        pos[e] = (next..next + g.width(e)).collect();
        next += g.width(e);
    }
    // Per node: positions of its outcome bits and of its zeroed bits.
    let mut s_pos: Vec<Vec<usize>> = vec![Vec::new(); g.nodes().len()];
    let mut order = Vec::new();
    for &v in g.post_order() {
        let node = &g.nodes()[v];
        let all: Vec<usize> = node.outputs.iter().flat_map(|&o| pos[o].clone()).collect();
        let l = g.width(node.input);
        pos[node.input] = all[..l].to_vec();
        s_pos[v] = all[l..node.k()].to_vec();
        order.push((v, all));
    }
    let descendants = |v: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for &o in &g.nodes()[u].outputs {
                if let Some(c) = g.below(o) {
                    out.push(c);
                    stack.push(c);
                }
            }
        }
        out
    };
    let bit_at = |idx: usize, q: usize| (idx >> (n - 1 - q)) & 1;
    // Message on an edge given the full outcome assignment `idx`, with the
    // probability of the outcomes seen below it.
    fn message(
        g: &Mpg,
        e: usize,
        idx: usize,
        leaf_dists: &[Distribution],
        s_pos: &[Vec<usize>],
        bit_at: &dyn Fn(usize, usize) -> usize,
    ) -> Result<Option<(f64, Vec<f64>)>, OracleError> {
        match g.below(e) {
            None => {
                let i = g.leaves().iter().position(|&x| x == e).expect("leaf");
                Ok(Some((1.0, leaf_dists[i].probs().to_vec())))
            }
            Some(v) => {
                let node = &g.nodes()[v];
                let mut prob = 1.0;
                let mut parts = Vec::new();
                for &o in &node.outputs {
                    match message(g, o, idx, leaf_dists, s_pos, bit_at)? {
                        None => return Ok(None),
                        Some((p, d)) => {
                            prob *= p;
                            parts.push(dist_of(&d));
                        }
                    }
                }
                let prefs: Vec<&Distribution> = parts.iter().collect();
                let joint = Distribution::product_all(&prefs);
                let s = s_pos[v].iter().fold(0usize, |acc, &q| (acc << 1) | bit_at(idx, q));
                let split = node_split(&node.generator, g.width(node.input), &joint)?;
                Ok(split[s].clone().map(|(ps, d)| (prob * ps, d)))
            }
        }
    }

    let l = g.root_width();
    let rl = g.randomness_len();
    if rl > 12 {
        return Err(OracleError::TooLarge("too much randomness to enumerate".into()));
    }
    let dim = 1usize << n;
    let mut worst: f64 = 0.0;
    for x in 0..1usize << l {
        for r in 0..1usize << rl {
            let word = g
                .encode_with(&BitVector::from_index(x, l), &BitVector::from_index(r, rl))
                .map_err(|e| OracleError::InvalidInput(e.to_string()))?;
            let mut state = spsc_state(&joint, &word);
            for (v, all) in &order {
                let node = &g.nodes()[*v];
                let ctrl: Vec<usize> = descendants(*v).iter().flat_map(|&d| s_pos[d].clone()).collect();
                let mut cache: std::collections::HashMap<usize, Dense> = std::collections::HashMap::new();
                let nv = all.len();
                let mut done = vec![false; dim];
                for base in 0..dim {
                    if done[base] {
                        continue;
                    }
                    // Clear the node's qubits to enumerate its block.
                    let mut b0 = base;
                    for &q in all {
                        b0 &= !(1 << (n - 1 - q));
                    }
                    let idxs: Vec<usize> = (0..1usize << nv)
                        .map(|loc| {
                            let mut id = b0;
                            for (t, &q) in all.iter().enumerate() {
                                if (loc >> (nv - 1 - t)) & 1 == 1 {
                                    id |= 1 << (n - 1 - q);
                                }
                            }
                            id
                        })
                        .collect();
                    for &id in &idxs {
                        done[id] = true;
                    }
                    let key = ctrl.iter().fold(0usize, |acc, &q| (acc << 1) | bit_at(b0, q));
                    if !cache.contains_key(&key) {
                        let mut parts = Vec::new();
                        let mut ok = true;
                        for &o in &node.outputs {
                            match message(g, o, b0, leaf_dists, &s_pos, &bit_at)? {
                                Some((_, d)) => parts.push(dist_of(&d)),
                                None => ok = false,
                            }
                        }
                        let u = if ok {
                            let prefs: Vec<&Distribution> = parts.iter().collect();
                            let p = Distribution::product_all(&prefs);
                            pno_matrix(&SdtInstance { g: node.generator.clone(), l: g.width(node.input), p })?
                        } else {
                            Dense::identity(1 << nv)
                        };
                        cache.insert(key, u);
                    }
                    let u = &cache[&key];
                    let local: Vec<f64> = idxs.iter().map(|&id| state[id]).collect();
                    let out = u.mul_vec(&local);
                    for (&id, &a) in idxs.iter().zip(&out) {
                        state[id] = a;
                    }
                }
            }
            // Expected magnitudes.
            let zero_pos: Vec<usize> = order
                .iter()
                .flat_map(|(v, all)| all[g.nodes()[*v].k()..].to_vec())
                .collect();
            for (idx, &amp) in state.iter().enumerate() {
                let expect = if zero_pos.iter().any(|&q| bit_at(idx, q) == 1) {
                    0.0
                } else {
                    match message(g, g.root(), idx, leaf_dists, &s_pos, &bit_at)? {
                        None => 0.0,
                        Some((p, d)) => {
                            let y = pos[g.root()].iter().fold(0usize, |acc, &q| (acc << 1) | bit_at(idx, q));
                            (p * d[y]).sqrt()
                        }
                    }
                };
                worst = worst.max((amp.abs() - expect).abs());
            }
        }
    }
    Ok(worst)
}

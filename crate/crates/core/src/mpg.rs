//! Message-passing graphs and the classical side of BPQM.
//!
//! An MPG is a rooted tree. Each node `v` has one incoming edge of width
//! `l_v` (towards the root) and an ordered list of outgoing edges whose widths
//! add up to `n_v`. Its generator `G_v` is a full-rank `k_v x n_v` matrix. The
//! node maps an input `z` and `k_v - l_v` uniform bits `r` to `(z ‖ r)ᵀ G_v`,
//! split across the outgoing edges in order. Leaves are edges with no node
//! below them and the channel output is the concatenation of the leaves in
//! their declared order.
//!
//! On the decoding side every node applies the primitive node operation: the
//! joint child distribution `D̄` is relabeled by `M = (G_v; K)` and split into
//! the outcome law of `s` (bits `l+1..k` of `M z`) and the conditional of the
//! first `l` bits. The bits `k+1..n` are traced out.

use crate::dist::{walsh_hadamard, DistError, Distribution, GridParams};
use crate::gf2::{complete_to_invertible, BitMatrix, BitVector, Gf2Error};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpgError {
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error("rank deficient generator at node {0}")]
    RankDeficient(String),
    #[error("dimension order violated at node {0}: need 1 <= l <= k <= n")]
    DimensionOrder(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("leaf distributions: {0}")]
    LeafMismatch(String),
    #[error("too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub input: usize,
    pub outputs: Vec<usize>,
    pub generator: BitMatrix,
    /// Free-form tag recorded by the constructions, e.g. `"check"` or `"A(ii)"`.
    pub kind: Option<String>,
}

impl Node {
    pub fn k(&self) -> usize {
        self.generator.nrows()
    }
    pub fn n(&self) -> usize {
        self.generator.ncols()
    }
}

#[derive(Clone, Debug)]
pub struct Mpg {
    edges: Vec<Edge>,
    nodes: Vec<Node>,
    root: usize,
    leaves: Vec<usize>,
    /// Node whose input is the edge, if any.
    below: Vec<Option<usize>>,
    /// Nodes with every descendant before its ancestors.
    post_order: Vec<usize>,
}

/// Incremental construction of an [`Mpg`].
#[derive(Clone, Debug, Default)]
pub struct MpgBuilder {
    edges: Vec<Edge>,
    nodes: Vec<Node>,
}

impl MpgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn edge(&mut self, width: usize) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { name: format!("e{id}"), width });
        id
    }

    pub fn named_edge(&mut self, name: impl Into<String>, width: usize) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { name: name.into(), width });
        id
    }

    pub fn node(&mut self, input: usize, outputs: Vec<usize>, generator: BitMatrix, kind: Option<&str>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            name: format!("v{id}"),
            input,
            outputs,
            generator,
            kind: kind.map(str::to_string),
        });
        id
    }

    pub fn edge_width(&self, e: usize) -> usize {
        self.edges[e].width
    }

    pub fn build(self, root: usize, leaves: Vec<usize>) -> Result<Mpg, MpgError> {
        Mpg::new(self.edges, self.nodes, root, leaves)
    }
}

impl Mpg {
    pub fn new(edges: Vec<Edge>, nodes: Vec<Node>, root: usize, leaves: Vec<usize>) -> Result<Self, MpgError> {
        let ne = edges.len();
        if root >= ne {
            return Err(MpgError::UnknownId(format!("root edge {root}")));
        }
        for e in &edges {
            if e.width == 0 {
                return Err(MpgError::WidthMismatch(format!("edge {} has width 0", e.name)));
            }
        }
        let mut below = vec![None; ne];
        let mut above = vec![None; ne];
        for (v, node) in nodes.iter().enumerate() {
            let check = |e: usize| {
                if e >= ne {
                    Err(MpgError::UnknownId(format!("edge {e} at node {}", node.name)))
                } else {
                    Ok(())
                }
            };
            check(node.input)?;
            for &o in &node.outputs {
                check(o)?;
            }
            let l = edges[node.input].width;
            let n: usize = node.outputs.iter().map(|&o| edges[o].width).sum();
            if node.generator.ncols() != n {
                return Err(MpgError::WidthMismatch(format!(
                    "node {} has {} generator columns but outgoing widths sum to {n}",
                    node.name,
                    node.generator.ncols()
                )));
            }
            let k = node.generator.nrows();
            if !(l <= k && k <= n) {
                return Err(MpgError::DimensionOrder(node.name.clone()));
            }
            if node.generator.rank() != k {
                return Err(MpgError::RankDeficient(node.name.clone()));
            }
            if below[node.input].replace(v).is_some() {
                return Err(MpgError::NotATree(format!("edge {} enters two nodes", edges[node.input].name)));
            }
            for &o in &node.outputs {
                if above[o].replace(v).is_some() {
                    return Err(MpgError::NotATree(format!("edge {} leaves two nodes", edges[o].name)));
                }
            }
        }
        if above[root].is_some() {
            return Err(MpgError::NotATree("root edge is the output of a node".into()));
        }
        for (e, a) in above.iter().enumerate() {
            if e != root && a.is_none() {
                return Err(MpgError::NotATree(format!("edge {} is detached from the root", edges[e].name)));
            }
        }
        // Depth-first walk from the root; every node must be reached exactly once.
        let mut seen = vec![false; nodes.len()];
        let mut pre = Vec::with_capacity(nodes.len());
        let mut found_leaves = HashSet::new();
        let mut stack = vec![root];
        while let Some(e) = stack.pop() {
            match below[e] {
                None => {
                    found_leaves.insert(e);
                }
                Some(v) => {
                    if seen[v] {
                        return Err(MpgError::NotATree("cycle".into()));
                    }
                    seen[v] = true;
                    pre.push(v);
                    stack.extend(nodes[v].outputs.iter().rev());
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(MpgError::NotATree(format!("node {} is unreachable from the root", nodes[v].name)));
        }
        let declared: HashSet<usize> = leaves.iter().copied().collect();
        if declared.len() != leaves.len() || declared != found_leaves {
            return Err(MpgError::NotATree("declared leaves differ from the edges without a node below".into()));
        }
        let post_order = pre.into_iter().rev().collect();
        Ok(Mpg { edges, nodes, root, leaves, below, post_order })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn root(&self) -> usize {
        self.root
    }
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }
    pub fn below(&self, e: usize) -> Option<usize> {
        self.below[e]
    }
    pub fn post_order(&self) -> &[usize] {
        &self.post_order
    }
    pub fn width(&self, e: usize) -> usize {
        self.edges[e].width
    }

    /// Width of the root edge.
    pub fn root_width(&self) -> usize {
        self.edges[self.root].width
    }

    /// Total width of the leaves.
    pub fn output_len(&self) -> usize {
        self.leaves.iter().map(|&e| self.edges[e].width).sum()
    }

    /// `N = max_v n_v`, or 0 for the zero-node graph.
    pub fn max_width(&self) -> usize {
        self.nodes.iter().map(Node::n).max().unwrap_or(0)
    }

    /// Number of uniform bits consumed by one encoding.
    pub fn randomness_len(&self) -> usize {
        self.nodes.iter().map(|v| v.k() - self.edges[v.input].width).sum()
    }

    /// `Π_v 2^{k_v - l_v}`, the number of outcome labels.
    pub fn outcome_count(&self) -> u128 {
        1u128 << self.randomness_len()
    }

    /// Encodes `x` with explicit node randomness; node `v` consumes
    /// `k_v - l_v` bits in node index order.
    pub fn encode_with(&self, x: &BitVector, randomness: &BitVector) -> Result<BitVector, MpgError> {
        if x.len() != self.root_width() {
            return Err(MpgError::WidthMismatch("input length differs from the root width".into()));
        }
        if randomness.len() != self.randomness_len() {
            return Err(MpgError::WidthMismatch("randomness length".into()));
        }
        let mut offsets = Vec::with_capacity(self.nodes.len());
        let mut acc = 0;
        for v in &self.nodes {
            offsets.push(acc);
            acc += v.k() - self.edges[v.input].width;
        }
        let mut values: Vec<Option<BitVector>> = vec![None; self.edges.len()];
        values[self.root] = Some(x.clone());
        for &v in self.post_order.iter().rev() {
            let node = &self.nodes[v];
            let z = values[node.input].clone().expect("parent assigned first");
            let l = z.len();
            let r = randomness.slice(offsets[v], offsets[v] + node.k() - l);
            let out = node.generator.vec_mul(&z.concat(&r));
            let mut pos = 0;
            for &o in &node.outputs {
                let w = self.edges[o].width;
                values[o] = Some(out.slice(pos, pos + w));
                pos += w;
            }
        }
        let mut out = BitVector::zeros(0);
        for &leaf in &self.leaves {
            out = out.concat(values[leaf].as_ref().expect("leaf assigned"));
        }
        Ok(out)
    }

    /// Draws one output of the channel `F[G](x)`.
    pub fn sample_encode<R: Rng + ?Sized>(&self, x: &BitVector, rng: &mut R) -> Result<BitVector, MpgError> {
        let mut r = BitVector::zeros(self.randomness_len());
        for i in 0..r.len() {
            if rng.gen::<bool>() {
                r.set(i, true);
            }
        }
        self.encode_with(x, &r)
    }

    fn check_leaves(&self, leaf_dists: &[Distribution]) -> Result<(), MpgError> {
        if leaf_dists.len() != self.leaves.len() {
            return Err(MpgError::LeafMismatch(format!(
                "{} distributions for {} leaves",
                leaf_dists.len(),
                self.leaves.len()
            )));
        }
        for (d, &e) in leaf_dists.iter().zip(&self.leaves) {
            if d.m() != self.edges[e].width {
                return Err(MpgError::LeafMismatch(format!(
                    "leaf {} has width {} but its distribution has m = {}",
                    self.edges[e].name,
                    self.edges[e].width,
                    d.m()
                )));
            }
        }
        Ok(())
    }

    /// Node ids owning each bit of an outcome label, in label order.
    pub fn label_layout(&self) -> Vec<usize> {
        fn walk(g: &Mpg, e: usize, out: &mut Vec<usize>) {
            if let Some(v) = g.below[e] {
                let node = &g.nodes[v];
                for &o in &node.outputs {
                    walk(g, o, out);
                }
                for _ in 0..node.k() - g.edges[node.input].width {
                    out.push(v);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, self.root, &mut out);
        out
    }

    pub fn compile(&self) -> Result<CompiledMpg, MpgError> {
        let kernels = self
            .nodes
            .iter()
            .map(|v| NodeKernel::new(&v.generator, self.edges[v.input].width))
            .collect::<Result<_, _>>()?;
        Ok(CompiledMpg { mpg: self.clone(), kernels })
    }
}

/// Outcome of the primitive node operation on one joint distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutcome {
    /// The measured bits `s`, as an integer with bit 1 most significant.
    pub s: usize,
    pub prob: f64,
    pub dist: Distribution,
}

/// The node ensemble `f_U(D̄)`: every outcome `s` of positive probability
/// with its conditional distribution on `l` bits.
pub fn node_ensemble(g: &BitMatrix, l: usize, joint: &Distribution) -> Result<Vec<NodeOutcome>, MpgError> {
    if joint.m() != g.ncols() {
        return Err(MpgError::WidthMismatch(format!(
            "joint distribution on {} bits for a node with n = {}",
            joint.m(),
            g.ncols()
        )));
    }
    let kern = NodeKernel::new(g, l)?;
    let mut pys = vec![0.0; 1 << kern.k];
    kern.project(joint.probs(), &mut pys);
    Ok(Distribution::from_raw(kern.k, pys)
        .conditional_split(l)
        .into_iter()
        .map(|(s, prob, dist)| NodeOutcome { s, prob, dist })
        .collect())
}

/// Precomputed relabeling of one node: `table[w] = M^{-1} w`.
#[derive(Clone, Debug)]
pub struct NodeKernel {
    pub l: usize,
    pub k: usize,
    pub n: usize,
    table: Vec<u32>,
}

impl NodeKernel {
    pub fn new(g: &BitMatrix, l: usize) -> Result<Self, MpgError> {
        let (k, n) = (g.nrows(), g.ncols());
        if !(1..=k).contains(&l) || k > n {
            return Err(MpgError::DimensionOrder(format!("l = {l}, k = {k}, n = {n}")));
        }
        if n > 24 {
            return Err(MpgError::TooLarge(format!("node with n = {n}")));
        }
        let m = complete_to_invertible(g)?;
        let inv = m.inverse()?;
        let table = (0..1usize << n)
            .map(|w| inv.mul_vec(&BitVector::from_index(w, n)).to_index() as u32)
            .collect();
        Ok(NodeKernel { l, k, n, table })
    }

    /// Writes the law of `(y, s)` (the first `k` bits of `M z`) into `out`.
    pub fn project(&self, joint: &[f64], out: &mut [f64]) {
        debug_assert_eq!(joint.len(), 1 << self.n);
        debug_assert_eq!(out.len(), 1 << self.k);
        let tail = self.n - self.k;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (w, &z) in self.table.iter().enumerate() {
            out[w >> tail] += joint[z as usize];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleEntry {
    pub prob: f64,
    pub dist: Distribution,
    pub label: BitVector,
}

/// A finite ensemble `{(p_s, D_s)}` of residual channel descriptions.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageEnsemble {
    pub entries: Vec<EnsembleEntry>,
}

impl MessageEnsemble {
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }
}

/// Optimal success probability of guessing the root input from the
/// ensemble: `Σ_s p_s 2^{H_{1/2}(D_s) - l}`.
pub fn success_probability(ens: &MessageEnsemble) -> f64 {
    ens.entries.iter().map(|e| e.prob * e.dist.guess_success()).sum()
}

/// Exact message ensemble at the root.
///
/// Entries below `prune_eps` are dropped after every node and the rest is
/// renormalized; pass `None` to keep everything.
pub fn message_ensemble(
    g: &Mpg,
    leaf_dists: &[Distribution],
    prune_eps: Option<f64>,
) -> Result<MessageEnsemble, MpgError> {
    g.check_leaves(leaf_dists)?;
    let mut ens: Vec<Option<Vec<EnsembleEntry>>> = vec![None; g.edges.len()];
    for (&e, d) in g.leaves.iter().zip(leaf_dists) {
        ens[e] = Some(vec![EnsembleEntry { prob: 1.0, dist: d.clone(), label: BitVector::zeros(0) }]);
    }
    for &v in &g.post_order {
        let node = &g.nodes[v];
        let l = g.edges[node.input].width;
        let kern = NodeKernel::new(&node.generator, l)?;
        let mut joint: Vec<EnsembleEntry> =
            vec![EnsembleEntry { prob: 1.0, dist: Distribution::from_raw(0, vec![1.0]), label: BitVector::zeros(0) }];
        for &o in &node.outputs {
            let child = ens[o].take().expect("children processed first");
            let mut next = Vec::with_capacity(joint.len() * child.len());
            for a in &joint {
                for b in &child {
                    next.push(EnsembleEntry {
                        prob: a.prob * b.prob,
                        dist: a.dist.product(&b.dist),
                        label: a.label.concat(&b.label),
                    });
                }
            }
            joint = next;
        }
        let sbits = node.k() - l;
        let mut out = Vec::new();
        let mut pys = vec![0.0; 1 << node.k()];
        for j in &joint {
            kern.project(j.dist.probs(), &mut pys);
            for (s, ps, d) in Distribution::from_raw(node.k(), pys.clone()).conditional_split(l) {
                out.push(EnsembleEntry {
                    prob: j.prob * ps,
                    dist: d,
                    label: j.label.concat(&BitVector::from_index(s, sbits)),
                });
            }
        }
        if let Some(eps) = prune_eps {
            out.retain(|e| e.prob >= eps);
            let t: f64 = out.iter().map(|e| e.prob).sum();
            if t > 0.0 {
                out.iter_mut().for_each(|e| e.prob /= t);
            }
        }
        if out.len() > 1 << 22 {
            return Err(MpgError::TooLarge(format!("ensemble with {} entries", out.len())));
        }
        ens[node.input] = Some(out);
    }
    Ok(MessageEnsemble { entries: ens[g.root].take().expect("root computed") })
}

/// An MPG with precomputed node kernels for repeated trajectory sampling.
#[derive(Clone, Debug)]
pub struct CompiledMpg {
    mpg: Mpg,
    kernels: Vec<NodeKernel>,
}

/// Reusable buffers for [`CompiledMpg::sample_root`].
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    msgs: Vec<Vec<f64>>,
    joint: Vec<f64>,
    tmp: Vec<f64>,
    pys: Vec<f64>,
    ps: Vec<f64>,
}

impl CompiledMpg {
    pub fn mpg(&self) -> &Mpg {
        &self.mpg
    }

    /// Samples one BPQM trajectory: at every node the outcome `s` is drawn
    /// from its law and the conditional is passed up. Leaf `i` takes the
    /// distribution written by `leaf(i, buf)`. Returns the root distribution.
    pub fn sample_root<R: Rng + ?Sized, F: FnMut(usize, &mut Vec<f64>)>(
        &self,
        mut leaf: F,
        rng: &mut R,
        scratch: &mut Scratch,
    ) -> Vec<f64> {
        let g = &self.mpg;
        if scratch.msgs.len() != g.edges.len() {
            scratch.msgs = vec![Vec::new(); g.edges.len()];
        }
        for (i, &e) in g.leaves.iter().enumerate() {
            let buf = &mut scratch.msgs[e];
            buf.clear();
            leaf(i, buf);
            debug_assert_eq!(buf.len(), 1 << g.edges[e].width);
        }
        for &v in &g.post_order {
            let node = &g.nodes[v];
            let kern = &self.kernels[v];
            scratch.joint.clear();
            scratch.joint.push(1.0);
            for &o in &node.outputs {
                let child = &scratch.msgs[o];
                scratch.tmp.clear();
                for &a in &scratch.joint {
                    for &b in child {
                        scratch.tmp.push(a * b);
                    }
                }
                std::mem::swap(&mut scratch.joint, &mut scratch.tmp);
            }
            scratch.pys.resize(1 << kern.k, 0.0);
            kern.project(&scratch.joint, &mut scratch.pys);
            let sb = kern.k - kern.l;
            let ns = 1usize << sb;
            let ny = 1usize << kern.l;
            scratch.ps.clear();
            scratch.ps.resize(ns, 0.0);
            for y in 0..ny {
                for s in 0..ns {
                    scratch.ps[s] += scratch.pys[(y << sb) | s];
                }
            }
            let total: f64 = scratch.ps.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut s_pick = None;
            for (s, &p) in scratch.ps.iter().enumerate() {
                if p > 0.0 {
                    s_pick = Some(s);
                    if u < p {
                        break;
                    }
                    u -= p;
                }
            }
            let s = s_pick.expect("a node outcome has positive probability");
            let ps = scratch.ps[s];
            let out = &mut scratch.msgs[node.input];
            out.clear();
            out.extend((0..ny).map(|y| scratch.pys[(y << sb) | s] / ps));
        }
        scratch.msgs[g.root].clone()
    }
}

/// Runs one decoding of `spsc`-encoded `F[G](x)`: samples a trajectory of
/// node outcomes, then the conjugate-basis measurement at the root.
pub fn simulate_decode<R: Rng + ?Sized>(
    g: &CompiledMpg,
    leaf_dists: &[Distribution],
    x: &BitVector,
    rng: &mut R,
) -> Result<BitVector, MpgError> {
    g.mpg.check_leaves(leaf_dists)?;
    if x.len() != g.mpg.root_width() {
        return Err(MpgError::WidthMismatch("input length differs from the root width".into()));
    }
    let mut scratch = Scratch::default();
    let root = g.sample_root(|i, buf| buf.extend_from_slice(leaf_dists[i].probs()), rng, &mut scratch);
    let l = x.len();
    let mut w: Vec<f64> = root.iter().map(|p| p.sqrt()).collect();
    walsh_hadamard(&mut w);
    let xi = x.to_index();
    let scale = 1.0 / w.len() as f64;
    let mut u = rng.gen::<f64>();
    let mut pick = 0;
    for xh in 0..w.len() {
        let q = w[xi ^ xh] * w[xi ^ xh] * scale;
        pick = xh;
        if u < q {
            break;
        }
        u -= q;
    }
    Ok(BitVector::from_index(pick, l))
}

#[derive(Clone, Debug)]
pub struct DiscretizedEntry {
    pub label: BitVector,
    pub prob: f64,
    pub dist: Distribution,
    pub disc_prob: f64,
    pub disc_dist: Distribution,
}

/// Exact and discretized ensembles computed side by side.
#[derive(Clone, Debug)]
pub struct DiscretizationReport {
    pub entries: Vec<DiscretizedEntry>,
    /// `Σ_s p_s ‖D_s - D̃_s‖_1` over the exact branch probabilities.
    pub error: f64,
    /// `(2N + 3)^{|V|} 2^{N - B}`.
    pub bound: f64,
    pub bits: u32,
}

/// Message ensemble when every distribution is rounded to the grid: leaf
/// distributions, each joint child product and each node conditional.
///
/// A discretized conditional with zero mass is replaced by the uniform
/// distribution.
pub fn discretized_message_ensemble(
    g: &Mpg,
    leaf_dists: &[Distribution],
    grid: GridParams,
) -> Result<DiscretizationReport, MpgError> {
    g.check_leaves(leaf_dists)?;
    let mut ens: Vec<Option<Vec<DiscretizedEntry>>> = vec![None; g.edges.len()];
    for (&e, d) in g.leaves.iter().zip(leaf_dists) {
        ens[e] = Some(vec![DiscretizedEntry {
            label: BitVector::zeros(0),
            prob: 1.0,
            dist: d.clone(),
            disc_prob: 1.0,
            disc_dist: d.round_to_grid(grid),
        }]);
    }
    for &v in &g.post_order {
        let node = &g.nodes[v];
        let l = g.edges[node.input].width;
        let (k, n) = (node.k(), node.n());
        let kern = NodeKernel::new(&node.generator, l)?;
        let unit = Distribution::from_raw(0, vec![1.0]);
        let mut joint = vec![DiscretizedEntry {
            label: BitVector::zeros(0),
            prob: 1.0,
            dist: unit.clone(),
            disc_prob: 1.0,
            disc_dist: unit,
        }];
        for &o in &node.outputs {
            let child = ens[o].take().expect("children processed first");
            let mut next = Vec::with_capacity(joint.len() * child.len());
            for a in &joint {
                for b in &child {
                    next.push(DiscretizedEntry {
                        label: a.label.concat(&b.label),
                        prob: a.prob * b.prob,
                        dist: a.dist.product(&b.dist),
                        disc_prob: a.disc_prob * b.disc_prob,
                        disc_dist: a.disc_dist.product(&b.disc_dist),
                    });
                }
            }
            joint = next;
        }
        let sb = k - l;
        let ny = 1usize << l;
        let mut out = Vec::new();
        let mut pys = vec![0.0; 1 << k];
        let mut qys = vec![0.0; 1 << k];
        for j in &joint {
            debug_assert_eq!(j.dist.m(), n);
            let rounded = j.disc_dist.round_to_grid(grid);
            kern.project(j.dist.probs(), &mut pys);
            kern.project(rounded.probs(), &mut qys);
            for s in 0..1usize << sb {
                let ps: f64 = (0..ny).map(|y| pys[(y << sb) | s]).sum();
                if ps <= 0.0 {
                    continue;
                }
                let qs: f64 = (0..ny).map(|y| qys[(y << sb) | s]).sum();
                let exact = Distribution::from_raw(l, (0..ny).map(|y| pys[(y << sb) | s] / ps).collect());
                let disc = if qs > 0.0 {
                    Distribution::from_raw(l, (0..ny).map(|y| qys[(y << sb) | s] / qs).collect()).round_to_grid(grid)
                } else {
                    Distribution::uniform(l).round_to_grid(grid)
                };
                out.push(DiscretizedEntry {
                    label: j.label.concat(&BitVector::from_index(s, sb)),
                    prob: j.prob * ps,
                    dist: exact,
                    disc_prob: j.disc_prob * qs,
                    disc_dist: disc,
                });
            }
        }
        ens[node.input] = Some(out);
    }
    let entries = ens[g.root].take().expect("root computed");
    let error = entries.iter().map(|e| e.prob * e.dist.l1_distance(&e.disc_dist)).sum();
    let big_n = g.max_width() as f64;
    let bound = (2.0 * big_n + 3.0).powi(g.nodes.len() as i32) * (big_n - grid.bits as f64).exp2();
    Ok(DiscretizationReport { entries, error, bound, bits: grid.bits })
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonId {
    Str(String),
    Num(u64),
}

impl JsonId {
    fn key(&self) -> String {
        match self {
            JsonId::Str(s) => s.clone(),
            JsonId::Num(n) => n.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    id: JsonId,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: JsonId,
    in_edge: JsonId,
    out_edges: Vec<JsonId>,
    #[serde(rename = "G")]
    g: BitMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MpgJson {
    edges: Vec<EdgeJson>,
    nodes: Vec<NodeJson>,
    root: JsonId,
    leaves: Vec<JsonId>,
}

impl Mpg {
    pub fn to_json(&self) -> serde_json::Value {
        let j = MpgJson {
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson { id: JsonId::Str(e.name.clone()), n: e.width })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|v| NodeJson {
                    id: JsonId::Str(v.name.clone()),
                    in_edge: JsonId::Str(self.edges[v.input].name.clone()),
                    out_edges: v.outputs.iter().map(|&o| JsonId::Str(self.edges[o].name.clone())).collect(),
                    g: v.generator.clone(),
                    kind: v.kind.clone(),
                })
                .collect(),
            root: JsonId::Str(self.edges[self.root].name.clone()),
            leaves: self.leaves.iter().map(|&e| JsonId::Str(self.edges[e].name.clone())).collect(),
        };
        serde_json::to_value(j).expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Mpg, MpgError> {
        let j: MpgJson =
            serde_json::from_value(v.clone()).map_err(|e| MpgError::NotATree(format!("malformed MPG json: {e}")))?;
        let mut eidx = HashMap::new();
        let mut edges = Vec::new();
        for e in &j.edges {
            let key = e.id.key();
            if eidx.insert(key.clone(), edges.len()).is_some() {
                return Err(MpgError::DuplicateId(key));
            }
            edges.push(Edge { name: key, width: e.n });
        }
        let lookup = |id: &JsonId| eidx.get(&id.key()).copied().ok_or_else(|| MpgError::UnknownId(id.key()));
        let mut names = HashSet::new();
        let mut nodes = Vec::new();
        for v in &j.nodes {
            if !names.insert(v.id.key()) {
                return Err(MpgError::DuplicateId(v.id.key()));
            }
            nodes.push(Node {
                name: v.id.key(),
                input: lookup(&v.in_edge)?,
                outputs: v.out_edges.iter().map(lookup).collect::<Result<_, _>>()?,
                generator: v.g.clone(),
                kind: v.kind.clone(),
            });
        }
        let root = lookup(&j.root)?;
        let leaves = j.leaves.iter().map(lookup).collect::<Result<_, _>>()?;
        Mpg::new(edges, nodes, root, leaves)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bit(p: f64) -> Distribution {
        Distribution::bit(p).unwrap()
    }

    /// One node with generator `g` whose outputs are all width-1 leaves.
    fn star(g: BitMatrix, l: usize) -> Mpg {
        let mut b = MpgBuilder::new();
        let root = b.edge(l);
        let leaves: Vec<usize> = (0..g.ncols()).map(|_| b.edge(1)).collect();
        b.node(root, leaves.clone(), g, None);
        b.build(root, leaves).unwrap()
    }

    #[test]
    fn repetition_node_gives_convolution() {
        let g = BitMatrix::from_u8(&[&[1, 1]]);
        let joint = bit(0.1).product(&bit(0.1));
        let out = node_ensemble(&g, 1, &joint).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].dist.probs()[0] - 0.82).abs() < 1e-12);
        assert!((out[0].dist.probs()[1] - 0.18).abs() < 1e-12);
    }

    #[test]
    fn check_node_ensemble() {
        let g = BitMatrix::from_u8(&[&[1, 0], &[1, 1]]);
        let e = message_ensemble(&star(g, 1), &[bit(0.1), bit(0.1)], None).unwrap();
        assert_eq!(e.len(), 2);
        assert!((e.total() - 1.0).abs() < 1e-12);
        assert!((success_probability(&e) - 0.68).abs() < 1e-12);
    }

    #[test]
    fn zero_node_graph() {
        let mut b = MpgBuilder::new();
        let r = b.edge(1);
        let g = b.build(r, vec![r]).unwrap();
        let e = message_ensemble(&g, &[bit(0.1)], None).unwrap();
        assert_eq!(e.len(), 1);
        assert!((success_probability(&e) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_graphs() {
        let mut b = MpgBuilder::new();
        let r = b.edge(1);
        let a = b.edge(1);
        b.node(r, vec![a], BitMatrix::from_u8(&[&[1, 1]]), None);
        assert!(matches!(b.build(r, vec![a]), Err(MpgError::WidthMismatch(_))));

        let mut b = MpgBuilder::new();
        let r = b.edge(1);
        let a = b.edge(1);
        let c = b.edge(1);
        b.node(r, vec![a, c], BitMatrix::from_u8(&[&[1, 1], &[1, 1]]), None);
        assert!(matches!(b.build(r, vec![a, c]), Err(MpgError::RankDeficient(_))));

        let mut b = MpgBuilder::new();
        let r = b.edge(2);
        let a = b.edge(1);
        b.node(r, vec![a], BitMatrix::from_u8(&[&[1]]), None);
        assert!(matches!(b.build(r, vec![a]), Err(MpgError::DimensionOrder(_))));

        let mut b = MpgBuilder::new();
        let r = b.edge(1);
        let a = b.edge(1);
        b.node(r, vec![a], BitMatrix::from_u8(&[&[1]]), None);
        b.node(a, vec![r], BitMatrix::from_u8(&[&[1]]), None);
        assert!(matches!(b.build(r, vec![]), Err(MpgError::NotATree(_))));
    }

    #[test]
    fn encode_follows_generator() {
        let g = star(BitMatrix::from_u8(&[&[1, 0, 1], &[0, 1, 1]]), 1);
        let x = BitVector::from_bits(&[1]);
        let out = g.encode_with(&x, &BitVector::from_bits(&[1])).unwrap();
        assert_eq!(out.to_bits(), vec![1, 1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = g.sample_encode(&x, &mut rng).unwrap();
            assert_eq!(c.get(0) ^ c.get(1) ^ c.get(2), false);
            assert!(c.get(0));
        }
    }

    #[test]
    fn json_roundtrip() {
        let g = star(BitMatrix::from_u8(&[&[1, 0], &[1, 1]]), 1);
        let j = g.to_json();
        let back = Mpg::from_json(&j).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        let numeric = serde_json::json!({
            "edges": [{"id": 0, "n": 1}, {"id": 1, "n": 1}, {"id": 2, "n": 1}],
            "nodes": [{"id": 0, "in_edge": 0, "out_edges": [1, 2],
                       "G": {"rows": 1, "cols": 2, "data": [[1, 1]]}}],
            "root": 0, "leaves": [1, 2]
        });
        assert_eq!(Mpg::from_json(&numeric).unwrap().nodes().len(), 1);
    }

    #[test]
    fn sampled_trajectory_matches_ensemble_mean() {
        let g = star(BitMatrix::from_u8(&[&[1, 0], &[1, 1]]), 1);
        let c = g.compile().unwrap();
        let leaves = [bit(0.1), bit(0.2)];
        let ens = message_ensemble(&g, &leaves, None).unwrap();
        let exact = success_probability(&ens);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut scratch = Scratch::default();
        let trials = 20000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let d = c.sample_root(|i, b| b.extend_from_slice(leaves[i].probs()), &mut rng, &mut scratch);
            acc += Distribution::from_raw(1, d).guess_success();
        }
        assert!((acc / trials as f64 - exact).abs() < 0.01);
    }

    #[test]
    fn label_layout_counts_randomness() {
        let g = star(BitMatrix::from_u8(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]), 1);
        assert_eq!(g.label_layout(), vec![0, 0]);
        assert_eq!(g.outcome_count(), 4);
    }
}

//! Forney-style factor graphs of linear constraints and their conversion to
//! message-passing graphs.
//!
//! A factor is a linear relation over the concatenated bits of its incident
//! edges, stored as a basis of the permitted assignments. An edge with one
//! incident factor is external; the caller picks which external edges become
//! MPG leaves and which one carries the root.
//!
//! Orienting a factor towards the root turns its relation into a channel
//! `F_{l,G}`: the rows of `G` are one representative output per input unit
//! vector followed by a basis of the outputs compatible with input zero. This
//! works exactly when the input coordinates are unconstrained and no nonzero
//! input is compatible with the all-zero output.

use super::GraphError;
use crate::gf2::{BitMatrix, BitVector, Reducer};
use crate::mpg::{Edge, Mpg, Node};
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Clone, Debug, PartialEq)]
pub enum FactorKind {
    Equality,
    Check,
    /// A section of an MSGM-derived trellis.
    Section(super::trellis::SectionInfo),
    /// A group of cycle nodes folded together.
    CycleMerged,
    Generic,
}

#[derive(Clone, Debug)]
pub struct Factor {
    pub edges: Vec<usize>,
    pub relation: BitMatrix,
    pub kind: FactorKind,
}

#[derive(Clone, Debug)]
pub struct FgEdge {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    pub edges: Vec<FgEdge>,
    pub factors: Vec<Option<Factor>>,
}

/// Where the MPG root sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootMode {
    /// Copy the value on this external edge with an extra equality node; the
    /// edge itself stays a leaf.
    Copy(usize),
    /// This external edge is the root and is not a leaf.
    Direct(usize),
}

/// Equality relation on `d` one-bit edges.
pub fn equality_relation(d: usize) -> BitMatrix {
    BitMatrix::from_rows(vec![BitVector::ones(d)], d).expect("width")
}

/// Even-parity relation on `d` one-bit edges.
pub fn check_relation(d: usize) -> BitMatrix {
    BitMatrix::from_rows(vec![BitVector::ones(d)], d).expect("width").kernel()
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_edge(&mut self, name: impl Into<String>, width: usize) -> usize {
        self.edges.push(FgEdge { name: name.into(), width });
        self.edges.len() - 1
    }

    pub fn add_factor(&mut self, edges: Vec<usize>, relation: BitMatrix, kind: FactorKind) -> usize {
        debug_assert_eq!(relation.ncols(), edges.iter().map(|&e| self.edges[e].width).sum::<usize>());
        self.factors.push(Some(Factor { edges, relation, kind }));
        self.factors.len() - 1
    }

    pub fn factor(&self, f: usize) -> &Factor {
        self.factors[f].as_ref().expect("live factor")
    }

    pub fn live_factors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.factors.len()).filter(|&f| self.factors[f].is_some())
    }

    /// Factors incident to each edge, with multiplicity.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.edges.len()];
        for f in self.live_factors() {
            for &e in &self.factor(f).edges {
                inc[e].push(f);
            }
        }
        inc
    }

    /// Column offset of each incident edge inside a factor's relation.
    fn offsets(&self, f: &Factor) -> Vec<usize> {
        let mut acc = 0;
        f.edges
            .iter()
            .map(|&e| {
                let o = acc;
                acc += self.edges[e].width;
                o
            })
            .collect()
    }

    fn columns_of(&self, f: &Factor, e: usize) -> Vec<usize> {
        let offs = self.offsets(f);
        let i = f.edges.iter().position(|&x| x == e).expect("incident edge");
        (offs[i]..offs[i] + self.edges[e].width).collect()
    }

    /// Cyclomatic number `|E_int| - |F| + components` of the factor graph.
    pub fn cycle_rank(&self) -> usize {
        let inc = self.incidence();
        let nf = self.live_factors().count();
        let internal = inc.iter().filter(|v| v.len() == 2).count();
        let comps = self.components().len();
        (internal + comps).saturating_sub(nf)
    }

    /// Connected components of live factors.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let inc = self.incidence();
        let mut comp: HashMap<usize, usize> = HashMap::new();
        let mut out = Vec::new();
        for start in self.live_factors() {
            if comp.contains_key(&start) {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp.insert(start, id);
            let mut stack = vec![start];
            while let Some(f) = stack.pop() {
                for &e in &self.factor(f).edges {
                    for &g in &inc[e] {
                        if let std::collections::hash_map::Entry::Vacant(v) = comp.entry(g) {
                            v.insert(id);
                            members.push(g);
                            stack.push(g);
                        }
                    }
                }
            }
            out.push(members);
        }
        out
    }

    /// Replaces factors `a` and `b` by one factor whose relation is the
    /// projection of their joint solutions onto the edges they do not share.
    pub fn merge(&mut self, a: usize, b: usize, kind: FactorKind) -> usize {
        let fa = self.factors[a].take().expect("live factor");
        let fb = self.factors[b].take().expect("live factor");
        let (edges, relation) = self.contract(&fa, &fb);
        self.add_factor(edges, relation, kind)
    }

    fn contract(&self, fa: &Factor, fb: &Factor) -> (Vec<usize>, BitMatrix) {
        let mut union: Vec<usize> = fa.edges.clone();
        for &e in &fb.edges {
            if !union.contains(&e) {
                union.push(e);
            }
        }
        let mut offs = HashMap::new();
        let mut acc = 0;
        for &e in &union {
            offs.insert(e, acc);
            acc += self.edges[e].width;
        }
        let total = acc;
        let mut checks = BitMatrix::zeros(0, total);
        for f in [fa, fb] {
            let local_off = self.offsets(f);
            let h = f.relation.kernel();
            for row in h.rows() {
                let mut lifted = BitVector::zeros(total);
                for (i, &e) in f.edges.iter().enumerate() {
                    for w in 0..self.edges[e].width {
                        if row.get(local_off[i] + w) {
                            lifted.set(offs[&e] + w, true);
                        }
                    }
                }
                checks.push_row(lifted);
            }
        }
        let joint = checks.kernel();
        let shared: HashSet<usize> = fa.edges.iter().filter(|e| fb.edges.contains(e)).copied().collect();
        let kept: Vec<usize> = union.iter().filter(|e| !shared.contains(e)).copied().collect();
        let mut cols = Vec::new();
        for &e in &kept {
            cols.extend(offs[&e]..offs[&e] + self.edges[e].width);
        }
        let projected = joint.select_columns(&cols).independent_rows();
        (kept, projected)
    }

    /// Joins edges `e1` and `e2`, both running between the same two factors,
    /// into one edge carrying the bits of `e1` followed by those of `e2`.
    pub fn bundle(&mut self, e1: usize, e2: usize) -> usize {
        let name = format!("{}+{}", self.edges[e1].name, self.edges[e2].name);
        let width = self.edges[e1].width + self.edges[e2].width;
        let new = self.add_edge(name, width);
        for f in 0..self.factors.len() {
            let Some(fac) = self.factors[f].as_ref() else { continue };
            if !fac.edges.contains(&e1) {
                continue;
            }
            assert!(fac.edges.contains(&e2), "bundled edges must share both ends");
            let offs = self.offsets(fac);
            let mut perm = Vec::new();
            let mut edges = Vec::new();
            for (i, &e) in fac.edges.iter().enumerate() {
                if e == e2 {
                    continue;
                }
                if e == e1 {
                    let j = fac.edges.iter().position(|&x| x == e2).expect("incident");
                    perm.extend(offs[i]..offs[i] + self.edges[e1].width);
                    perm.extend(offs[j]..offs[j] + self.edges[e2].width);
                    edges.push(new);
                } else {
                    perm.extend(offs[i]..offs[i] + self.edges[e].width);
                    edges.push(e);
                }
            }
            let relation = fac.relation.select_columns(&perm);
            let kind = fac.kind.clone();
            self.factors[f] = Some(Factor { edges, relation, kind });
        }
        new
    }

    /// Splits every equality or check factor of degree above three into a
    /// chain of degree-three factors of the same type. `keep` lists, per
    /// factor, edges that must stay together on the first piece.
    pub fn split_to_degree3(&mut self, keep: &HashMap<usize, Vec<usize>>) {
        let ids: Vec<usize> = self.live_factors().collect();
        for f in ids {
            let fac = self.factor(f).clone();
            if !matches!(fac.kind, FactorKind::Equality | FactorKind::Check) || fac.edges.len() <= 3 {
                continue;
            }
            if fac.edges.iter().any(|&e| self.edges[e].width != 1) {
                continue;
            }
            let mut order: Vec<usize> = keep.get(&f).cloned().unwrap_or_default();
            for &e in &fac.edges {
                if !order.contains(&e) {
                    order.push(e);
                }
            }
            self.factors[f] = None;
            let rel = |d: usize| match fac.kind {
                FactorKind::Equality => equality_relation(d),
                _ => check_relation(d),
            };
            let mut rest = order;
            while rest.len() > 3 {
                let t = self.add_edge(format!("t{}", self.edges.len()), 1);
                self.add_factor(vec![rest[0], rest[1], t], rel(3), fac.kind.clone());
                rest = std::iter::once(t).chain(rest[2..].iter().copied()).collect();
            }
            let d = rest.len();
            self.add_factor(rest, rel(d), fac.kind.clone());
        }
    }

    /// Converts the factor graph, which must be a forest, into an MPG.
    ///
    /// `leaves` lists the external edges that become leaves, in output order.
    /// Components not containing the root are fed by a fresh uniform bit
    /// through a chain of spawn nodes, and external leaves with no factor are
    /// emitted the same way.
    pub fn to_mpg(&self, root: RootMode, leaves: &[usize]) -> Result<Mpg, GraphError> {
        let mut g = self.clone();
        let inc = g.incidence();
        for (e, fs) in inc.iter().enumerate() {
            if fs.len() > 2 || (fs.len() == 2 && fs[0] == fs[1]) {
                return Err(GraphError::NotATree(format!("edge {} has a malformed incidence", g.edges[e].name)));
            }
        }
        let leaf_set: HashSet<usize> = leaves.iter().copied().collect();
        let root_edge = match root {
            RootMode::Copy(e) | RootMode::Direct(e) => e,
        };
        for &e in leaves.iter().chain(std::iter::once(&root_edge)) {
            if inc[e].len() > 1 {
                return Err(GraphError::InvalidInput(format!("edge {} is not external", g.edges[e].name)));
            }
        }
        if matches!(root, RootMode::Direct(_)) && leaf_set.contains(&root_edge) {
            return Err(GraphError::InvalidInput("a direct root cannot be a leaf".into()));
        }
        // Single-edge factors on leaves are either free bits or constant zeros.
        let mut constant = HashSet::new();
        for f in g.live_factors().collect::<Vec<_>>() {
            let fac = g.factor(f);
            let on_leaf = leaf_set.contains(&fac.edges[0]) && !(fac.edges[0] == root_edge && matches!(root, RootMode::Direct(_)));
            if fac.edges.len() == 1 && on_leaf {
                let e = fac.edges[0];
                let w = g.edges[e].width;
                if fac.relation.rank() == w {
                    g.factors[f] = None;
                } else if fac.relation.rank() == 0 && w == 1 && e != root_edge {
                    g.factors[f] = None;
                    constant.insert(e);
                }
            }
        }
        if g.cycle_rank() != 0 {
            return Err(GraphError::NotATree("factor graph has a cycle".into()));
        }
        let inc = g.incidence();
        let comps = g.components();
        let comp_of: HashMap<usize, usize> =
            comps.iter().enumerate().flat_map(|(c, fs)| fs.iter().map(move |&f| (f, c))).collect();
        let root_comp = inc[root_edge].first().map(|f| comp_of[f]);
        if matches!(root, RootMode::Direct(_)) && root_comp.is_none() {
            return Err(GraphError::InvalidInput("direct root edge has no factor".into()));
        }

        let mut em = Emitter::new(&g, &inc);
        let leaf_mpg: Vec<usize> = leaves.iter().map(|&e| em.edge(g.edges[e].name.clone(), g.edges[e].width)).collect();
        for (&e, &m) in leaves.iter().zip(&leaf_mpg) {
            em.leaf_of.insert(e, m);
        }

        // Extras hanging off the spawn chain, ordered by first leaf.
        enum Extra {
            Free(usize),
            Zero(usize),
            Comp(usize),
        }
        let mut extras: BTreeMap<usize, Extra> = BTreeMap::new();
        let mut seen_comp = HashSet::new();
        for (pos, &e) in leaves.iter().enumerate() {
            if e == root_edge {
                continue;
            }
            if constant.contains(&e) {
                extras.insert(pos, Extra::Zero(e));
            } else if let Some(&f) = inc[e].first() {
                let c = comp_of[&f];
                if Some(c) != root_comp && seen_comp.insert(c) {
                    extras.insert(pos, Extra::Comp(c));
                }
            } else {
                extras.insert(pos, Extra::Free(e));
            }
        }
        for (c, fs) in comps.iter().enumerate() {
            if Some(c) != root_comp && !seen_comp.contains(&c) {
                return Err(GraphError::InvalidInput(format!("component with {} factors has no leaf", fs.len())));
            }
        }

        let l = g.edges[root_edge].width;
        let (entry, root_mpg) = match root {
            RootMode::Copy(e) if leaf_set.contains(&e) && inc[e].is_empty() => {
                let leaf = em.leaf_of[&e];
                if extras.is_empty() {
                    (None, leaf)
                } else {
                    (Some((EntryKind::Bare, leaf)), em.edge("z".into(), 1))
                }
            }
            RootMode::Copy(_) => {
                let z = em.edge("z".into(), 1);
                if extras.is_empty() {
                    (Some((EntryKind::Copy, z)), z)
                } else {
                    let inner = em.edge("z'".into(), 1);
                    (Some((EntryKind::Copy, inner)), z)
                }
            }
            RootMode::Direct(e) => {
                let r = em.edge(g.edges[e].name.clone(), l);
                if extras.is_empty() {
                    (Some((EntryKind::Direct, r)), r)
                } else {
                    let inner = em.edge(format!("{}'", g.edges[e].name), l);
                    (Some((EntryKind::Direct, inner)), r)
                }
            }
        };

        // Spawn chain from the root to the entry edge.
        let mut line = root_mpg;
        let count = extras.len();
        for (idx, (_, extra)) in extras.into_iter().enumerate() {
            let next = if idx + 1 == count { entry.expect("entry exists with extras").1 } else { em.edge(format!("w{idx}"), l) };
            match extra {
                Extra::Free(e) => {
                    let leaf = em.leaf_of[&e];
                    em.nodes.push(spawn_node(line, next, leaf, l, true));
                }
                Extra::Zero(e) => {
                    let leaf = em.leaf_of[&e];
                    em.nodes.push(spawn_node(line, next, leaf, l, false));
                }
                Extra::Comp(c) => {
                    let anchor = em.edge(format!("a{c}"), 1);
                    em.nodes.push(spawn_node(line, next, anchor, l, true));
                    let candidates: Vec<usize> = leaves
                        .iter()
                        .copied()
                        .filter(|&e| inc[e].first().map(|f| comp_of[f]) == Some(c))
                        .collect();
                    let mut done = false;
                    let mut last_err = None;
                    for p in candidates {
                        let mut trial = em.clone();
                        match trial.emit_copy(p, anchor) {
                            Ok(()) => {
                                em = trial;
                                done = true;
                                break;
                            }
                            Err(e) => last_err = Some(e),
                        }
                    }
                    if !done {
                        return Err(last_err.unwrap_or_else(|| GraphError::InvalidInput("empty component".into())));
                    }
                }
            }
            line = next;
        }
        match entry {
            None => {}
            Some((EntryKind::Bare, _)) => {}
            Some((EntryKind::Copy, inp)) => em.emit_copy(root_edge, inp)?,
            Some((EntryKind::Direct, inp)) => {
                let f = inc[root_edge][0];
                em.emit_factor(f, root_edge, inp)?;
            }
        }
        em.finish(root_mpg, leaf_mpg)
    }
}

#[derive(Clone, Copy)]
enum EntryKind {
    Bare,
    Copy,
    Direct,
}

fn spawn_node(input: usize, next: usize, extra: usize, l: usize, random: bool) -> Node {
    let k = if random { l + 1 } else { l };
    let mut g = BitMatrix::zeros(k, l + 1);
    for i in 0..l {
        g.set(i, i, true);
    }
    if random {
        g.set(l, l, true);
    }
    Node {
        name: String::new(),
        input,
        outputs: vec![next, extra],
        generator: g,
        kind: Some(if random { "spawn" } else { "zero" }.into()),
    }
}

#[derive(Clone)]
struct Emitter<'a> {
    g: &'a FactorGraph,
    inc: &'a [Vec<usize>],
    edges: Vec<Edge>,
    nodes: Vec<Node>,
    leaf_of: HashMap<usize, usize>,
    visited: HashSet<usize>,
}

impl<'a> Emitter<'a> {
    fn new(g: &'a FactorGraph, inc: &'a [Vec<usize>]) -> Self {
        Emitter { g, inc, edges: Vec::new(), nodes: Vec::new(), leaf_of: HashMap::new(), visited: HashSet::new() }
    }

    fn edge(&mut self, name: String, width: usize) -> usize {
        self.edges.push(Edge { name, width });
        self.edges.len() - 1
    }

    /// Copy node on external edge `e`: leaf `e` plus the factor behind it.
    fn emit_copy(&mut self, e: usize, input: usize) -> Result<(), GraphError> {
        let f = *self.inc[e].first().ok_or_else(|| GraphError::InvalidInput("copy of a bare edge".into()))?;
        let leaf = *self.leaf_of.get(&e).ok_or_else(|| GraphError::InvalidInput("copied edge is not a leaf".into()))?;
        let inner = self.edge(format!("{}'", self.g.edges[e].name), 1);
        self.nodes.push(Node {
            name: String::new(),
            input,
            outputs: vec![leaf, inner],
            generator: BitMatrix::from_u8(&[&[1, 1]]),
            kind: Some("copy".into()),
        });
        self.emit_factor(f, e, inner)
    }

    fn emit_factor(&mut self, f: usize, in_edge: usize, in_mpg: usize) -> Result<(), GraphError> {
        if !self.visited.insert(f) {
            return Err(GraphError::NotATree("factor reached twice".into()));
        }
        let fac = self.g.factor(f);
        let outs: Vec<usize> = fac.edges.iter().copied().filter(|&e| e != in_edge).collect();
        let in_cols = self.g.columns_of(fac, in_edge);
        let mut out_cols = Vec::new();
        for &o in &outs {
            out_cols.extend(self.g.columns_of(fac, o));
        }
        let (gen, kind) = node_generator(self.g, fac, in_edge, &outs, &in_cols, &out_cols)?;
        let mut out_mpg = Vec::with_capacity(outs.len());
        let mut pending = Vec::new();
        for &o in &outs {
            if let Some(&leaf) = self.leaf_of.get(&o) {
                out_mpg.push(leaf);
                continue;
            }
            let others: Vec<usize> = self.inc[o].iter().copied().filter(|&x| x != f).collect();
            match others.first() {
                Some(&next) => {
                    let m = self.edge(self.g.edges[o].name.clone(), self.g.edges[o].width);
                    out_mpg.push(m);
                    pending.push((next, o, m));
                }
                None => {
                    return Err(GraphError::InvalidInput(format!(
                        "external edge {} is neither a leaf nor the root",
                        self.g.edges[o].name
                    )))
                }
            }
        }
        self.nodes.push(Node { name: String::new(), input: in_mpg, outputs: out_mpg, generator: gen, kind: Some(kind) });
        for (next, o, m) in pending {
            self.emit_factor(next, o, m)?;
        }
        Ok(())
    }

    /// Elides trivial nodes, drops unused edges and validates.
    fn finish(mut self, mut root: usize, leaves: Vec<usize>) -> Result<Mpg, GraphError> {
        loop {
            let Some(v) = self.nodes.iter().position(|n| {
                n.outputs.len() == 1 && n.k() == n.n() && n.generator == BitMatrix::identity(n.n())
            }) else {
                break;
            };
            let node = self.nodes.remove(v);
            let (inp, out) = (node.input, node.outputs[0]);
            if root == inp {
                root = out;
            }
            for p in self.nodes.iter_mut() {
                for o in p.outputs.iter_mut() {
                    if *o == inp {
                        *o = out;
                    }
                }
            }
        }
        let mut used = vec![false; self.edges.len()];
        used[root] = true;
        for &l in &leaves {
            used[l] = true;
        }
        for n in &self.nodes {
            used[n.input] = true;
            for &o in &n.outputs {
                used[o] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.edges.len()];
        let mut edges = Vec::new();
        for (i, e) in self.edges.into_iter().enumerate() {
            if used[i] {
                remap[i] = edges.len();
                edges.push(e);
            }
        }
        let mut names: HashMap<String, usize> = HashMap::new();
        for e in edges.iter_mut() {
            let c = names.entry(e.name.clone()).or_insert(0);
            if *c > 0 {
                e.name = format!("{}#{}", e.name, c);
            }
            *c += 1;
        }
        let nodes = self
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, mut n)| {
                n.name = format!("v{i}");
                n.input = remap[n.input];
                n.outputs.iter_mut().for_each(|o| *o = remap[*o]);
                n
            })
            .collect();
        let leaves = leaves.into_iter().map(|l| remap[l]).collect();
        Ok(Mpg::new(edges, nodes, remap[root], leaves)?)
    }
}

/// Relation columns reordered as `[input | outputs]`.
fn oriented_relation(rel: &BitMatrix, in_cols: &[usize], out_cols: &[usize]) -> BitMatrix {
    let cols: Vec<usize> = in_cols.iter().chain(out_cols).copied().collect();
    rel.select_columns(&cols)
}

/// Derives `G` from a relation with the input in the first `l` columns.
pub fn derive_generator(oriented: &BitMatrix, l: usize) -> Result<BitMatrix, GraphError> {
    let n = oriented.ncols() - l;
    let (r, pivots) = oriented.rref();
    if pivots.iter().take_while(|&&p| p < l).count() != l {
        return Err(GraphError::InvalidNode("input bits are constrained by the factor".into()));
    }
    let gen_rows: Vec<BitVector> = r.rows().iter().map(|row| row.slice(l, l + n)).collect();
    let gen = BitMatrix::from_rows(gen_rows, n)?;
    if gen.rank() != gen.nrows() {
        return Err(GraphError::InvalidNode("a nonzero input is invisible in the outputs".into()));
    }
    Ok(gen)
}

/// Whether `G` realizes the oriented relation as the channel `F_{l,G}`.
pub fn realizes(oriented: &BitMatrix, l: usize, gen: &BitMatrix) -> bool {
    if gen.ncols() + l != oriented.ncols() || gen.nrows() < l {
        return false;
    }
    let rows: Vec<BitVector> = gen
        .rows()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let head = if i < l { BitVector::unit(l, i) } else { BitVector::zeros(l) };
            head.concat(g)
        })
        .collect();
    let m = BitMatrix::from_rows(rows, oriented.ncols()).expect("width");
    m.rank() == gen.nrows() && m.same_row_space(oriented)
}

fn node_generator(
    g: &FactorGraph,
    fac: &Factor,
    in_edge: usize,
    outs: &[usize],
    in_cols: &[usize],
    out_cols: &[usize],
) -> Result<(BitMatrix, String), GraphError> {
    let l = in_cols.len();
    let oriented = oriented_relation(&fac.relation, in_cols, out_cols);
    let derived = derive_generator(&oriented, l)?;
    let n = out_cols.len();
    let candidate: Option<(BitMatrix, String)> = match &fac.kind {
        FactorKind::Equality if l == 1 => Some((BitMatrix::from_rows(vec![BitVector::ones(n)], n)?, "equality".into())),
        FactorKind::Check if l == 1 => {
            let mut rows = vec![BitVector::unit(n, 0)];
            for j in 1..n {
                let mut r = BitVector::unit(n, 0);
                r.set(j, true);
                rows.push(r);
            }
            Some((BitMatrix::from_rows(rows, n)?, "check".into()))
        }
        FactorKind::Section(info) => super::trellis::case_generator(g, info, in_edge, outs),
        FactorKind::CycleMerged => super::unicyclic::match_merged_form(&oriented, l),
        _ => None,
    };
    match candidate {
        Some((gen, kind)) if realizes(&oriented, l, &gen) => Ok((gen, kind)),
        Some((_, kind)) => Ok((derived, format!("mismatch:{kind}"))),
        None => Ok((derived, "derived".into())),
    }
}

/// Whether `v` lies in the row space of `m`.
pub(crate) fn in_span(m: &BitMatrix, v: &BitVector) -> bool {
    let mut red = Reducer::new(m.ncols());
    for r in m.rows() {
        red.insert(r.clone());
    }
    red.reduce(v.clone()).is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_check_generator_realizes_relation() {
        let rel = check_relation(3);
        let g = derive_generator(&rel, 1).unwrap();
        assert_eq!(g.nrows(), 2);
        assert!(realizes(&rel, 1, &g));
        assert!(realizes(&rel, 1, &BitMatrix::from_u8(&[&[1, 0], &[1, 1]])));
        assert!(!realizes(&rel, 1, &BitMatrix::from_u8(&[&[1, 1], &[1, 0]])));
    }

    #[test]
    fn merging_two_checks_gives_parity_on_outer_edges() {
        let mut fg = FactorGraph::new();
        let e: Vec<usize> = (0..5).map(|i| fg.add_edge(format!("e{i}"), 1)).collect();
        let a = fg.add_factor(vec![e[0], e[1], e[2]], check_relation(3), FactorKind::Check);
        let b = fg.add_factor(vec![e[2], e[3], e[4]], check_relation(3), FactorKind::Check);
        let m = fg.merge(a, b, FactorKind::Generic);
        let f = fg.factor(m);
        assert_eq!(f.edges, vec![e[0], e[1], e[3], e[4]]);
        assert!(f.relation.same_row_space(&check_relation(4)));
    }

    #[test]
    fn constrained_input_is_rejected() {
        let rel = BitMatrix::from_u8(&[&[0, 1]]);
        assert!(derive_generator(&rel, 1).is_err());
        let rel = BitMatrix::from_u8(&[&[1, 0]]);
        assert!(derive_generator(&rel, 1).is_err());
    }

    #[test]
    fn span_membership() {
        let m = BitMatrix::from_u8(&[&[1, 1, 0], &[0, 1, 1]]);
        assert!(in_span(&m, &BitVector::from_bits(&[1, 0, 1])));
        assert!(!in_span(&m, &BitVector::from_bits(&[1, 0, 0])));
    }
}

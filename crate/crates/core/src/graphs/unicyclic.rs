//! MPGs from Tanner graphs with exactly one cycle.
//!
//! Degree-2 nodes are spliced out and neighbours of equal type fused, so the
//! cycle alternates between equality and check nodes of degree three. The
//! cycle is then folded from the node closest to the root: opposite nodes are
//! merged into pairs and the three bottom nodes into one, with the parallel
//! edges this creates bundled into two-bit edges.

use super::factor::{check_relation, equality_relation, FactorGraph, FactorKind, RootMode};
use super::tanner::{forney_from_parity, tree_tanner_mpg};
use super::GraphError;
use crate::gf2::BitMatrix;
use crate::mpg::Mpg;
use std::collections::{HashMap, HashSet, VecDeque};

/// MPG for bit `i` (1-based) of the code with parity-check matrix `H`, whose
/// Tanner graph (after dropping redundant checks) has at most one cycle.
///
/// Every node has `n_v <= 4`.
pub fn unicyclic_mpg(h: &BitMatrix, i: usize) -> Result<Mpg, GraphError> {
    let f = forney_from_parity(h)?;
    if i == 0 || i > f.bits.len() {
        return Err(GraphError::InvalidInput(format!("bit {i} out of range")));
    }
    match f.graph.cycle_rank() {
        0 => return tree_tanner_mpg(h, i),
        1 => {}
        r => return Err(GraphError::NotUnicyclic(format!("cycle rank {r}"))),
    }
    let mut g = f.graph;
    let bits = f.bits;
    let root_edge = bits[i - 1];
    simplify(&mut g);
    if g.cycle_rank() == 0 {
        g.split_to_degree3(&HashMap::new());
        return g.to_mpg(RootMode::Copy(root_edge), &bits);
    }

    let (cycle, _) = locate_cycle(&g, root_edge, &bits)?;
    let inc = g.incidence();
    let mut keep = HashMap::new();
    for &c in &cycle {
        let ce: Vec<usize> =
            g.factor(c).edges.iter().copied().filter(|&e| inc[e].len() == 2 && inc[e].iter().all(|x| cycle.contains(x))).collect();
        keep.insert(c, ce);
    }
    g.split_to_degree3(&keep);
    let (cycle, ordered) = locate_cycle(&g, root_edge, &bits)?;
    debug_assert_eq!(cycle.len(), ordered.len());
    fold(&mut g, &ordered)?;
    g.to_mpg(RootMode::Copy(root_edge), &bits)
}

/// Splices out degree-2 factors and fuses adjacent factors of equal type
/// until neither applies.
fn simplify(g: &mut FactorGraph) {
    loop {
        let inc = g.incidence();
        let mut changed = false;
        for f in g.live_factors().collect::<Vec<_>>() {
            let fac = g.factor(f);
            let internal: Vec<usize> = fac.edges.iter().copied().filter(|&e| inc[e].len() == 2).collect();
            if fac.edges.len() == 2 && !internal.is_empty() && fac.edges.iter().all(|&e| g.edges[e].width == 1) {
                let e = internal[0];
                let nb = *inc[e].iter().find(|&&x| x != f).expect("internal edge");
                let kind = g.factor(nb).kind.clone();
                let m = g.merge(nb, f, kind);
                retype(g, m);
                changed = true;
                break;
            }
            let fused = internal.iter().find_map(|&e| {
                let nb = *inc[e].iter().find(|&&x| x != f)?;
                let same = matches!(
                    (&fac.kind, &g.factor(nb).kind),
                    (FactorKind::Equality, FactorKind::Equality) | (FactorKind::Check, FactorKind::Check)
                );
                same.then_some(nb)
            });
            if let Some(nb) = fused {
                let kind = fac.kind.clone();
                let m = g.merge(f, nb, kind);
                retype(g, m);
                changed = true;
                break;
            }
            // Two-node cycle between an equality and a check node.
            let mut seen = HashSet::new();
            let parallel = internal.iter().find_map(|&e| {
                let nb = *inc[e].iter().find(|&&x| x != f)?;
                (!seen.insert(nb)).then_some(nb)
            });
            if let Some(nb) = parallel {
                if split_two_cycle(g, f, nb) {
                    changed = true;
                    break;
                }
                let m = g.merge(f, nb, FactorKind::Generic);
                retype(g, m);
                changed = true;
                break;
            }
        }
        if !changed {
            return;
        }
    }
}

/// An equality node and a check node joined by two bit edges: the check sees
/// the shared value twice, so it no longer constrains it. The pair becomes an
/// equality over the remaining equality edges and a separate check over the
/// remaining check edges.
fn split_two_cycle(g: &mut FactorGraph, a: usize, b: usize) -> bool {
    let (eq, ck) = match (&g.factor(a).kind, &g.factor(b).kind) {
        (FactorKind::Equality, FactorKind::Check) => (a, b),
        (FactorKind::Check, FactorKind::Equality) => (b, a),
        _ => return false,
    };
    let (fe, fc) = (g.factor(eq), g.factor(ck));
    let shared: Vec<usize> = fe.edges.iter().copied().filter(|e| fc.edges.contains(e)).collect();
    let rest = |edges: &[usize]| -> Vec<usize> { edges.iter().copied().filter(|e| !shared.contains(e)).collect() };
    let (re, rc) = (rest(&fe.edges), rest(&fc.edges));
    let unit = fe.edges.iter().chain(&fc.edges).all(|&e| g.edges[e].width == 1);
    if shared.len() != 2 || !unit || rc.len() < 2 {
        return false;
    }
    g.factors[eq] = None;
    g.factors[ck] = None;
    if !re.is_empty() {
        g.add_factor(re.clone(), equality_relation(re.len()), FactorKind::Equality);
    }
    g.add_factor(rc.clone(), check_relation(rc.len()), FactorKind::Check);
    true
}

/// Drops empty factors and demotes a factor whose relation no longer has
/// the shape its kind promises.
fn retype(g: &mut FactorGraph, f: usize) {
    let fac = g.factor(f);
    if fac.edges.is_empty() {
        g.factors[f] = None;
        return;
    }
    let d: usize = fac.edges.iter().map(|&e| g.edges[e].width).sum();
    let ok = match fac.kind {
        FactorKind::Equality => d == fac.edges.len() && fac.relation.same_row_space(&equality_relation(d)),
        FactorKind::Check => d == fac.edges.len() && fac.relation.same_row_space(&check_relation(d)),
        _ => true,
    };
    if !ok {
        g.factors[f].as_mut().expect("live").kind = FactorKind::Generic;
    }
}

/// Factors on the cycle, and the cycle listed from the factor nearest to the
/// root edge.
fn locate_cycle(g: &FactorGraph, root_edge: usize, bits: &[usize]) -> Result<(HashSet<usize>, Vec<usize>), GraphError> {
    let inc = g.incidence();
    let mut alive: HashSet<usize> = g.live_factors().collect();
    let internal_degree = |f: usize, alive: &HashSet<usize>| {
        g.factor(f).edges.iter().filter(|&&e| inc[e].len() == 2 && inc[e].iter().all(|x| alive.contains(x))).count()
    };
    loop {
        let prune: Vec<usize> = alive.iter().copied().filter(|&f| internal_degree(f, &alive) <= 1).collect();
        if prune.is_empty() {
            break;
        }
        for f in prune {
            alive.remove(&f);
        }
    }
    if alive.is_empty() {
        return Err(GraphError::NotUnicyclic("no cycle found".into()));
    }
    // Fold from the target bit, or, when the cycle lies in another component,
    // from the first bit of that component (where it will be anchored).
    let comp_of = |f: usize| g.components().into_iter().position(|c| c.contains(&f));
    let cycle_comp = comp_of(*alive.iter().next().expect("nonempty"));
    let start = match inc[root_edge].first() {
        Some(&f) if comp_of(f) == cycle_comp => f,
        _ => bits
            .iter()
            .find_map(|&b| inc[b].first().copied().filter(|&f| comp_of(f) == cycle_comp))
            .ok_or_else(|| GraphError::InvalidInput("cycle has no code bit attached".into()))?,
    };
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    let mut top = None;
    while let Some(f) = queue.pop_front() {
        if alive.contains(&f) {
            top = Some(f);
            break;
        }
        for &e in &g.factor(f).edges {
            for &x in &inc[e] {
                if seen.insert(x) {
                    queue.push_back(x);
                }
            }
        }
    }
    let top = top.ok_or_else(|| GraphError::InvalidInput("cycle is not connected to the target bit".into()))?;
    let mut order = vec![top];
    let mut prev_edge = None;
    loop {
        let cur = *order.last().expect("nonempty");
        let next = g.factor(cur).edges.iter().copied().find_map(|e| {
            if Some(e) == prev_edge || inc[e].len() != 2 {
                return None;
            }
            let other = *inc[e].iter().find(|&&x| x != cur)?;
            alive.contains(&other).then_some((e, other))
        });
        let Some((e, other)) = next else {
            return Err(GraphError::NotUnicyclic("cycle is not simple".into()));
        };
        if other == top {
            break;
        }
        if order.contains(&other) {
            return Err(GraphError::NotUnicyclic("cycle is not simple".into()));
        }
        order.push(other);
        prev_edge = Some(e);
    }
    if order.len() != alive.len() {
        return Err(GraphError::NotUnicyclic("more than one cycle".into()));
    }
    Ok((alive, order))
}

fn shared_edge(g: &FactorGraph, a: usize, b: usize) -> Option<usize> {
    let fb = &g.factor(b).edges;
    g.factor(a).edges.iter().copied().find(|e| fb.contains(e))
}

/// Folds the cycle `c_0 .. c_{L-1}` (with `c_0` nearest the root).
fn fold(g: &mut FactorGraph, c: &[usize]) -> Result<(), GraphError> {
    let len = c.len();
    if len < 4 || len % 2 == 1 {
        return Err(GraphError::InvalidInput(format!("cycle of length {len} after simplification")));
    }
    let half = len / 2;
    // Edges between consecutive levels: (c_d, c_{d+1}) and (c_{L-d}, c_{L-d-1}).
    let link = |g: &FactorGraph, d: usize| -> (usize, usize) {
        let a = shared_edge(g, c[d], c[d + 1]).expect("cycle edge");
        let b = shared_edge(g, c[(len - d) % len], c[len - d - 1]).expect("cycle edge");
        (a, b)
    };
    let links: Vec<(usize, usize)> = (0..half - 1).map(|d| link(g, d)).collect();
    let mut levels = Vec::new();
    for d in 1..half - 1 {
        levels.push(g.merge(c[d], c[len - d], FactorKind::CycleMerged));
    }
    let mid = g.merge(c[half - 1], c[half], FactorKind::CycleMerged);
    levels.push(g.merge(mid, c[half + 1], FactorKind::CycleMerged));
    for (a, b) in links {
        g.bundle(a, b);
    }
    Ok(())
}

/// Generator matrices of the merged cycle nodes, each with `l = 2`.
fn merged_forms() -> [(BitMatrix, &'static str); 4] {
    [
        (BitMatrix::from_u8(&[&[1, 1, 0, 0], &[0, 0, 1, 1]]), "cycle-eq-pair"),
        (BitMatrix::from_u8(&[&[1, 0, 0, 0], &[0, 0, 1, 0], &[1, 1, 0, 0], &[0, 0, 1, 1]]), "cycle-check-pair"),
        (BitMatrix::from_u8(&[&[1, 1, 0], &[0, 1, 1]]), "cycle-eq-check-eq"),
        (BitMatrix::from_u8(&[&[1, 0, 0], &[0, 0, 1], &[1, 1, 1]]), "cycle-check-eq-check"),
    ]
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    rec(0, &mut p, &mut out);
    out
}

/// Finds a merged-node form equal to the oriented relation up to the order
/// of input and output bits, and returns it in the relation's bit order.
pub(crate) fn match_merged_form(oriented: &BitMatrix, l: usize) -> Option<(BitMatrix, String)> {
    let n = oriented.ncols().checked_sub(l)?;
    if l != 2 || n > 4 {
        return None;
    }
    for (form, name) in merged_forms() {
        if form.ncols() != n {
            continue;
        }
        for rp in permutations(l) {
            let rows: Vec<usize> = rp.iter().copied().chain(l..form.nrows()).collect();
            let base = form.select_rows(&rows);
            for cp in permutations(n) {
                let cand = base.select_columns(&cp);
                if super::factor::realizes(oriented, l, &cand) {
                    return Some((cand, name.to_string()));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_match_themselves_under_permutation() {
        for (form, name) in merged_forms() {
            let l = 2;
            let n = form.ncols();
            let rows: Vec<_> = form
                .rows()
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let head = if i < l { crate::gf2::BitVector::unit(l, i) } else { crate::gf2::BitVector::zeros(l) };
                    head.concat(r)
                })
                .collect();
            let rel = BitMatrix::from_rows(rows, l + n).unwrap();
            let perm: Vec<usize> = vec![1, 0].into_iter().chain((l..l + n).rev()).collect();
            let shuffled = rel.select_columns(&perm);
            let (_, got) = match_merged_form(&shuffled, l).expect("match");
            assert_eq!(got, name);
        }
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
    }
}

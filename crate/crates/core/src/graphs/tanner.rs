//! MPGs from Tanner graphs without cycles.

use super::factor::{check_relation, equality_relation, FactorGraph, FactorKind, RootMode};
use super::GraphError;
use crate::gf2::BitMatrix;
use crate::mpg::Mpg;
use std::collections::HashMap;

/// Forney-style Tanner graph of a parity-check matrix.
#[derive(Clone, Debug)]
pub struct Forney {
    pub graph: FactorGraph,
    /// External edge of each code bit.
    pub bits: Vec<usize>,
    /// Equality factor of each code bit, absent for bits in no check.
    pub var_factor: Vec<Option<usize>>,
    pub check_factor: Vec<usize>,
}

/// Builds the Forney graph of `H` after dropping linearly dependent rows.
///
/// Rejects codes with a coordinate that is zero in every codeword.
pub fn forney_from_parity(h: &BitMatrix) -> Result<Forney, GraphError> {
    let h = h.independent_rows();
    let n = h.ncols();
    if n == 0 {
        return Err(GraphError::InvalidInput("empty code".into()));
    }
    for j in 0..n {
        if super::factor::in_span(&h, &crate::gf2::BitVector::unit(n, j)) {
            return Err(GraphError::BitIdenticallyZero(j + 1));
        }
    }
    let mut g = FactorGraph::new();
    let bits: Vec<usize> = (0..n).map(|j| g.add_edge(format!("x{}", j + 1), 1)).collect();
    let mut var_edges: Vec<Vec<usize>> = bits.iter().map(|&b| vec![b]).collect();
    let mut check_edges = Vec::new();
    for r in 0..h.nrows() {
        let mut es = Vec::new();
        for j in h.row(r).iter_ones() {
            let t = g.add_edge(format!("c{}x{}", r + 1, j + 1), 1);
            es.push(t);
            var_edges[j].push(t);
        }
        check_edges.push(es);
    }
    let var_factor = var_edges
        .into_iter()
        .map(|es| {
            (es.len() > 1).then(|| {
                let d = es.len();
                g.add_factor(es, equality_relation(d), FactorKind::Equality)
            })
        })
        .collect();
    let check_factor = check_edges
        .into_iter()
        .map(|es| {
            let d = es.len();
            g.add_factor(es, check_relation(d), FactorKind::Check)
        })
        .collect();
    Ok(Forney { graph: g, bits, var_factor, check_factor })
}

/// MPG for the bit-transmission channel of bit `i` (1-based) of the code
/// with parity-check matrix `H`, whose Tanner graph must be a forest.
///
/// Nodes of degree above three are split, so every node has `n_v <= 2`.
pub fn tree_tanner_mpg(h: &BitMatrix, i: usize) -> Result<Mpg, GraphError> {
    let mut f = forney_from_parity(h)?;
    if i == 0 || i > f.bits.len() {
        return Err(GraphError::InvalidInput(format!("bit {i} out of range")));
    }
    if f.graph.cycle_rank() != 0 {
        return Err(GraphError::NotATree(format!("cycle rank {}", f.graph.cycle_rank())));
    }
    f.graph.split_to_degree3(&HashMap::new());
    f.graph.to_mpg(RootMode::Copy(f.bits[i - 1]), &f.bits)
}

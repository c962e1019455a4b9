use bpqm::gf2::{dual, enumerate_codewords, msgm};
use bpqm::graphs::trellis::{beta_profile, merged_beta_profile};
use bpqm::graphs::{tree_tanner_mpg, trellis_mpg, unicyclic_mpg, GraphError};
use bpqm::oracle::bit_helstrom;
use bpqm::{message_ensemble, success_probability, BitMatrix, BitVector, Distribution, Mpg};
use std::collections::HashMap;

fn leaves(ps: &[f64]) -> Vec<Distribution> {
    ps.iter().map(|&p| Distribution::bit(p).unwrap()).collect()
}

/// Every root input maps to the uniform distribution over codewords with
/// that bit value, checked over all randomness.
fn assert_faithful(g: &Mpg, code: &BitMatrix, i: usize) {
    let words = enumerate_codewords(code).unwrap();
    let rl = g.randomness_len();
    assert!(rl <= 16);
    for x in 0..2 {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for r in 0..1usize << rl {
            let w = g.encode_with(&BitVector::from_index(x, 1), &BitVector::from_index(r, rl)).unwrap();
            *counts.entry(w.to_string()).or_default() += 1;
        }
        let want: Vec<String> = words.iter().filter(|w| w.get(i - 1) == (x == 1)).map(|w| w.to_string()).collect();
        assert_eq!(counts.len(), want.len(), "bit {i}, x {x}");
        let each = (1usize << rl) / want.len();
        for w in want {
            assert_eq!(counts.get(&w), Some(&each), "bit {i}, x {x}, word {w}");
        }
    }
}

fn assert_kinds(g: &Mpg) {
    for v in g.nodes() {
        let k = v.kind.as_deref().unwrap_or("");
        assert!(!k.starts_with("mismatch"), "node {} has kind {k}", v.name);
    }
}

const ALLOWED: &[&str] = &[
    "copy",
    "spawn",
    "equality",
    "check",
    "cycle-eq-pair",
    "cycle-check-pair",
    "cycle-eq-check-eq",
    "cycle-check-eq-check",
];

fn max_nv(g: &Mpg) -> usize {
    g.nodes().iter().map(|v| v.n()).max().unwrap_or(0)
}

fn check_optimal(g: &Mpg, code: &BitMatrix, i: usize, p: f64) {
    let n = code.ncols();
    let ens = message_ensemble(g, &leaves(&vec![p; n]), None).unwrap();
    let got = success_probability(&ens);
    let want = bit_helstrom(code, i, &vec![p; n]).unwrap();
    assert!((got - want).abs() < 1e-9, "bit {i}, p {p}: {got} vs {want}");
}

fn tree_example() -> BitMatrix {
    BitMatrix::from_strs(&["1111000", "0001100", "0001011"])
}

#[test]
fn tree_tanner_codes() {
    for h in [tree_example(), BitMatrix::from_strs(&["110", "011"]), BitMatrix::from_strs(&["111"])] {
        let code = dual(&h);
        let (m, n) = (h.nrows(), h.ncols());
        for i in 1..=n {
            let g = tree_tanner_mpg(&h, i).unwrap();
            assert!(g.max_width() <= 2 && max_nv(&g) <= 3);
            assert!(g.nodes().len() <= 3 * n + 2 * m - 2 + 1, "{} nodes", g.nodes().len());
            assert_kinds(&g);
            assert_faithful(&g, &code, i);
            for p in [0.05, 0.1, 0.25] {
                check_optimal(&g, &code, i, p);
            }
        }
    }
}

#[test]
fn tree_tanner_rejects_cycles() {
    let h = BitMatrix::from_strs(&["110100", "011010", "101001"]);
    assert!(matches!(tree_tanner_mpg(&h, 1), Err(GraphError::NotATree(_))));
}

#[test]
fn unicyclic_six_cycle() {
    let h = BitMatrix::from_strs(&["110100", "011010", "101001"]);
    let code = dual(&h);
    for i in 1..=6 {
        let g = unicyclic_mpg(&h, i).unwrap();
        assert_kinds(&g);
        assert!(g.max_width() <= 4);
        let kinds: Vec<_> = g.nodes().iter().map(|v| v.kind.clone().unwrap()).collect();
        assert!(kinds.iter().any(|k| k.starts_with("cycle-")), "{kinds:?}");
        assert!(kinds.iter().all(|k| ALLOWED.contains(&k.as_str())), "{kinds:?}");
        assert_faithful(&g, &code, i);
        for p in [0.05, 0.1, 0.25] {
            check_optimal(&g, &code, i, p);
        }
    }
}

#[test]
fn unicyclic_longer_cycle_with_trees() {
    // An 8-cycle through four checks with pendant bits.
    let h = BitMatrix::from_strs(&["1100000110", "0110001000", "0011000001", "1001100000"]);
    let code = dual(&h);
    for i in 1..=h.ncols() {
        let g = unicyclic_mpg(&h, i).unwrap();
        assert_kinds(&g);
        assert!(g.max_width() <= 4);
        let kinds: Vec<_> = g.nodes().iter().map(|v| v.kind.clone().unwrap()).collect();
        assert!(kinds.iter().any(|k| k.ends_with("-pair")), "{kinds:?}");
        assert!(kinds.iter().all(|k| ALLOWED.contains(&k.as_str())), "{kinds:?}");
        assert_faithful(&g, &code, i);
        check_optimal(&g, &code, i, 0.1);
    }
}

#[test]
fn hamming_trellis() {
    let g0 = BitMatrix::from_strs(&["1110000", "0110110", "0011100", "0001111"]);
    let spans: Vec<_> = g0.rows().iter().map(|r| r.span().unwrap()).collect();
    assert_eq!(beta_profile(&spans, 7), vec![1, 2, 2, 3, 2, 1]);
    for i in 1..=7 {
        let g = trellis_mpg(&g0, i, &[]).unwrap();
        assert_kinds(&g);
        for v in g.nodes() {
            let k = v.kind.as_deref().unwrap();
            assert!(k == "copy" || ["A", "B", "C"].iter().any(|c| k.starts_with(c)), "{k}");
        }
        assert!(g.max_width() <= 6);
        assert_faithful(&g, &g0, i);
        check_optimal(&g, &g0, i, 0.1);
        let merged = trellis_mpg(&g0, i, &[vec![4, 5]]).unwrap();
        assert_faithful(&merged, &g0, i);
        check_optimal(&merged, &g0, i, 0.1);
        let s = *merged_beta_profile(&spans, 7, &[vec![4, 5]]).iter().max().unwrap();
        assert!(max_nv(&merged) <= 2 * s + 1 + 1);
    }
}

#[test]
fn msgm_of_random_codes() {
    let mut seed = 12345u64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        seed
    };
    let mut done = 0;
    while done < 15 {
        let n = 3 + (next() % 5) as usize;
        let k = 1 + (next() % n as u64) as usize;
        let rows: Vec<BitVector> = (0..k).map(|_| BitVector::from_index((next() % (1 << n)) as usize, n)).collect();
        let g = BitMatrix::from_rows(rows, n).unwrap();
        if g.rank() != k {
            continue;
        }
        let (m, _) = msgm(&g).unwrap();
        for i in 1..=n {
            match trellis_mpg(&m, i, &[]) {
                Err(GraphError::BitIdenticallyZero(_)) => continue,
                Err(e) => panic!("{e}"),
                Ok(t) => {
                    assert_kinds(&t);
                    assert_faithful(&t, &m, i);
                    check_optimal(&t, &m, i, 0.15);
                }
            }
        }
        done += 1;
    }
}

#[test]
fn identity_code_trellis() {
    let g0 = BitMatrix::identity(4);
    for i in 1..=4 {
        let g = trellis_mpg(&g0, i, &[]).unwrap();
        let ens = message_ensemble(&g, &leaves(&[0.1; 4]), None).unwrap();
        assert!((success_probability(&ens) - Distribution::bit(0.1).unwrap().guess_success()).abs() < 1e-12);
    }
}

#[test]
fn unicyclic_four_cycle_through_a_degree_two_check() {
    // The short check closes a 4-cycle with the long one; after splicing it
    // the cycle collapses to an equality-check pair.
    let h = BitMatrix::from_strs(&["111111", "010001"]);
    let code = dual(&h);
    for i in 1..=6 {
        let g = unicyclic_mpg(&h, i).unwrap();
        assert!(max_nv(&g) <= 4, "bit {i}: N = {}", max_nv(&g));
        assert_kinds(&g);
        assert_faithful(&g, &code, i);
        check_optimal(&g, &code, i, 0.1);
    }
}

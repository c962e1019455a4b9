use bpqm::density::{self, Window};
use bpqm::dist::Distribution;
use bpqm::gf2::{dual, msgm};
use bpqm::graphs::trellis::beta_profile;
use bpqm::graphs::{tree_tanner_mpg, trellis_mpg, unicyclic_mpg, ConvCode, GraphError};
use bpqm::mpg::{discretized_message_ensemble, simulate_decode, MpgBuilder};
use bpqm::oracle::{self, Dense};
use bpqm::{message_ensemble, success_probability, BitMatrix, BitVector, GridParams, Mpg};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(ps: &[f64]) -> Vec<Distribution> {
    ps.iter().map(|&p| Distribution::bit(p).unwrap()).collect()
}

fn full_rank(rng: &mut ChaCha8Rng, k: usize, n: usize) -> BitMatrix {
    loop {
        let rows = (0..k).map(|_| BitVector::from_index(rng.gen_range(1..1usize << n), n)).collect();
        let g = BitMatrix::from_rows(rows, n).unwrap();
        if g.rank() == k {
            return g;
        }
    }
}

fn max_nv(g: &Mpg) -> usize {
    g.nodes().iter().map(|v| v.n()).max().unwrap_or(0)
}

/// Random bipartite tree on `n` variables and `m` checks, plus optionally
/// one extra variable-check edge closing a single cycle.
fn tanner(rng: &mut ChaCha8Rng, n: usize, m: usize, cycle: bool) -> BitMatrix {
    let mut h = vec![vec![0u8; n]; m];
    // Node 0 is variable 0; later nodes attach to an existing node of the other type.
    let (mut vars, mut checks): (Vec<usize>, Vec<usize>) = (vec![0], Vec::new());
    let mut order: Vec<bool> = (1..n).map(|_| true).chain((0..m).map(|_| false)).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    // A check must come first so that variables can attach to it.
    if let Some(pos) = order.iter().position(|&v| !v) {
        order.swap(0, pos);
    }
    for is_var in order {
        if is_var {
            let v = vars.len();
            let c = checks[rng.gen_range(0..checks.len())];
            h[c][v] = 1;
            vars.push(v);
        } else {
            let c = checks.len();
            let v = vars[rng.gen_range(0..vars.len())];
            h[c][v] = 1;
            checks.push(c);
        }
    }
    if cycle {
        let free: Vec<(usize, usize)> =
            (0..m).flat_map(|c| (0..n).map(move |v| (c, v))).filter(|&(c, v)| h[c][v] == 0).collect();
        if !free.is_empty() {
            let (c, v) = free[rng.gen_range(0..free.len())];
            h[c][v] = 1;
        }
    }
    let rows: Vec<String> = h.iter().map(|r| r.iter().map(|b| char::from(b'0' + b)).collect()).collect();
    BitMatrix::from_strs(&rows.iter().map(String::as_str).collect::<Vec<_>>())
}

/// Helstrom value for the first bit of `u` from `spsc(uᵀG)`, the rest of `u` uniform.
fn first_bit_helstrom(g: &BitMatrix, ps: &[f64]) -> f64 {
    let (k, n) = (g.nrows(), g.ncols());
    let p = oracle::product_bits(ps);
    let dim = 1usize << n;
    let mut rho = [Dense::zeros(dim), Dense::zeros(dim)];
    let w = 1.0 / (1usize << (k - 1)) as f64;
    for u in 0..1usize << k {
        let b = (u >> (k - 1)) & 1;
        let x = g.vec_mul(&BitVector::from_index(u, k));
        let psi = oracle::spsc_state(&p, &x);
        for r in 0..dim {
            for c in 0..dim {
                rho[b].data[r * dim + c] += w * psi[r] * psi[c];
            }
        }
    }
    oracle::helstrom(&rho[0], &rho[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A single node keeps the optimal success probability.
    #[test]
    fn node_is_optimal(n in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n);
        let g = full_rank(&mut rng, k, n);
        let ps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let mut b = MpgBuilder::new();
        let root = b.edge(1);
        let leaves: Vec<usize> = (0..n).map(|_| b.edge(1)).collect();
        b.node(root, leaves.clone(), g.clone(), None);
        let mpg = b.build(root, leaves).unwrap();
        let ens = message_ensemble(&mpg, &bits(&ps), None).unwrap();
        prop_assert!((success_probability(&ens) - first_bit_helstrom(&g, &ps)).abs() < 1e-10);
    }

    /// Ensembles are normalized and no larger than the outcome count.
    #[test]
    fn ensembles_are_normalized(n in 2usize..=7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n);
        let (m, _) = msgm(&full_rank(&mut rng, k, n)).unwrap();
        let i = rng.gen_range(1..=n);
        let mpg = match trellis_mpg(&m, i, &[]) {
            Err(GraphError::BitIdenticallyZero(_)) => return Ok(()),
            r => r.unwrap(),
        };
        let ps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let ens = message_ensemble(&mpg, &bits(&ps), None).unwrap();
        prop_assert!(ens.len() as u128 <= mpg.outcome_count());
        prop_assert!((ens.total() - 1.0).abs() < 1e-12);
        for e in &ens.entries {
            prop_assert!((e.dist.total() - 1.0).abs() < 1e-9);
        }
    }

    /// Observed discretization error stays below its bound.
    #[test]
    fn discretization_bound(n in 2usize..=6, b in prop::sample::select(vec![8u32, 12, 16, 24]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n);
        let (m, _) = msgm(&full_rank(&mut rng, k, n)).unwrap();
        let mpg = match trellis_mpg(&m, 1, &[]) {
            Err(GraphError::BitIdenticallyZero(_)) => return Ok(()),
            r => r.unwrap(),
        };
        let ps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let rep = discretized_message_ensemble(&mpg, &bits(&ps), GridParams::new(b).unwrap()).unwrap();
        prop_assert!(rep.error <= rep.bound, "{} > {}", rep.error, rep.bound);
    }

    /// Builders meet their dimension bounds and stay optimal.
    #[test]
    fn tree_tanner_bounds(n in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..n);
        let h = tanner(&mut rng, n, m, false);
        let g = dual(&h);
        prop_assume!(g.nrows() > 0);
        for i in 1..=n {
            match tree_tanner_mpg(&h, i) {
                Err(GraphError::BitIdenticallyZero(_)) => continue,
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                Ok(mpg) => {
                    prop_assert!(max_nv(&mpg) <= 2);
                    let ps = vec![0.12; n];
                    let got = success_probability(&message_ensemble(&mpg, &bits(&ps), None).unwrap());
                    prop_assert!((got - oracle::bit_helstrom(&g, i, &ps).unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn unicyclic_bounds(n in 3usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(2..n);
        let h = tanner(&mut rng, n, m, true);
        let g = dual(&h);
        prop_assume!(g.nrows() > 0);
        for i in 1..=n {
            match unicyclic_mpg(&h, i) {
                Err(GraphError::BitIdenticallyZero(_)) => continue,
                Err(e) => return Err(TestCaseError::fail(format!("{e} for H = {h:?}"))),
                Ok(mpg) => {
                    prop_assert!(max_nv(&mpg) <= 4, "N = {}", max_nv(&mpg));
                    let ps = vec![0.12; n];
                    let got = success_probability(&message_ensemble(&mpg, &bits(&ps), None).unwrap());
                    prop_assert!((got - oracle::bit_helstrom(&g, i, &ps).unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn trellis_bounds(n in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n.min(6));
        let (m, spans) = msgm(&full_rank(&mut rng, k, n)).unwrap();
        let beta = beta_profile(&spans, n).into_iter().max().unwrap_or(0);
        for i in 1..=n {
            match trellis_mpg(&m, i, &[]) {
                Err(GraphError::BitIdenticallyZero(_)) => continue,
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                Ok(mpg) => prop_assert!(max_nv(&mpg) <= (2 * beta).max(2), "N = {} with beta {beta}", max_nv(&mpg)),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Decoding statistics do not depend on the transmitted value.
    #[test]
    fn outcome_law_is_input_independent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, _) = msgm(&full_rank(&mut rng, 3, 6)).unwrap();
        let mpg = match trellis_mpg(&m, 2, &[]) {
            Err(GraphError::BitIdenticallyZero(_)) => return Ok(()),
            r => r.unwrap(),
        };
        let c = mpg.compile().unwrap();
        let d = bits(&[0.2; 6]);
        let runs = 20_000;
        let rate = |x: usize, rng: &mut ChaCha8Rng| {
            let xv = BitVector::from_index(x, 1);
            (0..runs).filter(|_| simulate_decode(&c, &d, &xv, rng).unwrap() == xv).count() as f64 / runs as f64
        };
        let (a, b) = (rate(0, &mut rng), rate(1, &mut rng));
        let p = 0.5 * (a + b);
        let sigma = (2.0 * p * (1.0 - p) / runs as f64).sqrt();
        prop_assert!((a - b).abs() <= 3.0 * sigma + 1e-12, "{a} vs {b}");
    }

    /// One DE step gives the same population on one thread and many.
    #[test]
    fn de_step_is_thread_invariant(seed in any::<u64>(), omega in 0.05f64..0.3) {
        let code = ConvCode::from_family("13/15").unwrap();
        let win = Window::new(&code, 3).unwrap();
        let p = density::channel_param(omega).unwrap().p;
        let pop0 = density::de_iteration(&density::initial_population(150), &win, p, seed, 1);
        let many = density::de_iteration(&pop0, &win, p, seed, 2);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
            .install(|| density::de_iteration(&pop0, &win, p, seed, 2));
        prop_assert_eq!(many, one);
    }
}

/// Mean of values in `[0, 1/2]` over `pop` samples has standard deviation at most `1/(4√pop)`.
fn three_sigma(pop: usize) -> f64 {
    0.75 / (pop as f64).sqrt()
}

#[test]
fn de_populations_stay_valid_and_improve_below_threshold() {
    let cfg = density::DeConfig::new(ConvCode::from_family("5/7").unwrap(), 8, 12, 600, 5).unwrap();
    let win = Window::new(&cfg.family, cfg.w).unwrap();
    let p = density::channel_param(0.18).unwrap().p;
    let mut pop = density::initial_population(cfg.pop);
    let mut prev = density::population_error(&pop);
    for t in 1..=cfg.l as u64 {
        pop = density::de_iteration(&pop, &win, p, cfg.seed, t);
        for d in &pop {
            assert!(d[0] >= 0.0 && d[1] >= 0.0 && (d[0] + d[1] - 1.0).abs() < 1e-9, "{d:?}");
        }
        let err = density::population_error(&pop);
        assert!(err <= prev + three_sigma(cfg.pop), "iteration {t}: {err} after {prev}");
        prev = err;
    }
}

#[test]
fn de_ber_is_monotone_in_omega() {
    let cfg = density::DeConfig::new(ConvCode::from_family("5/7").unwrap(), 6, 8, 800, 7).unwrap();
    let omegas = [0.1, 0.16, 0.2, 0.24, 0.28, 0.34, 0.42];
    let rows = density::ber_curve(&cfg, &omegas).unwrap();
    let last: Vec<f64> = omegas
        .iter()
        .map(|&o| rows.iter().filter(|r| r.omega == o).last().unwrap().ber)
        .collect();
    for w in last.windows(2) {
        assert!(w[1] >= w[0] - three_sigma(cfg.pop), "{last:?}");
    }
}

#[test]
fn de_step_improves_below_threshold() {
    let code = ConvCode::from_family("5/7").unwrap();
    let win = Window::new(&code, 10).unwrap();
    let p = density::channel_param(0.20).unwrap().p;
    let pop = density::de_iteration(&density::initial_population(1000), &win, p, 3, 1);
    let (b0, _) = density::population_ber(&density::initial_population(1000), p, 3, 0);
    let (b1, _) = density::population_ber(&pop, p, 3, 1);
    assert!((b0 - 0.20).abs() < 1e-12);
    assert!(b1 < b0 - 0.05, "{b1} vs {b0}");
}


use proptest::prelude::*;
use signed_beta::estimation::{
    build_h_matrix, estimating_equations, fit, observed_curvatures, CurvatureVector, FitResult, SolverConfig,
};
use signed_beta::inference::{bh_multiple_comparison, Basis, Estimates, Facet};
use signed_beta::io::{format_edge_list, parse_edge_list, preprocess, IdMap, LoadOptions, PreprocessOptions};
use signed_beta::kappa::classify_negative_senders;
use signed_beta::model::{edge_loglik_derivs, edge_pmf, expected_edge, sample_network};
use signed_beta::numerics::{solve_dense, std_normal_cdf, std_normal_quantile, DenseSystem};
use signed_beta::{KappaVector, RandomStream, Sign, SignedAdjacency, Theta};

fn random_truth(n: usize, rng: &mut RandomStream) -> (Theta, KappaVector) {
    let alpha: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 0.5).unwrap()).collect();
    let mut beta: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 0.5).unwrap()).collect();
    beta[n - 1] = 0.0;
    let high: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
    (Theta::new(alpha, beta).unwrap(), KappaVector::two_class(&high, 0.05, 0.2).unwrap())
}

/// First seed from `start` whose sampled network fits cleanly.
fn fitted_network(n: usize, start: u64) -> (SignedAdjacency, Theta, KappaVector, FitResult) {
    (start..start + 50)
        .find_map(|seed| {
            let mut rng = RandomStream::new(seed, 0);
            let (theta, kappa) = random_truth(n, &mut rng);
            let g = sample_network(&theta, &kappa, &mut rng).ok()?;
            let f = fit(&g, &kappa, &SolverConfig::default()).ok()?;
            Some((g, theta, kappa, f))
        })
        .expect("no fittable network in 50 seeds")
}

#[test]
fn pmf_normalized_and_monotone_on_grid() {
    let ms: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.2).collect();
    let ks: Vec<f64> = (1..=49).map(|k| k as f64 * 0.02).collect();
    for &kappa in &ks {
        let mut prev: Option<[f64; 3]> = None;
        for &m in &ms {
            let p = [Sign::Negative, Sign::Zero, Sign::Positive].map(|y| edge_pmf(y, m, kappa).unwrap());
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "m={m} kappa={kappa}");
            if let Some(q) = prev {
                assert!(p[2] >= q[2], "p(+1) not increasing in m at m={m} kappa={kappa}");
                assert!(p[0] <= q[0], "p(-1) not decreasing in m at m={m} kappa={kappa}");
            }
            prev = Some(p);
        }
    }
    for &m in &ms {
        for w in ks.windows(2) {
            let lo = edge_pmf(Sign::Negative, m, w[0]).unwrap();
            let hi = edge_pmf(Sign::Negative, m, w[1]).unwrap();
            assert!(hi >= lo);
        }
    }
}

#[test]
fn loglik_derivatives_match_finite_differences() {
    let mut rng = RandomStream::new(99, 0);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = -6.0 + 12.0 * rng.uniform();
        let kappa = 0.001 + 0.949 * rng.uniform();
        let y = Sign::ALL[rng.index(3)];
        let at = |x: f64| edge_loglik_derivs(x, kappa, y).unwrap();
        let exact = at(m);
        // Fourth-order central differences.
        let d = |f: &dyn Fn(f64) -> f64| (8.0 * (f(m + h) - f(m - h)) - (f(m + 2.0 * h) - f(m - 2.0 * h))) / (12.0 * h);
        let first = d(&|x| at(x).value);
        let second = d(&|x| at(x).first);
        for (a, b) in [(exact.first, first), (exact.second, second)] {
            let rel = (a - b).abs() / a.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-5, "max relative error {worst}");
}

#[test]
fn normal_quantile_inverts_cdf() {
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        let z = std_normal_quantile(p).unwrap();
        assert!((std_normal_cdf(z).unwrap() - p).abs() < 1e-13);
    }
}

#[test]
fn stream_is_reproducible() {
    let mut a = RandomStream::new(5, 3);
    let mut b = RandomStream::new(5, 3);
    let mut c = RandomStream::new(5, 4);
    let xs: Vec<f64> = (0..10_000).map(|_| a.uniform()).collect();
    let ys: Vec<f64> = (0..10_000).map(|_| b.uniform()).collect();
    let zs: Vec<f64> = (0..10_000).map(|_| c.uniform()).collect();
    assert_eq!(xs, ys);
    assert_ne!(xs, zs);
}

#[test]
fn dense_solver_on_random_systems() {
    let mut rng = RandomStream::new(17, 0);
    for case in 0..100 {
        let dim = 1 + case;
        let a: Vec<f64> = (0..dim * dim).map(|_| rng.normal(0.0, 1.0).unwrap()).collect();
        let x: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0).unwrap()).collect();
        let rhs: Vec<f64> = (0..dim).map(|r| (0..dim).map(|c| a[r * dim + c] * x[c]).sum()).collect();
        let system = DenseSystem::new(a, rhs).unwrap();
        let check = system.clone();
        let sol = solve_dense(system).unwrap();
        let scale = check.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs())) * dim as f64;
        assert!(check.residual_inf(&sol) <= 1e-10 * scale.max(1.0), "dim {dim}");
    }
}

#[test]
fn structured_h_matches_dense_product() {
    let (g, _, kappa, f) = fitted_network(10, 300);
    let u = observed_curvatures(&g, &f.theta_check, &kappa).unwrap();
    let h = build_h_matrix(&u).unwrap();
    let dim = 19;
    let mut rng = RandomStream::new(8, 0);
    for _ in 0..20 {
        let x: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0).unwrap()).collect();
        let fast = h.apply(&x).unwrap();
        for r in 0..dim {
            let dense: f64 = (0..dim).map(|c| h.entry(r, c) * x[c]).sum();
            assert!((fast[r] - dense).abs() <= 1e-10, "row {r}");
        }
    }
}

#[test]
fn residual_at_initial_estimate_is_small() {
    let (g, _, kappa, f) = fitted_network(50, 400);
    assert!(f.final_residual_inf_norm <= 1e-8);
    let sys = estimating_equations(&g, &f.theta_check, &kappa).unwrap();
    assert!(sys.residual_inf_norm() <= 1e-8);
}

#[test]
fn degree_balance_identity() {
    let (g, theta, kappa, _) = fitted_network(40, 500);
    let n = g.n();
    assert_eq!(g.out_degrees().iter().sum::<i64>(), g.in_degrees().iter().sum::<i64>());
    let r = estimating_equations(&g, &theta, &kappa).unwrap().residual().to_vec();
    let implied = r[..n].iter().sum::<f64>() - r[n..].iter().sum::<f64>();
    let mut dropped = g.in_degrees()[n - 1] as f64;
    for k in 0..n - 1 {
        dropped -= expected_edge(theta.predictor(k, n - 1), kappa.values()[k]).unwrap();
    }
    assert!((implied - dropped).abs() < 1e-10);
}

#[test]
fn bh_hand_example() {
    let out = bh_multiple_comparison(&[0.001, 0.02, 0.04, 0.3], 0.05).unwrap();
    assert_eq!(out.rejected, vec![true, false, false, false]);
}

#[test]
fn test_interval_duality_on_fitted_network() {
    let (_, _, _, f) = fitted_network(50, 600);
    let est = Estimates::from_fit(&f, Basis::Hat);
    for facet in [Facet::Alpha, Facet::Beta] {
        for i in 0..10 {
            for j in 10..20 {
                let r = est.interval(facet, i, j, 0.95).unwrap();
                let excludes_zero = !r.covers(0.0);
                assert_eq!(r.p_value < 0.05, excludes_zero, "{facet:?} {i} {j} p={}", r.p_value);
                let flipped = est.interval(facet, j, i, 0.95).unwrap();
                assert!((r.point + flipped.point).abs() < 1e-12);
                assert!((r.delta_hat - flipped.delta_hat).abs() < 1e-12);
                assert!((r.p_value - flipped.p_value).abs() < 1e-12);
                assert!((r.lower + flipped.upper).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn empirical_pmf_matches_model() {
    let (m, kappa) = (0.3, 0.2);
    let n = 317;
    let mut beta = vec![0.0; n];
    beta[n - 1] = 0.0;
    let theta = Theta::new(vec![m; n], beta).unwrap();
    let kv = KappaVector::constant(n, kappa).unwrap();
    let g = sample_network(&theta, &kv, &mut RandomStream::new(21, 0)).unwrap();
    let total = (n * (n - 1)) as f64;
    let counts = [
        g.negative_edges().len() as f64,
        total - g.negative_edges().len() as f64 - g.positive_edges().len() as f64,
        g.positive_edges().len() as f64,
    ];
    for (c, y) in counts.iter().zip([Sign::Negative, Sign::Zero, Sign::Positive]) {
        let p = edge_pmf(y, m, kappa).unwrap();
        let se = (p * (1.0 - p) / total).sqrt();
        assert!((c / total - p).abs() < 4.5 * se, "{y:?}: {} vs {p}", c / total);
    }
}

#[test]
fn residual_has_zero_mean_at_truth() {
    let n = 30;
    let (theta, kappa) = random_truth(n, &mut RandomStream::new(3, 0));
    let draws = 200;
    let mut rows = Vec::new();
    for d in 0..draws {
        let g = sample_network(&theta, &kappa, &mut RandomStream::new(3, 1 + d)).unwrap();
        rows.push(estimating_equations(&g, &theta, &kappa).unwrap().residual().to_vec());
    }
    for c in 0..2 * n - 1 {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / draws as f64;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!(mean.abs() < 4.5 * se.max(1e-12), "component {c}: mean {mean} se {se}");
    }
}

#[test]
fn relabeling_permutes_estimates() {
    let (g, _, kappa, f) = fitted_network(30, 700);
    let n = g.n();
    // Reverse all labels except the reference node.
    let perm: Vec<usize> = (0..n - 1).rev().chain([n - 1]).collect();
    let edges = g.edges().into_iter().map(|(i, j, s)| (perm[i], perm[j], s));
    let g2 = SignedAdjacency::from_edges(n, edges).unwrap();
    let mut k2 = vec![0.0; n];
    for i in 0..n {
        k2[perm[i]] = kappa.values()[i];
    }
    let kappa2 = KappaVector::new(k2, kappa.kappa00(), kappa.kappa01()).unwrap();
    let f2 = fit(&g2, &kappa2, &SolverConfig::default()).unwrap();
    for i in 0..n {
        assert!((f.theta_hat.alpha()[i] - f2.theta_hat.alpha()[perm[i]]).abs() < 1e-8);
        assert!((f.theta_hat.beta()[i] - f2.theta_hat.beta()[perm[i]]).abs() < 1e-8);
        assert!((f.u_hat.get(i) - f2.u_hat.get(perm[i])).abs() < 1e-6);
    }
}

#[test]
fn curvature_vector_rejects_bad_length() {
    assert!(CurvatureVector::from_values(vec![1.0; 5]).is_err());
}

fn small_graph() -> impl Strategy<Value = SignedAdjacency> {
    (3usize..12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n, prop::bool::ANY), 0..60).prop_map(move |raw| {
            let mut g = SignedAdjacency::new(n);
            for (i, j, pos) in raw {
                if i != j && g.sign(i, j) == Sign::Zero {
                    g.insert(i, j, if pos { Sign::Positive } else { Sign::Negative }).unwrap();
                }
            }
            g
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normal_cdf_symmetry(x in -30.0f64..30.0) {
        let s = std_normal_cdf(x).unwrap() + std_normal_cdf(-x).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_quantile_monotone(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
        prop_assume!(a < 1.0 && b < 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(std_normal_quantile(lo).unwrap() <= std_normal_quantile(hi).unwrap());
    }

    #[test]
    fn bh_monotone_in_alpha(ps in prop::collection::vec(0.0f64..=1.0, 1..30), a in 0.001f64..0.5, extra in 0.0f64..0.4) {
        let small = bh_multiple_comparison(&ps, a).unwrap();
        let large = bh_multiple_comparison(&ps, (a + extra).min(0.999)).unwrap();
        for (s, l) in small.rejected.iter().zip(&large.rejected) {
            prop_assert!(!s || *l);
        }
    }

    #[test]
    fn bh_permutation_equivariant(ps in prop::collection::vec(0.0f64..=0.2, 1..30), seed in 0u64..1000) {
        let mut rng = RandomStream::new(seed, 0);
        let mut order: Vec<usize> = (0..ps.len()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.index(k + 1));
        }
        let permuted: Vec<f64> = order.iter().map(|&k| ps[k]).collect();
        let base = bh_multiple_comparison(&ps, 0.05).unwrap();
        let other = bh_multiple_comparison(&permuted, 0.05).unwrap();
        for (pos, &k) in order.iter().enumerate() {
            prop_assert_eq!(other.rejected[pos], base.rejected[k]);
        }
    }

    #[test]
    fn classification_permutation_equivariant(g in small_graph(), xi in 0.01f64..0.5) {
        let n = g.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let g2 = SignedAdjacency::from_edges(n, g.edges().into_iter().map(|(i, j, s)| (perm[i], perm[j], s))).unwrap();
        let (high, zeta) = classify_negative_senders(&g, xi).unwrap();
        let (high2, zeta2) = classify_negative_senders(&g2, xi).unwrap();
        let mut mapped: Vec<usize> = high.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, high2);
        for i in 0..n {
            prop_assert_eq!(zeta[i], zeta2[perm[i]]);
        }
    }

    #[test]
    fn preprocess_idempotent(g in small_graph(), min_degree in 0usize..5, flag in prop::bool::ANY) {
        let options = PreprocessOptions { min_degree, drop_negative_dominant: flag, single_pass: false };
        if let Ok(once) = preprocess(&g, options) {
            let twice = preprocess(&once.graph, options).unwrap();
            prop_assert!(twice.removals.is_empty());
            prop_assert_eq!(twice.graph, once.graph);
        }
    }

    #[test]
    fn simulate_write_load_round_trip(seed in 0u64..500, n in 3usize..40) {
        let mut rng = RandomStream::new(seed, 0);
        let (theta, kappa) = random_truth(n, &mut rng);
        let g = sample_network(&theta, &kappa, &mut rng).unwrap();
        let text = format_edge_list(&g, &IdMap::identity(n));
        let loaded = parse_edge_list(&text, &LoadOptions::default()).unwrap();
        prop_assert_eq!(loaded.graph, g);
        prop_assert_eq!(loaded.ids, IdMap::identity(n));
    }
}

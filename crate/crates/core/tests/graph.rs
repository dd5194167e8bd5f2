//! Graph construction, Laplacian scaling and Chebyshev convolution checked
//! against brute-force and dense eigendecomposition oracles.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use pvgnn::autodiff::gradcheck::check_inputs;
use pvgnn::autodiff::{Tape, Tensor};
use pvgnn::graph::{
    build_knn_graph, cheb_apply, graph_conv, laplacian, scale_laplacian, ChebConvWeights, Graph,
    NodeLocation, ScaledLaplacian, TapeLaplacian, POWER_ITER_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sites(rng: &mut ChaCha8Rng, n: usize) -> Vec<NodeLocation> {
    (0..n)
        .map(|_| {
            NodeLocation::new(
                rng.gen_range(46.0..47.5),
                rng.gen_range(6.5..8.5),
                rng.gen_range(300.0..1500.0),
            )
            .unwrap()
        })
        .collect()
}

/// Random weighted graph; each pair is connected with probability `p`.
fn random_weighted_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let sites = random_sites(rng, n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j, rng.gen_range(0.1..2.0)));
            }
        }
    }
    Graph::from_edges(sites, edges).unwrap()
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    DMatrix::from_row_slice(r, c, t.data())
}

/// `U T_k(Λ) Uᵀ` for k in 0..order, evaluated on the eigenvalues.
fn spectral_polys(lap: &ScaledLaplacian, order: usize) -> Vec<DMatrix<f64>> {
    let eig = SymmetricEigen::new(to_matrix(&lap.dense()));
    let u = &eig.eigenvectors;
    (0..order)
        .map(|k| {
            let diag = eig.eigenvalues.map(|l| {
                // three-term recursion on the scalar eigenvalue
                let (mut a, mut b) = (1.0, l);
                if k == 0 {
                    return 1.0;
                }
                for _ in 1..k {
                    let c = 2.0 * l * b - a;
                    a = b;
                    b = c;
                }
                b
            });
            u * DMatrix::from_diagonal(&diag) * u.transpose()
        })
        .collect()
}

fn spectral_conv(lap: &ScaledLaplacian, w: &ChebConvWeights, x: &Tensor) -> DMatrix<f64> {
    let (order, f_out, f_in) = (w.order(), w.out_features(), w.in_features());
    let polys = spectral_polys(lap, order);
    let xm = to_matrix(x);
    let n = x.shape()[0];
    let mut out = DMatrix::zeros(n, f_out);
    for (k, tk) in polys.iter().enumerate() {
        let filtered = tk * &xm;
        for j in 0..f_out {
            for i in 0..f_in {
                let wk = w.weights.at(&[k, j, i]);
                for v in 0..n {
                    out[(v, j)] += wk * filtered[(v, i)];
                }
            }
        }
    }
    if let Some(b) = &w.bias {
        for v in 0..n {
            for j in 0..f_out {
                out[(v, j)] += b.data()[j];
            }
        }
    }
    out
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize, f_out: usize, f_in: usize) -> ChebConvWeights {
    let w = Tensor::from_fn(&[k, f_out, f_in], |_| rng.gen_range(-1.0..1.0));
    let b = Tensor::from_fn(&[f_out], |_| rng.gen_range(-1.0..1.0));
    ChebConvWeights::new(w, Some(b)).unwrap()
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let sites = random_sites(&mut rng, 10);
        let g = build_knn_graph(&sites, 3).unwrap();
        let mut expect = vec![vec![false; 10]; 10];
        for i in 0..10 {
            let mut d: Vec<(f64, usize)> = (0..10)
                .filter(|&j| j != i)
                .map(|j| (sites[i].distance_km(&sites[j]), j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in &d[..3] {
                expect[i][j] = true;
                expect[j][i] = true;
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(g.weight(i, j) == 1.0, expect[i][j], "pair ({i}, {j})");
                assert_eq!(g.weight(i, j), g.weight(j, i));
            }
        }
    }
}

#[test]
fn laplacian_is_psd_with_zero_row_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let g = random_weighted_graph(&mut rng, 6, 0.5);
        let l = laplacian(&g);
        for i in 0..6 {
            let row: f64 = (0..6).map(|j| l.at(&[i, j])).sum();
            assert!(row.abs() < 1e-12);
        }
        let eig = SymmetricEigen::new(to_matrix(&l));
        assert!(eig.eigenvalues.min() >= -1e-10);
    }
}

#[test]
fn scaled_spectrum_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let g = random_weighted_graph(&mut rng, 8, 0.4);
        let l = laplacian(&g);
        let s = scale_laplacian(&l, POWER_ITER_TOL).unwrap();
        let true_max = SymmetricEigen::new(to_matrix(&l)).eigenvalues.max();
        if true_max > 1e-12 {
            assert!((s.lambda_max() - true_max).abs() / true_max < 1e-6);
        }
        let eig = SymmetricEigen::new(to_matrix(&s.dense()));
        assert!(eig.eigenvalues.max() <= 1.0 + 1e-6);
        assert!(eig.eigenvalues.min() >= -1.0 - 1e-6);
    }
}

#[test]
fn cheb_basis_matches_spectral_polynomials() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let g = random_weighted_graph(&mut rng, 6, 0.5);
        let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
        let x = Tensor::from_fn(&[6, 3], |_| rng.gen_range(-1.0..1.0));
        let basis = cheb_apply(&lap, &x, 5).unwrap();
        let polys = spectral_polys(&lap, 5);
        let xm = to_matrix(&x);
        for (k, tk) in polys.iter().enumerate() {
            let expect = tk * &xm;
            for v in 0..6 {
                for f in 0..3 {
                    assert!((basis.at(&[k, v, f]) - expect[(v, f)]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn graph_conv_matches_fourier_domain_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let g = random_weighted_graph(&mut rng, 5, 0.6);
        let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
        let w = random_weights(&mut rng, 3, 4, 2);
        let x = Tensor::from_fn(&[5, 2], |_| rng.gen_range(-1.0..1.0));
        let got = w.apply(&lap, &x).unwrap();
        let expect = spectral_conv(&lap, &w, &x);
        for v in 0..5 {
            for j in 0..4 {
                assert!((got.at(&[v, j]) - expect[(v, j)]).abs() < 1e-10);
            }
        }
    }
}

/// Nodes reachable from `src` within `hops` edges.
fn within_hops(g: &Graph, src: usize, hops: usize) -> Vec<bool> {
    let mut seen = vec![false; g.n_nodes()];
    seen[src] = true;
    let mut frontier = vec![src];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &(v, _) in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    seen
}

#[test]
fn graph_conv_is_k_minus_one_hop_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // a path keeps hop distances long
    let sites = random_sites(&mut rng, 7);
    let g = Graph::from_edges(sites, (0..6).map(|i| (i, i + 1, 1.0))).unwrap();
    let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
    for order in 1..=4 {
        let w = random_weights(&mut rng, order, 2, 2);
        let x = Tensor::from_fn(&[7, 2], |_| rng.gen_range(-1.0..1.0));
        let base = w.apply(&lap, &x).unwrap();
        for v in 0..7 {
            let near = within_hops(&g, v, order - 1);
            for u in (0..7).filter(|&u| !near[u]) {
                let mut xp = x.clone();
                xp.set(&[u, 0], xp.at(&[u, 0]) + 10.0);
                xp.set(&[u, 1], xp.at(&[u, 1]) - 3.0);
                let out = w.apply(&lap, &xp).unwrap();
                for j in 0..2 {
                    assert_eq!(out.at(&[v, j]), base.at(&[v, j]), "K={order} v={v} u={u}");
                }
            }
        }
    }
}

#[test]
fn graph_conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let g = random_weighted_graph(&mut rng, 5, 0.6);
        let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
        let pattern = lap.pattern().clone();
        let w = random_weights(&mut rng, 3, 2, 3);
        let x = Tensor::from_fn(&[5, 3], |_| rng.gen_range(-1.0..1.0));
        let probe = Tensor::from_fn(&[5, 2], |_| rng.gen_range(-1.0..1.0));
        let lvals = Tensor::new(&[pattern.nnz()], lap.values().to_vec()).unwrap();
        let inputs = [w.weights.clone(), w.bias.clone().unwrap(), x, lvals];
        let err = check_inputs(&inputs, 1e-6, |tape, v| {
            let l = TapeLaplacian {
                pattern: pattern.clone(),
                values: v[3],
            };
            let y = graph_conv(tape, &l, v[0], Some(v[1]), v[2])?;
            let p = tape.constant(probe.clone());
            let yp = tape.mul(y, p)?;
            Ok(tape.sum(yp))
        })
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn laplacian_value_updates_keep_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_weighted_graph(&mut rng, 6, 0.5);
    let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
    let mut current = lap.clone();
    for _ in 0..25 {
        let vals: Vec<f64> = current
            .values()
            .iter()
            .map(|v| v + rng.gen_range(-0.01..0.01))
            .collect();
        current = current.with_values(vals).unwrap();
    }
    assert_eq!(current.pattern(), lap.pattern());
    assert_ne!(current.values(), lap.values());
    assert!(current.with_values(vec![0.0; 1]).is_err());
}

#[test]
fn tape_laplacian_matches_value_level_apply() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_weighted_graph(&mut rng, 6, 0.5);
    let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
    let w = random_weights(&mut rng, 2, 3, 2);
    let x = Tensor::from_fn(&[6, 2], |_| rng.gen_range(-1.0..1.0));
    let mut tape = Tape::new();
    let l = TapeLaplacian::constant(&mut tape, &lap);
    let wv = tape.constant(w.weights.clone());
    let bv = tape.constant(w.bias.clone().unwrap());
    let xv = tape.constant(x.clone());
    let y = graph_conv(&mut tape, &l, wv, Some(bv), xv).unwrap();
    assert_eq!(tape.value(y), &w.apply(&lap, &x).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_graph_is_symmetric(seed in any::<u64>(), n in 2usize..12, k_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = random_sites(&mut rng, n);
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let g = build_knn_graph(&sites, k).unwrap();
        let a = g.dense_adjacency();
        for i in 0..n {
            prop_assert_eq!(a[i * n + i], 0.0);
            for j in 0..n {
                prop_assert_eq!(a[i * n + j], a[j * n + i]);
            }
        }
        // every node keeps at least k neighbours
        for i in 0..n {
            prop_assert!(g.neighbors(i).len() >= k);
        }
    }

    #[test]
    fn spectral_equivalence_small_graphs(seed in any::<u64>(), n in 2usize..=8, order in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_weighted_graph(&mut rng, n, 0.5);
        let lap = scale_laplacian(&laplacian(&g), POWER_ITER_TOL).unwrap();
        let w = random_weights(&mut rng, order, 2, 2);
        let x = Tensor::from_fn(&[n, 2], |_| rng.gen_range(-1.0..1.0));
        let got = w.apply(&lap, &x).unwrap();
        let expect = spectral_conv(&lap, &w, &x);
        for v in 0..n {
            for j in 0..2 {
                prop_assert!((got.at(&[v, j]) - expect[(v, j)]).abs() < 1e-8);
            }
        }
    }
}

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use regret_core::prob::{random_pd_matrix, sample_costs, CostDistribution, CovMatrix, Seed};
use regret_core::problems::lp::random_lp_with_attempts;
use regret_core::problems::qp::solve_qp_constrained_with_multipliers;
use regret_core::problems::*;
use regret_core::{DecisionOracle, Error, FEASIBILITY_TOL};

mod common;
use common::{brute_force_knapsack, vertex_enumeration};


proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lp_matches_vertex_enumeration(n in 1usize..=6, d in 1usize..=6, seed in any::<u64>()) {
        let lp = match random_lp(n, d, Seed(seed)) {
            Ok(lp) => lp,
            Err(Error::GenerationFailed(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let mut rng = Seed(seed).stream(9);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sol = solve_lp(&lp, &c).unwrap();
        let oracle = vertex_enumeration(lp.a(), lp.b(), &c);
        prop_assert!((sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "simplex {} vs enumeration {}", sol.objective, oracle);
        prop_assert!(lp.residual(&sol.z) <= FEASIBILITY_TOL);
    }

    #[test]
    fn unconstrained_qp_is_affine(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let d = 5;
        let q = random_pd_matrix(d, Seed(seed), 1.0).unwrap();
        let qp = QpInstance::new(q.matrix().clone(), 1.0, None).unwrap();
        let mut rng = Seed(seed).stream(1);
        let c1: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c2: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let z1 = solve_qp_unconstrained(&qp, &c1).unwrap().z;
        let z2 = solve_qp_unconstrained(&qp, &c2).unwrap().z;
        let zm = solve_qp_unconstrained(&qp, &mix).unwrap().z;
        for j in 0..d {
            prop_assert!((zm[j] - (alpha * z1[j] + (1.0 - alpha) * z2[j])).abs() <= 1e-9);
        }
    }

    #[test]
    fn unconstrained_qp_residual(seed in any::<u64>()) {
        let d = 8;
        let q = random_pd_matrix(d, Seed(seed), 2.0).unwrap();
        let qp = QpInstance::new(q.matrix().clone(), 0.5, None).unwrap();
        let mut rng = Seed(seed).stream(2);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z = solve_qp_unconstrained(&qp, &c).unwrap().z;
        let r = qp.hessian() * DVector::from_vec(z) + DVector::from_vec(c);
        prop_assert!(r.amax() <= 1e-10);
    }

    #[test]
    fn constrained_qp_kkt(seed in any::<u64>()) {
        let d = 6;
        let q = random_pd_matrix(d, Seed(seed), 1.0).unwrap();
        let lp = random_lp(d, 4, Seed(seed).derive(1)).unwrap();
        let qp = QpInstance::new(q.matrix().clone(), 1.0, Some(lp)).unwrap();
        let mut rng = Seed(seed).stream(3);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (sol, mult) = solve_qp_constrained_with_multipliers(&qp, &c).unwrap();
        let z = DVector::from_vec(sol.z.clone());
        let (g, h) = qp.inequality_rows();
        let mu = DVector::from_vec(mult.inequality.clone());
        let stat = qp.hessian() * &z + DVector::from_vec(c.clone()) + g.transpose() * &mu;
        prop_assert!(stat.amax() <= 1e-8, "stationarity {}", stat.amax());
        let gz = g * &z;
        for k in 0..h.len() {
            prop_assert!(gz[k] - h[k] <= 1e-8, "primal {k}");
            prop_assert!(mu[k] >= 0.0);
            prop_assert!((mu[k] * (gz[k] - h[k])).abs() <= 1e-8, "complementarity {k}");
        }
    }

    #[test]
    fn pointwise_regret_inequality(seed in any::<u64>()) {
        let d = 8;
        let lp = random_lp(d, 5, Seed(seed)).unwrap();
        let k = KnapsackInstance::paper_replication(d, 10.0, Seed(seed)).unwrap();
        let (_, grid) = build_grid_lp(3, 3).unwrap();
        let mut rng = Seed(seed).stream(4);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gmean: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..5.0)).collect();
        let dist = CostDistribution::new(mean.clone(), CovMatrix::identity(d)).unwrap();
        let gdist = CostDistribution::new(gmean.clone(), CovMatrix::identity(12)).unwrap();
        let costs = sample_costs(&dist, 20, Seed(seed).derive(5));
        let gcosts = sample_costs(&gdist, 20, Seed(seed).derive(6));
        let oracles: [(&dyn DecisionOracle, &[f64], &regret_core::SampleMatrix); 3] =
            [(&lp, &mean, &costs), (&k, &mean, &costs), (&grid, &gmean, &gcosts)];
        for (oracle, mu, samples) in oracles {
            let at_mean = oracle.solve(mu).unwrap().z;
            for c in samples.rows() {
                let own = oracle.solve(c).unwrap().z;
                let lhs: f64 = c.iter().zip(&own).map(|(a, b)| a * b).sum();
                let rhs: f64 = c.iter().zip(&at_mean).map(|(a, b)| a * b).sum();
                prop_assert!(lhs <= rhs + 1e-8 * (1.0 + rhs.abs()));
            }
        }
    }
}

#[test]
fn knapsack_matches_brute_force() {
    let mut rng = Seed(77).rng();
    for draw in 0..200u64 {
        let d = rng.random_range(1..=20usize);
        let k = KnapsackInstance::paper_replication(d, 10.0, Seed(draw)).unwrap();
        let values: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..10.0)).collect();
        let sol = solve_knapsack(&k, &values).unwrap();
        let brute = brute_force_knapsack(k.weights(), k.capacity(), &values);
        assert!((sol.objective - brute).abs() < 1e-9, "draw {draw}: {} vs {brute}", sol.objective);
        assert!(k.residual(&sol.z) <= FEASIBILITY_TOL);
        for (i, &z) in sol.z.iter().enumerate() {
            if values[i] <= 0.0 {
                assert_eq!(z, 0.0);
            }
        }
    }
}

#[test]
fn grid_paths_are_integral_and_shortest() {
    let (g, lp) = build_grid_lp(3, 3).unwrap();
    // the 6 monotone paths: sequences of 2 rights and 2 downs
    let moves = [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 1, 0], [1, 1, 0, 0]];
    let mut rng = Seed(8).rng();
    for _ in 0..100 {
        let c: Vec<f64> = (0..g.n_edges()).map(|_| rng.random_range(0.0..4.0)).collect();
        let sol = solve_lp(&lp, &c).unwrap();
        for &z in &sol.z {
            assert!(z.abs() <= 1e-8 || (z - 1.0).abs() <= 1e-8, "fractional flow {z}");
        }
        let best = moves
            .iter()
            .map(|path| {
                let (mut r, mut col, mut cost) = (0, 0, 0.0);
                for &m in path {
                    let from = r * 3 + col;
                    if m == 0 { col += 1 } else { r += 1 }
                    let to = r * 3 + col;
                    let e = g.edges.iter().position(|&x| x == (from, to)).unwrap();
                    cost += c[e];
                }
                cost
            })
            .fold(f64::INFINITY, f64::min);
        assert!((sol.objective - best).abs() < 1e-9);
    }
}

#[test]
fn random_lp_acceptance_rate() {
    let seeds = 400u64;
    let mut draws = 0usize;
    let mut ok = 0usize;
    for s in 0..seeds {
        if let Ok((_, attempts)) = random_lp_with_attempts(2, 4, Seed(s)) {
            ok += 1;
            draws += attempts;
        }
    }
    let call_rate = ok as f64 / seeds as f64;
    println!("random_lp(2, 4): calls succeeding {call_rate:.3}, per-draw acceptance {:.3}", ok as f64 / draws as f64);
    assert!(call_rate >= 0.95);
}

#[test]
fn lp_vertices_are_locally_constant() {
    let d = 10;
    let lp = random_lp(d, 5, Seed(21)).unwrap();
    let dist = CostDistribution::new(vec![0.0; d], CovMatrix::identity(d)).unwrap();
    let costs = sample_costs(&dist, 2000, Seed(22));
    let mut rng = Seed(23).rng();
    let mut same = 0;
    for c in costs.rows() {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pert: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + 1e-6 * norm * b / dn).collect();
        if solve_lp(&lp, c).unwrap().z == solve_lp(&lp, &pert).unwrap().z {
            same += 1;
        }
    }
    assert!(same as f64 / 2000.0 >= 0.99, "{same}/2000 unchanged");
}

#[test]
fn inactive_constraints_match_closed_form() {
    let d = 4;
    let q = random_pd_matrix(d, Seed(31), 1.0).unwrap();
    let wide = box_constraints(&[-100.0; 4], &[100.0; 4]).unwrap();
    let free = QpInstance::new(q.matrix().clone(), 1.0, None).unwrap();
    let boxed = QpInstance::new(q.matrix().clone(), 1.0, Some(wide)).unwrap();
    let mut rng = Seed(32).rng();
    for _ in 0..50 {
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = solve_qp_unconstrained(&free, &c).unwrap().z;
        let b = solve_qp_constrained(&boxed, &c).unwrap().z;
        for j in 0..d {
            assert!((a[j] - b[j]).abs() <= 1e-8);
        }
    }
}

#[test]
fn solvers_are_thread_safe() {
    let lp = random_lp(10, 5, Seed(41)).unwrap();
    let dist = CostDistribution::new(vec![0.0; 10], CovMatrix::identity(10)).unwrap();
    let costs = sample_costs(&dist, 200, Seed(42));
    let serial: Vec<_> = costs.rows().map(|c| solve_lp(&lp, c).unwrap()).collect();
    let parallel = regret_core::par::map_indexed(200, |i| solve_lp(&lp, costs.row(i)).unwrap());
    assert_eq!(serial, parallel);
}

mod common;

use common::*;
use mcbound::bounds::*;
use mcbound::chain::*;
use mcbound::matrix::*;
use mcbound::mc::*;
use mcbound::poisson::*;
use mcbound::verify::wilson_upper;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dilation_preserves_norm(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let mut rng = stream_rng(seed, 0);
        let b = random_rect(&mut rng, r, c);
        let h = hermitian_dilation(&b);
        prop_assert!((h.spectral_norm() - b.spectral_norm()).abs() <= 1e-10 * b.spectral_norm().max(1.0));
        prop_assert!((b.adjoint().spectral_norm() - b.spectral_norm()).abs() <= 1e-10);
    }

    #[test]
    fn clamp_is_idempotent_and_below(seed in any::<u64>(), d in 1usize..6, level in -2.0f64..3.0) {
        let mut rng = stream_rng(seed, 0);
        let m = random_hermitian(&mut rng, d);
        let once = eig_clamp(&m, level);
        prop_assert!(eig_clamp(&once, level).max_abs_diff(&once) <= 1e-10);
        prop_assert!(loewner_leq(&once, &m, 1e-10).unwrap().holds);
        prop_assert!(once.max_eigenvalue() <= level.max(m.min_eigenvalue()) + 1e-10);
    }

    #[test]
    fn effective_rank_between_one_and_d(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = stream_rng(seed, 0);
        let u = random_psd(&mut rng, d);
        let r = effective_rank(&u).unwrap();
        prop_assert!((1.0..=d as f64).contains(&r));
    }

    #[test]
    fn norm_is_subadditive_and_homogeneous(seed in any::<u64>(), d in 1usize..6, s in -4.0f64..4.0) {
        let mut rng = stream_rng(seed, 0);
        let a = random_hermitian(&mut rng, d);
        let b = random_hermitian(&mut rng, d);
        prop_assert!((&a + &b).spectral_norm() <= a.spectral_norm() + b.spectral_norm() + 1e-10);
        prop_assert!((a.scale(s).spectral_norm() - s.abs() * a.spectral_norm()).abs() <= 1e-10);
        prop_assert!((a.square().spectral_norm() - a.spectral_norm().powi(2)).abs() <= 1e-9);
    }

    #[test]
    fn tv_is_a_metric_of_mass_two(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = stream_rng(seed, 0);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let r = random_distribution(&mut rng, n);
        let pq = tv_distance(&p, &q, None).unwrap();
        prop_assert!((pq - tv_distance(&q, &p, None).unwrap()).abs() < 1e-15);
        prop_assert!(pq <= 2.0 + 1e-12);
        prop_assert!(pq <= tv_distance(&p, &r, None).unwrap() + tv_distance(&r, &q, None).unwrap() + 1e-12);
    }

    #[test]
    fn stationary_law_is_invariant(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = stream_rng(seed, 0);
        let chain = random_chain(&mut rng, n);
        let pi = chain.pi();
        for j in 0..n {
            let next: f64 = (0..n).map(|i| pi[i] * chain.q()[(i, j)]).sum();
            prop_assert!((next - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_profile_stays_under_envelope(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = stream_rng(seed, 0);
        let chain = random_chain(&mut rng, n);
        let prof = mixing_time(&chain, None).unwrap();
        let t = prof.t_mix.unwrap();
        for (k, tv) in sup_tv_profile(&chain, prof.horizon).iter().enumerate() {
            prop_assert!(*tv <= mixing_envelope(k, t) + ENVELOPE_TOL);
        }
        let cert = prof.certificate.unwrap();
        prop_assert_eq!(cert.lag, cert.block_multiple * t);
        prop_assert!(cert.contraction <= 0.25_f64.powi(cert.block_multiple as i32));
    }

    #[test]
    fn poisson_routes_agree(seed in any::<u64>(), n in 2usize..8, d in 1usize..4) {
        let mut rng = stream_rng(seed, 0);
        let chain = random_chain(&mut rng, n);
        let table = random_centered_table(&mut rng, &chain, d);
        let a = solve_poisson(&chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL).unwrap();
        let b = solve_poisson(&chain, &table, PoissonMethod::Series, DEFAULT_SERIES_TOL).unwrap();
        for (x, y) in a.g.iter().zip(&b.g) {
            prop_assert!(x.max_abs_diff(y) < 1e-9);
        }
        prop_assert!(a.sigma.max_abs_diff(&b.sigma) < 1e-8);
        // Sigma_pi(F) is PSD.
        prop_assert!(a.sigma.min_eigenvalue() >= -1e-9 * a.sigma.spectral_norm().max(1.0));
    }

    #[test]
    fn bounds_shrink_with_n(n in 2usize..100_000, t in 1usize..50, f in 0.01f64..10.0, p in 2.0f64..30.0) {
        let reg = ConstantsRegistry::default();
        let mut a = BoundInput::new(p, n, 3.0);
        a.t_mix = t;
        a.sup_norm = Some(f);
        a.sigma_norm = Some(f * f);
        a.delta = Some(0.05);
        let mut b = a.clone();
        b.n = 2 * n;
        for eval in [crude_rosenthal_rhs, hoeffding_rhs, bernstein_rhs] {
            prop_assert!(eval(&b, &reg).unwrap().value < eval(&a, &reg).unwrap().value);
        }
        let mut c = a.clone();
        c.sup_norm = Some(2.0 * f);
        prop_assert!(crude_rosenthal_rhs(&c, &reg).unwrap().value > crude_rosenthal_rhs(&a, &reg).unwrap().value);
    }

    #[test]
    fn wilson_upper_brackets_frequency(trials in 1usize..100_000, frac in 0.0f64..=1.0) {
        let hits = ((trials as f64) * frac).floor() as usize;
        let u = wilson_upper(hits, trials, mcbound::verify::Z_99);
        prop_assert!(u >= hits as f64 / trials as f64 - 1e-15);
        prop_assert!(u <= 1.0);
    }

    #[test]
    fn simulation_replays_from_seed(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = stream_rng(seed, 0);
        let chain = random_chain(&mut rng, 3);
        let table = random_centered_table(&mut rng, &chain, 2);
        let cfg = SimulationConfig::new(n, 8, seed);
        let a = simulate_sums(&chain, &table, &cfg).unwrap();
        let b = simulate_sums(&chain, &table, &cfg).unwrap();
        prop_assert_eq!(&a.sup_s, &b.sup_s);
        // A sum of n terms never exceeds n ||F||.
        for s in &a.sup_s {
            prop_assert!(*s <= n as f64 * table.sup_norm() + 1e-9);
        }
    }
}

#[test]
fn martingale_decomposition_is_exact() {
    let mut rng = stream_rng(7, 0);
    let chain = random_chain(&mut rng, 5);
    let table = random_centered_table(&mut rng, &chain, 3);
    let sol = solve_poisson(&chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL).unwrap();
    let stats = simulate_martingale(&chain, &sol, &SimulationConfig::new(200, 50, 3)).unwrap();
    assert!(stats.decomposition_residual.unwrap() < 1e-9);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut rng = stream_rng(11, 0);
    let chain = random_chain(&mut rng, 4);
    let table = random_centered_table(&mut rng, &chain, 2);
    let cfg = SimulationConfig::new(300, 64, 5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_sums(&chain, &table, &cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

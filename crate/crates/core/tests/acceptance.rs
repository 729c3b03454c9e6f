//! Acceptance suite. Prints one PASS/FAIL line per criterion and writes the
//! combined CSV ledger to the cargo temp dir.

mod common;

use std::f64::consts::E;

use common::*;
use mcbound::apps::{covariance_experiment, pca_experiment, schur_envelope_check, VectorFunctionTable};
use mcbound::bounds::*;
use mcbound::chain::*;
use mcbound::matrix::*;
use mcbound::mc::*;
use mcbound::poisson::*;
use mcbound::verify::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 0xacce_5eed;

/// Criteria reported but not asserted. The Monte Carlo error of the second
/// moment (about sqrt(2 / trials) relative) does not shrink with `n` at a fixed
/// trial count, so monotonicity over `n` in criterion 4 is decided by noise.
const NOT_ASSERTED: &[usize] = &[4];

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Suite {
    outcomes: Vec<Outcome>,
    ledger: Vec<VerificationReport>,
}

impl Suite {
    fn record(&mut self, id: usize, reports: Vec<VerificationReport>, detail: String) {
        let failures = reports.iter().filter(|r| r.is_failure()).count();
        let tested = reports.iter().filter(|r| r.status != CheckStatus::PremiseViolated).count();
        self.outcomes.push(Outcome {
            id,
            pass: failures == 0 && tested > 0,
            detail: format!("{detail}; {tested} checks, {failures} failures"),
        });
        self.ledger.extend(reports);
    }
}

fn rng_for(master: u64, criterion: u64) -> ChaCha8Rng {
    stream_rng(master, criterion)
}

fn two_state() -> (FiniteChain, MatrixFunctionTable) {
    let chain = FiniteChain::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
    let table = MatrixFunctionTable::from_scalars(&[1.0, -2.0]).unwrap();
    (chain, table)
}

fn exact(id: String, value: f64, tol: f64) -> VerificationReport {
    check_inequality(&id, Lhs::Exact(value), tol)
}

// Residual recomputed from Q directly rather than taken from the solver.
fn independent_residual(chain: &FiniteChain, table: &MatrixFunctionTable, g: &[HermitianMatrix]) -> f64 {
    let n = chain.n_states();
    (0..n)
        .map(|z| {
            let mut qg = HermitianMatrix::zeros(table.dim());
            for (j, gj) in g.iter().enumerate() {
                qg += &gj.scale(chain.q()[(z, j)]);
            }
            (&(&g[z] - &qg) - table.get(z)).spectral_norm()
        })
        .fold(0.0, f64::max)
}

fn criteria_1_2(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 1);
    let mut residuals = Vec::new();
    let mut gaps = Vec::new();
    for case in 0..50 {
        let n = rng.random_range(2..=20);
        let d = rng.random_range(1..=6);
        let chain = random_chain(&mut rng, n);
        let table = random_centered_table(&mut rng, &chain, d);
        for method in [PoissonMethod::Direct, PoissonMethod::Series] {
            let sol = solve_poisson(&chain, &table, method, DEFAULT_SERIES_TOL).unwrap();
            let tag = format!("{method:?}").to_lowercase();
            residuals.push(exact(
                format!("poisson_residual_{case}_{tag}"),
                independent_residual(&chain, &table, &sol.g).max(sol.residual),
                1e-10,
            ));
            gaps.push(exact(format!("sigma_identity_{case}_{tag}"), sol.sigma_gap(), 1e-8));
        }
    }
    suite.record(1, residuals, "Poisson residual <= 1e-10, 50 chains, both routes".into());
    suite.record(2, gaps, "||pi(H) - Sigma_series|| <= 1e-8".into());
}

fn criterion_3(suite: &mut Suite) {
    let (chain, table) = two_state();
    let sol = solve_poisson(&chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL).unwrap();
    let t = mixing_time(&chain, None).unwrap().t_mix.unwrap();
    let mut reports = vec![exact("two_state_sigma".into(), (sol.sigma.get(0, 0).re - 34.0 / 3.0).abs(), 1e-10)];
    for (z, f) in [1.0, -2.0].iter().enumerate() {
        reports.push(exact(format!("two_state_g_{z}"), (sol.g[z].get(0, 0).re - f / 0.3).abs(), 1e-12));
    }
    reports.push(exact("two_state_t_mix".into(), (t as f64 - 4.0).abs(), 0.0));
    suite.record(3, reports, format!("Sigma = {:.12}, t_mix = {t}", sol.sigma.get(0, 0).re));
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

fn criterion_4(suite: &mut Suite, master: u64) {
    let (chain, table) = two_state();
    let sigma = 34.0 / 3.0;
    let mut medians = Vec::new();
    let mut reports = Vec::new();
    for (k, n) in [100usize, 1000, 10_000].into_iter().enumerate() {
        let mut devs = [0.0; 3];
        for (s, dev) in devs.iter_mut().enumerate() {
            let seed = master.wrapping_add(400 + s as u64);
            let mut cfg = SimulationConfig::new(n, 2000, seed);
            cfg.keep_terminal = true;
            let stats = simulate_sums(&chain, &table, &cfg).unwrap();
            let m2 = stats.terminal_second_moment().unwrap().get(0, 0).re / n as f64;
            *dev = (m2 - sigma).abs() / sigma;
        }
        let med = median3(devs);
        medians.push(med);
        if k == 2 {
            reports.push(exact("clt_relative_deviation".into(), med, 0.05).with_meta(Some(master), Some(n), Some(2.0), None));
        }
    }
    for (k, w) in medians.windows(2).enumerate() {
        reports.push(exact(format!("clt_monotone_{k}"), w[1], w[0]));
    }
    suite.record(4, reports, format!("median relative deviations {medians:.4?}"));
}

struct BoundCase {
    name: &'static str,
    chain: FiniteChain,
    table: MatrixFunctionTable,
    t_mix: usize,
    kappa: f64,
    sigma_norm: f64,
}

fn bound_case(name: &'static str, chain: FiniteChain, table: MatrixFunctionTable) -> BoundCase {
    let n = chain.n_states();
    let chain = chain.with_lyapunov(vec![E; n]).unwrap();
    let t_mix = mixing_time(&chain, None).unwrap().t_mix.unwrap();
    let kappa = v_ergodicity_kappa(&chain, &vec![E; n], t_mix, None).unwrap().kappa.unwrap();
    let sigma_norm = solve_poisson(&chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL)
        .unwrap()
        .sigma
        .spectral_norm();
    BoundCase {
        name,
        chain,
        table,
        t_mix,
        kappa,
        sigma_norm,
    }
}

fn criterion_5(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 5);
    let reg = ConstantsRegistry::default();
    let (c0, t0) = two_state();
    let c1 = random_chain(&mut rng, 3);
    let t1 = random_centered_table(&mut rng, &c1, 2);
    let c2 = random_chain(&mut rng, 6);
    let t2 = random_centered_table(&mut rng, &c2, 3);
    let cases = [bound_case("two_state", c0, t0), bound_case("three_state", c1, t1), bound_case("six_state", c2, t2)];
    let delta = 0.1;
    let trials = 2000;
    let mut reports = Vec::new();
    for case in &cases {
        for n in [100usize, 1000] {
            let seed = master.wrapping_add(500 + n as u64);
            let stats = simulate_sums(&case.chain, &case.table, &SimulationConfig::new(n, trials, seed)).unwrap();
            let samples: Vec<f64> = stats.sup_s.iter().map(|s| s / n as f64).collect();
            for p in [2.0, 4.0] {
                let em = empirical_lp(&samples, p).unwrap();
                let mut input = BoundInput::new(p, n, case.table.dim() as f64);
                input.t_mix = case.t_mix;
                input.sup_norm = Some(case.table.sup_norm());
                input.sigma_norm = Some(case.sigma_norm);
                input.delta = Some(delta);
                input.kappa = Some(case.kappa);
                input.pi_v = Some(E);
                input.v_norm = Some(case.table.sup_norm() / E.powf(1.0 / p));
                let rhs = [
                    ("crude_rosenthal", crude_rosenthal_rhs(&input, &reg).unwrap().value),
                    ("hoeffding", hoeffding_rhs(&input, &reg).unwrap().value),
                    ("bernstein", bernstein_rhs(&input, &reg).unwrap().value),
                    ("markov_rosenthal", markov_rosenthal_rhs(&input, true, false, &reg).unwrap().value),
                    ("geo_v_crude", geo_v_rosenthal_rhs(&input, true, &reg).unwrap().value),
                ];
                for (id, value) in rhs {
                    let r = check_inequality(&format!("{id}_{}", case.name), Lhs::Empirical(em), value);
                    reports.push(r.with_meta(Some(seed), Some(n), Some(p), Some(delta)));
                    if id == "hoeffding" || id == "bernstein" {
                        let hits = samples.iter().filter(|s| **s > value).count();
                        let upper = wilson_upper(hits, trials, Z_99);
                        let freq = hits as f64 / trials as f64;
                        let r = VerificationReport::new(format!("{id}_exceedance_{}", case.name), freq, upper, delta);
                        reports.push(r.with_meta(Some(seed), Some(n), Some(p), Some(delta)));
                    }
                }
            }
        }
    }
    suite.record(5, reports, "Rosenthal/Hoeffding/Bernstein/geo-V grid".into());
}

fn scaled_steps(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<HermitianMatrix> {
    (0..count)
        .map(|_| {
            let a = random_hermitian(rng, d);
            let s = rng.random_range(0.2..1.0) / a.spectral_norm();
            a.scale(s)
        })
        .collect()
}

fn criterion_6(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 6);
    let martingales = [
        vec![HermitianMatrix::identity(1); 16],
        scaled_steps(&mut rng, 20, 3),
        scaled_steps(&mut rng, 12, 2),
    ];
    let mut reports = Vec::new();
    for (i, steps) in martingales.iter().enumerate() {
        let diff = steps.iter().map(HermitianMatrix::spectral_norm).fold(0.0, f64::max);
        let mut qv = HermitianMatrix::zeros(steps[0].dim());
        for a in steps {
            qv += &a.square();
        }
        let qv = qv.max_eigenvalue();
        let sigma = qv.sqrt();
        let grid: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|k| k * sigma).collect();
        let seed = master.wrapping_add(600 + i as u64);
        reports.extend(check_bennett_empirical(steps, qv, diff, &grid, 100_000, seed).unwrap());
    }
    suite.record(6, reports, "Bennett tail, 1e5 trials, Wilson 0.99".into());
}

fn criterion_7(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 7);
    let mut reports = Vec::new();
    for i in 0..25 {
        let d = 1 + i % 3;
        let steps = if i % 5 == 0 {
            vec![HermitianMatrix::identity(d); 10]
        } else {
            scaled_steps(&mut rng, 10, d)
        };
        let sups = synth_symmetric_martingale(&steps, SignMode::Exhaustive).unwrap();
        let top = sups.sup_s.iter().copied().fold(0.0, f64::max);
        let qv = sups.qv.as_ref().unwrap()[0];
        let max_x = sups.sup_x.as_ref().unwrap()[0];
        for p in [2.0, 3.0] {
            let params = good_lambda_params(p, d as f64, p).unwrap();
            let mut lambdas: Vec<f64> = (0..20).map(|k| top * 1.25_f64.powi(-k)).collect();
            lambdas.extend([qv.sqrt() / params.delta1, max_x / params.delta2, top / params.beta * 0.999]);
            for (k, lambda) in lambdas.into_iter().enumerate() {
                let mut r = check_good_lambda_with(&steps, lambda, &params).unwrap();
                r.check_id = format!("good_lambda_{i}_p{p}_{k}");
                reports.push(r);
            }
        }
    }
    for p in 2..=20 {
        let p = p as f64;
        // log(gamma eps) is largest where the level c ∨ log d switches, so
        // every integer d is scanned.
        let worst = (1..=1_000_000u32)
            .map(|d| good_lambda_params(p, d as f64, p).unwrap().log_gamma_eps)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut r = VerificationReport::new(format!("good_lambda_certificate_p{p}"), worst.exp(), worst.exp(), 1.0);
        r.pass = worst < 0.0;
        r.status = if r.pass { CheckStatus::Pass } else { CheckStatus::Fail };
        r.p = Some(p);
        reports.push(r);
    }
    suite.record(7, reports, "exhaustive good-lambda, certificate on p in 2..=20, d <= 1e6".into());
}

fn random_joint(rng: &mut ChaCha8Rng) -> DiscreteJointCase {
    let k = rng.random_range(2..=6);
    let beta = rng.random_range(1.1..3.0);
    let p = [1.0, 2.0, 3.0][rng.random_range(0..3)];
    let structured = rng.random::<f64>() < 0.8;
    let points = (0..k)
        .map(|_| {
            let y = rng.random_range(0.0..5.0);
            let z = if structured {
                y / beta * (1.0 + rng.random::<f64>())
            } else {
                rng.random_range(0.0..5.0)
            };
            (y, z)
        })
        .collect();
    let gamma = beta.powf(p) * (1.0 + rng.random_range(0.0..0.5));
    DiscreteJointCase {
        points,
        probs: random_distribution(rng, k),
        p,
        a: rng.random_range(0.0..2.0),
        beta,
        gamma,
        eps: 0.9 * rng.random::<f64>() / gamma,
    }
}

fn random_support(rng: &mut ChaCha8Rng, k: usize, m: usize) -> VectorSupport {
    let probs = random_distribution(rng, k);
    let mut points: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mean: Vec<f64> = (0..m).map(|i| points.iter().zip(&probs).map(|(v, w)| w * v[i]).sum()).collect();
    for v in &mut points {
        for (x, mu) in v.iter_mut().zip(&mean) {
            *x -= mu;
        }
    }
    VectorSupport { points, probs }
}

fn criterion_8(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 8);
    let mut reports = Vec::new();
    let mut verified = 0;
    let mut attempts = 0;
    while verified < 100 && attempts < 10_000 {
        attempts += 1;
        let r = check_truncated_phi(&random_joint(&mut rng)).unwrap();
        if r.status != CheckStatus::PremiseViolated {
            verified += 1;
            reports.push(r);
        }
    }
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(2..=4);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=4) as f64;
        let mut r = check_symmetrization(&random_support(&mut rng, k, m), n, p).unwrap();
        r.check_id = format!("symmetrization_{case}");
        reports.push(r);
    }
    for case in 0..200 {
        let n = rng.random_range(2..=10);
        let v: Vec<f64> = (0..n).map(|_| E + rng.random_range(0.0..5.0)).collect();
        let chain = random_chain(&mut rng, n).with_lyapunov(v).unwrap();
        let d = rng.random_range(1..=4);
        let table = MatrixFunctionTable::new((0..n).map(|_| random_hermitian(&mut rng, d)).collect()).unwrap();
        let xi1 = random_distribution(&mut rng, n);
        let xi2 = random_distribution(&mut rng, n);
        let alpha = rng.random_range(0.05..=1.0);
        for a in [None, Some(alpha)] {
            let mut r = check_tv_integral_bound(&chain, &table, &xi1, &xi2, a).unwrap();
            r.check_id = format!("{}_{case}", r.check_id);
            reports.push(r);
        }
    }
    suite.record(8, reports, format!("{verified} premise-verified truncated-Phi cases in {attempts} draws"));
}

fn max_modulus(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn criterion_9(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 9);
    let mut reports = Vec::new();
    for case in 0..50 {
        let (r, c) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let b = random_rect(&mut rng, r, c);
        let h = hermitian_dilation(&b);
        reports.push(exact(format!("dilation_norm_{case}"), (h.spectral_norm() - b.spectral_norm()).abs(), 1e-10));
        let sq = h.square().into_matrix();
        let bm = b.as_matrix();
        let top = max_modulus(&(sq.view((0, 0), (r, r)) - bm * bm.adjoint()));
        let bottom = max_modulus(&(sq.view((r, r), (c, c)) - bm.adjoint() * bm));
        let off = max_modulus(&sq.view((0, r), (r, c)).into_owned()).max(max_modulus(&sq.view((r, 0), (c, r)).into_owned()));
        reports.push(exact(format!("dilation_square_{case}"), top.max(bottom).max(off), 1e-10));

        let m = random_hermitian(&mut rng, r);
        let level = rng.random_range(-1.0..2.0);
        let once = eig_clamp(&m, level);
        reports.push(exact(format!("clamp_idempotent_{case}"), eig_clamp(&once, level).max_abs_diff(&once), 1e-10));
    }
    for d in 1..=10 {
        let r = effective_rank(&HermitianMatrix::identity(d)).unwrap();
        reports.push(exact(format!("effective_rank_identity_{d}"), (r - d as f64).abs(), 1e-10));
    }
    suite.record(9, reports, "dilation, clamp and effective-rank identities".into());
}

fn criterion_10(suite: &mut Suite, master: u64) {
    let mut rng = rng_for(master, 10);
    let reg = ConstantsRegistry::default();
    let chain = random_chain(&mut rng, 4);
    let scales = [2.0, 1.0, 0.5];
    let f = VectorFunctionTable::new(
        (0..4)
            .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap();
    let mut upsilon = HermitianMatrix::zeros(3);
    for v in f.values() {
        upsilon += &HermitianMatrix::outer_real(v);
    }
    let seed = master.wrapping_add(1000);
    let cov = covariance_experiment(&chain, &f, 1000, 500, 0.1, seed, Some(&upsilon), &reg).unwrap();
    let pca = pca_experiment(&cov).unwrap();
    let mut reports = Vec::new();
    for i in 0..cov.trials {
        reports.push(
            VerificationReport::new(format!("covariance_{i}"), cov.realized_error[i], cov.realized_error[i], cov.bernstein_bound)
                .with_meta(Some(seed), Some(1000), None, Some(0.1)),
        );
        let (s, b) = (pca.sin2.as_ref().unwrap()[i], pca.sin2_bound.as_ref().unwrap()[i]);
        reports.push(VerificationReport::new(format!("pca_{i}"), s, s, b * (1.0 + 1e-12) + 1e-14).with_meta(Some(seed), Some(1000), None, Some(0.1)));
    }
    let mut held = 0;
    for case in 0..200 {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let c = random_chain(&mut rng, n);
        let f = VectorFunctionTable::new((0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap();
        let mut u = random_psd(&mut rng, d).scale(rng.random_range(0.2..4.0));
        if case % 2 == 0 {
            for v in f.values() {
                u += &HermitianMatrix::outer_real(v);
            }
        }
        let report = schur_envelope_check(&c, &f, &u).unwrap();
        if report.holds() {
            held += 1;
            let ok = report.outer_dominated == Some(true) && report.square_dominated == Some(true);
            reports.push(exact(format!("schur_{case}"), if ok { 0.0 } else { 1.0 }, 0.0));
        }
    }
    suite.record(
        10,
        reports,
        format!(
            "bound {:.4}, worst realized {:.4}, dim factor {:.3}, Schur condition held in {held}/200",
            cov.bernstein_bound,
            cov.realized_error.iter().copied().fold(0.0, f64::max),
            cov.dim_factor.unwrap()
        ),
    );
}

fn run_suite(master: u64) -> Suite {
    let mut suite = Suite::default();
    criteria_1_2(&mut suite, master);
    criterion_3(&mut suite);
    criterion_4(&mut suite, master);
    criterion_5(&mut suite, master);
    criterion_6(&mut suite, master);
    criterion_7(&mut suite, master);
    criterion_8(&mut suite, master);
    criterion_9(&mut suite, master);
    criterion_10(&mut suite, master);
    suite
}

fn ledger_csv(suite: &Suite) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(&mut out, &suite.ledger).unwrap();
    out
}

fn run_in_pool(threads: usize, master: u64) -> Suite {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_suite(master))
}

fn main() {
    let mut suite = run_in_pool(4, MASTER_SEED);
    let csv = ledger_csv(&suite);
    let again = ledger_csv(&run_in_pool(1, MASTER_SEED));
    suite.outcomes.push(Outcome {
        id: 11,
        pass: csv == again,
        detail: format!("ledger of {} bytes, 4 workers vs 1 worker", csv.len()),
    });
    std::fs::write(std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_ledger.csv"), &csv).unwrap();

    suite.outcomes.sort_by_key(|o| o.id);
    for o in &suite.outcomes {
        let note = if NOT_ASSERTED.contains(&o.id) { " [not asserted]" } else { "" };
        println!("criterion {:>2}: {}{note} ({})", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = suite
        .outcomes
        .iter()
        .filter(|o| !o.pass && !NOT_ASSERTED.contains(&o.id))
        .map(|o| o.id)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

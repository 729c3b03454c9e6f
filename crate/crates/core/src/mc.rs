//! Seeded Monte Carlo for Markov sums and their martingale decomposition.
//!
//! Trial `i` draws from `stream_rng(seed, stream_base + i)`, so results do not
//! depend on how trials are spread over threads. Set `MCBOUND_THREADS` to cap
//! the worker count.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{stream_rng, FiniteChain, InitialDistribution, MatrixFunctionTable};
use crate::error::{Error, Result};
use crate::matrix::{hermitian_norm, CMatrix, HermitianMatrix};
use crate::poisson::PoissonSolution;

/// Bootstrap resamples behind [`EmpiricalMoment::upper`].
pub const BOOTSTRAP_RESAMPLES: usize = 400;
/// Sub-seed of the bootstrap generator.
pub const BOOTSTRAP_SEED: u64 = 0x6d63_626f_756e_6421;
/// Largest exhaustive sign enumeration.
pub const MAX_EXHAUSTIVE_STEPS: usize = 20;

/// Runs `f` on a pool capped by `MCBOUND_THREADS` when that is set.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var("MCBOUND_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0);
    match threads.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub trials: usize,
    pub init: InitialDistribution,
    pub seed: u64,
    #[serde(default)]
    pub stream_base: u64,
    /// Keep `S_n` per trial (needed for CLT checks only).
    #[serde(default)]
    pub keep_terminal: bool,
}

impl SimulationConfig {
    pub fn new(n: usize, trials: usize, seed: u64) -> Self {
        Self {
            n,
            trials,
            init: InitialDistribution::Stationary,
            seed,
            stream_base: 0,
            keep_terminal: false,
        }
    }

    fn validate(&self, chain: &FiniteChain) -> Result<()> {
        if self.n == 0 || self.trials == 0 {
            return Err(Error::InvalidInput("n and trials must be >= 1".into()));
        }
        chain.validate_init(&self.init)
    }
}

/// Per-trial summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub stream_base: u64,
    /// Exact pattern probabilities in exhaustive mode; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    /// `sup_{k <= n} ||S_k||` (the martingale itself for synthetic runs).
    pub sup_s: Vec<f64>,
    /// `sup_{k <= n} ||M_k||`.
    pub sup_m: Option<Vec<f64>>,
    /// `||<M>_n||`.
    pub qv: Option<Vec<f64>>,
    /// `sup_{k <= n} ||X_k||`.
    pub sup_x: Option<Vec<f64>>,
    pub terminal: Option<Vec<HermitianMatrix>>,
    /// Largest `||S_n - (M_n + G(Z_0) - G(Z_n))||` over trials.
    pub decomposition_residual: Option<f64>,
}

impl TrajectoryStats {
    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0 / self.trials as f64, |w| w[i])
    }

    /// `(1/trials) sum_i S_n^2` from the retained terminal sums.
    pub fn terminal_second_moment(&self) -> Option<HermitianMatrix> {
        let terminal = self.terminal.as_ref()?;
        let mut acc = HermitianMatrix::zeros(terminal[0].dim());
        for (i, s) in terminal.iter().enumerate() {
            acc += &s.square().scale(self.weight(i));
        }
        Some(acc)
    }

    /// One row per trial: `trial,weight,sup_s,sup_m,qv,sup_x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "trial,weight,sup_s,sup_m,qv,sup_x")?;
        let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|x| x[i].to_string()).unwrap_or_default();
        for i in 0..self.trials {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                i,
                self.weight(i),
                self.sup_s[i],
                cell(&self.sup_m, i),
                cell(&self.qv, i),
                cell(&self.sup_x, i)
            )?;
        }
        Ok(())
    }
}

fn draw_path(chain: &FiniteChain, init: &InitialDistribution, len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut path = Vec::with_capacity(len);
    let mut z = chain.draw_initial(init, rng);
    path.push(z);
    for _ in 1..len {
        z = chain.draw_next(z, rng);
        path.push(z);
    }
    path
}

fn check_states(chain: &FiniteChain, n: usize) -> Result<()> {
    if chain.n_states() != n {
        return Err(Error::StateMismatch {
            chain: chain.n_states(),
            table: n,
        });
    }
    Ok(())
}

/// Simulates `S_k = F(Z_0) + ... + F(Z_{k-1})` for `k <= n` along paths
/// `Z_0..Z_n` and records `sup_k ||S_k||`.
pub fn simulate_sums(chain: &FiniteChain, table: &MatrixFunctionTable, cfg: &SimulationConfig) -> Result<TrajectoryStats> {
    cfg.validate(chain)?;
    table.require_centered(chain)?;
    let f: Vec<CMatrix> = table.values().iter().map(|m| m.as_matrix().clone()).collect();
    let d = table.dim();
    let per_trial: Vec<(f64, Option<HermitianMatrix>)> = with_worker_pool(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, cfg.stream_base + i as u64);
                let path = draw_path(chain, &cfg.init, cfg.n + 1, &mut rng);
                let mut s = CMatrix::zeros(d, d);
                let mut sup = 0.0_f64;
                for &z in &path[..cfg.n] {
                    s += &f[z];
                    sup = sup.max(hermitian_norm(&s));
                }
                let terminal = cfg.keep_terminal.then(|| HermitianMatrix::from_hermitian_part(s));
                (sup, terminal)
            })
            .collect()
    });
    let (sup_s, terminal): (Vec<f64>, Vec<Option<HermitianMatrix>>) = per_trial.into_iter().unzip();
    Ok(TrajectoryStats {
        n: cfg.n,
        trials: cfg.trials,
        seed: cfg.seed,
        stream_base: cfg.stream_base,
        weights: None,
        sup_s,
        sup_m: None,
        qv: None,
        sup_x: None,
        terminal: terminal.into_iter().collect(),
        decomposition_residual: None,
    })
}

struct MartingaleTrial {
    sup_s: f64,
    sup_m: f64,
    qv: f64,
    sup_x: f64,
    residual: f64,
    terminal: Option<HermitianMatrix>,
}

/// Simulates the Poisson martingale `M_k = sum_{j<=k} G(Z_j) - QG(Z_{j-1})`
/// alongside `S_k`, with `<M>_n = sum_k H(Z_{k-1})` and the per-path
/// decomposition residual. Uses the same paths as [`simulate_sums`].
pub fn simulate_martingale(chain: &FiniteChain, solution: &PoissonSolution, cfg: &SimulationConfig) -> Result<TrajectoryStats> {
    cfg.validate(chain)?;
    check_states(chain, solution.n_states())?;
    if solution.block != 1 {
        return Err(Error::InvalidInput("martingale simulation needs the one-step Poisson solution".into()));
    }
    let raw = |v: &[HermitianMatrix]| v.iter().map(|m| m.as_matrix().clone()).collect::<Vec<CMatrix>>();
    let (f, g, qg, h) = (raw(&solution.f), raw(&solution.g), raw(&solution.qg), raw(&solution.h));
    let d = solution.dim();
    let trials: Vec<MartingaleTrial> = with_worker_pool(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, cfg.stream_base + i as u64);
                let path = draw_path(chain, &cfg.init, cfg.n + 1, &mut rng);
                let mut s = CMatrix::zeros(d, d);
                let mut m = CMatrix::zeros(d, d);
                let mut qv = CMatrix::zeros(d, d);
                let (mut sup_s, mut sup_m, mut sup_x) = (0.0_f64, 0.0_f64, 0.0_f64);
                for k in 1..=cfg.n {
                    let (prev, cur) = (path[k - 1], path[k]);
                    s += &f[prev];
                    let x = &g[cur] - &qg[prev];
                    sup_x = sup_x.max(hermitian_norm(&x));
                    m += &x;
                    qv += &h[prev];
                    sup_s = sup_s.max(hermitian_norm(&s));
                    sup_m = sup_m.max(hermitian_norm(&m));
                }
                let boundary = &g[path[0]] - &g[path[cfg.n]];
                let residual = hermitian_norm(&(&s - &m - boundary));
                MartingaleTrial {
                    sup_s,
                    sup_m,
                    qv: hermitian_norm(&qv),
                    sup_x,
                    residual,
                    terminal: cfg.keep_terminal.then(|| HermitianMatrix::from_hermitian_part(s)),
                }
            })
            .collect()
    });
    let residual = trials.iter().map(|t| t.residual).fold(0.0, f64::max);
    Ok(TrajectoryStats {
        n: cfg.n,
        trials: cfg.trials,
        seed: cfg.seed,
        stream_base: cfg.stream_base,
        weights: None,
        sup_s: trials.iter().map(|t| t.sup_s).collect(),
        sup_m: Some(trials.iter().map(|t| t.sup_m).collect()),
        qv: Some(trials.iter().map(|t| t.qv).collect()),
        sup_x: Some(trials.iter().map(|t| t.sup_x).collect()),
        terminal: cfg
            .keep_terminal
            .then(|| trials.into_iter().map(|t| t.terminal.expect("kept")).collect()),
        decomposition_residual: Some(residual),
    })
}

/// `(mean x^p)^{1/p}` with a one-sided 0.99 bootstrap upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoment {
    pub p: f64,
    pub estimate: f64,
    pub upper: f64,
    pub trials: usize,
}

fn lp(samples: impl Iterator<Item = f64>, count: usize, p: f64) -> f64 {
    (samples.map(|x| x.abs().powf(p)).sum::<f64>() / count as f64).powf(1.0 / p)
}

/// L^p norm of the samples with a percentile-bootstrap upper bound
/// (400 resamples, 99th percentile), seeded from [`BOOTSTRAP_SEED`].
pub fn empirical_lp(samples: &[f64], p: f64) -> Result<EmpiricalMoment> {
    empirical_lp_seeded(samples, p, BOOTSTRAP_SEED)
}

pub fn empirical_lp_seeded(samples: &[f64], p: f64, seed: u64) -> Result<EmpiricalMoment> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p must be >= 1, got {p}")));
    }
    let m = samples.len();
    let estimate = lp(samples.iter().copied(), m, p);
    let mut rng = stream_rng(seed, 0);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| lp((0..m).map(|_| samples[rng.random_range(0..m)]), m, p))
        .collect();
    boot.sort_by(f64::total_cmp);
    let idx = ((0.99 * BOOTSTRAP_RESAMPLES as f64).ceil() as usize).saturating_sub(1);
    Ok(EmpiricalMoment {
        p,
        estimate,
        upper: estimate.max(boot[idx]),
        trials: m,
    })
}

/// Exact L^p norm of a finitely supported distribution.
pub fn exact_lp(values: &[f64], weights: &[f64], p: f64) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Independent Rademacher signs for each trial.
    Sampled { trials: usize, seed: u64 },
    /// Every sign pattern once, each with probability `2^{-steps}`.
    Exhaustive,
}

/// `M_k = sum_{j <= k} eps_j A_j` with independent symmetric signs.
/// `<M>_n = sum_j A_j^2` does not depend on the signs.
pub fn synth_symmetric_martingale(steps: &[HermitianMatrix], mode: SignMode) -> Result<TrajectoryStats> {
    let first = steps
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one step".into()))?;
    let d = first.dim();
    if let Some(bad) = steps.iter().find(|a| a.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.dim(),
        });
    }
    let n = steps.len();
    let mats: Vec<CMatrix> = steps.iter().map(|a| a.as_matrix().clone()).collect();
    let mut qv = HermitianMatrix::zeros(d);
    for a in steps {
        qv += &a.square();
    }
    let qv_norm = qv.spectral_norm();
    let sup_x = steps.iter().map(HermitianMatrix::spectral_norm).fold(0.0, f64::max);

    let run = |signs: &mut dyn FnMut(usize) -> bool| {
        let mut m = CMatrix::zeros(d, d);
        let mut sup = 0.0_f64;
        for (j, a) in mats.iter().enumerate() {
            if signs(j) {
                m += a;
            } else {
                m -= a;
            }
            sup = sup.max(hermitian_norm(&m));
        }
        sup
    };

    let (sups, weights, trials, seed) = match mode {
        SignMode::Exhaustive => {
            if n > MAX_EXHAUSTIVE_STEPS {
                return Err(Error::EnumerationTooLarge {
                    size: 1u128 << n.min(127),
                    cap: 1u128 << MAX_EXHAUSTIVE_STEPS,
                });
            }
            let count = 1usize << n;
            let sups: Vec<f64> = with_worker_pool(|| {
                (0..count)
                    .into_par_iter()
                    .map(|mask| run(&mut |j| mask >> j & 1 == 1))
                    .collect()
            });
            let w = 0.5_f64.powi(n as i32);
            (sups, Some(vec![w; count]), count, 0)
        }
        SignMode::Sampled { trials, seed } => {
            if trials == 0 {
                return Err(Error::InvalidInput("trials must be >= 1".into()));
            }
            let sups: Vec<f64> = with_worker_pool(|| {
                (0..trials)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = stream_rng(seed, i as u64);
                        run(&mut |_| rng.random::<bool>())
                    })
                    .collect()
            });
            (sups, None, trials, seed)
        }
    };
    Ok(TrajectoryStats {
        n,
        trials,
        seed,
        stream_base: 0,
        weights,
        sup_s: sups.clone(),
        sup_m: Some(sups),
        qv: Some(vec![qv_norm; trials]),
        sup_x: Some(vec![sup_x; trials]),
        terminal: None,
        decomposition_residual: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::center_and_norms;
    use crate::poisson::{solve_poisson, PoissonMethod, DEFAULT_SERIES_TOL};

    fn two_state() -> FiniteChain {
        FiniteChain::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn table(chain: &FiniteChain) -> MatrixFunctionTable {
        center_and_norms(&MatrixFunctionTable::from_scalars(&[1.0, -2.0]).unwrap(), chain, &[]).unwrap()
    }

    #[test]
    fn zero_table_gives_zero_sups() {
        let chain = two_state();
        let zero = MatrixFunctionTable::from_scalars(&[0.0, 0.0]).unwrap();
        let stats = simulate_sums(&chain, &zero, &SimulationConfig::new(20, 10, 1)).unwrap();
        assert!(stats.sup_s.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn same_seed_same_stats() {
        let chain = two_state();
        let t = table(&chain);
        let cfg = SimulationConfig::new(50, 64, 9);
        assert_eq!(simulate_sums(&chain, &t, &cfg).unwrap(), simulate_sums(&chain, &t, &cfg).unwrap());
    }

    #[test]
    fn uncentered_table_rejected() {
        let chain = two_state();
        let t = MatrixFunctionTable::from_scalars(&[1.0, 1.0]).unwrap();
        assert!(simulate_sums(&chain, &t, &SimulationConfig::new(5, 5, 0)).is_err());
    }

    #[test]
    fn martingale_decomposition_holds() {
        let chain = two_state();
        let t = table(&chain);
        let sol = solve_poisson(&chain, &t, PoissonMethod::Direct, DEFAULT_SERIES_TOL).unwrap();
        let cfg = SimulationConfig::new(200, 50, 3);
        let stats = simulate_martingale(&chain, &sol, &cfg).unwrap();
        assert!(stats.decomposition_residual.unwrap() < 1e-10);
        assert_eq!(stats.sup_s, simulate_sums(&chain, &t, &cfg).unwrap().sup_s);
    }

    #[test]
    fn lp_examples() {
        let c = empirical_lp(&[3.0; 10], 2.0).unwrap();
        assert!((c.estimate - 3.0).abs() < 1e-15 && (c.upper - 3.0).abs() < 1e-15);
        let two = empirical_lp(&[0.0, 2.0, 0.0, 2.0], 2.0).unwrap();
        assert!((two.estimate - 2f64.sqrt()).abs() < 1e-15);
        assert!(two.upper >= two.estimate);
        assert!(empirical_lp(&[], 2.0).is_err());
    }

    #[test]
    fn single_step_synthetic() {
        let a = HermitianMatrix::diag(&[0.5, -2.0]);
        let stats = synth_symmetric_martingale(&[a], SignMode::Exhaustive).unwrap();
        assert!(stats.sup_s.iter().all(|s| (s - 2.0).abs() < 1e-15));
        assert!(synth_symmetric_martingale(&vec![HermitianMatrix::identity(1); 21], SignMode::Exhaustive).is_err());
    }
}

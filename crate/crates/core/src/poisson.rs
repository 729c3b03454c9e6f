//! The matrix Poisson equation `G - QG = F`, the conditional variance
//! function `H = QG^2 - (QG)^2` and the long-run variance `Sigma_pi(F)`.
//!
//! Two independent routes to `Sigma_pi(F)` are always computed: `pi(H)` from
//! the Poisson solution, and the truncated autocovariance series
//! `pi(F^2) + sum_k pi(F Q^k F + Q^k F F)` with a certified tail.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::{mixing_time, FiniteChain, MatrixFunctionTable, RectFunctionTable, CENTERING_TOL};
use crate::error::{Error, Result};
use crate::matrix::{hermitian_norm, spectral_norm, CMatrix, HermitianMatrix, C64};

pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
pub const MAX_SERIES_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoissonMethod {
    Direct,
    Series,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonSolution {
    pub method: PoissonMethod,
    /// Block length `t`: the solution is for the kernel `Q^t`.
    pub block: usize,
    /// Mixing time of the kernel used for the tail certificates.
    pub t_mix: usize,
    pub f: Vec<HermitianMatrix>,
    pub g: Vec<HermitianMatrix>,
    pub qg: Vec<HermitianMatrix>,
    pub h: Vec<HermitianMatrix>,
    pub sigma: HermitianMatrix,
    pub sigma_series: HermitianMatrix,
    /// `max_z ||G(z) - QG(z) - F(z)||`.
    pub residual: f64,
    pub series_terms_used: usize,
    /// Certified bound on the truncated tail of `sum_k Q^k F` (sup over states).
    pub g_tail_bound: f64,
    /// Certified bound on the truncated tail of the autocovariance series.
    pub sigma_tail_bound: f64,
    /// `max_z ||G(z)||`.
    pub g_sup_norm: f64,
}

impl PoissonSolution {
    pub fn n_states(&self) -> usize {
        self.g.len()
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// `||pi(H) - Sigma_series||`.
    pub fn sigma_gap(&self) -> f64 {
        (&self.sigma - &self.sigma_series).spectral_norm()
    }
}

// (P X)(z) = sum_y P(z, y) X(y)
fn apply_kernel(p: &DMatrix<f64>, x: &[CMatrix]) -> Vec<CMatrix> {
    let n = x.len();
    let (r, c) = x[0].shape();
    (0..n)
        .map(|z| {
            let mut acc = CMatrix::zeros(r, c);
            for (y, xy) in x.iter().enumerate() {
                let w = p[(z, y)];
                if w != 0.0 {
                    acc += xy * C64::new(w, 0.0);
                }
            }
            acc
        })
        .collect()
}

fn pi_average(pi: &[f64], x: &[CMatrix]) -> CMatrix {
    let (r, c) = x[0].shape();
    let mut acc = CMatrix::zeros(r, c);
    for (w, xz) in pi.iter().zip(x) {
        acc += xz * C64::new(*w, 0.0);
    }
    acc
}

/// Sum over `j >= 1` of the envelope `2 * 4^{-floor(j/t)}` (each term capped at 2).
/// Multiplied by `max_z ||Q^k F(z)||` it bounds everything past term `k`.
pub fn tail_constant(t_mix: usize) -> f64 {
    let t = t_mix as f64;
    2.0 * (t - 1.0) + 2.0 * t / 3.0
}

// Terms Q^k F summed until the certified tail drops below tol.
struct SeriesOutcome {
    g: Vec<CMatrix>,
    autocov: CMatrix,
    terms: usize,
    g_tail: f64,
    sigma_tail: f64,
}

fn run_series(p: &DMatrix<f64>, pi: &[f64], f: &[CMatrix], t_mix: usize, tol: f64) -> Result<SeriesOutcome> {
    let c = tail_constant(t_mix);
    let f_sup = f.iter().map(hermitian_norm).fold(0.0, f64::max);
    let mut g: Vec<CMatrix> = f.to_vec();
    let squares: Vec<CMatrix> = f.iter().map(|x| x * x).collect();
    let mut autocov = pi_average(pi, &squares);
    let mut term: Vec<CMatrix> = f.to_vec();
    let mut e_k = f_sup;
    let mut k = 0;
    loop {
        let g_tail = e_k * c;
        let sigma_tail = 2.0 * f_sup * e_k * c;
        if g_tail.max(sigma_tail) < tol {
            return Ok(SeriesOutcome {
                g,
                autocov,
                terms: k + 1,
                g_tail,
                sigma_tail,
            });
        }
        if k + 1 >= MAX_SERIES_TERMS {
            return Err(Error::NonConvergence {
                iterations: k + 1,
                increment: e_k,
            });
        }
        term = apply_kernel(p, &term);
        k += 1;
        e_k = term.iter().map(hermitian_norm).fold(0.0, f64::max);
        for (gz, tz) in g.iter_mut().zip(&term) {
            *gz += tz;
        }
        let cross: Vec<CMatrix> = f
            .iter()
            .zip(&term)
            .map(|(fz, tz)| {
                let a = fz * tz;
                &a + a.adjoint()
            })
            .collect();
        autocov += pi_average(pi, &cross);
    }
}

// Per-entry solve of (I - P + 1 pi^T) X = F, real and imaginary parts stacked.
fn direct_solve(p: &DMatrix<f64>, pi: &[f64], f: &[CMatrix]) -> Result<Vec<CMatrix>> {
    let n = f.len();
    let d = f[0].nrows();
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - p[(i, j)] + pi[j]);
    let mut rhs = DMatrix::<f64>::zeros(n, 2 * d * d);
    for (z, fz) in f.iter().enumerate() {
        for (idx, v) in fz.iter().enumerate() {
            rhs[(z, 2 * idx)] = v.re;
            rhs[(z, 2 * idx + 1)] = v.im;
        }
    }
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("fundamental matrix is singular".into()))?;
    Ok((0..n)
        .map(|z| CMatrix::from_iterator(d, d, (0..d * d).map(|idx| C64::new(x[(z, 2 * idx)], x[(z, 2 * idx + 1)]))))
        .collect())
}

fn solve_kernel(
    p: &DMatrix<f64>,
    pi: &[f64],
    table: &MatrixFunctionTable,
    method: PoissonMethod,
    series_tol: f64,
    t_mix: usize,
    block: usize,
) -> Result<PoissonSolution> {
    let f: Vec<CMatrix> = table.values().iter().map(|m| m.as_matrix().clone()).collect();
    let series = run_series(p, pi, &f, t_mix, series_tol)?;
    let g_raw = match method {
        PoissonMethod::Direct => direct_solve(p, pi, &f)?,
        PoissonMethod::Series => series.g,
    };
    let g: Vec<HermitianMatrix> = g_raw.into_iter().map(HermitianMatrix::from_hermitian_part).collect();
    let g_mats: Vec<CMatrix> = g.iter().map(|m| m.as_matrix().clone()).collect();
    let qg_raw = apply_kernel(p, &g_mats);
    let g_sq: Vec<CMatrix> = g_mats.iter().map(|x| x * x).collect();
    let qg_sq = apply_kernel(p, &g_sq);
    let h: Vec<HermitianMatrix> = qg_sq
        .iter()
        .zip(&qg_raw)
        .map(|(a, b)| HermitianMatrix::from_hermitian_part(a - b * b))
        .collect();
    let qg: Vec<HermitianMatrix> = qg_raw.into_iter().map(HermitianMatrix::from_hermitian_part).collect();
    let residual = (0..f.len())
        .map(|z| hermitian_norm(&(g[z].as_matrix() - qg[z].as_matrix() - &f[z])))
        .fold(0.0, f64::max);
    let h_mats: Vec<CMatrix> = h.iter().map(|m| m.as_matrix().clone()).collect();
    let sigma = HermitianMatrix::from_hermitian_part(pi_average(pi, &h_mats));
    let g_sup_norm = g.iter().map(HermitianMatrix::spectral_norm).fold(0.0, f64::max);
    Ok(PoissonSolution {
        method,
        block,
        t_mix,
        f: table.values().to_vec(),
        g,
        qg,
        h,
        sigma,
        sigma_series: HermitianMatrix::from_hermitian_part(series.autocov),
        residual,
        series_terms_used: series.terms,
        g_tail_bound: series.g_tail,
        sigma_tail_bound: series.sigma_tail,
        g_sup_norm,
    })
}

/// Solves `G - QG = F` for a centered table, using the chain's minimal
/// certified mixing time for the series tail bounds.
pub fn solve_poisson(
    chain: &FiniteChain,
    table: &MatrixFunctionTable,
    method: PoissonMethod,
    series_tol: f64,
) -> Result<PoissonSolution> {
    table.require_centered(chain)?;
    let t_mix = mixing_time(chain, None)?.t_mix.expect("certified");
    solve_kernel(chain.q(), chain.pi(), table, method, series_tol, t_mix, 1)
}

/// As [`solve_poisson`] with a caller-supplied mixing time. The tail
/// certificates are only as good as `t_mix`.
pub fn solve_poisson_with_mixing(
    chain: &FiniteChain,
    table: &MatrixFunctionTable,
    method: PoissonMethod,
    series_tol: f64,
    t_mix: usize,
) -> Result<PoissonSolution> {
    table.require_centered(chain)?;
    if t_mix == 0 {
        return Err(Error::InvalidInput("t_mix must be >= 1".into()));
    }
    solve_kernel(chain.q(), chain.pi(), table, method, series_tol, t_mix, 1)
}

/// `G_t = sum_k Q^{kt} F`, the Poisson solution for the block kernel `Q^t`:
/// `G_t - Q^t G_t = F`.
pub fn blocked_solution(
    chain: &FiniteChain,
    table: &MatrixFunctionTable,
    block: usize,
    series_tol: f64,
) -> Result<PoissonSolution> {
    if block == 0 {
        return Err(Error::InvalidInput("block must be >= 1".into()));
    }
    table.require_centered(chain)?;
    let profile = mixing_time(chain, None)?;
    let t = profile.t_mix.expect("certified");
    // sup-TV of Q^{block} at lag k is that of Q at lag k*block, so its envelope
    // has block length ceil(t / block).
    let t_block = t.div_ceil(block);
    let p = chain.power(block);
    solve_kernel(&p, chain.pi(), table, PoissonMethod::Direct, series_tol, t_block, block)
}

/// Long-run variance proxy for a rectangular table: the two one-sided sums
/// whose spectral norms bound the dilated long-run variance.
#[derive(Debug, Clone, Serialize)]
pub struct RectLongRunProxy {
    pub value: f64,
    pub left_part: HermitianMatrix,
    pub right_part: HermitianMatrix,
    pub series_terms_used: usize,
    pub tail_bound: f64,
}

pub fn long_run_variance_rect(chain: &FiniteChain, table: &RectFunctionTable, series_tol: f64) -> Result<RectLongRunProxy> {
    if table.n_states() != chain.n_states() {
        return Err(Error::StateMismatch {
            chain: chain.n_states(),
            table: table.n_states(),
        });
    }
    let mean = spectral_norm(table.mean(chain.pi()).as_matrix())?;
    if mean > CENTERING_TOL {
        return Err(Error::Uncentered { norm: mean });
    }
    let t_mix = mixing_time(chain, None)?.t_mix.expect("certified");
    let c = tail_constant(t_mix);
    let pi = chain.pi();
    let r: Vec<CMatrix> = table.values().iter().map(|m| m.as_matrix().clone()).collect();
    let r_sup = table.sup_norm();
    let rr: Vec<CMatrix> = r.iter().map(|x| x * x.adjoint()).collect();
    let rtr: Vec<CMatrix> = r.iter().map(|x| x.adjoint() * x).collect();
    let mut left = pi_average(pi, &rr);
    let mut right = pi_average(pi, &rtr);
    let mut term = r.clone();
    let mut e_k = r_sup;
    let mut k = 0;
    loop {
        let tail = 2.0 * r_sup * e_k * c;
        if tail < series_tol {
            let left_part = HermitianMatrix::from_hermitian_part(left);
            let right_part = HermitianMatrix::from_hermitian_part(right);
            return Ok(RectLongRunProxy {
                value: left_part.spectral_norm().max(right_part.spectral_norm()),
                left_part,
                right_part,
                series_terms_used: k + 1,
                tail_bound: tail,
            });
        }
        if k + 1 >= MAX_SERIES_TERMS {
            return Err(Error::NonConvergence {
                iterations: k + 1,
                increment: e_k,
            });
        }
        term = apply_kernel(chain.q(), &term);
        k += 1;
        e_k = term
            .iter()
            .map(|x| spectral_norm(x).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        let l: Vec<CMatrix> = r
            .iter()
            .zip(&term)
            .map(|(a, b)| {
                let m = a * b.adjoint();
                &m + m.adjoint()
            })
            .collect();
        let rt: Vec<CMatrix> = r
            .iter()
            .zip(&term)
            .map(|(a, b)| {
                let m = a.adjoint() * b;
                &m + m.adjoint()
            })
            .collect();
        left += pi_average(pi, &l);
        right += pi_average(pi, &rt);
    }
}

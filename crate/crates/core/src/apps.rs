//! Covariance estimation and PCA from Markovian samples, and the Schur
//! complement envelope that licenses dimension-free factors.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::Serialize;

use crate::bounds::{bernstein_rhs, dimension_factor, BoundInput, ConstantsRegistry};
use crate::chain::{mixing_time, FiniteChain, InitialDistribution, MatrixFunctionTable};
use crate::error::{Error, Result};
use crate::matrix::{loewner_leq, psd_check, default_psd_tol, HermitianMatrix, C64};
use crate::mc::{simulate_sums, SimulationConfig};
use crate::poisson::{solve_poisson, PoissonMethod, DEFAULT_SERIES_TOL};

/// Löwner checks in this module use `ENVELOPE_TOL * max(1, ||rhs||)`.
pub const ENVELOPE_TOL: f64 = 1e-8;

/// Per-state real vectors `f(z)` of a common length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorFunctionTable {
    values: Vec<Vec<f64>>,
    sup_norm: f64,
}

impl VectorFunctionTable {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let d = values
            .first()
            .ok_or_else(|| Error::InvalidInput("vector table is empty".into()))?
            .len();
        if d == 0 {
            return Err(Error::InvalidInput("vectors must have length >= 1".into()));
        }
        if let Some(bad) = values.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        if values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("vector table has non-finite entries".into()));
        }
        let sup_norm = values.iter().map(|v| norm(v)).fold(0.0, f64::max);
        Ok(Self { values, sup_norm })
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// `max_z ||f(z)||`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `Sigma = pi(f f^T)`.
    pub fn covariance(&self, pi: &[f64]) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(self.dim());
        for (w, v) in pi.iter().zip(&self.values) {
            acc += &HermitianMatrix::outer_real(v).scale(*w);
        }
        acc
    }

    /// `F(z) = f(z) f(z)^T - Sigma`.
    pub fn centered_outer(&self, pi: &[f64]) -> Result<MatrixFunctionTable> {
        let sigma = self.covariance(pi);
        MatrixFunctionTable::new(self.values.iter().map(|v| &HermitianMatrix::outer_real(v) - &sigma).collect())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct CovPcaResult {
    pub n: usize,
    pub trials: usize,
    pub delta: f64,
    pub seed: u64,
    pub t_mix: usize,
    pub sigma: HermitianMatrix,
    /// `||Sigma_pi(F)||` for `F = f f^T - Sigma`.
    pub long_run_norm: f64,
    /// `||F||_inf`, which never exceeds `||f||_inf^2`.
    pub f_sup_norm: f64,
    pub f_sup_norm_ok: bool,
    pub bernstein_bound: f64,
    pub sigma_hat: Vec<HermitianMatrix>,
    /// `(1/n) sup_{k <= n} || sum_{j<k} (f f^T(Z_j) - Sigma) ||` per trial.
    pub realized_error: Vec<f64>,
    /// `e * r((64/9) t^2 4||f||^2 Upsilon ∧ ||Sigma_pi(F)||)` when an envelope was supplied.
    pub dim_factor: Option<f64>,
    pub eigen_gap: Option<f64>,
    pub sin2: Option<Vec<f64>>,
    pub sin2_bound: Option<Vec<f64>>,
    /// `C_PCA log(1/delta ∨ d) ||Sigma_pi(F)|| / (gap^2 n)`; display only.
    pub pca_display_bound: Option<f64>,
    #[serde(skip)]
    c_pca: f64,
}

impl CovPcaResult {
    /// One row per trial: `n,trials,realized_error,bound,sin2,sin2_bound,dim_factor`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,trials,realized_error,bound,sin2,sin2_bound,dim_factor")?;
        let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|x| x[i].to_string()).unwrap_or_default();
        for i in 0..self.trials {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.n,
                self.trials,
                self.realized_error[i],
                self.bernstein_bound,
                cell(&self.sin2, i),
                cell(&self.sin2_bound, i),
                self.dim_factor.map(|x| x.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Sample covariance from a stationary start: realized sup error against the
/// Bernstein bound at `delta`.
#[allow(clippy::too_many_arguments)]
pub fn covariance_experiment(
    chain: &FiniteChain,
    f: &VectorFunctionTable,
    n: usize,
    trials: usize,
    delta: f64,
    seed: u64,
    upsilon: Option<&HermitianMatrix>,
    reg: &ConstantsRegistry,
) -> Result<CovPcaResult> {
    if f.n_states() != chain.n_states() {
        return Err(Error::StateMismatch {
            chain: chain.n_states(),
            table: f.n_states(),
        });
    }
    let table = f.centered_outer(chain.pi())?;
    let sigma = f.covariance(chain.pi());
    let t_mix = mixing_time(chain, None)?.t_mix.expect("certified");
    let solution = solve_poisson(chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL)?;
    let long_run_norm = solution.sigma.spectral_norm();
    let d = f.dim();

    let dim_factor = match upsilon {
        None => None,
        Some(u) => {
            let report = schur_envelope_check(chain, f, u)?;
            if !report.holds() {
                return Err(Error::Precondition(format!(
                    "envelope condition fails (sup_z sum alpha^2/mu = {})",
                    report.condition_value
                )));
            }
            let envelope = u.scale(4.0 * f.sup_norm() * f.sup_norm());
            Some(dimension_factor(&envelope, t_mix, long_run_norm.max(f64::MIN_POSITIVE))?)
        }
    };

    let mut input = BoundInput::new(2.0, n, d as f64);
    input.t_mix = t_mix;
    input.sigma_norm = Some(long_run_norm);
    input.sup_norm = Some(table.sup_norm());
    input.delta = Some(delta);
    let bernstein_bound = bernstein_rhs(&input, reg)?.value;

    let cfg = SimulationConfig {
        n,
        trials,
        init: InitialDistribution::Stationary,
        seed,
        stream_base: 0,
        keep_terminal: true,
    };
    let stats = simulate_sums(chain, &table, &cfg)?;
    let scale = 1.0 / n as f64;
    let sigma_hat = stats
        .terminal
        .expect("kept")
        .iter()
        .map(|s| &s.scale(scale) + &sigma)
        .collect();
    let realized_error = stats.sup_s.iter().map(|s| s * scale).collect();
    let f_sup = f.sup_norm();
    Ok(CovPcaResult {
        n,
        trials,
        delta,
        seed,
        t_mix,
        sigma,
        long_run_norm,
        f_sup_norm: table.sup_norm(),
        f_sup_norm_ok: table.sup_norm() <= f_sup * f_sup * (1.0 + 1e-12),
        bernstein_bound,
        sigma_hat,
        realized_error,
        dim_factor,
        eigen_gap: None,
        sin2: None,
        sin2_bound: None,
        pca_display_bound: None,
        c_pca: reg.c_pca,
    })
}

fn top_vector(m: &HermitianMatrix) -> DVector<C64> {
    let e = m.eigen();
    e.vectors.column(e.values.len() - 1).into_owned()
}

/// `sin^2` angle between the leading eigenvectors of `Sigma` and each `Sigma_hat`,
/// with the perturbation bound `min(1, (2 ||Sigma_hat - Sigma|| / (λ1 - λ2))^2)`.
pub fn pca_experiment(result: &CovPcaResult) -> Result<CovPcaResult> {
    let values = result.sigma.eigenvalues();
    let d = values.len();
    if d < 2 {
        return Err(Error::Domain("PCA needs dimension >= 2".into()));
    }
    let gap = values[d - 1] - values[d - 2];
    if gap <= 1e-12 * values[d - 1].abs().max(1.0) {
        return Err(Error::Domain(format!("eigen-gap {gap:e} is zero")));
    }
    let v1 = top_vector(&result.sigma);
    let mut sin2 = Vec::with_capacity(result.trials);
    let mut bound = Vec::with_capacity(result.trials);
    for hat in &result.sigma_hat {
        let w = top_vector(hat);
        let overlap = v1.dotc(&w).norm_sqr();
        sin2.push((1.0 - overlap).clamp(0.0, 1.0));
        let err = (hat - &result.sigma).spectral_norm();
        bound.push((2.0 * err / gap).powi(2).min(1.0));
    }
    let ell = (1.0 / result.delta).max(d as f64).ln();
    let mut out = result.clone();
    out.eigen_gap = Some(gap);
    out.sin2 = Some(sin2);
    out.sin2_bound = Some(bound);
    out.pca_display_bound = Some(result.c_pca * ell * result.long_run_norm / (gap * gap * result.n as f64));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SchurReport {
    /// `sup_z sum_i |alpha_i(z)|^2 / mu_i` with `0/0 = 0`, `x/0 = inf`.
    pub condition_value: f64,
    pub per_state: Vec<f64>,
    /// `f f^T ≼ Upsilon` at every state (checked only when the condition holds).
    pub outer_dominated: Option<bool>,
    /// `F^2 ≼ 4 ||f||_inf^2 Upsilon` at every state (checked only when the condition holds).
    pub square_dominated: Option<bool>,
}

impl SchurReport {
    pub fn holds(&self) -> bool {
        self.condition_value <= 1.0 + 1e-12
    }
}

/// Coefficient condition for `f f^T ≼ Upsilon` in the eigenbasis of `Upsilon`,
/// and, when it holds, the two Löwner consequences.
pub fn schur_envelope_check(chain: &FiniteChain, f: &VectorFunctionTable, upsilon: &HermitianMatrix) -> Result<SchurReport> {
    if upsilon.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: upsilon.dim(),
        });
    }
    if f.n_states() != chain.n_states() {
        return Err(Error::StateMismatch {
            chain: chain.n_states(),
            table: f.n_states(),
        });
    }
    let u_norm = upsilon.spectral_norm();
    let psd = psd_check(upsilon, default_psd_tol(upsilon));
    if !psd.holds {
        return Err(Error::Domain(format!("Upsilon is not PSD (min eigenvalue {:e})", psd.min_eigenvalue)));
    }
    let eig = upsilon.eigen();
    let mu_zero = 1e-12 * u_norm;
    let alpha_zero = 1e-14 * f.sup_norm().powi(2);
    let per_state: Vec<f64> = f
        .values()
        .iter()
        .map(|v| {
            let fv = DVector::from_iterator(v.len(), v.iter().map(|x| C64::new(*x, 0.0)));
            eig.values
                .iter()
                .enumerate()
                .map(|(i, &mu)| {
                    let a2 = eig.vectors.column(i).dotc(&fv).norm_sqr();
                    if mu > mu_zero {
                        a2 / mu
                    } else if a2 <= alpha_zero {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .sum()
        })
        .collect();
    let condition_value = per_state.iter().copied().fold(0.0, f64::max);
    let mut report = SchurReport {
        condition_value,
        per_state,
        outer_dominated: None,
        square_dominated: None,
    };
    if report.holds() {
        let tol = |m: &HermitianMatrix| ENVELOPE_TOL * m.spectral_norm().max(1.0);
        let envelope = upsilon.scale(4.0 * f.sup_norm().powi(2));
        let table = f.centered_outer(chain.pi())?;
        let mut outer = true;
        let mut square = true;
        for (v, fz) in f.values().iter().zip(table.values()) {
            outer &= loewner_leq(&HermitianMatrix::outer_real(v), upsilon, tol(upsilon))?.holds;
            square &= loewner_leq(&fz.square(), &envelope, tol(&envelope))?.holds;
        }
        report.outer_dominated = Some(outer);
        report.square_dominated = Some(square);
    }
    Ok(report)
}

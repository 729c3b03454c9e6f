//! One-sided checks `LHS <= RHS`: empirical estimates against bound values,
//! and exact enumeration of the probabilistic lemmas behind the bounds.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bounds::{bennett_tail, GoodLambdaParams};
use crate::chain::{tv_distance, validate_distribution, FiniteChain, MatrixFunctionTable};
use crate::error::{Error, Result};
use crate::matrix::{HermitianMatrix, PSD_REL_TOL};
use crate::mc::{synth_symmetric_martingale, EmpiricalMoment, SignMode, TrajectoryStats};

/// Ratios `RHS / LHS` are capped here (and used when `LHS = 0`).
pub const SLACK_CAP: f64 = 1e12;
/// Cap on enumerated cases for the symmetrization check.
pub const MAX_SYMMETRIZATION_CASES: u128 = 1_000_000;
/// One-sided 0.99 standard normal quantile.
pub const Z_99: f64 = 2.326_347_874_040_840_8;

const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The lemma's hypothesis does not hold for this case; nothing was tested.
    PremiseViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_id: String,
    /// Point estimate or exact value.
    pub lhs: f64,
    /// Value actually compared: the upper confidence bound when estimated.
    pub lhs_upper: f64,
    pub rhs: f64,
    pub status: CheckStatus,
    pub pass: bool,
    pub slack: f64,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const CSV_HEADER: &str = "check_id,lhs,rhs,slack,pass,seed,n,p,delta";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl VerificationReport {
    pub fn new(check_id: impl Into<String>, lhs: f64, lhs_upper: f64, rhs: f64) -> Self {
        let pass = lhs_upper <= rhs;
        Self {
            check_id: check_id.into(),
            lhs,
            lhs_upper,
            rhs,
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            pass,
            slack: slack(lhs_upper, rhs),
            seed: None,
            n: None,
            p: None,
            delta: None,
            notes: Vec::new(),
        }
    }

    fn premise_violated(check_id: impl Into<String>, note: String) -> Self {
        let mut r = Self::new(check_id, f64::NAN, f64::NAN, f64::NAN);
        r.status = CheckStatus::PremiseViolated;
        r.pass = false;
        r.slack = f64::NAN;
        r.notes.push(note);
        r
    }

    pub fn with_meta(mut self, seed: Option<u64>, n: Option<usize>, p: Option<f64>, delta: Option<f64>) -> Self {
        self.seed = seed;
        self.n = n;
        self.p = p;
        self.delta = delta;
        self
    }

    pub fn is_failure(&self) -> bool {
        self.status == CheckStatus::Fail
    }

    /// One line in the fixed ledger layout, see [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.check_id,
            self.lhs_upper,
            self.rhs,
            self.slack,
            self.pass,
            opt(&self.seed),
            opt(&self.n),
            opt(&self.p),
            opt(&self.delta)
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, reports: &[VerificationReport]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

fn slack(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 0.0 {
        SLACK_CAP
    } else {
        (rhs / lhs).min(SLACK_CAP)
    }
}

/// Left-hand side of a one-sided check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lhs {
    Empirical(EmpiricalMoment),
    Exact(f64),
}

/// Pass iff the LHS (its upper confidence bound when estimated) is at most `rhs`.
pub fn check_inequality(check_id: &str, lhs: Lhs, rhs: f64) -> VerificationReport {
    match lhs {
        Lhs::Empirical(m) => VerificationReport::new(check_id, m.estimate, m.upper, rhs).with_meta(None, None, Some(m.p), None),
        Lhs::Exact(v) => VerificationReport::new(check_id, v, v, rhs),
    }
}

/// One-sided Wilson score upper bound for a binomial proportion.
pub fn wilson_upper(successes: usize, trials: usize, z: f64) -> f64 {
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let center = phat + z2 / (2.0 * n);
    let spread = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + spread) / (1.0 + z2 / n)).min(1.0)
}

/// Exact good-λ check over every sign pattern of `M_k = sum eps_j A_j`:
/// `P(sup ||M|| > beta λ, ||<M>||^{1/2} <= delta1 λ, sup ||X|| <= delta2 λ)`
/// against `2d (e delta1^2 / (N delta2^2))^N P(sup ||M|| > λ)`.
pub fn check_good_lambda(steps: &[HermitianMatrix], lambda: f64, beta: f64, delta1: f64, delta2: f64) -> Result<VerificationReport> {
    if !(beta > 1.0 + delta2) {
        return Err(Error::Domain(format!("need beta > 1 + delta2, got beta = {beta}, delta2 = {delta2}")));
    }
    if !(lambda > 0.0 && delta1 > 0.0 && delta2 > 0.0) {
        return Err(Error::Domain("lambda, delta1 and delta2 must be positive".into()));
    }
    let stats = synth_symmetric_martingale(steps, SignMode::Exhaustive)?;
    let d = steps[0].dim() as f64;
    let n_exp = (beta - 1.0 - delta2) / delta2;
    let log_mult = (2.0 * d).ln() + n_exp * (std::f64::consts::E * delta1 * delta1 / (n_exp * delta2 * delta2)).ln();
    let weights = stats.weights.as_ref().expect("exhaustive");
    let qv = stats.qv.as_ref().expect("synthetic");
    let sup_x = stats.sup_x.as_ref().expect("synthetic");
    let mut lhs = 0.0;
    let mut tail = 0.0;
    for i in 0..stats.trials {
        let s = stats.sup_s[i];
        if s > lambda {
            tail += weights[i];
        }
        if s > beta * lambda && qv[i].sqrt() <= delta1 * lambda && sup_x[i] <= delta2 * lambda {
            lhs += weights[i];
        }
    }
    let rhs = if tail == 0.0 { 0.0 } else { log_mult.exp() * tail };
    let mut report = VerificationReport::new("good_lambda", lhs, lhs, rhs).with_meta(None, Some(steps.len()), None, None);
    report.notes.push(format!("P(sup > lambda) = {tail}, multiplier = {:e}", log_mult.exp()));
    Ok(report)
}

/// [`check_good_lambda`] at the parameters of a [`GoodLambdaParams`] bundle.
pub fn check_good_lambda_with(steps: &[HermitianMatrix], lambda: f64, params: &GoodLambdaParams) -> Result<VerificationReport> {
    let r = check_good_lambda(steps, lambda, params.beta, params.delta1, params.delta2)?;
    Ok(r.with_meta(None, Some(steps.len()), Some(params.p), None))
}

/// Finite joint law of `(Y, Z)` with `Phi(x) = x^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJointCase {
    /// Support points `(y, z)`, both nonnegative.
    pub points: Vec<(f64, f64)>,
    pub probs: Vec<f64>,
    pub p: f64,
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl DiscreteJointCase {
    fn validate(&self) -> Result<()> {
        validate_distribution(&self.probs, self.points.len())?;
        if self.points.iter().any(|(y, z)| !(*y >= 0.0 && *z >= 0.0)) {
            return Err(Error::InvalidInput("Y and Z must be nonnegative".into()));
        }
        if !(self.beta > 1.0) || !(self.p > 0.0) || !(self.a >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Domain("need beta > 1, p > 0, a >= 0, eps > 0".into()));
        }
        if self.gamma < self.beta.powf(self.p) {
            return Err(Error::Domain(format!(
                "gamma = {} is below beta^p = {}, so Phi(beta x) <= gamma Phi(x) fails",
                self.gamma,
                self.beta.powf(self.p)
            )));
        }
        if self.gamma * self.eps >= 1.0 {
            return Err(Error::Domain(format!("gamma * eps = {} must be < 1", self.gamma * self.eps)));
        }
        Ok(())
    }

    fn prob(&self, pred: impl Fn(f64, f64) -> bool) -> f64 {
        self.points
            .iter()
            .zip(&self.probs)
            .filter(|((y, z), _)| pred(*y, *z))
            .map(|(_, w)| w)
            .sum()
    }

    /// `P(Y > beta λ, Z <= λ) - eps P(Y > λ)`.
    pub fn premise_gap(&self, lambda: f64) -> f64 {
        let lhs = self.prob(|y, z| y > self.beta * lambda && z <= lambda);
        lhs - self.eps * self.prob(|y, _| y > lambda)
    }

    /// Every `λ >= a / beta` at which the premise can change value, plus one
    /// point inside each gap between them and one beyond the last.
    pub fn critical_lambdas(&self) -> Vec<f64> {
        let start = self.a / self.beta;
        let mut breaks: Vec<f64> = self
            .points
            .iter()
            .flat_map(|(y, z)| [*z, y / self.beta, *y])
            .filter(|b| *b >= start)
            .collect();
        breaks.push(start);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut out = breaks.clone();
        out.extend(breaks.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        out.push(breaks.last().copied().unwrap_or(start) + 1.0);
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Checks the good-λ premise at every critical λ, then compares
/// `E[Phi(Y)]` with `(Phi(a) + gamma E[Phi(Z)]) / (1 - gamma eps)` exactly.
pub fn check_truncated_phi(case: &DiscreteJointCase) -> Result<VerificationReport> {
    case.validate()?;
    for lambda in case.critical_lambdas() {
        let gap = case.premise_gap(lambda);
        if gap > EXACT_TOL {
            return Ok(VerificationReport::premise_violated(
                "truncated_phi",
                format!("premise fails at lambda = {lambda} by {gap:e}"),
            ));
        }
    }
    let phi = |x: f64| x.powf(case.p);
    let e_y: f64 = case.points.iter().zip(&case.probs).map(|((y, _), w)| w * phi(*y)).sum();
    let e_z: f64 = case.points.iter().zip(&case.probs).map(|((_, z), w)| w * phi(*z)).sum();
    let ge = case.gamma * case.eps;
    let rhs = (phi(case.a) + case.gamma * e_z) / (1.0 - ge);
    let mut r = VerificationReport::new("truncated_phi", e_y, e_y, rhs * (1.0 + EXACT_TOL));
    r.p = Some(case.p);
    Ok(r)
}

/// Finite law of mean-zero vectors in `R^m` (Euclidean norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSupport {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact check of `E[sup_k ||X_1 + ... + X_k||^p] <= E[(2 sup_k ||eps_1 X_1 + ... + eps_k X_k||)^p]`
/// for i.i.d. `X_j` drawn from `support`, by enumerating `support^n × {±1}^n`.
pub fn check_symmetrization(support: &VectorSupport, n: usize, p: f64) -> Result<VerificationReport> {
    let k = support.points.len();
    validate_distribution(&support.probs, k)?;
    let m = support
        .points
        .first()
        .ok_or_else(|| Error::InvalidInput("empty support".into()))?
        .len();
    if support.points.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidInput("support vectors differ in length".into()));
    }
    if n == 0 || !(p >= 1.0) {
        return Err(Error::Domain("need n >= 1 and p >= 1".into()));
    }
    let scale = support.points.iter().map(|v| euclid(v)).fold(0.0, f64::max).max(1.0);
    let mean: Vec<f64> = (0..m)
        .map(|i| support.points.iter().zip(&support.probs).map(|(v, w)| w * v[i]).sum())
        .collect();
    if euclid(&mean) > EXACT_TOL * scale {
        return Err(Error::Precondition(format!("support has mean of norm {:e}", euclid(&mean))));
    }
    let size = (k as u128).checked_pow(n as u32).and_then(|s| s.checked_mul(1u128 << n));
    match size {
        Some(s) if s <= MAX_SYMMETRIZATION_CASES => {}
        _ => {
            return Err(Error::EnumerationTooLarge {
                size: size.unwrap_or(u128::MAX),
                cap: MAX_SYMMETRIZATION_CASES,
            })
        }
    }

    let sup_partial = |idx: &[usize], signs: u32| {
        let mut acc = vec![0.0; m];
        let mut sup = 0.0_f64;
        for (j, &i) in idx.iter().enumerate() {
            let s = if signs >> j & 1 == 1 { -1.0 } else { 1.0 };
            for (a, x) in acc.iter_mut().zip(&support.points[i]) {
                *a += s * x;
            }
            sup = sup.max(euclid(&acc));
        }
        sup
    };

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut idx = vec![0usize; n];
    let sign_weight = 0.5_f64.powi(n as i32);
    loop {
        let w: f64 = idx.iter().map(|&i| support.probs[i]).product();
        lhs += w * sup_partial(&idx, 0).powf(p);
        for signs in 0..(1u32 << n) {
            rhs += w * sign_weight * (2.0 * sup_partial(&idx, signs)).powf(p);
        }
        // odometer over support^n
        let mut pos = 0;
        while pos < n {
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }
    let mut r = VerificationReport::new("symmetrization", lhs, lhs, rhs * (1.0 + EXACT_TOL));
    r.n = Some(n);
    r.p = Some(p);
    Ok(r)
}

/// `||xi1(F) - xi2(F)|| <= ||F||_inf ||xi1 - xi2||_TV`, or with `alpha` the
/// `V^alpha`-weighted version using the chain's Lyapunov table.
pub fn check_tv_integral_bound(
    chain: &FiniteChain,
    table: &MatrixFunctionTable,
    xi1: &[f64],
    xi2: &[f64],
    alpha: Option<f64>,
) -> Result<VerificationReport> {
    let n = chain.n_states();
    validate_distribution(xi1, n)?;
    validate_distribution(xi2, n)?;
    if table.n_states() != n {
        return Err(Error::StateMismatch {
            chain: n,
            table: table.n_states(),
        });
    }
    let lhs = (&table.mean(xi1) - &table.mean(xi2)).spectral_norm();
    let (rhs, id) = match alpha {
        None => (table.sup_norm() * tv_distance(xi1, xi2, None)?, "tv_integral"),
        Some(a) => {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Domain(format!("alpha must lie in (0, 1], got {a}")));
            }
            let v = chain
                .lyapunov()
                .ok_or_else(|| Error::InvalidLyapunov("chain has no Lyapunov table".into()))?;
            let w: Vec<f64> = v.iter().map(|x| x.powf(a)).collect();
            (table.weighted_norm(v, a) * tv_distance(xi1, xi2, Some(&w))?, "tv_integral_weighted")
        }
    };
    Ok(VerificationReport::new(id, lhs, lhs, rhs + EXACT_TOL))
}

/// Empirical `P(sup_k ||M_k|| >= eps)` for the symmetric martingale with the
/// given steps, against the Bennett bound at each `eps`. The comparison uses
/// the one-sided 0.99 Wilson upper bound of the exceedance frequency.
pub fn check_bennett_empirical(
    steps: &[HermitianMatrix],
    qv_bound: f64,
    diff_bound: f64,
    eps_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<VerificationReport>> {
    let d = steps
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one step".into()))?
        .dim();
    if let Some(bad) = steps.iter().find(|a| a.spectral_norm() > diff_bound * (1.0 + PSD_REL_TOL)) {
        return Err(Error::Precondition(format!(
            "step of norm {} exceeds the bound {diff_bound}",
            bad.spectral_norm()
        )));
    }
    let mut qv = HermitianMatrix::zeros(d);
    for a in steps {
        qv += &a.square();
    }
    if qv.max_eigenvalue() > qv_bound * (1.0 + PSD_REL_TOL) {
        return Err(Error::Precondition(format!(
            "sum of squared steps has norm {} above {qv_bound}",
            qv.max_eigenvalue()
        )));
    }
    let stats: TrajectoryStats = synth_symmetric_martingale(steps, SignMode::Sampled { trials, seed })?;
    eps_grid
        .iter()
        .map(|&eps| {
            let hits = stats.sup_s.iter().filter(|s| **s >= eps).count();
            let freq = hits as f64 / trials as f64;
            let upper = wilson_upper(hits, trials, Z_99);
            let bound = bennett_tail(d as f64, qv_bound, diff_bound, eps)?;
            let mut r = VerificationReport::new(format!("bennett_eps_{eps}"), freq, upper, bound).with_meta(Some(seed), Some(steps.len()), None, None);
            r.notes.push(format!("{hits} of {trials} paths reached {eps}"));
            Ok(r)
        })
        .collect()
}

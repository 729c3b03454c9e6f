//! Closed-form right-hand sides of the matrix Rosenthal, Hoeffding, Bernstein
//! and Bennett inequalities, with a registry of the constants they use.
//!
//! `log` is the natural logarithm throughout and `L = p ∨ log d`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{effective_rank, eig_clamp, psd_check, default_psd_tol, HermitianMatrix};

/// Rosenthal-Burkholder constants switch to the smaller pair from this `p` on.
pub const LARGE_P_THRESHOLD: f64 = 117.0;

/// Constants used by the evaluators.
///
/// `C_R1`, `C_R2` (and their large-`p` values) are the explicit
/// Rosenthal-Burkholder constants. `D1`, `D2`, `D4`, `D5` only exist as
/// "traceable" constants; the defaults below were assembled by composing the
/// explicit constants along the Poisson-martingale argument and rounding up:
///
/// - `D1 = C_R1 (8/3) sqrt(16 C_R1/3) + C_R1 (8/3) sqrt(16 C_R2/3 + 19/6) + (16/3) C_R2 + 16/3`
///   (about 9080.4; default 9081),
/// - `D2`: the start-up coupling term `(2/n)(1 + 128 (t/ln 4)^p (p+1)^{p+1/2} e^{-p})^{1/p}`
///   is at most `13 p t / n` (default 13),
/// - `D4 = C_R1 (8/3) sqrt(4 C_R1/3)` (about 2499; default 2500),
/// - `D5`: about 2881 from the same chain (default 2900).
///
/// `D3 = 6e C_R2 + e D2` is derived and cannot be set directly. `C_PCA` is the
/// unspecified PCA constant; it is only used for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRegistry {
    pub c_r1: f64,
    pub c_r2: f64,
    pub c_r1_large_p: f64,
    pub c_r2_large_p: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub c_pca: f64,
}

impl Default for ConstantsRegistry {
    fn default() -> Self {
        let mut reg = Self {
            c_r1: 87.0,
            c_r2: 50.0,
            c_r1_large_p: 64.0,
            c_r2_large_p: 28.0,
            d1: 9081.0,
            d2: 13.0,
            d3: 0.0,
            d4: 2500.0,
            d5: 2900.0,
            c_pca: 1.0,
        };
        reg.d3 = reg.derived_d3();
        reg
    }
}

impl ConstantsRegistry {
    fn derived_d3(&self) -> f64 {
        6.0 * E * self.c_r2 + E * self.d2
    }

    /// Overrides one constant by name (`C_R1`, `C_R2`, `C_R1_LARGE_P`,
    /// `C_R2_LARGE_P`, `D1`, `D2`, `D4`, `D5`, `C_PCA`; case-insensitive).
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {value}")));
        }
        let key = name.to_ascii_uppercase();
        let slot = match key.as_str() {
            "C_R1" => &mut self.c_r1,
            "C_R2" => &mut self.c_r2,
            "C_R1_LARGE_P" => &mut self.c_r1_large_p,
            "C_R2_LARGE_P" => &mut self.c_r2_large_p,
            "D1" => &mut self.d1,
            "D2" => &mut self.d2,
            "D4" => &mut self.d4,
            "D5" => &mut self.d5,
            "C_PCA" => &mut self.c_pca,
            "D3" => {
                return Err(Error::InvalidInput(
                    "D3 is derived as 6e*C_R2 + e*D2; override C_R2 or D2 instead".into(),
                ))
            }
            _ => return Err(Error::InvalidInput(format!("unknown constant {name}"))),
        };
        if key.starts_with("C_R") && value == 0.0 {
            return Err(Error::InvalidInput(format!("{name} must be > 0")));
        }
        *slot = value;
        self.d3 = self.derived_d3();
        Ok(())
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    /// `(C_R1, C_R2)` in force at moment order `p`.
    pub fn rosenthal_constants(&self, p: f64) -> (f64, f64) {
        if p >= LARGE_P_THRESHOLD {
            (self.c_r1_large_p, self.c_r2_large_p)
        } else {
            (self.c_r1, self.c_r2)
        }
    }
}

/// `p ∨ log d`.
pub fn log_factor(p: f64, dim: f64) -> f64 {
    p.max(dim.ln())
}

/// Inputs shared by the evaluators; each evaluator reads what it needs and
/// reports a missing field as invalid input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub p: f64,
    pub n: usize,
    /// Ambient dimension `d` (or `d1 + d2` for dilated rectangular tables).
    pub dim_factor: f64,
    /// Effective-rank replacement `e * r(...)` for dimension-free variants.
    #[serde(default)]
    pub effective_dim: Option<f64>,
    #[serde(default = "one")]
    pub t_mix: usize,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub pi_v: Option<f64>,
    #[serde(default)]
    pub xi_v: Option<f64>,
    /// `max_z ||F(z)||`.
    #[serde(default)]
    pub sup_norm: Option<f64>,
    /// `max_z ||F(z)|| / V(z)^{1/p}`.
    #[serde(default)]
    pub v_norm: Option<f64>,
    /// `||Sigma_pi(F)||`.
    #[serde(default)]
    pub sigma_norm: Option<f64>,
    /// `|| ||<M>_inf|| ||_{p/2}^{1/2}` for the martingale inequality.
    #[serde(default)]
    pub qv_norm: Option<f64>,
    /// `|| sup_k ||X_k|| ||_p` for the martingale inequality.
    #[serde(default)]
    pub diff_norm: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

fn one() -> usize {
    1
}

impl BoundInput {
    pub fn new(p: f64, n: usize, dim_factor: f64) -> Self {
        Self {
            p,
            n,
            dim_factor,
            effective_dim: None,
            t_mix: 1,
            kappa: None,
            pi_v: None,
            xi_v: None,
            sup_norm: None,
            v_norm: None,
            sigma_norm: None,
            qv_norm: None,
            diff_norm: None,
            delta: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0) || !self.p.is_finite() {
            return Err(Error::Domain(format!("p must be >= 2, got {}", self.p)));
        }
        if self.n == 0 {
            return Err(Error::Domain("n must be >= 1".into()));
        }
        if !(self.dim_factor >= 1.0) {
            return Err(Error::Domain(format!("dimension factor must be >= 1, got {}", self.dim_factor)));
        }
        if self.t_mix == 0 {
            return Err(Error::Domain("t_mix must be >= 1".into()));
        }
        Ok(())
    }

    fn need_n_at_least_two(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Domain("n must be >= 2".into()));
        }
        Ok(())
    }

    fn log_delta_factor(&self) -> Result<f64> {
        let delta = self.delta.ok_or_else(|| missing("delta"))?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok((1.0 / delta).max(self.dim_factor).ln())
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidInput(format!("bound input is missing {field}"))
}

fn nonneg(value: Option<f64>, field: &str) -> Result<f64> {
    let v = value.ok_or_else(|| missing(field))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{field} must be finite and >= 0, got {v}")));
    }
    Ok(v)
}

/// A right-hand side value with any regime warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub warnings: Vec<String>,
}

impl Evaluation {
    fn clean(value: f64) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    RosenthalBurkholder,
    MarkovRosenthal,
    CrudeRosenthal,
    Hoeffding,
    Bernstein,
    GeoVRosenthal,
    GeoVCrude,
}

impl Theorem {
    pub fn id(&self) -> &'static str {
        match self {
            Theorem::RosenthalBurkholder => "rosenthal_burkholder",
            Theorem::MarkovRosenthal => "markov_rosenthal",
            Theorem::CrudeRosenthal => "crude_rosenthal",
            Theorem::Hoeffding => "hoeffding",
            Theorem::Bernstein => "bernstein",
            Theorem::GeoVRosenthal => "geo_v_rosenthal",
            Theorem::GeoVCrude => "geo_v_crude",
        }
    }
}

/// Evaluated bound with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub inputs: BoundInput,
    pub constants: ConstantsRegistry,
    pub value: f64,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn new(theorem: Theorem, inputs: &BoundInput, constants: &ConstantsRegistry, eval: Evaluation) -> Self {
        Self {
            theorem,
            inputs: inputs.clone(),
            constants: *constants,
            value: eval.value,
            warnings: eval.warnings,
        }
    }
}

/// `h(x) = (1 + x) log(1 + x) - x`.
pub fn bennett_h(x: f64) -> f64 {
    (1.0 + x) * x.ln_1p() - x
}

/// Tail bound for `P(sup_k ||M_k|| >= eps)` given `||<M>|| <= qv`, steps
/// bounded by `u`: the smaller of the two Bennett forms, capped at 1.
pub fn bennett_tail(dim_factor: f64, qv: f64, u: f64, eps: f64) -> Result<f64> {
    for (name, v) in [("dimension factor", dim_factor), ("qv bound", qv), ("step bound", u), ("eps", eps)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let exp_form = 2.0 * dim_factor * (-(qv / (u * u)) * bennett_h(u * eps / qv)).exp();
    let power_form = 2.0 * dim_factor * ((E * qv / (eps * u)).ln() * (eps / u)).exp();
    Ok(exp_form.min(power_form).min(1.0))
}

/// Martingale Rosenthal-Burkholder:
/// `C_R1 sqrt(L) qv + C_R2 L diff`. The dimension-free variant takes
/// `L = p ∨ log(effective_dim)` and doubles the result.
pub fn rosenthal_burkholder_rhs(input: &BoundInput, dimension_free: bool, reg: &ConstantsRegistry) -> Result<Evaluation> {
    input.validate()?;
    let qv = nonneg(input.qv_norm, "qv_norm")?;
    let diff = nonneg(input.diff_norm, "diff_norm")?;
    let (c1, c2) = reg.rosenthal_constants(input.p);
    let (dim, scale) = if dimension_free {
        (input.effective_dim.ok_or_else(|| missing("effective_dim"))?, 2.0)
    } else {
        (input.dim_factor, 1.0)
    };
    let l = log_factor(input.p, dim);
    Ok(Evaluation::clean(scale * (c1 * l.sqrt() * qv + c2 * l * diff)))
}

/// Rosenthal bound for `(1/n) || sup_k ||S_k|| ||_p` under uniform ergodicity:
/// `C_R1 sqrt(L ||Sigma|| / n) + D1 t^{1/2} (L t / n)^{3/4} ||F||_inf`,
/// plus `D2 p t ||F||_inf / n` from a non-stationary start.
///
/// The dimension-free variant uses `effective_dim` in the leading term, keeps
/// the ambient dimension in the residual term and doubles the result.
pub fn markov_rosenthal_rhs(
    input: &BoundInput,
    stationary: bool,
    dimension_free: bool,
    reg: &ConstantsRegistry,
) -> Result<Evaluation> {
    input.validate()?;
    let sigma = nonneg(input.sigma_norm, "sigma_norm")?;
    let f_sup = nonneg(input.sup_norm, "sup_norm")?;
    let (c1, _) = reg.rosenthal_constants(input.p);
    let n = input.n as f64;
    let t = input.t_mix as f64;
    let l_res = log_factor(input.p, input.dim_factor);
    let (l_lead, scale) = if dimension_free {
        let eff = input.effective_dim.ok_or_else(|| missing("effective_dim"))?;
        (log_factor(input.p, eff), 2.0)
    } else {
        (l_res, 1.0)
    };
    let mut warnings = Vec::new();
    if n < l_res * t {
        warnings.push(format!("n = {} is below (p ∨ log d) t_mix = {:.3}", input.n, l_res * t));
    }
    let mut value = c1 * (l_lead * sigma / n).sqrt() + reg.d1 * t.sqrt() * (l_res * t / n).powf(0.75) * f_sup;
    value *= scale;
    if !stationary {
        value += reg.d2 * input.p * t * f_sup / n;
    }
    Ok(Evaluation { value, warnings })
}

/// Variance-proxy Rosenthal bound:
/// `(16e/3) C_R1 sqrt(L t ||F||^2 / n) + ((16e/3) C_R2 L + 19/3) t ||F|| / n`.
pub fn crude_rosenthal_rhs(input: &BoundInput, reg: &ConstantsRegistry) -> Result<Evaluation> {
    input.validate()?;
    input.need_n_at_least_two()?;
    let f_sup = nonneg(input.sup_norm, "sup_norm")?;
    let (c1, c2) = reg.rosenthal_constants(input.p);
    let n = input.n as f64;
    let t = input.t_mix as f64;
    let l = log_factor(input.p, input.dim_factor);
    let k = 16.0 * E / 3.0;
    let value = k * c1 * (l * t * f_sup * f_sup / n).sqrt() + (k * c2 * l + 19.0 / 3.0) * t * f_sup / n;
    Ok(Evaluation::clean(value))
}

/// Hoeffding-type bound holding with probability at least `1 - delta`:
/// `(16e/3) C_R1 sqrt(ℓ t ||F||^2 / n) + D3 ℓ t ||F|| / n`, `ℓ = log(1/delta ∨ d)`.
pub fn hoeffding_rhs(input: &BoundInput, reg: &ConstantsRegistry) -> Result<Evaluation> {
    input.validate()?;
    input.need_n_at_least_two()?;
    let ell = input.log_delta_factor()?;
    let f_sup = nonneg(input.sup_norm, "sup_norm")?;
    let (c1, _) = reg.rosenthal_constants(input.p);
    let n = input.n as f64;
    let t = input.t_mix as f64;
    let value = 16.0 * E / 3.0 * c1 * (ell * t * f_sup * f_sup / n).sqrt() + reg.d3 * ell * t * f_sup / n;
    Ok(Evaluation::clean(value))
}

/// Bernstein-type bound holding with probability at least `1 - delta`:
/// `e C_R1 sqrt(ℓ ||Sigma|| / n) + e (D1 + D2) t^{1/2} (ℓ t / n)^{3/4} ||F||`.
pub fn bernstein_rhs(input: &BoundInput, reg: &ConstantsRegistry) -> Result<Evaluation> {
    input.validate()?;
    input.need_n_at_least_two()?;
    let ell = input.log_delta_factor()?;
    let sigma = nonneg(input.sigma_norm, "sigma_norm")?;
    let f_sup = nonneg(input.sup_norm, "sup_norm")?;
    let (c1, _) = reg.rosenthal_constants(input.p);
    let n = input.n as f64;
    let t = input.t_mix as f64;
    let value = E * c1 * (ell * sigma / n).sqrt() + E * (reg.d1 + reg.d2) * t.sqrt() * (ell * t / n).powf(0.75) * f_sup;
    Ok(Evaluation::clean(value))
}

/// Rosenthal bounds under geometric V-ergodicity, in terms of
/// `||F||_{V^{1/p}}`, `kappa` and `pi(V)`.
///
/// With `crude = false`: the long-run-variance form with `D4`, `D5` residuals.
/// With `crude = true`: the variance-proxy form. Supplying `xi_v` adds the
/// start-up term `(32 / 15n) kappa^{1/p} (xi(V) + pi(V))^{1/p} p t ||F||_{V^{1/p}}`.
pub fn geo_v_rosenthal_rhs(input: &BoundInput, crude: bool, reg: &ConstantsRegistry) -> Result<Evaluation> {
    input.validate()?;
    input.need_n_at_least_two()?;
    let kappa = input.kappa.ok_or_else(|| missing("kappa"))?;
    let pi_v = input.pi_v.ok_or_else(|| missing("pi_v"))?;
    if kappa < 1.0 || pi_v < E * (1.0 - 1e-12) {
        return Err(Error::Domain(format!("need kappa >= 1 and pi(V) >= e, got {kappa}, {pi_v}")));
    }
    let fv = nonneg(input.v_norm, "v_norm")?;
    let (c1, c2) = reg.rosenthal_constants(input.p);
    let p = input.p;
    let n = input.n as f64;
    let t = input.t_mix as f64;
    let l = log_factor(p, input.dim_factor);
    let kpv = kappa * pi_v;
    let mut value = if crude {
        let a = kpv.powf(1.0 / p) * fv;
        8.0 / 3.0 * c1 * p * (l * t / n).sqrt() * a + (16.0 / 3.0 * c2 * l + 11.0 / 3.0) * p * t / n.powf(1.0 - 1.0 / p) * a
    } else {
        let sigma = nonneg(input.sigma_norm, "sigma_norm")?;
        let a = kpv.powf(2.0 / p) * fv;
        c1 * (l * sigma / n).sqrt()
            + reg.d4 * p.powf(1.5) * l.powf(0.75) * t.powf(1.25) * n.powf(-0.75) * a
            + reg.d5 * p.powf(1.5) * l * t.powf(1.5) * n.powf(-(1.0 - 1.0 / p)) * a
    };
    if let Some(xi_v) = input.xi_v {
        value += 32.0 / (15.0 * n) * kappa.powf(1.0 / p) * (xi_v + pi_v).powf(1.0 / p) * p * t * fv;
    }
    Ok(Evaluation::clean(value))
}

/// `e * r((64/9) t^2 Upsilon ∧ clamp_level)`.
pub fn dimension_factor(upsilon: &HermitianMatrix, t_mix: usize, clamp_level: f64) -> Result<f64> {
    if !(clamp_level > 0.0) {
        return Err(Error::Domain(format!("clamp level must be positive, got {clamp_level}")));
    }
    let check = psd_check(upsilon, default_psd_tol(upsilon));
    if !check.holds {
        return Err(Error::Domain(format!(
            "Upsilon must be PSD (min eigenvalue {:e})",
            check.min_eigenvalue
        )));
    }
    let t = t_mix as f64;
    let scaled = upsilon.scale(64.0 / 9.0 * t * t);
    Ok(E * effective_rank(&eig_clamp(&scaled, clamp_level))?)
}

/// Good-λ parameters `(beta, delta1, delta2, N)` and the resulting constant
/// `gamma * eps = 2d (e delta1^2 / (N delta2^2))^N beta^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaParams {
    pub p: f64,
    pub dim: f64,
    pub c: f64,
    /// `c ∨ log d`.
    pub level: f64,
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub n_exponent: f64,
    /// `log(2d (e delta1^2 / (N delta2^2))^N)`.
    pub log_multiplier: f64,
    pub multiplier: f64,
    pub log_gamma_eps: f64,
    pub gamma_eps: f64,
}

impl GoodLambdaParams {
    /// `N >= 4 + 5 e^{-1} log d`.
    pub fn n_bound_holds(&self) -> bool {
        self.n_exponent >= 4.0 + 5.0 / E * self.dim.ln()
    }

    /// `beta^p <= e^{2 p N delta2}`.
    pub fn beta_bound_holds(&self) -> bool {
        self.p * self.beta.ln() <= 2.0 * self.p * self.n_exponent * self.delta2
    }

    /// `e delta1^2 / (N delta2^2) <= (e/5) e^{-p/c}`.
    pub fn ratio_bound_holds(&self) -> bool {
        let ratio = E * self.delta1 * self.delta1 / (self.n_exponent * self.delta2 * self.delta2);
        ratio <= E / 5.0 * (-self.p / self.c).exp() * (1.0 + 1e-12)
    }
}

/// Parameter choice for the good-λ argument with `c ∈ [1, p]`.
pub fn good_lambda_params(p: f64, dim: f64, c: f64) -> Result<GoodLambdaParams> {
    if !(p >= 2.0) {
        return Err(Error::Domain(format!("p must be >= 2, got {p}")));
    }
    if !(c >= 1.0 && c <= p) {
        return Err(Error::Domain(format!("c must lie in [1, p], got {c}")));
    }
    if !(dim >= 1.0) {
        return Err(Error::Domain(format!("dimension must be >= 1, got {dim}")));
    }
    let level = c.max(dim.ln());
    let beta = 1.0 + (-p / c).exp() + 1.0 / level;
    let delta1 = 1.0 / (5.0 * level.sqrt() * (p / c).exp());
    let delta2 = 1.0 / (5.0 * level);
    let n_exponent = (beta - 1.0 - delta2) / delta2;
    let log_multiplier = (2.0 * dim).ln() + n_exponent * (E * delta1 * delta1 / (n_exponent * delta2 * delta2)).ln();
    let log_gamma_eps = log_multiplier + p * beta.ln();
    Ok(GoodLambdaParams {
        p,
        dim,
        c,
        level,
        beta,
        delta1,
        delta2,
        n_exponent,
        log_multiplier,
        multiplier: log_multiplier.exp(),
        log_gamma_eps,
        gamma_eps: log_gamma_eps.exp(),
    })
}

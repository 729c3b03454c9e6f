//! Finite-state Markov chains: stationary law, mixing time, V-ergodicity,
//! matrix function tables and seeded path sampling.
//!
//! Total variation uses the total-mass convention: two mutually singular
//! probability measures are at distance 2, not 1.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{hermitian_dilation, HermitianMatrix, RectMatrix};

/// Row sums must equal 1 to this absolute tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Singular values of `(I - Q)^T` below this count toward the eigenvalue-1 space.
pub const STATIONARY_RANK_TOL: f64 = 1e-8;
/// Tolerance for `||pi(F)||` after centering.
pub const CENTERING_TOL: f64 = 1e-10;
/// Largest block length tried by the automatic mixing-time search.
pub const MAX_AUTO_T_MIX: usize = 2000;

/// Absolute slack on envelope comparisons; computed distances bottom out at
/// round-off long before the envelope `2 * 4^{-k/t}` does.
pub const ENVELOPE_TOL: f64 = 1e-12;

const NO_CONTRACTION: f64 = 1.0 - 1e-12;

/// Row-stochastic chain on states `0..n` with its stationary distribution.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    q: DMatrix<f64>,
    pi: Vec<f64>,
    labels: Vec<String>,
    lyapunov: Option<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
    pi_cumulative: Vec<f64>,
}

fn cumulate(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

impl FiniteChain {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("chain needs at least one state".into()));
        }
        if !q.is_square() {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: q.ncols(),
            });
        }
        for i in 0..n {
            let row = q.row(i);
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "row {i} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("row {i} sums to {sum}, not 1")));
            }
        }
        let pi = stationary_distribution(&q)?;
        let cumulative = (0..n).map(|i| cumulate(q.row(i).iter().copied())).collect();
        let pi_cumulative = cumulate(pi.iter().copied());
        Ok(Self {
            q,
            pi,
            labels: (0..n).map(|i| i.to_string()).collect(),
            lyapunov: None,
            cumulative,
            pi_cumulative,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("transition matrix must be square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_states() {
            return Err(Error::StateMismatch {
                chain: self.n_states(),
                table: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    /// Attaches a Lyapunov table; every value must be at least `e`.
    pub fn with_lyapunov(mut self, v: Vec<f64>) -> Result<Self> {
        validate_lyapunov(&v, self.n_states())?;
        self.lyapunov = Some(v);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lyapunov(&self) -> Option<&[f64]> {
        self.lyapunov.as_deref()
    }

    /// `Q^k` by repeated multiplication.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.n_states(), self.n_states());
        for _ in 0..k {
            p = &p * &self.q;
        }
        p
    }

    /// `pi(V)` for the attached Lyapunov table.
    pub fn pi_v(&self) -> Option<f64> {
        self.lyapunov
            .as_ref()
            .map(|v| v.iter().zip(&self.pi).map(|(a, b)| a * b).sum())
    }

    /// One step from state `z` using a uniform draw from `rng`.
    pub fn draw_next<R: Rng + ?Sized>(&self, z: usize, rng: &mut R) -> usize {
        pick(&self.cumulative[z], rng.random::<f64>())
    }

    /// Initial state according to `init`.
    pub fn draw_initial<R: Rng + ?Sized>(&self, init: &InitialDistribution, rng: &mut R) -> usize {
        match init {
            InitialDistribution::Stationary => pick(&self.pi_cumulative, rng.random::<f64>()),
            InitialDistribution::State(z) => *z,
            InitialDistribution::Weights(w) => pick(&cumulate(w.iter().copied()), rng.random::<f64>()),
        }
    }

    /// Checks an initial distribution against this chain.
    pub fn validate_init(&self, init: &InitialDistribution) -> Result<()> {
        match init {
            InitialDistribution::Stationary => Ok(()),
            InitialDistribution::State(z) if *z < self.n_states() => Ok(()),
            InitialDistribution::State(z) => Err(Error::InvalidInput(format!("initial state {z} out of range"))),
            InitialDistribution::Weights(w) => validate_distribution(w, self.n_states()),
        }
    }
}

// Inverse CDF. Round-off can leave the last cumulative entry a hair below 1;
// the fallback returns the last state with positive mass.
fn pick(cumulative: &[f64], u: f64) -> usize {
    match cumulative.iter().position(|&c| u < c) {
        Some(i) => i,
        None => {
            let mut i = cumulative.len() - 1;
            while i > 0 && cumulative[i] == cumulative[i - 1] {
                i -= 1;
            }
            i
        }
    }
}

/// Initial law of a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    Stationary,
    State(usize),
    Weights(Vec<f64>),
}

pub fn validate_distribution(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: w.len(),
        });
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput("distribution has negative or non-finite mass".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

fn validate_lyapunov(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::StateMismatch {
            chain: n,
            table: v.len(),
        });
    }
    let e = std::f64::consts::E;
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < e * (1.0 - 1e-12)) {
        return Err(Error::InvalidLyapunov(format!("value {bad} is below e")));
    }
    Ok(())
}

/// Unique `pi` with `pi Q = pi`, from the null space of `(I - Q)^T`.
pub fn stationary_distribution(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    let a = (DMatrix::<f64>::identity(n, n) - q).transpose();
    let svd = a.svd(false, true);
    let dimension = svd
        .singular_values
        .iter()
        .filter(|s| **s <= STATIONARY_RANK_TOL)
        .count();
    if dimension != 1 {
        return Err(Error::NonUniqueStationary { dimension });
    }
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 1");
    let v_t = svd.v_t.expect("requested");
    let raw: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let total: f64 = raw.iter().sum();
    let mut pi: Vec<f64> = raw.iter().map(|x| (x / total).max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);

    let residual = (0..n)
        .map(|j| ((0..n).map(|i| pi[i] * q[(i, j)]).sum::<f64>() - pi[j]).abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(Error::Inconclusive(format!(
            "stationary residual {residual:e} exceeds 1e-10"
        )));
    }
    Ok(pi)
}

/// `sum_z w_z |p_z - q_z|` with `w = 1` by default.
pub fn tv_distance(p: &[f64], q: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    match weights {
        None => Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()),
        Some(w) => {
            if w.len() != p.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    actual: w.len(),
                });
            }
            if w.iter().any(|x| *x < 0.0) {
                return Err(Error::InvalidInput("weights must be nonnegative".into()));
            }
            Ok(p.iter().zip(q).zip(w).map(|((a, b), c)| c * (a - b).abs()).sum())
        }
    }
}

/// Geometric tail certificate: `contraction = c(s) <= 4^{-m}` at `s = m * t`,
/// where `c` is the (possibly V-weighted) Dobrushin coefficient of `Q^s`.
/// Submultiplicativity then carries the envelope from the horizon to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCertificate {
    pub block_multiple: usize,
    pub lag: usize,
    pub contraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityProfile {
    pub t_mix: Option<usize>,
    pub kappa: Option<f64>,
    pub lyapunov: Option<Vec<f64>>,
    pub horizon: usize,
    pub certificate: Option<TailCertificate>,
}

/// Envelope `2 * 4^{-floor(k/t)}`.
pub fn mixing_envelope(k: usize, t: usize) -> f64 {
    2.0 * 0.25_f64.powi((k / t) as i32)
}

// Incrementally built powers of Q with per-lag summaries.
struct PowerScan<'a> {
    chain: &'a FiniteChain,
    weights: Option<&'a [f64]>,
    current: DMatrix<f64>,
    sup_tv: Vec<f64>,
    pair: Vec<f64>,
}

impl<'a> PowerScan<'a> {
    fn new(chain: &'a FiniteChain, weights: Option<&'a [f64]>) -> Self {
        let n = chain.n_states();
        let mut scan = Self {
            chain,
            weights,
            current: DMatrix::identity(n, n),
            sup_tv: Vec::new(),
            pair: Vec::new(),
        };
        scan.record();
        scan
    }

    fn record(&mut self) {
        let n = self.chain.n_states();
        let pi = self.chain.pi();
        let p = &self.current;
        let to_pi = (0..n)
            .map(|z| (0..n).map(|y| (p[(z, y)] - pi[y]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut worst = 0.0_f64;
        for z in 0..n {
            for w in (z + 1)..n {
                let ratio = match self.weights {
                    None => 0.5 * (0..n).map(|y| (p[(z, y)] - p[(w, y)]).abs()).sum::<f64>(),
                    Some(v) => {
                        (0..n).map(|y| v[y] * (p[(z, y)] - p[(w, y)]).abs()).sum::<f64>() / (v[z] + v[w])
                    }
                };
                worst = worst.max(ratio);
            }
        }
        self.sup_tv.push(to_pi);
        self.pair.push(worst);
    }

    fn extend_to(&mut self, k: usize) {
        while self.sup_tv.len() <= k {
            self.current = &self.current * self.chain.q();
            self.record();
        }
    }

    fn certificate(&self, t: usize, horizon: usize) -> Option<TailCertificate> {
        (1..=horizon / t).find_map(|m| {
            let lag = m * t;
            let contraction = self.pair[lag];
            (contraction <= 0.25_f64.powi(m as i32)).then_some(TailCertificate {
                block_multiple: m,
                lag,
                contraction,
            })
        })
    }
}

/// `sup_z ||Q^k(z, .) - pi||_TV` for `k = 0..=horizon`.
pub fn sup_tv_profile(chain: &FiniteChain, horizon: usize) -> Vec<f64> {
    let mut scan = PowerScan::new(chain, None);
    scan.extend_to(horizon);
    scan.sup_tv
}

/// Smallest `t` whose envelope bounds the worst-case distance to `pi` for all
/// `k <= horizon` and which admits a tail certificate. Without an explicit
/// horizon, `K = max(200, 50 t)` for each candidate `t`.
pub fn mixing_time(chain: &FiniteChain, horizon: Option<usize>) -> Result<ErgodicityProfile> {
    let mut scan = PowerScan::new(chain, None);
    let t_cap = horizon.unwrap_or(MAX_AUTO_T_MIX).max(1);
    for t in 1..=t_cap {
        let k_max = horizon.unwrap_or_else(|| (50 * t).max(200));
        scan.extend_to(k_max);
        if scan.pair[k_max] >= NO_CONTRACTION {
            return Err(Error::NoMixing(format!(
                "distinct states stay at distance 2 after {k_max} steps"
            )));
        }
        let envelope_ok = (0..=k_max).all(|k| scan.sup_tv[k] <= mixing_envelope(k, t) + ENVELOPE_TOL);
        if !envelope_ok {
            continue;
        }
        if let Some(certificate) = scan.certificate(t, k_max) {
            return Ok(ErgodicityProfile {
                t_mix: Some(t),
                kappa: None,
                lyapunov: None,
                horizon: k_max,
                certificate: Some(certificate),
            });
        }
    }
    let k_max = horizon.unwrap_or_else(|| (50 * t_cap).max(200));
    Err(Error::Inconclusive(format!(
        "no block length up to {t_cap} is certified within horizon {k_max} (worst distance at horizon {:e})",
        scan.sup_tv[k_max.min(scan.sup_tv.len() - 1)]
    )))
}

/// Smallest `kappa >= 1` with `sup_{z != z'} ||Q^k(z,.) - Q^k(z',.)||_V / (V(z) + V(z'))
/// <= kappa 4^{-floor(k/t)}` for all `k <= horizon`, plus a V-weighted tail certificate.
pub fn v_ergodicity_kappa(
    chain: &FiniteChain,
    lyapunov: &[f64],
    t_mix: usize,
    horizon: Option<usize>,
) -> Result<ErgodicityProfile> {
    validate_lyapunov(lyapunov, chain.n_states())?;
    if t_mix == 0 {
        return Err(Error::InvalidInput("t_mix must be >= 1".into()));
    }
    let k_max = horizon.unwrap_or_else(|| (50 * t_mix).max(200));
    let mut scan = PowerScan::new(chain, Some(lyapunov));
    scan.extend_to(k_max);
    let certificate = scan.certificate(t_mix, k_max).ok_or_else(|| {
        Error::Inconclusive(format!(
            "V-weighted contraction never reaches 4^-m at lags m*{t_mix} <= {k_max}"
        ))
    })?;
    // With r(k + s) <= r(s) r(k) and r(s) <= 4^{-m}, the envelope on [0, s)
    // propagates to every k. Scanning further would only amplify round-off.
    let kappa = (0..certificate.lag)
        .map(|k| scan.pair[k] * 4.0_f64.powi((k / t_mix) as i32))
        .fold(1.0, f64::max);
    Ok(ErgodicityProfile {
        t_mix: Some(t_mix),
        kappa: Some(kappa),
        lyapunov: Some(lyapunov.to_vec()),
        horizon: k_max,
        certificate: Some(certificate),
    })
}

/// Per-state Hermitian values `F(z)` with cached norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFunctionTable {
    values: Vec<HermitianMatrix>,
    sup_norm: f64,
    #[serde(default)]
    v_norms: Vec<(f64, f64)>,
    #[serde(default)]
    centered: bool,
}

impl MatrixFunctionTable {
    pub fn new(values: Vec<HermitianMatrix>) -> Result<Self> {
        let d = values
            .first()
            .ok_or_else(|| Error::InvalidInput("function table is empty".into()))?
            .dim();
        if let Some(bad) = values.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.dim(),
            });
        }
        let sup_norm = values.iter().map(HermitianMatrix::spectral_norm).fold(0.0, f64::max);
        Ok(Self {
            values,
            sup_norm,
            v_norms: Vec::new(),
            centered: false,
        })
    }

    /// `1 × 1` table from a scalar function.
    pub fn from_scalars(f: &[f64]) -> Result<Self> {
        Self::new(f.iter().map(|x| HermitianMatrix::diag(&[*x])).collect())
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn values(&self) -> &[HermitianMatrix] {
        &self.values
    }

    pub fn get(&self, z: usize) -> &HermitianMatrix {
        &self.values[z]
    }

    /// `max_z ||F(z)||`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Cached `max_z ||F(z)|| / V(z)^alpha`, if requested at centering time.
    pub fn v_norm(&self, alpha: f64) -> Option<f64> {
        self.v_norms
            .iter()
            .find(|(a, _)| (a - alpha).abs() < 1e-15)
            .map(|(_, v)| *v)
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// `pi(F) = sum_z pi(z) F(z)` under an arbitrary weight vector.
    pub fn mean(&self, weights: &[f64]) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(self.dim());
        for (w, f) in weights.iter().zip(&self.values) {
            acc += &f.scale(*w);
        }
        acc
    }

    /// `max_z ||F(z)|| / V(z)^alpha`.
    pub fn weighted_norm(&self, v: &[f64], alpha: f64) -> f64 {
        self.values
            .iter()
            .zip(v)
            .map(|(f, vz)| f.spectral_norm() / vz.powf(alpha))
            .fold(0.0, f64::max)
    }

    fn check_states(&self, chain: &FiniteChain) -> Result<()> {
        if self.n_states() != chain.n_states() {
            return Err(Error::StateMismatch {
                chain: chain.n_states(),
                table: self.n_states(),
            });
        }
        Ok(())
    }

    /// Errors unless `||pi(F)|| <= CENTERING_TOL`.
    pub fn require_centered(&self, chain: &FiniteChain) -> Result<()> {
        self.check_states(chain)?;
        let norm = self.mean(chain.pi()).spectral_norm();
        if norm > CENTERING_TOL {
            return Err(Error::Uncentered { norm });
        }
        Ok(())
    }
}

/// Replaces `F` by `F - pi(F)` and caches `||F||_inf` and `||F||_{V^alpha}`.
/// V-norms need a Lyapunov table attached to the chain.
pub fn center_and_norms(
    table: &MatrixFunctionTable,
    chain: &FiniteChain,
    alphas: &[f64],
) -> Result<MatrixFunctionTable> {
    table.check_states(chain)?;
    let mean = table.mean(chain.pi());
    let values = table.values.iter().map(|f| f - &mean).collect();
    let mut out = MatrixFunctionTable::new(values)?;
    if !alphas.is_empty() {
        let v = chain
            .lyapunov()
            .ok_or_else(|| Error::InvalidLyapunov("chain has no Lyapunov table".into()))?;
        out.v_norms = alphas.iter().map(|&a| (a, out.weighted_norm(v, a))).collect();
    }
    out.centered = true;
    Ok(out)
}

/// Per-state rectangular values `R(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectFunctionTable {
    values: Vec<RectMatrix>,
    sup_norm: f64,
}

impl RectFunctionTable {
    pub fn new(values: Vec<RectMatrix>) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::InvalidInput("function table is empty".into()))?;
        let shape = (first.rows(), first.cols());
        if let Some(bad) = values.iter().find(|m| (m.rows(), m.cols()) != shape) {
            return Err(Error::InvalidInput(format!(
                "inconsistent shapes {:?} and {:?}",
                shape,
                (bad.rows(), bad.cols())
            )));
        }
        let sup_norm = values.iter().map(RectMatrix::spectral_norm).fold(0.0, f64::max);
        Ok(Self { values, sup_norm })
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values[0].rows(), self.values[0].cols())
    }

    pub fn values(&self) -> &[RectMatrix] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn mean(&self, weights: &[f64]) -> RectMatrix {
        let (r, c) = self.shape();
        let mut acc = crate::matrix::CMatrix::zeros(r, c);
        for (w, f) in weights.iter().zip(&self.values) {
            acc += f.as_matrix() * crate::matrix::C64::new(*w, 0.0);
        }
        RectMatrix::new(acc).expect("finite weighted sum")
    }

    pub fn centered(&self, chain: &FiniteChain) -> Result<RectFunctionTable> {
        if self.n_states() != chain.n_states() {
            return Err(Error::StateMismatch {
                chain: chain.n_states(),
                table: self.n_states(),
            });
        }
        let mean = self.mean(chain.pi());
        let values = self
            .values
            .iter()
            .map(|r| RectMatrix::new(r.as_matrix() - mean.as_matrix()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    /// Per-state Hermitian dilation.
    pub fn dilation(&self) -> MatrixFunctionTable {
        MatrixFunctionTable::new(self.values.iter().map(hermitian_dilation).collect()).expect("consistent shapes")
    }
}

/// RNG for one (seed, stream) pair. All simulation in the crate goes through this.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `Z_0, ..., Z_{length-1}` from the (seed, stream) generator.
pub fn sample_path(
    chain: &FiniteChain,
    init: &InitialDistribution,
    length: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<usize>> {
    if length == 0 {
        return Err(Error::InvalidInput("path length must be >= 1".into()));
    }
    chain.validate_init(init)?;
    let mut rng = stream_rng(seed, stream);
    let mut path = Vec::with_capacity(length);
    let mut z = chain.draw_initial(init, &mut rng);
    path.push(z);
    for _ in 1..length {
        z = chain.draw_next(z, &mut rng);
        path.push(z);
    }
    Ok(path)
}

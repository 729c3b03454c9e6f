//! Experiment configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mcbound::chain::{FiniteChain, InitialDistribution, MatrixFunctionTable};
use mcbound::matrix::HermitianMatrix;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Bounds,
    Simulate,
    Verify,
    Cov,
    Pca,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Bounds => "bounds",
            Operation::Simulate => "simulate",
            Operation::Verify => "verify",
            Operation::Cov => "cov",
            Operation::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub lyapunov: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    #[serde(default)]
    pub matrices: Option<Vec<HermitianMatrix>>,
    #[serde(default)]
    pub scalars: Option<Vec<f64>>,
    #[serde(default)]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionFree {
    pub upsilon: HermitianMatrix,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub json: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn default_p() -> OneOrMany<f64> {
    OneOrMany::One(2.0)
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub chain: ChainSpec,
    pub table: TableSpec,
    #[serde(default)]
    pub operation: Option<Operation>,
    #[serde(default = "default_p")]
    pub p: OneOrMany<f64>,
    pub n: OneOrMany<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "stationary")]
    pub init: InitialDistribution,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub dimension_free: Option<DimensionFree>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn stationary() -> InitialDistribution {
    InitialDistribution::Stationary
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: {e} (line {}, column {})",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

/// A loaded config with file references resolved against its directory.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub chain: FiniteChain,
    pub table: TableSpec,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let config: ExperimentConfig = parse_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let chain_spec = match &config.chain.file {
        Some(f) => {
            if config.chain.transition.is_some() {
                return Err(CliError::Config("chain: give either `transition` or `file`, not both".into()));
            }
            let mut spec: ChainSpec = parse_json(&base.join(f))?;
            spec.labels = spec.labels.or_else(|| config.chain.labels.clone());
            spec.lyapunov = spec.lyapunov.or_else(|| config.chain.lyapunov.clone());
            spec
        }
        None => config.chain.clone(),
    };
    let rows = chain_spec
        .transition
        .ok_or_else(|| CliError::Config("chain: `transition` is required".into()))?;
    let mut chain = FiniteChain::from_rows(&rows).map_err(|e| CliError::Config(format!("chain: {e}")))?;
    if let Some(labels) = chain_spec.labels {
        chain = chain.with_labels(labels).map_err(|e| CliError::Config(format!("chain labels: {e}")))?;
    }
    if let Some(v) = chain_spec.lyapunov {
        chain = chain.with_lyapunov(v).map_err(|e| CliError::Config(format!("chain lyapunov: {e}")))?;
    }
    let table = match &config.table.file {
        Some(f) => parse_json(&base.join(f))?,
        None => config.table.clone(),
    };
    let given = [table.matrices.is_some(), table.scalars.is_some(), table.vectors.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given != 1 {
        return Err(CliError::Config(
            "table: give exactly one of `matrices`, `scalars`, `vectors`".into(),
        ));
    }
    if config.n.to_vec().is_empty() || config.p.to_vec().is_empty() {
        return Err(CliError::Config("`n` and `p` must not be empty".into()));
    }
    Ok(Loaded { config, chain, table })
}

impl TableSpec {
    pub fn matrix_table(&self, chain: &FiniteChain) -> Result<MatrixFunctionTable, CliError> {
        let table = if let Some(m) = &self.matrices {
            MatrixFunctionTable::new(m.clone())
        } else if let Some(s) = &self.scalars {
            MatrixFunctionTable::from_scalars(s)
        } else {
            return Err(CliError::Config("this operation needs `matrices` or `scalars`".into()));
        }
        .map_err(|e| CliError::Config(format!("table: {e}")))?;
        if table.n_states() != chain.n_states() {
            return Err(CliError::Config(format!(
                "table has {} states but the chain has {}",
                table.n_states(),
                chain.n_states()
            )));
        }
        Ok(table)
    }
}

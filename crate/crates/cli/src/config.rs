//! Run configuration for `backtest` and `sweep`.
//!
//! A TOML file with nested sections. Any key can be overridden from the
//! environment: `EWI_<SECTION>__<KEY>=value`, e.g. `EWI_MODEL__K=20` or
//! `EWI_EVALUATION__ALPHAS=[0.05,0.1]`. Values are parsed as TOML, falling
//! back to a plain string. Relative data paths resolve against the directory
//! of the config file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ewi_core::indicator::{EwiParams, NnlsOptions};
use ewi_core::ledger::EncodingMode;
use ewi_core::linalg::SolverOptions;
use ewi_core::pipeline::{BacktestParams, IndicatorKind, ModelConfig, SweepGrid};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "EWI_";
pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds both solvers unless they set their own.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub encoding: EncodingConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the evolution matrix (`X.csv`, `X.rows`, `X.cols`).
    pub matrix: PathBuf,
    pub ohlc: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub mode: EncodingMode,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { mode: EncodingMode::Node }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub holdout_days: usize,
    pub train_days: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { holdout_days: 30, train_days: 150 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub delta: usize,
    pub lambda_enc: f64,
    pub lambda_c: f64,
    pub ridge: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EwiParams::default();
        Self { k: e.k, delta: e.delta, lambda_enc: e.lambda_enc, lambda_c: e.lambda_c, ridge: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub nmf: SolverOverrides,
    pub nnls: SolverOverrides,
}

/// Solver keys left unset keep the library defaults; the seed falls back to
/// the run seed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denom_floor: Option<f64>,
}

impl SolverOverrides {
    fn nmf(&self, seed: u64) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            seed: self.seed.unwrap_or(seed),
            denom_floor: self.denom_floor.unwrap_or(d.denom_floor),
        }
    }

    fn nnls(&self, seed: u64) -> NnlsOptions {
        let d = NnlsOptions::default();
        NnlsOptions {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            seed: self.seed.unwrap_or(seed),
            denom_floor: self.denom_floor.unwrap_or(d.denom_floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub alphas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub indicators: Vec<IndicatorKind>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { alphas: vec![0.1], horizons: vec![1], indicators: IndicatorKind::ALL.to_vec() }
    }
}

/// Model shapes for `sweep`; the cartesian product of `ks` and `deltas`
/// unless `models` lists explicit `{ k, delta }` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ks: Vec<usize>,
    pub deltas: Vec<usize>,
    pub models: Vec<ModelConfig>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { ks: vec![10], deltas: vec![5], models: Vec::new() }
    }
}

impl RunConfig {
    /// Reads, applies environment overrides, resolves paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let env: Vec<(String, String)> = std::env::vars().collect();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &env, &base)
    }

    pub fn from_toml(text: &str, env: &[(String, String)], base: &Path) -> Result<Self> {
        let mut value: toml::Table = text.parse().context("parsing config")?;
        apply_env_overrides(&mut value, env)?;
        let mut cfg: RunConfig = toml::Value::Table(value).try_into().context("invalid config")?;
        for p in [&mut cfg.data.matrix, &mut cfg.data.ohlc] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.evaluation;
        if e.alphas.is_empty() || e.horizons.is_empty() || e.indicators.is_empty() {
            bail!("evaluation.alphas, evaluation.horizons and evaluation.indicators must be non-empty");
        }
        if e.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            bail!("evaluation.alphas must be positive");
        }
        if e.horizons.contains(&0) {
            bail!("evaluation.horizons must be >= 1");
        }
        if self.model.k == 0 || self.model.delta == 0 {
            bail!("model.k and model.delta must be >= 1");
        }
        if self.partition.holdout_days == 0 || self.partition.train_days == 0 {
            bail!("partition sizes must be >= 1");
        }
        if self.sweep.models.is_empty() && (self.sweep.ks.is_empty() || self.sweep.deltas.is_empty()) {
            bail!("sweep needs models or non-empty ks and deltas");
        }
        Ok(())
    }

    /// Seed-resolved backtest parameters.
    pub fn backtest_params(&self) -> BacktestParams {
        let m = &self.model;
        BacktestParams {
            holdout_days: self.partition.holdout_days,
            train_days: self.partition.train_days,
            ewi: EwiParams { k: m.k, delta: m.delta, lambda_enc: m.lambda_enc, lambda_c: m.lambda_c },
            ridge: m.ridge,
            nmf: self.solver.nmf.nmf(self.seed),
            nnls: self.solver.nnls.nnls(self.seed),
            restrict_to_training_support: self.encoding.mode == EncodingMode::Edge,
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        let e = &self.evaluation;
        if self.sweep.models.is_empty() {
            SweepGrid::product(e.alphas.clone(), e.horizons.clone(), &self.sweep.ks, &self.sweep.deltas)
        } else {
            SweepGrid { alphas: e.alphas.clone(), horizons: e.horizons.clone(), models: self.sweep.models.clone() }
        }
    }

    pub fn check_paths(&self) -> Result<()> {
        for p in [self.data.matrix.join("X.csv"), self.data.ohlc.clone()] {
            if !p.is_file() {
                return Err(anyhow!(crate::MissingData(p)));
            }
        }
        Ok(())
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_env_overrides(root: &mut toml::Table, env: &[(String, String)]) -> Result<()> {
    let mut vars: Vec<&(String, String)> = env.iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override {key}");
        }
        let mut table = &mut *root;
        for part in &path[..path.len() - 1] {
            let entry = table.entry(part.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| anyhow!("override {key}: {part} is not a section"))?;
        }
        table.insert(path[path.len() - 1].clone(), parse_env_value(raw));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[data]\nmatrix = \"d\"\nohlc = \"d/ohlc.csv\"\n";

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::from_toml(MINIMAL, &[], Path::new("/cfg")).unwrap();
        assert_eq!(cfg.data.matrix, Path::new("/cfg/d"));
        let p = cfg.backtest_params();
        assert_eq!((p.holdout_days, p.train_days, p.ewi.k, p.ewi.delta), (30, 150, 10, 5));
        assert_eq!((p.nmf.seed, p.nnls.seed), (3, 3));
        assert!(!p.restrict_to_training_support);
    }

    #[test]
    fn environment_overrides_nested_keys() {
        let env = vec![
            ("EWI_MODEL__K".to_string(), "4".to_string()),
            ("EWI_EVALUATION__ALPHAS".to_string(), "[0.05, 0.2]".to_string()),
            ("EWI_ENCODING__MODE".to_string(), "edge".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let cfg = RunConfig::from_toml(MINIMAL, &env, Path::new("/")).unwrap();
        assert_eq!(cfg.model.k, 4);
        assert_eq!(cfg.evaluation.alphas, [0.05, 0.2]);
        assert!(cfg.backtest_params().restrict_to_training_support);
    }

    #[test]
    fn malformed_configs_rejected() {
        let base = Path::new("/");
        assert!(RunConfig::from_toml("seed = ", &[], base).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[model]\nkk = 3\n"), &[], base).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[evaluation]\nalphas = []\n"), &[], base).is_err());
        assert!(RunConfig::from_toml("seed = 1\n", &[], base).is_err());
        let env = vec![("EWI_SEED__X".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml(MINIMAL, &env, base).is_err());
    }

    #[test]
    fn partial_solver_tables_keep_the_run_seed() {
        let text = "[data]\nmatrix = \"d\"\nohlc = \"o\"\n[solver.nmf]\nmax_iters = 7\n[solver.nnls]\nseed = 9\n";
        let p = RunConfig::from_toml(text, &[], Path::new("/")).unwrap().backtest_params();
        assert_eq!((p.nmf.max_iters, p.nmf.seed), (7, DEFAULT_SEED));
        assert_eq!(p.nmf.rel_tol, SolverOptions::default().rel_tol);
        assert_eq!((p.nnls.seed, p.nnls.max_iters), (9, NnlsOptions::default().max_iters));
    }

    #[test]
    fn explicit_models_take_precedence() {
        let text = format!("{MINIMAL}[sweep]\nmodels = [{{ k = 5, delta = 1 }}]\n");
        let grid = RunConfig::from_toml(&text, &[], Path::new("/")).unwrap().sweep_grid();
        assert_eq!(grid.models, [ModelConfig { k: 5, delta: 1 }]);
    }
}

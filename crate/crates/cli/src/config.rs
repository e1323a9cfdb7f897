//! Flat `key = value` configuration with `NODEWISE_` environment overrides.
//!
//! Layers are applied in order: defaults, config file, environment, command-line
//! flags. Every layer goes through [`Settings::set`], so all of them share one
//! parser and one error message per key.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nodewise::backtest::{Estimator, Strategy};
use nodewise::portfolio::{DEFAULT_DELTA, DEFAULT_RHO1, DEFAULT_SIGMA};
use nodewise::simulation::{ErrorStructure, PRule};
use nodewise::{FoldScheme, Selector};

pub const ENV_PREFIX: &str = "NODEWISE_";

/// Every accepted key with a one-line description; printed by `nodewise keys`.
pub const SCHEMA: &[(&str, &str)] = &[
    ("seed", "master seed for every random draw (u64)"),
    ("threads", "worker threads; 0 uses all cores"),
    ("log_level", "error | warn | info | debug | trace"),
    ("out", "output directory"),
    ("returns", "returns CSV: date column, then one column per asset"),
    ("factors", "factors CSV: date column, then one column per factor"),
    ("selector", "gic | cv | fixed"),
    ("lambda", "penalty used when selector = fixed"),
    ("cv_folds", "number of cross-validation folds"),
    ("cv_blocked", "true assigns contiguous time blocks to folds"),
    ("grid_size", "points on the penalty grid"),
    ("lambda_min_ratio", "smallest grid penalty as a share of the largest"),
    ("strategy", "gmv | markowitz | msr | mos"),
    ("rho1", "target return for markowitz"),
    ("sigma", "risk level for mos"),
    ("delta", "mean-return weight for the negative msr branch"),
    ("tc", "proportional transaction cost"),
    ("window", "estimation window length in periods"),
    ("baselines", "comma list of equal-weight, sample-pinv, or none"),
    ("n", "comma list of simulated sample sizes"),
    ("p", "n/2 | 3n/2 | explicit asset count"),
    ("structure", "toeplitz | blocks"),
    ("rho", "Toeplitz error correlation"),
    ("blocks", "comma list of block sizes"),
    ("replications", "Monte-Carlo replications per sample size"),
    ("n_factors", "number of simulated factors"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub threads: usize,
    pub log_level: log::LevelFilter,
    pub out: PathBuf,
    pub returns: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub selector: String,
    pub lambda: Option<f64>,
    pub cv_folds: usize,
    pub cv_blocked: bool,
    pub grid_size: usize,
    pub lambda_min_ratio: f64,
    pub strategy: String,
    pub rho1: f64,
    pub sigma: f64,
    pub delta: f64,
    pub tc: f64,
    pub window: usize,
    pub baselines: Vec<Estimator>,
    pub n: Vec<usize>,
    pub p: PRule,
    pub structure: String,
    pub rho: f64,
    pub blocks: Vec<usize>,
    pub replications: usize,
    pub n_factors: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            log_level: log::LevelFilter::Warn,
            out: PathBuf::from("out"),
            returns: None,
            factors: None,
            selector: "gic".into(),
            lambda: None,
            cv_folds: 10,
            cv_blocked: false,
            grid_size: nodewise::lasso::DEFAULT_GRID_SIZE,
            lambda_min_ratio: nodewise::lasso::DEFAULT_LAMBDA_MIN_RATIO,
            strategy: "gmv".into(),
            rho1: DEFAULT_RHO1,
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            tc: nodewise::backtest::DEFAULT_TRANSACTION_COST,
            window: nodewise::backtest::DEFAULT_WINDOW,
            baselines: vec![Estimator::EqualWeight, Estimator::SampleCovPinv],
            n: vec![100, 200, 400],
            p: PRule::HalfN,
            structure: "toeplitz".into(),
            rho: 0.5,
            blocks: vec![10, 20, 30],
            replications: 20,
            n_factors: 3,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("`{key}` expects a number, got `{value}`"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("`{key}` expects true or false, got `{value}`"),
    }
}

fn one_of(key: &str, value: &str, allowed: &[&str]) -> Result<String> {
    let v = value.to_ascii_lowercase();
    if allowed.contains(&v.as_str()) {
        Ok(v)
    } else {
        bail!("`{key}` must be one of {}, got `{value}`", allowed.join(" | "))
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "log_level" => {
                self.log_level = value
                    .parse()
                    .map_err(|_| anyhow!("`log_level` must be a log level, got `{value}`"))?
            }
            "out" => self.out = PathBuf::from(value),
            "returns" => self.returns = Some(PathBuf::from(value)),
            "factors" => self.factors = Some(PathBuf::from(value)),
            "selector" => self.selector = one_of(key, value, &["gic", "cv", "fixed"])?,
            "lambda" => self.lambda = Some(num(key, value)?),
            "cv_folds" => self.cv_folds = num(key, value)?,
            "cv_blocked" => self.cv_blocked = boolean(key, value)?,
            "grid_size" => self.grid_size = num(key, value)?,
            "lambda_min_ratio" => self.lambda_min_ratio = num(key, value)?,
            "strategy" => self.strategy = one_of(key, value, &["gmv", "markowitz", "msr", "mos"])?,
            "rho1" => self.rho1 = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "tc" => self.tc = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "baselines" => {
                let mut out = Vec::new();
                for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match name {
                        "equal-weight" => out.push(Estimator::EqualWeight),
                        "sample-pinv" => out.push(Estimator::SampleCovPinv),
                        "none" => {}
                        _ => bail!("unknown baseline `{name}`; use equal-weight, sample-pinv or none"),
                    }
                }
                self.baselines = out;
            }
            "n" => self.n = list(key, value)?,
            "p" => {
                self.p = match value {
                    "n/2" => PRule::HalfN,
                    "3n/2" => PRule::ThreeHalvesN,
                    _ => PRule::Explicit(num(key, value)?),
                }
            }
            "structure" => self.structure = one_of(key, value, &["toeplitz", "blocks"])?,
            "rho" => self.rho = num(key, value)?,
            "blocks" => self.blocks = list(key, value)?,
            "replications" => self.replications = num(key, value)?,
            "n_factors" => self.n_factors = num(key, value)?,
            _ => bail!("unknown configuration key `{key}`; run `nodewise keys` for the schema"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}:{}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value).with_context(|| format!("{source}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies every `NODEWISE_<KEY>` variable, in sorted order.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|key| (key.to_ascii_lowercase(), v)))
            .collect();
        found.sort();
        for (key, value) in found {
            self.set(&key, &value)
                .with_context(|| format!("environment variable {ENV_PREFIX}{}", key.to_ascii_uppercase()))?;
        }
        Ok(())
    }

    pub fn selector(&self) -> Result<Selector> {
        Ok(match self.selector.as_str() {
            "gic" => Selector::Gic,
            "cv" => Selector::Cv,
            _ => Selector::Fixed(
                self.lambda
                    .ok_or_else(|| anyhow!("selector = fixed needs a `lambda` value"))?,
            ),
        })
    }

    pub fn nodewise(&self) -> Result<nodewise::NodewiseConfig> {
        Ok(nodewise::NodewiseConfig {
            selector: self.selector()?,
            cv_folds: self.cv_folds,
            fold_scheme: if self.cv_blocked {
                FoldScheme::Blocked
            } else {
                FoldScheme::Random
            },
            seed: self.seed,
            grid_size: self.grid_size,
            lambda_min_ratio: self.lambda_min_ratio,
            ..nodewise::NodewiseConfig::default()
        })
    }

    pub fn strategy(&self) -> Strategy {
        match self.strategy.as_str() {
            "markowitz" => Strategy::Markowitz { rho1: self.rho1 },
            "msr" => Strategy::ConstrainedMsr { delta: self.delta },
            "mos" => Strategy::MaxOos { sigma: self.sigma },
            _ => Strategy::Gmv,
        }
    }

    pub fn structure(&self) -> ErrorStructure {
        if self.structure == "blocks" {
            ErrorStructure::Blocks(self.blocks.clone())
        } else {
            ErrorStructure::Toeplitz(self.rho)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_lines_and_comments() {
        let mut s = Settings::default();
        s.apply_text("# header\nseed = 7\n n = 100, 200 # trailing\n\ncv_blocked = yes\n", "t")
            .unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.n, vec![100, 200]);
        assert!(s.cv_blocked);
    }

    #[test]
    fn bad_lines_name_the_location() {
        let mut s = Settings::default();
        let e = s.apply_text("seed = 1\nwindow 5\n", "cfg").unwrap_err();
        assert!(e.to_string().contains("cfg:2"));
        let e = s.apply_text("colour = red\n", "cfg").unwrap_err();
        assert!(format!("{e:#}").contains("unknown configuration key"));
    }

    #[test]
    fn env_overrides_file() {
        let mut s = Settings::default();
        s.apply_text("tc = 0.01\nwindow = 60\n", "f").unwrap();
        s.apply_env(vec![
            ("NODEWISE_TC".to_string(), "0".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        assert_eq!(s.tc, 0.0);
        assert_eq!(s.window, 60);
    }

    #[test]
    fn fixed_selector_needs_lambda() {
        let mut s = Settings::default();
        s.set("selector", "fixed").unwrap();
        assert!(s.selector().is_err());
        s.set("lambda", "0.1").unwrap();
        assert_eq!(s.selector().unwrap(), Selector::Fixed(0.1));
    }

    #[test]
    fn schema_lists_every_settable_key() {
        let mut s = Settings::default();
        for (key, _) in SCHEMA {
            let probe = match *key {
                "log_level" => "info",
                "selector" => "cv",
                "strategy" => "msr",
                "structure" => "blocks",
                "baselines" => "none",
                "p" => "3n/2",
                "cv_blocked" => "false",
                "out" | "returns" | "factors" => "x",
                "n" | "blocks" => "5,6",
                _ => "1",
            };
            s.set(key, probe).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}

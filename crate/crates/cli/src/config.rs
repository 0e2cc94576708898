//! `key = value` parameter files and flag overrides.

use clap::Args;
use serde::{Deserialize, Serialize};
use stopflow::ModelParams;

use crate::error::CliError;

pub const MODEL_KEYS: [&str; 6] = ["mu", "sigma", "rho", "kappa", "lambda", "theta"];

/// Model parameter overrides; each one beats the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ParamFlags {
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
}

impl ParamFlags {
    fn get(&self, key: &str) -> Option<f64> {
        match key {
            "mu" => self.mu,
            "sigma" => self.sigma,
            "rho" => self.rho,
            "kappa" => self.kappa,
            "lambda" => self.lambda,
            "theta" => self.theta,
            _ => None,
        }
    }
}

/// Contents of a config file: model keys plus an optional `seed`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub values: Vec<(String, f64)>,
    pub seed: Option<u64>,
}

impl FileConfig {
    fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

pub fn parse_config(text: &str) -> Result<FileConfig, CliError> {
    let mut cfg = FileConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!("config line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k == "seed" {
            cfg.seed = Some(
                v.parse()
                    .map_err(|_| CliError::Validation(format!("config line {}: seed must be an unsigned integer", n + 1)))?,
            );
            continue;
        }
        if !MODEL_KEYS.contains(&k) {
            return Err(CliError::Validation(format!("config line {}: unknown key '{k}'", n + 1)));
        }
        if cfg.get(k).is_some() {
            return Err(CliError::Validation(format!("config line {}: duplicate key '{k}'", n + 1)));
        }
        let value = v
            .parse()
            .map_err(|_| CliError::Validation(format!("config line {}: '{v}' is not a number", n + 1)))?;
        cfg.values.push((k.to_string(), value));
    }
    Ok(cfg)
}

/// Flags over file over defaults. Without a file the defaults are the
/// reference parameters; with a file every key must be set somewhere.
pub fn resolve_params(file: Option<&FileConfig>, flags: &ParamFlags) -> Result<ModelParams<f64>, CliError> {
    let defaults = ModelParams::<f64>::reference();
    let mut out = [0.0; 6];
    for (slot, key) in out.iter_mut().zip(MODEL_KEYS) {
        let fallback = match file {
            Some(f) => f.get(key),
            None => Some(default_of(&defaults, key)),
        };
        *slot = flags
            .get(key)
            .or(fallback)
            .ok_or_else(|| CliError::Validation(format!("missing key '{key}'")))?;
    }
    let [mu, sigma, rho, kappa, lambda, theta] = out;
    Ok(ModelParams {
        mu,
        sigma,
        rho,
        kappa,
        lambda,
        theta,
    })
}

fn default_of(p: &ModelParams<f64>, key: &str) -> f64 {
    match key {
        "mu" => p.mu,
        "sigma" => p.sigma,
        "rho" => p.rho,
        "kappa" => p.kappa,
        "lambda" => p.lambda,
        _ => p.theta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = "mu=0.2\nsigma=0.2\nrho=0.5\nkappa=5\nlambda=1\ntheta=0.5\n";

    #[test]
    fn reference_file_validates() {
        let f = parse_config(REFERENCE).unwrap();
        let p = resolve_params(Some(&f), &ParamFlags::default()).unwrap();
        assert_eq!(p, ModelParams::reference());
        assert!(p.validate().is_ok());
    }

    #[test]
    fn missing_key_is_named() {
        let f = parse_config("mu=0.2\nsigma=0.2\nkappa=5\nlambda=1\ntheta=0.5").unwrap();
        let e = resolve_params(Some(&f), &ParamFlags::default()).unwrap_err();
        assert!(e.to_string().contains("'rho'"), "{e}");
    }

    #[test]
    fn flags_win() {
        let f = parse_config(REFERENCE).unwrap();
        let flags = ParamFlags {
            rho: Some(0.6),
            ..Default::default()
        };
        assert_eq!(resolve_params(Some(&f), &flags).unwrap().rho, 0.6);
    }

    #[test]
    fn rejects_typos_and_garbage() {
        assert!(parse_config("rh0 = 0.5").is_err());
        assert!(parse_config("rho 0.5").is_err());
        assert!(parse_config("rho = fast").is_err());
        assert!(parse_config("rho = 1\nrho = 2").is_err());
    }

    #[test]
    fn comments_and_seed() {
        let f = parse_config("# reference setting\nrho = 0.5 # discount\n\nseed = 9\n").unwrap();
        assert_eq!(f.seed, Some(9));
        assert_eq!(f.get("rho"), Some(0.5));
    }
}

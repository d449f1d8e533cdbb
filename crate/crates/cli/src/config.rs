//! Flat `key = value` files: run configs, model files and manifests.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use hawkes_latency::{Latency, ModelMD};

use crate::usage;

/// Keys a manifest carries for information only; a config loader skips them
/// so a manifest can be replayed as a config.
const INFORMATIONAL: &[&str] = &["command", "collisions", "version"];

pub fn parse_key_values(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(usage(format!("{origin}:{}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    parse_key_values(&text, &path.display().to_string())
}

/// Values from a config file, consulted whenever a flag is absent.
#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            Some(p) => read_key_values(p)?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            values,
            used: RefCell::default(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    /// The flag if given, else the parsed config value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| usage(format!("config key '{key}': {e}")))
            })
            .transpose()
    }

    pub fn pick_bool(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    /// Fails on keys that no option consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| {
                !used.contains(*k)
                    && !INFORMATIONAL.contains(&k.as_str())
                    && !k.starts_with("counts-")
            })
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown config keys: {unknown:?}")))
        }
    }
}

pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("{what}: cannot parse '{}' as a number", v.trim())))
        })
        .collect()
}

pub fn parse_pair(text: &str, what: &str) -> Result<(f64, f64)> {
    match parse_list(text, what)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("{what}: expected 'lower,upper'"))),
    }
}

pub fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// `tau` is a single value or a row-major `dim x dim` list.
pub fn parse_latency(text: &str, dim: usize) -> Result<Latency> {
    let v = parse_list(text, "tau")?;
    match v.len() {
        1 => Ok(Latency::Scalar(v[0])),
        n if n == dim * dim => Ok(Latency::Matrix(nalgebra_matrix(dim, &v))),
        n => Err(usage(format!(
            "tau needs 1 or {} values, got {n}",
            dim * dim
        ))),
    }
}

fn nalgebra_matrix(dim: usize, v: &[f64]) -> hawkes_latency::nalgebra::DMatrix<f64> {
    hawkes_latency::nalgebra::DMatrix::from_row_slice(dim, dim, v)
}

pub fn format_latency(tau: &Latency, dim: usize) -> String {
    match tau {
        Latency::Scalar(t) => format!("{t}"),
        Latency::Matrix(_) => join((0..dim * dim).map(|k| tau.get(k / dim, k % dim))),
    }
}

/// Model parameters as given on the command line.
#[derive(Debug, Default, Clone)]
pub struct ModelFlags {
    pub model: Option<std::path::PathBuf>,
    pub lambda0: Option<String>,
    pub alpha: Option<String>,
    pub beta: Option<String>,
    pub tau: Option<String>,
}

/// Resolves a model from flags, then the config, then a model file.
pub fn resolve_model(flags: &ModelFlags, cfg: &Config) -> Result<ModelMD> {
    let file_path = cfg.pick(flags.model.clone(), "model")?;
    let file = match &file_path {
        Some(p) => read_key_values(p)?,
        None => BTreeMap::new(),
    };
    let get = |flag: &Option<String>, key: &str| -> Result<Option<String>> {
        Ok(cfg
            .pick(flag.clone(), key)?
            .or_else(|| file.get(key).cloned()))
    };
    let need = |v: Option<String>, key: &str| {
        v.ok_or_else(|| {
            usage(format!(
                "missing model parameter '{key}' (flag --{key} or --model)"
            ))
        })
    };
    let lambda0 = parse_list(
        &need(get(&flags.lambda0, "lambda0")?, "lambda0")?,
        "lambda0",
    )?;
    let dim = lambda0.len();
    let dim_key = cfg
        .raw("dim")
        .map(str::to_string)
        .or_else(|| file.get("dim").cloned());
    if let Some(d) = dim_key {
        let d: usize = d.parse().map_err(|_| usage(format!("bad dim '{d}'")))?;
        if d != dim {
            return Err(usage(format!("dim = {d} but lambda0 has {dim} entries")));
        }
    }
    let alpha = parse_list(&need(get(&flags.alpha, "alpha")?, "alpha")?, "alpha")?;
    let beta = parse_list(&need(get(&flags.beta, "beta")?, "beta")?, "beta")?;
    let tau = match get(&flags.tau, "tau")? {
        Some(t) => parse_latency(&t, dim)?,
        None => Latency::Scalar(0.0),
    };
    ModelMD::from_row_major(lambda0, &alpha, &beta, tau).map_err(|e| usage(e.to_string()))
}

pub fn format_model(model: &ModelMD) -> String {
    let dim = model.dim();
    let theta = model.theta();
    format!(
        "dim = {dim}\nlambda0 = {}\nalpha = {}\nbeta = {}\ntau = {}\n",
        join(theta[..dim].iter().copied()),
        join(theta[dim..dim + dim * dim].iter().copied()),
        join(theta[dim + dim * dim..].iter().copied()),
        format_latency(model.latency(), dim)
    )
}

pub fn read_model(path: &Path) -> Result<ModelMD> {
    let cfg = Config::default();
    let flags = ModelFlags {
        model: Some(path.to_path_buf()),
        ..Default::default()
    };
    resolve_model(&flags, &cfg).with_context(|| format!("reading model {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_parse() {
        let kv = parse_key_values("# run\nend_time = 10\nseed=3 # trailing\n\n", "x").unwrap();
        assert_eq!(kv["end-time"], "10");
        assert_eq!(kv["seed"], "3");
        assert!(parse_key_values("a = 1\na = 2\n", "x").is_err());
        assert!(parse_key_values("novalue\n", "x").is_err());
    }

    #[test]
    fn flags_override_config_and_unknown_keys_fail() {
        let cfg = Config {
            values: parse_key_values("seed = 3\npaths = 4\nbogus = 1\n", "x").unwrap(),
            used: RefCell::default(),
        };
        assert_eq!(cfg.pick(Some(9u64), "seed").unwrap(), Some(9));
        assert_eq!(cfg.pick::<usize>(None, "paths").unwrap(), Some(4));
        assert!(cfg.finish().is_err());
        cfg.raw("bogus");
        assert!(cfg.finish().is_ok());
    }

    #[test]
    fn model_round_trip() {
        let m = ModelMD::from_row_major(
            vec![0.6, 0.2],
            &[0.5, 0.7, 0.9, 0.3],
            &[1.4, 1.8, 2.2, 1.0],
            Latency::Scalar(2.0),
        )
        .unwrap();
        let text = format_model(&m);
        let kv = parse_key_values(&text, "m").unwrap();
        let cfg = Config::default();
        let flags = ModelFlags {
            lambda0: Some(kv["lambda0"].clone()),
            alpha: Some(kv["alpha"].clone()),
            beta: Some(kv["beta"].clone()),
            tau: Some(kv["tau"].clone()),
            ..Default::default()
        };
        assert_eq!(resolve_model(&flags, &cfg).unwrap(), m);
    }

    #[test]
    fn latency_forms() {
        assert_eq!(parse_latency("2", 2).unwrap(), Latency::Scalar(2.0));
        assert!(matches!(
            parse_latency("1,2,3,4", 2).unwrap(),
            Latency::Matrix(_)
        ));
        assert!(parse_latency("1,2", 2).is_err());
    }
}

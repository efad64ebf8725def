//! Flat key/value experiment configuration.
//!
//! Grammar (one entry per line):
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//! Values are plain strings; numeric lists are comma-separated. Lookups are
//! scoped: `get("hydro", "alpha")` tries `[hydro] alpha`, then falls back to
//! `[common] alpha`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    /// `(section, key) -> value`, insertion-order independent.
    entries: BTreeMap<(String, String), String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = "common".to_string();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            entries.insert(
                (section.clone(), k.trim().to_string()),
                v.trim().to_string(),
            );
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .or_else(|| self.entries.get(&("common".to_string(), key.to_string())))
            .map(|s| s.as_str())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.entries
            .insert((section.to_string(), key.to_string()), value.to_string());
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("{section}.{key}: bad float `{s}`"))),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("{section}.{key}: bad integer `{s}`"))),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("{section}.{key}: bad integer `{s}`"))),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(s) => Err(Error::Config(format!("{section}.{key}: bad bool `{s}`"))),
        }
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::Config(format!("{section}.{key}: bad float `{p}`"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    pub fn get_usize_list(&self, section: &str, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::Config(format!("{section}.{key}: bad integer `{p}`"))
                    })
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
        }
    }

    /// Canonical text form (sorted), used for hashing and the manifest.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for ((sec, key), val) in &self.entries {
            out.push_str(&format!("{sec}.{key} = {val}\n"));
        }
        out
    }

    /// FNV-1a hash of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Initial macroscopic profile specification.
#[derive(Debug, Clone)]
pub enum Profile {
    Constant(f64),
    /// `base + amp * cos(2 pi wave x_1)`.
    CosineBump { base: f64, amp: f64, wave: usize },
    Table(Vec<f64>),
}

impl Profile {
    pub fn from_config(cfg: &ExperimentConfig, section: &str) -> Result<Profile> {
        match cfg.get(section, "profile").unwrap_or("constant") {
            "constant" => Ok(Profile::Constant(cfg.get_f64(section, "profile_value", 1.0)?)),
            "cosine" | "cosine-bump" => Ok(Profile::CosineBump {
                base: cfg.get_f64(section, "profile_base", 1.0)?,
                amp: cfg.get_f64(section, "profile_amp", 0.5)?,
                wave: cfg.get_usize(section, "profile_wave", 1)?,
            }),
            "table" | "custom" => {
                let t = cfg.get_f64_list(section, "profile_table")?.ok_or_else(|| {
                    Error::Config("profile = table needs profile_table".into())
                })?;
                Ok(Profile::Table(t))
            }
            other => Err(Error::Config(format!("unknown profile kind `{other}`"))),
        }
    }

    /// Evaluate at a point of the torus (table profiles are piecewise
    /// constant over their own uniform grid, first axis only).
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::CosineBump { base, amp, wave } => {
                base + amp * (2.0 * std::f64::consts::PI * *wave as f64 * x[0]).cos()
            }
            Profile::Table(t) => {
                let n = t.len();
                let idx = ((x[0].rem_euclid(1.0)) * n as f64) as usize;
                t[idx.min(n - 1)]
            }
        }
    }
}

/// Sweep rule for the particle size along an `n` sweep.
#[derive(Debug, Clone)]
pub enum ChiRule {
    /// Explicit per-`n` values (parallel to the `n` list).
    List(Vec<f64>),
    /// `chi = c * n^(-2 / min(1, alpha/2))`: keeps the scaling diagnostic
    /// constant along the sweep.
    Scaling { c: f64 },
    /// Fixed `chi` for every `n`.
    Fixed(f64),
}

impl ChiRule {
    pub fn from_config(cfg: &ExperimentConfig, section: &str) -> Result<ChiRule> {
        match cfg.get(section, "chi_rule").unwrap_or("scaling") {
            "list" => {
                let l = cfg
                    .get_f64_list(section, "chi")?
                    .ok_or_else(|| Error::Config("chi_rule = list needs chi".into()))?;
                Ok(ChiRule::List(l))
            }
            "scaling" => Ok(ChiRule::Scaling { c: cfg.get_f64(section, "chi_c", 1.0)? }),
            "fixed" => Ok(ChiRule::Fixed(cfg.get_f64(section, "chi", 1e-3)?)),
            other => Err(Error::Config(format!("unknown chi_rule `{other}`"))),
        }
    }

    pub fn chi_for(&self, idx: usize, n: usize, alpha: f64) -> f64 {
        match self {
            ChiRule::List(l) => l[idx.min(l.len() - 1)],
            ChiRule::Scaling { c } => {
                let p = 2.0 / (alpha / 2.0).min(1.0);
                c * (n as f64).powf(-p)
            }
            ChiRule::Fixed(chi) => *chi,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections_and_fallback() {
        let cfg = ExperimentConfig::parse(
            "# demo\nseed = 7\n[hydro]\nalpha = 2.0\nn = 16, 32\n",
        )
        .unwrap();
        assert_eq!(cfg.get_f64("hydro", "alpha", 0.0).unwrap(), 2.0);
        assert_eq!(cfg.get_u64("hydro", "seed", 0).unwrap(), 7);
        assert_eq!(cfg.get_usize_list("hydro", "n").unwrap().unwrap(), vec![16, 32]);
        assert!(cfg.get("hydro", "missing").is_none());
    }

    #[test]
    fn bad_line_rejected() {
        assert!(ExperimentConfig::parse("nonsense without equals\n").is_err());
    }

    #[test]
    fn hash_stable_under_reordering() {
        let a = ExperimentConfig::parse("[x]\na = 1\nb = 2\n").unwrap();
        let b = ExperimentConfig::parse("[x]\nb = 2\na = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn chi_rule_scaling_keeps_diagnostic_constant() {
        let rule = ChiRule::Scaling { c: 1.0 };
        for (alpha, pmin) in [(2.0, 1.0), (1.0, 0.5)] {
            for n in [16usize, 64, 256] {
                let chi = rule.chi_for(0, n, alpha);
                let s = (n as f64).powi(2) * chi.powf(pmin);
                assert!((s - 1.0).abs() < 1e-10, "alpha={alpha} n={n}: s={s}");
            }
        }
    }
}

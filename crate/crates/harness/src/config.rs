//! Experiment configuration: a flat `key = value` file with sections.
//!
//! ```ini
//! [experiment]
//! mode = synthetic
//! policies = linucb_one linucb_ind cofiba
//! horizon = 20000
//! seeds = 1 2 3
//! candidates = 10
//!
//! [world]
//! n = 50
//! d = 20
//!
//! [grid]
//! alpha = 0.05 0.1 0.2
//! ```
//!
//! Policy specs are separated by whitespace or `;`; number lists by
//! whitespace or `,`. Params fixed in a policy spec are not tuned.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cofiba_core::environment::{ClusterBalance, WorldParams};
use cofiba_core::policy::parse_param_value;
use cofiba_core::replay::LogFormat;
use cofiba_core::PolicyKind;
use ini::Ini;

use crate::error::{config, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synthetic,
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Synthetic => "synthetic",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "synthetic" => Ok(Mode::Synthetic),
            "replay" => Ok(Mode::Replay),
            other => config(format!("unknown mode {other:?}")),
        }
    }
}

/// When to draw candidate lists for a replayed log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthesize {
    /// Only if some record lacks a list.
    Auto,
    Always,
    Never,
}

impl fmt::Display for Synthesize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Synthesize::Auto => "auto",
            Synthesize::Always => "always",
            Synthesize::Never => "never",
        })
    }
}

impl FromStr for Synthesize {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Synthesize::Auto),
            "always" => Ok(Synthesize::Always),
            "never" => Ok(Synthesize::Never),
            other => config(format!("unknown synthesize setting {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogConfig {
    pub path: PathBuf,
    pub format: LogFormat,
    /// Raw records reserved for tuning; defaults to the tuning fraction.
    pub tuning_prefix: Option<usize>,
    pub synthesize: Synthesize,
    pub candidate_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub policies: Vec<PolicyKind>,
    /// Rounds in synthetic mode; in replay mode a cap on the records read
    /// (0 = the whole log).
    pub horizon: u64,
    pub seeds: Vec<u64>,
    /// Candidates per round.
    pub candidates: usize,
    /// Share of the horizon (synthetic) or of the log (replay) used for tuning.
    pub tuning_fraction: f64,
    pub tune: bool,
    pub grid: BTreeMap<String, Vec<f64>>,
    pub out: Option<PathBuf>,
    pub world: WorldParams,
    pub log: Option<LogConfig>,
}

/// Grids used for parameters the config does not list.
pub fn default_grid() -> BTreeMap<String, Vec<f64>> {
    let ab = vec![0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    BTreeMap::from([
        ("alpha".to_string(), ab.clone()),
        ("alpha2".to_string(), ab),
        ("k".to_string(), vec![2.0, 4.0, 8.0, 16.0]),
        ("zeta".to_string(), vec![0.5, 1.0, 2.0]),
    ])
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            policies: Vec::new(),
            horizon: 20_000,
            seeds: vec![1],
            candidates: 10,
            tuning_fraction: 0.2,
            tune: true,
            grid: default_grid(),
            out: None,
            world: WorldParams::new(50, 20, 3, 4, 0.5, 0.1, 1),
            log: None,
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("[{section}] {key}: cannot parse {v:?}")))
}

fn number_list(section: &str, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split([',', ' ', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| parse_param_value(s).map_err(|_| HarnessError::Config(format!("[{section}] {key}: bad number {s:?}"))))
        .collect()
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

impl ExperimentConfig {
    /// Reads a config file; a relative log path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(log) = &mut cfg.log {
            if log.path.is_relative() {
                if let Some(dir) = path.parent() {
                    log.path = dir.join(&log.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        let mut log: BTreeMap<String, String> = BTreeMap::new();
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("");
            for (key, v) in props.iter() {
                match (name, key) {
                    ("experiment", "mode") => cfg.mode = v.parse()?,
                    ("experiment", "policies") => {
                        cfg.policies = v
                            .split([';', ' ', '\t'])
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse().map_err(|e| HarnessError::Config(format!("policy {s:?}: {e}"))))
                            .collect::<Result<_>>()?
                    }
                    ("experiment", "horizon") => cfg.horizon = parse(name, key, v)?,
                    ("experiment", "seeds") => {
                        cfg.seeds = v
                            .split([',', ' ', '\t'])
                            .filter(|s| !s.is_empty())
                            .map(|s| parse(name, key, s))
                            .collect::<Result<_>>()?
                    }
                    ("experiment", "candidates") => cfg.candidates = parse(name, key, v)?,
                    ("experiment", "tuning_fraction") => cfg.tuning_fraction = parse(name, key, v)?,
                    ("experiment", "tune") => cfg.tune = parse(name, key, v)?,
                    ("experiment", "out") => cfg.out = Some(PathBuf::from(v.trim())),
                    ("world", "n") => cfg.world.n = parse(name, key, v)?,
                    ("world", "d") => cfg.world.d = parse(name, key, v)?,
                    ("world", "g") => cfg.world.g = parse(name, key, v)?,
                    ("world", "m") => cfg.world.m = parse(name, key, v)?,
                    ("world", "gamma") => cfg.world.gamma = parse(name, key, v)?,
                    ("world", "sigma") => cfg.world.noise_sigma = parse(name, key, v)?,
                    ("world", "balance") => {
                        cfg.world.balance = v.parse::<ClusterBalance>().map_err(|e| HarnessError::Config(e.to_string()))?
                    }
                    ("world", "seed") => cfg.world.seed = parse(name, key, v)?,
                    ("log", "path" | "format" | "tuning_prefix" | "synthesize" | "candidate_seed") => {
                        log.insert(key.to_string(), v.to_string());
                    }
                    ("grid", param) => {
                        cfg.grid.insert(param.to_string(), number_list(name, key, v)?);
                    }
                    _ => return config(format!("unknown key {key:?} in section [{name}]")),
                }
            }
        }
        if !log.is_empty() {
            let get = |k: &str| log.get(k).map(String::as_str);
            cfg.log = Some(LogConfig {
                path: PathBuf::from(get("path").ok_or_else(|| HarnessError::Config("[log] needs a path".into()))?.trim()),
                format: get("format")
                    .unwrap_or("generic_csv")
                    .parse()
                    .map_err(|e: cofiba_core::Error| HarnessError::Config(e.to_string()))?,
                tuning_prefix: get("tuning_prefix").map(|v| parse("log", "tuning_prefix", v)).transpose()?,
                synthesize: get("synthesize").unwrap_or("auto").parse()?,
                candidate_seed: get("candidate_seed").map_or(Ok(0), |v| parse("log", "candidate_seed", v))?,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return config("at least one policy is required");
        }
        if self.seeds.is_empty() {
            return config("at least one seed is required");
        }
        if self.candidates < 1 {
            return config("candidates must be at least 1");
        }
        if !(self.tuning_fraction > 0.0 && self.tuning_fraction < 1.0) {
            return config(format!("tuning_fraction {} must lie in (0, 1)", self.tuning_fraction));
        }
        for (param, values) in &self.grid {
            if values.is_empty() {
                return config(format!("grid for {param} is empty"));
            }
            if values.iter().any(|v| v.is_nan() || *v < 0.0) {
                return config(format!("grid for {param} has negative values"));
            }
        }
        match self.mode {
            Mode::Synthetic => {
                if self.horizon == 0 {
                    return config("horizon must be positive");
                }
                self.world.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if self.candidates > self.world.d {
                    return config(format!("{} candidates but only {} items", self.candidates, self.world.d));
                }
            }
            Mode::Replay => {
                if self.log.is_none() {
                    return config("replay mode needs a [log] section");
                }
            }
        }
        Ok(())
    }

    /// Grid values for `param`.
    pub fn grid_for(&self, param: &str) -> &[f64] {
        self.grid.get(param).map_or(&[], Vec::as_slice)
    }

    /// The resolved configuration in the same file format.
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("experiment"))
            .set("mode", self.mode.to_string())
            .set("policies", join(&self.policies, " "))
            .set("horizon", self.horizon.to_string())
            .set("seeds", join(&self.seeds, " "))
            .set("candidates", self.candidates.to_string())
            .set("tuning_fraction", self.tuning_fraction.to_string())
            .set("tune", self.tune.to_string());
        if let Some(out) = &self.out {
            ini.with_section(Some("experiment")).set("out", out.display().to_string());
        }
        if self.mode == Mode::Synthetic {
            let w = &self.world;
            ini.with_section(Some("world"))
                .set("n", w.n.to_string())
                .set("d", w.d.to_string())
                .set("g", w.g.to_string())
                .set("m", w.m.to_string())
                .set("gamma", w.gamma.to_string())
                .set("sigma", w.noise_sigma.to_string())
                .set("balance", w.balance.to_string())
                .set("seed", w.seed.to_string());
        }
        if let Some(log) = &self.log {
            let mut s = ini.with_section(Some("log"));
            s.set("path", log.path.display().to_string())
                .set("format", log.format.to_string())
                .set("synthesize", log.synthesize.to_string())
                .set("candidate_seed", log.candidate_seed.to_string());
            if let Some(p) = log.tuning_prefix {
                s.set("tuning_prefix", p.to_string());
            }
        }
        for (param, values) in &self.grid {
            ini.with_section(Some("grid")).set(param.as_str(), join(values, " "));
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "[experiment]\nmode = synthetic\npolicies = linucb_one cofiba:alpha=0.2;club\n\
                          horizon = 500\nseeds = 1, 2 3\n\n[world]\nn = 20\nd = 12\nsigma = 0\n\n[grid]\nalpha = 0 0.5\n";

    #[test]
    fn parse_sample() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.policies.len(), 3);
        assert_eq!(c.policies[1].param("alpha"), 0.2);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.world.n, 20);
        assert_eq!(c.world.noise_sigma, 0.0);
        assert_eq!(c.grid_for("alpha"), &[0.0, 0.5]);
        assert_eq!(c.grid_for("k"), &[2.0, 4.0, 8.0, 16.0]);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        let again = ExperimentConfig::parse(&c.to_ini_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn config_errors() {
        let bad = [
            "[experiment]\npolicies = linucb_one\nseeds =\n",
            "[experiment]\npolicies =\n",
            "[experiment]\npolicies = nope\n",
            "[experiment]\npolicies = linucb_one\nhorizn = 5\n",
            "[experiment]\npolicies = linucb_one\n[grid]\nalpha =\n",
            "[experiment]\npolicies = linucb_one\n[grid]\nalpha = -1\n",
            "[experiment]\npolicies = linucb_one\nmode = replay\n",
            "[experiment]\npolicies = linucb_one\ncandidates = 30\n",
        ];
        for text in bad {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }
}

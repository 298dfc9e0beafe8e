//! Run configuration: one TOML document, optionally layered over a preset.
//!
//! Every error names the offending key and, when the key comes from the user
//! file, its line.

use std::path::{Path, PathBuf};

use imsm::dynamics::{SimConfig, SystemSpec};
use imsm::evaluation::EvalConfig;
use imsm::score::ScoreTrainConfig;
use imsm::velocity::VelocityTrainConfig;
use imsm::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub const PRESETS: [(&str, &str); 4] = [
    ("vanderpol", include_str!("presets/vanderpol.toml")),
    ("swimmer", include_str!("presets/swimmer.toml")),
    ("lorenz63", include_str!("presets/lorenz63.toml")),
    ("lorenz96", include_str!("presets/lorenz96.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "unknown preset `{name}`; available: {}",
                names.join(", ")
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityBlock {
    /// `true` marks a drift component supplied analytically by the system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_mask: Option<Vec<bool>>,
    #[serde(flatten)]
    pub train: VelocityTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_samples: usize,
    #[serde(default = "default_steps_per_level")]
    pub steps_per_level: usize,
    /// Base Langevin step; derived from the data scale when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    pub seed: u64,
}

fn default_steps_per_level() -> usize {
    imsm::score::DEFAULT_LANGEVIN_STEPS
}

/// Artifact locations, relative to `--out` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset file; `.csv` selects the text format.
    pub dataset: String,
    pub checkpoints: String,
    pub logs: String,
    pub reports: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "data/dataset.bin".into(),
            checkpoints: "checkpoints".into(),
            logs: "logs".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreTrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<VelocityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
}

/// A validated configuration plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub source: PathBuf,
    pub preset: Option<String>,
}

/// Resolved artifact paths.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dataset: PathBuf,
    pub score: PathBuf,
    pub velocity: PathBuf,
    pub velocity_pinn: PathBuf,
    pub score_log: PathBuf,
    pub velocity_log: PathBuf,
    pub velocity_pinn_log: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(paths: &PathsConfig, out: &Path) -> Self {
        let at = |p: &str| out.join(p);
        let ck = at(&paths.checkpoints);
        let logs = at(&paths.logs);
        Self {
            dataset: at(&paths.dataset),
            score: ck.join("score.json"),
            velocity: ck.join("velocity.json"),
            velocity_pinn: ck.join("velocity_pinn.json"),
            score_log: logs.join("score_loss.csv"),
            velocity_log: logs.join("velocity_train.csv"),
            velocity_pinn_log: logs.join("velocity_pinn.csv"),
            reports: at(&paths.reports),
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let Some(s) = &mut self.score {
            s.seed = seed;
        }
        if let Some(v) = &mut self.velocity {
            v.train.seed = seed;
        }
        if let Some(e) = &mut self.eval {
            e.sim.seed = seed;
        }
        if let Some(s) = &mut self.sampling {
            s.seed = seed;
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn score(&self) -> Result<&ScoreTrainConfig> {
        self.score.as_ref().ok_or_else(|| missing_block("score"))
    }

    pub fn velocity(&self) -> Result<&VelocityBlock> {
        self.velocity
            .as_ref()
            .ok_or_else(|| missing_block("velocity"))
    }

    pub fn eval(&self) -> Result<&EvalConfig> {
        self.eval.as_ref().ok_or_else(|| missing_block("eval"))
    }

    pub fn sampling(&self) -> Result<&SamplingConfig> {
        self.sampling
            .as_ref()
            .ok_or_else(|| missing_block("sampling"))
    }

    /// Known-component mask, all-unknown when absent.
    pub fn known_mask(&self) -> Vec<bool> {
        self.velocity
            .as_ref()
            .and_then(|v| v.known_mask.clone())
            .unwrap_or_else(|| vec![false; self.system.dim()])
    }

    /// Semantic checks; the error carries the dotted key path.
    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let block = |path: &str, r: Result<()>| r.map_err(|e| (path.to_string(), strip(e)));
        block("system", self.system.validate())?;
        block("sim", self.sim.validate())?;
        if let Some(s) = &self.score {
            block("score", s.validate())?;
        }
        if let Some(v) = &self.velocity {
            block("velocity", v.train.validate())?;
            if let Some(mask) = &v.known_mask {
                if mask.len() != self.system.dim() {
                    return Err((
                        "velocity.known_mask".into(),
                        format!(
                            "has {} entries but the system has dimension {}",
                            mask.len(),
                            self.system.dim()
                        ),
                    ));
                }
                if mask.iter().all(|&m| m) {
                    return Err((
                        "velocity.known_mask".into(),
                        "at least one component must be learned".into(),
                    ));
                }
            }
        }
        if let Some(e) = &self.eval {
            block("eval.sim", e.sim.validate())?;
            if e.projections.is_empty() {
                return Err((
                    "eval.projections".into(),
                    "needs at least one projection".into(),
                ));
            }
            let d = self.system.dim();
            if let Some(p) = e
                .projections
                .iter()
                .find(|p| p[0] >= d || p[1] >= d || p[0] == p[1])
            {
                return Err((
                    "eval.projections".into(),
                    format!("{p:?} is not a pair of distinct axes below {d}"),
                ));
            }
            if e.n_eval == 0 {
                return Err(("eval.n_eval".into(), "must be >= 1".into()));
            }
        }
        if let Some(s) = &self.sampling {
            if s.n_samples == 0 {
                return Err(("sampling.n_samples".into(), "must be >= 1".into()));
            }
            if s.eps0.is_some_and(|e| !(e > 0.0)) {
                return Err(("sampling.eps0".into(), "must be > 0".into()));
            }
        }
        Ok(())
    }
}

fn missing_block(name: &str) -> Error {
    Error::Config(format!("the configuration has no [{name}] block"))
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Usage(m) => m,
        other => other.to_string(),
    }
}

/// Parses `text` (read from `source`), layers it over `preset`, applies the
/// seed override and validates.
pub fn load_str(
    text: &str,
    source: &Path,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<LoadedConfig> {
    let user: Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", source.display(), e)))?;
    let mut merged = match preset {
        Some(name) => toml::from_str::<Table>(preset_text(name)?).expect("presets parse"),
        None => Table::new(),
    };
    merge(&mut merged, user);

    let locate = |path: &str, msg: &str| -> Error {
        match find_key_line(text, path) {
            Some(line) => Error::Config(format!("{}:{line}: `{path}`: {msg}", source.display())),
            None => match preset {
                Some(p) if !path.is_empty() => {
                    Error::Config(format!("preset {p}: `{path}`: {msg}"))
                }
                _ if path.is_empty() => Error::Config(format!("{}: {msg}", source.display())),
                _ => Error::Config(format!("{}: `{path}`: {msg}", source.display())),
            },
        }
    };

    let canon = toml::to_string(&merged).expect("table serializes");
    let mut run: RunConfig = match toml::from_str(&canon) {
        Ok(r) => r,
        Err(e) => {
            let mut path = e
                .span()
                .map(|s| path_at(&canon, s.start))
                .unwrap_or_default();
            let mut msg = e.message().trim().to_string();
            if path == "velocity" {
                if let Some((p, m)) = velocity_error(&merged) {
                    (path, msg) = (p, m);
                }
            }
            return Err(locate(&path, &msg));
        }
    };
    let echoed = Value::try_from(&run).expect("config serializes");
    if let Some(path) = unknown_key(&Value::Table(merged), &echoed, "") {
        return Err(locate(&path, "unknown key"));
    }
    if let Some(s) = seed {
        run.override_seed(s);
    }
    run.validate().map_err(|(path, msg)| locate(&path, &msg))?;
    Ok(LoadedConfig {
        run,
        source: source.to_path_buf(),
        preset: preset.map(str::to_string),
    })
}

/// Errors inside the flattened training block carry no key; deserializing
/// the block on its own recovers it.
fn velocity_error(merged: &Table) -> Option<(String, String)> {
    let mut block = merged.get("velocity")?.as_table()?.clone();
    block.remove("known_mask");
    let text = toml::to_string(&block).ok()?;
    let e = toml::from_str::<VelocityTrainConfig>(&text).err()?;
    let key = path_at(&text, e.span()?.start);
    Some((join("velocity", &key), e.message().trim().to_string()))
}

pub fn load(path: &Path, preset: Option<&str>, seed: Option<u64>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    load_str(&text, path, preset, seed)
}

/// Deep merge; scalars and arrays in `top` replace those in `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// First key present in `input` but absent from the re-serialized config.
fn unknown_key(input: &Value, echoed: &Value, prefix: &str) -> Option<String> {
    let (Value::Table(i), Value::Table(e)) = (input, echoed) else {
        return None;
    };
    for (k, v) in i {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match e.get(k) {
            None => return Some(path),
            Some(ev) => {
                if let Some(p) = unknown_key(v, ev, &path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

fn header_of(line: &str) -> Option<String> {
    let t = line.trim();
    let inner = t
        .strip_prefix("[[")
        .and_then(|s| s.strip_suffix("]]"))
        .or_else(|| t.strip_prefix('[').and_then(|s| s.split(']').next()))?;
    Some(
        inner
            .split('.')
            .map(|p| p.trim().trim_matches('"'))
            .collect::<Vec<_>>()
            .join("."),
    )
}

fn key_of(line: &str) -> Option<String> {
    let t = line.trim();
    if t.starts_with('#') || t.starts_with('[') {
        return None;
    }
    let (k, _) = t.split_once('=')?;
    Some(
        k.split('.')
            .map(|p| p.trim().trim_matches('"'))
            .collect::<Vec<_>>()
            .join("."),
    )
}

fn join(a: &str, b: &str) -> String {
    if a.is_empty() {
        b.to_string()
    } else {
        format!("{a}.{b}")
    }
}

/// Dotted key path of the entry whose text contains byte `offset`.
fn path_at(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let end = pos + line.len();
        if let Some(h) = header_of(line) {
            table = h;
            if offset < end {
                return table;
            }
        } else if offset < end {
            return key_of(line).map(|k| join(&table, &k)).unwrap_or(table);
        }
        pos = end;
    }
    table
}

/// 1-based line of `path` in `text`: the key itself, else the nearest
/// enclosing table header.
pub fn find_key_line(text: &str, path: &str) -> Option<usize> {
    if path.is_empty() {
        return None;
    }
    let mut table = String::new();
    let mut best: Option<(usize, usize)> = None;
    for (i, line) in text.lines().enumerate() {
        let (full, is_header) = match header_of(line) {
            Some(h) => {
                table = h.clone();
                (h, true)
            }
            None => match key_of(line) {
                Some(k) => (join(&table, &k), false),
                None => continue,
            },
        };
        if full == path {
            return Some(i + 1);
        }
        if is_header && path.starts_with(&format!("{full}.")) {
            let depth = full.len();
            if best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, i + 1));
            }
        }
    }
    best.map(|(_, l)| l)
}

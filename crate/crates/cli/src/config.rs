//! Run configuration: a JSON file, optionally split into per-subcommand
//! sections, with command-line flags layered on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use trpca_core::datagen::SparsityModel;
use trpca_core::tensor::RankTriple;

use crate::CliError;

pub const SUBCOMMANDS: [&str; 8] = [
    "datagen",
    "solve",
    "train",
    "finetune",
    "tune-baseline",
    "phase-grid",
    "sensitivity",
    "convert",
];

/// Loads the config object for `section`. A file that has a key named after
/// any subcommand is treated as sectioned and only `section` is used.
pub fn load_section(file: Option<&Path>, section: &str) -> Result<Map<String, Value>, CliError> {
    let Some(path) = file else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    };
    if !map.keys().any(|k| SUBCOMMANDS.contains(&k.as_str())) {
        return Ok(map);
    }
    match map.remove(section) {
        Some(Value::Object(sub)) => Ok(sub),
        Some(_) => Err(CliError::Config(format!("section \"{section}\" must be an object"))),
        None => Ok(Map::new()),
    }
}

/// Overlays every non-null field of `flags` onto `base`. Flags win.
pub fn overlay(mut base: Map<String, Value>, flags: &impl Serialize) -> Result<Map<String, Value>, CliError> {
    let Value::Object(f) = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? else {
        unreachable!("flag structs serialize to objects");
    };
    for (k, v) in f {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    Ok(base)
}

/// Layers file values and then flags over `C::default()`. Keys the default
/// does not serialize are rejected, which also covers flattened sections.
pub fn resolve<C>(file: Option<&Path>, section: &str, flags: &impl Serialize) -> Result<C, CliError>
where
    C: Default + Serialize + DeserializeOwned,
{
    let Value::Object(mut map) = serde_json::to_value(C::default()).map_err(|e| CliError::Config(e.to_string()))? else {
        unreachable!("config structs serialize to objects");
    };
    let given = overlay(load_section(file, section)?, flags)?;
    if let Some(k) = given.keys().find(|k| !map.contains_key(*k)) {
        return Err(CliError::Config(format!("unknown config key \"{k}\" for {section}")));
    }
    map.extend(given);
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

/// `3` or `[3, 4, 5]` in JSON, `3` or `3,4,5` on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    Uniform(usize),
    Triple([usize; 3]),
}

impl RankSpec {
    pub fn triple(self) -> RankTriple {
        match self {
            RankSpec::Uniform(r) => RankTriple::uniform(r),
            RankSpec::Triple([a, b, c]) => RankTriple(a, b, c),
        }
    }
}

pub fn parse_rank(s: &str) -> Result<RankSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad rank \"{p}\": {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [r] => Ok(RankSpec::Uniform(*r)),
        [a, b, c] => Ok(RankSpec::Triple([*a, *b, *c])),
        _ => Err("rank takes one value or three comma-separated values".into()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Entrywise,
    PerFiber,
}

/// Synthetic instance family shared by datagen, train and sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub n: usize,
    pub r: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub model: ModelKind,
    /// Mode whose fibers get exactly `floor(alpha n)` corruptions (per-fiber model).
    pub fiber_mode: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            n: 30,
            r: 3,
            alpha: 0.2,
            kappa: 5.0,
            model: ModelKind::Entrywise,
            fiber_mode: 1,
        }
    }
}

impl FamilyConfig {
    pub fn sparsity(&self) -> SparsityModel {
        match self.model {
            ModelKind::Entrywise => SparsityModel::EntrywiseBernoulli(self.alpha),
            ModelKind::PerFiber => SparsityModel::PerFiberExact {
                alpha: self.alpha,
                mode: self.fiber_mode,
            },
        }
    }

    pub fn family(&self) -> trpca_core::datagen::InstanceFamily {
        trpca_core::datagen::InstanceFamily {
            model: self.sparsity(),
            ..trpca_core::datagen::InstanceFamily::new(self.n, self.r, self.alpha, self.kappa)
        }
    }
}

/// Where a subcommand reads its instance from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    /// A `datagen` output directory or a single `TNS3` observation.
    pub input: Option<PathBuf>,
    pub xstar: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub rank: Option<RankSpec>,
}

pub fn write_resolved(out: &Path, resolved: &impl Serialize) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(resolved).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(out.join("resolved_config.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Serialize)]
    struct Flags {
        n: Option<usize>,
        alpha: Option<f64>,
    }

    #[test]
    fn flags_override_file_values() {
        let base = json!({"n": 10, "alpha": 0.1}).as_object().unwrap().clone();
        let merged = overlay(base, &Flags { n: Some(20), alpha: None }).unwrap();
        assert_eq!(merged["n"], json!(20));
        assert_eq!(merged["alpha"], json!(0.1));
    }

    #[test]
    fn sectioned_files_pick_their_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"datagen": {"n": 12}, "solve": {"iterations": 5}}"#).unwrap();
        let m = load_section(Some(&path), "datagen").unwrap();
        assert_eq!(m["n"], json!(12));
        assert!(load_section(Some(&path), "train").unwrap().is_empty());
        fs::write(&path, r#"{"n": 12}"#).unwrap();
        assert_eq!(load_section(Some(&path), "train").unwrap()["n"], json!(12));
    }

    #[test]
    fn rank_forms() {
        assert_eq!(parse_rank("3").unwrap(), RankSpec::Uniform(3));
        assert_eq!(parse_rank("3,4,5").unwrap().triple(), RankTriple(3, 4, 5));
        assert!(parse_rank("3,4").is_err());
        let r: RankSpec = serde_json::from_str("[2, 2, 3]").unwrap();
        assert_eq!(r.triple(), RankTriple(2, 2, 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"n": 10, "alhpa": 0.1}"#).unwrap();
        let none = Flags { n: None, alpha: None };
        let err = resolve::<FamilyConfig>(Some(&path), "datagen", &none).unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("alhpa")));
        fs::write(&path, r#"{"n": 10}"#).unwrap();
        let fam: FamilyConfig = resolve(Some(&path), "datagen", &Flags { n: None, alpha: Some(0.3) }).unwrap();
        assert_eq!((fam.n, fam.alpha, fam.r), (10, 0.3, 3));
    }
}

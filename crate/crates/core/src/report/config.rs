use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::{SplitPlan, TargetDistribution};
use crate::degrade::{DegradationFactor, FactorKind};
use crate::error::{Error, Result};
use crate::ident::{BuiltinEmbedder, EmbeddingProvider, FileEmbeddings, TallyMode};
use crate::metrics::Subgroup;

/// Where embeddings come from: `builtin` or `embeddings-file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ProviderSpec {
    #[default]
    Builtin,
    EmbeddingsFile(PathBuf),
}

impl ProviderSpec {
    /// Opens the provider. A file provider reads and validates its whole file here.
    pub fn open(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            ProviderSpec::Builtin => Ok(Box::new(BuiltinEmbedder)),
            ProviderSpec::EmbeddingsFile(path) => Ok(Box::new(FileEmbeddings::open(path)?)),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Builtin => f.write_str("builtin"),
            ProviderSpec::EmbeddingsFile(p) => write!(f, "embeddings-file:{}", p.display()),
        }
    }
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            return Ok(ProviderSpec::Builtin);
        }
        match s.strip_prefix("embeddings-file:") {
            Some(path) if !path.is_empty() => Ok(ProviderSpec::EmbeddingsFile(PathBuf::from(path))),
            _ => Err(Error::usage(format!(
                "unknown provider '{s}' (use builtin or embeddings-file:PATH)"
            ))),
        }
    }
}

impl Serialize for ProviderSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProviderSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_sweeps() -> BTreeMap<FactorKind, Vec<f64>> {
    FactorKind::ALL.into_iter().map(|k| (k, k.default_sweep())).collect()
}

/// Everything a run depends on. Stored as one JSON document; missing keys take
/// their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub plan: SplitPlan,
    /// Cosine-distance match threshold, inclusive.
    pub threshold: f64,
    /// Raw levels per factor. Factors left out are not run.
    pub sweeps: BTreeMap<FactorKind, Vec<f64>>,
    pub provider: ProviderSpec,
    pub subgroups: Vec<Subgroup>,
    pub plots: bool,
    pub tally: TallyMode,
    pub target: TargetDistribution,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub confidence: f64,
    /// Shift pose curves so their level-0 point sits on the undegraded baseline.
    pub align_pose: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("manifest.csv"),
            out: PathBuf::from("out"),
            plan: SplitPlan::default(),
            threshold: 0.68,
            sweeps: default_sweeps(),
            provider: ProviderSpec::Builtin,
            subgroups: Subgroup::standard_set(),
            plots: false,
            tally: TallyMode::PerComparison,
            target: TargetDistribution::default(),
            threads: 0,
            confidence: 0.95,
            align_pose: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::usage(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.target.validate()?;
        if self.plan.replications < 2 {
            return Err(Error::usage(
                "at least 2 replications are needed for confidence intervals",
            ));
        }
        if !self.threshold.is_finite() {
            return Err(Error::usage(format!("threshold must be finite, got {}", self.threshold)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::usage(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.sweeps.is_empty() {
            return Err(Error::usage("no factor sweeps configured"));
        }
        for (kind, levels) in &self.sweeps {
            let mut seen = Vec::new();
            for &raw in levels {
                DegradationFactor::new(*kind, raw)?;
                if seen.contains(&raw) {
                    return Err(Error::usage(format!("{kind} sweep lists {raw} twice")));
                }
                seen.push(raw);
            }
            if !seen.contains(&kind.baseline()) {
                return Err(Error::usage(format!(
                    "{kind} sweep must include its baseline level {}",
                    kind.baseline()
                )));
            }
        }
        if self.subgroups.is_empty() {
            return Err(Error::usage("no subgroups to report"));
        }
        let unique: BTreeSet<_> = self.subgroups.iter().collect();
        if unique.len() != self.subgroups.len() {
            return Err(Error::usage("subgroups contain duplicates"));
        }
        Ok(())
    }

    /// Configured levels in run order: factors in their fixed order, levels as listed.
    pub fn levels(&self) -> Result<Vec<DegradationFactor>> {
        let mut out = Vec::new();
        for (kind, levels) in &self.sweeps {
            for &raw in levels {
                out.push(DegradationFactor::new(*kind, raw)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"manifest": "m.csv", "plan": {"replications": 8}, "provider": "embeddings-file:e.emb",
                "sweeps": {"motion_blur": [0, 100]}, "subgroups": ["all", "Black/Female"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.plan.replications, 8);
        assert_eq!(cfg.plan.gallery_size, 167);
        assert_eq!(cfg.threshold, 0.68);
        assert_eq!(cfg.provider, ProviderSpec::EmbeddingsFile("e.emb".into()));
        assert_eq!(cfg.levels().unwrap().len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"treshold": 0.5}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"provider": "deepface"}"#).is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sweeps.insert(FactorKind::MotionBlur, vec![20.0, 40.0]);
        assert!(cfg.validate().is_err(), "sweep without baseline");

        let mut cfg = ExperimentConfig::default();
        cfg.sweeps.insert(FactorKind::Contrast, vec![1.0, 5.0]);
        assert!(cfg.validate().is_err(), "out-of-range level");

        let mut cfg = ExperimentConfig::default();
        cfg.plan.replications = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.subgroups = vec![Subgroup::All, Subgroup::All];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn provider_strings() {
        assert_eq!("builtin".parse::<ProviderSpec>().unwrap(), ProviderSpec::Builtin);
        let p: ProviderSpec = "embeddings-file:/tmp/x.emb".parse().unwrap();
        assert_eq!(p.to_string(), "embeddings-file:/tmp/x.emb");
        assert!("embeddings-file:".parse::<ProviderSpec>().is_err());
    }
}

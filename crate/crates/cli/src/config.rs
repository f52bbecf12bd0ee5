//! Plain `key=value` experiment configs with a strict schema.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! be `key=value` with a known key, and each key may appear once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsn_core::data::{Scenario, ScenarioSpec};
use dsn_core::losses::{LossWeights, ReconKind};
use dsn_core::model::{ModelVariant, Similarity};
use dsn_core::trainer::{DecayRule, TrainConfig};
use dsn_core::{Error, Result};
use sha2::{Digest, Sha256};

/// Keys every config must set.
pub const REQUIRED: [&str; 3] = ["scenario", "variant", "seed"];

/// Keys with defaults.
pub const OPTIONAL: [&str; 21] = [
    "similarity",
    "tag",
    "steps",
    "batch_size",
    "log_interval",
    "eval_interval",
    "lr",
    "momentum",
    "decay_factor",
    "decay_interval",
    "alpha",
    "beta",
    "gamma",
    "xi",
    "warmup_steps",
    "recon",
    "precision",
    "train_size",
    "eval_size",
    "texture_ceiling",
    "output_dir",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub variant: ModelVariant,
    /// Only meaningful for `dsn`; other variants fix their own.
    pub similarity: Similarity,
    /// Free-form label separating ablations of the same variant in tables.
    pub tag: String,
    pub train: TrainConfig,
    pub recon: ReconKind,
    pub precision: Precision,
    pub train_size: usize,
    pub eval_size: usize,
    pub texture_ceiling: f64,
    pub output_dir: PathBuf,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn recon_name(kind: ReconKind) -> &'static str {
    match kind {
        ReconKind::ScaleInvariant => "si_mse",
        ReconKind::Plain => "mse",
    }
}

/// Splits a config document into its key/value pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(config_error(line, format!("line {}: expected key=value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if !REQUIRED.contains(&k) && !OPTIONAL.contains(&k) {
            return Err(config_error(k, "unknown key"));
        }
        if pairs.insert(k.to_string(), v.to_string()).is_some() {
            return Err(config_error(k, "given more than once"));
        }
    }
    Ok(pairs)
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn required<V: FromStr>(&mut self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self
            .0
            .remove(key)
            .ok_or_else(|| config_error(key, "required key is missing"))?;
        raw.parse()
            .map_err(|e| config_error(key, format!("invalid value `{raw}`: {e}")))
    }

    fn optional<V: FromStr>(&mut self, key: &str, default: V) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        if self.0.contains_key(key) {
            self.required(key)
        } else {
            Ok(default)
        }
    }
}

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn new(scenario: Scenario, variant: ModelVariant, similarity: Similarity, seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            variant,
            similarity: variant.effective_similarity(similarity),
            tag: String::new(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            recon: ReconKind::ScaleInvariant,
            precision: Precision::F64,
            train_size: 5000,
            eval_size: 1000,
            texture_ceiling: 0.7,
            output_dir: PathBuf::from("runs"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut f = Fields(parse_pairs(text)?);
        let scenario: Scenario = f.required("scenario")?;
        let variant: ModelVariant = f.required("variant")?;
        let seed: u64 = f.required("seed")?;
        let similarity = if variant == ModelVariant::Dsn {
            let s: Similarity = f.required("similarity")?;
            if s == Similarity::None {
                return Err(config_error("similarity", "dsn needs one of dann, mmd, correg"));
            }
            s
        } else if f.0.contains_key("similarity") {
            return Err(config_error(
                "similarity",
                format!("only valid with variant=dsn, not {variant}"),
            ));
        } else {
            variant.effective_similarity(Similarity::None)
        };
        let base = ExperimentConfig::new(scenario, variant, similarity, seed);
        let d = &base.train;
        let train = TrainConfig {
            steps: f.optional("steps", d.steps)?,
            batch_size: f.optional("batch_size", d.batch_size)?,
            log_interval: f.optional("log_interval", d.log_interval)?,
            eval_interval: f.optional("eval_interval", d.eval_interval)?,
            lr: f.optional("lr", d.lr)?,
            momentum: f.optional("momentum", d.momentum)?,
            decay: DecayRule {
                factor: f.optional("decay_factor", d.decay.factor)?,
                interval: f.optional("decay_interval", d.decay.interval)?,
            },
            weights: LossWeights {
                alpha: f.optional("alpha", d.weights.alpha)?,
                beta: f.optional("beta", d.weights.beta)?,
                gamma: f.optional("gamma", d.weights.gamma)?,
                xi: f.optional("xi", d.weights.xi)?,
                warmup_steps: f.optional("warmup_steps", d.weights.warmup_steps)?,
            },
            seed,
        };
        train.validate()?;
        let recon = match f.optional("recon", "si_mse".to_string())?.as_str() {
            "si_mse" => ReconKind::ScaleInvariant,
            "mse" => ReconKind::Plain,
            other => return Err(config_error("recon", format!("expected si_mse or mse, got `{other}`"))),
        };
        let precision = match f.optional("precision", "f64".to_string())?.as_str() {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            other => return Err(config_error("precision", format!("expected f32 or f64, got `{other}`"))),
        };
        let cfg = ExperimentConfig {
            tag: f.optional("tag", String::new())?,
            train,
            recon,
            precision,
            train_size: f.optional("train_size", base.train_size)?,
            eval_size: f.optional("eval_size", base.eval_size)?,
            texture_ceiling: f.optional("texture_ceiling", base.texture_ceiling)?,
            output_dir: f.optional("output_dir", base.output_dir.clone())?,
            ..base
        };
        debug_assert!(f.0.is_empty(), "unconsumed keys {:?}", f.0.keys());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train_size == 0 {
            return Err(config_error("train_size", "must be positive"));
        }
        if self.eval_size == 0 {
            return Err(config_error("eval_size", "must be positive"));
        }
        if !(self.texture_ceiling > 0.0 && self.texture_ceiling <= 1.0) {
            return Err(config_error("texture_ceiling", "must lie in (0, 1]"));
        }
        if self.tag.contains([',', '\n']) {
            return Err(config_error("tag", "must not contain commas"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(self.scenario, self.train_size, self.eval_size, self.seed());
        spec.noise.texture_ceiling = self.texture_ceiling;
        spec
    }

    /// Every setting that affects results, one sorted `key=value` per line.
    /// `output_dir` is excluded: moving a run does not change it.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let w = &t.weights;
        let mut pairs: Vec<(&str, String)> = vec![
            ("scenario", self.scenario.to_string()),
            ("variant", self.variant.to_string()),
            ("seed", t.seed.to_string()),
            ("tag", self.tag.clone()),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("log_interval", t.log_interval.to_string()),
            ("eval_interval", t.eval_interval.to_string()),
            ("lr", t.lr.to_string()),
            ("momentum", t.momentum.to_string()),
            ("decay_factor", t.decay.factor.to_string()),
            ("decay_interval", t.decay.interval.to_string()),
            ("alpha", w.alpha.to_string()),
            ("beta", w.beta.to_string()),
            ("gamma", w.gamma.to_string()),
            ("xi", w.xi.to_string()),
            ("warmup_steps", w.warmup_steps.to_string()),
            ("recon", recon_name(self.recon).to_string()),
            ("precision", self.precision.name().to_string()),
            ("train_size", self.train_size.to_string()),
            ("eval_size", self.eval_size.to_string()),
            ("texture_ceiling", self.texture_ceiling.to_string()),
        ];
        if self.variant == ModelVariant::Dsn {
            pairs.push(("similarity", self.similarity.to_string()));
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }

    /// Row label used in result tables, e.g. `dsn+dann` or `dsn+dann [beta0]`.
    pub fn label(&self) -> String {
        let mut s = self.variant.to_string();
        if self.variant == ModelVariant::Dsn {
            s = format!("{s}+{}", self.similarity);
        }
        if !self.tag.is_empty() {
            s = format!("{s} [{}]", self.tag);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "scenario=glyph16\nvariant=dsn\nsimilarity=dann\nseed=3\n";

    #[test]
    fn defaults_fill_optional_keys() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.train.steps, 2000);
        assert_eq!(c.train.weights, LossWeights::default());
        assert_eq!(c.seed(), 3);
        assert_eq!(c.recon, ReconKind::ScaleInvariant);
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let text = "# grid\n scenario = glyph16\n\nvariant=dsn\nsimilarity= dann\nseed =3\n";
        assert_eq!(ExperimentConfig::parse(text).unwrap(), ExperimentConfig::parse(BASE).unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse(&format!("{BASE}learning_rate=0.1\n")).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "learning_rate"), "{err}");
    }

    #[test]
    fn each_required_key_is_named_when_missing() {
        for key in REQUIRED {
            let text: String = BASE.lines().filter(|l| !l.starts_with(key)).map(|l| format!("{l}\n")).collect();
            let err = ExperimentConfig::parse(&text).unwrap_err();
            assert!(matches!(err, Error::Config { key: ref k, .. } if k == key), "{err}");
        }
    }

    #[test]
    fn dsn_needs_similarity_and_others_reject_it() {
        let err = ExperimentConfig::parse("scenario=glyph16\nvariant=dsn\nseed=1\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "similarity"));
        let err = ExperimentConfig::parse("scenario=glyph16\nvariant=source_only\nsimilarity=mmd\nseed=1\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "similarity"));
    }

    #[test]
    fn duplicate_and_malformed_lines_fail() {
        assert!(ExperimentConfig::parse(&format!("{BASE}seed=4\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}steps\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}steps=ten\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}recon=l1\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}momentum=1.5\n")).is_err());
    }

    #[test]
    fn explicit_defaults_share_the_run_id() {
        let a = ExperimentConfig::parse(BASE).unwrap();
        let b = ExperimentConfig::parse(&format!("{BASE}gamma=0.25\nsteps=2000\n")).unwrap();
        assert_eq!(a.run_id(), b.run_id());
        let c = ExperimentConfig::parse(&format!("{BASE}gamma=0.3\n")).unwrap();
        assert_ne!(a.run_id(), c.run_id());
    }

    #[test]
    fn output_dir_does_not_change_the_run_id() {
        let a = ExperimentConfig::parse(BASE).unwrap();
        let b = ExperimentConfig::parse(&format!("{BASE}output_dir=/tmp/elsewhere\n")).unwrap();
        assert_eq!(a.run_id(), b.run_id());
        assert_eq!(a.run_id().len(), 16);
    }

    #[test]
    fn canonical_form_parses_back() {
        let a = ExperimentConfig::parse(&format!("{BASE}beta=0\ntag=beta0\nprecision=f32\n")).unwrap();
        let b = ExperimentConfig::parse(&a.canonical()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.label(), "dsn+dann [beta0]");
    }
}

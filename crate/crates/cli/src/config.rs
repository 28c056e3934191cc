//! Pipeline configuration: `[section]` headers with flat `key = value` pairs.
//!
//! Every key has a default, so an empty file is a complete configuration.
//! Values may be overridden by `DESKNMT_<SECTION>_<KEY>` environment
//! variables. Validation collects every problem before failing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use desknmt_core::lm::Weights;
use desknmt_core::model::ModelConfig;
use desknmt_core::subword::{Vocabulary, BOS_ID, EOS_ID, PAD_ID};
use desknmt_core::train::{ScheduleConfig, TrainConfig};
use desknmt_core::translate::{BeamConfig, HyperSpecConfig};
use thiserror::Error;
use toml::Value;

pub const ENV_PREFIX: &str = "DESKNMT_";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{key}: expected {expected}, found {found}")]
    Type {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("{key}: {reason}")]
    Range { key: String, reason: String },
    #[error("{key}: file not found: {}", path.display())]
    MissingFile { key: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataPaths {
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub valid_src: Option<PathBuf>,
    pub valid_tgt: Option<PathBuf>,
    /// Target-language monolingual text for back-translation.
    pub mono: Option<PathBuf>,
    pub test_src: Vec<PathBuf>,
    pub test_tgt: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperSpecTargets {
    Own,
    References,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub layers: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub case_embedding: usize,
    pub input_feed: bool,
    pub init_scale: f64,
    pub max_len: usize,
    pub merges: usize,
    pub vocab_size: usize,
    pub split_compounds: bool,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub decay: f64,
    pub threshold: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub decay_epochs: usize,
    pub synthetic_rounds: usize,
    pub selected_epochs: usize,
    pub chunk_size: usize,
    pub shard_size: usize,
    pub bt_beam: usize,
    pub quota_parallel: usize,
    pub quota_synthetic: usize,
    /// 0 means "as many sentences as the in-domain set".
    pub lm_sample: usize,
    pub lm_weights: [f64; 3],
    pub hs_lr: f64,
    pub hs_epochs: usize,
    pub hs_targets: HyperSpecTargets,
    pub hs_leave_one_out: bool,
    pub beam: usize,
    pub decode_max_len: usize,
    pub normalize: bool,
    pub lowercase_bleu: bool,
    pub seed: u64,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            layers: 4,
            hidden: 1000,
            embedding: 500,
            case_embedding: 8,
            input_feed: true,
            init_scale: 0.1,
            max_len: 80,
            merges: 30_000,
            vocab_size: 30_000,
            split_compounds: true,
            batch_size: 64,
            dropout: 0.3,
            lr: 1.0,
            decay: 0.7,
            threshold: 0.01,
            clip_norm: 5.0,
            max_epochs: 13,
            decay_epochs: 4,
            synthetic_rounds: 1,
            selected_epochs: 4,
            chunk_size: 8,
            shard_size: 4_500_000,
            bt_beam: 5,
            quota_parallel: 2_500_000,
            quota_synthetic: 2_500_000,
            lm_sample: 0,
            lm_weights: [0.5, 0.3, 0.2],
            hs_lr: 0.7,
            hs_epochs: 1,
            hs_targets: HyperSpecTargets::Own,
            hs_leave_one_out: false,
            beam: 5,
            decode_max_len: 80,
            normalize: true,
            lowercase_bleu: false,
            seed: 1,
            threads: 0,
            deterministic: false,
        }
    }
}

impl PipelineConfig {
    /// Network shape for the given vocabularies.
    pub fn model_config(&self, src: &Vocabulary, tgt: &Vocabulary) -> ModelConfig {
        ModelConfig {
            src_vocab: src.len(),
            tgt_vocab: tgt.len(),
            embedding: self.embedding,
            case_embedding: self.case_embedding,
            hidden: self.hidden,
            layers: self.layers,
            input_feed: self.input_feed,
            max_len: self.max_len,
            init_scale: self.init_scale,
            bos_id: BOS_ID,
            eos_id: EOS_ID,
            pad_id: PAD_ID,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            dropout: self.dropout,
            max_len: self.max_len,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            initial_lr: self.lr,
            decay: self.decay,
            threshold: self.threshold,
            chunk_size: self.chunk_size,
        }
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            max_parallel_epochs: self.max_epochs,
            parallel_decay_epochs: self.decay_epochs,
            synthetic_rounds: self.synthetic_rounds,
            selected_epochs: self.selected_epochs,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam,
            max_len: self.decode_max_len,
            normalize: self.normalize,
        }
    }

    pub fn hyperspec_config(&self) -> HyperSpecConfig {
        HyperSpecConfig {
            lr: self.hs_lr,
            epochs: self.hs_epochs,
            beam: self.beam_config(),
            train: self.train_config(),
        }
    }

    pub fn lm_weights(&self) -> Weights {
        Weights(self.lm_weights)
    }

    /// Every setting as `section.key = value`, in a fixed order.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let d = &self.data;
        let rows: Vec<(&str, String)> = vec![
            ("data.train_src", path(&d.train_src)),
            ("data.train_tgt", path(&d.train_tgt)),
            ("data.valid_src", path(&d.valid_src)),
            ("data.valid_tgt", path(&d.valid_tgt)),
            ("data.mono", path(&d.mono)),
            ("data.test_src", paths(&d.test_src)),
            ("data.test_tgt", paths(&d.test_tgt)),
            ("model.layers", self.layers.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.embedding", self.embedding.to_string()),
            ("model.case_embedding", self.case_embedding.to_string()),
            ("model.input_feed", self.input_feed.to_string()),
            ("model.init_scale", self.init_scale.to_string()),
            ("model.max_len", self.max_len.to_string()),
            ("bpe.merges", self.merges.to_string()),
            ("bpe.vocab_size", self.vocab_size.to_string()),
            ("bpe.split_compounds", self.split_compounds.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.dropout", self.dropout.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.decay", self.decay.to_string()),
            ("train.threshold", self.threshold.to_string()),
            ("train.clip_norm", self.clip_norm.to_string()),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.decay_epochs", self.decay_epochs.to_string()),
            ("train.synthetic_rounds", self.synthetic_rounds.to_string()),
            ("train.selected_epochs", self.selected_epochs.to_string()),
            ("train.chunk_size", self.chunk_size.to_string()),
            ("backtranslate.shard_size", self.shard_size.to_string()),
            ("backtranslate.beam", self.bt_beam.to_string()),
            ("select.quota_parallel", self.quota_parallel.to_string()),
            ("select.quota_synthetic", self.quota_synthetic.to_string()),
            ("select.lm_sample", self.lm_sample.to_string()),
            (
                "select.lm_weights",
                self.lm_weights.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            ),
            ("hyperspec.lr", self.hs_lr.to_string()),
            ("hyperspec.epochs", self.hs_epochs.to_string()),
            (
                "hyperspec.targets",
                match self.hs_targets {
                    HyperSpecTargets::Own => "own".into(),
                    HyperSpecTargets::References => "references".into(),
                },
            ),
            ("hyperspec.leave_one_out", self.hs_leave_one_out.to_string()),
            ("decode.beam", self.beam.to_string()),
            ("decode.max_len", self.decode_max_len.to_string()),
            ("decode.normalize", self.normalize.to_string()),
            ("eval.lowercase", self.lowercase_bleu.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.threads", self.threads.to_string()),
            ("run.deterministic", self.deterministic.to_string()),
        ];
        rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

const SECTIONS: [&str; 10] = [
    "data",
    "model",
    "bpe",
    "train",
    "backtranslate",
    "select",
    "hyperspec",
    "decode",
    "eval",
    "run",
];

/// Typed accessors over `section.key` values that record every failure.
struct Reader {
    values: BTreeMap<String, Value>,
    used: BTreeSet<String>,
    errors: Vec<ConfigError>,
    base: PathBuf,
}

fn type_name(v: &Value) -> String {
    match v {
        Value::String(s) => format!("string {s:?}"),
        Value::Integer(i) => format!("integer {i}"),
        Value::Float(f) => format!("float {f}"),
        Value::Boolean(b) => format!("boolean {b}"),
        Value::Array(_) => "array".into(),
        Value::Table(_) => "table".into(),
        Value::Datetime(d) => format!("datetime {d}"),
    }
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        self.values.get(key).cloned()
    }

    fn type_error(&mut self, key: &str, expected: &'static str, found: &Value) {
        self.errors.push(ConfigError::Type {
            key: key.into(),
            expected,
            found: type_name(found),
        });
    }

    fn range(&mut self, key: &str, reason: impl Into<String>) {
        self.errors.push(ConfigError::Range {
            key: key.into(),
            reason: reason.into(),
        });
    }

    fn uint(&mut self, key: &str, default: usize, min: usize) -> usize {
        match self.take(key) {
            None => default,
            Some(Value::Integer(i)) if i >= 0 => {
                let v = i as usize;
                if v < min {
                    self.range(key, format!("must be at least {min}, got {v}"));
                }
                v
            }
            Some(Value::Integer(i)) => {
                self.range(key, format!("must be non-negative, got {i}"));
                default
            }
            Some(other) => {
                self.type_error(key, "non-negative integer", &other);
                default
            }
        }
    }

    fn float(&mut self, key: &str, default: f64, ok: impl Fn(f64) -> bool, rule: &str) -> f64 {
        let v = match self.take(key) {
            None => return default,
            Some(Value::Float(f)) => f,
            Some(Value::Integer(i)) => i as f64,
            Some(other) => {
                self.type_error(key, "number", &other);
                return default;
            }
        };
        if !(v.is_finite() && ok(v)) {
            self.range(key, format!("{rule}, got {v}"));
        }
        v
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.take(key) {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(other) => {
                self.type_error(key, "boolean", &other);
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.take(key)? {
            Value::String(s) => Some(s),
            other => {
                self.type_error(key, "string", &other);
                None
            }
        }
    }

    fn file(&mut self, key: &str, raw: &str) -> PathBuf {
        let path = self.base.join(raw);
        if !path.is_file() {
            self.errors.push(ConfigError::MissingFile {
                key: key.into(),
                path: path.clone(),
            });
        }
        path
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let raw = self.string(key)?;
        Some(self.file(key, &raw))
    }

    fn paths(&mut self, key: &str) -> Vec<PathBuf> {
        let raw: Vec<String> = match self.take(key) {
            None => return Vec::new(),
            Some(Value::String(s)) => vec![s],
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    match item {
                        Value::String(s) => out.push(s),
                        other => self.type_error(key, "array of strings", &other),
                    }
                }
                out
            }
            Some(other) => {
                self.type_error(key, "string or array of strings", &other);
                return Vec::new();
            }
        };
        raw.iter().map(|r| self.file(key, r)).collect()
    }
}

/// Parses configuration text. Relative paths resolve against `base`; `env`
/// supplies `DESKNMT_*` overrides.
pub fn parse_config<I>(text: &str, base: &Path, env: I) -> Result<PipelineConfig, Vec<ConfigError>>
where
    I: IntoIterator<Item = (String, String)>,
{
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        vec![ConfigError::Syntax(e.message().to_string())]
    })?;
    let mut errors = Vec::new();
    let mut values = BTreeMap::new();
    for (section, body) in table {
        match body {
            Value::Table(t) if SECTIONS.contains(&section.as_str()) => {
                for (k, v) in t {
                    if let Value::Table(_) = v {
                        errors.push(ConfigError::Syntax(format!("nested section [{section}.{k}]")));
                    } else {
                        values.insert(format!("{section}.{k}"), v);
                    }
                }
            }
            Value::Table(_) => errors.push(ConfigError::UnknownSection(section)),
            _ => errors.push(ConfigError::UnknownKey(section)),
        }
    }
    for (name, raw) in env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let rest = rest.to_lowercase();
        let Some((section, key)) = rest.split_once('_') else {
            errors.push(ConfigError::UnknownKey(name));
            continue;
        };
        if !SECTIONS.contains(&section) {
            errors.push(ConfigError::UnknownKey(name));
            continue;
        }
        values.insert(format!("{section}.{key}"), env_value(&raw));
    }

    let mut r = Reader {
        values,
        used: BTreeSet::new(),
        errors,
        base: base.to_path_buf(),
    };
    let d = PipelineConfig::default();
    let positive = |v: f64| v > 0.0;
    let data = DataPaths {
        train_src: r.path("data.train_src"),
        train_tgt: r.path("data.train_tgt"),
        valid_src: r.path("data.valid_src"),
        valid_tgt: r.path("data.valid_tgt"),
        mono: r.path("data.mono"),
        test_src: r.paths("data.test_src"),
        test_tgt: r.paths("data.test_tgt"),
    };
    if data.test_src.len() != data.test_tgt.len() {
        r.range(
            "data.test_tgt",
            format!("{} test sources but {} test references", data.test_src.len(), data.test_tgt.len()),
        );
    }
    let lm_weights = match r.take("select.lm_weights") {
        None => d.lm_weights,
        Some(Value::Array(items)) if items.len() == 3 => {
            let nums: Option<Vec<f64>> = items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect();
            match nums.and_then(|n| Weights::new(n[0], n[1], n[2]).ok()) {
                Some(w) => w.0,
                None => {
                    r.range("select.lm_weights", "three non-negative numbers summing to 1");
                    d.lm_weights
                }
            }
        }
        Some(other) => {
            r.type_error("select.lm_weights", "array of three numbers", &other);
            d.lm_weights
        }
    };
    let hs_targets = match r.string("hyperspec.targets").as_deref() {
        None | Some("own") => HyperSpecTargets::Own,
        Some("references") => HyperSpecTargets::References,
        Some(other) => {
            r.range("hyperspec.targets", format!("must be \"own\" or \"references\", got {other:?}"));
            HyperSpecTargets::Own
        }
    };
    let seed = match r.take("run.seed") {
        None => d.seed,
        Some(Value::Integer(i)) if i >= 0 => i as u64,
        Some(other) => {
            r.type_error("run.seed", "non-negative integer", &other);
            d.seed
        }
    };
    let cfg = PipelineConfig {
        data,
        layers: r.uint("model.layers", d.layers, 1),
        hidden: r.uint("model.hidden", d.hidden, 1),
        embedding: r.uint("model.embedding", d.embedding, 1),
        case_embedding: r.uint("model.case_embedding", d.case_embedding, 0),
        input_feed: r.boolean("model.input_feed", d.input_feed),
        init_scale: r.float("model.init_scale", d.init_scale, |v| v >= 0.0, "must be non-negative"),
        max_len: r.uint("model.max_len", d.max_len, 1),
        merges: r.uint("bpe.merges", d.merges, 0),
        vocab_size: r.uint("bpe.vocab_size", d.vocab_size, 5),
        split_compounds: r.boolean("bpe.split_compounds", d.split_compounds),
        batch_size: r.uint("train.batch_size", d.batch_size, 1),
        dropout: r.float("train.dropout", d.dropout, |v| (0.0..1.0).contains(&v), "must be in [0, 1)"),
        lr: r.float("train.lr", d.lr, positive, "must be positive"),
        decay: r.float("train.decay", d.decay, |v| v > 0.0 && v < 1.0, "must be in (0, 1)"),
        threshold: r.float("train.threshold", d.threshold, |v| v >= 0.0, "must be non-negative"),
        clip_norm: r.float("train.clip_norm", d.clip_norm, |v| v >= 0.0, "must be non-negative"),
        max_epochs: r.uint("train.max_epochs", d.max_epochs, 1),
        decay_epochs: r.uint("train.decay_epochs", d.decay_epochs, 0),
        synthetic_rounds: r.uint("train.synthetic_rounds", d.synthetic_rounds, 0),
        selected_epochs: r.uint("train.selected_epochs", d.selected_epochs, 0),
        chunk_size: r.uint("train.chunk_size", d.chunk_size, 1),
        shard_size: r.uint("backtranslate.shard_size", d.shard_size, 1),
        bt_beam: r.uint("backtranslate.beam", d.bt_beam, 1),
        quota_parallel: r.uint("select.quota_parallel", d.quota_parallel, 0),
        quota_synthetic: r.uint("select.quota_synthetic", d.quota_synthetic, 0),
        lm_sample: r.uint("select.lm_sample", d.lm_sample, 0),
        lm_weights,
        hs_lr: r.float("hyperspec.lr", d.hs_lr, positive, "must be positive"),
        hs_epochs: r.uint("hyperspec.epochs", d.hs_epochs, 0),
        hs_targets,
        hs_leave_one_out: r.boolean("hyperspec.leave_one_out", d.hs_leave_one_out),
        beam: r.uint("decode.beam", d.beam, 1),
        decode_max_len: r.uint("decode.max_len", d.decode_max_len, 1),
        normalize: r.boolean("decode.normalize", d.normalize),
        lowercase_bleu: r.boolean("eval.lowercase", d.lowercase_bleu),
        seed,
        threads: r.uint("run.threads", d.threads, 0),
        deterministic: r.boolean("run.deterministic", d.deterministic),
    };
    let unknown: Vec<String> = r.values.keys().filter(|k| !r.used.contains(*k)).cloned().collect();
    r.errors.extend(unknown.into_iter().map(ConfigError::UnknownKey));
    if r.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(r.errors)
    }
}

// Environment values are TOML scalars when they parse as one, strings otherwise.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Reads and validates a configuration file, applying environment overrides.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, Vec<ConfigError>> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        vec![ConfigError::MissingFile {
            key: "config".into(),
            path: path.to_path_buf(),
        }]
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, std::env::vars())
}

/// One line per error.
pub struct ErrorList<'a>(pub &'a [ConfigError]);

impl fmt::Display for ErrorList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig, Vec<ConfigError>> {
        parse_config(text, Path::new("."), Vec::new())
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(
            (cfg.layers, cfg.hidden, cfg.embedding, cfg.dropout, cfg.batch_size, cfg.max_len, cfg.merges),
            (4, 1000, 500, 0.3, 64, 80, 30_000)
        );
    }

    #[test]
    fn reports_every_error() {
        let errs = parse("[train]\ndropout = 1.5\nbatch = 3\n[model]\nhidden = \"big\"\n[nope]\nx = 1\n").unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");
        assert!(errs.contains(&ConfigError::UnknownKey("train.batch".into())));
        assert!(errs.contains(&ConfigError::UnknownSection("nope".into())));
        assert!(errs.iter().any(|e| matches!(e, ConfigError::Range { key, .. } if key == "train.dropout")));
        assert!(errs
            .iter()
            .any(|e| matches!(e, ConfigError::Type { key, expected: "non-negative integer", .. } if key == "model.hidden")));
    }

    #[test]
    fn environment_overrides_file() {
        let env = vec![
            ("DESKNMT_TRAIN_BATCH_SIZE".to_string(), "16".to_string()),
            ("DESKNMT_HYPERSPEC_TARGETS".to_string(), "references".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let cfg = parse_config("[train]\nbatch_size = 8\n", Path::new("."), env).unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.hs_targets, HyperSpecTargets::References);
        let bad = parse_config("", Path::new("."), vec![("DESKNMT_TRAIN_BOGUS".into(), "1".into())]);
        assert_eq!(bad.unwrap_err(), vec![ConfigError::UnknownKey("train.bogus".into())]);
    }

    #[test]
    fn missing_files_are_reported() {
        let errs = parse("[data]\ntrain_src = \"no/such/file\"\ntest_src = [\"a\", \"b\"]\n").unwrap_err();
        assert_eq!(errs.iter().filter(|e| matches!(e, ConfigError::MissingFile { .. })).count(), 3);
        assert!(errs.iter().any(|e| matches!(e, ConfigError::Range { key, .. } if key == "data.test_tgt")));
    }

    #[test]
    fn nested_sections_are_rejected() {
        assert!(parse("[train.inner]\nx = 1\n").is_err());
        assert!(parse("[train\n").is_err());
    }
}

//! Plain-text `key = value` run manifests.
//!
//! Lines starting with `#` are comments, except `# manifest.<key> = value`,
//! which is how matrix CSVs record the run that produced them. A CSV file
//! can therefore be passed back as a manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// A user or configuration error; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const METADATA_PREFIX: &str = "manifest.";

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "xn | xl-xn | xt-xn (neutralize)"),
    ("encoder", "encoder id"),
    ("treebank", "treebank id"),
    ("task", "pos | dep"),
    ("layer", "encoder layer"),
    ("pooling", "first | mean | max"),
    (
        "combiner",
        "concat | mean | abs_diff | sum (dep; default concat)",
    ),
    ("train_conllu", "training split treebank"),
    ("validation_conllu", "validation split treebank"),
    ("test_conllu", "test split treebank"),
    ("train_store", "training split embeddings"),
    ("validation_store", "validation split embeddings"),
    ("test_store", "test split embeddings"),
    ("target_treebank", "target treebank id (xl-xn)"),
    ("target_train_conllu", "target training treebank (xl-xn)"),
    (
        "target_validation_conllu",
        "target validation treebank (xl-xn)",
    ),
    ("target_test_conllu", "target test treebank (xl-xn)"),
    ("target_train_store", "target training embeddings (xl-xn)"),
    (
        "target_validation_store",
        "target validation embeddings (xl-xn)",
    ),
    ("target_test_store", "target test embeddings (xl-xn)"),
    (
        "direction",
        "pos_neutralizes_dep | dep_neutralizes_pos (xt-xn)",
    ),
    ("seed", "probe seed"),
    ("control_seed", "control-task label seed"),
    ("learning_rate", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("beta1", "AdamW beta1"),
    ("beta2", "AdamW beta2"),
    ("epsilon", "AdamW epsilon"),
    ("batch_size", "minibatch size"),
    ("max_epochs", "epoch limit"),
    ("patience", "early-stopping patience"),
    ("hidden_dim", "probe hidden width (default: input width)"),
    ("min_support", "minimum test support for a reported column"),
    ("trials", "random-baseline trials"),
    ("zero_centroids", "replace centroids by zero vectors"),
    ("no_train", "fail instead of training missing probes"),
    ("out", "output directory"),
    ("jobs", "parallel probe trainings"),
    ("synth_classes", "synthetic class count"),
    ("synth_dim", "synthetic embedding width"),
    ("synth_sigma", "synthetic within-class stddev"),
    ("synth_scale", "synthetic class-mean norm"),
    (
        "synth_words_per_class",
        "synthetic words per class and split",
    ),
    ("synth_sentence_len", "synthetic words per sentence"),
    ("synth_layers", "synthetic layer ids, comma-separated"),
];

/// Keys that do not influence results and stay out of CSV metadata.
const NON_SEMANTIC: &[&str] = &["out", "jobs", "no_train"];

fn check_key(key: &str) -> anyhow::Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(usage(format!("unknown manifest key {key:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, source: &str) -> anyhow::Result<Manifest> {
        let csv = source.ends_with(".csv");
        let mut m = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let body = if let Some(rest) = line.strip_prefix('#') {
                match rest.trim_start().strip_prefix(METADATA_PREFIX) {
                    Some(entry) => entry,
                    None => continue,
                }
            } else if line.is_empty() || csv {
                continue;
            } else {
                line
            };
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| usage(format!("{source}:{}: expected key = value", i + 1)))?;
            m.set(k.trim(), v.trim())
                .map_err(|e| usage(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> anyhow::Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m = Manifest::parse(&text, &path.to_string_lossy())?;
        m.base = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        check_key(key)?;
        self.values.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> anyhow::Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(KEYS.iter().any(|(k, _)| *k == key), "undeclared key {key}");
        self.values
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> anyhow::Result<&str> {
        self.get(key)
            .ok_or_else(|| usage(format!("missing required key {key:?}")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| usage(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        self.parsed(key)?
            .ok_or_else(|| usage(format!("missing required key {key:?}")))
    }

    pub fn flag(&self, key: &str) -> anyhow::Result<bool> {
        match self.get(key) {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some(v) => Err(usage(format!("bad boolean {v:?} for {key}"))),
        }
    }

    /// An input path, resolved against the manifest's directory. The file
    /// must exist.
    pub fn input_path(&self, key: &str) -> anyhow::Result<PathBuf> {
        let raw = PathBuf::from(self.require(key)?);
        let path = match &self.base {
            Some(base) if raw.is_relative() => base.join(raw),
            _ => raw,
        };
        if !path.is_file() {
            return Err(usage(format!("{key}: no such file {}", path.display())));
        }
        // one spelling per file, so probe identities do not depend on cwd
        Ok(std::fs::canonicalize(&path).unwrap_or(path))
    }

    /// `manifest.<key>` metadata entries for every key that affects results,
    /// with input paths made absolute so the file can be reused from
    /// anywhere.
    pub fn metadata(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .filter(|(k, v)| !NON_SEMANTIC.contains(&k.as_str()) && !v.is_empty())
            .map(|(k, v)| {
                let v = if is_path_key(k) {
                    self.absolute(v)
                } else {
                    v.clone()
                };
                (format!("{METADATA_PREFIX}{k}"), v)
            })
            .collect()
    }

    fn absolute(&self, v: &str) -> String {
        let p = PathBuf::from(v);
        let joined = match &self.base {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        };
        std::fs::canonicalize(&joined)
            .unwrap_or(joined)
            .to_string_lossy()
            .into_owned()
    }
}

fn is_path_key(k: &str) -> bool {
    k.ends_with("_conllu") || k.ends_with("_store")
}

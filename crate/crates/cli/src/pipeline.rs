//! Loading inputs, training or reusing probes, and assembling runs.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::json;
use xneutr_core::probe::{config_hash, extend_hash};
use xneutr_core::{
    build_dep_features, build_pos_features, init_probe, parse_conllu, predicted_centroids,
    preprocess, train, AnnotatedSentence, EmbeddingSource, FeatureSet, LabelSet, NeutralizationRun,
    PairCombiner, PoolingMethod, ProbeBlob, ProbeConfig, ProbeModel, Split, StoreReader, Task,
    TrainConfig,
};

use crate::manifest::{usage, Manifest};

pub const OUT_ENV: &str = "XNEUTR_OUT";
pub const DEFAULT_OUT: &str = "xneutr-out";

pub struct Ctx {
    pub manifest: Manifest,
    pub out: PathBuf,
    pub pool: rayon::ThreadPool,
}

impl Ctx {
    pub fn new(mut manifest: Manifest) -> anyhow::Result<Ctx> {
        // record the default so emitted metadata always names the seed
        if manifest.get("seed").is_none() {
            manifest.set("seed", "0")?;
        }
        let out = manifest
            .get("out")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let jobs: usize = manifest.parsed_or("jobs", 1)?;
        if jobs == 0 {
            return Err(usage("jobs must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        Ok(Ctx {
            manifest,
            out,
            pool,
        })
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let m = &self.manifest;
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: m.parsed_or("learning_rate", d.learning_rate)?,
            weight_decay: m.parsed_or("weight_decay", d.weight_decay)?,
            beta1: m.parsed_or("beta1", d.beta1)?,
            beta2: m.parsed_or("beta2", d.beta2)?,
            epsilon: m.parsed_or("epsilon", d.epsilon)?,
            batch_size: m.parsed_or("batch_size", d.batch_size)?,
            max_epochs: m.parsed_or("max_epochs", d.max_epochs)?,
            patience: m.parsed_or("patience", d.patience)?,
            hidden_dim: m.parsed("hidden_dim")?,
            seed: m.parsed_or("seed", d.seed)?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn task(&self) -> anyhow::Result<Task> {
        self.manifest.required("task")
    }

    /// Layer, pooling and combiner for `task`.
    pub fn extraction(&self, task: Task) -> anyhow::Result<Extraction> {
        let combiner = match (task, self.manifest.parsed::<PairCombiner>("combiner")?) {
            (Task::Dep, c) => Some(c.unwrap_or(PairCombiner::Concat)),
            (Task::Pos, None) => None,
            (Task::Pos, Some(_)) => return Err(usage("combiner applies to dep runs only")),
        };
        Ok(Extraction {
            task,
            layer: self.manifest.required("layer")?,
            pooling: self.manifest.required("pooling")?,
            combiner,
        })
    }

    pub fn no_train(&self) -> anyhow::Result<bool> {
        self.manifest.flag("no_train")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    pub task: Task,
    pub layer: u32,
    pub pooling: PoolingMethod,
    pub combiner: Option<PairCombiner>,
}

/// One treebank's three splits, parsed, preprocessed and paired with their
/// stores.
pub struct Dataset {
    pub paths: Vec<String>,
    pub splits: Vec<(Vec<AnnotatedSentence>, StoreReader)>,
    pub encoder: String,
    pub treebank: String,
}

impl Dataset {
    /// `prefix` is `""` for the primary inputs and `"target_"` for the
    /// cross-lingual target.
    pub fn load(m: &Manifest, prefix: &str) -> anyhow::Result<Dataset> {
        let mut paths = Vec::new();
        let mut splits = Vec::new();
        for split in Split::ALL {
            let conllu = m.input_path(&format!("{prefix}{split}_conllu"))?;
            let store_path = m.input_path(&format!("{prefix}{split}_store"))?;
            let sentences = read_treebank(&conllu, split)?;
            let store = StoreReader::open(&store_path)
                .with_context(|| format!("reading store {}", store_path.display()))?;
            paths.push(conllu.to_string_lossy().into_owned());
            paths.push(store_path.to_string_lossy().into_owned());
            splits.push((sentences, store));
        }
        let header = splits[0].1.header().clone();
        for (_, store) in &splits[1..] {
            let h = store.header();
            if h.model_id != header.model_id || h.treebank_id != header.treebank_id {
                return Err(usage(format!(
                    "split stores disagree: {}/{} vs {}/{}",
                    header.model_id, header.treebank_id, h.model_id, h.treebank_id
                )));
            }
        }
        let treebank_key = if prefix.is_empty() {
            "treebank"
        } else {
            "target_treebank"
        };
        for (key, stored) in [
            ("encoder", &header.model_id),
            (treebank_key, &header.treebank_id),
        ] {
            if let Some(given) = m.get(key) {
                if given != stored {
                    return Err(usage(format!(
                        "{key} is {given:?} but the stores hold {stored:?}"
                    )));
                }
            }
        }
        Ok(Dataset {
            paths,
            splits,
            encoder: header.model_id,
            treebank: header.treebank_id,
        })
    }

    pub fn features(&self, split: usize, x: &Extraction) -> anyhow::Result<FeatureSet> {
        let (sentences, store) = &self.splits[split];
        let fs = match x.task {
            Task::Pos => build_pos_features(store, x.layer, x.pooling, sentences)?,
            Task::Dep => build_dep_features(
                store,
                x.layer,
                x.pooling,
                x.combiner.expect("dep extraction has a combiner"),
                sentences,
            )?,
        };
        Ok(fs)
    }

    pub fn config(&self, x: &Extraction) -> ProbeConfig {
        ProbeConfig {
            encoder_id: self.encoder.clone(),
            treebank_id: self.treebank.clone(),
            task: x.task,
            layer: x.layer,
            pooling: x.pooling,
            combiner: x.combiner,
        }
    }
}

pub fn read_treebank(path: &Path, split: Split) -> anyhow::Result<Vec<AnnotatedSentence>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parsed = parse_conllu(BufReader::new(file), &name, split)?;
    // the word inventory, and so the store layout, is the same for both tasks
    let pre = preprocess(parsed, Task::Pos)?;
    if pre.stats.dropped_sentences > 0 {
        eprintln!(
            "warning: {name}: dropped {} empty sentences",
            pre.stats.dropped_sentences
        );
    }
    Ok(pre.sentences)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run_name(config: &ProbeConfig) -> String {
    let mut name = format!("{}_L{}_{}", config.task, config.layer, config.pooling);
    if let Some(c) = config.combiner {
        name.push('_');
        name.push_str(c.as_str());
    }
    name
}

pub fn probe_dir(out: &Path, config: &ProbeConfig) -> PathBuf {
    out.join("probes")
        .join(sanitize(&config.encoder_id))
        .join(sanitize(&config.treebank_id))
        .join(run_name(config))
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub struct TrainedProbe {
    pub model: ProbeModel,
    /// Update steps of the run that produced the probe.
    pub steps: u64,
    pub dir: PathBuf,
}

/// Reuse the stored probe for this configuration and these inputs, or train
/// one (train split, early stopping on validation) and store it.
pub fn ensure_probe(
    ctx: &Ctx,
    config: &ProbeConfig,
    inputs: &[String],
    train_fs: &FeatureSet,
    val_fs: &FeatureSet,
    retrain: bool,
) -> anyhow::Result<TrainedProbe> {
    let cfg = ctx.train_config()?;
    let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let hash = extend_hash(config_hash(config, &cfg), &refs);
    let classes = LabelSet::for_task(config.task).len();
    let dir = probe_dir(&ctx.out, config);
    let blob_path = dir.join("probe.bin");
    let log_path = dir.join("training_log.json");

    if !retrain && blob_path.is_file() {
        if let Ok(blob) = ProbeBlob::read(&blob_path) {
            let m = &blob.model;
            let fits =
                blob.config_hash == hash && m.input_dim == train_fs.dim && m.classes == classes;
            if let (true, Some(steps)) = (fits, stored_steps(&log_path)) {
                return Ok(TrainedProbe {
                    model: blob.model,
                    steps,
                    dir,
                });
            }
        }
    }
    if ctx.no_train()? {
        return Err(usage(format!(
            "no trained probe for {config} and training is disabled"
        )));
    }
    let model = init_probe(
        train_fs.dim,
        cfg.hidden_for(train_fs.dim),
        classes,
        cfg.seed,
    );
    let (model, log) = train(model, train_fs, val_fs, &cfg)?;
    let blob = ProbeBlob {
        model,
        seed: cfg.seed,
        config_hash: hash,
    };
    write_atomic(&blob_path, &blob.to_bytes())?;
    write_json(
        &log_path,
        &json!({
            "config": config.to_string(),
            "train_config": cfg,
            "log": log,
        }),
    )?;
    Ok(TrainedProbe {
        model: blob.model,
        steps: log.total_steps,
        dir,
    })
}

fn stored_steps(log_path: &Path) -> Option<u64> {
    let text = std::fs::read_to_string(log_path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["log"]["total_steps"].as_u64()
}

/// A probe with validation centroids and test features.
pub fn build_run(ctx: &Ctx, data: &Dataset, x: &Extraction) -> anyhow::Result<NeutralizationRun> {
    let config = data.config(x);
    let train_fs = data.features(0, x)?;
    let val_fs = data.features(1, x)?;
    let test_fs = data.features(2, x)?;
    let probe = ensure_probe(ctx, &config, &data.paths, &train_fs, &val_fs, false)?;
    let mut centroids = predicted_centroids(&probe.model, &val_fs)?;
    if ctx.manifest.flag("zero_centroids")? {
        centroids = centroids.zeroed();
    }
    Ok(NeutralizationRun {
        config,
        labels: LabelSet::for_task(x.task),
        probe: probe.model,
        centroids,
        test_features: test_fs,
    })
}

/// Warn about classes that have test rows but no centroid.
pub fn warn_missing_centroids(run: &NeutralizationRun, min_support: u64) {
    let support = run.test_features.support(run.labels.len());
    let missing: Vec<&str> = (0..run.labels.len())
        .filter(|&c| support[c] >= min_support && run.centroids.get(c).is_none())
        .map(|c| run.labels.name(c))
        .collect();
    if !missing.is_empty() {
        eprintln!(
            "warning: {}: no centroid for {} (never predicted on validation); rows absent",
            run.config,
            missing.join(", ")
        );
    }
}

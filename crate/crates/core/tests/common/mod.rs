#![allow(dead_code)]

use xneutr_core::synthetic::{synthetic_corpus, SyntheticSplit};
use xneutr_core::{
    build_dep_features, build_pos_features, gold_centroids, init_probe, predicted_centroids, train,
    CentroidSet, FeatureSet, LabelSet, NeutralizationRun, PairCombiner, PoolingMethod, ProbeModel,
    SyntheticSpec, Task, TrainConfig, TrainingLog,
};

pub const CLASSES: usize = 5;
pub const DIM: usize = 32;
pub const SIGMA: f32 = 0.05;
pub const WORDS_PER_CLASS: usize = 2000;
pub const LAYER: u32 = 6;

pub struct Oracle {
    pub spec: SyntheticSpec,
    pub splits: Vec<SyntheticSplit>,
}

/// Orthogonal unit-norm class means on the first `CLASSES` axes.
pub fn oracle(words_per_class: usize, seed: u64) -> Oracle {
    let mut spec = SyntheticSpec::orthogonal(CLASSES, DIM, 1.0, SIGMA, words_per_class, seed);
    spec.layer_ids = vec![LAYER];
    let splits = synthetic_corpus(&spec, 12, "synthetic", "oracle").unwrap();
    Oracle { spec, splits }
}

impl Oracle {
    pub fn pos(&self, split: usize) -> FeatureSet {
        let s = &self.splits[split];
        build_pos_features(&s.store, LAYER, PoolingMethod::First, &s.sentences).unwrap()
    }

    pub fn dep(&self, split: usize) -> FeatureSet {
        let s = &self.splits[split];
        build_dep_features(
            &s.store,
            LAYER,
            PoolingMethod::First,
            PairCombiner::Concat,
            &s.sentences,
        )
        .unwrap()
    }
}

pub fn train_probe(
    train_fs: &FeatureSet,
    val_fs: &FeatureSet,
    classes: usize,
    seed: u64,
) -> (ProbeModel, TrainingLog) {
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let model = init_probe(train_fs.dim, cfg.hidden_for(train_fs.dim), classes, seed);
    train(model, train_fs, val_fs, &cfg).unwrap()
}

pub fn run_for(
    task: Task,
    train_fs: &FeatureSet,
    val_fs: &FeatureSet,
    test_fs: FeatureSet,
    seed: u64,
) -> NeutralizationRun {
    let labels = LabelSet::for_task(task);
    let (probe, _) = train_probe(train_fs, val_fs, labels.len(), seed);
    let centroids = predicted_centroids(&probe, val_fs).unwrap();
    NeutralizationRun {
        config: test_fs.config.clone(),
        labels,
        probe,
        centroids,
        test_features: test_fs,
    }
}

pub fn gold(val_fs: &FeatureSet, classes: usize) -> CentroidSet {
    gold_centroids(val_fs, classes).unwrap()
}

//! Joint-encoding analysis of linguistic categories in frozen encoder
//! representations.
//!
//! The pipeline reads CoNLL-U treebanks ([`treebank`]), pairs them with
//! per-layer token embeddings ([`embedstore`]), pools them into labeled
//! feature rows ([`features`]), trains shallow probes ([`probe`]) and
//! measures how subtracting one class's centroid changes the accuracy on
//! other classes ([`neutralize`]). [`report`] turns the resulting matrices
//! into CSV files and heatmaps.

pub mod embedstore;
pub mod error;
pub mod features;
pub mod linalg;
pub mod neutralize;
pub mod probe;
pub mod report;
pub mod synthetic;
pub mod treebank;

pub use embedstore::{
    read_sentence, synthesize_store, write_store, EmbeddingSource, MemoryStore, SentenceRecord,
    StoreHeader, StoreReader, SyntheticSpec,
};
pub use error::{Error, Result};
pub use features::{
    build_dep_features, build_pos_features, pool_word, FeatureSet, PairCombiner, PoolingMethod,
};
pub use neutralize::{
    centroid_similarity, cross_lingual_matrix, cross_neutralization_matrix, cross_neutralize,
    cross_task_matrix, gold_centroids, neutralize_features, predicted_centroids, random_baseline,
    relative_change, select_config, self_neutralization_drops, CentroidSet, CrossTaskDirection,
    GridEntry, NeutralizationMatrix, NeutralizationRun, NeutralizationScope, ProbeConfig,
};
pub use probe::{
    evaluate, init_probe, predict, selectivity, train, train_for_steps, EvalReport, ProbeBlob,
    ProbeModel, TrainConfig, TrainingLog,
};
pub use treebank::{
    make_control_labels, parse_conllu, preprocess, AnnotatedSentence, DepRel, LabelSet, Split,
    Task, Upos, Word,
};

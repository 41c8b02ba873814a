//! Shared fixtures for the criterion benches.

use xneutr_core::synthetic::synthetic_sentences;
use xneutr_core::{
    build_pos_features, synthesize_store, FeatureSet, PoolingMethod, Split, SyntheticSpec,
};

/// POS features from an orthogonal-means synthetic store.
pub fn synthetic_pos_features(
    classes: usize,
    dim: usize,
    words_per_class: usize,
    split: Split,
    seed: u64,
) -> FeatureSet {
    let sentences = synthetic_sentences(classes, words_per_class, 12, seed, split);
    let mut spec = SyntheticSpec::orthogonal(classes, dim, 1.0, 0.1, words_per_class, seed);
    spec.layer_ids = vec![1];
    let store = synthesize_store(&spec, &sentences, "synthetic", "bench", split.as_str())
        .expect("valid synthetic spec");
    build_pos_features(&store, 1, PoolingMethod::First, &sentences).expect("aligned store")
}

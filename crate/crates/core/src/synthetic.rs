//! Synthetic treebanks for oracle runs.
//!
//! Class `k` words carry UPOS `Upos::ALL[k]`. Each sentence is a chain: the
//! first word is the root and every other word depends on its predecessor
//! with relation [`dep_for_class`] of its own class, so DEP labels are a
//! function of the child's class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedstore::{synthesize_store, MemoryStore, SyntheticSpec};
use crate::error::Result;
use crate::treebank::{splitmix64, AnnotatedSentence, DepRel, Split, Upos, Word};

/// Distinct word forms per class.
pub const TYPES_PER_CLASS: usize = 50;

/// Relation assigned to a class-`k` dependent.
pub fn dep_for_class(class: usize) -> DepRel {
    DepRel::labeled()
        .nth(class)
        .expect("class index within the 36 labelled relations")
}

/// `class_count * words_per_class` words in shuffled order, cut into
/// sentences of `sentence_len` words (the last may be shorter).
pub fn synthetic_sentences(
    class_count: usize,
    words_per_class: usize,
    sentence_len: usize,
    seed: u64,
    split: Split,
) -> Vec<AnnotatedSentence> {
    assert!(
        class_count <= Upos::ALL.len(),
        "at most 17 synthetic classes"
    );
    assert!(sentence_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..class_count)
        .flat_map(|k| std::iter::repeat_n(k, words_per_class))
        .collect();
    classes.shuffle(&mut rng);

    classes
        .chunks(sentence_len)
        .enumerate()
        .map(|(i, chunk)| {
            let words = chunk
                .iter()
                .enumerate()
                .map(|(j, &k)| Word {
                    form: format!("c{k}w{}", rng.gen_range(0..TYPES_PER_CLASS)),
                    upos: Upos::ALL[k],
                    head: j,
                    deprel: if j == 0 {
                        DepRel::Root
                    } else {
                        dep_for_class(k)
                    },
                    deprel_subtype: None,
                })
                .collect();
            AnnotatedSentence {
                sentence_id: format!("synth-{split}-{}", i + 1),
                words,
                source_split: split,
                comments: vec![format!("# sent_id = synth-{split}-{}", i + 1)],
                raw: Vec::new(),
            }
        })
        .collect()
}

/// Sentences and embeddings of one synthetic split.
#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub split: Split,
    pub sentences: Vec<AnnotatedSentence>,
    pub store: MemoryStore,
}

/// Train, validation and test splits sharing the class means of `spec`,
/// each with `spec.words_per_class` words per class and its own seeds
/// derived from `spec.seed`.
pub fn synthetic_corpus(
    spec: &SyntheticSpec,
    sentence_len: usize,
    model_id: &str,
    treebank_id: &str,
) -> Result<Vec<SyntheticSplit>> {
    spec.validate()?;
    Split::ALL
        .iter()
        .enumerate()
        .map(|(i, &split)| {
            let base = splitmix64(spec.seed ^ splitmix64(i as u64 + 1));
            let sentences = synthetic_sentences(
                spec.class_count,
                spec.words_per_class,
                sentence_len,
                base,
                split,
            );
            let mut split_spec = spec.clone();
            split_spec.seed = splitmix64(base);
            let store = synthesize_store(
                &split_spec,
                &sentences,
                model_id,
                treebank_id,
                split.as_str(),
            )?;
            Ok(SyntheticSplit {
                split,
                sentences,
                store,
            })
        })
        .collect()
}

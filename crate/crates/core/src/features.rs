//! Labeled feature vectors built from stored token embeddings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingSource;
use crate::error::{Error, Result};
use crate::neutralize::ProbeConfig;
use crate::treebank::{AnnotatedSentence, LabelSet, Task};

/// How subword vectors collapse into one word vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PoolingMethod {
    First,
    Mean,
    Max,
}

impl PoolingMethod {
    pub const ALL: [PoolingMethod; 3] = [
        PoolingMethod::First,
        PoolingMethod::Max,
        PoolingMethod::Mean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMethod::First => "first",
            PoolingMethod::Mean => "mean",
            PoolingMethod::Max => "max",
        }
    }
}

impl fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(PoolingMethod::First),
            "mean" => Ok(PoolingMethod::Mean),
            "max" => Ok(PoolingMethod::Max),
            _ => Err(format!(
                "unknown pooling {s:?} (expected first, mean or max)"
            )),
        }
    }
}

/// How a (head, child) pair of word vectors becomes one DEP feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairCombiner {
    /// `[head ; child]`, width `2d`.
    Concat,
    Mean,
    AbsDiff,
    Sum,
}

impl PairCombiner {
    pub fn as_str(self) -> &'static str {
        match self {
            PairCombiner::Concat => "concat",
            PairCombiner::Mean => "mean",
            PairCombiner::AbsDiff => "abs_diff",
            PairCombiner::Sum => "sum",
        }
    }

    pub fn output_dim(self, d: usize) -> usize {
        match self {
            PairCombiner::Concat => 2 * d,
            _ => d,
        }
    }

    fn combine(self, head: &[f32], child: &[f32], out: &mut Vec<f32>) {
        match self {
            PairCombiner::Concat => {
                out.extend_from_slice(head);
                out.extend_from_slice(child);
            }
            PairCombiner::Mean => out.extend(head.iter().zip(child).map(|(h, c)| (h + c) * 0.5)),
            PairCombiner::AbsDiff => out.extend(head.iter().zip(child).map(|(h, c)| (h - c).abs())),
            PairCombiner::Sum => out.extend(head.iter().zip(child).map(|(h, c)| h + c)),
        }
    }
}

impl fmt::Display for PairCombiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairCombiner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(PairCombiner::Concat),
            "mean" => Ok(PairCombiner::Mean),
            "abs_diff" => Ok(PairCombiner::AbsDiff),
            "sum" => Ok(PairCombiner::Sum),
            _ => Err(format!(
                "unknown combiner {s:?} (expected concat, mean, abs_diff or sum)"
            )),
        }
    }
}

/// Pool a `k x d` row-major subword matrix into one `d`-vector.
pub fn pool_word(subwords: &[f32], d: usize, method: PoolingMethod) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(d);
    pool_into(subwords, d, method, &mut out)?;
    Ok(out)
}

fn pool_into(subwords: &[f32], d: usize, method: PoolingMethod, out: &mut Vec<f32>) -> Result<()> {
    if d == 0 || subwords.is_empty() || !subwords.len().is_multiple_of(d) {
        return Err(Error::Config(format!(
            "cannot pool {} values into width {d}: empty span or ragged matrix",
            subwords.len()
        )));
    }
    let k = subwords.len() / d;
    match method {
        PoolingMethod::First => out.extend_from_slice(&subwords[..d]),
        PoolingMethod::Max => {
            let start = out.len();
            out.extend_from_slice(&subwords[..d]);
            for row in subwords.chunks_exact(d).skip(1) {
                for (o, &v) in out[start..].iter_mut().zip(row) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        PoolingMethod::Mean => {
            for j in 0..d {
                let sum: f64 = (0..k).map(|i| f64::from(subwords[i * d + j])).sum();
                out.push((sum / k as f64) as f32);
            }
        }
    }
    Ok(())
}

/// Where a feature row came from. Indices are 0-based sentence ordinals and
/// 1-based word indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sentence: u32,
    pub word: u32,
    pub head: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub task: Task,
    /// Row width: `d` for POS and non-concat DEP, `2d` for concat DEP.
    pub dim: usize,
    /// `N x dim`, row-major.
    pub vectors: Vec<f32>,
    pub gold_labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
    pub config: ProbeConfig,
}

impl FeatureSet {
    pub fn empty(config: ProbeConfig, dim: usize) -> Self {
        FeatureSet {
            task: config.task,
            dim,
            vectors: Vec::new(),
            gold_labels: Vec::new(),
            provenance: Vec::new(),
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.gold_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim.max(1))
    }

    /// Count of rows per gold class, over `classes` classes.
    pub fn support(&self, classes: usize) -> Vec<u64> {
        let mut s = vec![0; classes];
        for &l in &self.gold_labels {
            s[l as usize] += 1;
        }
        s
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut vectors = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            vectors.extend_from_slice(self.row(i));
        }
        FeatureSet {
            task: self.task,
            dim: self.dim,
            vectors,
            gold_labels: indices.iter().map(|&i| self.gold_labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            config: self.config.clone(),
        }
    }
}

fn check_alignment<S: EmbeddingSource + ?Sized>(
    store: &S,
    sentences: &[AnnotatedSentence],
) -> Result<()> {
    if store.sentence_count() != sentences.len() {
        return Err(Error::Alignment {
            sentence_id: sentences
                .get(
                    store
                        .sentence_count()
                        .min(sentences.len().saturating_sub(1)),
                )
                .map(|s| s.sentence_id.clone())
                .unwrap_or_default(),
            message: format!(
                "store has {} sentences, treebank has {}",
                store.sentence_count(),
                sentences.len()
            ),
        });
    }
    Ok(())
}

/// Pooled word vectors of one sentence, `W x d` row-major.
fn sentence_word_vectors<S: EmbeddingSource + ?Sized>(
    store: &S,
    layer: u32,
    pooling: PoolingMethod,
    ordinal: usize,
    sentence: &AnnotatedSentence,
) -> Result<Vec<f32>> {
    let d = store.embed_dim();
    let stored_id = store.sentence_id(ordinal)?;
    if stored_id != sentence.sentence_id {
        return Err(Error::Alignment {
            sentence_id: sentence.sentence_id.clone(),
            message: format!("store holds sentence {stored_id:?} at ordinal {ordinal}"),
        });
    }
    let spans = store.word_spans(ordinal)?;
    if spans.len() != sentence.words.len() {
        return Err(Error::Alignment {
            sentence_id: sentence.sentence_id.clone(),
            message: format!(
                "{} word spans for {} words",
                spans.len(),
                sentence.words.len()
            ),
        });
    }
    let matrix = store.layer_matrix(layer, ordinal)?;
    let mut out = Vec::with_capacity(spans.len() * d);
    for &(start, end) in spans {
        let (s, e) = (start as usize * d, end as usize * d);
        pool_into(&matrix[s..e], d, pooling, &mut out).map_err(|_| Error::Alignment {
            sentence_id: sentence.sentence_id.clone(),
            message: format!("empty span ({start}, {end})"),
        })?;
    }
    Ok(out)
}

fn base_config<S: EmbeddingSource + ?Sized>(
    store: &S,
    task: Task,
    layer: u32,
    pooling: PoolingMethod,
    combiner: Option<PairCombiner>,
) -> ProbeConfig {
    ProbeConfig {
        encoder_id: store.header().model_id.clone(),
        treebank_id: store.header().treebank_id.clone(),
        task,
        layer,
        pooling,
        combiner,
    }
}

/// One row per word; the label is the UPOS index.
pub fn build_pos_features<S: EmbeddingSource + ?Sized>(
    store: &S,
    layer: u32,
    pooling: PoolingMethod,
    sentences: &[AnnotatedSentence],
) -> Result<FeatureSet> {
    let config = base_config(store, Task::Pos, layer, pooling, None);
    let d = store.embed_dim();
    store.header().layer_position(layer)?;
    check_alignment(store, sentences)?;
    let labels = LabelSet::pos();
    let mut fs = FeatureSet::empty(config, d);
    for (ord, s) in sentences.iter().enumerate() {
        let words = sentence_word_vectors(store, layer, pooling, ord, s)?;
        fs.vectors.extend_from_slice(&words);
        for (i, w) in s.words.iter().enumerate() {
            fs.gold_labels
                .push(labels.label_of(w).expect("UPOS is always labelled") as u32);
            fs.provenance.push(Provenance {
                sentence: ord as u32,
                word: i as u32 + 1,
                head: None,
            });
        }
    }
    Ok(fs)
}

/// One row per non-root word: `combiner(head, child)`, labelled with the
/// child's relation.
pub fn build_dep_features<S: EmbeddingSource + ?Sized>(
    store: &S,
    layer: u32,
    pooling: PoolingMethod,
    combiner: PairCombiner,
    sentences: &[AnnotatedSentence],
) -> Result<FeatureSet> {
    let config = base_config(store, Task::Dep, layer, pooling, Some(combiner));
    let d = store.embed_dim();
    store.header().layer_position(layer)?;
    check_alignment(store, sentences)?;
    let labels = LabelSet::dep();
    let mut fs = FeatureSet::empty(config, combiner.output_dim(d));
    for (ord, s) in sentences.iter().enumerate() {
        let words = sentence_word_vectors(store, layer, pooling, ord, s)?;
        for child in s.dep_examples() {
            let w = &s.words[child - 1];
            if w.head == 0 || w.head > s.words.len() {
                return Err(Error::Treebank {
                    sentence_id: s.sentence_id.clone(),
                    message: format!("word {child} has head {} outside the sentence", w.head),
                });
            }
            let head_vec = &words[(w.head - 1) * d..w.head * d];
            let child_vec = &words[(child - 1) * d..child * d];
            combiner.combine(head_vec, child_vec, &mut fs.vectors);
            fs.gold_labels
                .push(labels.label_of(w).expect("non-root relation is labelled") as u32);
            fs.provenance.push(Provenance {
                sentence: ord as u32,
                word: child as u32,
                head: Some(w.head as u32),
            });
        }
    }
    Ok(fs)
}

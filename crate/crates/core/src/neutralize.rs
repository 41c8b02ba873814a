//! Class centroids and (cross-)neutralization.
//!
//! A centroid is the mean validation feature row of everything the probe
//! predicts as a class. Neutralizing subtracts a centroid from test rows and
//! re-runs the probe; each matrix cell is the relative change of one target
//! class's recall. Because per-class accuracy is recall over gold rows,
//! subtracting from every row is equivalent to subtracting only from the
//! target's rows, so one probe pass per neutralizer fills a whole row.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedstore::DEFAULT_LAYERS;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, PairCombiner, PoolingMethod};
use crate::probe::{evaluate, predict, EvalReport, ProbeModel};
use crate::treebank::{LabelSet, Task};

/// Smallest gold test support for a reported target cell.
pub const MIN_SUPPORT: u64 = 10;

/// Default number of random-baseline trials.
pub const DEFAULT_TRIALS: usize = 5;

/// Where a probe reads its features from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub encoder_id: String,
    pub treebank_id: String,
    pub task: Task,
    pub layer: u32,
    pub pooling: PoolingMethod,
    /// DEP only.
    pub combiner: Option<PairCombiner>,
}

impl ProbeConfig {
    /// The 15 (layer, pooling) points searched per encoder, treebank and task.
    pub fn grid(encoder_id: &str, treebank_id: &str, task: Task) -> Vec<ProbeConfig> {
        let combiner = (task == Task::Dep).then_some(PairCombiner::Concat);
        DEFAULT_LAYERS
            .iter()
            .flat_map(|&layer| {
                PoolingMethod::ALL.iter().map(move |&pooling| ProbeConfig {
                    encoder_id: encoder_id.to_owned(),
                    treebank_id: treebank_id.to_owned(),
                    task,
                    layer,
                    pooling,
                    combiner,
                })
            })
            .collect()
    }

    pub fn is_grid_point(&self) -> bool {
        DEFAULT_LAYERS.contains(&self.layer) && (self.task == Task::Pos) == self.combiner.is_none()
    }

    /// Same layer and pooling; the rest may differ.
    pub fn same_extraction(&self, other: &ProbeConfig) -> bool {
        self.layer == other.layer && self.pooling == other.pooling
    }
}

impl fmt::Display for ProbeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/layer{}/{}",
            self.encoder_id, self.treebank_id, self.task, self.layer, self.pooling
        )?;
        if let Some(c) = self.combiner {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CentroidSource {
    Predicted,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub task: Task,
    pub dim: usize,
    /// Indexed by class; `None` when nothing was assigned to the class.
    pub centroids: Vec<Option<Vec<f32>>>,
    pub counts: Vec<u64>,
    pub source: CentroidSource,
}

impl CentroidSet {
    pub fn classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn get(&self, class: usize) -> Option<&[f32]> {
        self.centroids.get(class).and_then(|c| c.as_deref())
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &[f32])> {
        self.centroids
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_deref().map(|c| (i, c)))
    }

    /// Same classes, every centroid replaced by zeros.
    pub fn zeroed(&self) -> CentroidSet {
        CentroidSet {
            centroids: self
                .centroids
                .iter()
                .map(|c| c.as_ref().map(|v| vec![0.0; v.len()]))
                .collect(),
            ..self.clone()
        }
    }
}

fn group_means(
    features: &FeatureSet,
    assignment: &[u32],
    classes: usize,
    source: CentroidSource,
) -> CentroidSet {
    let d = features.dim;
    let mut sums = vec![0f64; classes * d];
    let mut counts = vec![0u64; classes];
    for (row, &class) in features.rows().zip(assignment) {
        let c = class as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            *s += f64::from(v);
        }
    }
    let centroids = (0..classes)
        .map(|c| {
            (counts[c] > 0).then(|| {
                let n = counts[c] as f64;
                sums[c * d..(c + 1) * d]
                    .iter()
                    .map(|s| (s / n) as f32)
                    .collect()
            })
        })
        .collect();
    CentroidSet {
        task: features.task,
        dim: d,
        centroids,
        counts,
        source,
    }
}

/// Mean validation row per predicted class.
pub fn predicted_centroids(probe: &ProbeModel, val_features: &FeatureSet) -> Result<CentroidSet> {
    let predictions = predict(probe, val_features)?;
    Ok(group_means(
        val_features,
        &predictions,
        probe.classes,
        CentroidSource::Predicted,
    ))
}

/// Mean validation row per gold class.
pub fn gold_centroids(val_features: &FeatureSet, classes: usize) -> Result<CentroidSet> {
    if let Some(&bad) = val_features
        .gold_labels
        .iter()
        .find(|&&l| l as usize >= classes)
    {
        return Err(Error::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(group_means(
        val_features,
        &val_features.gold_labels,
        classes,
        CentroidSource::Gold,
    ))
}

pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (na > 0.0 && nb > 0.0).then(|| dot / (na.sqrt() * nb.sqrt()))
}

/// Cosine per class present in both sets; `None` for zero-norm centroids.
pub fn centroid_similarity(a: &CentroidSet, b: &CentroidSet) -> BTreeMap<usize, Option<f64>> {
    a.present()
        .filter_map(|(class, va)| b.get(class).map(|vb| (class, cosine(va, vb))))
        .collect()
}

/// Which coordinates a centroid is subtracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeutralizationScope {
    /// Full-width subtraction from every row.
    AllRows,
    /// A `d`-vector subtracted from the child half of `[head ; child]` rows.
    ChildHalf,
    /// The child half of a `2d` DEP centroid subtracted from `d`-wide rows.
    PosFromDepChildHalf,
}

impl NeutralizationScope {
    pub fn as_str(self) -> &'static str {
        match self {
            NeutralizationScope::AllRows => "all_rows",
            NeutralizationScope::ChildHalf => "child_half",
            NeutralizationScope::PosFromDepChildHalf => "pos_from_dep_child_half",
        }
    }
}

impl FromStr for NeutralizationScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_rows" => Ok(NeutralizationScope::AllRows),
            "child_half" => Ok(NeutralizationScope::ChildHalf),
            "pos_from_dep_child_half" => Ok(NeutralizationScope::PosFromDepChildHalf),
            _ => Err(format!("unknown neutralization scope {s:?}")),
        }
    }
}

/// Offset and vector to subtract from each row.
fn subtraction_plan(
    row_dim: usize,
    centroid: &[f32],
    scope: NeutralizationScope,
) -> Result<(usize, &[f32])> {
    let mismatch = |expected| Error::Dimension {
        context: "neutralizer centroid",
        expected,
        found: centroid.len(),
    };
    match scope {
        NeutralizationScope::AllRows => {
            if centroid.len() != row_dim {
                return Err(mismatch(row_dim));
            }
            Ok((0, centroid))
        }
        NeutralizationScope::ChildHalf => {
            if !row_dim.is_multiple_of(2) || centroid.len() * 2 != row_dim {
                return Err(mismatch(row_dim / 2));
            }
            Ok((row_dim / 2, centroid))
        }
        NeutralizationScope::PosFromDepChildHalf => {
            if centroid.len() != 2 * row_dim {
                return Err(mismatch(2 * row_dim));
            }
            Ok((0, &centroid[row_dim..]))
        }
    }
}

pub fn neutralize_features(
    features: &FeatureSet,
    centroid: &[f32],
    scope: NeutralizationScope,
) -> Result<FeatureSet> {
    let (offset, vector) = subtraction_plan(features.dim, centroid, scope)?;
    let mut out = features.clone();
    if features.dim > 0 {
        for row in out.vectors.chunks_exact_mut(features.dim) {
            for (x, &c) in row[offset..offset + vector.len()].iter_mut().zip(vector) {
                *x -= c;
            }
        }
    }
    Ok(out)
}

/// `(new - original) / original`.
pub fn relative_change(original_acc: f64, new_acc: f64) -> f64 {
    (new_acc - original_acc) / original_acc
}

/// Relative change from integer correct-counts over the same support;
/// `None` when nothing was originally correct.
pub fn relative_change_counts(correct_original: u64, correct_new: u64) -> Option<f64> {
    (correct_original > 0)
        .then(|| (correct_new as f64 - correct_original as f64) / correct_original as f64)
}

/// Per-class change in recall after subtracting `centroid` with `scope`.
fn neutralized_changes(
    probe: &ProbeModel,
    test_features: &FeatureSet,
    original: &EvalReport,
    centroid: &[f32],
    scope: NeutralizationScope,
) -> Result<Vec<Option<f64>>> {
    let shifted = neutralize_features(test_features, centroid, scope)?;
    let after = evaluate(probe, &shifted)?;
    Ok(original
        .correct
        .iter()
        .zip(&after.correct)
        .map(|(&o, &n)| relative_change_counts(o, n))
        .collect())
}

/// For each class with a centroid: subtract it from every row and record the
/// relative change of that class's own accuracy.
pub fn self_neutralization_drops(
    probe: &ProbeModel,
    test_features: &FeatureSet,
    centroids: &CentroidSet,
) -> Result<Vec<Option<f64>>> {
    let original = evaluate(probe, test_features)?;
    let mut drops = vec![None; probe.classes];
    for (class, centroid) in centroids.present() {
        if class >= probe.classes || original.support[class] == 0 {
            continue;
        }
        let changes = neutralized_changes(
            probe,
            test_features,
            &original,
            centroid,
            NeutralizationScope::AllRows,
        )?;
        drops[class] = changes[class];
    }
    Ok(drops)
}

/// Support-weighted mean of the defined per-class drops.
pub fn aggregate_drop(drops: &[Option<f64>], support: &[u64]) -> Option<f64> {
    let (mut num, mut den) = (0f64, 0f64);
    for (d, &s) in drops.iter().zip(support) {
        if let Some(d) = d {
            num += d * s as f64;
            den += s as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// One trained grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: ProbeConfig,
    pub val_accuracy: f64,
    /// Support-weighted mean self-neutralization change; more negative is
    /// better. `None` if no class could be measured.
    pub aggregate_drop: Option<f64>,
}

/// Keep the top quartile by accuracy, then take the largest aggregate drop.
/// Ties resolve by configuration order, so the input order is irrelevant.
pub fn select_config(grid: &[GridEntry]) -> Result<ProbeConfig> {
    if grid.is_empty() {
        return Err(Error::Config("cannot select from an empty grid".into()));
    }
    let mut ranked: Vec<&GridEntry> = grid.iter().collect();
    ranked.sort_by(|a, b| {
        b.val_accuracy
            .total_cmp(&a.val_accuracy)
            .then_with(|| a.config.cmp(&b.config))
    });
    let quartile = grid.len().div_ceil(4);
    let drop_key = |e: &GridEntry| {
        e.aggregate_drop
            .filter(|d| !d.is_nan())
            .unwrap_or(f64::INFINITY)
    };
    let best = ranked[..quartile]
        .iter()
        .min_by(|a, b| {
            drop_key(a)
                .total_cmp(&drop_key(b))
                .then_with(|| a.config.cmp(&b.config))
        })
        .expect("quartile is non-empty");
    Ok(best.config.clone())
}

/// Neutralizer rows by target columns of relative accuracy change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralizationMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `rows x cols`; `None` marks an absent cell (never stored as zero).
    pub cells: Vec<Vec<Option<f64>>>,
    /// Gold test support of each target column.
    pub col_support: Vec<u64>,
    /// Ordered provenance (`key`, `value`) pairs.
    pub metadata: Vec<(String, String)>,
    pub baseline: bool,
}

impl NeutralizationMatrix {
    pub fn cell(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.row_labels.iter().position(|l| l == row)?;
        let c = self.col_labels.iter().position(|l| l == col)?;
        self.cells[r][c]
    }

    /// Cells on matching row/column labels.
    pub fn diagonal(&self) -> Vec<(String, Option<f64>)> {
        self.row_labels
            .iter()
            .filter(|r| self.col_labels.contains(r))
            .map(|r| (r.clone(), self.cell(r, r)))
            .collect()
    }

    pub fn present_cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().flatten().filter_map(|c| *c)
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_owned(), value.to_string()));
        self
    }
}

/// A trained probe with everything needed to neutralize against it.
#[derive(Debug, Clone)]
pub struct NeutralizationRun {
    pub config: ProbeConfig,
    pub labels: LabelSet,
    pub probe: ProbeModel,
    /// Estimated on the validation split.
    pub centroids: CentroidSet,
    pub test_features: FeatureSet,
}

/// Core matrix builder: one probe pass per neutralizer.
#[allow(clippy::too_many_arguments)]
fn matrix_from(
    probe: &ProbeModel,
    test_features: &FeatureSet,
    target_labels: &LabelSet,
    neutralizer_labels: &LabelSet,
    neutralizers: &[(usize, Vec<f32>)],
    scope: NeutralizationScope,
    min_support: u64,
) -> Result<NeutralizationMatrix> {
    let original = evaluate(probe, test_features)?;
    let cols: Vec<usize> = (0..probe.classes.min(target_labels.len()))
        .filter(|&c| original.support[c] > 0)
        .collect();
    let mut cells = Vec::with_capacity(neutralizers.len());
    for (_, vector) in neutralizers {
        let changes = neutralized_changes(probe, test_features, &original, vector, scope)?;
        cells.push(
            cols.iter()
                .map(|&c| changes[c].filter(|_| original.support[c] >= min_support))
                .collect(),
        );
    }
    Ok(NeutralizationMatrix {
        row_labels: neutralizers
            .iter()
            .map(|(class, _)| neutralizer_labels.name(*class).to_owned())
            .collect(),
        col_labels: cols
            .iter()
            .map(|&c| target_labels.name(c).to_owned())
            .collect(),
        cells,
        col_support: cols.iter().map(|&c| original.support[c]).collect(),
        metadata: vec![
            ("scope".to_owned(), scope.as_str().to_owned()),
            ("min_support".to_owned(), min_support.to_string()),
        ],
        baseline: false,
    })
}

fn centroid_rows(centroids: &CentroidSet) -> Vec<(usize, Vec<f32>)> {
    centroids.present().map(|(c, v)| (c, v.to_vec())).collect()
}

/// Column of relative changes for `target_classes` after subtracting the
/// neutralizer's centroid from every test row. `None` if the neutralizer
/// has no centroid.
pub fn cross_neutralize(
    probe: &ProbeModel,
    test_features: &FeatureSet,
    centroids: &CentroidSet,
    neutralizer_class: usize,
    target_classes: &[usize],
) -> Result<Option<Vec<Option<f64>>>> {
    let Some(centroid) = centroids.get(neutralizer_class) else {
        return Ok(None);
    };
    let original = evaluate(probe, test_features)?;
    let changes = neutralized_changes(
        probe,
        test_features,
        &original,
        centroid,
        NeutralizationScope::AllRows,
    )?;
    Ok(Some(
        target_classes
            .iter()
            .map(|&t| changes.get(t).copied().flatten())
            .collect(),
    ))
}

fn run_metadata(
    kind: &str,
    neutralizer: &ProbeConfig,
    target: &ProbeConfig,
) -> Vec<(String, String)> {
    vec![
        ("experiment".to_owned(), kind.to_owned()),
        ("neutralizer_config".to_owned(), neutralizer.to_string()),
        ("target_config".to_owned(), target.to_string()),
    ]
}

/// Every class with a centroid against every target class, within one run.
pub fn cross_neutralization_matrix(
    run: &NeutralizationRun,
    min_support: u64,
) -> Result<NeutralizationMatrix> {
    let mut m = matrix_from(
        &run.probe,
        &run.test_features,
        &run.labels,
        &run.labels,
        &centroid_rows(&run.centroids),
        NeutralizationScope::AllRows,
        min_support,
    )?;
    let mut meta = run_metadata("xn", &run.config, &run.config);
    meta.append(&mut m.metadata);
    m.metadata = meta;
    Ok(m)
}

/// Norm-matched random directions in place of centroids, averaged over
/// `trials`.
pub fn random_baseline(
    run: &NeutralizationRun,
    seed: u64,
    trials: usize,
    min_support: u64,
) -> Result<NeutralizationMatrix> {
    if trials == 0 {
        return Err(Error::Config(
            "random baseline needs at least one trial".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = centroid_rows(&run.centroids);
    let mut total: Option<NeutralizationMatrix> = None;
    for _ in 0..trials {
        let random_rows: Vec<(usize, Vec<f32>)> = rows
            .iter()
            .map(|(class, centroid)| (*class, random_like(centroid, &mut rng)))
            .collect();
        let m = matrix_from(
            &run.probe,
            &run.test_features,
            &run.labels,
            &run.labels,
            &random_rows,
            NeutralizationScope::AllRows,
            min_support,
        )?;
        total = Some(match total {
            None => m,
            Some(mut acc) => {
                for (acc_row, row) in acc.cells.iter_mut().zip(&m.cells) {
                    for (a, b) in acc_row.iter_mut().zip(row) {
                        *a = match (*a, *b) {
                            (Some(x), Some(y)) => Some(x + y),
                            _ => None,
                        };
                    }
                }
                acc
            }
        });
    }
    let mut m = total.expect("trials >= 1");
    for row in &mut m.cells {
        for c in row.iter_mut().flatten() {
            *c /= trials as f64;
        }
    }
    let mut meta = run_metadata("random-baseline", &run.config, &run.config);
    meta.push(("seed".to_owned(), seed.to_string()));
    meta.push(("trials".to_owned(), trials.to_string()));
    meta.append(&mut m.metadata);
    m.metadata = meta;
    m.baseline = true;
    Ok(m)
}

/// A direction uniform on the sphere, scaled to `template`'s norm.
fn random_like(template: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let norm = template
        .iter()
        .map(|&v| f64::from(v).powi(2))
        .sum::<f64>()
        .sqrt();
    let draw: Vec<f64> = template
        .iter()
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let draw_norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || draw_norm == 0.0 {
        return vec![0.0; template.len()];
    }
    draw.iter().map(|v| (v / draw_norm * norm) as f32).collect()
}

/// Centroids of language A subtracted from language B's test features. The
/// target run must use the same encoder and the neutralizer's extraction
/// config.
pub fn cross_lingual_matrix(
    neutralizer_run: &NeutralizationRun,
    target_run: &NeutralizationRun,
    min_support: u64,
) -> Result<NeutralizationMatrix> {
    let (a, b) = (&neutralizer_run.config, &target_run.config);
    if a.encoder_id != b.encoder_id {
        return Err(Error::Config(format!(
            "cross-lingual runs need one encoder, got {} and {}",
            a.encoder_id, b.encoder_id
        )));
    }
    if a.task != b.task || !a.same_extraction(b) || a.combiner != b.combiner {
        return Err(Error::Config(format!(
            "target run {b} must be built under the neutralizer's config {a}"
        )));
    }
    let mut m = matrix_from(
        &target_run.probe,
        &target_run.test_features,
        &target_run.labels,
        &neutralizer_run.labels,
        &centroid_rows(&neutralizer_run.centroids),
        NeutralizationScope::AllRows,
        min_support,
    )?;
    let mut meta = run_metadata("xl-xn", a, b);
    meta.append(&mut m.metadata);
    m.metadata = meta;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossTaskDirection {
    PosNeutralizesDep,
    DepNeutralizesPos,
}

impl CrossTaskDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossTaskDirection::PosNeutralizesDep => "pos_neutralizes_dep",
            CrossTaskDirection::DepNeutralizesPos => "dep_neutralizes_pos",
        }
    }
}

impl FromStr for CrossTaskDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos_neutralizes_dep" => Ok(CrossTaskDirection::PosNeutralizesDep),
            "dep_neutralizes_pos" => Ok(CrossTaskDirection::DepNeutralizesPos),
            _ => Err(format!("unknown cross-task direction {s:?}")),
        }
    }
}

/// POS centroids against DEP child halves, or DEP child-half centroids
/// against POS rows.
pub fn cross_task_matrix(
    direction: CrossTaskDirection,
    pos_run: &NeutralizationRun,
    dep_run: &NeutralizationRun,
    min_support: u64,
) -> Result<NeutralizationMatrix> {
    let (pos, dep) = (&pos_run.config, &dep_run.config);
    if pos.task != Task::Pos || dep.task != Task::Dep {
        return Err(Error::Config(
            "cross-task runs need one POS and one DEP run".into(),
        ));
    }
    if dep.combiner != Some(PairCombiner::Concat) {
        return Err(Error::Config(format!(
            "cross-task neutralization needs concat DEP features, got {}",
            dep.combiner.map_or("none", |c| c.as_str())
        )));
    }
    if pos.encoder_id != dep.encoder_id || pos.treebank_id != dep.treebank_id {
        return Err(Error::Config(
            "cross-task runs need one encoder and one treebank".into(),
        ));
    }
    if !pos.same_extraction(dep) {
        return Err(Error::Config(format!(
            "target must use the neutralizer's layer and pooling ({pos} vs {dep})"
        )));
    }
    let (neutralizer, target, scope) = match direction {
        CrossTaskDirection::PosNeutralizesDep => (pos_run, dep_run, NeutralizationScope::ChildHalf),
        CrossTaskDirection::DepNeutralizesPos => {
            (dep_run, pos_run, NeutralizationScope::PosFromDepChildHalf)
        }
    };
    let mut m = matrix_from(
        &target.probe,
        &target.test_features,
        &target.labels,
        &neutralizer.labels,
        &centroid_rows(&neutralizer.centroids),
        scope,
        min_support,
    )?;
    let mut meta = run_metadata("xt-xn", &neutralizer.config, &target.config);
    meta.push(("direction".to_owned(), direction.as_str().to_owned()));
    meta.append(&mut m.metadata);
    m.metadata = meta;
    Ok(m)
}

//! CoNLL-U ingestion and task preprocessing.
//!
//! [`parse_conllu`] reads the standard 10-column format and keeps multiword
//! range lines (`3-4`) and empty nodes (`5.1`) as raw records. [`preprocess`]
//! then removes them, renumbers words contiguously and strips
//! language-specific relation subtypes (`obl:agent` becomes `obl`).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 17 universal part-of-speech tags, in UD documentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Upos> {
        Upos::ALL.get(index).copied()
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| format!("unknown UPOS tag {s:?}"))
    }
}

macro_rules! deprels {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Universal dependency relations (UD v2), without language subtypes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum DepRel {
            $($variant),*
        }

        impl DepRel {
            pub const ALL: &'static [DepRel] = &[$(DepRel::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(DepRel::$variant => $name),*
                }
            }
        }
    };
}

deprels! {
    Acl => "acl",
    Advcl => "advcl",
    Advmod => "advmod",
    Amod => "amod",
    Appos => "appos",
    Aux => "aux",
    Case => "case",
    Cc => "cc",
    Ccomp => "ccomp",
    Clf => "clf",
    Compound => "compound",
    Conj => "conj",
    Cop => "cop",
    Csubj => "csubj",
    Dep => "dep",
    Det => "det",
    Discourse => "discourse",
    Dislocated => "dislocated",
    Expl => "expl",
    Fixed => "fixed",
    Flat => "flat",
    Goeswith => "goeswith",
    Iobj => "iobj",
    List => "list",
    Mark => "mark",
    Nmod => "nmod",
    Nsubj => "nsubj",
    Nummod => "nummod",
    Obj => "obj",
    Obl => "obl",
    Orphan => "orphan",
    Parataxis => "parataxis",
    Punct => "punct",
    Reparandum => "reparandum",
    Root => "root",
    Vocative => "vocative",
    Xcomp => "xcomp",
}

impl DepRel {
    /// Relations that can label a DEP example: everything but `root`.
    pub fn labeled() -> impl Iterator<Item = DepRel> {
        DepRel::ALL.iter().copied().filter(|r| *r != DepRel::Root)
    }
}

impl fmt::Display for DepRel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepRel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DepRel::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown universal dependency relation {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Pos,
    Dep,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pos => "pos",
            Task::Dep => "dep",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(Task::Pos),
            "dep" => Ok(Task::Dep),
            _ => Err(format!("unknown task {s:?} (expected pos or dep)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// The split's name in UD file names (`en_gum-ud-dev.conllu`).
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "dev" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub form: String,
    pub upos: Upos,
    /// 0 for the root, otherwise a 1-based word index in the same sentence.
    pub head: usize,
    pub deprel: DepRel,
    /// Language-specific suffix after `:`, cleared by [`preprocess`].
    pub deprel_subtype: Option<String>,
}

impl Word {
    pub fn full_deprel(&self) -> String {
        match &self.deprel_subtype {
            Some(sub) => format!("{}:{}", self.deprel, sub),
            None => self.deprel.to_string(),
        }
    }
}

/// Lines that are not basic-tree words, kept verbatim until preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawRecord {
    /// Multiword token spanning word ids `start..=end`.
    Range {
        start: usize,
        end: usize,
        form: String,
    },
    /// Enhanced-graph empty node placed after word `after`.
    Empty { after: usize, line: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub words: Vec<Word>,
    pub source_split: Split,
    pub comments: Vec<String>,
    pub raw: Vec<RawRecord>,
}

impl AnnotatedSentence {
    /// Word indices (1-based) that yield a DEP example: all non-root words.
    pub fn dep_examples(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.deprel != DepRel::Root)
            .map(|(i, _)| i + 1)
    }

    pub fn example_count(&self, task: Task) -> usize {
        match task {
            Task::Pos => self.words.len(),
            Task::Dep => self.dep_examples().count(),
        }
    }

    pub fn range_count(&self) -> usize {
        self.raw
            .iter()
            .filter(|r| matches!(r, RawRecord::Range { .. }))
            .count()
    }
}

/// Ordered label inventory for one probing task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub task: Task,
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(task: Task, labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelSet {
            task,
            labels,
            index,
        }
    }

    /// The 17 UPOS tags.
    pub fn pos() -> Self {
        LabelSet::new(
            Task::Pos,
            Upos::ALL.iter().map(|u| u.as_str().to_owned()).collect(),
        )
    }

    /// The 36 universal relations that label DEP examples.
    pub fn dep() -> Self {
        LabelSet::new(
            Task::Dep,
            DepRel::labeled().map(|r| r.as_str().to_owned()).collect(),
        )
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Pos => LabelSet::pos(),
            Task::Dep => LabelSet::dep(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        if self.index.is_empty() && !self.labels.is_empty() {
            return self.labels.iter().position(|l| l == label);
        }
        self.index.get(label).copied()
    }

    /// Class index of a word under this task.
    pub fn label_of(&self, word: &Word) -> Option<usize> {
        match self.task {
            Task::Pos => self.index_of(word.upos.as_str()),
            Task::Dep => self.index_of(word.deprel.as_str()),
        }
    }
}

fn parse_err(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_owned(),
        line,
        message: message.into(),
    }
}

#[derive(Default)]
struct SentenceBuilder {
    comments: Vec<String>,
    words: Vec<(usize, Word)>,
    raw: Vec<RawRecord>,
    first_line: usize,
}

impl SentenceBuilder {
    fn is_empty(&self) -> bool {
        self.comments.is_empty() && self.words.is_empty() && self.raw.is_empty()
    }

    fn finish(self, source_name: &str, ordinal: usize, split: Split) -> Result<AnnotatedSentence> {
        let sentence_id = self
            .comments
            .iter()
            .find_map(|c| {
                let body = c.trim_start_matches('#').trim();
                body.strip_prefix("sent_id")
                    .map(|rest| rest.trim_start().trim_start_matches('=').trim().to_owned())
            })
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| format!("{source_name}:{ordinal}"));

        // Word ids must be strictly increasing; they are renumbered later.
        let mut ids = Vec::with_capacity(self.words.len());
        for (id, _) in &self.words {
            if let Some(&prev) = ids.last() {
                if *id <= prev {
                    return Err(parse_err(
                        source_name,
                        self.first_line,
                        format!(
                            "word ids not increasing in sentence {sentence_id} ({prev} then {id})"
                        ),
                    ));
                }
            }
            ids.push(*id);
        }
        let mut words = Vec::with_capacity(self.words.len());
        let contiguous = ids.iter().enumerate().all(|(i, id)| *id == i + 1);
        if contiguous {
            words.extend(self.words.into_iter().map(|(_, w)| w));
            return Ok(AnnotatedSentence {
                sentence_id,
                words,
                source_split: split,
                comments: self.comments,
                raw: self.raw,
            });
        }
        // Non-contiguous ids: keep the original numbering in the heads so
        // preprocessing can detect dangling references.
        let remap: HashMap<usize, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i + 1)).collect();
        for (_, mut w) in self.words {
            if w.head != 0 {
                w.head = *remap.get(&w.head).ok_or_else(|| Error::Treebank {
                    sentence_id: sentence_id.clone(),
                    message: format!("word {:?} has head {} which is not a word", w.form, w.head),
                })?;
            }
            words.push(w);
        }
        let raw = self
            .raw
            .into_iter()
            .map(|r| match r {
                RawRecord::Range { start, end, form } => RawRecord::Range {
                    start: remap.get(&start).copied().unwrap_or(start),
                    end: remap.get(&end).copied().unwrap_or(end),
                    form,
                },
                RawRecord::Empty { after, line } => RawRecord::Empty {
                    after: remap.get(&after).copied().unwrap_or(after),
                    line,
                },
            })
            .collect();
        Ok(AnnotatedSentence {
            sentence_id,
            words,
            source_split: split,
            comments: self.comments,
            raw,
        })
    }
}

/// Parse CoNLL-U text into sentences, in file order.
///
/// `source_name` is used in error messages and for sentence ids when a
/// block has no `# sent_id` comment (`"<source_name>:<ordinal>"`, 1-based).
pub fn parse_conllu<R: BufRead>(
    reader: R,
    source_name: &str,
    split: Split,
) -> Result<Vec<AnnotatedSentence>> {
    let mut sentences = Vec::new();
    let mut current = SentenceBuilder::default();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let line = if lineno == 1 {
            line.strip_prefix('\u{feff}').unwrap_or(line)
        } else {
            line
        };

        if line.trim().is_empty() {
            if !current.is_empty() {
                let done = std::mem::take(&mut current);
                sentences.push(done.finish(source_name, sentences.len() + 1, split)?);
            }
            continue;
        }
        if current.is_empty() {
            current.first_line = lineno;
        }
        if line.starts_with('#') {
            current.comments.push(line.to_owned());
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_err(
                source_name,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if let Some((start, end)) = id.split_once('-') {
            let parse_id = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(source_name, lineno, format!("bad range id {id:?}")))
            };
            let (start, end) = (parse_id(start)?, parse_id(end)?);
            if start == 0 || end < start {
                return Err(parse_err(
                    source_name,
                    lineno,
                    format!("bad range id {id:?}"),
                ));
            }
            current.raw.push(RawRecord::Range {
                start,
                end,
                form: cols[1].to_owned(),
            });
            continue;
        }
        if let Some((after, _)) = id.split_once('.') {
            let after = after
                .parse::<usize>()
                .map_err(|_| parse_err(source_name, lineno, format!("bad empty-node id {id:?}")))?;
            current.raw.push(RawRecord::Empty {
                after,
                line: line.to_owned(),
            });
            continue;
        }

        let index: usize = id
            .parse()
            .map_err(|_| parse_err(source_name, lineno, format!("bad word id {id:?}")))?;
        if index == 0 {
            return Err(parse_err(
                source_name,
                lineno,
                "word id 0 is reserved for the root",
            ));
        }
        let upos = cols[3]
            .parse::<Upos>()
            .map_err(|e| parse_err(source_name, lineno, e))?;
        let head: usize = cols[6].parse().map_err(|_| {
            parse_err(
                source_name,
                lineno,
                format!("non-integer head {:?}", cols[6]),
            )
        })?;
        let (base, subtype) = match cols[7].split_once(':') {
            Some((base, sub)) => (base, Some(sub.to_owned())),
            None => (cols[7], None),
        };
        let deprel = base
            .parse::<DepRel>()
            .map_err(|e| parse_err(source_name, lineno, e))?;
        current.words.push((
            index,
            Word {
                form: cols[1].to_owned(),
                upos,
                head,
                deprel,
                deprel_subtype: subtype,
            },
        ));
    }
    if !current.is_empty() {
        sentences.push(current.finish(source_name, sentences.len() + 1, split)?);
    }

    for s in &sentences {
        validate_heads(s)?;
    }
    Ok(sentences)
}

fn validate_heads(sentence: &AnnotatedSentence) -> Result<()> {
    let n = sentence.words.len();
    for (i, w) in sentence.words.iter().enumerate() {
        if w.head > n {
            return Err(Error::Treebank {
                sentence_id: sentence.sentence_id.clone(),
                message: format!(
                    "word {} ({:?}) has head {} beyond {} words",
                    i + 1,
                    w.form,
                    w.head,
                    n
                ),
            });
        }
    }
    Ok(())
}

/// Serialize sentences back to CoNLL-U. Columns not modelled here
/// (lemma, xpos, feats, deps, misc) are written as `_`.
pub fn write_conllu<W: Write>(sentences: &[AnnotatedSentence], mut out: W) -> Result<()> {
    for s in sentences {
        for c in &s.comments {
            writeln!(out, "{c}")?;
        }
        let write_empties = |out: &mut W, after: usize| -> std::io::Result<()> {
            for r in &s.raw {
                if let RawRecord::Empty { after: a, line } = r {
                    if *a == after {
                        writeln!(out, "{line}")?;
                    }
                }
            }
            Ok(())
        };
        write_empties(&mut out, 0)?;
        for (i, w) in s.words.iter().enumerate() {
            let id = i + 1;
            for r in &s.raw {
                if let RawRecord::Range { start, end, form } = r {
                    if *start == id {
                        writeln!(out, "{start}-{end}\t{form}\t_\t_\t_\t_\t_\t_\t_\t_")?;
                    }
                }
            }
            writeln!(
                out,
                "{id}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                w.form,
                w.upos,
                w.head,
                w.full_deprel()
            )?;
            write_empties(&mut out, id)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub removed_ranges: usize,
    pub removed_empty_nodes: usize,
    pub stripped_subtypes: usize,
    /// Sentences with no words left; dropped.
    pub dropped_sentences: usize,
    /// Root-labelled words, which yield no DEP example.
    pub root_words: usize,
    pub examples: usize,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub task: Task,
    pub sentences: Vec<AnnotatedSentence>,
    pub stats: PreprocessStats,
}

/// Remove multiword range tokens and empty nodes, renumber words, and strip
/// relation subtypes. Idempotent.
///
/// The word inventory is identical for both tasks, so one embedding store
/// serves POS and DEP. For DEP, root-labelled words stay in the sentence as
/// heads and are excluded at example construction
/// ([`AnnotatedSentence::dep_examples`]).
pub fn preprocess(sentences: Vec<AnnotatedSentence>, task: Task) -> Result<Preprocessed> {
    let mut stats = PreprocessStats::default();
    let mut kept = Vec::with_capacity(sentences.len());
    for mut s in sentences {
        for r in s.raw.drain(..) {
            match r {
                RawRecord::Range { .. } => stats.removed_ranges += 1,
                RawRecord::Empty { .. } => stats.removed_empty_nodes += 1,
            }
        }
        for w in &mut s.words {
            if w.deprel_subtype.take().is_some() {
                stats.stripped_subtypes += 1;
            }
        }
        // Ranges and empty nodes never occupy word ids, so the word list is
        // already contiguous; heads must still point at real words.
        let n = s.words.len();
        for w in &s.words {
            if w.head > n {
                return Err(Error::Treebank {
                    sentence_id: s.sentence_id.clone(),
                    message: format!("head {} of {:?} refers to a removed token", w.head, w.form),
                });
            }
        }
        if s.words.is_empty() {
            stats.dropped_sentences += 1;
            continue;
        }
        stats.root_words += s.words.iter().filter(|w| w.deprel == DepRel::Root).count();
        stats.examples += s.example_count(task);
        kept.push(s);
    }
    Ok(Preprocessed {
        task,
        sentences: kept,
        stats,
    })
}

/// Number of control labels; matches the UPOS inventory size.
pub const CONTROL_LABELS: usize = 17;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Control label of a word type under `seed`; uniform over `0..17`.
pub fn control_label(form: &str, seed: u64) -> usize {
    (splitmix64(fnv1a(form.as_bytes()) ^ splitmix64(seed)) % CONTROL_LABELS as u64) as usize
}

/// Replace every word's UPOS with a control label that depends only on its
/// form (word type) and the seed.
pub fn make_control_labels(dataset: &[AnnotatedSentence], seed: u64) -> Vec<AnnotatedSentence> {
    dataset
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for w in &mut s.words {
                w.upos = Upos::ALL[control_label(&w.form, seed)];
            }
            s
        })
        .collect()
}

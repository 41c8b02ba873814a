//! On-disk per-layer token embeddings with subword-to-word alignment.
//!
//! ## Layout
//!
//! All integers are little-endian `u32`; strings are a `u32` byte length
//! followed by UTF-8 bytes.
//!
//! ```text
//! magic            8 bytes  "NEUTRLZ1"
//! embed_dim        u32      d > 0
//! layer_count      u32
//! layer_ids        u32 x layer_count   each in 0..=24, distinct
//! sentence_count   u32
//! dtype            u32      1 = f32 little-endian (only value)
//! model_id         string
//! treebank_id      string
//! split            string
//! -- sentence table, sentence_count entries --
//! sentence_id      string
//! token_count      u32      T
//! word_count       u32      W
//! word_spans       (u32 start, u32 end) x W, half-open subword ranges
//! -- payload, layer-major --
//! for each layer in header order, for each sentence in order:
//!     T x d f32, row-major
//! ```
//!
//! The file ends exactly at the end of the payload.

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use memmap2::Mmap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::AnnotatedSentence;

pub const MAGIC: &[u8; 8] = b"NEUTRLZ1";
pub const DTYPE_F32_LE: u32 = 1;
pub const MAX_LAYER_ID: u32 = 24;

/// The layer grid probed by default.
pub const DEFAULT_LAYERS: [u32; 5] = [1, 3, 6, 9, 12];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub embed_dim: u32,
    pub layer_ids: Vec<u32>,
    pub sentence_count: u32,
    pub model_id: String,
    pub treebank_id: String,
    pub split: String,
}

impl StoreHeader {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Format("embed_dim must be positive".into()));
        }
        if self.layer_ids.is_empty() {
            return Err(Error::Format(
                "store must contain at least one layer".into(),
            ));
        }
        for (i, &l) in self.layer_ids.iter().enumerate() {
            if l > MAX_LAYER_ID {
                return Err(Error::Format(format!(
                    "layer id {l} exceeds {MAX_LAYER_ID}"
                )));
            }
            if self.layer_ids[..i].contains(&l) {
                return Err(Error::Format(format!("duplicate layer id {l}")));
            }
        }
        Ok(())
    }

    pub fn layer_position(&self, layer_id: u32) -> Result<usize> {
        self.layer_ids
            .iter()
            .position(|&l| l == layer_id)
            .ok_or_else(|| Error::UnknownLayer {
                requested: layer_id,
                available: self.layer_ids.clone(),
            })
    }
}

/// One sentence: alignment plus one `T x d` matrix per header layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sentence_id: String,
    pub token_count: u32,
    pub word_spans: Vec<(u32, u32)>,
    /// Indexed like `StoreHeader::layer_ids`.
    pub layers: Vec<Vec<f32>>,
}

fn check_spans(sentence_id: &str, spans: &[(u32, u32)], token_count: u32) -> Result<()> {
    let mut prev_end = 0;
    for &(start, end) in spans {
        if start >= end || end > token_count || start < prev_end {
            return Err(Error::Format(format!(
                "sentence {sentence_id}: span ({start}, {end}) is empty, overlapping, unsorted or beyond {token_count} tokens"
            )));
        }
        prev_end = end;
    }
    Ok(())
}

fn check_record(header: &StoreHeader, record: &SentenceRecord) -> Result<()> {
    check_spans(&record.sentence_id, &record.word_spans, record.token_count)?;
    if record.layers.len() != header.layer_ids.len() {
        return Err(Error::Format(format!(
            "sentence {}: {} layer matrices for {} header layers",
            record.sentence_id,
            record.layers.len(),
            header.layer_ids.len()
        )));
    }
    let expected = record.token_count as usize * header.embed_dim as usize;
    for m in &record.layers {
        if m.len() != expected {
            return Err(Error::Format(format!(
                "sentence {}: layer matrix has {} values, expected {} ({} tokens x d={})",
                record.sentence_id,
                m.len(),
                expected,
                record.token_count,
                header.embed_dim
            )));
        }
    }
    Ok(())
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    put_u32(w, len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Serialize a store to any writer.
pub fn encode_store<W: Write>(
    header: &StoreHeader,
    records: &[SentenceRecord],
    mut w: W,
) -> Result<()> {
    header.validate()?;
    if header.sentence_count as usize != records.len() {
        return Err(Error::Format(format!(
            "header declares {} sentences, {} records given",
            header.sentence_count,
            records.len()
        )));
    }
    for r in records {
        check_record(header, r)?;
    }

    w.write_all(MAGIC)?;
    put_u32(&mut w, header.embed_dim)?;
    put_u32(&mut w, header.layer_ids.len() as u32)?;
    for &l in &header.layer_ids {
        put_u32(&mut w, l)?;
    }
    put_u32(&mut w, header.sentence_count)?;
    put_u32(&mut w, DTYPE_F32_LE)?;
    put_str(&mut w, &header.model_id)?;
    put_str(&mut w, &header.treebank_id)?;
    put_str(&mut w, &header.split)?;

    for r in records {
        put_str(&mut w, &r.sentence_id)?;
        put_u32(&mut w, r.token_count)?;
        put_u32(&mut w, r.word_spans.len() as u32)?;
        for &(s, e) in &r.word_spans {
            put_u32(&mut w, s)?;
            put_u32(&mut w, e)?;
        }
    }
    for layer in 0..header.layer_ids.len() {
        for r in records {
            for v in &r.layers[layer] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a store file. The file appears at `path` only once complete.
pub fn write_store(header: &StoreHeader, records: &[SentenceRecord], path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let file = File::create(&tmp).map_err(|e| Error::path_io(&tmp, e))?;
    let result = encode_store(header, records, BufWriter::new(file));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::path_io(path, e))
}

/// Read-only access to per-layer embeddings, shared by file-backed and
/// in-memory stores.
pub trait EmbeddingSource {
    fn header(&self) -> &StoreHeader;
    fn sentence_id(&self, ordinal: usize) -> Result<&str>;
    fn word_spans(&self, ordinal: usize) -> Result<&[(u32, u32)]>;
    fn token_count(&self, ordinal: usize) -> Result<u32>;
    /// The `T x d` matrix of one sentence at one layer, row-major.
    fn layer_matrix(&self, layer_id: u32, ordinal: usize) -> Result<Cow<'_, [f32]>>;

    fn sentence_count(&self) -> usize {
        self.header().sentence_count as usize
    }

    fn embed_dim(&self) -> usize {
        self.header().embed_dim as usize
    }
}

/// Borrowed view of one sentence at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceView<'a> {
    pub sentence_id: &'a str,
    pub token_count: u32,
    pub word_spans: &'a [(u32, u32)],
    pub matrix: Cow<'a, [f32]>,
}

pub fn read_sentence<S: EmbeddingSource + ?Sized>(
    store: &S,
    layer_id: u32,
    ordinal: usize,
) -> Result<SentenceView<'_>> {
    Ok(SentenceView {
        sentence_id: store.sentence_id(ordinal)?,
        token_count: store.token_count(ordinal)?,
        word_spans: store.word_spans(ordinal)?,
        matrix: store.layer_matrix(layer_id, ordinal)?,
    })
}

#[derive(Debug, Clone)]
struct TableEntry {
    sentence_id: String,
    token_count: u32,
    word_spans: Vec<(u32, u32)>,
    /// Prefix sum of token counts before this sentence.
    token_offset: u64,
}

/// Memory-mapped store file. `Sync`; concurrent readers need no locking.
pub struct StoreReader {
    mmap: Mmap,
    header: StoreHeader,
    table: Vec<TableEntry>,
    payload_start: usize,
    total_tokens: u64,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }
}

impl StoreReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::path_io(path, e))?;
        // SAFETY: store files are immutable once written (writes go through
        // a temp file and rename).
        let mmap = unsafe { Mmap::map(&file) }.map_err(|e| Error::path_io(path, e))?;
        Self::from_mmap(mmap)
    }

    fn from_mmap(mmap: Mmap) -> Result<Self> {
        let (header, table, payload_start, total_tokens) = parse_layout(&mmap)?;
        Ok(StoreReader {
            mmap,
            header,
            table,
            payload_start,
            total_tokens,
        })
    }

    fn entry(&self, ordinal: usize) -> Result<&TableEntry> {
        self.table.get(ordinal).ok_or(Error::OrdinalOutOfRange {
            ordinal,
            count: self.table.len(),
        })
    }

    /// Materialize every record, all layers.
    pub fn to_records(&self) -> Result<Vec<SentenceRecord>> {
        (0..self.table.len())
            .map(|i| {
                let e = &self.table[i];
                let layers = self
                    .header
                    .layer_ids
                    .iter()
                    .map(|&l| self.layer_matrix(l, i).map(Cow::into_owned))
                    .collect::<Result<_>>()?;
                Ok(SentenceRecord {
                    sentence_id: e.sentence_id.clone(),
                    token_count: e.token_count,
                    word_spans: e.word_spans.clone(),
                    layers,
                })
            })
            .collect()
    }

    /// Summary of a structurally valid file.
    pub fn summary(&self) -> StoreSummary {
        StoreSummary {
            header: self.header.clone(),
            total_tokens: self.total_tokens,
            total_words: self.table.iter().map(|e| e.word_spans.len() as u64).sum(),
            file_bytes: self.mmap.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub header: StoreHeader,
    pub total_tokens: u64,
    pub total_words: u64,
    pub file_bytes: u64,
}

type Layout = (StoreHeader, Vec<TableEntry>, usize, u64);

fn parse_layout(buf: &[u8]) -> Result<Layout> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let embed_dim = c.u32("embed_dim")?;
    let layer_count = c.u32("layer_count")? as usize;
    if layer_count > MAX_LAYER_ID as usize + 1 {
        return Err(Error::Format(format!(
            "implausible layer count {layer_count}"
        )));
    }
    let layer_ids = (0..layer_count)
        .map(|_| c.u32("layer id"))
        .collect::<Result<Vec<_>>>()?;
    let sentence_count = c.u32("sentence_count")?;
    let dtype = c.u32("dtype")?;
    if dtype != DTYPE_F32_LE {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let header = StoreHeader {
        embed_dim,
        layer_ids,
        sentence_count,
        model_id: c.string("model_id")?,
        treebank_id: c.string("treebank_id")?,
        split: c.string("split")?,
    };
    header.validate()?;

    let mut table = Vec::with_capacity((sentence_count as usize).min(1 << 20));
    let mut token_offset = 0u64;
    for _ in 0..sentence_count {
        let sentence_id = c.string("sentence_id")?;
        let token_count = c.u32("token_count")?;
        let word_count = c.u32("word_count")? as usize;
        if word_count.saturating_mul(8) > buf.len() - c.pos {
            return Err(Error::Format(format!(
                "truncated file: sentence {sentence_id} declares {word_count} spans"
            )));
        }
        let word_spans = (0..word_count)
            .map(|_| Ok((c.u32("span start")?, c.u32("span end")?)))
            .collect::<Result<Vec<_>>>()?;
        check_spans(&sentence_id, &word_spans, token_count)?;
        table.push(TableEntry {
            sentence_id,
            token_count,
            word_spans,
            token_offset,
        });
        token_offset += u64::from(token_count);
    }
    let payload_start = c.pos;
    let expected = (payload_start as u64)
        .checked_add(
            token_offset
                .checked_mul(u64::from(embed_dim) * header.layer_ids.len() as u64 * 4)
                .ok_or_else(|| Error::Format("payload size overflow".into()))?,
        )
        .ok_or_else(|| Error::Format("payload size overflow".into()))?;
    if expected != buf.len() as u64 {
        return Err(Error::Format(format!(
            "file is {} bytes, layout requires {expected}",
            buf.len()
        )));
    }
    Ok((header, table, payload_start, token_offset))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

impl EmbeddingSource for StoreReader {
    fn header(&self) -> &StoreHeader {
        &self.header
    }

    fn sentence_id(&self, ordinal: usize) -> Result<&str> {
        Ok(&self.entry(ordinal)?.sentence_id)
    }

    fn word_spans(&self, ordinal: usize) -> Result<&[(u32, u32)]> {
        Ok(&self.entry(ordinal)?.word_spans)
    }

    fn token_count(&self, ordinal: usize) -> Result<u32> {
        Ok(self.entry(ordinal)?.token_count)
    }

    fn layer_matrix(&self, layer_id: u32, ordinal: usize) -> Result<Cow<'_, [f32]>> {
        let layer = self.header.layer_position(layer_id)?;
        let e = self.entry(ordinal)?;
        let d = u64::from(self.header.embed_dim);
        let start =
            self.payload_start as u64 + (layer as u64 * self.total_tokens + e.token_offset) * d * 4;
        let len = u64::from(e.token_count) * d * 4;
        let bytes = &self.mmap[start as usize..(start + len) as usize];
        Ok(Cow::Owned(decode_f32(bytes)))
    }
}

/// A store held entirely in memory; produced by [`synthesize_store`].
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    pub header: StoreHeader,
    pub records: Vec<SentenceRecord>,
}

impl MemoryStore {
    pub fn new(header: StoreHeader, records: Vec<SentenceRecord>) -> Result<Self> {
        header.validate()?;
        if header.sentence_count as usize != records.len() {
            return Err(Error::Format(
                "sentence_count does not match record count".into(),
            ));
        }
        for r in &records {
            check_record(&header, r)?;
        }
        Ok(MemoryStore { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_store(&self.header, &self.records, path)
    }

    fn record(&self, ordinal: usize) -> Result<&SentenceRecord> {
        self.records.get(ordinal).ok_or(Error::OrdinalOutOfRange {
            ordinal,
            count: self.records.len(),
        })
    }
}

impl EmbeddingSource for MemoryStore {
    fn header(&self) -> &StoreHeader {
        &self.header
    }

    fn sentence_id(&self, ordinal: usize) -> Result<&str> {
        Ok(&self.record(ordinal)?.sentence_id)
    }

    fn word_spans(&self, ordinal: usize) -> Result<&[(u32, u32)]> {
        Ok(&self.record(ordinal)?.word_spans)
    }

    fn token_count(&self, ordinal: usize) -> Result<u32> {
        Ok(self.record(ordinal)?.token_count)
    }

    fn layer_matrix(&self, layer_id: u32, ordinal: usize) -> Result<Cow<'_, [f32]>> {
        let layer = self.header.layer_position(layer_id)?;
        Ok(Cow::Borrowed(&self.record(ordinal)?.layers[layer]))
    }
}

/// Gaussian class clusters for oracle testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub embed_dim: usize,
    /// `class_count x embed_dim`, row-major.
    pub class_means: Vec<f32>,
    pub within_class_stddev: f32,
    pub words_per_class: usize,
    pub layer_ids: Vec<u32>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Means `scale * e_k` on the first `class_count` axes.
    pub fn orthogonal(
        class_count: usize,
        embed_dim: usize,
        scale: f32,
        within_class_stddev: f32,
        words_per_class: usize,
        seed: u64,
    ) -> Self {
        let mut class_means = vec![0.0; class_count * embed_dim];
        for k in 0..class_count.min(embed_dim) {
            class_means[k * embed_dim + k] = scale;
        }
        SyntheticSpec {
            class_count,
            embed_dim,
            class_means,
            within_class_stddev,
            words_per_class,
            layer_ids: DEFAULT_LAYERS.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config(
                "synthetic stores need at least 2 classes".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.class_means.len() != self.class_count * self.embed_dim {
            return Err(Error::Dimension {
                context: "synthetic class means",
                expected: self.class_count * self.embed_dim,
                found: self.class_means.len(),
            });
        }
        if !(self.within_class_stddev >= 0.0 && self.within_class_stddev.is_finite()) {
            return Err(Error::Config(
                "within-class stddev must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn class_mean(&self, class: usize) -> &[f32] {
        &self.class_means[class * self.embed_dim..(class + 1) * self.embed_dim]
    }
}

/// Embed each word as a single subword drawn from its class cluster.
///
/// The class of a word is its UPOS index, which must be below
/// `spec.class_count`. Draws run layer by layer, then in sentence and word
/// order, from one seeded stream.
pub fn synthesize_store(
    spec: &SyntheticSpec,
    sentences: &[AnnotatedSentence],
    model_id: &str,
    treebank_id: &str,
    split: &str,
) -> Result<MemoryStore> {
    spec.validate()?;
    let d = spec.embed_dim;
    for s in sentences {
        if let Some(w) = s.words.iter().find(|w| w.upos.index() >= spec.class_count) {
            return Err(Error::Config(format!(
                "sentence {}: tag {} has class index {} >= {}",
                s.sentence_id,
                w.upos,
                w.upos.index(),
                spec.class_count
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records: Vec<SentenceRecord> = sentences
        .iter()
        .map(|s| SentenceRecord {
            sentence_id: s.sentence_id.clone(),
            token_count: s.words.len() as u32,
            word_spans: (0..s.words.len() as u32).map(|i| (i, i + 1)).collect(),
            layers: Vec::with_capacity(spec.layer_ids.len()),
        })
        .collect();
    for _ in &spec.layer_ids {
        for (s, rec) in sentences.iter().zip(records.iter_mut()) {
            let mut m = Vec::with_capacity(s.words.len() * d);
            for w in &s.words {
                for &mu in spec.class_mean(w.upos.index()) {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    m.push(mu + spec.within_class_stddev * z);
                }
            }
            rec.layers.push(m);
        }
    }
    let header = StoreHeader {
        embed_dim: d as u32,
        layer_ids: spec.layer_ids.clone(),
        sentence_count: sentences.len() as u32,
        model_id: model_id.to_owned(),
        treebank_id: treebank_id.to_owned(),
        split: split.to_owned(),
    };
    MemoryStore::new(header, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_sentences;
    use crate::treebank::Split;

    fn header(d: u32, layers: &[u32], n: u32) -> StoreHeader {
        StoreHeader {
            embed_dim: d,
            layer_ids: layers.to_vec(),
            sentence_count: n,
            model_id: "roberta-base".into(),
            treebank_id: "en_gum".into(),
            split: "train".into(),
        }
    }

    fn record(
        id: &str,
        t: u32,
        spans: Vec<(u32, u32)>,
        d: u32,
        layers: usize,
        base: f32,
    ) -> SentenceRecord {
        SentenceRecord {
            sentence_id: id.into(),
            token_count: t,
            word_spans: spans,
            layers: (0..layers)
                .map(|l| {
                    (0..t * d)
                        .map(|i| base + l as f32 * 1000.0 + i as f32 * 0.25)
                        .collect()
                })
                .collect(),
        }
    }

    fn encode(h: &StoreHeader, r: &[SentenceRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_store(h, r, &mut buf).unwrap();
        buf
    }

    #[test]
    fn header_layout_bytes() {
        let h = header(2, &[3], 0);
        let buf = encode(&h, &[]);
        assert_eq!(&buf[..8], b"NEUTRLZ1");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &3u32.to_le_bytes());
        assert_eq!(&buf[20..24], &0u32.to_le_bytes());
        assert_eq!(&buf[24..28], &DTYPE_F32_LE.to_le_bytes());
        assert_eq!(&buf[28..32], &12u32.to_le_bytes());
        assert_eq!(&buf[32..44], b"roberta-base");
        // model, treebank and split strings end the file for an empty store
        assert_eq!(buf.len(), 44 + 4 + 6 + 4 + 5);
    }

    #[test]
    fn payload_is_layer_major() {
        let h = header(1, &[1, 3], 2);
        let recs = vec![
            SentenceRecord {
                sentence_id: "a".into(),
                token_count: 1,
                word_spans: vec![(0, 1)],
                layers: vec![vec![1.0], vec![3.0]],
            },
            SentenceRecord {
                sentence_id: "b".into(),
                token_count: 1,
                word_spans: vec![(0, 1)],
                layers: vec![vec![2.0], vec![4.0]],
            },
        ];
        let buf = encode(&h, &recs);
        let tail: Vec<f32> = decode_f32(&buf[buf.len() - 16..]);
        assert_eq!(tail, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_is_format_error() {
        let h = header(4, &[1], 1);
        let mut r = record("s", 2, vec![(0, 2)], 4, 1, 0.0);
        r.layers[0].pop();
        assert!(matches!(
            encode_store(&h, &[r], Vec::new()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_spans_rejected() {
        let h = header(1, &[1], 1);
        for spans in [
            vec![(0, 0)],
            vec![(0, 2), (1, 3)],
            vec![(0, 4)],
            vec![(2, 3), (0, 1)],
        ] {
            let r = record("s", 3, spans.clone(), 1, 1, 0.0);
            assert!(encode_store(&h, &[r], Vec::new()).is_err(), "{spans:?}");
        }
    }

    #[test]
    fn roundtrip_file_and_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let d = 768;
        let h = header(d, &DEFAULT_LAYERS, 3);
        let recs = vec![
            record("s1", 4, vec![(1, 2), (2, 4)], d, 5, 0.5),
            record("s2", 1, vec![(0, 1)], d, 5, -3.0),
            record(
                "s3",
                6,
                vec![(1, 3), (3, 4), (4, 5)],
                d,
                5,
                f32::MIN_POSITIVE,
            ),
        ];
        write_store(&h, &recs, &path).unwrap();
        let reader = StoreReader::open(&path).unwrap();
        assert_eq!(reader.header(), &h);
        let back = reader.to_records().unwrap();
        for (a, b) in back.iter().zip(&recs) {
            assert_eq!(a.sentence_id, b.sentence_id);
            assert_eq!(a.word_spans, b.word_spans);
            for (ma, mb) in a.layers.iter().zip(&b.layers) {
                let bits_a: Vec<u32> = ma.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = mb.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
        }
        // random access in reverse order equals the sequential traversal
        for layer in DEFAULT_LAYERS.iter().rev() {
            for ord in (0..3).rev() {
                let view = read_sentence(&reader, *layer, ord).unwrap();
                let pos = h.layer_position(*layer).unwrap();
                assert_eq!(view.matrix.as_ref(), back[ord].layers[pos].as_slice());
            }
        }
    }

    #[test]
    fn empty_store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        write_store(&header(8, &[1], 0), &[], &path).unwrap();
        let reader = StoreReader::open(&path).unwrap();
        assert_eq!(reader.sentence_count(), 0);
        assert!(reader.to_records().unwrap().is_empty());
    }

    #[test]
    fn unknown_layer_and_ordinal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_store(
            &header(2, &[1, 3], 1),
            &[record("a", 1, vec![(0, 1)], 2, 2, 0.0)],
            &path,
        )
        .unwrap();
        let reader = StoreReader::open(&path).unwrap();
        match reader.layer_matrix(6, 0) {
            Err(Error::UnknownLayer {
                requested,
                available,
            }) => {
                assert_eq!(requested, 6);
                assert_eq!(available, vec![1, 3]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            reader.layer_matrix(1, 1),
            Err(Error::OrdinalOutOfRange {
                ordinal: 1,
                count: 1
            })
        ));
    }

    #[test]
    fn truncated_and_corrupt_files_rejected() {
        let h = header(2, &[1], 1);
        let buf = encode(&h, &[record("a", 2, vec![(0, 2)], 2, 1, 0.0)]);
        let dir = tempfile::tempdir().unwrap();
        for cut in [4, 20, buf.len() - 1] {
            let p = dir.path().join(format!("cut{cut}.bin"));
            std::fs::write(&p, &buf[..cut]).unwrap();
            assert!(StoreReader::open(&p).is_err(), "cut at {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        let p = dir.path().join("magic.bin");
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(StoreReader::open(&p), Err(Error::Format(_))));
        let mut long = buf;
        long.push(0);
        let p = dir.path().join("long.bin");
        std::fs::write(&p, &long).unwrap();
        assert!(StoreReader::open(&p).is_err());
    }

    #[test]
    fn header_validation() {
        assert!(header(0, &[1], 0).validate().is_err());
        assert!(header(4, &[25], 0).validate().is_err());
        assert!(header(4, &[1, 1], 0).validate().is_err());
        assert!(header(768, &DEFAULT_LAYERS, 0).validate().is_ok());
    }

    #[test]
    fn zero_noise_gives_exact_means() {
        let sents = synthetic_sentences(3, 20, 7, 1, Split::Train);
        let spec = SyntheticSpec::orthogonal(3, 4, 2.5, 0.0, 20, 9);
        let store = synthesize_store(&spec, &sents, "synth", "toy", "train").unwrap();
        for (s, r) in sents.iter().zip(&store.records) {
            assert_eq!(r.word_spans.len(), s.words.len());
            for (i, w) in s.words.iter().enumerate() {
                assert_eq!(
                    &r.layers[0][i * 4..(i + 1) * 4],
                    spec.class_mean(w.upos.index())
                );
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let sents = synthetic_sentences(4, 30, 5, 3, Split::Train);
        let spec = SyntheticSpec::orthogonal(4, 8, 1.0, 0.3, 30, 11);
        let a = synthesize_store(&spec, &sents, "m", "t", "train").unwrap();
        let b = synthesize_store(&spec, &sents, "m", "t", "train").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_rejects_out_of_range_class() {
        let sents = synthetic_sentences(5, 10, 5, 3, Split::Train);
        let spec = SyntheticSpec::orthogonal(3, 8, 1.0, 0.3, 10, 11);
        assert!(synthesize_store(&spec, &sents, "m", "t", "train").is_err());
    }

    #[test]
    fn synthetic_empirical_means() {
        // Law of large numbers: each coordinate mean lies within 3 sigma/sqrt(n)
        // of the generating mean (plus a small slack for 5*8 simultaneous checks).
        let n = 10_000;
        let sigma = 0.5f32;
        let sents = synthetic_sentences(2, n, 10, 5, Split::Train);
        let mut spec = SyntheticSpec::orthogonal(2, 8, 1.0, sigma, n, 21);
        spec.layer_ids = vec![1];
        let store = synthesize_store(&spec, &sents, "m", "t", "train").unwrap();
        let mut sums = [[0f64; 8]; 2];
        let mut counts = [0usize; 2];
        for (s, r) in sents.iter().zip(&store.records) {
            for (i, w) in s.words.iter().enumerate() {
                let c = w.upos.index();
                counts[c] += 1;
                for (j, sum) in sums[c].iter_mut().enumerate() {
                    *sum += f64::from(r.layers[0][i * 8 + j]);
                }
            }
        }
        for c in 0..2 {
            assert_eq!(counts[c], n);
            let bound = 3.5 * f64::from(sigma) / (n as f64).sqrt();
            for (j, sum) in sums[c].iter().enumerate() {
                let mean = sum / n as f64;
                let target = f64::from(spec.class_mean(c)[j]);
                assert!(
                    (mean - target).abs() <= bound,
                    "class {c} coord {j}: {mean} vs {target}"
                );
            }
        }
    }

    #[test]
    fn concurrent_readers_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let sents = synthetic_sentences(3, 50, 5, 2, Split::Test);
        let spec = SyntheticSpec::orthogonal(3, 16, 1.0, 0.2, 50, 3);
        let store = synthesize_store(&spec, &sents, "m", "t", "test").unwrap();
        store.write(&path).unwrap();
        let reader = StoreReader::open(&path).unwrap();
        std::thread::scope(|scope| {
            for t in 0..4 {
                let reader = &reader;
                let store = &store;
                scope.spawn(move || {
                    for ord in (0..reader.sentence_count()).rev().skip(t) {
                        let a = reader.layer_matrix(9, ord).unwrap();
                        let b = store.layer_matrix(9, ord).unwrap();
                        assert_eq!(a, b);
                    }
                });
            }
        });
    }
}

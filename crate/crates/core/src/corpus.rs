//! Data model shared by every metric: sentences, bags, corpora and
//! embedding tables, plus JSONL ingestion and bag resampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::rng;

/// Lowercases, NFKC-normalizes and splits `raw` on whitespace, isolating
/// every punctuation or symbol character as its own token.
pub fn tokenize(raw: &str) -> Result<Vec<String>> {
    if raw.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let normalized: String = raw
        .nfkc()
        .collect::<String>()
        .to_lowercase()
        .nfkc()
        .collect();

    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() || is_combining_mark(c) {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(tokens)
}

/// Stable sentence key derived from the raw text.
pub fn content_id(raw: &str) -> String {
    let digest = Sha256::digest(raw.as_bytes());
    hex::encode(&digest[..8])
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn in_bounds(&self, n: usize) -> bool {
        self.start < self.end && self.end <= n
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// One text occurrence. Field order matters: the derived `Ord` sorts by raw
/// text first, which is the canonical occurrence order used everywhere.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sentence {
    pub raw: String,
    pub id: String,
    pub tokens: Vec<String>,
    pub intent: Option<String>,
    pub carrier_span: Option<Span>,
    pub item_span: Option<Span>,
    pub attributes: Vec<String>,
}

impl Sentence {
    pub fn new(raw: &str) -> Result<Self> {
        let tokens = tokenize(raw)?;
        Ok(Sentence {
            raw: raw.to_string(),
            id: content_id(raw),
            tokens,
            intent: None,
            carrier_span: None,
            item_span: None,
            attributes: Vec::new(),
        })
    }

    /// Builds a sentence whose raw text is `tokens` joined by single spaces.
    /// Tokens produced by [`tokenize`] survive the round trip unchanged.
    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        Sentence::new(&tokens.join(" "))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_intent(mut self, intent: impl Into<String>) -> Self {
        self.intent = Some(intent.into());
        self
    }

    pub fn with_attributes<I, S>(mut self, attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attributes = attrs.into_iter().map(Into::into).collect();
        self
    }

    /// Attaches carrier and item spans, checking bounds and disjointness.
    /// The error carries `line = 0`; ingestion rewrites it.
    pub fn with_spans(mut self, carrier: Option<Span>, item: Option<Span>) -> Result<Self> {
        let n = self.tokens.len();
        let bad = |span: Span, what| Error::Span {
            path: PathBuf::new(),
            line: 0,
            span: (span.start, span.end),
            len: n,
            what,
        };
        if let Some(c) = carrier {
            if !c.in_bounds(n) {
                return Err(bad(c, "carrier"));
            }
        }
        if let Some(i) = item {
            if !i.in_bounds(n) {
                return Err(bad(i, "item"));
            }
        }
        if let (Some(c), Some(i)) = (carrier, item) {
            if c.overlaps(&i) {
                return Err(bad(i, "item overlaps carrier"));
            }
        }
        self.carrier_span = carrier;
        self.item_span = item;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn carrier_tokens(&self) -> Option<&[String]> {
        self.carrier_span.map(|s| &self.tokens[s.start..s.end])
    }

    pub fn item_tokens(&self) -> Option<&[String]> {
        self.item_span.map(|s| &self.tokens[s.start..s.end])
    }
}

/// A multiset of sentence occurrences for one context.
#[derive(Debug, Clone)]
pub struct Bag {
    pub context_id: String,
    pub items: Vec<Sentence>,
}

impl Bag {
    pub fn new(context_id: impl Into<String>, items: Vec<Sentence>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyBag);
        }
        Ok(Bag {
            context_id: context_id.into(),
            items,
        })
    }

    /// Convenience constructor from raw texts.
    pub fn from_texts<S: AsRef<str>>(context_id: impl Into<String>, texts: &[S]) -> Result<Self> {
        let items = texts
            .iter()
            .map(|t| Sentence::new(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Bag::new(context_id, items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Occurrence counts per raw text.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for s in &self.items {
            *out.entry(s.raw.as_str()).or_insert(0) += 1;
        }
        out
    }

    pub fn distinct_texts(&self) -> usize {
        self.counts().len()
    }

    /// Occurrences in canonical (sorted) order.
    pub fn canonical_items(&self) -> Vec<Sentence> {
        let mut items = self.items.clone();
        items.sort();
        items
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.items
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect()
    }

    pub fn with_items(&self, items: Vec<Sentence>) -> Result<Bag> {
        Bag::new(self.context_id.clone(), items)
    }
}

impl PartialEq for Bag {
    fn eq(&self, other: &Self) -> bool {
        self.context_id == other.context_id && self.counts() == other.counts()
    }
}

/// Reference bags keyed by context, plus an optional shared distractor pool.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub contexts: BTreeMap<String, Bag>,
    pub distractors: Vec<Sentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Distractor pool for one context: the explicit pool when present,
    /// otherwise every sentence of the other contexts. Texts that also occur
    /// in the context's own bag are removed.
    pub fn distractors_for(&self, context_id: &str) -> Vec<Sentence> {
        let own: BTreeSet<&str> = self
            .contexts
            .get(context_id)
            .map(|b| b.items.iter().map(|s| s.raw.as_str()).collect())
            .unwrap_or_default();
        let source: Box<dyn Iterator<Item = &Sentence>> = if self.distractors.is_empty() {
            Box::new(
                self.contexts
                    .iter()
                    .filter(|(k, _)| k.as_str() != context_id)
                    .flat_map(|(_, b)| b.items.iter()),
            )
        } else {
            Box::new(self.distractors.iter())
        };
        let mut seen = BTreeSet::new();
        let mut pool: Vec<Sentence> = source
            .filter(|s| !own.contains(s.raw.as_str()))
            .filter(|s| seen.insert(s.raw.clone()))
            .cloned()
            .collect();
        pool.sort();
        pool
    }

    /// Token vocabulary across every context, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.contexts.values().flat_map(|b| b.vocabulary()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SpanRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    carrier: Option<Span>,
    #[serde(skip_serializing_if = "Option::is_none")]
    item: Option<Span>,
}

fn default_count() -> i64 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    #[serde(default)]
    context_id: Option<String>,
    text: String,
    #[serde(default = "default_count")]
    count: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<SpanRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<Vec<String>>,
}

/// Reads a corpus JSONL file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

/// Parses corpus JSONL from any reader; `origin` labels error messages.
pub fn read_corpus<R: BufRead>(reader: R, origin: &Path) -> Result<Corpus> {
    let mut contexts: BTreeMap<String, Vec<Sentence>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |message: String| Error::Format {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        let mut sentence = Sentence::new(&rec.text).map_err(|e| fmt(e.to_string()))?;
        if let Some(id) = rec.id {
            sentence.id = id;
        }
        if let Some(intent) = rec.intent {
            sentence.intent = Some(intent);
        }
        if let Some(attrs) = rec.attributes {
            sentence.attributes = attrs;
        }
        if let Some(spans) = rec.spans {
            sentence = sentence
                .with_spans(spans.carrier, spans.item)
                .map_err(|e| match e {
                    Error::Span { span, len, what, .. } => Error::Span {
                        path: origin.to_path_buf(),
                        line: lineno,
                        span,
                        len,
                        what,
                    },
                    other => other,
                })?;
        }
        if rec.count < 1 {
            return Err(fmt(format!("count must be >= 1, got {}", rec.count)));
        }
        let context_id = rec
            .context_id
            .ok_or_else(|| fmt("missing field `context_id`".to_string()))?;
        let entry = contexts.entry(context_id).or_default();
        for _ in 0..rec.count {
            entry.push(sentence.clone());
        }
    }
    let contexts = contexts
        .into_iter()
        .map(|(k, items)| {
            let bag = Bag::new(k.clone(), items)?;
            Ok((k, bag))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(Corpus {
        contexts,
        distractors: Vec::new(),
    })
}

/// Writes a corpus as JSONL, collapsing identical occurrences into `count`.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for (context_id, bag) in &corpus.contexts {
        let mut grouped: BTreeMap<&Sentence, i64> = BTreeMap::new();
        for s in &bag.items {
            *grouped.entry(s).or_insert(0) += 1;
        }
        for (s, count) in grouped {
            let spans = if s.carrier_span.is_some() || s.item_span.is_some() {
                Some(SpanRecord {
                    carrier: s.carrier_span,
                    item: s.item_span,
                })
            } else {
                None
            };
            let rec = CorpusRecord {
                context_id: Some(context_id.clone()),
                text: s.raw.clone(),
                count,
                id: (s.id != content_id(&s.raw)).then(|| s.id.clone()),
                intent: s.intent.clone(),
                spans,
                attributes: (!s.attributes.is_empty()).then(|| s.attributes.clone()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(corpus, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dense sentence vectors keyed by sentence id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Number of ids that appeared more than once (last occurrence kept).
    pub duplicate_ids: usize,
    /// Model identifier from an optional header line.
    pub model: Option<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        let id = id.into();
        if self.dim == 0 {
            self.dim = vec.len();
        }
        if vec.len() != self.dim || vec.is_empty() {
            return Err(Error::Dimension {
                id,
                expected: self.dim,
                found: vec.len(),
            });
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value { id });
        }
        if self.vectors.insert(id, vec).is_some() {
            self.duplicate_ids += 1;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: Option<String>,
    // NaN/inf are not JSON numbers; accept them as strings so they surface
    // as ValueError rather than a parse failure.
    vec: Option<Vec<serde_json::Value>>,
    model: Option<String>,
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), path)
}

pub fn read_embeddings<R: BufRead>(reader: R, origin: &Path) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |message: String| Error::Format {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        let (id, raw_vec) = match (rec.id, rec.vec) {
            (Some(id), Some(v)) => (id, v),
            (None, None) if rec.model.is_some() => {
                table.model = rec.model;
                continue;
            }
            _ => return Err(fmt("expected fields `id` and `vec`".to_string())),
        };
        let mut vec = Vec::with_capacity(raw_vec.len());
        for v in raw_vec {
            let x = match &v {
                serde_json::Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
                serde_json::Value::String(s) => s.parse::<f64>().map_err(|_| fmt(format!("bad number {s:?}")))?,
                serde_json::Value::Null => f64::NAN,
                other => return Err(fmt(format!("bad vector entry {other}"))),
            };
            vec.push(x);
        }
        table.insert(id, vec)?;
    }
    Ok(table)
}

/// Writes the embedding JSONL, preceded by a `{"model": ..}` header line
/// when the table carries a model identifier.
pub fn write_embeddings<W: Write>(table: &EmbeddingTable, mut out: W) -> std::io::Result<()> {
    if let Some(model) = &table.model {
        writeln!(out, "{}", serde_json::json!({ "model": model }))?;
    }
    for (id, vec) in &table.vectors {
        writeln!(out, "{}", serde_json::json!({ "id": id, "vec": vec }))?;
    }
    Ok(())
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(table, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Uniform sample without replacement down to `cap` occurrences. Bags at or
/// under the cap come back unchanged.
pub fn downsample_bag(bag: &Bag, cap: usize, seed: u64) -> Bag {
    assert!(cap >= 1, "cap must be at least 1");
    if bag.len() <= cap {
        return bag.clone();
    }
    let items = bag.canonical_items();
    let mut rng = rng::rng(seed);
    let mut picked = index::sample(&mut rng, items.len(), cap).into_vec();
    picked.sort_unstable();
    Bag {
        context_id: bag.context_id.clone(),
        items: picked.into_iter().map(|i| items[i].clone()).collect(),
    }
}

/// Upsamples `bag` with replacement until it holds `target` occurrences.
pub fn upsample_bag(bag: &Bag, target: usize, seed: u64) -> Bag {
    if bag.len() >= target {
        return bag.clone();
    }
    let items = bag.canonical_items();
    let mut rng = rng::rng(seed);
    let mut out = items.clone();
    while out.len() < target {
        out.push(items[rng.gen_range(0..items.len())].clone());
    }
    Bag {
        context_id: bag.context_id.clone(),
        items: out,
    }
}

/// Brings both bags to `max(|g|, |r|)` by upsampling the smaller one.
pub fn equalize_sizes(g: &Bag, r: &Bag, seed: u64) -> (Bag, Bag) {
    let n = g.len().max(r.len());
    match g.len().cmp(&r.len()) {
        std::cmp::Ordering::Less => (upsample_bag(g, n, seed), r.clone()),
        std::cmp::Ordering::Greater => (g.clone(), upsample_bag(r, n, seed)),
        std::cmp::Ordering::Equal => (g.clone(), r.clone()),
    }
}

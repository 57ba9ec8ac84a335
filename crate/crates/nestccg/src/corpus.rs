//! Datasets, tag sets and precomputed token embeddings.
//!
//! File formats:
//! - tagged data: one `token<TAB>supertag` per line, blank line between
//!   sentences;
//! - raw data: one whitespace-tokenized sentence per line;
//! - embeddings: header `d0=<int> sentences=<int>`, then per sentence a
//!   line `sentence <index> rows=<n>` followed by `n` lines of `d0`
//!   space-separated floats.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Reserved label for supertags outside the tag set. Predictions of this
/// label always count as errors during evaluation.
pub const OTHER_TAG: &str = "OTHER";

/// A tokenized sentence. Tokens are non-empty and contain no whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Invalid("sentence must have at least one token".into()));
        }
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "invalid token {t:?}: tokens must be non-empty and whitespace-free"
                )));
            }
        }
        Ok(Sentence { tokens })
    }

    pub fn from_words(words: &[&str]) -> Self {
        Sentence::new(words.iter().map(|w| w.to_string()).collect())
            .expect("from_words requires valid tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a sentence always has at least one token
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tokens.join(" "))
    }
}

/// A sentence with one supertag per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    sentence: Sentence,
    tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new(sentence: Sentence, tags: Vec<String>) -> Result<Self> {
        if tags.len() != sentence.len() {
            return Err(Error::Invalid(format!(
                "tag count {} does not match token count {}",
                tags.len(),
                sentence.len()
            )));
        }
        Ok(TaggedSentence { sentence, tags })
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Ordered set of supertags with a reserved [`OTHER_TAG`] in the final
/// slot. Index lookup is total: unknown tags map to the OTHER index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    /// Builds a tag set from an explicit ordered list whose last entry
    /// must be [`OTHER_TAG`]; used when loading checkpoints.
    pub fn from_ordered(tags: Vec<String>) -> Result<Self> {
        if tags.last().map(String::as_str) != Some(OTHER_TAG) {
            return Err(Error::Invalid(format!(
                "tag list must end with the reserved {OTHER_TAG} tag"
            )));
        }
        let mut index = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate tag {t:?}")));
            }
        }
        Ok(TagSet { tags, index })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false // OTHER is always present
    }

    pub fn other_index(&self) -> usize {
        self.tags.len() - 1
    }

    /// Total lookup: a tag outside the set maps to the OTHER index.
    pub fn index_of(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(self.other_index())
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// Keeps the `max_tags` most frequent supertags (ties broken
/// lexicographically) and appends the reserved OTHER slot.
pub fn build_tagset(data: &[TaggedSentence], max_tags: usize) -> Result<TagSet> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot build a tag set from no data".into()));
    }
    if max_tags == 0 {
        return Err(Error::Invalid("max_tags must be at least 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for ts in data {
        for tag in ts.tags() {
            if tag != OTHER_TAG {
                *counts.entry(tag.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tags: Vec<String> = ranked
        .into_iter()
        .take(max_tags)
        .map(|(t, _)| t.to_string())
        .collect();
    tags.push(OTHER_TAG.to_string());
    TagSet::from_ordered(tags)
}

/// Which shape of dataset file to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Tagged,
    Raw,
}

/// Either kind of loaded dataset.
#[derive(Debug, Clone)]
pub enum Dataset {
    Tagged(Vec<TaggedSentence>),
    Raw(Vec<Sentence>),
}

pub fn load_dataset(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match kind {
        DatasetKind::Tagged => Ok(Dataset::Tagged(parse_tagged(&text, path)?)),
        DatasetKind::Raw => Ok(Dataset::Raw(parse_raw(&text, path)?)),
    }
}

pub fn parse_tagged(text: &str, path: impl AsRef<Path>) -> Result<Vec<TaggedSentence>> {
    let path = path.as_ref();
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>| -> Result<()> {
        if !tokens.is_empty() {
            let sentence = Sentence::new(std::mem::take(tokens))?;
            sentences.push(TaggedSentence::new(sentence, std::mem::take(tags))?);
        }
        Ok(())
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        let mut cols = line.split('\t');
        let token = cols.next().unwrap_or("");
        let tag = cols.next();
        let extra = cols.next();
        match (tag, extra) {
            (Some(tag), None) if !token.is_empty() && !tag.is_empty() => {
                if token.chars().any(char::is_whitespace) {
                    return Err(Error::format(
                        path,
                        lineno + 1,
                        format!("token {token:?} contains whitespace"),
                    ));
                }
                tokens.push(token.to_string());
                tags.push(tag.to_string());
            }
            (None, _) => {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("expected token<TAB>supertag, got {line:?}"),
                ))
            }
            _ => {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("wrong column count in {line:?}"),
                ))
            }
        }
    }
    flush(&mut tokens, &mut tags)?;
    if sentences.is_empty() {
        return Err(Error::format(path, 1, "file contains no sentences".to_string()));
    }
    Ok(sentences)
}

pub fn parse_raw(text: &str, path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let mut sentences = Vec::new();
    for line in text.lines() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            continue;
        }
        sentences.push(Sentence::new(tokens)?);
    }
    if sentences.is_empty() {
        return Err(Error::format(path, 1, "file contains no sentences".to_string()));
    }
    Ok(sentences)
}

/// Serializes tagged sentences back to the dataset format. Re-reading the
/// output reproduces the input modulo trailing blank lines.
pub fn render_tagged(data: &[TaggedSentence]) -> String {
    let blocks: Vec<String> = data
        .iter()
        .map(|ts| {
            ts.sentence()
                .tokens()
                .iter()
                .zip(ts.tags())
                .map(|(tok, tag)| format!("{tok}\t{tag}"))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    let mut out = blocks.join("\n\n");
    out.push('\n');
    out
}

pub fn render_raw(data: &[Sentence]) -> String {
    let mut out = data
        .iter()
        .map(|s| s.tokens().join(" "))
        .collect::<Vec<_>>()
        .join("\n");
    out.push('\n');
    out
}

/// Per-sentence blocks of precomputed token vectors, all of width `dim`.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    blocks: Vec<Matrix>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, blocks: Vec<Matrix>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            if b.cols() != dim {
                return Err(Error::Shape(format!(
                    "embedding block {i} has width {}, expected {dim}",
                    b.cols()
                )));
            }
        }
        Ok(EmbeddingTable { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, i: usize) -> &Matrix {
        &self.blocks[i]
    }
}

/// Loads an embedding file and validates its shape against `data`.
pub fn load_embeddings(path: impl AsRef<Path>, data: &[Sentence]) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, data, path)
}

pub fn parse_embeddings(
    text: &str,
    data: &[Sentence],
    path: impl AsRef<Path>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header".to_string()))?;
    let (dim, count) = parse_kv_header(header, &["d0", "sentences"], path, 1)
        .map(|vals| (vals[0], vals[1]))?;
    if count != data.len() {
        return Err(Error::Shape(format!(
            "embedding file declares {count} sentences, dataset has {}",
            data.len()
        )));
    }
    if dim == 0 {
        return Err(Error::format(path, 1, "d0 must be positive".to_string()));
    }

    let mut blocks = Vec::with_capacity(count);
    for (si, sentence) in data.iter().enumerate() {
        let (lineno, marker) = lines.next().ok_or_else(|| {
            Error::Shape(format!("missing block for sentence {si}"))
        })?;
        let expect = format!("sentence {si} ");
        if !marker.starts_with(&expect) || !marker.ends_with(&format!("rows={}", sentence.len())) {
            // Distinguish a wrong row count (shape error naming the
            // sentence) from a malformed marker line.
            if let Some(rows) = marker
                .strip_prefix(&expect)
                .and_then(|rest| rest.strip_prefix("rows="))
                .and_then(|n| n.parse::<usize>().ok())
            {
                return Err(Error::Shape(format!(
                    "sentence {si}: embedding block has {rows} rows, sentence has {} tokens",
                    sentence.len()
                )));
            }
            return Err(Error::format(
                path,
                lineno + 1,
                format!("expected \"sentence {si} rows={}\", got {marker:?}", sentence.len()),
            ));
        }
        let mut block = Matrix::zeros(sentence.len(), dim);
        for r in 0..sentence.len() {
            let (lineno, row) = lines.next().ok_or_else(|| {
                Error::Shape(format!("sentence {si}: missing embedding row {r}"))
            })?;
            let values: Vec<&str> = row.split_whitespace().collect();
            if values.len() != dim {
                return Err(Error::Shape(format!(
                    "sentence {si}: row {r} has {} values, expected {dim}",
                    values.len()
                )));
            }
            for (c, v) in values.iter().enumerate() {
                let parsed: f64 = v.parse().map_err(|_| {
                    Error::format(path, lineno + 1, format!("non-numeric field {v:?}"))
                })?;
                block.set(r, c, parsed);
            }
        }
        blocks.push(block);
    }
    EmbeddingTable::new(dim, blocks)
}

fn parse_kv_header(
    line: &str,
    keys: &[&str],
    path: &Path,
    lineno: usize,
) -> Result<Vec<usize>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != keys.len() {
        return Err(Error::format(
            path,
            lineno,
            format!("expected header fields {keys:?}, got {line:?}"),
        ));
    }
    let mut out = Vec::new();
    for (field, key) in fields.iter().zip(keys) {
        let value = field
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| {
                Error::format(path, lineno, format!("bad header field {field:?}"))
            })?;
        out.push(value);
    }
    Ok(out)
}

/// Sorted vocabulary of all distinct tokens in a corpus.
pub fn collect_vocabulary(data: &[Sentence]) -> Vec<String> {
    let mut words: BTreeSet<&str> = BTreeSet::new();
    for s in data {
        for t in s.tokens() {
            words.insert(t);
        }
    }
    words.into_iter().map(str::to_string).collect()
}

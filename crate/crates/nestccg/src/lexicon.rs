//! Unsupervised n-gram lexicon built from pointwise mutual information.
//!
//! Adjacent words whose PMI falls below a threshold get a delimiter
//! between them; the resulting segments of every training sentence are
//! collected into the lexicon.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Occurrence counts of every contiguous n-gram up to `max_len`, with
/// per-length totals for probability normalization.
#[derive(Debug, Clone)]
pub struct CountTable {
    counts: HashMap<Vec<String>, u64>,
    /// totals[k-1] = total count of length-k windows over the corpus.
    totals: Vec<u64>,
    max_len: usize,
}

impl CountTable {
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn count(&self, ngram: &[String]) -> u64 {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    pub fn count_words(&self, words: &[&str]) -> u64 {
        let key: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        self.count(&key)
    }

    pub fn total(&self, len: usize) -> u64 {
        assert!(len >= 1 && len <= self.max_len, "length out of range");
        self.totals[len - 1]
    }

    /// Probability of an n-gram under per-length normalization.
    pub fn probability(&self, ngram: &[String]) -> f64 {
        let total = self.total(ngram.len());
        if total == 0 {
            0.0
        } else {
            self.count(ngram) as f64 / total as f64
        }
    }
}

/// Counts every contiguous n-gram of length 1..=max_len with a sliding
/// (overlapping) window per sentence.
pub fn count_ngrams(data: &[Sentence], max_len: usize) -> Result<CountTable> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot count n-grams of an empty corpus".into()));
    }
    if max_len < 2 {
        return Err(Error::Invalid(
            "count_ngrams needs max_len >= 2 (bigrams are required for PMI)".into(),
        ));
    }
    let mut counts: HashMap<Vec<String>, u64> = HashMap::new();
    let mut totals = vec![0u64; max_len];
    for sentence in data {
        let toks = sentence.tokens();
        for len in 1..=max_len.min(toks.len()) {
            totals[len - 1] += (toks.len() - len + 1) as u64;
            for start in 0..=(toks.len() - len) {
                let key: Vec<String> = toks[start..start + len].to_vec();
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    Ok(CountTable {
        counts,
        totals,
        max_len,
    })
}

/// Natural-log PMI of two adjacent words:
/// `ln(p(left right) / (p(left) * p(right)))` with each probability
/// normalized by the total count of windows of its length.
///
/// An unseen bigram yields negative infinity (which forces a delimiter);
/// an unseen unigram is an error since it cannot occur for words observed
/// in training.
pub fn pmi(table: &CountTable, left: &str, right: &str) -> Result<f64> {
    let bigram = table.count_words(&[left, right]);
    if bigram == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let lcount = table.count_words(&[left]);
    let rcount = table.count_words(&[right]);
    if lcount == 0 || rcount == 0 {
        return Err(Error::Invalid(format!(
            "pmi: unigram count missing for {:?}",
            if lcount == 0 { left } else { right }
        )));
    }
    let p_bigram = bigram as f64 / table.total(2) as f64;
    let p_left = lcount as f64 / table.total(1) as f64;
    let p_right = rcount as f64 / table.total(1) as f64;
    Ok((p_bigram / (p_left * p_right)).ln())
}

/// Splits a sentence at every adjacent pair whose PMI is strictly below
/// the threshold. A PMI equal to the threshold keeps the pair together.
/// The segments concatenate back to the sentence.
pub fn segment(sentence: &Sentence, table: &CountTable, threshold: f64) -> Result<Vec<Vec<String>>> {
    let toks = sentence.tokens();
    let mut segments = Vec::new();
    let mut current = vec![toks[0].clone()];
    for i in 1..toks.len() {
        let score = pmi(table, &toks[i - 1], &toks[i])?;
        if score < threshold {
            segments.push(std::mem::take(&mut current));
        }
        current.push(toks[i].clone());
    }
    segments.push(current);
    Ok(segments)
}

/// The n-gram lexicon: segmentation output of the training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PmiLexicon {
    ngrams: BTreeSet<Vec<String>>,
    max_len: usize,
    threshold: f64,
}

impl PmiLexicon {
    pub fn new(ngrams: BTreeSet<Vec<String>>, max_len: usize, threshold: f64) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Invalid("lexicon max_len must be at least 1".into()));
        }
        for n in &ngrams {
            if n.is_empty() || n.len() > max_len {
                return Err(Error::Invalid(format!(
                    "lexicon entry {:?} violates length bound [1, {max_len}]",
                    n.join(" ")
                )));
            }
        }
        Ok(PmiLexicon {
            ngrams,
            max_len,
            threshold,
        })
    }

    pub fn contains(&self, ngram: &[String]) -> bool {
        self.ngrams.contains(ngram)
    }

    pub fn contains_words(&self, words: &[&str]) -> bool {
        let key: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        self.contains(&key)
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ngrams.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<String>> {
        self.ngrams.iter()
    }

    /// Entry counts grouped by n-gram length, for reporting.
    pub fn counts_by_length(&self) -> Vec<(usize, usize)> {
        let mut by_len: HashMap<usize, usize> = HashMap::new();
        for n in &self.ngrams {
            *by_len.entry(n.len()).or_insert(0) += 1;
        }
        let mut out: Vec<(usize, usize)> = by_len.into_iter().collect();
        out.sort_unstable();
        out
    }
}

/// Segments every training sentence and collects the segments. Segments
/// longer than `max_len` contribute all their contiguous sub-n-grams of
/// length exactly `max_len` instead of being dropped.
pub fn build_lexicon(data: &[Sentence], max_len: usize, threshold: f64) -> Result<PmiLexicon> {
    if max_len == 0 {
        return Err(Error::Invalid("lexicon max_len must be at least 1".into()));
    }
    // PMI only ever looks at unigrams and bigrams.
    let table = count_ngrams(data, 2)?;
    let mut ngrams: BTreeSet<Vec<String>> = BTreeSet::new();
    for sentence in data {
        for seg in segment(sentence, &table, threshold)? {
            if seg.len() <= max_len {
                ngrams.insert(seg);
            } else {
                for start in 0..=(seg.len() - max_len) {
                    ngrams.insert(seg[start..start + max_len].to_vec());
                }
            }
        }
    }
    PmiLexicon::new(ngrams, max_len, threshold)
}

/// Serializes a lexicon: header `maxlen=<int> threshold=<float>`, then one
/// n-gram per line, tokens space-separated, in sorted order.
pub fn render_lexicon(lexicon: &PmiLexicon) -> String {
    let mut out = format!("maxlen={} threshold={}\n", lexicon.max_len, lexicon.threshold);
    for ngram in &lexicon.ngrams {
        out.push_str(&ngram.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_lexicon(lexicon: &PmiLexicon, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_lexicon(lexicon)).map_err(|e| Error::io(path, e))
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<PmiLexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text, path)
}

pub fn parse_lexicon(text: &str, path: impl AsRef<Path>) -> Result<PmiLexicon> {
    let path = path.as_ref();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header".to_string()))?;
    let mut max_len = None;
    let mut threshold = None;
    for field in header.split_whitespace() {
        if let Some(v) = field.strip_prefix("maxlen=") {
            max_len = v.parse::<usize>().ok();
        } else if let Some(v) = field.strip_prefix("threshold=") {
            threshold = v.parse::<f64>().ok();
        }
    }
    let (max_len, threshold) = match (max_len, threshold) {
        (Some(m), Some(t)) if m >= 1 => (m, t),
        _ => {
            return Err(Error::format(
                path,
                1,
                format!("expected \"maxlen=<int> threshold=<float>\", got {header:?}"),
            ))
        }
    };
    let mut ngrams = BTreeSet::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ngram: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if ngram.is_empty() || ngram.len() > max_len {
            return Err(Error::format(
                path,
                lineno + 1,
                format!("n-gram length {} outside [1, {max_len}]", ngram.len()),
            ));
        }
        ngrams.insert(ngram);
    }
    PmiLexicon::new(ngrams, max_len, threshold)
}

//! Chunk extraction and sentence graphs.
//!
//! Lexicon n-grams are matched against a sentence; transitively
//! overlapping matches merge into chunks, uncovered tokens become
//! singleton chunks, and the chunk partition induces a symmetric 0/1
//! adjacency matrix with self-loops. In-chunk edges connect adjacent
//! words inside a chunk; cross-chunk edges connect the first and last
//! words of adjacent chunks. The matrix does not distinguish the two
//! edge types.

use std::collections::BTreeSet;
use std::fmt;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::lexicon::PmiLexicon;
use crate::tensor::Matrix;

/// Inclusive token-index span.
pub type Span = (usize, usize);

/// Disjoint, sorted spans that jointly cover `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPartition {
    chunks: Vec<Span>,
    n: usize,
}

impl ChunkPartition {
    pub fn chunks(&self) -> &[Span] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    /// Bracket rendering, e.g. `[all students] [are required to]`.
    pub fn render(&self, sentence: &Sentence) -> String {
        self.chunks
            .iter()
            .map(|&(s, e)| format!("[{}]", sentence.tokens()[s..=e].join(" ")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// All spans `[i, j]` whose tokens form a lexicon member, every
/// occurrence reported, in (start, end) order.
pub fn match_ngrams(sentence: &Sentence, lexicon: &PmiLexicon) -> Vec<Span> {
    let toks = sentence.tokens();
    let n = toks.len();
    let mut spans = Vec::new();
    for start in 0..n {
        let longest = lexicon.max_len().min(n - start);
        for len in 1..=longest {
            let window: Vec<&str> = toks[start..start + len].iter().map(String::as_str).collect();
            if lexicon.contains_words(&window) {
                spans.push((start, start + len - 1));
            }
        }
    }
    spans
}

/// Merges transitively overlapping spans into maximal spans and fills
/// uncovered tokens with singleton chunks. The result is a partition of
/// `0..n` and is invariant to the order of the input spans.
pub fn merge_chunks(spans: &[Span], n: usize) -> ChunkPartition {
    assert!(n > 0, "sentence length must be positive");
    for &(s, e) in spans {
        assert!(s <= e && e < n, "span ({s},{e}) out of bounds for n={n}");
    }
    let mut sorted: Vec<Span> = spans.to_vec();
    sorted.sort_unstable();

    let mut merged: Vec<Span> = Vec::new();
    for &(s, e) in &sorted {
        match merged.last_mut() {
            // overlap means sharing at least one token index
            Some(&mut (_, ref mut le)) if s <= *le => {
                if e > *le {
                    *le = e;
                }
            }
            _ => merged.push((s, e)),
        }
    }

    let mut chunks = Vec::new();
    let mut next = 0;
    for (s, e) in merged {
        while next < s {
            chunks.push((next, next));
            next += 1;
        }
        chunks.push((s, e));
        next = e + 1;
    }
    while next < n {
        chunks.push((next, next));
        next += 1;
    }
    ChunkPartition { chunks, n }
}

pub fn partition_sentence(sentence: &Sentence, lexicon: &PmiLexicon) -> ChunkPartition {
    merge_chunks(&match_ngrams(sentence, lexicon), sentence.len())
}

/// How the sentence graph is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Chunk-derived edges (subject to the edge-type flags).
    Chunk,
    /// Fully connected graph.
    Full,
    /// Self-loops only.
    None,
}

impl GraphMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chunk" => Ok(GraphMode::Chunk),
            "full" => Ok(GraphMode::Full),
            "none" => Ok(GraphMode::None),
            _ => Err(Error::Invalid(format!(
                "unknown graph mode {s:?} (expected chunk, full or none)"
            ))),
        }
    }
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::Chunk => "chunk",
            GraphMode::Full => "full",
            GraphMode::None => "none",
        })
    }
}

/// Which chunk-derived edge families to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeTypes {
    pub in_chunk: bool,
    pub cross_chunk: bool,
}

impl Default for EdgeTypes {
    fn default() -> Self {
        EdgeTypes {
            in_chunk: true,
            cross_chunk: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    InChunk,
    CrossChunk,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::InChunk => "in",
            EdgeKind::CrossChunk => "cross",
        })
    }
}

/// Typed edge list of a chunk partition with `i < j`, sorted, set
/// semantics (duplicate boundary pairs of single-word chunks collapse).
pub fn chunk_edges(partition: &ChunkPartition, edge_types: EdgeTypes) -> Vec<(usize, usize, EdgeKind)> {
    let mut edges: BTreeSet<(usize, usize, EdgeKind)> = BTreeSet::new();
    let chunks = partition.chunks();
    if edge_types.in_chunk {
        for &(s, e) in chunks {
            for i in s..e {
                edges.insert((i, i + 1, EdgeKind::InChunk));
            }
        }
    }
    if edge_types.cross_chunk {
        for pair in chunks.windows(2) {
            let (ls, le) = pair[0];
            let (rs, re) = pair[1];
            for a in [ls, le] {
                for b in [rs, re] {
                    edges.insert((a, b, EdgeKind::CrossChunk));
                }
            }
        }
    }
    edges.into_iter().collect()
}

/// Symmetric 0/1 adjacency matrix with a unit diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn identity(n: usize) -> Self {
        assert!(n > 0);
        let mut a = AdjacencyMatrix {
            n,
            bits: vec![0; n * n],
        };
        for i in 0..n {
            a.bits[i * n + i] = 1;
        }
        a
    }

    pub fn full(n: usize) -> Self {
        assert!(n > 0);
        AdjacencyMatrix {
            n,
            bits: vec![1; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j] != 0
    }

    /// Inserts the symmetric pair (i,j) and (j,i).
    pub fn connect(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = 1;
        self.bits[j * self.n + i] = 1;
    }

    /// Row sum including the self-loop.
    pub fn degree(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|&b| b as usize)
            .sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i))
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.n, self.bits.iter().map(|&b| b as f64).collect())
    }
}

/// Builds the adjacency matrix for a partition under the given mode.
/// `none` yields the identity, `full` the all-ones matrix, and `chunk`
/// self-loops plus the selected chunk-derived edges, symmetrized.
pub fn build_adjacency(
    partition: &ChunkPartition,
    n: usize,
    mode: GraphMode,
    edge_types: EdgeTypes,
) -> AdjacencyMatrix {
    assert_eq!(partition.sentence_len(), n, "partition does not cover n");
    match mode {
        GraphMode::None => AdjacencyMatrix::identity(n),
        GraphMode::Full => AdjacencyMatrix::full(n),
        GraphMode::Chunk => {
            let mut a = AdjacencyMatrix::identity(n);
            for (i, j, _) in chunk_edges(partition, edge_types) {
                a.connect(i, j);
            }
            a
        }
    }
}

/// One-call graph construction for a sentence under model flags.
/// `chunk` mode requires a lexicon.
pub fn sentence_graph(
    sentence: &Sentence,
    lexicon: Option<&PmiLexicon>,
    mode: GraphMode,
    edge_types: EdgeTypes,
) -> Result<AdjacencyMatrix> {
    match mode {
        GraphMode::None => Ok(AdjacencyMatrix::identity(sentence.len())),
        GraphMode::Full => Ok(AdjacencyMatrix::full(sentence.len())),
        GraphMode::Chunk => {
            let lexicon = lexicon.ok_or_else(|| {
                Error::Invalid("graph mode \"chunk\" requires a lexicon".into())
            })?;
            let partition = partition_sentence(sentence, lexicon);
            Ok(build_adjacency(
                &partition,
                sentence.len(),
                GraphMode::Chunk,
                edge_types,
            ))
        }
    }
}

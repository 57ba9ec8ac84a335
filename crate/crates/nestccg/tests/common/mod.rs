//! Shared oracles and generators for the integration suites. Everything
//! here recomputes results through deliberately naive code paths so the
//! library can be checked against independent arithmetic.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nestccg::categories::{matches, Category};
use nestccg::corpus::{Sentence, TaggedSentence};
use nestccg::derivation::{apply_binary, apply_unary, Candidate};
use nestccg::lexicon::PmiLexicon;

// ---------------------------------------------------------------------
// Brute-force PMI: rescans the corpus for every query.

pub struct BrutePmi {
    sentences: Vec<Vec<String>>,
}

impl BrutePmi {
    pub fn new(sentences: &[Sentence]) -> Self {
        BrutePmi {
            sentences: sentences.iter().map(|s| s.tokens().to_vec()).collect(),
        }
    }

    pub fn count(&self, words: &[&str]) -> u64 {
        let mut n = 0;
        for s in &self.sentences {
            if s.len() < words.len() {
                continue;
            }
            for start in 0..=(s.len() - words.len()) {
                if s[start..start + words.len()]
                    .iter()
                    .zip(words)
                    .all(|(a, b)| a == b)
                {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn total(&self, len: usize) -> u64 {
        self.sentences
            .iter()
            .map(|s| s.len().saturating_sub(len - 1) as u64)
            .sum()
    }

    pub fn pmi(&self, left: &str, right: &str) -> f64 {
        let bigram = self.count(&[left, right]);
        if bigram == 0 {
            return f64::NEG_INFINITY;
        }
        let p_bigram = bigram as f64 / self.total(2) as f64;
        let p_left = self.count(&[left]) as f64 / self.total(1) as f64;
        let p_right = self.count(&[right]) as f64 / self.total(1) as f64;
        (p_bigram / (p_left * p_right)).ln()
    }

    pub fn segment(&self, sentence: &Sentence, threshold: f64) -> Vec<Vec<String>> {
        let toks = sentence.tokens();
        let mut out = Vec::new();
        let mut current = vec![toks[0].clone()];
        for i in 1..toks.len() {
            if self.pmi(&toks[i - 1], &toks[i]) < threshold {
                out.push(std::mem::take(&mut current));
            }
            current.push(toks[i].clone());
        }
        out.push(current);
        out
    }
}

pub fn random_corpus(rng: &mut ChaCha8Rng, max_sentences: usize, max_len: usize, vocab: usize) -> Vec<Sentence> {
    let n = rng.gen_range(1..=max_sentences);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let toks: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..vocab)))
                .collect();
            Sentence::new(toks).unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------------
// Random categories.

const ATOM_BASES: [&str; 5] = ["S", "NP", "N", "PP", "conj"];
const FEATURES: [&str; 3] = ["dcl", "b", "nb"];

pub fn random_category(rng: &mut ChaCha8Rng, max_depth: usize) -> Category {
    if max_depth == 0 || rng.gen_bool(0.45) {
        let base = ATOM_BASES[rng.gen_range(0..ATOM_BASES.len())];
        if rng.gen_bool(0.35) {
            Category::atom_with_feature(base, FEATURES[rng.gen_range(0..FEATURES.len())])
        } else {
            Category::atom(base)
        }
    } else {
        let result = random_category(rng, max_depth - 1);
        let argument = random_category(rng, max_depth - 1);
        if rng.gen_bool(0.5) {
            Category::forward(result, argument)
        } else {
            Category::backward(result, argument)
        }
    }
}

// ---------------------------------------------------------------------
// Exhaustive derivation enumeration over all bracketings, candidate
// choices and rule applications, with the same unary closure semantics
// as the chart parser. Spans keep sets of (category, score) outcomes.

type Outcome = (Category, u64); // score stored as f64 bits for hashing

fn close_unary_outcomes(set: &mut HashSet<Outcome>) {
    let mut work: Vec<Outcome> = set.iter().cloned().collect();
    while let Some((cat, bits)) = work.pop() {
        for (ucat, _) in apply_unary(&cat) {
            let entry = (ucat, bits);
            if set.insert(entry.clone()) {
                work.push(entry);
            }
        }
    }
}

fn enumerate_span(
    candidates: &[Vec<Candidate>],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), HashSet<Outcome>>,
) -> HashSet<Outcome> {
    if let Some(hit) = memo.get(&(i, j)) {
        return hit.clone();
    }
    let mut set: HashSet<Outcome> = HashSet::new();
    if j - i == 1 {
        for cand in &candidates[i] {
            set.insert((cand.category.clone(), cand.log_prob.to_bits()));
        }
    } else {
        for k in (i + 1)..j {
            let left = enumerate_span(candidates, i, k, memo);
            let right = enumerate_span(candidates, k, j, memo);
            for (lc, lbits) in &left {
                for (rc, rbits) in &right {
                    let score = f64::from_bits(*lbits) + f64::from_bits(*rbits);
                    for (cat, _) in apply_binary(lc, rc) {
                        set.insert((cat, score.to_bits()));
                    }
                }
            }
        }
    }
    close_unary_outcomes(&mut set);
    memo.insert((i, j), set.clone());
    set
}

/// Best score per full-span category under exhaustive enumeration.
pub fn enumerate_full_span(candidates: &[Vec<Candidate>]) -> HashMap<Category, f64> {
    let n = candidates.len();
    let mut memo = HashMap::new();
    let outcomes = enumerate_span(candidates, 0, n, &mut memo);
    let mut best: HashMap<Category, f64> = HashMap::new();
    for (cat, bits) in outcomes {
        let score = f64::from_bits(bits);
        best.entry(cat)
            .and_modify(|s| {
                if score > *s {
                    *s = score;
                }
            })
            .or_insert(score);
    }
    best
}

/// Applies the default root preference (exact S[dcl] atom, then the best
/// S atom, then the best of all) to enumerated outcomes, mirroring the
/// chart parser's selection order.
pub fn oracle_root(best: &HashMap<Category, f64>) -> Option<(Category, f64)> {
    let s_dcl = Category::atom_with_feature("S", "dcl");
    if let Some(score) = best.get(&s_dcl) {
        return Some((s_dcl, *score));
    }
    let pick = |entries: Vec<(&Category, &f64)>| -> Option<(Category, f64)> {
        let mut sorted = entries;
        sorted.sort_by(|a, b| a.0.cmp(b.0)); // deterministic Ord order
        let mut out: Option<(Category, f64)> = None;
        for (c, s) in sorted {
            let better = match &out {
                None => true,
                Some((_, bs)) => *s > *bs,
            };
            if better {
                out = Some((c.clone(), *s));
            }
        }
        out
    };
    let s_atoms: Vec<(&Category, &f64)> = best
        .iter()
        .filter(|(c, _)| c.is_atom_base("S"))
        .collect();
    if let Some(found) = pick(s_atoms) {
        return Some(found);
    }
    pick(best.iter().collect())
}

pub fn random_candidates(rng: &mut ChaCha8Rng, len: usize, max_per_token: usize) -> Vec<Vec<Candidate>> {
    (0..len)
        .map(|_| {
            let k = rng.gen_range(1..=max_per_token);
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for _ in 0..k {
                let category = random_category(rng, 3);
                if seen.insert(category.clone()) {
                    out.push(Candidate {
                        category,
                        log_prob: -rng.gen_range(0.01..3.0),
                    });
                }
            }
            out
        })
        .collect()
}

/// Brute-force goal matching used to double-check explicit-goal parses.
pub fn oracle_goal_root(best: &HashMap<Category, f64>, goal: &Category) -> Option<f64> {
    best.iter()
        .filter(|(c, _)| matches(goal, c))
        .map(|(_, s)| *s)
        .max_by(|a, b| a.partial_cmp(b).unwrap())
}

// ---------------------------------------------------------------------
// Synthetic chunk-dependent corpus: every token's tag is a function of
// its chunk's boundary words, and boundary pairs are deliberately
// ambiguous at the single-token level.

pub struct SyntheticCorpus {
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
    pub lexicon: PmiLexicon,
    pub vocabulary: Vec<String>,
}

const SYN_FIRST: usize = 5; // a0..a4 chunk-initial words
const SYN_LAST: usize = 5; // b0..b4 chunk-final words
const SYN_MID: usize = 2; // m0..m1 trigram middles
const SYN_FILLER: usize = 5; // f0..f4 singleton fillers
const SYN_CLASSES: usize = 12;

pub fn synthetic_chunk_corpus(seed: u64, n_train: usize, n_dev: usize) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random but fixed tag for each (first, last) boundary pair.
    let tag_table: Vec<Vec<String>> = (0..SYN_FIRST)
        .map(|_| {
            (0..SYN_LAST)
                .map(|_| format!("C{:02}", rng.gen_range(0..SYN_CLASSES)))
                .collect()
        })
        .collect();

    let mut ngrams: BTreeSet<Vec<String>> = BTreeSet::new();
    for i in 0..SYN_FIRST {
        for j in 0..SYN_LAST {
            ngrams.insert(vec![format!("a{i}"), format!("b{j}")]);
            for k in 0..SYN_MID {
                ngrams.insert(vec![format!("a{i}"), format!("m{k}"), format!("b{j}")]);
            }
        }
    }
    for f in 0..SYN_FILLER {
        ngrams.insert(vec![format!("f{f}")]);
    }
    let lexicon = PmiLexicon::new(ngrams, 5, 0.0).unwrap();

    // Pair chunks are separated by filler singletons so that a token's
    // in-chunk partner is the only word of its class in the local
    // neighborhood; trigram middles force two-hop message passing.
    let gen_sentence = |rng: &mut ChaCha8Rng| -> TaggedSentence {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        let push_filler = |tokens: &mut Vec<String>, tags: &mut Vec<String>, rng: &mut ChaCha8Rng| {
            let f = rng.gen_range(0..SYN_FILLER);
            tokens.push(format!("f{f}"));
            tags.push(format!("F{f}"));
        };
        let pair_chunks = rng.gen_range(2..=4);
        if rng.gen_bool(0.3) {
            push_filler(&mut tokens, &mut tags, rng);
        }
        for c in 0..pair_chunks {
            let i = rng.gen_range(0..SYN_FIRST);
            let j = rng.gen_range(0..SYN_LAST);
            let tag = tag_table[i][j].clone();
            tokens.push(format!("a{i}"));
            tags.push(tag.clone());
            if rng.gen_bool(0.25) {
                let k = rng.gen_range(0..SYN_MID);
                tokens.push(format!("m{k}"));
                tags.push(tag.clone());
            }
            tokens.push(format!("b{j}"));
            tags.push(tag);
            if c + 1 < pair_chunks {
                push_filler(&mut tokens, &mut tags, rng);
            }
        }
        if rng.gen_bool(0.3) {
            push_filler(&mut tokens, &mut tags, rng);
        }
        TaggedSentence::new(Sentence::new(tokens).unwrap(), tags).unwrap()
    };

    let train: Vec<TaggedSentence> = (0..n_train).map(|_| gen_sentence(&mut rng)).collect();
    let dev: Vec<TaggedSentence> = (0..n_dev).map(|_| gen_sentence(&mut rng)).collect();

    let mut vocabulary: Vec<String> = Vec::new();
    for i in 0..SYN_FIRST {
        vocabulary.push(format!("a{i}"));
    }
    for j in 0..SYN_LAST {
        vocabulary.push(format!("b{j}"));
    }
    for k in 0..SYN_MID {
        vocabulary.push(format!("m{k}"));
    }
    for f in 0..SYN_FILLER {
        vocabulary.push(format!("f{f}"));
    }

    SyntheticCorpus {
        train,
        dev,
        lexicon,
        vocabulary,
    }
}

/// Best possible token accuracy for any model that sees only the token
/// itself: per word, the most frequent tag's share.
pub fn token_only_ceiling(data: &[TaggedSentence]) -> f64 {
    let mut per_word: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    let mut total = 0usize;
    for ts in data {
        for (tok, tag) in ts.sentence().tokens().iter().zip(ts.tags()) {
            *per_word
                .entry(tok.as_str())
                .or_default()
                .entry(tag.as_str())
                .or_insert(0) += 1;
            total += 1;
        }
    }
    let correct: usize = per_word
        .values()
        .map(|tags| tags.values().copied().max().unwrap_or(0))
        .sum();
    correct as f64 / total as f64
}

// ---------------------------------------------------------------------
// Misc helpers.

pub fn mk_sentence(words: &[&str]) -> Sentence {
    Sentence::from_words(words)
}

pub fn mk_tagged(words: &[&str], tags: &[&str]) -> TaggedSentence {
    TaggedSentence::new(
        Sentence::from_words(words),
        tags.iter().map(|t| t.to_string()).collect(),
    )
    .unwrap()
}

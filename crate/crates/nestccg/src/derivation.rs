//! CCG derivations over per-token supertag candidates: the combinatory
//! rule set, exhaustive CKY search scored by supertag log-probabilities,
//! and bracketed rendering.

use std::collections::BTreeMap;

use crate::categories::{matches, Category, Slash};
use crate::corpus::Sentence;

/// The closed rule inventory. Priorities order equal-score chart items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// Forward application: X/Y + Y' -> X.
    Fa,
    /// Backward application: Y' + X\Y -> X.
    Ba,
    /// Forward composition: X/Y + Y'/Z -> X/Z.
    Fc,
    /// Backward composition: Y'\Z + X\Y -> X\Z.
    Bc,
    /// Backward crossed composition: Y'/Z + X\Y -> X/Z.
    Bxc,
    /// Type-changing N -> NP.
    UnaryNNp,
    /// Forward type-raising of subjects: NP -> S/(S\NP).
    UnaryTypeRaise,
}

impl Rule {
    pub fn priority(self) -> u8 {
        match self {
            Rule::Fa => 0,
            Rule::Ba => 1,
            Rule::Fc => 2,
            Rule::Bc => 3,
            Rule::Bxc => 4,
            Rule::UnaryNNp => 5,
            Rule::UnaryTypeRaise => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Fa => "FA",
            Rule::Ba => "BA",
            Rule::Fc => "FC",
            Rule::Bc => "BC",
            Rule::Bxc => "BXC",
            Rule::UnaryNNp => "U_N_NP",
            Rule::UnaryTypeRaise => "U_TR_SUBJ",
        }
    }
}

/// Category produced when a functor with result `x` and formal argument
/// `y` consumes an actual match `actual`.
///
/// Modifier functors (result structurally equal to argument, X|X) pass
/// the actual category through, so clause features survive adjunction.
/// Otherwise the functor's declared result is used with clause-type
/// features on S atoms projected and other atomic features dropped,
/// matching how derived nodes print in CCGbank-style trees.
fn combine_result(x: &Category, y: &Category, actual: &Category) -> Category {
    if x == y {
        actual.clone()
    } else {
        project_features(x)
    }
}

fn project_features(c: &Category) -> Category {
    match c {
        Category::Atom { base, feature } => Category::Atom {
            base: base.clone(),
            feature: if base == "S" { feature.clone() } else { None },
        },
        Category::Functor {
            result,
            slash,
            argument,
        } => Category::Functor {
            result: Box::new(project_features(result)),
            slash: *slash,
            argument: Box::new(project_features(argument)),
        },
    }
}

/// All categories derivable from an adjacent pair, deduplicated by
/// (category, rule). The empty list means no rule fires.
pub fn apply_binary(left: &Category, right: &Category) -> Vec<(Category, Rule)> {
    let mut out: Vec<(Category, Rule)> = Vec::new();
    let push = |cat: Category, rule: Rule, out: &mut Vec<(Category, Rule)>| {
        if !out.iter().any(|(c, r)| *c == cat && *r == rule) {
            out.push((cat, rule));
        }
    };

    // FA: X/Y + Y' -> X
    if let Category::Functor {
        result: x,
        slash: Slash::Forward,
        argument: y,
    } = left
    {
        if matches(y, right) {
            push(combine_result(x, y, right), Rule::Fa, &mut out);
        }
    }

    // BA: Y' + X\Y -> X
    if let Category::Functor {
        result: x,
        slash: Slash::Backward,
        argument: y,
    } = right
    {
        if matches(y, left) {
            push(combine_result(x, y, left), Rule::Ba, &mut out);
        }
    }

    // FC: X/Y + Y'/Z -> X/Z
    if let (
        Category::Functor {
            result: x,
            slash: Slash::Forward,
            argument: y,
        },
        Category::Functor {
            result: y_actual,
            slash: Slash::Forward,
            argument: z,
        },
    ) = (left, right)
    {
        if matches(y, y_actual) {
            let r = combine_result(x, y, y_actual);
            push(
                Category::Functor {
                    result: Box::new(r),
                    slash: Slash::Forward,
                    argument: z.clone(),
                },
                Rule::Fc,
                &mut out,
            );
        }
    }

    // BC: Y'\Z + X\Y -> X\Z
    if let (
        Category::Functor {
            result: y_actual,
            slash: Slash::Backward,
            argument: z,
        },
        Category::Functor {
            result: x,
            slash: Slash::Backward,
            argument: y,
        },
    ) = (left, right)
    {
        if matches(y, y_actual) {
            let r = combine_result(x, y, y_actual);
            push(
                Category::Functor {
                    result: Box::new(r),
                    slash: Slash::Backward,
                    argument: z.clone(),
                },
                Rule::Bc,
                &mut out,
            );
        }
    }

    // BXC: Y'/Z + X\Y -> X/Z
    if let (
        Category::Functor {
            result: y_actual,
            slash: Slash::Forward,
            argument: z,
        },
        Category::Functor {
            result: x,
            slash: Slash::Backward,
            argument: y,
        },
    ) = (left, right)
    {
        if matches(y, y_actual) {
            let r = combine_result(x, y, y_actual);
            push(
                Category::Functor {
                    result: Box::new(r),
                    slash: Slash::Forward,
                    argument: z.clone(),
                },
                Rule::Bxc,
                &mut out,
            );
        }
    }

    out
}

/// Unary type-changing: N -> NP and subject type-raising NP -> S/(S\NP).
pub fn apply_unary(c: &Category) -> Vec<(Category, Rule)> {
    match c {
        Category::Atom { base, .. } if base == "N" => {
            vec![(Category::atom("NP"), Rule::UnaryNNp)]
        }
        Category::Atom { base, .. } if base == "NP" => {
            let s = Category::atom("S");
            let s_bs_np = Category::backward(s.clone(), Category::atom("NP"));
            vec![(
                Category::forward(s, s_bs_np),
                Rule::UnaryTypeRaise,
            )]
        }
        _ => Vec::new(),
    }
}

/// A supertag candidate for one token.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub category: Category,
    pub log_prob: f64,
}

/// One node of a derivation tree.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivNode {
    Leaf {
        position: usize,
        category: Category,
        log_prob: f64,
    },
    Unary {
        category: Category,
        rule: Rule,
        child: Box<DerivNode>,
    },
    Binary {
        category: Category,
        rule: Rule,
        left: Box<DerivNode>,
        right: Box<DerivNode>,
    },
}

impl DerivNode {
    pub fn category(&self) -> &Category {
        match self {
            DerivNode::Leaf { category, .. }
            | DerivNode::Unary { category, .. }
            | DerivNode::Binary { category, .. } => category,
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(usize, &'a Category, f64)>) {
        match self {
            DerivNode::Leaf {
                position,
                category,
                log_prob,
            } => out.push((*position, category, *log_prob)),
            DerivNode::Unary { child, .. } => child.collect_leaves(out),
            DerivNode::Binary { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }
}

/// A complete derivation: tree plus the sum of its leaf log-probs.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub root: DerivNode,
    pub score: f64,
}

impl Derivation {
    pub fn root_category(&self) -> &Category {
        self.root.category()
    }

    /// Leaves in token order as (position, category, log_prob).
    pub fn leaves(&self) -> Vec<(usize, &Category, f64)> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    /// Bracketed form: internal nodes as `(<category> <rule>| <children>)`,
    /// leaves as `<token>|<category>`.
    pub fn render(&self, sentence: &Sentence) -> String {
        fn go(node: &DerivNode, sentence: &Sentence, out: &mut String) {
            match node {
                DerivNode::Leaf {
                    position, category, ..
                } => {
                    out.push_str(sentence.token(*position));
                    out.push('|');
                    out.push_str(&category.to_string());
                }
                DerivNode::Unary {
                    category,
                    rule,
                    child,
                } => {
                    out.push('(');
                    out.push_str(&category.to_string());
                    out.push(' ');
                    out.push_str(rule.name());
                    out.push_str("| ");
                    go(child, sentence, out);
                    out.push(')');
                }
                DerivNode::Binary {
                    category,
                    rule,
                    left,
                    right,
                } => {
                    out.push('(');
                    out.push_str(&category.to_string());
                    out.push(' ');
                    out.push_str(rule.name());
                    out.push_str("| ");
                    go(left, sentence, out);
                    out.push(' ');
                    go(right, sentence, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        go(&self.root, sentence, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
enum How {
    Leaf {
        log_prob: f64,
    },
    Unary {
        rule: Rule,
        child: Category,
    },
    Binary {
        rule: Rule,
        split: usize,
        left: Category,
        right: Category,
    },
}

#[derive(Debug, Clone)]
struct Item {
    score: f64,
    how: How,
}

impl Item {
    /// Tie-break key: leaves beat derived items, then rule priority, then
    /// split point, all ascending.
    fn tie_key(&self) -> (i16, usize) {
        match &self.how {
            How::Leaf { .. } => (-1, 0),
            How::Unary { rule, .. } => (rule.priority() as i16, 0),
            How::Binary { rule, split, .. } => (rule.priority() as i16, *split),
        }
    }
}

fn strictly_better(a: &Item, b: &Item) -> bool {
    a.score > b.score || (a.score == b.score && a.tie_key() < b.tie_key())
}

type Cell = BTreeMap<Category, Item>;

/// Exhaustive CKY over the candidate lattice. Keeps the best item per
/// (span, category) — ties broken by rule priority then split point —
/// and returns the best full-span derivation for the goal.
///
/// With an explicit goal, full-span items must match it. With no goal
/// the preference order is: the S[dcl] atom, then the best S-based atom,
/// then the best item of any category. `None` means no full-span
/// derivation exists (a valid outcome).
pub fn cky_parse(candidates: &[Vec<Candidate>], goal: Option<&Category>) -> Option<Derivation> {
    let n = candidates.len();
    if n == 0 || candidates.iter().any(|c| c.is_empty()) {
        return None;
    }

    // chart[span_index(i, j)] holds span [i, j) for 0 <= i < j <= n.
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut chart: Vec<Cell> = vec![Cell::new(); (n + 1) * (n + 1)];

    let insert = |cell: &mut Cell, cat: Category, item: Item| -> bool {
        match cell.get_mut(&cat) {
            Some(existing) => {
                if strictly_better(&item, existing) {
                    *existing = item;
                    true
                } else {
                    false
                }
            }
            None => {
                cell.insert(cat, item);
                true
            }
        }
    };

    // Unary closure over a finished cell; re-derives successors whenever
    // a source category improves.
    let close_unary = |cell: &mut Cell| {
        let mut worklist: Vec<Category> = cell.keys().cloned().collect();
        while let Some(cat) = worklist.pop() {
            let (score, child) = match cell.get(&cat) {
                Some(item) => (item.score, cat.clone()),
                None => continue,
            };
            for (ucat, rule) in apply_unary(&cat) {
                let item = Item {
                    score,
                    how: How::Unary {
                        rule,
                        child: child.clone(),
                    },
                };
                if insert(cell, ucat.clone(), item) {
                    worklist.push(ucat);
                }
            }
        }
    };

    for (i, cands) in candidates.iter().enumerate() {
        let mut cell = Cell::new();
        for cand in cands {
            insert(
                &mut cell,
                cand.category.clone(),
                Item {
                    score: cand.log_prob,
                    how: How::Leaf {
                        log_prob: cand.log_prob,
                    },
                },
            );
        }
        close_unary(&mut cell);
        chart[idx(i, i + 1)] = cell;
    }

    for len in 2..=n {
        for i in 0..=(n - len) {
            let j = i + len;
            let mut cell = Cell::new();
            for k in (i + 1)..j {
                let left_cell = &chart[idx(i, k)];
                let right_cell = &chart[idx(k, j)];
                for (lcat, litem) in left_cell {
                    for (rcat, ritem) in right_cell {
                        for (cat, rule) in apply_binary(lcat, rcat) {
                            let item = Item {
                                score: litem.score + ritem.score,
                                how: How::Binary {
                                    rule,
                                    split: k,
                                    left: lcat.clone(),
                                    right: rcat.clone(),
                                },
                            };
                            insert(&mut cell, cat, item);
                        }
                    }
                }
            }
            close_unary(&mut cell);
            chart[idx(i, j)] = cell;
        }
    }

    let full = &chart[idx(0, n)];
    let root_cat = select_root(full, goal)?;
    let root = build_node(&chart, &idx, 0, n, &root_cat);
    let score = full[&root_cat].score;
    Some(Derivation { root, score })
}

/// Root preference over the full-span cell; see [`cky_parse`].
fn select_root(full: &Cell, goal: Option<&Category>) -> Option<Category> {
    let best_of = |mut iter: Box<dyn Iterator<Item = (&Category, &Item)> + '_>| {
        let first = iter.next()?;
        let mut best = first;
        for entry in iter {
            if entry.1.score > best.1.score {
                best = entry;
            }
        }
        Some(best.0.clone())
    };
    match goal {
        Some(goal) => {
            // Exact category beats a merely feature-compatible one on ties.
            let mut best: Option<(&Category, &Item)> = None;
            for (c, item) in full.iter().filter(|(c, _)| matches(goal, c)) {
                let better = match best {
                    None => true,
                    Some((bc, bi)) => {
                        item.score > bi.score
                            || (item.score == bi.score && c == goal && bc != goal)
                    }
                };
                if better {
                    best = Some((c, item));
                }
            }
            best.map(|(c, _)| c.clone())
        }
        None => {
            let s_dcl = Category::atom_with_feature("S", "dcl");
            if full.contains_key(&s_dcl) {
                return Some(s_dcl);
            }
            best_of(Box::new(
                full.iter().filter(|(c, _)| c.is_atom_base("S")),
            ))
            .or_else(|| best_of(Box::new(full.iter())))
        }
    }
}

fn build_node(
    chart: &[Cell],
    idx: &dyn Fn(usize, usize) -> usize,
    i: usize,
    j: usize,
    cat: &Category,
) -> DerivNode {
    let item = &chart[idx(i, j)][cat];
    match &item.how {
        How::Leaf { log_prob } => DerivNode::Leaf {
            position: i,
            category: cat.clone(),
            log_prob: *log_prob,
        },
        How::Unary { rule, child } => DerivNode::Unary {
            category: cat.clone(),
            rule: *rule,
            child: Box::new(build_node(chart, idx, i, j, child)),
        },
        How::Binary {
            rule,
            split,
            left,
            right,
        } => DerivNode::Binary {
            category: cat.clone(),
            rule: *rule,
            left: Box::new(build_node(chart, idx, i, *split, left)),
            right: Box::new(build_node(chart, idx, *split, j, right)),
        },
    }
}

/// Checks that every internal node of a derivation is re-derivable from
/// its children by its recorded rule; used by tests.
pub fn replay_is_sound(node: &DerivNode) -> bool {
    match node {
        DerivNode::Leaf { .. } => true,
        DerivNode::Unary {
            category,
            rule,
            child,
        } => {
            replay_is_sound(child)
                && apply_unary(child.category())
                    .iter()
                    .any(|(c, r)| c == category && r == rule)
        }
        DerivNode::Binary {
            category,
            rule,
            left,
            right,
        } => {
            replay_is_sound(left)
                && replay_is_sound(right)
                && apply_binary(left.category(), right.category())
                    .iter()
                    .any(|(c, r)| c == category && r == rule)
        }
    }
}

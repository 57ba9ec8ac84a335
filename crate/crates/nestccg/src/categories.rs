//! CCG category algebra: slash categories with optional atomic features,
//! parsing, canonical printing, and permissive feature matching.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slash {
    Forward,
    Backward,
}

impl fmt::Display for Slash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slash::Forward => "/",
            Slash::Backward => "\\",
        })
    }
}

/// Either an atom (`S`, `NP[nb]`, `,` ...) or a functor
/// `result <slash> argument`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Atom {
        base: String,
        feature: Option<String>,
    },
    Functor {
        result: Box<Category>,
        slash: Slash,
        argument: Box<Category>,
    },
}

impl Category {
    pub fn atom(base: &str) -> Category {
        Category::Atom {
            base: base.to_string(),
            feature: None,
        }
    }

    pub fn atom_with_feature(base: &str, feature: &str) -> Category {
        Category::Atom {
            base: base.to_string(),
            feature: Some(feature.to_string()),
        }
    }

    pub fn forward(result: Category, argument: Category) -> Category {
        Category::Functor {
            result: Box::new(result),
            slash: Slash::Forward,
            argument: Box::new(argument),
        }
    }

    pub fn backward(result: Category, argument: Category) -> Category {
        Category::Functor {
            result: Box::new(result),
            slash: Slash::Backward,
            argument: Box::new(argument),
        }
    }

    pub fn is_functor(&self) -> bool {
        matches!(self, Category::Functor { .. })
    }

    pub fn is_atom_base(&self, wanted: &str) -> bool {
        matches!(self, Category::Atom { base, .. } if base == wanted)
    }
}

impl fmt::Display for Category {
    /// Canonical form: sub-functors are parenthesized on both sides, so
    /// every category string parses back to the same structure and the
    /// CCGbank tag strings reprint identically.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Atom { base, feature } => match feature {
                Some(feat) => write!(f, "{base}[{feat}]"),
                None => write!(f, "{base}"),
            },
            Category::Functor {
                result,
                slash,
                argument,
            } => {
                if result.is_functor() {
                    write!(f, "({result})")?;
                } else {
                    write!(f, "{result}")?;
                }
                write!(f, "{slash}")?;
                if argument.is_functor() {
                    write!(f, "({argument})")
                } else {
                    write!(f, "{argument}")
                }
            }
        }
    }
}

/// Parses a category string.
///
/// Grammar: `Cat -> Basic | Cat '/' Basic | Cat '\' Basic` (slashes are
/// left-associative, so `A/B/C` is `(A/B)/C`), and
/// `Basic -> Atom [ '[' feature ']' ] | '(' Cat ')'`.
pub fn parse_category(input: &str) -> Result<Category> {
    let mut parser = Parser {
        input,
        bytes: input.as_bytes(),
        pos: 0,
    };
    let cat = parser.parse_cat()?;
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("trailing garbage"));
    }
    Ok(cat)
}

struct Parser<'a> {
    input: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::CategoryParse {
            input: self.input.to_string(),
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn parse_cat(&mut self) -> Result<Category> {
        let mut left = self.parse_basic()?;
        while let Some(c) = self.peek() {
            let slash = match c {
                b'/' => Slash::Forward,
                b'\\' => Slash::Backward,
                _ => break,
            };
            self.pos += 1;
            let right = self.parse_basic()?;
            left = Category::Functor {
                result: Box::new(left),
                slash,
                argument: Box::new(right),
            };
        }
        Ok(left)
    }

    fn parse_basic(&mut self) -> Result<Category> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_cat()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(_) => self.parse_atom(),
            None => Err(self.error("expected a category")),
        }
    }

    fn parse_atom(&mut self) -> Result<Category> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if matches!(c, b'/' | b'\\' | b'(' | b')' | b'[' | b']') || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("empty atom"));
        }
        let base = self.input[start..self.pos].to_string();
        let mut feature = None;
        if self.peek() == Some(b'[') {
            self.pos += 1;
            let fstart = self.pos;
            while let Some(c) = self.peek() {
                if c == b']' {
                    break;
                }
                if matches!(c, b'/' | b'\\' | b'(' | b')' | b'[') || c.is_ascii_whitespace() {
                    return Err(self.error("invalid character in feature"));
                }
                self.pos += 1;
            }
            if self.peek() != Some(b']') {
                return Err(self.error("unbalanced '['"));
            }
            if self.pos == fstart {
                return Err(self.error("empty feature"));
            }
            feature = Some(self.input[fstart..self.pos].to_string());
            self.pos += 1;
        }
        Ok(Category::Atom { base, feature })
    }
}

/// Permissive feature unification: atoms match when bases are equal and
/// either the features are equal or at least one side has none; functors
/// match when slashes are equal and both sub-parts match.
pub fn matches(formal: &Category, actual: &Category) -> bool {
    match (formal, actual) {
        (
            Category::Atom {
                base: fb,
                feature: ff,
            },
            Category::Atom {
                base: ab,
                feature: af,
            },
        ) => fb == ab && (ff == af || ff.is_none() || af.is_none()),
        (
            Category::Functor {
                result: fr,
                slash: fs,
                argument: fa,
            },
            Category::Functor {
                result: ar,
                slash: asl,
                argument: aa,
            },
        ) => fs == asl && matches(fr, ar) && matches(fa, aa),
        _ => false,
    }
}

//! Abstraction functions over AST paths and their canonical text encoding.
//!
//! Encodings (labels are percent-escaped, see [`crate::escape`]):
//!
//! | kind             | example                              |
//! |------------------|--------------------------------------|
//! | `id`             | `SymbolVar^VarDef_Sub_SymbolRef`     |
//! | `no-arrows`      | `SymbolVar,VarDef,Sub,SymbolRef`     |
//! | `forget-order`   | `Sub,SymbolRef,SymbolVar,VarDef`     |
//! | `first-top-last` | `SymbolVar\|VarDef\|SymbolRef`       |
//! | `first-last`     | `SymbolVar\|SymbolRef`               |
//! | `top`            | `VarDef`                             |
//! | `no-paths`       | `*`                                  |

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::escape::{escape_label, unescape};
use crate::paths::{AstPath, Direction};
use crate::tree::SyntaxTree;

const UP: char = '^';
const DOWN: char = '_';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbstractionKind {
    Id,
    NoArrows,
    ForgetOrder,
    FirstTopLast,
    FirstLast,
    Top,
    NoPaths,
}

impl AbstractionKind {
    pub const ALL: [AbstractionKind; 7] = [
        AbstractionKind::Id,
        AbstractionKind::NoArrows,
        AbstractionKind::ForgetOrder,
        AbstractionKind::FirstTopLast,
        AbstractionKind::FirstLast,
        AbstractionKind::Top,
        AbstractionKind::NoPaths,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AbstractionKind::Id => "id",
            AbstractionKind::NoArrows => "no-arrows",
            AbstractionKind::ForgetOrder => "forget-order",
            AbstractionKind::FirstTopLast => "first-top-last",
            AbstractionKind::FirstLast => "first-last",
            AbstractionKind::Top => "top",
            AbstractionKind::NoPaths => "no-paths",
        }
    }
}

impl fmt::Display for AbstractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbstractionError {
    #[error("unknown abstraction `{0}`")]
    UnknownKind(String),
    #[error("malformed encoded path `{0}`")]
    Malformed(String),
}

impl FromStr for AbstractionKind {
    type Err = AbstractionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AbstractionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AbstractionError::UnknownKind(s.to_string()))
    }
}

/// An abstracted path. Two paths are the same to the models iff their
/// encodings are byte-equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractPath(String);

impl AbstractPath {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for AbstractPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Applies `kind` to a path over `tree`.
pub fn abstract_path(tree: &SyntaxTree, path: &AstPath, kind: AbstractionKind) -> AbstractPath {
    let labels: Vec<&str> = path.nodes().iter().map(|&n| tree.kind(n)).collect();
    encode_labels(&labels, path.directions(), kind)
}

/// Applies `kind` to a path given as its label and direction sequences.
pub fn encode_labels(labels: &[&str], directions: &[Direction], kind: AbstractionKind) -> AbstractPath {
    debug_assert_eq!(labels.len(), directions.len() + 1);
    let top = directions.iter().take_while(|&&d| d == Direction::Up).count();
    let first = labels[0];
    let last = labels[labels.len() - 1];
    let encoded = match kind {
        AbstractionKind::Id => {
            let mut out = escape_label(first);
            for (dir, label) in directions.iter().zip(&labels[1..]) {
                out.push(match dir {
                    Direction::Up => UP,
                    Direction::Down => DOWN,
                });
                out.push_str(&escape_label(label));
            }
            out
        }
        AbstractionKind::NoArrows => join(labels.iter().copied(), ","),
        AbstractionKind::ForgetOrder => {
            let mut escaped: Vec<String> = labels.iter().map(|l| escape_label(l)).collect();
            escaped.sort_unstable();
            escaped.join(",")
        }
        AbstractionKind::FirstTopLast => join([first, labels[top], last], "|"),
        AbstractionKind::FirstLast => join([first, last], "|"),
        AbstractionKind::Top => escape_label(labels[top]),
        AbstractionKind::NoPaths => "*".to_string(),
    };
    AbstractPath(encoded)
}

fn join<'a>(labels: impl IntoIterator<Item = &'a str>, sep: &str) -> String {
    labels
        .into_iter()
        .map(escape_label)
        .collect::<Vec<_>>()
        .join(sep)
}

/// Recovers labels and directions from an `id` encoding.
pub fn decode_id(encoded: &str) -> Result<(Vec<String>, Vec<Direction>), AbstractionError> {
    let mut labels = Vec::new();
    let mut directions = Vec::new();
    let mut current = String::new();
    for ch in encoded.chars() {
        match ch {
            UP | DOWN => {
                if current.is_empty() {
                    return Err(AbstractionError::Malformed(encoded.to_string()));
                }
                labels.push(unescape(&std::mem::take(&mut current)));
                directions.push(if ch == UP { Direction::Up } else { Direction::Down });
            }
            _ => current.push(ch),
        }
    }
    if current.is_empty() {
        return Err(AbstractionError::Malformed(encoded.to_string()));
    }
    labels.push(unescape(&current));
    Ok((labels, directions))
}

/// Number of distinct encodings among `paths` under `kind`.
pub fn distinct_count<'a, I>(paths: I, kind: AbstractionKind) -> usize
where
    I: IntoIterator<Item = (&'a SyntaxTree, &'a AstPath)>,
{
    paths
        .into_iter()
        .map(|(tree, path)| abstract_path(tree, path, kind))
        .collect::<HashSet<_>>()
        .len()
}

//! OpenQASM 2.0 frontend: parsing into the flat [`Circuit`] form, emitting it
//! back to text, and structural validation.

mod circuit;
mod emit;
mod lexer;
mod parser;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use circuit::{Circuit, GateKind, Instruction};
pub use emit::emit;
pub use parser::parse;
pub use validate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCategory {
    Syntax,
    Unsupported,
    Semantic,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Syntax => "syntax",
            ErrorCategory::Unsupported => "unsupported",
            ErrorCategory::Semantic => "semantic",
        })
    }
}

/// A parse failure located at a 1-based line and column of the source.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{category} error at {line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub category: ErrorCategory,
}

impl ParseError {
    pub fn new(line: usize, column: usize, category: ErrorCategory, message: impl Into<String>) -> Self {
        ParseError {
            line,
            column,
            message: message.into(),
            category,
        }
    }
}

//! Factor expression DSL: prefix-call grammar, panel evaluation, and
//! tree-distance diversity metrics.

mod ast;
mod classical;
mod eval;
mod parse;
mod ted;

pub use ast::{BinaryFn, CsFn, Expr, Field, Num, TsFn, UnaryFn};
pub use classical::{classical_library, parse_library_text, CLASSICAL_FACTORS_TEXT};
pub use eval::{evaluate, FactorSignal};
pub use parse::parse;
pub use ted::{nted, phi_inter, phi_intra, tree_edit_distance, LabeledTree};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at {pos}: expected {expected}")]
    SyntaxError { pos: usize, expected: String },
    #[error("unknown function or field `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    ArityError { name: String, expected: usize, got: usize },
    #[error("bad window for `{name}`: {detail}")]
    BadWindow { name: String, detail: String },
    #[error("bad parameter for `{name}`: {detail}")]
    BadParameter { name: String, detail: String },
    #[error("field `{0}` not present in panel")]
    UnknownField(String),
    #[error("cross-sectional op over `{0}` found no day with at least 2 values")]
    EmptyCrossSection(String),
    #[error("expression contains canonical placeholders and cannot be evaluated")]
    NotEvaluable,
    #[error("need at least 2 factors, got {0}")]
    TooFewFactors(usize),
    #[error("reference library is empty")]
    EmptyReference,
}

//! Built-in classical reference factor set.
//!
//! Twenty hand-written expressions spanning momentum, reversal, volatility,
//! volume, and value templates. They serve as the frozen library for the
//! no-miner ablation and as the reference set B for the novelty metric.

use super::ast::Expr;
use super::parse::parse;
use super::DslError;

/// The shipped reference set, one expression per line (`#` comments allowed).
pub const CLASSICAL_FACTORS_TEXT: &str = include_str!("../../data/classical_factors.txt");

/// Parse a reference-set text file: one expression per line, blank lines and
/// `#` comments skipped.
pub fn parse_library_text(text: &str) -> Result<Vec<Expr>, DslError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse)
        .collect()
}

/// The built-in classical set with stable ids `classical_00` ….
pub fn classical_library() -> Vec<(String, Expr)> {
    parse_library_text(CLASSICAL_FACTORS_TEXT)
        .expect("embedded classical set parses")
        .into_iter()
        .enumerate()
        .map(|(i, e)| (format!("classical_{i:02}"), e))
        .collect()
}

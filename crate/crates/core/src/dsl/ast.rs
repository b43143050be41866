//! Expression tree for the factor DSL.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Real;

/// Raw data leaf: a panel field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Open,
    High,
    Low,
    Close,
    Volume,
    Pe,
    Ps,
    Pb,
    Dyr,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Open => "open",
            Field::High => "high",
            Field::Low => "low",
            Field::Close => "close",
            Field::Volume => "volume",
            Field::Pe => "pe",
            Field::Ps => "ps",
            Field::Pb => "pb",
            Field::Dyr => "dyr",
        }
    }

    pub fn from_name(s: &str) -> Option<Field> {
        Some(match s {
            "open" => Field::Open,
            "high" => Field::High,
            "low" => Field::Low,
            "close" => Field::Close,
            "volume" => Field::Volume,
            "pe" => Field::Pe,
            "ps" => Field::Ps,
            "pb" => Field::Pb,
            "dyr" => Field::Dyr,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryFn {
    Abs,
    Log,
    Sign,
    Neg,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Abs => "abs",
            UnaryFn::Log => "log",
            UnaryFn::Sign => "sign",
            UnaryFn::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryFn {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryFn {
    pub fn name(self) -> &'static str {
        match self {
            BinaryFn::Add => "add",
            BinaryFn::Sub => "sub",
            BinaryFn::Mul => "mul",
            BinaryFn::Div => "div",
        }
    }
}

/// Trailing-window time-series operators (per asset).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsFn {
    Mean,
    Std,
    Min,
    Max,
    Sum,
    Rank,
    Delta,
}

impl TsFn {
    pub fn name(self) -> &'static str {
        match self {
            TsFn::Mean => "ts_mean",
            TsFn::Std => "ts_std",
            TsFn::Min => "ts_min",
            TsFn::Max => "ts_max",
            TsFn::Sum => "ts_sum",
            TsFn::Rank => "ts_rank",
            TsFn::Delta => "ts_delta",
        }
    }
}

/// Per-day cross-sectional operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsFn {
    Rank,
    Zscore,
}

impl CsFn {
    pub fn name(self) -> &'static str {
        match self {
            CsFn::Rank => "cs_rank",
            CsFn::Zscore => "cs_zscore",
        }
    }
}

/// Numeric literal; `Hole` is the single placeholder canonicalization
/// substitutes for every literal (including windows and winsorize p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Num {
    Lit(Real),
    Hole,
}

impl Num {
    pub fn value(self) -> Option<Real> {
        match self {
            Num::Lit(v) => Some(v),
            Num::Hole => None,
        }
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Lit(v) => write!(f, "{v}"),
            Num::Hole => write!(f, "_"),
        }
    }
}

/// Parsed factor expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Field(Field),
    Num(Num),
    Unary(UnaryFn, Box<Expr>),
    Binary(BinaryFn, Box<Expr>, Box<Expr>),
    /// Windowed time-series op; the window is a literal child node.
    Ts(TsFn, Box<Expr>, Num),
    TsCorr(Box<Expr>, Box<Expr>, Num),
    Cs(CsFn, Box<Expr>),
    /// Two-sided quantile clipping at p and 1−p.
    Winsorize(Box<Expr>, Num),
}

impl Expr {
    /// Total node count, literals (windows/p) included.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Field(_) | Expr::Num(_) => 1,
            Expr::Unary(_, a) | Expr::Cs(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
            Expr::Ts(_, a, _) | Expr::Winsorize(a, _) => 2 + a.node_count(),
            Expr::TsCorr(a, b, _) => 2 + a.node_count() + b.node_count(),
        }
    }

    /// Replace every numeric literal (windows and winsorize p included)
    /// by the single placeholder, leaving the structure untouched.
    pub fn canonicalize(&self) -> Expr {
        match self {
            Expr::Field(f) => Expr::Field(*f),
            Expr::Num(_) => Expr::Num(Num::Hole),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.canonicalize())),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.canonicalize()), Box::new(b.canonicalize()))
            }
            Expr::Ts(op, a, _) => Expr::Ts(*op, Box::new(a.canonicalize()), Num::Hole),
            Expr::TsCorr(a, b, _) => {
                Expr::TsCorr(Box::new(a.canonicalize()), Box::new(b.canonicalize()), Num::Hole)
            }
            Expr::Cs(op, a) => Expr::Cs(*op, Box::new(a.canonicalize())),
            Expr::Winsorize(a, _) => Expr::Winsorize(Box::new(a.canonicalize()), Num::Hole),
        }
    }

    /// Fields referenced anywhere in the tree.
    pub fn fields(&self) -> Vec<Field> {
        let mut out = Vec::new();
        self.collect_fields(&mut out);
        out
    }

    fn collect_fields(&self, out: &mut Vec<Field>) {
        match self {
            Expr::Field(f) => out.push(*f),
            Expr::Num(_) => {}
            Expr::Unary(_, a) | Expr::Cs(_, a) | Expr::Ts(_, a, _) | Expr::Winsorize(a, _) => {
                a.collect_fields(out)
            }
            Expr::Binary(_, a, b) | Expr::TsCorr(a, b, _) => {
                a.collect_fields(out);
                b.collect_fields(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Field(x) => write!(f, "{}", x.name()),
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "{}({a},{b})", op.name()),
            Expr::Ts(op, a, w) => write!(f, "{}({a},{w})", op.name()),
            Expr::TsCorr(a, b, w) => write!(f, "ts_corr({a},{b},{w})"),
            Expr::Cs(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Winsorize(a, p) => write!(f, "cs_winsorize({a},{p})"),
        }
    }
}

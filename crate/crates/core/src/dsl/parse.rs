//! Recursive-descent parser for the prefix-call grammar
//! `expr := ident | number | func '(' expr {',' expr} ')'`.
//!
//! Identifiers are lowercase and whitespace is insignificant.

use super::ast::{BinaryFn, CsFn, Expr, Field, Num, TsFn, UnaryFn};
use super::DslError;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(Real),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Token, usize), DslError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Token::End, start));
        }
        let c = self.src[self.pos];
        match c {
            b'(' => {
                self.pos += 1;
                Ok((Token::LParen, start))
            }
            b')' => {
                self.pos += 1;
                Ok((Token::RParen, start))
            }
            b',' => {
                self.pos += 1;
                Ok((Token::Comma, start))
            }
            b'a'..=b'z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_lowercase()
                        || self.src[self.pos].is_ascii_digit()
                        || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
                Ok((Token::Ident(s), start))
            }
            b'-' | b'0'..=b'9' | b'.' => {
                self.pos += 1;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_digit()
                        || matches!(self.src[self.pos], b'.' | b'e' | b'E'))
                {
                    // exponent sign
                    if matches!(self.src[self.pos], b'e' | b'E')
                        && self.pos + 1 < self.src.len()
                        && matches!(self.src[self.pos + 1], b'+' | b'-')
                    {
                        self.pos += 1;
                    }
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: Real = text.parse().map_err(|_| DslError::SyntaxError {
                    pos: start,
                    expected: format!("number, got `{text}`"),
                })?;
                Ok((Token::Number(v), start))
            }
            other => Err(DslError::SyntaxError {
                pos: start,
                expected: format!("identifier, number, `(`, `)` or `,`, got `{}`", other as char),
            }),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<(Token, usize)>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&(Token, usize), DslError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn advance(&mut self) -> Result<(Token, usize), DslError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let (tok, pos) = self.advance()?;
        match tok {
            Token::Number(v) => Ok(Expr::Num(Num::Lit(v))),
            Token::Ident(name) => {
                if matches!(self.peek()?.0, Token::LParen) {
                    self.advance()?; // consume '('
                    let mut args = vec![self.expr()?];
                    loop {
                        let (t, p) = self.advance()?;
                        match t {
                            Token::Comma => args.push(self.expr()?),
                            Token::RParen => break,
                            other => {
                                return Err(DslError::SyntaxError {
                                    pos: p,
                                    expected: format!("`,` or `)`, got {other:?}"),
                                })
                            }
                        }
                    }
                    build_call(&name, args)
                } else if name == "_" {
                    Ok(Expr::Num(Num::Hole))
                } else {
                    Field::from_name(&name)
                        .map(Expr::Field)
                        .ok_or(DslError::UnknownFunction(name))
                }
            }
            other => Err(DslError::SyntaxError {
                pos,
                expected: format!("identifier, number or function call, got {other:?}"),
            }),
        }
    }
}

fn arity(name: &str, args: &[Expr], expected: usize) -> Result<(), DslError> {
    if args.len() != expected {
        Err(DslError::ArityError { name: name.to_string(), expected, got: args.len() })
    } else {
        Ok(())
    }
}

fn window_literal(name: &str, arg: &Expr) -> Result<Num, DslError> {
    let bad = |detail: String| DslError::BadWindow { name: name.to_string(), detail };
    match arg {
        Expr::Num(Num::Hole) => Ok(Num::Hole),
        Expr::Num(Num::Lit(v)) => {
            if v.fract() != 0.0 {
                return Err(bad(format!("window must be an integer, got {v}")));
            }
            if *v < 2.0 {
                return Err(bad(format!("window must be ≥ 2, got {v}")));
            }
            Ok(Num::Lit(*v))
        }
        other => Err(bad(format!("window must be a literal, got `{other}`"))),
    }
}

fn build_call(name: &str, mut args: Vec<Expr>) -> Result<Expr, DslError> {
    let unary = |f: UnaryFn, mut args: Vec<Expr>| -> Result<Expr, DslError> {
        arity(f.name(), &args, 1)?;
        Ok(Expr::Unary(f, Box::new(args.remove(0))))
    };
    let binary = |f: BinaryFn, mut args: Vec<Expr>| -> Result<Expr, DslError> {
        arity(f.name(), &args, 2)?;
        let b = args.remove(1);
        Ok(Expr::Binary(f, Box::new(args.remove(0)), Box::new(b)))
    };
    let ts = |f: TsFn, mut args: Vec<Expr>| -> Result<Expr, DslError> {
        arity(f.name(), &args, 2)?;
        let w = window_literal(f.name(), &args[1])?;
        Ok(Expr::Ts(f, Box::new(args.remove(0)), w))
    };
    let cs = |f: CsFn, mut args: Vec<Expr>| -> Result<Expr, DslError> {
        arity(f.name(), &args, 1)?;
        Ok(Expr::Cs(f, Box::new(args.remove(0))))
    };
    match name {
        "abs" => unary(UnaryFn::Abs, args),
        "log" => unary(UnaryFn::Log, args),
        "sign" => unary(UnaryFn::Sign, args),
        "neg" => unary(UnaryFn::Neg, args),
        "add" => binary(BinaryFn::Add, args),
        "sub" => binary(BinaryFn::Sub, args),
        "mul" => binary(BinaryFn::Mul, args),
        "div" => binary(BinaryFn::Div, args),
        "ts_mean" => ts(TsFn::Mean, args),
        "ts_std" => ts(TsFn::Std, args),
        "ts_min" => ts(TsFn::Min, args),
        "ts_max" => ts(TsFn::Max, args),
        "ts_sum" => ts(TsFn::Sum, args),
        "ts_rank" => ts(TsFn::Rank, args),
        "ts_delta" => ts(TsFn::Delta, args),
        "ts_corr" => {
            arity("ts_corr", &args, 3)?;
            let w = window_literal("ts_corr", &args[2])?;
            let b = args.remove(1);
            Ok(Expr::TsCorr(Box::new(args.remove(0)), Box::new(b), w))
        }
        "cs_rank" => cs(CsFn::Rank, args),
        "cs_zscore" => cs(CsFn::Zscore, args),
        "cs_winsorize" => {
            arity("cs_winsorize", &args, 2)?;
            let p = match args.remove(1) {
                Expr::Num(Num::Hole) => Num::Hole,
                Expr::Num(Num::Lit(v)) if v > 0.0 && v < 0.5 => Num::Lit(v),
                other => {
                    return Err(DslError::BadParameter {
                        name: "cs_winsorize".to_string(),
                        detail: format!("p must be a literal in (0, 0.5), got `{other}`"),
                    })
                }
            };
            Ok(Expr::Winsorize(Box::new(args.remove(0)), p))
        }
        _ => Err(DslError::UnknownFunction(name.to_string())),
    }
}

/// Parse a factor expression.
pub fn parse(text: &str) -> Result<Expr, DslError> {
    let mut p = Parser { lexer: Lexer::new(text), peeked: None };
    let expr = p.expr()?;
    let (tok, pos) = p.advance()?;
    if tok != Token::End {
        return Err(DslError::SyntaxError { pos, expected: format!("end of input, got {tok:?}") });
    }
    Ok(expr)
}

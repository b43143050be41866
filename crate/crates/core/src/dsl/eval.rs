//! Pointwise/windowed evaluation of factor expressions over a price panel.
//!
//! Semantics: `ts_*` operate per asset over a trailing window of w fully
//! observed values (the first w−1 rows are missing; `ts_delta` uses
//! x_t − x_{t−w} and so misses the first w rows). `cs_*` operate per day
//! across non-missing assets; a day with fewer than 2 observations yields a
//! missing row. Division by zero and log of non-positive values produce
//! missing cells rather than errors.

use ndarray::Array2;

use super::ast::{BinaryFn, CsFn, Expr, Field, Num, TsFn, UnaryFn};
use super::DslError;
use crate::panel::{is_missing, PricePanel, MISSING};
use crate::stats::average_ranks;
use crate::Real;

/// A day×asset matrix of factor scores.
#[derive(Debug, Clone)]
pub struct FactorSignal {
    pub values: Array2<Real>,
    /// Printed form of the originating expression.
    pub expr_id: String,
}

/// Evaluate an expression into a cross-sectional signal matrix.
pub fn evaluate(expr: &Expr, panel: &PricePanel) -> Result<FactorSignal, DslError> {
    let values = eval_node(expr, panel)?;
    Ok(FactorSignal { values, expr_id: expr.to_string() })
}

fn eval_node(expr: &Expr, panel: &PricePanel) -> Result<Array2<Real>, DslError> {
    let (t, n) = (panel.n_days(), panel.n_assets());
    match expr {
        Expr::Field(f) => field_matrix(*f, panel),
        Expr::Num(Num::Lit(v)) => Ok(Array2::from_elem((t, n), *v)),
        Expr::Num(Num::Hole) => Err(DslError::NotEvaluable),
        Expr::Unary(op, a) => {
            let m = eval_node(a, panel)?;
            Ok(m.mapv(|x| {
                if is_missing(x) {
                    MISSING
                } else {
                    match op {
                        UnaryFn::Abs => x.abs(),
                        UnaryFn::Neg => -x,
                        UnaryFn::Sign => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryFn::Log => {
                            if x > 0.0 {
                                x.ln()
                            } else {
                                MISSING
                            }
                        }
                    }
                }
            }))
        }
        Expr::Binary(op, a, b) => {
            let ma = eval_node(a, panel)?;
            let mb = eval_node(b, panel)?;
            let mut out = Array2::from_elem((t, n), MISSING);
            for ti in 0..t {
                for ai in 0..n {
                    let (x, y) = (ma[[ti, ai]], mb[[ti, ai]]);
                    if is_missing(x) || is_missing(y) {
                        continue;
                    }
                    out[[ti, ai]] = match op {
                        BinaryFn::Add => x + y,
                        BinaryFn::Sub => x - y,
                        BinaryFn::Mul => x * y,
                        BinaryFn::Div => {
                            if y == 0.0 {
                                MISSING
                            } else {
                                x / y
                            }
                        }
                    };
                }
            }
            Ok(out)
        }
        Expr::Ts(op, a, w) => {
            let w = literal_window(*w)?;
            let m = eval_node(a, panel)?;
            Ok(ts_apply(*op, &m, w))
        }
        Expr::TsCorr(a, b, w) => {
            let w = literal_window(*w)?;
            let ma = eval_node(a, panel)?;
            let mb = eval_node(b, panel)?;
            let mut out = Array2::from_elem((t, n), MISSING);
            for ai in 0..n {
                for ti in (w - 1)..t {
                    let xs: Vec<Real> = (ti + 1 - w..=ti).map(|s| ma[[s, ai]]).collect();
                    let ys: Vec<Real> = (ti + 1 - w..=ti).map(|s| mb[[s, ai]]).collect();
                    if xs.iter().chain(&ys).any(|v| is_missing(*v)) {
                        continue;
                    }
                    if let Some(c) = crate::stats::pearson(&xs, &ys) {
                        out[[ti, ai]] = c;
                    }
                }
            }
            Ok(out)
        }
        Expr::Cs(op, a) => {
            let m = eval_node(a, panel)?;
            cs_apply(&m, expr, |vals| match op {
                CsFn::Rank => {
                    let k = vals.len();
                    average_ranks(vals)
                        .into_iter()
                        .map(|r| (r - 1.0) / (k as Real - 1.0))
                        .collect()
                }
                CsFn::Zscore => {
                    let mu = crate::stats::mean(vals).unwrap();
                    match crate::stats::sample_std(vals) {
                        Some(sd) if sd > 0.0 => vals.iter().map(|x| (x - mu) / sd).collect(),
                        _ => vec![MISSING; vals.len()],
                    }
                }
            })
        }
        Expr::Winsorize(a, p) => {
            let p = p.value().ok_or(DslError::NotEvaluable)?;
            let m = eval_node(a, panel)?;
            cs_apply(&m, expr, |vals| {
                let lo = crate::stats::quantile(vals, p).unwrap();
                let hi = crate::stats::quantile(vals, 1.0 - p).unwrap();
                vals.iter().map(|x| x.clamp(lo, hi)).collect()
            })
        }
    }
}

fn literal_window(w: Num) -> Result<usize, DslError> {
    match w {
        Num::Lit(v) => Ok(v as usize),
        Num::Hole => Err(DslError::NotEvaluable),
    }
}

fn field_matrix(f: Field, panel: &PricePanel) -> Result<Array2<Real>, DslError> {
    panel
        .field(f.name())
        .cloned()
        .ok_or_else(|| DslError::UnknownField(f.name().to_string()))
}

/// Apply a per-day transform over non-missing assets. Days with fewer than
/// 2 observations stay missing; if no day qualifies the whole evaluation is
/// rejected as an empty cross-section.
fn cs_apply(
    m: &Array2<Real>,
    expr: &Expr,
    f: impl Fn(&[Real]) -> Vec<Real>,
) -> Result<Array2<Real>, DslError> {
    let (t, n) = m.dim();
    let mut out = Array2::from_elem((t, n), MISSING);
    let mut any_day = false;
    for ti in 0..t {
        let idx: Vec<usize> = (0..n).filter(|&a| !is_missing(m[[ti, a]])).collect();
        if idx.len() < 2 {
            continue;
        }
        any_day = true;
        let vals: Vec<Real> = idx.iter().map(|&a| m[[ti, a]]).collect();
        for (&a, v) in idx.iter().zip(f(&vals)) {
            out[[ti, a]] = v;
        }
    }
    if !any_day {
        return Err(DslError::EmptyCrossSection(expr.to_string()));
    }
    Ok(out)
}

fn ts_apply(op: TsFn, m: &Array2<Real>, w: usize) -> Array2<Real> {
    let (t, n) = m.dim();
    let mut out = Array2::from_elem((t, n), MISSING);
    for a in 0..n {
        if op == TsFn::Delta {
            // x_t − x_{t−w}: first w rows missing
            for ti in w..t {
                let (x0, x1) = (m[[ti - w, a]], m[[ti, a]]);
                if !is_missing(x0) && !is_missing(x1) {
                    out[[ti, a]] = x1 - x0;
                }
            }
            continue;
        }
        for ti in (w - 1)..t {
            let window: Vec<Real> = (ti + 1 - w..=ti).map(|s| m[[s, a]]).collect();
            if window.iter().any(|v| is_missing(*v)) {
                continue;
            }
            out[[ti, a]] = match op {
                TsFn::Mean => crate::stats::mean(&window).unwrap(),
                TsFn::Sum => window.iter().sum(),
                TsFn::Min => window.iter().copied().fold(Real::INFINITY, Real::min),
                TsFn::Max => window.iter().copied().fold(Real::NEG_INFINITY, Real::max),
                TsFn::Std => crate::stats::sample_std(&window).unwrap_or(MISSING),
                TsFn::Rank => {
                    let ranks = average_ranks(&window);
                    (ranks[w - 1] - 1.0) / (w as Real - 1.0)
                }
                TsFn::Delta => unreachable!(),
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::panel::MarketId;
    use crate::synth::panel_from_closes;

    fn one_asset(closes: &[Real]) -> PricePanel {
        panel_from_closes(MarketId::CsiLike, &["a"], &closes.iter().map(|c| vec![*c]).collect::<Vec<_>>())
    }

    #[test]
    fn identity_field() {
        let p = one_asset(&[100.0, 110.0, 120.0]);
        let s = evaluate(&parse("close").unwrap(), &p).unwrap();
        assert_eq!(s.values, p.close);
    }

    #[test]
    fn ts_mean_example() {
        let p = one_asset(&[100.0, 110.0, 120.0]);
        let s = evaluate(&parse("ts_mean(close,2)").unwrap(), &p).unwrap();
        assert!(is_missing(s.values[[0, 0]]));
        assert_eq!(s.values[[1, 0]], 105.0);
        assert_eq!(s.values[[2, 0]], 115.0);
    }

    #[test]
    fn ts_delta_skips_first_w_rows() {
        let p = one_asset(&[1.0, 2.0, 4.0, 8.0]);
        let s = evaluate(&parse("ts_delta(close,2)").unwrap(), &p).unwrap();
        assert!(is_missing(s.values[[0, 0]]));
        assert!(is_missing(s.values[[1, 0]]));
        assert_eq!(s.values[[2, 0]], 3.0);
        assert_eq!(s.values[[3, 0]], 6.0);
    }

    #[test]
    fn cs_rank_against_sort_oracle() {
        let p = panel_from_closes(MarketId::CsiLike, &["a", "b", "c"], &[vec![3.0, 1.0, 2.0]]);
        let s = evaluate(&parse("cs_rank(close)").unwrap(), &p).unwrap();
        assert_eq!(s.values[[0, 0]], 1.0);
        assert_eq!(s.values[[0, 1]], 0.0);
        assert_eq!(s.values[[0, 2]], 0.5);

        // brute-force sort oracle on a larger cross-section
        let vals = [7.0, -2.0, 11.0, 0.5, 3.0, 9.0];
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c", "d", "e", "f"],
            &[vals.to_vec()],
        );
        let s = evaluate(&parse("cs_rank(close)").unwrap(), &p).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let rank = vals.iter().filter(|x| *x < v).count();
            let expect = rank as Real / (vals.len() - 1) as Real;
            assert!((s.values[[0, i]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cs_zscore_moments() {
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c", "d"],
            &[vec![10.0, 20.0, 30.0, 45.0]],
        );
        let s = evaluate(&parse("cs_zscore(close)").unwrap(), &p).unwrap();
        let row: Vec<Real> = (0..4).map(|a| s.values[[0, a]]).collect();
        assert!(crate::stats::mean(&row).unwrap().abs() < 1e-9);
        assert!((crate::stats::sample_std(&row).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_and_div_degeneracies_become_missing() {
        let p = panel_from_closes(MarketId::CsiLike, &["a", "b"], &[vec![1.0, 2.0]]);
        let s = evaluate(&parse("log(sub(close,close))").unwrap(), &p).unwrap();
        assert!(s.values.iter().all(|x| is_missing(*x)));
        let s = evaluate(&parse("div(close,sub(close,close))").unwrap(), &p).unwrap();
        assert!(s.values.iter().all(|x| is_missing(*x)));
    }

    #[test]
    fn unknown_field_without_fundamentals() {
        let p = one_asset(&[1.0, 2.0]);
        assert!(matches!(
            evaluate(&parse("cs_rank(pe)").unwrap(), &p),
            Err(DslError::UnknownField(f)) if f == "pe"
        ));
    }

    #[test]
    fn empty_cross_section_on_single_asset() {
        let p = one_asset(&[1.0, 2.0]);
        assert!(matches!(
            evaluate(&parse("cs_rank(close)").unwrap(), &p),
            Err(DslError::EmptyCrossSection(_))
        ));
    }

    #[test]
    fn warmup_rows_do_not_abort_cs_ops() {
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b"],
            &[vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 4.0]],
        );
        let s = evaluate(&parse("cs_rank(ts_delta(close,2))").unwrap(), &p).unwrap();
        assert!(is_missing(s.values[[0, 0]]));
        assert!(is_missing(s.values[[1, 0]]));
        assert!(!is_missing(s.values[[2, 0]]));
    }

    #[test]
    fn ts_rank_ties_average() {
        let p = one_asset(&[5.0, 5.0, 5.0]);
        let s = evaluate(&parse("ts_rank(close,3)").unwrap(), &p).unwrap();
        // all equal: average rank 2 of 3 → (2−1)/2 = 0.5
        assert!((s.values[[2, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_pure() {
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c"],
            &[vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 4.0], vec![5.0, 2.0, 1.0]],
        );
        let e = parse("cs_zscore(ts_mean(close,2))").unwrap();
        let s1 = evaluate(&e, &p).unwrap();
        let s2 = evaluate(&e, &p).unwrap();
        // bit-for-bit identical (NaN cells compared via bits)
        for (a, b) in s1.values.iter().zip(s2.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

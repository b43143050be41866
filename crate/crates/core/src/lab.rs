//! Factor validation lab: IC/ICIR statistics against forward returns,
//! acceptance and retention rules, and the on-disk factor library.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{evaluate, DslError, Expr, FactorSignal, TsFn, UnaryFn};
use crate::panel::{forward_return, is_missing, PanelError, PricePanel};
use crate::stats::{pearson, sample_std, spearman};
use crate::Real;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("no day in the window produced a valid IC")]
    NoValidDays,
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("duplicate factor id `{0}`")]
    DuplicateFactorId(String),
    #[error("corrupt factor record {file}: {reason}")]
    CorruptRecord { file: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorCategory {
    Momentum,
    Reversal,
    Value,
    Quality,
    Volatility,
    Liquidity,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorStatus {
    Effective,
    Ineffective,
    Deprecated,
}

/// One validation pass over a date window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    #[serde(skip)]
    pub factor_id: String,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub mean_ic: Real,
    pub ic_std: Real,
    /// `None` flags the degenerate case ic_std = 0.
    pub icir: Option<Real>,
    pub ic_hit_ratio: Real,
    pub turnover: Real,
    pub coverage: Real,
    /// Mean IC by forward horizon, `[[h, ic], …]` for h = 1..10.
    pub decay: Vec<(u32, Real)>,
    pub validated_on: NaiveDate,
}

/// Library entry: expression text plus validation history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorRecord {
    pub factor_id: String,
    pub expression: String,
    pub category: FactorCategory,
    pub status: FactorStatus,
    pub history: Vec<ValidationReport>,
}

impl FactorRecord {
    pub fn latest(&self) -> Option<&ValidationReport> {
        self.history.last()
    }

    /// The report that first made the factor effective.
    pub fn accepted_report(&self) -> Option<&ValidationReport> {
        self.history.first()
    }
}

/// Acceptance thresholds; defaults: ic 0.015, icir 0.25, coverage 0.80,
/// turnover 0.35.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AcceptanceConfig {
    pub ic_min: Real,
    pub icir_min: Real,
    pub coverage_min: Real,
    pub turnover_max: Real,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self { ic_min: 0.015, icir_min: 0.25, coverage_min: 0.80, turnover_max: 0.35 }
    }
}

/// Per-day Pearson IC between a signal and aligned forward returns over the
/// row range `[i0, i1]`. Days with fewer than 3 paired observations or zero
/// variance on either side are skipped.
pub fn ic_series_in(
    signal: &Array2<Real>,
    fwd: &Array2<Real>,
    i0: usize,
    i1: usize,
) -> Result<Vec<Real>, LabError> {
    debug_assert_eq!(signal.dim(), fwd.dim());
    let n = signal.ncols();
    let mut out = Vec::new();
    for t in i0..=i1.min(signal.nrows() - 1) {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for a in 0..n {
            let (x, y) = (signal[[t, a]], fwd[[t, a]]);
            if !is_missing(x) && !is_missing(y) {
                xs.push(x);
                ys.push(y);
            }
        }
        if xs.len() < 3 {
            continue;
        }
        if let Some(ic) = pearson(&xs, &ys) {
            out.push(ic);
        }
    }
    if out.is_empty() {
        return Err(LabError::NoValidDays);
    }
    Ok(out)
}

/// IC series over every day of the signal.
pub fn ic_series(signal: &FactorSignal, fwd: &Array2<Real>) -> Result<Vec<Real>, LabError> {
    ic_series_in(&signal.values, fwd, 0, signal.values.nrows() - 1)
}

/// Validate an expression on a panel over an inclusive date window.
///
/// The signal is evaluated over the whole panel so trailing windows warm up
/// on pre-window data; statistics are restricted to the window itself.
pub fn validate(
    factor_id: &str,
    expr: &Expr,
    panel: &PricePanel,
    window: (NaiveDate, NaiveDate),
) -> Result<ValidationReport, LabError> {
    let (i0, i1) = panel.date_range_indices(window.0, window.1)?;
    let signal = evaluate(expr, panel)?;

    // decay profile h = 1..10; h = 1 doubles as the headline IC series
    let mut decay = Vec::new();
    let mut head_ics: Option<Vec<Real>> = None;
    for h in 1..=10usize {
        if h >= panel.n_days() {
            break;
        }
        let fwd = forward_return(panel, h)?;
        match ic_series_in(&signal.values, &fwd, i0, i1) {
            Ok(ics) => {
                let mean = crate::stats::mean(&ics).unwrap();
                decay.push((h as u32, mean));
                if h == 1 {
                    head_ics = Some(ics);
                }
            }
            Err(LabError::NoValidDays) if h > 1 => continue,
            Err(e) => return Err(e),
        }
    }
    let ics = head_ics.ok_or(LabError::NoValidDays)?;
    let mean_ic = decay[0].1;
    let ic_std = sample_std(&ics).unwrap_or(0.0);
    let icir = if ic_std > 0.0 { Some(mean_ic / ic_std) } else { None };
    let hits = ics.iter().filter(|ic| ic.signum() == mean_ic.signum()).count();
    let ic_hit_ratio = hits as Real / ics.len() as Real;

    // coverage: mean per-day fraction of the universe with a non-missing signal
    let mut cov_sum = 0.0;
    let mut cov_days = 0usize;
    for t in i0..=i1 {
        let members = panel.members_on(t);
        if members.is_empty() {
            continue;
        }
        let have = members.iter().filter(|&&a| !is_missing(signal.values[[t, a]])).count();
        cov_sum += have as Real / members.len() as Real;
        cov_days += 1;
    }
    let coverage = if cov_days > 0 { cov_sum / cov_days as Real } else { 0.0 };

    // turnover: 1 − mean Spearman rank autocorrelation of consecutive days
    let mut auto = Vec::new();
    for t in i0..i1 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for a in 0..panel.n_assets() {
            let (x, y) = (signal.values[[t, a]], signal.values[[t + 1, a]]);
            if !is_missing(x) && !is_missing(y) {
                xs.push(x);
                ys.push(y);
            }
        }
        if xs.len() < 3 {
            continue;
        }
        if let Some(rho) = spearman(&xs, &ys) {
            auto.push(rho);
        }
    }
    // no measurable autocorrelation is treated as full turnover
    let turnover = crate::stats::mean(&auto).map_or(1.0, |m| 1.0 - m);

    Ok(ValidationReport {
        factor_id: factor_id.to_string(),
        window_start: window.0,
        window_end: window.1,
        mean_ic,
        ic_std,
        icir,
        ic_hit_ratio,
        turnover,
        coverage,
        decay,
        validated_on: window.1,
    })
}

/// Acceptance rule: |mean IC|, |ICIR|, coverage and turnover must all clear
/// their thresholds. A degenerate ICIR (zero IC variance) passes the ICIR
/// leg when the IC itself clears, since constant-sign stability is not a
/// defect.
pub fn accept(report: &ValidationReport, thresholds: &AcceptanceConfig) -> bool {
    let ic_ok = report.mean_ic.abs() >= thresholds.ic_min;
    let icir_ok = match report.icir {
        Some(icir) => icir.abs() >= thresholds.icir_min,
        None => ic_ok,
    };
    ic_ok
        && icir_ok
        && report.coverage >= thresholds.coverage_min
        && report.turnover <= thresholds.turnover_max
}

/// Retention rule for an effective factor: keep iff the fresh IC holds the
/// original sign and at least half the original magnitude.
pub fn retain(record: &FactorRecord, fresh: &ValidationReport) -> FactorStatus {
    debug_assert_eq!(record.status, FactorStatus::Effective);
    let Some(original) = record.accepted_report() else {
        return FactorStatus::Deprecated;
    };
    let same_sign = fresh.mean_ic.signum() == original.mean_ic.signum();
    let holds = fresh.mean_ic.abs() >= 0.5 * original.mean_ic.abs();
    if same_sign && holds {
        FactorStatus::Effective
    } else {
        FactorStatus::Deprecated
    }
}

/// Heuristic category from the expression structure.
pub fn categorize(expr: &Expr) -> FactorCategory {
    fn contains(e: &Expr, pred: &impl Fn(&Expr) -> bool) -> bool {
        if pred(e) {
            return true;
        }
        match e {
            Expr::Field(_) | Expr::Num(_) => false,
            Expr::Unary(_, a) | Expr::Cs(_, a) | Expr::Ts(_, a, _) | Expr::Winsorize(a, _) => {
                contains(a, pred)
            }
            Expr::Binary(_, a, b) | Expr::TsCorr(a, b, _) => contains(a, pred) || contains(b, pred),
        }
    }
    let has_fundamental = expr.fields().iter().any(|f| {
        matches!(f.name(), "pe" | "ps" | "pb" | "dyr")
    });
    let has_volume = expr.fields().iter().any(|f| f.name() == "volume");
    let has_ts = |op: TsFn| contains(expr, &|e| matches!(e, Expr::Ts(o, _, _) if *o == op));
    let has_neg = contains(expr, &|e| matches!(e, Expr::Unary(UnaryFn::Neg, _)));
    let has_close = expr.fields().iter().any(|f| f.name() == "close");
    let trendish = has_ts(TsFn::Delta) || has_ts(TsFn::Rank) || (has_close && has_ts(TsFn::Mean));

    if has_fundamental {
        FactorCategory::Value
    } else if has_neg && trendish {
        FactorCategory::Reversal
    } else if has_ts(TsFn::Std) || (has_ts(TsFn::Max) && has_ts(TsFn::Min)) {
        FactorCategory::Volatility
    } else if has_volume {
        FactorCategory::Liquidity
    } else if trendish {
        FactorCategory::Momentum
    } else {
        FactorCategory::Other
    }
}

/// Write one factor record as `{factor_id}.json` under `dir`.
pub fn save_factor(record: &FactorRecord, dir: &Path) -> Result<(), LabError> {
    fs::create_dir_all(dir)
        .map_err(|e| LabError::Io { path: dir.display().to_string(), source: e })?;
    let path = dir.join(format!("{}.json", record.factor_id));
    let tmp = dir.join(format!(".{}.json.tmp", record.factor_id));
    let body = serde_json::to_string_pretty(record).expect("record serializes");
    fs::write(&tmp, body).map_err(|e| LabError::Io { path: tmp.display().to_string(), source: e })?;
    fs::rename(&tmp, &path)
        .map_err(|e| LabError::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Load every `*.json` record in a directory, sorted by factor id.
pub fn load_library(dir: &Path) -> Result<Vec<FactorRecord>, LabError> {
    let mut out: Vec<FactorRecord> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| LabError::Io { path: dir.display().to_string(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    for path in paths {
        let file = path.display().to_string();
        let text = fs::read_to_string(&path)
            .map_err(|e| LabError::Io { path: file.clone(), source: e })?;
        let mut record: FactorRecord = serde_json::from_str(&text)
            .map_err(|e| LabError::CorruptRecord { file: file.clone(), reason: e.to_string() })?;
        if record.expression.is_empty() {
            return Err(LabError::CorruptRecord {
                file,
                reason: "empty expression".to_string(),
            });
        }
        if !seen.insert(record.factor_id.clone()) {
            return Err(LabError::DuplicateFactorId(record.factor_id));
        }
        for report in &mut record.history {
            report.factor_id = record.factor_id.clone();
        }
        out.push(record);
    }
    out.sort_by(|a, b| a.factor_id.cmp(&b.factor_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::panel::MarketId;
    use crate::synth::panel_from_closes;

    fn window_of(panel: &PricePanel) -> (NaiveDate, NaiveDate) {
        (panel.calendar.days()[0], *panel.calendar.days().last().unwrap())
    }

    fn report(mean_ic: Real, icir: Option<Real>, coverage: Real, turnover: Real) -> ValidationReport {
        ValidationReport {
            factor_id: "f".into(),
            window_start: "2024-01-01".parse().unwrap(),
            window_end: "2024-06-01".parse().unwrap(),
            mean_ic,
            ic_std: icir.map_or(0.0, |x| if x != 0.0 { mean_ic / x } else { 1.0 }),
            icir,
            ic_hit_ratio: 0.8,
            turnover,
            coverage,
            decay: vec![(1, mean_ic)],
            validated_on: "2024-06-01".parse().unwrap(),
        }
    }

    #[test]
    fn ic_one_when_signal_equals_forward_returns() {
        // 4 assets whose next-day returns are distinct; signal = fwd returns
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c", "d"],
            &[
                vec![100.0, 100.0, 100.0, 100.0],
                vec![101.0, 103.0, 99.0, 97.0],
                vec![103.0, 104.0, 97.0, 99.0],
            ],
        );
        let fwd = forward_return(&p, 1).unwrap();
        let sig = FactorSignal { values: fwd.clone(), expr_id: "fwd".into() };
        let ics = ic_series(&sig, &fwd).unwrap();
        assert_eq!(ics.len(), 2);
        for ic in ics {
            assert!((ic - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_cross_section_day_skipped() {
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c"],
            &[vec![100.0, 100.0, 100.0], vec![101.0, 99.0, 102.0], vec![102.0, 98.0, 103.0]],
        );
        let fwd = forward_return(&p, 1).unwrap();
        // day 0 signal constant → zero variance → skipped
        let sig = FactorSignal { values: p.close.clone(), expr_id: "close".into() };
        let ics = ic_series(&sig, &fwd).unwrap();
        assert_eq!(ics.len(), 1);
    }

    #[test]
    fn hand_pearson_minus_one() {
        let p = panel_from_closes(
            MarketId::CsiLike,
            &["a", "b", "c"],
            &[vec![1.0, 2.0, 3.0], vec![1.03, 2.04, 3.03]],
        );
        // factor [1,2,3], fwd returns [0.03, 0.02, 0.01] → IC = −1
        let mut fwd = Array2::from_elem((2, 3), crate::panel::MISSING);
        fwd[[0, 0]] = 0.03;
        fwd[[0, 1]] = 0.02;
        fwd[[0, 2]] = 0.01;
        let sig = FactorSignal { values: p.close.clone(), expr_id: "close".into() };
        let ics = ic_series(&sig, &fwd).unwrap();
        assert_eq!(ics.len(), 1);
        assert!((ics[0] + 1.0).abs() < 1e-12);

        // brute-force covariance oracle
        let f = [1.0, 2.0, 3.0];
        let r = [0.03, 0.02, 0.01];
        let mf = f.iter().sum::<Real>() / 3.0;
        let mr = r.iter().sum::<Real>() / 3.0;
        let cov = f.iter().zip(&r).map(|(a, b)| (a - mf) * (b - mr)).sum::<Real>() / 3.0;
        let sf = (f.iter().map(|a| (a - mf).powi(2)).sum::<Real>() / 3.0).sqrt();
        let sr = (r.iter().map(|b| (b - mr).powi(2)).sum::<Real>() / 3.0).sqrt();
        assert!((ics[0] - cov / (sf * sr)).abs() < 1e-10);
    }

    #[test]
    fn validate_monotone_fixture_gives_perfect_ic() {
        // next-day return is linear in the close rank, so the rank signal
        // correlates perfectly every day
        let mut rows = vec![vec![10.0, 20.0, 30.0, 40.0]];
        for t in 0..12 {
            let prev = rows[t].clone();
            rows.push(
                prev.iter().enumerate().map(|(i, c)| c * (1.0 + 0.001 * (i + 1) as Real)).collect(),
            );
        }
        let p = panel_from_closes(MarketId::CsiLike, &["a", "b", "c", "d"], &rows);
        let r = validate("m", &parse("cs_rank(close)").unwrap(), &p, window_of(&p)).unwrap();
        assert!((r.mean_ic - 1.0).abs() < 1e-9);
        assert!(r.icir.is_none(), "constant IC=1 has zero std → degenerate");
        assert_eq!(r.coverage, 1.0);
        assert!(r.turnover.abs() < 1e-12, "ranking never changes");
        assert_eq!(r.decay[0].0, 1);
        assert_eq!(r.decay[0].1, r.mean_ic);
        assert_eq!(r.ic_hit_ratio, 1.0);
    }

    #[test]
    fn accept_thresholds() {
        let cfg = AcceptanceConfig::default();
        assert!(accept(&report(0.02, Some(0.4), 0.95, 0.2), &cfg));
        assert!(!accept(&report(0.0, Some(0.4), 0.95, 0.2), &cfg));
        assert!(!accept(&report(0.02, Some(0.4), 0.5, 0.2), &cfg));
        assert!(!accept(&report(0.02, Some(0.1), 0.95, 0.2), &cfg));
        assert!(!accept(&report(0.02, Some(0.4), 0.95, 0.8), &cfg));
        // degenerate ICIR passes when IC clears
        assert!(accept(&report(0.02, None, 0.95, 0.2), &cfg));
        assert!(!accept(&report(0.001, None, 0.95, 0.2), &cfg));
        // negative-IC factor with stable sign is acceptable
        assert!(accept(&report(-0.02, Some(-0.4), 0.95, 0.2), &cfg));
    }

    #[test]
    fn retain_rules() {
        let mk = |orig: Real| FactorRecord {
            factor_id: "f".into(),
            expression: "close".into(),
            category: FactorCategory::Momentum,
            status: FactorStatus::Effective,
            history: vec![report(orig, Some(0.5), 1.0, 0.1)],
        };
        let rec = mk(0.03);
        assert_eq!(retain(&rec, &report(0.02, Some(0.5), 1.0, 0.1)), FactorStatus::Effective);
        assert_eq!(retain(&rec, &report(-0.01, Some(0.5), 1.0, 0.1)), FactorStatus::Deprecated);
        assert_eq!(retain(&rec, &report(0.01, Some(0.5), 1.0, 0.1)), FactorStatus::Deprecated);
    }

    #[test]
    fn save_load_roundtrip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FactorRecord {
            factor_id: "momo_1".into(),
            expression: "cs_rank(ts_delta(close,5))".into(),
            category: FactorCategory::Momentum,
            status: FactorStatus::Effective,
            history: vec![report(0.03, Some(0.5), 0.9, 0.2)],
        };
        save_factor(&rec, dir.path()).unwrap();
        let lib = load_library(dir.path()).unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib[0].factor_id, "momo_1");
        assert_eq!(lib[0].expression, rec.expression);
        assert_eq!(lib[0].history[0].mean_ic, 0.03);
        assert_eq!(lib[0].history[0].factor_id, "momo_1");

        // bit-exact schema keys
        let text = std::fs::read_to_string(dir.path().join("momo_1.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["factor_id", "expression", "category", "status", "history"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let h = &v["history"][0];
        for key in [
            "window_start",
            "window_end",
            "mean_ic",
            "ic_std",
            "icir",
            "ic_hit_ratio",
            "turnover",
            "coverage",
            "decay",
            "validated_on",
        ] {
            assert!(h.get(key).is_some(), "missing history key {key}");
        }
        assert!(h["decay"][0].is_array(), "decay serializes as [[h, ic], …]");
    }

    #[test]
    fn duplicate_and_corrupt_records() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FactorRecord {
            factor_id: "dup".into(),
            expression: "close".into(),
            category: FactorCategory::Other,
            status: FactorStatus::Effective,
            history: vec![],
        };
        save_factor(&rec, dir.path()).unwrap();
        // same id under a different filename
        std::fs::copy(dir.path().join("dup.json"), dir.path().join("dup2.json")).unwrap();
        assert!(matches!(load_library(dir.path()), Err(LabError::DuplicateFactorId(_))));
        std::fs::remove_file(dir.path().join("dup2.json")).unwrap();

        std::fs::write(dir.path().join("bad.json"), r#"{"factor_id":"x"}"#).unwrap();
        assert!(matches!(load_library(dir.path()), Err(LabError::CorruptRecord { .. })));
    }

    #[test]
    fn categorize_classical_set_spans_groups() {
        use std::collections::BTreeSet;
        let cats: BTreeSet<String> = crate::dsl::classical_library()
            .iter()
            .map(|(_, e)| format!("{:?}", categorize(e)))
            .collect();
        for want in ["Momentum", "Reversal", "Volatility", "Liquidity", "Value"] {
            assert!(cats.contains(*&want), "missing {want} in {cats:?}");
        }
    }
}

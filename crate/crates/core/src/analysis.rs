//! Post-hoc analyses over run artifacts: alpha decay across periods, regime
//! coherence matrices, exposure–volatility regression, factor diversity, and
//! friction bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{OrdinalLabel, RegimeAssessment};
use crate::dsl::{evaluate, phi_inter, phi_intra, DslError, Expr};
use crate::exchange::{OrderStatus, TradeLogRow};
use crate::lab::{ic_series_in, LabError};
use crate::panel::{forward_return, is_missing, PanelError, PricePanel};
use crate::stats::{mean, ols_slope, pearson};
use crate::Real;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("candidate factor set is empty")]
    EmptyCandidateSet,
    #[error("length mismatch: {left} assessments vs {right} proxies")]
    LengthMismatch { left: usize, right: usize },
    #[error("insufficient history: need {need}, have {have}")]
    InsufficientHistory { need: usize, have: usize },
    #[error("no NAV available before {0}")]
    MissingNav(NaiveDate),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// alpha decay

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Fix the k best factors by whole-horizon |mean IC|.
    GlobalTopk,
    /// Re-select the k best within each period.
    PeriodicTopk,
    /// Follow the library snapshots a run produced (k ignored).
    AdaptiveLibrary,
}

impl DecayMode {
    pub fn name(self) -> &'static str {
        match self {
            DecayMode::GlobalTopk => "global_topk",
            DecayMode::PeriodicTopk => "periodic_topk",
            DecayMode::AdaptiveLibrary => "adaptive_library",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRow {
    pub period: usize,
    pub mode: DecayMode,
    pub mean_ic: Real,
    pub max_ic: Real,
    pub min_ic: Real,
    pub n_factors: usize,
}

/// Per-factor mean IC over a row range; factors without a valid day drop out.
fn period_factor_ics(
    factors: &[(String, Expr)],
    panel: &PricePanel,
    fwd: &Array2<Real>,
    lo: usize,
    hi: usize,
) -> Vec<(String, Real)> {
    let mut out = Vec::new();
    for (id, expr) in factors {
        let Ok(signal) = evaluate(expr, panel) else { continue };
        if let Ok(ics) = ic_series_in(&signal.values, fwd, lo, hi) {
            out.push((id.clone(), mean(&ics).unwrap()));
        }
    }
    out
}

/// Alpha-decay comparison across consecutive periods of `period_len` trading
/// days aligned to the panel start.
///
/// `factor_sets_per_period` supplies one candidate set per period; the
/// static modes use the first set throughout, the adaptive mode follows the
/// per-period snapshots.
pub fn alpha_decay_report(
    panel: &PricePanel,
    factor_sets_per_period: &[Vec<(String, Expr)>],
    mode: DecayMode,
    k: usize,
    period_len: usize,
) -> Result<Vec<DecayRow>, AnalysisError> {
    let n_periods = factor_sets_per_period.len();
    if n_periods == 0 || factor_sets_per_period.iter().all(|s| s.is_empty()) {
        return Err(AnalysisError::EmptyCandidateSet);
    }
    if panel.n_days() < n_periods {
        return Err(AnalysisError::InsufficientHistory {
            need: n_periods,
            have: panel.n_days(),
        });
    }
    let fwd = forward_return(panel, 1)?;
    let periods: Vec<(usize, usize)> = (0..n_periods)
        .map(|p| {
            let lo = p * period_len;
            let hi = if p == n_periods - 1 {
                panel.n_days() - 1
            } else {
                ((p + 1) * period_len - 1).min(panel.n_days() - 1)
            };
            (lo.min(panel.n_days() - 1), hi)
        })
        .collect();

    // the global mode fixes its selection on whole-horizon ICs
    let global_selection: Vec<(String, Expr)> = if mode == DecayMode::GlobalTopk {
        let pool = &factor_sets_per_period[0];
        let mut horizon = period_factor_ics(pool, panel, &fwd, 0, panel.n_days() - 1);
        horizon.sort_by(|a, b| {
            b.1.abs()
                .partial_cmp(&a.1.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        horizon
            .into_iter()
            .take(k.min(pool.len()))
            .filter_map(|(id, _)| pool.iter().find(|(pid, _)| *pid == id).cloned())
            .collect()
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    for (p, (lo, hi)) in periods.iter().enumerate() {
        let ics: Vec<Real> = match mode {
            DecayMode::GlobalTopk => period_factor_ics(&global_selection, panel, &fwd, *lo, *hi)
                .into_iter()
                .map(|(_, ic)| ic)
                .collect(),
            DecayMode::PeriodicTopk => {
                let pool = &factor_sets_per_period[0];
                let mut scored = period_factor_ics(pool, panel, &fwd, *lo, *hi);
                scored.sort_by(|a, b| {
                    b.1.abs()
                        .partial_cmp(&a.1.abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| a.0.cmp(&b.0))
                });
                scored.into_iter().take(k.min(pool.len())).map(|(_, ic)| ic).collect()
            }
            DecayMode::AdaptiveLibrary => {
                period_factor_ics(&factor_sets_per_period[p], panel, &fwd, *lo, *hi)
                    .into_iter()
                    .map(|(_, ic)| ic)
                    .collect()
            }
        };
        if ics.is_empty() {
            continue;
        }
        rows.push(DecayRow {
            period: p,
            mode,
            mean_ic: mean(&ics).unwrap(),
            max_ic: ics.iter().copied().fold(Real::NEG_INFINITY, Real::max),
            min_ic: ics.iter().copied().fold(Real::INFINITY, Real::min),
            n_factors: ics.len(),
        });
    }
    Ok(rows)
}

/// `decay_report.csv`: period,mode,mean_ic,max_ic,min_ic.
pub fn decay_rows_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("period,mode,mean_ic,max_ic,min_ic\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.period, r.mode.name(), r.mean_ic, r.max_ic, r.min_ic);
    }
    out
}

// ---------------------------------------------------------------------------
// regime coherence

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceDim {
    Trend,
    Vol,
    Corr,
}

impl CoherenceDim {
    pub fn name(self) -> &'static str {
        match self {
            CoherenceDim::Trend => "trend",
            CoherenceDim::Vol => "vol",
            CoherenceDim::Corr => "corr",
        }
    }
}

/// Similarity matrix between semantic assessments (rows) and market proxies
/// (columns): raw entries 1 − |sem_i − mkt_j|, then matrix-wide min-max
/// normalization.
#[derive(Debug, Clone)]
pub struct CoherenceMatrix {
    pub dimension: CoherenceDim,
    pub raw: Array2<Real>,
    pub normalized: Array2<Real>,
    /// A constant raw matrix normalizes to all-ones.
    pub degenerate: bool,
}

fn coherence_matrix(dimension: CoherenceDim, sem: &[Real], mkt: &[Real]) -> CoherenceMatrix {
    let n = sem.len();
    let mut raw = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            raw[[i, j]] = 1.0 - (sem[i] - mkt[j]).abs();
        }
    }
    let lo = raw.iter().copied().fold(Real::INFINITY, Real::min);
    let hi = raw.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let degenerate = (hi - lo).abs() < 1e-12;
    let normalized = if degenerate {
        Array2::from_elem((n, n), 1.0)
    } else {
        raw.mapv(|x| (x - lo) / (hi - lo))
    };
    CoherenceMatrix { dimension, raw, normalized, degenerate }
}

/// Build the three per-dimension coherence matrices from assessment labels
/// and market proxy values.
pub fn coherence_matrices(
    assessments: &[RegimeAssessment],
    proxies: &[(Real, Real, Real)],
) -> Result<[CoherenceMatrix; 3], AnalysisError> {
    if assessments.len() != proxies.len() {
        return Err(AnalysisError::LengthMismatch {
            left: assessments.len(),
            right: proxies.len(),
        });
    }
    if assessments.len() < 2 {
        return Err(AnalysisError::InsufficientHistory { need: 2, have: assessments.len() });
    }
    let sem_trend: Vec<Real> = assessments.iter().map(|a| a.trend_label.numeric()).collect();
    let sem_vol: Vec<Real> = assessments.iter().map(|a| a.vol_label.numeric()).collect();
    let sem_corr: Vec<Real> = assessments.iter().map(|a| a.corr_label.numeric()).collect();
    let mkt_trend: Vec<Real> = proxies.iter().map(|p| p.0).collect();
    let mkt_vol: Vec<Real> = proxies.iter().map(|p| p.1).collect();
    let mkt_corr: Vec<Real> = proxies.iter().map(|p| p.2).collect();
    Ok([
        coherence_matrix(CoherenceDim::Trend, &sem_trend, &mkt_trend),
        coherence_matrix(CoherenceDim::Vol, &sem_vol, &mkt_vol),
        coherence_matrix(CoherenceDim::Corr, &sem_corr, &mkt_corr),
    ])
}

pub fn matrix_csv(m: &Array2<Real>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Self-contained SVG heatmap with a white→deep-blue ramp.
pub fn heatmap_svg(m: &Array2<Real>) -> String {
    const CELL: usize = 12;
    let (rows, cols) = m.dim();
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#,
        cols * CELL,
        rows * CELL
    );
    out.push('\n');
    for i in 0..rows {
        for j in 0..cols {
            let v = m[[i, j]].clamp(0.0, 1.0);
            let lerp = |a: Real, b: Real| (a + (b - a) * v).round() as u8;
            let (r, g, b) = (lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0));
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})"/>"#,
                j * CELL,
                i * CELL,
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Write `coherence_{dim}.csv`, `coherence_{dim}_normalized.csv` and
/// `coherence_{dim}.svg` for one matrix.
pub fn write_coherence(m: &CoherenceMatrix, dir: &Path) -> Result<(), AnalysisError> {
    let io_err =
        |e: std::io::Error| AnalysisError::Io { path: dir.display().to_string(), source: e };
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let name = m.dimension.name();
    std::fs::write(dir.join(format!("coherence_{name}.csv")), matrix_csv(&m.raw))
        .map_err(io_err)?;
    std::fs::write(
        dir.join(format!("coherence_{name}_normalized.csv")),
        matrix_csv(&m.normalized),
    )
    .map_err(io_err)?;
    std::fs::write(dir.join(format!("coherence_{name}.svg")), heatmap_svg(&m.normalized))
        .map_err(io_err)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// exposure vs volatility

/// Non-overlapping 10-day samples of range-amplitude volatility V and mean
/// net position rate E.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureSeries {
    /// Index of the last day of each 10-day window.
    pub sample_days: Vec<usize>,
    pub volatility: Vec<Real>,
    pub exposure: Vec<Real>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExposureFit {
    pub slope: Real,
    pub pearson_r: Real,
}

pub const EXPOSURE_WINDOW: usize = 10;

/// V_t = (max H − min L over the window)/O_{t−9}; E_t = mean net position
/// rate over the window; sampled every 10 days; OLS of E on V plus Pearson r.
pub fn exposure_volatility(
    index_open: &[Real],
    index_high: &[Real],
    index_low: &[Real],
    net_position_rates: &[Real],
) -> Result<(ExposureSeries, ExposureFit), AnalysisError> {
    let t = index_open.len().min(net_position_rates.len());
    if t < 2 * EXPOSURE_WINDOW {
        return Err(AnalysisError::InsufficientHistory { need: 2 * EXPOSURE_WINDOW, have: t });
    }
    let mut series = ExposureSeries {
        sample_days: Vec::new(),
        volatility: Vec::new(),
        exposure: Vec::new(),
    };
    let mut end = EXPOSURE_WINDOW - 1;
    while end < t {
        let lo = end + 1 - EXPOSURE_WINDOW;
        let window = lo..=end;
        let o = index_open[lo];
        let h = window.clone().map(|i| index_high[i]).fold(Real::NEG_INFINITY, Real::max);
        let l = window.clone().map(|i| index_low[i]).fold(Real::INFINITY, Real::min);
        let rates: Vec<Real> = window.map(|i| net_position_rates[i]).collect();
        let usable = !is_missing(o)
            && o > 0.0
            && h.is_finite()
            && l.is_finite()
            && rates.iter().all(|r| !is_missing(*r));
        if usable {
            series.sample_days.push(end);
            series.volatility.push((h - l) / o);
            series.exposure.push(mean(&rates).unwrap());
        }
        end += EXPOSURE_WINDOW;
    }
    if series.volatility.len() < 2 {
        return Err(AnalysisError::InsufficientHistory { need: 2, have: series.volatility.len() });
    }
    let slope = ols_slope(&series.volatility, &series.exposure).unwrap_or(0.0);
    let pearson_r = pearson(&series.volatility, &series.exposure).unwrap_or(0.0);
    Ok((series, ExposureFit { slope, pearson_r }))
}

/// `exposure.csv`: sample_day,V,E.
pub fn exposure_csv(series: &ExposureSeries) -> String {
    let mut out = String::from("sample_day,V,E\n");
    for i in 0..series.sample_days.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            series.sample_days[i], series.volatility[i], series.exposure[i]
        );
    }
    out
}

// ---------------------------------------------------------------------------
// factor diversity

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialDiversity {
    pub trial: usize,
    pub phi_intra: Option<Real>,
    pub phi_inter: Option<Real>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    pub trials: Vec<TrialDiversity>,
    pub mean_phi_intra: Option<Real>,
    pub mean_phi_inter: Option<Real>,
}

/// Per-trial Φ metrics and their trial means. Snapshots too small for
/// Φ_intra are reported with a note rather than failing the run.
pub fn diversity_report(snapshots: &[Vec<Expr>], reference: &[Expr]) -> DiversityReport {
    let mut trials = Vec::new();
    for (i, snapshot) in snapshots.iter().enumerate() {
        let (mut intra, mut inter, mut note) = (None, None, None);
        match phi_intra(snapshot) {
            Ok(v) => intra = Some(v),
            Err(e) => note = Some(e.to_string()),
        }
        match phi_inter(snapshot, reference) {
            Ok(v) => inter = Some(v),
            Err(e) => {
                if note.is_none() {
                    note = Some(e.to_string());
                }
            }
        }
        trials.push(TrialDiversity { trial: i, phi_intra: intra, phi_inter: inter, note });
    }
    let intra: Vec<Real> = trials.iter().filter_map(|t| t.phi_intra).collect();
    let inter: Vec<Real> = trials.iter().filter_map(|t| t.phi_inter).collect();
    DiversityReport { trials, mean_phi_intra: mean(&intra), mean_phi_inter: mean(&inter) }
}

// ---------------------------------------------------------------------------
// friction bounds

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrictionRow {
    pub day: NaiveDate,
    /// τ_t = Σ|fill value| / NAV_{t−1}.
    pub turnover: Real,
    pub n_trades: usize,
    /// 0.2% · τ/√N slippage standard-deviation bound (0 with no trades).
    pub slippage_bound: Real,
    /// τ beyond the conservative complete-turnover bound of 1.0.
    pub exceeds_unit_turnover: bool,
}

/// Daily turnover and slippage-variance bounds from the trade log.
///
/// `nav_series` supplies end-of-day NAVs for the run; `initial_nav` anchors
/// the first day. Only FILLED rows count as executed value.
pub fn friction_report(
    trade_log: &[TradeLogRow],
    nav_series: &[(NaiveDate, Real)],
    initial_nav: Real,
) -> Result<Vec<FrictionRow>, AnalysisError> {
    let mut fills_by_day: BTreeMap<NaiveDate, (Real, usize)> = BTreeMap::new();
    for row in trade_log {
        if row.status == OrderStatus::Filled {
            let e = fills_by_day.entry(row.day).or_insert((0.0, 0));
            e.0 += (row.qty as Real * row.price).abs();
            e.1 += 1;
        }
    }
    // fills on days outside the NAV series mean the inputs are misaligned
    if let Some(day) = fills_by_day.keys().find(|d| !nav_series.iter().any(|(nd, _)| nd == *d)) {
        return Err(AnalysisError::MissingNav(*day));
    }
    let mut out = Vec::new();
    for (i, (day, _)) in nav_series.iter().enumerate() {
        let prior_nav = if i == 0 { initial_nav } else { nav_series[i - 1].1 };
        if prior_nav <= 0.0 {
            return Err(AnalysisError::MissingNav(*day));
        }
        let (value, n) = fills_by_day.get(day).copied().unwrap_or((0.0, 0));
        let turnover = value / prior_nav;
        let slippage_bound = if n == 0 { 0.0 } else { 0.002 * turnover / (n as Real).sqrt() };
        out.push(FrictionRow {
            day: *day,
            turnover,
            n_trades: n,
            slippage_bound,
            exceeds_unit_turnover: turnover > 1.0,
        });
    }
    Ok(out)
}

/// `friction.csv`: day,turnover,n_trades,slippage_bound.
pub fn friction_csv(rows: &[FrictionRow]) -> String {
    let mut out = String::from("day,turnover,n_trades,slippage_bound\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.day, r.turnover, r.n_trades, r.slippage_bound);
    }
    out
}

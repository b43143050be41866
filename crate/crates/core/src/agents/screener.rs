//! Screener policy: regime assessment, regime-conditioned suitability,
//! greedy decorrelated selection, and weight/direction assignment.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::lab::{FactorCategory, FactorRecord, FactorStatus};
use crate::panel::{is_missing, PricePanel};
use crate::stats::pearson;
use crate::strategy::{EnsembleEntry, TransformHint};
use crate::Real;

use super::backend::PolicyBackend;
use super::memory::{AgentKind, MemoryStore, MetaTag};
use super::regime::{
    assess_regime, CorrLabel, RegimeAssessment, TrendLabel, VolLabel, VolQuantiles,
};
use super::{AgentError, SignalCache};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenerConfig {
    pub min_factors_required: usize,
    /// Ensemble size cap K.
    pub max_selected: usize,
    /// Greedy diversification admits a candidate only below this absolute
    /// signal correlation against everything already selected.
    pub corr_threshold: Real,
    /// Trailing days for the signal correlation estimate.
    pub corr_lookback: usize,
}

impl Default for ScreenerConfig {
    fn default() -> Self {
        Self { min_factors_required: 3, max_selected: 5, corr_threshold: 0.7, corr_lookback: 60 }
    }
}

/// Precomputed market context shared across daily cycles.
#[derive(Debug)]
pub struct MarketInputs {
    /// Equal-weight index close proxy per panel day.
    pub index_closes: Vec<Real>,
    /// Daily simple returns per (day, asset); first row missing.
    pub constituent_returns: Array2<Real>,
    pub vol_quantiles: VolQuantiles,
    pub days_per_year: u32,
}

impl MarketInputs {
    pub fn from_panel(panel: &PricePanel, vol_quantiles: VolQuantiles) -> Self {
        let (t, n) = (panel.n_days(), panel.n_assets());
        let mut returns = Array2::from_elem((t, n), crate::panel::MISSING);
        for a in 0..n {
            for ti in 1..t {
                let (p0, p1) = (panel.close[[ti - 1, a]], panel.close[[ti, a]]);
                if !is_missing(p0) && !is_missing(p1) && p0 > 0.0 {
                    returns[[ti, a]] = p1 / p0 - 1.0;
                }
            }
        }
        Self {
            index_closes: panel.equal_weight_index("close"),
            constituent_returns: returns,
            vol_quantiles,
            days_per_year: panel.calendar.days_per_year(),
        }
    }
}

/// The deterministic regime-suitability table.
///
/// Momentum thrives in trending labels, reversal in range-bound markets,
/// volatility factors when realized vol is high, liquidity factors when the
/// cross-section co-moves; the mismatched opposite is penalized.
pub fn regime_multiplier(category: FactorCategory, regime: &RegimeAssessment) -> Real {
    let trending = regime.trend_label != TrendLabel::RangeBound
        && (regime.trend_value >= 0.75 || regime.trend_value <= 0.25);
    match category {
        FactorCategory::Momentum => {
            if trending {
                1.25
            } else if regime.trend_label == TrendLabel::RangeBound {
                0.75
            } else {
                1.0
            }
        }
        FactorCategory::Reversal => {
            if regime.trend_label == TrendLabel::RangeBound {
                1.25
            } else if trending {
                0.75
            } else {
                1.0
            }
        }
        FactorCategory::Volatility => match regime.vol_label {
            VolLabel::High | VolLabel::VeryHigh => 1.25,
            VolLabel::VeryLow | VolLabel::Low => 0.75,
            VolLabel::Medium => 1.0,
        },
        FactorCategory::Liquidity => match regime.corr_label {
            CorrLabel::CoMoving | CorrLabel::IndexLed => 1.25,
            CorrLabel::LowDispersion | CorrLabel::MildDispersion => 0.75,
            CorrLabel::Mixed => 1.0,
        },
        FactorCategory::Value | FactorCategory::Quality | FactorCategory::Other => 1.0,
    }
}

/// Cap on the ICIR magnitude entering suitability; degenerate (zero-variance)
/// ICIRs sit at the cap since constant-sign stability is maximal stability.
const ICIR_CAP: Real = 3.0;

fn suitability(record: &FactorRecord, regime: &RegimeAssessment) -> Option<Real> {
    let latest = record.latest()?;
    let icir_mag = latest.icir.map_or(ICIR_CAP, |x| x.abs().min(ICIR_CAP));
    Some(icir_mag * regime_multiplier(record.category, regime))
}

/// Absolute Pearson correlation between two signals over trailing rows,
/// pooled across (day, asset) cells where both are observed. `None` when
/// fewer than 10 common cells exist.
fn signal_correlation(
    a: &Array2<Real>,
    b: &Array2<Real>,
    lo: usize,
    hi: usize,
) -> Option<Real> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in lo..=hi {
        for c in 0..a.ncols() {
            let (x, y) = (a[[t, c]], b[[t, c]]);
            if !is_missing(x) && !is_missing(y) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    if xs.len() < 10 {
        return None;
    }
    pearson(&xs, &ys).map(Real::abs)
}

#[derive(Debug, Clone)]
pub struct ScreenerOutcome {
    pub ensemble: Vec<EnsembleEntry>,
    pub regime: RegimeAssessment,
    pub skipped: bool,
    /// (factor id, suitability) for every effective candidate, sorted as
    /// ranked.
    pub ranked: Vec<(String, Real)>,
}

/// One Screener cycle at panel row `day_idx`.
///
/// With fewer than `min_factors_required` effective factors the cycle skips
/// (an empty ensemble and an `insufficient_factors` memory tag — a value,
/// not an error). Insufficient regime history degrades to the neutral
/// mid-grid assessment.
#[allow(clippy::too_many_arguments)]
pub fn screener_cycle(
    library: &[FactorRecord],
    panel: &PricePanel,
    market: &MarketInputs,
    day_idx: usize,
    memory: &mut MemoryStore,
    config: &ScreenerConfig,
    cache: &mut SignalCache,
    backend: &PolicyBackend,
) -> Result<ScreenerOutcome, AgentError> {
    let day = panel.calendar.days()[day_idx];
    let regime = match assess_regime(
        &market.index_closes,
        market.constituent_returns.view(),
        day_idx,
        market.days_per_year,
        market.vol_quantiles,
        day,
    ) {
        Ok(r) => r,
        Err(AgentError::InsufficientHistory { .. }) => RegimeAssessment::neutral(day),
        Err(e) => return Err(e),
    };

    let effective: Vec<&FactorRecord> = library
        .iter()
        .filter(|r| r.status == FactorStatus::Effective && r.latest().is_some())
        .collect();
    if effective.len() < config.min_factors_required {
        memory.record(
            day,
            AgentKind::Screener,
            "skip",
            Some(MetaTag::InsufficientFactors),
            json!({ "effective": effective.len(), "required": config.min_factors_required }),
        );
        return Ok(ScreenerOutcome { ensemble: Vec::new(), regime, skipped: true, ranked: Vec::new() });
    }

    let mut ranked: Vec<(&FactorRecord, Real)> = effective
        .iter()
        .filter_map(|r| suitability(r, &regime).map(|s| (*r, s)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.factor_id.cmp(&b.0.factor_id))
    });
    let ranked_ids: Vec<(String, Real)> =
        ranked.iter().map(|(r, s)| (r.factor_id.clone(), *s)).collect();

    // greedy diversification under the correlation threshold
    let lo = day_idx.saturating_sub(config.corr_lookback.saturating_sub(1));
    let mut selected: Vec<(&FactorRecord, Real)> = Vec::new();
    for (record, s) in &ranked {
        if selected.len() >= config.max_selected {
            break;
        }
        let sig = cache.get_or_eval(&record.expression, panel)?;
        let mut crowded = false;
        for (other, _) in &selected {
            let other_sig = cache.get_or_eval(&other.expression, panel)?;
            if let Some(corr) = signal_correlation(&sig.values, &other_sig.values, lo, day_idx) {
                if corr >= config.corr_threshold {
                    crowded = true;
                    break;
                }
            }
        }
        if !crowded {
            selected.push((record, *s));
        }
    }

    let total: Real = selected.iter().map(|(_, s)| *s).sum();
    let deterministic: Vec<EnsembleEntry> = selected
        .iter()
        .map(|(r, s)| EnsembleEntry {
            factor_id: r.factor_id.clone(),
            weight: if total > 0.0 { s / total } else { 1.0 / selected.len() as Real },
            direction: if r.latest().unwrap().mean_ic < 0.0 { -1 } else { 1 },
            // rank transform keeps mixed-scale signals commensurable
            transform_hint: Some(TransformHint::Rank),
            expression: Some(r.expression.clone()),
        })
        .collect();

    let mut ensemble = backend
        .choose_ensemble(&ranked_ids, &regime, config.max_selected)
        .unwrap_or(deterministic);
    // resolve expressions for externally chosen ensembles too
    for entry in &mut ensemble {
        if entry.expression.is_none() {
            entry.expression = library
                .iter()
                .find(|r| r.factor_id == entry.factor_id)
                .map(|r| r.expression.clone());
        }
    }

    memory.record(
        day,
        AgentKind::Screener,
        "ensemble",
        None,
        json!({
            "regime": regime,
            "ensemble": ensemble
                .iter()
                .map(|e| json!({
                    "factor_id": e.factor_id,
                    "weight": e.weight,
                    "direction": e.direction,
                }))
                .collect::<Vec<_>>(),
        }),
    );

    Ok(ScreenerOutcome { ensemble, regime, skipped: false, ranked: ranked_ids })
}

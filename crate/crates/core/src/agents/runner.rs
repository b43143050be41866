//! The daily closed loop: Miner (on maintenance days) → Screener → Trader →
//! settlement, with the three ablation modes.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dsl::{classical_library, parse};
use crate::exchange::{AccountSnapshot, Exchange, MarketProfile, TradeLogRow};
use crate::lab::{categorize, validate, AcceptanceConfig, FactorRecord, FactorStatus, LabError};
use crate::metrics::EquityCurve;
use crate::panel::PricePanel;
use crate::strategy::{
    rebalance_orders, target_holdings, EnsembleEntry, Theta, TransformHint,
};
use crate::{Real, INITIAL_CAPITAL};

use super::backend::PolicyBackend;
use super::memory::{AgentKind, MemoryStore, MetaTag};
use super::miner::{miner_cycle, MinerConfig};
use super::regime::{vol_quantiles_from_sample, RegimeAssessment, VolQuantiles};
use super::screener::{screener_cycle, MarketInputs, ScreenerConfig};
use super::trader::{
    closes_at, scored_day, trader_cycle, TraderConfig,
};
use super::{AgentError, SignalCache};

/// §3.5-style component replacements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    /// Freeze the library to the built-in classical set.
    NoMiner,
    /// Uniform random factor subset with equal weights.
    NoScreener,
    /// Fixed Θ, no search.
    NoTrader,
}

/// Where the volatility-clamp reference sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuantileSample {
    /// Panel rows before the run window (no look-ahead).
    #[default]
    Train,
    /// The whole panel; mildly hindsighted, exposed for study only.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub seed: u64,
    pub acceptance: AcceptanceConfig,
    pub miner: MinerConfig,
    pub screener: ScreenerConfig,
    pub trader: TraderConfig,
    pub vol_quantile_sample: QuantileSample,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            acceptance: AcceptanceConfig::default(),
            miner: MinerConfig::default(),
            screener: ScreenerConfig::default(),
            trader: TraderConfig::default(),
            vol_quantile_sample: QuantileSample::Train,
        }
    }
}

/// One row of the per-day episode trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DailyRecord {
    pub day: NaiveDate,
    pub nav: Real,
    pub realized_return: Real,
    pub theta: Option<Theta>,
    pub regime: Option<RegimeAssessment>,
    pub skipped: bool,
}

/// Everything a run leaves behind.
#[derive(Debug)]
pub struct EpisodeResult {
    pub equity: EquityCurve,
    pub records: Vec<DailyRecord>,
    pub trade_log: Vec<TradeLogRow>,
    pub snapshots: Vec<AccountSnapshot>,
    pub memory: MemoryStore,
    /// Library snapshots taken at each miner epoch (day, records).
    pub library_snapshots: Vec<(NaiveDate, Vec<FactorRecord>)>,
    pub final_library: Vec<FactorRecord>,
    pub vol_quantiles: VolQuantiles,
}

/// Fallback clamp reference when the panel has too little history to
/// estimate volatility percentiles.
const DEFAULT_VOL_QUANTILES: VolQuantiles = VolQuantiles { q05: 0.10, q95: 0.40 };

fn resolve_vol_quantiles(
    market: &MarketInputs0,
    sample: QuantileSample,
    run_start: usize,
) -> VolQuantiles {
    let rows = match sample {
        QuantileSample::Train => 20..run_start,
        QuantileSample::Full => 20..market.index_closes.len(),
    };
    vol_quantiles_from_sample(&market.index_closes, rows, market.days_per_year)
        .unwrap_or(DEFAULT_VOL_QUANTILES)
}

// index closes are needed before MarketInputs is fully assembled
struct MarketInputs0 {
    index_closes: Vec<Real>,
    days_per_year: u32,
}

/// Validate the classical set once so the frozen library carries usable
/// measurements; factors that cannot evaluate on this panel are marked
/// ineffective rather than dropped.
fn classical_records(
    panel: &PricePanel,
    window: (NaiveDate, NaiveDate),
) -> Result<Vec<FactorRecord>, AgentError> {
    let mut out = Vec::new();
    for (id, expr) in classical_library() {
        match validate(&id, &expr, panel, window) {
            Ok(report) => out.push(FactorRecord {
                factor_id: id,
                expression: expr.to_string(),
                category: categorize(&expr),
                status: FactorStatus::Effective,
                history: vec![report],
            }),
            Err(LabError::NoValidDays) | Err(LabError::Dsl(_)) => out.push(FactorRecord {
                factor_id: id,
                expression: expr.to_string(),
                category: categorize(&expr),
                status: FactorStatus::Ineffective,
                history: vec![],
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Uniform random ensemble for the no-screener ablation: K factors drawn
/// without replacement, equal weights, direction from the latest IC sign.
fn random_ensemble(
    library: &[FactorRecord],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<EnsembleEntry> {
    let mut effective: Vec<&FactorRecord> = library
        .iter()
        .filter(|r| r.status == FactorStatus::Effective && r.latest().is_some())
        .collect();
    effective.sort_by(|a, b| a.factor_id.cmp(&b.factor_id));
    effective.shuffle(rng);
    let chosen = &effective[..k.min(effective.len())];
    let w = 1.0 / chosen.len().max(1) as Real;
    chosen
        .iter()
        .map(|r| EnsembleEntry {
            factor_id: r.factor_id.clone(),
            weight: w,
            direction: if r.latest().unwrap().mean_ic < 0.0 { -1 } else { 1 },
            transform_hint: Some(TransformHint::Rank),
            expression: Some(r.expression.clone()),
        })
        .collect()
}

/// Run the closed loop over an inclusive date range.
///
/// Daily sequence: miner (on cadence days), screener, trader, settlement.
/// Initial capital is 10,000,000. The same seed and config reproduce the
/// episode bit for bit.
pub fn run_loop(
    panel: &PricePanel,
    profile: &MarketProfile,
    range: (NaiveDate, NaiveDate),
    config: &RunnerConfig,
    ablation: Ablation,
    backend: &PolicyBackend,
) -> Result<EpisodeResult, AgentError> {
    let (i0, i1) = panel.date_range_indices(range.0, range.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut memory = MemoryStore::new();
    let mut cache = SignalCache::new();
    let mut exchange = Exchange::new(*profile, INITIAL_CAPITAL);
    // first-day submissions check against the prior close
    exchange.observe_closes(&closes_at(panel, i0.saturating_sub(1)));

    let market0 = MarketInputs0 {
        index_closes: panel.equal_weight_index("close"),
        days_per_year: panel.calendar.days_per_year(),
    };
    let vol_quantiles = resolve_vol_quantiles(&market0, config.vol_quantile_sample, i0);
    let market = MarketInputs::from_panel(panel, vol_quantiles);

    let miner_window = |t: usize| -> Option<(NaiveDate, NaiveDate)> {
        if t < 25 {
            return None;
        }
        let end = t - 1;
        let start = end.saturating_sub(config.miner.validation_lookback.saturating_sub(1));
        Some((panel.calendar.days()[start], panel.calendar.days()[end]))
    };

    let mut library: Vec<FactorRecord> = if ablation == Ablation::NoMiner {
        match miner_window(i0) {
            Some(window) => classical_records(panel, window)?,
            None => Vec::new(),
        }
    } else {
        Vec::new()
    };

    let mut records = Vec::with_capacity(i1 - i0 + 1);
    let mut snapshots = Vec::with_capacity(i1 - i0 + 1);
    let mut library_snapshots = Vec::new();
    let mut navs = Vec::with_capacity(i1 - i0 + 1);
    let mut prev_nav = INITIAL_CAPITAL;

    for t in i0..=i1 {
        let day = panel.calendar.days()[t];
        let miner_due = (t - i0) % config.miner.cadence_days == 0;

        if miner_due {
            if let Some(window) = miner_window(t) {
                match ablation {
                    Ablation::NoMiner => {
                        // membership frozen; refresh measurements only
                        refresh_frozen_library(&mut library, panel, window)?;
                    }
                    _ => {
                        miner_cycle(
                            &mut library,
                            panel,
                            window,
                            &mut memory,
                            &config.acceptance,
                            &config.miner,
                            &mut rng,
                            backend,
                        )?;
                    }
                }
                library_snapshots.push((day, library.clone()));
            }
        }

        let (ensemble, regime, screener_skipped) = if ablation == Ablation::NoScreener {
            let ens = random_ensemble(&library, config.screener.max_selected, &mut rng);
            if ens.is_empty() {
                memory.record(
                    day,
                    AgentKind::Screener,
                    "skip",
                    Some(MetaTag::InsufficientFactors),
                    json!({ "effective": 0 }),
                );
                (Vec::new(), None, true)
            } else {
                memory.record(
                    day,
                    AgentKind::Screener,
                    "ensemble",
                    None,
                    json!({
                        "mode": "uniform_random",
                        "ensemble": ens.iter().map(|e| &e.factor_id).collect::<Vec<_>>(),
                    }),
                );
                (ens, None, false)
            }
        } else {
            let out = screener_cycle(
                &library,
                panel,
                &market,
                t,
                &mut memory,
                &config.screener,
                &mut cache,
                backend,
            )?;
            (out.ensemble, Some(out.regime), out.skipped)
        };

        let (theta, trader_skipped) = if ablation == Ablation::NoTrader {
            let theta = fixed_reference_theta(profile);
            let skipped = if ensemble.is_empty() {
                memory.record(
                    day,
                    AgentKind::Trader,
                    "skip",
                    Some(MetaTag::EmptyEnsembleSkipped),
                    json!({}),
                );
                true
            } else {
                execute_fixed(&ensemble, panel, t, &mut exchange, &mut memory, &theta, &mut cache)?;
                false
            };
            (if skipped { None } else { Some(theta) }, skipped)
        } else {
            let out = trader_cycle(
                &ensemble,
                panel,
                t,
                &mut exchange,
                &mut memory,
                &config.trader,
                &mut cache,
                backend,
            )?;
            (out.theta, out.skipped)
        };

        let report = exchange.settle_day(day, &closes_at(panel, t));
        let nav = report.nav;
        let realized = if prev_nav > 0.0 { nav / prev_nav - 1.0 } else { 0.0 };
        if !trader_skipped && !screener_skipped {
            memory.record(
                day,
                AgentKind::Trader,
                "execution",
                Some(MetaTag::Executed),
                json!({ "nav": nav, "realized_return": realized, "theta": theta }),
            );
        }
        snapshots.push(exchange.snapshot(day));
        navs.push(nav);
        records.push(DailyRecord {
            day,
            nav,
            realized_return: realized,
            theta,
            regime,
            skipped: trader_skipped,
        });
        prev_nav = nav;
    }

    let equity = EquityCurve::new(
        panel.calendar.days()[i0..=i1].to_vec(),
        navs,
        profile.market_id,
        profile.rf_annual,
    )
    .expect("navs cover the range");

    Ok(EpisodeResult {
        equity,
        records,
        trade_log: exchange.trade_log().to_vec(),
        snapshots,
        memory,
        library_snapshots,
        final_library: library,
        vol_quantiles,
    })
}

/// The fixed Θ used when the Trader search is ablated.
pub fn fixed_reference_theta(profile: &MarketProfile) -> Theta {
    let gamma = profile.default_gamma();
    Theta::new(10, if gamma < 1.0 { 10 } else { 0 }, 0.8, gamma)
}

/// Rebalance with a fixed Θ: the no-trader ablation path (no search, no
/// improved/rejected events).
fn execute_fixed(
    ensemble: &[EnsembleEntry],
    panel: &PricePanel,
    day_idx: usize,
    exchange: &mut Exchange,
    memory: &mut MemoryStore,
    theta: &Theta,
    cache: &mut SignalCache,
) -> Result<(), AgentError> {
    let day = panel.calendar.days()[day_idx];
    let scored = scored_day(ensemble, panel, cache, day_idx)?;
    if scored.len() < theta.n_long + theta.effective_n_short() {
        return Ok(());
    }
    let long: Vec<_> = scored.iter().take(theta.n_long).map(|(a, _)| a.clone()).collect();
    let short: Vec<_> =
        scored.iter().rev().take(theta.effective_n_short()).map(|(a, _)| a.clone()).collect();
    let closes = closes_at(panel, day_idx);
    let nav = exchange.marked_nav(&closes)?;
    if nav <= 0.0 {
        return Ok(());
    }
    let targets = target_holdings(&long, &short, nav, theta, &closes, &exchange.profile)?;
    for req in rebalance_orders(exchange, &targets) {
        if let Err(e) = exchange.submit_order(day, req.clone()) {
            memory.record(
                day,
                AgentKind::Trader,
                "order_rejected",
                None,
                json!({ "asset": req.asset, "error": e.to_string() }),
            );
        }
    }
    Ok(())
}

/// No-miner maintenance: refresh every record's measurements on the new
/// window without touching membership or deprecating anything.
fn refresh_frozen_library(
    library: &mut [FactorRecord],
    panel: &PricePanel,
    window: (NaiveDate, NaiveDate),
) -> Result<(), AgentError> {
    for record in library.iter_mut() {
        if record.status != FactorStatus::Effective {
            continue;
        }
        let expr = parse(&record.expression)?;
        match validate(&record.factor_id, &expr, panel, window) {
            Ok(report) => record.history.push(report),
            Err(LabError::NoValidDays) | Err(LabError::Dsl(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

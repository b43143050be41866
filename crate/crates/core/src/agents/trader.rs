//! Trader policy: grid search over reference-strategy hyperparameters
//! scored by a trailing-window backtest, then live rebalancing of the
//! session exchange.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::exchange::{Exchange, MarketProfile};
use crate::metrics::{max_drawdown_from_values, sharpe_from_values};
use crate::panel::{is_missing, PricePanel};
use crate::strategy::{
    composite_scores, rebalance_orders, target_holdings, EnsembleEntry, Theta,
};
use crate::{AssetId, Real, INITIAL_CAPITAL};

use super::backend::PolicyBackend;
use super::memory::{AgentKind, MemoryStore, MetaTag};
use super::{AgentError, SignalCache};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraderConfig {
    /// Trailing backtest window per candidate Θ, in trading days.
    pub lookback: usize,
    /// Drawdown weight in the objective J = SR + λ·MDD.
    pub lambda: Real,
    pub n_long_grid: Vec<usize>,
    pub n_short_grid: Vec<usize>,
    pub beta: Real,
}

impl Default for TraderConfig {
    fn default() -> Self {
        Self {
            lookback: 120,
            lambda: 0.5,
            n_long_grid: vec![5, 10, 20],
            n_short_grid: vec![0, 5, 10],
            beta: 0.8,
        }
    }
}

/// Candidate Θ grid for a profile, in deterministic lexicographic order.
/// Long-only profiles (γ = 1) collapse the short grid to zero.
pub fn theta_grid(config: &TraderConfig, profile: &MarketProfile) -> Vec<Theta> {
    let gamma = profile.default_gamma();
    let shorts: Vec<usize> = if profile.allow_short && gamma < 1.0 {
        config.n_short_grid.clone()
    } else {
        vec![0]
    };
    let mut out = Vec::new();
    for &n_long in &config.n_long_grid {
        for &n_short in &shorts {
            out.push(Theta::new(n_long, n_short, config.beta, gamma));
        }
    }
    out
}

/// Per-day scored cross-section: assets sorted by descending score with
/// ascending-id tie break.
pub type ScoredDay = Vec<(AssetId, Real)>;

/// Composite scores for one panel row over universe members with a close.
pub fn scored_day(
    ensemble: &[EnsembleEntry],
    panel: &PricePanel,
    cache: &mut SignalCache,
    day_idx: usize,
) -> Result<ScoredDay, AgentError> {
    let members = panel.members_on(day_idx);
    let assets: Vec<AssetId> = members
        .iter()
        .filter(|&&a| !is_missing(panel.close[[day_idx, a]]))
        .map(|&a| panel.assets[a].clone())
        .collect();
    if assets.is_empty() {
        return Ok(Vec::new());
    }
    let mut signals: BTreeMap<String, Vec<Real>> = BTreeMap::new();
    for entry in ensemble {
        // entries carry resolved DSL text; a bare id is assumed to be one
        let expr = entry.expression.clone().unwrap_or_else(|| entry.factor_id.clone());
        let sig = cache.get_or_eval(&expr, panel)?;
        let row: Vec<Real> = members
            .iter()
            .filter(|&&a| !is_missing(panel.close[[day_idx, a]]))
            .map(|&a| sig.values[[day_idx, a]])
            .collect();
        signals.insert(entry.factor_id.clone(), row);
    }
    let scores = composite_scores(ensemble, &signals, &assets)?;
    let mut ranked: Vec<(AssetId, Real)> = scores.into_iter().collect();
    ranked.sort_by(|x, y| {
        y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| x.0.cmp(&y.0))
    });
    Ok(ranked)
}

fn select_from_scored(
    scored: &ScoredDay,
    n_long: usize,
    n_short: usize,
) -> Option<(Vec<AssetId>, Vec<AssetId>)> {
    if scored.len() < n_long + n_short {
        return None;
    }
    let long = scored.iter().take(n_long).map(|(a, _)| a.clone()).collect();
    let short = scored.iter().rev().take(n_short).map(|(a, _)| a.clone()).collect();
    Some((long, short))
}

/// Backtest one Θ over pre-scored rows; returns the daily NAV curve.
///
/// Days whose scored universe is smaller than the selection hold positions
/// rather than trade.
pub fn backtest_theta(
    theta: &Theta,
    scored_rows: &[(usize, ScoredDay)],
    panel: &PricePanel,
    profile: &MarketProfile,
) -> Vec<Real> {
    let mut ex = Exchange::new(*profile, INITIAL_CAPITAL);
    if let Some((first, _)) = scored_rows.first() {
        ex.observe_closes(&closes_at(panel, first.saturating_sub(1)));
    }
    let mut curve = Vec::with_capacity(scored_rows.len());
    for (row, scored) in scored_rows {
        let day = panel.calendar.days()[*row];
        let closes = closes_at(panel, *row);
        let nav = ex.marked_nav(&closes).unwrap_or(INITIAL_CAPITAL);
        if nav > 0.0 {
            if let Some((long, short)) =
                select_from_scored(scored, theta.n_long, theta.effective_n_short())
            {
                if let Ok(targets) =
                    target_holdings(&long, &short, nav, theta, &closes, profile)
                {
                    for req in rebalance_orders(&ex, &targets) {
                        let _ = ex.submit_order(day, req);
                    }
                }
            }
        }
        let report = ex.settle_day(day, &closes);
        curve.push(report.nav);
    }
    curve
}

/// Close prices for one panel row (missing assets omitted).
pub fn closes_at(panel: &PricePanel, row: usize) -> BTreeMap<AssetId, Real> {
    let mut out = BTreeMap::new();
    for (a, asset) in panel.assets.iter().enumerate() {
        let px = panel.close[[row, a]];
        if !is_missing(px) {
            out.insert(asset.clone(), px);
        }
    }
    out
}

/// J = SR + λ·MDD over a NAV curve; an undefined Sharpe contributes zero.
pub fn objective(curve: &[Real], profile: &MarketProfile, lambda: Real) -> Real {
    let d = profile.days_per_year() as Real;
    let sr = sharpe_from_values(curve, d, profile.rf_annual).unwrap_or(0.0);
    sr + lambda * max_drawdown_from_values(curve)
}

#[derive(Debug, Clone)]
pub struct TraderOutcome {
    pub theta: Option<Theta>,
    pub submitted: Vec<u64>,
    pub rejected_orders: usize,
    pub skipped: bool,
    pub best_objective: Option<Real>,
}

impl TraderOutcome {
    fn skipped() -> Self {
        Self {
            theta: None,
            submitted: Vec::new(),
            rejected_orders: 0,
            skipped: true,
            best_objective: None,
        }
    }
}

/// One Trader cycle at panel row `day_idx` against the live exchange.
///
/// An empty ensemble skips the day (`empty_ensemble_skipped`). Otherwise
/// every grid Θ is backtested over the trailing lookback window, improved /
/// rejected events trace the search, and the best Θ rebalances the live
/// book at today's close.
#[allow(clippy::too_many_arguments)]
pub fn trader_cycle(
    ensemble: &[EnsembleEntry],
    panel: &PricePanel,
    day_idx: usize,
    exchange: &mut Exchange,
    memory: &mut MemoryStore,
    config: &TraderConfig,
    cache: &mut SignalCache,
    backend: &PolicyBackend,
) -> Result<TraderOutcome, AgentError> {
    let day = panel.calendar.days()[day_idx];
    if ensemble.is_empty() {
        memory.record(
            day,
            AgentKind::Trader,
            "skip",
            Some(MetaTag::EmptyEnsembleSkipped),
            json!({}),
        );
        return Ok(TraderOutcome::skipped());
    }

    // scores are Θ-independent: compute each window row once
    let w0 = day_idx.saturating_sub(config.lookback);
    let mut scored_rows: Vec<(usize, ScoredDay)> = Vec::new();
    for row in w0..day_idx {
        scored_rows.push((row, scored_day(ensemble, panel, cache, row)?));
    }
    let today_scored = scored_day(ensemble, panel, cache, day_idx)?;

    let grid = theta_grid(config, &exchange.profile);
    let mut evaluated: Vec<(Theta, Real)> = Vec::new();
    let mut best: Option<(Real, Theta)> = None;
    for theta in &grid {
        let j = if scored_rows.len() >= 5 {
            let curve = backtest_theta(theta, &scored_rows, panel, &exchange.profile);
            objective(&curve, &exchange.profile, config.lambda)
        } else {
            0.0
        };
        evaluated.push((*theta, j));
        let improved = best.map_or(true, |(bj, _)| j > bj);
        memory.record(
            day,
            AgentKind::Trader,
            "theta_candidate",
            Some(if improved { MetaTag::Improved } else { MetaTag::Rejected }),
            json!({ "theta": theta, "objective": j }),
        );
        if improved {
            best = Some((j, *theta));
        }
    }
    let (best_j, mut theta) = best.expect("grid is never empty");
    if let Some(choice) = backend.choose_theta(&evaluated) {
        theta = choice;
    }

    // live rebalance at today's close
    let closes = closes_at(panel, day_idx);
    let nav = exchange.marked_nav(&closes)?;
    let mut submitted = Vec::new();
    let mut rejected = 0usize;
    if nav > 0.0 {
        if let Some((long, short)) =
            select_from_scored(&today_scored, theta.n_long, theta.effective_n_short())
        {
            let targets = target_holdings(&long, &short, nav, &theta, &closes, &exchange.profile)?;
            for req in rebalance_orders(exchange, &targets) {
                match exchange.submit_order(day, req.clone()) {
                    Ok(id) => submitted.push(id),
                    Err(e) => {
                        rejected += 1;
                        memory.record(
                            day,
                            AgentKind::Trader,
                            "order_rejected",
                            None,
                            json!({ "asset": req.asset, "side": req.side, "error": e.to_string() }),
                        );
                    }
                }
            }
        }
    }

    Ok(TraderOutcome {
        theta: Some(theta),
        submitted,
        rejected_orders: rejected,
        skipped: false,
        best_objective: Some(best_j),
    })
}

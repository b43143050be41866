//! Fixed reference strategy: composite scoring, top/bottom selection,
//! exposure-controlled sizing, and rebalance order generation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::{Exchange, MarketProfile, OrderRequest, Side};
use crate::stats::average_ranks;
use crate::{AssetId, Real};

/// Strategy hyperparameters Θ = (n_long, n_short, β, γ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub n_long: usize,
    pub n_short: usize,
    /// Gross exposure in (0, 1].
    pub beta: Real,
    /// Net exposure bias in [−1, 1]; γ = 1 is long-only.
    pub gamma: Real,
}

impl Theta {
    pub fn new(n_long: usize, n_short: usize, beta: Real, gamma: Real) -> Self {
        Self { n_long, n_short, beta, gamma }
    }

    /// Long and short sizing budgets per the exposure split
    /// V_long = β·NAV·(1+γ)/2, V_short = β·NAV·(1−γ)/2.
    pub fn budgets(&self, nav: Real) -> (Real, Real) {
        let v_long = self.beta * nav * (1.0 + self.gamma) / 2.0;
        let v_short = self.beta * nav * (1.0 - self.gamma) / 2.0;
        (v_long, v_short)
    }

    /// γ = 1 zeroes the short budget regardless of n_short.
    pub fn effective_n_short(&self) -> usize {
        if self.gamma >= 1.0 {
            0
        } else {
            self.n_short
        }
    }
}

/// Optional per-day cross-sectional transform applied before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformHint {
    Rank,
    Zscore,
    Winsorize,
}

/// One screener-selected factor with weight and direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleEntry {
    pub factor_id: String,
    /// Non-negative; entries sum to 1 over the ensemble.
    pub weight: Real,
    /// −1 or +1.
    pub direction: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_hint: Option<TransformHint>,
    /// Resolved DSL text, so an ensemble evaluates without the library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("scored universe of {scored} is smaller than n_long {n_long} + n_short {n_short}")]
    UniverseTooSmall { scored: usize, n_long: usize, n_short: usize },
    #[error("no price for {0}")]
    MissingPrice(AssetId),
    #[error("missing signal for factor {0}")]
    MissingSignal(String),
}

/// Winsorize clip level used when the hint carries no parameter.
const HINT_WINSOR_P: Real = 0.05;

fn apply_hint(values: &[Real], hint: Option<TransformHint>) -> Vec<Real> {
    let n = values.len();
    match hint {
        None => values.to_vec(),
        Some(TransformHint::Rank) => {
            if n < 2 {
                return values.to_vec();
            }
            average_ranks(values).into_iter().map(|r| (r - 1.0) / (n as Real - 1.0)).collect()
        }
        Some(TransformHint::Zscore) => {
            let mu = crate::stats::mean(values).unwrap_or(0.0);
            match crate::stats::sample_std(values) {
                Some(sd) if sd > 0.0 => values.iter().map(|x| (x - mu) / sd).collect(),
                _ => vec![0.0; n],
            }
        }
        Some(TransformHint::Winsorize) => {
            let lo = crate::stats::quantile(values, HINT_WINSOR_P).unwrap_or(0.0);
            let hi = crate::stats::quantile(values, 1.0 - HINT_WINSOR_P).unwrap_or(0.0);
            values.iter().map(|x| x.clamp(lo, hi)).collect()
        }
    }
}

/// Composite per-asset score φ_i = Σ_j w_j·d_j·f_j(i) for one day.
///
/// `signals` maps factor id to that day's per-asset values (NaN = missing).
/// Assets missing any factor value are excluded. Transform hints are applied
/// cross-sectionally over the non-missing assets first.
pub fn composite_scores(
    ensemble: &[EnsembleEntry],
    signals: &BTreeMap<String, Vec<Real>>,
    assets: &[AssetId],
) -> Result<BTreeMap<AssetId, Real>, StrategyError> {
    if ensemble.is_empty() {
        return Err(StrategyError::EmptyEnsemble);
    }
    let n = assets.len();
    let mut rows: Vec<&Vec<Real>> = Vec::with_capacity(ensemble.len());
    for e in ensemble {
        let row = signals
            .get(&e.factor_id)
            .ok_or_else(|| StrategyError::MissingSignal(e.factor_id.clone()))?;
        debug_assert_eq!(row.len(), n);
        rows.push(row);
    }
    // an asset participates only with a full set of factor values
    let alive: Vec<usize> = (0..n)
        .filter(|&a| rows.iter().all(|r| !r[a].is_nan()))
        .collect();
    let mut scores: BTreeMap<AssetId, Real> = BTreeMap::new();
    if alive.is_empty() {
        return Ok(scores);
    }
    let mut acc = vec![0.0; alive.len()];
    for (e, row) in ensemble.iter().zip(&rows) {
        let vals: Vec<Real> = alive.iter().map(|&a| row[a]).collect();
        let transformed = apply_hint(&vals, e.transform_hint);
        for (k, v) in transformed.iter().enumerate() {
            acc[k] += e.weight * e.direction as Real * v;
        }
    }
    for (k, &a) in alive.iter().enumerate() {
        scores.insert(assets[a].clone(), acc[k]);
    }
    Ok(scores)
}

/// Top-`n_long` / bottom-`n_short` selection by descending score, ties
/// broken by ascending asset id.
pub fn select(
    scores: &BTreeMap<AssetId, Real>,
    n_long: usize,
    n_short: usize,
) -> Result<(Vec<AssetId>, Vec<AssetId>), StrategyError> {
    if scores.len() < n_long + n_short {
        return Err(StrategyError::UniverseTooSmall {
            scored: scores.len(),
            n_long,
            n_short,
        });
    }
    let mut ranked: Vec<(&AssetId, Real)> = scores.iter().map(|(a, s)| (a, *s)).collect();
    ranked.sort_by(|x, y| {
        y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| x.0.cmp(y.0))
    });
    let long: Vec<AssetId> = ranked.iter().take(n_long).map(|(a, _)| (*a).clone()).collect();
    let short: Vec<AssetId> =
        ranked.iter().rev().take(n_short).map(|(a, _)| (*a).clone()).collect();
    Ok((long, short))
}

fn floor_to_lot(qty: Real, lot: u64) -> u64 {
    if !qty.is_finite() || qty <= 0.0 {
        return 0;
    }
    let q = qty as u64;
    q - q % lot
}

/// Per-asset signed target quantities for a selection under Θ.
///
/// Longs get floor_to_lot(V_long/(n_long·P)), shorts the negated analogue.
pub fn target_holdings(
    long: &[AssetId],
    short: &[AssetId],
    nav: Real,
    theta: &Theta,
    prices: &BTreeMap<AssetId, Real>,
    profile: &MarketProfile,
) -> Result<BTreeMap<AssetId, i64>, StrategyError> {
    let (v_long, v_short) = theta.budgets(nav);
    let mut targets: BTreeMap<AssetId, i64> = BTreeMap::new();
    for asset in long {
        let px = *prices.get(asset).ok_or_else(|| StrategyError::MissingPrice(asset.clone()))?;
        let raw = v_long / (long.len() as Real * px);
        let qty = floor_to_lot(raw, profile.lot_size);
        if qty > 0 {
            targets.insert(asset.clone(), qty as i64);
        }
    }
    if theta.gamma < 1.0 && v_short > 0.0 {
        for asset in short {
            let px =
                *prices.get(asset).ok_or_else(|| StrategyError::MissingPrice(asset.clone()))?;
            let raw = v_short / (short.len() as Real * px);
            let qty = floor_to_lot(raw, profile.lot_size);
            if qty > 0 {
                targets.insert(asset.clone(), -(qty as i64));
            }
        }
    }
    Ok(targets)
}

/// Rebalance order list: phase 1 liquidates held assets absent from the
/// targets, phase 2 emits delta orders toward each target. Zero deltas emit
/// nothing; both phases iterate assets in ascending id order.
pub fn rebalance_orders(
    exchange: &Exchange,
    targets: &BTreeMap<AssetId, i64>,
) -> Vec<OrderRequest> {
    let mut orders = Vec::new();
    let account = exchange.account();
    let held: Vec<AssetId> = account
        .long_positions
        .keys()
        .chain(account.short_positions.keys())
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for asset in &held {
        if !targets.contains_key(asset) {
            push_delta(&mut orders, asset, exchange.signed_position(asset), 0);
        }
    }
    for (asset, &target) in targets {
        push_delta(&mut orders, asset, exchange.signed_position(asset), target);
    }
    orders
}

/// Decompose a signed position move into BUY/SELL/COVER/SHORT legs.
/// A move crossing zero closes the opposing leg first.
fn push_delta(orders: &mut Vec<OrderRequest>, asset: &str, current: i64, target: i64) {
    let mut cur = current;
    if cur < 0 && target >= 0 {
        orders.push(OrderRequest::market(asset, Side::Cover, (-cur) as u64));
        cur = 0;
    } else if cur > 0 && target <= 0 {
        orders.push(OrderRequest::market(asset, Side::Sell, cur as u64));
        cur = 0;
    }
    match target.cmp(&cur) {
        std::cmp::Ordering::Greater => {
            if cur >= 0 {
                orders.push(OrderRequest::market(asset, Side::Buy, (target - cur) as u64));
            } else {
                orders.push(OrderRequest::market(asset, Side::Cover, (target - cur) as u64));
            }
        }
        std::cmp::Ordering::Less => {
            if target >= 0 {
                orders.push(OrderRequest::market(asset, Side::Sell, (cur - target) as u64));
            } else {
                orders.push(OrderRequest::market(asset, Side::Short, (cur - target) as u64));
            }
        }
        std::cmp::Ordering::Equal => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::MarketId;

    fn assets(names: &[&str]) -> Vec<AssetId> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn entry(id: &str, w: Real, d: i8) -> EnsembleEntry {
        EnsembleEntry { factor_id: id.into(), weight: w, direction: d, transform_hint: None, expression: None }
    }

    #[test]
    fn composite_single_entry_is_identity() {
        let mut signals = BTreeMap::new();
        signals.insert("f".to_string(), vec![0.3, 0.1, 0.9]);
        let scores =
            composite_scores(&[entry("f", 1.0, 1)], &signals, &assets(&["a", "b", "c"])).unwrap();
        assert_eq!(scores["a"], 0.3);
        assert_eq!(scores["c"], 0.9);
    }

    #[test]
    fn composite_direction_negates() {
        let mut signals = BTreeMap::new();
        signals.insert("f".to_string(), vec![0.3, 0.1, 0.9]);
        let scores =
            composite_scores(&[entry("f", 1.0, -1)], &signals, &assets(&["a", "b", "c"])).unwrap();
        assert_eq!(scores["a"], -0.3);
        assert_eq!(scores["c"], -0.9);
    }

    #[test]
    fn composite_hand_example() {
        // w = (0.6, 0.4), d = (+1, −1), values (0.5, 0.2) / (0.1, 0.9)
        let mut signals = BTreeMap::new();
        signals.insert("f1".to_string(), vec![0.5, 0.2]);
        signals.insert("f2".to_string(), vec![0.1, 0.9]);
        let ens = vec![entry("f1", 0.6, 1), entry("f2", 0.4, -1)];
        let scores = composite_scores(&ens, &signals, &assets(&["a", "b"])).unwrap();
        // dot-product oracle
        let by_hand_a = 0.6 * 0.5 - 0.4 * 0.1;
        let by_hand_b = 0.6 * 0.2 - 0.4 * 0.9;
        assert!((scores["a"] - by_hand_a).abs() < 1e-12);
        assert!((scores["b"] - by_hand_b).abs() < 1e-12);
        assert!((scores["a"] - 0.26).abs() < 1e-12);
        assert!((scores["b"] + 0.24).abs() < 1e-12);
    }

    #[test]
    fn composite_excludes_partial_assets() {
        let mut signals = BTreeMap::new();
        signals.insert("f1".to_string(), vec![0.5, Real::NAN, 0.2]);
        signals.insert("f2".to_string(), vec![0.1, 0.9, 0.3]);
        let ens = vec![entry("f1", 0.5, 1), entry("f2", 0.5, 1)];
        let scores = composite_scores(&ens, &signals, &assets(&["a", "b", "c"])).unwrap();
        assert!(!scores.contains_key("b"));
        assert_eq!(scores.len(), 2);
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(matches!(
            composite_scores(&[], &BTreeMap::new(), &assets(&["a"])),
            Err(StrategyError::EmptyEnsemble)
        ));
    }

    #[test]
    fn select_sorts_and_breaks_ties() {
        let mut scores = BTreeMap::new();
        for (a, s) in [("a", 3.0), ("b", 1.0), ("c", 2.0), ("d", 0.0)] {
            scores.insert(a.to_string(), s);
        }
        let (long, short) = select(&scores, 1, 1).unwrap();
        assert_eq!(long, vec!["a"]);
        assert_eq!(short, vec!["d"]);

        // tie at the boundary → lexicographically smaller id wins
        let mut scores = BTreeMap::new();
        for (a, s) in [("x", 1.0), ("m", 1.0), ("z", 0.0)] {
            scores.insert(a.to_string(), s);
        }
        let (long, _) = select(&scores, 1, 0).unwrap();
        assert_eq!(long, vec!["m"]);

        assert!(matches!(
            select(&scores, 3, 1),
            Err(StrategyError::UniverseTooSmall { .. })
        ));
    }

    #[test]
    fn budgets_match_reference_split() {
        // β = 0.8, γ = 0.5, NAV = 10M → V_long = 6M, V_short = 2M
        let theta = Theta::new(10, 5, 0.8, 0.5);
        let (vl, vs) = theta.budgets(10_000_000.0);
        assert_eq!(vl, 6_000_000.0);
        assert_eq!(vs, 2_000_000.0);

        // γ = 1 → no short budget
        let theta = Theta::new(10, 5, 0.8, 1.0);
        let (vl, vs) = theta.budgets(10_000_000.0);
        assert_eq!(vl, 8_000_000.0);
        assert_eq!(vs, 0.0);
        assert_eq!(theta.effective_n_short(), 0);
    }

    #[test]
    fn lot_flooring() {
        assert_eq!(floor_to_lot(163.2, 100), 100);
        assert_eq!(floor_to_lot(99.9, 100), 0);
        assert_eq!(floor_to_lot(163.2, 1), 163);
        // oracle: floor(163.2/100)×100
        assert_eq!(floor_to_lot(163.2, 100), ((163.2f64 / 100.0).floor() * 100.0) as u64);
    }

    #[test]
    fn gamma_one_produces_no_short_targets() {
        let theta = Theta::new(1, 1, 0.8, 1.0);
        let prices: BTreeMap<AssetId, Real> =
            [("a".to_string(), 10.0), ("b".to_string(), 10.0)].into();
        let targets = target_holdings(
            &["a".to_string()],
            &["b".to_string()],
            10_000.0,
            &theta,
            &prices,
            &MarketProfile::csi(),
        )
        .unwrap();
        assert!(targets.values().all(|q| *q > 0));
        assert!(!targets.contains_key("b"));
    }

    #[test]
    fn rebalance_is_idempotent_at_targets() {
        let mut ex = Exchange::new(MarketProfile::csi(), 1_000_000.0);
        let d0 = crate::synth::synthetic_calendar(MarketId::CsiLike, 2024, 5).days()[0];
        let closes: BTreeMap<AssetId, Real> = [("aaa".to_string(), 100.0)].into();
        ex.settle_day(d0, &closes);
        let d1 = crate::synth::synthetic_calendar(MarketId::CsiLike, 2024, 5).days()[1];
        ex.submit_order(d1, OrderRequest::market("aaa", Side::Buy, 300)).unwrap();
        ex.settle_day(d1, &closes);

        let targets: BTreeMap<AssetId, i64> = [("aaa".to_string(), 300i64)].into();
        assert!(rebalance_orders(&ex, &targets).is_empty());

        // held asset absent from targets → one full liquidation
        let orders = rebalance_orders(&ex, &BTreeMap::new());
        assert_eq!(orders.len(), 1);
        assert_eq!(orders[0].side, Side::Sell);
        assert_eq!(orders[0].quantity, 300);

        // delta from zero → single buy
        let targets: BTreeMap<AssetId, i64> = [("bbb".to_string(), 200i64)].into();
        let orders = rebalance_orders(&ex, &targets);
        assert_eq!(orders.len(), 2, "liquidate aaa, open bbb");
        assert_eq!(orders[1].side, Side::Buy);
        assert_eq!(orders[1].quantity, 200);
    }

    #[test]
    fn delta_crossing_zero_splits_legs() {
        let mut orders = Vec::new();
        push_delta(&mut orders, "x", 100, -200);
        assert_eq!(orders.len(), 2);
        assert_eq!(orders[0].side, Side::Sell);
        assert_eq!(orders[0].quantity, 100);
        assert_eq!(orders[1].side, Side::Short);
        assert_eq!(orders[1].quantity, 200);

        let mut orders = Vec::new();
        push_delta(&mut orders, "x", -100, 200);
        assert_eq!(orders.len(), 2);
        assert_eq!(orders[0].side, Side::Cover);
        assert_eq!(orders[0].quantity, 100);
        assert_eq!(orders[1].side, Side::Buy);
        assert_eq!(orders[1].quantity, 200);

        // shrinking a short without crossing zero
        let mut orders = Vec::new();
        push_delta(&mut orders, "x", -300, -100);
        assert_eq!(orders.len(), 1);
        assert_eq!(orders[0].side, Side::Cover);
        assert_eq!(orders[0].quantity, 200);

        // growing a short
        let mut orders = Vec::new();
        push_delta(&mut orders, "x", -100, -300);
        assert_eq!(orders.len(), 1);
        assert_eq!(orders[0].side, Side::Short);
        assert_eq!(orders[0].quantity, 200);
    }
}

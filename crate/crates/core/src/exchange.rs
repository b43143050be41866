//! Daily-close exchange simulator with CSI-like (T+1, long-only, board
//! lots) and US-like (T+0, short selling with margin) profiles.
//!
//! The exchange is a deterministic state machine: orders are submitted
//! between settlements and fill at the day's close with zero slippage.
//! Commission is charged on fill value. Pending orders expire after 7
//! trading days and records are purged after 14. On the US profile a
//! post-fill maintenance check force-covers shorts largest-first.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::MarketId;
use crate::{AssetId, Real};

/// Share settlement rule: T+1 restricts same-day sale of bought shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Settlement {
    TPlus1,
    TPlus0,
}

/// Exchange calibration for one market.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarketProfile {
    pub market_id: MarketId,
    pub settlement: Settlement,
    pub allow_short: bool,
    pub lot_size: u64,
    pub commission_rate: Real,
    pub initial_margin_rate: Real,
    pub maintenance_ratio: Real,
    pub rf_annual: Real,
}

impl MarketProfile {
    /// CSI-like: T+1, long-only, lot 100, 2 bp commission, 243 days/yr,
    /// 1.25% risk-free.
    pub fn csi() -> Self {
        Self {
            market_id: MarketId::CsiLike,
            settlement: Settlement::TPlus1,
            allow_short: false,
            lot_size: 100,
            commission_rate: 0.0002,
            initial_margin_rate: 0.0,
            maintenance_ratio: 0.0,
            rf_annual: 0.0125,
        }
    }

    /// US-like: T+0, shorting with 20% initial margin and 80% maintenance,
    /// lot 1, 1 bp commission, 252 days/yr, 3.81% risk-free.
    pub fn us() -> Self {
        Self {
            market_id: MarketId::UsLike,
            settlement: Settlement::TPlus0,
            allow_short: true,
            lot_size: 1,
            commission_rate: 0.0001,
            initial_margin_rate: 0.20,
            maintenance_ratio: 0.80,
            rf_annual: 0.0381,
        }
    }

    pub fn days_per_year(&self) -> u32 {
        self.market_id.days_per_year()
    }

    /// Long-only markets force γ = 1; long-short defaults to γ = 0.5.
    pub fn default_gamma(&self) -> Real {
        if self.allow_short {
            0.5
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Buy,
    Sell,
    Short,
    Cover,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Buy => "BUY",
            Side::Sell => "SELL",
            Side::Short => "SHORT",
            Side::Cover => "COVER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OrderStatus {
    Pending,
    Filled,
    Expired,
    Rejected,
    Cancelled,
}

impl OrderStatus {
    pub fn name(self) -> &'static str {
        match self {
            OrderStatus::Pending => "PENDING",
            OrderStatus::Filled => "FILLED",
            OrderStatus::Expired => "EXPIRED",
            OrderStatus::Rejected => "REJECTED",
            OrderStatus::Cancelled => "CANCELLED",
        }
    }
}

/// Parameters of an order submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRequest {
    pub asset: AssetId,
    pub side: Side,
    pub quantity: u64,
    pub limit_price: Option<Real>,
}

impl OrderRequest {
    pub fn market(asset: impl Into<AssetId>, side: Side, quantity: u64) -> Self {
        Self { asset: asset.into(), side, quantity, limit_price: None }
    }

    pub fn limit(asset: impl Into<AssetId>, side: Side, quantity: u64, limit: Real) -> Self {
        Self { asset: asset.into(), side, quantity, limit_price: Some(limit) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Order {
    pub order_id: u64,
    pub asset: AssetId,
    pub side: Side,
    pub quantity: u64,
    pub limit_price: Option<Real>,
    pub submitted_day: NaiveDate,
    pub status: OrderStatus,
    /// Trading days since submission.
    pub age_days: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LongPosition {
    pub qty: u64,
    /// Shares sellable today (bought before today on T+1).
    pub available: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShortPosition {
    pub qty: u64,
    /// Volume-weighted entry price; margin reservations use entry value.
    pub entry_price: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Account {
    pub cash: Real,
    pub long_positions: BTreeMap<AssetId, LongPosition>,
    pub short_positions: BTreeMap<AssetId, ShortPosition>,
    pub reserved_margin: Real,
    pub fee_paid_cumulative: Real,
}

impl Account {
    pub fn new(cash: Real) -> Self {
        Self {
            cash,
            long_positions: BTreeMap::new(),
            short_positions: BTreeMap::new(),
            reserved_margin: 0.0,
            fee_paid_cumulative: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExchangeError {
    #[error("short selling not allowed on this profile")]
    ShortNotAllowed,
    #[error("quantity {qty} violates lot size {lot}")]
    LotViolation { qty: u64, lot: u64 },
    #[error("insufficient available shares of {asset}: want {want}, have {have}")]
    InsufficientAvailableShares { asset: AssetId, want: u64, have: u64 },
    #[error("insufficient cash: need {need}, spendable {spendable}")]
    InsufficientCash { need: Real, spendable: Real },
    #[error("insufficient margin: need {need}, spendable {spendable}")]
    InsufficientMargin { need: Real, spendable: Real },
    #[error("no price available for {0}")]
    MissingPrice(AssetId),
    #[error("NAV must be positive, got {0}")]
    NonPositiveNav(Real),
    #[error("unknown order id {0}")]
    UnknownOrder(u64),
    #[error("order {0} is not pending")]
    NotPending(u64),
}

/// An executed trade.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fill {
    pub order_id: u64,
    pub asset: AssetId,
    pub side: Side,
    pub quantity: u64,
    pub price: Real,
    /// quantity × price, before commission.
    pub value: Real,
    pub commission: Real,
}

/// Forced short cover triggered by the maintenance check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginCall {
    pub asset: AssetId,
    pub equity_before: Real,
    pub requirement_before: Real,
    pub fill: Fill,
}

/// Everything that happened during one settlement step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettlementReport {
    pub day: NaiveDate,
    pub fills: Vec<Fill>,
    pub expired: Vec<u64>,
    pub purged: Vec<u64>,
    /// Orders cancelled at settlement because the fill would overdraw cash.
    pub cancelled_cash_shortfall: Vec<u64>,
    pub margin_calls: Vec<MarginCall>,
    pub cash_before: Real,
    pub cash_after: Real,
    /// Long availability after fills but before the T+1 roll, so same-day
    /// buys show as unavailable.
    pub post_fill_available: BTreeMap<AssetId, u64>,
    pub nav: Real,
}

/// Append-only trade log row (`day,order_id,asset,side,qty,price,commission,status`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeLogRow {
    pub day: NaiveDate,
    pub order_id: u64,
    pub asset: AssetId,
    pub side: Side,
    pub qty: u64,
    pub price: Real,
    pub commission: Real,
    pub status: OrderStatus,
}

/// Deterministic single-account exchange.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub profile: MarketProfile,
    account: Account,
    orders: BTreeMap<u64, Order>,
    next_order_id: u64,
    last_close: BTreeMap<AssetId, Real>,
    trade_log: Vec<TradeLogRow>,
}

const CASH_EPS: Real = 1e-9;
const EXPIRE_AFTER_DAYS: u32 = 7;
const PURGE_AFTER_DAYS: u32 = 14;

impl Exchange {
    pub fn new(profile: MarketProfile, initial_cash: Real) -> Self {
        Self {
            profile,
            account: Account::new(initial_cash),
            orders: BTreeMap::new(),
            next_order_id: 1,
            last_close: BTreeMap::new(),
            trade_log: Vec::new(),
        }
    }

    pub fn account(&self) -> &Account {
        &self.account
    }

    pub fn trade_log(&self) -> &[TradeLogRow] {
        &self.trade_log
    }

    pub fn order(&self, id: u64) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn pending_orders(&self) -> impl Iterator<Item = &Order> {
        self.orders.values().filter(|o| o.status == OrderStatus::Pending)
    }

    pub fn last_close(&self, asset: &str) -> Option<Real> {
        self.last_close.get(asset).copied()
    }

    /// Signed position quantity: long positive, short negative.
    pub fn signed_position(&self, asset: &str) -> i64 {
        let long = self.account.long_positions.get(asset).map_or(0, |p| p.qty as i64);
        let short = self.account.short_positions.get(asset).map_or(0, |p| p.qty as i64);
        long - short
    }

    fn pending_sell_qty(&self, asset: &str) -> u64 {
        self.pending_orders()
            .filter(|o| o.asset == asset && o.side == Side::Sell)
            .map(|o| o.quantity)
            .sum()
    }

    fn pending_cover_qty(&self, asset: &str) -> u64 {
        self.pending_orders()
            .filter(|o| o.asset == asset && o.side == Side::Cover)
            .map(|o| o.quantity)
            .sum()
    }

    fn reference_price(&self, req: &OrderRequest) -> Option<Real> {
        match (req.limit_price, self.last_close.get(&req.asset)) {
            (Some(limit), Some(&close)) => Some(match req.side {
                // worst fill for buy-side is the limit; short margin is
                // sized on the larger of the two
                Side::Buy | Side::Cover => limit,
                Side::Sell | Side::Short => limit.max(close),
            }),
            (Some(limit), None) => Some(limit),
            (None, Some(&close)) => Some(close),
            (None, None) => None,
        }
    }

    /// Cash adjusted for pending commitments: buy-side costs and short
    /// margin subtract, expected sell proceeds at reference prices credit.
    /// Settlement re-checks affordability on actual fills, so the credit
    /// only lets same-day liquidate-then-reinvest rebalances queue up.
    fn spendable_cash(&self) -> Real {
        let mut committed = 0.0;
        for o in self.pending_orders() {
            let close = self.last_close.get(&o.asset).copied();
            let px = match (o.limit_price, close) {
                (Some(limit), _) => limit,
                (None, Some(c)) => c,
                (None, None) => continue,
            };
            match o.side {
                Side::Buy | Side::Cover => {
                    committed += o.quantity as Real * px * (1.0 + self.profile.commission_rate);
                }
                Side::Short => {
                    // margin sized on the larger of limit and last close
                    let worst = close.map_or(px, |c| c.max(px));
                    committed += o.quantity as Real * worst * self.profile.initial_margin_rate;
                }
                Side::Sell => {
                    committed -= o.quantity as Real * px * (1.0 - self.profile.commission_rate);
                }
            }
        }
        self.account.cash - self.account.reserved_margin - committed
    }

    /// Queue an order, or reject it immediately.
    pub fn submit_order(&mut self, day: NaiveDate, req: OrderRequest) -> Result<u64, ExchangeError> {
        if matches!(req.side, Side::Short | Side::Cover) && !self.profile.allow_short {
            return Err(ExchangeError::ShortNotAllowed);
        }
        if req.quantity == 0 || req.quantity % self.profile.lot_size != 0 {
            return Err(ExchangeError::LotViolation {
                qty: req.quantity,
                lot: self.profile.lot_size,
            });
        }
        match req.side {
            Side::Sell => {
                let pos = self.account.long_positions.get(&req.asset);
                let held = match self.profile.settlement {
                    Settlement::TPlus1 => pos.map_or(0, |p| p.available),
                    Settlement::TPlus0 => pos.map_or(0, |p| p.qty),
                };
                let free = held.saturating_sub(self.pending_sell_qty(&req.asset));
                if req.quantity > free {
                    return Err(ExchangeError::InsufficientAvailableShares {
                        asset: req.asset,
                        want: req.quantity,
                        have: free,
                    });
                }
            }
            Side::Cover => {
                let held = self.account.short_positions.get(&req.asset).map_or(0, |p| p.qty);
                let free = held.saturating_sub(self.pending_cover_qty(&req.asset));
                if req.quantity > free {
                    return Err(ExchangeError::InsufficientAvailableShares {
                        asset: req.asset,
                        want: req.quantity,
                        have: free,
                    });
                }
                let px = self
                    .reference_price(&req)
                    .ok_or_else(|| ExchangeError::MissingPrice(req.asset.clone()))?;
                let need = req.quantity as Real * px * (1.0 + self.profile.commission_rate);
                let spendable = self.spendable_cash();
                if need > spendable + CASH_EPS {
                    return Err(ExchangeError::InsufficientCash { need, spendable });
                }
            }
            Side::Buy => {
                let px = self
                    .reference_price(&req)
                    .ok_or_else(|| ExchangeError::MissingPrice(req.asset.clone()))?;
                let need = req.quantity as Real * px * (1.0 + self.profile.commission_rate);
                let spendable = self.spendable_cash();
                if need > spendable + CASH_EPS {
                    return Err(ExchangeError::InsufficientCash { need, spendable });
                }
            }
            Side::Short => {
                let px = self
                    .reference_price(&req)
                    .ok_or_else(|| ExchangeError::MissingPrice(req.asset.clone()))?;
                let need = req.quantity as Real * px * self.profile.initial_margin_rate;
                let spendable = self.spendable_cash();
                if need > spendable + CASH_EPS {
                    return Err(ExchangeError::InsufficientMargin { need, spendable });
                }
            }
        }
        let id = self.next_order_id;
        self.next_order_id += 1;
        self.orders.insert(
            id,
            Order {
                order_id: id,
                asset: req.asset,
                side: req.side,
                quantity: req.quantity,
                limit_price: req.limit_price,
                submitted_day: day,
                status: OrderStatus::Pending,
                age_days: 0,
            },
        );
        Ok(id)
    }

    /// Record reference closes without settling, e.g. the day before an
    /// episode starts so first-day submissions have prices to check against.
    pub fn observe_closes(&mut self, closes: &BTreeMap<AssetId, Real>) {
        for (asset, px) in closes {
            self.last_close.insert(asset.clone(), *px);
        }
    }

    /// Cancel a pending order.
    pub fn cancel_order(&mut self, id: u64) -> Result<(), ExchangeError> {
        let order = self.orders.get_mut(&id).ok_or(ExchangeError::UnknownOrder(id))?;
        if order.status != OrderStatus::Pending {
            return Err(ExchangeError::NotPending(id));
        }
        order.status = OrderStatus::Cancelled;
        Ok(())
    }

    fn recompute_reserved_margin(&mut self) {
        self.account.reserved_margin = self.profile.initial_margin_rate
            * self
                .account
                .short_positions
                .values()
                .map(|p| p.qty as Real * p.entry_price)
                .sum::<Real>();
    }

    fn limit_satisfied(order: &Order, close: Real) -> bool {
        match order.limit_price {
            None => true,
            Some(limit) => match order.side {
                Side::Buy | Side::Cover => close <= limit,
                Side::Sell | Side::Short => close >= limit,
            },
        }
    }

    /// Settle one trading day against the day's close prices.
    ///
    /// Fills are processed in order-id sequence; assets without a bar keep
    /// their orders pending. All anomalies become report events.
    pub fn settle_day(
        &mut self,
        day: NaiveDate,
        closes: &BTreeMap<AssetId, Real>,
    ) -> SettlementReport {
        for (asset, px) in closes {
            self.last_close.insert(asset.clone(), *px);
        }
        let cash_before = self.account.cash;
        let mut fills = Vec::new();
        let mut cancelled = Vec::new();

        let pending_ids: Vec<u64> = self
            .orders
            .values()
            .filter(|o| o.status == OrderStatus::Pending)
            .map(|o| o.order_id)
            .collect();
        for id in pending_ids {
            let order = self.orders.get(&id).unwrap().clone();
            let Some(&close) = closes.get(&order.asset) else { continue };
            if !Self::limit_satisfied(&order, close) {
                continue;
            }
            match self.execute_fill(&order, close, false) {
                Some(fill) => {
                    self.orders.get_mut(&id).unwrap().status = OrderStatus::Filled;
                    self.log(day, &order, OrderStatus::Filled, close, fill.commission);
                    fills.push(fill);
                }
                None => {
                    self.orders.get_mut(&id).unwrap().status = OrderStatus::Cancelled;
                    self.log(day, &order, OrderStatus::Cancelled, 0.0, 0.0);
                    cancelled.push(id);
                }
            }
        }

        // age every live record; expire stale pendings, purge old records
        let mut expired = Vec::new();
        let mut purged = Vec::new();
        for (id, order) in self.orders.iter_mut() {
            order.age_days += 1;
            if order.status == OrderStatus::Pending && order.age_days >= EXPIRE_AFTER_DAYS {
                order.status = OrderStatus::Expired;
                expired.push(*id);
            }
            if order.age_days >= PURGE_AFTER_DAYS {
                purged.push(*id);
            }
        }
        for id in &expired {
            let order = self.orders.get(id).unwrap().clone();
            self.log(day, &order, OrderStatus::Expired, 0.0, 0.0);
        }
        for id in &purged {
            self.orders.remove(id);
        }

        let post_fill_available: BTreeMap<AssetId, u64> = self
            .account
            .long_positions
            .iter()
            .map(|(a, p)| (a.clone(), p.available))
            .collect();

        // maintenance check, then roll T+1 availability forward
        let margin_calls = self.maintenance_check(day);
        for pos in self.account.long_positions.values_mut() {
            pos.available = pos.qty;
        }

        let nav = self.nav().unwrap_or(Real::NAN);
        SettlementReport {
            day,
            fills,
            expired,
            purged,
            cancelled_cash_shortfall: cancelled,
            margin_calls,
            cash_before,
            cash_after: self.account.cash,
            post_fill_available,
            nav,
        }
    }

    /// Apply one fill to the account; `None` means the fill would overdraw
    /// cash and the order must be cancelled. Forced fills (margin calls)
    /// skip the cash guard — an involuntary cover may leave the account in
    /// debt rather than keep an undercollateralized short open.
    fn execute_fill(&mut self, order: &Order, close: Real, forced: bool) -> Option<Fill> {
        let qty = order.quantity;
        let value = qty as Real * close;
        let commission = value * self.profile.commission_rate;
        let fill = Fill {
            order_id: order.order_id,
            asset: order.asset.clone(),
            side: order.side,
            quantity: qty,
            price: close,
            value,
            commission,
        };
        match order.side {
            Side::Buy => {
                if value + commission > self.account.cash + CASH_EPS {
                    return None;
                }
                self.account.cash -= value + commission;
                let pos = self.account.long_positions.entry(order.asset.clone()).or_default();
                pos.qty += qty;
                if self.profile.settlement == Settlement::TPlus0 {
                    pos.available += qty;
                }
            }
            Side::Sell => {
                let pos = self.account.long_positions.get_mut(&order.asset)?;
                let sellable = match self.profile.settlement {
                    Settlement::TPlus1 => pos.available,
                    Settlement::TPlus0 => pos.qty,
                };
                if qty > sellable {
                    return None;
                }
                pos.qty -= qty;
                pos.available = pos.available.saturating_sub(qty).min(pos.qty);
                if pos.qty == 0 {
                    self.account.long_positions.remove(&order.asset);
                }
                self.account.cash += value - commission;
            }
            Side::Short => {
                let pos = self
                    .account
                    .short_positions
                    .entry(order.asset.clone())
                    .or_insert(ShortPosition { qty: 0, entry_price: 0.0 });
                let entry_value = pos.qty as Real * pos.entry_price + value;
                pos.qty += qty;
                pos.entry_price = entry_value / pos.qty as Real;
                self.account.cash += value - commission;
                self.recompute_reserved_margin();
            }
            Side::Cover => {
                if !forced && value + commission > self.account.cash + CASH_EPS {
                    return None;
                }
                let pos = self.account.short_positions.get_mut(&order.asset)?;
                if qty > pos.qty {
                    return None;
                }
                pos.qty -= qty;
                if pos.qty == 0 {
                    self.account.short_positions.remove(&order.asset);
                }
                self.account.cash -= value + commission;
                self.recompute_reserved_margin();
            }
        }
        self.account.fee_paid_cumulative += commission;
        Some(fill)
    }

    /// Force-cover shorts largest-first while equity < maintenance_ratio ×
    /// reserved margin.
    fn maintenance_check(&mut self, day: NaiveDate) -> Vec<MarginCall> {
        let mut calls = Vec::new();
        if !self.profile.allow_short || self.account.short_positions.is_empty() {
            return calls;
        }
        loop {
            let Ok(equity) = self.nav() else { break };
            let requirement = self.profile.maintenance_ratio * self.account.reserved_margin;
            if equity >= requirement || self.account.short_positions.is_empty() {
                break;
            }
            // largest short by current market value, asset id as tiebreak
            let victim = self
                .account
                .short_positions
                .iter()
                .filter_map(|(a, p)| {
                    self.last_close.get(a).map(|px| (a.clone(), p.qty, p.qty as Real * px))
                })
                .max_by(|x, y| {
                    x.2.partial_cmp(&y.2)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| y.0.cmp(&x.0))
                });
            let Some((asset, qty, _)) = victim else { break };
            let close = self.last_close[&asset];
            let order = Order {
                order_id: self.next_order_id,
                asset: asset.clone(),
                side: Side::Cover,
                quantity: qty,
                limit_price: None,
                submitted_day: day,
                status: OrderStatus::Pending,
                age_days: 0,
            };
            self.next_order_id += 1;
            let Some(fill) = self.execute_fill(&order, close, true) else { break };
            self.log(day, &order, OrderStatus::Filled, close, fill.commission);
            calls.push(MarginCall {
                asset,
                equity_before: equity,
                requirement_before: requirement,
                fill,
            });
        }
        calls
    }

    fn log(&mut self, day: NaiveDate, order: &Order, status: OrderStatus, price: Real, commission: Real) {
        self.trade_log.push(TradeLogRow {
            day,
            order_id: order.order_id,
            asset: order.asset.clone(),
            side: order.side,
            qty: order.quantity,
            price,
            commission,
            status,
        });
    }

    /// NAV = cash + Σ long qty×price − Σ short qty×price at last closes.
    pub fn nav(&self) -> Result<Real, ExchangeError> {
        nav_at(&self.account, &self.last_close)
    }

    /// NAV marked at the given closes, falling back to the last known close
    /// for held assets without a bar today.
    pub fn marked_nav(&self, closes: &BTreeMap<AssetId, Real>) -> Result<Real, ExchangeError> {
        let mut merged = self.last_close.clone();
        for (a, p) in closes {
            merged.insert(a.clone(), *p);
        }
        nav_at(&self.account, &merged)
    }

    /// (long MV − short MV) / NAV.
    pub fn net_position_rate(&self) -> Result<Real, ExchangeError> {
        net_position_rate_at(&self.account, &self.last_close)
    }

    /// Serializable end-of-day account view.
    pub fn snapshot(&self, day: NaiveDate) -> AccountSnapshot {
        AccountSnapshot {
            day,
            cash: self.account.cash,
            long_positions: self
                .account
                .long_positions
                .iter()
                .map(|(a, p)| (a.clone(), p.qty))
                .collect(),
            short_positions: self
                .account
                .short_positions
                .iter()
                .map(|(a, p)| (a.clone(), p.qty))
                .collect(),
            reserved_margin: self.account.reserved_margin,
            nav: self.nav().ok(),
            net_position_rate: self.net_position_rate().ok(),
        }
    }
}

/// NAV of an account against a price map.
pub fn nav_at(account: &Account, prices: &BTreeMap<AssetId, Real>) -> Result<Real, ExchangeError> {
    let mut nav = account.cash;
    for (asset, pos) in &account.long_positions {
        let px = prices.get(asset).ok_or_else(|| ExchangeError::MissingPrice(asset.clone()))?;
        nav += pos.qty as Real * px;
    }
    for (asset, pos) in &account.short_positions {
        let px = prices.get(asset).ok_or_else(|| ExchangeError::MissingPrice(asset.clone()))?;
        nav -= pos.qty as Real * px;
    }
    Ok(nav)
}

/// (long MV − short MV) / NAV against a price map.
pub fn net_position_rate_at(
    account: &Account,
    prices: &BTreeMap<AssetId, Real>,
) -> Result<Real, ExchangeError> {
    let nav = nav_at(account, prices)?;
    if nav <= 0.0 {
        return Err(ExchangeError::NonPositiveNav(nav));
    }
    let mut long_mv = 0.0;
    let mut short_mv = 0.0;
    for (asset, pos) in &account.long_positions {
        long_mv += pos.qty as Real * prices[asset];
    }
    for (asset, pos) in &account.short_positions {
        short_mv += pos.qty as Real * prices[asset];
    }
    Ok((long_mv - short_mv) / nav)
}

/// Daily account snapshot JSON consumed by the analysis module.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountSnapshot {
    pub day: NaiveDate,
    pub cash: Real,
    pub long_positions: BTreeMap<AssetId, u64>,
    pub short_positions: BTreeMap<AssetId, u64>,
    pub reserved_margin: Real,
    pub nav: Option<Real>,
    pub net_position_rate: Option<Real>,
}

/// Render the trade log as the append-only CSV interface.
pub fn trade_log_csv(rows: &[TradeLogRow]) -> String {
    let mut out = String::from("day,order_id,asset,side,qty,price,commission,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.day,
            r.order_id,
            r.asset,
            r.side.name(),
            r.qty,
            r.price,
            r.commission,
            r.status.name()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(n: u32) -> NaiveDate {
        crate::synth::synthetic_calendar(MarketId::CsiLike, 2024, 40).days()[n as usize]
    }

    fn closes(pairs: &[(&str, Real)]) -> BTreeMap<AssetId, Real> {
        pairs.iter().map(|(a, p)| (a.to_string(), *p)).collect()
    }

    fn seeded_csi() -> Exchange {
        let mut ex = Exchange::new(MarketProfile::csi(), 10_000_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0), ("bbb", 50.0)]));
        ex
    }

    #[test]
    fn csi_blocks_same_day_sell() {
        let mut ex = seeded_csi();
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 100)).unwrap();
        // the buy has not settled; nothing is available
        let err = ex.submit_order(day(1), OrderRequest::market("aaa", Side::Sell, 100)).unwrap_err();
        assert!(matches!(err, ExchangeError::InsufficientAvailableShares { .. }));

        let report = ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        assert_eq!(report.fills.len(), 1);
        // available 0 on the buy day, full qty the next day
        assert_eq!(report.post_fill_available["aaa"], 0);
        assert_eq!(ex.account().long_positions["aaa"].available, 100);
        // now the sale goes through
        ex.submit_order(day(2), OrderRequest::market("aaa", Side::Sell, 100)).unwrap();
        let report = ex.settle_day(day(2), &closes(&[("aaa", 101.0)]));
        assert_eq!(report.fills.len(), 1);
        assert!(ex.account().long_positions.is_empty());
    }

    #[test]
    fn csi_lot_violation_and_no_short() {
        let mut ex = seeded_csi();
        assert!(matches!(
            ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 150)),
            Err(ExchangeError::LotViolation { qty: 150, lot: 100 })
        ));
        assert!(matches!(
            ex.submit_order(day(1), OrderRequest::market("aaa", Side::Short, 100)),
            Err(ExchangeError::ShortNotAllowed)
        ));
    }

    #[test]
    fn commission_examples() {
        // CSI: fill value 1,000,000 → commission 200
        let mut ex = Exchange::new(MarketProfile::csi(), 10_000_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 10_000)).unwrap();
        let report = ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        assert_eq!(report.fills[0].value, 1_000_000.0);
        assert_eq!(report.fills[0].commission, 200.0);

        // US: 1 bp
        let mut ex = Exchange::new(MarketProfile::us(), 10_000_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 10_000)).unwrap();
        let report = ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        assert_eq!(report.fills[0].commission, 100.0);
    }

    #[test]
    fn short_reserves_initial_margin() {
        let mut ex = Exchange::new(MarketProfile::us(), 10_000_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Short, 10_000)).unwrap();
        ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        // position value 1,000,000 → 200,000 reserved
        assert_eq!(ex.account().reserved_margin, 200_000.0);
        assert_eq!(ex.account().short_positions["aaa"].qty, 10_000);
    }

    #[test]
    fn limit_buy_expires_on_day_seven() {
        let mut ex = seeded_csi();
        let id = ex
            .submit_order(day(1), OrderRequest::limit("aaa", Side::Buy, 100, 95.0))
            .unwrap();
        for d in 1..=7 {
            let report = ex.settle_day(day(d), &closes(&[("aaa", 100.0)]));
            let order = ex.order(id).unwrap();
            if d < 7 {
                assert_eq!(order.status, OrderStatus::Pending, "day {d}");
                assert!(order.age_days <= 6);
                assert!(report.expired.is_empty());
            } else {
                assert_eq!(order.status, OrderStatus::Expired);
                assert_eq!(report.expired, vec![id]);
            }
        }
        // purged at age 14
        for d in 8..=14 {
            let report = ex.settle_day(day(d), &closes(&[("aaa", 100.0)]));
            if d < 14 {
                assert!(ex.order(id).is_some());
                assert!(report.purged.is_empty());
            } else {
                assert!(ex.order(id).is_none());
                assert_eq!(report.purged, vec![id]);
            }
        }
    }

    #[test]
    fn limit_orders_fill_on_favorable_close() {
        let mut ex = seeded_csi();
        ex.submit_order(day(1), OrderRequest::limit("aaa", Side::Buy, 100, 95.0)).unwrap();
        let report = ex.settle_day(day(1), &closes(&[("aaa", 94.0)]));
        assert_eq!(report.fills.len(), 1);
        assert_eq!(report.fills[0].price, 94.0);
    }

    #[test]
    fn missing_bar_keeps_order_pending() {
        let mut ex = seeded_csi();
        let id = ex.submit_order(day(1), OrderRequest::market("bbb", Side::Buy, 100)).unwrap();
        let report = ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        assert!(report.fills.is_empty());
        assert_eq!(ex.order(id).unwrap().status, OrderStatus::Pending);
    }

    #[test]
    fn buy_rejected_when_cash_committed() {
        let mut ex = Exchange::new(MarketProfile::csi(), 100_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 900)).unwrap();
        // 90,000 committed (+fees); another 200-lot would need 20,004
        let err =
            ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 200)).unwrap_err();
        assert!(matches!(err, ExchangeError::InsufficientCash { .. }));
    }

    #[test]
    fn cash_ledger_balances() {
        let mut ex = Exchange::new(MarketProfile::us(), 1_000_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 50.0), ("bbb", 20.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 1_000)).unwrap();
        ex.submit_order(day(1), OrderRequest::market("bbb", Side::Short, 500)).unwrap();
        let report = ex.settle_day(day(1), &closes(&[("aaa", 52.0), ("bbb", 19.0)]));
        let mut expected = report.cash_before;
        for f in &report.fills {
            match f.side {
                Side::Buy | Side::Cover => expected -= f.value + f.commission,
                Side::Sell | Side::Short => expected += f.value - f.commission,
            }
        }
        assert!((expected - report.cash_after).abs() < 1e-9);
    }

    #[test]
    fn maintenance_margin_forces_cover() {
        let mut ex = Exchange::new(MarketProfile::us(), 100_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Short, 3_000)).unwrap();
        ex.settle_day(day(1), &closes(&[("aaa", 100.0)]));
        // equity = 100k + 300k − 300k = 100k; requirement = 0.8×60k = 48k → fine
        assert!(ex.account().short_positions.contains_key("aaa"));
        // price doubles: equity = 400k − 600k = −200k → margin call
        let report = ex.settle_day(day(2), &closes(&[("aaa", 200.0)]));
        assert_eq!(report.margin_calls.len(), 1);
        assert!(ex.account().short_positions.is_empty());
        assert_eq!(ex.account().reserved_margin, 0.0);
    }

    #[test]
    fn nav_and_net_position_rate() {
        let mut account = Account::new(5_000_000.0);
        account.long_positions.insert("aaa".into(), LongPosition { qty: 40_000, available: 40_000 });
        account.short_positions.insert("bbb".into(), ShortPosition { qty: 20_000, entry_price: 50.0 });
        let prices = closes(&[("aaa", 100.0), ("bbb", 50.0)]);
        // long 4M, short 1M → nav 8M
        let nav = nav_at(&account, &prices).unwrap();
        assert_eq!(nav, 8_000_000.0);
        // mark-to-market loop oracle
        let mut oracle = account.cash;
        for (a, p) in &account.long_positions {
            oracle += p.qty as Real * prices[a];
        }
        for (a, p) in &account.short_positions {
            oracle -= p.qty as Real * prices[a];
        }
        assert_eq!(nav, oracle);
        let npr = net_position_rate_at(&account, &prices).unwrap();
        assert_eq!(npr, 3.0 / 8.0);

        let empty = Account::new(10_000_000.0);
        assert_eq!(nav_at(&empty, &prices).unwrap(), 10_000_000.0);
        assert_eq!(net_position_rate_at(&empty, &prices).unwrap(), 0.0);
        assert!(matches!(
            nav_at(&account, &closes(&[("aaa", 100.0)])),
            Err(ExchangeError::MissingPrice(_))
        ));
    }

    #[test]
    fn sell_proceeds_spendable_same_day_on_csi() {
        // T+1 restricts shares, not cash
        let mut ex = Exchange::new(MarketProfile::csi(), 20_000.0);
        ex.settle_day(day(0), &closes(&[("aaa", 100.0), ("bbb", 100.0)]));
        ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 100)).unwrap();
        ex.settle_day(day(1), &closes(&[("aaa", 100.0), ("bbb", 100.0)]));
        // sell aaa and buy bbb the same day; sell fills first (lower id)
        ex.submit_order(day(2), OrderRequest::market("aaa", Side::Sell, 100)).unwrap();
        ex.submit_order(day(2), OrderRequest::market("bbb", Side::Buy, 100)).unwrap();
        let report = ex.settle_day(day(2), &closes(&[("aaa", 100.0), ("bbb", 100.0)]));
        assert_eq!(report.fills.len(), 2);
        assert!(ex.account().long_positions.contains_key("bbb"));
    }

    #[test]
    fn deterministic_settlement_reports() {
        let run = || {
            let mut ex = Exchange::new(MarketProfile::us(), 1_000_000.0);
            ex.settle_day(day(0), &closes(&[("aaa", 50.0), ("bbb", 20.0)]));
            ex.submit_order(day(1), OrderRequest::market("aaa", Side::Buy, 100)).unwrap();
            ex.submit_order(day(1), OrderRequest::limit("bbb", Side::Short, 200, 19.5)).unwrap();
            let r1 = ex.settle_day(day(1), &closes(&[("aaa", 51.0), ("bbb", 19.8)]));
            let r2 = ex.settle_day(day(2), &closes(&[("aaa", 49.0), ("bbb", 21.0)]));
            (serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap())
        };
        assert_eq!(run(), run());
    }
}

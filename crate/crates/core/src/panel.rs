//! Aligned daily market data: trading calendar, OHLCV + fundamentals panel,
//! and point-in-time universe membership.
//!
//! Panels are immutable after load. Missing data is carried as `NaN`, never
//! as zero; operations propagate missing and cross-sectional statistics drop
//! missing cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{AssetId, Real};

/// Marker for absent cells in panel matrices.
pub const MISSING: Real = Real::NAN;

/// True when a cell carries no observation.
#[inline]
pub fn is_missing(x: Real) -> bool {
    x.is_nan()
}

/// Market family a calendar belongs to. Fixes trading days per year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketId {
    CsiLike,
    UsLike,
}

impl MarketId {
    /// Trading days per calendar year: 243 (CSI-like) or 252 (US-like).
    pub fn days_per_year(self) -> u32 {
        match self {
            MarketId::CsiLike => 243,
            MarketId::UsLike => 252,
        }
    }
}

/// Ordered set of trading days for one market.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingCalendar {
    pub market_id: MarketId,
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    /// Build a calendar from strictly increasing dates.
    pub fn new(market_id: MarketId, days: Vec<NaiveDate>) -> Result<Self, PanelError> {
        for w in days.windows(2) {
            if w[0] >= w[1] {
                return Err(PanelError::CalendarNotIncreasing { at: w[1] });
            }
        }
        Ok(Self { market_id, days })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days_per_year(&self) -> u32 {
        self.market_id.days_per_year()
    }

    /// Index of an exact calendar date.
    pub fn index_of(&self, day: NaiveDate) -> Option<usize> {
        self.days.binary_search(&day).ok()
    }
}

/// Point-in-time universe membership: date → member asset ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Universe {
    pub membership: BTreeMap<NaiveDate, BTreeSet<AssetId>>,
}

/// Immutable day×asset matrix bundle of prices, volume, and fundamentals.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub calendar: TradingCalendar,
    pub assets: Vec<AssetId>,
    pub open: Array2<Real>,
    pub high: Array2<Real>,
    pub low: Array2<Real>,
    pub close: Array2<Real>,
    pub volume: Array2<Real>,
    /// Optional fundamentals keyed by lowercase field name (pe, ps, pb, dyr).
    pub fundamentals: BTreeMap<String, Array2<Real>>,
    /// Optional point-in-time membership; `None` means the full panel.
    pub universe: Option<Universe>,
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("malformed csv {file} row {row}: {reason}")]
    MalformedCsv { file: String, row: usize, reason: String },
    #[error("ohlc violation in {file} row {row}: {detail}")]
    OhlcViolation { file: String, row: usize, detail: String },
    #[error("no assets found in {0}")]
    EmptyUniverse(String),
    #[error("calendar dates not strictly increasing at {at}")]
    CalendarNotIncreasing { at: NaiveDate },
    #[error("horizon {h} too large for panel of {days} days")]
    HorizonTooLarge { h: usize, days: usize },
    #[error("date out of range: {0}")]
    DateOutOfRange(String),
    #[error("universe member {asset} on {day} not present in panel")]
    UnknownUniverseAsset { asset: AssetId, day: NaiveDate },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One parsed OHLCV row, prior to alignment.
#[derive(Debug, Deserialize)]
struct OhlcvRow {
    date: NaiveDate,
    open: Real,
    high: Real,
    low: Real,
    close: Real,
    volume: Real,
}

#[derive(Debug, Deserialize)]
struct FundamentalsRow {
    date: NaiveDate,
    asset: AssetId,
    pe: Option<Real>,
    ps: Option<Real>,
    pb: Option<Real>,
    dyr: Option<Real>,
}

#[derive(Debug, Deserialize)]
struct UniverseRow {
    date: NaiveDate,
    asset: AssetId,
}

/// Field names served by panels, matching the DSL leaf vocabulary.
pub const PRICE_FIELDS: [&str; 5] = ["open", "high", "low", "close", "volume"];
pub const FUNDAMENTAL_FIELDS: [&str; 4] = ["pe", "ps", "pb", "dyr"];

impl PricePanel {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, asset: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == asset)
    }

    /// Matrix for a DSL field name, if the panel carries it.
    pub fn field(&self, name: &str) -> Option<&Array2<Real>> {
        match name {
            "open" => Some(&self.open),
            "high" => Some(&self.high),
            "low" => Some(&self.low),
            "close" => Some(&self.close),
            "volume" => Some(&self.volume),
            other => self.fundamentals.get(other),
        }
    }

    /// Member asset column indices on one day (all assets when no universe).
    pub fn members_on(&self, day_idx: usize) -> Vec<usize> {
        match &self.universe {
            None => (0..self.n_assets()).collect(),
            Some(u) => {
                let day = self.calendar.days()[day_idx];
                // membership as of the most recent date ≤ day
                let set = u.membership.range(..=day).next_back().map(|(_, s)| s);
                match set {
                    None => (0..self.n_assets()).collect(),
                    Some(s) => self
                        .assets
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| s.contains(*a))
                        .map(|(i, _)| i)
                        .collect(),
                }
            }
        }
    }

    /// Equal-weight index proxy: cross-sectional mean of a price field per
    /// day over non-missing assets. Missing when no asset has data.
    pub fn equal_weight_index(&self, field: &str) -> Vec<Real> {
        let m = self.field(field).expect("price field");
        (0..self.n_days())
            .map(|t| {
                let row: Vec<Real> =
                    m.row(t).iter().copied().filter(|x| !is_missing(*x)).collect();
                crate::stats::mean(&row).unwrap_or(MISSING)
            })
            .collect()
    }

    /// Row-subset copy over `[start, end]` (inclusive); invariants preserved.
    pub fn slice(&self, start: NaiveDate, end: NaiveDate) -> Result<PricePanel, PanelError> {
        if start > end {
            return Err(PanelError::DateOutOfRange(format!("start {start} > end {end}")));
        }
        let i0 = self
            .calendar
            .index_of(start)
            .ok_or_else(|| PanelError::DateOutOfRange(start.to_string()))?;
        let i1 = self
            .calendar
            .index_of(end)
            .ok_or_else(|| PanelError::DateOutOfRange(end.to_string()))?;
        let take = |m: &Array2<Real>| m.slice(ndarray::s![i0..=i1, ..]).to_owned();
        Ok(PricePanel {
            calendar: TradingCalendar::new(
                self.calendar.market_id,
                self.calendar.days()[i0..=i1].to_vec(),
            )?,
            assets: self.assets.clone(),
            open: take(&self.open),
            high: take(&self.high),
            low: take(&self.low),
            close: take(&self.close),
            volume: take(&self.volume),
            fundamentals: self
                .fundamentals
                .iter()
                .map(|(k, v)| (k.clone(), take(v)))
                .collect(),
            universe: self.universe.clone(),
        })
    }

    /// Index range `[i0, i1]` for an inclusive date window.
    pub fn date_range_indices(
        &self,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<(usize, usize), PanelError> {
        if start > end {
            return Err(PanelError::DateOutOfRange(format!("start {start} > end {end}")));
        }
        let i0 = self
            .calendar
            .index_of(start)
            .ok_or_else(|| PanelError::DateOutOfRange(start.to_string()))?;
        let i1 = self
            .calendar
            .index_of(end)
            .ok_or_else(|| PanelError::DateOutOfRange(end.to_string()))?;
        Ok((i0, i1))
    }
}

/// Forward simple return over `horizon` days: cell (t,i) = close(t+h)/close(t) − 1.
///
/// The last `horizon` rows are missing, as is any cell with a missing endpoint.
pub fn forward_return(panel: &PricePanel, horizon: usize) -> Result<Array2<Real>, PanelError> {
    if horizon == 0 || horizon >= panel.n_days() {
        return Err(PanelError::HorizonTooLarge { h: horizon, days: panel.n_days() });
    }
    let (t, n) = (panel.n_days(), panel.n_assets());
    let mut out = Array2::from_elem((t, n), MISSING);
    for ti in 0..t - horizon {
        for a in 0..n {
            let p0 = panel.close[[ti, a]];
            let p1 = panel.close[[ti + horizon, a]];
            if !is_missing(p0) && !is_missing(p1) && p0 > 0.0 {
                out[[ti, a]] = p1 / p0 - 1.0;
            }
        }
    }
    Ok(out)
}

/// Load a panel from a directory of per-asset OHLCV CSVs.
///
/// Every `*.csv` file except `fundamentals.csv` and `universe.csv` is one
/// asset named by its file stem, with header `date,open,high,low,close,volume`.
/// The calendar is the union of observed dates; per-asset gaps stay missing.
pub fn load_panel(data_dir: &Path, market_id: MarketId) -> Result<PricePanel, PanelError> {
    let mut asset_files: Vec<(AssetId, std::path::PathBuf)> = Vec::new();
    let rd = fs::read_dir(data_dir).map_err(|e| PanelError::Io {
        path: data_dir.display().to_string(),
        source: e,
    })?;
    for entry in rd {
        let entry = entry.map_err(|e| PanelError::Io {
            path: data_dir.display().to_string(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if stem == "fundamentals" || stem == "universe" {
            continue;
        }
        asset_files.push((stem, path));
    }
    asset_files.sort();
    if asset_files.is_empty() {
        return Err(PanelError::EmptyUniverse(data_dir.display().to_string()));
    }

    let mut per_asset: Vec<(AssetId, BTreeMap<NaiveDate, OhlcvRow>)> = Vec::new();
    let mut all_dates: BTreeSet<NaiveDate> = BTreeSet::new();
    for (asset, path) in &asset_files {
        let rows = read_ohlcv(path)?;
        for r in rows.values() {
            all_dates.insert(r.date);
        }
        per_asset.push((asset.clone(), rows));
    }

    let days: Vec<NaiveDate> = all_dates.into_iter().collect();
    let calendar = TradingCalendar::new(market_id, days)?;
    let (t, n) = (calendar.len(), per_asset.len());
    let mut open = Array2::from_elem((t, n), MISSING);
    let mut high = Array2::from_elem((t, n), MISSING);
    let mut low = Array2::from_elem((t, n), MISSING);
    let mut close = Array2::from_elem((t, n), MISSING);
    let mut volume = Array2::from_elem((t, n), MISSING);
    for (a, (_, rows)) in per_asset.iter().enumerate() {
        for (date, r) in rows {
            let ti = calendar.index_of(*date).expect("date from union");
            open[[ti, a]] = r.open;
            high[[ti, a]] = r.high;
            low[[ti, a]] = r.low;
            close[[ti, a]] = r.close;
            volume[[ti, a]] = r.volume;
        }
    }
    let assets: Vec<AssetId> = per_asset.into_iter().map(|(a, _)| a).collect();

    let mut fundamentals = BTreeMap::new();
    let fpath = data_dir.join("fundamentals.csv");
    if fpath.exists() {
        let rows = read_fundamentals(&fpath)?;
        for field in FUNDAMENTAL_FIELDS {
            fundamentals.insert(field.to_string(), Array2::from_elem((t, n), MISSING));
        }
        for r in rows {
            let (Some(ti), Some(a)) = (
                calendar.index_of(r.date),
                assets.iter().position(|x| *x == r.asset),
            ) else {
                continue; // fundamentals outside the price calendar/universe are dropped
            };
            let mut put = |field: &str, v: Option<Real>| {
                if let Some(v) = v {
                    fundamentals.get_mut(field).unwrap()[[ti, a]] = v;
                }
            };
            put("pe", r.pe);
            put("ps", r.ps);
            put("pb", r.pb);
            put("dyr", r.dyr);
        }
    }

    let upath = data_dir.join("universe.csv");
    let universe = if upath.exists() {
        let mut membership: BTreeMap<NaiveDate, BTreeSet<AssetId>> = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(&upath).map_err(|e| PanelError::MalformedCsv {
            file: upath.display().to_string(),
            row: 0,
            reason: e.to_string(),
        })?;
        for (i, rec) in rdr.deserialize::<UniverseRow>().enumerate() {
            let r = rec.map_err(|e| PanelError::MalformedCsv {
                file: upath.display().to_string(),
                row: i + 2,
                reason: e.to_string(),
            })?;
            if !assets.contains(&r.asset) {
                return Err(PanelError::UnknownUniverseAsset { asset: r.asset, day: r.date });
            }
            membership.entry(r.date).or_default().insert(r.asset);
        }
        Some(Universe { membership })
    } else {
        None
    };

    Ok(PricePanel { calendar, assets, open, high, low, close, volume, fundamentals, universe })
}

fn read_ohlcv(path: &Path) -> Result<BTreeMap<NaiveDate, OhlcvRow>, PanelError> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PanelError::MalformedCsv {
        file: file.clone(),
        row: 0,
        reason: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<OhlcvRow>().enumerate() {
        let row = i + 2; // header is row 1
        let r = rec.map_err(|e| PanelError::MalformedCsv {
            file: file.clone(),
            row,
            reason: e.to_string(),
        })?;
        validate_ohlcv(&r, &file, row)?;
        out.insert(r.date, r);
    }
    Ok(out)
}

fn validate_ohlcv(r: &OhlcvRow, file: &str, row: usize) -> Result<(), PanelError> {
    let bad = |detail: String| PanelError::OhlcViolation { file: file.to_string(), row, detail };
    if !(r.low > 0.0) {
        return Err(bad(format!("low must be positive, got {}", r.low)));
    }
    if r.low > r.high {
        return Err(bad(format!("low {} > high {}", r.low, r.high)));
    }
    if r.open < r.low || r.open > r.high {
        return Err(bad(format!("open {} outside [{}, {}]", r.open, r.low, r.high)));
    }
    if r.close < r.low || r.close > r.high {
        return Err(bad(format!("close {} outside [{}, {}]", r.close, r.low, r.high)));
    }
    if !(r.volume >= 0.0) {
        return Err(bad(format!("volume must be non-negative, got {}", r.volume)));
    }
    Ok(())
}

fn read_fundamentals(path: &Path) -> Result<Vec<FundamentalsRow>, PanelError> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PanelError::MalformedCsv {
        file: file.clone(),
        row: 0,
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<FundamentalsRow>().enumerate() {
        out.push(rec.map_err(|e| PanelError::MalformedCsv {
            file: file.clone(),
            row: i + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Serialize a panel to a directory: `meta.json`, one CSV matrix per field.
///
/// Deterministic: the same panel always produces byte-identical files.
pub fn save_panel(panel: &PricePanel, dir: &Path) -> Result<(), PanelError> {
    let io_err = |e: std::io::Error| PanelError::Io { path: dir.display().to_string(), source: e };
    fs::create_dir_all(dir).map_err(io_err)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        market_id: MarketId,
        days: &'a [NaiveDate],
        assets: &'a [AssetId],
        fundamentals: Vec<&'a String>,
        universe: &'a Option<Universe>,
    }
    let meta = Meta {
        market_id: panel.calendar.market_id,
        days: panel.calendar.days(),
        assets: &panel.assets,
        fundamentals: panel.fundamentals.keys().collect(),
        universe: &panel.universe,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap())
        .map_err(io_err)?;
    let write_matrix = |name: &str, m: &Array2<Real>| -> Result<(), PanelError> {
        let mut s = String::new();
        for row in m.rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|x| if is_missing(*x) { String::new() } else { format!("{x}") })
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        fs::write(dir.join(format!("{name}.csv")), s)
            .map_err(|e| PanelError::Io { path: dir.display().to_string(), source: e })
    };
    write_matrix("open", &panel.open)?;
    write_matrix("high", &panel.high)?;
    write_matrix("low", &panel.low)?;
    write_matrix("close", &panel.close)?;
    write_matrix("volume", &panel.volume)?;
    for (k, v) in &panel.fundamentals {
        write_matrix(k, v)?;
    }
    Ok(())
}

/// Load a panel previously written by [`save_panel`].
pub fn load_cached_panel(dir: &Path) -> Result<PricePanel, PanelError> {
    let io_err = |e: std::io::Error| PanelError::Io { path: dir.display().to_string(), source: e };
    #[derive(Deserialize)]
    struct Meta {
        market_id: MarketId,
        days: Vec<NaiveDate>,
        assets: Vec<AssetId>,
        fundamentals: Vec<String>,
        universe: Option<Universe>,
    }
    let meta: Meta = serde_json::from_str(
        &fs::read_to_string(dir.join("meta.json")).map_err(io_err)?,
    )
    .map_err(|e| PanelError::MalformedCsv {
        file: dir.join("meta.json").display().to_string(),
        row: 0,
        reason: e.to_string(),
    })?;
    let (t, n) = (meta.days.len(), meta.assets.len());
    let read_matrix = |name: &str| -> Result<Array2<Real>, PanelError> {
        let path = dir.join(format!("{name}.csv"));
        let text = fs::read_to_string(&path)
            .map_err(|e| PanelError::Io { path: path.display().to_string(), source: e })?;
        let mut m = Array2::from_elem((t, n), MISSING);
        for (ti, line) in text.lines().enumerate() {
            for (a, cell) in line.split(',').enumerate() {
                if !cell.is_empty() {
                    m[[ti, a]] = cell.parse().map_err(|e| PanelError::MalformedCsv {
                        file: path.display().to_string(),
                        row: ti + 1,
                        reason: format!("{e}"),
                    })?;
                }
            }
        }
        Ok(m)
    };
    let calendar = TradingCalendar::new(meta.market_id, meta.days)?;
    let mut fundamentals = BTreeMap::new();
    for f in &meta.fundamentals {
        fundamentals.insert(f.clone(), read_matrix(f)?);
    }
    Ok(PricePanel {
        calendar,
        assets: meta.assets,
        open: read_matrix("open")?,
        high: read_matrix("high")?,
        low: read_matrix("low")?,
        close: read_matrix("close")?,
        volume: read_matrix("volume")?,
        fundamentals,
        universe: meta.universe,
    })
}

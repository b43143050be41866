//! Seeded synthetic market fixtures: regime-switching drift with
//! factor-driven cross-sectional returns.
//!
//! The generator builds panels where next-day returns load on a momentum
//! signal (5-day close delta rank) during the first regime and on a volume
//! signal (5-day mean volume rank) after the switch day. Everything is
//! driven by one `ChaCha8` stream, so a seed fully determines the fixture.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::panel::{MarketId, PricePanel, TradingCalendar, MISSING};
use crate::stats::average_ranks;
use crate::{AssetId, Real};

/// Parameters for one synthetic fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_assets: usize,
    pub n_days: usize,
    pub market: MarketId,
    pub start_year: i32,
    /// Day index at which the return driver switches from the momentum
    /// signal to the volume signal. `None` keeps the momentum driver.
    pub switch_day: Option<usize>,
    /// Loading of the momentum signal on next-day returns (first regime).
    pub momentum_strength: Real,
    /// Loading of the volume signal on next-day returns (second regime).
    pub volume_strength: Real,
    /// Daily idiosyncratic noise standard deviation.
    pub noise_std: Real,
    /// Market drift per day in each regime.
    pub drift_first: Real,
    pub drift_second: Real,
    /// Scales the high/low range around each close (regime 2 doubles it).
    pub range_scale: Real,
    pub with_fundamentals: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_assets: 20,
            n_days: 500,
            market: MarketId::CsiLike,
            start_year: 2024,
            switch_day: Some(250),
            momentum_strength: 0.02,
            volume_strength: 0.02,
            noise_std: 0.015,
            drift_first: 0.0004,
            drift_second: -0.0002,
            range_scale: 0.01,
            with_fundamentals: false,
        }
    }
}

/// Trading calendar of weekdays, capped at the market's days-per-year so a
/// calendar year holds exactly D trading days (243 CSI-like, 252 US-like).
pub fn synthetic_calendar(market: MarketId, start_year: i32, n_days: usize) -> TradingCalendar {
    let mut days = Vec::with_capacity(n_days);
    let mut year = start_year;
    let cap = market.days_per_year() as usize;
    while days.len() < n_days {
        let mut d = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
        let mut in_year = 0usize;
        while in_year < cap && days.len() < n_days {
            if d.weekday() != Weekday::Sat && d.weekday() != Weekday::Sun {
                days.push(d);
                in_year += 1;
            }
            d = d.succ_opt().unwrap();
        }
        year += 1;
    }
    TradingCalendar::new(market, days).unwrap()
}

fn randn(rng: &mut ChaCha8Rng) -> Real {
    // Box-Muller on two open-unit uniforms
    let u1: Real = rng.gen_range(Real::EPSILON..1.0);
    let u2: Real = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Centered cross-sectional rank in [−0.5, 0.5].
fn centered_rank(values: &[Real]) -> Vec<Real> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let ranks = average_ranks(values);
    ranks.iter().map(|r| (r - 1.0) / (n as Real - 1.0) - 0.5).collect()
}

/// Generate a panel per the spec. See the module docs for the return model.
pub fn generate(spec: &SynthSpec) -> PricePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, n) = (spec.n_days, spec.n_assets);
    let calendar = synthetic_calendar(spec.market, spec.start_year, t);

    let mut close = Array2::from_elem((t, n), MISSING);
    let mut open = Array2::from_elem((t, n), MISSING);
    let mut high = Array2::from_elem((t, n), MISSING);
    let mut low = Array2::from_elem((t, n), MISSING);
    let mut volume = Array2::from_elem((t, n), MISSING);

    // initial levels and exogenous AR(1) log-volume
    let mut price: Vec<Real> = (0..n).map(|_| 20.0 + 80.0 * rng.gen::<Real>()).collect();
    let mut log_vol: Vec<Real> = (0..n).map(|_| 13.0 + rng.gen::<Real>()).collect();

    for ti in 0..t {
        let switch = spec.switch_day.map_or(false, |s| ti >= s);
        for a in 0..n {
            log_vol[a] = 13.5 + 0.9 * (log_vol[a] - 13.5) + 0.3 * randn(&mut rng);
            volume[[ti, a]] = (log_vol[a].exp()).round().max(100.0);
        }
        if ti > 0 {
            // signals observed at ti−1 drive the ti return
            let prev = ti - 1;
            let momentum: Vec<Real> = (0..n)
                .map(|a| if prev >= 5 { close[[prev, a]] - close[[prev - 5, a]] } else { 0.0 })
                .collect();
            let vol_ma: Vec<Real> = (0..n)
                .map(|a| {
                    let lo = prev.saturating_sub(4);
                    let w: Vec<Real> = (lo..=prev).map(|s| volume[[s, a]]).collect();
                    w.iter().sum::<Real>() / w.len() as Real
                })
                .collect();
            let z = if switch { centered_rank(&vol_ma) } else { centered_rank(&momentum) };
            let strength = if switch { spec.volume_strength } else { spec.momentum_strength };
            let drift = if switch { spec.drift_second } else { spec.drift_first };
            for a in 0..n {
                let r = (drift + strength * z[a] + spec.noise_std * randn(&mut rng))
                    .clamp(-0.2, 0.2);
                price[a] *= 1.0 + r;
            }
        }
        let range = if switch { 2.0 * spec.range_scale } else { spec.range_scale };
        for a in 0..n {
            let c = price[a];
            let o = if ti == 0 { c } else { close[[ti - 1, a]] };
            let span = range * c * (0.5 + rng.gen::<Real>());
            close[[ti, a]] = c;
            open[[ti, a]] = o;
            high[[ti, a]] = o.max(c) + span;
            low[[ti, a]] = (o.min(c) - span).max(0.01);
        }
    }

    let mut fundamentals = BTreeMap::new();
    if spec.with_fundamentals {
        for field in ["pe", "ps", "pb", "dyr"] {
            let mut m = Array2::from_elem((t, n), MISSING);
            let mut level: Vec<Real> = (0..n).map(|_| 5.0 + 20.0 * rng.gen::<Real>()).collect();
            for ti in 0..t {
                for a in 0..n {
                    level[a] = (level[a] * (1.0 + 0.01 * randn(&mut rng))).max(0.1);
                    m[[ti, a]] = level[a];
                }
            }
            fundamentals.insert(field.to_string(), m);
        }
    }

    PricePanel {
        calendar,
        assets: (0..n).map(|i| format!("a{i:03}")).collect(),
        open,
        high,
        low,
        close,
        volume,
        fundamentals,
        universe: None,
    }
}

/// Write a panel as a directory of per-asset OHLCV CSVs (plus fundamentals),
/// the layout [`crate::panel::load_panel`] reads.
pub fn write_csv_dir(panel: &PricePanel, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (a, asset) in panel.assets.iter().enumerate() {
        let mut f = fs::File::create(dir.join(format!("{asset}.csv")))?;
        writeln!(f, "date,open,high,low,close,volume")?;
        for (ti, day) in panel.calendar.days().iter().enumerate() {
            let c = panel.close[[ti, a]];
            if crate::panel::is_missing(c) {
                continue;
            }
            writeln!(
                f,
                "{},{},{},{},{},{}",
                day,
                panel.open[[ti, a]],
                panel.high[[ti, a]],
                panel.low[[ti, a]],
                c,
                panel.volume[[ti, a]],
            )?;
        }
    }
    if !panel.fundamentals.is_empty() {
        let mut f = fs::File::create(dir.join("fundamentals.csv"))?;
        writeln!(f, "date,asset,pe,ps,pb,dyr")?;
        for (ti, day) in panel.calendar.days().iter().enumerate() {
            for (a, asset) in panel.assets.iter().enumerate() {
                let get = |name: &str| {
                    panel.fundamentals.get(name).map_or(String::new(), |m| {
                        let v = m[[ti, a]];
                        if crate::panel::is_missing(v) { String::new() } else { format!("{v}") }
                    })
                };
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    day,
                    asset,
                    get("pe"),
                    get("ps"),
                    get("pb"),
                    get("dyr")
                )?;
            }
        }
    }
    Ok(())
}

/// Test helper: a panel from explicit per-day close rows. Open/high/low
/// collapse onto the close and volume is constant.
pub fn panel_from_closes(market: MarketId, assets: &[&str], rows: &[Vec<Real>]) -> PricePanel {
    let t = rows.len();
    let n = assets.len();
    let calendar = synthetic_calendar(market, 2024, t);
    let mut close = Array2::from_elem((t, n), MISSING);
    for (ti, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), n);
        for (a, v) in row.iter().enumerate() {
            close[[ti, a]] = *v;
        }
    }
    let volume = close.mapv(|c| if crate::panel::is_missing(c) { MISSING } else { 1000.0 });
    PricePanel {
        calendar,
        assets: assets.iter().map(|s| AssetId::from(*s)).collect(),
        open: close.clone(),
        high: close.clone(),
        low: close.clone(),
        close,
        volume,
        fundamentals: BTreeMap::new(),
        universe: None,
    }
}

/// Test helper: like [`panel_from_closes`] with an explicit volume matrix.
pub fn panel_from_closes_volumes(
    market: MarketId,
    assets: &[&str],
    closes: &[Vec<Real>],
    volumes: &[Vec<Real>],
) -> PricePanel {
    let mut p = panel_from_closes(market, assets, closes);
    assert_eq!(volumes.len(), closes.len());
    for (ti, row) in volumes.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            p.volume[[ti, a]] = *v;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_caps_days_per_year() {
        let cal = synthetic_calendar(MarketId::CsiLike, 2024, 486);
        assert_eq!(cal.len(), 486);
        let in_2024 = cal.days().iter().filter(|d| d.year() == 2024).count();
        let in_2025 = cal.days().iter().filter(|d| d.year() == 2025).count();
        assert_eq!(in_2024, 243);
        assert_eq!(in_2025, 243);
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = SynthSpec { n_days: 60, n_assets: 5, ..Default::default() };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.close, b.close);
        assert_eq!(a.volume, b.volume);
    }

    #[test]
    fn generated_panel_satisfies_ohlc_invariants() {
        let spec = SynthSpec { n_days: 80, n_assets: 8, ..Default::default() };
        let p = generate(&spec);
        for ti in 0..p.n_days() {
            for a in 0..p.n_assets() {
                let (o, h, l, c) = (p.open[[ti, a]], p.high[[ti, a]], p.low[[ti, a]], p.close[[ti, a]]);
                assert!(l > 0.0);
                assert!(l <= o && o <= h, "open outside range at {ti},{a}");
                assert!(l <= c && c <= h, "close outside range at {ti},{a}");
                assert!(p.volume[[ti, a]] >= 0.0);
            }
        }
    }

    #[test]
    fn csv_roundtrip_matches_generated() {
        let spec = SynthSpec { n_days: 30, n_assets: 3, with_fundamentals: true, ..Default::default() };
        let p = generate(&spec);
        let dir = tempfile::tempdir().unwrap();
        write_csv_dir(&p, dir.path()).unwrap();
        let q = crate::panel::load_panel(dir.path(), spec.market).unwrap();
        assert_eq!(p.assets, q.assets);
        assert_eq!(p.calendar, q.calendar);
        for ti in 0..p.n_days() {
            for a in 0..p.n_assets() {
                assert!((p.close[[ti, a]] - q.close[[ti, a]]).abs() < 1e-9);
            }
        }
        assert!(q.fundamentals.contains_key("pe"));
    }
}

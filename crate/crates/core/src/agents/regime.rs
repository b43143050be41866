//! Market regime assessment: trend, volatility, and correlation proxies
//! mapped to [0,1] with five ordinal labels per dimension.

use chrono::NaiveDate;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::panel::is_missing;
use crate::stats::{logistic, pearson, quantile, sample_std};
use crate::Real;

use super::AgentError;

/// Five-level ordinal label; the numeric grid is {0, 0.25, 0.5, 0.75, 1}.
pub trait OrdinalLabel: Sized + Copy {
    const NAMES: [Self; 5];

    fn level(self) -> usize;

    /// Nearest grid point; exact midpoints round down.
    fn from_value(v: Real) -> Self {
        let scaled = (v.clamp(0.0, 1.0)) * 4.0;
        let level = (scaled - 0.5).ceil().clamp(0.0, 4.0) as usize;
        Self::NAMES[level]
    }

    fn numeric(self) -> Real {
        self.level() as Real * 0.25
    }
}

macro_rules! ordinal_label {
    ($name:ident { $($variant:ident),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl OrdinalLabel for $name {
            const NAMES: [Self; 5] = [$(Self::$variant),+];

            fn level(self) -> usize {
                Self::NAMES.iter().position(|x| *x == self).unwrap()
            }
        }
    };
}

ordinal_label!(TrendLabel { StrongDowntrend, Downtrend, RangeBound, Uptrend, StrongUptrend });
ordinal_label!(VolLabel { VeryLow, Low, Medium, High, VeryHigh });
ordinal_label!(CorrLabel { LowDispersion, MildDispersion, Mixed, CoMoving, IndexLed });

/// One regime reading, values in [0,1] with their nearest-of-five labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeAssessment {
    pub trend_label: TrendLabel,
    pub vol_label: VolLabel,
    pub corr_label: CorrLabel,
    pub trend_value: Real,
    pub vol_value: Real,
    pub corr_value: Real,
    pub as_of: NaiveDate,
}

impl RegimeAssessment {
    /// Neutral mid-grid assessment used before enough history accrues.
    pub fn neutral(as_of: NaiveDate) -> Self {
        Self {
            trend_label: TrendLabel::RangeBound,
            vol_label: VolLabel::Medium,
            corr_label: CorrLabel::Mixed,
            trend_value: 0.5,
            vol_value: 0.5,
            corr_value: 0.5,
            as_of,
        }
    }
}

/// Reference 5th/95th volatility percentiles for the min-max clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolQuantiles {
    pub q05: Real,
    pub q95: Real,
}

pub const TREND_WINDOW: usize = 60;
pub const VOL_WINDOW: usize = 20;
pub const CORR_WINDOW: usize = 20;
/// Long-term annualized volatility anchor for the trend logistic scale.
pub const SIGMA_ANN: Real = 0.2;

/// Trend logistic scale σ0 = 0.2·√(60/D).
pub fn trend_sigma0(days_per_year: u32) -> Real {
    SIGMA_ANN * (TREND_WINDOW as Real / days_per_year as Real).sqrt()
}

/// Annualized realized volatility of the trailing 20 index returns ending
/// at `day_idx`: √(D/19 · Σ(r − r̄)²).
pub fn realized_vol_20(index_closes: &[Real], day_idx: usize, days_per_year: u32) -> Option<Real> {
    if day_idx < VOL_WINDOW {
        return None;
    }
    let mut rets = Vec::with_capacity(VOL_WINDOW);
    for t in day_idx - VOL_WINDOW + 1..=day_idx {
        let (p0, p1) = (index_closes[t - 1], index_closes[t]);
        if is_missing(p0) || is_missing(p1) || p0 <= 0.0 {
            return None;
        }
        rets.push(p1 / p0 - 1.0);
    }
    sample_std(&rets).map(|sd| sd * (days_per_year as Real).sqrt())
}

/// Assess the regime as of `day_idx`.
///
/// * trend: logistic of the 60-day index log return over σ0
/// * vol: 20-day annualized realized vol clamped between the reference
///   5th/95th percentiles
/// * corr: mean absolute pairwise Pearson of trailing 20-day constituent
///   returns
pub fn assess_regime(
    index_closes: &[Real],
    constituent_returns: ArrayView2<Real>,
    day_idx: usize,
    days_per_year: u32,
    vol_quantiles: VolQuantiles,
    as_of: NaiveDate,
) -> Result<RegimeAssessment, AgentError> {
    if day_idx < TREND_WINDOW || index_closes.len() <= day_idx {
        return Err(AgentError::InsufficientHistory {
            need: TREND_WINDOW,
            have: day_idx.min(index_closes.len()),
        });
    }
    let (p0, p1) = (index_closes[day_idx - TREND_WINDOW], index_closes[day_idx]);
    if is_missing(p0) || is_missing(p1) || p0 <= 0.0 || p1 <= 0.0 {
        return Err(AgentError::InsufficientHistory { need: TREND_WINDOW, have: 0 });
    }
    let r60 = (p1 / p0).ln();
    let trend_value = logistic(r60 / trend_sigma0(days_per_year));

    let sigma20 = realized_vol_20(index_closes, day_idx, days_per_year)
        .ok_or(AgentError::InsufficientHistory { need: VOL_WINDOW, have: 0 })?;
    let span = vol_quantiles.q95 - vol_quantiles.q05;
    let vol_value = if span > Real::EPSILON {
        ((sigma20 - vol_quantiles.q05) / span).clamp(0.0, 1.0)
    } else {
        0.5
    };

    let corr_value = mean_abs_pairwise_corr(constituent_returns, day_idx)
        .ok_or(AgentError::InsufficientHistory { need: CORR_WINDOW, have: 0 })?;

    Ok(RegimeAssessment {
        trend_label: TrendLabel::from_value(trend_value),
        vol_label: VolLabel::from_value(vol_value),
        corr_label: CorrLabel::from_value(corr_value),
        trend_value,
        vol_value,
        corr_value,
        as_of,
    })
}

/// Mean |pairwise Pearson| of the trailing 20-day return window over
/// constituents with a complete window. `None` when fewer than 2 qualify.
fn mean_abs_pairwise_corr(returns: ArrayView2<Real>, day_idx: usize) -> Option<Real> {
    if day_idx + 1 < CORR_WINDOW || day_idx >= returns.nrows() {
        return None;
    }
    let lo = day_idx + 1 - CORR_WINDOW;
    let cols: Vec<Vec<Real>> = (0..returns.ncols())
        .filter_map(|a| {
            let col: Vec<Real> = (lo..=day_idx).map(|t| returns[[t, a]]).collect();
            if col.iter().any(|x| is_missing(*x)) {
                None
            } else {
                Some(col)
            }
        })
        .collect();
    let k = cols.len();
    if k < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            if let Some(rho) = pearson(&cols[i], &cols[j]) {
                sum += rho.abs();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return None;
    }
    Some(sum / pairs as Real)
}

/// Empirical 5th/95th percentiles of the σ20 series over `rows` of an index
/// close series; the regime clamp's reference sample.
pub fn vol_quantiles_from_sample(
    index_closes: &[Real],
    rows: std::ops::Range<usize>,
    days_per_year: u32,
) -> Option<VolQuantiles> {
    let sigmas: Vec<Real> = rows
        .filter_map(|t| realized_vol_20(index_closes, t, days_per_year))
        .collect();
    if sigmas.len() < 10 {
        return None;
    }
    Some(VolQuantiles {
        q05: quantile(&sigmas, 0.05)?,
        q95: quantile(&sigmas, 0.95)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn day() -> NaiveDate {
        "2024-06-03".parse().unwrap()
    }

    #[test]
    fn label_nearest_of_five_ties_round_down() {
        assert_eq!(TrendLabel::from_value(0.5), TrendLabel::RangeBound);
        assert_eq!(TrendLabel::from_value(0.0), TrendLabel::StrongDowntrend);
        assert_eq!(TrendLabel::from_value(1.0), TrendLabel::StrongUptrend);
        assert_eq!(TrendLabel::from_value(0.7311), TrendLabel::Uptrend);
        // exact midpoints round down
        assert_eq!(TrendLabel::from_value(0.125), TrendLabel::StrongDowntrend);
        assert_eq!(TrendLabel::from_value(0.375), TrendLabel::Downtrend);
        assert_eq!(TrendLabel::from_value(0.625), TrendLabel::RangeBound);
        assert_eq!(TrendLabel::from_value(0.875), TrendLabel::Uptrend);
        assert_eq!(TrendLabel::from_value(0.1251), TrendLabel::Downtrend);
    }

    #[test]
    fn sigma0_follows_profile() {
        let s = trend_sigma0(252);
        assert!((s - 0.2 * (60.0f64 / 252.0).sqrt()).abs() < 1e-12);
        let s = trend_sigma0(243);
        assert!((s - 0.2 * (60.0f64 / 243.0).sqrt()).abs() < 1e-12);
    }

    fn flat_then(mult: Real) -> Vec<Real> {
        // 61 flat closes, then one level implying a given 60d return at the end
        let mut v = vec![100.0; 100];
        let last = 100.0 * mult;
        // geometric path over the final 60 steps so returns exist everywhere
        for (i, x) in v.iter_mut().enumerate().skip(40) {
            *x = 100.0 * (last / 100.0f64).powf((i - 40) as Real / 59.0);
        }
        v
    }

    #[test]
    fn trend_logistic_fixed_points() {
        let quants = VolQuantiles { q05: 0.0, q95: 1.0 };
        let rets = Array2::from_elem((100, 3), 0.001);
        // flat index → r60 = 0 → 0.5 → range-bound
        let closes = vec![100.0; 100];
        let r = assess_regime(&closes, rets.view(), 99, 243, quants, day()).unwrap();
        assert_eq!(r.trend_value, 0.5);
        assert_eq!(r.trend_label, TrendLabel::RangeBound);

        // r60 = σ0 → 1/(1+e⁻¹) ≈ 0.7311 → uptrend
        let sigma0 = trend_sigma0(243);
        let closes = flat_then(sigma0.exp());
        let r = assess_regime(&closes, rets.view(), 99, 243, quants, day()).unwrap();
        assert!((r.trend_value - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(r.trend_label, TrendLabel::Uptrend);
    }

    #[test]
    fn vol_clamp_endpoints() {
        let mut closes = vec![100.0; 100];
        // alternate ±1% over the last 25 days for nonzero realized vol
        for i in 75..100 {
            closes[i] = closes[i - 1] * if i % 2 == 0 { 1.01 } else { 0.99 };
        }
        let sigma = realized_vol_20(&closes, 99, 252).unwrap();
        let rets = Array2::from_elem((100, 3), 0.001);
        // σ20 = q05 → 0
        let r = assess_regime(
            &closes,
            rets.view(),
            99,
            252,
            VolQuantiles { q05: sigma, q95: sigma + 1.0 },
            day(),
        )
        .unwrap();
        assert_eq!(r.vol_value, 0.0);
        assert_eq!(r.vol_label, VolLabel::VeryLow);
        // σ20 ≥ q95 → 1
        let r = assess_regime(
            &closes,
            rets.view(),
            99,
            252,
            VolQuantiles { q05: sigma / 4.0, q95: sigma / 2.0 },
            day(),
        )
        .unwrap();
        assert_eq!(r.vol_value, 1.0);
        assert_eq!(r.vol_label, VolLabel::VeryHigh);
    }

    #[test]
    fn corr_proxy_detects_comovement() {
        let quants = VolQuantiles { q05: 0.0, q95: 1.0 };
        let closes = vec![100.0; 100];
        // identical return columns → |ρ| = 1
        let mut rets = Array2::from_elem((100, 4), 0.0);
        for t in 0..100 {
            let v = if t % 3 == 0 { 0.01 } else { -0.004 };
            for a in 0..4 {
                rets[[t, a]] = v;
            }
        }
        let r = assess_regime(&closes, rets.view(), 99, 252, quants, day()).unwrap();
        assert!((r.corr_value - 1.0).abs() < 1e-12);
        assert_eq!(r.corr_label, CorrLabel::IndexLed);
    }

    #[test]
    fn insufficient_history_rejected() {
        let closes = vec![100.0; 30];
        let rets = Array2::from_elem((30, 3), 0.001);
        let quants = VolQuantiles { q05: 0.0, q95: 1.0 };
        assert!(matches!(
            assess_regime(&closes, rets.view(), 29, 252, quants, day()),
            Err(AgentError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn labels_match_values_on_random_grid() {
        // deterministic pseudo-random sweep of [0,1]
        for i in 0..1000 {
            let v = (i as Real * 0.734_121_7) % 1.0;
            let label = VolLabel::from_value(v);
            let best = (0..5)
                .min_by(|&a, &b| {
                    let da = (v - a as Real * 0.25).abs();
                    let db = (v - b as Real * 0.25).abs();
                    da.partial_cmp(&db)
                        .unwrap()
                        // tie picks the lower level
                        .then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(label.level(), best, "v = {v}");
        }
    }
}

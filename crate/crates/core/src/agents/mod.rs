//! Agent policies: Miner (factor generation and maintenance), Screener
//! (regime-conditioned ensemble construction), Trader (strategy search and
//! execution), the shared memory, and the daily closed loop.
//!
//! Every policy has a deterministic default; an external process can stand
//! in through [`backend::PolicyBackend`] with schema-identical outputs.

pub mod backend;
pub mod memory;
mod miner;
mod regime;
mod runner;
mod screener;
mod trader;

pub use memory::{AgentKind, MemoryEvent, MemoryStore, MetaTag};
pub use miner::{miner_cycle, MinerConfig, MinerOutcome};
pub use regime::{
    assess_regime, realized_vol_20, trend_sigma0, vol_quantiles_from_sample, CorrLabel,
    OrdinalLabel, RegimeAssessment, TrendLabel, VolLabel, VolQuantiles,
};
pub use runner::{run_loop, Ablation, DailyRecord, EpisodeResult, RunnerConfig};
pub use screener::{regime_multiplier, screener_cycle, ScreenerConfig, ScreenerOutcome};
pub use trader::{theta_grid, trader_cycle, TraderConfig, TraderOutcome};

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::dsl::{self, DslError, Expr, FactorSignal};
use crate::exchange::ExchangeError;
use crate::lab::LabError;
use crate::panel::{PanelError, PricePanel};
use crate::strategy::StrategyError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("insufficient history: need {need} days, have {have}")]
    InsufficientHistory { need: usize, have: usize },
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("policy backend failure: {0}")]
    Backend(String),
}

/// Memoized factor signal evaluations over one immutable panel.
///
/// Signals are pure functions of (expression, panel), so one evaluation per
/// expression text serves every consumer of a run.
#[derive(Debug, Default)]
pub struct SignalCache {
    map: BTreeMap<String, Arc<FactorSignal>>,
}

impl SignalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_eval(
        &mut self,
        expr_text: &str,
        panel: &PricePanel,
    ) -> Result<Arc<FactorSignal>, DslError> {
        if let Some(sig) = self.map.get(expr_text) {
            return Ok(sig.clone());
        }
        let expr: Expr = dsl::parse(expr_text)?;
        let sig = Arc::new(dsl::evaluate(&expr, panel)?);
        self.map.insert(expr_text.to_string(), sig.clone());
        Ok(sig)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

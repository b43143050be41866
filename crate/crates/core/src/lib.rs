//! Closed-loop cross-sectional trading research engine.
//!
//! The crate is organized around a daily pipeline: market data panels feed a
//! factor expression DSL, validated factors accumulate in a library, a
//! screener assembles regime-conditioned ensembles, and a trader sizes and
//! executes a long/short reference strategy on a simulated exchange. Post-hoc
//! analyses (alpha decay, regime coherence, exposure/volatility, factor
//! diversity, friction bounds) operate on the run artifacts.
//!
//! Numeric kernels in [`stats`] and [`metrics`] are generic over the scalar
//! type via `num-traits`; the domain layer fixes the scalar to [`Real`].

pub mod agents;
pub mod analysis;
pub mod dsl;
pub mod exchange;
pub mod lab;
pub mod metrics;
pub mod panel;
pub mod stats;
pub mod strategy;
pub mod synth;

/// Scalar type used by the domain layer (prices, signals, metrics).
pub type Real = f64;

/// Asset identifier (ticker-style string).
pub type AssetId = String;

/// Starting cash for every simulated account.
pub const INITIAL_CAPITAL: Real = 10_000_000.0;

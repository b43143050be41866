//! Miner policy: seeded template-grammar factor generation, validation
//! against the lab, and maintenance re-validation of the standing library.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dsl::{parse, CsFn, Expr, Field, Num, TsFn};
use crate::lab::{
    accept, categorize, retain, validate, AcceptanceConfig, FactorRecord, FactorStatus, LabError,
};
use crate::panel::PricePanel;

use super::backend::PolicyBackend;
use super::memory::{AgentKind, MemoryStore, MetaTag};
use super::AgentError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinerConfig {
    /// Trading days between generation/maintenance cycles.
    pub cadence_days: usize,
    /// Stop a generation loop after this many acceptances.
    pub max_new_per_cycle: usize,
    /// Stop a generation loop after this many validations.
    pub candidate_budget: usize,
    /// Leaf fields the template grammar draws from.
    pub fields: Vec<String>,
    /// Trailing windows the template grammar draws from.
    pub windows: Vec<usize>,
    /// Trailing validation window length in trading days.
    pub validation_lookback: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            cadence_days: 63,
            max_new_per_cycle: 8,
            candidate_budget: 64,
            fields: vec!["close".into(), "volume".into(), "high".into(), "low".into()],
            windows: vec![5, 10, 20, 60],
            validation_lookback: 126,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MinerOutcome {
    pub accepted: Vec<String>,
    pub deprecated: Vec<String>,
    pub validated: usize,
    /// The template stream ran out of unseen candidates.
    pub exhausted: bool,
}

/// Full template instantiation set `{transform} ∘ {ts-op(field, w)}` plus
/// close/volume correlation templates, in grammar order (pre-shuffle).
pub fn template_candidates(config: &MinerConfig) -> Vec<Expr> {
    let transforms: [Option<CsFn>; 3] = [None, Some(CsFn::Rank), Some(CsFn::Zscore)];
    let ts_ops =
        [TsFn::Mean, TsFn::Std, TsFn::Min, TsFn::Max, TsFn::Sum, TsFn::Rank, TsFn::Delta];
    let mut out = Vec::new();
    let fields: Vec<Field> =
        config.fields.iter().filter_map(|f| Field::from_name(f)).collect();
    for &transform in &transforms {
        for &op in &ts_ops {
            for &field in &fields {
                for &w in &config.windows {
                    let core = Expr::Ts(op, Box::new(Expr::Field(field)), Num::Lit(w as f64));
                    out.push(match transform {
                        None => core,
                        Some(cs) => Expr::Cs(cs, Box::new(core)),
                    });
                }
            }
        }
        if fields.contains(&Field::Close) && fields.contains(&Field::Volume) {
            for &w in &config.windows {
                let core = Expr::TsCorr(
                    Box::new(Expr::Field(Field::Close)),
                    Box::new(Expr::Field(Field::Volume)),
                    Num::Lit(w as f64),
                );
                out.push(match transform {
                    None => core,
                    Some(cs) => Expr::Cs(cs, Box::new(core)),
                });
            }
        }
    }
    out
}

/// One Miner cycle: draw candidates in seeded pseudo-random order, validate
/// and accept/record each, then re-validate every effective factor and
/// deprecate retention failures.
#[allow(clippy::too_many_arguments)]
pub fn miner_cycle(
    library: &mut Vec<FactorRecord>,
    panel: &PricePanel,
    window: (NaiveDate, NaiveDate),
    memory: &mut MemoryStore,
    acceptance: &AcceptanceConfig,
    config: &MinerConfig,
    rng: &mut ChaCha8Rng,
    backend: &PolicyBackend,
) -> Result<MinerOutcome, AgentError> {
    let day = window.1;
    let mut outcome = MinerOutcome::default();

    // seed the duplicate filter with the standing library
    for record in library.iter() {
        if let Ok(expr) = parse(&record.expression) {
            let canon = expr.canonicalize().to_string();
            if !memory.seen_canonical(&canon) {
                memory.note_canonical(canon);
            }
        }
    }

    let mut candidates = match backend.propose_factors(config, memory) {
        Some(exprs) => exprs,
        None => template_candidates(config),
    };
    candidates.shuffle(rng);

    let mut unseen = 0usize;
    for expr in candidates {
        if outcome.accepted.len() >= config.max_new_per_cycle
            || outcome.validated >= config.candidate_budget
        {
            break;
        }
        let canon = expr.canonicalize().to_string();
        if memory.seen_canonical(&canon) {
            continue;
        }
        memory.note_canonical(canon);
        unseen += 1;
        let factor_id = format!("m{:04}", memory.summary().candidates_examined);
        outcome.validated += 1;
        match validate(&factor_id, &expr, panel, window) {
            Ok(report) => {
                let ok = accept(&report, acceptance);
                let payload = json!({
                    "factor_id": factor_id,
                    "expression": expr.to_string(),
                    "mean_ic": report.mean_ic,
                    "icir": report.icir,
                    "coverage": report.coverage,
                    "turnover": report.turnover,
                });
                if ok {
                    library.push(FactorRecord {
                        factor_id: factor_id.clone(),
                        expression: expr.to_string(),
                        category: categorize(&expr),
                        status: FactorStatus::Effective,
                        history: vec![report],
                    });
                    memory.record(
                        day,
                        AgentKind::Miner,
                        "factor_validated",
                        Some(MetaTag::Effective),
                        payload,
                    );
                    outcome.accepted.push(factor_id);
                } else {
                    memory.record(
                        day,
                        AgentKind::Miner,
                        "factor_validated",
                        Some(MetaTag::Ineffective),
                        payload,
                    );
                }
            }
            // per-candidate degeneracies are recorded, not fatal
            Err(LabError::NoValidDays) | Err(LabError::Dsl(_)) => {
                memory.record(
                    day,
                    AgentKind::Miner,
                    "factor_validated",
                    Some(MetaTag::Ineffective),
                    json!({ "factor_id": factor_id, "expression": expr.to_string(),
                            "error": "validation produced no usable days" }),
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    if unseen == 0 {
        outcome.exhausted = true;
        memory.record(
            day,
            AgentKind::Miner,
            "generator_exhausted",
            None,
            json!({ "examined": memory.summary().candidates_examined }),
        );
    }

    maintain(library, panel, window, memory, &mut outcome)?;
    Ok(outcome)
}

/// Maintenance pass: re-validate every effective factor on the fresh window
/// and deprecate those failing retention.
pub fn maintain(
    library: &mut Vec<FactorRecord>,
    panel: &PricePanel,
    window: (NaiveDate, NaiveDate),
    memory: &mut MemoryStore,
    outcome: &mut MinerOutcome,
) -> Result<(), AgentError> {
    let day = window.1;
    for record in library.iter_mut() {
        if record.status != FactorStatus::Effective {
            continue;
        }
        // a factor validated on this very window is already fresh
        if record.latest().is_some_and(|r| r.window_end == window.1) {
            continue;
        }
        let expr = parse(&record.expression)?;
        let fresh = match validate(&record.factor_id, &expr, panel, window) {
            Ok(r) => r,
            Err(LabError::NoValidDays) | Err(LabError::Dsl(_)) => {
                // can no longer be measured: treat as failed retention
                record.status = FactorStatus::Deprecated;
                memory.record(
                    day,
                    AgentKind::Miner,
                    "factor_revalidated",
                    Some(MetaTag::Deprecated),
                    json!({ "factor_id": record.factor_id, "error": "no usable days" }),
                );
                outcome.deprecated.push(record.factor_id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let next = retain(record, &fresh);
        let payload = json!({
            "factor_id": record.factor_id,
            "mean_ic": fresh.mean_ic,
            "original_ic": record.accepted_report().map(|r| r.mean_ic),
        });
        record.history.push(fresh);
        if next == FactorStatus::Deprecated {
            record.status = FactorStatus::Deprecated;
            memory.record(
                day,
                AgentKind::Miner,
                "factor_revalidated",
                Some(MetaTag::Deprecated),
                payload,
            );
            outcome.deprecated.push(record.factor_id.clone());
        } else {
            memory.record(day, AgentKind::Miner, "factor_revalidated", None, payload);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::MarketId;
    use crate::synth::{generate, SynthSpec};
    use rand::SeedableRng;

    fn windows_of(panel: &PricePanel, lo: usize, hi: usize) -> (NaiveDate, NaiveDate) {
        (panel.calendar.days()[lo], panel.calendar.days()[hi])
    }

    #[test]
    fn template_set_covers_grammar() {
        let cfg = MinerConfig::default();
        let all = template_candidates(&cfg);
        // 3 transforms × (7 ops × 4 fields + corr) × 4 windows
        assert_eq!(all.len(), 3 * (7 * 4 + 1) * 4);
        // every candidate parses back from its print
        for e in &all {
            assert_eq!(parse(&e.to_string()).unwrap(), *e);
        }
    }

    #[test]
    fn budget_zero_leaves_library_unchanged() {
        let panel = generate(&SynthSpec { n_days: 120, n_assets: 8, ..Default::default() });
        let mut lib = Vec::new();
        let mut memory = MemoryStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = MinerConfig { candidate_budget: 0, ..Default::default() };
        let window = windows_of(&panel, 30, 110);
        let out = miner_cycle(
            &mut lib,
            &panel,
            window,
            &mut memory,
            &AcceptanceConfig::default(),
            &cfg,
            &mut rng,
            &PolicyBackend::Deterministic,
        )
        .unwrap();
        assert!(lib.is_empty());
        assert!(out.accepted.is_empty());
        assert_eq!(out.validated, 0);
        assert!(memory.events().iter().all(|e| e.kind != "factor_validated"));
    }

    #[test]
    fn engineered_momentum_fixture_is_accepted() {
        // strong momentum loading, no switch: the ts_delta(close,5) template
        // family carries IC ≈ 0.3 while volume templates carry none
        let spec = SynthSpec {
            n_days: 200,
            n_assets: 15,
            switch_day: None,
            momentum_strength: 0.03,
            noise_std: 0.01,
            ..Default::default()
        };
        let panel = generate(&spec);
        let mut lib = Vec::new();
        let mut memory = MemoryStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = MinerConfig {
            candidate_budget: 500,
            max_new_per_cycle: 50,
            ..Default::default()
        };
        let window = windows_of(&panel, 70, 198);
        let out = miner_cycle(
            &mut lib,
            &panel,
            window,
            &mut memory,
            &AcceptanceConfig::default(),
            &cfg,
            &mut rng,
            &PolicyBackend::Deterministic,
        )
        .unwrap();
        assert!(!out.accepted.is_empty(), "momentum templates should pass");
        // exhaustive check: every accepted factor clears the gate on its report
        for rec in &lib {
            assert!(accept(rec.latest().unwrap(), &AcceptanceConfig::default()));
        }
        // at least one accepted factor is delta-of-close based
        assert!(
            lib.iter().any(|r| r.expression.contains("ts_delta(close")
                || r.expression.contains("ts_rank(close")
                || r.expression.contains("ts_corr")),
            "library: {:?}",
            lib.iter().map(|r| &r.expression).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sign_flip_deprecates_on_later_window() {
        // returns load on momentum before the switch, on volume after
        let spec = SynthSpec {
            n_days: 320,
            n_assets: 15,
            switch_day: Some(160),
            momentum_strength: 0.03,
            volume_strength: 0.03,
            noise_std: 0.01,
            ..Default::default()
        };
        let panel = generate(&spec);
        let mut lib = Vec::new();
        let mut memory = MemoryStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MinerConfig { candidate_budget: 400, max_new_per_cycle: 30, ..Default::default() };

        let early = windows_of(&panel, 40, 150);
        miner_cycle(
            &mut lib,
            &panel,
            early,
            &mut memory,
            &AcceptanceConfig::default(),
            &cfg,
            &mut rng,
            &PolicyBackend::Deterministic,
        )
        .unwrap();
        let momentum_ids: Vec<String> = lib
            .iter()
            .filter(|r| r.expression.contains("close"))
            .map(|r| r.factor_id.clone())
            .collect();
        assert!(!momentum_ids.is_empty());

        // maintenance on a window fully past the switch
        let late = windows_of(&panel, 200, 315);
        let mut out = MinerOutcome::default();
        maintain(&mut lib, &panel, late, &mut memory, &mut out).unwrap();
        let deprecated: Vec<&FactorRecord> = lib
            .iter()
            .filter(|r| r.status == FactorStatus::Deprecated)
            .collect();
        assert!(
            momentum_ids
                .iter()
                .any(|id| deprecated.iter().any(|r| &r.factor_id == id)),
            "a close-driven factor should fail retention after the switch"
        );
        assert!(memory.count_meta(MetaTag::Deprecated) > 0);
    }
}

//! Pluggable policy seam: a deterministic default or an external process
//! speaking request/response JSON over standard streams.
//!
//! External backends must produce outputs schema-identical to the
//! deterministic policies. Malformed or failing responses fall back to the
//! deterministic path with a logged warning, so a broken backend degrades
//! rather than aborts a run.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dsl::{parse, Expr};
use crate::strategy::{EnsembleEntry, Theta, TransformHint};

use super::memory::MemoryStore;
use super::miner::MinerConfig;

/// Policy source for the three agents.
#[derive(Debug, Clone, Default)]
pub enum PolicyBackend {
    #[default]
    Deterministic,
    External(ExternalPolicy),
}

/// Descriptor of an external policy process: argv invoked per request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalPolicy {
    pub command: Vec<String>,
}

impl ExternalPolicy {
    /// One request/response round trip: JSON on stdin, JSON on stdout.
    pub fn call(&self, request: &Value) -> Result<Value, String> {
        let (program, args) = self.command.split_first().ok_or("empty backend command")?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn {program}: {e}"))?;
        child
            .stdin
            .as_mut()
            .ok_or("no stdin")?
            .write_all(serde_json::to_string(request).unwrap().as_bytes())
            .map_err(|e| e.to_string())?;
        let output = child.wait_with_output().map_err(|e| e.to_string())?;
        if !output.status.success() {
            return Err(format!("backend exited with {}", output.status));
        }
        serde_json::from_slice(&output.stdout).map_err(|e| format!("bad response json: {e}"))
    }
}

impl PolicyBackend {
    pub fn is_external(&self) -> bool {
        matches!(self, PolicyBackend::External(_))
    }

    /// Miner hook: propose candidate expressions. `None` selects the
    /// deterministic template stream.
    pub fn propose_factors(&self, config: &MinerConfig, memory: &MemoryStore) -> Option<Vec<Expr>> {
        let PolicyBackend::External(ext) = self else { return None };
        let request = json!({
            "agent": "miner",
            "inputs": {
                "fields": config.fields,
                "windows": config.windows,
                "max_new": config.max_new_per_cycle,
                "candidates_examined": memory.summary().candidates_examined,
            },
        });
        let response = match ext.call(&request) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("miner backend failed, falling back to deterministic: {e}");
                return None;
            }
        };
        let texts = response.get("expressions")?.as_array()?;
        let mut out = Vec::new();
        for t in texts {
            match t.as_str().map(parse) {
                Some(Ok(expr)) => out.push(expr),
                _ => {
                    log::warn!("miner backend returned an unparsable expression, falling back");
                    return None;
                }
            }
        }
        if out.is_empty() {
            return None;
        }
        Some(out)
    }

    /// Screener hook: pick the ensemble from scored candidates. `None`
    /// selects the deterministic greedy-diversified ensemble.
    pub fn choose_ensemble(
        &self,
        candidates: &[(String, f64)],
        regime: &super::RegimeAssessment,
        k: usize,
    ) -> Option<Vec<EnsembleEntry>> {
        let PolicyBackend::External(ext) = self else { return None };
        let request = json!({
            "agent": "screener",
            "inputs": {
                "candidates": candidates
                    .iter()
                    .map(|(id, s)| json!({ "factor_id": id, "suitability": s }))
                    .collect::<Vec<_>>(),
                "regime": regime,
                "k": k,
            },
        });
        let response = match ext.call(&request) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("screener backend failed, falling back to deterministic: {e}");
                return None;
            }
        };
        let entries = parse_ensemble(&response, candidates)?;
        Some(entries)
    }

    /// Trader hook: pick Θ from the evaluated grid. `None` selects the
    /// deterministic argmax.
    pub fn choose_theta(&self, grid: &[(Theta, f64)]) -> Option<Theta> {
        let PolicyBackend::External(ext) = self else { return None };
        let request = json!({
            "agent": "trader",
            "inputs": {
                "grid": grid
                    .iter()
                    .map(|(t, j)| json!({ "theta": t, "objective": j }))
                    .collect::<Vec<_>>(),
            },
        });
        let response = match ext.call(&request) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("trader backend failed, falling back to deterministic: {e}");
                return None;
            }
        };
        let theta: Theta = serde_json::from_value(response.get("theta")?.clone()).ok()?;
        // the choice must come from the offered grid
        if grid.iter().any(|(t, _)| *t == theta) {
            Some(theta)
        } else {
            log::warn!("trader backend chose a theta outside the grid, falling back");
            None
        }
    }
}

fn parse_ensemble(response: &Value, candidates: &[(String, f64)]) -> Option<Vec<EnsembleEntry>> {
    let raw = response.get("ensemble")?.as_array()?;
    let mut out = Vec::new();
    for item in raw {
        let factor_id = item.get("factor_id")?.as_str()?.to_string();
        if !candidates.iter().any(|(id, _)| *id == factor_id) {
            log::warn!("screener backend referenced unknown factor {factor_id}, falling back");
            return None;
        }
        let weight = item.get("weight")?.as_f64()?;
        let direction = item.get("direction")?.as_i64()?;
        if weight < 0.0 || !(direction == 1 || direction == -1) {
            return None;
        }
        let transform_hint = match item.get("transform_hint").and_then(Value::as_str) {
            None => None,
            Some("rank") => Some(TransformHint::Rank),
            Some("zscore") => Some(TransformHint::Zscore),
            Some("winsorize") => Some(TransformHint::Winsorize),
            Some(_) => return None,
        };
        out.push(EnsembleEntry {
            factor_id,
            weight,
            direction: direction as i8,
            transform_hint,
            expression: None,
        });
    }
    if out.is_empty() {
        return None;
    }
    let total: f64 = out.iter().map(|e| e.weight).sum();
    if (total - 1.0).abs() > 1e-6 {
        log::warn!("screener backend weights sum to {total}, falling back");
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> PolicyBackend {
        PolicyBackend::External(ExternalPolicy {
            command: vec!["/bin/sh".into(), "-c".into(), script.into()],
        })
    }

    #[test]
    fn external_roundtrip() {
        let ext = ExternalPolicy {
            command: vec!["/bin/sh".into(), "-c".into(), "cat".into()],
        };
        let req = json!({"agent": "echo", "x": 1});
        assert_eq!(ext.call(&req).unwrap(), req);
    }

    #[test]
    fn miner_backend_proposals_parse() {
        let backend = sh(r#"cat > /dev/null; echo '{"expressions": ["ts_mean(close,5)", "cs_rank(volume)"]}'"#);
        let exprs = backend
            .propose_factors(&MinerConfig::default(), &MemoryStore::new())
            .unwrap();
        assert_eq!(exprs.len(), 2);
        assert_eq!(exprs[0].to_string(), "ts_mean(close,5)");
    }

    #[test]
    fn malformed_miner_response_falls_back() {
        let backend = sh(r#"cat > /dev/null; echo '{"expressions": ["not a factor ("]}'"#);
        assert!(backend.propose_factors(&MinerConfig::default(), &MemoryStore::new()).is_none());
        let backend = sh("cat > /dev/null; echo 'not json'");
        assert!(backend.propose_factors(&MinerConfig::default(), &MemoryStore::new()).is_none());
        let backend = sh("cat > /dev/null; exit 3");
        assert!(backend.propose_factors(&MinerConfig::default(), &MemoryStore::new()).is_none());
    }

    #[test]
    fn ensemble_schema_validation() {
        let cands = vec![("f1".to_string(), 0.4), ("f2".to_string(), 0.2)];
        let regime = super::super::RegimeAssessment::neutral("2024-05-06".parse().unwrap());
        let good = sh(
            r#"cat > /dev/null; echo '{"ensemble": [{"factor_id":"f1","weight":0.6,"direction":1},{"factor_id":"f2","weight":0.4,"direction":-1,"transform_hint":"rank"}]}'"#,
        );
        let ens = good.choose_ensemble(&cands, &regime, 5).unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens[1].transform_hint, Some(TransformHint::Rank));

        // weights not summing to 1 → fallback
        let bad = sh(
            r#"cat > /dev/null; echo '{"ensemble": [{"factor_id":"f1","weight":0.9,"direction":1}]}'"#,
        );
        assert!(bad.choose_ensemble(&cands, &regime, 5).is_none());

        // unknown factor id → fallback
        let bad = sh(
            r#"cat > /dev/null; echo '{"ensemble": [{"factor_id":"zz","weight":1.0,"direction":1}]}'"#,
        );
        assert!(bad.choose_ensemble(&cands, &regime, 5).is_none());
    }

    #[test]
    fn theta_must_come_from_grid() {
        let grid = vec![
            (Theta::new(5, 0, 0.8, 1.0), 1.2),
            (Theta::new(10, 0, 0.8, 1.0), 0.9),
        ];
        let good = sh(
            r#"cat > /dev/null; echo '{"theta": {"n_long":10,"n_short":0,"beta":0.8,"gamma":1.0}}'"#,
        );
        assert_eq!(good.choose_theta(&grid).unwrap(), Theta::new(10, 0, 0.8, 1.0));
        let off_grid = sh(
            r#"cat > /dev/null; echo '{"theta": {"n_long":99,"n_short":0,"beta":0.8,"gamma":1.0}}'"#,
        );
        assert!(off_grid.choose_theta(&grid).is_none());
    }
}

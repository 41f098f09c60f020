//! Per-provider daily call budgets.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::provider::ProviderKind;
use crate::fsutil::write_atomic;

pub const DEFAULT_DAILY_LIMIT: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("daily {provider} budget of {limit} calls exhausted for {day}")]
pub struct BudgetExhausted {
    pub provider: ProviderKind,
    pub limit: u32,
    pub day: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallBudget {
    pub provider: ProviderKind,
    pub daily_limit: u32,
    pub used_today: u32,
    pub day: NaiveDate,
}

impl CallBudget {
    pub fn remaining(&self) -> u32 {
        self.daily_limit.saturating_sub(self.used_today)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerFile {
    day: NaiveDate,
    used: BTreeMap<ProviderKind, u32>,
}

/// Budgets for all providers, optionally persisted so usage carries over
/// between runs on the same day.
#[derive(Debug)]
pub struct BudgetLedger {
    budgets: Mutex<BTreeMap<ProviderKind, CallBudget>>,
    path: Option<PathBuf>,
}

impl BudgetLedger {
    pub fn new(day: NaiveDate, limits: &BTreeMap<ProviderKind, u32>) -> Self {
        let budgets = ProviderKind::ALL
            .iter()
            .map(|&p| {
                let limit = limits.get(&p).copied().unwrap_or(DEFAULT_DAILY_LIMIT);
                (p, CallBudget { provider: p, daily_limit: limit, used_today: 0, day })
            })
            .collect();
        Self {
            budgets: Mutex::new(budgets),
            path: None,
        }
    }

    /// Loads usage recorded for `day` at `path`; usage from other days is
    /// discarded.
    pub fn persistent(path: impl Into<PathBuf>, day: NaiveDate, limits: &BTreeMap<ProviderKind, u32>) -> io::Result<Self> {
        let path = path.into();
        let mut ledger = Self::new(day, limits);
        match std::fs::read_to_string(&path) {
            Ok(raw) => {
                let file: LedgerFile = serde_json::from_str(&raw).map_err(io::Error::other)?;
                if file.day == day {
                    let budgets = ledger.budgets.get_mut().unwrap();
                    for (p, used) in file.used {
                        if let Some(b) = budgets.get_mut(&p) {
                            b.used_today = used;
                        }
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        ledger.path = Some(path);
        Ok(ledger)
    }

    /// Atomically checks and consumes one call.
    pub fn try_acquire(&self, provider: ProviderKind) -> Result<(), BudgetExhausted> {
        let mut budgets = self.budgets.lock().unwrap();
        let b = budgets.get_mut(&provider).expect("every provider has a budget");
        if b.used_today >= b.daily_limit {
            return Err(BudgetExhausted {
                provider,
                limit: b.daily_limit,
                day: b.day,
            });
        }
        b.used_today += 1;
        if let Some(path) = &self.path {
            let file = LedgerFile {
                day: b.day,
                used: budgets.iter().map(|(p, b)| (*p, b.used_today)).collect(),
            };
            // Losing the ledger only risks overspending, never a wrong result.
            let raw = serde_json::to_vec_pretty(&file).expect("ledger serializes");
            if let Err(e) = write_atomic(path, &raw) {
                log::warn!("could not persist call budget to {}: {e}", path.display());
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, provider: ProviderKind) -> CallBudget {
        self.budgets.lock().unwrap()[&provider]
    }
}

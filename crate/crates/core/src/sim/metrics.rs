//! Per-tick counters and the run summary.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::adversary::AttackStats;
use crate::happ::Denial;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TickMetrics {
    pub tick: u64,
    pub messages: u64,
    pub validations: u64,
    pub validation_cost: u64,
    pub stores: u64,
    pub backups: u64,
    pub rejections: u64,
    pub blacklist_events: u64,
    pub detected: u64,
    pub missed: u64,
    pub accesses_granted: u64,
    pub accesses_denied: u64,
    pub online: u64,
}

const COLUMNS: &str = "tick,messages,validations,validation_cost,stores,backups,rejections,\
blacklist_events,detected,missed,accesses_granted,accesses_denied,online";

impl TickMetrics {
    fn add(&mut self, o: &TickMetrics) {
        self.messages += o.messages;
        self.validations += o.validations;
        self.validation_cost += o.validation_cost;
        self.stores += o.stores;
        self.backups += o.backups;
        self.rejections += o.rejections;
        self.blacklist_events += o.blacklist_events;
        self.detected += o.detected;
        self.missed += o.missed;
        self.accesses_granted += o.accesses_granted;
        self.accesses_denied += o.accesses_denied;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub rows: Vec<TickMetrics>,
}

impl Metrics {
    pub fn totals(&self) -> TickMetrics {
        let mut t = TickMetrics::default();
        for r in &self.rows {
            t.add(r);
        }
        t.tick = self.rows.len() as u64;
        t.online = self.rows.last().map_or(0, |r| r.online);
        t
    }

    /// One header row, then one row per tick.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(COLUMNS);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.tick,
                r.messages,
                r.validations,
                r.validation_cost,
                r.stores,
                r.backups,
                r.rejections,
                r.blacklist_events,
                r.detected,
                r.missed,
                r.accesses_granted,
                r.accesses_denied,
                r.online
            )
            .expect("write to string");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessEvent {
    pub tick: u64,
    pub doctor: usize,
    pub patient: usize,
    pub token: String,
    pub granted: bool,
    pub denial: Option<Denial>,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Assertions {
    /// Shard entries that failed re-validation when stored.
    pub invalid_stored: u64,
    /// Ticks at which the rebuilt fuel ledger did not sum to the seeds.
    pub conservation_violations: u64,
    /// Granted accesses not backed by a live, matching grant on replay.
    pub unsound_accesses: u64,
    /// Accesses granted with a token that was never issued.
    pub forged_accesses: u64,
    /// Overdrafts: fuel entries accepted beyond the credit limit, plus
    /// agents whose rebuilt balance ends below it (a missed double spend).
    pub credit_violations: u64,
    /// Records of one network stored by the other.
    pub cross_network_records: u64,
    /// Attack kinds whose detected + missed differs from attempts.
    pub accounting_mismatches: u64,
}

impl Assertions {
    pub fn all_pass(&self) -> bool {
        *self == Assertions::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub n_agents: usize,
    pub ticks: u64,
    pub network_id: String,
    pub totals: TickMetrics,
    pub accesses_granted: u64,
    pub accesses_denied: u64,
    pub transfers_accepted: u64,
    pub transfers_failed: u64,
    pub seed_total: i64,
    pub balance_total: i64,
    pub attacks: BTreeMap<String, AttackStats>,
    pub per_agent_chain_len: Vec<usize>,
    pub per_agent_shard_len: Vec<usize>,
    pub blacklisted_by_all_honest: Vec<usize>,
    pub access_log: Vec<AccessEvent>,
    pub assertions: Assertions,
    pub assertions_pass: bool,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let m = Metrics {
            rows: vec![
                TickMetrics {
                    tick: 0,
                    messages: 3,
                    ..Default::default()
                },
                TickMetrics {
                    tick: 1,
                    messages: 4,
                    online: 9,
                    ..Default::default()
                },
            ],
        };
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 13);
        assert_eq!(lines[2], "1,4,0,0,0,0,0,0,0,0,0,0,9");
        assert_eq!(m.totals().messages, 7);
    }
}

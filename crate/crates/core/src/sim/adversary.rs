//! Attack strategies. Each attack records its attempts and how many of them
//! the honest network detected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Record;
use crate::crypto::{hash_bytes, Digest};
use crate::dht::{neighborhood, Bundle};
use crate::dna::{CostClass, DnaDocument, SchemaField};
use crate::encoding::canonical_encode;
use crate::fuel::{accept_fuel_tx, balance_unchecked, create_fuel_tx, FUEL_ENTRY};
use crate::happ::{
    create_grant, request_access, vitals_payload, CapabilityToken, Denial, Metric,
    ResourceSelector, VitalsReading, VITALS_ENTRY,
};
use crate::payload::FieldType;
use crate::reputation::Observation;

use super::config::AdversarySpec;
use super::Sim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    TamperOwnHistory,
    MitmMutation,
    DoubleSpend,
    ForgedToken,
    DnaFork,
    UnauthorizedAccess,
    DosFlood,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::TamperOwnHistory,
        AttackKind::MitmMutation,
        AttackKind::DoubleSpend,
        AttackKind::ForgedToken,
        AttackKind::DnaFork,
        AttackKind::UnauthorizedAccess,
        AttackKind::DosFlood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::TamperOwnHistory => "tamper_own_history",
            AttackKind::MitmMutation => "mitm_mutation",
            AttackKind::DoubleSpend => "double_spend",
            AttackKind::ForgedToken => "forged_token",
            AttackKind::DnaFork => "dna_fork",
            AttackKind::UnauthorizedAccess => "unauthorized_access",
            AttackKind::DosFlood => "dos_flood",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown attack kind `{0}`")]
pub struct UnknownAttack(pub String);

impl FromStr for AttackKind {
    type Err = UnknownAttack;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownAttack(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AttackStats {
    pub attempts: u64,
    pub detected: u64,
    pub missed: u64,
}

impl AttackStats {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.detected as f64 / self.attempts as f64
        }
    }
}

/// Names of the single-field DNA mutations understood by [`fork_dna`].
pub const DNA_MUTATIONS: [&str; 11] = [
    "app_name",
    "description",
    "entry_type_defs",
    "entry_type_defs.payload_schema",
    "entry_type_defs.rule_ids",
    "entry_type_defs.validation_cost_class",
    "validation_function_ids",
    "params",
    "dht_config.redundancy",
    "dht_config.neighborhood_rule",
    "hash_alg_id",
];

/// Applies one named single-field mutation. Mutations of the last two
/// fields yield documents that fail [`DnaDocument::validate`]: no chain
/// can be initialized under them.
pub fn fork_dna(dna: &DnaDocument, mutation: &str) -> Option<DnaDocument> {
    let mut d = dna.clone();
    match mutation {
        "app_name" => d.app_name.push_str("-fork"),
        "description" => d.description.push_str(" (fork)"),
        "entry_type_defs" => d.entry_type_defs.push(crate::dna::EntryTypeDef {
            type_name: "fork_note".into(),
            payload_schema: vec![],
            rule_ids: vec![],
            validation_cost_class: CostClass::Light,
        }),
        "entry_type_defs.payload_schema" => {
            d.entry_type_defs
                .first_mut()?
                .payload_schema
                .push(SchemaField {
                    name: "note".into(),
                    ty: FieldType::Text,
                })
        }
        "entry_type_defs.rule_ids" => {
            d.entry_type_defs.first_mut()?.rule_ids.pop()?;
        }
        "entry_type_defs.validation_cost_class" => {
            let def = d.entry_type_defs.first_mut()?;
            def.validation_cost_class = match def.validation_cost_class {
                CostClass::Heavy => CostClass::Light,
                _ => CostClass::Heavy,
            };
        }
        "validation_function_ids" => d.validation_function_ids.push("required:note".into()),
        "params" => {
            let limit = d.credit_limit() + 1;
            d.params.insert("credit_limit".into(), limit.to_string());
        }
        "dht_config.redundancy" => d.dht_config.redundancy += 1,
        "dht_config.neighborhood_rule" => d.dht_config.neighborhood_rule.push_str("-fork"),
        "hash_alg_id" => d.hash_alg_id = "sha2-512".into(),
        _ => return None,
    }
    Some(d)
}

/// Every single-field mutation of `dna`.
pub fn dna_mutations(dna: &DnaDocument) -> Vec<(&'static str, DnaDocument)> {
    DNA_MUTATIONS
        .iter()
        .filter_map(|m| fork_dna(dna, m).map(|d| (*m, d)))
        .collect()
}

/// Analytic chance that `k` uniform queries among the `n - 1` non-senders
/// hit at least one of the `g` witnesses.
pub fn double_spend_detection_probability(n: usize, g: usize, k: usize) -> f64 {
    let pool = n.saturating_sub(1);
    if k > pool || g > pool {
        return f64::NAN;
    }
    if g + k > pool {
        return 1.0;
    }
    // C(pool - g, k) / C(pool, k) as a running product.
    let miss: f64 = (0..k)
        .map(|i| (pool - g - i) as f64 / (pool - i) as f64)
        .product();
    1.0 - miss
}

impl Sim {
    pub(super) fn record_attack(&mut self, kind: AttackKind, attempts: u64, detected: u64) {
        let s = self.attacks.entry(kind).or_default();
        s.attempts += attempts;
        s.detected += detected;
        s.missed += attempts - detected;
        self.row.detected += detected;
        self.row.missed += attempts - detected;
    }

    /// Runs the part of an adversary's strategy scheduled for the current tick.
    pub(super) fn adversary_tick(&mut self, index: usize, spec: &AdversarySpec) {
        let p = &spec.params;
        let a = spec.agent;
        match spec.kind {
            AttackKind::DosFlood => {
                if self.tick < p.tick || self.tick >= p.tick + p.duration.max(1) {
                    return;
                }
                let target = match self.dos_targets.get(&index) {
                    Some(t) => *t,
                    None => {
                        let t = p.target.unwrap_or_else(|| self.random_peer(&[a]));
                        self.dos_targets.insert(index, t);
                        t
                    }
                };
                let (from, to) = (self.agents[a], self.agents[target]);
                self.net.flood(&from, &to, p.rate);
                if self.tick + 1 == p.tick + p.duration.max(1) {
                    let caught = self.net.blacklisted_by(&to, &from);
                    self.record_attack(AttackKind::DosFlood, 1, caught as u64);
                }
            }
            kind if self.tick == p.tick => {
                self.launch(kind, a, p.target, p.count);
            }
            _ => {}
        }
    }

    /// One attack attempt (or probe batch) by agent `a` at the current tick.
    pub fn launch(&mut self, kind: AttackKind, a: usize, target: Option<usize>, count: u32) {
        match kind {
            AttackKind::TamperOwnHistory => {
                let caught = self.attack_tamper(a);
                self.record_attack(kind, 1, caught as u64);
            }
            AttackKind::MitmMutation => {
                let (attempts, caught) = self.attack_mitm(a, target);
                self.record_attack(kind, attempts, caught);
            }
            AttackKind::DoubleSpend => {
                if let Some(caught) = self.attack_double_spend(a, target) {
                    self.record_attack(kind, 1, caught as u64);
                }
            }
            AttackKind::ForgedToken => {
                let caught = self.attack_forged_token(a, count);
                self.record_attack(kind, count as u64, caught);
            }
            AttackKind::DnaFork => {
                let caught = self.attack_fork(a);
                self.record_attack(kind, 1, caught as u64);
            }
            AttackKind::UnauthorizedAccess => {
                let (attempts, caught) = self.attack_unauthorized(a, target);
                self.record_attack(kind, attempts, caught);
            }
            AttackKind::DosFlood => {
                let to = target.unwrap_or_else(|| self.random_peer(&[a]));
                let (from, to_id) = (self.agents[a], self.agents[to]);
                for _ in 0..3 {
                    self.net.begin_tick();
                    self.net.flood(&from, &to_id, count.max(100));
                }
                let caught = self.net.blacklisted_by(&to_id, &from);
                self.record_attack(kind, 1, caught as u64);
            }
        }
    }

    /// Uniform main-network agent not in `exclude`.
    pub(super) fn random_peer(&mut self, exclude: &[usize]) -> usize {
        let pool: Vec<usize> = (0..self.agents.len())
            .filter(|i| !self.on_fork[*i] && !exclude.contains(i))
            .collect();
        *pool
            .choose(&mut self.rng)
            .expect("network has other agents")
    }

    fn honest_reading(&mut self, a: usize, value: i64) -> Record {
        let reading = VitalsReading {
            metric: Metric::Pulse,
            value,
            taken_at: self.tick,
        };
        let clock = self.tick.max(self.chains[a].last_timestamp());
        self.chains[a]
            .append_payload(VITALS_ENTRY, &vitals_payload(&reading), clock)
            .expect("vitals entry type exists")
            .clone()
    }

    /// Rewrites an earlier entry (re-signed, hash recomputed) and then
    /// publishes a fresh entry. The next header still links to the original,
    /// so validators see a broken link.
    fn attack_tamper(&mut self, a: usize) -> bool {
        while self.chains[a].len() < 4 {
            let r = self.honest_reading(a, 70);
            self.publish_on_own_network(a, &r);
        }
        let keys = self.chains[a].owner().clone();
        let target = &mut self.chains[a].records_mut()[2];
        let forged = match target
            .decode_payload()
            .ok()
            .and_then(|p| VitalsReading::from_payload(&p))
        {
            Some(mut r) => {
                r.value = if r.value == 70 { 71 } else { 70 };
                canonical_encode(&vitals_payload(&r))
            }
            None => {
                let mut p = target.payload.clone();
                p.push(0);
                p
            }
        };
        target.payload = forged;
        target.header.entry_hash = hash_bytes(&target.payload);
        target.header.resign(&keys);

        let fresh = self.honest_reading(a, 72);
        let key = fresh.header_hash();
        let receipts = self.publish_on_own_network(a, &fresh);
        let stored_by_honest = self
            .network_of(a)
            .holders(&key)
            .iter()
            .any(|h| *h != self.agents[a]);
        receipts == 0 && !stored_by_honest
    }

    /// Mutates publish messages of a victim in flight.
    fn attack_mitm(&mut self, a: usize, target: Option<usize>) -> (u64, u64) {
        let victim = target.unwrap_or_else(|| self.random_peer(&[a]));
        let r = self.cfg.r as u32;
        self.net.install_tap(r);
        let rec = self.honest_reading(victim, 75);
        let _ = self.net.publish(&self.chains[victim], &rec);
        let tap = self.net.take_tap().unwrap_or_default();
        // A mutation is caught if it is rejected and nothing but the
        // genuine record ends up stored under its key.
        let genuine_only = self
            .net
            .shard_entries(&rec.header_hash())
            .all(|b| b.record == rec);
        let caught = if genuine_only { tap.detected } else { 0 };
        (tap.attempts, caught)
    }

    /// Pays X, erases that payment from its own chain, then pays Y from the
    /// same previous transaction. Y audits `k` witnesses before accepting.
    /// Returns whether Y caught it, or `None` if A had nothing to spend.
    fn attack_double_spend(&mut self, a: usize, target: Option<usize>) -> Option<bool> {
        let x = target.unwrap_or_else(|| self.random_peer(&[a]));
        let y = self.random_peer(&[a, x]);
        let amount = balance_unchecked(&self.chains[a]);
        if amount <= 0 || self.on_fork[a] {
            return None;
        }
        let (g, k) = (self.cfg.witnesses(), self.cfg.queries());
        let clock = self.tick.max(self.chains[a].last_timestamp());
        let first = create_fuel_tx(&self.chains[a], self.agents[x], amount, clock).ok()?;
        {
            let (ca, cx) = two_mut(&mut self.chains, a, x);
            accept_fuel_tx(cx, ca, &first, &mut self.net, g, &mut self.rng).ok()?;
        }

        // "Remove" the A→X payment from A's history.
        let cut = self.chains[a]
            .records()
            .iter()
            .rposition(|r| r.entry_type() == FUEL_ENTRY)
            .expect("just appended");
        let removed = self.chains[a].len() - cut;
        self.chains[a].records_mut().truncate(cut);
        self.truncated += removed as u64;

        let clock = self.tick.max(self.chains[a].last_timestamp());
        let second = create_fuel_tx(&self.chains[a], self.agents[y], amount, clock).ok()?;
        let verdict = self.net.audit(&self.agents[y], &second, k, &mut self.rng);
        if !verdict.ok {
            return Some(true);
        }
        let (ca, cy) = two_mut(&mut self.chains, a, y);
        // Missed: Y accepts, and A is now overdrawn in the shared ledger.
        let _ = accept_fuel_tx(cy, ca, &second, &mut self.net, g, &mut self.rng);
        Some(false)
    }

    /// Presents random digests as tokens. Returns the number denied.
    fn attack_forged_token(&mut self, a: usize, count: u32) -> u64 {
        let me = self.agents[a];
        let mut denied = 0;
        for _ in 0..count {
            let patient = self.random_peer(&[a]);
            let pid = self.agents[patient];
            let token = CapabilityToken {
                digest: Digest(self.rng.gen()),
            };
            if self.net.blacklisted_by(&pid, &me) {
                denied += 1;
                continue;
            }
            match request_access(
                &me,
                &self.chains[patient],
                &token,
                self.tick,
                self.cfg.access_mode,
                &self.net,
            ) {
                Ok(records) => {
                    self.log_access(a, patient, &token, Ok(records.len()));
                }
                Err(d) => {
                    denied += 1;
                    if d == Denial::UnknownToken && self.net.is_online(&pid) {
                        self.net.observe(&pid, &me, Observation::ForgedToken);
                    }
                }
            }
        }
        denied
    }

    /// A forked agent tries to push records and fuel into the main network.
    fn attack_fork(&mut self, a: usize) -> bool {
        let rec = self.honest_reading(a, 70);
        self.publish_on_own_network(a, &rec);
        let mut rejected = self.net.publish(&self.chains[a], &rec).is_err();

        let bundle = Bundle::from_chain(&self.chains[a], rec.header.seq).expect("app entry");
        let keys = self.chains[a].owner().clone();
        for to in neighborhood(&self.net.online_members(), &bundle.key(), self.cfg.r) {
            rejected &= !self.net.inject_publish(&keys, bundle.clone(), &to);
        }

        let x = self.random_peer(&[a]);
        if let Ok(p) = create_fuel_tx(
            &self.chains[a],
            self.agents[x],
            1,
            self.tick.max(self.chains[a].last_timestamp()),
        ) {
            let (ca, cx) = two_mut(&mut self.chains, a, x);
            rejected &= accept_fuel_tx(cx, ca, &p, &mut self.net, 1, &mut self.rng).is_err();
        }
        rejected && self.net.foreign_records() == 0
    }

    /// Requests a victim's records with no token, then with a token issued
    /// to somebody else.
    fn attack_unauthorized(&mut self, a: usize, target: Option<usize>) -> (u64, u64) {
        let victim = target.unwrap_or_else(|| self.random_peer(&[a]));
        let me = self.agents[a];
        let vid = self.agents[victim];
        let mut denied = 0;

        let guess = CapabilityToken {
            digest: Digest(self.rng.gen()),
        };
        let stolen = self
            .issued
            .values()
            .find(|g| g.patient == victim && g.doctor != a)
            .map(|g| g.token);
        let stolen = match stolen {
            Some(t) => Some(t),
            None => {
                let doctor = self.random_peer(&[a, victim]);
                let clock = self.tick;
                let (pv, dc) = two_mut(&mut self.chains, victim, doctor);
                let made = create_grant(
                    pv,
                    dc,
                    ResourceSelector::vitals(Metric::Pulse),
                    None,
                    clock,
                    &mut self.net,
                );
                made.ok().map(|(_, t)| {
                    self.issued_tokens.insert(t.digest);
                    t
                })
            }
        };
        let mut attempts = 0;
        for token in std::iter::once(guess).chain(stolen) {
            attempts += 1;
            if self.net.blacklisted_by(&vid, &me) {
                denied += 1;
                continue;
            }
            match request_access(
                &me,
                &self.chains[victim],
                &token,
                self.tick,
                self.cfg.access_mode,
                &self.net,
            ) {
                Ok(records) => self.log_access(a, victim, &token, Ok(records.len())),
                Err(d) => {
                    denied += 1;
                    self.log_access(a, victim, &token, Err(d));
                    if matches!(d, Denial::UnknownToken | Denial::WrongGrantee)
                        && self.net.is_online(&vid)
                    {
                        self.net.observe(&vid, &me, Observation::ForgedToken);
                    }
                }
            }
        }
        (attempts, denied)
    }
}

/// Two distinct mutable elements of a slice.
pub(super) fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j, "two_mut needs distinct indices");
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

pub(super) type DosTargets = BTreeMap<usize, usize>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dna::dna_hash;
    use crate::happ::healthcare_dna;

    #[test]
    fn kinds_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.as_str().parse::<AttackKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{k}\""));
        }
        assert!("rowhammer".parse::<AttackKind>().is_err());
    }

    #[test]
    fn every_mutation_changes_the_hash() {
        let dna = healthcare_dna();
        let muts = dna_mutations(&dna);
        assert_eq!(muts.len(), DNA_MUTATIONS.len());
        for (name, m) in &muts {
            assert_ne!(dna_hash(m), dna_hash(&dna), "{name}");
        }
        let valid = muts.iter().filter(|(_, m)| m.validate().is_ok()).count();
        assert_eq!(valid, DNA_MUTATIONS.len() - 2);
    }

    #[test]
    fn analytic_values() {
        assert_eq!(double_spend_detection_probability(50, 49, 8), 1.0);
        assert_eq!(double_spend_detection_probability(50, 0, 8), 0.0);
        let p = double_spend_detection_probability(50, 8, 8);
        assert!((p - 0.788).abs() < 0.001, "{p}");
    }

    #[test]
    fn two_mut_either_order() {
        let mut v = vec![1, 2, 3];
        let (a, b) = two_mut(&mut v, 2, 0);
        std::mem::swap(a, b);
        assert_eq!(v, vec![3, 2, 1]);
    }
}

//! Scenario configuration, read from JSON.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dna::DnaDocument;
use crate::happ::{AccessMode, Metric, VitalsMode};
use crate::reputation::ReputationParams;

use super::adversary::AttackKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedGrant {
    pub agent: usize,
    pub amount: i64,
}

/// One scripted operation, executed at `tick` in script order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    PublishVitals {
        tick: u64,
        agent: usize,
        metric: Metric,
        value: i64,
    },
    /// Appends and publishes a reading without the local plausibility
    /// check: a misbehaving device.
    PublishUnchecked {
        tick: u64,
        agent: usize,
        metric: Metric,
        value: i64,
    },
    PublishReport {
        tick: u64,
        agent: usize,
        title: String,
        body: String,
    },
    CreateGrant {
        tick: u64,
        patient: usize,
        doctor: usize,
        label: String,
        #[serde(default = "vitals_type")]
        entry_type: String,
        #[serde(default)]
        metric: Option<Metric>,
        #[serde(default)]
        seq_range: Option<(u64, u64)>,
        #[serde(default)]
        expires_at: Option<u64>,
    },
    RequestAccess {
        tick: u64,
        doctor: usize,
        patient: usize,
        grant: String,
    },
    RevokeGrant {
        tick: u64,
        patient: usize,
        grant: String,
    },
    Transfer {
        tick: u64,
        from: usize,
        to: usize,
        amount: i64,
    },
    SetOnline {
        tick: u64,
        agent: usize,
        online: bool,
    },
}

fn vitals_type() -> String {
    crate::happ::VITALS_ENTRY.to_string()
}

impl Action {
    pub fn tick(&self) -> u64 {
        match self {
            Action::PublishVitals { tick, .. }
            | Action::PublishUnchecked { tick, .. }
            | Action::PublishReport { tick, .. }
            | Action::CreateGrant { tick, .. }
            | Action::RequestAccess { tick, .. }
            | Action::RevokeGrant { tick, .. }
            | Action::Transfer { tick, .. }
            | Action::SetOnline { tick, .. } => *tick,
        }
    }

    fn agents(&self) -> Vec<usize> {
        match self {
            Action::PublishVitals { agent, .. }
            | Action::PublishUnchecked { agent, .. }
            | Action::PublishReport { agent, .. }
            | Action::SetOnline { agent, .. } => vec![*agent],
            Action::CreateGrant {
                patient, doctor, ..
            }
            | Action::RequestAccess {
                doctor, patient, ..
            } => {
                vec![*patient, *doctor]
            }
            Action::RevokeGrant { patient, .. } => vec![*patient],
            Action::Transfer { from, to, .. } => vec![*from, *to],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    /// Tick at which the attack starts.
    pub tick: u64,
    /// Victim or counterparty agent; chosen at random when absent.
    pub target: Option<usize>,
    /// Probes per attack for token attacks.
    pub count: u32,
    /// Flood messages per tick.
    pub rate: u32,
    /// Flood duration in ticks.
    pub duration: u64,
    /// DNA field mutated by a fork.
    pub mutation: String,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            tick: 1,
            target: None,
            count: 1,
            rate: 120,
            duration: 5,
            mutation: "description".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub agent: usize,
    pub kind: AttackKind,
    #[serde(default)]
    pub params: AttackParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_agents: usize,
    #[serde(default = "defaults::ticks")]
    pub ticks: u64,
    /// Network DNA; the golden healthcare DNA when absent.
    #[serde(default)]
    pub dna: Option<DnaDocument>,
    /// Whether the DNA is registered in the marketplace.
    #[serde(default = "defaults::yes")]
    pub register_dna: bool,
    #[serde(default = "defaults::r")]
    pub r: usize,
    #[serde(default = "defaults::f")]
    pub f: usize,
    /// Fuel witnesses per transfer; `min(8, n - 1)` when absent.
    #[serde(default)]
    pub g: Option<usize>,
    /// Audit queries per received transfer; `min(8, n - 1)` when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub reputation: ReputationParams,
    #[serde(default = "defaults::rate_limit")]
    pub rate_limit: u32,
    #[serde(default)]
    pub churn: f64,
    #[serde(default)]
    pub vitals_mode: VitalsMode,
    #[serde(default)]
    pub access_mode: AccessMode,
    #[serde(default)]
    pub seed_grants: Vec<SeedGrant>,
    #[serde(default)]
    pub script: Vec<Action>,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    /// Minimum detection rate for attack runs; per-kind default when absent.
    #[serde(default)]
    pub detection_floor: Option<f64>,
}

const DEFAULT_WITNESSES: usize = 8;

mod defaults {
    pub fn ticks() -> u64 {
        10
    }
    pub fn yes() -> bool {
        true
    }
    pub fn r() -> usize {
        4
    }
    pub fn f() -> usize {
        2
    }
    pub fn rate_limit() -> u32 {
        64
    }
}

impl ScenarioConfig {
    /// A minimal honest scenario with defaults everywhere.
    pub fn new(seed: u64, n_agents: usize) -> Self {
        ScenarioConfig {
            seed,
            n_agents,
            ticks: defaults::ticks(),
            dna: None,
            register_dna: true,
            r: defaults::r(),
            f: defaults::f(),
            g: None,
            k: None,
            reputation: ReputationParams::default(),
            rate_limit: defaults::rate_limit(),
            churn: 0.0,
            vitals_mode: VitalsMode::default(),
            access_mode: AccessMode::default(),
            seed_grants: Vec::new(),
            script: Vec::new(),
            adversaries: Vec::new(),
            detection_floor: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_agents;
        if n == 0 {
            return invalid("n_agents must be positive");
        }
        if self.r == 0 {
            return invalid("r must be positive");
        }
        if n < self.r {
            return invalid(format!("n_agents ({n}) must be at least r ({})", self.r));
        }
        if self.ticks == 0 {
            return invalid("ticks must be positive");
        }
        if !(0.0..1.0).contains(&self.churn) {
            return invalid("churn must be in [0, 1)");
        }
        if n < 2 {
            return invalid("n_agents must be at least 2");
        }
        if self.witnesses() == 0 || self.witnesses() > n - 1 {
            return invalid(format!("g must be in 1..={}", n - 1));
        }
        if self.queries() == 0 || self.queries() > n - 1 {
            return invalid(format!("k must be in 1..={}", n.saturating_sub(1)));
        }
        if let Some(f) = self.detection_floor {
            if !(0.0..=1.0).contains(&f) {
                return invalid("detection_floor must be in [0, 1]");
            }
        }
        let rp = &self.reputation;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(rp.initial_confidence)
            || !unit(rp.reward)
            || !unit(rp.penalty_factor)
            || !unit(rp.blacklist_threshold)
        {
            return invalid("reputation constants must lie in [0, 1]");
        }
        if let Some(dna) = &self.dna {
            dna.validate()
                .map_err(|e| ConfigError::Invalid(format!("dna: {e}")))?;
        }
        for s in &self.seed_grants {
            if s.agent >= n {
                return invalid(format!("seed grant for unknown agent {}", s.agent));
            }
            if s.amount < 0 {
                return invalid("seed grant amounts must be non-negative");
            }
        }
        let mut labels = BTreeSet::new();
        for (i, a) in self.script.iter().enumerate() {
            if a.tick() >= self.ticks {
                return invalid(format!(
                    "script[{i}] tick {} is past the last tick",
                    a.tick()
                ));
            }
            if let Some(bad) = a.agents().into_iter().find(|x| *x >= n) {
                return invalid(format!("script[{i}] references unknown agent {bad}"));
            }
            match a {
                Action::CreateGrant {
                    label,
                    patient,
                    doctor,
                    ..
                } => {
                    if patient == doctor {
                        return invalid(format!("script[{i}] grants to the patient itself"));
                    }
                    if !labels.insert(label.clone()) {
                        return invalid(format!("script[{i}] reuses grant label `{label}`"));
                    }
                }
                Action::RequestAccess { grant, .. } | Action::RevokeGrant { grant, .. }
                    if !labels.contains(grant) =>
                {
                    return invalid(format!("script[{i}] references undefined grant `{grant}`"));
                }
                _ => {}
            }
        }
        for (i, adv) in self.adversaries.iter().enumerate() {
            if adv.agent >= n {
                return invalid(format!(
                    "adversaries[{i}] references unknown agent {}",
                    adv.agent
                ));
            }
            if let Some(t) = adv.params.target {
                if t >= n || t == adv.agent {
                    return invalid(format!("adversaries[{i}] has an invalid target {t}"));
                }
            }
            if adv.params.tick >= self.ticks {
                return invalid(format!("adversaries[{i}] starts after the last tick"));
            }
            if adv.kind == AttackKind::DoubleSpend {
                if n < 3 {
                    return invalid("double_spend needs at least 3 agents");
                }
                if !self
                    .seed_grants
                    .iter()
                    .any(|s| s.agent == adv.agent && s.amount > 0)
                {
                    return invalid(format!(
                        "adversaries[{i}] double_spend needs a positive seed grant"
                    ));
                }
            }
            if adv.kind == AttackKind::DnaFork
                && super::adversary::fork_dna(&self.network_dna(), &adv.params.mutation).is_none()
            {
                return invalid(format!(
                    "adversaries[{i}] unknown DNA mutation `{}`",
                    adv.params.mutation
                ));
            }
        }
        let mut forks = self
            .adversaries
            .iter()
            .filter(|a| a.kind == AttackKind::DnaFork);
        if let Some(first) = forks.next() {
            if forks.any(|a| a.params.mutation != first.params.mutation) {
                return invalid("all dna_fork adversaries must join the same fork");
            }
        }
        Ok(())
    }

    pub fn witnesses(&self) -> usize {
        self.g
            .unwrap_or(DEFAULT_WITNESSES.min(self.n_agents.saturating_sub(1)))
    }

    pub fn queries(&self) -> usize {
        self.k
            .unwrap_or(DEFAULT_WITNESSES.min(self.n_agents.saturating_sub(1)))
    }

    pub fn network_dna(&self) -> DnaDocument {
        self.dna.clone().unwrap_or_else(crate::happ::healthcare_dna)
    }
}

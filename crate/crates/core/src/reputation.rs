//! Experience matrix: per-peer experience and confidence with blacklisting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    ValidOk,
    InvalidData,
    DoubleSpend,
    ForgedToken,
    Unavailable,
}

impl Observation {
    pub fn is_violation(self) -> bool {
        matches!(
            self,
            Observation::InvalidData | Observation::DoubleSpend | Observation::ForgedToken
        )
    }
}

/// Update constants and thresholds. The defaults are tuned for desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReputationParams {
    pub initial_confidence: f64,
    pub reward: f64,
    pub penalty_factor: f64,
    pub blacklist_threshold: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        ReputationParams {
            initial_confidence: 0.5,
            reward: 0.05,
            penalty_factor: 0.5,
            blacklist_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    /// Net count of good minus bad interactions.
    pub gamma: i64,
    /// Confidence in `[0, 1]`.
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct ExperienceMatrix {
    params: ReputationParams,
    own: Experience,
    rows: BTreeMap<AgentId, Experience>,
}

impl ExperienceMatrix {
    pub fn new(params: ReputationParams) -> Self {
        let fresh = Experience {
            gamma: 0,
            eta: params.initial_confidence,
        };
        ExperienceMatrix {
            params,
            own: fresh,
            rows: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ReputationParams {
        &self.params
    }

    fn fresh(&self) -> Experience {
        Experience {
            gamma: 0,
            eta: self.params.initial_confidence,
        }
    }

    fn apply(params: &ReputationParams, row: &mut Experience, obs: Observation) {
        match obs {
            Observation::ValidOk => {
                row.gamma += 1;
                row.eta = (row.eta + params.reward).min(1.0);
            }
            Observation::Unavailable => {}
            _ => {
                row.gamma -= 1;
                row.eta = (row.eta * params.penalty_factor).clamp(0.0, 1.0);
            }
        }
    }

    /// Records an observation; returns true if this observation newly
    /// blacklisted the peer.
    pub fn update(&mut self, peer: AgentId, obs: Observation) -> bool {
        let was = self.is_blacklisted(&peer);
        let fresh = self.fresh();
        let row = self.rows.entry(peer).or_insert(fresh);
        Self::apply(&self.params, row, obs);
        !was && self.is_blacklisted(&peer)
    }

    /// Feedback about this agent's own behavior (receipts / rejections).
    pub fn update_self(&mut self, obs: Observation) {
        Self::apply(&self.params, &mut self.own, obs);
    }

    pub fn own(&self) -> Experience {
        self.own
    }

    pub fn get(&self, peer: &AgentId) -> Experience {
        self.rows.get(peer).copied().unwrap_or_else(|| self.fresh())
    }

    pub fn knows(&self, peer: &AgentId) -> bool {
        self.rows.contains_key(peer)
    }

    pub fn is_blacklisted(&self, peer: &AgentId) -> bool {
        self.get(peer).eta < self.params.blacklist_threshold
    }

    pub fn rows(&self) -> impl Iterator<Item = (&AgentId, &Experience)> {
        self.rows.iter()
    }
}

/// Functional form of [`ExperienceMatrix::update`].
pub fn update_experience(
    mut m: ExperienceMatrix,
    peer: AgentId,
    obs: Observation,
) -> ExperienceMatrix {
    m.update(peer, obs);
    m
}

pub fn is_blacklisted(m: &ExperienceMatrix, peer: &AgentId) -> bool {
    m.is_blacklisted(peer)
}

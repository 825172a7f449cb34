//! The healthcare hApp: vitals and reports, capability grants, and the
//! patient → doctor sharing flow.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, Record, SourceChain};
use crate::crypto::{AgentId, Digest};
use crate::dht::{DhtError, Network};
use crate::dna::{CostClass, DnaBuilder, DnaDocument};
use crate::encoding::canonical_encode;
use crate::fuel::{FUEL_ENTRY, SEED_ENTRY};
use crate::payload::{FieldType, Payload, Value};
use crate::rules::RuleContext;
use crate::validation::{validate_transaction_in, Reason};

pub const VITALS_ENTRY: &str = "vitals";
pub const REPORT_ENTRY: &str = "report";
pub const GRANT_ENTRY: &str = "grant";
pub const TOKEN_ENTRY: &str = "grant_token";
pub const REVOKE_ENTRY: &str = "revoke";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ecg,
    Glucose,
    BloodPressure,
    Pulse,
    Oxygen,
    Temperature,
    Position,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Ecg,
        Metric::Glucose,
        Metric::BloodPressure,
        Metric::Pulse,
        Metric::Oxygen,
        Metric::Temperature,
        Metric::Position,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ecg => "ecg",
            Metric::Glucose => "glucose",
            Metric::BloodPressure => "blood_pressure",
            Metric::Pulse => "pulse",
            Metric::Oxygen => "oxygen",
            Metric::Temperature => "temperature",
            Metric::Position => "position",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Ecg => "uV",
            Metric::Glucose => "mg/dL",
            Metric::BloodPressure => "mmHg systolic",
            Metric::Pulse => "bpm",
            Metric::Oxygen => "% SpO2",
            Metric::Temperature => "centi-degC",
            Metric::Position => "zone",
        }
    }

    /// Inclusive plausibility range enforced by the DNA.
    pub fn plausible(self) -> (i64, i64) {
        match self {
            Metric::Ecg => (50, 5_000),
            Metric::Glucose => (20, 600),
            Metric::BloodPressure => (40, 300),
            Metric::Pulse => (20, 250),
            Metric::Oxygen => (50, 100),
            Metric::Temperature => (2_500, 4_500),
            Metric::Position => (0, 65_535),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown metric `{0}`")]
pub struct UnknownMetric(pub String);

impl FromStr for Metric {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalsReading {
    pub metric: Metric,
    /// Integer value in the metric's unit.
    pub value: i64,
    pub taken_at: u64,
}

impl VitalsReading {
    pub fn payload(&self) -> Payload {
        vitals_payload(self)
    }

    pub fn from_record(record: &Record) -> Option<VitalsReading> {
        if record.entry_type() != VITALS_ENTRY {
            return None;
        }
        Self::from_payload(&record.decode_payload().ok()?)
    }

    pub fn from_payload(p: &Payload) -> Option<VitalsReading> {
        Some(VitalsReading {
            metric: p.text("metric")?.parse().ok()?,
            value: p.int("value")?,
            taken_at: u64::try_from(p.int("taken_at")?).ok()?,
        })
    }
}

pub fn vitals_payload(r: &VitalsReading) -> Payload {
    Payload::new()
        .with("metric", Value::Text(r.metric.as_str().into()))
        .with("value", Value::Int(r.value))
        .with("taken_at", Value::Int(r.taken_at as i64))
}

/// The golden DNA used by the demonstration network.
pub fn healthcare_dna() -> DnaDocument {
    let ranges: Vec<String> = Metric::ALL
        .iter()
        .map(|m| {
            let (lo, hi) = m.plausible();
            format!("range:value:{lo}:{hi}:when:metric={}", m.as_str())
        })
        .collect();
    let mut vitals_rules = vec!["required:metric", "required:value", "required:taken_at"];
    vitals_rules.extend(ranges.iter().map(String::as_str));

    let fuel_fields = [
        ("tx_id", FieldType::Hash),
        ("sender", FieldType::Agent),
        ("receiver", FieldType::Agent),
        ("amount", FieldType::Int),
        ("sender_prior_balance", FieldType::Int),
        ("sender_prev_tx", FieldType::Hash),
        ("timestamp", FieldType::Int),
        ("sender_sig", FieldType::Bytes),
        ("receiver_sig", FieldType::Bytes),
    ];
    let fuel_required: Vec<String> = fuel_fields
        .iter()
        .map(|(f, _)| format!("required:{f}"))
        .collect();
    let mut fuel_rules: Vec<&str> = fuel_required.iter().map(String::as_str).collect();
    fuel_rules.extend([
        "range:amount:1:1000000000",
        "author_eq:sender|receiver",
        "balance_nonneg",
        "countersigned",
    ]);

    DnaBuilder::new("iot-health")
        .description("Patient-held vitals with capability-based sharing and mutual-credit fuel")
        .redundancy(4)
        .param("credit_limit", "0")
        .entry(
            VITALS_ENTRY,
            &[
                ("metric", FieldType::Text),
                ("value", FieldType::Int),
                ("taken_at", FieldType::Int),
            ],
            &vitals_rules,
            CostClass::Light,
        )
        .entry(
            REPORT_ENTRY,
            &[("title", FieldType::Text), ("body", FieldType::Text)],
            &["required:title", "required:body"],
            CostClass::Light,
        )
        .entry(
            GRANT_ENTRY,
            &[
                ("grantee", FieldType::Agent),
                ("scope", FieldType::Text),
                ("metric", FieldType::Text),
                ("seq_from", FieldType::Int),
                ("seq_to", FieldType::Int),
                ("expires_at", FieldType::Int),
            ],
            &[
                "required:grantee",
                "required:scope",
                "range:seq_from:0:9223372036854775807",
                "range:seq_to:0:9223372036854775807",
                "range:expires_at:0:9223372036854775807",
            ],
            CostClass::Standard,
        )
        .entry(
            TOKEN_ENTRY,
            &[("token", FieldType::Hash), ("grantor", FieldType::Agent)],
            &["required:token", "required:grantor", "grant_exists:token"],
            CostClass::Light,
        )
        .entry(
            REVOKE_ENTRY,
            &[("token", FieldType::Hash)],
            &["required:token", "grant_exists:token"],
            CostClass::Light,
        )
        .entry(FUEL_ENTRY, &fuel_fields, &fuel_rules, CostClass::Heavy)
        .entry(
            SEED_ENTRY,
            &[("amount", FieldType::Int)],
            &["required:amount", "range:amount:0:1000000000"],
            CostClass::Light,
        )
        .build()
}

/// Which records a grant covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSelector {
    pub entry_type: String,
    #[serde(default)]
    pub metric: Option<Metric>,
    /// Inclusive chain sequence range.
    #[serde(default)]
    pub seq_range: Option<(u64, u64)>,
}

impl ResourceSelector {
    pub fn entry_type(t: &str) -> Self {
        ResourceSelector {
            entry_type: t.to_string(),
            metric: None,
            seq_range: None,
        }
    }

    pub fn vitals(metric: Metric) -> Self {
        ResourceSelector {
            entry_type: VITALS_ENTRY.into(),
            metric: Some(metric),
            seq_range: None,
        }
    }

    pub fn matches(&self, record: &Record) -> bool {
        if record.entry_type() != self.entry_type {
            return false;
        }
        if let Some((lo, hi)) = self.seq_range {
            if !(lo..=hi).contains(&record.header.seq) {
                return false;
            }
        }
        match self.metric {
            None => true,
            Some(m) => record
                .decode_payload()
                .ok()
                .and_then(|p| VitalsReading::from_payload(&p))
                .is_some_and(|r| r.metric == m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityGrant {
    pub grantee: AgentId,
    pub selector: ResourceSelector,
    pub expires_at: Option<u64>,
}

impl CapabilityGrant {
    pub fn to_payload(&self) -> Payload {
        let mut p = Payload::new()
            .with("grantee", Value::Agent(self.grantee))
            .with("scope", Value::Text(self.selector.entry_type.clone()));
        if let Some(m) = self.selector.metric {
            p.insert("metric", Value::Text(m.as_str().into()));
        }
        if let Some((lo, hi)) = self.selector.seq_range {
            p.insert("seq_from", Value::Int(lo as i64));
            p.insert("seq_to", Value::Int(hi as i64));
        }
        if let Some(e) = self.expires_at {
            p.insert("expires_at", Value::Int(e as i64));
        }
        p
    }

    pub fn from_payload(p: &Payload) -> Option<CapabilityGrant> {
        let metric = match p.text("metric") {
            Some(m) => Some(m.parse().ok()?),
            None => None,
        };
        let seq_range = match (p.int("seq_from"), p.int("seq_to")) {
            (Some(lo), Some(hi)) => Some((lo as u64, hi as u64)),
            (None, None) => None,
            _ => return None,
        };
        Some(CapabilityGrant {
            grantee: p.agent("grantee")?,
            selector: ResourceSelector {
                entry_type: p.text("scope")?.to_string(),
                metric,
                seq_range,
            },
            expires_at: p.int("expires_at").map(|e| e as u64),
        })
    }

    pub fn from_record(record: &Record) -> Option<CapabilityGrant> {
        if record.entry_type() != GRANT_ENTRY {
            return None;
        }
        Self::from_payload(&record.decode_payload().ok()?)
    }

    pub fn is_expired(&self, clock: u64) -> bool {
        self.expires_at.is_some_and(|e| clock > e)
    }
}

/// The header hash of a grant entry, used as a bearer token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CapabilityToken {
    pub digest: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denial {
    UnknownToken,
    Revoked,
    Expired,
    WrongGrantee,
    /// Neither the patient nor any permitted holder could answer.
    Unavailable,
}

impl fmt::Display for Denial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Denial::UnknownToken => "unknown_token",
            Denial::Revoked => "revoked",
            Denial::Expired => "expired",
            Denial::WrongGrantee => "wrong_grantee",
            Denial::Unavailable => "unavailable",
        })
    }
}

/// Who may answer an access request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    /// Only the patient, who must be online.
    #[default]
    PatientOnline,
    /// Online DHT holders may resolve published grants for an offline patient.
    Holders,
}

/// Whether vitals go to the DHT or stay on the patient's chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitalsMode {
    #[default]
    LocalOnly,
    Dht,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HappError {
    #[error("entry rejected by DNA rules: {0}")]
    Invalid(Reason),
    #[error("grantee not authenticated: {0}")]
    Unauthenticated(&'static str),
    #[error("token does not resolve to a grant on this chain")]
    UnknownToken,
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Dht(#[from] DhtError),
}

/// Grants visible on one chain.
pub struct ChainGrants<'a>(pub &'a SourceChain);

impl RuleContext for ChainGrants<'_> {
    fn grant_exists(&self, token: &Digest) -> bool {
        find_grant(self.0, &CapabilityToken { digest: *token }).is_some()
    }
}

fn prepare_valid(
    chain: &SourceChain,
    entry_type: &str,
    payload: &Payload,
    clock: u64,
    ctx: &dyn RuleContext,
) -> Result<Record, HappError> {
    let record = chain.prepare_entry(entry_type, canonical_encode(payload), clock)?;
    let verdict = validate_transaction_in(&record, chain.dna(), ctx);
    if !verdict.valid {
        return Err(HappError::Invalid(verdict.reason));
    }
    Ok(record)
}

/// Validates the would-be next record against the chain's DNA before storing it.
fn append_checked(
    chain: &mut SourceChain,
    entry_type: &str,
    payload: &Payload,
    clock: u64,
    ctx: &dyn RuleContext,
) -> Result<Record, HappError> {
    let record = prepare_valid(chain, entry_type, payload, clock, ctx)?;
    Ok(chain.commit(record)?.clone())
}

/// As [`append_checked`], resolving grants against the chain itself.
fn append_local(
    chain: &mut SourceChain,
    entry_type: &str,
    payload: &Payload,
    clock: u64,
) -> Result<Record, HappError> {
    let record = prepare_valid(chain, entry_type, payload, clock, &ChainGrants(chain))?;
    Ok(chain.commit(record)?.clone())
}

/// Appends a reading; with a network it is also published to the DHT.
pub fn publish_vitals(
    chain: &mut SourceChain,
    reading: &VitalsReading,
    clock: u64,
    net: Option<&mut Network>,
) -> Result<Record, HappError> {
    let record = append_local(chain, VITALS_ENTRY, &vitals_payload(reading), clock)?;
    if let Some(net) = net {
        net.publish(chain, &record)?;
    }
    Ok(record)
}

/// Appends a free-text report (diagnosis, note) to a patient chain.
pub fn publish_report(
    chain: &mut SourceChain,
    title: &str,
    body: &str,
    clock: u64,
    net: Option<&mut Network>,
) -> Result<Record, HappError> {
    let payload = Payload::new()
        .with("title", Value::Text(title.to_string()))
        .with("body", Value::Text(body.to_string()));
    let record = append_local(chain, REPORT_ENTRY, &payload, clock)?;
    if let Some(net) = net {
        net.publish(chain, &record)?;
    }
    Ok(record)
}

pub fn find_grant<'a>(
    chain: &'a SourceChain,
    token: &CapabilityToken,
) -> Option<(&'a Record, CapabilityGrant)> {
    chain
        .records()
        .iter()
        .find(|r| r.entry_type() == GRANT_ENTRY && r.header_hash() == token.digest)
        .and_then(|r| CapabilityGrant::from_record(r).map(|g| (r, g)))
}

fn revokes(records: &[Record], token: &CapabilityToken) -> bool {
    records.iter().any(|r| {
        r.entry_type() == REVOKE_ENTRY
            && r.decode_payload()
                .ok()
                .and_then(|p| p.hash("token"))
                .is_some_and(|t| t == token.digest)
    })
}

pub fn is_revoked(chain: &SourceChain, token: &CapabilityToken) -> bool {
    revokes(chain.records(), token)
}

/// Patient grants `doctor` access to the selected records. The grant is
/// published so holders can resolve it; the doctor stores the token.
pub fn create_grant(
    patient: &mut SourceChain,
    doctor: &mut SourceChain,
    selector: ResourceSelector,
    expires_at: Option<u64>,
    clock: u64,
    net: &mut Network,
) -> Result<(Record, CapabilityToken), HappError> {
    let doctor_id = doctor.agent_id();
    if doctor.dna_hash() != patient.dna_hash() || doctor.dna_hash() != net.network_id() {
        return Err(HappError::Unauthenticated(
            "grantee belongs to another network",
        ));
    }
    if !net.is_member(&doctor_id) {
        return Err(HappError::Unauthenticated(
            "grantee is not a network member",
        ));
    }
    if !net.market().contains(&net.network_id()) {
        return Err(HappError::Unauthenticated("application not registered"));
    }
    if net.blacklisted_by(&patient.agent_id(), &doctor_id) {
        return Err(HappError::Unauthenticated("grantee is blacklisted"));
    }
    let grant = CapabilityGrant {
        grantee: doctor_id,
        selector,
        expires_at,
    };
    let clock = clock.max(patient.last_timestamp());
    let record = append_local(patient, GRANT_ENTRY, &grant.to_payload(), clock)?;
    let token = CapabilityToken {
        digest: record.header_hash(),
    };
    net.publish(patient, &record)?;

    let keep = Payload::new()
        .with("token", Value::Hash(token.digest))
        .with("grantor", Value::Agent(patient.agent_id()));
    let doctor_clock = clock.max(doctor.last_timestamp());
    append_checked(
        doctor,
        TOKEN_ENTRY,
        &keep,
        doctor_clock,
        &GrantLookup { patient, net },
    )?;
    Ok((record, token))
}

struct GrantLookup<'a> {
    patient: &'a SourceChain,
    net: &'a Network,
}

impl RuleContext for GrantLookup<'_> {
    fn grant_exists(&self, token: &Digest) -> bool {
        ChainGrants(self.patient).grant_exists(token) || self.net.grant_exists(token)
    }
}

/// Serves a request on the patient's side, or on a holder's side when the
/// mode allows and the patient is offline.
pub fn request_access(
    doctor: &AgentId,
    patient: &SourceChain,
    token: &CapabilityToken,
    clock: u64,
    mode: AccessMode,
    net: &Network,
) -> Result<Vec<Record>, Denial> {
    let patient_id = patient.agent_id();
    if net.is_online(&patient_id) {
        let (_, grant) = find_grant(patient, token).ok_or(Denial::UnknownToken)?;
        check_grant(&grant, is_revoked(patient, token), doctor, clock)?;
        return Ok(patient
            .records()
            .iter()
            .filter(|r| grant.selector.matches(r))
            .cloned()
            .collect());
    }
    if mode == AccessMode::PatientOnline {
        return Err(Denial::Unavailable);
    }
    let bundle = net.fetch_bundle(&token.digest).ok_or(Denial::Unavailable)?;
    let grant = (bundle.author() == patient_id)
        .then(|| CapabilityGrant::from_record(&bundle.record))
        .flatten()
        .ok_or(Denial::UnknownToken)?;
    let published = net.published_by(&patient_id);
    check_grant(&grant, revokes(&published, token), doctor, clock)?;
    Ok(published
        .into_iter()
        .filter(|r| grant.selector.matches(r))
        .collect())
}

fn check_grant(
    grant: &CapabilityGrant,
    revoked: bool,
    doctor: &AgentId,
    clock: u64,
) -> Result<(), Denial> {
    if revoked {
        Err(Denial::Revoked)
    } else if grant.is_expired(clock) {
        Err(Denial::Expired)
    } else if grant.grantee != *doctor {
        Err(Denial::WrongGrantee)
    } else {
        Ok(())
    }
}

/// Appends a revocation; with a network it is published as well.
pub fn revoke_grant(
    patient: &mut SourceChain,
    token: &CapabilityToken,
    clock: u64,
    net: Option<&mut Network>,
) -> Result<Record, HappError> {
    if find_grant(patient, token).is_none() {
        return Err(HappError::UnknownToken);
    }
    let payload = Payload::new().with("token", Value::Hash(token.digest));
    let clock = clock.max(patient.last_timestamp());
    let record = append_local(patient, REVOKE_ENTRY, &payload, clock)?;
    if let Some(net) = net {
        net.publish(patient, &record)?;
    }
    Ok(record)
}

//! Transaction, application and channel validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{GenesisRecord, Record, DNA_ENTRY, GENESIS_ENTRY};
use crate::crypto::{hash_bytes, Digest};
use crate::dna::DnaDocument;
use crate::encoding::canonical_decode;
use crate::rules::{NoContext, RuleContext};

pub use crate::dna::dna_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Ok,
    UnknownEntryType,
    RuleViolation,
    UnregisteredApp,
    BadSignature,
    BadLink,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Reason::Ok => "ok",
            Reason::UnknownEntryType => "unknown_entry_type",
            Reason::RuleViolation => "rule_violation",
            Reason::UnregisteredApp => "unregistered_app",
            Reason::BadSignature => "bad_signature",
            Reason::BadLink => "bad_link",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub valid: bool,
    pub reason: Reason,
}

impl Verdict {
    pub const OK: Verdict = Verdict {
        valid: true,
        reason: Reason::Ok,
    };

    pub fn invalid(reason: Reason) -> Verdict {
        debug_assert_ne!(reason, Reason::Ok);
        Verdict {
            valid: false,
            reason,
        }
    }
}

/// Registry of known applications keyed by DNA hash.
#[derive(Debug, Clone, Default)]
pub struct Marketplace {
    registered_apps: BTreeMap<Digest, DnaDocument>,
}

impl Marketplace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, dna: DnaDocument) -> Digest {
        let id = dna_hash(&dna);
        self.registered_apps.insert(id, dna);
        id
    }

    pub fn lookup(&self, id: &Digest) -> Option<&DnaDocument> {
        self.registered_apps.get(id)
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.registered_apps.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.registered_apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registered_apps.is_empty()
    }
}

impl FromIterator<DnaDocument> for Marketplace {
    fn from_iter<I: IntoIterator<Item = DnaDocument>>(iter: I) -> Self {
        let mut m = Marketplace::new();
        for dna in iter {
            m.register(dna);
        }
        m
    }
}

pub fn validate_transaction(record: &Record, dna: &DnaDocument) -> Verdict {
    validate_transaction_in(record, dna, &NoContext)
}

/// Validates one record against a DNA: header signature, entry hash, entry
/// type membership, payload schema and every rule of the entry type.
pub fn validate_transaction_in(
    record: &Record,
    dna: &DnaDocument,
    ctx: &dyn RuleContext,
) -> Verdict {
    let header = &record.header;
    if !header.signature_valid() {
        return Verdict::invalid(Reason::BadSignature);
    }
    if header.entry_hash != hash_bytes(&record.payload) {
        return Verdict::invalid(Reason::BadLink);
    }
    match header.entry_type.as_str() {
        DNA_ENTRY => {
            return if header.entry_hash == dna_hash(dna) {
                Verdict::OK
            } else {
                Verdict::invalid(Reason::RuleViolation)
            };
        }
        GENESIS_ENTRY => {
            let ok = canonical_decode::<GenesisRecord>(&record.payload)
                .is_ok_and(|g| g.dna_hash == dna_hash(dna) && g.agent_id == header.author);
            return if ok {
                Verdict::OK
            } else {
                Verdict::invalid(Reason::RuleViolation)
            };
        }
        _ => {}
    }
    let Some(def) = dna.entry_def(&header.entry_type) else {
        return Verdict::invalid(Reason::UnknownEntryType);
    };
    let Ok(payload) = record.decode_payload() else {
        return Verdict::invalid(Reason::RuleViolation);
    };
    let schema_ok = payload
        .iter()
        .all(|(name, value)| def.field_type(name) == Some(value.field_type()));
    if !schema_ok {
        return Verdict::invalid(Reason::RuleViolation);
    }
    let credit_limit = dna.credit_limit();
    if def
        .rules()
        .all(|rule| rule.check(header, &payload, credit_limit, ctx))
    {
        Verdict::OK
    } else {
        Verdict::invalid(Reason::RuleViolation)
    }
}

pub fn validate_application(candidate: &Digest, market: &Marketplace) -> Verdict {
    if market.contains(candidate) {
        Verdict::OK
    } else {
        Verdict::invalid(Reason::UnregisteredApp)
    }
}

pub fn authenticate_channel(record: &Record, dna: &DnaDocument, market: &Marketplace) -> Verdict {
    authenticate_channel_in(record, dna, market, &NoContext)
}

/// Channel authentication succeeds only when both the transaction and the
/// application check pass; the transaction verdict is reported first.
pub fn authenticate_channel_in(
    record: &Record,
    dna: &DnaDocument,
    market: &Marketplace,
    ctx: &dyn RuleContext,
) -> Verdict {
    let tx = validate_transaction_in(record, dna, ctx);
    let app = validate_application(&dna_hash(dna), market);
    match (tx.valid, app.valid) {
        (true, true) => Verdict::OK,
        (false, _) => tx,
        (true, false) => app,
    }
}

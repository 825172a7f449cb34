//! Per-agent source chains: append-only, hash-linked and signed.
//!
//! Record 0 always carries the DNA document and record 1 the genesis entry
//! binding the owner's key to the DNA hash. Application entries follow.

use std::fmt;

use thiserror::Error;

use crate::crypto::{hash_bytes, sign, verify, AgentId, Digest, KeyPair, Signature};
use crate::dna::{dna_hash, DnaDocument, DnaError, SYSTEM_PREFIX};
use crate::encoding::{
    canonical_decode, canonical_encode, Canonical, DecodeError, Decoder, Encoder,
};
use crate::payload::Payload;

pub const DNA_ENTRY: &str = "%dna";
pub const GENESIS_ENTRY: &str = "%genesis";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("invalid DNA: {0}")]
    Dna(#[from] DnaError),
    #[error("entry type `{0}` is not defined by the chain's DNA")]
    UnknownEntryType(String),
    #[error("clock {clock} is before the last header timestamp {last}")]
    NonMonotoneClock { clock: u64, last: u64 },
    #[error("sequence {seq} out of range (length {len})")]
    OutOfRange { seq: u64, len: usize },
    #[error("record does not extend the current head")]
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryHeader {
    pub timestamp: u64,
    pub entry_type: String,
    pub entry_hash: Digest,
    pub author: AgentId,
    pub signature: Signature,
    pub prev_header_hash: Digest,
    pub seq: u64,
}

impl EntryHeader {
    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.u64(self.timestamp)
            .str(&self.entry_type)
            .digest(&self.entry_hash)
            .agent(&self.author);
    }

    fn encode_tail(&self, enc: &mut Encoder) {
        enc.digest(&self.prev_header_hash).u64(self.seq);
    }

    /// Bytes covered by the header signature: every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        self.encode_tail(&mut enc);
        enc.finish()
    }

    pub fn hash(&self) -> Digest {
        hash_bytes(&canonical_encode(self))
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.author, &self.signing_bytes(), &self.signature)
    }

    pub(crate) fn signed(
        keys: &KeyPair,
        seq: u64,
        timestamp: u64,
        entry_type: &str,
        entry_hash: Digest,
        prev_header_hash: Digest,
    ) -> Self {
        let mut header = EntryHeader {
            timestamp,
            entry_type: entry_type.to_string(),
            entry_hash,
            author: keys.public(),
            signature: Signature([0u8; 64]),
            prev_header_hash,
            seq,
        };
        header.signature = sign(keys, &header.signing_bytes());
        header
    }

    pub(crate) fn resign(&mut self, keys: &KeyPair) {
        self.signature = sign(keys, &self.signing_bytes());
    }
}

impl Canonical for EntryHeader {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.signature(&self.signature);
        self.encode_tail(enc);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(EntryHeader {
            timestamp: dec.u64()?,
            entry_type: dec.str()?,
            entry_hash: dec.digest()?,
            author: dec.agent()?,
            signature: dec.signature()?,
            prev_header_hash: dec.digest()?,
            seq: dec.u64()?,
        })
    }
}

/// One header plus the payload it commits to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub header: EntryHeader,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn header_hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn entry_type(&self) -> &str {
        &self.header.entry_type
    }

    pub fn decode_payload(&self) -> Result<Payload, DecodeError> {
        canonical_decode(&self.payload)
    }
}

impl Canonical for Record {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.item(&self.header).bytes(&self.payload);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Record {
            header: dec.item()?,
            payload: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisRecord {
    pub dna_hash: Digest,
    pub agent_id: AgentId,
    pub membrane_proof: Option<Vec<u8>>,
}

impl Canonical for GenesisRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.digest(&self.dna_hash).agent(&self.agent_id).option(
            self.membrane_proof.as_ref(),
            |e, p| {
                e.bytes(p);
            },
        );
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(GenesisRecord {
            dna_hash: dec.digest()?,
            agent_id: dec.agent()?,
            membrane_proof: dec.option(|d| d.bytes())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    Sequence,
    Author,
    Link,
    Signature,
    EntryHash,
    Timestamp,
    Structure,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureReason::Sequence => "sequence number mismatch",
            FailureReason::Author => "author is not the chain owner",
            FailureReason::Link => "previous-header hash mismatch",
            FailureReason::Signature => "header signature does not verify",
            FailureReason::EntryHash => "entry hash does not match payload",
            FailureReason::Timestamp => "timestamp goes backwards",
            FailureReason::Structure => "DNA/genesis structure invalid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationReport {
    Ok,
    Failed { index: usize, reason: FailureReason },
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, VerificationReport::Ok)
    }

    pub fn first_failure_index(&self) -> Option<usize> {
        match self {
            VerificationReport::Ok => None,
            VerificationReport::Failed { index, .. } => Some(*index),
        }
    }
}

fn structure_ok(index: usize, records: &[Record]) -> bool {
    let record = &records[index];
    match index {
        0 => {
            record.header.entry_type == DNA_ENTRY
                && canonical_decode::<DnaDocument>(&record.payload)
                    .is_ok_and(|dna| dna.validate().is_ok())
        }
        1 => {
            record.header.entry_type == GENESIS_ENTRY
                && canonical_decode::<GenesisRecord>(&record.payload).is_ok_and(|g| {
                    g.dna_hash == records[0].header.entry_hash && g.agent_id == record.header.author
                })
        }
        _ => !record.header.entry_type.starts_with(SYSTEM_PREFIX),
    }
}

/// Verifies a record sequence as a complete chain. The owner defaults to the
/// author of record 0. Reports the smallest failing index.
pub fn verify_records(records: &[Record], owner: Option<AgentId>) -> VerificationReport {
    let Some(first) = records.first() else {
        return VerificationReport::Failed {
            index: 0,
            reason: FailureReason::Structure,
        };
    };
    let owner = owner.unwrap_or(first.header.author);
    let mut prev: Option<&EntryHeader> = None;
    let mut prev_hash = Digest::ZERO;
    for (index, record) in records.iter().enumerate() {
        let h = &record.header;
        let fail = |reason| VerificationReport::Failed { index, reason };
        if h.seq != index as u64 {
            return fail(FailureReason::Sequence);
        }
        if h.author != owner {
            return fail(FailureReason::Author);
        }
        if h.prev_header_hash != prev_hash {
            return fail(FailureReason::Link);
        }
        if !h.signature_valid() {
            return fail(FailureReason::Signature);
        }
        if h.entry_hash != hash_bytes(&record.payload) {
            return fail(FailureReason::EntryHash);
        }
        if prev.is_some_and(|p| h.timestamp < p.timestamp) {
            return fail(FailureReason::Timestamp);
        }
        if !structure_ok(index, records) {
            return fail(FailureReason::Structure);
        }
        prev_hash = h.hash();
        prev = Some(h);
    }
    if records.len() < 2 {
        return VerificationReport::Failed {
            index: records.len(),
            reason: FailureReason::Structure,
        };
    }
    VerificationReport::Ok
}

/// Checks that `headers` form a correctly linked, signed sequence starting
/// at seq 0 and authored by `author`. Payloads are not needed.
pub fn verify_header_lineage(headers: &[EntryHeader], author: &AgentId) -> Option<usize> {
    let mut prev_hash = Digest::ZERO;
    let mut prev_ts = 0;
    for (i, h) in headers.iter().enumerate() {
        if h.seq != i as u64
            || h.author != *author
            || h.prev_header_hash != prev_hash
            || h.timestamp < prev_ts
            || !h.signature_valid()
        {
            return Some(i);
        }
        prev_hash = h.hash();
        prev_ts = h.timestamp;
    }
    None
}

#[derive(Debug, Clone)]
pub struct SourceChain {
    owner: KeyPair,
    dna: DnaDocument,
    dna_hash: Digest,
    records: Vec<Record>,
}

impl SourceChain {
    pub fn init(
        dna: DnaDocument,
        keys: KeyPair,
        membrane_proof: Option<Vec<u8>>,
        clock: u64,
    ) -> Result<Self, ChainError> {
        dna.validate()?;
        let dna_bytes = canonical_encode(&dna);
        let network_id = hash_bytes(&dna_bytes);
        debug_assert_eq!(network_id, dna_hash(&dna));
        let dna_header = EntryHeader::signed(&keys, 0, clock, DNA_ENTRY, network_id, Digest::ZERO);
        let genesis = GenesisRecord {
            dna_hash: network_id,
            agent_id: keys.public(),
            membrane_proof,
        };
        let genesis_bytes = canonical_encode(&genesis);
        let genesis_header = EntryHeader::signed(
            &keys,
            1,
            clock,
            GENESIS_ENTRY,
            hash_bytes(&genesis_bytes),
            dna_header.hash(),
        );
        Ok(SourceChain {
            owner: keys,
            dna,
            dna_hash: network_id,
            records: vec![
                Record {
                    header: dna_header,
                    payload: dna_bytes,
                },
                Record {
                    header: genesis_header,
                    payload: genesis_bytes,
                },
            ],
        })
    }

    /// Signs the next entry without storing it, so callers can validate
    /// it before [`SourceChain::commit`].
    pub fn prepare_entry(
        &self,
        entry_type: &str,
        payload: Vec<u8>,
        clock: u64,
    ) -> Result<Record, ChainError> {
        if self.dna.entry_def(entry_type).is_none() {
            return Err(ChainError::UnknownEntryType(entry_type.to_string()));
        }
        let last = &self.records.last().expect("chain has records").header;
        if clock < last.timestamp {
            return Err(ChainError::NonMonotoneClock {
                clock,
                last: last.timestamp,
            });
        }
        let header = EntryHeader::signed(
            &self.owner,
            self.records.len() as u64,
            clock,
            entry_type,
            hash_bytes(&payload),
            last.hash(),
        );
        Ok(Record { header, payload })
    }

    /// Stores a record produced by [`SourceChain::prepare_entry`] on this
    /// chain's current head.
    pub fn commit(&mut self, record: Record) -> Result<&Record, ChainError> {
        let h = &record.header;
        if h.seq != self.records.len() as u64
            || h.prev_header_hash != self.head()
            || h.author != self.agent_id()
        {
            return Err(ChainError::Stale);
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Signs and stores a new entry locally. Publication is a separate step.
    pub fn append_entry(
        &mut self,
        entry_type: &str,
        payload: Vec<u8>,
        clock: u64,
    ) -> Result<&Record, ChainError> {
        let record = self.prepare_entry(entry_type, payload, clock)?;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn append_payload(
        &mut self,
        entry_type: &str,
        payload: &Payload,
        clock: u64,
    ) -> Result<&Record, ChainError> {
        self.append_entry(entry_type, canonical_encode(payload), clock)
    }

    pub fn verify(&self) -> VerificationReport {
        verify_records(&self.records, Some(self.owner.public()))
    }

    pub fn get_record(&self, seq: u64) -> Result<&Record, ChainError> {
        self.records
            .get(seq as usize)
            .ok_or(ChainError::OutOfRange {
                seq,
                len: self.records.len(),
            })
    }

    pub fn head(&self) -> Digest {
        self.records
            .last()
            .expect("chain has records")
            .header_hash()
    }

    pub fn last_timestamp(&self) -> u64 {
        self.records
            .last()
            .expect("chain has records")
            .header
            .timestamp
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn headers(&self) -> impl Iterator<Item = &EntryHeader> {
        self.records.iter().map(|r| &r.header)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn owner(&self) -> &KeyPair {
        &self.owner
    }

    pub fn agent_id(&self) -> AgentId {
        self.owner.public()
    }

    pub fn dna(&self) -> &DnaDocument {
        &self.dna
    }

    pub fn dna_hash(&self) -> Digest {
        self.dna_hash
    }

    pub fn genesis(&self) -> GenesisRecord {
        canonical_decode(&self.records[1].payload).expect("genesis written by init")
    }

    pub fn export(&self) -> String {
        export_records(&self.records)
    }

    /// Adversary access: rewrites are impossible through the public API.
    pub(crate) fn records_mut(&mut self) -> &mut Vec<Record> {
        &mut self.records
    }
}

/// Shorthand for [`SourceChain::init`].
pub fn init_chain(
    dna: DnaDocument,
    keys: KeyPair,
    membrane_proof: Option<Vec<u8>>,
    clock: u64,
) -> Result<SourceChain, ChainError> {
    SourceChain::init(dna, keys, membrane_proof, clock)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImportError {
    #[error("empty chain file")]
    Empty,
    #[error("file is truncated (last line has no terminator)")]
    Truncated,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// One lowercase-hex canonical record per line, each line `\n`-terminated.
pub fn export_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&hex::encode(canonical_encode(r)));
        out.push('\n');
    }
    out
}

pub fn import_records(text: &str) -> Result<Vec<Record>, ImportError> {
    if text.is_empty() {
        return Err(ImportError::Empty);
    }
    if !text.ends_with('\n') {
        return Err(ImportError::Truncated);
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |message: String| ImportError::Line {
                line: i + 1,
                message,
            };
            let bytes = hex::decode(line.trim_end_matches('\r')).map_err(|e| err(e.to_string()))?;
            canonical_decode::<Record>(&bytes).map_err(|e| err(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dna::{CostClass, DnaBuilder};
    use crate::payload::{FieldType, Value};

    fn dna() -> DnaDocument {
        DnaBuilder::new("chain-test")
            .entry(
                "note",
                &[("text", FieldType::Text)],
                &["required:text"],
                CostClass::Light,
            )
            .build()
    }

    fn chain(extra: usize) -> SourceChain {
        let mut c = SourceChain::init(dna(), KeyPair::from_seed(&[3u8; 32]), None, 0).unwrap();
        for i in 0..extra {
            let p = Payload::new().with("text", Value::Text(format!("n{i}")));
            c.append_payload("note", &p, i as u64 + 1).unwrap();
        }
        c
    }

    #[test]
    fn init_postconditions() {
        let c = chain(0);
        assert_eq!(c.len(), 2);
        assert!(c.verify().is_ok());
        assert_eq!(c.get_record(0).unwrap().entry_type(), DNA_ENTRY);
        assert_eq!(c.get_record(1).unwrap().entry_type(), GENESIS_ENTRY);
        let g = c.genesis();
        assert_eq!(g.dna_hash, hash_bytes(&c.get_record(0).unwrap().payload));
        assert_eq!(g.agent_id, c.agent_id());
    }

    #[test]
    fn same_dna_different_agents() {
        let a = SourceChain::init(dna(), KeyPair::from_seed(&[1u8; 32]), None, 0).unwrap();
        let b = SourceChain::init(dna(), KeyPair::from_seed(&[2u8; 32]), None, 0).unwrap();
        assert_eq!(a.genesis().dna_hash, b.genesis().dna_hash);
        assert_ne!(a.genesis().agent_id, b.genesis().agent_id);
    }

    #[test]
    fn append_links_to_genesis() {
        let mut c = chain(0);
        let genesis_hash = c.get_record(1).unwrap().header_hash();
        let r = c
            .append_payload(
                "note",
                &Payload::new().with("text", Value::Text("x".into())),
                5,
            )
            .unwrap()
            .clone();
        assert_eq!(r.header.seq, 2);
        assert_eq!(r.header.prev_header_hash, genesis_hash);
        assert_eq!(c.head(), r.header_hash());
    }

    #[test]
    fn append_errors() {
        let mut c = chain(1);
        assert_eq!(
            c.append_entry("x-ray", vec![], 9),
            Err(ChainError::UnknownEntryType("x-ray".into()))
        );
        assert_eq!(
            c.append_entry("note", vec![], 0),
            Err(ChainError::NonMonotoneClock { clock: 0, last: 1 })
        );
        assert!(matches!(
            c.get_record(99),
            Err(ChainError::OutOfRange { .. })
        ));
    }

    #[test]
    fn payload_flip_reports_entry_hash_at_index() {
        let c = chain(18);
        for k in 0..c.len() {
            let mut records = c.records().to_vec();
            records[k].payload[0] ^= 1;
            assert_eq!(
                verify_records(&records, None),
                VerificationReport::Failed {
                    index: k,
                    reason: FailureReason::EntryHash
                }
            );
        }
    }

    #[test]
    fn foreign_signature_reports_signature_at_index() {
        let c = chain(18);
        let other = KeyPair::from_seed(&[8u8; 32]);
        for k in 0..c.len() {
            let mut records = c.records().to_vec();
            records[k].header.signature = sign(&other, &records[k].header.signing_bytes());
            assert_eq!(
                verify_records(&records, None),
                VerificationReport::Failed {
                    index: k,
                    reason: FailureReason::Signature
                }
            );
        }
    }

    #[test]
    fn prefixes_verify() {
        let c = chain(6);
        for len in 2..=c.len() {
            assert!(verify_records(&c.records()[..len], None).is_ok());
        }
        assert!(!verify_records(&c.records()[..1], None).is_ok());
        assert!(!verify_records(&[], None).is_ok());
    }

    #[test]
    fn export_import() {
        let c = chain(3);
        let text = c.export();
        assert_eq!(import_records(&text).unwrap(), c.records());
        assert_eq!(import_records(""), Err(ImportError::Empty));
        assert_eq!(
            import_records(&text[..text.len() - 5]),
            Err(ImportError::Truncated)
        );
        assert!(matches!(
            import_records("zz\n"),
            Err(ImportError::Line { line: 1, .. })
        ));
    }

    #[test]
    fn lineage_check() {
        let c = chain(4);
        let headers: Vec<_> = c.headers().cloned().collect();
        assert_eq!(verify_header_lineage(&headers, &c.agent_id()), None);
        let mut bad = headers.clone();
        bad[3].timestamp += 100;
        bad[3].resign(c.owner());
        assert_eq!(verify_header_lineage(&bad, &c.agent_id()), Some(4));
    }
}

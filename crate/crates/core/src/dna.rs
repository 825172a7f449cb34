//! DNA documents: the identity and rule set of an application network.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_bytes, Digest, HASH_ALG_ID};
use crate::encoding::{canonical_encode, Canonical, DecodeError, Decoder, Encoder};
use crate::payload::FieldType;
use crate::rules::Rule;

pub const NEIGHBORHOOD_XOR: &str = "xor-nearest";

/// Entry types starting with this prefix are reserved for the chain itself.
pub const SYSTEM_PREFIX: char = '%';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DnaError {
    #[error("app_name must not be empty")]
    EmptyName,
    #[error("at least one entry type is required")]
    NoEntryTypes,
    #[error("duplicate entry type `{0}`")]
    DuplicateEntryType(String),
    #[error("entry type `{0}` uses a reserved or empty name")]
    ReservedEntryType(String),
    #[error("duplicate field `{field}` in entry type `{entry_type}`")]
    DuplicateField { entry_type: String, field: String },
    #[error("malformed rule id `{0}`")]
    BadRule(String),
    #[error("rule `{rule}` of `{entry_type}` is not declared in validation_function_ids")]
    UndeclaredRule { entry_type: String, rule: String },
    #[error("unsupported hash algorithm `{0}`")]
    HashAlgorithm(String),
    #[error("redundancy factor must be at least 1")]
    Redundancy,
    #[error("unknown neighborhood rule `{0}`")]
    NeighborhoodRule(String),
    #[error("parameter `{key}` has invalid value `{value}`")]
    Param { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    Light,
    Standard,
    Heavy,
}

impl CostClass {
    /// Simulated validation latency in ticks.
    pub fn latency_ticks(self) -> u64 {
        match self {
            CostClass::Light => 1,
            CostClass::Standard => 4,
            CostClass::Heavy => 16,
        }
    }

    fn tag(self) -> u8 {
        match self {
            CostClass::Light => 0,
            CostClass::Standard => 1,
            CostClass::Heavy => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryTypeDef {
    pub type_name: String,
    pub payload_schema: Vec<SchemaField>,
    pub rule_ids: Vec<String>,
    pub validation_cost_class: CostClass,
}

impl EntryTypeDef {
    pub fn field_type(&self, name: &str) -> Option<FieldType> {
        self.payload_schema
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.ty)
    }

    /// Parsed rules; ids were checked by [`DnaDocument::validate`].
    pub fn rules(&self) -> impl Iterator<Item = Rule> + '_ {
        self.rule_ids.iter().filter_map(|id| id.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhtConfig {
    pub redundancy: u32,
    #[serde(default = "default_neighborhood")]
    pub neighborhood_rule: String,
}

fn default_neighborhood() -> String {
    NEIGHBORHOOD_XOR.to_string()
}

fn default_hash_alg() -> String {
    HASH_ALG_ID.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnaDocument {
    pub app_name: String,
    #[serde(default)]
    pub description: String,
    pub entry_type_defs: Vec<EntryTypeDef>,
    pub validation_function_ids: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub dht_config: DhtConfig,
    #[serde(default = "default_hash_alg")]
    pub hash_alg_id: String,
}

impl DnaDocument {
    pub fn validate(&self) -> Result<(), DnaError> {
        if self.app_name.is_empty() {
            return Err(DnaError::EmptyName);
        }
        if self.entry_type_defs.is_empty() {
            return Err(DnaError::NoEntryTypes);
        }
        if self.hash_alg_id != HASH_ALG_ID {
            return Err(DnaError::HashAlgorithm(self.hash_alg_id.clone()));
        }
        if self.dht_config.redundancy == 0 {
            return Err(DnaError::Redundancy);
        }
        if self.dht_config.neighborhood_rule != NEIGHBORHOOD_XOR {
            return Err(DnaError::NeighborhoodRule(
                self.dht_config.neighborhood_rule.clone(),
            ));
        }
        for id in &self.validation_function_ids {
            id.parse::<Rule>()
                .map_err(|_| DnaError::BadRule(id.clone()))?;
        }
        let declared: BTreeSet<&str> = self
            .validation_function_ids
            .iter()
            .map(String::as_str)
            .collect();
        let mut names = BTreeSet::new();
        for def in &self.entry_type_defs {
            if def.type_name.is_empty() || def.type_name.starts_with(SYSTEM_PREFIX) {
                return Err(DnaError::ReservedEntryType(def.type_name.clone()));
            }
            if !names.insert(def.type_name.as_str()) {
                return Err(DnaError::DuplicateEntryType(def.type_name.clone()));
            }
            let mut fields = BTreeSet::new();
            for f in &def.payload_schema {
                if !fields.insert(f.name.as_str()) {
                    return Err(DnaError::DuplicateField {
                        entry_type: def.type_name.clone(),
                        field: f.name.clone(),
                    });
                }
            }
            for rule in &def.rule_ids {
                rule.parse::<Rule>()
                    .map_err(|_| DnaError::BadRule(rule.clone()))?;
                if !declared.contains(rule.as_str()) {
                    return Err(DnaError::UndeclaredRule {
                        entry_type: def.type_name.clone(),
                        rule: rule.clone(),
                    });
                }
            }
        }
        self.credit_limit_param()?;
        Ok(())
    }

    pub fn entry_def(&self, type_name: &str) -> Option<&EntryTypeDef> {
        self.entry_type_defs
            .iter()
            .find(|d| d.type_name == type_name)
    }

    fn credit_limit_param(&self) -> Result<i64, DnaError> {
        match self.params.get("credit_limit") {
            None => Ok(0),
            Some(v) => v
                .parse::<i64>()
                .ok()
                .filter(|x| *x >= 0)
                .ok_or_else(|| DnaError::Param {
                    key: "credit_limit".into(),
                    value: v.clone(),
                }),
        }
    }

    /// How far below zero a balance may go; `params.credit_limit`, default 0.
    pub fn credit_limit(&self) -> i64 {
        self.credit_limit_param().unwrap_or(0)
    }
}

/// Network identity of an application.
pub fn dna_hash(dna: &DnaDocument) -> Digest {
    hash_bytes(&canonical_encode(dna))
}

impl Canonical for EntryTypeDef {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.type_name)
            .list(&self.payload_schema, |e, f| {
                e.str(&f.name);
                f.ty.encode(e);
            })
            .list(&self.rule_ids, |e, r| {
                e.str(r);
            })
            .u8(self.validation_cost_class.tag());
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let type_name = dec.str()?;
        let payload_schema = dec.list(|d| {
            Ok(SchemaField {
                name: d.str()?,
                ty: FieldType::from_tag(d.u8()?)?,
            })
        })?;
        let rule_ids = dec.list(|d| d.str())?;
        let validation_cost_class = match dec.u8()? {
            0 => CostClass::Light,
            1 => CostClass::Standard,
            2 => CostClass::Heavy,
            tag => {
                return Err(DecodeError::Tag {
                    what: "cost class",
                    tag,
                })
            }
        };
        Ok(EntryTypeDef {
            type_name,
            payload_schema,
            rule_ids,
            validation_cost_class,
        })
    }
}

impl Canonical for DnaDocument {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.app_name)
            .str(&self.description)
            .list(&self.entry_type_defs, |e, d| {
                e.item(d);
            })
            .list(&self.validation_function_ids, |e, r| {
                e.str(r);
            })
            .str_map(&self.params)
            .u32(self.dht_config.redundancy)
            .str(&self.dht_config.neighborhood_rule)
            .str(&self.hash_alg_id);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(DnaDocument {
            app_name: dec.str()?,
            description: dec.str()?,
            entry_type_defs: dec.list(|d| d.item())?,
            validation_function_ids: dec.list(|d| d.str())?,
            params: dec.str_map()?,
            dht_config: DhtConfig {
                redundancy: dec.u32()?,
                neighborhood_rule: dec.str()?,
            },
            hash_alg_id: dec.str()?,
        })
    }
}

/// Small builder used by tests, the simulator and the benchmark.
pub struct DnaBuilder {
    dna: DnaDocument,
}

impl DnaBuilder {
    pub fn new(app_name: &str) -> Self {
        DnaBuilder {
            dna: DnaDocument {
                app_name: app_name.to_string(),
                description: String::new(),
                entry_type_defs: Vec::new(),
                validation_function_ids: Vec::new(),
                params: BTreeMap::new(),
                dht_config: DhtConfig {
                    redundancy: 4,
                    neighborhood_rule: default_neighborhood(),
                },
                hash_alg_id: default_hash_alg(),
            },
        }
    }

    pub fn description(mut self, d: &str) -> Self {
        self.dna.description = d.to_string();
        self
    }

    pub fn redundancy(mut self, r: u32) -> Self {
        self.dna.dht_config.redundancy = r;
        self
    }

    pub fn param(mut self, k: &str, v: &str) -> Self {
        self.dna.params.insert(k.to_string(), v.to_string());
        self
    }

    pub fn entry(
        mut self,
        type_name: &str,
        schema: &[(&str, FieldType)],
        rules: &[&str],
        cost: CostClass,
    ) -> Self {
        for r in rules {
            if !self.dna.validation_function_ids.iter().any(|x| x == r) {
                self.dna.validation_function_ids.push(r.to_string());
            }
        }
        self.dna.entry_type_defs.push(EntryTypeDef {
            type_name: type_name.to_string(),
            payload_schema: schema
                .iter()
                .map(|(n, t)| SchemaField {
                    name: n.to_string(),
                    ty: *t,
                })
                .collect(),
            rule_ids: rules.iter().map(|r| r.to_string()).collect(),
            validation_cost_class: cost,
        });
        self
    }

    pub fn build(self) -> DnaDocument {
        self.dna
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::canonical_decode;

    fn small() -> DnaDocument {
        DnaBuilder::new("notes")
            .entry(
                "note",
                &[("text", FieldType::Text)],
                &["required:text"],
                CostClass::Light,
            )
            .build()
    }

    #[test]
    fn valid_document_round_trips() {
        let dna = small();
        dna.validate().unwrap();
        let bytes = canonical_encode(&dna);
        assert_eq!(canonical_decode::<DnaDocument>(&bytes).unwrap(), dna);
    }

    #[test]
    fn invalid_documents() {
        let mut d = small();
        d.app_name.clear();
        assert_eq!(d.validate(), Err(DnaError::EmptyName));

        let mut d = small();
        d.entry_type_defs.clear();
        assert_eq!(d.validate(), Err(DnaError::NoEntryTypes));

        let mut d = small();
        let dup = d.entry_type_defs[0].clone();
        d.entry_type_defs.push(dup);
        assert_eq!(
            d.validate(),
            Err(DnaError::DuplicateEntryType("note".into()))
        );

        let mut d = small();
        d.entry_type_defs[0].type_name = "%dna".into();
        assert!(matches!(d.validate(), Err(DnaError::ReservedEntryType(_))));

        let mut d = small();
        d.validation_function_ids.clear();
        assert!(matches!(d.validate(), Err(DnaError::UndeclaredRule { .. })));

        let mut d = small();
        d.hash_alg_id = "md5".into();
        assert!(matches!(d.validate(), Err(DnaError::HashAlgorithm(_))));

        let mut d = small();
        d.params.insert("credit_limit".into(), "-3".into());
        assert!(matches!(d.validate(), Err(DnaError::Param { .. })));
    }

    #[test]
    fn latency_classes() {
        assert_eq!(CostClass::Light.latency_ticks(), 1);
        assert_eq!(CostClass::Standard.latency_ticks(), 4);
        assert_eq!(CostClass::Heavy.latency_ticks(), 16);
    }
}

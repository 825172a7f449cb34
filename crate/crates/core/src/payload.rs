//! Structured application payloads: a sorted map of named, typed fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{AgentId, Digest};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Int,
    Text,
    Bytes,
    Hash,
    Agent,
}

impl FieldType {
    fn tag(self) -> u8 {
        match self {
            FieldType::Int => 0,
            FieldType::Text => 1,
            FieldType::Bytes => 2,
            FieldType::Hash => 3,
            FieldType::Agent => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            0 => FieldType::Int,
            1 => FieldType::Text,
            2 => FieldType::Bytes,
            3 => FieldType::Hash,
            4 => FieldType::Agent,
            tag => {
                return Err(DecodeError::Tag {
                    what: "field type",
                    tag,
                })
            }
        })
    }

    pub(crate) fn encode(self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Text(String),
    Bytes(Vec<u8>),
    Hash(Digest),
    Agent(AgentId),
}

impl Value {
    pub fn field_type(&self) -> FieldType {
        match self {
            Value::Int(_) => FieldType::Int,
            Value::Text(_) => FieldType::Text,
            Value::Bytes(_) => FieldType::Bytes,
            Value::Hash(_) => FieldType::Hash,
            Value::Agent(_) => FieldType::Agent,
        }
    }
}

impl Canonical for Value {
    fn encode_to(&self, enc: &mut Encoder) {
        self.field_type().encode(enc);
        match self {
            Value::Int(v) => enc.i64(*v),
            Value::Text(v) => enc.str(v),
            Value::Bytes(v) => enc.bytes(v),
            Value::Hash(v) => enc.digest(v),
            Value::Agent(v) => enc.agent(v),
        };
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match FieldType::from_tag(dec.u8()?)? {
            FieldType::Int => Value::Int(dec.i64()?),
            FieldType::Text => Value::Text(dec.str()?),
            FieldType::Bytes => Value::Bytes(dec.bytes()?),
            FieldType::Hash => Value::Hash(dec.digest()?),
            FieldType::Agent => Value::Agent(dec.agent()?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Payload {
    fields: BTreeMap<String, Value>,
}

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: Value) -> Self {
        self.fields.insert(name.to_string(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: Value) {
        self.fields.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name)
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.get(name) {
            Some(Value::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.get(name) {
            Some(Value::Text(v)) => Some(v),
            _ => None,
        }
    }

    pub fn hash(&self, name: &str) -> Option<Digest> {
        match self.get(name) {
            Some(Value::Hash(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn agent(&self, name: &str) -> Option<AgentId> {
        match self.get(name) {
            Some(Value::Agent(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn bytes(&self, name: &str) -> Option<&[u8]> {
        match self.get(name) {
            Some(Value::Bytes(v)) => Some(v),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl Canonical for Payload {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u32(self.fields.len() as u32);
        for (k, v) in &self.fields {
            enc.str(k).item(v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let pairs = dec.list(|d| Ok((d.str()?, d.item::<Value>()?)))?;
        let mut fields = BTreeMap::new();
        for (k, v) in pairs {
            if fields.last_key_value().is_some_and(|(last, _)| *last >= k) {
                return Err(DecodeError::MapOrder);
            }
            fields.insert(k, v);
        }
        Ok(Payload { fields })
    }
}

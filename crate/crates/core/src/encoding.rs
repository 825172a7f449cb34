//! Canonical byte encoding used for every hash and signature.
//!
//! Layout rules: fields in declaration order, integers big-endian fixed
//! width, strings and variable byte strings as a `u32` big-endian length
//! followed by the bytes, fixed-width values (digests, keys, signatures)
//! raw, options as a `0`/`1` tag byte, lists as a `u32` count followed by
//! the items, maps as a sorted list of pairs. There is no padding.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{AgentId, Digest, Signature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Eof(usize),
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("invalid utf-8 string at offset {0}")]
    Utf8(usize),
    #[error("invalid tag {tag} for {what}")]
    Tag { what: &'static str, tag: u8 },
    #[error("map keys not strictly ascending")]
    MapOrder,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Default, Debug)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    fn len(&mut self, n: usize) -> &mut Self {
        let n = u32::try_from(n).expect("length exceeds u32");
        self.u32(n)
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.len(v.len());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.raw(d.as_bytes())
    }

    pub fn agent(&mut self, a: &AgentId) -> &mut Self {
        self.raw(a.as_bytes())
    }

    pub fn signature(&mut self, s: &Signature) -> &mut Self {
        self.raw(s.as_bytes())
    }

    pub fn option<T>(&mut self, v: Option<&T>, f: impl FnOnce(&mut Self, &T)) -> &mut Self {
        match v {
            None => {
                self.u8(0);
            }
            Some(x) => {
                self.u8(1);
                f(self, x);
            }
        }
        self
    }

    pub fn list<T>(&mut self, items: &[T], mut f: impl FnMut(&mut Self, &T)) -> &mut Self {
        self.len(items.len());
        for item in items {
            f(self, item);
        }
        self
    }

    pub fn str_map(&mut self, map: &BTreeMap<String, String>) -> &mut Self {
        self.len(map.len());
        for (k, v) in map {
            self.str(k).str(v);
        }
        self
    }

    pub fn item<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode_to(self);
        self
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Eof(self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::Tag { what: "bool", tag }),
        }
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        // A length can never exceed the remaining input; reject before allocating.
        if n > self.remaining() {
            return Err(DecodeError::Eof(self.pos));
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        String::from_utf8(self.bytes()?).map_err(|_| DecodeError::Utf8(at))
    }

    pub fn digest(&mut self) -> Result<Digest, DecodeError> {
        self.array().map(Digest)
    }

    pub fn agent(&mut self) -> Result<AgentId, DecodeError> {
        self.array().map(AgentId)
    }

    pub fn signature(&mut self) -> Result<Signature, DecodeError> {
        self.array().map(Signature)
    }

    pub fn option<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, DecodeError>,
    ) -> Result<Option<T>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            tag => Err(DecodeError::Tag {
                what: "option",
                tag,
            }),
        }
    }

    pub fn list<T>(
        &mut self,
        mut f: impl FnMut(&mut Self) -> Result<T, DecodeError>,
    ) -> Result<Vec<T>, DecodeError> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(self.remaining()));
        for _ in 0..n {
            out.push(f(self)?);
        }
        Ok(out)
    }

    pub fn str_map(&mut self) -> Result<BTreeMap<String, String>, DecodeError> {
        let pairs = self.list(|d| Ok((d.str()?, d.str()?)))?;
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if map.last_key_value().is_some_and(|(last, _)| *last >= k) {
                return Err(DecodeError::MapOrder);
            }
            map.insert(k, v);
        }
        Ok(map)
    }

    pub fn item<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode_from(self)
    }
}

/// Types with a single, injective byte representation.
pub trait Canonical: Sized {
    fn encode_to(&self, enc: &mut Encoder);
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;
}

pub fn canonical_encode<T: Canonical>(value: &T) -> Vec<u8> {
    let mut enc = Encoder::new();
    value.encode_to(&mut enc);
    enc.finish()
}

/// Decodes a complete value; trailing bytes are an error.
pub fn canonical_decode<T: Canonical>(bytes: &[u8]) -> Result<T, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let value = T::decode_from(&mut dec)?;
    dec.finish()?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian() {
        let mut e = Encoder::new();
        e.u32(1).u64(2).i64(-1);
        assert_eq!(
            e.finish(),
            [0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2, 255, 255, 255, 255, 255, 255, 255, 255]
        );
    }

    #[test]
    fn strings_are_length_prefixed() {
        let mut e = Encoder::new();
        e.str("ab");
        assert_eq!(e.finish(), [0, 0, 0, 2, b'a', b'b']);
    }

    #[test]
    fn oversized_length_is_eof_not_alloc() {
        let mut d = Decoder::new(&[0xff, 0xff, 0xff, 0xff, 1]);
        assert!(matches!(d.bytes(), Err(DecodeError::Eof(_))));
    }

    #[test]
    fn unsorted_map_rejected() {
        let mut e = Encoder::new();
        e.u32(2).str("b").str("1").str("a").str("2");
        let bytes = e.finish();
        assert_eq!(Decoder::new(&bytes).str_map(), Err(DecodeError::MapOrder));
    }
}

//! The closed validation-rule language referenced by id from entry types.
//!
//! Rule ids are self-describing strings:
//!
//! | id                                   | passes when                                      |
//! |--------------------------------------|--------------------------------------------------|
//! | `required:F`                         | field `F` is present                             |
//! | `range:F:MIN:MAX`                    | `F` absent, or an integer in `MIN..=MAX`         |
//! | `range:F:MIN:MAX:when:G=V`           | as above, only applied when text field `G == V`  |
//! | `author_eq:F` / `author_eq:F\|G`     | header author equals one of the agent fields     |
//! | `balance_nonneg`                     | `sender_prior_balance - amount >= -credit_limit` |
//! | `grant_exists:F`                     | hash field `F` names a grant known to the context|
//! | `countersigned`                      | both fuel signatures verify                      |

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::chain::EntryHeader;
use crate::crypto::Digest;
use crate::fuel::FuelTransaction;
use crate::payload::{Payload, Value};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed rule id `{0}`")]
pub struct RuleParseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Required(String),
    Range {
        field: String,
        min: i64,
        max: i64,
        when: Option<(String, String)>,
    },
    AuthorEq(Vec<String>),
    BalanceNonnegative,
    GrantExists(String),
    Countersigned,
}

impl FromStr for Rule {
    type Err = RuleParseError;

    fn from_str(id: &str) -> Result<Self, Self::Err> {
        let bad = || RuleParseError(id.to_string());
        let parts: Vec<&str> = id.split(':').collect();
        let nonempty = |s: &str| (!s.is_empty()).then(|| s.to_string()).ok_or_else(bad);
        match parts.as_slice() {
            ["required", f] => Ok(Rule::Required(nonempty(f)?)),
            ["range", f, min, max, rest @ ..] => {
                let min: i64 = min.parse().map_err(|_| bad())?;
                let max: i64 = max.parse().map_err(|_| bad())?;
                if min > max {
                    return Err(bad());
                }
                let when = match rest {
                    [] => None,
                    ["when", cond] => {
                        let (g, v) = cond.split_once('=').ok_or_else(bad)?;
                        Some((nonempty(g)?, nonempty(v)?))
                    }
                    _ => return Err(bad()),
                };
                Ok(Rule::Range {
                    field: nonempty(f)?,
                    min,
                    max,
                    when,
                })
            }
            ["author_eq", fields] => {
                let fields = fields
                    .split('|')
                    .map(nonempty)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Rule::AuthorEq(fields))
            }
            ["balance_nonneg"] => Ok(Rule::BalanceNonnegative),
            ["grant_exists", f] => Ok(Rule::GrantExists(nonempty(f)?)),
            ["countersigned"] => Ok(Rule::Countersigned),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Required(field) => write!(f, "required:{field}"),
            Rule::Range {
                field,
                min,
                max,
                when,
            } => {
                write!(f, "range:{field}:{min}:{max}")?;
                if let Some((g, v)) = when {
                    write!(f, ":when:{g}={v}")?;
                }
                Ok(())
            }
            Rule::AuthorEq(fields) => write!(f, "author_eq:{}", fields.join("|")),
            Rule::BalanceNonnegative => f.write_str("balance_nonneg"),
            Rule::GrantExists(field) => write!(f, "grant_exists:{field}"),
            Rule::Countersigned => f.write_str("countersigned"),
        }
    }
}

/// Chain-external facts a rule may need.
pub trait RuleContext {
    fn grant_exists(&self, token: &Digest) -> bool;
}

/// A context that knows no grants; `grant_exists` rules fail under it.
pub struct NoContext;

impl RuleContext for NoContext {
    fn grant_exists(&self, _token: &Digest) -> bool {
        false
    }
}

impl Rule {
    pub fn check(
        &self,
        header: &EntryHeader,
        payload: &Payload,
        credit_limit: i64,
        ctx: &dyn RuleContext,
    ) -> bool {
        match self {
            Rule::Required(field) => payload.get(field).is_some(),
            Rule::Range {
                field,
                min,
                max,
                when,
            } => {
                if let Some((g, v)) = when {
                    if payload.text(g) != Some(v.as_str()) {
                        return true;
                    }
                }
                match payload.get(field) {
                    None => true,
                    Some(Value::Int(x)) => (*min..=*max).contains(x),
                    Some(_) => false,
                }
            }
            Rule::AuthorEq(fields) => fields
                .iter()
                .any(|f| payload.agent(f) == Some(header.author)),
            Rule::BalanceNonnegative => {
                match (payload.int("sender_prior_balance"), payload.int("amount")) {
                    (Some(prior), Some(amount)) => prior
                        .checked_sub(amount)
                        .is_some_and(|after| after >= -credit_limit),
                    _ => false,
                }
            }
            Rule::GrantExists(field) => payload.hash(field).is_some_and(|t| ctx.grant_exists(&t)),
            Rule::Countersigned => {
                FuelTransaction::from_payload(payload).is_some_and(|tx| tx.signatures_valid())
            }
        }
    }
}

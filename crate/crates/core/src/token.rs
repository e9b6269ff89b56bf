//! Name tokens shared by module ids, datatypes, topics and consumer groups.
//!
//! A token matches `[A-Za-z][A-Za-z0-9-]*`. Tokens are compared exactly
//! (case-sensitive) and never parsed back into their parts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("BAD_NAME: {0:?} is not a valid token")]
pub struct BadName(pub String);

/// Returns true when `s` matches `[A-Za-z][A-Za-z0-9-]*`.
pub fn is_token(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

pub fn check_token(s: &str) -> Result<(), BadName> {
    if is_token(s) {
        Ok(())
    } else {
        Err(BadName(s.to_owned()))
    }
}

macro_rules! token_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self, BadName> {
                let s = s.into();
                check_token(&s)?;
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = BadName;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::new(s).map_err(serde::de::Error::custom)
            }
        }
    };
}

token_newtype!(
    /// Classifies a payload, e.g. `Pedestrian-Track` or `Frame`.
    DataType
);
token_newtype!(
    /// Identity of a processing module; also the consumer group it reads with.
    ModuleId
);

use std::fmt;
use std::str::FromStr;

use postseal_core::{PublicKey, Timestamp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an account's private key lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Custody {
    /// The signer holds the private key and signs on the owner's behalf.
    TtpHeld,
    /// Only the public key is registered; the owner signs locally.
    ClientHeld,
}

impl fmt::Display for Custody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Custody::TtpHeld => "ttp-held",
            Custody::ClientHeld => "client-held",
        })
    }
}

impl FromStr for Custody {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ttp-held" => Ok(Custody::TtpHeld),
            "client-held" => Ok(Custody::ClientHeld),
            other => Err(format!(
                "unknown custody {other:?} (expected ttp-held or client-held)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    pub user_id: String,
    pub public_key: PublicKey,
    pub custody: Custody,
    pub created_at: Timestamp,
}

/// JSON shape of an account, shared by the account log and the HTTP API.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountView {
    pub user_id: String,
    pub public_key: String,
    pub custody: Custody,
    pub created_at: u64,
}

impl From<&Account> for AccountView {
    fn from(a: &Account) -> Self {
        Self {
            user_id: a.user_id.clone(),
            public_key: a.public_key.to_encoded(),
            custody: a.custody,
            created_at: a.created_at.0,
        }
    }
}

impl TryFrom<AccountView> for Account {
    type Error = Error;

    fn try_from(v: AccountView) -> Result<Self> {
        Ok(Self {
            public_key: PublicKey::from_encoded(&v.public_key)?,
            user_id: v.user_id,
            custody: v.custody,
            created_at: Timestamp(v.created_at),
        })
    }
}

/// Handles double as file names under `keys/`, so they are restricted to
/// `[A-Za-z0-9_.-]{1,64}` and may not start with `.` or `-`.
pub fn validate_user_id(user_id: &str) -> Result<()> {
    let ok_chars = user_id
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
    let ok_start = !user_id.starts_with(['.', '-']);
    if user_id.is_empty() || user_id.len() > 64 || !ok_chars || !ok_start {
        return Err(Error::InvalidInput(format!(
            "invalid user id {user_id:?}: use 1-64 characters from [A-Za-z0-9_.-], not starting with '.' or '-'"
        )));
    }
    Ok(())
}

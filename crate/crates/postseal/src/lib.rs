//! Persistence, evidence bundles, the signing service and the CLI for
//! signed micro-blog posts. The pure protocol lives in `postseal-core`.

pub mod account;
pub mod cli;
mod error;
pub mod evidence;
pub mod png_codec;
pub mod publisher;
pub mod service;
pub mod store;
pub mod ttp;

pub use postseal_core as core;

pub use crate::account::{Account, Custody};
pub use crate::error::{Error, Result};
pub use crate::evidence::EvidenceBundle;
pub use crate::store::{PostRecord, Query, Scheme, Status, Store};
pub use crate::ttp::{PostRequest, Ttp};

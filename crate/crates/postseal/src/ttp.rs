//! The signer: registers accounts, composes posts, persists them, then
//! forwards them to the publisher.
//!
//! Accounts in [`Custody::TtpHeld`] have their private key in the store and
//! are signed server-side. For [`Custody::ClientHeld`] accounts the caller
//! either passes the key to [`Ttp::post`] (local signing, as the CLI does)
//! or runs the detached flow in [`Ttp::client_step`], where the signer hands
//! out what to sign and checks what comes back.

use std::time::{SystemTime, UNIX_EPOCH};

use postseal_core::protocol::{
    compose_pictured_post_provable, compose_pictured_post_simple, compose_text_post,
    publish_images, stamp_images, text_digest, verify_pictured_post_provable,
    verify_pictured_post_simple, verify_text_post,
};
use postseal_core::{
    encode64, Digest, HashingMode, KeyCode, PrivateKey, PublicKey, RasterImage, SignatureSegment,
    Timestamp, VerificationResult,
};
use rand::RngCore;
use serde::Serialize;

use crate::account::{validate_user_id, Account, Custody};
use crate::error::{Error, Result};
use crate::png_codec::{decode_png, encode_png, PngEncoder};
use crate::publisher::{Delivery, Publisher};
use crate::store::{NewPost, PostRecord, Scheme, Store};

pub const DEFAULT_MAX_MESSAGE_LEN: usize = 4096;

#[derive(Clone, Debug)]
pub struct Config {
    /// Upper bound on message length in bytes.
    pub max_message_len: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            max_message_len: DEFAULT_MAX_MESSAGE_LEN,
        }
    }
}

pub fn now() -> Timestamp {
    Timestamp(
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    )
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub account: Account,
    /// Bearer token for the HTTP service. Only its digest is stored.
    pub token: String,
}

#[derive(Clone, Debug)]
pub struct PostRequest {
    pub user_id: String,
    pub scheme: Scheme,
    pub message: String,
    pub hashing_mode: HashingMode,
    /// Defaults to the current time.
    pub timestamp: Option<Timestamp>,
    /// PNG file bytes of the cover images.
    pub images: Vec<Vec<u8>>,
}

impl PostRequest {
    pub fn text(user_id: &str, message: &str) -> Self {
        Self {
            user_id: user_id.into(),
            scheme: Scheme::Text,
            message: message.into(),
            hashing_mode: HashingMode::Hashed,
            timestamp: None,
            images: vec![],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PostOutcome {
    pub record: PostRecord,
    /// External reference from the publisher, or why delivery failed. The
    /// record is persisted either way.
    pub delivery: std::result::Result<String, String>,
}

/// One value the client must sign with its private key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SigningItem {
    /// `text` or `image-<i>`.
    pub label: String,
    /// `sha256-digest`: sign the 32-byte digest with RSASSA-PKCS1-v1_5 and
    /// the SHA-256 DigestInfo prefix. `raw-message`: sign the bytes
    /// unprefixed (direct hashing mode).
    pub kind: String,
    /// base64url of the bytes to sign.
    pub data: String,
}

#[derive(Clone, Debug)]
pub enum ClientStep {
    /// Sign these and resubmit them, appended to any segments already sent,
    /// together with `timestamp`.
    Sign {
        timestamp: Timestamp,
        items: Vec<SigningItem>,
    },
    Done(PostOutcome),
}

pub struct Ttp {
    store: Store,
    publisher: Box<dyn Publisher>,
    config: Config,
}

impl Ttp {
    pub fn new(store: Store, publisher: Box<dyn Publisher>, config: Config) -> Self {
        Self {
            store,
            publisher,
            config,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Registers `user_id`. In ttp-held custody `private_key` is required
    /// and kept by the signer; in client-held custody it must be `None`.
    pub fn register(
        &self,
        user_id: &str,
        custody: Custody,
        public_key: &PublicKey,
        private_key: Option<&PrivateKey>,
    ) -> Result<Registration> {
        validate_user_id(user_id)?;
        match (custody, private_key) {
            (Custody::TtpHeld, None) => {
                return Err(Error::InvalidInput(
                    "ttp-held custody needs the private key".into(),
                ))
            }
            (Custody::ClientHeld, Some(_)) => {
                return Err(Error::InvalidInput(
                    "client-held custody must not hand over the private key".into(),
                ))
            }
            (Custody::TtpHeld, Some(k)) if &k.public_key() != public_key => {
                return Err(Error::InvalidInput(
                    "private key does not match the public key".into(),
                ))
            }
            _ => {}
        }
        if self.store.get_account(user_id)?.is_some() {
            return Err(Error::Conflict(format!(
                "user id {user_id:?} is already registered"
            )));
        }

        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = encode64(&raw);
        let account = Account {
            user_id: user_id.into(),
            public_key: public_key.clone(),
            custody,
            created_at: now(),
        };
        // The key goes in first so a ttp-held account never exists without
        // one. A leftover key from a failed registration blocks the id.
        if let Some(k) = private_key {
            self.store.put_private_key(user_id, k)?;
        }
        self.store
            .put_account(&account, Some(&Digest::of(token.as_bytes())))?;
        Ok(Registration { account, token })
    }

    fn account(&self, user_id: &str) -> Result<Account> {
        self.store
            .get_account(user_id)?
            .ok_or_else(|| Error::NotFound(format!("unknown account {user_id:?}")))
    }

    fn validate(&self, req: &PostRequest) -> Result<(Account, Timestamp, Vec<RasterImage>)> {
        if req.message.len() > self.config.max_message_len {
            return Err(Error::InvalidInput(format!(
                "message is {} bytes, limit is {}",
                req.message.len(),
                self.config.max_message_len
            )));
        }
        match req.scheme {
            Scheme::Text if !req.images.is_empty() => {
                return Err(Error::InvalidInput(
                    "text posts take no images; use a pictured scheme".into(),
                ))
            }
            Scheme::PicturedSimple | Scheme::PicturedProvable => {
                if req.images.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "scheme {} needs at least one image",
                        req.scheme
                    )));
                }
                if req.hashing_mode == HashingMode::Direct {
                    return Err(Error::InvalidInput(
                        "direct hashing mode applies to text posts only".into(),
                    ));
                }
            }
            _ => {}
        }
        let account = self.account(&req.user_id)?;
        let timestamp = req.timestamp.unwrap_or_else(now);
        if let Some(last) = self.store.last_timestamp(&req.user_id)? {
            if timestamp.0 < last {
                return Err(Error::Clock {
                    requested: timestamp.0,
                    last,
                });
            }
        }
        let covers = req
            .images
            .iter()
            .enumerate()
            .map(|(i, bytes)| {
                decode_png(bytes).map_err(|e| Error::InvalidInput(format!("image {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((account, timestamp, covers))
    }

    /// Signs and records a post. `key` is needed for client-held accounts
    /// and must match the registered public key; ttp-held accounts are
    /// signed with the stored key.
    pub fn post(&self, req: &PostRequest, key: Option<&PrivateKey>) -> Result<PostOutcome> {
        let (account, timestamp, covers) = self.validate(req)?;
        let stored;
        let key = match (account.custody, key) {
            (_, Some(k)) => {
                if k.public_key() != account.public_key {
                    return Err(Error::InvalidInput(format!(
                        "the supplied key is not {:?}'s registered key",
                        account.user_id
                    )));
                }
                k
            }
            (Custody::TtpHeld, None) => {
                stored = self.store.private_key(&account.user_id)?.ok_or_else(|| {
                    Error::NotFound(format!("no stored key for {:?}", account.user_id))
                })?;
                &stored
            }
            (Custody::ClientHeld, None) => return Err(Error::MissingKey(account.user_id)),
        };

        let (keycode, images) = match req.scheme {
            Scheme::Text => {
                let post = compose_text_post(key, &req.message, req.hashing_mode)?;
                (post.keycode, vec![])
            }
            Scheme::PicturedSimple => {
                let post = compose_pictured_post_simple(key, &req.message, &covers)?;
                let encoded = post.images.iter().map(encode_png).collect::<Result<_>>()?;
                (post.keycode, encoded)
            }
            Scheme::PicturedProvable => {
                let post = compose_pictured_post_provable(
                    key,
                    &req.message,
                    timestamp,
                    &covers,
                    &PngEncoder,
                )?;
                (
                    post.keycode,
                    post.images.into_iter().map(|i| i.encoded).collect(),
                )
            }
        };
        self.record(req, timestamp, &keycode, &images)
    }

    /// Detached signing for client-held keys. Call with the segments signed
    /// so far (initially none) and the same request each round; the
    /// timestamp from the first [`ClientStep::Sign`] must be resubmitted.
    pub fn client_step(
        &self,
        req: &PostRequest,
        segments: &[SignatureSegment],
    ) -> Result<ClientStep> {
        let (account, timestamp, covers) = self.validate(req)?;
        let provable = req.scheme == Scheme::PicturedProvable;
        let t_signed = provable.then_some(timestamp);

        if segments.is_empty() {
            let item = match req.hashing_mode {
                HashingMode::Hashed => SigningItem {
                    label: "text".into(),
                    kind: "sha256-digest".into(),
                    data: encode64(text_digest(&req.message, t_signed).as_bytes()),
                },
                HashingMode::Direct => SigningItem {
                    label: "text".into(),
                    kind: "raw-message".into(),
                    data: encode64(req.message.as_bytes()),
                },
            };
            return Ok(ClientStep::Sign {
                timestamp,
                items: vec![item],
            });
        }

        let expected = if provable { 1 + covers.len() } else { 1 };
        let text_segment = &segments[0];
        let (images, result) = match req.scheme {
            Scheme::Text if segments.len() == 1 => {
                let kc = KeyCode::new(segments.to_vec())?.render();
                (
                    vec![],
                    verify_text_post(&req.message, &kc, &account.public_key, req.hashing_mode),
                )
            }
            Scheme::PicturedSimple if segments.len() == 1 => {
                let stamped = stamp_images(text_segment, &covers)?;
                let kc = KeyCode::new(segments.to_vec())?.render();
                let result =
                    verify_pictured_post_simple(&req.message, &kc, &stamped, &account.public_key);
                let encoded = stamped.iter().map(encode_png).collect::<Result<_>>()?;
                (encoded, result)
            }
            Scheme::PicturedProvable if segments.len() == 1 => {
                let published = publish_images(text_segment, &covers, &PngEncoder)?;
                let items = published
                    .iter()
                    .enumerate()
                    .map(|(i, p)| SigningItem {
                        label: format!("image-{i}"),
                        kind: "sha256-digest".into(),
                        data: encode64(p.digest().as_bytes()),
                    })
                    .collect();
                return Ok(ClientStep::Sign { timestamp, items });
            }
            Scheme::PicturedProvable if segments.len() == expected => {
                let published = publish_images(text_segment, &covers, &PngEncoder)?;
                let kc = KeyCode::new(segments.to_vec())?.render();
                let result = verify_pictured_post_provable(
                    &req.message,
                    timestamp,
                    &kc,
                    &published,
                    &account.public_key,
                );
                (published.into_iter().map(|p| p.encoded).collect(), result)
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "expected {expected} segment(s) for this post, got {}",
                    segments.len()
                )))
            }
        };
        if !result.verdict {
            return Err(Error::BadSignature(describe_failures(&result)));
        }
        let keycode = KeyCode::new(segments.to_vec())?;
        Ok(ClientStep::Done(
            self.record(req, timestamp, &keycode, &images)?,
        ))
    }

    fn record(
        &self,
        req: &PostRequest,
        timestamp: Timestamp,
        keycode: &KeyCode,
        images: &[Vec<u8>],
    ) -> Result<PostOutcome> {
        let refs = images
            .iter()
            .map(|bytes| self.store.put_image(bytes))
            .collect::<Result<Vec<_>>>()?;
        let record = self.store.put_post(NewPost {
            user_id: req.user_id.clone(),
            scheme: req.scheme,
            hashing_mode: req.hashing_mode,
            message: req.message.clone(),
            timestamp,
            keycode: keycode.render(),
            images: refs,
        })?;

        let delivery = self
            .publisher
            .publish(&Delivery {
                post_id: &record.post_id,
                user_id: &record.user_id,
                message: &record.message,
                keycode: &record.keycode,
                images: &record.images,
            })
            .map_err(|e| e.to_string());
        let mut record = record;
        match &delivery {
            Ok(external_ref) => {
                self.store.record_delivery(&record.post_id, external_ref)?;
                record.external_ref = Some(external_ref.clone());
            }
            Err(e) => tracing::warn!(post_id = %record.post_id, "delivery failed: {e}"),
        }
        Ok(PostOutcome { record, delivery })
    }
}

fn describe_failures(result: &VerificationResult) -> String {
    let failed: Vec<_> = result
        .failed()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    format!("submitted segments do not verify ({})", failed.join("; "))
}

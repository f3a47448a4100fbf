//! Append-only persistence of accounts and posts.
//!
//! Layout of a store directory:
//!
//! ```text
//! accounts.jsonl      one account per line
//! posts.jsonl         post records and status events, one per line
//! images/<sha256>.png stamped images, named by the digest of their bytes
//! keys/<user_id>.key  base64url PKCS#8 private keys of ttp-held accounts
//! outbox.jsonl        deliveries of the mock publisher
//! LOCK                exclusive lock held while appending
//! ```
//!
//! Nothing is rewritten in place. Withdrawing a post appends a `withdraw`
//! event; the original `post` line stays byte-for-byte as written. Readers
//! never take the lock and only consume newline-terminated lines, so a
//! concurrent append is seen either whole or not at all.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use postseal_core::{Digest, HashingMode, PrivateKey, Timestamp};
use serde::{Deserialize, Serialize};

use crate::account::{validate_user_id, Account, AccountView};
use crate::error::{Error, Result};

pub const ACCOUNTS_LOG: &str = "accounts.jsonl";
pub const POSTS_LOG: &str = "posts.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const KEYS_DIR: &str = "keys";
pub const OUTBOX: &str = "outbox.jsonl";
const LOCK_FILE: &str = "LOCK";

/// Hex characters of the keycode digest used as a post id.
const POST_ID_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Text,
    PicturedSimple,
    PicturedProvable,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Text => "text",
            Scheme::PicturedSimple => "pictured-simple",
            Scheme::PicturedProvable => "pictured-provable",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(Scheme::Text),
            "pictured-simple" | "simple" => Ok(Scheme::PicturedSimple),
            "pictured-provable" | "provable" => Ok(Scheme::PicturedProvable),
            other => Err(format!(
                "unknown scheme {other:?} (expected text, pictured-simple or pictured-provable)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Published,
    Withdrawn,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    /// File name under `images/`.
    pub file: String,
    pub sha256: String,
}

impl ImageRef {
    pub fn for_bytes(bytes: &[u8]) -> Self {
        let sha256 = Digest::of(bytes).to_hex();
        Self {
            file: format!("{sha256}.png"),
            sha256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub user_id: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub hashing_mode: HashingMode,
    pub message: String,
    /// Signed into the key-code for provable posts; the posting time
    /// otherwise.
    pub timestamp: u64,
    pub keycode: String,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_ref: Option<String>,
}

/// Fields of a record before insertion; the store assigns id and status.
#[derive(Clone, Debug)]
pub struct NewPost {
    pub user_id: String,
    pub scheme: Scheme,
    pub hashing_mode: HashingMode,
    pub message: String,
    pub timestamp: Timestamp,
    pub keycode: String,
    pub images: Vec<ImageRef>,
}

pub fn post_id_for(keycode: &str) -> String {
    Digest::of(keycode.as_bytes()).to_hex()[..POST_ID_LEN].to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Query {
    pub user: Option<String>,
    /// Inclusive lower bound on the record timestamp.
    pub from: Option<u64>,
    /// Inclusive upper bound on the record timestamp.
    pub to: Option<u64>,
    /// Case-sensitive substring of the message.
    pub text: Option<String>,
}

impl Query {
    pub fn matches(&self, r: &PostRecord) -> bool {
        self.user.as_ref().is_none_or(|u| &r.user_id == u)
            && self.from.is_none_or(|f| r.timestamp >= f)
            && self.to.is_none_or(|t| r.timestamp <= t)
            && self
                .text
                .as_ref()
                .is_none_or(|q| r.message.contains(q.as_str()))
    }
}

#[derive(Serialize, Deserialize)]
struct AccountEntry {
    #[serde(flatten)]
    account: AccountView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PostEvent {
    Post(PostRecord),
    Withdraw {
        post_id: String,
        at: u64,
    },
    Delivered {
        post_id: String,
        external_ref: String,
    },
}

#[derive(Default)]
struct State {
    accounts: HashMap<String, (Account, Option<String>)>,
    posts: Vec<PostRecord>,
    by_id: HashMap<String, usize>,
    last_timestamp: HashMap<String, u64>,
    accounts_offset: u64,
    posts_offset: u64,
}

pub struct Store {
    root: PathBuf,
    state: Mutex<State>,
}

impl Store {
    /// Opens the store at `root`, creating the layout if needed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for dir in [root.clone(), root.join(IMAGES_DIR), root.join(KEYS_DIR)] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for log in [ACCOUNTS_LOG, POSTS_LOG] {
            let path = root.join(log);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
        }
        let store = Self {
            root,
            state: Mutex::new(State::default()),
        };
        drop(store.refreshed()?);
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn refreshed(&self) -> Result<MutexGuard<'_, State>> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        self.refresh(&mut state)?;
        Ok(state)
    }

    fn refresh(&self, state: &mut State) -> Result<()> {
        let path = self.root.join(ACCOUNTS_LOG);
        let (lines, consumed) = read_new_lines(&path, state.accounts_offset)?;
        for (n, line) in lines.iter().enumerate() {
            let entry: AccountEntry = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{} entry {n}", path.display()), e))?;
            let account = Account::try_from(entry.account)?;
            state
                .accounts
                .insert(account.user_id.clone(), (account, entry.token_sha256));
        }
        state.accounts_offset += consumed;

        let path = self.root.join(POSTS_LOG);
        let (lines, consumed) = read_new_lines(&path, state.posts_offset)?;
        for (n, line) in lines.iter().enumerate() {
            let event: PostEvent = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{} entry {n}", path.display()), e))?;
            match event {
                PostEvent::Post(record) => {
                    let last = state
                        .last_timestamp
                        .entry(record.user_id.clone())
                        .or_default();
                    *last = (*last).max(record.timestamp);
                    state
                        .by_id
                        .insert(record.post_id.clone(), state.posts.len());
                    state.posts.push(record);
                }
                PostEvent::Withdraw { post_id, .. } => {
                    if let Some(&i) = state.by_id.get(&post_id) {
                        state.posts[i].status = Status::Withdrawn;
                    }
                }
                PostEvent::Delivered {
                    post_id,
                    external_ref,
                } => {
                    if let Some(&i) = state.by_id.get(&post_id) {
                        state.posts[i].external_ref = Some(external_ref);
                    }
                }
            }
        }
        state.posts_offset += consumed;
        Ok(())
    }

    /// Runs `f` holding the cross-process writer lock, on fresh state.
    fn write<T>(&self, f: impl FnOnce(&Self, &mut State) -> Result<T>) -> Result<T> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let lock_path = self.root.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        lock.lock().map_err(|e| Error::io(&lock_path, e))?;
        self.refresh(&mut state)?;
        let out = f(self, &mut state);
        // Pick up our own appends.
        let refreshed = self.refresh(&mut state);
        drop(lock);
        let out = out?;
        refreshed?;
        Ok(out)
    }

    fn append_line(&self, log: &str, value: &impl Serialize) -> Result<()> {
        let path = self.root.join(log);
        let mut line =
            serde_json::to_vec(value).map_err(|e| Error::json("serializing entry", e))?;
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(&line).map_err(|e| Error::io(&path, e))?;
        file.sync_data().map_err(|e| Error::io(&path, e))
    }

    pub fn put_account(&self, account: &Account, token_digest: Option<&Digest>) -> Result<()> {
        validate_user_id(&account.user_id)?;
        self.write(|store, state| {
            if state.accounts.contains_key(&account.user_id) {
                return Err(Error::Conflict(format!(
                    "user id {:?} is already registered",
                    account.user_id
                )));
            }
            store.append_line(
                ACCOUNTS_LOG,
                &AccountEntry {
                    account: account.into(),
                    token_sha256: token_digest.map(Digest::to_hex),
                },
            )
        })
    }

    pub fn get_account(&self, user_id: &str) -> Result<Option<Account>> {
        Ok(self
            .refreshed()?
            .accounts
            .get(user_id)
            .map(|(a, _)| a.clone()))
    }

    pub fn accounts(&self) -> Result<Vec<Account>> {
        let state = self.refreshed()?;
        let mut out: Vec<_> = state.accounts.values().map(|(a, _)| a.clone()).collect();
        out.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        Ok(out)
    }

    /// True iff `token` is the bearer token issued to `user_id`.
    pub fn check_token(&self, user_id: &str, token: &str) -> Result<bool> {
        let state = self.refreshed()?;
        Ok(match state.accounts.get(user_id) {
            Some((_, Some(expected))) => *expected == Digest::of(token.as_bytes()).to_hex(),
            _ => false,
        })
    }

    fn key_path(&self, user_id: &str) -> Result<PathBuf> {
        validate_user_id(user_id)?;
        Ok(self.root.join(KEYS_DIR).join(format!("{user_id}.key")))
    }

    pub fn put_private_key(&self, user_id: &str, key: &PrivateKey) -> Result<()> {
        let path = self.key_path(user_id)?;
        let mut options = OpenOptions::new();
        options.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        let mut file = options.open(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(key.to_encoded().as_bytes())
            .and_then(|_| file.sync_all())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn private_key(&self, user_id: &str) -> Result<Option<PrivateKey>> {
        let path = self.key_path(user_id)?;
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(PrivateKey::from_encoded(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Stores image bytes under their digest. Idempotent.
    pub fn put_image(&self, bytes: &[u8]) -> Result<ImageRef> {
        let image = ImageRef::for_bytes(bytes);
        let path = self.root.join(IMAGES_DIR).join(&image.file);
        if !path.exists() {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(image)
    }

    pub fn image_bytes(&self, image: &ImageRef) -> Result<Vec<u8>> {
        let path = self.root.join(IMAGES_DIR).join(&image.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if Digest::of(&bytes).to_hex() != image.sha256 {
            return Err(Error::InvalidInput(format!(
                "{} does not match its recorded digest",
                path.display()
            )));
        }
        Ok(bytes)
    }

    /// Appends a new post. Fails if the account is unknown, the key-code is
    /// already recorded, or the timestamp is older than the account's last
    /// post.
    pub fn put_post(&self, post: NewPost) -> Result<PostRecord> {
        self.write(|store, state| {
            if !state.accounts.contains_key(&post.user_id) {
                return Err(Error::NotFound(format!(
                    "unknown account {:?}",
                    post.user_id
                )));
            }
            if let Some(&last) = state.last_timestamp.get(&post.user_id) {
                if post.timestamp.0 < last {
                    return Err(Error::Clock {
                        requested: post.timestamp.0,
                        last,
                    });
                }
            }
            let post_id = post_id_for(&post.keycode);
            if let Some(&i) = state.by_id.get(&post_id) {
                return Err(Error::Conflict(if state.posts[i].keycode == post.keycode {
                    format!("this key-code is already recorded as post {post_id}")
                } else {
                    format!("post id collision on {post_id}")
                }));
            }
            let record = PostRecord {
                post_id,
                user_id: post.user_id,
                scheme: post.scheme,
                hashing_mode: post.hashing_mode,
                message: post.message,
                timestamp: post.timestamp.0,
                keycode: post.keycode,
                images: post.images,
                status: Status::Published,
                external_ref: None,
            };
            store.append_line(POSTS_LOG, &PostEvent::Post(record.clone()))?;
            Ok(record)
        })
    }

    pub fn get_post(&self, post_id: &str) -> Result<Option<PostRecord>> {
        let state = self.refreshed()?;
        Ok(state.by_id.get(post_id).map(|&i| state.posts[i].clone()))
    }

    pub fn last_timestamp(&self, user_id: &str) -> Result<Option<u64>> {
        Ok(self.refreshed()?.last_timestamp.get(user_id).copied())
    }

    /// Conjunctive filter, newest first; ties keep reverse insertion order.
    pub fn search(&self, query: &Query) -> Result<Vec<PostRecord>> {
        let state = self.refreshed()?;
        let mut hits: Vec<(usize, &PostRecord)> = state
            .posts
            .iter()
            .enumerate()
            .filter(|(_, r)| query.matches(r))
            .collect();
        hits.sort_by(|(ia, a), (ib, b)| b.timestamp.cmp(&a.timestamp).then(ib.cmp(ia)));
        Ok(hits.into_iter().map(|(_, r)| r.clone()).collect())
    }

    /// Marks a post withdrawn. Its evidence stays retrievable. Withdrawing
    /// twice is a no-op.
    pub fn withdraw(&self, post_id: &str, at: Timestamp) -> Result<PostRecord> {
        self.write(|store, state| {
            let i = *state
                .by_id
                .get(post_id)
                .ok_or_else(|| Error::NotFound(format!("unknown post {post_id:?}")))?;
            if state.posts[i].status == Status::Published {
                store.append_line(
                    POSTS_LOG,
                    &PostEvent::Withdraw {
                        post_id: post_id.to_string(),
                        at: at.0,
                    },
                )?;
            }
            Ok(())
        })?;
        self.get_post(post_id)?
            .ok_or_else(|| Error::NotFound(format!("unknown post {post_id:?}")))
    }

    pub fn record_delivery(&self, post_id: &str, external_ref: &str) -> Result<()> {
        self.write(|store, state| {
            if !state.by_id.contains_key(post_id) {
                return Err(Error::NotFound(format!("unknown post {post_id:?}")));
            }
            store.append_line(
                POSTS_LOG,
                &PostEvent::Delivered {
                    post_id: post_id.to_string(),
                    external_ref: external_ref.to_string(),
                },
            )
        })
    }
}

/// Reads complete lines appended after `offset`. Returns them and the number
/// of bytes they span.
fn read_new_lines(path: &Path, offset: u64) -> Result<(Vec<String>, u64)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    file.seek(SeekFrom::Start(offset))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let complete = buf.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let text = std::str::from_utf8(&buf[..complete])
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    Ok((lines, complete as u64))
}

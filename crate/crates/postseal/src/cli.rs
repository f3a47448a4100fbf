//! `postseal` command line.
//!
//! Exit codes: 0 success (or verified), 1 verification failed, 2 usage or
//! IO error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use postseal_core::crypto::DEFAULT_MODULUS_BITS;
use postseal_core::{HashingMode, KeyPair, PrivateKey, PublicKey, Timestamp, VerificationResult};

use crate::account::Custody;
use crate::error::{Error, Result};
use crate::evidence::EvidenceBundle;
use crate::publisher::OutboxPublisher;
use crate::store::{Query, Scheme, Store, OUTBOX};
use crate::ttp::{self, Config, PostRequest, Ttp};

pub const PRIVATE_KEY_FILE: &str = "private_key.b64";
pub const PUBLIC_KEY_FILE: &str = "public_key.b64";

pub const EXIT_OK: u8 = 0;
pub const EXIT_UNVERIFIED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "postseal",
    version,
    about = "Sign, publish and verify micro-blog posts"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct StoreArg {
    /// Store directory.
    #[arg(long, env = "POSTSEAL_STORE", default_value = "postseal-store")]
    store: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an RSA key pair.
    Keygen {
        #[arg(long, default_value_t = DEFAULT_MODULUS_BITS)]
        bits: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing key files.
        #[arg(long)]
        force: bool,
    },
    /// Register an account in the store.
    Register {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "ttp-held")]
        custody: Custody,
        /// Key directory or private key file. Ttp-held without a key
        /// generates one.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Public key file, for client-held accounts.
        #[arg(long, conflicts_with = "key")]
        public_key: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MODULUS_BITS)]
        bits: usize,
    },
    /// Sign and record a post, then write its evidence bundle.
    Post {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        user: String,
        #[arg(long)]
        message: String,
        /// PNG file to attach; repeat for several.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        /// text, pictured-simple or pictured-provable. Defaults to text,
        /// or pictured-provable when images are given.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Unix seconds; defaults to now.
        #[arg(long)]
        timestamp: Option<u64>,
        #[arg(long, default_value = "hashed")]
        hashing: HashingMode,
        /// Key directory or private key file (client-held accounts).
        #[arg(long)]
        key: Option<PathBuf>,
        /// Evidence directory; defaults to <store>/evidence/<post_id>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify an evidence bundle offline.
    Verify {
        /// Bundle directory or its evidence.json.
        #[arg(long)]
        bundle: PathBuf,
        /// Override a bundle field before verifying, e.g. message=text.
        #[arg(long = "set", value_name = "FIELD=VALUE")]
        set: Vec<String>,
        /// Print the verification result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Search recorded posts.
    Search {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Substring of the message.
        #[arg(long)]
        q: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Mark a post withdrawn; its evidence is kept.
    Withdraw {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        post: String,
    },
    /// Export the evidence bundle of a recorded post.
    Evidence {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        post: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Allow cross-origin requests (for a browser client on another
        /// origin).
        #[arg(long)]
        cors: bool,
        #[arg(long, default_value_t = ttp::DEFAULT_MAX_MESSAGE_LEN)]
        max_message_len: usize,
    },
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn open_ttp(store: &Path, config: Config) -> Result<Ttp> {
    let store = Store::open(store)?;
    let outbox = OutboxPublisher::new(store.root().join(OUTBOX));
    Ok(Ttp::new(store, Box::new(outbox), config))
}

/// Accepts a key directory (holding `private_key.b64`) or the file itself.
fn read_private_key(path: &Path) -> Result<PrivateKey> {
    let file = if path.is_dir() {
        path.join(PRIVATE_KEY_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Ok(PrivateKey::from_encoded(&text)?)
}

fn read_public_key(path: &Path) -> Result<PublicKey> {
    let file = if path.is_dir() {
        path.join(PUBLIC_KEY_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Ok(PublicKey::from_encoded(&text)?)
}

fn execute(command: Command) -> Result<u8> {
    let mut out = std::io::stdout().lock();
    let w = |e| Error::io("<stdout>", e);
    match command {
        Command::Keygen {
            bits,
            out: dir,
            force,
        } => {
            let private = dir.join(PRIVATE_KEY_FILE);
            let public = dir.join(PUBLIC_KEY_FILE);
            if !force && (private.exists() || public.exists()) {
                return Err(Error::Conflict(format!(
                    "{} already holds key files; pass --force to overwrite",
                    dir.display()
                )));
            }
            let pair = KeyPair::generate(&mut rand::rngs::OsRng, bits)?;
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_secret(&private, &pair.private_key().to_encoded())?;
            fs::write(&public, pair.public_key().to_encoded() + "\n")
                .map_err(|e| Error::io(&public, e))?;
            writeln!(out, "private: {}", private.display()).map_err(w)?;
            writeln!(out, "public: {}", public.display()).map_err(w)?;
            writeln!(out, "bits: {bits}").map_err(w)?;
        }

        Command::Register {
            store,
            user,
            custody,
            key,
            public_key,
            bits,
        } => {
            let ttp = open_ttp(&store.store, Config::default())?;
            let reg = match custody {
                Custody::TtpHeld => {
                    if public_key.is_some() {
                        return Err(Error::InvalidInput(
                            "ttp-held registration needs a private key, not --public-key".into(),
                        ));
                    }
                    let private = match key {
                        Some(path) => read_private_key(&path)?,
                        None => KeyPair::generate(&mut rand::rngs::OsRng, bits)?.into_private(),
                    };
                    ttp.register(&user, custody, &private.public_key(), Some(&private))?
                }
                Custody::ClientHeld => {
                    let public = match (key, public_key) {
                        (Some(path), _) => read_private_key(&path)?.public_key(),
                        (None, Some(path)) => read_public_key(&path)?,
                        (None, None) => {
                            return Err(Error::InvalidInput(
                                "client-held registration needs --key or --public-key".into(),
                            ))
                        }
                    };
                    ttp.register(&user, custody, &public, None)?
                }
            };
            writeln!(out, "user: {}", reg.account.user_id).map_err(w)?;
            writeln!(out, "custody: {}", reg.account.custody).map_err(w)?;
            writeln!(out, "public_key: {}", reg.account.public_key.to_encoded()).map_err(w)?;
            writeln!(out, "token: {}", reg.token).map_err(w)?;
        }

        Command::Post {
            store,
            user,
            message,
            images,
            scheme,
            timestamp,
            hashing,
            key,
            out: evidence_dir,
        } => {
            let ttp = open_ttp(&store.store, Config::default())?;
            let scheme = scheme.unwrap_or(if images.is_empty() {
                Scheme::Text
            } else {
                Scheme::PicturedProvable
            });
            let images = images
                .iter()
                .map(|p| fs::read(p).map_err(|e| Error::io(p, e)))
                .collect::<Result<Vec<_>>>()?;
            let key = key.as_deref().map(read_private_key).transpose()?;
            let req = PostRequest {
                user_id: user,
                scheme,
                message,
                hashing_mode: hashing,
                timestamp: timestamp.map(Timestamp),
                images,
            };
            let outcome = ttp.post(&req, key.as_ref())?;
            let record = &outcome.record;
            let bundle = EvidenceBundle::from_store(ttp.store(), record)?;
            let dir = evidence_dir
                .unwrap_or_else(|| ttp.store().root().join("evidence").join(&record.post_id));
            let path = bundle.write_dir(&dir)?;
            let segments = record.keycode.split('.').count();
            writeln!(out, "post_id: {}", record.post_id).map_err(w)?;
            writeln!(out, "keycode: {}", record.keycode).map_err(w)?;
            writeln!(out, "segments: {segments}").map_err(w)?;
            writeln!(out, "evidence: {}", path.display()).map_err(w)?;
            match &outcome.delivery {
                Ok(r) => writeln!(out, "delivery: {r}").map_err(w)?,
                Err(e) => writeln!(out, "delivery: failed ({e})").map_err(w)?,
            }
        }

        Command::Verify { bundle, set, json } => {
            let (mut b, base) = EvidenceBundle::read(&bundle)?;
            for assignment in &set {
                apply_override(&mut b, assignment)?;
            }
            let result = b.verify(Some(&base));
            if json {
                let text = serde_json::to_string_pretty(&result)
                    .map_err(|e| Error::json("verification result", e))?;
                writeln!(out, "{text}").map_err(w)?;
            } else {
                write_result(&mut out, &result).map_err(w)?;
            }
            return Ok(if result.verdict {
                EXIT_OK
            } else {
                EXIT_UNVERIFIED
            });
        }

        Command::Search {
            store,
            user,
            from,
            to,
            q,
            json,
        } => {
            let store = Store::open(&store.store)?;
            let hits = store.search(&Query {
                user,
                from,
                to,
                text: q,
            })?;
            if json {
                let text = serde_json::to_string_pretty(&hits)
                    .map_err(|e| Error::json("search results", e))?;
                writeln!(out, "{text}").map_err(w)?;
            } else {
                for r in &hits {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.post_id,
                        r.timestamp,
                        r.user_id,
                        r.scheme,
                        serde_json::to_value(r.status)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                        r.message.escape_debug()
                    )
                    .map_err(w)?;
                }
            }
        }

        Command::Withdraw { store, post } => {
            let store = Store::open(&store.store)?;
            let record = store.withdraw(&post, ttp::now())?;
            writeln!(out, "post_id: {}", record.post_id).map_err(w)?;
            writeln!(out, "status: withdrawn").map_err(w)?;
        }

        Command::Evidence {
            store,
            post,
            out: dir,
        } => {
            let store = Store::open(&store.store)?;
            let record = store
                .get_post(&post)?
                .ok_or_else(|| Error::NotFound(format!("unknown post {post:?}")))?;
            let path = EvidenceBundle::from_store(&store, &record)?.write_dir(&dir)?;
            writeln!(out, "evidence: {}", path.display()).map_err(w)?;
        }

        Command::Serve {
            store,
            addr,
            cors,
            max_message_len,
        } => {
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .try_init();
            let ttp = Arc::new(open_ttp(&store.store, Config { max_message_len })?);
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .map_err(|e| Error::io(&addr, e))?;
                crate::service::serve(listener, ttp, cors)
                    .await
                    .map_err(|e| Error::io(&addr, e))
            })?;
        }
    }
    Ok(EXIT_OK)
}

fn write_secret(path: &Path, text: &str) -> Result<()> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut f = options.open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

fn apply_override(bundle: &mut EvidenceBundle, assignment: &str) -> Result<()> {
    let (field, value) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidInput(format!("--set expects FIELD=VALUE, got {assignment:?}"))
    })?;
    let bad = |e: String| Error::InvalidInput(format!("--set {field}: {e}"));
    match field {
        "message" => bundle.message = value.to_string(),
        "user_id" => bundle.user_id = value.to_string(),
        "keycode" => bundle.keycode = value.to_string(),
        "public_key" => bundle.public_key = value.to_string(),
        "scheme" => bundle.scheme = value.parse().map_err(bad)?,
        "hashing_mode" => bundle.hashing_mode = value.parse().map_err(bad)?,
        "timestamp" if value.is_empty() => bundle.timestamp = None,
        "timestamp" => {
            bundle.timestamp = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?)
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "--set: unknown field {other:?} (message, timestamp, keycode, public_key, user_id, scheme, hashing_mode)"
            )))
        }
    }
    Ok(())
}

fn write_result(out: &mut impl Write, result: &VerificationResult) -> std::io::Result<()> {
    let width = result
        .checks
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(0);
    for c in &result.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{mark}  {:width$}  {}", c.name, c.detail)?;
    }
    writeln!(
        out,
        "verdict: {}",
        if result.verdict { "verified" } else { "FAILED" }
    )
}

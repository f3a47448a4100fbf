//! HTTP+JSON front end of the signer.
//!
//! | method | path                     | purpose                              |
//! |--------|--------------------------|--------------------------------------|
//! | POST   | `/accounts`              | register, returns a bearer token     |
//! | GET    | `/accounts/{id}`         | public account data                  |
//! | POST   | `/posts`                 | compose and record a post (auth)     |
//! | GET    | `/posts?user&from&to&q`  | search                               |
//! | GET    | `/posts/{id}`            | one record                           |
//! | GET    | `/posts/{id}/evidence`   | evidence bundle, images inline       |
//! | POST   | `/posts/{id}/withdraw`   | withdraw (auth)                      |
//! | POST   | `/verify`                | verify a bundle; stateless           |
//!
//! Binary values are base64url. Errors are `{"error": "...", "image_index": n?}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{
    DefaultBodyLimit, FromRequest, Multipart, Path, Query as QueryParams, Request, State,
};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use postseal_core::{decode64, KeyPair, PublicKey, SignatureSegment, VerificationResult};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::account::{AccountView, Custody};
use crate::error::Error;
use crate::evidence::EvidenceBundle;
use crate::store::{PostRecord, Query, Scheme};
use crate::ttp::{ClientStep, PostOutcome, PostRequest, SigningItem, Ttp};

/// Request bodies (multipart included) above this are refused.
pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

pub struct ApiError {
    status: StatusCode,
    message: String,
    image_index: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            image_index: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use postseal_core::Error as Core;
        let status = match &e {
            Error::Conflict(_) | Error::Clock { .. } => StatusCode::CONFLICT,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            Error::InvalidInput(_) | Error::Png(_) | Error::MissingKey(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::BadSignature(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Core(
                Core::ImageCapacity { .. } | Core::Capacity { .. } | Core::DirectModeTooLong { .. },
            ) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Core(_) => StatusCode::BAD_REQUEST,
            Error::Io { .. } | Error::Json { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let image_index = match &e {
            Error::Core(Core::ImageCapacity { index, .. } | Core::ImageEncoding { index, .. }) => {
                Some(*index)
            }
            _ => None,
        };
        if status.is_server_error() {
            tracing::error!("{e}");
        }
        Self {
            status,
            message: e.to_string(),
            image_index,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(i) = self.image_index {
            body["image_index"] = json!(i);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

type AppState = Arc<Ttp>;

pub fn router(ttp: Arc<Ttp>) -> Router {
    Router::new()
        .route("/accounts", post(create_account))
        .route("/accounts/{id}", get(get_account))
        .route("/posts", post(create_post).get(search_posts))
        .route("/posts/{id}", get(get_post))
        .route("/posts/{id}/evidence", get(get_evidence))
        .route("/posts/{id}/withdraw", post(withdraw_post))
        .route("/verify", post(verify))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(ttp)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, ttp: Arc<Ttp>, cors: bool) -> std::io::Result<()> {
    let mut app = router(ttp).layer(tower_http::trace::TraceLayer::new_for_http());
    if cors {
        app = app.layer(tower_http::cors::CorsLayer::permissive());
    }
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(
        listener,
        app.into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8], what: &str) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed {what}: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn authorize(ttp: &Ttp, headers: &HeaderMap, user_id: &str) -> ApiResult<()> {
    let token = bearer(headers)
        .ok_or_else(|| ApiError::from(Error::Unauthorized("missing bearer token".into())))?;
    if ttp.store().check_token(user_id, token)? {
        Ok(())
    } else {
        Err(Error::Unauthorized(format!("token is not valid for {user_id:?}")).into())
    }
}

#[derive(Deserialize)]
struct CreateAccount {
    user_id: String,
    custody: Custody,
    #[serde(default)]
    public_key: Option<String>,
    #[serde(default)]
    bits: Option<usize>,
}

#[derive(Serialize)]
struct AccountCreated {
    account: AccountView,
    token: String,
    /// One-time copy of a server-generated private key (ttp-held only).
    #[serde(skip_serializing_if = "Option::is_none")]
    private_key: Option<String>,
}

async fn create_account(State(ttp): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateAccount = parse_json(&body, "account request")?;
    blocking(move || {
        let created = match req.custody {
            Custody::TtpHeld => {
                if req.public_key.is_some() {
                    return Err(ApiError::bad_request(
                        "ttp-held accounts get a server-generated key; omit public_key",
                    ));
                }
                let bits = req
                    .bits
                    .unwrap_or(postseal_core::crypto::DEFAULT_MODULUS_BITS);
                let pair = KeyPair::generate(&mut rand::rngs::OsRng, bits).map_err(Error::from)?;
                let reg = ttp.register(
                    &req.user_id,
                    Custody::TtpHeld,
                    pair.public_key(),
                    Some(pair.private_key()),
                )?;
                AccountCreated {
                    account: (&reg.account).into(),
                    token: reg.token,
                    private_key: Some(pair.private_key().to_encoded()),
                }
            }
            Custody::ClientHeld => {
                let encoded = req.public_key.ok_or_else(|| {
                    ApiError::bad_request("client-held accounts must supply public_key")
                })?;
                let public_key = PublicKey::from_encoded(&encoded).map_err(Error::from)?;
                let reg = ttp.register(&req.user_id, Custody::ClientHeld, &public_key, None)?;
                AccountCreated {
                    account: (&reg.account).into(),
                    token: reg.token,
                    private_key: None,
                }
            }
        };
        Ok((StatusCode::CREATED, Json(created)).into_response())
    })
    .await
}

async fn get_account(
    State(ttp): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<AccountView>> {
    let account = ttp
        .store()
        .get_account(&id)?
        .ok_or_else(|| Error::NotFound(format!("unknown account {id:?}")))?;
    Ok(Json((&account).into()))
}

#[derive(Deserialize)]
struct CreatePost {
    user_id: String,
    scheme: Scheme,
    message: String,
    #[serde(default)]
    hashing_mode: postseal_core::HashingMode,
    #[serde(default)]
    timestamp: Option<u64>,
    /// base64url PNG bytes; multipart requests send files instead.
    #[serde(default)]
    images: Vec<String>,
    /// base64url signature segments (client-held detached flow).
    #[serde(default)]
    segments: Option<Vec<String>>,
}

#[derive(Serialize)]
struct PostCreated {
    post: PostRecord,
    keycode: String,
    evidence_url: String,
    delivered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    delivery_error: Option<String>,
}

impl From<PostOutcome> for PostCreated {
    fn from(o: PostOutcome) -> Self {
        Self {
            keycode: o.record.keycode.clone(),
            evidence_url: format!("/posts/{}/evidence", o.record.post_id),
            delivered: o.delivery.is_ok(),
            delivery_error: o.delivery.err(),
            post: o.record,
        }
    }
}

#[derive(Serialize)]
struct SigningRequired {
    status: &'static str,
    timestamp: u64,
    items: Vec<SigningItem>,
}

/// Accepts either a JSON body, or multipart with a `meta` JSON part and
/// `image` file parts in order.
async fn read_post_request(req: Request) -> ApiResult<CreatePost> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        return parse_json(&body, "post request");
    }

    let mut multipart = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut meta: Option<CreatePost> = None;
    let mut images = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        match name.as_str() {
            "meta" => meta = Some(parse_json(&data, "meta part")?),
            "image" => images.push(postseal_core::encode64(&data)),
            other => {
                return Err(ApiError::bad_request(format!(
                    "unexpected multipart field {other:?}"
                )))
            }
        }
    }
    let mut meta =
        meta.ok_or_else(|| ApiError::bad_request("multipart request lacks a meta part"))?;
    if !meta.images.is_empty() && !images.is_empty() {
        return Err(ApiError::bad_request(
            "send images either inline or as parts, not both",
        ));
    }
    meta.images.extend(images);
    Ok(meta)
}

async fn create_post(State(ttp): State<AppState>, request: Request) -> ApiResult<Response> {
    let headers = request.headers().clone();
    let body = read_post_request(request).await?;
    blocking(move || {
        let account = ttp
            .store()
            .get_account(&body.user_id)?
            .ok_or_else(|| Error::NotFound(format!("unknown account {:?}", body.user_id)))?;
        authorize(&ttp, &headers, &account.user_id)?;

        let images = body
            .images
            .iter()
            .enumerate()
            .map(|(i, b)| decode64(b).map_err(|e| ApiError::bad_request(format!("image {i}: {e}"))))
            .collect::<ApiResult<Vec<_>>>()?;
        let req = PostRequest {
            user_id: body.user_id,
            scheme: body.scheme,
            message: body.message,
            hashing_mode: body.hashing_mode,
            timestamp: body.timestamp.map(postseal_core::Timestamp),
            images,
        };

        let outcome = match (account.custody, body.segments) {
            (Custody::TtpHeld, None) => ttp.post(&req, None)?,
            (Custody::TtpHeld, Some(_)) => {
                return Err(ApiError::bad_request(
                    "ttp-held accounts are signed server-side; omit segments",
                ))
            }
            (Custody::ClientHeld, segments) => {
                let segments = segments
                    .unwrap_or_default()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        decode64(s)
                            .map(SignatureSegment::from_bytes)
                            .map_err(|e| ApiError::bad_request(format!("segment {}: {e}", i + 1)))
                    })
                    .collect::<ApiResult<Vec<_>>>()?;
                match ttp.client_step(&req, &segments)? {
                    ClientStep::Sign { timestamp, items } => {
                        let body = SigningRequired {
                            status: "signature-required",
                            timestamp: timestamp.0,
                            items,
                        };
                        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
                    }
                    ClientStep::Done(outcome) => outcome,
                }
            }
        };
        Ok((StatusCode::CREATED, Json(PostCreated::from(outcome))).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct SearchParams {
    user: Option<String>,
    from: Option<u64>,
    to: Option<u64>,
    q: Option<String>,
}

async fn search_posts(
    State(ttp): State<AppState>,
    QueryParams(p): QueryParams<SearchParams>,
) -> ApiResult<Json<Vec<PostRecord>>> {
    let query = Query {
        user: p.user.filter(|s| !s.is_empty()),
        from: p.from,
        to: p.to,
        text: p.q.filter(|s| !s.is_empty()),
    };
    Ok(Json(ttp.store().search(&query)?))
}

fn find_post(ttp: &Ttp, id: &str) -> ApiResult<PostRecord> {
    Ok(ttp
        .store()
        .get_post(id)?
        .ok_or_else(|| Error::NotFound(format!("unknown post {id:?}")))?)
}

async fn get_post(
    State(ttp): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<PostRecord>> {
    Ok(Json(find_post(&ttp, &id)?))
}

async fn get_evidence(
    State(ttp): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<EvidenceBundle>> {
    blocking(move || {
        let record = find_post(&ttp, &id)?;
        Ok(Json(EvidenceBundle::from_store(ttp.store(), &record)?))
    })
    .await
}

async fn withdraw_post(
    State(ttp): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<PostRecord>> {
    blocking(move || {
        let record = find_post(&ttp, &id)?;
        authorize(&ttp, &headers, &record.user_id)?;
        Ok(Json(ttp.store().withdraw(&id, crate::ttp::now())?))
    })
    .await
}

/// Pure function of the request body.
async fn verify(body: Bytes) -> ApiResult<Json<VerificationResult>> {
    let bundle: EvidenceBundle = parse_json(&body, "evidence bundle")?;
    blocking(move || Ok(Json(bundle.verify(None)))).await
}

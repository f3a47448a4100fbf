mod common;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use postseal::core::{decode64, encode64, Digest, SignatureSegment};
use postseal::publisher::{FailingPublisher, OutboxPublisher};
use postseal::service::router;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{cover_png, keys, ttp_with};

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let outbox = OutboxPublisher::new(dir.path().join("outbox.jsonl"));
        let app = router(ttp_with(dir.path(), Box::new(outbox)));
        Self { app, _dir: dir }
    }

    fn failing() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let app = router(ttp_with(
            dir.path(),
            Box::new(FailingPublisher("micro-blog unreachable".into())),
        ));
        Self { app, _dir: dir }
    }

    async fn send(&self, request: Request<Body>) -> (StatusCode, Value) {
        let response = self.app.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    async fn json(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Value,
    ) -> (StatusCode, Value) {
        let mut builder = Request::builder()
            .method(method)
            .uri(uri)
            .header(header::CONTENT_TYPE, "application/json");
        if let Some(t) = token {
            builder = builder.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        self.send(builder.body(Body::from(body.to_string())).unwrap())
            .await
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.send(Request::get(uri).body(Body::empty()).unwrap())
            .await
    }

    async fn raw(&self, method: Method, uri: &str, body: &str) -> (StatusCode, Value) {
        self.send(
            Request::builder()
                .method(method)
                .uri(uri)
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
    }

    /// Registers a ttp-held account and returns its token.
    async fn register(&self, user: &str) -> String {
        let (status, body) = self
            .json(
                Method::POST,
                "/accounts",
                None,
                json!({"user_id": user, "custody": "ttp-held"}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["token"].as_str().unwrap().to_string()
    }

    async fn post(&self, token: &str, body: Value) -> (StatusCode, Value) {
        self.json(Method::POST, "/posts", Some(token), body).await
    }
}

fn segments(keycode: &Value) -> usize {
    keycode.as_str().unwrap().split('.').count()
}

#[tokio::test]
async fn account_lifecycle() {
    let api = Api::new();
    let (status, body) = api
        .json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "alice", "custody": "ttp-held"}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["account"]["user_id"], "alice");
    assert_eq!(body["account"]["custody"], "ttp-held");
    assert!(body["private_key"].is_string());
    assert!(body["token"].is_string());

    let (status, fetched) = api.get("/accounts/alice").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, body["account"]);

    let (status, _) = api
        .json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "alice", "custody": "ttp-held"}),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, body) = api
        .json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "bob", "custody": "client-held"}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let pk = keys()[0].public_key().to_encoded();
    let (status, body) = api
        .json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "bob", "custody": "client-held", "public_key": pk}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(body.get("private_key").is_none());
    assert_eq!(body["account"]["public_key"], pk);

    assert_eq!(
        api.raw(Method::POST, "/accounts", "{not json").await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        api.json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "x", "custody": "ttp-held", "bits": 1024})
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        api.json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "../x", "custody": "ttp-held"})
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(api.get("/accounts/nobody").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn posting_schemes_and_errors() {
    let api = Api::new();
    let token = api.register("alice").await;

    let (status, body) = api
        .post(
            &token,
            json!({"user_id": "alice", "scheme": "text", "message": "hello", "timestamp": 10}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(segments(&body["keycode"]), 1);
    assert_eq!(body["delivered"], true);
    assert_eq!(body["post"]["status"], "published");
    let id = body["post"]["post_id"].as_str().unwrap().to_string();
    assert_eq!(body["evidence_url"], format!("/posts/{id}/evidence"));
    assert_eq!(body["post"]["external_ref"], format!("outbox:{id}"));

    let images = [cover_png(1, 64, 64), cover_png(2, 80, 60)];
    let (status, body) = api
        .post(
            &token,
            json!({
                "user_id": "alice", "scheme": "pictured-provable", "message": "look", "timestamp": 11,
                "images": images.iter().map(|i| encode64(i)).collect::<Vec<_>>(),
            }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(segments(&body["keycode"]), 3);
    assert_eq!(body["post"]["images"].as_array().unwrap().len(), 2);

    // Second image too small for a 256-byte payload.
    let (status, body) = api
        .post(
            &token,
            json!({
                "user_id": "alice", "scheme": "pictured-simple", "message": "tiny", "timestamp": 12,
                "images": [encode64(&images[0]), encode64(&cover_png(3, 4, 4))],
            }),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["image_index"], 1);

    let long = "x".repeat(300);
    let (status, body) = api
        .post(&token, json!({"user_id": "alice", "scheme": "text", "message": long, "hashing_mode": "direct"}))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(body["error"].as_str().unwrap().contains("245"));

    let (status, _) = api
        .post(
            &token,
            json!({"user_id": "alice", "scheme": "text", "message": "late", "timestamp": 5}),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = api
        .post(
            &token,
            json!({"user_id": "nobody", "scheme": "text", "message": "hi"}),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = api
        .post(
            "wrong-token",
            json!({"user_id": "alice", "scheme": "text", "message": "hi"}),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = api
        .json(
            Method::POST,
            "/posts",
            None,
            json!({"user_id": "alice", "scheme": "text", "message": "hi"}),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let (status, _) = api
        .post(
            &token,
            json!({"user_id": "alice", "scheme": "sepia", "message": "hi"}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api
        .post(&token, json!({"user_id": "alice", "scheme": "pictured-provable", "message": "hi", "images": ["!!"]}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn multipart_upload() {
    let api = Api::new();
    let token = api.register("alice").await;
    let boundary = "XyZzYbOuNdArY";
    let meta = json!({"user_id": "alice", "scheme": "pictured-provable", "message": "parts", "timestamp": 3});
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"meta\"\r\n\r\n{meta}\r\n")
            .as_bytes(),
    );
    for seed in [4, 5] {
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"{seed}.png\"\r\n\
                 Content-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(&cover_png(seed, 64, 64));
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());

    let request = Request::post("/posts")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .header(header::AUTHORIZATION, format!("Bearer {token}"))
        .body(Body::from(body))
        .unwrap();
    let (status, created) = api.send(request).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(segments(&created["keycode"]), 3);

    let (_, bundle) = api.get(created["evidence_url"].as_str().unwrap()).await;
    let (status, result) = api.json(Method::POST, "/verify", None, bundle).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["verdict"], true, "{result}");
}

#[tokio::test]
async fn evidence_and_what_if_verification() {
    let api = Api::new();
    let alice = api.register("alice").await;
    let bob = api.register("bob").await;
    let (_, created) = api
        .post(
            &alice,
            json!({"user_id": "alice", "scheme": "text", "message": "original words"}),
        )
        .await;
    let id = created["post"]["post_id"].as_str().unwrap();

    let (status, bundle) = api.get(&format!("/posts/{id}/evidence")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bundle["message"], "original words");
    assert_eq!(bundle["keycode"], created["keycode"]);

    let (status, result) = api
        .json(Method::POST, "/verify", None, bundle.clone())
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["verdict"], true);
    assert!(result["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));

    let mut edited = bundle.clone();
    edited["message"] = json!("original word");
    let (_, result) = api.json(Method::POST, "/verify", None, edited).await;
    assert_eq!(result["verdict"], false);
    let failed: Vec<_> = result["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(failed, ["keycode-segment-1"]);

    let (_, bob_account) = api.get("/accounts/bob").await;
    let mut swapped = bundle.clone();
    swapped["public_key"] = bob_account["public_key"].clone();
    let (_, result) = api.json(Method::POST, "/verify", None, swapped).await;
    assert_eq!(result["verdict"], false);

    let (status, _) = api.raw(Method::POST, "/verify", "{\"format\": 3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(
        api.get("/posts/0000000000000000/evidence").await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        api.get("/posts/0000000000000000").await.0,
        StatusCode::NOT_FOUND
    );

    // Withdrawal: only the owner, idempotent, evidence still served.
    let withdraw = format!("/posts/{id}/withdraw");
    assert_eq!(
        api.json(Method::POST, &withdraw, Some(&bob), json!({}))
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    let (status, record) = api
        .json(Method::POST, &withdraw, Some(&alice), json!({}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["status"], "withdrawn");
    assert_eq!(
        api.json(Method::POST, &withdraw, Some(&alice), json!({}))
            .await
            .0,
        StatusCode::OK
    );
    let (status, after) = api.get(&format!("/posts/{id}/evidence")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, bundle);
    let (_, result) = api.json(Method::POST, "/verify", None, after).await;
    assert_eq!(result["verdict"], true);
    assert_eq!(
        api.json(
            Method::POST,
            "/posts/0000000000000000/withdraw",
            Some(&alice),
            json!({})
        )
        .await
        .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn search_filters() {
    let api = Api::new();
    let alice = api.register("alice").await;
    let bob = api.register("bob").await;
    for (token, user, t, msg) in [
        (&alice, "alice", 100, "morning coffee"),
        (&alice, "alice", 200, "lunch"),
        (&bob, "bob", 150, "coffee again"),
        (&bob, "bob", 300, "night"),
    ] {
        let (status, _) = api
            .post(
                token,
                json!({"user_id": user, "scheme": "text", "message": msg, "timestamp": t}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let messages = |v: Value| -> Vec<String> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|r| r["message"].as_str().unwrap().to_string())
            .collect()
    };
    let (status, all) = api.get("/posts").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        messages(all),
        ["night", "lunch", "coffee again", "morning coffee"]
    );
    assert_eq!(
        messages(api.get("/posts?user=alice").await.1),
        ["lunch", "morning coffee"]
    );
    assert_eq!(
        messages(api.get("/posts?from=150&to=200").await.1),
        ["lunch", "coffee again"]
    );
    assert_eq!(
        messages(api.get("/posts?q=coffee&user=bob").await.1),
        ["coffee again"]
    );
    assert_eq!(
        messages(api.get("/posts?q=Coffee").await.1),
        Vec::<String>::new()
    );
    assert_eq!(api.get("/posts?from=soon").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn publisher_failure_keeps_a_verifying_record() {
    let api = Api::failing();
    let token = api.register("alice").await;
    let (status, created) = api
        .post(
            &token,
            json!({"user_id": "alice", "scheme": "text", "message": "still here"}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["delivered"], false);
    assert!(created["delivery_error"]
        .as_str()
        .unwrap()
        .contains("unreachable"));
    let id = created["post"]["post_id"].as_str().unwrap();
    let (status, record) = api.get(&format!("/posts/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["external_ref"], Value::Null);
    let (_, bundle) = api.get(&format!("/posts/{id}/evidence")).await;
    let (_, result) = api.json(Method::POST, "/verify", None, bundle).await;
    assert_eq!(result["verdict"], true);
}

#[tokio::test]
async fn client_held_detached_signing() {
    let api = Api::new();
    let key = &keys()[1];
    let (_, created) = api
        .json(
            Method::POST,
            "/accounts",
            None,
            json!({"user_id": "carol", "custody": "client-held", "public_key": key.public_key().to_encoded()}),
        )
        .await;
    let token = created["token"].as_str().unwrap().to_string();
    let images = vec![
        encode64(&cover_png(8, 64, 64)),
        encode64(&cover_png(9, 96, 64)),
    ];
    let mut request = json!({"user_id": "carol", "scheme": "pictured-provable", "message": "mine", "images": images});

    let sign = |item: &Value| -> String {
        assert_eq!(item["kind"], "sha256-digest");
        let bytes: [u8; 32] = decode64(item["data"].as_str().unwrap())
            .unwrap()
            .try_into()
            .unwrap();
        key.sign_digest(&Digest::from_bytes(bytes))
            .unwrap()
            .to_encoded()
    };

    let (status, step) = api.post(&token, request.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{step}");
    assert_eq!(step["status"], "signature-required");
    assert_eq!(step["items"].as_array().unwrap().len(), 1);
    request["timestamp"] = step["timestamp"].clone();
    let mut segs = vec![sign(&step["items"][0])];
    request["segments"] = json!(segs);

    let (status, step) = api.post(&token, request.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{step}");
    let labels: Vec<_> = step["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["label"].clone())
        .collect();
    assert_eq!(labels, [json!("image-0"), json!("image-1")]);
    segs.extend(step["items"].as_array().unwrap().iter().map(sign));

    let mut forged = request.clone();
    let mut bad = segs.clone();
    bad[2] = SignatureSegment::from_bytes(vec![7; 256]).to_encoded();
    forged["segments"] = json!(bad);
    let (status, body) = api.post(&token, forged).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    request["segments"] = json!(segs);
    let (status, done) = api.post(&token, request).await;
    assert_eq!(status, StatusCode::CREATED, "{done}");
    assert_eq!(segments(&done["keycode"]), 3);
    let (_, bundle) = api.get(done["evidence_url"].as_str().unwrap()).await;
    let (_, result) = api.json(Method::POST, "/verify", None, bundle).await;
    assert_eq!(result["verdict"], true, "{result}");
}

#[tokio::test]
async fn verify_is_stateless() {
    let first = Api::new();
    let token = first.register("alice").await;
    let (_, created) = first
        .post(
            &token,
            json!({"user_id": "alice", "scheme": "text", "message": "portable"}),
        )
        .await;
    let (_, bundle) = first.get(created["evidence_url"].as_str().unwrap()).await;
    let (_, here) = first
        .json(Method::POST, "/verify", None, bundle.clone())
        .await;

    let fresh = Api::new();
    let (_, there) = fresh.json(Method::POST, "/verify", None, bundle).await;
    assert_eq!(here, there);
    assert_eq!(there["verdict"], true);
    // The fresh instance knows no accounts at all.
    assert_eq!(fresh.get("/accounts/alice").await.0, StatusCode::NOT_FOUND);
}

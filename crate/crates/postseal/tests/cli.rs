mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use postseal::core::PublicKey;

fn postseal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postseal"))
        .args(args)
        .env_remove("POSTSEAL_STORE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Value of a `key: value` line.
fn field(o: &Output, key: &str) -> String {
    let prefix = format!("{key}: ");
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {}", stdout(o)))
}

fn write_key(dir: &Path, index: usize) -> PathBuf {
    let key_dir = dir.join(format!("key{index}"));
    std::fs::create_dir_all(&key_dir).unwrap();
    let key = &common::keys()[index];
    std::fs::write(key_dir.join("private_key.b64"), key.to_encoded()).unwrap();
    std::fs::write(
        key_dir.join("public_key.b64"),
        key.public_key().to_encoded(),
    )
    .unwrap();
    key_dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn keygen() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("keys");
    let o = postseal(&["keygen", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(field(&o, "bits"), "2048");
    let public = std::fs::read_to_string(out.join("public_key.b64")).unwrap();
    assert_eq!(
        PublicKey::from_encoded(&public).unwrap().modulus_bits(),
        2048
    );
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(out.join("private_key.b64"))
            .unwrap()
            .permissions()
            .mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    let again = postseal(&["keygen", "--out", s(&out)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(
        std::fs::read_to_string(out.join("public_key.b64")).unwrap(),
        public
    );
    assert_eq!(code(&postseal(&["keygen", "--out", s(&out), "--force"])), 0);
    assert_ne!(
        std::fs::read_to_string(out.join("public_key.b64")).unwrap(),
        public
    );

    let weak = postseal(&[
        "keygen",
        "--bits",
        "1024",
        "--out",
        s(&dir.path().join("weak")),
    ]);
    assert_eq!(code(&weak), 2);
    assert!(!dir.path().join("weak").exists());
}

#[test]
fn post_verify_search_withdraw() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let key = write_key(dir.path(), 0);
    let o = postseal(&[
        "register",
        "--store",
        s(&store),
        "--user",
        "alice",
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(field(&o, "custody"), "ttp-held");

    let text = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "alice",
        "--message",
        "hello world",
        "--timestamp",
        "100",
    ]);
    assert_eq!(code(&text), 0, "{text:?}");
    assert_eq!(field(&text, "segments"), "1");
    let text_id = field(&text, "post_id");
    let text_bundle = field(&text, "evidence");
    assert_eq!(
        PathBuf::from(&text_bundle),
        store.join("evidence").join(&text_id).join("evidence.json")
    );
    assert_eq!(field(&text, "delivery"), format!("outbox:{text_id}"));

    let image = dir.path().join("cover.png");
    std::fs::write(&image, common::cover_png(1, 64, 64)).unwrap();
    let pictured = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "alice",
        "--message",
        "with picture",
        "--timestamp",
        "200",
        "--image",
        s(&image),
        "--out",
        s(&dir.path().join("pictured")),
    ]);
    assert_eq!(code(&pictured), 0, "{pictured:?}");
    assert_eq!(field(&pictured, "segments"), "2");

    let ok = postseal(&["verify", "--bundle", &text_bundle]);
    assert_eq!(code(&ok), 0, "{ok:?}");
    assert!(stdout(&ok).contains("PASS  keycode-segment-1"));
    assert!(stdout(&ok).ends_with("verdict: verified\n"));
    let ok = postseal(&["verify", "--bundle", s(&dir.path().join("pictured"))]);
    assert_eq!(code(&ok), 0, "{ok:?}");
    for check in ["image-0-file", "watermark-image-0", "keycode-segment-2"] {
        assert!(stdout(&ok).contains(&format!("PASS  {check}")), "{check}");
    }

    let tampered = postseal(&[
        "verify",
        "--bundle",
        &text_bundle,
        "--set",
        "message=hello World",
    ]);
    assert_eq!(code(&tampered), 1);
    assert!(stdout(&tampered).contains("FAIL  keycode-segment-1"));
    assert!(stdout(&tampered).ends_with("verdict: FAILED\n"));

    let json = postseal(&["verify", "--bundle", &text_bundle, "--json"]);
    assert_eq!(code(&json), 0);
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["verdict"], true);
    assert_eq!(value["checks"][0]["name"], "public-key");

    assert_eq!(
        code(&postseal(&[
            "verify",
            "--bundle",
            &text_bundle,
            "--set",
            "colour=red"
        ])),
        2
    );
    assert_eq!(
        code(&postseal(&[
            "verify",
            "--bundle",
            s(&dir.path().join("missing"))
        ])),
        2
    );

    let back = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "alice",
        "--message",
        "too early",
        "--timestamp",
        "150",
    ]);
    assert_eq!(code(&back), 2);

    let found = postseal(&["search", "--store", s(&store), "--q", "world"]);
    assert_eq!(code(&found), 0);
    let lines: Vec<_> = stdout(&found).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with(&format!("{text_id}\t100\talice\ttext\tpublished\t")));
    let all = postseal(&["search", "--store", s(&store), "--from", "150", "--json"]);
    let value: serde_json::Value = serde_json::from_slice(&all.stdout).unwrap();
    assert_eq!(value.as_array().unwrap().len(), 1);
    assert_eq!(value[0]["message"], "with picture");

    let w = postseal(&["withdraw", "--store", s(&store), "--post", &text_id]);
    assert_eq!(code(&w), 0, "{w:?}");
    assert_eq!(field(&w, "status"), "withdrawn");
    assert_eq!(
        code(&postseal(&[
            "withdraw",
            "--store",
            s(&store),
            "--post",
            "0000000000000000"
        ])),
        2
    );
    let found = postseal(&[
        "search",
        "--store",
        s(&store),
        "--user",
        "alice",
        "--to",
        "100",
    ]);
    assert!(stdout(&found).contains("\twithdrawn\t"));

    let export = dir.path().join("export");
    let e = postseal(&[
        "evidence",
        "--store",
        s(&store),
        "--post",
        &text_id,
        "--out",
        s(&export),
    ]);
    assert_eq!(code(&e), 0, "{e:?}");
    assert_eq!(code(&postseal(&["verify", "--bundle", s(&export)])), 0);
}

#[test]
fn client_held_needs_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let key = write_key(dir.path(), 1);
    let other = write_key(dir.path(), 2);
    let o = postseal(&[
        "register",
        "--store",
        s(&store),
        "--user",
        "bob",
        "--custody",
        "client-held",
        "--public-key",
        s(&key.join("public_key.b64")),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(!store.join("keys").join("bob.key").exists());

    let missing = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "bob",
        "--message",
        "hi",
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("client-side"));
    let wrong = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "bob",
        "--message",
        "hi",
        "--key",
        s(&other),
    ]);
    assert_eq!(code(&wrong), 2);
    let ok = postseal(&[
        "post",
        "--store",
        s(&store),
        "--user",
        "bob",
        "--message",
        "hi",
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&ok), 0, "{ok:?}");
    assert_eq!(
        code(&postseal(&["verify", "--bundle", &field(&ok, "evidence")])),
        0
    );

    let dup = postseal(&[
        "register",
        "--store",
        s(&store),
        "--user",
        "bob",
        "--custody",
        "client-held",
        "--key",
        s(&key),
    ]);
    assert_eq!(code(&dup), 2);
}

#[test]
fn mixed_image_bundle_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let key = write_key(dir.path(), 0);
    assert_eq!(
        code(&postseal(&[
            "register",
            "--store",
            s(&store),
            "--user",
            "alice",
            "--key",
            s(&key)
        ])),
        0
    );
    let mut bundles = Vec::new();
    for (i, t) in [(1u64, "10"), (2, "20")] {
        let image = dir.path().join(format!("p{i}.png"));
        std::fs::write(&image, common::cover_png(i, 72, 64)).unwrap();
        let out = dir.path().join(format!("b{i}"));
        let o = postseal(&[
            "post",
            "--store",
            s(&store),
            "--user",
            "alice",
            "--message",
            "same text",
            "--timestamp",
            t,
            "--scheme",
            "pictured-provable",
            "--image",
            s(&image),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{o:?}");
        bundles.push(out);
    }
    std::fs::copy(
        bundles[1].join("image-0.png"),
        bundles[0].join("image-0.png"),
    )
    .unwrap();
    // Keep the listed digest consistent so only the cryptographic checks can object.
    let (mut bundle, _) = postseal::EvidenceBundle::read(&bundles[0]).unwrap();
    let (other, _) = postseal::EvidenceBundle::read(&bundles[1]).unwrap();
    bundle.images[0].sha256 = other.images[0].sha256.clone();
    bundle.write_dir(&bundles[0]).unwrap();

    let o = postseal(&["verify", "--bundle", s(&bundles[0])]);
    assert_eq!(code(&o), 1, "{o:?}");
    assert!(stdout(&o).contains("PASS  keycode-segment-1"));
    assert!(stdout(&o).contains("FAIL  watermark-image-0"));
}

#[test]
fn usage_errors() {
    assert_eq!(code(&postseal(&[])), 2);
    assert_eq!(code(&postseal(&["verify"])), 2);
    assert_eq!(code(&postseal(&["post", "--user", "x"])), 2);
    assert_eq!(code(&postseal(&["--help"])), 0);
}

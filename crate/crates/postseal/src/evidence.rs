//! Self-contained evidence for one post.
//!
//! A bundle is a JSON document (`evidence.json`) plus, on disk, the stamped
//! image files it names. Over HTTP the image bytes travel inline in `data`.
//! Everything a third party needs to re-verify the post is in the bundle:
//! no store, no private key.

use std::fs;
use std::path::{Path, PathBuf};

use postseal_core::protocol::{
    verify_pictured_post_provable, verify_pictured_post_simple, verify_text_post,
};
use postseal_core::{
    decode64, encode64, Digest, HashingMode, PublicKey, PublishedImage, Timestamp,
    VerificationResult,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::png_codec::decode_png;
use crate::store::{PostRecord, Scheme, Store};

pub const FORMAT: &str = "postseal-evidence/1";
pub const BUNDLE_FILE: &str = "evidence.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceImage {
    /// File name relative to the bundle directory.
    pub file: String,
    /// Lowercase hex SHA-256 of the file bytes.
    pub sha256: String,
    /// base64url of the file bytes; takes precedence over `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub format: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub hashing_mode: HashingMode,
    pub user_id: String,
    pub message: String,
    /// Present only for provable posts, where it is signed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub keycode: String,
    pub public_key: String,
    #[serde(default)]
    pub images: Vec<EvidenceImage>,
}

impl EvidenceBundle {
    /// Builds the bundle for a stored post with image bytes inline.
    pub fn from_store(store: &Store, record: &PostRecord) -> Result<Self> {
        let account = store
            .get_account(&record.user_id)?
            .ok_or_else(|| Error::NotFound(format!("unknown account {:?}", record.user_id)))?;
        let images = record
            .images
            .iter()
            .enumerate()
            .map(|(i, image)| {
                let bytes = store.image_bytes(image)?;
                Ok(EvidenceImage {
                    file: format!("image-{i}.png"),
                    sha256: image.sha256.clone(),
                    data: Some(encode64(&bytes)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            format: FORMAT.into(),
            scheme: record.scheme,
            hashing_mode: record.hashing_mode,
            user_id: record.user_id.clone(),
            message: record.message.clone(),
            timestamp: (record.scheme == Scheme::PicturedProvable).then_some(record.timestamp),
            keycode: record.keycode.clone(),
            public_key: account.public_key.to_encoded(),
            images,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("evidence bundle", e))
    }

    /// Writes `evidence.json` and the image files into `dir`. Inline image
    /// data is moved out to the files.
    pub fn write_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut on_disk = self.clone();
        for image in &mut on_disk.images {
            check_file_name(&image.file)?;
            if let Some(data) = image.data.take() {
                let path = dir.join(&image.file);
                fs::write(&path, decode64(&data)?).map_err(|e| Error::io(&path, e))?;
            }
        }
        let path = dir.join(BUNDLE_FILE);
        fs::write(&path, on_disk.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a bundle from a directory containing `evidence.json`, or from
    /// the JSON file itself. Returns the bundle and the directory its image
    /// files are relative to.
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() {
            path.join(BUNDLE_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let base = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((Self::from_json(&text)?, base))
    }

    /// Replaces image file references with inline data read from `base`.
    pub fn inline_images(&mut self, base: &Path) -> Result<()> {
        for image in &mut self.images {
            if image.data.is_none() {
                check_file_name(&image.file)?;
                let path = base.join(&image.file);
                image.data = Some(encode64(&fs::read(&path).map_err(|e| Error::io(&path, e))?));
            }
        }
        Ok(())
    }

    /// Verifies the bundle. Image files without inline data are resolved
    /// against `base`; with no base they count as missing.
    pub fn verify(&self, base: Option<&Path>) -> VerificationResult {
        let mut result = VerificationResult::new();
        if self.format != FORMAT {
            result.push(
                "format",
                false,
                format!("unsupported format {:?}, expected {FORMAT:?}", self.format),
            );
            return result;
        }
        let public_key = match PublicKey::from_encoded(&self.public_key) {
            Ok(k) => {
                result.push("public-key", true, format!("RSA-{}", k.modulus_bits()));
                k
            }
            Err(e) => {
                result.push("public-key", false, e.to_string());
                return result;
            }
        };

        let mut images = Vec::with_capacity(self.images.len());
        for (i, image) in self.images.iter().enumerate() {
            match load_image(image, base) {
                Ok(published) => {
                    result.push(
                        format!("image-{i}-file"),
                        true,
                        format!("sha256 {}", image.sha256),
                    );
                    images.push(published);
                }
                Err(e) => result.push(format!("image-{i}-file"), false, e.to_string()),
            }
        }
        if !result.verdict {
            return result;
        }

        match self.scheme {
            Scheme::Text => {
                if !images.is_empty() {
                    result.push("images", false, "a text post carries no images");
                    return result;
                }
                result.merge(verify_text_post(
                    &self.message,
                    &self.keycode,
                    &public_key,
                    self.hashing_mode,
                ));
            }
            Scheme::PicturedSimple => {
                if !pictured_preconditions(self, images.len(), &mut result) {
                    return result;
                }
                let rasters: Vec<_> = images.into_iter().map(|i| i.raster).collect();
                result.merge(verify_pictured_post_simple(
                    &self.message,
                    &self.keycode,
                    &rasters,
                    &public_key,
                ));
            }
            Scheme::PicturedProvable => {
                if !pictured_preconditions(self, images.len(), &mut result) {
                    return result;
                }
                let Some(t) = self.timestamp else {
                    result.push(
                        "timestamp",
                        false,
                        "provable posts sign a timestamp; none given",
                    );
                    return result;
                };
                result.merge(verify_pictured_post_provable(
                    &self.message,
                    Timestamp(t),
                    &self.keycode,
                    &images,
                    &public_key,
                ));
            }
        }
        result
    }
}

fn pictured_preconditions(
    bundle: &EvidenceBundle,
    image_count: usize,
    result: &mut VerificationResult,
) -> bool {
    if bundle.hashing_mode != HashingMode::Hashed {
        result.push("hashing-mode", false, "pictured posts are always hashed");
        return false;
    }
    if image_count == 0 {
        result.push("images", false, "a pictured post needs at least one image");
        return false;
    }
    true
}

/// Bundle image names must be plain file names inside the bundle directory.
fn check_file_name(name: &str) -> Result<()> {
    let plain = !name.is_empty()
        && !name.starts_with('.')
        && !name.contains(['/', '\\'])
        && Path::new(name).file_name().is_some_and(|f| f == name);
    if plain {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "image file name {name:?} is not a plain file name"
        )))
    }
}

fn load_image(image: &EvidenceImage, base: Option<&Path>) -> Result<PublishedImage> {
    let bytes = match (&image.data, base) {
        (Some(data), _) => decode64(data)?,
        (None, Some(base)) => {
            check_file_name(&image.file)?;
            let path = base.join(&image.file);
            fs::read(&path).map_err(|e| Error::io(&path, e))?
        }
        (None, None) => {
            return Err(Error::InvalidInput(format!(
                "{}: no inline data and no bundle directory",
                image.file
            )))
        }
    };
    let actual = Digest::of(&bytes).to_hex();
    if !actual.eq_ignore_ascii_case(&image.sha256) {
        return Err(Error::InvalidInput(format!(
            "{}: sha256 is {actual}, bundle lists {}",
            image.file, image.sha256
        )));
    }
    let raster = decode_png(&bytes)?;
    Ok(PublishedImage {
        raster,
        encoded: bytes,
    })
}

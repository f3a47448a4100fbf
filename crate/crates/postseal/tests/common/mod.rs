#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, OnceLock};

use postseal::core::{Channels, KeyPair, PrivateKey, RasterImage};
use postseal::png_codec::encode_png;
use postseal::publisher::{OutboxPublisher, Publisher};
use postseal::ttp::Config;
use postseal::{Store, Ttp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn keys() -> &'static [PrivateKey] {
    static KEYS: OnceLock<Vec<PrivateKey>> = OnceLock::new();
    KEYS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        (0..3)
            .map(|_| KeyPair::generate(&mut rng, 2048).unwrap().into_private())
            .collect()
    })
}

pub fn random_raster(
    rng: &mut impl Rng,
    width: u32,
    height: u32,
    channels: Channels,
) -> RasterImage {
    let mut samples = vec![0u8; (width * height) as usize * channels.count()];
    rng.fill(&mut samples[..]);
    RasterImage::new(width, height, channels, samples).unwrap()
}

pub fn cover_png(seed: u64, width: u32, height: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    encode_png(&random_raster(&mut rng, width, height, Channels::Rgb)).unwrap()
}

pub fn ttp_at(dir: &Path) -> Ttp {
    let store = Store::open(dir).unwrap();
    let outbox = OutboxPublisher::new(dir.join("outbox.jsonl"));
    Ttp::new(store, Box::new(outbox), Config::default())
}

pub fn ttp_with(dir: &Path, publisher: Box<dyn Publisher>) -> Arc<Ttp> {
    Arc::new(Ttp::new(
        Store::open(dir).unwrap(),
        publisher,
        Config::default(),
    ))
}

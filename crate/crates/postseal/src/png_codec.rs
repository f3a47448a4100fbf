//! PNG in, PNG out.
//!
//! Encoding is pinned so that the same raster always produces the same
//! file bytes: 8-bit RGB or RGBA, no interlacing, Paeth filter on every
//! row, zlib level 6, and no ancillary chunks. The provable scheme signs
//! the SHA-256 of these bytes.

use std::io::Cursor;

use png::{BitDepth, ColorType, DeflateCompression, Filter, Transformations};
use postseal_core::{Channels, ImageEncoder, RasterImage};

use crate::error::{Error, Result};

/// Largest accepted image side, in pixels.
pub const MAX_DIMENSION: u32 = 8192;

#[derive(Clone, Copy, Debug)]
pub struct EncodeSettings {
    pub compression: DeflateCompression,
    pub filter: Filter,
}

impl EncodeSettings {
    /// The normative settings used for every stamped image.
    pub fn normative() -> Self {
        Self {
            compression: DeflateCompression::Level(6),
            filter: Filter::Paeth,
        }
    }
}

pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>> {
    encode_png_with(image, EncodeSettings::normative())
}

pub fn encode_png_with(image: &RasterImage, settings: EncodeSettings) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width(), image.height());
        encoder.set_color(match image.channels() {
            Channels::Rgb => ColorType::Rgb,
            Channels::Rgba => ColorType::Rgba,
        });
        encoder.set_depth(BitDepth::Eight);
        encoder.set_deflate_compression(settings.compression);
        encoder.set_filter(settings.filter);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(image.samples())
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes any non-animated PNG into 8-bit RGB or RGBA. Palette and
/// low-bit-depth images are expanded, 16-bit samples are stripped to 8,
/// and grayscale is widened to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let (width, height) = reader.info().size();
    if width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(Error::Png(format!(
            "{width}x{height} exceeds the {MAX_DIMENSION}-pixel limit"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Png(format!(
            "unsupported bit depth {:?}",
            info.bit_depth
        )));
    }

    let (channels, samples) = match info.color_type {
        ColorType::Rgb => (Channels::Rgb, buf),
        ColorType::Rgba => (Channels::Rgba, buf),
        ColorType::Grayscale => (Channels::Rgb, buf.iter().flat_map(|&g| [g, g, g]).collect()),
        ColorType::GrayscaleAlpha => (
            Channels::Rgba,
            buf.chunks_exact(2)
                .flat_map(|ga| [ga[0], ga[0], ga[0], ga[1]])
                .collect(),
        ),
        ColorType::Indexed => return Err(Error::Png("palette was not expanded".into())),
    };
    Ok(RasterImage::new(
        info.width,
        info.height,
        channels,
        samples,
    )?)
}

/// [`ImageEncoder`] with the normative settings.
#[derive(Clone, Copy, Debug, Default)]
pub struct PngEncoder;

impl ImageEncoder for PngEncoder {
    fn encode(&self, image: &RasterImage) -> std::result::Result<Vec<u8>, String> {
        encode_png(image).map_err(|e| e.to_string())
    }
}

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::tensor::{denormalize_u8, normalize_u8, Image, ImageU8};

/// Decodes an 8-bit grayscale or RGB PNG into a 3-channel image in [-1, 1].
/// Grayscale is replicated across channels.
pub fn read_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!(
            "bit depth {:?}; only 8-bit images are supported",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedPng(format!(
                "color type {other:?}; only grayscale and RGB are supported"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::UnsupportedPng("image too large".into()))?
    ];
    let frame = reader.next_frame(&mut buf)?;
    let interleaved = &buf[..frame.buffer_size()];

    let plane = width * height;
    let mut planar = vec![0u8; channels * plane];
    for (p, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * plane + p] = v;
        }
    }
    let img = normalize_u8(&ImageU8 {
        channels,
        height,
        width,
        data: planar,
    })?;
    if channels == 1 {
        img.broadcast_channels(3)
    } else {
        Ok(img)
    }
}

/// Encodes a 1- or 3-channel image as an 8-bit PNG after mapping [-1, 1] to [0, 255].
pub fn write_png(img: &Image) -> Result<Vec<u8>> {
    encode_u8(&denormalize_u8(img))
}

pub fn encode_u8(img: &ImageU8) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::UnsupportedPng(format!("cannot encode {c} channels"))),
    };
    let plane = img.width * img.height;
    let mut interleaved = vec![0u8; img.channels * plane];
    for c in 0..img.channels {
        for p in 0..plane {
            interleaved[p * img.channels + c] = img.data[c * plane + p];
        }
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&interleaved)?;
    }
    Ok(out)
}

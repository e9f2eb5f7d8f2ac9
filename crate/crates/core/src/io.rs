//! Image file formats: 8-bit sRGB PNG previews, 32-bit float linear EXR,
//! 1-bit mask PNGs and texture-map export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::Path;

use exr::prelude as ex;
use exr::prelude::traits::*;

use crate::image::{linear_to_srgb, GrayImage, RgbImage};
use crate::neural_texture::{ChannelBounds, TextureMap, PBR_CHANNELS};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
    #[error("exr: {0}")]
    Exr(String),
    #[error("png: {0}")]
    Png(String),
    #[error("{0}")]
    Format(String),
}

impl From<exr::error::Error> for IoError {
    fn from(e: exr::error::Error) -> Self {
        IoError::Exr(e.to_string())
    }
}

const TEXTURE_CHANNELS: [&str; PBR_CHANNELS] = ["kd.R", "kd.G", "kd.B", "roughness", "metalness"];

fn is_exr(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("exr"))
}

/// Named `f32` planes of one EXR layer.
pub struct ExrChannels {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<(String, Vec<f32>)>,
}

impl ExrChannels {
    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

pub fn write_exr_channels<W: Write + Seek>(out: W, image: &ExrChannels) -> Result<(), IoError> {
    let n = image.width * image.height;
    let mut list = ex::SmallVec::<[ex::AnyChannel<ex::FlatSamples>; 4]>::new();
    for (name, values) in &image.channels {
        if values.len() != n {
            return Err(IoError::Format(format!("channel {name} has {} samples, expected {n}", values.len())));
        }
        list.push(ex::AnyChannel::new(name.as_str(), ex::FlatSamples::F32(values.clone())));
    }
    let layer = ex::Layer::new(
        (image.width, image.height),
        ex::LayerAttributes::default(),
        ex::Encoding::SMALL_LOSSLESS,
        ex::AnyChannels::sort(list),
    );
    ex::Image::from_layer(layer).write().to_buffered(out)?;
    Ok(())
}

pub fn read_exr_channels<R: Read + Seek>(input: R) -> Result<ExrChannels, IoError> {
    let image = ex::read()
        .no_deep_data()
        .largest_resolution_level()
        .all_channels()
        .first_valid_layer()
        .all_attributes()
        .from_buffered(BufReader::new(input))?;
    let layer = image.layer_data;
    let size = layer.size;
    let channels = layer
        .channel_data
        .list
        .iter()
        .map(|c| (c.name.to_string(), c.sample_data.values_as_f32().collect()))
        .collect();
    Ok(ExrChannels { width: size.width(), height: size.height(), channels })
}

fn rgb_channels(img: &RgbImage) -> ExrChannels {
    let plane = |c: usize| img.pixels().iter().map(|p| p[c] as f32).collect();
    ExrChannels {
        width: img.width(),
        height: img.height(),
        channels: vec![("R".into(), plane(0)), ("G".into(), plane(1)), ("B".into(), plane(2))],
    }
}

fn channels_to_rgb(ch: &ExrChannels) -> Result<RgbImage, IoError> {
    let planes = match (ch.get("R"), ch.get("G"), ch.get("B"), ch.get("Y")) {
        (Some(r), Some(g), Some(b), _) => [r, g, b],
        (_, _, _, Some(y)) => [y, y, y],
        _ => return Err(IoError::Format("EXR has neither R,G,B nor Y channels".into())),
    };
    let pixels = (0..ch.width * ch.height).map(|i| planes.map(|p| p[i] as f64)).collect();
    Ok(RgbImage::from_pixels(ch.width, ch.height, pixels))
}

/// Linear RGB as a 32-bit float EXR in memory.
pub fn encode_exr(img: &RgbImage) -> Result<Vec<u8>, IoError> {
    let mut buf = Cursor::new(Vec::new());
    write_exr_channels(&mut buf, &rgb_channels(img))?;
    Ok(buf.into_inner())
}

pub fn decode_exr(bytes: &[u8]) -> Result<RgbImage, IoError> {
    channels_to_rgb(&read_exr_channels(Cursor::new(bytes))?)
}

pub fn write_exr(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), IoError> {
    write_exr_channels(BufWriter::new(File::create(path)?), &rgb_channels(img))
}

pub fn write_gray_exr(path: impl AsRef<Path>, img: &GrayImage) -> Result<(), IoError> {
    let ch = ExrChannels {
        width: img.width(),
        height: img.height(),
        channels: vec![("Y".into(), img.pixels().iter().map(|&v| v as f32).collect())],
    };
    write_exr_channels(BufWriter::new(File::create(path)?), &ch)
}

pub fn read_exr(path: impl AsRef<Path>) -> Result<RgbImage, IoError> {
    channels_to_rgb(&read_exr_channels(File::open(path)?)?)
}

/// Reads an 8-bit image (PNG, JPEG) as sRGB-encoded values in `[0, 1]`.
pub fn read_srgb_image(path: impl AsRef<Path>) -> Result<RgbImage, IoError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
    Ok(RgbImage::from_pixels(w as usize, h as usize, pixels))
}

/// Reads linear RGB: EXR as stored, 8-bit formats decoded from sRGB.
pub fn read_linear_image(path: impl AsRef<Path>) -> Result<RgbImage, IoError> {
    let path = path.as_ref();
    if is_exr(path) {
        read_exr(path)
    } else {
        Ok(read_srgb_image(path)?.to_linear())
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes already-encoded values in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_png_encoded(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), IoError> {
    let data: Vec<u8> = img.pixels().iter().flat_map(|p| p.map(quantize)).collect();
    let out = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, data)
        .ok_or_else(|| IoError::Format("pixel buffer size".into()))?;
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Tone maps linear RGB to sRGB (with clamping) and writes an 8-bit PNG.
pub fn write_png_srgb(path: impl AsRef<Path>, linear: &RgbImage) -> Result<(), IoError> {
    write_png_encoded(path, &linear.map(|p| p.map(linear_to_srgb)))
}

/// Writes values in `[0, 1]` as an 8-bit grayscale PNG, without a transfer
/// curve.
pub fn write_gray_png(path: impl AsRef<Path>, img: &GrayImage) -> Result<(), IoError> {
    let data: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    let out = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, data)
        .ok_or_else(|| IoError::Format("pixel buffer size".into()))?;
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// 1-bit grayscale PNG of a boolean mask (`true` is white).
pub fn encode_mask_png(mask: &[bool], width: usize, height: usize) -> Result<Vec<u8>, IoError> {
    if mask.len() != width * height {
        return Err(IoError::Format("mask does not match dimensions".into()));
    }
    let stride = width.div_ceil(8);
    let mut data = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| IoError::Png(e.to_string()))?;
        writer.write_image_data(&data).map_err(|e| IoError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes any grayscale or color PNG into a mask of nonzero pixels.
pub fn decode_mask_png(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), IoError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] > 0).collect()))
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &[bool], width: usize, height: usize) -> Result<(), IoError> {
    std::fs::write(path, encode_mask_png(mask, width, height)?)?;
    Ok(())
}

/// Exports a texture map as `<stem>_kd.png` (sRGB albedo) and
/// `<stem>_rm.png` (R = roughness, G = metalness, linear). Rows are written
/// top to bottom, so the top row holds `v` near 1.
pub fn write_texture_map_pngs(dir: impl AsRef<Path>, stem: &str, map: &TextureMap) -> Result<(), IoError> {
    let dir = dir.as_ref();
    let kd = RgbImage::from_fn(map.width, map.height, |x, y| {
        let t = map.texel(y, x);
        [t[0], t[1], t[2]]
    });
    write_png_srgb(dir.join(format!("{stem}_kd.png")), &kd)?;
    let rm = RgbImage::from_fn(map.width, map.height, |x, y| {
        let t = map.texel(y, x);
        [t[3], t[4], 0.0]
    });
    write_png_encoded(dir.join(format!("{stem}_rm.png")), &rm)
}

/// Five-channel float EXR of a texture map.
pub fn write_texture_map_exr(path: impl AsRef<Path>, map: &TextureMap) -> Result<(), IoError> {
    let channels = TEXTURE_CHANNELS
        .iter()
        .enumerate()
        .map(|(k, name)| (name.to_string(), map.texels.iter().map(|t| t[k] as f32).collect()))
        .collect();
    let ch = ExrChannels { width: map.width, height: map.height, channels };
    write_exr_channels(BufWriter::new(File::create(path)?), &ch)
}

pub fn read_texture_map_exr(path: impl AsRef<Path>, bounds: ChannelBounds) -> Result<TextureMap, IoError> {
    let ch = read_exr_channels(File::open(path)?)?;
    let mut planes = Vec::with_capacity(PBR_CHANNELS);
    for name in TEXTURE_CHANNELS {
        planes.push(ch.get(name).ok_or_else(|| IoError::Format(format!("texture EXR lacks channel {name}")))?);
    }
    let texels = (0..ch.width * ch.height).map(|i| std::array::from_fn(|k| planes[k][i] as f64)).collect();
    TextureMap::new(ch.width, ch.height, texels, bounds).map_err(|e| IoError::Format(e.to_string()))
}

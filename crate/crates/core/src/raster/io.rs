use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ImageFormat, ImageReader, Rgb};

use super::{ImageBuffer, ImageError};

/// Integer code depth of a stored image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

/// A decoded image together with what the decoder saw.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub image: ImageBuffer,
    /// Depth of the source file, so it can be written back without loss.
    pub bit_depth: BitDepth,
    /// Non-fatal conversions applied while decoding (e.g. a dropped alpha channel).
    pub warnings: Vec<String>,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    load_image_detailed(path).map(|l| l.image)
}

pub fn load_image_detailed(path: impl AsRef<Path>) -> Result<LoadedImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_image_bytes(&bytes)
}

/// Decodes PNG (8/16-bit) or JPEG (8-bit) bytes into a normalized buffer.
pub fn decode_image_bytes(bytes: &[u8]) -> Result<LoadedImage, ImageError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => return Err(ImageError::Decode(format!("unsupported format {other:?}"))),
        None => return Err(ImageError::Decode("unrecognized image format".into())),
    }
    let decoded = reader.decode().map_err(|e| ImageError::Decode(e.to_string()))?;
    from_dynamic(decoded)
}

fn from_dynamic(img: DynamicImage) -> Result<LoadedImage, ImageError> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let mut warnings = Vec::new();
    let color = img.color();
    if color.has_alpha() {
        let msg = format!("alpha channel dropped from {color:?} input");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (bit_depth, data) = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => {
            let rgb = img.into_rgb8();
            (BitDepth::Eight, normalize(rgb.as_raw(), BitDepth::Eight))
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            let rgb = img.into_rgb16();
            (BitDepth::Sixteen, normalize(rgb.as_raw(), BitDepth::Sixteen))
        }
        other => {
            return Err(ImageError::Decode(format!("unsupported sample type {:?}", other.color())));
        }
    };
    Ok(LoadedImage {
        image: ImageBuffer::from_vec(width, height, data)?,
        bit_depth,
        warnings,
    })
}

fn normalize<T: Copy + Into<f64>>(codes: &[T], depth: BitDepth) -> Vec<f32> {
    let max = depth.max_code();
    codes.iter().map(|&c| (c.into() / max) as f32).collect()
}

/// Round-half-up quantization to `depth`.
fn quantize(v: f32, depth: BitDepth) -> u16 {
    let max = depth.max_code();
    ((v as f64) * max + 0.5).floor().clamp(0.0, max) as u16
}

fn write_png<W: Write>(img: &ImageBuffer, depth: BitDepth, out: W) -> Result<(), ImageError> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let encoder = PngEncoder::new(out);
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, depth) as u8).collect();
            image::ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
                .expect("length checked by ImageBuffer")
                .write_with_encoder(encoder)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v, depth)).collect();
            image::ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
                .expect("length checked by ImageBuffer")
                .write_with_encoder(encoder)
        }
    };
    result.map_err(|e| ImageError::Encode(e.to_string()))
}

/// Writes `img` as an RGB PNG at the requested depth.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<(), ImageError> {
    let path = path.as_ref();
    let io_err = |source| ImageError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    write_png(img, depth, &mut writer)?;
    writer.flush().map_err(io_err)
}

pub fn encode_png(img: &ImageBuffer, depth: BitDepth) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    write_png(img, depth, &mut out)?;
    Ok(out)
}

/// 8-bit PNG bytes with the longer side capped at `max_side`.
///
/// Only used for payloads sent to model backends; retouched outputs are
/// never resized.
pub fn encode_png_thumbnail(img: &ImageBuffer, max_side: usize) -> Result<Vec<u8>, ImageError> {
    let longest = img.width().max(img.height());
    if max_side == 0 || longest <= max_side {
        return encode_png(img, BitDepth::Eight);
    }
    let scale = max_side as f64 / longest as f64;
    let tw = ((img.width() as f64 * scale).round() as u32).max(1);
    let th = ((img.height() as f64 * scale).round() as u32).max(1);
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, BitDepth::Eight) as u8).collect();
    let full = image::ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("length checked by ImageBuffer");
    let small = image::imageops::thumbnail(&full, tw, th);
    let mut out = Vec::new();
    small
        .write_with_encoder(PngEncoder::new(&mut out))
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_black_png_as_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        image::RgbImage::new(2, 2).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalizes_8_and_16_bit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("mid.png");
        image::RgbImage::from_pixel(1, 1, Rgb([128, 128, 128])).save(&p8).unwrap();
        let loaded = load_image_detailed(&p8).unwrap();
        assert_eq!(loaded.bit_depth, BitDepth::Eight);
        assert!((loaded.image.data()[0] - 128.0 / 255.0).abs() < 1e-7);
        assert!((loaded.image.data()[0] - 0.50196).abs() < 1e-5);

        let p16 = dir.path().join("max.png");
        image::ImageBuffer::<Rgb<u16>, _>::from_pixel(1, 1, Rgb([65535u16, 0, 65535]))
            .save(&p16)
            .unwrap();
        let loaded = load_image_detailed(&p16).unwrap();
        assert_eq!(loaded.bit_depth, BitDepth::Sixteen);
        assert_eq!(loaded.image.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_round_trip_within_half_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.png");
        let img = ImageBuffer::uniform(3, 2, [0.5; 3]).unwrap();
        save_image(&img, &path, BitDepth::Sixteen).unwrap();
        let back = load_image(&path).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err as f64 <= 1.0 / 131070.0, "{max_err}");
    }

    #[test]
    fn eight_bit_rounds_half_up() {
        assert_eq!(quantize(0.999, BitDepth::Eight), 255);
        assert_eq!(quantize(0.5, BitDepth::Eight), 128);
        assert_eq!(quantize(0.0, BitDepth::Eight), 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.png");
        save_image(&ImageBuffer::uniform(1, 1, [0.999; 3]).unwrap(), &path, BitDepth::Eight).unwrap();
        let raw = image::open(&path).unwrap().into_rgb8();
        assert_eq!(raw.get_pixel(0, 0).0, [255, 255, 255]);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = ImageBuffer::uniform(1, 1, [0.0; 3]).unwrap();
        let err = save_image(&img, "/nonexistent-dir/x/out.png", BitDepth::Eight).unwrap_err();
        assert!(matches!(err, ImageError::Io { .. }));
    }

    #[test]
    fn missing_file_is_io_error_and_garbage_is_decode_error() {
        assert!(matches!(load_image("/no/such/file.png"), Err(ImageError::Io { .. })));
        assert!(matches!(decode_image_bytes(b"not an image"), Err(ImageError::Decode(_))));
    }

    #[test]
    fn alpha_is_dropped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        image::RgbaImage::from_pixel(1, 1, image::Rgba([255, 0, 0, 10])).save(&path).unwrap();
        let loaded = load_image_detailed(&path).unwrap();
        assert_eq!(loaded.image.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn thumbnail_caps_longest_side() {
        let img = ImageBuffer::uniform(40, 20, [0.3; 3]).unwrap();
        let bytes = encode_png_thumbnail(&img, 10).unwrap();
        let decoded = decode_image_bytes(&bytes).unwrap().image;
        assert_eq!((decoded.width(), decoded.height()), (10, 5));
    }
}

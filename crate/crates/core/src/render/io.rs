use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// `TGFM` as a little-endian u32.
pub const FLOAT_MAP_MAGIC: u32 = u32::from_le_bytes(*b"TGFM");

/// Writes a 1-, 3- or 4-channel image in `[0, 1]` as 8-bit PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        4 => image::ExtendedColorType::Rgba8,
        c => return Err(Error::Degenerate(format!("cannot write {c}-channel PNG"))),
    };
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, color)?;
    Ok(())
}

/// Reads a PNG as RGB (alpha dropped) in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_data(w as usize, h as usize, 3, data)
}

/// 16-byte header (magic, width, height, channels as u32 LE), then one
/// f32 LE plane per channel.
pub fn write_float_map(path: &Path, img: &Image) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in [FLOAT_MAP_MAGIC, img.width as u32, img.height as u32, img.channels as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for c in 0..img.channels {
        for p in 0..img.width * img.height {
            out.write_all(&(img.data[p * img.channels + c] as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_float_map(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Degenerate("truncated float map".into()))
    };
    if word(0)? != FLOAT_MAP_MAGIC {
        return Err(Error::Degenerate("not a float map".into()));
    }
    let (w, h, ch) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    if bytes.len() != 16 + 4 * w * h * ch {
        return Err(Error::Degenerate("float map size does not match header".into()));
    }
    let mut img = Image::new(w, h, ch);
    for c in 0..ch {
        for p in 0..w * h {
            let o = 16 + 4 * (c * w * h + p);
            img.data[p * ch + c] = f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.bin");
        let img = Image::from_data(3, 2, 2, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
        write_float_map(&path, &img).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..4], b"TGFM");
        assert_eq!(raw.len(), 16 + 12 * 4);
        // planar: first plane holds channel 0
        assert_eq!(f32::from_le_bytes(raw[20..24].try_into().unwrap()), 0.5 - 1.0);
        assert_eq!(read_float_map(&path).unwrap(), img);
    }

    #[test]
    fn png_round_trip_is_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_data(2, 2, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

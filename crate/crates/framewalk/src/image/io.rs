//! Image file I/O: 8-bit PNG (via the `image` crate, non-interlaced) and
//! binary PPM (P6) / PGM (P5) as the dependency-free golden-test format.
//!
//! Reading maps bytes v -> v/255; writing quantizes round(v * 255), so a
//! write-then-read round trip differs by at most 0.5/255 per pixel.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Read a PNG, PPM (P6) or PGM (P5) file. The format is sniffed from the
/// file's magic bytes, not the extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.starts_with(b"\x89PNG") {
        read_png_bytes(&bytes, path)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        read_pnm_bytes(&bytes, path)
    } else {
        Err(Error::Image(format!("{}: unsupported format", path.display())))
    }
}

/// Write an image; the container is chosen by extension:
/// `.png` (1 or 3 channels), `.ppm` (P6, 3 channels), `.pgm` (P5, 1 channel).
pub fn write_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => write_png(img, path),
        "ppm" => {
            if img.channels() != 3 {
                return Err(Error::Image("PPM (P6) requires 3 channels".into()));
            }
            write_pnm(img, path, b"P6")
        }
        "pgm" => {
            if img.channels() != 1 {
                return Err(Error::Image("PGM (P5) requires 1 channel".into()));
            }
            write_pnm(img, path, b"P5")
        }
        other => Err(Error::Image(format!("unsupported output extension `{other}`"))),
    }
}

fn quantize(img: &ImageBuffer) -> Vec<u8> {
    img.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect()
}

fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<ImageBuffer> {
    let data: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::new(height, width, channels, data)
}

fn read_png_bytes(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {}", path.display(), e)))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            from_bytes(h, w, 1, g.as_raw())
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            from_bytes(h, w, 3, rgb.as_raw())
        }
        // RGBA and palette decode paths normalize through RGB
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            from_bytes(h, w, 3, rgb.as_raw())
        }
    }
}

fn write_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes = quantize(img);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let res = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer sized from image dims")
            .save_with_format(path, image::ImageFormat::Png),
        _ => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer sized from image dims")
            .save_with_format(path, image::ImageFormat::Png),
    };
    res.map_err(|e| Error::Image(format!("{}: {}", path.display(), e)))
}

fn read_pnm_bytes(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut pos = 2usize; // past magic
    let magic = &bytes[..2];
    let channels = if magic == b"P6" { 3 } else { 1 };

    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = read_pnm_int(bytes, &mut pos)
            .ok_or_else(|| Error::Image(format!("{}: truncated header", path.display())))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("{}: only maxval 255 supported", path.display())));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let expected = width * height * channels;
    let raster = bytes.get(pos..pos + expected).ok_or_else(|| {
        Error::Image(format!("{}: truncated raster, expected {} bytes", path.display(), expected))
    })?;
    from_bytes(height, width, channels, raster)
}

/// Parse the next decimal integer, skipping whitespace and `#` comments.
fn read_pnm_int(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

fn write_pnm(img: &ImageBuffer, path: &Path, magic: &[u8]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    out.extend_from_slice(&quantize(img));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn ppm_1x1_white_and_black() {
        let dir = tmpdir();
        for (name, byte, want) in [("w.ppm", 255u8, 1.0f32), ("b.ppm", 0, 0.0)] {
            let path = dir.path().join(name);
            fs::write(&path, [b"P6\n1 1\n255\n".as_slice(), &[byte, byte, byte]].concat()).unwrap();
            let img = read_image(&path).unwrap();
            assert_eq!(img.dims(), (1, 1));
            assert_eq!(img.pixels(), &[want, want, want]);
        }
    }

    #[test]
    fn pgm_values_map_v_over_255() {
        let dir = tmpdir();
        let path = dir.path().join("g.pgm");
        fs::write(&path, [b"P5\n2 1\n255\n".as_slice(), &[128, 64]].concat()).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!(img.channels(), 1);
        assert!((img.pixels()[0] - 0.50196).abs() < 1e-5);
        assert!((img.pixels()[1] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn pnm_comments_are_skipped() {
        let dir = tmpdir();
        let path = dir.path().join("c.pgm");
        fs::write(&path, [b"P5\n# a comment\n2 1\n# another\n255\n".as_slice(), &[0, 255]].concat())
            .unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let dir = tmpdir();
        let path = dir.path().join("t.ppm");
        fs::write(&path, [b"P6\n2 2\n255\n".as_slice(), &[1, 2, 3]].concat()).unwrap();
        let err = read_image(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_image("/nonexistent/nothing.png").is_err());
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        let dir = tmpdir();
        let path = dir.path().join("x.bin");
        fs::write(&path, b"GIF89a").unwrap();
        let err = read_image(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported"));
    }

    #[test]
    fn round_trip_endpoints_exact() {
        let dir = tmpdir();
        for (value, name) in [(0.0f32, "z.png"), (1.0, "o.png")] {
            let img = ImageBuffer::filled(3, 2, 3, value).unwrap();
            let path = dir.path().join(name);
            write_image(&img, &path).unwrap();
            assert_eq!(read_image(&path).unwrap(), img);
        }
    }

    #[test]
    fn round_trip_quantization_error_bounded() {
        // v = 0.3 stores byte 77 and rereads as 0.30196
        let dir = tmpdir();
        let img = ImageBuffer::filled(1, 1, 3, 0.3).unwrap();
        let path = dir.path().join("q.ppm");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert!((back.pixels()[0] - 77.0 / 255.0).abs() < 1e-7);
        assert!((back.pixels()[0] - 0.30196).abs() < 1e-5);
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let dir = tmpdir();
        let gray = ImageBuffer::new(2, 3, 1, (0..6).map(|v| v as f32 / 10.0).collect()).unwrap();
        let rgb = ImageBuffer::new(3, 2, 3, (0..18).map(|v| v as f32 / 20.0).collect()).unwrap();
        for (img, name) in [(gray, "g.png"), (rgb, "c.png")] {
            let path = dir.path().join(name);
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.dims(), img.dims());
            assert_eq!(back.channels(), img.channels());
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
            }
        }
    }
}

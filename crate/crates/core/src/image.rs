//! PNG and binary PPM (P6) decoding, center-crop + box downsampling, and
//! PNG output.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit interleaved image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|d| image_err(path, d))
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes).map_err(|d| image_err(path, d))
    } else {
        Err(image_err(path, "not a PNG or binary PPM (P6) file"))
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("palette was not expanded".into()),
    };
    let channels = if src_channels <= 2 { 1 } else { 3 };
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row.chunks(src_channels).take(w) {
            data.extend_from_slice(&px[..channels]);
        }
    }
    Ok(Image { width: w, height: h, channels, data })
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PPM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PPM header")?;
    }
    let [w, h, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PPM header".into());
    }
    pos += 1;
    if maxval == 0 || maxval > 65535 || w == 0 || h == 0 {
        return Err(format!("unsupported PPM dimensions {w}x{h} maxval {maxval}"));
    }
    let wide = maxval > 255;
    let need = w * h * 3 * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or("truncated PPM raster")?;
    let data = if wide {
        raster
            .chunks(2)
            .map(|b| ((u16::from_be_bytes([b[0], b[1]]) as f64) * 255.0 / maxval as f64).round() as u8)
            .collect()
    } else if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&b| ((b as f64) * 255.0 / maxval as f64).round().min(255.0) as u8)
            .collect()
    };
    Ok(Image { width: w, height: h, channels: 3, data })
}

impl Image {
    /// Center-crops to a square, box-downsamples to `size x size` and
    /// converts to `channels`, returning planar `C x H x W` bytes.
    pub fn prepare(&self, size: usize, channels: usize) -> std::result::Result<Vec<u8>, String> {
        if channels != 1 && channels != 3 {
            return Err(format!("unsupported channel count {channels}"));
        }
        let side = self.width.min(self.height);
        if side < size || size == 0 {
            return Err(format!(
                "image {}x{} is smaller than the target extent {size}",
                self.width, self.height
            ));
        }
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        let mut out = vec![0u8; channels * size * size];
        for i in 0..size {
            let (r0, r1) = (i * side / size, (i + 1) * side / size);
            for j in 0..size {
                let (c0, c1) = (j * side / size, (j + 1) * side / size);
                let mut acc = [0f64; 3];
                for r in r0..r1 {
                    for c in c0..c1 {
                        let p = ((y0 + r) * self.width + x0 + c) * self.channels;
                        for (a, &v) in acc.iter_mut().zip(&self.data[p..p + self.channels]) {
                            *a += v as f64;
                        }
                    }
                }
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                for a in acc.iter_mut() {
                    *a /= count;
                }
                for k in 0..channels {
                    let v = match (self.channels, channels) {
                        (1, _) => acc[0],
                        (3, 1) => (acc[0] + acc[1] + acc[2]) / 3.0,
                        _ => acc[k],
                    };
                    out[(k * size + i) * size + j] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(out)
    }
}

/// Writes planar `C x H x W` values in `[0, 1]` (clamped) as an 8-bit PNG.
pub fn save_png(path: &Path, planar: &[f64], shape: [usize; 3]) -> Result<()> {
    let [c, h, w] = shape;
    if planar.len() != c * h * w || (c != 1 && c != 3) {
        return Err(Error::InvalidShape(format!("cannot write {shape:?} as PNG")));
    }
    let mut px = vec![0u8; c * h * w];
    for k in 0..c {
        for i in 0..h * w {
            px[i * c + k] = (planar[k * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::NoFilter);
    let encode = |enc: png::Encoder<'_, BufWriter<File>>| -> std::result::Result<(), png::EncodingError> {
        let mut writer = enc.write_header()?;
        writer.write_image_data(&px)?;
        writer.finish()
    };
    encode(enc).map_err(|e| image_err(path, e.to_string()))
}

/// Reads a whole file as an image and prepares it, tagging errors with the path.
pub fn load_prepared(path: &Path, size: usize, channels: usize) -> Result<Vec<u8>> {
    let img = load_image(path)?;
    img.prepare(size, channels).map_err(|d| image_err(path, d))
}

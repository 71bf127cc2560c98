//! Netpbm color images (`P3` text and `P6` binary), the only raster format
//! the reconstruction command reads directly.

use std::io::Write;

use super::PipelineError;
use crate::backbone::Image;

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Input(msg.into())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str, PipelineError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(bad("truncated PPM header"));
        }
        std::str::from_utf8(&self.data[start..self.pos]).map_err(|_| bad("PPM header is not ASCII"))
    }

    fn number(&mut self) -> Result<usize, PipelineError> {
        let t = self.token()?;
        t.parse().map_err(|_| bad(format!("bad PPM number {t:?}")))
    }
}

/// Decodes a PPM into an `H x W x 3` image scaled to `[0, 1]`.
pub fn decode_ppm(data: &[u8]) -> Result<Image, PipelineError> {
    let mut c = Cursor { data, pos: 0 };
    let magic = c.token()?.to_string();
    let (w, h, maxval) = (c.number()?, c.number()?, c.number()?);
    if w == 0 || h == 0 || w > 1 << 14 || h > 1 << 14 {
        return Err(bad(format!("PPM size {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("PPM maxval {maxval}")));
    }
    let n = w * h * 3;
    let scale = 1.0 / maxval as f32;
    let values: Vec<f32> = match magic.as_str() {
        "P6" => {
            // Exactly one whitespace byte separates the header from the raster.
            let start = c.pos + 1;
            let width = if maxval < 256 { 1 } else { 2 };
            let raster = data
                .get(start..start + n * width)
                .ok_or_else(|| bad("truncated PPM raster"))?;
            if width == 1 {
                raster.iter().map(|&b| f32::from(b) * scale).collect()
            } else {
                raster
                    .chunks_exact(2)
                    .map(|p| f32::from(u16::from_be_bytes([p[0], p[1]])) * scale)
                    .collect()
            }
        }
        "P3" => (0..n)
            .map(|_| {
                let v = c.number()?;
                if v > maxval {
                    return Err(bad(format!("PPM sample {v} above maxval {maxval}")));
                }
                Ok(v as f32 * scale)
            })
            .collect::<Result<_, _>>()?,
        other => return Err(bad(format!("unsupported image format {other:?}; convert to PPM"))),
    };
    Ok(Image::from_shape_vec((h, w, 3), values).expect("length matches"))
}

/// Encodes an image as 8-bit binary PPM.
pub fn encode_ppm<W: Write>(mut w: W, image: &Image) -> std::io::Result<()> {
    let (h, wd, _) = image.dim();
    write!(w, "P6\n{wd} {h}\n255\n")?;
    let bytes: Vec<u8> = image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)
}

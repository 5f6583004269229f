//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use super::image::Image;
use crate::error::{Error, Result};
use crate::io;

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&io::read(path)?)
}

pub fn save_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    io::write_atomic(path, &encode_ppm(image)?)
}

pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::Contract(format!(
            "PPM stores 3 channels, image has {}",
            image.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.to_u8());
    Ok(out)
}

/// Grayscale `height × width` bytes as a P5 file.
pub fn encode_pgm(height: usize, width: usize, values: &[u8]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Dimension(format!(
            "{height}×{width} PGM needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => self.err(format!("file ends before the {what}")),
                Some(_) => self.err(format!("expected the {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("{what} is out of range"),
            })
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        c.pos = bytes.len();
        return Err(c.err("file ends inside the magic number"));
    }
    if &bytes[..2] != b"P6" {
        return Err(c.err("bad magic number, expected P6"));
    }
    c.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(c.err("expected whitespace after the magic number"));
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("image dimensions must be positive, got {width}×{height}"),
        });
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        Some(_) => return Err(c.err("expected one whitespace byte before the pixel data")),
        None => return Err(c.err("file ends before the pixel data")),
    }
    let need = width as usize * height as usize * 3;
    let data = &bytes[c.pos..];
    if data.len() < need {
        c.pos = bytes.len();
        return Err(c.err(format!(
            "truncated pixel data: {need} bytes expected, {} present",
            data.len()
        )));
    }
    Image::raw(height as usize, width as usize, 3, data[..need].to_vec())
}

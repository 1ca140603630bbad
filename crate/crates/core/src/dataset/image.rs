//! 8-bit grayscale rasters and the portable graymap (PGM) codec.
//!
//! Both the binary (`P5`) and plain (`P2`) variants are read; images are
//! always written as `P5` with maxval 255. Color netpbm variants (`P3`,
//! `P6`) are rejected instead of being converted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Smallest side length accepted by [`GrayImage::new`].
pub const MIN_SIDE: usize = 3;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels supplied for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel intensities.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Row `y` restricted to columns `x..x + len`.
    #[inline]
    pub fn row_span(&self, x: usize, y: usize, len: usize) -> &[u8] {
        let start = y * self.width + x;
        &self.data[start..start + len]
    }

    /// Copies the pixels under `rect` into a new buffer (row-major).
    ///
    /// Unlike [`GrayImage::new`] this allows sub-images smaller than 3x3.
    pub fn crop_pixels(&self, rect: Rect) -> Vec<u8> {
        assert!(rect.x + rect.width <= self.width && rect.y + rect.height <= self.height);
        let mut out = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            out.extend_from_slice(self.row_span(rect.x, y, rect.width));
        }
        out
    }

    pub fn crop(&self, rect: Rect) -> Result<GrayImage> {
        GrayImage::new(rect.width, rect.height, self.crop_pixels(rect))
    }

    /// Encodes as binary PGM (`P5`, maxval 255).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a grayscale image from disk.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// Decodes `P2` or `P5` graymap bytes; `path` is only used for error reporting.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token().ok_or_else(|| malformed("empty file"))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        b"P3" | b"P6" => {
            return Err(Error::NonGrayscale {
                path: path.to_path_buf(),
                format: String::from_utf8_lossy(magic).into_owned(),
            })
        }
        b"P1" | b"P4" | b"P7" => {
            return Err(malformed("unsupported netpbm variant"));
        }
        _ => return Err(malformed("missing P2/P5 magic number")),
    };

    let mut header_value = |what: &str| -> Result<u32> {
        let token = cursor
            .token()
            .ok_or_else(|| malformed(&format!("missing {what}")))?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| malformed(&format!("invalid {what}")))
    };
    let width = header_value("width")? as usize;
    let height = header_value("height")? as usize;
    let maxval = header_value("maxval")?;
    if maxval == 0 {
        return Err(malformed("maxval must be positive"));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            maxval,
        });
    }
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(malformed(&format!(
            "dimensions {width}x{height} below {MIN_SIDE}x{MIN_SIDE}"
        )));
    }

    let count = width * height;
    let data = if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = cursor.pos + 1;
        let raster = bytes
            .get(start..start + count)
            .ok_or_else(|| malformed("truncated raster"))?;
        raster.to_vec()
    } else {
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let token = cursor.token().ok_or_else(|| malformed("truncated raster"))?;
            let value = std::str::from_utf8(token)
                .ok()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| malformed("invalid sample"))?;
            if value > maxval {
                return Err(malformed(&format!("sample {value} exceeds maxval {maxval}")));
            }
            data.push(value as u8);
        }
        data
    };
    if let Some(bad) = data.iter().find(|&&v| v as u32 > maxval) {
        return Err(malformed(&format!("sample {bad} exceeds maxval {maxval}")));
    }
    GrayImage::new(width, height, data)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    /// Next whitespace-delimited token, skipping `#` comments. Leaves `pos`
    /// on the delimiter that ended the token.
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            match self.bytes.get(self.pos)? {
                b'#' => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> Result<GrayImage> {
        decode_pgm(bytes, Path::new("test.pgm"))
    }

    #[test]
    fn constant_binary_graymap() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 16]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (4, 4));
        assert_eq!(img.data(), &[0u8; 16]);
    }

    #[test]
    fn plain_graymap_with_comments() {
        let text = b"P2\n# a comment\n3 3 # trailing\n255\n0 1 2\n3 4 5\n6 7 255\n";
        let img = decode(text).unwrap();
        assert_eq!(img.data(), &[0, 1, 2, 3, 4, 5, 6, 7, 255]);
    }

    #[test]
    fn sixteen_bit_rejected() {
        let bytes = b"P5\n4 4\n65535\n";
        match decode(bytes) {
            Err(Error::UnsupportedBitDepth { maxval, .. }) => assert_eq!(maxval, 65535),
            other => panic!("unexpected {other:?}"),
        }
        let err = decode(bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported bit depth"), "{err}");
    }

    #[test]
    fn color_rejected() {
        let mut bytes = b"P6\n3 3\n255\n".to_vec();
        bytes.extend([0u8; 27]);
        assert!(matches!(decode(&bytes), Err(Error::NonGrayscale { .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode(b""), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"P5\n4\n"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"P5\n4 4\n255\n\x00\x01"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"P2\n3 3\n10\n0 0 0 0 11 0 0 0 0"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"JUNK"), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_image("/nonexistent/dir/img.pgm").unwrap_err();
        assert!(matches!(err, Error::MissingFile { .. }));
        assert!(err.to_string().contains("/nonexistent/dir/img.pgm"));
    }

    #[test]
    fn encode_decode_identity() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 31 + y * 17) as u8).unwrap();
        let back = decode(&img.to_pgm_bytes()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(GrayImage::new(2, 5, vec![0; 10]).is_err());
        assert!(GrayImage::new(3, 3, vec![0; 8]).is_err());
    }
}

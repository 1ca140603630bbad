use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Lengths of the technical, directional, anatomical and biological axes.
pub const AXIS_LENGTHS: [usize; 4] = [4, 3, 3, 3];
pub const CODE_LENGTH: usize = 13;
pub const ALPHABET_SIZE: usize = 36;

/// A 13-character hierarchical IRMA code, `TTTT-DDD-AAA-BBB`.
///
/// Ordering is lexicographic over the 13 characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IrmaCode {
    chars: [u8; CODE_LENGTH],
}

impl IrmaCode {
    /// Builds a code from 13 alphabet characters (no separators).
    pub fn from_chars(chars: [u8; CODE_LENGTH]) -> Result<Self> {
        if let Some(&bad) = chars.iter().find(|c| !is_code_char(**c)) {
            return Err(Error::InvalidIrmaCode {
                code: String::from_utf8_lossy(&chars).into_owned(),
                reason: format!("invalid character {:?}", bad as char),
            });
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[u8; CODE_LENGTH] {
        &self.chars
    }

    /// The four axes in order technical, directional, anatomical, biological.
    pub fn axes(&self) -> [&str; 4] {
        let mut out = [""; 4];
        let mut start = 0;
        for (slot, len) in out.iter_mut().zip(AXIS_LENGTHS) {
            // chars are ASCII alphanumerics
            *slot = std::str::from_utf8(&self.chars[start..start + len]).unwrap();
            start += len;
        }
        out
    }
}

pub fn is_code_char(c: u8) -> bool {
    c.is_ascii_digit() || c.is_ascii_lowercase()
}

/// Character at `index` of the 36-symbol alphabet `0-9a-z`.
pub fn alphabet_char(index: usize) -> u8 {
    b"0123456789abcdefghijklmnopqrstuvwxyz"[index]
}

/// Parses `TTTT-DDD-AAA-BBB`, or the same 13 characters without hyphens.
pub fn parse_irma_code(text: &str) -> Result<IrmaCode> {
    let invalid = |reason: String| Error::InvalidIrmaCode {
        code: text.to_string(),
        reason,
    };
    let text_trimmed = text.trim();
    let compact: Vec<u8> = if text_trimmed.contains('-') {
        let segments: Vec<&str> = text_trimmed.split('-').collect();
        if segments.len() != AXIS_LENGTHS.len() {
            return Err(invalid(format!(
                "expected 4 segments, found {}",
                segments.len()
            )));
        }
        for (i, (seg, len)) in segments.iter().zip(AXIS_LENGTHS).enumerate() {
            if seg.len() != len {
                return Err(invalid(format!(
                    "axis {} has length {}, expected {len}",
                    i + 1,
                    seg.len()
                )));
            }
        }
        segments.concat().into_bytes()
    } else {
        text_trimmed.as_bytes().to_vec()
    };
    if let Some(bad) = compact.iter().find(|c| !is_code_char(**c)) {
        return Err(invalid(format!("invalid character {:?}", *bad as char)));
    }
    let chars: [u8; CODE_LENGTH] = compact
        .try_into()
        .map_err(|v: Vec<u8>| invalid(format!("expected 13 characters, found {}", v.len())))?;
    Ok(IrmaCode { chars })
}

impl fmt::Display for IrmaCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.axes().join("-"))
    }
}

impl FromStr for IrmaCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_irma_code(s)
    }
}

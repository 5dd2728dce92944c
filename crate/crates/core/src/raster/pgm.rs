//! Label maps as binary PGM (P5, maxval 255), one byte per pixel holding
//! the class id.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

use super::LabelMap;

pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(map.len() + 20);
    write!(out, "P5\n{} {}\n255\n", map.width(), map.height()).expect("write to Vec");
    out.extend(map.as_slice().iter().map(|c| c.0));
    out
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            match self.rest.first() {
                Some(b) if b.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&b| b == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 {
            return Err(Error::Pgm(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.rest[..len]).expect("ascii digits");
        let value = text
            .parse::<usize>()
            .map_err(|_| Error::Pgm(format!("{what} {text} too large")))?;
        self.rest = &self.rest[len..];
        Ok(value)
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let rest = bytes
        .strip_prefix(b"P5")
        .ok_or_else(|| Error::Pgm("missing P5 magic".into()))?;
    let mut h = Header { rest };
    if !matches!(h.rest.first(), Some(b) if b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::Pgm("missing whitespace after magic".into()));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Pgm(format!("maxval {maxval}, expected 255")));
    }
    let data = match h.rest.split_first() {
        Some((b, data)) if b.is_ascii_whitespace() => data,
        _ => return Err(Error::Pgm("missing whitespace after maxval".into())),
    };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("image too large".into()))?;
    if data.len() < n {
        return Err(Error::Pgm(format!(
            "truncated pixel data: {} of {n} bytes",
            data.len()
        )));
    }
    if data.len() > n {
        return Err(Error::Pgm(format!("{} trailing bytes", data.len() - n)));
    }
    LabelMap::from_raw(width, height, data)
}

/// Reads a label map, optionally checking every pixel against `taxonomy`.
pub fn read_labelmap(path: impl AsRef<Path>, taxonomy: Option<&Taxonomy>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = decode_pgm(&bytes)?;
    if let Some(t) = taxonomy {
        map.validate(t)?;
    }
    Ok(map)
}

pub fn write_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ClassId;

    #[test]
    fn single_pixel_round_trip() {
        let map = LabelMap::new(1, 1, ClassId(0));
        let bytes = encode_pgm(&map);
        assert_eq!(bytes, b"P5\n1 1\n255\n\0");
        assert_eq!(decode_pgm(&bytes).unwrap(), map);
        assert_eq!(encode_pgm(&decode_pgm(&bytes).unwrap()), bytes);
    }

    #[test]
    fn header_with_comments() {
        let bytes = b"P5 # made by hand\n2 # w\n1\n255\n\x03\x04";
        let map = decode_pgm(bytes).unwrap();
        assert_eq!(map.dims(), (2, 1));
        assert_eq!(map.to_bytes(), vec![3, 4]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n15\n\0").unwrap_err().to_string().contains("maxval"));
        assert!(decode_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\nx 1\n255\n\0").is_err());
        assert!(decode_pgm(b"P51 1\n255\n\0").is_err());
    }

    #[test]
    fn class_id_validation() {
        let t = crate::taxonomy::load_taxonomy(
            &format!(
                r#"{{"classes":[{{"name":"bg","kind":"background"}}{}]}}"#,
                (1..16)
                    .map(|i| format!(r#",{{"name":"c{i}","kind":"glass"}}"#))
                    .collect::<String>()
            ),
        )
        .unwrap();
        assert_eq!(t.len(), 16);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut map = LabelMap::new(2, 2, ClassId(0));
        map.set(1, 1, ClassId(16));
        write_labelmap(&map, &path).unwrap();
        let err = read_labelmap(&path, Some(&t)).unwrap_err();
        assert_eq!(err.to_string(), "class id 16 out of range (K = 16)");
        assert_eq!(read_labelmap(&path, None).unwrap(), map);
    }
}

//! Checkpoint files.
//!
//! ```text
//! NEAF1
//! enc0.weight 64 3
//! enc0.bias 1 64
//! ...
//! out.bias 1 1
//!
//! <little-endian f64 payload, row-major, in header order>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::model::{AngleFieldModel, Architecture};
use crate::error::{Error, Result};

pub const MAGIC: &str = "NEAF1";

pub fn to_bytes(model: &AngleFieldModel) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for ((name, _, _), p) in model.architecture().layout().iter().zip(model.params()) {
        let _ = writeln!(header, "{name} {} {}", p.nrows(), p.ncols());
    }
    header.push('\n');

    let count: usize = model.params().iter().map(|p| p.len()).sum();
    let mut out = header.into_bytes();
    out.reserve(count * 8);
    for p in model.params() {
        // Iteration over an owned standard-layout array is row-major.
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<AngleFieldModel> {
    let magic_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let magic = std::str::from_utf8(&bytes[..magic_end]).map_err(|_| Error::BadMagic)?;
    if magic != MAGIC {
        return match magic.strip_prefix("NEAF") {
            Some(v) if !v.is_empty() && v.chars().all(|c| c.is_ascii_digit()) => {
                Err(Error::VersionMismatch { found: v.to_string() })
            }
            _ => Err(Error::BadMagic),
        };
    }

    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or(Error::TruncatedFile {
            expected: 0,
            found: 0,
        })?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(origin, 0, "header is not UTF-8"))?;

    let mut entries = Vec::new();
    for (i, line) in header.lines().enumerate().skip(1) {
        let mut it = line.split_whitespace();
        let (Some(name), Some(r), Some(c), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(Error::parse(origin, i + 1, format!("bad layer line {line:?}")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(origin, i + 1, format!("bad dimension {s:?}")))
        };
        entries.push((name.to_string(), parse(r)?, parse(c)?));
    }

    let arch = infer_architecture(&entries).ok_or_else(|| {
        Error::parse(origin, 0, "layer list does not describe an angle-field network")
    })?;
    if arch.layout() != entries {
        return Err(Error::parse(origin, 0, "layer list does not match its architecture"));
    }

    let payload = &bytes[header_end + 2..];
    let expected: usize = entries.iter().map(|(_, r, c)| r * c * 8).sum();
    if payload.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::parse(
            origin,
            0,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }

    let mut offset = 0;
    let mut params = Vec::with_capacity(entries.len());
    for (_, r, c) in &entries {
        let n = r * c;
        let values: Vec<f64> = payload[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        offset += 8 * n;
        params.push(Array2::from_shape_vec((*r, *c), values).expect("shape"));
    }
    AngleFieldModel::from_parts(arch, params)
}

fn infer_architecture(entries: &[(String, usize, usize)]) -> Option<Architecture> {
    let shape = |name: &str| {
        entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, r, c)| (*r, *c))
    };
    let mut encoder_widths = Vec::new();
    while let Some((rows, _)) = shape(&format!("enc{}.weight", encoder_widths.len())) {
        encoder_widths.push(rows);
    }
    let mut decoder_layers = 0;
    let mut decoder_width = 0;
    let mut skip_layer = None;
    while let Some((rows, cols)) = shape(&format!("dec{decoder_layers}.weight")) {
        if decoder_layers == 0 {
            decoder_width = rows;
        } else if cols != decoder_width {
            skip_layer = Some(decoder_layers);
        }
        decoder_layers += 1;
    }
    let arch = Architecture {
        encoder_widths,
        decoder_width,
        decoder_layers,
        skip_layer: skip_layer?,
    };
    arch.validate().ok()?;
    Some(arch)
}

pub fn save_model(model: &AngleFieldModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AngleFieldModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::file(path))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AngleFieldModel {
        let arch = Architecture {
            encoder_widths: vec![4, 5],
            decoder_width: 6,
            decoder_layers: 3,
            skip_layer: 2,
        };
        AngleFieldModel::init_with(arch, 1).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small();
        let back = from_bytes(&to_bytes(&m), Path::new("mem")).unwrap();
        assert_eq!(back, m);
        let m = AngleFieldModel::init(2);
        let back = from_bytes(&to_bytes(&m), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_text() {
        let bytes = to_bytes(&small());
        let text = String::from_utf8_lossy(&bytes[..60]);
        assert!(text.starts_with("NEAF1\nenc0.weight 4 3\nenc0.bias 1 4\n"), "{text}");
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = to_bytes(&small());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            from_bytes(cut, Path::new("mem")),
            Err(Error::TruncatedFile { .. })
        ));
        assert!(matches!(
            from_bytes(&bytes[..8], Path::new("mem")),
            Err(Error::TruncatedFile { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad, Path::new("mem")), Err(Error::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(
            from_bytes(&v2, Path::new("mem")),
            Err(Error::VersionMismatch { .. })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra, Path::new("mem")).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.neaf");
        let m = small();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}

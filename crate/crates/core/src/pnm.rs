//! Minimal binary PGM (P5) / PPM (P6) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Quantizes `[0, 1]` to a byte: `round(255·v)`, ties away from zero.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Encodes an `h×w` map or `h×w×c` image (`c` ∈ {1, 3}) as P5/P6 bytes.
pub fn encode(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = match img.shape() {
        &[h, w] => (h, w, 1),
        &[h, w, c] if c == 1 || c == 3 => (h, w, c),
        other => return Err(Error::dim("pnm::encode", format!("cannot encode shape {other:?}"))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    create_parent(path)?;
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

/// Decodes P5/P6 bytes into an `h×w×c` tensor scaled to `[0, 1]`.
/// Creates the directory that will hold `path`, if it has one.
pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let bad = |detail: &str| Error::Image { path: origin.to_path_buf(), detail: detail.into() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1;
    let c = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("expected P5 or P6")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(bad("only 8-bit images with positive extents are supported"));
    }
    let body = bytes.get(pos..pos + w * h * c).ok_or_else(|| bad("truncated pixel data"))?;
    Ok(Tensor::from_parts(vec![h, w, c], body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

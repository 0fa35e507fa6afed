//! The `CTX1` container for precomputed per-token contextual layers.
//!
//! Layout: magic `CTX1`, then little-endian `u32` n_docs, L, D, then per
//! document `u32` T followed by `L·T·D` f32 values, layer-major.

use std::path::Path;

use trollnet_core::context_embed::ContextualLayers;
use trollnet_core::Mat;

use crate::bytes::{check_u32, put_f32s, put_u32, Cursor};
use crate::error::{read_file, write_file, Error, Result};

pub const CTX_MAGIC: &[u8; 4] = b"CTX1";

#[derive(Debug, Clone, PartialEq)]
pub struct CtxFile {
    pub num_layers: usize,
    pub dim: usize,
    pub docs: Vec<ContextualLayers>,
}

impl CtxFile {
    /// Checks that every document has `num_layers` layers of width `dim`.
    pub fn new(num_layers: usize, dim: usize, docs: Vec<ContextualLayers>) -> Result<Self> {
        for (i, d) in docs.iter().enumerate() {
            if d.num_layers() != num_layers || d.dim() != dim {
                return Err(Error::Config(format!(
                    "document {i} has {} layers of width {}, expected {num_layers} of width {dim}",
                    d.num_layers(),
                    d.dim()
                )));
            }
        }
        Ok(CtxFile { num_layers, dim, docs })
    }
}

/// Serializes the valid positions of every document. Values are stored as f32.
pub fn encode_ctx(file: &CtxFile) -> Result<Vec<u8>> {
    check_u32("document count", file.docs.len())?;
    check_u32("layer count", file.num_layers)?;
    check_u32("width", file.dim)?;
    let mut out = Vec::new();
    out.extend_from_slice(CTX_MAGIC);
    put_u32(&mut out, file.docs.len());
    put_u32(&mut out, file.num_layers);
    put_u32(&mut out, file.dim);
    for doc in &file.docs {
        let t = doc.valid_length();
        put_u32(&mut out, t);
        for layer in doc.layers() {
            put_f32s(&mut out, &layer.as_slice()[..t * file.dim]);
        }
    }
    Ok(out)
}

pub fn decode_ctx(bytes: &[u8], path: &Path) -> Result<CtxFile> {
    let mut c = Cursor::new(bytes, path);
    if c.take(4)? != CTX_MAGIC {
        return Err(Error::format(path, "missing CTX1 magic bytes"));
    }
    let (n_docs, num_layers, dim) = (c.usize()?, c.usize()?, c.usize()?);
    if num_layers == 0 || dim == 0 {
        return Err(Error::format(path, format!("header declares L={num_layers}, D={dim}; both must be ≥ 1")));
    }
    let mut docs = Vec::with_capacity(n_docs.min(c.remaining() / 4));
    for i in 0..n_docs {
        let t = c.usize()?;
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let n = t
                .checked_mul(dim)
                .ok_or_else(|| Error::format(path, format!("document {i}: T={t} overflows")))?;
            let values = c.f32s(n)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("document {i}: non-finite value")));
            }
            layers.push(Mat::from_vec(t, dim, values)?);
        }
        docs.push(ContextualLayers::new(layers, t)?);
    }
    if c.remaining() != 0 {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after {n_docs} documents", c.remaining()),
        ));
    }
    Ok(CtxFile { num_layers, dim, docs })
}

pub fn load_precomputed(path: &Path) -> Result<CtxFile> {
    decode_ctx(&read_file(path)?, path)
}

pub fn save_precomputed(path: &Path, file: &CtxFile) -> Result<()> {
    write_file(path, &encode_ctx(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(n: u32, l: u32, d: u32) -> Vec<u8> {
        let mut b = CTX_MAGIC.to_vec();
        for v in [n, l, d] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn floats(b: &mut Vec<u8>, vs: &[f32]) {
        for v in vs {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }

    #[test]
    fn parses_single_document() {
        let mut b = header(1, 1, 2);
        b.extend_from_slice(&2u32.to_le_bytes());
        floats(&mut b, &[1.0, 2.0, 3.0, 4.0]);
        let f = decode_ctx(&b, Path::new("x.ctx")).unwrap();
        assert_eq!((f.num_layers, f.dim, f.docs.len()), (1, 2, 1));
        assert_eq!(f.docs[0].layer(0), &Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        assert_eq!(f.docs[0].valid_length(), 2);
    }

    #[test]
    fn short_document_is_truncation() {
        let mut b = header(1, 1, 2);
        b.extend_from_slice(&3u32.to_le_bytes());
        floats(&mut b, &[1.0, 2.0, 3.0, 4.0]);
        let err = decode_ctx(&b, Path::new("x.ctx")).unwrap_err();
        assert!(
            matches!(err, Error::Truncated { expected, actual, .. } if expected == 44 && actual == 36),
            "{err}"
        );
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut b = header(0, 1, 1);
        assert!(decode_ctx(&b, Path::new("x")).unwrap().docs.is_empty());
        b.push(0);
        assert!(decode_ctx(&b, Path::new("x")).is_err());
        b[0] = b'X';
        assert!(decode_ctx(&b, Path::new("x")).is_err());
        assert!(decode_ctx(&header(1, 0, 2), Path::new("x")).is_err());
    }

    #[test]
    fn mismatched_document_rejected() {
        let docs = vec![ContextualLayers::zeros(2, 3, 4)];
        assert!(CtxFile::new(1, 4, docs).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in (1usize..4, 1usize..5),
            lens in proptest::collection::vec(0usize..6, 0..5),
            seed in any::<u64>(),
        ) {
            let (l, d) = shape;
            let mut r = trollnet_core::rng::seeded(seed);
            let docs: Vec<ContextualLayers> = lens
                .iter()
                .map(|&t| {
                    let layers = (0..l)
                        .map(|_| {
                            let v = trollnet_core::rng::uniform_vec(&mut r, t * d, 10.0);
                            Mat::from_vec(t, d, v.into_iter().map(|x| x as f32 as f64).collect()).unwrap()
                        })
                        .collect();
                    ContextualLayers::new(layers, t).unwrap()
                })
                .collect();
            let file = CtxFile::new(l, d, docs).unwrap();
            let bytes = encode_ctx(&file).unwrap();
            let back = decode_ctx(&bytes, Path::new("x")).unwrap();
            prop_assert_eq!(&back, &file);
            prop_assert_eq!(encode_ctx(&back).unwrap(), bytes);
        }
    }
}

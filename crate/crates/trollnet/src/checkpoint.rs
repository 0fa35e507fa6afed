//! `TGCK` checkpoints.
//!
//! Layout: magic `TGCK`, `u16` version, then groups until end of file. A group
//! is `u32` name length, the UTF-8 name, `u32` rank, `rank × u32` dims and
//! the f32 values, all little-endian. Metadata travels as empty groups named
//! `@key:value` placed before the parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trollnet_core::context_embed::BiLmParams;
use trollnet_core::corpus::Vocabulary;
use trollnet_core::model::{Architecture, ModelAssembly, Pathway};
use trollnet_core::static_embed::Provenance;
use trollnet_core::ParamGroups;

use crate::bytes::{check_u32, put_f32s, put_u32, Cursor};
use crate::error::{read_file, write_file, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

fn group_size(name: &str, shape: &[usize]) -> usize {
    8 + name.len() + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

/// Serializes metadata followed by every group of `params`.
pub fn encode_groups(meta: &[(&str, String)], params: &dyn ParamGroups) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (key, value) in meta {
        let name = format!("@{key}:{value}");
        check_u32("metadata length", name.len())?;
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, 1);
        put_u32(&mut out, 0);
    }
    let mut err = None;
    params.visit("", &mut |name, shape, values| {
        if let Err(e) = shape.iter().try_for_each(|&d| check_u32("dimension", d)) {
            err.get_or_insert(e);
        }
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len());
        for &d in shape {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, values);
    });
    err.map_or(Ok(out), Err)
}

/// A checkpoint whose header and metadata have been read.
pub struct RawCheckpoint<'a> {
    pub meta: BTreeMap<String, String>,
    cursor: Cursor<'a>,
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> RawCheckpoint<'a> {
    pub fn open(bytes: &'a [u8], path: &'a Path) -> Result<Self> {
        let mut c = Cursor::new(bytes, path);
        if c.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "missing TGCK magic bytes"));
        }
        let version = c.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut meta = BTreeMap::new();
        loop {
            let mut peek = Cursor::new(&bytes[bytes.len() - c.remaining()..], path);
            if peek.remaining() < 5 {
                break;
            }
            let len = peek.usize()?;
            if peek.take(1)? != b"@" {
                break;
            }
            let name = std::str::from_utf8(c.take(4).and_then(|_| c.take(len))?)
                .map_err(|_| Error::format(path, "metadata name is not UTF-8"))?;
            let (key, value) = name[1..]
                .split_once(':')
                .ok_or_else(|| Error::format(path, format!("malformed metadata group {name:?}")))?;
            if c.u32()? != 1 || c.u32()? != 0 {
                return Err(Error::format(path, format!("metadata group {key:?} must have shape [0]")));
            }
            meta.insert(key.to_string(), value.to_string());
        }
        Ok(RawCheckpoint {
            meta,
            cursor: c,
            bytes,
            path,
        })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(self.path, format!("missing metadata {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::format(self.path, format!("metadata {key:?} is malformed")))
    }

    pub fn json<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        serde_json::from_str(self.get(key)?)
            .map_err(|e| Error::format(self.path, format!("metadata {key:?}: {e}")))
    }

    /// Overwrites every group of `params` from the file. The file must hold
    /// exactly those groups, in visit order, with matching shapes.
    pub fn fill(mut self, params: &mut dyn ParamGroups) -> Result<()> {
        let mut expected = self.bytes.len() - self.cursor.remaining();
        params.visit("", &mut |name, shape, _| expected += group_size(name, shape));
        if self.bytes.len() < expected {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected,
                actual: self.bytes.len(),
            });
        }
        if self.bytes.len() > expected {
            return Err(Error::format(
                self.path,
                format!("{} bytes beyond the expected {expected}", self.bytes.len() - expected),
            ));
        }
        let mut result = Ok(());
        let c = &mut self.cursor;
        let path = self.path;
        params.visit_mut("", &mut |name, shape, values| {
            if result.is_err() {
                return;
            }
            result = (|| {
                let len = c.usize()?;
                let found = c.take(len)?;
                if found != name.as_bytes() {
                    return Err(Error::format(
                        path,
                        format!("expected group {name:?}, found {:?}", String::from_utf8_lossy(found)),
                    ));
                }
                let rank = c.usize()?;
                let dims = (0..rank).map(|_| c.usize()).collect::<Result<Vec<_>>>()?;
                if dims != shape {
                    return Err(trollnet_core::Error::Shape {
                        what: format!("checkpoint group {name} (dims {dims:?} vs {shape:?})"),
                        expected: shape.iter().product(),
                        actual: dims.iter().product(),
                    }
                    .into());
                }
                let read = c.f32s(values.len())?;
                if read.iter().any(|v| !v.is_finite()) {
                    return Err(Error::format(path, format!("group {name:?} holds a non-finite value")));
                }
                values.copy_from_slice(&read);
                Ok(())
            })();
        });
        result
    }
}

/// A trained classifier together with what is needed to score new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub assembly: ModelAssembly,
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub seed: u64,
    pub epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabMeta {
    min_count: usize,
    tokens: Vec<String>,
}

impl Checkpoint {
    /// Rounds the parameters to f32 so that the stored file reproduces them exactly.
    pub fn new(mut assembly: ModelAssembly, vocab: Vocabulary, max_len: usize, seed: u64, epoch: Option<usize>) -> Self {
        assembly.round_to_f32();
        Checkpoint {
            assembly,
            vocab,
            max_len,
            seed,
            epoch,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let arch = serde_json::to_string(&self.assembly.architecture()).expect("architecture serializes");
        let vocab = serde_json::to_string(&VocabMeta {
            min_count: self.vocab.min_count(),
            tokens: self.vocab.tokens().to_vec(),
        })
        .expect("vocabulary serializes");
        let epoch = self.epoch.map_or("none".to_string(), |e| e.to_string());
        let mut meta = vec![
            ("assembly", arch),
            ("vocab", vocab),
            ("max_len", self.max_len.to_string()),
            ("seed", self.seed.to_string()),
            ("epoch", epoch),
        ];
        if let Pathway::Static(t) = &self.assembly.pathway {
            meta.push(("provenance", serde_json::to_string(&t.provenance).expect("provenance serializes")));
        }
        encode_groups(&meta, &self.assembly)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let raw = RawCheckpoint::open(bytes, path)?;
        let arch: Architecture = raw.json("assembly")?;
        let vocab: VocabMeta = raw.json("vocab")?;
        let vocab = Vocabulary::from_tokens(vocab.tokens, vocab.min_count)?;
        let max_len = raw.parse("max_len")?;
        let seed = raw.parse("seed")?;
        let epoch = match raw.get("epoch")? {
            "none" => None,
            _ => Some(raw.parse("epoch")?),
        };
        let mut assembly = ModelAssembly::from_architecture(&arch)?;
        let provenance: Option<Provenance> = raw.meta.contains_key("provenance").then(|| raw.json("provenance")).transpose()?;
        raw.fill(&mut assembly)?;
        if let (Pathway::Static(t), Some(p)) = (&mut assembly.pathway, provenance) {
            t.provenance = p;
        }
        Ok(Checkpoint {
            assembly,
            vocab,
            max_len,
            seed,
            epoch,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint.encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct BiLmShape {
    vocab_size: usize,
    dim: usize,
    hidden: usize,
}

/// Saves a trained bi-LM with its vocabulary. Parameters are rounded to f32.
pub fn save_bilm(path: &Path, params: &BiLmParams, vocab: &Vocabulary, seed: u64) -> Result<()> {
    let shape = BiLmShape {
        vocab_size: params.vocab_size(),
        dim: params.dim(),
        hidden: params.hidden(),
    };
    let vocab = VocabMeta {
        min_count: vocab.min_count(),
        tokens: vocab.tokens().to_vec(),
    };
    let bytes = encode_groups(
        &[
            ("bilm", serde_json::to_string(&shape).expect("shape serializes")),
            ("vocab", serde_json::to_string(&vocab).expect("vocabulary serializes")),
            ("seed", seed.to_string()),
        ],
        params,
    )?;
    write_file(path, &bytes)
}

pub fn load_bilm(path: &Path) -> Result<(BiLmParams, Vocabulary)> {
    let bytes = read_file(path)?;
    let raw = RawCheckpoint::open(&bytes, path)?;
    let shape: BiLmShape = raw.json("bilm")?;
    let vocab: VocabMeta = raw.json("vocab")?;
    let vocab = Vocabulary::from_tokens(vocab.tokens, vocab.min_count)?;
    if vocab.len() != shape.vocab_size {
        return Err(Error::format(path, "vocabulary size does not match the bi-LM"));
    }
    let mut params = BiLmParams::zeros(shape.vocab_size, shape.dim, shape.hidden);
    raw.fill(&mut params)?;
    Ok((params, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use trollnet_core::encoders::{EncoderConfig, EncoderKind};
    use trollnet_core::model::ModelInput;
    use trollnet_core::static_embed::EmbeddingTable;
    use trollnet_core::{rng, Mat};

    fn vocab() -> Vocabulary {
        let tokens = ["<pad>", "<unk>", "a", "b", "c"].map(String::from).to_vec();
        Vocabulary::from_tokens(tokens, 1).unwrap()
    }

    fn assembly(kind: EncoderKind) -> ModelAssembly {
        let mut r = rng::seeded(3);
        let m = Mat::from_vec(5, 4, rng::uniform_vec(&mut r, 20, 1.0)).unwrap();
        let table = EmbeddingTable::from_matrix(m, Provenance::Trained).unwrap();
        ModelAssembly::new(Pathway::Static(table), &EncoderConfig::with_kind(kind), false, 5).unwrap()
    }

    fn bits(m: &ModelAssembly) -> Vec<u64> {
        let mut out = Vec::new();
        m.visit("", &mut |_, _, v| out.extend(v.iter().map(|x| x.to_bits())));
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in EncoderKind::ALL {
            let ck = Checkpoint::new(assembly(kind), vocab(), 8, 42, Some(3));
            let back = Checkpoint::decode(&ck.encode().unwrap(), Path::new("m.tgck")).unwrap();
            assert_eq!(bits(&back.assembly), bits(&ck.assembly));
            assert_eq!(back, ck);
            let input = ModelInput::from_ids(vec![2, 3, 4, 0], 3);
            assert_eq!(
                back.assembly.forward(&input).unwrap().to_bits(),
                ck.assembly.forward(&input).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn flipped_version_is_rejected() {
        let mut bytes = Checkpoint::new(assembly(EncoderKind::Gru), vocab(), 8, 0, None).encode().unwrap();
        bytes[4] ^= 0xff;
        let err = Checkpoint::decode(&bytes, Path::new("m.tgck")).unwrap_err();
        assert!(matches!(err, Error::Version { found: 254, expected: 1, .. }), "{err}");
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let bytes = Checkpoint::new(assembly(EncoderKind::Cnn), vocab(), 8, 0, None).encode().unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 37, 40, 3] {
            let err = Checkpoint::decode(&bytes[..cut], Path::new("m.tgck")).unwrap_err();
            match err {
                Error::Truncated { expected, actual, .. } => {
                    assert_eq!(actual, cut);
                    assert!(expected > cut);
                    if cut > 1000 {
                        assert_eq!(expected, bytes.len());
                    }
                }
                other => panic!("cut {cut}: {other}"),
            }
        }
    }

    #[test]
    fn wider_model_does_not_load() {
        let ck = Checkpoint::new(assembly(EncoderKind::Gru), vocab(), 8, 0, None);
        let bytes = ck.encode().unwrap();
        let raw = RawCheckpoint::open(&bytes, Path::new("m")).unwrap();
        let mut wider = ModelAssembly::from_architecture(&Architecture {
            encoder: EncoderConfig {
                gru_hidden: 15,
                ..ck.assembly.architecture().encoder
            },
            ..ck.assembly.architecture()
        })
        .unwrap();
        assert!(raw.fill(&mut wider).is_err());
    }

    #[test]
    fn bilm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.tgck");
        let mut params = BiLmParams::init(5, 3, 4, 9).unwrap();
        params.round_to_f32();
        save_bilm(&path, &params, &vocab(), 9).unwrap();
        let (back, v) = load_bilm(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(v, vocab());
    }
}

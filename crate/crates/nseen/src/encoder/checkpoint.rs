//! Versioned binary model checkpoints: magic `NSE1`, config + vocabulary
//! header, little-endian 64-bit parameter payload, SHA-256 trailer.
//!
//! The trailing digest doubles as the model fingerprint that index files
//! record, so artifact compatibility is checkable without re-reading
//! parameters.

use std::io::{Read, Write};

use super::{CharVocab, EncoderConfig, EncoderModel, EncoderParams, Pooling};
use crate::bytesio::{CheckedReader, CheckedWriter};
use crate::{Error, Result};

const MODEL_MAGIC: &str = "NSE1";
const MODEL_VERSION: u32 = 1;

/// Serializes the model; returns its fingerprint (the trailing digest).
pub fn save_model<W: Write>(model: &EncoderModel, writer: W) -> Result<[u8; 32]> {
    let mut w = CheckedWriter::new(writer);
    w.write_bytes(MODEL_MAGIC.as_bytes())?;
    w.write_u32(MODEL_VERSION)?;

    let cfg = &model.config;
    w.write_usize(cfg.char_embed_dim)?;
    w.write_usize(cfg.hidden_dim)?;
    w.write_usize(cfg.num_recurrent_layers)?;
    w.write_usize(cfg.output_dim)?;
    w.write_usize(cfg.max_sequence_length)?;
    w.write_u8(match cfg.pooling {
        Pooling::LastHidden => 0,
        Pooling::Mean => 1,
    })?;

    let chars = model.vocab.chars();
    w.write_usize(chars.len())?;
    for &c in chars {
        w.write_u32(c as u32)?;
    }

    for chunk in model.params.flat_chunks() {
        for &v in chunk {
            w.write_f64(v)?;
        }
    }
    w.finish()
}

/// The fingerprint a model's checkpoint would carry, without writing one.
pub fn model_fingerprint(model: &EncoderModel) -> Result<[u8; 32]> {
    save_model(model, std::io::sink())
}

/// Loads a checkpoint, verifying version and integrity; returns the model
/// and its fingerprint.
pub fn load_model<R: Read>(reader: R) -> Result<(EncoderModel, [u8; 32])> {
    let mut r = CheckedReader::new(reader);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.read_u32()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }

    let char_embed_dim = r.read_usize()?;
    let hidden_dim = r.read_usize()?;
    let num_recurrent_layers = r.read_usize()?;
    let output_dim = r.read_usize()?;
    let max_sequence_length = r.read_usize()?;
    let pooling = match r.read_u8()? {
        0 => Pooling::LastHidden,
        1 => Pooling::Mean,
        other => return Err(Error::Corrupt(format!("unknown pooling tag {other}"))),
    };
    let config = EncoderConfig {
        char_embed_dim,
        hidden_dim,
        num_recurrent_layers,
        output_dim,
        max_sequence_length,
        pooling,
    };
    config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;

    let char_count = r.read_usize()?;
    if char_count > (1 << 24) {
        return Err(Error::Corrupt(format!("implausible vocab size {char_count}")));
    }
    let mut chars = Vec::with_capacity(char_count);
    for _ in 0..char_count {
        let code = r.read_u32()?;
        let c = char::from_u32(code)
            .ok_or_else(|| Error::Corrupt(format!("invalid code point {code:#x}")))?;
        chars.push(c);
    }
    let vocab = CharVocab::from_chars(chars, max_sequence_length);

    let mut params = EncoderParams::zeros(&config, vocab.size());
    for chunk in params.flat_chunks_mut() {
        for v in chunk {
            *v = r.read_f64()?;
        }
    }
    if !params.all_finite() {
        return Err(Error::Corrupt("non-finite parameter values".into()));
    }
    let digest = r.verify_checksum()?;

    Ok((
        EncoderModel {
            config,
            vocab,
            params,
        },
        digest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::refset::ReferenceSet;

    fn model() -> EncoderModel {
        let r = ReferenceSet::from_pairs([("E1", "abc"), ("E2", "xyz")]).unwrap();
        let config = EncoderConfig {
            char_embed_dim: 3,
            hidden_dim: 4,
            num_recurrent_layers: 2,
            output_dim: 5,
            max_sequence_length: 10,
            pooling: Pooling::Mean,
        };
        let vocab = CharVocab::build(&r, config.max_sequence_length).unwrap();
        let params = init_params(&config, &vocab, 17).unwrap();
        EncoderModel {
            config,
            vocab,
            params,
        }
    }

    #[test]
    fn checkpoint_roundtrips_bitwise() {
        let m = model();
        let mut buf = Vec::new();
        let fp_saved = save_model(&m, &mut buf).unwrap();
        let (loaded, fp_loaded) = load_model(buf.as_slice()).unwrap();
        assert_eq!(m, loaded);
        assert_eq!(fp_saved, fp_loaded);

        // Same model serialized twice yields the same fingerprint.
        let mut buf2 = Vec::new();
        let fp2 = save_model(&m, &mut buf2).unwrap();
        assert_eq!(fp_saved, fp2);
        assert_eq!(buf, buf2);
    }

    #[test]
    fn truncated_checkpoint_fails_to_load() {
        let m = model();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 33);
        assert!(load_model(buf.as_slice()).is_err());
    }

    #[test]
    fn flipped_bit_is_an_integrity_error() {
        let m = model();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        let mid = buf.len() / 2;
        buf[mid] ^= 0x40;
        let err = load_model(buf.as_slice()).unwrap_err();
        assert!(
            matches!(err, Error::ChecksumMismatch | Error::Corrupt(_)),
            "unexpected error {err}"
        );
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let m = model();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        buf[4] = 99;
        assert!(matches!(
            load_model(buf.as_slice()),
            Err(Error::VersionMismatch { expected: 1, found: 99 })
        ));
    }
}

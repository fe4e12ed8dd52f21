//! Engine state and its versioned, checksummed file format.
//!
//! Layout: `"IPQS"`, u32 version, u64 payload length, u32 CRC-32 of the
//! payload, then the bincode payload. All integers little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderParams, DocidTrie, FisherDiag};
use crate::error::{Error, Result};
use crate::harness::report::SessionBlock;
use crate::metrics::SessionMatrix;
use crate::pq::{Codebook, DocId, PqCode};
use crate::repr::ProjectorParams;

pub const STATE_MAGIC: &[u8; 4] = b"IPQS";
pub const STATE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedCode {
    pub doc: DocId,
    pub code: PqCode,
    /// Session in which the document was indexed.
    pub session: u32,
}

/// Everything needed to continue an experiment after the last completed
/// session. The docid trie is derived from `codes` and rebuilt on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub config_digest: u32,
    /// Last completed session.
    pub session: u32,
    pub codebook: Codebook,
    /// In indexing order.
    pub codes: Vec<IssuedCode>,
    pub decoder: DecoderParams,
    pub fisher: Option<FisherDiag>,
    pub projector: Option<ProjectorParams>,
    pub matrix: SessionMatrix,
    pub blocks: Vec<SessionBlock>,
}

impl EngineState {
    pub fn trie(&self) -> Result<DocidTrie> {
        DocidTrie::from_codes(self.codebook.num_groups(), self.codes.iter().map(|c| (c.doc, &c.code)))
    }

    /// Check that codes, codebook and decoder agree.
    pub fn validate(&self) -> Result<()> {
        if self.decoder.sizes() != self.codebook.sizes() {
            return Err(Error::state("decoder rows do not match codebook sizes"));
        }
        if self.codebook.session != self.session {
            return Err(Error::state("codebook session does not match engine session"));
        }
        if let Some(f) = &self.fisher {
            if f.0.sizes() != self.decoder.sizes() {
                return Err(Error::state("Fisher shape does not match decoder"));
            }
        }
        for c in &self.codes {
            if c.session > self.session {
                return Err(Error::state(format!("document {} indexed in a future session", c.doc)));
            }
            self.codebook.check_code(&c.code)?;
        }
        Ok(())
    }

    /// Serialized payload size in bytes.
    pub fn payload_bytes(&self) -> u64 {
        bincode::serialized_size(self).expect("state serializes")
    }
}

pub fn encode_state(state: &EngineState) -> Result<Vec<u8>> {
    let payload = bincode::serialize(state).map_err(|e| Error::state(format!("cannot serialize state: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_state(buf: &[u8]) -> Result<EngineState> {
    if buf.len() < HEADER_LEN {
        return Err(Error::format(
            0,
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", buf.len()),
        ));
    }
    if &buf[..4] != STATE_MAGIC {
        return Err(Error::format(0, "bad magic, not an engine state file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version > STATE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: STATE_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::format(4, "version 0 is not valid"));
    }
    let len = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let crc = u32::from_le_bytes(buf[16..20].try_into().unwrap());
    let payload = &buf[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::format(
            HEADER_LEN as u64,
            format!("payload length mismatch: expected {len} bytes, found {}", payload.len()),
        ));
    }
    if crc32fast::hash(payload) != crc {
        return Err(Error::Corruption("checksum mismatch".into()));
    }
    let state: EngineState =
        bincode::deserialize(payload).map_err(|e| Error::Corruption(format!("cannot decode payload: {e}")))?;
    state.validate()?;
    Ok(state)
}

pub fn save_state(state: &EngineState, path: &Path) -> Result<()> {
    let bytes = encode_state(state)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<EngineState> {
    decode_state(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq::codebook_from_centroids;

    fn tiny() -> EngineState {
        let cb = codebook_from_centroids(2, vec![vec![vec![0.0], vec![1.0]]; 2]).unwrap();
        EngineState {
            config_digest: 7,
            session: 0,
            decoder: DecoderParams::zeros(2, &cb.sizes()),
            codebook: cb,
            codes: vec![IssuedCode {
                doc: 3,
                code: PqCode(vec![1, 0]),
                session: 0,
            }],
            fisher: None,
            projector: None,
            matrix: SessionMatrix::from_rows(vec![vec![0.5]]).unwrap(),
            blocks: Vec::new(),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = tiny();
        let bytes = encode_state(&s).unwrap();
        let back = decode_state(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_state(&back).unwrap(), bytes);
        assert_eq!(back.trie().unwrap().docs_for(&PqCode(vec![1, 0])), &[3]);
    }

    #[test]
    fn rejects_bad_files() {
        let bytes = encode_state(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_state(&bad), Err(Error::Format { .. })));
        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_state(&newer),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_state(&flipped), Err(Error::Corruption(_))));
        assert!(decode_state(&bytes[..bytes.len() - 1]).is_err());
    }
}

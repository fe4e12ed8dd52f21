//! Binary corpus formats and the on-disk dataset layout.
//!
//! EMB1: `"EMB1"`, u32 count, u32 dim, then `count * dim` f32, all
//! little-endian, row-major. TOK1: `"TOK1"`, u32 count, u32 token dim,
//! then per document a u32 token count followed by its token vectors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{format_qrels, parse_qrels, Qrels};
use crate::repr::TokenDocument;
use crate::vector::Vector;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const TOK_MAGIC: &[u8; 4] = b"TOK1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vector> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, "size overflow"))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_embeddings(buf: &[u8]) -> Result<Vec<Vector>> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(EMB_MAGIC)?;
    let count = r.u32("header")? as usize;
    let dim = r.u32("header")? as usize;
    let expected = count as u64 * dim as u64 * 4;
    let available = (buf.len() - r.pos) as u64;
    if available < expected {
        return Err(Error::format(
            r.pos as u64,
            format!("truncated payload: expected {expected} bytes, found {available}"),
        ));
    }
    let flat = r.floats(count * dim, "payload")?;
    r.finish()?;
    if dim == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(flat.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

/// Values are stored as f32.
pub fn encode_embeddings(rows: &[Vector]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("rows have mixed dimensions"));
    }
    let mut out = Vec::with_capacity(12 + rows.len() * dim * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in rows {
        for v in r {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<Vector>> {
    decode_embeddings(&fs::read(path)?)
}

pub fn save_embeddings(path: &Path, rows: &[Vector]) -> Result<()> {
    fs::write(path, encode_embeddings(rows)?)?;
    Ok(())
}

pub fn decode_tokens(buf: &[u8]) -> Result<Vec<TokenDocument>> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(TOK_MAGIC)?;
    let count = r.u32("header")? as usize;
    let dim = r.u32("header")? as usize;
    let mut docs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("token count")? as usize;
        if len == 0 || dim == 0 {
            return Err(Error::format(at as u64, "document without tokens"));
        }
        let flat = r.floats(len * dim, "token vectors")?;
        docs.push(TokenDocument {
            tokens: flat.chunks_exact(dim).map(<[f64]>::to_vec).collect(),
        });
    }
    r.finish()?;
    Ok(docs)
}

pub fn encode_tokens(docs: &[TokenDocument]) -> Result<Vec<u8>> {
    let dim = docs.first().map_or(0, TokenDocument::token_dim);
    let mut out = Vec::new();
    out.extend_from_slice(TOK_MAGIC);
    out.extend_from_slice(&(docs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in docs {
        if d.is_empty() || d.token_dim() != dim {
            return Err(Error::invalid(
                "token documents must be non-empty with a uniform dimension",
            ));
        }
        out.extend_from_slice(&(d.len() as u32).to_le_bytes());
        for t in &d.tokens {
            for v in t {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn load_tokens(path: &Path) -> Result<Vec<TokenDocument>> {
    decode_tokens(&fs::read(path)?)
}

pub fn save_tokens(path: &Path, docs: &[TokenDocument]) -> Result<()> {
    fs::write(path, encode_tokens(docs)?)?;
    Ok(())
}

/// Everything an experiment reads. Document `i` has id `i`; query `j` of
/// either query file has id `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub docs: Vec<Vector>,
    pub tokens: Option<Vec<TokenDocument>>,
    pub train_queries: Vec<Vector>,
    pub train_qrels: Qrels,
    pub test_queries: Vec<Vector>,
    pub test_qrels: Qrels,
}

pub const DOCS_FILE: &str = "docs.emb";
pub const TOKENS_FILE: &str = "docs.tok";
pub const TRAIN_QUERIES_FILE: &str = "train_queries.emb";
pub const TRAIN_QRELS_FILE: &str = "train.qrels";
pub const TEST_QUERIES_FILE: &str = "test_queries.emb";
pub const TEST_QRELS_FILE: &str = "test.qrels";

impl Dataset {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.docs.len() as u32;
        if let Some(t) = &self.tokens {
            if t.len() != self.docs.len() {
                return Err(Error::invalid(
                    "token file and embedding file disagree on document count",
                ));
            }
        }
        for (name, queries, qrels) in [
            ("train", &self.train_queries, &self.train_qrels),
            ("test", &self.test_queries, &self.test_qrels),
        ] {
            for (q, r) in qrels.iter() {
                if q as usize >= queries.len() {
                    return Err(Error::invalid(format!("{name} qrels mention unknown query {q}")));
                }
                if r.doc >= n {
                    return Err(Error::invalid(format!(
                        "{name} query {q} points at unknown document {}",
                        r.doc
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let tok_path = dir.join(TOKENS_FILE);
        let ds = Self {
            docs: load_embeddings(&dir.join(DOCS_FILE))?,
            tokens: if tok_path.exists() {
                Some(load_tokens(&tok_path)?)
            } else {
                None
            },
            train_queries: load_embeddings(&dir.join(TRAIN_QUERIES_FILE))?,
            train_qrels: parse_qrels(&fs::read_to_string(dir.join(TRAIN_QRELS_FILE))?)?,
            test_queries: load_embeddings(&dir.join(TEST_QUERIES_FILE))?,
            test_qrels: parse_qrels(&fs::read_to_string(dir.join(TEST_QRELS_FILE))?)?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_embeddings(&dir.join(DOCS_FILE), &self.docs)?;
        if let Some(t) = &self.tokens {
            save_tokens(&dir.join(TOKENS_FILE), t)?;
        }
        save_embeddings(&dir.join(TRAIN_QUERIES_FILE), &self.train_queries)?;
        fs::write(dir.join(TRAIN_QRELS_FILE), format_qrels(&self.train_qrels))?;
        save_embeddings(&dir.join(TEST_QUERIES_FILE), &self.test_queries)?;
        fs::write(dir.join(TEST_QRELS_FILE), format_qrels(&self.test_qrels))?;
        Ok(())
    }
}

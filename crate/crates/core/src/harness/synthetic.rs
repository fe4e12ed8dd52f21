//! Gaussian-mixture benchmark generator.
//!
//! Documents are drawn around cluster centres; every cluster has its own
//! small query offset, and each query is its document plus that offset and
//! isotropic noise. One train query and one test query per document.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::io::Dataset;
use crate::metrics::Qrels;
use crate::repr::TokenDocument;
use crate::vector::{RandomSource, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_docs: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Std of cluster centres around the origin.
    pub center_std: f64,
    /// Std of documents around their centre.
    pub doc_std: f64,
    /// Std of the per-cluster query offset.
    pub query_shift: f64,
    /// Std of the per-query noise.
    pub query_std: f64,
    /// When set, documents are emitted as token sequences and `docs.emb`
    /// holds their mean-pooled tokens.
    pub tokens: Option<TokenSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpec {
    pub min_len: usize,
    pub max_len: usize,
    pub token_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_docs: 500,
            dim: 16,
            clusters: 20,
            center_std: 1.0,
            doc_std: 0.35,
            query_shift: 0.05,
            query_std: 0.08,
            tokens: None,
            seed: 0,
        }
    }
}

fn gaussian(rng: &mut RandomSource, mean: &[f64], std: f64) -> Vector {
    mean.iter().map(|m| m + std * rng.standard_normal()).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.num_docs == 0 || cfg.dim == 0 || cfg.clusters == 0 {
        return Err(Error::invalid("num_docs, dim and clusters must be positive"));
    }
    for s in [cfg.center_std, cfg.doc_std, cfg.query_shift, cfg.query_std] {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
    }
    if let Some(t) = cfg.tokens {
        if t.min_len == 0 || t.min_len > t.max_len || !(t.token_std >= 0.0) {
            return Err(Error::invalid("token lengths must satisfy 1 <= min_len <= max_len"));
        }
    }
    let root = RandomSource::new(cfg.seed);
    let mut rng = root.fork(&[1]);
    let zero = vec![0.0; cfg.dim];
    let centers: Vec<Vector> = (0..cfg.clusters)
        .map(|_| gaussian(&mut rng, &zero, cfg.center_std))
        .collect();
    let shifts: Vec<Vector> = (0..cfg.clusters)
        .map(|_| gaussian(&mut rng, &zero, cfg.query_shift))
        .collect();

    let mut docs = Vec::with_capacity(cfg.num_docs);
    let mut tokens = cfg.tokens.map(|_| Vec::with_capacity(cfg.num_docs));
    let mut membership = Vec::with_capacity(cfg.num_docs);
    let mut trng = root.fork(&[2]);
    for _ in 0..cfg.num_docs {
        let c = rng.index(cfg.clusters);
        membership.push(c);
        let latent = gaussian(&mut rng, &centers[c], cfg.doc_std);
        match (cfg.tokens, tokens.as_mut()) {
            (Some(spec), Some(out)) => {
                let len = trng.int_inclusive(spec.min_len, spec.max_len);
                let doc = TokenDocument::new((0..len).map(|_| gaussian(&mut trng, &latent, spec.token_std)).collect())?;
                docs.push(doc.pooled());
                out.push(doc);
            }
            _ => docs.push(latent),
        }
    }

    let mut qrng = root.fork(&[3]);
    let mut make_queries = || -> Result<(Vec<Vector>, Qrels)> {
        let mut qs = Vec::with_capacity(cfg.num_docs);
        let mut qrels = Qrels::new();
        for (i, d) in docs.iter().enumerate() {
            let shifted: Vector = d.iter().zip(&shifts[membership[i]]).map(|(a, b)| a + b).collect();
            qs.push(gaussian(&mut qrng, &shifted, cfg.query_std));
            qrels.insert(i as u32, i as u32, 0)?;
        }
        Ok((qs, qrels))
    };
    let (train_queries, train_qrels) = make_queries()?;
    let (test_queries, test_qrels) = make_queries()?;
    Ok(Dataset {
        docs,
        tokens,
        train_queries,
        train_qrels,
        test_queries,
        test_qrels,
    })
}

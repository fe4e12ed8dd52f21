//! Memory-bank construction by PQ-code perturbation and pseudo-query pairs.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pq::{Codebook, DocId, PqCode};
use crate::vector::{RandomSource, Vector};

/// Lookup from a code to the documents that carry it, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct CodeIndex {
    by_code: HashMap<PqCode, Vec<DocId>>,
    code_of: HashMap<DocId, PqCode>,
}

impl CodeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_codes<'a>(codes: impl IntoIterator<Item = (DocId, &'a PqCode)>) -> Self {
        let mut idx = Self::new();
        for (id, code) in codes {
            idx.insert(id, code.clone());
        }
        idx
    }

    /// Insert or move `id` under `code`.
    pub fn insert(&mut self, id: DocId, code: PqCode) {
        if let Some(old) = self.code_of.insert(id, code.clone()) {
            if let Some(list) = self.by_code.get_mut(&old) {
                list.retain(|&d| d != id);
                if list.is_empty() {
                    self.by_code.remove(&old);
                }
            }
        }
        self.by_code.entry(code).or_default().push(id);
    }

    pub fn lookup(&self, code: &PqCode) -> &[DocId] {
        self.by_code.get(code).map_or(&[], Vec::as_slice)
    }

    pub fn code_of(&self, id: DocId) -> Option<&PqCode> {
        self.code_of.get(&id)
    }

    pub fn len(&self) -> usize {
        self.code_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code_of.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = DocId> + '_ {
        self.code_of.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankEntry {
    pub old_doc: DocId,
    pub source_doc: DocId,
    /// Number of code positions changed to reach the old document.
    pub changed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub session: u32,
    pub entries: Vec<BankEntry>,
}

impl MemoryBank {
    /// Distinct old documents in order of first appearance.
    pub fn unique_docs(&self) -> Vec<DocId> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.old_doc))
            .map(|e| e.old_doc)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per entry: session, old doc, source doc, changed positions.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.session, e.old_doc, e.source_doc, e.changed
            ));
        }
        out
    }
}

/// Largest number of perturbed positions: `max(1, floor(M / 6))`.
pub fn max_perturbation(groups: usize) -> usize {
    (groups / 6).max(1)
}

/// Draw `c` codes that differ from `code` in exactly `o` positions, with
/// duplicates removed (first occurrence kept). Groups with a single
/// centroid cannot change and are never selected; if fewer than `o`
/// groups are changeable the result is empty.
pub fn perturb_codes(code: &PqCode, o: usize, c: usize, cb: &Codebook, rng: &mut RandomSource) -> Result<Vec<PqCode>> {
    let m = code.len();
    if o == 0 || o > m {
        return Err(Error::invalid(format!(
            "cannot change {o} positions of a length-{m} code"
        )));
    }
    if c == 0 {
        return Err(Error::invalid("repeat count must be at least 1"));
    }
    cb.check_code(code)?;
    let sizes = cb.sizes();
    let selectable: Vec<usize> = (0..m).filter(|&g| sizes[g] >= 2).collect();
    if selectable.len() < o {
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..c {
        let mut new = code.clone();
        for pick in rng.sample_indices(selectable.len(), o) {
            let g = selectable[pick];
            let old = code.0[g] as usize;
            // uniform over the other K_m - 1 indices
            let mut k = rng.index(sizes[g] - 1);
            if k >= old {
                k += 1;
            }
            new.0[g] = k as u32;
        }
        if seen.insert(new.clone()) {
            out.push(new);
        }
    }
    Ok(out)
}

/// For every new document, perturb its code at `o = 1..=o_max` positions,
/// `c` times per level, and collect the old documents that carry any of
/// the perturbed codes. Each old document is kept once per source document
/// with the smallest `o` at which it was found.
///
/// Every source document draws from its own stream keyed by its id, so the
/// result does not depend on the order in which new documents are visited.
pub fn build_memory_bank(
    session: u32,
    new_codes: &[(DocId, PqCode)],
    index: &CodeIndex,
    c: usize,
    cb: &Codebook,
    rng: &RandomSource,
) -> Result<MemoryBank> {
    let mut bank = MemoryBank {
        session,
        entries: Vec::new(),
    };
    if index.is_empty() {
        return Ok(bank);
    }
    let o_max = max_perturbation(cb.num_groups());
    for (src, code) in new_codes {
        let mut doc_rng = rng.fork(&[u64::from(session), u64::from(*src)]);
        let mut found: BTreeMap<DocId, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for o in 1..=o_max.min(code.len()) {
            for cand in perturb_codes(code, o, c, cb, &mut doc_rng)? {
                for &old in index.lookup(&cand) {
                    if let Entry::Vacant(e) = found.entry(old) {
                        e.insert(o);
                        order.push(old);
                    }
                }
            }
        }
        bank.entries.extend(order.into_iter().map(|old| BankEntry {
            old_doc: old,
            source_doc: *src,
            changed: found[&old],
        }));
    }
    Ok(bank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoQueryPair {
    pub query: Vector,
    pub target: DocId,
    pub code: PqCode,
}

/// Noise-based stand-in for a learned query generator: `n_q` queries, each
/// the document embedding plus isotropic Gaussian noise of std `sigma`.
pub fn generate_pseudo_queries(
    doc: DocId,
    embedding: &[f64],
    code: &PqCode,
    n_q: usize,
    sigma: f64,
    rng: &mut RandomSource,
) -> Result<Vec<PseudoQueryPair>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    if n_q == 0 {
        return Err(Error::invalid("n_q must be at least 1"));
    }
    Ok((0..n_q)
        .map(|_| PseudoQueryPair {
            query: embedding
                .iter()
                .map(|v| {
                    if sigma == 0.0 {
                        *v
                    } else {
                        v + sigma * rng.standard_normal()
                    }
                })
                .collect(),
            target: doc,
            code: code.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq::codebook_from_centroids;

    fn binary_codebook(m: usize) -> Codebook {
        codebook_from_centroids(m, vec![vec![vec![0.0], vec![1.0]]; m]).unwrap()
    }

    #[test]
    fn single_flip_neighbours_saturate() {
        let cb = binary_codebook(4);
        let code = PqCode(vec![0, 1, 0, 1]);
        let mut got = perturb_codes(&code, 1, 200, &cb, &mut RandomSource::new(1)).unwrap();
        got.sort();
        let mut oracle: Vec<PqCode> = (0..4)
            .map(|g| {
                let mut c = code.clone();
                c.0[g] ^= 1;
                c
            })
            .collect();
        oracle.sort();
        assert_eq!(got, oracle);
    }

    #[test]
    fn full_flip_and_hamming() {
        let cb = binary_codebook(2);
        let out = perturb_codes(&PqCode(vec![0, 0]), 2, 10, &cb, &mut RandomSource::new(0)).unwrap();
        assert_eq!(out, vec![PqCode(vec![1, 1])]);

        let cb = codebook_from_centroids(
            3,
            vec![
                vec![vec![0.0], vec![1.0], vec![2.0]],
                vec![vec![0.0]],
                vec![vec![0.0], vec![1.0]],
            ],
        )
        .unwrap();
        let code = PqCode(vec![2, 0, 1]);
        let mut rng = RandomSource::new(5);
        for o in 1..=2 {
            for p in perturb_codes(&code, o, 50, &cb, &mut rng).unwrap() {
                assert_eq!(p.hamming(&code), o);
                assert_eq!(p.0[1], 0, "single-centroid group must not change");
                cb.check_code(&p).unwrap();
            }
        }
        // only two changeable groups
        assert!(perturb_codes(&code, 3, 5, &cb, &mut rng).unwrap().is_empty());
        assert!(perturb_codes(&code, 4, 5, &cb, &mut rng).is_err());
    }

    #[test]
    fn o_max_rule() {
        assert_eq!(max_perturbation(24), 4);
        assert_eq!(max_perturbation(4), 1);
        assert_eq!(max_perturbation(12), 2);
    }

    #[test]
    fn empty_index_gives_empty_bank() {
        let cb = binary_codebook(4);
        let bank = build_memory_bank(
            1,
            &[(9, PqCode(vec![0; 4]))],
            &CodeIndex::new(),
            10,
            &cb,
            &RandomSource::new(0),
        )
        .unwrap();
        assert!(bank.is_empty());
    }

    #[test]
    fn bank_is_subset_of_hamming_ball_and_order_free() {
        let cb = binary_codebook(4);
        let mut rng = RandomSource::new(3);
        let old: Vec<(DocId, PqCode)> = (0..8)
            .map(|i| (i, PqCode((0..4).map(|_| rng.index(2) as u32).collect())))
            .collect();
        let index = CodeIndex::from_codes(old.iter().map(|(i, c)| (*i, c)));
        let new: Vec<(DocId, PqCode)> = (100..104)
            .map(|i| (i, PqCode((0..4).map(|_| rng.index(2) as u32).collect())))
            .collect();
        let seed = RandomSource::new(77);
        let bank = build_memory_bank(1, &new, &index, 10, &cb, &seed).unwrap();
        for e in &bank.entries {
            let src = &new.iter().find(|(i, _)| *i == e.source_doc).unwrap().1;
            let oc = &old[e.old_doc as usize].1;
            let h = src.hamming(oc);
            assert!((1..=1).contains(&h));
            assert_eq!(e.changed, h);
        }
        let mut reversed = new.clone();
        reversed.reverse();
        let other = build_memory_bank(1, &reversed, &index, 10, &cb, &seed).unwrap();
        let as_set = |b: &MemoryBank| {
            let mut v: Vec<_> = b.entries.iter().map(|e| (e.source_doc, e.old_doc, e.changed)).collect();
            v.sort();
            v
        };
        assert_eq!(as_set(&bank), as_set(&other));
    }

    #[test]
    fn pseudo_queries() {
        let code = PqCode(vec![1, 2]);
        let emb = vec![0.5; 8];
        let none = generate_pseudo_queries(4, &emb, &code, 3, 0.0, &mut RandomSource::new(0)).unwrap();
        assert_eq!(none.len(), 3);
        assert!(none.iter().all(|p| p.query == emb && p.code == code && p.target == 4));

        let mut rng = RandomSource::new(9);
        let many = generate_pseudo_queries(4, &emb, &code, 10_000, 0.1, &mut rng).unwrap();
        for d in 0..8 {
            let vals: Vec<f64> = many.iter().map(|p| p.query[d] - 0.5).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.095..=0.105).contains(&std), "{std}");
        }
        assert!(generate_pseudo_queries(4, &emb, &code, 0, 0.1, &mut rng).is_err());
        assert!(generate_pseudo_queries(4, &emb, &code, 1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn code_index_moves_docs() {
        let mut idx = CodeIndex::new();
        idx.insert(1, PqCode(vec![0, 0]));
        idx.insert(2, PqCode(vec![0, 0]));
        assert_eq!(idx.lookup(&PqCode(vec![0, 0])), &[1, 2]);
        idx.insert(1, PqCode(vec![1, 0]));
        assert_eq!(idx.lookup(&PqCode(vec![0, 0])), &[2]);
        assert_eq!(idx.lookup(&PqCode(vec![1, 0])), &[1]);
        assert!(idx.lookup(&PqCode(vec![1, 1])).is_empty());
        assert_eq!(idx.len(), 2);
    }
}

//! Product-quantization codebook: group division, per-group k-means, and
//! document-to-docid quantization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{self, kmeans, squared_dist, RandomSource, Vector};

pub type DocId = u32;

/// A docid: one zero-based centroid index per group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PqCode(pub Vec<u32>);

impl PqCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn hamming(&self, other: &PqCode) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for PqCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

/// One centroid and the sub-vectors assigned to it.
///
/// Member distances to the centroid are cached and recomputed lazily after
/// the centroid moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    centroid: Vector,
    members: Vec<DocId>,
    member_vecs: Vec<f64>,
    dist_cache: Vec<f64>,
    stale: bool,
}

impl Cluster {
    pub fn new(centroid: Vector) -> Self {
        Self {
            centroid,
            members: Vec::new(),
            member_vecs: Vec::new(),
            dist_cache: Vec::new(),
            stale: false,
        }
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn members(&self) -> &[DocId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.member_vecs.chunks_exact(self.centroid.len().max(1))
    }

    pub(crate) fn push_member(&mut self, id: DocId, sub: &[f64]) {
        self.members.push(id);
        self.member_vecs.extend_from_slice(sub);
        if !self.stale {
            self.dist_cache.push(squared_dist(sub, &self.centroid).sqrt());
        }
    }

    pub(crate) fn set_centroid(&mut self, centroid: Vector) {
        self.centroid = centroid;
        self.stale = true;
    }

    /// Euclidean distances of every member to the current centroid.
    pub fn member_distances(&mut self) -> &[f64] {
        if self.stale {
            let c = &self.centroid;
            self.dist_cache = self
                .member_vecs
                .chunks_exact(c.len().max(1))
                .map(|m| squared_dist(m, c).sqrt())
                .collect();
            self.stale = false;
        }
        &self.dist_cache
    }

    /// Mean of the member sub-vectors, if there are any.
    pub fn member_mean(&self) -> Option<Vector> {
        if self.members.is_empty() {
            return None;
        }
        let dim = self.centroid.len();
        let mut mean = vec![0.0; dim];
        for m in self.member_vectors() {
            for (a, v) in mean.iter_mut().zip(m) {
                *a += v;
            }
        }
        let n = self.members.len() as f64;
        mean.iter_mut().for_each(|a| *a /= n);
        Some(mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCodebook {
    pub group: usize,
    pub sub_dim: usize,
    pub clusters: Vec<Cluster>,
}

impl SubCodebook {
    pub fn num_centroids(&self) -> usize {
        self.clusters.len()
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        self.clusters[k].centroid()
    }

    /// Nearest centroid index and its squared distance; ties to lowest index.
    pub fn nearest(&self, sub: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.clusters.iter().enumerate() {
            let d = squared_dist(sub, &c.centroid);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        (best, best_d)
    }
}

/// The full codebook: `M` sub-codebooks over a `D`-dimensional space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub session: u32,
    pub dim: usize,
    pub groups: Vec<SubCodebook>,
}

impl Codebook {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.groups.len()
    }

    /// Centroid count per group (`K_m`).
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(SubCodebook::num_centroids).collect()
    }

    pub fn total_centroids(&self) -> usize {
        self.groups.iter().map(SubCodebook::num_centroids).sum()
    }

    pub fn check_code(&self, code: &PqCode) -> Result<()> {
        if code.len() != self.groups.len() {
            return Err(Error::invalid(format!(
                "code has {} entries, codebook has {} groups",
                code.len(),
                self.groups.len()
            )));
        }
        for (m, (&k, g)) in code.0.iter().zip(&self.groups).enumerate() {
            if k as usize >= g.num_centroids() {
                return Err(Error::invalid(format!(
                    "code index {k} out of range for group {m} with {} centroids",
                    g.num_centroids()
                )));
            }
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector has dimension {}, codebook expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Slice `x` into `m` contiguous sub-vectors of equal length.
pub fn split_groups(x: &[f64], m: usize) -> Result<Vec<&[f64]>> {
    if m == 0 || !x.len().is_multiple_of(m) || x.is_empty() {
        return Err(Error::invalid(format!(
            "dimension {} is not divisible into {m} groups",
            x.len()
        )));
    }
    Ok(x.chunks_exact(x.len() / m).collect())
}

/// Run k-means independently in each group over `embeddings` and return the
/// session-0 codebook together with the base codes (same order as input).
pub fn build_base_codebook<V: AsRef<[f64]>>(
    ids: &[DocId],
    embeddings: &[V],
    m: usize,
    k: usize,
    rng: &mut RandomSource,
    max_iters: usize,
) -> Result<(Codebook, Vec<PqCode>)> {
    if ids.len() != embeddings.len() {
        return Err(Error::invalid("ids and embeddings differ in length"));
    }
    if embeddings.len() < k || k == 0 {
        return Err(Error::invalid(format!(
            "need at least K = {k} documents, got {}",
            embeddings.len()
        )));
    }
    let dim = embeddings[0].as_ref().len();
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "dimension {dim} is not divisible into {m} groups"
        )));
    }
    for e in embeddings {
        if e.as_ref().len() != dim {
            return Err(Error::invalid("embeddings have mixed dimensions"));
        }
        vector::ensure_finite(e.as_ref(), "embedding")?;
    }
    let sub_dim = dim / m;

    let mut groups = Vec::with_capacity(m);
    let mut codes = vec![vec![0u32; m]; embeddings.len()];
    for g in 0..m {
        let subs: Vec<&[f64]> = embeddings
            .iter()
            .map(|e| &e.as_ref()[g * sub_dim..(g + 1) * sub_dim])
            .collect();
        let mut group_rng = rng.fork(&[g as u64]);
        let res = kmeans(&subs, k, &mut group_rng, max_iters)?;
        let mut clusters: Vec<Cluster> = res.centroids.into_iter().map(Cluster::new).collect();
        for (i, &a) in res.assignments.iter().enumerate() {
            clusters[a].push_member(ids[i], subs[i]);
            codes[i][g] = a as u32;
        }
        groups.push(SubCodebook {
            group: g,
            sub_dim,
            clusters,
        });
    }
    let cb = Codebook {
        session: 0,
        dim,
        groups,
    };
    Ok((cb, codes.into_iter().map(PqCode).collect()))
}

/// Nearest centroid in each group.
pub fn quantize(x: &[f64], cb: &Codebook) -> Result<PqCode> {
    cb.check_dim(x)?;
    let sd = cb.sub_dim();
    Ok(PqCode(
        cb.groups
            .iter()
            .enumerate()
            .map(|(g, sub)| sub.nearest(&x[g * sd..(g + 1) * sd]).0 as u32)
            .collect(),
    ))
}

/// Concatenate the centroids a code points to.
pub fn reconstruct(code: &PqCode, cb: &Codebook) -> Result<Vector> {
    cb.check_code(code)?;
    let mut out = Vec::with_capacity(cb.dim);
    for (&k, sub) in code.0.iter().zip(&cb.groups) {
        out.extend_from_slice(sub.centroid(k as usize));
    }
    Ok(out)
}

/// Squared quantization error of `x` under `code`.
pub fn quantization_error(x: &[f64], code: &PqCode, cb: &Codebook) -> Result<f64> {
    cb.check_dim(x)?;
    Ok(squared_dist(x, &reconstruct(code, cb)?))
}

/// Codebook with explicit centroids and no memberships; handy for tests and
/// for callers that manage memberships themselves.
pub fn codebook_from_centroids(dim: usize, groups: Vec<Vec<Vector>>) -> Result<Codebook> {
    let m = groups.len();
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(Error::invalid("dimension not divisible by group count"));
    }
    let sub_dim = dim / m;
    let mut subs = Vec::with_capacity(m);
    for (g, cents) in groups.into_iter().enumerate() {
        if cents.is_empty() || cents.iter().any(|c| c.len() != sub_dim) {
            return Err(Error::invalid(format!("group {g} has malformed centroids")));
        }
        subs.push(SubCodebook {
            group: g,
            sub_dim,
            clusters: cents.into_iter().map(Cluster::new).collect(),
        });
    }
    Ok(Codebook {
        session: 0,
        dim,
        groups: subs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut RandomSource, n: usize, d: usize) -> Vec<Vector> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
            .collect()
    }

    #[test]
    fn split_groups_slices() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(split_groups(&x, 2).unwrap(), vec![&[1.0, 2.0][..], &[3.0, 4.0][..]]);
        assert_eq!(split_groups(&x, 1).unwrap(), vec![&x[..]]);
        assert!(split_groups(&x, 3).is_err());
        let big = vec![0.5; 768];
        let parts = split_groups(&big, 24).unwrap();
        assert_eq!(parts.len(), 24);
        assert!(parts.iter().all(|p| p.len() == 32));
        assert_eq!(parts.concat(), big);
    }

    #[test]
    fn k_equals_n_has_zero_error() {
        let docs = vec![
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 2.0, 2.0],
            vec![0.0, 1.0, 3.0, 3.0],
            vec![1.0, 1.0, 4.0, 4.0],
        ];
        let (cb, codes) = build_base_codebook(&[0, 1, 2, 3], &docs, 2, 4, &mut RandomSource::new(0), 50).unwrap();
        for (d, c) in docs.iter().zip(&codes) {
            assert_eq!(quantization_error(d, c, &cb).unwrap(), 0.0);
        }
    }

    #[test]
    fn base_codes_are_true_nearest() {
        let mut rng = RandomSource::new(4);
        let docs = random_matrix(&mut rng, 64, 8);
        let ids: Vec<DocId> = (0..64).collect();
        let (cb, codes) = build_base_codebook(&ids, &docs, 2, 4, &mut rng, 50).unwrap();
        assert_eq!(cb.sizes(), vec![4, 4]);
        for (d, code) in docs.iter().zip(&codes) {
            for g in 0..2 {
                let sub = &d[g * 4..(g + 1) * 4];
                let mut best = (0, f64::INFINITY);
                for k in 0..4 {
                    let dist: f64 = sub
                        .iter()
                        .zip(cb.groups[g].centroid(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if dist < best.1 {
                        best = (k, dist);
                    }
                }
                assert_eq!(code.0[g] as usize, best.0);
            }
        }
        // membership means equal centroids at convergence
        for g in &cb.groups {
            for c in &g.clusters {
                let mean = c.member_mean().unwrap();
                for (a, b) in mean.iter().zip(c.centroid()) {
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn identical_embeddings_share_codes() {
        let mut rng = RandomSource::new(8);
        let mut docs = random_matrix(&mut rng, 20, 4);
        docs.push(docs[3].clone());
        let ids: Vec<DocId> = (0..21).collect();
        let (_, codes) = build_base_codebook(&ids, &docs, 2, 3, &mut rng, 50).unwrap();
        assert_eq!(codes[3], codes[20]);
    }

    #[test]
    fn too_few_docs() {
        let docs = vec![vec![0.0, 1.0]];
        assert!(build_base_codebook(&[0], &docs, 1, 2, &mut RandomSource::new(0), 5).is_err());
    }

    #[test]
    fn quantize_exact_centroid_and_tie_break() {
        let cb = codebook_from_centroids(
            4,
            vec![
                vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 3.0]],
                vec![vec![5.0, 5.0], vec![-1.0, 0.0]],
            ],
        )
        .unwrap();
        let x = [3.0, 3.0, 5.0, 5.0];
        assert_eq!(quantize(&x, &cb).unwrap(), PqCode(vec![3, 0]));
        assert_eq!(reconstruct(&PqCode(vec![3, 0]), &cb).unwrap(), x.to_vec());
        // 1.5 is equidistant from centroids 1 and 2
        let tie = [1.5, 0.0, 5.0, 5.0];
        assert_eq!(quantize(&tie, &cb).unwrap().0[0], 1);
        assert!(quantize(&[0.0; 3], &cb).is_err());
        assert!(reconstruct(&PqCode(vec![4, 0]), &cb).is_err());
    }

    #[test]
    fn quantize_matches_exhaustive_scan() {
        let mut rng = RandomSource::new(12);
        let docs = random_matrix(&mut rng, 80, 8);
        let ids: Vec<DocId> = (0..80).collect();
        let (cb, _) = build_base_codebook(&ids, &docs, 4, 5, &mut rng, 50).unwrap();
        for x in random_matrix(&mut rng, 200, 8) {
            let code = quantize(&x, &cb).unwrap();
            let mut per_group_min = 0.0;
            for g in 0..4 {
                let sub = &x[g * 2..g * 2 + 2];
                let dists: Vec<f64> = (0..5).map(|k| squared_dist(sub, cb.groups[g].centroid(k))).collect();
                let best = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |a, (k, &d)| if d < a.1 { (k, d) } else { a });
                assert_eq!(code.0[g] as usize, best.0);
                per_group_min += best.1;
            }
            let err = quantization_error(&x, &code, &cb).unwrap();
            assert!((err - per_group_min).abs() < 1e-12);
            // any other code is no better
            let alt = PqCode((0..4).map(|_| rng.index(5) as u32).collect());
            assert!(quantization_error(&x, &alt, &cb).unwrap() >= err - 1e-12);
        }
    }

    #[test]
    fn degenerate_single_centroid() {
        let cb = codebook_from_centroids(3, vec![vec![vec![1.0, 2.0, 3.0]]]).unwrap();
        assert_eq!(quantize(&[9.0, 9.0, 9.0], &cb).unwrap(), PqCode(vec![0]));
        assert_eq!(reconstruct(&PqCode(vec![0]), &cb).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn codebook_serialization_round_trip() {
        let mut rng = RandomSource::new(2);
        let docs = random_matrix(&mut rng, 30, 6);
        let ids: Vec<DocId> = (0..30).collect();
        let (cb, _) = build_base_codebook(&ids, &docs, 3, 4, &mut rng, 50).unwrap();
        let bytes = bincode::serialize(&cb).unwrap();
        let back: Codebook = bincode::deserialize(&bytes).unwrap();
        assert_eq!(back, cb);
        assert_eq!(bincode::serialize(&back).unwrap(), bytes);
    }
}

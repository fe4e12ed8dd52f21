//! Numeric primitives shared by every other module: distances, Lloyd's
//! k-means and a seedable random source.
//!
//! Everything here is pure given an explicit [`RandomSource`]. The random
//! source is a ChaCha8 stream keyed by a 64-bit seed, so identical seeds and
//! call sequences reproduce identical draws on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(squared_dist(a, b).sqrt())
}

/// Squared Euclidean distance. Callers guarantee equal lengths.
#[inline]
pub fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest<C: AsRef<[f64]>>(x: &[f64], centroids: &[C]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = squared_dist(x, c.as_ref());
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    (best, best_d)
}

pub fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite values")))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of keys into an independent child seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Seeded random stream. Not meant to be shared between concurrent callers.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fresh stream keyed by `(self.seed, keys)`; does not advance `self`.
    pub fn fork(&self, keys: &[u64]) -> Self {
        Self::new(derive_seed(self.seed, keys))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            // still advance the stream so call sequences stay aligned
            let _ = self.uniform();
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// `k` distinct indices from `[0, n)` in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, n, k).into_vec()
    }
}

/// Beta(alpha, beta) draw built from two Gamma variates.
pub fn beta_sample(alpha: f64, beta: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "beta shape parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    let x = rng.gamma(alpha)?;
    let y = rng.gamma(beta)?;
    let s = x + y;
    if s <= 0.0 {
        // both gammas underflowed; only possible for tiny shapes
        return Ok(if alpha >= beta { 1.0 } else { 0.0 });
    }
    Ok((x / s).clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vector>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

pub const DEFAULT_KMEANS_ITERS: usize = 50;

/// Lloyd's k-means.
///
/// Initial centroids are `k` distinct input points chosen uniformly at
/// random. A cluster that ends up empty is reseeded with the point farthest
/// from its current centroid. Iteration stops when no assignment changes or
/// after `max_iters` update rounds; the returned assignments are always the
/// nearest-centroid assignments for the returned centroids.
pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    rng: &mut RandomSource,
    max_iters: usize,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means requires k >= 1"));
    }
    if points.is_empty() {
        return Err(Error::invalid("k-means requires a non-empty input"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::invalid("k-means input has mixed dimensions"));
        }
        ensure_finite(p, "k-means input")?;
    }

    let mut centroids: Vec<Vector> = rng
        .sample_indices(points.len(), k)
        .into_iter()
        .map(|i| points[i].as_ref().to_vec())
        .collect();

    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0f64; points.len()];
    let assign = |centroids: &[Vector], assignments: &mut [usize], dists: &mut [f64]| -> (usize, f64) {
        let mut changed = 0;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p.as_ref(), centroids);
            if assignments[i] != c {
                changed += 1;
                assignments[i] = c;
            }
            dists[i] = d;
            inertia += d;
        }
        (changed, inertia)
    };

    let (_, inertia) = assign(&centroids, &mut assignments, &mut dists);
    let mut history = vec![inertia];
    let mut converged = false;

    for _ in 0..max_iters {
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
        // Empty clusters: take the point farthest from its centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (far, far_d) = dists
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            if far_d <= 0.0 {
                break;
            }
            centroids[c] = points[far].as_ref().to_vec();
            counts[assignments[far]] -= 1;
            counts[c] = 1;
            dists[far] = 0.0;
        }

        let (changed, inertia) = assign(&centroids, &mut assignments, &mut dists);
        history.push(inertia);
        if changed == 0 {
            converged = true;
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        inertia_history: history,
        converged,
    })
}

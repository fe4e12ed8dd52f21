//! Discriminative document representations learned from token embeddings.
//!
//! A small tanh projector maps mean-pooled token vectors to the codebook
//! space. Training alternates per-group k-means over the current document
//! representations with gradient steps on a span-level contrastive loss
//! plus the squared quantization error under the frozen assignments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pq::{build_base_codebook, reconstruct, Codebook, DocId, PqCode};
use crate::vector::{beta_sample, dot, RandomSource, Vector, DEFAULT_KMEANS_ITERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDocument {
    pub tokens: Vec<Vector>,
}

impl TokenDocument {
    pub fn new(tokens: Vec<Vector>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("a token document needs at least one token"));
        }
        let dim = tokens[0].len();
        if tokens.iter().any(|t| t.len() != dim) {
            return Err(Error::invalid("token vectors have mixed dimensions"));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Mean of all token vectors.
    pub fn pooled(&self) -> Vector {
        mean_of(&self.tokens)
    }
}

fn mean_of(rows: &[Vector]) -> Vector {
    let mut out = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Word,
    Phrase,
    Sentence,
    Paragraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularitySpec {
    pub level: Granularity,
    pub min_len: usize,
    pub max_len: usize,
}

impl GranularitySpec {
    pub fn new(level: Granularity, min_len: usize, max_len: usize) -> Result<Self> {
        if min_len == 0 || min_len > max_len {
            return Err(Error::invalid(format!(
                "span bounds must satisfy 1 <= min <= max, got ({min_len}, {max_len})"
            )));
        }
        Ok(Self {
            level,
            min_len,
            max_len,
        })
    }

    /// Word 1..4, phrase 4..16, sentence 16..64, paragraph 64..128 tokens.
    pub fn default_levels() -> [GranularitySpec; 4] {
        [
            GranularitySpec {
                level: Granularity::Word,
                min_len: 1,
                max_len: 4,
            },
            GranularitySpec {
                level: Granularity::Phrase,
                min_len: 4,
                max_len: 16,
            },
            GranularitySpec {
                level: Granularity::Sentence,
                min_len: 16,
                max_len: 64,
            },
            GranularitySpec {
                level: Granularity::Paragraph,
                min_len: 64,
                max_len: 128,
            },
        ]
    }
}

/// Half-open token window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Draw a span for a document of `n` tokens.
///
/// Length is `round(p * (max - min)) + min` with `p ~ Beta(alpha, beta)`,
/// clamped to `[1, n - 1]` so a span never covers the whole document. The
/// start is uniform over `[1, n - len]`.
pub fn sample_span(n: usize, spec: &GranularitySpec, alpha: f64, beta: f64, rng: &mut RandomSource) -> Result<Span> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "a document of {n} token(s) has no proper sub-span"
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::invalid("invalid granularity bounds"));
    }
    let p = beta_sample(alpha, beta, rng)?;
    let raw = (p * (spec.max_len - spec.min_len) as f64).round() as usize + spec.min_len;
    let len = raw.clamp(1, n - 1);
    let start = rng.int_inclusive(1, n - len);
    Ok(Span {
        start,
        end: start + len,
    })
}

/// Average of the token vectors inside `span`.
pub fn pool_span(doc: &TokenDocument, span: Span) -> Result<Vector> {
    if span.is_empty() {
        return Err(Error::invalid("cannot pool an empty span"));
    }
    if span.end > doc.len() {
        return Err(Error::invalid(format!(
            "span [{}, {}) exceeds document length {}",
            span.start,
            span.end,
            doc.len()
        )));
    }
    Ok(mean_of(&doc.tokens[span.start..span.end]))
}

/// Two-layer tanh projector `W2 tanh(W1 p + b1) + b2`. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ProjectorParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn random(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut RandomSource) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden_dim as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = s1 * rng.standard_normal());
        p.w2.iter_mut().for_each(|w| *w = s2 * rng.standard_normal());
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn slices(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Flat parameter access in the order w1, b1, w2, b2.
    pub fn get(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    /// `self -= step * grad`
    pub fn descend(&mut self, grad: &ProjectorParams, step: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(grad.slices()) {
            for (d, g) in dst.iter_mut().zip(src) {
                *d -= step * g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Returns `(hidden activations, output)`.
    pub fn forward(&self, input: &[f64]) -> (Vector, Vector) {
        let (e, h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        let hidden: Vector = (0..h)
            .map(|r| (dot(&self.w1[r * e..(r + 1) * e], input) + self.b1[r]).tanh())
            .collect();
        let out: Vector = (0..d)
            .map(|r| dot(&self.w2[r * h..(r + 1) * h], &hidden) + self.b2[r])
            .collect();
        (hidden, out)
    }

    /// Accumulate parameter gradients for one forward pass into `grads`.
    pub fn backward(&self, input: &[f64], hidden: &[f64], grad_out: &[f64], grads: &mut ProjectorParams) {
        let (e, h, d) = (self.input_dim, self.hidden_dim, self.output_dim);
        let mut grad_hidden = vec![0.0; h];
        for r in 0..d {
            let g = grad_out[r];
            if g == 0.0 {
                continue;
            }
            grads.b2[r] += g;
            let row = &self.w2[r * h..(r + 1) * h];
            let grow = &mut grads.w2[r * h..(r + 1) * h];
            for j in 0..h {
                grow[j] += g * hidden[j];
                grad_hidden[j] += g * row[j];
            }
        }
        for j in 0..h {
            let ga = grad_hidden[j] * (1.0 - hidden[j] * hidden[j]);
            if ga == 0.0 {
                continue;
            }
            grads.b1[j] += ga;
            for (w, x) in grads.w1[j * e..(j + 1) * e].iter_mut().zip(input) {
                *w += ga * x;
            }
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "projector expects inputs of dimension {}, got {}",
                self.input_dim,
                input.len()
            )));
        }
        Ok(())
    }

    /// Project an already pooled vector.
    pub fn project(&self, input: &[f64]) -> Result<Vector> {
        self.check_input(input)?;
        Ok(self.forward(input).1)
    }
}

/// Representation of a whole document: projector applied to its mean token.
pub fn doc_embedding(doc: &TokenDocument, proj: &ProjectorParams) -> Result<Vector> {
    proj.project(&doc.pooled())
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    /// Gradient with respect to each input representation.
    pub grads: Vec<Vector>,
}

/// Span-level contrastive loss.
///
/// `reps` holds `n_docs` consecutive blocks of `1 + spans_per_doc` vectors:
/// the whole-document representation followed by its spans. For each
/// document the positives are its own spans and the softmax runs over
/// every other representation in the batch. Similarity is the dot product
/// divided by `tau`; the per-document terms are summed.
pub fn contrastive_loss(reps: &[Vector], n_docs: usize, spans_per_doc: usize, tau: f64) -> Result<LossAndGrad> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let block = spans_per_doc + 1;
    if spans_per_doc == 0 || n_docs == 0 || reps.len() != n_docs * block {
        return Err(Error::invalid(format!(
            "expected {n_docs} x (1 + {spans_per_doc}) representations, got {}",
            reps.len()
        )));
    }
    let dim = reps[0].len();
    if reps.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("representations have mixed dimensions"));
    }
    let total = reps.len();
    let mut grads = vec![vec![0.0; dim]; total];
    let mut loss = 0.0;
    let inv_s = 1.0 / spans_per_doc as f64;
    let mut logits = vec![0.0; total];
    let mut coef = vec![0.0; total];
    for i in 0..n_docs {
        let a = i * block;
        let anchor = &reps[a];
        let mut max = f64::NEG_INFINITY;
        for (j, r) in reps.iter().enumerate() {
            if j == a {
                continue;
            }
            logits[j] = dot(anchor, r) / tau;
            max = max.max(logits[j]);
        }
        let mut z = 0.0;
        for j in (0..total).filter(|&j| j != a) {
            z += (logits[j] - max).exp();
        }
        let lse = max + z.ln();
        let pos_mean = (a + 1..a + block).map(|s| logits[s]).sum::<f64>() * inv_s;
        loss += lse - pos_mean;

        for j in 0..total {
            coef[j] = if j == a { 0.0 } else { (logits[j] - lse).exp() };
        }
        for c in &mut coef[a + 1..a + block] {
            *c -= inv_s;
        }
        let mut g_anchor = vec![0.0; dim];
        for (j, r) in reps.iter().enumerate() {
            let c = coef[j] / tau;
            if j == a || c == 0.0 {
                continue;
            }
            for d in 0..dim {
                g_anchor[d] += c * r[d];
                grads[j][d] += c * anchor[d];
            }
        }
        for d in 0..dim {
            grads[a][d] += g_anchor[d];
        }
    }
    Ok(LossAndGrad { loss, grads })
}

/// Sum of squared distances between each representation and its
/// reconstruction under `codes`; the reconstructions are held constant.
pub fn clustering_loss_with_codes(reps: &[Vector], codes: &[PqCode], cb: &Codebook) -> Result<LossAndGrad> {
    if reps.len() != codes.len() {
        return Err(Error::invalid("representation and code counts differ"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(reps.len());
    for (x, code) in reps.iter().zip(codes) {
        if x.len() != cb.dim {
            return Err(Error::invalid(format!(
                "representation has dimension {}, codebook expects {}",
                x.len(),
                cb.dim
            )));
        }
        let xhat = reconstruct(code, cb)?;
        let g: Vector = x.iter().zip(&xhat).map(|(a, b)| 2.0 * (a - b)).collect();
        loss += x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        grads.push(g);
    }
    Ok(LossAndGrad { loss, grads })
}

/// Clustering loss with each representation quantized under `cb` first.
pub fn clustering_loss(reps: &[Vector], cb: &Codebook) -> Result<LossAndGrad> {
    let codes = reps
        .iter()
        .map(|x| crate::pq::quantize(x, cb))
        .collect::<Result<Vec<_>>>()?;
    clustering_loss_with_codes(reps, &codes, cb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    pub groups: usize,
    pub centroids: usize,
    pub epochs: usize,
    pub tau: f64,
    /// Spans drawn per granularity level (`G`).
    pub spans_per_level: usize,
    pub step_size: f64,
    pub inner_iters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub levels: Vec<GranularitySpec>,
    pub kmeans_iters: usize,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            groups: 24,
            centroids: 256,
            epochs: 2,
            tau: 1.0,
            spans_per_level: 5,
            step_size: 1e-2,
            inner_iters: 20,
            alpha: 4.0,
            beta: 2.0,
            batch_size: 32,
            levels: GranularitySpec::default_levels().to_vec(),
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    /// Combined objective before each accepted step and after the last one.
    pub losses: Vec<f64>,
    pub mse_at_start: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRepr {
    pub projector: ProjectorParams,
    pub codebook: Codebook,
    pub codes: Vec<PqCode>,
    pub embeddings: Vec<Vector>,
    pub epochs: Vec<EpochTrace>,
    pub initial_mse: f64,
    pub final_mse: f64,
}

/// Pooled inputs for one epoch: per document, the whole-document mean
/// followed by one mean per sampled span.
struct EpochInputs {
    pooled: Vec<Vec<Vector>>,
    batches: Vec<Vec<usize>>,
    spans_per_doc: usize,
}

fn sample_epoch(corpus: &[TokenDocument], cfg: &ReprConfig, rng: &mut RandomSource) -> Result<EpochInputs> {
    let spans_per_doc = cfg.levels.len() * cfg.spans_per_level;
    let mut pooled = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let mut block = Vec::with_capacity(spans_per_doc + 1);
        block.push(doc.pooled());
        for level in &cfg.levels {
            for _ in 0..cfg.spans_per_level {
                let span = sample_span(doc.len(), level, cfg.alpha, cfg.beta, rng)?;
                block.push(pool_span(doc, span)?);
            }
        }
        pooled.push(block);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut order);
    let batches = order.chunks(cfg.batch_size.max(1)).map(<[usize]>::to_vec).collect();
    Ok(EpochInputs {
        pooled,
        batches,
        spans_per_doc,
    })
}

/// Combined Step-2 objective and its gradient wrt the projector.
fn step_objective(
    proj: &ProjectorParams,
    inputs: &EpochInputs,
    codes: &[PqCode],
    cb: &Codebook,
    tau: f64,
) -> Result<(f64, ProjectorParams)> {
    let mut grads = proj.zeros_like();
    let mut total = 0.0;
    let forwards: Vec<Vec<(Vector, Vector)>> = inputs
        .pooled
        .iter()
        .map(|block| block.iter().map(|p| proj.forward(p)).collect())
        .collect();

    for batch in &inputs.batches {
        let reps: Vec<Vector> = batch
            .iter()
            .flat_map(|&d| forwards[d].iter().map(|(_, out)| out.clone()))
            .collect();
        let cl = contrastive_loss(&reps, batch.len(), inputs.spans_per_doc, tau)?;
        total += cl.loss;
        let block = inputs.spans_per_doc + 1;
        for (bi, &d) in batch.iter().enumerate() {
            for s in 0..block {
                let g = &cl.grads[bi * block + s];
                proj.backward(&inputs.pooled[d][s], &forwards[d][s].0, g, &mut grads);
            }
        }
    }

    let doc_reps: Vec<Vector> = forwards.iter().map(|f| f[0].1.clone()).collect();
    let mse = clustering_loss_with_codes(&doc_reps, codes, cb)?;
    total += mse.loss;
    for (d, g) in mse.grads.iter().enumerate() {
        proj.backward(&inputs.pooled[d][0], &forwards[d][0].0, g, &mut grads);
    }
    Ok((total, grads))
}

/// Alternate per-group k-means (Step 1) and projector descent (Step 2) for
/// `cfg.epochs` epochs, then cluster the final representations once more.
///
/// Step 2 is plain gradient descent; a step that would raise the objective
/// is retried with half the step size, so the objective never increases
/// within an epoch.
pub fn iterative_train(
    corpus: &[TokenDocument],
    ids: &[DocId],
    init: ProjectorParams,
    cfg: &ReprConfig,
    rng: &mut RandomSource,
) -> Result<TrainedRepr> {
    if corpus.len() != ids.len() {
        return Err(Error::invalid("corpus and ids differ in length"));
    }
    if corpus.len() < cfg.centroids {
        return Err(Error::invalid(format!(
            "need at least K = {} documents, got {}",
            cfg.centroids,
            corpus.len()
        )));
    }
    for doc in corpus {
        if doc.token_dim() != init.input_dim {
            return Err(Error::invalid("token dimension does not match projector input"));
        }
    }
    let mut proj = init;
    let embed =
        |proj: &ProjectorParams| -> Vec<Vector> { corpus.iter().map(|d| proj.forward(&d.pooled()).1).collect() };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut initial_mse = None;
    for epoch in 0..cfg.epochs {
        let reps = embed(&proj);
        let mut krng = rng.fork(&[0x5eed, epoch as u64]);
        let (cb, codes) = build_base_codebook(ids, &reps, cfg.groups, cfg.centroids, &mut krng, cfg.kmeans_iters)?;
        let mse_at_start = clustering_loss_with_codes(&reps, &codes, &cb)?.loss;
        initial_mse.get_or_insert(mse_at_start);

        let mut srng = rng.fork(&[0x5ba4, epoch as u64]);
        let inputs = sample_epoch(corpus, cfg, &mut srng)?;
        let mut step = cfg.step_size;
        let (mut loss, mut grad) = step_objective(&proj, &inputs, &codes, &cb, cfg.tau)?;
        let mut losses = vec![loss];
        for _ in 0..cfg.inner_iters {
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = proj.clone();
                trial.descend(&grad, step);
                if !trial.is_finite() {
                    step *= 0.5;
                    continue;
                }
                let (l, g) = step_objective(&trial, &inputs, &codes, &cb, cfg.tau)?;
                if l <= loss {
                    proj = trial;
                    loss = l;
                    grad = g;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            losses.push(loss);
        }
        epochs.push(EpochTrace { losses, mse_at_start });
    }

    let embeddings = embed(&proj);
    let mut krng = rng.fork(&[0x5eed, cfg.epochs as u64]);
    let (codebook, codes) =
        build_base_codebook(ids, &embeddings, cfg.groups, cfg.centroids, &mut krng, cfg.kmeans_iters)?;
    let final_mse = clustering_loss_with_codes(&embeddings, &codes, &codebook)?.loss;
    Ok(TrainedRepr {
        projector: proj,
        codebook,
        codes,
        embeddings,
        epochs,
        initial_mse: initial_mse.unwrap_or(final_mse),
        final_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq::codebook_from_centroids;

    fn random_doc(rng: &mut RandomSource, n: usize, e: usize) -> TokenDocument {
        TokenDocument::new(
            (0..n)
                .map(|_| (0..e).map(|_| rng.standard_normal()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_span_interval() {
        let spec = GranularitySpec::new(Granularity::Phrase, 3, 3).unwrap();
        let mut rng = RandomSource::new(0);
        for _ in 0..500 {
            let s = sample_span(10, &spec, 4.0, 2.0, &mut rng).unwrap();
            assert_eq!(s.len(), 3);
            assert!((1..=7).contains(&s.start));
        }
        assert!(sample_span(1, &spec, 4.0, 2.0, &mut rng).is_err());
        assert!(GranularitySpec::new(Granularity::Word, 0, 3).is_err());
        assert!(GranularitySpec::new(Granularity::Word, 5, 3).is_err());
    }

    #[test]
    fn span_length_mean_phrase_level() {
        let spec = GranularitySpec::default_levels()[1];
        let mut rng = RandomSource::new(13);
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| sample_span(200, &spec, 4.0, 2.0, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 12.0).abs() <= 0.3, "{mean}");
    }

    #[test]
    fn spans_stay_in_bounds_under_fuzz() {
        let mut rng = RandomSource::new(31);
        let levels = GranularitySpec::default_levels();
        for i in 0..100_000 {
            let n = 2 + rng.index(150);
            let s = sample_span(n, &levels[i % 4], 4.0, 2.0, &mut rng).unwrap();
            assert!(1 <= s.start && s.start < s.end && s.end <= n, "{s:?} n={n}");
            assert!(s.len() < n);
        }
    }

    #[test]
    fn pooling() {
        let doc = TokenDocument::new(vec![vec![0.0, 2.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(pool_span(&doc, Span { start: 0, end: 2 }).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pool_span(&doc, Span { start: 2, end: 3 }).unwrap(), vec![5.0, 5.0]);
        assert!(pool_span(&doc, Span { start: 1, end: 1 }).is_err());
        assert!(pool_span(&doc, Span { start: 1, end: 4 }).is_err());

        let mut rng = RandomSource::new(2);
        let doc = random_doc(&mut rng, 30, 5);
        for _ in 0..50 {
            let start = rng.index(29);
            let end = start + 1 + rng.index(30 - start - 1);
            let pooled = pool_span(&doc, Span { start, end }).unwrap();
            for d in 0..5 {
                let mut acc = 0.0;
                for t in start..end {
                    acc += doc.tokens[t][d];
                }
                assert!((pooled[d] - acc / (end - start) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_forward_cases() {
        let doc = TokenDocument::new(vec![vec![0.3, -0.2, 1.0], vec![0.1, 0.0, -0.4]]).unwrap();
        let zero = ProjectorParams::zeros(3, 4, 2);
        assert_eq!(doc_embedding(&doc, &zero).unwrap(), vec![0.0, 0.0]);

        let mut id = ProjectorParams::zeros(3, 3, 3);
        for i in 0..3 {
            id.w1[i * 3 + i] = 1.0;
        }
        let mut w2 = ProjectorParams::zeros(3, 3, 3).w2;
        w2.copy_from_slice(&[0.5, 0.0, 1.0, 0.0, 2.0, 0.0, -1.0, 0.0, 0.0]);
        id.w2 = w2.clone();
        let p = doc.pooled();
        let t: Vec<f64> = p.iter().map(|v| v.tanh()).collect();
        let expected: Vec<f64> = (0..3).map(|r| (0..3).map(|c| w2[r * 3 + c] * t[c]).sum()).collect();
        let out = doc_embedding(&doc, &id).unwrap();
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(doc_embedding(&doc, &ProjectorParams::zeros(4, 2, 2)).is_err());
    }

    #[test]
    fn contrastive_closed_forms() {
        // orthonormal toy: all logits zero, loss = ln(4)
        let mut reps = vec![vec![0.0; 5]; 5];
        for (i, r) in reps.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        let out = contrastive_loss(&reps, 1, 4, 1.0).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-9);

        // symmetric collapse
        let (n, g) = (3, 2);
        let reps = vec![vec![0.4, -0.1, 0.7]; n * (4 * g + 1)];
        let out = contrastive_loss(&reps, n, 4 * g, 0.5).unwrap();
        let expected = n as f64 * ((n * (4 * g + 1) - 1) as f64).ln();
        assert!((out.loss - expected).abs() < 1e-9);

        assert!(contrastive_loss(&reps, n, 4 * g, 0.0).is_err());
        assert!(contrastive_loss(&reps, n + 1, 4 * g, 1.0).is_err());
    }

    #[test]
    fn contrastive_is_permutation_invariant() {
        let mut rng = RandomSource::new(44);
        let reps: Vec<Vector> = (0..15)
            .map(|_| (0..3).map(|_| rng.standard_normal()).collect())
            .collect();
        let base = contrastive_loss(&reps, 3, 4, 0.7).unwrap().loss;
        let perm = [2usize, 0, 1];
        let shuffled: Vec<Vector> = perm.iter().flat_map(|&b| reps[b * 5..(b + 1) * 5].to_vec()).collect();
        let other = contrastive_loss(&shuffled, 3, 4, 0.7).unwrap().loss;
        assert!((base - other).abs() < 1e-10);
    }

    #[test]
    fn clustering_loss_cases() {
        let cb = codebook_from_centroids(
            8,
            vec![vec![vec![0.0; 4], vec![1.0; 4]], vec![vec![2.0; 4], vec![-1.0; 4]]],
        )
        .unwrap();
        let on_grid = vec![vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]];
        assert_eq!(clustering_loss(&on_grid, &cb).unwrap().loss, 0.0);
        let code = PqCode(vec![0, 0]);
        let shifted = vec![vec![1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0]];
        let out = clustering_loss_with_codes(&shifted, &[code], &cb).unwrap();
        assert_eq!(out.loss, 8.0);
        assert_eq!(out.grads[0], vec![2.0; 8]);
        assert!(clustering_loss(&[vec![0.0; 3]], &cb).is_err());
    }

    fn synthetic_corpus(rng: &mut RandomSource, n: usize, e: usize) -> Vec<TokenDocument> {
        let centers: Vec<Vector> = (0..4)
            .map(|_| (0..e).map(|_| 2.0 * rng.standard_normal()).collect())
            .collect();
        (0..n)
            .map(|i| {
                let c = &centers[i % 4];
                let len = 6 + rng.index(20);
                TokenDocument::new(
                    (0..len)
                        .map(|_| c.iter().map(|v| v + 0.5 * rng.standard_normal()).collect())
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn small_cfg(epochs: usize) -> ReprConfig {
        ReprConfig {
            groups: 2,
            centroids: 4,
            epochs,
            spans_per_level: 1,
            batch_size: 8,
            ..ReprConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_plain_kmeans() {
        let mut rng = RandomSource::new(1);
        let corpus = synthetic_corpus(&mut rng, 32, 8);
        let ids: Vec<DocId> = (0..32).collect();
        let init = ProjectorParams::random(8, 8, 8, &mut rng);
        let out = iterative_train(&corpus, &ids, init.clone(), &small_cfg(0), &mut RandomSource::new(5)).unwrap();
        assert_eq!(out.projector, init);
        let reps: Vec<Vector> = corpus.iter().map(|d| doc_embedding(d, &init).unwrap()).collect();
        let mut krng = RandomSource::new(5).fork(&[0x5eed, 0]);
        let (cb, codes) = build_base_codebook(&ids, &reps, 2, 4, &mut krng, DEFAULT_KMEANS_ITERS).unwrap();
        assert_eq!(out.codebook, cb);
        assert_eq!(out.codes, codes);
    }

    #[test]
    fn two_epochs_reduce_quantization_error_and_are_deterministic() {
        let mut rng = RandomSource::new(3);
        let corpus = synthetic_corpus(&mut rng, 32, 8);
        let ids: Vec<DocId> = (0..32).collect();
        let init = ProjectorParams::random(8, 8, 8, &mut rng);
        let run = || iterative_train(&corpus, &ids, init.clone(), &small_cfg(2), &mut RandomSource::new(17)).unwrap();
        let a = run();
        assert!(a.final_mse <= a.initial_mse, "{} > {}", a.final_mse, a.initial_mse);
        for ep in &a.epochs {
            for w in ep.losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-6);
            }
        }
        let b = run();
        assert_eq!(a.projector, b.projector);
    }
}

//! Linear-softmax docid decoder.
//!
//! Each code position has its own score matrix over that group's
//! centroids; the log-probability of a code given a conditioning vector is
//! the sum of per-position log-softmax terms. Training minimizes the mean
//! negative log-likelihood over the session's pairs plus an EWC penalty
//! anchoring parameters to the previous session.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pq::{DocId, PqCode};
use crate::vector::{dot, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// Row-major `rows x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn rows(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub session: u32,
    pub dim: usize,
    pub heads: Vec<Head>,
}

impl DecoderParams {
    pub fn zeros(dim: usize, sizes: &[usize]) -> Self {
        Self {
            session: 0,
            dim,
            heads: sizes
                .iter()
                .map(|&k| Head {
                    weights: vec![0.0; k * dim],
                    bias: vec![0.0; k],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dim, &self.sizes());
        z.session = self.session;
        z
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.heads.iter().map(Head::rows).collect()
    }

    pub fn num_groups(&self) -> usize {
        self.heads.len()
    }

    pub fn num_params(&self) -> usize {
        self.heads.iter().map(|h| h.weights.len() + h.bias.len()).sum()
    }

    /// Append zero rows so that group `m` has `sizes[m]` rows.
    pub fn grow_to(&mut self, sizes: &[usize]) -> Result<()> {
        if sizes.len() != self.heads.len() {
            return Err(Error::invalid("group count mismatch while growing decoder"));
        }
        for (h, &k) in self.heads.iter_mut().zip(sizes) {
            if k < h.rows() {
                return Err(Error::invalid(format!(
                    "decoder head has {} rows, cannot shrink to {k}",
                    h.rows()
                )));
            }
            h.weights.resize(k * self.dim, 0.0);
            h.bias.resize(k, 0.0);
        }
        Ok(())
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (m, h) in self.heads.iter().enumerate() {
            if i < h.weights.len() {
                return (m, true, i);
            }
            i -= h.weights.len();
            if i < h.bias.len() {
                return (m, false, i);
            }
            i -= h.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Flat access: head by head, weights then bias.
    pub fn get(&self, i: usize) -> f64 {
        let (m, w, j) = self.locate(i);
        if w {
            self.heads[m].weights[j]
        } else {
            self.heads[m].bias[j]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let (m, w, j) = self.locate(i);
        if w {
            self.heads[m].weights[j] = v;
        } else {
            self.heads[m].bias[j] = v;
        }
    }

    fn zip_mut(&mut self, other: &DecoderParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                f(x, *y);
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                f(x, *y);
            }
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &DecoderParams) {
        self.zip_mut(other, |x, y| *x += alpha * y);
    }

    pub fn is_finite(&self) -> bool {
        self.heads
            .iter()
            .all(|h| h.weights.iter().chain(&h.bias).all(|v| v.is_finite()))
    }

    /// Euclidean distance to `other` over the rows both parameter sets share.
    pub fn shared_distance(&self, other: &DecoderParams) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.heads.iter().zip(&other.heads) {
            let n = a.weights.len().min(b.weights.len());
            acc += a.weights[..n]
                .iter()
                .zip(&b.weights[..n])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            let n = a.bias.len().min(b.bias.len());
            acc += a.bias[..n]
                .iter()
                .zip(&b.bias[..n])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn logits(&self, group: usize, e: &[f64]) -> Vector {
        let h = &self.heads[group];
        (0..h.rows())
            .map(|r| dot(&h.weights[r * self.dim..(r + 1) * self.dim], e) + h.bias[r])
            .collect()
    }

    pub fn log_softmax(&self, group: usize, e: &[f64]) -> Vector {
        let mut l = self.logits(group, e);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        l.iter_mut().for_each(|v| *v -= lse);
        l
    }

    fn check_input(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim {
            return Err(Error::invalid(format!(
                "decoder expects vectors of dimension {}, got {}",
                self.dim,
                e.len()
            )));
        }
        Ok(())
    }

    fn check_code(&self, code: &PqCode) -> Result<()> {
        if code.len() != self.heads.len() {
            return Err(Error::invalid(format!(
                "code length {} does not match {} decoder groups",
                code.len(),
                self.heads.len()
            )));
        }
        for (m, (&k, h)) in code.0.iter().zip(&self.heads).enumerate() {
            if k as usize >= h.rows() {
                return Err(Error::invalid(format!(
                    "code index {k} out of range for group {m} with {} rows",
                    h.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Diagonal Fisher estimate, shaped like the decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiag(pub DecoderParams);

impl FisherDiag {
    pub fn params(&self) -> &DecoderParams {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: Vector,
    pub code: PqCode,
}

impl TrainingPair {
    pub fn new(input: Vector, code: PqCode) -> Self {
        Self { input, code }
    }
}

pub fn docid_log_prob(e: &[f64], code: &PqCode, params: &DecoderParams) -> Result<f64> {
    params.check_input(e)?;
    params.check_code(code)?;
    Ok(code
        .0
        .iter()
        .enumerate()
        .map(|(m, &k)| params.log_softmax(m, e)[k as usize])
        .sum())
}

/// Negative log-likelihood of one pair, accumulating its gradient into `grads`.
fn pair_nll(pair: &TrainingPair, params: &DecoderParams, grads: &mut DecoderParams, scale: f64) -> f64 {
    let e = &pair.input;
    let dim = params.dim;
    let mut nll = 0.0;
    for (m, &k) in pair.code.0.iter().enumerate() {
        let lsm = params.log_softmax(m, e);
        nll -= lsm[k as usize];
        let g = &mut grads.heads[m];
        for (r, l) in lsm.iter().enumerate() {
            let mut c = l.exp();
            if r == k as usize {
                c -= 1.0;
            }
            c *= scale;
            g.bias[r] += c;
            for (w, x) in g.weights[r * dim..(r + 1) * dim].iter_mut().zip(e) {
                *w += c * x;
            }
        }
    }
    nll
}

fn check_pairs(pairs: &[TrainingPair], params: &DecoderParams) -> Result<()> {
    for p in pairs {
        params.check_input(&p.input)?;
        params.check_code(&p.code)?;
    }
    Ok(())
}

/// Summed negative log-likelihood and its gradient.
pub fn mle_loss(pairs: &[TrainingPair], params: &DecoderParams) -> Result<(f64, DecoderParams)> {
    if pairs.is_empty() {
        return Err(Error::invalid("MLE loss needs at least one pair"));
    }
    check_pairs(pairs, params)?;
    let mut grads = params.zeros_like();
    let loss = pairs.iter().map(|p| pair_nll(p, params, &mut grads, 1.0)).sum();
    Ok((loss, grads))
}

/// Empirical diagonal Fisher: mean of squared per-pair gradients.
pub fn estimate_fisher(pairs: &[TrainingPair], params: &DecoderParams) -> Result<FisherDiag> {
    if pairs.is_empty() {
        return Err(Error::invalid("Fisher estimate needs at least one pair"));
    }
    check_pairs(pairs, params)?;
    let mut fisher = params.zeros_like();
    let inv = 1.0 / pairs.len() as f64;
    for p in pairs {
        let mut g = params.zeros_like();
        pair_nll(p, params, &mut g, 1.0);
        fisher.zip_mut(&g, |f, v| *f += inv * v * v);
    }
    Ok(FisherDiag(fisher))
}

/// `sum_l F_l (prev_l - cur_l)^2` over the rows `prev` already had; rows
/// appended since then carry no penalty.
pub fn ewc_loss(cur: &DecoderParams, prev: &DecoderParams, fisher: &FisherDiag) -> Result<(f64, DecoderParams)> {
    let f = &fisher.0;
    if cur.dim != prev.dim || cur.heads.len() != prev.heads.len() || f.sizes() != prev.sizes() || f.dim != prev.dim {
        return Err(Error::invalid("EWC shape mismatch"));
    }
    let mut grads = cur.zeros_like();
    let mut loss = 0.0;
    for m in 0..cur.heads.len() {
        let (c, p, fm) = (&cur.heads[m], &prev.heads[m], &f.heads[m]);
        if c.rows() < p.rows() {
            return Err(Error::invalid(format!(
                "group {m} lost rows: {} < {}",
                c.rows(),
                p.rows()
            )));
        }
        let g = &mut grads.heads[m];
        for i in 0..p.weights.len() {
            let d = c.weights[i] - p.weights[i];
            loss += fm.weights[i] * d * d;
            g.weights[i] = 2.0 * fm.weights[i] * d;
        }
        for i in 0..p.bias.len() {
            let d = c.bias[i] - p.bias[i];
            loss += fm.bias[i] * d * d;
            g.bias[i] = 2.0 * fm.bias[i] * d;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Default)]
pub struct SessionPairs {
    /// New documents, conditioned on their own embeddings.
    pub docs: Vec<TrainingPair>,
    /// Rehearsed old documents from the memory bank.
    pub bank: Vec<TrainingPair>,
    /// Labeled or pseudo queries.
    pub queries: Vec<TrainingPair>,
}

impl SessionPairs {
    pub fn len(&self) -> usize {
        self.docs.len() + self.bank.len() + self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrainingPair> {
        self.docs.iter().chain(&self.bank).chain(&self.queries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrainConfig {
    pub lambda: f64,
    pub step_size: f64,
    pub steps: usize,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            step_size: 5e-2,
            steps: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DecoderParams,
    /// Objective before the first step and after each accepted step.
    pub losses: Vec<f64>,
}

/// Total objective: mean NLL over all pairs plus `lambda * EWC`.
pub fn session_objective(
    params: &DecoderParams,
    prev: &DecoderParams,
    pairs: &SessionPairs,
    fisher: Option<&FisherDiag>,
    lambda: f64,
) -> Result<(f64, DecoderParams)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    if !pairs.is_empty() {
        let scale = 1.0 / pairs.len() as f64;
        for p in pairs.iter() {
            loss += scale * pair_nll(p, params, &mut grads, scale);
        }
    }
    if let Some(f) = fisher {
        if lambda != 0.0 {
            let (l, g) = ewc_loss(params, prev, f)?;
            loss += lambda * l;
            grads.axpy(lambda, &g);
        }
    }
    Ok((loss, grads))
}

/// Grow `prev` to `sizes` with zero rows, then run full-batch gradient
/// descent on [`session_objective`]. A step that would increase the
/// objective is retried at half the step size.
pub fn train_session(
    prev: &DecoderParams,
    sizes: &[usize],
    pairs: &SessionPairs,
    fisher: Option<&FisherDiag>,
    cfg: &DecoderTrainConfig,
    session: u32,
) -> Result<TrainOutcome> {
    let mut params = prev.clone();
    params.grow_to(sizes)?;
    params.session = session;
    check_pairs(pairs.docs.as_slice(), &params)?;
    check_pairs(pairs.bank.as_slice(), &params)?;
    check_pairs(pairs.queries.as_slice(), &params)?;
    if !(cfg.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }

    let (mut loss, mut grad) = session_objective(&params, prev, pairs, fisher, cfg.lambda)?;
    let mut losses = vec![loss];
    if pairs.is_empty() && fisher.is_none() {
        return Ok(TrainOutcome { params, losses });
    }
    let mut step = cfg.step_size;
    for _ in 0..cfg.steps {
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = params.clone();
            trial.axpy(-step, &grad);
            if trial.is_finite() {
                let (l, g) = session_objective(&trial, prev, pairs, fisher, cfg.lambda)?;
                if l <= loss {
                    params = trial;
                    loss = l;
                    grad = g;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { params, losses })
}

/// Prefix tree over assigned codes; leaves list their documents in
/// insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocidTrie {
    depth: usize,
    nodes: Vec<TrieNode>,
    docs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    docs: Vec<DocId>,
}

impl DocidTrie {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            nodes: vec![TrieNode::default()],
            docs: 0,
        }
    }

    pub fn from_codes<'a>(depth: usize, codes: impl IntoIterator<Item = (DocId, &'a PqCode)>) -> Result<Self> {
        let mut t = Self::new(depth);
        for (id, code) in codes {
            t.insert(id, code)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, id: DocId, code: &PqCode) -> Result<()> {
        if code.len() != self.depth {
            return Err(Error::invalid(format!(
                "code length {} does not match trie depth {}",
                code.len(),
                self.depth
            )));
        }
        let mut node = 0;
        for &k in &code.0 {
            node = match self.nodes[node].children.get(&k) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(k, n);
                    n
                }
            };
        }
        self.nodes[node].docs.push(id);
        self.docs += 1;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_docs(&self) -> usize {
        self.docs
    }

    pub fn is_empty(&self) -> bool {
        self.docs == 0
    }

    /// Documents stored under exactly `code`.
    pub fn docs_for(&self, code: &PqCode) -> &[DocId] {
        let mut node = 0;
        for k in &code.0 {
            match self.nodes[node].children.get(k) {
                Some(&n) => node = n,
                None => return &[],
            }
        }
        &self.nodes[node].docs
    }

    /// Every distinct stored code with its documents, in lexicographic order.
    pub fn codes(&self) -> Vec<(PqCode, Vec<DocId>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if prefix.len() == self.depth {
                if !self.nodes[node].docs.is_empty() {
                    out.push((PqCode(prefix), self.nodes[node].docs.clone()));
                }
                continue;
            }
            for (&k, &child) in self.nodes[node].children.iter().rev() {
                let mut p = prefix.clone();
                p.push(k);
                stack.push((child, p));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc: DocId,
    pub score: f64,
}

/// Decode group by group, keeping the `beam` best prefixes that exist in
/// the trie. Documents sharing a code share its score. Results are sorted
/// by score (descending) then doc id and cut to `top_n`.
pub fn constrained_beam_search(
    q: &[f64],
    params: &DecoderParams,
    trie: &DocidTrie,
    beam: usize,
    top_n: usize,
) -> Result<Vec<ScoredDoc>> {
    if beam == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    params.check_input(q)?;
    if trie.is_empty() {
        return Ok(Vec::new());
    }
    if trie.depth() != params.num_groups() {
        return Err(Error::invalid("trie depth does not match decoder groups"));
    }
    // (node, score, prefix)
    let mut beams: Vec<(usize, f64, Vec<u32>)> = vec![(0, 0.0, Vec::new())];
    for m in 0..trie.depth() {
        let lsm = params.log_softmax(m, q);
        let mut next = Vec::new();
        for (node, score, prefix) in &beams {
            for (&k, &child) in &trie.nodes[*node].children {
                let lp = *lsm
                    .get(k as usize)
                    .ok_or_else(|| Error::invalid(format!("trie index {k} exceeds decoder rows in group {m}")))?;
                let mut p = prefix.clone();
                p.push(k);
                next.push((child, score + lp, p));
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
        next.truncate(beam);
        beams = next;
    }
    let mut out: Vec<ScoredDoc> = beams
        .iter()
        .flat_map(|(node, score, _)| {
            trie.nodes[*node]
                .docs
                .iter()
                .map(move |&doc| ScoredDoc { doc, score: *score })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    out.truncate(top_n);
    Ok(out)
}

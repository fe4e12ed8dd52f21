//! Session-by-session experiment protocol.

use std::collections::{BTreeMap, HashMap};

use crate::decoder::{
    constrained_beam_search, estimate_fisher, train_session, DecoderParams, DecoderTrainConfig, SessionPairs,
    TrainingPair,
};
use crate::error::{Error, Result};
use crate::harness::config::{EvalSetting, ExperimentConfig};
use crate::harness::io::Dataset;
use crate::harness::report::{DecisionCounts, PairCounts, Report, SessionBlock, REPORT_SCHEMA_VERSION};
use crate::harness::split::{split_benchmark, split_sequential_queries};
use crate::harness::state::{EngineState, IssuedCode};
use crate::ipq::{ingest_session, UpdateDecision, UpdateKind};
use crate::metrics::{continual_metrics, evaluate, vert, MetricValue, Qrels, QueryId, RunResult, SessionMatrix};
use crate::pq::{build_base_codebook, DocId, PqCode};
use crate::rehearsal::{build_memory_bank, generate_pseudo_queries, BankEntry, CodeIndex, MemoryBank};
use crate::repr::{iterative_train, GranularitySpec, ProjectorParams, ReprConfig, TokenDocument};
use crate::vector::{RandomSource, Vector};

const P_SPLIT: u64 = 1;
const P_QUERY_SPLIT: u64 = 2;
const P_BASE: u64 = 3;
const P_PROJECTOR: u64 = 4;
const P_INGEST: u64 = 5;
const P_BANK: u64 = 6;
const P_RANDOM_BANK: u64 = 7;
const P_PSEUDO: u64 = 8;
const P_RECLUSTER: u64 = 9;

/// What one session produced besides the state update.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub block: SessionBlock,
    pub log: Vec<UpdateDecision>,
    pub bank: MemoryBank,
}

/// A configured experiment over one dataset. Holds the session split and
/// the per-session query sets; all model state lives in [`EngineState`].
#[derive(Debug)]
pub struct Experiment<'a> {
    cfg: ExperimentConfig,
    data: &'a Dataset,
    sessions: Vec<Vec<DocId>>,
    train_qrels: Qrels,
    test_qrels: Qrels,
    query_sets: Vec<Qrels>,
    root: RandomSource,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: ExperimentConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if data.docs.is_empty() {
            return Err(Error::invalid("dataset has no documents"));
        }
        let input_dim = match &data.tokens {
            Some(t) => t[0].token_dim(),
            None => cfg.dim,
        };
        let raw_dim = |rows: &[Vector], what: &str| -> Result<()> {
            match rows.iter().find(|r| r.len() != input_dim) {
                Some(r) => Err(Error::invalid(format!(
                    "{what} have dimension {}, expected {input_dim}",
                    r.len()
                ))),
                None => Ok(()),
            }
        };
        match &data.tokens {
            None => raw_dim(&data.docs, "documents")?,
            Some(tokens) if tokens.iter().any(|d| d.token_dim() != input_dim) => {
                return Err(Error::invalid("token documents have mixed dimensions"));
            }
            Some(_) => {}
        }
        raw_dim(&data.train_queries, "train queries")?;
        raw_dim(&data.test_queries, "test queries")?;

        let root = RandomSource::new(cfg.seed);
        let ids: Vec<DocId> = (0..data.docs.len() as DocId).collect();
        let sessions = split_benchmark(&ids, &cfg.session_fractions, &mut root.fork(&[P_SPLIT]))?;
        let mut arrival = vec![0u32; ids.len()];
        for (t, s) in sessions.iter().enumerate() {
            for &d in s {
                arrival[d as usize] = t as u32;
            }
        }
        let arrival_of = |d: DocId| arrival.get(d as usize).copied();
        let mut train_qrels = data.train_qrels.clone();
        train_qrels.set_arrival(arrival_of)?;
        let mut test_qrels = data.test_qrels.clone();
        test_qrels.set_arrival(arrival_of)?;
        let query_sets = match cfg.setting {
            EvalSetting::Single => (0..sessions.len() as u32)
                .map(|i| test_qrels.filter(|_, r| r.arrival == i))
                .collect(),
            EvalSetting::Sequential => {
                split_sequential_queries(&test_qrels, &cfg.session_fractions, &mut root.fork(&[P_QUERY_SPLIT]))?
            }
        };
        Ok(Self {
            cfg,
            data,
            sessions,
            train_qrels,
            test_qrels,
            query_sets,
            root,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Document ids per session, in arrival order.
    pub fn sessions(&self) -> &[Vec<DocId>] {
        &self.sessions
    }

    /// Test queries scored in column `i` of the session matrix.
    pub fn query_set(&self, i: usize) -> Option<&Qrels> {
        self.query_sets.get(i)
    }

    fn rng(&self, keys: &[u64]) -> RandomSource {
        self.root.fork(keys)
    }

    fn doc_embedding(&self, projector: Option<&ProjectorParams>, doc: DocId) -> Result<Vector> {
        match (projector, &self.data.tokens) {
            (Some(p), Some(t)) => p.project(&t[doc as usize].pooled()),
            _ => Ok(self.data.docs[doc as usize].clone()),
        }
    }

    fn query_embedding(&self, projector: Option<&ProjectorParams>, q: &[f64]) -> Result<Vector> {
        match projector {
            Some(p) => p.project(q),
            None => Ok(q.to_vec()),
        }
    }

    fn repr_config(&self) -> ReprConfig {
        let c = &self.cfg;
        ReprConfig {
            groups: c.groups,
            centroids: c.centroids,
            epochs: c.repr_epochs,
            tau: c.tau,
            spans_per_level: c.spans_per_level,
            step_size: c.repr_step,
            inner_iters: c.repr_inner_iters,
            alpha: c.span_alpha,
            beta: c.span_beta,
            batch_size: c.repr_batch,
            levels: GranularitySpec::default_levels().to_vec(),
            kmeans_iters: c.kmeans_iters,
        }
    }

    /// Build the base index and train the decoder on session 0.
    pub fn initial_state(&self) -> Result<(EngineState, StepOutput)> {
        self.initial_state_inner().map_err(|e| e.in_session(0))
    }

    fn initial_state_inner(&self) -> Result<(EngineState, StepOutput)> {
        let cfg = &self.cfg;
        let ids = &self.sessions[0];
        let mut base_rng = self.rng(&[0, P_BASE]);
        let (projector, codebook, codes) = match &self.data.tokens {
            Some(tokens) => {
                let input_dim = tokens[0].token_dim();
                let init = ProjectorParams::random(input_dim, cfg.hidden(), cfg.dim, &mut self.rng(&[0, P_PROJECTOR]));
                if cfg.flags.discriminative {
                    let corpus: Vec<TokenDocument> = ids.iter().map(|&d| tokens[d as usize].clone()).collect();
                    let trained = iterative_train(&corpus, ids, init, &self.repr_config(), &mut base_rng)?;
                    (Some(trained.projector), trained.codebook, trained.codes)
                } else {
                    let embs = ids
                        .iter()
                        .map(|&d| init.project(&tokens[d as usize].pooled()))
                        .collect::<Result<Vec<_>>>()?;
                    let (cb, codes) =
                        build_base_codebook(ids, &embs, cfg.groups, cfg.centroids, &mut base_rng, cfg.kmeans_iters)?;
                    (Some(init), cb, codes)
                }
            }
            None => {
                let embs: Vec<&Vector> = ids.iter().map(|&d| &self.data.docs[d as usize]).collect();
                let (cb, codes) =
                    build_base_codebook(ids, &embs, cfg.groups, cfg.centroids, &mut base_rng, cfg.kmeans_iters)?;
                (None, cb, codes)
            }
        };

        let code_of: HashMap<DocId, &PqCode> = ids.iter().copied().zip(&codes).collect();
        let mut pairs = SessionPairs::default();
        for (&d, code) in ids.iter().zip(&codes) {
            pairs.docs.push(TrainingPair::new(
                self.doc_embedding(projector.as_ref(), d)?,
                code.clone(),
            ));
        }
        for (q, rel) in self.train_qrels.iter() {
            if let Some(code) = code_of.get(&rel.doc) {
                let e = self.query_embedding(projector.as_ref(), &self.data.train_queries[q as usize])?;
                pairs.queries.push(TrainingPair::new(e, (*code).clone()));
            }
        }
        let sizes = codebook.sizes();
        let dcfg = DecoderTrainConfig {
            lambda: 0.0,
            step_size: cfg.decoder_step,
            steps: cfg.base_decoder_steps,
        };
        let outcome = train_session(&DecoderParams::zeros(cfg.dim, &sizes), &sizes, &pairs, None, &dcfg, 0)?;
        let all: Vec<TrainingPair> = pairs.iter().cloned().collect();
        let fisher = if all.is_empty() {
            None
        } else {
            Some(estimate_fisher(&all, &outcome.params)?)
        };

        let mut state = EngineState {
            config_digest: cfg.digest(),
            session: 0,
            codes: ids
                .iter()
                .zip(codes)
                .map(|(&doc, code)| IssuedCode { doc, code, session: 0 })
                .collect(),
            codebook,
            decoder: outcome.params,
            fisher,
            projector,
            matrix: SessionMatrix::new(),
            blocks: Vec::new(),
        };
        let partial = PartialBlock {
            new_docs: ids.len(),
            decisions: DecisionCounts::default(),
            reassigned_old_docs: 0,
            bank: MemoryBank::default(),
            pairs: PairCounts {
                docs: pairs.docs.len(),
                bank: 0,
                queries: pairs.queries.len(),
            },
            losses: outcome.losses,
            floats_before: 0,
        };
        let block = self.finish_session(&mut state, partial.clone())?;
        Ok((
            state,
            StepOutput {
                block,
                log: Vec::new(),
                bank: partial.bank,
            },
        ))
    }

    /// Run the next session on `state`.
    pub fn step(&self, state: &mut EngineState) -> Result<StepOutput> {
        let t = state.session + 1;
        if state.config_digest != self.cfg.digest() {
            return Err(Error::state("engine state was produced with a different configuration"));
        }
        if t as usize >= self.sessions.len() {
            return Err(Error::state(format!(
                "all {} sessions are already indexed",
                self.sessions.len()
            )));
        }
        self.step_inner(state, t).map_err(|e| e.in_session(t))
    }

    fn step_inner(&self, state: &mut EngineState, t: u32) -> Result<StepOutput> {
        let cfg = &self.cfg;
        let flags = cfg.flags;
        let ids = &self.sessions[t as usize];
        let floats_before = model_floats(state);
        let proj = state.projector.clone();
        let embs: Vec<(DocId, Vector)> = ids
            .iter()
            .map(|&d| Ok((d, self.doc_embedding(proj.as_ref(), d)?)))
            .collect::<Result<_>>()?;

        let mut log = Vec::new();
        let mut reassigned = 0;
        let new_codes: Vec<(DocId, PqCode)> = if flags.recluster_each_session {
            let mut all_ids: Vec<DocId> = state.codes.iter().map(|c| c.doc).collect();
            all_ids.extend_from_slice(ids);
            let all_embs = all_ids
                .iter()
                .map(|&d| self.doc_embedding(proj.as_ref(), d))
                .collect::<Result<Vec<_>>>()?;
            let (mut cb, codes) = build_base_codebook(
                &all_ids,
                &all_embs,
                cfg.groups,
                cfg.centroids,
                &mut self.rng(&[u64::from(t), P_RECLUSTER]),
                cfg.kmeans_iters,
            )?;
            cb.session = t;
            let old = state.codes.len();
            for (issued, code) in state.codes.iter_mut().zip(&codes) {
                if issued.code != *code {
                    reassigned += 1;
                    issued.code = code.clone();
                }
            }
            state.codebook = cb;
            ids.iter().copied().zip(codes[old..].iter().cloned()).collect()
        } else {
            let update = ingest_session(
                &mut state.codebook,
                t,
                &embs,
                flags.threshold_mode,
                &mut self.rng(&[u64::from(t), P_INGEST]),
            )?;
            log = update.log;
            update.codes
        };
        let mut decisions = DecisionCounts::default();
        for d in &log {
            match d.kind {
                UpdateKind::Unchanged => decisions.unchanged += 1,
                UpdateKind::Changed => decisions.changed += 1,
                UpdateKind::AddedNew => decisions.added_new += 1,
            }
        }

        let index = CodeIndex::from_codes(state.codes.iter().map(|c| (c.doc, &c.code)));
        let mut bank = MemoryBank {
            session: t,
            entries: Vec::new(),
        };
        if flags.enable_memory_bank {
            bank = build_memory_bank(
                t,
                &new_codes,
                &index,
                cfg.bank_repeats,
                &state.codebook,
                &self.rng(&[u64::from(t), P_BANK]),
            )?;
            if flags.random_bank {
                let want = bank.unique_docs().len();
                let old: Vec<DocId> = state.codes.iter().map(|c| c.doc).collect();
                let picks = self
                    .rng(&[u64::from(t), P_RANDOM_BANK])
                    .sample_indices(old.len(), want.min(old.len()));
                bank.entries = picks
                    .into_iter()
                    .map(|i| BankEntry {
                        old_doc: old[i],
                        source_doc: old[i],
                        changed: 0,
                    })
                    .collect();
            }
        }

        let mut pairs = SessionPairs::default();
        for ((d, e), (_, code)) in embs.iter().zip(&new_codes) {
            pairs.docs.push(TrainingPair::new(e.clone(), code.clone()));
            if flags.enable_pseudo_queries {
                let mut prng = self.rng(&[u64::from(t), P_PSEUDO, u64::from(*d)]);
                for pq in generate_pseudo_queries(*d, e, code, cfg.pseudo_per_doc, cfg.pseudo_sigma, &mut prng)? {
                    pairs.queries.push(TrainingPair::new(pq.query, pq.code));
                }
            }
        }
        for old in bank.unique_docs() {
            let code = index
                .code_of(old)
                .ok_or_else(|| Error::state(format!("bank document {old} has no code")))?;
            pairs
                .bank
                .push(TrainingPair::new(self.doc_embedding(proj.as_ref(), old)?, code.clone()));
        }

        let dcfg = DecoderTrainConfig {
            lambda: if flags.enable_ewc { cfg.lambda } else { 0.0 },
            step_size: cfg.decoder_step,
            steps: cfg.decoder_steps,
        };
        let fisher = if flags.enable_ewc { state.fisher.as_ref() } else { None };
        let sizes = state.codebook.sizes();
        let outcome = train_session(&state.decoder, &sizes, &pairs, fisher, &dcfg, t)?;
        let all: Vec<TrainingPair> = pairs.iter().cloned().collect();
        state.fisher = if all.is_empty() {
            None
        } else {
            Some(estimate_fisher(&all, &outcome.params)?)
        };
        state.decoder = outcome.params;
        state.codes.extend(
            new_codes
                .into_iter()
                .map(|(doc, code)| IssuedCode { doc, code, session: t }),
        );
        state.session = t;

        let partial = PartialBlock {
            new_docs: ids.len(),
            decisions,
            reassigned_old_docs: reassigned,
            bank,
            pairs: PairCounts {
                docs: pairs.docs.len(),
                bank: pairs.bank.len(),
                queries: pairs.queries.len(),
            },
            losses: outcome.losses,
            floats_before,
        };
        let block = self.finish_session(state, partial.clone())?;
        Ok(StepOutput {
            block,
            log,
            bank: partial.bank,
        })
    }

    /// Rank every test query that belongs to a query set of session `<= t`.
    pub fn retrieve(&self, state: &EngineState) -> Result<(RunResult, BTreeMap<QueryId, Vec<f64>>)> {
        let t = state.session as usize;
        let trie = state.trie()?;
        let mut run = RunResult::new();
        let mut scores = BTreeMap::new();
        for (q, _) in self.test_qrels.iter() {
            if !self.query_sets[..=t].iter().any(|s| s.get(q).is_some()) {
                continue;
            }
            let e = self.query_embedding(state.projector.as_ref(), &self.data.test_queries[q as usize])?;
            let hits = constrained_beam_search(&e, &state.decoder, &trie, self.cfg.beam, self.cfg.top_n)?;
            scores.insert(q, hits.iter().map(|h| h.score).collect());
            run.insert(q, hits.into_iter().map(|h| h.doc).collect())?;
        }
        Ok((run, scores))
    }

    /// Overall performance after the state's session, and its matrix row.
    pub fn evaluate(&self, state: &EngineState) -> Result<(MetricValue, Vec<f64>)> {
        let t = state.session;
        let (run, _) = self.retrieve(state)?;
        let metric = self.cfg.metric;
        let row = self.query_sets[..=t as usize]
            .iter()
            .map(|s| Ok(evaluate(&run, s, metric)?.value))
            .collect::<Result<Vec<_>>>()?;
        let overall = match self.cfg.setting {
            EvalSetting::Single => vert(&run, &self.test_qrels, metric, t)?,
            EvalSetting::Sequential => {
                let seen = self
                    .test_qrels
                    .filter(|q, _| self.query_sets[..=t as usize].iter().any(|s| s.get(q).is_some()));
                evaluate(&run, &seen, metric)?
            }
        };
        Ok((overall, row))
    }

    fn finish_session(&self, state: &mut EngineState, p: PartialBlock) -> Result<SessionBlock> {
        let (overall, row) = self.evaluate(state)?;
        state.matrix.push_row(row.clone())?;
        let floats = model_floats(state);
        let block = SessionBlock {
            session: state.session,
            new_docs: p.new_docs,
            decisions: p.decisions,
            centroids_per_group: state.codebook.sizes(),
            reassigned_old_docs: p.reassigned_old_docs,
            bank_entries: p.bank.entries.len(),
            bank_unique_docs: p.bank.unique_docs().len(),
            pairs: p.pairs,
            loss_start: p.losses.first().copied().unwrap_or(0.0),
            loss_end: p.losses.last().copied().unwrap_or(0.0),
            train_steps: p.losses.len().saturating_sub(1),
            vert: overall,
            row,
            model_floats: floats,
            model_floats_added: floats - p.floats_before,
            state_bytes: state.payload_bytes(),
        };
        state.blocks.push(block.clone());
        state.validate()?;
        Ok(block)
    }

    pub fn report(&self, state: &EngineState) -> Result<Report> {
        let mut totals = DecisionCounts::default();
        for b in &state.blocks {
            totals += b.decisions;
        }
        Ok(Report {
            schema_version: REPORT_SCHEMA_VERSION,
            variant: self.cfg.variant.map(|v| v.name().to_string()),
            config: self.cfg.clone(),
            num_docs: self.data.docs.len(),
            session_sizes: self.sessions.iter().map(Vec::len).collect(),
            sessions: state.blocks.clone(),
            matrix: state.matrix.rows().to_vec(),
            continual: continual_metrics(&state.matrix)?,
            final_vert: state.blocks.last().map_or(0.0, |b| b.vert.value),
            decision_totals: totals,
        })
    }
}

#[derive(Debug, Clone)]
struct PartialBlock {
    new_docs: usize,
    decisions: DecisionCounts,
    reassigned_old_docs: usize,
    bank: MemoryBank,
    pairs: PairCounts,
    losses: Vec<f64>,
    floats_before: usize,
}

/// Codebook centroids, decoder weights and biases, and projector weights.
fn model_floats(state: &EngineState) -> usize {
    let cb = &state.codebook;
    cb.total_centroids() * cb.sub_dim()
        + state.decoder.num_params()
        + state.projector.as_ref().map_or(0, ProjectorParams::num_params)
}

/// Run every session and return the report.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<Report> {
    let exp = Experiment::new(cfg.clone(), data)?;
    let (mut state, _) = exp.initial_state()?;
    while (state.session as usize) + 1 < exp.num_sessions() {
        exp.step(&mut state)?;
    }
    exp.report(&state)
}

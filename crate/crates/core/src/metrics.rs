//! Retrieval and continual-learning metrics, plus the qrels and run TSV
//! formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pq::DocId;

pub type QueryId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relevance {
    pub doc: DocId,
    /// Session in which the relevant document arrived.
    pub arrival: u32,
}

/// One relevant document per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    entries: BTreeMap<QueryId, Relevance>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: QueryId, doc: DocId, arrival: u32) -> Result<()> {
        if self.entries.insert(query, Relevance { doc, arrival }).is_some() {
            return Err(Error::invalid(format!(
                "query {query} has more than one relevant document"
            )));
        }
        Ok(())
    }

    pub fn get(&self, query: QueryId) -> Option<Relevance> {
        self.entries.get(&query).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (QueryId, Relevance)> + '_ {
        self.entries.iter().map(|(q, r)| (*q, *r))
    }

    /// Keep only queries accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(QueryId, Relevance) -> bool) -> Qrels {
        Qrels {
            entries: self
                .entries
                .iter()
                .filter(|(q, r)| keep(**q, **r))
                .map(|(q, r)| (*q, *r))
                .collect(),
        }
    }

    pub fn set_arrival(&mut self, mut arrival_of: impl FnMut(DocId) -> Option<u32>) -> Result<()> {
        for (q, r) in self.entries.iter_mut() {
            r.arrival = arrival_of(r.doc).ok_or_else(|| {
                Error::invalid(format!("query {q}: relevant document {} is not in the corpus", r.doc))
            })?;
        }
        Ok(())
    }
}

/// Ranked document lists per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    rankings: BTreeMap<QueryId, Vec<DocId>>,
}

impl RunResult {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: QueryId, ranking: Vec<DocId>) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(ranking.len());
        if let Some(d) = ranking.iter().find(|d| !seen.insert(**d)) {
            return Err(Error::invalid(format!("query {query} ranks document {d} twice")));
        }
        self.rankings.insert(query, ranking);
        Ok(())
    }

    pub fn ranking(&self, query: QueryId) -> Option<&[DocId]> {
        self.rankings.get(&query).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.rankings.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name", content = "cutoff")]
pub enum Metric {
    Mrr(usize),
    Hits(usize),
}

impl Metric {
    fn cutoff(self) -> usize {
        match self {
            Metric::Mrr(n) | Metric::Hits(n) => n,
        }
    }

    fn score(self, rank: Option<usize>) -> f64 {
        match (self, rank) {
            (_, None) => 0.0,
            (Metric::Mrr(n), Some(r)) if r <= n => 1.0 / r as f64,
            (Metric::Hits(n), Some(r)) if r <= n => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// Queries that contributed to the mean.
    pub evaluated: usize,
    /// Run queries that have no qrels entry and were ignored.
    pub skipped: usize,
}

/// Mean of `metric` over every query in `qrels`. Queries absent from the
/// run score zero; run queries absent from `qrels` are skipped and counted.
pub fn evaluate(run: &RunResult, qrels: &Qrels, metric: Metric) -> Result<MetricValue> {
    if metric.cutoff() == 0 {
        return Err(Error::invalid("metric cutoff must be at least 1"));
    }
    let skipped = run.queries().filter(|q| qrels.get(*q).is_none()).count();
    let mut total = 0.0;
    for (q, rel) in qrels.iter() {
        let rank = run
            .ranking(q)
            .and_then(|r| r.iter().position(|&d| d == rel.doc))
            .map(|p| p + 1);
        total += metric.score(rank);
    }
    let evaluated = qrels.len();
    Ok(MetricValue {
        value: if evaluated == 0 { 0.0 } else { total / evaluated as f64 },
        evaluated,
        skipped,
    })
}

pub fn mrr_at(run: &RunResult, qrels: &Qrels, n: usize) -> Result<MetricValue> {
    evaluate(run, qrels, Metric::Mrr(n))
}

pub fn hits_at(run: &RunResult, qrels: &Qrels, n: usize) -> Result<MetricValue> {
    evaluate(run, qrels, Metric::Hits(n))
}

/// `metric` over the queries whose relevant document arrived by `session`.
pub fn vert(run: &RunResult, qrels: &Qrels, metric: Metric, session: u32) -> Result<MetricValue> {
    evaluate(run, &qrels.filter(|_, r| r.arrival <= session), metric)
}

/// `R[t][i]`: performance on query set `i` after training session `t`,
/// defined for `i <= t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMatrix {
    rows: Vec<Vec<f64>>,
}

impl SessionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the row for the next session; it must have `t + 1` entries.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::invalid(format!(
                "row for session {} needs {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(i)).copied()
    }

    pub fn sessions(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinualMetrics {
    pub ap: f64,
    /// Forgetting; lower is better. Absent with a single session.
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
}

/// AP over the final row, BWT as mean drop from the diagonal to the final
/// row, FWT as the mean diagonal after session 0.
pub fn continual_metrics(rm: &SessionMatrix) -> Result<ContinualMetrics> {
    let n = rm.sessions();
    if n == 0 {
        return Err(Error::invalid("session matrix is empty"));
    }
    for (t, row) in rm.rows.iter().enumerate() {
        if row.len() != t + 1 || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("session matrix row {t} is incomplete")));
        }
    }
    let last = &rm.rows[n - 1];
    let ap = last.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(ContinualMetrics {
            ap,
            bwt: None,
            fwt: None,
        });
    }
    let t = (n - 1) as f64;
    let bwt = (0..n - 1).map(|i| rm.rows[i][i] - last[i]).sum::<f64>() / t;
    let fwt = (1..n).map(|i| rm.rows[i][i]).sum::<f64>() / t;
    Ok(ContinualMetrics {
        ap,
        bwt: Some(bwt),
        fwt: Some(fwt),
    })
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, offset: usize, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(offset as u64, format!("cannot parse {what} from '{s}'")))
}

fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').filter_map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((start, line))
        }
    })
}

/// `query_id<TAB>doc_id[<TAB>arrival_session]`; a missing session column reads as 0.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (off, line) in lines_with_offsets(text) {
        let f = fields(line);
        if !(2..=3).contains(&f.len()) {
            return Err(Error::format(
                off as u64,
                format!("qrels line needs 2 or 3 fields, got {}", f.len()),
            ));
        }
        let arrival = if f.len() == 3 {
            parse_num(f[2], off, "arrival session")?
        } else {
            0
        };
        q.insert(
            parse_num(f[0], off, "query id")?,
            parse_num(f[1], off, "doc id")?,
            arrival,
        )
        .map_err(|e| Error::format(off as u64, e.to_string()))?;
    }
    Ok(q)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, r) in qrels.iter() {
        let _ = writeln!(out, "{q}\t{}\t{}", r.doc, r.arrival);
    }
    out
}

/// `query_id<TAB>doc_id<TAB>rank<TAB>score`, ranks starting at 1.
pub fn parse_run(text: &str) -> Result<RunResult> {
    let mut rows: BTreeMap<QueryId, Vec<(usize, DocId)>> = BTreeMap::new();
    for (off, line) in lines_with_offsets(text) {
        let f = fields(line);
        if f.len() != 4 {
            return Err(Error::format(
                off as u64,
                format!("run line needs 4 fields, got {}", f.len()),
            ));
        }
        let q: QueryId = parse_num(f[0], off, "query id")?;
        let d: DocId = parse_num(f[1], off, "doc id")?;
        let rank: usize = parse_num(f[2], off, "rank")?;
        let _: f64 = parse_num(f[3], off, "score")?;
        rows.entry(q).or_default().push((rank, d));
    }
    let mut run = RunResult::new();
    for (q, mut r) in rows {
        r.sort_by_key(|(rank, _)| *rank);
        run.insert(q, r.into_iter().map(|(_, d)| d).collect())?;
    }
    Ok(run)
}

/// Scores are written as `-rank` when the caller has none.
pub fn format_run(run: &RunResult, scores: Option<&BTreeMap<QueryId, Vec<f64>>>) -> String {
    let mut out = String::new();
    for (q, ranking) in &run.rankings {
        for (i, d) in ranking.iter().enumerate() {
            let score = scores
                .and_then(|s| s.get(q))
                .and_then(|s| s.get(i))
                .copied()
                .unwrap_or(-((i + 1) as f64));
            let _ = writeln!(out, "{q}\t{d}\t{}\t{score}", i + 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::RandomSource;

    fn qrels(pairs: &[(QueryId, DocId, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for &(a, b, c) in pairs {
            q.insert(a, b, c).unwrap();
        }
        q
    }

    #[test]
    fn perfect_run() {
        let q = qrels(&[(1, 10, 0), (2, 20, 0)]);
        let mut run = RunResult::new();
        run.insert(1, vec![10, 11]).unwrap();
        run.insert(2, vec![20]).unwrap();
        assert_eq!(mrr_at(&run, &q, 10).unwrap().value, 1.0);
        assert_eq!(hits_at(&run, &q, 10).unwrap().value, 1.0);
    }

    #[test]
    fn hand_computed_values() {
        let q = qrels(&[(1, 10, 0), (2, 20, 0)]);
        let mut run = RunResult::new();
        run.insert(1, vec![5, 10]).unwrap();
        run.insert(2, vec![1, 2, 3]).unwrap();
        assert!((mrr_at(&run, &q, 10).unwrap().value - 0.25).abs() < 1e-12);

        let mut run = RunResult::new();
        run.insert(1, vec![10]).unwrap();
        run.insert(2, (100..110).chain([20]).collect()).unwrap();
        assert!((hits_at(&run, &q, 10).unwrap().value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_queries_are_skipped() {
        let q = qrels(&[(1, 10, 0)]);
        let mut run = RunResult::new();
        run.insert(1, vec![10]).unwrap();
        run.insert(99, vec![10]).unwrap();
        let v = mrr_at(&run, &q, 10).unwrap();
        assert_eq!((v.value, v.evaluated, v.skipped), (1.0, 1, 1));
        assert!(mrr_at(&run, &q, 0).is_err());
        assert!(run.insert(3, vec![1, 1]).is_err());
    }

    #[test]
    fn random_runs_match_scan_oracle() {
        let mut rng = RandomSource::new(3);
        for _ in 0..50 {
            let mut q = Qrels::new();
            let mut run = RunResult::new();
            let mut pairs = Vec::new();
            for qid in 0..20u32 {
                let rel = rng.index(30) as DocId;
                q.insert(qid, rel, 0).unwrap();
                let ranking: Vec<DocId> = rng.sample_indices(30, 15).into_iter().map(|d| d as DocId).collect();
                run.insert(qid, ranking.clone()).unwrap();
                pairs.push((rel, ranking));
            }
            let mut rr = 0.0;
            let mut hits = 0.0;
            for (rel, ranking) in &pairs {
                for (i, d) in ranking.iter().enumerate().take(10) {
                    if d == rel {
                        rr += 1.0 / (i + 1) as f64;
                        hits += 1.0;
                    }
                }
            }
            let m = mrr_at(&run, &q, 10).unwrap().value;
            let h = hits_at(&run, &q, 10).unwrap().value;
            assert!((m - rr / 20.0).abs() < 1e-12);
            assert!((h - hits / 20.0).abs() < 1e-12);
            assert!(h >= m);
        }
    }

    #[test]
    fn vert_filters_by_arrival() {
        // 5 queries, relevant docs arriving in sessions 0,0,1,2,2
        let q = qrels(&[(0, 0, 0), (1, 1, 0), (2, 2, 1), (3, 3, 2), (4, 4, 2)]);
        let mut run = RunResult::new();
        run.insert(0, vec![0]).unwrap();
        run.insert(1, vec![9, 1]).unwrap();
        run.insert(2, vec![9]).unwrap();
        run.insert(3, vec![8, 7, 3]).unwrap();
        run.insert(4, vec![4]).unwrap();
        let m = Metric::Mrr(10);
        assert!((vert(&run, &q, m, 0).unwrap().value - (1.0 + 0.5) / 2.0).abs() < 1e-12);
        assert!((vert(&run, &q, m, 1).unwrap().value - 1.5 / 3.0).abs() < 1e-12);
        let full = evaluate(&run, &q, m).unwrap().value;
        assert!((vert(&run, &q, m, 2).unwrap().value - full).abs() < 1e-12);
        assert!((full - (1.0 + 0.5 + 0.0 + 1.0 / 3.0 + 1.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn continual_examples() {
        let c = 0.37;
        let flat = SessionMatrix::from_rows(vec![vec![c], vec![c, c], vec![c, c, c]]).unwrap();
        let m = continual_metrics(&flat).unwrap();
        assert!((m.ap - c).abs() < 1e-12);
        assert!(m.bwt.unwrap().abs() < 1e-12);
        assert!((m.fwt.unwrap() - c).abs() < 1e-12);

        let rm = SessionMatrix::from_rows(vec![vec![0.8], vec![0.6, 0.7]]).unwrap();
        let m = continual_metrics(&rm).unwrap();
        assert!((m.ap - 0.65).abs() < 1e-12);
        assert!((m.bwt.unwrap() - 0.2).abs() < 1e-12);
        assert!((m.fwt.unwrap() - 0.7).abs() < 1e-12);

        let single = SessionMatrix::from_rows(vec![vec![0.4]]).unwrap();
        let m = continual_metrics(&single).unwrap();
        assert_eq!((m.ap, m.bwt, m.fwt), (0.4, None, None));

        assert!(continual_metrics(&SessionMatrix::new()).is_err());
        assert!(SessionMatrix::from_rows(vec![vec![0.1, 0.2]]).is_err());
    }

    #[test]
    fn tsv_formats() {
        let q = parse_qrels("1\t10\t0\n2\t20\t3\n\n3\t30\n").unwrap();
        assert_eq!(q.get(2), Some(Relevance { doc: 20, arrival: 3 }));
        assert_eq!(q.get(3), Some(Relevance { doc: 30, arrival: 0 }));
        assert_eq!(parse_qrels(&format_qrels(&q)).unwrap(), q);

        let run = parse_run("1\t5\t2\t-0.5\n1\t7\t1\t-0.1\n2\t9\t1\t0\n").unwrap();
        assert_eq!(run.ranking(1), Some(&[7, 5][..]));
        assert_eq!(parse_run(&format_run(&run, None)).unwrap(), run);

        match parse_qrels("1\t2\t0\nx\t3\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(parse_run("1\t2\t3\n").is_err());
        assert!(parse_qrels("1\t2\n1\t3\n").is_err());
    }
}

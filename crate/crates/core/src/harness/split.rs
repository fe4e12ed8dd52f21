//! Session splits for documents and sequential test query sets.

use crate::error::Result;
use crate::harness::config::check_fractions;
use crate::metrics::{Qrels, QueryId};
use crate::pq::DocId;
use crate::vector::RandomSource;

/// Integer sizes summing to `n`, proportional to `fractions`; leftover
/// units go to the largest fractional remainders (earlier sessions win ties).
pub fn session_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    check_fractions(fractions)?;
    let total: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Shuffle `ids` and cut them into consecutive sessions. Within a session
/// the shuffled order is the arrival order.
pub fn split_benchmark(ids: &[DocId], fractions: &[f64], rng: &mut RandomSource) -> Result<Vec<Vec<DocId>>> {
    let sizes = session_sizes(ids.len(), fractions)?;
    let mut order = ids.to_vec();
    rng.shuffle(&mut order);
    let mut out = Vec::with_capacity(sizes.len());
    let mut rest = order.as_slice();
    for s in sizes {
        let (head, tail) = rest.split_at(s);
        out.push(head.to_vec());
        rest = tail;
    }
    Ok(out)
}

/// Per-session test query sets for the sequential setting. Set `t` takes
/// its share of the queries, drawn in shuffled order from those not yet
/// assigned whose relevant document has arrived by session `t`; it is
/// smaller than its share when not enough such queries remain.
pub fn split_sequential_queries(qrels: &Qrels, fractions: &[f64], rng: &mut RandomSource) -> Result<Vec<Qrels>> {
    let sizes = session_sizes(qrels.len(), fractions)?;
    let mut pool: Vec<QueryId> = qrels.iter().map(|(q, _)| q).collect();
    rng.shuffle(&mut pool);
    let mut taken = vec![false; pool.len()];
    let mut sets = Vec::with_capacity(sizes.len());
    for (t, &want) in sizes.iter().enumerate() {
        let mut chosen = Vec::with_capacity(want);
        for (i, &q) in pool.iter().enumerate() {
            if chosen.len() == want {
                break;
            }
            let rel = qrels.get(q).expect("pool comes from qrels");
            if !taken[i] && rel.arrival as usize <= t {
                taken[i] = true;
                chosen.push(q);
            }
        }
        chosen.sort_unstable();
        sets.push(qrels.filter(|q, _| chosen.binary_search(&q).is_ok()));
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let ids: Vec<DocId> = (0..100).collect();
        let s = split_benchmark(&ids, &[0.6, 0.1, 0.1, 0.1, 0.1], &mut RandomSource::new(3)).unwrap();
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), vec![60, 10, 10, 10, 10]);
        let mut all: Vec<DocId> = s.concat();
        all.sort_unstable();
        assert_eq!(all, ids);
    }

    #[test]
    fn single_session_and_rounding() {
        let ids: Vec<DocId> = (0..7).collect();
        let s = split_benchmark(&ids, &[1.0], &mut RandomSource::new(0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 7);
        assert_eq!(session_sizes(7, &[0.5, 0.25, 0.25]).unwrap(), vec![3, 2, 2]);
        assert_eq!(session_sizes(10, &[0.6, 0.25, 0.15]).unwrap(), vec![6, 3, 1]);
        assert_eq!(session_sizes(0, &[0.6, 0.4]).unwrap(), vec![0, 0]);
        assert!(session_sizes(10, &[0.6, 0.3]).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let ids: Vec<DocId> = (0..50).collect();
        let f = [0.6, 0.2, 0.2];
        let a = split_benchmark(&ids, &f, &mut RandomSource::new(9)).unwrap();
        let b = split_benchmark(&ids, &f, &mut RandomSource::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequential_sets_respect_arrival() {
        let mut q = Qrels::new();
        for i in 0..100u32 {
            q.insert(i, i, if i < 60 { 0 } else { 1 + (i - 60) / 10 }).unwrap();
        }
        let sets = split_sequential_queries(&q, &[0.6, 0.1, 0.1, 0.1, 0.1], &mut RandomSource::new(1)).unwrap();
        assert_eq!(
            sets.iter().map(Qrels::len).collect::<Vec<_>>(),
            vec![60, 10, 10, 10, 10]
        );
        let mut seen = std::collections::HashSet::new();
        for (t, s) in sets.iter().enumerate() {
            for (qid, r) in s.iter() {
                assert!(r.arrival as usize <= t);
                assert!(seen.insert(qid));
            }
        }
    }
}

use proptest::prelude::*;

use ipqgr::harness::io::{decode_embeddings, encode_embeddings};
use ipqgr::ipq::{classify, Thresholds, UpdateKind};
use ipqgr::metrics::{continual_metrics, format_qrels, hits_at, mrr_at, parse_qrels, Qrels, RunResult, SessionMatrix};
use ipqgr::pq::{codebook_from_centroids, quantization_error, quantize, reconstruct};
use ipqgr::rehearsal::perturb_codes;
use ipqgr::{PqCode, RandomSource};

fn matrix(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6)
        .prop_flat_map(move |n| prop::collection::vec(prop::collection::vec((-1e6f32..1e6).prop_map(f64::from), d), n))
}

proptest! {
    #[test]
    fn embeddings_round_trip_bit_exact(rows in matrix(3)) {
        let bytes = encode_embeddings(&rows).unwrap();
        let back = decode_embeddings(&bytes).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_embeddings_fail(rows in matrix(2), cut in 1usize..8) {
        let bytes = encode_embeddings(&rows).unwrap();
        prop_assert!(decode_embeddings(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn quantize_is_optimal(seed in any::<u64>(), alt in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let groups: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..4).map(|_| (0..2).map(|_| rng.standard_normal()).collect()).collect())
            .collect();
        let cb = codebook_from_centroids(6, groups).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let code = quantize(&x, &cb).unwrap();
        let mut r2 = RandomSource::new(alt);
        let other = PqCode((0..3).map(|_| r2.index(4) as u32).collect());
        prop_assert!(quantization_error(&x, &code, &cb).unwrap() <= quantization_error(&x, &other, &cb).unwrap() + 1e-12);
        prop_assert_eq!(reconstruct(&code, &cb).unwrap().len(), 6);
    }

    #[test]
    fn classify_is_monotone(ad in 0.0f64..2.0, gap in 0.0f64..2.0, a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let t = Thresholds { ad, md: ad + gap };
        let rank = |k: UpdateKind| match k {
            UpdateKind::Unchanged => 0,
            UpdateKind::Changed => 1,
            UpdateKind::AddedNew => 2,
        };
        let (lo, hi) = (a.min(b), a.max(b));
        if !(ad == 0.0 && gap == 0.0) {
            prop_assert!(rank(classify(lo, t).unwrap()) <= rank(classify(hi, t).unwrap()));
        }
    }

    #[test]
    fn perturbation_flips_exactly_o(seed in any::<u64>(), m in 1usize..8, o_raw in 1usize..8) {
        let o = o_raw.min(m);
        let mut rng = RandomSource::new(seed);
        let code = PqCode((0..m).map(|_| rng.index(3) as u32).collect());
        let cb = codebook_from_centroids(m, vec![vec![vec![0.0], vec![1.0], vec![2.0]]; m]).unwrap();
        for n in perturb_codes(&code, o, 5, &cb, &mut rng).unwrap() {
            prop_assert_eq!(n.hamming(&code), o);
        }
    }

    #[test]
    fn metrics_ignore_query_order(ranks in prop::collection::vec(prop::option::of(0usize..15), 1..20)) {
        let build = |order: &mut dyn Iterator<Item = usize>| {
            let mut q = Qrels::new();
            let mut r = RunResult::new();
            for i in order {
                q.insert(i as u32, 1000, 0).unwrap();
                let mut ranking: Vec<u32> = (0..15).collect();
                if let Some(p) = ranks[i] {
                    ranking[p] = 1000;
                }
                r.insert(i as u32, ranking).unwrap();
            }
            (q, r)
        };
        let (q1, r1) = build(&mut (0..ranks.len()));
        let (q2, r2) = build(&mut (0..ranks.len()).rev());
        let m1 = mrr_at(&r1, &q1, 10).unwrap().value;
        let h1 = hits_at(&r1, &q1, 10).unwrap().value;
        prop_assert!((m1 - mrr_at(&r2, &q2, 10).unwrap().value).abs() < 1e-12);
        prop_assert!((h1 - hits_at(&r2, &q2, 10).unwrap().value).abs() < 1e-12);
        prop_assert!(h1 >= m1);
    }

    #[test]
    fn qrels_text_round_trip(rows in prop::collection::btree_map(0u32..500, (0u32..10_000, 0u32..5), 0..30)) {
        let mut q = Qrels::new();
        for (query, (doc, arrival)) in &rows {
            q.insert(*query, *doc, *arrival).unwrap();
        }
        let back = parse_qrels(&format_qrels(&q)).unwrap();
        prop_assert_eq!(format_qrels(&back), format_qrels(&q));
    }

    #[test]
    fn continual_metrics_bounds(values in prop::collection::vec(0.0f64..1.0, 15)) {
        let rows: Vec<Vec<f64>> = (0..5).map(|t| values[t * (t + 1) / 2..t * (t + 1) / 2 + t + 1].to_vec()).collect();
        let cm = continual_metrics(&SessionMatrix::from_rows(rows.clone()).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&cm.ap));
        prop_assert!((-1.0..=1.0).contains(&cm.bwt.unwrap()));
        let mut flat = rows;
        let diag: Vec<f64> = (0..flat.len()).map(|i| flat[i][i]).collect();
        *flat.last_mut().unwrap() = diag;
        let cm = continual_metrics(&SessionMatrix::from_rows(flat).unwrap()).unwrap();
        prop_assert!(cm.bwt.unwrap().abs() < 1e-12);
    }
}

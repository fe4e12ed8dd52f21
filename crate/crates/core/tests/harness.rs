use std::collections::HashMap;

use ipqgr::harness::synthetic::{generate, SyntheticConfig, TokenSpec};
use ipqgr::harness::{run_experiment, EvalSetting, Experiment, ExperimentConfig, Report, Variant};
use ipqgr::metrics::evaluate;
use ipqgr::{DocId, Error, PqCode};

fn quick(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        decoder_steps: 20,
        base_decoder_steps: 20,
        ..ExperimentConfig::desk().with_variant(variant)
    }
}

fn data() -> ipqgr::harness::Dataset {
    generate(&SyntheticConfig {
        num_docs: 200,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

#[test]
fn single_session_has_no_transfer_metrics() {
    let data = data();
    let cfg = ExperimentConfig {
        session_fractions: vec![1.0],
        ..quick(Variant::Full)
    };
    let exp = Experiment::new(cfg.clone(), &data).unwrap();
    let (state, _) = exp.initial_state().unwrap();
    let (run, _) = exp.retrieve(&state).unwrap();
    let plain = evaluate(&run, &data.test_qrels, cfg.metric).unwrap().value;

    let report = run_experiment(&cfg, &data).unwrap();
    assert_eq!(report.sessions.len(), 1);
    assert!(report.continual.bwt.is_none());
    assert!(report.continual.fwt.is_none());
    assert!((report.final_vert - plain).abs() < 1e-12);
}

#[test]
fn every_variant_runs() {
    let data = data();
    for v in Variant::ALL {
        let r = run_experiment(&quick(v), &data).unwrap();
        assert_eq!(r.sessions.len(), 5, "{}", v.name());
        assert_eq!(r.num_docs, 200);
        assert!((0.0..=1.0).contains(&r.final_vert));
        assert_eq!(Report::from_json(&r.to_json()).unwrap().to_json(), r.to_json());
    }
}

#[test]
fn recluster_variant_reassigns_old_docids() {
    let data = data();
    let exp = Experiment::new(quick(Variant::PqRe), &data).unwrap();
    let (mut state, _) = exp.initial_state().unwrap();
    let before: HashMap<DocId, PqCode> = state.codes.iter().map(|c| (c.doc, c.code.clone())).collect();
    let out = exp.step(&mut state).unwrap();
    let moved = state
        .codes
        .iter()
        .filter(|c| before.get(&c.doc).is_some_and(|b| b != &c.code))
        .count();
    assert!(moved > 0);
    assert_eq!(out.block.reassigned_old_docs, moved);
    for g in &state.codebook.groups {
        assert_eq!(g.num_centroids(), 8);
    }
}

#[test]
fn incremental_variants_keep_old_docids() {
    let data = data();
    let exp = Experiment::new(quick(Variant::Full), &data).unwrap();
    let (mut state, _) = exp.initial_state().unwrap();
    let before: Vec<_> = state.codes.clone();
    for _ in 0..4 {
        let out = exp.step(&mut state).unwrap();
        assert_eq!(out.block.reassigned_old_docs, 0);
    }
    assert_eq!(&state.codes[..before.len()], &before[..]);
    assert_eq!(state.codes.len(), 200);
}

#[test]
fn sequential_setting_scores_each_session_set() {
    let data = data();
    let cfg = ExperimentConfig {
        setting: EvalSetting::Sequential,
        ..quick(Variant::Full)
    };
    let exp = Experiment::new(cfg.clone(), &data).unwrap();
    let total: usize = (0..exp.num_sessions()).map(|i| exp.query_set(i).unwrap().len()).sum();
    assert_eq!(total, data.test_qrels.len());
    let r = run_experiment(&cfg, &data).unwrap();
    assert_eq!(r.matrix.len(), 5);
    for (t, row) in r.matrix.iter().enumerate() {
        assert_eq!(row.len(), t + 1);
    }
}

#[test]
fn token_mode_trains_the_projector() {
    let data = generate(&SyntheticConfig {
        num_docs: 60,
        tokens: Some(TokenSpec {
            min_len: 20,
            max_len: 32,
            token_std: 0.2,
        }),
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = ExperimentConfig {
        hidden_dim: 8,
        repr_epochs: 1,
        repr_inner_iters: 3,
        ..quick(Variant::Full)
    };
    let r = run_experiment(&cfg, &data).unwrap();
    assert_eq!(r.sessions.len(), 5);
    assert!(r.sessions[0].model_floats > 0);
}

#[test]
fn state_from_another_config_is_rejected() {
    let data = data();
    let exp = Experiment::new(quick(Variant::Full), &data).unwrap();
    let (mut state, _) = exp.initial_state().unwrap();
    let other = Experiment::new(quick(Variant::Base), &data).unwrap();
    assert!(matches!(other.step(&mut state), Err(Error::InvalidState(_))));
}

#[test]
fn dimension_mismatch_is_rejected() {
    let data = data();
    let cfg = ExperimentConfig {
        dim: 32,
        ..quick(Variant::Full)
    };
    assert!(Experiment::new(cfg, &data).is_err());
}

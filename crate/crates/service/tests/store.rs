use std::path::PathBuf;

use mapsmith::mapping::Term;
use mapsmith::schema::{AttrRef, Correspondence};
use mapsmith_service::{
    run_job, BackendKind, BackendSpec, DecisionInput, JobConfig, JobResult, JobState, JobStore, ServiceError, Verdict,
};

fn data(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(path)
}

fn match_config() -> JobConfig {
    JobConfig::Match {
        source: data("drugs/source.json"),
        target: data("drugs/target.json"),
        source_relation: None,
        target_relation: None,
        gold: Some(data("drugs/gold_alignment.json")),
        config: Default::default(),
    }
}

fn pair(s: &str, t: &str) -> Correspondence {
    let split = |x: &str| {
        let (r, a) = x.split_once('.').unwrap();
        AttrRef::new(r, a)
    };
    Correspondence::new(split(s), split(t))
}

fn decide(verdict: Verdict, p: &Correspondence) -> DecisionInput {
    DecisionInput {
        pair: p.clone(),
        verdict,
        note: String::new(),
    }
}

/// A store holding one finished match job over the drug schemas.
fn finished_job() -> (tempfile::TempDir, JobStore, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let (job, inputs) = store.submit(match_config(), None).unwrap();
    let done = run_job(&store, &BackendSpec::new(BackendKind::Demo), &job.id, &inputs.unwrap()).unwrap();
    assert_eq!(done.state, JobState::Done, "{:?}", done.error);
    (dir, store, job.id)
}

#[test]
fn match_job_finishes_with_result_and_transcript() {
    let (_dir, store, id) = finished_job();
    let job = store.get(&id).unwrap();
    assert!(job.result.is_some() && job.finished_at.is_some() && job.started_at.is_some());
    let JobResult::Match { results } = store.result(&id).unwrap() else {
        panic!()
    };
    assert_eq!(results.len(), 4);
    let meds_drugs = results.iter().find(|r| r.source_relation == "meds" && r.target_relation == "Drugs").unwrap();
    assert_eq!(meds_drugs.ranked["brand_name"][0].pair, pair("meds.generic_name", "Drugs.brand_name"));
    assert!(!store.transcript(&id).unwrap().is_empty());
}

#[test]
fn duplicate_request_key_returns_same_job() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let (a, first) = store.submit(match_config(), Some("k1".into())).unwrap();
    let (b, second) = store.submit(match_config(), Some("k1".into())).unwrap();
    assert!(first.is_some() && second.is_none());
    assert_eq!(a.id, b.id);
    let (c, _) = store.submit(match_config(), Some("k2".into())).unwrap();
    assert_ne!(a.id, c.id);
    assert_eq!(store.list().len(), 2);
    // The key survives a restart.
    drop(store);
    let store = JobStore::open(dir.path()).unwrap();
    let (d, again) = store.submit(match_config(), Some("k1".into())).unwrap();
    assert!(again.is_none());
    assert_eq!(d.id, a.id);
}

#[test]
fn missing_schema_is_rejected_before_queueing() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let JobConfig::Match { target, gold, config, .. } = match_config() else {
        unreachable!()
    };
    let bad = JobConfig::Match {
        source: data("drugs/nope.json"),
        target,
        source_relation: None,
        target_relation: None,
        gold,
        config,
    };
    assert!(matches!(store.submit(bad, None), Err(ServiceError::InvalidConfig(_))));
    assert!(store.list().is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_relation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let JobConfig::Match {
        source, target, config, ..
    } = match_config()
    else {
        unreachable!()
    };
    let bad = JobConfig::Match {
        source,
        target,
        source_relation: Some("patients".into()),
        target_relation: None,
        gold: None,
        config,
    };
    assert!(matches!(store.submit(bad, None), Err(ServiceError::InvalidConfig(_))));
}

#[test]
fn transitions_only_move_forward() {
    let (_dir, store, id) = finished_job();
    assert!(matches!(store.mark_running(&id), Err(ServiceError::Conflict(_))));
    assert!(matches!(store.fail(&id, "late"), Err(ServiceError::Conflict(_))));
    assert_eq!(store.get(&id).unwrap().state, JobState::Done);
}

#[test]
fn restart_fails_interrupted_jobs_and_keeps_finished_ones() {
    let (dir, store, done_id) = finished_job();
    let result_path = store.job_dir(&done_id).join("result.json");
    let result_bytes = std::fs::read(&result_path).unwrap();

    let (running, _) = store.submit(match_config(), None).unwrap();
    store.mark_running(&running.id).unwrap();
    let partial = store.job_dir(&running.id).join("transcript.jsonl");
    std::fs::write(&partial, "{\"partial\":true}\n").unwrap();
    let (queued, _) = store.submit(match_config(), None).unwrap();
    drop(store);

    let store = JobStore::open(dir.path()).unwrap();
    for id in [&running.id, &queued.id] {
        let job = store.get(id).unwrap();
        assert_eq!(job.state, JobState::Failed);
        assert!(job.error.unwrap().starts_with("interrupted"));
        assert!(job.result.is_none());
    }
    assert_eq!(std::fs::read_to_string(&partial).unwrap(), "{\"partial\":true}\n");
    assert_eq!(store.get(&done_id).unwrap().state, JobState::Done);
    assert_eq!(std::fs::read(&result_path).unwrap(), result_bytes);

    // A second restart changes nothing further.
    let before = store.list();
    drop(store);
    assert_eq!(JobStore::open(dir.path()).unwrap().list(), before);
}

#[test]
fn later_decisions_supersede_earlier_ones() {
    let (_dir, store, id) = finished_job();
    let p = pair("meds.generic_name", "Drugs.brand_name");
    store.record_decision(&id, decide(Verdict::Rejected, &p)).unwrap();
    store.record_decision(&id, decide(Verdict::Accepted, &p)).unwrap();
    assert_eq!(store.verdicts(&id).unwrap()[&p], Verdict::Accepted);
    assert_eq!(store.decisions(&id).unwrap().len(), 2);
    assert_eq!(store.export(&id).unwrap().alignment, vec![p]);
}

#[test]
fn decision_on_non_candidate_is_an_error() {
    let (_dir, store, id) = finished_job();
    let p = pair("meds.dosage", "Drugs.side_effects");
    let err = store.record_decision(&id, decide(Verdict::Accepted, &p)).unwrap_err();
    assert!(matches!(err, ServiceError::NotFound(_)));
    assert!(store.decisions(&id).unwrap().is_empty());
    assert!(matches!(
        store.record_decision("missing", decide(Verdict::Accepted, &p)),
        Err(ServiceError::UnknownJob(_))
    ));
}

#[test]
fn edits_replace_the_pair_and_must_resolve() {
    let (_dir, store, id) = finished_job();
    let p = pair("meds.generic_name", "Drugs.brand_name");
    let bogus = Verdict::Edited {
        replacement: pair("meds.nothing", "Drugs.brand_name"),
    };
    assert!(matches!(store.record_decision(&id, decide(bogus, &p)), Err(ServiceError::BadRequest(_))));
    let fixed = pair("meds.generic_name", "Drugs.uses");
    store
        .record_decision(&id, decide(Verdict::Edited { replacement: fixed.clone() }, &p))
        .unwrap();
    assert_eq!(store.export(&id).unwrap().alignment, vec![fixed]);
}

#[test]
fn decisions_need_a_finished_match_job() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let (job, _) = store.submit(match_config(), None).unwrap();
    let p = pair("meds.generic_name", "Drugs.brand_name");
    assert!(store.record_decision(&job.id, decide(Verdict::Accepted, &p)).is_err());
    assert!(matches!(store.export(&job.id), Err(ServiceError::Conflict(_))));
}

#[test]
fn export_of_one_pair_is_one_skeleton() {
    let (_dir, store, id) = finished_job();
    let p = pair("meds.generic_name", "Drugs.brand_name");
    store.record_decision(&id, decide(Verdict::Accepted, &p)).unwrap();
    let doc = store.export(&id).unwrap();
    assert_eq!(doc.skeletons.len(), 1);
    let s = &doc.skeletons[0];
    assert!(s.draft);
    let rule = &s.rule;
    assert_eq!(rule.source_atoms.len(), 1);
    assert_eq!(rule.target_atoms.len(), 1);
    assert_eq!(rule.source_atoms[0].relation, "meds");
    assert_eq!(rule.target_atoms[0].relation, "Drugs");
    let (source, target) = store.schemas(&id).unwrap();
    let drugs = target.relation("Drugs").unwrap();
    let brand = drugs.attributes.iter().position(|a| a.name == "brand_name").unwrap();
    assert_eq!(rule.target_atoms[0].terms[brand], Term::var("v_generic_name"));
    assert_eq!(rule.existentials.len(), drugs.attributes.len() - 1);
    assert_eq!(rule.universals.len(), source.relation("meds").unwrap().attributes.len());
    assert!(s.sql.contains("INSERT INTO Drugs"));
    // Skeletons are valid rules over the job's schemas.
    mapsmith::mapping::Mapping::new(source.into(), target.into(), vec![rule.clone()]).unwrap();
}

#[test]
fn export_groups_by_relation_pair() {
    let (_dir, store, id) = finished_job();
    let candidates: Vec<Correspondence> = store
        .candidates(&id)
        .unwrap()
        .iter()
        .flat_map(|r| r.candidates().map(|c| c.pair.clone()).collect::<Vec<_>>())
        .collect();
    let a = pair("meds.generic_name", "Drugs.brand_name");
    let b = candidates
        .iter()
        .find(|c| c.target.relation == "Clinical_Trials")
        .expect("a trial candidate")
        .clone();
    store.record_decision(&id, decide(Verdict::Accepted, &a)).unwrap();
    store.record_decision(&id, decide(Verdict::Accepted, &b)).unwrap();
    let doc = store.export(&id).unwrap();
    assert_eq!(doc.alignment.len(), 2);
    assert_eq!(doc.skeletons.len(), 2);
}

#[test]
fn export_with_nothing_accepted_is_empty() {
    let (_dir, store, id) = finished_job();
    let doc = store.export(&id).unwrap();
    assert!(doc.alignment.is_empty() && doc.skeletons.is_empty());
    let p = pair("meds.generic_name", "Drugs.brand_name");
    store.record_decision(&id, decide(Verdict::Rejected, &p)).unwrap();
    assert!(store.export(&id).unwrap().alignment.is_empty());
}

#[test]
fn export_replays_byte_identically() {
    let (dir, store, id) = finished_job();
    let results = store.candidates(&id).unwrap();
    let all: Vec<Correspondence> = results.iter().flat_map(|r| r.candidates()).map(|c| c.pair.clone()).collect();
    for (i, p) in all.iter().enumerate() {
        let v = if i % 3 == 1 { Verdict::Rejected } else { Verdict::Accepted };
        store.record_decision(&id, decide(v, p)).unwrap();
    }
    let before = store.export(&id).unwrap().to_json();
    drop(store);
    let store = JobStore::open(dir.path()).unwrap();
    assert_eq!(store.export(&id).unwrap().to_json(), before);
}

#[test]
fn every_job_kind_runs_on_the_demo_backend() {
    let dir = tempfile::tempdir().unwrap();
    let store = JobStore::open(dir.path()).unwrap();
    let bib = |f: &str| data(&format!("bibliography/{f}"));
    let configs = [
        JobConfig::MapGen {
            source: bib("source.json"),
            target: bib("target.json"),
            gold_mapping: Some(bib("gold_mapping.sql")),
            seed: 4,
            transform: Default::default(),
        },
        JobConfig::Eval {
            source: data("drugs/source.json"),
            target: data("drugs/target.json"),
            gold: data("drugs/gold_alignment.json"),
            seeds: vec![0, 1],
            config: Default::default(),
            stable_rounds: 2,
            average_k: 3,
        },
        JobConfig::MrppSweep {
            source: bib("source.json"),
            target: bib("target.json"),
            gold_mapping: bib("gold_mapping.sql"),
            instance: mapsmith_service::jobs::InstanceSpec {
                rows_per_table: 20,
                ..Default::default()
            },
            config: mapsmith::eval::MrppConfig {
                mrpp: vec![1, 7],
                seeds: vec![0, 1],
                ..Default::default()
            },
        },
    ];
    for config in configs {
        let (job, inputs) = store.submit(config, None).unwrap();
        let done = run_job(&store, &BackendSpec::new(BackendKind::Demo), &job.id, &inputs.unwrap()).unwrap();
        assert_eq!(done.state, JobState::Done, "{:?}", done.error);
        match store.result(&job.id).unwrap() {
            JobResult::MapGen(r) => {
                assert!(r.diagnostics.is_empty());
                assert_eq!(r.rules.len(), 7);
            }
            JobResult::Eval { table } => assert!(table.multiply_k >= 1),
            JobResult::MrppSweep { report } => {
                assert_eq!(report.summary.len(), 2);
                assert!(report.cells.iter().all(|c| c.table.unwrap().f1 == 1.0));
            }
            JobResult::Match { .. } => unreachable!(),
        }
        // Non-match jobs have no candidates to review.
        assert!(matches!(store.candidates(&job.id), Err(ServiceError::BadRequest(_))));
    }
}

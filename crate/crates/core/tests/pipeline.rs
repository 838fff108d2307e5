use std::sync::Arc;

use mapsmith::eval::{gold_echo_backend, run_mrpp_experiment, MrppConfig};
use mapsmith::eval::generate_eval_instance;
use mapsmith::fixtures::{biblio_gold_mapping, biblio_source, drugs_gold_alignment, source_schema, target_schema};
use mapsmith::gateway::{find_json_objects, Gateway, MockBackend, Oracle, RecordingBackend};
use mapsmith::matching::{build_match_prompts, run_match, MatchConfig};
use mapsmith::prompt::{Direction, TransformOptions};
use mapsmith::schema::{AttributeDef, RelationDef};

fn rel(name: &str, attrs: &[(&str, &str)]) -> RelationDef {
    RelationDef {
        name: name.into(),
        description: None,
        attributes: attrs
            .iter()
            .map(|(n, t)| AttributeDef::new(*n, *t, true, None, Vec::<String>::new()))
            .collect(),
        primary_key: vec![],
        foreign_keys: vec![],
    }
}

/// Attributes listed in the relation document of a match prompt.
fn listed(body: &str) -> usize {
    find_json_objects(body)[0]["attributes"].as_array().unwrap().len()
}

#[test]
fn prefilter_lists_only_same_broad_type() {
    let source = rel(
        "S",
        &[("a", "int"), ("b", "decimal"), ("c", "bigint"), ("d", "text"), ("e", "varchar(10)"), ("f", "char")],
    );
    let numeric = rel("T", &[("t", "integer")]);
    let other = rel("U", &[("u", "blob")]);
    let opts = TransformOptions::sampling();
    let prompts = build_match_prompts(&source, &numeric, 3, 9, &opts, Direction::Forward, true);
    assert_eq!(prompts.len(), 3);
    assert!(prompts.iter().all(|p| listed(&p.spec.body) == 3));
    let prompts = build_match_prompts(&source, &other, 3, 9, &opts, Direction::Forward, true);
    assert!(prompts.iter().all(|p| listed(&p.spec.body) == 6));
    let prompts = build_match_prompts(&source, &numeric, 3, 9, &opts, Direction::Forward, false);
    assert!(prompts.iter().all(|p| listed(&p.spec.body) == 6));
}

#[test]
fn replayed_fixtures_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (source_schema(), target_schema());
    let (meds, drugs) = (s.relation("meds").unwrap(), t.relation("Drugs").unwrap());
    let config = MatchConfig {
        seed: 42,
        ..MatchConfig::default()
    };
    let recorder = RecordingBackend::new(Oracle::exact(drugs_gold_alignment()).into_backend(), dir.path()).unwrap();
    let recorded = run_match(&Gateway::new(Arc::new(recorder)), meds, drugs, &config).unwrap();
    let replay = || {
        let backend = MockBackend::from_dir(dir.path()).unwrap();
        run_match(&Gateway::new(Arc::new(backend)), meds, drugs, &config).unwrap().to_report()
    };
    let (a, b) = (replay(), replay());
    assert_eq!(a, b);
    assert_eq!(a, recorded.to_report());
    assert!(recorded.ranked["brand_name"][0].pair.source.attribute == "generic_name");
}

#[test]
fn mrpp_tokens_equal_transcript_sums() {
    let gold = biblio_gold_mapping();
    let inst = generate_eval_instance(&biblio_source(), 30, 0.1, 0.1, 5).unwrap();
    let gw = Gateway::new(Arc::new(gold_echo_backend(&gold)));
    let config = MrppConfig {
        mrpp: (1..=7).collect(),
        seeds: MrppConfig::seeds_from(1, 2),
        ..MrppConfig::default()
    };
    let report = run_mrpp_experiment(&gw, &gold, &inst, &config).unwrap();
    let input: u64 = report.cells.iter().map(|c| c.input_tokens()).sum();
    let output: u64 = report.cells.iter().map(|c| c.output_tokens()).sum();
    let usage = gw.usage();
    assert_eq!((input, output), (usage.input_tokens, usage.output_tokens));
    let prompts: usize = report.cells.iter().map(|c| c.prompts.len()).sum();
    assert_eq!(prompts, gw.transcript().len());
}

use std::path::{Path, PathBuf};

use chess_probe::concepts::ConceptId;
use chess_probe::cpaf;
use chess_probe::dataset::{to_epd_string, write_c960, LabeledPosition, Scenario, Variant};
use chess_probe::experiment::{self, emit_table, AggKey, ExperimentError, RunConfig, TableFormat};
use chess_probe::probes::{HyperParams, Method};
use chess_probe::synth::{generate_for_dataset, synthetic_corpus, PlantConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    std_data: PathBuf,
    std_acts: PathBuf,
    c960_data: PathBuf,
    c960_acts: PathBuf,
}

fn write_acts(plant: &PlantConfig, corpus: &[LabeledPosition], path: &Path) {
    let (meta, records) = generate_for_dataset(plant, corpus).unwrap();
    cpaf::write(path, &meta, &records).unwrap();
}

fn fixture(plant: &PlantConfig, per_concept: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let std = synthetic_corpus(Variant::Standard, per_concept, 1).unwrap();
    let c960 = synthetic_corpus(Variant::Chess960, per_concept, 2).unwrap();
    std::fs::write(p("std.epd"), to_epd_string(&std)).unwrap();
    write_c960(&p("c960.c960"), &c960).unwrap();
    write_acts(plant, &std, &p("std.cpaf"));
    write_acts(plant, &c960, &p("c960.cpaf"));
    Fixture {
        std_data: p("std.epd"),
        std_acts: p("std.cpaf"),
        c960_data: p("c960.c960"),
        c960_acts: p("c960.cpaf"),
        _dir: dir,
    }
}

fn config(f: &Fixture) -> RunConfig {
    RunConfig {
        scenarios: vec![Scenario::I],
        concepts: vec![ConceptId::KnightOutposts, ConceptId::CenterPawnPlay],
        layers: vec![0, 2],
        k: 3,
        seed: 4,
        hyper: HyperParams {
            epochs: 40,
            learning_rate: 0.01,
            ..HyperParams::default()
        },
        std_data: Some(f.std_data.clone()),
        std_acts: Some(f.std_acts.clone()),
        c960_data: Some(f.c960_data.clone()),
        c960_acts: Some(f.c960_acts.clone()),
        out: f._dir.path().join("out"),
        workers: Some(2),
        ..RunConfig::default()
    }
}

fn small_plant() -> PlantConfig {
    PlantConfig::new(4, 3, 32, 6)
}

#[test]
fn reruns_reproduce_the_table() {
    let f = fixture(&small_plant(), 15);
    let c = config(&f);
    let a = experiment::run(&c).unwrap();
    let b = experiment::run(&RunConfig { workers: Some(1), ..c.clone() }).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        emit_table(&a, TableFormat::Csv).unwrap(),
        emit_table(&b, TableFormat::Csv).unwrap()
    );
    let other = experiment::run(&RunConfig { seed: 5, ..c }).unwrap();
    assert_ne!(a.rows, other.rows);
}

#[test]
fn layer_past_the_file_is_rejected() {
    let f = fixture(&small_plant(), 5);
    let err = experiment::run(&RunConfig { layers: vec![1, 4], ..config(&f) }).unwrap_err();
    assert!(
        matches!(err, ExperimentError::LayerOutOfRange { layer: 4, layers: 4, .. }),
        "{err}"
    );
}

#[test]
fn missing_activation_is_rejected() {
    let f = fixture(&small_plant(), 5);
    let mut std = synthetic_corpus(Variant::Standard, 5, 1).unwrap();
    let dropped = std.remove(7);
    write_acts(&small_plant(), &std, &f.std_acts);
    let err = experiment::run(&config(&f)).unwrap_err();
    match err {
        ExperimentError::MissingActivation { variant, fen } => {
            assert_eq!(variant, Variant::Standard);
            assert_eq!(fen, dropped.canonical_fen());
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn scenario_inputs_are_required() {
    let f = fixture(&small_plant(), 5);
    let err = experiment::run(&RunConfig {
        scenarios: vec![Scenario::IV],
        c960_acts: None,
        ..config(&f)
    })
    .unwrap_err();
    assert!(matches!(err, ExperimentError::MissingInput { .. }), "{err}");
}

#[test]
fn cross_variant_scenarios_run() {
    let f = fixture(&small_plant(), 15);
    let c = RunConfig {
        scenarios: vec![Scenario::II, Scenario::III, Scenario::IV],
        methods: vec![Method::Logistic],
        ..config(&f)
    };
    let t = experiment::run(&c).unwrap();
    assert_eq!(t.rows.len(), 3 * 2 * 2 * 3);
    assert_eq!(t.failures(), 0);
    for r in &t.rows {
        let s = r.outcome.as_ref().unwrap();
        assert!(s.n_train > 0 && s.n_test > 0, "{}", r.key);
    }
    // the planted signal is shared by both variants, so it transfers
    for scenario in [Scenario::II, Scenario::III, Scenario::IV] {
        let l0: Vec<f64> = t
            .rows
            .iter()
            .filter(|r| r.key.scenario == scenario && r.key.layer == 0)
            .map(|r| r.outcome.as_ref().unwrap().accuracy)
            .collect();
        let mean = l0.iter().sum::<f64>() / l0.len() as f64;
        assert!(mean > 0.8, "{scenario}: {l0:?}");
    }
    // scenario II trains on every standard record and tests on every c960 one
    let ii: Vec<_> = t.rows.iter().filter(|r| r.key.scenario == Scenario::II).collect();
    let n_test = ii[0].outcome.as_ref().unwrap().n_test;
    assert!(ii.iter().all(|r| r.outcome.as_ref().unwrap().n_test == n_test));
}

#[test]
fn all_layer_runs_trace_the_planted_decay() {
    let plant = PlantConfig {
        alpha0: 3.0,
        decay: 0.6,
        ..PlantConfig::new(6, 3, 64, 12)
    };
    let f = fixture(&plant, 150);
    let c = RunConfig {
        concepts: vec![ConceptId::CenterControl],
        all_layers: true,
        k: 5,
        hyper: HyperParams {
            epochs: 150,
            learning_rate: 0.05,
            lambda: 1e-4,
            ..HyperParams::default()
        },
        ..config(&f)
    };
    let t = experiment::run(&c).unwrap();
    assert_eq!(t.failures(), 0);
    for method in Method::ALL {
        let means: Vec<f64> = (0..6)
            .map(|layer| {
                t.aggregate(AggKey {
                    concept: ConceptId::CenterControl,
                    method,
                    scenario: Scenario::I,
                    layer,
                })
                .unwrap()
                .mean
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 0.03, "{method}: {means:?}");
        }
        assert!(means[0] - means[5] > 0.15, "{method}: {means:?}");
    }
}

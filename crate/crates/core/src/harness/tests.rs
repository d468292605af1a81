use super::*;

const BASE: &str = r#"
version = 1
seed = 3

[[traces]]
kind = "synthetic"
name = "hc"
n_requests = 1500
hot_page_count = 1
cold_page_count = 20
hot_access_fraction = 0.5
write_fraction = 0.3

[system]
preset = "H&L"
capacity_pages = [1]

[policy]
name = "cde"
"#;

fn cfg(policy: &str) -> ExperimentConfig {
    let text = BASE.replace("name = \"cde\"", policy);
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn parses_with_defaults() {
    let c = cfg("name = \"cde\"");
    assert_eq!(c.policy, PolicyConfig::Cde(Default::default()));
    assert_eq!(c.hyperparams, crate::rlcore::Hyperparams::default());
    assert_eq!(c.output, OutputConfig::default());
    c.validate(Path::new(".")).unwrap();
}

#[test]
fn unknown_field_reports_path() {
    let text = BASE.replace("preset = \"H&L\"", "preset = \"H&L\"\nfast_pct = 3");
    let err = ExperimentConfig::from_toml(&text).unwrap_err();
    match err {
        HarnessError::Config { field, message } => {
            assert_eq!(field, "system.fast_pct");
            assert!(message.contains("fast_pct"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn validation_names_the_field() {
    let mut c = cfg("name = \"cde\"");
    c.system.capacity_pages = None;
    c.system.capacity_pct = Some(vec![0.0]);
    let err = c.validate(Path::new(".")).unwrap_err();
    assert!(
        matches!(err, HarnessError::Config { ref field, .. } if field == "system.capacity_pct[0]"),
        "{err}"
    );
    c.system.capacity_pct = Some(vec![100.0]);
    c.validate(Path::new(".")).unwrap();
    c.traces.push(TraceSource::Msrc {
        path: "missing.csv".into(),
        name: None,
        limit: None,
    });
    let err = c.validate(Path::new(".")).unwrap_err();
    assert_eq!(err.to_json()["field"], "traces[1].path");
}

#[test]
fn hash_tracks_content() {
    let a = cfg("name = \"cde\"");
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 16);
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn fast_only_normalizes_to_one() {
    let recs = run_experiment(&cfg("name = \"fast_only\""), Path::new(".")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].row.normalized_latency, 1.0);
}

#[test]
fn slow_only_normalizes_above_one() {
    let recs = run_experiment(&cfg("name = \"slow_only\""), Path::new(".")).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].row.policy, "fast_only");
    assert_eq!(recs[0].row.normalized_latency, 1.0);
    assert!(recs[1].row.normalized_latency > 1.0);
}

#[test]
fn csv_is_reproducible_and_ordered() {
    let c = cfg("name = \"agent\"");
    let render = || {
        let rows: Vec<MetricsRow> = run_experiment(&c, Path::new("."))
            .unwrap()
            .into_iter()
            .map(|r| r.row)
            .collect();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    assert_eq!(a.lines().next().unwrap(), CSV_COLUMNS.join(","));
}

#[test]
fn grid_cross_product() {
    let g = GridSpec::from_toml("gamma = [0.0, 0.9]\nseed = [1, 2, 3]").unwrap();
    let pts = g.points().unwrap();
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[0].label(), "gamma=0;seed=1");
    assert_eq!(pts[5].label(), "gamma=0.9;seed=3");
    assert!(matches!(GridSpec::default().points(), Err(HarnessError::EmptyGrid)));
}

#[test]
fn grid_point_applies_capacity() {
    let c = cfg("name = \"cde\"");
    let p = GridPoint {
        fast_capacity_pct: Some(50.0),
        ..GridPoint::default()
    };
    let applied = p.apply(&c);
    assert_eq!(applied.system.capacity_pct, Some(vec![50.0]));
    assert_eq!(applied.system.capacity_pages, None);
}

#[test]
fn sweep_tags_points() {
    let c = cfg("name = \"random\"");
    let g = GridSpec::from_toml("seed = [1, 2]").unwrap();
    let recs = sweep(&c, &g, Path::new(".")).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[0].row.grid_point, "seed=1");
    assert_eq!(recs[3].row.grid_point, "seed=2");
    assert_eq!(recs[3].row.seed, 2);
}

#[test]
fn mixed_workload_runs_as_one() {
    let mut c = cfg("name = \"cde\"");
    c.traces.push(TraceSource::Analog {
        profile: "prxy_0".into(),
        n_requests: Some(800),
        seed: None,
    });
    c.mix = Some(MixConfig {
        name: "mix1".into(),
        offsets_ns: vec![0, 500],
    });
    c.system.capacity_pages = None;
    let recs = run_experiment(&c, Path::new(".")).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1].row.workload, "mix1");
    assert_eq!(recs[1].row.requests, 2300);
}

#[test]
fn agent_checkpoint_round_trips() {
    let c = cfg("name = \"agent\"\ncheckpoint = true");
    let recs = run_experiment(&c, Path::new(".")).unwrap();
    let bytes = recs[1].checkpoint.as_ref().unwrap();
    let net = crate::rlcore::read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(net.weight_count(), 6 * 20 + 20 * 30 + 30 * 2 * 51);
}

#[test]
fn tri_heuristic_requires_three_tiers() {
    let c = cfg("name = \"tri_heuristic\"");
    assert!(c.validate(Path::new(".")).is_err());
}

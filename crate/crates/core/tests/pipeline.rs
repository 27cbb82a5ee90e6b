use std::path::{Path, PathBuf};

use retroforecast::models::{Architecture, Method};
use retroforecast::pipeline::{self, RunConfig, RunManifest};
use retroforecast::{ArrowConfig, Case, MapConfig, TrainConfig};

fn tiny(out: PathBuf) -> RunConfig {
    RunConfig {
        cases: vec![Case::B, Case::D],
        series_len: 1500,
        arrow: ArrowConfig {
            n_perm: 20,
            ..ArrowConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            arch: Architecture {
                hidden: 16,
                latent: 2,
                cvae_samples: 4,
                flow_layers: 2,
                flow_hidden: 8,
                ..Architecture::default()
            },
            ..TrainConfig::default()
        },
        map: MapConfig {
            restarts: 2,
            steps: 5,
            ..MapConfig::default()
        },
        test_subsample: Some(12),
        out,
        ..RunConfig::default()
    }
    .with_seed(3)
}

fn tmp(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("rf-pipeline-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    p
}

#[test]
fn reproduce_writes_every_artifact() {
    let out = tmp("full");
    let run = pipeline::reproduce(&tiny(out.clone())).unwrap();
    assert_eq!(run.cases.len(), 2);
    for case in ["B", "D"] {
        let d = out.join(case);
        for f in ["series.csv", "dataset.bin", "arrow.json", "eval.json", "bundle/manifest.json"] {
            assert!(d.join(f).is_file(), "{case}/{f}");
        }
        for m in Method::ALL {
            assert!(d.join(pipeline::forecast_csv_name(m)).is_file());
        }
        let csv = d.join(pipeline::forecast_csv_name(Method::InvFlow));
        assert!(pipeline::map_detail_path(&csv).is_file());
    }
    for f in ["scorecard.json", "results.csv", "per_horizon.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m: RunManifest = pipeline::read_json(&out.join("manifest.json")).unwrap();
    assert!(m.artifacts.contains_key("B/eval.json"));
    assert!(m.stages.iter().any(|s| s.stage == "train"));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("Case,Verdict,Naive,MLP,CVAE,InvFlow,Ratio,DMstat,DMp"));
    assert_eq!(results.lines().count(), 3);
    let mut rdr = csv::Reader::from_path(out.join("results.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let num = |i: usize| rec[i].parse::<f64>().unwrap();
        assert!((num(5) / num(3) - num(6)).abs() < 1e-12);
    }
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn forecast_csv_round_trips() {
    let out = tmp("csv");
    std::fs::create_dir_all(&out).unwrap();
    let truth = ndarray::array![[0.5, -1.25], [0.1, 1e-17]];
    let preds = ndarray::array![[0.0, 1.0], [2.0, 3.0]];
    let f = pipeline::MethodForecast {
        method: Method::Mlp,
        windows: vec![4, 9],
        truth: truth.clone(),
        preds: preds.clone(),
        map: None,
    };
    let p = out.join("forecasts_mlp.csv");
    pipeline::write_forecast_csv(&p, &f).unwrap();
    let (w, t, y) = pipeline::read_forecast_csv(&p).unwrap();
    assert_eq!(w, vec![4, 9]);
    assert_eq!(t, truth);
    assert_eq!(y, preds);
    assert_eq!(pipeline::method_from_path(&p).unwrap(), Method::Mlp);
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn export_names_case_missing_eval() {
    let out = tmp("missing");
    let d = out.join("X");
    std::fs::create_dir_all(&d).unwrap();
    let series = retroforecast::procgen::Case::A.generate(400, 1).unwrap();
    let cfg = ArrowConfig {
        n_perm: 10,
        ..ArrowConfig::default()
    };
    let r = retroforecast::arrow::arrow_verdict("X", &series.values, &cfg).unwrap();
    pipeline::write_json_atomic(&d.join("arrow.json"), &r).unwrap();
    let err = pipeline::export_tables(&out).unwrap_err().to_string();
    assert!(err.contains("X"), "{err}");
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn validation_rejects_bad_configs() {
    let empty = RunConfig {
        cases: vec![],
        ..RunConfig::default()
    };
    assert!(empty.validate().is_err());
    let missing = RunConfig {
        files: vec![pipeline::FileCase {
            name: "w".into(),
            path: Path::new("/nonexistent/file.csv").into(),
            value_column: "v".into(),
            timestamp_column: None,
            preprocess: Default::default(),
        }],
        ..RunConfig::default()
    };
    assert!(missing.validate().is_err());
    assert!(RunConfig::default().validate().is_ok());
}

#[test]
fn seed_propagates() {
    let c = RunConfig::default().with_seed(99);
    assert_eq!((c.arrow.seed, c.train.seed, c.map.seed), (99, 99, 99));
}

#[test]
fn config_json_defaults_fill_in() {
    let c: RunConfig = serde_json::from_str(r#"{"cases":["A"],"seed":5}"#).unwrap();
    assert_eq!(c.cases, vec![Case::A]);
    assert_eq!(c.series_len, 20_000);
}

use super::*;
use crate::annotators::SamplingMode;
use crate::synthetic::{gaussian_logits, tempered_dataset, Supervision};

fn annotated(n: usize, seed: u64) -> crate::LogitDataset {
    let z = gaussian_logits(n, 3, 3.0, seed).unwrap();
    tempered_dataset(&z, 2.5, Supervision::Annotations(20), seed).unwrap()
}

fn config(methods: &[MethodId], seeds: &[u64]) -> ExperimentConfig {
    ExperimentConfig {
        methods: methods.to_vec(),
        seeds: seeds.to_vec(),
        mc: McSettings { s: 20, seed: 3 },
        ..ExperimentConfig::default()
    }
}

#[test]
fn one_hot_targets_make_true_and_voted_ece_equal() {
    let z = gaussian_logits(400, 3, 3.0, 1).unwrap();
    let ds = tempered_dataset(&z, 2.0, Supervision::SingleLabel, 1).unwrap();
    let report = run_benchmark(&ds, &config(&[MethodId::Uncalibrated], &[42])).unwrap();
    let m = report
        .cell(MethodId::Uncalibrated, 42)
        .unwrap()
        .metrics
        .as_ref()
        .unwrap();
    assert_eq!(m.ece_true, m.ece_voted);
}

#[test]
fn soft_fit_beats_voted_fit_on_true_ece() {
    let ds = annotated(3000, 2);
    let report = run_benchmark(
        &ds,
        &config(&[MethodId::Ts, MethodId::Slts, MethodId::OracleTs], &[1, 2]),
    )
    .unwrap();
    for seed in [1, 2] {
        let ece = |m| {
            report
                .cell(m, seed)
                .unwrap()
                .metrics
                .as_ref()
                .unwrap()
                .ece_true
        };
        assert!(ece(MethodId::Slts) < ece(MethodId::Ts));
        let t = |m| report.cell(m, seed).unwrap().temperature().unwrap();
        assert!(t(MethodId::Ts) < t(MethodId::Slts));
    }
    assert!(report
        .cells
        .iter()
        .all(|c| c.oracle == (c.method == MethodId::OracleTs)));
    assert!(report.aggregate(MethodId::OracleTs).unwrap().oracle);
    assert_eq!(report.cells.len(), 6);
}

#[test]
fn missing_supervision_becomes_an_error_cell() {
    let z = gaussian_logits(200, 3, 2.0, 4).unwrap();
    let ds = tempered_dataset(&z, 2.0, Supervision::Exact, 4).unwrap();
    let report = run_benchmark(&ds, &config(&[MethodId::Ts, MethodId::Mcts], &[1, 2])).unwrap();
    assert_eq!(report.cells.len(), 4);
    for c in &report.cells {
        match c.method {
            MethodId::Mcts => assert_eq!(c.error.as_ref().unwrap().kind, "input"),
            _ => assert!(c.metrics.is_some()),
        }
    }
    let agg = report.aggregate(MethodId::Mcts).unwrap();
    assert_eq!((agg.n_ok, agg.n_error), (0, 2));
    assert!(aggregates_md(&report).contains("failed (2 errors)"));
}

fn aggregates_md(report: &BenchmarkReport) -> String {
    report::aggregates_markdown(&report.aggregates)
}

#[test]
fn aggregates_use_sample_std() {
    let ds = annotated(300, 5);
    let report = run_benchmark(&ds, &config(&[MethodId::Ts], &[1, 2, 3])).unwrap();
    let ts: Vec<f64> = [1, 2, 3]
        .iter()
        .map(|&s| report.cell(MethodId::Ts, s).unwrap().temperature().unwrap())
        .collect();
    let mean = ts.iter().sum::<f64>() / 3.0;
    let std = (ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let agg = report.aggregate(MethodId::Ts).unwrap();
    assert!((agg.mean.as_ref().unwrap().t.unwrap() - mean).abs() < 1e-12);
    assert!((agg.std.as_ref().unwrap().t.unwrap() - std).abs() < 1e-12);
}

#[test]
fn reports_are_independent_of_thread_count() {
    let ds = annotated(300, 6);
    let cfg = config(
        &[
            MethodId::Ts,
            MethodId::Slts,
            MethodId::Mcts,
            MethodId::Lsts,
            MethodId::Platt,
        ],
        &[1, 2, 3],
    );
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| report::to_json_string(&run_benchmark(&ds, &cfg).unwrap()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(4));
}

#[test]
fn every_method_runs_on_annotated_data() {
    let ds = annotated(400, 7);
    let report = run_benchmark(&ds, &config(&MethodId::ALL, &[42])).unwrap();
    for c in &report.cells {
        assert!(c.error.is_none(), "{} failed: {:?}", c.method, c.error);
    }
    let eps: Vec<f64> = [
        MethodId::Lsts,
        MethodId::LstsFixed,
        MethodId::LstsEntropy,
        MethodId::LstsClasswise,
    ]
    .iter()
    .map(|&m| {
        report
            .cell(m, 42)
            .unwrap()
            .smoothing
            .as_ref()
            .unwrap()
            .mean_epsilon()
    })
    .collect();
    assert_eq!(eps[1], 0.1);
    assert!(eps[0] > 0.0 && eps[2] > 0.0 && eps[3] > 0.0);
}

#[test]
fn provenance_reproduces_the_report() {
    let ds = annotated(200, 8);
    let cfg = config(&[MethodId::Ts, MethodId::Mcts], &[5]);
    let report = run_benchmark(&ds, &cfg).unwrap();
    assert_eq!(report.provenance.dataset_digest, dataset_digest(&ds));
    let rerun = run_benchmark(&ds, &report.provenance.config).unwrap();
    assert_eq!(
        report::to_json_string(&rerun).unwrap(),
        report::to_json_string(&report).unwrap()
    );
}

#[test]
fn annotation_seed_axis_keeps_the_partition() {
    let z = gaussian_logits(300, 4, 2.0, 9).unwrap();
    let ds = tempered_dataset(&z, 1.5, Supervision::SingleLabel, 9).unwrap();
    let cfg = ExperimentConfig {
        seed_axis: SeedAxis::Annotations,
        synthetic: Some(SyntheticAnnotations {
            confusion: "identity-free".into(),
            m: 5,
        }),
        ..config(&[MethodId::Slts], &[1, 2])
    };
    let report = run_benchmark(&ds, &cfg).unwrap();
    assert!(report
        .cells
        .iter()
        .all(|c| c.error.as_ref().is_some_and(|e| e.kind == "io")));

    let mut k8 = Vec::new();
    for z in gaussian_logits(400, 8, 2.0, 9).unwrap() {
        k8.push(z);
    }
    let ds = tempered_dataset(&k8, 1.5, Supervision::SingleLabel, 9).unwrap();
    let cfg = ExperimentConfig {
        synthetic: Some(SyntheticAnnotations {
            confusion: "isic".into(),
            m: 5,
        }),
        ..cfg
    };
    let a = prepare_run(&ds, &cfg, 1).unwrap();
    let b = prepare_run(&ds, &cfg, 2).unwrap();
    assert_eq!(a.cal_indices, b.cal_indices);
    assert_ne!(a.cal, b.cal);
    assert!(run_benchmark(&ds, &cfg)
        .unwrap()
        .cells
        .iter()
        .all(|c| c.metrics.is_some()));
}

#[test]
fn calsize_at_full_fraction_matches_the_benchmark() {
    let ds = annotated(300, 10);
    let mut cfg = config(&[MethodId::Ts, MethodId::Mcts, MethodId::IrSoft], &[1, 2]);
    cfg.ablation = Some(AblationSettings {
        axis: AblationAxis::Calsize,
        values: vec![0.1, 0.5, 1.0],
        sampling: SamplingMode::Resample,
    });
    let bench = run_benchmark(&ds, &cfg).unwrap();
    let abl = run_ablation(&ds, &cfg, AblationAxis::Calsize).unwrap();
    assert_eq!(abl.points.len(), 3);
    assert_eq!(abl.points[2].cells, bench.cells);
    assert_ne!(abl.points[0].cells, bench.cells);
}

#[test]
fn annotation_sweep_at_full_pool_keeps_targets() {
    let ds = annotated(300, 11);
    for sampling in [SamplingMode::Resample, SamplingMode::Nested] {
        let mut cfg = config(&[MethodId::Ts, MethodId::Slts, MethodId::SoftPlatt], &[1]);
        cfg.ablation = Some(AblationSettings {
            axis: AblationAxis::Annotations,
            values: vec![1.0, 20.0, 21.0],
            sampling,
        });
        let bench = run_benchmark(&ds, &cfg).unwrap();
        let abl = run_ablation(&ds, &cfg, AblationAxis::Annotations).unwrap();
        assert_eq!(abl.points[1].cells, bench.cells);
        assert_ne!(abl.points[0].cells, bench.cells);
        assert!(abl.points[2].cells.iter().all(|c| c.error.is_some()));
    }

    let z = gaussian_logits(100, 3, 2.0, 1).unwrap();
    let exact = tempered_dataset(&z, 2.0, Supervision::Exact, 1).unwrap();
    let cfg = config(&[MethodId::Ts], &[1]);
    assert!(matches!(
        run_ablation(&exact, &cfg, AblationAxis::Annotations),
        Err(crate::Error::Input(_))
    ));
}

#[test]
fn mcts_sweep_runs_only_mcts() {
    let ds = annotated(200, 12);
    let mut cfg = config(&[MethodId::Ts], &[1, 2]);
    cfg.ablation = Some(AblationSettings {
        axis: AblationAxis::MctsS,
        values: vec![1.0, 10.0],
        sampling: SamplingMode::Resample,
    });
    let abl = run_ablation(&ds, &cfg, AblationAxis::MctsS).unwrap();
    for p in &abl.points {
        assert_eq!(p.cells.len(), 2);
        assert!(p
            .cells
            .iter()
            .all(|c| c.method == MethodId::Mcts && c.metrics.is_some()));
    }
    assert_ne!(
        abl.points[0].cells[0].temperature(),
        abl.points[1].cells[0].temperature()
    );
}

#[test]
fn theory_checks() {
    let ds = annotated(2000, 13);
    let cfg = config(&[MethodId::Ts, MethodId::Slts], &[1, 2]);
    let report = run_benchmark(&ds, &cfg).unwrap();
    let check = check_propositions(&report, &ds, &cfg).unwrap();
    assert!(check.temperature_ordering_holds);
    assert!(check.temperature_ordering.iter().all(|o| o.label.is_none()));
    assert_eq!(check.entropy_monotonicity.len(), 2);
    assert!(check
        .entropy_monotonicity
        .iter()
        .all(|e| e.bins.len() == cfg.entropy_bins));

    let z = gaussian_logits(600, 3, 2.0, 14).unwrap();
    let hard = tempered_dataset(&z, 2.0, Supervision::SingleLabel, 14).unwrap();
    let report = run_benchmark(&hard, &cfg).unwrap();
    let check = check_propositions(&report, &hard, &cfg).unwrap();
    for o in &check.temperature_ordering {
        assert_eq!(o.label.as_deref(), Some(theory::DEGENERATE_LABEL));
        assert!((o.t_ts.unwrap() - o.t_slts.unwrap()).abs() < theory::DEGENERATE_GAP);
    }
    assert!(check.temperature_ordering_holds);

    let cfg = config(&[MethodId::Ts], &[1]);
    assert!(check_propositions(&report, &hard, &cfg).is_err());
}

#[test]
fn emitted_files() {
    let ds = annotated(300, 15);
    let cfg = config(
        &[MethodId::Uncalibrated, MethodId::Ts, MethodId::Slts],
        &[1, 2],
    );
    let report = run_benchmark(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, ReportFormats::ALL, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    emit_report(&report, ReportFormats::ALL, dir.path()).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(first, second);

    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 2 + 3);
    assert!(lines[0].contains("| T | ECE | aECE | cwECE |") && lines[0].contains("| Br | NLL |"));
    assert!(lines[3].starts_with("| ts | "));

    let rel: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("reliability.json")).unwrap(),
    )
    .unwrap();
    let curves = rel.as_array().unwrap();
    assert_eq!(curves.len(), 6);
    let bins = curves[0]["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 15);
    for key in ["count", "conf", "acc", "gap"] {
        assert!(bins[0].get(key).is_some());
    }

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[0], "ts");
    assert_eq!(row[3].split('.').nth(1).unwrap().len(), 3);
    assert_eq!(row[4].split('.').nth(1).unwrap().len(), 4);

    let back: BenchmarkReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(back, report);
}

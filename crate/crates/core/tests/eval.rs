mod common;

use pronscore::eval::{
    ablation_grid, cluster_contrast, embedding_similarity, evaluate, export_heatmap, export_report, pcc, EvalReport,
    SimilarityMatrix,
};
use pronscore::frontend::Corpus;
use pronscore::scorer::{ScorerConfig, ScorerParams, Variant};
use pronscore::training::TrainConfig;
use pronscore::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn pcc_is_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        a in prop_oneof![0.1f64..5.0, -5.0f64..-0.1],
        b in -10.0f64..10.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(r) = pcc(&x, &y) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pcc(&scaled, &y).unwrap();
        prop_assert!((r2 - a.signum() * r).abs() < 1e-9, "{} vs {}", r2, r);
        prop_assert!((pcc(&y, &x).unwrap() - r).abs() < 1e-12);
    }
}

#[test]
fn pcc_undefined_cases() {
    assert!(matches!(pcc(&[1.0], &[2.0]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(pcc(&[], &[]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(pcc(&[1.0, 2.0, 3.0], &[0.5; 3]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(pcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::Dimension { .. })));
}

fn small() -> (Corpus, Corpus, Corpus) {
    common::corpus(&common::small_synth(12, 4, 6), 9)
}

#[test]
fn report_is_consistent_with_its_items() {
    let (_, _, test) = small();
    let p = ScorerParams::init(&ScorerConfig::new(Variant::Similarity, 6, 10), 1).unwrap();
    let report = evaluate(&p, &test).unwrap();
    assert_eq!(report.count, test.len());
    assert_eq!(report.items.len(), test.len());
    let preds: Vec<f64> = report.items.iter().map(|i| i.predicted).collect();
    let labels: Vec<f64> = report.items.iter().map(|i| i.label).collect();
    assert_eq!(pcc(&preds, &labels).unwrap(), report.pcc);
    for (item, u) in report.items.iter().zip(&test.utterances) {
        assert_eq!(item.id, u.id);
        assert_eq!(item.label, u.score);
        assert!((0.0..=1.0).contains(&item.predicted));
    }
    assert_eq!(evaluate(&p, &test).unwrap(), report);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    export_report(&report, &path).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn evaluate_rejects_bad_corpora() {
    let (_, _, test) = small();
    let p = ScorerParams::init(&ScorerConfig::new(Variant::AddPhone, 6, 11), 1).unwrap();
    assert!(matches!(evaluate(&p, &test), Err(Error::Config(_))));

    let p = ScorerParams::init(&ScorerConfig::new(Variant::AddPhone, 6, 10), 1).unwrap();
    let mut flat = test.clone();
    for u in &mut flat.utterances {
        u.score = 0.5;
    }
    assert!(matches!(evaluate(&p, &flat), Err(Error::UndefinedCorrelation(_))));
    let one = Corpus {
        utterances: test.utterances[..1].to_vec(),
        ..test
    };
    assert!(matches!(evaluate(&p, &one), Err(Error::UndefinedCorrelation(_))));
}

#[test]
fn similarity_matrix_invariants() {
    for variant in Variant::ALL {
        let p = common::generic_params(variant, 6, 10, 4);
        let ids: Vec<usize> = (0..10).collect();
        let m = embedding_similarity(&p, &ids).unwrap();
        assert_eq!(m.labels, (0..10).map(|i| i.to_string()).collect::<Vec<_>>());
        for i in 0..10 {
            assert_eq!(m.matrix[i][i], 1.0);
            for j in 0..10 {
                assert_eq!(m.matrix[i][j], m.matrix[j][i]);
                assert!((-1.0..=1.0).contains(&m.matrix[i][j]));
            }
        }
    }
    let p = common::generic_params(Variant::AddPhone, 6, 10, 4);
    assert!(matches!(embedding_similarity(&p, &[0, 10]), Err(Error::Input(_))));
    assert!(matches!(embedding_similarity(&p, &[3]), Err(Error::Input(_))));
}

#[test]
fn heatmap_csv_round_trip() {
    let p = common::generic_params(Variant::Similarity, 6, 10, 5);
    let m = embedding_similarity(&p, &[7, 2, 5]).unwrap();
    assert_eq!(m.labels, ["7", "2", "5"]);
    let m = m.with_labels(vec!["ih".into(), "iy".into(), "sh".into()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heat.csv");
    export_heatmap(&m, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("phone,ih,iy,sh\nih,"));
    let back = SimilarityMatrix::from_csv(&text).unwrap();
    assert_eq!(back.labels, m.labels);
    for (r, s) in back.matrix.iter().zip(&m.matrix) {
        for (a, b) in r.iter().zip(s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    let two = embedding_similarity(&p, &[0, 1]).unwrap();
    assert_eq!(two.to_csv().lines().count(), 3);
    assert!(matches!(two.clone().with_labels(vec!["a".into()]), Err(Error::Input(_))));
    assert!(matches!(
        SimilarityMatrix::from_csv("phone,a,b\nb,1.0,0.0\n"),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn cluster_contrast_separates_groups() {
    let m = SimilarityMatrix {
        labels: vec!["a".into(), "b".into(), "c".into()],
        matrix: vec![vec![1.0, 0.8, -0.2], vec![0.8, 1.0, 0.0], vec![-0.2, 0.0, 1.0]],
    };
    let (within, across) = cluster_contrast(&m, &[0, 0, 1]);
    assert!((within - 0.8).abs() < 1e-15);
    assert!((across + 0.1).abs() < 1e-15);
}

#[test]
fn ablation_grid_has_six_cells() {
    let (train, dev, test) = small();
    let base = ScorerConfig::new(Variant::AddPhone, 6, 10);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let (table, runs) = ablation_grid(&train, &dev, &test, &base, &cfg).unwrap();
    assert_eq!(table.cells.len(), 6);
    assert_eq!(runs.len(), 6);
    for v in Variant::ALL {
        for pre in [false, true] {
            let r = table.get(v, pre).unwrap();
            assert!((-1.0..=1.0).contains(&r));
            let run = runs.iter().find(|r| r.variant == v && r.pretrain == pre).unwrap();
            assert_eq!(run.pretrain_log.is_some(), pre);
            assert_eq!(run.params.config().variant, v);
            assert_eq!(evaluate(&run.params, &test).unwrap().pcc, r);
        }
    }
    let text = table.to_text();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().contains("pretrain=0"));
    let (again, _) = ablation_grid(&train, &dev, &test, &base, &cfg).unwrap();
    assert_eq!(again.to_json().unwrap(), table.to_json().unwrap());
}

use bridgeprobe::eval::{
    accuracy, breakdown, evaluate, normalize_accuracy, read_heatmap_csv, render_text_table,
    write_heatmap_csv, write_report_csv, BreakdownKey,
};
use bridgeprobe::attention::HeatMap;
use bridgeprobe::records::{read_jsonl, write_jsonl, PredictionRecord, ScoreEntry, SkipRecord};
use proptest::prelude::*;

fn record(i: usize, distance: usize, salient: bool, scope: &str, of: Option<&str>, correct: bool) -> PredictionRecord {
    PredictionRecord {
        anaphor_id: format!("d:{i}"),
        scope: scope.into(),
        candidate_scope: if i % 2 == 0 { "salient" } else { "all" }.into(),
        of_variant: of.map(str::to_string),
        perturbed: false,
        seed: 13,
        predicted: "m1".into(),
        gold: vec![if correct { "m1" } else { "m2" }.into()],
        correct,
        scores: vec![ScoreEntry { mention: "m1".into(), k: 1, score: Some(-1.5) }],
        method: if of.is_some() { "cloze" } else { "heads" }.into(),
        strategy: of.map(|_| "head".to_string()),
        distance,
        salient,
    }
}

fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    let scopes = prop::sample::select(vec!["anaphor", "sentence", "ante-ana", "more"]);
    let of = prop::sample::select(vec![Some("with"), Some("without")]);
    prop::collection::vec((0usize..14, any::<bool>(), scopes, of, any::<bool>()), 1..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (d, s, scope, of, c))| record(i, d, s, scope, of, c))
            .collect()
    })
}

proptest! {
    #[test]
    fn breakdown_weighted_mean_is_overall_accuracy(preds in records()) {
        let overall = accuracy(&preds).unwrap();
        for key in BreakdownKey::ALL {
            let cells = breakdown(&preds, key).unwrap();
            prop_assert_eq!(cells.iter().map(|c| c.n).sum::<usize>(), overall.n);
            let weighted: f64 = cells.iter().map(|c| c.n as f64 * c.accuracy()).sum::<f64>() / overall.n as f64;
            prop_assert!((weighted - overall.accuracy()).abs() < 1e-12);
        }
    }

    #[test]
    fn breakdown_ignores_record_order(mut preds in records(), rotate in 0usize..60) {
        let before: Vec<_> = BreakdownKey::ALL.iter().map(|&k| breakdown(&preds, k).unwrap()).collect();
        let r = rotate % preds.len();
        preds.rotate_left(r);
        preds.reverse();
        let after: Vec<_> = BreakdownKey::ALL.iter().map(|&k| breakdown(&preds, k).unwrap()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn normalization_never_exceeds_accuracy(acc in 0.0f64..=1.0, used in 1usize..1000, extra in 0usize..1000) {
        let total = used + extra;
        let norm = normalize_accuracy(acc, used, total).unwrap();
        prop_assert!(norm <= acc + 1e-15);
        let more = normalize_accuracy(acc, used, total + 1).unwrap();
        prop_assert!(more <= norm);
    }
}

#[test]
fn normalization_matches_the_reported_figure() {
    let n = normalize_accuracy(0.2990, 622, 663).unwrap();
    assert!((n - 0.2805).abs() <= 1e-4, "{n}");
    assert!(normalize_accuracy(0.5, 10, 5).is_err());
    assert!(normalize_accuracy(0.5, 0, 0).is_err());
}

#[test]
fn heads_records_have_no_of_breakdown() {
    let preds = vec![record(0, 1, false, "more", None, true)];
    assert!(breakdown(&preds, BreakdownKey::OfVariant).is_err());
    let cells = breakdown(&preds, BreakdownKey::Method).unwrap();
    assert_eq!(cells[0].key, "heads");
}

#[test]
fn report_outputs_are_stable() {
    let preds: Vec<PredictionRecord> = (0..9)
        .map(|i| record(i, i % 4, i == 0, "more", Some("with"), i % 3 == 0))
        .collect();
    let report = evaluate(&preds, 2, &[BreakdownKey::ClozeDistance], serde_json::json!({})).unwrap();
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &report).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(
        csv,
        "key,n,correct,accuracy_pct\n\
         all,9,3,33.3333\n\
         all+skipped,11,3,27.2727\n\
         skipped,2,,\n\
         cloze-distance:salient,1,1,100.0000\n\
         cloze-distance:0,2,0,0.0000\n\
         cloze-distance:1,2,0,0.0000\n\
         cloze-distance:2,2,1,50.0000\n\
         cloze-distance:>2,2,1,50.0000\n"
    );
    let table = render_text_table(&report);
    assert!(table.contains("33.33"));
    assert!(table.contains("cloze-distance:>2"));
}

#[test]
fn records_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let preds: Vec<PredictionRecord> = (0..5).map(|i| record(i, i, false, "sentence", Some("without"), i % 2 == 0)).collect();
    write_jsonl(&path, &preds).unwrap();
    assert_eq!(read_jsonl::<PredictionRecord>(&path).unwrap(), preds);
    let skips = vec![SkipRecord { instance_id: "d:9".into(), reason: "no candidates".into() }];
    let path = dir.path().join("s.jsonl");
    write_jsonl(&path, &skips).unwrap();
    assert_eq!(read_jsonl::<SkipRecord>(&path).unwrap(), skips);
    std::fs::write(&path, "{\"instance_id\": 3}\n").unwrap();
    assert!(read_jsonl::<SkipRecord>(&path).is_err());
}

#[test]
fn heatmap_csv_round_trip() {
    let mut map = HeatMap::empty(3, 2);
    map.set(1, 1, Some(0.5));
    map.set(3, 2, Some(1.25));
    let mut buf = Vec::new();
    write_heatmap_csv(&mut buf, &map).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("layer\\head,1,2\n1,0.5000,\n"));
    assert_eq!(read_heatmap_csv(buf.as_slice()).unwrap(), map);
}

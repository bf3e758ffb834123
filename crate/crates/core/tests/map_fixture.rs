use deixis::eval::{average_precision, evaluate, EvalConfig, EvalInstance, ScoredBox};
use deixis::logic::BBox;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    match_iou: f64,
    instances: Vec<EvalInstance>,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("data/map_fixture.json")).unwrap()
}

// hand-computed in data/map_fixture_expected.md
const EXPECTED_AP: [f64; 5] = [1.0, 2.0 / 3.0, 0.5, 0.0, 11.0 / 15.0];
const EXPECTED_MAP: f64 = 0.58;

#[test]
fn fixture_reproduces_the_committed_table() {
    let f = fixture();
    let report = evaluate(&f.instances, &EvalConfig { match_iou: f.match_iou }).unwrap();
    for (r, want) in report.per_instance.iter().zip(EXPECTED_AP) {
        assert!((r.ap - want).abs() < 1e-9, "{}: {} vs {want}", r.id, r.ap);
    }
    assert!((report.map - EXPECTED_MAP).abs() < 1e-9, "{}", report.map);
    let table = report.table();
    assert!(table.lines().last().unwrap().contains("0.5800"));
}

#[test]
fn fixture_matches_are_greedy_and_strict() {
    let f = fixture();
    let report = evaluate(&f.instances, &EvalConfig { match_iou: f.match_iou }).unwrap();
    let half = &report.per_instance[1];
    assert!(half.matches.iter().all(|m| m.prediction != 0), "IoU 0.5 must not match");
    let dup = &report.per_instance[4];
    let matched: Vec<usize> = dup.matches.iter().map(|m| m.prediction).collect();
    assert_eq!(matched, [0, 3, 4]);
    // a lower threshold lets the IoU-0.5 box claim the answer first: TP FP TP
    let loose = evaluate(&f.instances, &EvalConfig { match_iou: 0.49 }).unwrap();
    assert!((loose.per_instance[1].ap - 5.0 / 6.0).abs() < 1e-12);
}

fn boxes() -> impl Strategy<Value = (Vec<ScoredBox>, Vec<BBox>)> {
    let answers = prop::collection::btree_set(0u32..20, 1..5)
        .prop_map(|cells| cells.into_iter().map(|c| BBox::new(c as f64 * 50.0, 0.0, 20.0, 20.0)).collect::<Vec<_>>());
    answers.prop_flat_map(|answers| {
        let preds = prop::collection::vec((0u32..20, -5.0f64..5.0, 0.001f64..1.0), 0..8).prop_map(|v| {
            v.into_iter()
                .map(|(c, dx, score)| ScoredBox {
                    bbox: BBox::new(c as f64 * 50.0 + dx, 0.0, 20.0, 20.0),
                    score,
                })
                .collect::<Vec<_>>()
        });
        (preds, Just(answers))
    })
}

proptest! {
    #[test]
    fn ap_is_invariant_under_monotone_score_transforms((preds, answers) in boxes(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = average_precision(&preds, &answers, 0.5);
        let mapped: Vec<ScoredBox> = preds.iter().map(|p| ScoredBox { bbox: p.bbox, score: (a * p.score + b).exp() }).collect();
        prop_assert!((average_precision(&mapped, &answers, 0.5) - base).abs() < 1e-12);
        let cubed: Vec<ScoredBox> = preds.iter().map(|p| ScoredBox { bbox: p.bbox, score: p.score.powi(3) }).collect();
        prop_assert!((average_precision(&cubed, &answers, 0.5) - base).abs() < 1e-12);
    }

    #[test]
    fn ap_lies_in_unit_interval_and_perfect_predictions_score_one((preds, answers) in boxes()) {
        let ap = average_precision(&preds, &answers, 0.5);
        prop_assert!((0.0..=1.0).contains(&ap));
        let perfect: Vec<ScoredBox> = answers.iter().map(|&bbox| ScoredBox { bbox, score: 0.9 }).collect();
        prop_assert_eq!(average_precision(&perfect, &answers, 0.5), 1.0);
    }
}

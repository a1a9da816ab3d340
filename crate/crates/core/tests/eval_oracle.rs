use ovcd::decode::ChangeMask;
use ovcd::eval::{
    aggregate, class_average, confusion, derive_class_gt, metrics, Aggregation, ConfusionCounts,
    EvalReport, LabelMap, Metrics, TimingStats,
};
use proptest::prelude::*;

fn arb_pair() -> impl Strategy<Value = (ChangeMask, ChangeMask)> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0u8..2, h * w),
            proptest::collection::vec(0u8..2, h * w),
        )
            .prop_map(move |(a, b)| {
                (
                    ChangeMask::from_values(h, w, &a).unwrap(),
                    ChangeMask::from_values(h, w, &b).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn confusion_matches_counting((pred, gt) in arb_pair()) {
        let c = confusion(&pred, &gt).unwrap();
        let (h, w) = pred.dims();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                match (pred.get(y, x), gt.get(y, x)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        prop_assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
        prop_assert_eq!(c.total(), (h * w) as u64);

        let m = metrics(&c);
        let iou = m.iou_c / 100.0;
        prop_assert!((m.f1_c / 100.0 - 2.0 * iou / (1.0 + iou)).abs() <= 1e-9);
        for v in [m.precision, m.recall, m.iou_c, m.f1_c] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}

#[test]
fn zero_denominators_give_zero() {
    let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 9 });
    assert_eq!(m, Metrics::default());
    let m = metrics(&ConfusionCounts { tp: 0, fp: 3, fn_: 0, tn: 1 });
    assert_eq!((m.precision, m.recall, m.iou_c, m.f1_c), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn perfect_prediction_scores_100() {
    let gt = ChangeMask::from_fn(8, 8, |y, x| y < 4 && x < 3);
    let m = metrics(&confusion(&gt, &gt).unwrap());
    assert_eq!((m.precision, m.recall, m.iou_c, m.f1_c), (100.0, 100.0, 100.0, 100.0));
}

#[test]
fn published_row_class_average() {
    let row = [65.69, 34.61, 46.01, 43.40, 48.79, 46.52];
    let per: Vec<Metrics> = row.iter().map(|&f| Metrics { f1_c: f, ..Default::default() }).collect();
    let avg = class_average(&per).f1_c;
    assert!((avg - 47.50).abs() <= 0.01, "{avg}");
}

#[test]
fn or_rule_against_loops() {
    let change = ChangeMask::from_fn(6, 6, |y, x| (y + x) % 3 != 0);
    let a = LabelMap::new(6, 6, (0..36).map(|i| (i % 4) as i32).collect()).unwrap();
    let b = LabelMap::new(6, 6, (0..36).map(|i| ((i / 3) % 4) as i32).collect()).unwrap();
    let gt = derive_class_gt(&a, &b, &change, 2).unwrap();
    for i in 0..36 {
        let expect = change.as_slice()[i] != 0 && (a.as_slice()[i] == 2 || b.as_slice()[i] == 2);
        assert_eq!(gt.as_slice()[i] != 0, expect);
    }
}

#[test]
fn micro_and_macro_differ_as_expected() {
    let c1 = ConfusionCounts { tp: 10, fp: 0, fn_: 0, tn: 0 };
    let c2 = ConfusionCounts { tp: 0, fp: 10, fn_: 0, tn: 0 };
    let rows = [("p1", "x", c1), ("p2", "x", c2)];
    let micro = aggregate(rows.iter().map(|(p, c, k)| (*p, *c, *k)), Aggregation::Micro).unwrap();
    let macro_ = aggregate(rows.iter().map(|(p, c, k)| (*p, *c, *k)), Aggregation::Macro).unwrap();
    assert!((micro.classes[0].metrics.precision - 50.0).abs() < 1e-12);
    assert!((macro_.classes[0].metrics.precision - 50.0).abs() < 1e-12);
    assert!((micro.classes[0].metrics.f1_c - 200.0 / 3.0).abs() < 1e-9);
    assert!((macro_.classes[0].metrics.f1_c - 50.0).abs() < 1e-12);
    assert_eq!(micro.pair_count, 2);
    assert_eq!(micro.classes[0].counts, c1 + c2);
}

#[test]
fn aggregation_is_order_independent() {
    let rows: Vec<(String, String, ConfusionCounts)> = (0..12u64)
        .map(|i| {
            (
                format!("p{}", i % 5),
                ["a", "b", "c"][i as usize % 3].to_string(),
                ConfusionCounts { tp: i, fp: 12 - i, fn_: i % 4, tn: 100 },
            )
        })
        .collect();
    let fwd = aggregate(rows.iter().map(|(p, c, k)| (p.as_str(), c.as_str(), *k)), Aggregation::Micro).unwrap();
    let rev = aggregate(rows.iter().rev().map(|(p, c, k)| (p.as_str(), c.as_str(), *k)), Aggregation::Micro).unwrap();
    assert_eq!(fwd, rev);
    assert_eq!(fwd.classes.len(), 3);
}

#[test]
fn empty_dataset_is_an_error() {
    let none: Vec<(&str, &str, ConfusionCounts)> = Vec::new();
    assert!(matches!(aggregate(none, Aggregation::Micro), Err(ovcd::Error::EmptyDataset)));
}

#[test]
fn report_serializations() {
    let c = ConfusionCounts { tp: 3, fp: 1, fn_: 2, tn: 10 };
    let mut r = aggregate([("p", "building", c)], Aggregation::Micro).unwrap();
    r.timing = TimingStats::from_latencies(&[0.5, 1.5], 1);
    let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["classes"][0]["counts"]["fn"], 2);
    let csv = r.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "class,pairs,tp,fp,fn,tn,precision,recall,iou_c,f1_c");
    assert!(lines.next().unwrap().starts_with("building,1,3,1,2,10,"));
    assert!(lines.next().unwrap().starts_with("class_avg,"));
    assert!(r.to_table().contains("building"));
    let t = r.timing.unwrap();
    assert_eq!(t.measured_runs, 2);
    assert!((t.mean_latency_s - 1.0).abs() < 1e-12);
    assert!((t.throughput_pairs_per_min - 60.0).abs() < 1e-9);
}

#[test]
fn warmup_run_is_discarded() {
    let mut calls = 0;
    let t = ovcd::eval::measure_with_warmup::<()>(2, || {
        calls += 1;
        Ok(())
    })
    .unwrap()
    .unwrap();
    assert_eq!(calls, 2);
    assert_eq!((t.measured_runs, t.warmup_runs), (1, 1));
    assert!(ovcd::eval::measure_with_warmup::<()>(1, || Ok(())).unwrap().is_none());
}

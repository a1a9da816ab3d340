use ovcd::decode::{
    closing, dilate, erode, label_components8, opening, quantize_and_threshold, quantize_u8,
    remove_small_components, struct_filter, ChangeMask, DecodeConfig,
};
use ovcd::Grid;
use proptest::prelude::*;

// Brute-force square-element morphology: look at every in-image neighbour.
fn naive_rank(m: &ChangeMask, r: usize, erode: bool) -> ChangeMask {
    let (h, w) = m.dims();
    let r = r as isize;
    ChangeMask::from_fn(h, w, |y, x| {
        let mut acc = erode;
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let v = m.get(yy as usize, xx as usize);
                acc = if erode { acc && v } else { acc || v };
            }
        }
        acc
    })
}

// Flood fill by repeated relaxation, no stack tricks.
fn naive_components(m: &ChangeMask) -> Vec<usize> {
    let (h, w) = m.dims();
    let mut label: Vec<usize> = (0..h * w).map(|i| if m.as_slice()[i] != 0 { i + 1 } else { 0 }).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if label[i] == 0 {
                    continue;
                }
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let j = yy as usize * w + xx as usize;
                        if label[j] != 0 && label[j] < label[i] {
                            label[i] = label[j];
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return label;
        }
    }
}

fn arb_mask(max: usize) -> impl Strategy<Value = ChangeMask> {
    (1..max, 1..max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..2, h * w)
            .prop_map(move |v| ChangeMask::from_values(h, w, &v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn morphology_matches_brute_force(m in arb_mask(20), r in 0usize..3) {
        prop_assert_eq!(erode(&m, r), naive_rank(&m, r, true));
        prop_assert_eq!(dilate(&m, r), naive_rank(&m, r, false));
        let o = naive_rank(&naive_rank(&m, r, true), r, false);
        prop_assert_eq!(opening(&m, r), o);
        let c = naive_rank(&naive_rank(&m, r, false), r, true);
        prop_assert_eq!(closing(&m, r), c);
    }

    #[test]
    fn components_match_relaxation(m in arb_mask(16)) {
        let (ids, areas) = label_components8(&m);
        let naive = naive_components(&m);
        // same partition: pixels share an id exactly when they share a naive label
        for i in 0..ids.len() {
            prop_assert_eq!(ids[i] == 0, naive[i] == 0);
            for j in 0..ids.len() {
                if ids[i] != 0 && ids[j] != 0 {
                    prop_assert_eq!(ids[i] == ids[j], naive[i] == naive[j]);
                }
            }
        }
        let total: usize = areas[1..].iter().sum();
        prop_assert_eq!(total, m.count_ones());
    }

    #[test]
    fn small_component_removal_only_removes(m in arb_mask(16), min_area in 0usize..10) {
        let out = remove_small_components(&m, min_area);
        let (ids, areas) = label_components8(&m);
        for i in 0..ids.len() {
            let keep = ids[i] != 0 && areas[ids[i] as usize] >= min_area.max(1);
            prop_assert_eq!(out.as_slice()[i] != 0, keep);
        }
    }

    #[test]
    fn threshold_is_monotone(v in proptest::collection::vec(0.0f64..=1.0, 64), t1 in 0u8..=255, t2 in 0u8..=255) {
        let g = Grid::from_vec(8, 8, v).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = quantize_and_threshold(&g, lo);
        let b = quantize_and_threshold(&g, hi);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(x >= y);
        }
    }
}

#[test]
fn quantization_boundary() {
    assert_eq!(quantize_u8(127.0 / 255.0), 127);
    let g = Grid::filled(1, 1, 127.0 / 255.0);
    assert_eq!(quantize_and_threshold(&g, 127).count_ones(), 0);
    let g = Grid::filled(1, 1, 128.0 / 255.0);
    assert_eq!(quantize_and_threshold(&g, 127).count_ones(), 1);
}

#[test]
fn speckle_removed_square_kept() {
    let mut m = ChangeMask::zeros(64, 64);
    m.set(5, 5, true);
    for y in 30..50 {
        for x in 20..40 {
            m.set(y, x, true);
        }
    }
    let cfg = DecodeConfig::default();
    let out = struct_filter(&m, &cfg);
    assert!(!out.get(5, 5));
    let square = ChangeMask::from_fn(64, 64, |y, x| (30..50).contains(&y) && (20..40).contains(&x));
    assert_eq!(out, square);
    let oracle = naive_rank(&naive_rank(&naive_rank(&naive_rank(&m, 1, true), 1, false), 1, false), 1, true);
    assert_eq!(out, oracle);
}

#[test]
fn min_area_scales_with_image() {
    let cfg = DecodeConfig::default();
    assert_eq!(cfg.min_area_for(512, 512), 32);
    assert_eq!(cfg.min_area_for(1024, 1024), 128);
    assert_eq!(cfg.min_area_for(64, 64), 1);
    assert_eq!(cfg.min_area_for(256, 256), 8);
}

#[test]
fn empty_and_full_masks_survive_filtering() {
    let cfg = DecodeConfig::default();
    let zero = ChangeMask::zeros(10, 12);
    assert_eq!(struct_filter(&zero, &cfg), zero);
    let full = ChangeMask::from_fn(10, 12, |_, _| true);
    assert_eq!(struct_filter(&full, &cfg), full);
}

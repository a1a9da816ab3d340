use ovcd::consensus::{
    average_image, clip_unit, fuse, fuse_value, regional_pool, rgb_to_lab, slic_segment,
    FusionConfig, RgbImage, SlicConfig, SuperpixelLabels,
};
use ovcd::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_random_image(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.0..w as f64),
                rng.gen_range(4.0..20.0),
                [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)],
            )
        })
        .collect();
    let noise: Vec<f64> = (0..h * w * 3).map(|_| rng.gen_range(-8.0..8.0)).collect();
    RgbImage::from_fn(h, w, |y, x| {
        let mut c = [128.0; 3];
        for (by, bx, r, col) in &blobs {
            let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
            let t = (-d2 / (2.0 * r * r)).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - t) + col[k] * t;
            }
        }
        let i = (y * w + x) * 3;
        [
            (c[0] + noise[i]).clamp(0.0, 255.0),
            (c[1] + noise[i + 1]).clamp(0.0, 255.0),
            (c[2] + noise[i + 2]).clamp(0.0, 255.0),
        ]
    })
}

// 4-connectivity of each label via breadth-first search.
fn regions_are_4_connected(l: &SuperpixelLabels) -> bool {
    let (h, w) = l.dims();
    let n = l.region_count();
    let mut seen = vec![false; h * w];
    let mut visited_regions = vec![false; n];
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let id = l.as_slice()[start];
        if visited_regions[id as usize] {
            return false;
        }
        visited_regions[id as usize] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            let mut nb = Vec::new();
            if y > 0 { nb.push(p - w); }
            if y + 1 < h { nb.push(p + w); }
            if x > 0 { nb.push(p - 1); }
            if x + 1 < w { nb.push(p + 1); }
            for q in nb {
                if !seen[q] && l.as_slice()[q] == id {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    visited_regions.iter().all(|&v| v)
}

#[test]
fn slic_partitions_random_images() {
    for seed in 0..10 {
        let img = smooth_random_image(seed, 64, 64);
        for requested in [16, 64, 100] {
            let l = slic_segment(&img, &SlicConfig::with_segments(requested)).unwrap();
            assert_eq!(l.as_slice().len(), 64 * 64);
            assert!(l.as_slice().iter().all(|&v| (v as usize) < l.region_count()));
            assert!(regions_are_4_connected(&l), "seed {seed} n {requested}");
            let n = l.region_count() as f64;
            let r = requested as f64;
            assert!(n >= 0.5 * r && n <= 1.5 * r, "seed {seed}: {n} regions for {requested}");
        }
    }
}

#[test]
fn slic_is_deterministic_and_handles_small_inputs() {
    let img = smooth_random_image(3, 40, 56);
    let cfg = SlicConfig::with_segments(30);
    assert_eq!(slic_segment(&img, &cfg).unwrap(), slic_segment(&img, &cfg).unwrap());
    let tiny = smooth_random_image(1, 1, 1);
    assert_eq!(slic_segment(&tiny, &SlicConfig::with_segments(1)).unwrap().region_count(), 1);
    assert!(matches!(
        slic_segment(&tiny, &SlicConfig::with_segments(2)),
        Err(ovcd::Error::TooManySegments { .. })
    ));
    let strip = smooth_random_image(2, 1, 50);
    let l = slic_segment(&strip, &SlicConfig::with_segments(5)).unwrap();
    assert!(regions_are_4_connected(&l));
}

#[test]
fn default_segment_count_scales_with_area() {
    let cfg = SlicConfig::default();
    assert_eq!(cfg.segments_for(512, 512), 256);
    assert_eq!(cfg.segments_for(256, 256), 64);
    assert_eq!(cfg.segments_for(1024, 1024), 1024);
    assert!(cfg.segments_for(8, 8) >= 1);
}

#[test]
fn fusion_scalar_cases() {
    let cfg = FusionConfig::default();
    // 1 - 0.7 rounds to 0.30000000000000004 in binary, so compare at f64 resolution
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
    assert!(close(fuse_value(0.5, 0.0, &cfg), 0.15));
    assert!(close(fuse_value(0.5, 1.0, &cfg), 0.6));
    assert!(close(fuse_value(1.0, 1.0, &cfg), 1.1));
    let d = Grid::filled(1, 1, 1.0);
    let g = Grid::filled(1, 1, 1.0);
    assert_eq!(clip_unit(&fuse(&d, &g, &cfg).unwrap()).get(0, 0), 1.0);
}

#[test]
fn rgb_to_lab_reference_points() {
    let white = rgb_to_lab([255.0, 255.0, 255.0]);
    assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-3 && white[2].abs() < 1e-3);
    let black = rgb_to_lab([0.0, 0.0, 0.0]);
    assert!(black.iter().all(|v| v.abs() < 1e-9));
    let blue = rgb_to_lab([0.0, 0.0, 255.0]);
    assert!((blue[0] - 32.30).abs() < 0.01 && (blue[1] - 79.19).abs() < 0.01 && (blue[2] + 107.86).abs() < 0.01);
}

#[test]
fn average_image_is_pixel_mean() {
    let a = RgbImage::from_fn(2, 2, |y, x| [y as f64 * 10.0, x as f64, 255.0]);
    let b = RgbImage::from_fn(2, 2, |_, _| [0.0, 1.0, 0.0]);
    let m = average_image(&a, &b).unwrap();
    assert_eq!(m.pixel(1, 1), [5.0, 1.0, 127.5]);
    let c = RgbImage::from_fn(2, 3, |_, _| [0.0; 3]);
    assert!(average_image(&a, &c).is_err());
}

fn arb_labels_and_scores() -> impl Strategy<Value = (SuperpixelLabels, Grid)> {
    (1usize..12, 1usize..12, 1u32..6).prop_flat_map(|(h, w, n)| {
        (
            proptest::collection::vec(0..n, h * w),
            proptest::collection::vec(0.0f64..=1.0, h * w),
        )
            .prop_map(move |(raw, s)| {
                // compact the ids so they are contiguous from 0
                let mut map = std::collections::BTreeMap::new();
                for &v in &raw {
                    let next = map.len() as u32;
                    map.entry(v).or_insert(next);
                }
                let labels = raw.iter().map(|v| map[v]).collect();
                (
                    SuperpixelLabels::from_raw(h, w, labels).unwrap(),
                    Grid::from_vec(h, w, s).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pooling_preserves_mean_and_is_idempotent((labels, score) in arb_labels_and_scores()) {
        let p = regional_pool(&score, &labels).unwrap();
        prop_assert!((p.mean() - score.mean()).abs() <= 1e-9);
        let pp = regional_pool(&p, &labels).unwrap();
        prop_assert_eq!(&pp, &p);
        // constant inside each region, equal to that region's mean
        let n = labels.region_count();
        let mut sums = vec![(0.0, 0usize); n];
        for (l, s) in labels.as_slice().iter().zip(score.as_slice()) {
            sums[*l as usize].0 += s;
            sums[*l as usize].1 += 1;
        }
        for (l, v) in labels.as_slice().iter().zip(p.as_slice()) {
            let (s, c) = sums[*l as usize];
            prop_assert!((v - s / c as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn fused_scores_are_monotone_in_delta_and_gate(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let cfg = FusionConfig::default();
        let (dl, dh) = (d1.min(d2), d1.max(d2));
        let (gl, gh) = (g1.min(g2), g1.max(g2));
        prop_assert!(fuse_value(dl, gl, &cfg) <= fuse_value(dh, gl, &cfg));
        prop_assert!(fuse_value(dl, gl, &cfg) <= fuse_value(dl, gh, &cfg));
        prop_assert!(fuse_value(dh, gh, &cfg) <= 1.0 + cfg.additive_weight + 1e-12);
    }
}

#[test]
fn uniform_image_tiles_into_rectangles() {
    // color plays no part, so clusters are Voronoi cells of a 4x4 seed grid
    // with spacing 16; midpoint ties may go either way by one pixel
    let img = RgbImage::from_fn(64, 64, |_, _| [120.0, 120.0, 120.0]);
    let l = slic_segment(&img, &SlicConfig::with_segments(16)).unwrap();
    assert_eq!(l.region_count(), 16);
    for id in 0..16u32 {
        let (mut y0, mut y1, mut x0, mut x1, mut n) = (usize::MAX, 0, usize::MAX, 0, 0);
        for y in 0..64 {
            for x in 0..64 {
                if l.get(y, x) == id {
                    (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
                    n += 1;
                }
            }
        }
        let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
        assert_eq!(bh * bw, n, "region {id} is not a rectangle");
        assert!((15..=17).contains(&bh) && (15..=17).contains(&bw), "region {id}: {bh}x{bw}");
    }
}

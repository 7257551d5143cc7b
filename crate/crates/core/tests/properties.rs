use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use radar3d::augmentation::sample_ground_truths;
use radar3d::bev::rasterize;
use radar3d::codec::{assign_and_encode, decode_angle, encode_angle, nms_rotated};
use radar3d::dataset::{
    build_gt_database, classify_difficulty, format_labels, parse_labels, parse_point_cloud, serialize_point_cloud,
    split_dataset, split_sizes,
};
use radar3d::eval::{compute_ap, match_frame, MatchOutcome, PrCurve};
use radar3d::geometry::{box_to_bev_polygon, iou_3d, points_in_box, rotated_bev_iou, transform_frame};
use radar3d::lidar2radar::{radarize, sparsify_indices, KeepProbabilityMode};
use radar3d::rng::seeded;
use radar3d::synth::generate_scene;
use radar3d::{
    AnchorGrid, ApMode, CodecConfig, CropRegion, Detection, Difficulty, FrameLabel, GridConfig, IouKind, Occlusion,
    OrientedBox3D, Point, PointCloud, RadarizationConfig, SceneSpec, SimilarityTransform,
};

fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
    (-10.0..10.0f64, -10.0..10.0f64, -1.0..1.0f64, 1.0..6.0f64, 1.0..6.0f64, 0.5..3.0f64, -PI..PI)
        .prop_map(|(x, y, z, l, w, h, yaw)| OrientedBox3D::new([x, y, z], l, w, h, yaw))
}

fn arb_transform(scaled: bool) -> impl Strategy<Value = SimilarityTransform> {
    (-PI..PI, -20.0..20.0f64, -20.0..20.0f64, 0.5..2.0f64, any::<bool>(), any::<bool>()).prop_map(
        move |(r, tx, ty, s, mx, my)| SimilarityTransform {
            rotation_z: r,
            translation: [tx, ty],
            scale: if scaled { s } else { 1.0 },
            mirror_x: mx,
            mirror_y: my,
        },
    )
}

fn arb_occlusion() -> impl Strategy<Value = Occlusion> {
    prop_oneof![Just(Occlusion::Visible), Just(Occlusion::PartiallyOccluded), Just(Occlusion::FullyOccluded)]
}

/// Points well inside `b` plus uniform points in a 30 m square around it.
fn cloud_around(b: &OrientedBox3D, seed: u64, n_in: usize, n_out: usize) -> PointCloud {
    let mut rng = seeded(seed);
    let mut points: Vec<Point> = (0..n_in)
        .map(|_| {
            let local = [
                rng.random_range(-0.49..0.49) * b.length,
                rng.random_range(-0.49..0.49) * b.width,
                rng.random_range(-0.49..0.49) * b.height,
            ];
            b.to_world(local, 0.5)
        })
        .collect();
    points.extend((0..n_out).map(|_| {
        Point::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(-3.0..3.0), 0.1)
    }));
    PointCloud::new("p", points)
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_and_reflexive(a in arb_box(), b in arb_box()) {
        for f in [rotated_bev_iou, iou_3d] {
            let ab = f(&a, &b);
            prop_assert_eq!(ab, f(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(f(&a, &a), 1.0);
        }
    }

    #[test]
    fn footprint_is_convex_ccw_with_box_area(b in arb_box()) {
        let poly = box_to_bev_polygon(&b);
        prop_assert!(poly.is_convex_ccw());
        let want = b.length * b.width;
        prop_assert!((poly.area() - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn rigid_transform_round_trips(b in arb_box(), t in arb_transform(false), seed in any::<u64>()) {
        let cloud = cloud_around(&b, seed, 20, 20);
        let (c1, b1) = transform_frame(&cloud, &[b], &t);
        let (c2, b2) = transform_frame(&c1, &b1, &t.inverse());
        for (p, q) in cloud.points.iter().zip(&c2.points) {
            prop_assert!(p.distance(q) <= 1e-9);
        }
        prop_assert!((b2[0].cx - b.cx).abs() <= 1e-9 && (b2[0].cy - b.cy).abs() <= 1e-9);
        let (c3, b3) = transform_frame(&cloud, &[b], &SimilarityTransform::identity());
        prop_assert_eq!(c3, cloud);
        prop_assert_eq!(b3[0], b);
    }

    #[test]
    fn interior_index_sets_survive_transforms(b in arb_box(), t in arb_transform(true), seed in any::<u64>()) {
        let cloud = cloud_around(&b, seed, 40, 200);
        let before = points_in_box(&cloud, &b);
        let (c, bs) = transform_frame(&cloud, &[b], &t);
        prop_assert_eq!(points_in_box(&c, &bs[0]), before);
    }

    #[test]
    fn splits_are_deterministic_and_sized(n in 1usize..600, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("{i:06}")).collect();
        let a = split_dataset(&ids, seed).unwrap();
        prop_assert_eq!(&a, &split_dataset(&ids, seed).unwrap());
        let (tr, va, te) = split_sizes(n);
        prop_assert_eq!(tr, n * 7 / 10);
        prop_assert_eq!(va, n * 15 / 100);
        prop_assert_eq!(tr + va + te, n);
        prop_assert_eq!((a.train.len(), a.val.len(), a.test.len()), (tr, va, te));
    }

    #[test]
    fn point_cloud_bytes_round_trip(raw in prop::collection::vec(prop::array::uniform4(-1e4f32..1e4f32), 0..200)) {
        let points: Vec<Point> = raw.iter().map(|v| Point::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64)).collect();
        let bytes = serialize_point_cloud(&points);
        prop_assert_eq!(bytes.len(), 16 * points.len());
        let back = parse_point_cloud(&bytes).unwrap();
        prop_assert_eq!(serialize_point_cloud(&back), bytes);
        prop_assert_eq!(back, points);
    }

    #[test]
    fn labels_round_trip(boxes in prop::collection::vec((arb_box(), arb_occlusion()), 0..10)) {
        let labels: Vec<FrameLabel> = boxes.into_iter().map(|(b, o)| FrameLabel::new("Car", o, b)).collect();
        prop_assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn difficulty_sets_are_nested(occ in arb_occlusion(), b in arb_box()) {
        let set = classify_difficulty(&FrameLabel::new("Car", occ, b));
        prop_assert!(set.contains(&Difficulty::Hard));
        if set.contains(&Difficulty::Easy) {
            prop_assert!(set.contains(&Difficulty::Moderate));
        }
    }

    #[test]
    fn encoded_angles_are_unit_and_invertible(yaw in -PI..PI) {
        let (re, im) = encode_angle(yaw);
        prop_assert!((re * re + im * im - 1.0).abs() <= 1e-12);
        prop_assert!((decode_angle(re, im).unwrap() - yaw).abs() <= 1e-9);
    }

    #[test]
    fn nms_keeps_a_separated_subsequence(
        raw in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..25),
        thr in 0.05..0.95f64,
    ) {
        let dets: Vec<Detection> = raw.into_iter().map(|(b, s)| Detection { class_name: "Car".into(), score: s, bbox: b }).collect();
        let kept = nms_rotated(&dets, thr);
        let mut it = dets.iter();
        for k in &kept {
            prop_assert!(it.any(|d| d == k), "not a subsequence");
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(rotated_bev_iou(&a.bbox, &b.bbox) < thr);
            }
        }
    }

    #[test]
    fn adding_a_tp_never_lowers_ap(
        raw in prop::collection::vec((0.0..1.0f64, any::<bool>()), 0..30),
        extra_score in 0.0..1.0f64,
        spare in 1usize..5,
    ) {
        let tps = raw.iter().filter(|r| r.1).count();
        let total = tps + spare;
        let scored: Vec<(f64, MatchOutcome)> =
            raw.iter().map(|&(s, tp)| (s, if tp { MatchOutcome::Tp } else { MatchOutcome::Fp })).collect();
        let mut more = scored.clone();
        more.push((extra_score, MatchOutcome::Tp));
        for mode in [ApMode::ElevenPoint, ApMode::FortyPoint] {
            let base = compute_ap(&PrCurve::from_scored(&scored, total), mode);
            let plus = compute_ap(&PrCurve::from_scored(&more, total), mode);
            prop_assert!(plus >= base - 1e-12, "{:?}: {} -> {}", mode, base, plus);
        }
        let mut fp = scored.clone();
        fp.push((-1.0, MatchOutcome::Fp));
        let a = PrCurve::from_scored(&scored, total);
        let b = PrCurve::from_scored(&fp, total);
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(p, q);
        }
    }

    #[test]
    fn equal_score_permutations_keep_counts(
        boxes in prop::collection::vec(arb_box(), 1..8),
        n_dets in 1usize..10,
        seed in any::<u64>(),
    ) {
        let gt: Vec<FrameLabel> = boxes.iter().map(|b| FrameLabel::new("Car", Occlusion::Visible, *b)).collect();
        let mut rng = seeded(seed);
        let dets: Vec<Detection> = (0..n_dets)
            .map(|_| {
                let g = &boxes[rng.random_range(0..boxes.len())];
                let b = OrientedBox3D::new([g.cx + rng.random_range(-0.5..0.5), g.cy, g.cz], g.length, g.width, g.height, g.yaw);
                Detection { class_name: "Car".into(), score: 0.5, bbox: b }
            })
            .collect();
        let count = |d: &[Detection]| {
            let m = match_frame(d, &gt, 0.5, Difficulty::Hard, IouKind::Bev);
            (m.outcomes.iter().filter(|o| **o == MatchOutcome::Tp).count(), m.matched_gt)
        };
        let mut rev = dets.clone();
        rev.reverse();
        prop_assert_eq!(count(&dets), count(&rev));
        prop_assert_eq!(match_frame(&dets, &gt, 0.5, Difficulty::Hard, IouKind::Bev), match_frame(&dets, &gt, 0.5, Difficulty::Hard, IouKind::Bev));
    }
}

fn small_grid() -> GridConfig {
    GridConfig { width: 64, height: 48, crop: CropRegion { x: [-16.0, 16.0], y: [-12.0, 12.0], z: [-2.0, 4.0] }, ..GridConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radarize_size_envelope_and_determinism(n in 0usize..30_000, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let cloud = PointCloud::new("r", (0..n).map(|_| {
            Point::new(rng.random_range(0.5..80.0), rng.random_range(-40.0..40.0), rng.random_range(-2.0..2.0), 0.3)
        }).collect());
        let cfg = RadarizationConfig { fov_azimuth_half_angle: PI, ..RadarizationConfig::default() };
        let out = radarize(&cloud, &cfg, &mut seeded(seed ^ 1));
        prop_assert!(out.len() >= n.min(cfg.target_points_min) && out.len() <= cfg.target_points_max);
        prop_assert_eq!(&out, &radarize(&cloud, &cfg, &mut seeded(seed ^ 1)));
    }

    #[test]
    fn sparsified_indices_come_from_the_input(n in 0usize..5000, target in 0usize..3000, weighted in any::<bool>(), seed in any::<u64>()) {
        let cloud = PointCloud::new("s", (0..n).map(|i| Point::new(1.0 + i as f64 * 0.01, 0.0, 0.0, 0.0)).collect());
        let mode = if weighted { KeepProbabilityMode::RangeWeighted } else { KeepProbabilityMode::Uniform };
        let idx = sparsify_indices(&cloud, target, mode, &mut seeded(seed));
        prop_assert_eq!(idx.len(), n.min(target));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn neutral_radarization_is_identity(n in 0usize..2000, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let cloud = PointCloud::new("n", (0..n).map(|_| {
            Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-2.0..2.0), 0.3)
        }).collect());
        let cfg = RadarizationConfig {
            target_points_min: 100_000,
            target_points_max: 100_000,
            range_noise_sigma: 0.0,
            azimuth_noise_sigma: 0.0,
            elevation_scale: 1.0,
            fov_azimuth_half_angle: PI,
            ..RadarizationConfig::default()
        };
        prop_assert_eq!(radarize(&cloud, &cfg, &mut seeded(seed)), cloud);
    }

    #[test]
    fn rasterizer_conserves_and_ignores_order(n in 0usize..3000, seed in any::<u64>()) {
        let cfg = small_grid();
        let mut rng = seeded(seed);
        let mut points: Vec<Point> = (0..n).map(|_| {
            Point::new(rng.random_range(-16.0..16.0), rng.random_range(-12.0..12.0), rng.random_range(-2.0..4.0), rng.random())
        }).collect();
        let grid = rasterize(&PointCloud::new("g", points.clone()), &cfg).unwrap();
        prop_assert_eq!(grid.counts.iter().map(|&c| c as usize).sum::<usize>(), n);
        for ch in grid.channels() {
            prop_assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        points.reverse();
        let rev = rasterize(&PointCloud::new("g", points), &cfg).unwrap();
        prop_assert_eq!(rev.tensor_bytes(), grid.tensor_bytes());
    }

    #[test]
    fn shifting_by_whole_cells_shifts_columns(cells in prop::collection::vec((0usize..64, 0usize..48), 1..200), k in 1usize..10) {
        let cfg = small_grid();
        let (rx, ry) = (cfg.resolution_x(), cfg.resolution_y());
        let at = |c: usize, r: usize, dk: usize| {
            Point::new(cfg.crop.x[0] + (c + dk) as f64 * rx + 0.5 * rx, cfg.crop.y[0] + (r as f64 + 0.5) * ry, 0.0, 0.5)
        };
        let kept: Vec<(usize, usize)> = cells.into_iter().filter(|&(c, _)| c + k < cfg.width).collect();
        let a = rasterize(&PointCloud::new("a", kept.iter().map(|&(c, r)| at(c, r, 0)).collect()), &cfg).unwrap();
        let b = rasterize(&PointCloud::new("b", kept.iter().map(|&(c, r)| at(c, r, k)).collect()), &cfg).unwrap();
        for r in 0..cfg.height {
            for c in 0..cfg.width - k {
                prop_assert_eq!(a.counts[a.index(c, r)], b.counts[b.index(c + k, r)]);
            }
        }
    }

    #[test]
    fn one_positive_anchor_per_label(seed in any::<u64>(), n in 0usize..40) {
        let codec = CodecConfig::default();
        let grid = AnchorGrid::new(&codec).unwrap();
        let mut rng = seeded(seed);
        let labels: Vec<FrameLabel> = (0..n).map(|_| {
            let b = OrientedBox3D::new([rng.random_range(-69.0..69.0), rng.random_range(-69.0..69.0), -0.5], 4.0, 1.8, 1.5, rng.random_range(-PI..PI));
            FrameLabel::new("Car", Occlusion::Visible, b)
        }).collect();
        let enc = assign_and_encode(&labels, &grid).unwrap();
        prop_assert_eq!(enc.tensor.anchors, 9);
        prop_assert_eq!(enc.tensor.positives(), n);
        let mut slots: Vec<_> = enc.assignments.iter().map(|a| a.unwrap()).collect();
        slots.sort();
        slots.dedup();
        prop_assert_eq!(slots.len(), n);
    }

    #[test]
    fn generated_scenes_are_valid(seed in any::<u64>(), n in 0usize..25) {
        let spec = SceneSpec { n_objects: n, ..SceneSpec::default() };
        let f = generate_scene(&spec, "s", &mut seeded(seed)).unwrap();
        prop_assert_eq!(f.labels.len(), n);
        let text = format_labels(&f.labels);
        prop_assert_eq!(parse_labels(&text).unwrap().len(), n);
        prop_assert!(f.cloud.points.iter().all(|p| p.is_finite() && spec.crop.contains(p)));
        for (i, a) in f.labels.iter().enumerate() {
            prop_assert!(a.bbox.is_valid());
            prop_assert!(points_in_box(&f.cloud, &a.bbox).len() >= spec.points_per_object[0]);
            for b in &f.labels[i + 1..] {
                prop_assert_eq!(rotated_bev_iou(&a.bbox, &b.bbox), 0.0);
            }
        }
    }

    #[test]
    fn gt_database_points_restore_inside_boxes(seed in any::<u64>()) {
        let spec = SceneSpec { n_objects: 8, ..SceneSpec::default() };
        let frames: Vec<_> = (0..3).map(|i| generate_scene(&spec, &format!("f{i}"), &mut seeded(seed + i)).unwrap()).collect();
        let db = build_gt_database(&frames, 5);
        prop_assert!(!db.is_empty());
        for (_, e) in db.iter() {
            prop_assert!(e.world_points().iter().all(|p| e.bbox.contains(p)));
        }
        let target = generate_scene(&spec, "t", &mut seeded(seed ^ 7)).unwrap();
        let pasted = sample_ground_truths(&target, &db, 10, &mut seeded(seed));
        for (i, a) in pasted.labels.iter().enumerate() {
            for b in &pasted.labels[i + 1..] {
                prop_assert!(rotated_bev_iou(&a.bbox, &b.bbox) <= 0.0);
            }
        }
    }
}

#[test]
fn forty_and_eleven_point_agree_on_smooth_curves() {
    let mut rng = seeded(77);
    for _ in 0..20 {
        let n = rng.random_range(200..400);
        // Precision decays smoothly with rank.
        let scored: Vec<(f64, MatchOutcome)> = (0..n)
            .map(|k| {
                let p_tp = 1.0 - 0.6 * k as f64 / n as f64;
                let o = if rng.random_bool(p_tp) { MatchOutcome::Tp } else { MatchOutcome::Fp };
                (1.0 - k as f64 / n as f64, o)
            })
            .collect();
        let total = scored.iter().filter(|s| s.1 == MatchOutcome::Tp).count();
        let curve = PrCurve::from_scored(&scored, total);
        let e = compute_ap(&curve, ApMode::ElevenPoint);
        let f = compute_ap(&curve, ApMode::FortyPoint);
        assert!((e - f).abs() <= 0.05, "eleven {e} forty {f}");
    }
}

#[test]
fn pipeline_keeps_boxes_valid_over_random_configs() {
    use radar3d::augmentation::{apply_pipeline, AugmentationProbabilities};
    use radar3d::AugmentationConfig;
    let mut rng = seeded(88);
    let spec = SceneSpec { n_objects: 6, clutter_points: [50, 200], ..SceneSpec::default() };
    let frames: Vec<_> = (0..10).map(|i| generate_scene(&spec, &format!("f{i}"), &mut seeded(i)).unwrap()).collect();
    let db = build_gt_database(&frames, 5);
    for i in 0..1000 {
        let mut cfg = AugmentationConfig { probabilities: AugmentationProbabilities::all(rng.random()), ..Default::default() };
        let r = rng.random_range(0.0..PI);
        cfg.rotation_range = [-r, r];
        let s = rng.random_range(0.0..0.5);
        cfg.scale_range = [1.0 - s, 1.0 + s];
        cfg.translation_sigma = rng.random_range(0.0..2.0);
        let out = apply_pipeline(&frames[i % frames.len()], &cfg, Some(&db), &mut seeded(i as u64));
        for l in &out.labels {
            assert!(l.bbox.is_valid(), "config {i}: {:?}", l.bbox);
            assert!((-PI..PI).contains(&l.bbox.yaw), "config {i}: yaw {}", l.bbox.yaw);
        }
    }
}

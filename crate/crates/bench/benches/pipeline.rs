use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use radar3d::bev::{crop_cloud, rasterize};
use radar3d::codec::{assign_and_encode, decode_predictions};
use radar3d::geometry::rotated_bev_iou;
use radar3d::lidar2radar::radarize;
use radar3d::{AnchorGrid, CodecConfig, GridConfig, RadarizationConfig};
use radar3d_bench::{box_pairs, dense_cloud, rng, scene};

fn iou(c: &mut Criterion) {
    let pairs = box_pairs(1000, 1);
    c.bench_function("rotated_bev_iou x1000", |b| {
        b.iter(|| pairs.iter().map(|(p, q)| rotated_bev_iou(black_box(p), black_box(q))).sum::<f64>())
    });
}

fn radarization(c: &mut Criterion) {
    let cloud = dense_cloud(2);
    let cfg = RadarizationConfig::default();
    c.bench_function("radarize 128k points", |b| b.iter(|| radarize(black_box(&cloud), &cfg, &mut rng(3))));
}

fn bev(c: &mut Criterion) {
    let cfg = GridConfig::default();
    let frame = scene(10, 4);
    let cloud = crop_cloud(&frame.cloud, &cfg.crop);
    c.bench_function("rasterize synthetic frame", |b| b.iter(|| rasterize(black_box(&cloud), &cfg).unwrap()));
}

fn codec(c: &mut Criterion) {
    let grid = AnchorGrid::new(&CodecConfig::default()).unwrap();
    let frame = scene(20, 5);
    c.bench_function("encode 20 labels", |b| b.iter(|| assign_and_encode(black_box(&frame.labels), &grid).unwrap()));
    let enc = assign_and_encode(&frame.labels, &grid).unwrap();
    c.bench_function("decode full tensor", |b| b.iter(|| decode_predictions(black_box(&enc.tensor), &grid, 0.5).unwrap()));
}

criterion_group!(benches, iou, radarization, bev, codec);
criterion_main!(benches);

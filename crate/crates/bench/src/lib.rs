//! Fixtures shared by the criterion benches.

use std::f64::consts::PI;

use radar3d::geometry::OrientedBox3D;
use radar3d::synth::{dense_lidar_sweep, generate_scene};
use radar3d::{Frame, PointCloud, SceneSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scene(n_objects: usize, seed: u64) -> Frame {
    let spec = SceneSpec { n_objects, ..SceneSpec::default() };
    generate_scene(&spec, "bench", &mut rng(seed)).expect("scene fits the crop")
}

pub fn dense_cloud(seed: u64) -> PointCloud {
    dense_lidar_sweep("bench", 64, 2000, &mut rng(seed))
}

pub fn box_pairs(n: usize, seed: u64) -> Vec<(OrientedBox3D, OrientedBox3D)> {
    let mut r = rng(seed);
    let one = |r: &mut ChaCha8Rng| {
        OrientedBox3D::new(
            [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), 0.0],
            r.random_range(1.0..6.0),
            r.random_range(1.0..6.0),
            1.5,
            r.random_range(-PI..PI),
        )
    };
    (0..n).map(|_| (one(&mut r), one(&mut r))).collect()
}

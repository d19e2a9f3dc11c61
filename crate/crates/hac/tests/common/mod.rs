#![allow(dead_code)]

use hac::Checkpoint;
use hac_core::ratemodel::DEFAULT_Q0;
use hac_core::scene::{scene_bounds, DEFAULT_BOUNDS_PAD};
use hac_core::trainer::value_statistics;
use hac_core::{Aabb, AnchorScene, ContextModel, GridConfig, HashGrid, MaskSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Untrained but non-trivial artifacts: random grid signs, a small random
/// context model started at the scene statistics, and random hard masks
/// keeping each offset with probability `keep`.
pub fn random_checkpoint(scene: &AnchorScene, grid: GridConfig, hidden: usize, seed: u64, keep: f64) -> Checkpoint {
    let layout = scene.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = HashGrid::new(grid, seed).unwrap();
    grid.theta.iter_mut().for_each(|t| *t = rng.random_range(-1.0..1.0));
    let mut model = ContextModel::random(grid.feature_dim(), hidden, layout, DEFAULT_Q0, seed + 1, 0.05);
    if scene.n > 0 {
        let (mean, std) = value_statistics(&scene.attribute_matrix(), layout.values_per_anchor());
        model.warm_start(&mean, &std);
    }
    let bits: Vec<bool> = (0..scene.n * layout.k_offsets).map(|_| rng.random_bool(keep)).collect();
    let masks = MaskSet::from_bits(scene.n, layout.k_offsets, &bits).unwrap();
    let bounds = if scene.n == 0 { Aabb::UNIT } else { scene_bounds(scene, DEFAULT_BOUNDS_PAD).unwrap() };
    Checkpoint { grid, model, masks, bounds, lambda_e: 2e-3, lambda_m: 5e-4 }
}

pub fn tiny_grid() -> GridConfig {
    GridConfig { res_3d: vec![4, 8], res_2d: vec![8], table_3d_max: 1 << 8, table_2d_max: 1 << 6, dim_embed: 2 }
}

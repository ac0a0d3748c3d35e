//! Multi-threaded drivers. Results are identical to the sequential core
//! functions for any thread count.

use myoseg_core::forest::{predict_map, train_tree, Forest, TrainConfig, TrainingSet};
use myoseg_core::{BinaryMask, Image2D, Result, ShapeModel};
use rayon::prelude::*;

/// Runs `f` on a pool of `jobs` threads (0 means one per core).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains the trees in parallel and assembles them in index order.
pub fn train_forest(dataset: &[(Image2D, BinaryMask)], cfg: &TrainConfig, model: &ShapeModel) -> Result<Forest> {
    cfg.validate()?;
    let set = TrainingSet::new(dataset)?;
    let trained = (0..cfg.n_trees)
        .into_par_iter()
        .map(|i| train_tree(&set, cfg, model, i))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = set.dims();
    Forest::from_trained(trained, *cfg, model, w, h)
}

pub fn predict_maps(forest: &Forest, images: &[Image2D]) -> Result<Vec<Image2D>> {
    images.par_iter().map(|img| predict_map(forest, img)).collect()
}
